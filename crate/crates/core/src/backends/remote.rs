//! Remote backend for chat-completions-compatible endpoints.
//!
//! Requests ask for per-token top-k log-probabilities; uncertainty signals
//! are computed from the renormalized top-k distributions. Calls retry up to
//! [`MAX_ATTEMPTS`] times with exponential backoff; after exhaustion the
//! error carries the attempt count and the owning trajectory is marked
//! failed rather than silently truncated. In-flight requests are bounded by
//! the spec's `max_concurrent`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::RngCore;
use serde::Deserialize;
use serde_json::json;

use crate::backends::{all_signals, Backend, BackendSpec, GenerationContext, StepDraft, TopLogprobs};
use crate::error::{Error, Result};

pub const MAX_ATTEMPTS: u32 = 3;
const BACKOFF_BASE_MS: u64 = 250;

/// Minimal blocking chat client; implemented over HTTP for production and
/// over canned responses in tests.
pub trait ChatCompleter: Send + Sync {
    /// Send one prompt, return the raw response body.
    fn complete(&self, request_body: &serde_json::Value) -> std::result::Result<String, String>;
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    slots: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            slots: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut slots = self.slots.lock().expect("gate poisoned");
        while *slots == 0 {
            slots = self.cv.wait(slots).expect("gate poisoned");
        }
        *slots -= 1;
    }

    fn release(&self) {
        let mut slots = self.slots.lock().expect("gate poisoned");
        *slots += 1;
        self.cv.notify_one();
    }
}

/// HTTP client for OpenAI-style `/chat/completions` endpoints.
pub struct HttpChatClient {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpChatClient {
    pub fn new(spec: &BackendSpec) -> Result<Self> {
        let endpoint = spec
            .endpoint
            .clone()
            .ok_or_else(|| Error::InvalidArgument("remote backend requires endpoint".into()))?;
        let api_key = match &spec.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::InvalidArgument(format!("API key environment variable {var} not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(spec.request_timeout_ms))
            .build()
            .map_err(|e| Error::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        let url = if endpoint.ends_with("/chat/completions") {
            endpoint
        } else {
            format!("{}/chat/completions", endpoint.trim_end_matches('/'))
        };
        Ok(HttpChatClient {
            client,
            url,
            api_key,
        })
    }
}

impl ChatCompleter for HttpChatClient {
    fn complete(&self, request_body: &serde_json::Value) -> std::result::Result<String, String> {
        let mut req = self.client.post(&self.url).json(request_body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        let body = resp.text().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {status}: {body}"));
        }
        Ok(body)
    }
}

/// Remote SRM/LRM over any [`ChatCompleter`].
pub struct RemoteBackend {
    spec: BackendSpec,
    client: Box<dyn ChatCompleter>,
    gate: Gate,
}

impl RemoteBackend {
    pub fn new(spec: BackendSpec) -> Result<Self> {
        spec.validate()?;
        let client = Box::new(HttpChatClient::new(&spec)?);
        Ok(Self::with_client(spec, client))
    }

    pub fn with_client(spec: BackendSpec, client: Box<dyn ChatCompleter>) -> Self {
        let gate = Gate::new(spec.max_concurrent);
        RemoteBackend { spec, client, gate }
    }

    fn call_with_retries(&self, body: &serde_json::Value) -> Result<String> {
        let mut last_err = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            self.gate.acquire();
            let outcome = self.client.complete(body);
            self.gate.release();
            match outcome {
                Ok(text) => return Ok(text),
                Err(e) => {
                    last_err = e;
                    if attempt < MAX_ATTEMPTS {
                        std::thread::sleep(Duration::from_millis(
                            BACKOFF_BASE_MS << (attempt - 1),
                        ));
                    }
                }
            }
        }
        Err(Error::Transport {
            attempts: MAX_ATTEMPTS,
            message: last_err,
        })
    }
}

impl Backend for RemoteBackend {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn draft_step(&self, ctx: &GenerationContext<'_>, _rng: &mut dyn RngCore) -> Result<StepDraft> {
        ctx.validate()?;
        let body = build_step_request(&self.spec, ctx);
        let raw = self.call_with_retries(&body)?;
        parse_step_response(&raw, &self.spec)
    }
}

/// Build the chat-completions request for the next reasoning step.
pub fn build_step_request(spec: &BackendSpec, ctx: &GenerationContext<'_>) -> serde_json::Value {
    let mut prompt = String::new();
    prompt.push_str(
        "Solve the problem step by step. Produce exactly one reasoning step, \
         then stop. When the answer is complete, end with a line starting \
         with \"",
    );
    prompt.push_str(&spec.final_answer_marker);
    prompt.push_str("\".\n\nProblem: ");
    prompt.push_str(&ctx.query.text);
    if !ctx.accepted_steps.is_empty() {
        prompt.push_str("\n\nSteps so far:\n");
        for step in ctx.accepted_steps {
            prompt.push_str(&step.text);
            prompt.push_str("\n\n");
        }
    }
    json!({
        "model": spec.model_name.as_deref().unwrap_or(""),
        "messages": [{"role": "user", "content": prompt}],
        "temperature": spec.temperature,
        "top_p": spec.top_p,
        "max_tokens": spec.max_generation_tokens,
        "logprobs": true,
        "top_logprobs": spec.top_k_logprobs,
        "stop": ["\n\n"],
    })
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
    logprobs: Option<LogprobBlock>,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

#[derive(Deserialize)]
struct LogprobBlock {
    content: Vec<TokenLogprob>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    #[allow(dead_code)]
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopAlt>,
}

#[derive(Deserialize)]
struct TopAlt {
    token: String,
    logprob: f64,
}

/// Parse a chat-completions response into a draft with populated signals.
pub fn parse_step_response(raw: &str, spec: &BackendSpec) -> Result<StepDraft> {
    let parse_err = |message: String| Error::Parse {
        message,
        payload: raw.chars().take(2000).collect(),
    };
    let resp: ChatResponse =
        serde_json::from_str(raw).map_err(|e| parse_err(format!("bad response JSON: {e}")))?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| parse_err("response has no choices".into()))?;
    let logprobs = choice
        .logprobs
        .ok_or_else(|| parse_err("response missing logprobs".into()))?;
    if logprobs.content.is_empty() {
        return Err(parse_err("response has zero tokens".into()));
    }

    let mut chosen = Vec::with_capacity(logprobs.content.len());
    let mut tops: Vec<TopLogprobs> = Vec::with_capacity(logprobs.content.len());
    for tok in &logprobs.content {
        chosen.push(tok.logprob);
        let mut dist: TopLogprobs = tok
            .top_logprobs
            .iter()
            .map(|alt| (alt.token.clone(), alt.logprob))
            .collect();
        if dist.is_empty() {
            // Endpoint without alternatives: fall back to the chosen token.
            dist.push((tok.token.clone(), tok.logprob));
        }
        tops.push(dist);
    }
    let uncertainty = all_signals(&tops, &chosen)?;
    let text = choice.message.content.trim().to_string();
    let is_final = text.contains(&spec.final_answer_marker)
        || choice.finish_reason.as_deref() == Some("length");
    Ok(StepDraft {
        token_count: logprobs.content.len() as u64,
        text,
        uncertainty,
        latent_correct: None,
        is_final,
    })
}

/// Extract the final answer after the marker, if present.
pub fn extract_final_answer(text: &str, marker: &str) -> Option<String> {
    text.rfind(marker)
        .map(|pos| text[pos + marker.len()..].trim().to_string())
        .filter(|s| !s.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Producer;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn remote_spec() -> BackendSpec {
        BackendSpec {
            kind: crate::backends::BackendKind::Remote,
            endpoint: Some("http://localhost:9/v1".into()),
            model_name: Some("test-model".into()),
            ..BackendSpec::simulated(Producer::LRM, 14e9)
        }
    }

    fn fixture_response() -> String {
        // Two tokens, top-2 alternatives each; hand-computed entropies below.
        json!({
            "choices": [{
                "message": {"content": "step text"},
                "finish_reason": "stop",
                "logprobs": {"content": [
                    {"token": "a", "logprob": (0.5f64).ln(),
                     "top_logprobs": [
                        {"token": "a", "logprob": (0.5f64).ln()},
                        {"token": "b", "logprob": (0.5f64).ln()}
                     ]},
                    {"token": "c", "logprob": (0.9f64).ln(),
                     "top_logprobs": [
                        {"token": "c", "logprob": (0.9f64).ln()},
                        {"token": "d", "logprob": (0.1f64).ln()}
                     ]}
                ]}
            }]
        })
        .to_string()
    }

    #[test]
    fn parses_fixture_and_computes_entropy() {
        let draft = parse_step_response(&fixture_response(), &remote_spec()).unwrap();
        assert_eq!(draft.token_count, 2);
        assert!(!draft.is_final);
        // Token 1: uniform over 2 -> ln 2. Token 2: (0.9, 0.1) -> H = -(0.9 ln 0.9 + 0.1 ln 0.1).
        let h2 = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        let expected = (std::f64::consts::LN_2 + h2) / 2.0;
        assert!((draft.uncertainty.avg_entropy - expected).abs() < 1e-12);
        // Confidence: mean of raw max probs (0.5, 0.9).
        assert!((draft.uncertainty.avg_confidence - 0.7).abs() < 1e-12);
        // NLL: mean of -ln(0.5), -ln(0.9).
        let nll = (-(0.5f64.ln()) - 0.9f64.ln()) / 2.0;
        assert!((draft.uncertainty.avg_nll - nll).abs() < 1e-12);
        assert_eq!(draft.uncertainty.first3_entropy, draft.uncertainty.avg_entropy);
    }

    #[test]
    fn malformed_response_carries_payload() {
        let err = parse_step_response("{\"nope\": 1}", &remote_spec()).unwrap_err();
        match err {
            Error::Parse { payload, .. } => assert!(payload.contains("nope")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn final_answer_marker_detected() {
        let raw = json!({
            "choices": [{
                "message": {"content": "Therefore x = 3.\nFinal Answer: 3"},
                "finish_reason": "stop",
                "logprobs": {"content": [
                    {"token": "x", "logprob": -0.1,
                     "top_logprobs": [{"token": "x", "logprob": -0.1}]}
                ]}
            }]
        })
        .to_string();
        let draft = parse_step_response(&raw, &remote_spec()).unwrap();
        assert!(draft.is_final);
        assert_eq!(
            extract_final_answer(&draft.text, "Final Answer:").as_deref(),
            Some("3")
        );
    }

    struct FlakyClient {
        calls: AtomicU32,
        fail_first: u32,
    }

    impl ChatCompleter for FlakyClient {
        fn complete(&self, _body: &serde_json::Value) -> std::result::Result<String, String> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err("connection reset".into())
            } else {
                Ok(fixture_response())
            }
        }
    }

    #[test]
    fn retries_then_succeeds() {
        let backend = RemoteBackend::with_client(
            remote_spec(),
            Box::new(FlakyClient {
                calls: AtomicU32::new(0),
                fail_first: 2,
            }),
        );
        let query = crate::types::QueryRecord {
            id: "q".into(),
            text: "2+2?".into(),
            gold_answer: None,
            difficulty: None,
            origin: crate::types::Origin::External,
        };
        let ctx = GenerationContext::new(&query, &[]);
        let mut rng = crate::rng::derive_rng(0, &["remote"]);
        let draft = backend.draft_step(&ctx, &mut rng).unwrap();
        assert_eq!(draft.token_count, 2);
    }

    #[test]
    fn exhausted_retries_report_attempts() {
        let backend = RemoteBackend::with_client(
            remote_spec(),
            Box::new(FlakyClient {
                calls: AtomicU32::new(0),
                fail_first: 99,
            }),
        );
        let query = crate::types::QueryRecord {
            id: "q".into(),
            text: "2+2?".into(),
            gold_answer: None,
            difficulty: None,
            origin: crate::types::Origin::External,
        };
        let ctx = GenerationContext::new(&query, &[]);
        let mut rng = crate::rng::derive_rng(0, &["remote"]);
        match backend.draft_step(&ctx, &mut rng) {
            Err(Error::Transport { attempts, .. }) => assert_eq!(attempts, MAX_ATTEMPTS),
            other => panic!("expected transport error, got {other:?}"),
        }
    }
}
