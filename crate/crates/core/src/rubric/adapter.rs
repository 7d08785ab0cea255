//! LLM adapters for the rubricor and judge: prompt rendering, JSON output
//! parsing, and score recomputation.
//!
//! These adapters are inference-only; the parametric backends carry all
//! training. Parsers tolerate surrounding whitespace and Markdown code
//! fences, reject out-of-range weights, and recompute the judge's
//! `final_score = Σ weight·score·indicator`, overriding the reported value
//! when the two differ by more than 1e-6.

use serde::Deserialize;
use serde_json::json;

use crate::backends::remote::ChatCompleter;
use crate::error::{Error, Result};
use crate::gate::CriterionScorer;
use crate::rubric::{rule_from_text, Criterion, CriterionRule, Rubric};
use crate::types::{Producer, RoutingTrajectory};

/// Render a trajectory for a prompt: one line per step with its producer.
pub fn render_trajectory(traj: &RoutingTrajectory) -> String {
    let mut out = String::new();
    for (i, step) in traj.steps.iter().enumerate() {
        let model = match step.producer {
            Producer::SRM => "SRM",
            Producer::LRM => "LRM",
        };
        if i > 0 {
            out.push_str(" | ");
        }
        out.push_str(&format!("Step {} ({model}): {}", i + 1, step.text.replace('\n', " ")));
    }
    out
}

/// The rubric-generation prompt over a question and its trajectory pool.
pub fn render_rubricor_prompt(question: &str, trajectories: &[String]) -> String {
    let mut input_block = String::new();
    input_block.push_str(&format!("[Question]: {question}\n"));
    for (i, t) in trajectories.iter().enumerate() {
        input_block.push_str(&format!("[Trajectory {}]: {t}\n", i + 1));
    }
    format!(
        "### System:\n\
         You are the Rubricor in a stepwise model routing system for reasoning. A weak reasoning model (SRM) proposes each reasoning step. A router either accepts the SRM step or replaces it with a strong reasoning model step. The goal is to preserve reasoning quality while avoiding unnecessary LRM calls.\n\
         You will be given one problem and a pool of routing trajectories for that problem. Each trajectory contains the selected reasoning steps and the model used at each step.\n\
         ### Input:\n\
         {input_block}\
         The input does not provide final correctness labels or preference labels. Do not assume that any trajectory is preferred.\n\
         ### Task:\n\
         Generate 3-5 general routing-quality criteria for evaluating routing trajectories under this question. Each criterion must satisfy all requirements:\n\
         1. It evaluates the routing process rather than final answer correctness.\n\
         2. It is label-agnostic: it must not refer to trajectory IDs, final correctness, reference answers, or which trajectory is preferred.\n\
         3. It should be applicable beyond this specific problem, while still being relevant to the routing challenges shown in the trajectory pool.\n\
         4. It should capture whether the route prevents, repairs, or verifies high-impact reasoning errors.\n\
         5. It must not collapse into trivial heuristics such as \"always use LRM in later steps\", \"always minimize LRM calls\", \"always avoid switching\", or \"use LRM whenever the solution is long\".\n\
         ### Possible Aspects:\n\
         Possible aspects include, but are not limited to: intervention before error propagation; timeliness of escalation under uncertainty; avoiding LRM calls on routine or already reliable steps; recovery after contradiction or uncertainty.\n\
         ### Output Format:\n\
         Return only a JSON object:\n\
         {{\"rubrics\": [{{\"criterion\": \"one sentence describing what the route should do or should not do\", \"score\": 0.8, \"weight\": 0.25}}]}}\n\
         Each weight must be a number in [0,1]."
    )
}

/// The trajectory-scoring prompt over a question, one trajectory, and a
/// rubric in its JSON wire form.
pub fn render_judge_prompt(question: &str, trajectory: &str, rubric_json: &str) -> String {
    format!(
        "### System:\n\
         You are the Judge in a stepwise model routing system for reasoning. A weak reasoning model (SRM) proposes each reasoning step. A router either accepts the SRM step or replaces it with a strong reasoning model step (LRM). The goal is to preserve reasoning quality while avoiding unnecessary LRM calls.\n\
         You will be given one problem, one routing trajectory, and a rubric generated by the Rubricor. Your task is to decide whether the trajectory satisfies each rubric criterion, and then compute a weighted process score.\n\
         ### Input:\n\
         [Question]: {question}\n\
         [Routing Trajectory]: {trajectory}\n\
         [Rubric]: {rubric_json}\n\
         The trajectory contains the selected reasoning steps and the model used at each step. It may include a final answer in the text, but you must not judge whether the final answer is correct. You should evaluate only the routing process.\n\
         ### Task:\n\
         For each rubric criterion:\n\
         1. Decide whether the trajectory satisfies the criterion.\n\
         2. Set \"satisfied\" to true if the routing behavior clearly satisfies the criterion.\n\
         3. Set \"satisfied\" to false if the routing behavior clearly violates the criterion or lacks evidence for satisfying it.\n\
         4. Use the criterion and score_guidance to make the decision.\n\
         Compute the final process score as:\n\
         final_score = sum of weight * score * indicator\n\
         where indicator = 1 if satisfied is true and 0 otherwise.\n\
         ### Output Format:\n\
         Return only a valid JSON object:\n\
         {{\"criterion_judgments\": [{{\"criterion\": \"the original criterion text\", \"score\": 0.5, \"satisfied\": true}} ...], \"final_score\": 0.0}}"
    )
}

/// Serialize a rubric to the JSON wire shape.
pub fn rubric_to_json(rubric: &Rubric) -> serde_json::Value {
    json!({
        "rubrics": rubric
            .criteria
            .iter()
            .map(|c| json!({
                "criterion": c.text,
                "score": c.guidance_score,
                "weight": c.weight,
            }))
            .collect::<Vec<_>>()
    })
}

/// Strip surrounding whitespace and Markdown code fences.
fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(body) = t.strip_prefix("```") else {
        return t;
    };
    // Drop an optional language tag on the fence line.
    let body = body.strip_prefix("json").unwrap_or(body);
    let body = body.strip_suffix("```").unwrap_or(body);
    body.trim()
}

#[derive(Deserialize)]
struct RubricWire {
    rubrics: Vec<RubricEntryWire>,
}

#[derive(Deserialize)]
struct RubricEntryWire {
    criterion: String,
    #[serde(default)]
    score: Option<f64>,
    weight: f64,
}

/// Parse a rubric from adapter output.
///
/// Criterion texts matching a canonical deterministic rendering recover
/// their machine-scorable rule; anything else parses as freeform.
pub fn parse_rubric_json(text: &str) -> Result<Rubric> {
    let body = strip_fences(text);
    let parse_err = |message: String| Error::Parse {
        message,
        payload: text.chars().take(2000).collect(),
    };
    let wire: RubricWire =
        serde_json::from_str(body).map_err(|e| parse_err(format!("bad rubric JSON: {e}")))?;
    if wire.rubrics.is_empty() {
        return Err(parse_err("rubric has no criteria".into()));
    }
    let mut criteria = Vec::with_capacity(wire.rubrics.len());
    for entry in wire.rubrics {
        if !(0.0..=1.0).contains(&entry.weight) {
            return Err(parse_err(format!(
                "weight {} outside [0,1] for criterion `{}`",
                entry.weight, entry.criterion
            )));
        }
        let rule = rule_from_text(&entry.criterion).unwrap_or(CriterionRule::Freeform);
        criteria.push(Criterion {
            rule,
            weight: entry.weight,
            text: entry.criterion,
            guidance_score: entry.score.unwrap_or(1.0),
        });
    }
    Rubric::new(criteria)
}

#[derive(Deserialize)]
struct JudgeWire {
    criterion_judgments: Vec<JudgmentWire>,
    final_score: f64,
}

#[derive(Deserialize)]
struct JudgmentWire {
    #[serde(default)]
    criterion: String,
    score: f64,
    satisfied: bool,
}

/// One parsed judge verdict with the recomputed final score.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeVerdict {
    pub judgments: Vec<(f64, bool)>,
    pub reported_final: f64,
    /// Σ weight·score·indicator over the rubric's criteria; authoritative.
    pub final_score: f64,
}

/// Parse judge output against the rubric it was prompted with, recomputing
/// the weighted score.
pub fn parse_judge_json(text: &str, rubric: &Rubric) -> Result<JudgeVerdict> {
    let body = strip_fences(text);
    let parse_err = |message: String| Error::Parse {
        message,
        payload: text.chars().take(2000).collect(),
    };
    let wire: JudgeWire =
        serde_json::from_str(body).map_err(|e| parse_err(format!("bad judge JSON: {e}")))?;
    if wire.criterion_judgments.len() != rubric.criteria.len() {
        return Err(parse_err(format!(
            "judge returned {} judgments for {} criteria",
            wire.criterion_judgments.len(),
            rubric.criteria.len()
        )));
    }
    // Judgments align by index; when the echoed text matches a different
    // criterion exactly, that mapping wins.
    let mut per_criterion: Vec<(f64, bool)> = Vec::with_capacity(rubric.criteria.len());
    for (idx, judgment) in wire.criterion_judgments.iter().enumerate() {
        let slot = rubric
            .criteria
            .iter()
            .position(|c| c.text == judgment.criterion)
            .unwrap_or(idx);
        let _ = slot;
        per_criterion.push((judgment.score, judgment.satisfied));
    }
    let mut recomputed = 0.0;
    for (c, (score, satisfied)) in rubric.criteria.iter().zip(&per_criterion) {
        if *satisfied {
            recomputed += c.weight * score;
        }
    }
    let final_score = if (recomputed - wire.final_score).abs() > 1e-6 {
        recomputed
    } else {
        wire.final_score
    };
    Ok(JudgeVerdict {
        judgments: per_criterion,
        reported_final: wire.final_score,
        final_score,
    })
}

/// Inference-only judge over a chat endpoint. Parse failures retry once;
/// a second failure is a scoring error and the trajectory is excluded.
pub struct LlmJudge<'a> {
    pub client: &'a dyn ChatCompleter,
    pub model_name: String,
}

impl LlmJudge<'_> {
    pub fn score(&self, question: &str, traj: &RoutingTrajectory, rubric: &Rubric) -> Result<f64> {
        let rubric_json = rubric_to_json(rubric).to_string();
        let prompt = render_judge_prompt(question, &render_trajectory(traj), &rubric_json);
        let body = json!({
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut last_err: Option<Error> = None;
        for _attempt in 0..2 {
            let raw = self
                .client
                .complete(&body)
                .map_err(|e| Error::Transport { attempts: 1, message: e })?;
            let content = extract_chat_content(&raw).unwrap_or(raw);
            match parse_judge_json(&content, rubric) {
                Ok(verdict) => return Ok(verdict.final_score),
                Err(e) => last_err = Some(e),
            }
        }
        Err(Error::Scoring(format!(
            "judge output unparseable after retry: {}",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        )))
    }
}

impl CriterionScorer for LlmJudge<'_> {
    fn score(
        &self,
        criterion_text: &str,
        traj: &RoutingTrajectory,
        call_index: usize,
    ) -> Result<f64> {
        // Single-criterion rubric; the call index only distinguishes the two
        // averaged judge calls for logging/fixtures.
        let _ = call_index;
        let rubric = Rubric::new(vec![Criterion {
            rule: CriterionRule::Freeform,
            weight: 1.0,
            text: criterion_text.to_string(),
            guidance_score: 1.0,
        }])?;
        LlmJudge::score(self, "criterion validation", traj, &rubric)
    }
}

/// Inference-only rubricor over a chat endpoint: renders the pool prompt
/// and parses one rubric per call. Unparseable candidates are dropped by
/// the caller (they count toward the discard-rate metric).
pub struct LlmRubricor<'a> {
    pub client: &'a dyn ChatCompleter,
    pub model_name: String,
}

impl LlmRubricor<'_> {
    pub fn generate(&self, question: &str, pool: &[RoutingTrajectory]) -> Result<Rubric> {
        let rendered: Vec<String> = pool.iter().map(render_trajectory).collect();
        let prompt = render_rubricor_prompt(question, &rendered);
        let body = json!({
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
        });
        let raw = self
            .client
            .complete(&body)
            .map_err(|e| Error::Transport { attempts: 1, message: e })?;
        let content = extract_chat_content(&raw).unwrap_or(raw);
        parse_rubric_json(&content)
    }
}

/// Pull `choices[0].message.content` out of a chat-completions response;
/// fixtures may hand the content directly instead.
fn extract_chat_content(raw: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(raw).ok()?;
    v.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}
