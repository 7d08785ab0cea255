//! Temporary instrumentation (removed before final): learning curves and
//! gate diagnostics for acceptance tuning.

use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use steproute::backends::simulated::SimulatedBackend;
use steproute::backends::BackendSpec;
use steproute::eval::{budgeted_accuracy, sweep, OutcomeEstimator, SweepPolicy};
use steproute::flops::FlopsModel;
use steproute::gate::{regression_residuals, run_tests, GateConfig, HeldoutSet};
use steproute::grpo::{train_router, GrpoConfig, RewardSource, TrainInputs};
use steproute::prefdata::{build_pairs, collect_pool, TrajectoryPool};
use steproute::rng::derive_rng;
use steproute::routing::{EngineLimits, PolicyKind};
use steproute::rubric::alternate::{alternate, AlternateConfig, QueryPairs};
use steproute::rubric::judge::{train_bt, FeaturePair, JudgeModel};
use steproute::rubric::rubricor::RubricorModel;
use steproute::rubric::seed_rubric;
use steproute::synthworld::{generate_dataset, DifficultySpec, WorldConfig};
use steproute::types::{Producer, QueryRecord, RoutingTrajectory, SignalKind};

fn world() -> WorldConfig {
    WorldConfig {
        difficulty: DifficultySpec::QueryMixture {
            deep_weight: 0.25,
            deep_lo: 0.5,
            deep_hi: 0.85,
            base: Box::new(DifficultySpec::Mixture {
                easy_weight: 0.7,
                easy_lo: 0.0,
                easy_hi: 0.05,
                hard_lo: 0.5,
                hard_hi: 0.9,
            }),
        },
        min_steps: 4,
        max_steps: 10,
        ..WorldConfig::default()
    }
}

struct Fixture {
    world: WorldConfig,
    queries: Vec<steproute::synthworld::SyntheticQuery>,
    records: Vec<QueryRecord>,
    srm: SimulatedBackend,
    lrm: SimulatedBackend,
}

fn build(w: WorldConfig, size: usize, seed: u64) -> Fixture {
    let queries = generate_dataset(&w, size, seed).unwrap();
    let records: Vec<QueryRecord> = queries.iter().map(|q| q.record.clone()).collect();
    let srm =
        SimulatedBackend::new(BackendSpec::simulated(Producer::SRM, 1.7e9), w.clone(), &queries)
            .unwrap();
    let lrm =
        SimulatedBackend::new(BackendSpec::simulated(Producer::LRM, 14e9), w.clone(), &queries)
            .unwrap();
    Fixture {
        world: w,
        queries,
        records,
        srm,
        lrm,
    }
}

fn policies() -> Vec<PolicyKind> {
    vec![
        PolicyKind::SrmOnly,
        PolicyKind::LrmOnly,
        PolicyKind::Random { p: 0.5 },
        PolicyKind::EntropyThreshold { threshold: 0.4 },
        PolicyKind::ConfidenceThreshold { threshold: 0.6 },
    ]
}

fn collect_all(
    f: &Fixture,
    pks: &[PolicyKind],
    limits: &EngineLimits,
    seed: u64,
) -> (Vec<TrajectoryPool>, Vec<Vec<steproute::prefdata::PreferencePair>>) {
    let seed_r = seed_rubric();
    let scorer = |t: &RoutingTrajectory| seed_r.score(t);
    let mut pools = Vec::new();
    let mut pairs = Vec::new();
    for q in &f.records {
        let pool = collect_pool(q, pks, 1, &f.srm, &f.lrm, limits, SignalKind::AvgEntropy, seed);
        if pool.trajectories.len() < 2 {
            continue;
        }
        let p = build_pairs(&pool, &scorer, 0.15, 0.1).unwrap();
        pools.push(pool);
        pairs.push(p);
    }
    (pools, pairs)
}

fn world_variant(variant: usize) -> WorldConfig {
    let base = DifficultySpec::Mixture {
        easy_weight: 0.7,
        easy_lo: 0.0,
        easy_hi: 0.05,
        hard_lo: 0.5,
        hard_hi: 0.9,
    };
    let difficulty = match variant {
        0 => base,
        1 => DifficultySpec::QueryMixture {
            deep_weight: std::env::var("PROBE_DEEP").ok().and_then(|v| v.parse().ok()).unwrap_or(0.15),
            deep_lo: std::env::var("PROBE_DLO").ok().and_then(|v| v.parse().ok()).unwrap_or(0.4),
            deep_hi: std::env::var("PROBE_DHI").ok().and_then(|v| v.parse().ok()).unwrap_or(0.7),
            base: Box::new(base),
        },
        _ => DifficultySpec::QueryMixture {
            deep_weight: 0.25,
            deep_lo: 0.5,
            deep_hi: 0.85,
            base: Box::new(base),
        },
    };
    WorldConfig {
        difficulty,
        min_steps: 4, lrm_tokens_per_step: std::env::var("PROBE_LTOK").ok().and_then(|v| v.parse().ok()).unwrap_or(80),
        max_steps: 10,
        ..WorldConfig::default()
    }
}

#[test]
#[ignore]
fn probe_beta_gap() {
    let limits = EngineLimits::default();
    let fm = FlopsModel::new(1.7e9, 14e9).unwrap();
    let ent: f64 = std::env::var("PROBE_ENT").ok().and_then(|v| v.parse().ok()).unwrap_or(0.02);
    let iters_list: Vec<usize> = std::env::var("PROBE_ITERS")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.parse().ok()).collect())
        .unwrap_or_else(|| vec![220]);
    for variant in [0usize, 1] {
        for &iters in &iters_list {
            let mut gaps = Vec::new();
            for seed in 0..5u64 {
                let w = world_variant(variant);
                let train = build(w.clone(), 200, 10_000 + seed);
                let held = build(w, 200, 20_000 + seed);
                let (pools, pairs) = collect_all(&train, &policies(), &limits, seed);
                let (hpools, hpairs) = collect_all(&held, &policies(), &limits, seed + 7);
                let heldout = HeldoutSet::from_pools(&hpools, &hpairs).unwrap();
                let seed_r = seed_rubric();
                let mut warm = Vec::new();
                for (pool, pp) in pools.iter().zip(&pairs) {
                    for p in pp {
                        warm.push(
                            FeaturePair::build(
                                &seed_r,
                                &pool.trajectories[p.winner_idx],
                                &pool.trajectories[p.loser_idx],
                            )
                            .unwrap(),
                        );
                    }
                }
                let mut judge = JudgeModel::new();
                train_bt(&mut judge, &warm, 200, 1.0).unwrap();
                let mut rubricor = RubricorModel::default();
                let data: Vec<QueryPairs<'_>> = pools
                    .iter()
                    .zip(&pairs)
                    .map(|(pool, pairs)| QueryPairs { pool, pairs })
                    .collect();
                let gate = GateConfig::default();
                alternate(
                    &mut rubricor,
                    &mut judge,
                    &data,
                    &heldout,
                    &gate,
                    &[],
                    &AlternateConfig {
                        rounds: 3,
                        samples_per_query: 4,
                        judge_epochs: 30,
                        seed,
                        ..AlternateConfig::default()
                    },
                )
                .unwrap();

                let estimator = OutcomeEstimator::ExpectedSynthetic {
                    world: &train.world,
                    queries: &train.queries,
                };
                let lrm_only = steproute::eval::evaluate_policy(
                    &PolicyKind::LrmOnly,
                    &train.records,
                    &train.srm,
                    &train.lrm,
                    &limits,
                    SignalKind::AvgEntropy,
                    &fm,
                    estimator,
                    555,
                    4,
                );
                let srm_only = steproute::eval::evaluate_policy(
                    &PolicyKind::SrmOnly,
                    &train.records,
                    &train.srm,
                    &train.lrm,
                    &limits,
                    SignalKind::AvgEntropy,
                    &fm,
                    estimator,
                    555,
                    4,
                );
                let mean_ba = |policy: steproute::routing::RouterPolicy| -> (f64, [f64; 3], f64) {
                    let points = sweep(
                        &SweepPolicy::Learned(Arc::new(policy)),
                        &train.records,
                        &train.srm,
                        &train.lrm,
                        &limits,
                        SignalKind::AvgEntropy,
                        &fm,
                        estimator,
                        555,
                        4,
                    )
                    .unwrap();
                    let ba = |pct: f64| {
                        budgeted_accuracy(&points, lrm_only.total_flops, pct, Some(&srm_only))
                            .unwrap()
                            .ba
                            .unwrap_or(0.0)
                    };
                    let t = [ba(20.0), ba(40.0), ba(60.0)];
                    ((t[0] + t[1] + t[2]) / 3.0, t, 0.0)
                };
                let restarts: u64 = std::env::var("PROBE_RESTARTS")
                    .ok()
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(1);
                let mut run = |beta: f64| {
                    let mut best: Option<(f64, (f64, [f64; 3], f64), f64)> = None;
                    for restart in 0..restarts {
                        let cfg = GrpoConfig {
                            iterations: iters,
                            lr: std::env::var("PROBE_LR").ok().and_then(|v| v.parse().ok()).unwrap_or(0.2),
                            hidden: 128,
                            batch_queries: 32,
                            seed: seed + restart * 1000,
                            beta_process: beta,
                            entropy_coef: ent,
                            ..GrpoConfig::default()
                        };
                        let source = if beta == 0.0 {
                            RewardSource::OutcomeOnly
                        } else {
                            RewardSource::Process {
                                rubricor: &rubricor,
                                judge: &judge,
                                heldout: &heldout,
                                gate: &gate,
                            }
                        };
                        let (policy, rows) = train_router(
                            &cfg,
                            &TrainInputs {
                                queries: &train.records,
                                srm: &train.srm,
                                lrm: &train.lrm,
                                limits: &limits,
                                signal: SignalKind::AvgEntropy,
                            },
                            &source,
                            0,
                            None,
                        )
                        .unwrap();
                        let last_usage = rows.last().map(|r| r.lrm_usage).unwrap_or(f64::NAN);
                        let scores = mean_ba(policy);
                        // Select restarts by BA@40 on the training suite.
                        if best.as_ref().map(|(b, _, _)| scores.1[1] > *b).unwrap_or(true) {
                            best = Some((scores.1[1], scores, last_usage));
                        }
                    }
                    let (_, scores, last_usage) = best.unwrap();
                    (scores, last_usage)
                };
                // Oracle feasible optimum at 40% budget via a lambda sweep.
                let lambdas = [
                    1e-5, 5e-5, 1e-4, 2e-4, 3e-4, 5e-4, 7e-4, 1e-3, 1.5e-3, 2e-3, 3e-3, 5e-3,
                    1e-2, 3e-2, 0.1, 1.0,
                ];
                let mut oracle40 = 0.0f64;
                for lambda in lambdas {
                    let mut acc = 0.0;
                    let mut flops = 0.0;
                    for q in &train.queries {
                        let (actions, _) =
                            steproute::synthworld::oracle_optimal_ranked(q, &train.world, lambda)
                                .unwrap();
                        acc += steproute::synthworld::expected_outcome(&actions, q, &train.world)
                            .unwrap();
                        let srm_tokens = train.world.srm_tokens_per_step * q.n_steps() as u64;
                        flops += fm.flops_of_tokens(
                            srm_tokens,
                            steproute::synthworld::lrm_tokens_of(&actions, &train.world),
                        );
                    }
                    if flops <= 0.4 * lrm_only.total_flops {
                        oracle40 = oracle40.max(acc / train.queries.len() as f64);
                    }
                }
                let ((m0, t0, _), u0) = run(0.0);
                let ((m5, t5, _), u5) = run(0.5);
                println!(
                    "variant {variant} iters {iters} seed {seed}: β=0 {:.3} {:?} (usage {:.2}) | β=.5 {:.3} {:?} (usage {:.2}) | gap {:+.4} | oracle@40 {:.3}",
                    m0, t0.map(|x| (x * 1000.0).round() / 1000.0), u0,
                    m5, t5.map(|x| (x * 1000.0).round() / 1000.0), u5,
                    m5 - m0, oracle40
                );
                gaps.push(m5 - m0);
            }
            let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
            println!("variant {variant} iters {iters}: mean gap {mean_gap:+.4}\n");
        }
    }
}

#[test]
#[ignore]
fn probe_learning_curves() {
    let limits = EngineLimits::default();
    let fm = FlopsModel::new(1.7e9, 14e9).unwrap();
    for seed in 0..2u64 {
        let train = build(world(), 200, 10_000 + seed);
        let held = build(world(), 200, 20_000 + seed);
        let (pools, pairs) = collect_all(&train, &policies(), &limits, seed);
        let (hpools, hpairs) = collect_all(&held, &policies(), &limits, seed + 7);
        let heldout = HeldoutSet::from_pools(&hpools, &hpairs).unwrap();
        let seed_r = seed_rubric();
        let mut warm = Vec::new();
        for (pool, pp) in pools.iter().zip(&pairs) {
            for p in pp {
                warm.push(
                    FeaturePair::build(
                        &seed_r,
                        &pool.trajectories[p.winner_idx],
                        &pool.trajectories[p.loser_idx],
                    )
                    .unwrap(),
                );
            }
        }
        let mut judge = JudgeModel::new();
        train_bt(&mut judge, &warm, 200, 1.0).unwrap();
        let mut rubricor = RubricorModel::default();
        let data: Vec<QueryPairs<'_>> = pools
            .iter()
            .zip(&pairs)
            .map(|(pool, pairs)| QueryPairs { pool, pairs })
            .collect();
        let gate = GateConfig::default();
        alternate(
            &mut rubricor,
            &mut judge,
            &data,
            &heldout,
            &gate,
            &[],
            &AlternateConfig {
                rounds: 3,
                samples_per_query: 4,
                judge_epochs: 30,
                seed,
                ..AlternateConfig::default()
            },
        )
        .unwrap();

        let estimator = OutcomeEstimator::ExpectedSynthetic {
            world: &train.world,
            queries: &train.queries,
        };
        let lrm_only = steproute::eval::evaluate_policy(
            &PolicyKind::LrmOnly,
            &train.records,
            &train.srm,
            &train.lrm,
            &limits,
            SignalKind::AvgEntropy,
            &fm,
            estimator,
            555,
            4,
        );
        let probe = |policy: &steproute::routing::RouterPolicy| -> f64 {
            let points = sweep(
                &SweepPolicy::Learned(Arc::new(policy.clone())),
                &train.records,
                &train.srm,
                &train.lrm,
                &limits,
                SignalKind::AvgEntropy,
                &fm,
                estimator,
                555,
                4,
            )
            .unwrap();
            budgeted_accuracy(&points, lrm_only.total_flops, 40.0, None)
                .unwrap()
                .ba
                .unwrap_or(0.0)
        };
        for (tag, source) in [
            ("beta0.0", RewardSource::OutcomeOnly),
            (
                "beta0.5",
                RewardSource::Process {
                    rubricor: &rubricor,
                    judge: &judge,
                    heldout: &heldout,
                    gate: &gate,
                },
            ),
        ] {
            let cfg = GrpoConfig {
                iterations: 220,
                lr: 0.2,
                hidden: 128,
                batch_queries: 32,
                seed,
                beta_process: if tag == "beta0.0" { 0.0 } else { 0.5 },
                ..GrpoConfig::default()
            };
            let (final_policy, rows) = train_router(&cfg, &TrainInputs {
                queries: &train.records,
                srm: &train.srm,
                lrm: &train.lrm,
                limits: &limits,
                signal: SignalKind::AvgEntropy,
            }, &source, 20, Some(&probe))
            .unwrap();
            // P(regen) at representative states: easy/hard current entropy ×
            // early/late step index.
            for (label, e, idx) in [
                ("easy@1", 0.03, 0.02),
                ("hard@1", 0.7, 0.02),
                ("easy@8", 0.03, 0.16),
                ("hard@8", 0.7, 0.16),
            ] {
                let s = steproute::routing::RouterState {
                    current_uncertainty: e,
                    min_prefix_uncertainty: 0.03,
                    avg_prefix_uncertainty: 0.2,
                    norm_token_count: 0.2,
                    norm_step_index: idx,
                };
                print!("  P[{label}]={:.3}", final_policy.forward(&s).unwrap());
            }
            println!();
            let curve: Vec<String> = rows
                .iter()
                .filter_map(|r| r.ba_probe.map(|b| format!("{}:{:.3}", r.iteration, b)))
                .collect();
            let discards: usize = rows.iter().map(|r| r.discarded_groups).sum();
            let usage: Vec<String> = rows
                .iter()
                .step_by(40)
                .map(|r| format!("{:.2}", r.lrm_usage))
                .collect();
            println!(
                "seed {seed} {tag}: curve {} (usage {} discarded {discards})",
                curve.join(" "),
                usage.join(" ")
            );
        }
    }
}

#[test]
#[ignore]
fn probe_gate_planted() {
    let limits = EngineLimits::default();
    for trial in 0..5u64 {
        let fixture = build(world(), 280, 50_000 + trial);
        let (pools, pairs) = collect_all(&fixture, &policies(), &limits, trial);
        let heldout = HeldoutSet::from_pools(&pools, &pairs).unwrap();
        let n = heldout.len();
        let mut rng = derive_rng(105, &["acc", "gate", &trial.to_string()]);
        let residual = regression_residuals(
            &heldout.pref_targets,
            &[heldout.outcomes.clone(), heldout.norm_costs.clone()],
        )
        .unwrap();
        let res_std = (residual.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt().max(1e-9);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let planted: Vec<f64> = residual
            .iter()
            .map(|r| 0.5 + 0.15 * (r / res_std) + noise.sample(&mut rng))
            .collect();
        let report = run_tests(
            &[planted],
            &["planted".into()],
            &heldout.pref_targets,
            &heldout.outcomes,
            &heldout.norm_costs,
            &GateConfig::default(),
        );
        let c = &report.criteria[0];
        println!(
            "trial {trial}: n={n} r={:?} p={:?} std={:.4} mi={:.4} retained={} reason={:?}",
            c.partial_r, c.p_raw, c.score_std, c.mi_nats, c.retained, c.reason
        );
    }
}
