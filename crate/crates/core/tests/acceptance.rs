//! Acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Exits successfully even when a criterion fails so the rest of the suite
//! keeps running; set `ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero
//! exit.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use aimtrust::config::ScenarioConfig;
use aimtrust::controller::{ControllerKind, ControllerName};
use aimtrust::harness::{self, EpisodeSlot, ExperimentResult};
use aimtrust::rl::RewardKind;
use aimtrust::sl::{fuse_cumulative, opinion_from_evidence, trust_score, EvidenceCounter, Opinion, DEFAULT_BASE_RATE};
use aimtrust::store::{TrustStore, VehicleId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FRACTIONS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(results: &mut Vec<bool>, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let pass = out.pass && took <= budget;
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "{verdict}  {name}: {} [{:.1} s, budget {} s]",
        out.detail,
        took.as_secs_f64(),
        budget.as_secs()
    );
    results.push(pass);
}

fn scenario(untrusted: f64) -> ScenarioConfig {
    ScenarioConfig {
        untrusted_fraction: untrusted,
        ..ScenarioConfig::default()
    }
}

fn op(r: f64, s: f64) -> Opinion {
    opinion_from_evidence(EvidenceCounter::new(r, s).unwrap(), DEFAULT_BASE_RATE).unwrap()
}

fn components(o: &Opinion) -> [f64; 4] {
    [o.belief(), o.disbelief(), o.uncertainty(), o.base_rate()]
}

fn near(a: [f64; 4], b: [f64; 4]) -> bool {
    a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-9)
}

fn subjective_logic() -> Outcome {
    let vacuous = Opinion::new(0.0, 0.0, 1.0, 0.5).unwrap();
    let w = Opinion::new(0.3, 0.2, 0.5, 0.5).unwrap();
    let mut store = TrustStore::new();
    let fresh = store.apply_evidence(VehicleId(1), EvidenceCounter::new(1.0, 0.0).unwrap()).unwrap();
    store.apply_evidence(VehicleId(2), EvidenceCounter::new(2.0, 0.0).unwrap()).unwrap();
    let mixed = store.apply_evidence(VehicleId(2), EvidenceCounter::new(0.0, 1.0).unwrap()).unwrap();
    let tabulated = [
        near(components(&op(0.0, 0.0)), [0.0, 0.0, 1.0, 0.5]),
        near(components(&op(2.0, 0.0)), [0.5, 0.0, 0.5, 0.5]),
        near(components(&op(3.0, 1.0)), [0.5, 1.0 / 6.0, 1.0 / 3.0, 0.5]),
        near(components(&fuse_cumulative(&vacuous, &w).unwrap()), components(&w)),
        near(components(&fuse_cumulative(&op(1.0, 0.0), &op(0.0, 1.0)).unwrap()), [0.25, 0.25, 0.5, 0.5]),
        near(components(&fuse_cumulative(&vacuous, &vacuous).unwrap()), [0.0, 0.0, 1.0, 0.5]),
        (trust_score(&Opinion::new(1.0, 0.0, 0.0, 0.5).unwrap()) - 1.0).abs() <= 1e-9,
        (trust_score(&vacuous) - 0.5).abs() <= 1e-9,
        (trust_score(&Opinion::new(0.5, 1.0 / 6.0, 1.0 / 3.0, 0.5).unwrap()) - 2.0 / 3.0).abs() <= 1e-9,
        (TrustStore::new().peek_trust(VehicleId(9)) - 1.0).abs() <= 1e-9,
        (fresh - 2.0 / 3.0).abs() <= 1e-9,
        (mixed - 0.6).abs() <= 1e-9,
    ];
    let exact = tabulated.iter().filter(|ok| **ok).count();

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut additive = 0;
    for _ in 0..1000 {
        let len = rng.gen_range(1..=20);
        let seq: Vec<(f64, f64)> = (0..len).map(|_| (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0))).collect();
        let fused = seq[1..]
            .iter()
            .fold(op(seq[0].0, seq[0].1), |acc, &(r, s)| fuse_cumulative(&acc, &op(r, s)).unwrap());
        let (r, s) = seq.iter().fold((0.0, 0.0), |(r, s), e| (r + e.0, s + e.1));
        if near(components(&fused), components(&op(r, s))) {
            additive += 1;
        }
    }
    Outcome {
        pass: exact == tabulated.len() && additive == 1000,
        detail: format!("{exact}/{} tabulated values within 1e-9, {additive}/1000 random fusion sequences additive", tabulated.len()),
    }
}

fn honest_aim1() -> Outcome {
    let mut collisions = 0;
    for seed in 1..=20 {
        let cfg = ScenarioConfig {
            seed,
            ..scenario(0.0)
        };
        let (m, _) = harness::run_episode(&cfg, &ControllerKind::Aim1, EpisodeSlot { test_set: 1, run: 0 }).unwrap();
        collisions += m.collisions;
    }
    Outcome {
        pass: collisions == 0,
        detail: format!("{collisions} collisions over 20 all-honest episodes (required 0)"),
    }
}

fn aim1_degrades() -> Outcome {
    let rates: Vec<f64> = (1..=10)
        .map(|seed| {
            let cfg = ScenarioConfig {
                seed,
                ..scenario(1.0)
            };
            harness::evaluate(&cfg, &ControllerKind::Aim1).unwrap().mean_collision_rate()
        })
        .collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    Outcome {
        pass: mean >= 0.10,
        detail: format!("mean collision rate {:.4} over 10 seeds at 100% untrusted (required >= 0.10)", mean),
    }
}

#[derive(Default)]
struct Learned {
    /// Mean AimTrust collision rate per untrusted percentage.
    trust: BTreeMap<u64, f64>,
    trust_at_60: Option<ControllerKind>,
}

fn key(f: f64) -> u64 {
    (f * 100.0).round() as u64
}

fn train_and_evaluate(cfg: &ScenarioConfig, name: ControllerName) -> (ControllerKind, ExperimentResult) {
    let trained = harness::prepare_controller(cfg, name).unwrap();
    let result = harness::evaluate(cfg, &trained.controller).unwrap();
    (trained.controller, result)
}

fn trust_gain(learned: &mut Learned) -> Outcome {
    let cfg = scenario(0.6);
    let aim1 = harness::evaluate(&cfg, &ControllerKind::Aim1).unwrap().mean_collision_rate();
    let (controller, result) = train_and_evaluate(&cfg, ControllerName::AimTrust);
    let trust = result.mean_collision_rate();
    learned.trust.insert(key(0.6), trust);
    learned.trust_at_60 = Some(controller);
    let reduction = if aim1 > 0.0 { 1.0 - trust / aim1 } else { 0.0 };
    Outcome {
        pass: aim1 > 0.0 && reduction >= 0.40,
        detail: format!(
            "aimtrust {trust:.4} vs aim1 {aim1:.4} at 60% untrusted, reduction {:.1}% (required >= 40%)",
            reduction * 100.0
        ),
    }
}

fn trust_beats_blind(learned: &mut Learned) -> Outcome {
    let mut parts = Vec::new();
    let mut wins = 0;
    for f in FRACTIONS {
        let cfg = scenario(f);
        let trust = match learned.trust.get(&key(f)) {
            Some(&t) => t,
            None => train_and_evaluate(&cfg, ControllerName::AimTrust).1.mean_collision_rate(),
        };
        let rl = train_and_evaluate(&cfg, ControllerName::AimRl).1.mean_collision_rate();
        if trust <= rl {
            wins += 1;
        }
        parts.push(format!("{:.0}%: {trust:.4}{}{rl:.4}", f * 100.0, if trust <= rl { "<=" } else { ">" }));
    }
    Outcome {
        pass: wins >= 4,
        detail: format!("aimtrust <= aimrl in {wins}/5 fractions (required >= 4) [{}]", parts.join(", ")),
    }
}

fn collision_free_variant() -> Outcome {
    let mut cfg = scenario(1.0);
    cfg.train.reward = RewardKind::CollisionFree;
    let trained = harness::prepare_controller(&cfg, ControllerName::AimTrust).unwrap();
    let episodes = &trained.log.episodes;
    let start = episodes.len() * 3 / 4;
    let (mut run, mut best) = (0, 0);
    for e in &episodes[start..] {
        run = if e.collisions == 0 { run + 1 } else { 0 };
        best = best.max(run);
    }
    Outcome {
        pass: best >= 50,
        detail: format!(
            "longest zero-collision run in training episodes {start}..{} is {best} (required >= 50), action range {:?}",
            episodes.len(),
            cfg.action_range()
        ),
    }
}

fn trust_fidelity(learned: &Learned) -> Outcome {
    let mut checked_violations = 0;
    let mut checked_exits = 0;
    let mut first_contact = 0;
    let mut bad = Vec::new();
    let mut trace_matches = true;
    let mut runs: Vec<(ScenarioConfig, ControllerKind)> = vec![
        (scenario(1.0), ControllerKind::Aim1),
        (scenario(0.6), ControllerKind::AimFix(9.0)),
    ];
    if let Some(c) = &learned.trust_at_60 {
        runs.push((scenario(0.6), c.clone()));
    }
    let mut full_traces = Vec::new();
    for (cfg, policy) in &runs {
        let mut concatenated = Vec::new();
        for test_set in 1..=cfg.test_sets as u64 {
            for run in 0..cfg.runs {
                let (m, _) = harness::run_episode(cfg, policy, EpisodeSlot { test_set, run }).unwrap();
                let mut trust: BTreeMap<u32, f64> =
                    m.trust_trace.iter().filter(|r| r.step == 0).map(|r| (r.vehicle_id, r.trust)).collect();
                for (p, vehicles) in m.outcomes.iter().enumerate() {
                    for v in vehicles {
                        let before = trust[&v.vehicle_id.0];
                        let after = v.trust;
                        if v.violated {
                            checked_violations += 1;
                            if after >= before {
                                bad.push(format!("set {test_set} run {run} passing {} vehicle {}", p + 1, v.vehicle_id));
                            }
                        } else if v.exited && !v.collided {
                            checked_exits += 1;
                            // An unknown vehicle starts at full trust; its first
                            // evidence replaces that default with 2/3.
                            if before == 1.0 && (after - 2.0 / 3.0).abs() < 1e-12 {
                                first_contact += 1;
                            } else if after <= before {
                                bad.push(format!("set {test_set} run {run} passing {} vehicle {}", p + 1, v.vehicle_id));
                            }
                        }
                        trust.insert(v.vehicle_id.0, after);
                    }
                }
                concatenated.extend(m.trust_trace);
            }
        }
        full_traces.push(concatenated);
    }
    for (trace, (cfg, policy)) in full_traces.iter().zip(&runs) {
        trace_matches &= harness::evaluate(cfg, policy).unwrap().trust_trace == *trace;
    }
    Outcome {
        pass: bad.is_empty() && trace_matches && checked_violations > 0 && checked_exits > 0,
        detail: format!(
            "{checked_violations} violation steps decrease trust, {checked_exits} compliant exits increase it \
             ({first_contact} first-contact exits from the unknown-vehicle default 1.0 to 2/3), {} offending rows, trace files consistent: {trace_matches}",
            bad.len()
        ),
    }
}

fn metrics_bytes(cfg: &ScenarioConfig, name: ControllerName, dir: &std::path::Path, tag: &str) -> Vec<u8> {
    let (_, result) = train_and_evaluate(cfg, name);
    let path = dir.join(format!("metrics-{tag}.csv"));
    harness::emit_csv(&result.metrics, &harness::METRICS_HEADER, &path).unwrap();
    std::fs::read(path).unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(0.6);
    let mut same = 0;
    let cases = [ControllerName::Aim1, ControllerName::AimTrust];
    for name in cases {
        let a = metrics_bytes(&cfg, name, dir.path(), &format!("{name}-a"));
        let b = metrics_bytes(&cfg, name, dir.path(), &format!("{name}-b"));
        if a == b && !a.is_empty() {
            same += 1;
        }
    }
    Outcome {
        pass: same == cases.len(),
        detail: format!("{same}/{} configurations produced byte-identical metrics.csv across two runs", cases.len()),
    }
}

fn main() {
    let mut results = Vec::new();
    let mut learned = Learned::default();
    let minutes = |m: u64| Duration::from_secs(60 * m);
    let total = Instant::now();

    check(&mut results, "subjective-logic exactness", Duration::from_secs(5), subjective_logic);
    check(&mut results, "collision-freedom under honesty", minutes(1), honest_aim1);
    check(&mut results, "aim1 degrades under misbehavior", minutes(2), aim1_degrades);
    let learned_start = Instant::now();
    check(&mut results, "trust-aware gain over aim1", minutes(30), || trust_gain(&mut learned));
    check(&mut results, "trust signal matters", minutes(30).saturating_sub(learned_start.elapsed()), || {
        trust_beats_blind(&mut learned)
    });
    check(&mut results, "collision-free variant", minutes(30), collision_free_variant);
    check(&mut results, "trust-trajectory fidelity", minutes(5), || trust_fidelity(&learned));
    check(&mut results, "determinism", minutes(5), determinism);

    let passed = results.iter().filter(|p| **p).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.1} s",
        results.len(),
        total.elapsed().as_secs_f64()
    );
    if passed < results.len() && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
