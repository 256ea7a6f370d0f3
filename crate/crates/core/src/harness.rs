//! Experiment protocol and result files.
//!
//! Learned controllers are trained once per scenario on route set 0 and then
//! evaluated, like the fixed-buffer baselines, on route sets `1..=test_sets`
//! with `runs` misbehavior seeds each.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::controller::{ControllerKind, ControllerName};
use crate::episode::{self, Episode, VehicleOutcome};
use crate::error::{Error, Result};
use crate::rl::{self, TrainingLog};
use crate::store::TrustStore;

pub const METRICS_HEADER: [&str; 11] = [
    "scenario_id",
    "controller",
    "untrusted_fraction",
    "run",
    "episode",
    "collisions",
    "collision_rate",
    "throughput",
    "sim_seconds",
    "mean_buffer",
    "seed",
];

pub const TRUST_TRACE_HEADER: [&str; 8] = [
    "scenario_id",
    "run",
    "episode",
    "step",
    "vehicle_id",
    "honest",
    "violated_this_step",
    "trust",
];

pub const SUMMARY_HEADER: [&str; 9] = [
    "scenario_id",
    "controller",
    "untrusted_fraction",
    "episodes",
    "collision_rate_mean",
    "collision_rate_std",
    "throughput_mean",
    "throughput_std",
    "mean_buffer",
];

pub const TRAINING_HEADER: [&str; 8] = [
    "scenario_id",
    "controller",
    "untrusted_fraction",
    "episode",
    "epsilon",
    "collisions",
    "mean_buffer",
    "mean_reward",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub scenario_id: String,
    pub controller: String,
    pub untrusted_fraction: f64,
    pub run: usize,
    pub episode: usize,
    pub collisions: usize,
    pub collision_rate: f64,
    pub throughput: f64,
    pub sim_seconds: f64,
    pub mean_buffer: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustTraceRow {
    pub scenario_id: String,
    pub run: usize,
    pub episode: usize,
    pub step: usize,
    pub vehicle_id: u32,
    pub honest: bool,
    pub violated_this_step: bool,
    pub trust: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub collisions: usize,
    pub collision_rate: f64,
    pub throughput: f64,
    pub sim_seconds: f64,
    pub mean_buffer: f64,
    pub unserved: usize,
    pub trust_trace: Vec<TrustTraceRow>,
    /// Per-vehicle outcomes, one entry per passing.
    pub outcomes: Vec<Vec<VehicleOutcome>>,
}

/// Where an episode sits in the experiment protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSlot {
    pub test_set: u64,
    pub run: usize,
}

/// Runs one evaluation episode and collects its metrics and trust trace.
/// The returned store is the trust table at the end of the episode.
pub fn run_episode(cfg: &ScenarioConfig, policy: &ControllerKind, slot: EpisodeSlot) -> Result<(EpisodeMetrics, TrustStore)> {
    cfg.validate()?;
    let spawns = episode::spawn_set(cfg, slot.test_set);
    let honest = episode::honesty(cfg, slot.test_set);
    let key = episode::evaluation_key(cfg.seed, slot.test_set, slot.run as u64);
    let mut ep = Episode::new(cfg, spawns, honest.clone(), key, policy.surveils())?;
    let row = |step: usize, id: u32, honest: bool, violated: bool, trust: f64| TrustTraceRow {
        scenario_id: cfg.scenario_id.clone(),
        run: slot.run,
        episode: slot.test_set as usize,
        step,
        vehicle_id: id,
        honest,
        violated_this_step: violated,
        trust,
    };
    let mut trace = Vec::with_capacity(cfg.n * (cfg.tau + 1));
    let mut outcomes = Vec::with_capacity(cfg.tau);
    for (i, id) in ep.vehicle_ids().enumerate() {
        trace.push(row(0, id.0, honest[i], false, ep.store().peek_trust(id)));
    }
    while !ep.is_done() {
        let buffers = ep
            .observe()
            .iter()
            .map(|e| policy.buffer_for(e))
            .collect::<Result<Vec<_>>>()?;
        let report = ep.step(&buffers)?;
        for v in &report.vehicles {
            trace.push(row(report.passing, v.vehicle_id.0, v.honest, v.violated, v.trust));
        }
        outcomes.push(report.vehicles);
    }
    let totals = ep.metrics();
    let nt = (cfg.n * cfg.tau) as f64;
    let sim_seconds = totals.elapsed_steps as f64 * cfg.geometry.time_step;
    let metrics = EpisodeMetrics {
        collisions: totals.collisions,
        collision_rate: totals.collisions as f64 / nt,
        throughput: (nt - totals.collisions as f64) / sim_seconds,
        sim_seconds,
        mean_buffer: totals.buffer_sum / nt,
        unserved: totals.unserved,
        trust_trace: trace,
        outcomes,
    };
    Ok((metrics, ep.store().clone()))
}

/// A trained policy and its training history.
#[derive(Debug, Clone)]
pub struct Trained {
    pub controller: ControllerKind,
    pub log: TrainingLog,
}

/// Builds the controller named in `cfg`, training it when it is learned.
pub fn prepare_controller(cfg: &ScenarioConfig, name: ControllerName) -> Result<Trained> {
    let (controller, log) = match name {
        ControllerName::Aim1 => (ControllerKind::Aim1, TrainingLog::default()),
        ControllerName::AimFix => (ControllerKind::AimFix(cfg.fixed_buffer), TrainingLog::default()),
        ControllerName::AimRl => {
            let (q, log) = rl::train(cfg, false)?;
            (ControllerKind::AimRl(q), log)
        }
        ControllerName::AimTrust => {
            let (q, log) = rl::train(cfg, true)?;
            (ControllerKind::AimTrust(q), log)
        }
    };
    Ok(Trained { controller, log })
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentResult {
    pub metrics: Vec<MetricsRow>,
    pub trust_trace: Vec<TrustTraceRow>,
}

impl ExperimentResult {
    pub fn mean_collision_rate(&self) -> f64 {
        mean(self.metrics.iter().map(|r| r.collision_rate))
    }

    pub fn mean_throughput(&self) -> f64 {
        mean(self.metrics.iter().map(|r| r.throughput))
    }

    pub fn extend(&mut self, other: ExperimentResult) {
        self.metrics.extend(other.metrics);
        self.trust_trace.extend(other.trust_trace);
    }
}

/// Evaluates `policy` on every test set and run, in parallel, with rows in
/// protocol order.
pub fn evaluate(cfg: &ScenarioConfig, policy: &ControllerKind) -> Result<ExperimentResult> {
    let slots: Vec<EpisodeSlot> = (1..=cfg.test_sets as u64)
        .flat_map(|test_set| (0..cfg.runs).map(move |run| EpisodeSlot { test_set, run }))
        .collect();
    let results = slots
        .par_iter()
        .map(|&slot| run_episode(cfg, policy, slot).map(|(m, _)| (slot, m)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = ExperimentResult::default();
    for (slot, m) in results {
        out.metrics.push(MetricsRow {
            scenario_id: cfg.scenario_id.clone(),
            controller: policy.label(),
            untrusted_fraction: cfg.untrusted_fraction,
            run: slot.run,
            episode: slot.test_set as usize,
            collisions: m.collisions,
            collision_rate: m.collision_rate,
            throughput: m.throughput,
            sim_seconds: m.sim_seconds,
            mean_buffer: m.mean_buffer,
            seed: cfg.seed,
        });
        out.trust_trace.extend(m.trust_trace);
    }
    Ok(out)
}

/// Trains (when needed) and evaluates the controller named in `cfg`.
pub fn run_experiment(cfg: &ScenarioConfig) -> Result<(ExperimentResult, Trained)> {
    cfg.validate()?;
    let trained = prepare_controller(cfg, cfg.controller)?;
    let result = evaluate(cfg, &trained.controller)?;
    Ok((result, trained))
}

/// Every controller (with each sweep buffer for `aimfix`) at every sweep
/// fraction. Scenario ids get a `-u<percent>` suffix.
pub fn run_sweep(cfg: &ScenarioConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut out = ExperimentResult::default();
    for &fraction in &cfg.sweep_fractions {
        let scenario = ScenarioConfig {
            scenario_id: format!("{}-u{}", cfg.scenario_id, (fraction * 100.0).round()),
            untrusted_fraction: fraction,
            ..cfg.clone()
        };
        let mut controllers = vec![ControllerKind::Aim1];
        controllers.extend(cfg.sweep_buffers.iter().map(|&b| ControllerKind::AimFix(b)));
        let learned = [ControllerName::AimRl, ControllerName::AimTrust]
            .par_iter()
            .map(|&name| prepare_controller(&scenario, name).map(|t| t.controller))
            .collect::<Result<Vec<_>>>()?;
        controllers.extend(learned);
        for c in &controllers {
            out.extend(evaluate(&scenario, c)?);
        }
    }
    Ok(out)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub controller: String,
    pub untrusted_fraction: f64,
    pub episodes: usize,
    pub collision_rate_mean: f64,
    pub collision_rate_std: f64,
    pub throughput_mean: f64,
    pub throughput_std: f64,
    pub mean_buffer: f64,
}

/// Mean and sample standard deviation per (scenario, controller), in first
/// appearance order.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String, u64)> = Vec::new();
    for r in rows {
        let k = (r.scenario_id.clone(), r.controller.clone(), r.untrusted_fraction.to_bits());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(scenario_id, controller, fraction)| {
            let group: Vec<&MetricsRow> = rows
                .iter()
                .filter(|r| r.scenario_id == scenario_id && r.controller == controller && r.untrusted_fraction.to_bits() == fraction)
                .collect();
            let cr: Vec<f64> = group.iter().map(|r| r.collision_rate).collect();
            let tp: Vec<f64> = group.iter().map(|r| r.throughput).collect();
            SummaryRow {
                scenario_id,
                controller,
                untrusted_fraction: f64::from_bits(fraction),
                episodes: group.len(),
                collision_rate_mean: mean(cr.iter().copied()),
                collision_rate_std: std_dev(&cr),
                throughput_mean: mean(tp.iter().copied()),
                throughput_std: std_dev(&tp),
                mean_buffer: mean(group.iter().map(|r| r.mean_buffer)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingRow {
    pub scenario_id: String,
    pub controller: String,
    pub untrusted_fraction: f64,
    pub episode: usize,
    pub epsilon: f64,
    pub collisions: usize,
    pub mean_buffer: f64,
    pub mean_reward: f64,
}

pub fn training_rows(cfg: &ScenarioConfig, controller: &ControllerKind, log: &TrainingLog) -> Vec<TrainingRow> {
    log.episodes
        .iter()
        .map(|e| TrainingRow {
            scenario_id: cfg.scenario_id.clone(),
            controller: controller.label(),
            untrusted_fraction: cfg.untrusted_fraction,
            episode: e.episode,
            epsilon: e.epsilon,
            collisions: e.collisions,
            mean_buffer: e.mean_buffer,
            mean_reward: e.mean_reward,
        })
        .collect()
}

/// Writes `rows` under `header`; the header is present even with no rows.
pub fn emit_csv<T: Serialize>(rows: &[T], header: &[&str], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes a per-bin report of a learned policy's greedy buffers.
pub fn write_policy_report(controller: &ControllerKind, log: &TrainingLog, out: &mut impl Write) -> std::io::Result<()> {
    let (q, aware) = match controller {
        ControllerKind::AimRl(q) => (q, false),
        ControllerKind::AimTrust(q) => (q, true),
        _ => return Ok(()),
    };
    writeln!(out, "trust_bin,visits,straight,left,right")?;
    for bin in 0..rl::TRUST_BINS {
        let b = if aware { bin } else { 0 };
        let greedy: Vec<String> = crate::sim::geometry::RouteClass::ALL
            .iter()
            .map(|&r| q.greedy((b, r)).to_string())
            .collect();
        writeln!(out, "{bin},{},{}", log.bin_visits[bin], greedy.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            runs: 2,
            test_sets: 2,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn honest_aim1_episode() {
        let cfg = small();
        let (m, store) = run_episode(&cfg, &ControllerKind::Aim1, EpisodeSlot { test_set: 1, run: 0 }).unwrap();
        assert_eq!(m.collisions, 0);
        assert_eq!(m.collision_rate, 0.0);
        assert!((m.throughput - 100.0 / m.sim_seconds).abs() < 1e-12);
        assert_eq!(m.trust_trace.len(), cfg.n * (cfg.tau + 1));
        assert_eq!(m.mean_buffer, 1.0);
        assert_eq!(store.len(), cfg.n);
    }

    #[test]
    fn evaluation_rows_are_in_protocol_order() {
        let cfg = small();
        let r = evaluate(&cfg, &ControllerKind::AimFix(2.0)).unwrap();
        let order: Vec<(usize, usize)> = r.metrics.iter().map(|m| (m.episode, m.run)).collect();
        assert_eq!(order, vec![(1, 0), (1, 1), (2, 0), (2, 1)]);
        assert!(r.metrics.iter().all(|m| m.controller == "aimfix-2"));
    }

    #[test]
    fn summary_statistics() {
        let mk = |rate: f64| MetricsRow {
            scenario_id: "s".into(),
            controller: "aim1".into(),
            untrusted_fraction: 0.2,
            run: 0,
            episode: 1,
            collisions: 0,
            collision_rate: rate,
            throughput: 1.0,
            sim_seconds: 1.0,
            mean_buffer: 1.0,
            seed: 0,
        };
        let s = summarize(&[mk(0.1), mk(0.3)]);
        assert_eq!(s.len(), 1);
        assert!((s[0].collision_rate_mean - 0.2).abs() < 1e-12);
        assert!((s[0].collision_rate_std - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(s[0].throughput_std, 0.0);
    }

    #[test]
    fn csv_header_only_and_unwritable_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        emit_csv::<MetricsRow>(&[], &METRICS_HEADER, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{}\n", METRICS_HEADER.join(",")));
        let bad = dir.path().join("missing").join("metrics.csv");
        let err = emit_csv::<MetricsRow>(&[], &METRICS_HEADER, &bad).unwrap_err();
        assert!(err.to_string().contains("missing"), "{err}");
    }
}
