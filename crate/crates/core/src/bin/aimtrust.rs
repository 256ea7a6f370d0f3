use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aimtrust::config::ScenarioConfig;
use aimtrust::controller::{ControllerKind, ControllerName};
use aimtrust::harness::{self, EpisodeSlot};
use aimtrust::rl::QTable;
use aimtrust::{Error, Result};

#[derive(Parser)]
#[command(name = "aimtrust", version, about = "Trust-aware intersection management experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learned controller and write its Q-table and training log.
    Train(Common),
    /// Train if needed, then evaluate on every test set and run.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Use a saved Q-table instead of training.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Evaluate every controller at every sweep fraction.
    Sweep(Common),
    /// Run one evaluation episode and dump its trust trace and final trust table.
    TrustDump {
        #[command(flatten)]
        common: Common,
        /// Test set to run (1-based).
        #[arg(long, default_value_t = 1)]
        episode: u64,
        #[arg(long, default_value_t = 0)]
        run: usize,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// aim1, aimfix, aimrl or aimtrust.
    #[arg(long)]
    controller: Option<ControllerName>,
    /// Fraction of untrusted vehicles in [0, 1].
    #[arg(long)]
    untrusted: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn scenario(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(c) = self.controller {
            cfg.controller = c;
        }
        if let Some(u) = self.untrusted {
            cfg.untrusted_fraction = u;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::Io {
            path: self.out.clone(),
            source: e,
        })?;
        Ok(&self.out)
    }
}

fn loaded_policy(cfg: &ScenarioConfig, path: &Path) -> Result<ControllerKind> {
    let q = QTable::load(path)?;
    match cfg.controller {
        ControllerName::AimRl => Ok(ControllerKind::AimRl(q)),
        ControllerName::AimTrust => Ok(ControllerKind::AimTrust(q)),
        other => Err(Error::Config(format!("--policy needs a learned controller, not {other}"))),
    }
}

fn write_learned(cfg: &ScenarioConfig, trained: &harness::Trained, out: &Path) -> Result<()> {
    let q = match &trained.controller {
        ControllerKind::AimRl(q) | ControllerKind::AimTrust(q) => q,
        _ => return Ok(()),
    };
    q.save(out.join("q_table.txt"))?;
    let rows = harness::training_rows(cfg, &trained.controller, &trained.log);
    harness::emit_csv(&rows, &harness::TRAINING_HEADER, out.join("training.csv"))?;
    let report_path = out.join("policy_report.csv");
    let mut report = Vec::new();
    harness::write_policy_report(&trained.controller, &trained.log, &mut report).expect("writing to memory");
    std::fs::write(&report_path, &report).map_err(|e| Error::Io {
        path: report_path,
        source: e,
    })?;
    print!("{}", String::from_utf8_lossy(&report));
    Ok(())
}

fn write_results(result: &harness::ExperimentResult, out: &Path, with_trace: bool) -> Result<()> {
    harness::emit_csv(&result.metrics, &harness::METRICS_HEADER, out.join("metrics.csv"))?;
    let summary = harness::summarize(&result.metrics);
    harness::emit_csv(&summary, &harness::SUMMARY_HEADER, out.join("summary.csv"))?;
    if with_trace {
        harness::emit_csv(&result.trust_trace, &harness::TRUST_TRACE_HEADER, out.join("trust_trace.csv"))?;
    }
    for s in &summary {
        println!(
            "{} {:<12} untrusted={:.1} episodes={} collision_rate={:.4}±{:.4} throughput={:.4}±{:.4} mean_buffer={:.2}",
            s.scenario_id,
            s.controller,
            s.untrusted_fraction,
            s.episodes,
            s.collision_rate_mean,
            s.collision_rate_std,
            s.throughput_mean,
            s.throughput_std,
            s.mean_buffer
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.scenario()?;
            if !cfg.controller.is_learned() {
                return Err(Error::Config(format!("{} has nothing to train", cfg.controller)));
            }
            let out = common.out_dir()?;
            let trained = harness::prepare_controller(&cfg, cfg.controller)?;
            write_learned(&cfg, &trained, out)
        }
        Command::Evaluate { common, policy } => {
            let cfg = common.scenario()?;
            let out = common.out_dir()?;
            let controller = match &policy {
                Some(p) => loaded_policy(&cfg, p)?,
                None => {
                    let trained = harness::prepare_controller(&cfg, cfg.controller)?;
                    write_learned(&cfg, &trained, out)?;
                    trained.controller
                }
            };
            let result = harness::evaluate(&cfg, &controller)?;
            write_results(&result, out, true)
        }
        Command::Sweep(common) => {
            let cfg = common.scenario()?;
            let out = common.out_dir()?;
            let result = harness::run_sweep(&cfg)?;
            write_results(&result, out, false)
        }
        Command::TrustDump {
            common,
            episode,
            run,
            policy,
        } => {
            let cfg = common.scenario()?;
            let out = common.out_dir()?;
            let controller = match &policy {
                Some(p) => loaded_policy(&cfg, p)?,
                None => harness::prepare_controller(&cfg, cfg.controller)?.controller,
            };
            let slot = EpisodeSlot { test_set: episode, run };
            let (metrics, store) = harness::run_episode(&cfg, &controller, slot)?;
            harness::emit_csv(&metrics.trust_trace, &harness::TRUST_TRACE_HEADER, out.join("trust_trace.csv"))?;
            store.save(out.join("trust_store.csv"))?;
            println!(
                "collisions={} collision_rate={:.4} throughput={:.4} sim_seconds={:.2}",
                metrics.collisions, metrics.collision_rate, metrics.throughput, metrics.sim_seconds
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
