use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::ControllerName;
use crate::error::{Error, Result};
use crate::monitor::{MonitorConfig, Step};
use crate::rl::{ActionRange, TrainConfig};
use crate::sim::geometry::MapGeometry;
use crate::sim::misbehavior::MisbehaviorConfig;

/// How vehicles are placed at the start of every intersection passing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpawnConfig {
    pub speed_min: f64,
    pub speed_max: f64,
    /// Spawn steps are drawn uniformly from `[0, window)`.
    pub window: Step,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        SpawnConfig {
            speed_min: 8.0,
            speed_max: 12.0,
            window: 8,
        }
    }
}

/// One scenario: traffic, misbehavior, controller and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    pub seed: u64,
    /// Vehicles per intersection passing.
    pub n: usize,
    /// Intersections per episode.
    pub tau: usize,
    pub untrusted_fraction: f64,
    pub controller: ControllerName,
    /// Buffer used by `aimfix` outside sweeps.
    pub fixed_buffer: f64,
    pub sweep_buffers: Vec<f64>,
    pub sweep_fractions: Vec<f64>,
    /// Evaluation repeats per test set.
    pub runs: usize,
    pub test_sets: usize,
    /// Simulation steps after which a passing is cut short.
    pub step_cap: Step,
    pub spawn: SpawnConfig,
    pub misbehavior: MisbehaviorConfig,
    pub geometry: MapGeometry,
    pub monitor: MonitorConfig,
    pub train: TrainConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario_id: "default".into(),
            seed: 1,
            n: 10,
            tau: 10,
            untrusted_fraction: 0.0,
            controller: ControllerName::AimTrust,
            fixed_buffer: 9.0,
            sweep_buffers: vec![9.0, 9.5, 11.0, 13.0, 21.5],
            sweep_fractions: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            runs: 10,
            test_sets: 10,
            step_cap: 2000,
            spawn: SpawnConfig::default(),
            misbehavior: MisbehaviorConfig::default(),
            geometry: MapGeometry::default(),
            monitor: MonitorConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n == 0 || self.n > u32::MAX as usize {
            return fail(format!("n must be a positive vehicle count, got {}", self.n));
        }
        if self.tau == 0 {
            return fail("tau must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.untrusted_fraction) {
            return fail(format!("untrusted_fraction {} outside [0,1]", self.untrusted_fraction));
        }
        if let Some(f) = self.sweep_fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return fail(format!("sweep fraction {f} outside [0,1]"));
        }
        if let Some(b) = std::iter::once(&self.fixed_buffer)
            .chain(&self.sweep_buffers)
            .find(|b| !(b.is_finite() && **b >= 0.0))
        {
            return fail(format!("buffer {b} must be finite and non-negative"));
        }
        if self.runs == 0 || self.test_sets == 0 {
            return fail("runs and test_sets must be positive".into());
        }
        if self.step_cap <= 0 {
            return fail("step_cap must be positive".into());
        }
        let s = &self.spawn;
        if !(s.speed_min > 0.0 && s.speed_min <= s.speed_max && s.speed_max <= self.geometry.max_speed) {
            return fail(format!(
                "spawn speeds must satisfy 0 < speed_min <= speed_max <= max_speed ({})",
                self.geometry.max_speed
            ));
        }
        if s.window <= 0 {
            return fail("spawn.window must be positive".into());
        }
        self.geometry.validate()?;
        self.misbehavior.validate()?;
        self.monitor.validate()?;
        self.train.validate()
    }

    /// Number of vehicles flagged untrusted.
    pub fn untrusted_count(&self) -> usize {
        (self.n as f64 * self.untrusted_fraction).round() as usize
    }

    pub fn action_range(&self) -> ActionRange {
        self.train
            .actions
            .unwrap_or_else(|| ActionRange::for_scenario(self.untrusted_fraction, self.train.reward))
    }
}
