//! Tabular Q-learning over `(trust bin, route class)` states whose actions
//! are integer buffer sizes.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::episode::{self, Episode};
use crate::error::{Error, Result};
use crate::sim::geometry::{Lane, RouteClass};
use crate::store::VehicleId;

pub const TRUST_BINS: usize = 10;
const ROUTES: usize = 3;
const QTABLE_HEADER: &str = "trust_bin,route_class,action,value";

/// One vehicle's slice of the RL state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlEntry {
    pub vehicle_id: VehicleId,
    pub origin: Lane,
    pub destination: Lane,
    pub trust: f64,
}

/// Encoded state used to index the Q-table.
pub type StateKey = (usize, RouteClass);

pub fn trust_bin(trust: f64) -> usize {
    ((trust * TRUST_BINS as f64).floor().max(0.0) as usize).min(TRUST_BINS - 1)
}

pub fn encode(entry: &RlEntry) -> Result<StateKey> {
    if !(0.0..=1.0).contains(&entry.trust) {
        return Err(Error::Config(format!("trust {} outside [0,1]", entry.trust)));
    }
    Ok((trust_bin(entry.trust), RouteClass::of(entry.origin, entry.destination)?))
}

/// Inclusive range of integer buffer actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRange {
    pub low: u32,
    pub high: u32,
}

impl ActionRange {
    pub const LOW_UNTRUSTED: ActionRange = ActionRange { low: 0, high: 16 };
    pub const HIGH_UNTRUSTED: ActionRange = ActionRange { low: 5, high: 21 };
    pub const COLLISION_FREE: ActionRange = ActionRange { low: 0, high: 26 };

    /// Default range for a scenario: 0..=16 up to 60% untrusted, 5..=21 above,
    /// 0..=26 for the collision-free reward.
    pub fn for_scenario(untrusted_fraction: f64, reward: RewardKind) -> Self {
        match reward {
            RewardKind::CollisionFree => Self::COLLISION_FREE,
            RewardKind::Shaped if untrusted_fraction <= 0.6 + 1e-12 => Self::LOW_UNTRUSTED,
            RewardKind::Shaped => Self::HIGH_UNTRUSTED,
        }
    }

    pub fn len(&self) -> usize {
        (self.high - self.low + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, action: u32) -> bool {
        (self.low..=self.high).contains(&action)
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> {
        self.low..=self.high
    }
}

/// Dense Q-table; cells outside the action range read as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    actions: ActionRange,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(actions: ActionRange) -> Self {
        assert!(actions.low <= actions.high, "empty action range");
        QTable {
            actions,
            values: vec![0.0; TRUST_BINS * ROUTES * actions.len()],
        }
    }

    pub fn actions(&self) -> ActionRange {
        self.actions
    }

    fn index(&self, (bin, route): StateKey, action: u32) -> Option<usize> {
        (bin < TRUST_BINS && self.actions.contains(action)).then(|| {
            (bin * ROUTES + route.index()) * self.actions.len() + (action - self.actions.low) as usize
        })
    }

    pub fn get(&self, state: StateKey, action: u32) -> f64 {
        self.index(state, action).map_or(0.0, |i| self.values[i])
    }

    pub fn set(&mut self, state: StateKey, action: u32, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Config(format!("non-finite Q-value {value}")));
        }
        let i = self
            .index(state, action)
            .ok_or_else(|| Error::Config(format!("cell ({}, {}, {action}) outside table", state.0, state.1.name())))?;
        self.values[i] = value;
        Ok(())
    }

    fn row(&self, (bin, route): StateKey) -> &[f64] {
        let start = (bin.min(TRUST_BINS - 1) * ROUTES + route.index()) * self.actions.len();
        &self.values[start..start + self.actions.len()]
    }

    pub fn max_value(&self, state: StateKey) -> f64 {
        self.row(state).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action; the lowest buffer wins ties.
    pub fn greedy(&self, state: StateKey) -> u32 {
        let row = self.row(state);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        self.actions.low + best as u32
    }

    /// Multiplies every value by `factor`.
    pub fn scaled(&self, factor: f64) -> QTable {
        QTable {
            actions: self.actions,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(QTABLE_HEADER);
        out.push('\n');
        for bin in 0..TRUST_BINS {
            for route in RouteClass::ALL {
                for action in self.actions.iter() {
                    let _ = writeln!(out, "{bin},{},{action},{}", route.name(), self.get((bin, route), action));
                }
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses the text format; the action range is the span of actions present.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == QTABLE_HEADER => {}
            _ => return Err(Error::parse(path, 1, format!("expected header `{QTABLE_HEADER}`"))),
        }
        let mut cells = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::parse(path, lineno, format!("expected 4 fields, found {}", fields.len())));
            }
            let bin: usize = fields[0]
                .parse()
                .ok()
                .filter(|&b| b < TRUST_BINS)
                .ok_or_else(|| Error::parse(path, lineno, format!("bad trust bin `{}`", fields[0])))?;
            let route = RouteClass::from_name(fields[1])
                .ok_or_else(|| Error::parse(path, lineno, format!("bad route class `{}`", fields[1])))?;
            let action: u32 = fields[2]
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad action `{}`", fields[2])))?;
            let value: f64 = fields[3]
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(path, lineno, format!("bad value `{}`", fields[3])))?;
            cells.push(((bin, route), action, value));
        }
        let low = cells.iter().map(|c| c.1).min();
        let high = cells.iter().map(|c| c.1).max();
        let (Some(low), Some(high)) = (low, high) else {
            return Err(Error::parse(path, 1, "table has no cells"));
        };
        let mut q = QTable::new(ActionRange { low, high });
        for (state, action, value) in cells {
            q.set(state, action, value)?;
        }
        Ok(q)
    }
}

/// ε-greedy buffer choice. With `epsilon == 0` the stream is not touched.
pub fn select_buffer<R: Rng + ?Sized>(q: &QTable, state: StateKey, epsilon: f64, rng: &mut R) -> u32 {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        let a = q.actions();
        rng.gen_range(a.low..=a.high)
    } else {
        q.greedy(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// `1 + λ(b_th − a)` without collision, `−(τ−1)` times that otherwise.
    Shaped,
    /// `+1` without collision, `−40` otherwise.
    CollisionFree,
}

pub const COLLISION_FREE_PENALTY: f64 = -40.0;
const MIN_SHAPED_REWARD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of episodes over which epsilon decays linearly.
    pub epsilon_decay: f64,
    pub episodes: usize,
    pub lambda: f64,
    pub buffer_threshold: f64,
    pub reward: RewardKind,
    /// Overrides the scenario's default action range.
    pub actions: Option<ActionRange>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            discount: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.8,
            episodes: 500,
            lambda: 0.1,
            buffer_threshold: 8.0,
            reward: RewardKind::Shaped,
            actions: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("train.{m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return fail("learning_rate must lie in (0,1]");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return fail("discount must lie in [0,1)");
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return fail("epsilon values must lie in [0,1]");
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay) {
            return fail("epsilon_decay must lie in [0,1]");
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 || !self.buffer_threshold.is_finite() {
            return fail("lambda and buffer_threshold must be finite, lambda non-negative");
        }
        if let Some(a) = self.actions {
            if a.low > a.high {
                return fail("actions.low exceeds actions.high");
            }
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        let span = self.epsilon_decay * self.episodes as f64;
        let frac = if span <= 0.0 { 1.0 } else { (episode as f64 / span).min(1.0) };
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Per-vehicle reward for one intersection passing.
pub fn reward(collided: bool, buffer: u32, cfg: &TrainConfig, tau: usize) -> f64 {
    match cfg.reward {
        RewardKind::CollisionFree => {
            if collided {
                COLLISION_FREE_PENALTY
            } else {
                1.0
            }
        }
        RewardKind::Shaped => {
            let base = (1.0 + cfg.lambda * (cfg.buffer_threshold - f64::from(buffer))).max(MIN_SHAPED_REWARD);
            if collided {
                -(tau as f64 - 1.0) * base
            } else {
                base
            }
        }
    }
}

/// `q(s,a) += α [r + ζ max_a' q(s',a') − q(s,a)]`; `next = None` is terminal.
pub fn q_update(q: &mut QTable, state: StateKey, action: u32, reward: f64, next: Option<StateKey>, cfg: &TrainConfig) -> Result<()> {
    let future = next.map_or(0.0, |s| q.max_value(s));
    let old = q.get(state, action);
    q.set(state, action, old + cfg.learning_rate * (reward + cfg.discount * future - old))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingEpisode {
    pub episode: usize,
    pub epsilon: f64,
    pub collisions: usize,
    pub mean_buffer: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub episodes: Vec<TrainingEpisode>,
    /// Visits per trust bin across all vehicle decisions.
    pub bin_visits: [u64; TRUST_BINS],
}

impl TrainingLog {
    /// Trust bins visited at least once, in ascending order.
    pub fn visited_bins(&self) -> impl Iterator<Item = usize> + '_ {
        (0..TRUST_BINS).filter(|&b| self.bin_visits[b] > 0)
    }
}

/// State key used by a policy; trust-blind policies see a single bin.
pub fn policy_state(entry: &RlEntry, trust_aware: bool) -> Result<StateKey> {
    let (bin, route) = encode(entry)?;
    Ok((if trust_aware { bin } else { 0 }, route))
}

/// Trains one policy on the scenario's training spawn set.
pub fn train(cfg: &ScenarioConfig, trust_aware: bool) -> Result<(QTable, TrainingLog)> {
    cfg.validate()?;
    let tc = &cfg.train;
    let mut q = QTable::new(cfg.action_range());
    let mut log = TrainingLog::default();
    let mut explore: ChaCha8Rng = episode::substream(cfg.seed, &[episode::STREAM_EXPLORE, u64::from(trust_aware)]);
    let spawns = episode::spawn_set(cfg, episode::TRAINING_SET);
    let honest = episode::honesty(cfg, episode::TRAINING_SET);
    for e in 0..tc.episodes {
        let epsilon = tc.epsilon(e);
        let key = episode::misbehavior_key(cfg.seed, &[episode::STREAM_TRAIN, e as u64]);
        let mut ep = Episode::new(cfg, spawns.clone(), honest.clone(), key, true)?;
        let mut states = observe_states(&mut ep, trust_aware, &mut log)?;
        let (mut reward_sum, mut buffer_sum, mut count) = (0.0, 0.0, 0usize);
        while !ep.is_done() {
            let actions: Vec<u32> = states
                .iter()
                .map(|&s| select_buffer(&q, s, epsilon, &mut explore))
                .collect();
            let buffers: Vec<f64> = actions.iter().map(|&a| f64::from(a)).collect();
            let report = ep.step(&buffers)?;
            let next = if ep.is_done() {
                None
            } else {
                Some(observe_states(&mut ep, trust_aware, &mut log)?)
            };
            for (i, outcome) in report.vehicles.iter().enumerate() {
                let r = reward(outcome.collided, actions[i], tc, cfg.tau);
                q_update(&mut q, states[i], actions[i], r, next.as_ref().map(|n| n[i]), tc)?;
                reward_sum += r;
                buffer_sum += buffers[i];
                count += 1;
            }
            if let Some(n) = next {
                states = n;
            }
        }
        log.episodes.push(TrainingEpisode {
            episode: e,
            epsilon,
            collisions: ep.metrics().collisions,
            mean_buffer: buffer_sum / count as f64,
            mean_reward: reward_sum / count as f64,
        });
    }
    Ok((q, log))
}

fn observe_states(ep: &mut Episode, trust_aware: bool, log: &mut TrainingLog) -> Result<Vec<StateKey>> {
    ep.observe()
        .iter()
        .map(|entry| {
            log.bin_visits[trust_bin(entry.trust)] += 1;
            policy_state(entry, trust_aware)
        })
        .collect()
}
