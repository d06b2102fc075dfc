//! Tabular Q-learning over a discretized last observation, plus the
//! epsilon-greedy machinery shared by every learning controller.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Controller, Decision, Feedback, StateLayout};
use crate::error::{AgentError, CheckpointError};
use crate::types::{GroupConfig, GroupObservation, TtiConfig, F_PREA};

/// Linear annealing of the exploration rate over `steps` decisions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: u64,
}

impl EpsilonSchedule {
    pub fn linear(start: f64, end: f64, steps: u64) -> Self {
        EpsilonSchedule { start, end, steps }
    }

    pub fn constant(eps: f64) -> Self {
        EpsilonSchedule { start: eps, end: eps, steps: 0 }
    }

    pub fn value(&self, step: u64) -> f64 {
        if step >= self.steps {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.steps as f64
    }
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule::linear(1.0, 0.1, 100_000)
    }
}

/// Greedy action with uniform tie-breaking among the maximizers.
pub fn greedy<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties = values.iter().filter(|&&v| v == best).count();
    let pick = if ties > 1 { rng.random_range(0..ties) } else { 0 };
    values
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v == best)
        .nth(pick)
        .map_or(0, |(i, _)| i)
}

/// With probability `eps` a uniform action, otherwise [`greedy`].
pub fn select_action<R: Rng + ?Sized>(values: &[f64], eps: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < eps {
        rng.random_range(0..values.len())
    } else {
        greedy(values, rng)
    }
}

/// Single-group actions: the preamble count, with `n_rach` and `n_repe`
/// held fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreambleActions {
    pub n_rach: u32,
    pub n_repe: u32,
}

impl PreambleActions {
    pub fn len(&self) -> usize {
        F_PREA.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn config(&self, action: usize) -> TtiConfig {
        TtiConfig::single(GroupConfig::new(self.n_rach, self.n_repe, F_PREA[action]).expect("fixed values validated"))
    }

    pub fn index_of(&self, cfg: &TtiConfig) -> usize {
        cfg.groups()[0].indices()[2]
    }
}

impl Default for PreambleActions {
    fn default() -> Self {
        PreambleActions { n_rach: 1, n_repe: 4 }
    }
}

pub type StateKey = [u16; 5];

/// Maps an observation to a table row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Discretizer {
    /// Cap for the preamble counters, which are kept exact below it.
    pub preamble_cap: u32,
    /// Cap for served / unserved before bucketing.
    pub count_cap: u32,
    pub bucket: u32,
}

impl Default for Discretizer {
    fn default() -> Self {
        Discretizer { preamble_cap: 48, count_cap: 64, bucket: 4 }
    }
}

impl Discretizer {
    pub fn key(&self, o: &GroupObservation) -> StateKey {
        let count = |v: u32| (v.min(self.count_cap) / self.bucket) as u16;
        let pre = |v: u32| v.min(self.preamble_cap) as u16;
        [count(o.served), count(o.unserved), pre(o.collided), pre(o.success), pre(o.idle)]
    }
}

/// Sparse table: rows appear on first write and read as zeros before.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_actions: usize,
    rows: HashMap<StateKey, Vec<f64>>,
    zeros: Vec<f64>,
}

const TABLE_MAGIC: &[u8; 4] = b"NBQT";
const TABLE_VERSION: u32 = 1;

impl QTable {
    pub fn new(n_actions: usize) -> Self {
        QTable { n_actions, rows: HashMap::new(), zeros: vec![0.0; n_actions] }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn visited_states(&self) -> usize {
        self.rows.len()
    }

    pub fn values(&self, s: &StateKey) -> &[f64] {
        self.rows.get(s).map_or(&self.zeros, |r| r)
    }

    pub fn get(&self, s: &StateKey, a: usize) -> f64 {
        self.values(s)[a]
    }

    pub fn max_value(&self, s: &StateKey) -> f64 {
        self.values(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `Q(s,a) += lambda (r + gamma max Q(s',.) - Q(s,a))`; returns the new value.
    pub fn update(&mut self, s: &StateKey, a: usize, r: f64, s_next: &StateKey, lambda: f64, gamma: f64) -> f64 {
        let target = r + gamma * self.max_value(s_next);
        let n = self.n_actions;
        let row = self.rows.entry(*s).or_insert_with(|| vec![0.0; n]);
        row[a] += lambda * (target - row[a]);
        row[a]
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        let mut keys: Vec<&StateKey> = self.rows.keys().collect();
        keys.sort();
        w.write_all(TABLE_MAGIC)?;
        w.write_all(&TABLE_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_actions as u32).to_le_bytes())?;
        w.write_all(&(keys.len() as u64).to_le_bytes())?;
        for k in keys {
            for v in k {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in &self.rows[k] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TABLE_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != TABLE_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let n_actions = read_u32(&mut r)? as usize;
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut table = QTable::new(n_actions);
        for _ in 0..u64::from_le_bytes(len) {
            let mut key = [0u16; 5];
            for k in &mut key {
                let mut b = [0u8; 2];
                r.read_exact(&mut b)?;
                *k = u16::from_le_bytes(b);
            }
            let mut row = vec![0.0; n_actions];
            for v in &mut row {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                *v = f64::from_le_bytes(b);
            }
            table.rows.insert(key, row);
        }
        Ok(table)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Hyperparameters shared by the tabular and linear learners.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TdHyper {
    pub lambda: f64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    /// Exploration rate when learning is switched off.
    pub eval_epsilon: f64,
}

impl Default for TdHyper {
    fn default() -> Self {
        TdHyper { lambda: 0.01, gamma: 0.5, epsilon: EpsilonSchedule::default(), eval_epsilon: 0.0 }
    }
}

/// The tabular controller for the single-group scenario.
#[derive(Clone, Debug)]
pub struct TabularQ {
    pub table: QTable,
    pub discretizer: Discretizer,
    pub actions: PreambleActions,
    pub hyper: TdHyper,
    steps: u64,
    learning: bool,
    rng: ChaCha8Rng,
    current: StateKey,
}

impl TabularQ {
    pub fn new(actions: PreambleActions, hyper: TdHyper, seed: u64) -> Self {
        TabularQ {
            table: QTable::new(actions.len()),
            discretizer: Discretizer::default(),
            actions,
            hyper,
            steps: 0,
            learning: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current: [0; 5],
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn epsilon(&self) -> f64 {
        if self.learning {
            self.hyper.epsilon.value(self.steps)
        } else {
            self.hyper.eval_epsilon
        }
    }
}

impl Controller for TabularQ {
    fn name(&self) -> String {
        "tabular-q".into()
    }

    fn layout(&self) -> StateLayout {
        StateLayout::new(1, false, 1)
    }

    fn begin_episode(&mut self, rng: &mut dyn RngCore) -> TtiConfig {
        self.current = self.discretizer.key(&GroupObservation::default());
        self.actions.config(rng.random_range(0..self.actions.len()))
    }

    fn act(&mut self, d: &Decision<'_>) -> TtiConfig {
        self.current = self.discretizer.key(&d.last_observation.groups[0]);
        let eps = self.epsilon();
        let a = select_action(self.table.values(&self.current), eps, &mut self.rng);
        self.actions.config(a)
    }

    fn observe(&mut self, fb: &Feedback<'_>) -> Result<(), AgentError> {
        if !self.learning {
            return Ok(());
        }
        let next = self.discretizer.key(&fb.observation.groups[0]);
        let a = self.actions.index_of(fb.action);
        let v = self.table.update(&self.current, a, fb.reward, &next, self.hyper.lambda, self.hyper.gamma);
        if !v.is_finite() {
            return Err(AgentError::Divergence(format!("Q-value became {v}")));
        }
        self.steps += 1;
        Ok(())
    }

    fn set_learning(&mut self, learning: bool) {
        self.learning = learning;
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}
