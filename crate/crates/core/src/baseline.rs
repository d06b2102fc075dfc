//! Load-estimation heuristics: LE-URC, its full-state-information twin
//! FSI-URC, and the static-partition multi-group variant.

use rand::RngCore;

use crate::env::{Controller, Decision, StateLayout};
use crate::error::ConfigError;
use crate::types::{GroupConfig, GroupObservation, SimParams, TtiConfig, F_PREA};

/// Substitute for an all-collided observation (no idle preambles), where the
/// inverse of the idle expectation is undefined.
pub const ZERO_IDLE_SUBSTITUTE: f64 = 0.5;

/// Attempters implied by `v_ip` idle preambles out of `f`:
/// `log_{(f-1)/f}(v_ip / f)`.
pub fn estimate_attempters(v_ip: f64, f_prea: u32) -> Result<f64, ConfigError> {
    if f_prea < 2 {
        return Err(ConfigError::Observation(format!("need at least 2 preambles, got {f_prea}")));
    }
    let f = f64::from(f_prea);
    if !(0.0..=f).contains(&v_ip) {
        return Err(ConfigError::Observation(format!("{v_ip} idle preambles out of {f_prea}")));
    }
    let v = if v_ip == 0.0 { ZERO_IDLE_SUBSTITUTE } else { v_ip };
    Ok((v / f).ln() / ((f - 1.0) / f).ln())
}

/// Expected idle preambles with `n` attempters on `f` preambles.
pub fn expected_idle(n: f64, f_prea: u32) -> f64 {
    let f = f64::from(f_prea);
    f * (1.0 - 1.0 / f).powf(n)
}

/// Expected singleton preambles, `n (1 - 1/f)^(n-1)`.
pub fn expected_success(n: f64, f_prea: u32) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    n * (1.0 - 1.0 / f64::from(f_prea)).powf(n - 1.0)
}

/// Running state of the load estimator for one group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadEstimator {
    pub d_prev: f64,
    pub delta: f64,
}

impl Default for LoadEstimator {
    fn default() -> Self {
        LoadEstimator { d_prev: 0.0, delta: 0.0 }
    }
}

impl LoadEstimator {
    /// Combines the idle-based estimate `zeta` with the collision lower bound,
    /// then updates the trend.
    pub fn fuse(&mut self, zeta: f64, v_cp: f64) -> f64 {
        let d = (2.0 * v_cp).max(zeta + self.delta).max(0.0);
        self.delta = d - self.d_prev;
        self.d_prev = d;
        d
    }

    /// One full estimator update from last TTI's per-period idle and
    /// collided counts.
    pub fn update(&mut self, v_ip: f64, v_cp: f64, f_prea: u32) -> Result<f64, ConfigError> {
        let zeta = estimate_attempters(v_ip, f_prea)?;
        Ok(self.fuse(zeta, v_cp))
    }
}

/// The two terms of the expected-served minimum for `f` preambles: expected
/// requests (new connections plus last TTI's unserved) and data capacity.
pub fn served_terms(load: f64, v_un: f64, base: GroupConfig, f: u32, r_budget: u64, params: &SimParams) -> (f64, f64) {
    let cfg = GroupConfig::new(base.n_rach(), base.n_repe(), f).expect("legal f");
    let rach = u64::from(params.b_rach) * u64::from(cfg.n_rach() * cfg.n_repe() * f);
    let cap = r_budget.saturating_sub(rach) as f64 / cfg.data_cost(params.b_data) as f64;
    let per_period = load / f64::from(cfg.n_rach());
    let requests = f64::from(cfg.n_rach()) * expected_success(per_period, f) + v_un;
    (requests, cap)
}

/// Expected served devices if `f` preambles are used.
pub fn expected_served(load: f64, v_un: f64, base: GroupConfig, f: u32, r_budget: u64, params: &SimParams) -> f64 {
    let (requests, cap) = served_terms(load, v_un, base, f, r_budget, params);
    requests.min(cap)
}

/// Index of the largest value; ties keep the earliest.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Argmax over the legal preamble counts; ties keep the smallest count.
pub fn choose_preambles(load: f64, v_un: f64, base: GroupConfig, r_budget: u64, params: &SimParams) -> u32 {
    let values = F_PREA.map(|f| expected_served(load, v_un, base, f, r_budget, params));
    F_PREA[argmax_first(&values)]
}

/// Where the load figure comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadSource {
    Estimated,
    /// Ground-truth attempters from the simulator.
    FullState,
}

/// LE-URC / FSI-URC over one or more groups with fixed `n_rach` and
/// `n_repe`. In multi-group use each group optimizes its preamble count
/// inside its own share of the uplink.
#[derive(Clone, Debug)]
pub struct UrcController {
    source: LoadSource,
    base: Vec<GroupConfig>,
    budgets: Vec<u64>,
    estimators: Vec<LoadEstimator>,
    first: bool,
    label: String,
}

impl UrcController {
    /// Single group with fixed `n_rach`, `n_repe`.
    pub fn single(source: LoadSource, n_rach: u32, n_repe: u32, params: &SimParams) -> Result<Self, ConfigError> {
        Self::with_partition(source, &[(n_rach, n_repe)], &[params.r_uplink])
    }

    /// Multi-group with an equal split of the uplink.
    pub fn equal_split(source: LoadSource, n_repe: [u32; 3], params: &SimParams) -> Result<Self, ConfigError> {
        let share = params.r_uplink / 3;
        let groups = n_repe.map(|r| (1, r));
        Self::with_partition(source, &groups, &[share; 3])
    }

    pub fn with_partition(source: LoadSource, groups: &[(u32, u32)], budgets: &[u64]) -> Result<Self, ConfigError> {
        if groups.is_empty() || groups.len() > 3 {
            return Err(ConfigError::GroupCount(groups.len()));
        }
        if budgets.len() != groups.len() {
            return Err(ConfigError::GroupMismatch { expected: groups.len(), got: budgets.len() });
        }
        let base = groups
            .iter()
            .map(|&(r, p)| GroupConfig::new(r, p, F_PREA[0]))
            .collect::<Result<Vec<_>, _>>()?;
        let name = match source {
            LoadSource::Estimated => "le-urc",
            LoadSource::FullState => "fsi-urc",
        };
        let label = if groups.len() == 1 {
            name.to_string()
        } else {
            let reps: Vec<String> = groups.iter().map(|g| g.1.to_string()).collect();
            format!("{name}-[{}]", reps.join(","))
        };
        Ok(UrcController {
            source,
            estimators: vec![LoadEstimator::default(); base.len()],
            base,
            budgets: budgets.to_vec(),
            first: true,
            label,
        })
    }

    fn initial(&self) -> TtiConfig {
        TtiConfig::new(&self.base).expect("validated at construction")
    }
}

impl Controller for UrcController {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn layout(&self) -> StateLayout {
        StateLayout::new(1, false, self.base.len())
    }

    fn begin_episode(&mut self, _rng: &mut dyn RngCore) -> TtiConfig {
        self.estimators.iter_mut().for_each(|e| *e = LoadEstimator::default());
        self.first = true;
        self.initial()
    }

    fn act(&mut self, d: &Decision<'_>) -> TtiConfig {
        let mut groups = Vec::with_capacity(self.base.len());
        for (g, base) in self.base.iter().enumerate() {
            // Before any observation: 12 idle preambles, nothing collided.
            let (obs, last) = if self.first {
                (GroupObservation { idle: F_PREA[0], ..GroupObservation::default() }, *base)
            } else {
                (d.last_observation.groups[g], d.last_action.groups()[g])
            };
            let periods = f64::from(last.n_rach());
            let load = match self.source {
                LoadSource::Estimated => self.estimators[g]
                    .update(f64::from(obs.idle) / periods, f64::from(obs.collided) / periods, last.f_prea())
                    .expect("idle count never exceeds preambles")
                    * periods,
                LoadSource::FullState => f64::from(d.true_load[g]),
            };
            let f = choose_preambles(load, f64::from(obs.unserved), *base, self.budgets[g], d.params);
            groups.push(GroupConfig::new(base.n_rach(), base.n_repe(), f).expect("legal"));
        }
        self.first = false;
        TtiConfig::new(&groups).expect("group count checked")
    }
}
