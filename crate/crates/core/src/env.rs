//! The step-based control loop: a controller picks a [`TtiConfig`], the
//! environment runs one TTI of arrivals, RACH periods and data scheduling, and
//! returns the eNB-side observation, the reward and the next agent state.

use std::collections::VecDeque;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AgentError, ConfigError};
use crate::mac::{self, Attempter, Detection, RetryEffect};
use crate::phy;
use crate::traffic::{Arrival, BetaProfile, BurstyTable, TrafficGenerator, TICKS_PER_TTI};
use crate::types::{
    data_resource_budget, rach_resource_cost, CeGroup, DeviceState, SimParams, TrafficKind,
    TtiConfig, TtiObservation, NUM_GROUPS,
};

/// Single-group scenarios put every device in group 0; multi-group ones use
/// all three coverage groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    SingleGroup,
    MultiGroup,
}

impl Scenario {
    pub fn num_groups(self) -> usize {
        match self {
            Scenario::SingleGroup => 1,
            Scenario::MultiGroup => NUM_GROUPS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::SingleGroup => "single-group",
            Scenario::MultiGroup => "multi-group",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Shape of the agent state: the last `window` TTIs, newest first, each
/// contributing the action (if `include_actions`) then the observation of
/// every active group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub window: usize,
    pub include_actions: bool,
    pub groups: usize,
}

impl StateLayout {
    pub fn new(window: usize, include_actions: bool, groups: usize) -> Self {
        assert!(window >= 1 && (1..=NUM_GROUPS).contains(&groups));
        StateLayout { window, include_actions, groups }
    }

    fn entry_len(&self) -> usize {
        self.groups * (5 + if self.include_actions { 3 } else { 0 })
    }

    pub fn len(&self) -> usize {
        self.window * self.entry_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Divisors that bring every state coordinate to roughly `[0, 1]`.
    pub fn scales(&self, c_su: f64) -> Vec<f64> {
        let mut entry = Vec::with_capacity(self.entry_len());
        if self.include_actions {
            for _ in 0..self.groups {
                entry.extend([4.0, 32.0, 48.0]);
            }
        }
        let preambles = if self.groups == 1 { 48.0 } else { 192.0 };
        for _ in 0..self.groups {
            entry.extend([c_su, c_su, preambles, preambles, preambles]);
        }
        entry.iter().copied().cycle().take(self.len()).collect()
    }
}

/// Raw (unnormalized) agent state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState(pub Vec<f64>);

impl AgentState {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn normalized(&self, scales: &[f64]) -> Vec<f64> {
        self.0.iter().zip(scales).map(|(v, s)| v / s).collect()
    }
}

/// Episode-level settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub horizon: u32,
    pub scenario: Scenario,
    /// Reward normalizer.
    pub c_su: f64,
    pub layout: StateLayout,
}

impl EpisodeConfig {
    pub const DEFAULT_HORIZON: u32 = 937;

    pub fn new(scenario: Scenario, params: &SimParams, layout: StateLayout) -> Self {
        EpisodeConfig { horizon: Self::DEFAULT_HORIZON, scenario, c_su: params.default_c_su(), layout }
    }
}

pub fn reward_single(v_su_0: u32, c_su: f64) -> f64 {
    f64::from(v_su_0) / c_su
}

pub fn reward_multi(v_su: &[u32], c_su: f64) -> f64 {
    f64::from(v_su.iter().sum::<u32>()) / c_su
}

/// Simulator-side bookkeeping for one TTI, beyond what the eNB observes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TtiInfo {
    pub tti: u32,
    pub arrivals: u32,
    /// Arrivals discarded because a queue was full.
    pub overflow: u32,
    /// Devices per group that contended at least once this TTI.
    pub attempters: [u32; NUM_GROUPS],
    pub new_connections: [u32; NUM_GROUPS],
    /// Connected devices carried into this TTI's scheduling round.
    pub carried_over: [u32; NUM_GROUPS],
    /// Connections that timed out unscheduled this TTI.
    pub expired: [u32; NUM_GROUPS],
    pub drops: [u32; NUM_GROUPS],
    pub rach_res: u64,
    pub data_budget: u64,
    pub data_used: u64,
}

#[derive(Clone, Debug)]
pub struct Step {
    pub state: AgentState,
    pub reward: f64,
    pub observation: TtiObservation,
    pub info: TtiInfo,
    pub done: bool,
}

/// Derives independent RNG seeds from a base seed.
pub fn stream_seed(base: u64, episode: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(base) ^ episode) ^ stream)
}

const STREAM_PLACEMENT: u64 = 1;
const STREAM_TRAFFIC: u64 = 2;
const STREAM_ACCESS: u64 = 3;
/// Exploration randomness inside a frozen controller during evaluation.
pub const STREAM_POLICY: u64 = 5;

/// One simulated NB-IoT cell.
#[derive(Clone, Debug)]
pub struct NbIotEnv {
    params: SimParams,
    cfg: EpisodeConfig,
    devices: Vec<DeviceState>,
    path_gain: Vec<f64>,
    traffic: TrafficGenerator,
    traffic_rng: ChaCha8Rng,
    access_rng: ChaCha8Rng,
    t: u32,
    history: VecDeque<(Option<TtiConfig>, TtiObservation)>,
    pending: Vec<Arrival>,
    backlogged: Vec<usize>,
    in_backlogged: Vec<bool>,
    last_attempt: Vec<u32>,
    scales: Vec<f64>,
}

impl NbIotEnv {
    pub fn new(params: SimParams, cfg: EpisodeConfig) -> Result<Self, ConfigError> {
        params.validate()?;
        if cfg.horizon == 0 {
            return Err(ConfigError::NotPositive("horizon"));
        }
        if cfg.layout.groups != cfg.scenario.num_groups() {
            return Err(ConfigError::GroupMismatch {
                expected: cfg.scenario.num_groups(),
                got: cfg.layout.groups,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(params.seed, 0, STREAM_PLACEMENT));
        let n = params.n_periodic + params.n_bursty;
        let (r_min, r_max) = (params.min_distance_m, params.cell_radius_m);
        let mut devices = Vec::with_capacity(n);
        let mut path_gain = Vec::with_capacity(n);
        for i in 0..n {
            // Uniform over the annulus between r_min and r_max.
            let u: f64 = rng.random();
            let d = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
            let kind = if i < params.n_periodic { TrafficKind::Periodic } else { TrafficKind::Bursty };
            let group = match cfg.scenario {
                Scenario::SingleGroup => CeGroup::ALL[0],
                Scenario::MultiGroup => phy::assign_ce_group(phy::rsrp(d, &params), params.rsrp_thresholds),
            };
            devices.push(DeviceState::new(d, kind, group));
            path_gain.push(phy::path_gain(d, &params));
        }
        let profile = BetaProfile::from_params(&params)?;
        let table = BurstyTable::new(&profile, params.t_tti_ms, cfg.horizon);
        let traffic = TrafficGenerator::new(
            (0..params.n_periodic).collect(),
            (params.n_periodic..n).collect(),
            table,
            &params,
        );
        let scales = cfg.layout.scales(cfg.c_su);
        let mut env = NbIotEnv {
            traffic,
            traffic_rng: ChaCha8Rng::seed_from_u64(0),
            access_rng: ChaCha8Rng::seed_from_u64(0),
            t: 0,
            history: VecDeque::new(),
            pending: Vec::new(),
            backlogged: Vec::new(),
            in_backlogged: vec![false; n],
            last_attempt: vec![u32::MAX; n],
            devices,
            path_gain,
            params,
            cfg,
            scales,
        };
        env.reset(0, None);
        Ok(env)
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.devices
    }

    pub fn tti(&self) -> u32 {
        self.t
    }

    pub fn done(&self) -> bool {
        self.t >= self.cfg.horizon
    }

    /// Divisors for [`AgentState::normalized`].
    pub fn state_scales(&self) -> &[f64] {
        &self.scales
    }

    /// Starts a new episode. `initial_action` seeds the action slot of the
    /// state window; all observations start at zero.
    pub fn reset(&mut self, episode_seed: u64, initial_action: Option<TtiConfig>) -> AgentState {
        for d in &mut self.devices {
            d.backlog = 0;
            d.rrc_connected = false;
            d.reset_counters();
        }
        self.traffic_rng = ChaCha8Rng::seed_from_u64(stream_seed(self.params.seed, episode_seed, STREAM_TRAFFIC));
        self.access_rng = ChaCha8Rng::seed_from_u64(stream_seed(self.params.seed, episode_seed, STREAM_ACCESS));
        self.traffic.reset(&mut self.traffic_rng);
        self.t = 0;
        self.history.clear();
        self.history.push_front((initial_action, TtiObservation::default()));
        while self.history.len() < self.cfg.layout.window {
            self.history.push_back((None, TtiObservation::default()));
        }
        self.backlogged.clear();
        self.in_backlogged.iter_mut().for_each(|b| *b = false);
        self.last_attempt.iter_mut().for_each(|a| *a = u32::MAX);
        self.prepare_tti();
        self.state()
    }

    fn prepare_tti(&mut self) {
        self.pending.clear();
        if !self.done() {
            self.traffic.arrivals(self.t, &mut self.traffic_rng, &mut self.pending);
        }
    }

    pub fn state(&self) -> AgentState {
        let l = self.cfg.layout;
        let mut v = Vec::with_capacity(l.len());
        for (action, obs) in self.history.iter().take(l.window) {
            if l.include_actions {
                for g in 0..l.groups {
                    match action.and_then(|a| a.groups().get(g).copied()) {
                        Some(c) => v.extend([c.n_rach(), c.n_repe(), c.f_prea()].map(f64::from)),
                        None => v.extend([0.0; 3]),
                    }
                }
            }
            for g in &obs.groups[..l.groups] {
                v.extend(g.as_array().map(f64::from));
            }
        }
        AgentState(v)
    }

    pub fn normalized_state(&self) -> Vec<f64> {
        self.state().normalized(&self.scales)
    }

    /// Ground-truth number of devices per group that will contend in the
    /// coming TTI: unconnected devices with a queued packet or an arrival
    /// due this TTI. Only oracle controllers may look at this.
    pub fn true_load(&self) -> [u32; NUM_GROUPS] {
        let mut seen = vec![false; self.devices.len()];
        let mut load = [0; NUM_GROUPS];
        let due = self.pending.iter().map(|a| a.device);
        let queued = self.backlogged.iter().copied().filter(|&d| self.devices[d].backlog > 0);
        for d in due.chain(queued) {
            let dev = &self.devices[d];
            if !seen[d] && !dev.rrc_connected {
                seen[d] = true;
                load[dev.ce_group.index()] += 1;
            }
        }
        load
    }

    fn rx_power(&self, device: usize, group: CeGroup) -> f64 {
        let g = self.path_gain[device];
        if group.index() == 0 {
            (self.params.p_rach_max_mw * g).min(self.params.rx_target_mw())
        } else {
            self.params.p_rach_max_mw * g
        }
    }

    fn add_packet(&mut self, device: usize, info: &mut TtiInfo) {
        let dev = &mut self.devices[device];
        if self.params.backlog_cap.is_some_and(|cap| dev.backlog >= cap) {
            info.overflow += 1;
            return;
        }
        dev.backlog += 1;
        info.arrivals += 1;
        if !self.in_backlogged[device] {
            self.in_backlogged[device] = true;
            self.backlogged.push(device);
        }
    }

    /// Advances one TTI under `action`.
    pub fn step(&mut self, action: &TtiConfig) -> Result<Step, ConfigError> {
        if self.done() {
            return Err(ConfigError::Other("episode finished; call reset".into()));
        }
        let groups = self.cfg.scenario.num_groups();
        if action.num_groups() != groups {
            return Err(ConfigError::GroupMismatch { expected: groups, got: action.num_groups() });
        }
        let data_budget = data_resource_budget(action, &self.params)?;

        let mut obs = TtiObservation::default();
        let mut info = TtiInfo {
            tti: self.t,
            rach_res: rach_resource_cost(action, self.params.b_rach),
            data_budget,
            ..TtiInfo::default()
        };
        for &d in &self.backlogged {
            let dev = &self.devices[d];
            if dev.rrc_connected {
                info.carried_over[dev.ce_group.index()] += 1;
            }
        }

        // RACH periods of all groups in time order; ties go to the lower group.
        let mut events: Vec<(u32, usize, u32)> = Vec::new();
        for (g, gc) in action.groups().iter().enumerate() {
            let span = TICKS_PER_TTI / gc.n_rach();
            for k in 0..gc.n_rach() {
                events.push(((k + 1) * span, g, k));
            }
        }
        events.sort_unstable();

        let pending = std::mem::take(&mut self.pending);
        let mut next_arrival = 0;
        let tti_base = self.t * TICKS_PER_TTI;
        let mut attempted_this_tti = vec![false; 0];
        if !self.params.intra_tti_retry {
            attempted_this_tti = vec![false; self.devices.len()];
        }
        let mut counted = vec![false; self.devices.len()];
        let mut attempters = Vec::new();
        for &(end_tick, g, _) in &events {
            while next_arrival < pending.len() && pending[next_arrival].tick < end_tick {
                self.add_packet(pending[next_arrival].device, &mut info);
                next_arrival += 1;
            }
            let group = CeGroup::ALL[g];
            let gc = action.groups()[g];
            let now = tti_base + end_tick;
            attempters.clear();
            for &d in &self.backlogged {
                let dev = &self.devices[d];
                if dev.ce_group != group || !dev.wants_rach() || self.last_attempt[d] == now {
                    continue;
                }
                if !self.params.intra_tti_retry && attempted_this_tti[d] {
                    continue;
                }
                attempters.push(Attempter { device: d, rx_mw: self.rx_power(d, group) });
            }
            for a in &attempters {
                if !std::mem::replace(&mut counted[a.device], true) {
                    info.attempters[g] += 1;
                }
                self.last_attempt[a.device] = now;
                if !self.params.intra_tti_retry {
                    attempted_this_tti[a.device] = true;
                }
            }
            let detection = if self.params.snr_detection {
                Detection::Rayleigh { params: &self.params, n_repe: gc.n_repe() }
            } else {
                Detection::Ideal
            };
            let out = mac::run_rach_period(&attempters, gc.f_prea(), detection, &mut self.access_rng);
            let ob = &mut obs.groups[g];
            ob.collided += out.tally.collided;
            ob.success += out.tally.success;
            ob.idle += out.tally.idle;
            for &d in &out.succeeded {
                mac::update_retry_counters(&mut self.devices[d], true, &self.params, groups);
                info.new_connections[g] += 1;
            }
            for &d in out.collided.iter().chain(&out.undetected) {
                if mac::update_retry_counters(&mut self.devices[d], false, &self.params, groups)
                    == RetryEffect::Dropped
                {
                    info.drops[g] += 1;
                }
            }
        }
        // Arrivals after the last period of every group wait for the next TTI.
        for a in &pending[next_arrival..] {
            self.add_packet(a.device, &mut info);
        }

        // Data scheduling over all connected devices.
        let candidates: Vec<(usize, u64)> = self
            .backlogged
            .iter()
            .copied()
            .filter(|&d| self.devices[d].rrc_connected)
            .map(|d| {
                let g = self.devices[d].ce_group.index();
                (d, action.groups()[g].data_cost(self.params.b_data))
            })
            .collect();
        let schedule = mac::schedule_data(&candidates, data_budget, &mut self.access_rng);
        info.data_used = schedule.used;
        for &d in &schedule.served {
            let dev = &mut self.devices[d];
            obs.groups[dev.ce_group.index()].served += 1;
            dev.backlog -= 1;
            dev.rrc_connected = false;
            dev.reset_counters();
        }
        for &d in &schedule.unserved {
            let dev = &mut self.devices[d];
            let g = dev.ce_group.index();
            dev.c_rrc += 1;
            if dev.c_rrc >= self.params.gamma_rrc {
                dev.rrc_connected = false;
                dev.reset_counters();
                info.expired[g] += 1;
            } else {
                obs.groups[g].unserved += 1;
            }
        }

        let devices = &self.devices;
        let in_backlogged = &mut self.in_backlogged;
        self.backlogged.retain(|&d| {
            let keep = devices[d].backlog > 0;
            if !keep {
                in_backlogged[d] = false;
            }
            keep
        });

        let served: Vec<u32> = obs.groups.iter().map(|g| g.served).collect();
        let reward = match self.cfg.scenario {
            Scenario::SingleGroup => reward_single(served[0], self.cfg.c_su),
            Scenario::MultiGroup => reward_multi(&served, self.cfg.c_su),
        };

        self.history.push_front((Some(*action), obs));
        self.history.truncate(self.cfg.layout.window);
        self.t += 1;
        self.prepare_tti();
        Ok(Step { state: self.state(), reward, observation: obs, info, done: self.done() })
    }
}

/// What a controller sees before choosing an action.
pub struct Decision<'a> {
    pub tti: u32,
    pub state: &'a AgentState,
    /// `state` divided by the environment's state scales.
    pub normalized: &'a [f64],
    pub last_action: &'a TtiConfig,
    pub last_observation: &'a TtiObservation,
    /// Ground truth contenders per group; for oracle controllers only.
    pub true_load: [u32; NUM_GROUPS],
    pub params: &'a SimParams,
}

/// One transition handed back to a learning controller.
pub struct Feedback<'a> {
    pub normalized: &'a [f64],
    pub action: &'a TtiConfig,
    pub reward: f64,
    pub next_normalized: &'a [f64],
    pub observation: &'a TtiObservation,
    pub done: bool,
}

/// A resource-configuration policy.
pub trait Controller {
    fn name(&self) -> String;

    /// State shape this controller consumes.
    fn layout(&self) -> StateLayout;

    /// Called at episode start; returns the initial action `A^0` that seeds
    /// the state window.
    fn begin_episode(&mut self, rng: &mut dyn RngCore) -> TtiConfig;

    fn act(&mut self, decision: &Decision<'_>) -> TtiConfig;

    /// Learning hook; the default ignores feedback.
    fn observe(&mut self, _feedback: &Feedback<'_>) -> Result<(), AgentError> {
        Ok(())
    }

    fn set_learning(&mut self, _learning: bool) {}

    /// Resets any internal exploration randomness.
    fn reseed(&mut self, _seed: u64) {}
}

/// One TTI of a recorded trajectory.
#[derive(Clone, Debug)]
pub struct TtiRecord {
    pub action: TtiConfig,
    pub observation: TtiObservation,
    pub reward: f64,
    pub info: TtiInfo,
    pub true_load: [u32; NUM_GROUPS],
}

/// Full trajectory of one episode.
#[derive(Clone, Debug, Default)]
pub struct EpisodeMetrics {
    pub episode_seed: u64,
    pub records: Vec<TtiRecord>,
}

impl EpisodeMetrics {
    pub fn total_served(&self) -> u64 {
        self.records.iter().map(|r| u64::from(r.observation.total_served())).sum()
    }

    pub fn mean_served(&self) -> f64 {
        self.total_served() as f64 / self.records.len().max(1) as f64
    }

    pub fn mean_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum::<f64>() / self.records.len().max(1) as f64
    }

    pub fn total_drops(&self) -> u64 {
        self.records.iter().map(|r| r.info.drops.iter().map(|&d| u64::from(d)).sum::<u64>()).sum()
    }
}

/// Rolls out one seeded episode. The controller's `observe` is called after
/// every TTI; whether it learns is up to [`Controller::set_learning`].
pub fn run_episode(
    env: &mut NbIotEnv,
    controller: &mut dyn Controller,
    episode_seed: u64,
) -> Result<EpisodeMetrics, AgentError> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(stream_seed(env.params.seed, episode_seed, 4));
    let initial = controller.begin_episode(&mut init_rng);
    let mut state = env.reset(episode_seed, Some(initial));
    let mut norm = state.normalized(&env.scales);
    let mut last_action = initial;
    let mut last_obs = TtiObservation::default();
    let mut metrics = EpisodeMetrics { episode_seed, records: Vec::with_capacity(env.cfg.horizon as usize) };
    while !env.done() {
        let true_load = env.true_load();
        let decision = Decision {
            tti: env.t,
            state: &state,
            normalized: &norm,
            last_action: &last_action,
            last_observation: &last_obs,
            true_load,
            params: &env.params,
        };
        let action = controller.act(&decision);
        let step = env.step(&action).map_err(|e| {
            AgentError::Config(ConfigError::Other(format!(
                "{} produced an invalid action at TTI {}: {e} ({action:?})",
                controller.name(),
                env.t
            )))
        })?;
        let next_norm = step.state.normalized(&env.scales);
        controller.observe(&Feedback {
            normalized: &norm,
            action: &action,
            reward: step.reward,
            next_normalized: &next_norm,
            observation: &step.observation,
            done: step.done,
        })?;
        metrics.records.push(TtiRecord {
            action,
            observation: step.observation,
            reward: step.reward,
            info: step.info,
            true_load,
        });
        state = step.state;
        norm = next_norm;
        last_action = action;
        last_obs = step.observation;
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::GroupConfig;

    fn small_params() -> SimParams {
        SimParams { n_periodic: 200, n_bursty: 300, seed: 9, ..SimParams::default() }
    }

    fn single_env(params: SimParams, horizon: u32) -> NbIotEnv {
        let mut cfg = EpisodeConfig::new(Scenario::SingleGroup, &params, StateLayout::new(1, false, 1));
        cfg.horizon = horizon;
        NbIotEnv::new(params, cfg).unwrap()
    }

    fn fixed() -> TtiConfig {
        TtiConfig::single(GroupConfig::new(1, 4, 12).unwrap())
    }

    #[test]
    fn empty_cell() {
        let params = SimParams { n_periodic: 0, n_bursty: 0, ..SimParams::default() };
        let mut env = single_env(params, 5);
        env.reset(0, None);
        let step = env.step(&fixed()).unwrap();
        assert_eq!(step.reward, 0.0);
        assert_eq!(step.observation.groups[0].idle, 12);
        assert_eq!(step.observation.groups[0].preambles(), 12);
    }

    #[test]
    fn reward_arithmetic() {
        assert_eq!(reward_single(0, 100.0), 0.0);
        assert!((reward_single(10, 100.0) - 0.1).abs() < 1e-15);
        assert!((reward_single(20, 100.0) - 2.0 * reward_single(10, 100.0)).abs() < 1e-15);
        assert_eq!(reward_multi(&[0, 0, 0], 100.0), 0.0);
        assert!((reward_multi(&[3, 4, 5], 100.0) - 0.12).abs() < 1e-15);
        assert_eq!(reward_multi(&[5, 3, 4], 7.0), reward_multi(&[3, 4, 5], 7.0));
    }

    #[test]
    fn invalid_action_rejected() {
        let mut env = single_env(small_params(), 5);
        env.reset(0, None);
        let over = TtiConfig::single(GroupConfig::new(4, 32, 48).unwrap());
        assert!(matches!(env.step(&over), Err(ConfigError::OverBudget { .. })));
        let three = TtiConfig::new(&[GroupConfig::minimal(); 3]).unwrap();
        assert!(matches!(env.step(&three), Err(ConfigError::GroupMismatch { .. })));
    }

    #[test]
    fn replay_is_identical() {
        let mut env = single_env(small_params(), 60);
        let run = |env: &mut NbIotEnv| {
            env.reset(3, None);
            let mut out = Vec::new();
            while !env.done() {
                let s = env.step(&fixed()).unwrap();
                out.push((s.observation, s.info.drops, s.reward.to_bits()));
            }
            out
        };
        let a = run(&mut env);
        let b = run(&mut env);
        assert_eq!(a, b);
    }

    #[test]
    fn horizon_one_gives_one_step() {
        let mut env = single_env(small_params(), 1);
        env.reset(0, None);
        let s = env.step(&fixed()).unwrap();
        assert!(s.done);
        assert!(env.step(&fixed()).is_err());
    }

    #[test]
    fn state_window_layout() {
        let params = small_params();
        let layout = StateLayout::new(2, true, 3);
        let mut cfg = EpisodeConfig::new(Scenario::MultiGroup, &params, layout);
        cfg.horizon = 10;
        let mut env = NbIotEnv::new(params, cfg).unwrap();
        let a0 = TtiConfig::new(&[GroupConfig::new(2, 8, 24).unwrap(); 3]).unwrap();
        let s = env.reset(0, Some(a0));
        assert_eq!(s.0.len(), layout.len());
        assert_eq!(&s.0[..3], &[2.0, 8.0, 24.0]);
        assert!(s.0[9..].iter().all(|&v| v == 0.0));
        let a1 = TtiConfig::new(&[GroupConfig::minimal(); 3]).unwrap();
        let step = env.step(&a1).unwrap();
        assert_eq!(&step.state.0[..3], &[1.0, 1.0, 12.0]);
        // Older entry now holds A^0.
        assert_eq!(&step.state.0[24..27], &[2.0, 8.0, 24.0]);
    }
}
