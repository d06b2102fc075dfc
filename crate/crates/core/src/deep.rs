//! Learning controllers built on the approximators: LA-Q, DQN with a target
//! network and replay, action aggregation for the multi-group scenario, and
//! the cooperative multi-agent ensemble.

use std::collections::VecDeque;
use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Controller, Decision, Feedback, StateLayout};
use crate::error::{AgentError, CheckpointError};
use crate::fapprox::{LinearQ, Mlp, PolynomialFeatures, RmsProp};
use crate::tabular::{select_action, EpsilonSchedule, PreambleActions};
use crate::types::{
    rach_resource_cost, GroupConfig, SimParams, TtiConfig, F_PREA, NUM_GROUPS, N_RACH, N_REPE,
};

/// One stored experience, states already normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
}

/// FIFO experience buffer.
#[derive(Clone, Debug)]
pub struct ReplayMemory {
    capacity: usize,
    buf: VecDeque<Transition>,
}

impl ReplayMemory {
    pub const DEFAULT_CAPACITY: usize = 10_000;

    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayMemory { capacity, buf: VecDeque::with_capacity(capacity.min(4096)) }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.buf.get(i)
    }

    /// `n` distinct transitions, uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        index::sample(rng, self.buf.len(), n.min(self.buf.len())).iter().map(|i| &self.buf[i]).collect()
    }
}

/// DQN hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DqnHyper {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
    pub batch: usize,
    pub replay_capacity: usize,
    /// Environment steps between target-network copies.
    pub target_sync: u64,
    pub epsilon: EpsilonSchedule,
    pub eval_epsilon: f64,
    /// Double estimator for the bootstrap target; plain max over the
    /// target network otherwise.
    pub double: bool,
    /// Environment steps per gradient step.
    pub train_every: u64,
}

impl Default for DqnHyper {
    fn default() -> Self {
        DqnHyper {
            hidden: vec![128, 128, 128],
            lr: RmsProp::DEFAULT_LR,
            gamma: 0.5,
            batch: 32,
            replay_capacity: ReplayMemory::DEFAULT_CAPACITY,
            target_sync: 1000,
            epsilon: EpsilonSchedule::default(),
            eval_epsilon: 0.0,
            double: true,
            train_every: 1,
        }
    }
}

/// Online and target networks with their replay memory and optimizer.
#[derive(Clone, Debug)]
pub struct DqnAgent {
    pub online: Mlp,
    pub target: Mlp,
    pub replay: ReplayMemory,
    pub hyper: DqnHyper,
    opt: RmsProp,
    steps: u64,
    updates: u64,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, n_actions: usize, hyper: DqnHyper, rng: &mut R) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend(&hyper.hidden);
        sizes.push(n_actions);
        let online = Mlp::new(&sizes, rng);
        DqnAgent {
            target: online.clone(),
            online,
            replay: ReplayMemory::new(hyper.replay_capacity),
            opt: RmsProp::with_lr(hyper.lr),
            hyper,
            steps: 0,
            updates: 0,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.online.n_outputs()
    }

    /// Environment steps seen so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn q_values(&self, s: &[f64]) -> Vec<f64> {
        self.online.predict(s)
    }

    pub fn epsilon(&self) -> f64 {
        self.hyper.epsilon.value(self.steps)
    }

    pub fn act<R: Rng + ?Sized>(&self, s: &[f64], eps: f64, rng: &mut R) -> usize {
        if eps >= 1.0 {
            return rng.random_range(0..self.n_actions());
        }
        select_action(&self.q_values(s), eps, rng)
    }

    /// Gradient step on a minibatch; `None` while the replay holds less than
    /// one batch. Returns the mean loss `0.5 (y - Q)^2`.
    pub fn train_batch(&mut self, batch: &[&Transition]) -> Result<f64, AgentError> {
        let b = batch.len();
        let d = batch[0].s.len();
        let mut x = Array2::zeros((b, d));
        let mut x_next = Array2::zeros((b, d));
        for (i, t) in batch.iter().enumerate() {
            x.row_mut(i).assign(&ndarray::ArrayView1::from(&t.s[..]));
            x_next.row_mut(i).assign(&ndarray::ArrayView1::from(&t.s_next[..]));
        }
        let q_next_target = self.target.forward(x_next.view());
        let next_value: Array1<f64> = if self.hyper.double {
            let q_next_online = self.online.forward(x_next.view());
            (0..b)
                .map(|i| {
                    let row = q_next_online.row(i);
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    q_next_target[[i, best]]
                })
                .collect()
        } else {
            q_next_target.rows().into_iter().map(|r| r.fold(f64::NEG_INFINITY, |m, &v| m.max(v))).collect()
        };
        let cache = self.online.forward_cached(x.view());
        let q = cache.output();
        let mut d_out = Array2::zeros(q.raw_dim());
        let mut loss = 0.0;
        for (i, t) in batch.iter().enumerate() {
            let y = t.r + self.hyper.gamma * next_value[i];
            let err = q[[i, t.a]] - y;
            loss += 0.5 * err * err;
            d_out[[i, t.a]] = err / b as f64;
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(AgentError::Divergence(format!("loss {loss} after {} updates", self.updates)));
        }
        let grads = self.online.backward(&cache, d_out.view());
        self.opt.step(&mut self.online, &grads);
        self.updates += 1;
        Ok(loss)
    }

    /// Stores a transition, trains when due and syncs the target network
    /// every `target_sync` steps.
    pub fn observe<R: Rng + ?Sized>(&mut self, t: Transition, rng: &mut R) -> Result<Option<f64>, AgentError> {
        self.replay.push(t);
        self.steps += 1;
        let mut loss = None;
        if self.replay.len() >= self.hyper.batch && self.steps % self.hyper.train_every.max(1) == 0 {
            let idx = index::sample(rng, self.replay.len(), self.hyper.batch);
            let batch: Vec<Transition> = idx.iter().map(|i| self.replay.buf[i].clone()).collect();
            let refs: Vec<&Transition> = batch.iter().collect();
            loss = Some(self.train_batch(&refs)?);
        }
        if self.steps % self.hyper.target_sync.max(1) == 0 {
            self.target = self.online.clone();
        }
        Ok(loss)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<(), CheckpointError> {
        self.online.save(w)
    }

    /// Restores the online network and copies it to the target.
    pub fn load_weights<R: Read>(&mut self, r: R) -> Result<(), CheckpointError> {
        let net = Mlp::load(r)?;
        if net.sizes() != self.online.sizes() {
            return Err(CheckpointError::Shape(format!("{:?} vs {:?}", net.sizes(), self.online.sizes())));
        }
        self.target = net.clone();
        self.online = net;
        Ok(())
    }
}

/// Index of a variable inside a group: number of RACH periods, repetitions
/// or preambles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variable {
    Rach = 0,
    Repe = 1,
    Prea = 2,
}

impl Variable {
    pub const ALL: [Variable; 3] = [Variable::Rach, Variable::Repe, Variable::Prea];

    pub fn values(self) -> &'static [u32] {
        match self {
            Variable::Rach => &N_RACH,
            Variable::Repe => &N_REPE,
            Variable::Prea => &F_PREA,
        }
    }
}

fn set_index(cfg: &GroupConfig, var: Variable, idx: usize) -> GroupConfig {
    let mut i = cfg.indices();
    i[var as usize] = idx;
    GroupConfig::from_indices(i[0], i[1], i[2]).expect("index in range")
}

/// Configuration in the middle of every legal set, used as the aggregated
/// action's starting point.
pub fn midpoint_config(groups: usize) -> TtiConfig {
    let g = GroupConfig::from_indices((N_RACH.len() - 1) / 2, (N_REPE.len() - 1) / 2, (F_PREA.len() - 1) / 2)
        .expect("midpoints are legal");
    TtiConfig::new(&vec![g; groups]).expect("1..=3 groups")
}

/// Applies one aggregated action: bit `3 g + v` set means one step up the
/// ordered set of variable `v` in group `g`, clear means one step down.
/// Moves past either end are clamped.
pub fn aa_wrap(bits: usize, current: &TtiConfig) -> TtiConfig {
    let mut groups = current.groups().to_vec();
    for (g, cfg) in groups.iter_mut().enumerate() {
        for var in Variable::ALL {
            let up = bits >> (3 * g + var as usize) & 1 == 1;
            let i = cfg.indices()[var as usize];
            let n = var.values().len();
            let j = if up { (i + 1).min(n - 1) } else { i.saturating_sub(1) };
            *cfg = set_index(cfg, var, j);
        }
    }
    TtiConfig::new(&groups).expect("same group count")
}

/// Shrinks `cfg` until its RACH cost fits the uplink: the most expensive
/// group gives up preambles first, then RACH periods, then repetitions.
pub fn project_to_budget(cfg: &TtiConfig, params: &SimParams) -> TtiConfig {
    let mut out = *cfg;
    while rach_resource_cost(&out, params.b_rach) > params.r_uplink {
        let cost = |g: &GroupConfig| rach_resource_cost(&TtiConfig::single(*g), params.b_rach);
        let (gi, g) = out
            .groups()
            .iter()
            .enumerate()
            .max_by_key(|&(i, g)| (cost(g), std::cmp::Reverse(i)))
            .map(|(i, g)| (i, *g))
            .expect("at least one group");
        let idx = g.indices();
        let shrunk = if idx[2] > 0 {
            set_index(&g, Variable::Prea, idx[2] - 1)
        } else if idx[0] > 0 {
            set_index(&g, Variable::Rach, idx[0] - 1)
        } else if idx[1] > 0 {
            set_index(&g, Variable::Repe, idx[1] - 1)
        } else {
            break;
        };
        out = out.with_group(gi, shrunk);
    }
    out
}

/// How an action index becomes a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionSpace {
    /// Single group, choose the preamble count.
    Preamble(PreambleActions),
    /// Nine ascent/descent bits over three groups.
    Aggregated,
}

impl ActionSpace {
    pub fn len(&self) -> usize {
        match self {
            ActionSpace::Preamble(p) => p.len(),
            ActionSpace::Aggregated => 1 << (3 * NUM_GROUPS),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn groups(&self) -> usize {
        match self {
            ActionSpace::Preamble(_) => 1,
            ActionSpace::Aggregated => NUM_GROUPS,
        }
    }

    pub fn apply(&self, a: usize, last: &TtiConfig, params: &SimParams) -> TtiConfig {
        match self {
            ActionSpace::Preamble(p) => p.config(a),
            ActionSpace::Aggregated => project_to_budget(&aa_wrap(a, last), params),
        }
    }

    pub fn initial<R: RngCore + ?Sized>(&self, rng: &mut R) -> TtiConfig {
        match self {
            ActionSpace::Preamble(p) => p.config(rng.random_range(0..p.len())),
            ActionSpace::Aggregated => midpoint_config(NUM_GROUPS),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ActionSpace::Preamble(_) => "",
            ActionSpace::Aggregated => "aa-",
        }
    }
}

/// Linear Q-learning on polynomial features of the state window.
#[derive(Clone, Debug)]
pub struct LinearQController {
    pub model: LinearQ,
    pub features: PolynomialFeatures,
    pub actions: ActionSpace,
    pub lambda: f64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub eval_epsilon: f64,
    layout: StateLayout,
    steps: u64,
    learning: bool,
    rng: ChaCha8Rng,
    last_choice: usize,
    x: Array1<f64>,
}

impl LinearQController {
    pub fn new(actions: ActionSpace, window: usize, degree: u32, seed: u64) -> Self {
        let layout = StateLayout::new(window, actions == ActionSpace::Aggregated, actions.groups());
        let features = PolynomialFeatures::new(layout.len(), degree);
        LinearQController {
            model: LinearQ::zeros(actions.len(), features.len()),
            x: Array1::zeros(features.len()),
            features,
            actions,
            lambda: 0.01,
            gamma: 0.5,
            epsilon: EpsilonSchedule::default(),
            eval_epsilon: 0.0,
            layout,
            steps: 0,
            learning: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_choice: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

impl Controller for LinearQController {
    fn name(&self) -> String {
        format!("{}la-q", self.actions.label())
    }

    fn layout(&self) -> StateLayout {
        self.layout
    }

    fn begin_episode(&mut self, rng: &mut dyn RngCore) -> TtiConfig {
        self.actions.initial(rng)
    }

    fn act(&mut self, d: &Decision<'_>) -> TtiConfig {
        self.x = self.features.transform(d.normalized);
        let eps = if self.learning { self.epsilon.value(self.steps) } else { self.eval_epsilon };
        let q = self.model.predict(self.x.view());
        self.last_choice = select_action(q.as_slice().expect("contiguous"), eps, &mut self.rng);
        self.actions.apply(self.last_choice, d.last_action, d.params)
    }

    fn observe(&mut self, fb: &Feedback<'_>) -> Result<(), AgentError> {
        if !self.learning {
            return Ok(());
        }
        let x_next = self.features.transform(fb.next_normalized);
        let td = self.model.sgd_step(self.x.view(), self.last_choice, fb.reward, x_next.view(), self.lambda, self.gamma);
        if !td.is_finite() {
            return Err(AgentError::Divergence(format!("TD error {td} at step {}", self.steps)));
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

/// A single DQN choosing among `actions`.
#[derive(Clone, Debug)]
pub struct DqnController {
    pub agent: DqnAgent,
    pub actions: ActionSpace,
    layout: StateLayout,
    learning: bool,
    rng: ChaCha8Rng,
    last_choice: usize,
    last_loss: Option<f64>,
}

impl DqnController {
    pub fn new(actions: ActionSpace, window: usize, hyper: DqnHyper, seed: u64) -> Self {
        let layout = StateLayout::new(window, actions == ActionSpace::Aggregated, actions.groups());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DqnController {
            agent: DqnAgent::new(layout.len(), actions.len(), hyper, &mut rng),
            actions,
            layout,
            learning: true,
            rng,
            last_choice: 0,
            last_loss: None,
        }
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }
}

impl Controller for DqnController {
    fn name(&self) -> String {
        format!("{}dqn", self.actions.label())
    }

    fn layout(&self) -> StateLayout {
        self.layout
    }

    fn begin_episode(&mut self, rng: &mut dyn RngCore) -> TtiConfig {
        self.actions.initial(rng)
    }

    fn act(&mut self, d: &Decision<'_>) -> TtiConfig {
        let eps = if self.learning { self.agent.epsilon() } else { self.agent.hyper.eval_epsilon };
        self.last_choice = self.agent.act(d.normalized, eps, &mut self.rng);
        self.actions.apply(self.last_choice, d.last_action, d.params)
    }

    fn observe(&mut self, fb: &Feedback<'_>) -> Result<(), AgentError> {
        if !self.learning {
            return Ok(());
        }
        let t = Transition {
            s: fb.normalized.to_vec(),
            a: self.last_choice,
            r: fb.reward,
            s_next: fb.next_normalized.to_vec(),
        };
        if let Some(l) = self.agent.observe(t, &mut self.rng)? {
            self.last_loss = Some(l);
        }
        Ok(())
    }

    fn set_learning(&mut self, learning: bool) {
        self.learning = learning;
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

/// Nine DQN agents, one per (group, variable), sharing state and reward.
/// Agent `3 g + v` picks variable `v` of group `g` directly from its legal
/// set.
#[derive(Clone, Debug)]
pub struct CmaDqn {
    pub agents: Vec<DqnAgent>,
    layout: StateLayout,
    learning: bool,
    rng: ChaCha8Rng,
}

impl CmaDqn {
    pub fn new(window: usize, hyper: DqnHyper, seed: u64) -> Self {
        let layout = StateLayout::new(window, true, NUM_GROUPS);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents = (0..3 * NUM_GROUPS)
            .map(|k| DqnAgent::new(layout.len(), Self::variable(k).values().len(), hyper.clone(), &mut rng))
            .collect();
        CmaDqn { agents, layout, learning: true, rng }
    }

    pub fn variable(k: usize) -> Variable {
        Variable::ALL[k % 3]
    }

    fn compose(choices: &[usize]) -> TtiConfig {
        let groups: Vec<GroupConfig> = choices
            .chunks(3)
            .map(|c| GroupConfig::from_indices(c[0], c[1], c[2]).expect("agent outputs index legal sets"))
            .collect();
        TtiConfig::new(&groups).expect("three groups")
    }

    pub fn replay_lengths(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.replay.len()).collect()
    }
}

impl Controller for CmaDqn {
    fn name(&self) -> String {
        "cma-dqn".into()
    }

    fn layout(&self) -> StateLayout {
        self.layout
    }

    fn begin_episode(&mut self, rng: &mut dyn RngCore) -> TtiConfig {
        // A^0 only seeds the state window and is never executed.
        let choices: Vec<usize> =
            (0..self.agents.len()).map(|k| rng.random_range(0..Self::variable(k).values().len())).collect();
        Self::compose(&choices)
    }

    fn act(&mut self, d: &Decision<'_>) -> TtiConfig {
        let mut choices = Vec::with_capacity(self.agents.len());
        for a in &self.agents {
            let eps = if self.learning { a.epsilon() } else { a.hyper.eval_epsilon };
            choices.push(a.act(d.normalized, eps, &mut self.rng));
        }
        project_to_budget(&Self::compose(&choices), d.params)
    }

    fn observe(&mut self, fb: &Feedback<'_>) -> Result<(), AgentError> {
        if !self.learning {
            return Ok(());
        }
        // Agents learn from the executed (possibly projected) values.
        let executed: Vec<usize> = fb.action.groups().iter().flat_map(|g| g.indices()).collect();
        for (k, agent) in self.agents.iter_mut().enumerate() {
            let t = Transition {
                s: fb.normalized.to_vec(),
                a: executed[k],
                r: fb.reward,
                s_next: fb.next_normalized.to_vec(),
            };
            agent.observe(t, &mut self.rng)?;
        }
        Ok(())
    }

    fn set_learning(&mut self, learning: bool) {
        self.learning = learning;
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{run_episode, EpisodeConfig, NbIotEnv, Scenario};

    fn t(a: usize, r: f64) -> Transition {
        Transition { s: vec![a as f64], a, r, s_next: vec![0.0] }
    }

    #[test]
    fn replay_is_fifo_and_bounded() {
        let mut m = ReplayMemory::new(3);
        for i in 0..5 {
            m.push(t(i, 0.0));
        }
        assert_eq!(m.len(), 3);
        assert_eq!(m.get(0).unwrap().a, 2);
        assert_eq!(m.get(2).unwrap().a, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = m.sample(3, &mut rng);
        let mut seen: Vec<usize> = s.iter().map(|t| t.a).collect();
        seen.sort();
        assert_eq!(seen, vec![2, 3, 4]);
    }

    fn small_hyper() -> DqnHyper {
        DqnHyper { hidden: vec![16], lr: 1e-2, batch: 8, target_sync: 50, ..DqnHyper::default() }
    }

    #[test]
    fn warm_up_skips_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = DqnAgent::new(1, 2, small_hyper(), &mut rng);
        for i in 0..7 {
            assert_eq!(agent.observe(t(i % 2, 1.0), &mut rng).unwrap(), None);
        }
        assert!(agent.observe(t(0, 1.0), &mut rng).unwrap().is_some());
    }

    #[test]
    fn gamma_zero_loss_is_reward_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hyper = DqnHyper { gamma: 0.0, ..small_hyper() };
        let mut agent = DqnAgent::new(1, 2, hyper, &mut rng);
        // Zero output layer: Q = 0, so the loss is the mean of r^2 / 2.
        let batch = [t(0, 1.0), t(1, 3.0)];
        let refs: Vec<&Transition> = batch.iter().collect();
        let loss = agent.train_batch(&refs).unwrap();
        assert!((loss - 0.25 * (1.0 + 9.0)).abs() < 1e-12);
    }

    #[test]
    fn targets_fixed_between_syncs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = DqnAgent::new(1, 2, small_hyper(), &mut rng);
        let before = agent.target.clone();
        for i in 0..49 {
            agent.observe(t(i % 2, 1.0), &mut rng).unwrap();
        }
        assert_eq!(agent.target, before);
        assert_ne!(agent.online, before);
        agent.observe(t(0, 1.0), &mut rng).unwrap();
        assert_eq!(agent.target, agent.online);
    }

    /// Two-state contextual bandit: the next state is drawn independently
    /// of the action, so `Q*(s,a) = r(s,a) + gamma * E[max_a' Q*(s',a')]`.
    #[test]
    fn learns_contextual_bandit() {
        let rewards = [[1.0, 0.0], [0.0, 0.5]];
        let gamma = 0.5;
        let v = 0.5 * (1.0 + 0.5);
        let q_star = [[1.0 + gamma * v / (1.0 - gamma), gamma * v / (1.0 - gamma)], [gamma * v / (1.0 - gamma), 0.5 + gamma * v / (1.0 - gamma)]];
        let hyper = DqnHyper {
            hidden: vec![32, 32],
            lr: 3e-4,
            gamma,
            batch: 32,
            target_sync: 50,
            ..DqnHyper::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut agent = DqnAgent::new(2, 2, hyper, &mut rng);
        let onehot = |s: usize| if s == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
        let mut s = 0;
        for _ in 0..5000 {
            let a = rng.random_range(0..2);
            let s_next = rng.random_range(0..2);
            agent
                .observe(Transition { s: onehot(s), a, r: rewards[s][a], s_next: onehot(s_next) }, &mut rng)
                .unwrap();
            s = s_next;
        }
        let mut worst: f64 = 0.0;
        for s in 0..2 {
            let q = agent.q_values(&onehot(s));
            for a in 0..2 {
                worst = worst.max((q[a] - q_star[s][a]).abs());
            }
        }
        assert!(worst < 0.05, "max |Q - Q*| = {worst}");
    }

    #[test]
    fn aggregated_steps_clamp() {
        let minimal = TtiConfig::new(&[GroupConfig::minimal(); 3]).unwrap();
        assert_eq!(aa_wrap(0, &minimal), minimal);
        // Ascend only the preamble count of group 0.
        let up = aa_wrap(1 << 2, &minimal);
        assert_eq!(up.groups()[0].f_prea(), 24);
        assert_eq!(up.groups()[1], GroupConfig::minimal());
        let all_up = aa_wrap(511, &minimal);
        for g in all_up.groups() {
            assert_eq!((g.n_rach(), g.n_repe(), g.f_prea()), (2, 2, 24));
        }
        let max = TtiConfig::new(&[GroupConfig::new(4, 32, 48).unwrap(); 3]).unwrap();
        assert_eq!(aa_wrap(511, &max), max);
        // Up then down returns to an interior start.
        let mid = midpoint_config(3);
        assert_eq!(aa_wrap(0, &aa_wrap(511, &mid)), mid);
        assert_eq!(ActionSpace::Aggregated.len(), 512);
    }

    #[test]
    fn projection_fits_budget() {
        let p = SimParams::multi_group();
        let max = TtiConfig::new(&[GroupConfig::new(4, 32, 48).unwrap(); 3]).unwrap();
        let fitted = project_to_budget(&max, &p);
        assert!(rach_resource_cost(&fitted, p.b_rach) <= p.r_uplink);
        let mid = midpoint_config(3);
        assert_eq!(project_to_budget(&mid, &p), mid);
    }

    #[test]
    fn cma_replays_stay_aligned() {
        let params = SimParams { n_periodic: 100, n_bursty: 100, ..SimParams::multi_group() };
        let hyper = DqnHyper { hidden: vec![8], batch: 4, ..DqnHyper::default() };
        let mut cma = CmaDqn::new(2, hyper, 0);
        let mut cfg = EpisodeConfig::new(Scenario::MultiGroup, &params, cma.layout());
        cfg.horizon = 12;
        let mut env = NbIotEnv::new(params.clone(), cfg).unwrap();
        let m = run_episode(&mut env, &mut cma, 0).unwrap();
        assert!(m.records.iter().all(|r| r.info.rach_res <= params.r_uplink));
        let lens = cma.replay_lengths();
        assert!(lens.iter().all(|&l| l == 12));
        let agent_sizes: Vec<usize> = cma.agents.iter().map(|a| a.n_actions()).collect();
        assert_eq!(agent_sizes, vec![3, 6, 4, 3, 6, 4, 3, 6, 4]);
    }

    #[test]
    fn greedy_ensemble_is_deterministic() {
        let params = SimParams { n_periodic: 100, n_bursty: 100, ..SimParams::multi_group() };
        let hyper = DqnHyper { hidden: vec![8], ..DqnHyper::default() };
        let run = || {
            let mut cma = CmaDqn::new(1, hyper.clone(), 7);
            cma.set_learning(false);
            let mut cfg = EpisodeConfig::new(Scenario::MultiGroup, &params, cma.layout());
            cfg.horizon = 20;
            let mut env = NbIotEnv::new(params.clone(), cfg).unwrap();
            let m = run_episode(&mut env, &mut cma, 3).unwrap();
            m.records.iter().map(|r| r.action).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn controllers_run_single_group() {
        let params = SimParams { n_periodic: 200, n_bursty: 200, ..SimParams::default() };
        let mut ctls: Vec<Box<dyn Controller>> = vec![
            Box::new(LinearQController::new(ActionSpace::Preamble(PreambleActions::default()), 4, 2, 0)),
            Box::new(DqnController::new(
                ActionSpace::Preamble(PreambleActions::default()),
                4,
                DqnHyper { hidden: vec![16], ..DqnHyper::default() },
                0,
            )),
        ];
        for c in &mut ctls {
            let mut cfg = EpisodeConfig::new(Scenario::SingleGroup, &params, c.layout());
            cfg.horizon = 40;
            let mut env = NbIotEnv::new(params.clone(), cfg).unwrap();
            let m = run_episode(&mut env, c.as_mut(), 0).unwrap();
            assert_eq!(m.records.len(), 40);
        }
    }

    #[test]
    fn checkpoint_restores_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = DqnAgent::new(3, 4, small_hyper(), &mut rng);
        for i in 0..20 {
            a.observe(Transition { s: vec![0.1, 0.2, i as f64 / 20.0], a: i % 4, r: 1.0, s_next: vec![0.0; 3] }, &mut rng).unwrap();
        }
        let mut buf = Vec::new();
        a.save(&mut buf).unwrap();
        let mut b = DqnAgent::new(3, 4, small_hyper(), &mut rng);
        b.load_weights(buf.as_slice()).unwrap();
        assert_eq!(a.q_values(&[0.3, 0.3, 0.3]), b.q_values(&[0.3, 0.3, 0.3]));
        let mut wrong = DqnAgent::new(2, 4, small_hyper(), &mut rng);
        assert!(wrong.load_weights(buf.as_slice()).is_err());
    }
}
