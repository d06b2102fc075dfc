use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::baseline::{LoadSource, UrcController};
use crate::deep::{ActionSpace, CmaDqn, DqnController, DqnHyper};
use crate::env::{stream_seed, Controller, Decision, EpisodeConfig, Feedback, Scenario, StateLayout};
use crate::error::AgentError;
use crate::fapprox::LinearQ;
use crate::tabular::{EpsilonSchedule, PreambleActions, QTable, TabularQ, TdHyper};
use crate::types::{SimParams, TtiConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    TabularQ,
    LaQ,
    Dqn,
    AaLaQ,
    AaDqn,
    CmaDqn,
    LeUrc,
    FsiUrc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 8] = [
        ControllerKind::TabularQ,
        ControllerKind::LaQ,
        ControllerKind::Dqn,
        ControllerKind::AaLaQ,
        ControllerKind::AaDqn,
        ControllerKind::CmaDqn,
        ControllerKind::LeUrc,
        ControllerKind::FsiUrc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::TabularQ => "tabular-q",
            ControllerKind::LaQ => "la-q",
            ControllerKind::Dqn => "dqn",
            ControllerKind::AaLaQ => "aa-la-q",
            ControllerKind::AaDqn => "aa-dqn",
            ControllerKind::CmaDqn => "cma-dqn",
            ControllerKind::LeUrc => "le-urc",
            ControllerKind::FsiUrc => "fsi-urc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ControllerKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn learns(self) -> bool {
        !matches!(self, ControllerKind::LeUrc | ControllerKind::FsiUrc)
    }

    /// Scenarios the controller is defined for.
    pub fn supports(self, scenario: Scenario) -> bool {
        match self {
            ControllerKind::TabularQ | ControllerKind::LaQ | ControllerKind::Dqn => scenario == Scenario::SingleGroup,
            ControllerKind::AaLaQ | ControllerKind::AaDqn | ControllerKind::CmaDqn => {
                scenario == Scenario::MultiGroup
            }
            ControllerKind::LeUrc | ControllerKind::FsiUrc => true,
        }
    }
}

/// Learning hyperparameters; unused fields are ignored by controllers that
/// do not need them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    /// Step size of the tabular and linear learners.
    pub lambda: f64,
    pub gamma: f64,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub batch: usize,
    pub replay_capacity: usize,
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Decisions over which exploration anneals linearly.
    pub epsilon_steps: u64,
    pub eval_epsilon: f64,
    pub double: bool,
    pub train_every: u64,
    pub poly_degree: u32,
    /// Observation window for the approximators.
    pub window: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        let d = DqnHyper::default();
        Hyper {
            lambda: 0.01,
            gamma: d.gamma,
            lr: d.lr,
            hidden: d.hidden,
            batch: d.batch,
            replay_capacity: d.replay_capacity,
            target_sync: d.target_sync,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_steps: 100_000,
            eval_epsilon: 0.0,
            double: true,
            train_every: 1,
            poly_degree: 2,
            window: 4,
        }
    }
}

impl Hyper {
    fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule::linear(self.epsilon_start, self.epsilon_end, self.epsilon_steps)
    }

    fn dqn(&self) -> DqnHyper {
        DqnHyper {
            hidden: self.hidden.clone(),
            lr: self.lr,
            gamma: self.gamma,
            batch: self.batch,
            replay_capacity: self.replay_capacity,
            target_sync: self.target_sync,
            epsilon: self.epsilon(),
            eval_epsilon: self.eval_epsilon,
            double: self.double,
            train_every: self.train_every,
        }
    }
}

/// Fixed parameters of the load-estimation baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UrcSpec {
    pub n_rach: u32,
    /// One entry per group; empty means the scenario default.
    pub n_repe: Vec<u32>,
}

impl Default for UrcSpec {
    fn default() -> Self {
        UrcSpec { n_rach: 1, n_repe: Vec::new() }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub scenario: Scenario,
    pub controller: ControllerKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train_episodes: u32,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: u32,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    /// Overrides of the scenario's default cell parameters.
    #[serde(default)]
    pub sim: toml::Table,
    #[serde(default)]
    pub hyper: Hyper,
    #[serde(default)]
    pub urc: UrcSpec,
}

fn default_eval_episodes() -> u32 {
    1000
}

fn default_horizon() -> u32 {
    EpisodeConfig::DEFAULT_HORIZON
}

impl ExperimentSpec {
    /// Full-scale defaults.
    pub fn new(name: &str, scenario: Scenario, controller: ControllerKind) -> Self {
        ExperimentSpec {
            name: name.to_string(),
            scenario,
            controller,
            seed: 0,
            train_episodes: if controller.learns() { 1000 } else { 0 },
            eval_episodes: default_eval_episodes(),
            horizon: default_horizon(),
            sim: toml::Table::new(),
            hyper: Hyper::default(),
            urc: UrcSpec::default(),
        }
    }

    /// Scaled-down profile that trains on a single core in minutes.
    pub fn desk(name: &str, scenario: Scenario, controller: ControllerKind) -> Self {
        let mut s = ExperimentSpec::new(name, scenario, controller);
        s.eval_episodes = 200;
        let (periodic, bursty) = match scenario {
            Scenario::SingleGroup => (1000, 500),
            Scenario::MultiGroup => (3000, 3000),
        };
        s.sim.insert("n_periodic".into(), toml::Value::Integer(periodic));
        s.sim.insert("n_bursty".into(), toml::Value::Integer(bursty));
        let episodes: u32 = match controller {
            ControllerKind::LeUrc | ControllerKind::FsiUrc => 0,
            ControllerKind::TabularQ | ControllerKind::LaQ => 200,
            ControllerKind::AaLaQ => 500,
            ControllerKind::Dqn => 600,
            ControllerKind::AaDqn | ControllerKind::CmaDqn => 200,
        };
        s.train_episodes = episodes;
        s.hyper.epsilon_steps = u64::from(episodes) * u64::from(s.horizon) * 2 / 3;
        match controller {
            // Rewards are small and the gaps between actions smaller still;
            // the default step size leaves the greedy choice noisy.
            ControllerKind::Dqn => s.hyper.lr = 3e-5,
            ControllerKind::AaDqn => {
                s.hyper.hidden = vec![256, 256, 256];
                s.hyper.train_every = 2;
            }
            ControllerKind::CmaDqn => s.hyper.train_every = 2,
            ControllerKind::AaLaQ => s.hyper.window = 1,
            _ => {}
        }
        s
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Cell parameters: scenario defaults, the spec seed, then overrides.
    pub fn sim_params(&self) -> Result<SimParams, HarnessError> {
        let mut base = match self.scenario {
            Scenario::SingleGroup => SimParams::default(),
            Scenario::MultiGroup => SimParams::multi_group(),
        };
        base.seed = self.seed;
        let mut table = toml::Table::try_from(&base).map_err(|e| HarnessError::Config(e.to_string()))?;
        for (k, v) in &self.sim {
            if !table.contains_key(k) && k != "backlog_cap" {
                return Err(HarnessError::Config(format!("unknown sim parameter `{k}`")));
            }
            table.insert(k.clone(), v.clone());
        }
        let params: SimParams =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !self.controller.supports(self.scenario) {
            return Err(HarnessError::Config(format!(
                "controller {} does not run in the {} scenario",
                self.controller.as_str(),
                self.scenario
            )));
        }
        if self.horizon == 0 {
            return Err(HarnessError::Config("horizon must be positive".into()));
        }
        if self.hyper.window == 0 || self.hyper.batch == 0 || self.hyper.replay_capacity == 0 {
            return Err(HarnessError::Config("window, batch and replay capacity must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.hyper.gamma) || !(self.hyper.lambda > 0.0 && self.hyper.lambda <= 1.0) {
            return Err(HarnessError::Config("need gamma in [0,1) and lambda in (0,1]".into()));
        }
        let groups = self.scenario.num_groups();
        if !self.urc.n_repe.is_empty() && self.urc.n_repe.len() != groups {
            return Err(HarnessError::Config(format!("urc.n_repe needs {groups} entries")));
        }
        self.sim_params()?;
        self.build_controller()?;
        Ok(())
    }

    fn controller_seed(&self) -> u64 {
        stream_seed(self.seed, u64::MAX, 99)
    }

    pub fn build_controller(&self) -> Result<AnyController, HarnessError> {
        let params = self.sim_params()?;
        let h = &self.hyper;
        let seed = self.controller_seed();
        let single = ActionSpace::Preamble(PreambleActions::default());
        Ok(match self.controller {
            ControllerKind::TabularQ => AnyController::Tabular(TabularQ::new(
                PreambleActions::default(),
                TdHyper { lambda: h.lambda, gamma: h.gamma, epsilon: h.epsilon(), eval_epsilon: h.eval_epsilon },
                seed,
            )),
            ControllerKind::LaQ | ControllerKind::AaLaQ => {
                let actions = if self.controller == ControllerKind::LaQ { single } else { ActionSpace::Aggregated };
                let mut c = crate::deep::LinearQController::new(actions, h.window, h.poly_degree, seed);
                c.lambda = h.lambda;
                c.gamma = h.gamma;
                c.epsilon = h.epsilon();
                c.eval_epsilon = h.eval_epsilon;
                AnyController::Linear(c)
            }
            ControllerKind::Dqn => AnyController::Dqn(DqnController::new(single, h.window, h.dqn(), seed)),
            ControllerKind::AaDqn => {
                AnyController::Dqn(DqnController::new(ActionSpace::Aggregated, h.window, h.dqn(), seed))
            }
            ControllerKind::CmaDqn => AnyController::Cma(CmaDqn::new(h.window, h.dqn(), seed)),
            ControllerKind::LeUrc | ControllerKind::FsiUrc => {
                let source =
                    if self.controller == ControllerKind::LeUrc { LoadSource::Estimated } else { LoadSource::FullState };
                let urc = match self.scenario {
                    Scenario::SingleGroup => {
                        let n_repe = self.urc.n_repe.first().copied().unwrap_or(4);
                        UrcController::single(source, self.urc.n_rach, n_repe, &params)?
                    }
                    Scenario::MultiGroup => {
                        let reps = if self.urc.n_repe.is_empty() { vec![1, 4, 8] } else { self.urc.n_repe.clone() };
                        let groups: Vec<(u32, u32)> = reps.iter().map(|&r| (self.urc.n_rach, r)).collect();
                        let share = params.r_uplink / groups.len() as u64;
                        UrcController::with_partition(source, &groups, &vec![share; groups.len()])?
                    }
                };
                AnyController::Urc(urc)
            }
        })
    }
}

/// Every controller the harness can run, as one cloneable type.
#[derive(Clone, Debug)]
pub enum AnyController {
    Urc(UrcController),
    Tabular(TabularQ),
    Linear(crate::deep::LinearQController),
    Dqn(DqnController),
    Cma(CmaDqn),
}

impl AnyController {
    fn inner(&self) -> &dyn Controller {
        match self {
            AnyController::Urc(c) => c,
            AnyController::Tabular(c) => c,
            AnyController::Linear(c) => c,
            AnyController::Dqn(c) => c,
            AnyController::Cma(c) => c,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Controller {
        match self {
            AnyController::Urc(c) => c,
            AnyController::Tabular(c) => c,
            AnyController::Linear(c) => c,
            AnyController::Dqn(c) => c,
            AnyController::Cma(c) => c,
        }
    }

    /// Current exploration rate while learning, if the controller explores.
    pub fn epsilon(&self) -> Option<f64> {
        match self {
            AnyController::Urc(_) => None,
            AnyController::Tabular(c) => Some(c.hyper.epsilon.value(c.steps())),
            AnyController::Linear(c) => Some(c.epsilon.value(c.steps())),
            AnyController::Dqn(c) => Some(c.agent.epsilon()),
            AnyController::Cma(c) => c.agents.first().map(|a| a.epsilon()),
        }
    }

    /// Writes one file per learned model into `dir`; returns the file names.
    pub fn save_checkpoints(&self, dir: &Path) -> Result<Vec<String>, HarnessError> {
        std::fs::create_dir_all(dir)?;
        let create = |name: &str| -> Result<BufWriter<File>, HarnessError> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
        let mut names = Vec::new();
        match self {
            AnyController::Urc(_) => {}
            AnyController::Tabular(c) => {
                c.table.save(create("qtable.bin")?)?;
                names.push("qtable.bin".into());
            }
            AnyController::Linear(c) => {
                c.model.save(create("linear.bin")?)?;
                names.push("linear.bin".into());
            }
            AnyController::Dqn(c) => {
                c.agent.save(create("dqn.bin")?)?;
                names.push("dqn.bin".into());
            }
            AnyController::Cma(c) => {
                for (k, a) in c.agents.iter().enumerate() {
                    let name = format!("agent_{k}.bin");
                    a.save(create(&name)?)?;
                    names.push(name);
                }
            }
        }
        Ok(names)
    }

    pub fn load_checkpoints(&mut self, dir: &Path) -> Result<(), HarnessError> {
        let open = |name: &str| -> Result<BufReader<File>, HarnessError> { Ok(BufReader::new(File::open(dir.join(name))?)) };
        match self {
            AnyController::Urc(_) => {}
            AnyController::Tabular(c) => c.table = QTable::load(open("qtable.bin")?)?,
            AnyController::Linear(c) => {
                let m = LinearQ::load(open("linear.bin")?)?;
                if m.w.dim() != c.model.w.dim() {
                    return Err(HarnessError::Config(format!("checkpoint shape {:?} vs {:?}", m.w.dim(), c.model.w.dim())));
                }
                c.model = m;
            }
            AnyController::Dqn(c) => c.agent.load_weights(open("dqn.bin")?)?,
            AnyController::Cma(c) => {
                for (k, a) in c.agents.iter_mut().enumerate() {
                    a.load_weights(open(&format!("agent_{k}.bin"))?)?;
                }
            }
        }
        Ok(())
    }
}

impl Controller for AnyController {
    fn name(&self) -> String {
        self.inner().name()
    }

    fn layout(&self) -> StateLayout {
        self.inner().layout()
    }

    fn begin_episode(&mut self, rng: &mut dyn RngCore) -> TtiConfig {
        self.inner_mut().begin_episode(rng)
    }

    fn act(&mut self, d: &Decision<'_>) -> TtiConfig {
        self.inner_mut().act(d)
    }

    fn observe(&mut self, fb: &Feedback<'_>) -> Result<(), AgentError> {
        self.inner_mut().observe(fb)
    }

    fn set_learning(&mut self, learning: bool) {
        self.inner_mut().set_learning(learning)
    }

    fn reseed(&mut self, seed: u64) {
        self.inner_mut().reseed(seed)
    }
}
