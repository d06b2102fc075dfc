//! Shared domain vocabulary: coverage groups, the per-TTI configuration
//! (the controller's action), the per-TTI observation and the simulation
//! parameters.
//!
//! Every power, threshold and distance in [`SimParams`] is held in linear
//! units (mW, plain ratios, meters). Conversions from dB/dBm happen once, in
//! [`db_to_linear`] / [`dbm_to_mw`], when parameters are built.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Number of coverage-enhancement groups a cell supports.
pub const NUM_GROUPS: usize = 3;

/// Legal numbers of RACH periods per TTI.
pub const N_RACH: [u32; 3] = [1, 2, 4];
/// Legal repetition values.
pub const N_REPE: [u32; 6] = [1, 2, 4, 8, 16, 32];
/// Legal numbers of preambles per RACH period.
pub const F_PREA: [u32; 4] = [12, 24, 36, 48];

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

/// Coverage-enhancement group. Group 0 has the best coverage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CeGroup(u8);

impl CeGroup {
    pub const ALL: [CeGroup; NUM_GROUPS] = [CeGroup(0), CeGroup(1), CeGroup(2)];

    pub fn new(index: usize) -> Result<Self, ConfigError> {
        if index < NUM_GROUPS {
            Ok(CeGroup(index as u8))
        } else {
            Err(ConfigError::InvalidGroup(index))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// The next group up, if there is one.
    pub fn escalate(self) -> Option<CeGroup> {
        (self.index() + 1 < NUM_GROUPS).then(|| CeGroup(self.0 + 1))
    }
}

/// Traffic profile of a device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrafficKind {
    Periodic,
    Bursty,
}

/// State of one IoT device.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceState {
    pub distance_m: f64,
    pub traffic_kind: TrafficKind,
    /// Queued packets, including the head packet currently being served.
    pub backlog: u32,
    /// Group assigned from RSRP, restored whenever a head packet starts afresh.
    pub home_group: CeGroup,
    /// Group the device is currently attempting in.
    pub ce_group: CeGroup,
    /// RACH attempts within the current group.
    pub c_pce: u32,
    /// RACH attempts for the head packet.
    pub c_pmax: u32,
    /// TTIs spent RRC-connected without being scheduled.
    pub c_rrc: u32,
    pub rrc_connected: bool,
}

impl DeviceState {
    pub fn new(distance_m: f64, traffic_kind: TrafficKind, group: CeGroup) -> Self {
        DeviceState {
            distance_m,
            traffic_kind,
            backlog: 0,
            home_group: group,
            ce_group: group,
            c_pce: 0,
            c_pmax: 0,
            c_rrc: 0,
            rrc_connected: false,
        }
    }

    /// Clears retry counters and returns the device to its home group.
    pub fn reset_counters(&mut self) {
        self.c_pce = 0;
        self.c_pmax = 0;
        self.c_rrc = 0;
        self.ce_group = self.home_group;
    }

    pub fn wants_rach(&self) -> bool {
        self.backlog > 0 && !self.rrc_connected
    }
}

/// RACH/repetition/preamble triple for one group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupConfig {
    n_rach: u32,
    n_repe: u32,
    f_prea: u32,
}

impl GroupConfig {
    pub fn new(n_rach: u32, n_repe: u32, f_prea: u32) -> Result<Self, ConfigError> {
        if !N_RACH.contains(&n_rach) {
            return Err(ConfigError::IllegalValue { field: "n_rach", value: n_rach });
        }
        if !N_REPE.contains(&n_repe) {
            return Err(ConfigError::IllegalValue { field: "n_repe", value: n_repe });
        }
        if !F_PREA.contains(&f_prea) {
            return Err(ConfigError::IllegalValue { field: "f_prea", value: f_prea });
        }
        Ok(GroupConfig { n_rach, n_repe, f_prea })
    }

    /// Builds a config from indices into [`N_RACH`], [`N_REPE`], [`F_PREA`].
    pub fn from_indices(rach: usize, repe: usize, prea: usize) -> Result<Self, ConfigError> {
        let pick = |set: &[u32], i: usize, field: &'static str| {
            set.get(i).copied().ok_or(ConfigError::IllegalValue { field, value: i as u32 })
        };
        GroupConfig::new(
            pick(&N_RACH, rach, "n_rach index")?,
            pick(&N_REPE, repe, "n_repe index")?,
            pick(&F_PREA, prea, "f_prea index")?,
        )
    }

    /// The smallest legal configuration `(1, 1, 12)`.
    pub fn minimal() -> Self {
        GroupConfig { n_rach: N_RACH[0], n_repe: N_REPE[0], f_prea: F_PREA[0] }
    }

    pub fn n_rach(&self) -> u32 {
        self.n_rach
    }

    pub fn n_repe(&self) -> u32 {
        self.n_repe
    }

    pub fn f_prea(&self) -> u32 {
        self.f_prea
    }

    /// Indices of the three values in their legal sets.
    pub fn indices(&self) -> [usize; 3] {
        let pos = |set: &[u32], v: u32| set.iter().position(|&x| x == v).expect("validated");
        [pos(&N_RACH, self.n_rach), pos(&N_REPE, self.n_repe), pos(&F_PREA, self.f_prea)]
    }

    /// Preamble opportunities per TTI (the RAO count).
    pub fn opportunities(&self) -> u32 {
        self.n_rach * self.f_prea
    }

    /// REs needed to serve one device of this group.
    pub fn data_cost(&self, b_data: u32) -> u64 {
        u64::from(b_data) * u64::from(self.n_repe)
    }

    fn rach_cost(&self, b_rach: u32) -> u64 {
        u64::from(b_rach)
            * u64::from(self.n_rach)
            * u64::from(self.n_repe)
            * u64::from(self.f_prea)
    }
}

/// The controller's action for one TTI: a [`GroupConfig`] for each active
/// group. Groups are a prefix: one active group means only group 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TtiConfig {
    groups: [GroupConfig; NUM_GROUPS],
    active: u8,
}

impl TtiConfig {
    pub fn new(groups: &[GroupConfig]) -> Result<Self, ConfigError> {
        if groups.is_empty() || groups.len() > NUM_GROUPS {
            return Err(ConfigError::GroupCount(groups.len()));
        }
        let mut all = [GroupConfig::minimal(); NUM_GROUPS];
        all[..groups.len()].copy_from_slice(groups);
        Ok(TtiConfig { groups: all, active: groups.len() as u8 })
    }

    pub fn single(group: GroupConfig) -> Self {
        TtiConfig::new(&[group]).expect("one group is always legal")
    }

    pub fn groups(&self) -> &[GroupConfig] {
        &self.groups[..self.active as usize]
    }

    pub fn num_groups(&self) -> usize {
        self.active as usize
    }

    pub fn group(&self, g: CeGroup) -> Option<&GroupConfig> {
        self.groups().get(g.index())
    }

    /// Returns a copy with group `g` replaced.
    pub fn with_group(&self, g: usize, cfg: GroupConfig) -> Self {
        let mut out = *self;
        assert!(g < self.num_groups(), "group {g} is not active");
        out.groups[g] = cfg;
        out
    }
}

/// REs consumed by the RACH: `B_RACH * sum(n_rach * n_repe * f_prea)`.
pub fn rach_resource_cost(cfg: &TtiConfig, b_rach: u32) -> u64 {
    cfg.groups().iter().map(|g| g.rach_cost(b_rach)).sum()
}

/// REs left for data once the RACH is provisioned.
pub fn data_resource_budget(cfg: &TtiConfig, params: &SimParams) -> Result<u64, ConfigError> {
    let rach = rach_resource_cost(cfg, params.b_rach);
    params
        .r_uplink
        .checked_sub(rach)
        .ok_or(ConfigError::OverBudget { rach, uplink: params.r_uplink })
}

/// Per-group feedback counters the eNB measures over one TTI.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupObservation {
    /// Preambles chosen by two or more devices.
    pub collided: u32,
    /// Preambles received from exactly one device and detected.
    pub success: u32,
    /// Preambles the eNB saw no signal on.
    pub idle: u32,
    /// Devices whose data was served.
    pub served: u32,
    /// RRC-connected devices left unscheduled (still connected).
    pub unserved: u32,
}

impl GroupObservation {
    pub fn preambles(&self) -> u32 {
        self.collided + self.success + self.idle
    }

    pub fn as_array(&self) -> [u32; 5] {
        [self.served, self.unserved, self.collided, self.success, self.idle]
    }
}

/// Feedback for one TTI. Inactive groups stay zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtiObservation {
    pub groups: [GroupObservation; NUM_GROUPS],
}

impl TtiObservation {
    pub fn total_served(&self) -> u32 {
        self.groups.iter().map(|g| g.served).sum()
    }
}

/// How the group-0 path-loss inversion target is specified.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PowerControl {
    /// Largest path loss (linear ratio) that is fully inverted; the received
    /// target is `P_RACHmax / max_path_loss`.
    MaxPathLoss(f64),
    /// Received power target in mW.
    ReceivedTarget(f64),
}

/// Physical and protocol parameters of a cell, in linear units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub path_loss_exponent: f64,
    pub noise_mw: f64,
    pub npbch_power_mw: f64,
    pub power_control: PowerControl,
    pub p_rach_max_mw: f64,
    pub snr_threshold: f64,
    pub t_periodic_ms: f64,
    pub t_tti_ms: f64,
    pub t_bursty_ms: f64,
    /// Start of the bursty window relative to episode start.
    pub tau0_ms: f64,
    pub gamma_rrc: u32,
    pub gamma_pmax: u32,
    pub gamma_pce: u32,
    pub bursty_alpha: f64,
    pub bursty_beta: f64,
    pub b_rach: u32,
    pub b_data: u32,
    pub r_uplink: u64,
    /// Absolute RSRP thresholds (mW), `rsrp_thresholds.0 > rsrp_thresholds.1`.
    pub rsrp_thresholds: (f64, f64),
    pub cell_radius_m: f64,
    pub min_distance_m: f64,
    pub n_periodic: usize,
    pub n_bursty: usize,
    /// Queue limit per device; `None` is unbounded.
    pub backlog_cap: Option<u32>,
    /// Whether a device failing in RACH period `j` may retry in `j + 1` of the same TTI.
    pub intra_tti_retry: bool,
    /// When false every singleton preamble is detected.
    pub snr_detection: bool,
    pub seed: u64,
}

/// Defaults of the dB-valued parameters, kept here so config parsing and
/// [`SimParams::default`] agree.
pub mod defaults {
    pub const PATH_LOSS_EXPONENT: f64 = 4.0;
    pub const NOISE_DBM: f64 = -138.0;
    pub const NPBCH_DBM: f64 = 35.0;
    pub const RHO_DB: f64 = 120.0;
    pub const P_RACH_MAX_DBM: f64 = 23.0;
    pub const SNR_THRESHOLD_DB: f64 = 0.0;
    pub const RSRP1_DB: f64 = 0.0;
    pub const RSRP2_DB: f64 = -5.0;
    /// Absolute level the RSRP thresholds are quoted against: the noise in
    /// one 15 kHz NPBCH resource element (-138 dBm + 6.02 dB) with the
    /// broadcast power spread over 12 subcarriers (+10.79 dB).
    pub const RSRP_REFERENCE_DBM: f64 = -121.19;
}

impl Default for SimParams {
    fn default() -> Self {
        use defaults::*;
        SimParams {
            path_loss_exponent: PATH_LOSS_EXPONENT,
            noise_mw: dbm_to_mw(NOISE_DBM),
            npbch_power_mw: dbm_to_mw(NPBCH_DBM),
            power_control: PowerControl::MaxPathLoss(db_to_linear(RHO_DB)),
            p_rach_max_mw: dbm_to_mw(P_RACH_MAX_DBM),
            snr_threshold: db_to_linear(SNR_THRESHOLD_DB),
            t_periodic_ms: 3_600_000.0,
            t_tti_ms: 640.0,
            t_bursty_ms: 600_000.0,
            tau0_ms: 0.0,
            gamma_rrc: 5,
            gamma_pmax: 10,
            gamma_pce: 5,
            bursty_alpha: 3.0,
            bursty_beta: 4.0,
            b_rach: 4,
            b_data: 32,
            r_uplink: 1536,
            rsrp_thresholds: (
                dbm_to_mw(RSRP_REFERENCE_DBM + RSRP1_DB),
                dbm_to_mw(RSRP_REFERENCE_DBM + RSRP2_DB),
            ),
            cell_radius_m: 10_000.0,
            min_distance_m: 1.0,
            n_periodic: 10_000,
            n_bursty: 5_000,
            backlog_cap: None,
            intra_tti_retry: true,
            snr_detection: true,
            seed: 0,
        }
    }
}

impl SimParams {
    /// Multi-group cell of the full-scale setup: 12 km radius, 15360 REs,
    /// 30000 + 30000 devices.
    pub fn multi_group() -> Self {
        SimParams {
            cell_radius_m: 12_000.0,
            r_uplink: 15_360,
            n_periodic: 30_000,
            n_bursty: 30_000,
            ..SimParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("path_loss_exponent", self.path_loss_exponent),
            ("noise_mw", self.noise_mw),
            ("npbch_power_mw", self.npbch_power_mw),
            ("p_rach_max_mw", self.p_rach_max_mw),
            ("snr_threshold", self.snr_threshold),
            ("t_periodic_ms", self.t_periodic_ms),
            ("t_tti_ms", self.t_tti_ms),
            ("t_bursty_ms", self.t_bursty_ms),
            ("bursty_alpha", self.bursty_alpha),
            ("bursty_beta", self.bursty_beta),
            ("cell_radius_m", self.cell_radius_m),
            ("min_distance_m", self.min_distance_m),
            ("rsrp_threshold1", self.rsrp_thresholds.0),
            ("rsrp_threshold2", self.rsrp_thresholds.1),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::NotPositive(name));
            }
        }
        match self.power_control {
            PowerControl::MaxPathLoss(x) | PowerControl::ReceivedTarget(x) if x > 0.0 => {}
            _ => return Err(ConfigError::NotPositive("power_control")),
        }
        if self.rsrp_thresholds.0 <= self.rsrp_thresholds.1 {
            return Err(ConfigError::ThresholdOrder);
        }
        if self.gamma_pce == 0 || self.gamma_pmax == 0 || self.gamma_rrc == 0 {
            return Err(ConfigError::NotPositive("retry limits"));
        }
        if self.b_rach == 0 || self.b_data == 0 || self.r_uplink == 0 {
            return Err(ConfigError::NotPositive("resource sizes"));
        }
        if self.min_distance_m >= self.cell_radius_m {
            return Err(ConfigError::NotPositive("cell_radius_m - min_distance_m"));
        }
        Ok(())
    }

    /// Received-power target for group-0 path-loss inversion, in mW.
    pub fn rx_target_mw(&self) -> f64 {
        match self.power_control {
            PowerControl::MaxPathLoss(pl) => self.p_rach_max_mw / pl,
            PowerControl::ReceivedTarget(p) => p,
        }
    }

    /// Largest per-TTI service count any configuration could reach.
    pub fn default_c_su(&self) -> f64 {
        (self.r_uplink / (u64::from(self.b_data) * u64::from(N_REPE[0]))) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rach_cost_single_group() {
        let cfg = TtiConfig::single(GroupConfig::new(1, 4, 12).unwrap());
        assert_eq!(rach_resource_cost(&cfg, 4), 192);
    }

    #[test]
    fn rach_cost_minimal_three_groups() {
        let g = GroupConfig::minimal();
        let cfg = TtiConfig::new(&[g, g, g]).unwrap();
        assert_eq!(rach_resource_cost(&cfg, 4), 144);
    }

    #[test]
    fn empty_config_rejected() {
        assert_eq!(TtiConfig::new(&[]), Err(ConfigError::GroupCount(0)));
        let g = GroupConfig::minimal();
        assert!(TtiConfig::new(&[g; 4]).is_err());
    }

    #[test]
    fn illegal_values_rejected() {
        assert!(GroupConfig::new(3, 4, 12).is_err());
        assert!(GroupConfig::new(1, 0, 12).is_err());
        assert!(GroupConfig::new(1, 4, 13).is_err());
        assert!(GroupConfig::from_indices(0, 6, 0).is_err());
    }

    #[test]
    fn data_budget() {
        let params = SimParams::default();
        let cfg = TtiConfig::single(GroupConfig::new(1, 4, 12).unwrap());
        assert_eq!(data_resource_budget(&cfg, &params).unwrap(), 1344);

        // 1 * 32 * 12 * 4 = 1536: the whole uplink.
        let full = TtiConfig::single(GroupConfig::new(1, 32, 12).unwrap());
        assert_eq!(data_resource_budget(&full, &params).unwrap(), 0);

        let over = TtiConfig::single(GroupConfig::new(2, 32, 12).unwrap());
        assert!(matches!(
            data_resource_budget(&over, &params),
            Err(ConfigError::OverBudget { rach: 3072, uplink: 1536 })
        ));
    }

    #[test]
    fn indices_round_trip() {
        for r in 0..3 {
            for p in 0..6 {
                for f in 0..4 {
                    let g = GroupConfig::from_indices(r, p, f).unwrap();
                    assert_eq!(g.indices(), [r, p, f]);
                }
            }
        }
    }

    #[test]
    fn defaults_valid() {
        SimParams::default().validate().unwrap();
        SimParams::multi_group().validate().unwrap();
        let mut p = SimParams::default();
        p.rsrp_thresholds = (1.0, 2.0);
        assert_eq!(p.validate(), Err(ConfigError::ThresholdOrder));
    }

    #[test]
    fn power_control_target() {
        let p = SimParams::default();
        // 23 dBm - 120 dB = -97 dBm
        assert!((linear_to_db(p.rx_target_mw()) + 97.0).abs() < 1e-9);
    }

    #[test]
    fn escalation_stops_at_top_group() {
        assert_eq!(CeGroup::ALL[0].escalate(), Some(CeGroup::ALL[1]));
        assert_eq!(CeGroup::ALL[2].escalate(), None);
    }
}
