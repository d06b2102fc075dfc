//! Path loss, RSRP-based coverage group selection, preamble power control and
//! preamble detection under Rayleigh fading.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::types::{CeGroup, SimParams};

/// Symbol groups per preamble repetition.
pub const SYMBOL_GROUPS: u32 = 4;

/// Rayleigh power gain: unit-mean exponential.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelDraw(pub f64);

impl ChannelDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        ChannelDraw(Exp1.sample(rng))
    }
}

/// `u^-eta`.
pub fn path_gain(distance_m: f64, params: &SimParams) -> f64 {
    distance_m.powf(-params.path_loss_exponent)
}

/// Broadcast power received at `distance_m`, fading averaged out.
pub fn rsrp(distance_m: f64, params: &SimParams) -> f64 {
    params.npbch_power_mw * path_gain(distance_m, params)
}

/// Group 0 above the first threshold, group 2 below the second.
pub fn assign_ce_group(rsrp_mw: f64, thresholds: (f64, f64)) -> CeGroup {
    let (t1, t2) = thresholds;
    let idx = if rsrp_mw > t1 {
        0
    } else if rsrp_mw >= t2 {
        1
    } else {
        2
    };
    CeGroup::ALL[idx]
}

/// Preamble transmit power: group 0 inverts path loss up to `P_RACHmax`,
/// higher groups always transmit at `P_RACHmax`.
pub fn preamble_tx_power(group: CeGroup, distance_m: f64, params: &SimParams) -> f64 {
    if group.index() == 0 {
        let inverted = params.rx_target_mw() / path_gain(distance_m, params);
        inverted.min(params.p_rach_max_mw)
    } else {
        params.p_rach_max_mw
    }
}

/// Mean received preamble power (before fading).
pub fn preamble_rx_power(group: CeGroup, distance_m: f64, params: &SimParams) -> f64 {
    preamble_tx_power(group, distance_m, params) * path_gain(distance_m, params)
}

/// Smallest fading gain that still decodes a symbol group received at mean
/// power `rx_mw`.
pub fn min_fading_gain(rx_mw: f64, params: &SimParams) -> f64 {
    params.snr_threshold * params.noise_mw / rx_mw
}

/// Detection with a known mean received power: succeeds iff some repetition
/// has all four symbol groups above the SNR threshold, each symbol group
/// seeing its own fading draw.
pub fn detect_with_rx_power<R: Rng + ?Sized>(
    rx_mw: f64,
    n_repe: u32,
    params: &SimParams,
    rng: &mut R,
) -> bool {
    let h_min = min_fading_gain(rx_mw, params);
    (0..n_repe).any(|_| (0..SYMBOL_GROUPS).all(|_| ChannelDraw::sample(rng).0 >= h_min))
}

pub fn detect_preamble<R: Rng + ?Sized>(
    group: CeGroup,
    distance_m: f64,
    n_repe: u32,
    params: &SimParams,
    rng: &mut R,
) -> bool {
    detect_with_rx_power(preamble_rx_power(group, distance_m, params), n_repe, params, rng)
}

/// Closed-form detection probability, `1 - (1 - p^4)^n_repe` with
/// `p = exp(-gamma_th * sigma^2 / P_rx)`.
pub fn detection_probability(rx_mw: f64, n_repe: u32, params: &SimParams) -> f64 {
    let p = (-min_fading_gain(rx_mw, params)).exp();
    1.0 - (1.0 - p.powi(SYMBOL_GROUPS as i32)).powi(n_repe as i32)
}
