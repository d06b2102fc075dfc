//! RACH contention, retry bookkeeping and random-order data scheduling.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::phy;
use crate::types::{DeviceState, SimParams};

/// A device contending in one RACH period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Attempter {
    pub device: usize,
    /// Mean received preamble power, mW.
    pub rx_mw: f64,
}

/// How singleton preambles are detected.
#[derive(Clone, Copy, Debug)]
pub enum Detection<'a> {
    /// Every singleton preamble is detected.
    Ideal,
    /// Per-symbol-group Rayleigh fading against the SNR threshold.
    Rayleigh { params: &'a SimParams, n_repe: u32 },
}

impl Detection<'_> {
    fn detect<R: Rng + ?Sized>(&self, rx_mw: f64, rng: &mut R) -> bool {
        match *self {
            Detection::Ideal => true,
            Detection::Rayleigh { params, n_repe } => {
                phy::detect_with_rx_power(rx_mw, n_repe, params, rng)
            }
        }
    }
}

/// Preamble outcome counts as the eNB sees them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PreambleTally {
    pub collided: u32,
    pub success: u32,
    pub idle: u32,
}

impl PreambleTally {
    pub fn total(&self) -> u32 {
        self.collided + self.success + self.idle
    }
}

/// Result of one RACH period for one group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RachOutcome {
    pub succeeded: Vec<usize>,
    pub collided: Vec<usize>,
    /// Sole users of a preamble that the eNB failed to detect.
    pub undetected: Vec<usize>,
    pub tally: PreambleTally,
}

impl RachOutcome {
    pub fn attempts(&self) -> usize {
        self.succeeded.len() + self.collided.len() + self.undetected.len()
    }
}

/// Runs one slotted-Aloha RACH period: every attempter picks one of
/// `f_prea` preambles uniformly; shared preambles collide; a lone preamble
/// succeeds if detected. An undetected lone preamble is tallied as idle
/// because the eNB saw nothing on it.
pub fn run_rach_period<R: Rng + ?Sized>(
    attempters: &[Attempter],
    f_prea: u32,
    detection: Detection<'_>,
    rng: &mut R,
) -> RachOutcome {
    let f = f_prea as usize;
    let mut counts = vec![0u32; f];
    let choices: Vec<usize> = attempters
        .iter()
        .map(|_| {
            let c = rng.random_range(0..f);
            counts[c] += 1;
            c
        })
        .collect();

    let mut out = RachOutcome::default();
    for (a, &c) in attempters.iter().zip(&choices) {
        if counts[c] >= 2 {
            out.collided.push(a.device);
        } else if detection.detect(a.rx_mw, rng) {
            out.succeeded.push(a.device);
        } else {
            out.undetected.push(a.device);
        }
    }
    out.tally.collided = counts.iter().filter(|&&n| n >= 2).count() as u32;
    out.tally.success = out.succeeded.len() as u32;
    out.tally.idle = f_prea - out.tally.collided - out.tally.success;
    out
}

/// What a RACH result did to a device.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetryEffect {
    Connected,
    Retry,
    Escalated,
    /// Head packet dropped after too many attempts.
    Dropped,
}

/// Applies one RACH result to a device. `num_groups` bounds escalation.
pub fn update_retry_counters(
    device: &mut DeviceState,
    success: bool,
    params: &SimParams,
    num_groups: usize,
) -> RetryEffect {
    if success {
        device.c_pce = 0;
        device.c_pmax = 0;
        device.c_rrc = 0;
        device.rrc_connected = true;
        return RetryEffect::Connected;
    }
    device.c_pmax += 1;
    device.c_pce = (device.c_pce + 1).min(params.gamma_pce);
    if device.c_pmax >= params.gamma_pmax {
        device.backlog -= 1;
        device.reset_counters();
        return RetryEffect::Dropped;
    }
    if device.c_pce >= params.gamma_pce {
        if let Some(next) = device.ce_group.escalate().filter(|g| g.index() < num_groups) {
            device.ce_group = next;
            device.c_pce = 0;
            return RetryEffect::Escalated;
        }
    }
    RetryEffect::Retry
}

/// Outcome of scheduling one TTI's data channel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Schedule {
    pub served: Vec<usize>,
    pub unserved: Vec<usize>,
    pub used: u64,
}

/// Random-order scheduling: candidates `(device, cost)` are shuffled and
/// served in order until the next one no longer fits in `r_data`.
pub fn schedule_data<R: Rng + ?Sized>(
    candidates: &[(usize, u64)],
    r_data: u64,
    rng: &mut R,
) -> Schedule {
    let mut order = candidates.to_vec();
    order.shuffle(rng);
    let mut remaining = r_data;
    let fit = order
        .iter()
        .take_while(|&&(_, cost)| {
            let ok = cost <= remaining;
            if ok {
                remaining -= cost;
            }
            ok
        })
        .count();
    Schedule {
        served: order[..fit].iter().map(|&(d, _)| d).collect(),
        unserved: order[fit..].iter().map(|&(d, _)| d).collect(),
        used: r_data - remaining,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{CeGroup, TrafficKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn attempters(n: usize) -> Vec<Attempter> {
        (0..n).map(|device| Attempter { device, rx_mw: 1.0 }).collect()
    }

    #[test]
    fn forced_collision() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = run_rach_period(&attempters(2), 1, Detection::Ideal, &mut rng);
        assert_eq!(out.tally, PreambleTally { collided: 1, success: 0, idle: 0 });
        assert_eq!(out.collided.len(), 2);
    }

    #[test]
    fn empty_period_is_idle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = run_rach_period(&[], 12, Detection::Ideal, &mut rng);
        assert_eq!(out.tally.idle, 12);
        assert_eq!(out.attempts(), 0);
    }

    #[test]
    fn undetected_singleton_is_idle() {
        let params = SimParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let weak = [Attempter { device: 0, rx_mw: params.noise_mw * 1e-6 }];
        let out = run_rach_period(&weak, 12, Detection::Rayleigh { params: &params, n_repe: 1 }, &mut rng);
        assert_eq!(out.undetected, vec![0]);
        assert_eq!(out.tally, PreambleTally { collided: 0, success: 0, idle: 12 });
    }

    /// Brute-force oracle: enumerate random assignments directly.
    #[test]
    fn idle_and_singleton_means_n12_f12() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 100_000;
        let (mut idle, mut single) = (0.0, 0.0);
        let (mut idle2, mut single2) = (0.0, 0.0);
        for _ in 0..trials {
            let out = run_rach_period(&attempters(12), 12, Detection::Ideal, &mut rng);
            let i = f64::from(out.tally.idle);
            let s = f64::from(out.tally.success);
            idle += i;
            idle2 += i * i;
            single += s;
            single2 += s * s;
        }
        let n = trials as f64;
        let check = |sum: f64, sum2: f64, expected: f64| {
            let mean = sum / n;
            let sd = ((sum2 / n - mean * mean) / n).sqrt();
            assert!((mean - expected).abs() < 3.0 * sd, "mean {mean} expected {expected} sd {sd}");
        };
        check(idle, idle2, 12.0 * (11.0f64 / 12.0).powi(12));
        check(single, single2, 12.0 * (11.0f64 / 12.0).powi(11));
        assert!((12.0 * (11.0f64 / 12.0).powi(12) - 4.224).abs() < 1e-3);
        assert!((12.0 * (11.0f64 / 12.0).powi(11) - 4.608).abs() < 1e-3);
    }

    fn device() -> DeviceState {
        let mut d = DeviceState::new(5000.0, TrafficKind::Bursty, CeGroup::ALL[0]);
        d.backlog = 1;
        d
    }

    #[test]
    fn five_failures_escalate() {
        let p = SimParams::default();
        let mut d = device();
        let effects: Vec<_> = (0..5).map(|_| update_retry_counters(&mut d, false, &p, 3)).collect();
        assert_eq!(effects[4], RetryEffect::Escalated);
        assert_eq!(d.ce_group.index(), 1);
        assert_eq!((d.c_pce, d.c_pmax), (0, 5));
    }

    #[test]
    fn ten_failures_drop() {
        let p = SimParams::default();
        let mut d = device();
        let effects: Vec<_> = (0..10).map(|_| update_retry_counters(&mut d, false, &p, 3)).collect();
        assert_eq!(effects[9], RetryEffect::Dropped);
        assert_eq!(d.backlog, 0);
        assert_eq!((d.c_pce, d.c_pmax), (0, 0));
        assert_eq!(d.ce_group.index(), 0);
    }

    #[test]
    fn no_escalation_past_active_groups() {
        let p = SimParams::default();
        let mut d = device();
        for _ in 0..9 {
            update_retry_counters(&mut d, false, &p, 1);
        }
        assert_eq!(d.ce_group.index(), 0);
        assert!(d.c_pce <= p.gamma_pce);
    }

    #[test]
    fn success_resets() {
        let p = SimParams::default();
        let mut d = device();
        update_retry_counters(&mut d, false, &p, 3);
        assert_eq!(update_retry_counters(&mut d, true, &p, 3), RetryEffect::Connected);
        assert_eq!((d.c_pce, d.c_pmax), (0, 0));
        assert!(d.rrc_connected);
    }

    #[test]
    fn budget_limits_service() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cands: Vec<(usize, u64)> = (0..25).map(|d| (d, 128)).collect();
        let s = schedule_data(&cands, 1344, &mut rng);
        assert_eq!(s.served.len(), 10);
        assert_eq!(s.unserved.len(), 15);
        assert_eq!(s.used, 1280);

        let none = schedule_data(&cands, 0, &mut rng);
        assert!(none.served.is_empty());

        let slack = schedule_data(&cands[..3], 1344, &mut rng);
        assert_eq!((slack.served.len(), slack.unserved.len()), (3, 0));
    }

    #[test]
    fn scheduler_stops_at_first_misfit() {
        // Whatever the order, nothing after the first misfit is served.
        let cands = vec![(0, 100), (1, 900), (2, 100)];
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = schedule_data(&cands, 950, &mut rng);
            assert!(s.used <= 950);
            let cost = |d: usize| cands[d].1;
            if let Some(&first_unserved) = s.unserved.first() {
                assert!(cost(first_unserved) > 950 - s.used);
            }
        }
    }
}
