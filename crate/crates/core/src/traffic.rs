//! Packet arrival processes.
//!
//! Time inside a TTI is split into [`TICKS_PER_TTI`] ticks, the common
//! refinement of every legal RACH-period grid (1, 2 or 4 periods per TTI).
//! Arrivals are generated per tick and released at the first RACH period
//! boundary at or after the end of their tick, so the arrival process does
//! not depend on the configuration a controller picks.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::ConfigError;
use crate::types::SimParams;

/// Ticks per TTI; every legal `n_rach` divides it.
pub const TICKS_PER_TTI: u32 = 4;

/// Quadrature tolerance for bursty-profile integrals.
pub const QUAD_TOL: f64 = 1e-9;

/// Packet probability per device per RACH period for periodic traffic.
pub fn periodic_rate(n_rach: u32, params: &SimParams) -> f64 {
    (params.t_tti_ms / f64::from(n_rach)) / params.t_periodic_ms
}

/// Time-limited Beta arrival-intensity profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaProfile {
    alpha: f64,
    beta: f64,
    t_bursty_ms: f64,
    tau0_ms: f64,
    norm: f64,
}

impl BetaProfile {
    /// Shapes below 1 make the density unbounded at the window edges and are
    /// rejected.
    pub fn new(alpha: f64, beta: f64, t_bursty_ms: f64, tau0_ms: f64) -> Result<Self, ConfigError> {
        if !(alpha >= 1.0 && beta >= 1.0) {
            return Err(ConfigError::Other(format!(
                "Beta profile shapes must be >= 1, got ({alpha}, {beta})"
            )));
        }
        if !(t_bursty_ms > 0.0) {
            return Err(ConfigError::NotPositive("t_bursty_ms"));
        }
        let norm = t_bursty_ms.powf(alpha + beta - 1.0) * statrs::function::beta::beta(alpha, beta);
        Ok(BetaProfile { alpha, beta, t_bursty_ms, tau0_ms, norm })
    }

    pub fn from_params(params: &SimParams) -> Result<Self, ConfigError> {
        BetaProfile::new(params.bursty_alpha, params.bursty_beta, params.t_bursty_ms, params.tau0_ms)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn window(&self) -> (f64, f64) {
        (self.tau0_ms, self.tau0_ms + self.t_bursty_ms)
    }

    /// Arrival density per ms at absolute time `tau_ms`; zero outside the window.
    pub fn pdf(&self, tau_ms: f64) -> f64 {
        let x = tau_ms - self.tau0_ms;
        if x < 0.0 || x > self.t_bursty_ms {
            return 0.0;
        }
        x.powf(self.alpha - 1.0) * (self.t_bursty_ms - x).powf(self.beta - 1.0) / self.norm
    }

    /// Expected packets per device over `[a_ms, b_ms)`.
    pub fn mass(&self, a_ms: f64, b_ms: f64) -> f64 {
        let (lo, hi) = self.window();
        let a = a_ms.max(lo);
        let b = b_ms.min(hi);
        if b <= a {
            return 0.0;
        }
        adaptive_simpson(&|t| self.pdf(t), a, b, QUAD_TOL)
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Expected bursty packets per device in RACH period `j` (0-based) of TTI `t`
/// when the TTI holds `n_rach` periods.
pub fn bursty_rate(j: u32, t: u32, profile: &BetaProfile, n_rach: u32, t_tti_ms: f64) -> f64 {
    let period = t_tti_ms / f64::from(n_rach);
    let start = f64::from(t) * t_tti_ms + f64::from(j) * period;
    profile.mass(start, start + period)
}

/// Per-tick bursty masses for one episode, computed once per profile.
#[derive(Clone, Debug)]
pub struct BurstyTable {
    tick_mass: Vec<f64>,
}

impl BurstyTable {
    pub fn new(profile: &BetaProfile, t_tti_ms: f64, horizon: u32) -> Self {
        let tick = t_tti_ms / f64::from(TICKS_PER_TTI);
        let tick_mass = (0..horizon * TICKS_PER_TTI)
            .map(|q| {
                let a = f64::from(q) * tick;
                profile.mass(a, a + tick)
            })
            .collect();
        BurstyTable { tick_mass }
    }

    pub fn tick_mass(&self, tti: u32, tick: u32) -> f64 {
        self.tick_mass
            .get((tti * TICKS_PER_TTI + tick) as usize)
            .copied()
            .unwrap_or(0.0)
    }

    /// Cached equivalent of [`bursty_rate`].
    pub fn period_mass(&self, tti: u32, n_rach: u32, j: u32) -> f64 {
        let per = TICKS_PER_TTI / n_rach;
        (j * per..(j + 1) * per).map(|q| self.tick_mass(tti, q)).sum()
    }

    pub fn total(&self) -> f64 {
        self.tick_mass.iter().sum()
    }
}

/// One packet arrival: the device and the tick (within the TTI) it arrived in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Arrival {
    pub tick: u32,
    pub device: usize,
}

/// Arrival generator for a fixed device population.
#[derive(Clone, Debug)]
pub struct TrafficGenerator {
    periodic: Vec<usize>,
    bursty: Vec<usize>,
    next_periodic_ms: Vec<f64>,
    t_periodic_ms: f64,
    t_tti_ms: f64,
    table: BurstyTable,
}

impl TrafficGenerator {
    pub fn new(periodic: Vec<usize>, bursty: Vec<usize>, table: BurstyTable, params: &SimParams) -> Self {
        let n = periodic.len();
        TrafficGenerator {
            periodic,
            bursty,
            next_periodic_ms: vec![0.0; n],
            t_periodic_ms: params.t_periodic_ms,
            t_tti_ms: params.t_tti_ms,
            table,
        }
    }

    pub fn table(&self) -> &BurstyTable {
        &self.table
    }

    /// Draws fresh periodic phases, uniform over one period.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for next in &mut self.next_periodic_ms {
            *next = rng.random::<f64>() * self.t_periodic_ms;
        }
    }

    /// Appends this TTI's arrivals to `out`, sorted by tick.
    pub fn arrivals<R: Rng + ?Sized>(&mut self, tti: u32, rng: &mut R, out: &mut Vec<Arrival>) {
        let start = out.len();
        let tick_ms = self.t_tti_ms / f64::from(TICKS_PER_TTI);
        let tti_start = f64::from(tti) * self.t_tti_ms;
        let tti_end = tti_start + self.t_tti_ms;

        for (slot, &device) in self.periodic.iter().enumerate() {
            let next = &mut self.next_periodic_ms[slot];
            while *next < tti_end {
                let tick = (((*next - tti_start) / tick_ms).floor().max(0.0) as u32).min(TICKS_PER_TTI - 1);
                out.push(Arrival { tick, device });
                *next += self.t_periodic_ms;
            }
        }

        let n = self.bursty.len();
        if n > 0 {
            for tick in 0..TICKS_PER_TTI {
                let p = self.table.tick_mass(tti, tick).clamp(0.0, 1.0);
                if p <= 0.0 {
                    continue;
                }
                // Independent per-device Bernoulli draws, sampled as a
                // binomial count plus a uniform subset.
                let k = Binomial::new(n as u64, p).expect("p in [0,1]").sample(rng) as usize;
                for i in index::sample(rng, n, k) {
                    out.push(Arrival { tick, device: self.bursty[i] });
                }
            }
        }
        out[start..].sort_unstable();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn profile() -> BetaProfile {
        BetaProfile::new(3.0, 4.0, 600_000.0, 0.0).unwrap()
    }

    #[test]
    fn periodic_rate_values() {
        let p = SimParams::default();
        assert!((periodic_rate(1, &p) - 1.777_777_777_8e-4).abs() < 1e-12);
        assert!((periodic_rate(2, &p) - 8.888_888_888_9e-5).abs() < 1e-12);
        let slow = SimParams { t_periodic_ms: 1e300, ..SimParams::default() };
        assert!(periodic_rate(1, &slow) < 1e-290);
    }

    #[test]
    fn profile_normalized() {
        let p = profile();
        assert!((p.mass(-10.0, 700_000.0) - 1.0).abs() < 1e-6);
        let b = BetaProfile::new(5.0, 6.0, 600_000.0, 1000.0).unwrap();
        assert!((b.mass(0.0, 602_000.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn profile_peak_at_mode() {
        let p = profile();
        let mode = 0.4 * 600_000.0;
        let peak = p.pdf(mode);
        for dx in [-1000.0, -10.0, 10.0, 1000.0] {
            assert!(p.pdf(mode + dx) < peak);
        }
    }

    #[test]
    fn outside_window_is_zero() {
        let p = BetaProfile::new(3.0, 4.0, 6400.0, 6400.0).unwrap();
        assert_eq!(bursty_rate(0, 0, &p, 1, 640.0), 0.0);
        assert_eq!(bursty_rate(0, 30, &p, 1, 640.0), 0.0);
        assert!(bursty_rate(0, 12, &p, 1, 640.0) > 0.0);
    }

    #[test]
    fn period_rates_sum_to_one() {
        let p = profile();
        let horizon = 938;
        for n_rach in [1, 2, 4] {
            let total: f64 = (0..horizon)
                .flat_map(|t| (0..n_rach).map(move |j| (t, j)))
                .map(|(t, j)| bursty_rate(j, t, &p, n_rach, 640.0))
                .sum();
            assert!((total - 1.0).abs() < 1e-6, "n_rach={n_rach} total={total}");
        }
    }

    #[test]
    fn table_matches_direct_integral() {
        let p = profile();
        let table = BurstyTable::new(&p, 640.0, 937);
        for (t, n, j) in [(0, 1, 0), (375, 2, 1), (500, 4, 3), (936, 1, 0)] {
            let direct = bursty_rate(j, t, &p, n, 640.0);
            assert!((table.period_mass(t, n, j) - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn shapes_below_one_rejected() {
        assert!(BetaProfile::new(0.5, 4.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn periodic_devices_fire_once_per_period() {
        let params = SimParams { t_periodic_ms: 6400.0, ..SimParams::default() };
        let p = profile();
        let table = BurstyTable::new(&p, 640.0, 100);
        let mut gen = TrafficGenerator::new((0..50).collect(), vec![], table, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        gen.reset(&mut rng);
        let mut counts = vec![0u32; 50];
        let mut out = Vec::new();
        for t in 0..100 {
            out.clear();
            gen.arrivals(t, &mut rng, &mut out);
            for a in &out {
                counts[a.device] += 1;
            }
        }
        // 64 s horizon / 6.4 s period = 10 packets each.
        assert!(counts.iter().all(|&c| c == 10), "{counts:?}");
    }
}
