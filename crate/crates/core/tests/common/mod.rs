//! Bookkeeping invariants shared by the conservation tests and the
//! acceptance run.

use nbiot_core::env::{EpisodeConfig, NbIotEnv, Scenario, StateLayout};
use nbiot_core::types::{
    data_resource_budget, rach_resource_cost, GroupConfig, SimParams, TtiConfig, F_PREA, NUM_GROUPS, N_RACH, N_REPE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

macro_rules! ensure {
    ($cond:expr) => {
        if !$cond {
            return Err(format!("{} failed at {}:{}", stringify!($cond), file!(), line!()));
        }
    };
}

macro_rules! ensure_eq {
    ($a:expr, $b:expr) => {{
        let (a, b) = (&$a, &$b);
        if a != b {
            return Err(format!("{} = {:?} but {} = {:?} at {}:{}", stringify!($a), a, stringify!($b), b, file!(), line!()));
        }
    }};
}

/// A uniformly drawn configuration that fits the uplink budget.
pub fn random_action<R: Rng>(groups: usize, params: &SimParams, rng: &mut R) -> TtiConfig {
    loop {
        let cfgs: Vec<GroupConfig> = (0..groups)
            .map(|_| {
                GroupConfig::new(
                    N_RACH[rng.random_range(0..N_RACH.len())],
                    N_REPE[rng.random_range(0..N_REPE.len())],
                    F_PREA[rng.random_range(0..F_PREA.len())],
                )
                .unwrap()
            })
            .collect();
        let cfg = TtiConfig::new(&cfgs).unwrap();
        if data_resource_budget(&cfg, params).is_ok() {
            return cfg;
        }
    }
}

fn fuzz_params<R: Rng>(scenario: Scenario, rng: &mut R) -> SimParams {
    let base = match scenario {
        Scenario::SingleGroup => SimParams::default(),
        Scenario::MultiGroup => SimParams::multi_group(),
    };
    SimParams {
        n_periodic: rng.random_range(0..400),
        n_bursty: rng.random_range(0..1200),
        seed: rng.random(),
        backlog_cap: if rng.random_bool(0.5) { Some(rng.random_range(1..4)) } else { None },
        intra_tti_retry: rng.random_bool(0.5),
        snr_detection: rng.random_bool(0.8),
        ..base
    }
}

/// Checks every per-TTI invariant over one episode of random actions.
pub fn check_episode(scenario: Scenario, seed: u64, horizon: u32) -> Result<u32, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = fuzz_params(scenario, &mut rng);
    let groups = scenario.num_groups();
    let mut cfg = EpisodeConfig::new(scenario, &params, StateLayout::new(2, groups > 1, groups));
    cfg.horizon = horizon;
    let mut env = NbIotEnv::new(params.clone(), cfg).unwrap();
    env.reset(seed, None);

    let backlog = |env: &NbIotEnv| env.devices().iter().map(|d| u64::from(d.backlog)).sum::<u64>();
    let connected = |env: &NbIotEnv| {
        let mut c = [0u32; NUM_GROUPS];
        for d in env.devices().iter().filter(|d| d.rrc_connected) {
            c[d.ce_group.index()] += 1;
        }
        c
    };
    let mut queued = backlog(&env);
    let mut ttis = 0;
    while !env.done() {
        ttis += 1;
        let before = connected(&env);
        let action = random_action(groups, &params, &mut rng);
        let step = env.step(&action).unwrap();
        let info = &step.info;

        // Every preamble ends up idle, singleton or collided.
        for (g, gc) in action.groups().iter().enumerate() {
            let o = step.observation.groups[g];
            ensure_eq!(o.idle + o.success + o.collided, gc.f_prea() * gc.n_rach());
        }
        for o in &step.observation.groups[groups..] {
            ensure_eq!(*o, nbiot_core::types::GroupObservation::default());
        }

        // Resource elements.
        ensure_eq!(info.rach_res, rach_resource_cost(&action, params.b_rach));
        ensure_eq!(info.rach_res + info.data_budget, params.r_uplink);
        ensure!(info.data_used <= info.data_budget);

        // Connected devices are served, kept, or expire.
        for g in 0..groups {
            let o = step.observation.groups[g];
            ensure_eq!(before[g], info.carried_over[g]);
            ensure_eq!(info.carried_over[g] + info.new_connections[g], o.served + o.unserved + info.expired[g]);
            ensure!(info.new_connections[g] <= o.success);
        }
        // A device escalating mid-TTI is counted under its first group only.
        ensure!(info.attempters.iter().sum::<u32>() >= info.new_connections.iter().sum::<u32>());
        ensure_eq!(connected(&env).iter().sum::<u32>(), step.observation.groups.iter().map(|o| o.unserved).sum::<u32>());

        // Packets.
        let served: u64 = step.observation.groups.iter().map(|o| u64::from(o.served)).sum();
        let drops: u64 = info.drops.iter().map(|&d| u64::from(d)).sum();
        let now = backlog(&env);
        ensure_eq!(now, queued + u64::from(info.arrivals) - served - drops);
        queued = now;

        for d in env.devices() {
            ensure!(d.ce_group >= d.home_group);
            ensure!(d.ce_group.index() < groups);
            ensure!(d.c_pmax < params.gamma_pmax);
            ensure!(d.c_rrc < params.gamma_rrc);
            ensure!(!d.rrc_connected || d.backlog > 0);
            if let Some(cap) = params.backlog_cap {
                ensure!(d.backlog <= cap);
            }
        }
    }
    Ok(ttis)
}

