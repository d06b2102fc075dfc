use std::fs;
use std::path::Path;

use nbiot_core::env::Scenario;
use nbiot_core::harness::{
    eval_dir, run, ControllerKind, ExperimentSpec, RunOptions, RunSummary, CHECKPOINT_DIR, EPISODES_FILE,
    LEARNING_FILE, SUMMARY_FILE, TTI_FILE,
};

fn tiny(scenario: Scenario, kind: ControllerKind) -> ExperimentSpec {
    let mut s = ExperimentSpec::desk(kind.as_str(), scenario, kind);
    s.seed = 7;
    s.horizon = 40;
    s.eval_episodes = 6;
    s.train_episodes = if kind.learns() { 2 } else { 0 };
    s.hyper.hidden = vec![16, 16];
    s.hyper.batch = 8;
    s.hyper.epsilon_steps = 60;
    s.sim.insert("n_periodic".into(), toml::Value::Integer(150));
    s.sim.insert("n_bursty".into(), toml::Value::Integer(150));
    s
}

fn all_specs() -> Vec<ExperimentSpec> {
    let mut out = Vec::new();
    for scenario in [Scenario::SingleGroup, Scenario::MultiGroup] {
        for kind in ControllerKind::ALL {
            if kind.supports(scenario) {
                out.push(tiny(scenario, kind));
            }
        }
    }
    out
}

fn same_bytes(a: &Path, b: &Path) {
    for f in [SUMMARY_FILE, EPISODES_FILE, TTI_FILE, LEARNING_FILE] {
        if !a.join(f).exists() && f == LEARNING_FILE {
            continue;
        }
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs in {}", a.display());
    }
}

#[test]
fn reruns_are_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    for spec in all_specs() {
        let a = root.path().join(format!("{}-{}-a", spec.name, spec.scenario));
        let b = root.path().join(format!("{}-{}-b", spec.name, spec.scenario));
        run(&spec, &RunOptions::new(&a)).unwrap();
        run(&spec, &RunOptions::new(&b)).unwrap();
        same_bytes(&a, &b);
    }
}

#[test]
fn seed_changes_outputs() {
    let root = tempfile::tempdir().unwrap();
    let mut spec = tiny(Scenario::SingleGroup, ControllerKind::LeUrc);
    run(&spec, &RunOptions::new(root.path().join("a"))).unwrap();
    spec.seed = 8;
    run(&spec, &RunOptions::new(root.path().join("b"))).unwrap();
    let a = fs::read(root.path().join("a").join(TTI_FILE)).unwrap();
    let b = fs::read(root.path().join("b").join(TTI_FILE)).unwrap();
    assert_ne!(a, b);
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|x| x.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn summary_matches_raw_rows() {
    let root = tempfile::tempdir().unwrap();
    for spec in [tiny(Scenario::SingleGroup, ControllerKind::Dqn), tiny(Scenario::MultiGroup, ControllerKind::LeUrc)] {
        let dir = root.path().join(spec.name.clone());
        let s = run(&spec, &RunOptions::new(&dir)).unwrap();
        let (header, rows) = read_rows(&dir.join(TTI_FILE));
        let col = |name: &str| header.iter().position(|h| h == name).unwrap();
        let n = rows.len() as f64;
        assert_eq!(rows.len(), (spec.horizon * spec.eval_episodes) as usize);
        let mean = |c: usize| rows.iter().map(|r| r[c]).sum::<f64>() / n;
        assert!((mean(col("v_su")) - s.mean_v_su).abs() < 1e-9);
        assert!((mean(col("reward")) - s.mean_reward).abs() < 1e-9);
        assert!((mean(col("drops")) - s.mean_drops).abs() < 1e-9);
        for (g, v) in s.v_su_group.iter().enumerate() {
            assert!((mean(col(&format!("served_{g}"))) - v).abs() < 1e-9);
        }
        let eps = f64::from(spec.eval_episodes);
        for t in 0..spec.horizon as usize {
            let at: Vec<&Vec<f64>> = rows.iter().filter(|r| r[col("tti")] as usize == t).collect();
            let v = at.iter().map(|r| r[col("v_su")]).sum::<f64>() / eps;
            let rep = at.iter().map(|r| r[col("n_repe_0")]).sum::<f64>() / eps;
            assert!((v - s.curves.v_su[t]).abs() < 1e-9);
            assert!((rep - s.curves.n_repe[0][t]).abs() < 1e-9);
        }
        // Every row carries its seed, episode and TTI.
        for name in ["seed", "episode", "tti"] {
            assert!(header.contains(&name.to_string()));
        }
        let stored = RunSummary::load(&dir).unwrap();
        assert_eq!(stored, s);
    }
}

#[test]
fn cma_writes_nine_checkpoints_and_eval_is_frozen() {
    let root = tempfile::tempdir().unwrap();
    let spec = tiny(Scenario::MultiGroup, ControllerKind::CmaDqn);
    let dir = root.path().join("cma");
    let s = run(&spec, &RunOptions::new(&dir)).unwrap();
    assert_eq!(s.checkpoints.len(), 9);
    let ckpt = dir.join(CHECKPOINT_DIR);
    let before: Vec<Vec<u8>> = s.checkpoints.iter().map(|f| fs::read(ckpt.join(f)).unwrap()).collect();

    let e1 = eval_dir(&dir, &root.path().join("e1"), Some(0.001), None, true).unwrap();
    let e2 = eval_dir(&dir, &root.path().join("e2"), Some(0.001), None, true).unwrap();
    assert_eq!(e1, e2);
    same_bytes(&root.path().join("e1"), &root.path().join("e2"));
    let after: Vec<Vec<u8>> = s.checkpoints.iter().map(|f| fs::read(ckpt.join(f)).unwrap()).collect();
    assert_eq!(before, after);

    // Greedy re-evaluation reproduces the run's own evaluation.
    let e0 = eval_dir(&dir, &root.path().join("e0"), None, None, true).unwrap();
    assert_eq!(e0.mean_v_su, s.mean_v_su);
    let a = fs::read_to_string(dir.join(TTI_FILE)).unwrap();
    let b = fs::read_to_string(root.path().join("e0").join(TTI_FILE)).unwrap();
    let d = a.lines().zip(b.lines()).position(|(x, y)| x != y);
    assert!(d.is_none(), "line {d:?}: {:?} vs {:?}", a.lines().nth(d.unwrap()), b.lines().nth(d.unwrap()));
}
