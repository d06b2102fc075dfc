use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compare::bootstrap_ci;
use super::spec::{AnyController, ExperimentSpec};
use super::HarnessError;
use crate::env::{run_episode, stream_seed, Controller, EpisodeConfig, EpisodeMetrics, NbIotEnv, STREAM_POLICY};
use crate::types::NUM_GROUPS;

/// Evaluation episodes use seeds offset from training seeds so the two
/// never share traffic realizations.
pub const EVAL_SEED_OFFSET: u64 = 1_000_000;

/// Evaluation episodes simulated per parallel batch; bounds memory.
const EVAL_CHUNK: usize = 32;

pub const SUMMARY_FILE: &str = "summary.json";
pub const SPEC_FILE: &str = "spec.toml";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const TTI_FILE: &str = "tti_metrics.csv";
pub const LEARNING_FILE: &str = "learning_curve.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Reuse finished training checkpoints in `out_dir` when the spec hash matches.
    pub resume: bool,
    /// Write the per-TTI metrics file.
    pub write_tti: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions { out_dir: out_dir.into(), resume: false, write_tti: true }
    }
}

/// One training episode of the learning curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningPoint {
    pub episode: u32,
    pub seed: u64,
    pub mean_reward: f64,
    pub mean_v_su: f64,
    pub epsilon: Option<f64>,
}

/// Per-episode evaluation statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: u32,
    pub seed: u64,
    pub ttis: u32,
    pub mean_v_su: f64,
    pub mean_reward: f64,
    pub mean_drops: f64,
    pub v_su_group: [f64; NUM_GROUPS],
}

impl EpisodeRow {
    fn from_metrics(episode: u32, m: &EpisodeMetrics) -> Self {
        let n = m.records.len().max(1) as f64;
        let mut groups = [0.0; NUM_GROUPS];
        for r in &m.records {
            for (g, o) in r.observation.groups.iter().enumerate() {
                groups[g] += f64::from(o.served);
            }
        }
        EpisodeRow {
            episode,
            seed: m.episode_seed,
            ttis: m.records.len() as u32,
            mean_v_su: m.mean_served(),
            mean_reward: m.mean_reward(),
            mean_drops: m.total_drops() as f64 / n,
            v_su_group: groups.map(|s| s / n),
        }
    }
}

/// Per-TTI means over evaluation episodes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub v_su: Vec<f64>,
    pub v_su_group: Vec<Vec<f64>>,
    pub drops: Vec<f64>,
    pub arrivals: Vec<f64>,
    pub n_rach: Vec<Vec<f64>>,
    pub n_repe: Vec<Vec<f64>>,
    pub f_prea: Vec<Vec<f64>>,
}

impl Curves {
    fn new(horizon: usize, groups: usize) -> Self {
        let per_group = || vec![vec![0.0; horizon]; groups];
        Curves {
            v_su: vec![0.0; horizon],
            v_su_group: per_group(),
            drops: vec![0.0; horizon],
            arrivals: vec![0.0; horizon],
            n_rach: per_group(),
            n_repe: per_group(),
            f_prea: per_group(),
        }
    }

    fn add(&mut self, m: &EpisodeMetrics) {
        for (t, r) in m.records.iter().enumerate() {
            self.v_su[t] += f64::from(r.observation.total_served());
            self.drops[t] += r.info.drops.iter().map(|&d| f64::from(d)).sum::<f64>();
            self.arrivals[t] += f64::from(r.info.arrivals);
            for (g, cfg) in r.action.groups().iter().enumerate().take(self.n_rach.len()) {
                self.v_su_group[g][t] += f64::from(r.observation.groups[g].served);
                self.n_rach[g][t] += f64::from(cfg.n_rach());
                self.n_repe[g][t] += f64::from(cfg.n_repe());
                self.f_prea[g][t] += f64::from(cfg.f_prea());
            }
        }
    }

    fn scale(&mut self, k: f64) {
        let all = std::iter::once(&mut self.v_su)
            .chain(std::iter::once(&mut self.drops))
            .chain(std::iter::once(&mut self.arrivals))
            .chain(self.v_su_group.iter_mut())
            .chain(self.n_rach.iter_mut())
            .chain(self.n_repe.iter_mut())
            .chain(self.f_prea.iter_mut());
        for series in all {
            series.iter_mut().for_each(|x| *x *= k);
        }
    }
}

/// Metadata sidecar of a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub spec_hash: String,
    pub controller: String,
    pub scenario: String,
    pub seed: u64,
    pub train_episodes: u32,
    pub eval_episodes: u32,
    pub horizon: u32,
    pub eval_epsilon: f64,
    /// Mean successful devices per TTI over all evaluation TTIs.
    pub mean_v_su: f64,
    /// 95% bootstrap interval of `mean_v_su` over episodes.
    pub ci95: (f64, f64),
    pub mean_reward: f64,
    pub mean_drops: f64,
    pub v_su_group: Vec<f64>,
    pub curves: Curves,
    pub learning_curve: Vec<LearningPoint>,
    pub checkpoints: Vec<String>,
}

impl RunSummary {
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(dir.join(SUMMARY_FILE))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", dir.display())))
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    spec_hash: String,
    episodes_done: u32,
    files: Vec<String>,
    learning_curve: Vec<LearningPoint>,
}

fn make_env(spec: &ExperimentSpec, controller: &AnyController) -> Result<NbIotEnv, HarnessError> {
    let params = spec.sim_params()?;
    let mut cfg = EpisodeConfig::new(spec.scenario, &params, controller.layout());
    cfg.horizon = spec.horizon;
    Ok(NbIotEnv::new(params, cfg)?)
}

/// Trains sequentially on episode seeds `0..train_episodes`.
pub fn train(spec: &ExperimentSpec, controller: &mut AnyController) -> Result<Vec<LearningPoint>, HarnessError> {
    let mut env = make_env(spec, controller)?;
    controller.set_learning(true);
    let mut curve = Vec::with_capacity(spec.train_episodes as usize);
    for i in 0..spec.train_episodes {
        let m = run_episode(&mut env, controller, u64::from(i))?;
        curve.push(LearningPoint {
            episode: i,
            seed: u64::from(i),
            mean_reward: m.mean_reward(),
            mean_v_su: m.mean_served(),
            epsilon: controller.epsilon(),
        });
    }
    Ok(curve)
}

/// Runs frozen evaluation episodes in parallel. Each episode gets its own
/// copy of the controller, so results depend only on the episode index.
/// `sink` receives episodes in index order.
pub fn evaluate<F>(spec: &ExperimentSpec, controller: &AnyController, mut sink: F) -> Result<(), HarnessError>
where
    F: FnMut(u32, &EpisodeMetrics) -> Result<(), HarnessError>,
{
    let env = make_env(spec, controller)?;
    let mut frozen = controller.clone();
    frozen.set_learning(false);
    let indices: Vec<u32> = (0..spec.eval_episodes).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let results: Vec<Result<EpisodeMetrics, HarnessError>> = chunk
            .par_iter()
            .map(|&j| {
                let mut env = env.clone();
                let mut c = frozen.clone();
                let seed = EVAL_SEED_OFFSET + u64::from(j);
                c.reseed(stream_seed(spec.seed, seed, STREAM_POLICY));
                Ok(run_episode(&mut env, &mut c, seed)?)
            })
            .collect();
        for (&j, r) in chunk.iter().zip(results) {
            sink(j, &r?)?;
        }
    }
    Ok(())
}

fn header(spec_hash: &str) -> String {
    format!("# spec_hash={spec_hash}\n")
}

fn csv_writer(path: &Path, spec_hash: &str) -> Result<csv::Writer<BufWriter<File>>, HarnessError> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(header(spec_hash).as_bytes())?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Io(std::io::Error::other(e))
}

fn write_learning_curve(path: &Path, spec_hash: &str, curve: &[LearningPoint]) -> Result<(), HarnessError> {
    let mut w = csv_writer(path, spec_hash)?;
    w.write_record(["seed", "episode", "tti", "mean_reward", "mean_v_su", "epsilon"]).map_err(csv_err)?;
    for p in curve {
        w.write_record([
            p.seed.to_string(),
            p.episode.to_string(),
            "all".to_string(),
            p.mean_reward.to_string(),
            p.mean_v_su.to_string(),
            p.epsilon.map(|e| e.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn tti_columns(groups: usize) -> Vec<String> {
    let mut cols: Vec<String> =
        ["seed", "episode", "tti", "reward", "v_su", "arrivals", "drops"].iter().map(|s| s.to_string()).collect();
    for g in 0..groups {
        for name in ["n_rach", "n_repe", "f_prea", "served", "unserved", "collided", "success", "idle", "true_load"] {
            cols.push(format!("{name}_{g}"));
        }
    }
    cols
}

fn write_tti_rows<W: Write>(
    w: &mut csv::Writer<W>,
    episode: u32,
    m: &EpisodeMetrics,
    groups: usize,
) -> Result<(), HarnessError> {
    let mut row: Vec<String> = Vec::with_capacity(7 + 9 * groups);
    for (t, r) in m.records.iter().enumerate() {
        row.clear();
        row.push(m.episode_seed.to_string());
        row.push(episode.to_string());
        row.push(t.to_string());
        row.push(r.reward.to_string());
        row.push(r.observation.total_served().to_string());
        row.push(r.info.arrivals.to_string());
        row.push(r.info.drops.iter().sum::<u32>().to_string());
        for g in 0..groups {
            let cfg = r.action.groups()[g];
            let o = r.observation.groups[g];
            for v in [cfg.n_rach(), cfg.n_repe(), cfg.f_prea(), o.served, o.unserved, o.collided, o.success, o.idle] {
                row.push(v.to_string());
            }
            row.push(r.true_load[g].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    Ok(())
}

fn episode_columns() -> [&'static str; 10] {
    ["seed", "episode", "tti", "mean_v_su", "mean_reward", "mean_drops", "v_su_0", "v_su_1", "v_su_2", "ttis"]
}

fn episode_record(e: &EpisodeRow) -> Vec<String> {
    let mut v = vec![
        e.seed.to_string(),
        e.episode.to_string(),
        "all".to_string(),
        e.mean_v_su.to_string(),
        e.mean_reward.to_string(),
        e.mean_drops.to_string(),
    ];
    v.extend(e.v_su_group.iter().map(|x| x.to_string()));
    v.push(e.ttis.to_string());
    v
}

/// Reads `episodes.csv` back.
pub fn read_episodes(dir: &Path) -> Result<Vec<EpisodeRow>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(dir.join(EPISODES_FILE)).map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| -> Result<f64, HarnessError> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| HarnessError::Config(format!("bad field {i} in {}", dir.display())))
        };
        out.push(EpisodeRow {
            seed: f(0)? as u64,
            episode: f(1)? as u32,
            mean_v_su: f(3)?,
            mean_reward: f(4)?,
            mean_drops: f(5)?,
            v_su_group: [f(6)?, f(7)?, f(8)?],
            ttis: f(9)? as u32,
        });
    }
    Ok(out)
}

fn load_manifest(dir: &Path, spec_hash: &str) -> Option<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
    let m: Manifest = serde_json::from_str(&text).ok()?;
    (m.spec_hash == spec_hash).then_some(m)
}

/// Trains (or resumes) and evaluates `spec`, writing every artifact into
/// `opts.out_dir`.
pub fn run(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunSummary, HarnessError> {
    spec.validate()?;
    let hash = spec.hash();
    let dir = &opts.out_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SPEC_FILE), spec.to_toml())?;
    let ckpt = dir.join(CHECKPOINT_DIR);

    let mut controller = spec.build_controller()?;
    let resumed = if opts.resume { load_manifest(&ckpt, &hash).filter(|m| m.episodes_done == spec.train_episodes) } else { None };
    let (curve, files) = match resumed {
        Some(m) => {
            controller.load_checkpoints(&ckpt)?;
            (m.learning_curve, m.files)
        }
        None => {
            let curve = train(spec, &mut controller)?;
            let files = controller.save_checkpoints(&ckpt)?;
            let manifest =
                Manifest { spec_hash: hash.clone(), episodes_done: spec.train_episodes, files: files.clone(), learning_curve: curve.clone() };
            fs::write(ckpt.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
            (curve, files)
        }
    };
    write_learning_curve(&dir.join(LEARNING_FILE), &hash, &curve)?;
    evaluate_into(spec, &controller, dir, opts.write_tti, curve, files)
}

/// Re-evaluates a finished run directory with its stored checkpoints,
/// writing a fresh set of evaluation files into `out`. `eval_epsilon` and
/// `episodes` override the stored spec.
pub fn eval_dir(
    dir: &Path,
    out: &Path,
    eval_epsilon: Option<f64>,
    episodes: Option<u32>,
    write_tti: bool,
) -> Result<RunSummary, HarnessError> {
    let text = fs::read_to_string(dir.join(SPEC_FILE))
        .map_err(|e| HarnessError::Config(format!("{} is not a run directory: {e}", dir.display())))?;
    let mut spec = ExperimentSpec::from_toml(&text)?;
    let ckpt = dir.join(CHECKPOINT_DIR);
    let manifest = load_manifest(&ckpt, &spec.hash())
        .ok_or_else(|| HarnessError::Config(format!("{} has no checkpoints for its spec", dir.display())))?;
    if let Some(e) = eval_epsilon {
        if !(0.0..=1.0).contains(&e) {
            return Err(HarnessError::Config(format!("eval epsilon {e} outside [0, 1]")));
        }
        spec.hyper.eval_epsilon = e;
    }
    if let Some(n) = episodes {
        spec.eval_episodes = n;
    }
    let mut controller = spec.build_controller()?;
    controller.load_checkpoints(&ckpt)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(SPEC_FILE), spec.to_toml())?;
    evaluate_into(&spec, &controller, out, write_tti, manifest.learning_curve, manifest.files)
}

fn evaluate_into(
    spec: &ExperimentSpec,
    controller: &AnyController,
    dir: &Path,
    write_tti: bool,
    learning_curve: Vec<LearningPoint>,
    checkpoints: Vec<String>,
) -> Result<RunSummary, HarnessError> {
    let hash = spec.hash();
    let groups = spec.scenario.num_groups();
    let mut episodes_w = csv_writer(&dir.join(EPISODES_FILE), &hash)?;
    episodes_w.write_record(episode_columns()).map_err(csv_err)?;
    let tti_path = dir.join(TTI_FILE);
    let mut tti_w = if write_tti {
        let mut w = csv_writer(&tti_path, &hash)?;
        w.write_record(tti_columns(groups)).map_err(csv_err)?;
        Some(w)
    } else {
        if tti_path.exists() {
            fs::remove_file(&tti_path)?;
        }
        None
    };

    let mut curves = Curves::new(spec.horizon as usize, groups);
    let mut rows = Vec::with_capacity(spec.eval_episodes as usize);
    let (mut served, mut reward, mut drops, mut ttis) = (0.0, 0.0, 0.0, 0u64);
    let mut group_served = [0.0; NUM_GROUPS];
    evaluate(spec, controller, |j, m| {
        let row = EpisodeRow::from_metrics(j, m);
        episodes_w.write_record(episode_record(&row)).map_err(csv_err)?;
        if let Some(w) = tti_w.as_mut() {
            write_tti_rows(w, j, m, groups)?;
        }
        curves.add(m);
        for r in &m.records {
            served += f64::from(r.observation.total_served());
            reward += r.reward;
            drops += r.info.drops.iter().map(|&d| f64::from(d)).sum::<f64>();
            for (g, o) in r.observation.groups.iter().enumerate() {
                group_served[g] += f64::from(o.served);
            }
        }
        ttis += m.records.len() as u64;
        rows.push(row);
        Ok(())
    })?;
    episodes_w.flush()?;
    if let Some(mut w) = tti_w {
        w.flush()?;
    }

    let n_eps = f64::from(spec.eval_episodes.max(1));
    curves.scale(1.0 / n_eps);
    let n = ttis.max(1) as f64;
    let per_episode: Vec<f64> = rows.iter().map(|r| r.mean_v_su).collect();
    let summary = RunSummary {
        name: spec.name.clone(),
        spec_hash: hash,
        controller: controller.name(),
        scenario: spec.scenario.to_string(),
        seed: spec.seed,
        train_episodes: spec.train_episodes,
        eval_episodes: spec.eval_episodes,
        horizon: spec.horizon,
        eval_epsilon: spec.hyper.eval_epsilon,
        mean_v_su: served / n,
        ci95: bootstrap_ci(&per_episode, 0.95),
        mean_reward: reward / n,
        mean_drops: drops / n,
        v_su_group: group_served[..groups].iter().map(|s| s / n).collect(),
        curves,
        learning_curve,
        checkpoints,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(dir.join(SUMMARY_FILE), json + "\n")?;
    Ok(summary)
}

/// Output directory for `spec` under `root`.
pub fn default_out_dir(root: &Path, spec: &ExperimentSpec) -> PathBuf {
    root.join(format!("{}-{}", spec.name, &spec.hash()[..12]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Scenario;
    use crate::harness::ControllerKind;

    fn tiny(kind: ControllerKind) -> ExperimentSpec {
        let mut s = ExperimentSpec::desk("tiny", Scenario::SingleGroup, kind);
        s.horizon = 30;
        s.eval_episodes = 5;
        s.train_episodes = if kind.learns() { 2 } else { 0 };
        s.sim.insert("n_periodic".into(), toml::Value::Integer(100));
        s.sim.insert("n_bursty".into(), toml::Value::Integer(50));
        s
    }

    #[test]
    fn urc_run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny(ControllerKind::LeUrc);
        let s = run(&spec, &RunOptions::new(dir.path())).unwrap();
        for f in [SUMMARY_FILE, SPEC_FILE, EPISODES_FILE, TTI_FILE, LEARNING_FILE] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(s.curves.v_su.len(), 30);
        assert!(s.ci95.0 <= s.mean_v_su && s.mean_v_su <= s.ci95.1);
        let rows = read_episodes(dir.path()).unwrap();
        assert_eq!(rows.len(), 5);
        let mean = rows.iter().map(|r| r.mean_v_su).sum::<f64>() / 5.0;
        assert!((mean - s.mean_v_su).abs() < 1e-9);
        let text = fs::read_to_string(dir.path().join(TTI_FILE)).unwrap();
        assert!(text.starts_with(&format!("# spec_hash={}", spec.hash())));
    }

    #[test]
    fn resume_skips_training() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny(ControllerKind::TabularQ);
        let mut opts = RunOptions::new(dir.path());
        let a = run(&spec, &opts).unwrap();
        opts.resume = true;
        let b = run(&spec, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checkpoints, vec!["qtable.bin".to_string()]);
        let out = dir.path().join("eval");
        let c = eval_dir(dir.path(), &out, Some(0.001), Some(3), false).unwrap();
        assert_eq!(c.eval_episodes, 3);
        assert_eq!(c.eval_epsilon, 0.001);
        assert!(!out.join(TTI_FILE).exists());
        assert!(out.join(EPISODES_FILE).exists());
    }

    #[test]
    fn eval_without_checkpoints_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(SPEC_FILE), tiny(ControllerKind::Dqn).to_toml()).unwrap();
        let err = eval_dir(dir.path(), &dir.path().join("e"), None, None, true).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
