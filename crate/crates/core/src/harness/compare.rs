use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::run::{read_episodes, EpisodeRow, RunSummary};
use super::HarnessError;

pub const BOOTSTRAP_RESAMPLES: usize = 2000;
const BOOTSTRAP_SEED: u64 = 0x5eed_b007;

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn resampled_means(n: usize, stat: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..n).map(|_| stat(rng.random_range(0..n))).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    means
}

/// Percentile bootstrap interval of the mean. Fixed resampling seed, so the
/// result is a pure function of `values`.
pub fn bootstrap_ci(values: &[f64], confidence: f64) -> (f64, f64) {
    match values.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (values[0], values[0]),
        n => {
            let means = resampled_means(n, |i| values[i]);
            let tail = (1.0 - confidence) / 2.0;
            (percentile(&means, tail), percentile(&means, 1.0 - tail))
        }
    }
}

/// Bootstrap of the mean paired difference `a[i] - b[i]`; returns
/// `(mean, lo, hi)`.
pub fn paired_bootstrap_ci(a: &[f64], b: &[f64], confidence: f64) -> (f64, f64, f64) {
    assert_eq!(a.len(), b.len(), "paired samples need equal length");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / d.len().max(1) as f64;
    let (lo, hi) = bootstrap_ci(&d, confidence);
    (mean, lo, hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedRun {
    pub rank: usize,
    pub name: String,
    pub controller: String,
    pub dir: PathBuf,
    pub mean_v_su: f64,
    pub ci95: (f64, f64),
    pub mean_drops: f64,
    /// Paired difference to the next-ranked run, when both share episode seeds.
    pub gap_to_next: Option<(f64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub runs: Vec<RankedRun>,
}

impl Comparison {
    /// True when run `i` beats run `j` with non-overlapping intervals.
    pub fn separated(&self, i: usize, j: usize) -> bool {
        self.runs[i].ci95.0 > self.runs[j].ci95.1 || self.runs[j].ci95.0 > self.runs[i].ci95.1
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario: {}", self.scenario)?;
        writeln!(f, "{:>4}  {:<24} {:<18} {:>10} {:>23} {:>10}  gap to next (paired 95%)", "rank", "run", "controller", "E{v_su}", "95% CI", "E{v_drop}")?;
        for r in &self.runs {
            let gap = match r.gap_to_next {
                Some((m, lo, hi)) => format!("{m:+.4} [{lo:+.4}, {hi:+.4}]"),
                None => "-".into(),
            };
            writeln!(
                f,
                "{:>4}  {:<24} {:<18} {:>10.4} [{:>9.4}, {:>9.4}] {:>10.4}  {gap}",
                r.rank, r.name, r.controller, r.mean_v_su, r.ci95.0, r.ci95.1, r.mean_drops
            )?;
        }
        Ok(())
    }
}

/// Ranks finished runs by mean successful devices per TTI. Refuses runs
/// from different scenarios.
pub fn compare(dirs: &[PathBuf]) -> Result<Comparison, HarnessError> {
    if dirs.len() < 2 {
        return Err(HarnessError::Config("compare needs at least two runs".into()));
    }
    let mut loaded: Vec<(PathBuf, RunSummary, Vec<EpisodeRow>)> = Vec::new();
    for d in dirs {
        let s = RunSummary::load(d)?;
        let e = read_episodes(d)?;
        loaded.push((d.clone(), s, e));
    }
    let scenario = loaded[0].1.scenario.clone();
    if let Some((d, s, _)) = loaded.iter().find(|(_, s, _)| s.scenario != scenario) {
        return Err(HarnessError::Config(format!(
            "{} is a {} run, expected {scenario}",
            d.display(),
            s.scenario
        )));
    }
    loaded.sort_by(|a, b| b.1.mean_v_su.total_cmp(&a.1.mean_v_su).then_with(|| a.0.cmp(&b.0)));
    let mut runs = Vec::with_capacity(loaded.len());
    for (i, (dir, s, eps)) in loaded.iter().enumerate() {
        let gap_to_next = loaded.get(i + 1).and_then(|(_, _, next)| {
            let same_seeds = eps.len() == next.len() && eps.iter().zip(next).all(|(a, b)| a.seed == b.seed);
            same_seeds.then(|| {
                let a: Vec<f64> = eps.iter().map(|r| r.mean_v_su).collect();
                let b: Vec<f64> = next.iter().map(|r| r.mean_v_su).collect();
                paired_bootstrap_ci(&a, &b, 0.95)
            })
        });
        runs.push(RankedRun {
            rank: i + 1,
            name: s.name.clone(),
            controller: s.controller.clone(),
            dir: dir.clone(),
            mean_v_su: s.mean_v_su,
            ci95: s.ci95,
            mean_drops: s.mean_drops,
            gap_to_next,
        });
    }
    Ok(Comparison { scenario, runs })
}

fn write_series(path: &Path, columns: &[String], series: &[&[f64]]) -> Result<(), HarnessError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{}", columns.join(","))?;
    let len = series.iter().map(|s| s.len()).max().unwrap_or(0);
    for t in 0..len {
        let row: Vec<String> = std::iter::once(t.to_string())
            .chain(series.iter().map(|s| s.get(t).map(|v| v.to_string()).unwrap_or_default()))
            .collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Writes plot-ready CSV series from a run's summary into `out`: per-TTI
/// success curves, per-group configuration trajectories and the learning
/// curve. Returns the written paths.
pub fn export_plots(run_dir: &Path, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let s = RunSummary::load(run_dir)?;
    fs::create_dir_all(out)?;
    let c = &s.curves;
    let groups = c.n_repe.len();
    let mut written = Vec::new();

    let mut cols = vec!["tti".to_string(), "v_su".into(), "drops".into(), "arrivals".into()];
    let mut series: Vec<&[f64]> = vec![&c.v_su, &c.drops, &c.arrivals];
    for g in 0..groups {
        cols.push(format!("v_su_{g}"));
        series.push(&c.v_su_group[g]);
    }
    let p = out.join("success.csv");
    write_series(&p, &cols, &series)?;
    written.push(p);

    let mut cols = vec!["tti".to_string()];
    let mut series: Vec<&[f64]> = Vec::new();
    for g in 0..groups {
        for (name, v) in [("n_rach", &c.n_rach[g]), ("n_repe", &c.n_repe[g]), ("f_prea", &c.f_prea[g])] {
            cols.push(format!("{name}_{g}"));
            series.push(v);
        }
    }
    let p = out.join("configuration.csv");
    write_series(&p, &cols, &series)?;
    written.push(p);

    let reward: Vec<f64> = s.learning_curve.iter().map(|l| l.mean_reward).collect();
    let v_su: Vec<f64> = s.learning_curve.iter().map(|l| l.mean_v_su).collect();
    let p = out.join("learning.csv");
    write_series(&p, &["episode".into(), "mean_reward".into(), "mean_v_su".into()], &[&reward, &v_su])?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Scenario;
    use crate::harness::{run, ControllerKind, ExperimentSpec, RunOptions};

    #[test]
    fn bootstrap_brackets_mean() {
        let v: Vec<f64> = (0..200).map(|i| (i % 17) as f64).collect();
        let mean = v.iter().sum::<f64>() / 200.0;
        let (lo, hi) = bootstrap_ci(&v, 0.95);
        assert!(lo < mean && mean < hi);
        // standard error of the mean is about 0.35 here
        assert!((hi - lo) > 0.9 && (hi - lo) < 1.9, "{lo} {hi}");
        assert_eq!(bootstrap_ci(&v, 0.95), (lo, hi));
        assert_eq!(bootstrap_ci(&[3.0; 10], 0.95), (3.0, 3.0));
    }

    #[test]
    fn paired_removes_shared_noise() {
        let a: Vec<f64> = (0..100).map(|i| (i * 37 % 101) as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x - 0.5).collect();
        let (m, lo, hi) = paired_bootstrap_ci(&a, &b, 0.95);
        assert!((m - 0.5).abs() < 1e-12 && (lo - 0.5).abs() < 1e-12 && (hi - 0.5).abs() < 1e-12);
    }

    fn tiny(name: &str, scenario: Scenario, kind: ControllerKind) -> ExperimentSpec {
        let mut s = ExperimentSpec::desk(name, scenario, kind);
        s.horizon = 20;
        s.eval_episodes = 4;
        s.sim.insert("n_periodic".into(), toml::Value::Integer(60));
        s.sim.insert("n_bursty".into(), toml::Value::Integer(60));
        s
    }

    #[test]
    fn identical_runs_tie_and_scenarios_must_match() {
        let root = tempfile::tempdir().unwrap();
        let a = root.path().join("a");
        let b = root.path().join("b");
        let m = root.path().join("m");
        let spec = tiny("le", Scenario::SingleGroup, ControllerKind::LeUrc);
        run(&spec, &RunOptions::new(&a)).unwrap();
        run(&spec, &RunOptions::new(&b)).unwrap();
        let cmp = compare(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(cmp.runs[0].mean_v_su, cmp.runs[1].mean_v_su);
        assert_eq!(cmp.runs[0].gap_to_next, Some((0.0, 0.0, 0.0)));
        assert!(!cmp.separated(0, 1));
        assert_eq!(cmp.to_string(), compare(&[a.clone(), b]).unwrap().to_string());

        run(&tiny("m", Scenario::MultiGroup, ControllerKind::LeUrc), &RunOptions::new(&m)).unwrap();
        assert_eq!(compare(&[a.clone(), m]).unwrap_err().exit_code(), 2);
        assert_eq!(compare(&[a.clone()]).unwrap_err().exit_code(), 2);

        let files = export_plots(&a, &root.path().join("plots")).unwrap();
        assert_eq!(files.len(), 3);
        let text = fs::read_to_string(&files[1]).unwrap();
        assert_eq!(text.lines().count(), 21);
        assert!(text.starts_with("tti,n_rach_0,n_repe_0,f_prea_0\n"));
    }
}
