use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nbiot_core::env::Scenario;
use nbiot_core::harness::{
    compare, default_out_dir, eval_dir, export_plots, run, ControllerKind, ExperimentSpec, HarnessError, RunOptions,
    RunSummary, OUTPUT_ROOT_ENV,
};

/// NB-IoT uplink resource configuration experiments.
#[derive(Parser)]
#[command(name = "nbiot", version)]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, default_value = "runs")]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (if the controller learns) and evaluate one experiment.
    Run(RunArgs),
    /// Re-evaluate a finished run with frozen weights.
    Eval(EvalArgs),
    /// Rank finished runs by mean successful devices per TTI.
    Compare(CompareArgs),
    /// Write plot-ready CSV series for a finished run.
    ExportPlots(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    SingleGroup,
    MultiGroup,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    TabularQ,
    LaQ,
    Dqn,
    AaLaQ,
    AaDqn,
    CmaDqn,
    LeUrc,
    FsiUrc,
}

impl ControllerArg {
    fn kind(self) -> ControllerKind {
        match self {
            ControllerArg::TabularQ => ControllerKind::TabularQ,
            ControllerArg::LaQ => ControllerKind::LaQ,
            ControllerArg::Dqn => ControllerKind::Dqn,
            ControllerArg::AaLaQ => ControllerKind::AaLaQ,
            ControllerArg::AaDqn => ControllerKind::AaDqn,
            ControllerArg::CmaDqn => ControllerKind::CmaDqn,
            ControllerArg::LeUrc => ControllerKind::LeUrc,
            ControllerArg::FsiUrc => ControllerKind::FsiUrc,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment file (TOML). Other flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    controller: Option<ControllerArg>,
    /// Defaults to multi-group for the aggregated and multi-agent controllers.
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Start from the scaled-down desk profile instead of full scale.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    train_episodes: Option<u32>,
    #[arg(long)]
    eval_episodes: Option<u32>,
    #[arg(long)]
    horizon: Option<u32>,
    /// Override any spec field, e.g. `sim.n_bursty=500` or `hyper.lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to `<output-root>/<name>-<hash>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reuse finished training checkpoints in the output directory.
    #[arg(long)]
    resume: bool,
    /// Skip the per-TTI metrics file.
    #[arg(long)]
    no_tti: bool,
    /// Print the resolved spec and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct EvalArgs {
    run_dir: PathBuf,
    /// Exploration rate during evaluation.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    episodes: Option<u32>,
    /// Defaults to `<run_dir>/eval`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_tti: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(required = true, num_args = 2..)]
    runs: Vec<PathBuf>,
    /// Also write the ranking as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    run_dir: PathBuf,
    /// Defaults to `<run_dir>/plots`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn set_path(table: &mut toml::Table, key: &str, raw: &str) -> Result<(), HarnessError> {
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| HarnessError::Config(format!("bad key `{key}`")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn resolve_spec(a: &RunArgs) -> Result<ExperimentSpec, HarnessError> {
    let mut spec = match &a.config {
        Some(path) => ExperimentSpec::from_toml(&std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read {}: {e}", path.display()))
        })?)?,
        None => {
            let kind = a
                .controller
                .map(ControllerArg::kind)
                .ok_or_else(|| HarnessError::Config("either --config or --controller is required".into()))?;
            let scenario = match a.scenario {
                Some(ScenarioArg::SingleGroup) => Scenario::SingleGroup,
                Some(ScenarioArg::MultiGroup) => Scenario::MultiGroup,
                None if kind.supports(Scenario::SingleGroup) => Scenario::SingleGroup,
                None => Scenario::MultiGroup,
            };
            let name = a.name.clone().unwrap_or_else(|| kind.as_str().to_string());
            if a.desk {
                ExperimentSpec::desk(&name, scenario, kind)
            } else {
                ExperimentSpec::new(&name, scenario, kind)
            }
        }
    };
    if let Some(n) = &a.name {
        spec.name = n.clone();
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.train_episodes {
        spec.train_episodes = n;
    }
    if let Some(n) = a.eval_episodes {
        spec.eval_episodes = n;
    }
    if let Some(h) = a.horizon {
        spec.horizon = h;
    }
    if !a.overrides.is_empty() {
        let mut table = toml::Table::try_from(&spec).map_err(|e| HarnessError::Config(e.to_string()))?;
        for o in &a.overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| HarnessError::Config(format!("expected KEY=VALUE, got `{o}`")))?;
            set_path(&mut table, k.trim(), v.trim())?;
        }
        spec = ExperimentSpec::from_toml(&toml::to_string(&table).map_err(|e| HarnessError::Config(e.to_string()))?)?;
    }
    spec.validate()?;
    Ok(spec)
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<(), HarnessError> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_summary(dir: &Path, s: &RunSummary) -> Result<(), HarnessError> {
    emit(&format!(
        "{}  {}  E{{v_su}} = {:.4} [{:.4}, {:.4}]  E{{v_drop}} = {:.4}  mean reward = {:.4}\noutput: {}\n",
        s.name,
        s.controller,
        s.mean_v_su,
        s.ci95.0,
        s.ci95.1,
        s.mean_drops,
        s.mean_reward,
        dir.display()
    ))
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run(a) => {
            let spec = resolve_spec(&a)?;
            if a.dry_run {
                emit(&spec.to_toml())?;
                return Ok(());
            }
            let out = a.out.clone().unwrap_or_else(|| default_out_dir(&cli.output_root, &spec));
            let mut opts = RunOptions::new(&out);
            opts.resume = a.resume;
            opts.write_tti = !a.no_tti;
            let summary = run(&spec, &opts)?;
            print_summary(&out, &summary)?;
        }
        Command::Eval(a) => {
            let out = a.out.clone().unwrap_or_else(|| a.run_dir.join("eval"));
            let summary = eval_dir(&a.run_dir, &out, a.epsilon, a.episodes, !a.no_tti)?;
            print_summary(&out, &summary)?;
        }
        Command::Compare(a) => {
            let cmp = compare(&a.runs)?;
            emit(&cmp.to_string())?;
            if let Some(path) = a.json {
                let json = serde_json::to_string_pretty(&cmp).expect("comparison serializes");
                std::fs::write(path, json + "\n")?;
            }
        }
        Command::ExportPlots(a) => {
            let out = a.out.clone().unwrap_or_else(|| a.run_dir.join("plots"));
            for p in export_plots(&a.run_dir, &out)? {
                emit(&format!("{}\n", p.display()))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
