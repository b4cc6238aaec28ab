use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixdiff::harness::{emit_plot_data, output_dir, run_in, ExperimentConfig, ExperimentKind};
use mixdiff::Error;

#[derive(Parser)]
#[command(name = "mixdiff", version, about = "Gaussian-mixture diffusion sampler experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Sample(Common),
    StepSweep(Common),
    KappaSweep(Common),
    Convergence(Common),
    Trap(Common),
    EtaSweep(Common),
    Tau3Ablation(Common),
    BoundCheck(Common),
    Decomposition(Common),
    Diagonal(Common),
    Perturbation(Common),
    Train(Common),
    DimSweep(Common),
    HyperAblation(Common),
    /// Print the default config for an experiment as JSON.
    DefaultConfig {
        #[arg(value_parser = parse_kind)]
        experiment: ExperimentKind,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config file; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: $MIXDIFF_OUT/<experiment>-<hash>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// 10^5 trajectories and the long training protocol.
    #[arg(long)]
    full_scale: bool,
    /// Dotted-path override, e.g. --set analysis.kappa=9 (repeatable).
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Only process trajectory ids START..END; rerun without it to resume.
    #[arg(long, value_name = "START..END", value_parser = parse_range)]
    id_range: Option<[u64; 2]>,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    ExperimentKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown experiment {s}"))
}

fn parse_range(s: &str) -> Result<[u64; 2], String> {
    let (a, b) = s.split_once("..").ok_or("expected START..END")?;
    Ok([a.parse().map_err(|e| format!("{e}"))?, b.parse().map_err(|e| format!("{e}"))?])
}

fn build_config(kind: ExperimentKind, c: &Common) -> mixdiff::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = kind;
    cfg = cfg.with_overrides(&c.overrides)?;
    if c.full_scale {
        cfg.apply_full_scale();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = Some(o.clone());
    }
    if c.id_range.is_some() {
        cfg.id_range = c.id_range;
    }
    Ok(cfg)
}

fn execute(kind: ExperimentKind, c: &Common) -> mixdiff::Result<bool> {
    let cfg = build_config(kind, c)?;
    let dir = output_dir(&cfg);
    let bundle = run_in(&cfg, &dir)?;
    emit_plot_data(&bundle)?;
    println!("{}", serde_json::to_string_pretty(&bundle.summary)?);
    eprintln!("results in {}", bundle.dir.display());
    if !bundle.complete {
        eprintln!("stopped at the id range end; rerun without --id-range to resume");
    }
    if bundle.failures > 0 {
        eprintln!("{} trajectories failed numerically", bundle.failures);
    }
    Ok(bundle.failures == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::DefaultConfig { experiment } => {
            let cfg = ExperimentConfig { experiment: *experiment, ..ExperimentConfig::default() };
            println!("{}", serde_json::to_string_pretty(&cfg).expect("serializable"));
            return ExitCode::SUCCESS;
        }
        Command::Sample(c) => (ExperimentKind::Sample, c),
        Command::StepSweep(c) => (ExperimentKind::StepSweep, c),
        Command::KappaSweep(c) => (ExperimentKind::KappaSweep, c),
        Command::Convergence(c) => (ExperimentKind::Convergence, c),
        Command::Trap(c) => (ExperimentKind::Trap, c),
        Command::EtaSweep(c) => (ExperimentKind::EtaSweep, c),
        Command::Tau3Ablation(c) => (ExperimentKind::Tau3Ablation, c),
        Command::BoundCheck(c) => (ExperimentKind::BoundCheck, c),
        Command::Decomposition(c) => (ExperimentKind::Decomposition, c),
        Command::Diagonal(c) => (ExperimentKind::Diagonal, c),
        Command::Perturbation(c) => (ExperimentKind::Perturbation, c),
        Command::Train(c) => (ExperimentKind::Train, c),
        Command::DimSweep(c) => (ExperimentKind::DimSweep, c),
        Command::HyperAblation(c) => (ExperimentKind::HyperAblation, c),
    };
    match execute(kind, common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } | Error::Json(_) => 2,
                Error::Numeric { .. } => 3,
                _ => 1,
            })
        }
    }
}
