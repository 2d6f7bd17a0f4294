use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stormcast::evalkit::CorrelationMode;
use stormcast::harness::config::ExperimentConfig;
use stormcast::harness::{run, HarnessError, Variant};

#[derive(Parser)]
#[command(name = "stormcast", version, about = "Evidential precipitation nowcasting workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment configuration (TOML); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `training.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `variant` (edl, p-edl, ensemble, mc-dropout).
    #[arg(long)]
    variant: Option<String>,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// Report directories (or run directories containing `report/`).
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Correlation curve to overlay: `raw` or `lead-one-normalized`.
    #[arg(long, default_value = "lead-one-normalized")]
    correlation: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or ingest) events and write them with a manifest.
    GenerateData(RunArgs),
    /// Train the configured variant.
    Train(RunArgs),
    /// Evaluate trained checkpoints on the test split.
    Evaluate(RunArgs),
    /// Side-by-side tables from several reports.
    Compare(ReportArgs),
    /// SVG figures from several reports.
    Figures(ReportArgs),
}

fn resolve(args: &RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.training.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(v) = &args.variant {
        cfg.variant = Variant::parse(v)?;
    }
    Ok(cfg)
}

fn mode(s: &str) -> Result<CorrelationMode, HarnessError> {
    match s {
        "raw" => Ok(CorrelationMode::Raw),
        "lead-one-normalized" => Ok(CorrelationMode::LeadOneNormalized),
        _ => Err(HarnessError::Config(format!("unknown correlation mode `{s}`"))),
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::GenerateData(a) => {
            let ds = run::run_generate(&resolve(&a)?)?;
            println!("{}", ds.manifest.to_text().trim_end());
        }
        Command::Train(a) => {
            let cfg = resolve(&a)?;
            let t = run::run_train(&cfg)?;
            for (name, h) in &t.curves {
                if let Some(last) = h.last() {
                    println!("{name}: {} epochs, final train loss {}, val {}", h.len(), last.train_loss, last.val_metric);
                }
            }
        }
        Command::Evaluate(a) => {
            let r = run::run_evaluate(&resolve(&a)?)?;
            let csi: Vec<String> = r.csi.rows.iter().map(|c| format!("{}:{:.4}", c.threshold, c.csi)).collect();
            println!("{} on {} samples; CSI {}", r.variant, r.n_samples, csi.join(" "));
        }
        Command::Compare(a) => run::run_compare(&a.reports, &a.out, mode(&a.correlation)?)?,
        Command::Figures(a) => {
            for f in run::run_figures(&a.reports, &a.out, mode(&a.correlation)?)? {
                println!("{}", a.out.join(f).display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
