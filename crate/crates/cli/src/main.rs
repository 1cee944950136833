use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use repstat_cli::pipeline::{
    run_avgu, run_cka, run_correlate, run_features, run_pool, run_report, AvgURequest, CkaRequest,
    RunSummary, Target,
};
use repstat_core::cka::CkaVariant;
use repstat_core::cluster::{DistanceSpec, Metric};
use repstat_core::manifest::read_manifest;
use repstat_core::LabelKey;

/// Layer-wise CKA and class-clustering statistics for speech representations.
#[derive(Parser)]
#[command(name = "repstat", version)]
struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract acoustic features for every utterance.
    Features {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Pool layer tensors over aligned segments and write them as CSV.
    Pool {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        layers: PathBuf,
        #[arg(long)]
        vowels_only: bool,
    },
    /// CKA between every layer and an acoustic target.
    Cka {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        layers: PathBuf,
        /// f0_centroid, f1_f2, mfcc, mel or fbank.
        #[arg(long)]
        target: Target,
        #[arg(long, default_value = "literal")]
        variant: CkaVariant,
        #[arg(long)]
        vowels_only: bool,
        /// Skip the MFCC, log-mel and fbank reference curves.
        #[arg(long)]
        no_baselines: bool,
    },
    /// Per-layer AvgU for one label.
    Avgu {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        layers: PathBuf,
        /// phone, speaker, dataset or gender.
        #[arg(long)]
        label: LabelKey,
        /// Report the change in AvgU after per-dimension standardization.
        #[arg(long)]
        normalized: bool,
        #[arg(long, default_value = "euclidean")]
        metric: Metric,
        #[arg(long)]
        no_baselines: bool,
    },
    /// Correlate per-model peak AvgU with downstream scores.
    Correlate {
        #[arg(long)]
        sweeps: PathBuf,
        #[arg(long)]
        downstream: PathBuf,
        #[arg(long)]
        label: LabelKey,
    },
    /// Render a sweep CSV as an SVG line chart.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        svg: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("REPSTAT_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("REPSTAT_THREADS={v:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn report(summary: &RunSummary) -> u8 {
    for path in &summary.outputs {
        println!("wrote {}", path.display());
    }
    for f in &summary.failures {
        eprintln!("failed {}: {}", f.item, f.reason);
    }
    if !summary.failures.is_empty() {
        eprintln!("{} of {} items failed", summary.failures.len(), summary.failures.len() + summary.succeeded);
    }
    summary.exit_code() as u8
}

fn run(cli: Cli) -> Result<u8> {
    configure_threads()?;
    let code = match cli.command {
        Command::Features { manifest } => report(&run_features(&read_manifest(&manifest)?)?),
        Command::Pool {
            manifest,
            layers,
            vowels_only,
        } => report(&run_pool(&read_manifest(&manifest)?, &layers, vowels_only)?),
        Command::Cka {
            manifest,
            layers,
            target,
            variant,
            vowels_only,
            no_baselines,
        } => {
            let req = CkaRequest {
                target,
                variant,
                vowels_only,
                baselines: !no_baselines,
            };
            let run = run_cka(&read_manifest(&manifest)?, &layers, &req)?;
            report(&run.summary)
        }
        Command::Avgu {
            manifest,
            layers,
            label,
            normalized,
            metric,
            no_baselines,
        } => {
            let req = AvgURequest {
                label,
                distance: DistanceSpec::new(metric),
                normalized,
                baselines: !no_baselines,
            };
            let run = run_avgu(&read_manifest(&manifest)?, &layers, &req)?;
            report(&run.summary)
        }
        Command::Correlate {
            sweeps,
            downstream,
            label,
        } => {
            let c = run_correlate(&sweeps, &downstream, label, cli.seed)?;
            for (model, peak, score) in &c.models {
                println!("{model}\t{peak}\t{score}");
            }
            let r = &c.result;
            println!(
                "r={} p_t={} p_perm={} ({}) n={}",
                r.r,
                r.p_t,
                r.p_perm,
                if r.exhaustive { "exhaustive" } else { "sampled" },
                r.n
            );
            if !c.missing.is_empty() {
                eprintln!("{} models without downstream scores: {}", c.missing.len(), c.missing.join(", "));
            }
            0
        }
        Command::Report { input, svg } => {
            run_report(&input, &svg)?;
            println!("wrote {}", svg.display());
            0
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
