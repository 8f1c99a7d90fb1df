use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mednet_cli::{
    cmd_ablation, cmd_analyze, cmd_eval, cmd_federated, cmd_flops, cmd_gendata, cmd_train, exit_code, Overrides,
    RunConfig, OUT_ENV,
};
use mednet_core::harness::Precision;
use mednet_core::{Error, ErrorCategory, Result};

#[derive(Debug, Parser)]
#[command(name = "mednet", version, about = "Efficient CNN classifier and federated-averaging simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides MEDNET_OUT and the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; 1 gives the bit-reproducible path.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, value_parser = parse_precision)]
    precision: Option<Precision>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Centralized training with checkpointing and early stopping.
    Train,
    /// Federated averaging over simulated clients.
    Federated,
    /// Train and score all nine head variants.
    Ablation,
    /// Per-layer FLOP and parameter counts.
    Flops,
    /// Pullback-metric spectra at test inputs.
    Analyze,
    /// Write the synthetic dataset as images plus a manifest.
    Gendata,
    /// Score a checkpoint.
    Eval,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    let base = match &cli.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    let overrides = Overrides { seed: cli.seed, output: cli.out.clone(), precision: cli.precision };
    let cfg = base.resolve(&overrides, std::env::var_os(OUT_ENV).map(PathBuf::from))?;
    match cli.command {
        Command::Train => {
            let s = cmd_train(&cfg)?;
            println!("best epoch {} of {}, val accuracy {:.4}", s.best_epoch, s.epochs_run, s.val.accuracy);
            if let Some(t) = &s.test {
                println!("test accuracy {:.4}", t.accuracy);
            }
        }
        Command::Federated => {
            let s = cmd_federated(&cfg)?;
            println!("{} rounds, {} clients, val accuracy {:.4}", s.rounds, s.clients, s.val.accuracy);
            if let Some(t) = &s.test {
                println!("test accuracy {:.4}", t.accuracy);
            }
        }
        Command::Ablation => {
            for r in cmd_ablation(&cfg)? {
                let f1 = r.f1.map_or("n/a".into(), |v| format!("{v:.4}"));
                println!("{:10} acc {:.4} f1 {f1} params {}", r.variant.name(), r.accuracy, r.params);
            }
        }
        Command::Flops => {
            let report = cmd_flops(&cfg)?;
            println!("{report}");
        }
        Command::Analyze => {
            for p in cmd_analyze(&cfg)? {
                let top: Vec<String> = p.spectrum.eigenvalues.iter().map(|v| format!("{v:.4e}")).collect();
                println!("point {} trace {:.4e} top [{}]", p.point, p.spectrum.trace, top.join(", "));
            }
        }
        Command::Gendata => {
            let s = cmd_gendata(&cfg)?;
            println!("{} ({} train, {} val, {} test)", s.manifest.display(), s.train, s.val, s.test);
        }
        Command::Eval => {
            let s = cmd_eval(&cfg)?;
            println!("val accuracy {:.4}", s.val.accuracy);
            if let Some(t) = &s.test {
                println!("test accuracy {:.4}", t.accuracy);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit_code(ErrorCategory::Config))
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error[{}]: {e}", category.as_str());
            ExitCode::from(exit_code(category))
        }
    }
}
