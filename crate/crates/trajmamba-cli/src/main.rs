use clap::{Parser, Subcommand};
use std::path::PathBuf;
use trajmamba::config::RunConfig;
use trajmamba_cli::*;

#[derive(Parser)]
#[command(
    name = "trajmamba",
    about = "Trajectory representation learning: synthetic data, dual-branch SSM pretraining, learnable compression, downstream evaluation",
    version
)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Caps data-parallel workers (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,

    /// Numeric precision (32 or 64).
    #[arg(long, global = true)]
    precision: Option<u32>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic world and trajectory splits.
    Synth,
    /// Travel-purpose contrastive pretraining (produces the teacher).
    PretrainPurpose,
    /// Knowledge-distillation pretraining (produces the student).
    PretrainKd,
    /// Evaluate a downstream task.
    Eval {
        /// dp | ate | sts
        #[arg(long)]
        task: String,
        /// ft | frozen
        #[arg(long, default_value = "frozen")]
        mode: String,
    },
    /// Wall-time benchmark of the encoder over sequence length.
    BenchScan,
    /// Run the registered finite-difference check suite.
    Gradcheck,
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(CliError::from)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if let Some(precision) = cli.precision {
        cfg.precision = precision;
        if precision != 32 && precision != 64 {
            return Err(CliError::usage(format!(
                "precision must be 32 or 64, got {precision}"
            )));
        }
    }
    cfg.validate().map_err(CliError::from)?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Synth => {
            let stats = cmd_synth(&cfg, cli.force)?;
            print!("{}", stats.table());
        }
        Command::PretrainPurpose => {
            let out = cmd_pretrain_purpose(&cfg, cli.force, None)?;
            println!(
                "purpose pretraining: {} steps, final loss {:.4}",
                out.steps, out.final_loss
            );
            if let Some(acc) = out.retrieval_acc1 {
                println!("in-batch road-view retrieval acc@1: {acc:.3}");
            }
            println!("teacher checkpoint: {}", out.teacher_path.display());
        }
        Command::PretrainKd => {
            let out = cmd_pretrain_kd(&cfg, cli.force, None)?;
            println!(
                "distillation: {} steps, final loss {:.4}",
                out.steps, out.final_loss
            );
            if let Some(len) = out.compressed_lengths.last() {
                println!("mean compressed length: {len:.2}");
            }
            println!("student checkpoint: {}", out.student_path.display());
        }
        Command::Eval { task, mode } => {
            let task = EvalTask::parse(&task)?;
            let mode = EvalMode::parse(&mode)?;
            let report = cmd_eval(&cfg, task, mode, cli.force)?;
            println!("{report:#}");
        }
        Command::BenchScan => {
            let summary = cmd_bench_scan(&cfg)?;
            println!("n,mode,millis");
            for row in &summary.rows {
                println!("{},{},{:.4}", row.n, row.mode, row.millis);
            }
            println!("linear fit R^2 (sequential): {:.5}", summary.linear_fit_r2);
            if let Some(p) = &summary.csv_path {
                println!("written to {}", p.display());
            }
        }
        Command::Gradcheck => {
            cmd_gradcheck(&cfg)?;
            println!("all gradient checks passed");
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
