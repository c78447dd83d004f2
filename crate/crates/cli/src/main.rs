use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mrt_cli::{
    cmd_eval, cmd_export_attention, cmd_gen_data, cmd_predict, cmd_train, CliError, EvalArgs,
    ExportArgs, GenDataArgs, PredictArgs, RunConfig,
};

/// Multi-person motion prediction with a multi-range transformer.
#[derive(Parser)]
#[command(name = "mrt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus of scene files plus a manifest.
    GenData {
        #[arg(long, default_value_t = 3)]
        persons: usize,
        #[arg(long, default_value_t = 60)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 15)]
        joints: usize,
        /// Held-out scenes [default: a quarter of --scenes]
        #[arg(long)]
        test_scenes: Option<usize>,
        /// Placement square in m² [default: 25 up to 3 persons, else 100]
        #[arg(long)]
        area: Option<f64>,
    },
    /// Train predictor and discriminator on a corpus.
    Train {
        /// TOML run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override any key, e.g. `--set model.d_model=64`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Total step count (train.max_steps).
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict future motion autoregressively from a scene's first steps.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 3)]
        chunks: usize,
        #[arg(long)]
        out: PathBuf,
        /// Attention record file [default: <out>.attention.json]
        #[arg(long)]
        records: Option<PathBuf>,
        /// Observed steps [default: the model's history length]
        #[arg(long)]
        history: Option<usize>,
    },
    /// Compare predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Truth step aligned with the first predicted step [default: align ends]
        #[arg(long)]
        offset: Option<usize>,
        #[arg(long, default_value_t = 0)]
        root: usize,
    },
    /// Write decoder attention tables from a prediction's record file.
    ExportAttention {
        #[arg(long)]
        pred_records: PathBuf,
        /// Decoder layer, counting from 1.
        #[arg(long, default_value_t = 1)]
        layer: usize,
        /// Predicted chunk, counting from 1.
        #[arg(long, default_value_t = 1)]
        chunk: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData {
            persons,
            steps,
            scenes,
            seed,
            out,
            joints,
            test_scenes,
            area,
        } => {
            let m = cmd_gen_data(&GenDataArgs {
                persons,
                steps,
                scenes,
                seed,
                out: out.clone(),
                joints,
                test_scenes,
                area,
            })?;
            println!(
                "{} train / {} test scenes in {}",
                m.train.len(),
                m.test.len(),
                out.display()
            );
        }
        Command::Train {
            config,
            mut sets,
            corpus,
            out,
            seed,
            steps,
            resume,
        } => {
            let quote = |p: PathBuf| format!("{:?}", p.to_string_lossy());
            sets.extend(corpus.map(|p| format!("corpus={}", quote(p))));
            sets.extend(out.map(|p| format!("out_dir={}", quote(p))));
            sets.extend(seed.map(|s| format!("seed={s}")));
            sets.extend(steps.map(|s| format!("train.max_steps={s}")));
            let cfg = RunConfig::resolve(config.as_deref(), std::env::vars(), &sets)?;
            let summary = cmd_train(&cfg, resume.as_deref())?;
            println!(
                "trained to step {}; checkpoint {}",
                summary.step,
                summary.checkpoint.display()
            );
        }
        Command::Predict {
            checkpoint,
            scene,
            chunks,
            out,
            records,
            history,
        } => {
            let s = cmd_predict(&PredictArgs {
                checkpoint,
                scene,
                chunks,
                out: out.clone(),
                records,
                history,
            })?;
            println!(
                "predicted {} steps for {} persons from {} observed; wrote {} and {}",
                s.predicted,
                s.persons,
                s.observed,
                out.display(),
                s.records.display()
            );
        }
        Command::Eval {
            pred,
            truth,
            out,
            offset,
            root,
        } => {
            let r = cmd_eval(&EvalArgs {
                pred,
                truth,
                out,
                offset,
                root,
            })?;
            print!("{}", r.report.summary());
        }
        Command::ExportAttention {
            pred_records,
            layer,
            chunk,
            out,
        } => {
            let tables = cmd_export_attention(&ExportArgs {
                records: pred_records,
                layer,
                chunk,
                out: out.clone(),
            })?;
            println!(
                "wrote {} attention tables to {}",
                tables.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("MRT_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
