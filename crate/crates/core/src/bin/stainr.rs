use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stainrestorer::gradsuite::run_suite;
use stainrestorer::synthdata::{gen_dataset, read_ppm, write_ppm, Dataset, DatasetSpec, Split, StainMix};
use stainrestorer::train::{
    ablate, ablation_table, evaluate_split, load_model, restore_image, train, with_threads, TrainConfig,
};
use stainrestorer::{Error, GradcheckConfig, Result};

#[derive(Parser)]
#[command(name = "stainr", about = "Document stain removal: data, training, evaluation and inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stained-document dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        /// Defaults to `STAINR_SEED`, then 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Hold out one pair of every block of this many ids.
        #[arg(long, default_value_t = 10)]
        test_every: usize,
        /// Stain proportions, e.g. `black_tea:1,seal:2`.
        #[arg(long)]
        mix: Option<String>,
    },
    /// Train a model.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 256)]
        tile: usize,
        #[arg(long, default_value_t = 32)]
        overlap: usize,
        /// Also write per-image restored metrics as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Restore one PPM image.
    Restore {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 256)]
        tile: usize,
        #[arg(long, default_value_t = 32)]
        overlap: usize,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Check at most this many coordinates per case.
        #[arg(long, default_value_t = 200)]
        max_coords: usize,
    },
    /// Train and evaluate the four module toggles and print a table.
    Ablate(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set total_steps=500`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    /// File values, then environment, then flags.
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        cfg.apply_env()?;
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        if let Some(s) = self.steps {
            cfg.total_steps = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Defaults with `STAINR_SEED` / `STAINR_THREADS` applied.
fn env_defaults() -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    cfg.apply_env()?;
    Ok(cfg)
}

fn threads_from_env() -> Result<Option<usize>> {
    Ok(env_defaults()?.threads)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            count,
            height,
            width,
            seed,
            test_every,
            mix,
        } => {
            let mix = match mix {
                Some(m) => m.parse()?,
                None => StainMix::default(),
            };
            let seed = match seed {
                Some(s) => s,
                None => env_defaults()?.seed,
            };
            let spec = DatasetSpec {
                count,
                height,
                width,
                mix,
                seed,
                test_every,
            };
            let entries = with_threads(threads_from_env()?, || gen_dataset(&out, &spec))??;
            let test = entries.iter().filter(|e| e.split == Split::Test).count();
            println!("wrote {} pairs ({} train, {test} test) to {}", entries.len(), entries.len() - test, out.display());
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let every = (cfg.total_steps / 20).max(1);
            let out = train(&cfg, |r| {
                if r.step % every == 0 || r.step == 1 {
                    eprintln!("step {:>6}  lr {:.3e}  mse {:.6}  ssim {:.6}  total {:.6}", r.step, r.lr, r.mse, r.ssim, r.total);
                }
            })?;
            if let Some(last) = out.log.last() {
                println!("finished {} steps, final loss {:.6}", last.step, last.total);
            }
            if let Some(dir) = &cfg.out_dir {
                println!("checkpoint and loss log in {}", dir.display());
            }
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            tile,
            overlap,
            csv,
        } => {
            let split: Split = split.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            let (model, store, _) = load_model(&checkpoint)?;
            let ds = Dataset::open(&dataset)?;
            let label = checkpoint.display().to_string();
            let ev = with_threads(threads_from_env()?, || evaluate_split(&model, &store, &ds, split, tile, overlap, &label))??;
            print!("{}", ev.input.to_text());
            print!("{}", ev.restored.to_text());
            if let Some(path) = csv {
                std::fs::write(&path, ev.restored.to_csv()).map_err(|e| Error::Io { path, source: e })?;
            }
        }
        Command::Restore {
            checkpoint,
            input,
            output,
            tile,
            overlap,
        } => {
            let (model, store, _) = load_model(&checkpoint)?;
            let img = read_ppm(&input)?;
            let store64 = store.cast::<f64>();
            let out = restore_image(&model, &store64, &img, tile, overlap)?;
            write_ppm(&output, &out)?;
            println!("wrote {}", output.display());
        }
        Command::Gradcheck { seeds, max_coords } => {
            let seeds: Vec<u64> = (0..seeds).collect();
            let cfg = GradcheckConfig::default().with_max_coords(max_coords);
            let cases = run_suite(&seeds, &cfg)?;
            let mut worst = 0.0f64;
            for c in &cases {
                println!(
                    "{:<20} seed {:>3}  max rel err {:.3e}  {}",
                    c.op,
                    c.seed,
                    c.report.max_rel_err,
                    if c.report.passed { "ok" } else { "FAILED" }
                );
                worst = worst.max(c.report.max_rel_err);
            }
            if cases.iter().any(|c| !c.report.passed) {
                return Err(Error::GradcheckFailed {
                    max_rel: worst,
                    tol: cfg.tol,
                });
            }
        }
        Command::Ablate(args) => {
            let cfg = args.resolve()?;
            let rows = ablate(&cfg, |label, r| {
                if r.step % (cfg.total_steps / 10).max(1) == 0 {
                    eprintln!("[{label}] step {} total {:.6}", r.step, r.total);
                }
            })?;
            print!("{}", ablation_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
