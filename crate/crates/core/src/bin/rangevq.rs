use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rangevq::config::RunConfig;
use rangevq::pipeline::{self, Layout};
use rangevq::{par, Error, Result};

/// Range-image LiDAR generation: synthetic data, VQ autoencoder, token prior,
/// sampling and evaluation.
#[derive(Parser)]
#[command(name = "rangevq", version)]
struct Cli {
    /// Run configuration (TOML). Without one the desk preset is used.
    #[arg(long, env = "RANGEVQ_CONFIG", global = true)]
    config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded execution for bit-stable artifacts.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train and test splits.
    SynthData,
    /// Project KITTI-style .bin clouds into range/mask grids.
    Project {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the autoencoder on the train split.
    TrainVqvae,
    /// Encode both splits into token grids.
    ExtractTokens,
    /// Train the token prior on the train tokens.
    TrainTransformer,
    /// Sample scans from the trained models.
    Sample {
        /// Sampling seed; defaults to the root seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a scan directory against another.
    Evaluate {
        /// Generated scans; defaults to the samples directory.
        #[arg(long)]
        gen: Option<PathBuf>,
        /// Reference scans; defaults to the test split.
        #[arg(long)]
        real: Option<PathBuf>,
        /// Report directory; defaults to <run_dir>/eval.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Baseline / raydrop loss / raydrop loss + GP ablation over several seeds.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Print the resolved configuration.
    ShowConfig,
}

fn run(cli: Cli) -> Result<()> {
    if cli.deterministic {
        par::set_threads(1);
    } else if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        par::set_threads(n);
    }
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::desk().resolve()?,
    };
    let layout = Layout::new(&cfg);
    match cli.command {
        Command::SynthData => {
            let (train, test) = pipeline::synth_data(&cfg)?;
            println!("wrote {} train and {} test scans to {}", train.count, test.count, cfg.paths.data_dir.display());
        }
        Command::Project { input, output } => {
            let n = pipeline::project_dir(&cfg, &input, &output)?;
            println!("projected {n} clouds into {}", output.display());
        }
        Command::TrainVqvae => {
            let log = pipeline::train_vqvae_stage(&cfg)?;
            if let Some(last) = log.rows.last() {
                println!(
                    "step {}: l_rec {:.5} l_rl {:.5} l_com {:.5} codebook usage {:.3}",
                    last.step, last.rec, last.raydrop, last.commit, last.usage
                );
            }
        }
        Command::ExtractTokens => {
            let (train, test) = pipeline::extract_tokens(&cfg)?;
            println!("encoded {train} train and {test} test grids into {}", layout.tokens.display());
        }
        Command::TrainTransformer => {
            let log = pipeline::train_transformer_stage(&cfg)?;
            if let Some((step, nll)) = log.last() {
                println!("step {step}: nll {nll:.5} nats/token");
            }
        }
        Command::Sample { seed } => {
            let scans = pipeline::sample(&cfg, seed)?;
            println!("wrote {} samples to {}", scans.len(), layout.samples.display());
        }
        Command::Evaluate { gen, real, out } => {
            let gen = gen.unwrap_or(layout.samples.clone());
            let real = real.unwrap_or(layout.test.clone());
            let out = out.unwrap_or(layout.eval.clone());
            let report = pipeline::evaluate_dirs(&cfg, &gen, &real, &out)?;
            print!("{}", report.to_csv());
            for note in &report.notes {
                eprintln!("note: {note}");
            }
        }
        Command::Ablate { seeds } => {
            let table = pipeline::ablate(&cfg, &seeds)?;
            print!("{}", table.summary_csv());
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
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
