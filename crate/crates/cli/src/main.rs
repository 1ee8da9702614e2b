use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gait::config::{parse_canvas, read_limbs, RunConfig};
use gait::error::{Error, Result};
use gait::pipeline::{self, DiffGaitState, GenDataOptions};

/// Skeleton-to-silhouette diffusion and gait retrieval.
#[derive(Debug, Parser)]
#[command(name = "gait", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset of walking figures.
    GenData {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        identities: u32,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        seqs_per_id: u32,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        frames: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Share of identities in the training split.
        #[arg(long, default_value_t = 0.5)]
        train_fraction: f64,
        /// Silhouette size as HxW.
        #[arg(long, value_parser = parse_canvas, default_value = "64x44")]
        canvas: [usize; 2],
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the silhouette denoiser.
    TrainDiffgait {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Steps to run in this invocation (default: diffgait.steps).
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from a DiffGait checkpoint and its step counter.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the reverse process on every frame of a skeleton file.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        skeletons: PathBuf,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the recognizer on top of a frozen DiffGait.
    TrainZipgait {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        diffgait_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gallery/probe retrieval metrics for a recognizer checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics file, or a directory to hold metrics.json.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set diffgait.lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Heat-map Gaussian width in pixels (heat.sigma).
    #[arg(long)]
    sigma: Option<f64>,
    /// Canvas as HxW (heat.canvas).
    #[arg(long, value_parser = parse_canvas)]
    canvas: Option<[usize; 2]>,
    /// JSON file of joint index pairs (heat.limbs).
    #[arg(long)]
    limbs: Option<PathBuf>,
}

impl ConfigArgs {
    fn given(&self) -> bool {
        self.config.is_some() || !self.overrides.is_empty() || self.sigma.is_some() || self.canvas.is_some() || self.limbs.is_some()
    }

    fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.sigma {
            overrides.push(format!("heat.sigma={s:?}"));
        }
        if let Some([h, w]) = self.canvas {
            overrides.push(format!("heat.canvas=[{h}, {w}]"));
        }
        if let Some(path) = &self.limbs {
            let pairs: Vec<String> = read_limbs(path)?.iter().map(|[a, b]| format!("[{a}, {b}]")).collect();
            overrides.push(format!("heat.limbs=[{}]", pairs.join(", ")));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { identities, seqs_per_id, frames, seed, train_fraction, canvas, out } => {
            let opts = GenDataOptions {
                identities: identities as usize,
                seqs_per_id: seqs_per_id as usize,
                frames: frames as usize,
                seed,
                train_fraction,
                canvas,
            };
            let s = pipeline::gen_data(&opts, &out)?;
            println!(
                "identities {} (train {}, test {}), sequences {}, frames {}",
                s.identities, s.train_identities, s.test_identities, s.sequences, s.frames
            );
        }
        Command::TrainDiffgait { config, data, out, steps, resume } => {
            let mut state = match &resume {
                Some(path) => {
                    let state = DiffGaitState::load(path)?;
                    if config.given() {
                        let wanted = config.load()?;
                        if wanted.hash() != state.config.hash() {
                            return Err(Error::checkpoint(path, "config hash differs from the one given on the command line"));
                        }
                    }
                    state
                }
                None => DiffGaitState::fresh(&config.load()?)?,
            };
            let steps = steps.unwrap_or(state.config.diffgait.steps);
            let r = pipeline::train_diffgait(&mut state, &data, &out, steps)?;
            println!("steps {}..={} final loss {:.6e}", r.first_step, r.last_step, r.final_loss);
            println!("checkpoint {}", r.checkpoint.display());
        }
        Command::Sample { ckpt, skeletons, steps, eta, out } => {
            let s = pipeline::sample(&ckpt, &skeletons, steps, eta, &out)?;
            println!("frames {} levels {} -> {}", s.frames, s.levels, s.composite_path.display());
        }
        Command::TrainZipgait { config, data, diffgait_ckpt, out } => {
            let cfg = config.load()?;
            let diffgait = DiffGaitState::load(&diffgait_ckpt)?;
            let (_, r) = pipeline::train_zipgait(&cfg, &data, diffgait, &out)?;
            println!("steps {}..={} final loss {:.6e}", r.first_step, r.last_step, r.final_loss);
            println!("checkpoint {}", r.checkpoint.display());
        }
        Command::Eval { ckpt, data, out } => {
            let e = pipeline::evaluate(&ckpt, &data, &out)?;
            let r = &e.result;
            println!("{:>8} {:>8} {:>8} {:>8} {:>9}", "rank1", "rank5", "mAP", "mINP", "excluded");
            println!("{:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>9}", r.rank1, r.rank5, r.map, r.minp, r.excluded_probes);
            println!("gallery {} probes {} -> {}", e.gallery.len(), e.probe.len(), e.metrics_path.display());
        }
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
