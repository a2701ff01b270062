use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wavframe::commands::{self, TrainOptions, VerifyOptions};
use wavframe::config::RunConfig;
use wavframe::Result;

#[derive(Parser)]
#[command(
    name = "wavframe",
    version,
    about = "Convolutional framelet denoising for low-dose CT"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the one in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate phantoms, projections and low-dose reconstructions.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the network on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint that holds optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop when the optimizer reaches this step.
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long)]
        checkpoint_every: Option<u64>,
        #[arg(long, default_value_t = 50)]
        progress_every: u64,
    },
    /// Denoise a dataset directory or a single tensor image.
    Denoise {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Ground truth for a single-image input.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Singular spectra of module feature maps.
    Spectrum {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory or single tensor image.
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the numerical self-checks.
    Verify {
        /// Scale the dual filter of BAND by FACTOR (fault injection).
        #[arg(long, num_args = 2, value_names = ["BAND", "FACTOR"])]
        corrupt_dual: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// RMSE, PSNR and SSIM between two tensor images.
    Metrics {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| wavframe::Error::Config(e.to_string()))?;
    }
    let cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    }
    .resolved(cli.common.seed);
    match cli.command {
        Command::GenData { out } => {
            let m = commands::gen_data(&cfg, &out)?;
            println!("wrote {} samples to {}", m.samples.len(), out.display());
        }
        Command::Train {
            data,
            out,
            resume,
            max_steps,
            checkpoint_every,
            progress_every,
        } => {
            let opts = TrainOptions {
                resume,
                max_steps,
                checkpoint_every,
                progress_every: Some(progress_every),
            };
            let m = commands::train(&cfg, &data, &out, &opts)?;
            println!(
                "trained steps {}..{} of {}; final loss {}; checkpoint in {}",
                m.start_step,
                m.final_step,
                m.total_steps,
                m.final_loss.map_or("-".into(), |l| format!("{l:.4e}")),
                out.display()
            );
        }
        Command::Denoise {
            checkpoint,
            input,
            reference,
            out,
        } => {
            commands::denoise(&cfg, &checkpoint, &input, reference.as_deref(), &out)?;
            print!(
                "{}",
                std::fs::read_to_string(out.join(commands::REPORT_TEXT)).unwrap_or_default()
            );
        }
        Command::Spectrum {
            checkpoint,
            probe,
            out,
        } => {
            for p in commands::spectrum(&cfg, &checkpoint, &probe, &out)? {
                let tails: Vec<String> =
                    p.tail_masses().iter().map(|t| format!("{t:.4}")).collect();
                println!("{}\ttail mass per module: {}", p.name, tails.join(" "));
            }
        }
        Command::Verify { corrupt_dual, out } => {
            let corrupt_dual = corrupt_dual.map(|v| (v[0] as usize, v[1]));
            let checks = commands::verify(&cfg, &VerifyOptions { corrupt_dual })?;
            let text = commands::format_checks(&checks);
            print!("{text}");
            if let Some(out) = out {
                let staged = wavframe::fsutil::StagedDir::new(&out)?;
                wavframe::fsutil::write_atomic(&staged.join("verify.txt"), text.as_bytes())?;
                staged.commit()?;
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
        Command::Metrics {
            estimate,
            reference,
            out,
        } => {
            let r = commands::metrics_cmd(&cfg, &estimate, &reference, out.as_deref())?;
            println!(
                "rmse\t{:e}\npsnr\t{:.4}\nssim\t{:.6}",
                r.rmse, r.psnr, r.ssim
            );
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
