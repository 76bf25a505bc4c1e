use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mambavsr::harness::{
    bench, bench_csv, degrade, frame_scan_order, load_clip, load_frame, resolve_config, run_sr, save_clip,
    write_scan_viz, SrRequest,
};
use mambavsr::metrics::{clip_metrics, ChannelMode};
use mambavsr::pipeline::{ModelWeights, ScanMode};
use mambavsr::Error;

#[derive(Parser)]
#[command(name = "mambavsr", version, about = "Video super-resolution with a content-aware scan compass")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Super-resolve a clip directory into PNG frames.
    Sr {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// MVSRW1 weights; initialized from the config seed when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// raster, fiedler or content_aware.
        #[arg(long)]
        scan_mode: Option<ScanMode>,
        /// Directory of flow_fwd_%04d.mvt and flow_bwd_%04d.mvt files.
        #[arg(long)]
        flows: Option<PathBuf>,
        /// Ground-truth clip; writes metrics.csv into the output directory.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// rgb or y.
        #[arg(long)]
        channel: Option<ChannelMode>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-frame PSNR and SSIM between two clip directories, as CSV.
    PsnrSsim {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "rgb")]
        channel: ChannelMode,
        /// Also write the CSV here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Export the scan order of one frame as order.csv and rank.png.
    ScanViz {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scan_mode: Option<ScanMode>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Throughput and deviation of the chunked scan against the sequential one.
    Bench {
        #[arg(long = "L", default_value_t = 256)]
        len: usize,
        #[arg(long = "C", default_value_t = 16)]
        channels: usize,
        #[arg(long = "N", default_value_t = 16)]
        state_dim: usize,
        /// Chunk lengths; defaults to L.
        #[arg(long, value_delimiter = ',')]
        chunk: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Bicubic downscaling of a clip directory.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4)]
        factor: usize,
    },
    /// Write freshly initialized weights for a config.
    InitWeights {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument { .. } | Error::ShapeMismatch { .. } => 2,
        Error::Io(_) | Error::Image(_) | Error::Truncated { .. } | Error::BadMagic { .. } | Error::DuplicateName(_) => 3,
        Error::ModelMismatch(_) => 4,
        Error::NonFinite { .. } | Error::NonFiniteScan { .. } | Error::NoConvergence { .. } => 5,
    }
}

/// Failure after the command itself completed.
enum Failure {
    Lib(Error),
    BenchFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Sr {
            input,
            output,
            weights,
            config,
            scan_mode,
            flows,
            gt,
            channel,
            seed,
        } => {
            let report = run_sr(&SrRequest {
                input,
                output: output.clone(),
                weights,
                config,
                scan_mode,
                flows,
                gt,
                channel,
                seed,
            })?;
            match report {
                Some(r) => println!(
                    "wrote {} frames to {}; mean PSNR {:.4} dB, SSIM {:.6}",
                    r.psnr.len(),
                    output.display(),
                    r.mean_psnr(),
                    r.mean_ssim()
                ),
                None => println!("wrote frames to {}", output.display()),
            }
        }
        Command::PsnrSsim { a, b, channel, output } => {
            let (a, b) = (load_clip(a)?, load_clip(b)?);
            let csv = clip_metrics(&a.frames, &b.frames, channel)?.to_csv();
            if let Some(p) = output {
                fs::write(p, &csv)?;
            }
            print!("{csv}");
        }
        Command::ScanViz {
            input,
            config,
            scan_mode,
            output,
        } => {
            let cfg = resolve_config(config.as_deref(), scan_mode, None)?;
            let order = frame_scan_order(&load_frame(&input)?, &cfg)?;
            write_scan_viz(&output, &order)?;
            println!("{} scan over {} sites written to {}", cfg.scan_mode.name(), order.len(), output.display());
        }
        Command::Bench {
            len,
            channels,
            state_dim,
            chunk,
            reps,
            seed,
            output,
        } => {
            let chunks = if chunk.is_empty() { vec![len] } else { chunk };
            let rows = chunks
                .iter()
                .map(|&c| bench(len, channels, state_dim, c, reps, seed))
                .collect::<Result<Vec<_>, _>>()?;
            let csv = bench_csv(&rows);
            if let Some(p) = output {
                fs::write(p, &csv)?;
            }
            print!("{csv}");
            if rows.iter().any(|r| !r.passed()) {
                return Err(Failure::BenchFailed);
            }
        }
        Command::Degrade { input, output, factor } => {
            let clip = load_clip(input)?;
            save_clip(&output, &degrade(&clip.frames, factor)?, &clip.names)?;
            println!("wrote {} frames to {}", clip.names.len(), output.display());
        }
        Command::InitWeights { config, output, seed } => {
            let cfg = resolve_config(config.as_deref(), None, seed)?;
            let w = ModelWeights::init(&cfg)?;
            w.save(&output)?;
            println!("{} parameters written to {}", w.count_params(), output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::BenchFailed) => {
            eprintln!("error: deviation above tolerance");
            ExitCode::from(5)
        }
    }
}
