use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pixel_rsma::antenna_file::write_antenna_file;
use pixel_rsma::channel::{substream, synth_pixel_hardware, tag};
use pixel_rsma::config::ExperimentConfig;
use pixel_rsma::harness::{run_experiment, train_codebook_cmd, write_results};
use pixel_rsma::selftest::run_selftest;
use pixel_rsma::Error;

#[derive(Parser)]
#[command(name = "pixel-rsma", version, about = "Pixel-antenna rate-splitting downlink simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write a results CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a codebook with Lloyd's algorithm and save it.
    TrainCodebook {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic antenna of a config to an antenna data file.
    SynthAntenna {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in property checks.
    Selftest,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Csv(_) | Error::MissingCodebook(_) | Error::Parse { .. } => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows = run_experiment(&cfg)?;
            write_results(&rows, &out)?;
            for r in &rows {
                println!(
                    "{:<18} snr={:>6.2} dB  M={:>3}  sum_rate={:.4} +/- {:.4}",
                    r.scheme.name(),
                    r.snr_db,
                    r.m,
                    r.sum_rate,
                    r.stderr
                );
            }
            Ok(0)
        }
        Command::TrainCodebook { config, out } => {
            let outcome = train_codebook_cmd(&config, &out)?;
            for (i, r) in outcome.trace.iter().enumerate() {
                println!("iter {i:>3}  avg_sum_rate {r:.6}");
            }
            Ok(0)
        }
        Command::SynthAntenna { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let sc = &cfg.scenario;
            let (net, pats) = synth_pixel_hardware(sc, &mut substream(sc.seed, &[tag::HARDWARE]));
            write_antenna_file(&out, &net, &pats)?;
            Ok(0)
        }
        Command::Selftest => {
            let results = run_selftest();
            let mut failed = 0;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            Ok(if failed == 0 { 0 } else { 3 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
