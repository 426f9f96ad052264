use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hopsense::protocol::ProtocolKind;
use hopsense::skeleton::CalibrationPose;

mod commands;

#[derive(Parser)]
#[command(name = "hopsense", version, about = "Simulate, analyze and benchmark wearable IMU capture sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario end to end and write its recording, ground truth,
    /// radio trace and metrics.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute joint angles, sample rates and a summary from a recording.
    Analyze {
        recording: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated joint labels; defaults to every joint the
        /// recording's sensors cover.
        #[arg(long, value_delimiter = ',')]
        joints: Vec<String>,
        /// Pose held while the calibration rows were captured.
        #[arg(long, default_value = "neutral")]
        pose: CalibrationPose,
        /// Sliding window for rate series, seconds.
        #[arg(long, default_value_t = 1.0)]
        window: f64,
    },
    /// Compare one joint between two recordings.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        joint: String,
        #[arg(long, default_value = "neutral")]
        pose: CalibrationPose,
        /// Also write the aligned series and report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario under several protocols across many seeds.
    ProtocolBench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "cw,ble-baseline")]
        protocols: Vec<ProtocolKind>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// First seed; later runs use consecutive seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { scenario, out, seed } => commands::simulate(&scenario, &out, seed),
        Command::Analyze {
            recording,
            out,
            joints,
            pose,
            window,
        } => commands::analyze(&recording, &out, &joints, pose, window),
        Command::Compare { a, b, joint, pose, out } => commands::compare(&a, &b, &joint, pose, out.as_deref()),
        Command::ProtocolBench {
            scenario,
            protocols,
            seeds,
            seed,
            out,
        } => commands::protocol_bench(&scenario, &protocols, seeds, seed, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
