use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use circle_entropy::ball::{distortion_profile, Ball};
use circle_entropy::pipeline::{compare_reports, run_scenario_file, ReportCurves};
use circle_entropy::scenario::Scenario;
use circle_entropy::Result;

#[derive(Parser)]
#[command(
    name = "circle-entropy",
    version,
    about = "Entropy estimates for group actions on the circle"
)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory (default: ./out/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the entropy slopes of two reports.
    Compare {
        report_a: PathBuf,
        report_b: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        tolerance: f64,
    },
    /// Norms of the powers of a word and the resulting staircase.
    ProfileDistortion {
        config: PathBuf,
        word: String,
        /// Largest power (default: 2·n_max).
        #[arg(long)]
        r_max: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Run { config, out } => {
            let out = match out {
                Some(o) => o,
                None => PathBuf::from("out").join(Scenario::load(&config)?.name),
            };
            let outcome = run_scenario_file(&config, Some(&out))?;
            for v in &outcome.report.checks {
                println!("{} {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
            }
            for (stage, secs) in &outcome.timing.stages {
                eprintln!("{stage}: {secs:.3}s");
            }
            println!("artifacts in {}", out.display());
            Ok(outcome.report.all_passed)
        }
        Command::Compare {
            report_a,
            report_b,
            tolerance,
        } => {
            let a = ReportCurves::load(&report_a)?;
            let b = ReportCurves::load(&report_b)?;
            let cmp = compare_reports(&a, &b, tolerance)?;
            println!("{}", serde_json::to_string_pretty(&cmp)?);
            Ok(cmp.iter().all(|c| c.verdict == "consistent"))
        }
        Command::ProfileDistortion { config, word, r_max } => {
            let sc = Scenario::load(&config)?;
            let system = sc.system()?;
            let w = system.parse_word(&word)?.reduced(&system);
            let ball = Ball::enumerate(&system, sc.n_max, sc.fingerprint(), sc.tolerances.max_ball_size)?;
            let profile = distortion_profile(&ball, &w, r_max.unwrap_or(2 * sc.n_max))?;
            println!("{}", serde_json::to_string_pretty(&profile)?);
            Ok(true)
        }
    }
}
