//! `swarmtable` command line.
//!
//! Exit status: 0 success, 1 I/O or log parse failure, 2 bad configuration
//! or usage, 3 runtime violation during a run.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use swarmtable::metrics::{compute, ErrorStats, Summary};
use swarmtable::plotdata::{write_plotdata, PlotKind};
use swarmtable::runner::{run_to_dir, RunError, SUMMARY_FILE, TRAJECTORY_FILE};
use swarmtable::scenario::Scenario;
use swarmtable::trajectory::read_trajectory;

#[derive(Debug, Parser)]
#[command(
    name = "swarmtable",
    version,
    about = "Tabletop differential-drive swarm simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write trajectory.jsonl, summary.json and config.resolved.json.
    Run {
        /// Scenario file (TOML, or JSON with a .json extension).
        scenario: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override a scenario key, e.g. `--set swarm.gain_epsilon=0.1`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Print metrics for a trajectory log.
    Metrics {
        trajectory: PathBuf,
        /// Emit JSON instead of a text table.
        #[arg(long)]
        json: bool,
    },
    /// Export a CSV table for plotting.
    Plotdata {
        trajectory: PathBuf,
        #[arg(long)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn stats_line(name: &str, s: &Option<ErrorStats>) -> String {
    match s {
        Some(s) => format!(
            "{name:<18} mean {:.4} m  std {:.4} m  max {:.4} m  (n={})",
            s.mean_m, s.std_m, s.max_m, s.samples
        ),
        None => format!("{name:<18} n/a"),
    }
}

fn print_text(m: &Summary) -> io::Result<()> {
    let mut o = io::stdout().lock();
    writeln!(o, "steps              {}", m.steps)?;
    writeln!(o, "robots             {}", m.robots)?;
    writeln!(o, "duration           {:.3} s", m.duration_s)?;
    writeln!(o, "{}", stats_line("odom vs truth", &m.odom_vs_truth))?;
    writeln!(o, "{}", stats_line("odom vs camera", &m.odom_vs_camera))?;
    writeln!(o, "{}", stats_line("camera vs truth", &m.camera_vs_truth))?;
    if let Some(v) = m.max_speed_mps {
        writeln!(o, "max speed          {v:.4} m/s")?;
    }
    if let Some(p) = &m.pairwise {
        writeln!(o,
            "pairwise           min over run {:.4} m  initial max {:.4} m  final max {:.4} m  final min {:.4} m",
            p.min_over_run_m, p.initial_max_m, p.final_max_m, p.final_min_m
        )?;
    }
    if let Some(e) = m.formation_error_m {
        writeln!(o, "formation error    {e:.4} m")?;
    }
    match m.convergence_step {
        Some(k) => writeln!(o, "converged at step  {k}")?,
        None => writeln!(o, "converged at step  never")?,
    }
    if let Some(v) = m.final_convergence_measure_m {
        writeln!(o, "final measure      {v:.4} m")?;
    }
    for r in &m.per_robot {
        writeln!(
            o,
            "  {:<8} path {:.3} m  max speed {} m/s  battery {} Wh  odom err mean {}",
            r.robot_id,
            r.path_length_m,
            r.max_speed_mps.map_or("n/a".into(), |v| format!("{v:.4}")),
            r.final_battery_wh
                .map_or("n/a".into(), |v| format!("{v:.4}")),
            r.odom_vs_truth
                .as_ref()
                .map_or("n/a".into(), |s| format!("{:.4} m", s.mean_m)),
        )?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| {
        let code = if e.use_stderr() { 2 } else { 0 };
        let _ = e.print();
        std::process::exit(code);
    });
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            mut set,
        } => {
            if let Some(seed) = seed {
                set.push(format!("seed={seed}"));
            }
            let s = match Scenario::load(&scenario, &set) {
                Ok(s) => s,
                Err(e) => return fail(2, e),
            };
            match run_to_dir(&s, &out) {
                Ok(summary) => {
                    eprintln!(
                        "wrote {} and {} to {} ({} steps, stopped: {:?})",
                        TRAJECTORY_FILE,
                        SUMMARY_FILE,
                        out.display(),
                        summary.run.steps,
                        summary.run.stop_reason
                    );
                    ExitCode::SUCCESS
                }
                Err(e @ RunError::Violation { .. }) => fail(3, e),
                Err(e) => fail(e.exit_code() as u8, e),
            }
        }
        Command::Metrics { trajectory, json } => {
            let file = match File::open(&trajectory) {
                Ok(f) => f,
                Err(e) => return fail(1, format!("{}: {e}", trajectory.display())),
            };
            let traj = match read_trajectory(BufReader::new(file)) {
                Ok(t) => t,
                Err(e) => return fail(1, format!("{}: {e}", trajectory.display())),
            };
            let m = compute(&traj);
            if json {
                let stdout = io::stdout();
                let mut lock = stdout.lock();
                if serde_json::to_writer_pretty(&mut lock, &m).is_err() || writeln!(lock).is_err() {
                    return fail(1, "cannot write to stdout");
                }
            } else {
                // A closed pipe is not an error worth reporting.
                let _ = print_text(&m);
            }
            ExitCode::SUCCESS
        }
        Command::Plotdata {
            trajectory,
            kind,
            out,
        } => {
            let traj = match File::open(&trajectory)
                .map_err(|e| e.to_string())
                .and_then(|f| read_trajectory(BufReader::new(f)).map_err(|e| e.to_string()))
            {
                Ok(t) => t,
                Err(e) => return fail(1, format!("{}: {e}", trajectory.display())),
            };
            let file = match File::create(&out) {
                Ok(f) => f,
                Err(e) => return fail(1, format!("{}: {e}", out.display())),
            };
            match write_plotdata(&traj, kind, BufWriter::new(file)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(1, e),
            }
        }
    }
}
