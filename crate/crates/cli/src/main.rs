use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nec_core::Prescription;
use nec_lab::run::fallback_out;
use nec_lab::{invoke, Invocation, Task};

#[derive(Parser)]
#[command(
    name = "nec-lab",
    version,
    about = "Cluster mean-field runs of the dissipative NEC model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Translationally invariant steady state from one initial state.
    Steady(Common),
    /// Hysteresis sweeps over a (T, h) grid.
    Sweep(Common),
    /// Sweep plus boundary detection, boundary fit and transition order.
    PhaseDiagram(Common),
    /// Momentum-resolved linear stability of a steady state.
    Stability(Common),
    /// Reabsorption of square minority islands on a cluster lattice.
    Island(Common),
    /// Boundary, velocity and linear-law fits of earlier outputs.
    Fit(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; overrides the config file.
    #[arg(long, env = "NEC_LAB_THREADS")]
    threads: Option<usize>,
    /// Output directory; overrides the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    prescription: Option<Prescription>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, c) = match cli.command {
        Command::Steady(c) => (Task::Steady, c),
        Command::Sweep(c) => (Task::Sweep, c),
        Command::PhaseDiagram(c) => (Task::PhaseDiagram, c),
        Command::Stability(c) => (Task::Stability, c),
        Command::Island(c) => (Task::Island, c),
        Command::Fit(c) => (Task::Fit, c),
    };
    let inv = Invocation {
        task,
        config: c.config,
        threads: c.threads,
        out: c.out,
        prescription: c.prescription,
    };
    match invoke(&inv) {
        Ok(m) => {
            eprintln!(
                "{}: {} outputs in {:.1} s{}",
                task.name(),
                m.outputs.len(),
                m.wall_time_s,
                if m.all_converged {
                    ""
                } else {
                    " (some points did not converge)"
                }
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = e.report(task);
            let body = serde_json::to_string_pretty(&report).expect("report serializes");
            let dir = fallback_out(&inv);
            if std::fs::create_dir_all(&dir).is_ok() {
                let _ = std::fs::write(dir.join(format!("{}.error.json", task.name())), format!("{body}\n"));
            }
            eprintln!("{body}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
