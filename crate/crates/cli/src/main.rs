//! `qtime`: batch front end for fidelity-optimal control and time-complexity
//! estimation.
//!
//! Exit codes: 0 success, 1 invalid input or I/O failure, 2 solve did not
//! converge, 3 not enough data inside the fit window.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "qtime",
    version,
    about = "Fidelity-optimal quantum control and time-complexity estimation"
)]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum FitModelArg {
    Power,
    Linear,
    Exp2,
}

#[derive(Subcommand)]
enum Command {
    /// List the ordered control generators with parity and weight tags.
    Basis {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        json: bool,
    },
    /// Build a target unitary and report its exact or bounding times.
    Target {
        /// qft or asym for any n, cnot or swap for n=2, w for n=1.
        #[arg(long)]
        name: String,
        #[arg(long)]
        n: usize,
        /// Write the matrix as CSV rows of `row,col,re,im`.
        #[arg(long)]
        dump_matrix: Option<PathBuf>,
        /// Write the textbook QFT gate sequence as a JSON list.
        #[arg(long)]
        dump_sequence: Option<PathBuf>,
    },
    /// Solve for a maximal-fidelity field at one total time.
    Solve {
        /// JSON run configuration; replaces the individual flags.
        #[arg(long, conflicts_with_all = ["target", "n", "t", "seed"])]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "config")]
        target: Option<String>,
        #[arg(long, required_unless_present = "config")]
        n: Option<usize>,
        /// Total time in units of T2max.
        #[arg(long, required_unless_present = "config")]
        t: Option<f64>,
        #[arg(long, required_unless_present = "config")]
        seed: Option<u64>,
        #[arg(long)]
        slices: Option<usize>,
        #[arg(long)]
        max_cycles: Option<usize>,
        /// Output directory.
        #[arg(long, env = "QTIME_OUT", default_value = ".")]
        out: PathBuf,
        /// File stem for `<name>.json` and `<name>_field.csv`.
        #[arg(long, default_value = "solve")]
        name: String,
    },
    /// Run a fidelity-time sweep into a branch store.
    Sweep {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, env = "QTIME_OUT")]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long, env = "QTIME_JOBS")]
        jobs: Option<usize>,
        /// After the sweep, add this many times inside the fit window and
        /// sweep them into `<out>/refine`.
        #[arg(long)]
        refine: Option<usize>,
        #[arg(long, default_value = "0.002:0.01")]
        window: String,
    },
    /// Fit the unit-fidelity limit of an envelope.
    Estimate {
        /// Envelope CSV files; points at equal times keep the best fidelity.
        #[arg(long = "envelope")]
        envelopes: Vec<PathBuf>,
        /// Sweep store; reads its envelope and that of a `refine` sub-store.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value = "0.002:0.01")]
        window: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a model to `x,y` points.
    Fit {
        #[arg(long, value_enum)]
        model: FitModelArg,
        #[arg(long = "in")]
        input: PathBuf,
        /// `lo:hi` bounds on y, power model only.
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run structural checks on a solve record.
    Verify {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "lambda,onequbit,timereversal,costate,graded")]
        checks: String,
        /// Directory for the JSON report and per-generator CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    let result = match cli.command {
        Command::Basis { n, json } => commands::basis(n, json),
        Command::Target {
            name,
            n,
            dump_matrix,
            dump_sequence,
        } => commands::target(&name, n, dump_matrix.as_deref(), dump_sequence.as_deref()),
        Command::Solve {
            config,
            target,
            n,
            t,
            seed,
            slices,
            max_cycles,
            out,
            name,
        } => config::RunConfig::resolve(config.as_deref(), target, n, t, seed, slices, max_cycles)
            .and_then(|cfg| commands::solve(&cfg, &out, &name)),
        Command::Sweep {
            plan,
            out,
            resume,
            jobs,
            refine,
            window,
        } => config::parse_window(&window)
            .and_then(|w| commands::sweep(&plan, &out, resume, jobs, refine, w)),
        Command::Estimate {
            envelopes,
            store,
            window,
            out,
        } => config::parse_window(&window)
            .and_then(|w| commands::estimate(&envelopes, store.as_deref(), w, out.as_deref())),
        Command::Fit {
            model,
            input,
            window,
            out,
        } => window
            .as_deref()
            .map(config::parse_window)
            .transpose()
            .and_then(|w| commands::fit(model, &input, w, out.as_deref())),
        Command::Verify { run, checks, out } => commands::verify(&run, &checks, out.as_deref()),
    };
    match result {
        Ok(code) => code.into(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code().into()
        }
    }
}
