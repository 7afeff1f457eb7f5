//! Command-line front end over `seqdens::experiment`.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use seqdens::evaluation::Convention;
use seqdens::experiment::{
    cmd_eval, cmd_sweep, cmd_synth, cmd_table, cmd_train, default_run_dir, ExperimentConfig, OUTPUT_ROOT_VAR,
};
use seqdens::oracle::run_suite;
use seqdens::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORT: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "seqdens", version, about = "Density estimation workbench for multivariate sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the configured synthetic dataset as step CSVs plus a manifest.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $SEQDENS_OUT/data/<dataset id>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train one model and score its best checkpoint on the test split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (default: $SEQDENS_OUT/<name>).
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Re-score a finished run.
    Eval {
        run_dir: PathBuf,
        /// Importance-weighted bound with K samples (stochastic families).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        convention: Option<Convention>,
    },
    /// Render reports (files or run directories) as a results table.
    Table {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        csv: bool,
    },
    /// Run the oracle suite and print a JSON summary.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write (and with --run, train) the 3 x 3 auxiliary-loss grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        run: bool,
    },
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::NonFinite(_) => EXIT_ABORT,
        Error::Oracle(_) => EXIT_ORACLE,
        _ => EXIT_FAILURE,
    }
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn load(path: &PathBuf, seed: Option<u64>) -> seqdens::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Runs one command, writing its normal output to `out` and diagnostics to `err`.
pub fn execute(cli: Cli, out: &mut impl std::io::Write, err: &mut impl std::io::Write) -> i32 {
    match dispatch(cli) {
        Ok((text, code, warnings)) => {
            for w in warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            let _ = out.write_all(text.as_bytes());
            code
        }
        Err((e, warnings)) => {
            for w in warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

type Outcome = std::result::Result<(String, i32, Vec<String>), (Error, Vec<String>)>;

fn dispatch(cli: Cli) -> Outcome {
    let plain = |e: Error| (e, Vec::new());
    let mut text = String::new();
    let mut warnings = Vec::new();
    match cli.command {
        Command::Synth { config, seed, out, force } => {
            let cfg = load(&config, seed).map_err(plain)?;
            let dir = out.unwrap_or_else(|| output_root().join("data").join(cfg.dataset_id()));
            let manifest = cmd_synth(&cfg, &dir, force).map_err(plain)?;
            writeln!(text, "{}", manifest.display()).unwrap();
        }
        Command::Train { config, seed, run_dir, force } => {
            let cfg = load(&config, seed).map_err(plain)?;
            let dir = run_dir.unwrap_or_else(|| default_run_dir(&cfg));
            let r = cmd_train(&cfg, &dir, force).map_err(plain)?;
            writeln!(
                text,
                "{}: {} {} = {:.6} ({}) after {} updates in {:.1}s",
                r.dir.display(),
                r.report.model_id,
                r.report.convention,
                r.report.score,
                r.report.bound,
                r.info.updates,
                r.info.wall_clock_s
            )
            .unwrap();
        }
        Command::Eval { run_dir, k, convention } => {
            let r = cmd_eval(&run_dir, k, convention).map_err(plain)?;
            warnings.extend(r.warnings.iter().cloned());
            writeln!(
                text,
                "{}: {} = {:.6} (bound {}) -> {}",
                r.report.model_id,
                r.report.convention,
                r.report.score,
                r.report.bound,
                r.path.display()
            )
            .unwrap();
        }
        Command::Table { reports, csv } => {
            let t = cmd_table(&reports, csv).map_err(plain)?;
            text.push_str(&t.text);
            if let Some(rt) = t.runtime {
                text.push('\n');
                text.push_str(&rt);
            }
            if let Some(c) = t.csv {
                text.push('\n');
                text.push_str(&c);
            }
        }
        Command::Oracle { seed } => {
            let s = run_suite(seed);
            text = serde_json::to_string_pretty(&s).unwrap();
            text.push('\n');
            if !s.pass {
                return Ok((text, EXIT_ORACLE, warnings));
            }
        }
        Command::Sweep {
            config,
            seed,
            out,
            force,
            run,
        } => {
            let cfg = load(&config, seed).map_err(plain)?;
            let root = out.unwrap_or_else(|| output_root().join(format!("sweep-{}", cfg.model_id())));
            for p in cmd_sweep(&cfg, &root, force, run).map_err(plain)? {
                writeln!(text, "{}", p.display()).unwrap();
            }
        }
    }
    Ok((text, EXIT_OK, warnings))
}

/// Parses `args` and runs; used by the binary and by tests.
pub fn run_from<I, T>(args: I, out: &mut impl std::io::Write, err: &mut impl std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli, out, err),
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                EXIT_CONFIG
            } else {
                let _ = write!(out, "{e}");
                EXIT_OK
            }
        }
    }
}
