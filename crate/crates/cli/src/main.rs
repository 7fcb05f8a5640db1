use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use permabound::generate::GenSpec;
use permabound::poly::SplitKind;
use permabound::report::{compute, OutputFormat, Relaxation, RunConfig, EXIT_CONFIG};
use permabound::suite::{run_suite, table, table_to_csv, Suite, SuiteConfig};
use permabound::error::Error;
use permabound::io;

#[derive(Parser)]
#[command(name = "permabound", version, about = "Permanents and their convex relaxations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the relaxations (and the exact permanent when small enough) for one matrix.
    #[command(group(ArgGroup::new("source").required(true).args(["input", "gen"])))]
    Compute {
        /// Matrix file: `.json` or CSV.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Generated instance, `kind:n:seed`.
        #[arg(long)]
        gen: Option<String>,
        /// Comma-separated subset of re,rc,ro,rp,rq.
        #[arg(long, default_value = "re,rc,ro")]
        relaxations: String,
        #[arg(long, default_value_t = 20)]
        exact_threshold: usize,
        #[arg(long)]
        tol_sinkhorn: Option<f64>,
        #[arg(long)]
        tol_dual: Option<f64>,
        #[arg(long)]
        tol_bethe: Option<f64>,
        /// Split for R_P and R_Q: sqrt, left_identity or random(SEED).
        #[arg(long, default_value = "sqrt")]
        split: String,
        #[arg(long, default_value = "json")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one property suite over generated instances.
    Verify {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Normalised bound factors as CSV.
    Table {
        /// Comma-separated sizes.
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("PERMABOUND_THREADS") else { return Ok(()) };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| format!("PERMABOUND_THREADS must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| e.to_string())
}

fn run(command: Command) -> Result<i32, Error> {
    match command {
        Command::Compute {
            input,
            gen,
            relaxations,
            exact_threshold,
            tol_sinkhorn,
            tol_dual,
            tol_bethe,
            split,
            format,
            out,
        } => {
            let (m, instance) = match (input, gen) {
                (Some(path), _) => (io::read_matrix(&path)?, format!("file:{}", path.display())),
                (None, Some(spec)) => {
                    let spec: GenSpec = spec.parse()?;
                    (spec.generate()?, format!("gen:{spec}"))
                }
                (None, None) => unreachable!("clap requires one source"),
            };
            let defaults = RunConfig::default();
            let cfg = RunConfig {
                sinkhorn_tol: tol_sinkhorn.unwrap_or(defaults.sinkhorn_tol),
                dual_tol: tol_dual.unwrap_or(defaults.dual_tol),
                bethe_tol: tol_bethe.unwrap_or(defaults.bethe_tol),
                exact_threshold,
                relaxations: Relaxation::parse_set(&relaxations)?,
                split: split.parse::<SplitKind>()?,
                format: format.parse::<OutputFormat>()?,
                ..defaults
            };
            let report = compute(&m, instance, &cfg)?;
            emit(&report.render(cfg.format), out.as_ref())?;
            for f in &report.failures {
                eprintln!("{}: {}", f.relaxation, f.message);
            }
            for c in report.violations() {
                eprintln!("violated: {} ({} vs {})", c.name, c.lhs, c.rhs);
            }
            Ok(report.exit_code())
        }
        Command::Verify { suite, n_max, trials, seed } => {
            let suite: Suite = suite.parse()?;
            let d = suite.defaults();
            let cfg = SuiteConfig {
                suite,
                n_max: n_max.unwrap_or(d.n_max),
                trials: trials.unwrap_or(d.trials),
                seed: seed.unwrap_or(d.seed),
            };
            let summary = run_suite(&cfg)?;
            for o in &summary.outcomes {
                println!("{o}");
            }
            println!("{}", summary.headline());
            Ok(summary.exit_code())
        }
        Command::Table { n, trials, seed, out } => {
            let rows = table(&n, trials, seed, RunConfig::default().exact_threshold)?;
            emit(&table_to_csv(&rows), out.as_ref())?;
            Ok(0)
        }
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
        None => {
            if text.ends_with('\n') {
                print!("{text}");
            } else {
                println!("{text}");
            }
            Ok(())
        }
    }
}
