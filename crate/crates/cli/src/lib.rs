//! The `bcm` command-line tool.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use bcm::recover::DiagonalFormula;
use bcm::{Error, PotentialShape};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{execute, Command};
use crate::config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bcm", version, about = "Boundary-control inverse problem toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Solve the wave system for one control and write the field.
    Simulate,
    /// Compute the response function on [0, 2T].
    Response,
    /// Assemble the connecting operator and compare it with wave Gram forms.
    Connect,
    /// Factor the reflected operator by both algorithms and check identities.
    Factorize,
    /// Recover the potential from a response, kernel or operator file.
    Recover,
    /// Forward response, inversion and error report over a grid ladder.
    Roundtrip,
    /// Defect element, transform and wave-model checks.
    Wavemodel,
    /// Run the property checks at n = 101.
    Selfcheck,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormulaArg {
    TwiceDerivative,
    WithQuadraticTerm,
}

#[derive(Debug, Args)]
struct Overrides {
    /// JSON run configuration; flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// e.g. "plateau(1,0.8,0.2)", "flatexp(0.5)", "zero"
    #[arg(long, global = true)]
    potential: Option<PotentialShape>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    #[arg(long, global = true)]
    nodes: Option<usize>,
    /// comma-separated grid sizes for roundtrip
    #[arg(long, global = true, value_delimiter = ',')]
    ladder: Option<Vec<usize>>,
    /// recovery window "lo,hi"
    #[arg(long, global = true, value_delimiter = ',', num_args = 2)]
    window: Option<Vec<f64>>,
    #[arg(long, global = true, value_enum)]
    formula: Option<FormulaArg>,
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// output directory (default: $BCM_OUTPUT_DIR, then ./bcm-out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// run on a single thread
    #[arg(long, global = true)]
    sequential: bool,
}

impl Overrides {
    fn apply(&self, mut cfg: RunConfig) -> RunConfig {
        if let Some(p) = self.potential {
            cfg.potential = p;
        }
        if let Some(t) = self.horizon {
            cfg.horizon = t;
        }
        if let Some(n) = self.nodes {
            cfg.nodes = n;
        }
        if let Some(l) = &self.ladder {
            cfg.ladder = l.clone();
        }
        if let Some(w) = &self.window {
            cfg.window = Some([w[0], w[1]]);
        }
        if let Some(f) = self.formula {
            cfg.formula = match f {
                FormulaArg::TwiceDerivative => DiagonalFormula::TwiceDerivative,
                FormulaArg::WithQuadraticTerm => DiagonalFormula::WithQuadraticTerm,
            };
        }
        if let Some(i) = &self.input {
            cfg.input = Some(i.clone());
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        cfg
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let command = match cli.command {
        Sub::Simulate => Command::Simulate,
        Sub::Response => Command::Response,
        Sub::Connect => Command::Connect,
        Sub::Factorize => Command::Factorize,
        Sub::Recover => Command::Recover,
        Sub::Roundtrip => Command::Roundtrip,
        Sub::Wavemodel => Command::Wavemodel,
        Sub::Selfcheck => Command::Selfcheck,
    };
    let base = match &cli.overrides.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("bcm: {e}");
                return EXIT_VALIDATION;
            }
        },
        None => RunConfig::default(),
    };
    let cfg = cli.overrides.apply(base);
    if let Err(e) = cfg.validate() {
        eprintln!("bcm: {e}");
        return EXIT_VALIDATION;
    }

    let job = || execute(command, &cfg);
    let result = if cli.overrides.sequential {
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(job),
            Err(e) => {
                eprintln!("bcm: cannot build thread pool: {e}");
                return EXIT_VALIDATION;
            }
        }
    } else {
        job()
    };
    match result {
        Ok(outcome) => {
            for path in outcome.artifacts.written() {
                println!("wrote {}", path.display());
            }
            if outcome.failed_checks.is_empty() {
                EXIT_OK
            } else {
                eprintln!("bcm: failed checks: {}", outcome.failed_checks.join(", "));
                EXIT_NUMERICAL
            }
        }
        Err(e) => {
            eprintln!("bcm: {e}");
            exit_code(&e)
        }
    }
}
