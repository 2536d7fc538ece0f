use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use redlab_core::{AuxMode, Error, ErrorClass};

mod commands;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Validate,
    Solve,
    Sample,
    Oracle,
    Plotdata,
    Twoslit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Diagonal,
    Full,
}

impl From<ModeArg> for AuxMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Diagonal => AuxMode::Diagonal,
            ModeArg::Full => AuxMode::Full,
        }
    }
}

/// Solve, sample and cross-check effective measurement equations.
#[derive(Debug, Parser)]
#[command(name = "reduction-lab", version)]
pub struct Args {
    pub command: Command,

    /// Scenario file (JSON). `twoslit` falls back to the symmetric fixture.
    #[arg(long)]
    pub scenario: Option<PathBuf>,

    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Sampling seed. `REDLAB_SEED`, when set, takes precedence.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Number of draws for `sample`.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,

    /// Oracle tolerance on the relative gap.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,

    /// One-based reading index for `plotdata`.
    #[arg(long, default_value_t = 1)]
    pub channel: usize,

    /// Plot window `LO:HI`.
    #[arg(long, allow_hyphen_values = true)]
    pub range: Option<String>,

    #[arg(long, default_value_t = 2001)]
    pub points: usize,

    /// Auxiliary spectrum mode for `solve`, `sample`, `plotdata`, `twoslit`.
    #[arg(long, value_enum, default_value_t = ModeArg::Diagonal)]
    pub mode: ModeArg,

    /// Scales every kernel coupler by `1 + X` before the oracle runs.
    #[arg(long, hide = true)]
    pub corrupt_kernel: Option<f64>,
}

/// Failure of a command, mapped onto the exit-code contract.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Usage(String),
    OracleMismatch,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) => match e.class() {
                ErrorClass::Validation => 1,
                ErrorClass::Numerical => 2,
                ErrorClass::Oracle => 3,
            },
            Failure::Usage(_) => 1,
            Failure::OracleMismatch => 3,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let (kind, message) = match self {
            Failure::Core(e) => (e.kind().to_string(), e.to_string()),
            Failure::Usage(m) => ("UsageError".to_string(), m.clone()),
            Failure::OracleMismatch => (
                "OracleMismatch".to_string(),
                "partitioned spectrum disagrees with full spectrum".into(),
            ),
        };
        serde_json::json!({ "error": kind, "message": message, "exit_code": self.exit_code() })
    }
}

fn seed_override(args: &mut Args) -> Result<(), Failure> {
    if let Ok(v) = std::env::var("REDLAB_SEED") {
        args.seed = v.trim().parse().map_err(|_| {
            Failure::Usage(format!(
                "REDLAB_SEED must be an unsigned integer, got {v:?}"
            ))
        })?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let mut args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let f = Failure::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", f.to_json());
            return ExitCode::from(f.exit_code());
        }
    };
    match seed_override(&mut args).and_then(|()| commands::run(&args)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_class() {
        assert_eq!(Failure::Core(Error::Parse("x".into())).exit_code(), 1);
        assert_eq!(
            Failure::Core(Error::EigenFailure("x".into())).exit_code(),
            2
        );
        assert_eq!(
            Failure::Core(Error::BracketFailure {
                channel: 0,
                lo: 0.0,
                hi: 1.0
            })
            .exit_code(),
            2
        );
        assert_eq!(
            Failure::Core(Error::CountMismatch { left: 1, right: 2 }).exit_code(),
            3
        );
        assert_eq!(Failure::OracleMismatch.exit_code(), 3);
        assert_eq!(Failure::Usage("x".into()).exit_code(), 1);
    }
}
