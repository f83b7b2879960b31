//! Process exit codes, stable across subcommands.

use slalom_core::Error as CoreError;
use slalom_server::ServerError;

pub const SUCCESS: u8 = 0;
/// Runtime failure: I/O, a crashed worker, anything not covered below.
pub const FAILURE: u8 = 1;
/// Invalid input: bad flags, config, log or bot spec. Matches clap's usage errors.
pub const INVALID: u8 = 2;
/// Uncalibrated config or calibration targets not met.
pub const UNCALIBRATED: u8 = 3;
/// The server could not bind because the address is taken.
pub const ADDR_IN_USE: u8 = 4;

/// Errors that carry their own exit code.
#[derive(Debug)]
pub enum Outcome {
    Invalid(String),
    TargetsUnmet(String),
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Invalid(m) | Outcome::TargetsUnmet(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Outcome {}

fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Uncalibrated(_) => UNCALIBRATED,
        CoreError::Config { .. }
        | CoreError::LogParse { .. }
        | CoreError::UnsupportedVersion { .. }
        | CoreError::ReplayRefused(_)
        | CoreError::Json(_)
        | CoreError::NonFiniteState(_) => INVALID,
        _ => FAILURE,
    }
}

pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(o) = cause.downcast_ref::<Outcome>() {
            return match o {
                Outcome::Invalid(_) => INVALID,
                Outcome::TargetsUnmet(_) => UNCALIBRATED,
            };
        }
        if let Some(e) = cause.downcast_ref::<ServerError>() {
            return match e {
                ServerError::AddrInUse(_) => ADDR_IN_USE,
                ServerError::Config(inner) => core_code(inner),
                ServerError::Options(_) => INVALID,
                _ => FAILURE,
            };
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return core_code(e);
        }
    }
    FAILURE
}
