//! Failure classes and their process exit codes.
//!
//! Every command returns `Result<(), Failure>`. The class decides the exit
//! code: bad invocations, unreadable or invalid inputs, and configuration
//! problems exit 1; numerical failures inside an otherwise valid run
//! (singular calibration system, eigensolver breakdown) exit 2. Success is
//! exit 0. Scripts can branch on the distinction: exit 1 means fix the
//! request, exit 2 means the request was fine but this data defeated it.

use anyhow::Error;

/// A command failure carrying its exit-code class.
#[derive(Debug)]
pub enum Failure {
    /// Caller error: flags, configuration, or input files. Exit 1.
    Usage(Error),
    /// Numerical breakdown in a well-formed run. Exit 2.
    Numerical(Error),
}

impl Failure {
    pub fn usage(err: impl Into<Error>) -> Self {
        Failure::Usage(err.into())
    }

    pub fn numerical(err: impl Into<Error>) -> Self {
        Failure::Numerical(err.into())
    }

    pub fn usage_msg(msg: impl Into<String>) -> Self {
        Failure::Usage(Error::msg(msg.into()))
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Numerical(_) => 2,
        }
    }

    pub fn error(&self) -> &Error {
        match self {
            Failure::Usage(e) | Failure::Numerical(e) => e,
        }
    }
}

/// Bundles a non-empty violation list into one usage failure, one bullet
/// per violation, so the caller sees every problem in a single run.
pub fn violations_failure(context: &str, violations: &[String]) -> Failure {
    debug_assert!(!violations.is_empty());
    let mut msg = format!("{context}:");
    for v in violations {
        msg.push_str("\n  - ");
        msg.push_str(v);
    }
    Failure::Usage(Error::msg(msg))
}

pub type CmdResult<T = ()> = Result<T, Failure>;
