//! Errors with the exit-code contract: 2 parse, 3 invariant, 4 and up for
//! runtime failures.

use serde::Serialize;

#[derive(Debug)]
pub enum Failure {
    Parse(String),
    Library(darnwalk::Error),
    Io(String),
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

impl Failure {
    pub fn parse(message: impl Into<String>) -> Self {
        Failure::Parse(message.into())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Parse(_) => "parse",
            Failure::Io(_) => "io",
            Failure::Library(e) => match e {
                darnwalk::Error::Invariant { .. } => "invariant",
                darnwalk::Error::Domain(_) => "domain",
                darnwalk::Error::Precondition(_) => "precondition",
                darnwalk::Error::NonConvergence { .. } => "non_convergence",
                darnwalk::Error::UnsupportedGeometry(_) => "unsupported_geometry",
                darnwalk::Error::ConstraintViolation { .. } => "constraint_violation",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Parse(_) => 2,
            Failure::Io(_) => 9,
            Failure::Library(e) => match e {
                darnwalk::Error::Invariant { .. } => 3,
                darnwalk::Error::Domain(_) => 4,
                darnwalk::Error::Precondition(_) => 5,
                darnwalk::Error::NonConvergence { .. } => 6,
                darnwalk::Error::UnsupportedGeometry(_) => 7,
                darnwalk::Error::ConstraintViolation { .. } => 8,
            },
        }
    }

    pub fn to_json(&self) -> String {
        let message = match self {
            Failure::Parse(m) | Failure::Io(m) => m.clone(),
            Failure::Library(e) => e.to_string(),
        };
        serde_json::to_string(&ErrorReport {
            error: self.kind(),
            message,
            exit_code: self.exit_code(),
        })
        .unwrap_or_default()
    }
}

impl From<darnwalk::Error> for Failure {
    fn from(e: darnwalk::Error) -> Self {
        Failure::Library(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.to_string())
    }
}
