use std::fmt;

/// Coarse error class, used by the CLI to pick the stderr prefix and exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numeric,
    Budget,
    Io,
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorClass::Config => "CONFIG",
            ErrorClass::Numeric => "NUMERIC",
            ErrorClass::Budget => "BUDGET",
            ErrorClass::Io => "IO",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("CONFIG: {0}")]
    Config(String),

    #[error("CONFIG: invalid argument: {0}")]
    InvalidArgument(String),

    #[error("NUMERIC: dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("NUMERIC: gram matrix is numerically singular (min eigenvalue {min_eig:e} <= threshold {threshold:e})")]
    SingularGram { min_eig: f64, threshold: f64 },

    #[error("NUMERIC: {0}")]
    Numeric(String),

    #[error("BUDGET: {what} needs {required} units, limit is {limit}")]
    Budget {
        what: &'static str,
        required: u128,
        limit: u128,
    },

    #[error("IO: {0}")]
    Io(#[from] std::io::Error),

    #[error("IO: csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorClass::Config,
            Error::DimensionMismatch { .. } | Error::SingularGram { .. } | Error::Numeric(_) => {
                ErrorClass::Numeric
            }
            Error::Budget { .. } => ErrorClass::Budget,
            Error::Io(_) | Error::Csv(_) => ErrorClass::Io,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_carries_class_prefix() {
        let errs = [
            Error::Config("x".into()),
            Error::invalid("r must be positive"),
            Error::SingularGram {
                min_eig: 0.0,
                threshold: 1e-12,
            },
            Error::Budget {
                what: "paths",
                required: 10,
                limit: 5,
            },
            Error::Io(std::io::Error::other("boom")),
        ];
        for e in errs {
            let prefix = format!("{}:", e.class());
            assert!(e.to_string().starts_with(&prefix), "{e}");
        }
    }
}
