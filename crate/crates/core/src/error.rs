use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid membrane state: {0}")]
    State(String),

    #[error("singular material response: {0}")]
    SingularMaterial(String),

    #[error("integration blew up at psi = {psi}")]
    IntegrationBlowup { psi: f64 },

    #[error("event not found before psi = {psi_max}")]
    EventNotFound { psi_max: f64 },

    #[error("no convergence after {iterations} iterations (best residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("sweep failed: {0}")]
    Sweep(String),

    #[error("target outside achievable range: {0}")]
    Range(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("detection failed: {0}")]
    Detection(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error classes used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Config,
    Domain,
    Convergence,
    Detection,
    Io,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Domain => "domain",
            Category::Convergence => "convergence",
            Category::Detection => "detection",
            Category::Io => "io",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Domain => 3,
            Category::Convergence => 4,
            Category::Detection => 5,
            Category::Io => 6,
        }
    }
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config { .. } => Category::Config,
            Error::Domain(_)
            | Error::Argument(_)
            | Error::State(_)
            | Error::SingularMaterial(_)
            | Error::Range(_)
            | Error::Infeasible(_) => Category::Domain,
            Error::IntegrationBlowup { .. }
            | Error::EventNotFound { .. }
            | Error::Convergence { .. }
            | Error::Sweep(_)
            | Error::Fit(_)
            | Error::Calibration(_) => Category::Convergence,
            Error::Detection(_) => Category::Detection,
            Error::Io(_) => Category::Io,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let cats = [
            Category::Config,
            Category::Domain,
            Category::Convergence,
            Category::Detection,
            Category::Io,
        ];
        let mut codes: Vec<i32> = cats.iter().map(|c| c.exit_code()).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), cats.len());
        assert!(codes.iter().all(|&c| c != 0));
    }

    #[test]
    fn categories_map_as_documented() {
        assert_eq!(Error::config("cell.r0_um", "bad").category(), Category::Config);
        assert_eq!(Error::Infeasible("x".into()).category(), Category::Domain);
        assert_eq!(
            Error::Convergence { iterations: 3, residual: 1.0 }.category(),
            Category::Convergence
        );
        assert_eq!(Error::Detection("x".into()).category(), Category::Detection);
    }
}
