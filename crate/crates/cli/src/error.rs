use odeformer::field::FieldError;
use odeformer::integrate::SolveError;
use odeformer::train::TrainError;
use odeformer::trajectory::FormatError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// A check ran and failed, or the integration broke down numerically.
    #[error("{0}")]
    Check(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    /// Inputs violate a shape or content contract.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Config(_) => CliError::Usage(e.to_string()),
            SolveError::Field(f) => f.into(),
            SolveError::Divergence { .. } | SolveError::StepUnderflow { .. } => {
                CliError::Check(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Solve(s) => s.into(),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Data(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<odeformer::bench::BenchError> for CliError {
    fn from(e: odeformer::bench::BenchError) -> Self {
        use odeformer::bench::BenchError;
        match e {
            BenchError::Solve(s) => s.into(),
            BenchError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Check(other.to_string()),
        }
    }
}
