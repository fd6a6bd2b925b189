use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The CLI maps [`AifError::is_numeric`] failures to exit code 2 and
/// everything else to exit code 1.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AifError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value encountered: {0}")]
    Numerics(String),

    #[error("singular Jacobian (condition number {condition:.3e})")]
    SingularJacobian { condition: f64 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    DidNotConverge { iterations: usize, residual: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("combinatorial limit exceeded: {0}")]
    CombinatorialLimit(String),

    #[error("p = {0} is not supported (need finite p >= 1)")]
    PNotSupported(f64),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),

    #[error("integral diverged: {0}")]
    IntegralDiverged(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("root not bracketed: {0}")]
    BracketError(String),

    #[error("system inconsistent: {0}")]
    SystemInconsistent(String),

    #[error("input error: {0}")]
    Input(String),
}

impl AifError {
    /// Short machine-readable tag used in JSON error payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            AifError::Dimension(_) => "DimensionError",
            AifError::Numerics(_) => "NumericsError",
            AifError::SingularJacobian { .. } => "SingularJacobian",
            AifError::DidNotConverge { .. } => "DidNotConverge",
            AifError::Config(_) => "ConfigError",
            AifError::CombinatorialLimit(_) => "CombinatorialLimit",
            AifError::PNotSupported(_) => "PNotSupported",
            AifError::SingularDesign(_) => "SingularDesign",
            AifError::DegenerateEstimate(_) => "DegenerateEstimate",
            AifError::IntegralDiverged(_) => "IntegralDiverged",
            AifError::Infeasible(_) => "Infeasible",
            AifError::BracketError(_) => "BracketError",
            AifError::SystemInconsistent(_) => "SystemInconsistent",
            AifError::Input(_) => "InputError",
        }
    }

    /// True for failures of the numerics (as opposed to bad input or usage).
    pub fn is_numeric(&self) -> bool {
        !matches!(
            self,
            AifError::Dimension(_)
                | AifError::Config(_)
                | AifError::PNotSupported(_)
                | AifError::CombinatorialLimit(_)
                | AifError::Input(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, AifError>;
