use thiserror::Error;

/// Errors produced by the modelling, simulation and reduction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// The dependent-coordinate Jacobian of a closed-loop model is singular.
    #[error("configuration singular: cond(phi_d) = {cond:.3e}")]
    ConfigurationSingular { cond: f64 },

    /// Newton iteration on the loop-closure equations did not converge.
    #[error("outside workspace: loop closure residual {residual:.3e} after {iterations} iterations")]
    OutsideWorkspace { residual: f64, iterations: usize },

    #[error("mass matrix singular: cond(M) = {cond:.3e}")]
    MassSingular { cond: f64 },

    #[error("no feasible excitation trajectory found after {restarts} restarts")]
    InfeasibleExcitation { restarts: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown parameter label `{0}`")]
    UnknownLabel(String),

    /// The two sides of the generalized-base-parameter identity disagree.
    #[error("internal consistency violated: {0}")]
    Consistency(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A pipeline stage failed.
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: &'static str, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from numerics rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::ConfigurationSingular { .. }
                | Error::OutsideWorkspace { .. }
                | Error::MassSingular { .. }
                | Error::InfeasibleExcitation { .. }
                | Error::Consistency(_)
        )
    }
}

/// Tags errors with the pipeline stage that produced them.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
