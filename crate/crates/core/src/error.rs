use thiserror::Error;

/// Errors produced by the estimation and testing pipeline.
#[derive(Debug, Error)]
pub enum QltError {
    #[error("model output is not finite ({context})")]
    NonFiniteModelOutput { context: String },

    #[error("tuning exponent tau = {tau} must lie strictly inside (1, 2)")]
    TuningOutOfRange { tau: f64 },

    #[error("only {k_n} local-mean blocks available, need at least {min}")]
    InsufficientBlocks { k_n: usize, min: usize },

    #[error("regularized diffusion matrix failed factorization at block {block}")]
    SingularDiffusionMatrix { block: usize },

    #[error("hessian normalizer failed factorization (flat quasi-likelihood)")]
    SingularNormalizer,

    #[error(
        "optimizer did not converge in any of {starts} starts \
         (best gradient norm {best_grad_norm:.3e} after {iterations} iterations)"
    )]
    OptimizerDidNotConverge {
        starts: usize,
        iterations: usize,
        best_grad_norm: f64,
    },

    #[error("invalid hypothesis: {0}")]
    InvalidHypothesis(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("study aborted: {failed} of {total} replicates failed (first failure: {first})")]
    StudyAborted {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<QltError>,
    },
}

impl QltError {
    /// Tag an error with the pipeline stage it came from.
    pub fn at_stage(self, stage: &'static str) -> Self {
        QltError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, QltError>;

/// Extension to tag a fallible pipeline stage in one call.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
