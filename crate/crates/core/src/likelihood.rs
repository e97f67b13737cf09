//! Result types shared by the conventional and square-root score evaluators.

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Which evaluator produces the log-likelihood and score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Square-root filter with derivative propagation through the rotation.
    #[serde(rename = "sqrt")]
    SquareRoot,
    /// Covariance filter with sensitivity recursions.
    Conventional,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Conventional, Method::SquareRoot];

    pub fn name(self) -> &'static str {
        match self {
            Method::SquareRoot => "square-root",
            Method::Conventional => "conventional",
        }
    }

    /// Negative log-likelihood and gradient over `data`.
    pub fn score(
        self,
        spec: &dyn crate::model::ModelSpec,
        theta: &[f64],
        data: &crate::model::Trajectory,
    ) -> crate::Result<ScoreResult> {
        match self {
            Method::SquareRoot => crate::score::run(spec, theta, data),
            Method::Conventional => crate::conventional::kf_score(spec, theta, data),
        }
    }
}

/// `(m/2)·ln(2π)`, the per-step constant inside the braces of the negative
/// log-likelihood sum.
pub fn loglik_constant(m: usize) -> f64 {
    0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// 2-norm condition number of the innovation covariance (∞ if it is not
    /// positive definite in working precision).
    pub cond_re: f64,
}

/// Where and why a filter run stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    /// 1-based step index.
    pub step: usize,
    pub message: String,
    /// The innovation covariance (or its factor) became singular, as opposed
    /// to some other breakdown such as a singular state factor.
    pub singular_innovation: bool,
}

/// Negative log-likelihood and its gradient for one run over a data record.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResult {
    pub loglik: f64,
    pub gradient: Vec<f64>,
    pub steps: Vec<StepDiagnostics>,
    pub failure: Option<Failure>,
}

impl ScoreResult {
    pub fn new(p: usize) -> Self {
        Self {
            loglik: 0.0,
            gradient: vec![0.0; p],
            steps: Vec::new(),
            failure: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Mark the run failed at `step`; value and gradient become NaN.
    pub(crate) fn fail(&mut self, step: usize, err: &Error) {
        self.loglik = f64::NAN;
        self.gradient.iter_mut().for_each(|g| *g = f64::NAN);
        self.failure = Some(Failure {
            step,
            message: err.to_string(),
            singular_innovation: matches!(err, Error::SingularInnovation { .. }),
        });
    }

    /// Turn a recorded failure back into an error.
    pub fn into_result(self) -> crate::Result<Self> {
        match &self.failure {
            Some(f) if f.singular_innovation => Err(Error::SingularInnovation { step: f.step }),
            Some(f) => Err(Error::StepFailure {
                step: f.step,
                message: f.message.clone(),
            }),
            None => Ok(self),
        }
    }
}
