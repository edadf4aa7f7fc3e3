//! Data types of the feedback user model.
//!
//! Relevance feedback `y_i` on an item with features `x_i` is modelled as
//! `y_i ~ Normal(x_i·φ, σ²/w_i)` with priors `φ_j ~ Normal(μ_φ, λ_φ)`,
//! `σ² ~ InvGamma(α_σ², β_σ²)` and `w_i ~ Gamma(α_w, β_w)`. A locked
//! observation uses `w_i = 1` exactly.
//!
//! `λ_φ` is a variance. The gamma prior on `w_i` is shape/rate, the
//! inverse-gamma prior on `σ²` is shape/scale.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense feature vector of fixed dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Wraps raw values, rejecting non-finite components.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("feature vector".into()));
        }
        Ok(Self(values))
    }

    /// L2-normalizes non-negative raw weights. The zero vector is rejected.
    pub fn l2_normalized(mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("feature vector".into()));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::Validation("negative feature weight".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Validation("cannot normalize the zero vector".into()));
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

/// Identifier of one observation within a fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObsId(pub u64);

impl fmt::Display for ObsId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Accuracy `w_i` is inferred.
    Free,
    /// The user vouched for this feedback; `w_i = 1`.
    Locked,
    /// Kept for history, ignored by inference.
    Deleted,
}

/// One unit of relevance feedback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: ObsId,
    pub features: FeatureVector,
    pub value: f64,
    pub weight_mode: WeightMode,
    pub created_at: u64,
}

impl Observation {
    pub fn new(
        id: ObsId,
        features: FeatureVector,
        value: f64,
        weight_mode: WeightMode,
        created_at: u64,
    ) -> Result<Self> {
        check_feedback_value(value)?;
        Ok(Self {
            id,
            features,
            value,
            weight_mode,
            created_at,
        })
    }
}

pub(crate) fn check_feedback_value(value: f64) -> Result<()> {
    if !value.is_finite() || !(0.0..=1.0).contains(&value) {
        return Err(Error::Validation(format!(
            "feedback value {value} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Prior hyperparameters and variational-inference controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub mu_phi: f64,
    /// Prior variance of each coefficient.
    pub lambda_phi: f64,
    pub alpha_sigma2: f64,
    pub beta_sigma2: f64,
    pub alpha_w: f64,
    pub beta_w: f64,
    /// Absolute change of the bound below which fitting stops.
    pub vi_tolerance: f64,
    /// `None` iterates until converged.
    pub vi_max_iters: Option<usize>,
}

impl Hyperparameters {
    /// Values used for the simulated-user experiments.
    pub const SIMULATION: Hyperparameters = Hyperparameters {
        mu_phi: 0.0,
        lambda_phi: 0.1,
        alpha_sigma2: 2.5,
        beta_sigma2: 0.5,
        alpha_w: 0.7,
        beta_w: 1.0,
        vi_tolerance: 0.1,
        vi_max_iters: None,
    };

    /// Values used by the interactive search service.
    pub const INTERACTIVE: Hyperparameters = Hyperparameters {
        mu_phi: 0.0,
        lambda_phi: 0.1,
        alpha_sigma2: 2.0,
        beta_sigma2: 0.1,
        alpha_w: 1.0,
        beta_w: 1.0,
        vi_tolerance: 0.1,
        vi_max_iters: Some(10),
    };

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_phi", self.lambda_phi),
            ("alpha_sigma2", self.alpha_sigma2),
            ("beta_sigma2", self.beta_sigma2),
            ("alpha_w", self.alpha_w),
            ("beta_w", self.beta_w),
            ("vi_tolerance", self.vi_tolerance),
        ];
        if !self.mu_phi.is_finite() {
            return Err(Error::Validation("mu_phi must be finite".into()));
        }
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Validation(format!("{name} must be > 0, got {value}")));
            }
        }
        if self.vi_max_iters == Some(0) {
            return Err(Error::Validation("vi_max_iters must be positive".into()));
        }
        Ok(())
    }

    /// Renders the flat `key = value` config form.
    pub fn to_config_string(&self) -> String {
        let iters = match self.vi_max_iters {
            Some(n) => n.to_string(),
            None => "unbounded".to_string(),
        };
        format!(
            "mu_phi = {}\nlambda_phi = {}\nalpha_sigma2 = {}\nbeta_sigma2 = {}\n\
             alpha_w = {}\nbeta_w = {}\nvi_tolerance = {}\nvi_max_iters = {}\n",
            self.mu_phi,
            self.lambda_phi,
            self.alpha_sigma2,
            self.beta_sigma2,
            self.alpha_w,
            self.beta_w,
            self.vi_tolerance,
            iters
        )
    }

    /// Parses the flat config form. Every key is required; `#` starts a comment.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut values = std::collections::HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                what: "hyperparameter config",
                detail: format!("line {}: expected `key = value`", lineno + 1),
            })?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        let real = |key: &str| -> Result<f64> {
            let raw = values.get(key).ok_or_else(|| Error::Format {
                what: "hyperparameter config",
                detail: format!("missing key `{key}`"),
            })?;
            raw.parse::<f64>().map_err(|e| Error::Format {
                what: "hyperparameter config",
                detail: format!("`{key}`: {e}"),
            })
        };
        let vi_max_iters = match values.get("vi_max_iters").map(String::as_str) {
            None => {
                return Err(Error::Format {
                    what: "hyperparameter config",
                    detail: "missing key `vi_max_iters`".into(),
                })
            }
            Some("unbounded") => None,
            Some(raw) => Some(raw.parse::<usize>().map_err(|e| Error::Format {
                what: "hyperparameter config",
                detail: format!("`vi_max_iters`: {e}"),
            })?),
        };
        let hyper = Hyperparameters {
            mu_phi: real("mu_phi")?,
            lambda_phi: real("lambda_phi")?,
            alpha_sigma2: real("alpha_sigma2")?,
            beta_sigma2: real("beta_sigma2")?,
            alpha_w: real("alpha_w")?,
            beta_w: real("beta_w")?,
            vi_tolerance: real("vi_tolerance")?,
            vi_max_iters,
        };
        hyper.validate()?;
        Ok(hyper)
    }
}

/// Covariance of the Gaussian factor `q(φ)`.
///
/// When there are fewer observations than features the solver keeps the
/// covariance in the form `λI − λ²·XᵀMX` (X holds the observed feature
/// vectors as rows) and never materializes the D×D matrix unless asked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Covariance {
    Dense(DMatrix<f64>),
    LowRank {
        prior_variance: f64,
        basis: DMatrix<f64>,
        core: DMatrix<f64>,
    },
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Dense(m) => m.nrows(),
            Covariance::LowRank { basis, .. } => basis.ncols(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::Dense(m) => m.clone(),
            Covariance::LowRank {
                prior_variance,
                basis,
                core,
            } => {
                let lam = *prior_variance;
                let mut cov = basis.transpose() * core * basis;
                cov *= -lam * lam;
                for i in 0..cov.nrows() {
                    cov[(i, i)] += lam;
                }
                cov
            }
        }
    }

    /// `xᵀ S x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        match self {
            Covariance::Dense(m) => {
                let v = DVector::from_column_slice(x);
                (m * &v).dot(&v)
            }
            Covariance::LowRank {
                prior_variance,
                basis,
                core,
            } => {
                let v = DVector::from_column_slice(x);
                let proj = basis * &v;
                let lam = *prior_variance;
                lam * v.dot(&v) - lam * lam * (core * &proj).dot(&proj)
            }
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            Covariance::Dense(m) => m.trace(),
            Covariance::LowRank {
                prior_variance,
                basis,
                core,
            } => {
                let lam = *prior_variance;
                let gram = basis * basis.transpose();
                lam * basis.ncols() as f64 - lam * lam * (core * gram).trace()
            }
        }
    }

    pub fn log_det(&self) -> Result<f64> {
        match self {
            Covariance::Dense(m) => {
                let chol = m.clone().cholesky().ok_or(Error::SingularModel)?;
                Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
            }
            Covariance::LowRank {
                prior_variance,
                basis,
                core,
            } => {
                // Sylvester: det(λI_D − λ²XᵀMX) = λ^D · det(I_N − λ·M·XXᵀ).
                let lam = *prior_variance;
                let n = basis.nrows();
                let gram = basis * basis.transpose();
                let inner = DMatrix::identity(n, n) - core * gram * lam;
                let det = inner.lu().determinant();
                if !(det > 0.0) || !det.is_finite() {
                    return Err(Error::Numeric("covariance determinant".into()));
                }
                Ok(basis.ncols() as f64 * lam.ln() + det.ln())
            }
        }
    }
}

/// Variational factor of one observation's accuracy weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFactor {
    /// `q(w_i) = Gamma(shape, rate)`.
    Free { shape: f64, rate: f64 },
    /// Point mass at 1.
    Locked,
}

impl WeightFactor {
    pub fn mean(&self) -> f64 {
        match *self {
            WeightFactor::Free { shape, rate } => shape / rate,
            WeightFactor::Locked => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightPosterior {
    pub obs_id: ObsId,
    pub factor: WeightFactor,
}

/// Factored posterior `q(φ) q(σ²) ∏ q(w_i)` produced by a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    pub phi_mean: DVector<f64>,
    pub phi_cov: Covariance,
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
    /// One entry per fitted observation, in fit order.
    pub weights: Vec<WeightPosterior>,
    pub elbo: f64,
    /// Bound after initialization and after each full update cycle.
    pub elbo_trace: Vec<f64>,
    pub iterations_run: usize,
}

impl PosteriorState {
    /// The prior itself, as returned by a fit without observations.
    pub fn prior(hyper: &Hyperparameters, dim: usize) -> Self {
        Self {
            phi_mean: DVector::from_element(dim, hyper.mu_phi),
            phi_cov: Covariance::Dense(DMatrix::identity(dim, dim) * hyper.lambda_phi),
            sigma2_shape: hyper.alpha_sigma2,
            sigma2_scale: hyper.beta_sigma2,
            weights: Vec::new(),
            elbo: 0.0,
            elbo_trace: vec![0.0],
            iterations_run: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.phi_mean.len()
    }

    /// `E[1/σ²]` under `q(σ²)`.
    pub fn noise_precision(&self) -> f64 {
        self.sigma2_shape / self.sigma2_scale
    }

    pub fn weight(&self, obs_id: ObsId) -> Option<&WeightPosterior> {
        self.weights.iter().find(|w| w.obs_id == obs_id)
    }
}

/// `E[w_i]` of a fitted observation: `shape/rate` when free, exactly 1 when locked.
pub fn expected_weight(state: &PosteriorState, obs_id: ObsId) -> Result<f64> {
    state
        .weight(obs_id)
        .map(|w| w.factor.mean())
        .ok_or_else(|| Error::not_found("observation", obs_id))
}

/// Posterior-mean relevance `x·E[φ]`. Unclamped.
pub fn predict_relevance(state: &PosteriorState, features: &FeatureVector) -> Result<f64> {
    if features.dim() != state.dim() {
        return Err(Error::Dimension {
            expected: state.dim(),
            actual: features.dim(),
        });
    }
    Ok(features.dot(state.phi_mean.as_slice()))
}
