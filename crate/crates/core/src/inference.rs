//! Mean-field variational inference for the weighted linear-Gaussian model.
//!
//! Coordinate ascent over `q(φ) = N(m, S)`, `q(σ²) = InvGamma(a, b)` and
//! `q(w_i) = Gamma(α_i, β_i)`:
//!
//! ```text
//! S   = (E[1/σ²] Σ E[w_i] x_i x_iᵀ + I/λ_φ)⁻¹
//! m   = S (E[1/σ²] Σ E[w_i] y_i x_i + μ_φ/λ_φ · 1)
//! a   = α_σ² + N/2            b   = β_σ² + ½ Σ E[w_i] r_i
//! α_i = α_w + ½               β_i = β_w + ½ E[1/σ²] r_i
//! r_i = (y_i − x_iᵀm)² + x_iᵀ S x_i
//! ```
//!
//! Locked observations keep `w_i = 1`. Each cycle updates `q(φ)`, then
//! `q(σ²)`, then every `q(w_i)`, and fitting stops once the evidence lower
//! bound changes by less than the tolerance.
//!
//! The `q(φ)` update runs in feature space (D×D Cholesky) when there are at
//! least as many observations as features, and otherwise in observation
//! space through the Woodbury identity, which costs O(N³ + N²D) per cycle.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::model::{
    Covariance, Hyperparameters, ObsId, Observation, PosteriorState, WeightFactor, WeightMode,
    WeightPosterior,
};

const FLOOR: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Per-observation accuracy weights are inferred.
    Ard,
    /// Every observation has weight 1.
    Lg,
}

#[derive(Clone, Debug)]
pub struct FitRequest {
    /// Deleted observations are skipped.
    pub observations: Vec<Observation>,
    /// Feature dimension D.
    pub dim: usize,
    pub hyper: Hyperparameters,
    pub model_kind: ModelKind,
    pub rng_seed: u64,
}

/// Which algebraic route computes the `q(φ)` update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    /// Pick by problem shape.
    Auto,
    /// D×D precision matrix.
    Primal,
    /// N×N Woodbury form.
    Dual,
}

/// Observations prepared for fitting.
struct Problem {
    ids: Vec<ObsId>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    locked: Vec<bool>,
    gram: DMatrix<f64>,
    row_sums: DVector<f64>,
}

impl Problem {
    fn new(req: &FitRequest) -> Result<Self> {
        if req.dim == 0 {
            return Err(Error::Validation("feature dimension must be at least 1".into()));
        }
        req.hyper.validate()?;
        let active: Vec<&Observation> = req
            .observations
            .iter()
            .filter(|o| o.weight_mode != WeightMode::Deleted)
            .collect();
        let n = active.len();
        let mut x = DMatrix::zeros(n, req.dim);
        let mut y = DVector::zeros(n);
        let mut locked = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        for (i, obs) in active.iter().enumerate() {
            if obs.features.dim() != req.dim {
                return Err(Error::Dimension {
                    expected: req.dim,
                    actual: obs.features.dim(),
                });
            }
            if !obs.value.is_finite() || obs.features.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("observation {}", obs.id)));
            }
            for (j, &v) in obs.features.as_slice().iter().enumerate() {
                x[(i, j)] = v;
            }
            y[i] = obs.value;
            locked.push(req.model_kind == ModelKind::Lg || obs.weight_mode == WeightMode::Locked);
            ids.push(obs.id);
        }
        let gram = &x * x.transpose();
        let row_sums = DVector::from_iterator(n, x.row_iter().map(|r| r.sum()));
        Ok(Self {
            ids,
            x,
            y,
            locked,
            gram,
            row_sums,
        })
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// Sufficient statistics of `q(φ)` needed by the other updates and the bound.
struct PhiMoments {
    /// `x_iᵀ m`.
    pred: DVector<f64>,
    /// `x_iᵀ S x_i`.
    pred_var: DVector<f64>,
    log_det: f64,
    trace: f64,
    /// `‖m − μ·1‖²`.
    dev_sq: f64,
}

impl PhiMoments {
    fn residuals(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            y.len(),
            (0..y.len()).map(|i| (y[i] - self.pred[i]).powi(2) + self.pred_var[i]),
        )
    }
}

/// `q(φ)` in whichever representation the solver produced.
enum PhiFactor {
    Primal {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    },
    Dual {
        coef: DVector<f64>,
        core: DMatrix<f64>,
    },
}

fn update_phi(
    problem: &Problem,
    hyper: &Hyperparameters,
    noise_precision: f64,
    ew: &[f64],
    solver: Solver,
) -> Result<(PhiFactor, PhiMoments)> {
    let n = problem.len();
    let d = problem.dim();
    let lam = hyper.lambda_phi;
    let mu = hyper.mu_phi;
    let prec: Vec<f64> = ew.iter().map(|w| (noise_precision * w).max(FLOOR)).collect();
    let use_dual = match solver {
        Solver::Auto => n < d,
        Solver::Primal => false,
        Solver::Dual => true,
    };

    if use_dual {
        let sqrt_p = DVector::from_iterator(n, prec.iter().map(|p| p.sqrt()));
        let mut b = problem.gram.clone();
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] *= lam * sqrt_p[i] * sqrt_p[j];
            }
            b[(i, i)] += 1.0;
        }
        let chol = b.cholesky().ok_or(Error::SingularModel)?;
        // M = P^½ B⁻¹ P^½
        let mut core = chol.inverse();
        for i in 0..n {
            for j in 0..n {
                core[(i, j)] *= sqrt_p[i] * sqrt_p[j];
            }
        }
        let u = DVector::from_iterator(n, (0..n).map(|i| prec[i] * problem.y[i]));
        let gu = &problem.gram * &u;
        let coef = &u * lam - &core * (gu * (lam * lam) + &problem.row_sums * (lam * mu));
        let pred = &problem.gram * &coef + &problem.row_sums * mu;
        let core_gram = &core * &problem.gram;
        let pred_var = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let gmg: f64 = (0..n).map(|k| problem.gram[(i, k)] * core_gram[(k, i)]).sum();
                lam * problem.gram[(i, i)] - lam * lam * gmg
            }),
        );
        let log_det =
            d as f64 * lam.ln() - 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let trace = d as f64 * lam - lam * lam * core_gram.trace();
        let dev_sq = (&problem.gram * &coef).dot(&coef);
        Ok((
            PhiFactor::Dual { coef, core },
            PhiMoments {
                pred,
                pred_var,
                log_det,
                trace,
                dev_sq,
            },
        ))
    } else {
        let mut weighted = problem.x.clone();
        for i in 0..n {
            weighted.row_mut(i).scale_mut(prec[i]);
        }
        let mut precision = problem.x.transpose() * &weighted;
        for j in 0..d {
            precision[(j, j)] += 1.0 / lam;
        }
        let chol = precision.cholesky().ok_or(Error::SingularModel)?;
        let rhs = weighted.transpose() * &problem.y + DVector::from_element(d, mu / lam);
        let mean = chol.solve(&rhs);
        let cov = chol.inverse();
        let pred = &problem.x * &mean;
        let xs = &problem.x * &cov;
        let pred_var = DVector::from_iterator(n, (0..n).map(|i| xs.row(i).dot(&problem.x.row(i))));
        let log_det = -2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let trace = cov.trace();
        let dev_sq = mean.iter().map(|m| (m - mu).powi(2)).sum();
        Ok((
            PhiFactor::Primal { mean, cov },
            PhiMoments {
                pred,
                pred_var,
                log_det,
                trace,
                dev_sq,
            },
        ))
    }
}

/// KL(Gamma(a, b) ‖ Gamma(a0, b0)) in the shape/rate parameterization.
/// Also the KL between inverse-gammas with the same shape/scale pairs.
fn kl_gamma(a: f64, b: f64, a0: f64, b0: f64) -> f64 {
    (a - a0) * digamma(a) - ln_gamma(a) + ln_gamma(a0) + a0 * (b.ln() - b0.ln()) + a * (b0 - b) / b
}

/// Current non-Gaussian factors.
#[derive(Clone)]
struct Factors {
    sigma2_shape: f64,
    sigma2_scale: f64,
    weights: Vec<WeightFactor>,
}

impl Factors {
    fn noise_precision(&self) -> f64 {
        self.sigma2_shape / self.sigma2_scale
    }

    fn expected_weights(&self) -> Vec<f64> {
        self.weights.iter().map(WeightFactor::mean).collect()
    }
}

fn bound(
    problem: &Problem,
    hyper: &Hyperparameters,
    moments: &PhiMoments,
    factors: &Factors,
) -> Result<f64> {
    let d = problem.dim() as f64;
    let lam = hyper.lambda_phi;
    let (a, b) = (factors.sigma2_shape, factors.sigma2_scale);
    let noise_precision = a / b;
    let e_log_sigma2 = b.ln() - digamma(a);
    let r = moments.residuals(&problem.y);

    let mut value = 0.0;
    for (i, factor) in factors.weights.iter().enumerate() {
        let (ew, elogw) = match *factor {
            WeightFactor::Free { shape, rate } => (shape / rate, digamma(shape) - rate.ln()),
            WeightFactor::Locked => (1.0, 0.0),
        };
        value += -0.5 * LN_2PI - 0.5 * e_log_sigma2 + 0.5 * elogw - 0.5 * noise_precision * ew * r[i];
        if let WeightFactor::Free { shape, rate } = *factor {
            value -= kl_gamma(shape, rate, hyper.alpha_w, hyper.beta_w);
        }
    }
    let kl_phi = 0.5 * ((moments.trace + moments.dev_sq) / lam - d + d * lam.ln() - moments.log_det);
    value -= kl_phi;
    value -= kl_gamma(a, b, hyper.alpha_sigma2, hyper.beta_sigma2);
    if !value.is_finite() {
        return Err(Error::Numeric("evidence lower bound".into()));
    }
    Ok(value)
}

/// Coordinate-ascent driver. Exposes single factor updates for tests.
struct Fitter<'a> {
    problem: &'a Problem,
    hyper: &'a Hyperparameters,
    solver: Solver,
    factors: Factors,
    phi: Option<(PhiFactor, PhiMoments)>,
}

impl<'a> Fitter<'a> {
    fn initialize(problem: &'a Problem, req: &'a FitRequest, solver: Solver) -> Result<Self> {
        let hyper = &req.hyper;
        let mut rng = ChaCha8Rng::seed_from_u64(req.rng_seed);
        let n = problem.len();
        let precision_prior = Gamma::new(hyper.alpha_sigma2, 1.0 / hyper.beta_sigma2)
            .map_err(|e| Error::Validation(e.to_string()))?;
        let weight_prior = Gamma::new(hyper.alpha_w, 1.0 / hyper.beta_w)
            .map_err(|e| Error::Validation(e.to_string()))?;
        // σ² ~ InvGamma(α, β)  ⇔  1/σ² ~ Gamma(α, rate β).
        let precision_draw: f64 = precision_prior.sample(&mut rng).max(FLOOR);
        let sigma2_shape = hyper.alpha_sigma2 + 0.5 * n as f64;
        let sigma2_scale = sigma2_shape / precision_draw;
        let weights = problem
            .locked
            .iter()
            .map(|&locked| {
                if locked {
                    WeightFactor::Locked
                } else {
                    let draw: f64 = weight_prior.sample(&mut rng).max(FLOOR);
                    let shape = hyper.alpha_w + 0.5;
                    WeightFactor::Free {
                        shape,
                        rate: shape / draw,
                    }
                }
            })
            .collect();
        Ok(Self {
            problem,
            hyper,
            solver,
            factors: Factors {
                sigma2_shape,
                sigma2_scale,
                weights,
            },
            phi: None,
        })
    }

    /// Moments of `q(φ)` when it still equals the prior.
    fn prior_moments(&self) -> PhiMoments {
        let lam = self.hyper.lambda_phi;
        let d = self.problem.dim() as f64;
        PhiMoments {
            pred: &self.problem.row_sums * self.hyper.mu_phi,
            pred_var: self.problem.gram.diagonal() * lam,
            log_det: d * lam.ln(),
            trace: d * lam,
            dev_sq: 0.0,
        }
    }

    fn current_bound(&self) -> Result<f64> {
        match &self.phi {
            Some((_, moments)) => bound(self.problem, self.hyper, moments, &self.factors),
            None => bound(self.problem, self.hyper, &self.prior_moments(), &self.factors),
        }
    }

    fn update_phi(&mut self) -> Result<()> {
        let ew = self.factors.expected_weights();
        self.phi = Some(update_phi(
            self.problem,
            self.hyper,
            self.factors.noise_precision(),
            &ew,
            self.solver,
        )?);
        Ok(())
    }

    fn residuals(&self) -> DVector<f64> {
        match &self.phi {
            Some((_, moments)) => moments.residuals(&self.problem.y),
            None => self.prior_moments().residuals(&self.problem.y),
        }
    }

    fn update_sigma2(&mut self) {
        let r = self.residuals();
        let ew = self.factors.expected_weights();
        let weighted: f64 = ew.iter().zip(r.iter()).map(|(w, r)| w * r).sum();
        self.factors.sigma2_shape = self.hyper.alpha_sigma2 + 0.5 * self.problem.len() as f64;
        self.factors.sigma2_scale = (self.hyper.beta_sigma2 + 0.5 * weighted).max(FLOOR);
    }

    fn update_weights(&mut self) {
        let r = self.residuals();
        let noise_precision = self.factors.noise_precision();
        for (i, factor) in self.factors.weights.iter_mut().enumerate() {
            if let WeightFactor::Free { .. } = factor {
                *factor = WeightFactor::Free {
                    shape: self.hyper.alpha_w + 0.5,
                    rate: (self.hyper.beta_w + 0.5 * noise_precision * r[i]).max(FLOOR),
                };
            }
        }
    }

    fn run(mut self) -> Result<PosteriorState> {
        let mut trace = vec![self.current_bound()?];
        let mut iterations = 0;
        loop {
            self.update_phi()?;
            self.update_sigma2();
            self.update_weights();
            iterations += 1;
            let value = self.current_bound()?;
            let previous = *trace.last().expect("trace starts non-empty");
            trace.push(value);
            if (value - previous).abs() < self.hyper.vi_tolerance
                || self.hyper.vi_max_iters == Some(iterations)
            {
                break;
            }
        }
        Ok(self.into_state(trace, iterations))
    }

    fn into_state(self, elbo_trace: Vec<f64>, iterations_run: usize) -> PosteriorState {
        let (factor, _) = self.phi.expect("at least one cycle ran");
        let lam = self.hyper.lambda_phi;
        let (phi_mean, phi_cov) = match factor {
            PhiFactor::Primal { mean, cov } => (mean, Covariance::Dense(cov)),
            PhiFactor::Dual { coef, core } => {
                let mean = self.problem.x.transpose() * coef
                    + DVector::from_element(self.problem.dim(), self.hyper.mu_phi);
                (
                    mean,
                    Covariance::LowRank {
                        prior_variance: lam,
                        basis: self.problem.x.clone(),
                        core,
                    },
                )
            }
        };
        let weights = self
            .problem
            .ids
            .iter()
            .zip(&self.factors.weights)
            .map(|(&obs_id, &factor)| WeightPosterior { obs_id, factor })
            .collect();
        PosteriorState {
            phi_mean,
            phi_cov,
            sigma2_shape: self.factors.sigma2_shape,
            sigma2_scale: self.factors.sigma2_scale,
            weights,
            elbo: *elbo_trace.last().expect("non-empty"),
            elbo_trace,
            iterations_run,
        }
    }
}

/// Fits the variational posterior. Deterministic given `rng_seed`.
pub fn fit(req: &FitRequest) -> Result<PosteriorState> {
    fit_with_solver(req, Solver::Auto)
}

pub fn fit_with_solver(req: &FitRequest, solver: Solver) -> Result<PosteriorState> {
    let problem = Problem::new(req)?;
    if problem.len() == 0 {
        return Ok(PosteriorState::prior(&req.hyper, req.dim));
    }
    Fitter::initialize(&problem, req, solver)?.run()
}

/// Evidence lower bound of `state` for the observations in `req`.
pub fn elbo(req: &FitRequest, state: &PosteriorState) -> Result<f64> {
    let problem = Problem::new(req)?;
    if state.dim() != problem.dim() || state.phi_cov.dim() != problem.dim() {
        return Err(Error::Dimension {
            expected: problem.dim(),
            actual: state.dim(),
        });
    }
    if state.weights.len() != problem.len() {
        return Err(Error::Dimension {
            expected: problem.len(),
            actual: state.weights.len(),
        });
    }
    let mut weights = Vec::with_capacity(problem.len());
    for (i, id) in problem.ids.iter().enumerate() {
        let w = state.weight(*id).ok_or_else(|| Error::not_found("observation", id))?;
        let factor = match (problem.locked[i], w.factor) {
            (true, _) => WeightFactor::Locked,
            (false, WeightFactor::Free { shape, rate }) => WeightFactor::Free { shape, rate },
            (false, WeightFactor::Locked) => {
                return Err(Error::Validation(format!(
                    "observation {id} is free but its weight factor is locked"
                )))
            }
        };
        weights.push(factor);
    }
    let mu = req.hyper.mu_phi;
    let pred = &problem.x * &state.phi_mean;
    let pred_var = DVector::from_iterator(
        problem.len(),
        problem
            .x
            .row_iter()
            .map(|row| state.phi_cov.quad_form(row.transpose().as_slice())),
    );
    let moments = PhiMoments {
        pred,
        pred_var,
        log_det: state.phi_cov.log_det()?,
        trace: state.phi_cov.trace(),
        dev_sq: state.phi_mean.iter().map(|m| (m - mu).powi(2)).sum(),
    };
    let factors = Factors {
        sigma2_shape: state.sigma2_shape,
        sigma2_scale: state.sigma2_scale,
        weights,
    };
    bound(&problem, &req.hyper, &moments, &factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{expected_weight, FeatureVector};
    use rand::Rng;

    fn obs(id: u64, x: Vec<f64>, y: f64, mode: WeightMode) -> Observation {
        Observation::new(ObsId(id), FeatureVector::new(x).unwrap(), y, mode, id).unwrap()
    }

    fn random_request(seed: u64, n: usize, d: usize, kind: ModelKind) -> FitRequest {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let observations = (0..n)
            .map(|i| {
                let raw: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                let x = FeatureVector::l2_normalized(raw).unwrap();
                let y = if rng.random_bool(0.5) { rng.random::<f64>() } else { 1.0 };
                let mode = if rng.random_bool(0.25) {
                    WeightMode::Locked
                } else if rng.random_bool(0.1) {
                    WeightMode::Deleted
                } else {
                    WeightMode::Free
                };
                Observation::new(ObsId(i as u64), x, y, mode, i as u64).unwrap()
            })
            .collect();
        FitRequest {
            observations,
            dim: d,
            hyper: Hyperparameters::SIMULATION,
            model_kind: kind,
            rng_seed: seed,
        }
    }

    #[test]
    fn zero_observations_return_prior() {
        let req = FitRequest {
            observations: vec![],
            dim: 4,
            hyper: Hyperparameters::SIMULATION,
            model_kind: ModelKind::Ard,
            rng_seed: 1,
        };
        let s = fit(&req).unwrap();
        assert_eq!(s.phi_mean, DVector::zeros(4));
        assert_eq!(s.phi_cov.to_dense(), DMatrix::identity(4, 4) * 0.1);
        assert_eq!((s.sigma2_shape, s.sigma2_scale), (2.5, 0.5));
        assert_eq!(elbo(&req, &s).unwrap(), 0.0);
    }

    #[test]
    fn only_deleted_observations_return_prior() {
        let req = FitRequest {
            observations: vec![obs(0, vec![1.0], 1.0, WeightMode::Deleted)],
            dim: 1,
            hyper: Hyperparameters::SIMULATION,
            model_kind: ModelKind::Ard,
            rng_seed: 1,
        };
        let s = fit(&req).unwrap();
        assert_eq!(s, PosteriorState::prior(&Hyperparameters::SIMULATION, 1));
        assert!(expected_weight(&s, ObsId(0)).is_err());
    }

    #[test]
    fn known_noise_limit_matches_conjugate_closed_form() {
        // A very concentrated σ² prior pins E[1/σ²] = α/β = 2, leaving the
        // textbook conjugate posterior for φ.
        let mut hyper = Hyperparameters::SIMULATION;
        hyper.alpha_sigma2 = 1e9;
        hyper.beta_sigma2 = 0.5e9;
        hyper.vi_tolerance = 1e-12;
        let req = FitRequest {
            observations: vec![
                obs(0, vec![1.0], 0.0, WeightMode::Free),
                obs(1, vec![1.0], 1.0, WeightMode::Free),
            ],
            dim: 1,
            hyper,
            model_kind: ModelKind::Lg,
            rng_seed: 3,
        };
        let s = fit(&req).unwrap();
        let tau = 2.0;
        let post_prec = 2.0 * tau + 1.0 / 0.1;
        let oracle_mean = (tau * (0.0 + 1.0)) / post_prec;
        assert!((s.phi_mean[0] - oracle_mean).abs() < 1e-7, "{}", s.phi_mean[0]);
        assert!((s.phi_cov.to_dense()[(0, 0)] - 1.0 / post_prec).abs() < 1e-7);
        // the shrinkage factor: half-way value 0.5 scaled by 2τ/(2τ + 1/λ)
        assert!((oracle_mean - 0.5 * (4.0 / 14.0)).abs() < 1e-15);
    }

    #[test]
    fn contradictory_observation_gets_lowest_weight() {
        let mut observations: Vec<Observation> = (0..9)
            .map(|i| obs(i, vec![1.0], 0.9 + 0.005 * (i as f64 - 4.0), WeightMode::Free))
            .collect();
        observations.push(obs(9, vec![1.0], 0.0, WeightMode::Free));
        let req = FitRequest {
            observations,
            dim: 1,
            hyper: Hyperparameters::SIMULATION,
            model_kind: ModelKind::Ard,
            rng_seed: 11,
        };
        let s = fit(&req).unwrap();
        let w: Vec<f64> = (0..10).map(|i| expected_weight(&s, ObsId(i)).unwrap()).collect();
        let min = w.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(w[9], min);
        assert!(w[..9].iter().all(|&v| v > w[9]));
    }

    #[test]
    fn primal_and_dual_solvers_agree() {
        for seed in 0..30 {
            let d = 2 + (seed as usize % 6);
            let n = 1 + (seed as usize * 7) % 12;
            let mut req = random_request(seed, n, d, ModelKind::Ard);
            req.hyper.vi_max_iters = Some(25);
            let p = fit_with_solver(&req, Solver::Primal).unwrap();
            let q = fit_with_solver(&req, Solver::Dual).unwrap();
            assert!((&p.phi_mean - &q.phi_mean).amax() < 1e-10);
            assert!((p.phi_cov.to_dense() - q.phi_cov.to_dense()).amax() < 1e-10);
            assert!((p.sigma2_scale - q.sigma2_scale).abs() < 1e-10);
            assert!((p.elbo - q.elbo).abs() < 1e-8);
            for (a, b) in p.weights.iter().zip(&q.weights) {
                assert!((a.factor.mean() - b.factor.mean()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn every_factor_update_raises_the_bound() {
        for seed in 0..60 {
            let d = 1 + seed as usize % 5;
            let n = 1 + (seed as usize * 13) % 20;
            let req = random_request(seed, n, d, ModelKind::Ard);
            let problem = Problem::new(&req).unwrap();
            if problem.len() == 0 {
                continue;
            }
            let mut fitter = Fitter::initialize(&problem, &req, Solver::Auto).unwrap();
            let mut last = fitter.current_bound().unwrap();
            for _ in 0..15 {
                fitter.update_phi().unwrap();
                let a = fitter.current_bound().unwrap();
                fitter.update_sigma2();
                let b = fitter.current_bound().unwrap();
                fitter.update_weights();
                let c = fitter.current_bound().unwrap();
                for v in [a, b, c] {
                    assert!(v >= last - 1e-8, "seed {seed}: {v} < {last}");
                    last = v;
                }
            }
        }
    }

    #[test]
    fn elbo_function_reproduces_fit_bound() {
        for seed in 0..20 {
            let req = random_request(seed, 3 + seed as usize % 9, 4, ModelKind::Ard);
            let s = fit(&req).unwrap();
            let e = elbo(&req, &s).unwrap();
            assert!((e - s.elbo).abs() < 1e-9, "{e} vs {}", s.elbo);
        }
    }

    #[test]
    fn perturbing_the_mean_lowers_the_bound() {
        let mut req = random_request(5, 12, 3, ModelKind::Ard);
        req.hyper.vi_tolerance = 1e-12;
        let s = fit(&req).unwrap();
        let base = elbo(&req, &s).unwrap();
        for j in 0..3 {
            for delta in [1e-3, -1e-3, 0.1] {
                let mut moved = s.clone();
                moved.phi_mean[j] += delta;
                assert!(elbo(&req, &moved).unwrap() < base);
            }
        }
    }

    #[test]
    fn lg_equals_ard_with_everything_locked() {
        for seed in 0..20 {
            let mut ard = random_request(seed, 8, 3, ModelKind::Ard);
            for o in &mut ard.observations {
                if o.weight_mode == WeightMode::Free {
                    o.weight_mode = WeightMode::Locked;
                }
            }
            let mut lg = ard.clone();
            lg.model_kind = ModelKind::Lg;
            assert_eq!(fit(&ard).unwrap(), fit(&lg).unwrap());
        }
    }

    #[test]
    fn dimension_and_numeric_errors() {
        let req = FitRequest {
            observations: vec![obs(0, vec![1.0, 0.0], 1.0, WeightMode::Free)],
            dim: 3,
            hyper: Hyperparameters::SIMULATION,
            model_kind: ModelKind::Ard,
            rng_seed: 0,
        };
        assert!(matches!(fit(&req), Err(Error::Dimension { .. })));

        let mut bad = obs(0, vec![1.0], 1.0, WeightMode::Free);
        bad.value = f64::NAN;
        let req = FitRequest {
            observations: vec![bad],
            dim: 1,
            hyper: Hyperparameters::SIMULATION,
            model_kind: ModelKind::Ard,
            rng_seed: 0,
        };
        assert!(matches!(fit(&req), Err(Error::Numeric(_))));
    }

    #[test]
    fn max_iteration_cap_is_honoured() {
        let mut req = random_request(2, 15, 4, ModelKind::Ard);
        req.hyper = Hyperparameters::INTERACTIVE;
        req.hyper.vi_tolerance = 1e-300;
        let s = fit(&req).unwrap();
        assert_eq!(s.iterations_run, 10);
        assert_eq!(s.elbo_trace.len(), 11);
    }
}
