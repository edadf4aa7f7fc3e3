//! Exact posterior moments of one-dimensional problems by brute-force
//! integration over a (φ, log σ²) grid, with every free weight integrated
//! out analytically.

use relfeed_core::Hyperparameters;

pub struct Instance {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub locked: Vec<bool>,
}

pub struct Moments {
    pub phi_mean: f64,
    /// E[w_i]; locked observations report 1.
    pub weights: Vec<f64>,
}

const PHI_POINTS: usize = 2001;
const LOG_S2_POINTS: usize = 1500;

pub fn integrate(inst: &Instance, h: &Hyperparameters) -> Moments {
    let (mu, lam) = (h.mu_phi, h.lambda_phi);
    let (a0, b0, aw, bw) = (h.alpha_sigma2, h.beta_sigma2, h.alpha_w, h.beta_w);
    let phi_half = 4.0_f64.max(mu.abs() + 12.0 * lam.sqrt());
    let (ls_lo, ls_hi) = (1e-4_f64.ln(), 1e3_f64.ln());
    let phi_at = |i: usize| -phi_half + 2.0 * phi_half * i as f64 / (PHI_POINTS - 1) as f64;
    let ls_at = |j: usize| ls_lo + (ls_hi - ls_lo) * j as f64 / (LOG_S2_POINTS - 1) as f64;

    // log density up to a constant; the grid is uniform in log σ², hence
    // the extra Jacobian term.
    let log_density = |phi: f64, ls: f64| -> f64 {
        let s2 = ls.exp();
        let mut lp = -0.5 * (phi - mu).powi(2) / lam - (a0 + 1.0) * ls - b0 / s2 + ls;
        for ((&x, &y), &locked) in inst.x.iter().zip(&inst.y).zip(&inst.locked) {
            let r = (y - x * phi).powi(2);
            lp -= 0.5 * ls;
            lp -= if locked {
                0.5 * r / s2
            } else {
                // Student-t from ∫ N(y | xφ, σ²/w) Gamma(w | aw, bw) dw
                (aw + 0.5) * (bw + r / (2.0 * s2)).ln()
            };
        }
        lp
    };

    let mut max = f64::NEG_INFINITY;
    for i in 0..PHI_POINTS {
        for j in 0..LOG_S2_POINTS {
            max = max.max(log_density(phi_at(i), ls_at(j)));
        }
    }
    let n = inst.x.len();
    let (mut z, mut phi_sum) = (0.0, 0.0);
    let mut w_sum = vec![0.0; n];
    for i in 0..PHI_POINTS {
        let phi = phi_at(i);
        for j in 0..LOG_S2_POINTS {
            let ls = ls_at(j);
            let p = (log_density(phi, ls) - max).exp();
            if p == 0.0 {
                continue;
            }
            z += p;
            phi_sum += p * phi;
            let s2 = ls.exp();
            for k in 0..n {
                if !inst.locked[k] {
                    let r = (inst.y[k] - inst.x[k] * phi).powi(2);
                    w_sum[k] += p * (aw + 0.5) / (bw + r / (2.0 * s2));
                }
            }
        }
    }
    Moments {
        phi_mean: phi_sum / z,
        weights: (0..n)
            .map(|k| if inst.locked[k] { 1.0 } else { w_sum[k] / z })
            .collect(),
    }
}
