//! Non-latent part of the linear predictor, shared by NEX and DLF:
//! `mu[w(t)] + alpha_i + gamma[r(t)] + beta * c_t`, plus the Bernoulli-logit
//! pieces both models use.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::design::DesignData;
use crate::error::{Error, Result};
use crate::tensor3::Tensor3;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Inverse logit, overflow-safe for any finite input.
#[inline]
pub fn inv_link(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli-logit log likelihood of `a` at log-odds `s` and its derivative
/// `a - inv_link(s)`.
#[inline]
pub(crate) fn bernoulli_logit(a: f64, s: f64) -> (f64, f64) {
    let e = (-s.abs()).exp();
    let softplus = s.max(0.0) + e.ln_1p();
    let p = if s >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (a * s - softplus, a - p)
}

/// `log Ga(x | shape, rate)` on the log scale `x = exp(phi)`, including the
/// Jacobian; returns the value and the derivative in `phi`.
#[inline]
pub(crate) fn log_gamma_on_log_scale(phi: f64, shape: f64, rate: f64) -> (f64, f64) {
    let x = phi.exp();
    (
        shape * rate.ln() - ln_gamma(shape) + shape * phi - rate * x,
        shape - rate * x,
    )
}

/// Priors for the covariate-adjusted (conditional) variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionalPrior {
    /// Precision hyperprior is `Ga(eta0 / 2, eta0 * sigma0_sq / 2)`.
    pub eta0: f64,
    pub sigma0_sq: f64,
    pub beta_mean: f64,
    pub beta_sd: f64,
}

impl Default for ConditionalPrior {
    fn default() -> Self {
        Self {
            eta0: 100.0,
            sigma0_sq: 1.0,
            beta_mean: 0.0,
            beta_sd: 1.0,
        }
    }
}

impl ConditionalPrior {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta0", self.eta0), ("sigma0_sq", self.sigma0_sq), ("beta_sd", self.beta_sd)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub(crate) fn precision_shape_rate(&self) -> (f64, f64) {
        (self.eta0 / 2.0, self.eta0 * self.sigma0_sq / 2.0)
    }
}

/// Offsets of the random and fixed effects inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct EffectOffsets {
    pub alpha: usize,
    pub n_alpha: usize,
    pub gamma: usize,
    pub n_gamma: usize,
    pub beta: usize,
    pub log_var_alpha: usize,
    pub log_var_gamma: usize,
}

impl EffectOffsets {
    pub fn at(start: usize, n_alpha: usize, n_gamma: usize) -> Self {
        let gamma = start + n_alpha;
        let beta = gamma + n_gamma;
        Self {
            alpha: start,
            n_alpha,
            gamma,
            n_gamma,
            beta,
            log_var_alpha: beta + 1,
            log_var_gamma: beta + 2,
        }
    }

    pub fn end(&self) -> usize {
        self.log_var_gamma + 1
    }
}

/// Evaluator of the non-latent predictor terms for one model instance.
#[derive(Debug, Clone)]
pub(crate) struct Predictor {
    pub mu: usize,
    pub mu_index: Vec<usize>,
    pub effects: Option<EffectOffsets>,
    pub year_index: Vec<usize>,
    pub covariate: Vec<f64>,
}

impl Predictor {
    pub fn new(d: &DesignData, mu_offset: usize, effects_start: Option<usize>) -> Result<Self> {
        let (mu_index, _) = d.mu_index();
        let (year_index, n_years) = d.year_index();
        let t = d.dims().2;
        let effects = effects_start.map(|s| EffectOffsets::at(s, d.dims().0, n_years));
        let covariate = match (&d.covariate, effects.is_some()) {
            (Some(c), _) => c.clone(),
            (None, false) => vec![0.0; t],
            (None, true) => return Err(Error::invalid("conditional variant needs a per-slice covariate")),
        };
        Ok(Self {
            mu: mu_offset,
            mu_index,
            effects,
            year_index,
            covariate,
        })
    }

    /// Predictor part shared by all cells of slice `t`.
    #[inline]
    pub fn slice_base(&self, v: &[f64], t: usize) -> f64 {
        let mut s = v[self.mu + self.mu_index[t]];
        if let Some(e) = &self.effects {
            s += v[e.gamma + self.year_index[t]] + v[e.beta] * self.covariate[t];
        }
        s
    }

    /// Row effect `alpha_i` (zero outside the conditional variant).
    #[inline]
    pub fn row_base(&self, v: &[f64], i: usize) -> f64 {
        match &self.effects {
            Some(e) => v[e.alpha + i],
            None => 0.0,
        }
    }

    /// Accumulates gradients from one slice given the cell residuals summed per row.
    pub fn backprop_slice(&self, grad: &mut [f64], t: usize, row_sums: &[f64]) {
        let total: f64 = row_sums.iter().sum();
        grad[self.mu + self.mu_index[t]] += total;
        if let Some(e) = &self.effects {
            grad[e.gamma + self.year_index[t]] += total;
            grad[e.beta] += total * self.covariate[t];
            for (i, r) in row_sums.iter().enumerate() {
                grad[e.alpha + i] += r;
            }
        }
    }

    /// Draws the effects block from its prior into `v`.
    pub fn init_effects<R: Rng + ?Sized>(&self, v: &mut [f64], prior: &ConditionalPrior, rng: &mut R) {
        let Some(e) = &self.effects else { return };
        let (shape, rate) = prior.precision_shape_rate();
        let prec = Gamma::new(shape, 1.0 / rate).unwrap();
        for (start, n, lv) in [(e.alpha, e.n_alpha, e.log_var_alpha), (e.gamma, e.n_gamma, e.log_var_gamma)] {
            let var = 1.0 / prec.sample(rng);
            v[lv] = var.ln();
            let nd = Normal::new(0.0, var.sqrt()).unwrap();
            for x in &mut v[start..start + n] {
                *x = nd.sample(rng);
            }
        }
        v[e.beta] = Normal::new(prior.beta_mean, prior.beta_sd).unwrap().sample(rng);
    }

    /// Log prior of the random/fixed effects and their variances, with gradient.
    pub fn effects_log_prior(&self, v: &[f64], grad: &mut [f64], prior: &ConditionalPrior) -> f64 {
        let Some(e) = &self.effects else { return 0.0 };
        let (shape, rate) = prior.precision_shape_rate();
        let mut lp = 0.0;
        for (start, n, lv) in [(e.alpha, e.n_alpha, e.log_var_alpha), (e.gamma, e.n_gamma, e.log_var_gamma)] {
            let psi = v[lv];
            let prec = (-psi).exp();
            let mut ss = 0.0;
            for idx in start..start + n {
                ss += v[idx] * v[idx];
                grad[idx] -= v[idx] * prec;
            }
            lp += -0.5 * ss * prec - 0.5 * n as f64 * (LN_2PI + psi);
            grad[lv] += 0.5 * ss * prec - 0.5 * n as f64;
            // precision ~ Ga(shape, rate), parameterised by psi = log variance
            lp += shape * rate.ln() - ln_gamma(shape) - shape * psi - rate * prec;
            grad[lv] += -shape + rate * prec;
        }
        let z = (v[e.beta] - prior.beta_mean) / prior.beta_sd;
        lp += -0.5 * z * z - prior.beta_sd.ln() - 0.5 * LN_2PI;
        grad[e.beta] -= z / prior.beta_sd;
        lp
    }
}

/// Bernoulli-logit log likelihood over the active cells of `adjacency` with
/// `s_ijt = base(i, t) + sum_h lam_h x_iht y_jht`.
///
/// `x` is `n x h x t` and `y` is `m x h x t`, both with the first index
/// fastest; `y = None` means the symmetric case `y = x`. Adds `dL/dx` and
/// `dL/dy` into `gx`, `gy` (`gy` unused when symmetric), `dL/dlam` into
/// `glam`, and the predictor gradients into `grad`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bilinear_loglik(
    predictor: &Predictor,
    adjacency: &Tensor3,
    active: &[bool],
    h: usize,
    (x, y): (&[f64], Option<&[f64]>),
    lam: &[f64],
    v: &[f64],
    grad: &mut [f64],
    (gx, gy): (&mut [f64], &mut [f64]),
    glam: &mut [f64],
) -> f64 {
    let (n, m, t) = adjacency.dims();
    let bipartite = y.is_some();
    let y = y.unwrap_or(x);
    let mut xl = vec![0.0; n * h];
    let mut gs = vec![0.0; n * m];
    let mut gyx = vec![0.0; n * h];
    let mut row_sums = vec![0.0; n];
    let alpha: Vec<f64> = (0..n).map(|i| predictor.row_base(v, i)).collect();
    let a = adjacency.as_slice();
    let mut ll = 0.0;

    for tt in 0..t {
        let xt = &x[tt * n * h..(tt + 1) * n * h];
        let yt = &y[tt * m * h..(tt + 1) * m * h];
        for hh in 0..h {
            for i in 0..n {
                xl[i + n * hh] = xt[i + n * hh] * lam[hh];
            }
        }
        let base = predictor.slice_base(v, tt);
        row_sums.iter_mut().for_each(|r| *r = 0.0);
        for j in 0..m {
            for i in 0..n {
                let o = i + n * (j + m * tt);
                if !active[o] {
                    gs[i + n * j] = 0.0;
                    continue;
                }
                let mut s = base + alpha[i];
                for hh in 0..h {
                    s += xl[i + n * hh] * yt[j + m * hh];
                }
                let (li, gi) = bernoulli_logit(a[o], s);
                ll += li;
                gs[i + n * j] = gi;
                row_sums[i] += gi;
            }
        }
        predictor.backprop_slice(grad, tt, &row_sums);

        // gyx[i, h] = sum_j G[i, j] y[j, h]
        gyx.iter_mut().for_each(|x| *x = 0.0);
        for hh in 0..h {
            for j in 0..m {
                let yjh = yt[j + m * hh];
                if yjh == 0.0 {
                    continue;
                }
                for i in 0..n {
                    gyx[i + n * hh] += gs[i + n * j] * yjh;
                }
            }
        }
        let gxt = &mut gx[tt * n * h..(tt + 1) * n * h];
        for hh in 0..h {
            for i in 0..n {
                let gval = gyx[i + n * hh];
                gxt[i + n * hh] += lam[hh] * gval;
                glam[hh] += xt[i + n * hh] * gval;
            }
        }
        // other side: sum_i G[i, j] lam_h x[i, h]
        let gyt: &mut [f64] = if bipartite { &mut gy[tt * m * h..(tt + 1) * m * h] } else { gxt };
        for hh in 0..h {
            for j in 0..m {
                let col = &gs[n * j..n * (j + 1)];
                let s: f64 = col.iter().zip(&xl[n * hh..n * (hh + 1)]).map(|(a, b)| a * b).sum();
                gyt[j + m * hh] += s;
            }
        }
    }
    ll
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn inv_link_examples() {
        assert_eq!(inv_link(0.0), 0.5);
        assert_abs_diff_eq!(inv_link(-0.6), 0.354344, epsilon = 1e-6);
        // 1 - 4e-18 rounds to 1 in double precision
        let p = inv_link(40.0);
        assert!(p <= 1.0 && 1.0 - p < 1e-15);
        assert!(inv_link(-40.0) > 0.0);
        assert!(inv_link(700.0).is_finite() && inv_link(-700.0) > 0.0);
    }

    #[test]
    fn inv_link_symmetric_and_increasing() {
        let mut prev = 0.0;
        for i in -400..=400 {
            let s = i as f64 * 0.1;
            let p = inv_link(s);
            assert!((p + inv_link(-s) - 1.0).abs() <= 1e-15);
            assert!(p >= prev);
            if s.abs() < 30.0 {
                assert!(p > prev);
            }
            prev = p;
        }
    }

    #[test]
    fn bernoulli_pieces() {
        let (l, g) = bernoulli_logit(1.0, 0.0);
        assert_abs_diff_eq!(l, -std::f64::consts::LN_2, epsilon = 1e-12);
        assert_eq!(g, 0.5);
        let (l, g) = bernoulli_logit(0.0, 800.0);
        assert_eq!(l, -800.0);
        assert_eq!(g, -1.0);
    }

    #[test]
    fn gamma_log_scale_matches_statrs() {
        use statrs::distribution::{Continuous, Gamma};
        let g = Gamma::new(2.5, 7.5).unwrap();
        for phi in [-2.0, -0.3, 0.0, 0.8] {
            let (lp, _) = log_gamma_on_log_scale(phi, 2.5, 7.5);
            assert_abs_diff_eq!(lp, g.ln_pdf(f64::exp(phi)) + phi, epsilon = 1e-12);
        }
    }
}
