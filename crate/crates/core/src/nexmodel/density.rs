//! Log posterior of the NEX model and its analytic gradient over the flat
//! unconstrained parameter vector.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::design::DesignData;
use crate::error::{Error, Result};
use crate::kernels::{mvn_sample, GaussianPrior};
use crate::predictor::{bilinear_loglik, log_gamma_on_log_scale, Predictor, LN_2PI};
use crate::sampler::LogDensity;
use crate::tensor3::Tensor3;

use super::{compute_propensity, MgpHyper, NexConfig, NexLayout, NexParams};

/// Posterior target for one NEX configuration and data set.
#[derive(Debug, Clone)]
pub struct NexModel {
    cfg: NexConfig,
    data: DesignData,
    layout: NexLayout,
    predictor: Predictor,
    active: Vec<bool>,
    w_prior: GaussianPrior,
    mu_prior: GaussianPrior,
}

/// `x[i, h, t] = sum_k lambda_k u[i, k] v[h, k] w[t, k]`, layout `i + n*(h + H*t)`.
fn cp_forward(n: usize, h: usize, t: usize, k: usize, u: &[f64], v: &[f64], w: &[f64], lam: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n * h * t];
    for tt in 0..t {
        let xt = &mut x[tt * n * h..(tt + 1) * n * h];
        for kk in 0..k {
            let c = lam[kk] * w[tt + t * kk];
            let uk = &u[n * kk..n * (kk + 1)];
            for hh in 0..h {
                let cv = c * v[hh + h * kk];
                for (xi, ui) in xt[n * hh..n * (hh + 1)].iter_mut().zip(uk) {
                    *xi += cv * ui;
                }
            }
        }
    }
    x
}

/// Pulls `gx = dL/dx` back onto the CP factors, accumulating into `gu`,
/// `gv`, `gw` and `glam`.
#[allow(clippy::too_many_arguments)]
fn cp_backward(
    (n, h, t, k): (usize, usize, usize, usize),
    gx: &[f64],
    (u, v, w): (&[f64], &[f64], &[f64]),
    lam: &[f64],
    (gu, gv, gw): (&mut [f64], &mut [f64], &mut [f64]),
    glam: &mut [f64],
) {
    let mut q = vec![0.0; h];
    for tt in 0..t {
        let gxt = &gx[tt * n * h..(tt + 1) * n * h];
        for kk in 0..k {
            let uk = &u[n * kk..n * (kk + 1)];
            let vk = &v[h * kk..h * (kk + 1)];
            let wtk = w[tt + t * kk];
            let lw = lam[kk] * wtk;
            let mut r = 0.0;
            for hh in 0..h {
                let col = &gxt[n * hh..n * (hh + 1)];
                let qh: f64 = col.iter().zip(uk).map(|(a, b)| a * b).sum();
                q[hh] = qh;
                r += qh * vk[hh];
                gv[hh + h * kk] += lw * qh;
                let c = lw * vk[hh];
                for (g, x) in gu[n * kk..n * (kk + 1)].iter_mut().zip(col) {
                    *g += c * x;
                }
            }
            gw[tt + t * kk] += lam[kk] * r;
            glam[kk] += wtk * r;
        }
    }
}

/// Log prior of a multiplicative gamma process on the log scale; gradient into `grad`.
pub(crate) fn mgp_log_prior(log_theta: &[f64], hyper: &MgpHyper, grad: &mut [f64]) -> f64 {
    let mut lp = 0.0;
    for (s, (&phi, g)) in log_theta.iter().zip(grad.iter_mut()).enumerate() {
        let (shape, rate) = hyper.shape_rate(s);
        let (l, d) = log_gamma_on_log_scale(phi, shape, rate);
        lp += l;
        *g += d;
    }
    lp
}

/// Converts `dL/dlambda` into `dL/dlog theta` for `lambda = cumprod(exp(log theta))`.
fn lambda_to_log_theta(glam: &[f64], lam: &[f64], out: &mut [f64]) {
    let mut acc = 0.0;
    for s in (0..lam.len()).rev() {
        acc += glam[s] * lam[s];
        out[s] += acc;
    }
}

pub(crate) fn cumulative_exp(log_theta: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    log_theta
        .iter()
        .map(|l| {
            acc += l;
            acc.exp()
        })
        .collect()
}

impl NexModel {
    pub fn new(cfg: NexConfig, data: DesignData) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        let (n, m, t) = data.dims();
        if (n, m, t) != (cfg.n, cfg.m, cfg.t) {
            return Err(Error::dim(format!(
                "data dims {:?} vs config ({}, {}, {})",
                (n, m, t),
                cfg.n,
                cfg.m,
                cfg.t
            )));
        }
        if data.symmetric != (cfg.variant == super::Variant::Symmetric) {
            return Err(Error::invalid("symmetric data must be fitted with the symmetric variant and vice versa"));
        }
        let (_, n_mu) = data.mu_index();
        let (_, n_years) = data.year_index();
        if cfg.mu_cov.dim() != n_mu {
            return Err(Error::dim(format!("mu covariance is {0}x{0}, data need {1} intercepts", cfg.mu_cov.dim(), n_mu)));
        }
        let layout = NexLayout::new(&cfg, n_mu, n_years);
        let effects_start = layout.effects.map(|e| e.alpha);
        let predictor = Predictor::new(&data, layout.mu, effects_start)?;
        let w_prior = GaussianPrior::new(vec![0.0; t], &cfg.w_cov.covariance()?)?;
        let mu_prior = GaussianPrior::new(vec![cfg.mu0; n_mu], &cfg.mu_cov.covariance()?)?;
        let active = data.active_mask();
        Ok(Self {
            cfg,
            data,
            layout,
            predictor,
            active,
            w_prior,
            mu_prior,
        })
    }

    pub fn config(&self) -> &NexConfig {
        &self.cfg
    }

    pub fn data(&self) -> &DesignData {
        &self.data
    }

    pub fn layout(&self) -> &NexLayout {
        &self.layout
    }

    pub fn params(&self, v: &[f64]) -> Result<NexParams> {
        NexParams::from_unconstrained(&self.layout, v)
    }

    /// Log-odds tensor at a flat parameter vector.
    pub fn propensity(&self, v: &[f64]) -> Result<Tensor3> {
        compute_propensity(&self.params(v)?, &self.cfg, &self.data)
    }

    pub fn lambda_k(&self, v: &[f64]) -> Vec<f64> {
        cumulative_exp(&v[self.layout.theta_k..self.layout.theta_k + self.layout.k])
    }

    pub fn lambda_h(&self, v: &[f64]) -> Vec<f64> {
        cumulative_exp(&v[self.layout.theta_h..self.layout.theta_h + self.layout.h])
    }

    /// Log posterior (up to the evidence) and its gradient.
    pub fn posterior_density_and_gradient(&self, v: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.checked(v, true)
    }

    /// Log prior including the log-transform Jacobian, and its gradient.
    pub fn log_prior_and_gradient(&self, v: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.checked(v, false)
    }

    fn checked(&self, v: &[f64], with_likelihood: bool) -> Result<(f64, Vec<f64>)> {
        if v.len() != self.layout.len {
            return Err(Error::dim(format!("flat vector has {} entries, model needs {}", v.len(), self.layout.len)));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        let mut grad = vec![0.0; v.len()];
        let lp = self.eval(v, &mut grad, with_likelihood);
        if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("log posterior".into()));
        }
        Ok((lp, grad))
    }

    /// Draw from the prior with the latent factor blocks scaled by 0.1.
    pub fn initial_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let l = &self.layout;
        let mut v = vec![0.0; l.len];
        let draw_mgp = |v: &mut [f64], hyper: &MgpHyper, rng: &mut R| {
            for (s, x) in v.iter_mut().enumerate() {
                let (shape, rate) = hyper.shape_rate(s);
                *x = Gamma::new(shape, 1.0 / rate).unwrap().sample(rng).ln();
            }
        };
        draw_mgp(&mut v[l.theta_k..l.theta_k + l.k], &self.cfg.hyper_k, rng);
        draw_mgp(&mut v[l.theta_h..l.theta_h + l.h], &self.cfg.hyper_h, rng);
        let sd = self.cfg.sigma2.sqrt();
        let normal = Normal::new(0.0, sd).unwrap();
        let mut sides = vec![(l.ux, l.n, l.vx, l.wx)];
        if let Some(uy) = l.uy {
            sides.push((uy, l.m, l.vy.unwrap(), l.wy.unwrap()));
        }
        for (u, rows, vv, w) in sides {
            for x in &mut v[u..u + rows * l.k] {
                *x = 0.1 * normal.sample(rng);
            }
            for x in &mut v[vv..vv + l.h * l.k] {
                *x = 0.1 * normal.sample(rng);
            }
            for kk in 0..l.k {
                let col = mvn_sample(self.w_prior.mean(), self.w_prior.chol(), rng).unwrap();
                for (tt, c) in col.into_iter().enumerate() {
                    v[w + tt + l.t * kk] = 0.1 * c;
                }
            }
        }
        let mu = mvn_sample(self.mu_prior.mean(), self.mu_prior.chol(), rng).unwrap();
        v[l.mu..l.mu + l.n_mu].copy_from_slice(&mu);
        self.predictor.init_effects(&mut v, &self.cfg.conditional, rng);
        v
    }

    fn eval(&self, v: &[f64], grad: &mut [f64], with_likelihood: bool) -> f64 {
        let l = &self.layout;
        let (n, m, t, h, k) = (l.n, l.m, l.t, l.h, l.k);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let lam_k = cumulative_exp(&v[l.theta_k..l.theta_k + k]);
        let lam_h = cumulative_exp(&v[l.theta_h..l.theta_h + h]);
        let mut lp = 0.0;

        if with_likelihood {
            lp += self.likelihood(v, grad, &lam_k, &lam_h);
        }

        // priors on the non-temporal factors
        let inv_s2 = 1.0 / self.cfg.sigma2;
        let norm = -0.5 * (LN_2PI + self.cfg.sigma2.ln());
        let mut gaussian_block = |start: usize, len: usize, lp: &mut f64| {
            for idx in start..start + len {
                *lp += norm - 0.5 * v[idx] * v[idx] * inv_s2;
                grad[idx] -= v[idx] * inv_s2;
            }
        };
        gaussian_block(l.ux, n * k, &mut lp);
        gaussian_block(l.vx, h * k, &mut lp);
        if let (Some(uy), Some(vy)) = (l.uy, l.vy) {
            gaussian_block(uy, m * k, &mut lp);
            gaussian_block(vy, h * k, &mut lp);
        }

        // temporal factor columns and intercepts
        let mut scratch = vec![0.0; t.max(l.n_mu)];
        for w in std::iter::once(l.wx).chain(l.wy) {
            for kk in 0..k {
                let r = w + t * kk..w + t * (kk + 1);
                lp += self.w_prior.log_density_add_grad(&v[r.clone()], &mut grad[r], &mut scratch[..t]);
            }
        }
        let r = l.mu..l.mu + l.n_mu;
        lp += self.mu_prior.log_density_add_grad(&v[r.clone()], &mut grad[r], &mut scratch[..l.n_mu]);

        // shrinkage processes (log scale, Jacobian included)
        lp += mgp_log_prior(&v[l.theta_k..l.theta_k + k], &self.cfg.hyper_k, &mut grad[l.theta_k..l.theta_k + k]);
        lp += mgp_log_prior(&v[l.theta_h..l.theta_h + h], &self.cfg.hyper_h, &mut grad[l.theta_h..l.theta_h + h]);

        lp += self.predictor.effects_log_prior(v, grad, &self.cfg.conditional);
        lp
    }

    fn likelihood(&self, v: &[f64], grad: &mut [f64], lam_k: &[f64], lam_h: &[f64]) -> f64 {
        let l = &self.layout;
        let (n, m, t, h, k) = (l.n, l.m, l.t, l.h, l.k);
        let x = cp_forward(n, h, t, k, &v[l.ux..], &v[l.vx..], &v[l.wx..], lam_k);
        let y_owned;
        let y: &[f64] = match (l.uy, l.vy, l.wy) {
            (Some(uy), Some(vy), Some(wy)) => {
                y_owned = cp_forward(m, h, t, k, &v[uy..], &v[vy..], &v[wy..], lam_k);
                &y_owned
            }
            _ => &x,
        };
        let mut gx = vec![0.0; n * h * t];
        let mut gy = if l.bipartite { vec![0.0; m * h * t] } else { Vec::new() };
        let mut glam_h = vec![0.0; h];
        let ll = bilinear_loglik(
            &self.predictor,
            &self.data.adjacency,
            &self.active,
            h,
            (&x, l.bipartite.then_some(y)),
            lam_h,
            v,
            grad,
            (&mut gx, &mut gy),
            &mut glam_h,
        );

        let mut glam_k = vec![0.0; k];
        {
            let (gu, rest) = grad[l.ux..].split_at_mut(n * k);
            let (gv, rest) = rest.split_at_mut(h * k);
            let gw = &mut rest[..t * k];
            cp_backward(
                (n, h, t, k),
                &gx,
                (&v[l.ux..l.ux + n * k], &v[l.vx..l.vx + h * k], &v[l.wx..l.wx + t * k]),
                lam_k,
                (gu, gv, gw),
                &mut glam_k,
            );
        }
        if let (Some(uy), Some(vy), Some(wy)) = (l.uy, l.vy, l.wy) {
            let (gu, rest) = grad[uy..].split_at_mut(m * k);
            let (gv, rest) = rest.split_at_mut(h * k);
            let gw = &mut rest[..t * k];
            cp_backward(
                (m, h, t, k),
                &gy,
                (&v[uy..uy + m * k], &v[vy..vy + h * k], &v[wy..wy + t * k]),
                lam_k,
                (gu, gv, gw),
                &mut glam_k,
            );
        }
        lambda_to_log_theta(&glam_k, lam_k, &mut grad[l.theta_k..l.theta_k + k]);
        lambda_to_log_theta(&glam_h, lam_h, &mut grad[l.theta_h..l.theta_h + h]);
        ll
    }
}

impl LogDensity for NexModel {
    fn dim(&self) -> usize {
        self.layout.len
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let lp = self.eval(x, grad, true);
        if lp.is_finite() {
            lp
        } else {
            f64::NAN
        }
    }
}
