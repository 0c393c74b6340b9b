//! The nested exemplar (NEX) latent space model.
//!
//! Node attributes `X` (N x H x T) and `Y` (M x H x T) are each a rank-K CP
//! decomposition with shared exemplar weights `lambda^K`; the log-odds of an
//! edge is `mu_t + sum_h lambda^H_h X_iht Y_jht`. Both weight vectors follow a
//! multiplicative gamma process. The symmetric variant uses `X` on both sides;
//! the conditional variant adds row, year and covariate effects and conditions
//! on a co-occurrence mask.

mod density;
mod params;

pub use density::NexModel;
pub(crate) use density::{cumulative_exp, mgp_log_prior};
pub use params::{EffectParams, FactorBlock, NexLayout, NexParams};

use serde::{Deserialize, Serialize};

use crate::design::DesignData;
use crate::error::{Error, Result};
use crate::kernels::{abs_distance, CovSpec};
use crate::predictor::{bernoulli_logit, ConditionalPrior};
use crate::tensor3::{cp_reconstruct, Tensor3};

pub use crate::predictor::inv_link;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Bipartite,
    Symmetric,
    Conditional,
}

/// Gamma hyperparameters (shape, rate) of a multiplicative gamma process:
/// `theta_1 ~ Ga(a1, b1)`, `theta_s ~ Ga(a2, b2)` for `s > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MgpHyper {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl MgpHyper {
    /// Exemplar-space defaults.
    pub const EXEMPLAR: MgpHyper = MgpHyper {
        a1: 7.0,
        b1: 6.0,
        a2: 2.5,
        b2: 7.5,
    };
    /// Latent-trait-space defaults (stronger shrinkage than the exemplar space).
    pub const LATENT: MgpHyper = MgpHyper {
        a1: 7.0,
        b1: 6.0,
        a2: 3.0,
        b2: 12.0,
    };

    pub fn validate(&self) -> Result<()> {
        for v in [self.a1, self.b1, self.a2, self.b2] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("MGP hyperparameters must be positive: {self:?}")));
            }
        }
        Ok(())
    }

    /// Shape and rate of `theta_s` (0-based `s`).
    #[inline]
    pub fn shape_rate(&self, s: usize) -> (f64, f64) {
        if s == 0 {
            (self.a1, self.b1)
        } else {
            (self.a2, self.b2)
        }
    }
}

/// Cumulative products `lambda_k = prod_{s <= k} theta_s`.
pub fn mgp_weights(theta: &[f64]) -> Result<Vec<f64>> {
    if let Some(t) = theta.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::invalid(format!("MGP increments must be positive, got {t}")));
    }
    let mut acc = 1.0;
    Ok(theta
        .iter()
        .map(|t| {
            acc *= t;
            acc
        })
        .collect())
}

/// Prior mean and variance of `lambda_k` (1-based `k`).
pub fn mgp_moments(h: &MgpHyper, k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::invalid("MGP index is 1-based"));
    }
    let r1 = h.a1 / h.b1;
    let r2 = h.a2 / h.b2;
    let e = (k - 1) as i32;
    let mean = r1 * r2.powi(e);
    let var = r1 * r1 * r2.powi(2 * e) * ((1.0 + 1.0 / h.a1) * (1.0 + 1.0 / h.a2).powi(e) - 1.0);
    Ok((mean, var))
}

/// Full configuration of a NEX fit.
#[derive(Debug, Clone, PartialEq)]
pub struct NexConfig {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub h: usize,
    pub k: usize,
    pub variant: Variant,
    /// Covariance of every temporal factor column `W^X_k`, `W^Y_k` (T x T).
    pub w_cov: CovSpec,
    /// Covariance of the intercept vector `mu`.
    pub mu_cov: CovSpec,
    pub hyper_k: MgpHyper,
    pub hyper_h: MgpHyper,
    /// Prior variance of the entries of `U` and `V`.
    pub sigma2: f64,
    pub mu0: f64,
    pub conditional: ConditionalPrior,
}

/// Rule of thumb for the prior variance of non-temporal factors given a
/// guess `k_star` of the exemplar rank.
pub fn default_sigma2(k_star: f64) -> f64 {
    1.0 / k_star.sqrt()
}

pub const DEFAULT_K_STAR: f64 = 7.0;
pub const DEFAULT_LENGTH_SCALE: f64 = 0.02;

impl NexConfig {
    /// Bipartite or symmetric configuration on a regular time grid with the
    /// default hyperparameters.
    pub fn new(n: usize, m: usize, t: usize, h: usize, k: usize, variant: Variant) -> Self {
        let m = if variant == Variant::Symmetric { n } else { m };
        Self {
            n,
            m,
            t,
            h,
            k,
            variant,
            w_cov: CovSpec::regular_grid(t, DEFAULT_LENGTH_SCALE),
            mu_cov: CovSpec::regular_grid(t, DEFAULT_LENGTH_SCALE),
            hyper_k: MgpHyper::EXEMPLAR,
            hyper_h: MgpHyper::LATENT,
            sigma2: default_sigma2(DEFAULT_K_STAR),
            mu0: 0.0,
            conditional: ConditionalPrior::default(),
        }
    }

    /// Configuration matched to a data set: dims from the data, intercept
    /// prior mean from the empirical prevalence, and for the conditional
    /// variant a separable (week, year) kernel for `W` and a week kernel for `mu`.
    pub fn for_data(d: &DesignData, variant: Variant, h: usize, k: usize, length_scale: f64) -> Result<Self> {
        let (n, m, t) = d.dims();
        let mut cfg = Self::new(n, m, t, h, k, variant);
        cfg.m = m;
        cfg.mu0 = empirical_mu0(d)?;
        cfg.set_length_scale(length_scale);
        if variant == Variant::Conditional {
            let ti = d
                .time
                .as_ref()
                .ok_or_else(|| Error::invalid("conditional variant needs a week/year time index"))?;
            let (weeks, _) = ti.week_levels();
            cfg.w_cov = CovSpec::separable(abs_distance(&ti.week), length_scale, abs_distance(&ti.year), 10.0 * length_scale);
            cfg.mu_cov = CovSpec::plain(abs_distance(&weeks), length_scale);
        }
        Ok(cfg)
    }

    /// Sets the decay rate of both temporal kernels (separable: the first factor).
    pub fn set_length_scale(&mut self, k: f64) {
        self.w_cov.k1 = k;
        self.mu_cov.k1 = k;
    }

    pub fn is_bipartite(&self) -> bool {
        self.variant != Variant::Symmetric
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.t == 0 || self.h == 0 || self.k == 0 {
            return Err(Error::invalid("dimensions and truncation levels must be positive"));
        }
        if self.h > self.k {
            return Err(Error::invalid(format!(
                "latent dimension H = {} exceeds exemplar dimension K = {} (requires H <= K)",
                self.h, self.k
            )));
        }
        if self.variant == Variant::Symmetric && self.n != self.m {
            return Err(Error::invalid("symmetric variant needs N = M"));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::invalid(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !self.mu0.is_finite() {
            return Err(Error::invalid("mu0 must be finite"));
        }
        if self.w_cov.dim() != self.t {
            return Err(Error::dim(format!("W covariance is {0}x{0}, T = {1}", self.w_cov.dim(), self.t)));
        }
        self.hyper_k.validate()?;
        self.hyper_h.validate()?;
        self.conditional.validate()?;
        Ok(())
    }
}

/// `log(p / (1 - p))` with `p` the fraction of observed cells that are edges.
pub fn empirical_mu0(d: &DesignData) -> Result<f64> {
    let (n, m, t) = d.dims();
    let (mut n_obs, mut n_tot) = (0.0, 0.0);
    for tt in 0..t {
        for j in 0..m {
            for i in 0..n {
                if d.is_active(i, j, tt) {
                    n_tot += 1.0;
                    n_obs += d.adjacency.get(i, j, tt);
                }
            }
        }
    }
    if n_tot == 0.0 {
        return Err(Error::invalid("no observed cells: empirical prevalence undefined"));
    }
    let p = n_obs / n_tot;
    if p == 0.0 || p == 1.0 {
        return Err(Error::invalid(format!("empirical prevalence {p} has infinite log-odds")));
    }
    Ok((p / (1.0 - p)).ln())
}

/// Log-odds tensor `S` computed from explicit CP reconstructions.
pub fn compute_propensity(p: &NexParams, cfg: &NexConfig, d: &DesignData) -> Result<Tensor3> {
    let (n, m, t) = d.dims();
    if (n, m, t) != (cfg.n, cfg.m, cfg.t) {
        return Err(Error::dim(format!("data dims {:?} vs config ({}, {}, {})", (n, m, t), cfg.n, cfg.m, cfg.t)));
    }
    p.check_shapes(cfg)?;
    let x = cp_reconstruct(&p.x_factors()?)?;
    let y = match p.y_factors()? {
        Some(f) => cp_reconstruct(&f)?,
        None => x.clone(),
    };
    if x.dims() != (n, cfg.h, t) || y.dims() != (m, cfg.h, t) {
        return Err(Error::dim("factor tensors do not match the data"));
    }
    let lambda_h = p.lambda_h();
    let (mu_index, n_mu) = d.mu_index();
    if p.mu.len() != n_mu {
        return Err(Error::dim(format!("{} intercepts but the data need {n_mu}", p.mu.len())));
    }
    let (year_index, n_years) = d.year_index();
    if let Some(e) = &p.effects {
        if e.alpha.len() != n || e.gamma.len() != n_years {
            return Err(Error::dim("random effect lengths do not match the data"));
        }
        if d.covariate.is_none() {
            return Err(Error::invalid("conditional variant needs a per-slice covariate"));
        }
    }
    Ok(Tensor3::from_fn((n, m, t), |i, j, tt| {
        let mut s = p.mu[mu_index[tt]];
        if let Some(e) = &p.effects {
            s += e.alpha[i] + e.gamma[year_index[tt]] + e.beta * d.covariate.as_ref().unwrap()[tt];
        }
        for (h, l) in lambda_h.iter().enumerate() {
            s += l * (x.get(i, h, tt) * y.get(j, h, tt));
        }
        s
    }))
}

/// Bernoulli-logit log likelihood over the active cells of `d`.
pub fn log_likelihood(d: &DesignData, s: &Tensor3) -> Result<f64> {
    if s.dims() != d.dims() {
        return Err(Error::dim(format!("propensity dims {:?} vs data {:?}", s.dims(), d.dims())));
    }
    let (n, m, t) = d.dims();
    let mut ll = 0.0;
    for tt in 0..t {
        for j in 0..m {
            for i in 0..n {
                if d.is_active(i, j, tt) {
                    ll += bernoulli_logit(d.adjacency.get(i, j, tt), s.get(i, j, tt)).0;
                }
            }
        }
    }
    Ok(ll)
}
