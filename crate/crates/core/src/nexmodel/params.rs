use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::predictor::EffectOffsets;
use crate::tensor3::CpFactorSet;

use super::{NexConfig, Variant};

/// Positions of every parameter block in the flat unconstrained vector.
///
/// Order: `log theta^K`, `log theta^H`, `U^X`, `V^X`, `W^X`, [`U^Y`, `V^Y`,
/// `W^Y`], `mu`, [`alpha`, `gamma`, `beta`, `log var_alpha`, `log var_gamma`].
/// Matrices are column-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NexLayout {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub h: usize,
    pub k: usize,
    pub n_mu: usize,
    pub bipartite: bool,
    pub theta_k: usize,
    pub theta_h: usize,
    pub ux: usize,
    pub vx: usize,
    pub wx: usize,
    pub uy: Option<usize>,
    pub vy: Option<usize>,
    pub wy: Option<usize>,
    pub mu: usize,
    pub(crate) effects: Option<EffectOffsets>,
    pub len: usize,
}

impl NexLayout {
    pub fn new(cfg: &NexConfig, n_mu: usize, n_years: usize) -> Self {
        let (n, m, t, h, k) = (cfg.n, cfg.m, cfg.t, cfg.h, cfg.k);
        let bipartite = cfg.is_bipartite();
        let theta_k = 0;
        let theta_h = k;
        let ux = theta_h + h;
        let vx = ux + n * k;
        let wx = vx + h * k;
        let mut next = wx + t * k;
        let (uy, vy, wy) = if bipartite {
            let uy = next;
            let vy = uy + m * k;
            let wy = vy + h * k;
            next = wy + t * k;
            (Some(uy), Some(vy), Some(wy))
        } else {
            (None, None, None)
        };
        let mu = next;
        next = mu + n_mu;
        let effects = (cfg.variant == Variant::Conditional).then(|| EffectOffsets::at(next, n, n_years));
        if let Some(e) = &effects {
            next = e.end();
        }
        Self {
            n,
            m,
            t,
            h,
            k,
            n_mu,
            bipartite,
            theta_k,
            theta_h,
            ux,
            vx,
            wx,
            uy,
            vy,
            wy,
            mu,
            effects,
            len: next,
        }
    }

    pub fn n_years(&self) -> usize {
        self.effects.map_or(0, |e| e.n_gamma)
    }

    /// Ranges of the coordinates that live on the log scale.
    pub fn log_scale_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut r = vec![self.theta_k..self.theta_k + self.k, self.theta_h..self.theta_h + self.h];
        if let Some(e) = &self.effects {
            r.push(e.log_var_alpha..e.log_var_gamma + 1);
        }
        r
    }

    /// Ranges of the latent factor blocks (U, V, W of each side).
    pub fn latent_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut r = vec![self.ux..self.wx + self.t * self.k];
        if let Some(uy) = self.uy {
            r.push(uy..self.wy.unwrap() + self.t * self.k);
        }
        r
    }

    /// One name per coordinate, 1-based indices, e.g. `UX[3,2]`, `log_theta_K[1]`.
    pub fn coordinate_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len);
        let vec_names = |names: &mut Vec<String>, base: &str, n: usize| {
            names.extend((1..=n).map(|i| format!("{base}[{i}]")));
        };
        let mat_names = |names: &mut Vec<String>, base: &str, rows: usize, cols: usize| {
            for c in 1..=cols {
                for r in 1..=rows {
                    names.push(format!("{base}[{r},{c}]"));
                }
            }
        };
        vec_names(&mut names, "log_theta_K", self.k);
        vec_names(&mut names, "log_theta_H", self.h);
        mat_names(&mut names, "UX", self.n, self.k);
        mat_names(&mut names, "VX", self.h, self.k);
        mat_names(&mut names, "WX", self.t, self.k);
        if self.bipartite {
            mat_names(&mut names, "UY", self.m, self.k);
            mat_names(&mut names, "VY", self.h, self.k);
            mat_names(&mut names, "WY", self.t, self.k);
        }
        vec_names(&mut names, "mu", self.n_mu);
        if let Some(e) = &self.effects {
            vec_names(&mut names, "alpha", e.n_alpha);
            vec_names(&mut names, "gamma", e.n_gamma);
            names.push("beta".into());
            names.push("log_var_alpha".into());
            names.push("log_var_gamma".into());
        }
        names
    }
}

/// Non-temporal and temporal factor matrices of one CP decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorBlock {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectParams {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: f64,
    pub log_var_alpha: f64,
    pub log_var_gamma: f64,
}

/// Full NEX parameter state. Positive quantities are held as their logs, so
/// packing to and from the flat sampler vector is an exact copy.
#[derive(Debug, Clone, PartialEq)]
pub struct NexParams {
    pub log_theta_k: Vec<f64>,
    pub log_theta_h: Vec<f64>,
    pub x: FactorBlock,
    pub y: Option<FactorBlock>,
    pub mu: Vec<f64>,
    pub effects: Option<EffectParams>,
}

fn cumulative_exp(log_theta: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    log_theta
        .iter()
        .map(|l| {
            acc += l;
            acc.exp()
        })
        .collect()
}

impl NexParams {
    pub fn theta_k(&self) -> Vec<f64> {
        self.log_theta_k.iter().map(|l| l.exp()).collect()
    }

    pub fn theta_h(&self) -> Vec<f64> {
        self.log_theta_h.iter().map(|l| l.exp()).collect()
    }

    pub fn lambda_k(&self) -> Vec<f64> {
        cumulative_exp(&self.log_theta_k)
    }

    pub fn lambda_h(&self) -> Vec<f64> {
        cumulative_exp(&self.log_theta_h)
    }

    pub fn x_factors(&self) -> Result<CpFactorSet> {
        CpFactorSet::new(self.lambda_k(), self.x.u.clone(), self.x.v.clone(), self.x.w.clone())
    }

    pub fn y_factors(&self) -> Result<Option<CpFactorSet>> {
        self.y
            .as_ref()
            .map(|y| CpFactorSet::new(self.lambda_k(), y.u.clone(), y.v.clone(), y.w.clone()))
            .transpose()
    }

    pub(crate) fn check_shapes(&self, cfg: &NexConfig) -> Result<()> {
        let (n, m, t, h, k) = (cfg.n, cfg.m, cfg.t, cfg.h, cfg.k);
        let ok_block = |b: &FactorBlock, rows: usize| {
            b.u.shape() == (rows, k) && b.v.shape() == (h, k) && b.w.shape() == (t, k)
        };
        if self.log_theta_k.len() != k || self.log_theta_h.len() != h || !ok_block(&self.x, n) {
            return Err(Error::dim("NEX parameters do not match the configured N, H, K, T"));
        }
        match (&self.y, cfg.is_bipartite()) {
            (Some(y), true) if ok_block(y, m) => {}
            (None, false) => {}
            _ => return Err(Error::dim("second factor set present/absent inconsistently with the variant")),
        }
        if self.effects.is_some() != (cfg.variant == Variant::Conditional) {
            return Err(Error::dim("random effects present/absent inconsistently with the variant"));
        }
        Ok(())
    }

    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.log_theta_k);
        v.extend_from_slice(&self.log_theta_h);
        for b in std::iter::once(&self.x).chain(self.y.as_ref()) {
            v.extend_from_slice(b.u.as_slice());
            v.extend_from_slice(b.v.as_slice());
            v.extend_from_slice(b.w.as_slice());
        }
        v.extend_from_slice(&self.mu);
        if let Some(e) = &self.effects {
            v.extend_from_slice(&e.alpha);
            v.extend_from_slice(&e.gamma);
            v.push(e.beta);
            v.push(e.log_var_alpha);
            v.push(e.log_var_gamma);
        }
        v
    }

    pub fn from_unconstrained(layout: &NexLayout, v: &[f64]) -> Result<Self> {
        if v.len() != layout.len {
            return Err(Error::dim(format!("flat vector has {} entries, layout needs {}", v.len(), layout.len)));
        }
        let (n, m, t, h, k) = (layout.n, layout.m, layout.t, layout.h, layout.k);
        let mat = |off: usize, r: usize, c: usize| DMatrix::from_column_slice(r, c, &v[off..off + r * c]);
        let x = FactorBlock {
            u: mat(layout.ux, n, k),
            v: mat(layout.vx, h, k),
            w: mat(layout.wx, t, k),
        };
        let y = layout.uy.map(|uy| FactorBlock {
            u: mat(uy, m, k),
            v: mat(layout.vy.unwrap(), h, k),
            w: mat(layout.wy.unwrap(), t, k),
        });
        let effects = layout.effects.map(|e| EffectParams {
            alpha: v[e.alpha..e.alpha + e.n_alpha].to_vec(),
            gamma: v[e.gamma..e.gamma + e.n_gamma].to_vec(),
            beta: v[e.beta],
            log_var_alpha: v[e.log_var_alpha],
            log_var_gamma: v[e.log_var_gamma],
        });
        Ok(Self {
            log_theta_k: v[layout.theta_k..layout.theta_k + k].to_vec(),
            log_theta_h: v[layout.theta_h..layout.theta_h + h].to_vec(),
            x,
            y,
            mu: v[layout.mu..layout.mu + layout.n_mu].to_vec(),
            effects,
        })
    }

    /// Log-Jacobian of the log transforms: the sum of all log-scale coordinates.
    pub fn log_jacobian(&self) -> f64 {
        let mut s: f64 = self.log_theta_k.iter().chain(&self.log_theta_h).sum();
        if let Some(e) = &self.effects {
            s += e.log_var_alpha + e.log_var_gamma;
        }
        s
    }
}
