//! Dynamic latent factor model: every node carries an `H`-dimensional latent
//! path over time with a Gaussian process prior of precision `tau_h`, and the
//! log-odds of an edge is `mu_t + x_i(t)' y_j(t)`. The precisions follow a
//! multiplicative gamma process `tau_h = prod_{s <= h} vartheta_s`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::design::DesignData;
use crate::error::{Error, Result};
use crate::kernels::{mvn_sample, CovSpec, GaussianPrior};
use crate::nexmodel::{cumulative_exp, empirical_mu0, mgp_log_prior, EffectParams, MgpHyper, Variant};
use crate::predictor::{bilinear_loglik, ConditionalPrior, EffectOffsets, Predictor};
use crate::sampler::LogDensity;
use crate::tensor3::Tensor3;

/// Truncation level used when fitting to synthetic data.
pub const DEFAULT_DLF_H: usize = 5;

/// `vartheta_1 ~ Ga(2, 1)`, `vartheta_s ~ Ga(2, 1)`.
pub const DLF_SHRINKAGE: MgpHyper = MgpHyper {
    a1: 2.0,
    b1: 1.0,
    a2: 2.0,
    b2: 1.0,
};

#[derive(Debug, Clone, PartialEq)]
pub struct DlfConfig {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub h: usize,
    pub variant: Variant,
    /// Covariance `C_X` of each latent path before scaling by `1 / tau_h`.
    pub x_cov: CovSpec,
    pub mu_cov: CovSpec,
    pub shrinkage: MgpHyper,
    pub mu0: f64,
    pub conditional: ConditionalPrior,
}

impl DlfConfig {
    pub fn new(n: usize, m: usize, t: usize, h: usize, variant: Variant) -> Self {
        let m = if variant == Variant::Symmetric { n } else { m };
        Self {
            n,
            m,
            t,
            h,
            variant,
            x_cov: CovSpec::regular_grid(t, crate::nexmodel::DEFAULT_LENGTH_SCALE),
            mu_cov: CovSpec::regular_grid(t, crate::nexmodel::DEFAULT_LENGTH_SCALE),
            shrinkage: DLF_SHRINKAGE,
            mu0: 0.0,
            conditional: ConditionalPrior::default(),
        }
    }

    /// Same kernel choices as `NexConfig::for_data`.
    pub fn for_data(d: &DesignData, variant: Variant, h: usize, length_scale: f64) -> Result<Self> {
        let (n, m, t) = d.dims();
        let mut cfg = Self::new(n, m, t, h, variant);
        cfg.m = m;
        cfg.mu0 = empirical_mu0(d)?;
        cfg.x_cov.k1 = length_scale;
        cfg.mu_cov.k1 = length_scale;
        if variant == Variant::Conditional {
            let ti = d
                .time
                .as_ref()
                .ok_or_else(|| Error::invalid("conditional variant needs a week/year time index"))?;
            let (weeks, _) = ti.week_levels();
            use crate::kernels::abs_distance;
            cfg.x_cov = CovSpec::separable(abs_distance(&ti.week), length_scale, abs_distance(&ti.year), 10.0 * length_scale);
            cfg.mu_cov = CovSpec::plain(abs_distance(&weeks), length_scale);
        }
        Ok(cfg)
    }

    pub fn is_bipartite(&self) -> bool {
        self.variant != Variant::Symmetric
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.t == 0 || self.h == 0 {
            return Err(Error::invalid("dimensions and truncation level must be positive"));
        }
        if self.variant == Variant::Symmetric && self.n != self.m {
            return Err(Error::invalid("symmetric variant needs N = M"));
        }
        if self.x_cov.dim() != self.t {
            return Err(Error::dim(format!("latent path covariance is {0}x{0}, T = {1}", self.x_cov.dim(), self.t)));
        }
        if !self.mu0.is_finite() {
            return Err(Error::invalid("mu0 must be finite"));
        }
        self.shrinkage.validate()?;
        self.conditional.validate()
    }
}

/// Flat layout: `log vartheta`, `x` paths, [`y` paths], `mu`, [effects].
/// Path `(i, h)` occupies `T` consecutive entries at `x + T * (i + N * h)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DlfLayout {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub h: usize,
    pub n_mu: usize,
    pub bipartite: bool,
    pub theta: usize,
    pub x: usize,
    pub y: Option<usize>,
    pub mu: usize,
    pub(crate) effects: Option<EffectOffsets>,
    pub len: usize,
}

impl DlfLayout {
    pub fn new(cfg: &DlfConfig, n_mu: usize, n_years: usize) -> Self {
        let (n, m, t, h) = (cfg.n, cfg.m, cfg.t, cfg.h);
        let bipartite = cfg.is_bipartite();
        let theta = 0;
        let x = h;
        let mut next = x + n * h * t;
        let y = bipartite.then(|| {
            let y = next;
            next += m * h * t;
            y
        });
        let mu = next;
        next += n_mu;
        let effects = (cfg.variant == Variant::Conditional).then(|| EffectOffsets::at(next, n, n_years));
        if let Some(e) = &effects {
            next = e.end();
        }
        Self {
            n,
            m,
            t,
            h,
            n_mu,
            bipartite,
            theta,
            x,
            y,
            mu,
            effects,
            len: next,
        }
    }

    /// Number of latent path coordinates, `(N + M) H T` (bipartite) or `N H T`.
    pub fn n_latent(&self) -> usize {
        let rows = if self.bipartite { self.n + self.m } else { self.n };
        rows * self.h * self.t
    }

    pub fn latent_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut r = vec![self.x..self.x + self.n * self.h * self.t];
        if let Some(y) = self.y {
            r.push(y..y + self.m * self.h * self.t);
        }
        r
    }

    pub fn coordinate_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.h).map(|s| format!("log_vartheta[{s}]")).collect();
        let paths = |names: &mut Vec<String>, base: &str, rows: usize| {
            for hh in 1..=self.h {
                for i in 1..=rows {
                    for tt in 1..=self.t {
                        names.push(format!("{base}[{i},{hh},{tt}]"));
                    }
                }
            }
        };
        paths(&mut names, "x", self.n);
        if self.bipartite {
            paths(&mut names, "y", self.m);
        }
        names.extend((1..=self.n_mu).map(|i| format!("mu[{i}]")));
        if let Some(e) = &self.effects {
            names.extend((1..=e.n_alpha).map(|i| format!("alpha[{i}]")));
            names.extend((1..=e.n_gamma).map(|i| format!("gamma[{i}]")));
            names.extend(["beta".into(), "log_var_alpha".into(), "log_var_gamma".into()]);
        }
        names
    }

    fn paths_to_tensor(&self, v: &[f64], start: usize, rows: usize) -> Tensor3 {
        let (t, h) = (self.t, self.h);
        Tensor3::from_fn((rows, h, t), |i, hh, tt| v[start + tt + t * (i + rows * hh)])
    }

    fn tensor_to_paths(&self, x: &Tensor3, out: &mut [f64], start: usize) {
        let (rows, h, t) = x.dims();
        for hh in 0..h {
            for i in 0..rows {
                for tt in 0..t {
                    out[start + tt + t * (i + rows * hh)] = x.get(i, hh, tt);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlfParams {
    pub log_vartheta: Vec<f64>,
    /// `N x H x T` latent paths.
    pub x: Tensor3,
    pub y: Option<Tensor3>,
    pub mu: Vec<f64>,
    pub effects: Option<EffectParams>,
}

impl DlfParams {
    /// Precisions `tau_h = prod_{s <= h} vartheta_s`.
    pub fn tau(&self) -> Vec<f64> {
        cumulative_exp(&self.log_vartheta)
    }

    pub fn to_unconstrained(&self, layout: &DlfLayout) -> Result<Vec<f64>> {
        if self.x.dims() != (layout.n, layout.h, layout.t) || self.log_vartheta.len() != layout.h || self.mu.len() != layout.n_mu {
            return Err(Error::dim("DLF parameters do not match the layout"));
        }
        let mut v = vec![0.0; layout.len];
        v[..layout.h].copy_from_slice(&self.log_vartheta);
        layout.tensor_to_paths(&self.x, &mut v, layout.x);
        match (&self.y, layout.y) {
            (Some(y), Some(off)) if y.dims() == (layout.m, layout.h, layout.t) => layout.tensor_to_paths(y, &mut v, off),
            (None, None) => {}
            _ => return Err(Error::dim("second latent path set inconsistent with the layout")),
        }
        v[layout.mu..layout.mu + layout.n_mu].copy_from_slice(&self.mu);
        match (&self.effects, &layout.effects) {
            (Some(p), Some(e)) if p.alpha.len() == e.n_alpha && p.gamma.len() == e.n_gamma => {
                v[e.alpha..e.alpha + e.n_alpha].copy_from_slice(&p.alpha);
                v[e.gamma..e.gamma + e.n_gamma].copy_from_slice(&p.gamma);
                v[e.beta] = p.beta;
                v[e.log_var_alpha] = p.log_var_alpha;
                v[e.log_var_gamma] = p.log_var_gamma;
            }
            (None, None) => {}
            _ => return Err(Error::dim("random effects inconsistent with the layout")),
        }
        Ok(v)
    }

    pub fn from_unconstrained(layout: &DlfLayout, v: &[f64]) -> Result<Self> {
        if v.len() != layout.len {
            return Err(Error::dim(format!("flat vector has {} entries, layout needs {}", v.len(), layout.len)));
        }
        Ok(Self {
            log_vartheta: v[..layout.h].to_vec(),
            x: layout.paths_to_tensor(v, layout.x, layout.n),
            y: layout.y.map(|y| layout.paths_to_tensor(v, y, layout.m)),
            mu: v[layout.mu..layout.mu + layout.n_mu].to_vec(),
            effects: layout.effects.map(|e| EffectParams {
                alpha: v[e.alpha..e.alpha + e.n_alpha].to_vec(),
                gamma: v[e.gamma..e.gamma + e.n_gamma].to_vec(),
                beta: v[e.beta],
                log_var_alpha: v[e.log_var_alpha],
                log_var_gamma: v[e.log_var_gamma],
            }),
        })
    }
}

/// Log-odds tensor `mu_t + x_i(t)' y_j(t)` plus the conditional-variant terms.
pub fn dlf_propensity(p: &DlfParams, d: &DesignData) -> Result<Tensor3> {
    let (n, m, t) = d.dims();
    let (_, h, tx) = p.x.dims();
    if p.x.dims().0 != n || tx != t {
        return Err(Error::dim(format!("latent paths {:?} do not match data {:?}", p.x.dims(), d.dims())));
    }
    let y = match &p.y {
        Some(y) if y.dims() == (m, h, t) => y,
        Some(y) => return Err(Error::dim(format!("latent paths {:?} do not match data {:?}", y.dims(), d.dims()))),
        None if n == m => &p.x,
        None => return Err(Error::dim("symmetric latent paths need square data")),
    };
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
        for hh in 0..h {
            s += p.x.get(i, hh, tt) * y.get(j, hh, tt);
        }
        s
    }))
}

/// Posterior target of the dynamic latent factor model.
#[derive(Debug, Clone)]
pub struct DlfModel {
    cfg: DlfConfig,
    data: DesignData,
    layout: DlfLayout,
    predictor: Predictor,
    active: Vec<bool>,
    path_prior: GaussianPrior,
    mu_prior: GaussianPrior,
}

impl DlfModel {
    pub fn new(cfg: DlfConfig, data: DesignData) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        let (n, m, t) = data.dims();
        if (n, m, t) != (cfg.n, cfg.m, cfg.t) {
            return Err(Error::dim(format!("data dims {:?} vs config ({}, {}, {})", (n, m, t), cfg.n, cfg.m, cfg.t)));
        }
        if data.symmetric != (cfg.variant == Variant::Symmetric) {
            return Err(Error::invalid("symmetric data must be fitted with the symmetric variant and vice versa"));
        }
        let (_, n_mu) = data.mu_index();
        let (_, n_years) = data.year_index();
        if cfg.mu_cov.dim() != n_mu {
            return Err(Error::dim(format!("mu covariance is {0}x{0}, data need {1} intercepts", cfg.mu_cov.dim(), n_mu)));
        }
        let layout = DlfLayout::new(&cfg, n_mu, n_years);
        let predictor = Predictor::new(&data, layout.mu, layout.effects.map(|e| e.alpha))?;
        let path_prior = GaussianPrior::new(vec![0.0; t], &cfg.x_cov.covariance()?)?;
        let mu_prior = GaussianPrior::new(vec![cfg.mu0; n_mu], &cfg.mu_cov.covariance()?)?;
        let active = data.active_mask();
        Ok(Self {
            cfg,
            data,
            layout,
            predictor,
            active,
            path_prior,
            mu_prior,
        })
    }

    pub fn config(&self) -> &DlfConfig {
        &self.cfg
    }

    pub fn data(&self) -> &DesignData {
        &self.data
    }

    pub fn layout(&self) -> &DlfLayout {
        &self.layout
    }

    pub fn params(&self, v: &[f64]) -> Result<DlfParams> {
        DlfParams::from_unconstrained(&self.layout, v)
    }

    pub fn propensity(&self, v: &[f64]) -> Result<Tensor3> {
        dlf_propensity(&self.params(v)?, &self.data)
    }

    pub fn posterior_density_and_gradient(&self, v: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.checked(v, true)
    }

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

    /// Prior draw with the latent paths scaled by 0.1.
    pub fn initial_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let l = &self.layout;
        let mut v = vec![0.0; l.len];
        for (s, x) in v[..l.h].iter_mut().enumerate() {
            let (shape, rate) = self.cfg.shrinkage.shape_rate(s);
            *x = Gamma::new(shape, 1.0 / rate).unwrap().sample(rng).ln();
        }
        let tau = cumulative_exp(&v[..l.h]);
        for (start, rows) in std::iter::once((l.x, l.n)).chain(l.y.map(|y| (y, l.m))) {
            for hh in 0..l.h {
                let sd = tau[hh].powf(-0.5);
                for i in 0..rows {
                    let path = mvn_sample(self.path_prior.mean(), self.path_prior.chol(), rng).unwrap();
                    let off = start + l.t * (i + rows * hh);
                    for (dst, p) in v[off..off + l.t].iter_mut().zip(path) {
                        *dst = 0.1 * sd * p;
                    }
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
        let (n, m, t, h) = (l.n, l.m, l.t, l.h);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut lp = 0.0;

        if with_likelihood {
            let x = l.paths_to_tensor(v, l.x, n);
            let y = l.y.map(|y| l.paths_to_tensor(v, y, m));
            let mut gx = Tensor3::zeros(n, h, t);
            let mut gy = if l.bipartite { Tensor3::zeros(m, h, t) } else { Tensor3::zeros(0, 0, 0) };
            let ones = vec![1.0; h];
            let mut glam = vec![0.0; h];
            lp += bilinear_loglik(
                &self.predictor,
                &self.data.adjacency,
                &self.active,
                h,
                (x.as_slice(), y.as_ref().map(|y| y.as_slice())),
                &ones,
                v,
                grad,
                (gx.as_mut_slice(), gy.as_mut_slice()),
                &mut glam,
            );
            let mut add = vec![0.0; l.len];
            l.tensor_to_paths(&gx, &mut add, l.x);
            if let Some(off) = l.y {
                l.tensor_to_paths(&gy, &mut add, off);
            }
            for r in l.latent_ranges() {
                for idx in r {
                    grad[idx] += add[idx];
                }
            }
        }

        // latent paths: N(0, C / tau_h)
        let tau = cumulative_exp(&v[..h]);
        let mut g_log_tau = vec![0.0; h];
        let mut px = vec![0.0; t];
        for (start, rows) in std::iter::once((l.x, n)).chain(l.y.map(|y| (y, m))) {
            for (hh, &tau_h) in tau.iter().enumerate() {
                for i in 0..rows {
                    let off = start + t * (i + rows * hh);
                    let q = self.path_prior.quad_form(&v[off..off + t], &mut px);
                    lp += self.path_prior.log_norm() + 0.5 * t as f64 * tau_h.ln() - 0.5 * tau_h * q;
                    for (g, p) in grad[off..off + t].iter_mut().zip(&px) {
                        *g -= tau_h * p;
                    }
                    g_log_tau[hh] += 0.5 * t as f64 - 0.5 * tau_h * q;
                }
            }
        }
        let mut acc = 0.0;
        for s in (0..h).rev() {
            acc += g_log_tau[s];
            grad[l.theta + s] += acc;
        }
        lp += mgp_log_prior(&v[..h], &self.cfg.shrinkage, &mut grad[..h]);

        let mut scratch = vec![0.0; l.n_mu];
        let r = l.mu..l.mu + l.n_mu;
        lp += self.mu_prior.log_density_add_grad(&v[r.clone()], &mut grad[r], &mut scratch);
        lp += self.predictor.effects_log_prior(v, grad, &self.cfg.conditional);
        lp
    }
}

impl LogDensity for DlfModel {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nexmodel::{compute_propensity, log_likelihood, mgp_moments, NexConfig, NexLayout, NexParams};
    use crate::sampler::grad_check;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(variant: Variant, seed: u64) -> DesignData {
        crate::nexmodel::tests::toy_data(variant, 5, 4, 6, seed)
    }

    fn model(variant: Variant, seed: u64) -> DlfModel {
        let d = data(variant, seed);
        let cfg = DlfConfig::for_data(&d, variant, 3, 0.3).unwrap();
        DlfModel::new(cfg, d).unwrap()
    }

    fn point(model: &DlfModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..model.layout().len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn propensity_examples() {
        let d = DesignData::fully_observed(Tensor3::zeros(2, 3, 2)).unwrap();
        let p = DlfParams {
            log_vartheta: vec![0.0],
            x: Tensor3::from_fn((2, 1, 2), |_, _, _| 2.0),
            y: Some(Tensor3::from_fn((3, 1, 2), |_, _, _| 3.0)),
            mu: vec![0.0, 0.0],
            effects: None,
        };
        assert!(dlf_propensity(&p, &d).unwrap().as_slice().iter().all(|s| *s == 6.0));
        let p = DlfParams {
            x: Tensor3::zeros(2, 1, 2),
            y: Some(Tensor3::zeros(3, 1, 2)),
            mu: vec![-1.5, 0.25],
            ..p
        };
        let s = dlf_propensity(&p, &d).unwrap();
        assert!((0..3).all(|j| s.get(1, j, 0) == -1.5 && s.get(0, j, 1) == 0.25));
    }

    #[test]
    fn agrees_with_nex_when_trait_weights_are_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = data(Variant::Bipartite, 3);
        let cfg = NexConfig::for_data(&d, Variant::Bipartite, 3, 4, 0.1).unwrap();
        let layout = NexLayout::new(&cfg, 6, 1);
        let mut v: Vec<f64> = (0..layout.len).map(|_| rng.random_range(-1.0..1.0)).collect();
        v[layout.theta_h..layout.theta_h + 3].fill(0.0);
        let p = NexParams::from_unconstrained(&layout, &v).unwrap();
        let s_nex = compute_propensity(&p, &cfg, &d).unwrap();
        let q = DlfParams {
            log_vartheta: vec![0.0; 3],
            x: crate::tensor3::cp_reconstruct(&p.x_factors().unwrap()).unwrap(),
            y: Some(crate::tensor3::cp_reconstruct(&p.y_factors().unwrap().unwrap()).unwrap()),
            mu: p.mu.clone(),
            effects: None,
        };
        let s_dlf = dlf_propensity(&q, &d).unwrap();
        for (a, b) in s_nex.as_slice().iter().zip(s_dlf.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn latent_count_is_n_plus_m_h_t() {
        let d = DesignData::fully_observed(Tensor3::from_fn((7, 9, 11), |i, _, _| (i % 2) as f64)).unwrap();
        let cfg = DlfConfig::for_data(&d, Variant::Bipartite, 5, 0.02).unwrap();
        let m = DlfModel::new(cfg, d).unwrap();
        assert_eq!(m.layout().n_latent(), (7 + 9) * 5 * 11);
        let r: usize = m.layout().latent_ranges().iter().map(|r| r.len()).sum();
        assert_eq!(r, (7 + 9) * 5 * 11);
        assert_eq!(m.layout().len, 5 + (7 + 9) * 5 * 11 + 11);
        assert_eq!(m.layout().coordinate_names().len(), m.layout().len);
    }

    #[test]
    fn prior_mean_of_precisions() {
        assert_eq!(mgp_moments(&DLF_SHRINKAGE, 1).unwrap().0, 2.0);
        assert_eq!(mgp_moments(&DLF_SHRINKAGE, 2).unwrap().0, 4.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for variant in [Variant::Bipartite, Variant::Symmetric, Variant::Conditional] {
            let m = model(variant, 4);
            for _ in 0..5 {
                let v = point(&m, &mut rng);
                let err = grad_check(&m, &v, 1e-5);
                assert!(err <= 1e-5, "{variant:?}: {err}");
            }
        }
    }

    #[test]
    fn density_splits_into_prior_and_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for variant in [Variant::Bipartite, Variant::Symmetric, Variant::Conditional] {
            let m = model(variant, 5);
            let v = point(&m, &mut rng);
            let post = m.posterior_density_and_gradient(&v).unwrap().0;
            let prior = m.log_prior_and_gradient(&v).unwrap().0;
            let ll = log_likelihood(m.data(), &m.propensity(&v).unwrap()).unwrap();
            assert_abs_diff_eq!(post - prior, ll, epsilon = 1e-9 * ll.abs().max(1.0));

            let mut d = m.data().clone();
            d.observed = Tensor3::zeros(d.dims().0, d.dims().1, d.dims().2);
            let empty = DlfModel::new(m.config().clone(), d).unwrap();
            assert_eq!(empty.posterior_density_and_gradient(&v).unwrap(), empty.log_prior_and_gradient(&v).unwrap());
        }
    }

    #[test]
    fn path_prior_matches_dense_mvn() {
        use crate::kernels::{chol_jitter, mvn_logpdf};
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let m = model(Variant::Symmetric, 6);
        let mut v = point(&m, &mut rng);
        v[m.layout().mu..].fill(0.0);
        let p = m.params(&v).unwrap();
        let tau = p.tau();
        let cov = m.config().x_cov.covariance().unwrap();
        let mut expected = 0.0;
        for (hh, &tau_h) in tau.iter().enumerate() {
            let chol = chol_jitter(&(cov.clone() / tau_h), 1e-8).unwrap();
            for i in 0..5 {
                let path: Vec<f64> = (0..6).map(|tt| p.x.get(i, hh, tt)).collect();
                expected += mvn_logpdf(&path, &[0.0; 6], &chol).unwrap();
            }
        }
        // remove the terms that are not path priors
        let mut g = vec![0.0; v.len()];
        let mgp = mgp_log_prior(&v[..3], &DLF_SHRINKAGE, &mut g);
        let mu = m.mu_prior.log_density(&v[m.layout().mu..]);
        let total = m.log_prior_and_gradient(&v).unwrap().0;
        assert_abs_diff_eq!(total - mgp - mu, expected, epsilon = 1e-8);
    }

    #[test]
    fn trait_sign_flip_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for variant in [Variant::Bipartite, Variant::Symmetric] {
            let m = model(variant, 7);
            let l = m.layout().clone();
            let v = point(&m, &mut rng);
            let base = m.posterior_density_and_gradient(&v).unwrap().0;
            for hh in 0..l.h {
                let mut w = v.clone();
                for x in &mut w[l.x + l.t * l.n * hh..l.x + l.t * l.n * (hh + 1)] {
                    *x = -*x;
                }
                if let Some(y) = l.y {
                    for x in &mut w[y + l.t * l.m * hh..y + l.t * l.m * (hh + 1)] {
                        *x = -*x;
                    }
                }
                assert_eq!(m.posterior_density_and_gradient(&w).unwrap().0, base);
            }
        }
    }

    #[test]
    fn round_trip_and_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for variant in [Variant::Bipartite, Variant::Symmetric, Variant::Conditional] {
            let m = model(variant, 8);
            let v = m.initial_point(&mut rng);
            assert!(m.posterior_density_and_gradient(&v).is_ok());
            let p = m.params(&v).unwrap();
            assert_eq!(p.to_unconstrained(m.layout()).unwrap(), v);
        }
    }
}
