//! Synthetic network generators: NEX (bipartite or symmetric), dynamic
//! latent factor and dynamic stochastic block model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::design::DesignData;
use crate::dlfmodel::{dlf_propensity, DlfConfig, DlfLayout, DlfParams, DLF_SHRINKAGE};
use crate::error::{Error, Result};
use crate::kernels::{chol_jitter, mvn_sample, CovSpec, DEFAULT_BASE_JITTER};
use crate::nexmodel::{compute_propensity, inv_link, NexConfig, NexLayout, NexParams, Variant};
use crate::tensor3::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Nex,
    Dlf,
    Dsbm,
}

/// Description of one synthetic data set. Defaults reproduce the bipartite
/// NEX study: 20 x 25 nodes, 40 slices, `K = 5`, `H = 2`, length scale 0.04,
/// `sigma^2 = 2 / sqrt(5)`, `mu0 = -0.6`, final slice held out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSpec {
    pub generator: Generator,
    /// NEX only; DLF and DSBM networks are always symmetric.
    pub symmetric: bool,
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub k_true: usize,
    /// Latent dimension for NEX and DLF.
    pub h_true: usize,
    pub blocks: usize,
    /// Decay rate of the kernel for `W` (NEX), the latent paths (DLF) or the
    /// block paths (DSBM).
    pub length_scale: f64,
    pub mu_length_scale: f64,
    pub sigma2: f64,
    pub mu0: f64,
    /// DSBM logit means on and off the block diagonal.
    pub block_mean_within: f64,
    pub block_mean_between: f64,
    pub seed: u64,
    /// 1-based slices marked unobserved; `None` holds out the final slice.
    pub holdout: Option<Vec<usize>>,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            generator: Generator::Nex,
            symmetric: false,
            n: 20,
            m: 25,
            t: 40,
            k_true: 5,
            h_true: 2,
            blocks: 4,
            length_scale: 0.04,
            mu_length_scale: 0.04,
            sigma2: 2.0 / 5f64.sqrt(),
            mu0: -0.6,
            block_mean_within: 0.0,
            block_mean_between: -2.0,
            seed: 1,
            holdout: None,
        }
    }
}

impl SimSpec {
    pub fn is_symmetric(&self) -> bool {
        self.symmetric || self.generator != Generator::Nex
    }

    /// Column count of the generated networks.
    pub fn m_eff(&self) -> usize {
        if self.is_symmetric() {
            self.n
        } else {
            self.m
        }
    }

    pub fn holdout_slices(&self) -> Vec<usize> {
        self.holdout.clone().unwrap_or_else(|| vec![self.t])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.t == 0 {
            return Err(Error::Config("N, M and T must be positive".into()));
        }
        for &s in &self.holdout_slices() {
            if s == 0 || s > self.t {
                return Err(Error::Config(format!("holdout slice {s} outside 1..={}", self.t)));
            }
        }
        for (name, v) in [("length_scale", self.length_scale), ("mu_length_scale", self.mu_length_scale), ("sigma2", self.sigma2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        match self.generator {
            Generator::Nex => {
                if self.k_true == 0 || self.h_true == 0 || self.h_true > self.k_true {
                    return Err(Error::Config(format!(
                        "need 1 <= H_true <= K_true, got H_true = {}, K_true = {}",
                        self.h_true, self.k_true
                    )));
                }
                if self.k_true > self.n.max(self.m_eff()) * self.h_true.max(1) * self.t {
                    return Err(Error::Config("K_true exceeds the size of the attribute tensor".into()));
                }
            }
            Generator::Dlf => {
                if self.h_true == 0 || self.h_true > self.n {
                    return Err(Error::Config(format!("DLF needs 1 <= H <= N, got H = {}", self.h_true)));
                }
            }
            Generator::Dsbm => {
                if self.blocks == 0 || self.blocks >= self.n {
                    return Err(Error::Config(format!("DSBM needs 1 <= B < N, got B = {}, N = {}", self.blocks, self.n)));
                }
            }
        }
        Ok(())
    }

    /// Configuration under which the stored NEX truth reproduces `truth_pi`.
    pub fn nex_truth_config(&self) -> NexConfig {
        let variant = if self.symmetric { Variant::Symmetric } else { Variant::Bipartite };
        let mut cfg = NexConfig::new(self.n, self.m_eff(), self.t, self.h_true, self.k_true, variant);
        cfg.w_cov = CovSpec::regular_grid(self.t, self.length_scale);
        cfg.mu_cov = CovSpec::regular_grid(self.t, self.mu_length_scale);
        cfg.sigma2 = self.sigma2;
        cfg.mu0 = self.mu0;
        cfg
    }

    /// Generating configuration of the DLF truth: kernels scaled by 1/2.
    pub fn dlf_truth_config(&self) -> DlfConfig {
        let mut cfg = DlfConfig::new(self.n, self.n, self.t, self.h_true, Variant::Symmetric);
        cfg.x_cov = CovSpec::regular_grid(self.t, self.length_scale).with_scale(0.5);
        cfg.mu_cov = CovSpec::regular_grid(self.t, self.mu_length_scale).with_scale(0.5);
        cfg.mu0 = self.mu0;
        cfg
    }
}

/// Generating parameters of a synthetic data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "lowercase")]
pub enum TruthParams {
    /// Flat vector in the layout of `SimSpec::nex_truth_config`.
    Nex { names: Vec<String>, values: Vec<f64> },
    /// Flat vector in the layout of `SimSpec::dlf_truth_config`.
    Dlf { names: Vec<String>, values: Vec<f64> },
    /// Block of each node (0-based) and block logits, `b + B (b' + B t)`.
    Dsbm { membership: Vec<usize>, block_logit: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub data: DesignData,
    /// True edge probabilities.
    pub truth_pi: Tensor3,
    pub truth: TruthParams,
    pub spec: SimSpec,
}

impl SyntheticDataset {
    /// Recomputes the true log-odds from the stored parameters.
    pub fn recompute_propensity(&self) -> Result<Tensor3> {
        let d = &self.data;
        match &self.truth {
            TruthParams::Nex { values, .. } => {
                let cfg = self.spec.nex_truth_config();
                let layout = NexLayout::new(&cfg, self.spec.t, 1);
                let p = NexParams::from_unconstrained(&layout, values)?;
                compute_propensity(&p, &cfg, d)
            }
            TruthParams::Dlf { values, .. } => {
                let layout = DlfLayout::new(&self.spec.dlf_truth_config(), self.spec.t, 1);
                dlf_propensity(&DlfParams::from_unconstrained(&layout, values)?, d)
            }
            TruthParams::Dsbm { membership, block_logit } => {
                let b = self.spec.blocks;
                let (n, _, t) = d.dims();
                Ok(Tensor3::from_fn((n, n, t), |i, j, tt| block_logit[membership[i] + b * (membership[j] + b * tt)]))
            }
        }
    }
}

fn mvn_path<R: Rng + ?Sized>(cov: &CovSpec, mean: f64, rng: &mut R) -> Result<Vec<f64>> {
    let chol = chol_jitter(&cov.covariance()?, DEFAULT_BASE_JITTER)?;
    mvn_sample(&vec![mean; cov.dim()], &chol, rng)
}

/// Draws `A ~ Bernoulli(pi)`; symmetric networks draw `i < j` and mirror,
/// leaving the diagonal empty and unobserved.
fn draw_network<R: Rng + ?Sized>(pi: &Tensor3, symmetric: bool, holdout: &[usize], rng: &mut R) -> Result<DesignData> {
    let (n, m, t) = pi.dims();
    let mut a = Tensor3::zeros(n, m, t);
    let mut observed = Tensor3::from_fn((n, m, t), |_, _, _| 1.0);
    for tt in 0..t {
        for j in 0..m {
            for i in 0..n {
                if symmetric && i >= j {
                    continue;
                }
                let edge = (rng.random::<f64>() < pi.get(i, j, tt)) as u8 as f64;
                a.set(i, j, tt, edge);
                if symmetric {
                    a.set(j, i, tt, edge);
                }
            }
            if symmetric && j < n {
                observed.set(j, j, tt, 0.0);
            }
        }
    }
    let mut d = DesignData::new(a, observed)?;
    d.symmetric = symmetric;
    d.hold_out_slices(holdout)?;
    Ok(d)
}

/// NEX generator with all weights `lambda = 1`.
pub fn simulate_nex<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<SyntheticDataset> {
    spec.validate()?;
    if spec.generator != Generator::Nex {
        return Err(Error::Config("simulate_nex needs generator = nex".into()));
    }
    let cfg = spec.nex_truth_config();
    let layout = NexLayout::new(&cfg, spec.t, 1);
    let (t, k) = (spec.t, spec.k_true);
    let mut v = vec![0.0; layout.len];
    let normal = Normal::new(0.0, spec.sigma2.sqrt()).unwrap();
    let w_chol = chol_jitter(&cfg.w_cov.covariance()?, DEFAULT_BASE_JITTER)?;
    let mut sides = vec![(layout.ux, spec.n, layout.vx, layout.wx)];
    if let (Some(uy), Some(vy), Some(wy)) = (layout.uy, layout.vy, layout.wy) {
        sides.push((uy, spec.m_eff(), vy, wy));
    }
    for (u, rows, vv, w) in sides {
        for x in &mut v[u..u + rows * k] {
            *x = normal.sample(rng);
        }
        for x in &mut v[vv..vv + spec.h_true * k] {
            *x = normal.sample(rng);
        }
        for kk in 0..k {
            let col = mvn_sample(&vec![0.0; t], &w_chol, rng)?;
            v[w + t * kk..w + t * (kk + 1)].copy_from_slice(&col);
        }
    }
    let mu = mvn_path(&cfg.mu_cov, spec.mu0, rng)?;
    v[layout.mu..layout.mu + t].copy_from_slice(&mu);

    let params = NexParams::from_unconstrained(&layout, &v)?;
    let shell = shell_data(spec)?;
    let s = compute_propensity(&params, &cfg, &shell)?;
    let pi = s.map(inv_link);
    let data = draw_network(&pi, spec.symmetric, &spec.holdout_slices(), rng)?;
    Ok(SyntheticDataset {
        data,
        truth_pi: pi,
        truth: TruthParams::Nex {
            names: layout.coordinate_names(),
            values: v,
        },
        spec: spec.clone(),
    })
}

fn shell_data(spec: &SimSpec) -> Result<DesignData> {
    let mut d = DesignData::fully_observed(Tensor3::zeros(spec.n, spec.m_eff(), spec.t))?;
    d.symmetric = spec.is_symmetric();
    Ok(d)
}

/// Symmetric dynamic latent factor generator with `tau_h` drawn from its
/// multiplicative gamma prior.
pub fn simulate_dlf<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<SyntheticDataset> {
    spec.validate()?;
    if spec.generator != Generator::Dlf {
        return Err(Error::Config("simulate_dlf needs generator = dlf".into()));
    }
    let cfg = spec.dlf_truth_config();
    let layout = DlfLayout::new(&cfg, spec.t, 1);
    let (n, t, h) = (spec.n, spec.t, spec.h_true);
    let mut v = vec![0.0; layout.len];
    for (s, x) in v[..h].iter_mut().enumerate() {
        let (shape, rate) = DLF_SHRINKAGE.shape_rate(s);
        *x = Gamma::new(shape, 1.0 / rate).unwrap().sample(rng).ln();
    }
    let tau = crate::nexmodel::cumulative_exp(&v[..h]);
    let x_chol = chol_jitter(&cfg.x_cov.covariance()?, DEFAULT_BASE_JITTER)?;
    for (hh, tau_h) in tau.iter().enumerate() {
        let chol = x_chol.scaled(1.0 / tau_h);
        for i in 0..n {
            let path = mvn_sample(&vec![0.0; t], &chol, rng)?;
            let off = layout.x + t * (i + n * hh);
            v[off..off + t].copy_from_slice(&path);
        }
    }
    let mu = mvn_path(&cfg.mu_cov, spec.mu0, rng)?;
    v[layout.mu..layout.mu + t].copy_from_slice(&mu);

    let params = DlfParams::from_unconstrained(&layout, &v)?;
    let s = dlf_propensity(&params, &shell_data(spec)?)?;
    let pi = s.map(inv_link);
    let data = draw_network(&pi, true, &spec.holdout_slices(), rng)?;
    Ok(SyntheticDataset {
        data,
        truth_pi: pi,
        truth: TruthParams::Dlf {
            names: layout.coordinate_names(),
            values: v,
        },
        spec: spec.clone(),
    })
}

/// Balanced block assignment `i -> i mod B`.
pub fn block_membership(n: usize, blocks: usize) -> Vec<usize> {
    (0..n).map(|i| i % blocks).collect()
}

/// Dynamic stochastic block model: block logit paths are Gaussian processes
/// with covariance `exp(-k |t - t'|) / 4`.
pub fn simulate_dsbm<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<SyntheticDataset> {
    spec.validate()?;
    if spec.generator != Generator::Dsbm {
        return Err(Error::Config("simulate_dsbm needs generator = dsbm".into()));
    }
    let (n, t, b) = (spec.n, spec.t, spec.blocks);
    let membership = block_membership(n, b);
    let cov = dsbm_covariance(spec);
    let chol = chol_jitter(&cov.covariance()?, DEFAULT_BASE_JITTER)?;
    let mut block_logit = vec![0.0; b * b * t];
    for b1 in 0..b {
        for b2 in b1..b {
            let mean = if b1 == b2 { spec.block_mean_within } else { spec.block_mean_between };
            let path = mvn_sample(&vec![mean; t], &chol, rng)?;
            for (tt, x) in path.into_iter().enumerate() {
                block_logit[b1 + b * (b2 + b * tt)] = x;
                block_logit[b2 + b * (b1 + b * tt)] = x;
            }
        }
    }
    let pi = Tensor3::from_fn((n, n, t), |i, j, tt| inv_link(block_logit[membership[i] + b * (membership[j] + b * tt)]));
    let data = draw_network(&pi, true, &spec.holdout_slices(), rng)?;
    Ok(SyntheticDataset {
        data,
        truth_pi: pi,
        truth: TruthParams::Dsbm { membership, block_logit },
        spec: spec.clone(),
    })
}

/// Covariance of each block logit path.
pub fn dsbm_covariance(spec: &SimSpec) -> CovSpec {
    CovSpec::regular_grid(spec.t, spec.length_scale).with_scale(0.25)
}

/// Dispatches on `spec.generator` with an RNG seeded from `spec.seed`.
pub fn simulate(spec: &SimSpec) -> Result<SyntheticDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.generator {
        Generator::Nex => simulate_nex(spec, &mut rng),
        Generator::Dlf => simulate_dlf(spec, &mut rng),
        Generator::Dsbm => simulate_dsbm(spec, &mut rng),
    }
}
