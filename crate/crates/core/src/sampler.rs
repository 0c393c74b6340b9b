//! Static-trajectory Hamiltonian Monte Carlo with diagonal mass, dual
//! averaging step size adaptation and jittered path length.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A differentiable log density on an unconstrained space.
///
/// Implementations return a non-finite value (and leave `grad` arbitrary)
/// when the density cannot be evaluated; the sampler treats it as a
/// rejection, never as a crash.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmcConfig {
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: f64,
    /// Upper bound on leapfrog steps per iteration.
    pub max_leapfrog: usize,
    /// Integration time; steps per iteration are uniform on `1..=ceil(length / eps)`.
    pub trajectory_length: f64,
    /// `None` picks a starting step size by doubling/halving.
    pub init_step_size: Option<f64>,
    pub seed: u64,
    pub chains: usize,
    pub divergence_threshold: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            warmup: 2000,
            samples: 2000,
            target_accept: 0.95,
            max_leapfrog: 4096,
            trajectory_length: 3.0,
            init_step_size: None,
            seed: 1,
            chains: 4,
            divergence_threshold: 1000.0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.chains == 0 {
            return Err(Error::Config("samples and chains must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!("target acceptance must be in (0, 1), got {}", self.target_accept)));
        }
        if self.max_leapfrog == 0 || !(self.trajectory_length > 0.0) {
            return Err(Error::Config("trajectory length and leapfrog budget must be positive".into()));
        }
        if let Some(e) = self.init_step_size {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::Config(format!("initial step size must be positive, got {e}")));
            }
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::Config("divergence threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Post-warmup output of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub dim: usize,
    /// Row-major `samples x dim` on the unconstrained scale.
    pub draws: Vec<f64>,
    pub accept_stat: Vec<f64>,
    pub energy: Vec<f64>,
    pub divergent: Vec<bool>,
    pub log_density: Vec<f64>,
    pub n_leapfrog: Vec<usize>,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    pub warmup_divergences: usize,
}

impl ChainDraws {
    pub fn n_draws(&self) -> usize {
        self.accept_stat.len()
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim.max(1))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn n_divergent(&self) -> usize {
        self.divergent.iter().filter(|d| **d).count()
    }

    pub fn mean_accept(&self) -> f64 {
        self.accept_stat.iter().sum::<f64>() / self.n_draws().max(1) as f64
    }
}

/// RNG stream for one chain; independent across chain indices.
pub fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

/// `nsteps` leapfrog steps with diagonal inverse mass `inv_mass`.
///
/// On entry `grad` holds the gradient at `q`; on exit it holds the gradient at
/// the final position. Returns the log density there, or a non-finite value
/// as soon as an evaluation fails.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    eps: f64,
    nsteps: usize,
    inv_mass: &[f64],
) -> f64 {
    let mut lp = f64::NAN;
    for _ in 0..nsteps {
        for (pi, g) in p.iter_mut().zip(grad.iter()) {
            *pi += 0.5 * eps * g;
        }
        for ((qi, pi), m) in q.iter_mut().zip(p.iter()).zip(inv_mass) {
            *qi += eps * m * pi;
        }
        lp = target.log_density_grad(q, grad);
        if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return f64::NAN;
        }
        for (pi, g) in p.iter_mut().zip(grad.iter()) {
            *pi += 0.5 * eps * g;
        }
    }
    lp
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
}

/// Central-difference gradient check; returns the largest per-coordinate
/// error `|g - fd| / max(1, |g|)`.
pub fn grad_check<T: LogDensity + ?Sized>(target: &T, point: &[f64], h: f64) -> f64 {
    let d = target.dim();
    let mut grad = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    target.log_density_grad(point, &mut grad);
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for j in 0..d {
        x[j] = point[j] + h;
        let fp = target.log_density_grad(&x, &mut scratch);
        x[j] = point[j] - h;
        let fm = target.log_density_grad(&x, &mut scratch);
        x[j] = point[j];
        let fd = (fp - fm) / (2.0 * h);
        let err = (grad[j] - fd).abs() / grad[j].abs().max(1.0);
        if !err.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max(err);
    }
    worst
}

/// Dual averaging on `log eps` toward a target acceptance statistic.
#[derive(Debug, Clone)]
struct DualAverage {
    mu: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    count: f64,
}

impl DualAverage {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            h_bar: 0.0,
            log_eps: eps.ln(),
            log_eps_bar: eps.ln(),
            count: 0.0,
        }
    }

    fn update(&mut self, accept: f64, target: f64) {
        self.count += 1.0;
        let w = 1.0 / (self.count + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (target - accept);
        self.log_eps = self.mu - self.count.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.count.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Running mean and variance per coordinate.
#[derive(Debug, Clone)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), xi) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = xi - *m;
            *m += delta / self.n;
            *s += delta * (xi - *m);
        }
    }

    /// Variance shrunk toward 1e-3 for short windows.
    fn regularized(&self) -> Option<Vec<f64>> {
        if self.n < 3.0 {
            return None;
        }
        let n = self.n;
        Some(
            self.m2
                .iter()
                .map(|s| (n / (n + 5.0)) * (s / (n - 1.0)) + 1e-3 * 5.0 / (n + 5.0))
                .collect(),
        )
    }
}

struct State {
    q: Vec<f64>,
    grad: Vec<f64>,
    lp: f64,
}

struct Transition {
    accept: f64,
    energy: f64,
    divergent: bool,
    n_leapfrog: usize,
}

fn transition<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    cfg: &HmcConfig,
    state: &mut State,
    eps: f64,
    inv_mass: &[f64],
    rng: &mut R,
) -> Transition {
    let d = state.q.len();
    let mut p: Vec<f64> = inv_mass
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect();
    let max_steps = ((cfg.trajectory_length / eps).ceil() as usize).clamp(1, cfg.max_leapfrog);
    let nsteps = rng.random_range(1..=max_steps);
    let h0 = -state.lp + kinetic(&p, inv_mass);
    let mut q = state.q.clone();
    let mut grad = state.grad.clone();
    debug_assert_eq!(q.len(), d);
    let lp = leapfrog(target, &mut q, &mut p, &mut grad, eps, nsteps, inv_mass);
    let h1 = if lp.is_finite() { -lp + kinetic(&p, inv_mass) } else { f64::INFINITY };
    let delta = h1 - h0;
    let divergent = !delta.is_finite() || delta > cfg.divergence_threshold;
    let accept = if divergent { 0.0 } else { (-delta).exp().min(1.0) };
    if !divergent && rng.random::<f64>() < accept {
        state.q = q;
        state.grad = grad;
        state.lp = lp;
    }
    Transition {
        accept,
        energy: if divergent { h0 } else { h1 },
        divergent,
        n_leapfrog: nsteps,
    }
}

/// Doubles or halves a unit step until the one-step acceptance crosses 0.5.
fn initial_step_size<T: LogDensity + ?Sized, R: Rng + ?Sized>(target: &T, state: &State, inv_mass: &[f64], rng: &mut R) -> f64 {
    let p0: Vec<f64> = inv_mass
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect();
    let h0 = -state.lp + kinetic(&p0, inv_mass);
    let log_accept = |eps: f64| {
        let mut q = state.q.clone();
        let mut p = p0.clone();
        let mut g = state.grad.clone();
        let lp = leapfrog(target, &mut q, &mut p, &mut g, eps, 1, inv_mass);
        let h = -lp + kinetic(&p, inv_mass);
        if h.is_finite() {
            h0 - h
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut eps = 1.0;
    let up = log_accept(eps) > 0.5f64.ln();
    for _ in 0..60 {
        let next = if up { eps * 2.0 } else { eps * 0.5 };
        let crossed = (log_accept(next) > 0.5f64.ln()) != up;
        if crossed {
            return if up { eps } else { next };
        }
        eps = next;
    }
    eps
}

/// Runs one chain: warmup with adaptation, then `cfg.samples` draws with the
/// tuning frozen.
///
/// Warmup is split into fractions `[0, 0.15)` step size only, `[0.15, 0.5)`
/// and `[0.5, 0.9)` two variance windows (the mass matrix is replaced at the
/// end of each), and `[0.9, 1)` a final step size window.
pub fn run_chain<T: LogDensity + ?Sized, R: Rng + ?Sized>(target: &T, cfg: &HmcConfig, init: &[f64], rng: &mut R) -> Result<ChainDraws> {
    cfg.validate()?;
    let d = target.dim();
    if init.len() != d {
        return Err(Error::dim(format!("initial point has {} entries, target needs {d}", init.len())));
    }
    if init.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("initial point".into()));
    }
    let mut state = State {
        q: init.to_vec(),
        grad: vec![0.0; d],
        lp: 0.0,
    };
    state.lp = target.log_density_grad(&state.q, &mut state.grad);
    if !state.lp.is_finite() || state.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Sampler("target is not evaluable at the initial point".into()));
    }

    let mut inv_mass = vec![1.0; d];
    let mut eps = match cfg.init_step_size {
        Some(e) => e,
        None => initial_step_size(target, &state, &inv_mass, rng),
    };
    let w = cfg.warmup;
    let boundaries = [0.15, 0.5, 0.9].map(|f| (f * w as f64).round() as usize);
    let mut da = DualAverage::new(eps);
    let mut window = Welford::new(d);
    let mut warmup_divergences = 0;
    let mut consecutive_div = 0usize;

    for it in 0..w {
        let tr = transition(target, cfg, &mut state, eps, &inv_mass, rng);
        warmup_divergences += tr.divergent as usize;
        consecutive_div = if tr.divergent { consecutive_div + 1 } else { 0 };
        if consecutive_div >= 200 {
            return Err(Error::Sampler(format!(
                "200 consecutive divergent transitions during warmup (iteration {it}, step size {eps:.3e})"
            )));
        }
        da.update(tr.accept, cfg.target_accept);
        eps = da.current();
        if (boundaries[0]..boundaries[2]).contains(&it) {
            window.push(&state.q);
        }
        if it + 1 == boundaries[1] || it + 1 == boundaries[2] {
            if let Some(var) = window.regularized() {
                inv_mass = var;
                // restart step size search on the rescaled geometry
                let e = initial_step_size(target, &state, &inv_mass, rng);
                da = DualAverage::new(e);
                eps = e;
            }
            window = Welford::new(d);
        }
    }
    if w > 0 {
        eps = da.adapted();
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Sampler(format!("step size adaptation failed (eps = {eps})")));
    }

    let n = cfg.samples;
    let mut out = ChainDraws {
        dim: d,
        draws: Vec::with_capacity(n * d),
        accept_stat: Vec::with_capacity(n),
        energy: Vec::with_capacity(n),
        divergent: Vec::with_capacity(n),
        log_density: Vec::with_capacity(n),
        n_leapfrog: Vec::with_capacity(n),
        step_size: eps,
        inv_mass: inv_mass.clone(),
        warmup_divergences,
    };
    consecutive_div = 0;
    for it in 0..n {
        let tr = transition(target, cfg, &mut state, eps, &inv_mass, rng);
        consecutive_div = if tr.divergent { consecutive_div + 1 } else { 0 };
        if consecutive_div >= 200 {
            return Err(Error::Sampler(format!(
                "200 consecutive divergent transitions while sampling (draw {it}, step size {eps:.3e})"
            )));
        }
        out.draws.extend_from_slice(&state.q);
        out.accept_stat.push(tr.accept);
        out.energy.push(tr.energy);
        out.divergent.push(tr.divergent);
        out.log_density.push(state.lp);
        out.n_leapfrog.push(tr.n_leapfrog);
    }
    Ok(out)
}

/// Runs `cfg.chains` chains in parallel. `init` draws a starting point from
/// the chain's own RNG stream.
pub fn run_chains<T, F>(target: &T, cfg: &HmcConfig, init: F) -> Result<Vec<ChainDraws>>
where
    T: LogDensity + ?Sized,
    F: Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    cfg.validate()?;
    (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = chain_rng(cfg.seed, c as u64);
            let x0 = init(&mut rng);
            run_chain(target, cfg, &x0, &mut rng).map_err(|e| match e {
                Error::Sampler(m) => Error::Sampler(format!("chain {}: {m}", c + 1)),
                other => other,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    struct Quadratic;

    impl LogDensity for Quadratic {
        fn dim(&self) -> usize {
            1
        }
        fn log_density_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
            g[0] = -x[0];
            -0.5 * x[0] * x[0]
        }
    }

    #[test]
    fn one_leapfrog_step_by_hand() {
        let mut q = [1.0];
        let mut p = [0.0];
        let mut g = [-1.0];
        leapfrog(&Quadratic, &mut q, &mut p, &mut g, 0.1, 1, &[1.0]);
        assert_abs_diff_eq!(q[0], 0.995, epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], -0.09975, epsilon = 1e-15);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let mut q = [0.7];
        let mut p = [-1.3];
        let mut g = [-0.7];
        leapfrog(&Quadratic, &mut q, &mut p, &mut g, 0.05, 37, &[1.0]);
        p[0] = -p[0];
        leapfrog(&Quadratic, &mut q, &mut p, &mut g, 0.05, 37, &[1.0]);
        assert_abs_diff_eq!(q[0], 0.7, epsilon = 1e-10);
        assert_abs_diff_eq!(p[0], 1.3, epsilon = 1e-10);
    }

    #[test]
    fn energy_error_is_second_order() {
        let err = |eps: f64| {
            let n = (1.0 / eps).round() as usize;
            let mut q = [1.0];
            let mut p = [0.5];
            let mut g = [-1.0];
            let h0 = 0.5 + 0.125;
            leapfrog(&Quadratic, &mut q, &mut p, &mut g, eps, n, &[1.0]);
            (0.5 * q[0] * q[0] + 0.5 * p[0] * p[0] - h0).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn grad_check_sensitivity() {
        assert!(grad_check(&Quadratic, &[0.3], 1e-5) <= 1e-9);
        struct Off;
        impl LogDensity for Off {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
                g[0] = -x[0] + 0.01;
                -0.5 * x[0] * x[0]
            }
        }
        assert!(grad_check(&Off, &[0.3], 1e-5) > 1e-3);
    }

    #[test]
    fn warmup_windows_and_determinism() {
        let cfg = HmcConfig {
            warmup: 200,
            samples: 300,
            chains: 1,
            ..Default::default()
        };
        let a = run_chain(&Quadratic, &cfg, &[0.5], &mut chain_rng(3, 0)).unwrap();
        let b = run_chain(&Quadratic, &cfg, &[0.5], &mut chain_rng(3, 0)).unwrap();
        assert_eq!(a, b);
        let c = run_chain(&Quadratic, &cfg, &[0.5], &mut chain_rng(3, 1)).unwrap();
        assert_ne!(a.draws, c.draws);
        assert!(a.draws.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn failing_target_aborts() {
        struct Nan;
        impl LogDensity for Nan {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_grad(&self, _: &[f64], g: &mut [f64]) -> f64 {
                g[0] = 0.0;
                f64::NAN
            }
        }
        let r = run_chain(&Nan, &HmcConfig::default(), &[0.0], &mut chain_rng(1, 0));
        assert!(matches!(r, Err(Error::Sampler(_))));
    }
}
