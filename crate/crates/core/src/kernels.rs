//! Temporal covariance construction, jittered Cholesky and multivariate
//! normal density / sampling.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default jitter, relative to the mean diagonal of the matrix.
pub const DEFAULT_BASE_JITTER: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Distance matrices and decay rates defining `exp(-k1 D1)`, optionally
/// multiplied entrywise by `exp(-k2 D2)`, times an overall `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovSpec {
    pub d1: DMatrix<f64>,
    pub k1: f64,
    pub d2: Option<DMatrix<f64>>,
    pub k2: Option<f64>,
    pub scale: f64,
}

impl CovSpec {
    pub fn plain(d: DMatrix<f64>, k: f64) -> Self {
        Self {
            d1: d,
            k1: k,
            d2: None,
            k2: None,
            scale: 1.0,
        }
    }

    pub fn separable(d1: DMatrix<f64>, k1: f64, d2: DMatrix<f64>, k2: f64) -> Self {
        Self {
            d1,
            k1,
            d2: Some(d2),
            k2: Some(k2),
            scale: 1.0,
        }
    }

    /// `exp(-k |i - j|)` on the grid `0..t`.
    pub fn regular_grid(t: usize, k: f64) -> Self {
        let points: Vec<f64> = (0..t).map(|i| i as f64).collect();
        Self::plain(abs_distance(&points), k)
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn dim(&self) -> usize {
        self.d1.nrows()
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::invalid(format!("covariance scale must be positive, got {}", self.scale)));
        }
        let base = match (&self.d2, self.k2) {
            (None, None) => exp_kernel(&self.d1, self.k1)?,
            (Some(_), Some(_)) => separable_kernel(self)?,
            _ => return Err(Error::invalid("separable covariance needs both d2 and k2")),
        };
        Ok(base * self.scale)
    }
}

/// Pairwise absolute differences `|p_i - p_j|`.
pub fn abs_distance(points: &[f64]) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| (points[i] - points[j]).abs())
}

pub fn validate_distance(d: &DMatrix<f64>) -> Result<()> {
    if d.nrows() != d.ncols() || d.nrows() == 0 {
        return Err(Error::dim(format!("distance matrix must be square, got {}x{}", d.nrows(), d.ncols())));
    }
    let n = d.nrows();
    for i in 0..n {
        if d[(i, i)] != 0.0 {
            return Err(Error::invalid(format!("distance matrix has nonzero diagonal at {i}")));
        }
        for j in 0..i {
            let (a, b) = (d[(i, j)], d[(j, i)]);
            if !a.is_finite() || a < 0.0 {
                return Err(Error::invalid(format!("distance ({i},{j}) = {a} is not a nonnegative number")));
            }
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::invalid(format!("distance matrix is not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Entrywise `exp(-k d_ij)`.
pub fn exp_kernel(d: &DMatrix<f64>, k: f64) -> Result<DMatrix<f64>> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::invalid(format!("length scale must be positive, got {k}")));
    }
    validate_distance(d)?;
    Ok(d.map(|x| (-k * x).exp()))
}

/// Hadamard product `exp(-k1 D1) o exp(-k2 D2)` over a shared grid.
pub fn separable_kernel(spec: &CovSpec) -> Result<DMatrix<f64>> {
    let (d2, k2) = match (&spec.d2, spec.k2) {
        (Some(d2), Some(k2)) => (d2, k2),
        _ => return Err(Error::invalid("separable kernel needs a second distance matrix and length scale")),
    };
    if d2.shape() != spec.d1.shape() {
        return Err(Error::dim(format!(
            "distance matrices differ in shape: {:?} vs {:?}",
            spec.d1.shape(),
            d2.shape()
        )));
    }
    let a = exp_kernel(&spec.d1, spec.k1)?;
    let b = exp_kernel(d2, k2)?;
    Ok(a.component_mul(&b))
}

/// Lower Cholesky factor together with the diagonal jitter that was needed.
#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    l: DMatrix<f64>,
    jitter: f64,
}

impl CholFactor {
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Factor of `s^2 * Sigma`. A zero scale gives a degenerate factor that
    /// [`mvn_sample`] accepts (every draw equals the mean) but that has no density.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            l: &self.l * s,
            jitter: self.jitter * s * s,
        }
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L z = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[(i, k)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    /// Solves `L^T z = b` in place.
    pub fn solve_upper_t_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    /// `(L L^T)^{-1}` built column by column from triangular solves.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            self.solve_lower_in_place(&mut e);
            self.solve_upper_t_in_place(&mut e);
            inv.column_mut(j).copy_from_slice(&e);
        }
        // symmetrise away rounding noise
        let t = inv.transpose();
        (inv + t) * 0.5
    }
}

fn cholesky(a: &DMatrix<f64>, jitter: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Cholesky of `Sigma + j I` for the smallest `j` in
/// `{0, b, 10 b, ..., 1e6 b}` that works, with `b = base_jitter * mean(diag Sigma)`.
pub fn chol_jitter(sigma: &DMatrix<f64>, base_jitter: f64) -> Result<CholFactor> {
    if sigma.nrows() != sigma.ncols() || sigma.nrows() == 0 {
        return Err(Error::dim(format!("covariance must be square, got {}x{}", sigma.nrows(), sigma.ncols())));
    }
    let n = sigma.nrows();
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (sigma[(i, j)], sigma[(j, i)]);
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::invalid(format!("covariance not symmetric at ({i},{j})")));
            }
        }
    }
    let mean_diag = sigma.diagonal().mean().abs().max(f64::MIN_POSITIVE);
    let base = base_jitter * mean_diag;
    let mut levels = vec![0.0];
    levels.extend((0..=6).map(|p| base * 10f64.powi(p)));
    for &j in &levels {
        if let Some(l) = cholesky(sigma, j) {
            return Ok(CholFactor { l, jitter: j });
        }
    }
    Err(Error::NotPositiveDefinite {
        max_jitter: *levels.last().unwrap(),
    })
}

pub fn mvn_logpdf(x: &[f64], mean: &[f64], chol: &CholFactor) -> Result<f64> {
    let n = chol.dim();
    if x.len() != n || mean.len() != n {
        return Err(Error::dim(format!(
            "mvn_logpdf: x has {}, mean has {}, covariance is {n}x{n}",
            x.len(),
            mean.len()
        )));
    }
    if chol.l.diagonal().iter().any(|d| !(*d > 0.0)) {
        return Err(Error::invalid("degenerate covariance has no density"));
    }
    let mut z: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    chol.solve_lower_in_place(&mut z);
    let quad: f64 = z.iter().map(|v| v * v).sum();
    Ok(-0.5 * (n as f64 * LN_2PI + chol.log_det() + quad))
}

pub fn mvn_sample<R: Rng + ?Sized>(mean: &[f64], chol: &CholFactor, rng: &mut R) -> Result<Vec<f64>> {
    let n = chol.dim();
    if mean.len() != n {
        return Err(Error::dim(format!("mvn_sample: mean has {} entries, covariance is {n}x{n}", mean.len())));
    }
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut out = mean.to_vec();
    for i in 0..n {
        let mut s = 0.0;
        for k in 0..=i {
            s += chol.l[(i, k)] * z[k];
        }
        out[i] += s;
    }
    Ok(out)
}

/// Gaussian prior `N(mean, Sigma)` prepared for repeated density and gradient
/// evaluation: holds the dense precision and the log normaliser.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    precision: Vec<f64>,
    log_norm: f64,
    chol: CholFactor,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, covariance: &DMatrix<f64>) -> Result<Self> {
        let chol = chol_jitter(covariance, DEFAULT_BASE_JITTER)?;
        Self::from_chol(mean, chol)
    }

    pub fn from_chol(mean: Vec<f64>, chol: CholFactor) -> Result<Self> {
        let n = chol.dim();
        if mean.len() != n {
            return Err(Error::dim(format!("prior mean has {} entries, covariance is {n}x{n}", mean.len())));
        }
        let inv = chol.inverse();
        let precision = inv.transpose().as_slice().to_vec(); // row-major; symmetric anyway
        let log_norm = -0.5 * (n as f64 * LN_2PI + chol.log_det());
        Ok(Self {
            mean,
            precision,
            log_norm,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn chol(&self) -> &CholFactor {
        &self.chol
    }

    /// `-0.5 * n * ln(2 pi) - 0.5 * ln det Sigma`.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// Returns `q = (x - m)' P (x - m)` and writes `P (x - m)` into `px`.
    pub fn quad_form(&self, x: &[f64], px: &mut [f64]) -> f64 {
        let n = self.dim();
        let mut q = 0.0;
        for i in 0..n {
            let row = &self.precision[i * n..(i + 1) * n];
            let mut s = 0.0;
            for ((p, xj), mj) in row.iter().zip(x).zip(&self.mean) {
                s += p * (xj - mj);
            }
            px[i] = s;
            q += s * (x[i] - self.mean[i]);
        }
        q
    }

    /// Log density at `x`; adds its gradient into `grad`. `scratch` must have length `dim`.
    pub fn log_density_add_grad(&self, x: &[f64], grad: &mut [f64], scratch: &mut [f64]) -> f64 {
        let q = self.quad_form(x, scratch);
        for (g, s) in grad.iter_mut().zip(scratch.iter()) {
            *g -= s;
        }
        self.log_norm - 0.5 * q
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.dim()];
        self.log_norm - 0.5 * self.quad_form(x, &mut scratch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn d12(t: usize) -> DMatrix<f64> {
        CovSpec::regular_grid(t, 1.0).d1
    }

    #[test]
    fn exp_kernel_values() {
        let s = exp_kernel(&d12(3), 0.04).unwrap();
        for i in 0..3 {
            assert_eq!(s[(i, i)], 1.0);
        }
        assert_abs_diff_eq!(s[(0, 1)], 0.960789, epsilon = 1e-6);
        let mut prev = 1.0;
        for k in [0.1, 1.0, 10.0, 100.0] {
            let v = exp_kernel(&d12(2), k).unwrap()[(0, 1)];
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-40);
    }

    #[test]
    fn exp_kernel_rejects_bad_input() {
        assert!(exp_kernel(&d12(2), 0.0).is_err());
        assert!(exp_kernel(&d12(2), -1.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(exp_kernel(&asym, 0.5).is_err());
    }

    #[test]
    fn exp_kernel_matches_scalar_exponentials() {
        let pts = [0.0, 0.3, 1.7, 2.2, 5.0, 9.25];
        let d = abs_distance(&pts);
        let s = exp_kernel(&d, 0.37).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let expect = f64::exp(-0.37 * (pts[i] - pts[j]).abs());
                assert!((s[(i, j)] - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn separable_values() {
        let spec = CovSpec::separable(d12(2), 0.0075, d12(2), 0.075);
        let s = separable_kernel(&spec).unwrap();
        assert_abs_diff_eq!(s[(0, 1)], f64::exp(-0.0825), epsilon = 1e-15);
        assert_abs_diff_eq!(s[(0, 1)], 0.920811, epsilon = 1e-6);
        assert_eq!(s[(0, 0)], 1.0);
        assert_eq!(s[(1, 1)], 1.0);

        let zero = CovSpec::separable(d12(4), 0.3, DMatrix::zeros(4, 4), 0.9);
        assert_eq!(separable_kernel(&zero).unwrap(), exp_kernel(&d12(4), 0.3).unwrap());

        let bad = CovSpec::separable(d12(3), 0.3, d12(4), 0.9);
        assert!(matches!(separable_kernel(&bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn chol_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        let c = chol_jitter(&id, DEFAULT_BASE_JITTER).unwrap();
        assert_eq!(c.lower(), &id);
        assert_eq!(c.jitter(), 0.0);

        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let c = chol_jitter(&a, DEFAULT_BASE_JITTER).unwrap();
        assert_abs_diff_eq!(c.lower()[(0, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.lower()[(1, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.lower()[(0, 1)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.lower()[(1, 1)], 2f64.sqrt(), epsilon = 1e-15);

        let ones = DMatrix::from_element(3, 3, 1.0);
        let c = chol_jitter(&ones, DEFAULT_BASE_JITTER).unwrap();
        assert!(c.jitter() > 0.0);
        let rebuilt = c.lower() * c.lower().transpose();
        let target = &ones + DMatrix::identity(3, 3) * c.jitter();
        assert!((rebuilt - target).amax() < 1e-8);
    }

    #[test]
    fn chol_fails_on_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -5.0]);
        assert!(matches!(chol_jitter(&a, 1e-8), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn logpdf_examples() {
        let c1 = chol_jitter(&DMatrix::identity(1, 1), 1e-8).unwrap();
        assert_abs_diff_eq!(mvn_logpdf(&[0.0], &[0.0], &c1).unwrap(), -0.918939, epsilon = 1e-6);
        let c2 = chol_jitter(&DMatrix::identity(2, 2), 1e-8).unwrap();
        assert_abs_diff_eq!(mvn_logpdf(&[0.0, 0.0], &[0.0, 0.0], &c2).unwrap(), -1.837877, epsilon = 1e-6);

        let sigma = exp_kernel(&d12(5), 0.2).unwrap() * 2.5;
        let c = chol_jitter(&sigma, 1e-8).unwrap();
        let m = [0.3, -1.0, 2.0, 0.0, 0.5];
        let expect = -0.5 * (5.0 * LN_2PI + sigma.determinant().ln());
        assert_abs_diff_eq!(mvn_logpdf(&m, &m, &c).unwrap(), expect, epsilon = 1e-10);
        assert!(matches!(mvn_logpdf(&[0.0; 4], &m, &c), Err(Error::Dimension(_))));
    }

    #[test]
    fn logpdf_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in [1usize, 2, 5, 12, 20] {
            let b = DMatrix::from_fn(t, t, |_, _| rng.sample::<f64, _>(StandardNormal));
            let sigma = &b * b.transpose() + DMatrix::identity(t, t) * 0.5;
            let x: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
            let m: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
            let c = chol_jitter(&sigma, 1e-8).unwrap();
            let inv = sigma.clone().try_inverse().unwrap();
            let r = nalgebra::DVector::from_iterator(t, x.iter().zip(&m).map(|(a, b)| a - b));
            let dense = -0.5 * (t as f64 * LN_2PI + sigma.determinant().ln() + (r.transpose() * &inv * &r)[(0, 0)]);
            let got = mvn_logpdf(&x, &m, &c).unwrap();
            assert!((got - dense).abs() <= 1e-9 * dense.abs().max(1.0), "T={t}: {got} vs {dense}");

            let prior = GaussianPrior::new(m.clone(), &sigma).unwrap();
            assert!((prior.log_density(&x) - dense).abs() <= 1e-9 * dense.abs().max(1.0));
        }
    }

    #[test]
    fn sampling_contracts() {
        let c = chol_jitter(&DMatrix::identity(2, 2), 1e-8).unwrap();
        let mean = [1.5, -2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(mvn_sample(&mean, &c.scaled(0.0), &mut rng).unwrap(), mean.to_vec());

        let a = mvn_sample(&mean, &c, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = mvn_sample(&mean, &c, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);

        let n = 10_000;
        let mut s = [[0.0; 2]; 2];
        for _ in 0..n {
            let x = mvn_sample(&[0.0, 0.0], &c, &mut rng).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    s[i][j] += x[i] * x[j] / n as f64;
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let truth = if i == j { 1.0 } else { 0.0 };
                assert!((s[i][j] - truth).abs() < 0.1);
            }
        }
    }

    #[test]
    fn own_samples_score_near_negative_entropy() {
        let t = 6;
        let sigma = exp_kernel(&d12(t), 0.3).unwrap();
        let c = chol_jitter(&sigma, 1e-8).unwrap();
        let mean = vec![0.25; t];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                let x = mvn_sample(&mean, &c, &mut rng).unwrap();
                mvn_logpdf(&x, &mean, &c).unwrap()
            })
            .collect();
        let avg = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let neg_entropy = -0.5 * (t as f64 * (1.0 + LN_2PI) + sigma.determinant().ln());
        assert!((avg - neg_entropy).abs() < 3.0 * se, "{avg} vs {neg_entropy} (se {se})");
    }

    #[test]
    fn prior_gradient_is_minus_precision_residual() {
        let sigma = exp_kernel(&d12(4), 0.5).unwrap();
        let prior = GaussianPrior::new(vec![0.1, 0.2, -0.3, 0.0], &sigma).unwrap();
        let x = [0.7, -0.4, 1.1, 0.2];
        let mut g = vec![0.0; 4];
        let mut scratch = vec![0.0; 4];
        let f0 = prior.log_density_add_grad(&x, &mut g, &mut scratch);
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (prior.log_density(&xp) - prior.log_density(&xm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7);
        }
        assert!((f0 - prior.log_density(&x)).abs() < 1e-14);
    }
}
