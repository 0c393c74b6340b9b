//! Dense three-mode tensors and CP (CANDECOMP/PARAFAC) reconstruction.
//!
//! Storage is column-major in the sense of mode-1 fastest: entry `(i, j, t)`
//! lives at `i + n1 * (j + n2 * t)`. A frontal slice is therefore one
//! contiguous block that maps directly onto a column-major `n1 x n2` matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    values: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n1: usize, n2: usize, n3: usize) -> Self {
        Self {
            dims: (n1, n2, n3),
            values: vec![0.0; n1 * n2 * n3],
        }
    }

    pub fn from_vec(dims: (usize, usize, usize), values: Vec<f64>) -> Result<Self> {
        let (n1, n2, n3) = dims;
        if n1 == 0 || n2 == 0 || n3 == 0 {
            return Err(Error::dim(format!("tensor dims must be positive, got {dims:?}")));
        }
        if values.len() != n1 * n2 * n3 {
            return Err(Error::dim(format!(
                "{} values for dims {dims:?} (expected {})",
                values.len(),
                n1 * n2 * n3
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor values".into()));
        }
        Ok(Self { dims, values })
    }

    /// Builds a tensor by evaluating `f(i, j, t)` with 0-based indices.
    pub fn from_fn(dims: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let (n1, n2, n3) = dims;
        let mut values = Vec::with_capacity(n1 * n2 * n3);
        for t in 0..n3 {
            for j in 0..n2 {
                for i in 0..n1 {
                    values.push(f(i, j, t));
                }
            }
        }
        Self { dims, values }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, t: usize) -> usize {
        i + self.dims.0 * (j + self.dims.1 * t)
    }

    /// Inverse of [`Tensor3::offset`].
    #[inline]
    pub fn coords(&self, offset: usize) -> (usize, usize, usize) {
        let (n1, n2, _) = self.dims;
        (offset % n1, (offset / n1) % n2, offset / (n1 * n2))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, t: usize) -> f64 {
        self.values[self.offset(i, j, t)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, t: usize, value: f64) {
        let o = self.offset(i, j, t);
        self.values[o] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Contiguous values of the slice at 0-based time `t`.
    pub fn slice_values(&self, t: usize) -> &[f64] {
        let block = self.dims.0 * self.dims.1;
        &self.values[t * block..(t + 1) * block]
    }

    /// The `n1 x n2` frontal slice at time `t`, counted from 1 as in the
    /// file formats.
    pub fn frontal_slice(&self, t: usize) -> Result<DMatrix<f64>> {
        if t == 0 || t > self.dims.2 {
            return Err(Error::OutOfRange {
                index: t,
                len: self.dims.2,
            });
        }
        Ok(DMatrix::from_column_slice(
            self.dims.0,
            self.dims.1,
            self.slice_values(t - 1),
        ))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Weights plus factor matrices of one CP decomposition
/// `sum_k weights[k] * u[:, k] (x) v[:, k] (x) w[:, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpFactorSet {
    pub weights: Vec<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl CpFactorSet {
    pub fn new(weights: Vec<f64>, u: DMatrix<f64>, v: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        let set = Self { weights, u, v, w };
        set.validate()?;
        Ok(set)
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.u.nrows(), self.v.nrows(), self.w.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::dim("CP rank must be positive"));
        }
        for (name, m) in [("U", &self.u), ("V", &self.v), ("W", &self.w)] {
            if m.ncols() != k {
                return Err(Error::dim(format!(
                    "{name} has {} columns but there are {k} weights",
                    m.ncols()
                )));
            }
            if m.nrows() == 0 {
                return Err(Error::dim(format!("{name} has no rows")));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("CP factor {name}")));
            }
        }
        if self.weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("CP weights".into()));
        }
        Ok(())
    }
}

/// Entry `(i, h, t)` of the result is `sum_k weights[k] U[i,k] V[h,k] W[t,k]`.
pub fn cp_reconstruct(f: &CpFactorSet) -> Result<Tensor3> {
    f.validate()?;
    let (n1, n2, n3) = f.dims();
    let mut out = Tensor3::zeros(n1, n2, n3);
    let block = n1 * n2;
    for t in 0..n3 {
        let slice = &mut out.values[t * block..(t + 1) * block];
        for k in 0..f.rank() {
            let c = f.weights[k] * f.w[(t, k)];
            if c == 0.0 {
                continue;
            }
            let u = f.u.column(k);
            for h in 0..n2 {
                let cv = c * f.v[(h, k)];
                let col = &mut slice[h * n1..(h + 1) * n1];
                for (x, ui) in col.iter_mut().zip(u.iter()) {
                    *x += cv * ui;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(f: &CpFactorSet) -> Vec<f64> {
        let (n1, n2, n3) = f.dims();
        let mut out = vec![0.0; n1 * n2 * n3];
        for t in 0..n3 {
            for h in 0..n2 {
                for i in 0..n1 {
                    let mut s = 0.0;
                    for k in 0..f.rank() {
                        s += f.weights[k] * f.u[(i, k)] * f.v[(h, k)] * f.w[(t, k)];
                    }
                    out[i + n1 * (h + n2 * t)] = s;
                }
            }
        }
        out
    }

    #[test]
    fn rank_one_example() {
        let f = CpFactorSet::new(
            vec![2.0],
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            DMatrix::from_column_slice(1, 1, &[3.0]),
            DMatrix::from_column_slice(2, 1, &[1.0, 2.0]),
        )
        .unwrap();
        let x = cp_reconstruct(&f).unwrap();
        assert_eq!(x.dims(), (2, 1, 2));
        assert_eq!(x.get(0, 0, 0), 6.0);
        assert_eq!(x.get(1, 0, 0), -6.0);
        assert_eq!(x.get(0, 0, 1), 12.0);
        assert_eq!(x.get(1, 0, 1), -12.0);
    }

    #[test]
    fn zero_weights_give_zero_tensor() {
        let f = CpFactorSet::new(
            vec![0.0; 3],
            DMatrix::from_element(4, 3, 1.5),
            DMatrix::from_element(2, 3, -0.5),
            DMatrix::from_element(5, 3, 2.0),
        )
        .unwrap();
        assert!(cp_reconstruct(&f).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_columns_rejected() {
        let err = CpFactorSet::new(
            vec![1.0, 1.0],
            DMatrix::zeros(3, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(4, 2),
        );
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn constant_slices() {
        let x = Tensor3::from_fn((2, 2, 2), |_, _, t| (t + 1) as f64);
        assert_eq!(x.frontal_slice(2).unwrap(), DMatrix::from_element(2, 2, 2.0));
        assert!(matches!(x.frontal_slice(0), Err(Error::OutOfRange { index: 0, len: 2 })));
        assert!(x.frontal_slice(3).is_err());
    }

    #[test]
    fn offset_coords_roundtrip() {
        let x = Tensor3::zeros(3, 4, 5);
        for o in 0..x.len() {
            let (i, j, t) = x.coords(o);
            assert_eq!(x.offset(i, j, t), o);
        }
    }

    fn factor_set(max_k: usize, max_dim: usize) -> impl Strategy<Value = CpFactorSet> {
        (1..=max_k, 1..=max_dim, 1..=max_dim, 1..=max_dim).prop_flat_map(|(k, n1, n2, n3)| {
            let v = |n| proptest::collection::vec(-2.0f64..2.0, n);
            (v(k), v(n1 * k), v(n2 * k), v(n3 * k)).prop_map(move |(l, u, vv, w)| CpFactorSet {
                weights: l,
                u: DMatrix::from_vec(n1, k, u),
                v: DMatrix::from_vec(n2, k, vv),
                w: DMatrix::from_vec(n3, k, w),
            })
        })
    }

    proptest! {
        #[test]
        fn matches_naive_loops(f in factor_set(6, 8)) {
            let fast = cp_reconstruct(&f).unwrap();
            let slow = naive(&f);
            let scale = slow.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (a, b) in fast.as_slice().iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn slice_matrix_identity(f in factor_set(6, 8)) {
            let x = cp_reconstruct(&f).unwrap();
            for t in 0..f.w.nrows() {
                let d: Vec<f64> = (0..f.rank()).map(|k| f.weights[k] * f.w[(t, k)]).collect();
                let expected = &f.u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)) * f.v.transpose();
                let got = x.frontal_slice(t + 1).unwrap();
                let scale = expected.amax().max(1.0);
                prop_assert!((got - expected).amax() <= 1e-12 * scale);
            }
        }

        #[test]
        fn linear_in_concatenation(a in factor_set(4, 5), seed in 0u64..1000) {
            // second set with the same dims, derived deterministically from the first
            let b = CpFactorSet {
                weights: a.weights.iter().map(|w| w * 0.5 + (seed as f64) * 1e-3).collect(),
                u: a.u.map(|x| -x + 0.25),
                v: a.v.map(|x| x * 1.5),
                w: a.w.map(|x| x - 0.1),
            };
            let joined = CpFactorSet {
                weights: a.weights.iter().chain(&b.weights).copied().collect(),
                u: DMatrix::from_fn(a.u.nrows(), 2 * a.rank(), |i, k| if k < a.rank() { a.u[(i, k)] } else { b.u[(i, k - a.rank())] }),
                v: DMatrix::from_fn(a.v.nrows(), 2 * a.rank(), |i, k| if k < a.rank() { a.v[(i, k)] } else { b.v[(i, k - a.rank())] }),
                w: DMatrix::from_fn(a.w.nrows(), 2 * a.rank(), |i, k| if k < a.rank() { a.w[(i, k)] } else { b.w[(i, k - a.rank())] }),
            };
            let sum = cp_reconstruct(&joined).unwrap();
            let xa = cp_reconstruct(&a).unwrap();
            let xb = cp_reconstruct(&b).unwrap();
            for ((s, x), y) in sum.as_slice().iter().zip(xa.as_slice()).zip(xb.as_slice()) {
                prop_assert!((s - x - y).abs() <= 1e-12 * (1.0 + s.abs()));
            }
        }
    }
}
