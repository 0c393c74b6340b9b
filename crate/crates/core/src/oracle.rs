//! Constructive exact representation of an arbitrary log-odds tensor as a
//! NEX model: per-slice SVD factors, then the canonical-basis CP expansion
//! with `K = N H`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::design::DesignData;
use crate::error::{Error, Result};
use crate::nexmodel::{compute_propensity, FactorBlock, NexConfig, NexParams, Variant};
use crate::tensor3::{CpFactorSet, Tensor3};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactRep {
    /// `X_t` (N x H) per slice.
    pub x: Vec<DMatrix<f64>>,
    /// `Y_t` (M x H) per slice.
    pub y: Vec<DMatrix<f64>>,
    pub max_error: f64,
    /// Largest numerical rank over the slices.
    pub h0: usize,
}

/// Numerical rank of `s` at [`RANK_TOLERANCE`].
pub fn numerical_rank(s: &DMatrix<f64>) -> usize {
    let sv = s.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|v| **v > RANK_TOLERANCE * top).count()
}

/// `S_t = X_t Y_t'` with `X_t = L_t D_t^{1/2}`, `Y_t = R_t D_t^{1/2}`, both
/// zero-padded to `h` columns.
pub fn exact_factorization(slices: &[DMatrix<f64>], h: usize) -> Result<ExactRep> {
    let Some(first) = slices.first() else {
        return Err(Error::dim("no slices given"));
    };
    let (n, m) = first.shape();
    if let Some(s) = slices.iter().find(|s| s.shape() != (n, m)) {
        return Err(Error::dim(format!("slice shape {:?} differs from {:?}", s.shape(), (n, m))));
    }
    if slices.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("slice entries".into()));
    }
    let mut parts = Vec::with_capacity(slices.len());
    let mut h0 = 0;
    for s in slices {
        let svd = s.clone().svd(true, true);
        let sv = &svd.singular_values;
        let mut order: Vec<usize> = (0..sv.len()).collect();
        order.sort_by(|a, b| sv[*b].total_cmp(&sv[*a]));
        let top = sv.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = order.into_iter().filter(|&i| top > 0.0 && sv[i] > RANK_TOLERANCE * top).collect();
        h0 = h0.max(keep.len());
        parts.push((svd, keep));
    }
    if h < h0 {
        return Err(Error::InsufficientRank { requested: h, required: h0 });
    }
    let mut rep = ExactRep {
        x: Vec::with_capacity(slices.len()),
        y: Vec::with_capacity(slices.len()),
        max_error: 0.0,
        h0,
    };
    for (s, (svd, keep)) in slices.iter().zip(parts) {
        let u = svd.u.as_ref().unwrap();
        let v_t = svd.v_t.as_ref().unwrap();
        let mut x = DMatrix::zeros(n, h);
        let mut y = DMatrix::zeros(m, h);
        for (c, &i) in keep.iter().enumerate() {
            let root = svd.singular_values[i].sqrt();
            x.set_column(c, &(u.column(i) * root));
            y.set_column(c, &(v_t.row(i).transpose() * root));
        }
        rep.max_error = rep.max_error.max((s - &x * y.transpose()).norm());
        rep.x.push(x);
        rep.y.push(y);
    }
    Ok(rep)
}

/// 1-based canonical exemplar index `k = N (h - 1) + n` of trait `h`, node `n`.
pub fn canonical_index(n: usize, h: usize, big_n: usize) -> usize {
    big_n * (h - 1) + n
}

/// CP factor set with `K = N H`, unit weights, canonical basis vectors in
/// `U` and `V` and `W[t, k] = X_t[n, h]`; reconstructs every `X_t` exactly.
pub fn canonical_cp(x_seq: &[DMatrix<f64>]) -> Result<CpFactorSet> {
    let Some(first) = x_seq.first() else {
        return Err(Error::dim("empty sequence"));
    };
    let (n, h) = first.shape();
    if let Some(x) = x_seq.iter().find(|x| x.shape() != (n, h)) {
        return Err(Error::dim(format!("matrix shape {:?} differs from {:?}", x.shape(), (n, h))));
    }
    let t = x_seq.len();
    let k = n * h;
    let mut u = DMatrix::zeros(n, k);
    let mut v = DMatrix::zeros(h, k);
    let mut w = DMatrix::zeros(t, k);
    for hh in 1..=h {
        for nn in 1..=n {
            let kk = canonical_index(nn, hh, n) - 1;
            u[(nn - 1, kk)] = 1.0;
            v[(hh - 1, kk)] = 1.0;
            for (tt, x) in x_seq.iter().enumerate() {
                w[(tt, kk)] = x[(nn - 1, hh - 1)];
            }
        }
    }
    CpFactorSet::new(vec![1.0; k], u, v, w)
}

/// Largest Frobenius norm over `t` of `S_t - mu_t 1 1' - X_t Y_t'`.
pub fn verify_representation(s_target: &Tensor3, mu: &[f64], x_seq: &[DMatrix<f64>], y_seq: &[DMatrix<f64>]) -> Result<f64> {
    let (n, m, t) = s_target.dims();
    if mu.len() != t || x_seq.len() != t || y_seq.len() != t {
        return Err(Error::dim(format!("need {t} intercepts and factor matrices")));
    }
    let mut worst = 0.0f64;
    for tt in 0..t {
        let (x, y) = (&x_seq[tt], &y_seq[tt]);
        if x.nrows() != n || y.nrows() != m || x.ncols() != y.ncols() {
            return Err(Error::dim(format!("slice {}: factor shapes {:?}, {:?}", tt + 1, x.shape(), y.shape())));
        }
        let s = s_target.frontal_slice(tt + 1)?;
        let r = s - DMatrix::from_element(n, m, mu[tt]) - x * y.transpose();
        worst = worst.max(r.norm());
    }
    Ok(worst)
}

/// Summary of the end-to-end check: SVD factors, canonical CP, NEX propensity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepCheck {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub h0: usize,
    pub h: usize,
    pub k: usize,
    pub factorization_error: f64,
    /// Max absolute difference between the target and the NEX propensity.
    pub nex_error: f64,
}

/// Builds a NEX parameter set (`lambda = 1`, `mu = 0`) whose propensity
/// equals `s` and reports the achieved errors. `h = None` uses the smallest
/// admissible trait dimension.
pub fn nex_representation(s: &Tensor3, h: Option<usize>) -> Result<(NexConfig, NexParams, RepCheck)> {
    let (n, m, t) = s.dims();
    let slices: Vec<DMatrix<f64>> = (1..=t).map(|tt| s.frontal_slice(tt)).collect::<Result<_>>()?;
    let h0 = slices.iter().map(numerical_rank).max().unwrap_or(0);
    let h = h.unwrap_or(h0.max(1));
    let rep = exact_factorization(&slices, h)?;
    let cx = canonical_cp(&rep.x)?;
    let cy = canonical_cp(&rep.y)?;
    let k = n.max(m) * h;
    let pad = |c: &CpFactorSet, rows: usize| {
        let grow = |x: &DMatrix<f64>, r: usize| x.clone().resize(r, k, 0.0);
        FactorBlock {
            u: grow(&c.u, rows),
            v: grow(&c.v, h),
            w: grow(&c.w, t),
        }
    };
    let cfg = NexConfig::new(n, m, t, h, k, Variant::Bipartite);
    let params = NexParams {
        log_theta_k: vec![0.0; k],
        log_theta_h: vec![0.0; h],
        x: pad(&cx, n),
        y: Some(pad(&cy, m)),
        mu: vec![0.0; t],
        effects: None,
    };
    let shell = DesignData::fully_observed(Tensor3::zeros(n, m, t))?;
    let s_hat = compute_propensity(&params, &cfg, &shell)?;
    let nex_error = s
        .as_slice()
        .iter()
        .zip(s_hat.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let check = RepCheck {
        n,
        m,
        t,
        h0: rep.h0,
        h,
        k,
        factorization_error: rep.max_error,
        nex_error,
    };
    Ok((cfg, params, check))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor3::cp_reconstruct;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn zero_slices() {
        let rep = exact_factorization(&[DMatrix::zeros(3, 3), DMatrix::zeros(3, 3)], 2).unwrap();
        assert_eq!(rep.h0, 0);
        assert_eq!(rep.max_error, 0.0);
        assert!(rep.x.iter().chain(&rep.y).all(|x| x.iter().all(|v| *v == 0.0)));
        let cp = canonical_cp(&rep.x).unwrap();
        assert!(cp.w.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn random_full_rank_slices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let slices: Vec<_> = (0..3).map(|_| random(5, 5, &mut rng)).collect();
        let rep = exact_factorization(&slices, 5).unwrap();
        assert_eq!(rep.h0, 5);
        assert!(rep.max_error <= 1e-10, "{}", rep.max_error);
        let s = Tensor3::from_fn((5, 5, 3), |i, j, t| slices[t][(i, j)]);
        assert!(verify_representation(&s, &[0.0; 3], &rep.x, &rep.y).unwrap() <= 1e-10);
        match exact_factorization(&slices, 4) {
            Err(Error::InsufficientRank { requested: 4, required: 5 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rank_two_slice_is_padded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b, c, d) = (random(6, 1, &mut rng), random(6, 1, &mut rng), random(6, 1, &mut rng), random(6, 1, &mut rng));
        let s = &a * b.transpose() + &c * d.transpose();
        let rep = exact_factorization(&[s], 4).unwrap();
        assert_eq!(rep.h0, 2);
        for f in [&rep.x[0], &rep.y[0]] {
            assert!(f.column(0).norm() > 0.0 && f.column(1).norm() > 0.0);
            assert!(f.column(2).iter().chain(f.column(3).iter()).all(|v| *v == 0.0));
        }
        assert!(rep.max_error <= 1e-10);
    }

    #[test]
    fn canonical_expansion() {
        assert_eq!(canonical_index(2, 1, 2), 2);
        assert_eq!(canonical_index(1, 2, 2), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<_> = (0..3).map(|_| random(2, 2, &mut rng)).collect();
        let cp = canonical_cp(&xs).unwrap();
        assert_eq!(cp.rank(), 4);
        assert!(cp.weights.iter().all(|w| *w == 1.0));
        let x = cp_reconstruct(&cp).unwrap();
        for (t, xt) in xs.iter().enumerate() {
            for i in 0..2 {
                for h in 0..2 {
                    assert!((x.get(i, h, t) - xt[(i, h)]).abs() <= 1e-14);
                }
            }
        }
    }

    #[test]
    fn verify_shift_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let slices: Vec<_> = (0..2).map(|_| random(4, 3, &mut rng)).collect();
        let rep = exact_factorization(&slices, 3).unwrap();
        let s = Tensor3::from_fn((4, 3, 2), |i, j, t| slices[t][(i, j)]);
        let base = verify_representation(&s, &[0.0, 0.0], &rep.x, &rep.y).unwrap();
        let shifted = s.map(|v| v + 1.7);
        let e = verify_representation(&shifted, &[1.7, 1.7], &rep.x, &rep.y).unwrap();
        assert!((e - base).abs() < 1e-12);
        let wrong: Vec<_> = rep.x.iter().map(|x| x * 2.0).collect();
        assert!(verify_representation(&s, &[0.0, 0.0], &wrong, &rep.y).unwrap() > 1.0);
        assert!(verify_representation(&s, &[0.0], &rep.x, &rep.y).is_err());
    }

    #[test]
    fn end_to_end_expressivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = Tensor3::from_fn((6, 6, 4), |_, _, _| rng.random_range(-3.0..3.0));
        let (_, _, check) = nex_representation(&s, None).unwrap();
        assert_eq!((check.h0, check.k), (6, 36));
        assert!(check.nex_error <= 1e-8, "{}", check.nex_error);

        let s = Tensor3::from_fn((5, 3, 2), |_, _, _| rng.random_range(-3.0..3.0));
        let (_, _, check) = nex_representation(&s, Some(4)).unwrap();
        assert_eq!((check.h0, check.k), (3, 20));
        assert!(check.nex_error <= 1e-8);
    }
}
