//! Observed network data shared by every model: adjacency, observation mask,
//! optional co-occurrence mask, per-slice covariate and a two-level time index.

use crate::error::{Error, Result};
use crate::tensor3::Tensor3;

/// Week and year position of each time slice, used by the conditional model
/// (seasonal intercept per week, random effect per year, separable kernel).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeIndex {
    pub week: Vec<f64>,
    pub year: Vec<f64>,
}

impl TimeIndex {
    pub fn len(&self) -> usize {
        self.week.len()
    }

    pub fn is_empty(&self) -> bool {
        self.week.is_empty()
    }

    /// Sorted distinct values and the position of each entry among them.
    fn levels(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let mut distinct: Vec<f64> = values.to_vec();
        distinct.sort_by(|a, b| a.total_cmp(b));
        distinct.dedup();
        let index = values
            .iter()
            .map(|v| distinct.iter().position(|d| d == v).unwrap())
            .collect();
        (distinct, index)
    }

    pub fn week_levels(&self) -> (Vec<f64>, Vec<usize>) {
        Self::levels(&self.week)
    }

    pub fn year_levels(&self) -> (Vec<f64>, Vec<usize>) {
        Self::levels(&self.year)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignData {
    /// Binary interactions `A`.
    pub adjacency: Tensor3,
    /// Observation mask `Omega` (1 = observed).
    pub observed: Tensor3,
    /// Co-occurrence mask `O`; cells with 0 are structural zeros.
    pub cooccurrence: Option<Tensor3>,
    /// One covariate value per time slice (temperature).
    pub covariate: Option<Vec<f64>>,
    pub time: Option<TimeIndex>,
    /// Single node class: only `i < j` cells enter the likelihood.
    pub symmetric: bool,
}

/// Same thing under the name used by the file readers.
pub type AdjacencyData = DesignData;

fn check_binary(x: &Tensor3, what: &str) -> Result<()> {
    if let Some(v) = x.as_slice().iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(Error::invalid(format!("{what} must be binary, found {v}")));
    }
    Ok(())
}

impl DesignData {
    pub fn new(adjacency: Tensor3, observed: Tensor3) -> Result<Self> {
        let d = Self {
            adjacency,
            observed,
            cooccurrence: None,
            covariate: None,
            time: None,
            symmetric: false,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn fully_observed(adjacency: Tensor3) -> Result<Self> {
        let (n, m, t) = adjacency.dims();
        let observed = Tensor3::from_fn((n, m, t), |_, _, _| 1.0);
        Self::new(adjacency, observed)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.adjacency.dims();
        check_binary(&self.adjacency, "adjacency")?;
        if self.observed.dims() != dims {
            return Err(Error::dim(format!("mask dims {:?} vs data {dims:?}", self.observed.dims())));
        }
        check_binary(&self.observed, "observation mask")?;
        if let Some(o) = &self.cooccurrence {
            if o.dims() != dims {
                return Err(Error::dim(format!("co-occurrence dims {:?} vs data {dims:?}", o.dims())));
            }
            check_binary(o, "co-occurrence")?;
        }
        if let Some(c) = &self.covariate {
            if c.len() != dims.2 {
                return Err(Error::dim(format!("{} covariate values for {} slices", c.len(), dims.2)));
            }
        }
        if let Some(ti) = &self.time {
            if ti.week.len() != dims.2 || ti.year.len() != dims.2 {
                return Err(Error::dim("time index length differs from number of slices"));
            }
        }
        if self.symmetric && dims.0 != dims.1 {
            return Err(Error::dim(format!("symmetric data must be square, got {}x{}", dims.0, dims.1)));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.adjacency.dims()
    }

    /// Whether the cell `(i, j, t)` (0-based) contributes to the likelihood.
    #[inline]
    pub fn is_active(&self, i: usize, j: usize, t: usize) -> bool {
        if self.symmetric && i >= j {
            return false;
        }
        let o = self.adjacency.offset(i, j, t);
        if self.observed.as_slice()[o] == 0.0 {
            return false;
        }
        match &self.cooccurrence {
            Some(c) => c.as_slice()[o] != 0.0,
            None => true,
        }
    }

    pub fn active_mask(&self) -> Vec<bool> {
        let (n, m, t) = self.dims();
        let mut out = Vec::with_capacity(n * m * t);
        for tt in 0..t {
            for j in 0..m {
                for i in 0..n {
                    out.push(self.is_active(i, j, tt));
                }
            }
        }
        out
    }

    pub fn n_active(&self) -> usize {
        self.active_mask().iter().filter(|b| **b).count()
    }

    /// Marks the given slices (1-based) as unobserved.
    pub fn hold_out_slices(&mut self, slices: &[usize]) -> Result<()> {
        let (n, m, t) = self.dims();
        for &s in slices {
            if s == 0 || s > t {
                return Err(Error::OutOfRange { index: s, len: t });
            }
            for j in 0..m {
                for i in 0..n {
                    self.observed.set(i, j, s - 1, 0.0);
                }
            }
        }
        Ok(())
    }

    /// Map from time slice to intercept index and the number of intercepts:
    /// one per distinct week when a time index is present, else one per slice.
    pub fn mu_index(&self) -> (Vec<usize>, usize) {
        match &self.time {
            Some(ti) => {
                let (levels, idx) = ti.week_levels();
                (idx, levels.len())
            }
            None => {
                let t = self.dims().2;
                ((0..t).collect(), t)
            }
        }
    }

    /// Map from time slice to year index and the number of years.
    pub fn year_index(&self) -> (Vec<usize>, usize) {
        match &self.time {
            Some(ti) => {
                let (levels, idx) = ti.year_levels();
                (idx, levels.len())
            }
            None => (vec![0; self.dims().2], 1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_and_symmetry() {
        let a = Tensor3::zeros(3, 3, 2);
        let mut d = DesignData::fully_observed(a).unwrap();
        assert_eq!(d.n_active(), 18);
        d.symmetric = true;
        assert_eq!(d.n_active(), 6);
        d.hold_out_slices(&[2]).unwrap();
        assert_eq!(d.n_active(), 3);
        assert!(d.hold_out_slices(&[3]).is_err());
    }

    #[test]
    fn rejects_non_binary() {
        let a = Tensor3::from_fn((2, 2, 1), |_, _, _| 0.5);
        assert!(DesignData::fully_observed(a).is_err());
    }

    #[test]
    fn week_and_year_levels() {
        let mut d = DesignData::fully_observed(Tensor3::zeros(2, 2, 5)).unwrap();
        d.time = Some(TimeIndex {
            week: vec![3.0, 4.0, 5.0, 3.0, 5.0],
            year: vec![1996.0, 1996.0, 1996.0, 2010.0, 2010.0],
        });
        assert_eq!(d.mu_index(), (vec![0, 1, 2, 0, 2], 3));
        assert_eq!(d.year_index(), (vec![0, 0, 0, 1, 1], 2));
    }
}
