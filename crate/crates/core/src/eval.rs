//! Model assessment: AUC, cross-validation folds, held-out ratio, posterior
//! summaries, chain diagnostics and shrinkage reports.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::DesignData;
use crate::error::{Error, Result};
use crate::nexmodel::{cumulative_exp, inv_link};
use crate::sampler::ChainDraws;
use crate::tensor3::Tensor3;

/// Probability that a random positive outscores a random negative, ties
/// counted one half. Computed from midranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid(format!("AUC needs both classes, got {n_pos} positives and {n_neg} negatives")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    // sum of midranks (1-based) of the positives, accumulated in doubled units
    // so that tie groups stay in integers
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128; // twice the midrank
        let pos = order[i..=j].iter().filter(|k| labels[**k]).count() as u128;
        rank_sum2 += pos * mid2;
        i = j + 1;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

/// Mean over edges divided by mean over non-edges.
pub fn heldout_ratio(edge_probs: &[f64], nonedge_probs: &[f64]) -> Result<f64> {
    if edge_probs.is_empty() || nonedge_probs.is_empty() {
        return Err(Error::invalid("held-out ratio needs nonempty edge and non-edge sets"));
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let den = mean(nonedge_probs);
    if den == 0.0 {
        return Err(Error::invalid("mean non-edge probability is zero"));
    }
    Ok(mean(edge_probs) / den)
}

/// Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::dim("correlation needs two equal-length series of length >= 2"));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::invalid("correlation undefined for a constant series"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

pub fn mean_abs_error(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dim("mean absolute error needs two equal-length nonempty series"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Uniform random partition of the observed cells into `n_folds` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub seed: u64,
    /// Observed cells `(i, j, t)`, 0-based, in canonical order (t, i, j).
    pub cells: Vec<(usize, usize, usize)>,
    /// Fold of each cell, 1-based.
    pub fold: Vec<usize>,
}

impl FoldAssignment {
    pub fn cells_in(&self, f: usize) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.cells.iter().zip(&self.fold).filter(move |(_, g)| **g == f).map(|(c, _)| *c)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_folds];
        for f in &self.fold {
            s[f - 1] += 1;
        }
        s
    }

    /// Copy of `d` with the cells of fold `f` marked unobserved (both
    /// orientations for symmetric data).
    pub fn training_data(&self, d: &DesignData, f: usize) -> Result<DesignData> {
        if f == 0 || f > self.n_folds {
            return Err(Error::OutOfRange { index: f, len: self.n_folds });
        }
        let mut out = d.clone();
        for (i, j, t) in self.cells_in(f) {
            out.observed.set(i, j, t, 0.0);
            if d.symmetric {
                out.observed.set(j, i, t, 0.0);
            }
        }
        Ok(out)
    }
}

pub fn make_cv_folds(d: &DesignData, n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if n_folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {n_folds}")));
    }
    let (n, m, t) = d.dims();
    let mut cells = Vec::new();
    for tt in 0..t {
        for i in 0..n {
            for j in 0..m {
                if d.is_active(i, j, tt) {
                    cells.push((i, j, tt));
                }
            }
        }
    }
    if cells.len() < n_folds {
        return Err(Error::invalid(format!("{} observed cells cannot fill {n_folds} folds", cells.len())));
    }
    let mut perm: Vec<usize> = (0..cells.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; cells.len()];
    for (pos, idx) in perm.into_iter().enumerate() {
        fold[idx] = pos % n_folds + 1;
    }
    Ok(FoldAssignment {
        n_folds,
        seed,
        cells,
        fold,
    })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Split-half potential scale reduction over one scalar quantity per chain.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if chains.is_empty() || n < 4 {
        return Err(Error::invalid("split R-hat needs at least one chain with 4 draws"));
    }
    let half = n / 2;
    let mut parts = Vec::with_capacity(2 * chains.len());
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[c.len() - half..]);
    }
    let stats: Vec<(f64, f64)> = parts.iter().map(|p| mean_var(p)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let (_, b_over_n) = mean_var(&stats.iter().map(|s| s.0).collect::<Vec<_>>());
    let nf = half as f64;
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if w == 0.0 {
        return Ok(if b_over_n == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok((var_plus / w).sqrt())
}

/// Effective sample size with Geyer's initial monotone sequence over the
/// combined chains.
pub fn ess(chains: &[&[f64]]) -> Result<f64> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if chains.is_empty() || n < 4 {
        return Err(Error::invalid("ESS needs at least one chain with 4 draws"));
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(&c[..n])).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    let b_over_n = if chains.len() > 1 {
        mean_var(&stats.iter().map(|s| s.0).collect::<Vec<_>>()).1
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if var_plus == 0.0 {
        return Ok(m * nf);
    }
    let autocov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&stats)
            .map(|(c, (mean, _))| {
                (0..n - lag).map(|i| (c[i] - mean) * (c[i + lag] - mean)).sum::<f64>() / nf
            })
            .sum::<f64>()
            / m
    };
    let rho = |lag: usize| 1.0 - (w - autocov(lag)) / var_plus;
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        prev_pair = pair;
        sum += pair;
        lag += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / (m * nf).log10().max(1.0));
    Ok(m * nf / tau)
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
    pub rhat: f64,
    pub ess: f64,
}

impl PosteriorSummary {
    pub const CSV_HEADER: &'static str = "name,mean,sd,q05,q25,q50,q75,q95,rhat,ess";

    pub fn from_chains(name: impl Into<String>, chains: &[&[f64]]) -> Result<Self> {
        let all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
        if all.len() < 4 {
            return Err(Error::invalid("posterior summary needs at least 4 draws"));
        }
        let (mean, var) = mean_var(&all);
        let mut sorted = all;
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            name: name.into(),
            mean,
            sd: var.sqrt(),
            q05: quantile_sorted(&sorted, 0.05),
            q25: quantile_sorted(&sorted, 0.25),
            q50: quantile_sorted(&sorted, 0.5),
            q75: quantile_sorted(&sorted, 0.75),
            q95: quantile_sorted(&sorted, 0.95),
            rhat: split_rhat(chains)?,
            ess: ess(chains)?,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.name, self.mean, self.sd, self.q05, self.q25, self.q50, self.q75, self.q95, self.rhat, self.ess
        )
    }
}

/// Split R-hat of coordinate `j` across chains.
pub fn coordinate_rhat(draws: &[ChainDraws], j: usize) -> Result<f64> {
    let cols: Vec<Vec<f64>> = draws.iter().map(|d| d.column(j)).collect();
    split_rhat(&cols.iter().map(|c| c.as_slice()).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageEntry {
    #[serde(flatten)]
    pub summary: PosteriorSummary,
    /// Posterior mean below `threshold` times the leading component's.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageReport {
    pub threshold: f64,
    pub lambda_k: Vec<ShrinkageEntry>,
    pub lambda_h: Vec<ShrinkageEntry>,
}

impl ShrinkageReport {
    /// Number of components not flagged.
    pub fn effective_k(&self) -> usize {
        self.lambda_k.iter().filter(|e| !e.flagged).count()
    }

    pub fn effective_h(&self) -> usize {
        self.lambda_h.iter().filter(|e| !e.flagged).count()
    }
}

pub const SHRINKAGE_FLAG: f64 = 0.05;

/// Summaries of `lambda = cumprod(exp(log theta))` from per-chain draws of
/// the log increments (`chains[c][draw][s]`).
pub fn lambda_summaries(name: &str, chains: &[Vec<Vec<f64>>], threshold: f64) -> Result<Vec<ShrinkageEntry>> {
    let dim = chains.first().and_then(|c| c.first()).map_or(0, |d| d.len());
    let lambdas: Vec<Vec<Vec<f64>>> = chains.iter().map(|c| c.iter().map(|d| cumulative_exp(d)).collect()).collect();
    let mut out = Vec::with_capacity(dim);
    for s in 0..dim {
        let cols: Vec<Vec<f64>> = lambdas.iter().map(|c| c.iter().map(|d| d[s]).collect()).collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        out.push(PosteriorSummary::from_chains(format!("{name}[{}]", s + 1), &refs)?);
    }
    let lead = out.first().map_or(0.0, |s| s.mean);
    Ok(out
        .into_iter()
        .map(|summary| ShrinkageEntry {
            flagged: summary.mean < threshold * lead,
            summary,
        })
        .collect())
}

/// Shrinkage report of a NEX fit; `theta_k` and `theta_h` locate the log
/// increments in the flat draws.
pub fn shrinkage_report(draws: &[ChainDraws], theta_k: Range<usize>, theta_h: Range<usize>) -> Result<ShrinkageReport> {
    let extract = |r: &Range<usize>| -> Vec<Vec<Vec<f64>>> {
        draws.iter().map(|c| c.rows().map(|row| row[r.clone()].to_vec()).collect()).collect()
    };
    Ok(ShrinkageReport {
        threshold: SHRINKAGE_FLAG,
        lambda_k: lambda_summaries("lambda_K", &extract(&theta_k), SHRINKAGE_FLAG)?,
        lambda_h: lambda_summaries("lambda_H", &extract(&theta_h), SHRINKAGE_FLAG)?,
    })
}

/// Posterior mean of `inv_link(S)` over every draw of every chain.
pub fn posterior_mean_pi<F>(draws: &[ChainDraws], propensity: F) -> Result<Tensor3>
where
    F: Fn(&[f64]) -> Result<Tensor3>,
{
    let mut acc: Option<Tensor3> = None;
    let mut count = 0.0;
    for c in draws {
        for row in c.rows() {
            let pi = propensity(row)?.map(inv_link);
            match &mut acc {
                None => acc = Some(pi),
                Some(a) => {
                    for (x, y) in a.as_mut_slice().iter_mut().zip(pi.as_slice()) {
                        *x += y;
                    }
                }
            }
            count += 1.0;
        }
    }
    let acc = acc.ok_or_else(|| Error::invalid("no draws"))?;
    Ok(acc.map(|x| x / count))
}
