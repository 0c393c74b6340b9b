//! Metrics of a fit against held-out labels and, for synthetic data, the
//! true edge probabilities.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nex_core::dataio::{read_long_csv, read_value_csv};
use nex_core::eval::{auc, heldout_ratio, mean_abs_error, pearson, FoldAssignment};
use nex_core::{DesignData, Tensor3};
use serde::Serialize;

use crate::manifest::{write_output, ManifestWriter};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellMetrics {
    pub n_cells: usize,
    pub n_edges: usize,
    pub auc: Option<f64>,
    pub heldout_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorStats {
    pub n_cells: usize,
    pub correlation: Option<f64>,
    pub mean_abs_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceStats {
    pub t: usize,
    /// Whether the slice has cells outside the fit.
    pub heldout: bool,
    #[serde(flatten)]
    pub stats: ErrorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthMetrics {
    pub in_sample: ErrorStats,
    pub out_of_sample: ErrorStats,
    pub per_slice: Vec<SliceStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    #[serde(flatten)]
    pub metrics: CellMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvMetrics {
    pub folds: Vec<FoldMetrics>,
    pub mean_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub in_sample: Option<CellMetrics>,
    pub out_of_sample: Option<CellMetrics>,
    pub truth: Option<TruthMetrics>,
    pub cv: Option<CvMetrics>,
    pub warnings: Vec<String>,
}

/// Cells that can carry an edge at all: upper triangle for symmetric data,
/// co-occurring pairs when a mask is present.
fn candidate(d: &DesignData, i: usize, j: usize, t: usize) -> bool {
    if d.symmetric && i >= j {
        return false;
    }
    d.cooccurrence.as_ref().is_none_or(|o| o.get(i, j, t) != 0.0)
}

fn cells(d: &DesignData, keep: impl Fn(usize, usize, usize) -> bool) -> Vec<(usize, usize, usize)> {
    let (n, m, t) = d.dims();
    let mut out = Vec::new();
    for tt in 0..t {
        for i in 0..n {
            for j in 0..m {
                if candidate(d, i, j, tt) && keep(i, j, tt) {
                    out.push((i, j, tt));
                }
            }
        }
    }
    out
}

fn cell_metrics(pi: &Tensor3, labels: &Tensor3, cells: &[(usize, usize, usize)], what: &str, warnings: &mut Vec<String>) -> CellMetrics {
    let scores: Vec<f64> = cells.iter().map(|&(i, j, t)| pi.get(i, j, t)).collect();
    let is_edge: Vec<bool> = cells.iter().map(|&(i, j, t)| labels.get(i, j, t) == 1.0).collect();
    let n_edges = is_edge.iter().filter(|e| **e).count();
    let a = auc(&scores, &is_edge);
    let edges: Vec<f64> = scores.iter().zip(&is_edge).filter(|(_, e)| **e).map(|(s, _)| *s).collect();
    let non: Vec<f64> = scores.iter().zip(&is_edge).filter(|(_, e)| !**e).map(|(s, _)| *s).collect();
    let ratio = heldout_ratio(&edges, &non);
    if let Err(e) = &a {
        warnings.push(format!("{what}: degenerate metrics ({n_edges} edges among {} cells): {e}", cells.len()));
    }
    CellMetrics {
        n_cells: cells.len(),
        n_edges,
        auc: a.ok(),
        heldout_ratio: ratio.ok(),
    }
}

fn error_stats(pi: &Tensor3, truth: &Tensor3, cells: &[(usize, usize, usize)]) -> ErrorStats {
    let a: Vec<f64> = cells.iter().map(|&(i, j, t)| pi.get(i, j, t)).collect();
    let b: Vec<f64> = cells.iter().map(|&(i, j, t)| truth.get(i, j, t)).collect();
    ErrorStats {
        n_cells: cells.len(),
        correlation: pearson(&a, &b).ok(),
        mean_abs_error: mean_abs_error(&a, &b).ok(),
    }
}

/// Metrics of the posterior-mean probabilities `pi` of a fit on `training`
/// (whose mask holds exactly the fitted cells). Out-of-sample cells are
/// those observed in `labels` but not fitted.
pub fn evaluate(pi: &Tensor3, training: &DesignData, labels: Option<&DesignData>, truth: Option<&Tensor3>) -> Result<Metrics> {
    let dims = training.dims();
    if pi.dims() != dims {
        bail!("posterior mean has dims {:?}, fitted data {dims:?}", pi.dims());
    }
    let fitted = |i, j, t| training.observed.get(i, j, t) == 1.0;
    let in_cells = cells(training, fitted);
    let mut m = Metrics::default();
    m.in_sample = Some(cell_metrics(pi, &training.adjacency, &in_cells, "in-sample", &mut m.warnings));
    if let Some(l) = labels {
        if l.dims() != dims {
            bail!("label data have dims {:?}, fitted data {dims:?}", l.dims());
        }
        let out_cells = cells(training, |i, j, t| !fitted(i, j, t) && l.observed.get(i, j, t) == 1.0);
        if out_cells.is_empty() {
            m.warnings.push("no held-out cells with labels".into());
        } else {
            m.out_of_sample = Some(cell_metrics(pi, &l.adjacency, &out_cells, "out-of-sample", &mut m.warnings));
        }
    }
    if let Some(truth) = truth {
        if truth.dims() != dims {
            bail!("truth has dims {:?}, fitted data {dims:?}", truth.dims());
        }
        let out_cells = cells(training, |i, j, t| !fitted(i, j, t));
        let per_slice = (0..dims.2)
            .map(|t| {
                let c = cells(training, |_, _, tt| tt == t);
                SliceStats {
                    t: t + 1,
                    heldout: c.iter().any(|&(i, j, tt)| !fitted(i, j, tt)),
                    stats: error_stats(pi, truth, &c),
                }
            })
            .collect();
        m.truth = Some(TruthMetrics {
            in_sample: error_stats(pi, truth, &in_cells),
            out_of_sample: error_stats(pi, truth, &out_cells),
            per_slice,
        });
    }
    Ok(m)
}

/// Per-fold held-out metrics; `fold_pis[f - 1]` is the fit without fold `f`.
pub fn evaluate_cv(fold_pis: &[Tensor3], folds: &FoldAssignment, labels: &DesignData, warnings: &mut Vec<String>) -> Result<CvMetrics> {
    if fold_pis.len() != folds.n_folds {
        bail!("{} fold fits for {} folds", fold_pis.len(), folds.n_folds);
    }
    let mut out = Vec::new();
    for (k, pi) in fold_pis.iter().enumerate() {
        let f = k + 1;
        let c: Vec<_> = folds.cells_in(f).collect();
        out.push(FoldMetrics {
            fold: f,
            metrics: cell_metrics(pi, &labels.adjacency, &c, &format!("fold {f}"), warnings),
        });
    }
    let aucs: Vec<f64> = out.iter().filter_map(|f| f.metrics.auc).collect();
    let mean_auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    Ok(CvMetrics { folds: out, mean_auc })
}

fn read_training(dir: &Path) -> Result<DesignData> {
    let mut d = read_long_csv(&dir.join("fit_data.csv"))?;
    let co = dir.join("cooccurrence.csv");
    if co.exists() {
        d.cooccurrence = Some(read_value_csv(&co)?);
    }
    Ok(d)
}

pub struct EvalInputs {
    pub fit_dir: PathBuf,
    pub labels: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

pub fn run_evaluate(inputs: &EvalInputs, out: &Path) -> Result<Metrics> {
    let dir = &inputs.fit_dir;
    let training = read_training(dir).with_context(|| format!("reading fit directory {}", dir.display()))?;
    let labels = inputs.labels.as_deref().map(read_long_csv).transpose()?;
    let truth = inputs.truth.as_deref().map(read_value_csv).transpose()?;

    let folds_path = dir.join("folds.json");
    let mut paths: Vec<PathBuf> = Vec::new();
    let metrics = if folds_path.exists() {
        let folds: FoldAssignment = serde_json::from_str(&fs::read_to_string(&folds_path)?)?;
        let mut pis = Vec::new();
        for f in 1..=folds.n_folds {
            let p = dir.join(format!("fold_{f}")).join("pi_mean.csv");
            pis.push(read_value_csv(&p)?);
            paths.push(p);
        }
        let mut m = Metrics::default();
        let lab = labels.as_ref().unwrap_or(&training);
        m.cv = Some(evaluate_cv(&pis, &folds, lab, &mut m.warnings)?);
        m
    } else {
        let p = dir.join("pi_mean.csv");
        let pi = read_value_csv(&p)?;
        paths.push(p);
        evaluate(&pi, &training, labels.as_ref(), truth.as_ref())?
    };
    for w in &metrics.warnings {
        eprintln!("warning: {w}");
    }

    paths.push(dir.join("fit_data.csv"));
    paths.extend(inputs.labels.iter().cloned());
    paths.extend(inputs.truth.iter().cloned());
    let refs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
    let out_dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    let mut m = ManifestWriter::start(out_dir.join(format!("{stem}.manifest.json")), "evaluate", 0, String::new(), &refs)?;
    let name = out.file_name().and_then(|s| s.to_str()).context("output path needs a file name")?;
    write_output(&mut m, out_dir, name, &(serde_json::to_string_pretty(&metrics)? + "\n"))?;
    m.finish("ok")?;
    Ok(metrics)
}
