//! Fitting: design preparation, sampling, posterior summaries and output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nex_core::dataio::{
    cooccurrence, format_long_csv, format_value_csv, insect_occurrence, read_covariates_csv, read_long_csv,
    read_occurrence_csv, ModelKind, OccurrenceMatrix, RunConfig, Scenario,
};
use nex_core::eval::{coordinate_rhat, make_cv_folds, posterior_mean_pi, ess, split_rhat, PosteriorSummary, ShrinkageReport};
use nex_core::sampler::{run_chains, ChainDraws};
use nex_core::{DesignData, Tensor3};
use serde::Serialize;

use crate::manifest::{write_output, ManifestWriter};
use crate::model::FitModel;

pub struct FitOutput {
    pub model: FitModel,
    pub draws: Vec<ChainDraws>,
    pub pi_mean: Tensor3,
}

/// Samples the model named in `cfg.model` on `d` with `cfg.sampler`.
pub fn fit_design(d: DesignData, cfg: &RunConfig) -> Result<FitOutput> {
    let model = FitModel::build(&cfg.model, d)?;
    let draws = run_chains(&model, &cfg.sampler, |rng| model.initial_point(rng))?;
    let pi_mean = posterior_mean_pi(&draws, |v| model.propensity(v))?;
    Ok(FitOutput { model, draws, pi_mean })
}

pub struct FitInputs {
    pub data: PathBuf,
    pub plants: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
}

impl FitInputs {
    pub fn paths(&self) -> Vec<&Path> {
        let mut v = vec![self.data.as_path()];
        v.extend(self.plants.as_deref());
        v.extend(self.covariates.as_deref());
        v
    }
}

/// Reads the network, applies held-out slices and, for the conditional
/// model, attaches the covariate and the co-occurrence mask.
pub fn prepare_design(inputs: &FitInputs, cfg: &RunConfig) -> Result<DesignData> {
    let mut d = read_long_csv(&inputs.data)?;
    d.hold_out_slices(&cfg.evaluate.holdout_slices)?;
    let (n, _, t) = d.dims();
    if cfg.model.kind == ModelKind::NexConditional {
        let cov = inputs
            .covariates
            .as_ref()
            .context("the conditional model needs --covariates (t,temperature)")?;
        d.covariate = Some(read_covariates_csv(cov)?);
        let plants = match &inputs.plants {
            Some(p) => read_occurrence_csv(p, n, t)?,
            None => {
                eprintln!("note: no plant occurrence file, treating every plant as present");
                let mut o = OccurrenceMatrix::new(n, t, Scenario::Raw);
                for i in 0..n {
                    for tt in 0..t {
                        o.set(i, tt, true);
                    }
                }
                o
            }
        };
        let insects = insect_occurrence(&d, cfg.evaluate.occurrence_scenario);
        d.cooccurrence = Some(cooccurrence(&plants, &insects)?);
    } else if inputs.plants.is_some() || inputs.covariates.is_some() {
        eprintln!("note: occurrence and covariate files are only used by nex-conditional");
    }
    d.validate()?;
    Ok(d)
}

/// The design with its mask replaced by the cells that entered the likelihood.
pub fn training_cells(d: &DesignData) -> DesignData {
    let mut out = d.clone();
    let (n, m, t) = d.dims();
    for tt in 0..t {
        for j in 0..m {
            for i in 0..n {
                out.observed.set(i, j, tt, d.is_active(i, j, tt) as u8 as f64);
            }
        }
    }
    out
}

#[derive(Debug, Serialize)]
pub struct ChainDiagnostics {
    pub chain: usize,
    pub step_size: f64,
    pub mean_accept: f64,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub mean_leapfrog: f64,
}

#[derive(Debug, Serialize)]
pub struct Diagnostics {
    pub model: String,
    pub chains: Vec<ChainDiagnostics>,
    pub draws_per_chain: usize,
    pub dim: usize,
    /// Split R-hat of the log posterior density.
    pub log_density_rhat: Option<f64>,
    pub log_density_ess: Option<f64>,
    /// Largest split R-hat over intercepts and weight increments, which are
    /// identified (factor loadings are not: signs and order can swap).
    pub max_rhat_identified: Option<f64>,
    pub max_rhat_all: Option<f64>,
    pub total_divergences: usize,
}

fn finite_max(v: impl Iterator<Item = f64>) -> Option<f64> {
    v.filter(|x| x.is_finite()).fold(None, |a, x| Some(a.map_or(x, |a: f64| a.max(x))))
}

pub fn diagnostics(fit: &FitOutput, kind: ModelKind) -> Diagnostics {
    let draws = &fit.draws;
    let names = fit.model.coordinate_names();
    let lps: Vec<&[f64]> = draws.iter().map(|c| c.log_density.as_slice()).collect();
    let rhats: Vec<f64> = (0..names.len()).map(|j| coordinate_rhat(draws, j).unwrap_or(f64::NAN)).collect();
    let identified = names
        .iter()
        .zip(&rhats)
        .filter(|(n, _)| n.starts_with("mu[") || n.starts_with("log_theta") || n.starts_with("log_vartheta"))
        .map(|(_, r)| *r);
    Diagnostics {
        model: kind.to_string(),
        chains: draws
            .iter()
            .enumerate()
            .map(|(c, d)| ChainDiagnostics {
                chain: c + 1,
                step_size: d.step_size,
                mean_accept: d.mean_accept(),
                divergences: d.n_divergent(),
                warmup_divergences: d.warmup_divergences,
                mean_leapfrog: d.n_leapfrog.iter().sum::<usize>() as f64 / d.n_draws().max(1) as f64,
            })
            .collect(),
        draws_per_chain: draws.first().map_or(0, |d| d.n_draws()),
        dim: names.len(),
        log_density_rhat: split_rhat(&lps).ok(),
        log_density_ess: ess(&lps).ok(),
        max_rhat_identified: finite_max(identified),
        max_rhat_all: finite_max(rhats.iter().copied()),
        total_divergences: draws.iter().map(|d| d.n_divergent()).sum(),
    }
}

pub fn draws_csv(names: &[String], c: &ChainDraws) -> String {
    let mut s = names.join(",");
    s.push('\n');
    for row in c.rows() {
        let mut first = true;
        for v in row {
            if !first {
                s.push(',');
            }
            first = false;
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    s
}

pub fn summary_csv(names: &[String], draws: &[ChainDraws]) -> Result<String> {
    let mut s = String::from(PosteriorSummary::CSV_HEADER);
    s.push('\n');
    for (j, name) in names.iter().enumerate() {
        let cols: Vec<Vec<f64>> = draws.iter().map(|d| d.column(j)).collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        s.push_str(&PosteriorSummary::from_chains(name.clone(), &refs)?.csv_row());
        s.push('\n');
    }
    Ok(s)
}

/// Writes every fit artefact into `dir` and records them in `m`.
pub fn write_fit_outputs(dir: &Path, fit: &FitOutput, cfg: &RunConfig, m: &mut ManifestWriter) -> Result<Option<ShrinkageReport>> {
    fs::create_dir_all(dir)?;
    let names = fit.model.coordinate_names();
    let data = fit.model.data();
    write_output(m, dir, "fit_data.csv", &format_long_csv(&training_cells(data)))?;
    if let Some(o) = &data.cooccurrence {
        write_output(m, dir, "cooccurrence.csv", &format_value_csv(o, "value"))?;
    }
    for (c, d) in fit.draws.iter().enumerate() {
        write_output(m, dir, &format!("draws_chain{}.csv", c + 1), &draws_csv(&names, d))?;
    }
    write_output(m, dir, "pi_mean.csv", &format_value_csv(&fit.pi_mean, "pi"))?;
    write_output(m, dir, "summary.csv", &summary_csv(&names, &fit.draws)?)?;
    let diag = diagnostics(fit, cfg.model.kind);
    if diag.total_divergences > 0 {
        eprintln!("warning: {} divergent transitions after warmup", diag.total_divergences);
    }
    write_output(m, dir, "diagnostics.json", &(serde_json::to_string_pretty(&diag)? + "\n"))?;
    let shrink = match fit.model.shrinkage(&fit.draws) {
        Some(r) => {
            let r = r?;
            write_output(m, dir, "shrinkage.json", &(serde_json::to_string_pretty(&r)? + "\n"))?;
            Some(r)
        }
        None => None,
    };
    Ok(shrink)
}

pub fn run_fit(out: &Path, inputs: &FitInputs, cfg: &RunConfig) -> Result<()> {
    let d = prepare_design(inputs, cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut m = ManifestWriter::start(out.join("manifest.json"), "fit", cfg.sampler.seed, cfg.echo()?, &inputs.paths())?;
    write_output(&mut m, out, "config.toml", &cfg.echo()?)?;
    match cfg.evaluate.cv_folds {
        None => {
            eprintln!("fitting {} ({} chains, {} + {} iterations)", cfg.model.kind, cfg.sampler.chains, cfg.sampler.warmup, cfg.sampler.samples);
            let fit = fit_design(d, cfg)?;
            report_shrinkage(write_fit_outputs(out, &fit, cfg, &mut m)?);
        }
        Some(n_folds) => {
            write_output(&mut m, out, "fit_data.csv", &format_long_csv(&training_cells(&d)))?;
            let folds = make_cv_folds(&d, n_folds, cfg.sampler.seed)?;
            write_output(&mut m, out, "folds.json", &(serde_json::to_string(&folds)? + "\n"))?;
            for f in 1..=n_folds {
                eprintln!("fold {f}/{n_folds}: fitting {}", cfg.model.kind);
                let fit = fit_design(folds.training_data(&d, f)?, cfg)?;
                write_fit_outputs(&out.join(format!("fold_{f}")), &fit, cfg, &mut m)?;
            }
        }
    }
    m.finish("ok")
}

fn report_shrinkage(r: Option<ShrinkageReport>) {
    if let Some(r) = r {
        eprintln!("effective K = {}, effective H = {} (components above 5% of the first)", r.effective_k(), r.effective_h());
    }
}
