//! File formats, occurrence construction, temperature covariates and run
//! configuration.
//!
//! The network file is a long CSV with header `i,j,t,value[,observed]`
//! (1-based indices). Metadata sits in leading comment lines:
//!
//! ```text
//! # dims: 20,25,40
//! # symmetric: true
//! # week: 1,2,3,...
//! # year: 1996,1996,...
//! ```
//!
//! Cells without a row are unobserved.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{AdjacencyData, DesignData, TimeIndex};
use crate::error::{Error, Result};
use crate::kernels::abs_distance;
use crate::sampler::HmcConfig;
use crate::simulate::SimSpec;
use crate::tensor3::Tensor3;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

#[derive(Debug, Default)]
struct Meta {
    dims: Option<(usize, usize, usize)>,
    symmetric: bool,
    week: Option<Vec<f64>>,
    year: Option<Vec<f64>>,
}

fn parse_list<T: FromStr>(s: &str, path: &Path, line: usize) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| parse_err(path, line, format!("bad list entry {v:?}"))))
        .collect()
}

fn parse_meta(text: &str, path: &Path) -> Result<Meta> {
    let mut meta = Meta::default();
    for (k, line) in text.lines().enumerate() {
        let Some(rest) = line.strip_prefix('#') else { continue };
        let Some((key, value)) = rest.split_once(':') else { continue };
        let lineno = k + 1;
        match key.trim() {
            "dims" => {
                let v: Vec<usize> = parse_list(value, path, lineno)?;
                if v.len() != 3 {
                    return Err(parse_err(path, lineno, "dims needs three entries N,M,T"));
                }
                meta.dims = Some((v[0], v[1], v[2]));
            }
            "symmetric" => {
                meta.symmetric = value
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "symmetric must be true or false"))?
            }
            "week" => meta.week = Some(parse_list(value, path, lineno)?),
            "year" => meta.year = Some(parse_list(value, path, lineno)?),
            _ => {}
        }
    }
    Ok(meta)
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(path, line, e.to_string())
}

fn check_header(path: &Path, got: &csv::StringRecord, allowed: &[&[&str]]) -> Result<usize> {
    let names: Vec<&str> = got.iter().collect();
    allowed
        .iter()
        .position(|a| *a == names.as_slice())
        .ok_or_else(|| parse_err(path, 1, format!("unexpected header {names:?}, expected one of {allowed:?}")))
}

fn field<T: FromStr>(rec: &csv::StringRecord, k: usize, name: &str, path: &Path, line: usize) -> Result<T> {
    let raw = rec.get(k).unwrap_or("");
    raw.parse().map_err(|_| parse_err(path, line, format!("cannot parse {name} {raw:?}")))
}

fn binary(v: u8, name: &str, path: &Path, line: usize) -> Result<f64> {
    match v {
        0 | 1 => Ok(v as f64),
        _ => Err(parse_err(path, line, format!("{name} must be 0 or 1, got {v}"))),
    }
}

/// Parses network text; `path` is only used in error messages.
pub fn parse_long_csv(text: &str, path: &Path) -> Result<AdjacencyData> {
    let meta = parse_meta(text, path)?;
    let mut rdr = csv_reader(text);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let with_mask = check_header(path, &header, &[&["i", "j", "t", "value"], &["i", "j", "t", "value", "observed"]])? == 1;

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let i: usize = field(&rec, 0, "i", path, line)?;
        let j: usize = field(&rec, 1, "j", path, line)?;
        let t: usize = field(&rec, 2, "t", path, line)?;
        if i == 0 || j == 0 || t == 0 {
            return Err(parse_err(path, line, "indices are 1-based"));
        }
        let value = binary(field(&rec, 3, "value", path, line)?, "value", path, line)?;
        let observed = if with_mask {
            binary(field(&rec, 4, "observed", path, line)?, "observed", path, line)?
        } else {
            1.0
        };
        rows.push((line, i - 1, j - 1, t - 1, value, observed));
    }

    let dims = match meta.dims {
        Some(d) => d,
        None => rows.iter().fold((0, 0, 0), |(a, b, c), r| (a.max(r.1 + 1), b.max(r.2 + 1), c.max(r.3 + 1))),
    };
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(parse_err(path, 1, "empty network and no dims declared"));
    }
    let mut adjacency = Tensor3::zeros(dims.0, dims.1, dims.2);
    let mut observed = Tensor3::zeros(dims.0, dims.1, dims.2);
    let mut seen: Vec<usize> = vec![0; dims.0 * dims.1 * dims.2];
    for (line, i, j, t, value, obs) in rows {
        if i >= dims.0 || j >= dims.1 || t >= dims.2 {
            return Err(parse_err(
                path,
                line,
                format!("cell ({},{},{}) outside declared dims {dims:?}", i + 1, j + 1, t + 1),
            ));
        }
        let o = adjacency.offset(i, j, t);
        if seen[o] != 0 {
            return Err(parse_err(
                path,
                line,
                format!("duplicate cell ({},{},{}), first given on line {}", i + 1, j + 1, t + 1, seen[o]),
            ));
        }
        seen[o] = line;
        adjacency.set(i, j, t, value);
        observed.set(i, j, t, obs);
    }
    let mut d = DesignData::new(adjacency, observed)?;
    d.symmetric = meta.symmetric;
    if meta.week.is_some() != meta.year.is_some() {
        return Err(parse_err(path, 1, "week and year lines must be given together"));
    }
    if let (Some(week), Some(year)) = (meta.week, meta.year) {
        d.time = Some(TimeIndex { week, year });
    }
    d.validate()?;
    Ok(d)
}

pub fn read_long_csv(path: &Path) -> Result<AdjacencyData> {
    parse_long_csv(&fs::read_to_string(path)?, path)
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Every cell in canonical order (t, i, j) with its observation flag.
pub fn format_long_csv(d: &AdjacencyData) -> String {
    let (n, m, t) = d.dims();
    let mut s = format!("# dims: {n},{m},{t}\n");
    if d.symmetric {
        s.push_str("# symmetric: true\n");
    }
    if let Some(ti) = &d.time {
        let _ = writeln!(s, "# week: {}", join(&ti.week));
        let _ = writeln!(s, "# year: {}", join(&ti.year));
    }
    s.push_str("i,j,t,value,observed\n");
    for tt in 0..t {
        for i in 0..n {
            for j in 0..m {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    i + 1,
                    j + 1,
                    tt + 1,
                    d.adjacency.get(i, j, tt) as u8,
                    d.observed.get(i, j, tt) as u8
                );
            }
        }
    }
    s
}

pub fn write_long_csv(d: &AdjacencyData, path: &Path) -> Result<()> {
    Ok(fs::write(path, format_long_csv(d))?)
}

/// Real-valued tensor (probabilities, log-odds) in long format with header
/// `i,j,t,<column>`, canonical order (t, i, j).
pub fn format_value_csv(x: &Tensor3, column: &str) -> String {
    let (n, m, t) = x.dims();
    let mut s = format!("# dims: {n},{m},{t}\ni,j,t,{column}\n");
    for tt in 0..t {
        for i in 0..n {
            for j in 0..m {
                let _ = writeln!(s, "{},{},{},{}", i + 1, j + 1, tt + 1, x.get(i, j, tt));
            }
        }
    }
    s
}

pub fn parse_value_csv(text: &str, path: &Path) -> Result<Tensor3> {
    let meta = parse_meta(text, path)?;
    let (n, m, t) = meta.dims.ok_or_else(|| parse_err(path, 1, "missing '# dims:' line"))?;
    let mut rdr = csv_reader(text);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() != 4 || &header[0] != "i" || &header[1] != "j" || &header[2] != "t" {
        return Err(parse_err(path, 1, "expected header i,j,t,<value>"));
    }
    let mut out = Tensor3::zeros(n, m, t);
    let mut seen = vec![false; n * m * t];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let i: usize = field(&rec, 0, "i", path, line)?;
        let j: usize = field(&rec, 1, "j", path, line)?;
        let tt: usize = field(&rec, 2, "t", path, line)?;
        if i == 0 || j == 0 || tt == 0 || i > n || j > m || tt > t {
            return Err(parse_err(path, line, format!("cell ({i},{j},{tt}) outside dims")));
        }
        let o = out.offset(i - 1, j - 1, tt - 1);
        if std::mem::replace(&mut seen[o], true) {
            return Err(parse_err(path, line, format!("duplicate cell ({i},{j},{tt})")));
        }
        out.as_mut_slice()[o] = field(&rec, 3, "value", path, line)?;
    }
    if let Some(o) = seen.iter().position(|s| !s) {
        let (i, j, tt) = out.coords(o);
        return Err(parse_err(path, 0, format!("cell ({},{},{}) missing", i + 1, j + 1, tt + 1)));
    }
    Ok(out)
}

pub fn read_value_csv(path: &Path) -> Result<Tensor3> {
    parse_value_csv(&fs::read_to_string(path)?, path)
}

/// How insect presence is inferred from interaction records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Present when seen in some interaction that week.
    #[default]
    Raw,
    /// Present when seen that week or an adjacent one.
    Padded1,
    /// Raw, plus weeks whose two neighbours are both present.
    Padded2,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Scenario::Raw),
            "padded1" => Ok(Scenario::Padded1),
            "padded2" => Ok(Scenario::Padded2),
            _ => Err(Error::invalid(format!("unknown occurrence scenario {s:?} (raw, padded1, padded2)"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Raw => "raw",
            Scenario::Padded1 => "padded1",
            Scenario::Padded2 => "padded2",
        })
    }
}

/// Binary taxa x time presence matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccurrenceMatrix {
    pub scenario: Scenario,
    pub n_taxa: usize,
    pub n_t: usize,
    values: Vec<bool>,
}

impl OccurrenceMatrix {
    pub fn new(n_taxa: usize, n_t: usize, scenario: Scenario) -> Self {
        Self {
            scenario,
            n_taxa,
            n_t,
            values: vec![false; n_taxa * n_t],
        }
    }

    pub fn get(&self, taxon: usize, t: usize) -> bool {
        self.values[taxon * self.n_t + t]
    }

    pub fn set(&mut self, taxon: usize, t: usize, v: bool) {
        self.values[taxon * self.n_t + t] = v;
    }

    /// Slices (0-based) where `taxon` is present.
    pub fn present(&self, taxon: usize) -> Vec<usize> {
        (0..self.n_t).filter(|t| self.get(taxon, *t)).collect()
    }

    /// Entrywise `self <= other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.values.len() == other.values.len() && self.values.iter().zip(&other.values).all(|(a, b)| !a || *b)
    }
}

/// Whether slices `t` and `t + 1` are adjacent weeks of one season.
fn same_season(time: Option<&TimeIndex>, t: usize) -> bool {
    time.is_none_or(|ti| ti.year[t] == ti.year[t + 1])
}

/// Applies a padding rule to raw presence; neighbours are the adjacent
/// slices within the same year.
pub fn pad_occurrence(raw: &OccurrenceMatrix, scenario: Scenario, time: Option<&TimeIndex>) -> OccurrenceMatrix {
    let mut out = raw.clone();
    out.scenario = scenario;
    let n_t = raw.n_t;
    for k in 0..raw.n_taxa {
        for t in 0..n_t {
            let prev = t > 0 && same_season(time, t - 1) && raw.get(k, t - 1);
            let next = t + 1 < n_t && same_season(time, t) && raw.get(k, t + 1);
            let v = raw.get(k, t)
                || match scenario {
                    Scenario::Raw => false,
                    Scenario::Padded1 => prev || next,
                    Scenario::Padded2 => prev && next,
                };
            out.set(k, t, v);
        }
    }
    out
}

/// Insect (column) presence inferred from observed interactions.
pub fn insect_occurrence(d: &AdjacencyData, scenario: Scenario) -> OccurrenceMatrix {
    let (n, m, t) = d.dims();
    let mut raw = OccurrenceMatrix::new(m, t, Scenario::Raw);
    for tt in 0..t {
        for j in 0..m {
            let seen = (0..n).any(|i| d.adjacency.get(i, j, tt) == 1.0 && d.observed.get(i, j, tt) == 1.0);
            raw.set(j, tt, seen);
        }
    }
    pad_occurrence(&raw, scenario, d.time.as_ref())
}

/// `O_ijt = plant(i, t) and insect(j, t)`.
pub fn cooccurrence(plants: &OccurrenceMatrix, insects: &OccurrenceMatrix) -> Result<Tensor3> {
    if plants.n_t != insects.n_t {
        return Err(Error::dim(format!("plant occurrence has {} slices, insect {}", plants.n_t, insects.n_t)));
    }
    Ok(Tensor3::from_fn((plants.n_taxa, insects.n_taxa, plants.n_t), |i, j, t| {
        (plants.get(i, t) && insects.get(j, t)) as u8 as f64
    }))
}

/// Occurrence file with header `taxon,t,value`; absent rows are absences.
pub fn parse_occurrence_csv(text: &str, path: &Path, n_taxa: usize, n_t: usize) -> Result<OccurrenceMatrix> {
    let mut rdr = csv_reader(text);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    check_header(path, &header, &[&["taxon", "t", "value"]])?;
    let mut out = OccurrenceMatrix::new(n_taxa, n_t, Scenario::Raw);
    let mut seen = vec![false; n_taxa * n_t];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let k: usize = field(&rec, 0, "taxon", path, line)?;
        let t: usize = field(&rec, 1, "t", path, line)?;
        if k == 0 || t == 0 || k > n_taxa || t > n_t {
            return Err(parse_err(path, line, format!("entry ({k},{t}) outside {n_taxa} taxa x {n_t} slices")));
        }
        if std::mem::replace(&mut seen[(k - 1) * n_t + t - 1], true) {
            return Err(parse_err(path, line, format!("duplicate entry ({k},{t})")));
        }
        let v = binary(field(&rec, 2, "value", path, line)?, "value", path, line)?;
        out.set(k - 1, t - 1, v == 1.0);
    }
    Ok(out)
}

pub fn read_occurrence_csv(path: &Path, n_taxa: usize, n_t: usize) -> Result<OccurrenceMatrix> {
    parse_occurrence_csv(&fs::read_to_string(path)?, path, n_taxa, n_t)
}

pub fn format_occurrence_csv(o: &OccurrenceMatrix) -> String {
    let mut s = String::from("taxon,t,value\n");
    for k in 0..o.n_taxa {
        for t in 0..o.n_t {
            let _ = writeln!(s, "{},{},{}", k + 1, t + 1, o.get(k, t) as u8);
        }
    }
    s
}

/// Covariate file with header `t,temperature`, one row per slice.
pub fn parse_covariates_csv(text: &str, path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv_reader(text);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    check_header(path, &header, &[&["t", "temperature"]])?;
    let mut rows: Vec<(usize, f64, usize)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let t: usize = field(&rec, 0, "t", path, line)?;
        let v: f64 = field(&rec, 1, "temperature", path, line)?;
        if !v.is_finite() {
            return Err(parse_err(path, line, "temperature must be finite"));
        }
        rows.push((t, v, line));
    }
    rows.sort_by_key(|r| r.0);
    for (k, (t, _, line)) in rows.iter().enumerate() {
        if *t != k + 1 {
            return Err(parse_err(path, *line, format!("slices must be 1..={} each once, found t = {t}", rows.len())));
        }
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

pub fn read_covariates_csv(path: &Path) -> Result<Vec<f64>> {
    parse_covariates_csv(&fs::read_to_string(path)?, path)
}

/// Growth degree days of one day: `max(0, (t_max + t_min) / 2 - t_base)`.
pub fn gdd(t_max: f64, t_min: f64, t_base: f64) -> f64 {
    ((t_max + t_min) / 2.0 - t_base).max(0.0)
}

pub fn cumulative_gdd(series: &[f64]) -> Vec<f64> {
    series
        .iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Running sums restarted whenever `season` changes.
pub fn cumulative_gdd_by_season(series: &[f64], season: &[f64]) -> Result<Vec<f64>> {
    if series.len() != season.len() {
        return Err(Error::dim("one season label per value"));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for (k, x) in series.iter().enumerate() {
        if k > 0 && season[k] != season[k - 1] {
            acc = 0.0;
        }
        acc += x;
        out.push(acc);
    }
    Ok(out)
}

/// `D1(t, t') = |w_t - w_t'|`.
pub fn week_distance(ti: &TimeIndex) -> DMatrix<f64> {
    abs_distance(&ti.week)
}

/// `D2(t, t') = |r_t - r_t'|`.
pub fn year_distance(ti: &TimeIndex) -> DMatrix<f64> {
    abs_distance(&ti.year)
}

/// Model selected by `--model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Nex,
    NexSymmetric,
    NexConditional,
    Dlf,
}

impl ModelKind {
    pub fn is_nex(self) -> bool {
        self != ModelKind::Dlf
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nex" => Ok(ModelKind::Nex),
            "nex-symmetric" => Ok(ModelKind::NexSymmetric),
            "nex-conditional" => Ok(ModelKind::NexConditional),
            "dlf" => Ok(ModelKind::Dlf),
            _ => Err(Error::invalid(format!(
                "unknown model {s:?} (nex, nex-symmetric, nex-conditional, dlf)"
            ))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Nex => "nex",
            ModelKind::NexSymmetric => "nex-symmetric",
            ModelKind::NexConditional => "nex-conditional",
            ModelKind::Dlf => "dlf",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Latent dimension; `None` means 10 for NEX and 5 for DLF.
    pub h: Option<usize>,
    /// Exemplar dimension (NEX only).
    pub k: usize,
    pub length_scale: f64,
    /// Guess of the exemplar rank setting the factor prior variance.
    pub k_star: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Nex,
            h: None,
            k: 10,
            length_scale: crate::nexmodel::DEFAULT_LENGTH_SCALE,
            k_star: crate::nexmodel::DEFAULT_K_STAR,
        }
    }
}

impl ModelSection {
    pub fn h(&self) -> usize {
        self.h.unwrap_or(if self.kind.is_nex() { 10 } else { crate::dlfmodel::DEFAULT_DLF_H })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// 1-based slices held out of the fit; empty keeps the data's own mask.
    pub holdout_slices: Vec<usize>,
    /// Number of cross-validation folds; `None` disables cross-validation.
    pub cv_folds: Option<usize>,
    pub occurrence_scenario: Scenario,
}

/// Everything a run needs; each section falls back to its defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub simulate: SimSpec,
    pub sampler: HmcConfig,
    pub evaluate: EvalSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.kind.is_nex() && m.h() > m.k {
            return Err(Error::Config(format!(
                "model.h = {} exceeds model.k = {}: the latent dimension may not exceed the exemplar dimension (H <= K)",
                m.h(),
                m.k
            )));
        }
        if m.h() == 0 || m.k == 0 {
            return Err(Error::Config("model.h and model.k must be positive".into()));
        }
        if !(m.length_scale > 0.0) || !(m.k_star > 0.0) {
            return Err(Error::Config("model.length_scale and model.k_star must be positive".into()));
        }
        if let Some(f) = self.evaluate.cv_folds {
            if f < 2 {
                return Err(Error::Config(format!("evaluate.cv_folds must be at least 2, got {f}")));
            }
        }
        self.simulate.validate().map_err(|e| Error::Config(format!("simulate: {e}")))?;
        self.sampler.validate().map_err(|e| Error::Config(format!("sampler: {e}")))?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fully resolved configuration as TOML.
    pub fn echo(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    RunConfig::parse(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Placeholder path used when parsing in-memory text.
pub fn memory_path() -> PathBuf {
    PathBuf::from("<memory>")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> PathBuf {
        memory_path()
    }

    #[test]
    fn single_row_file() {
        let d = parse_long_csv("# dims: 2,2,2\ni,j,t,value\n1,1,1,1\n", &p()).unwrap();
        assert_eq!(d.dims(), (2, 2, 2));
        assert_eq!(d.observed.as_slice().iter().sum::<f64>(), 1.0);
        assert_eq!(d.observed.get(0, 0, 0), 1.0);
        assert_eq!(d.adjacency.get(0, 0, 0), 1.0);
    }

    #[test]
    fn duplicate_names_line() {
        let text = "# dims: 2,2,2\ni,j,t,value\n1,1,1,1\n2,1,1,0\n1,1,1,0\n";
        let e = parse_long_csv(text, &p()).unwrap_err().to_string();
        assert!(e.contains(":5:") && e.contains("duplicate") && e.contains("line 3"), "{e}");
    }

    #[test]
    fn malformed_rows() {
        let bad_value = "i,j,t,value\n1,1,1,2\n";
        assert!(parse_long_csv(bad_value, &p()).unwrap_err().to_string().contains("0 or 1"));
        let ragged = "i,j,t,value\n1,1,1\n";
        assert!(matches!(parse_long_csv(ragged, &p()), Err(Error::Parse { .. })));
        let outside = "# dims: 1,1,1\ni,j,t,value\n2,1,1,1\n";
        assert!(parse_long_csv(outside, &p()).is_err());
        assert!(parse_long_csv("a,b\n", &p()).is_err());
        assert!(parse_long_csv("i,j,t,value\n0,1,1,1\n", &p()).is_err());
    }

    #[test]
    fn infers_dims_without_header_comment() {
        let d = parse_long_csv("i,j,t,value\n3,1,2,1\n", &p()).unwrap();
        assert_eq!(d.dims(), (3, 1, 2));
    }

    fn arb_design() -> impl Strategy<Value = DesignData> {
        (1usize..4, 1usize..4, 1usize..4, any::<bool>()).prop_flat_map(|(n, m, t, timed)| {
            let len = n * m * t;
            (
                prop::collection::vec(any::<bool>(), len),
                prop::collection::vec(any::<bool>(), len),
                Just((n, m, t, timed)),
            )
                .prop_map(|(a, o, (n, m, t, timed))| {
                    let adj = Tensor3::from_vec((n, m, t), a.iter().map(|b| *b as u8 as f64).collect()).unwrap();
                    let obs = Tensor3::from_vec((n, m, t), o.iter().map(|b| *b as u8 as f64).collect()).unwrap();
                    let mut d = DesignData::new(adj, obs).unwrap();
                    if timed {
                        d.time = Some(TimeIndex {
                            week: (0..t).map(|k| (k % 2 + 20) as f64).collect(),
                            year: (0..t).map(|k| (1996 + k / 2) as f64).collect(),
                        });
                    }
                    d
                })
        })
    }

    proptest! {
        #[test]
        fn long_csv_round_trip(d in arb_design()) {
            let text = format_long_csv(&d);
            let back = parse_long_csv(&text, &p()).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(format_long_csv(&back), text);
        }

        #[test]
        fn value_csv_round_trip(v in prop::collection::vec(-1e6f64..1e6, 12)) {
            let x = Tensor3::from_vec((2, 3, 2), v).unwrap();
            let back = parse_value_csv(&format_value_csv(&x, "pi"), &p()).unwrap();
            prop_assert_eq!(back, x);
        }

        #[test]
        fn padding_subsets(bits in prop::collection::vec(any::<bool>(), 1..40), split in 0usize..40) {
            let n_t = bits.len();
            let mut raw = OccurrenceMatrix::new(1, n_t, Scenario::Raw);
            for (t, b) in bits.iter().enumerate() {
                raw.set(0, t, *b);
            }
            let ti = TimeIndex {
                week: (0..n_t).map(|t| t as f64).collect(),
                year: (0..n_t).map(|t| if t < split { 1.0 } else { 2.0 }).collect(),
            };
            for time in [None, Some(&ti)] {
                let p1 = pad_occurrence(&raw, Scenario::Padded1, time);
                let p2 = pad_occurrence(&raw, Scenario::Padded2, time);
                prop_assert!(raw.is_subset_of(&p1));
                prop_assert!(raw.is_subset_of(&p2));
                prop_assert!(p2.is_subset_of(&p1));
                prop_assert_eq!(&pad_occurrence(&raw, Scenario::Raw, time), &raw);
            }
        }

        #[test]
        fn gdd_nonnegative(a in -50f64..50.0, b in -50f64..50.0, base in -10f64..10.0) {
            prop_assert!(gdd(a, b, base) >= 0.0);
        }
    }

    #[test]
    fn occurrence_example() {
        let mut raw = OccurrenceMatrix::new(2, 6, Scenario::Raw);
        raw.set(0, 1, true);
        raw.set(0, 3, true);
        let weeks = |o: &OccurrenceMatrix| o.present(0).iter().map(|t| t + 1).collect::<Vec<_>>();
        assert_eq!(weeks(&pad_occurrence(&raw, Scenario::Raw, None)), [2, 4]);
        assert_eq!(weeks(&pad_occurrence(&raw, Scenario::Padded1, None)), [1, 2, 3, 4, 5]);
        assert_eq!(weeks(&pad_occurrence(&raw, Scenario::Padded2, None)), [2, 3, 4]);
        for s in [Scenario::Raw, Scenario::Padded1, Scenario::Padded2] {
            assert!(pad_occurrence(&raw, s, None).present(1).is_empty());
        }
    }

    #[test]
    fn padding_stops_at_year_boundary() {
        let mut raw = OccurrenceMatrix::new(1, 4, Scenario::Raw);
        raw.set(0, 1, true);
        raw.set(0, 3, true);
        let ti = TimeIndex {
            week: vec![1.0, 2.0, 1.0, 2.0],
            year: vec![1.0, 1.0, 2.0, 2.0],
        };
        assert_eq!(pad_occurrence(&raw, Scenario::Padded1, Some(&ti)).present(0), [0, 1, 2, 3]);
        assert_eq!(pad_occurrence(&raw, Scenario::Padded2, Some(&ti)).present(0), [1, 3]);
        let single = {
            let mut r = OccurrenceMatrix::new(1, 4, Scenario::Raw);
            r.set(0, 1, true);
            r
        };
        assert_eq!(pad_occurrence(&single, Scenario::Padded1, Some(&ti)).present(0), [0, 1]);
    }

    #[test]
    fn insects_from_interactions_and_cooccurrence() {
        let mut a = Tensor3::zeros(2, 3, 6);
        a.set(1, 0, 1, 1.0);
        a.set(0, 0, 3, 1.0);
        let d = DesignData::fully_observed(a).unwrap();
        let ins = insect_occurrence(&d, Scenario::Padded2);
        assert_eq!(ins.present(0), [1, 2, 3]);
        assert!(ins.present(1).is_empty());

        let mut plants = OccurrenceMatrix::new(2, 6, Scenario::Raw);
        plants.set(0, 2, true);
        plants.set(1, 3, true);
        let o = cooccurrence(&plants, &ins).unwrap();
        for t in 0..6 {
            for i in 0..2 {
                for j in 0..3 {
                    let expect = plants.get(i, t) && ins.get(j, t);
                    assert_eq!(o.get(i, j, t) == 1.0, expect);
                }
            }
        }
        assert_eq!(o.as_slice().iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn occurrence_and_covariate_files() {
        let mut o = OccurrenceMatrix::new(2, 3, Scenario::Raw);
        o.set(1, 2, true);
        let back = parse_occurrence_csv(&format_occurrence_csv(&o), &p(), 2, 3).unwrap();
        assert_eq!(back, o);
        let sparse = parse_occurrence_csv("taxon,t,value\n2,3,1\n", &p(), 2, 3).unwrap();
        assert_eq!(sparse, o);
        assert!(parse_occurrence_csv("taxon,t,value\n3,1,1\n", &p(), 2, 3).is_err());

        let c = parse_covariates_csv("t,temperature\n2,4.5\n1,-1\n", &p()).unwrap();
        assert_eq!(c, [-1.0, 4.5]);
        assert!(parse_covariates_csv("t,temperature\n1,1\n3,2\n", &p()).is_err());
    }

    #[test]
    fn gdd_examples() {
        assert_eq!(gdd(10.0, 2.0, 0.0), 6.0);
        assert_eq!(gdd(-2.0, -4.0, 0.0), 0.0);
        assert_eq!(cumulative_gdd(&[1.0, 2.0, 0.0, 3.0]), [1.0, 3.0, 3.0, 6.0]);
        assert_eq!(
            cumulative_gdd_by_season(&[1.0, 2.0, 4.0, 3.0], &[1.0, 1.0, 2.0, 2.0]).unwrap(),
            [1.0, 3.0, 4.0, 7.0]
        );
    }

    #[test]
    fn distances() {
        let ti = TimeIndex {
            week: vec![1.0, 3.0],
            year: vec![1996.0, 2010.0],
        };
        assert_eq!(week_distance(&ti)[(0, 1)], 2.0);
        assert_eq!(year_distance(&ti)[(1, 0)], 14.0);
    }

    #[test]
    fn config_defaults_and_errors() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.model.h(), 10);
        assert_eq!(c.model.k, 10);
        assert_eq!(c.sampler.warmup, 2000);
        assert_eq!(c.sampler.samples, 2000);
        assert_eq!(c.simulate.n, 20);

        let e = RunConfig::parse("[model]\nh = 12\nk = 10\n").unwrap_err().to_string();
        assert!(e.contains("H <= K"), "{e}");
        assert!(RunConfig::parse("[model]\nbogus = 1\n").is_err());
        assert!(RunConfig::parse("[sampler]\nwarmup = \"many\"\n").is_err());
        assert!(RunConfig::parse("[model]\nkind = \"dlf\"\n").unwrap().model.h() == 5);
    }

    #[test]
    fn config_echo_round_trips() {
        let text = "[model]\nkind = \"nex-conditional\"\nh = 3\nk = 7\nlength_scale = 0.004\n\
                    [simulate]\nholdout = [3, 40]\nsigma2 = 0.1\n[sampler]\ninit_step_size = 0.01\n\
                    [evaluate]\ncv_folds = 10\noccurrence_scenario = \"padded2\"\n";
        let c = RunConfig::parse(text).unwrap();
        let echo = c.echo().unwrap();
        assert_eq!(RunConfig::parse(&echo).unwrap(), c);
        assert_eq!(RunConfig::parse(&RunConfig::default().echo().unwrap()).unwrap(), RunConfig::default());
    }

    #[test]
    fn names_parse() {
        for k in [ModelKind::Nex, ModelKind::NexSymmetric, ModelKind::NexConditional, ModelKind::Dlf] {
            assert_eq!(k.to_string().parse::<ModelKind>().unwrap(), k);
        }
        for s in [Scenario::Raw, Scenario::Padded1, Scenario::Padded2] {
            assert_eq!(s.to_string().parse::<Scenario>().unwrap(), s);
        }
        assert!("nexx".parse::<ModelKind>().is_err());
    }
}
