//! The `nex` command line: simulate, fit, evaluate and repcheck.

pub mod evaluate;
pub mod fit;
pub mod manifest;
pub mod model;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nex_core::dataio::{format_long_csv, format_value_csv, load_run_config, parse_value_csv, ModelKind, RunConfig, Scenario};
use nex_core::oracle::nex_representation;
use nex_core::simulate::simulate;
use nex_core::Tensor3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::evaluate::{run_evaluate, EvalInputs};
use crate::fit::{run_fit, FitInputs};
use crate::manifest::{write_output, ManifestWriter};

#[derive(Debug, Parser)]
#[command(name = "nex", version, about = "Nested exemplar latent space models for dynamic networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic network and write it with its true probabilities.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `simulate.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the posterior of a model on a network file.
    Fit {
        /// Long CSV `i,j,t,value[,observed]`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        chains: Option<usize>,
        /// Overrides `sampler.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        /// 1-based slices to hide from the fit (repeatable or comma separated).
        #[arg(long = "holdout-slice", value_delimiter = ',')]
        holdout_slice: Vec<usize>,
        /// Fit once per fold with that fold's cells hidden.
        #[arg(long = "cv-folds")]
        cv_folds: Option<usize>,
        #[arg(long = "occurrence-scenario")]
        occurrence_scenario: Option<Scenario>,
        /// Plant occurrence file `taxon,t,value` (nex-conditional).
        #[arg(long)]
        plants: Option<PathBuf>,
        /// Per-slice covariate file `t,temperature` (nex-conditional).
        #[arg(long)]
        covariates: Option<PathBuf>,
    },
    /// Score a fit against held-out labels and/or true probabilities.
    Evaluate {
        /// Directory written by `nex fit`.
        #[arg(long)]
        fit: PathBuf,
        /// Network file holding labels for the held-out cells.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// True probabilities (`truth_pi.csv` from `nex simulate`).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Defaults to `<fit>/metrics.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the exact NEX representation of a log-odds tensor.
    Repcheck {
        /// Long CSV `i,j,t,value` of real log-odds.
        #[arg(long, conflicts_with = "random")]
        input: Option<PathBuf>,
        /// Standard normal tensor of the given N,M,T.
        #[arg(long, value_name = "N,M,T", value_delimiter = ',')]
        random: Option<Vec<usize>>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Latent dimension; defaults to the largest slice rank.
        #[arg(long)]
        h: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn base_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => load_run_config(p)?,
        None => RunConfig::default(),
    })
}

#[derive(Serialize)]
struct TruthFile<'a> {
    spec: &'a nex_core::simulate::SimSpec,
    truth: &'a nex_core::simulate::TruthParams,
}

fn cmd_simulate(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = base_config(config)?;
    if let Some(s) = seed {
        cfg.simulate.seed = s;
    }
    cfg.validate()?;
    let sim = simulate(&cfg.simulate)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let inputs: Vec<&Path> = config.into_iter().collect();
    let mut m = ManifestWriter::start(out.join("manifest.json"), "simulate", cfg.simulate.seed, cfg.echo()?, &inputs)?;
    write_output(&mut m, out, "config.toml", &cfg.echo()?)?;
    write_output(&mut m, out, "network.csv", &format_long_csv(&sim.data))?;
    let mut full = sim.data.clone();
    let (n, m_side, t) = full.dims();
    full.observed = Tensor3::from_fn(full.dims(), |i, j, _| (!(full.symmetric && i == j)) as u8 as f64);
    write_output(&mut m, out, "network_full.csv", &format_long_csv(&full))?;
    write_output(&mut m, out, "truth_pi.csv", &format_value_csv(&sim.truth_pi, "pi"))?;
    let truth = TruthFile {
        spec: &sim.spec,
        truth: &sim.truth,
    };
    write_output(&mut m, out, "truth_params.json", &(serde_json::to_string(&truth)? + "\n"))?;
    eprintln!("simulated {:?} network, {n} x {m_side} nodes over {t} slices", cfg.simulate.generator);
    m.finish("ok")
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    data: PathBuf,
    out: &Path,
    config: Option<&Path>,
    model: Option<ModelKind>,
    chains: Option<usize>,
    seed: Option<u64>,
    warmup: Option<usize>,
    samples: Option<usize>,
    holdout: Vec<usize>,
    cv_folds: Option<usize>,
    scenario: Option<Scenario>,
    plants: Option<PathBuf>,
    covariates: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = base_config(config)?;
    if let Some(k) = model {
        cfg.model.kind = k;
    }
    if let Some(c) = chains {
        cfg.sampler.chains = c;
    }
    if let Some(s) = seed {
        cfg.sampler.seed = s;
    }
    if let Some(w) = warmup {
        cfg.sampler.warmup = w;
    }
    if let Some(s) = samples {
        cfg.sampler.samples = s;
    }
    if !holdout.is_empty() {
        cfg.evaluate.holdout_slices = holdout;
    }
    if cv_folds.is_some() {
        cfg.evaluate.cv_folds = cv_folds;
    }
    if let Some(s) = scenario {
        cfg.evaluate.occurrence_scenario = s;
    }
    cfg.validate()?;
    let inputs = FitInputs { data, plants, covariates };
    run_fit(out, &inputs, &cfg)
}

fn cmd_repcheck(input: Option<&Path>, random: Option<Vec<usize>>, seed: u64, h: Option<usize>, out: Option<&Path>) -> Result<()> {
    let s = match (input, random) {
        (Some(p), _) => parse_value_csv(&fs::read_to_string(p)?, p)?,
        (None, Some(d)) => {
            if d.len() != 3 {
                bail!("--random takes three sizes N,M,T, got {}", d.len());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Tensor3::from_fn((d[0], d[1], d[2]), |_, _, _| StandardNormal.sample(&mut rng))
        }
        (None, None) => bail!("give --input FILE or --random N,M,T"),
    };
    let (_, _, check) = nex_representation(&s, h)?;
    println!("H0 = {}", check.h0);
    println!("H = {}, K = {}", check.h, check.k);
    println!("factorization error = {:e}", check.factorization_error);
    println!("NEX reconstruction error = {:e}", check.nex_error);
    if let Some(o) = out {
        fs::write(o, serde_json::to_string_pretty(&check)? + "\n").with_context(|| format!("writing {}", o.display()))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, seed, out } => cmd_simulate(config.as_deref(), seed, &out),
        Command::Fit {
            data,
            out,
            config,
            model,
            chains,
            seed,
            warmup,
            samples,
            holdout_slice,
            cv_folds,
            occurrence_scenario,
            plants,
            covariates,
        } => cmd_fit(
            data,
            &out,
            config.as_deref(),
            model,
            chains,
            seed,
            warmup,
            samples,
            holdout_slice,
            cv_folds,
            occurrence_scenario,
            plants,
            covariates,
        ),
        Command::Evaluate { fit, labels, truth, out } => {
            let out = out.unwrap_or_else(|| fit.join("metrics.json"));
            run_evaluate(&EvalInputs { fit_dir: fit, labels, truth }, &out).map(|_| ())
        }
        Command::Repcheck { input, random, seed, h, out } => cmd_repcheck(input.as_deref(), random, seed, h, out.as_deref()),
    }
}

/// 2 for numerical failures, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    use nex_core::Error as E;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::NotPositiveDefinite { .. } | E::InsufficientRank { .. } | E::NonFinite(_) | E::Sampler(_) => 2,
                _ => 1,
            };
        }
    }
    1
}
