//! One type over the fitted models so the commands can treat them alike.

use nex_core::dataio::{ModelKind, ModelSection};
use nex_core::dlfmodel::{DlfConfig, DlfModel};
use nex_core::eval::{shrinkage_report, ShrinkageReport};
use nex_core::nexmodel::{default_sigma2, NexConfig, NexModel, Variant};
use nex_core::sampler::{ChainDraws, LogDensity};
use nex_core::{DesignData, Error, Result, Tensor3};
use rand::Rng;

pub enum FitModel {
    Nex(Box<NexModel>),
    Dlf(Box<DlfModel>),
}

fn variant_for(kind: ModelKind, d: &DesignData) -> Result<Variant> {
    match (kind, d.symmetric) {
        (ModelKind::Nex, true) => Err(Error::InvalidArgument(
            "the data are symmetric; use --model nex-symmetric".into(),
        )),
        (ModelKind::Nex, false) => Ok(Variant::Bipartite),
        (ModelKind::NexSymmetric, true) => Ok(Variant::Symmetric),
        (ModelKind::NexSymmetric, false) => Err(Error::InvalidArgument(
            "nex-symmetric needs a network file marked '# symmetric: true'".into(),
        )),
        (ModelKind::NexConditional, true) => Err(Error::InvalidArgument(
            "the conditional model is bipartite; the data are symmetric".into(),
        )),
        (ModelKind::NexConditional, false) => Ok(Variant::Conditional),
        (ModelKind::Dlf, true) => Ok(Variant::Symmetric),
        (ModelKind::Dlf, false) => Ok(Variant::Bipartite),
    }
}

impl FitModel {
    pub fn build(section: &ModelSection, d: DesignData) -> Result<Self> {
        let variant = variant_for(section.kind, &d)?;
        if section.kind.is_nex() {
            let mut cfg = NexConfig::for_data(&d, variant, section.h(), section.k, section.length_scale)?;
            cfg.sigma2 = default_sigma2(section.k_star);
            Ok(FitModel::Nex(Box::new(NexModel::new(cfg, d)?)))
        } else {
            let cfg = DlfConfig::for_data(&d, variant, section.h(), section.length_scale)?;
            Ok(FitModel::Dlf(Box::new(DlfModel::new(cfg, d)?)))
        }
    }

    pub fn data(&self) -> &DesignData {
        match self {
            FitModel::Nex(m) => m.data(),
            FitModel::Dlf(m) => m.data(),
        }
    }

    pub fn coordinate_names(&self) -> Vec<String> {
        match self {
            FitModel::Nex(m) => m.layout().coordinate_names(),
            FitModel::Dlf(m) => m.layout().coordinate_names(),
        }
    }

    /// Log-odds tensor at an unconstrained point.
    pub fn propensity(&self, v: &[f64]) -> Result<Tensor3> {
        match self {
            FitModel::Nex(m) => m.propensity(v),
            FitModel::Dlf(m) => m.propensity(v),
        }
    }

    pub fn initial_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            FitModel::Nex(m) => m.initial_point(rng),
            FitModel::Dlf(m) => m.initial_point(rng),
        }
    }

    /// Posterior summaries of the weight vectors; NEX only.
    pub fn shrinkage(&self, draws: &[ChainDraws]) -> Option<Result<ShrinkageReport>> {
        match self {
            FitModel::Nex(m) => {
                let l = m.layout();
                Some(shrinkage_report(draws, l.theta_k..l.theta_k + l.k, l.theta_h..l.theta_h + l.h))
            }
            FitModel::Dlf(_) => None,
        }
    }
}

impl LogDensity for FitModel {
    fn dim(&self) -> usize {
        match self {
            FitModel::Nex(m) => m.dim(),
            FitModel::Dlf(m) => m.dim(),
        }
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            FitModel::Nex(m) => m.log_density_grad(x, grad),
            FitModel::Dlf(m) => m.log_density_grad(x, grad),
        }
    }
}
