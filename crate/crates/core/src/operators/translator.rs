use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{normalize, select};
use crate::autodiff::{DiffGraph, NodeId, ParamSet, Real, Tensor4};
use crate::error::{mismatch, Error, Result};
use crate::grid::ScalarField;
use crate::rng::seeded;

const TRAINED_FLAG: &str = "translator.trained";

/// Two-layer convolutional regressor from satellite channels to rain rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorConfig {
    pub channels: usize,
    pub hidden: usize,
    /// Odd kernel size of the first layer.
    pub kernel: usize,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            hidden: 8,
            kernel: 3,
        }
    }
}

impl TranslatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "translator needs channels ≥ 1, hidden ≥ 1 and an odd kernel (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Wires the regressor onto `x` (`channels` wide) and returns the raw,
/// unrectified single-channel output.
pub fn translator_on<T: Real>(
    g: &mut DiffGraph<T>,
    cfg: &TranslatorConfig,
    x: NodeId,
    stats: &[(f64, f64)],
    seed: u64,
) -> Result<NodeId> {
    cfg.validate()?;
    let mut rng = seeded(seed, "init/translator");
    let mut init = |dims: [usize; 4]| -> Tensor4<T> {
        let bound = (6.0 / (dims[1] * dims[2] * dims[3]) as f64).sqrt();
        let data = (0..dims.iter().product()).map(|_| T::cast_from(rng.random_range(-bound..bound))).collect();
        Tensor4::new(dims, data).expect("init dims")
    };
    let xn = normalize(g, "translator", x, stats)?;
    let k = cfg.kernel;
    let w0 = g.param("translator.l0.w", init([cfg.hidden, cfg.channels, k, k]))?;
    let b0 = g.param("translator.l0.b", Tensor4::zeros([1, cfg.hidden, 1, 1]))?;
    let w1 = g.param("translator.l1.w", init([1, cfg.hidden, 1, 1]))?;
    let b1 = g.param("translator.l1.b", Tensor4::zeros([1, 1, 1, 1]))?;
    let h = g.conv2d(xn, w0, Some(b0))?;
    let h = g.leaky_relu(h);
    g.conv2d(h, w1, Some(b1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translator {
    pub cfg: TranslatorConfig,
    pub params: ParamSet<f64>,
    pub trained: bool,
}

impl Translator {
    pub fn new(cfg: TranslatorConfig, stats: &[(f64, f64)], seed: u64) -> Result<Self> {
        let mut g = DiffGraph::<f64>::new();
        let x = g.input("sat", [cfg.channels, 1, 1])?;
        translator_on(&mut g, &cfg, x, stats, seed)?;
        Ok(Self {
            params: g.export_params(),
            cfg,
            trained: false,
        })
    }

    /// Parameters plus a trained marker, ready for a checkpoint.
    pub fn to_params(&self) -> ParamSet<f64> {
        let mut set = self.params.clone();
        set.insert(TRAINED_FLAG, Tensor4::scalar(if self.trained { 1.0 } else { 0.0 }));
        set
    }

    pub fn from_params(cfg: TranslatorConfig, params: &ParamSet<f64>) -> Result<Self> {
        let template = Self::new(cfg.clone(), &vec![(0.0, 1.0); cfg.channels], 0)?;
        let mut rest = ParamSet::new();
        for (name, t) in params.iter().filter(|(n, _)| *n != TRAINED_FLAG) {
            rest.insert(name, t.clone());
        }
        let subset = select(&template.params, &rest, "translator.")?;
        let trained = params.get(TRAINED_FLAG).map(|t| t.item() == 1.0).unwrap_or(false);
        Ok(Self {
            cfg: template.cfg,
            params: subset,
            trained,
        })
    }
}

/// Rain rate in mm/h from one multi-channel satellite frame, rectified at 0.
pub fn head_translate(sat: &[ScalarField], model: &Translator) -> Result<ScalarField> {
    if !model.trained {
        return Err(Error::Untrained("translator has not been trained".into()));
    }
    if sat.len() != model.cfg.channels {
        return Err(mismatch("translator input channels", model.cfg.channels, sat.len()));
    }
    let (h, w) = sat[0].dims();
    let mut data = Vec::with_capacity(sat.len() * h * w);
    for f in sat {
        f.ensure_same_dims(&sat[0], "translator input")?;
        data.extend_from_slice(f.values());
    }
    let mut g = DiffGraph::<f64>::new();
    let x = g.input("sat", [sat.len(), h, w])?;
    let y = translator_on(&mut g, &model.cfg, x, &vec![(0.0, 1.0); sat.len()], 0)?;
    g.mark_output("rain", y);
    g.load_params(&model.params)?;
    let out = g.forward(&BTreeMap::from([("sat".to_string(), Tensor4::new([1, sat.len(), h, w], data)?)]))?;
    ScalarField::new(h, w, out["rain"].data().iter().map(|&v| v.max(0.0)).collect())
}
