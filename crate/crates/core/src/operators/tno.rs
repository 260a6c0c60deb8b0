use std::collections::BTreeMap;

use super::net::{encoder_decoder, field_to_tensor, frames_to_tensor, normalize, select, tensor_to_frames, Body};
use super::{continue_timestamps, NormStats, TnoConfig};
use crate::autodiff::{DiffGraph, NodeId, ParamSet, Real};
use crate::error::{mismatch, Result};
use crate::grid::{FrameSequence, ScalarField};
use crate::rng::seeded;

const PREFIX: &str = "tno";

#[derive(Debug, Clone, Copy)]
pub struct TnoNodes {
    pub history: NodeId,
    pub dem: NodeId,
    pub pred: NodeId,
}

/// Wires a T-NO onto existing `history` (`s·C` channels) and `dem` nodes and
/// returns the prediction node (`s·C` channels).
pub fn tno_on<T: Real>(
    g: &mut DiffGraph<T>,
    cfg: &TnoConfig,
    history: NodeId,
    dem: NodeId,
    stats: &NormStats,
    seed: u64,
) -> Result<NodeId> {
    cfg.validate()?;
    let (s, c) = (cfg.s, cfg.channels);
    let got = g.shape(history)[0];
    if got != s * c {
        return Err(mismatch("tno history channels", s * c, got));
    }
    let mut rng = seeded(seed, "init/tno");
    let x = g.concat(&[history, dem])?;
    let mut norm = stats.stacked(s);
    norm.push(stats.dem);
    let xn = normalize(g, PREFIX, x, &norm)?;
    let body = Body {
        prefix: PREFIX,
        out_channels: s * c,
        widths: &cfg.widths,
        depth: cfg.depth,
    };
    let delta = encoder_decoder(g, &mut rng, xn, &body)?;
    let last = g.slice_channels(history, (s - 1) * c, c)?;
    let repeated = g.concat(&vec![last; s])?;
    g.add(repeated, delta)
}

/// Fresh graph with inputs `history` and `dem`.
pub fn build_tno<T: Real>(
    g: &mut DiffGraph<T>,
    cfg: &TnoConfig,
    (h, w): (usize, usize),
    stats: &NormStats,
    seed: u64,
) -> Result<TnoNodes> {
    let history = g.input("history", [cfg.s * cfg.channels, h, w])?;
    let dem = g.input("dem", [1, h, w])?;
    let pred = tno_on(g, cfg, history, dem, stats, seed)?;
    g.mark_output("pred", pred);
    Ok(TnoNodes { history, dem, pred })
}

/// A T-NO configuration with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Tno {
    pub cfg: TnoConfig,
    pub params: ParamSet<f64>,
}

impl Tno {
    /// Freshly initialised network (zero head, hence persistence).
    pub fn new(cfg: TnoConfig, stats: &NormStats, seed: u64) -> Result<Self> {
        let side = 1usize << cfg.widths.len().saturating_sub(1);
        let mut g = DiffGraph::<f64>::new();
        build_tno(&mut g, &cfg, (side, side), stats, seed)?;
        Ok(Self {
            params: g.export_params().with_prefix("tno."),
            cfg,
        })
    }

    /// Picks the `tno.*` entries out of `params`, which must cover every
    /// parameter of the configured network.
    pub fn from_params(cfg: TnoConfig, params: &ParamSet<f64>) -> Result<Self> {
        let template = Self::new(cfg.clone(), &NormStats::identity(cfg.channels), 0)?;
        let params = select(&template.params, params, "tno.")?;
        Ok(Self {
            cfg: template.cfg,
            params,
        })
    }

    pub fn predict(&self, history: &FrameSequence, dem: &ScalarField) -> Result<FrameSequence> {
        tno_predict(history, dem, self)
    }
}

/// Runs the operator on one window of `s` frames.
pub fn tno_predict(history: &FrameSequence, dem: &ScalarField, model: &Tno) -> Result<FrameSequence> {
    let cfg = &model.cfg;
    if history.len() != cfg.s {
        return Err(mismatch("tno history length", cfg.s, history.len()));
    }
    if history.channels() != cfg.channels {
        return Err(mismatch("tno history channels", cfg.channels, history.channels()));
    }
    let dims = history.dims().unwrap_or((0, 0));
    if dem.dims() != dims {
        return Err(mismatch("elevation map dims", dims, dem.dims()));
    }
    let mut g = DiffGraph::<f64>::new();
    build_tno(&mut g, cfg, dims, &NormStats::identity(cfg.channels), 0)?;
    g.load_params(&model.params)?;
    let inputs = BTreeMap::from([
        ("history".to_string(), frames_to_tensor(history, 0, cfg.s)?),
        ("dem".to_string(), field_to_tensor(dem)),
    ]);
    let out = g.forward(&inputs)?;
    tensor_to_frames(&out["pred"], 0, history.channel_labels(), continue_timestamps(history, cfg.s))
}
