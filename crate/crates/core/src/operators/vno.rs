use std::collections::BTreeMap;

use super::net::{encoder_decoder, frames_to_tensor, normalize, select, tensor_to_velocities, Body};
use super::{NormStats, VnoConfig};
use crate::autodiff::{DiffGraph, NodeId, ParamSet, Real};
use crate::error::{mismatch, Result};
use crate::grid::{FrameSequence, VectorField};
use crate::rng::seeded;

const PREFIX: &str = "vno";

#[derive(Debug, Clone, Copy)]
pub struct VnoNodes {
    pub frames: NodeId,
    pub velocity: NodeId,
}

/// Wires a V-NO onto a frame-stack node (`s·C` channels) and returns the
/// interleaved velocity node (`2s` channels), each entry in `[-v_max, v_max]`.
pub fn vno_on<T: Real>(
    g: &mut DiffGraph<T>,
    cfg: &VnoConfig,
    frames: NodeId,
    stats: &NormStats,
    seed: u64,
) -> Result<NodeId> {
    cfg.validate()?;
    let got = g.shape(frames)[0];
    if got != cfg.in_channels() {
        return Err(mismatch("vno input channels", cfg.in_channels(), got));
    }
    let mut rng = seeded(seed, "init/vno");
    let xn = normalize(g, PREFIX, frames, &stats.stacked(cfg.s))?;
    let body = Body {
        prefix: PREFIX,
        out_channels: cfg.out_channels(),
        widths: &cfg.widths,
        depth: cfg.depth,
    };
    let raw = encoder_decoder(g, &mut rng, xn, &body)?;
    let bounded = g.tanh(raw);
    Ok(g.scale(bounded, cfg.v_max))
}

/// Fresh graph with input `frames` and output `velocity`.
pub fn build_vno<T: Real>(
    g: &mut DiffGraph<T>,
    cfg: &VnoConfig,
    (h, w): (usize, usize),
    stats: &NormStats,
    seed: u64,
) -> Result<VnoNodes> {
    let frames = g.input("frames", [cfg.in_channels(), h, w])?;
    let velocity = vno_on(g, cfg, frames, stats, seed)?;
    g.mark_output("velocity", velocity);
    Ok(VnoNodes { frames, velocity })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vno {
    pub cfg: VnoConfig,
    pub params: ParamSet<f64>,
}

impl Vno {
    pub fn new(cfg: VnoConfig, stats: &NormStats, seed: u64) -> Result<Self> {
        let side = 1usize << cfg.widths.len().saturating_sub(1);
        let mut g = DiffGraph::<f64>::new();
        build_vno(&mut g, &cfg, (side, side), stats, seed)?;
        Ok(Self {
            params: g.export_params().with_prefix("vno."),
            cfg,
        })
    }

    /// Picks the `vno.*` entries out of `params`.
    pub fn from_params(cfg: VnoConfig, params: &ParamSet<f64>) -> Result<Self> {
        let template = Self::new(cfg.clone(), &NormStats::identity(cfg.channels), 0)?;
        let params = select(&template.params, params, "vno.")?;
        Ok(Self {
            cfg: template.cfg,
            params,
        })
    }

    pub fn extract(&self, frames: &FrameSequence) -> Result<Vec<VectorField>> {
        vno_extract(frames, self)
    }
}

/// One velocity field per input frame; field `j` drives the transition into
/// frame `j`.
pub fn vno_extract(frames: &FrameSequence, model: &Vno) -> Result<Vec<VectorField>> {
    let cfg = &model.cfg;
    if frames.len() != cfg.s {
        return Err(mismatch("vno frame count", cfg.s, frames.len()));
    }
    if frames.channels() != cfg.channels {
        return Err(mismatch("vno frame channels", cfg.channels, frames.channels()));
    }
    let dims = frames.dims().unwrap_or((0, 0));
    let mut g = DiffGraph::<f64>::new();
    build_vno(&mut g, cfg, dims, &NormStats::identity(cfg.channels), 0)?;
    g.load_params(&model.params)?;
    let inputs = BTreeMap::from([("frames".to_string(), frames_to_tensor(frames, 0, cfg.s)?)]);
    let out = g.forward(&inputs)?;
    tensor_to_velocities(&out["velocity"], 0)
}
