//! The two neural operators and the trainable PDE coefficient maps.
//!
//! * [`Tno`] steps time: `s` past frames plus an elevation map in, the next
//!   `s` frames out. Its head adds a learned increment to the last input
//!   frame, and that increment starts at zero, so an untrained T-NO is
//!   exactly the persistence forecast.
//! * [`Vno`] extracts velocity: `s` frames in, `s` velocity fields out,
//!   each component bounded by `v_max` through a scaled `tanh`.
//! * [`ParamMaps`] hold the per-cell diffusivity `D = θ²` and source `R`
//!   shared by every sequence.
//! * [`Translator`] maps satellite channels to a non-negative rain rate.
//!
//! Frames enter the networks stacked along channels, frame-major:
//! `[t0c0, t0c1, …, t1c0, …]`. Velocity outputs are interleaved
//! `[vx0, vy0, vx1, vy1, …]`; field `j` drives the transition *into* input
//! frame `j`, so field 0 belongs to the step from the frame before the
//! window.

mod maps;
mod net;
mod tno;
mod translator;
mod vno;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FrameSequence, ScalarField, StencilSpec};
use crate::pde::{cfl_check, Stability};

pub use maps::{init_param_maps, ParamMaps, D_SQRT_NAME, R_NAME};
pub use net::{field_to_tensor, frames_to_tensor, tensor_to_frames, tensor_to_velocities, velocities_to_tensor};
pub use tno::{build_tno, tno_on, tno_predict, Tno, TnoNodes};
pub use translator::{head_translate, translator_on, Translator, TranslatorConfig};
pub use vno::{build_vno, vno_extract, vno_on, Vno, VnoNodes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TnoConfig {
    /// Window length in frames, for both input and output.
    pub s: usize,
    /// Data channels per frame; the elevation map is one extra input channel.
    pub channels: usize,
    /// Channel width per level; the length sets the number of levels.
    pub widths: Vec<usize>,
    /// Convolutions per level.
    pub depth: usize,
}

impl Default for TnoConfig {
    fn default() -> Self {
        Self {
            s: 8,
            channels: 1,
            widths: vec![32, 64, 32],
            depth: 1,
        }
    }
}

impl TnoConfig {
    /// Input channels seen by the network: `s·C` frame channels plus elevation.
    pub fn in_channels(&self) -> usize {
        self.s * self.channels + 1
    }

    pub fn validate(&self) -> Result<()> {
        validate_common("tno", self.s, self.channels, &self.widths, self.depth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VnoConfig {
    pub s: usize,
    pub channels: usize,
    pub widths: Vec<usize>,
    pub depth: usize,
    /// Per-component velocity cap, cells per frame.
    pub v_max: f64,
}

impl Default for VnoConfig {
    fn default() -> Self {
        Self {
            s: 8,
            channels: 1,
            widths: vec![32, 64, 32],
            depth: 1,
            v_max: 0.5,
        }
    }
}

impl VnoConfig {
    pub fn in_channels(&self) -> usize {
        self.s * self.channels
    }

    pub fn out_channels(&self) -> usize {
        2 * self.s
    }

    pub fn validate(&self) -> Result<()> {
        validate_common("vno", self.s, self.channels, &self.widths, self.depth)?;
        if !(self.v_max > 0.0) || cfl_check(self.v_max, 0.0, &StencilSpec::default()) != Stability::Stable {
            return Err(Error::Config(format!(
                "vno.v_max = {} must be positive and inside the stable CFL regime",
                self.v_max
            )));
        }
        Ok(())
    }
}

fn validate_common(what: &str, s: usize, channels: usize, widths: &[usize], depth: usize) -> Result<()> {
    let mut problems = Vec::new();
    if s == 0 {
        problems.push(format!("{what}.s must be at least 1"));
    }
    if channels == 0 {
        problems.push(format!("{what}.channels must be at least 1"));
    }
    if widths.is_empty() || widths.contains(&0) {
        problems.push(format!("{what}.widths must be a non-empty list of positive widths"));
    }
    if depth == 0 {
        problems.push(format!("{what}.depth must be at least 1"));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems.join("; ")))
    }
}

/// Per-channel `(mean, std)` of the data channels and of the elevation map.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub channels: Vec<(f64, f64)>,
    pub dem: (f64, f64),
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            channels: vec![(0.0, 1.0); channels],
            dem: (0.0, 1.0),
        }
    }

    /// Statistics over every frame of `seqs` and every map in `dems`. A
    /// channel with zero spread keeps unit scale.
    pub fn fit(seqs: &[&FrameSequence], dems: &[&ScalarField]) -> Result<Self> {
        let c = seqs
            .first()
            .map(|s| s.channels())
            .ok_or_else(|| Error::Config("normalization needs at least one sequence".into()))?;
        let channels = (0..c)
            .map(|ci| moments(seqs.iter().flat_map(|s| s.channel(ci)).flat_map(|f| f.values().iter().copied())))
            .collect();
        let dem = moments(dems.iter().flat_map(|d| d.values().iter().copied()));
        Ok(Self { channels, dem })
    }

    /// `s` repetitions of the channel stats, for a frame-stacked input.
    pub(crate) fn stacked(&self, s: usize) -> Vec<(f64, f64)> {
        (0..s).flat_map(|_| self.channels.iter().copied()).collect()
    }
}

fn moments(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        sum += v;
        sq += v * v;
    }
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

/// Timestamps continuing `history` for `n` more frames.
pub(crate) fn continue_timestamps(history: &FrameSequence, n: usize) -> Vec<i64> {
    let ts = history.timestamps();
    let dt = if ts.len() >= 2 { ts[1] - ts[0] } else { 1 };
    let last = ts.last().copied().unwrap_or(-1);
    (1..=n as i64).map(|k| last + k * dt).collect()
}

#[cfg(test)]
mod tests;
