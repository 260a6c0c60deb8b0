//! Synthetic advection-diffusion scenarios with stored ground truth.
//!
//! Frames are produced by [`pde::step`](crate::pde::step) itself, so the
//! stored velocity and parameters reproduce the frames with zero residual.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FrameSequence, ScalarField, StencilSpec, VectorField};
use crate::pde::{cfl_check, rollout, PdeParams, Stability};
use crate::rng::seeded;

/// Scenario velocities never exceed this speed (cells per frame).
pub const SPEED_CAP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    UniformFlow,
    RigidRotation,
    Shear,
    DiffusionOnly,
    SourceSink,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::UniformFlow,
        ScenarioKind::RigidRotation,
        ScenarioKind::Shear,
        ScenarioKind::DiffusionOnly,
        ScenarioKind::SourceSink,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::UniformFlow => "uniform-flow",
            ScenarioKind::RigidRotation => "rigid-rotation",
            ScenarioKind::Shear => "shear",
            ScenarioKind::DiffusionOnly => "diffusion-only",
            ScenarioKind::SourceSink => "source-sink",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario kind `{s}`")))
    }
}

/// Knobs beyond kind, size, length and seed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScenarioOptions {
    /// Fixes the uniform-flow velocity instead of drawing it.
    pub uniform_velocity: Option<(f64, f64)>,
    /// Fixes the diffusivity of every kind (otherwise drawn per kind).
    pub diffusivity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub frames: FrameSequence,
    /// `true_v[t]` drives frame `t` to frame `t + 1`.
    pub true_v: Vec<VectorField>,
    pub true_params: PdeParams,
    pub kind: ScenarioKind,
    pub seed: u64,
}

impl SyntheticScenario {
    /// Single-channel frames as plain fields.
    pub fn fields(&self) -> Vec<&ScalarField> {
        self.frames.channel(0)
    }
}

pub fn make_scenario(kind: ScenarioKind, size: (usize, usize), n_frames: usize, seed: u64) -> Result<SyntheticScenario> {
    make_scenario_with(kind, size, n_frames, seed, &ScenarioOptions::default())
}

pub fn make_scenario_with(
    kind: ScenarioKind,
    (h, w): (usize, usize),
    n_frames: usize,
    seed: u64,
    opts: &ScenarioOptions,
) -> Result<SyntheticScenario> {
    if h < 16 || w < 16 {
        return Err(Error::Dimension(format!("scenario grid {h}x{w} is below 16x16")));
    }
    if n_frames < 9 {
        return Err(Error::Config(format!("scenario needs at least 9 frames, got {n_frames}")));
    }
    let mut rng = seeded(seed, kind.as_str());
    let u0 = blobs(&mut rng, h, w)?;
    let (hf, wf) = (h as f64, w as f64);
    let (cy, cx) = ((hf - 1.0) / 2.0, (wf - 1.0) / 2.0);

    let mut d = 0.0;
    let mut r = ScalarField::zeros(h, w)?;
    let v = match kind {
        ScenarioKind::UniformFlow => {
            let (a, b) = opts.uniform_velocity.unwrap_or_else(|| {
                let speed = rng.random_range(0.2..SPEED_CAP);
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                (speed * angle.cos(), speed * angle.sin())
            });
            VectorField::uniform(h, w, a, b)?
        }
        ScenarioKind::RigidRotation => {
            let omega = rng.random_range(0.01..0.03) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            VectorField::from_fn(h, w, |i, j| {
                let (vx, vy) = (-omega * (i as f64 - cy), omega * (j as f64 - cx));
                let speed = vx.hypot(vy);
                if speed > SPEED_CAP {
                    (vx * SPEED_CAP / speed, vy * SPEED_CAP / speed)
                } else {
                    (vx, vy)
                }
            })?
        }
        ScenarioKind::Shear => {
            let a = rng.random_range(0.4..1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            VectorField::from_fn(h, w, |i, _| (a * (i as f64 / hf - 0.5), 0.0))?
        }
        ScenarioKind::DiffusionOnly => {
            d = rng.random_range(0.05..0.2);
            VectorField::zeros(h, w)?
        }
        ScenarioKind::SourceSink => {
            d = 0.02;
            let amp = rng.random_range(0.01..0.03) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let (by, bx) = (rng.random_range(0.25..0.75) * hf, rng.random_range(0.25..0.75) * wf);
            let sigma = 0.1 * hf.min(wf);
            r = ScalarField::from_fn(h, w, |i, j| {
                let (dy, dx) = (i as f64 - by, j as f64 - bx);
                amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })?;
            VectorField::zeros(h, w)?
        }
    };
    if let Some(fixed) = opts.diffusivity {
        d = fixed;
    }
    let spec = StencilSpec::default();
    if cfl_check(v.max_component().max(v.max_speed()), d, &spec) == Stability::Unstable {
        return Err(Error::Config(format!(
            "scenario parameters violate the CFL bound (|v| {}, D {d})",
            v.max_speed()
        )));
    }
    let params = PdeParams::new(ScalarField::constant(h, w, d)?, r, spec)?;
    let true_v = vec![v; n_frames - 1];
    let frames = rollout(&u0, &true_v, &params, n_frames - 1)?;
    Ok(SyntheticScenario {
        frames,
        true_v,
        true_params: params,
        kind,
        seed,
    })
}

/// Sum of one to four Gaussian blobs.
fn blobs(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Result<ScalarField> {
    let (hf, wf) = (h as f64, w as f64);
    let scale = hf.min(wf);
    let count = rng.random_range(1..=4);
    let specs: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            let amp = rng.random_range(0.6..1.4);
            let sigma = rng.random_range(0.06..0.14) * scale;
            let cy = rng.random_range(0.15..0.85) * hf;
            let cx = rng.random_range(0.15..0.85) * wf;
            (amp, sigma.max(2.5), cy, cx)
        })
        .collect();
    ScalarField::from_fn(h, w, |i, j| {
        specs
            .iter()
            .map(|&(amp, sigma, cy, cx)| {
                let (dy, dx) = (i as f64 - cy, j as f64 - cx);
                amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
            .sum()
    })
}

/// Smooth synthetic terrain in `[0, 1]`: a tilted plane plus broad bumps.
///
/// The dynamics never read it; it is static conditioning input.
pub fn synthetic_dem((h, w): (usize, usize), seed: u64) -> Result<ScalarField> {
    let mut rng = seeded(seed, "dem");
    let (hf, wf) = (h as f64, w as f64);
    let (ty, tx): (f64, f64) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let bumps: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.2..0.5),
                rng.random_range(0.2..0.4) * hf.min(wf),
                rng.random_range(0.0..1.0) * hf,
                rng.random_range(0.0..1.0) * wf,
            )
        })
        .collect();
    let raw = ScalarField::from_fn(h, w, |i, j| {
        let tilt = ty * i as f64 / hf + tx * j as f64 / wf;
        tilt + bumps
            .iter()
            .map(|&(a, s, cy, cx)| {
                let (dy, dx) = (i as f64 - cy, j as f64 - cx);
                a * (-(dx * dx + dy * dy) / (2.0 * s * s)).exp()
            })
            .sum::<f64>()
    })?;
    let lo = raw.min();
    let hi = raw.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    Ok(raw.map(|v| (v - lo) / span))
}

/// Synthetic radar for a satellite sequence: `gain · max(u, 0)` in mm/h
/// from channel 0, one `rain` channel per frame.
pub fn couple_rain(sat: &FrameSequence, gain: f64) -> Result<FrameSequence> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::Config(format!("rain coupling gain must be positive, got {gain}")));
    }
    let frames = sat.frames().iter().map(|f| vec![f[0].map(|v| gain * v.max(0.0))]).collect();
    FrameSequence::new(frames, sat.timestamps().to_vec(), vec!["rain".to_string()])
}
