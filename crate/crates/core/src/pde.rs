//! Explicit advection-diffusion stepping and its pointwise residual.
//!
//! One step advances a field by a single frame interval:
//!
//! ```text
//! u' = u + D ∘ ∇²u − v · ∇u − u ∘ (∇ · v) + R
//! ```
//!
//! `D` multiplies the Laplacian cell-wise. That equals `∇·(D∇u)` only for
//! spatially constant `D`; the cell-wise form is what the residual loss uses,
//! so the solver uses it too.

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::grid::{divergence, gradient, laplacian, FrameSequence, ScalarField, StencilSpec, VectorField};

#[derive(Debug, Clone, PartialEq)]
pub struct PdeParams {
    /// Diffusivity in cells² per frame, non-negative everywhere.
    pub d: ScalarField,
    /// Source term in intensity per frame.
    pub r: ScalarField,
    pub spec: StencilSpec,
}

impl PdeParams {
    pub fn new(d: ScalarField, r: ScalarField, spec: StencilSpec) -> Result<Self> {
        d.ensure_same_dims(&r, "PdeParams D vs R")?;
        spec.validate()?;
        if d.min() < 0.0 {
            return Err(Error::Config(format!(
                "diffusivity must be non-negative (min {})",
                d.min()
            )));
        }
        Ok(Self { d, r, spec })
    }

    /// Spatially uniform `D` and `R`.
    pub fn uniform(height: usize, width: usize, d: f64, r: f64) -> Result<Self> {
        Self::new(
            ScalarField::constant(height, width, d)?,
            ScalarField::constant(height, width, r)?,
            StencilSpec::default(),
        )
    }

    pub fn dims(&self) -> (usize, usize) {
        self.d.dims()
    }
}

fn check_step_dims(u: &ScalarField, v: &VectorField, p: &PdeParams) -> Result<()> {
    if u.dims() != v.dims() {
        return Err(mismatch("step velocity dims", u.dims(), v.dims()));
    }
    if u.dims() != p.dims() {
        return Err(mismatch("step parameter dims", u.dims(), p.dims()));
    }
    Ok(())
}

/// Advances `u` by one frame. Fails if the result contains non-finite cells.
pub fn step(u: &ScalarField, v: &VectorField, p: &PdeParams) -> Result<ScalarField> {
    let next = step_raw(u, v, p)?;
    let bad = next.non_finite_count();
    if bad > 0 {
        return Err(Error::NonFinite {
            context: "advection-diffusion step".into(),
            count: bad,
        });
    }
    Ok(next)
}

fn step_raw(u: &ScalarField, v: &VectorField, p: &PdeParams) -> Result<ScalarField> {
    check_step_dims(u, v, p)?;
    let lap = laplacian(u, &p.spec)?;
    let grad = gradient(u, &p.spec)?;
    let div = divergence(v, &p.spec)?;
    let (h, w) = u.dims();
    let (uv, d, r) = (u.values(), p.d.values(), p.r.values());
    let out = (0..h * w)
        .map(|k| {
            let advect = v.vx()[k] * grad.vx()[k] + v.vy()[k] * grad.vy()[k];
            uv[k] + d[k] * lap.values()[k] - advect - uv[k] * div.values()[k] + r[k]
        })
        .collect();
    Ok(ScalarField::from_raw(h, w, out))
}

/// `n` steps from `u0`, using `v_seq[k]` for the step out of frame `k`.
pub fn rollout(u0: &ScalarField, v_seq: &[VectorField], p: &PdeParams, n: usize) -> Result<FrameSequence> {
    if v_seq.len() < n {
        return Err(mismatch("rollout velocity count", n, v_seq.len()));
    }
    let mut frames = Vec::with_capacity(n + 1);
    frames.push(u0.clone());
    for (k, v) in v_seq.iter().take(n).enumerate() {
        let next = match step(&frames[k], v, p) {
            Ok(f) => f,
            Err(Error::NonFinite { count, .. }) => {
                return Err(Error::Unstable {
                    step: k + 1,
                    cells: count,
                })
            }
            Err(e) => return Err(e),
        };
        frames.push(next);
    }
    FrameSequence::from_scalar_frames(frames, "u")
}

/// `u_next − step(u_t, v, p)`, cell-wise.
pub fn residual(u_t: &ScalarField, u_next: &ScalarField, v: &VectorField, p: &PdeParams) -> Result<ScalarField> {
    u_next.ensure_same_dims(u_t, "residual frames")?;
    check_step_dims(u_t, v, p)?;
    let predicted = step_raw(u_t, v, p)?;
    u_next.zip_map(&predicted, |a, b| a - b)
}

/// Sum over transitions and channels of the mean (over cells) squared residual.
///
/// `v_seq[t]` drives the transition from frame `t` to frame `t + 1`; every
/// channel shares the same velocity, diffusivity and source.
pub fn residual_sq_norm(frames: &FrameSequence, v_seq: &[VectorField], p: &PdeParams) -> Result<f64> {
    if frames.len() != v_seq.len() + 1 {
        return Err(mismatch("residual_sq_norm velocity count", frames.len().saturating_sub(1), v_seq.len()));
    }
    let mut total = 0.0;
    for (t, v) in v_seq.iter().enumerate() {
        for c in 0..frames.channels() {
            let r = residual(&frames.frame(t)[c], &frames.frame(t + 1)[c], v, p)?;
            total += r.mean_square();
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Stable,
    Marginal,
    Unstable,
}

/// Courant and diffusion-number limits for the explicit scheme (time step 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CflThresholds {
    pub courant_stable: f64,
    pub courant_unstable: f64,
    pub diffusion_stable: f64,
    pub diffusion_unstable: f64,
}

impl Default for CflThresholds {
    fn default() -> Self {
        Self {
            courant_stable: 0.5,
            courant_unstable: 1.0,
            diffusion_stable: 0.25,
            diffusion_unstable: 0.5,
        }
    }
}

pub fn cfl_check(v_max: f64, d_max: f64, spec: &StencilSpec) -> Stability {
    cfl_check_with(v_max, d_max, spec, &CflThresholds::default())
}

pub fn cfl_check_with(v_max: f64, d_max: f64, spec: &StencilSpec, limits: &CflThresholds) -> Stability {
    let dx = spec.spacing;
    let courant = v_max.abs() / dx;
    let diffusion = d_max / (dx * dx);
    if courant > limits.courant_unstable || diffusion > limits.diffusion_unstable {
        Stability::Unstable
    } else if courant <= limits.courant_stable && diffusion <= limits.diffusion_stable {
        Stability::Stable
    } else {
        Stability::Marginal
    }
}
