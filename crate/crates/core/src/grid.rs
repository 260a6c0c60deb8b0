//! Gridded field types and the finite-difference stencils shared by the
//! explicit solver and the physics-informed loss.
//!
//! Fields are row-major: cell `(i, j)` is row `i` (the y axis) and column `j`
//! (the x axis). All stencils are second-order central differences with
//! replicate (clamp-to-edge) padding, which makes the boundary zero-flux.

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

/// Smallest grid edge a 3-point stencil can act on with a non-empty interior.
pub const MIN_EDGE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ScalarField {
    /// Builds a field from row-major values, rejecting undersized grids and
    /// non-finite entries.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if values.len() != height * width {
            return Err(mismatch("ScalarField values", height * width, values.len()));
        }
        let bad = values.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(Error::NonFinite {
                context: "ScalarField".into(),
                count: bad,
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::constant(height, width, 0.0)
    }

    /// `f(i, j)` evaluated at every cell (row `i`, column `j`).
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                values.push(f(i, j));
            }
        }
        Self::new(height, width, values)
    }

    // Skips validation; callers guarantee dims and finiteness or check later.
    pub(crate) fn from_raw(height: usize, width: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    /// Value at a possibly out-of-range index, clamped to the nearest edge.
    #[inline]
    pub fn get_clamped(&self, i: isize, j: isize) -> f64 {
        let i = i.clamp(0, self.height as isize - 1) as usize;
        let j = j.clamp(0, self.width as isize - 1) as usize;
        self.values[i * self.width + j]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean_square(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64
    }

    pub fn non_finite_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_finite()).count()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.height, self.width, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Cell-wise combination of two same-sized fields.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_dims(other, "zip_map")?;
        Ok(Self::from_raw(
            self.height,
            self.width,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn ensure_same_dims(&self, other: &Self, context: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(mismatch(context, self.dims(), other.dims()));
        }
        Ok(())
    }
}

/// Two-component velocity per cell, in cells per frame interval.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    height: usize,
    width: usize,
    vx: Vec<f64>,
    vy: Vec<f64>,
}

impl VectorField {
    pub fn new(height: usize, width: usize, vx: Vec<f64>, vy: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        let n = height * width;
        if vx.len() != n || vy.len() != n {
            return Err(mismatch("VectorField components", (n, n), (vx.len(), vy.len())));
        }
        let bad = vx.iter().chain(&vy).filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(Error::NonFinite {
                context: "VectorField".into(),
                count: bad,
            });
        }
        Ok(Self {
            height,
            width,
            vx,
            vy,
        })
    }

    pub fn from_components(vx: ScalarField, vy: ScalarField) -> Result<Self> {
        vx.ensure_same_dims(&vy, "VectorField components")?;
        let (h, w) = vx.dims();
        Ok(Self {
            height: h,
            width: w,
            vx: vx.into_values(),
            vy: vy.into_values(),
        })
    }

    pub fn uniform(height: usize, width: usize, vx: f64, vy: f64) -> Result<Self> {
        Self::new(height, width, vec![vx; height * width], vec![vy; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::uniform(height, width, 0.0, 0.0)
    }

    /// `f(i, j) -> (vx, vy)` evaluated at every cell.
    pub fn from_fn(
        height: usize,
        width: usize,
        f: impl Fn(usize, usize) -> (f64, f64),
    ) -> Result<Self> {
        let n = height * width;
        let (mut vx, mut vy) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..height {
            for j in 0..width {
                let (a, b) = f(i, j);
                vx.push(a);
                vy.push(b);
            }
        }
        Self::new(height, width, vx, vy)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn vx(&self) -> &[f64] {
        &self.vx
    }

    pub fn vy(&self) -> &[f64] {
        &self.vy
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> (f64, f64) {
        let k = i * self.width + j;
        (self.vx[k], self.vy[k])
    }

    pub fn x_component(&self) -> ScalarField {
        ScalarField::from_raw(self.height, self.width, self.vx.clone())
    }

    pub fn y_component(&self) -> ScalarField {
        ScalarField::from_raw(self.height, self.width, self.vy.clone())
    }

    /// Largest absolute value of either component.
    pub fn max_component(&self) -> f64 {
        self.vx
            .iter()
            .chain(&self.vy)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest Euclidean speed.
    pub fn max_speed(&self) -> f64 {
        self.vx
            .iter()
            .zip(&self.vy)
            .fold(0.0, |m, (a, b)| m.max(a.hypot(*b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Central2ndOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    #[default]
    Replicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StencilSpec {
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default = "unit_spacing")]
    pub spacing: f64,
}

fn unit_spacing() -> f64 {
    1.0
}

impl Default for StencilSpec {
    fn default() -> Self {
        Self {
            scheme: Scheme::Central2ndOrder,
            boundary: Boundary::Replicate,
            spacing: 1.0,
        }
    }
}

impl StencilSpec {
    pub fn with_spacing(spacing: f64) -> Result<Self> {
        let spec = Self {
            spacing,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::Config(format!(
                "stencil spacing must be positive, got {}",
                self.spacing
            )));
        }
        Ok(())
    }

    /// 3×3 cross-correlation kernels `[d/dx, d/dy, laplacian]`, row-major,
    /// matching [`gradient`] and [`laplacian`] (to rounding) under replicate padding.
    pub fn kernels(&self) -> [[f64; 9]; 3] {
        let h = 0.5 / self.spacing;
        let l = 1.0 / (self.spacing * self.spacing);
        [
            [0.0, 0.0, 0.0, -h, 0.0, h, 0.0, 0.0, 0.0],
            [0.0, -h, 0.0, 0.0, 0.0, 0.0, 0.0, h, 0.0],
            [0.0, l, 0.0, l, -4.0 * l, l, 0.0, l, 0.0],
        ]
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height < MIN_EDGE || width < MIN_EDGE {
        return Err(Error::Dimension(format!(
            "grid {height}x{width} is below the {MIN_EDGE}x{MIN_EDGE} stencil minimum"
        )));
    }
    Ok(())
}

/// Central-difference gradient `(df/dx, df/dy)`.
pub fn gradient(f: &ScalarField, spec: &StencilSpec) -> Result<VectorField> {
    spec.validate()?;
    check_dims(f.height, f.width)?;
    let (h, w) = f.dims();
    let inv = 0.5 / spec.spacing;
    let mut gx = Vec::with_capacity(h * w);
    let mut gy = Vec::with_capacity(h * w);
    for i in 0..h as isize {
        for j in 0..w as isize {
            gx.push((f.get_clamped(i, j + 1) - f.get_clamped(i, j - 1)) * inv);
            gy.push((f.get_clamped(i + 1, j) - f.get_clamped(i - 1, j)) * inv);
        }
    }
    Ok(VectorField {
        height: h,
        width: w,
        vx: gx,
        vy: gy,
    })
}

/// `d(vx)/dx + d(vy)/dy` with the same central scheme as [`gradient`].
pub fn divergence(v: &VectorField, spec: &StencilSpec) -> Result<ScalarField> {
    spec.validate()?;
    check_dims(v.height, v.width)?;
    if v.vx.len() != v.vy.len() {
        return Err(mismatch("divergence components", v.vx.len(), v.vy.len()));
    }
    let vx = ScalarField::from_raw(v.height, v.width, v.vx.clone());
    let vy = ScalarField::from_raw(v.height, v.width, v.vy.clone());
    let inv = 0.5 / spec.spacing;
    let mut out = Vec::with_capacity(v.height * v.width);
    for i in 0..v.height as isize {
        for j in 0..v.width as isize {
            let dx = (vx.get_clamped(i, j + 1) - vx.get_clamped(i, j - 1)) * inv;
            let dy = (vy.get_clamped(i + 1, j) - vy.get_clamped(i - 1, j)) * inv;
            out.push(dx + dy);
        }
    }
    Ok(ScalarField::from_raw(v.height, v.width, out))
}

/// Five-point Laplacian.
pub fn laplacian(f: &ScalarField, spec: &StencilSpec) -> Result<ScalarField> {
    spec.validate()?;
    check_dims(f.height, f.width)?;
    let inv = 1.0 / (spec.spacing * spec.spacing);
    let mut out = Vec::with_capacity(f.height * f.width);
    for i in 0..f.height as isize {
        for j in 0..f.width as isize {
            let c = f.get_clamped(i, j);
            let s = f.get_clamped(i, j - 1)
                + f.get_clamped(i, j + 1)
                + f.get_clamped(i - 1, j)
                + f.get_clamped(i + 1, j);
            out.push((s - 4.0 * c) * inv);
        }
    }
    Ok(ScalarField::from_raw(f.height, f.width, out))
}

/// One multi-channel frame.
pub type Frame = Vec<ScalarField>;

/// Ordered multi-channel frames with uniformly spaced integer timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    timestamps: Vec<i64>,
    channel_labels: Vec<String>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, timestamps: Vec<i64>, channel_labels: Vec<String>) -> Result<Self> {
        if frames.len() != timestamps.len() {
            return Err(mismatch("FrameSequence timestamps", frames.len(), timestamps.len()));
        }
        let c = channel_labels.len();
        if c == 0 {
            return Err(Error::Dimension("FrameSequence needs at least one channel".into()));
        }
        let dims = frames.first().and_then(|f| f.first()).map(ScalarField::dims);
        for (t, frame) in frames.iter().enumerate() {
            if frame.len() != c {
                return Err(mismatch(format!("channel count of frame {t}"), c, frame.len()));
            }
            for ch in frame {
                if Some(ch.dims()) != dims {
                    return Err(mismatch(format!("dims of frame {t}"), dims, ch.dims()));
                }
            }
        }
        if timestamps.len() >= 2 {
            let dt = timestamps[1] - timestamps[0];
            if dt <= 0 {
                return Err(Error::Config("timestamps must be strictly increasing".into()));
            }
            if timestamps.windows(2).any(|p| p[1] - p[0] != dt) {
                return Err(Error::Config("timestamps must be uniformly spaced".into()));
            }
        }
        Ok(Self {
            frames,
            timestamps,
            channel_labels,
        })
    }

    /// Single-channel sequence with timestamps `0..n`.
    pub fn from_scalar_frames(frames: Vec<ScalarField>, label: &str) -> Result<Self> {
        let n = frames.len() as i64;
        Self::new(
            frames.into_iter().map(|f| vec![f]).collect(),
            (0..n).collect(),
            vec![label.to_string()],
        )
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channel_labels.len()
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    /// `(height, width)` of every channel, if there is at least one frame.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| f[0].dims())
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Frame {
        &self.frames[t]
    }

    /// All frames of one channel.
    pub fn channel(&self, c: usize) -> Vec<&ScalarField> {
        self.frames.iter().map(|f| &f[c]).collect()
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames.len() {
            return Err(mismatch("window end", self.frames.len(), start + len));
        }
        Ok(Self {
            frames: self.frames[start..start + len].to_vec(),
            timestamps: self.timestamps[start..start + len].to_vec(),
            channel_labels: self.channel_labels.clone(),
        })
    }
}
