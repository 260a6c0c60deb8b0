use crate::autodiff::{DiffGraph, NodeId, ParamSet, Real, Tensor4};
use crate::error::{mismatch, Error, Result};
use crate::grid::{ScalarField, StencilSpec};
use crate::pde::PdeParams;

pub const D_SQRT_NAME: &str = "maps.d_sqrt";
pub const R_NAME: &str = "maps.r";

/// Per-cell diffusivity and source shared by every sequence.
///
/// Diffusivity is stored through `θ` with `D = θ ∘ θ`, so no optimizer step
/// can push it below zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMaps {
    d_sqrt: ScalarField,
    r: ScalarField,
}

/// `D ≡ 1`, `R ≡ 0`.
pub fn init_param_maps(height: usize, width: usize) -> Result<ParamMaps> {
    Ok(ParamMaps {
        d_sqrt: ScalarField::constant(height, width, 1.0)?,
        r: ScalarField::zeros(height, width)?,
    })
}

impl ParamMaps {
    pub fn new(d: &ScalarField, r: ScalarField) -> Result<Self> {
        d.ensure_same_dims(&r, "ParamMaps")?;
        if d.min() < 0.0 {
            return Err(Error::Config("diffusivity must be non-negative".into()));
        }
        Ok(Self {
            d_sqrt: d.map(f64::sqrt),
            r,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.r.dims()
    }

    pub fn d(&self) -> ScalarField {
        self.d_sqrt.map(|t| t * t)
    }

    pub fn d_sqrt(&self) -> &ScalarField {
        &self.d_sqrt
    }

    pub fn r(&self) -> &ScalarField {
        &self.r
    }

    pub fn to_pde_params(&self) -> Result<PdeParams> {
        PdeParams::new(self.d(), self.r.clone(), StencilSpec::default())
    }

    pub fn to_params(&self) -> ParamSet<f64> {
        let mut set = ParamSet::new();
        set.insert(D_SQRT_NAME, field_tensor(&self.d_sqrt));
        set.insert(R_NAME, field_tensor(&self.r));
        set
    }

    pub fn from_params(set: &ParamSet<f64>) -> Result<Self> {
        let theta = set.get(D_SQRT_NAME)?;
        let r = set.get(R_NAME)?;
        if theta.dims() != r.dims() || theta.dims()[..2] != [1, 1] {
            return Err(mismatch("ParamMaps tensors", theta.dims(), r.dims()));
        }
        let [_, _, h, w] = theta.dims();
        Ok(Self {
            d_sqrt: ScalarField::new(h, w, theta.to_f64_vec())?,
            r: ScalarField::new(h, w, r.to_f64_vec())?,
        })
    }

    /// Adds `θ` and `R` as trainable parameters and returns `(D, R)` nodes.
    pub fn on_graph<T: Real>(&self, g: &mut DiffGraph<T>) -> Result<(NodeId, NodeId)> {
        self.on_graph_with(g, true)
    }

    /// As [`ParamMaps::on_graph`], with the maps held fixed unless
    /// `trainable`.
    pub fn on_graph_with<T: Real>(&self, g: &mut DiffGraph<T>, trainable: bool) -> Result<(NodeId, NodeId)> {
        let add = |g: &mut DiffGraph<T>, name: &str, f: &ScalarField| {
            let t = field_tensor(f).cast();
            if trainable {
                g.param(name, t)
            } else {
                g.frozen_param(name, t)
            }
        };
        let theta = add(g, D_SQRT_NAME, &self.d_sqrt)?;
        let r = add(g, R_NAME, &self.r)?;
        let d = g.mul(theta, theta)?;
        Ok((d, r))
    }
}

fn field_tensor(f: &ScalarField) -> Tensor4<f64> {
    let (h, w) = f.dims();
    Tensor4::new([1, 1, h, w], f.values().to_vec()).expect("field dims")
}
