//! Losses, the optimizer and the two-stage training protocol.
//!
//! Stage one trains the operators apart: [`pretrain_tno`] on the
//! reconstruction loss against ground truth, [`pretrain_vno`] on the PDE
//! residual of ground-truth frames, jointly with the coefficient maps.
//! Stage two, [`finetune`], chains them: the V-NO reads the T-NO's
//! predictions, and the objective is `L_data + α·L_PDE` over the predicted
//! frames.

mod adam;
mod data;
mod loss;
mod stages;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Dtype, ParamSet};
use crate::error::{Error, Result};

pub use adam::Adam;
pub use data::{stack_dems, stack_frames, windows, BatchSampler, Sample};
pub use loss::{data_loss_node, loss_data, loss_pde, loss_total, pde_loss_node};
pub use stages::{
    finetune, finetune_graph, finetune_inputs, pretrain_tno, pretrain_vno, train_translator, FinetuneNodes, Inputs,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the residual loss during fine-tuning.
    pub alpha: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    /// Also penalise the residual from the last observed frame to the first
    /// prediction.
    pub seam_pair: bool,
    /// Hold the coefficient maps at their initial values.
    pub freeze_maps: bool,
    pub precision: Dtype,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lr: 1e-3,
            steps: 200,
            batch: 4,
            seed: 0,
            seam_pair: false,
            freeze_maps: false,
            precision: Dtype::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            problems.push(format!("train.alpha must be a finite value ≥ 0 (got {})", self.alpha));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            problems.push(format!("train.lr must be a finite value ≥ 0 (got {})", self.lr));
        }
        if self.batch == 0 {
            problems.push("train.batch must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub l_data: f64,
    pub l_pde: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Losses before the update of each step.
    pub steps: Vec<StepLog>,
    pub wall_time_s: f64,
    /// Digest of the final checkpoint bytes.
    pub checkpoint_id: String,
    pub eval_summary: Option<String>,
    /// Set when a step produced a non-finite loss or gradient; training
    /// stopped there and the parameters are those from before that step.
    pub divergence: Option<Divergence>,
}

impl TrainReport {
    /// `step,L_data,L_PDE,L_total` with one row per completed step.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("step,L_data,L_PDE,L_total\n");
        for s in &self.steps {
            let _ = writeln!(out, "{},{},{},{}", s.step, s.l_data, s.l_pde, s.l_total);
        }
        out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.l_total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ParamSet<f64>,
    pub report: TrainReport,
}

impl TrainOutcome {
    pub fn ensure_converged(&self) -> Result<()> {
        match &self.report.divergence {
            None => Ok(()),
            Some(d) => Err(Error::Divergence {
                step: d.step,
                reason: d.reason.clone(),
            }),
        }
    }
}
