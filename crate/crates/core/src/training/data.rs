use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Real, Tensor4};
use crate::error::{Error, Result};
use crate::grid::{FrameSequence, ScalarField};
use crate::operators::{field_to_tensor, frames_to_tensor};
use crate::rng::seeded;
use crate::scenario::{synthetic_dem, SyntheticScenario};

/// One frame sequence with its elevation map and a grouping tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frames: FrameSequence,
    pub dem: ScalarField,
    pub tag: String,
}

impl Sample {
    /// Scenario frames with a seeded synthetic elevation map, tagged by kind.
    pub fn from_scenario(sc: &SyntheticScenario) -> Result<Self> {
        let dims = sc.frames.dims().ok_or_else(|| Error::Dimension("empty scenario".into()))?;
        Ok(Self {
            frames: sc.frames.clone(),
            dem: synthetic_dem(dims, sc.seed)?,
            tag: sc.kind.to_string(),
        })
    }
}

/// `(sample, start frame)` for every window of `len` frames.
pub fn windows(samples: &[Sample], len: usize) -> Vec<(usize, usize)> {
    samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..(s.frames.len() + 1).saturating_sub(len)).map(move |t| (i, t)))
        .collect()
}

/// Endless stream of window batches: a seeded shuffle per pass, drawn in
/// order, reshuffled when exhausted.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    windows: Vec<(usize, usize)>,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(windows: Vec<(usize, usize)>, seed: u64) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Config("no training windows: sequences are shorter than the window".into()));
        }
        let mut rng = seeded(seed, "shuffle");
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            windows,
            order,
            pos: 0,
            rng,
        })
    }

    pub fn next_batch(&mut self, batch: usize) -> Vec<(usize, usize)> {
        (0..batch)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.windows[self.order[self.pos - 1]]
            })
            .collect()
    }
}

/// Frames `[start + offset, start + offset + len)` of each window, stacked
/// into a batch.
pub fn stack_frames<T: Real>(samples: &[Sample], batch: &[(usize, usize)], offset: usize, len: usize) -> Result<Tensor4<T>> {
    let parts = batch
        .iter()
        .map(|&(i, t)| frames_to_tensor(&samples[i].frames, t + offset, len))
        .collect::<Result<Vec<_>>>()?;
    Tensor4::stack(&parts)
}

pub fn stack_dems<T: Real>(samples: &[Sample], batch: &[(usize, usize)]) -> Result<Tensor4<T>> {
    let parts: Vec<Tensor4<T>> = batch.iter().map(|&(i, _)| field_to_tensor(&samples[i].dem)).collect();
    Tensor4::stack(&parts)
}
