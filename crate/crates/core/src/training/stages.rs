use std::collections::BTreeMap;
use std::time::Instant;

use super::adam::Adam;
use super::data::{stack_dems, stack_frames, windows, BatchSampler, Sample};
use super::loss::{data_loss_node, pde_loss_node};
use super::{Divergence, StepLog, TrainConfig, TrainOutcome, TrainReport};
use crate::autodiff::{DiffGraph, Dtype, NodeId, ParamSet, Real, Tensor4};
use crate::error::{mismatch, Error, Result};
use crate::grid::FrameSequence;
use crate::io::{checkpoint_bytes_as, digest};
use crate::operators::{
    frames_to_tensor, tno_on, translator_on, vno_on, NormStats, ParamMaps, Tno, TnoConfig, Translator,
    TranslatorConfig, Vno, VnoConfig,
};

pub type Inputs<T> = BTreeMap<String, Tensor4<T>>;

struct Losses {
    data: Option<NodeId>,
    pde: Option<NodeId>,
    total: NodeId,
}

/// Forward, log, backward, update; stops early on a non-finite loss,
/// activation or gradient.
fn train_loop<T: Real>(
    g: &mut DiffGraph<T>,
    losses: &Losses,
    cfg: &TrainConfig,
    sampler: &mut BatchSampler,
    mut feed: impl FnMut(&[(usize, usize)]) -> Result<Inputs<T>>,
) -> Result<(Vec<StepLog>, Option<Divergence>)> {
    let mut opt = Adam::new(cfg.lr);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let inputs = feed(&sampler.next_batch(cfg.batch))?;
        match g.forward(&inputs) {
            Ok(_) => {}
            Err(Error::NanInGraph { node, op }) => {
                let reason = format!("non-finite activation at node {node} ({op})");
                return Ok((log, Some(Divergence { step, reason })));
            }
            Err(e) => return Err(e),
        }
        let read = |id: NodeId| g.value(id).map(|t| t.item().as_f64()).unwrap_or(0.0);
        let entry = StepLog {
            step,
            l_data: losses.data.map_or(0.0, read),
            l_pde: losses.pde.map_or(0.0, read),
            l_total: read(losses.total),
        };
        if !entry.l_total.is_finite() {
            return Ok((log, Some(Divergence { step, reason: "non-finite loss".into() })));
        }
        g.backward(losses.total)?;
        if g.params().iter().any(|p| p.trainable && !p.grad.is_finite()) {
            return Ok((log, Some(Divergence { step, reason: "non-finite gradient".into() })));
        }
        log.push(entry);
        opt.step(g);
    }
    Ok((log, None))
}

fn outcome<T: Real>(
    g: &DiffGraph<T>,
    prefixes: &[&str],
    (steps, divergence): (Vec<StepLog>, Option<Divergence>),
    started: Instant,
    precision: Dtype,
) -> TrainOutcome {
    let all = g.export_params().cast::<f64>();
    let mut params = ParamSet::new();
    for p in prefixes {
        params.merge(&all.with_prefix(p));
    }
    TrainOutcome {
        report: TrainReport {
            steps,
            wall_time_s: started.elapsed().as_secs_f64(),
            checkpoint_id: digest(&checkpoint_bytes_as(&params, precision)),
            eval_summary: None,
            divergence,
        },
        params,
    }
}

fn data_stats(samples: &[Sample]) -> Result<NormStats> {
    let seqs: Vec<&FrameSequence> = samples.iter().map(|s| &s.frames).collect();
    let dems: Vec<_> = samples.iter().map(|s| &s.dem).collect();
    NormStats::fit(&seqs, &dems)
}

fn sample_dims(samples: &[Sample]) -> Result<(usize, usize)> {
    let first = samples.first().ok_or_else(|| Error::Config("empty training set".into()))?;
    let dims = first.frames.dims().ok_or_else(|| Error::Config("empty training sequence".into()))?;
    for s in samples {
        if s.frames.dims() != Some(dims) || s.dem.dims() != dims {
            return Err(mismatch("training sample dims", dims, s.frames.dims()));
        }
    }
    Ok(dims)
}

/// Supervised training of a fresh T-NO on `(s in, s out)` windows.
pub fn pretrain_tno(samples: &[Sample], tno: &TnoConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    tno.validate()?;
    match cfg.precision {
        Dtype::F32 => pretrain_tno_as::<f32>(samples, tno, cfg),
        Dtype::F64 => pretrain_tno_as::<f64>(samples, tno, cfg),
    }
}

fn pretrain_tno_as<T: Real>(samples: &[Sample], tno: &TnoConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let started = Instant::now();
    let (h, w) = sample_dims(samples)?;
    let s = tno.s;
    let mut sampler = BatchSampler::new(windows(samples, 2 * s), cfg.seed)?;
    let mut g = DiffGraph::<T>::new();
    let history = g.input("history", [s * tno.channels, h, w])?;
    let dem = g.input("dem", [1, h, w])?;
    let target = g.input("target", [s * tno.channels, h, w])?;
    let pred = tno_on(&mut g, tno, history, dem, &data_stats(samples)?, cfg.seed)?;
    let l_data = data_loss_node(&mut g, pred, target, s)?;
    let losses = Losses {
        data: Some(l_data),
        pde: None,
        total: l_data,
    };
    let run = train_loop(&mut g, &losses, cfg, &mut sampler, |b| {
        Ok(BTreeMap::from([
            ("history".to_string(), stack_frames(samples, b, 0, s)?),
            ("target".to_string(), stack_frames(samples, b, s, s)?),
            ("dem".to_string(), stack_dems(samples, b)?),
        ]))
    })?;
    Ok(outcome(&g, &["tno."], run, started, cfg.precision))
}

/// Residual-only training of a fresh V-NO and of `maps` on windows of
/// `s + 1` ground-truth frames. The V-NO sees the last `s`; its field 0 is
/// scored on the step from the first frame into the second.
pub fn pretrain_vno(samples: &[Sample], vno: &VnoConfig, maps: &ParamMaps, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    vno.validate()?;
    match cfg.precision {
        Dtype::F32 => pretrain_vno_as::<f32>(samples, vno, maps, cfg),
        Dtype::F64 => pretrain_vno_as::<f64>(samples, vno, maps, cfg),
    }
}

fn pretrain_vno_as<T: Real>(
    samples: &[Sample],
    vno: &VnoConfig,
    maps: &ParamMaps,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    let dims = sample_dims(samples)?;
    if maps.dims() != dims {
        return Err(mismatch("coefficient map dims", dims, maps.dims()));
    }
    let (s, c) = (vno.s, vno.channels);
    let mut sampler = BatchSampler::new(windows(samples, s + 1), cfg.seed)?;
    let mut g = DiffGraph::<T>::new();
    let frames = g.input("frames", [(s + 1) * c, dims.0, dims.1])?;
    let seen = g.slice_channels(frames, c, s * c)?;
    let v = vno_on(&mut g, vno, seen, &data_stats(samples)?, cfg.seed)?;
    let (d, r) = maps.on_graph_with(&mut g, !cfg.freeze_maps)?;
    let l_pde = pde_loss_node(&mut g, frames, v, d, r, c)?;
    let losses = Losses {
        data: None,
        pde: Some(l_pde),
        total: l_pde,
    };
    let run = train_loop(&mut g, &losses, cfg, &mut sampler, |b| {
        Ok(BTreeMap::from([("frames".to_string(), stack_frames(samples, b, 0, s + 1)?)]))
    })?;
    Ok(outcome(&g, &["vno.", "maps."], run, started, cfg.precision))
}

/// Joint training of both operators and the maps on
/// `L_data + α·L_PDE`, with the V-NO reading T-NO predictions.
pub fn finetune(samples: &[Sample], tno: &Tno, vno: &Vno, maps: &ParamMaps, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    match cfg.precision {
        Dtype::F32 => finetune_as::<f32>(samples, tno, vno, maps, cfg),
        Dtype::F64 => finetune_as::<f64>(samples, tno, vno, maps, cfg),
    }
}

/// Nodes of the fine-tuning graph built by [`finetune_graph`]. Its inputs
/// are `history`, `dem` and `target`.
#[derive(Debug, Clone, Copy)]
pub struct FinetuneNodes {
    pub pred: NodeId,
    pub velocity: NodeId,
    pub l_data: NodeId,
    pub l_pde: NodeId,
    pub total: NodeId,
}

/// The graph [`finetune`] optimizes on an `h × w` grid, with both operators
/// and the maps loaded.
pub fn finetune_graph<T: Real>(
    tno: &Tno,
    vno: &Vno,
    maps: &ParamMaps,
    cfg: &TrainConfig,
    (h, w): (usize, usize),
) -> Result<(DiffGraph<T>, FinetuneNodes)> {
    if tno.cfg.s != vno.cfg.s || tno.cfg.channels != vno.cfg.channels {
        return Err(Error::Config(format!(
            "incompatible checkpoints: tno (s={}, C={}) vs vno (s={}, C={})",
            tno.cfg.s, tno.cfg.channels, vno.cfg.s, vno.cfg.channels
        )));
    }
    if maps.dims() != (h, w) {
        return Err(mismatch("coefficient map dims", (h, w), maps.dims()));
    }
    let (s, c) = (tno.cfg.s, tno.cfg.channels);
    let mut g = DiffGraph::<T>::new();
    let history = g.input("history", [s * c, h, w])?;
    let dem = g.input("dem", [1, h, w])?;
    let target = g.input("target", [s * c, h, w])?;
    let identity = NormStats::identity(c);
    let pred = tno_on(&mut g, &tno.cfg, history, dem, &identity, cfg.seed)?;
    let v = vno_on(&mut g, &vno.cfg, pred, &identity, cfg.seed)?;
    let (d, r) = maps.on_graph_with(&mut g, !cfg.freeze_maps)?;
    g.load_params(&tno.params.cast())?;
    g.load_params(&vno.params.cast())?;

    let l_pde = if cfg.seam_pair {
        let last = g.slice_channels(history, (s - 1) * c, c)?;
        let frames = g.concat(&[last, pred])?;
        pde_loss_node(&mut g, frames, v, d, r, c)?
    } else if s > 1 {
        let fields = g.slice_channels(v, 2, 2 * (s - 1))?;
        pde_loss_node(&mut g, pred, fields, d, r, c)?
    } else {
        g.constant(Tensor4::scalar(T::zero()))
    };
    let l_data = data_loss_node(&mut g, pred, target, s)?;
    let weighted = g.scale(l_pde, cfg.alpha);
    let total = g.add(l_data, weighted)?;
    let nodes = FinetuneNodes {
        pred,
        velocity: v,
        l_data,
        l_pde,
        total,
    };
    Ok((g, nodes))
}

/// `history`, `target` and `dem` tensors for a batch of `2s`-frame windows.
pub fn finetune_inputs<T: Real>(samples: &[Sample], batch: &[(usize, usize)], s: usize) -> Result<Inputs<T>> {
    Ok(BTreeMap::from([
        ("history".to_string(), stack_frames(samples, batch, 0, s)?),
        ("target".to_string(), stack_frames(samples, batch, s, s)?),
        ("dem".to_string(), stack_dems(samples, batch)?),
    ]))
}

fn finetune_as<T: Real>(
    samples: &[Sample],
    tno: &Tno,
    vno: &Vno,
    maps: &ParamMaps,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    let dims = sample_dims(samples)?;
    let s = tno.cfg.s;
    let mut sampler = BatchSampler::new(windows(samples, 2 * s), cfg.seed)?;
    let (mut g, nodes) = finetune_graph::<T>(tno, vno, maps, cfg, dims)?;
    let losses = Losses {
        data: Some(nodes.l_data),
        pde: Some(nodes.l_pde),
        total: nodes.total,
    };
    let run = train_loop(&mut g, &losses, cfg, &mut sampler, |b| finetune_inputs(samples, b, s))?;
    Ok(outcome(&g, &["tno.", "vno.", "maps."], run, started, cfg.precision))
}

/// Supervised fit of the satellite-to-rain translator on paired frames.
pub fn train_translator(
    sat: &[FrameSequence],
    radar: &[FrameSequence],
    tcfg: &TranslatorConfig,
    cfg: &TrainConfig,
) -> Result<(Translator, TrainReport)> {
    cfg.validate()?;
    tcfg.validate()?;
    if sat.len() != radar.len() || sat.is_empty() {
        return Err(Error::Config(format!(
            "unpaired translator data: {} satellite vs {} radar sequences",
            sat.len(),
            radar.len()
        )));
    }
    for (i, (a, b)) in sat.iter().zip(radar).enumerate() {
        if a.len() != b.len() || a.dims() != b.dims() || b.channels() != 1 || a.channels() != tcfg.channels {
            return Err(Error::Config(format!(
                "unpaired translator data in pair {i}: satellite {}×{}ch {:?} vs radar {}×{}ch {:?}",
                a.len(),
                a.channels(),
                a.dims(),
                b.len(),
                b.channels(),
                b.dims()
            )));
        }
    }
    match cfg.precision {
        Dtype::F32 => train_translator_as::<f32>(sat, radar, tcfg, cfg),
        Dtype::F64 => train_translator_as::<f64>(sat, radar, tcfg, cfg),
    }
}

fn train_translator_as<T: Real>(
    sat: &[FrameSequence],
    radar: &[FrameSequence],
    tcfg: &TranslatorConfig,
    cfg: &TrainConfig,
) -> Result<(Translator, TrainReport)> {
    let started = Instant::now();
    let (h, w) = sat[0].dims().ok_or_else(|| Error::Config("empty satellite sequence".into()))?;
    let refs: Vec<&FrameSequence> = sat.iter().collect();
    let stats = NormStats::fit(&refs, &[])?.channels;
    let pairs: Vec<(usize, usize)> = sat.iter().enumerate().flat_map(|(i, s)| (0..s.len()).map(move |t| (i, t))).collect();
    let mut sampler = BatchSampler::new(pairs, cfg.seed)?;
    let mut g = DiffGraph::<T>::new();
    let x = g.input("sat", [tcfg.channels, h, w])?;
    let target = g.input("rain", [1, h, w])?;
    let y = translator_on(&mut g, tcfg, x, &stats, cfg.seed)?;
    let l_data = data_loss_node(&mut g, y, target, 1)?;
    let losses = Losses {
        data: Some(l_data),
        pde: None,
        total: l_data,
    };
    let run = train_loop(&mut g, &losses, cfg, &mut sampler, |b| {
        let xs = b.iter().map(|&(i, t)| frames_to_tensor(&sat[i], t, 1)).collect::<Result<Vec<_>>>()?;
        let ys = b.iter().map(|&(i, t)| frames_to_tensor(&radar[i], t, 1)).collect::<Result<Vec<_>>>()?;
        Ok(BTreeMap::from([
            ("sat".to_string(), Tensor4::stack(&xs)?),
            ("rain".to_string(), Tensor4::stack(&ys)?),
        ]))
    })?;
    let out = outcome(&g, &["translator."], run, started, cfg.precision);
    let translator = Translator {
        cfg: tcfg.clone(),
        params: out.params,
        trained: out.report.divergence.is_none() && !out.report.steps.is_empty(),
    };
    Ok((translator, out.report))
}
