//! Categorical and continuous forecast scores by lead time, per-tag group
//! reports and the α sensitivity sweep.
//!
//! CSI counts an event where a value is at or above the threshold, and pools
//! contingency counts over samples before dividing. A zero denominator
//! leaves the score undefined; undefined scores are skipped by aggregates.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::grid::{FrameSequence, ScalarField};
use crate::operators::{ParamMaps, Tno, Vno};
use crate::training::{finetune, Divergence, Sample, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContingencyCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ContingencyCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn csi(&self) -> Option<f64> {
        csi(self)
    }
}

impl Add for ContingencyCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ContingencyCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for ContingencyCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Cell-wise hit/miss counts for the event `value ≥ threshold`.
pub fn contingency(pred: &ScalarField, truth: &ScalarField, threshold: f64) -> Result<ContingencyCounts> {
    pred.ensure_same_dims(truth, "contingency")?;
    contingency_values(pred.values(), truth.values(), threshold)
}

/// [`contingency`] over raw cell values.
pub fn contingency_values(pred: &[f64], truth: &[f64], threshold: f64) -> Result<ContingencyCounts> {
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("CSI threshold must be positive, got {threshold}")));
    }
    if pred.len() != truth.len() {
        return Err(mismatch("contingency cell count", truth.len(), pred.len()));
    }
    let mut c = ContingencyCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p >= threshold, t >= threshold) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `tp / (tp + fp + fn)`, or `None` when no event was forecast or observed.
pub fn csi(c: &ContingencyCounts) -> Option<f64> {
    let denom = c.tp + c.fp + c.fn_;
    (denom > 0).then(|| c.tp as f64 / denom as f64)
}

/// One score per (row, lead time). CSI tables have one row per threshold;
/// MSE tables have a single row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeadTimeTable {
    pub metric: String,
    /// Event thresholds in mm/h; empty for MSE.
    pub thresholds: Vec<f64>,
    /// `values[row][lead - 1]`.
    pub values: Vec<Vec<Option<f64>>>,
    /// Samples contributing to each lead time.
    pub counts: Vec<usize>,
}

impl LeadTimeTable {
    pub fn leads(&self) -> usize {
        self.counts.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        if self.thresholds.is_empty() {
            vec![self.metric.clone()]
        } else {
            self.thresholds.iter().map(|t| format!("{}_{}mm", self.metric, t)).collect()
        }
    }

    pub fn row(&self, threshold: f64) -> Option<&[Option<f64>]> {
        let i = self.thresholds.iter().position(|&t| t == threshold)?;
        Some(&self.values[i])
    }

    /// `lead,<column per row>,n`; undefined cells are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = format!("lead,{},n\n", self.column_names().join(","));
        for lead in 0..self.leads() {
            let _ = write!(out, "{}", lead + 1);
            for row in &self.values {
                out.push(',');
                if let Some(v) = row[lead] {
                    let _ = write!(out, "{v}");
                }
            }
            let _ = writeln!(out, ",{}", self.counts[lead]);
        }
        out
    }
}

fn check_aligned(preds: &[FrameSequence], truths: &[FrameSequence], s: usize) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    if preds.len() != truths.len() {
        return Err(mismatch("evaluation sample count", truths.len(), preds.len()));
    }
    for (p, t) in preds.iter().zip(truths) {
        if p.len() < s || t.len() < s {
            return Err(mismatch("evaluation lead times", s, p.len().min(t.len())));
        }
        if p.channels() != t.channels() || p.dims() != t.dims() {
            return Err(mismatch("evaluation frame shape", (t.channels(), t.dims()), (p.channels(), p.dims())));
        }
    }
    Ok(())
}

/// Contingency counts per `[threshold][lead]`, pooled over samples and
/// channels.
pub fn pooled_counts(
    preds: &[FrameSequence],
    truths: &[FrameSequence],
    thresholds: &[f64],
    s: usize,
) -> Result<Vec<Vec<ContingencyCounts>>> {
    check_aligned(preds, truths, s)?;
    let per_sample = preds
        .par_iter()
        .zip(truths)
        .map(|(p, t)| {
            thresholds
                .iter()
                .map(|&th| {
                    (0..s)
                        .map(|k| {
                            p.frame(k)
                                .iter()
                                .zip(t.frame(k))
                                .map(|(a, b)| contingency(a, b, th))
                                .sum::<Result<ContingencyCounts>>()
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pooled = vec![vec![ContingencyCounts::default(); s]; thresholds.len()];
    for sample in per_sample {
        for (row, counts) in pooled.iter_mut().zip(sample) {
            for (cell, c) in row.iter_mut().zip(counts) {
                *cell += c;
            }
        }
    }
    Ok(pooled)
}

/// Pooled CSI per threshold and lead time `1..=s`; lead `k` is frame
/// `k - 1` of each sequence.
pub fn csi_by_leadtime(
    preds: &[FrameSequence],
    truths: &[FrameSequence],
    thresholds: &[f64],
    s: usize,
) -> Result<LeadTimeTable> {
    let pooled = pooled_counts(preds, truths, thresholds, s)?;
    Ok(LeadTimeTable {
        metric: "CSI".into(),
        thresholds: thresholds.to_vec(),
        values: pooled.iter().map(|row| row.iter().map(csi).collect()).collect(),
        counts: vec![preds.len(); s],
    })
}

/// Mean square error per lead time over every sample, channel and cell.
pub fn mse_by_leadtime(preds: &[FrameSequence], truths: &[FrameSequence], s: usize) -> Result<LeadTimeTable> {
    check_aligned(preds, truths, s)?;
    let per_sample: Vec<Vec<(f64, usize)>> = preds
        .par_iter()
        .zip(truths)
        .map(|(p, t)| {
            (0..s)
                .map(|k| {
                    p.frame(k).iter().zip(t.frame(k)).fold((0.0, 0), |(sq, n), (a, b)| {
                        let d: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum();
                        (sq + d, n + a.values().len())
                    })
                })
                .collect()
        })
        .collect();
    let mut acc = vec![(0.0, 0usize); s];
    for sample in per_sample {
        for (a, (sq, n)) in acc.iter_mut().zip(sample) {
            a.0 += sq;
            a.1 += n;
        }
    }
    Ok(LeadTimeTable {
        metric: "MSE".into(),
        thresholds: Vec::new(),
        values: vec![acc.iter().map(|&(sq, n)| Some(sq / n as f64)).collect()],
        counts: vec![preds.len(); s],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub groups: BTreeMap<String, LeadTimeTable>,
    /// `spread[row][lead - 1]`: max minus min over groups with a defined
    /// score, `None` when fewer than two groups have one.
    pub spread: Vec<Vec<Option<f64>>>,
}

impl GroupReport {
    /// Largest spread over every row and lead time.
    pub fn max_spread(&self) -> Option<f64> {
        self.spread.iter().flatten().flatten().copied().reduce(f64::max)
    }

    /// `group,lead,<columns>,n` with one row per group and lead time.
    pub fn to_csv(&self) -> String {
        let Some(first) = self.groups.values().next() else {
            return String::new();
        };
        let mut out = format!("group,lead,{},n\n", first.column_names().join(","));
        for (tag, table) in &self.groups {
            for line in table.to_csv().lines().skip(1) {
                let _ = writeln!(out, "{tag},{line}");
            }
        }
        out
    }
}

/// Pooled CSI per tag, with the spread of each cell across tags.
pub fn group_report(
    preds: &[FrameSequence],
    truths: &[FrameSequence],
    tags: &[String],
    thresholds: &[f64],
    s: usize,
) -> Result<GroupReport> {
    if tags.len() != preds.len() {
        return Err(mismatch("group tags", preds.len(), tags.len()));
    }
    if tags.is_empty() {
        return Err(Error::Config("group report needs at least one tagged sample".into()));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in tags.iter().enumerate() {
        members.entry(t).or_default().push(i);
    }
    let mut groups = BTreeMap::new();
    for (tag, idx) in members {
        let p: Vec<_> = idx.iter().map(|&i| preds[i].clone()).collect();
        let t: Vec<_> = idx.iter().map(|&i| truths[i].clone()).collect();
        groups.insert(tag.to_string(), csi_by_leadtime(&p, &t, thresholds, s)?);
    }
    let spread = (0..thresholds.len())
        .map(|row| {
            (0..s)
                .map(|k| {
                    let vals: Vec<f64> = groups.values().filter_map(|g: &LeadTimeTable| g.values[row][k]).collect();
                    (vals.len() >= 2).then(|| {
                        vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                            - vals.iter().copied().fold(f64::INFINITY, f64::min)
                    })
                })
                .collect()
        })
        .collect();
    Ok(GroupReport { groups, spread })
}

/// The last frame of `history` repeated `n` times.
pub fn persistence_forecast(history: &FrameSequence, n: usize) -> Result<FrameSequence> {
    let last = history
        .frames()
        .last()
        .ok_or_else(|| Error::Config("persistence needs a non-empty history".into()))?;
    let ts = history.timestamps();
    let dt = if ts.len() >= 2 { ts[1] - ts[0] } else { 1 };
    let t0 = ts[ts.len() - 1];
    FrameSequence::new(
        vec![last.clone(); n],
        (1..=n as i64).map(|k| t0 + k * dt).collect(),
        history.channel_labels().to_vec(),
    )
}

/// Forecasts and truths over every window of `2s` frames, with the tag of
/// each window's sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet {
    pub preds: Vec<FrameSequence>,
    pub truths: Vec<FrameSequence>,
    pub tags: Vec<String>,
    /// `(sample, first history frame)` of each window.
    pub origins: Vec<(usize, usize)>,
}

/// Runs `predict(history, dem)` on each window of `2s` frames in
/// `samples`, advancing `stride` frames between windows.
pub fn forecast_set(
    samples: &[Sample],
    s: usize,
    stride: usize,
    predict: impl Fn(&FrameSequence, &ScalarField) -> Result<FrameSequence> + Sync,
) -> Result<ForecastSet> {
    if s == 0 || stride == 0 {
        return Err(Error::Config("forecast window and stride must be positive".into()));
    }
    let jobs: Vec<(usize, usize)> = samples
        .iter()
        .enumerate()
        .flat_map(|(i, x)| (0..(x.frames.len() + 1).saturating_sub(2 * s)).step_by(stride).map(move |t| (i, t)))
        .collect();
    if jobs.is_empty() {
        return Err(Error::Config(format!("no evaluation windows of {} frames", 2 * s)));
    }
    let out = jobs
        .par_iter()
        .map(|&(i, t)| {
            let x = &samples[i];
            let history = x.frames.window(t, s)?;
            Ok((predict(&history, &x.dem)?, x.frames.window(t + s, s)?, x.tag.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = ForecastSet {
        preds: Vec::with_capacity(out.len()),
        truths: Vec::with_capacity(out.len()),
        tags: Vec::with_capacity(out.len()),
        origins: jobs.clone(),
    };
    for (p, t, tag) in out {
        set.preds.push(p);
        set.truths.push(t);
        set.tags.push(tag);
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    /// MSE per lead time on the evaluation set; `None` after divergence.
    pub mse: Option<Vec<f64>>,
    pub first_l_data: Option<f64>,
    pub checkpoint_id: String,
    pub divergence: Option<Divergence>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub s: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// `alpha,lead_1..lead_s,diverged`; diverged rows leave the MSE cells
    /// empty.
    pub fn to_csv(&self) -> String {
        let leads: Vec<String> = (1..=self.s).map(|k| format!("lead_{k}")).collect();
        let mut out = format!("alpha,{},diverged\n", leads.join(","));
        for row in &self.rows {
            let _ = write!(out, "{}", row.alpha);
            for k in 0..self.s {
                out.push(',');
                if let Some(v) = row.mse.as_ref().map(|m| m[k]) {
                    let _ = write!(out, "{v}");
                }
            }
            let _ = writeln!(out, ",{}", row.divergence.is_some());
        }
        out
    }
}

/// Pretrained operators and maps shared by every row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub tno: Tno,
    pub vno: Vno,
    pub maps: ParamMaps,
}

/// Fine-tunes from `base` at one α and scores the result on `eval`.
pub fn sweep_row(
    alpha: f64,
    base: &Pretrained,
    train: &[Sample],
    eval: &[Sample],
    cfg: &TrainConfig,
) -> Result<(SweepRow, TrainOutcome)> {
    let cfg = TrainConfig { alpha, ..cfg.clone() };
    let out = finetune(train, &base.tno, &base.vno, &base.maps, &cfg)?;
    let first_l_data = out.report.steps.first().map(|s| s.l_data);
    let mse = match out.report.divergence {
        Some(_) => None,
        None => {
            let tno = Tno::from_params(base.tno.cfg.clone(), &out.params)?;
            let s = tno.cfg.s;
            let set = forecast_set(eval, s, s, |h, d| tno.predict(h, d))?;
            let table = mse_by_leadtime(&set.preds, &set.truths, s)?;
            Some(table.values[0].iter().map(|v| v.unwrap_or(f64::NAN)).collect())
        }
    };
    let row = SweepRow {
        alpha,
        mse,
        first_l_data,
        checkpoint_id: out.report.checkpoint_id.clone(),
        divergence: out.report.divergence.clone(),
    };
    Ok((row, out))
}

/// One fine-tuned model per α from shared checkpoints and seeds. A
/// diverged run is recorded in its row; configuration and I/O errors stop
/// the sweep.
pub fn alpha_sweep(
    alphas: &[f64],
    base: &Pretrained,
    train: &[Sample],
    eval: &[Sample],
    cfg: &TrainConfig,
) -> Result<SweepReport> {
    if alphas.is_empty() {
        return Err(Error::Config("alpha sweep needs at least one alpha".into()));
    }
    let rows = alphas
        .iter()
        .map(|&a| sweep_row(a, base, train, eval, cfg).map(|(row, _)| row))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        s: base.tno.cfg.s,
        rows,
    })
}
