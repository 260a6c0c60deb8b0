use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::ValueEnum;
use nowcast_core::autodiff::ParamSet;
use nowcast_core::io::{checkpoint_bytes_as, read_checkpoint, write_gfs1, write_pgm};
use nowcast_core::metrics::{
    csi_by_leadtime, forecast_set, group_report, mse_by_leadtime, persistence_forecast, sweep_row, ForecastSet,
    LeadTimeTable, Pretrained, SweepReport,
};
use nowcast_core::operators::{head_translate, ParamMaps, Tno, Translator, Vno};
use nowcast_core::scenario::couple_rain;
use nowcast_core::training::{finetune, pretrain_tno, pretrain_vno, train_translator, Sample, TrainOutcome, TrainReport};
use nowcast_core::{Error, FrameSequence, ScalarField};

use crate::config::{Predictor, RainSource, RunConfig};
use crate::dataset::{generate, ids, load_radar, load_samples, require};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Tno,
    Vno,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Tno => "tno",
            Stage::Vno => "vno",
            Stage::Finetune => "finetune",
        }
    }

    fn checkpoint(self) -> String {
        format!("{}.ckpt", self.name())
    }
}

fn write(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(Error::from)?;
    Ok(())
}

fn load_params(cfg: &RunConfig, file: &str, what: &str) -> Result<ParamSet<f64>> {
    let path = require(cfg.paths.checkpoints.join(file), what)?;
    Ok(read_checkpoint(&path)?)
}

fn report_text(stage: &str, report: &TrainReport) -> String {
    let mut out = format!("stage: {stage}\nsteps: {}\n", report.steps.len());
    if let Some(l) = report.final_loss() {
        let _ = writeln!(out, "final_loss: {l}");
    }
    let _ = writeln!(out, "checkpoint_id: {}", report.checkpoint_id);
    let _ = writeln!(out, "wall_time_s: {:.3}", report.wall_time_s);
    if let Some(d) = &report.divergence {
        let _ = writeln!(out, "diverged_at_step: {}\nreason: {}", d.step, d.reason);
    }
    out
}

/// Checkpoint, metrics and report of a training run; a diverged run still
/// writes them before failing.
fn write_outcome(cfg: &RunConfig, out: &Path, stage: &str, outcome: &TrainOutcome) -> Result<()> {
    write_stage(cfg, out, stage, &outcome.params, &outcome.report)
}

/// `<stage>.ckpt`, `<stage>.metrics.csv` and `<stage>.report.txt`.
fn write_stage(cfg: &RunConfig, out: &Path, stage: &str, params: &ParamSet<f64>, report: &TrainReport) -> Result<()> {
    write(out.join(format!("{stage}.ckpt")), checkpoint_bytes_as(params, cfg.train.precision))?;
    write(out.join(format!("{stage}.metrics.csv")), report.metrics_csv())?;
    write(out.join(format!("{stage}.report.txt")), report_text(stage, report))?;
    Ok(())
}

pub fn gen(cfg: &RunConfig, out: &Path) -> Result<String> {
    let summary = generate(cfg, out)?;
    Ok(format!(
        "wrote {} scenarios to {} (max re-read residual {:e})",
        summary.entries.len(),
        out.display(),
        summary.max_residual
    ))
}

fn initial_maps(cfg: &RunConfig, samples: &[Sample]) -> Result<ParamMaps> {
    let (h, w) = samples[0].dem.dims();
    Ok(ParamMaps::new(&ScalarField::constant(h, w, cfg.model.init_d)?, ScalarField::zeros(h, w)?)?)
}

pub fn train(cfg: &RunConfig, out: &Path, stage: Stage) -> Result<String> {
    let samples = load_samples(&cfg.paths.data)?;
    let outcome = match stage {
        Stage::Tno => pretrain_tno(&samples, &cfg.model.tno, &cfg.train)?,
        Stage::Vno => pretrain_vno(&samples, &cfg.model.vno, &initial_maps(cfg, &samples)?, &cfg.train)?,
        Stage::Finetune => {
            let tno = load_params(cfg, &Stage::Tno.checkpoint(), "T-NO checkpoint (run `train --stage tno`)")?;
            let vno = load_params(cfg, &Stage::Vno.checkpoint(), "V-NO checkpoint (run `train --stage vno`)")?;
            let base = pretrained(cfg, &tno, &vno)?;
            finetune(&samples, &base.tno, &base.vno, &base.maps, &cfg.train)?
        }
    };
    let name = stage.name();
    write_outcome(cfg, out, name, &outcome)?;
    outcome.ensure_converged()?;
    Ok(format!(
        "{name}: {} steps, final loss {:?}, checkpoint {}",
        outcome.report.steps.len(),
        outcome.report.final_loss(),
        outcome.report.checkpoint_id
    ))
}

fn pretrained(cfg: &RunConfig, tno: &ParamSet<f64>, vno: &ParamSet<f64>) -> Result<Pretrained> {
    Ok(Pretrained {
        tno: Tno::from_params(cfg.model.tno.clone(), tno)?,
        vno: Vno::from_params(cfg.model.vno.clone(), vno)?,
        maps: ParamMaps::from_params(vno)?,
    })
}

fn load_tno(cfg: &RunConfig) -> Result<Tno> {
    let params = load_params(cfg, &cfg.eval.checkpoint, "T-NO checkpoint")?;
    Ok(Tno::from_params(cfg.model.tno.clone(), &params)?)
}

fn load_translator(cfg: &RunConfig) -> Result<Translator> {
    let params = load_params(cfg, &cfg.eval.translator, "translator checkpoint (run `translate-train`)")?;
    Ok(Translator::from_params(cfg.model.translator.clone(), &params)?)
}

/// Rain rate of every frame through the translator.
fn translate(seq: &FrameSequence, tr: &Translator) -> Result<FrameSequence> {
    let frames = seq
        .frames()
        .iter()
        .map(|f| Ok(vec![head_translate(f, tr)?]))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameSequence::new(frames, seq.timestamps().to_vec(), vec!["rain".into()])?)
}

/// Observed radar for the forecast half of each window.
fn radar_truths(set: &ForecastSet, radar: &[FrameSequence], s: usize) -> Result<Vec<FrameSequence>> {
    set.origins
        .iter()
        .map(|&(i, t)| Ok(radar[i].window(t + s, s)?))
        .collect()
}

fn rain_of(cfg: &RunConfig, preds: &[FrameSequence], tr: Option<&Translator>) -> Result<Vec<FrameSequence>> {
    preds
        .iter()
        .map(|p| match tr {
            Some(tr) => translate(p, tr),
            None => Ok(couple_rain(p, cfg.coupling.gain)?),
        })
        .collect()
}

fn diff_maps(out: &Path, set: &ForecastSet, leads: usize) -> Result<()> {
    let diffs = (0..leads)
        .map(|k| Ok(set.preds[0].frame(k)[0].zip_map(&set.truths[0].frame(k)[0], |a, b| (a - b).abs())?))
        .collect::<Result<Vec<_>>>()?;
    let hi = diffs.iter().map(ScalarField::max_abs).fold(0.0, f64::max);
    for (k, d) in diffs.iter().enumerate() {
        let file = fs::File::create(out.join(format!("diff_lead{}.pgm", k + 1))).map_err(Error::from)?;
        write_pgm(std::io::BufWriter::new(file), d, 0.0, hi)?;
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<String> {
    let dir = cfg.paths.eval_dir();
    let samples = load_samples(dir)?;
    let (ev, s) = (&cfg.eval, cfg.model.tno.s);
    let mut set = match ev.predictor {
        Predictor::Checkpoint => {
            let tno = load_tno(cfg)?;
            forecast_set(&samples, s, ev.stride, |h, d| tno.predict(h, d))?
        }
        Predictor::Persistence | Predictor::Truth => {
            forecast_set(&samples, s, ev.stride, |h, _| persistence_forecast(h, s))?
        }
    };
    if ev.predictor == Predictor::Truth {
        set.preds = set.truths.clone();
    }
    let mse = mse_by_leadtime(&set.preds, &set.truths, ev.s)?;
    write(out.join("mse.csv"), mse.to_csv())?;

    let translator = match ev.rain {
        RainSource::Coupling => None,
        RainSource::Translator => Some(load_translator(cfg)?),
    };
    let rain = rain_of(cfg, &set.preds, translator.as_ref())?;
    let truth = radar_truths(&set, &load_radar(dir)?, s)?;
    let csi = csi_by_leadtime(&rain, &truth, &ev.thresholds, ev.s)?;
    write(out.join("csi.csv"), csi.to_csv())?;
    let groups = group_report(&rain, &truth, &set.tags, &ev.thresholds, ev.s)?;
    write(out.join("group.csv"), groups.to_csv())?;
    if ev.pgm {
        diff_maps(out, &set, ev.s)?;
    }
    let mut summary = format!("{} windows; lead-1 MSE {}", set.preds.len(), fmt_cell(mse.values[0][0]));
    for (th, row) in ev.thresholds.iter().zip(&csi.values) {
        let _ = write!(summary, "; lead-1 CSI@{th} {}", fmt_cell(row[0]));
    }
    write(out.join("report.txt"), format!("{summary}\n"))?;
    Ok(summary)
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |v| format!("{v:.6}"))
}

const ROW_FILE: &str = "row.csv";

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<String> {
    let train = load_samples(&cfg.paths.data)?;
    let eval = load_samples(cfg.paths.eval_dir())?;
    let tno = load_params(cfg, &Stage::Tno.checkpoint(), "T-NO checkpoint (run `train --stage tno`)")?;
    let vno = load_params(cfg, &Stage::Vno.checkpoint(), "V-NO checkpoint (run `train --stage vno`)")?;
    let base = pretrained(cfg, &tno, &vno)?;
    let mut csv = String::new();
    let (mut trained, mut resumed) = (0, 0);
    for &alpha in &cfg.sweep.alphas {
        let dir = out.join(format!("alpha_{alpha}"));
        let row_path = dir.join(ROW_FILE);
        let row_csv = if row_path.is_file() {
            resumed += 1;
            fs::read_to_string(&row_path).map_err(Error::from)?
        } else {
            fs::create_dir_all(&dir).map_err(Error::from)?;
            let (row, outcome) = sweep_row(alpha, &base, &train, &eval, &cfg.train)?;
            write_outcome(cfg, &dir, Stage::Finetune.name(), &outcome)?;
            let text = SweepReport {
                s: base.tno.cfg.s,
                rows: vec![row],
            }
            .to_csv();
            write(&row_path, &text)?;
            trained += 1;
            text
        };
        let mut lines = row_csv.lines();
        let header = lines.next().unwrap_or_default();
        if csv.is_empty() {
            csv = format!("{header}\n");
        } else if !csv.starts_with(header) {
            bail!(Error::Format(format!("{} has a different lead-time layout", row_path.display())));
        }
        for l in lines {
            csv.push_str(l);
            csv.push('\n');
        }
    }
    write(out.join("sweep.csv"), &csv)?;
    Ok(format!("{} alphas: {trained} trained, {resumed} resumed", cfg.sweep.alphas.len()))
}

pub fn translate_train(cfg: &RunConfig, out: &Path) -> Result<String> {
    let samples = load_samples(&cfg.paths.data)?;
    let radar = load_radar(&cfg.paths.data)?;
    let sat: Vec<FrameSequence> = samples.into_iter().map(|s| s.frames).collect();
    let (translator, report) = train_translator(&sat, &radar, &cfg.model.translator, &cfg.train)?;
    write_stage(cfg, out, "translator", &translator.to_params(), &report)?;
    if let Some(d) = report.divergence {
        bail!(Error::Divergence {
            step: d.step,
            reason: d.reason
        });
    }
    Ok(format!("translator: {} steps, final loss {:?}", report.steps.len(), report.final_loss()))
}

pub fn nowcast(cfg: &RunConfig, out: &Path) -> Result<String> {
    let dir = cfg.paths.eval_dir();
    let samples = load_samples(dir)?;
    let radar = load_radar(dir)?;
    let names = ids(dir)?;
    let tno = load_tno(cfg)?;
    let translator = load_translator(cfg)?;
    let (ev, s) = (&cfg.eval, cfg.model.tno.s);

    let model = forecast_set(&samples, s, ev.stride, |h, d| tno.predict(h, d))?;
    let persist = forecast_set(&samples, s, ev.stride, |h, _| persistence_forecast(h, s))?;
    let truth = radar_truths(&model, &radar, s)?;
    let rain = rain_of(cfg, &model.preds, Some(&translator))?;
    let rain_persist = rain_of(cfg, &persist.preds, Some(&translator))?;
    for (r, &(i, t)) in rain.iter().zip(&model.origins) {
        write_gfs1(&out.join(format!("{}.t{t:03}.rain.gfs1", names[i])), r, nowcast_core::autodiff::Dtype::F64)?;
    }
    let csi = csi_by_leadtime(&rain, &truth, &ev.thresholds, ev.s)?;
    let csi_p = csi_by_leadtime(&rain_persist, &truth, &ev.thresholds, ev.s)?;
    write(out.join("csi.csv"), csi.to_csv())?;
    write(out.join("csi_persistence.csv"), csi_p.to_csv())?;
    let summary = lead_one_comparison(&csi, &csi_p);
    write(out.join("report.txt"), format!("{summary}\n"))?;
    Ok(summary)
}

fn lead_one_comparison(model: &LeadTimeTable, persistence: &LeadTimeTable) -> String {
    model
        .thresholds
        .iter()
        .zip(model.values.iter().zip(&persistence.values))
        .map(|(th, (m, p))| format!("lead-1 CSI@{th}: model {} vs persistence {}", fmt_cell(m[0]), fmt_cell(p[0])))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Output directory of a command: `--out` if given, otherwise the
/// configured directory the command naturally writes to.
pub fn default_out(cfg: &RunConfig, command: &str) -> PathBuf {
    match command {
        "gen" => cfg.paths.data.clone(),
        "train" | "translate-train" => cfg.paths.checkpoints.clone(),
        _ => cfg.paths.reports.clone(),
    }
}
