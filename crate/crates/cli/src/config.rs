use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nowcast_core::operators::{TnoConfig, TranslatorConfig, VnoConfig};
use nowcast_core::scenario::ScenarioKind;
use nowcast_core::training::TrainConfig;
use nowcast_core::Error;
use serde::{Deserialize, Serialize};

/// Every section of a run, with defaults for anything the file omits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub coupling: CouplingSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// A scenario kind, or `mixed` to cycle through all of them.
    pub kind: String,
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    pub count: usize,
    pub seed: u64,
    /// Fixes the uniform-flow velocity `[vx, vy]`.
    pub uniform_velocity: Option<[f64; 2]>,
    /// Fixes the diffusivity of every kind.
    pub diffusivity: Option<f64>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            kind: "mixed".into(),
            height: 64,
            width: 64,
            n_frames: 24,
            count: 8,
            seed: 0,
            uniform_velocity: None,
            diffusivity: None,
        }
    }
}

impl ScenarioSection {
    /// Kind of scenario `i`.
    pub fn kind_of(&self, i: usize) -> Result<ScenarioKind, Error> {
        if self.kind == "mixed" {
            Ok(ScenarioKind::ALL[i % ScenarioKind::ALL.len()])
        } else {
            self.kind.parse()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub tno: TnoConfig,
    pub vno: VnoConfig,
    pub translator: TranslatorConfig,
    /// Initial diffusivity of the coefficient maps.
    pub init_d: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            tno: TnoConfig::default(),
            vno: VnoConfig::default(),
            translator: TranslatorConfig::default(),
            init_d: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Predictor {
    /// The T-NO checkpoint named by `eval.checkpoint`.
    Checkpoint,
    Persistence,
    /// The ground truth itself.
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RainSource {
    /// The generator's satellite-to-rain coupling.
    Coupling,
    /// A trained translator checkpoint.
    Translator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// CSI event thresholds in mm/h.
    pub thresholds: Vec<f64>,
    /// Lead times scored.
    pub s: usize,
    /// Frames between successive evaluation windows.
    pub stride: usize,
    pub predictor: Predictor,
    /// T-NO checkpoint file, relative to `paths.checkpoints`.
    pub checkpoint: String,
    pub rain: RainSource,
    /// Translator checkpoint file, relative to `paths.checkpoints`.
    pub translator: String,
    /// Write absolute-difference maps of the first window.
    pub pgm: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            thresholds: vec![4.0, 8.0],
            s: 8,
            stride: 8,
            predictor: Predictor::Checkpoint,
            checkpoint: "tno.ckpt".into(),
            rain: RainSource::Coupling,
            translator: "translator.ckpt".into(),
            pgm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub alphas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.2, 1.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSection {
    /// mm/h of rain per unit of satellite signal.
    pub gain: f64,
}

impl Default for CouplingSection {
    fn default() -> Self {
        Self { gain: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Dataset directory written by `gen`.
    pub data: PathBuf,
    /// Held-out dataset for `eval`, `sweep` and `nowcast`; defaults to `data`.
    pub eval_data: Option<PathBuf>,
    pub checkpoints: PathBuf,
    /// Output directory when `--out` is not given.
    pub reports: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            data: "data".into(),
            eval_data: None,
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

impl PathsSection {
    pub fn eval_dir(&self) -> &Path {
        self.eval_data.as_deref().unwrap_or(&self.data)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section and reports all problems together.
    pub fn validate(&self) -> Result<(), Error> {
        let mut problems = Vec::new();
        let mut note = |r: Result<(), Error>| {
            if let Err(e) = r {
                problems.push(match e {
                    Error::Config(m) => m,
                    other => other.to_string(),
                });
            }
        };
        let sc = &self.scenario;
        note(sc.kind_of(0).map(|_| ()));
        if sc.height < 16 || sc.width < 16 {
            note(Err(Error::Config(format!("scenario grid {}x{} is below 16x16", sc.height, sc.width))));
        }
        if sc.n_frames < 9 {
            note(Err(Error::Config(format!("scenario.n_frames must be at least 9 (got {})", sc.n_frames))));
        }
        if sc.count == 0 {
            note(Err(Error::Config("scenario.count must be at least 1".into())));
        }
        note(self.model.tno.validate());
        note(self.model.vno.validate());
        note(self.model.translator.validate());
        if !(self.model.init_d >= 0.0 && self.model.init_d.is_finite()) {
            note(Err(Error::Config(format!("model.init_d must be a finite value ≥ 0 (got {})", self.model.init_d))));
        }
        note(self.train.validate());
        let ev = &self.eval;
        if ev.thresholds.is_empty() || ev.thresholds.iter().any(|t| !(*t > 0.0)) {
            note(Err(Error::Config("eval.thresholds must be a non-empty list of positive values".into())));
        }
        if ev.s == 0 || ev.s > self.model.tno.s {
            note(Err(Error::Config(format!(
                "eval.s must be between 1 and model.tno.s = {} (got {})",
                self.model.tno.s, ev.s
            ))));
        }
        if ev.stride == 0 {
            note(Err(Error::Config("eval.stride must be at least 1".into())));
        }
        if self.sweep.alphas.is_empty() || self.sweep.alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            note(Err(Error::Config("sweep.alphas must be a non-empty list of finite values ≥ 0".into())));
        }
        if !(self.coupling.gain > 0.0 && self.coupling.gain.is_finite()) {
            note(Err(Error::Config(format!("coupling.gain must be positive (got {})", self.coupling.gain))));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Writes the resolved configuration, defaults expanded, to `path`.
    pub fn write_resolved(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).context("serializing resolved config")?;
        fs::write(path, text).map_err(Error::from)?;
        Ok(())
    }
}
