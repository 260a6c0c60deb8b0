use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nowcast_core::autodiff::Dtype;
use nowcast_core::io::{read_gfs1, write_gfs1};
use nowcast_core::pde::residual_sq_norm;
use nowcast_core::rng::derive_seed;
use nowcast_core::scenario::{couple_rain, make_scenario_with, synthetic_dem, ScenarioOptions};
use nowcast_core::training::Sample;
use nowcast_core::{Error, FrameSequence, PdeParams, StencilSpec, VectorField};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.csv";
pub const SELF_CHECK_TOL: f64 = 1e-12;

/// A file the command needs but could not find.
#[derive(Debug, thiserror::Error)]
#[error("missing {what}: {}", path.display())]
pub struct MissingArtifact {
    pub what: String,
    pub path: PathBuf,
}

pub fn require(path: PathBuf, what: &str) -> Result<PathBuf, MissingArtifact> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(MissingArtifact {
            what: what.to_string(),
            path,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub id: String,
    pub kind: String,
    pub seed: u64,
}

fn path_of(dir: &Path, id: &str, part: &str) -> PathBuf {
    dir.join(format!("{id}.{part}.gfs1"))
}

/// Worst residual norm found by the post-write self-check.
pub struct GenSummary {
    pub entries: Vec<Entry>,
    pub max_residual: f64,
}

/// Writes every scenario of the config to `out`: frames, truth sidecar
/// (`vx, vy, D, R` per transition), elevation map and coupled radar, all at
/// 64-bit, then re-reads each file pair and checks the residual.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<GenSummary> {
    let sc = &cfg.scenario;
    let opts = ScenarioOptions {
        uniform_velocity: sc.uniform_velocity.map(|[x, y]| (x, y)),
        diffusivity: sc.diffusivity,
    };
    let mut manifest = String::from("id,kind,seed\n");
    let mut entries = Vec::with_capacity(sc.count);
    let mut max_residual = 0.0f64;
    for i in 0..sc.count {
        let kind = sc.kind_of(i)?;
        let seed = derive_seed(sc.seed, "scenario", i as u64);
        let id = format!("s{i:04}");
        let s = make_scenario_with(kind, (sc.height, sc.width), sc.n_frames, seed, &opts)?;
        write_gfs1(&path_of(out, &id, "frames"), &s.frames, Dtype::F64)?;
        write_gfs1(&path_of(out, &id, "truth"), &truth_sequence(&s.true_v, &s.true_params)?, Dtype::F64)?;
        let dem = synthetic_dem((sc.height, sc.width), seed)?;
        write_gfs1(&path_of(out, &id, "dem"), &FrameSequence::from_scalar_frames(vec![dem], "dem")?, Dtype::F64)?;
        write_gfs1(&path_of(out, &id, "radar"), &couple_rain(&s.frames, cfg.coupling.gain)?, Dtype::F64)?;

        let r = self_check(out, &id)?;
        if !(r < SELF_CHECK_TOL) {
            bail!(Error::Format(format!("{id}: re-read residual {r:e} exceeds {SELF_CHECK_TOL:e}")));
        }
        max_residual = max_residual.max(r);
        let _ = writeln!(manifest, "{id},{kind},{seed}");
        entries.push(Entry {
            id,
            kind: kind.to_string(),
            seed,
        });
    }
    fs::write(out.join(MANIFEST), manifest).map_err(Error::from)?;
    Ok(GenSummary { entries, max_residual })
}

fn truth_sequence(v: &[VectorField], p: &PdeParams) -> Result<FrameSequence> {
    let frames = v
        .iter()
        .map(|vt| vec![vt.x_component(), vt.y_component(), p.d.clone(), p.r.clone()])
        .collect();
    let labels = ["vx", "vy", "D", "R"].map(String::from).to_vec();
    Ok(FrameSequence::new(frames, (0..v.len() as i64).collect(), labels)?)
}

/// Residual of the frames on disk under the truth sidecar on disk.
pub fn self_check(dir: &Path, id: &str) -> Result<f64> {
    let frames = read_gfs1(&path_of(dir, id, "frames"))?;
    let truth = read_gfs1(&path_of(dir, id, "truth"))?;
    if truth.channels() != 4 || truth.len() + 1 != frames.len() {
        bail!(Error::Format(format!("{id}: truth sidecar does not match its frames")));
    }
    let v = truth
        .frames()
        .iter()
        .map(|f| VectorField::from_components(f[0].clone(), f[1].clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let first = truth.frame(0);
    let p = PdeParams::new(first[2].clone(), first[3].clone(), StencilSpec::default())?;
    Ok(residual_sq_norm(&frames, &v, &p)?)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<Entry>> {
    let path = require(dir.join(MANIFEST), "dataset manifest")?;
    let text = fs::read_to_string(&path).map_err(Error::from)?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let [id, kind, seed] = cols[..] else {
            bail!(Error::Format(format!("{}:{}: expected 3 columns", path.display(), n + 1)));
        };
        let seed = seed
            .parse()
            .map_err(|_| Error::Format(format!("{}:{}: bad seed `{seed}`", path.display(), n + 1)))?;
        entries.push(Entry {
            id: id.to_string(),
            kind: kind.to_string(),
            seed,
        });
    }
    if entries.is_empty() {
        bail!(Error::Config(format!("{} lists no scenarios", path.display())));
    }
    Ok(entries)
}

/// Frames, elevation and kind tag of every scenario in `dir`.
pub fn load_samples(dir: &Path) -> Result<Vec<Sample>> {
    read_manifest(dir)?
        .iter()
        .map(|e| {
            let frames = read_gfs1(&require(path_of(dir, &e.id, "frames"), "frames")?)?;
            let dem = read_gfs1(&require(path_of(dir, &e.id, "dem"), "elevation map")?)?;
            Ok(Sample {
                frames,
                dem: dem.frame(0)[0].clone(),
                tag: e.kind.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()
        .with_context(|| format!("loading dataset {}", dir.display()))
}

/// Radar sequence paired with each scenario in `dir`; a missing file is a
/// pairing error.
pub fn load_radar(dir: &Path) -> Result<Vec<FrameSequence>> {
    read_manifest(dir)?
        .iter()
        .map(|e| {
            let path = path_of(dir, &e.id, "radar");
            if !path.is_file() {
                bail!(Error::Config(format!(
                    "unpaired data: scenario {} has no radar file {}",
                    e.id,
                    path.display()
                )));
            }
            Ok(read_gfs1(&path)?)
        })
        .collect()
}

pub fn ids(dir: &Path) -> Result<Vec<String>> {
    Ok(read_manifest(dir)?.into_iter().map(|e| e.id).collect())
}
