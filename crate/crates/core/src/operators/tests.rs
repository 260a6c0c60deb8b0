use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::autodiff::{ParamSet, Tensor4};
use crate::io::{checkpoint_bytes, checkpoint_from_bytes};
use crate::rng::seeded;
use crate::scenario::{make_scenario, synthetic_dem, ScenarioKind};

fn tiny_tno() -> TnoConfig {
    TnoConfig {
        s: 3,
        channels: 1,
        widths: vec![4, 6, 4],
        depth: 1,
    }
}

fn tiny_vno() -> VnoConfig {
    VnoConfig {
        s: 3,
        channels: 1,
        widths: vec![4, 4],
        depth: 1,
        v_max: 0.5,
    }
}

/// Same names and dims, every trainable entry redrawn from `U(-a, a)`.
fn scramble(params: &ParamSet<f64>, a: f64, seed: u64) -> ParamSet<f64> {
    let mut rng = seeded(seed, "scramble");
    let mut out = ParamSet::new();
    for (name, t) in params.iter() {
        if name.contains(".norm.") {
            out.insert(name, t.clone());
        } else {
            let data = (0..t.numel()).map(|_| rng.random_range(-a..a)).collect();
            out.insert(name, Tensor4::new(t.dims(), data).unwrap());
        }
    }
    out
}

#[test]
fn untrained_tno_is_persistence() {
    let sc = make_scenario(ScenarioKind::UniformFlow, (16, 16), 9, 1).unwrap();
    let history = sc.frames.window(0, 3).unwrap();
    let dem = synthetic_dem((16, 16), 1).unwrap();
    let stats = NormStats::fit(&[&sc.frames], &[&dem]).unwrap();
    let tno = Tno::new(tiny_tno(), &stats, 4).unwrap();
    let pred = tno.predict(&history, &dem).unwrap();
    assert_eq!(pred.len(), 3);
    for frame in pred.frames() {
        assert_eq!(frame[0], history.frame(2)[0]);
    }
    assert_eq!(pred.timestamps(), &[3, 4, 5]);
}

#[test]
fn tno_rejects_mismatched_dem_and_length() {
    let sc = make_scenario(ScenarioKind::Shear, (16, 16), 9, 2).unwrap();
    let tno = Tno::new(tiny_tno(), &NormStats::identity(1), 0).unwrap();
    let dem = synthetic_dem((16, 20), 0).unwrap();
    let err = tno.predict(&sc.frames.window(0, 3).unwrap(), &dem).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    let dem = synthetic_dem((16, 16), 0).unwrap();
    assert!(tno.predict(&sc.frames.window(0, 4).unwrap(), &dem).is_err());
}

#[test]
fn grid_must_fit_the_level_count() {
    let sc = make_scenario(ScenarioKind::Shear, (18, 16), 9, 2).unwrap();
    let tno = Tno::new(tiny_tno(), &NormStats::identity(1), 0).unwrap();
    let dem = synthetic_dem((18, 16), 0).unwrap();
    let err = tno.predict(&sc.frames.window(0, 3).unwrap(), &dem).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)), "{err}");
}

#[test]
fn tno_parameters_round_trip_through_a_checkpoint() {
    let tno = Tno::new(tiny_tno(), &NormStats::identity(1), 9).unwrap();
    let scrambled = scramble(&tno.params, 0.3, 1);
    let back: ParamSet<f64> = checkpoint_from_bytes(&checkpoint_bytes(&scrambled)).unwrap();
    let restored = Tno::from_params(tiny_tno(), &back).unwrap();
    assert_eq!(restored.params, scrambled);
}

#[test]
fn from_params_reports_missing_entries() {
    let err = Vno::from_params(tiny_vno(), &ParamSet::new()).unwrap_err();
    assert!(matches!(err, Error::UnknownName(_)), "{err}");
}

#[test]
fn config_validation() {
    assert!(TnoConfig::default().validate().is_ok());
    assert!(VnoConfig::default().validate().is_ok());
    let bad = TnoConfig {
        s: 0,
        widths: vec![],
        ..TnoConfig::default()
    };
    let msg = bad.validate().unwrap_err().to_string();
    assert!(msg.contains("tno.s") && msg.contains("tno.widths"), "{msg}");
    let fast = VnoConfig {
        v_max: 0.8,
        ..VnoConfig::default()
    };
    assert!(fast.validate().is_err());
}

#[test]
fn param_maps_initial_values() {
    for (h, w) in [(3, 3), (16, 24), (7, 5)] {
        let m = init_param_maps(h, w).unwrap();
        assert_eq!(m.d().sum(), (h * w) as f64);
        assert_eq!(m.r().sum(), 0.0);
    }
}

#[test]
fn param_maps_round_trip_bit_identical() {
    let d = ScalarField::from_fn(5, 6, |i, j| (i * 6 + j) as f64 * 0.013).unwrap();
    let r = ScalarField::from_fn(5, 6, |i, j| (i as f64 - j as f64) * 1e-3).unwrap();
    let m = ParamMaps::new(&d, r).unwrap();
    let back = ParamMaps::from_params(&checkpoint_from_bytes(&checkpoint_bytes(&m.to_params())).unwrap()).unwrap();
    assert_eq!(back, m);
    let init = init_param_maps(8, 8).unwrap();
    let back = ParamMaps::from_params(&checkpoint_from_bytes(&checkpoint_bytes(&init.to_params())).unwrap()).unwrap();
    assert_eq!(back, init);
}

#[test]
fn translator_requires_training_and_rectifies() {
    let cfg = TranslatorConfig::default();
    let mut t = Translator::new(cfg.clone(), &[(0.5, 0.2)], 3).unwrap();
    let zero = vec![ScalarField::zeros(8, 8).unwrap()];
    assert!(matches!(head_translate(&zero, &t), Err(Error::Untrained(_))));
    t.params = scramble(&t.params, 2.0, 5);
    t.trained = true;
    let rain = head_translate(&zero, &t).unwrap();
    assert!(rain.min() >= 0.0);
    let restored = Translator::from_params(cfg, &t.to_params()).unwrap();
    assert_eq!(restored, t);
}

#[test]
fn frame_tensor_conversions_invert() {
    let sc = make_scenario(ScenarioKind::RigidRotation, (16, 16), 9, 8).unwrap();
    let t: Tensor4<f64> = frames_to_tensor(&sc.frames, 2, 4).unwrap();
    let back = tensor_to_frames(&t, 0, sc.frames.channel_labels(), vec![2, 3, 4, 5]).unwrap();
    assert_eq!(back, sc.frames.window(2, 4).unwrap());
    let vt: Tensor4<f64> = velocities_to_tensor(&sc.true_v[..3]).unwrap();
    assert_eq!(tensor_to_velocities(&vt, 0).unwrap(), sc.true_v[..3].to_vec());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn vno_output_is_bounded(seed in 0u64..1000, amp in 0.1f64..5.0, v_max in 0.05f64..0.5) {
        let cfg = VnoConfig { v_max, ..tiny_vno() };
        let mut vno = Vno::new(cfg, &NormStats::identity(1), seed).unwrap();
        vno.params = scramble(&vno.params, amp, seed);
        let mut rng = seeded(seed, "frames");
        let frames = FrameSequence::from_scalar_frames(
            (0..3)
                .map(|_| ScalarField::new(8, 8, (0..64).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap())
                .collect(),
            "u",
        ).unwrap();
        let vs = vno.extract(&frames).unwrap();
        prop_assert_eq!(vs.len(), 3);
        for v in vs {
            prop_assert!(v.max_component() <= v_max);
        }
    }
}
