use std::collections::BTreeMap;

use rand::Rng;

use super::*;
use crate::error::Error;
use crate::rng::seeded;

fn random(dims: [usize; 4], seed: u64) -> Tensor4<f64> {
    let mut rng = seeded(seed, "test-tensor");
    let n = dims.iter().product();
    // keep values away from the leaky-rectifier kink
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor4::new(dims, data).unwrap()
}

fn inputs(pairs: &[(&str, Tensor4<f64>)]) -> BTreeMap<String, Tensor4<f64>> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

#[test]
fn scale_by_two() {
    let mut g = DiffGraph::<f64>::new();
    let x = g.input("x", [1, 3, 3]).unwrap();
    let y = g.scale(x, 2.0);
    g.mark_output("y", y);
    let out = g.forward(&inputs(&[("x", Tensor4::filled([2, 1, 3, 3], 1.0))])).unwrap();
    assert!(out["y"].data().iter().all(|&v| v == 2.0));
}

#[test]
fn identity_kernel_conv_is_identity() {
    let mut g = DiffGraph::<f64>::new();
    let x = g.input("x", [1, 5, 6]).unwrap();
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let w = g.constant(Tensor4::new([1, 1, 3, 3], k).unwrap());
    let y = g.conv2d(x, w, None).unwrap();
    g.mark_output("y", y);
    let xin = random([1, 1, 5, 6], 1);
    let out = g.forward(&inputs(&[("x", xin.clone())])).unwrap();
    assert_eq!(out["y"], xin);
}

#[test]
fn down_up_preserves_constants() {
    let mut g = DiffGraph::<f64>::new();
    let x = g.input("x", [2, 4, 8]).unwrap();
    let d = g.downsample2(x).unwrap();
    let u = g.upsample2(d);
    g.mark_output("u", u);
    let c = Tensor4::filled([1, 2, 4, 8], 0.7);
    let out = g.forward(&inputs(&[("x", c.clone())])).unwrap();
    assert_eq!(out["u"], c);
}

#[test]
fn scale_gradient_closed_form() {
    // loss = mean((a·x)²) ⇒ dL/da = 2a·mean(x²)
    let mut g = DiffGraph::<f64>::new();
    let x = g.input("x", [1, 4, 4]).unwrap();
    let a = g.param("a", Tensor4::filled([1, 1, 1, 1], 1.5)).unwrap();
    let y = g.mul(x, a).unwrap();
    let l = g.mean_square(y);
    let xin = random([1, 1, 4, 4], 2);
    g.forward(&inputs(&[("x", xin.clone())])).unwrap();
    g.backward(l).unwrap();
    let mean_x2 = xin.data().iter().map(|v| v * v).sum::<f64>() / 16.0;
    let got = g.param_grad("a").unwrap().item();
    assert!((got - 2.0 * 1.5 * mean_x2).abs() < 1e-14);
}

#[test]
fn zero_input_gives_zero_weight_gradients() {
    let mut g = DiffGraph::<f64>::new();
    let x = g.input("x", [2, 6, 6]).unwrap();
    let w = g.param("w", random([3, 2, 3, 3], 3)).unwrap();
    let y = g.conv2d(x, w, None).unwrap();
    let l = g.mean_square(y);
    g.forward(&inputs(&[("x", Tensor4::zeros([1, 2, 6, 6]))])).unwrap();
    g.backward(l).unwrap();
    assert!(g.param_grad("w").unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut g = DiffGraph::<f64>::new();
    let x = g.input("x", [1, 8, 8]).unwrap();
    let w = g.param("w", random([1, 1, 3, 3], 4)).unwrap();
    let y = g.conv2d(x, w, None).unwrap();
    let l = g.mean_square(y);
    let err = gradcheck(&mut g, &inputs(&[("x", random([1, 1, 8, 8], 5))]), l, 1e-3).unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn linear_graph_gradcheck_is_tight() {
    let mut g = DiffGraph::<f64>::new();
    let x = g.input("x", [2, 4, 4]).unwrap();
    let w = g.param("w", random([2, 2, 1, 1], 6)).unwrap();
    let y = g.conv2d(x, w, None).unwrap();
    let s = g.scale(y, 0.5);
    let l = g.mean_square(s);
    let err = gradcheck(&mut g, &inputs(&[("x", random([1, 2, 4, 4], 7))]), l, 1e-3).unwrap();
    assert!(err < 1e-9, "relative error {err}");
}

/// One graph per primitive, each ending in a mean-square loss.
fn primitive_graphs() -> Vec<(&'static str, DiffGraph<f64>, NodeId, BTreeMap<String, Tensor4<f64>>)> {
    let x_in = || inputs(&[("x", random([2, 2, 4, 6], 10))]);
    let mut out = Vec::new();
    let mut build = |name: &'static str, f: &dyn Fn(&mut DiffGraph<f64>, NodeId) -> NodeId| {
        let mut g = DiffGraph::<f64>::new();
        let x = g.input("x", [2, 4, 6]).unwrap();
        let p = g.param("p", random([1, 2, 4, 6], 11)).unwrap();
        let xp = g.add(x, p).unwrap();
        let y = f(&mut g, xp);
        let l = g.mean_square(y);
        out.push((name, g, l, x_in()));
    };
    build("conv2d", &|g, x| {
        let w = g.param("w", random([3, 2, 3, 3], 12)).unwrap();
        let b = g.param("b", random([1, 3, 1, 1], 13)).unwrap();
        g.conv2d(x, w, Some(b)).unwrap()
    });
    build("conv2d-5x5", &|g, x| {
        let w = g.param("w", random([1, 2, 5, 5], 14)).unwrap();
        g.conv2d(x, w, None).unwrap()
    });
    build("leaky_relu", &|g, x| g.leaky_relu(x));
    build("tanh", &|g, x| g.tanh(x));
    build("add", &|g, x| {
        let b = g.param("bb", random([1, 1, 4, 6], 15)).unwrap();
        g.add(x, b).unwrap()
    });
    build("mul", &|g, x| {
        let b = g.param("mb", random([1, 1, 4, 6], 16)).unwrap();
        g.mul(x, b).unwrap()
    });
    build("scale", &|g, x| g.scale(x, -1.7));
    build("concat", &|g, x| {
        let q = g.param("q", random([1, 1, 4, 6], 17)).unwrap();
        let t = g.tanh(x);
        let qb = g.add(t, q).unwrap();
        g.concat(&[x, qb, x]).unwrap()
    });
    build("slice", &|g, x| {
        g.slice_channels(x, 1, 1).unwrap()
    });
    build("downsample2", &|g, x| {
        let d = g.downsample2(x).unwrap();
        g.tanh(d)
    });
    build("upsample2", &|g, x| {
        let u = g.upsample2(x);
        g.tanh(u)
    });
    build("channel_affine", &|g, x| {
        let a = g.param("sc", random([1, 2, 1, 1], 18)).unwrap();
        let b = g.param("sh", random([1, 2, 1, 1], 19)).unwrap();
        g.channel_affine(x, a, b).unwrap()
    });
    build("mean_square", &|g, x| {
        let m = g.mean_square(x);
        g.scale(m, 3.0)
    });
    out
}

#[test]
fn every_primitive_passes_gradcheck() {
    for (name, mut g, l, x) in primitive_graphs() {
        let err = gradcheck(&mut g, &x, l, 1e-4).unwrap();
        assert!(err < 1e-6, "{name}: relative error {err}");
    }
}

#[test]
fn random_composed_graphs_pass_gradcheck() {
    for seed in 0..12u64 {
        let mut rng = seeded(seed, "compose");
        let mut g = DiffGraph::<f64>::new();
        let x = g.input("x", [2, 8, 8]).unwrap();
        let p = g.param("p0", random([1, 2, 8, 8], seed * 31)).unwrap();
        let mut cur = g.add(x, p).unwrap();
        let depth = rng.random_range(1..=6);
        for d in 0..depth {
            let [c, h, w] = g.shape(cur);
            cur = match rng.random_range(0..9) {
                0 => {
                    let co = rng.random_range(1..=3);
                    let wt = g.param(&format!("w{d}"), random([co, c, 3, 3], seed * 31 + d as u64).map(|v| v * 0.4)).unwrap();
                    g.conv2d(cur, wt, None).unwrap()
                }
                1 => g.leaky_relu(cur),
                2 => g.tanh(cur),
                3 => g.scale(cur, 0.8),
                4 => {
                    let q = g.param(&format!("q{d}"), random([1, c, h, w], seed * 37 + d as u64)).unwrap();
                    g.mul(cur, q).unwrap()
                }
                5 if h % 2 == 0 && w % 2 == 0 && h > 2 => g.downsample2(cur).unwrap(),
                6 => g.upsample2(cur),
                7 => {
                    let t = g.tanh(cur);
                    g.concat(&[cur, t]).unwrap()
                }
                _ => {
                    let a = g.param(&format!("a{d}"), random([1, c, 1, 1], seed * 41 + d as u64)).unwrap();
                    let b = g.param(&format!("b{d}"), random([1, c, 1, 1], seed * 43 + d as u64)).unwrap();
                    g.channel_affine(cur, a, b).unwrap()
                }
            };
        }
        let l = g.mean_square(cur);
        let err = gradcheck(&mut g, &inputs(&[("x", random([2, 2, 8, 8], seed))]), l, 1e-4).unwrap();
        assert!(err < 1e-5, "seed {seed}: relative error {err}");
    }
}

#[test]
fn unreachable_params_get_zero_gradient() {
    let mut g = DiffGraph::<f64>::new();
    let x = g.input("x", [1, 4, 4]).unwrap();
    let used = g.param("used", random([1, 1, 4, 4], 20)).unwrap();
    let _unused = g.param("unused", random([1, 1, 4, 4], 21)).unwrap();
    let y = g.mul(x, used).unwrap();
    let l = g.mean_square(y);
    g.forward(&inputs(&[("x", random([1, 1, 4, 4], 22))])).unwrap();
    g.backward(l).unwrap();
    assert!(g.param_grad("used").unwrap().data().iter().any(|&v| v != 0.0));
    assert!(g.param_grad("unused").unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn error_paths() {
    let mut g = DiffGraph::<f64>::new();
    let x = g.input("x", [1, 4, 4]).unwrap();
    let y = g.tanh(x);
    let l = g.mean_square(y);
    assert!(matches!(g.backward(l), Err(Error::BackwardBeforeForward)));

    let err = g.forward(&inputs(&[("x", Tensor4::zeros([1, 2, 4, 4]))])).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    assert!(g.forward(&BTreeMap::new()).is_err());

    g.forward(&inputs(&[("x", Tensor4::zeros([1, 1, 4, 4]))])).unwrap();
    assert!(matches!(g.backward(y), Err(Error::NonScalarLoss { .. })));

    let mut bad = Tensor4::zeros([1, 1, 4, 4]);
    bad.data_mut()[5] = f64::NAN;
    assert!(matches!(
        g.forward(&inputs(&[("x", bad)])),
        Err(Error::NanInGraph { .. })
    ));

    let w = g.constant(Tensor4::zeros([1, 1, 2, 2]));
    assert!(g.conv2d(x, w, None).is_err());
    let odd = g.input("odd", [1, 5, 4]).unwrap();
    assert!(g.downsample2(odd).is_err());
    assert!(g.slice_channels(x, 0, 2).is_err());
    assert!(g.param("dup", Tensor4::zeros([1, 1, 1, 1])).is_ok());
    assert!(g.param("dup", Tensor4::zeros([1, 1, 1, 1])).is_err());
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let (_, mut g, l, x) = primitive_graphs().into_iter().next().unwrap();
        let out = g.forward(&x).unwrap();
        g.backward(l).unwrap();
        (out, g.param_grad("w").unwrap().clone())
    };
    let a = run();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(run);
    assert_eq!(a, b);
}

#[test]
fn f32_graph_runs() {
    let mut g = DiffGraph::<f32>::new();
    let x = g.input("x", [1, 4, 4]).unwrap();
    let w = g.param("w", random([2, 1, 3, 3], 30).cast()).unwrap();
    let y = g.conv2d(x, w, None).unwrap();
    let l = g.mean_square(y);
    let xin: Tensor4<f32> = random([3, 1, 4, 4], 31).cast();
    g.forward(&[("x".to_string(), xin)].into_iter().collect()).unwrap();
    g.backward(l).unwrap();
    assert!(g.param_grad("w").unwrap().is_finite());
}
