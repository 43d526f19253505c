use wecodec::nn::{
    analytic_grads, compare_gradients, grad_check, ConvSpec, GradCheckOptions, Graph, Op, ParamStore, ResBlock, Tape, Var,
};
use wecodec::wavelet::{Pass, WaveletKind};
use wecodec::weconv::{WeConv, WeConvConfig};
use wecodec::{seeded_normal, seeded_uniform, SeededRng, Tensor3};

const TOL: f64 = 1e-4;

/// Scalar probe: inner product of `out` with a fixed random tensor.
fn project(g: &mut Tape, out: &Var, seed: u64) -> wecodec::Result<Var> {
    let shape = g.shape(out);
    let r = seeded_normal(&mut SeededRng::new(seed), shape, 1.0);
    let r = g.constant(r);
    let p = g.mul(out, &r)?;
    g.sum(&p)
}

fn randomize_biases(store: &mut ParamStore, rng: &mut SeededRng) {
    let names: Vec<String> = store.names().filter(|n| n.ends_with(".b")).map(str::to_string).collect();
    for n in names {
        let shape = store.value(&n).unwrap().shape();
        store.set_value(&n, seeded_normal(rng, shape, 0.1)).unwrap();
    }
}

#[test]
fn conv2d_matches_finite_differences() {
    for stride in [1, 2] {
        let mut rng = SeededRng::new(10 + stride as u64);
        let mut store = ParamStore::new();
        let spec = ConvSpec::conv(3, stride, 4, 5);
        spec.register(&mut store, "c", &mut rng, 1.0).unwrap();
        randomize_biases(&mut store, &mut rng);
        let x = seeded_uniform(&mut rng, (4, 8, 8), -1.0, 1.0).unwrap();
        let r = grad_check(&store, &[x], &GradCheckOptions::default(), |g, v| {
            let y = spec.apply(g, &v[0], "c")?;
            project(g, &y, 3)
        })
        .unwrap();
        assert!(r.max_rel_error < TOL, "stride {stride}: {r:?}");
    }
}

#[test]
fn tconv2d_matches_finite_differences() {
    for (k, stride) in [(3, 2), (1, 2), (3, 1), (5, 2)] {
        let mut rng = SeededRng::new(20 + k as u64);
        let mut store = ParamStore::new();
        let spec = ConvSpec::tconv(k, stride, 4, 3);
        spec.register(&mut store, "t", &mut rng, 1.0).unwrap();
        randomize_biases(&mut store, &mut rng);
        let x = seeded_uniform(&mut rng, (4, 4, 4), -1.0, 1.0).unwrap();
        let r = grad_check(&store, &[x], &GradCheckOptions::default(), |g, v| {
            let y = spec.apply(g, &v[0], "t")?;
            project(g, &y, 4)
        })
        .unwrap();
        assert!(r.max_rel_error < TOL, "k {k} stride {stride}: {r:?}");
    }
}

#[test]
fn leaky_relu_matches_finite_differences_away_from_zero() {
    let store = ParamStore::new();
    let mut rng = SeededRng::new(5);
    let x = seeded_uniform(&mut rng, (2, 5, 5), -1.0, 1.0).unwrap().map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let r = grad_check(&store, &[x], &GradCheckOptions::default(), |g, v| {
        let y = g.leaky_relu(&v[0], 0.2)?;
        project(g, &y, 6)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn res_block_matches_finite_differences() {
    let mut rng = SeededRng::new(7);
    let mut store = ParamStore::new();
    let block = ResBlock { channels: 4 };
    block.register(&mut store, "rb", &mut rng).unwrap();
    randomize_biases(&mut store, &mut rng);
    let x = seeded_uniform(&mut rng, (4, 6, 6), -1.0, 1.0).unwrap();
    let r = grad_check(&store, &[x], &GradCheckOptions::default(), |g, v| {
        let y = block.apply(g, &v[0], "rb")?;
        project(g, &y, 8)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn elementwise_and_structural_ops() {
    let store = ParamStore::new();
    let mut rng = SeededRng::new(9);
    let a = seeded_uniform(&mut rng, (4, 8, 8), 0.5, 1.5).unwrap();
    let b = seeded_uniform(&mut rng, (4, 8, 8), 0.5, 1.5).unwrap();
    let r = grad_check(&store, &[a, b], &GradCheckOptions::default(), |g, v| {
        let s = g.div(&v[0], &v[1])?;
        let t = g.sigmoid(&s)?;
        let u = g.tanh(&v[1])?;
        let e = g.exp(&u)?;
        let m = g.mul(&t, &e)?;
        let d = g.dwt_channel(&m, WaveletKind::Haar, Pass::Analyze)?;
        let d = g.dwt2d(&d, WaveletKind::Cdf97, 2, Pass::Analyze)?;
        let d = g.dwt2d(&d, WaveletKind::LeGall53, 1, Pass::Synthesize)?;
        let p = g.apply(Op::AvgPool2, &[&d])?;
        let sm = g.apply(Op::SpatialMean, &[&p])?;
        let gate = g.sigmoid(&sm)?;
        let q = g.apply(Op::MulChannel, &[&p, &gate])?;
        let bc = g.apply(Op::Broadcast { h: 4, w: 4 }, &[&sm])?;
        let q = g.add(&q, &bc)?;
        let c = g.concat(&[&q, &p])?;
        let c = g.crop(&c, 1, 7, 1, 0, 3, 4)?;
        let c = g.clamp(&c, -10.0, 10.0)?;
        let c = g.add_scalar(&c, 20.0)?;
        let c = g.apply(Op::PowScalar(1.5), &[&c])?;
        project(g, &c, 10)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn gaussian_bits_and_distortion_terms() {
    let store = ParamStore::new();
    let mut rng = SeededRng::new(11);
    let y = seeded_uniform(&mut rng, (2, 4, 4), -3.0, 3.0).unwrap();
    let mu = seeded_uniform(&mut rng, (2, 4, 4), -1.0, 1.0).unwrap();
    let s = seeded_uniform(&mut rng, (2, 4, 4), 0.3, 2.0).unwrap();
    let x = seeded_uniform(&mut rng, (1, 14, 13), 0.0, 1.0).unwrap();
    let r = grad_check(&store, &[y, mu, s], &GradCheckOptions::default(), |g, v| {
        g.apply(Op::GaussianBits, &[&v[0], &v[1], &v[2]])
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
    let r = grad_check(&store, &[x], &GradCheckOptions::default(), |g, v| {
        let blur = g.apply(Op::GaussianBlurValid, &[&v[0]])?;
        let zero = g.constant(Tensor3::zeros(1, 4, 3));
        g.apply(Op::SquaredErrorMean, &[&blur, &zero])
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

fn weconv_case(cfg: WeConvConfig, h: usize, seed: u64) {
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::new();
    let layer = WeConv::new(cfg, "weconv1").unwrap();
    layer.register(&mut store, &mut rng).unwrap();
    randomize_biases(&mut store, &mut rng);
    let x = seeded_uniform(&mut rng, (cfg.c_in, h, h), -1.0, 1.0).unwrap();
    let r = grad_check(&store, &[x], &GradCheckOptions::default(), |g, v| {
        let y = layer.apply(g, &v[0])?;
        project(g, &y, seed + 1)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{cfg:?}: {r:?}");
}

#[test]
fn weconv_matches_finite_differences_all_configs() {
    let mut seed = 100;
    for transposed in [false, true] {
        for stride in [1, 2] {
            for levels in [1, 2] {
                for hf_kernel in [1, 3] {
                    for spatial in [WaveletKind::Haar, WaveletKind::Cdf97] {
                        let cfg = WeConvConfig {
                            c_in: 4,
                            c_out: 4,
                            stride,
                            channel_wavelet: WaveletKind::Haar,
                            spatial_wavelet: spatial,
                            levels,
                            hf_kernel,
                            transposed,
                        };
                        let h = if transposed { 8 / stride } else { 8 };
                        weconv_case(cfg, h, seed);
                        seed += 1;
                    }
                }
            }
        }
    }
}

#[test]
fn weconv_eight_channels_one_level() {
    let cfg = WeConvConfig { levels: 1, ..WeConvConfig::new(8, 8, 1) };
    weconv_case(cfg, 8, 300);
}

#[test]
fn corrupted_gradient_is_detected() {
    let mut rng = SeededRng::new(12);
    let mut store = ParamStore::new();
    let spec = ConvSpec::conv(3, 1, 2, 2);
    spec.register(&mut store, "c", &mut rng, 1.0).unwrap();
    let x = seeded_uniform(&mut rng, (2, 5, 5), -1.0, 1.0).unwrap();
    let build = |g: &mut Tape, v: &[Var]| {
        let y = spec.apply(g, &v[0], "c")?;
        project(g, &y, 13)
    };
    let mut analytic = analytic_grads(&store, std::slice::from_ref(&x), &build).unwrap();
    analytic.params.get_mut("c.w").unwrap().scale_assign(1.5);
    let r = compare_gradients(&store, &[x], &GradCheckOptions::default(), &build, &analytic).unwrap();
    assert!(r.max_rel_error > 1e-2, "{r:?}");
}

#[test]
fn refinement_handles_a_nearby_kink_but_not_a_wrong_gradient() {
    let store = ParamStore::new();
    // One input sits 3e-6 from the leaky ReLU kink: a 1e-5 step straddles it.
    let x = Tensor3::from_fn(1, 2, 2, |_, y, x| if (y, x) == (0, 0) { 3e-6 } else { 0.5 + y as f64 });
    let build = |g: &mut Tape, v: &[Var]| {
        let y = g.leaky_relu(&v[0], 0.2)?;
        g.sum(&y)
    };
    let plain = grad_check(&store, std::slice::from_ref(&x), &GradCheckOptions::default(), build).unwrap();
    assert!(plain.max_rel_error > 0.1, "{plain:?}");
    let opts = GradCheckOptions { refine_above: Some(TOL), ..Default::default() };
    let refined = grad_check(&store, std::slice::from_ref(&x), &opts, build).unwrap();
    assert!(refined.max_rel_error < 1e-8, "{refined:?}");
    assert_eq!(refined.refined, 1);

    let mut wrong = analytic_grads(&store, std::slice::from_ref(&x), &build).unwrap();
    wrong.inputs[0].data_mut()[3] = 1.5;
    let r = compare_gradients(&store, &[x], &opts, &build, &wrong).unwrap();
    assert!(r.max_rel_error > 0.1 && r.worst == "input0[3]", "{r:?}");
}

#[test]
fn non_finite_loss_is_numeric_error() {
    let store = ParamStore::new();
    let x = Tensor3::filled(1, 2, 2, 0.0);
    let r = grad_check(&store, &[x], &GradCheckOptions::default(), |g, v| {
        let y = g.div(&v[0], &v[0])?;
        g.sum(&y)
    });
    assert!(matches!(r, Err(wecodec::Error::Numeric(_))));
}

#[test]
fn full_toy_loss_matches_finite_differences() {
    use wecodec::codec::{Model, ModelConfig};
    use wecodec::train::{loss_graph, synthetic_crops, RdLoss, MSE_SCALE};
    let model = Model::new(ModelConfig::toy()).unwrap();
    let store = model.init(42).unwrap();
    let inputs = vec![synthetic_crops(1, 64, 7)[0].to_tensor()];
    // λ chosen so the distortion enters as plain [0, 1] MSE: the loss stays
    // O(1) at initialization and finite differences keep their precision.
    let loss = RdLoss::joint(1.0 / MSE_SCALE);
    // Leaky ReLU kinks downstream of every parameter can sit within ε of
    // the operating point, so allow the step-refined estimate.
    let opts = GradCheckOptions { max_coords: Some(1), seed: 3, refine_above: Some(TOL), ..Default::default() };
    let r = grad_check(&store, &inputs, &opts, |g, v| {
        let t = loss_graph(&model, g, &v[0], &mut SeededRng::new(1), &loss)?;
        Ok(t.loss)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
    assert!(r.checked > store.len());
    assert!(r.refined * 10 <= r.checked, "{r:?}");
}
