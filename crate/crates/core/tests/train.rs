use wecodec::codec::{ms_ssim, Model, ModelConfig};
use wecodec::entropy::{estimate_rate, quantize, table_for};
use wecodec::nn::{Eval, Graph, Op, ParamStore};
use wecodec::train::{
    load_crops, loss_graph, moving_average, ms_ssim_graph, rd_loss, synthetic_crops, train, RdLoss, TraceRow, TrainConfig,
    TrainStage,
};
use wecodec::{seeded_normal, Error, SeededRng, Tensor3};

const LABELS: [&str; 8] = ["LLL", "HLL", "LLH", "LHL", "LHH", "HLH", "HHL", "HHH"];

fn rates(values: [f64; 8]) -> Vec<(&'static str, f64)> {
    LABELS.iter().copied().zip(values).collect()
}

#[test]
fn rd_loss_examples() {
    let l = RdLoss::joint(0.013);
    assert_eq!(rd_loss(0.0, &rates([0.0; 8]), 0.0, &l).unwrap(), 0.0);
    let r = rates([0.1, 0.1, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05]);
    let v = rd_loss(0.001, &r, 0.02, &l).unwrap();
    assert!((v - 0.520013).abs() < 1e-12, "{v}");
}

#[test]
fn unit_weights_reduce_stage_two_to_stage_one() {
    let r = rates([0.3, 0.2, 0.11, 0.07, 0.05, 0.03, 0.02, 0.01]);
    let one = rd_loss(12.5, &r, 0.04, &RdLoss::joint(0.0067)).unwrap();
    let two = rd_loss(12.5, &r, 0.04, &RdLoss::reweighted(0.0067, 1.0, 1.0)).unwrap();
    assert_eq!(one, two);
    let w = rd_loss(0.0, &r, 0.0, &RdLoss::reweighted(0.0067, 1.2, 0.8)).unwrap();
    let expect = 1.2 * (0.3 + 0.2) + 0.8 * (0.11 + 0.07 + 0.05 + 0.03 + 0.02 + 0.01);
    assert!((w - expect).abs() < 1e-12);
}

#[test]
fn negative_rate_is_a_contract_error() {
    let mut r = rates([0.1; 8]);
    r[4].1 = -1e-9;
    assert!(matches!(rd_loss(0.0, &r, 0.0, &RdLoss::joint(0.01)), Err(Error::Contract(_))));
    assert!(matches!(rd_loss(0.0, &rates([0.1; 8]), -0.5, &RdLoss::joint(0.01)), Err(Error::Contract(_))));
}

#[test]
fn stage_two_needs_ordered_positive_weights() {
    for (w1, w2) in [(1.0, 1.0), (0.8, 1.2), (1.0, 0.0)] {
        let cfg = TrainConfig::toy_stage2(0.013, w1, w2);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{w1} {w2}");
    }
    TrainConfig::toy_stage2(0.013, 1.2, 0.8).validate().unwrap();
    let mut odd = TrainConfig::toy_stage1(0.013);
    odd.crop = 48;
    assert!(odd.validate().is_err());
}

#[test]
fn graph_loss_stage_degeneracy_is_exact() {
    let model = Model::new(ModelConfig::toy()).unwrap();
    let store = model.init(3).unwrap();
    let x = synthetic_crops(1, 64, 1)[0].to_tensor();
    let eval = |loss: &RdLoss| {
        let mut g = Eval::new(&store);
        let xv = g.input(x.clone());
        let t = loss_graph(&model, &mut g, &xv, &mut SeededRng::new(5), loss).unwrap();
        g.value(&t.loss).item()
    };
    assert_eq!(eval(&RdLoss::joint(0.013)), eval(&RdLoss::reweighted(0.013, 1.0, 1.0)));
}

#[test]
fn graph_ms_ssim_matches_metric() {
    let mut rng = SeededRng::new(8);
    let a = synthetic_crops(1, 256, 2)[0].to_tensor();
    let noise = seeded_normal(&mut rng, a.shape(), 0.05);
    let b = a.zip_map(&noise, |p, n| (p + n).clamp(0.0, 1.0)).unwrap();
    let empty = ParamStore::new();
    let mut g = Eval::new(&empty);
    let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
    let v = ms_ssim_graph(&mut g, &av, &bv).unwrap();
    let expect = ms_ssim(&a, &b).unwrap();
    assert!((g.value(&v).item() - expect).abs() < 1e-12);
}

#[test]
fn training_rate_agrees_with_coding_tables() {
    let mut rng = SeededRng::new(9);
    let mu = seeded_normal(&mut rng, (4, 16, 16), 1.0);
    let sigma = Tensor3::from_fn(4, 16, 16, |c, _, x| 0.3 + c as f64 + 0.2 * x as f64);
    let z = seeded_normal(&mut rng, (4, 16, 16), 1.0);
    let y = Tensor3::from_fn(4, 16, 16, |c, h, w| mu.at(c, h, w) + sigma.at(c, h, w) * z.at(c, h, w));
    let (symbols, yq) = quantize(&y, &mu).unwrap();
    let tables: Vec<_> = sigma.data().iter().map(|&s| table_for(s)).collect();
    let coded = estimate_rate(&symbols, &tables).unwrap();
    let empty = ParamStore::new();
    let mut g = Eval::new(&empty);
    let (a, b, c) = (g.input(yq), g.input(mu), g.input(sigma));
    let bits = g.apply(Op::GaussianBits, &[&a, &b, &c]).unwrap();
    let model = g.value(&bits).item();
    // Tables round σ up to a grid step (≤ 0.09 bits per symbol) and
    // quantize to 16 bits; nothing more.
    let n = symbols.len() as f64;
    assert!(coded >= model - 0.01 * n && coded <= model + 0.1 * n, "{model} vs {coded}");
}

fn short_config(iterations: u64) -> TrainConfig {
    TrainConfig { iterations, ..TrainConfig::toy_stage1(0.013) }
}

#[test]
fn same_seed_gives_identical_runs() {
    let model = Model::new(ModelConfig::toy()).unwrap();
    let crops: Vec<Tensor3> = synthetic_crops(3, 64, 4).iter().map(|c| c.to_tensor()).collect();
    let cfg = short_config(3);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut store = model.init(42).unwrap();
            let trace = train(&model, &mut store, &crops, &cfg, |_| {}).unwrap();
            (trace, model.checksum(&store))
        })
    };
    let (t1, c1) = run(1);
    let (t2, c2) = run(2);
    assert_eq!(t1, t2);
    assert_eq!(c1, c2);
    assert_eq!(t1.len(), 3);
    assert!(t1.iter().all(|r| r.loss.is_finite() && r.bpp_latent >= 0.0 && r.bpp_z >= 0.0));
    let mut other = cfg.clone();
    other.seed = 7;
    let mut store = model.init(42).unwrap();
    let t3 = train(&model, &mut store, &crops, &other, |_| {}).unwrap();
    assert_ne!(t1, t3);
}

#[test]
fn non_finite_loss_names_iteration_and_term() {
    let model = Model::new(ModelConfig::toy()).unwrap();
    let mut store = model.init(1).unwrap();
    let name = store.names().find(|n| n.starts_with("gs.3")).unwrap().to_string();
    let v = store.value(&name).unwrap().map(|_| f64::NAN);
    store.set_value(&name, v).unwrap();
    let crops = vec![synthetic_crops(1, 64, 1)[0].to_tensor()];
    match train(&model, &mut store, &crops, &short_config(2), |_| {}) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("iteration 0") && msg.contains("distortion"), "{msg}"),
        other => panic!("expected a numeric error, got {:?}", other.map(|t| t.len())),
    }
}

#[test]
fn trace_csv_layout() {
    let r = TraceRow { iteration: 7, loss: 1.5, distortion: 80.0, bpp_latent: 0.25, bpp_z: 0.01 };
    assert_eq!(TraceRow::CSV_HEADER, "iteration,loss,D,bpp_latent,bpp_z");
    assert_eq!(r.to_csv(), "7,1.50000000,80.00000000,0.25000000,0.01000000");
    let trace: Vec<TraceRow> = (0..200).map(|i| TraceRow { loss: 200.0 - i as f64, ..r.clone() }).collect();
    let ma = moving_average(&trace, 100);
    assert_eq!(ma.len(), 101);
    assert!(ma.last().unwrap() < &ma[0]);
}

#[test]
fn stage_numbers() {
    assert_eq!(TrainStage::from_number(1).unwrap(), TrainStage::Joint);
    assert_eq!(TrainStage::from_number(2).unwrap(), TrainStage::Reweighted);
    assert!(matches!(TrainStage::from_number(3), Err(Error::Argument(_))));
}

#[test]
fn crops_from_directory() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = synthetic_crops(2, 128, 3);
    wecodec::codec::write_image(&dir.path().join("b.png"), &imgs[1]).unwrap();
    wecodec::codec::write_image(&dir.path().join("a.ppm"), &imgs[0]).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let crops = load_crops(dir.path(), 64).unwrap();
    assert_eq!(crops.len(), 2);
    assert_eq!((crops[0].width, crops[0].height), (64, 64));
    let src = &imgs[0];
    assert_eq!(&crops[0].data[..3], &src.data[(32 * 128 + 32) * 3..(32 * 128 + 32) * 3 + 3]);
    assert!(matches!(load_crops(dir.path(), 192), Err(Error::Config(_))));
}

#[test]
fn synthetic_crops_are_deterministic() {
    assert_eq!(synthetic_crops(3, 64, 9), synthetic_crops(3, 64, 9));
    assert_ne!(synthetic_crops(1, 64, 9), synthetic_crops(1, 64, 10));
}
