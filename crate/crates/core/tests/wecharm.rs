use wecodec::nn::{grad_check, GradCheckOptions, Graph, ParamStore, Tape};
use wecodec::wecharm::{Charm, CharmConfig, SliceContext};
use wecodec::{seeded_normal, seeded_uniform, Error, SeededRng, Tensor3};

fn model(m: usize, hyper: usize, seed: u64) -> (Charm, ParamStore) {
    let charm = Charm::new(CharmConfig::new(m, hyper)).unwrap();
    let mut store = ParamStore::new();
    charm.register(&mut store, &mut SeededRng::new(seed)).unwrap();
    (charm, store)
}

fn zero_store(store: &ParamStore) -> ParamStore {
    let mut z = store.clone();
    let names: Vec<String> = z.names().map(str::to_string).collect();
    for n in names {
        let (c, h, w) = z.value(&n).unwrap().shape();
        z.set_value(&n, Tensor3::zeros(c, h, w)).unwrap();
    }
    z
}

fn perturb(store: &mut ParamStore, rng: &mut SeededRng, std: f64) {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names {
        let v = store.value(&n).unwrap().as_ref().clone();
        let noise = seeded_normal(rng, v.shape(), std);
        store.set_value(&n, v.zip_map(&noise, |a, b| a + b).unwrap()).unwrap();
    }
}

#[test]
fn zero_network_gives_unit_gaussian() {
    let (charm, store) = model(8, 6, 1);
    let store = zero_store(&store);
    let mut g = Tape::new(&store);
    let mut rng = SeededRng::new(2);
    let hyper = g.constant(seeded_uniform(&mut rng, (6, 4, 4), -1.0, 1.0).unwrap());
    let mut ctx = SliceContext { hyper, decoded: Vec::new() };
    for k in 0..charm.plan.len() {
        let (mu, sigma) = charm.predict_slice_params(&mut g, &ctx, k).unwrap();
        let c = charm.plan.slices[k].channels();
        assert_eq!(g.shape(&mu), (c, 4, 4));
        assert!(g.value(&mu).data().iter().all(|&v| v == 0.0));
        assert!(g.value(&sigma).data().iter().all(|&v| v == 1.0));
        let dq = g.constant(seeded_uniform(&mut rng, (c, 4, 4), -3.0, 3.0).unwrap());
        let r = charm.lrp_refine(&mut g, &ctx, &dq, k).unwrap();
        assert_eq!(g.value(&r).data(), g.value(&dq).data());
        ctx.decoded.push(r);
    }
}

#[test]
fn non_causal_context_is_rejected() {
    let (charm, store) = model(8, 6, 1);
    let mut g = Tape::new(&store);
    let hyper = g.constant(Tensor3::zeros(6, 4, 4));
    let ctx = SliceContext { hyper, decoded: Vec::new() };
    assert!(matches!(charm.predict_slice_params(&mut g, &ctx, 2), Err(Error::Contract(_))));
}

#[test]
fn refinement_is_bounded() {
    let (charm, mut store) = model(8, 6, 3);
    let mut rng = SeededRng::new(4);
    perturb(&mut store, &mut rng, 3.0);
    let mut g = Tape::new(&store);
    let hyper = g.constant(seeded_uniform(&mut rng, (6, 4, 4), -5.0, 5.0).unwrap());
    let mut ctx = SliceContext { hyper, decoded: Vec::new() };
    for k in 0..charm.plan.len() {
        let c = charm.plan.slices[k].channels();
        let dq = g.constant(seeded_uniform(&mut rng, (c, 4, 4), -10.0, 10.0).unwrap());
        let r = charm.lrp_refine(&mut g, &ctx, &dq, k).unwrap();
        assert!(g.value(&r).max_abs_diff(g.value(&dq)) <= 0.5);
        ctx.decoded.push(r);
    }
}

#[test]
fn slice_params_and_refinement_gradients() {
    let (charm, mut store) = model(8, 4, 5);
    let mut rng = SeededRng::new(6);
    perturb(&mut store, &mut rng, 0.1);
    let k = 3;
    let mut inputs = vec![seeded_uniform(&mut rng, (4, 4, 4), -1.0, 1.0).unwrap()];
    for s in &charm.plan.slices[..k] {
        inputs.push(seeded_uniform(&mut rng, (s.channels(), 4, 4), -1.0, 1.0).unwrap());
    }
    let c = charm.plan.slices[k].channels();
    inputs.push(seeded_uniform(&mut rng, (c, 4, 4), -2.0, 2.0).unwrap());
    let proj = seeded_normal(&mut rng, (c, 4, 4), 1.0);
    let r = grad_check(&store, &inputs, &GradCheckOptions::default(), |g, v| {
        let ctx = SliceContext { hyper: v[0], decoded: v[1..=k].to_vec() };
        let (mu, sigma) = charm.predict_slice_params(g, &ctx, k)?;
        let p = g.constant(proj.clone());
        let a = g.mul(&mu, &p)?;
        let b = g.mul(&sigma, &sigma)?;
        let s = g.add(&a, &b)?;
        g.sum(&s)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "params: {r:?}");
    let r = grad_check(&store, &inputs, &GradCheckOptions::default(), |g, v| {
        let ctx = SliceContext { hyper: v[0], decoded: v[1..=k].to_vec() };
        let out = charm.lrp_refine(g, &ctx, &v[k + 1], k)?;
        let p = g.constant(proj.clone());
        let a = g.mul(&out, &p)?;
        g.sum(&a)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "refine: {r:?}");
}

#[test]
fn partition_and_reconstruct_are_inverse() {
    for channel_dwt in [true, false] {
        let cfg = CharmConfig { channel_dwt, ..CharmConfig::new(16, 4) };
        let charm = Charm::new(cfg).unwrap();
        let store = ParamStore::new();
        let y = seeded_normal(&mut SeededRng::new(7), (16, 8, 12), 3.0);
        let slices = charm.partition_latent(&y).unwrap();
        let total: usize = slices.iter().map(|s| s.len()).sum();
        assert_eq!(total, y.len());
        let back = charm.reconstruct_latent(&store, &slices).unwrap();
        assert!(back.max_abs_diff(&y) <= 1e-9);
        assert!(matches!(charm.reconstruct_latent(&store, &slices[..4]), Err(Error::State(_))));
    }
}

fn coded_setup() -> (Charm, ParamStore, Tensor3, Tensor3) {
    let (charm, mut store) = model(16, 8, 8);
    let mut rng = SeededRng::new(9);
    perturb(&mut store, &mut rng, 0.05);
    let y = seeded_normal(&mut rng, (16, 8, 8), 4.0);
    let hyper = seeded_normal(&mut rng, (8, 8, 8), 1.0);
    (charm, store, y, hyper)
}

#[test]
fn encode_decode_are_symmetric() {
    let (charm, store, y, hyper) = coded_setup();
    let coded = charm.encode(&store, &y, &hyper).unwrap();
    let chunks: Vec<&[u8]> = coded.chunks.iter().map(Vec::as_slice).collect();
    let decoded = charm.decode(&store, &chunks, &hyper).unwrap();
    assert_eq!(decoded.data(), coded.y_hat.data());
    for (bytes, ideal) in coded.chunks.iter().zip(&coded.estimated_bits) {
        let actual = bytes.len() as f64 * 8.0;
        assert!(actual >= *ideal && actual <= ideal * 1.01 + 128.0, "{actual} vs {ideal}");
    }
    let slices = charm.partition_latent(&y).unwrap();
    for (r, s) in coded.refined.iter().zip(&slices) {
        assert!(r.max_abs_diff(s) <= 1.0 + 1e-12);
    }
}

#[test]
fn corrupting_a_chunk_leaves_earlier_slices_intact() {
    let (charm, store, y, hyper) = coded_setup();
    let coded = charm.encode(&store, &y, &hyper).unwrap();
    for j in 0..charm.plan.len() {
        let mut chunks = coded.chunks.clone();
        let mid = chunks[j].len() / 2;
        chunks[j][mid] ^= 0x5A;
        let refs: Vec<&[u8]> = chunks.iter().map(Vec::as_slice).collect();
        let (slices, _) = charm.decode_partial(&store, &refs, &hyper);
        assert!(slices.len() >= j);
        for k in 0..j {
            assert_eq!(slices[k].data(), coded.refined[k].data(), "slice {k} changed after corrupting {j}");
        }
    }
}
