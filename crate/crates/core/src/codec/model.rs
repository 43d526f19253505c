//! The analysis/synthesis transforms, hyperprior and entropy model as one
//! network.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::entropy::FactorizedPrior;
use crate::error::{shape_err, Error, Result};
use crate::nn::{ConvSpec, Graph, ParamStore, ResGroup, LEAKY_SLOPE, LINEAR_GAIN};
use crate::tensor::{SeededRng, Tensor3};
use crate::wavelet::WaveletKind;
use crate::wecharm::{Charm, CharmConfig};
use crate::weconv::{WeConv, WeConvConfig};

/// Total downsampling of the analysis transform times the hyper path.
pub const PAD_MULTIPLE: usize = 64;

/// MSE training λ grid; the checkpoint stores an index into it.
pub const LAMBDAS_MSE: [f64; 6] = [0.0025, 0.0035, 0.0067, 0.013, 0.025, 0.05];
/// MS-SSIM training λ grid.
pub const LAMBDAS_MSSSIM: [f64; 5] = [5.0, 8.0, 16.0, 32.0, 64.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Toy,
    Paper,
}

impl Profile {
    pub fn id(self) -> u8 {
        match self {
            Profile::Toy => 0,
            Profile::Paper => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Profile> {
        match id {
            0 => Ok(Profile::Toy),
            1 => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile id {id}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Toy => "toy",
            Profile::Paper => "paper",
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Profile> {
        match s {
            "toy" => Ok(Profile::Toy),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Argument(format!("unknown profile '{s}' (toy, paper)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub profile: Profile,
    /// Internal feature width `N`.
    pub n: usize,
    /// Latent channels `M`.
    pub m: usize,
    /// Residual blocks per group.
    pub res_blocks: usize,
    /// Which of the four down/upsampling stages use the wavelet layer.
    pub weconv_stages: [bool; 4],
    pub wavelet: WaveletKind,
    pub channel_wavelet: WaveletKind,
    pub weconv_levels: usize,
    pub hf_kernel: usize,
    pub charm_channel_dwt: bool,
    pub attention: bool,
    pub lambda_index: u8,
}

impl ModelConfig {
    pub fn toy() -> Self {
        ModelConfig {
            profile: Profile::Toy,
            n: 32,
            m: 64,
            res_blocks: 1,
            weconv_stages: [false, true, true, false],
            wavelet: WaveletKind::Cdf97,
            channel_wavelet: WaveletKind::Haar,
            weconv_levels: 2,
            hf_kernel: 1,
            charm_channel_dwt: true,
            attention: true,
            lambda_index: 3,
        }
    }

    pub fn paper() -> Self {
        ModelConfig { profile: Profile::Paper, n: 128, m: 320, res_blocks: 3, ..Self::toy() }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Toy => Self::toy(),
            Profile::Paper => Self::paper(),
        }
    }

    fn codes(&self) -> Vec<f64> {
        let mask = self.weconv_stages.iter().enumerate().map(|(i, &b)| (b as u32) << i).sum::<u32>();
        vec![
            self.profile.id() as f64,
            self.n as f64,
            self.m as f64,
            self.res_blocks as f64,
            mask as f64,
            self.wavelet.id() as f64,
            self.channel_wavelet.id() as f64,
            self.weconv_levels as f64,
            self.hf_kernel as f64,
            self.charm_channel_dwt as u8 as f64,
            self.attention as u8 as f64,
            self.lambda_index as f64,
        ]
    }

    fn from_codes(c: &[f64]) -> Result<ModelConfig> {
        if c.len() != 12 || c.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(Error::Config("malformed model config record".into()));
        }
        let u = |i: usize| c[i] as usize;
        let mask = u(4);
        Ok(ModelConfig {
            profile: Profile::from_id(u(0) as u8)?,
            n: u(1),
            m: u(2),
            res_blocks: u(3),
            weconv_stages: [mask & 1 != 0, mask & 2 != 0, mask & 4 != 0, mask & 8 != 0],
            wavelet: WaveletKind::from_id(u(5) as u8).map_err(|e| Error::Config(e.to_string()))?,
            channel_wavelet: WaveletKind::from_id(u(6) as u8).map_err(|e| Error::Config(e.to_string()))?,
            weconv_levels: u(7),
            hf_kernel: u(8),
            charm_channel_dwt: u(9) != 0,
            attention: u(10) != 0,
            lambda_index: u(11) as u8,
        })
    }

    pub fn lambda(&self) -> f64 {
        LAMBDAS_MSE[(self.lambda_index as usize).min(LAMBDAS_MSE.len() - 1)]
    }
}

enum Stage {
    Conv(ConvSpec, String),
    WeConv(WeConv),
}

impl Stage {
    fn param_count(&self) -> usize {
        match self {
            Stage::Conv(s, _) => s.param_count(),
            Stage::WeConv(w) => w.param_count(),
        }
    }

    fn name(&self) -> String {
        match self {
            Stage::Conv(_, p) => p.clone(),
            Stage::WeConv(w) => w.prefix.clone(),
        }
    }

    fn register(&self, store: &mut ParamStore, rng: &mut SeededRng) -> Result<()> {
        match self {
            Stage::Conv(s, p) => s.register(store, p, rng, LINEAR_GAIN),
            Stage::WeConv(w) => w.register(store, rng),
        }
    }

    fn apply<G: Graph>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        match self {
            Stage::Conv(s, p) => s.apply(g, x, p),
            Stage::WeConv(w) => w.apply(g, x),
        }
    }
}

/// Outputs of the differentiable training pass, rates in bits.
pub struct TrainForward<V> {
    pub x_hat: V,
    pub slice_bits: Vec<V>,
    pub z_bits: V,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub charm: Charm,
    pub prior: FactorizedPrior,
    ga: Vec<(Stage, ResGroup, String)>,
    gs: Vec<(ResGroup, String, Stage)>,
    ha: [ConvSpec; 3],
    hs: [ConvSpec; 3],
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Model> {
        if cfg.n == 0 || !cfg.n.is_multiple_of(2) {
            return Err(Error::Config(format!("feature width must be even, got {}", cfg.n)));
        }
        if !cfg.m.is_multiple_of(4) || cfg.m == 0 {
            return Err(Error::Config(format!("latent channels must be a multiple of 4, got {}", cfg.m)));
        }
        if cfg.res_blocks == 0 {
            return Err(Error::Config("at least one residual block per group".into()));
        }
        let (n, m) = (cfg.n, cfg.m);
        let mut wc_index = 0;
        let mut weconv = |c_in: usize, c_out: usize, transposed: bool| -> Result<Stage> {
            wc_index += 1;
            let wc = WeConvConfig {
                c_in,
                c_out,
                stride: 2,
                channel_wavelet: cfg.channel_wavelet,
                spatial_wavelet: cfg.wavelet,
                levels: cfg.weconv_levels,
                hf_kernel: cfg.hf_kernel,
                transposed,
            };
            Ok(Stage::WeConv(WeConv::new(wc, format!("weconv{wc_index}"))?))
        };
        let mut ga = Vec::new();
        for i in 0..4 {
            let c_in = if i == 0 { 3 } else { n };
            let c_out = if i == 3 { m } else { n };
            let stage = if cfg.weconv_stages[i] {
                weconv(c_in, c_out, false)?
            } else {
                Stage::Conv(ConvSpec::conv(3, 2, c_in, c_out), format!("ga.{i}.conv"))
            };
            ga.push((stage, ResGroup { channels: c_out, blocks: cfg.res_blocks }, format!("ga.{i}.rg")));
        }
        let mut gs = Vec::new();
        for i in 0..4 {
            let c_in = if i == 0 { m } else { n };
            let c_out = if i == 3 { 3 } else { n };
            // Stage i of the synthesis mirrors analysis stage 3 - i.
            let stage = if cfg.weconv_stages[3 - i] && c_out % 2 == 0 {
                weconv(c_in, c_out, true)?
            } else {
                Stage::Conv(ConvSpec::tconv(3, 2, c_in, c_out), format!("gs.{i}.tconv"))
            };
            gs.push((ResGroup { channels: c_in, blocks: cfg.res_blocks }, format!("gs.{i}.rg"), stage));
        }
        let ha = [ConvSpec::conv(3, 1, m, n), ConvSpec::conv(3, 2, n, n), ConvSpec::conv(3, 2, n, n)];
        let hs = [ConvSpec::tconv(3, 2, n, n), ConvSpec::tconv(3, 2, n, n), ConvSpec::conv(3, 1, n, 2 * m)];
        let charm = Charm::new(CharmConfig {
            latent_channels: m,
            hyper_channels: 2 * m,
            channel_wavelet: cfg.channel_wavelet,
            spatial_wavelet: cfg.wavelet,
            attention: cfg.attention,
            channel_dwt: cfg.charm_channel_dwt,
        })?;
        Ok(Model { cfg, charm, prior: FactorizedPrior { channels: n }, ga, gs, ha, hs })
    }

    /// Fresh parameters from `seed`.
    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(seed);
        for (stage, rg, p) in &self.ga {
            stage.register(&mut store, &mut rng)?;
            rg.register(&mut store, p, &mut rng)?;
        }
        for (rg, p, stage) in &self.gs {
            rg.register(&mut store, p, &mut rng)?;
            stage.register(&mut store, &mut rng)?;
        }
        for (i, s) in self.ha.iter().enumerate() {
            s.register(&mut store, &format!("ha.{i}"), &mut rng, if i == 2 { LINEAR_GAIN } else { 1.0 })?;
        }
        for (i, s) in self.hs.iter().enumerate() {
            s.register(&mut store, &format!("hs.{i}"), &mut rng, if i == 2 { LINEAR_GAIN } else { 1.0 })?;
        }
        self.prior.register(&mut store)?;
        self.charm.register(&mut store, &mut rng)?;
        store.set_meta("config", self.cfg.codes());
        Ok(store)
    }

    /// Load a checkpoint, rebuilding the architecture it was trained with.
    pub fn load(path: &Path) -> Result<(Model, ParamStore)> {
        let raw = ParamStore::load(path)?;
        let codes = raw.meta("config").ok_or_else(|| Error::Config("checkpoint has no model config".into()))?;
        let model = Model::new(ModelConfig::from_codes(codes)?)?;
        let mut store = model.init(0)?;
        store.load_from(&raw)?;
        Ok((model, store))
    }

    /// Per-layer parameter counts, in network order.
    pub fn layer_param_counts(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (stage, rg, p) in &self.ga {
            out.push((stage.name(), stage.param_count()));
            out.push((p.clone(), rg.param_count()));
        }
        for (rg, p, stage) in &self.gs {
            out.push((p.clone(), rg.param_count()));
            out.push((stage.name(), stage.param_count()));
        }
        for (i, s) in self.ha.iter().enumerate() {
            out.push((format!("ha.{i}"), s.param_count()));
        }
        for (i, s) in self.hs.iter().enumerate() {
            out.push((format!("hs.{i}"), s.param_count()));
        }
        out.push(("prior".into(), self.prior.param_count()));
        out.push(("charm".into(), self.charm.param_count()));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layer_param_counts().iter().map(|(_, c)| c).sum()
    }

    pub fn g_a<G: Graph>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        let mut h = x.clone();
        for (stage, rg, p) in &self.ga {
            h = stage.apply(g, &h)?;
            h = rg.apply(g, &h, p)?;
        }
        Ok(h)
    }

    pub fn g_s<G: Graph>(&self, g: &mut G, y: &G::V) -> Result<G::V> {
        let mut h = y.clone();
        for (rg, p, stage) in &self.gs {
            h = rg.apply(g, &h, p)?;
            h = stage.apply(g, &h)?;
        }
        Ok(h)
    }

    pub fn h_a<G: Graph>(&self, g: &mut G, y: &G::V) -> Result<G::V> {
        let h = g.conv2d(y, "ha.0", 1)?;
        let h = g.leaky_relu(&h, LEAKY_SLOPE)?;
        let h = g.conv2d(&h, "ha.1", 2)?;
        let h = g.leaky_relu(&h, LEAKY_SLOPE)?;
        g.conv2d(&h, "ha.2", 2)
    }

    pub fn h_s<G: Graph>(&self, g: &mut G, z: &G::V) -> Result<G::V> {
        let h = g.tconv2d(z, "hs.0", 2)?;
        let h = g.leaky_relu(&h, LEAKY_SLOPE)?;
        let h = g.tconv2d(&h, "hs.1", 2)?;
        let h = g.leaky_relu(&h, LEAKY_SLOPE)?;
        g.conv2d(&h, "hs.2", 1)
    }

    pub fn check_input(&self, shape: (usize, usize, usize)) -> Result<()> {
        let (c, h, w) = shape;
        if c != 3 || h == 0 || w == 0 || h % PAD_MULTIPLE != 0 || w % PAD_MULTIPLE != 0 {
            return Err(shape_err!("model input must be 3×H×W with H, W multiples of {}, got {:?}", PAD_MULTIPLE, shape));
        }
        Ok(())
    }

    /// Differentiable forward pass with additive-noise quantization. Noise
    /// is drawn from `rng`: hyper-latent first, then slices in order.
    pub fn forward_train<G: Graph>(&self, g: &mut G, x: &G::V, rng: &mut SeededRng) -> Result<TrainForward<G::V>> {
        self.check_input(g.shape(x))?;
        let y = self.g_a(g, x)?;
        let z = self.h_a(g, &y)?;
        let (_, zh, zw) = g.shape(&z);
        let u = crate::tensor::seeded_uniform(rng, g.shape(&z), -0.5, 0.5)?;
        let u = g.constant(u);
        let z_noisy = g.add(&z, &u)?;
        let (mu_z, sigma_z) = self.prior.params(g, zh, zw)?;
        let z_bits = g.apply(crate::nn::Op::GaussianBits, &[&z_noisy, &mu_z, &sigma_z])?;
        let hyper = self.h_s(g, &z_noisy)?;
        let mut noise = |_k: usize, shape: (usize, usize, usize)| crate::tensor::seeded_uniform(rng, shape, -0.5, 0.5);
        let out = self.charm.forward_train(g, &y, &hyper, &mut noise)?;
        let x_hat = self.g_s(g, &out.y_hat)?;
        Ok(TrainForward { x_hat, slice_bits: out.slice_bits, z_bits })
    }

    /// 64-bit digest of the architecture and every parameter value.
    pub fn checksum(&self, store: &ParamStore) -> u64 {
        let mut h = Sha256::new();
        for c in self.cfg.codes() {
            h.update(c.to_le_bytes());
        }
        for (name, e) in store.iter() {
            h.update((name.len() as u32).to_le_bytes());
            h.update(name.as_bytes());
            for v in e.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

/// Replicate-pad a tensor on the bottom/right to multiples of `m`.
pub fn pad_replicate(t: &Tensor3, m: usize) -> Tensor3 {
    let (c, h, w) = t.shape();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    Tensor3::from_fn(c, ph, pw, |ci, y, x| t.at(ci, y.min(h - 1), x.min(w - 1)))
}
