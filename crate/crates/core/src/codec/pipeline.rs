//! Image-level encode, decode and bit-allocation report.

use std::path::Path;

use crate::entropy::{dequantize, quantize, range_decode, range_encode};
use crate::error::{Error, Result};
use crate::nn::{Eval, Graph, ParamStore};
use crate::tensor::Tensor3;

use super::bitstream::{chunk_size, Container, Header, HEADER_LEN, VERSION};
use super::image::RgbImage;
use super::metrics::{ms_ssim, ms_ssim_db, psnr, MS_SSIM_MIN_DIM};
use super::model::{pad_replicate, Model, PAD_MULTIPLE};

pub struct Codec {
    pub model: Model,
    pub store: ParamStore,
    checksum: u64,
}

/// Encoder output, including the encoder's own view of the latent.
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub y_hat: Tensor3,
    pub estimated_slice_bits: Vec<f64>,
}

pub struct Decoded {
    pub image: RgbImage,
    pub y_hat: Tensor3,
}

impl Codec {
    pub fn new(model: Model, store: ParamStore) -> Codec {
        let checksum = model.checksum(&store);
        Codec { model, store, checksum }
    }

    pub fn load(path: &Path) -> Result<Codec> {
        let (model, store) = Model::load(path)?;
        Ok(Codec::new(model, store))
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    fn chunk_count(&self) -> usize {
        1 + self.model.charm.plan.len()
    }

    pub fn encode(&self, img: &RgbImage) -> Result<Encoded> {
        if img.width == 0 || img.height == 0 {
            return Err(Error::Argument("empty image".into()));
        }
        let x = pad_replicate(&img.to_tensor(), PAD_MULTIPLE);
        let m = &self.model;
        let mut g = Eval::new(&self.store);
        let x = g.constant(x);
        let y = m.g_a(&mut g, &x)?;
        drop(x);
        let z = m.h_a(&mut g, &y)?;
        let (_, zh, zw) = z.shape();
        let (mu_z, tables) = m.prior.tables(&self.store, zh, zw)?;
        let (z_sym, z_hat) = quantize(&z, &mu_z)?;
        let z_chunk = range_encode(&z_sym, &tables)?;
        let z_hat = g.constant(z_hat);
        let hyper = m.h_s(&mut g, &z_hat)?;
        let coded = m.charm.encode(&self.store, &y, &hyper)?;
        let mut chunks = vec![z_chunk];
        chunks.extend(coded.chunks);
        let c = Container { header: self.header(img.width, img.height), chunks };
        Ok(Encoded { bytes: c.to_bytes(), y_hat: coded.y_hat, estimated_slice_bits: coded.estimated_bits })
    }

    fn header(&self, width: usize, height: usize) -> Header {
        let cfg = &self.model.cfg;
        Header {
            version: VERSION,
            wavelet_id: cfg.wavelet.id(),
            spatial_levels: cfg.weconv_levels as u8,
            profile_id: cfg.profile.id(),
            width: width as u32,
            height: height as u32,
            lambda_index: cfg.lambda_index,
            checksum: self.checksum,
        }
    }

    pub fn parse(&self, bytes: &[u8]) -> Result<Container> {
        let c = Container::parse(bytes, self.chunk_count())?;
        let h = &c.header;
        let expect = self.header(h.width as usize, h.height as usize);
        if h.checksum != expect.checksum {
            return Err(Error::Config(format!(
                "bitstream was produced by model {:016x}, loaded model is {:016x}",
                h.checksum, expect.checksum
            )));
        }
        if (h.profile_id, h.wavelet_id, h.spatial_levels) != (expect.profile_id, expect.wavelet_id, expect.spatial_levels) {
            return Err(Error::Config("bitstream profile or wavelet settings do not match the model".into()));
        }
        if h.width == 0 || h.height == 0 {
            return Err(Error::Decode("zero image dimension".into()));
        }
        Ok(c)
    }

    /// Hyper-side decode shared by the full and partial decoders.
    fn decode_hyper(&self, c: &Container) -> Result<Tensor3> {
        let (w, h) = (c.header.width as usize, c.header.height as usize);
        let (zh, zw) = (h.div_ceil(PAD_MULTIPLE), w.div_ceil(PAD_MULTIPLE));
        let m = &self.model;
        let (mu_z, tables) = m.prior.tables(&self.store, zh, zw)?;
        let z_sym = range_decode(&c.chunks[0], &tables)?;
        let mut g = Eval::new(&self.store);
        let z_hat = g.constant(dequantize(&z_sym, &mu_z)?);
        Ok(m.h_s(&mut g, &z_hat)?.as_ref().clone())
    }

    /// Decode latent slices in coding order, stopping at the first slice
    /// chunk that fails. Header and hyper-latent errors are returned as `Err`.
    pub fn decode_slices(&self, bytes: &[u8]) -> Result<(Vec<Tensor3>, Option<Error>)> {
        let c = self.parse(bytes)?;
        let hyper = self.decode_hyper(&c)?;
        let slices: Vec<&[u8]> = c.chunks[1..].iter().map(Vec::as_slice).collect();
        Ok(self.model.charm.decode_partial(&self.store, &slices, &hyper))
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<Decoded> {
        let c = self.parse(bytes)?;
        let (w, h) = (c.header.width as usize, c.header.height as usize);
        let hyper = self.decode_hyper(&c)?;
        let slices: Vec<&[u8]> = c.chunks[1..].iter().map(Vec::as_slice).collect();
        let y_hat = self.model.charm.decode(&self.store, &slices, &hyper)?;
        let mut g = Eval::new(&self.store);
        let yv = g.constant(y_hat.clone());
        let x_hat = self.model.g_s(&mut g, &yv)?;
        let image = RgbImage::from_tensor(&x_hat, w, h)?;
        Ok(Decoded { image, y_hat })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RdRow {
    pub label: String,
    pub bpp: f64,
    pub percent: f64,
}

/// Bit allocation of one bitstream: one row per subband (both slices of a
/// split subband summed), the hyper-latent row (header included) and the
/// total.
#[derive(Clone, Debug, PartialEq)]
pub struct RdReport {
    pub subbands: Vec<RdRow>,
    pub z: RdRow,
    pub total_bpp: f64,
    pub psnr: Option<f64>,
    pub ms_ssim: Option<f64>,
}

impl RdReport {
    pub fn latent_bpp(&self) -> f64 {
        self.subbands.iter().map(|r| r.bpp).sum()
    }

    /// Share of latent bits in the named subbands.
    pub fn latent_share(&self, labels: &[&str]) -> f64 {
        let part: f64 = self.subbands.iter().filter(|r| labels.contains(&r.label.as_str())).map(|r| r.bpp).sum();
        part / self.latent_bpp()
    }

    /// Tab-separated rows: label, bpp, percent; then the quality lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("subband\tbpp\tpercent\n");
        for r in self.subbands.iter().chain(std::iter::once(&self.z)) {
            s.push_str(&format!("{}\t{:.4}\t{:.1}\n", r.label, r.bpp, r.percent));
        }
        s.push_str(&format!("total\t{:.4}\t100.0\n", self.total_bpp));
        if let Some(p) = self.psnr {
            s.push_str(&format!("PSNR_dB\t{p:.3}\n"));
        }
        if let Some(v) = self.ms_ssim {
            s.push_str(&format!("MS-SSIM_dB\t{:.3}\n", ms_ssim_db(v)));
        }
        s
    }
}

pub fn report_subbands(codec: &Codec, bytes: &[u8], reference: Option<&RgbImage>) -> Result<RdReport> {
    let c = codec.parse(bytes)?;
    let pixels = c.header.width as f64 * c.header.height as f64;
    let total_bits = bytes.len() as f64 * 8.0;
    let plan = &codec.model.charm.plan;
    let mut subbands: Vec<RdRow> = Vec::new();
    for (spec, chunk) in plan.slices.iter().zip(&c.chunks[1..]) {
        let bpp = chunk_size(chunk) as f64 * 8.0 / pixels;
        match subbands.iter_mut().find(|r| r.label == spec.subband) {
            Some(r) => r.bpp += bpp,
            None => subbands.push(RdRow { label: spec.subband.clone(), bpp, percent: 0.0 }),
        }
    }
    let z_bpp = (HEADER_LEN + chunk_size(&c.chunks[0])) as f64 * 8.0 / pixels;
    let total_bpp = total_bits / pixels;
    for r in &mut subbands {
        r.percent = 100.0 * r.bpp / total_bpp;
    }
    let z = RdRow { label: "z".into(), bpp: z_bpp, percent: 100.0 * z_bpp / total_bpp };
    let (mut p, mut ms) = (None, None);
    if let Some(reference) = reference {
        let dec = codec.decode(bytes)?;
        let (a, b) = (reference.to_tensor(), dec.image.to_tensor());
        p = Some(psnr(&a, &b)?);
        if reference.width.min(reference.height) >= MS_SSIM_MIN_DIM {
            ms = Some(ms_ssim(&a, &b)?);
        }
    }
    Ok(RdReport { subbands, z, total_bpp, psnr: p, ms_ssim: ms })
}
