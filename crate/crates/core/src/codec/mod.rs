//! Image codec: model assembly, bitstream container, image I/O, metrics.

mod bitstream;
mod image;
mod metrics;
mod model;
mod pipeline;

pub use bitstream::{chunk_size, Container, Header, HEADER_LEN, MAGIC, VERSION};
pub use image::{read_image, write_image, RgbImage};
pub use metrics::{downsample2, ms_ssim, ms_ssim_db, psnr, MS_SSIM_MIN_DIM, MS_SSIM_WEIGHTS};
pub use model::{pad_replicate, Model, ModelConfig, Profile, TrainForward, LAMBDAS_MSE, LAMBDAS_MSSSIM, PAD_MULTIPLE};
pub use pipeline::{report_subbands, Codec, Decoded, Encoded, RdReport, RdRow};
