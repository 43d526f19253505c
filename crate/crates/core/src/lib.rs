pub mod codec;
pub mod entropy;
pub mod error;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod wecharm;
pub mod weconv;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{seeded_normal, seeded_uniform, SeededRng, Tensor3};
