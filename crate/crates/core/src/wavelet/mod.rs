//! Lifting-based wavelet transforms: 1D, multi-level 2D, channel-axis and 3D.

mod lifting;
mod subband;
mod transform;

pub use lifting::{
    lift_forward, lift_forward_with, lift_inverse, lift_inverse_with, Direction, Lifting, WaveletKind, CDF97_ALPHA,
    CDF97_BETA, CDF97_DELTA, CDF97_GAMMA, CDF97_K,
};
pub use subband::{
    dwt2d_forward, dwt2d_inverse, dwt3d_forward, dwt3d_inverse, dwt_channel_forward, dwt_channel_inverse,
    subband_stats, ChannelBand, Detail, Pyramid, SpatialBand, SubbandLabel, SubbandStats, SubbandTensor,
};
pub use transform::{check_2d_dims, dwt2d_in_place, dwt2d_packed, dwt_channel_in_place, dwt_channel_packed, Pass};
