//! Data machinery for comparing raw video denoiser training regimes:
//! sRGB to raw unprocessing, noise synthesis and calibration, Bayer
//! demosaicing, TV-L1 optical flow and raw-domain warping, self-supervised
//! loss evaluation over black-box denoisers, and quality metrics.

// `!(x >= lo)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod dataset;
pub mod demosaic;
pub mod error;
pub mod flow;
pub mod frame;
pub mod losses;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod plane;
pub mod pnm;
pub mod rng;
pub mod tonemap;
pub mod unprocess;

pub use error::{Error, Result};
pub use frame::{CfaPattern, Channel, Levels, RawFrame, RgbFrame, VideoSequence};
pub use plane::Plane;
