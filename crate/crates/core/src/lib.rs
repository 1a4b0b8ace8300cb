//! Direct preference optimization for small video diffusion models.
//!
//! The crate is built bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense tensors and a tape-based reverse-mode engine.
//! - [`gradcheck`]: central finite differences used to verify every gradient.
//! - [`diffusion`]: noise schedule, forward noising, DDIM sampling and inversion.
//! - [`denoiser`]: the noise predictor with sparse causal attention and LoRA.
//! - [`dpo`]: Bradley-Terry, policy DPO and the video DPO pair loss.
//! - [`data`]: video files, toy videos, scored datasets and preference pairs.
//! - [`train`]: optimizer, checkpoints, both training stages and inference.
//! - [`metrics`]: consecutive-frame SSIM/MSE and consistency reports.

pub mod autodiff;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod dpo;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Graph, Primitive, Var};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
