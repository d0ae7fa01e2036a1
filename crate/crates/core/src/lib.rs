//! Desk-scale unpaired image dehazing toolkit.
//!
//! The pipeline couples an atmospheric-scattering-model engine ([`asm`]) with
//! a dehazing generator built from Kolmogorov-Arnold layers ([`kan`]), a
//! dual-branch channel block ([`kan_cid`]), an implicit coordinate decoder
//! ([`inr`]), and dense residual refinement ([`drem`]). Training is unpaired
//! (adversarial + scattering-model cycle); [`metrics`] provides reference
//! PSNR/SSIM for evaluation.

pub mod asm;
pub mod config;
pub mod dataio;
pub mod drem;
pub mod error;
pub mod graph;
pub mod image;
pub mod inr;
pub mod kan;
pub mod kan_cid;
pub mod metrics;
pub mod network;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use image::Image;
pub use scalar::Scalar;
pub use tensor::Tensor;
