//! Saliency-regularized and saliency-attended unpaired image translation.
//!
//! The crate is `no_std` (with `alloc`) and holds everything that is pure
//! computation: a small reverse-mode autograd tape over `f64` tensors, the
//! generator with saliency adaptive normalization, the two-head
//! discriminator, the training objectives and step, and the evaluation
//! metrics. File formats, image IO and the command line live in the `sragan`
//! crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autograd;
pub mod discriminator;
pub mod error;
pub mod generator;
mod kernels;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod saliency;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use discriminator::{DiscriminatorConfig, LogitPair, SaliencyAttendedDiscriminator};
pub use error::{Error, Result};
pub use generator::{instance_normalize, GeneratorConfig, GeneratorNet, SANorm};
pub use losses::{LossReport, LossWeights};
pub use metrics::{fid, fit_gaussian, saliency_miou, FeatureExtractor, GaussianStats};
pub use nn::{Binding, ParamSet};
pub use saliency::{BinaryMask, SaliencyDetector};
pub use tensor::{from_unit_range, to_unit_range, Tensor};
pub use train::{lr_at, Ablation, ReplayPool, TrainConfig, TrainState, UnpairedSampler};
