//! Frozen saliency detection and the mask algebra built on it.
//!
//! Two families live here. Hard operations ([`threshold_hard`], [`iou_hard`])
//! produce the binary masks used by the discriminator's auxiliary branch and
//! by the evaluation metric; they carry no gradient. Soft operations
//! ([`threshold_soft`], [`iou_soft`]) are their differentiable counterparts
//! and are what the structural loss optimizes.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Tape, Var};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Degenerate-mask threshold and soft-IOU stabilizer.
pub const MASK_EPS: f64 = 1e-6;
/// Default temperature of [`threshold_soft`].
pub const DEFAULT_TAU: f64 = 0.1;
/// Binarization threshold; values `>= 0.5` are salient.
pub const THRESHOLD: f64 = 0.5;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

/// One convolution of a [`FrozenConvNet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenConv {
    /// `(Cout, Cin, k, k)`
    pub weight: Tensor,
    /// `(Cout)`
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
    pub activation: Activation,
}

/// A fixed stack of convolutions loaded from exported weights. Used as the
/// adapter for externally trained saliency and feature networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenConvNet {
    pub layers: Vec<FrozenConv>,
}

impl FrozenConvNet {
    /// Checks that layer channel counts chain and that the net consumes RGB.
    pub fn validate(&self) -> Result<()> {
        let mut cin = 3;
        if self.layers.is_empty() {
            return Err(Error::Init("frozen network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            match *l.weight.shape() {
                [co, ci, k, k2] if ci == cin && k == k2 && l.bias.shape() == [co] && l.stride > 0 => cin = co,
                _ => {
                    return Err(Error::Init(alloc::format!(
                        "layer {i}: weight {:?} / bias {:?} do not chain from {cin} channels",
                        l.weight.shape(),
                        l.bias.shape()
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(3, |l| l.weight.shape()[0])
    }

    /// Forward pass with the weights as tape constants.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for l in &self.layers {
            let w = tape.constant(l.weight.clone());
            let b = tape.constant(l.bias.clone());
            h = tape.conv2d(h, w, Some(b), l.stride, l.pad);
            h = match l.activation {
                Activation::Identity => h,
                Activation::Relu => tape.relu(h),
                Activation::LeakyRelu(s) => tape.leaky_relu(h, s),
                Activation::Sigmoid => tape.sigmoid(h),
            };
        }
        h
    }
}

/// The frozen saliency detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SaliencyDetector {
    /// Analytic luminance-contrast detector: luminance above the image mean,
    /// scaled by its per-image maximum and smoothed with a 3×3 mean filter.
    Synthetic,
    /// Exported single-channel network; its output passes through a sigmoid
    /// and is resized back to the input resolution.
    Pretrained(FrozenConvNet),
}

impl SaliencyDetector {
    pub fn pretrained(net: FrozenConvNet) -> Result<Self> {
        net.validate()?;
        if net.out_channels() != 1 {
            return Err(Error::Init(alloc::format!(
                "saliency network must output 1 channel, got {}",
                net.out_channels()
            )));
        }
        Ok(Self::Pretrained(net))
    }

    /// Differentiable detection of a `(B, 3, H, W)` image in `[0, 1]`.
    /// Gradients flow to `img`; detector weights are constants.
    pub fn detect_var(&self, tape: &mut Tape, img: Var) -> Var {
        let (b, _, h, w) = tape.value(img).dims4().expect("image batch");
        match self {
            Self::Synthetic => {
                let luma = tape.constant(Tensor::new(&[1, 3, 1, 1], LUMA.to_vec()).expect("luma"));
                let lum = tape.conv2d(img, luma, None, 1, 0);
                let total = tape.sum_items(lum);
                let mean = tape.scale(total, 1.0 / (h * w) as f64);
                let mean = tape.expand_items(mean, &[b, 1, h, w]);
                let above = tape.sub(lum, mean);
                let above = tape.relu(above);
                let peak = tape.max_items(above);
                let peak = tape.affine(peak, 1.0, MASK_EPS);
                let peak = tape.expand_items(peak, &[b, 1, h, w]);
                let scaled = tape.div(above, peak);
                box_mean3(tape, scaled)
            }
            Self::Pretrained(net) => {
                let logits = net.forward(tape, img);
                let s = tape.sigmoid(logits);
                tape.resize_bilinear(s, h, w)
            }
        }
    }

    /// Saliency map `(B, 1, H, W)` in `[0, 1]` of an image batch in `[0, 1]`.
    pub fn detect(&self, img: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = img.dims4()?;
        if c != 3 {
            return Err(shape_err!("detector expects 3 channels, got {c}"));
        }
        let mut tape = Tape::new();
        let x = tape.constant(img.clone());
        let s = self.detect_var(&mut tape, x);
        Ok(tape.value(s).clone())
    }
}

/// 3×3 mean over in-bounds neighbours.
fn box_mean3(tape: &mut Tape, x: Var) -> Var {
    let (_, _, h, w) = tape.value(x).dims4().expect("rank 4");
    let ones = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
    let summed = tape.conv2d(x, ones, None, 1, 1);
    let count = Tensor::from_fn(&[1, 1, h, w], |i| {
        let (y, x) = (i / w, i % w);
        let ny = (y.min(1) + 1 + (h - 1 - y).min(1)) as f64;
        let nx = (x.min(1) + 1 + (w - 1 - x).min(1)) as f64;
        1.0 / (ny * nx)
    });
    let b = tape.shape(summed)[0];
    let inv = Tensor::stack_batch(&alloc::vec![count; b]).expect("same shapes");
    let inv = tape.constant(inv);
    tape.mul(summed, inv)
}

/// A `{0, 1}` mask obtained from [`threshold_hard`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMask(Tensor);

impl BinaryMask {
    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }

    /// Number of set cells per batch item.
    pub fn counts(&self) -> Vec<f64> {
        let b = self.0.shape()[0];
        self.0.data().chunks(self.0.len() / b.max(1)).map(|c| c.iter().sum()).collect()
    }
}

/// `1` where `s >= 0.5`, else `0`.
pub fn threshold_hard(s: &Tensor) -> BinaryMask {
    BinaryMask(s.map(|v| if v >= THRESHOLD { 1.0 } else { 0.0 }))
}

/// `sigmoid((s - 0.5) / tau)`, elementwise.
pub fn threshold_soft(tape: &mut Tape, s: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let z = tape.affine(s, 1.0 / tau, -THRESHOLD / tau);
    Ok(tape.sigmoid(z))
}

/// Tensor form of [`threshold_soft`].
pub fn threshold_soft_tensor(s: &Tensor, tau: f64) -> Result<Tensor> {
    check_tau(tau)?;
    Ok(s.map(|v| sigmoid((v - THRESHOLD) / tau)))
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(arg_err!("soft threshold temperature must be positive, got {tau}"))
    }
}

/// Bilinear ×8 downscaling of a `(B, C, H, W)` map.
pub fn downsample8(s: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = s.dims4()?;
    if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
        return Err(arg_err!("downsample8 needs spatial dims divisible by 8, got {h}x{w}"));
    }
    let out = kernels::resize_bilinear_forward(s.data(), b * c, (h, w), (h / 8, w / 8));
    Tensor::new(&[b, c, h / 8, w / 8], out)
}

/// Auxiliary-branch mask for a saliency map: ×8 downsample, then binarize.
pub fn aux_mask(s: &Tensor) -> Result<BinaryMask> {
    Ok(threshold_hard(&downsample8(s)?))
}

/// Per-item `|a ∩ b| / |a ∪ b|`; two empty masks score `1`.
pub fn iou_hard_items(a: &BinaryMask, b: &BinaryMask) -> Result<Vec<f64>> {
    if a.shape() != b.shape() || a.shape().is_empty() {
        return Err(shape_err!("iou operands {:?} and {:?}", a.shape(), b.shape()));
    }
    let items = a.shape()[0];
    let per = a.0.len() / items.max(1);
    Ok(a.0
        .data()
        .chunks(per)
        .zip(b.0.data().chunks(per))
        .map(|(x, y)| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&p, &q) in x.iter().zip(y) {
                let (p, q) = (p > 0.5, q > 0.5);
                inter += (p && q) as usize;
                union += (p || q) as usize;
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect())
}

/// Batch mean of [`iou_hard_items`].
pub fn iou_hard(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let items = iou_hard_items(a, b)?;
    Ok(items.iter().sum::<f64>() / items.len() as f64)
}

/// Differentiable IOU of soft masks in `[0, 1]`:
/// `Σab / (Σa + Σb − Σab + ε)` per item, averaged over the batch.
pub fn iou_soft(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) || tape.shape(a).is_empty() {
        return Err(shape_err!("iou operands {:?} and {:?}", tape.shape(a), tape.shape(b)));
    }
    let ab = tape.mul(a, b);
    let inter = tape.sum_items(ab);
    let sa = tape.sum_items(a);
    let sb = tape.sum_items(b);
    let union = tape.add(sa, sb);
    let union = tape.sub(union, inter);
    let union = tape.affine(union, 1.0, MASK_EPS);
    let ratio = tape.div(inter, union);
    Ok(tape.mean(ratio))
}

/// Saliency-masked squared error against a constant `target`:
/// per item `Σ mask·(logits − target)² / Σ mask`, then the batch mean.
/// Items whose mask is empty contribute `0`.
pub fn masked_mse(tape: &mut Tape, logits: Var, target: f64, mask: &BinaryMask) -> Result<Var> {
    if tape.shape(logits) != mask.shape() {
        return Err(shape_err!("logits {:?} vs mask {:?}", tape.shape(logits), mask.shape()));
    }
    let items = mask.shape()[0];
    let inv: Vec<f64> = mask
        .counts()
        .into_iter()
        .map(|n| if n < MASK_EPS { 0.0 } else { 1.0 / n })
        .collect();
    let diff = tape.affine(logits, 1.0, -target);
    let sq = tape.square(diff);
    let m = tape.constant(mask.as_tensor().clone());
    let masked = tape.mul(sq, m);
    let per_item = tape.sum_items(masked);
    let inv = tape.constant(Tensor::new(&[items], inv)?);
    let per_item = tape.mul(per_item, inv);
    Ok(tape.mean(per_item))
}

/// Plain mean squared error against a constant target.
pub fn mse_to(tape: &mut Tape, logits: Var, target: f64) -> Var {
    let diff = tape.affine(logits, 1.0, -target);
    let sq = tape.square(diff);
    tape.mean(sq)
}
