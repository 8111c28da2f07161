//! Saliency-regularized encoder–decoder generator.
//!
//! The bottleneck mixes plain residual blocks with saliency-normalized blocks.
//! In the latter, one [`SANorm`] layer standardizes features per channel and
//! re-modulates them with scale and shift tensors predicted from the
//! saliency map, so the network sees object structure at every such block.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{arg_err, shape_err, Result};
use crate::nn::{Binding, Conv, InstanceNorm, ParamSet};
use crate::tensor::Tensor;

/// Architecture hyperparameters of a [`GeneratorNet`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Channels after the stem; the bottleneck runs at four times this.
    pub base_channels: usize,
    pub n_bottleneck: usize,
    /// Bottleneck indices that are saliency-normalized blocks.
    pub sn_positions: Vec<usize>,
    /// Hidden channels of the shared first convolution in each SANorm.
    pub sanorm_hidden: usize,
    /// `false` turns every saliency block into a residual block.
    pub use_sanorm: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            n_bottleneck: 9,
            sn_positions: alloc::vec![0, 2, 4, 6, 8],
            sanorm_hidden: 128,
            use_sanorm: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.sanorm_hidden == 0 {
            return Err(arg_err!("generator channel counts must be positive"));
        }
        if let Some(&p) = self.sn_positions.iter().find(|&&p| p >= self.n_bottleneck) {
            return Err(arg_err!("SN block position {p} outside bottleneck of {}", self.n_bottleneck));
        }
        Ok(())
    }
}

/// Saliency adaptive normalization.
///
/// `γ = g1(s)` and `β = g2(s)`, where `g1` and `g2` are each two 3×3
/// convolutions joined by a ReLU and share the first convolution. The map is
/// bilinearly resized to the feature resolution first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SANorm {
    pub shared: Conv,
    pub gamma: Conv,
    pub beta: Conv,
    pub channels: usize,
}

impl SANorm {
    pub const EPS: f64 = 1e-5;

    /// The γ head starts at bias 1 so a fresh layer is close to plain
    /// instance normalization.
    pub fn new<R: Rng>(params: &mut ParamSet, rng: &mut R, name: &str, channels: usize, hidden: usize) -> Self {
        let shared = Conv::new(params, rng, &alloc::format!("{name}.shared"), 1, hidden, 3, 1, 1);
        let gamma = Conv::new(params, rng, &alloc::format!("{name}.gamma"), hidden, channels, 3, 1, 1);
        let beta = Conv::new(params, rng, &alloc::format!("{name}.beta"), hidden, channels, 3, 1, 1);
        params.get_mut(gamma.bias).data_mut().fill(1.0);
        Self { shared, gamma, beta, channels }
    }

    /// `(γ, β)` predicted from saliency `s` at `(h, w)`.
    pub fn modulation(&self, tape: &mut Tape, p: &Binding, s: Var, h: usize, w: usize) -> (Var, Var) {
        let s = tape.resize_bilinear(s, h, w);
        let hidden = self.shared.forward(tape, p, s);
        let hidden = tape.relu(hidden);
        (self.gamma.forward(tape, p, hidden), self.beta.forward(tape, p, hidden))
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, f_in: Var, s: Var) -> Var {
        let (_, c, h, w) = tape.value(f_in).dims4().expect("feature tensor");
        assert_eq!(c, self.channels, "SANorm built for {} channels, got {c}", self.channels);
        let normed = tape.instance_norm(f_in, Self::EPS);
        let (gamma, beta) = self.modulation(tape, p, s, h, w);
        let scaled = tape.mul(normed, gamma);
        tape.add(scaled, beta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Block {
    /// `x + IN(conv(relu(IN(conv(x)))))`
    Res { conv1: Conv, norm1: InstanceNorm, conv2: Conv, norm2: InstanceNorm },
    /// `x + IN(conv(relu(SANorm(conv(x), s))))`
    Sn { conv1: Conv, sanorm: SANorm, conv2: Conv, norm2: InstanceNorm },
}

impl Block {
    fn forward(&self, tape: &mut Tape, p: &Binding, x: Var, s: Var) -> Var {
        let h = match self {
            Block::Res { conv1, norm1, conv2, norm2 } => {
                let h = conv1.forward(tape, p, x);
                let h = norm1.forward(tape, p, h);
                let h = tape.relu(h);
                let h = conv2.forward(tape, p, h);
                norm2.forward(tape, p, h)
            }
            Block::Sn { conv1, sanorm, conv2, norm2 } => {
                let h = conv1.forward(tape, p, x);
                let h = sanorm.forward(tape, p, h, s);
                let h = tape.relu(h);
                let h = conv2.forward(tape, p, h);
                norm2.forward(tape, p, h)
            }
        };
        tape.add(x, h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Stage {
    conv: Conv,
    norm: InstanceNorm,
    upsample: bool,
}

impl Stage {
    fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Var {
        let x = if self.upsample { tape.upsample_nearest(x, 2) } else { x };
        let h = self.conv.forward(tape, p, x);
        let h = self.norm.forward(tape, p, h);
        tape.relu(h)
    }
}

/// Generator mapping `(image in [-1,1], saliency in [0,1])` to an image in `(-1, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorNet {
    pub config: GeneratorConfig,
    pub params: ParamSet,
    encoder: Vec<Stage>,
    blocks: Vec<Block>,
    decoder: Vec<Stage>,
    head: Conv,
}

impl GeneratorNet {
    pub fn new<R: Rng>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut p = ParamSet::new();
        let c = config.base_channels;
        let stage = |p: &mut ParamSet, rng: &mut R, name: String, cin, cout, k, stride, pad, upsample| Stage {
            conv: Conv::new(p, rng, &name, cin, cout, k, stride, pad),
            norm: InstanceNorm::affine(p, &alloc::format!("{name}.norm"), cout),
            upsample,
        };
        let encoder = alloc::vec![
            stage(&mut p, rng, "enc0".into(), 3, c, 7, 1, 3, false),
            stage(&mut p, rng, "enc1".into(), c, 2 * c, 3, 2, 1, false),
            stage(&mut p, rng, "enc2".into(), 2 * c, 4 * c, 3, 2, 1, false),
        ];
        let bc = 4 * c;
        let mut blocks = Vec::with_capacity(config.n_bottleneck);
        for i in 0..config.n_bottleneck {
            let name = alloc::format!("block{i}");
            let conv1 = Conv::new(&mut p, rng, &alloc::format!("{name}.conv1"), bc, bc, 3, 1, 1);
            let block = if config.use_sanorm && config.sn_positions.contains(&i) {
                let sanorm = SANorm::new(&mut p, rng, &alloc::format!("{name}.sanorm"), bc, config.sanorm_hidden);
                let conv2 = Conv::new(&mut p, rng, &alloc::format!("{name}.conv2"), bc, bc, 3, 1, 1);
                let norm2 = InstanceNorm::affine(&mut p, &alloc::format!("{name}.norm2"), bc);
                Block::Sn { conv1, sanorm, conv2, norm2 }
            } else {
                let norm1 = InstanceNorm::affine(&mut p, &alloc::format!("{name}.norm1"), bc);
                let conv2 = Conv::new(&mut p, rng, &alloc::format!("{name}.conv2"), bc, bc, 3, 1, 1);
                let norm2 = InstanceNorm::affine(&mut p, &alloc::format!("{name}.norm2"), bc);
                Block::Res { conv1, norm1, conv2, norm2 }
            };
            blocks.push(block);
        }
        let decoder = alloc::vec![
            stage(&mut p, rng, "dec0".into(), bc, 2 * c, 3, 1, 1, true),
            stage(&mut p, rng, "dec1".into(), 2 * c, c, 3, 1, 1, true),
        ];
        let head = Conv::new(&mut p, rng, "head", c, 3, 7, 1, 3);
        Ok(Self { config, params: p, encoder, blocks, decoder, head })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn sanorm_count(&self) -> usize {
        self.blocks.iter().filter(|b| matches!(b, Block::Sn { .. })).count()
    }

    /// Whether any layer reads the saliency map.
    pub fn uses_saliency(&self) -> bool {
        self.sanorm_count() > 0
    }

    /// Forward pass on the tape. `img` is `(B,3,H,W)`, `s` is `(B,1,H,W)`;
    /// `H` and `W` must be divisible by 4.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, img: Var, s: Var) -> Var {
        let mut h = img;
        for st in &self.encoder {
            h = st.forward(tape, p, h);
        }
        for b in &self.blocks {
            h = b.forward(tape, p, h, s);
        }
        for st in &self.decoder {
            h = st.forward(tape, p, h);
        }
        let h = self.head.forward(tape, p, h);
        tape.tanh(h)
    }

    pub fn check_inputs(img: &Tensor, s: &Tensor) -> Result<()> {
        let (b, c, h, w) = img.dims4()?;
        let (sb, sc, sh, sw) = s.dims4()?;
        if c != 3 || sc != 1 {
            return Err(shape_err!("generator needs 3-channel image and 1-channel saliency, got {c} and {sc}"));
        }
        if (b, h, w) != (sb, sh, sw) {
            return Err(arg_err!("image {:?} and saliency {:?} disagree", img.shape(), s.shape()));
        }
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(arg_err!("generator needs spatial dims divisible by 4, got {h}x{w}"));
        }
        Ok(())
    }

    /// Stylize `img` given its saliency map, without recording gradients.
    pub fn generate(&self, img: &Tensor, s: &Tensor) -> Result<Tensor> {
        Self::check_inputs(img, s)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(img.clone());
        let s = tape.constant(s.clone());
        let y = self.forward(&mut tape, &p, x, s);
        Ok(tape.value(y).clone())
    }
}

/// Per-item, per-channel standardization of a feature tensor.
pub fn instance_normalize(f: &Tensor) -> Result<Tensor> {
    f.dims4()?;
    let mut tape = Tape::new();
    let x = tape.constant(f.clone());
    let y = tape.instance_norm(x, SANorm::EPS);
    Ok(tape.value(y).clone())
}
