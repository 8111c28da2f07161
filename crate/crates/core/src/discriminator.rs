//! Two-head patch discriminator.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{arg_err, shape_err, Result};
use crate::nn::{Binding, Conv, InstanceNorm, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    /// Adds the 1/8-scale head after the third block. Without it the network
    /// is a plain single-output patch discriminator.
    pub saliency_attended: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 64, saliency_attended: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DownBlock {
    conv: Conv,
    norm: Option<InstanceNorm>,
}

/// Raw logits of one discriminator pass.
#[derive(Clone, Copy, Debug)]
pub struct LogitPair {
    /// 1/16-scale `(B, 1, H/16, W/16)`
    pub main: Var,
    /// 1/8-scale `(B, 1, H/8, W/8)`, absent for the plain variant.
    pub aux: Option<Var>,
}

/// Four 4×4 stride-2 blocks (64, 128, 256, 512 channels at the default
/// width) with a main head after block 4 and an auxiliary head after block 3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyAttendedDiscriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamSet,
    blocks: Vec<DownBlock>,
    main_head: Conv,
    aux_head: Option<Conv>,
}

impl SaliencyAttendedDiscriminator {
    pub const LEAK: f64 = 0.2;

    pub fn new<R: Rng>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        if config.base_channels == 0 {
            return Err(arg_err!("discriminator width must be positive"));
        }
        let mut p = ParamSet::new();
        let c = config.base_channels;
        let widths = [3, c, 2 * c, 4 * c, 8 * c];
        let blocks = (0..4)
            .map(|i| {
                let name = alloc::format!("block{i}");
                DownBlock {
                    conv: Conv::new(&mut p, rng, &name, widths[i], widths[i + 1], 4, 2, 1),
                    norm: (i > 0).then(InstanceNorm::plain),
                }
            })
            .collect();
        let main_head = Conv::new(&mut p, rng, "main_head", 8 * c, 1, 3, 1, 1);
        let aux_head = config
            .saliency_attended
            .then(|| Conv::new(&mut p, rng, "aux_head", 4 * c, 1, 3, 1, 1));
        Ok(Self { config, params: p, blocks, main_head, aux_head })
    }

    pub fn has_aux(&self) -> bool {
        self.aux_head.is_some()
    }

    pub fn check_input(img: &Tensor) -> Result<()> {
        let (_, c, h, w) = img.dims4()?;
        if c != 3 {
            return Err(shape_err!("discriminator expects 3 channels, got {c}"));
        }
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(arg_err!("discriminator needs spatial dims divisible by 16, got {h}x{w}"));
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, img: Var) -> LogitPair {
        let mut h = img;
        let mut aux = None;
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.conv.forward(tape, p, h);
            if let Some(n) = &b.norm {
                h = n.forward(tape, p, h);
            }
            h = tape.leaky_relu(h, Self::LEAK);
            if i == 2 {
                aux = self.aux_head.as_ref().map(|head| head.forward(tape, p, h));
            }
        }
        LogitPair { main: self.main_head.forward(tape, p, h), aux }
    }

    /// Logits `(main, aux)` without gradient.
    pub fn discriminate(&self, img: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        Self::check_input(img)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(img.clone());
        let out = self.forward(&mut tape, &p, x);
        Ok((tape.value(out.main).clone(), out.aux.map(|a| tape.value(a).clone())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logit_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = SaliencyAttendedDiscriminator::new(DiscriminatorConfig { base_channels: 4, saliency_attended: true }, &mut rng)
            .unwrap();
        let (main, aux) = d.discriminate(&Tensor::zeros(&[2, 3, 128, 128])).unwrap();
        assert_eq!(main.shape(), &[2, 1, 8, 8]);
        assert_eq!(aux.unwrap().shape(), &[2, 1, 16, 16]);
        assert!(d.discriminate(&Tensor::zeros(&[1, 3, 40, 40])).is_err());
    }

    #[test]
    fn plain_variant_has_no_aux_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = SaliencyAttendedDiscriminator::new(DiscriminatorConfig { base_channels: 4, saliency_attended: false }, &mut rng)
            .unwrap();
        assert!(d.params.index_of("aux_head.weight").is_none());
        assert!(d.discriminate(&Tensor::zeros(&[1, 3, 32, 32])).unwrap().1.is_none());
    }
}
