//! Bidirectional adversarial training.
//!
//! One iteration updates both generators on their joint objective with the
//! discriminators frozen, pushes the new fakes through the replay pools, then
//! updates both discriminators on real images against pooled fakes.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::discriminator::{DiscriminatorConfig, SaliencyAttendedDiscriminator};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::generator::{GeneratorConfig, GeneratorNet};
use crate::losses::{self, LossReport, LossWeights};
use crate::optim::{Adam, AdamConfig};
use crate::saliency::{SaliencyDetector, DEFAULT_TAU};
use crate::tensor::Tensor;

const STREAM_INIT: u64 = 0;
const STREAM_SAMPLER: u64 = 1;
const STREAM_POOL: u64 = 2;

/// Ablation switches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Drop the saliency structure loss.
    pub no_siou: bool,
    /// Replace the soft-IOU structure loss with raw saliency MSE.
    pub smse: bool,
    /// Build generators without saliency normalization.
    pub no_sanorm: bool,
    /// Plain single-head discriminators and unmasked adversarial losses.
    pub no_saadv: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 4] = ["no_siou", "smse", "no_sanorm", "no_saadv"];

    /// Parses a comma-separated list of switch names; empty or `none` is the full model.
    pub fn parse(list: &str) -> Result<Self> {
        let mut a = Self::default();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty() && *s != "none") {
            match name {
                "no_siou" => a.no_siou = true,
                "smse" => a.smse = true,
                "no_sanorm" => a.no_sanorm = true,
                "no_saadv" => a.no_saadv = true,
                other => return Err(arg_err!("unknown ablation `{other}` (expected one of {:?})", Self::NAMES)),
            }
        }
        if a.no_siou && a.smse {
            return Err(arg_err!("ablations `no_siou` and `smse` are mutually exclusive"));
        }
        Ok(a)
    }

    pub fn names(&self) -> Vec<&'static str> {
        let flags = [self.no_siou, self.smse, self.no_sanorm, self.no_saadv];
        Self::NAMES.iter().zip(flags).filter(|(_, f)| *f).map(|(n, _)| *n).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub decay_start_epoch: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub ablation: Ablation,
    pub seed: u64,
    pub pool_size: usize,
    /// Temperature of the soft threshold inside the structure loss.
    pub tau: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.0002,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            decay_start_epoch: 100,
            batch_size: 1,
            weights: LossWeights::default(),
            ablation: Ablation::default(),
            seed: 0,
            pool_size: 50,
            tau: DEFAULT_TAU,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(arg_err!("learning rate must be positive, got {}", self.lr));
        }
        if self.decay_start_epoch >= self.epochs {
            return Err(arg_err!(
                "decay_start_epoch ({}) must be below epochs ({})",
                self.decay_start_epoch,
                self.epochs
            ));
        }
        if self.batch_size == 0 {
            return Err(arg_err!("batch size must be at least 1"));
        }
        if !(self.tau > 0.0) {
            return Err(arg_err!("tau must be positive, got {}", self.tau));
        }
        self.weights.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.adam_beta1, beta2: self.adam_beta2, ..AdamConfig::default() }
    }
}

/// Learning rate for `epoch`: constant until `decay_start_epoch`, then
/// linear to zero at the (virtual) epoch `epochs`.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(arg_err!("epoch {epoch} outside 0..{}", config.epochs));
    }
    if epoch < config.decay_start_epoch {
        return Ok(config.lr);
    }
    let span = (config.epochs - config.decay_start_epoch) as f64;
    Ok(config.lr * (1.0 - (epoch - config.decay_start_epoch) as f64 / span))
}

/// History of generated images served to the discriminator.
///
/// Until full, every incoming image is stored and returned. Afterwards each
/// incoming image, with probability 1/2, swaps with a uniformly chosen stored
/// one and the stored one is returned; otherwise it is returned as is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayPool {
    capacity: usize,
    images: Vec<Tensor>,
}

impl ReplayPool {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, images: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Query with a `(B, C, H, W)` batch; returns a batch of the same shape.
    pub fn query<R: Rng>(&mut self, batch: &Tensor, rng: &mut R) -> Result<Tensor> {
        if self.capacity == 0 {
            return Ok(batch.clone());
        }
        let (b, _, _, _) = batch.dims4()?;
        let mut out = Vec::with_capacity(b);
        for i in 0..b {
            let img = batch.batch_slice(i, 1)?;
            if self.images.len() < self.capacity {
                self.images.push(img.clone());
                out.push(img);
            } else if rng.random_bool(0.5) {
                let j = rng.random_range(0..self.capacity);
                out.push(core::mem::replace(&mut self.images[j], img));
            } else {
                out.push(img);
            }
        }
        Tensor::stack_batch(&out)
    }
}

/// Seeded unpaired index sampler.
///
/// Each epoch walks a fresh permutation of the larger domain; every item of
/// it is paired with an index drawn uniformly, with replacement, from the
/// smaller domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnpairedSampler {
    len_x: usize,
    len_y: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

/// Index lists of one batch, into X and into Y.
pub type IndexBatch = (Vec<usize>, Vec<usize>);

impl UnpairedSampler {
    pub fn new(len_x: usize, len_y: usize, batch: usize, seed: u64) -> Result<Self> {
        if len_x == 0 || len_y == 0 {
            return Err(arg_err!("both domains must be non-empty ({len_x}, {len_y})"));
        }
        if batch == 0 {
            return Err(arg_err!("batch size must be at least 1"));
        }
        Ok(Self { len_x, len_y, batch, rng: stream_rng(seed, STREAM_SAMPLER) })
    }

    /// `max(|X|, |Y|) / batch`, at least one.
    pub fn iterations_per_epoch(&self) -> usize {
        (self.len_x.max(self.len_y) / self.batch).max(1)
    }

    pub fn next_epoch(&mut self) -> Vec<IndexBatch> {
        let x_larger = self.len_x >= self.len_y;
        let (big, small) = if x_larger { (self.len_x, self.len_y) } else { (self.len_y, self.len_x) };
        let mut order: Vec<usize> = (0..big).collect();
        order.shuffle(&mut self.rng);
        let iters = self.iterations_per_epoch();
        (0..iters)
            .map(|it| {
                let big_idx: Vec<usize> = (0..self.batch).map(|k| order[(it * self.batch + k) % big]).collect();
                let small_idx: Vec<usize> = (0..self.batch).map(|_| self.rng.random_range(0..small)).collect();
                if x_larger {
                    (big_idx, small_idx)
                } else {
                    (small_idx, big_idx)
                }
            })
            .collect()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub g: GeneratorNet,
    pub f: GeneratorNet,
    pub dx: SaliencyAttendedDiscriminator,
    pub dy: SaliencyAttendedDiscriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub epoch: usize,
    pub iteration: u64,
    /// Fakes in domain X (from `F`), consumed by `D_X`.
    pub pool_x: ReplayPool,
    /// Fakes in domain Y (from `G`), consumed by `D_Y`.
    pub pool_y: ReplayPool,
    pub pool_rng: ChaCha8Rng,
    pub sampler: UnpairedSampler,
}

/// Generator-side scalars plus the fakes it produced.
pub struct GeneratorOutcome {
    pub adv_g_xy: f64,
    pub adv_g_yx: f64,
    pub cycle: f64,
    pub siou: f64,
    pub total: f64,
    /// `G(x)`, a painting-domain image.
    pub fake_y: Tensor,
    /// `F(y)`, a photo-domain image.
    pub fake_x: Tensor,
}

impl TrainState {
    pub fn new(
        config: TrainConfig,
        mut gen: GeneratorConfig,
        mut disc: DiscriminatorConfig,
        len_x: usize,
        len_y: usize,
    ) -> Result<Self> {
        config.validate()?;
        if config.ablation.no_sanorm {
            gen.use_sanorm = false;
        }
        if config.ablation.no_saadv {
            disc.saliency_attended = false;
        }
        let mut rng = stream_rng(config.seed, STREAM_INIT);
        let g = GeneratorNet::new(gen.clone(), &mut rng)?;
        let f = GeneratorNet::new(gen, &mut rng)?;
        let dx = SaliencyAttendedDiscriminator::new(disc.clone(), &mut rng)?;
        let dy = SaliencyAttendedDiscriminator::new(disc, &mut rng)?;
        let opt_g = Adam::new(config.adam(), &[&g.params, &f.params]);
        let opt_d = Adam::new(config.adam(), &[&dx.params, &dy.params]);
        Ok(Self {
            sampler: UnpairedSampler::new(len_x, len_y, config.batch_size, config.seed)?,
            pool_x: ReplayPool::new(config.pool_size),
            pool_y: ReplayPool::new(config.pool_size),
            pool_rng: stream_rng(config.seed, STREAM_POOL),
            config,
            g,
            f,
            dx,
            dy,
            opt_g,
            opt_d,
            epoch: 0,
            iteration: 0,
        })
    }

    pub fn current_lr(&self) -> Result<f64> {
        lr_at(&self.config, self.epoch)
    }

    /// Joint update of `G` and `F` with both discriminators frozen.
    pub fn generator_step(&mut self, x: &Tensor, y: &Tensor, det: &SaliencyDetector) -> Result<GeneratorOutcome> {
        let lr = self.current_lr()?;
        let cfg = &self.config;
        let abl = cfg.ablation;
        let mut tape = Tape::new();
        let pg = self.g.params.bind(&mut tape, true);
        let pf = self.f.params.bind(&mut tape, true);
        let pdx = self.dx.params.bind(&mut tape, false);
        let pdy = self.dy.params.bind(&mut tape, false);

        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let sx = detect_on_tape(&mut tape, det, xv);
        let sy = detect_on_tape(&mut tape, det, yv);
        let (sx, sy) = (tape.detach(sx), tape.detach(sy));

        let fake_y = self.g.forward(&mut tape, &pg, xv, sx);
        let fake_x = self.f.forward(&mut tape, &pf, yv, sy);
        let rec_x = self.f.forward(&mut tape, &pf, fake_y, sx);
        let rec_y = self.g.forward(&mut tape, &pg, fake_x, sy);

        let s_fake_y = detect_on_tape(&mut tape, det, fake_y);
        let s_fake_x = detect_on_tape(&mut tape, det, fake_x);
        let s_fake_y_val = tape.value(s_fake_y).clone();
        let s_fake_x_val = tape.value(s_fake_x).clone();

        let adv_xy = losses::adv_g_loss(&mut tape, &self.dy, &pdy, fake_y, &s_fake_y_val)?;
        let adv_yx = losses::adv_g_loss(&mut tape, &self.dx, &pdx, fake_x, &s_fake_x_val)?;
        let cycle = losses::cycle_loss(&mut tape, xv, rec_x, yv, rec_y)?;

        let structure = if abl.no_siou {
            None
        } else {
            let s_rec_x = detect_on_tape(&mut tape, det, rec_x);
            let s_rec_y = detect_on_tape(&mut tape, det, rec_y);
            let pairs = [(sx, s_fake_y), (sx, s_rec_x), (sy, s_fake_x), (sy, s_rec_y)];
            Some(if abl.smse {
                losses::smse_loss(&mut tape, &pairs)?
            } else {
                losses::siou_loss(&mut tape, &pairs, cfg.tau)?
            })
        };

        let w = cfg.weights;
        let adv = tape.add(adv_xy, adv_yx);
        let mut terms = alloc::vec![tape.scale(adv, w.lambda1), tape.scale(cycle, w.lambda2)];
        if let Some(s) = structure {
            terms.push(tape.scale(s, w.lambda3));
        }
        let objective = tape.add_all(&terms);

        let outcome = GeneratorOutcome {
            adv_g_xy: tape.value(adv_xy).item(),
            adv_g_yx: tape.value(adv_yx).item(),
            cycle: tape.value(cycle).item(),
            siou: structure.map_or(0.0, |s| tape.value(s).item()),
            total: tape.value(objective).item(),
            fake_y: tape.value(fake_y).clone(),
            fake_x: tape.value(fake_x).clone(),
        };
        for (component, value) in [
            ("adv_g_xy", outcome.adv_g_xy),
            ("adv_g_yx", outcome.adv_g_yx),
            ("cycle", outcome.cycle),
            ("siou", outcome.siou),
            ("total", outcome.total),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFinite { component, value });
            }
        }

        let grads = tape.backward(objective);
        let gg = pg.grads(&self.g.params, &grads);
        let gf = pf.grads(&self.f.params, &grads);
        self.opt_g.step(lr, &mut [&mut self.g.params, &mut self.f.params], &[gg, gf]);
        Ok(outcome)
    }

    /// Joint update of `D_X` and `D_Y`; returns `(adv_d_xy, adv_d_yx)`.
    pub fn discriminator_step(
        &mut self,
        x: &Tensor,
        y: &Tensor,
        fake_x: &Tensor,
        fake_y: &Tensor,
        det: &SaliencyDetector,
    ) -> Result<(f64, f64)> {
        let lr = self.current_lr()?;
        let sx = det.detect(&crate::tensor::to_unit_range(x))?;
        let sy = det.detect(&crate::tensor::to_unit_range(y))?;
        let s_fake_x = det.detect(&crate::tensor::to_unit_range(fake_x))?;
        let s_fake_y = det.detect(&crate::tensor::to_unit_range(fake_y))?;

        let mut tape = Tape::new();
        let pdx = self.dx.params.bind(&mut tape, true);
        let pdy = self.dy.params.bind(&mut tape, true);
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let (fxv, fyv) = (tape.constant(fake_x.clone()), tape.constant(fake_y.clone()));
        let d_xy = losses::adv_d_loss(&mut tape, &self.dy, &pdy, yv, fyv, &sy, &s_fake_y)?;
        let d_yx = losses::adv_d_loss(&mut tape, &self.dx, &pdx, xv, fxv, &sx, &s_fake_x)?;
        let sum = tape.add(d_xy, d_yx);
        let objective = tape.scale(sum, self.config.weights.lambda1);
        let (a, b) = (tape.value(d_xy).item(), tape.value(d_yx).item());
        for (component, value) in [("adv_d_xy", a), ("adv_d_yx", b)] {
            if !value.is_finite() {
                return Err(Error::NonFinite { component, value });
            }
        }
        let grads = tape.backward(objective);
        let gx = pdx.grads(&self.dx.params, &grads);
        let gy = pdy.grads(&self.dy.params, &grads);
        self.opt_d.step(lr, &mut [&mut self.dx.params, &mut self.dy.params], &[gx, gy]);
        Ok((a, b))
    }

    /// One full iteration on an unpaired batch.
    pub fn train_step(&mut self, x: &Tensor, y: &Tensor, det: &SaliencyDetector) -> Result<LossReport> {
        if x.shape() != y.shape() {
            return Err(shape_err!("unpaired batch shapes differ: {:?} vs {:?}", x.shape(), y.shape()));
        }
        GeneratorNet::check_inputs(x, &Tensor::zeros(&[x.shape()[0], 1, x.shape()[2], x.shape()[3]]))?;
        SaliencyAttendedDiscriminator::check_input(x)?;
        let gen = self.generator_step(x, y, det)?;
        let pooled_y = self.pool_y.query(&gen.fake_y, &mut self.pool_rng)?;
        let pooled_x = self.pool_x.query(&gen.fake_x, &mut self.pool_rng)?;
        let (adv_d_xy, adv_d_yx) = self.discriminator_step(x, y, &pooled_x, &pooled_y, det)?;
        self.iteration += 1;
        Ok(LossReport {
            adv_g_xy: gen.adv_g_xy,
            adv_g_yx: gen.adv_g_yx,
            adv_d_xy,
            adv_d_yx,
            cycle: gen.cycle,
            siou: gen.siou,
            total: gen.total,
        })
    }
}

/// Saliency of an image var in `[-1, 1]`, differentiable through the detector.
pub fn detect_on_tape(tape: &mut Tape, det: &SaliencyDetector, img: Var) -> Var {
    let unit = tape.affine(img, 0.5, 0.5);
    det.detect_var(tape, unit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(&c, 0).unwrap(), 0.0002);
        assert_eq!(lr_at(&c, 99).unwrap(), 0.0002);
        assert_eq!(lr_at(&c, 150).unwrap(), 0.0001);
        assert!(lr_at(&c, 199).unwrap() > 0.0);
        assert!(lr_at(&c, 200).is_err());
    }

    #[test]
    fn ablation_parsing() {
        let a = Ablation::parse("no_siou, no_saadv").unwrap();
        assert!(a.no_siou && a.no_saadv && !a.smse);
        assert_eq!(Ablation::parse("none").unwrap(), Ablation::default());
        assert!(Ablation::parse("bogus").is_err());
        assert!(Ablation::parse("no_siou,smse").is_err());
    }

    #[test]
    fn pool_contract() {
        let mut pool = ReplayPool::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = |v| Tensor::full(&[1, 1, 1, 1], v);
        assert_eq!(pool.query(&img(1.0), &mut rng).unwrap(), img(1.0));
        assert_eq!(pool.query(&img(2.0), &mut rng).unwrap(), img(2.0));
        let mut swapped = 0;
        for k in 0..200 {
            let v = 10.0 + k as f64;
            let out = pool.query(&img(v), &mut rng).unwrap();
            if out.item() != v {
                swapped += 1;
            }
            assert_eq!(pool.len(), 2);
        }
        assert!((60..140).contains(&swapped), "swap rate {swapped}/200");
        let mut off = ReplayPool::new(0);
        assert_eq!(off.query(&img(5.0), &mut rng).unwrap(), img(5.0));
        assert!(off.is_empty());
    }

    #[test]
    fn sampler_forced_choice_and_determinism() {
        let mut s = UnpairedSampler::new(1, 5, 1, 9).unwrap();
        for (xi, _) in s.next_epoch() {
            assert_eq!(xi, alloc::vec![0]);
        }
        let a = UnpairedSampler::new(4, 4, 2, 0).unwrap().next_epoch();
        let b = UnpairedSampler::new(4, 4, 2, 0).unwrap().next_epoch();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(UnpairedSampler::new(0, 3, 1, 0).is_err());
    }
}
