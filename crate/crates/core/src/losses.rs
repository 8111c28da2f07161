//! Training objectives.
//!
//! Adversarial terms are least-squares against all-one (real) and all-zero
//! (fake) targets. Each discriminator pass contributes a main-head term,
//! averaged over the logit matrix, and an auxiliary-head term averaged only
//! over salient cells of the matching binary mask.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::discriminator::{LogitPair, SaliencyAttendedDiscriminator};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::nn::Binding;
use crate::saliency::{self, BinaryMask};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// adversarial
    pub lambda1: f64,
    /// cycle
    pub lambda2: f64,
    /// saliency structure
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 10.0, lambda3: 5.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda3].iter().all(|l| *l >= 0.0 && l.is_finite()) {
            Ok(())
        } else {
            Err(arg_err!("loss weights must be finite and non-negative: {self:?}"))
        }
    }
}

/// Scalars of one training iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_g_xy: f64,
    pub adv_g_yx: f64,
    pub adv_d_xy: f64,
    pub adv_d_yx: f64,
    pub cycle: f64,
    /// Saliency structure term: soft IOU, its MSE ablation, or 0 when disabled.
    pub siou: f64,
    /// Generator objective.
    pub total: f64,
}

impl LossReport {
    pub fn fields(&self) -> [(&'static str, f64); 7] {
        [
            ("adv_g_xy", self.adv_g_xy),
            ("adv_g_yx", self.adv_g_yx),
            ("adv_d_xy", self.adv_d_xy),
            ("adv_d_yx", self.adv_d_yx),
            ("cycle", self.cycle),
            ("siou", self.siou),
            ("total", self.total),
        ]
    }

    /// First non-finite component, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.fields().into_iter().find(|(_, v)| !v.is_finite()) {
            Some((component, value)) => Err(Error::NonFinite { component, value }),
            None => Ok(()),
        }
    }
}

fn aux_term(tape: &mut Tape, aux: Option<Var>, target: f64, mask: Option<&BinaryMask>) -> Result<Option<Var>> {
    match (aux, mask) {
        (Some(a), Some(m)) => saliency::masked_mse(tape, a, target, m).map(Some),
        (Some(_), None) => Err(arg_err!("auxiliary logits given without a saliency mask")),
        (None, _) => Ok(None),
    }
}

fn plus(tape: &mut Tape, a: Var, b: Option<Var>) -> Var {
    match b {
        Some(b) => tape.add(a, b),
        None => a,
    }
}

/// Discriminator side on precomputed logits: real toward 1, fake toward 0.
pub fn adv_d_terms(
    tape: &mut Tape,
    real: LogitPair,
    fake: LogitPair,
    mask_real: Option<&BinaryMask>,
    mask_fake: Option<&BinaryMask>,
) -> Result<Var> {
    if tape.shape(real.main) != tape.shape(fake.main) {
        return Err(shape_err!("real {:?} vs fake {:?} logits", tape.shape(real.main), tape.shape(fake.main)));
    }
    let real_main = saliency::mse_to(tape, real.main, 1.0);
    let real_aux = aux_term(tape, real.aux, 1.0, mask_real)?;
    let fake_main = saliency::mse_to(tape, fake.main, 0.0);
    let fake_aux = aux_term(tape, fake.aux, 0.0, mask_fake)?;
    let real = plus(tape, real_main, real_aux);
    let fake = plus(tape, fake_main, fake_aux);
    Ok(tape.add(real, fake))
}

/// Generator side on precomputed logits: fake toward 1.
pub fn adv_g_terms(tape: &mut Tape, fake: LogitPair, mask_fake: Option<&BinaryMask>) -> Result<Var> {
    let main = saliency::mse_to(tape, fake.main, 1.0);
    let aux = aux_term(tape, fake.aux, 1.0, mask_fake)?;
    Ok(plus(tape, main, aux))
}

/// Auxiliary mask for a discriminator input, or `None` for the plain variant.
fn mask_for(d: &SaliencyAttendedDiscriminator, s: &Tensor) -> Result<Option<BinaryMask>> {
    d.has_aux().then(|| saliency::aux_mask(s)).transpose()
}

/// Discriminator loss for one direction. `fake` is detached here, so no
/// gradient reaches the generator that produced it; masks come from the
/// saliency of each discriminator input and are constants.
#[allow(clippy::too_many_arguments)]
pub fn adv_d_loss(
    tape: &mut Tape,
    d: &SaliencyAttendedDiscriminator,
    params: &Binding,
    real: Var,
    fake: Var,
    s_real: &Tensor,
    s_fake: &Tensor,
) -> Result<Var> {
    SaliencyAttendedDiscriminator::check_input(tape.value(real))?;
    SaliencyAttendedDiscriminator::check_input(tape.value(fake))?;
    let fake = tape.detach(fake);
    let mask_real = mask_for(d, s_real)?;
    let mask_fake = mask_for(d, s_fake)?;
    let real_logits = d.forward(tape, params, real);
    let fake_logits = d.forward(tape, params, fake);
    adv_d_terms(tape, real_logits, fake_logits, mask_real.as_ref(), mask_fake.as_ref())
}

/// Generator loss for one direction; gradients flow into `fake`.
pub fn adv_g_loss(
    tape: &mut Tape,
    d: &SaliencyAttendedDiscriminator,
    params: &Binding,
    fake: Var,
    s_fake: &Tensor,
) -> Result<Var> {
    SaliencyAttendedDiscriminator::check_input(tape.value(fake))?;
    let mask = mask_for(d, s_fake)?;
    let logits = d.forward(tape, params, fake);
    adv_g_terms(tape, logits, mask.as_ref())
}

fn mean_l1(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(shape_err!("L1 operands {:?} and {:?}", tape.shape(a), tape.shape(b)));
    }
    let d = tape.sub(a, b);
    let d = tape.abs(d);
    Ok(tape.mean(d))
}

/// `mean|x − x̂| + mean|y − ŷ|`.
pub fn cycle_loss(tape: &mut Tape, x: Var, x_rec: Var, y: Var, y_rec: Var) -> Result<Var> {
    let lx = mean_l1(tape, x, x_rec)?;
    let ly = mean_l1(tape, y, y_rec)?;
    Ok(tape.add(lx, ly))
}

/// Negative sum of soft IOUs between soft-thresholded saliency pairs.
/// With the usual four pairs the value lies in `[-4, 0]`.
pub fn siou_loss(tape: &mut Tape, pairs: &[(Var, Var)], tau: f64) -> Result<Var> {
    if pairs.is_empty() {
        return Err(arg_err!("siou_loss needs at least one saliency pair"));
    }
    let mut terms = alloc::vec::Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let ta = saliency::threshold_soft(tape, a, tau)?;
        let tb = saliency::threshold_soft(tape, b, tau)?;
        terms.push(saliency::iou_soft(tape, ta, tb)?);
    }
    let total = tape.add_all(&terms);
    Ok(tape.scale(total, -1.0))
}

/// Ablation variant: sum over pairs of the pixel-wise MSE between raw maps.
pub fn smse_loss(tape: &mut Tape, pairs: &[(Var, Var)]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(arg_err!("smse_loss needs at least one saliency pair"));
    }
    let mut terms = alloc::vec::Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        if tape.shape(a) != tape.shape(b) {
            return Err(shape_err!("saliency pair {:?} vs {:?}", tape.shape(a), tape.shape(b)));
        }
        let d = tape.sub(a, b);
        let sq = tape.square(d);
        terms.push(tape.mean(sq));
    }
    Ok(tape.add_all(&terms))
}

/// `λ1·adv + λ2·cycle + λ3·siou`.
pub fn total_loss(adv: f64, cycle: f64, siou: f64, w: &LossWeights) -> Result<f64> {
    for (component, value) in [("adv", adv), ("cycle", cycle), ("siou", siou)] {
        if !value.is_finite() {
            return Err(Error::NonFinite { component, value });
        }
    }
    Ok(w.lambda1 * adv + w.lambda2 * cycle + w.lambda3 * siou)
}
