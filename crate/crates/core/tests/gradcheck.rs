//! Central-difference checks of the analytic gradients in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sragan_core::generator::SANorm;
use sragan_core::losses::siou_loss;
use sragan_core::nn::ParamSet;
use sragan_core::saliency::DEFAULT_TAU;
use sragan_core::train::detect_on_tape;
use sragan_core::{SaliencyDetector, Tape, Tensor};

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn numeric(f: &dyn Fn(&Tensor) -> f64, x: &Tensor) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += H;
            let mut minus = x.clone();
            minus.data_mut()[i] -= H;
            (f(&plus) - f(&minus)) / (2.0 * H)
        })
        .collect()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

struct SanormCase {
    params: ParamSet,
    layer: SANorm,
    f_in: Tensor,
    s: Tensor,
    probe: Tensor,
}

impl SanormCase {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let layer = SANorm::new(&mut params, &mut rng, "sn", 3, 4);
        for t in params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        Self {
            layer,
            params,
            f_in: uniform(&mut rng, &[1, 3, 16, 16], -1.0, 1.0),
            s: uniform(&mut rng, &[1, 1, 16, 16], 0.0, 1.0),
            probe: uniform(&mut rng, &[1, 3, 16, 16], -1.0, 1.0),
        }
    }

    /// `Σ probe ⊙ SANorm(f_in, s)`.
    fn loss(&self, params: &ParamSet, f_in: &Tensor, s: &Tensor) -> f64 {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let (x, sv) = (tape.constant(f_in.clone()), tape.constant(s.clone()));
        let out = self.layer.forward(&mut tape, &p, x, sv);
        tape.value(out).data().iter().zip(self.probe.data()).map(|(a, b)| a * b).sum()
    }

    fn analytic(&self) -> (Vec<f64>, Vec<f64>, Vec<Tensor>) {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, true);
        let (x, sv) = (tape.variable(self.f_in.clone()), tape.variable(self.s.clone()));
        let out = self.layer.forward(&mut tape, &p, x, sv);
        let probe = tape.constant(self.probe.clone());
        let prod = tape.mul(out, probe);
        let loss = tape.sum(prod);
        let g = tape.backward(loss);
        (g.get(x).unwrap().to_vec(), g.get(sv).unwrap().to_vec(), p.grads(&self.params, &g))
    }
}

#[test]
fn sanorm_input_gradient() {
    let c = SanormCase::new(1);
    let (dx, _, _) = c.analytic();
    let num = numeric(&|x| c.loss(&c.params, x, &c.s), &c.f_in);
    let e = rel_err(&dx, &num);
    assert!(e < TOL, "input grad rel err {e}");
}

#[test]
fn sanorm_saliency_gradient() {
    let c = SanormCase::new(2);
    let (_, ds, _) = c.analytic();
    let num = numeric(&|s| c.loss(&c.params, &c.f_in, s), &c.s);
    let e = rel_err(&ds, &num);
    assert!(e < TOL, "saliency grad rel err {e}");
}

#[test]
fn sanorm_branch_weight_gradients() {
    let c = SanormCase::new(3);
    let (_, _, grads) = c.analytic();
    for (idx, grad) in grads.iter().enumerate() {
        let num = numeric(
            &|w| {
                let mut p = c.params.clone();
                *p.get_mut(idx) = w.clone();
                c.loss(&p, &c.f_in, &c.s)
            },
            c.params.get(idx),
        );
        let e = rel_err(grad.data(), &num);
        assert!(e < TOL, "{} rel err {e}", c.params.name(idx));
    }
}

/// siou over four pairs where the second map of each pair comes from a
/// generated image passed through the synthetic detector.
fn siou_of(sources: &[Tensor; 2], generated: &[Tensor; 4]) -> (f64, Vec<Vec<f64>>) {
    let det = SaliencyDetector::Synthetic;
    let mut tape = Tape::new();
    let srcs: Vec<_> = sources.iter().map(|s| tape.constant(s.clone())).collect();
    let s_src: Vec<_> = srcs.iter().map(|&v| detect_on_tape(&mut tape, &det, v)).collect();
    let gens: Vec<_> = generated.iter().map(|g| tape.variable(g.clone())).collect();
    let s_gen: Vec<_> = gens.iter().map(|&v| detect_on_tape(&mut tape, &det, v)).collect();
    let pairs = [(s_src[0], s_gen[0]), (s_src[0], s_gen[1]), (s_src[1], s_gen[2]), (s_src[1], s_gen[3])];
    let loss = siou_loss(&mut tape, &pairs, DEFAULT_TAU).unwrap();
    let g = tape.backward(loss);
    (tape.value(loss).item(), gens.iter().map(|&v| g.get(v).unwrap().to_vec()).collect())
}

fn disk_image(rng: &mut ChaCha8Rng, cy: f64, cx: f64) -> Tensor {
    let noise = uniform(rng, &[1, 3, 16, 16], -0.2, 0.2);
    Tensor::from_fn(&[1, 3, 16, 16], |i| {
        let (y, x) = (((i / 16) % 16) as f64, (i % 16) as f64);
        let inside = (y - cy).powi(2) + (x - cx).powi(2) < 20.0;
        (if inside { 0.6 } else { -0.6 }) + noise.data()[i]
    })
}

#[test]
fn siou_gradient_through_synthetic_detector() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sources = [disk_image(&mut rng, 7.0, 7.0), disk_image(&mut rng, 9.0, 6.0)];
    let generated = [
        disk_image(&mut rng, 8.0, 7.0),
        disk_image(&mut rng, 6.0, 8.0),
        disk_image(&mut rng, 9.0, 7.0),
        disk_image(&mut rng, 10.0, 5.0),
    ];
    let (_, analytic) = siou_of(&sources, &generated);
    for k in 0..4 {
        let num = numeric(
            &|g| {
                let mut gens = generated.clone();
                gens[k] = g.clone();
                siou_of(&sources, &gens).0
            },
            &generated[k],
        );
        let e = rel_err(&analytic[k], &num);
        assert!(e < TOL, "generated image {k}: rel err {e}");
    }
}
