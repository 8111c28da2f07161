//! Fréchet distance between feature Gaussians and saliency-mask IOU.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::saliency::{self, FrozenConvNet, SaliencyDetector};
use crate::tensor::{to_unit_range, Tensor};

/// Eigenvalues of the covariance product above `-NEG_EIG_TOL · max(1, |λ|max)`
/// are treated as roundoff and clamped to zero.
pub const NEG_EIG_TOL: f64 = 1e-6;

/// Frozen image-to-vector map used for the Fréchet distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureExtractor {
    /// Grayscale image average-pooled to 8×8 and flattened (64 values).
    Toy,
    /// Exported convolutional network followed by global average pooling.
    Adapter(FrozenConvNet),
}

impl FeatureExtractor {
    pub fn adapter(net: FrozenConvNet) -> Result<Self> {
        net.validate()?;
        Ok(Self::Adapter(net))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Toy => "toy",
            Self::Adapter(_) => "inception-adapter",
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Toy => 64,
            Self::Adapter(net) => net.out_channels(),
        }
    }

    /// One feature row per item of a `(B, 3, H, W)` batch in `[-1, 1]`.
    pub fn extract(&self, img: &Tensor) -> Result<Vec<Vec<f64>>> {
        let (b, c, h, w) = img.dims4()?;
        if c != 3 {
            return Err(shape_err!("feature extractor expects 3 channels, got {c}"));
        }
        let unit = to_unit_range(img);
        match self {
            Self::Toy => {
                if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
                    return Err(arg_err!("toy extractor needs spatial dims divisible by 8, got {h}x{w}"));
                }
                let (bh, bw) = (h / 8, w / 8);
                let norm = (bh * bw) as f64;
                let px = unit.data();
                Ok((0..b)
                    .map(|n| {
                        let mut row = alloc::vec![0.0; 64];
                        for y in 0..h {
                            for x in 0..w {
                                let at = |ch: usize| px[((n * 3 + ch) * h + y) * w + x];
                                let luma = 0.299 * at(0) + 0.587 * at(1) + 0.114 * at(2);
                                row[(y / bh) * 8 + x / bw] += luma;
                            }
                        }
                        row.iter_mut().for_each(|v| *v /= norm);
                        row
                    })
                    .collect())
            }
            Self::Adapter(net) => {
                let mut tape = crate::autograd::Tape::new();
                let x = tape.constant(unit);
                let f = net.forward(&mut tape, x);
                let t = tape.value(f);
                let (_, fc, fh, fw) = t.dims4()?;
                let plane = fh * fw;
                Ok(t.data()
                    .chunks(fc * plane)
                    .map(|item| item.chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect())
                    .collect())
            }
        }
    }
}

/// Mean and sample covariance of a feature set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mu: Vec<f64>,
    /// Row-major `D × D`.
    pub sigma: Vec<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn sigma_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.sigma)
    }
}

/// Sample mean and covariance (denominator `N − 1`) of `N × D` rows.
pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = features.len();
    if n < 2 {
        return Err(arg_err!("need at least 2 feature rows, got {n}"));
    }
    let d = features[0].len();
    if features.iter().any(|r| r.len() != d) {
        return Err(shape_err!("feature rows have inconsistent length"));
    }
    let mut mu = alloc::vec![0.0; d];
    for row in features {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let mut sigma = alloc::vec![0.0; d * d];
    for row in features {
        for i in 0..d {
            let di = row[i] - mu[i];
            for j in i..d {
                sigma[i * d + j] += di * (row[j] - mu[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = sigma[i * d + j] / (n - 1) as f64;
            sigma[i * d + j] = v;
            sigma[j * d + i] = v;
        }
    }
    Ok(GaussianStats { mu, sigma })
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `tr((σ_r σ_g)^{1/2})`, computed from the symmetric `σ_r^{1/2} σ_g σ_r^{1/2}`.
pub fn trace_sqrt_product(sr: &DMatrix<f64>, sg: &DMatrix<f64>) -> Result<f64> {
    let root = psd_sqrt(sr);
    let m = &root * sg * &root;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m).eigenvalues;
    let scale = eig.iter().fold(1.0f64, |a, l| a.max(l.abs()));
    let mut acc = 0.0;
    for &l in eig.iter() {
        if l < -NEG_EIG_TOL * scale {
            return Err(Error::NegativeEigenvalue(l));
        }
        acc += libm::sqrt(l.max(0.0));
    }
    Ok(acc)
}

/// Fréchet distance `‖μ_r − μ_g‖² + tr(σ_r + σ_g − 2(σ_r σ_g)^{1/2})`, clamped at 0.
pub fn fid(r: &GaussianStats, g: &GaussianStats) -> Result<f64> {
    if r.dim() != g.dim() || r.sigma.len() != r.dim() * r.dim() || g.sigma.len() != g.dim() * g.dim() {
        return Err(shape_err!("Gaussian dimensions differ: {} vs {}", r.dim(), g.dim()));
    }
    if r == g {
        return Ok(0.0);
    }
    let dmu = DVector::from_column_slice(&r.mu) - DVector::from_column_slice(&g.mu);
    let (sr, sg) = (r.sigma_matrix(), g.sigma_matrix());
    let value = dmu.norm_squared() + sr.trace() + sg.trace() - 2.0 * trace_sqrt_product(&sr, &sg)?;
    Ok(value.max(0.0))
}

/// Per-item IOU between the hard saliency masks of sources and their
/// stylizations (both in `[-1, 1]`).
pub fn saliency_ious(sources: &[Tensor], stylized: &[Tensor], det: &SaliencyDetector) -> Result<Vec<f64>> {
    if sources.len() != stylized.len() {
        return Err(arg_err!("{} sources vs {} stylized images", sources.len(), stylized.len()));
    }
    if sources.is_empty() {
        return Err(arg_err!("saliency MIOU needs at least one image"));
    }
    let mut out = Vec::new();
    for (src, sty) in sources.iter().zip(stylized) {
        let a = saliency::threshold_hard(&det.detect(&to_unit_range(src))?);
        let b = saliency::threshold_hard(&det.detect(&to_unit_range(sty))?);
        out.extend(saliency::iou_hard_items(&a, &b)?);
    }
    Ok(out)
}

/// Mean of [`saliency_ious`].
pub fn saliency_miou(sources: &[Tensor], stylized: &[Tensor], det: &SaliencyDetector) -> Result<f64> {
    let ious = saliency_ious(sources, stylized, det)?;
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn stats1(mu: f64, var: f64) -> GaussianStats {
        GaussianStats { mu: vec![mu], sigma: vec![var] }
    }

    #[test]
    fn gaussian_fit_examples() {
        let s = fit_gaussian(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(s, stats1(1.0, 2.0));
        let s = fit_gaussian(&vec![vec![1.0, 2.0]; 3]).unwrap();
        assert!(s.sigma.iter().all(|&v| v == 0.0));
        assert!(fit_gaussian(&[vec![1.0]]).is_err());
    }

    #[test]
    fn one_dimensional_fid() {
        assert!((fid(&stats1(0.0, 1.0), &stats1(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((fid(&stats1(3.0, 4.0), &stats1(3.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(fid(&stats1(3.0, 4.0), &stats1(3.0, 4.0)).unwrap(), 0.0);
        let two = GaussianStats { mu: vec![0.0; 2], sigma: vec![1.0, 0.0, 0.0, 1.0] };
        assert!(fid(&stats1(0.0, 1.0), &two).is_err());
    }

    #[test]
    fn toy_extractor_shape() {
        let rows = FeatureExtractor::Toy.extract(&Tensor::zeros(&[2, 3, 16, 16])).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].iter().all(|&v| (v - 0.5).abs() < 1e-12));
        assert!(FeatureExtractor::Toy.extract(&Tensor::zeros(&[1, 3, 12, 16])).is_err());
    }
}
