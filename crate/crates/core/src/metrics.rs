//! Quantitative evaluation: Frechet distance between Gaussian fits of deep
//! feature sets, perceptual distance between image pairs, and masked depth
//! accuracy against ground truth.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::embed::EmbeddingNet;
use crate::error::{Error, Result};
use crate::fm;
use crate::linalg;
use crate::tensor::{matmul, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    /// N x D matrix of deep features.
    pub features: Tensor,
    /// Extractor checkpoint hash + source description.
    pub provenance: String,
}

impl FeatureSet {
    pub fn new(features: Tensor, provenance: &str) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::shape("feature set must be N x D"));
        }
        if features.shape()[0] < 2 {
            return Err(Error::argument(
                "need at least 2 samples to fit feature moments",
            ));
        }
        if !features.all_finite() {
            return Err(Error::numeric("non-finite features"));
        }
        Ok(FeatureSet {
            features,
            provenance: provenance.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// (mean vector, unbiased covariance).
    pub fn moments(&self) -> (Tensor, Tensor) {
        let (n, d) = (self.len(), self.dim());
        let mut mean = Tensor::zeros(&[d]);
        for i in 0..n {
            for j in 0..d {
                mean.data_mut()[j] += self.features.data()[i * d + j];
            }
        }
        mean.scale_in_place(1.0 / n as f64);
        let mut cov = Tensor::zeros(&[d, d]);
        for i in 0..n {
            let row = &self.features.data()[i * d..(i + 1) * d];
            for a in 0..d {
                let da = row[a] - mean.data()[a];
                for b in a..d {
                    cov.data_mut()[a * d + b] += da * (row[b] - mean.data()[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                cov.data_mut()[a * d + b] = cov.data()[b * d + a];
            }
        }
        cov.scale_in_place(1.0 / (n - 1) as f64);
        (mean, cov)
    }
}

/// Extracts embedding features from a set of images.
pub fn extract_features(
    net: &EmbeddingNet,
    images: &[Tensor],
    provenance: &str,
) -> Result<FeatureSet> {
    if images.len() < 2 {
        return Err(Error::argument(
            "need at least 2 images for a feature set",
        ));
    }
    let d = net.cfg.embed_dim;
    let mut features = Tensor::zeros(&[images.len(), d]);
    for (i, img) in images.iter().enumerate() {
        let e = net.embedding(img)?;
        features.data_mut()[i * d..(i + 1) * d].copy_from_slice(e.data());
    }
    FeatureSet::new(features, provenance)
}

/// Frechet distance between Gaussian fits:
/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).
/// The cross term is computed through the symmetric form
/// Tr sqrt(sqrt(S_a) S_b sqrt(S_a)); negative eigenvalues from sampling
/// noise are clamped to zero.
pub fn fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("feature dimensions differ"));
    }
    let (mu_a, cov_a) = a.moments();
    let (mu_b, cov_b) = b.moments();
    let mut delta = 0.0;
    for j in 0..a.dim() {
        let d = mu_a.data()[j] - mu_b.data()[j];
        delta += d * d;
    }
    let d = a.dim();
    let tr = |m: &Tensor| (0..d).map(|i| m.data()[i * d + i]).sum::<f64>();
    let s = linalg::sqrtm_psd(&cov_a)?;
    let inner = matmul(&matmul(&s, &cov_b), &s);
    // symmetrize against rounding before the eigensolve
    let inner_sym = {
        let mut t = inner.clone();
        for i in 0..d {
            for j in 0..d {
                t.data_mut()[i * d + j] =
                    0.5 * (inner.data()[i * d + j] + inner.data()[j * d + i]);
            }
        }
        t
    };
    let cross = linalg::trace_sqrtm_psd(&inner_sym)?;
    Ok(delta + tr(&cov_a) + tr(&cov_b) - 2.0 * cross)
}

/// Squared L2 distance between unit-normalized embeddings.
pub fn perceptual_distance(a: &Tensor, b: &Tensor, net: &EmbeddingNet) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("perceptual distance: image shapes differ"));
    }
    let ea = net.embedding(a)?;
    let eb = net.embedding(b)?;
    let na = ea.l2_norm().max(1e-12);
    let nb = eb.l2_norm().max(1e-12);
    Ok(ea
        .data()
        .iter()
        .zip(eb.data())
        .map(|(x, y)| {
            let d = x / na - y / nb;
            d * d
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMetrics {
    /// Mean absolute error after median-ratio scale alignment, inside the mask.
    pub scale_invariant_mae: f64,
    /// Pearson correlation inside the mask; 0 when degenerate.
    pub pearson: f64,
    /// Set when the correlation was undefined (constant prediction or truth).
    pub degenerate: bool,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Masked scale-invariant error and correlation.
pub fn depth_accuracy(pred: &Tensor, gt: &Tensor, mask: &[bool]) -> Result<DepthMetrics> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape("depth shapes differ"));
    }
    if pred.numel() != mask.len() {
        return Err(Error::shape("mask length differs from depth size"));
    }
    let idx: Vec<usize> = (0..mask.len()).filter(|&k| mask[k]).collect();
    if idx.is_empty() {
        return Err(Error::degenerate("empty mask"));
    }
    let mut pv: Vec<f64> = idx.iter().map(|&k| pred.data()[k]).collect();
    let mut gv: Vec<f64> = idx.iter().map(|&k| gt.data()[k]).collect();
    let med_p = median(&mut pv.clone());
    let med_g = median(&mut gv.clone());
    let scale = if med_p.abs() < 1e-12 { 1.0 } else { med_g / med_p };
    let mae = idx
        .iter()
        .map(|&k| (scale * pred.data()[k] - gt.data()[k]).abs())
        .sum::<f64>()
        / idx.len() as f64;

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mp = mean(&pv);
    let mg = mean(&gv);
    let mut num = 0.0;
    let mut dp = 0.0;
    let mut dg = 0.0;
    for (p, g) in pv.iter_mut().zip(gv.iter_mut()) {
        let a = *p - mp;
        let b = *g - mg;
        num += a * b;
        dp += a * a;
        dg += b * b;
    }
    let degenerate = dp < 1e-18 || dg < 1e-18;
    let pearson = if degenerate {
        0.0
    } else {
        num / fm::sqrt(dp * dg)
    };
    Ok(DepthMetrics {
        scale_invariant_mae: mae,
        pearson,
        degenerate,
    })
}
