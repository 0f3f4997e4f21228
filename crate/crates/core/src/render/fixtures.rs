//! Random scene generators for gradient checks and verification suites.
//! These produce smooth in-bounds factor fields: white-noise surfaces put
//! most normals near grazing, where finite differences at any practical
//! step size stop being informative.

use alloc::vec::Vec;

use crate::fm;
use crate::render::SceneFactors;
use crate::rng::{uniform, Rng};
use crate::tensor::Tensor;

/// Random in-bounds factors with margins so finite differences stay inside
/// the valid ranges and away from shading kinks. Depth and albedo are random
/// smooth fields: per-pixel white noise would put most normals near grazing,
/// where the normalization curvature swamps a 1e-3 difference step.
pub fn random_factors(r: &mut crate::rng::Rng, res: usize) -> SceneFactors {
    let depth = random_wave_field(r, res, 1.0, 0.002, 0.008);
    // waves plus a bright centered blob: keeps view changes observable in
    // the mean intensity (content moves against the darker border)
    let planes: Vec<Tensor> = (0..3)
        .map(|_| random_wave_field(r, res, 0.35, 0.01, 0.03))
        .collect();
    let blob_amp = uniform(r, 0.2, 0.35);
    let cx = uniform(r, -0.1, 0.1);
    let cy = uniform(r, -0.1, 0.1);
    let albedo = Tensor::from_fn(&[3, res, res], |k| {
        let p = k % (res * res);
        let x = (p % res) as f64 / res as f64 - 0.5 - cx;
        let y = (p / res) as f64 / res as f64 - 0.5 - cy;
        let blob = blob_amp * fm::exp(-(x * x + y * y) / 0.18);
        (planes[k / (res * res)].data()[p] + blob).clamp(0.02, 0.98)
    });
    let view = [
        uniform(r, -0.2, 0.2),
        uniform(r, -0.2, 0.2),
        uniform(r, -0.2, 0.2),
        uniform(r, -0.03, 0.03),
        uniform(r, -0.03, 0.03),
        uniform(r, -0.03, 0.03),
    ];
    let light = [
        uniform(r, 0.1, 0.5),
        uniform(r, 0.1, 0.5),
        uniform(r, -0.8, 0.8),
        uniform(r, -0.8, 0.8),
    ];
    SceneFactors::new(depth, albedo, view, light).unwrap()
}

/// 1.0 plus three random cosine waves with small amplitude.
pub fn random_smooth_depth(r: &mut crate::rng::Rng, res: usize) -> Tensor {
    random_wave_field(r, res, 1.0, 0.005, 0.02)
}

/// `base` plus three random cosine waves with per-wave amplitude in
/// [amp_lo, amp_hi].
pub fn random_wave_field(
    r: &mut crate::rng::Rng,
    res: usize,
    base: f64,
    amp_lo: f64,
    amp_hi: f64,
) -> Tensor {
    let mut waves = [[0.0f64; 4]; 3];
    for wv in &mut waves {
        *wv = [
            uniform(r, amp_lo, amp_hi),
            uniform(r, -2.0, 2.0),
            uniform(r, -2.0, 2.0),
            uniform(r, 0.0, 2.0 * fm::PI),
        ];
    }
    Tensor::from_fn(&[1, res, res], |k| {
        let x = (k % res) as f64 / res as f64;
        let y = (k / res) as f64 / res as f64;
        let mut d = base;
        for [a, fx, fy, ph] in waves {
            d += a * fm::cos(2.0 * fm::PI * (fx * x + fy * y) + ph);
        }
        d
    })
}

