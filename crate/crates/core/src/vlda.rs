//! The learnable actors of single-image inverse rendering: encoder-decoder
//! networks for depth and albedo, encoder regressors for viewpoint and
//! lighting (all outputs squashed into their factor bounds, so predicted
//! factors are valid by construction), the analytic ellipsoid shape prior
//! the depth network is pre-trained toward, and the offset encoder used to
//! project rendered pseudo samples back into the generator's latent space.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::camera::Camera;
use crate::disc::Discriminator;
use crate::error::{Error, Result};
use crate::generator::{Generator, LRELU_SLOPE};
use crate::graph::{Tape, Var};
use crate::params::{Archive, BoundParams, ParamSet};
use crate::render::{FAR, MAX_ROT, MAX_TRANS, NEAR};
use crate::rng::{self, derive_seed};
use crate::tensor::Tensor;

/// Encoder stage plan per resolution: stem channels then stride-2 stages.
fn stage_channels(resolution: usize) -> Result<Vec<usize>> {
    match resolution {
        16 => Ok(alloc::vec![12, 16, 24]),
        32 => Ok(alloc::vec![12, 16, 24, 32]),
        64 => Ok(alloc::vec![12, 16, 24, 32, 48]),
        other => Err(Error::config(format!(
            "unsupported network resolution {other}"
        ))),
    }
}

fn he(shape: &[usize], fan_in: usize, r: &mut rng::Rng) -> Tensor {
    Tensor::randn(shape, crate::fm::sqrt(2.0 / fan_in as f64), r)
}

/// Builds encoder-decoder parameters under `prefix` with `out_ch` outputs.
fn init_codec(p: &mut ParamSet, prefix: &str, resolution: usize, out_ch: usize, r: &mut rng::Rng) {
    let ch = stage_channels(resolution).unwrap();
    for (i, &c) in ch.iter().enumerate() {
        let cin = if i == 0 { 3 } else { ch[i - 1] };
        p.insert(&format!("{prefix}.enc{i}.weight"), he(&[c, cin, 3, 3], cin * 9, r));
        p.insert(&format!("{prefix}.enc{i}.bias"), Tensor::zeros(&[c]));
    }
    // decoder mirrors the stride-2 stages with 4x4 transposed convs
    for i in (1..ch.len()).rev() {
        let cin = ch[i];
        let cout = ch[i - 1];
        p.insert(
            &format!("{prefix}.dec{i}.weight"),
            he(&[cin, cout, 4, 4], cin * 16, r),
        );
        p.insert(&format!("{prefix}.dec{i}.bias"), Tensor::zeros(&[cout]));
    }
    let mut head = he(&[out_ch, ch[0], 3, 3], ch[0] * 9, r);
    head.scale_in_place(0.2);
    p.insert(&format!("{prefix}.out.weight"), head);
    p.insert(&format!("{prefix}.out.bias"), Tensor::zeros(&[out_ch]));
    // learned positional output bias: lets the decoder represent sharp
    // canonical structure (e.g. the silhouette rim) that the blurry
    // bottleneck path cannot
    p.insert(
        &format!("{prefix}.out.posbias"),
        Tensor::zeros(&[out_ch, resolution, resolution]),
    );
}

/// Builds encoder-regressor parameters under `prefix` with `outputs` values.
fn init_regressor(p: &mut ParamSet, prefix: &str, resolution: usize, outputs: usize, r: &mut rng::Rng) {
    let ch = stage_channels(resolution).unwrap();
    for (i, &c) in ch.iter().enumerate() {
        let cin = if i == 0 { 3 } else { ch[i - 1] };
        p.insert(&format!("{prefix}.enc{i}.weight"), he(&[c, cin, 3, 3], cin * 9, r));
        p.insert(&format!("{prefix}.enc{i}.bias"), Tensor::zeros(&[c]));
    }
    let last = *ch.last().unwrap();
    p.insert(
        &format!("{prefix}.fc.weight"),
        Tensor::randn(&[outputs, last], crate::fm::sqrt(1.0 / last as f64), r),
    );
    p.insert(&format!("{prefix}.fc.bias"), Tensor::zeros(&[outputs]));
}

fn codec_forward(
    tape: &Tape,
    bound: &BoundParams,
    prefix: &str,
    resolution: usize,
    images: Var,
) -> Var {
    let ch = stage_channels(resolution).unwrap();
    let mut x = images;
    for i in 0..ch.len() {
        let w = bound.get(&format!("{prefix}.enc{i}.weight"));
        let b = bound.get(&format!("{prefix}.enc{i}.bias"));
        let stride = if i == 0 { 1 } else { 2 };
        x = tape.lrelu(tape.add_axis1(tape.conv2d(x, w, stride, 1), b), LRELU_SLOPE);
    }
    for i in (1..ch.len()).rev() {
        let w = bound.get(&format!("{prefix}.dec{i}.weight"));
        let b = bound.get(&format!("{prefix}.dec{i}.bias"));
        x = tape.lrelu(tape.add_axis1(tape.conv_t2d(x, w, 2, 1), b), LRELU_SLOPE);
    }
    let w = bound.get(&format!("{prefix}.out.weight"));
    let b = bound.get(&format!("{prefix}.out.bias"));
    let n = tape.shape_of(images)[0];
    let pos = tape.repeat_n(bound.get(&format!("{prefix}.out.posbias")), n);
    tape.add(tape.add_axis1(tape.conv2d(x, w, 1, 1), b), pos)
}

fn regressor_forward(
    tape: &Tape,
    bound: &BoundParams,
    prefix: &str,
    resolution: usize,
    images: Var,
) -> Var {
    let ch = stage_channels(resolution).unwrap();
    let mut x = images;
    for i in 0..ch.len() {
        let w = bound.get(&format!("{prefix}.enc{i}.weight"));
        let b = bound.get(&format!("{prefix}.enc{i}.bias"));
        let stride = if i == 0 { 1 } else { 2 };
        x = tape.lrelu(tape.add_axis1(tape.conv2d(x, w, stride, 1), b), LRELU_SLOPE);
    }
    let pooled = tape.mean_hw(x);
    tape.add_axis1(
        tape.matmul(pooled, bound.get(&format!("{prefix}.fc.weight")), false, true),
        bound.get(&format!("{prefix}.fc.bias")),
    )
}

/// Trace of which network consumed which input (by value fingerprint).
pub type TraceEvent = (&'static str, u64);

fn fingerprint(t: &Tensor) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in t.data() {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug)]
pub struct VldaModel {
    pub resolution: usize,
    pub params: ParamSet,
    trace: RefCell<Option<Vec<TraceEvent>>>,
}

impl Clone for VldaModel {
    fn clone(&self) -> Self {
        VldaModel {
            resolution: self.resolution,
            params: self.params.clone(),
            trace: RefCell::new(None),
        }
    }
}

impl PartialEq for VldaModel {
    fn eq(&self, other: &Self) -> bool {
        self.resolution == other.resolution && self.params == other.params
    }
}

impl VldaModel {
    pub fn init(resolution: usize, seed: u64) -> Result<Self> {
        stage_channels(resolution)?;
        let mut r = rng::rng_from_seed(seed);
        let mut p = ParamSet::new();
        init_codec(&mut p, "d", resolution, 1, &mut r);
        init_codec(&mut p, "a", resolution, 3, &mut r);
        init_regressor(&mut p, "v", resolution, 6, &mut r);
        init_regressor(&mut p, "l", resolution, 4, &mut r);
        Ok(VldaModel {
            resolution,
            params: p,
            trace: RefCell::new(None),
        })
    }

    pub fn enable_trace(&self) {
        *self.trace.borrow_mut() = Some(Vec::new());
    }

    pub fn take_trace(&self) -> Vec<TraceEvent> {
        self.trace.borrow_mut().take().unwrap_or_default()
    }

    fn record(&self, net: &'static str, tape: &Tape, images: Var) {
        if let Some(tr) = self.trace.borrow_mut().as_mut() {
            tr.push((net, fingerprint(&tape.value(images))));
        }
    }

    /// Pre-squash depth logits [N,1,R,R] (the depth-prior pretraining
    /// target space).
    pub fn depth_raw_g(&self, tape: &Tape, images: Var, bound: &BoundParams) -> Var {
        self.record("D", tape, images);
        codec_forward(tape, bound, "d", self.resolution, images)
    }

    /// Depth map node [N,1,R,R], sigmoid-squashed into [NEAR, FAR].
    pub fn depth_g(&self, tape: &Tape, images: Var, bound: &BoundParams) -> Var {
        let raw = self.depth_raw_g(tape, images, bound);
        tape.add_c(tape.mul_c(tape.sigmoid(raw), FAR - NEAR), NEAR)
    }

    /// Albedo node [N,3,R,R] in [0,1].
    pub fn albedo_g(&self, tape: &Tape, images: Var, bound: &BoundParams) -> Var {
        self.record("A", tape, images);
        let raw = codec_forward(tape, bound, "a", self.resolution, images);
        tape.sigmoid(raw)
    }

    /// Viewpoint node [N,6]: rotations in +-MAX_ROT, translations in
    /// +-MAX_TRANS via tanh squashing.
    pub fn view_g(&self, tape: &Tape, images: Var, bound: &BoundParams) -> Var {
        self.record("V", tape, images);
        let raw = regressor_forward(tape, bound, "v", self.resolution, images);
        let t = tape.tanh(raw);
        let rot = tape.mul_c(tape.slice(t, 1, 0, 3), MAX_ROT);
        let trans = tape.mul_c(tape.slice(t, 1, 3, 3), MAX_TRANS);
        tape.concat(&[rot, trans], 1)
    }

    /// Lighting node [N,4]: sigmoids for k_a, k_d; tanh for l_x, l_y.
    pub fn light_g(&self, tape: &Tape, images: Var, bound: &BoundParams) -> Var {
        self.record("L", tape, images);
        let raw = regressor_forward(tape, bound, "l", self.resolution, images);
        let kak = tape.sigmoid(tape.slice(raw, 1, 0, 2));
        let lxy = tape.tanh(tape.slice(raw, 1, 2, 2));
        tape.concat(&[kak, lxy], 1)
    }

    /// Value-level full prediction for one [3,R,R] image. The output ranges
    /// are structural, so the factors always validate.
    pub fn predict_factors(&self, image: &Tensor) -> Result<crate::render::SceneFactors> {
        let r = self.resolution;
        image.check_shape(&[3, r, r], "vlda input")?;
        let tape = Tape::new();
        let bound = BoundParams::constants(&tape, &self.params);
        let img = tape.constant(image.reshaped(&[1, 3, r, r]));
        let depth = tape.value(self.depth_g(&tape, img, &bound)).reshaped(&[1, r, r]);
        let albedo = tape
            .value(self.albedo_g(&tape, img, &bound))
            .reshaped(&[3, r, r]);
        let view_t = tape.value(self.view_g(&tape, img, &bound));
        let light_t = tape.value(self.light_g(&tape, img, &bound));
        let view = core::array::from_fn(|k| view_t.data()[k]);
        let light = core::array::from_fn(|k| light_t.data()[k]);
        crate::render::SceneFactors::new(depth, albedo, view, light)
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new("vlda");
        a.meta
            .insert("resolution".into(), self.resolution.to_string());
        a.params = self.params.clone();
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.kind != "vlda" {
            return Err(Error::incompatible(format!(
                "expected a vlda archive, found kind {}",
                a.kind
            )));
        }
        let resolution = a.meta_usize("resolution")?;
        let m = VldaModel {
            resolution,
            params: a.params.clone(),
            trace: RefCell::new(None),
        };
        let fresh = VldaModel::init(resolution, 0)?;
        if fresh.params.signature() != m.params.signature() {
            return Err(Error::incompatible(
                "parameter set does not match the declared architecture",
            ));
        }
        Ok(m)
    }

    /// Indices of the depth-network parameters within the set order.
    pub fn param_group(&self, prefix: &str) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, (n, _))| n.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidPrior {
    /// Projected center in pixel-index coordinates.
    pub center_px: (f64, f64),
    pub center_depth: f64,
    /// Semi-axes (lateral x, lateral y, depth z) in canonical units.
    pub semi: [f64; 3],
}

impl EllipsoidPrior {
    pub fn validate(&self, camera: &Camera) -> Result<()> {
        if self.semi.iter().any(|&s| s <= 0.0) {
            return Err(Error::config("ellipsoid semi-axes must be positive"));
        }
        if !(NEAR..=FAR).contains(&self.center_depth) {
            return Err(Error::config("ellipsoid center depth outside [near, far]"));
        }
        let f = camera.focal_px();
        let rx = f * self.semi[0] / self.center_depth;
        let ry = f * self.semi[1] / self.center_depth;
        if self.center_px.0 - rx < -0.5
            || self.center_px.0 + rx > camera.width as f64 - 0.5
            || self.center_px.1 - ry < -0.5
            || self.center_px.1 + ry > camera.height as f64 - 0.5
        {
            return Err(Error::config("projected ellipse exceeds image bounds"));
        }
        Ok(())
    }

    /// The default prior: a centered, slightly prolate ellipsoid with no
    /// knowledge of any particular head.
    pub fn default_for(camera: &Camera) -> Self {
        EllipsoidPrior {
            center_px: (
                camera.width as f64 / 2.0 - 0.5,
                camera.height as f64 / 2.0 - 0.5,
            ),
            center_depth: 1.02,
            semi: [0.05, 0.05, 0.05],
        }
    }

    /// Camera-space center.
    pub fn center_cam(&self, camera: &Camera) -> [f64; 3] {
        let f = camera.focal_px();
        let zc = self.center_depth;
        [
            (self.center_px.0 + 0.5 - camera.cx()) / f * zc,
            (self.center_px.1 + 0.5 - camera.cy()) / f * zc,
            zc,
        ]
    }
}

/// Analytic front-surface depth of the prior; background is FAR.
pub fn ellipsoid_depth(prior: &EllipsoidPrior, camera: &Camera) -> Result<Tensor> {
    prior.validate(camera)?;
    let (h, w) = (camera.height, camera.width);
    let (dirx, diry) = camera.dir_maps();
    let c = prior.center_cam(camera);
    let mut out = Tensor::full(&[1, h, w], FAR);
    for k in 0..h * w {
        let dx = dirx.data()[k];
        let dy = diry.data()[k];
        let a = crate::fm::sq(dx / prior.semi[0]) + crate::fm::sq(dy / prior.semi[1])
            + crate::fm::sq(1.0 / prior.semi[2]);
        let b = -2.0
            * (dx * c[0] / (prior.semi[0] * prior.semi[0])
                + dy * c[1] / (prior.semi[1] * prior.semi[1])
                + c[2] / (prior.semi[2] * prior.semi[2]));
        let cc = crate::fm::sq(c[0] / prior.semi[0])
            + crate::fm::sq(c[1] / prior.semi[1])
            + crate::fm::sq(c[2] / prior.semi[2])
            - 1.0;
        let disc = b * b - 4.0 * a * cc;
        if disc >= 0.0 {
            let t = (-b - crate::fm::sqrt(disc)) / (2.0 * a);
            if t > NEAR && t < FAR {
                out.data_mut()[k] = t;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub converged: bool,
    pub steps_run: usize,
    pub final_l1: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub tol: f64,
    pub max_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub check_every: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            tol: 0.01,
            max_steps: 5000,
            batch_size: 4,
            lr: 2e-3,
            check_every: 25,
            seed: 0,
        }
    }
}

/// Pre-trains the depth network to regress the prior's analytic depth over
/// an image set. Budget exhaustion is a warning carried in the report, not
/// an error.
pub fn pretrain_depth_prior(
    model: &mut VldaModel,
    prior: &EllipsoidPrior,
    images: &[Tensor],
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    if cfg.tol <= 0.0 {
        return Err(Error::config("tolerance must be positive"));
    }
    if images.is_empty() {
        return Err(Error::config("empty pretraining image set"));
    }
    let camera = Camera::square(model.resolution);
    let target = ellipsoid_depth(prior, &camera)?;
    // Train in logit space against clipped inverse targets: the background
    // sits exactly at FAR, which the sigmoid only reaches asymptotically;
    // chasing it saturates the squash and starves every gradient. Clipping
    // the unit-space target to [eps, 1-eps] keeps the optimum interior and
    // costs under (eps * (FAR-NEAR)) of true depth error.
    const TARGET_CLIP: f64 = 0.02;
    let raw_target = target.map(|d| {
        let u = ((d - NEAR) / (FAR - NEAR)).clamp(TARGET_CLIP, 1.0 - TARGET_CLIP);
        crate::fm::ln(u / (1.0 - u))
    });
    let depth_idx = model.param_group("d.");
    let mut opt = crate::opt::Adam::with_betas(cfg.lr, 0.9, 0.999);
    let mut rb = rng::rng_from_seed(derive_seed(cfg.seed, "prior-batches"));
    let r = model.resolution;

    let full_l1 = |m: &VldaModel| -> f64 {
        let mut total = 0.0;
        for img in images {
            let tape = Tape::new();
            let bound = BoundParams::constants(&tape, &m.params);
            let iv = tape.constant(img.reshaped(&[1, 3, r, r]));
            let d = tape.value(m.depth_g(&tape, iv, &bound));
            total += d.reshaped(&[1, r, r]).mean_abs_diff(&target);
        }
        total / images.len() as f64
    };

    let mut steps_run = 0;
    let mut final_l1 = full_l1(model);
    if final_l1 < cfg.tol {
        return Ok(PretrainReport {
            converged: true,
            steps_run: 0,
            final_l1,
        });
    }
    for step in 1..=cfg.max_steps {
        let picks: Vec<usize> = (0..cfg.batch_size)
            .map(|_| {
                (rng::uniform(&mut rb, 0.0, images.len() as f64) as usize).min(images.len() - 1)
            })
            .collect();
        let mut data = Vec::new();
        for &i in &picks {
            data.extend_from_slice(images[i].data());
        }
        let batch = Tensor::new(alloc::vec![picks.len(), 3, r, r], data);

        let tape = Tape::new();
        let bound = BoundParams::trainable(&tape, &model.params);
        let iv = tape.constant(batch);
        let d = model.depth_raw_g(&tape, iv, &bound);
        let mut tgt_data = Vec::new();
        for _ in 0..picks.len() {
            tgt_data.extend_from_slice(raw_target.data());
        }
        let tgt = tape.constant(Tensor::new(alloc::vec![picks.len(), 1, r, r], tgt_data));
        let loss = tape.mean_all(tape.abs(tape.sub(d, tgt)));
        if !tape.value_scalar(loss).is_finite() {
            return Err(Error::numeric("depth pretraining diverged"));
        }
        let mut grads = tape.backward(loss);
        let mut g = bound.grads(&mut grads);
        // only the depth network updates
        for (i, slot) in g.iter_mut().enumerate() {
            if !depth_idx.contains(&i) {
                *slot = None;
            }
        }
        opt.step(&mut model.params.tensors_mut(), &g);
        steps_run = step;
        if step % cfg.check_every == 0 {
            final_l1 = full_l1(model);
            if final_l1 < cfg.tol {
                return Ok(PretrainReport {
                    converged: true,
                    steps_run,
                    final_l1,
                });
            }
        }
    }
    final_l1 = full_l1(model);
    Ok(PretrainReport {
        converged: final_l1 < cfg.tol,
        steps_run,
        final_l1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionEncoder {
    pub resolution: usize,
    pub d_w: usize,
    pub params: ParamSet,
}

impl InversionEncoder {
    pub fn init(resolution: usize, d_w: usize, seed: u64) -> Result<Self> {
        stage_channels(resolution)?;
        let mut r = rng::rng_from_seed(seed);
        let mut p = ParamSet::new();
        init_regressor(&mut p, "e", resolution, d_w, &mut r);
        // near-zero start: projection begins at the known latent w
        if let Some(w) = p.get_mut("e.fc.weight") {
            w.scale_in_place(0.01);
        }
        Ok(InversionEncoder {
            resolution,
            d_w,
            params: p,
        })
    }

    /// Offset node [N, d_w].
    pub fn offset_g(&self, tape: &Tape, images: Var, bound: &BoundParams) -> Var {
        regressor_forward(tape, bound, "e", self.resolution, images)
    }

    pub fn offset(&self, image: &Tensor) -> Result<Tensor> {
        let r = self.resolution;
        image.check_shape(&[3, r, r], "encoder input")?;
        let tape = Tape::new();
        let bound = BoundParams::constants(&tape, &self.params);
        let iv = tape.constant(image.reshaped(&[1, 3, r, r]));
        Ok(tape.value(self.offset_g(&tape, iv, &bound)).reshaped(&[self.d_w]))
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new("encoder");
        a.meta
            .insert("resolution".into(), self.resolution.to_string());
        a.meta.insert("d_w".into(), self.d_w.to_string());
        a.params = self.params.clone();
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.kind != "encoder" {
            return Err(Error::incompatible(format!(
                "expected an encoder archive, found kind {}",
                a.kind
            )));
        }
        let e = InversionEncoder {
            resolution: a.meta_usize("resolution")?,
            d_w: a.meta_usize("d_w")?,
            params: a.params.clone(),
        };
        let fresh = InversionEncoder::init(e.resolution, e.d_w, 0)?;
        if fresh.params.signature() != e.params.signature() {
            return Err(Error::incompatible(
                "parameter set does not match the declared architecture",
            ));
        }
        Ok(e)
    }
}

/// Mean L1 distance between two images' discriminator features, averaged
/// over all intermediate taps.
pub fn disc_feature_distance(disc: &Discriminator, a: &Tensor, b: &Tensor) -> Result<f64> {
    let fa = disc.features(a)?;
    let fb = disc.features(b)?;
    let mut total = 0.0;
    for (x, y) in fa.iter().zip(&fb) {
        total += x.mean_abs_diff(y);
    }
    Ok(total / fa.len() as f64)
}

/// Graph builder for the projection objective
/// L_E = L_dis(target, G(E(target) + w)) + lambda_e * ||E(target)||_2.
/// Returns (loss node, offset node).
pub fn inversion_loss_g(
    tape: &Tape,
    image: &Tensor,
    enc: &InversionEncoder,
    enc_bound: &BoundParams,
    w: &Tensor,
    gen: &Generator,
    disc: &Discriminator,
    lambda_e: f64,
) -> Result<(Var, Var)> {
    let r = gen.cfg.resolution;
    if enc.resolution != r || disc.cfg.resolution != r {
        return Err(Error::config("encoder/generator/discriminator resolution mismatch"));
    }
    image.check_shape(&[3, r, r], "inversion target")?;
    let iv = tape.constant(image.reshaped(&[1, 3, r, r]));
    let offset = enc.offset_g(tape, iv, enc_bound);
    let wv = tape.constant(w.reshaped(&[1, enc.d_w]));
    let w_total = tape.add(wv, offset);
    let gb = BoundParams::constants(tape, &gen.params);
    let (recon, _) = gen.synthesize_g(tape, w_total, &gb);
    let db = BoundParams::constants(tape, &disc.params);
    let (_, taps_t) = disc.forward_g(tape, tape.constant(image.reshaped(&[1, 3, r, r])), &db);
    let (_, taps_r) = disc.forward_g(tape, recon, &db);
    let mut l_dis: Option<Var> = None;
    for (t, rr) in taps_t.iter().zip(&taps_r) {
        let term = tape.mean_all(tape.abs(tape.sub(*rr, *t)));
        l_dis = Some(match l_dis {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    let l_dis = tape.mul_c(l_dis.unwrap(), 1.0 / taps_t.len() as f64);
    let norm = tape.sqrt(tape.sum_all(tape.mul(offset, offset)));
    let loss = tape.add(l_dis, tape.mul_c(norm, lambda_e));
    Ok((loss, offset))
}

/// Value-level projection objective.
pub fn inversion_loss(
    image: &Tensor,
    enc: &InversionEncoder,
    w: &Tensor,
    gen: &Generator,
    disc: &Discriminator,
    lambda_e: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let bound = BoundParams::constants(&tape, &enc.params);
    let (loss, _) = inversion_loss_g(&tape, image, enc, &bound, w, gen, disc, lambda_e)?;
    Ok(tape.value_scalar(loss))
}

#[cfg(test)]
mod tests;
