//! Single-image 3D reconstruction: an iterative scheme that (1) fits albedo
//! (and lightly refines depth) under a canonical viewpoint and lighting,
//! (2) renders the current shape under randomly sampled viewpoints/lights
//! and projects those renders back through the generator via an offset
//! encoder, and (3) jointly trains all four factor networks on the projected
//! pseudo samples. The cycle repeats several times; each phase returns its
//! best-loss iterate, never unconditionally the last one.

use alloc::vec::Vec;

use crate::camera::Camera;
use crate::disc::Discriminator;
use crate::embed::EmbeddingNet;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::graph::{Tape, Var};
use crate::opt::Adam;
use crate::params::BoundParams;
use crate::render::{self, FactorVars, SceneFactors};
use crate::rng::{derive_seed, derive_seed_index};
use crate::tensor::Tensor;
use crate::vlda::{InversionEncoder, VldaModel};
use crate::world::SamplingRanges;

/// Canonical setting for phase 1: frontal view, balanced frontal light.
pub const CANONICAL_VIEW: [f64; 6] = [0.0; 6];
pub const CANONICAL_LIGHT: [f64; 4] = [0.5, 0.5, 0.0, 0.0];

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub cycles: usize,
    /// Pseudo samples per cycle.
    pub m: usize,
    pub lambda_perc: f64,
    pub lambda_e: f64,
    pub lambda_smooth: f64,
    /// Viewpoint/lighting sampling ranges for pseudo samples.
    pub ranges: SamplingRanges,
    pub step1_steps: usize,
    pub step3_steps: usize,
    pub e_steps: usize,
    pub lr_vlda: f64,
    pub lr_e: f64,
    /// Phase-1 depth handling: frozen, or refined at a reduced rate.
    pub freeze_depth_step1: bool,
    pub depth_lr_scale: f64,
    /// Fraction of phase-3 steps that update only the viewpoint/lighting
    /// networks before the joint phase. The pose networks start near the
    /// canonical setting; without a head start they explain posed targets
    /// by distorting depth and albedo instead.
    pub pose_warmup: f64,
    /// Full-set evaluation cadence for the best-iterate bookkeeping.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cycles: 4,
            m: 32,
            lambda_perc: 0.5,
            lambda_e: 0.01,
            lambda_smooth: 0.01,
            ranges: SamplingRanges::default(),
            step1_steps: 150,
            step3_steps: 150,
            e_steps: 200,
            lr_vlda: 2e-3,
            lr_e: 1e-3,
            freeze_depth_step1: true,
            depth_lr_scale: 0.1,
            pose_warmup: 0.5,
            eval_every: 25,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 || self.m == 0 {
            return Err(Error::config("cycles and m must be >= 1"));
        }
        if self.lambda_perc < 0.0 || self.lambda_e < 0.0 || self.lambda_smooth < 0.0 {
            return Err(Error::config("loss weights must be >= 0"));
        }
        self.ranges.validate()
    }
}

#[derive(Debug, Clone)]
pub struct GalleryEntry {
    pub view: [f64; 6],
    pub light: [f64; 4],
    /// Raw render of the current shape under (view, light).
    pub rendered: Tensor,
    /// The render projected through the generator.
    pub projected: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct CycleTrajectories {
    pub step1: Vec<f64>,
    pub step2: Vec<f64>,
    pub step3: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub factors: SceneFactors,
    pub gallery: Vec<GalleryEntry>,
    pub trajectories: Vec<CycleTrajectories>,
    /// Canonical depth prediction after each cycle.
    pub depth_snapshots: Vec<Tensor>,
    /// The latent used for projection.
    pub w: Tensor,
    /// Set when the input image was inverted and the inversion loss exceeded
    /// the configured threshold (likely out-of-manifold input).
    pub inversion_flagged: bool,
}

/// L1 plus weighted squared feature distance (graph form). `target` is a
/// constant [3,R,R].
pub fn reconstruction_loss_g(
    tape: &Tape,
    pred: Var,
    target: &Tensor,
    f: &EmbeddingNet,
    lambda_perc: f64,
) -> Var {
    let tgt = tape.constant(target.clone());
    let l1 = tape.mean_all(tape.abs(tape.sub(pred, tgt)));
    if lambda_perc == 0.0 {
        return l1;
    }
    let bf = BoundParams::constants(tape, &f.params);
    let r = f.cfg.resolution;
    let (_, ea, _) = f.forward_g(tape, tape.reshape(pred, &[1, 3, r, r]), &bf);
    let (_, eb, _) = f.forward_g(
        tape,
        tape.constant(target.reshaped(&[1, 3, r, r])),
        &bf,
    );
    let d = tape.sub(ea, eb);
    let perc = tape.sum_all(tape.mul(d, d));
    tape.add(l1, tape.mul_c(perc, lambda_perc))
}

/// Value-level reconstruction loss.
pub fn reconstruction_loss(
    pred: &Tensor,
    target: &Tensor,
    f: &EmbeddingNet,
    lambda_perc: f64,
) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("reconstruction loss: image shapes differ"));
    }
    let tape = Tape::new();
    let p = tape.constant(pred.clone());
    Ok(tape.value_scalar(reconstruction_loss_g(&tape, p, target, f, lambda_perc)))
}

/// Mean border-pixel color, used as the warp fill for pseudo views.
pub fn border_color(image: &Tensor) -> [f64; 3] {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let hw = h * w;
    let mut acc = [0.0f64; 3];
    let mut count = 0usize;
    for i in 0..h {
        for j in 0..w {
            if i == 0 || j == 0 || i == h - 1 || j == w - 1 {
                for c in 0..3 {
                    acc[c] += image.data()[c * hw + i * w + j];
                }
                count += 1;
            }
        }
    }
    core::array::from_fn(|c| acc[c] / count as f64)
}

fn factor_vars_from_nets(
    tape: &Tape,
    model: &VldaModel,
    bound: &BoundParams,
    da_input: Var,
    vl_input: Var,
    r: usize,
) -> FactorVars {
    let depth = tape.reshape(model.depth_g(tape, da_input, bound), &[1, r, r]);
    let albedo = tape.reshape(model.albedo_g(tape, da_input, bound), &[3, r, r]);
    let view6 = model.view_g(tape, vl_input, bound);
    let light4 = model.light_g(tape, vl_input, bound);
    let view = core::array::from_fn(|k| tape.reshape(tape.slice(view6, 1, k, 1), &[1]));
    let light = core::array::from_fn(|k| tape.reshape(tape.slice(light4, 1, k, 1), &[1]));
    FactorVars {
        depth,
        albedo,
        view,
        light,
    }
}

fn constant_view_light(tape: &Tape, view: [f64; 6], light: [f64; 4]) -> ([Var; 6], [Var; 4]) {
    (
        core::array::from_fn(|k| tape.constant(Tensor::scalar(view[k]))),
        core::array::from_fn(|k| tape.constant(Tensor::scalar(light[k]))),
    )
}

/// Adam with true per-parameter learning-rate scales. Scaling gradients
/// does nothing to Adam (its steps are invariant to gradient magnitude), so
/// each scale group gets its own optimizer with a scaled learning rate;
/// zero-scale parameters are frozen.
struct GroupedAdam {
    opts: alloc::collections::BTreeMap<u64, Adam>,
    scale: Vec<f64>,
    lr: f64,
}

impl GroupedAdam {
    fn new(lr: f64, scale: Vec<f64>) -> Self {
        GroupedAdam {
            opts: alloc::collections::BTreeMap::new(),
            scale,
            lr,
        }
    }

    fn step(&mut self, params: &mut [&mut Tensor], grads: &mut [Option<Tensor>]) {
        let keys: alloc::collections::BTreeSet<u64> =
            self.scale.iter().map(|s| s.to_bits()).collect();
        for key in keys {
            let s = f64::from_bits(key);
            if s == 0.0 {
                continue;
            }
            let opt = self
                .opts
                .entry(key)
                .or_insert_with(|| Adam::with_betas(self.lr * s, 0.9, 0.999));
            let mut group_params: Vec<&mut Tensor> = Vec::new();
            let mut group_grads: Vec<Option<Tensor>> = Vec::new();
            for (i, p) in params.iter_mut().enumerate() {
                if self.scale[i].to_bits() == key {
                    group_params.push(p);
                    group_grads.push(grads[i].take());
                }
            }
            opt.step(&mut group_params, &group_grads);
        }
    }
}

/// Phase 1: fit albedo (and lightly refine depth) under the canonical
/// setting. Returns the best-iterate (d0, a0) and the loss trajectory.
pub fn step1_fit_albedo(
    image: &Tensor,
    model: &mut VldaModel,
    f: &EmbeddingNet,
    cfg: &PipelineConfig,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let r = model.resolution;
    image.check_shape(&[3, r, r], "step1 input")?;
    let camera = Camera::square(r);
    let border = border_color(image);
    let scales: Vec<f64> = model
        .params
        .iter()
        .map(|(n, _)| {
            if n.starts_with("a.") {
                1.0
            } else if n.starts_with("d.") {
                if cfg.freeze_depth_step1 {
                    0.0
                } else {
                    cfg.depth_lr_scale
                }
            } else {
                0.0 // V and L are not part of phase 1
            }
        })
        .collect();
    let mut opt = GroupedAdam::new(cfg.lr_vlda, scales);
    let mut trajectory = Vec::with_capacity(cfg.step1_steps);
    let mut best: Option<(f64, crate::params::ParamSet)> = None;

    for _ in 0..cfg.step1_steps {
        let tape = Tape::new();
        let bound = BoundParams::trainable(&tape, &model.params);
        let iv = tape.constant(image.reshaped(&[1, 3, r, r]));
        let depth = tape.reshape(model.depth_g(&tape, iv, &bound), &[1, r, r]);
        let albedo = tape.reshape(model.albedo_g(&tape, iv, &bound), &[3, r, r]);
        let (view, light) = constant_view_light(&tape, CANONICAL_VIEW, CANONICAL_LIGHT);
        let fv = FactorVars {
            depth,
            albedo,
            view,
            light,
        };
        let pred = render::render_g(&tape, fv, &camera, &border);
        let loss = reconstruction_loss_g(&tape, pred, image, f, cfg.lambda_perc);
        let val = tape.value_scalar(loss);
        if !val.is_finite() {
            return Err(Error::numeric_with_trajectory(
                "phase 1 loss diverged",
                trajectory,
            ));
        }
        if best.as_ref().map(|(b, _)| val < *b).unwrap_or(true) {
            best = Some((val, model.params.clone()));
        }
        trajectory.push(val);
        let mut grads = tape.backward(loss);
        let mut g = bound.grads(&mut grads);
        opt.step(&mut model.params.tensors_mut(), &mut g);
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    let factors = model.predict_factors(image)?;
    Ok((factors.depth, factors.albedo, trajectory))
}

/// Renders the current shape under a sampled view/light.
pub fn render_pseudo(
    d0: &Tensor,
    a0: &Tensor,
    view: [f64; 6],
    light: [f64; 4],
    camera: &Camera,
    border: &[f64; 3],
) -> Result<Tensor> {
    let factors = SceneFactors::new(d0.clone(), a0.clone(), view, light)?;
    Ok(render::render(&factors, camera, border))
}

/// Phase 2: sample m views/lights, render pseudo samples, train the offset
/// encoder, and project every render through the generator.
#[allow(clippy::too_many_arguments)]
pub fn step2_project(
    d0: &Tensor,
    a0: &Tensor,
    w: &Tensor,
    gen: &Generator,
    disc: &Discriminator,
    enc: &mut InversionEncoder,
    cfg: &PipelineConfig,
    cycle: usize,
) -> Result<(Vec<GalleryEntry>, Vec<f64>)> {
    if gen.cfg.resolution != enc.resolution {
        return Err(Error::config("encoder/generator resolution mismatch"));
    }
    let r = gen.cfg.resolution;
    let camera = Camera::square(r);
    let border = border_color(a0);

    // sampled conditions for this cycle
    let mut draws = Vec::with_capacity(cfg.m);
    for i in 0..cfg.m {
        let seed = derive_seed_index(cfg.seed, "pseudo-view", (cycle * cfg.m + i) as u64);
        let spec = crate::world::sample_scene(seed, &cfg.ranges, crate::world::Style::Plain)?;
        draws.push((spec.viewpoint, spec.lighting));
    }
    let rendered: Vec<Tensor> = draws
        .iter()
        .map(|(v, l)| render_pseudo(d0, a0, *v, *l, &camera, &border))
        .collect::<Result<_>>()?;

    // train the encoder on the rendered set
    let mut opt = Adam::with_betas(cfg.lr_e, 0.9, 0.999);
    let mut losses = Vec::with_capacity(cfg.e_steps);
    let mut best: Option<(f64, crate::params::ParamSet)> = None;
    let full_loss = |e: &InversionEncoder| -> Result<f64> {
        let mut total = 0.0;
        for img in &rendered {
            total += crate::vlda::inversion_loss(img, e, w, gen, disc, cfg.lambda_e)?;
        }
        Ok(total / rendered.len() as f64)
    };
    for step in 0..cfg.e_steps {
        let img = &rendered[step % rendered.len()];
        let tape = Tape::new();
        let bound = BoundParams::trainable(&tape, &enc.params);
        let (loss, _) =
            crate::vlda::inversion_loss_g(&tape, img, enc, &bound, w, gen, disc, cfg.lambda_e)?;
        let val = tape.value_scalar(loss);
        if !val.is_finite() {
            return Err(Error::numeric_with_trajectory(
                "phase 2 encoder loss diverged",
                losses,
            ));
        }
        losses.push(val);
        let mut grads = tape.backward(loss);
        let g = bound.grads(&mut grads);
        opt.step(&mut enc.params.tensors_mut(), &g);
        if (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.e_steps {
            let fl = full_loss(enc)?;
            if best.as_ref().map(|(b, _)| fl < *b).unwrap_or(true) {
                best = Some((fl, enc.params.clone()));
            }
        }
    }
    if let Some((_, params)) = best {
        enc.params = params;
    }

    // project every render through the generator
    let mut gallery = Vec::with_capacity(cfg.m);
    for ((view, light), img) in draws.into_iter().zip(rendered) {
        let offset = enc.offset(&img)?;
        let w_total = w.zip(&offset, |a, b| a + b);
        let (projected, _) = gen.synthesize(&w_total)?;
        gallery.push(GalleryEntry {
            view,
            light,
            rendered: img,
            projected,
        });
    }
    Ok((gallery, losses))
}

/// Phase 3: jointly train V, L, D, A. Depth and albedo always consume the
/// original input image; viewpoint and lighting consume the pseudo samples.
pub fn step3_joint(
    image: &Tensor,
    pseudo: &[GalleryEntry],
    model: &mut VldaModel,
    f: &EmbeddingNet,
    cfg: &PipelineConfig,
) -> Result<Vec<f64>> {
    if pseudo.is_empty() {
        return Err(Error::argument("phase 3 needs a non-empty pseudo set"));
    }
    let r = model.resolution;
    image.check_shape(&[3, r, r], "step3 input")?;
    let camera = Camera::square(r);
    let border = border_color(image);
    let mut opt = Adam::with_betas(cfg.lr_vlda, 0.9, 0.999);
    let mut trajectory = Vec::with_capacity(cfg.step3_steps);
    let mut best: Option<(f64, crate::params::ParamSet)> = None;
    let warmup_steps = ((cfg.step3_steps as f64) * cfg.pose_warmup) as usize;
    let pose_idx: alloc::vec::Vec<usize> = model
        .params
        .iter()
        .enumerate()
        .filter(|(_, (n, _))| n.starts_with("v.") || n.starts_with("l."))
        .map(|(i, _)| i)
        .collect();

    let loss_for = |model: &VldaModel, sample: &GalleryEntry, trainable: bool| -> (Tape, Option<BoundParams>, f64, Option<Var>) {
        let tape = Tape::new();
        let bound = if trainable {
            BoundParams::trainable(&tape, &model.params)
        } else {
            BoundParams::constants(&tape, &model.params)
        };
        let iv = tape.constant(image.reshaped(&[1, 3, r, r]));
        let pv = tape.constant(sample.projected.reshaped(&[1, 3, r, r]));
        let fv = factor_vars_from_nets(&tape, model, &bound, iv, pv, r);
        let depth_var = fv.depth;
        let pred = render::render_g(&tape, fv, &camera, &border);
        let recon = reconstruction_loss_g(&tape, pred, &sample.projected, f, cfg.lambda_perc);
        let loss = if cfg.lambda_smooth > 0.0 {
            let smooth = render::smoothness_g(&tape, depth_var);
            tape.add(recon, tape.mul_c(smooth, cfg.lambda_smooth))
        } else {
            recon
        };
        let val = tape.value_scalar(loss);
        (tape, trainable.then_some(bound), val, Some(loss))
    };

    let full_loss = |model: &VldaModel| -> f64 {
        let mut total = 0.0;
        for s in pseudo {
            let (_, _, val, _) = loss_for(model, s, false);
            total += val;
        }
        total / pseudo.len() as f64
    };

    for step in 0..cfg.step3_steps {
        let sample = &pseudo[step % pseudo.len()];
        let (tape, bound, val, loss) = loss_for(model, sample, true);
        if !val.is_finite() {
            return Err(Error::numeric_with_trajectory(
                "phase 3 loss diverged",
                trajectory,
            ));
        }
        trajectory.push(val);
        let mut grads = tape.backward(loss.unwrap());
        let mut g = bound.unwrap().grads(&mut grads);
        if step < warmup_steps {
            for (i, slot) in g.iter_mut().enumerate() {
                if !pose_idx.contains(&i) {
                    *slot = None;
                }
            }
        }
        opt.step(&mut model.params.tensors_mut(), &g);
        if (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.step3_steps {
            let fl = full_loss(model);
            if best.as_ref().map(|(b, _)| fl < *b).unwrap_or(true) {
                best = Some((fl, model.params.clone()));
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(trajectory)
}

#[derive(Debug, Clone)]
pub struct InvertConfig {
    pub steps: usize,
    pub lr: f64,
    pub lambda_perc: f64,
    /// Mean-latent sample count for the starting point.
    pub mean_samples: usize,
    /// Reconstruction-loss threshold above which the result is flagged as
    /// likely out-of-manifold.
    pub flag_threshold: f64,
    /// Override the starting latent (used by fixed-point tests).
    pub init: Option<Tensor>,
    pub seed: u64,
}

impl Default for InvertConfig {
    fn default() -> Self {
        InvertConfig {
            steps: 150,
            lr: 0.05,
            lambda_perc: 0.5,
            mean_samples: 10_000,
            flag_threshold: 0.25,
            init: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InvertResult {
    pub w: Tensor,
    pub loss: f64,
    pub trajectory: Vec<f64>,
    pub flagged: bool,
}

/// Projects an image into the generator's latent space by gradient descent
/// from the mean latent, returning the best-loss iterate.
pub fn invert_real(
    image: &Tensor,
    gen: &Generator,
    f: &EmbeddingNet,
    cfg: &InvertConfig,
) -> Result<InvertResult> {
    let r = gen.cfg.resolution;
    image.check_shape(&[3, r, r], "inversion input")?;
    let mut w = match &cfg.init {
        Some(w0) => {
            w0.check_shape(&[gen.cfg.d_w], "inversion init")?;
            w0.clone()
        }
        None => gen.mean_w(cfg.mean_samples, derive_seed(cfg.seed, "invert-mean")),
    };
    let mut opt = Adam::with_betas(cfg.lr, 0.9, 0.999);
    let mut best = (f64::INFINITY, w.clone());
    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let tape = Tape::new();
        let wv = tape.param(w.reshaped(&[1, gen.cfg.d_w]));
        let bg = BoundParams::constants(&tape, &gen.params);
        let (img, _) = gen.synthesize_g(&tape, wv, &bg);
        let pred = tape.reshape(img, &[3, r, r]);
        let loss = reconstruction_loss_g(&tape, pred, image, f, cfg.lambda_perc);
        let val = tape.value_scalar(loss);
        if !val.is_finite() {
            return Err(Error::numeric_with_trajectory(
                "inversion diverged",
                trajectory,
            ));
        }
        trajectory.push(val);
        if val < best.0 {
            best = (val, w.clone());
        }
        let mut grads = tape.backward(loss);
        let g = grads
            .take(wv)
            .unwrap_or_else(|| Tensor::zeros(&[1, gen.cfg.d_w]));
        let mut wm = [&mut w];
        opt.step(&mut wm, &[Some(g)]);
    }
    // final candidate
    let (img, _) = gen.synthesize(&w)?;
    let final_loss = reconstruction_loss(&img, image, f, cfg.lambda_perc)?;
    trajectory.push(final_loss);
    if final_loss < best.0 {
        best = (final_loss, w.clone());
    }
    Ok(InvertResult {
        flagged: best.0 > cfg.flag_threshold,
        w: best.1,
        loss: best.0,
        trajectory,
    })
}

pub enum ReconInput {
    Latent(Tensor),
    Image(Tensor),
}

/// The full reconstruction: cycles of (phase 1, phase 2, phase 3) with a
/// per-cycle re-trained offset encoder. `model` should arrive prior-trained.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct(
    input: ReconInput,
    gen: &Generator,
    disc: &Discriminator,
    model: &mut VldaModel,
    f: &EmbeddingNet,
    cfg: &PipelineConfig,
    invert_cfg: &InvertConfig,
) -> Result<ReconstructionResult> {
    cfg.validate()?;
    let (image, w, flagged) = match input {
        ReconInput::Latent(w) => {
            w.check_shape(&[gen.cfg.d_w], "input latent")?;
            let (img, _) = gen.synthesize(&w)?;
            (img, w, false)
        }
        ReconInput::Image(img) => {
            let inv = invert_real(&img, gen, f, invert_cfg)?;
            (img, inv.w, inv.flagged)
        }
    };
    let r = model.resolution;
    image.check_shape(&[3, r, r], "reconstruction input")?;

    let mut gallery = Vec::with_capacity(cfg.cycles * cfg.m);
    let mut trajectories = Vec::with_capacity(cfg.cycles);
    let mut depth_snapshots = Vec::with_capacity(cfg.cycles);
    for cycle in 0..cfg.cycles {
        let mut tr = CycleTrajectories::default();
        let phase = |name: &str, e: Error| -> Error {
            match e {
                Error::Numeric { msg, trajectory } => Error::Numeric {
                    msg: alloc::format!("cycle {cycle} {name}: {msg}"),
                    trajectory,
                },
                other => other,
            }
        };
        let (d0, a0, t1) =
            step1_fit_albedo(&image, model, f, cfg).map_err(|e| phase("phase 1", e))?;
        tr.step1 = t1;
        let mut enc = InversionEncoder::init(
            r,
            gen.cfg.d_w,
            derive_seed_index(cfg.seed, "encoder-init", cycle as u64),
        )?;
        let (entries, t2) = step2_project(&d0, &a0, &w, gen, disc, &mut enc, cfg, cycle)
            .map_err(|e| phase("phase 2", e))?;
        tr.step2 = t2;
        let t3 =
            step3_joint(&image, &entries, model, f, cfg).map_err(|e| phase("phase 3", e))?;
        tr.step3 = t3;
        gallery.extend(entries);
        trajectories.push(tr);
        depth_snapshots.push(model.predict_factors(&image)?.depth);
    }
    let factors = model.predict_factors(&image)?;
    Ok(ReconstructionResult {
        factors,
        gallery,
        trajectories,
        depth_snapshots,
        w,
        inversion_flagged: flagged,
    })
}
