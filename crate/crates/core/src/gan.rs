//! Domain transfer: adversarial training of the miniature generator plus the
//! multi-resolution structure loss that anchors a fine-tuned model's early
//! blocks to its frozen base, keeping the two models' latent spaces aligned.

use alloc::string::String;
use alloc::vec::Vec;

use crate::disc::Discriminator;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::graph::{Tape, Var};
use crate::opt::Adam;
use crate::params::BoundParams;
use crate::rng::{self, derive_seed};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdvVariant {
    /// Non-saturating logistic losses with an R1 gradient penalty on real
    /// samples (the documented default; the literal minimax objective is
    /// unstable for this model family).
    NonSaturatingR1 { gamma: f64 },
    /// The literal two-player objective.
    Minimax,
}

impl Default for AdvVariant {
    fn default() -> Self {
        AdvVariant::NonSaturatingR1 { gamma: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct TransferConfig {
    /// Blocks covered by the structure loss.
    pub n_struct_blocks: usize,
    pub struct_weight: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub variant: AdvVariant,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            n_struct_blocks: 2,
            struct_weight: 1.0,
            lr_g: 2e-3,
            lr_d: 2e-3,
            batch_size: 8,
            steps: 400,
            variant: AdvVariant::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub l_str: f64,
}

/// Mean squared difference of the first `n` taps, averaged over those taps.
pub fn structure_loss(taps_base: &[Tensor], taps_trans: &[Tensor], n: usize) -> Result<f64> {
    if n == 0 || n > taps_base.len() || n > taps_trans.len() {
        return Err(Error::argument("structure loss block count out of range"));
    }
    let mut total = 0.0;
    for k in 0..n {
        if taps_base[k].shape() != taps_trans[k].shape() {
            return Err(Error::shape("tap shapes differ between models"));
        }
        let d = taps_base[k].zip(&taps_trans[k], |a, b| (a - b) * (a - b));
        total += d.mean();
    }
    Ok(total / n as f64)
}

/// Graph version: base taps are frozen values, transferred taps are nodes.
pub fn structure_loss_g(
    tape: &Tape,
    taps_base: &[Tensor],
    taps_trans: &[Var],
    n: usize,
) -> Result<Var> {
    if n == 0 || n > taps_base.len() || n > taps_trans.len() {
        return Err(Error::argument("structure loss block count out of range"));
    }
    let mut acc: Option<Var> = None;
    for k in 0..n {
        if taps_base[k].shape() != tape.shape_of(taps_trans[k]) {
            return Err(Error::shape("tap shapes differ between models"));
        }
        let base = tape.constant(taps_base[k].clone());
        let diff = tape.sub(taps_trans[k], base);
        let term = tape.mean_all(tape.mul(diff, diff));
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term),
        });
    }
    Ok(tape.mul_c(acc.unwrap(), 1.0 / n as f64))
}

/// Both players' losses from logit nodes. For the non-saturating variant the
/// discriminator loss is the mean of its real and fake halves, so a constant
/// zero logit yields ln 2 for both players. The R1 penalty is added
/// separately and never included in the reported loss.
pub fn adversarial_losses_g(
    tape: &Tape,
    logits_real: Var,
    logits_fake: Var,
    variant: AdvVariant,
) -> (Var, Var) {
    match variant {
        AdvVariant::NonSaturatingR1 { .. } => {
            let real_term = tape.mean_all(tape.softplus(tape.neg(logits_real)));
            let fake_term = tape.mean_all(tape.softplus(logits_fake));
            let loss_d = tape.mul_c(tape.add(real_term, fake_term), 0.5);
            let loss_g = tape.mean_all(tape.softplus(tape.neg(logits_fake)));
            (loss_d, loss_g)
        }
        AdvVariant::Minimax => {
            // D maximizes E log D(x) + E log(1 - D(G(z)));
            // G minimizes E log(1 - D(G(z))) = -softplus(logit).
            let real_term = tape.mean_all(tape.softplus(tape.neg(logits_real)));
            let fake_term = tape.mean_all(tape.softplus(logits_fake));
            let loss_d = tape.add(real_term, fake_term);
            let loss_g = tape.neg(tape.mean_all(tape.softplus(logits_fake)));
            (loss_d, loss_g)
        }
    }
}

fn batch_of(images: &[&Tensor]) -> Tensor {
    let s = images[0].shape();
    let mut shape = alloc::vec![images.len()];
    shape.extend_from_slice(s);
    let mut data = Vec::with_capacity(images.len() * images[0].numel());
    for img in images {
        data.extend_from_slice(img.data());
    }
    Tensor::new(shape, data)
}

/// Generates a fake image batch without building gradients.
fn fake_batch(gen: &Generator, z: &Tensor) -> Tensor {
    let tape = Tape::new();
    let bound = BoundParams::constants(&tape, &gen.params);
    let zv = tape.constant(z.clone());
    let w = gen.map_g(&tape, zv, &bound);
    let (img, _) = gen.synthesize_g(&tape, w, &bound);
    tape.value(img)
}

/// One discriminator update; returns the reported discriminator loss.
pub fn discriminator_update(
    disc: &mut Discriminator,
    opt: &mut Adam,
    gen: &Generator,
    real_batch: &Tensor,
    z_batch: &Tensor,
    variant: AdvVariant,
) -> Result<f64> {
    let r = disc.cfg.resolution;
    if real_batch.shape()[2] != r || real_batch.shape()[3] != r {
        return Err(Error::shape("real batch resolution != discriminator"));
    }
    if gen.cfg.resolution != r {
        return Err(Error::shape("generator resolution != discriminator"));
    }
    let fakes = fake_batch(gen, z_batch);

    let tape = Tape::new();
    let bound = BoundParams::trainable(&tape, &disc.params);
    let real = tape.param(real_batch.clone()); // leaf so R1 can differentiate
    let fake = tape.constant(fakes);
    let (logits_real, _) = disc.forward_g(&tape, real, &bound);
    let (logits_fake, _) = disc.forward_g(&tape, fake, &bound);
    let (loss_d, _) = adversarial_losses_g(&tape, logits_real, logits_fake, variant);

    let total = match variant {
        AdvVariant::NonSaturatingR1 { gamma } if gamma > 0.0 => {
            let s = tape.sum_all(logits_real);
            let gx = tape.grad_nodes(s, real);
            let n = real_batch.shape()[0] as f64;
            let r1 = tape.mul_c(tape.sum_all(tape.mul(gx, gx)), 1.0 / n);
            tape.add(loss_d, tape.mul_c(r1, gamma / 2.0))
        }
        _ => loss_d,
    };
    let reported = tape.value_scalar(loss_d);
    if !reported.is_finite() {
        return Err(Error::numeric("discriminator loss is not finite"));
    }
    let mut grads = tape.backward(total);
    let g = bound.grads(&mut grads);
    opt.step(&mut disc.params.tensors_mut(), &g);
    Ok(reported)
}

/// One generator update; returns (adversarial loss, structure loss). The
/// structure loss compares the first `n_struct_blocks` taps against the
/// frozen base model on the same z batch when `base` is given.
pub fn generator_update(
    gen: &mut Generator,
    opt: &mut Adam,
    disc: &Discriminator,
    z_batch: &Tensor,
    base: Option<(&Generator, usize, f64)>,
    variant: AdvVariant,
) -> Result<(f64, f64)> {
    let tape = Tape::new();
    let bound_g = BoundParams::trainable(&tape, &gen.params);
    let bound_d = BoundParams::constants(&tape, &disc.params);
    let zv = tape.constant(z_batch.clone());
    let w = gen.map_g(&tape, zv, &bound_g);
    let (img, taps) = gen.synthesize_g(&tape, w, &bound_g);
    let (logits_fake, _) = disc.forward_g(&tape, img, &bound_d);
    // loss_g only involves fake logits; reuse the loss builder with a dummy
    // real input
    let (_, loss_g) = adversarial_losses_g(&tape, logits_fake, logits_fake, variant);

    let (total, l_str_val) = if let Some((base_gen, n, weight)) = base {
        // same z through the frozen base, taps as constants
        let base_taps: Vec<Tensor> = {
            let bt = Tape::new();
            let bb = BoundParams::constants(&bt, &base_gen.params);
            let zb = bt.constant(z_batch.clone());
            let wb = base_gen.map_g(&bt, zb, &bb);
            let (_, taps_b) = base_gen.synthesize_g(&bt, wb, &bb);
            taps_b.iter().map(|t| bt.value(*t)).collect()
        };
        let l_str = structure_loss_g(&tape, &base_taps, &taps, n)?;
        let total = tape.add(loss_g, tape.mul_c(l_str, weight));
        (total, tape.value_scalar(l_str))
    } else {
        (loss_g, 0.0)
    };

    let reported = tape.value_scalar(loss_g);
    if !reported.is_finite() || !l_str_val.is_finite() {
        return Err(Error::numeric("generator loss is not finite"));
    }
    let mut grads = tape.backward(total);
    let g = bound_g.grads(&mut grads);
    opt.step(&mut gen.params.tensors_mut(), &g);
    Ok((reported, l_str_val))
}

/// One full adversarial step (discriminator then generator). Each player's
/// update sees the other as a constant.
pub fn adversarial_step(
    gen: &mut Generator,
    disc: &mut Discriminator,
    opt_g: &mut Adam,
    opt_d: &mut Adam,
    real_batch: &Tensor,
    z_batch: &Tensor,
    variant: AdvVariant,
) -> Result<(f64, f64)> {
    if real_batch.shape()[0] == 0 || z_batch.shape()[0] == 0 {
        return Err(Error::argument("empty batch"));
    }
    let loss_d = discriminator_update(disc, opt_d, gen, real_batch, z_batch, variant)?;
    let (loss_g, _) = generator_update(gen, opt_g, disc, z_batch, None, variant)?;
    Ok((loss_d, loss_g))
}

/// Adversarial training of (gen, disc) on a corpus of [3,R,R] images. When
/// `base` is provided the generator also minimizes the structure loss
/// against it (fine-tuning mode). The base is never modified.
pub fn train_gan(
    gen: &mut Generator,
    disc: &mut Discriminator,
    images: &[Tensor],
    cfg: &TransferConfig,
    base: Option<&Generator>,
    mut on_step: Option<&mut dyn FnMut(usize, &Generator, &Discriminator)>,
) -> Result<Vec<StepMetrics>> {
    if images.is_empty() {
        return Err(Error::config("empty training corpus"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if let Some(b) = base {
        if b.cfg != gen.cfg {
            return Err(Error::incompatible("base/transfer architecture mismatch"));
        }
        if !(1..=gen.cfg.blocks()).contains(&cfg.n_struct_blocks) {
            return Err(Error::config("n_struct_blocks out of range"));
        }
    }
    let mut opt_g = Adam::new(cfg.lr_g);
    let mut opt_d = Adam::new(cfg.lr_d);
    let mut rbatch = rng::rng_from_seed(derive_seed(cfg.seed, "gan-batches"));
    let mut rz = rng::rng_from_seed(derive_seed(cfg.seed, "gan-z"));
    let mut metrics = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let picks: Vec<&Tensor> = (0..cfg.batch_size)
            .map(|_| {
                let i = (rng::uniform(&mut rbatch, 0.0, images.len() as f64) as usize)
                    .min(images.len() - 1);
                &images[i]
            })
            .collect();
        let real = batch_of(&picks);
        let z = Tensor::randn(&[cfg.batch_size, gen.cfg.d_z], 1.0, &mut rz);
        let loss_d = discriminator_update(disc, &mut opt_d, gen, &real, &z, cfg.variant)?;
        let (loss_g, l_str) = generator_update(
            gen,
            &mut opt_g,
            disc,
            &z,
            base.map(|b| (b, cfg.n_struct_blocks, cfg.struct_weight)),
            cfg.variant,
        )?;
        metrics.push(StepMetrics {
            step,
            loss_d,
            loss_g,
            l_str,
        });
        if let Some(cb) = on_step.as_deref_mut() {
            cb(step, gen, disc);
        }
    }
    Ok(metrics)
}

/// Trains a generator/discriminator pair from scratch on a corpus.
pub fn train_base(
    images: &[Tensor],
    resolution: usize,
    cfg: &TransferConfig,
    provenance: &str,
) -> Result<(Generator, Discriminator, Vec<StepMetrics>)> {
    let mut gen = Generator::init(
        crate::generator::GenConfig::desk(resolution)?,
        derive_seed(cfg.seed, "gen-init"),
        provenance,
    )?;
    let mut disc = Discriminator::init(
        crate::disc::DiscConfig::desk(resolution)?,
        derive_seed(cfg.seed, "disc-init"),
    )?;
    let metrics = train_gan(&mut gen, &mut disc, images, cfg, None, None)?;
    Ok((gen, disc, metrics))
}

/// Fine-tunes a copy of `base` on a new-domain corpus with the structure
/// loss. The discriminator starts fresh (a transferred one would import
/// source-domain bias).
pub fn finetune(
    base: &Generator,
    images: &[Tensor],
    cfg: &TransferConfig,
    provenance: &str,
) -> Result<(Generator, Discriminator, Vec<StepMetrics>)> {
    if images.is_empty() {
        return Err(Error::config("empty fine-tuning corpus"));
    }
    let mut gen = base.clone();
    gen.provenance = String::from(provenance);
    let mut disc = Discriminator::init(
        crate::disc::DiscConfig::desk(base.cfg.resolution)?,
        derive_seed(cfg.seed, "disc-init"),
    )?;
    let metrics = train_gan(&mut gen, &mut disc, images, cfg, Some(base), None)?;
    Ok((gen, disc, metrics))
}

#[cfg(test)]
mod tests;
