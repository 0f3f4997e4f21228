use super::*;
use crate::disc::DiscConfig;
use crate::generator::GenConfig;
use crate::rng::rng_from_seed;

fn tiny_gen(seed: u64) -> Generator {
    Generator::init(GenConfig::desk(16).unwrap(), seed, "tiny").unwrap()
}

fn tiny_disc(seed: u64) -> Discriminator {
    Discriminator::init(DiscConfig::desk(16).unwrap(), seed).unwrap()
}

fn toy_images(n: usize, seed: u64) -> Vec<Tensor> {
    let mut r = rng_from_seed(seed);
    (0..n)
        .map(|_| Tensor::from_fn(&[3, 16, 16], |_| crate::rng::uniform(&mut r, 0.2, 0.8)))
        .collect()
}

#[test]
fn structure_loss_analytic_cases() {
    let mut r = rng_from_seed(1);
    let taps: Vec<Tensor> = (0..3)
        .map(|i| Tensor::randn(&[3, 4 << i, 4 << i], 1.0, &mut r))
        .collect();
    // identical taps -> 0
    assert_eq!(structure_loss(&taps, &taps, 2).unwrap(), 0.0);
    // constant offset c everywhere -> c^2
    let c = 0.37;
    let shifted: Vec<Tensor> = taps.iter().map(|t| t.map(|v| v + c)).collect();
    let got = structure_loss(&taps, &shifted, 3).unwrap();
    assert!((got - c * c).abs() < 1e-12);
}

#[test]
fn structure_loss_matches_scalar_loop_oracle() {
    let mut r = rng_from_seed(2);
    let a: Vec<Tensor> = (0..2)
        .map(|i| Tensor::randn(&[3, 4 << i, 4 << i], 1.0, &mut r))
        .collect();
    let b: Vec<Tensor> = (0..2)
        .map(|i| Tensor::randn(&[3, 4 << i, 4 << i], 1.0, &mut r))
        .collect();
    let got = structure_loss(&a, &b, 2).unwrap();
    let mut expect = 0.0;
    for k in 0..2 {
        let mut acc = 0.0;
        for (x, y) in a[k].data().iter().zip(b[k].data()) {
            acc += (x - y) * (x - y);
        }
        expect += acc / a[k].numel() as f64;
    }
    expect /= 2.0;
    assert!((got - expect).abs() < 1e-6);
}

#[test]
fn structure_loss_zero_iff_taps_identical() {
    let mut r = rng_from_seed(3);
    let a: Vec<Tensor> = (0..2)
        .map(|i| Tensor::randn(&[3, 4 << i, 4 << i], 1.0, &mut r))
        .collect();
    let mut b = a.clone();
    assert_eq!(structure_loss(&a, &b, 2).unwrap(), 0.0);
    b[1].data_mut()[7] += 1e-3;
    assert!(structure_loss(&a, &b, 2).unwrap() > 0.0);
}

#[test]
fn structure_loss_rejects_shape_mismatch() {
    let a = alloc::vec![Tensor::zeros(&[3, 4, 4])];
    let b = alloc::vec![Tensor::zeros(&[3, 8, 8])];
    assert!(matches!(
        structure_loss(&a, &b, 1),
        Err(Error::Shape(_))
    ));
}

#[test]
fn adversarial_losses_at_zero_logit_are_ln2() {
    let tape = Tape::new();
    let zeros = tape.constant(Tensor::zeros(&[4, 1]));
    let (ld, lg) = adversarial_losses_g(
        &tape,
        zeros,
        zeros,
        AdvVariant::NonSaturatingR1 { gamma: 1.0 },
    );
    let ln2 = core::f64::consts::LN_2;
    assert!((tape.value_scalar(ld) - ln2).abs() < 1e-12);
    assert!((tape.value_scalar(lg) - ln2).abs() < 1e-12);
}

#[test]
fn perfect_discriminator_has_vanishing_loss() {
    let tape = Tape::new();
    let real = tape.constant(Tensor::full(&[4, 1], 40.0));
    let fake = tape.constant(Tensor::full(&[4, 1], -40.0));
    let (ld, _) = adversarial_losses_g(
        &tape,
        real,
        fake,
        AdvVariant::NonSaturatingR1 { gamma: 1.0 },
    );
    assert!(tape.value_scalar(ld) < 1e-12);
    let (ld_mm, _) = adversarial_losses_g(&tape, real, fake, AdvVariant::Minimax);
    assert!(tape.value_scalar(ld_mm) < 1e-12);
}

#[test]
fn generator_step_decreases_its_loss_against_frozen_d() {
    let mut gen = tiny_gen(4);
    let disc = tiny_disc(5);
    let mut r = rng_from_seed(6);
    let z = Tensor::randn(&[4, 64], 1.0, &mut r);
    let variant = AdvVariant::NonSaturatingR1 { gamma: 1.0 };
    let loss_of = |g: &Generator| {
        let tape = Tape::new();
        let bg = BoundParams::constants(&tape, &g.params);
        let bd = BoundParams::constants(&tape, &disc.params);
        let zv = tape.constant(z.clone());
        let w = g.map_g(&tape, zv, &bg);
        let (img, _) = g.synthesize_g(&tape, w, &bg);
        let (lf, _) = disc.forward_g(&tape, img, &bd);
        let (_, lg) = adversarial_losses_g(&tape, lf, lf, variant);
        tape.value_scalar(lg)
    };
    let before = loss_of(&gen);
    let mut opt = Adam::new(2e-3);
    generator_update(&mut gen, &mut opt, &disc, &z, None, variant).unwrap();
    let after = loss_of(&gen);
    assert!(after < before, "loss should decrease: {before} -> {after}");
}

#[test]
fn zero_steps_is_identity() {
    let images = toy_images(4, 7);
    let base = tiny_gen(8);
    let cfg = TransferConfig {
        steps: 0,
        ..Default::default()
    };
    let (gt, _, metrics) = finetune(&base, &images, &cfg, "ft").unwrap();
    assert!(metrics.is_empty());
    assert_eq!(gt.params, base.params);
}

#[test]
fn finetune_leaves_base_untouched_and_decreases_structure_loss() {
    let images = toy_images(8, 9);
    let base = tiny_gen(10);
    let base_bytes = crate::params::encode(&base.to_archive());
    let cfg = TransferConfig {
        steps: 12,
        batch_size: 4,
        ..Default::default()
    };
    let (gt, _, metrics) = finetune(&base, &images, &cfg, "ft").unwrap();
    assert_eq!(
        crate::params::archive_hash(&base_bytes),
        crate::params::archive_hash(&crate::params::encode(&base.to_archive())),
        "base checkpoint hash changed"
    );
    assert_eq!(metrics.len(), 12);
    assert!(gt.params != base.params);
    for m in &metrics {
        assert!(m.loss_d.is_finite() && m.loss_g.is_finite() && m.l_str.is_finite());
    }
}

#[test]
fn training_is_seed_deterministic() {
    let images = toy_images(6, 11);
    let cfg = TransferConfig {
        steps: 5,
        batch_size: 4,
        seed: 77,
        ..Default::default()
    };
    let (g1, d1, m1) = train_base(&images, 16, &cfg, "a").unwrap();
    let (g2, d2, m2) = train_base(&images, 16, &cfg, "a").unwrap();
    assert_eq!(g1.params, g2.params);
    assert_eq!(d1.params, d2.params);
    assert_eq!(m1, m2);
}

#[test]
fn empty_corpus_is_config_error() {
    let base = tiny_gen(12);
    assert!(matches!(
        finetune(&base, &[], &TransferConfig::default(), "x"),
        Err(Error::Config(_))
    ));
}
