//! Identity embedding network and expression regressor, both trained on the
//! synthetic world. The classifier's penultimate layer is the identity
//! embedding f; the activations after the first downsampling stage are the
//! low-level features f_low. The same frozen embedding doubles as the
//! feature extractor for perceptual distance and distribution metrics, so
//! every reported number shares one provenance.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::generator::LRELU_SLOPE;
use crate::graph::{Tape, Var};
use crate::params::{Archive, BoundParams, ParamSet};
use crate::rng::{self, derive_seed};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedConfig {
    pub resolution: usize,
    /// Stem channels followed by one entry per stride-2 stage.
    pub channels: Vec<usize>,
    pub embed_dim: usize,
    pub n_classes: usize,
}

impl EmbedConfig {
    pub fn desk(resolution: usize, n_classes: usize) -> Result<Self> {
        let channels = match resolution {
            16 => alloc::vec![16, 24, 32],
            32 => alloc::vec![16, 24, 32, 48],
            64 => alloc::vec![16, 24, 32, 48, 64],
            other => {
                return Err(Error::config(format!(
                    "unsupported embedder resolution {other}"
                )))
            }
        };
        Ok(EmbedConfig {
            resolution,
            channels,
            embed_dim: 64,
            n_classes,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    pub cfg: EmbedConfig,
    pub params: ParamSet,
    pub trained: bool,
}

impl EmbeddingNet {
    pub fn init(cfg: EmbedConfig, seed: u64) -> Result<Self> {
        if cfg.channels.len() < 2 {
            return Err(Error::config("embedder needs at least one stage"));
        }
        let mut r = rng::rng_from_seed(seed);
        let mut p = ParamSet::new();
        for (i, &c) in cfg.channels.iter().enumerate() {
            let cin = if i == 0 { 3 } else { cfg.channels[i - 1] };
            p.insert(
                &format!("e.s{i}.weight"),
                Tensor::randn(&[c, cin, 3, 3], crate::fm::sqrt(2.0 / (cin * 9) as f64), &mut r),
            );
            p.insert(&format!("e.s{i}.bias"), Tensor::zeros(&[c]));
        }
        let last = *cfg.channels.last().unwrap();
        p.insert(
            "e.embed.weight",
            Tensor::randn(&[cfg.embed_dim, last], crate::fm::sqrt(1.0 / last as f64), &mut r),
        );
        p.insert("e.embed.bias", Tensor::zeros(&[cfg.embed_dim]));
        p.insert(
            "e.head.weight",
            Tensor::randn(
                &[cfg.n_classes, cfg.embed_dim],
                crate::fm::sqrt(1.0 / cfg.embed_dim as f64),
                &mut r,
            ),
        );
        p.insert("e.head.bias", Tensor::zeros(&[cfg.n_classes]));
        Ok(EmbeddingNet {
            cfg,
            params: p,
            trained: false,
        })
    }

    /// (class logits [N,C], embedding [N,D], low-level tap [N,c1,R/2,R/2]).
    pub fn forward_g(&self, tape: &Tape, images: Var, bound: &BoundParams) -> (Var, Var, Var) {
        let n = tape.shape_of(images)[0];
        let mut x = images;
        let mut f_low = None;
        for i in 0..self.cfg.channels.len() {
            let w = bound.get(&format!("e.s{i}.weight"));
            let b = bound.get(&format!("e.s{i}.bias"));
            let stride = if i == 0 { 1 } else { 2 };
            x = tape.lrelu(tape.add_axis1(tape.conv2d(x, w, stride, 1), b), LRELU_SLOPE);
            if i == 1 {
                f_low = Some(x); // after the first downsampling stage
            }
        }
        let pooled = tape.mean_hw(x);
        let embed = tape.add_axis1(
            tape.matmul(pooled, bound.get("e.embed.weight"), false, true),
            bound.get("e.embed.bias"),
        );
        let logits = tape.add_axis1(
            tape.matmul(
                tape.lrelu(embed, LRELU_SLOPE),
                bound.get("e.head.weight"),
                false,
                true,
            ),
            bound.get("e.head.bias"),
        );
        let _ = n;
        (logits, embed, f_low.expect("embedder needs >= 2 stages"))
    }

    /// Value-level identity embedding of one [3,R,R] image.
    pub fn embedding(&self, image: &Tensor) -> Result<Tensor> {
        let r = self.cfg.resolution;
        image.check_shape(&[3, r, r], "embedder input")?;
        let tape = Tape::new();
        let bound = BoundParams::constants(&tape, &self.params);
        let img = tape.constant(image.reshaped(&[1, 3, r, r]));
        let (_, embed, _) = self.forward_g(&tape, img, &bound);
        Ok(tape.value(embed).reshaped(&[self.cfg.embed_dim]))
    }

    /// Value-level low-level features of one image.
    pub fn low_features(&self, image: &Tensor) -> Result<Tensor> {
        let r = self.cfg.resolution;
        image.check_shape(&[3, r, r], "embedder input")?;
        let tape = Tape::new();
        let bound = BoundParams::constants(&tape, &self.params);
        let img = tape.constant(image.reshaped(&[1, 3, r, r]));
        let (_, _, low) = self.forward_g(&tape, img, &bound);
        Ok(tape.value(low))
    }

    pub fn predicted_class(&self, image: &Tensor) -> Result<usize> {
        let r = self.cfg.resolution;
        image.check_shape(&[3, r, r], "embedder input")?;
        let tape = Tape::new();
        let bound = BoundParams::constants(&tape, &self.params);
        let img = tape.constant(image.reshaped(&[1, 3, r, r]));
        let (logits, _, _) = self.forward_g(&tape, img, &bound);
        let v = tape.value(logits);
        let mut best = 0;
        for k in 1..v.numel() {
            if v.data()[k] > v.data()[best] {
                best = k;
            }
        }
        Ok(best)
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new("embedder");
        a.meta
            .insert("resolution".into(), self.cfg.resolution.to_string());
        a.meta.insert(
            "channels".into(),
            self.cfg
                .channels
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        a.meta
            .insert("embed_dim".into(), self.cfg.embed_dim.to_string());
        a.meta
            .insert("n_classes".into(), self.cfg.n_classes.to_string());
        a.meta
            .insert("trained".into(), (self.trained as u8).to_string());
        a.params = self.params.clone();
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.kind != "embedder" {
            return Err(Error::incompatible(format!(
                "expected an embedder archive, found kind {}",
                a.kind
            )));
        }
        let cfg = EmbedConfig {
            resolution: a.meta_usize("resolution")?,
            channels: a
                .meta
                .get("channels")
                .map(|s| s.split(',').filter_map(|t| t.parse().ok()).collect())
                .unwrap_or_default(),
            embed_dim: a.meta_usize("embed_dim")?,
            n_classes: a.meta_usize("n_classes")?,
        };
        let trained = a.meta_usize("trained")? != 0;
        let net = EmbeddingNet {
            cfg: cfg.clone(),
            params: a.params.clone(),
            trained,
        };
        let fresh = EmbeddingNet::init(cfg, 0)?;
        if fresh.params.signature() != net.params.signature() {
            return Err(Error::incompatible(
                "parameter set does not match the declared architecture",
            ));
        }
        Ok(net)
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            steps: 500,
            batch_size: 16,
            lr: 3e-3,
            seed: 0,
        }
    }
}

fn batch_images(pool: &[(Tensor, usize)], picks: &[usize]) -> (Tensor, Vec<usize>) {
    let s = pool[0].0.shape();
    let mut shape = alloc::vec![picks.len()];
    shape.extend_from_slice(s);
    let mut data = Vec::with_capacity(picks.len() * pool[0].0.numel());
    let mut labels = Vec::with_capacity(picks.len());
    for &i in picks {
        data.extend_from_slice(pool[i].0.data());
        labels.push(pool[i].1);
    }
    (Tensor::new(shape, data), labels)
}

/// Cross-entropy from logits with a detached row-max shift (exact gradient).
pub fn cross_entropy_g(tape: &Tape, logits: Var, labels: &[usize]) -> Var {
    let v = tape.value(logits);
    let (n, c) = (v.shape()[0], v.shape()[1]);
    assert_eq!(labels.len(), n);
    let rowmax = Tensor::from_fn(&[n], |i| {
        v.data()[i * c..(i + 1) * c]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let shifted = tape.sub_rows(logits, tape.constant(rowmax));
    let lse = tape.ln(tape.sum_rows(tape.exp(shifted)));
    let truth = tape.gather_cols(shifted, labels.to_vec());
    tape.mean_all(tape.sub(lse, truth))
}

/// Trains the identity classifier; returns per-step cross-entropy.
pub fn train_identity_classifier(
    samples: &[(Tensor, usize)],
    cfg: EmbedConfig,
    tc: &ClassifierTrainConfig,
) -> Result<(EmbeddingNet, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::config("empty classifier training set"));
    }
    let mut net = EmbeddingNet::init(cfg, derive_seed(tc.seed, "embed-init"))?;
    let mut opt = crate::opt::Adam::with_betas(tc.lr, 0.9, 0.999);
    let mut rb = rng::rng_from_seed(derive_seed(tc.seed, "embed-batches"));
    let mut losses = Vec::with_capacity(tc.steps);
    for _ in 0..tc.steps {
        let picks: Vec<usize> = (0..tc.batch_size)
            .map(|_| {
                (rng::uniform(&mut rb, 0.0, samples.len() as f64) as usize)
                    .min(samples.len() - 1)
            })
            .collect();
        let (batch, labels) = batch_images(samples, &picks);
        let tape = Tape::new();
        let bound = BoundParams::trainable(&tape, &net.params);
        let imgs = tape.constant(batch);
        let (logits, _, _) = net.forward_g(&tape, imgs, &bound);
        let loss = cross_entropy_g(&tape, logits, &labels);
        let val = tape.value_scalar(loss);
        if !val.is_finite() {
            return Err(Error::numeric_with_trajectory(
                "classifier loss diverged",
                losses,
            ));
        }
        losses.push(val);
        let mut grads = tape.backward(loss);
        let g = bound.grads(&mut grads);
        opt.step(&mut net.params.tensors_mut(), &g);
    }
    net.trained = true;
    Ok((net, losses))
}

fn cosine(a: &Tensor, b: &Tensor) -> f64 {
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    dot / (a.l2_norm() * b.l2_norm()).max(1e-12)
}

/// Fraction of (anchor, same-id, other-id) triples where the same-identity
/// pair is closer in cosine. The trained-embedder contract requires >= 0.9
/// on held-out samples.
pub fn pair_accuracy(
    net: &EmbeddingNet,
    holdout: &[(Tensor, usize)],
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if !net.trained {
        return Err(Error::config("embedder is not trained"));
    }
    let embeds: Vec<(Tensor, usize)> = holdout
        .iter()
        .map(|(img, id)| Ok((net.embedding(img)?, *id)))
        .collect::<Result<_>>()?;
    let mut r = rng::rng_from_seed(seed);
    let mut hits = 0usize;
    let mut done = 0usize;
    let mut guard = 0usize;
    while done < trials && guard < trials * 100 {
        guard += 1;
        let pick = |r: &mut rng::Rng| {
            (rng::uniform(r, 0.0, embeds.len() as f64) as usize).min(embeds.len() - 1)
        };
        let a = pick(&mut r);
        let b = pick(&mut r);
        let c = pick(&mut r);
        if a == b || embeds[a].1 != embeds[b].1 || embeds[c].1 == embeds[a].1 {
            continue;
        }
        let same = cosine(&embeds[a].0, &embeds[b].0);
        let cross = cosine(&embeds[a].0, &embeds[c].0);
        if same > cross {
            hits += 1;
        }
        done += 1;
    }
    if done == 0 {
        return Err(Error::degenerate("no valid identity triples in holdout"));
    }
    Ok(hits as f64 / done as f64)
}

/// Median cross-identity embedding distance over a sample of pairs.
pub fn cross_identity_median_distance(
    net: &EmbeddingNet,
    samples: &[(Tensor, usize)],
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    let embeds: Vec<(Tensor, usize)> = samples
        .iter()
        .map(|(img, id)| Ok((net.embedding(img)?, *id)))
        .collect::<Result<_>>()?;
    let mut r = rng::rng_from_seed(seed);
    let mut dists = Vec::new();
    let mut guard = 0;
    while dists.len() < pairs && guard < pairs * 100 {
        guard += 1;
        let a = (rng::uniform(&mut r, 0.0, embeds.len() as f64) as usize).min(embeds.len() - 1);
        let b = (rng::uniform(&mut r, 0.0, embeds.len() as f64) as usize).min(embeds.len() - 1);
        if embeds[a].1 == embeds[b].1 {
            continue;
        }
        let d: f64 = embeds[a]
            .0
            .data()
            .iter()
            .zip(embeds[b].0.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        dists.push(d);
    }
    if dists.is_empty() {
        return Err(Error::degenerate("no cross-identity pairs"));
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(dists[dists.len() / 2])
}

/// Expression regressor: same encoder shape, one tanh output.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprRegressor {
    pub net: EmbeddingNet,
}

impl ExprRegressor {
    pub fn init(resolution: usize, seed: u64) -> Result<Self> {
        let cfg = EmbedConfig {
            n_classes: 1,
            ..EmbedConfig::desk(resolution, 1)?
        };
        Ok(ExprRegressor {
            net: EmbeddingNet::init(cfg, seed)?,
        })
    }

    pub fn predict_g(&self, tape: &Tape, images: Var, bound: &BoundParams) -> Var {
        let (raw, _, _) = self.net.forward_g(tape, images, bound);
        tape.tanh(raw)
    }

    pub fn predict(&self, image: &Tensor) -> Result<f64> {
        let r = self.net.cfg.resolution;
        image.check_shape(&[3, r, r], "regressor input")?;
        let tape = Tape::new();
        let bound = BoundParams::constants(&tape, &self.net.params);
        let img = tape.constant(image.reshaped(&[1, 3, r, r]));
        Ok(tape.value(self.predict_g(&tape, img, &bound)).item())
    }
}

/// Trains the expression regressor by mean squared error.
pub fn train_expression_regressor(
    samples: &[(Tensor, f64)],
    resolution: usize,
    tc: &ClassifierTrainConfig,
) -> Result<(ExprRegressor, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::config("empty regressor training set"));
    }
    let mut reg = ExprRegressor::init(resolution, derive_seed(tc.seed, "expr-init"))?;
    let mut opt = crate::opt::Adam::with_betas(tc.lr, 0.9, 0.999);
    let mut rb = rng::rng_from_seed(derive_seed(tc.seed, "expr-batches"));
    let mut losses = Vec::with_capacity(tc.steps);
    for _ in 0..tc.steps {
        let picks: Vec<usize> = (0..tc.batch_size)
            .map(|_| {
                (rng::uniform(&mut rb, 0.0, samples.len() as f64) as usize)
                    .min(samples.len() - 1)
            })
            .collect();
        let s = samples[0].0.shape();
        let mut shape = alloc::vec![picks.len()];
        shape.extend_from_slice(s);
        let mut data = Vec::new();
        let mut targets = Vec::new();
        for &i in &picks {
            data.extend_from_slice(samples[i].0.data());
            targets.push(samples[i].1);
        }
        let batch = Tensor::new(shape, data);
        let tape = Tape::new();
        let bound = BoundParams::trainable(&tape, &reg.net.params);
        let imgs = tape.constant(batch);
        let pred = reg.predict_g(&tape, imgs, &bound);
        let tgt = tape.constant(Tensor::new(
            alloc::vec![picks.len(), 1],
            targets,
        ));
        let diff = tape.sub(pred, tgt);
        let loss = tape.mean_all(tape.mul(diff, diff));
        let val = tape.value_scalar(loss);
        if !val.is_finite() {
            return Err(Error::numeric_with_trajectory(
                "regressor loss diverged",
                losses,
            ));
        }
        losses.push(val);
        let mut grads = tape.backward(loss);
        let g = bound.grads(&mut grads);
        opt.step(&mut reg.net.params.tensors_mut(), &g);
    }
    reg.net.trained = true;
    Ok((reg, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_sample, SamplingRanges, Style};

    fn labeled_pool(n: usize, res: usize, seed: u64) -> Vec<(Tensor, usize)> {
        let ranges = SamplingRanges {
            n_identities: 4,
            ..Default::default()
        };
        (0..n)
            .map(|i| {
                let s = generate_sample(seed, i, &ranges, Style::Plain, res).unwrap();
                (s.image, s.spec.identity_id)
            })
            .collect()
    }

    #[test]
    fn cross_entropy_matches_manual_computation() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::new(
            alloc::vec![2, 3],
            alloc::vec![1.0, 2.0, 0.5, -1.0, 0.0, 3.0],
        ));
        let loss = cross_entropy_g(&tape, logits, &[1, 2]);
        let manual = {
            let row = |l: [f64; 3], t: usize| {
                let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = (l.iter().map(|x| crate::fm::exp(x - m)).sum::<f64>()).ln() + m;
                lse - l[t]
            };
            0.5 * (row([1.0, 2.0, 0.5], 1) + row([-1.0, 0.0, 3.0], 2))
        };
        assert!((tape.value_scalar(loss) - manual).abs() < 1e-12);
    }

    #[test]
    fn classifier_learns_synthetic_identities() {
        let pool = labeled_pool(48, 16, 100);
        let holdout = labeled_pool(24, 16, 200);
        let cfg = EmbedConfig::desk(16, 4).unwrap();
        let tc = ClassifierTrainConfig {
            steps: 120,
            batch_size: 12,
            lr: 4e-3,
            seed: 5,
        };
        let (net, losses) = train_identity_classifier(&pool, cfg, &tc).unwrap();
        assert!(losses[losses.len() - 1] < losses[0], "loss did not decrease");
        let acc = pair_accuracy(&net, &holdout, 200, 7).unwrap();
        assert!(acc >= 0.9, "pair accuracy {acc}");
    }

    #[test]
    fn untrained_embedder_rejected_by_pair_accuracy() {
        let net = EmbeddingNet::init(EmbedConfig::desk(16, 4).unwrap(), 1).unwrap();
        let pool = labeled_pool(4, 16, 300);
        assert!(matches!(
            pair_accuracy(&net, &pool, 10, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn archive_round_trip() {
        let net = EmbeddingNet::init(EmbedConfig::desk(16, 4).unwrap(), 2).unwrap();
        let bytes = crate::params::encode(&net.to_archive());
        let back = EmbeddingNet::from_archive(&crate::params::decode(&bytes).unwrap()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn regressor_tracks_expression() {
        let ranges = SamplingRanges {
            n_identities: 2,
            rot_max: [0.0; 3],
            trans_max: [0.0; 3],
            ..Default::default()
        };
        let pool: Vec<(Tensor, f64)> = (0..40)
            .map(|i| {
                let s = generate_sample(400, i, &ranges, Style::Plain, 16).unwrap();
                (s.image, s.spec.expression)
            })
            .collect();
        let tc = ClassifierTrainConfig {
            steps: 150,
            batch_size: 10,
            lr: 4e-3,
            seed: 3,
        };
        let (reg, losses) = train_expression_regressor(&pool, 16, &tc).unwrap();
        assert!(losses[losses.len() - 1] < 0.5 * losses[0]);
        // monotone response on a held-out identity
        let mk = |e: f64| {
            let mut spec =
                crate::world::sample_scene(999, &ranges, Style::Plain).unwrap();
            spec.expression = e;
            spec.viewpoint = [0.0; 6];
            crate::world::render_scene(&spec, 16).unwrap().image
        };
        let lo = reg.predict(&mk(-0.9)).unwrap();
        let hi = reg.predict(&mk(0.9)).unwrap();
        assert!(hi > lo, "regressor not increasing: {lo} vs {hi}");
    }
}
