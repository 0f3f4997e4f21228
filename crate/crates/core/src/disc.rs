//! Small convolutional discriminator. No normalization layers: the forward
//! pass stays inside the op subset that supports building gradients as graph
//! nodes, which the R1 penalty needs. Intermediate stage activations are
//! exposed as feature taps for the inversion feature distance.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::generator::LRELU_SLOPE;
use crate::graph::{Tape, Var};
use crate::params::{Archive, BoundParams, ParamSet};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscConfig {
    pub resolution: usize,
    /// Channels after the stem and after each stride-2 stage.
    pub channels: Vec<usize>,
}

impl DiscConfig {
    pub fn desk(resolution: usize) -> Result<Self> {
        let channels = match resolution {
            16 => alloc::vec![16, 24, 32],
            32 => alloc::vec![16, 24, 32, 48],
            64 => alloc::vec![16, 24, 32, 48, 64],
            other => {
                return Err(Error::config(format!(
                    "unsupported discriminator resolution {other}"
                )))
            }
        };
        Ok(DiscConfig {
            resolution,
            channels,
        })
    }

    /// Spatial size after all stride-2 stages.
    pub fn final_size(&self) -> usize {
        self.resolution >> (self.channels.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub cfg: DiscConfig,
    pub params: ParamSet,
}

impl Discriminator {
    pub fn init(cfg: DiscConfig, seed: u64) -> Result<Self> {
        if cfg.channels.is_empty() || cfg.final_size() < 2 {
            return Err(Error::config("bad discriminator stage count"));
        }
        let mut r = rng::rng_from_seed(seed);
        let mut p = ParamSet::new();
        for (i, &c) in cfg.channels.iter().enumerate() {
            let cin = if i == 0 { 3 } else { cfg.channels[i - 1] };
            p.insert(
                &format!("d.s{i}.weight"),
                he(&[c, cin, 3, 3], cin * 9, &mut r),
            );
            p.insert(&format!("d.s{i}.bias"), Tensor::zeros(&[c]));
        }
        let flat = cfg.channels.last().unwrap() * cfg.final_size() * cfg.final_size();
        p.insert("d.out.weight", he(&[1, flat], flat, &mut r));
        p.insert("d.out.bias", Tensor::zeros(&[1]));
        Ok(Discriminator { cfg, params: p })
    }

    /// Logits [N,1] plus per-stage feature taps.
    pub fn forward_g(&self, tape: &Tape, images: Var, bound: &BoundParams) -> (Var, Vec<Var>) {
        let n = tape.shape_of(images)[0];
        let mut taps = Vec::with_capacity(self.cfg.channels.len());
        let mut x = images;
        for i in 0..self.cfg.channels.len() {
            let w = bound.get(&format!("d.s{i}.weight"));
            let b = bound.get(&format!("d.s{i}.bias"));
            let stride = if i == 0 { 1 } else { 2 };
            x = tape.lrelu(tape.add_axis1(tape.conv2d(x, w, stride, 1), b), LRELU_SLOPE);
            taps.push(x);
        }
        let fs = self.cfg.final_size();
        let flat = self.cfg.channels.last().unwrap() * fs * fs;
        let h = tape.reshape(x, &[n, flat]);
        let logits = tape.add_axis1(
            tape.matmul(h, bound.get("d.out.weight"), false, true),
            bound.get("d.out.bias"),
        );
        (logits, taps)
    }

    /// Value-level feature taps of one image [3,R,R].
    pub fn features(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let r = self.cfg.resolution;
        image.check_shape(&[3, r, r], "discriminator input")?;
        let tape = Tape::new();
        let bound = BoundParams::constants(&tape, &self.params);
        let img = tape.constant(image.reshaped(&[1, 3, r, r]));
        let (_, taps) = self.forward_g(&tape, img, &bound);
        Ok(taps.iter().map(|t| tape.value(*t)).collect())
    }

    /// Value-level logit of one image.
    pub fn logit(&self, image: &Tensor) -> Result<f64> {
        let r = self.cfg.resolution;
        image.check_shape(&[3, r, r], "discriminator input")?;
        let tape = Tape::new();
        let bound = BoundParams::constants(&tape, &self.params);
        let img = tape.constant(image.reshaped(&[1, 3, r, r]));
        let (logits, _) = self.forward_g(&tape, img, &bound);
        Ok(tape.value(logits).item())
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new("discriminator");
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
        a.params = self.params.clone();
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.kind != "discriminator" {
            return Err(Error::incompatible(format!(
                "expected a discriminator archive, found kind {}",
                a.kind
            )));
        }
        let cfg = DiscConfig {
            resolution: a.meta_usize("resolution")?,
            channels: a
                .meta
                .get("channels")
                .map(|s| s.split(',').filter_map(|t| t.parse().ok()).collect())
                .unwrap_or_default(),
        };
        let d = Discriminator {
            cfg: cfg.clone(),
            params: a.params.clone(),
        };
        let fresh = Discriminator::init(cfg, 0)?;
        if fresh.params.signature() != d.params.signature() {
            return Err(Error::incompatible(
                "parameter set does not match the declared architecture",
            ));
        }
        Ok(d)
    }
}

fn he(shape: &[usize], fan_in: usize, r: &mut Rng) -> Tensor {
    Tensor::randn(shape, crate::fm::sqrt(2.0 / fan_in as f64), r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_shapes_and_taps() {
        let d = Discriminator::init(DiscConfig::desk(32).unwrap(), 1).unwrap();
        let tape = Tape::new();
        let bound = BoundParams::constants(&tape, &d.params);
        let mut r = rng::rng_from_seed(2);
        let imgs = tape.constant(Tensor::randn(&[2, 3, 32, 32], 0.3, &mut r));
        let (logits, taps) = d.forward_g(&tape, imgs, &bound);
        assert_eq!(tape.shape_of(logits), &[2, 1]);
        assert_eq!(taps.len(), 4);
        assert_eq!(tape.shape_of(taps[0])[2], 32);
        assert_eq!(tape.shape_of(taps[3])[2], 4);
    }

    #[test]
    fn r1_gradient_path_works() {
        // the whole point of the architecture restriction: grad_nodes must
        // run through the discriminator forward pass
        let d = Discriminator::init(DiscConfig::desk(16).unwrap(), 3).unwrap();
        let tape = Tape::new();
        let bound = BoundParams::trainable(&tape, &d.params);
        let mut r = rng::rng_from_seed(4);
        let imgs = tape.param(Tensor::randn(&[2, 3, 16, 16], 0.3, &mut r));
        let (logits, _) = d.forward_g(&tape, imgs, &bound);
        let s = tape.sum_all(logits);
        let gx = tape.grad_nodes(s, imgs);
        let penalty = tape.mean_all(tape.mul(gx, gx));
        let mut g = tape.backward(penalty);
        // weights shape the input gradient; biases legitimately do not
        let grads = bound.grads(&mut g);
        for (i, (name, _)) in d.params.iter().enumerate() {
            if name.ends_with(".weight") {
                let gt = grads[i].as_ref();
                assert!(
                    gt.map(|t| t.all_finite() && t.l2_norm() > 0.0).unwrap_or(false),
                    "missing R1 gradient for {name}"
                );
            }
        }
    }

    #[test]
    fn archive_round_trip() {
        let d = Discriminator::init(DiscConfig::desk(16).unwrap(), 9).unwrap();
        let bytes = crate::params::encode(&d.to_archive());
        let d2 = Discriminator::from_archive(&crate::params::decode(&bytes).unwrap()).unwrap();
        assert_eq!(d, d2);
    }
}
