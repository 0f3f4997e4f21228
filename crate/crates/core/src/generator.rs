//! Miniature style-based generator: an MLP mapping network z -> w whose last
//! layer is exactly affine (so its weight matrix is extractable for
//! factorization), and K progressive synthesis blocks with per-block style
//! modulation and RGB skip outputs. The per-block RGB accumulations are the
//! taps the structure loss compares; the final image is the sigmoid of the
//! last tap.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Tape, Var};
use crate::params::{Archive, BoundParams, ParamSet};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

pub const LRELU_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenConfig {
    pub resolution: usize,
    pub d_z: usize,
    pub d_w: usize,
    /// 1 = single affine layer; 2 = one hidden layer + affine output.
    pub mapping_layers: usize,
    /// Feature channels per synthesis block; length K with 4*2^(K-1) == resolution.
    pub channels: Vec<usize>,
}

impl GenConfig {
    pub fn desk(resolution: usize) -> Result<Self> {
        let k = match resolution {
            16 => 3,
            32 => 4,
            64 => 5,
            other => {
                return Err(Error::config(format!(
                    "unsupported generator resolution {other}"
                )))
            }
        };
        let full = [64, 48, 32, 24, 16];
        Ok(GenConfig {
            resolution,
            d_z: 64,
            d_w: 64,
            mapping_layers: 2,
            channels: full[..k].to_vec(),
        })
    }

    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.blocks();
        if k == 0 || 4 * (1 << (k - 1)) != self.resolution {
            return Err(Error::config(
                "channel count does not match resolution (need 4 * 2^(K-1))",
            ));
        }
        if !matches!(self.mapping_layers, 1 | 2) {
            return Err(Error::config("mapping_layers must be 1 or 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub cfg: GenConfig,
    pub params: ParamSet,
    pub provenance: String,
}

/// Per-block RGB skip outputs; entry k-1 has spatial size 4*2^(k-1).
pub type SynthesisTaps = Vec<Tensor>;

impl Generator {
    pub fn init(cfg: GenConfig, seed: u64, provenance: &str) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::rng_from_seed(seed);
        let mut p = ParamSet::new();
        let dh = cfg.d_z;
        if cfg.mapping_layers == 2 {
            p.insert(
                "map.fc0.weight",
                he_init(&[dh, cfg.d_z], cfg.d_z, &mut r),
            );
            p.insert("map.fc0.bias", Tensor::zeros(&[dh]));
        }
        p.insert("map.out.weight", he_init(&[cfg.d_w, dh], dh, &mut r));
        p.insert("map.out.bias", Tensor::zeros(&[cfg.d_w]));
        for (bi, &ck) in cfg.channels.iter().enumerate() {
            let k = bi + 1;
            let cin = if bi == 0 { ck } else { cfg.channels[bi - 1] };
            if bi == 0 {
                p.insert("syn.b1.const", Tensor::randn(&[ck, 4, 4], 1.0, &mut r));
            }
            p.insert(
                &format!("syn.b{k}.conv.weight"),
                he_init(&[ck, cin, 3, 3], cin * 9, &mut r),
            );
            p.insert(&format!("syn.b{k}.conv.bias"), Tensor::zeros(&[ck]));
            p.insert(
                &format!("syn.b{k}.style.weight"),
                Tensor::randn(&[2 * ck, cfg.d_w], 0.05, &mut r),
            );
            p.insert(&format!("syn.b{k}.style.bias"), Tensor::zeros(&[2 * ck]));
            p.insert(
                &format!("syn.b{k}.rgb.weight"),
                he_init(&[3, ck, 1, 1], ck, &mut r),
            );
            p.insert(&format!("syn.b{k}.rgb.bias"), Tensor::zeros(&[3]));
        }
        Ok(Generator {
            cfg,
            params: p,
            provenance: provenance.to_string(),
        })
    }

    /// Graph-level mapping network, batch [N, d_z] -> [N, d_w].
    pub fn map_g(&self, tape: &Tape, z: Var, bound: &BoundParams) -> Var {
        let h = if self.cfg.mapping_layers == 2 {
            let w0 = bound.get("map.fc0.weight");
            let b0 = bound.get("map.fc0.bias");
            tape.lrelu(
                tape.add_axis1(tape.matmul(z, w0, false, true), b0),
                LRELU_SLOPE,
            )
        } else {
            z
        };
        let a = bound.get("map.out.weight");
        let b = bound.get("map.out.bias");
        tape.add_axis1(tape.matmul(h, a, false, true), b)
    }

    /// Graph-level synthesis, w [N, d_w] -> (pre-sigmoid image-var list).
    /// Returns (image, taps).
    pub fn synthesize_g(&self, tape: &Tape, w: Var, bound: &BoundParams) -> (Var, Vec<Var>) {
        let n = tape.shape_of(w)[0];
        let mut taps = Vec::with_capacity(self.cfg.blocks());
        let mut x = tape.repeat_n(bound.get("syn.b1.const"), n);
        let mut rgb: Option<Var> = None;
        for (bi, &ck) in self.cfg.channels.iter().enumerate() {
            let k = bi + 1;
            if bi > 0 {
                x = tape.upsample2x(x);
            }
            let cw = bound.get(&format!("syn.b{k}.conv.weight"));
            let cb = bound.get(&format!("syn.b{k}.conv.bias"));
            x = tape.add_axis1(tape.conv2d(x, cw, 1, 1), cb);
            x = tape.instance_norm(x, 1e-5);
            let sw = bound.get(&format!("syn.b{k}.style.weight"));
            let sb = bound.get(&format!("syn.b{k}.style.bias"));
            let style = tape.add_axis1(tape.matmul(w, sw, false, true), sb);
            let scale = tape.add_c(tape.slice(style, 1, 0, ck), 1.0);
            let shift = tape.slice(style, 1, ck, ck);
            x = tape.add_nc(tape.mul_nc(x, scale), shift);
            x = tape.lrelu(x, LRELU_SLOPE);
            let rw = bound.get(&format!("syn.b{k}.rgb.weight"));
            let rb = bound.get(&format!("syn.b{k}.rgb.bias"));
            let rgb_k = tape.add_axis1(tape.conv2d(x, rw, 1, 0), rb);
            rgb = Some(match rgb {
                None => rgb_k,
                Some(prev) => tape.add(tape.upsample2x(prev), rgb_k),
            });
            taps.push(rgb.unwrap());
        }
        let image = tape.sigmoid(rgb.unwrap());
        (image, taps)
    }

    /// Value-level mapping of a single latent.
    pub fn map_latent(&self, z: &Tensor) -> Result<Tensor> {
        if z.numel() != self.cfg.d_z {
            return Err(Error::shape(format!(
                "latent length {} != d_z {}",
                z.numel(),
                self.cfg.d_z
            )));
        }
        let tape = Tape::new();
        let bound = BoundParams::constants(&tape, &self.params);
        let zv = tape.constant(z.reshaped(&[1, self.cfg.d_z]));
        let w = self.map_g(&tape, zv, &bound);
        Ok(tape.value(w).reshaped(&[self.cfg.d_w]))
    }

    /// Hidden activation of the mapping network (input to the final affine).
    pub fn mapping_hidden(&self, z: &Tensor) -> Tensor {
        if self.cfg.mapping_layers == 1 {
            return z.clone();
        }
        let w0 = self.params.get("map.fc0.weight").unwrap();
        let b0 = self.params.get("map.fc0.bias").unwrap();
        let dh = b0.numel();
        let mut h = Tensor::zeros(&[dh]);
        for i in 0..dh {
            let mut acc = b0.data()[i];
            for j in 0..self.cfg.d_z {
                acc += w0.data()[i * self.cfg.d_z + j] * z.data()[j];
            }
            h.data_mut()[i] = if acc > 0.0 { acc } else { LRELU_SLOPE * acc };
        }
        h
    }

    /// The exact final affine w = A h + b.
    pub fn mapping_final(&self, h: &Tensor) -> Tensor {
        let a = self.params.get("map.out.weight").unwrap();
        let b = self.params.get("map.out.bias").unwrap();
        let dw = self.cfg.d_w;
        let dh = h.numel();
        Tensor::from_fn(&[dw], |i| {
            let mut acc = b.data()[i];
            for j in 0..dh {
                acc += a.data()[i * dh + j] * h.data()[j];
            }
            acc
        })
    }

    /// The weight matrix handed to closed-form factorization.
    pub fn final_affine_weight(&self) -> &Tensor {
        self.params.get("map.out.weight").unwrap()
    }

    /// Concatenated per-block style-affine weights (the alternative
    /// factorization target), stacked into [sum(2 c_k), d_w].
    pub fn style_affine_stack(&self) -> Tensor {
        let rows: usize = self.cfg.channels.iter().map(|c| 2 * c).sum();
        let mut out = Tensor::zeros(&[rows, self.cfg.d_w]);
        let mut off = 0;
        for (bi, &ck) in self.cfg.channels.iter().enumerate() {
            let w = self
                .params
                .get(&format!("syn.b{}.style.weight", bi + 1))
                .unwrap();
            out.data_mut()[off * self.cfg.d_w..(off + 2 * ck) * self.cfg.d_w]
                .copy_from_slice(w.data());
            off += 2 * ck;
        }
        out
    }

    /// Value-level synthesis of a single latent w.
    pub fn synthesize(&self, w: &Tensor) -> Result<(Tensor, SynthesisTaps)> {
        if w.numel() != self.cfg.d_w {
            return Err(Error::shape(format!(
                "latent length {} != d_w {}",
                w.numel(),
                self.cfg.d_w
            )));
        }
        let tape = Tape::new();
        let bound = BoundParams::constants(&tape, &self.params);
        let wv = tape.constant(w.reshaped(&[1, self.cfg.d_w]));
        let (img, taps) = self.synthesize_g(&tape, wv, &bound);
        let r = self.cfg.resolution;
        let image = tape.value(img).reshaped(&[3, r, r]);
        let taps = taps
            .iter()
            .enumerate()
            .map(|(bi, t)| {
                let s = 4usize << bi;
                tape.value(*t).reshaped(&[3, s, s])
            })
            .collect();
        Ok((image, taps))
    }

    /// Full value-level pass z -> (image, taps).
    pub fn generate_from_z(&self, z: &Tensor) -> Result<(Tensor, SynthesisTaps)> {
        let w = self.map_latent(z)?;
        self.synthesize(&w)
    }

    /// Mean w over `n` standard-normal z draws (the inversion start point).
    pub fn mean_w(&self, n: usize, seed: u64) -> Tensor {
        let mut r = rng::rng_from_seed(seed);
        let mut acc = Tensor::zeros(&[self.cfg.d_w]);
        for _ in 0..n {
            let z = Tensor::randn(&[self.cfg.d_z], 1.0, &mut r);
            let w = self.map_latent(&z).unwrap();
            acc.add_in_place(&w);
        }
        acc.scale_in_place(1.0 / n as f64);
        acc
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new("generator");
        a.meta
            .insert("resolution".into(), self.cfg.resolution.to_string());
        a.meta.insert("d_z".into(), self.cfg.d_z.to_string());
        a.meta.insert("d_w".into(), self.cfg.d_w.to_string());
        a.meta
            .insert("mapping_layers".into(), self.cfg.mapping_layers.to_string());
        a.meta.insert(
            "channels".into(),
            self.cfg
                .channels
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        a.meta.insert("provenance".into(), self.provenance.clone());
        a.params = self.params.clone();
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.kind != "generator" {
            return Err(Error::incompatible(format!(
                "expected a generator archive, found kind {}",
                a.kind
            )));
        }
        let cfg = GenConfig {
            resolution: a.meta_usize("resolution")?,
            d_z: a.meta_usize("d_z")?,
            d_w: a.meta_usize("d_w")?,
            mapping_layers: a.meta_usize("mapping_layers")?,
            channels: a
                .meta
                .get("channels")
                .map(|s| s.split(',').filter_map(|t| t.parse().ok()).collect())
                .unwrap_or_default(),
        };
        cfg.validate()?;
        let g = Generator {
            cfg,
            params: a.params.clone(),
            provenance: a.meta.get("provenance").cloned().unwrap_or_default(),
        };
        // structural check: an identically-configured fresh init must have
        // the same parameter signature
        let fresh = Generator::init(g.cfg.clone(), 0, "")?;
        if fresh.params.signature() != g.params.signature() {
            return Err(Error::incompatible(
                "parameter set does not match the declared architecture",
            ));
        }
        Ok(g)
    }
}

fn he_init(shape: &[usize], fan_in: usize, r: &mut Rng) -> Tensor {
    Tensor::randn(shape, crate::fm::sqrt(2.0 / fan_in as f64), r)
}

#[derive(Debug, Clone)]
pub enum BlendSchedule {
    /// One beta for every parameter.
    Uniform(f64),
    /// Layer swapping: beta 0 for blocks <= split, 1 above; the mapping
    /// network follows block 1.
    LayerSwap { split: usize },
    /// Explicit per-block betas (length K); the mapping network uses entry 0.
    PerBlock(Vec<f64>),
}

impl BlendSchedule {
    fn beta_for(&self, name: &str, k_blocks: usize) -> Result<f64> {
        let block = if let Some(rest) = name.strip_prefix("syn.b") {
            rest.split('.').next().and_then(|s| s.parse::<usize>().ok())
        } else {
            Some(1) // mapping network follows block 1
        }
        .ok_or_else(|| Error::incompatible(format!("unparsable parameter name {name}")))?;
        match self {
            BlendSchedule::Uniform(b) => Ok(*b),
            BlendSchedule::LayerSwap { split } => Ok(if block <= *split { 0.0 } else { 1.0 }),
            BlendSchedule::PerBlock(v) => {
                if v.len() != k_blocks {
                    return Err(Error::incompatible(format!(
                        "per-block schedule has {} entries for {} blocks",
                        v.len(),
                        k_blocks
                    )));
                }
                Ok(v[block - 1])
            }
        }
    }
}

/// Per-parameter blend p = (1-beta_k) * base + beta_k * trans. The endpoints
/// reproduce the inputs bitwise.
pub fn interpolate_models(
    base: &Generator,
    trans: &Generator,
    schedule: &BlendSchedule,
) -> Result<Generator> {
    if base.cfg != trans.cfg {
        return Err(Error::incompatible(
            "generator architectures differ; cannot interpolate",
        ));
    }
    if base.params.signature() != trans.params.signature() {
        return Err(Error::incompatible("parameter sets differ"));
    }
    let mut params = ParamSet::new();
    for (name, pb) in base.params.iter() {
        let pt = trans.params.expect(name)?;
        let beta = schedule.beta_for(name, base.cfg.blocks())?;
        let blended = if beta == 0.0 {
            pb.clone()
        } else if beta == 1.0 {
            pt.clone()
        } else {
            pb.zip(pt, |a, b| (1.0 - beta) * a + beta * b)
        };
        params.insert(name, blended);
    }
    Ok(Generator {
        cfg: base.cfg.clone(),
        params,
        provenance: format!("blend({}, {})", base.provenance, trans.provenance),
    })
}
