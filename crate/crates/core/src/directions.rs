//! Latent semantic directions: closed-form discovery as the top eigenvectors
//! of A^T A for a generator weight matrix A, plus gradient refinement of a
//! manipulation offset that trades identity preservation against low-level
//! feature change (L_m = L_id - lambda_low * L_low).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::embed::EmbeddingNet;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::graph::{Tape, Var};
use crate::linalg;
use crate::opt::cosine_lr;
use crate::params::{Archive, BoundParams};
use crate::tensor::{gram, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDirectionSet {
    /// Row i is the unit direction with the i-th largest strength.
    pub directions: Tensor,
    /// Eigenvalues of A^T A, descending.
    pub strengths: Vec<f64>,
    /// Identifier of the factorized matrix (e.g. checkpoint hash + mode).
    pub source: String,
}

impl SemanticDirectionSet {
    pub fn dim(&self) -> usize {
        self.directions.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.directions.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn direction(&self, i: usize) -> Tensor {
        let d = self.dim();
        Tensor::new(
            alloc::vec![d],
            self.directions.data()[i * d..(i + 1) * d].to_vec(),
        )
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new("directions");
        a.meta.insert("source".into(), self.source.clone());
        a.meta.insert("k".into(), self.len().to_string());
        a.params.insert("directions", self.directions.clone());
        a.params.insert(
            "strengths",
            Tensor::new(alloc::vec![self.strengths.len()], self.strengths.clone()),
        );
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.kind != "directions" {
            return Err(Error::incompatible(format!(
                "expected a directions archive, found kind {}",
                a.kind
            )));
        }
        let directions = a.params.expect("directions")?.clone();
        let strengths = a.params.expect("strengths")?.data().to_vec();
        Ok(SemanticDirectionSet {
            directions,
            strengths,
            source: a.meta.get("source").cloned().unwrap_or_default(),
        })
    }
}

/// Top-k eigenvectors of A^T A, descending by eigenvalue. Signs are fixed so
/// each direction's largest-magnitude component is positive; exactly equal
/// eigenvalues are ordered by descending lexicographic comparison of the
/// sign-fixed eigenvectors.
pub fn factorize(a: &Tensor, k: usize, source: &str) -> Result<SemanticDirectionSet> {
    if a.shape().len() != 2 {
        return Err(Error::shape("factorize expects a matrix"));
    }
    if !a.all_finite() {
        return Err(Error::numeric("factorize: non-finite matrix"));
    }
    let d = a.shape()[1];
    if k == 0 || k > d {
        return Err(Error::argument(format!(
            "k = {k} out of range for a matrix with {d} columns"
        )));
    }
    let eig = linalg::sym_eigen(&gram(a))?;

    // sign-fix every eigenvector
    let mut vectors: Vec<Vec<f64>> = (0..d)
        .map(|i| eig.vectors.data()[i * d..(i + 1) * d].to_vec())
        .collect();
    for v in &mut vectors {
        let mut arg = 0;
        for (j, x) in v.iter().enumerate() {
            if x.abs() > v[arg].abs() {
                arg = j;
            }
        }
        if v[arg] < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
    }
    // order: eigenvalue descending, exact ties by lexicographic descending
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        match eig.values[j].partial_cmp(&eig.values[i]).unwrap() {
            core::cmp::Ordering::Equal => {
                for (x, y) in vectors[i].iter().zip(vectors[j].iter()) {
                    match y.partial_cmp(x).unwrap() {
                        core::cmp::Ordering::Equal => continue,
                        other => return other,
                    }
                }
                core::cmp::Ordering::Equal
            }
            other => other,
        }
    });

    let mut directions = Tensor::zeros(&[k, d]);
    let mut strengths = Vec::with_capacity(k);
    for (row, &i) in order.iter().take(k).enumerate() {
        directions.data_mut()[row * d..(row + 1) * d].copy_from_slice(&vectors[i]);
        strengths.push(eig.values[i].max(0.0));
    }
    Ok(SemanticDirectionSet {
        directions,
        strengths,
        source: source.to_string(),
    })
}

/// w + alpha * n.
pub fn apply_direction(w: &Tensor, n: &Tensor, alpha: f64) -> Result<Tensor> {
    if w.shape() != n.shape() {
        return Err(Error::shape("latent and direction dimensions differ"));
    }
    Ok(w.zip(n, |wv, nv| wv + alpha * nv))
}

#[derive(Debug, Clone)]
pub struct OffsetRefineConfig {
    /// Manipulation intensity for the initial offset alpha * n.
    pub alpha: f64,
    pub lambda_low: f64,
    pub iterations: usize,
    /// Initial learning rate; decays with a cosine schedule.
    pub lr: f64,
}

impl Default for OffsetRefineConfig {
    fn default() -> Self {
        OffsetRefineConfig {
            alpha: 3.0,
            lambda_low: 0.2,
            iterations: 10,
            lr: 0.1,
        }
    }
}

/// Face region for the low-level loss. Generated images have no ground-truth
/// masks, so the default is a centered ellipse.
#[derive(Debug, Clone)]
pub enum MaskProvider {
    /// Ellipse at the image center with semi-axes as fractions of the size.
    Elliptical { rx: f64, ry: f64 },
    /// Explicit row-major mask.
    Fixed(Vec<bool>),
}

impl Default for MaskProvider {
    fn default() -> Self {
        MaskProvider::Elliptical { rx: 0.35, ry: 0.45 }
    }
}

impl MaskProvider {
    pub fn mask(&self, h: usize, w: usize) -> Result<Tensor> {
        let data: Vec<f64> = match self {
            MaskProvider::Elliptical { rx, ry } => (0..h * w)
                .map(|k| {
                    let x = ((k % w) as f64 + 0.5) / w as f64 - 0.5;
                    let y = ((k / w) as f64 + 0.5) / h as f64 - 0.5;
                    if (x / rx) * (x / rx) + (y / ry) * (y / ry) <= 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            MaskProvider::Fixed(m) => {
                if m.len() != h * w {
                    return Err(Error::shape("mask size mismatch"));
                }
                m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
            }
        };
        if data.iter().all(|&v| v == 0.0) {
            return Err(Error::degenerate("mask selects no pixels"));
        }
        Ok(Tensor::new(alloc::vec![1, h, w], data))
    }
}

fn check_f(f: &EmbeddingNet) -> Result<()> {
    if !f.trained {
        return Err(Error::config("identity embedder is not trained"));
    }
    Ok(())
}

/// Graph: squared embedding distance between G(w) and G(w + w_star).
fn identity_loss_g(
    tape: &Tape,
    gen: &Generator,
    f: &EmbeddingNet,
    w_const: Var,
    w_shifted: Var,
) -> Var {
    let bg = BoundParams::constants(tape, &gen.params);
    let bf = BoundParams::constants(tape, &f.params);
    let (img_a, _) = gen.synthesize_g(tape, w_const, &bg);
    let (img_b, _) = gen.synthesize_g(tape, w_shifted, &bg);
    let (_, ea, _) = f.forward_g(tape, img_a, &bf);
    let (_, eb, _) = f.forward_g(tape, img_b, &bf);
    let d = tape.sub(ea, eb);
    tape.sum_all(tape.mul(d, d))
}

/// Graph: squared low-level feature distance between the masked renders.
fn lowlevel_loss_g(
    tape: &Tape,
    gen: &Generator,
    f: &EmbeddingNet,
    mask: &Tensor,
    w_const: Var,
    w_shifted: Var,
) -> Var {
    let bg = BoundParams::constants(tape, &gen.params);
    let bf = BoundParams::constants(tape, &f.params);
    let (img_a, _) = gen.synthesize_g(tape, w_const, &bg);
    let (img_b, _) = gen.synthesize_g(tape, w_shifted, &bg);
    let r = gen.cfg.resolution;
    let m = tape.constant(mask.reshaped(&[1, 1, r, r]));
    let ma = tape.mul_pix(img_a, m);
    let mb = tape.mul_pix(img_b, m);
    let (_, _, la) = f.forward_g(tape, ma, &bf);
    let (_, _, lb) = f.forward_g(tape, mb, &bf);
    let d = tape.sub(la, lb);
    tape.sum_all(tape.mul(d, d))
}

/// ||f(G(w)) - f(G(w + w_star))||^2, evaluated on the base generator.
pub fn identity_loss(
    w: &Tensor,
    w_star: &Tensor,
    gen: &Generator,
    f: &EmbeddingNet,
) -> Result<f64> {
    check_f(f)?;
    if w.shape() != w_star.shape() || w.numel() != gen.cfg.d_w {
        return Err(Error::shape("latent/offset dimensions differ"));
    }
    let tape = Tape::new();
    let wv = tape.constant(w.reshaped(&[1, gen.cfg.d_w]));
    let ws = tape.constant(w.zip(w_star, |a, b| a + b).reshaped(&[1, gen.cfg.d_w]));
    let l = identity_loss_g(&tape, gen, f, wv, ws);
    Ok(tape.value_scalar(l))
}

/// Masked low-level feature distance between the two renders.
pub fn lowlevel_loss(
    w: &Tensor,
    w_star: &Tensor,
    gen: &Generator,
    f: &EmbeddingNet,
    mask_provider: &MaskProvider,
) -> Result<f64> {
    check_f(f)?;
    if w.shape() != w_star.shape() || w.numel() != gen.cfg.d_w {
        return Err(Error::shape("latent/offset dimensions differ"));
    }
    let r = gen.cfg.resolution;
    let mask = mask_provider.mask(r, r)?;
    let tape = Tape::new();
    let wv = tape.constant(w.reshaped(&[1, gen.cfg.d_w]));
    let ws = tape.constant(w.zip(w_star, |a, b| a + b).reshaped(&[1, gen.cfg.d_w]));
    let l = lowlevel_loss_g(&tape, gen, f, &mask, wv, ws);
    Ok(tape.value_scalar(l))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineStep {
    pub l_m: f64,
    pub l_id: f64,
    pub l_low: f64,
}

#[derive(Debug, Clone)]
pub struct RefineResult {
    pub w_star: Tensor,
    /// Losses evaluated at the iterate of each step (before its update),
    /// plus one final entry at the returned offset.
    pub trajectory: Vec<RefineStep>,
}

/// Plain gradient descent on L_m = L_id - lambda_low * L_low from the
/// initial offset alpha * n, with a cosine-decayed learning rate.
pub fn refine_offset(
    w: &Tensor,
    init_direction: &Tensor,
    cfg: &OffsetRefineConfig,
    gen: &Generator,
    f: &EmbeddingNet,
    mask_provider: &MaskProvider,
) -> Result<RefineResult> {
    check_f(f)?;
    if cfg.iterations == 0 {
        return Err(Error::config("iterations must be >= 1"));
    }
    if cfg.lambda_low < 0.0 {
        return Err(Error::config("lambda_low must be >= 0"));
    }
    if w.shape() != init_direction.shape() || w.numel() != gen.cfg.d_w {
        return Err(Error::shape("latent/direction dimensions differ"));
    }
    let r = gen.cfg.resolution;
    let mask = mask_provider.mask(r, r)?;
    let mut w_star = init_direction.map(|v| v * cfg.alpha);
    let mut trajectory = Vec::with_capacity(cfg.iterations + 1);

    let losses_at = |ws: &Tensor, want_grad: bool| -> (RefineStep, Option<Tensor>) {
        let tape = Tape::new();
        let wv = tape.constant(w.reshaped(&[1, gen.cfg.d_w]));
        let wsv = if want_grad {
            tape.param(ws.reshaped(&[1, gen.cfg.d_w]))
        } else {
            tape.constant(ws.reshaped(&[1, gen.cfg.d_w]))
        };
        let shifted = tape.add(wv, wsv);
        let l_id = identity_loss_g(&tape, gen, f, wv, shifted);
        let l_low = lowlevel_loss_g(&tape, gen, f, &mask, wv, shifted);
        let l_m = tape.sub(l_id, tape.mul_c(l_low, cfg.lambda_low));
        let step = RefineStep {
            l_m: tape.value_scalar(l_m),
            l_id: tape.value_scalar(l_id),
            l_low: tape.value_scalar(l_low),
        };
        let grad = want_grad.then(|| {
            let mut g = tape.backward(l_m);
            g.take(wsv)
                .unwrap_or_else(|| Tensor::zeros(&[1, gen.cfg.d_w]))
                .reshaped(&[gen.cfg.d_w])
        });
        (step, grad)
    };

    for i in 0..cfg.iterations {
        let (step, grad) = losses_at(&w_star, true);
        if !step.l_m.is_finite() {
            return Err(Error::numeric_with_trajectory(
                "offset refinement diverged",
                trajectory.iter().map(|s: &RefineStep| s.l_m).collect(),
            ));
        }
        trajectory.push(step);
        let lr = cosine_lr(cfg.lr, i, cfg.iterations);
        let g = grad.unwrap();
        for k in 0..w_star.numel() {
            w_star.data_mut()[k] -= lr * g.data()[k];
        }
    }
    let (final_step, _) = losses_at(&w_star, false);
    if !final_step.l_m.is_finite() {
        return Err(Error::numeric_with_trajectory(
            "offset refinement diverged",
            trajectory.iter().map(|s| s.l_m).collect(),
        ));
    }
    trajectory.push(final_step);
    Ok(RefineResult { w_star, trajectory })
}
