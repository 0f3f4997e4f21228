//! Differentiable rendering: depth map -> surface normals -> Lambertian
//! shading -> rigid reprojection, plus the second-order depth smoothness
//! regularizer. Every stage is built from graph ops, so gradients flow to
//! depth, albedo, viewpoint and lighting.
//!
//! Conventions:
//! - Depth maps hold z-depth in `[NEAR, FAR]` on the canonical camera.
//! - Normals and light directions use the +z ("into the scene") convention:
//!   a flat fronto-parallel plane has normal (0,0,1).
//! - The view transform rotates about the pivot `(0, 0, (NEAR+FAR)/2)` with
//!   `R = Rz * Ry * Rx`, then translates. Reprojection is an inverse warp:
//!   each output pixel is unprojected with the canonical depth at that pixel,
//!   carried through the inverse rigid transform and sampled bilinearly in
//!   the canonical image; samples falling outside use a constant border
//!   color. Occlusion is ignored, which is adequate for near-convex faces at
//!   small rotations and degrades gracefully at large ones.

use alloc::vec::Vec;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::fm;
use crate::graph::{Tape, Var};
use crate::tensor::Tensor;

pub const NEAR: f64 = 0.9;
pub const FAR: f64 = 1.1;
pub const MAX_ROT: f64 = 60.0 * fm::PI / 180.0;
pub const MAX_TRANS: f64 = 0.1;

/// Pivot for view rotations: the midpoint of the canonical depth band.
pub const PIVOT_Z: f64 = 0.5 * (NEAR + FAR);

/// One scene in factored form: depth [1,H,W] in [NEAR,FAR], albedo [3,H,W]
/// in [0,1], view = (rx,ry,rz, tx,ty,tz), light = (k_a, k_d, l_x, l_y).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFactors {
    pub depth: Tensor,
    pub albedo: Tensor,
    pub view: [f64; 6],
    pub light: [f64; 4],
}

impl SceneFactors {
    pub fn new(depth: Tensor, albedo: Tensor, view: [f64; 6], light: [f64; 4]) -> Result<Self> {
        let s = depth.shape();
        if s.len() != 3 || s[0] != 1 {
            return Err(Error::shape("depth must be [1,H,W]"));
        }
        let (h, w) = (s[1], s[2]);
        albedo.check_shape(&[3, h, w], "albedo")?;
        const TOL: f64 = 1e-9;
        if depth.min() < NEAR - TOL || depth.max() > FAR + TOL {
            return Err(Error::config("depth outside [near, far]"));
        }
        if albedo.min() < -TOL || albedo.max() > 1.0 + TOL {
            return Err(Error::config("albedo outside [0, 1]"));
        }
        for k in 0..3 {
            if view[k].abs() > MAX_ROT + TOL {
                return Err(Error::config("rotation outside bounds"));
            }
            if view[3 + k].abs() > MAX_TRANS + TOL {
                return Err(Error::config("translation outside bounds"));
            }
        }
        if !(0.0 - TOL..=1.0 + TOL).contains(&light[0]) || !(0.0 - TOL..=1.0 + TOL).contains(&light[1]) {
            return Err(Error::config("ambient/diffuse outside [0, 1]"));
        }
        if light[2].abs() > 1.0 + TOL || light[3].abs() > 1.0 + TOL {
            return Err(Error::config("light direction components outside [-1, 1]"));
        }
        Ok(SceneFactors {
            depth,
            albedo,
            view,
            light,
        })
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.depth.shape()[1], self.depth.shape()[2])
    }

    /// Unit light direction completed with a positive z component.
    pub fn light_dir(&self) -> [f64; 3] {
        light_dir(self.light[2], self.light[3])
    }
}

pub fn light_dir(lx: f64, ly: f64) -> [f64; 3] {
    let n = fm::hypot3(lx, ly, 1.0);
    [lx / n, ly / n, 1.0 / n]
}

/// Graph handles for one scene's factors.
#[derive(Debug, Clone, Copy)]
pub struct FactorVars {
    pub depth: Var,
    pub albedo: Var,
    /// rx, ry, rz, tx, ty, tz as 1-element vars
    pub view: [Var; 6],
    /// k_a, k_d, l_x, l_y as 1-element vars
    pub light: [Var; 4],
}

impl FactorVars {
    /// Enters fixed factors as constants (no gradients).
    pub fn constants(tape: &Tape, f: &SceneFactors) -> Self {
        FactorVars {
            depth: tape.constant(f.depth.clone()),
            albedo: tape.constant(f.albedo.clone()),
            view: core::array::from_fn(|k| tape.constant(Tensor::scalar(f.view[k]))),
            light: core::array::from_fn(|k| tape.constant(Tensor::scalar(f.light[k]))),
        }
    }

    /// Enters factors as differentiable leaves.
    pub fn params(tape: &Tape, f: &SceneFactors) -> Self {
        FactorVars {
            depth: tape.param(f.depth.clone()),
            albedo: tape.param(f.albedo.clone()),
            view: core::array::from_fn(|k| tape.param(Tensor::scalar(f.view[k]))),
            light: core::array::from_fn(|k| tape.param(Tensor::scalar(f.light[k]))),
        }
    }
}

/// Camera-space surface points of a depth map: (x, y, z) maps, each [1,H,W].
fn surface_points(tape: &Tape, depth: Var, camera: &Camera) -> (Var, Var, Var) {
    let (dirx, diry) = camera.dir_maps();
    let dx = tape.constant(dirx);
    let dy = tape.constant(diry);
    (tape.mul(depth, dx), tape.mul(depth, dy), depth)
}

/// Per-pixel unit normals from unprojected central-difference tangents;
/// boundary pixels use one-sided differences. Returns (nx, ny, nz).
pub fn normals_g(tape: &Tape, depth: Var, camera: &Camera) -> (Var, Var, Var) {
    let (px, py, pz) = surface_points(tape, depth, camera);
    let txx = tape.diff_x(px);
    let txy = tape.diff_x(py);
    let txz = tape.diff_x(pz);
    let tyx = tape.diff_y(px);
    let tyy = tape.diff_y(py);
    let tyz = tape.diff_y(pz);
    // cross(tx, ty)
    let nx = tape.sub(tape.mul(txy, tyz), tape.mul(txz, tyy));
    let ny = tape.sub(tape.mul(txz, tyx), tape.mul(txx, tyz));
    let nz = tape.sub(tape.mul(txx, tyy), tape.mul(txy, tyx));
    let n2 = tape.add(
        tape.add(tape.square(nx), tape.square(ny)),
        tape.square(nz),
    );
    let inv = tape.recip(tape.sqrt(tape.add_c(n2, 1e-18)));
    (
        tape.mul(nx, inv),
        tape.mul(ny, inv),
        tape.mul(nz, inv),
    )
}

/// Packs normals into one [3,H,W] tensor (for export and inspection).
pub fn normals_packed_g(tape: &Tape, depth: Var, camera: &Camera) -> Var {
    let (nx, ny, nz) = normals_g(tape, depth, camera);
    tape.concat(&[nx, ny, nz], 0)
}

/// Lambertian shading: `albedo * (k_a + k_d * max(0, <n, l>))`, clipped to
/// [0,1].
pub fn shade_g(
    tape: &Tape,
    albedo: Var,
    normals: (Var, Var, Var),
    light: [Var; 4],
) -> Var {
    let (nx, ny, nz) = normals;
    let [ka, kd, lx, ly] = light;
    let one = tape.scalar(1.0);
    let norm = tape.sqrt(tape.add(tape.add(tape.square(lx), tape.square(ly)), one));
    let inv = tape.recip(norm);
    let hx = tape.mul(lx, inv);
    let hy = tape.mul(ly, inv);
    let hz = inv; // 1/norm
    let dot = tape.add(
        tape.add(tape.mul_scalar(nx, hx), tape.mul_scalar(ny, hy)),
        tape.mul_scalar(nz, hz),
    );
    let diffuse = tape.relu(dot);
    let shade = tape.add_scalar(tape.mul_scalar(diffuse, kd), ka);
    tape.clamp01(tape.mul_pix(albedo, shade))
}

/// Rotation matrix entries of `R = Rz(rz) * Ry(ry) * Rx(rx)` as scalar vars,
/// row-major.
fn rotation_entries(tape: &Tape, rx: Var, ry: Var, rz: Var) -> [Var; 9] {
    let (sx, cx) = (tape.sin(rx), tape.cos(rx));
    let (sy, cy) = (tape.sin(ry), tape.cos(ry));
    let (sz, cz) = (tape.sin(rz), tape.cos(rz));
    let r00 = tape.mul(cz, cy);
    let r01 = tape.sub(tape.mul(tape.mul(cz, sy), sx), tape.mul(sz, cx));
    let r02 = tape.add(tape.mul(tape.mul(cz, sy), cx), tape.mul(sz, sx));
    let r10 = tape.mul(sz, cy);
    let r11 = tape.add(tape.mul(tape.mul(sz, sy), sx), tape.mul(cz, cx));
    let r12 = tape.sub(tape.mul(tape.mul(sz, sy), cx), tape.mul(cz, sx));
    let r20 = tape.neg(sy);
    let r21 = tape.mul(cy, sx);
    let r22 = tape.mul(cy, cx);
    [r00, r01, r02, r10, r11, r12, r20, r21, r22]
}

/// Resampling grid of the inverse warp, in pixel-index coordinates. A pure
/// function of depth and view; lighting never touches it.
pub fn warp_grid_g(
    tape: &Tape,
    depth: Var,
    view: [Var; 6],
    camera: &Camera,
) -> (Var, Var) {
    let (px, py, pz) = surface_points(tape, depth, camera);
    let [rx, ry, rz, tx, ty, tz] = view;
    let r = rotation_entries(tape, rx, ry, rz);

    // q = P - pivot - t (pivot has only a z component)
    let negtx = tape.neg(tx);
    let negty = tape.neg(ty);
    let negtz = tape.neg(tz);
    let qx = tape.add_scalar(px, negtx);
    let qy = tape.add_scalar(py, negty);
    let qz = tape.add_scalar(tape.add_c(pz, -PIVOT_Z), negtz);

    // s = R^T q + pivot
    let sx = tape.add(
        tape.add(tape.mul_scalar(qx, r[0]), tape.mul_scalar(qy, r[3])),
        tape.mul_scalar(qz, r[6]),
    );
    let sy = tape.add(
        tape.add(tape.mul_scalar(qx, r[1]), tape.mul_scalar(qy, r[4])),
        tape.mul_scalar(qz, r[7]),
    );
    let sz = tape.add_c(
        tape.add(
            tape.add(tape.mul_scalar(qx, r[2]), tape.mul_scalar(qy, r[5])),
            tape.mul_scalar(qz, r[8]),
        ),
        PIVOT_Z,
    );

    let f = camera.focal_px();
    let inv_z = tape.recip(sz);
    let gu = tape.add_c(tape.mul_c(tape.mul(sx, inv_z), f), camera.cx() - 0.5);
    let gv = tape.add_c(tape.mul_c(tape.mul(sy, inv_z), f), camera.cy() - 0.5);
    (gu, gv)
}

/// Inverse-warps a canonical image into the posed view.
pub fn reproject_g(
    tape: &Tape,
    image: Var,
    depth: Var,
    view: [Var; 6],
    camera: &Camera,
    border: &[f64],
) -> Var {
    let (gu, gv) = warp_grid_g(tape, depth, view, camera);
    tape.grid_sample(image, gu, gv, border.to_vec())
}

/// The full rendering process: shade the canonical surface, then reproject.
pub fn render_g(
    tape: &Tape,
    factors: FactorVars,
    camera: &Camera,
    border: &[f64],
) -> Var {
    let normals = normals_g(tape, factors.depth, camera);
    let canonical = shade_g(tape, factors.albedo, normals, factors.light);
    reproject_g(tape, canonical, factors.depth, factors.view, camera, border)
}

/// Mean absolute second difference of the depth map along each axis, summed
/// over the two axes. Zero on any plane, exactly 2 on x^2 with unit pixels.
pub fn smoothness_g(tape: &Tape, depth: Var) -> Var {
    let sx = tape.mean_all(tape.abs(tape.second_diff_x(depth)));
    let sy = tape.mean_all(tape.abs(tape.second_diff_y(depth)));
    tape.add(sx, sy)
}

// ---- value-level wrappers ----

pub fn depth_to_normals(depth: &Tensor, camera: &Camera) -> Tensor {
    let tape = Tape::new();
    let d = tape.constant(depth.clone());
    let n = normals_packed_g(&tape, d, camera);
    tape.value(n)
}

pub fn shade(albedo: &Tensor, normals: &Tensor, light: [f64; 4]) -> Tensor {
    let tape = Tape::new();
    let a = tape.constant(albedo.clone());
    let nv = tape.constant(normals.clone());
    let nx = tape.slice(nv, 0, 0, 1);
    let ny = tape.slice(nv, 0, 1, 1);
    let nz = tape.slice(nv, 0, 2, 1);
    let lv = core::array::from_fn(|k| tape.constant(Tensor::scalar(light[k])));
    let out = shade_g(&tape, a, (nx, ny, nz), lv);
    tape.value(out)
}

pub fn reproject(
    image: &Tensor,
    depth: &Tensor,
    view: [f64; 6],
    camera: &Camera,
    border: &[f64],
) -> Tensor {
    let tape = Tape::new();
    let img = tape.constant(image.clone());
    let d = tape.constant(depth.clone());
    let vv = core::array::from_fn(|k| tape.constant(Tensor::scalar(view[k])));
    let out = reproject_g(&tape, img, d, vv, camera, border);
    tape.value(out)
}

/// The resampling grid as plain tensors (for isolation tests and mask
/// warping).
pub fn warp_grid(depth: &Tensor, view: [f64; 6], camera: &Camera) -> (Tensor, Tensor) {
    let tape = Tape::new();
    let d = tape.constant(depth.clone());
    let vv = core::array::from_fn(|k| tape.constant(Tensor::scalar(view[k])));
    let (gu, gv) = warp_grid_g(&tape, d, vv, camera);
    (tape.value(gu), tape.value(gv))
}

pub fn render(factors: &SceneFactors, camera: &Camera, border: &[f64]) -> Tensor {
    let tape = Tape::new();
    let fv = FactorVars::constants(&tape, factors);
    let out = render_g(&tape, fv, camera, border);
    tape.value(out)
}

pub fn smoothness_loss(depth: &Tensor) -> f64 {
    let tape = Tape::new();
    let d = tape.constant(depth.clone());
    tape.value_scalar(smoothness_g(&tape, d))
}

/// Verification helper for the differentiability contract: backpropagated
/// gradients of the mean rendered intensity against central finite
/// differences, reported as one relative L2 error per factor group
/// (depth, albedo, view, light). Bilinear resampling has derivative kinks at
/// cell boundaries, so isolated entries can disagree with a finite
/// difference that straddles a boundary; the vector-level error is the
/// meaningful fidelity measure.
pub fn render_grad_check(
    factors: &SceneFactors,
    camera: &Camera,
    border: &[f64],
    h: f64,
) -> [(&'static str, f64); 4] {
    let pairs = render_grad_pairs(factors, camera, border, h);
    let rel = |p: &(Vec<f64>, Vec<f64>)| {
        let num: f64 = p.0.iter().zip(&p.1).map(|(a, f)| (a - f) * (a - f)).sum();
        let den: f64 = p.1.iter().map(|f| f * f).sum();
        fm::sqrt(num) / fm::sqrt(den).max(1e-12)
    };
    [
        ("depth", rel(&pairs[0])),
        ("albedo", rel(&pairs[1])),
        ("view", rel(&pairs[2])),
        ("light", rel(&pairs[3])),
    ]
}

/// (analytic, finite-difference) gradient pairs per factor group, for
/// pooling across configurations.
pub fn render_grad_pairs(
    factors: &SceneFactors,
    camera: &Camera,
    border: &[f64],
    h: f64,
) -> [(Vec<f64>, Vec<f64>); 4] {
    let tape = Tape::new();
    let fv = FactorVars::params(&tape, factors);
    let out = tape.mean_all(render_g(&tape, fv, camera, border));
    let mut grads = tape.backward(out);

    let eval = |f: &SceneFactors| {
        let t = Tape::new();
        let fv = FactorVars::constants(&t, f);
        t.value_scalar(t.mean_all(render_g(&t, fv, camera, border)))
    };

    let ad = grads.take(fv.depth).unwrap();
    let mut fd_d = Vec::with_capacity(ad.numel());
    for k in 0..ad.numel() {
        let mut p = factors.clone();
        p.depth.data_mut()[k] += h;
        let mut m = factors.clone();
        m.depth.data_mut()[k] -= h;
        fd_d.push((eval(&p) - eval(&m)) / (2.0 * h));
    }
    let aa = grads.take(fv.albedo).unwrap();
    let mut fd_a = Vec::with_capacity(aa.numel());
    for k in 0..aa.numel() {
        let mut p = factors.clone();
        p.albedo.data_mut()[k] += h;
        let mut m = factors.clone();
        m.albedo.data_mut()[k] -= h;
        fd_a.push((eval(&p) - eval(&m)) / (2.0 * h));
    }
    let av: Vec<f64> = (0..6)
        .map(|k| grads.take(fv.view[k]).unwrap().item())
        .collect();
    let mut fd_v = Vec::with_capacity(6);
    for k in 0..6 {
        let mut p = factors.clone();
        p.view[k] += h;
        let mut m = factors.clone();
        m.view[k] -= h;
        fd_v.push((eval(&p) - eval(&m)) / (2.0 * h));
    }
    let al: Vec<f64> = (0..4)
        .map(|k| grads.take(fv.light[k]).unwrap().item())
        .collect();
    let mut fd_l = Vec::with_capacity(4);
    for k in 0..4 {
        let mut p = factors.clone();
        p.light[k] += h;
        let mut m = factors.clone();
        m.light[k] -= h;
        fd_l.push((eval(&p) - eval(&m)) / (2.0 * h));
    }
    [
        (ad.into_data(), fd_d),
        (aa.into_data(), fd_a),
        (av, fd_v),
        (al, fd_l),
    ]
}

/// Depth-map heightfield as a triangulated mesh: vertices with albedo colors
/// and two triangles per pixel quad (counter-clockwise seen from the
/// camera). Returns (positions, colors, triangle indices).
pub fn depth_to_mesh(
    depth: &Tensor,
    albedo: &Tensor,
    camera: &Camera,
) -> (Vec<[f64; 3]>, Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let (h, w) = (depth.shape()[1], depth.shape()[2]);
    let (dirx, diry) = camera.dir_maps();
    let mut positions = Vec::with_capacity(h * w);
    let mut colors = Vec::with_capacity(h * w);
    for k in 0..h * w {
        let d = depth.data()[k];
        positions.push([dirx.data()[k] * d, diry.data()[k] * d, d]);
        colors.push([
            albedo.data()[k],
            albedo.data()[h * w + k],
            albedo.data()[2 * h * w + k],
        ]);
    }
    let mut tris = Vec::with_capacity(2 * (h - 1) * (w - 1));
    for i in 0..h - 1 {
        for j in 0..w - 1 {
            let a = i * w + j;
            let b = i * w + j + 1;
            let c = (i + 1) * w + j;
            let d = (i + 1) * w + j + 1;
            tris.push([a, c, b]);
            tris.push([b, c, d]);
        }
    }
    (positions, colors, tris)
}

pub mod fixtures;

#[cfg(test)]
mod tests;
