//! Procedural face world: analytic head geometry (ellipsoid skull, nose
//! ridge, recessed eye sockets) with closed-form canonical depth, parametric
//! albedo, a continuous expression parameter driving mouth curvature and eye
//! aperture, and two visual styles. Every sample carries exact ground-truth
//! factors, and the sample image is produced by the same rendering process
//! the reconstruction stage differentiates through.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::fm;
use crate::render::{self, SceneFactors, FAR, MAX_ROT, MAX_TRANS, NEAR};
use crate::rng::{self, derive_seed_index};
use crate::tensor::Tensor;

/// Background albedo (constant; the world has no scenery).
pub const BACKGROUND: [f64; 3] = [0.32, 0.40, 0.52];

/// Head center depth in canonical camera units.
const HEAD_Z: f64 = 1.02;

pub const SHAPE_PARAM_COUNT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Plain,
    Cartoon,
}

impl Style {
    pub fn as_str(&self) -> &'static str {
        match self {
            Style::Plain => "plain",
            Style::Cartoon => "cartoon",
        }
    }

    pub fn parse(s: &str) -> Result<Style> {
        match s {
            "plain" => Ok(Style::Plain),
            "cartoon" => Ok(Style::Cartoon),
            other => Err(Error::config(format!("unknown style {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingRanges {
    /// Per-axis rotation bound in radians (samples are uniform in +-bound).
    pub rot_max: [f64; 3],
    pub trans_max: [f64; 3],
    pub ambient: (f64, f64),
    pub diffuse: (f64, f64),
    /// Bound for |l_x| and |l_y|.
    pub light_xy: f64,
    pub expression: (f64, f64),
    pub n_identities: usize,
}

impl Default for SamplingRanges {
    fn default() -> Self {
        SamplingRanges {
            rot_max: [fm::deg_to_rad(20.0); 3],
            trans_max: [0.02; 3],
            ambient: (0.25, 0.45),
            diffuse: (0.30, 0.50),
            light_xy: 0.6,
            expression: (-1.0, 1.0),
            n_identities: 12,
        }
    }
}

impl SamplingRanges {
    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if !(0.0..=MAX_ROT).contains(&self.rot_max[k]) {
                return Err(Error::config("rotation range outside bounds"));
            }
            if !(0.0..=MAX_TRANS).contains(&self.trans_max[k]) {
                return Err(Error::config("translation range outside bounds"));
            }
        }
        let ok = |r: (f64, f64)| r.0 <= r.1;
        if !ok(self.ambient) || !ok(self.diffuse) || !ok(self.expression) {
            return Err(Error::config("range with min > max"));
        }
        if self.ambient.0 < 0.0 || self.diffuse.0 < 0.0 {
            return Err(Error::config("negative lighting coefficient"));
        }
        if self.ambient.1 + self.diffuse.1 > 1.0 {
            return Err(Error::config(
                "ambient.max + diffuse.max must be <= 1 so shading stays in [0,1]",
            ));
        }
        if !(0.0..=1.0).contains(&self.light_xy) {
            return Err(Error::config("light_xy bound outside [0,1]"));
        }
        if self.expression.0 < -1.0 || self.expression.1 > 1.0 {
            return Err(Error::config("expression outside [-1,1]"));
        }
        if self.n_identities == 0 {
            return Err(Error::config("need at least one identity"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub identity_id: usize,
    pub shape_params: Vec<f64>,
    pub expression: f64,
    pub viewpoint: [f64; 6],
    pub lighting: [f64; 4],
    pub style: Style,
}

#[derive(Debug, Clone)]
pub struct LabeledSample {
    /// Posed, lit image [3,H,W] in [0,1].
    pub image: Tensor,
    /// Canonical depth [1,H,W] in [NEAR, FAR] (the d the renderer consumes).
    pub depth_gt: Tensor,
    /// Canonical albedo [3,H,W].
    pub albedo_gt: Tensor,
    /// Posed face-region mask, row-major H*W.
    pub mask: Vec<bool>,
    pub spec: SceneSpec,
}

/// Shape parameters are a pure function of the identity index, so the same
/// identity looks the same in every corpus.
pub fn identity_shape_params(identity_id: usize) -> Vec<f64> {
    let seed = derive_seed_index(0xFACE_0001, "identity-shape", identity_id as u64);
    let mut r = rng::rng_from_seed(seed);
    let mut u = |lo: f64, hi: f64| rng::uniform(&mut r, lo, hi);
    vec![
        u(0.040, 0.055),   // 0 head semi-axis x
        u(0.050, 0.065),   // 1 head semi-axis y
        u(0.045, 0.060),   // 2 head semi-axis z
        u(0.007, 0.012),   // 3 nose radius
        u(0.010, 0.018),   // 4 nose protrusion
        u(0.015, 0.022),   // 5 eye lateral offset
        u(-0.020, -0.012), // 6 eye height (image y grows downward)
        u(0.018, 0.028),   // 7 mouth height
        u(0.55, 0.90),     // 8 skin r
        u(0.45, 0.75),     // 9 skin g
        u(0.35, 0.65),     // 10 skin b
        u(-0.3, 0.3),      // 11 brow tilt
    ]
}

/// Deterministic scene draw. Field order is fixed; all marginals are
/// uniform over their configured ranges.
pub fn sample_scene(seed: u64, ranges: &SamplingRanges, style: Style) -> Result<SceneSpec> {
    ranges.validate()?;
    let mut r = rng::rng_from_seed(seed);
    let identity_id = if ranges.n_identities == 1 {
        0
    } else {
        (rng::uniform(&mut r, 0.0, ranges.n_identities as f64) as usize)
            .min(ranges.n_identities - 1)
    };
    let expression = rng::uniform(&mut r, ranges.expression.0, ranges.expression.1);
    let mut viewpoint = [0.0; 6];
    for k in 0..3 {
        viewpoint[k] = rng::uniform(&mut r, -ranges.rot_max[k], ranges.rot_max[k]);
    }
    for k in 0..3 {
        viewpoint[3 + k] = rng::uniform(&mut r, -ranges.trans_max[k], ranges.trans_max[k]);
    }
    let ka = rng::uniform(&mut r, ranges.ambient.0, ranges.ambient.1);
    let kd = rng::uniform(&mut r, ranges.diffuse.0, ranges.diffuse.1);
    let lx = rng::uniform(&mut r, -ranges.light_xy, ranges.light_xy);
    let ly = rng::uniform(&mut r, -ranges.light_xy, ranges.light_xy);
    Ok(SceneSpec {
        identity_id,
        shape_params: identity_shape_params(identity_id),
        expression,
        viewpoint,
        lighting: [ka, kd, lx, ly],
        style,
    })
}

struct FaceGeometry<'a> {
    p: &'a [f64],
    expression: f64,
}

impl FaceGeometry<'_> {
    /// Front-surface depth along the ray through lateral direction (dx, dy),
    /// and whether the ray hits the head.
    fn ray_depth(&self, dx: f64, dy: f64) -> (f64, bool) {
        let head = ray_ellipsoid(dx, dy, [0.0, 0.0, HEAD_Z], [self.p[0], self.p[1], self.p[2]]);
        let Some(mut d) = head else {
            return (FAR, false);
        };
        // nose ridge: protruding ellipsoid near the face center
        let nose_front = HEAD_Z - self.p[2];
        let nose = ray_ellipsoid(
            dx,
            dy,
            [0.0, 0.004, nose_front + 0.004],
            [self.p[3], self.p[3] * 1.5, self.p[4]],
        );
        if let Some(dn) = nose {
            d = d.min(dn);
        }
        // recessed eye sockets, aperture driven by expression
        let (sx, sy) = (dx * d, dy * d);
        let aperture = self.eye_aperture();
        for side in [-1.0, 1.0] {
            let ex = side * self.p[5];
            let ey = self.p[6];
            let rx = 0.010;
            let ry = 0.007 * aperture;
            let q = crate::fm::sq((sx - ex) / rx) + crate::fm::sq((sy - ey) / ry);
            if q < 1.0 {
                d += 0.004 * (1.0 - q) * (1.0 - q);
            }
        }
        // shallow mouth groove following the expression curve
        let hw = 0.016;
        if sx.abs() < hw {
            let my = self.mouth_curve(sx);
            let t = (sy - my) / 0.0035;
            if t.abs() < 1.0 {
                d += 0.002 * (1.0 - t * t);
            }
        }
        (d.clamp(NEAR, FAR), true)
    }

    fn eye_aperture(&self) -> f64 {
        1.0 + 0.35 * self.expression
    }

    /// Mouth center-line y at lateral position x; smiles bend the ends up
    /// (negative image y).
    fn mouth_curve(&self, x: f64) -> f64 {
        let hw = 0.016;
        self.p[7] - 0.010 * self.expression * ((x / hw) * (x / hw) - 0.5)
    }

    fn albedo(&self, sx: f64, sy: f64, hit: bool) -> [f64; 3] {
        if !hit {
            return BACKGROUND;
        }
        let skin = [self.p[8], self.p[9], self.p[10]];
        let mut c = skin;
        // hairline cap
        let hair_edge = self.p[6] - 0.016;
        if sy < hair_edge {
            let t = smoothstep((hair_edge - sy) / 0.004);
            let hair = [skin[0] * 0.25, skin[1] * 0.22, skin[2] * 0.20];
            c = mix3(c, hair, t);
        }
        // eyes: sclera + iris inside the socket ellipse
        let aperture = self.eye_aperture();
        for side in [-1.0, 1.0] {
            let ex = side * self.p[5];
            let ey = self.p[6];
            let rx = 0.010;
            let ry = 0.007 * aperture;
            let q = crate::fm::sq((sx - ex) / rx) + crate::fm::sq((sy - ey) / ry);
            if q < 1.0 {
                let t = smoothstep((1.0 - q) / 0.15);
                c = mix3(c, [0.93, 0.93, 0.90], t);
                let iris = crate::fm::sq((sx - ex) / (0.45 * rx)) + crate::fm::sq((sy - ey) / (0.45 * ry));
                if iris < 1.0 {
                    let ti = smoothstep((1.0 - iris) / 0.3);
                    c = mix3(c, [0.15, 0.20, 0.35], ti);
                }
            }
            // eyebrow stroke above the eye, tilted by the brow parameter
            let bx = sx - ex;
            let by = sy - (ey - 0.011) - self.p[11] * bx * side;
            if bx.abs() < 0.011 && by.abs() < 0.0028 {
                let t = smoothstep((0.0028 - by.abs()) / 0.001);
                c = mix3(c, [0.22, 0.16, 0.11], t);
            }
        }
        // mouth stroke
        let hw = 0.016;
        if sx.abs() < hw {
            let my = self.mouth_curve(sx);
            let t = (sy - my).abs() / 0.0035;
            if t < 1.0 {
                let tt = smoothstep((1.0 - t) / 0.4);
                c = mix3(c, [0.66, 0.25, 0.30], tt);
            }
        }
        // slightly darker nose patch
        let nq = crate::fm::sq(sx / (self.p[3] * 1.2)) + crate::fm::sq((sy - 0.004) / (self.p[3] * 1.8));
        if nq < 1.0 {
            let t = smoothstep((1.0 - nq) / 0.4);
            c = mix3(c, [skin[0] * 0.88, skin[1] * 0.85, skin[2] * 0.85], t * 0.6);
        }
        c
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Front intersection depth of the ray t*(dx,dy,1) with an axis-aligned
/// ellipsoid, if any, restricted to the visible band.
fn ray_ellipsoid(dx: f64, dy: f64, center: [f64; 3], semi: [f64; 3]) -> Option<f64> {
    let a = crate::fm::sq(dx / semi[0]) + crate::fm::sq(dy / semi[1]) + crate::fm::sq(1.0 / semi[2]);
    let b = -2.0
        * (dx * center[0] / (semi[0] * semi[0])
            + dy * center[1] / (semi[1] * semi[1])
            + center[2] / (semi[2] * semi[2]));
    let c = crate::fm::sq(center[0] / semi[0])
        + crate::fm::sq(center[1] / semi[1])
        + crate::fm::sq(center[2] / semi[2])
        - 1.0;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - fm::sqrt(disc)) / (2.0 * a);
    (t > NEAR && t < FAR).then_some(t)
}

/// Canonical ground-truth maps: (depth, albedo, hit mask).
pub fn canonical_maps(spec: &SceneSpec, resolution: usize) -> (Tensor, Tensor, Vec<bool>) {
    let camera = Camera::square(resolution);
    let geo = FaceGeometry {
        p: &spec.shape_params,
        expression: spec.expression,
    };
    let (dirx, diry) = camera.dir_maps();
    let hw = resolution * resolution;
    let mut depth = Tensor::zeros(&[1, resolution, resolution]);
    let mut albedo = Tensor::zeros(&[3, resolution, resolution]);
    let mut mask = vec![false; hw];
    for k in 0..hw {
        let (dx, dy) = (dirx.data()[k], diry.data()[k]);
        let (d, hit) = geo.ray_depth(dx, dy);
        depth.data_mut()[k] = d;
        mask[k] = hit;
        let (sx, sy) = (dx * d, dy * d);
        let c = geo.albedo(sx, sy, hit);
        albedo.data_mut()[k] = c[0];
        albedo.data_mut()[hw + k] = c[1];
        albedo.data_mut()[2 * hw + k] = c[2];
    }
    if spec.style == Style::Cartoon {
        albedo = cartoonize(&albedo);
    }
    (depth, albedo, mask)
}

/// Cartoon stylization of the albedo: quantize to an 8-color palette, then
/// darken palette-label discontinuities into an outline. Geometry untouched.
pub fn cartoonize(albedo: &Tensor) -> Tensor {
    let (quantized, labels, w) = quantize_palette(albedo);
    let mut out = quantized.clone();
    let hw = labels.len();
    let h = hw / w;
    let od = out.data_mut();
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let edge = (j + 1 < w && labels[k] != labels[k + 1])
                || (j > 0 && labels[k] != labels[k - 1])
                || (i + 1 < h && labels[k] != labels[k + w])
                || (i > 0 && labels[k] != labels[k - w]);
            if edge {
                for c in 0..3 {
                    od[c * hw + k] *= 0.25;
                }
            }
        }
    }
    out
}

/// Nearest-palette quantization. The palette is the 8 most populated cells
/// of a 4x4x4 color histogram, each represented by its cell mean.
pub fn quantize_palette(albedo: &Tensor) -> (Tensor, Vec<u8>, usize) {
    let hw = albedo.numel() / 3;
    let w = albedo.shape()[2];
    let mut counts = vec![0usize; 64];
    let mut sums = vec![[0.0f64; 3]; 64];
    let cell = |v: f64| ((v * 4.0) as usize).min(3);
    for k in 0..hw {
        let c = [
            albedo.data()[k],
            albedo.data()[hw + k],
            albedo.data()[2 * hw + k],
        ];
        let idx = cell(c[0]) * 16 + cell(c[1]) * 4 + cell(c[2]);
        counts[idx] += 1;
        for q in 0..3 {
            sums[idx][q] += c[q];
        }
    }
    let mut order: Vec<usize> = (0..64).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut palette: Vec<[f64; 3]> = Vec::new();
    for &idx in order.iter().take(8) {
        if counts[idx] == 0 {
            break;
        }
        let n = counts[idx] as f64;
        palette.push([sums[idx][0] / n, sums[idx][1] / n, sums[idx][2] / n]);
    }
    let mut out = Tensor::zeros(albedo.shape());
    let mut labels = vec![0u8; hw];
    for k in 0..hw {
        let c = [
            albedo.data()[k],
            albedo.data()[hw + k],
            albedo.data()[2 * hw + k],
        ];
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (pi, p) in palette.iter().enumerate() {
            let d = crate::fm::sq(c[0] - p[0]) + crate::fm::sq(c[1] - p[1]) + crate::fm::sq(c[2] - p[2]);
            if d < best_d {
                best_d = d;
                best = pi;
            }
        }
        labels[k] = best as u8;
        for q in 0..3 {
            out.data_mut()[q * hw + k] = palette[best][q];
        }
    }
    (out, labels, w)
}

/// Shaded background color for a given lighting (flat background normals
/// face the camera).
pub fn shaded_background(light: [f64; 4]) -> [f64; 3] {
    let ldir = render::light_dir(light[2], light[3]);
    let s = light[0] + light[1] * ldir[2].max(0.0);
    [
        (BACKGROUND[0] * s).clamp(0.0, 1.0),
        (BACKGROUND[1] * s).clamp(0.0, 1.0),
        (BACKGROUND[2] * s).clamp(0.0, 1.0),
    ]
}

pub fn render_scene(spec: &SceneSpec, resolution: usize) -> Result<LabeledSample> {
    if !(-1.0..=1.0).contains(&spec.expression) {
        return Err(Error::config("expression outside [-1,1]"));
    }
    if spec.shape_params.len() != SHAPE_PARAM_COUNT {
        return Err(Error::config("bad shape parameter count"));
    }
    if !matches!(resolution, 16 | 32 | 64) {
        return Err(Error::config(format!(
            "resolution must be 16, 32 or 64, got {resolution}"
        )));
    }
    let camera = Camera::square(resolution);
    let (depth_gt, albedo_gt, canonical_mask) = canonical_maps(spec, resolution);
    let factors = SceneFactors::new(
        depth_gt.clone(),
        albedo_gt.clone(),
        spec.viewpoint,
        spec.lighting,
    )?;
    let border = shaded_background(spec.lighting);
    let image = render::render(&factors, &camera, &border);

    // pose the mask with the same resampling grid
    let mask_img = Tensor::from_fn(&[1, resolution, resolution], |k| {
        if canonical_mask[k] {
            1.0
        } else {
            0.0
        }
    });
    let posed = render::reproject(&mask_img, &depth_gt, spec.viewpoint, &camera, &[0.0]);
    let mask: Vec<bool> = posed.data().iter().map(|&v| v > 0.5).collect();

    Ok(LabeledSample {
        image,
        depth_gt,
        albedo_gt,
        mask,
        spec: spec.clone(),
    })
}

/// One corpus sample: scene index `index` under root seed `seed`.
pub fn generate_sample(
    seed: u64,
    index: usize,
    ranges: &SamplingRanges,
    style: Style,
    resolution: usize,
) -> Result<LabeledSample> {
    let spec = sample_scene(
        derive_seed_index(seed, "scene", index as u64),
        ranges,
        style,
    )?;
    render_scene(&spec, resolution)
}
