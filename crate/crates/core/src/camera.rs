//! Perspective pinhole camera at the origin looking down +z, principal point
//! at the image center, pixel centers at (j + 0.5, i + 0.5).

use crate::error::{Error, Result};
use crate::fm;
use crate::tensor::Tensor;

pub const DEFAULT_FOV_DEG: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
}

impl Camera {
    pub fn new(width: usize, height: usize, fov_deg: f64) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 60.0) {
            return Err(Error::config(alloc::format!(
                "camera fov must be in (0, 60) degrees, got {fov_deg}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::config("camera resolution must be positive"));
        }
        Ok(Camera {
            width,
            height,
            fov_deg,
        })
    }

    pub fn square(resolution: usize) -> Self {
        Camera::new(resolution, resolution, DEFAULT_FOV_DEG).unwrap()
    }

    /// Focal length in pixels; the configured field of view spans the
    /// smaller image dimension.
    pub fn focal_px(&self) -> f64 {
        let half = self.width.min(self.height) as f64 / 2.0;
        half / fm::tan(fm::deg_to_rad(self.fov_deg) / 2.0)
    }

    pub fn cx(&self) -> f64 {
        self.width as f64 / 2.0
    }

    pub fn cy(&self) -> f64 {
        self.height as f64 / 2.0
    }

    /// Normalized ray directions per pixel: x and y components of
    /// `((u - cx)/f, (v - cy)/f, 1)`, each as a [1,H,W] map. A point at
    /// z-depth d projects from `(dir_x * d, dir_y * d, d)`.
    pub fn dir_maps(&self) -> (Tensor, Tensor) {
        let f = self.focal_px();
        let (w, h) = (self.width, self.height);
        let dirx = Tensor::from_fn(&[1, h, w], |k| {
            let j = k % w;
            ((j as f64 + 0.5) - self.cx()) / f
        });
        let diry = Tensor::from_fn(&[1, h, w], |k| {
            let i = (k / w) % h;
            ((i as f64 + 0.5) - self.cy()) / f
        });
        (dirx, diry)
    }

    /// Projects a camera-space point to pixel-index coordinates (the grid
    /// convention of `grid_sample`: integer u is the center of column u).
    pub fn project_px(&self, x: f64, y: f64, z: f64) -> (f64, f64) {
        let f = self.focal_px();
        (
            f * x / z + self.cx() - 0.5,
            f * y / z + self.cy() - 0.5,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fov_bounds_enforced() {
        assert!(Camera::new(32, 32, 0.0).is_err());
        assert!(Camera::new(32, 32, 60.0).is_err());
        assert!(Camera::new(32, 32, 10.0).is_ok());
    }

    #[test]
    fn center_ray_is_axis() {
        let cam = Camera::square(4);
        let (dx, dy) = cam.dir_maps();
        // mean of the four central-ish pixels is exactly 0 by symmetry
        assert!(dx.mean().abs() < 1e-12);
        assert!(dy.mean().abs() < 1e-12);
    }

    #[test]
    fn project_unproject_consistency() {
        let cam = Camera::square(32);
        let (dx, dy) = cam.dir_maps();
        for &k in &[0usize, 17, 500, 1023] {
            let z = 1.05;
            let (px, py) = (dx.data()[k] * z, dy.data()[k] * z);
            let (u, v) = cam.project_px(px, py, z);
            let (j, i) = ((k % 32) as f64, (k / 32) as f64);
            assert!((u - j).abs() < 1e-9, "u {u} vs {j}");
            assert!((v - i).abs() < 1e-9);
        }
    }
}
