//! OBJ export of depth-map heightfields with per-vertex albedo colors
//! (the common `v x y z r g b` extension).

use std::fmt::Write as _;
use std::path::Path;

use toon3d_core::camera::Camera;
use toon3d_core::render::depth_to_mesh;
use toon3d_core::tensor::Tensor;

use crate::{io, Result};

pub fn write_obj(path: &Path, depth: &Tensor, albedo: &Tensor, camera: &Camera) -> Result<()> {
    let (positions, colors, tris) = depth_to_mesh(depth, albedo, camera);
    let mut text = String::with_capacity(positions.len() * 48);
    for (p, c) in positions.iter().zip(&colors) {
        // flip y and z so exported meshes are upright in the usual viewers
        writeln!(
            text,
            "v {:.6} {:.6} {:.6} {:.4} {:.4} {:.4}",
            p[0], -p[1], -p[2], c[0], c[1], c[2]
        )
        .expect("string write");
    }
    for t in &tris {
        writeln!(text, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("string write");
    }
    io::atomic_write(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn obj_has_expected_counts() {
        let dir = tempfile::tempdir().unwrap();
        let cam = Camera::square(8);
        let depth = Tensor::full(&[1, 8, 8], 1.0);
        let albedo = Tensor::full(&[3, 8, 8], 0.5);
        let p = dir.path().join("m.obj");
        write_obj(&p, &depth, &albedo, &cam).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 64);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 2 * 49);
    }
}
