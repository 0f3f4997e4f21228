//! Figure-style image grids: tiles same-size [3,H,W] tensors into one image
//! with a thin separator.

use toon3d_core::tensor::Tensor;

const GAP: usize = 2;
const GAP_COLOR: f64 = 1.0;

pub fn compose_grid(images: &[Tensor], cols: usize) -> Tensor {
    assert!(!images.is_empty() && cols > 0);
    let (h, w) = (images[0].shape()[1], images[0].shape()[2]);
    let rows = images.len().div_ceil(cols);
    let gh = rows * h + (rows - 1) * GAP;
    let gw = cols * w + (cols - 1) * GAP;
    let mut out = Tensor::full(&[3, gh, gw], GAP_COLOR);
    let ghw = gh * gw;
    for (i, img) in images.iter().enumerate() {
        assert_eq!(img.shape(), images[0].shape(), "grid tiles must match");
        let r0 = (i / cols) * (h + GAP);
        let c0 = (i % cols) * (w + GAP);
        let hw = h * w;
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out.data_mut()[c * ghw + (r0 + y) * gw + (c0 + x)] =
                        img.data()[c * hw + y * w + x];
                }
            }
        }
    }
    out
}
