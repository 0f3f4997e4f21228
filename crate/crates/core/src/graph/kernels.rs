//! Raw tensor kernels behind the graph ops. Everything is deterministic:
//! parallel loops split over disjoint output chunks and each output element
//! accumulates in a fixed sequential order.

use alloc::vec::Vec;

use crate::tensor::Tensor;

#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<F>(data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    use rayon::prelude::*;
    if chunk == 0 || data.is_empty() {
        return;
    }
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<F>(data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if chunk == 0 || data.is_empty() {
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected 4-d tensor, got {s:?}");
    (s[0], s[1], s[2], s[3])
}

pub fn conv2d_out_hw(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> (usize, usize) {
    ((h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1)
}

/// x: [N,Cin,H,W], w: [Cout,Cin,kh,kw] -> [N,Cout,Ho,Wo]
pub fn conv2d_fwd(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, cin, h, wd) = dims4(x);
    let (cout, cin2, kh, kw) = dims4(w);
    assert_eq!(cin, cin2, "conv2d channel mismatch");
    let (ho, wo) = conv2d_out_hw(h, wd, kh, kw, stride, pad);
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let xd = x.data();
    let wdta = w.data();
    let plane = ho * wo;
    for_each_chunk_mut(out.data_mut(), plane, |idx, oplane| {
        let ni = idx / cout;
        let co = idx % cout;
        for ci in 0..cin {
            let xbase = (ni * cin + ci) * h * wd;
            let wbase = (co * cin + ci) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wdta[wbase + ky * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * wd;
                        let orow = oy * wo;
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            oplane[orow + ox] += wv * xd[xrow + ix as usize];
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of conv2d output w.r.t. its input: g: [N,Cout,Ho,Wo] -> [N,Cin,H,W]
pub fn conv2d_dx(g: &Tensor, w: &Tensor, stride: usize, pad: usize, in_h: usize, in_w: usize) -> Tensor {
    let (n, cout, ho, wo) = dims4(g);
    let (cout2, cin, kh, kw) = dims4(w);
    assert_eq!(cout, cout2);
    let mut out = Tensor::zeros(&[n, cin, in_h, in_w]);
    let gd = g.data();
    let wd = w.data();
    let plane = in_h * in_w;
    for_each_chunk_mut(out.data_mut(), plane, |idx, oplane| {
        let ni = idx / cin;
        let ci = idx % cin;
        for co in 0..cout {
            let gbase = (ni * cout + co) * ho * wo;
            let wbase = (co * cin + ci) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wd[wbase + ky * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        let orow = iy as usize * in_w;
                        let grow = gbase + oy * wo;
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            oplane[orow + ix as usize] += wv * gd[grow + ox];
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of conv2d output w.r.t. weights.
pub fn conv2d_dw(
    x: &Tensor,
    g: &Tensor,
    stride: usize,
    pad: usize,
    kh: usize,
    kw: usize,
) -> Tensor {
    let (n, cin, h, wd) = dims4(x);
    let (n2, cout, ho, wo) = dims4(g);
    assert_eq!(n, n2);
    let mut out = Tensor::zeros(&[cout, cin, kh, kw]);
    let xd = x.data();
    let gd = g.data();
    let wplane = cin * kh * kw;
    for_each_chunk_mut(out.data_mut(), wplane, |co, wchunk| {
        for ni in 0..n {
            let gbase = (ni * cout + co) * ho * wo;
            for ci in 0..cin {
                let xbase = (ni * cin + ci) * h * wd;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = 0.0;
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * wd;
                            let grow = gbase + oy * wo;
                            for ox in 0..wo {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += xd[xrow + ix as usize] * gd[grow + ox];
                            }
                        }
                        wchunk[ci * kh * kw + ky * kw + kx] += acc;
                    }
                }
            }
        }
    });
    out
}

pub fn convt2d_out_hw(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> (usize, usize) {
    ((h - 1) * stride + kh - 2 * pad, (w - 1) * stride + kw - 2 * pad)
}

/// Transposed convolution. x: [N,Cin,H,W], w: [Cin,Cout,kh,kw].
pub fn convt2d_fwd(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, cin, h, wd) = dims4(x);
    let (cin2, cout, kh, kw) = dims4(w);
    assert_eq!(cin, cin2, "convt2d channel mismatch");
    let (ho, wo) = convt2d_out_hw(h, wd, kh, kw, stride, pad);
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let xd = x.data();
    let wdta = w.data();
    let plane = ho * wo;
    for_each_chunk_mut(out.data_mut(), plane, |idx, oplane| {
        let ni = idx / cout;
        let co = idx % cout;
        for ci in 0..cin {
            let xbase = (ni * cin + ci) * h * wd;
            let wbase = (ci * cout + co) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wdta[wbase + ky * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..h {
                        let oy = (y * stride + ky) as isize - pad as isize;
                        if oy < 0 || oy >= ho as isize {
                            continue;
                        }
                        let orow = oy as usize * wo;
                        let xrow = xbase + y * wd;
                        for xj in 0..wd {
                            let ox = (xj * stride + kx) as isize - pad as isize;
                            if ox < 0 || ox >= wo as isize {
                                continue;
                            }
                            oplane[orow + ox as usize] += wv * xd[xrow + xj];
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of convt2d w.r.t. its input.
pub fn convt2d_dx(g: &Tensor, w: &Tensor, stride: usize, pad: usize, in_h: usize, in_w: usize) -> Tensor {
    let (n, cout, _ho, _wo) = dims4(g);
    let (cin, cout2, kh, kw) = dims4(w);
    assert_eq!(cout, cout2);
    let (ho, wo) = (g.shape()[2], g.shape()[3]);
    let mut out = Tensor::zeros(&[n, cin, in_h, in_w]);
    let gd = g.data();
    let wd = w.data();
    let plane = in_h * in_w;
    for_each_chunk_mut(out.data_mut(), plane, |idx, oplane| {
        let ni = idx / cin;
        let ci = idx % cin;
        for co in 0..cout {
            let gbase = (ni * cout + co) * ho * wo;
            let wbase = (ci * cout + co) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wd[wbase + ky * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..in_h {
                        let oy = (y * stride + ky) as isize - pad as isize;
                        if oy < 0 || oy >= ho as isize {
                            continue;
                        }
                        let grow = gbase + oy as usize * wo;
                        let orow = y * in_w;
                        for xj in 0..in_w {
                            let ox = (xj * stride + kx) as isize - pad as isize;
                            if ox < 0 || ox >= wo as isize {
                                continue;
                            }
                            oplane[orow + xj] += wv * gd[grow + ox as usize];
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of convt2d w.r.t. weights.
pub fn convt2d_dw(x: &Tensor, g: &Tensor, stride: usize, pad: usize, kh: usize, kw: usize) -> Tensor {
    let (n, cin, h, wd) = dims4(x);
    let (n2, cout, ho, wo) = dims4(g);
    assert_eq!(n, n2);
    let mut out = Tensor::zeros(&[cin, cout, kh, kw]);
    let xd = x.data();
    let gd = g.data();
    let wplane = cout * kh * kw;
    for_each_chunk_mut(out.data_mut(), wplane, |ci, wchunk| {
        for ni in 0..n {
            let xbase = (ni * cin + ci) * h * wd;
            for co in 0..cout {
                let gbase = (ni * cout + co) * ho * wo;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = 0.0;
                        for y in 0..h {
                            let oy = (y * stride + ky) as isize - pad as isize;
                            if oy < 0 || oy >= ho as isize {
                                continue;
                            }
                            let xrow = xbase + y * wd;
                            let grow = gbase + oy as usize * wo;
                            for xj in 0..wd {
                                let ox = (xj * stride + kx) as isize - pad as isize;
                                if ox < 0 || ox >= wo as isize {
                                    continue;
                                }
                                acc += xd[xrow + xj] * gd[grow + ox as usize];
                            }
                        }
                        wchunk[co * kh * kw + ky * kw + kx] += acc;
                    }
                }
            }
        }
    });
    out
}

/// Nearest-neighbour 2x upsampling on the trailing two dims.
pub fn upsample2x(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = x.numel() / (h * w);
    let mut shape = s.to_vec();
    let ln = shape.len();
    shape[ln - 2] = 2 * h;
    shape[ln - 1] = 2 * w;
    let mut out = Tensor::zeros(&shape);
    let xd = x.data();
    let od = out.data_mut();
    for p in 0..planes {
        let xb = p * h * w;
        let ob = p * 4 * h * w;
        for i in 0..h {
            for j in 0..w {
                let v = xd[xb + i * w + j];
                let o = ob + 2 * i * 2 * w + 2 * j;
                od[o] = v;
                od[o + 1] = v;
                od[o + 2 * w] = v;
                od[o + 2 * w + 1] = v;
            }
        }
    }
    out
}

pub fn upsample2x_adjoint(g: &Tensor) -> Tensor {
    let s = g.shape();
    let (h2, w2) = (s[s.len() - 2], s[s.len() - 1]);
    let (h, w) = (h2 / 2, w2 / 2);
    let planes = g.numel() / (h2 * w2);
    let mut shape = s.to_vec();
    let ln = shape.len();
    shape[ln - 2] = h;
    shape[ln - 1] = w;
    let mut out = Tensor::zeros(&shape);
    let gd = g.data();
    let od = out.data_mut();
    for p in 0..planes {
        let ob = p * h * w;
        let gb = p * h2 * w2;
        for i in 0..h {
            for j in 0..w {
                let g0 = gb + 2 * i * w2 + 2 * j;
                od[ob + i * w + j] = gd[g0] + gd[g0 + 1] + gd[g0 + w2] + gd[g0 + w2 + 1];
            }
        }
    }
    out
}

/// Central differences along the trailing axis; one-sided at the borders.
/// For width 1 the derivative is defined as zero.
pub fn diff_last(x: &Tensor, along_rows: bool) -> Tensor {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = x.numel() / (h * w);
    let mut out = Tensor::zeros(s);
    let xd = x.data();
    let od = out.data_mut();
    for p in 0..planes {
        let b = p * h * w;
        if along_rows {
            // d/dx: along the row (last axis)
            for i in 0..h {
                let r = b + i * w;
                if w == 1 {
                    od[r] = 0.0;
                    continue;
                }
                od[r] = xd[r + 1] - xd[r];
                for j in 1..w - 1 {
                    od[r + j] = 0.5 * (xd[r + j + 1] - xd[r + j - 1]);
                }
                od[r + w - 1] = xd[r + w - 1] - xd[r + w - 2];
            }
        } else {
            // d/dy: along the column (second-to-last axis)
            if h == 1 {
                continue;
            }
            for j in 0..w {
                od[b + j] = xd[b + w + j] - xd[b + j];
                for i in 1..h - 1 {
                    od[b + i * w + j] = 0.5 * (xd[b + (i + 1) * w + j] - xd[b + (i - 1) * w + j]);
                }
                od[b + (h - 1) * w + j] = xd[b + (h - 1) * w + j] - xd[b + (h - 2) * w + j];
            }
        }
    }
    out
}

pub fn diff_last_adjoint(g: &Tensor, along_rows: bool) -> Tensor {
    let s = g.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = g.numel() / (h * w);
    let mut out = Tensor::zeros(s);
    let gd = g.data();
    let od = out.data_mut();
    for p in 0..planes {
        let b = p * h * w;
        if along_rows {
            for i in 0..h {
                let r = b + i * w;
                if w == 1 {
                    continue;
                }
                od[r + 1] += gd[r];
                od[r] -= gd[r];
                for j in 1..w - 1 {
                    od[r + j + 1] += 0.5 * gd[r + j];
                    od[r + j - 1] -= 0.5 * gd[r + j];
                }
                od[r + w - 1] += gd[r + w - 1];
                od[r + w - 2] -= gd[r + w - 1];
            }
        } else {
            if h == 1 {
                continue;
            }
            for j in 0..w {
                od[b + w + j] += gd[b + j];
                od[b + j] -= gd[b + j];
                for i in 1..h - 1 {
                    od[b + (i + 1) * w + j] += 0.5 * gd[b + i * w + j];
                    od[b + (i - 1) * w + j] -= 0.5 * gd[b + i * w + j];
                }
                od[b + (h - 1) * w + j] += gd[b + (h - 1) * w + j];
                od[b + (h - 2) * w + j] -= gd[b + (h - 1) * w + j];
            }
        }
    }
    out
}

/// Interior second differences along the trailing axis: out width = w-2.
pub fn second_diff_last(x: &Tensor, along_rows: bool) -> Tensor {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = x.numel() / (h * w);
    let mut shape = s.to_vec();
    let ln = shape.len();
    if along_rows {
        shape[ln - 1] = w.saturating_sub(2);
    } else {
        shape[ln - 2] = h.saturating_sub(2);
    }
    let mut out = Tensor::zeros(&shape);
    if out.numel() == 0 {
        return out;
    }
    let xd = x.data();
    let od = out.data_mut();
    if along_rows {
        let wo = w - 2;
        for p in 0..planes {
            for i in 0..h {
                let r = p * h * w + i * w;
                let o = p * h * wo + i * wo;
                for j in 0..wo {
                    od[o + j] = xd[r + j + 2] - 2.0 * xd[r + j + 1] + xd[r + j];
                }
            }
        }
    } else {
        let ho = h - 2;
        for p in 0..planes {
            for i in 0..ho {
                for j in 0..w {
                    od[p * ho * w + i * w + j] =
                        xd[p * h * w + (i + 2) * w + j] - 2.0 * xd[p * h * w + (i + 1) * w + j]
                            + xd[p * h * w + i * w + j];
                }
            }
        }
    }
    out
}

pub fn second_diff_last_adjoint(g: &Tensor, along_rows: bool, in_h: usize, in_w: usize) -> Tensor {
    let s = g.shape();
    let mut shape = s.to_vec();
    let ln = shape.len();
    shape[ln - 2] = in_h;
    shape[ln - 1] = in_w;
    let mut out = Tensor::zeros(&shape);
    if g.numel() == 0 {
        return out;
    }
    let (ho, wo) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = g.numel() / (ho * wo);
    let gd = g.data();
    let od = out.data_mut();
    for p in 0..planes {
        for i in 0..ho {
            for j in 0..wo {
                let gv = gd[p * ho * wo + i * wo + j];
                if along_rows {
                    let r = p * in_h * in_w + i * in_w;
                    od[r + j] += gv;
                    od[r + j + 1] -= 2.0 * gv;
                    od[r + j + 2] += gv;
                } else {
                    let b = p * in_h * in_w;
                    od[b + i * in_w + j] += gv;
                    od[b + (i + 1) * in_w + j] -= 2.0 * gv;
                    od[b + (i + 2) * in_w + j] += gv;
                }
            }
        }
    }
    out
}

/// Bilinear sampling of `img` [C,H,W] at pixel-center coordinates
/// (`gu`,`gv`) [1,H,W]; taps outside the image use the per-channel fill.
pub fn grid_sample(img: &Tensor, gu: &Tensor, gv: &Tensor, fill: &[f64]) -> Tensor {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (oh, ow) = (gu.shape()[1], gu.shape()[2]);
    assert_eq!(fill.len(), c);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let id = img.data();
    let ud = gu.data();
    let vd = gv.data();
    let od = out.data_mut();
    for i in 0..oh {
        for j in 0..ow {
            let u = ud[i * ow + j];
            let v = vd[i * ow + j];
            let x0 = crate::fm::floor(u);
            let y0 = crate::fm::floor(v);
            let fx = u - x0;
            let fy = v - y0;
            let x0 = x0 as isize;
            let y0 = y0 as isize;
            let wgt = [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ];
            let taps = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)];
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, &(tx, ty)) in taps.iter().enumerate() {
                    let val = if tx >= 0 && tx < w as isize && ty >= 0 && ty < h as isize {
                        id[ch * h * w + ty as usize * w + tx as usize]
                    } else {
                        fill[ch]
                    };
                    acc += wgt[t] * val;
                }
                od[ch * oh * ow + i * ow + j] = acc;
            }
        }
    }
    out
}

/// Gradients of [`grid_sample`] w.r.t. image and both grid maps.
pub fn grid_sample_bwd(
    img: &Tensor,
    gu: &Tensor,
    gv: &Tensor,
    fill: &[f64],
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (oh, ow) = (gu.shape()[1], gu.shape()[2]);
    let mut dimg = Tensor::zeros(&[c, h, w]);
    let mut du = Tensor::zeros(&[1, oh, ow]);
    let mut dv = Tensor::zeros(&[1, oh, ow]);
    let id = img.data();
    let ud = gu.data();
    let vd = gv.data();
    let gd = g.data();
    let fetch = |ch: usize, tx: isize, ty: isize| -> f64 {
        if tx >= 0 && tx < w as isize && ty >= 0 && ty < h as isize {
            id[ch * h * w + ty as usize * w + tx as usize]
        } else {
            fill[ch]
        }
    };
    for i in 0..oh {
        for j in 0..ow {
            let u = ud[i * ow + j];
            let v = vd[i * ow + j];
            let x0f = crate::fm::floor(u);
            let y0f = crate::fm::floor(v);
            let fx = u - x0f;
            let fy = v - y0f;
            let x0 = x0f as isize;
            let y0 = y0f as isize;
            let mut du_acc = 0.0;
            let mut dv_acc = 0.0;
            for ch in 0..c {
                let gv_out = gd[ch * oh * ow + i * ow + j];
                if gv_out == 0.0 {
                    continue;
                }
                let v00 = fetch(ch, x0, y0);
                let v10 = fetch(ch, x0 + 1, y0);
                let v01 = fetch(ch, x0, y0 + 1);
                let v11 = fetch(ch, x0 + 1, y0 + 1);
                // d out / du and / dv
                du_acc += gv_out * ((1.0 - fy) * (v10 - v00) + fy * (v11 - v01));
                dv_acc += gv_out * ((1.0 - fx) * (v01 - v00) + fx * (v11 - v10));
                // scatter into image taps that are inside
                let wgt = [
                    (x0, y0, (1.0 - fx) * (1.0 - fy)),
                    (x0 + 1, y0, fx * (1.0 - fy)),
                    (x0, y0 + 1, (1.0 - fx) * fy),
                    (x0 + 1, y0 + 1, fx * fy),
                ];
                for &(tx, ty, wv) in &wgt {
                    if tx >= 0 && tx < w as isize && ty >= 0 && ty < h as isize {
                        dimg.data_mut()[ch * h * w + ty as usize * w + tx as usize] += wv * gv_out;
                    }
                }
            }
            du.data_mut()[i * ow + j] = du_acc;
            dv.data_mut()[i * ow + j] = dv_acc;
        }
    }
    (dimg, du, dv)
}

/// Instance norm forward over trailing HW per (N,C) slice; returns the
/// normalized tensor plus per-slice (mean, inv_std) for the backward pass.
pub fn instance_norm_fwd(x: &Tensor, eps: f64) -> (Tensor, Vec<(f64, f64)>) {
    let (n, c, h, w) = dims4(x);
    let m = (h * w) as f64;
    let mut out = Tensor::zeros(x.shape());
    let mut stats = Vec::with_capacity(n * c);
    let xd = x.data();
    let od = out.data_mut();
    for p in 0..n * c {
        let b = p * h * w;
        let sl = &xd[b..b + h * w];
        let mean = sl.iter().sum::<f64>() / m;
        let var = sl.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        let inv = 1.0 / crate::fm::sqrt(var + eps);
        for k in 0..h * w {
            od[b + k] = (sl[k] - mean) * inv;
        }
        stats.push((mean, inv));
    }
    (out, stats)
}

pub fn instance_norm_bwd(x: &Tensor, stats: &[(f64, f64)], g: &Tensor) -> Tensor {
    let (n, c, h, w) = dims4(x);
    let m = (h * w) as f64;
    let mut out = Tensor::zeros(x.shape());
    let xd = x.data();
    let gd = g.data();
    let od = out.data_mut();
    for p in 0..n * c {
        let b = p * h * w;
        let (mean, inv) = stats[p];
        let gsl = &gd[b..b + h * w];
        let gsum: f64 = gsl.iter().sum();
        let mut gdot = 0.0;
        for k in 0..h * w {
            gdot += gsl[k] * (xd[b + k] - mean) * inv;
        }
        for k in 0..h * w {
            let xh = (xd[b + k] - mean) * inv;
            od[b + k] = inv * (gsl[k] - gsum / m - xh * gdot / m);
        }
    }
    out
}
