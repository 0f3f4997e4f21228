//! File IO: PNG codecs for images / depth / masks, archive files, and
//! atomic (write-temp-then-rename) output.

use std::fs;
use std::path::Path;

use toon3d_core::params::{self, Archive};
use toon3d_core::render::{FAR, NEAR};
use toon3d_core::tensor::Tensor;

use crate::{CliError, Result};

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_archive(path: &Path, archive: &Archive) -> Result<String> {
    let bytes = params::encode(archive);
    atomic_write(path, &bytes)?;
    Ok(params::archive_hash(&bytes))
}

pub fn read_archive(path: &Path) -> Result<(Archive, String)> {
    let bytes = fs::read(path)?;
    let a = params::decode(&bytes)?;
    Ok((a, params::archive_hash(&bytes)))
}

/// [3,H,W] in [0,1] -> 8-bit RGB PNG.
pub fn write_image_png(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let hw = h * w;
    let mut buf = Vec::with_capacity(hw * 3);
    for k in 0..hw {
        for c in 0..3 {
            buf.push((image.data()[c * hw + k].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let img: image::RgbImage =
        image::ImageBuffer::from_vec(w as u32, h as u32, buf).expect("buffer size");
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("png.tmp");
    img.save_with_format(&tmp, image::ImageFormat::Png)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_image_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let hw = h * w;
    let mut t = Tensor::zeros(&[3, h, w]);
    for (k, px) in img.pixels().enumerate() {
        for c in 0..3 {
            t.data_mut()[c * hw + k] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(t)
}

/// [1,H,W] depth in [NEAR, FAR] -> 16-bit grayscale PNG, linear mapping.
pub fn write_depth_png(path: &Path, depth: &Tensor) -> Result<()> {
    let (h, w) = (depth.shape()[1], depth.shape()[2]);
    let buf: Vec<u16> = depth
        .data()
        .iter()
        .map(|&d| (((d - NEAR) / (FAR - NEAR)).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_vec(w as u32, h as u32, buf).expect("buffer size");
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("png.tmp");
    img.save_with_format(&tmp, image::ImageFormat::Png)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_depth_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
        .to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[1, h, w]);
    for (k, px) in img.pixels().enumerate() {
        t.data_mut()[k] = NEAR + (px.0[0] as f64 / 65535.0) * (FAR - NEAR);
    }
    Ok(t)
}

/// Row-major boolean mask -> 1-bit grayscale PNG.
pub fn write_mask_png(path: &Path, mask: &[bool], h: usize, w: usize) -> Result<()> {
    assert_eq!(mask.len(), h * w);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("png.tmp");
    {
        let file = fs::File::create(&tmp)?;
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut writer = enc
            .write_header()
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let row_bytes = w.div_ceil(8);
        let mut packed = vec![0u8; row_bytes * h];
        for i in 0..h {
            for j in 0..w {
                if mask[i * w + j] {
                    packed[i * row_bytes + j / 8] |= 0x80 >> (j % 8);
                }
            }
        }
        writer
            .write_image_data(&packed)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<Vec<bool>> {
    let file = fs::File::open(path)?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or_default()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let mut mask = Vec::with_capacity(w * h);
    for k in 0..w * h {
        mask.push(buf[k] != 0);
    }
    Ok(mask)
}

/// Normal map [3,H,W] in [-1,1] -> RGB8 PNG with the (n+1)/2 encoding.
pub fn write_normals_png(path: &Path, normals: &Tensor) -> Result<()> {
    let encoded = normals.map(|v| (v + 1.0) / 2.0);
    write_image_png(path, &encoded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use toon3d_core::rng::{rng_from_seed, uniform};

    #[test]
    fn image_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng_from_seed(1);
        let img = Tensor::from_fn(&[3, 9, 7], |_| uniform(&mut r, 0.0, 1.0));
        let p = dir.path().join("x.png");
        write_image_png(&p, &img).unwrap();
        let back = read_image_png(&p).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(img.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-9);
    }

    #[test]
    fn depth_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng_from_seed(2);
        let d = Tensor::from_fn(&[1, 8, 8], |_| uniform(&mut r, NEAR, FAR));
        let p = dir.path().join("d.png");
        write_depth_png(&p, &d).unwrap();
        let back = read_depth_png(&p).unwrap();
        assert!(d.max_abs_diff(&back) <= (FAR - NEAR) * 0.5 / 65535.0 + 1e-9);
    }

    #[test]
    fn mask_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng_from_seed(3);
        let mask: Vec<bool> = (0..11 * 13).map(|_| uniform(&mut r, 0.0, 1.0) > 0.5).collect();
        let p = dir.path().join("m.png");
        write_mask_png(&p, &mask, 11, 13).unwrap();
        let back = read_mask_png(&p).unwrap();
        assert_eq!(mask, back);
    }

    #[test]
    fn png_encoding_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng_from_seed(4);
        let img = Tensor::from_fn(&[3, 16, 16], |_| uniform(&mut r, 0.0, 1.0));
        let p1 = dir.path().join("a.png");
        let p2 = dir.path().join("b.png");
        write_image_png(&p1, &img).unwrap();
        write_image_png(&p2, &img).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }
}
