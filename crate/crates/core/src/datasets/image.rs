//! Pixel I/O, normalization and resampling.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A channel-major image with values in [-1, 1].
pub type ImageTensor = Tensor<f32>;

pub fn normalize_u8(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn denormalize(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Bilinear resampling of one plane with half-pixel centres (no corner
/// alignment), clamping at the borders.
pub fn resize_plane(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    if h == out_h && w == out_w {
        return src.to_vec();
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let coord = |o: usize, scale: f64, n: usize| -> (usize, usize, f32) {
        let c = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, (c - i0 as f64) as f32)
    };
    let xs: Vec<_> = (0..out_w).map(|x| coord(x, sx, w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, sy, h);
        let r0 = &src[y0 * w..(y0 + 1) * w];
        let r1 = &src[y1 * w..(y1 + 1) * w];
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bot - top) * fy);
        }
    }
    out
}

/// Averages `fy × fx` blocks; both factors must divide the source size.
pub fn box_downscale_plane(src: &[f32], h: usize, w: usize, fy: usize, fx: usize) -> Vec<f32> {
    let (out_h, out_w) = (h / fy, w / fx);
    let norm = 1.0 / (fy * fx) as f32;
    let mut out = vec![0.0f32; out_h * out_w];
    for y in 0..h {
        let row = &mut out[(y / fy) * out_w..(y / fy + 1) * out_w];
        for (x, &v) in src[y * w..(y + 1) * w].iter().enumerate() {
            row[x / fx] += v;
        }
    }
    out.iter_mut().for_each(|v| *v *= norm);
    out
}

/// Resamples every channel: block averaging for integer shrink factors,
/// bilinear otherwise.
pub fn resize(t: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    let (h, w) = (t.height, t.width);
    let integer_shrink =
        out_h > 0 && out_w > 0 && out_h < h && out_w < w && h % out_h == 0 && w % out_w == 0;
    let mut data = Vec::with_capacity(t.channels * out_h * out_w);
    for c in 0..t.channels {
        if integer_shrink {
            data.extend(box_downscale_plane(t.plane(c), h, w, h / out_h, w / out_w));
        } else {
            data.extend(resize_plane(t.plane(c), h, w, out_h, out_w));
        }
    }
    Tensor::from_vec(t.channels, out_h, out_w, data).expect("resize keeps shape consistent")
}

pub fn from_rgb(img: &RgbImage) -> ImageTensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(3, h, w);
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            t.data[(c * h + y as usize) * w + x as usize] = normalize_u8(p[c]);
        }
    }
    t
}

pub fn to_rgb(t: &ImageTensor) -> RgbImage {
    let (h, w) = (t.height, t.width);
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| {
            let c = if t.channels == 1 { 0 } else { c };
            denormalize(t.at(c, y as usize, x as usize))
        };
        Rgb([px(0), px(1), px(2)])
    })
}

/// Decodes an image file and resizes it to `size × size`.
pub fn read_image(path: &Path, size: usize) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok(resize(&from_rgb(&img.to_rgb8()), size, size))
}

pub fn write_png(t: &ImageTensor, path: &Path) -> Result<()> {
    to_rgb(t).save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
