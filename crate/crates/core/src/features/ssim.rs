//! Windowed SSIM between single-channel maps.
//!
//! Standard Gaussian-window SSIM (11×11, σ = 1.5, valid region only) with the
//! usual `C1 = (0.01 L)²`, `C2 = (0.03 L)²`. Fusion maps are unbounded
//! activations, so the dynamic range `L` is taken jointly from the pair
//! (max of both minus min of both, floored at 1e-6).

use crate::error::{Error, Result};

use super::FusionMap;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const MIN_RANGE: f64 = 1e-6;

fn gaussian_1d(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a row-major `h × w` plane.
fn filter_valid(data: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (i, &kv) in k.iter().enumerate() {
            let src = &horiz[(y + i) * ow..(y + i + 1) * ow];
            for (o, &s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    }
    out
}

/// Per-map quantities reused across every pair a map takes part in.
#[derive(Clone, Debug)]
pub struct SsimStats {
    height: usize,
    width: usize,
    kernel: Vec<f64>,
    data: Vec<f64>,
    mean: Vec<f64>,
    mean_sq: Vec<f64>,
    min: f64,
    max: f64,
}

impl SsimStats {
    pub fn new(map: &FusionMap) -> Self {
        let (h, w) = (map.height, map.width);
        let size = WINDOW.min(h).min(w);
        let kernel = gaussian_1d(size);
        let data: Vec<f64> = map.data.iter().map(|&v| v as f64).collect();
        let sq: Vec<f64> = data.iter().map(|v| v * v).collect();
        let (min, max) = data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Self {
            height: h,
            width: w,
            mean: filter_valid(&data, h, w, &kernel),
            mean_sq: filter_valid(&sq, h, w, &kernel),
            kernel,
            data,
            min,
            max,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Mean SSIM against `other`; shapes must agree.
    pub fn ssim(&self, other: &SsimStats) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "ssim of {:?} and {:?} maps",
                self.shape(),
                other.shape()
            )));
        }
        let range = (self.max.max(other.max) - self.min.min(other.min)).max(MIN_RANGE);
        let c1 = (K1 * range).powi(2);
        let c2 = (K2 * range).powi(2);
        let prod: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        let cross = filter_valid(&prod, self.height, self.width, &self.kernel);
        let mut total = 0.0;
        for i in 0..cross.len() {
            let (mx, my) = (self.mean[i], other.mean[i]);
            let vx = self.mean_sq[i] - mx * mx;
            let vy = other.mean_sq[i] - my * my;
            let cxy = cross[i] - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        Ok(total / cross.len() as f64)
    }
}

pub fn ssim(a: &FusionMap, b: &FusionMap) -> Result<f64> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::Shape(format!(
            "ssim of {}x{} and {}x{} maps",
            a.height, a.width, b.height, b.width
        )));
    }
    SsimStats::new(a).ssim(&SsimStats::new(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> FusionMap {
        FusionMap::new(h, w, (0..h * w).map(|i| f(i / w, i % w)).collect()).unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        let m = map(16, 16, |y, x| ((x * 3 + y * 7) % 11) as f32 - 4.0);
        assert!((ssim(&m, &m).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negated_structure_scores_negative() {
        // checkerboard carrier keeps every window mean near zero
        let m = map(16, 16, |y, x| {
            let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
            sign * (1.0 + 0.5 * ((x as f32) * 0.7).sin())
        });
        let neg = FusionMap::new(16, 16, m.data.iter().map(|v| -v).collect()).unwrap();
        assert!(ssim(&m, &neg).unwrap() < 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(ssim(&map(12, 12, |_, _| 0.0), &map(12, 13, |_, _| 0.0)).is_err());
    }

    #[test]
    fn small_maps_use_a_truncated_window() {
        let m = map(5, 6, |y, x| (x + 2 * y) as f32);
        let n = map(5, 6, |y, x| (x * y) as f32);
        let s = ssim(&m, &n).unwrap();
        assert!(s.is_finite() && (-1.0..=1.0).contains(&s));
    }

    #[test]
    fn window_sums_to_one() {
        let g = gaussian_1d(WINDOW);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(g[5] > g[4] && (g[0] - g[10]).abs() < 1e-18);
    }
}
