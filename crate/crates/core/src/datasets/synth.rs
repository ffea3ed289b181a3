//! Procedural multi-condition driving sequences.
//!
//! A camera drives along a gently curving road through a field of trees,
//! poles and houses. Geometry and poses are shared by every condition; each
//! condition only recolours the rendering (hue, saturation, tint, contrast)
//! and optionally sprinkles speckle (snow, rain).

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Quat};
use crate::rng::substream;
use crate::tensor::Tensor;

use super::image::ImageTensor;
use super::pose::{CorrespondenceSet, FrameId, PoseEntry, PoseTrack};
use super::{LabeledImage, MultiDomainDataset};

const ROAD_AMPLITUDE: f64 = 2.0;
const ROAD_WAVELENGTH: f64 = 9.0;
const ROAD_HALF_WIDTH: f64 = 1.3;
const CAMERA_HEIGHT: f64 = 1.6;
const CAMERA_PITCH_DEG: f64 = 4.0;
const HFOV_DEG: f64 = 75.0;
const FRAME_SPACING: f64 = 1.0;
const FOG_DISTANCE: f64 = 45.0;
const SUN: [f64; 3] = [0.48, 0.3, 0.82];

/// Photometric recipe of one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub name: String,
    pub hue_shift_deg: f64,
    pub saturation: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub tint: [f64; 3],
    pub speckle_density: f64,
    pub speckle_color: [f64; 3],
}

impl ConditionSpec {
    fn plain(name: &str) -> Self {
        Self {
            name: name.to_string(),
            hue_shift_deg: 0.0,
            saturation: 1.0,
            brightness: 0.0,
            contrast: 1.0,
            tint: [1.0; 3],
            speckle_density: 0.0,
            speckle_color: [1.0; 3],
        }
    }

    /// Built-in conditions: spring, summer, fall, winter, morning, overcast,
    /// rain and sunset.
    pub fn builtin(name: &str) -> Result<Self> {
        let base = Self::plain(name);
        let spec = match name {
            "summer" => Self {
                saturation: 1.1,
                ..base
            },
            "spring" => Self {
                hue_shift_deg: 12.0,
                brightness: 0.04,
                contrast: 0.95,
                tint: [1.0, 1.02, 0.97],
                ..base
            },
            "fall" => Self {
                hue_shift_deg: -42.0,
                saturation: 1.15,
                brightness: -0.03,
                tint: [1.08, 0.96, 0.84],
                ..base
            },
            "winter" => Self {
                saturation: 0.3,
                brightness: 0.12,
                contrast: 0.75,
                tint: [0.95, 0.98, 1.08],
                speckle_density: 0.05,
                speckle_color: [0.95, 0.95, 0.97],
                ..base
            },
            "morning" => Self {
                hue_shift_deg: 5.0,
                saturation: 0.9,
                brightness: -0.05,
                contrast: 0.9,
                tint: [1.1, 1.0, 0.85],
                ..base
            },
            "overcast" => Self {
                saturation: 0.5,
                brightness: -0.02,
                contrast: 0.7,
                tint: [0.95, 0.97, 1.0],
                ..base
            },
            "rain" => Self {
                saturation: 0.6,
                brightness: -0.15,
                contrast: 0.75,
                tint: [0.9, 0.95, 1.05],
                speckle_density: 0.02,
                speckle_color: [0.7, 0.75, 0.85],
                ..base
            },
            "sunset" => Self {
                hue_shift_deg: -15.0,
                saturation: 1.2,
                brightness: -0.12,
                contrast: 1.1,
                tint: [1.2, 0.85, 0.7],
                ..base
            },
            other => return Err(Error::UnknownCondition(other.to_string())),
        };
        Ok(spec)
    }

    fn apply(&self, rgb: [f64; 3]) -> [f64; 3] {
        let (h, s, v) = rgb_to_hsv(rgb);
        let h = (h + self.hue_shift_deg).rem_euclid(360.0);
        let s = (s * self.saturation).clamp(0.0, 1.0);
        let c = hsv_to_rgb(h, s, v);
        let mut out = [0.0; 3];
        for i in 0..3 {
            let t = c[i] * self.tint[i];
            out[i] = ((t - 0.5) * self.contrast + 0.5 + self.brightness).clamp(0.0, 1.0);
        }
        out
    }
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max <= 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_per_condition: usize,
    pub conditions: Vec<String>,
    pub size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_per_condition: 50,
            conditions: ["spring", "summer", "fall", "winter"]
                .map(String::from)
                .to_vec(),
            size: 64,
        }
    }
}

#[derive(Clone, Debug)]
enum Shape {
    Cylinder {
        center: [f64; 2],
        radius: f64,
        height: f64,
    },
    Box {
        min: [f64; 2],
        max: [f64; 2],
        height: f64,
    },
}

#[derive(Clone, Debug)]
struct Landmark {
    shape: Shape,
    color: [f64; 3],
    stripes: f64,
}

struct Scene {
    landmarks: Vec<Landmark>,
    noise_seed: u64,
}

fn road_center(x: f64) -> f64 {
    ROAD_AMPLITUDE * (x / ROAD_WAVELENGTH).sin()
}

fn road_slope(x: f64) -> f64 {
    ROAD_AMPLITUDE / ROAD_WAVELENGTH * (x / ROAD_WAVELENGTH).cos()
}

fn hash2(seed: u64, x: i64, y: i64) -> f64 {
    let mut h = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (s(fx), s(fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash2(seed, ix, iy);
    let b = hash2(seed, ix + 1, iy);
    let c = hash2(seed, ix, iy + 1);
    let d = hash2(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bot = c + (d - c) * sx;
    top + (bot - top) * sy
}

impl Scene {
    fn generate(seed: u64, path_len: f64) -> Self {
        let mut rng = substream(seed, "synth.scene");
        let mut landmarks = Vec::new();
        let mut x = -12.0;
        while x < path_len + 40.0 {
            for side in [-1.0, 1.0] {
                if rng.random::<f64>() < 0.25 {
                    continue;
                }
                let cx = x + rng.random_range(-0.8..0.8);
                let offset = rng.random_range(ROAD_HALF_WIDTH + 1.0..ROAD_HALF_WIDTH + 8.0);
                let cy = road_center(cx) + side * offset;
                let kind = rng.random::<f64>();
                let color = [
                    rng.random_range(0.15..0.9),
                    rng.random_range(0.15..0.9),
                    rng.random_range(0.15..0.9),
                ];
                let shape = if kind < 0.45 {
                    Shape::Cylinder {
                        center: [cx, cy],
                        radius: rng.random_range(0.2..0.6),
                        height: rng.random_range(2.0..6.5),
                    }
                } else {
                    let hx = rng.random_range(0.6..2.2);
                    let hy = rng.random_range(0.6..2.2);
                    Shape::Box {
                        min: [cx - hx, cy - hy],
                        max: [cx + hx, cy + hy],
                        height: rng.random_range(1.5..4.5),
                    }
                };
                landmarks.push(Landmark {
                    shape,
                    color,
                    stripes: rng.random_range(1.5..4.0),
                });
            }
            x += rng.random_range(1.8..3.2);
        }
        Self {
            landmarks,
            noise_seed: rng.random(),
        }
    }

    fn ground_color(&self, x: f64, y: f64) -> [f64; 3] {
        let lateral = (y - road_center(x)).abs();
        if lateral < ROAD_HALF_WIDTH {
            let dash = lateral < 0.08 && (x * 0.5).rem_euclid(1.0) < 0.5;
            let grit = 0.05 * value_noise(self.noise_seed ^ 1, x * 3.0, y * 3.0);
            return if dash {
                [0.9, 0.88, 0.7]
            } else {
                [0.33 + grit, 0.33 + grit, 0.35 + grit]
            };
        }
        let n = 0.6 * value_noise(self.noise_seed, x * 0.35, y * 0.35)
            + 0.4 * value_noise(self.noise_seed ^ 2, x * 1.3, y * 1.3);
        [0.18 + 0.25 * n, 0.42 + 0.3 * n, 0.12 + 0.1 * n]
    }

    fn sky_color(dir: [f64; 3]) -> [f64; 3] {
        let t = dir[2].clamp(0.0, 1.0).sqrt();
        [0.75 - 0.4 * t, 0.85 - 0.3 * t, 0.95 - 0.05 * t]
    }

    /// Nearest landmark hit: (distance, surface normal, colour).
    fn hit_landmark(&self, o: [f64; 3], d: [f64; 3]) -> Option<(f64, [f64; 3], [f64; 3])> {
        let mut best: Option<(f64, [f64; 3], [f64; 3])> = None;
        for lm in &self.landmarks {
            let hit = match &lm.shape {
                Shape::Cylinder {
                    center,
                    radius,
                    height,
                } => {
                    let (px, py) = (o[0] - center[0], o[1] - center[1]);
                    let a = d[0] * d[0] + d[1] * d[1];
                    let b = 2.0 * (px * d[0] + py * d[1]);
                    let c = px * px + py * py - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if a < 1e-12 || disc < 0.0 {
                        None
                    } else {
                        let t = (-b - disc.sqrt()) / (2.0 * a);
                        let z = o[2] + t * d[2];
                        (t > 1e-6 && (0.0..=*height).contains(&z)).then(|| {
                            let nx = (px + t * d[0]) / radius;
                            let ny = (py + t * d[1]) / radius;
                            (t, [nx, ny, 0.0], z)
                        })
                    }
                }
                Shape::Box { min, max, height } => {
                    let lo = [min[0], min[1], 0.0];
                    let hi = [max[0], max[1], *height];
                    let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
                    let mut axis = 0;
                    for k in 0..3 {
                        if d[k].abs() < 1e-12 {
                            if o[k] < lo[k] || o[k] > hi[k] {
                                tmin = f64::INFINITY;
                            }
                            continue;
                        }
                        let t1 = (lo[k] - o[k]) / d[k];
                        let t2 = (hi[k] - o[k]) / d[k];
                        let (near, far) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                        if near > tmin {
                            tmin = near;
                            axis = k;
                        }
                        tmax = tmax.min(far);
                    }
                    (tmin <= tmax && tmin > 1e-6).then(|| {
                        let mut n = [0.0; 3];
                        n[axis] = -d[axis].signum();
                        (tmin, n, o[2] + tmin * d[2])
                    })
                }
            };
            if let Some((t, n, z)) = hit {
                if best.is_none_or(|b| t < b.0) {
                    let band = if (z * lm.stripes).rem_euclid(1.0) < 0.25 {
                        0.75
                    } else {
                        1.0
                    };
                    let c = lm.color.map(|v| v * band);
                    best = Some((t, n, c));
                }
            }
        }
        best
    }

    fn shade(&self, o: [f64; 3], d: [f64; 3]) -> [f64; 3] {
        let sky = Self::sky_color(d);
        let ground_t = (d[2] < -1e-9).then(|| -o[2] / d[2]);
        let lm = self.hit_landmark(o, d);
        let (t, color) = match (lm, ground_t) {
            (Some((tl, n, c)), g) if g.is_none_or(|tg| tl < tg) => {
                let lambert = (n[0] * SUN[0] + n[1] * SUN[1] + n[2] * SUN[2]).max(0.0);
                (tl, c.map(|v| v * (0.45 + 0.55 * lambert)))
            }
            (_, Some(tg)) => {
                let p = [o[0] + tg * d[0], o[1] + tg * d[1]];
                (
                    tg,
                    self.ground_color(p[0], p[1])
                        .map(|v| v * (0.55 + 0.45 * SUN[2])),
                )
            }
            _ => return sky,
        };
        let fog = 1.0 - (-t / FOG_DISTANCE).exp();
        [0, 1, 2].map(|i| color[i] * (1.0 - fog) + sky[i] * fog)
    }
}

fn camera_pose(frame: usize) -> (Pose, f64) {
    let x = frame as f64 * FRAME_SPACING;
    let heading = road_slope(x).atan();
    let pitch = CAMERA_PITCH_DEG.to_radians();
    let q = Quat::from_axis_angle([0.0, 0.0, 1.0], heading)
        * Quat::from_axis_angle([0.0, 1.0, 0.0], pitch);
    (Pose::new([x, road_center(x), CAMERA_HEIGHT], q), heading)
}

/// Base rendering in linear RGB `[0,1]`, row-major, with 2×2 supersampling.
fn render(scene: &Scene, pose: &Pose, size: usize) -> Vec<[f64; 3]> {
    let q = pose.orientation;
    let forward = q.rotate([1.0, 0.0, 0.0]);
    let left = q.rotate([0.0, 1.0, 0.0]);
    let up = q.rotate([0.0, 0.0, 1.0]);
    let half = (HFOV_DEG.to_radians() / 2.0).tan();
    let o = pose.position;
    let mut out = Vec::with_capacity(size * size);
    for py in 0..size {
        for px in 0..size {
            let mut acc = [0.0; 3];
            for (sx, sy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let u = (2.0 * (px as f64 + sx) / size as f64 - 1.0) * half;
                let v = (1.0 - 2.0 * (py as f64 + sy) / size as f64) * half;
                let d = [0, 1, 2].map(|i| forward[i] - u * left[i] + v * up[i]);
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                let c = scene.shade(o, d.map(|c| c / n));
                for i in 0..3 {
                    acc[i] += c[i] / 4.0;
                }
            }
            out.push(acc);
        }
    }
    out
}

fn to_tensor(pixels: &[[f64; 3]], size: usize) -> ImageTensor {
    let mut t = Tensor::zeros(3, size, size);
    for (i, p) in pixels.iter().enumerate() {
        for c in 0..3 {
            // quantize through 8 bits so on-disk PNGs reload bit-identically
            let byte = (p[c].clamp(0.0, 1.0) * 255.0).round() as u8;
            t.data[c * size * size + i] = super::image::normalize_u8(byte);
        }
    }
    t
}

/// Renders `n_per_condition` frames for every condition. All conditions share
/// geometry and camera path, so the correspondence set is the identity with
/// tolerance 0.
pub fn make_synthetic_seasons(
    cfg: &SynthConfig,
) -> Result<(MultiDomainDataset, PoseTrack, CorrespondenceSet)> {
    if cfg.n_per_condition < 2 {
        return Err(Error::InvalidArgument(
            "n_per_condition must be >= 2".into(),
        ));
    }
    if ![64, 128, 256].contains(&cfg.size) {
        return Err(Error::InvalidArgument(format!(
            "synthetic size must be 64, 128 or 256, got {}",
            cfg.size
        )));
    }
    let specs = cfg
        .conditions
        .iter()
        .map(|c| ConditionSpec::builtin(c))
        .collect::<Result<Vec<_>>>()?;
    let scene = Scene::generate(cfg.seed, cfg.n_per_condition as f64 * FRAME_SPACING);
    let mut track = PoseTrack::default();
    let mut bases = Vec::with_capacity(cfg.n_per_condition);
    for k in 0..cfg.n_per_condition {
        let (pose, _) = camera_pose(k);
        bases.push(render(&scene, &pose, cfg.size));
        track.entries.push(PoseEntry {
            frame: k as FrameId,
            pose,
        });
    }
    let mut images = Vec::new();
    let mut manifest = BTreeMap::new();
    for spec in &specs {
        let mut files = Vec::new();
        for (k, base) in bases.iter().enumerate() {
            let mut rng = substream(cfg.seed, &format!("synth.speckle.{}.{k}", spec.name));
            let pixels: Vec<[f64; 3]> = base
                .iter()
                .map(|&p| {
                    let c = spec.apply(p);
                    if spec.speckle_density > 0.0 && rng.random::<f64>() < spec.speckle_density {
                        let jitter = rng.random_range(-0.05..0.05);
                        spec.speckle_color.map(|v| (v + jitter).clamp(0.0, 1.0))
                    } else {
                        c
                    }
                })
                .collect();
            images.push(LabeledImage {
                image: to_tensor(&pixels, cfg.size),
                condition: spec.name.clone(),
                frame: k as FrameId,
            });
            files.push(format!("{}/{k:05}.png", spec.name));
        }
        manifest.insert(spec.name.clone(), files);
    }
    let corr = CorrespondenceSet::identity(0..cfg.n_per_condition as FrameId);
    Ok((
        MultiDomainDataset {
            root: PathBuf::new(),
            images,
            manifest,
        },
        track,
        corr,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_round_trip() {
        for rgb in [
            [0.2, 0.5, 0.1],
            [0.9, 0.1, 0.4],
            [0.3, 0.3, 0.3],
            [0.0, 0.0, 1.0],
        ] {
            let (h, s, v) = rgb_to_hsv(rgb);
            let back = hsv_to_rgb(h, s, v);
            for i in 0..3 {
                assert!((back[i] - rgb[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unknown_condition_is_fatal() {
        let cfg = SynthConfig {
            conditions: vec!["summer".into(), "monsoon".into()],
            n_per_condition: 2,
            ..Default::default()
        };
        assert!(matches!(
            make_synthetic_seasons(&cfg),
            Err(Error::UnknownCondition(_))
        ));
    }

    #[test]
    fn rejects_bad_sizes_and_counts() {
        let mut cfg = SynthConfig {
            n_per_condition: 1,
            ..Default::default()
        };
        assert!(make_synthetic_seasons(&cfg).is_err());
        cfg.n_per_condition = 2;
        cfg.size = 100;
        assert!(make_synthetic_seasons(&cfg).is_err());
    }

    #[test]
    fn camera_follows_the_road() {
        let (p, heading) = camera_pose(3);
        assert!((p.position[1] - road_center(3.0)).abs() < 1e-12);
        let f = p.orientation.rotate([1.0, 0.0, 0.0]);
        assert!((f[1].atan2(f[0]) - heading).abs() < 1e-9);
        assert!(f[2] < 0.0, "camera pitched down");
    }
}
