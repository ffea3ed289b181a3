//! 6-DoF pose regression from frozen fusion features (or raw RGB for the
//! baselines), with translation/orientation error metrics.

mod model;
mod net;

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::datasets::image::resize_plane;
use crate::datasets::{FrameId, ImageTensor};
use crate::error::{Error, IoContext, Result};
use crate::features::FusionMap;
use crate::geometry::{Pose, Quat};
use crate::nn::AdamConfig;
use crate::plot::line_plot;

pub use model::{
    load_pose_model, predict_pose, save_pose_model, train_pose, train_pose_rgb, InputKind,
    PoseModel, TrainingExample, POSE_MODEL_KIND,
};
pub use net::{PoseNet, PoseNetSpec, PoseTrace, RawPose};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPolicy {
    /// Copy the map into three identical channels.
    #[default]
    Replicate3,
    Single,
}

impl ChannelPolicy {
    pub fn channels(self) -> usize {
        match self {
            ChannelPolicy::Replicate3 => 3,
            ChannelPolicy::Single => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseTrainConfig {
    /// Orientation weight β.
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    pub init_sigma: f64,
    pub input_size: usize,
    pub channel_policy: ChannelPolicy,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Output channels of the stride-2 conv blocks.
    pub widths: Vec<usize>,
    pub fc_width: usize,
    /// Fraction of examples held out for best-model selection (0 disables).
    pub val_fraction: f64,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for PoseTrainConfig {
    fn default() -> Self {
        Self {
            beta: 250.0,
            lr: 1e-4,
            batch_size: 75,
            max_iters: 15_000,
            init_sigma: 0.01,
            input_size: 256,
            channel_policy: ChannelPolicy::Replicate3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-10,
            widths: vec![16, 32, 64, 128, 128],
            fc_width: 128,
            val_fraction: 0.0,
            eval_every: 100,
            seed: 0,
        }
    }
}

impl PoseTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.beta > 0.0) {
            return bad("beta must be > 0");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 1)");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

const VARIANCE_FLOOR: f64 = 1e-6;

/// Bilinear resize to `size²`, per-map standardization, channel policy.
pub fn prepare_input(fmap: &FusionMap, size: usize, policy: ChannelPolicy) -> Result<ImageTensor> {
    if fmap.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "fusion map has non-finite values".into(),
        ));
    }
    let plane = resize_plane(&fmap.data, fmap.height, fmap.width, size, size);
    let n = plane.len() as f64;
    let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = plane
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let inv = 1.0 / var.max(VARIANCE_FLOOR).sqrt();
    let std: Vec<f32> = plane
        .iter()
        .map(|&v| ((v as f64 - mean) * inv) as f32)
        .collect();
    let c = policy.channels();
    let mut data = Vec::with_capacity(c * std.len());
    for _ in 0..c {
        data.extend_from_slice(&std);
    }
    ImageTensor::from_vec(c, size, size, data)
}

/// Raw image input for the RGB baselines: bilinear resize only.
pub fn prepare_rgb(image: &ImageTensor, size: usize) -> ImageTensor {
    if image.height == size && image.width == size {
        return image.clone();
    }
    crate::datasets::image::resize(image, size, size)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖x̂ − x‖ + β‖q̂ − q‖`, with the ground-truth quaternion normalized and
/// sign-aligned to the (unnormalized) prediction.
pub fn pose_loss(pred_x: [f64; 3], pred_q: [f64; 4], gt: &Pose, beta: f64) -> Result<f64> {
    Ok(pose_loss_grad(pred_x, pred_q, gt, beta)?.0)
}

/// Loss plus its gradients with respect to `pred_x` and `pred_q`. The norm's
/// gradient is taken as zero where the difference vanishes.
pub fn pose_loss_grad(
    pred_x: [f64; 3],
    pred_q: [f64; 4],
    gt: &Pose,
    beta: f64,
) -> Result<(f64, [f64; 3], [f64; 4])> {
    let q = gt
        .orientation
        .normalized()
        .ok_or_else(|| Error::InvalidArgument("ground-truth quaternion has zero norm".into()))?
        .aligned_to(Quat::from_array(pred_q))
        .to_array();
    let dx: Vec<f64> = pred_x.iter().zip(gt.position).map(|(a, b)| a - b).collect();
    let dq: Vec<f64> = pred_q.iter().zip(q).map(|(a, b)| a - b).collect();
    let (nx, nq) = (norm(&dx), norm(&dq));
    let unit = |d: &[f64], n: f64, scale: f64, out: &mut [f64]| {
        if n > 1e-12 {
            for (o, v) in out.iter_mut().zip(d) {
                *o = scale * v / n;
            }
        }
    };
    let mut gx = [0.0; 3];
    let mut gq = [0.0; 4];
    unit(&dx, nx, 1.0, &mut gx);
    unit(&dq, nq, beta, &mut gq);
    Ok((nx + beta * nq, gx, gq))
}

/// Rotation angle between two orientations in degrees, `2·acos(|⟨q1,q2⟩|)`.
pub fn quaternion_angle(q1: Quat, q2: Quat) -> f64 {
    let unit = |q: Quat| {
        if (q.norm() - 1.0).abs() > 1e-6 {
            warn!("quaternion of norm {:.6} renormalized", q.norm());
        }
        q.normalized().unwrap_or(Quat::IDENTITY)
    };
    let d = unit(q1).dot(unit(q2)).abs().min(1.0);
    2.0 * d.acos().to_degrees()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub translation: f64,
    pub rotation_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEval {
    pub mean_translation: f64,
    pub mean_rotation_deg: f64,
    pub per_frame: Vec<FrameError>,
}

pub fn eval_pose(preds: &[Pose], gts: &[Pose]) -> Result<PoseEval> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground-truth poses",
            preds.len(),
            gts.len()
        )));
    }
    let per_frame: Vec<FrameError> = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| FrameError {
            translation: p.distance(g),
            rotation_deg: quaternion_angle(p.orientation, g.orientation),
        })
        .collect();
    let n = per_frame.len() as f64;
    Ok(PoseEval {
        mean_translation: per_frame.iter().map(|e| e.translation).sum::<f64>() / n,
        mean_rotation_deg: per_frame.iter().map(|e| e.rotation_deg).sum::<f64>() / n,
        per_frame,
    })
}

/// Writes `frame,px,py,pz,gx,gy,gz` and, when `plot` is given, a top-down
/// (x, z) overlay of ground truth and prediction.
pub fn export_trajectory(
    frames: &[FrameId],
    preds: &[Pose],
    gts: &[Pose],
    csv: &Path,
    plot: Option<&Path>,
) -> Result<()> {
    if preds.is_empty() || preds.len() != gts.len() || frames.len() != preds.len() {
        return Err(Error::InvalidArgument(
            "trajectory needs equal, non-empty lists".into(),
        ));
    }
    let mut out = String::from("frame,px,py,pz,gx,gy,gz\n");
    for ((f, p), g) in frames.iter().zip(preds).zip(gts) {
        let (a, b) = (p.position, g.position);
        out.push_str(&format!(
            "{f},{},{},{},{},{},{}\n",
            a[0], a[1], a[2], b[0], b[1], b[2]
        ));
    }
    fs::write(csv, out).at(csv)?;
    if let Some(plot) = plot {
        let top = |ps: &[Pose]| {
            ps.iter()
                .map(|p| (p.position[0], p.position[2]))
                .collect::<Vec<_>>()
        };
        line_plot(&[top(gts), top(preds)], plot, true)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(p: [f64; 3], q: Quat) -> Pose {
        Pose::new(p, q)
    }

    #[test]
    fn exact_prediction_has_zero_loss() {
        let q = Quat::from_axis_angle([0.0, 1.0, 0.0], 0.3);
        let g = pose([1.0, 2.0, 3.0], q);
        assert!(pose_loss([1.0, 2.0, 3.0], q.to_array(), &g, 250.0).unwrap() < 1e-12);
        // the double cover costs nothing
        assert!(pose_loss([1.0, 2.0, 3.0], (-q).to_array(), &g, 250.0).unwrap() < 1e-12);
    }

    #[test]
    fn position_offset_is_euclidean() {
        let g = pose([0.0; 3], Quat::IDENTITY);
        let l = pose_loss([3.0, 4.0, 0.0], [1.0, 0.0, 0.0, 0.0], &g, 250.0).unwrap();
        assert!((l - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        let g = pose([0.0; 3], Quat::new(0.0, 0.0, 0.0, 0.0));
        assert!(pose_loss([0.0; 3], [1.0, 0.0, 0.0, 0.0], &g, 1.0).is_err());
    }

    #[test]
    fn angle_cases() {
        let q = Quat::from_axis_angle([0.3, 0.4, 0.5], 1.1)
            .normalized()
            .unwrap();
        assert!(quaternion_angle(q, q) < 1e-6);
        assert!(quaternion_angle(q, -q) < 1e-6);
        let z90 = Quat::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        assert!((quaternion_angle(Quat::IDENTITY, z90) - 90.0).abs() < 1e-6);
    }

    #[test]
    fn standardized_input() {
        let m = FusionMap::new(4, 4, (0..16).map(|i| i as f32 * 0.5 + 3.0).collect()).unwrap();
        let t = prepare_input(&m, 16, ChannelPolicy::Replicate3).unwrap();
        assert_eq!(t.shape(), (3, 16, 16));
        let p = t.plane(0);
        let mean = p.iter().map(|&v| v as f64).sum::<f64>() / 256.0;
        let var = p.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 256.0;
        assert!(mean.abs() < 1e-4 && (var - 1.0).abs() < 1e-4);
        assert_eq!(t.plane(0), t.plane(2));
        let flat = FusionMap::new(2, 2, vec![7.0; 4]).unwrap();
        assert!(prepare_input(&flat, 4, ChannelPolicy::Single)
            .unwrap()
            .data
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn eval_offsets() {
        let g: Vec<Pose> = (0..4)
            .map(|i| pose([i as f64, 0.0, 0.0], Quat::IDENTITY))
            .collect();
        let p: Vec<Pose> = g
            .iter()
            .map(|q| pose([q.position[0], 2.0, 0.0], Quat::IDENTITY))
            .collect();
        let e = eval_pose(&p, &g).unwrap();
        assert!((e.mean_translation - 2.0).abs() < 1e-12 && e.mean_rotation_deg == 0.0);
        assert!(eval_pose(&p[..3], &g).is_err());
    }
}
