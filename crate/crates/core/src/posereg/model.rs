//! Trained pose regressors: fitting, inference and persistence.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::container::{Container, NamedTensor};
use crate::cyclegan::LayerName;
use crate::datasets::ImageTensor;
use crate::error::{Error, IoContext, Result};
use crate::features::{extract, FeatureExtractor, FusionMap};
use crate::geometry::{Pose, Quat};
use crate::nn::Adam;
use crate::rng::substream;

use super::net::PoseNet;
use super::{pose_loss_grad, prepare_input, prepare_rgb, PoseNetSpec, PoseTrainConfig};

pub const POSE_MODEL_KIND: &str = "pose_model";

/// What the regressor consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// Fusion maps of one layer of one frozen checkpoint.
    Fusion {
        layer: Option<LayerName>,
        checkpoint_hash: Option<String>,
    },
    /// Raw images (the RGB baselines).
    Rgb,
}

/// A prepared network input and its ground-truth pose.
#[derive(Clone, Debug)]
pub struct TrainingExample {
    pub input: ImageTensor,
    pub pose: Pose,
}

#[derive(Clone, Debug)]
pub struct PoseModel {
    pub config: PoseTrainConfig,
    pub input: InputKind,
    pub net: PoseNet<f32>,
    /// Positions are regressed as `mean + scale · output`.
    pub position_mean: [f64; 3],
    pub position_scale: f64,
    pub iterations: usize,
    pub final_loss: Option<f64>,
}

impl PoseModel {
    fn decode(&self, raw_x: [f32; 3], raw_q: [f32; 4]) -> Pose {
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = self.position_mean[k] + self.position_scale * raw_x[k] as f64;
        }
        let q = Quat::new(
            raw_q[0] as f64,
            raw_q[1] as f64,
            raw_q[2] as f64,
            raw_q[3] as f64,
        )
        .normalized()
        .unwrap_or(Quat::IDENTITY)
        .canonical();
        Pose::new(p, q)
    }

    /// Pose for an already prepared input.
    pub fn regress(&self, input: &ImageTensor) -> Result<Pose> {
        let (x, q) = self.net.forward(input)?;
        Ok(self.decode(x, q))
    }

    pub fn regress_batch(&self, inputs: &[ImageTensor]) -> Result<Vec<Pose>> {
        inputs.iter().map(|i| self.regress(i)).collect()
    }

    /// Network input for a fusion map under this model's configuration.
    pub fn prepare(&self, fmap: &FusionMap) -> Result<ImageTensor> {
        prepare_input(fmap, self.config.input_size, self.config.channel_policy)
    }
}

/// Fits a regressor to fusion maps. All maps must come from the same layer
/// and checkpoint; the extractor itself is never touched.
pub fn train_pose(
    cfg: &PoseTrainConfig,
    features: &[(FusionMap, Pose)],
    log_path: Option<&Path>,
) -> Result<PoseModel> {
    let first = features
        .first()
        .ok_or_else(|| Error::InvalidArgument("no training examples".into()))?;
    let (layer, hash) = (first.0.source_layer, first.0.source_checkpoint.clone());
    if let Some((m, _)) = features
        .iter()
        .find(|(m, _)| m.source_layer != layer || m.source_checkpoint != hash)
    {
        return Err(Error::InvalidArgument(format!(
            "features mix sources: {:?}/{:?} and {:?}/{:?}",
            layer, hash, m.source_layer, m.source_checkpoint
        )));
    }
    let examples = features
        .iter()
        .map(|(m, p)| {
            Ok(TrainingExample {
                input: prepare_input(m, cfg.input_size, cfg.channel_policy)?,
                pose: *p,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fit(
        cfg,
        InputKind::Fusion {
            layer,
            checkpoint_hash: hash,
        },
        examples,
        log_path,
    )
}

/// Same regressor on raw images: the PoseNet-style baselines.
pub fn train_pose_rgb(
    cfg: &PoseTrainConfig,
    images: &[(&ImageTensor, Pose)],
    log_path: Option<&Path>,
) -> Result<PoseModel> {
    let examples = images
        .iter()
        .map(|(img, p)| TrainingExample {
            input: prepare_rgb(img, cfg.input_size),
            pose: *p,
        })
        .collect();
    fit(cfg, InputKind::Rgb, examples, log_path)
}

fn mean_pose(examples: &[&TrainingExample]) -> ([f64; 3], f64, Quat) {
    let n = examples.len() as f64;
    let mut mean = [0.0; 3];
    for e in examples {
        for k in 0..3 {
            mean[k] += e.pose.position[k] / n;
        }
    }
    let ms = examples
        .iter()
        .map(|e| {
            (0..3)
                .map(|k| (e.pose.position[k] - mean[k]).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / (3.0 * n);
    let reference = examples[0].pose.orientation;
    let mut acc = [0.0; 4];
    for e in examples {
        for (a, v) in acc
            .iter_mut()
            .zip(e.pose.orientation.aligned_to(reference).to_array())
        {
            *a += v;
        }
    }
    let q = Quat::from_array(acc).normalized().unwrap_or(Quat::IDENTITY);
    (mean, ms.sqrt().max(1e-6), q)
}

fn mean_loss(model: &PoseModel, examples: &[&TrainingExample]) -> Result<f64> {
    let mut total = 0.0;
    for e in examples {
        let (x, q) = model.net.forward(&e.input)?;
        let p = model.decode(x, [q[0], q[1], q[2], q[3]]);
        let raw_q = q.map(|v| v as f64);
        total += pose_loss_grad(p.position, raw_q, &e.pose, model.config.beta)?.0;
    }
    Ok(total / examples.len() as f64)
}

fn fit(
    cfg: &PoseTrainConfig,
    input: InputKind,
    examples: Vec<TrainingExample>,
    log_path: Option<&Path>,
) -> Result<PoseModel> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let n_val = if cfg.val_fraction > 0.0 && examples.len() > 1 {
        ((examples.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, examples.len() - 1)
    } else {
        0
    };
    if n_val > 0 {
        order.shuffle(&mut substream(cfg.seed, "pose.split"));
    }
    let (train_idx, val_idx) = order.split_at(examples.len() - n_val);
    let train: Vec<&TrainingExample> = train_idx.iter().map(|&i| &examples[i]).collect();
    let val: Vec<&TrainingExample> = val_idx.iter().map(|&i| &examples[i]).collect();

    let channels = train[0].input.channels;
    let spec = PoseNetSpec {
        in_channels: channels,
        input_size: cfg.input_size,
        widths: cfg.widths.clone(),
        fc_width: cfg.fc_width,
    };
    let mut net = PoseNet::<f32>::new(spec)?;
    net.params
        .init_gaussian(cfg.init_sigma, &mut substream(cfg.seed, "pose.init"));
    let (position_mean, position_scale, mean_q) = mean_pose(&train);
    net.set_quaternion_bias(mean_q.to_array());
    let mut model = PoseModel {
        config: cfg.clone(),
        input,
        net,
        position_mean,
        position_scale,
        iterations: 0,
        final_loss: None,
    };

    let mut log = match log_path {
        Some(p) => {
            let mut f = fs::File::create(p).at(p)?;
            writeln!(f, "iter,loss").at(p)?;
            Some((f, p))
        }
        None => None,
    };
    let mut adam = Adam::new(cfg.adam(), &model.net.params);
    let batch = cfg.batch_size.min(train.len());
    let inv_batch = 1.0 / batch as f64;
    let mut best: Option<(f64, PoseNet<f32>)> = None;
    for it in 0..cfg.max_iters {
        let mut rng = substream(cfg.seed, &format!("pose.sampling.{it}"));
        let picks = index::sample(&mut rng, train.len(), batch);
        model.net.params.zero_grad();
        let mut loss = 0.0;
        for i in picks {
            let e = train[i];
            let ((rx, rq), trace) = model.net.forward_train(&e.input)?;
            let p = model.decode(rx, rq);
            let (l, gx, gq) = pose_loss_grad(p.position, rq.map(|v| v as f64), &e.pose, cfg.beta)?;
            loss += l * inv_batch;
            let dx = gx.map(|g| (g * position_scale * inv_batch) as f32);
            let dq = gq.map(|g| (g * inv_batch) as f32);
            model.net.backward(&trace, &dx, &dq);
        }
        if !loss.is_finite() {
            if let Some((_, net)) = best {
                warn!("non-finite pose loss at iteration {it}; keeping best validated model");
                model.net = net;
                return Ok(model);
            }
            return Err(Error::NonFinite { iteration: it });
        }
        adam.step(&mut model.net.params);
        model.iterations = it + 1;
        model.final_loss = Some(loss);
        if let Some((f, p)) = log.as_mut() {
            writeln!(f, "{it},{loss}").at(*p)?;
        }
        if it % 500 == 0 {
            info!("pose iter {it}: loss {loss:.4}");
        }
        if !val.is_empty() && ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.max_iters) {
            let v = mean_loss(&model, &val)?;
            if v.is_finite() && best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.net.clone()));
            }
        }
    }
    if let Some((_, net)) = best {
        model.net = net;
    }
    Ok(model)
}

/// Regresses the pose of one image. Fusion models need the extractor of the
/// checkpoint they were trained on.
pub fn predict_pose(
    model: &PoseModel,
    image: &ImageTensor,
    extractor: Option<&FeatureExtractor<'_>>,
) -> Result<Pose> {
    match &model.input {
        InputKind::Rgb => model.regress(&prepare_rgb(image, model.config.input_size)),
        InputKind::Fusion {
            layer,
            checkpoint_hash,
        } => {
            let ex = extractor.ok_or_else(|| {
                Error::InvalidArgument("fusion model needs a feature extractor".into())
            })?;
            if let Some(h) = checkpoint_hash {
                if *h != ex.checkpoint_hash {
                    return Err(Error::InvalidArgument(format!(
                        "model was trained on checkpoint {h}, extractor is {}",
                        ex.checkpoint_hash
                    )));
                }
            }
            let layer = layer.ok_or_else(|| {
                Error::InvalidArgument("model does not record its feature layer".into())
            })?;
            model.regress(&model.prepare(&extract(ex.generator, image, layer)?)?)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: PoseTrainConfig,
    input: InputKind,
    spec: PoseNetSpec,
    position_mean: [f64; 3],
    position_scale: f64,
    iterations: usize,
    final_loss: Option<f64>,
}

pub fn save_pose_model(model: &PoseModel, path: &Path) -> Result<()> {
    let meta = Meta {
        config: model.config.clone(),
        input: model.input.clone(),
        spec: model.net.spec.clone(),
        position_mean: model.position_mean,
        position_scale: model.position_scale,
        iterations: model.iterations,
        final_loss: model.final_loss,
    };
    Container {
        kind: POSE_MODEL_KIND.into(),
        meta: serde_json::to_value(meta).map_err(|e| Error::Other(e.to_string()))?,
        tensors: model
            .net
            .params
            .to_f32()
            .into_iter()
            .map(|(name, shape, data)| NamedTensor {
                name: format!("net.{name}"),
                shape,
                data,
            })
            .collect(),
    }
    .save(path)
}

pub fn load_pose_model(path: &Path) -> Result<PoseModel> {
    let c = Container::load(path)?;
    let corrupt = |msg: String| Error::Corrupted {
        path: path.to_path_buf(),
        msg,
    };
    if c.kind != POSE_MODEL_KIND {
        return Err(corrupt(format!(
            "expected a {POSE_MODEL_KIND}, found `{}`",
            c.kind
        )));
    }
    let meta: Meta =
        serde_json::from_value(c.meta.clone()).map_err(|e| corrupt(format!("meta: {e}")))?;
    let mut net = PoseNet::new(meta.spec)?;
    net.params
        .load_named(|name| c.get(&format!("net.{name}")).map(|t| t.data.as_slice()))?;
    Ok(PoseModel {
        config: meta.config,
        input: meta.input,
        net,
        position_mean: meta.position_mean,
        position_scale: meta.position_scale,
        iterations: meta.iterations,
        final_loss: meta.final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PoseTrainConfig {
        PoseTrainConfig {
            input_size: 8,
            widths: vec![4, 4],
            fc_width: 8,
            batch_size: 2,
            max_iters: 0,
            ..Default::default()
        }
    }

    fn examples() -> Vec<(FusionMap, Pose)> {
        (0..3)
            .map(|i| {
                let m = FusionMap::new(4, 4, (0..16).map(|k| ((k * (i + 2)) % 7) as f32).collect())
                    .unwrap();
                (
                    m,
                    Pose::new(
                        [i as f64, 0.0, 1.0],
                        Quat::from_axis_angle([0.0, 1.0, 0.0], 0.1 * i as f64),
                    ),
                )
            })
            .collect()
    }

    #[test]
    fn zero_iterations_returns_the_initial_model() {
        let m = train_pose(&cfg(), &examples(), None).unwrap();
        assert_eq!(m.iterations, 0);
        let p = m.regress(&m.prepare(&examples()[0].0).unwrap()).unwrap();
        assert!((p.orientation.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mixed_sources_are_rejected() {
        let mut ex = examples();
        ex[1].0.source_checkpoint = Some("other".into());
        assert!(train_pose(&cfg(), &ex, None).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let c = PoseTrainConfig {
            max_iters: 3,
            ..cfg()
        };
        let m = train_pose(&c, &examples(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pose.bin");
        save_pose_model(&m, &path).unwrap();
        let back = load_pose_model(&path).unwrap();
        let input = m.prepare(&examples()[2].0).unwrap();
        assert_eq!(m.regress(&input).unwrap(), back.regress(&input).unwrap());
        assert_eq!(back.input, m.input);
    }
}
