//! Fusion features: channel-summed generator activations, their SSIM
//! similarity, and the per-layer robustness analysis used to pick a layer.

mod cache;
mod ssim;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cyclegan::{Checkpoint, Generator, LayerName};
use crate::datasets::{CorrespondenceSet, FrameId, ImageTensor, LabeledImage};
use crate::error::{Error, IoContext, Result};
use crate::placerec::{pr_curve, score_matrix, Thresholds};
use crate::tensor::{Scalar, Tensor};

pub use cache::{decode_plane, encode_plane, read_plane, write_plane, FeatureCache, MAP_MAGIC};
pub use ssim::{ssim, SsimStats};

/// Single-channel map obtained by summing one layer's activation channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionMap {
    pub height: usize,
    pub width: usize,
    /// Row-major values.
    pub data: Vec<f32>,
    pub source_layer: Option<LayerName>,
    pub source_frame: Option<FrameId>,
    /// Feature hash of the checkpoint the map was extracted with.
    pub source_checkpoint: Option<String>,
}

impl FusionMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width || data.is_empty() {
            return Err(Error::Shape(format!(
                "fusion map of {height}x{width} with {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "fusion map has non-finite values".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
            source_layer: None,
            source_frame: None,
            source_checkpoint: None,
        })
    }

    pub fn with_source(mut self, layer: Option<LayerName>, frame: Option<FrameId>) -> Self {
        self.source_layer = layer;
        self.source_frame = frame;
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// How activation channels are combined. `Sum` is the default everywhere;
/// `Mean` divides by the channel count and exists for experiments only.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Sum,
    Mean,
}

/// Sums the channels of an activation (accumulated in f64).
pub fn fuse<T: Scalar>(activation: &Tensor<T>) -> FusionMap {
    fuse_with(activation, Fusion::Sum)
}

pub fn fuse_with<T: Scalar>(activation: &Tensor<T>, mode: Fusion) -> FusionMap {
    let n = activation.plane_len();
    let mut acc = vec![0.0f64; n];
    for c in 0..activation.channels {
        for (a, v) in acc.iter_mut().zip(activation.plane(c)) {
            *a += v.as_f64();
        }
    }
    let scale = match mode {
        Fusion::Sum => 1.0,
        Fusion::Mean => 1.0 / activation.channels.max(1) as f64,
    };
    FusionMap {
        height: activation.height,
        width: activation.width,
        data: acc.into_iter().map(|v| (v * scale) as f32).collect(),
        source_layer: None,
        source_frame: None,
        source_checkpoint: None,
    }
}

/// Fusion map of `layer` for one image.
pub fn extract(
    generator: &Generator<f32>,
    image: &ImageTensor,
    layer: LayerName,
) -> Result<FusionMap> {
    let act = generator.activation(image, layer)?;
    Ok(fuse(&act).with_source(Some(layer), None))
}

/// An image together with its frame id and a key unique within a dataset
/// (`condition/frame`), used to address cache entries.
#[derive(Clone, Debug)]
pub struct FrameImage<'a> {
    pub image: &'a ImageTensor,
    pub frame: FrameId,
    pub key: String,
}

impl<'a> From<&'a LabeledImage> for FrameImage<'a> {
    fn from(l: &'a LabeledImage) -> Self {
        Self {
            image: &l.image,
            frame: l.frame,
            key: format!("{}/{:05}", l.condition, l.frame),
        }
    }
}

/// A frozen generator plus an optional on-disk cache of its fusion maps.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<'a> {
    pub generator: &'a Generator<f32>,
    pub checkpoint_hash: String,
    pub cache: Option<FeatureCache>,
    pub fusion: Fusion,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(ckpt: &'a Checkpoint) -> Self {
        Self {
            generator: &ckpt.g_ab,
            checkpoint_hash: ckpt.feature_hash(),
            cache: None,
            fusion: Fusion::Sum,
        }
    }

    pub fn with_cache(mut self, cache: FeatureCache) -> Self {
        self.cache = Some(cache);
        self
    }

    fn cache_layer(&self, layer: LayerName, input_size: usize) -> String {
        let mut name = match self.fusion {
            Fusion::Sum => layer.to_string(),
            Fusion::Mean => format!("{layer}-mean"),
        };
        if input_size != self.generator.spec.image_size {
            name.push_str(&format!("@{input_size}"));
        }
        name
    }

    /// Fusion maps of every requested layer for one image, using one forward
    /// pass for whatever the cache could not supply.
    pub fn extract_layers(
        &self,
        item: &FrameImage<'_>,
        layers: &[LayerName],
    ) -> Result<BTreeMap<LayerName, FusionMap>> {
        let mut out = BTreeMap::new();
        let mut missing = Vec::new();
        let size = item.image.height;
        for &layer in layers {
            if !self.generator.spec.contains(layer) {
                return Err(Error::UnknownLayer(layer.to_string()));
            }
            let hit = self.cache.as_ref().and_then(|c| {
                c.get(
                    &self.checkpoint_hash,
                    &self.cache_layer(layer, size),
                    &item.key,
                )
            });
            match hit {
                Some(mut m) => {
                    m.source_checkpoint = Some(self.checkpoint_hash.clone());
                    out.insert(layer, m.with_source(Some(layer), Some(item.frame)));
                }
                None => missing.push(layer),
            }
        }
        if !missing.is_empty() {
            for (layer, act) in self.generator.taps(item.image, &missing)? {
                let mut map =
                    fuse_with(&act, self.fusion).with_source(Some(layer), Some(item.frame));
                map.source_checkpoint = Some(self.checkpoint_hash.clone());
                if let Some(c) = &self.cache {
                    c.put(
                        &self.checkpoint_hash,
                        &self.cache_layer(layer, size),
                        &item.key,
                        &map,
                    )?;
                }
                out.insert(layer, map);
            }
        }
        Ok(out)
    }

    pub fn extract(&self, item: &FrameImage<'_>, layer: LayerName) -> Result<FusionMap> {
        Ok(self
            .extract_layers(item, &[layer])?
            .remove(&layer)
            .expect("requested layer extracted"))
    }

    /// Per-layer fusion maps for a whole set, in input order.
    pub fn extract_set(
        &self,
        items: &[FrameImage<'_>],
        layers: &[LayerName],
    ) -> Result<BTreeMap<LayerName, Vec<FusionMap>>> {
        let mut out: BTreeMap<LayerName, Vec<FusionMap>> =
            layers.iter().map(|&l| (l, Vec::new())).collect();
        for item in items {
            for (layer, map) in self.extract_layers(item, layers)? {
                out.get_mut(&layer).expect("layer requested").push(map);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub layer: LayerName,
    pub f1: f64,
    /// Threshold at which `f1` was reached.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAnalysis {
    /// In forward order.
    pub per_layer: Vec<LayerScore>,
    pub selected_layer: LayerName,
}

impl LayerAnalysis {
    pub fn f1(&self, layer: LayerName) -> Option<f64> {
        self.per_layer
            .iter()
            .find(|s| s.layer == layer)
            .map(|s| s.f1)
    }
}

/// Best F1 per layer from precomputed query/database maps.
pub fn layer_f1_from_maps(
    maps: &BTreeMap<LayerName, (Vec<FusionMap>, Vec<FusionMap>)>,
    query_ids: &[FrameId],
    db_ids: &[FrameId],
    gt: &CorrespondenceSet,
) -> Result<LayerAnalysis> {
    if maps.is_empty() {
        return Err(Error::InvalidArgument(
            "layer analysis needs at least one layer".into(),
        ));
    }
    let mut per_layer = Vec::with_capacity(maps.len());
    for (&layer, (q, db)) in maps {
        let m = score_matrix(q, db, query_ids, db_ids, gt)?;
        let curve = pr_curve(&m, &Thresholds::Auto)?;
        let (f1, threshold) = (curve.best_f1, curve.best_threshold);
        log::info!("{layer}: best F1 {f1:.4} at threshold {threshold:.4}");
        per_layer.push(LayerScore {
            layer,
            f1,
            threshold,
        });
    }
    let selected_layer = select_layer(&per_layer).expect("non-empty");
    Ok(LayerAnalysis {
        per_layer,
        selected_layer,
    })
}

/// Extracts both sets at every layer, scores all query/database pairs and
/// records each layer's best F1 over the threshold sweep.
pub fn layer_f1_analysis(
    extractor: &FeatureExtractor<'_>,
    set_q: &[FrameImage<'_>],
    set_db: &[FrameImage<'_>],
    gt: &CorrespondenceSet,
    layers: &[LayerName],
) -> Result<LayerAnalysis> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument(
            "layer analysis needs at least one layer".into(),
        ));
    }
    let mut q = extractor.extract_set(set_q, layers)?;
    let mut db = extractor.extract_set(set_db, layers)?;
    let maps = layers
        .iter()
        .map(|l| {
            (
                *l,
                (
                    q.remove(l).unwrap_or_default(),
                    db.remove(l).unwrap_or_default(),
                ),
            )
        })
        .collect();
    let q_ids: Vec<FrameId> = set_q.iter().map(|i| i.frame).collect();
    let db_ids: Vec<FrameId> = set_db.iter().map(|i| i.frame).collect();
    layer_f1_from_maps(&maps, &q_ids, &db_ids, gt)
}

/// Highest F1; ties go to the shallower layer.
pub fn select_layer(scores: &[LayerScore]) -> Option<LayerName> {
    let mut sorted: Vec<&LayerScore> = scores.iter().collect();
    sorted.sort_by_key(|s| s.layer);
    sorted
        .into_iter()
        .fold(None::<&LayerScore>, |best, s| match best {
            Some(b) if b.f1 >= s.f1 => Some(b),
            _ => Some(s),
        })
        .map(|s| s.layer)
}

/// Writes `layer,f1` rows in forward order.
pub fn write_layer_report(analysis: &LayerAnalysis, path: &Path) -> Result<()> {
    let mut out = String::from("layer,f1\n");
    for s in &analysis.per_layer {
        out.push_str(&format!("{},{}\n", s.layer, s.f1));
    }
    fs::write(path, out).at(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(layer: &str, f1: f64) -> LayerScore {
        LayerScore {
            layer: layer.parse().unwrap(),
            f1,
            threshold: 0.0,
        }
    }

    #[test]
    fn single_channel_fuses_to_itself() {
        let t = Tensor::from_vec(1, 2, 2, vec![1.0f32, -2.0, 3.5, 0.0]).unwrap();
        assert_eq!(fuse(&t).data, t.data);
    }

    #[test]
    fn constant_channels_add() {
        let t = Tensor::from_vec(2, 2, 2, vec![0.5f32; 8]).unwrap();
        assert_eq!(fuse(&t).data, vec![1.0; 4]);
        assert_eq!(fuse_with(&t, Fusion::Mean).data, vec![0.5; 4]);
    }

    #[test]
    fn argmax_and_tie_rule() {
        assert_eq!(
            select_layer(&[score("Conv1", 0.2), score("Conv3", 0.9)]),
            "Conv3".parse().ok()
        );
        assert_eq!(
            select_layer(&[score("Conv3", 0.8), score("Conv2", 0.8)]),
            "Conv2".parse().ok()
        );
        assert_eq!(select_layer(&[]), None);
    }

    #[test]
    fn rejects_non_finite_maps() {
        assert!(FusionMap::new(1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(FusionMap::new(2, 2, vec![0.0; 3]).is_err());
    }
}
