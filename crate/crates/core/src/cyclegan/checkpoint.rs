use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{tensors_hash, Container, NamedTensor};
use crate::error::{Error, Result};
use crate::nn::{AdamState, ParamStore};

use super::{Discriminator, GanTrainConfig, Generator};

pub const CHECKPOINT_KIND: &str = "cyclegan";

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    pub total: f64,
    pub l_gan_ab: f64,
    pub l_gan_ba: f64,
    pub l_cyc: f64,
}

/// Snapshot of all four networks plus training bookkeeping.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: GanTrainConfig,
    pub iteration: usize,
    pub g_ab: Generator<f32>,
    pub g_ba: Generator<f32>,
    pub d_a: Discriminator<f32>,
    pub d_b: Discriminator<f32>,
    pub loss_history: Vec<LossRecord>,
    /// Optimizer moments keyed by network (`g_ab`, `g_ba`, `d_a`, `d_b`).
    pub optimizer: Vec<(String, AdamState)>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: GanTrainConfig,
    iteration: usize,
    loss_history: Vec<LossRecord>,
    optimizer_steps: Vec<(String, u64)>,
}

fn named(prefix: &str, store: &ParamStore<f32>) -> Vec<NamedTensor> {
    store
        .to_f32()
        .into_iter()
        .map(|(name, shape, data)| NamedTensor {
            name: format!("{prefix}.{name}"),
            shape,
            data,
        })
        .collect()
}

fn fill(store: &mut ParamStore<f32>, c: &Container, prefix: &str) -> Result<()> {
    store.load_named(|name| {
        c.get(&format!("{prefix}.{name}"))
            .map(|t| t.data.as_slice())
    })
}

impl Checkpoint {
    /// Content hash of G_AB, the network features are extracted from.
    pub fn feature_hash(&self) -> String {
        tensors_hash(&named("g_ab", &self.g_ab.params))
    }

    /// Content hash of all four networks.
    pub fn full_hash(&self) -> String {
        let mut all = named("g_ab", &self.g_ab.params);
        all.extend(named("g_ba", &self.g_ba.params));
        all.extend(named("d_a", &self.d_a.params));
        all.extend(named("d_b", &self.d_b.params));
        tensors_hash(&all)
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = Meta {
            config: self.config.clone(),
            iteration: self.iteration,
            loss_history: self.loss_history.clone(),
            optimizer_steps: self
                .optimizer
                .iter()
                .map(|(n, s)| (n.clone(), s.step))
                .collect(),
        };
        let mut tensors = named("g_ab", &self.g_ab.params);
        tensors.extend(named("g_ba", &self.g_ba.params));
        tensors.extend(named("d_a", &self.d_a.params));
        tensors.extend(named("d_b", &self.d_b.params));
        for (net, state) in &self.optimizer {
            for (kind, buffers) in [("m", &state.m), ("v", &state.v)] {
                for (i, b) in buffers.iter().enumerate() {
                    tensors.push(NamedTensor {
                        name: format!("adam.{net}.{kind}.{i}"),
                        shape: vec![b.len()],
                        data: b.clone(),
                    });
                }
            }
        }
        Ok(Container {
            kind: CHECKPOINT_KIND.to_string(),
            meta: serde_json::to_value(meta).map_err(|e| Error::Other(e.to_string()))?,
            tensors,
        })
    }

    pub fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let corrupt = |msg: String| Error::Corrupted {
            path: path.to_path_buf(),
            msg,
        };
        if c.kind != CHECKPOINT_KIND {
            return Err(corrupt(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found `{}`",
                c.kind
            )));
        }
        let meta: Meta =
            serde_json::from_value(c.meta.clone()).map_err(|e| corrupt(format!("meta: {e}")))?;
        let mut g_ab = Generator::new(meta.config.generator_spec())?;
        let mut g_ba = Generator::new(meta.config.generator_spec())?;
        let mut d_a = Discriminator::new(meta.config.discriminator_spec())?;
        let mut d_b = Discriminator::new(meta.config.discriminator_spec())?;
        fill(&mut g_ab.params, c, "g_ab")?;
        fill(&mut g_ba.params, c, "g_ba")?;
        fill(&mut d_a.params, c, "d_a")?;
        fill(&mut d_b.params, c, "d_b")?;
        let mut optimizer = Vec::new();
        for (net, step) in meta.optimizer_steps {
            let n_params = match net.as_str() {
                "g_ab" => g_ab.params.len(),
                "g_ba" => g_ba.params.len(),
                "d_a" => d_a.params.len(),
                "d_b" => d_b.params.len(),
                other => return Err(corrupt(format!("unknown optimizer `{other}`"))),
            };
            let buffers = |kind: &str| -> Result<Vec<Vec<f32>>> {
                (0..n_params)
                    .map(|i| {
                        c.get(&format!("adam.{net}.{kind}.{i}"))
                            .map(|t| t.data.clone())
                            .ok_or_else(|| corrupt(format!("missing optimizer state for {net}")))
                    })
                    .collect()
            };
            optimizer.push((
                net.clone(),
                AdamState {
                    step,
                    m: buffers("m")?,
                    v: buffers("v")?,
                },
            ));
        }
        Ok(Self {
            config: meta.config,
            iteration: meta.iteration,
            g_ab,
            g_ba,
            d_a,
            d_b,
            loss_history: meta.loss_history,
            optimizer,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.to_container()?.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_container(&Container::load(path)?, path)
}
