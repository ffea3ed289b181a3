//! Unpaired translation networks (G_AB, G_BA, D_A, D_B) and their training.

mod checkpoint;
mod discriminator;
mod generator;
pub mod loss;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, LossRecord, CHECKPOINT_KIND};
pub use discriminator::{Discriminator, DiscriminatorSpec, DiscriminatorTrace};
pub use generator::{Generator, GeneratorSpec, GeneratorTrace, LayerName, Translator};
pub use loss::{
    adversarial_losses, adversarial_terms, cycle_loss, total_objective, AdversarialTerms, LossForm,
};
pub use train::{train_cyclegan, TrainOptions, CHECKPOINT_FILE, LOSS_LOG_FILE};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    /// Cycle-consistency weight ω.
    pub omega: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_iters: usize,
    pub checkpoint_every: usize,
    pub image_size: usize,
    pub loss_form: LossForm,
    pub base_channels: usize,
    pub n_res_blocks: usize,
    pub disc_base_channels: usize,
    pub disc_layers: usize,
    pub init_sigma: f64,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            omega: 20.0,
            lr: 2e-4,
            batch_size: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-10,
            max_iters: 45_000,
            checkpoint_every: 1000,
            image_size: 256,
            loss_form: LossForm::Log,
            base_channels: 64,
            n_res_blocks: 9,
            disc_base_channels: 64,
            disc_layers: 3,
            init_sigma: 0.02,
            seed: 0,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.omega > 0.0) {
            return bad("omega must be > 0");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        self.generator_spec().validate()
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            image_channels: 3,
            base_channels: self.base_channels,
            n_res_blocks: self.n_res_blocks,
            image_size: self.image_size,
        }
    }

    pub fn discriminator_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec {
            image_channels: 3,
            base_channels: self.disc_base_channels,
            n_layers: self.disc_layers,
        }
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_recipe() {
        let c = GanTrainConfig::default();
        assert_eq!(c.omega, 20.0);
        assert_eq!(c.lr, 0.0002);
        assert_eq!(c.batch_size, 1);
        assert_eq!(
            (c.adam_beta1, c.adam_beta2, c.adam_eps),
            (0.9, 0.999, 1e-10)
        );
        assert_eq!(c.image_size, 256);
        assert_eq!(c.loss_form, LossForm::Log);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn rejects_degenerate_settings() {
        for c in [
            GanTrainConfig {
                omega: 0.0,
                ..Default::default()
            },
            GanTrainConfig {
                lr: -1.0,
                ..Default::default()
            },
            GanTrainConfig {
                batch_size: 0,
                ..Default::default()
            },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
