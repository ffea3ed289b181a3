use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::Rng as _;

use crate::error::{Error, IoContext, Result};
use crate::nn::Adam;
use crate::rng::substream;
use crate::tensor::Tensor;

use super::checkpoint::{save_checkpoint, Checkpoint, LossRecord};
use super::loss::{
    adversarial_terms, discriminator_score_grads, generator_score_grad, l1_with_grad,
    total_objective,
};
use super::{Discriminator, GanTrainConfig, Generator};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_LOG_FILE: &str = "loss.csv";

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint instead of a fresh initialization.
    pub resume: Option<Checkpoint>,
}

fn fresh_checkpoint(cfg: &GanTrainConfig) -> Result<Checkpoint> {
    let mut rng = substream(cfg.seed, "gan.init");
    let mut g_ab = Generator::new(cfg.generator_spec())?;
    let mut g_ba = Generator::new(cfg.generator_spec())?;
    let mut d_a = Discriminator::new(cfg.discriminator_spec())?;
    let mut d_b = Discriminator::new(cfg.discriminator_spec())?;
    g_ab.params.init_gaussian(cfg.init_sigma, &mut rng);
    g_ba.params.init_gaussian(cfg.init_sigma, &mut rng);
    d_a.params.init_gaussian(cfg.init_sigma, &mut rng);
    d_b.params.init_gaussian(cfg.init_sigma, &mut rng);
    Ok(Checkpoint {
        config: cfg.clone(),
        iteration: 0,
        g_ab,
        g_ba,
        d_a,
        d_b,
        loss_history: Vec::new(),
        optimizer: Vec::new(),
    })
}

struct LossLog {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl LossLog {
    /// Starts the log afresh with `history`, so rows written after the last
    /// checkpoint of an interrupted run do not survive a resume.
    fn create(path: PathBuf, history: &[LossRecord]) -> Result<Self> {
        let file = File::create(&path).at(&path)?;
        let mut log = Self {
            writer: csv::Writer::from_writer(file),
            path,
        };
        for r in history {
            log.writer
                .serialize(r)
                .map_err(|e| Error::Other(format!("{}: {e}", log.path.display())))?;
        }
        log.writer
            .flush()
            .map_err(|e| Error::io(log.path.clone(), e))?;
        Ok(log)
    }

    fn push(&mut self, r: &LossRecord) -> Result<()> {
        let err = |e: csv::Error| Error::Other(format!("{}: {e}", self.path.display()));
        self.writer.serialize(r).map_err(err)?;
        self.writer
            .flush()
            .map_err(|e| Error::io(self.path.clone(), e))
    }
}

/// Trains G_AB, G_BA, D_A and D_B on unpaired samples.
///
/// Each iteration draws `batch_size` images uniformly from the pooled domain A
/// and from domain B, takes one generator step on the adversarial and cycle
/// losses, then one discriminator step on the same fakes. A loss row is
/// appended to `out_dir/loss.csv` every iteration and the latest checkpoint
/// is written every `checkpoint_every` iterations and at the end. On a
/// non-finite loss training stops with an error and the last checkpoint on
/// disk is left untouched.
pub fn train_cyclegan(
    cfg: &GanTrainConfig,
    domain_a: &[&Tensor<f32>],
    domain_b: &[&Tensor<f32>],
    out_dir: &Path,
    opts: TrainOptions,
) -> Result<Checkpoint> {
    cfg.validate()?;
    if domain_a.is_empty() || domain_b.is_empty() {
        return Err(Error::InvalidArgument(
            "both domains need at least one image".into(),
        ));
    }
    fs::create_dir_all(out_dir).at(out_dir)?;
    let probe = out_dir.join(".write_probe");
    fs::write(&probe, b"").at(&probe)?;
    fs::remove_file(&probe).at(&probe)?;

    let resuming = opts.resume.is_some();
    let mut ckpt = match opts.resume {
        Some(mut c) => {
            if c.config.generator_spec() != cfg.generator_spec()
                || c.config.discriminator_spec() != cfg.discriminator_spec()
            {
                return Err(Error::InvalidArgument(
                    "cannot resume: checkpoint architecture differs from the configuration".into(),
                ));
            }
            // the schedule may be extended; record what this run uses
            c.config = cfg.clone();
            c
        }
        None => fresh_checkpoint(cfg)?,
    };
    let mut adam_g_ab = Adam::new(cfg.adam(), &ckpt.g_ab.params);
    let mut adam_g_ba = Adam::new(cfg.adam(), &ckpt.g_ba.params);
    let mut adam_d_a = Adam::new(cfg.adam(), &ckpt.d_a.params);
    let mut adam_d_b = Adam::new(cfg.adam(), &ckpt.d_b.params);
    for (net, state) in &ckpt.optimizer {
        let ok = match net.as_str() {
            "g_ab" => adam_g_ab.restore(state),
            "g_ba" => adam_g_ba.restore(state),
            "d_a" => adam_d_a.restore(state),
            "d_b" => adam_d_b.restore(state),
            _ => false,
        };
        if !ok {
            warn!("optimizer state for {net} does not fit; starting it fresh");
        }
    }

    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let mut log = LossLog::create(out_dir.join(LOSS_LOG_FILE), &ckpt.loss_history)?;
    if !resuming {
        save_checkpoint(&ckpt, &ckpt_path)?;
    }

    let size = cfg.image_size;
    for img in domain_a.iter().chain(domain_b) {
        if img.shape() != (3, size, size) {
            return Err(Error::Shape(format!(
                "training images must be 3x{size}x{size}, got {:?}",
                img.shape()
            )));
        }
    }

    let omega = cfg.omega as f32;
    let inv_b = 1.0 / cfg.batch_size as f32;
    let started = Instant::now();
    let first_iter = ckpt.iteration;
    let mut clamped_total = 0usize;
    while ckpt.iteration < cfg.max_iters {
        let iter = ckpt.iteration;
        let mut rng = substream(cfg.seed, &format!("gan.sampling.{iter}"));
        let batch: Vec<(&Tensor<f32>, &Tensor<f32>)> = (0..cfg.batch_size)
            .map(|_| {
                (
                    domain_a[rng.random_range(0..domain_a.len())],
                    domain_b[rng.random_range(0..domain_b.len())],
                )
            })
            .collect();

        let Checkpoint {
            g_ab,
            g_ba,
            d_a,
            d_b,
            ..
        } = &mut ckpt;

        // generator step
        g_ab.params.zero_grad();
        g_ba.params.zero_grad();
        let mut fakes = Vec::with_capacity(batch.len());
        let (mut l_cyc, mut nan) = (0.0f64, false);
        for &(a, b) in &batch {
            let (fake_b, t_ab) = g_ab.forward_train(a)?;
            let (rec_a, t_ba_rec) = g_ba.forward_train(&fake_b)?;
            let (fake_a, t_ba) = g_ba.forward_train(b)?;
            let (rec_b, t_ab_rec) = g_ab.forward_train(&fake_a)?;
            let (s_fake_b, dt_b) = d_b.forward_train(&fake_b)?;
            let (s_fake_a, dt_a) = d_a.forward_train(&fake_a)?;
            let (cyc_a, mut drec_a) = l1_with_grad(&rec_a, a)?;
            let (cyc_b, mut drec_b) = l1_with_grad(&rec_b, b)?;
            l_cyc += (cyc_a + cyc_b) as f64 / batch.len() as f64;
            nan |= !(cyc_a.is_finite() && cyc_b.is_finite());
            drec_a.data.iter_mut().for_each(|v| *v *= omega * inv_b);
            drec_b.data.iter_mut().for_each(|v| *v *= omega * inv_b);
            let mut gs_b = generator_score_grad(&s_fake_b, cfg.loss_form);
            let mut gs_a = generator_score_grad(&s_fake_a, cfg.loss_form);
            gs_b.data.iter_mut().for_each(|v| *v *= inv_b);
            gs_a.data.iter_mut().for_each(|v| *v *= inv_b);

            let mut d_fake_b = d_b.backward(&dt_b, &gs_b);
            d_fake_b.add_assign(&g_ba.backward(&t_ba_rec, &drec_a));
            g_ab.backward(&t_ab, &d_fake_b);
            let mut d_fake_a = d_a.backward(&dt_a, &gs_a);
            d_fake_a.add_assign(&g_ab.backward(&t_ab_rec, &drec_b));
            g_ba.backward(&t_ba, &d_fake_a);
            fakes.push((fake_a, fake_b, s_fake_a, s_fake_b, dt_a, dt_b));
        }
        adam_g_ab.step(&mut g_ab.params);
        adam_g_ba.step(&mut g_ba.params);

        // discriminator step, on the fakes produced above
        d_a.params.zero_grad();
        d_b.params.zero_grad();
        let (mut v_ab, mut v_ba) = (0.0f64, 0.0f64);
        for (&(a, b), (_, _, s_fake_a, s_fake_b, dt_a, dt_b)) in batch.iter().zip(&fakes) {
            let (s_real_b, rt_b) = d_b.forward_train(b)?;
            let (s_real_a, rt_a) = d_a.forward_train(a)?;
            let terms_b = adversarial_terms(&s_real_b, s_fake_b, cfg.loss_form);
            let terms_a = adversarial_terms(&s_real_a, s_fake_a, cfg.loss_form);
            clamped_total += terms_a.clamped + terms_b.clamped;
            v_ab += terms_b.value / batch.len() as f64;
            v_ba += terms_a.value / batch.len() as f64;
            for (d, rt, ft, real, fake) in [
                (&mut *d_b, &rt_b, dt_b, &s_real_b, s_fake_b),
                (&mut *d_a, &rt_a, dt_a, &s_real_a, s_fake_a),
            ] {
                let (mut gr, mut gf) = discriminator_score_grads(real, fake, cfg.loss_form);
                gr.data.iter_mut().for_each(|v| *v *= inv_b);
                gf.data.iter_mut().for_each(|v| *v *= inv_b);
                d.backward(rt, &gr);
                d.backward(ft, &gf);
            }
        }
        adam_d_a.step(&mut d_a.params);
        adam_d_b.step(&mut d_b.params);

        let record = LossRecord {
            iter,
            total: total_objective(v_ab, v_ba, l_cyc, cfg.omega),
            l_gan_ab: v_ab,
            l_gan_ba: v_ba,
            l_cyc,
        };
        if nan || !record.total.is_finite() {
            return Err(Error::NonFinite { iteration: iter });
        }
        log.push(&record)?;
        ckpt.loss_history.push(record);
        ckpt.iteration += 1;

        let done = ckpt.iteration - first_iter;
        if done % 100 == 0 {
            info!(
                "iter {} total {:.3} cyc {:.4} ({:.2} s/iter)",
                ckpt.iteration,
                record.total,
                l_cyc,
                started.elapsed().as_secs_f64() / done as f64
            );
        }
        let periodic = cfg.checkpoint_every > 0 && ckpt.iteration % cfg.checkpoint_every == 0;
        if periodic || ckpt.iteration == cfg.max_iters {
            ckpt.optimizer = vec![
                ("g_ab".into(), adam_g_ab.state()),
                ("g_ba".into(), adam_g_ba.state()),
                ("d_a".into(), adam_d_a.state()),
                ("d_b".into(), adam_d_b.state()),
            ];
            save_checkpoint(&ckpt, &ckpt_path)?;
        }
    }
    if clamped_total > 0 {
        warn!(
            "{clamped_total} log arguments were clamped at {}",
            super::loss::LOG_CLAMP
        );
    }
    Ok(ckpt)
}
