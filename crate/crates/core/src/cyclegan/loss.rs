//! Cycle-consistency and adversarial objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::generator::Translator;

/// Lower clamp applied to probabilities before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    #[default]
    Log,
    LeastSquares,
}

fn check_same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute difference and its gradient with respect to `pred`.
pub fn l1_with_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    check_same_shape(pred, target)?;
    let n = T::from_usize(pred.len()).unwrap();
    let mut grad = pred.clone();
    let mut sum = T::zero();
    for (g, (&p, &t)) in grad.data.iter_mut().zip(pred.data.iter().zip(&target.data)) {
        let d = p - t;
        sum = sum + d.abs();
        *g = if d > T::zero() {
            T::one() / n
        } else if d < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        };
    }
    Ok((sum / n, grad))
}

/// Mean over the batch of `|G_BA(G_AB(a)) − a|₁ + |G_AB(G_BA(b)) − b|₁`,
/// each term a per-element mean.
pub fn cycle_loss<T: Scalar>(
    g_ab: &impl Translator<T>,
    g_ba: &impl Translator<T>,
    batch_a: &[Tensor<T>],
    batch_b: &[Tensor<T>],
) -> Result<T> {
    if batch_a.is_empty() || batch_b.is_empty() {
        return Err(Error::InvalidArgument(
            "cycle loss needs non-empty batches".into(),
        ));
    }
    let term =
        |fwd: &dyn Translator<T>, back: &dyn Translator<T>, batch: &[Tensor<T>]| -> Result<T> {
            let mut total = T::zero();
            for x in batch {
                let rec = back.apply(&fwd.apply(x)?)?;
                total = total + l1_with_grad(&rec, x)?.0;
            }
            Ok(total / T::from_usize(batch.len()).unwrap())
        };
    Ok(term(g_ab, g_ba, batch_a)? + term(g_ba, g_ab, batch_b)?)
}

/// Adversarial losses evaluated on raw discriminator scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversarialTerms {
    /// What the generator minimizes (non-saturating `−log D(fake)` for the log form).
    pub loss_g: f64,
    /// What the discriminator minimizes.
    pub loss_d: f64,
    /// Standard value `E[log D(real)] + E[log(1 − D(fake))]` (log form) or
    /// `−loss_d` (least squares); this is what the loss log records.
    pub value: f64,
    /// Value with the generator term read literally as `E[1 − log D(fake)]`.
    pub written_value: f64,
    /// Number of log arguments that hit [`LOG_CLAMP`].
    pub clamped: usize,
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

fn clamped_log(p: f64, clamped: &mut usize) -> f64 {
    if p < LOG_CLAMP {
        *clamped += 1;
        LOG_CLAMP.ln()
    } else {
        p.ln()
    }
}

fn mean<T: Scalar>(t: &Tensor<T>, f: impl Fn(f64) -> f64) -> f64 {
    t.data.iter().map(|v| f(v.as_f64())).sum::<f64>() / t.len() as f64
}

pub fn adversarial_terms<T: Scalar>(
    real_scores: &Tensor<T>,
    fake_scores: &Tensor<T>,
    form: LossForm,
) -> AdversarialTerms {
    match form {
        LossForm::Log => {
            let mut clamped = 0;
            let log_real = real_scores
                .data
                .iter()
                .map(|s| clamped_log(sigmoid(s.as_f64()), &mut clamped))
                .sum::<f64>()
                / real_scores.len() as f64;
            let log_fake = fake_scores
                .data
                .iter()
                .map(|s| clamped_log(sigmoid(s.as_f64()), &mut clamped))
                .sum::<f64>()
                / fake_scores.len() as f64;
            let log_one_minus_fake = fake_scores
                .data
                .iter()
                .map(|s| clamped_log(1.0 - sigmoid(s.as_f64()), &mut clamped))
                .sum::<f64>()
                / fake_scores.len() as f64;
            AdversarialTerms {
                loss_g: -log_fake,
                loss_d: -log_real - log_one_minus_fake,
                value: log_real + log_one_minus_fake,
                written_value: log_real + 1.0 - log_fake,
                clamped,
            }
        }
        LossForm::LeastSquares => {
            let loss_d = mean(real_scores, |s| (s - 1.0).powi(2)) + mean(fake_scores, |s| s * s);
            let loss_g = mean(fake_scores, |s| (s - 1.0).powi(2));
            AdversarialTerms {
                loss_g,
                loss_d,
                value: -loss_d,
                written_value: -loss_d,
                clamped: 0,
            }
        }
    }
}

/// d loss_g / d fake_scores.
pub fn generator_score_grad<T: Scalar>(fake_scores: &Tensor<T>, form: LossForm) -> Tensor<T> {
    let n = fake_scores.len() as f64;
    fake_scores.map(|s| {
        let s = s.as_f64();
        let g = match form {
            LossForm::Log => {
                let p = sigmoid(s);
                if p < LOG_CLAMP {
                    0.0
                } else {
                    p - 1.0
                }
            }
            LossForm::LeastSquares => 2.0 * (s - 1.0),
        };
        T::from_f64_lossy(g / n)
    })
}

/// (d loss_d / d real_scores, d loss_d / d fake_scores).
pub fn discriminator_score_grads<T: Scalar>(
    real_scores: &Tensor<T>,
    fake_scores: &Tensor<T>,
    form: LossForm,
) -> (Tensor<T>, Tensor<T>) {
    let nr = real_scores.len() as f64;
    let nf = fake_scores.len() as f64;
    let real = real_scores.map(|s| {
        let s = s.as_f64();
        let g = match form {
            LossForm::Log => {
                let p = sigmoid(s);
                if p < LOG_CLAMP {
                    0.0
                } else {
                    p - 1.0
                }
            }
            LossForm::LeastSquares => 2.0 * (s - 1.0),
        };
        T::from_f64_lossy(g / nr)
    });
    let fake = fake_scores.map(|s| {
        let s = s.as_f64();
        let g = match form {
            LossForm::Log => {
                let p = sigmoid(s);
                if 1.0 - p < LOG_CLAMP {
                    0.0
                } else {
                    p
                }
            }
            LossForm::LeastSquares => 2.0 * s,
        };
        T::from_f64_lossy(g / nf)
    });
    (real, fake)
}

/// Adversarial losses of generator `g` against discriminator `d`: `real` are
/// target-domain samples, `source` the images `g` translates into fakes.
/// Scores are averaged over the batch.
pub fn adversarial_losses<T: Scalar>(
    g: &impl Translator<T>,
    d: &super::Discriminator<T>,
    real: &[Tensor<T>],
    source: &[Tensor<T>],
    form: LossForm,
) -> Result<AdversarialTerms> {
    if real.is_empty() || source.is_empty() {
        return Err(Error::InvalidArgument(
            "adversarial loss needs non-empty batches".into(),
        ));
    }
    let real_scores = real
        .iter()
        .map(|x| d.score(x))
        .collect::<Result<Vec<_>>>()?;
    let fake_scores = source
        .iter()
        .map(|x| d.score(&g.apply(x)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(adversarial_terms(
        &concat(&real_scores),
        &concat(&fake_scores),
        form,
    ))
}

fn concat<T: Scalar>(maps: &[Tensor<T>]) -> Tensor<T> {
    let data: Vec<T> = maps.iter().flat_map(|m| m.data.iter().copied()).collect();
    let n = data.len();
    Tensor::from_vec(1, 1, n, data).expect("consistent length")
}

/// `L_GAN(G_AB, D_B) + L_GAN(G_BA, D_A) + ω·L_cyc`.
pub fn total_objective(l_gan_ab: f64, l_gan_ba: f64, l_cyc: f64, omega: f64) -> f64 {
    l_gan_ab + l_gan_ba + omega * l_cyc
}
