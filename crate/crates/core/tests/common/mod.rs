//! Shared reference implementations and gradient checks for the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

use invloc::cyclegan::loss::{discriminator_score_grads, generator_score_grad, l1_with_grad};
use invloc::cyclegan::{
    adversarial_losses, cycle_loss, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec,
    LossForm,
};
use invloc::datasets::{CorrespondenceSet, FrameId};
use invloc::features::{ssim, FusionMap};
use invloc::geometry::{Pose, Quat};
use invloc::nn::ParamStore;
use invloc::placerec::{f1_best, pr_curve, ScoreMatrix, Thresholds};
use invloc::posereg::{pose_loss, pose_loss_grad, PoseNet, PoseNetSpec};
use invloc::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const H: f64 = 1e-6;

pub fn randomize(p: &mut ParamStore<f64>, sigma: f64, rng: &mut ChaCha8Rng) {
    let n = Normal::new(0.0, sigma).unwrap();
    for v in p.values.iter_mut().flatten() {
        *v = n.sample(rng);
    }
}

pub fn image(c: usize, s: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..c * s * s)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::from_vec(c, s, s, data).unwrap()
}

#[derive(Clone)]
pub struct Nets {
    g_ab: Generator<f64>,
    g_ba: Generator<f64>,
    d_a: Discriminator<f64>,
    d_b: Discriminator<f64>,
}

impl Nets {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gs = GeneratorSpec {
            image_channels: 2,
            base_channels: 2,
            n_res_blocks: 1,
            image_size: 8,
        };
        let ds = DiscriminatorSpec {
            image_channels: 2,
            base_channels: 2,
            n_layers: 1,
        };
        let mut nets = Nets {
            g_ab: Generator::new(gs.clone()).unwrap(),
            g_ba: Generator::new(gs).unwrap(),
            d_a: Discriminator::new(ds.clone()).unwrap(),
            d_b: Discriminator::new(ds).unwrap(),
        };
        for net in 0..4 {
            randomize(store(&mut nets, net), 0.5, &mut rng);
        }
        nets
    }

    pub fn zero_grad(&mut self) {
        for net in 0..4 {
            store(self, net).zero_grad();
        }
    }
}

pub fn store(n: &mut Nets, net: usize) -> &mut ParamStore<f64> {
    match net {
        0 => &mut n.g_ab.params,
        1 => &mut n.g_ba.params,
        2 => &mut n.d_a.params,
        _ => &mut n.d_b.params,
    }
}

/// Compares accumulated grads of network `net` against central differences
/// of `f` on a spread of coordinates; returns the worst relative error.
pub fn check(nets: &Nets, net: usize, f: impl Fn(&Nets) -> f64) -> f64 {
    let mut probe = nets.clone();
    let grads = store(&mut probe, net).grads.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (t, g) in grads.iter().enumerate() {
        for i in (0..g.len()).step_by((g.len() / 7).max(1)) {
            let orig = store(&mut probe, net).values[t][i];
            store(&mut probe, net).values[t][i] = orig + H;
            let up = f(&probe);
            store(&mut probe, net).values[t][i] = orig - H;
            let down = f(&probe);
            store(&mut probe, net).values[t][i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let scale = numeric.abs().max(g[i].abs());
            if scale > 1e-7 {
                worst = worst.max((numeric - g[i]).abs() / scale);
            }
            checked += 1;
        }
    }
    assert!(checked > 10);
    worst
}

pub fn split(t: &Tensor<f64>, sizes: &[(usize, usize, usize)]) -> Vec<Tensor<f64>> {
    let mut off = 0;
    sizes
        .iter()
        .map(|&(c, h, w)| {
            let n = c * h * w;
            let part = Tensor::from_vec(c, h, w, t.data[off..off + n].to_vec()).unwrap();
            off += n;
            part
        })
        .collect()
}

pub fn concat(maps: &[Tensor<f64>]) -> Tensor<f64> {
    let data: Vec<f64> = maps.iter().flat_map(|m| m.data.clone()).collect();
    let n = data.len();
    Tensor::from_vec(1, 1, n, data).unwrap()
}

/// Worst relative errors of the cycle-loss gradient for (G_AB, G_BA).
pub fn cycle_gradient_error() -> [f64; 2] {
    let mut nets = Nets::new(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a: Vec<_> = (0..2).map(|_| image(2, 8, &mut rng)).collect();
    let b: Vec<_> = (0..2).map(|_| image(2, 8, &mut rng)).collect();
    nets.zero_grad();
    let scale = 1.0 / a.len() as f64;
    for x in &a {
        let (fake, t1) = nets.g_ab.forward_train(x).unwrap();
        let (rec, t2) = nets.g_ba.forward_train(&fake).unwrap();
        let (_, d) = l1_with_grad(&rec, x).unwrap();
        let dfake = nets.g_ba.backward(&t2, &d.map(|v| v * scale));
        nets.g_ab.backward(&t1, &dfake);
    }
    for x in &b {
        let (fake, t1) = nets.g_ba.forward_train(x).unwrap();
        let (rec, t2) = nets.g_ab.forward_train(&fake).unwrap();
        let (_, d) = l1_with_grad(&rec, x).unwrap();
        let dfake = nets.g_ab.backward(&t2, &d.map(|v| v * scale));
        nets.g_ba.backward(&t1, &dfake);
    }
    let f = |n: &Nets| cycle_loss(&n.g_ab, &n.g_ba, &a, &b).unwrap();
    [check(&nets, 0, f), check(&nets, 1, f)]
}

/// Worst relative errors of the adversarial gradients for (generator,
/// discriminator).
pub fn adversarial_gradient_error(form: LossForm) -> (f64, f64) {
    let mut nets = Nets::new(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let real: Vec<_> = (0..2).map(|_| image(2, 8, &mut rng)).collect();
    let source: Vec<_> = (0..2).map(|_| image(2, 8, &mut rng)).collect();

    // generator side: loss_g through D_B into G_AB
    nets.zero_grad();
    let mut fakes = Vec::new();
    let mut scores = Vec::new();
    let mut traces = Vec::new();
    for x in &source {
        let (fake, tg) = nets.g_ab.forward_train(x).unwrap();
        let (s, td) = nets.d_b.forward_train(&fake).unwrap();
        fakes.push(fake);
        scores.push(s);
        traces.push((tg, td));
    }
    let shapes: Vec<_> = scores.iter().map(Tensor::shape).collect();
    let dscores = split(&generator_score_grad(&concat(&scores), form), &shapes);
    for ((tg, td), ds) in traces.iter().zip(&dscores) {
        let dfake = nets.d_b.backward(td, ds);
        nets.g_ab.backward(tg, &dfake);
    }
    let loss_g = |n: &Nets| {
        adversarial_losses(&n.g_ab, &n.d_b, &real, &source, form)
            .unwrap()
            .loss_g
    };
    let err_g = check(&nets, 0, loss_g);
    // discriminator side: loss_d into D_B with the fakes held fixed
    nets.zero_grad();
    let real_out: Vec<_> = real
        .iter()
        .map(|x| nets.d_b.forward_train(x).unwrap())
        .collect();
    let fake_out: Vec<_> = fakes
        .iter()
        .map(|x| nets.d_b.forward_train(x).unwrap())
        .collect();
    let rs: Vec<_> = real_out.iter().map(|(s, _)| s.clone()).collect();
    let fs: Vec<_> = fake_out.iter().map(|(s, _)| s.clone()).collect();
    let (dr, df) = discriminator_score_grads(&concat(&rs), &concat(&fs), form);
    let dr = split(&dr, &rs.iter().map(Tensor::shape).collect::<Vec<_>>());
    let df = split(&df, &fs.iter().map(Tensor::shape).collect::<Vec<_>>());
    for ((_, t), d) in real_out.iter().zip(&dr).chain(fake_out.iter().zip(&df)) {
        nets.d_b.backward(t, d);
    }
    let g_fixed = nets.g_ab.clone();
    let loss_d = |n: &Nets| {
        adversarial_losses(&g_fixed, &n.d_b, &real, &source, form)
            .unwrap()
            .loss_d
    };
    (err_g, check(&nets, 3, loss_d))
}

/// Worst relative error of `pose_loss_grad` over random cases.
pub fn pose_loss_gradient_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let px: [f64; 3] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let pq: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let gt = Pose::new(
            std::array::from_fn(|_| rng.random_range(-3.0..3.0)),
            Quat::from_axis_angle([0.3, 1.0, -0.2], rng.random_range(-3.0..3.0)),
        );
        let beta = rng.random_range(1.0..300.0);
        let (_, gx, gq) = pose_loss_grad(px, pq, &gt, beta).unwrap();
        for k in 0..7 {
            let eval = |d: f64| {
                let (mut x, mut q) = (px, pq);
                if k < 3 {
                    x[k] += d;
                } else {
                    q[k - 3] += d;
                }
                pose_loss(x, q, &gt, beta).unwrap()
            };
            let numeric = (eval(H) - eval(-H)) / (2.0 * H);
            let analytic = if k < 3 { gx[k] } else { gq[k - 3] };
            let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

/// Worst relative error of the pose network's parameter gradients.
pub fn pose_net_gradient_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut net = PoseNet::<f64>::new(PoseNetSpec {
        in_channels: 2,
        input_size: 16,
        widths: vec![3, 3, 4],
        fc_width: 5,
    })
    .unwrap();
    randomize(&mut net.params, 0.5, &mut rng);
    let x = image(2, 16, &mut rng);
    let gt = Pose::new(
        [0.5, -1.0, 2.0],
        Quat::from_axis_angle([0.0, 1.0, 0.0], 0.7),
    );
    let beta = 5.0;
    let loss = |n: &PoseNet<f64>| {
        let (px, pq) = n.forward(&x).unwrap();
        pose_loss(px, pq, &gt, beta).unwrap()
    };
    net.params.zero_grad();
    let ((px, pq), trace) = net.forward_train(&x).unwrap();
    let (_, gx, gq) = pose_loss_grad(px, pq, &gt, beta).unwrap();
    net.backward(&trace, &gx, &gq);
    let grads = net.params.grads.clone();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for t in 0..grads.len() {
        let len = grads[t].len();
        for i in (0..len).step_by((len / 5).max(1)) {
            let orig = probe.params.values[t][i];
            probe.params.values[t][i] = orig + H;
            let up = loss(&probe);
            probe.params.values[t][i] = orig - H;
            let down = loss(&probe);
            probe.params.values[t][i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let scale = numeric.abs().max(grads[t][i].abs());
            if scale > 1e-7 {
                worst = worst.max((numeric - grads[t][i]).abs() / scale);
            }
        }
    }
    worst
}

pub fn random_map(h: usize, w: usize, rng: &mut ChaCha8Rng) -> FusionMap {
    let scale = rng.random_range(0.1..20.0);
    let offset = rng.random_range(-5.0..5.0);
    let data = (0..h * w)
        .map(|_| (offset + scale * rng.random_range(-1.0..1.0)) as f32)
        .collect();
    FusionMap::new(h, w, data).unwrap()
}

/// Direct two-dimensional SSIM: explicit window, two-pass moments.
pub fn reference_ssim(a: &FusionMap, b: &FusionMap) -> f64 {
    let (h, w) = (a.height, a.width);
    let n = 11.min(h).min(w);
    let c = (n as f64 - 1.0) / 2.0;
    let mut win = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for (y, row) in win.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let r2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            *v = (-r2 / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let px = |m: &FusionMap, y: usize, x: usize| m.data[y * w + x] as f64;
    let all = a.data.iter().chain(&b.data).map(|&v| v as f64);
    let lo = all.clone().fold(f64::INFINITY, f64::min);
    let hi = all.fold(f64::NEG_INFINITY, f64::max);
    let l = (hi - lo).max(1e-6);
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for oy in 0..=h - n {
        for ox in 0..=w - n {
            let mut mx = 0.0;
            let mut my = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let k = win[i][j] / total;
                    mx += k * px(a, oy + i, ox + j);
                    my += k * px(b, oy + i, ox + j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let k = win[i][j] / total;
                    let dx = px(a, oy + i, ox + j) - mx;
                    let dy = px(b, oy + i, ox + j) - my;
                    vx += k * dx * dx;
                    vy += k * dy * dy;
                    cxy += k * dx * dy;
                }
            }
            sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

pub struct SsimOracle {
    pub max_diff: f64,
    pub symmetric: bool,
    pub self_one: bool,
}

/// Compares `ssim` with [`reference_ssim`] on `n` random pairs.
pub fn ssim_oracle(n: usize) -> SsimOracle {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out = SsimOracle {
        max_diff: 0.0,
        symmetric: true,
        self_one: true,
    };
    for case in 0..n {
        let h = rng.random_range(3..32);
        let w = rng.random_range(3..32);
        let a = random_map(h, w, &mut rng);
        let b = if case % 4 == 0 {
            // correlated pair, so high similarities are exercised too
            let data = a
                .data
                .iter()
                .map(|&v| v + rng.random_range(-0.3..0.3))
                .collect();
            FusionMap::new(h, w, data).unwrap()
        } else {
            random_map(h, w, &mut rng)
        };
        let got = ssim(&a, &b).unwrap();
        out.max_diff = out.max_diff.max((got - reference_ssim(&a, &b)).abs());
        out.symmetric &= (got - ssim(&b, &a).unwrap()).abs() < 1e-12;
        out.self_one &= (ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9
            && (ssim(&b, &b).unwrap() - 1.0).abs() < 1e-9;
    }
    out
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> ScoreMatrix {
    // coarse levels force plenty of tied scores
    let levels = rng.random_range(3..40);
    let scores = (0..n * n)
        .map(|_| rng.random_range(0..levels) as f32 / levels as f32)
        .collect();
    let ids: Vec<FrameId> = (0..n as FrameId).collect();
    let mut pairs: Vec<(FrameId, FrameId)> = ids
        .iter()
        .filter_map(|&q| {
            rng.random_bool(0.6)
                .then(|| (q, rng.random_range(0..n as FrameId)))
        })
        .collect();
    if pairs.is_empty() {
        pairs.push((0, 0));
    }
    let gt = CorrespondenceSet {
        pairs,
        tolerance: rng.random_range(0..2),
    };
    ScoreMatrix::new(scores, ids.clone(), ids, gt).unwrap()
}

pub fn brute_force(m: &ScoreMatrix, t: f64) -> (f64, f64) {
    let (mut tp, mut predicted, mut positives) = (0, 0, 0);
    for i in 0..m.n_q() {
        for j in 0..m.n_db() {
            let p = m.get(i, j) as f64 >= t;
            let truth = m.is_match(i, j);
            predicted += p as usize;
            positives += truth as usize;
            tp += (p && truth) as usize;
        }
    }
    let precision = if predicted == 0 {
        1.0
    } else {
        tp as f64 / predicted as f64
    };
    (precision, tp as f64 / positives as f64)
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Checks `pr_curve` on `n` random 20×20 matrices against brute-force
/// counting; returns a description of the first disagreement.
pub fn pr_oracle(n: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..n {
        let m = random_matrix(&mut rng, 20);
        let curve = pr_curve(&m, &Thresholds::Auto).map_err(|e| e.to_string())?;
        let mut distinct: Vec<f64> = m.scores.iter().map(|&s| s as f64).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if curve.points.len() != distinct.len() {
            return Err(format!(
                "case {case}: {} points for {} distinct scores",
                curve.points.len(),
                distinct.len()
            ));
        }
        let mut best: f64 = 0.0;
        for (p, &t) in curve.points.iter().zip(&distinct) {
            let (precision, recall) = brute_force(&m, t);
            if p.threshold != t || (p.precision, p.recall) != (precision, recall) {
                return Err(format!(
                    "case {case}, threshold {t}: {p:?} vs ({precision}, {recall})"
                ));
            }
            best = best.max(f1(precision, recall));
        }
        if f1_best(&curve) != best || curve.best_f1 != best {
            return Err(format!(
                "case {case}: best F1 {} vs {best}",
                f1_best(&curve)
            ));
        }
        if curve.points.windows(2).any(|w| w[1].recall > w[0].recall) {
            return Err(format!("case {case}: recall rose with the threshold"));
        }

        // explicit thresholds, including ones outside the score range
        let list: Vec<f64> = (0..15).map(|_| rng.random_range(-0.2..1.2)).collect();
        let curve = pr_curve(&m, &Thresholds::List(list)).map_err(|e| e.to_string())?;
        for p in &curve.points {
            if (p.precision, p.recall) != brute_force(&m, p.threshold) {
                return Err(format!("case {case}: listed threshold {}", p.threshold));
            }
        }
    }
    Ok(())
}
