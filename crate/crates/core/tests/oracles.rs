//! Library results checked against independent brute-force references.

mod common;

use std::collections::BTreeMap;

use common::{f1, pr_oracle, random_map, random_matrix, reference_ssim, ssim_oracle};
use invloc::cyclegan::{Generator, GeneratorSpec, LayerName};
use invloc::datasets::{CorrespondenceSet, FrameId};
use invloc::features::{fuse, fuse_with, layer_f1_from_maps, ssim, Fusion, FusionMap};
use invloc::geometry::{Pose, Quat};
use invloc::placerec::{match_report, score_matrix};
use invloc::posereg::{pose_loss, quaternion_angle};
use invloc::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn ssim_matches_reference_on_random_pairs() {
    let r = ssim_oracle(100);
    assert!(r.max_diff < 1e-6, "max difference {}", r.max_diff);
    assert!(r.symmetric && r.self_one);
}

#[test]
fn pr_curve_matches_brute_force_counting() {
    pr_oracle(50).unwrap();
}

#[test]
fn score_matrix_is_pairwise_ssim() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let q: Vec<_> = (0..4).map(|_| random_map(12, 14, &mut rng)).collect();
    let db: Vec<_> = (0..5).map(|_| random_map(12, 14, &mut rng)).collect();
    let q_ids = [3, 4, 5, 6];
    let db_ids = [0, 1, 2, 3, 4];
    let gt = CorrespondenceSet::identity(0..10);
    let m = score_matrix(&q, &db, &q_ids, &db_ids, &gt).unwrap();
    for (i, a) in q.iter().enumerate() {
        for (j, b) in db.iter().enumerate() {
            assert_eq!(m.get(i, j), ssim(a, b).unwrap() as f32);
            assert_eq!(m.is_match(i, j), q_ids[i] == db_ids[j]);
        }
    }
}

#[test]
fn match_report_agrees_with_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let m = random_matrix(&mut rng, 12);
        let report = match_report(&m, 5).unwrap();
        for (i, qm) in report.iter().enumerate() {
            let mut order: Vec<usize> = (0..m.n_db()).collect();
            // descending score, then ascending database index
            order.sort_by(|&a, &b| {
                m.get(i, b)
                    .partial_cmp(&m.get(i, a))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let got: Vec<usize> = qm.ranked.iter().map(|r| r.db_index).collect();
            assert_eq!(got, order[..5]);
            for r in &qm.ranked {
                assert_eq!(r.correct, m.is_match(i, r.db_index));
            }
        }
        assert!(match_report(&m, 13).is_err());
    }
}

#[test]
fn layer_analysis_matches_exhaustive_thresholds() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let ids: Vec<FrameId> = vec![0, 1, 2];
    let gt = CorrespondenceSet::identity(ids.clone());
    let mut maps = BTreeMap::new();
    for layer in [LayerName::Conv(1), LayerName::Conv(3), LayerName::Res(2)] {
        let q: Vec<_> = (0..3).map(|_| random_map(16, 16, &mut rng)).collect();
        let db: Vec<_> = q
            .iter()
            .map(|m| {
                let noise = rng.random_range(0.0..3.0);
                let data = m
                    .data
                    .iter()
                    .map(|&v| v + rng.random_range(-noise..=noise))
                    .collect();
                FusionMap::new(16, 16, data).unwrap()
            })
            .collect();
        maps.insert(layer, (q, db));
    }
    let analysis = layer_f1_from_maps(&maps, &ids, &ids, &gt).unwrap();
    for (layer, (q, db)) in &maps {
        let scores: Vec<f64> = q
            .iter()
            .flat_map(|a| db.iter().map(move |b| reference_ssim(a, b) as f32 as f64))
            .collect();
        let mut best: f64 = 0.0;
        for &t in &scores {
            let (mut tp, mut pred) = (0.0, 0.0);
            for (k, &s) in scores.iter().enumerate() {
                if s >= t {
                    pred += 1.0;
                    if k / 3 == k % 3 {
                        tp += 1.0;
                    }
                }
            }
            best = best.max(f1(tp / pred, tp / 3.0));
        }
        let got = analysis.f1(*layer).unwrap();
        assert!((got - best).abs() < 1e-9, "{layer}: {got} vs {best}");
    }
    let max = analysis.per_layer.iter().map(|s| s.f1).fold(0.0, f64::max);
    assert_eq!(analysis.f1(analysis.selected_layer), Some(max));

    // a common positive rescaling of every map leaves SSIM, and so the
    // analysis, unchanged
    let scaled: BTreeMap<_, _> = maps
        .iter()
        .map(|(l, (q, db))| {
            let s = |v: &Vec<FusionMap>| {
                v.iter()
                    .map(|m| {
                        FusionMap::new(m.height, m.width, m.data.iter().map(|x| x * 8.0).collect())
                            .unwrap()
                    })
                    .collect::<Vec<_>>()
            };
            (*l, (s(q), s(db)))
        })
        .collect();
    let again = layer_f1_from_maps(&scaled, &ids, &ids, &gt).unwrap();
    for (a, b) in analysis.per_layer.iter().zip(&again.per_layer) {
        assert!((a.f1 - b.f1).abs() < 1e-9);
    }
    assert_eq!(analysis.selected_layer, again.selected_layer);
}

#[test]
fn fusion_sums_channels_and_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mk = |rng: &mut ChaCha8Rng| {
        let data = (0..5 * 6 * 7)
            .map(|_| rng.random_range(-2.0f32..2.0))
            .collect();
        Tensor::from_vec(5, 6, 7, data).unwrap()
    };
    let (a, b) = (mk(&mut rng), mk(&mut rng));
    let fa = fuse(&a);
    assert_eq!(fa.shape(), (6, 7));
    for y in 0..6 {
        for x in 0..7 {
            let want: f64 = (0..5).map(|c| a.at(c, y, x) as f64).sum();
            assert!((fa.at(y, x) as f64 - want).abs() < 1e-5);
        }
    }
    let mut sum = a.clone();
    sum.add_assign(&b);
    let (fb, fs) = (fuse(&b), fuse(&sum));
    for i in 0..fs.data.len() {
        assert!((fs.data[i] - fa.data[i] - fb.data[i]).abs() < 1e-4);
    }
    let fm = fuse_with(&a, Fusion::Mean);
    for i in 0..fm.data.len() {
        assert!((fm.data[i] * 5.0 - fa.data[i]).abs() < 1e-4);
    }
}

#[test]
fn conv3_fusion_of_a_full_size_image_is_64_by_64() {
    let g = Generator::<f32>::new(GeneratorSpec::default()).unwrap();
    let img = Tensor::zeros(3, 256, 256);
    let map = invloc::features::extract(&g, &img, LayerName::Conv(3)).unwrap();
    assert_eq!(map.shape(), (64, 64));
    assert_eq!(map.source_layer, Some(LayerName::Conv(3)));
}

#[test]
fn pose_loss_matches_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let px: [f64; 3] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        let pq: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let x: [f64; 3] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        let q = Quat::from_axis_angle([1.0, 0.5, -0.3], rng.random_range(-3.1..3.1));
        let beta = rng.random_range(0.0..500.0);
        let qa = q.normalized().unwrap().to_array();
        // ground truth sign-aligned to the prediction
        let dot: f64 = qa.iter().zip(&pq).map(|(a, b)| a * b).sum();
        let s = if dot < 0.0 { -1.0 } else { 1.0 };
        let nx = px
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let nq = pq
            .iter()
            .zip(&qa)
            .map(|(a, b)| (a - s * b).powi(2))
            .sum::<f64>()
            .sqrt();
        let got = pose_loss(px, pq, &Pose::new(x, q), beta).unwrap();
        assert!((got - (nx + beta * nq)).abs() < 1e-9 * (1.0 + got));
    }
}

fn quat() -> impl Strategy<Value = Quat> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(w, x, y, z)| {
            w * w + x * x + y * y + z * z > 1e-2
        })
        .prop_map(|(w, x, y, z)| Quat::new(w, x, y, z).normalized().unwrap())
}

proptest! {
    #[test]
    fn quaternion_angle_is_a_metric(a in quat(), b in quat(), c in quat()) {
        prop_assert!(quaternion_angle(a, a).abs() < 1e-5);
        prop_assert!(quaternion_angle(a, -a).abs() < 1e-5);
        let ab = quaternion_angle(a, b);
        prop_assert!((ab - quaternion_angle(b, a)).abs() < 1e-9);
        prop_assert!((0.0..=180.0 + 1e-9).contains(&ab));
        prop_assert!(ab <= quaternion_angle(a, c) + quaternion_angle(c, b) + 1e-6);
    }
}

#[test]
fn quaternion_angle_of_a_quarter_turn() {
    let q = Quat::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
    assert!((quaternion_angle(Quat::IDENTITY, q) - 90.0).abs() < 1e-6);
}
