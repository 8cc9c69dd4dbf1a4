//! Randomized invariants.

use htlab_core::data::{random_orthogonal, Dataset};
use htlab_core::eval::{aggregate_seeds, evaluate, evaluate_scores, Metrics, SeedResult};
use htlab_core::losses::{compose, cross_entropy, rank_reg, selective_distill, LossSpec, RankSign};
use htlab_core::model::{init_model, predict_logits, Activation, MlpSpec};
use htlab_core::numkit::{argmax, covariance, kl_div, softmax, top_singular_values};
use htlab_core::{Matrix, Rng};
use proptest::prelude::*;

fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    lo..hi
}

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(finite(-scale, scale), rows * cols)
        .prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(finite(-6.0, 6.0), n).prop_map(|v| softmax(&v).unwrap())
}

fn seen_mask(c: usize) -> impl Strategy<Value = Vec<bool>> {
    // At least one seen and one unseen column.
    prop::collection::vec(any::<bool>(), c).prop_filter("mixed mask", |m| m.iter().any(|&b| b) && m.iter().any(|&b| !b))
}

proptest! {
    #[test]
    fn softmax_is_a_distribution_with_the_same_argmax(x in prop::collection::vec(finite(-50.0, 50.0), 1..12)) {
        let p = softmax(&x).unwrap();
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(argmax(&p), argmax(&x));
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_the_diagonal((p, q) in (2usize..8).prop_flat_map(|n| (simplex(n), simplex(n)))) {
        let d = kl_div(&p, &q).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!(kl_div(&p, &p).unwrap().abs() < 1e-12);
        let gap = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if gap >= 1e-6 {
            prop_assert!(d > 0.0);
        }
    }

    #[test]
    fn covariance_is_symmetric_and_permutation_invariant(z in matrix(9, 4, 5.0), seed in any::<u64>()) {
        let c = covariance(&z).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                prop_assert_eq!(c.get(a, b), c.get(b, a));
            }
        }
        let mut perm: Vec<usize> = (0..9).collect();
        Rng::new(seed, 0).shuffle(&mut perm);
        let cp = covariance(&z.select_rows(&perm)).unwrap();
        prop_assert!(c.max_abs_diff(&cp) < 1e-12);
    }

    #[test]
    fn spectrum_is_descending_and_rotation_invariant(z in matrix(12, 5, 3.0), seed in any::<u64>()) {
        let s = top_singular_values(&z, 5).unwrap();
        prop_assert!(s.values().windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.values().iter().all(|&v| v >= 0.0));
        let q = random_orthogonal(5, &mut Rng::new(seed, 1));
        let r = top_singular_values(&z.matmul(&q), 5).unwrap();
        for (a, b) in s.values().iter().zip(r.values()) {
            prop_assert!((a - b).abs() < 1e-8, "{} vs {}", a, b);
        }
    }

    #[test]
    fn rng_streams_repeat(seed in any::<u64>(), stream in any::<u64>()) {
        let (mut a, mut b) = (Rng::new(seed, stream), Rng::new(seed, stream));
        for _ in 0..10_000 {
            prop_assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn distill_is_nonnegative_and_zero_when_unseen_logits_agree(
        (src, tgt, mask) in (3usize..7).prop_flat_map(|c| (matrix(4, c, 8.0), matrix(4, c, 8.0), seen_mask(c))),
    ) {
        prop_assert!(selective_distill(&src, &tgt, &mask).unwrap().loss >= 0.0);
        // Seen columns and a per-row constant shift do not matter.
        let mut moved = src.clone();
        for i in 0..moved.rows() {
            for (j, &seen) in mask.iter().enumerate() {
                let v = moved.get(i, j) + if seen { 3.0 * tgt.get(i, j) } else { 1.5 };
                moved.set(i, j, v);
            }
        }
        prop_assert!(selective_distill(&src, &moved, &mask).unwrap().loss.abs() < 1e-12);
    }

    #[test]
    fn rank_reg_ignores_row_shifts(z in matrix(7, 4, 3.0), shift in prop::collection::vec(finite(-100.0, 100.0), 4)) {
        let base = rank_reg(&z).unwrap();
        let mut moved = z.clone();
        moved.add_row_vector(&shift);
        let r = rank_reg(&moved).unwrap();
        prop_assert!((base.loss - r.loss).abs() <= 1e-10 * base.loss.max(1.0));
        prop_assert!(base.grad.max_abs_diff(&r.grad) <= 1e-10 * 1f64.max(base.grad.as_slice().iter().fold(0.0, |m, v| f64::max(m, v.abs()))));
    }

    #[test]
    fn compose_is_linear_in_each_weight(
        logits in matrix(5, 4, 3.0),
        src in matrix(5, 4, 3.0),
        feats in matrix(5, 3, 2.0),
        base_d in finite(0.0, 2.0),
        base_r in finite(0.0, 2.0),
        penalize in any::<bool>(),
    ) {
        let labels = [0, 1, 1, 0, 1];
        let mask = [true, true, false, false];
        let ce = cross_entropy(&logits, &labels).unwrap();
        let d = selective_distill(&src, &logits, &mask).unwrap();
        let r = rank_reg(&feats).unwrap();
        let sign = if penalize { RankSign::Penalize } else { RankSign::Reward };
        let total = |ld: f64, lr: f64| {
            let spec = LossSpec { lambda_distill: ld, lambda_rank: lr, rank_sign: sign };
            compose(&ce, Some(&d), Some(&r), &spec).unwrap().breakdown
        };
        for ld in [0.0, base_d, 2.0 * base_d + 0.5] {
            let b = total(ld, base_r);
            let want = ce.loss + ld * d.loss + sign.value() * base_r * r.loss;
            prop_assert!((b.total - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
        for lr in [0.0, base_r, 3.0 * base_r + 0.25] {
            let b = total(base_d, lr);
            let want = ce.loss + base_d * d.loss + sign.value() * lr * r.loss;
            prop_assert!((b.total - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn report_views_are_consistent(
        (scores, labels, mask) in (3usize..8).prop_flat_map(|c| {
            (matrix(30, c, 2.0), prop::collection::vec(0..c, 30), seen_mask(c))
        }),
    ) {
        prop_assume!(labels.iter().any(|&y| mask[y]) && labels.iter().any(|&y| !mask[y]));
        let r = evaluate_scores(&scores, &labels, &mask, None).unwrap();
        let n = (r.n_seen + r.n_unseen) as f64;
        let mix = (r.n_seen as f64 * r.seen_acc + r.n_unseen as f64 * r.unseen_acc) / n;
        prop_assert!((r.overall_acc - mix).abs() <= 1e-12);
        prop_assert!(r.seen_chopped_acc >= r.seen_acc);
        // Brute-force count of correct argmax predictions.
        let hits = labels.iter().enumerate().filter(|(i, &y)| argmax(scores.row(*i)) == y).count();
        prop_assert_eq!(r.overall_acc, hits as f64 / labels.len() as f64);
    }

    #[test]
    fn false_negative_rate_is_a_fraction(scores in matrix(24, 4, 2.0), labels in prop::collection::vec(0usize..4, 24)) {
        use htlab_core::data::ToxicityMap;
        let toxicity = ToxicityMap { pairs: vec![(0, 1), (2, 3)] };
        let mask = [false, true, false, true];
        prop_assume!(labels.iter().any(|&y| mask[y]) && labels.iter().any(|&y| !mask[y]));
        let r = evaluate_scores(&scores, &labels, &mask, Some(&toxicity)).unwrap();
        let fnr = r.false_negative_rate.unwrap();
        prop_assert!((0.0..=1.0).contains(&fnr));
        let misrouted = labels.iter().enumerate().any(|(i, &y)| !mask[y] && mask[argmax(scores.row(i))]);
        if !misrouted {
            prop_assert_eq!(fnr, 0.0);
        }
    }

    #[test]
    fn evaluation_is_pure(seed in any::<u64>()) {
        let spec = MlpSpec::new(vec![3, 6, 4], Activation::Tanh).with_batchnorm(true);
        let mut rng = Rng::new(seed, 0);
        let params = init_model(&spec, &mut rng).unwrap();
        let x = Matrix::from_vec(16, 3, (0..48).map(|_| rng.normal()).collect()).unwrap();
        let labels: Vec<usize> = (0..16).map(|i| i % 4).collect();
        let test = Dataset::new(x, labels, 4).unwrap();
        let mask = [true, false, true, false];
        let before = params.clone();
        let a = evaluate(&params, &test, &mask, None, 4).unwrap();
        let b = evaluate(&params, &test, &mask, None, 4).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&params, &before);
        prop_assert_eq!(predict_logits(&params, test.features()).unwrap(), predict_logits(&before, test.features()).unwrap());
    }

    #[test]
    fn aggregation_ignores_seed_order(
        values in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..64.0), 2..6),
        seed in any::<u64>(),
    ) {
        let results: Vec<SeedResult> = values.iter().enumerate().map(|(i, &(o, s, u, er))| SeedResult {
            scenario_id: "ref".into(),
            protocol: "naive_ft".into(),
            seed: i as u64,
            metrics: Metrics { overall: o, seen: s, unseen: u, seen_chopped: s.max(u), fnr: None, effective_rank: er },
        }).collect();
        let mut shuffled = results.clone();
        Rng::new(seed, 0).shuffle(&mut shuffled);
        let a = aggregate_seeds(&results).unwrap();
        let b = aggregate_seeds(&shuffled).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12;
        prop_assert!(close(a.mean.overall, b.mean.overall) && close(a.mean.unseen, b.mean.unseen));
        prop_assert!(close(a.variance.seen, b.variance.seen) && close(a.variance.effective_rank, b.variance.effective_rank));
        prop_assert!(a.variance.overall >= 0.0 && a.variance.effective_rank >= 0.0);
    }
}
