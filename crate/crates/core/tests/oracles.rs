//! Library results against independent brute-force implementations.

use htlab_core::data::{gen_synthetic_scenario, PerClassCounts, StyleTransform, SyntheticConfig};
use htlab_core::losses::{rank_reg, selective_distill};
use htlab_core::numkit::{covariance, kl_div, softmax, top_singular_values};
use htlab_core::{Matrix, Rng};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

/// One-sided Jacobi SVD run directly on the centered matrix: rotate column
/// pairs until all are orthogonal, then read off the column norms.
fn jacobi_singular_values(z: &Matrix) -> Vec<f64> {
    let (n, d) = (z.rows(), z.cols());
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mean = (0..n).map(|i| z.get(i, j)).sum::<f64>() / n as f64;
            (0..n).map(|i| z.get(i, j) - mean).collect()
        })
        .collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..d {
            for q in p + 1..d {
                let alpha: f64 = cols[p].iter().map(|v| v * v).sum();
                let beta: f64 = cols[q].iter().map(|v| v * v).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(a, b)| a * b).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let (a, b) = (cols[p][i], cols[q][i]);
                    cols[p][i] = c * a - s * b;
                    cols[q][i] = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

#[test]
fn singular_values_match_jacobi_svd() {
    let mut rng = Rng::new(21, 0);
    for (n, d) in [(30, 8), (12, 12), (50, 20), (5, 9)] {
        let z = random_matrix(n, d, &mut rng);
        let k = n.min(d);
        let got = top_singular_values(&z, k).unwrap();
        let want = jacobi_singular_values(&z);
        // The library goes through the Gram matrix, so it is accurate in
        // sigma^2 relative to sigma_1^2; well-separated values also match in
        // sigma itself.
        let top = want[0] * want[0];
        for (g, w) in got.values().iter().zip(&want) {
            assert!((g * g - w * w).abs() <= 1e-12 * top, "{n}x{d}: {g} vs {w}");
            if *w > 1e-3 * want[0] {
                assert!((g - w).abs() <= 1e-9 * want[0], "{n}x{d}: {g} vs {w}");
            }
        }
    }
}

#[test]
fn singular_values_of_rank_deficient_features() {
    // Two directions only, so everything past the second value vanishes.
    let mut rng = Rng::new(5, 5);
    let a = random_matrix(40, 2, &mut rng);
    let b = random_matrix(2, 10, &mut rng);
    let z = a.matmul(&b);
    let s = top_singular_values(&z, 10).unwrap();
    let want = jacobi_singular_values(&z);
    assert!((s.values()[0] - want[0]).abs() < 1e-9 * want[0]);
    assert!(s.values()[3] < 1e-6 * s.values()[0]);
    assert_eq!(s.effective_rank(0.01), 2);
}

#[test]
fn kl_matches_naive_summation() {
    let mut rng = Rng::new(7, 0);
    for _ in 0..50 {
        let a: Vec<f64> = (0..6).map(|_| 2.0 * rng.normal()).collect();
        let b: Vec<f64> = (0..6).map(|_| 2.0 * rng.normal()).collect();
        let (p, q) = (softmax(&a).unwrap(), softmax(&b).unwrap());
        let mut naive = 0.0;
        for i in 0..6 {
            naive += p[i] * (p[i] / q[i]).ln();
        }
        assert!((kl_div(&p, &q).unwrap() - naive).abs() < 1e-12);
    }
}

#[test]
fn covariance_matches_double_loop() {
    let mut rng = Rng::new(8, 0);
    let z = random_matrix(17, 5, &mut rng);
    let c = covariance(&z).unwrap();
    for a in 0..5 {
        for b in 0..5 {
            let ma = (0..17).map(|i| z.get(i, a)).sum::<f64>() / 17.0;
            let mb = (0..17).map(|i| z.get(i, b)).sum::<f64>() / 17.0;
            let v = (0..17).map(|i| (z.get(i, a) - ma) * (z.get(i, b) - mb)).sum::<f64>() / 17.0;
            assert!((c.get(a, b) - v).abs() < 1e-12);
        }
    }
}

#[test]
fn rank_loss_matches_entrywise_oracle() {
    let mut rng = Rng::new(9, 0);
    let z = random_matrix(10, 6, &mut rng);
    let c = covariance(&z).unwrap();
    // (C^T C)_jj by explicit matrix product, then the squared 2-norm of the diagonal.
    let mut want = 0.0;
    for j in 0..6 {
        let mut ctc = 0.0;
        for i in 0..6 {
            ctc += c.get(i, j) * c.get(i, j);
        }
        want += ctc * ctc;
    }
    let got = rank_reg(&z).unwrap().loss;
    assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");
}

#[test]
fn distill_two_unseen_classes_by_hand() {
    // s^U = [0, ln 3] gives [0.25, 0.75]; t^U = [0, 0] gives [0.5, 0.5].
    let s = Matrix::from_rows(&[[5.0, 0.0, 3f64.ln()]]).unwrap();
    let t = Matrix::from_rows(&[[-2.0, 0.0, 0.0]]).unwrap();
    let got = selective_distill(&s, &t, &[true, false, false]).unwrap().loss;
    let want = 0.25 * (0.25f64 / 0.5).ln() + 0.75 * (0.75f64 / 0.5).ln();
    assert!((got - want).abs() < 1e-12);
    assert!((got - 0.130_812_035_941_137_7).abs() < 1e-12, "{got}");
}

#[test]
fn seen_classes_are_uniform_over_seeds() {
    // Each class should be seen with probability 6/10 across scenario seeds.
    let (classes, seen, trials) = (10usize, 6usize, 2000u64);
    let mut counts = vec![0usize; classes];
    for seed in 0..trials {
        let cfg = SyntheticConfig {
            num_classes: classes,
            num_seen: seen,
            dim: 2,
            counts: PerClassCounts {
                source: 1,
                target_train: 1,
                target_test: 1,
            },
            cluster_sep: 1.0,
            class_sigma: 0.1,
            style: StyleTransform::identity(2),
            seed,
        };
        let s = gen_synthetic_scenario(&cfg).unwrap();
        for (c, &m) in s.seen_mask.iter().enumerate() {
            counts[c] += usize::from(m);
        }
    }
    let expected = trials as f64 * seen as f64 / classes as f64;
    let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    // Marginal inclusion counts are dependent (they sum to a constant), so
    // this uses classes - 1 degrees of freedom.
    let p = 1.0 - ChiSquared::new((classes - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 1e-3, "chi2 {chi2}, p {p}, counts {counts:?}");
}
