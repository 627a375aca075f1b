use fracpin::obstacles::{sample_field, transform_u, InitialSurface, ModelParams, SampleWindow, StrengthLaw};
use proptest::prelude::*;

fn params(lambda: f64, seed: u64) -> ModelParams {
    ModelParams {
        n: 2,
        s: 0.5,
        r0: 1.0,
        r1: 2.0,
        lambda,
        strength_law: StrengthLaw::ShiftedExponential { min: 1.0, scale: 1.0 },
        rng_seed: seed,
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn counts_are_poisson_and_independent() {
    // two disjoint columns of cells, each 4 × 4 × 6
    let window = SampleWindow::new(4.0, vec![0, 0], vec![2, 1], 2.0, 8.0).unwrap();
    let lambda = 0.2;
    let mu = lambda * 4.0 * 4.0 * 6.0;
    let reps = 10_000;
    let (mut left, mut right) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
    for r in 0..reps as u64 {
        let f = sample_field(&params(lambda, r), &window).unwrap();
        let l = f.obstacles.iter().filter(|o| o.x[0] < 2.0).count() as f64;
        left.push(l);
        right.push(f.len() as f64 - l);
    }
    let n = reps as f64;
    for counts in [&left, &right] {
        let (m, v) = mean_var(counts);
        assert!((m - mu).abs() <= 3.0 * (mu / n).sqrt(), "mean {m} vs {mu}");
        let sd_var = ((mu + 2.0 * mu * mu) / n).sqrt();
        assert!((v - mu).abs() <= 3.0 * sd_var, "variance {v} vs {mu}");
    }
    let (ml, vl) = mean_var(&left);
    let (mr, vr) = mean_var(&right);
    let cov = left.iter().zip(&right).map(|(a, b)| (a - ml) * (b - mr)).sum::<f64>() / (n - 1.0);
    let corr = cov / (vl * vr).sqrt();
    assert!(corr.abs() <= 3.0 / n.sqrt(), "correlation {corr}");
}

#[test]
fn obstacles_sit_above_the_support_radius() {
    let window = SampleWindow::new(6.0, vec![-2, -2], vec![5, 5], 2.0, 12.0).unwrap();
    for seed in 0..20 {
        let f = sample_field(&params(0.05, seed), &window).unwrap();
        assert!(!f.is_empty());
        assert!(f.obstacles.iter().all(|o| o.y >= 2.0 && o.strength > 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn indexed_force_matches_brute_force(seed in 0u64..1000, x0 in -12.0f64..12.0, x1 in -12.0f64..12.0, u in 0.0f64..14.0) {
        let window = SampleWindow::new(6.0, vec![-2, -2], vec![5, 5], 2.0, 12.0).unwrap();
        let f = sample_field(&params(0.05, seed), &window).unwrap();
        let x = [x0, x1];
        let fast = f.force(&x, u);
        prop_assert!((fast - f.force_naive(&x, u)).abs() <= 1e-12);
        let outside = f.obstacles.iter().all(|o| {
            let d2 = (o.x[0] - x0).powi(2) + (o.x[1] - x1).powi(2) + (o.y - u).powi(2);
            d2 >= 4.0
        });
        if outside {
            prop_assert_eq!(fast, 0.0);
        }
    }

    #[test]
    fn force_derivative_matches_difference(seed in 0u64..1000, x0 in -12.0f64..12.0, x1 in -12.0f64..12.0, u in 0.5f64..14.0) {
        let window = SampleWindow::new(6.0, vec![-2, -2], vec![5, 5], 2.0, 12.0).unwrap();
        let f = sample_field(&params(0.05, seed), &window).unwrap();
        let x = [x0, x1];
        let (_, du) = f.force_and_du(&x, u);
        let e = 1e-6;
        let fd = (f.force(&x, u + e) - f.force(&x, u - e)) / (2.0 * e);
        prop_assert!((du - fd).abs() <= 1e-4 * (1.0 + du.abs()));
        prop_assert!(du.abs() <= f.force_du_bound() + 1e-12);
    }

    #[test]
    fn transform_keeps_base_coordinates(t0 in -0.5f64..0.5, t1 in -0.5f64..0.5, x0 in -50.0f64..50.0, x1 in -50.0f64..50.0, y in 0.0f64..20.0) {
        let surf = InitialSurface::new(vec![t0, t1], Vec::new(), 0.5, None).unwrap();
        let (x, z) = transform_u(&[x0, x1], y, &surf, false);
        prop_assert_eq!(x.clone(), vec![x0, x1]);
        let (xb, yb) = transform_u(&x, z, &surf, true);
        prop_assert_eq!(xb, vec![x0, x1]);
        prop_assert!((yb - y).abs() <= 1e-12 * (1.0 + y.abs()));
    }
}
