use fracpin::lifting::{mollified_lift, mollifier_c0, LatticeHeights, LiftField};
use fracpin::percolation::LatticeWindow;
use proptest::prelude::*;

const SIDE: usize = 4;
const L: f64 = 3.0;
const D: f64 = 2.0;
const P: f64 = L + D;

fn lift(lambda: Vec<f64>, h: f64, alpha: f64) -> LiftField {
    let w = LatticeWindow::new(vec![0, 0], vec![SIDE, SIDE], true).unwrap();
    mollified_lift(LatticeHeights::new(w, lambda, h, L, D, alpha).unwrap())
}

fn heights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, SIDE * SIDE)
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    [0.0f64..SIDE as f64 * P, 0.0f64..SIDE as f64 * P]
}

/// Central second differences of the lift, Frobenius norm.
fn fd_hessian(f: &LiftField, x: &[f64; 2], e: f64) -> (Vec<f64>, f64) {
    let v = |a: f64, b: f64| f.eval(&[x[0] + a, x[1] + b]);
    let c = v(0.0, 0.0);
    let hxx = (v(e, 0.0) - 2.0 * c + v(-e, 0.0)) / (e * e);
    let hyy = (v(0.0, e) - 2.0 * c + v(0.0, -e)) / (e * e);
    let hxy = (v(e, e) - v(e, -e) - v(-e, e) + v(-e, -e)) / (4.0 * e * e);
    let h = vec![hxx, hxy, hxy, hyy];
    let norm = h.iter().map(|t| t * t).sum::<f64>().sqrt();
    (h, norm)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lift_stays_within_the_height_range(lam in heights(), x in point()) {
        let f = lift(lam.clone(), 1.0, 0.5);
        let lo = lam.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = lam.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let v = f.eval(&x);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn lift_is_linear(a in heights(), b in heights(), c in -3.0f64..3.0, x in point()) {
        let sum: Vec<f64> = a.iter().zip(&b).map(|(p, q)| c * p + q).collect();
        let lhs = lift(sum, 1.0, 0.5).eval(&x);
        let rhs = c * lift(a, 1.0, 0.5).eval(&x) + lift(b, 1.0, 0.5).eval(&x);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn shifting_heights_by_a_column_translates_the_lift(lam in heights(), x in point(), t0 in 0usize..SIDE, t1 in 0usize..SIDE) {
        let mut shifted = vec![0.0; lam.len()];
        for i in 0..SIDE {
            for j in 0..SIDE {
                shifted[((i + t0) % SIDE) * SIDE + (j + t1) % SIDE] = lam[i * SIDE + j];
            }
        }
        let f = lift(lam, 1.0, 0.5);
        let g = lift(shifted, 1.0, 0.5);
        let y = [x[0] + t0 as f64 * P, x[1] + t1 as f64 * P];
        prop_assert!((g.eval(&y) - f.eval(&x)).abs() <= 1e-12);
        // one full torus period
        let z = [x[0] + SIDE as f64 * P, x[1]];
        prop_assert!((f.eval(&z) - f.eval(&x)).abs() <= 1e-12);
    }

    #[test]
    fn hessian_matches_differences_and_respects_c0(lam in heights(), x in point(), h in 0.1f64..2.0, alpha in 0.2f64..1.0) {
        // |Λ| ≤ h keeps every pair within 2h‖a − b‖₁^α
        let f = lift(lam.iter().map(|v| h * v).collect(), h, alpha);
        let (fd, fd_norm) = fd_hessian(&f, &x, 1e-4);
        let an = f.hessian(&x);
        for (a, b) in an.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-4 * h / (D * D) * 100.0, "{an:?} vs {fd:?}");
        }
        let bound = mollifier_c0(2, alpha) * h / (D * D);
        prop_assert!(fd_norm <= bound * (1.0 + 1e-6));
        prop_assert!(f.hessian_norm(&x) <= bound * (1.0 + 1e-9));
    }
}

#[test]
fn checkerboard_hessian_is_within_c0() {
    // neighbours differ by the full 2h
    let h = 1.0;
    let lam: Vec<f64> = (0..SIDE * SIDE).map(|k| if (k / SIDE + k % SIDE) % 2 == 0 { h } else { -h }).collect();
    let f = lift(lam, h, 1.0);
    let m = 200;
    let mut worst: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            let x = [P * (1.0 + i as f64 / m as f64), P * (1.0 + j as f64 / m as f64)];
            worst = worst.max(fd_hessian(&f, &x, 1e-4).1);
        }
    }
    let bound = mollifier_c0(2, 1.0) * h / (D * D);
    assert!(worst > 0.0 && worst <= bound, "{worst} vs {bound}");
}
