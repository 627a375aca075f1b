use fracpin::kernels::{
    local_solution, phi_fast, phi_integral, phi_upper_bound, BallProblem, FracParams, GreenKernel,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_is_nondecreasing_and_bounded(s in 0.05f64..0.95, n in 2usize..4, z1 in 0.0f64..50.0, dz in 0.0f64..50.0) {
        let p = FracParams::new(n, s).unwrap();
        let a = phi_integral(z1, &p).unwrap();
        let b = phi_integral(z1 + dz, &p).unwrap();
        prop_assert!(b >= a - 1e-12);
        prop_assert!(b <= phi_upper_bound(&p));
        prop_assert!((phi_fast(z1 + dz, &p) - b).abs() <= 1e-9 * (1.0 + b));
    }
}

// u_c(x) = c^{2s} u(x/c) solves the same problem on the dilated ball
#[test]
fn local_solution_is_self_similar() {
    for &(s, q) in &[(0.5, 0.1), (0.3, 0.25), (0.7, 0.05)] {
        let p = FracParams::new(2, s).unwrap();
        let kernel = GreenKernel::calibrated(p).unwrap();
        let base = BallProblem::from_ratio(10.0, q, 0.8, 0.01).unwrap();
        let u1 = local_solution(&base, &kernel, 48).unwrap();
        for &c in &[0.5, 3.0] {
            let scaled = BallProblem::from_ratio(10.0 * c, q, 0.8, 0.01).unwrap();
            let u2 = local_solution(&scaled, &kernel, 48).unwrap();
            let factor = c.powf(2.0 * s);
            for ((r1, v1), (r2, v2)) in u1.radii.iter().zip(&u1.values).zip(u2.radii.iter().zip(&u2.values)) {
                assert!((r2 - c * r1).abs() <= 1e-12 * (1.0 + r2));
                assert!(
                    (v2 - factor * v1).abs() <= 1e-7 * (1.0 + v2.abs()),
                    "s={s} c={c} r={r1}: {v2} vs {}",
                    factor * v1
                );
            }
        }
    }
}

#[test]
fn minimum_sits_at_the_centre() {
    let p = FracParams::new(2, 0.5).unwrap();
    let kernel = GreenKernel::calibrated(p).unwrap();
    let prob = BallProblem::from_ratio(50.0, 0.02, 0.77, 1.2e-4).unwrap();
    let u = local_solution(&prob, &kernel, 96).unwrap();
    assert!(u.is_negative() && u.is_monotone());
    assert_eq!(u.min_value(), u.values[0]);
}
