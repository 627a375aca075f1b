use std::sync::OnceLock;

use fracpin::fraclap::{fractional_laplacian_pointwise, FarField, QuadratureOptions};
use fracpin::supersolution::{build_bundle, certify, PipelineConfig, SupersolutionBundle};

fn bundle() -> &'static SupersolutionBundle {
    static CELL: OnceLock<SupersolutionBundle> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut cfg = PipelineConfig::desk_default();
        cfg.columns = 4;
        cfg.grid = 128;
        build_bundle(&cfg).unwrap()
    })
}

#[test]
fn residual_moves_one_for_one_with_f_star() {
    let b = bundle();
    let f = b.ledger.f_star;
    let base = certify(b, f, 1e-3 * b.ledger.f2).unwrap();
    for delta in [1e-6, 1e-3, 0.1] {
        let c = certify(b, f + delta, 1e-3 * b.ledger.f2).unwrap();
        assert!((c.max_residual - base.max_residual - delta).abs() <= 1e-12);
        assert!((c.max_residual_all - base.max_residual_all - delta).abs() <= 1e-12);
    }
    assert!(base.pass);
}

#[test]
fn barrier_sits_strictly_above_the_initial_surface() {
    let bar = &bundle().barrier;
    for i in 0..bar.v.len() {
        let parts = bar.u_flat.node_value(i) + bar.u_lift.node_value(i) + bar.u_init.node_value(i);
        assert!((bar.v.node_value(i) - parts).abs() <= 1e-12 * (1.0 + parts.abs()));
        assert!(bar.v.node_value(i) > bar.u_init.node_value(i));
    }
    assert!(bar.u_flat.max_value() <= 0.0);
}

// D = u_flat − u_local(· − x_a) is ≤ 0 and vanishes at x, so −(−Δ)^s D(x) ≤ 0;
// truncating at 2R only drops nonpositive contributions
#[test]
fn flat_part_obeys_the_min_of_locals_bound() {
    let b = bundle();
    let flat = &b.barrier.flat;
    let profile = flat.profile.clone().unwrap();
    let p = profile.params;
    let r0 = profile.problem.inner_radius;
    let radius = profile.problem.radius;
    let f1 = profile.problem.inner_source;
    let mut opts = QuadratureOptions::new(0.25 * r0, 2.0 * radius);
    opts.rel_tol = 1e-4;
    opts.abs_tol = 1e-7;
    for (k, c) in flat.centres.iter().enumerate().step_by(5) {
        let x: Vec<f64> = c.iter().enumerate().map(|(ax, v)| v + if ax == k % 2 { 0.4 * r0 } else { 0.0 }).collect();
        let local = |y: &[f64]| profile.eval(((y[0] - c[0]).powi(2) + (y[1] - c[1]).powi(2)).sqrt());
        let single = (2usize, local);
        let one = fractional_laplacian_pointwise(&single, &x, &p, FarField::Zero, &opts).unwrap();
        assert!((-one.value - f1).abs() <= 2e-3 * f1, "column {k}: single column gives {}", -one.value);
        let diff = (2usize, |y: &[f64]| flat.eval(y) - local(y));
        let d = fractional_laplacian_pointwise(&diff, &x, &p, FarField::Zero, &opts).unwrap();
        assert!(-d.value <= d.error + 1e-9, "column {k}: {} above the single column", -d.value);
    }
}
