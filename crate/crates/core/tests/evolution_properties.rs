use fracpin::evolution::{EvolutionConfig, Evolver};
use fracpin::grid::GridField;
use fracpin::obstacles::{sample_field, ModelParams, ObstacleField, SampleWindow, StrengthLaw};
use fracpin::spectral::Symbol;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const M: usize = 32;

fn field() -> ObstacleField {
    let params = ModelParams {
        n: 2,
        s: 0.5,
        r0: 1.0,
        r1: 2.0,
        lambda: 0.05,
        strength_law: StrengthLaw::ShiftedExponential { min: 1.0, scale: 1.0 },
        rng_seed: 77,
    };
    // cells cover [−4, 12)² so the torus has side 16
    let window = SampleWindow::new(8.0, vec![0, 0], vec![2, 2], 2.0, 10.0).unwrap();
    sample_field(&params, &window).unwrap().with_periodicity(vec![0.0, 0.0]).unwrap()
}

fn grid(values: Vec<f64>) -> GridField {
    GridField::new(vec![-4.0, -4.0], vec![0.5, 0.5], vec![M, M], values, true).unwrap()
}

#[test]
fn ordered_data_stay_ordered() {
    let f = field();
    let mut cfg = EvolutionConfig::new(0.5, 0.8, 1.0);
    cfg.symbol = Symbol::Lattice;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut lo: Vec<f64> = (0..M * M).map(|_| rng.gen_range(2.0..4.0)).collect();
    let mut hi: Vec<f64> = lo.iter().map(|v| v + rng.gen_range(0.0..1.0)).collect();
    let ev = Evolver::new(&grid(lo.clone()), &cfg, Some(&f)).unwrap();
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        // below 1/max|∂f/∂u| the explicit part is monotone
        let dt = ev.stable_dt(&lo).min(ev.stable_dt(&hi)).min(1.0);
        lo = ev.step_values(&lo, dt);
        hi = ev.step_values(&hi, dt);
        worst = worst.min(hi.iter().zip(&lo).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min));
    }
    assert!(worst >= -1e-12, "ordering lost by {worst}");
}

#[test]
fn mean_follows_force_minus_mean_obstacle_force() {
    let f = field();
    let cfg = EvolutionConfig::new(0.5, 0.3, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut w: Vec<f64> = (0..M * M).map(|_| rng.gen_range(2.0..8.0)).collect();
    let g = grid(w.clone());
    let ev = Evolver::new(&g, &cfg, Some(&f)).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    for _ in 0..50 {
        let dt = 0.05;
        let push = mean(&(0..w.len()).map(|i| f.force(&g.node(i), w[i])).collect::<Vec<_>>());
        let next = ev.step_values(&w, dt);
        let expected = mean(&w) + dt * (0.3 - push);
        assert!((mean(&next) - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        w = next;
    }
}
