use fracpin::percolation::{smallest_surface, LatticeWindow, SiteGrid};
use proptest::prelude::*;

const SIDE: usize = 5;
const LEVELS: usize = 8;

fn pattern() -> impl Strategy<Value = Vec<bool>> {
    // top level always open so a surface exists
    prop::collection::vec(prop::bool::weighted(0.7), SIDE * SIDE * LEVELS).prop_map(|mut v| {
        for c in 0..SIDE * SIDE {
            v[c * LEVELS + LEVELS - 1] = true;
        }
        v
    })
}

fn torus() -> LatticeWindow {
    LatticeWindow::new(vec![0, 0], vec![SIDE, SIDE], true).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn opening_sites_never_raises_the_surface(open in pattern(), extra in prop::collection::vec(prop::bool::weighted(0.2), SIDE * SIDE * LEVELS), alpha in 0.3f64..=1.0) {
        let more: Vec<bool> = open.iter().zip(&extra).map(|(a, b)| *a || *b).collect();
        let y1 = smallest_surface(&SiteGrid::from_pattern(torus(), LEVELS, open).unwrap(), alpha).unwrap();
        let y2 = smallest_surface(&SiteGrid::from_pattern(torus(), LEVELS, more).unwrap(), alpha).unwrap();
        prop_assert!(y2.y.iter().zip(&y1.y).all(|(b, a)| b <= a));
        prop_assert!(y1.worst_constraint() <= 0 && y2.worst_constraint() <= 0);
    }

    #[test]
    fn shifting_the_pattern_shifts_the_surface(open in pattern(), t0 in 0i64..SIDE as i64, t1 in 0i64..SIDE as i64, alpha in 0.3f64..=1.0) {
        let w = torus();
        let grid = SiteGrid::from_pattern(w.clone(), LEVELS, open.clone()).unwrap();
        let mut shifted = vec![false; open.len()];
        for c in 0..w.len() {
            let a = w.column(c);
            let b = w.index_of(&[a[0] + t0, a[1] + t1]).unwrap();
            shifted[b * LEVELS..(b + 1) * LEVELS].copy_from_slice(&open[c * LEVELS..(c + 1) * LEVELS]);
        }
        let y = smallest_surface(&grid, alpha).unwrap();
        let ys = smallest_surface(&SiteGrid::from_pattern(w.clone(), LEVELS, shifted).unwrap(), alpha).unwrap();
        for c in 0..w.len() {
            let a = w.column(c);
            prop_assert_eq!(Some(y.y[c]), ys.height_at(&[a[0] + t0, a[1] + t1]));
        }
    }

    #[test]
    fn surface_sites_are_open(open in pattern(), alpha in 0.3f64..=1.0) {
        let grid = SiteGrid::from_pattern(torus(), LEVELS, open).unwrap();
        let y = smallest_surface(&grid, alpha).unwrap();
        for (c, &level) in y.y.iter().enumerate() {
            prop_assert!(grid.is_open(c, level));
        }
    }

    // dropping the torus removes constraints, so heights can only fall
    #[test]
    fn open_window_lower_bounds_the_torus(open in pattern(), alpha in 0.3f64..=1.0) {
        let flat = LatticeWindow::new(vec![0, 0], vec![SIDE, SIDE], false).unwrap();
        let yt = smallest_surface(&SiteGrid::from_pattern(torus(), LEVELS, open.clone()).unwrap(), alpha).unwrap();
        let yw = smallest_surface(&SiteGrid::from_pattern(flat, LEVELS, open).unwrap(), alpha).unwrap();
        prop_assert!(yw.y.iter().zip(&yt.y).all(|(a, b)| a <= b));
    }
}
