//! Open sites of the cuboid lattice and the smallest Lipschitz surface of
//! open sites, plus Monte-Carlo tail statistics of its height.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obstacles::{CellLocation, Decomposition, InitialSurface, ObstacleField};
use crate::rng::stream_rng;

/// `p = 1 − exp(−λ h (l − 2r₁)ⁿ μ_S)`.
pub fn open_probability_raw(lambda: f64, cuboid_volume: f64, mu_s: f64) -> f64 {
    -(-lambda * cuboid_volume * mu_s).exp_m1()
}

/// Box of lattice columns, optionally closed up into a torus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeWindow {
    pub first: Vec<i64>,
    pub counts: Vec<usize>,
    pub periodic: bool,
}

impl LatticeWindow {
    pub fn new(first: Vec<i64>, counts: Vec<usize>, periodic: bool) -> Result<Self> {
        if first.len() != counts.len() || counts.is_empty() || counts.contains(&0) {
            return Err(Error::Shape("lattice window needs matching, nonzero extents".into()));
        }
        Ok(Self {
            first,
            counts,
            periodic,
        })
    }

    /// Window `[−k, k]ⁿ`.
    pub fn centred(n: usize, k: usize, periodic: bool) -> Self {
        Self {
            first: vec![-(k as i64); n],
            counts: vec![2 * k + 1; n],
            periodic,
        }
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, mut flat: usize) -> Vec<i64> {
        let mut a = vec![0i64; self.dim()];
        for ax in (0..self.dim()).rev() {
            a[ax] = self.first[ax] + (flat % self.counts[ax]) as i64;
            flat /= self.counts[ax];
        }
        a
    }

    /// Flat index of column `a`, wrapping on a torus.
    pub fn index_of(&self, a: &[i64]) -> Option<usize> {
        let mut flat = 0usize;
        for ax in 0..self.dim() {
            let c = self.counts[ax] as i64;
            let mut k = a[ax] - self.first[ax];
            if self.periodic {
                k = k.rem_euclid(c);
            } else if k < 0 || k >= c {
                return None;
            }
            flat = flat * self.counts[ax] + k as usize;
        }
        Some(flat)
    }

    /// `‖a − b‖₁`, measured on the torus when periodic.
    pub fn distance(&self, i: usize, j: usize) -> u64 {
        let a = self.column(i);
        let b = self.column(j);
        a.iter()
            .zip(&b)
            .zip(&self.counts)
            .map(|((&x, &y), &c)| {
                let d = (x - y).unsigned_abs();
                if self.periodic {
                    d.min(c as u64 - d)
                } else {
                    d
                }
            })
            .sum()
    }
}

/// `H(k) = ⌊k^α⌋`.
pub fn holder_budget(k: u64, alpha: f64) -> u64 {
    if k == 0 {
        0
    } else {
        // guard against k^α landing a hair below an integer
        ((k as f64).powf(alpha) + 1e-12).floor() as u64
    }
}

/// Obstacle certifying an open site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub y: f64,
    pub y_flat: f64,
    pub strength: f64,
}

impl Witness {
    fn beats(&self, other: &Witness) -> bool {
        if self.strength != other.strength {
            return self.strength > other.strength;
        }
        if self.y_flat != other.y_flat {
            return self.y_flat < other.y_flat;
        }
        self.x < other.x
    }
}

/// Open/closed state of sites `(a, j)`, `j = 1..=levels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteGrid {
    pub window: LatticeWindow,
    pub levels: usize,
    pub open: Vec<bool>,
    pub witnesses: Vec<Option<Witness>>,
    pub p_hat: f64,
}

impl SiteGrid {
    /// Grid from an explicit open pattern, indexed `[column · levels + (j − 1)]`.
    pub fn from_pattern(window: LatticeWindow, levels: usize, open: Vec<bool>) -> Result<Self> {
        if open.len() != window.len() * levels {
            return Err(Error::Shape(format!(
                "pattern has {} entries, expected {}",
                open.len(),
                window.len() * levels
            )));
        }
        let p_hat = open.iter().filter(|&&o| o).count() as f64 / open.len().max(1) as f64;
        let witnesses = vec![None; open.len()];
        Ok(Self {
            window,
            levels,
            open,
            witnesses,
            p_hat,
        })
    }

    /// Independent Bernoulli(p) sites.
    pub fn bernoulli(window: LatticeWindow, levels: usize, p: f64, seed: u64, replicate: i64) -> Self {
        let mut rng = stream_rng(seed, "sites", &[replicate]);
        let open: Vec<bool> = (0..window.len() * levels).map(|_| rng.gen::<f64>() < p).collect();
        Self::from_pattern(window, levels, open).expect("pattern size matches")
    }

    pub fn is_open(&self, column: usize, level: usize) -> bool {
        level >= 1 && level <= self.levels && self.open[column * self.levels + level - 1]
    }

    pub fn witness(&self, column: usize, level: usize) -> Option<&Witness> {
        self.witnesses[column * self.levels + level - 1].as_ref()
    }
}

/// Marks `(a, j)` open when an obstacle of strength at least `S` has its
/// flattened centre `𝒰⁻¹(xᵢ, yᵢ)` in `Q_{a,j}`.
pub fn build_site_grid(
    field: &ObstacleField,
    dec: &Decomposition,
    surf: &InitialSurface,
    strength: f64,
    window: &LatticeWindow,
    levels: usize,
) -> Result<SiteGrid> {
    if window.dim() != dec.n || field.n != dec.n {
        return Err(Error::Shape("lattice, decomposition and field dimensions differ".into()));
    }
    // the field must cover every inner cell of the window and all levels
    let top = dec.level_bounds(levels).1;
    let fw = &field.window;
    if fw.y_lo > dec.r1 + 1e-12 || fw.y_hi < top - 1e-12 {
        return Err(Error::Coverage(format!(
            "field heights [{}, {}] do not cover the levels [{}, {top}]",
            fw.y_lo, fw.y_hi, dec.r1
        )));
    }
    let (lo, hi) = (fw.lower(), fw.upper());
    let half = dec.inner_half_side();
    for ax in 0..dec.n {
        let a_lo = window.first[ax] as f64 * dec.period() - half;
        let a_hi = (window.first[ax] + window.counts[ax] as i64 - 1) as f64 * dec.period() + half;
        if a_lo < lo[ax] - 1e-9 || a_hi > hi[ax] + 1e-9 {
            return Err(Error::Coverage(format!(
                "field window [{}, {}] does not cover the inner cells [{a_lo}, {a_hi}] on axis {ax}",
                lo[ax], hi[ax]
            )));
        }
    }
    let mut open = vec![false; window.len() * levels];
    let mut witnesses: Vec<Option<Witness>> = vec![None; window.len() * levels];
    for o in field.obstacles.iter().filter(|o| o.strength >= strength) {
        let a = match dec.cell_of(&o.x) {
            CellLocation::Interior(a) => a,
            CellLocation::Gap => continue,
        };
        if !dec.in_inner_cell(&o.x, &a) {
            continue;
        }
        let Some(col) = window.index_of(&a) else { continue };
        let y_flat = o.y - surf.value(&o.x);
        let Some(j) = dec.level_of(y_flat) else { continue };
        if j > levels {
            continue;
        }
        let w = Witness {
            x: o.x.clone(),
            y: o.y,
            y_flat,
            strength: o.strength,
        };
        let slot = col * levels + j - 1;
        open[slot] = true;
        let replace = match &witnesses[slot] {
            None => true,
            Some(cur) => w.beats(cur),
        };
        if replace {
            witnesses[slot] = Some(w);
        }
    }
    let p_hat = open.iter().filter(|&&v| v).count() as f64 / open.len().max(1) as f64;
    Ok(SiteGrid {
        window: window.clone(),
        levels,
        open,
        witnesses,
        p_hat,
    })
}

/// Smallest map `y` of open sites with `|y_a − y_b| ≤ ⌊‖a − b‖₁^α⌋`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSurface {
    pub window: LatticeWindow,
    pub alpha: f64,
    pub y: Vec<usize>,
    pub witnesses: Vec<Option<Witness>>,
    pub sweeps: usize,
}

impl LatticeSurface {
    /// Largest `|y_a − y_b| − H(‖a − b‖₁)` over all pairs (≤ 0 when valid).
    pub fn worst_constraint(&self) -> i64 {
        let m = self.window.len();
        let mut worst = i64::MIN;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    let h = holder_budget(self.window.distance(i, j), self.alpha) as i64;
                    worst = worst.max((self.y[i] as i64 - self.y[j] as i64).abs() - h);
                }
            }
        }
        worst
    }

    pub fn height_at(&self, a: &[i64]) -> Option<usize> {
        self.window.index_of(a).map(|i| self.y[i])
    }
}

/// Monotone Jacobi iteration from the lowest open level of every column.
///
/// Valid surfaces are closed under pointwise minima, and every iterate stays
/// below any valid surface, so the fixed point is the minimal one.
pub fn smallest_surface(grid: &SiteGrid, alpha: f64) -> Result<LatticeSurface> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must lie in (0, 1]")));
    }
    let m = grid.window.len();
    // pairwise budgets up to the level cap; larger budgets never bind
    let cap = grid.levels as u64;
    let budget: Vec<u64> = (0..m * m)
        .map(|k| holder_budget(grid.window.distance(k / m, k % m), alpha).min(cap))
        .collect();
    let lowest_open = |col: usize, from: usize| -> Option<usize> {
        (from.max(1)..=grid.levels).find(|&j| grid.is_open(col, j))
    };
    let mut y = Vec::with_capacity(m);
    for col in 0..m {
        y.push(lowest_open(col, 1).ok_or_else(|| Error::NoSurface {
            column: grid.window.column(col),
            cap: grid.levels,
        })?);
    }
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let next: Vec<Result<usize>> = (0..m)
            .into_par_iter()
            .map(|a| {
                let need = (0..m)
                    .map(|b| y[b].saturating_sub(budget[a * m + b] as usize))
                    .max()
                    .unwrap_or(1)
                    .max(y[a]);
                lowest_open(a, need).ok_or_else(|| Error::NoSurface {
                    column: grid.window.column(a),
                    cap: grid.levels,
                })
            })
            .collect();
        let next: Vec<usize> = next.into_iter().collect::<Result<_>>()?;
        if next == y {
            break;
        }
        y = next;
    }
    let witnesses = y
        .iter()
        .enumerate()
        .map(|(col, &j)| grid.witness(col, j).cloned())
        .collect();
    Ok(LatticeSurface {
        window: grid.window.clone(),
        alpha,
        y,
        witnesses,
        sweeps,
    })
}

/// Smallest `J` with `(2(1 − p))^J < 10⁻⁶`.
pub fn default_level_cap(p: f64) -> usize {
    let ratio = 2.0 * (1.0 - p);
    if ratio <= 0.0 {
        return 1;
    }
    if ratio >= 1.0 {
        return 64;
    }
    ((1e-6f64).ln() / ratio.ln()).floor() as usize + 1
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let ph = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (ph + z * z / (2.0 * n)) / denom;
    let half = z * (ph * (1.0 - ph) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// One row of the empirical tail `P(y₀ > m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub m: usize,
    pub count: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailStatistics {
    pub p: f64,
    pub replicates: u64,
    pub levels: usize,
    pub rows: Vec<TailRow>,
    /// Least-squares slope of `log P̂(y₀ > m)` over rows with ≥ 10 events, `m ≥ 1`.
    pub log_slope: Option<f64>,
    /// `log(2(1 − p))`, the envelope's rate.
    pub envelope_slope: f64,
    pub mean_height: f64,
    /// Smallest `C` with `P̂(y₀ > m) ≤ C (2(1−p))^m / (2p − 1)` for all rows.
    pub c_fit: f64,
    /// `c_fit / (2p − 1)²`, the envelope for `E(y₀)`.
    pub mean_envelope: f64,
    pub regime_warning: bool,
    pub no_surface_replicates: u64,
}

impl TailStatistics {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "m,count,p_hat,ci_lo,ci_hi")?;
        for r in &self.rows {
            writeln!(out, "{},{},{:.17e},{:.17e},{:.17e}", r.m, r.count, r.p_hat, r.ci_lo, r.ci_hi)?;
        }
        Ok(())
    }
}

/// Samples Bernoulli(p) site grids on `window`, builds the smallest surface and
/// tabulates the height of the column at the origin (or the first column).
pub fn tail_statistics(p: f64, alpha: f64, window: &LatticeWindow, levels: usize, replicates: u64, seed: u64) -> Result<TailStatistics> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must lie in (0, 1)")));
    }
    let origin = window
        .index_of(&vec![0; window.dim()])
        .unwrap_or(0);
    let heights: Vec<Option<usize>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let grid = SiteGrid::bernoulli(window.clone(), levels, p, seed, r as i64);
            match smallest_surface(&grid, alpha) {
                Ok(s) => Ok(Some(s.y[origin])),
                Err(Error::NoSurface { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let failures = heights.iter().filter(|h| h.is_none()).count() as u64;
    // a missing surface means y₀ exceeds the cap
    let values: Vec<usize> = heights.iter().map(|h| h.unwrap_or(levels + 1)).collect();
    let max_h = values.iter().copied().max().unwrap_or(1);
    let mut rows = Vec::new();
    for m in 0..max_h {
        let count = values.iter().filter(|&&v| v > m).count() as u64;
        let (ci_lo, ci_hi) = wilson_interval(count, replicates);
        rows.push(TailRow {
            m,
            count,
            p_hat: count as f64 / replicates as f64,
            ci_lo,
            ci_hi,
        });
    }
    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.m >= 1 && r.count >= 10)
        .map(|r| (r.m as f64, r.p_hat.ln()))
        .collect();
    let log_slope = if fit.len() >= 2 {
        let k = fit.len() as f64;
        let mx = fit.iter().map(|v| v.0).sum::<f64>() / k;
        let my = fit.iter().map(|v| v.1).sum::<f64>() / k;
        let sxy: f64 = fit.iter().map(|v| (v.0 - mx) * (v.1 - my)).sum();
        let sxx: f64 = fit.iter().map(|v| (v.0 - mx) * (v.0 - mx)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    let ratio = 2.0 * (1.0 - p);
    let c_fit = rows
        .iter()
        .map(|r| r.p_hat * (2.0 * p - 1.0) / ratio.powi(r.m as i32))
        .fold(0.0, f64::max);
    let mean_height = values.iter().sum::<usize>() as f64 / replicates as f64;
    let regime_warning = p <= 0.5;
    Ok(TailStatistics {
        p,
        replicates,
        levels,
        rows,
        log_slope,
        envelope_slope: ratio.ln(),
        mean_height,
        c_fit,
        mean_envelope: if regime_warning {
            f64::INFINITY
        } else {
            c_fit / ((2.0 * p - 1.0) * (2.0 * p - 1.0))
        },
        regime_warning,
        no_surface_replicates: failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_probability_identities() {
        assert_eq!(open_probability_raw(3.0, 2.0, 0.0), 0.0);
        assert!((open_probability_raw(2f64.ln(), 1.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn holder_budget_values() {
        assert_eq!(holder_budget(0, 0.5), 0);
        assert_eq!(holder_budget(1, 0.5), 1);
        assert_eq!(holder_budget(3, 0.5), 1);
        assert_eq!(holder_budget(4, 0.5), 2);
        assert_eq!(holder_budget(9, 0.5), 3);
    }

    #[test]
    fn all_open_gives_flat_surface() {
        let w = LatticeWindow::centred(2, 2, false);
        let grid = SiteGrid::from_pattern(w.clone(), 4, vec![true; w.len() * 4]).unwrap();
        let s = smallest_surface(&grid, 0.5).unwrap();
        assert!(s.y.iter().all(|&v| v == 1));
    }

    #[test]
    fn blocked_column_in_one_dimension() {
        let w = LatticeWindow::new(vec![-5], vec![11], false).unwrap();
        let levels = 6;
        let mut open = vec![true; 11 * levels];
        let c0 = w.index_of(&[0]).unwrap();
        for j in 0..3 {
            open[c0 * levels + j] = false;
        }
        let grid = SiteGrid::from_pattern(w.clone(), levels, open).unwrap();
        let s = smallest_surface(&grid, 0.5).unwrap();
        assert_eq!(s.height_at(&[0]), Some(4));
        assert_eq!(s.height_at(&[1]), Some(3));
        assert_eq!(s.height_at(&[5]), Some(2));
        assert!(s.worst_constraint() <= 0);
    }

    #[test]
    fn closed_column_reports_no_surface() {
        let w = LatticeWindow::new(vec![0], vec![3], false).unwrap();
        let open = vec![true, true, false, false, true, true];
        let grid = SiteGrid::from_pattern(w, 2, open).unwrap();
        assert!(matches!(smallest_surface(&grid, 0.5), Err(Error::NoSurface { .. })));
    }

    #[test]
    fn torus_distance_wraps() {
        let w = LatticeWindow::new(vec![0, 0], vec![5, 4], true).unwrap();
        let a = w.index_of(&[0, 0]).unwrap();
        let b = w.index_of(&[4, 3]).unwrap();
        assert_eq!(w.distance(a, b), 2);
        assert_eq!(w.index_of(&[5, 4]), Some(a));
    }

    #[test]
    fn level_cap_and_wilson() {
        let j = default_level_cap(0.9);
        assert!(0.2f64.powi(j as i32) < 1e-6 && 0.2f64.powi(j as i32 - 1) >= 1e-6);
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5 && (0.5 - lo - (hi - 0.5)).abs() < 1e-12);
    }
}
