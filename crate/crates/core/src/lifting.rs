//! Lifting function: a smooth interpolation of lattice heights `Λ(a)` that is
//! exactly `Λ(a)` on every cell `Q̂_a`.
//!
//! The piecewise-constant extension `Λ̃` is mollified with a separable bump
//! whose support is the cube of half-side `d/2`. Because the gap between
//! neighbouring cells `Q̂_a` is `d`, the mollified field never mixes heights
//! on a cell, and it factorises into one-dimensional partitions of unity:
//! `u_lift(x) = Σ_a Λ(a) Πᵢ W_{aᵢ}(xᵢ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fraclap::{fractional_laplacian_pointwise, FarField, QuadratureOptions};
use crate::grid::{GridField, ScalarField};
use crate::kernels::FracParams;
use crate::obstacles::Decomposition;
use crate::percolation::{LatticeSurface, LatticeWindow};
use crate::quad::gauss_legendre;
use crate::special::{frac_laplacian_constant, gamma};

const TABLE: usize = 2048;

/// Unit bump `η̂(u) = c·exp(−1/(1 − u²))` on `[−1, 1]` with tabulated CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    norm: f64,
    cdf: Vec<f64>,
}

impl Default for Mollifier {
    fn default() -> Self {
        Self::new()
    }
}

impl Mollifier {
    pub fn new() -> Self {
        let raw = |u: f64| if u.abs() >= 1.0 { 0.0 } else { (-1.0 / (1.0 - u * u)).exp() };
        let (nodes, weights) = gauss_legendre(10);
        let du = 2.0 / TABLE as f64;
        let mut cdf = vec![0.0; TABLE + 1];
        for i in 0..TABLE {
            let a = -1.0 + i as f64 * du;
            let piece: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(&t, &w)| w * raw(a + 0.5 * du * (t + 1.0)))
                .sum::<f64>()
                * 0.5
                * du;
            cdf[i + 1] = cdf[i] + piece;
        }
        let norm = cdf[TABLE];
        cdf.iter_mut().for_each(|c| *c /= norm);
        cdf[TABLE] = 1.0;
        Self { norm, cdf }
    }

    /// Density `η̂(u)`.
    pub fn density(&self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - u * u)).exp() / self.norm
        }
    }

    pub fn density_deriv(&self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            0.0
        } else {
            let q = 1.0 - u * u;
            -2.0 * u / (q * q) * self.density(u)
        }
    }

    /// `∫_{−1}^u η̂`, exactly 0 and 1 outside `(−1, 1)`; cubic Hermite
    /// interpolation of the table with exact slopes inside.
    pub fn cdf(&self, u: f64) -> f64 {
        if u <= -1.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        let du = 2.0 / TABLE as f64;
        let pos = (u + 1.0) / du;
        let i = (pos.floor() as usize).min(TABLE - 1);
        let t = pos - i as f64;
        let (x0, x1) = (-1.0 + i as f64 * du, -1.0 + (i + 1) as f64 * du);
        let (y0, y1) = (self.cdf[i], self.cdf[i + 1]);
        let (m0, m1) = (self.density(x0), self.density(x1));
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * du * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * du * m1
    }

    /// `(max η̂, max |η̂'|)` on a fine grid.
    pub fn sup_norms(&self) -> (f64, f64) {
        let m = 20000;
        (0..=m)
            .map(|i| -1.0 + 2.0 * i as f64 / m as f64)
            .fold((0.0f64, 0.0f64), |(a, b), u| {
                (a.max(self.density(u)), b.max(self.density_deriv(u).abs()))
            })
    }
}

/// Hessian constant `C₀` with `‖D²u_lift‖ ≤ C₀ h/d²` (Frobenius norm) for
/// heights obeying `|Λ(a) − Λ(b)| ≤ 2h‖a − b‖₁^α`.
///
/// Only the `2ⁿ` columns around a point contribute and the weights sum to
/// one, so `D²u = Σ (Λ(a) − Λ(a₀)) D²Π W_a` with `|Λ(a) − Λ(a₀)| ≤ 2h n^α`.
pub fn mollifier_c0(n: usize, alpha: f64) -> f64 {
    let (eta, deta) = Mollifier::new().sup_norms();
    let nf = n as f64;
    // with w = d/2: Σ|W''| ≤ 2|η̂'|/w², Σ|W'| ≤ 2η̂/w
    let frob = (nf * (2.0 * deta).powi(2) + nf * (nf - 1.0) * (2.0 * eta).powi(4)).sqrt();
    2.0 * nf.powf(alpha) * 4.0 * frob
}

/// Constants `C₁, C₂` of the fractional-Laplacian bound on `u_lift`.
pub fn lift_constants(n: usize, s: f64, alpha: f64, c0: f64) -> (f64, f64) {
    let c = frac_laplacian_constant(n, s);
    let h = n as f64 / 2.0;
    let sphere = 2.0 * std::f64::consts::PI.powf(h) / gamma(h);
    let c1 = c * c0 * sphere * (1.5 * (n as f64).sqrt()).powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s);
    let c2 = c * 8.0 * (n as f64 + 1.0) * std::f64::consts::PI.powf(h) / gamma(h) * 1.5f64.powf(alpha - 2.0 * s)
        / (2.0 * s - alpha);
    (c1, c2)
}

/// `C₁(d + l)^{2−2s} h/d² + C₂ h/(d + l)^{2s}`.
pub fn lift_fraclap_bound(c1: f64, c2: f64, s: f64, h: f64, l: f64, d: f64) -> f64 {
    c1 * (d + l).powf(2.0 - 2.0 * s) * h / (d * d) + c2 * h / (d + l).powf(2.0 * s)
}

/// Heights `Λ(a)` on a lattice window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeHeights {
    pub window: LatticeWindow,
    pub lambda: Vec<f64>,
    pub h: f64,
    pub l: f64,
    pub d: f64,
    pub alpha: f64,
}

impl LatticeHeights {
    pub fn new(window: LatticeWindow, lambda: Vec<f64>, h: f64, l: f64, d: f64, alpha: f64) -> Result<Self> {
        if lambda.len() != window.len() {
            return Err(Error::Shape("one height per column is required".into()));
        }
        if !(h > 0.0 && l > 0.0 && d > 0.0 && alpha > 0.0) {
            return Err(Error::InvalidParameter("h, l, d, alpha must be positive".into()));
        }
        Ok(Self {
            window,
            lambda,
            h,
            l,
            d,
            alpha,
        })
    }

    /// Pairs violating `|Λ(a) − Λ(b)| ≤ 2h‖a − b‖₁^α`.
    pub fn holder_violations(&self) -> Vec<(Vec<i64>, Vec<i64>)> {
        let m = self.window.len();
        let mut bad = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                let k = self.window.distance(i, j) as f64;
                let allowed = 2.0 * self.h * k.powf(self.alpha) * (1.0 + 1e-12);
                if (self.lambda[i] - self.lambda[j]).abs() > allowed {
                    bad.push((self.window.column(i), self.window.column(j)));
                }
            }
        }
        bad
    }

    /// `Λ(a)`, wrapping on a torus and clamping to the window otherwise.
    pub fn at(&self, a: &[i64]) -> f64 {
        let idx = match self.window.index_of(a) {
            Some(i) => i,
            None => {
                let clamped: Vec<i64> = a
                    .iter()
                    .zip(self.window.first.iter().zip(&self.window.counts))
                    .map(|(&k, (&f, &c))| k.clamp(f, f + c as i64 - 1))
                    .collect();
                self.window.index_of(&clamped).expect("clamped index is inside")
            }
        };
        self.lambda[idx]
    }

    pub fn range(&self) -> (f64, f64) {
        self.lambda
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// `Λ(a) = ỹ_a + depth`, with `ỹ_a` the flattened height of the witness
/// obstacle of column `a`, so that the minimum `−depth` of the local solution
/// sits at the obstacle centre.
pub fn heights_from_surface(surface: &LatticeSurface, dec: &Decomposition, depth: f64) -> Result<LatticeHeights> {
    let lambda: Vec<f64> = surface
        .witnesses
        .iter()
        .enumerate()
        .map(|(i, w)| {
            w.as_ref().map(|w| w.y_flat + depth).ok_or_else(|| {
                Error::Coverage(format!(
                    "column {:?} has no witness obstacle",
                    surface.window.column(i)
                ))
            })
        })
        .collect::<Result<_>>()?;
    let heights = LatticeHeights::new(surface.window.clone(), lambda, dec.h, dec.l, dec.d, surface.alpha)?;
    let bad = heights.holder_violations();
    if !bad.is_empty() {
        return Err(Error::HolderViolation {
            pairs: bad.into_iter().take(32).collect(),
        });
    }
    Ok(heights)
}

/// Smooth lift of lattice heights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftField {
    pub heights: LatticeHeights,
    mollifier: Mollifier,
}

/// Active one-dimensional weights at a coordinate: `(k, W, W', W'')`.
#[derive(Clone, Copy, Default)]
struct Weights1d {
    len: usize,
    terms: [(i64, f64, f64, f64); 3],
}

pub fn mollified_lift(heights: LatticeHeights) -> LiftField {
    LiftField {
        heights,
        mollifier: Mollifier::new(),
    }
}

impl LiftField {
    pub fn period(&self) -> f64 {
        self.heights.l + self.heights.d
    }

    fn weights(&self, t: f64) -> Weights1d {
        let p = self.period();
        let w = 0.5 * self.heights.d;
        let k0 = (t / p).round() as i64;
        let m = &self.mollifier;
        let mut out = Weights1d::default();
        for k in [k0 - 1, k0, k0 + 1] {
            let ul = (t - (k as f64 - 0.5) * p) / w;
            let ur = (t - (k as f64 + 0.5) * p) / w;
            let val = m.cdf(ul) - m.cdf(ur);
            let d1 = (m.density(ul) - m.density(ur)) / w;
            let d2 = (m.density_deriv(ul) - m.density_deriv(ur)) / (w * w);
            if val != 0.0 || d1 != 0.0 || d2 != 0.0 {
                out.terms[out.len] = (k, val, d1, d2);
                out.len += 1;
            }
        }
        out
    }

    /// Visits every active column with its per-axis weight tuples.
    fn for_each_term<F: FnMut(f64, &[(f64, f64, f64)])>(&self, x: &[f64], mut visit: F) {
        let n = x.len();
        assert!(n <= 3, "lift evaluation supports n <= 3");
        let mut per_axis = [Weights1d::default(); 3];
        for (ax, &t) in x.iter().enumerate() {
            per_axis[ax] = self.weights(t);
            if per_axis[ax].len == 0 {
                return;
            }
        }
        let mut choice = [0usize; 3];
        let mut a = [0i64; 3];
        let mut w = [(0.0, 0.0, 0.0); 3];
        loop {
            for ax in 0..n {
                let (k, v, d1, d2) = per_axis[ax].terms[choice[ax]];
                a[ax] = k;
                w[ax] = (v, d1, d2);
            }
            visit(self.heights.at(&a[..n]), &w[..n]);
            let mut ax = 0;
            loop {
                if ax == n {
                    return;
                }
                choice[ax] += 1;
                if choice[ax] < per_axis[ax].len {
                    break;
                }
                choice[ax] = 0;
                ax += 1;
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_term(x, |lam, w| acc += lam * w.iter().map(|t| t.0).product::<f64>());
        acc
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut g = vec![0.0; n];
        self.for_each_term(x, |lam, w| {
            for i in 0..n {
                let mut prod = w[i].1;
                for (j, wj) in w.iter().enumerate() {
                    if j != i {
                        prod *= wj.0;
                    }
                }
                g[i] += lam * prod;
            }
        });
        g
    }

    /// Hessian, row-major `n × n`.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut hmat = vec![0.0; n * n];
        self.for_each_term(x, |lam, w| {
            for i in 0..n {
                for j in 0..n {
                    let mut prod = 1.0;
                    for (k, wk) in w.iter().enumerate() {
                        prod *= if i == j && k == i {
                            wk.2
                        } else if k == i || k == j {
                            wk.1
                        } else {
                            wk.0
                        };
                    }
                    hmat[i * n + j] += lam * prod;
                }
            }
        });
        hmat
    }

    pub fn hessian_norm(&self, x: &[f64]) -> f64 {
        self.hessian(x).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Samples the lift on a grid.
    pub fn sample(&self, origin: Vec<f64>, spacing: Vec<f64>, shape: Vec<usize>, periodic: bool) -> Result<GridField> {
        GridField::from_fn(origin, spacing, shape, periodic, |x| self.eval(x))
    }
}

impl ScalarField for LiftField {
    fn dim(&self) -> usize {
        self.heights.window.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }
}

/// Measured Hessian and fractional-Laplacian sizes against their bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftBoundReport {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub hessian_bound: f64,
    pub hessian_max: f64,
    pub fraclap_bound: f64,
    pub fraclap_max: f64,
    /// Largest quadrature error estimate among the test points.
    pub quadrature_error: f64,
    pub points: Vec<(Vec<f64>, f64, f64)>,
    pub hessian_ok: bool,
    pub fraclap_ok: bool,
    /// Quadrature error below 10% of the smallest margin.
    pub quadrature_ok: bool,
}

/// Checks `‖D²u_lift‖ ≤ C₀h/d²` and `|(−Δ)^s u_lift| ≤ C₁(d+l)^{2−2s}h/d² + C₂h/(d+l)^{2s}`
/// at the given points; the fractional Laplacian is evaluated by quadrature.
pub fn verify_lift_bounds(lift: &LiftField, p: &FracParams, points: &[Vec<f64>], opts: &QuadratureOptions) -> Result<LiftBoundReport> {
    let hts = &lift.heights;
    let c0 = mollifier_c0(p.n, hts.alpha);
    let (c1, c2) = lift_constants(p.n, p.s, hts.alpha, c0);
    let hessian_bound = c0 * hts.h / (hts.d * hts.d);
    let fraclap_bound = lift_fraclap_bound(c1, c2, p.s, hts.h, hts.l, hts.d);
    let (lo, hi) = hts.range();
    let far = if hts.window.periodic {
        FarField::Periodic {
            mean: hts.lambda.iter().sum::<f64>() / hts.lambda.len() as f64,
            tilt: [0.0; 3],
        }
    } else {
        FarField::Bounded { lo, hi }
    };
    let evaluated: Vec<(Vec<f64>, f64, f64)> = points
        .par_iter()
        .map(|x| {
            let est = fractional_laplacian_pointwise(lift, x, p, far, opts)?;
            Ok((x.clone(), est.value, est.error))
        })
        .collect::<Result<_>>()?;
    let hessian_max = points
        .iter()
        .map(|x| lift.hessian_norm(x))
        .fold(0.0, f64::max);
    let fraclap_max = evaluated.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
    let quadrature_error = evaluated.iter().map(|e| e.2).fold(0.0, f64::max);
    let margin = evaluated
        .iter()
        .map(|e| fraclap_bound - e.1.abs())
        .fold(f64::INFINITY, f64::min);
    Ok(LiftBoundReport {
        c0,
        c1,
        c2,
        hessian_bound,
        hessian_max,
        fraclap_bound,
        fraclap_max,
        quadrature_error,
        points: evaluated,
        hessian_ok: hessian_max <= hessian_bound,
        fraclap_ok: margin >= 0.0,
        quadrature_ok: quadrature_error < 0.1 * margin.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heights(lambda: Vec<f64>, periodic: bool) -> LatticeHeights {
        let w = LatticeWindow::new(vec![0, 0], vec![3, 3], periodic).unwrap();
        LatticeHeights::new(w, lambda, 0.1, 4.0, 2.0, 0.5).unwrap()
    }

    #[test]
    fn mollifier_cdf_is_a_distribution() {
        let m = Mollifier::new();
        assert_eq!(m.cdf(-1.0), 0.0);
        assert_eq!(m.cdf(1.0), 1.0);
        assert!((m.cdf(0.0) - 0.5).abs() < 1e-13);
        let mut prev = 0.0;
        for i in 0..=1000 {
            let v = m.cdf(-1.0 + 2.0 * i as f64 / 1000.0);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
        // density is the derivative of the cdf
        let h = 1e-6;
        for u in [-0.7, -0.1, 0.4, 0.93] {
            let fd = (m.cdf(u + h) - m.cdf(u - h)) / (2.0 * h);
            assert!((fd - m.density(u)).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_heights_give_constant_lift() {
        let lift = mollified_lift(heights(vec![2.5; 9], true));
        for x in [[0.3, 0.1], [3.0, -2.9], [1.1, 7.7]] {
            assert!((lift.eval(&x) - 2.5).abs() < 1e-12);
            assert!(lift.gradient(&x).iter().all(|g| g.abs() < 1e-11));
            assert!(lift.hessian_norm(&x) < 1e-10);
        }
    }

    #[test]
    fn exact_on_cells() {
        let lam: Vec<f64> = (0..9).map(|i| 0.01 * i as f64).collect();
        let lift = mollified_lift(heights(lam.clone(), false));
        // cell a = (1, 2) has centre (6, 12) and half-side l/2 = 2
        let idx = lift.heights.window.index_of(&[1, 2]).unwrap();
        for x in [[6.0, 12.0], [7.99, 10.01], [4.0, 14.0]] {
            assert_eq!(lift.eval(&x), lam[idx]);
        }
    }
}
