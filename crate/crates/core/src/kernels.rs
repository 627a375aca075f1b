//! Dirichlet Green kernel of the fractional Laplacian on a ball and the
//! radial two-force local solution built from it.
//!
//! The kernel is `G(x, y) = κ |x − y|^{2s−n} Φ(ζ)` with
//! `Φ(ζ) = ∫₀^ζ w^{s−1} (1 + w)^{−n/2} dw` and
//! `ζ = (R² − |x|²)(R² − |y|²) / (R² |x − y|²)`. The constant κ is fixed by
//! requiring `∫_{B_R} G(x, ·) = g(x)`, the closed-form torsion function.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::Integrator;
use crate::special::{beta, beta_reg, gamma, sphere_area};

/// Dimension and order of the fractional Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracParams {
    pub n: usize,
    pub s: f64,
}

impl FracParams {
    pub fn new(n: usize, s: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "dimension n = {n} must be at least 2"
            )));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidParameter(format!("s = {s} must lie in (0, 1)")));
        }
        Ok(Self { n, s })
    }

    fn half_n(&self) -> f64 {
        self.n as f64 / 2.0
    }

    /// Exponent `n/2 − s` of the tail of the Φ integrand.
    fn tail_exponent(&self) -> f64 {
        self.half_n() - self.s
    }
}

/// Dirichlet problem on `B_R(0)` with source `F₁` on `B_{r₀}` and sink `F₂`
/// on the annulus `r₀ < |x| < R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallProblem {
    pub radius: f64,
    pub inner_radius: f64,
    pub inner_source: f64,
    pub outer_sink: f64,
}

impl BallProblem {
    pub fn new(radius: f64, inner_radius: f64, inner_source: f64, outer_sink: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("R = {radius} must be positive")));
        }
        if !(inner_radius > 0.0 && inner_radius < radius) {
            return Err(Error::InvalidParameter(format!(
                "r0 = {inner_radius} must lie in (0, R = {radius})"
            )));
        }
        if !(inner_source >= 0.0 && inner_source.is_finite())
            || !(outer_sink >= 0.0 && outer_sink.is_finite())
        {
            return Err(Error::InvalidParameter(
                "sources F1, F2 must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            radius,
            inner_radius,
            inner_source,
            outer_sink,
        })
    }

    /// Builds the problem from the ratio `q = r₀/R`.
    pub fn from_ratio(radius: f64, q: f64, inner_source: f64, outer_sink: f64) -> Result<Self> {
        Self::new(radius, q * radius, inner_source, outer_sink)
    }

    pub fn q(&self) -> f64 {
        self.inner_radius / self.radius
    }
}

/// `∫₀^ζ w^{s−1}(1+w)^{−n/2} dw` by adaptive Gauss–Kronrod quadrature.
///
/// The substitution `w = t^{1/s}` removes the singularity at the origin; for
/// `ζ > 1` the tail beyond `w = 1` is mapped through `w = 1/v`,
/// `v = t^{1/(n/2−s)}`, which also covers `ζ = ∞`.
pub fn phi_integral(zeta: f64, p: &FracParams) -> Result<f64> {
    if zeta.is_nan() || zeta < 0.0 {
        return Err(Error::Domain(format!("ζ = {zeta} must be nonnegative")));
    }
    if zeta == 0.0 {
        return Ok(0.0);
    }
    let s = p.s;
    let half_n = p.half_n();
    let a = p.tail_exponent();
    let quad = Integrator::new(1e-15, 1e-12);
    let head = |upper: f64| -> Result<f64> {
        let est = quad.integrate(|t| (1.0 + t.powf(1.0 / s)).powf(-half_n), 0.0, upper)?;
        Ok(est.value / s)
    };
    if zeta <= 1.0 {
        return head(zeta.powf(s));
    }
    let lower = if zeta.is_infinite() {
        0.0
    } else {
        zeta.powf(-a)
    };
    let tail = quad.integrate(|t| (1.0 + t.powf(1.0 / a)).powf(-half_n), lower, 1.0)?;
    Ok(head(1.0)? + tail.value / a)
}

/// Same integral through the regularised incomplete beta function:
/// with `τ = ζ/(1+ζ)`, `Φ(ζ) = B(s, n/2−s) · I_τ(s, n/2−s)`.
///
/// This is the fast path used inside nested quadratures; it agrees with
/// [`phi_integral`] to about 1e−12.
pub fn phi_fast(zeta: f64, p: &FracParams) -> f64 {
    if zeta <= 0.0 {
        return 0.0;
    }
    let a = p.tail_exponent();
    let full = beta(p.s, a);
    if zeta.is_infinite() {
        return full;
    }
    if zeta <= 1.0 {
        let tau = zeta / (1.0 + zeta);
        full * beta_reg(p.s, a, tau)
    } else {
        // complement keeps relative accuracy as τ → 1
        let one_minus_tau = 1.0 / (1.0 + zeta);
        full * (1.0 - beta_reg(a, p.s, one_minus_tau))
    }
}

/// `Φ(∞) = B(s, n/2 − s)`.
pub fn phi_limit(p: &FracParams) -> f64 {
    beta(p.s, p.tail_exponent())
}

/// Elementary upper bound `1/s + 1/(n/2 − s) = (n/2)/(s(n/2 − s))` on Φ.
pub fn phi_upper_bound(p: &FracParams) -> f64 {
    1.0 / p.s + 1.0 / p.tail_exponent()
}

/// Constant of the closed-form torsion function
/// `g(x) = c (R² − |x|²)^s`, `c = Γ(n/2) / (2^{2s} Γ(n/2+s) Γ(1+s))`.
pub fn getoor_constant(p: &FracParams) -> f64 {
    let h = p.half_n();
    gamma(h) / (4f64.powf(p.s) * gamma(h + p.s) * gamma(1.0 + p.s))
}

/// Solution of `(−Δ)^s g = 1` in `B_R(0)`, `g = 0` outside.
pub fn getoor_solution(x: &[f64], radius: f64, p: &FracParams) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("R = {radius} must be positive")));
    }
    Ok(getoor_radial(norm(x), radius, p))
}

/// [`getoor_solution`] as a function of `|x|`.
pub fn getoor_radial(r: f64, radius: f64, p: &FracParams) -> f64 {
    let d = radius * radius - r * r;
    if d <= 0.0 {
        0.0
    } else {
        getoor_constant(p) * d.powf(p.s)
    }
}

/// Candidate values of the kernel constant κ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelNormalization {
    /// `Γ(n/2) / (2^{2s} π^{1/n} Γ(s)²)` as printed in the source derivation.
    pub printed: f64,
    /// `Γ(n/2) / (2^{2s} π^{n/2} Γ(s)²)`, the textbook constant.
    pub standard: f64,
    /// Value fixed numerically by `∫_{B_1} G(0, ·) = g(0)`.
    pub calibrated: f64,
}

/// Fractional Dirichlet Green kernel on balls with a calibrated constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenKernel {
    pub params: FracParams,
    pub kappa: f64,
    pub normalization: KernelNormalization,
}

impl GreenKernel {
    /// Calibrates κ so that the kernel integrates to the torsion function.
    pub fn calibrated(params: FracParams) -> Result<Self> {
        let s = params.s;
        let h = params.half_n();
        let gs = gamma(s);
        let printed = gamma(h) / (4f64.powf(s) * PI.powf(1.0 / params.n as f64) * gs * gs);
        let standard = gamma(h) / (4f64.powf(s) * PI.powf(h) * gs * gs);
        // ∫_{B_1} |y|^{2s−n} Φ(ζ(0,y)) dy with ζ = (1 − ρ²)/ρ², in t = ρ^{2s}
        let quad = Integrator::new(0.0, 1e-13).with_max_panels(2000);
        let radial = quad.integrate(
            |t| {
                let rho = t.powf(0.5 / s);
                let zeta = if rho > 0.0 {
                    (1.0 - rho * rho).max(0.0) / (rho * rho)
                } else {
                    f64::INFINITY
                };
                phi_fast(zeta, &params)
            },
            0.0,
            1.0,
        )?;
        let unscaled = sphere_area(params.n) * radial.value / (2.0 * s);
        let calibrated = getoor_constant(&params) / unscaled;
        Ok(Self {
            params,
            kappa: calibrated,
            normalization: KernelNormalization {
                printed,
                standard,
                calibrated,
            },
        })
    }

    /// `G_R(x, y)`; zero when either point lies outside the open ball.
    pub fn greens_function(&self, x: &[f64], y: &[f64], radius: f64) -> Result<f64> {
        if x.len() != self.params.n || y.len() != self.params.n {
            return Err(Error::Shape(format!(
                "points must have dimension {}",
                self.params.n
            )));
        }
        let r2 = radius * radius;
        let x2 = dot(x, x);
        let y2 = dot(y, y);
        if x2 >= r2 || y2 >= r2 {
            return Ok(0.0);
        }
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 == 0.0 {
            return Err(Error::Singular("G(x, y) is singular at x = y".into()));
        }
        let zeta = (r2 - x2) * (r2 - y2) / (r2 * d2);
        let n = self.params.n as f64;
        Ok(self.kappa * d2.powf(self.params.s - n / 2.0) * phi_integral(zeta, &self.params)?)
    }

    /// `∫_{B_src} G_R(x, y) dy` for a point at distance `r_x` from the centre.
    ///
    /// Uses polar coordinates centred at `x` with the polar axis through the
    /// origin; rotational symmetry about that axis reduces the integral to a
    /// (polar angle, radius) pair. The substitution `t = ρ^{2s}` absorbs the
    /// kernel singularity.
    pub fn ball_potential(&self, r_x: f64, radius: f64, src_radius: f64, rel_tol: f64) -> Result<f64> {
        if !(r_x >= 0.0 && r_x < radius) {
            return Err(Error::Domain(format!(
                "|x| = {r_x} must lie in [0, R = {radius})"
            )));
        }
        if !(src_radius > 0.0 && src_radius <= radius) {
            return Err(Error::InvalidParameter(format!(
                "source radius {src_radius} must lie in (0, R]"
            )));
        }
        let p = self.params;
        let s = p.s;
        let r2 = radius * radius;
        let c_x = r2 - r_x * r_x;
        let src2 = src_radius * src_radius;
        let inner = Integrator::new(0.0, 0.1 * rel_tol).with_max_panels(400);
        let outer = Integrator::new(0.0, rel_tol).with_max_panels(400);
        let mut failure: Option<Error> = None;

        // ∫ ρ^{2s−1} Φ dρ over the chord for direction θ
        let mut radial = |theta: f64| -> f64 {
            let (sin_t, cos_t) = theta.sin_cos();
            let disc = src2 - r_x * r_x * sin_t * sin_t;
            if disc < 0.0 {
                return 0.0;
            }
            let root = disc.sqrt();
            let hi = -r_x * cos_t + root;
            let lo = (-r_x * cos_t - root).max(0.0);
            if hi <= lo {
                return 0.0;
            }
            let est = inner.estimate(
                |t| {
                    let rho = t.powf(0.5 / s);
                    if rho <= 0.0 {
                        return phi_fast(f64::INFINITY, &p);
                    }
                    let y2 = r_x * r_x + 2.0 * r_x * rho * cos_t + rho * rho;
                    let zeta = c_x * (r2 - y2).max(0.0) / (r2 * rho * rho);
                    phi_fast(zeta, &p)
                },
                lo.powf(2.0 * s),
                hi.powf(2.0 * s),
            );
            if !est.converged && failure.is_none() {
                failure = Some(Error::QuadratureNonConvergence {
                    value: est.value,
                    error: est.error,
                    tolerance: 0.1 * rel_tol * est.value.abs(),
                });
            }
            est.value / (2.0 * s) * sin_t.powi(p.n as i32 - 2)
        };

        let angular = if r_x < src_radius {
            outer.estimate(&mut radial, 0.0, PI)
        } else {
            // chord exists for θ ∈ [θ₀, π]; θ = θ₀ + (π − θ₀) w² smooths the
            // square-root onset of the chord length
            let theta0 = PI - (src_radius / r_x).min(1.0).asin();
            let span = PI - theta0;
            outer.estimate(
                |w| 2.0 * span * w * radial(theta0 + span * w * w),
                0.0,
                1.0,
            )
        };
        if let Some(err) = failure {
            return Err(err);
        }
        if !angular.converged {
            return Err(Error::QuadratureNonConvergence {
                value: angular.value,
                error: angular.error,
                tolerance: rel_tol * angular.value.abs(),
            });
        }
        Ok(self.kappa * sphere_area(p.n - 1) * angular.value)
    }

    /// `b(x) = ∫_{B_{r₀}} G_R(x, y) dy`.
    pub fn bump_integral(&self, x: &[f64], prob: &BallProblem) -> Result<f64> {
        self.ball_potential(norm(x), prob.radius, prob.inner_radius, 1e-9)
    }
}

/// Monotonicity tolerance on discrete radial differences.
pub const MONOTONE_TOL: f64 = 1e-8;

/// Sampled radial profile `u(|x|)`, identically zero for `|x| ≥ R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub problem: BallProblem,
    pub params: FracParams,
    slopes: Vec<f64>,
}

impl RadialProfile {
    pub fn new(radii: Vec<f64>, values: Vec<f64>, problem: BallProblem, params: FracParams) -> Result<Self> {
        if radii.len() < 2 || radii.len() != values.len() {
            return Err(Error::Shape("profile needs ≥ 2 matching radii/values".into()));
        }
        if radii[0] != 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "radii must start at 0 and increase strictly".into(),
            ));
        }
        let slopes = pchip_slopes(&radii, &values);
        Ok(Self {
            radii,
            values,
            problem,
            params,
            slopes,
        })
    }

    /// Monotone cubic Hermite interpolation; zero at and beyond `R`.
    pub fn eval(&self, r: f64) -> f64 {
        let last = *self.radii.last().unwrap();
        if r >= self.problem.radius || r >= last {
            return if r >= self.problem.radius { 0.0 } else { *self.values.last().unwrap() };
        }
        let r = r.max(0.0);
        let i = match self.radii.partition_point(|&x| x <= r) {
            0 => 0,
            k => k - 1,
        };
        let (x0, x1) = (self.radii[i], self.radii[i + 1]);
        let hh = x1 - x0;
        let t = (r - x0) / hh;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i], self.slopes[i + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * hh * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * hh * m1
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Depth `|u(0)|` of the profile.
    pub fn depth(&self) -> f64 {
        -self.values[0]
    }

    /// Largest violation of radial monotonicity (`max(−Δu)` over the grid).
    pub fn worst_decrease(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_monotone(&self) -> bool {
        self.worst_decrease() <= MONOTONE_TOL
    }

    /// Strictly negative on every grid radius inside `B_R`.
    pub fn is_negative(&self) -> bool {
        self.radii
            .iter()
            .zip(&self.values)
            .filter(|(r, _)| **r < self.problem.radius)
            .all(|(_, v)| *v < 0.0)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "radius,value")?;
        for (r, v) in self.radii.iter().zip(&self.values) {
            writeln!(out, "{r:.17e},{v:.17e}")?;
        }
        Ok(())
    }
}

/// Fritsch–Carlson slopes; keep monotone data monotone.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let m = x.len();
    let delta: Vec<f64> = (0..m - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
    let mut d = vec![0.0; m];
    if m == 2 {
        d[0] = delta[0];
        d[1] = delta[0];
        return d;
    }
    for i in 1..m - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            d[i] = 0.0;
        } else {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            let w1 = 2.0 * h1 + h0;
            let w2 = h1 + 2.0 * h0;
            d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let v = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if v * d0 <= 0.0 {
            0.0
        } else if d0 * d1 <= 0.0 && v.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            v
        }
    };
    d[0] = end(x[1] - x[0], x[2] - x[1], delta[0], delta[1]);
    d[m - 1] = end(
        x[m - 1] - x[m - 2],
        x[m - 2] - x[m - 3],
        delta[m - 2],
        delta[m - 3],
    );
    d
}

/// Radii used by [`local_solution`]: half of the points resolve
/// `[0, min(4r₀, R/2)]`, the rest cluster towards `R` where the profile
/// behaves like `(R − |x|)^s`.
pub fn profile_radii(prob: &BallProblem, grid_size: usize) -> Vec<f64> {
    let big_r = prob.radius;
    let split = (4.0 * prob.inner_radius).min(0.5 * big_r);
    let n_inner = grid_size / 2;
    let n_outer = grid_size - n_inner;
    let mut radii: Vec<f64> = (0..n_inner)
        .map(|i| split * i as f64 / n_inner as f64)
        .collect();
    for j in 0..n_outer {
        // cosine clustering at the outer end, uniform-ish at the split
        let t = j as f64 / (n_outer - 1).max(1) as f64;
        let w = (0.5 * PI * t).sin();
        radii.push(split + (big_r - split) * w);
    }
    radii
}

/// Radial solution `u = F₂ g − (F₁ + F₂) b` of the two-force Dirichlet problem.
pub fn local_solution(prob: &BallProblem, kernel: &GreenKernel, grid_size: usize) -> Result<RadialProfile> {
    if grid_size < 2 {
        return Err(Error::InvalidParameter("grid_size must be at least 2".into()));
    }
    let radii = if grid_size < 8 {
        (0..grid_size)
            .map(|i| prob.radius * i as f64 / (grid_size - 1) as f64)
            .collect()
    } else {
        profile_radii(prob, grid_size)
    };
    let p = kernel.params;
    let f1 = prob.inner_source;
    let f2 = prob.outer_sink;
    let values: Vec<f64> = if f1 == 0.0 && f2 == 0.0 {
        vec![0.0; radii.len()]
    } else {
        radii
            .par_iter()
            .map(|&r| {
                if r >= prob.radius {
                    return Ok(0.0);
                }
                let g = getoor_radial(r, prob.radius, &p);
                let b = kernel.ball_potential(r, prob.radius, prob.inner_radius, 1e-9)?;
                Ok(f2 * g - (f1 + f2) * b)
            })
            .collect::<Result<_>>()?
    };
    RadialProfile::new(radii, values, *prob, p)
}

/// Outcome of the sign/monotonicity ratio test for the local solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalConditionReport {
    /// `(F₁ + F₂)/F₂`.
    pub lhs: f64,
    /// `(n/2s) (1+q)ⁿ / ((1−q²)^s qⁿ)`.
    pub rhs: f64,
    pub holds: bool,
}

pub fn local_condition_rhs(q: f64, p: &FracParams) -> f64 {
    let n = p.n as f64;
    n / (2.0 * p.s) * (1.0 + q).powf(n) / ((1.0 - q * q).powf(p.s) * q.powf(n))
}

pub fn check_local_conditions(prob: &BallProblem, p: &FracParams) -> LocalConditionReport {
    let f1 = prob.inner_source;
    let f2 = prob.outer_sink;
    let lhs = if f2 == 0.0 {
        if f1 > 0.0 {
            f64::INFINITY
        } else {
            f64::NAN
        }
    } else {
        (f1 + f2) / f2
    };
    let rhs = local_condition_rhs(prob.q(), p);
    LocalConditionReport {
        lhs,
        rhs,
        holds: lhs >= rhs,
    }
}

/// Factor `c` in the lower bound `b(x) ≥ c · g(x)`.
pub fn bump_lower_bound_factor(q: f64, p: &FracParams) -> f64 {
    let n = p.n as f64;
    (1.0 - q * q).powf(p.s) / (1.0 + q).powf(n) * q.powf(n) * (2.0 * p.s / n)
}

/// Constants `K` in `u(0) ≥ −K F₁ r₀^{2s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinBound {
    /// With the calibrated kernel constant: `(n/2) / (2^{2s} Γ(s)² s² (n/2 − s))`.
    pub calibrated: f64,
    /// With the printed constant: the calibrated value times `π^{n/2} / π^{1/n}`.
    pub printed: f64,
}

pub fn min_value_bound(p: &FracParams) -> MinBound {
    let s = p.s;
    let gs = gamma(s);
    let base = 4f64.powf(s) * gs * gs * s * s * p.tail_exponent() / p.half_n();
    MinBound {
        calibrated: 1.0 / base,
        printed: PI.powf(p.half_n()) / (PI.powf(1.0 / p.n as f64) * base),
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p22() -> FracParams {
        FracParams::new(2, 0.5).unwrap()
    }

    #[test]
    fn rejects_bad_params() {
        assert!(FracParams::new(1, 0.5).is_err());
        assert!(FracParams::new(2, 1.0).is_err());
        assert!(FracParams::new(2, 0.0).is_err());
        assert!(BallProblem::new(1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn phi_zero_and_domain() {
        assert_eq!(phi_integral(0.0, &p22()).unwrap(), 0.0);
        assert!(matches!(phi_integral(-1.0, &p22()), Err(Error::Domain(_))));
    }

    #[test]
    fn phi_limit_half_laplacian_plane() {
        // ∫₀^∞ w^{-1/2}/(1+w) dw = π
        let v = phi_integral(f64::INFINITY, &p22()).unwrap();
        assert!((v - PI).abs() < 1e-10, "{v}");
        assert!((phi_limit(&p22()) - PI).abs() < 1e-12);
    }

    #[test]
    fn phi_routes_agree() {
        for (n, s) in [(2, 0.5), (2, 0.2), (2, 0.85), (3, 0.3), (3, 0.7), (5, 0.5)] {
            let p = FracParams::new(n, s).unwrap();
            for zeta in [1e-6, 0.01, 0.3, 1.0, 2.5, 40.0, 1e5, f64::INFINITY] {
                let a = phi_integral(zeta, &p).unwrap();
                let b = phi_fast(zeta, &p);
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300), "n={n} s={s} ζ={zeta}: {a} vs {b}");
                assert!(a <= phi_upper_bound(&p));
            }
        }
    }

    #[test]
    fn phi_closed_form_half_laplacian() {
        // n = 2, s = 1/2: Φ(ζ) = 2 arctan √ζ
        for zeta in [0.1, 1.0, 7.0] {
            let v = phi_integral(zeta, &p22()).unwrap();
            assert!((v - 2.0 * zeta.sqrt().atan()).abs() < 1e-11);
        }
    }

    #[test]
    fn getoor_values() {
        let p = p22();
        let g0 = getoor_solution(&[0.0, 0.0], 1.0, &p).unwrap();
        assert!((g0 - 2.0 / PI).abs() < 1e-14);
        assert_eq!(getoor_solution(&[1.0, 0.0], 1.0, &p).unwrap(), 0.0);
        assert_eq!(getoor_solution(&[0.0, 2.0], 1.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn calibration_matches_textbook_constant() {
        for (n, s) in [(2, 0.5), (2, 0.3), (3, 0.6)] {
            let k = GreenKernel::calibrated(FracParams::new(n, s).unwrap()).unwrap();
            let rel = (k.normalization.calibrated / k.normalization.standard - 1.0).abs();
            assert!(rel < 1e-9, "n={n} s={s}: {:?}", k.normalization);
        }
    }

    #[test]
    fn greens_function_edge_cases() {
        let k = GreenKernel::calibrated(p22()).unwrap();
        assert_eq!(k.greens_function(&[1.0, 0.0], &[0.1, 0.0], 1.0).unwrap(), 0.0);
        assert!(matches!(
            k.greens_function(&[0.2, 0.1], &[0.2, 0.1], 1.0),
            Err(Error::Singular(_))
        ));
        let a = k.greens_function(&[0.3, -0.2], &[0.1, 0.5], 1.0).unwrap();
        let b = k.greens_function(&[0.1, 0.5], &[0.3, -0.2], 1.0).unwrap();
        assert!(a > 0.0 && (a - b).abs() < 1e-14 * a);
    }

    #[test]
    fn zero_sources_give_zero_profile() {
        let k = GreenKernel::calibrated(p22()).unwrap();
        let prob = BallProblem::from_ratio(1.0, 0.2, 0.0, 0.0).unwrap();
        let prof = local_solution(&prob, &k, 16).unwrap();
        assert!(prof.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ratio_rhs_example() {
        let rhs = local_condition_rhs(0.1, &p22());
        let expect = 2.0 * 1.21 / (0.99f64.sqrt() * 0.01);
        assert!((rhs - expect).abs() < 1e-10);
        assert!((rhs - 243.2).abs() < 0.05);
    }

    #[test]
    fn vanishing_sink_always_passes() {
        let prob = BallProblem::from_ratio(1.0, 0.1, 1.0, 0.0).unwrap();
        let rep = check_local_conditions(&prob, &p22());
        assert!(rep.holds && rep.lhs.is_infinite());
        let prob = BallProblem::from_ratio(1.0, 0.1, 1.0, 1.0).unwrap();
        assert!(!check_local_conditions(&prob, &p22()).holds);
    }

    #[test]
    fn pchip_reproduces_linear_data() {
        let prob = BallProblem::from_ratio(2.0, 0.5, 1.0, 1.0).unwrap();
        let radii: Vec<f64> = (0..11).map(|i| 0.2 * i as f64).collect();
        let vals: Vec<f64> = radii.iter().map(|r| 3.0 * r - 1.0).collect();
        let prof = RadialProfile::new(radii, vals, prob, p22()).unwrap();
        for r in [0.05, 0.71, 1.33, 1.99] {
            assert!((prof.eval(r) - (3.0 * r - 1.0)).abs() < 1e-12);
        }
        assert_eq!(prof.eval(2.0), 0.0);
        assert_eq!(prof.eval(5.0), 0.0);
    }
}
