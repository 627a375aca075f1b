//! Pointwise evaluation of `(−Δ)^s u(x)` by singular-integral quadrature.
//!
//! Uses the second-difference form
//! `(−Δ)^s u(x) = −(C/2) ∫ (u(x+y) + u(x−y) − 2u(x)) / |y|^{n+2s} dy`
//! in polar coordinates: an angular integral over a half sphere inside a
//! radial integral. Near `ρ = 0` the substitution `t = ρ^{2−2s}` turns the
//! `ρ^{1−2s}` behaviour of the integrand into a bounded one; the tail beyond
//! a cut-off radius comes from the declared far-field behaviour.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::kernels::FracParams;
use crate::quad::Integrator;
use crate::special::{frac_laplacian_constant, sphere_area};

/// Behaviour of the field beyond the cut-off radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FarField {
    /// `u(x ± y) = 0` for `|y| ≥ far`.
    Zero,
    /// `u(x) − tilt·x` is periodic with the given mean (unused tilt entries
    /// are zero); the oscillating remainder of the tail is estimated, not
    /// integrated.
    Periodic { mean: f64, tilt: [f64; 3] },
    /// Values beyond the cut-off lie in `[lo, hi]`.
    Bounded { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOptions {
    /// Radius of the inner (substituted) region.
    pub near: f64,
    /// Cut-off radius for the far field.
    pub far: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl QuadratureOptions {
    pub fn new(near: f64, far: f64) -> Self {
        Self {
            near,
            far,
            rel_tol: 1e-8,
            abs_tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracLapEstimate {
    pub value: f64,
    pub error: f64,
}

struct Angular<'a> {
    field: &'a dyn ScalarField,
    x: &'a [f64],
    centre: f64,
    quad: Integrator,
    failed: bool,
}

impl Angular<'_> {
    /// `∫_{half sphere} (u(x+ρω) + u(x−ρω) − 2u(x)) dω`.
    fn at(&mut self, rho: f64) -> f64 {
        let n = self.x.len();
        let x = self.x;
        let field = self.field;
        let centre = self.centre;
        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut second = |dir: &[f64]| {
            for i in 0..n {
                y[i] = x[i] + rho * dir[i];
                z[i] = x[i] - rho * dir[i];
            }
            field.value(&y) + field.value(&z) - 2.0 * centre
        };
        let est = match n {
            2 => self.quad.estimate(|t| second(&[t.cos(), t.sin()]), 0.0, PI),
            3 => {
                let inner = self.quad;
                let mut failed = false;
                let e = self.quad.estimate(
                    |th| {
                        let (st, ct) = th.sin_cos();
                        let r = inner.estimate(
                            |ph| second(&[st * ph.cos(), st * ph.sin(), ct]),
                            0.0,
                            2.0 * PI,
                        );
                        failed |= !r.converged;
                        r.value * st
                    },
                    0.0,
                    0.5 * PI,
                );
                self.failed |= failed;
                e
            }
            _ => unreachable!("dimension checked by caller"),
        };
        self.failed |= !est.converged;
        est.value
    }
}

/// `(−Δ)^s u(x)` with an error estimate, for `n ∈ {2, 3}`.
pub fn fractional_laplacian_pointwise(
    field: &dyn ScalarField,
    x: &[f64],
    p: &FracParams,
    far_field: FarField,
    opts: &QuadratureOptions,
) -> Result<FracLapEstimate> {
    let n = field.dim();
    if n != p.n || x.len() != n {
        return Err(Error::Shape("field, point and parameters disagree on dimension".into()));
    }
    if n != 2 && n != 3 {
        return Err(Error::InvalidParameter(format!(
            "pointwise quadrature supports n = 2, 3 (got {n})"
        )));
    }
    if !(opts.near > 0.0 && opts.far > opts.near) {
        return Err(Error::InvalidParameter("need 0 < near < far".into()));
    }
    let s = p.s;
    let centre = field.value(x);
    let mut ang = Angular {
        field,
        x,
        centre,
        quad: Integrator::new(opts.abs_tol, opts.rel_tol).with_max_panels(4000),
        failed: false,
    };
    let radial = Integrator::new(opts.abs_tol, opts.rel_tol).with_max_panels(2000);

    // [0, near] in t = ρ^{2−2s}
    // below rho_min the difference quotient is rounding noise; freeze it
    let e = 2.0 - 2.0 * s;
    let rho_min = 1e-3 * opts.near;
    let inner = radial.estimate(
        |t| {
            let rho = t.powf(1.0 / e).max(rho_min);
            ang.at(rho) / (rho * rho) / e
        },
        0.0,
        opts.near.powf(e),
    );
    let mut total = inner.value;
    let mut error = inner.error;
    let mut converged = inner.converged;

    // [near, far] on geometric panels
    let mut a = opts.near;
    while a < opts.far {
        let b = (2.0 * a).min(opts.far);
        let est = radial.estimate(|rho| ang.at(rho) * rho.powf(-1.0 - 2.0 * s), a, b);
        total += est.value;
        error += est.error;
        converged &= est.converged;
        a = b;
    }

    // tail beyond `far`
    let half_sphere = 0.5 * sphere_area(n);
    let weight = opts.far.powf(-2.0 * s) / (2.0 * s);
    let (tail, tail_err) = match far_field {
        FarField::Zero => (-2.0 * centre * half_sphere * weight, 0.0),
        FarField::Periodic { mean, tilt } => {
            let affine: f64 = tilt.iter().zip(x).map(|(a, b)| a * b).sum();
            let mean_part = 2.0 * (mean - (centre - affine)) * half_sphere;
            let osc = (ang.at(opts.far) - mean_part).abs();
            (mean_part * weight, osc * weight)
        }
        FarField::Bounded { lo, hi } => {
            let mid = (lo + hi) - 2.0 * centre;
            (mid * half_sphere * weight, (hi - lo) * half_sphere * weight)
        }
    };
    total += tail;
    error += tail_err;
    if !converged || ang.failed {
        return Err(Error::QuadratureNonConvergence {
            value: total,
            error,
            tolerance: opts.rel_tol * total.abs() + opts.abs_tol,
        });
    }
    let c = frac_laplacian_constant(n, s);
    Ok(FracLapEstimate {
        value: -c * total,
        error: c * error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_linear_fields_vanish() {
        let p = FracParams::new(2, 0.5).unwrap();
        let opts = QuadratureOptions::new(0.5, 20.0);
        let c = (2usize, |_: &[f64]| 3.0);
        let v = fractional_laplacian_pointwise(&c, &[0.1, 0.2], &p, FarField::Bounded { lo: 3.0, hi: 3.0 }, &opts).unwrap();
        assert!(v.value.abs() < 1e-12);
        let lin = (2usize, |x: &[f64]| 0.4 * x[0] - 1.3 * x[1]);
        let far = FarField::Periodic { mean: 0.0, tilt: [0.4, -1.3, 0.0] };
        let v = fractional_laplacian_pointwise(&lin, &[0.7, -0.2], &p, far, &opts).unwrap();
        assert!(v.value.abs() < 1e-12 && v.error < 1e-12);
    }

    #[test]
    fn torsion_function_has_unit_fractional_laplacian() {
        // g = c (1 − |x|²)^s solves (−Δ)^s g = 1 in the unit ball
        for (n, s) in [(2usize, 0.5), (2, 0.3), (3, 0.5)] {
            let p = FracParams::new(n, s).unwrap();
            let c = crate::kernels::getoor_constant(&p);
            let g = (n, move |y: &[f64]| {
                let r2: f64 = y.iter().map(|v| v * v).sum();
                if r2 >= 1.0 {
                    0.0
                } else {
                    c * (1.0 - r2).powf(s)
                }
            });
            let mut x = vec![0.0; n];
            x[0] = 0.3;
            let mut opts = QuadratureOptions::new(0.05, 1.3);
            opts.rel_tol = 1e-7;
            let v = fractional_laplacian_pointwise(&g, &x, &p, FarField::Zero, &opts).unwrap();
            assert!((v.value - 1.0).abs() < 2e-4, "n={n} s={s}: {v:?}");
        }
    }
}
