//! Parameter selection: the constants `A₁…A₄`, the choice of `q, F₁, F₂, h,
//! l, d`, numerical re-verification of the four sufficient inequalities and
//! the admissibility decision for the initial surface `U`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{local_condition_rhs, min_value_bound};
use crate::lifting::{lift_constants, lift_fraclap_bound, mollifier_c0};
use crate::obstacles::{InitialSurface, ModelParams};
use crate::percolation::open_probability_raw;
use crate::special::gamma;

/// Constants of the recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub a1: f64,
    /// Derived from the calibrated kernel normalisation.
    pub a2: f64,
    /// Literal value with the printed kernel constant.
    pub a2_printed: f64,
    pub a3: f64,
    pub a4: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

pub fn compute_constants(params: &ModelParams, alpha: f64, p_alpha: f64, c0: f64) -> Result<Constants> {
    params.validate()?;
    if !(p_alpha > 0.0 && p_alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("p_alpha = {p_alpha} must lie in (0, 1)")));
    }
    let (n, s, r0) = (params.n as f64, params.s, params.r0);
    if !(alpha > 0.0 && alpha <= 1.0 && alpha < 2.0 * s) {
        return Err(Error::InvalidParameter(format!(
            "alpha = {alpha} must lie in (0, 1] and below 2s = {}",
            2.0 * s
        )));
    }
    let a1 = -(4f64.powf(n) * n.sqrt().powf(n) / r0.powf(n)) * (1.0 - p_alpha).ln();
    let bound = min_value_bound(&params.frac());
    let a2 = r0.powf(1.0 - 2.0 * s) / bound.calibrated;
    let gs = gamma(s);
    let a2_printed =
        r0.powf(1.0 - 2.0 * s) * 4f64.powf(s) * PI.powf(1.0 / n) * gs * gs * s * s * (n / 2.0 - s) / PI.powf(n / 2.0);
    let a3 = n / (2.0 * s) * (9.0f64 / 8.0).powf(n) * 64.0 / 63.0;
    let (c1, c2) = lift_constants(params.n, s, alpha, c0);
    let a4 = (4.0 * c1 + c2) / r0.powf(2.0 * s) * n.powf(s);
    Ok(Constants {
        a1,
        a2,
        a2_printed,
        a3,
        a4,
        c0,
        c1,
        c2,
    })
}

/// One inequality evaluated from final values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityRecord {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl InequalityRecord {
    fn le(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            pass: lhs <= rhs,
        }
    }

    fn lt(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            pass: lhs < rhs,
        }
    }

    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Admissibility of `U` for the chosen geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityRecord {
    pub grad_sup: f64,
    pub fraclap_sup: f64,
    /// Room left in the lifting inequality for `‖(−Δ)^s U‖∞` with the final values.
    pub ledger_threshold: f64,
    /// `(F₁/4A₃)^{1+n/2s} (λμ_S/(A₁A₄))^{n/2s}` (ignores the cap on `q`).
    pub sharp_threshold: f64,
    /// `A₀ = (4A₃)^{−1−n/2s} (A₁A₄)^{−n/2s}`.
    pub a0: f64,
    /// `A₀ min{A₂, S/2}^{1+n/2s} (λμ_S)^{n/2s} (1 − ‖∇U‖∞)^{1+n/2s}`.
    pub simplified_threshold: f64,
    pub gradient_ok: bool,
    pub ledger_pass: bool,
    pub sharp_pass: bool,
    pub simplified_pass: bool,
    pub pass: bool,
}

/// Every chosen parameter and constant together with the checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryLedger {
    pub n: usize,
    pub s: f64,
    pub r0: f64,
    pub r1: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub p_alpha: f64,
    pub strength: f64,
    pub mu_s: f64,
    /// `q` before the cap `q < r₀/(8r₁√n)`.
    pub q_raw: f64,
    pub q: f64,
    pub q_capped: bool,
    pub radius: f64,
    pub l: f64,
    pub d: f64,
    pub h: f64,
    pub f1: f64,
    pub f2: f64,
    pub f_star: f64,
    pub constants: Constants,
    pub inequalities: Vec<InequalityRecord>,
    /// Depth inequality with the printed kernel constant; informational.
    pub depth_printed: InequalityRecord,
    pub admissibility: AdmissibilityRecord,
    /// Open-site probability implied by the chosen cuboids.
    pub open_probability: f64,
}

impl GeometryLedger {
    pub fn all_inequalities_pass(&self) -> bool {
        self.inequalities.iter().all(|r| r.pass)
    }

    pub fn lift_term(&self) -> f64 {
        lift_fraclap_bound(self.constants.c1, self.constants.c2, self.s, self.h, self.l, self.d)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text table of the ledger.
    pub fn table(&self) -> String {
        let c = &self.constants;
        let mut rows: Vec<(String, f64)> = vec![
            ("n".into(), self.n as f64),
            ("s".into(), self.s),
            ("r0".into(), self.r0),
            ("r1".into(), self.r1),
            ("lambda".into(), self.lambda),
            ("alpha".into(), self.alpha),
            ("p_alpha".into(), self.p_alpha),
            ("S".into(), self.strength),
            ("mu_S".into(), self.mu_s),
            ("q_raw".into(), self.q_raw),
            ("q".into(), self.q),
            ("R".into(), self.radius),
            ("l".into(), self.l),
            ("d".into(), self.d),
            ("h".into(), self.h),
            ("F1".into(), self.f1),
            ("F2".into(), self.f2),
            ("F*".into(), self.f_star),
            ("A0".into(), self.admissibility.a0),
            ("A1".into(), c.a1),
            ("A2".into(), c.a2),
            ("A2 (printed)".into(), c.a2_printed),
            ("A3".into(), c.a3),
            ("A4".into(), c.a4),
            ("C0".into(), c.c0),
            ("C1".into(), c.c1),
            ("C2".into(), c.c2),
            ("p_open".into(), self.open_probability),
        ];
        let mut out = String::new();
        for (k, v) in rows.drain(..) {
            out.push_str(&format!("{k:<14} {v:>14.6e}\n"));
        }
        for r in self.inequalities.iter().chain(std::iter::once(&self.depth_printed)) {
            out.push_str(&format!(
                "{:<14} {:>14.6e} vs {:>14.6e}  {}\n",
                r.name,
                r.lhs,
                r.rhs,
                if r.pass { "pass" } else { "FAIL" }
            ));
        }
        let a = &self.admissibility;
        out.push_str(&format!(
            "{:<14} {:>14.6e} vs {:>14.6e}  {}\n",
            "admissible",
            a.fraclap_sup + 0.0,
            a.ledger_threshold,
            if a.pass { "pass" } else { "FAIL" }
        ));
        out
    }
}

/// Strength threshold choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "mode", rename_all = "snake_case")]
pub enum StrengthChoice {
    /// Maximise `min{A₂, S/2}^{1+n/2s} μ_S^{n/2s}` on a grid.
    Search { points: usize },
    Fixed { value: f64 },
}

/// Recipe inputs beyond the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionOptions {
    pub alpha: f64,
    pub p_alpha: f64,
    pub strength: StrengthChoice,
}

impl SelectionOptions {
    pub fn new(alpha: f64, p_alpha: f64) -> Self {
        Self {
            alpha,
            p_alpha,
            strength: StrengthChoice::Search { points: 400 },
        }
    }
}

/// `S` maximising `min{A₂, S/2}^{1+n/2s} μ_S^{n/2s}` over a uniform grid.
pub fn search_strength(params: &ModelParams, a2: f64, points: usize) -> (f64, f64) {
    let law = params.strength_law;
    let (_, hi) = law.support();
    let e = params.n as f64 / (2.0 * params.s);
    let score = |st: f64| (a2.min(0.5 * st)).powf(1.0 + e) * law.survival(st).powf(e);
    let mut best = (hi, score(hi));
    for i in 1..=points.max(1) {
        let st = hi * i as f64 / points.max(1) as f64;
        let v = score(st);
        if v > best.1 {
            best = (st, v);
        }
    }
    (best.0, law.survival(best.0))
}

/// Evaluates the admissibility conditions for `surf` against a ledger.
pub fn admissibility(surf: &InitialSurface, ledger: &GeometryLedger) -> AdmissibilityRecord {
    let c = &ledger.constants;
    let e = ledger.n as f64 / (2.0 * ledger.s);
    let lm = ledger.lambda * ledger.mu_s;
    let grad = surf.grad_sup;
    let lap = surf.fraclap_sup;
    let ledger_threshold = 0.5 * (ledger.strength - ledger.f1).min(ledger.f2) - ledger.lift_term();
    let sharp_threshold = (ledger.f1 / (4.0 * c.a3)).powf(1.0 + e) * (lm / (c.a1 * c.a4)).powf(e);
    let a0 = (4.0 * c.a3).powf(-1.0 - e) * (c.a1 * c.a4).powf(-e);
    let simplified_threshold =
        a0 * c.a2.min(0.5 * ledger.strength).powf(1.0 + e) * lm.powf(e) * (1.0 - grad).max(0.0).powf(1.0 + e);
    let gradient_ok = grad < 1.0;
    let ledger_pass = gradient_ok && lap <= ledger_threshold;
    AdmissibilityRecord {
        grad_sup: grad,
        fraclap_sup: lap,
        ledger_threshold,
        sharp_threshold,
        a0,
        simplified_threshold,
        gradient_ok,
        ledger_pass,
        sharp_pass: gradient_ok && lap <= sharp_threshold,
        simplified_pass: gradient_ok && lap <= simplified_threshold,
        pass: ledger_pass,
    }
}

/// Runs the recipe and records every check, without rejecting.
pub fn compute_ledger(params: &ModelParams, surf: &InitialSurface, opts: &SelectionOptions) -> Result<GeometryLedger> {
    params.validate()?;
    if surf.dim() != params.n {
        return Err(Error::Shape("surface dimension differs from n".into()));
    }
    if !(surf.grad_sup < 1.0) {
        return Err(Error::DegenerateSurface {
            grad_sup: surf.grad_sup,
        });
    }
    let c0 = mollifier_c0(params.n, opts.alpha);
    let c = compute_constants(params, opts.alpha, opts.p_alpha, c0)?;
    let (strength, mu_s) = match opts.strength {
        StrengthChoice::Search { points } => search_strength(params, c.a2, points),
        StrengthChoice::Fixed { value } => {
            if !(value > 0.0) {
                return Err(Error::InvalidParameter(format!("S = {value} must be positive")));
            }
            (value, params.strength_law.survival(value))
        }
    };
    if !(mu_s > 0.0) {
        return Err(Error::InvalidParameter(format!("P(f ≥ S) = 0 for S = {strength}")));
    }
    let (n, s, r0, r1) = (params.n as f64, params.s, params.r0, params.r1);
    let lm = params.lambda * mu_s;
    let grad = surf.grad_sup;

    let f1 = (c.a2 * (1.0 - grad)).min(0.5 * strength);
    let q_raw = (f1 * lm / (4.0 * c.a1 * c.a3 * c.a4)).powf(1.0 / (2.0 * s));
    let q_cap = r0 / (8.0 * r1 * n.sqrt());
    let q_capped = q_raw >= q_cap;
    let q = if q_capped { 0.999 * q_cap } else { q_raw };
    let f2 = f1 / c.a3 * q.powf(n);
    let h = c.a1 / lm * q.powf(n);
    let l = r0 / (2.0 * q * n.sqrt());
    let d = l;
    let radius = r0 / q;
    let f_star = 0.5 * (strength - f1).min(f2);

    let bound = min_value_bound(&params.frac());
    let lift = lift_fraclap_bound(c.c1, c.c2, s, h, l, d);
    let inequalities = vec![
        InequalityRecord::lt("(1)", -(1.0 - opts.p_alpha).ln() / lm, h * (l - 2.0 * r1).max(0.0).powf(n)),
        InequalityRecord::le("(2)", bound.calibrated * f1 * r0.powf(2.0 * s), r0 * (1.0 - grad)),
        InequalityRecord::le(
            "(3)",
            local_condition_rhs(q, &params.frac()),
            (f1 + f2) / f2,
        ),
        InequalityRecord::le("(4)", lift + surf.fraclap_sup, f_star),
        InequalityRecord::lt("q cap", q, q_cap),
        InequalityRecord::lt("l > 4 r1", 4.0 * r1, l),
        InequalityRecord::lt("F* > 0", 0.0, f_star),
    ];
    let mut ledger = GeometryLedger {
        n: params.n,
        s,
        r0,
        r1,
        lambda: params.lambda,
        alpha: opts.alpha,
        p_alpha: opts.p_alpha,
        strength,
        mu_s,
        q_raw,
        q,
        q_capped,
        radius,
        l,
        d,
        h,
        f1,
        f2,
        f_star,
        constants: c,
        inequalities,
        depth_printed: InequalityRecord::le("(2 printed)", bound.printed * f1 * r0.powf(2.0 * s), r0 * (1.0 - grad)),
        admissibility: AdmissibilityRecord {
            grad_sup: 0.0,
            fraclap_sup: 0.0,
            ledger_threshold: 0.0,
            sharp_threshold: 0.0,
            a0: 0.0,
            simplified_threshold: 0.0,
            gradient_ok: false,
            ledger_pass: false,
            sharp_pass: false,
            simplified_pass: false,
            pass: false,
        },
        open_probability: 0.0,
    };
    ledger.admissibility = admissibility(surf, &ledger);
    ledger.open_probability = open_probability(&ledger);
    Ok(ledger)
}

/// Runs the recipe and rejects when a check fails.
pub fn select_parameters(params: &ModelParams, surf: &InitialSurface, opts: &SelectionOptions) -> Result<GeometryLedger> {
    let ledger = compute_ledger(params, surf, opts)?;
    let failed: Vec<String> = ledger
        .inequalities
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} ({:.3e} vs {:.3e})", r.name, r.lhs, r.rhs))
        .collect();
    if !failed.is_empty() {
        return Err(Error::Rejected(format!("inequalities failed: {}", failed.join(", "))));
    }
    if !ledger.admissibility.pass {
        return Err(Error::Rejected(format!(
            "‖(−Δ)^s U‖∞ = {:.3e} exceeds the admissible {:.3e} (‖∇U‖∞ = {:.3})",
            ledger.admissibility.fraclap_sup, ledger.admissibility.ledger_threshold, ledger.admissibility.grad_sup
        )));
    }
    Ok(ledger)
}

/// `1 − exp(−λ h (l − 2r₁)ⁿ μ_S)`.
pub fn open_probability(ledger: &GeometryLedger) -> f64 {
    let vol = (ledger.l - 2.0 * ledger.r1).max(0.0).powi(ledger.n as i32) * ledger.h;
    open_probability_raw(ledger.lambda, vol, ledger.mu_s)
}
