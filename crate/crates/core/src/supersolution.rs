//! Assembly of the barrier `v = u_flat + u_lift + U` on a periodic torus of
//! `K` columns per axis and its pointwise certification.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridField, ScalarField};
use crate::kernels::{check_local_conditions, local_solution, BallProblem, GreenKernel, LocalConditionReport, RadialProfile};
use crate::lifting::{heights_from_surface, mollified_lift, LatticeHeights, LiftField};
use crate::obstacles::{
    sample_flattened, Decomposition, FourierMode, InitialSurface, ModelParams, ObstacleField, SampleWindow, StrengthLaw,
};
use crate::percolation::{build_site_grid, default_level_cap, smallest_surface, LatticeSurface, LatticeWindow};
use crate::rng::stream_rng;
use crate::scaling::{compute_ledger, select_parameters, GeometryLedger, SelectionOptions};
use crate::spectral::{fraclap_periodic, Symbol};

/// Residual mode with a wave vector given in torus units: `k = 2π·index/L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub index: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Initial surface `U(x) = ν·x + c + Σ modes` on the torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub tilt: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub modes: Vec<ModeSpec>,
}

impl SurfaceSpec {
    pub fn flat(n: usize) -> Self {
        Self {
            tilt: vec![0.0; n],
            offset: 0.0,
            modes: Vec::new(),
        }
    }

    /// Resolves wave vectors for a torus of side `torus`.
    pub fn resolve(&self, s: f64, torus: f64) -> Result<InitialSurface> {
        let n = self.tilt.len();
        let mut modes: Vec<FourierMode> = self
            .modes
            .iter()
            .map(|m| {
                if m.index.len() != n {
                    return Err(Error::Shape("mode index dimension differs from tilt".into()));
                }
                Ok(FourierMode {
                    wave: m.index.iter().map(|&k| 2.0 * std::f64::consts::PI * k as f64 / torus).collect(),
                    cos: m.cos,
                    sin: m.sin,
                })
            })
            .collect::<Result<_>>()?;
        if self.offset != 0.0 {
            modes.push(FourierMode {
                wave: vec![0.0; n],
                cos: self.offset,
                sin: 0.0,
            });
        }
        InitialSurface::new(self.tilt.clone(), modes, s, Some(&vec![torus; n]))
    }
}

/// Deliberately inconsistent obstacles for negative controls: every obstacle
/// gets strength `fraction·F₁` and sites open at that strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakObstacles {
    pub fraction: f64,
}

/// Everything the barrier construction needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model: ModelParams,
    pub surface: SurfaceSpec,
    pub selection: SelectionOptions,
    /// Columns per torus axis.
    pub columns: usize,
    /// Grid nodes per torus axis.
    pub grid: usize,
    pub profile_points: usize,
    pub level_cap: Option<usize>,
    pub weak: Option<WeakObstacles>,
}

impl PipelineConfig {
    /// Desk-scale defaults: `n = 2`, `s = ½`, 16 × 16 columns on a 512² grid.
    pub fn desk_default() -> Self {
        Self {
            model: ModelParams {
                n: 2,
                s: 0.5,
                r0: 1.0,
                r1: 1.25 * 3f64.sqrt(),
                lambda: 3.0e4,
                strength_law: StrengthLaw::ShiftedExponential { min: 1.0, scale: 1.0 },
                rng_seed: 20240607,
            },
            surface: SurfaceSpec::flat(2),
            selection: SelectionOptions::new(0.5, 0.9),
            columns: 16,
            grid: 512,
            profile_points: 256,
            level_cap: None,
            weak: None,
        }
    }
}

/// Recipe with a torus-dependent surface: iterates `L = K(l + d)` until the
/// resolved surface and the ledger agree.
pub fn resolve_ledger(cfg: &PipelineConfig, reject: bool) -> Result<(GeometryLedger, InitialSurface)> {
    let n = cfg.model.n;
    let mut surf = cfg.surface.resolve(cfg.model.s, 1.0)?;
    if cfg.surface.modes.is_empty() {
        let ledger = run_recipe(cfg, &surf, reject)?;
        return Ok((ledger, surf));
    }
    // start from the gradient-free ledger
    let mut torus = {
        let flat = InitialSurface::new(cfg.surface.tilt.clone(), vec![], cfg.model.s, None)?;
        let l = compute_ledger(&cfg.model, &flat, &cfg.selection)?;
        cfg.columns as f64 * (l.l + l.d)
    };
    for _ in 0..50 {
        surf = cfg.surface.resolve(cfg.model.s, torus)?;
        if !(surf.grad_sup < 1.0) {
            return Err(Error::DegenerateSurface { grad_sup: surf.grad_sup });
        }
        let ledger = compute_ledger(&cfg.model, &surf, &cfg.selection)?;
        let next = cfg.columns as f64 * (ledger.l + ledger.d);
        if (next - torus).abs() <= 1e-12 * torus {
            let ledger = run_recipe(cfg, &surf, reject)?;
            return Ok((ledger, surf));
        }
        torus = next;
    }
    Err(Error::Rejected(format!(
        "torus size did not settle for the {n}-dimensional surface"
    )))
}

fn run_recipe(cfg: &PipelineConfig, surf: &InitialSurface, reject: bool) -> Result<GeometryLedger> {
    if reject {
        select_parameters(&cfg.model, surf, &cfg.selection)
    } else {
        compute_ledger(&cfg.model, surf, &cfg.selection)
    }
}

/// Nearest-column data at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub column: usize,
    pub distance: f64,
    /// Distance to the bisector with the second-nearest column.
    pub bisector: f64,
    /// Whether the two nearest local solutions have distinct gradients.
    pub kink: bool,
}

/// `u_flat(x) = min_a u_local(x − x_a)` on a torus of `K` columns per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatField {
    pub n: usize,
    pub profile: Option<RadialProfile>,
    pub centres: Vec<Vec<f64>>,
    pub period: f64,
    pub columns: usize,
}

impl FlatField {
    pub fn new(profile: RadialProfile, centres: Vec<Vec<f64>>, period: f64, columns: usize) -> Result<Self> {
        let n = profile.params.n;
        if centres.len() != columns.pow(n as u32) || centres.iter().any(|c| c.len() != n) {
            return Err(Error::Shape("one centre per torus column is required".into()));
        }
        if columns as f64 * period <= 2.0 * profile.problem.radius {
            return Err(Error::InvalidParameter(format!(
                "torus side {} must exceed 2R = {}",
                columns as f64 * period,
                2.0 * profile.problem.radius
            )));
        }
        Ok(Self {
            n,
            profile: Some(profile),
            centres,
            period,
            columns,
        })
    }

    /// `u_flat ≡ 0`.
    pub fn empty(n: usize, period: f64, columns: usize) -> Self {
        Self {
            n,
            profile: None,
            centres: Vec::new(),
            period,
            columns,
        }
    }

    pub fn torus(&self) -> f64 {
        self.period * self.columns as f64
    }

    fn wrap(&self, v: f64) -> f64 {
        let t = self.torus();
        v - t * (v / t).round()
    }

    /// Visits `(column, displacement)` for all columns whose centre may lie within `R`.
    fn for_each_candidate<F: FnMut(usize, &[f64])>(&self, x: &[f64], mut visit: F) {
        let Some(profile) = &self.profile else { return };
        let n = self.n;
        let k = self.columns as i64;
        let reach = ((profile.problem.radius + 0.5 * self.period) / self.period).ceil() as i64;
        let span = (2 * reach + 1).min(k);
        let lo = -(span / 2);
        let base: Vec<i64> = x.iter().map(|&v| (v / self.period).round() as i64).collect();
        let mut off = vec![0i64; n];
        let mut disp = vec![0.0; n];
        let total = (span as usize).pow(n as u32);
        for flat in 0..total {
            let mut rem = flat as i64;
            for ax in (0..n).rev() {
                off[ax] = lo + rem % span;
                rem /= span;
            }
            let mut col = 0usize;
            for ax in 0..n {
                let a = (base[ax] + off[ax]).rem_euclid(k);
                col = col * self.columns + a as usize;
            }
            let c = &self.centres[col];
            for ax in 0..n {
                disp[ax] = self.wrap(x[ax] - c[ax]);
            }
            visit(col, &disp);
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let Some(profile) = &self.profile else { return 0.0 };
        let mut best = 0.0f64;
        self.for_each_candidate(x, |_, d| {
            let r = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            best = best.min(profile.eval(r));
        });
        best
    }

    /// Nearest and second-nearest columns; `None` for the empty field.
    pub fn nearest(&self, x: &[f64]) -> Option<Nearest> {
        let profile = self.profile.as_ref()?;
        let mut first: Option<(usize, f64, Vec<f64>)> = None;
        let mut second: Option<(usize, f64, Vec<f64>)> = None;
        self.for_each_candidate(x, |col, d| {
            let r = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if first.as_ref().is_none_or(|f| r < f.1) {
                second = first.take();
                first = Some((col, r, d.to_vec()));
            } else if second.as_ref().is_none_or(|f| r < f.1) {
                second = Some((col, r, d.to_vec()));
            }
        });
        let (col, r1, d1) = first?;
        let (bisector, kink) = match second {
            Some((_, r2, d2)) => {
                let sep = d1.iter().zip(&d2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let bis = if sep > 0.0 { (r2 * r2 - r1 * r1) / (2.0 * sep) } else { 0.0 };
                let g = |r: f64, d: &[f64]| -> Vec<f64> {
                    let h = 1e-6 * profile.problem.radius;
                    let slope = (profile.eval(r + h) - profile.eval((r - h).max(0.0))) / (r + h - (r - h).max(0.0));
                    d.iter().map(|v| if r > 0.0 { slope * v / r } else { 0.0 }).collect()
                };
                let (ga, gb) = (g(r1, &d1), g(r2, &d2));
                let diff = ga.iter().zip(&gb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                (bis, diff > 1e-12)
            }
            None => (f64::INFINITY, true),
        };
        Some(Nearest {
            column: col,
            distance: r1,
            bisector,
            kink,
        })
    }
}

impl ScalarField for FlatField {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }
}

/// Pieces the certification needs; see [`SupersolutionBundle`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Barrier {
    pub flat: FlatField,
    pub u_flat: GridField,
    pub u_lift: GridField,
    /// `U` sampled with its tilt as the linear part.
    pub u_init: GridField,
    pub v: GridField,
    pub surface: InitialSurface,
    pub field: ObstacleField,
}

impl Barrier {
    pub fn assemble(flat: FlatField, u_lift: GridField, surface: InitialSurface, field: ObstacleField) -> Result<Self> {
        let g = &u_lift;
        let u_flat = GridField::from_fn(g.origin.clone(), g.spacing.clone(), g.shape.clone(), true, |x| flat.eval(x))?;
        let u_init = GridField::from_fn(g.origin.clone(), g.spacing.clone(), g.shape.clone(), true, |x| surface.residual(x))?
            .with_linear(surface.tilt.clone())?;
        let values: Vec<f64> = u_flat
            .values
            .iter()
            .zip(&u_lift.values)
            .zip(&u_init.values)
            .map(|((a, b), c)| a + b + c)
            .collect();
        let v = GridField::new(g.origin.clone(), g.spacing.clone(), g.shape.clone(), values, true)?
            .with_linear(surface.tilt.clone())?;
        Ok(Self {
            flat,
            u_flat,
            u_lift,
            u_init,
            v,
            surface,
            field,
        })
    }

    /// Largest `|v − (u_flat + u_lift + U)|` over the nodes.
    pub fn assembly_error(&self) -> f64 {
        let v = self.v.full_values();
        let parts = self.u_init.full_values();
        v.iter()
            .zip(&parts)
            .zip(self.u_flat.values.iter().zip(&self.u_lift.values))
            .map(|((vv, u), (a, b))| (vv - (a + b + u)).abs())
            .fold(0.0, f64::max)
    }
}

/// The assembled barrier with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupersolutionBundle {
    pub ledger: GeometryLedger,
    pub decomposition: Decomposition,
    pub lattice: LatticeSurface,
    pub heights: LatticeHeights,
    pub local_conditions: LocalConditionReport,
    pub depth: f64,
    pub levels: usize,
    pub barrier: Barrier,
    pub lift: LiftField,
}

/// Realisation of obstacles, percolation surface and heights for one seed.
struct Realisation {
    field: ObstacleField,
    lattice: LatticeSurface,
    heights: LatticeHeights,
    levels: usize,
}

fn realise(
    model: &ModelParams,
    ledger: &GeometryLedger,
    surf: &InitialSurface,
    dec: &Decomposition,
    columns: usize,
    level_cap: Option<usize>,
    weak: Option<WeakObstacles>,
    depth: f64,
) -> Result<Realisation> {
    let n = model.n;
    let period = dec.period();
    let mut model = model.clone();
    let mut threshold = ledger.strength;
    if let Some(w) = weak {
        let value = w.fraction * ledger.f1;
        model.strength_law = StrengthLaw::PointMass { value };
        threshold = value;
    }
    let window = LatticeWindow::new(vec![0; n], vec![columns; n], true)?;
    let mut levels = level_cap.unwrap_or_else(|| default_level_cap(ledger.open_probability));
    let mut last_err = None;
    for _ in 0..4 {
        let top = dec.level_bounds(levels).1;
        let sw = SampleWindow::new(period, vec![0; n], vec![columns; n], dec.r1, top)?;
        let field = sample_flattened(&model, &sw, surf)?.with_periodicity(surf.tilt.clone())?;
        let grid = build_site_grid(&field, dec, surf, threshold, &window, levels)?;
        match smallest_surface(&grid, ledger.alpha) {
            Ok(lattice) => {
                let heights = heights_from_surface(&lattice, dec, depth)?;
                return Ok(Realisation {
                    field,
                    lattice,
                    heights,
                    levels,
                });
            }
            Err(e @ Error::NoSurface { .. }) if level_cap.is_none() => {
                last_err = Some(e);
                levels *= 2;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("loop ran"))
}

/// Local solution for the ledger geometry.
pub fn ledger_profile(ledger: &GeometryLedger, model: &ModelParams, points: usize) -> Result<(RadialProfile, LocalConditionReport)> {
    let prob = BallProblem::from_ratio(ledger.radius, ledger.q, ledger.f1, ledger.f2)?;
    let kernel = GreenKernel::calibrated(model.frac())?;
    let profile = local_solution(&prob, &kernel, points)?;
    Ok((profile, check_local_conditions(&prob, &model.frac())))
}

/// Full construction: ledger, obstacles, percolation, lift and assembly.
pub fn build_bundle(cfg: &PipelineConfig) -> Result<SupersolutionBundle> {
    let (ledger, surf) = resolve_ledger(cfg, true)?;
    build_bundle_with(cfg, ledger, surf)
}

/// Construction with a given ledger and resolved surface.
pub fn build_bundle_with(cfg: &PipelineConfig, ledger: GeometryLedger, surf: InitialSurface) -> Result<SupersolutionBundle> {
    let n = cfg.model.n;
    let dec = Decomposition::new(n, ledger.l, ledger.d, ledger.h, ledger.r1)?;
    let (profile, local_conditions) = ledger_profile(&ledger, &cfg.model, cfg.profile_points)?;
    if !profile.is_negative() || !profile.is_monotone() {
        return Err(Error::Rejected(format!(
            "local solution is not negative and nondecreasing (worst decrease {:.3e})",
            profile.worst_decrease()
        )));
    }
    let depth = profile.depth();
    let real = realise(&cfg.model, &ledger, &surf, &dec, cfg.columns, cfg.level_cap, cfg.weak, depth)?;
    let centres: Vec<Vec<f64>> = real
        .lattice
        .witnesses
        .iter()
        .map(|w| w.as_ref().map(|w| w.x.clone()).expect("heights require witnesses"))
        .collect();
    let period = dec.period();
    let flat = FlatField::new(profile, centres, period, cfg.columns)?;
    let lift = mollified_lift(real.heights.clone());
    let torus = period * cfg.columns as f64;
    let m = cfg.grid;
    let origin = vec![-0.5 * period; n];
    let spacing = vec![torus / m as f64; n];
    let u_lift = lift.sample(origin, spacing, vec![m; n], true)?;
    let barrier = Barrier::assemble(flat, u_lift, surf, real.field)?;
    Ok(SupersolutionBundle {
        ledger,
        decomposition: dec,
        lattice: real.lattice,
        heights: real.heights,
        local_conditions,
        depth,
        levels: real.levels,
        barrier,
        lift,
    })
}

/// Residual at one node with its budget split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node: Vec<usize>,
    pub x: Vec<f64>,
    pub residual: f64,
    pub flat_term: f64,
    pub lift_term: f64,
    pub u_term: f64,
    pub force: f64,
    pub inside: bool,
}

/// Outcome of a certification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub f_star: f64,
    pub tolerance: f64,
    pub nodes: usize,
    pub inside_nodes: usize,
    pub exempt_nodes: usize,
    /// Exempt nodes where the two nearest local solutions share a gradient.
    pub touchable_exempt: usize,
    pub max_residual: f64,
    pub max_residual_all: f64,
    pub offender_count: usize,
    pub offenders: Vec<NodeReport>,
    pub max_lift_term: f64,
    pub max_u_term: f64,
    pub min_inside_force: f64,
    /// Spectral lift term: difference against the half-resolution grid.
    pub spectral_error: f64,
    pub min_gap: f64,
    pub v_above_u: bool,
    pub assembly_error: f64,
    pub pass: bool,
}

impl Certificate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `−(−Δ)^s` of the periodic lift on the grid and its half-resolution error.
fn lift_terms(u_lift: &GridField, s: f64) -> Result<(Vec<f64>, f64)> {
    let full = fraclap_periodic(u_lift, s, Symbol::Continuous)?;
    let n = u_lift.dim();
    let coarse_shape: Vec<usize> = u_lift.shape.iter().map(|&m| m / 2).collect();
    let mut error: f64 = 0.0;
    if coarse_shape.iter().all(|&m| m >= 8) && u_lift.shape.iter().all(|&m| m % 2 == 0) {
        let coarse_spacing: Vec<f64> = u_lift.spacing.iter().map(|h| 2.0 * h).collect();
        let total: usize = coarse_shape.iter().product();
        let mut vals = vec![0.0; total];
        let mut idx = vec![0usize; n];
        for (flat, v) in vals.iter_mut().enumerate() {
            let mut rem = flat;
            for ax in (0..n).rev() {
                idx[ax] = 2 * (rem % coarse_shape[ax]);
                rem /= coarse_shape[ax];
            }
            *v = u_lift.values[u_lift.flat_index(&idx)];
        }
        let coarse = GridField::new(u_lift.origin.clone(), coarse_spacing, coarse_shape.clone(), vals, true)?;
        let cl = fraclap_periodic(&coarse, s, Symbol::Continuous)?;
        for (flat, c) in cl.values.iter().enumerate() {
            let mut rem = flat;
            for ax in (0..n).rev() {
                idx[ax] = 2 * (rem % coarse_shape[ax]);
                rem /= coarse_shape[ax];
            }
            error = error.max((full.values[u_lift.flat_index(&idx)] - c).abs());
        }
    }
    Ok((full.values.iter().map(|v| -v).collect(), error))
}

/// Certifies `−(−Δ)^s v − f(x, v) + F* ≤ tolerance` at every non-exempt node.
///
/// The flat part uses the touching argument: inside the Voronoi cell of
/// `x_a`, `−(−Δ)^s u_flat ≤ −(−Δ)^s u_local(· − x_a)`, which equals `F₁` on
/// `B_{r₀}(x_a)` and `−F₂` on the rest of `B_R(x_a)`. The lift term is
/// spectral, the `U` term exact.
pub fn certify_barrier(barrier: &Barrier, s: f64, f1: f64, f2: f64, f_star: f64, tolerance: f64) -> Result<Certificate> {
    let grid = &barrier.v;
    let spacing = grid.spacing.iter().cloned().fold(0.0, f64::max);
    let (lift_term, spectral_error) = lift_terms(&barrier.u_lift, s)?;
    let r0 = barrier.flat.profile.as_ref().map(|p| p.problem.inner_radius);
    let radius = barrier.flat.profile.as_ref().map(|p| p.problem.radius);
    struct Row {
        report: NodeReport,
        exempt: bool,
        touchable: bool,
        gap: f64,
    }
    let rows: Vec<Row> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.node(i);
            let v = grid.node_value(i);
            let (flat_term, inside, exempt, touchable) = match barrier.flat.nearest(&x) {
                None => (0.0, false, false, false),
                Some(near) => {
                    if near.distance >= radius.unwrap_or(f64::INFINITY) {
                        return Err(Error::Coverage(format!("node {x:?} lies outside every ball B_R(x_a)")));
                    }
                    let inside = near.distance < r0.unwrap_or(0.0);
                    let exempt = near.bisector <= spacing;
                    (if inside { f1 } else { -f2 }, inside, exempt, exempt && !near.kink)
                }
            };
            let u_term = -barrier.surface.fraclap(&x);
            let force = barrier.field.force(&x, v);
            let residual = flat_term + lift_term[i] + u_term - force + f_star;
            Ok(Row {
                report: NodeReport {
                    node: grid.multi_index(i),
                    x,
                    residual,
                    flat_term,
                    lift_term: lift_term[i],
                    u_term,
                    force,
                    inside,
                },
                exempt,
                touchable,
                gap: barrier.u_flat.values[i] + barrier.u_lift.values[i],
            })
        })
        .collect::<Result<_>>()?;

    let mut offenders: Vec<NodeReport> = rows
        .iter()
        .filter(|r| !r.exempt && r.report.residual > tolerance)
        .map(|r| r.report.clone())
        .collect();
    let offender_count = offenders.len();
    offenders.sort_by(|a, b| b.residual.total_cmp(&a.residual));
    offenders.truncate(20);
    let max_residual = rows
        .iter()
        .filter(|r| !r.exempt)
        .map(|r| r.report.residual)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_residual_all = rows.iter().map(|r| r.report.residual).fold(f64::NEG_INFINITY, f64::max);
    let min_gap = rows.iter().map(|r| r.gap).fold(f64::INFINITY, f64::min);
    let spectral_ok = spectral_error < 0.1 * tolerance.max(f64::MIN_POSITIVE);
    let v_above_u = min_gap > 0.0;
    let assembly_error = barrier.assembly_error();
    Ok(Certificate {
        f_star,
        tolerance,
        nodes: rows.len(),
        inside_nodes: rows.iter().filter(|r| r.report.inside).count(),
        exempt_nodes: rows.iter().filter(|r| r.exempt).count(),
        touchable_exempt: rows.iter().filter(|r| r.touchable).count(),
        max_residual,
        max_residual_all,
        offender_count,
        offenders,
        max_lift_term: rows.iter().map(|r| r.report.lift_term).fold(f64::NEG_INFINITY, f64::max),
        max_u_term: rows.iter().map(|r| r.report.u_term).fold(f64::NEG_INFINITY, f64::max),
        min_inside_force: rows
            .iter()
            .filter(|r| r.report.inside)
            .map(|r| r.report.force)
            .fold(f64::INFINITY, f64::min),
        spectral_error,
        min_gap,
        v_above_u,
        assembly_error,
        pass: offender_count == 0 && v_above_u && spectral_ok && assembly_error <= 1e-12 * (1.0 + min_gap.abs()),
    })
}

/// Certifies a bundle; `tolerance` is absolute.
pub fn certify(bundle: &SupersolutionBundle, f_star: f64, tolerance: f64) -> Result<Certificate> {
    let l = &bundle.ledger;
    certify_barrier(&bundle.barrier, l.s, l.f1, l.f2, f_star, tolerance)
}

/// Distance of `v` from the obstacle centres at the witness positions.
pub fn containment(bundle: &SupersolutionBundle) -> f64 {
    bundle
        .lattice
        .witnesses
        .iter()
        .flatten()
        .map(|w| {
            let v = bundle.barrier.flat.eval(&w.x) + bundle.lift.eval(&w.x) + bundle.barrier.surface.value(&w.x);
            (v - w.y).abs()
        })
        .fold(0.0, f64::max)
}

/// Monte-Carlo statistics of `v(x) − U(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationReport {
    pub replicates: usize,
    pub points: Vec<Vec<f64>>,
    pub mean: f64,
    pub std_dev: f64,
    pub ci: (f64, f64),
    pub mean_levels: f64,
    /// `r₁ + E(y₀)·h + depth`, with `E(y₀)` the observed mean level.
    pub scale: f64,
    pub samples: Vec<f64>,
}

/// Repeats the realisation with independent seeds on a `columns`-wide torus
/// and records `v − U = u_flat + u_lift` at `points`.
pub fn expectation_report(
    cfg: &PipelineConfig,
    ledger: &GeometryLedger,
    surf: &InitialSurface,
    replicates: usize,
    points: &[Vec<f64>],
) -> Result<ExpectationReport> {
    if replicates < 2 {
        return Err(Error::InvalidParameter("at least two replicates are needed".into()));
    }
    let n = cfg.model.n;
    let dec = Decomposition::new(n, ledger.l, ledger.d, ledger.h, ledger.r1)?;
    let (profile, _) = ledger_profile(ledger, &cfg.model, cfg.profile_points)?;
    let depth = profile.depth();
    let per: Vec<Result<(Vec<f64>, f64)>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut model = cfg.model.clone();
            model.rng_seed = rand::Rng::gen(&mut stream_rng(cfg.model.rng_seed, "replicate", &[r as i64]));
            let real = realise(&model, ledger, surf, &dec, cfg.columns, cfg.level_cap, cfg.weak, depth)?;
            let centres: Vec<Vec<f64>> = real
                .lattice
                .witnesses
                .iter()
                .map(|w| w.as_ref().map(|w| w.x.clone()).expect("heights require witnesses"))
                .collect();
            let flat = FlatField::new(profile.clone(), centres, dec.period(), cfg.columns)?;
            let lift = mollified_lift(real.heights);
            let vals = points.iter().map(|x| flat.eval(x) + lift.eval(x)).collect();
            let mean_level = real.lattice.y.iter().sum::<usize>() as f64 / real.lattice.y.len() as f64;
            Ok((vals, mean_level))
        })
        .collect();
    let mut samples = Vec::new();
    let mut level_sum = 0.0;
    for r in per {
        let (vals, lv) = r?;
        samples.extend(vals);
        level_sum += lv;
    }
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    let sd = var.sqrt();
    let half = 1.959_963_984_540_054 * sd / m.sqrt();
    let mean_levels = level_sum / replicates as f64;
    Ok(ExpectationReport {
        replicates,
        points: points.to_vec(),
        mean,
        std_dev: sd,
        ci: (mean - half, mean + half),
        mean_levels,
        scale: ledger.r1 + mean_levels * ledger.h + depth,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::FracParams;

    fn small_profile() -> RadialProfile {
        let p = FracParams::new(2, 0.5).unwrap();
        let prob = BallProblem::from_ratio(3.0, 0.3, 1.0, 0.05).unwrap();
        let k = GreenKernel::calibrated(p).unwrap();
        local_solution(&prob, &k, 64).unwrap()
    }

    #[test]
    fn flat_field_single_and_symmetric() {
        let prof = small_profile();
        let centres: Vec<Vec<f64>> = (0..9).map(|i| vec![(i / 3) as f64 * 4.0, (i % 3) as f64 * 4.0]).collect();
        let flat = FlatField::new(prof.clone(), centres, 4.0, 3).unwrap();
        assert!((flat.eval(&[4.0, 4.0]) - prof.eval(0.0)).abs() < 1e-14);
        // equidistant between two centres
        let a = flat.eval(&[2.0, 4.0]);
        assert!((a - prof.eval(2.0)).abs() < 1e-14);
        let near = flat.nearest(&[2.0, 4.0]).unwrap();
        assert!(near.bisector.abs() < 1e-12 && near.kink);
        assert!(flat.eval(&[1.3, 0.2]) <= 0.0);
        // wraps around the torus
        assert!((flat.eval(&[11.9, 0.0]) - prof.eval(0.1)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_barrier_has_zero_residual() {
        let n = 2;
        let flat = FlatField::empty(n, 10.0, 3);
        let lift = GridField::zeros(vec![0.0; 2], vec![1.0; 2], vec![30, 30], true).unwrap();
        let sw = SampleWindow::new(10.0, vec![0, 0], vec![3, 3], 3.0, 4.0).unwrap();
        let bump = crate::obstacles::Bump::new(2, 1.0, 2.0);
        let field = ObstacleField::new(2, vec![], sw, bump).unwrap();
        let barrier = Barrier::assemble(flat, lift, InitialSurface::flat(2, 0.5), field).unwrap();
        let c = certify_barrier(&barrier, 0.5, 1.0, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(c.max_residual, 0.0);
        assert_eq!(c.offender_count, 0);
        assert!(!c.v_above_u);
    }
}
