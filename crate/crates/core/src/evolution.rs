//! Semi-implicit spectral solver for `∂ₜu = −(−Δ)^s u − f(x, u) + F` on a
//! periodic torus, the pinning experiment against a certified barrier and
//! the homogenization sweep at `s = ½`.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::obstacles::ObstacleField;
use crate::rng::stream_rng;
use crate::scaling::GeometryLedger;
use crate::spectral::{Spectral, Symbol};
use crate::supersolution::{build_bundle_with, resolve_ledger, PipelineConfig, SupersolutionBundle};

/// Time-stepping parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub s: f64,
    /// Driving force `F`.
    pub force: f64,
    pub horizon: f64,
    /// Fixed step; when absent the step is `min(dt_max, 0.1 / max|∂f/∂u|)`
    /// evaluated on the current state.
    pub dt: Option<f64>,
    pub dt_max: f64,
    pub symbol: Symbol,
    pub snapshot_times: Vec<f64>,
    pub blowup_bound: f64,
    pub barrier_tolerance: f64,
    /// Pinned when `max|u(t) − u(0.9t)| / (0.1t)` is below this rate.
    pub pinned_rate: f64,
    pub stop_when_pinned: bool,
}

impl EvolutionConfig {
    pub fn new(s: f64, force: f64, horizon: f64) -> Self {
        Self {
            s,
            force,
            horizon,
            dt: None,
            dt_max: 1.0,
            symbol: Symbol::Lattice,
            snapshot_times: Vec::new(),
            blowup_bound: 1e6,
            barrier_tolerance: 1e-3,
            pinned_rate: 1e-6,
            stop_when_pinned: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::InvalidParameter(format!("s = {} must lie in (0, 1)", self.s)));
        }
        if !(self.force >= 0.0) || !(self.horizon > 0.0) || !(self.dt_max > 0.0) {
            return Err(Error::InvalidParameter("need F ≥ 0, horizon > 0 and dt_max > 0".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
            }
        }
        if self.snapshot_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter("snapshot times must ascend".into()));
        }
        Ok(())
    }
}

/// Reusable stepping machinery for one grid.
pub struct Evolver<'a> {
    spectral: Spectral,
    symbol: Vec<f64>,
    nodes: Vec<Vec<f64>>,
    linear: Vec<f64>,
    field: Option<&'a ObstacleField>,
    force: f64,
    template: GridField,
}

impl<'a> Evolver<'a> {
    pub fn new(grid: &GridField, cfg: &EvolutionConfig, field: Option<&'a ObstacleField>) -> Result<Self> {
        cfg.validate()?;
        if !grid.periodic {
            return Err(Error::InvalidParameter("evolution needs a periodic grid".into()));
        }
        if grid.shape.iter().any(|m| !m.is_power_of_two()) {
            return Err(Error::InvalidParameter(format!(
                "grid shape {:?} must be powers of two",
                grid.shape
            )));
        }
        let spectral = Spectral::for_grid(grid);
        let symbol = spectral.symbol(cfg.s, cfg.symbol);
        let nodes: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.node(i)).collect();
        let linear: Vec<f64> = nodes
            .iter()
            .map(|x| grid.linear.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        let mut template = grid.clone();
        template.values = vec![0.0; grid.len()];
        Ok(Self {
            spectral,
            symbol,
            nodes,
            linear,
            field,
            force: cfg.force,
            template,
        })
    }

    /// `(f, ∂f/∂u)` at every node for the periodic part `w`.
    fn forcing(&self, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self.field {
            None => (vec![0.0; w.len()], vec![0.0; w.len()]),
            Some(field) => (0..w.len())
                .into_par_iter()
                .map(|i| field.force_and_du(&self.nodes[i], w[i] + self.linear[i]))
                .unzip(),
        }
    }

    /// Largest stable step for the state: `0.1 / max|∂f/∂u|`.
    pub fn stable_dt(&self, w: &[f64]) -> f64 {
        let (_, df) = self.forcing(w);
        let m = df.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if m > 0.0 {
            0.1 / m
        } else {
            f64::INFINITY
        }
    }

    /// One step of `(w' − w)/dt = −(−Δ)^s w' − f(x, u) + F`.
    pub fn step_values(&self, w: &[f64], dt: f64) -> Vec<f64> {
        let (f, _) = self.forcing(w);
        let mut buf: Vec<Complex64> = w
            .iter()
            .zip(&f)
            .map(|(&wi, &fi)| Complex64::new(wi + dt * (self.force - fi), 0.0))
            .collect();
        self.spectral.forward(&mut buf);
        buf.iter_mut()
            .zip(&self.symbol)
            .for_each(|(c, &sig)| *c /= 1.0 + dt * sig);
        self.spectral.inverse(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    pub fn to_field(&self, w: Vec<f64>) -> GridField {
        let mut g = self.template.clone();
        g.values = w;
        g
    }
}

/// One step from `state` with step `dt`.
pub fn step(state: &GridField, cfg: &EvolutionConfig, field: Option<&ObstacleField>, dt: f64) -> Result<GridField> {
    let ev = Evolver::new(state, cfg, field)?;
    let next = ev.step_values(&state.values, dt);
    let sup = next.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(sup <= cfg.blowup_bound) {
        return Err(Error::BlowUp {
            sup,
            bound: cfg.blowup_bound,
            step: 1,
        });
    }
    Ok(ev.to_field(next))
}

/// One row of the time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    /// `max |u − ν·x|`.
    pub sup: f64,
    pub mean: f64,
    /// `min (v − u)` when a barrier is present.
    pub barrier_gap: Option<f64>,
}

/// Evolution record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub snapshots: Vec<(f64, GridField)>,
    pub final_state: GridField,
    pub steps: usize,
    pub final_time: f64,
    pub pinned: bool,
    /// `max|u(t) − u(t₀)| / (t − t₀)` with `t₀` the last checkpoint before `0.9t`.
    pub trailing_rate: f64,
    pub max_barrier_excess: Option<f64>,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Trajectory {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,sup,mean,barrier_gap")?;
        for r in &self.rows {
            match r.barrier_gap {
                Some(g) => writeln!(out, "{:.12e},{:.12e},{:.12e},{:.12e}", r.t, r.sup, r.mean, g)?,
                None => writeln!(out, "{:.12e},{:.12e},{:.12e},", r.t, r.sup, r.mean)?,
            }
        }
        Ok(())
    }

    /// Least-squares slope of `sup` against `t` over the second half of the run.
    pub fn late_sup_slope(&self) -> (f64, f64) {
        let half = self.final_time * 0.5;
        let pts: Vec<(f64, f64)> = self.rows.iter().filter(|r| r.t >= half).map(|r| (r.t, r.sup)).collect();
        linear_fit(&pts)
    }
}

/// `(slope, r²)` of a least-squares line.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let m = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, r2)
}

const CHECKPOINTS: usize = 200;

/// Integrates from `u0` up to the horizon, or until pinned when requested.
pub fn evolve(cfg: &EvolutionConfig, field: Option<&ObstacleField>, u0: &GridField, barrier: Option<&GridField>) -> Result<Trajectory> {
    let ev = Evolver::new(u0, cfg, field)?;
    if let Some(v) = barrier {
        if !v.same_grid(u0) || v.linear != u0.linear {
            return Err(Error::Shape("barrier and state must share grid and tilt".into()));
        }
    }
    let mut w = u0.values.clone();
    let mut t = 0.0;
    let mut steps = 0usize;
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    let mut next_snap = 0usize;
    let mut checkpoints: Vec<(f64, Vec<f64>)> = vec![(0.0, w.clone())];
    let spacing = cfg.horizon / CHECKPOINTS as f64;
    let mut max_excess: Option<f64> = None;
    let mut dt_min = f64::INFINITY;
    let mut dt_used_max: f64 = 0.0;
    let mut trailing_rate = f64::INFINITY;

    let record = |t: f64, w: &[f64], rows: &mut Vec<TrajectoryRow>, max_excess: &mut Option<f64>, step: usize| -> Result<()> {
        let sup = w.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let gap = match barrier {
            Some(v) => {
                let (gap, idx) = v
                    .values
                    .iter()
                    .zip(w)
                    .enumerate()
                    .map(|(i, (a, b))| (a - b, i))
                    .fold((f64::INFINITY, 0), |acc, x| if x.0 < acc.0 { x } else { acc });
                let excess = -gap;
                *max_excess = Some(max_excess.map_or(excess, |m: f64| m.max(excess)));
                if excess > cfg.barrier_tolerance {
                    return Err(Error::BarrierViolation {
                        step,
                        excess,
                        node: v.multi_index(idx),
                    });
                }
                Some(gap)
            }
            None => None,
        };
        rows.push(TrajectoryRow {
            t,
            sup,
            mean,
            barrier_gap: gap,
        });
        Ok(())
    };
    record(0.0, &w, &mut rows, &mut max_excess, 0)?;
    while t < cfg.horizon * (1.0 - 1e-12) {
        let mut dt = match cfg.dt {
            Some(dt) => dt,
            None => ev.stable_dt(&w).min(cfg.dt_max),
        };
        dt = dt.min(cfg.horizon - t);
        while next_snap < cfg.snapshot_times.len() && cfg.snapshot_times[next_snap] <= t {
            snapshots.push((t, ev.to_field(w.clone())));
            next_snap += 1;
        }
        if next_snap < cfg.snapshot_times.len() && cfg.snapshot_times[next_snap] > t {
            dt = dt.min(cfg.snapshot_times[next_snap] - t);
        }
        w = ev.step_values(&w, dt);
        t += dt;
        steps += 1;
        dt_min = dt_min.min(dt);
        dt_used_max = dt_used_max.max(dt);
        let sup = w.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if !(sup <= cfg.blowup_bound) {
            return Err(Error::BlowUp {
                sup,
                bound: cfg.blowup_bound,
                step: steps,
            });
        }
        record(t, &w, &mut rows, &mut max_excess, steps)?;
        if t >= checkpoints.last().map_or(0.0, |c| c.0) + spacing {
            checkpoints.push((t, w.clone()));
        }
        // trailing window check
        if let Some((t0, w0)) = checkpoints.iter().rev().find(|c| c.0 <= 0.9 * t) {
            if t > *t0 {
                let inc = w.iter().zip(w0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                trailing_rate = inc / (t - t0);
                if cfg.stop_when_pinned && trailing_rate < cfg.pinned_rate && t >= 10.0 * spacing {
                    break;
                }
            }
        }
    }
    while next_snap < cfg.snapshot_times.len() {
        snapshots.push((t, ev.to_field(w.clone())));
        next_snap += 1;
    }
    Ok(Trajectory {
        rows,
        snapshots,
        final_state: ev.to_field(w),
        steps,
        final_time: t,
        pinned: trailing_rate < cfg.pinned_rate,
        trailing_rate,
        max_barrier_excess: max_excess,
        dt_min,
        dt_max: dt_used_max,
    })
}

/// Evolves from `u0 < v` with `F ≤ F*` and checks `u ≤ v + tolerance` at every step.
pub fn run_pinning_experiment(bundle: &SupersolutionBundle, cfg: &EvolutionConfig, u0: &GridField) -> Result<Trajectory> {
    let v = &bundle.barrier.v;
    if cfg.force > bundle.ledger.f_star {
        return Err(Error::InvalidParameter(format!(
            "F = {} exceeds F* = {}",
            cfg.force, bundle.ledger.f_star
        )));
    }
    if !v.same_grid(u0) {
        return Err(Error::Shape("initial state must live on the barrier grid".into()));
    }
    if let Some((i, _)) = u0.values.iter().zip(&v.values).enumerate().find(|(_, (a, b))| a >= b) {
        return Err(Error::InvalidParameter(format!(
            "initial state touches the barrier at node {:?}",
            v.multi_index(i)
        )));
    }
    evolve(cfg, Some(&bundle.barrier.field), u0, Some(v))
}

/// Sweep settings; the model is at unit scale and `u₀` lives on the
/// `base_columns`-wide torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizationConfig {
    pub pipeline: PipelineConfig,
    pub epsilons: Vec<f64>,
    pub replicates: usize,
    /// Physical horizon `T`.
    pub horizon: f64,
    /// Driving force as a fraction of `F*`.
    pub force_fraction: f64,
    /// Evolution grid nodes per column period.
    pub nodes_per_column: usize,
    /// Sample points per axis on the physical torus.
    pub samples_per_axis: usize,
    pub evolve: bool,
}

/// One point of the curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizationRow {
    pub epsilon: f64,
    pub columns: usize,
    /// `E[v^ε − u₀]` with a 95% normal interval.
    pub mean_gap: f64,
    pub gap_ci: (f64, f64),
    /// `E[(u^ε(T) − u₀)₊]`.
    pub mean_excess: Option<f64>,
    pub excess_ci: Option<(f64, f64)>,
    pub pinned_fraction: Option<f64>,
    pub grad_sup: f64,
    pub fraclap_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizationCurve {
    pub rows: Vec<HomogenizationRow>,
    /// Slope of `log E[v^ε − u₀]` against `log ε`.
    pub gap_slope: f64,
    pub ledger: GeometryLedger,
}

impl HomogenizationCurve {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epsilon,mean_gap,gap_ci_lo,gap_ci_hi,mean_excess,excess_ci_lo,excess_ci_hi,pinned_fraction")?;
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
            writeln!(
                out,
                "{:.6},{:.12e},{:.12e},{:.12e},{},{},{},{}",
                r.epsilon,
                r.mean_gap,
                r.gap_ci.0,
                r.gap_ci.1,
                opt(r.mean_excess),
                opt(r.excess_ci.map(|c| c.0)),
                opt(r.excess_ci.map(|c| c.1)),
                opt(r.pinned_fraction)
            )?;
        }
        Ok(())
    }
}

fn mean_ci(v: &[f64]) -> (f64, (f64, f64)) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    if v.len() < 2 {
        return (mean, (mean, mean));
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    let half = 1.959_963_984_540_054 * (var / m).sqrt();
    (mean, (mean - half, mean + half))
}

/// Unit-scale pipeline for `U^ε(X) = u₀(εX)/ε`. Only affine `u₀` is
/// accepted: then `U^ε` is periodic on the base torus and
/// `u^ε(t, x) = ε w(t/ε, x/ε)` holds exactly there.
pub fn rescaled_pipeline(cfg: &PipelineConfig, epsilon: f64) -> Result<PipelineConfig> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter(format!("ε = {epsilon} must lie in (0, 1]")));
    }
    if !cfg.surface.modes.is_empty() {
        return Err(Error::InvalidParameter(
            "the homogenization sweep needs an affine initial surface (tilt and offset only)".into(),
        ));
    }
    let mut out = cfg.clone();
    out.surface.offset /= epsilon;
    Ok(out)
}

/// Per-replicate sweep output for one `ε`.
struct ReplicateSweep {
    gaps: Vec<f64>,
    excess: Option<(Vec<f64>, bool)>,
}

/// For each `ε`: rescale, build the barrier at unit scale on the base torus,
/// map it back and optionally evolve to `T/ε`. Replicate `r` uses the same
/// seed at every `ε`, so one quenched realisation serves the whole curve.
pub fn homogenization_sweep(cfg: &HomogenizationConfig) -> Result<HomogenizationCurve> {
    let s = cfg.pipeline.model.s;
    if (s - 0.5).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "homogenization is implemented for s = 1/2 only (got s = {s})"
        )));
    }
    if cfg.epsilons.is_empty() || cfg.replicates == 0 || cfg.samples_per_axis == 0 {
        return Err(Error::InvalidParameter("need at least one ε, replicate and sample".into()));
    }
    let n = cfg.pipeline.model.n;
    let (base_ledger, _) = resolve_ledger(&cfg.pipeline, true)?;
    let period = base_ledger.l + base_ledger.d;
    let torus = cfg.pipeline.columns as f64 * period;
    let m = cfg.samples_per_axis;
    let points: Vec<Vec<f64>> = (0..m.pow(n as u32))
        .map(|mut flat| {
            let mut x = vec![0.0; n];
            for xi in x.iter_mut().rev() {
                *xi = torus * ((flat % m) as f64 + 0.5) / m as f64;
                flat /= m;
            }
            x
        })
        .collect();
    let seeds: Vec<u64> = (0..cfg.replicates)
        .map(|r| rand::Rng::gen(&mut stream_rng(cfg.pipeline.model.rng_seed, "homogenization", &[r as i64])))
        .collect();
    let mut rows = Vec::new();
    for &eps in &cfg.epsilons {
        let pc = rescaled_pipeline(&cfg.pipeline, eps)?;
        let (ledger, surf) = resolve_ledger(&pc, true)
            .map_err(|e| Error::Rejected(format!("ε = {eps}: {e}")))?;
        let per_rep: Vec<Result<ReplicateSweep>> = seeds
            .par_iter()
            .map(|&seed| {
                let mut rc = pc.clone();
                rc.model.rng_seed = seed;
                rc.grid = (pc.columns * cfg.nodes_per_column).next_power_of_two();
                let bundle = build_bundle_with(&rc, ledger.clone(), surf.clone())?;
                let unit: Vec<Vec<f64>> = points.iter().map(|x| x.iter().map(|v| v / eps).collect()).collect();
                let gaps = unit
                    .iter()
                    .map(|xu| eps * (bundle.barrier.flat.eval(xu) + bundle.lift.eval(xu)))
                    .collect();
                let excess = if cfg.evolve {
                    let mut ec = EvolutionConfig::new(s, cfg.force_fraction * ledger.f_star, cfg.horizon / eps);
                    ec.stop_when_pinned = true;
                    ec.dt_max = 5.0;
                    let traj = evolve(&ec, Some(&bundle.barrier.field), &bundle.barrier.u_init, None)?;
                    let fin = &traj.final_state;
                    let ex = unit
                        .iter()
                        .map(|xu| eps * (fin.interpolate(xu) - surf.value(xu)).max(0.0))
                        .collect();
                    Some((ex, traj.pinned))
                } else {
                    None
                };
                Ok(ReplicateSweep { gaps, excess })
            })
            .collect();
        let mut gaps = Vec::new();
        let mut excess = Vec::new();
        let mut pinned = 0usize;
        for r in per_rep {
            let r = r?;
            gaps.extend(r.gaps);
            if let Some((e, p)) = r.excess {
                excess.extend(e);
                pinned += p as usize;
            }
        }
        let (mean_gap, gap_ci) = mean_ci(&gaps);
        let (mean_excess, excess_ci) = if cfg.evolve {
            let (a, b) = mean_ci(&excess);
            (Some(a), Some(b))
        } else {
            (None, None)
        };
        rows.push(HomogenizationRow {
            epsilon: eps,
            columns: pc.columns,
            mean_gap,
            gap_ci,
            mean_excess,
            excess_ci,
            pinned_fraction: cfg.evolve.then(|| pinned as f64 / cfg.replicates as f64),
            grad_sup: surf.grad_sup,
            fraclap_sup: surf.fraclap_sup,
        });
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.epsilon.ln(), r.mean_gap.ln())).collect();
    let (gap_slope, _) = linear_fit(&pts);
    Ok(HomogenizationCurve {
        rows,
        gap_slope,
        ledger: base_ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(m: usize, len: f64) -> GridField {
        GridField::zeros(vec![0.0, 0.0], vec![len / m as f64; 2], vec![m, m], true).unwrap()
    }

    #[test]
    fn single_mode_decays_by_the_multiplier() {
        let len = 10.0;
        let k = 2.0 * PI * 3.0 / len;
        let mut g = grid(32, len);
        for i in 0..g.len() {
            let x = g.node(i);
            g.values[i] = (k * x[0]).cos();
        }
        let mut cfg = EvolutionConfig::new(0.4, 0.0, 1.0);
        cfg.symbol = Symbol::Continuous;
        let dt = 0.05;
        let out = step(&g, &cfg, None, dt).unwrap();
        let factor = 1.0 / (1.0 + dt * k.powf(0.8));
        for i in [0, 17, 500] {
            assert!((out.values[i] - factor * g.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_force_moves_mean_exactly() {
        let g = grid(16, 4.0);
        let mut cfg = EvolutionConfig::new(0.5, 0.3, 2.0);
        cfg.dt = Some(0.1);
        let tr = evolve(&cfg, None, &g, None).unwrap();
        assert!(tr.final_state.values.iter().all(|v| (v - 0.6).abs() < 1e-12));
        assert_eq!(tr.steps, 20);
    }

    #[test]
    fn rejects_non_power_of_two() {
        let g = GridField::zeros(vec![0.0], vec![1.0], vec![12], true).unwrap();
        assert!(Evolver::new(&g, &EvolutionConfig::new(0.5, 0.0, 1.0), None).is_err());
    }
}
