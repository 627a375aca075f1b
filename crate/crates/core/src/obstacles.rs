//! Random obstacle fields, the lattice decomposition of the base space and
//! the graph transform `𝒰(x, y) = (x, y + U(x))`.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::FracParams;
use crate::rng::stream_rng;

/// Law of the obstacle strengths `fᵢ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "family", rename_all = "snake_case")]
pub enum StrengthLaw {
    /// `min + Exp(1/scale)`.
    ShiftedExponential { min: f64, scale: f64 },
    /// Every obstacle has the same strength.
    PointMass { value: f64 },
}

impl StrengthLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StrengthLaw::ShiftedExponential { min, scale } => {
                min > 0.0 && min.is_finite() && scale > 0.0 && scale.is_finite()
            }
            StrengthLaw::PointMass { value } => value > 0.0 && value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "strength law {self:?} must be strictly positive"
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            StrengthLaw::ShiftedExponential { min, scale } => {
                min + Exp::new(1.0 / scale).unwrap().sample(rng)
            }
            StrengthLaw::PointMass { value } => value,
        }
    }

    /// `μ_S = P(f₀ ≥ S)`.
    pub fn survival(&self, strength: f64) -> f64 {
        match *self {
            StrengthLaw::ShiftedExponential { min, scale } => {
                if strength <= min {
                    1.0
                } else {
                    (-(strength - min) / scale).exp()
                }
            }
            StrengthLaw::PointMass { value } => {
                if strength <= value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Largest strength `S` with `μ_S = 1` and a natural upper end for searches.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            StrengthLaw::ShiftedExponential { min, scale } => (min, min + 40.0 * scale),
            StrengthLaw::PointMass { value } => (value, value),
        }
    }
}

/// Physical and stochastic inputs of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub n: usize,
    pub s: f64,
    pub r0: f64,
    pub r1: f64,
    pub lambda: f64,
    pub strength_law: StrengthLaw,
    pub rng_seed: u64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        FracParams::new(self.n, self.s)?;
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return Err(Error::InvalidParameter(format!("r0 = {} must be positive", self.r0)));
        }
        let plateau = ((self.n + 1) as f64).sqrt() * self.r0;
        if !(self.r1 > plateau && self.r1.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "r1 = {} must exceed √(n+1)·r0 = {plateau} so the radial bump covers the full-strength cube",
                self.r1
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda = {} must be positive",
                self.lambda
            )));
        }
        self.strength_law.validate()
    }

    pub fn frac(&self) -> FracParams {
        FracParams {
            n: self.n,
            s: self.s,
        }
    }

    pub fn bump(&self) -> Bump {
        Bump::new(self.n, self.r0, self.r1)
    }
}

fn smooth_step_part(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

fn smooth_step_part_deriv(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp() / (x * x)
    }
}

/// Radial plateau bump in `ℝⁿ⁺¹`: equal to 1 for `|z| ≤ √(n+1)·r₀` (hence on
/// the ∞-ball of radius `r₀`), zero for `|z| ≥ r₁`, C^∞ in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub r0: f64,
    pub r1: f64,
    pub plateau: f64,
    lipschitz: f64,
}

impl Bump {
    pub fn new(n: usize, r0: f64, r1: f64) -> Self {
        let plateau = ((n + 1) as f64).sqrt() * r0;
        let mut b = Self {
            r0,
            r1,
            plateau,
            lipschitz: 0.0,
        };
        let m = 4000;
        b.lipschitz = (0..=m)
            .map(|i| {
                let t = plateau + (r1 - plateau) * i as f64 / m as f64;
                b.profile_deriv(t).abs()
            })
            .fold(0.0, f64::max)
            * 1.01;
        b
    }

    /// `ψ(t)` for `t = |z|`.
    pub fn profile(&self, t: f64) -> f64 {
        if t <= self.plateau {
            return 1.0;
        }
        if t >= self.r1 {
            return 0.0;
        }
        let a = smooth_step_part(self.r1 - t);
        let b = smooth_step_part(t - self.plateau);
        a / (a + b)
    }

    pub fn profile_deriv(&self, t: f64) -> f64 {
        if t <= self.plateau || t >= self.r1 {
            return 0.0;
        }
        let a = smooth_step_part(self.r1 - t);
        let b = smooth_step_part(t - self.plateau);
        let da = -smooth_step_part_deriv(self.r1 - t);
        let db = smooth_step_part_deriv(t - self.plateau);
        (da * b - a * db) / ((a + b) * (a + b))
    }

    /// Upper bound on `|ψ'|`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn value(&self, dx: &[f64], dy: f64) -> f64 {
        let t2: f64 = dx.iter().map(|v| v * v).sum::<f64>() + dy * dy;
        if t2 >= self.r1 * self.r1 {
            0.0
        } else {
            self.profile(t2.sqrt())
        }
    }

    /// Gradient in `(dx, dy)`; the last entry is the `dy` component.
    pub fn gradient(&self, dx: &[f64], dy: f64) -> Vec<f64> {
        let t2: f64 = dx.iter().map(|v| v * v).sum::<f64>() + dy * dy;
        let t = t2.sqrt();
        let mut g: Vec<f64> = dx.iter().copied().chain(std::iter::once(dy)).collect();
        let scale = if t > 0.0 { self.profile_deriv(t) / t } else { 0.0 };
        g.iter_mut().for_each(|v| *v *= scale);
        g
    }
}

/// `φ(dx, dy)` for the model's bump.
pub fn bump_phi(dx: &[f64], dy: f64, params: &ModelParams) -> f64 {
    params.bump().value(dx, dy)
}

/// One obstacle in physical coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub x: Vec<f64>,
    pub y: f64,
    pub strength: f64,
}

/// Sampling region: cells `k` cover `[(k − ½)c, (k + ½)c]` per axis, times the
/// height interval `[y_lo, y_hi]`. Each cell draws from its own keyed stream,
/// so windows sharing cells share obstacles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWindow {
    pub cell: f64,
    pub first: Vec<i64>,
    pub counts: Vec<usize>,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl SampleWindow {
    pub fn new(cell: f64, first: Vec<i64>, counts: Vec<usize>, y_lo: f64, y_hi: f64) -> Result<Self> {
        if !(cell > 0.0) || first.len() != counts.len() || !(y_hi > y_lo) {
            return Err(Error::InvalidParameter(
                "sample window needs cell > 0, matching index dims and y_hi > y_lo".into(),
            ));
        }
        Ok(Self {
            cell,
            first,
            counts,
            y_lo,
            y_hi,
        })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.first.iter().map(|&k| (k as f64 - 0.5) * self.cell).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.first
            .iter()
            .zip(&self.counts)
            .map(|(&k, &c)| (k as f64 + c as f64 - 0.5) * self.cell)
            .collect()
    }

    pub fn extent(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 * self.cell).collect()
    }

    pub fn volume(&self) -> f64 {
        self.extent().iter().product::<f64>() * (self.y_hi - self.y_lo)
    }

    /// Absolute indices of all cells in lexicographic order.
    pub fn cells(&self) -> Vec<Vec<i64>> {
        let total: usize = self.counts.iter().product();
        (0..total)
            .map(|mut flat| {
                let mut idx = vec![0i64; self.dim()];
                for ax in (0..self.dim()).rev() {
                    idx[ax] = self.first[ax] + (flat % self.counts[ax]) as i64;
                    flat /= self.counts[ax];
                }
                idx
            })
            .collect()
    }
}

/// Periodic extension of a field on the box of a [`SampleWindow`]: the image
/// of an obstacle shifted by `m·L` in `x` is raised by `ν·(m·L)` in `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Periodicity {
    pub period: Vec<f64>,
    pub tilt: Vec<f64>,
}

/// Realised obstacles with a bucket index for force queries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObstacleField {
    pub n: usize,
    pub obstacles: Vec<Obstacle>,
    pub window: SampleWindow,
    pub bump: Bump,
    pub periodicity: Option<Periodicity>,
    #[serde(skip)]
    index: OnceLock<BucketIndex>,
}

#[derive(Debug, Clone)]
struct BucketIndex {
    lo: Vec<f64>,
    width: Vec<f64>,
    counts: Vec<usize>,
    buckets: Vec<Vec<usize>>,
}

impl BucketIndex {
    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.counts)
            .fold(0, |acc, (&i, &c)| acc * c + i)
    }

    fn locate(&self, x: &[f64]) -> Vec<i64> {
        x.iter()
            .zip(&self.lo)
            .zip(&self.width)
            .map(|((&v, &lo), &w)| ((v - lo) / w).floor() as i64)
            .collect()
    }
}

impl ObstacleField {
    pub fn new(n: usize, obstacles: Vec<Obstacle>, window: SampleWindow, bump: Bump) -> Result<Self> {
        if window.dim() != n || obstacles.iter().any(|o| o.x.len() != n) {
            return Err(Error::Shape(format!("obstacle coordinates must have dimension {n}")));
        }
        if obstacles.iter().any(|o| !(o.strength > 0.0)) {
            return Err(Error::InvalidParameter("obstacle strengths must be positive".into()));
        }
        Ok(Self {
            n,
            obstacles,
            window,
            bump,
            periodicity: None,
            index: OnceLock::new(),
        })
    }

    /// Makes the field periodic on the window box with the given tilt.
    pub fn with_periodicity(mut self, tilt: Vec<f64>) -> Result<Self> {
        if tilt.len() != self.n {
            return Err(Error::Shape("tilt dimension mismatch".into()));
        }
        let period = self.window.extent();
        if period.iter().any(|&p| p <= 2.0 * self.bump.r1) {
            return Err(Error::InvalidParameter(
                "periodic window must be wider than the obstacle support".into(),
            ));
        }
        self.periodicity = Some(Periodicity { period, tilt });
        self.index = OnceLock::new();
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.obstacles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }

    fn index(&self) -> &BucketIndex {
        self.index.get_or_init(|| {
            let lo = self.window.lower();
            let ext = self.window.extent();
            let counts: Vec<usize> = ext
                .iter()
                .map(|&e| {
                    let c = (e / self.bump.r1).floor() as usize;
                    // periodic wrap needs three distinct neighbours per axis
                    if self.periodicity.is_some() && c < 3 {
                        1
                    } else {
                        c.max(1)
                    }
                })
                .collect();
            let width: Vec<f64> = ext.iter().zip(&counts).map(|(&e, &c)| e / c as f64).collect();
            let mut idx = BucketIndex {
                lo,
                width,
                counts,
                buckets: Vec::new(),
            };
            idx.buckets = vec![Vec::new(); idx.counts.iter().product()];
            for (i, o) in self.obstacles.iter().enumerate() {
                let b: Vec<usize> = idx
                    .locate(&self.reduce(&o.x, 0.0).0)
                    .iter()
                    .zip(&idx.counts)
                    .map(|(&k, &c)| k.clamp(0, c as i64 - 1) as usize)
                    .collect();
                let f = idx.flat(&b);
                idx.buckets[f].push(i);
            }
            idx
        })
    }

    /// Maps a query into the fundamental box when periodic, shifting the
    /// height by the tilt so the pair is an image of the original.
    fn reduce(&self, x: &[f64], u: f64) -> (Vec<f64>, f64) {
        match &self.periodicity {
            None => (x.to_vec(), u),
            Some(per) => {
                let lo = self.window.lower();
                let mut xr = x.to_vec();
                let mut ur = u;
                for ax in 0..self.n {
                    let m = ((x[ax] - lo[ax]) / per.period[ax]).floor();
                    xr[ax] -= m * per.period[ax];
                    ur -= per.tilt[ax] * m * per.period[ax];
                }
                (xr, ur)
            }
        }
    }

    /// Displacement from obstacle `o` to `(x, u)`, using the nearest periodic image.
    fn displacement(&self, o: &Obstacle, x: &[f64], u: f64, dx: &mut [f64]) -> f64 {
        let mut dy = u - o.y;
        for ax in 0..self.n {
            dx[ax] = x[ax] - o.x[ax];
            if let Some(per) = &self.periodicity {
                let m = (dx[ax] / per.period[ax]).round();
                dx[ax] -= m * per.period[ax];
                dy -= per.tilt[ax] * m * per.period[ax];
            }
        }
        dy
    }

    fn for_each_candidate<F: FnMut(&Obstacle)>(&self, x: &[f64], mut visit: F) {
        let idx = self.index();
        let centre = idx.locate(x);
        let n = self.n;
        let periodic = self.periodicity.is_some();
        let mut offset = vec![-1i64; n];
        loop {
            let mut cell = Vec::with_capacity(n);
            let mut valid = true;
            for ax in 0..n {
                let c = idx.counts[ax] as i64;
                let mut k = centre[ax] + offset[ax];
                if periodic {
                    if c == 1 && offset[ax] != 0 {
                        valid = false;
                    }
                    k = k.rem_euclid(c);
                } else if k < 0 || k >= c {
                    valid = false;
                }
                cell.push(k as usize);
            }
            if valid {
                for &i in &idx.buckets[idx.flat(&cell)] {
                    visit(&self.obstacles[i]);
                }
            }
            let mut ax = 0;
            loop {
                if ax == n {
                    return;
                }
                offset[ax] += 1;
                if offset[ax] <= 1 {
                    break;
                }
                offset[ax] = -1;
                ax += 1;
            }
        }
    }

    /// `f(x, u) = Σ fᵢ φ(x − xᵢ, u − yᵢ)`.
    pub fn force(&self, x: &[f64], u: f64) -> f64 {
        self.force_and_du(x, u).0
    }

    /// Force and its derivative in `u`.
    pub fn force_and_du(&self, x: &[f64], u: f64) -> (f64, f64) {
        let (xr, ur) = self.reduce(x, u);
        let r1sq = self.bump.r1 * self.bump.r1;
        let mut dx = vec![0.0; self.n];
        let mut f = 0.0;
        let mut df = 0.0;
        self.for_each_candidate(&xr, |o| {
            let dy = self.displacement(o, &xr, ur, &mut dx);
            let t2: f64 = dx.iter().map(|v| v * v).sum::<f64>() + dy * dy;
            if t2 < r1sq {
                let t = t2.sqrt();
                f += o.strength * self.bump.profile(t);
                if t > 0.0 {
                    df += o.strength * self.bump.profile_deriv(t) * dy / t;
                }
            }
        });
        (f, df)
    }

    /// Full scan over all obstacles (and all adjacent periodic images).
    pub fn force_naive(&self, x: &[f64], u: f64) -> f64 {
        let mut total = 0.0;
        let shifts: Vec<Vec<i64>> = match &self.periodicity {
            None => vec![vec![0; self.n]],
            Some(_) => {
                let mut all = vec![vec![]];
                for _ in 0..self.n {
                    all = all
                        .into_iter()
                        .flat_map(|v: Vec<i64>| {
                            (-2..=2).map(move |m| {
                                let mut w = v.clone();
                                w.push(m);
                                w
                            })
                        })
                        .collect();
                }
                all
            }
        };
        let (xr, ur) = self.reduce(x, u);
        for o in &self.obstacles {
            for m in &shifts {
                let mut dy = ur - o.y;
                let dx: Vec<f64> = (0..self.n)
                    .map(|ax| {
                        let shift = match &self.periodicity {
                            Some(per) => {
                                dy -= per.tilt[ax] * m[ax] as f64 * per.period[ax];
                                m[ax] as f64 * per.period[ax]
                            }
                            None => 0.0,
                        };
                        xr[ax] - o.x[ax] - shift
                    })
                    .collect();
                total += o.strength * self.bump.value(&dx, dy);
            }
        }
        total
    }

    /// Upper bound on `|∂f/∂u|` over all queries.
    pub fn force_du_bound(&self) -> f64 {
        let idx = self.index();
        let mut worst: f64 = 0.0;
        let total: usize = idx.counts.iter().product();
        for flat in 0..total {
            let mut cell = vec![0usize; self.n];
            let mut rem = flat;
            for ax in (0..self.n).rev() {
                cell[ax] = rem % idx.counts[ax];
                rem /= idx.counts[ax];
            }
            let centre: Vec<f64> = (0..self.n)
                .map(|ax| idx.lo[ax] + (cell[ax] as f64 + 0.5) * idx.width[ax])
                .collect();
            let mut sum = 0.0;
            self.for_each_candidate(&centre, |o| sum += o.strength);
            worst = worst.max(sum);
        }
        worst * self.bump.lipschitz()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Samples a Poisson field of intensity `λ` on the window, with `U ≡ 0`.
pub fn sample_field(params: &ModelParams, window: &SampleWindow) -> Result<ObstacleField> {
    sample_with(params, window, None)
}

/// Samples in flattened coordinates `(x, y − U(x))` and maps the points
/// forward by `𝒰`; points landing below `r₁` are dropped. The shear is
/// volume preserving, so the result is a Poisson field on the image region.
pub fn sample_flattened(params: &ModelParams, window: &SampleWindow, surf: &InitialSurface) -> Result<ObstacleField> {
    sample_with(params, window, Some(surf))
}

fn sample_with(params: &ModelParams, window: &SampleWindow, surf: Option<&InitialSurface>) -> Result<ObstacleField> {
    params.validate()?;
    if window.dim() != params.n {
        return Err(Error::Shape("window dimension must equal n".into()));
    }
    if surf.is_none() && window.y_lo < params.r1 {
        return Err(Error::InvalidParameter(format!(
            "obstacle heights start at r1 = {}, window starts at {}",
            params.r1, window.y_lo
        )));
    }
    let cell_volume = window.cell.powi(params.n as i32) * (window.y_hi - window.y_lo);
    let mean = params.lambda * cell_volume;
    let mut obstacles = Vec::new();
    for cell in window.cells() {
        let mut rng = stream_rng(params.rng_seed, "obstacles", &cell);
        let count = if mean > 0.0 {
            Poisson::new(mean)
                .map_err(|e| Error::InvalidParameter(format!("Poisson mean {mean}: {e}")))?
                .sample(&mut rng) as usize
        } else {
            0
        };
        for _ in 0..count {
            let x: Vec<f64> = cell
                .iter()
                .map(|&k| (k as f64 - 0.5 + rng.gen::<f64>()) * window.cell)
                .collect();
            let y_flat = window.y_lo + (window.y_hi - window.y_lo) * rng.gen::<f64>();
            let strength = params.strength_law.sample(&mut rng);
            let y = match surf {
                Some(u) => y_flat + u.value(&x),
                None => y_flat,
            };
            if y >= params.r1 {
                obstacles.push(Obstacle { x, y, strength });
            }
        }
    }
    ObstacleField::new(params.n, obstacles, window.clone(), params.bump())
}

/// One Fourier mode `c·cos(k·x) + d·sin(k·x)` of the residual `r(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierMode {
    pub wave: Vec<f64>,
    pub cos: f64,
    pub sin: f64,
}

/// Initial interface `U(x) = ν·x + r(x)` with a finite Fourier residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSurface {
    pub tilt: Vec<f64>,
    pub modes: Vec<FourierMode>,
    pub s: f64,
    pub grad_sup: f64,
    pub fraclap_sup: f64,
}

impl InitialSurface {
    /// Builds the surface and its sup-norms. With `period` given, the norms
    /// are sampled on a 256-per-axis grid over one period and inflated by 1%
    /// (never above the triangle-inequality bound); otherwise the triangle
    /// bound is used.
    pub fn new(tilt: Vec<f64>, modes: Vec<FourierMode>, s: f64, period: Option<&[f64]>) -> Result<Self> {
        let n = tilt.len();
        if n == 0 || modes.iter().any(|m| m.wave.len() != n) {
            return Err(Error::Shape("mode wave vectors must match the tilt dimension".into()));
        }
        let mut surf = Self {
            tilt,
            modes,
            s,
            grad_sup: 0.0,
            fraclap_sup: 0.0,
        };
        let tilt_norm = surf.tilt.iter().map(|v| v * v).sum::<f64>().sqrt();
        let grad_bound = tilt_norm
            + surf
                .modes
                .iter()
                .map(|m| crate::kernels::norm(&m.wave) * m.cos.hypot(m.sin))
                .sum::<f64>();
        let lap_bound: f64 = surf
            .modes
            .iter()
            .map(|m| crate::kernels::norm(&m.wave).powf(2.0 * s) * m.cos.hypot(m.sin))
            .sum();
        match period {
            Some(per) if !surf.modes.is_empty() => {
                if per.len() != n {
                    return Err(Error::Shape("period dimension mismatch".into()));
                }
                let m: usize = if n <= 2 { 256 } else { 48 };
                let total = m.pow(n as u32);
                let mut gmax: f64 = 0.0;
                let mut lmax: f64 = 0.0;
                let mut x = vec![0.0; n];
                for flat in 0..total {
                    let mut rem = flat;
                    for ax in 0..n {
                        x[ax] = per[ax] * (rem % m) as f64 / m as f64;
                        rem /= m;
                    }
                    gmax = gmax.max(crate::kernels::norm(&surf.gradient(&x)));
                    lmax = lmax.max(surf.fraclap(&x).abs());
                }
                surf.grad_sup = (1.01 * gmax).min(grad_bound);
                surf.fraclap_sup = (1.01 * lmax).min(lap_bound);
            }
            _ => {
                surf.grad_sup = grad_bound;
                surf.fraclap_sup = lap_bound;
            }
        }
        Ok(surf)
    }

    pub fn flat(n: usize, s: f64) -> Self {
        Self {
            tilt: vec![0.0; n],
            modes: Vec::new(),
            s,
            grad_sup: 0.0,
            fraclap_sup: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.tilt.len()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.tilt.iter().zip(x).map(|(a, b)| a * b).sum();
        lin + self.residual(x)
    }

    /// Periodic part `r(x)`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let ph: f64 = m.wave.iter().zip(x).map(|(k, v)| k * v).sum();
                m.cos * ph.cos() + m.sin * ph.sin()
            })
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.tilt.clone();
        for m in &self.modes {
            let ph: f64 = m.wave.iter().zip(x).map(|(k, v)| k * v).sum();
            let c = -m.cos * ph.sin() + m.sin * ph.cos();
            for (gi, ki) in g.iter_mut().zip(&m.wave) {
                *gi += c * ki;
            }
        }
        g
    }

    /// `(−Δ)^s U(x)`; the affine part contributes nothing.
    pub fn fraclap(&self, x: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let ph: f64 = m.wave.iter().zip(x).map(|(k, v)| k * v).sum();
                crate::kernels::norm(&m.wave).powf(2.0 * self.s) * (m.cos * ph.cos() + m.sin * ph.sin())
            })
            .sum()
    }

    /// Same surface with the residual scaled by `factor`.
    pub fn scaled_residual(&self, factor: f64, period: Option<&[f64]>) -> Result<Self> {
        let modes = self
            .modes
            .iter()
            .map(|m| FourierMode {
                wave: m.wave.clone(),
                cos: m.cos * factor,
                sin: m.sin * factor,
            })
            .collect();
        Self::new(self.tilt.clone(), modes, self.s, period)
    }
}

/// `𝒰(x, y) = (x, y + U(x))`, or its inverse.
pub fn transform_u(x: &[f64], y: f64, surf: &InitialSurface, inverse: bool) -> (Vec<f64>, f64) {
    let shift = surf.value(x);
    (x.to_vec(), if inverse { y - shift } else { y + shift })
}

/// `η₀ = (1 − ‖∇U‖∞)·r₀`.
pub fn admissible_height_margin(surf: &InitialSurface, params: &ModelParams) -> Result<f64> {
    if !(surf.grad_sup < 1.0) {
        return Err(Error::DegenerateSurface {
            grad_sup: surf.grad_sup,
        });
    }
    Ok((1.0 - surf.grad_sup) * params.r0)
}

/// Location of a base point relative to the cells `Q̂_a`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellLocation {
    Interior(Vec<i64>),
    Gap,
}

/// Lattice decomposition: cells `Q̂_a` of side `l` centred at `a(l + d)`,
/// inner cells `Q_a` shrunk by `r₁`, and cuboids
/// `Q_{a,j} = Q_a × [(j − 1)h + r₁, jh + r₁]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub n: usize,
    pub l: f64,
    pub d: f64,
    pub h: f64,
    pub r1: f64,
}

impl Decomposition {
    pub fn new(n: usize, l: f64, d: f64, h: f64, r1: f64) -> Result<Self> {
        if !(l > 2.0 * r1) || !(d > 0.0) || !(h > 0.0) || !(r1 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "decomposition needs l > 2 r1, d > 0, h > 0 (l = {l}, d = {d}, h = {h}, r1 = {r1})"
            )));
        }
        Ok(Self { n, l, d, h, r1 })
    }

    pub fn period(&self) -> f64 {
        self.l + self.d
    }

    pub fn centre(&self, a: &[i64]) -> Vec<f64> {
        a.iter().map(|&k| k as f64 * self.period()).collect()
    }

    pub fn cell_of(&self, x: &[f64]) -> CellLocation {
        let p = self.period();
        let a: Vec<i64> = x.iter().map(|&v| (v / p).round() as i64).collect();
        let inside = x
            .iter()
            .zip(&a)
            .all(|(&v, &k)| (v - k as f64 * p).abs() < 0.5 * self.l);
        if inside {
            CellLocation::Interior(a)
        } else {
            CellLocation::Gap
        }
    }

    /// Half-side of `Q_a`.
    pub fn inner_half_side(&self) -> f64 {
        0.5 * self.l - self.r1
    }

    /// Whether `x` lies in the closed inner cell `Q_a`.
    pub fn in_inner_cell(&self, x: &[f64], a: &[i64]) -> bool {
        let c = self.centre(a);
        x.iter()
            .zip(&c)
            .all(|(&v, &m)| (v - m).abs() <= self.inner_half_side())
    }

    /// Height interval of level `j ≥ 1`.
    pub fn level_bounds(&self, j: usize) -> (f64, f64) {
        (
            (j as f64 - 1.0) * self.h + self.r1,
            j as f64 * self.h + self.r1,
        )
    }

    /// Level `j` with `y` in `[(j − 1)h + r₁, jh + r₁)`, if any.
    pub fn level_of(&self, y: f64) -> Option<usize> {
        let t = (y - self.r1) / self.h;
        if t < 0.0 {
            None
        } else {
            Some(t.floor() as usize + 1)
        }
    }

    pub fn cuboid_volume(&self) -> f64 {
        (self.l - 2.0 * self.r1).powi(self.n as i32) * self.h
    }
}
