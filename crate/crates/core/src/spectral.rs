//! Fourier multipliers on periodic grids.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridField;

/// Discrete symbol of `(−Δ)^s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symbol {
    /// `|k|^{2s}` on the resolved wave numbers.
    Continuous,
    /// `(Σᵢ (2/hᵢ)² sin²(kᵢhᵢ/2))^s`, the power of the five-point Laplacian
    /// symbol; its off-diagonal matrix entries are nonpositive.
    Lattice,
}

/// FFT plans and wave numbers for one grid shape.
pub struct Spectral {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    waves: Vec<Vec<f64>>,
    spacing: Vec<f64>,
}

impl Spectral {
    pub fn new(shape: &[usize], spacing: &[f64]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = shape.iter().map(|&m| planner.plan_fft_forward(m)).collect();
        let inverse = shape.iter().map(|&m| planner.plan_fft_inverse(m)).collect();
        let waves = shape
            .iter()
            .zip(spacing)
            .map(|(&m, &h)| {
                let len = m as f64 * h;
                (0..m)
                    .map(|j| {
                        let signed = if j <= m / 2 { j as f64 } else { j as f64 - m as f64 };
                        2.0 * PI * signed / len
                    })
                    .collect()
            })
            .collect();
        Self {
            shape: shape.to_vec(),
            forward,
            inverse,
            waves,
            spacing: spacing.to_vec(),
        }
    }

    pub fn for_grid(g: &GridField) -> Self {
        Self::new(&g.shape, &g.spacing)
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transform(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        let n = self.shape.len();
        let total = self.len();
        for ax in 0..n {
            let m = self.shape[ax];
            let stride: usize = self.shape[ax + 1..].iter().product();
            let mut line = vec![Complex64::new(0.0, 0.0); m];
            let mut scratch = vec![Complex64::new(0.0, 0.0); plans[ax].get_inplace_scratch_len()];
            for start in 0..total {
                // start indexes a line when its coordinate on `ax` is zero
                if (start / stride) % m != 0 {
                    continue;
                }
                for j in 0..m {
                    line[j] = data[start + j * stride];
                }
                plans[ax].process_with_scratch(&mut line, &mut scratch);
                for j in 0..m {
                    data[start + j * stride] = line[j];
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Inverse transform including the `1/N` normalisation.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let scale = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|c| *c *= scale);
    }

    /// Symbol of `(−Δ)^s` at every frequency (same layout as the grid).
    pub fn symbol(&self, s: f64, kind: Symbol) -> Vec<f64> {
        let n = self.shape.len();
        (0..self.len())
            .map(|mut flat| {
                let mut acc = 0.0;
                for ax in (0..n).rev() {
                    let j = flat % self.shape[ax];
                    flat /= self.shape[ax];
                    let k = self.waves[ax][j];
                    acc += match kind {
                        Symbol::Continuous => k * k,
                        Symbol::Lattice => {
                            let h = self.spacing[ax];
                            let v = 2.0 / h * (0.5 * k * h).sin();
                            v * v
                        }
                    };
                }
                if acc == 0.0 {
                    0.0
                } else {
                    acc.powf(s)
                }
            })
            .collect()
    }

    /// Applies a real multiplier to real data.
    pub fn apply(&self, values: &[f64], multiplier: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf.iter_mut().zip(multiplier).for_each(|(c, &m)| *c *= m);
        self.inverse(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }
}

/// `(−Δ)^s` of a periodic grid field; the affine part is annihilated.
pub fn fraclap_periodic(field: &GridField, s: f64, kind: Symbol) -> Result<GridField> {
    if !field.periodic {
        return Err(Error::InvalidParameter("spectral evaluation needs a periodic grid".into()));
    }
    let sp = Spectral::for_grid(field);
    let sym = sp.symbol(s, kind);
    let values = sp.apply(&field.values, &sym);
    GridField::new(field.origin.clone(), field.spacing.clone(), field.shape.clone(), values, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mode_eigenvalue() {
        let l = 10.0;
        let m = 64;
        let k = [2.0 * PI * 3.0 / l, 2.0 * PI * -2.0 / l];
        let g = GridField::from_fn(vec![0.0, 0.0], vec![l / m as f64; 2], vec![m, m], true, |x| {
            (k[0] * x[0] + k[1] * x[1] + 0.3).cos()
        })
        .unwrap();
        let out = fraclap_periodic(&g, 0.35, Symbol::Continuous).unwrap();
        let lam = (k[0] * k[0] + k[1] * k[1]).powf(0.35);
        for i in [0, 100, 2000, 4095] {
            assert!((out.values[i] - lam * g.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_and_tilts_are_annihilated() {
        let g = GridField::from_fn(vec![0.0, 0.0], vec![0.5, 0.5], vec![16, 8], true, |_| 2.5)
            .unwrap()
            .with_linear(vec![0.4, -0.2])
            .unwrap();
        let out = fraclap_periodic(&g, 0.5, Symbol::Lattice).unwrap();
        assert!(out.values.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn lattice_symbol_with_unit_power_is_five_point_laplacian() {
        let g = GridField::from_fn(vec![0.0, 0.0], vec![0.3, 0.3], vec![16, 16], true, |x| {
            (x[0] * 1.7).sin() + (x[1] * 0.9).cos() * x[0].cos()
        })
        .unwrap();
        let sp = Spectral::for_grid(&g);
        let out = sp.apply(&g.values, &sp.symbol(1.0, Symbol::Lattice));
        let idx = |i: usize, j: usize| (i % 16) * 16 + (j % 16);
        for (i, j) in [(3, 4), (0, 15), (9, 9)] {
            let lap = (4.0 * g.values[idx(i, j)]
                - g.values[idx(i + 1, j)]
                - g.values[idx(i + 15, j)]
                - g.values[idx(i, j + 1)]
                - g.values[idx(i, j + 15)])
                / 0.09;
            assert!((out[idx(i, j)] - lap).abs() < 1e-10);
        }
    }
}
