//! Regular grids carrying sampled fields, with a documented binary dump.
//!
//! A [`GridField`] stores `values` on nodes `origin + i·spacing` (last axis
//! fastest) plus an optional affine part `linear·x`; the represented function
//! is `values(x) + linear·x`. On a periodic grid `values` is one period.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything that can be evaluated pointwise.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> ScalarField for (usize, F) {
    fn dim(&self) -> usize {
        self.0
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.1)(x)
    }
}

const MAGIC: &str = "FRACPIN-GRID v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub periodic: bool,
    pub linear: Vec<f64>,
}

impl GridField {
    pub fn new(origin: Vec<f64>, spacing: Vec<f64>, shape: Vec<usize>, values: Vec<f64>, periodic: bool) -> Result<Self> {
        let n = shape.len();
        if n == 0 || origin.len() != n || spacing.len() != n {
            return Err(Error::Shape("origin, spacing and shape must share one dimension".into()));
        }
        if spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidParameter("grid spacing must be positive".into()));
        }
        if shape.contains(&0) || values.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "{} values do not fill shape {shape:?}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("grid values must be finite".into()));
        }
        Ok(Self {
            origin,
            spacing,
            shape,
            values,
            periodic,
            linear: vec![0.0; n],
        })
    }

    pub fn zeros(origin: Vec<f64>, spacing: Vec<f64>, shape: Vec<usize>, periodic: bool) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(origin, spacing, shape, vec![0.0; len], periodic)
    }

    /// Samples `f` at every node.
    pub fn from_fn<F>(origin: Vec<f64>, spacing: Vec<f64>, shape: Vec<usize>, periodic: bool, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let mut g = Self::zeros(origin, spacing, shape, periodic)?;
        let values: Vec<f64> = (0..g.len())
            .into_par_iter()
            .map(|i| f(&g.node(i)))
            .collect();
        g.values = values;
        Ok(g)
    }

    pub fn with_linear(mut self, linear: Vec<f64>) -> Result<Self> {
        if linear.len() != self.dim() {
            return Err(Error::Shape("linear part dimension mismatch".into()));
        }
        self.linear = linear;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Side lengths of the periodic box.
    pub fn extent(&self) -> Vec<f64> {
        self.shape
            .iter()
            .zip(&self.spacing)
            .map(|(&m, &h)| m as f64 * h)
            .collect()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for ax in (0..self.dim()).rev() {
            idx[ax] = flat % self.shape[ax];
            flat /= self.shape[ax];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &m)| acc * m + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(ax, &i)| self.origin[ax] + i as f64 * self.spacing[ax])
            .collect()
    }

    fn linear_at(&self, x: &[f64]) -> f64 {
        self.linear.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Full value (stored part plus affine part) at node `flat`.
    pub fn node_value(&self, flat: usize) -> f64 {
        if self.linear.iter().all(|&v| v == 0.0) {
            self.values[flat]
        } else {
            self.values[flat] + self.linear_at(&self.node(flat))
        }
    }

    /// Full values at all nodes.
    pub fn full_values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node_value(i)).collect()
    }

    /// Cubic-convolution (Keys, a = −½) interpolation of the stored part,
    /// periodic or clamped at the border, plus the affine part.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut base = vec![0i64; n];
        let mut weights = vec![[0.0f64; 4]; n];
        for ax in 0..n {
            let t = (x[ax] - self.origin[ax]) / self.spacing[ax];
            let i0 = t.floor();
            let f = t - i0;
            base[ax] = i0 as i64 - 1;
            weights[ax] = keys_weights(f);
        }
        let mut acc = 0.0;
        let mut off = vec![0usize; n];
        loop {
            let mut w = 1.0;
            let mut flat = 0usize;
            for ax in 0..n {
                w *= weights[ax][off[ax]];
                let m = self.shape[ax] as i64;
                let mut k = base[ax] + off[ax] as i64;
                k = if self.periodic { k.rem_euclid(m) } else { k.clamp(0, m - 1) };
                flat = flat * self.shape[ax] + k as usize;
            }
            acc += w * self.values[flat];
            let mut ax = 0;
            loop {
                if ax == n {
                    return acc + self.linear_at(x);
                }
                off[ax] += 1;
                if off[ax] < 4 {
                    break;
                }
                off[ax] = 0;
                ax += 1;
            }
        }
    }

    pub fn same_grid(&self, other: &GridField) -> bool {
        self.shape == other.shape
            && self.periodic == other.periodic
            && self
                .origin
                .iter()
                .zip(&other.origin)
                .chain(self.spacing.iter().zip(&other.spacing))
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0))
    }

    /// `self + other` including affine parts.
    pub fn add(&self, other: &GridField) -> Result<GridField> {
        if !self.same_grid(other) {
            return Err(Error::Shape("fields live on different grids".into()));
        }
        let mut out = self.clone();
        out.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += b);
        out.linear.iter_mut().zip(&other.linear).for_each(|(a, b)| *a += b);
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> GridField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out.linear.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn max_value(&self) -> f64 {
        self.full_values().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.full_values().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Little-endian binary dump with a text header.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "dim {}", self.dim())?;
        writeln!(
            out,
            "shape {}",
            self.shape.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(" ")
        )?;
        writeln!(out, "origin {}", join(&self.origin))?;
        writeln!(out, "spacing {}", join(&self.spacing))?;
        writeln!(out, "periodic {}", u8::from(self.periodic))?;
        writeln!(out, "linear {}", join(&self.linear))?;
        writeln!(out, "end")?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: BufRead>(mut input: R) -> Result<GridField> {
        let bad = |msg: &str| Error::Shape(format!("grid dump: {msg}"));
        let mut line = String::new();
        let mut next_line = |input: &mut R| -> Result<String> {
            line.clear();
            input.read_line(&mut line)?;
            Ok(line.trim_end().to_string())
        };
        if next_line(&mut input)? != MAGIC {
            return Err(bad("missing magic line"));
        }
        let mut fields = std::collections::BTreeMap::new();
        loop {
            let l = next_line(&mut input)?;
            if l == "end" {
                break;
            }
            if l.is_empty() {
                return Err(bad("truncated header"));
            }
            let (key, rest) = l.split_once(' ').unwrap_or((l.as_str(), ""));
            fields.insert(key.to_string(), rest.to_string());
        }
        let floats = |k: &str| -> Result<Vec<f64>> {
            fields
                .get(k)
                .ok_or_else(|| bad(&format!("missing {k}")))?
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(&format!("bad number in {k}"))))
                .collect()
        };
        let shape: Vec<usize> = fields
            .get("shape")
            .ok_or_else(|| bad("missing shape"))?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| bad("bad shape")))
            .collect::<Result<_>>()?;
        let periodic = fields.get("periodic").map(|v| v == "1").unwrap_or(false);
        let origin = floats("origin")?;
        let spacing = floats("spacing")?;
        let linear = floats("linear")?;
        let count: usize = shape.iter().product();
        let mut bytes = vec![0u8; 8 * count];
        input.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        GridField::new(origin, spacing, shape, values, periodic)?.with_linear(linear)
    }

    /// CSV with one row per node: coordinates then the full value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|ax| format!("x{ax}")).collect();
        writeln!(out, "{},value", header.join(","))?;
        for i in 0..self.len() {
            let x = self.node(i);
            let coords: Vec<String> = x.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(out, "{},{:.17e}", coords.join(","), self.node_value(i))?;
        }
        Ok(())
    }
}

impl ScalarField for GridField {
    fn dim(&self) -> usize {
        self.shape.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.interpolate(x)
    }
}

fn keys_weights(f: f64) -> [f64; 4] {
    let a = -0.5;
    let w = |t: f64| {
        let t = t.abs();
        if t <= 1.0 {
            (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
        } else if t < 2.0 {
            a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
        } else {
            0.0
        }
    };
    [w(1.0 + f), w(f), w(1.0 - f), w(2.0 - f)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let g = GridField::from_fn(vec![-1.0, 0.5], vec![0.25, 0.5], vec![4, 3], true, |x| x[0] * 3.0 - x[1])
            .unwrap()
            .with_linear(vec![0.3, -0.1])
            .unwrap();
        let mut buf = Vec::new();
        g.write_binary(&mut buf).unwrap();
        let back = GridField::read_binary(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn interpolation_is_exact_at_nodes_and_for_quadratics() {
        let g = GridField::from_fn(vec![0.0, 0.0], vec![0.1, 0.2], vec![20, 20], false, |x| {
            1.0 + 2.0 * x[0] - x[1] + x[0] * x[1]
        })
        .unwrap();
        for i in [0, 17, 211, 399] {
            assert_eq!(g.interpolate(&g.node(i)), g.values[i]);
        }
        let x = [0.93, 1.71];
        let exact = 1.0 + 2.0 * x[0] - x[1] + x[0] * x[1];
        assert!((g.interpolate(&x) - exact).abs() < 1e-12);
    }

    #[test]
    fn periodic_interpolation_wraps() {
        let g = GridField::from_fn(vec![0.0], vec![0.5], vec![8], true, |x| (x[0] * std::f64::consts::PI / 2.0).sin()).unwrap();
        assert!((g.interpolate(&[0.3]) - g.interpolate(&[4.3])).abs() < 1e-14);
    }
}
