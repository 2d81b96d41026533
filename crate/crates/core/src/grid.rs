//! Periodic 1-D grid with Fourier collocation calculus.
//!
//! Nodes are `x_k = k·L/n`, `k = 0..n`. Derivatives are computed spectrally
//! (`∂ₓ ↔ i·k`) with the Nyquist mode of the first derivative set to zero, so
//! the discrete derivative is a real skew-symmetric matrix and the discrete
//! integration-by-parts identity `∫ f ∂g = −∫ ∂f g` holds to roundoff.
//! Quadrature is the rectangle rule, which is spectrally accurate on a
//! periodic grid.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{HydroError, Result};

/// Smallest grid accepted by [`Grid::new`].
pub const MIN_POINTS: usize = 8;

/// Uniform periodic grid on `[0, length)`.
pub struct Grid {
    n: usize,
    length: f64,
    dealias_fraction: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n", &self.n)
            .field("length", &self.length)
            .field("dealias_fraction", &self.dealias_fraction)
            .finish()
    }
}

impl Grid {
    /// Builds a grid with `n` points (even, at least [`MIN_POINTS`]).
    pub fn new(n: usize, length: f64, dealias_fraction: f64) -> Result<Arc<Grid>> {
        if n < MIN_POINTS || n % 2 != 0 {
            return Err(HydroError::InvalidArgument(format!(
                "grid size must be even and at least {MIN_POINTS}, got {n}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(HydroError::InvalidArgument(format!(
                "grid length must be positive, got {length}"
            )));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(HydroError::InvalidArgument(format!(
                "dealias fraction must lie in (0, 1], got {dealias_fraction}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Arc::new(Grid {
            n,
            length,
            dealias_fraction,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }))
    }

    /// Unit torus without dealiasing.
    pub fn unit(n: usize) -> Result<Arc<Grid>> {
        Grid::new(n, 1.0, 1.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn dealias_fraction(&self) -> f64 {
        self.dealias_fraction
    }

    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.node(k)).collect()
    }

    /// Same points and length, different dealiasing cutoff.
    pub fn with_dealias_fraction(&self, fraction: f64) -> Result<Arc<Grid>> {
        Grid::new(self.n, self.length, fraction)
    }

    /// Grids are compatible when they describe the same nodes.
    pub fn same_as(&self, other: &Grid) -> bool {
        self.n == other.n && self.length == other.length
    }

    /// Signed mode index of FFT bin `j`.
    pub fn mode_index(&self, j: usize) -> i64 {
        if j <= self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    /// Angular wavenumber `2π m / L` of FFT bin `j`.
    pub fn wavenumber(&self, j: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.mode_index(j) as f64 / self.length
    }

    /// Wavenumber of the Nyquist mode, `π n / L`.
    pub fn nyquist_wavenumber(&self) -> f64 {
        std::f64::consts::PI * self.n as f64 / self.length
    }

    /// Largest mode index kept by [`Field::dealias`].
    pub fn dealias_cutoff(&self, fraction: f64) -> usize {
        (fraction * (self.n / 2) as f64 + 1e-9).floor() as usize
    }

    pub(crate) fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse transform including the `1/n` normalisation; returns the real part.
    pub(crate) fn inverse(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.inverse.process(&mut spectrum);
        let scale = 1.0 / self.n as f64;
        spectrum.into_iter().map(|c| c.re * scale).collect()
    }
}

/// Real samples of a function on a [`Grid`].
#[derive(Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("n", &self.grid.n)
            .field("values", &self.values)
            .finish()
    }
}

impl Field {
    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.n {
            return Err(HydroError::InvalidArgument(format!(
                "expected {} samples, got {}",
                grid.n,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(HydroError::InvalidArgument(format!(
                "non-finite sample at node {k}"
            )));
        }
        Ok(Field {
            grid: Arc::clone(grid),
            values,
        })
    }

    pub(crate) fn from_vec_unchecked(grid: &Arc<Grid>, values: Vec<f64>) -> Field {
        debug_assert_eq!(values.len(), grid.n);
        Field {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> Field {
        let values = (0..grid.n).map(|k| f(grid.node(k))).collect();
        Field::from_vec_unchecked(grid, values)
    }

    pub fn constant(grid: &Arc<Grid>, value: f64) -> Field {
        Field::from_vec_unchecked(grid, vec![value; grid.n])
    }

    pub fn zeros(grid: &Arc<Grid>) -> Field {
        Field::constant(grid, 0.0)
    }

    /// Truncated Fourier series `mean + Σ a_k cos(2πkx/L) + b_k sin(2πkx/L)`.
    pub fn fourier_series(grid: &Arc<Grid>, mean: f64, modes: &[(u32, f64, f64)]) -> Field {
        let two_pi_over_l = 2.0 * std::f64::consts::PI / grid.length;
        Field::from_fn(grid, |x| {
            modes.iter().fold(mean, |acc, &(k, a, b)| {
                let arg = two_pi_over_l * k as f64 * x;
                acc + a * arg.cos() + b * arg.sin()
            })
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_vec_unchecked(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        self.assert_same_grid(other);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Field::from_vec_unchecked(&self.grid, values)
    }

    pub fn scale(&self, a: f64) -> Field {
        self.map(|v| a * v)
    }

    /// `self + a·other`.
    pub fn axpy(&self, a: f64, other: &Field) -> Field {
        self.zip_map(other, |u, v| u + a * v)
    }

    /// Spectral first derivative. Exact for modes below Nyquist; the Nyquist
    /// mode is mapped to zero.
    pub fn deriv(&self) -> Field {
        let g = &self.grid;
        let mut spec = g.forward(&self.values);
        let nyq = g.n / 2;
        for (j, c) in spec.iter_mut().enumerate() {
            if j == nyq {
                *c = Complex64::new(0.0, 0.0);
            } else {
                *c *= Complex64::new(0.0, g.wavenumber(j));
            }
        }
        Field::from_vec_unchecked(g, g.inverse(spec))
    }

    /// Rectangle-rule quadrature `Σ f_k h`.
    pub fn integrate(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.spacing()
    }

    /// `∫ self · other dx`.
    pub fn dot(&self, other: &Field) -> f64 {
        self.assert_same_grid(other);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.grid.spacing()
    }

    pub fn mean(&self) -> f64 {
        self.integrate() / self.grid.length
    }

    pub fn project_zero_mean(&self) -> Field {
        let m = self.values.iter().sum::<f64>() / self.grid.n as f64;
        self.map(|v| v - m)
    }

    /// Zeroes Fourier modes above `dealias_fraction · n/2` using the grid's fraction.
    pub fn dealias(&self) -> Field {
        self.dealias_with(self.grid.dealias_fraction)
    }

    pub fn dealias_with(&self, fraction: f64) -> Field {
        if fraction >= 1.0 {
            return self.clone();
        }
        self.band_limit(self.grid.dealias_cutoff(fraction))
    }

    /// Zeroes Fourier modes with `|m| > cutoff`.
    pub fn band_limit(&self, cutoff: usize) -> Field {
        let g = &self.grid;
        let cutoff = cutoff as i64;
        let mut spec = g.forward(&self.values);
        for (j, c) in spec.iter_mut().enumerate() {
            if g.mode_index(j).abs() > cutoff {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        Field::from_vec_unchecked(g, g.inverse(spec))
    }

    /// Trigonometric interpolant sampled on `target`, a grid of the same
    /// length. Modes that `target` cannot carry below its Nyquist index are
    /// dropped, as is the Nyquist mode of `self`.
    pub fn resample(&self, target: &Arc<Grid>) -> Result<Field> {
        if (target.length - self.grid.length).abs() > 1e-12 * self.grid.length {
            return Err(HydroError::InvalidArgument(format!(
                "cannot resample from length {} to length {}",
                self.grid.length, target.length
            )));
        }
        let (n, m) = (self.grid.n, target.n);
        let keep = (n.min(m) / 2) as i64;
        let spec = self.grid.forward(&self.values);
        let mut out = vec![Complex64::new(0.0, 0.0); m];
        let ratio = m as f64 / n as f64;
        for (j, c) in spec.iter().enumerate() {
            let k = self.grid.mode_index(j);
            if k.abs() < keep {
                out[k.rem_euclid(m as i64) as usize] = c * ratio;
            }
        }
        Ok(Field::from_vec_unchecked(target, target.inverse(out)))
    }

    /// Coefficient of the Nyquist mode `(−1)^k`.
    pub fn nyquist_coefficient(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(k, v)| if k % 2 == 0 { *v } else { -*v })
            .sum::<f64>()
            / self.grid.n as f64
    }

    /// Field with its Nyquist component removed.
    pub fn remove_nyquist(&self) -> Field {
        let c = self.nyquist_coefficient();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| if k % 2 == 0 { v - c } else { v + c })
            .collect();
        Field::from_vec_unchecked(&self.grid, values)
    }

    /// Largest absolute Fourier amplitude above mode index `cutoff`.
    pub fn spectral_tail(&self, cutoff: usize) -> f64 {
        let g = &self.grid;
        let spec = g.forward(&self.values);
        spec.iter()
            .enumerate()
            .filter(|(j, _)| g.mode_index(*j).unsigned_abs() as usize > cutoff)
            .map(|(_, c)| c.norm() / g.n as f64)
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sqrt(∫ f² dx)`.
    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn assert_same_grid(&self, other: &Field) {
        assert!(
            self.grid.same_as(&other.grid),
            "field arithmetic across different grids (n = {} vs {})",
            self.grid.n,
            other.grid.n
        );
    }

    /// Writes `x,value` rows in node order with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,value")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", fmt_f64(self.grid.node(k)), fmt_f64(*v))?;
        }
        Ok(())
    }

    /// Reads the format produced by [`Field::write_csv`]. The node count must
    /// match `grid`.
    pub fn read_csv<R: BufRead>(grid: &Arc<Grid>, input: R) -> Result<Field> {
        let mut values = Vec::with_capacity(grid.n);
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "x,value" {
                    return Err(HydroError::Parse(format!("unexpected header `{line}`")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let _x = parts.next();
            let v = parts
                .next()
                .ok_or_else(|| HydroError::Parse(format!("line {}: missing value", i + 1)))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|e| HydroError::Parse(format!("line {}: {e}", i + 1)))?;
            values.push(v);
        }
        Field::from_values(grid, values)
    }
}

/// 17 significant digits, the round-trip precision of `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &Field {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl Mul<&Field> for f64 {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        rhs.scale(self)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.map(|v| -v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn make_grid_nodes() {
        let g = Grid::new(8, 1.0, 1.0).unwrap();
        let expected = [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875];
        assert_eq!(g.nodes(), expected);
    }

    #[test]
    fn make_grid_rejects_odd_and_tiny() {
        assert!(matches!(
            Grid::new(7, 1.0, 1.0),
            Err(HydroError::InvalidArgument(_))
        ));
        assert!(matches!(
            Grid::new(6, 1.0, 1.0),
            Err(HydroError::InvalidArgument(_))
        ));
        assert!(Grid::new(8, 0.0, 1.0).is_err());
        assert!(Grid::new(8, 1.0, 0.0).is_err());
    }

    #[test]
    fn resample_keeps_band_limited_fields() {
        let coarse = Grid::unit(16).unwrap();
        let fine = Grid::unit(48).unwrap();
        let f = |x: f64| 0.3 + (2.0 * PI * x).sin() - 0.4 * (14.0 * PI * x).cos();
        let up = Field::from_fn(&coarse, f).resample(&fine).unwrap();
        assert!((&up - &Field::from_fn(&fine, f)).max_abs() < 1e-13);
        let down = up.resample(&coarse).unwrap();
        assert!((&down - &Field::from_fn(&coarse, f)).max_abs() < 1e-13);
        assert!(up.resample(&Grid::new(16, 2.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn make_grid_spacing() {
        let g = Grid::new(64, 2.0, 2.0 / 3.0).unwrap();
        assert_eq!(g.spacing(), 0.03125);
    }

    #[test]
    fn deriv_of_sine_is_exact() {
        let g = Grid::unit(32).unwrap();
        let f = Field::from_fn(&g, |x| (2.0 * PI * x).sin());
        let df = f.deriv();
        for (k, v) in df.values().iter().enumerate() {
            let x = g.node(k);
            assert!(close(*v, 2.0 * PI * (2.0 * PI * x).cos(), 1e-12));
        }
    }

    #[test]
    fn deriv_of_constant_vanishes() {
        let g = Grid::unit(16).unwrap();
        let df = Field::constant(&g, 3.7).deriv();
        assert!(df.max_abs() < 1e-14);
        assert!(df.integrate().abs() < 1e-15);
    }

    #[test]
    fn quadrature_examples() {
        let g = Grid::unit(64).unwrap();
        assert!(close(Field::constant(&g, 1.0).integrate(), 1.0, 1e-15));
        let s = Field::from_fn(&g, |x| (2.0 * PI * x).sin());
        assert!(s.integrate().abs() < 1e-14);
        // ∫₀¹ sin²(2πx) dx = 1/2
        assert!(close((&s * &s).integrate(), 0.5, 1e-14));
    }

    #[test]
    fn projection_examples() {
        let g = Grid::unit(16).unwrap();
        assert!(Field::constant(&g, 5.0).project_zero_mean().max_abs() < 1e-15);
        let s = Field::from_fn(&g, |x| (2.0 * PI * x).sin());
        let shifted = s.map(|v| v + 2.0).project_zero_mean();
        assert!((&shifted - &s).max_abs() < 1e-14);
        let twice = shifted.project_zero_mean();
        assert!((&twice - &shifted).max_abs() < 1e-15);
    }

    #[test]
    fn dealias_examples() {
        let g = Grid::new(32, 1.0, 2.0 / 3.0).unwrap();
        let low = Field::from_fn(&g, |x| (2.0 * PI * 3.0 * x).cos() + 0.5);
        assert!((&low.dealias() - &low).max_abs() < 1e-14);
        let top = Field::from_fn(&g, |x| (2.0 * PI * 16.0 * x).cos());
        assert!(top.dealias().max_abs() < 1e-14);
        let a = Field::from_fn(&g, |x| (2.0 * PI * 14.0 * x).sin() + x);
        let b = Field::from_fn(&g, |x| (2.0 * PI * 2.0 * x).cos() * x * x);
        let lhs = a.axpy(-3.0, &b).dealias();
        let rhs = a.dealias().axpy(-3.0, &b.dealias());
        assert!((&lhs - &rhs).max_abs() < 1e-13);
    }

    #[test]
    fn nyquist_mode_handling() {
        let g = Grid::unit(16).unwrap();
        let nyq = Field::from_fn(&g, |x| (PI * 16.0 * x).cos());
        assert!(close(nyq.nyquist_coefficient(), 1.0, 1e-14));
        assert!(nyq.deriv().max_abs() < 1e-12);
        assert!(nyq.remove_nyquist().max_abs() < 1e-14);
    }

    #[test]
    fn csv_round_trip() {
        let g = Grid::unit(8).unwrap();
        let f = Field::from_fn(&g, |x| (2.0 * PI * x).sin() / 3.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,value\n0.0000000000000000e0,"));
        let back = Field::read_csv(&g, buf.as_slice()).unwrap();
        assert_eq!(back.values(), f.values());
    }
}
