//! Seeded random band-limited fields for batch checks.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::{Field, Grid};
use crate::models::{DensityField, MobilityModel};
use crate::operator::PotentialField;

/// Deterministic generator of smooth fields. Coefficients of mode `k` are
/// uniform in `[-1, 1]` and damped by `1/k²`.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    rng: ChaCha8Rng,
    max_mode: u32,
}

impl FieldSampler {
    pub fn new(seed: u64) -> FieldSampler {
        FieldSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_mode: 4,
        }
    }

    pub fn with_max_mode(mut self, max_mode: u32) -> FieldSampler {
        self.max_mode = max_mode.max(1);
        self
    }

    pub fn max_mode(&self) -> u32 {
        self.max_mode
    }

    /// Fourier coefficients `(k, a_k, b_k)` for `k = 1..=max_mode`.
    pub fn modes(&mut self) -> Vec<(u32, f64, f64)> {
        (1..=self.max_mode)
            .map(|k| {
                let damp = 1.0 / (k * k) as f64;
                (
                    k,
                    damp * self.rng.gen_range(-1.0..1.0),
                    damp * self.rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    pub fn potential(&mut self, grid: &Arc<Grid>) -> PotentialField {
        let modes = self.modes();
        PotentialField::from_fourier(grid, &modes)
    }

    /// Zero-mean field scaled to unit sup norm.
    pub fn perturbation(&mut self, grid: &Arc<Grid>) -> Field {
        let modes = self.modes();
        let f = Field::fourier_series(grid, 0.0, &modes);
        let m = f.max_abs();
        if m > 0.0 {
            f.scale(1.0 / m)
        } else {
            f
        }
    }

    /// Unit-mass density `(1/L)(1 + a·p)` with `p` a unit-sup perturbation and
    /// `a` uniform in `[0, max_relative_amplitude]`.
    pub fn density(
        &mut self,
        grid: &Arc<Grid>,
        model: &MobilityModel,
        max_relative_amplitude: f64,
    ) -> Result<DensityField> {
        let amp = self.rng.gen_range(0.0..=max_relative_amplitude);
        let p = self.perturbation(grid);
        let mean = 1.0 / grid.length();
        DensityField::for_model(p.map(|v| mean * (1.0 + amp * v)), model)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }
}

/// `sin(2πx/L)` and `cos(2πx/L)` as potentials.
pub fn single_mode_pair(grid: &Arc<Grid>) -> (PotentialField, PotentialField) {
    let l = grid.length();
    (
        PotentialField::from_fn(grid, |x| (2.0 * PI * x / l).sin()),
        PotentialField::from_fn(grid, |x| (2.0 * PI * x / l).cos()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_fields() {
        let g = Grid::unit(32).unwrap();
        let a = FieldSampler::new(7).potential(&g);
        let b = FieldSampler::new(7).potential(&g);
        let c = FieldSampler::new(8).potential(&g);
        assert_eq!(a.field().values(), b.field().values());
        assert_ne!(a.field().values(), c.field().values());
    }

    #[test]
    fn densities_are_admissible_with_unit_mass() {
        let g = Grid::new(64, 2.0, 1.0).unwrap();
        let sep = MobilityModel::builtin("sep").unwrap();
        let mut s = FieldSampler::new(1);
        for _ in 0..20 {
            let d = s.density(&g, &sep, 0.6).unwrap();
            assert!((d.mass() - 1.0).abs() < 1e-13);
            assert!(d.field().max() < 0.8 + 1e-12);
        }
    }

    #[test]
    fn potentials_are_band_limited() {
        let g = Grid::unit(64).unwrap();
        let p = FieldSampler::new(3).with_max_mode(5).potential(&g);
        assert!(p.field().spectral_tail(5) < 1e-14);
        assert!(p.field().integrate().abs() < 1e-15);
    }
}
