//! Response operator `Δ_χ Φ = ∂ₓ(χ(ρ) ∂ₓΦ)`, its pseudo-inverse and the metric.
//!
//! Tangent vectors are zero-mean density perturbations `σ`; potentials `Φ`
//! represent them through `σ = V_Φ = −Δ_χ Φ`. The metric is
//! `g(V_Φ₁, V_Φ₂) = ∫ Φ₁′ χ Φ₂′ dx`.
//!
//! On an even grid the spectral derivative maps the Nyquist mode to zero, so
//! `∂(χ∂·)` alone would annihilate it as well as the constants. The operator
//! therefore acts on the Nyquist component as the constant-coefficient
//! Laplacian with the mean mobility, which keeps the kernel equal to the
//! constants. Band-limited fields carry no Nyquist component and never see
//! this term.

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{HydroError, Result};
use crate::grid::{Field, Grid};
use crate::models::{DensityField, Mobility, MobilityModel};

/// Smallest mobility accepted by the pseudo-inverse.
pub const MIN_MOBILITY: f64 = 1e-10;

/// Relative residual at which the conjugate-gradient solve stops.
pub const SOLVER_TOLERANCE: f64 = 1e-12;

/// Zero-mean potential, the gauge representative of a tangent direction.
#[derive(Debug, Clone)]
pub struct PotentialField(Field);

impl PotentialField {
    /// Fixes the gauge by removing the mean.
    pub fn new(field: Field) -> PotentialField {
        PotentialField(field.project_zero_mean())
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> PotentialField {
        PotentialField::new(Field::from_fn(grid, f))
    }

    /// `Σ a_k cos + b_k sin`; mode 0 is ignored.
    pub fn from_fourier(grid: &Arc<Grid>, modes: &[(u32, f64, f64)]) -> PotentialField {
        PotentialField::new(Field::fourier_series(grid, 0.0, modes))
    }

    pub fn zeros(grid: &Arc<Grid>) -> PotentialField {
        PotentialField(Field::zeros(grid))
    }

    pub fn field(&self) -> &Field {
        &self.0
    }

    pub fn into_field(self) -> Field {
        self.0
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.0.grid()
    }

    pub fn scale(&self, a: f64) -> PotentialField {
        PotentialField(self.0.scale(a))
    }
}

/// Zero-mean density perturbation.
#[derive(Debug, Clone)]
pub struct TangentField(Field);

impl TangentField {
    /// Accepts `field` only if its integral vanishes to roundoff.
    pub fn new(field: Field) -> Result<TangentField> {
        let total = field.integrate();
        let scale = field.map(f64::abs).integrate();
        if total.abs() > 1e-12 + 1e-10 * scale {
            return Err(HydroError::InvalidArgument(format!(
                "tangent field must have zero mean, integral is {total:.3e}"
            )));
        }
        Ok(TangentField(field.project_zero_mean()))
    }

    /// Projects onto zero mean.
    pub fn project(field: Field) -> TangentField {
        TangentField(field.project_zero_mean())
    }

    pub(crate) fn from_field_unchecked(field: Field) -> TangentField {
        TangentField(field)
    }

    pub fn field(&self) -> &Field {
        &self.0
    }

    pub fn into_field(self) -> Field {
        self.0
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.0.grid()
    }
}

/// Response operator frozen at a density: holds `χ, χ′, χ″` on the grid.
#[derive(Debug, Clone)]
pub struct ResponseOperator {
    model: MobilityModel,
    rho: Field,
    mobility: Mobility,
    chi_mean: f64,
}

impl ResponseOperator {
    /// Evaluates the mobility at `rho` after checking admissibility.
    pub fn new(model: &MobilityModel, rho: &DensityField) -> Result<ResponseOperator> {
        model.check_admissible(rho.field())?;
        Ok(ResponseOperator::from_field(model, rho.field()))
    }

    /// No admissibility or mass check; used on intermediate integrator states.
    pub(crate) fn from_field(model: &MobilityModel, rho: &Field) -> ResponseOperator {
        let mobility = model.eval_mobility_unchecked(rho);
        let chi_mean = mobility.chi.values().iter().sum::<f64>() / rho.len() as f64;
        ResponseOperator {
            model: model.clone(),
            rho: rho.clone(),
            mobility,
            chi_mean,
        }
    }

    pub fn model(&self) -> &MobilityModel {
        &self.model
    }

    pub fn rho(&self) -> &Field {
        &self.rho
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.rho.grid()
    }

    pub fn mobility(&self) -> &Mobility {
        &self.mobility
    }

    pub fn chi(&self) -> &Field {
        &self.mobility.chi
    }

    pub fn chi1(&self) -> &Field {
        &self.mobility.chi1
    }

    pub fn chi2(&self) -> &Field {
        &self.mobility.chi2
    }

    fn nyquist_stiffness(&self) -> f64 {
        let k = self.grid().nyquist_wavenumber();
        self.chi_mean * k * k
    }

    /// `Δ_χ Φ` applied to a raw field.
    pub fn laplacian(&self, phi: &Field) -> Field {
        let flux = (&self.mobility.chi * &phi.deriv()).deriv();
        let c = phi.nyquist_coefficient();
        if c == 0.0 {
            return flux;
        }
        let s = self.nyquist_stiffness() * c;
        let values = flux
            .values()
            .iter()
            .enumerate()
            .map(|(k, v)| if k % 2 == 0 { v - s } else { v + s })
            .collect();
        Field::from_vec_unchecked(self.grid(), values)
    }

    /// `V_Φ = −Δ_χ Φ`.
    pub fn apply_response(&self, phi: &PotentialField) -> TangentField {
        TangentField::from_field_unchecked(
            self.laplacian(phi.field()).scale(-1.0).project_zero_mean(),
        )
    }

    /// Zero-mean `Φ` with `−Δ_χ Φ = σ`, by preconditioned conjugate gradients.
    pub fn solve_potential(&self, sigma: &TangentField) -> Result<PotentialField> {
        Ok(PotentialField(self.solve_field(sigma.field())?))
    }

    /// Like [`Self::solve_potential`] for a raw field, which is first
    /// projected onto zero mean.
    pub fn solve_field(&self, sigma: &Field) -> Result<Field> {
        let min_chi = self.mobility.chi.min();
        if !(min_chi >= MIN_MOBILITY) {
            return Err(HydroError::Conditioning {
                min_chi,
                threshold: MIN_MOBILITY,
            });
        }
        let grid = Arc::clone(self.grid());
        let n = grid.n();
        let b = sigma.project_zero_mean().into_values();
        let b_norm = norm(&b);
        if b_norm == 0.0 {
            return Ok(Field::zeros(&grid));
        }
        let apply = |x: &[f64]| -> Vec<f64> {
            let f = Field::from_vec_unchecked(&grid, x.to_vec());
            let mut y = self.laplacian(&f).into_values();
            y.iter_mut().for_each(|v| *v = -*v);
            remove_mean(&mut y);
            y
        };
        let precondition = |r: &[f64]| -> Vec<f64> {
            let mut spec = grid.forward(r);
            for (j, c) in spec.iter_mut().enumerate() {
                let k = if j == n / 2 {
                    grid.nyquist_wavenumber()
                } else {
                    grid.wavenumber(j)
                };
                *c = if j == 0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    *c / (self.chi_mean * k * k)
                };
            }
            grid.inverse(spec)
        };

        let mut x = precondition(&b);
        let ax = apply(&x);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let mut z = precondition(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let max_iter = 10 * n;
        let mut residual = norm(&r) / b_norm;
        let mut iterations = 0;
        while residual > SOLVER_TOLERANCE && iterations < max_iter {
            let ap = apply(&p);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            z = precondition(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            residual = norm(&r) / b_norm;
            iterations += 1;
        }
        // Close to roundoff the recursive residual can drift from the true
        // one; the true residual decides.
        let ax = apply(&x);
        let true_res = norm(
            &b.iter()
                .zip(&ax)
                .map(|(bi, ai)| bi - ai)
                .collect::<Vec<_>>(),
        ) / b_norm;
        if !(true_res <= 1e2 * SOLVER_TOLERANCE) {
            return Err(HydroError::SolverStalled {
                iterations,
                residual: true_res,
            });
        }
        remove_mean(&mut x);
        Ok(Field::from_vec_unchecked(&grid, x))
    }

    /// `∫ Φ₁′ χ Φ₂′ dx` (plus the Nyquist closure term).
    pub fn metric_inner(&self, phi1: &PotentialField, phi2: &PotentialField) -> f64 {
        self.metric_inner_fields(phi1.field(), phi2.field())
    }

    pub(crate) fn metric_inner_fields(&self, a: &Field, b: &Field) -> f64 {
        let main = (&a.deriv() * &self.mobility.chi).dot(&b.deriv());
        let ca = a.nyquist_coefficient();
        let cb = b.nyquist_coefficient();
        main + self.nyquist_stiffness() * ca * cb * self.grid().length()
    }

    /// `−∫ σ₁ Δ_χ^† σ₂ dx`.
    pub fn metric_inner_tangent(&self, s1: &TangentField, s2: &TangentField) -> Result<f64> {
        let phi2 = self.solve_field(s2.field())?;
        Ok(s1.field().dot(&phi2))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn remove_mean(a: &mut [f64]) {
    let m = a.iter().sum::<f64>() / a.len() as f64;
    a.iter_mut().for_each(|v| *v -= m);
}

/// `V_Φ = −∂(χ(ρ)∂Φ)`.
pub fn apply_response(
    rho: &DensityField,
    model: &MobilityModel,
    phi: &PotentialField,
) -> Result<TangentField> {
    Ok(ResponseOperator::new(model, rho)?.apply_response(phi))
}

/// Zero-mean `Φ = −Δ_χ^† σ`.
pub fn solve_potential(
    rho: &DensityField,
    model: &MobilityModel,
    sigma: &TangentField,
) -> Result<PotentialField> {
    ResponseOperator::new(model, rho)?.solve_potential(sigma)
}

/// `g(V_Φ₁, V_Φ₂) = ∫ Φ₁′ χ(ρ) Φ₂′ dx`.
pub fn metric_inner(
    rho: &DensityField,
    model: &MobilityModel,
    phi1: &PotentialField,
    phi2: &PotentialField,
) -> Result<f64> {
    Ok(ResponseOperator::new(model, rho)?.metric_inner(phi1, phi2))
}

/// Metric evaluated on tangent fields through the pseudo-inverse.
pub fn metric_inner_tangent(
    rho: &DensityField,
    model: &MobilityModel,
    s1: &TangentField,
    s2: &TangentField,
) -> Result<f64> {
    ResponseOperator::new(model, rho)?.metric_inner_tangent(s1, s2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn kmp_setup(n: usize) -> (Arc<Grid>, MobilityModel, DensityField) {
        let g = Grid::unit(n).unwrap();
        let rho = DensityField::new(Field::from_fn(&g, |x| {
            1.0 + 0.3 * (2.0 * PI * x).sin() + 0.1 * (6.0 * PI * x).cos()
        }))
        .unwrap();
        (g, MobilityModel::builtin("kmp").unwrap(), rho)
    }

    fn smooth_potential(g: &Arc<Grid>, shift: f64) -> PotentialField {
        PotentialField::from_fn(g, |x| {
            (2.0 * PI * (x + shift)).sin() + 0.3 * (4.0 * PI * x).cos()
                - 0.2 * (10.0 * PI * x + shift).sin()
        })
    }

    #[test]
    fn constant_potential_gives_zero_tangent() {
        let (g, m, rho) = kmp_setup(32);
        let v = apply_response(&rho, &m, &PotentialField::new(Field::constant(&g, 2.0))).unwrap();
        assert!(v.field().max_abs() < 1e-13);
    }

    #[test]
    fn constant_density_is_the_laplacian() {
        let g = Grid::unit(32).unwrap();
        let rho = DensityField::uniform(&g);
        let phi = PotentialField::from_fn(&g, |x| (2.0 * PI * x).sin());
        let expected = Field::from_fn(&g, |x| 4.0 * PI * PI * (2.0 * PI * x).sin());
        for name in ["independent", "kmp"] {
            let m = MobilityModel::builtin(name).unwrap();
            let v = apply_response(&rho, &m, &phi).unwrap();
            assert!((v.field() - &expected).max_abs() < 1e-11, "{name}");
        }
    }

    #[test]
    fn solve_examples() {
        let g = Grid::unit(64).unwrap();
        let rho = DensityField::uniform(&g);
        let m = MobilityModel::builtin("independent").unwrap();
        let zero = solve_potential(&rho, &m, &TangentField::project(Field::zeros(&g))).unwrap();
        assert_eq!(zero.field().max_abs(), 0.0);
        let sigma = TangentField::new(Field::from_fn(&g, |x| 4.0 * PI * PI * (2.0 * PI * x).sin()))
            .unwrap();
        let phi = solve_potential(&rho, &m, &sigma).unwrap();
        let expected = Field::from_fn(&g, |x| (2.0 * PI * x).sin());
        assert!((phi.field() - &expected).max_abs() < 1e-12);
    }

    #[test]
    fn solve_round_trip_variable_mobility() {
        let (g, m, rho) = kmp_setup(128);
        let op = ResponseOperator::new(&m, &rho).unwrap();
        let sigma = TangentField::project(Field::from_fn(&g, |x| {
            (2.0 * PI * x).cos() * (4.0 * PI * x).sin() + 0.5 * (8.0 * PI * x).cos()
        }));
        let phi = op.solve_potential(&sigma).unwrap();
        assert!(phi.field().integrate().abs() < 1e-14);
        let back = op.apply_response(&phi);
        assert!((back.field() - sigma.field()).max_abs() < 1e-10 * sigma.field().max_abs());
    }

    #[test]
    fn gauge_identity() {
        let (g, m, rho) = kmp_setup(64);
        let op = ResponseOperator::new(&m, &rho).unwrap();
        let raw = Field::from_fn(&g, |x| 3.0 + (2.0 * PI * x).sin() * (2.0 * PI * x).cos());
        let lap = op.laplacian(&raw);
        let back = op.solve_field(&lap.scale(-1.0)).unwrap();
        assert!((&back - &raw.project_zero_mean()).max_abs() < 1e-10);
    }

    #[test]
    fn nyquist_mode_is_not_in_the_kernel() {
        let (g, m, rho) = kmp_setup(16);
        let op = ResponseOperator::new(&m, &rho).unwrap();
        let nyq = Field::from_fn(&g, |x| (16.0 * PI * x).cos());
        let energy = -nyq.dot(&op.laplacian(&nyq));
        assert!(energy > 1.0);
        let phi = PotentialField::new(nyq.clone());
        assert!((op.metric_inner(&phi, &phi) - energy).abs() < 1e-10 * energy);
    }

    #[test]
    fn operator_is_self_adjoint_and_negative() {
        let (g, m, rho) = kmp_setup(64);
        let op = ResponseOperator::new(&m, &rho).unwrap();
        let a = Field::from_fn(&g, |x| (2.0 * PI * x).sin() + (32.0 * PI * x).cos());
        let b = Field::from_fn(&g, |x| (6.0 * PI * x).cos() * x.sin());
        let ab = a.dot(&op.laplacian(&b));
        let ba = b.dot(&op.laplacian(&a));
        assert!((ab - ba).abs() < 1e-11 * ab.abs().max(1.0));
        assert!(a.dot(&op.laplacian(&a)) < 0.0);
    }

    #[test]
    fn metric_examples() {
        let g = Grid::unit(64).unwrap();
        let rho = DensityField::uniform(&g);
        let m = MobilityModel::builtin("independent").unwrap();
        let s = PotentialField::from_fn(&g, |x| (2.0 * PI * x).sin());
        let c = PotentialField::from_fn(&g, |x| (2.0 * PI * x).cos());
        assert!((metric_inner(&rho, &m, &s, &s).unwrap() - 2.0 * PI * PI).abs() < 1e-12);
        assert!(metric_inner(&rho, &m, &s, &c).unwrap().abs() < 1e-12);
        let kmp = MobilityModel::builtin("kmp").unwrap();
        let a = metric_inner(&rho, &kmp, &s.scale(3.0), &c).unwrap();
        let b = metric_inner(&rho, &kmp, &s, &c).unwrap();
        assert!((a - 3.0 * b).abs() < 1e-12);
    }

    #[test]
    fn tangent_metric_agrees_with_potential_metric() {
        let (g, m, rho) = kmp_setup(64);
        let op = ResponseOperator::new(&m, &rho).unwrap();
        let p1 = smooth_potential(&g, 0.1);
        let p2 = smooth_potential(&g, 0.37);
        let s1 = op.apply_response(&p1);
        let s2 = op.apply_response(&p2);
        let pot = op.metric_inner(&p1, &p2);
        let tan = op.metric_inner_tangent(&s1, &s2).unwrap();
        let swapped = op.metric_inner_tangent(&s2, &s1).unwrap();
        assert!((pot - tan).abs() <= 1e-9 * pot.abs());
        assert!((tan - swapped).abs() <= 1e-12 * tan.abs());
        let zero = TangentField::project(Field::zeros(&g));
        assert_eq!(op.metric_inner_tangent(&zero, &zero).unwrap(), 0.0);
    }

    #[test]
    fn rejects_nonzero_mean_tangent() {
        let g = Grid::unit(16).unwrap();
        assert!(TangentField::new(Field::constant(&g, 1.0)).is_err());
    }

    #[test]
    fn degenerate_mobility_is_reported() {
        let g = Grid::unit(16).unwrap();
        let m = MobilityModel::custom("tiny")
            .mobility(|r| 1e-12 * r, |_| 1e-12, |_| 0.0)
            .fprime(|r| r.ln())
            .diffusion(|_| 1e-12)
            .build()
            .unwrap();
        let rho = DensityField::uniform(&g);
        let sigma = TangentField::project(Field::from_fn(&g, |x| (2.0 * PI * x).sin()));
        assert!(matches!(
            solve_potential(&rho, &m, &sigma),
            Err(HydroError::Conditioning { .. })
        ));
    }
}
