//! Mobility models, free energies and densities.
//!
//! A [`MobilityModel`] bundles the mobility `χ(ρ)` with its first two
//! derivatives, the free-energy integrand `f` (through `f′`, `f″`) and the
//! diffusion coefficient `D(ρ) = χ(ρ) f″(ρ)` (Einstein relation). Models are
//! immutable and cheap to clone.

use std::fmt;
use std::sync::Arc;

use crate::error::{HydroError, Result};
use crate::grid::{Field, Grid};

/// Distance from the ends of the admissible interval that densities must keep.
pub const ADMISSIBLE_MARGIN: f64 = 1e-8;

/// Tolerance of the finite-difference checks run when a custom model is built.
pub const VERIFY_TOLERANCE: f64 = 1e-6;

/// Tolerance on `∫ρ dx = 1`.
pub const MASS_TOLERANCE: f64 = 1e-12;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Shape of `χ` on the admissible interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convexity {
    Convex,
    Concave,
    Linear,
    Indefinite,
}

impl Convexity {
    pub fn as_str(self) -> &'static str {
        match self {
            Convexity::Convex => "convex",
            Convexity::Concave => "concave",
            Convexity::Linear => "linear",
            Convexity::Indefinite => "indefinite",
        }
    }
}

#[derive(Clone)]
pub struct MobilityModel {
    name: String,
    chi: ScalarFn,
    chi1: ScalarFn,
    chi2: ScalarFn,
    f: Option<ScalarFn>,
    fprime: ScalarFn,
    fsecond: ScalarFn,
    diffusion: ScalarFn,
    lo: f64,
    hi: f64,
    convexity: Convexity,
}

impl fmt::Debug for MobilityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MobilityModel")
            .field("name", &self.name)
            .field("admissible", &(self.lo, self.hi))
            .field("convexity", &self.convexity)
            .finish()
    }
}

fn arc(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

/// Names accepted by [`MobilityModel::builtin`].
pub const BUILTIN_NAMES: [&str; 3] = ["independent", "sep", "kmp"];

impl MobilityModel {
    /// Independent particles (`χ = ρ`), simple exclusion (`χ = ρ(1−ρ)`) or
    /// Kipnis–Marchioro–Presutti (`χ = ρ²`). All three have `D ≡ 1`.
    pub fn builtin(name: &str) -> Result<MobilityModel> {
        let m = match name {
            "independent" => MobilityModel {
                name: name.into(),
                chi: arc(|r| r),
                chi1: arc(|_| 1.0),
                chi2: arc(|_| 0.0),
                f: Some(arc(|r| r * r.ln())),
                fprime: arc(|r| r.ln() + 1.0),
                fsecond: arc(|r| 1.0 / r),
                diffusion: arc(|_| 1.0),
                lo: 0.0,
                hi: f64::INFINITY,
                convexity: Convexity::Linear,
            },
            "sep" => MobilityModel {
                name: name.into(),
                chi: arc(|r| r * (1.0 - r)),
                chi1: arc(|r| 1.0 - 2.0 * r),
                chi2: arc(|_| -2.0),
                f: Some(arc(|r| r * r.ln() + (1.0 - r) * (1.0 - r).ln())),
                fprime: arc(|r| (r / (1.0 - r)).ln()),
                fsecond: arc(|r| 1.0 / (r * (1.0 - r))),
                diffusion: arc(|_| 1.0),
                lo: 0.0,
                hi: 1.0,
                convexity: Convexity::Concave,
            },
            "kmp" => MobilityModel {
                name: name.into(),
                chi: arc(|r| r * r),
                chi1: arc(|r| 2.0 * r),
                chi2: arc(|_| 2.0),
                f: Some(arc(|r| -r.ln())),
                fprime: arc(|r| -1.0 / r),
                fsecond: arc(|r| 1.0 / (r * r)),
                diffusion: arc(|_| 1.0),
                lo: 0.0,
                hi: f64::INFINITY,
                convexity: Convexity::Convex,
            },
            other => return Err(HydroError::UnknownModel(other.to_string())),
        };
        Ok(m)
    }

    /// Starts a user-defined model. See [`CustomModel`].
    pub fn custom(name: &str) -> CustomModel {
        CustomModel::new(name)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn chi(&self, rho: f64) -> f64 {
        (self.chi)(rho)
    }

    pub fn chi1(&self, rho: f64) -> f64 {
        (self.chi1)(rho)
    }

    pub fn chi2(&self, rho: f64) -> f64 {
        (self.chi2)(rho)
    }

    pub fn fprime(&self, rho: f64) -> f64 {
        (self.fprime)(rho)
    }

    pub fn fsecond(&self, rho: f64) -> f64 {
        (self.fsecond)(rho)
    }

    pub fn diffusion(&self, rho: f64) -> f64 {
        (self.diffusion)(rho)
    }

    /// Free-energy integrand, when the model supplies it.
    pub fn free_energy(&self, rho: f64) -> Option<f64> {
        self.f.as_ref().map(|f| f(rho))
    }

    /// Open admissible interval `(lo, hi)`; `hi` may be infinite.
    pub fn admissible(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn convexity(&self) -> Convexity {
        self.convexity
    }

    pub fn is_admissible_value(&self, rho: f64) -> bool {
        rho.is_finite() && rho > self.lo + ADMISSIBLE_MARGIN && rho < self.hi - ADMISSIBLE_MARGIN
    }

    /// Fails unless every sample of `rho` keeps [`ADMISSIBLE_MARGIN`] from the
    /// ends of the admissible interval.
    pub fn check_admissible(&self, rho: &Field) -> Result<()> {
        let (min, max) = (rho.min(), rho.max());
        if self.is_admissible_value(min) && self.is_admissible_value(max) {
            Ok(())
        } else {
            Err(HydroError::Inadmissible {
                model: self.name.clone(),
                min,
                max,
                lo: self.lo,
                hi: self.hi,
                margin: ADMISSIBLE_MARGIN,
            })
        }
    }

    /// Midpoint of the admissible interval, or `lo + 1` when it is unbounded.
    pub fn reference_density(&self) -> f64 {
        if self.hi.is_finite() {
            0.5 * (self.lo + self.hi)
        } else {
            self.lo.max(0.0) + 1.0
        }
    }

    /// Points used by the derivative checks.
    fn sample_points(&self) -> Vec<f64> {
        let (a, b) = if self.hi.is_finite() {
            let w = self.hi - self.lo;
            (self.lo + 0.05 * w, self.hi - 0.05 * w)
        } else {
            let a = if self.lo.is_finite() {
                self.lo + 0.1
            } else {
                -5.0
            };
            (a, a + 5.0)
        };
        (0..=16).map(|i| a + (b - a) * i as f64 / 16.0).collect()
    }

    /// Checks χ′, χ″, f″ (and f′ against f when present) by central
    /// differences, plus `χ f″ = D` and positivity of χ and D.
    pub fn verify(&self) -> Result<()> {
        let fail = |what: &'static str, rho: f64, error: f64| HydroError::ModelVerification {
            model: self.name.clone(),
            what,
            rho,
            error,
        };
        for rho in self.sample_points() {
            let eps = 1e-4 * (rho - self.lo).min(self.hi - rho).min(rho.abs().max(1e-2));
            let c = self.chi(rho);
            if !(c > 0.0) {
                return Err(fail("chi > 0", rho, c));
            }
            let d = self.diffusion(rho);
            if !(d > 0.0) {
                return Err(fail("D > 0", rho, d));
            }
            let checks: [(&'static str, f64, f64); 3] = [
                ("chi'", central(&*self.chi, rho, eps), self.chi1(rho)),
                ("chi''", central(&*self.chi1, rho, eps), self.chi2(rho)),
                ("f''", central(&*self.fprime, rho, eps), self.fsecond(rho)),
            ];
            for (what, fd, exact) in checks {
                let err = (fd - exact).abs() / exact.abs().max(1.0);
                if !(err <= VERIFY_TOLERANCE) {
                    return Err(fail(what, rho, err));
                }
            }
            if let Some(f) = &self.f {
                let fd = central(&**f, rho, eps);
                let exact = self.fprime(rho);
                let err = (fd - exact).abs() / exact.abs().max(1.0);
                if !(err <= VERIFY_TOLERANCE) {
                    return Err(fail("f'", rho, err));
                }
            }
            let einstein = (c * self.fsecond(rho) - d).abs() / d.abs().max(1.0);
            if !(einstein <= VERIFY_TOLERANCE) {
                return Err(fail("einstein relation chi*f'' = D", rho, einstein));
            }
        }
        Ok(())
    }

    /// Pointwise `χ, χ′, χ″` at `ρ(x)`.
    pub fn eval_mobility(&self, rho: &DensityField) -> Result<Mobility> {
        self.check_admissible(rho.field())?;
        Ok(self.eval_mobility_unchecked(rho.field()))
    }

    pub(crate) fn eval_mobility_unchecked(&self, rho: &Field) -> Mobility {
        Mobility {
            chi: rho.map(|r| self.chi(r)),
            chi1: rho.map(|r| self.chi1(r)),
            chi2: rho.map(|r| self.chi2(r)),
        }
    }

    /// `f′(ρ) − f′(π)`, the first variation of the Bregman divergence.
    pub fn free_energy_slope(&self, rho: &DensityField, pi: &DensityField) -> Result<Field> {
        self.check_admissible(rho.field())?;
        self.check_admissible(pi.field())?;
        check_same_grid(rho.field(), pi.field())?;
        Ok(self.free_energy_slope_unchecked(rho.field(), pi.field()))
    }

    pub(crate) fn free_energy_slope_unchecked(&self, rho: &Field, pi: &Field) -> Field {
        rho.zip_map(pi, |r, p| self.fprime(r) - self.fprime(p))
    }

    /// `D_f(ρ, π) = ∫ [f(ρ) − f(π) − f′(π)(ρ − π)] dx`.
    pub fn bregman_divergence(&self, rho: &DensityField, pi: &DensityField) -> Result<f64> {
        self.check_admissible(rho.field())?;
        self.check_admissible(pi.field())?;
        check_same_grid(rho.field(), pi.field())?;
        Ok(self.bregman_unchecked(rho.field(), pi.field()))
    }

    pub(crate) fn bregman_unchecked(&self, rho: &Field, pi: &Field) -> f64 {
        rho.zip_map(pi, |r, p| self.bregman_pointwise(r, p))
            .integrate()
    }

    /// Integrand of the Bregman divergence. Without `f`, it is obtained as
    /// `∫_p^r (f′(s) − f′(p)) ds` by Gauss–Legendre quadrature.
    pub fn bregman_pointwise(&self, r: f64, p: f64) -> f64 {
        match &self.f {
            Some(f) => f(r) - f(p) - self.fprime(p) * (r - p),
            None => {
                let fp = self.fprime(p);
                let width = (r - p) / BREGMAN_PANELS as f64;
                (0..BREGMAN_PANELS)
                    .map(|i| {
                        let a = p + i as f64 * width;
                        let mid = a + 0.5 * width;
                        GAUSS_16
                            .iter()
                            .map(|&(node, w)| w * (self.fprime(mid + 0.5 * width * node) - fp))
                            .sum::<f64>()
                            * 0.5
                            * width
                    })
                    .sum()
            }
        }
    }
}

fn central(f: &(dyn Fn(f64) -> f64 + Send + Sync), x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

fn check_same_grid(a: &Field, b: &Field) -> Result<()> {
    if a.grid().same_as(b.grid()) {
        Ok(())
    } else {
        Err(HydroError::GridMismatch)
    }
}

const BREGMAN_PANELS: usize = 16;

// 16-point Gauss–Legendre nodes and weights on [-1, 1].
const GAUSS_16: [(f64, f64); 16] = [
    (-0.989_400_934_991_649_9, 0.027_152_459_411_754_095),
    (-0.944_575_023_073_232_6, 0.062_253_523_938_647_89),
    (-0.865_631_202_387_831_8, 0.095_158_511_682_492_78),
    (-0.755_404_408_355_003, 0.124_628_971_255_533_87),
    (-0.617_876_244_402_643_8, 0.149_595_988_816_576_73),
    (-0.458_016_777_657_227_4, 0.169_156_519_395_002_54),
    (-0.281_603_550_779_258_9, 0.182_603_415_044_923_6),
    (-0.095_012_509_837_637_44, 0.189_450_610_455_068_5),
    (0.095_012_509_837_637_44, 0.189_450_610_455_068_5),
    (0.281_603_550_779_258_9, 0.182_603_415_044_923_6),
    (0.458_016_777_657_227_4, 0.169_156_519_395_002_54),
    (0.617_876_244_402_643_8, 0.149_595_988_816_576_73),
    (0.755_404_408_355_003, 0.124_628_971_255_533_87),
    (0.865_631_202_387_831_8, 0.095_158_511_682_492_78),
    (0.944_575_023_073_232_6, 0.062_253_523_938_647_89),
    (0.989_400_934_991_649_9, 0.027_152_459_411_754_095),
];

/// Builder for user-supplied models. `χ`, `χ′`, `χ″` and `f′` are required.
/// `f″` defaults to a central difference of `f′`; `D` defaults to `χ′`, the
/// zero-range form of the Einstein relation. [`CustomModel::build`] runs
/// [`MobilityModel::verify`].
pub struct CustomModel {
    name: String,
    chi: Option<ScalarFn>,
    chi1: Option<ScalarFn>,
    chi2: Option<ScalarFn>,
    f: Option<ScalarFn>,
    fprime: Option<ScalarFn>,
    fsecond: Option<ScalarFn>,
    diffusion: Option<ScalarFn>,
    interval: (f64, f64),
    convexity: Option<Convexity>,
}

impl CustomModel {
    fn new(name: &str) -> CustomModel {
        CustomModel {
            name: name.to_string(),
            chi: None,
            chi1: None,
            chi2: None,
            f: None,
            fprime: None,
            fsecond: None,
            diffusion: None,
            interval: (0.0, f64::INFINITY),
            convexity: None,
        }
    }

    pub fn mobility(
        mut self,
        chi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        chi1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        chi2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.chi = Some(arc(chi));
        self.chi1 = Some(arc(chi1));
        self.chi2 = Some(arc(chi2));
        self
    }

    pub fn free_energy(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.f = Some(arc(f));
        self
    }

    pub fn fprime(mut self, fp: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.fprime = Some(arc(fp));
        self
    }

    pub fn fsecond(mut self, fpp: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.fsecond = Some(arc(fpp));
        self
    }

    pub fn diffusion(mut self, d: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.diffusion = Some(arc(d));
        self
    }

    pub fn admissible(mut self, lo: f64, hi: f64) -> Self {
        self.interval = (lo, hi);
        self
    }

    pub fn convexity(mut self, c: Convexity) -> Self {
        self.convexity = Some(c);
        self
    }

    pub fn build(self) -> Result<MobilityModel> {
        let missing = |what: &str| {
            HydroError::InvalidArgument(format!("custom model `{}` is missing {what}", self.name))
        };
        let chi = self.chi.clone().ok_or_else(|| missing("chi"))?;
        let chi1 = self.chi1.clone().ok_or_else(|| missing("chi'"))?;
        let chi2 = self.chi2.clone().ok_or_else(|| missing("chi''"))?;
        let fprime = self.fprime.clone().ok_or_else(|| missing("f'"))?;
        let (lo, hi) = self.interval;
        if !(lo < hi) || lo.is_nan() || hi.is_nan() {
            return Err(HydroError::InvalidArgument(format!(
                "admissible interval ({lo}, {hi}) is empty"
            )));
        }
        let fsecond = self.fsecond.clone().unwrap_or_else(|| {
            let fp = Arc::clone(&fprime);
            arc(move |r| {
                let e = 1e-5 * r.abs().max(1e-2);
                (fp(r + e) - fp(r - e)) / (2.0 * e)
            })
        });
        let diffusion = self.diffusion.clone().unwrap_or_else(|| Arc::clone(&chi1));
        let mut model = MobilityModel {
            name: self.name.clone(),
            chi,
            chi1,
            chi2,
            f: self.f.clone(),
            fprime,
            fsecond,
            diffusion,
            lo,
            hi,
            convexity: Convexity::Indefinite,
        };
        model.convexity = self.convexity.unwrap_or_else(|| infer_convexity(&model));
        model.verify()?;
        Ok(model)
    }
}

fn infer_convexity(model: &MobilityModel) -> Convexity {
    let samples: Vec<f64> = model
        .sample_points()
        .iter()
        .map(|&r| model.chi2(r))
        .collect();
    let tol = 1e-12;
    if samples.iter().all(|v| v.abs() <= tol) {
        Convexity::Linear
    } else if samples.iter().all(|&v| v >= -tol) {
        Convexity::Convex
    } else if samples.iter().all(|&v| v <= tol) {
        Convexity::Concave
    } else {
        Convexity::Indefinite
    }
}

/// Pointwise mobility and its derivatives on the grid.
#[derive(Debug, Clone)]
pub struct Mobility {
    pub chi: Field,
    pub chi1: Field,
    pub chi2: Field,
}

/// Positive density with unit mass.
#[derive(Debug, Clone)]
pub struct DensityField {
    field: Field,
}

impl DensityField {
    /// Validates positivity and unit mass.
    pub fn new(field: Field) -> Result<DensityField> {
        let mass = field.integrate();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(HydroError::InvalidArgument(format!(
                "density must have unit mass, got {mass:.15}"
            )));
        }
        if !(field.min() > 0.0) {
            return Err(HydroError::InvalidArgument(format!(
                "density must be positive, min is {}",
                field.min()
            )));
        }
        Ok(DensityField { field })
    }

    /// Validates against a model's admissible interval as well.
    pub fn for_model(field: Field, model: &MobilityModel) -> Result<DensityField> {
        let rho = DensityField::new(field)?;
        model.check_admissible(&rho.field)?;
        Ok(rho)
    }

    /// Rescales a positive field to unit mass.
    pub fn normalized(field: Field) -> Result<DensityField> {
        let mass = field.integrate();
        if !(mass > 0.0) {
            return Err(HydroError::InvalidArgument(
                "density has non-positive mass".into(),
            ));
        }
        DensityField::new(field.scale(1.0 / mass))
    }

    /// Uniform density `1/L`.
    pub fn uniform(grid: &Arc<Grid>) -> DensityField {
        DensityField {
            field: Field::constant(grid, 1.0 / grid.length()),
        }
    }

    /// `1/L + Σ a_k cos + b_k sin`; the mean is fixed by the mass constraint.
    pub fn from_fourier(grid: &Arc<Grid>, modes: &[(u32, f64, f64)]) -> Result<DensityField> {
        let modes: Vec<_> = modes.iter().copied().filter(|m| m.0 != 0).collect();
        DensityField::new(Field::fourier_series(grid, 1.0 / grid.length(), &modes))
    }

    pub(crate) fn from_field_unchecked(field: Field) -> DensityField {
        DensityField { field }
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.field.grid()
    }

    pub fn mass(&self) -> f64 {
        self.field.integrate()
    }
}

/// Stationary density `π` with its drift `E = ∂ₓ f′(π)`.
#[derive(Debug, Clone)]
pub struct EquilibriumSpec {
    pub pi: DensityField,
    pub drift: Field,
}

impl EquilibriumSpec {
    pub fn new(model: &MobilityModel, pi: DensityField) -> Result<EquilibriumSpec> {
        model.check_admissible(pi.field())?;
        let drift = pi.field().map(|p| model.fprime(p)).deriv();
        Ok(EquilibriumSpec { pi, drift })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn density(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> DensityField {
        DensityField::normalized(Field::from_fn(grid, f)).unwrap()
    }

    #[test]
    fn builtin_values() {
        let ind = MobilityModel::builtin("independent").unwrap();
        assert_eq!(ind.chi(0.5), 0.5);
        assert_eq!(ind.chi2(0.5), 0.0);
        let sep = MobilityModel::builtin("sep").unwrap();
        assert_eq!(sep.chi(0.5), 0.25);
        assert_eq!(sep.chi2(0.3), -2.0);
        let kmp = MobilityModel::builtin("kmp").unwrap();
        assert_eq!(kmp.chi(2.0), 4.0);
        assert_eq!(kmp.chi2(7.0), 2.0);
        assert!(matches!(
            MobilityModel::builtin("porous"),
            Err(HydroError::UnknownModel(_))
        ));
    }

    #[test]
    fn builtins_pass_verification() {
        for name in BUILTIN_NAMES {
            MobilityModel::builtin(name).unwrap().verify().unwrap();
        }
    }

    #[test]
    fn einstein_relation_gives_unit_diffusion() {
        for name in BUILTIN_NAMES {
            let m = MobilityModel::builtin(name).unwrap();
            for r in [0.1, 0.3, 0.5, 0.7, 0.9] {
                assert!(
                    (m.chi(r) * m.fsecond(r) - 1.0).abs() < 1e-14,
                    "{name} at {r}"
                );
            }
        }
    }

    #[test]
    fn bregman_identical_is_zero() {
        let g = Grid::unit(32).unwrap();
        let pi = density(&g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        for name in ["independent", "kmp"] {
            let m = MobilityModel::builtin(name).unwrap();
            assert!(m.bregman_divergence(&pi, &pi).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn bregman_independent_is_relative_entropy() {
        let g = Grid::unit(64).unwrap();
        let rho = density(&g, |x| 1.0 + 0.4 * (2.0 * PI * x).cos());
        let pi = density(&g, |x| 1.0 + 0.2 * (4.0 * PI * x).sin());
        let m = MobilityModel::builtin("independent").unwrap();
        let expected = rho
            .field()
            .zip_map(pi.field(), |r, p| r * r.ln() - r * p.ln())
            .integrate();
        let got = m.bregman_divergence(&rho, &pi).unwrap();
        assert!((got - expected).abs() < 1e-13);
    }

    #[test]
    fn bregman_kmp_matches_direct_quadrature() {
        let g = Grid::unit(128).unwrap();
        let rho = DensityField::uniform(&g);
        // π = 1 + 0.1 sin(2πx) already has unit mass.
        let pi =
            DensityField::new(Field::from_fn(&g, |x| 1.0 + 0.1 * (2.0 * PI * x).sin())).unwrap();
        let m = MobilityModel::builtin("kmp").unwrap();
        let h = g.spacing();
        let direct: f64 = (0..128)
            .map(|k| {
                let p = 1.0 + 0.1 * (2.0 * PI * k as f64 * h).sin();
                let q = 1.0 / p;
                (q - q.ln() - 1.0) * h
            })
            .sum();
        let got = m.bregman_divergence(&rho, &pi).unwrap();
        assert!((got - direct).abs() < 1e-10, "{got} vs {direct}");
    }

    #[test]
    fn slope_examples() {
        let g = Grid::unit(32).unwrap();
        let pi = density(&g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let rho = density(&g, |x| 1.0 + 0.2 * (2.0 * PI * x).cos());
        let kmp = MobilityModel::builtin("kmp").unwrap();
        assert!(kmp.free_energy_slope(&pi, &pi).unwrap().max_abs() == 0.0);
        let s = kmp.free_energy_slope(&rho, &pi).unwrap();
        let expected = pi.field().zip_map(rho.field(), |p, r| 1.0 / p - 1.0 / r);
        assert!((&s - &expected).max_abs() < 1e-14);
        // ρ/π ≡ c gives log c for independent particles; both have unit mass so c = 1.
        let ind = MobilityModel::builtin("independent").unwrap();
        assert!(ind.free_energy_slope(&pi, &pi).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn eval_mobility_examples() {
        let g2 = Grid::new(16, 2.0, 1.0).unwrap();
        let half = DensityField::uniform(&g2);
        let sep = MobilityModel::builtin("sep").unwrap();
        let mob = sep.eval_mobility(&half).unwrap();
        assert!(mob.chi.values().iter().all(|&v| v == 0.25));
        assert!(mob.chi1.values().iter().all(|&v| v == 0.0));
        assert!(mob.chi2.values().iter().all(|&v| v == -2.0));

        let g = Grid::unit(16).unwrap();
        let one = DensityField::uniform(&g);
        let kmp = MobilityModel::builtin("kmp").unwrap();
        let mob = kmp.eval_mobility(&one).unwrap();
        assert_eq!(
            (
                mob.chi.values()[3],
                mob.chi1.values()[3],
                mob.chi2.values()[3]
            ),
            (1.0, 2.0, 2.0)
        );

        // Unit mass on the unit torus forces a mean of 1, outside SEP's interval.
        assert!(matches!(
            sep.eval_mobility(&one),
            Err(HydroError::Inadmissible { .. })
        ));
    }

    #[test]
    fn custom_model_checks_derivatives() {
        let good = MobilityModel::custom("porous")
            .mobility(|r| r * r * r, |r| 3.0 * r * r, |r| 6.0 * r)
            .fprime(|r| 1.5 * r * r)
            .fsecond(|r| 3.0 * r)
            .diffusion(|r| 3.0 * r * r * r * r)
            .build()
            .unwrap();
        assert_eq!(good.convexity(), Convexity::Convex);

        let bad = MobilityModel::custom("typo")
            .mobility(|r| r * r, |r| 2.0 * r, |_| 3.0)
            .fprime(|r| -1.0 / r)
            .diffusion(|_| 1.0)
            .build();
        assert!(matches!(
            bad,
            Err(HydroError::ModelVerification { what: "chi''", .. })
        ));

        let missing = MobilityModel::custom("half").fprime(|r| r.ln()).build();
        assert!(matches!(missing, Err(HydroError::InvalidArgument(_))));
    }

    #[test]
    fn custom_model_without_f_integrates_bregman() {
        let kmp = MobilityModel::builtin("kmp").unwrap();
        let no_f = MobilityModel::custom("kmp-no-f")
            .mobility(|r| r * r, |r| 2.0 * r, |_| 2.0)
            .fprime(|r| -1.0 / r)
            .fsecond(|r| 1.0 / (r * r))
            .diffusion(|_| 1.0)
            .build()
            .unwrap();
        for (r, p) in [(0.5, 1.0), (1.7, 0.9), (1.0, 1.0), (3.0, 0.2)] {
            let a = kmp.bregman_pointwise(r, p);
            let b = no_f.bregman_pointwise(r, p);
            assert!(
                (a - b).abs() < 1e-12 * a.abs().max(1.0),
                "{r} {p}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn density_validation() {
        let g = Grid::unit(16).unwrap();
        assert!(DensityField::new(Field::constant(&g, 2.0)).is_err());
        assert!(
            DensityField::new(Field::from_fn(&g, |x| 1.0 + 2.0 * (2.0 * PI * x).sin())).is_err()
        );
        let d = DensityField::from_fourier(&g, &[(1, 0.2, 0.1)]).unwrap();
        assert!((d.mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_drift() {
        let g = Grid::unit(64).unwrap();
        let pi = density(&g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let kmp = MobilityModel::builtin("kmp").unwrap();
        let eq = EquilibriumSpec::new(&kmp, pi.clone()).unwrap();
        // ∂(−1/π) = π′/π²
        let expected = pi.field().deriv().zip_map(pi.field(), |dp, p| dp / (p * p));
        assert!((&eq.drift - &expected).max_abs() < 1e-10);
    }
}
