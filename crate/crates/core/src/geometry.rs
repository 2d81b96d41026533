//! First- and second-order geometry: Gamma operators, commutators, the
//! Levi-Civita connection and Hessians of local functionals.
//!
//! Everything is evaluated at a frozen density through a
//! [`ResponseOperator`]. Potentials enter as raw fields because nested Gamma
//! expressions are themselves used as potentials.

use std::sync::Arc;

use crate::error::{HydroError, Result};
use crate::grid::Field;
use crate::operator::{ResponseOperator, TangentField};

/// Weight used by [`gamma`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaOrder {
    Chi,
    ChiPrime,
    ChiDoublePrime,
}

/// `Γ_w(Φ₁, Φ₂) = Φ₁′ w(ρ) Φ₂′` with `w` one of `χ, χ′, χ″`.
pub fn gamma(order: GammaOrder, op: &ResponseOperator, phi1: &Field, phi2: &Field) -> Field {
    let w = match order {
        GammaOrder::Chi => op.chi(),
        GammaOrder::ChiPrime => op.chi1(),
        GammaOrder::ChiDoublePrime => op.chi2(),
    };
    gamma_weighted(w, phi1, phi2)
}

pub(crate) fn gamma_weighted(w: &Field, phi1: &Field, phi2: &Field) -> Field {
    // The product of the gradients is formed first so that swapping the
    // arguments gives bit-identical results.
    &(&phi1.deriv() * &phi2.deriv()) * w
}

/// `∂(w ∂Φ)` for an arbitrary weight.
pub(crate) fn weighted_laplacian(w: &Field, phi: &Field) -> Field {
    (w * &phi.deriv()).deriv()
}

/// Rate of change of `χ(ρ)` along `V_Φ`: `χ′(ρ)·V_Φ`.
pub(crate) fn directional_chi(op: &ResponseOperator, phi: &Field) -> Field {
    let v = op.laplacian(phi).scale(-1.0);
    &v * op.chi1()
}

/// `[V_Φ₁, V_Φ₂] = −Δ_{V_Φ₁χ}Φ₂ + Δ_{V_Φ₂χ}Φ₁`.
pub fn commutator(op: &ResponseOperator, phi1: &Field, phi2: &Field) -> TangentField {
    let w1 = directional_chi(op, phi1);
    let w2 = directional_chi(op, phi2);
    let c = &weighted_laplacian(&w2, phi1) - &weighted_laplacian(&w1, phi2);
    TangentField::from_field_unchecked(c.project_zero_mean())
}

/// Flux of the one-dimensional commutator: `χχ′(Φ₁″Φ₂′ − Φ₂″Φ₁′)`.
pub(crate) fn commutator_flux(op: &ResponseOperator, phi1: &Field, phi2: &Field) -> Field {
    let d1 = phi1.deriv();
    let d2 = phi2.deriv();
    let dd1 = d1.deriv();
    let dd2 = d2.deriv();
    let cross = &(&dd1 * &d2) - &(&dd2 * &d1);
    &(op.chi() * op.chi1()) * &cross
}

/// `[V_Φ₁, V_Φ₂] = ∂(χχ′(Φ₁″Φ₂′ − Φ₂″Φ₁′))`, valid on the one-dimensional torus.
pub fn commutator_1d_closed(op: &ResponseOperator, phi1: &Field, phi2: &Field) -> TangentField {
    TangentField::from_field_unchecked(commutator_flux(op, phi1, phi2).deriv().project_zero_mean())
}

/// `∇_{V_Φ₁} V_Φ₂ = −½{Δ_{V_Φ₁χ}Φ₂ − Δ_{V_Φ₂χ}Φ₁ + Δ_χ Γ_χ′(Φ₁, Φ₂)}`.
pub fn levi_civita(op: &ResponseOperator, phi1: &Field, phi2: &Field) -> TangentField {
    let w1 = directional_chi(op, phi1);
    let w2 = directional_chi(op, phi2);
    let g = gamma(GammaOrder::ChiPrime, op, phi1, phi2);
    let sum =
        &(&weighted_laplacian(&w1, phi2) - &weighted_laplacian(&w2, phi1)) + &op.laplacian(&g);
    TangentField::from_field_unchecked(sum.scale(-0.5).project_zero_mean())
}

/// `⟨∇_{V₁}V₂, V₃⟩ = ½∫{Γ_χ(Γ_χ′(Φ₂,Φ₃),Φ₁) − Γ_χ(Γ_χ′(Φ₁,Φ₃),Φ₂) + Γ_χ(Γ_χ′(Φ₁,Φ₂),Φ₃)} dx`.
pub fn connection_form(op: &ResponseOperator, phi1: &Field, phi2: &Field, phi3: &Field) -> f64 {
    let gp = |a: &Field, b: &Field| gamma(GammaOrder::ChiPrime, op, a, b);
    let gc = |a: &Field, b: &Field| gamma(GammaOrder::Chi, op, a, b);
    let t1 = gc(&gp(phi2, phi3), phi1).integrate();
    let t2 = gc(&gp(phi1, phi3), phi2).integrate();
    let t3 = gc(&gp(phi1, phi2), phi3).integrate();
    0.5 * (t1 - t2 + t3)
}

/// Derivative of `⟨V₂, V₃⟩` along `V₁` with the potentials held fixed:
/// `−∫ Φ₂ Δ_{V₁χ} Φ₃ dx`.
pub fn metric_derivative(op: &ResponseOperator, phi1: &Field, phi2: &Field, phi3: &Field) -> f64 {
    let w1 = directional_chi(op, phi1);
    -phi2.dot(&weighted_laplacian(&w1, phi3))
}

type DensityFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Local functional `F(ρ) = ∫ f(x, ρ(x)) dx` with its first two density
/// derivatives.
#[derive(Clone)]
pub struct LocalFunctional {
    f: DensityFn,
    df: DensityFn,
    d2f: DensityFn,
}

impl std::fmt::Debug for LocalFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("LocalFunctional")
    }
}

impl LocalFunctional {
    pub fn new(
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        d2f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> LocalFunctional {
        LocalFunctional {
            f: Arc::new(f),
            df: Arc::new(df),
            d2f: Arc::new(d2f),
        }
    }

    /// Linear functional `∫ V(x) ρ dx`.
    pub fn potential_energy(
        v: impl Fn(f64) -> f64 + Send + Sync + Clone + 'static,
    ) -> LocalFunctional {
        let v2 = v.clone();
        LocalFunctional::new(move |x, r| v(x) * r, move |x, _| v2(x), |_, _| 0.0)
    }

    pub fn value(&self, rho: &Field) -> f64 {
        let g = rho.grid();
        (0..g.n())
            .map(|k| (self.f)(g.node(k), rho.values()[k]))
            .sum::<f64>()
            * g.spacing()
    }

    /// `δF/δρ` as a field.
    pub fn first_variation(&self, rho: &Field) -> Field {
        self.pointwise(&self.df, rho)
    }

    /// Diagonal kernel of `δ²F/δρ²`.
    pub fn second_variation(&self, rho: &Field) -> Field {
        self.pointwise(&self.d2f, rho)
    }

    fn pointwise(&self, h: &DensityFn, rho: &Field) -> Field {
        let g = rho.grid();
        let vals = (0..g.n()).map(|k| h(g.node(k), rho.values()[k])).collect();
        Field::from_vec_unchecked(g, vals)
    }

    /// Central-difference check of both derivatives at the given `(x, ρ)`.
    pub fn verify(&self, points: &[(f64, f64)], tol: f64) -> Result<()> {
        for &(x, r) in points {
            let e = 1e-4 * r.abs().max(1e-2);
            let d1 = ((self.f)(x, r + e) - (self.f)(x, r - e)) / (2.0 * e);
            let d2 = ((self.df)(x, r + e) - (self.df)(x, r - e)) / (2.0 * e);
            let e1 = (d1 - (self.df)(x, r)).abs() / (self.df)(x, r).abs().max(1.0);
            let e2 = (d2 - (self.d2f)(x, r)).abs() / (self.d2f)(x, r).abs().max(1.0);
            if e1 > tol || e2 > tol {
                return Err(HydroError::InvalidArgument(format!(
                    "local functional derivatives inconsistent at x = {x}, rho = {r} \
                     (errors {e1:.2e}, {e2:.2e})"
                )));
            }
        }
        Ok(())
    }
}

/// `Hess F(V₁, V₂) = ∫ f_ρρ V₁ V₂ dx + ½∫ δF {−Δ_{V₁χ}Φ₂ − Δ_{V₂χ}Φ₁ + Δ_χ Γ_χ′(Φ₁,Φ₂)} dx`.
pub fn hessian_form(
    func: &LocalFunctional,
    op: &ResponseOperator,
    phi1: &Field,
    phi2: &Field,
) -> f64 {
    let rho = op.rho();
    let v1 = op.laplacian(phi1).scale(-1.0);
    let v2 = op.laplacian(phi2).scale(-1.0);
    let second = (&func.second_variation(rho) * &v1).dot(&v2);
    let w1 = directional_chi(op, phi1);
    let w2 = directional_chi(op, phi2);
    let g = gamma(GammaOrder::ChiPrime, op, phi1, phi2);
    let corr =
        &(&op.laplacian(&g) - &weighted_laplacian(&w1, phi2)) - &weighted_laplacian(&w2, phi1);
    second + 0.5 * func.first_variation(rho).dot(&corr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::models::{DensityField, MobilityModel};
    use crate::operator::PotentialField;
    use std::f64::consts::PI;

    fn op(name: &str, n: usize, amp: f64) -> ResponseOperator {
        let g = Grid::unit(n).unwrap();
        let rho = DensityField::new(Field::from_fn(&g, |x| {
            1.0 + amp * (2.0 * PI * x).sin() + 0.5 * amp * (4.0 * PI * x).cos()
        }))
        .unwrap();
        ResponseOperator::new(&MobilityModel::builtin(name).unwrap(), &rho).unwrap()
    }

    fn pot(op: &ResponseOperator, a: f64, b: f64) -> Field {
        Field::from_fn(op.grid(), |x| {
            (2.0 * PI * x + a).sin() + b * (4.0 * PI * x).cos() + 0.3 * (6.0 * PI * x + b).sin()
        })
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn gamma_examples() {
        let o = op("independent", 64, 0.0);
        let a = pot(&o, 0.1, 0.2);
        let b = pot(&o, 1.3, -0.4);
        let euclid = &a.deriv() * &b.deriv();
        assert!((&gamma(GammaOrder::Chi, &o, &a, &b) - &euclid).max_abs() < 1e-12);
        assert_eq!(gamma(GammaOrder::ChiDoublePrime, &o, &a, &b).max_abs(), 0.0);
        let k = op("kmp", 64, 0.0);
        let g = gamma(GammaOrder::ChiPrime, &k, &a, &b);
        assert!((&g - &euclid.scale(2.0)).max_abs() < 1e-12);
        let swapped = gamma(GammaOrder::ChiPrime, &k, &b, &a);
        assert!((&g - &swapped).max_abs() == 0.0);
    }

    #[test]
    fn commutator_examples() {
        let o = op("kmp", 64, 0.2);
        let a = pot(&o, 0.3, 0.1);
        assert!(commutator(&o, &a, &a).field().max_abs() == 0.0);
        let c = Field::constant(o.grid(), 1.5);
        assert!(commutator(&o, &a, &c).field().max_abs() < 1e-10);
        let b = pot(&o, 2.0, 0.7);
        let ab = commutator(&o, &a, &b);
        let ba = commutator(&o, &b, &a);
        assert!((ab.field() + ba.field()).max_abs() < 1e-10);
    }

    #[test]
    fn commutator_closed_form_agrees() {
        let o = op("independent", 128, 0.2);
        let s = Field::from_fn(o.grid(), |x| (2.0 * PI * x).sin());
        let c = Field::from_fn(o.grid(), |x| (2.0 * PI * x).cos());
        let general = commutator(&o, &s, &c);
        let closed = commutator_1d_closed(&o, &s, &c);
        let scale = general.field().max_abs();
        assert!((general.field() - closed.field()).max_abs() <= 1e-10 * scale);

        let flat = op("independent", 64, 0.0);
        let a = pot(&flat, 0.1, 0.5);
        let b = pot(&flat, 0.9, -0.2);
        let expected =
            (&(&a.deriv().deriv() * &b.deriv()) - &(&b.deriv().deriv() * &a.deriv())).deriv();
        assert!((commutator_1d_closed(&flat, &a, &b).field() - &expected).max_abs() < 1e-9);
    }

    #[test]
    fn levi_civita_identities() {
        let o = op("kmp", 128, 0.2);
        let a = pot(&o, 0.4, 0.3);
        let b = pot(&o, 1.1, -0.6);
        let ab = levi_civita(&o, &a, &b);
        let ba = levi_civita(&o, &b, &a);
        let sym = ab.field() + ba.field();
        let target = o.apply_response(&PotentialField::new(gamma(
            GammaOrder::ChiPrime,
            &o,
            &a,
            &b,
        )));
        assert!((&sym - target.field()).max_abs() <= 1e-10 * sym.max_abs());
        let anti = ab.field() - ba.field();
        let comm = commutator(&o, &a, &b);
        assert!((&anti - comm.field()).max_abs() <= 1e-10 * anti.max_abs());
    }

    #[test]
    fn levi_civita_flat_example() {
        let o = op("independent", 64, 0.0);
        let s = Field::from_fn(o.grid(), |x| (2.0 * PI * x).sin());
        let lc = levi_civita(&o, &s, &s);
        let g = Field::from_fn(o.grid(), |x| 4.0 * PI * PI * (2.0 * PI * x).cos().powi(2));
        let half_v = o.apply_response(&PotentialField::new(g)).field().scale(0.5);
        assert!((lc.field() - &half_v).max_abs() < 1e-9 * half_v.max_abs());
    }

    #[test]
    fn connection_form_matches_tangent_assembly() {
        let o = op("kmp", 128, 0.2);
        let (a, b, c) = (pot(&o, 0.2, 0.1), pot(&o, 1.7, 0.8), pot(&o, 2.9, -0.5));
        let cf = connection_form(&o, &a, &b, &c);
        let v3 = o.apply_response(&PotentialField::new(c.clone()));
        let lc = levi_civita(&o, &a, &b);
        let assembled = o.metric_inner_tangent(&lc, &v3).unwrap();
        assert!(rel(cf, assembled) < 1e-8, "{cf} vs {assembled}");
        let lhs = metric_derivative(&o, &a, &b, &c);
        let rhs = cf + connection_form(&o, &a, &c, &b);
        assert!(rel(lhs, rhs) < 1e-8, "{lhs} vs {rhs}");
        let flat = op("independent", 64, 0.0);
        let (a, b) = (pot(&flat, 0.2, 0.1), pot(&flat, 1.7, 0.8));
        let k = Field::constant(flat.grid(), 2.0);
        assert!(connection_form(&flat, &a, &b, &k).abs() < 1e-9);
    }

    #[test]
    fn hessian_examples() {
        let o = op("kmp", 128, 0.2);
        let a = pot(&o, 0.2, 0.1);
        let b = pot(&o, 1.7, 0.8);
        let linear = LocalFunctional::potential_energy(|x| (2.0 * PI * x).cos());
        let h = hessian_form(&linear, &o, &a, &b);
        let hs = hessian_form(&linear, &o, &b, &a);
        assert!(rel(h, hs) < 1e-10);

        // Constant first variation: only the second-variation term survives.
        let quad = LocalFunctional::new(|_, r| 0.5 * r * r, |_, r| r, |_, _| 1.0);
        let flat = op("kmp", 64, 0.0);
        let a = pot(&flat, 0.2, 0.1);
        let b = pot(&flat, 1.7, 0.8);
        let v1 = flat.laplacian(&a);
        let v2 = flat.laplacian(&b);
        let expected = v1.dot(&v2);
        assert!(rel(hessian_form(&quad, &flat, &a, &b), expected) < 1e-10);
    }

    #[test]
    fn local_functional_verification() {
        let ent = LocalFunctional::new(|_, r| r * r.ln(), |_, r| r.ln() + 1.0, |_, r| 1.0 / r);
        ent.verify(&[(0.0, 0.5), (0.3, 1.2), (0.9, 3.0)], 1e-6)
            .unwrap();
        let wrong = LocalFunctional::new(|_, r| r * r.ln(), |_, r| r.ln(), |_, r| 1.0 / r);
        assert!(wrong.verify(&[(0.0, 0.5)], 1e-6).is_err());
    }
}
