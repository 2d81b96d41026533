//! Riemann curvature and sectional curvature.
//!
//! Two routes are provided. [`riemann_general`] assembles the curvature
//! tensor from Gamma operators and the pseudo-inverse of the response
//! operator applied to commutators. [`riemann_1d`] is the one-dimensional
//! closed form `½∫ χ″χ² {…} dx`, whose sign follows the convexity of `χ`.
//!
//! On the torus the two routes differ by the constant-flux part of
//! `Δ_χ^†` applied to commutators: a commutator `∂p` is inverted to `p/χ − c`
//! where `c = ∫(p/χ) / ∫(1/χ)`, not to `p/χ`. [`harmonic_flux_correction`]
//! evaluates that difference so the two routes can be compared term by term.
//!
//! Integrands contain fourth-degree products, so inputs and intermediate
//! products that are differentiated again are filtered with the grid's
//! dealiasing fraction.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{HydroError, Result};
use crate::geometry::{commutator_flux, gamma, GammaOrder};
use std::sync::Arc;

use crate::grid::{Field, Grid};
use crate::operator::ResponseOperator;

/// Which formula produced a curvature value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    General,
    #[serde(rename = "closed_form_1d")]
    ClosedForm1d,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::General => "general",
            Method::ClosedForm1d => "closed_form_1d",
        }
    }
}

/// A curvature value with the tolerance scale used to judge cancellations:
/// the sum of the absolute values of the individual integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannValue {
    pub value: f64,
    pub scale: f64,
}

#[derive(Default)]
struct Accumulator {
    value: f64,
    scale: f64,
}

impl Accumulator {
    fn add(&mut self, coefficient: f64, integral: f64) {
        self.value += coefficient * integral;
        self.scale += (coefficient * integral).abs();
    }

    fn finish(self) -> RiemannValue {
        RiemannValue {
            value: self.value,
            scale: self.scale,
        }
    }
}

fn filtered(phis: [&Field; 4]) -> [Field; 4] {
    phis.map(|p| p.dealias())
}

/// `⟨R(V₁,V₂)V₃, V₄⟩` from Gamma operators and `Δ_χ^†` of commutators.
pub fn riemann_general(op: &ResponseOperator, phis: [&Field; 4]) -> Result<RiemannValue> {
    let p = filtered(phis);
    let lap: Vec<Field> = p.iter().map(|f| op.laplacian(f)).collect();
    let gpp = |a: usize, b: usize| gamma(GammaOrder::ChiDoublePrime, op, &p[a - 1], &p[b - 1]);
    let gp = |a: &Field, b: &Field| gamma(GammaOrder::ChiPrime, op, a, b).dealias();
    let gc = |a: &Field, b: &Field| gamma(GammaOrder::Chi, op, a, b);
    let mut acc = Accumulator::default();

    // Second-derivative block.
    let a_term = |a: usize, b: usize, c: usize, d: usize| {
        (&(&gpp(a, b) * &lap[c - 1]) * &lap[d - 1]).integrate()
    };
    acc.add(-0.5, a_term(2, 4, 1, 3));
    acc.add(-0.5, a_term(1, 3, 2, 4));
    acc.add(0.5, a_term(2, 3, 1, 4));
    acc.add(0.5, a_term(1, 4, 2, 3));

    // Nested Gamma block.
    let nested = |a: usize, b: usize, c: usize, d: usize| {
        let inner = gp(&p[a - 1], &p[b - 1]);
        let middle = gp(&inner, &p[c - 1]);
        gc(&middle, &p[d - 1]).integrate()
    };
    for (sign, (a, b, c, d)) in [
        (-1.0, (2, 4, 1, 3)),
        (-1.0, (2, 4, 3, 1)),
        (-1.0, (1, 3, 2, 4)),
        (-1.0, (1, 3, 4, 2)),
        (1.0, (2, 3, 1, 4)),
        (1.0, (2, 3, 4, 1)),
        (1.0, (1, 4, 2, 3)),
        (1.0, (1, 4, 3, 2)),
    ] {
        acc.add(0.25 * sign, nested(a, b, c, d));
    }
    let pair = |a: usize, b: usize, c: usize, d: usize| {
        gc(&gp(&p[a - 1], &p[b - 1]), &gp(&p[c - 1], &p[d - 1])).integrate()
    };
    acc.add(0.25, pair(1, 3, 2, 4));
    acc.add(-0.25, pair(2, 3, 1, 4));

    // Commutator block: −¼∫{[1,3]Δ†[2,4] − [2,3]Δ†[1,4] + 2[3,4]Δ†[1,2]},
    // with Δ_χ^† σ = −(solution Φ of −Δ_χ Φ = σ).
    let comm = |a: usize, b: usize| commutator_flux(op, &p[a - 1], &p[b - 1]).dealias().deriv();
    let c13 = comm(1, 3);
    let c23 = comm(2, 3);
    let c34 = comm(3, 4);
    let s24 = op.solve_field(&comm(2, 4))?;
    let s14 = op.solve_field(&comm(1, 4))?;
    let s12 = op.solve_field(&comm(1, 2))?;
    acc.add(0.25, c13.dot(&s24));
    acc.add(-0.25, c23.dot(&s14));
    acc.add(0.5, c34.dot(&s12));
    Ok(acc.finish())
}

/// Closed form `½∫ χ″χ² {−Φ₂′Φ₄′Φ₁″Φ₃″ − Φ₁′Φ₃′Φ₂″Φ₄″ + Φ₂′Φ₃′Φ₁″Φ₄″ + Φ₁′Φ₄′Φ₂″Φ₃″} dx`.
pub fn riemann_1d(op: &ResponseOperator, phis: [&Field; 4]) -> RiemannValue {
    let p = filtered(phis);
    let d1: Vec<Field> = p.iter().map(|f| f.deriv()).collect();
    let d2: Vec<Field> = d1.iter().map(|f| f.deriv()).collect();
    let weight = &(op.chi2() * op.chi()) * op.chi();
    let term = |a: usize, b: usize, c: usize, d: usize| {
        let prod = &(&(&d1[a - 1] * &d1[b - 1]) * &d2[c - 1]) * &d2[d - 1];
        (&weight * &prod).integrate()
    };
    let mut acc = Accumulator::default();
    acc.add(-0.5, term(2, 4, 1, 3));
    acc.add(-0.5, term(1, 3, 2, 4));
    acc.add(0.5, term(2, 3, 1, 4));
    acc.add(0.5, term(1, 4, 2, 3));
    acc.finish()
}

/// Difference `riemann_general − riemann_1d` predicted by the constant-flux
/// part of the pseudo-inverse:
/// `−¼(H(13,24) − H(23,14) + 2H(34,12))` with
/// `H(ab,cd) = (∫p_ab/χ)(∫p_cd/χ) / ∫(1/χ)` and `p_ab` the commutator flux.
pub fn harmonic_flux_correction(op: &ResponseOperator, phis: [&Field; 4]) -> f64 {
    let p = filtered(phis);
    let inv_chi = op.chi().map(|c| 1.0 / c);
    let total = inv_chi.integrate();
    let flux_mean = |a: usize, b: usize| {
        commutator_flux(op, &p[a - 1], &p[b - 1])
            .dealias()
            .dot(&inv_chi)
    };
    let h = |a: usize, b: usize, c: usize, d: usize| flux_mean(a, b) * flux_mean(c, d) / total;
    -0.25 * (h(1, 3, 2, 4) - h(2, 3, 1, 4) + 2.0 * h(3, 4, 1, 2))
}

/// Sectional curvature `K(V₁, V₂) = R(V₁,V₂,V₂,V₁) / Z`.
#[derive(Debug, Clone, Serialize)]
pub struct CurvatureReport {
    pub value: f64,
    pub numerator: f64,
    pub z: f64,
    pub method: Method,
    pub n: usize,
    pub model: String,
    #[serde(skip)]
    pub scale: f64,
    #[serde(skip)]
    pub fields_digest: String,
}

impl CurvatureReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `Z = g(V₁,V₁) g(V₂,V₂) − g(V₁,V₂)²`.
pub fn plane_normalization(op: &ResponseOperator, phi1: &Field, phi2: &Field) -> (f64, f64) {
    let g11 = op.metric_inner_fields(phi1, phi1);
    let g22 = op.metric_inner_fields(phi2, phi2);
    let g12 = op.metric_inner_fields(phi1, phi2);
    (g11 * g22 - g12 * g12, g11 * g22)
}

/// Sectional curvature of the plane spanned by `V_Φ₁, V_Φ₂`. Fails with
/// [`HydroError::DegeneratePlane`] when `Z ≤ 1e-12 g₁₁g₂₂`.
pub fn sectional(
    op: &ResponseOperator,
    phi1: &Field,
    phi2: &Field,
    method: Method,
) -> Result<CurvatureReport> {
    let a = phi1.dealias();
    let b = phi2.dealias();
    let (z, norms) = plane_normalization(op, &a, &b);
    let threshold = 1e-12 * norms;
    if !(z > threshold) {
        return Err(HydroError::DegeneratePlane { z, threshold });
    }
    let r = match method {
        Method::General => riemann_general(op, [&a, &b, &b, &a])?,
        Method::ClosedForm1d => sectional_numerator_1d(op, &a, &b),
    };
    Ok(CurvatureReport {
        value: r.value / z,
        numerator: r.value,
        z,
        method,
        n: op.grid().n(),
        model: op.model().name().to_string(),
        scale: r.scale / z,
        fields_digest: digest(op, &[phi1, phi2], method),
    })
}

/// `½∫ χ″χ² (Φ₂″Φ₁′ − Φ₁″Φ₂′)² dx`.
fn sectional_numerator_1d(op: &ResponseOperator, a: &Field, b: &Field) -> RiemannValue {
    let da = a.deriv();
    let db = b.deriv();
    let cross = &(&db.deriv() * &da) - &(&da.deriv() * &db);
    let integrand = &(&(op.chi2() * op.chi()) * op.chi()) * &(&cross * &cross);
    let value = 0.5 * integrand.integrate();
    let scale = 0.5 * integrand.map(f64::abs).integrate();
    RiemannValue { value, scale }
}

fn digest(op: &ResponseOperator, fields: &[&Field], method: Method) -> String {
    let mut h = Sha256::new();
    h.update(op.model().name().as_bytes());
    h.update(method.as_str().as_bytes());
    h.update((op.grid().n() as u64).to_le_bytes());
    h.update(op.grid().length().to_le_bytes());
    for v in op.rho().values() {
        h.update(v.to_le_bytes());
    }
    for f in fields {
        for v in f.values() {
            h.update(v.to_le_bytes());
        }
    }
    hex_string(&h.finalize())
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Pointwise left-hand side of the fourth-order Gamma identity on the torus,
/// built from the Euclidean `Γ₁(a,b) = a′b′`, together with the largest
/// magnitude of any single term.
#[derive(Debug, Clone)]
pub struct GammaIdentityResidual {
    pub residual: Field,
    pub term_scale: f64,
}

impl GammaIdentityResidual {
    /// `max |residual| / term_scale`, or 0 when every term vanishes.
    pub fn relative(&self) -> f64 {
        if self.term_scale == 0.0 {
            0.0
        } else {
            self.residual.max_abs() / self.term_scale
        }
    }
}

/// Evaluates the fourth-order Gamma identity on four potentials.
///
/// With dealiasing enabled the inputs are filtered to the retained band and
/// every product is formed on a grid fine enough to hold the quartic terms
/// exactly; the residual is then read off at the original nodes. Without
/// dealiasing the products are formed on the original grid and alias.
pub fn gamma_identity_residual(phis: [&Field; 4]) -> Result<GammaIdentityResidual> {
    let grid = Arc::clone(phis[0].grid());
    let fraction = grid.dealias_fraction();
    if fraction >= 1.0 {
        return Ok(gamma_identity_terms(phis.map(Field::clone), None));
    }
    let cutoff = grid.dealias_cutoff(fraction);
    // Quartic products of modes up to `cutoff` need `4·cutoff < n_fine/2`.
    let q = (8 * cutoff + 1).div_ceil(grid.n()).max(1);
    let fine = Grid::new(q * grid.n(), grid.length(), 1.0)?;
    let mut lifted = Vec::with_capacity(4);
    for p in filtered(phis) {
        lifted.push(p.resample(&fine)?.band_limit(cutoff));
    }
    let lifted: [Field; 4] = lifted.try_into().expect("four fields");
    let on_fine = gamma_identity_terms(lifted, Some(cutoff));
    let pick = |f: &Field| {
        let values = (0..grid.n()).map(|k| f.values()[k * q]).collect();
        Field::from_values(&grid, values)
    };
    Ok(GammaIdentityResidual {
        residual: pick(&on_fine.residual)?,
        term_scale: on_fine.term_scale,
    })
}

/// With `band = Some(c)` the inputs carry modes up to `c` and each product
/// is cut to the band it can occupy, which removes roundoff that nested
/// derivatives would otherwise amplify.
fn gamma_identity_terms(p: [Field; 4], band: Option<usize>) -> GammaIdentityResidual {
    let g1 = |a: &Field, b: &Field, factors: usize| {
        let prod = &a.deriv() * &b.deriv();
        match band {
            Some(c) => prod.band_limit(factors * c),
            None => prod,
        }
    };
    let d1: Vec<Field> = p.iter().map(|f| f.deriv()).collect();
    let d2: Vec<Field> = d1.iter().map(|f| f.deriv()).collect();
    let triple = |a: usize, b: usize, c: usize, d: usize| {
        g1(
            &g1(&g1(&p[a - 1], &p[b - 1], 2), &p[c - 1], 3),
            &p[d - 1],
            4,
        )
    };
    let cross = |a: usize, b: usize| &(&d2[a - 1] * &d1[b - 1]) - &(&d2[b - 1] * &d1[a - 1]);
    let mut terms: Vec<Field> = Vec::with_capacity(13);
    for (sign, (a, b, c, d)) in [
        (-1.0, (2, 4, 1, 3)),
        (-1.0, (2, 4, 3, 1)),
        (-1.0, (1, 3, 2, 4)),
        (-1.0, (1, 3, 4, 2)),
        (1.0, (2, 3, 1, 4)),
        (1.0, (2, 3, 4, 1)),
        (1.0, (1, 4, 2, 3)),
        (1.0, (1, 4, 3, 2)),
    ] {
        terms.push(triple(a, b, c, d).scale(sign));
    }
    terms.push(g1(&g1(&p[0], &p[2], 2), &g1(&p[1], &p[3], 2), 4));
    terms.push(g1(&g1(&p[1], &p[2], 2), &g1(&p[0], &p[3], 2), 4).scale(-1.0));
    terms.push(&cross(3, 1) * &cross(4, 2));
    terms.push((&cross(3, 2) * &cross(4, 1)).scale(-1.0));
    terms.push((&cross(2, 1) * &cross(4, 3)).scale(2.0));
    let term_scale = terms.iter().map(Field::max_abs).fold(0.0, f64::max);
    let mut residual = Field::zeros(p[0].grid());
    for t in &terms {
        residual = &residual + t;
    }
    GammaIdentityResidual {
        residual,
        term_scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::models::{DensityField, MobilityModel};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn op_at(name: &str, grid: &Arc<Grid>, amp: f64) -> ResponseOperator {
        let mean = 1.0 / grid.length();
        let l = grid.length();
        let rho = DensityField::new(Field::from_fn(grid, |x| {
            mean * (1.0 + amp * (2.0 * PI * x / l).sin() + 0.5 * amp * (4.0 * PI * x / l).cos())
        }))
        .unwrap();
        ResponseOperator::new(&MobilityModel::builtin(name).unwrap(), &rho).unwrap()
    }

    fn pot(grid: &Arc<Grid>, a: f64, b: f64) -> Field {
        let l = grid.length();
        Field::from_fn(grid, |x| {
            let t = 2.0 * PI * x / l;
            (t + a).sin() + b * (2.0 * t).cos() + 0.3 * (3.0 * t + b).sin()
                - 0.1 * (4.0 * t - a).cos()
        })
    }

    fn sin_cos(grid: &Arc<Grid>) -> (Field, Field) {
        (
            Field::from_fn(grid, |x| (2.0 * PI * x).sin()),
            Field::from_fn(grid, |x| (2.0 * PI * x).cos()),
        )
    }

    #[test]
    fn kmp_single_mode_values() {
        let g = Grid::new(64, 1.0, 2.0 / 3.0).unwrap();
        let o = op_at("kmp", &g, 0.0);
        let (s, c) = sin_cos(&g);
        let closed = sectional(&o, &s, &c, Method::ClosedForm1d).unwrap();
        let pi2 = PI * PI;
        assert!(
            (closed.value - 16.0 * pi2).abs() < 1e-10 * 16.0 * pi2,
            "{}",
            closed.value
        );
        assert!((closed.z - 4.0 * pi2 * pi2).abs() < 1e-9);
        let general = sectional(&o, &s, &c, Method::General).unwrap();
        assert!(
            (general.value - 64.0 * pi2).abs() < 1e-9 * 64.0 * pi2,
            "{}",
            general.value
        );
    }

    #[test]
    fn independent_single_mode_values() {
        let g = Grid::new(64, 1.0, 2.0 / 3.0).unwrap();
        let o = op_at("independent", &g, 0.0);
        let (s, c) = sin_cos(&g);
        let closed = sectional(&o, &s, &c, Method::ClosedForm1d).unwrap();
        assert_eq!(closed.value, 0.0);
        let general = sectional(&o, &s, &c, Method::General).unwrap();
        assert!((general.value - 12.0 * PI * PI).abs() < 1e-9 * 12.0 * PI * PI);
    }

    #[test]
    fn general_equals_closed_form_plus_flux_term() {
        for (name, len) in [("kmp", 1.0), ("sep", 2.0), ("independent", 1.0)] {
            let g = Grid::new(128, len, 2.0 / 3.0).unwrap();
            let o = op_at(name, &g, 0.3);
            let f = [
                pot(&g, 0.1, 0.4),
                pot(&g, 1.2, -0.3),
                pot(&g, 2.3, 0.7),
                pot(&g, 0.7, -0.9),
            ];
            let refs = [&f[0], &f[1], &f[2], &f[3]];
            let gen = riemann_general(&o, refs).unwrap();
            let closed = riemann_1d(&o, refs);
            let corr = harmonic_flux_correction(&o, refs);
            let gap = (gen.value - closed.value - corr).abs() / gen.scale;
            assert!(gap < 1e-9, "{name}: {gap}");
        }
    }

    #[test]
    fn antisymmetry_and_pair_symmetry() {
        let g = Grid::new(128, 1.0, 2.0 / 3.0).unwrap();
        let o = op_at("kmp", &g, 0.2);
        let f = [
            pot(&g, 0.1, 0.4),
            pot(&g, 1.2, -0.3),
            pot(&g, 2.3, 0.7),
            pot(&g, 0.7, -0.9),
        ];
        let r = |i: usize, j: usize, k: usize, l: usize| {
            riemann_general(&o, [&f[i], &f[j], &f[k], &f[l]]).unwrap()
        };
        let base = r(0, 1, 2, 3);
        assert!((base.value + r(1, 0, 2, 3).value).abs() < 1e-9 * base.scale);
        assert!((base.value + r(0, 1, 3, 2).value).abs() < 1e-9 * base.scale);
        assert!((base.value - r(2, 3, 0, 1).value).abs() < 1e-9 * base.scale);
        let same = r(0, 0, 2, 3);
        assert!(same.value.abs() < 1e-9 * same.scale);
        let bianchi = base.value + r(1, 2, 0, 3).value + r(2, 0, 1, 3).value;
        assert!(bianchi.abs() < 1e-9 * base.scale);

        let c =
            |i: usize, j: usize, k: usize, l: usize| riemann_1d(&o, [&f[i], &f[j], &f[k], &f[l]]);
        let base = c(0, 1, 2, 3);
        assert!((base.value - c(2, 3, 0, 1).value).abs() < 1e-13 * base.scale);
        let bianchi = base.value + c(1, 2, 0, 3).value + c(2, 0, 1, 3).value;
        assert!(bianchi.abs() < 1e-10 * base.scale);
    }

    #[test]
    fn independent_closed_form_is_exactly_flat() {
        let g = Grid::new(64, 1.0, 2.0 / 3.0).unwrap();
        let o = op_at("independent", &g, 0.3);
        let f = [
            pot(&g, 0.1, 0.4),
            pot(&g, 1.2, -0.3),
            pot(&g, 2.3, 0.7),
            pot(&g, 0.7, -0.9),
        ];
        assert_eq!(riemann_1d(&o, [&f[0], &f[1], &f[2], &f[3]]).value, 0.0);
    }

    #[test]
    fn sectional_is_scale_invariant_and_signed() {
        let g = Grid::new(128, 2.0, 2.0 / 3.0).unwrap();
        let o = op_at("sep", &g, 0.4);
        let a = pot(&g, 0.3, 0.2);
        let b = pot(&g, 1.9, -0.6);
        let k = sectional(&o, &a, &b, Method::ClosedForm1d).unwrap();
        assert!(k.value <= 0.0);
        let k2 = sectional(&o, &a.scale(-3.0), &b.scale(0.25), Method::ClosedForm1d).unwrap();
        assert!((k.value - k2.value).abs() < 1e-10 * k.value.abs());
        let kg = sectional(&o, &a, &b, Method::General).unwrap();
        let kg2 = sectional(&o, &a.scale(-3.0), &b.scale(0.25), Method::General).unwrap();
        assert!((kg.value - kg2.value).abs() < 1e-10 * kg.value.abs());
    }

    #[test]
    fn parallel_directions_are_rejected() {
        let g = Grid::new(64, 1.0, 2.0 / 3.0).unwrap();
        let o = op_at("kmp", &g, 0.2);
        let a = pot(&g, 0.3, 0.2);
        let err = sectional(&o, &a, &a.scale(2.0), Method::ClosedForm1d).unwrap_err();
        assert!(matches!(err, HydroError::DegeneratePlane { .. }));
    }

    #[test]
    fn report_json_has_expected_keys() {
        let g = Grid::new(32, 1.0, 2.0 / 3.0).unwrap();
        let o = op_at("kmp", &g, 0.0);
        let (s, c) = sin_cos(&g);
        let r = sectional(&o, &s, &c, Method::ClosedForm1d).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(keys.len(), 6);
        for k in ["value", "numerator", "z", "method", "n", "model"] {
            assert!(keys.contains(&k));
        }
        assert_eq!(v["method"], "closed_form_1d");
        assert_eq!(r.fields_digest.len(), 64);
    }

    #[test]
    fn gamma_identity_examples() {
        let g = Grid::new(256, 1.0, 2.0 / 3.0).unwrap();
        let a = pot(&g, 0.3, 0.2);
        assert!(
            gamma_identity_residual([&a, &a, &a, &a])
                .unwrap()
                .relative()
                < 1e-15
        );
        let f = [
            pot(&g, 0.1, 0.4),
            pot(&g, 1.2, -0.3),
            pot(&g, 2.3, 0.7),
            pot(&g, 0.7, -0.9),
        ];
        let r = gamma_identity_residual([&f[0], &f[1], &f[2], &f[3]]).unwrap();
        assert!(r.relative() < 1e-8, "{}", r.relative());
        assert_eq!(r.residual.len(), 256);
        let (s, c) = sin_cos(&g);
        let r = gamma_identity_residual([&s, &c, &c, &s]).unwrap();
        assert!(r.relative() < 1e-9, "{}", r.relative());
    }

    #[test]
    fn gamma_identity_aliases_without_dealiasing() {
        let broadband = |g: &Arc<Grid>, shift: f64| {
            Field::from_fn(g, |x| {
                (1..=12)
                    .map(|k| (2.0 * PI * k as f64 * x + shift * k as f64).sin() / k as f64)
                    .sum()
            })
        };
        let eval = |fraction: f64| {
            let g = Grid::new(64, 1.0, fraction).unwrap();
            let f = [0.1, 0.7, 1.3, 2.9].map(|s| broadband(&g, s));
            gamma_identity_residual([&f[0], &f[1], &f[2], &f[3]])
                .unwrap()
                .relative()
        };
        assert!(eval(2.0 / 3.0) < 1e-10);
        assert!(eval(1.0) > 1e-6);
    }
}
