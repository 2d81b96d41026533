//! Brute-force geometry of the discrete density simplex.
//!
//! The grid densities with unit mass form an `(n−1)`-dimensional manifold,
//! charted by the first `n − 1` node values. The metric matrix is assembled
//! densely from the discrete response operator and inverted with a Cholesky
//! factorisation; Christoffel symbols and curvature then come from central
//! differences of the metric. Nothing here shares code with the analytic
//! connection and curvature formulas except the operator itself.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::curvature::{sectional, Method};
use crate::error::{HydroError, Result};
use crate::geometry::{connection_form, metric_derivative};
use crate::grid::{fmt_f64, Field, Grid};
use crate::models::{DensityField, MobilityModel};
use crate::operator::{ResponseOperator, MIN_MOBILITY};
use crate::sampling::FieldSampler;

/// Default step for first differences of the metric.
pub const CHRISTOFFEL_STEP: f64 = 1e-4;
/// Default step for second differences of the metric.
pub const RIEMANN_STEP: f64 = 1e-3;
/// Largest grid the oracle accepts.
pub const MAX_ORACLE_N: usize = 24;

/// A point of the chart: the first `n − 1` density values; the last one is
/// fixed by unit mass.
#[derive(Debug, Clone)]
pub struct Chart {
    grid: Arc<Grid>,
    coords: DVector<f64>,
}

impl Chart {
    pub fn from_density(rho: &DensityField) -> Chart {
        let n = rho.grid().n();
        Chart {
            grid: Arc::clone(rho.grid()),
            coords: DVector::from_iterator(n - 1, rho.values()[..n - 1].iter().copied()),
        }
    }

    pub fn new(grid: &Arc<Grid>, coords: Vec<f64>) -> Result<Chart> {
        if coords.len() + 1 != grid.n() {
            return Err(HydroError::InvalidArgument(format!(
                "chart of a {}-point grid needs {} coordinates, got {}",
                grid.n(),
                grid.n() - 1,
                coords.len()
            )));
        }
        Ok(Chart {
            grid: Arc::clone(grid),
            coords: DVector::from_vec(coords),
        })
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn dim(&self) -> usize {
        self.grid.n() - 1
    }

    pub fn h(&self) -> f64 {
        self.grid.spacing()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    fn density_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.coords.iter().copied().collect();
        v.push(1.0 / self.h() - self.coords.sum());
        v
    }

    /// The full density.
    pub fn reconstruct(&self) -> Result<DensityField> {
        DensityField::new(Field::from_values(&self.grid, self.density_values())?)
    }

    fn shifted(&self, dir: &DVector<f64>, step: f64) -> Chart {
        Chart {
            grid: Arc::clone(&self.grid),
            coords: &self.coords + dir * step,
        }
    }

    /// Chart components of a zero-mean grid vector: its first `n − 1` entries,
    /// since `e_i − e_n` pushes forward the `i`-th coordinate direction.
    pub fn components(&self, sigma: &Field) -> DVector<f64> {
        DVector::from_iterator(self.dim(), sigma.values()[..self.dim()].iter().copied())
    }

    /// Grid vector of chart components.
    pub fn pushforward(&self, v: &DVector<f64>) -> Field {
        let mut vals: Vec<f64> = v.iter().copied().collect();
        vals.push(-v.sum());
        Field::from_vec_unchecked(&self.grid, vals)
    }
}

/// Metric matrix at a chart point.
#[derive(Debug, Clone)]
pub struct MetricMatrix {
    pub g: DMatrix<f64>,
}

impl MetricMatrix {
    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn asymmetry(&self) -> f64 {
        (&self.g - self.g.transpose()).abs().max()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.g.clone().symmetric_eigenvalues().min()
    }

    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&(&self.g * b))
    }
}

/// Matrix of `−Δ_χ` in the node basis, symmetrised.
fn response_matrix(model: &MobilityModel, rho: &Field) -> DMatrix<f64> {
    let grid = rho.grid();
    let n = grid.n();
    let op = ResponseOperator::from_field(model, rho);
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = op.laplacian(&Field::from_vec_unchecked(grid, e));
        for i in 0..n {
            a[(i, j)] = -col.values()[i];
        }
    }
    (&a + a.transpose()) * 0.5
}

/// `g_ij = h (e_i − e_n)ᵀ (−Δ_χ)^† (e_j − e_n)`.
///
/// The pseudo-inverse is `(A + 11ᵀ/n)⁻¹ − 11ᵀ/n`; the second term drops out
/// on zero-mean vectors.
pub fn metric_matrix(chart: &Chart, model: &MobilityModel) -> Result<MetricMatrix> {
    let vals = chart.density_values();
    let (lo, hi) = model.admissible();
    if let Some(&bad) = vals.iter().find(|&&v| !(v > lo && v < hi)) {
        return Err(HydroError::InvalidArgument(format!(
            "chart point leaves the admissible interval ({lo}, {hi}): {bad}"
        )));
    }
    let rho = Field::from_vec_unchecked(chart.grid(), vals);
    let min_chi = rho
        .values()
        .iter()
        .map(|&r| model.chi(r))
        .fold(f64::INFINITY, f64::min);
    if !(min_chi >= MIN_MOBILITY) {
        return Err(HydroError::Conditioning {
            min_chi,
            threshold: MIN_MOBILITY,
        });
    }
    let n = chart.n();
    let a = response_matrix(model, &rho) + DMatrix::from_element(n, n, 1.0 / n as f64);
    let chol = a.cholesky().ok_or(HydroError::Conditioning {
        min_chi,
        threshold: MIN_MOBILITY,
    })?;
    let mut e = DMatrix::zeros(n, n - 1);
    for i in 0..n - 1 {
        e[(i, i)] = 1.0;
        e[(n - 1, i)] = -1.0;
    }
    let g = e.transpose() * chol.solve(&e) * chart.h();
    Ok(MetricMatrix {
        g: (&g + g.transpose()) * 0.5,
    })
}

/// First-kind Christoffel symbols `Γ_{kij} = ½(∂_i g_{jk} + ∂_j g_{ik} − ∂_k g_{ij})`,
/// indexed `[k][(i, j)]`.
#[derive(Debug, Clone)]
pub struct Christoffel {
    pub symbols: Vec<DMatrix<f64>>,
}

impl Christoffel {
    /// `Σ Γ_{kij} a^i b^j c^k`.
    pub fn contract(&self, a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> f64 {
        self.symbols
            .iter()
            .zip(c.iter())
            .map(|(gk, ck)| ck * a.dot(&(gk * b)))
            .sum()
    }

    /// Largest `|Γ_{kij} − Γ_{kji}|`.
    pub fn asymmetry(&self) -> f64 {
        self.symbols
            .iter()
            .map(|gk| (gk - gk.transpose()).abs().max())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.symbols
            .iter()
            .map(|gk| gk.abs().max())
            .fold(0.0, f64::max)
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(HydroError::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    Ok(())
}

fn directional_derivative(
    chart: &Chart,
    model: &MobilityModel,
    dir: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>> {
    let plus = metric_matrix(&chart.shifted(dir, step), model)?;
    let minus = metric_matrix(&chart.shifted(dir, -step), model)?;
    Ok((plus.g - minus.g) / (2.0 * step))
}

fn coordinate_derivatives(
    chart: &Chart,
    model: &MobilityModel,
    step: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let m = chart.dim();
    (0..m)
        .map(|i| {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            directional_derivative(chart, model, &e, step)
        })
        .collect()
}

/// Christoffel symbols by central differences of [`metric_matrix`].
pub fn christoffel_fd(chart: &Chart, model: &MobilityModel, step: f64) -> Result<Christoffel> {
    check_step(step)?;
    let m = chart.dim();
    let dg = coordinate_derivatives(chart, model, step)?;
    let symbols = (0..m)
        .map(|k| {
            DMatrix::from_fn(m, m, |i, j| {
                0.5 * (dg[i][(j, k)] + dg[j][(i, k)] - dg[k][(i, j)])
            })
        })
        .collect();
    Ok(Christoffel { symbols })
}

/// Sectional curvature of the discrete manifold on the plane of two chart
/// tangents, with the curvature tensor from second differences of `g`.
pub fn riemann_fd(
    chart: &Chart,
    model: &MobilityModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    step: f64,
) -> Result<f64> {
    check_step(step)?;
    // Sectional curvature is scale invariant; unit tangents keep the
    // difference steps meaningful in density units.
    let x = &(x / x.amax().max(f64::MIN_POSITIVE));
    let y = &(y / y.amax().max(f64::MIN_POSITIVE));
    let first_step = CHRISTOFFEL_STEP.min(step);
    let g0 = metric_matrix(chart, model)?;
    let dx = directional_derivative(chart, model, x, first_step)?;
    let dy = directional_derivative(chart, model, y, first_step)?;
    let de = coordinate_derivatives(chart, model, first_step)?;
    let second = |a: &DVector<f64>, b: &DVector<f64>| -> Result<DMatrix<f64>> {
        let at = |sa: f64, sb: f64| -> Result<DMatrix<f64>> {
            let c = Chart {
                grid: Arc::clone(chart.grid()),
                coords: chart.coords() + a * (sa * step) + b * (sb * step),
            };
            Ok(metric_matrix(&c, model)?.g)
        };
        Ok(
            (at(1.0, 1.0)? - at(1.0, -1.0)? - at(-1.0, 1.0)? + at(-1.0, -1.0)?)
                / (4.0 * step * step),
        )
    };
    // Lowered Christoffel vector Γ_k(a, b).
    let lowered = |a: &DVector<f64>, b: &DVector<f64>, da: &DMatrix<f64>, db: &DMatrix<f64>| {
        DVector::from_fn(chart.dim(), |k, _| {
            0.5 * (b.dot(&da.column(k)) + a.dot(&db.column(k)) - a.dot(&(&de[k] * b)))
        })
    };
    let gyy = lowered(y, y, &dy, &dy);
    let gxx = lowered(x, x, &dx, &dx);
    let gxy = lowered(x, y, &dx, &dy);
    let ginv = g0.g.clone().cholesky().ok_or(HydroError::Conditioning {
        min_chi: 0.0,
        threshold: MIN_MOBILITY,
    })?;
    let d2xy = second(x, y)?;
    let d2xx = second(x, x)?;
    let d2yy = second(y, y)?;
    let first = x.dot(&(&d2xy * y)) - 0.5 * y.dot(&(&d2xx * y)) - 0.5 * x.dot(&(&d2yy * x));
    let r = first - gyy.dot(&ginv.solve(&gxx)) + gxy.dot(&ginv.solve(&gxy));
    let z = g0.inner(x, x) * g0.inner(y, y) - g0.inner(x, y).powi(2);
    if !(z > 1e-12 * g0.inner(x, x) * g0.inner(y, y)) {
        return Err(HydroError::DegeneratePlane {
            z,
            threshold: 1e-12 * g0.inner(x, x) * g0.inner(y, y),
        });
    }
    Ok(r / z)
}

/// `V_Φ = −Δ_χΦ` at the chart point, in chart components.
pub fn chart_tangent(chart: &Chart, model: &MobilityModel, phi: &Field) -> DVector<f64> {
    let rho = Field::from_vec_unchecked(chart.grid(), chart.density_values());
    let op = ResponseOperator::from_field(model, &rho);
    chart.components(&op.laplacian(phi).scale(-1.0))
}

/// Analytic value of the chart Christoffel contraction for the tangents
/// `V_Φ₁, V_Φ₂, V_Φ₃`. Coordinate fields keep `σ` fixed rather than `Φ`, so
/// the connection form picks up `∫Φ₃ Δ_{V₁χ}Φ₂ dx`.
pub fn analytic_christoffel(op: &ResponseOperator, phis: [&Field; 3]) -> f64 {
    connection_form(op, phis[0], phis[1], phis[2])
        - metric_derivative(op, phis[0], phis[2], phis[1])
}

/// Quantity compared in a [`ComparisonTable`] row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Metric,
    Connection,
    Sectional,
}

impl Quantity {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::Metric => "metric",
            Quantity::Connection => "connection",
            Quantity::Sectional => "sectional",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub n: usize,
    pub quantity: Quantity,
    pub sample: usize,
    pub analytic: f64,
    pub oracle: f64,
}

impl ComparisonRow {
    pub fn abs_gap(&self) -> f64 {
        (self.analytic - self.oracle).abs()
    }

    pub fn rel_gap(&self) -> f64 {
        let d = self.analytic.abs();
        if d == 0.0 {
            self.abs_gap()
        } else {
            self.abs_gap() / d
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub model: String,
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n,quantity,sample,analytic,oracle,abs_gap,rel_gap")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.n,
                r.quantity.as_str(),
                r.sample,
                fmt_f64(r.analytic),
                fmt_f64(r.oracle),
                fmt_f64(r.abs_gap()),
                fmt_f64(r.rel_gap())
            )?;
        }
        Ok(())
    }

    pub fn rows_for(&self, quantity: Quantity) -> impl Iterator<Item = &ComparisonRow> {
        self.rows.iter().filter(move |r| r.quantity == quantity)
    }
}

/// Samples per quantity and grid size in [`compare_report`].
pub const REPORT_SAMPLES: usize = 2;
/// Grid of the converged analytic sectional curvature.
pub const REFERENCE_N: usize = 256;

/// Torus length used for a model: `2` for models bounded by `1`, so that a
/// unit-mass density can be admissible, otherwise `1`.
pub fn torus_length(model: &MobilityModel) -> f64 {
    if model.admissible().1 <= 1.0 {
        2.0
    } else {
        1.0
    }
}

/// Seeded comparison of oracle and analytic metric, connection and sectional
/// curvature. Inputs are trigonometric polynomials of degree at most 2, so
/// they are exact on every admissible grid. The metric and connection rows
/// compare against the analytic formulas on the same grid; the sectional row
/// compares against the general curvature formula at [`REFERENCE_N`] points.
pub fn compare_report(
    n_values: &[usize],
    model: &MobilityModel,
    seed: u64,
) -> Result<ComparisonTable> {
    for &n in n_values {
        if !(6..=MAX_ORACLE_N).contains(&n) {
            return Err(HydroError::InvalidArgument(format!(
                "oracle grid size must lie in [6, {MAX_ORACLE_N}], got {n}"
            )));
        }
    }
    let length = torus_length(model);
    let mut sampler = FieldSampler::new(seed).with_max_mode(2);
    let samples: Vec<_> = (0..REPORT_SAMPLES)
        .map(|_| {
            let rho_modes = sampler.modes();
            let amp = sampler.uniform(0.05, 0.2);
            let phis: Vec<_> = (0..3).map(|_| sampler.modes()).collect();
            (rho_modes, amp, phis)
        })
        .collect();
    let fine = Grid::new(REFERENCE_N, length, 1.0)?;
    let mut rows = Vec::new();
    for &n in n_values {
        let grid = Grid::new(n, length, 1.0)?;
        for (s, (rho_modes, amp, phi_modes)) in samples.iter().enumerate() {
            let density = |g: &Arc<Grid>| -> Result<DensityField> {
                let p = Field::fourier_series(g, 0.0, rho_modes);
                let scale = *amp / p.max_abs().max(1e-300);
                DensityField::for_model(p.map(|v| (1.0 + scale * v) / length), model)
            };
            let rho = density(&grid)?;
            let op = ResponseOperator::new(model, &rho)?;
            let phis: Vec<Field> = phi_modes
                .iter()
                .map(|m| Field::fourier_series(&grid, 0.0, m))
                .collect();
            let chart = Chart::from_density(&rho);
            let tangents: Vec<_> = phis
                .iter()
                .map(|p| chart_tangent(&chart, model, p))
                .collect();

            let g = metric_matrix(&chart, model)?;
            rows.push(ComparisonRow {
                n,
                quantity: Quantity::Metric,
                sample: s,
                analytic: op.metric_inner_fields(&phis[0], &phis[1]),
                oracle: g.inner(&tangents[0], &tangents[1]),
            });

            let gamma = christoffel_fd(&chart, model, CHRISTOFFEL_STEP)?;
            rows.push(ComparisonRow {
                n,
                quantity: Quantity::Connection,
                sample: s,
                analytic: analytic_christoffel(&op, [&phis[0], &phis[1], &phis[2]]),
                oracle: gamma.contract(&tangents[0], &tangents[1], &tangents[2]),
            });

            let fine_rho = density(&fine)?;
            let fine_op = ResponseOperator::new(model, &fine_rho)?;
            let f1 = Field::fourier_series(&fine, 0.0, &phi_modes[0]);
            let f2 = Field::fourier_series(&fine, 0.0, &phi_modes[1]);
            let analytic = sectional(&fine_op, &f1, &f2, Method::General)?.value;
            rows.push(ComparisonRow {
                n,
                quantity: Quantity::Sectional,
                sample: s,
                analytic,
                oracle: riemann_fd(&chart, model, &tangents[0], &tangents[1], RIEMANN_STEP)?,
            });
        }
    }
    Ok(ComparisonTable {
        model: model.name().to_string(),
        seed,
        rows,
    })
}
