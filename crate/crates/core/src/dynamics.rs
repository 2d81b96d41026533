//! Time integration on the density manifold.
//!
//! * [`gradient_flow`]: `∂ₜρ = ∂(χ(ρ) ∂(f′(ρ) − f′(π)))`, the steepest descent
//!   of the Bregman divergence.
//! * [`geodesic_flow`]: `∂ₜρ = −∂(χ∂Φ)`, `∂ₜΦ = −½ χ′(ρ)(∂Φ)² + c(t)`, with
//!   `c(t)` chosen to keep `Φ` zero mean.
//! * [`parallel_transport`]: transports a potential along a stored curve.
//! * [`distance`]: least-action path between two densities.
//!
//! All right-hand sides for `ρ` are spectral derivatives, so their integral
//! vanishes to roundoff and mass is conserved.

use std::io::Write;
use std::sync::Arc;

use crate::error::{HydroError, Result};
use crate::geometry::{commutator, gamma, GammaOrder};
use crate::grid::{fmt_f64, Field, Grid};
use crate::models::{DensityField, MobilityModel, ADMISSIBLE_MARGIN};
use crate::operator::{PotentialField, ResponseOperator, TangentField};

/// Explicit time integrators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Rk4,
}

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    pub store_every: usize,
    pub cfl_safety: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt: 1e-3,
            t_end: 1.0,
            integrator: Integrator::Rk4,
            store_every: 1,
            cfl_safety: 0.25,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(HydroError::InvalidArgument(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(HydroError::InvalidArgument(format!(
                "t_end must be non-negative, got {}",
                self.t_end
            )));
        }
        if self.store_every == 0 {
            return Err(HydroError::InvalidArgument(
                "store_every must be at least 1".into(),
            ));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(HydroError::InvalidArgument(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        Ok(())
    }
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// The density left the admissible interval during the step starting at `time`.
    AdmissibilityExit {
        time: f64,
    },
    /// The optimizer stopped before meeting its tolerance.
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
    },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }

    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::AdmissibilityExit { .. } => "admissibility_exit",
            RunStatus::NotConverged { .. } => "not_converged",
        }
    }
}

/// One long-format diagnostic record.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub time: f64,
    pub name: &'static str,
    pub value: f64,
}

/// Stored states of a run. `potentials[k]` is the `Φ` with
/// `∂ₜρ = −Δ_χ Φ` at `times[k]`; for least-action paths it is the potential
/// of the interval starting at `times[k]` (the last entry repeats).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub densities: Vec<DensityField>,
    pub potentials: Vec<PotentialField>,
    pub diagnostics: Vec<Diagnostic>,
    pub status: RunStatus,
    /// Number of steps whose `dt` was cut by the stability check.
    pub dt_reductions: usize,
}

impl Trajectory {
    fn new() -> Trajectory {
        Trajectory {
            times: Vec::new(),
            densities: Vec::new(),
            potentials: Vec::new(),
            diagnostics: Vec::new(),
            status: RunStatus::Completed,
            dt_reductions: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_density(&self) -> &DensityField {
        self.densities
            .last()
            .expect("trajectory has an initial state")
    }

    /// Values of one diagnostic in time order.
    pub fn series(&self, name: &str) -> Vec<(f64, f64)> {
        self.diagnostics
            .iter()
            .filter(|d| d.name == name)
            .map(|d| (d.time, d.value))
            .collect()
    }

    /// Wide format: `x` then one column per stored time.
    pub fn write_densities_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "x")?;
        for t in &self.times {
            write!(out, ",t={}", fmt_f64(*t))?;
        }
        writeln!(out)?;
        let Some(first) = self.densities.first() else {
            return Ok(());
        };
        let grid = first.grid();
        for k in 0..grid.n() {
            write!(out, "{}", fmt_f64(grid.node(k)))?;
            for d in &self.densities {
                write!(out, ",{}", fmt_f64(d.values()[k]))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Long format: `time,name,value`.
    pub fn write_diagnostics_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time,name,value")?;
        for d in &self.diagnostics {
            writeln!(out, "{},{},{}", fmt_f64(d.time), d.name, fmt_f64(d.value))?;
        }
        Ok(())
    }
}

fn rk4_combine(y: &Field, k: [&Field; 4], dt: f64) -> Field {
    let vals = (0..y.len())
        .map(|i| {
            y.values()[i]
                + dt / 6.0
                    * (k[0].values()[i]
                        + 2.0 * k[1].values()[i]
                        + 2.0 * k[2].values()[i]
                        + k[3].values()[i])
        })
        .collect();
    Field::from_vec_unchecked(y.grid(), vals)
}

/// `∂ₜρ = ∂(χ(ρ) ∂(f′(ρ) − f′(π)))`.
pub fn gradient_flow_rhs(model: &MobilityModel, rho: &Field, pi: &Field) -> Field {
    let slope = model.free_energy_slope_unchecked(rho, pi);
    let chi = rho.map(|r| model.chi(r));
    (&chi * &slope.deriv()).deriv()
}

/// `∫ χ(ρ) (∂(f′(ρ) − f′(π)))² dx`, the dissipation rate of the Bregman divergence.
pub fn dissipation(model: &MobilityModel, rho: &Field, pi: &Field) -> f64 {
    let ds = model.free_energy_slope_unchecked(rho, pi).deriv();
    (&rho.map(|r| model.chi(r)) * &ds).dot(&ds)
}

fn max_diffusion(model: &MobilityModel, rho: &Field) -> f64 {
    rho.values()
        .iter()
        .map(|&r| model.diffusion(r))
        .fold(0.0, f64::max)
}

struct Stepper {
    t: f64,
    t_end: f64,
    dt: f64,
    steps: usize,
}

impl Stepper {
    fn new(cfg: &FlowConfig) -> Stepper {
        Stepper {
            t: 0.0,
            t_end: cfg.t_end,
            dt: cfg.dt,
            steps: 0,
        }
    }

    fn done(&self) -> bool {
        self.t >= self.t_end - 1e-12 * self.t_end.max(1.0)
    }

    /// Step size for the next step given a stability limit; lands exactly on `t_end`.
    fn next_dt(&mut self, limit: f64, reductions: &mut usize) -> f64 {
        if self.dt > limit {
            self.dt = limit;
            *reductions += 1;
        }
        self.dt.min(self.t_end - self.t)
    }
}

/// Integrates the Onsager gradient flow towards `pi` with RK4.
///
/// The step is reduced whenever `dt > cfl_safety · h² / max D(ρ)`. If a step
/// leaves the admissible interval, the run stops at the last valid state
/// with [`RunStatus::AdmissibilityExit`].
pub fn gradient_flow(
    model: &MobilityModel,
    rho0: &DensityField,
    pi: &DensityField,
    cfg: &FlowConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    model.check_admissible(rho0.field())?;
    model.check_admissible(pi.field())?;
    if !rho0.grid().same_as(pi.grid()) {
        return Err(HydroError::GridMismatch);
    }
    let pi_f = pi.field();
    let h = rho0.grid().spacing();
    let mut traj = Trajectory::new();
    let mut rho = rho0.field().clone();
    let mut clock = Stepper::new(cfg);
    let record = |traj: &mut Trajectory, t: f64, rho: &Field, dt: f64| {
        let slope = model.free_energy_slope_unchecked(rho, pi_f);
        traj.times.push(t);
        traj.densities
            .push(DensityField::from_field_unchecked(rho.clone()));
        traj.potentials.push(PotentialField::new(slope.scale(-1.0)));
        let diss = dissipation(model, rho, pi_f);
        traj.diagnostics.extend([
            Diagnostic {
                time: t,
                name: "mass",
                value: rho.integrate(),
            },
            Diagnostic {
                time: t,
                name: "free_energy",
                value: model.bregman_unchecked(rho, pi_f),
            },
            Diagnostic {
                time: t,
                name: "dissipation",
                value: diss,
            },
            Diagnostic {
                time: t,
                name: "speed",
                value: diss,
            },
            Diagnostic {
                time: t,
                name: "dt",
                value: dt,
            },
        ]);
    };
    record(&mut traj, 0.0, &rho, cfg.dt);
    while !clock.done() {
        let limit = cfg.cfl_safety * h * h / max_diffusion(model, &rho);
        let dt = clock.next_dt(limit, &mut traj.dt_reductions);
        let f = |r: &Field| gradient_flow_rhs(model, r, pi_f);
        let k1 = f(&rho);
        let k2 = f(&rho.axpy(0.5 * dt, &k1));
        let k3 = f(&rho.axpy(0.5 * dt, &k2));
        let k4 = f(&rho.axpy(dt, &k3));
        let next = rk4_combine(&rho, [&k1, &k2, &k3, &k4], dt);
        if model.check_admissible(&next).is_err() {
            traj.status = RunStatus::AdmissibilityExit { time: clock.t };
            if traj.times.last() != Some(&clock.t) {
                record(&mut traj, clock.t, &rho, dt);
            }
            return Ok(traj);
        }
        rho = next;
        clock.t += dt;
        clock.steps += 1;
        if clock.steps % cfg.store_every == 0 || clock.done() {
            record(&mut traj, clock.t, &rho, dt);
        }
    }
    Ok(traj)
}

/// `g(V_Φ, V_Φ) = ∫ χ (∂Φ)² dx` at `ρ`.
pub fn speed(model: &MobilityModel, rho: &Field, phi: &Field) -> f64 {
    ResponseOperator::from_field(model, rho).metric_inner_fields(phi, phi)
}

fn geodesic_rhs(model: &MobilityModel, rho: &Field, phi: &Field) -> (Field, Field) {
    let op = ResponseOperator::from_field(model, rho);
    let drho = op.laplacian(phi).scale(-1.0);
    let dphi = gamma(GammaOrder::ChiPrime, &op, phi, phi)
        .scale(-0.5)
        .project_zero_mean()
        .remove_nyquist();
    (drho, dphi)
}

/// Advective stability limit `cfl_safety · h / max|χ′(ρ) ∂Φ|`.
fn advective_limit(model: &MobilityModel, rho: &Field, phi: &Field, cfl: f64) -> f64 {
    let dphi = phi.deriv();
    let speed = rho
        .values()
        .iter()
        .zip(dphi.values())
        .map(|(&r, &d)| (model.chi1(r) * d).abs())
        .fold(0.0, f64::max);
    if speed == 0.0 {
        f64::INFINITY
    } else {
        cfl * rho.grid().spacing() / speed
    }
}

/// Integrates the geodesic equations with RK4 from `(ρ₀, Φ₀)`.
pub fn geodesic_flow(
    model: &MobilityModel,
    rho0: &DensityField,
    phi0: &PotentialField,
    cfg: &FlowConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    model.check_admissible(rho0.field())?;
    if !rho0.grid().same_as(phi0.grid()) {
        return Err(HydroError::GridMismatch);
    }
    let mut traj = Trajectory::new();
    let mut rho = rho0.field().clone();
    let mut phi = phi0.field().remove_nyquist().project_zero_mean();
    let mut clock = Stepper::new(cfg);
    let record = |traj: &mut Trajectory, t: f64, rho: &Field, phi: &Field, dt: f64| {
        traj.times.push(t);
        traj.densities
            .push(DensityField::from_field_unchecked(rho.clone()));
        traj.potentials.push(PotentialField::new(phi.clone()));
        traj.diagnostics.extend([
            Diagnostic {
                time: t,
                name: "mass",
                value: rho.integrate(),
            },
            Diagnostic {
                time: t,
                name: "speed",
                value: speed(model, rho, phi),
            },
            Diagnostic {
                time: t,
                name: "dt",
                value: dt,
            },
        ]);
    };
    record(&mut traj, 0.0, &rho, &phi, cfg.dt);
    while !clock.done() {
        let limit = advective_limit(model, &rho, &phi, cfg.cfl_safety);
        let dt = clock.next_dt(limit, &mut traj.dt_reductions);
        let (k1r, k1p) = geodesic_rhs(model, &rho, &phi);
        let (k2r, k2p) = geodesic_rhs(model, &rho.axpy(0.5 * dt, &k1r), &phi.axpy(0.5 * dt, &k1p));
        let (k3r, k3p) = geodesic_rhs(model, &rho.axpy(0.5 * dt, &k2r), &phi.axpy(0.5 * dt, &k2p));
        let (k4r, k4p) = geodesic_rhs(model, &rho.axpy(dt, &k3r), &phi.axpy(dt, &k3p));
        let next_rho = rk4_combine(&rho, [&k1r, &k2r, &k3r, &k4r], dt);
        if model.check_admissible(&next_rho).is_err() {
            traj.status = RunStatus::AdmissibilityExit { time: clock.t };
            if traj.times.last() != Some(&clock.t) {
                record(&mut traj, clock.t, &rho, &phi, dt);
            }
            return Ok(traj);
        }
        phi = rk4_combine(&phi, [&k1p, &k2p, &k3p, &k4p], dt);
        rho = next_rho;
        clock.t += dt;
        clock.steps += 1;
        if clock.steps % cfg.store_every == 0 || clock.done() {
            record(&mut traj, clock.t, &rho, &phi, dt);
        }
    }
    Ok(traj)
}

fn transport_rhs(model: &MobilityModel, rho: &Field, phi: &Field, eta: &Field) -> Result<Field> {
    let op = ResponseOperator::from_field(model, rho);
    let bracket = commutator(&op, phi, eta);
    let lifted = op.solve_field(bracket.field())?;
    let g = gamma(GammaOrder::ChiPrime, &op, phi, eta);
    Ok((&lifted + &g)
        .scale(-0.5)
        .project_zero_mean()
        .remove_nyquist())
}

/// Transported potentials and the times at which they are given.
#[derive(Debug, Clone)]
pub struct Transport {
    pub times: Vec<f64>,
    pub etas: Vec<PotentialField>,
}

/// Solves `∂ₜη = −½ Δ_χ^†[V_Φ, V_η]·(−1) − ½ Γ_χ′(Φ, η)` along a stored curve,
/// i.e. `Δ_χ ∂ₜη = ½[V_Φ, V_η] − ½ Δ_χ Γ_χ′(Φ, η)`.
///
/// The curve must store every step with a uniform step size and an even
/// number of steps: RK4 advances by two stored steps, taking its midpoint
/// stage from the state in between. The result is given at every other
/// stored time.
pub fn parallel_transport(
    model: &MobilityModel,
    base: &Trajectory,
    eta0: &PotentialField,
) -> Result<Transport> {
    let m = base.times.len();
    if m < 3 || (m - 1) % 2 != 0 {
        return Err(HydroError::InvalidArgument(format!(
            "transport needs an even number of stored steps, got {}",
            m.saturating_sub(1)
        )));
    }
    if base.potentials.len() != m {
        return Err(HydroError::InvalidArgument(
            "base trajectory lacks potentials".into(),
        ));
    }
    let dt = base.times[1] - base.times[0];
    for w in base.times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt {
            return Err(HydroError::InvalidArgument(
                "base trajectory must be stored at every step with a uniform dt".into(),
            ));
        }
    }
    if !base.densities[0].grid().same_as(eta0.grid()) {
        return Err(HydroError::GridMismatch);
    }
    let mut eta = eta0.field().remove_nyquist().project_zero_mean();
    let mut out = Transport {
        times: vec![base.times[0]],
        etas: vec![PotentialField::new(eta.clone())],
    };
    let h = 2.0 * dt;
    for j in (0..m - 1).step_by(2) {
        let at = |k: usize| (base.densities[k].field(), base.potentials[k].field());
        let (r0, p0) = at(j);
        let (r1, p1) = at(j + 1);
        let (r2, p2) = at(j + 2);
        let k1 = transport_rhs(model, r0, p0, &eta)?;
        let k2 = transport_rhs(model, r1, p1, &eta.axpy(0.5 * h, &k1))?;
        let k3 = transport_rhs(model, r1, p1, &eta.axpy(0.5 * h, &k2))?;
        let k4 = transport_rhs(model, r2, p2, &eta.axpy(h, &k3))?;
        eta = rk4_combine(&eta, [&k1, &k2, &k3, &k4], h);
        out.times.push(base.times[j + 2]);
        out.etas.push(PotentialField::new(eta.clone()));
    }
    Ok(out)
}

/// Settings of the least-action optimizer.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Stop when the gradient norm falls below `gradient_tolerance · max(1, action)`.
    pub gradient_tolerance: f64,
    pub memory: usize,
    /// Weight of the penalty keeping intermediate densities admissible.
    pub penalty: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 2000,
            gradient_tolerance: 1e-11,
            memory: 12,
            penalty: 1e6,
        }
    }
}

/// Least-action distance and the optimal discrete path.
#[derive(Debug, Clone)]
pub struct DistanceResult {
    pub value: f64,
    pub action: f64,
    pub path: Trajectory,
    pub iterations: usize,
}

const CHI_FLOOR: f64 = 1e-12;

/// Direct transcription of the least-action problem with `n_time` intervals.
struct ActionProblem<'a> {
    model: &'a MobilityModel,
    grid: Arc<Grid>,
    rho0: Field,
    base: Field,
    k: usize,
    penalty: f64,
}

impl ActionProblem<'_> {
    fn dt(&self) -> f64 {
        1.0 / self.k as f64
    }

    /// Momenta `m_k = base + u_k − (ū − mean ū)`; the sum `Σ m_k Δt` then equals
    /// `base` plus a constant, so the path always ends at the target.
    fn momenta(&self, u: &[Field]) -> Vec<Field> {
        let n = self.grid.n();
        let mut ubar = vec![0.0; n];
        for f in u {
            for (a, v) in ubar.iter_mut().zip(f.values()) {
                *a += v / self.k as f64;
            }
        }
        let mean = ubar.iter().sum::<f64>() / n as f64;
        u.iter()
            .map(|f| {
                let vals = (0..n)
                    .map(|i| self.base.values()[i] + f.values()[i] - (ubar[i] - mean))
                    .collect();
                Field::from_vec_unchecked(&self.grid, vals)
            })
            .collect()
    }

    fn densities(&self, m: &[Field]) -> Vec<Field> {
        let dt = self.dt();
        let mut out = Vec::with_capacity(self.k + 1);
        out.push(self.rho0.clone());
        for mk in m {
            let next = out.last().unwrap().axpy(-dt, &mk.deriv());
            out.push(next);
        }
        out
    }

    /// Action (with floor and penalty) and its gradient with respect to `u`.
    fn evaluate(&self, u: &[Field]) -> (f64, Vec<Field>) {
        let n = self.grid.n();
        let h = self.grid.spacing();
        let dt = self.dt();
        let m = self.momenta(u);
        let rho = self.densities(&m);
        let (lo, hi) = self.model.admissible();
        let mut value = 0.0;
        let mut grad_m: Vec<Vec<f64>> = vec![vec![0.0; n]; self.k];
        let mut grad_rho: Vec<Vec<f64>> = vec![vec![0.0; n]; self.k + 1];
        for k in 0..self.k {
            for i in 0..n {
                let mid = 0.5 * (rho[k].values()[i] + rho[k + 1].values()[i]);
                let raw = self.model.chi(mid);
                let (chi, dchi) = if raw > CHI_FLOOR {
                    (raw, self.model.chi1(mid))
                } else {
                    (CHI_FLOOR, 0.0)
                };
                let mk = m[k].values()[i];
                value += dt * h * mk * mk / chi;
                grad_m[k][i] += 2.0 * dt * h * mk / chi;
                let d_mid = -dt * h * mk * mk * dchi / (chi * chi);
                grad_rho[k][i] += 0.5 * d_mid;
                grad_rho[k + 1][i] += 0.5 * d_mid;
            }
        }
        for (j, r) in rho.iter().enumerate().skip(1) {
            for i in 0..n {
                let v = r.values()[i];
                let below = (lo + ADMISSIBLE_MARGIN) - v;
                let above = v - (hi - ADMISSIBLE_MARGIN);
                if below > 0.0 {
                    value += self.penalty * h * below * below;
                    grad_rho[j][i] -= 2.0 * self.penalty * h * below;
                }
                if above > 0.0 {
                    value += self.penalty * h * above * above;
                    grad_rho[j][i] += 2.0 * self.penalty * h * above;
                }
            }
        }
        // ρ_j depends on m_l for l < j through −Δt ∂m_l; the adjoint of ∂ is −∂.
        let mut tail = vec![0.0; n];
        for l in (0..self.k).rev() {
            for (t, g) in tail.iter_mut().zip(&grad_rho[l + 1]) {
                *t += g;
            }
            let d = Field::from_vec_unchecked(&self.grid, tail.clone()).deriv();
            for (gm, dv) in grad_m[l].iter_mut().zip(d.values()) {
                *gm += dt * dv;
            }
        }
        // Chain through the momentum parametrisation (a symmetric projection).
        let grad_fields: Vec<Field> = grad_m
            .into_iter()
            .map(|g| Field::from_vec_unchecked(&self.grid, g))
            .collect();
        (value, self.project(&grad_fields))
    }

    fn project(&self, g: &[Field]) -> Vec<Field> {
        let n = self.grid.n();
        let mut gbar = vec![0.0; n];
        for f in g {
            for (a, v) in gbar.iter_mut().zip(f.values()) {
                *a += v / self.k as f64;
            }
        }
        let mean = gbar.iter().sum::<f64>() / n as f64;
        g.iter()
            .map(|f| {
                let vals = (0..n).map(|i| f.values()[i] - (gbar[i] - mean)).collect();
                Field::from_vec_unchecked(&self.grid, vals)
            })
            .collect()
    }

    /// Action without floor or penalty, and the minimum mobility met.
    fn exact_action(&self, m: &[Field], rho: &[Field]) -> (f64, f64) {
        let h = self.grid.spacing();
        let dt = self.dt();
        let mut action = 0.0;
        let mut min_chi = f64::INFINITY;
        for k in 0..self.k {
            for i in 0..self.grid.n() {
                let mid = 0.5 * (rho[k].values()[i] + rho[k + 1].values()[i]);
                let chi = self.model.chi(mid);
                min_chi = min_chi.min(chi);
                action += dt * h * m[k].values()[i].powi(2) / chi;
            }
        }
        (action, min_chi)
    }
}

/// Spectral antiderivative of a zero-mean field with no Nyquist content.
fn antiderivative(f: &Field) -> Field {
    let g = f.grid();
    let mut spec = g.forward(f.values());
    for (j, c) in spec.iter_mut().enumerate() {
        if j == 0 || j == g.n() / 2 {
            *c = rustfft::num_complex::Complex64::new(0.0, 0.0);
        } else {
            *c /= rustfft::num_complex::Complex64::new(0.0, g.wavenumber(j));
        }
    }
    Field::from_vec_unchecked(g, g.inverse(spec))
}

fn flat_dot(a: &[Field], b: &[Field]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            x.values()
                .iter()
                .zip(y.values())
                .map(|(p, q)| p * q)
                .sum::<f64>()
        })
        .sum()
}

fn flat_axpy(a: &[Field], s: f64, b: &[Field]) -> Vec<Field> {
    a.iter().zip(b).map(|(x, y)| x.axpy(s, y)).collect()
}

/// Least-action distance between `rho0` and `rho1` with `n_time` time intervals.
///
/// Unknowns are the momenta `m_k` on each interval; densities follow from the
/// discrete continuity equation `ρ_{k+1} = ρ_k − Δt ∂m_k`, which holds exactly.
/// The action `Σ_k Δt ∫ m_k² / χ(ρ_{k+½}) dx` is minimised by L-BFGS with
/// Armijo backtracking, starting from linear interpolation with momenta from
/// one elliptic solve per interval. Returns `sqrt(action)`.
pub fn distance(
    model: &MobilityModel,
    rho0: &DensityField,
    rho1: &DensityField,
    n_time: usize,
    opt: &OptimizerConfig,
) -> Result<DistanceResult> {
    if n_time == 0 {
        return Err(HydroError::InvalidArgument(
            "n_time must be at least 1".into(),
        ));
    }
    if !rho0.grid().same_as(rho1.grid()) {
        return Err(HydroError::GridMismatch);
    }
    model.check_admissible(rho0.field())?;
    model.check_admissible(rho1.field())?;
    let grid = Arc::clone(rho0.grid());
    let diff = rho0.field() - rho1.field();
    let problem = ActionProblem {
        model,
        grid: Arc::clone(&grid),
        rho0: rho0.field().clone(),
        base: antiderivative(&diff.project_zero_mean()),
        k: n_time,
        penalty: opt.penalty,
    };

    // Initial guess: linear interpolation, m_k = χ(ρ_{k+½}) ∂Φ_k with −Δ_χ Φ_k = ρ₁ − ρ₀.
    let sigma = TangentField::project(rho1.field() - rho0.field());
    let mut u: Vec<Field> = Vec::with_capacity(n_time);
    for k in 0..n_time {
        let t = (k as f64 + 0.5) / n_time as f64;
        let mid = rho0.field().axpy(t, &(rho1.field() - rho0.field()));
        let op = ResponseOperator::from_field(model, &mid);
        let phi = op.solve_field(sigma.field())?;
        let m = &op.chi().clone() * &phi.deriv();
        u.push(&m - &problem.base);
    }

    let (mut value, mut grad) = problem.evaluate(&u);
    let mut s_hist: Vec<Vec<Field>> = Vec::new();
    let mut y_hist: Vec<Vec<Field>> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut gnorm = flat_dot(&grad, &grad).sqrt();
    while iterations < opt.max_iterations {
        if gnorm <= opt.gradient_tolerance * value.max(1.0) {
            converged = true;
            break;
        }
        // Two-loop recursion.
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho_i = 1.0 / flat_dot(y, s);
            let a = rho_i * flat_dot(s, &q);
            q = flat_axpy(&q, -a, y);
            alphas.push((a, rho_i));
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma_k = flat_dot(s, y) / flat_dot(y, y);
            q = q.iter().map(|f| f.scale(gamma_k)).collect();
        } else {
            let scale = 1.0 / gnorm.max(1e-300);
            q = q
                .iter()
                .map(|f| f.scale(scale * value.max(1e-12).sqrt()))
                .collect();
        }
        for ((s, y), (a, rho_i)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho_i * flat_dot(y, &q);
            q = flat_axpy(&q, a - b, s);
        }
        let mut dir: Vec<Field> = q.iter().map(|f| f.scale(-1.0)).collect();
        let mut slope = flat_dot(&grad, &dir);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            dir = grad.iter().map(|f| f.scale(-1.0)).collect();
            slope = -gnorm * gnorm;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = flat_axpy(&u, step, &dir);
            let (tv, tg) = problem.evaluate(&trial);
            if tv <= value + 1e-4 * step * slope {
                accepted = Some((trial, tv, tg));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, tv, tg)) = accepted else {
            break;
        };
        let s: Vec<Field> = trial.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<Field> = tg.iter().zip(&grad).map(|(a, b)| a - b).collect();
        if flat_dot(&s, &y) > 1e-300 {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > opt.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        let decrease = value - tv;
        u = trial;
        value = tv;
        grad = tg;
        gnorm = flat_dot(&grad, &grad).sqrt();
        iterations += 1;
        if decrease <= 1e-16 * value.abs() && gnorm <= 1e3 * opt.gradient_tolerance * value.max(1.0)
        {
            converged = true;
            break;
        }
    }
    if value == 0.0 {
        converged = true;
    }

    let m = problem.momenta(&u);
    let rho = problem.densities(&m);
    let (action, min_chi) = problem.exact_action(&m, &rho);
    let mut path = Trajectory::new();
    let dt = problem.dt();
    for (k, r) in rho.iter().enumerate() {
        let t = k as f64 * dt;
        path.times.push(t);
        path.densities
            .push(DensityField::from_field_unchecked(r.clone()));
        let mk = &m[k.min(n_time - 1)];
        let mid = if k < n_time { 0.5 * 1.0 } else { 0.5 };
        let rho_mid = if k < n_time {
            rho[k].axpy(1.0, &rho[k + 1]).scale(mid)
        } else {
            rho[n_time - 1].axpy(1.0, &rho[n_time]).scale(mid)
        };
        let op = ResponseOperator::from_field(model, &rho_mid);
        let phi = op.solve_field(&mk.deriv().scale(-1.0))?;
        path.potentials.push(PotentialField::new(phi));
        path.diagnostics.push(Diagnostic {
            time: t,
            name: "mass",
            value: r.integrate(),
        });
    }
    path.diagnostics.push(Diagnostic {
        time: 1.0,
        name: "action",
        value: action,
    });
    path.diagnostics.push(Diagnostic {
        time: 1.0,
        name: "min_chi",
        value: min_chi,
    });
    path.diagnostics.push(Diagnostic {
        time: 1.0,
        name: "endpoint_error",
        value: (&rho[n_time] - rho1.field()).max_abs(),
    });
    if !converged {
        path.status = RunStatus::NotConverged {
            iterations,
            gradient_norm: gnorm,
        };
    }
    Ok(DistanceResult {
        value: action.max(0.0).sqrt(),
        action,
        path,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn dens(g: &Arc<Grid>, f: impl Fn(f64) -> f64) -> DensityField {
        DensityField::normalized(Field::from_fn(g, f)).unwrap()
    }

    #[test]
    fn stationary_gradient_flow() {
        let g = Grid::unit(32).unwrap();
        let pi = dens(&g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let m = MobilityModel::builtin("kmp").unwrap();
        let cfg = FlowConfig {
            dt: 1e-4,
            t_end: 0.01,
            ..FlowConfig::default()
        };
        let tr = gradient_flow(&m, &pi, &pi, &cfg).unwrap();
        for d in &tr.densities {
            assert!((d.field() - pi.field()).max_abs() <= 1e-10);
        }
    }

    #[test]
    fn independent_rhs_is_fokker_planck() {
        let g = Grid::unit(64).unwrap();
        let pi = dens(&g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let rho = dens(&g, |x| 1.0 + 0.2 * (4.0 * PI * x).cos());
        let m = MobilityModel::builtin("independent").unwrap();
        let rhs = gradient_flow_rhs(&m, rho.field(), pi.field());
        let log_ratio = rho.field().zip_map(pi.field(), |r, p| (r / p).ln());
        let direct = (rho.field() * &log_ratio.deriv()).deriv();
        assert!((&rhs - &direct).max_abs() <= 1e-10 * direct.max_abs());
    }

    #[test]
    fn gradient_flow_dissipates() {
        let g = Grid::unit(32).unwrap();
        let pi = dens(&g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let rho0 = dens(&g, |x| 1.0 + 0.4 * (2.0 * PI * x).cos());
        let m = MobilityModel::builtin("kmp").unwrap();
        let cfg = FlowConfig {
            dt: 1.0,
            t_end: 0.05,
            store_every: 10,
            ..FlowConfig::default()
        };
        let tr = gradient_flow(&m, &rho0, &pi, &cfg).unwrap();
        assert!(tr.dt_reductions > 0);
        let fe = tr.series("free_energy");
        for w in fe.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12);
        }
        for (_, mass) in tr.series("mass") {
            assert!((mass - 1.0).abs() < 1e-12);
        }
        assert!(fe.last().unwrap().1 < 0.5 * fe[0].1);
        assert!((tr.times.last().unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn zero_velocity_geodesic_is_constant() {
        let g = Grid::unit(32).unwrap();
        let rho0 = dens(&g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let m = MobilityModel::builtin("kmp").unwrap();
        let cfg = FlowConfig {
            dt: 1e-2,
            t_end: 0.1,
            ..FlowConfig::default()
        };
        let tr = geodesic_flow(&m, &rho0, &PotentialField::zeros(&g), &cfg).unwrap();
        assert!((tr.last_density().field() - rho0.field()).max_abs() == 0.0);
    }

    #[test]
    fn geodesic_speed_is_conserved() {
        let g = Grid::unit(64).unwrap();
        let rho0 = dens(&g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let phi0 = PotentialField::from_fn(&g, |x| {
            0.005 * (2.0 * PI * x).cos() + 0.002 * (4.0 * PI * x).sin()
        });
        let m = MobilityModel::builtin("kmp").unwrap();
        let cfg = FlowConfig {
            dt: 1e-3,
            t_end: 0.5,
            ..FlowConfig::default()
        };
        let tr = geodesic_flow(&m, &rho0, &phi0, &cfg).unwrap();
        let s = tr.series("speed");
        let drift = s
            .iter()
            .map(|(_, v)| (v - s[0].1).abs())
            .fold(0.0, f64::max)
            / s[0].1;
        assert!(drift < 1e-8, "{drift}");
    }

    #[test]
    fn transport_along_constant_curve_is_identity() {
        let g = Grid::unit(32).unwrap();
        let rho0 = dens(&g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let m = MobilityModel::builtin("kmp").unwrap();
        let cfg = FlowConfig {
            dt: 1e-2,
            t_end: 0.1,
            ..FlowConfig::default()
        };
        let tr = geodesic_flow(&m, &rho0, &PotentialField::zeros(&g), &cfg).unwrap();
        let eta0 = PotentialField::from_fn(&g, |x| (2.0 * PI * x).sin());
        let out = parallel_transport(&m, &tr, &eta0).unwrap();
        for e in &out.etas {
            assert!((e.field() - eta0.field()).max_abs() < 1e-14);
        }
    }

    #[test]
    fn velocity_is_self_parallel() {
        let g = Grid::unit(64).unwrap();
        let rho0 = dens(&g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let phi0 = PotentialField::from_fn(&g, |x| 0.01 * (2.0 * PI * x).cos());
        let m = MobilityModel::builtin("kmp").unwrap();
        let cfg = FlowConfig {
            dt: 1e-3,
            t_end: 0.2,
            ..FlowConfig::default()
        };
        let tr = geodesic_flow(&m, &rho0, &phi0, &cfg).unwrap();
        let out = parallel_transport(&m, &tr, &phi0).unwrap();
        let last = out.etas.last().unwrap();
        let phi_end = tr.potentials.last().unwrap();
        assert!((last.field() - phi_end.field()).max_abs() < 1e-9 * phi_end.field().max_abs());
    }

    #[test]
    fn transport_rejects_odd_or_nonuniform_bases() {
        let g = Grid::unit(32).unwrap();
        let rho0 = dens(&g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let m = MobilityModel::builtin("kmp").unwrap();
        let eta0 = PotentialField::from_fn(&g, |x| (2.0 * PI * x).sin());
        let odd = FlowConfig {
            dt: 1e-2,
            t_end: 0.03,
            ..FlowConfig::default()
        };
        let tr = geodesic_flow(&m, &rho0, &eta0, &odd).unwrap();
        assert!(matches!(
            parallel_transport(&m, &tr, &eta0),
            Err(HydroError::InvalidArgument(_))
        ));
        let sparse = FlowConfig {
            dt: 1e-2,
            t_end: 0.08,
            store_every: 2,
            ..FlowConfig::default()
        };
        let mut tr = geodesic_flow(&m, &rho0, &eta0, &sparse).unwrap();
        tr.times[2] += 1e-3;
        assert!(matches!(
            parallel_transport(&m, &tr, &eta0),
            Err(HydroError::InvalidArgument(_))
        ));
    }

    #[test]
    fn distance_to_self_is_zero() {
        let g = Grid::unit(16).unwrap();
        let rho = dens(&g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let m = MobilityModel::builtin("kmp").unwrap();
        let r = distance(&m, &rho, &rho, 8, &OptimizerConfig::default()).unwrap();
        assert!(r.value <= 1e-10);
        assert!(r.path.status.is_completed());
    }

    #[test]
    fn distance_path_satisfies_continuity() {
        let g = Grid::unit(16).unwrap();
        let a = dens(&g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let b = dens(&g, |x| 1.0 + 0.2 * (2.0 * PI * x).cos());
        let m = MobilityModel::builtin("kmp").unwrap();
        let r = distance(&m, &a, &b, 8, &OptimizerConfig::default()).unwrap();
        assert!(r.value > 0.0);
        assert!(r.path.series("endpoint_error")[0].1 < 1e-13);
        for (_, mass) in r.path.series("mass") {
            assert!((mass - 1.0).abs() < 1e-13);
        }
        let back = distance(&m, &b, &a, 8, &OptimizerConfig::default()).unwrap();
        assert!(
            (r.value - back.value).abs() <= 1e-6 * r.value,
            "{} vs {}",
            r.value,
            back.value
        );
    }

    #[test]
    fn csv_exports() {
        let g = Grid::unit(8).unwrap();
        let rho0 = dens(&g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let m = MobilityModel::builtin("kmp").unwrap();
        let cfg = FlowConfig {
            dt: 1e-3,
            t_end: 2e-3,
            ..FlowConfig::default()
        };
        let tr = gradient_flow(&m, &rho0, &DensityField::uniform(&g), &cfg).unwrap();
        let mut wide = Vec::new();
        tr.write_densities_csv(&mut wide).unwrap();
        let text = String::from_utf8(wide).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text
            .lines()
            .next()
            .unwrap()
            .starts_with("x,t=0.0000000000000000e0,"));
        let mut long = Vec::new();
        tr.write_diagnostics_csv(&mut long).unwrap();
        let text = String::from_utf8(long).unwrap();
        assert!(text.starts_with("time,name,value\n"));
        assert!(text.contains(",free_energy,"));
    }
}
