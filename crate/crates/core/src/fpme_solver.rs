//! Time integration of `u_t + (-Δ)^s (u^m) = 0` on a one-dimensional grid.
//!
//! Implicit Euler with a damped Newton iteration on the nonnegative cone. The
//! Newton system `(I + dt A D) δ = -F`, with `D = m u^{m-1}`, is symmetrized by
//! `y = D δ` into `(D^{-1} + dt A) y = -F` and solved by Jacobi-preconditioned
//! conjugate gradients with FFT matrix-vector products. Where `u > 1` the update
//! is applied to `u^m`, which keeps Newton stable when `m` is large.
//!
//! Mass leaving `[-L, L]` is credited to a power-law tail `c|x|^{-(1+2s)}` when
//! the exterior is tail-compensated. The far-field contribution of `u^m` is
//! neglected: it is of order `c^m L^{-m(1+2s)}`.

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fracops::{DiscreteOperator, Exterior};
use crate::grid::{total_mass, Grid, Profile, Symmetry, TailModel};

/// Regularization added to `u^{m-1}` in the Newton Jacobian.
const EPS_REG: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum TimeStep {
    Fixed { dt: f64 },
    /// Grows `dt` by 1.5 on easy steps and halves it on Newton failure, keeping
    /// `dt ≤ max_ratio · t` once `t > 0`.
    Adaptive { dt0: f64, dt_min: f64, dt_max: f64, max_ratio: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImplicitEulerNewton,
    /// Forward Euler, sub-stepped to the monotonicity limit. Only for small `m`.
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub m: f64,
    pub s: f64,
    pub time_step: TimeStep,
    pub scheme: Scheme,
    pub exterior: Exterior,
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Steps needing at most this many Newton iterations count as easy.
    pub easy_newton: usize,
    /// Times at which full snapshots are stored (the final time is always stored).
    pub snapshot_times: Vec<f64>,
    /// Stop at the first step with `‖u_{k+1} - u_k‖_1 / dt` at or below this rate;
    /// the final time then acts as a budget.
    pub stop_rate: Option<f64>,
}

impl SolverConfig {
    pub fn new(m: f64, s: f64) -> Self {
        Self {
            m,
            s,
            time_step: TimeStep::Adaptive { dt0: 1e-6, dt_min: 1e-14, dt_max: 0.05, max_ratio: 0.1 },
            scheme: Scheme::ImplicitEulerNewton,
            exterior: Exterior::TailCompensated,
            newton_tol: 1e-10,
            max_newton: 50,
            easy_newton: 8,
            snapshot_times: Vec::new(),
            stop_rate: None,
        }
    }

    pub fn with_fixed_dt(mut self, dt: f64) -> Self {
        self.time_step = TimeStep::Fixed { dt };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 1.0) || !self.m.is_finite() {
            return Err(Error::config(format!("m must exceed 1, got {}", self.m)));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::config(format!("s must lie in (0, 1), got {}", self.s)));
        }
        match self.time_step {
            TimeStep::Fixed { dt } if !(dt > 0.0) => {
                return Err(Error::config(format!("time step must be positive, got {dt}")))
            }
            TimeStep::Adaptive { dt0, dt_min, dt_max, max_ratio } => {
                if !(dt0 > 0.0 && dt_min > 0.0 && dt_max >= dt_min && max_ratio > 0.0) {
                    return Err(Error::config("adaptive time step bounds must be positive and ordered"));
                }
            }
            _ => {}
        }
        if let Some(rate) = self.stop_rate {
            if !(rate > 0.0) {
                return Err(Error::config(format!("stop rate must be positive, got {rate}")));
            }
        }
        if !(self.newton_tol > 0.0) || self.max_newton == 0 {
            return Err(Error::config("Newton tolerance and iteration cap must be positive"));
        }
        Ok(())
    }

    fn tail_exponent(&self) -> f64 {
        1.0 + 2.0 * self.s
    }
}

/// Per-step diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    /// Domain mass plus the mass credited to the tail.
    pub mass: f64,
    pub exterior_mass: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub min: f64,
    pub newton_iterations: usize,
    pub newton_residual: f64,
    /// `min_i (u_{k+1} - u_k)/dt + u_k/((m-1) t_k)`; `NaN` on the first step.
    pub benilan_margin: f64,
    /// `‖u_{k+1} - u_k‖_1 / dt`.
    pub dudt_l1: f64,
    /// `2‖u_0‖_1 / ((m-1) t_k)`; infinite on the first step.
    pub dudt_bound: f64,
    /// `‖(-Δ)^s h - (u_0 - u)‖_∞` after the step.
    pub h_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub u: Profile<f64>,
    /// `h(x, t) = ∫_0^t u^m ds`, trapezoid rule in time.
    pub h: Profile<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub m: f64,
    pub s: f64,
    pub u0: Profile<f64>,
    pub initial_mass: f64,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    /// Time at which the stop rate was reached, if one was configured and met.
    pub stationary_at: Option<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory has at least one snapshot")
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    /// Largest relative deviation of the bookkept mass from the initial mass.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.initial_mass;
        self.records.iter().map(|r| ((r.mass - m0) / m0).abs()).fold(0.0, f64::max)
    }
}

/// Result of one Newton solve.
struct StepOutcome {
    u: Vec<f64>,
    g: Vec<f64>,
    iterations: usize,
    residual: f64,
    /// Mass that left the domain, `dt Σ w_i (A g)_i`.
    outflux: f64,
}

/// Reusable operator and workspace for one grid and configuration.
pub struct Stepper {
    config: SolverConfig,
    grid: Grid<f64>,
    op: DiscreteOperator<f64>,
    weights: Vec<f64>,
}

impl Stepper {
    pub fn new(grid: Grid<f64>, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        let op = DiscreteOperator::laplacian(grid, config.s)?;
        Ok(Self { config: config.clone(), grid, op, weights: grid.weights() })
    }

    pub fn operator(&self) -> &DiscreteOperator<f64> {
        &self.op
    }

    fn pow_m(&self, u: &[f64]) -> Vec<f64> {
        let m = self.config.m;
        u.iter().map(|&v| if v > 0.0 { v.powf(m) } else { 0.0 }).collect()
    }

    fn residual(&self, u: &[f64], u_old: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
        let g = self.pow_m(u);
        let ag = self.op.apply(&g);
        let f = u.iter().zip(u_old).zip(&ag).map(|((a, b), c)| a - b + dt * c).collect();
        (f, g)
    }

    /// Jacobi-preconditioned CG for `(diag(dinv) + dt A) y = rhs`.
    fn pcg(&self, dinv: &[f64], dt: f64, rhs: &[f64], tol: f64) -> (Vec<f64>, usize) {
        let n = rhs.len();
        let a0 = self.op.matrix().diagonal();
        let precond: Vec<f64> = dinv.iter().map(|d| 1.0 / (d + dt * a0)).collect();
        let matvec = |v: &[f64]| -> Vec<f64> {
            let av = self.op.apply(v);
            v.iter().zip(dinv).zip(&av).map(|((vi, di), ai)| di * vi + dt * ai).collect()
        };
        let mut y = vec![0.0; n];
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let max_iter = 4 * n.max(100);
        for it in 0..max_iter {
            let rmax = r.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if rmax <= tol {
                return (y, it);
            }
            let ap = matvec(&p);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                return (y, it);
            }
            let alpha = rz / pap;
            for i in 0..n {
                y[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..n {
                z[i] = r[i] * precond[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        (y, max_iter)
    }

    fn newton(&self, u_old: &[f64], dt: f64) -> Result<StepOutcome> {
        let m = self.config.m;
        let tol = self.config.newton_tol;
        let mut u = u_old.to_vec();
        let (mut f, mut g) = self.residual(&u, u_old, dt);
        let norm_inf = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut history = Vec::new();
        for it in 0..=self.config.max_newton {
            let r = norm_inf(&f);
            history.push(r);
            if r <= tol {
                let ag = self.op.apply(&g);
                let outflux = dt * ag.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>();
                return Ok(StepOutcome { u, g, iterations: it, residual: r, outflux });
            }
            if it == self.config.max_newton {
                break;
            }
            let d: Vec<f64> = u.iter().map(|&v| m * (v.max(0.0).powf(m - 1.0) + EPS_REG)).collect();
            let dinv: Vec<f64> = d.iter().map(|x| 1.0 / x).collect();
            let rhs: Vec<f64> = f.iter().map(|x| -x).collect();
            let cg_tol = (r.min(1e-2) * r).max(1e-2 * tol);
            let (y, cg_iters) = self.pcg(&dinv, dt, &rhs, cg_tol);
            debug!("newton it {it}: residual {r:.3e}, cg {cg_iters}");
            let merit = norm2(&f);
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> = u
                    .iter()
                    .zip(&y)
                    .zip(&d)
                    .map(|((&ui, &yi), &di)| {
                        if ui > 1.0 {
                            let v = ui.powf(m) + lambda * yi;
                            if v > 0.0 {
                                v.powf(1.0 / m)
                            } else {
                                0.0
                            }
                        } else {
                            (ui + lambda * yi / di).max(0.0)
                        }
                    })
                    .collect();
                let (ft, gt) = self.residual(&trial, u_old, dt);
                if norm2(&ft) < (1.0 - 1e-4 * lambda) * merit {
                    u = trial;
                    f = ft;
                    g = gt;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Err(Error::no_convergence(format!("Newton step (dt = {dt:.3e})"), history.len(), history))
    }

    fn explicit(&self, u_old: &[f64], dt: f64) -> Result<StepOutcome> {
        let m = self.config.m;
        let a0 = self.op.matrix().diagonal();
        let mut u = u_old.to_vec();
        let mut left = dt;
        let mut outflux = 0.0;
        let mut substeps = 0;
        while left > 0.0 {
            let dmax = u.iter().fold(0.0f64, |a, &v| a.max(m * v.max(0.0).powf(m - 1.0)));
            let cap = if dmax > 0.0 { 0.9 / (a0 * dmax) } else { left };
            let tau = left.min(cap);
            let g = self.pow_m(&u);
            let ag = self.op.apply(&g);
            outflux += tau * ag.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>();
            for (ui, ai) in u.iter_mut().zip(&ag) {
                *ui = (*ui - tau * ai).max(0.0);
            }
            left -= tau;
            substeps += 1;
            if substeps > 10_000_000 {
                return Err(Error::no_convergence("explicit sub-stepping", substeps, vec![left]));
            }
        }
        let g = self.pow_m(&u);
        Ok(StepOutcome { u, g, iterations: substeps, residual: 0.0, outflux })
    }

    fn advance(&self, u_old: &[f64], dt: f64) -> Result<StepOutcome> {
        match self.config.scheme {
            Scheme::ImplicitEulerNewton => self.newton(u_old, dt),
            Scheme::Explicit => self.explicit(u_old, dt),
        }
    }

    fn tail_for(&self, exterior_mass: f64) -> TailModel {
        if exterior_mass <= 0.0 {
            return TailModel::None;
        }
        let p = self.config.tail_exponent();
        let l = self.grid.half_width();
        TailModel::Power { p, c: exterior_mass * (p - 1.0) * l.powf(p - 1.0) / 2.0 }
    }

    fn profile(&self, values: Vec<f64>, symmetric: bool, tail: TailModel) -> Profile<f64> {
        let mut p = Profile { grid: self.grid, values, symmetry: Symmetry::None, tail };
        if symmetric {
            p.symmetrize();
        }
        p
    }
}

fn exterior_mass_of(u: &Profile<f64>) -> Result<f64> {
    u.tail.mass_beyond(u.grid.half_width())
}

fn check_initial(u: &Profile<f64>) -> Result<()> {
    if u.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("initial data contain non-finite values"));
    }
    if u.min() < -1e-10 {
        return Err(Error::config(format!("initial data must be nonnegative (min {})", u.min())));
    }
    Ok(())
}

/// One implicit Euler step `u⁺ + dt (-Δ)^s (u⁺)^m = u`.
pub fn step(u: &Profile<f64>, dt: f64, config: &SolverConfig) -> Result<Profile<f64>> {
    check_initial(u)?;
    if !(dt > 0.0) {
        return Err(Error::config(format!("time step must be positive, got {dt}")));
    }
    let stepper = Stepper::new(u.grid, config)?;
    let mut start = u.clone();
    start.clamp_negative();
    let out = stepper.advance(&start.values, dt)?;
    let mut ext = exterior_mass_of(u)?;
    if config.exterior != Exterior::ZeroExtension {
        ext += out.outflux;
    }
    let tail = stepper.tail_for(ext);
    let mut next = stepper.profile(out.u, u.symmetry == Symmetry::Even, tail);
    next.clamp_negative();
    Ok(next)
}

/// Integrates from `u0` to `t_end`, storing diagnostics for every step and
/// snapshots at the configured times.
pub fn evolve(u0: &Profile<f64>, t_end: f64, config: &SolverConfig) -> Result<Trajectory> {
    check_initial(u0)?;
    if !(t_end > 0.0) {
        return Err(Error::config(format!("final time must be positive, got {t_end}")));
    }
    let stepper = Stepper::new(u0.grid, config)?;
    let even = u0.symmetry == Symmetry::Even;
    let m = config.m;
    let w = u0.grid.weights();
    let mut u = u0.clone();
    u.clamp_negative();
    let mut ext = exterior_mass_of(&u)?;
    let initial_mass = total_mass(&u)?;
    let u0_l1 = initial_mass;
    let mut g_prev = stepper.pow_m(&u.values);
    let mut h = vec![0.0; u.grid.len()];
    let mut t = 0.0;
    let mut targets: Vec<f64> = config.snapshot_times.iter().copied().filter(|&s| s > 0.0 && s < t_end).collect();
    targets.push(t_end);
    targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    targets.dedup();
    let mut next_target = 0;
    let mut dt = match config.time_step {
        TimeStep::Fixed { dt } => dt,
        TimeStep::Adaptive { dt0, .. } => dt0,
    };
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let time_eps = 1e-12 * t_end;
    let mut stationary_at = None;
    while next_target < targets.len() {
        let target = targets[next_target];
        let mut dt_try = dt;
        if let TimeStep::Adaptive { dt_max, max_ratio, .. } = config.time_step {
            dt_try = dt_try.min(dt_max);
            if t > 0.0 {
                dt_try = dt_try.min(max_ratio * t);
            }
        }
        let hits_target = t + dt_try >= target - time_eps;
        if hits_target {
            dt_try = target - t;
        }
        let out = match stepper.advance(&u.values, dt_try) {
            Ok(out) => out,
            Err(e @ Error::NonConvergence { .. }) => match config.time_step {
                TimeStep::Adaptive { dt_min, .. } if dt_try > dt_min => {
                    debug!("step at t = {t:.4e} failed with dt = {dt_try:.3e}; halving");
                    dt = (0.5 * dt_try).max(dt_min);
                    continue;
                }
                _ => return Err(e),
            },
            Err(e) => return Err(e),
        };
        let t_new = if hits_target { target } else { t + dt_try };
        if config.exterior != Exterior::ZeroExtension {
            ext += out.outflux;
        }
        let mut next = stepper.profile(out.u, even, stepper.tail_for(ext));
        next.clamp_negative();
        for (i, hi) in h.iter_mut().enumerate() {
            *hi += 0.5 * dt_try * (g_prev[i] + out.g[i]);
        }
        let mut benilan = f64::NAN;
        let mut dudt = 0.0;
        for i in 0..u.grid.len() {
            let q = (next.values[i] - u.values[i]) / dt_try;
            dudt += w[i] * q.abs();
            if t > 0.0 {
                let margin = q + u.values[i] / ((m - 1.0) * t);
                if benilan.is_nan() || margin < benilan {
                    benilan = margin;
                }
            }
        }
        let dudt_bound = if t > 0.0 { 2.0 * u0_l1 / ((m - 1.0) * t) } else { f64::INFINITY };
        let ah = stepper.operator().apply(&h);
        let h_res = (0..ah.len()).fold(0.0f64, |acc, i| acc.max((ah[i] - (u0.values[i] - next.values[i])).abs()));
        let domain: f64 = next.values.iter().zip(&w).map(|(a, b)| a * b).sum();
        records.push(StepRecord {
            t: t_new,
            dt: dt_try,
            mass: domain + ext,
            exterior_mass: ext,
            l1: next.lp_norm(1.0),
            l2: next.lp_norm(2.0),
            linf: next.lp_norm(f64::INFINITY),
            min: next.min(),
            newton_iterations: out.iterations,
            newton_residual: out.residual,
            benilan_margin: benilan,
            dudt_l1: dudt,
            dudt_bound,
            h_residual: h_res,
        });
        g_prev = out.g;
        u = next;
        t = t_new;
        if let Some(rate) = config.stop_rate {
            if records.len() > 1 && dudt <= rate {
                let hp = stepper.profile(h.clone(), even, TailModel::None);
                snapshots.push(Snapshot { t, u: u.clone(), h: hp });
                stationary_at = Some(t);
                break;
            }
        }
        if hits_target {
            let hp = stepper.profile(h.clone(), even, TailModel::None);
            snapshots.push(Snapshot { t, u: u.clone(), h: hp });
            next_target += 1;
        }
        if let TimeStep::Adaptive { .. } = config.time_step {
            if !hits_target && out.iterations <= config.easy_newton {
                dt = 1.5 * dt_try;
            } else if !hits_target {
                dt = dt_try;
            }
        }
    }
    info!(
        "evolved m = {}, s = {} to t = {t_end} in {} steps (mass drift {:.2e})",
        config.m,
        config.s,
        records.len(),
        records.iter().map(|r| ((r.mass - initial_mass) / initial_mass).abs()).fold(0.0, f64::max)
    );
    Ok(Trajectory { m: config.m, s: config.s, u0: u0.clone(), initial_mass, records, snapshots, stationary_at })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenilanReport {
    /// Smallest margin of the time-monotonicity bound over all nodes and steps.
    pub worst_margin: f64,
    pub worst_time: f64,
    pub violations: usize,
    /// Largest `‖∂_t u‖_1 / (2‖u_0‖_1 / ((m-1)t))` observed.
    pub worst_dudt_ratio: f64,
    pub steps_checked: usize,
}

/// Verifies `∂_t u ≥ -u/((m-1)t)` and the `L¹` time-derivative bound on a trajectory.
pub fn check_benilan(traj: &Trajectory, tol: f64) -> BenilanReport {
    let mut worst = f64::INFINITY;
    let mut worst_t = 0.0;
    let mut violations = 0;
    let mut ratio = 0.0f64;
    let mut checked = 0;
    for r in traj.records.iter().filter(|r| !r.benilan_margin.is_nan()) {
        checked += 1;
        if r.benilan_margin < worst {
            worst = r.benilan_margin;
            worst_t = r.t - r.dt;
        }
        if r.benilan_margin < -tol {
            violations += 1;
        }
        if r.dudt_bound.is_finite() {
            ratio = ratio.max(r.dudt_l1 / r.dudt_bound);
        }
    }
    BenilanReport { worst_margin: worst, worst_time: worst_t, violations, worst_dudt_ratio: ratio, steps_checked: checked }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HResidualReport {
    /// `(t, ‖(-Δ)^s h(t) - (u_0 - u(t))‖_∞)` per snapshot.
    pub residuals: Vec<(f64, f64)>,
    pub max_residual: f64,
}

/// Self-consistency of the accumulated `h = ∫ u^m` with `(-Δ)^s h = u_0 - u`.
pub fn h_residual(traj: &Trajectory) -> Result<HResidualReport> {
    let op = DiscreteOperator::laplacian(traj.u0.grid, traj.s)?;
    let mut residuals = Vec::new();
    for snap in &traj.snapshots {
        let ah = op.apply(&snap.h.values);
        let r = ah
            .iter()
            .zip(&traj.u0.values)
            .zip(&snap.u.values)
            .fold(0.0f64, |acc, ((a, u0), u)| acc.max((a - (u0 - u)).abs()));
        residuals.push((snap.t, r));
    }
    let max_residual = residuals.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(HResidualReport { residuals, max_residual })
}

/// `‖f - g‖_1` on a shared grid, tails ignored.
pub fn l1_distance(f: &Profile<f64>, g: &Profile<f64>) -> f64 {
    let w = f.grid.weights();
    f.values.iter().zip(&g.values).zip(&w).map(|((a, b), wi)| (a - b).abs() * wi).sum()
}

/// Invariant checks on one ordered pair `u_{0a} ≤ u_{0b}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub index: usize,
    pub m: f64,
    pub s: f64,
    pub initial_distance: f64,
    /// `max_t ‖u_a - u_b‖_1 - ‖u_{0a} - u_{0b}‖_1`.
    pub contraction_excess: f64,
    /// `max_{t,i} (u_a - u_b)`.
    pub comparison_excess: f64,
    /// Largest `‖u(t)‖_p - ‖u_0‖_p` over `p ∈ {1, 2, ∞}` and both runs.
    pub lp_excess: f64,
    pub mass_drift: f64,
    pub benilan_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub seed: u64,
    pub pairs: Vec<PairCheck>,
    pub worst_mass_drift: f64,
    pub worst_contraction_excess: f64,
    pub worst_comparison_excess: f64,
    pub worst_lp_excess: f64,
    pub worst_benilan_margin: f64,
}

/// Smooth random datum supported in `[-2, 2]`: a sum of `(1 - ((x - c)/w)^2)_+^2` bumps.
fn random_bumps(grid: Grid<f64>, rng: &mut ChaCha8Rng, count: usize, max_height: f64) -> Profile<f64> {
    let bumps: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| (rng.random_range(-1.2..1.2), rng.random_range(0.3..0.8), rng.random_range(0.1..max_height)))
        .collect();
    Profile::from_fn(grid, |x| {
        bumps.iter().map(|&(c, w, a)| a * (1.0 - ((x - c) / w).powi(2)).max(0.0).powi(2)).sum()
    })
}

fn lp_triplet(u: &Profile<f64>) -> [f64; 3] {
    [u.lp_norm(1.0), u.lp_norm(2.0), u.lp_norm(f64::INFINITY)]
}

/// Evolves `pairs` random ordered data pairs to `t_end`, cycling through `cases` of
/// `(m, s)`, and checks conservation, `L¹` contraction, comparison, `L^p` decay and
/// the time-monotonicity bound at the `checkpoints`. Each pair is seeded from
/// `seed + index`, so the report does not depend on the thread count.
pub fn conservation_suite(
    grid: Grid<f64>,
    cases: &[(f64, f64)],
    pairs: usize,
    seed: u64,
    t_end: f64,
    checkpoints: &[f64],
) -> Result<ConservationReport> {
    if cases.is_empty() || pairs == 0 {
        return Err(Error::config("the suite needs at least one case and one pair"));
    }
    let checks: Vec<PairCheck> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let (m, s) = cases[k % cases.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let count = rng.random_range(1..4);
            let a = random_bumps(grid, &mut rng, count, 1.5);
            let extra = random_bumps(grid, &mut rng, 1, 1.0);
            let b = a.with_values(a.values.iter().zip(&extra.values).map(|(x, y)| x + y).collect());
            let mut config = SolverConfig::new(m, s);
            config.snapshot_times = checkpoints.to_vec();
            let ta = evolve(&a, t_end, &config)?;
            let tb = evolve(&b, t_end, &config)?;
            let d0 = l1_distance(&a, &b);
            let mut contraction = f64::NEG_INFINITY;
            let mut comparison = f64::NEG_INFINITY;
            let mut lp = f64::NEG_INFINITY;
            let (na, nb) = (lp_triplet(&a), lp_triplet(&b));
            for (sa, sb) in ta.snapshots.iter().zip(&tb.snapshots) {
                contraction = contraction.max(l1_distance(&sa.u, &sb.u) - d0);
                comparison = comparison.max(sa.u.values.iter().zip(&sb.u.values).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max));
                for (now, init) in [(lp_triplet(&sa.u), na), (lp_triplet(&sb.u), nb)] {
                    for p in 0..3 {
                        lp = lp.max(now[p] - init[p]);
                    }
                }
            }
            let benilan = check_benilan(&ta, 0.0).worst_margin.min(check_benilan(&tb, 0.0).worst_margin);
            Ok(PairCheck {
                index: k,
                m,
                s,
                initial_distance: d0,
                contraction_excess: contraction,
                comparison_excess: comparison,
                lp_excess: lp,
                mass_drift: ta.mass_drift().max(tb.mass_drift()),
                benilan_margin: benilan,
            })
        })
        .collect::<Result<_>>()?;
    let worst = |f: fn(&PairCheck) -> f64| checks.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    Ok(ConservationReport {
        seed,
        worst_mass_drift: worst(|c| c.mass_drift),
        worst_contraction_excess: worst(|c| c.contraction_excess),
        worst_comparison_excess: worst(|c| c.comparison_excess),
        worst_lp_excess: worst(|c| c.lp_excess),
        worst_benilan_margin: checks.iter().map(|c| c.benilan_margin).fold(f64::INFINITY, f64::min),
        pairs: checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracops::laplacian_constant;
    use crate::grid::make_grid;
    use crate::presets::{delta_bump, smoothed_step};
    use crate::quad;

    fn bump(grid: Grid<f64>, height: f64, radius: f64) -> Profile<f64> {
        Profile::from_radial(grid, |r| {
            let z = (1.0 - (r / radius).powi(2)).max(0.0);
            height * z * z
        })
    }

    #[test]
    fn zero_stays_zero() {
        let g = make_grid(5.0, 256).unwrap();
        let u = Profile::zeros(g);
        let cfg = SolverConfig::new(3.0, 0.5);
        let next = step(&u, 0.1, &cfg).unwrap();
        assert!(next.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_config_rejected() {
        let g = make_grid(5.0, 64).unwrap();
        let u = Profile::zeros(g);
        assert!(matches!(step(&u, 0.1, &SolverConfig::new(1.0, 0.5)), Err(Error::Config(_))));
        assert!(matches!(step(&u, 0.1, &SolverConfig::new(2.0, 1.5)), Err(Error::Config(_))));
        assert!(matches!(step(&u, -0.1, &SolverConfig::new(2.0, 0.5)), Err(Error::Config(_))));
    }

    #[test]
    fn newton_solves_the_implicit_equation() {
        let g = make_grid(10.0, 512).unwrap();
        let u = bump(g, 1.5, 1.0);
        let cfg = SolverConfig::new(4.0, 0.5);
        let dt = 0.05;
        let next = step(&u, dt, &cfg).unwrap();
        // Independent check with the dense operator.
        let op = DiscreteOperator::laplacian(g, 0.5).unwrap();
        let gm: Vec<f64> = next.values.iter().map(|v| v.powf(4.0)).collect();
        let ag = op.apply_dense(&gm);
        let res = next.values.iter().zip(&u.values).zip(&ag).fold(0.0f64, |a, ((n, o), c)| a.max((n - o + dt * c).abs()));
        assert!(res < 1e-9, "{res}");
        assert!(next.min() >= 0.0);
    }

    #[test]
    fn sub_unit_data_barely_move_at_large_m() {
        let g = make_grid(10.0, 1024).unwrap();
        let eps = 0.2;
        let u = bump(g, 1.0 - eps, 1.0);
        let cfg = SolverConfig::new(40.0, 0.5);
        let dt = 0.1;
        let next = step(&u, dt, &cfg).unwrap();
        let change = l1_distance(&next, &u);
        // Diffusivity m u^{m-1} ≤ 40·0.8^39 ≈ 6e-3.
        assert!(change < dt * 40.0 * (1.0 - eps).powf(39.0), "{change}");
    }

    #[test]
    fn outflux_matches_continuum_formula() {
        let l = 20.0;
        let s = 0.5;
        let g = make_grid(l, 2048).unwrap();
        let u = bump(g, 1.0, 1.0);
        let cfg = SolverConfig::new(2.0, s);
        let dt = 1e-3;
        let stepper = Stepper::new(g, &cfg).unwrap();
        let out = stepper.advance(&u.values, dt).unwrap();
        // Oracle: dt c ∫ g(y) [(L - y)^{-2s} + (L + y)^{-2s}] / (2s) dy on the exact
        // solution's g, approximated by the step output interpolated linearly.
        let gp = Profile { grid: g, values: out.g.clone(), symmetry: Symmetry::Even, tail: TailModel::None };
        let c = laplacian_constant(s);
        let integrand = |y: f64| gp.interpolate(y) * ((l - y).powf(-2.0 * s) + (l + y).powf(-2.0 * s)) / (2.0 * s);
        let oracle = dt * c * quad::adaptive(integrand, -1.2, 1.2, 1e-12);
        assert!((out.outflux - oracle).abs() < 2e-3 * oracle, "{} vs {oracle}", out.outflux);
        // Dense and FFT bookkeeping agree.
        let dense: f64 = dt * stepper.op.apply_dense(&out.g).iter().zip(&stepper.weights).map(|(a, b)| a * b).sum::<f64>();
        assert!((dense - out.outflux).abs() < 1e-12);
    }

    #[test]
    fn one_step_mass_conservation_with_tail() {
        let g = make_grid(50.0, 4096).unwrap();
        let u = bump(g, 1.0, 1.0);
        let cfg = SolverConfig::new(3.0, 0.5);
        let m0 = total_mass(&u).unwrap();
        let next = step(&u, 0.01, &cfg).unwrap();
        let m1 = total_mass(&next).unwrap();
        assert!((m1 - m0).abs() <= 1e-6 * m0, "{m0} {m1}");
    }

    #[test]
    fn evolve_reports_monotone_h_and_hits_snapshots() {
        let g = make_grid(10.0, 512).unwrap();
        let u = bump(g, 1.2, 1.0);
        let mut cfg = SolverConfig::new(3.0, 0.5);
        cfg.snapshot_times = vec![0.05, 0.1];
        let traj = evolve(&u, 0.2, &cfg).unwrap();
        let ts: Vec<f64> = traj.snapshots.iter().map(|s| s.t).collect();
        assert_eq!(ts, vec![0.05, 0.1, 0.2]);
        let times = traj.times();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        for pair in traj.snapshots.windows(2) {
            assert!(pair[0].h.values.iter().zip(&pair[1].h.values).all(|(a, b)| b >= a));
        }
    }

    #[test]
    fn delta_data_collapse_is_resolved() {
        let g = make_grid(20.0, 1024).unwrap();
        let u = delta_bump(g, 1.0, 5.0 * g.h()).unwrap();
        let cfg = SolverConfig::new(2.0, 0.5);
        let traj = evolve(&u, 0.5, &cfg).unwrap();
        assert!(traj.mass_drift() < 1e-5);
        assert!(traj.last().u.max() < u.max());
    }

    #[test]
    fn benilan_holds_on_bump_data() {
        let g = make_grid(20.0, 1024).unwrap();
        let u = smoothed_step(g, 1.5, 1.0, 5.0 * g.h());
        let cfg = SolverConfig::new(3.0, 0.5);
        let traj = evolve(&u, 1.0, &cfg).unwrap();
        let rep = check_benilan(&traj, 1e-6);
        assert_eq!(rep.violations, 0, "{rep:?}");
    }

    #[test]
    fn explicit_and_implicit_agree_for_small_m() {
        let g = make_grid(10.0, 256).unwrap();
        let u = bump(g, 1.0, 1.5);
        let mut cfg = SolverConfig::new(2.0, 0.5).with_fixed_dt(1e-3);
        let implicit = evolve(&u, 0.05, &cfg).unwrap();
        cfg.scheme = Scheme::Explicit;
        let explicit = evolve(&u, 0.05, &cfg).unwrap();
        let d = l1_distance(&implicit.last().u, &explicit.last().u);
        assert!(d < 1e-3, "{d}");
    }
}
