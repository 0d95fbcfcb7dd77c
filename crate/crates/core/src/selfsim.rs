//! Fractional Barenblatt profiles `F_m` and the pair `(G_m, P_m)`.
//!
//! Two independent routes:
//!
//! * a Newton solve of the one-dimensional profile equation `A(F^m) = β x F`
//!   with the mass constraint, where `A = -∂_x (-∂_xx)^{-(1-s)}`;
//! * time evolution from a delta-like bump, read out through the self-similar
//!   scaling `F(ξ) = t^α U(ξ t^β, t)`.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpme_solver::{evolve, SolverConfig, TimeStep};
use crate::fracops::{a_operator, laplacian_constant, riesz_potential, DiscreteOperator, OperatorSpec};
use crate::grid::{fit_tail_exponent, total_mass, Grid, Profile, Symmetry, TailModel};
use crate::presets::delta_bump;

/// Self-similar exponents in one dimension: `α = 1/(m - 1 + 2s)`, `β = α`.
pub fn exponents(m: f64, s: f64) -> (f64, f64) {
    let alpha = 1.0 / (m - 1.0 + 2.0 * s);
    (alpha, alpha)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    FixedPoint,
    Evolution,
}

/// One Barenblatt record: `F`, `G = m F^m`, `P(r) = ∫_r^∞ ρ F(ρ) dρ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfSimilarTriple {
    pub m: f64,
    pub s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mass: f64,
    pub f: Profile<f64>,
    pub g: Profile<f64>,
    /// For `s ≤ 1/2` the integral diverges at infinity and `P` is truncated at `L`.
    pub p: Profile<f64>,
    pub p_truncated: bool,
    /// Fitted `(exponent, coefficient)` of `F ≈ c r^{-p}` on `[L/4, L/2]`.
    pub tail_fit: (f64, f64),
    pub route: Route,
    /// Relative `L¹` gap between the two read-out times (evolution route only).
    pub certificate: Option<f64>,
}

/// Options for the Newton profile solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    pub mass: f64,
    /// Stop when the `L¹` norm of the Newton update drops below this.
    pub tol: f64,
    pub max_iterations: usize,
    /// Continuation starts here and multiplies by `ladder_factor` until `m`.
    pub ladder_start: f64,
    pub ladder_factor: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { mass: 1.0, tol: 1e-8, max_iterations: 60, ladder_start: 2.0, ladder_factor: 1.5 }
    }
}

fn check_params(m: f64, s: f64) -> Result<()> {
    if !(m > 1.0) || !m.is_finite() {
        return Err(Error::config(format!("m must exceed 1, got {m}")));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::config(format!("s must lie in (0, 1), got {s}")));
    }
    Ok(())
}

/// Coefficient `c` of the far field `F ≈ c |x|^{-(1+2s)}` implied by the profile equation.
fn tail_coefficient(s: f64, beta: f64, g_mass: f64) -> f64 {
    laplacian_constant(s) * g_mass / (2.0 * s * beta)
}

/// Newton least-squares solver for the half-domain profile equation.
struct ProfileNewton<'a> {
    grid: Grid<f64>,
    s: f64,
    /// Right-half rows of `A`, with mirrored columns folded in.
    a_half: DMatrix<f64>,
    x: Vec<f64>,
    w: Vec<f64>,
    options: &'a ProfileOptions,
}

impl<'a> ProfileNewton<'a> {
    fn new(grid: Grid<f64>, s: f64, options: &'a ProfileOptions) -> Result<Self> {
        let op = DiscreteOperator::odd(grid, s)?;
        let n = grid.len();
        let half = n / 2;
        let t = op.matrix();
        let a_half = DMatrix::from_fn(half, half, |i, k| {
            let row = half + i;
            t.entry(row, half + k) + t.entry(row, half - 1 - k)
        });
        let x = (half..n).map(|i| grid.x(i)).collect();
        let wfull = grid.weights();
        // Both halves of the trapezoid weights.
        let w = (half..n).map(|i| 2.0 * wfull[i]).collect();
        Ok(Self { grid, s, a_half, x, w, options })
    }

    /// Solves at exponent `m` from the initial half-profile `f`.
    fn solve(&self, m: f64, mut f: Vec<f64>) -> Result<(Vec<f64>, usize, f64)> {
        let beta = exponents(m, self.s).1;
        let s = self.s;
        let l = self.grid.half_width();
        let mass = self.options.mass;
        // Tail mass beyond L as a multiple of ∫F^m.
        let kt = 2.0 * l.powf(-2.0 * s) / (2.0 * s) * laplacian_constant(s) / (2.0 * s * beta);
        let half = f.len();
        let mut history = Vec::new();
        for it in 0..self.options.max_iterations {
            let g: Vec<f64> = f.iter().map(|v| v.powf(m)).collect();
            let ag = &self.a_half * DVector::from_column_slice(&g);
            let mut rhs = DVector::zeros(half + 1);
            for i in 0..half {
                rhs[i] = -(ag[i] - beta * self.x[i] * f[i]);
            }
            let gmass: f64 = g.iter().zip(&self.w).map(|(a, b)| a * b).sum();
            let fmass: f64 = f.iter().zip(&self.w).map(|(a, b)| a * b).sum();
            rhs[half] = -(fmass + kt * gmass - mass);
            let dg: Vec<f64> = f.iter().map(|v| m * v.powf(m - 1.0)).collect();
            let mut jac = DMatrix::zeros(half + 1, half);
            for k in 0..half {
                for i in 0..half {
                    jac[(i, k)] = self.a_half[(i, k)] * dg[k];
                }
                jac[(k, k)] -= beta * self.x[k];
                jac[(half, k)] = self.w[k] * (1.0 + kt * dg[k]);
            }
            let qr = jac.qr();
            let qtb = qr.q().transpose() * &rhs;
            let d = qr
                .r()
                .solve_upper_triangular(&qtb)
                .ok_or_else(|| Error::no_convergence("profile Newton (singular Jacobian)", it, history.clone()))?;
            let mut lambda = 1.0;
            while f.iter().zip(d.iter()).any(|(a, b)| a + lambda * b <= 0.0) {
                lambda *= 0.5;
                if lambda < 1e-12 {
                    return Err(Error::no_convergence("profile Newton (positivity)", it, history));
                }
            }
            for (a, b) in f.iter_mut().zip(d.iter()) {
                *a += lambda * b;
            }
            let step: f64 = d.iter().zip(&self.w).map(|(a, b)| (lambda * a).abs() * b).sum();
            history.push(step);
            debug!("profile m = {m}: it {it}, step {step:.3e}, lambda {lambda}");
            if step < self.options.tol {
                let res = self.residual(m, &f);
                return Ok((f, it + 1, res));
            }
        }
        Err(Error::no_convergence(format!("profile Newton at m = {m}"), self.options.max_iterations, history))
    }

    fn residual(&self, m: f64, f: &[f64]) -> f64 {
        let beta = exponents(m, self.s).1;
        let g: Vec<f64> = f.iter().map(|v| v.powf(m)).collect();
        let ag = &self.a_half * DVector::from_column_slice(&g);
        (0..f.len()).map(|i| (ag[i] - beta * self.x[i] * f[i]).abs()).fold(0.0, f64::max)
    }
}

fn ladder(m: f64, options: &ProfileOptions) -> Vec<f64> {
    let mut rungs = Vec::new();
    let mut mk = options.ladder_start;
    while mk < m {
        rungs.push(mk);
        mk *= options.ladder_factor;
    }
    rungs.push(m);
    rungs
}

/// Builds the triple from an even profile with its tail.
fn assemble(m: f64, s: f64, mass: f64, f: Profile<f64>, route: Route, certificate: Option<f64>) -> Result<SelfSimilarTriple> {
    let (alpha, beta) = exponents(m, s);
    let grid = f.grid;
    let l = grid.half_width();
    let g_values: Vec<f64> = f.values.iter().map(|v| m * v.max(0.0).powf(m)).collect();
    let g_tail = match f.tail {
        TailModel::Power { p, c } => TailModel::Power { p: m * p, c: m * c.powf(m) },
        other => other,
    };
    let g = Profile::new(grid, g_values, f.symmetry, g_tail)?;
    let (p, p_truncated) = first_moment_tail(&f);
    let tail_fit = fit_tail_exponent(&f, l / 4.0, l / 2.0)?;
    Ok(SelfSimilarTriple { m, s, alpha, beta, mass, f, g, p, p_truncated, tail_fit, route, certificate })
}

/// `P(r) = ∫_r^∞ ρ F(ρ) dρ` on the grid (even), with the power tail closed analytically when it converges.
pub fn first_moment_tail(f: &Profile<f64>) -> (Profile<f64>, bool) {
    let grid = f.grid;
    let n = grid.len();
    let half = n / 2;
    let l = grid.half_width();
    let (beyond, truncated, tail) = match f.tail {
        TailModel::Power { p, c } if p > 2.0 => {
            let q = p - 2.0;
            (c * l.powf(-q) / q, false, TailModel::Power { p: q, c: c / q })
        }
        TailModel::None => (0.0, false, TailModel::None),
        _ => (0.0, true, TailModel::None),
    };
    let mut vals = vec![0.0; n];
    let mut acc = beyond;
    vals[n - 1] = acc;
    for i in (half..n - 1).rev() {
        let (x0, x1) = (grid.x(i), grid.x(i + 1));
        acc += 0.5 * (x1 - x0) * (x0 * f.values[i] + x1 * f.values[i + 1]);
        vals[i] = acc;
    }
    for i in 0..half {
        vals[i] = vals[n - 1 - i];
    }
    let mut p = Profile { grid, values: vals, symmetry: Symmetry::Even, tail };
    p.symmetrize();
    (p, truncated)
}

/// Profile of mass `M` from the Newton least-squares route with `m`-continuation.
pub fn profile_fixed_point(m: f64, s: f64, grid: Grid<f64>, options: &ProfileOptions) -> Result<SelfSimilarTriple> {
    check_params(m, s)?;
    if !(options.mass > 0.0) {
        return Err(Error::config("mass must be positive"));
    }
    let solver = ProfileNewton::new(grid, s, options)?;
    let n = grid.len();
    let half = n / 2;
    let rungs = ladder(m, options);
    // Initial guess with the right decay, normalized to the target mass.
    let mut f: Vec<f64> = (half..n).map(|i| (1.0 + grid.x(i).powi(2)).powf(-(0.5 + s))).collect();
    let fm: f64 = f.iter().zip(&solver.w).map(|(a, b)| a * b).sum();
    f.iter_mut().for_each(|v| *v *= options.mass / fm);
    let mut residual = f64::NAN;
    for &mk in &rungs {
        let (fk, its, res) = solver.solve(mk, f)?;
        debug!("rung m = {mk}: {its} iterations, residual {res:.2e}");
        f = fk;
        residual = res;
    }
    info!("profile m = {m}, s = {s}: F(0) = {:.6}, residual {residual:.2e}", f[0]);
    let beta = exponents(m, s).1;
    let gmass: f64 = f.iter().zip(&solver.w).map(|(a, b)| a.powf(m) * b).sum();
    let c = tail_coefficient(s, beta, gmass);
    let mut values = vec![0.0; n];
    for k in 0..half {
        values[half + k] = f[k];
        values[half - 1 - k] = f[k];
    }
    let fprof = Profile::new(grid, values, Symmetry::Even, TailModel::Power { p: 1.0 + 2.0 * s, c })?;
    assemble(m, s, options.mass, fprof, Route::FixedPoint, None)
}

/// Options for the evolution route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionOptions {
    pub mass: f64,
    /// Half-width of the initial bump in grid cells.
    pub bump_cells: f64,
    /// Largest `dt / t`.
    pub max_ratio: f64,
    /// Certificate threshold on the relative `L¹` gap between `t*` and `2t*`.
    pub certificate_tol: f64,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        Self { mass: 1.0, bump_cells: 5.0, max_ratio: 0.02, certificate_tol: 0.01 }
    }
}

/// Reads `F(ξ) = t^α U(ξ t^β, t)` onto `out_grid`; the tail model of `U` is carried over.
fn read_out(u: &Profile<f64>, t: f64, m: f64, s: f64, out_grid: Grid<f64>) -> Profile<f64> {
    let (alpha, beta) = exponents(m, s);
    let ta = t.powf(alpha);
    let tb = t.powf(beta);
    let mut f = Profile::from_radial(out_grid, |xi| ta * u.interpolate(xi * tb));
    f.symmetrize();
    let tail = match u.tail {
        // U ≈ c x^{-p}  ⇒  F ≈ t^α c t^{-βp} ξ^{-p}.
        TailModel::Power { p, c } => TailModel::Power { p, c: ta * c * tb.powf(-p) },
        other => other,
    };
    f.with_tail(tail)
}

/// Profile from time evolution of a delta-like bump, read at `t*` and certified against `2t*`.
///
/// `out_grid` is the `ξ` grid for the returned profile; nodes beyond the evolved
/// domain take the tail model of the solution.
pub fn profile_via_evolution(
    m: f64,
    s: f64,
    grid: Grid<f64>,
    t_star: f64,
    out_grid: Grid<f64>,
    options: &EvolutionOptions,
) -> Result<SelfSimilarTriple> {
    check_params(m, s)?;
    if !(t_star > 0.0) {
        return Err(Error::config("t* must be positive"));
    }
    let u0 = delta_bump(grid, options.mass, options.bump_cells * grid.h())?;
    let mut cfg = SolverConfig::new(m, s);
    cfg.time_step = TimeStep::Adaptive { dt0: 1e-8, dt_min: 1e-16, dt_max: f64::INFINITY, max_ratio: options.max_ratio };
    cfg.snapshot_times = vec![t_star];
    let traj = evolve(&u0, 2.0 * t_star, &cfg)?;
    let first = read_out(&traj.snapshots[0].u, t_star, m, s, out_grid);
    let second = read_out(&traj.last().u, 2.0 * t_star, m, s, out_grid);
    let gap = crate::fpme_solver::l1_distance(&first, &second) / first.lp_norm(1.0);
    info!("evolution route m = {m}, s = {s}: certificate gap {gap:.2e} (mass drift {:.1e})", traj.mass_drift());
    if gap > options.certificate_tol {
        return Err(Error::Certificate(format!(
            "self-similar read-outs at t* = {t_star:.3e} and 2t* differ by {:.2}% in L1; increase t* or the grid",
            100.0 * gap
        )));
    }
    assemble(m, s, options.mass, second, Route::Evolution, Some(gap))
}

/// `F_M(r) = μ^{2s} F_1(μ^{1-m} r)` with `M = μ^{m - 1 + 2s}` (one dimension).
pub fn rescale_mass(triple: &SelfSimilarTriple, new_mass: f64) -> Result<SelfSimilarTriple> {
    if !(new_mass > 0.0) {
        return Err(Error::config("mass must be positive"));
    }
    let (m, s) = (triple.m, triple.s);
    let mu = (new_mass / triple.mass).powf(1.0 / (m - 1.0 + 2.0 * s));
    let f1 = &triple.f;
    let scale = mu.powf(2.0 * s);
    let stretch = mu.powf(1.0 - m);
    let mut f = Profile::from_radial(f1.grid, |r| scale * f1.interpolate(stretch * r));
    f.symmetrize();
    let tail = match f1.tail {
        TailModel::Power { p, c } => TailModel::Power { p, c: scale * c * stretch.powf(-p) },
        other => other,
    };
    let f = f.with_tail(tail);
    let mut out = assemble(m, s, new_mass, f, triple.route, triple.certificate)?;
    out.mass = new_mass;
    Ok(out)
}

/// Residuals of the profile equations at the output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileResiduals {
    /// `‖A G - mβ x F‖_∞ / ‖mβ x F‖_∞` (differentiated form).
    pub differentiated: f64,
    /// `‖(-Δ)^{-s'} F^m - β P‖_∞ / ‖β P‖_∞` on `[0, L/2]`; only for `s > 1/2`.
    pub integrated: Option<f64>,
    pub mass_error: f64,
}

pub fn profile_residuals(t: &SelfSimilarTriple) -> Result<ProfileResiduals> {
    let grid = t.f.grid;
    let n = grid.len();
    let ag = a_operator(&t.g, t.s)?;
    let mb = t.m * t.beta;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for i in 0..n {
        let rhs = mb * grid.x(i) * t.f.values[i];
        num = num.max((ag.values[i] - rhs).abs());
        den = den.max(rhs.abs());
    }
    let integrated = if t.s > 0.5 {
        let fm = t.f.with_values(t.f.values.iter().map(|v| v.powf(t.m)).collect()).with_tail(TailModel::None);
        let pot = riesz_potential(&fm, &OperatorSpec::direct(1.0 - t.s))?;
        let l = grid.half_width();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in grid.first_positive()..n {
            if grid.x(i) > 0.5 * l {
                break;
            }
            let rhs = t.beta * t.p.values[i];
            num = num.max((pot.values[i] - rhs).abs());
            den = den.max(rhs.abs());
        }
        Some(num / den)
    } else {
        None
    };
    let mass_error = (total_mass(&t.f)? - t.mass).abs() / t.mass;
    Ok(ProfileResiduals { differentiated: num / den, integrated, mass_error })
}

/// Relative `L¹` gap `∫|a - b| / ∫|a|` over the nodes of `a` inside the domain of `b`,
/// with `b` interpolated.
pub fn overlap_l1_gap(a: &Profile<f64>, b: &Profile<f64>) -> f64 {
    let lb = b.grid.half_width();
    let w = a.grid.weights();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..a.grid.len() {
        let x = a.grid.x(i);
        if x.abs() <= lb {
            num += w[i] * (a.values[i] - b.interpolate(x)).abs();
            den += w[i] * a.values[i].abs();
        }
    }
    num / den
}

/// Largest increase of `F` along `r ≥ 0` (monotonicity defect).
pub fn monotonicity_defect(f: &Profile<f64>) -> f64 {
    let n = f.grid.len();
    (f.grid.first_positive()..n - 1).map(|i| (f.values[i + 1] - f.values[i]).max(0.0)).fold(0.0, f64::max)
}
