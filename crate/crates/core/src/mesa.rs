//! The large-`m` experiments: uniform estimates on `(F_m, G_m)`, the limit
//! equation relating `G_∞` to `F_∞`, the `H` computation for fundamental
//! solutions and the limit behaviour for general data.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpme_solver::{evolve, l1_distance, SolverConfig, TimeStep, Trajectory};
use crate::grid::{fit_tail_exponent, total_mass, Grid, Profile, Symmetry, TailModel};
use crate::obstacle::canonical_potential;
use crate::pme_reference::omega;
use crate::selfsim::{exponents, first_moment_tail, profile_fixed_point, ProfileOptions, SelfSimilarTriple};

/// Level above which `F_m` counts as part of the plateau.
pub const PLATEAU_LEVEL: f64 = 0.99;

/// `r_0 = ω_N^{-1/N}`: beyond it the unit-mass `G_m` vanishes as `m → ∞`.
pub fn r0(dim: u32) -> f64 {
    omega(dim).powf(-1.0 / dim as f64)
}

/// Largest node `r ≥ 0` with `F > level`, or 0 when there is none.
pub fn plateau_radius(f: &Profile<f64>, level: f64) -> f64 {
    let g = f.grid;
    (g.first_positive()..g.len()).filter(|&i| f.values[i] > level).map(|i| g.x(i)).fold(0.0, f64::max)
}

fn positive_half(f: &Profile<f64>) -> impl Iterator<Item = (f64, f64)> + '_ {
    let g = f.grid;
    (g.first_positive()..g.len()).map(move |i| (g.x(i), f.values[i]))
}

/// The dyadic ladder `C_k = G(z_k) z_k^{1-2s}` with `z_k = z_0 2^{-k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicReport {
    pub z: Vec<f64>,
    pub constants: Vec<f64>,
    /// `max C_k / min C_k`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma41Report {
    pub r0: f64,
    /// Nodes checked against `G(r) ≤ m (r_0/r)^m`.
    pub exterior_nodes: usize,
    pub exterior_violations: usize,
    /// `min ln(r_0 / (r F(r)))` over the checked nodes, the bound's log-margin divided by `m`.
    pub exterior_margin: f64,
    /// Present for `s < 1/2`.
    pub dyadic: Option<DyadicReport>,
    /// `max G` on `r ≤ 1/4`, reported for `s ≥ 1/2`.
    pub near_origin_max: f64,
}

/// Uniform estimates for a unit-mass profile: the exterior bound on `r ∈ [1.1 r_0, L/2]`
/// and either the dyadic singularity constants (`s < 1/2`) or boundedness near 0.
///
/// The exterior bound is compared as `r F(r) ≤ r_0 (1 + tol)^{1/m}`, its `m`-th root,
/// so that neither side underflows.
pub fn check_lemma41(t: &SelfSimilarTriple, tol: f64) -> Result<Lemma41Report> {
    if (t.mass - 1.0).abs() > 1e-12 {
        return Err(Error::config(format!("uniform estimates need a unit-mass profile, got mass {}", t.mass)));
    }
    let r0 = r0(1);
    let l = t.f.grid.half_width();
    let cap = r0 * (1.0 + tol).powf(1.0 / t.m);
    let mut nodes = 0;
    let mut violations = 0;
    let mut margin = f64::INFINITY;
    for (r, f) in positive_half(&t.f) {
        if r < 1.1 * r0 || r > 0.5 * l {
            continue;
        }
        nodes += 1;
        if r * f > cap {
            violations += 1;
        }
        if f > 0.0 {
            margin = margin.min((r0 / (r * f)).ln());
        }
    }
    let h = t.f.grid.h();
    let dyadic = if t.s < 0.5 {
        let z: Vec<f64> = (0..=6).map(|k| 0.25 * 0.5f64.powi(k)).filter(|&z| z >= h).collect();
        if z.len() < 2 {
            return Err(Error::config("grid too coarse for the dyadic ladder below r = 1/4"));
        }
        let constants: Vec<f64> = z.iter().map(|&z| t.g.interpolate(z) * z.powf(1.0 - 2.0 * t.s)).collect();
        let hi = constants.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = constants.iter().copied().fold(f64::INFINITY, f64::min);
        Some(DyadicReport { z, constants, ratio: hi / lo })
    } else {
        None
    };
    let near_origin_max = positive_half(&t.g).filter(|(r, _)| *r <= 0.25).map(|(_, v)| v).fold(0.0, f64::max);
    Ok(Lemma41Report { r0, exterior_nodes: nodes, exterior_violations: violations, exterior_margin: margin, dyadic, near_origin_max })
}

/// Sup-norm residual of `(-Δ)^{-s'} G = c ∫_r^∞ ρ F(ρ) dρ` on `r ∈ [h/2, L/2]`, `s' = 1 - s`.
///
/// For `s > 1/2` both sides decay and are compared directly. Otherwise the potential
/// is defined only up to a constant, so both sides are compared relative to their
/// values at the first positive node.
pub fn equation_residual(f: &Profile<f64>, g: &Profile<f64>, s: f64, coefficient: f64) -> Result<f64> {
    if f.grid != g.grid {
        return Err(Error::config("F and G must share a grid"));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::config(format!("s must lie in (0, 1), got {s}")));
    }
    let grid = f.grid;
    let l = grid.half_width();
    let i0 = grid.first_positive();
    let q = canonical_potential(g, 1.0 - s)?;
    let (moment, _) = first_moment_tail(f);
    let anchored = s <= 0.5;
    let mut worst = 0.0f64;
    for i in i0..grid.len() {
        if grid.x(i) > 0.5 * l {
            break;
        }
        let lhs = q.values[i];
        let rhs = coefficient * moment.values[i];
        let d = if anchored { (lhs - q.values[i0]) - (rhs - coefficient * moment.values[i0]) } else { lhs - rhs };
        worst = worst.max(d.abs());
    }
    Ok(worst)
}

/// [`equation_residual`] with the limit coefficient `1/N = 1`.
pub fn limit_equation_residual(f: &Profile<f64>, g: &Profile<f64>, s: f64) -> Result<f64> {
    equation_residual(f, g, s, 1.0)
}

/// `H(r) = c r^{-λ} ∫_r^∞ G(ρ) ρ^{λ-1} dρ` with `λ = 1 - 2s` and `c = (mβ)^{-1}`, or `c = 1`
/// for `m = ∞`; equivalently `c ∫_1^∞ G(rσ) σ^{λ-1} dσ`.
///
/// `G` is taken piecewise linear and each cell is integrated exactly against `ρ^{λ-1}`.
pub fn h_addendum(g: &Profile<f64>, m: f64, s: f64) -> Result<Profile<f64>> {
    let lambda = 1.0 - 2.0 * s;
    if !(lambda > 0.0) || !(s > 0.0) {
        return Err(Error::config(format!("the H integral needs s in (0, 1/2), got {s}")));
    }
    if !(m > 1.0) {
        return Err(Error::config(format!("m must exceed 1, got {m}")));
    }
    let coef = if m.is_infinite() {
        1.0
    } else {
        let (_, beta) = exponents(m, s);
        1.0 / (m * beta)
    };
    let grid = g.grid;
    let n = grid.len();
    let i0 = grid.first_positive();
    let h = grid.h();
    let l = grid.half_width();
    let mut acc = match g.tail {
        TailModel::Power { p, c } if p > lambda => c * l.powf(lambda - p) / (p - lambda),
        TailModel::Power { .. } | TailModel::Constant { .. } => {
            return Err(Error::config("tail of G decays too slowly for the H integral"))
        }
        TailModel::None => 0.0,
    };
    let mut values = vec![0.0; n];
    values[n - 1] = coef * l.powf(-lambda) * acc;
    for i in (i0..n - 1).rev() {
        let (a, b) = (grid.x(i), grid.x(i + 1));
        let (ga, gb) = (g.values[i], g.values[i + 1]);
        let m0 = (b.powf(lambda) - a.powf(lambda)) / lambda;
        let m1 = (b.powf(lambda + 1.0) - a.powf(lambda + 1.0)) / (lambda + 1.0);
        // G = ga + (gb - ga)(ρ - a)/h on the cell.
        acc += ga * m0 + (gb - ga) / h * (m1 - a * m0);
        values[i] = coef * a.powf(-lambda) * acc;
    }
    for i in 0..i0 {
        values[i] = values[grid.mirror(i)];
    }
    Ok(Profile { grid, values, symmetry: Symmetry::Even, tail: TailModel::None })
}

/// Where the bound `H ≤ G / (mβλ)` fails.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HBoundReport {
    pub nodes: usize,
    pub violations: usize,
    /// Smallest `r ≥ 0` beyond which the bound holds at every node.
    pub holds_beyond: f64,
    pub worst_ratio: f64,
}

pub fn h_bound_report(h: &Profile<f64>, g: &Profile<f64>, m: f64, s: f64, tol: f64) -> HBoundReport {
    let (_, beta) = exponents(m, s);
    let lambda = 1.0 - 2.0 * s;
    let scale = 1.0 / (m * beta * lambda);
    let grid = h.grid;
    let mut violations = 0;
    let mut holds_beyond = 0.0;
    let mut worst = 0.0f64;
    let nodes = grid.len() - grid.first_positive();
    for i in grid.first_positive()..grid.len() {
        let bound = scale * g.values[i];
        if h.values[i] > bound * (1.0 + tol) + tol * f64::MIN_POSITIVE {
            violations += 1;
            holds_beyond = grid.x(i);
        }
        if bound > 0.0 {
            worst = worst.max(h.values[i] / bound);
        }
    }
    HBoundReport { nodes, violations, holds_beyond, worst_ratio: worst }
}

/// One row of the Barenblatt sweep in `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MesaSweepRecord {
    pub m: f64,
    pub f0: f64,
    pub plateau_radius: f64,
    pub g_l1: f64,
    pub g_linf: f64,
    pub tail_exponent: f64,
    pub exterior_margin: f64,
    pub exterior_violations: usize,
    pub dyadic_ratio: Option<f64>,
    /// Residual of the finite-`m` equation with coefficient `mβ`.
    pub equation_residual: f64,
}

/// Unit-mass profiles for each `m`, solved on `grid`, with their diagnostics.
pub fn mesa_sweep(m_list: &[f64], s: f64, grid: Grid<f64>, tol: f64) -> Result<Vec<(MesaSweepRecord, SelfSimilarTriple)>> {
    if m_list.is_empty() {
        return Err(Error::config("m list is empty"));
    }
    let options = ProfileOptions::default();
    let mut out = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let t = profile_fixed_point(m, s, grid, &options)?;
        let lemma = check_lemma41(&t, tol)?;
        let residual = equation_residual(&t.f, &t.g, s, m * t.beta)?;
        let rec = MesaSweepRecord {
            m,
            f0: t.f.values[grid.first_positive()],
            plateau_radius: plateau_radius(&t.f, PLATEAU_LEVEL),
            g_l1: t.g.lp_norm(1.0),
            g_linf: t.g.lp_norm(f64::INFINITY),
            tail_exponent: t.tail_fit.0,
            exterior_margin: lemma.exterior_margin,
            exterior_violations: lemma.exterior_violations,
            dyadic_ratio: lemma.dyadic.as_ref().map(|d| d.ratio),
            equation_residual: residual,
        };
        info!("mesa sweep m = {m}: F(0) = {:.5}, plateau radius {:.4}", rec.f0, rec.plateau_radius);
        out.push((rec, t));
    }
    Ok(out)
}

/// Controls for [`general_data_limit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitOptions {
    /// Largest time the evolution may use to become stationary.
    pub t_budget: f64,
    /// Stop once `‖∂_t u‖_1 ≤ factor ‖u_0‖_1 / (m - 1)`.
    pub stop_factor: f64,
    pub time_step: TimeStep,
    /// Fraction of each component of `{u_0 ≥ 1}` kept when testing the lower bound.
    pub inner_fraction: f64,
}

impl Default for LimitOptions {
    fn default() -> Self {
        Self {
            t_budget: 50.0,
            stop_factor: 20.0,
            time_step: TimeStep::Adaptive { dt0: 1e-10, dt_min: 1e-16, dt_max: 0.05, max_ratio: 0.2 },
            inner_fraction: 0.9,
        }
    }
}

/// Diagnostics of the stationary state reached for one `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralLimitRow {
    pub m: f64,
    pub t_stop: f64,
    pub sup: f64,
    /// `min u` on the inner part of `{u_0 ≥ 1}`; `None` when `u_0 < 1` everywhere.
    pub inner_min: Option<f64>,
    pub mass: f64,
    pub mass_error: f64,
    /// Fitted far-field exponent on `[L/4, L/2]`.
    pub tail_exponent: Option<f64>,
    /// `‖u - u_0‖_1 / ‖u_0‖_1`.
    pub distance_to_u0: f64,
    /// `∫_{u_0 < 1} (u - u_0)`.
    pub relocated_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralLimitReport {
    pub s: f64,
    pub initial_mass: f64,
    pub exceeds_one: bool,
    pub rows: Vec<GeneralLimitRow>,
    /// `sup u - 1` is nonincreasing along the ladder.
    pub sup_excess_decreasing: bool,
}

/// Nodes in the central `fraction` of each run of consecutive nodes with `u_0 ≥ 1`.
pub fn inner_level_set(u0: &Profile<f64>, fraction: f64) -> Vec<usize> {
    let n = u0.grid.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if u0.values[i] < 1.0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && u0.values[i] >= 1.0 {
            i += 1;
        }
        let (a, b) = (u0.grid.x(start), u0.grid.x(i - 1));
        let trim = 0.5 * (1.0 - fraction) * (b - a);
        out.extend((start..i).filter(|&j| {
            let x = u0.grid.x(j);
            x >= a + trim && x <= b - trim
        }));
    }
    out
}

/// Evolves `u_0` to near-stationarity and records the limit diagnostics.
pub fn stationary_state(u0: &Profile<f64>, m: f64, s: f64, options: &LimitOptions) -> Result<(GeneralLimitRow, Trajectory)> {
    let initial_mass = total_mass(u0)?;
    let mut config = SolverConfig::new(m, s);
    config.time_step = options.time_step;
    config.stop_rate = Some(options.stop_factor * initial_mass / (m - 1.0));
    let traj = evolve(u0, options.t_budget, &config)?;
    let t_stop = traj.stationary_at.ok_or_else(|| {
        let history: Vec<f64> = traj.records.iter().rev().take(20).rev().map(|r| r.dudt_l1).collect();
        Error::no_convergence(format!("stationarity for m = {m} within t = {}", options.t_budget), traj.records.len(), history)
    })?;
    let u = &traj.last().u;
    let grid = u.grid;
    let w = grid.weights();
    let inner = inner_level_set(u0, options.inner_fraction);
    let inner_min = if inner.is_empty() { None } else { Some(inner.iter().map(|&i| u.values[i]).fold(f64::INFINITY, f64::min)) };
    let mass = total_mass(u)?;
    let l = grid.half_width();
    let tail_exponent = if u0.max() > 1.0 {
        match fit_tail_exponent(u, 0.25 * l, 0.5 * l) {
            Ok((p, _)) => Some(p),
            Err(e) => {
                warn!("no tail fit for m = {m}: {e}");
                None
            }
        }
    } else {
        None
    };
    let relocated_mass = (0..grid.len()).filter(|&i| u0.values[i] < 1.0).map(|i| w[i] * (u.values[i] - u0.values[i])).sum();
    let row = GeneralLimitRow {
        m,
        t_stop,
        sup: u.max(),
        inner_min,
        mass,
        mass_error: (mass - initial_mass).abs() / initial_mass,
        tail_exponent,
        distance_to_u0: l1_distance(u, u0) / initial_mass,
        relocated_mass,
    };
    Ok((row, traj))
}

/// Runs [`stationary_state`] along an increasing `m` ladder.
pub fn general_data_limit(
    u0: &Profile<f64>,
    m_list: &[f64],
    s: f64,
    options: &LimitOptions,
) -> Result<(GeneralLimitReport, Vec<Profile<f64>>)> {
    if m_list.is_empty() {
        return Err(Error::config("m list is empty"));
    }
    if m_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config("m list must be strictly increasing"));
    }
    if u0.values.iter().any(|v| *v < 0.0) {
        return Err(Error::config("initial data must be nonnegative"));
    }
    let mut rows = Vec::new();
    let mut profiles = Vec::new();
    for &m in m_list {
        let (row, traj) = stationary_state(u0, m, s, options)?;
        info!("m = {m}: stationary at t = {:.3}, sup {:.4}", row.t_stop, row.sup);
        rows.push(row);
        profiles.push(traj.last().u.clone());
    }
    let sup_excess_decreasing = rows.windows(2).all(|w| (w[1].sup - 1.0).max(0.0) <= (w[0].sup - 1.0).max(0.0) + 1e-12);
    let report =
        GeneralLimitReport { s, initial_mass: total_mass(u0)?, exceeds_one: u0.max() > 1.0, rows, sup_excess_decreasing };
    Ok((report, profiles))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::obstacle::explicit_solution;
    use crate::quad;

    #[test]
    fn r0_in_one_dimension() {
        assert!((r0(1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn h_of_compact_g_vanishes_outside() {
        let g = make_grid(4.0, 512).unwrap();
        let bump = Profile::from_radial(g, |x: f64| (1.0 - x * x).max(0.0).sqrt());
        let h = h_addendum(&bump, f64::INFINITY, 0.25).unwrap();
        for (x, v) in g.nodes().iter().zip(&h.values) {
            if x.abs() > 1.0 {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn h_matches_quadrature() {
        // Oracle: adaptive quadrature of ∫_1^∞ G(rσ) σ^{λ-1} dσ for a smooth G.
        let g = make_grid(8.0, 4096).unwrap();
        let s = 0.25;
        let gauss = |x: f64| (-x * x).exp();
        let prof = Profile::from_radial(g, gauss);
        let h = h_addendum(&prof, f64::INFINITY, s).unwrap();
        for r in [0.3, 1.0, 2.0] {
            let exact = quad::adaptive(|t| gauss(r * t) * t.powf(-0.5), 1.0, 8.0 / r, 1e-12);
            assert!((h.interpolate(r) - exact).abs() < 1e-4, "r = {r}: {} vs {exact}", h.interpolate(r));
        }
    }

    #[test]
    fn h_rejects_large_s() {
        let g = make_grid(4.0, 64).unwrap();
        let z = Profile::zeros(g);
        assert!(matches!(h_addendum(&z, 10.0, 0.5), Err(Error::Config(_))));
    }

    #[test]
    fn degenerate_g_leaves_a_residual() {
        let g = make_grid(4.0, 512).unwrap();
        let f = Profile::from_radial(g, |x: f64| (1.0 - x * x).max(0.0));
        let zero = Profile::zeros(g);
        assert!(limit_equation_residual(&f, &zero, 0.5).unwrap() > 0.1);
    }

    #[test]
    fn explicit_pair_satisfies_the_limit_equation() {
        let g = make_grid(4.0, 4096).unwrap();
        let sol = explicit_solution(1.0, 0.5, g).unwrap();
        let res = limit_equation_residual(&sol.f, &sol.g, 0.5).unwrap();
        assert!(res <= 1e-3, "{res}");
    }

    #[test]
    fn inner_set_trims_each_component() {
        let g = make_grid(10.0, 1024).unwrap();
        let u0 = crate::presets::preset("double-step", g).unwrap();
        let inner = inner_level_set(&u0, 0.9);
        let reach = inner.iter().map(|&i| g.x(i).abs()).fold(0.0, f64::max);
        assert!(reach <= 0.9 + 2.0 * g.h() && reach >= 0.9 - 2.0 * g.h(), "{reach}");
    }
}
