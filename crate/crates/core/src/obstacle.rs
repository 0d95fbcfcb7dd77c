//! The limit obstacle problem in one dimension.
//!
//! Find `P ≥ Φ = C - r²/2` with `G = (-Δ)^{s'} P ≥ 0` and `G (P - Φ) = 0`,
//! where `s' = 1 - s`. The explicit solution is `G = (A - B x²)_+^s`, built from
//! the Blumenthal–Getoor identity `(-Δ)^{σ/2} (1 - y²)_+^{σ/2} = K(σ)`; an
//! independent complementarity solver cross-validates it.
//!
//! For `s ≤ 1/2` the potential of order `s' ≥ 1/2` grows at infinity in one
//! dimension, so `P` is only defined up to a constant. Profiles are reported
//! with `P = (R² - r²)/2` on the contact set; the solver works with the
//! canonical kernel (`-ln|x|/π` at `s' = 1/2`) and the two differ by
//! [`ObstacleSolution::gauge_offset`].

use log::{debug, info};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;

use crate::error::{Error, Result};
use crate::fracops::{frac_laplacian, laplacian_constant, odd_constant, riesz_constant, DiscreteOperator, OperatorSpec, Toeplitz};
use crate::grid::{total_mass, Grid, Profile, Symmetry, TailModel};
use crate::quad;

const QUAD_TOL: f64 = 1e-13;
/// Relative change of the far-field moments below which the solver stops; the
/// inner solves leave noise near `1e-10`.
const MOMENT_TOL: f64 = 1e-9;

/// `(1 - x²)_+^a`, evaluated as `((1 - x)(1 + x))^a` to keep precision near the edges.
fn cap(x: f64, a: f64) -> f64 {
    let v = (1.0 - x) * (1.0 + x);
    if v <= 0.0 {
        0.0
    } else {
        v.powf(a)
    }
}

/// `(-Δ)^{σ/2} (1 - y²)_+^{σ/2}` at one point `|y| < 1` by quadrature of the hypersingular integral.
fn bg_at(y: f64, s: f64) -> f64 {
    let f = |x: f64| cap(x, s);
    let fy = f(y);
    let second_difference = |z: f64| {
        if y == 0.0 {
            // 2(1 - (1 - z²)^s) without cancellation.
            -2.0 * (s * (-z * z).ln_1p()).exp_m1()
        } else {
            2.0 * fy - f(y + z) - f(y - z)
        }
    };
    let integrand = |z: f64| second_difference(z) * z.powf(-1.0 - 2.0 * s);
    let a = 1.0 - y.abs();
    let b = 1.0 + y.abs();
    // Near z = 0 the second difference is -f''(y) z² + O(z⁴).
    let delta = if y == 0.0 { 0.0 } else { 1e-4 * a };
    let y2 = 1.0 - y * y;
    let fpp = -2.0 * s * y2.powf(s - 1.0) + 4.0 * s * (s - 1.0) * y * y * y2.powf(s - 2.0);
    let near = -fpp * delta.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s);
    let inner = quad::tanh_sinh(integrand, delta, a, QUAD_TOL);
    let middle = quad::tanh_sinh(integrand, a, b, QUAD_TOL);
    let far = 2.0 * fy * b.powf(-2.0 * s) / (2.0 * s);
    laplacian_constant(s) * (near + inner + middle + far)
}

/// Blumenthal–Getoor constant `K(σ, 1)` by quadrature at `y = 0` and `y = 0.5`.
///
/// The identity says the value is the same at every `|y| < 1`; the two
/// evaluations serve as the accuracy certificate.
pub fn bg_constant(sigma: f64, dim: u32) -> Result<f64> {
    if !(sigma > 0.0 && sigma < 2.0) {
        return Err(Error::config(format!("σ must lie in (0, 2), got {sigma}")));
    }
    if dim != 1 {
        return Err(Error::config("the quadrature route for K(σ, N) is implemented for N = 1 only"));
    }
    let s = 0.5 * sigma;
    let k0 = bg_at(0.0, s);
    let k1 = bg_at(0.5, s);
    let gap = (k0 - k1).abs();
    debug!("K({sigma}) = {k0:.12} at y = 0, {k1:.12} at y = 0.5");
    if gap > 1e-4 * k0.abs() {
        return Err(Error::Certificate(format!(
            "K({sigma}) quadratures disagree: {k0} at y = 0 vs {k1} at y = 0.5"
        )));
    }
    if gap > 1e-6 * k0.abs() {
        log::warn!("K({sigma}) quadratures differ by {gap:.2e}");
    }
    Ok(k0)
}

/// Discrete form of the identity on a grid: the spread and mean of
/// `(-Δ)^{σ/2} (1 - x²)_+^{σ/2}` over nodes with `|x| < 0.8`, against `K(σ, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BgIdentityCheck {
    pub sigma: f64,
    pub n: usize,
    pub oracle: f64,
    pub mean: f64,
    /// `(max - min) / mean`.
    pub spread: f64,
    /// `max |value - K| / K`.
    pub relative_error: f64,
}

pub fn bg_identity_check(sigma: f64, grid: Grid<f64>) -> Result<BgIdentityCheck> {
    let oracle = bg_constant(sigma, 1)?;
    let a = 0.5 * sigma;
    if grid.half_width() <= 1.0 {
        return Err(Error::config("the identity check needs a half-width above 1"));
    }
    let f = Profile::from_radial(grid, |x: f64| cap(x, a));
    let out = frac_laplacian(&f, &OperatorSpec::direct(a))?;
    let inside: Vec<f64> = (0..grid.len()).filter(|&i| grid.x(i).abs() < 0.8).map(|i| out.values[i]).collect();
    let hi = inside.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = inside.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = inside.iter().sum::<f64>() / inside.len() as f64;
    let relative_error = inside.iter().map(|v| (v - oracle).abs()).fold(0.0, f64::max) / oracle;
    Ok(BgIdentityCheck { sigma, n: grid.len(), oracle, mean, spread: (hi - lo) / mean, relative_error })
}

/// Canonical kernel of `(-Δ)^{-s'}` in one dimension: `c |r|^{2s'-1}`, or `-ln|r|/π` at `s' = 1/2`.
///
/// For `s' > 1/2` the constant is the analytic continuation (negative), so the
/// potential is fixed up to the additive constant dropped at the pole.
pub fn potential_kernel(sp: f64, r: f64) -> f64 {
    if is_log(sp) {
        -r.abs().ln() / std::f64::consts::PI
    } else {
        riesz_constant(sp) * r.abs().powf(2.0 * sp - 1.0)
    }
}

/// Second derivative of [`potential_kernel`] in `r`.
fn potential_kernel_dd(sp: f64, r: f64) -> f64 {
    if is_log(sp) {
        1.0 / (std::f64::consts::PI * r * r)
    } else {
        let a = 2.0 * sp - 1.0;
        riesz_constant(sp) * a * (a - 1.0) * r.abs().powf(a - 2.0)
    }
}

fn is_log(sp: f64) -> bool {
    (sp - 0.5).abs() < 1e-12
}

/// `∫_{-1}^{1} (1 - |t|) φ(|k + t|) dt` for the hat function centred `k` cells away.
fn hat_integral<P: Fn(f64) -> f64>(phi: P, k: usize) -> f64 {
    let kf = k as f64;
    if k == 0 {
        return 2.0 * quad::tanh_sinh(|t| (1.0 - t) * phi(t), 0.0, 1.0, QUAD_TOL);
    }
    let left = |t: f64| (1.0 + t) * phi(kf + t);
    let right = |t: f64| (1.0 - t) * phi(kf + t);
    if k == 1 {
        quad::tanh_sinh(left, -1.0, 0.0, QUAD_TOL) + quad::tanh_sinh(right, 0.0, 1.0, QUAD_TOL)
    } else {
        quad::gauss_legendre8(left, -1.0, 0.0) + quad::gauss_legendre8(right, 0.0, 1.0)
    }
}

/// Potential `∫ k(x - y) g(y) dy` with the canonical kernel of order `s'`, `g` piecewise linear.
///
/// The exterior of `g` is ignored. For `s' ≥ 1/2` the result is fixed only up to
/// the additive constant implied by [`potential_kernel`].
pub fn canonical_potential(g: &Profile<f64>, sp: f64) -> Result<Profile<f64>> {
    if !(sp > 0.0 && sp < 1.0) {
        return Err(Error::config(format!("s' must lie in (0, 1), got {sp}")));
    }
    let grid = g.grid;
    let n = grid.len();
    let h = grid.h();
    let col: Vec<f64> = if is_log(sp) {
        (0..n)
            .map(|k| -h / std::f64::consts::PI * (h.ln() + hat_integral(|r| r.ln(), k)))
            .collect()
    } else {
        let a = 2.0 * sp - 1.0;
        let c = riesz_constant(sp) * h.powf(1.0 + a);
        (0..n).map(|k| c * hat_integral(|r| r.powf(a), k)).collect()
    };
    let values = Toeplitz::new(col, false).apply(&g.values);
    let tail = if 2.0 * sp < 1.0 {
        let mass: f64 = g.values.iter().zip(grid.weights()).map(|(v, w)| v * w).sum();
        TailModel::Power { p: 1.0 - 2.0 * sp, c: riesz_constant(sp) * mass }
    } else {
        TailModel::None
    };
    let mut out = Profile { grid, values, symmetry: g.symmetry, tail };
    if out.symmetry == Symmetry::Even {
        out.symmetrize();
    }
    Ok(out)
}

/// One solved instance of the obstacle problem with its explicit coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleSolution {
    pub s: f64,
    /// `σ = 2s'`.
    pub sigma: f64,
    pub mass: f64,
    /// Coincidence radius.
    pub r: f64,
    pub a: f64,
    pub b: f64,
    /// `K(2s, 1)`, the constant of `(-Δ)^s (1 - y²)_+^s`.
    pub k: f64,
    /// Obstacle constant `R²/2` in the reporting gauge.
    pub c: f64,
    /// `M / R`, the constant of `M = c R` (mass is linear in `R` in one dimension).
    pub mass_per_radius: f64,
    /// Canonical-kernel potential minus the reported `P`.
    pub gauge_offset: f64,
    pub f: Profile<f64>,
    pub g: Profile<f64>,
    /// `P = C - ∫_0^r ρ F`, equal to `(R² - r²)/2` on the contact set.
    pub p: Profile<f64>,
}

impl ObstacleSolution {
    /// Obstacle constant for [`vi_solve`], which uses the canonical kernel.
    pub fn canonical_c(&self) -> f64 {
        self.c + self.gauge_offset
    }

    /// `P` in the canonical gauge.
    pub fn canonical_p(&self) -> Profile<f64> {
        self.p.with_values(self.p.values.iter().map(|v| v + self.gauge_offset).collect())
    }

    /// `Φ(x) = C - x²/2` on the grid.
    pub fn obstacle(&self) -> Vec<f64> {
        let grid = self.p.grid;
        (0..grid.len()).map(|i| self.c - 0.5 * grid.x(i).powi(2)).collect()
    }
}

/// Unit-radius data: `G_1(y) = (1 - y²)^s / K`, `F_1(x) = (A G_1)(x)/x` for `x > 1`.
struct UnitProfile {
    s: f64,
    k: f64,
}

impl UnitProfile {
    fn g(&self, y: f64) -> f64 {
        cap(y, self.s) / self.k
    }

    /// `F_1(x)` for `x > 1`: `(c_A/x) ∫_{-1}^{1} G_1(y) (x - y)^{-2s} dy`.
    fn f_outside(&self, x: f64) -> f64 {
        let s = self.s;
        let i = quad::tanh_sinh(|y| self.g(y) * (x - y).powf(-2.0 * s), -1.0, 1.0, QUAD_TOL);
        odd_constant(s) * i / x
    }

    fn f(&self, x: f64) -> f64 {
        if x.abs() <= 1.0 {
            1.0
        } else {
            self.f_outside(x.abs())
        }
    }

    /// `∫_1^∞ F_1`.
    fn tail_mass(&self) -> f64 {
        quad::semi_infinite(|x| self.f_outside(x), 1.0, 1e-12)
    }

    /// `∫ G_1 = B(1/2, s + 1) / K`.
    fn g_mass(&self) -> f64 {
        beta(0.5, self.s + 1.0) / self.k
    }
}

/// Explicit solution of mass `M`: `G = (A - B x²)_+^s` with `B^s K = 1`, `A = B R²`, and `R` from `∫F = M`.
pub fn explicit_solution(mass: f64, s: f64, grid: Grid<f64>) -> Result<ObstacleSolution> {
    if !(mass > 0.0) {
        return Err(Error::config(format!("mass must be positive, got {mass}")));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::config(format!("s must lie in (0, 1), got {s}")));
    }
    let sp = 1.0 - s;
    let k = bg_constant(2.0 * s, 1)?;
    let unit = UnitProfile { s, k };
    let m1 = 2.0 * (1.0 + unit.tail_mass());
    // F_R(x) = F_1(x / R), so the mass is M_1 R.
    let r = mass / m1;
    let h = grid.h();
    let l = grid.half_width();
    if r < h || r > 0.25 * l {
        return Err(Error::config(format!(
            "coincidence radius {r:.4} for mass {mass} is outside [h, L/4] = [{h:.4}, {:.4}]",
            0.25 * l
        )));
    }
    let b = k.powf(-1.0 / s);
    let a = b * r * r;
    let n = grid.len();
    let g = Profile::from_radial(grid, |x| (b * (r - x) * (r + x)).max(0.0).powf(s));
    let g_mass = r.powf(1.0 + 2.0 * s) * unit.g_mass();
    let f = Profile::from_radial(grid, |x| unit.f(x / r)).with_tail(TailModel::Power {
        p: 1.0 + 2.0 * s,
        c: odd_constant(s) * g_mass,
    });
    // P = R²/2 - ∫_0^r ρ F: on the contact set (R² - r²)/2, beyond it -R² ∫_1^{r/R} u F_1(u) du.
    let half = grid.first_positive();
    let mut p_vals = vec![0.0; n];
    let mut acc = 0.0;
    let mut last_u = 1.0;
    for i in half..n {
        let x = grid.x(i);
        if x <= r {
            p_vals[i] = 0.5 * (r * r - x * x);
            continue;
        }
        let u = x / r;
        let seg = |v: f64| v * unit.f_outside(v);
        acc += if last_u == 1.0 {
            quad::tanh_sinh(seg, 1.0, u, 1e-12)
        } else {
            quad::gauss_legendre8(seg, last_u, u)
        };
        last_u = u;
        p_vals[i] = -r * r * acc;
    }
    for i in 0..half {
        p_vals[i] = p_vals[n - 1 - i];
    }
    let p = Profile::new(grid, p_vals, Symmetry::Even, TailModel::None)?;
    // Canonical potential at the origin, ∫ k(y) G(y) dy.
    let c_canonical = 2.0 * quad::tanh_sinh(|y| potential_kernel(sp, y) * (b * (r - y) * (r + y)).max(0.0).powf(s), 0.0, r, 1e-13);
    let c = 0.5 * r * r;
    info!("obstacle s = {s}: K = {k:.8}, R = {r:.6}, M_1 = {m1:.6}");
    Ok(ObstacleSolution {
        s,
        sigma: 2.0 * sp,
        mass,
        r,
        a,
        b,
        k,
        c,
        mass_per_radius: m1,
        gauge_offset: c_canonical - c,
        f,
        g,
        p,
    })
}

/// Checks of the explicit solution's defining relations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// `|A - B R²| / A`.
    pub a_relation: f64,
    /// `|B^s K - 1|`.
    pub b_relation: f64,
    /// The printed closure `B R^{2s} K`, equal to 1 only when `B^s = R^{-2s} B`.
    pub printed_closure: f64,
    /// `min (P - Φ)`.
    pub min_gap: f64,
    /// `max |G (P - Φ)| / (‖G‖_∞ ‖P‖_∞)`.
    pub complementarity: f64,
    /// `max |P - (R² - r²)/2|` on `r < 0.95 R`.
    pub contact_pressure: f64,
    /// `|∫F - M| / M`.
    pub mass_error: f64,
}

pub fn check_invariants(sol: &ObstacleSolution) -> Result<InvariantReport> {
    let grid = sol.p.grid;
    let phi = sol.obstacle();
    let mut min_gap = f64::INFINITY;
    let mut comp = 0.0f64;
    let mut contact = 0.0f64;
    for i in 0..grid.len() {
        let gap = sol.p.values[i] - phi[i];
        min_gap = min_gap.min(gap);
        comp = comp.max((sol.g.values[i] * gap).abs());
        let x = grid.x(i);
        if x.abs() < 0.95 * sol.r {
            contact = contact.max((sol.p.values[i] - 0.5 * (sol.r * sol.r - x * x)).abs());
        }
    }
    let scale = sol.g.lp_norm(f64::INFINITY) * sol.p.lp_norm(f64::INFINITY);
    Ok(InvariantReport {
        a_relation: (sol.a - sol.b * sol.r * sol.r).abs() / sol.a,
        b_relation: (sol.b.powf(sol.s) * sol.k - 1.0).abs(),
        printed_closure: sol.b * sol.r.powf(2.0 * sol.s) * sol.k,
        min_gap,
        complementarity: comp / scale,
        contact_pressure: contact,
        mass_error: (total_mass(&sol.f)? - sol.mass).abs() / sol.mass,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum ViMethod {
    /// Primal-dual active set with conjugate-gradient solves on the free set.
    ActiveSet,
    /// Projected successive over-relaxation on the dense operator.
    Psor { omega: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViOptions {
    pub method: ViMethod,
    /// Tolerance on the natural residual `max |min(P - Φ, G)|` for relaxation sweeps.
    pub tol: f64,
    /// Cap on active-set updates or relaxation sweeps.
    pub max_iterations: usize,
    /// Cap on far-field (moment) updates.
    pub max_outer: usize,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self { method: ViMethod::ActiveSet, tol: 1e-10, max_iterations: 100_000, max_outer: 60 }
    }
}

/// The three complementarity defects, plus the product itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplementarityDefects {
    /// `max (Φ - P)_+`.
    pub obstacle_violation: f64,
    /// `∫ G_-`.
    pub negative_g_mass: f64,
    /// `max |G|` on the non-contact set, where `(-Δ)^{s'} P = 0` must hold.
    pub equation_residual: f64,
    /// `max |G (P - Φ)|`.
    pub complementarity: f64,
}

impl ComplementarityDefects {
    pub fn max(&self) -> f64 {
        self.obstacle_violation.max(self.negative_g_mass).max(self.equation_residual).max(self.complementarity)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViSolution {
    /// Obstacle constant in the canonical gauge.
    pub c: f64,
    pub sp: f64,
    pub p: Profile<f64>,
    /// `G = (-Δ)^{s'} P`.
    pub g: Profile<f64>,
    /// `F = -P'/r` by central differences.
    pub f: Profile<f64>,
    /// Edge of the contact set, refined from the `G ~ (R - r)^{1-s'}` edge behaviour.
    pub contact_radius: f64,
    pub defects: ComplementarityDefects,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Conjugate gradients for `T_II z_I = rhs_I` on the free set `I`, with `T` applied by FFT.
fn masked_cg(op: &DiscreteOperator<f64>, free: &[bool], rhs: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    let mask = |v: &mut [f64]| {
        for (vi, &f) in v.iter_mut().zip(free) {
            if !f {
                *vi = 0.0;
            }
        }
    };
    let apply = |v: &[f64]| {
        let mut out = op.apply(v);
        mask(&mut out);
        out
    };
    let mut x = x0.to_vec();
    mask(&mut x);
    let mut b = rhs.to_vec();
    mask(&mut b);
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let limit = 10 * n;
    for it in 0..limit {
        if rr.sqrt() <= 1e-14 * bnorm {
            debug!("active-set CG converged in {it} iterations");
            return Ok(x);
        }
        let ap = apply(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, c)| a * c).sum();
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::no_convergence("obstacle CG", limit, vec![rr.sqrt() / bnorm]))
}

/// Natural residual `max |min(z, w)|` of the complementarity system.
fn natural_residual(z: &[f64], w: &[f64]) -> f64 {
    z.iter().zip(w).map(|(a, b)| a.min(*b).abs()).fold(0.0, f64::max)
}

/// Solves `z ≥ 0, w = T z + q ≥ 0, z·w = 0` by primal-dual active sets.
fn solve_active_set(op: &DiscreteOperator<f64>, q: &[f64], z: &mut Vec<f64>, opts: &ViOptions, history: &mut Vec<f64>) -> Result<usize> {
    let n = q.len();
    let cpd = op.matrix().diagonal();
    // Start from the contact set implied by the current iterate.
    let mut active: Vec<bool> = z.iter().map(|&v| v <= 0.0).collect();
    for it in 0..opts.max_iterations.min(1000) {
        let free: Vec<bool> = active.iter().map(|a| !a).collect();
        let rhs: Vec<f64> = q.iter().map(|v| -v).collect();
        *z = masked_cg(op, &free, &rhs, z)?;
        let tz = op.apply(z);
        let w: Vec<f64> = tz.iter().zip(q).map(|(a, b)| a + b).collect();
        let next: Vec<bool> = (0..n).map(|j| w[j] - cpd * z[j] > 0.0).collect();
        let res = natural_residual(z, &w);
        history.push(res);
        if next == active {
            return Ok(it + 1);
        }
        active = next;
    }
    Err(Error::no_convergence("obstacle active-set iteration", opts.max_iterations.min(1000), history.clone()))
}

/// Projected SOR sweeps on the dense operator.
fn solve_psor(op: &DiscreteOperator<f64>, q: &[f64], z: &mut [f64], omega: f64, opts: &ViOptions, history: &mut Vec<f64>) -> Result<usize> {
    let n = q.len();
    let col = op.matrix().column().to_vec();
    let diag = col[0];
    let tz = op.apply(z);
    let mut w: Vec<f64> = tz.iter().zip(q).map(|(a, b)| a + b).collect();
    for sweep in 0..opts.max_iterations {
        for j in 0..n {
            let zj = (z[j] - omega * w[j] / diag).max(0.0);
            let d = zj - z[j];
            if d != 0.0 {
                z[j] = zj;
                for (i, wi) in w.iter_mut().enumerate() {
                    *wi += d * col[i.abs_diff(j)];
                }
            }
        }
        let res = natural_residual(z, &w);
        if sweep % 100 == 0 {
            history.push(res);
        }
        if res < opts.tol {
            history.push(res);
            return Ok(sweep + 1);
        }
    }
    Err(Error::no_convergence("obstacle projected SOR", opts.max_iterations, history.clone()))
}

/// Complementarity solve of the obstacle problem at constant `C` (canonical gauge) and order `s'`.
///
/// The far field of `P` is the canonical potential of `G` expanded to the
/// quadrupole term; its moments are updated until they stop changing.
pub fn vi_solve(c: f64, sp: f64, grid: Grid<f64>, opts: &ViOptions) -> Result<ViSolution> {
    if !c.is_finite() {
        return Err(Error::config("obstacle constant must be finite"));
    }
    if !(sp > 0.0 && sp <= 0.5) {
        return Err(Error::config(format!(
            "the complementarity solver needs s' in (0, 1/2] (got {sp}); for s' > 1/2 the canonical potential admits the trivial solution P = 0"
        )));
    }
    if let ViMethod::Psor { omega } = opts.method {
        if !(omega > 0.0 && omega < 2.0) {
            return Err(Error::config(format!("relaxation factor must lie in (0, 2), got {omega}")));
        }
    }
    let n = grid.len();
    let op = DiscreteOperator::laplacian(grid, sp)?;
    let x = grid.nodes();
    let wts = grid.weights();
    let phi: Vec<f64> = x.iter().map(|v| c - 0.5 * v * v).collect();
    let t_phi = op.apply(&phi);
    // z = P - Φ, starting from a nonempty contact set.
    let r_guess = (2.0 * c.abs()).sqrt();
    let mut z: Vec<f64> = x.iter().map(|&v| if v.abs() <= r_guess { 0.0 } else { 1.0 }).collect();
    let (mut m0, mut m2) = (0.0f64, 0.0f64);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut w = vec![0.0; n];
    for outer in 0..opts.max_outer {
        let ext = op.exterior_with(|r| m0 * potential_kernel(sp, r) + 0.5 * m2 * potential_kernel_dd(sp, r));
        let q: Vec<f64> = t_phi.iter().zip(&ext).map(|(a, b)| a + b).collect();
        iterations += match opts.method {
            ViMethod::ActiveSet => solve_active_set(&op, &q, &mut z, opts, &mut history)?,
            ViMethod::Psor { omega } => solve_psor(&op, &q, &mut z, omega, opts, &mut history)?,
        };
        let tz = op.apply(&z);
        w = tz.iter().zip(&q).map(|(a, b)| a + b).collect();
        let n0: f64 = w.iter().zip(&wts).map(|(g, wt)| g * wt).sum();
        let n2: f64 = w.iter().zip(&wts).zip(&x).map(|((g, wt), xi)| g * wt * xi * xi).sum();
        let change = (n0 - m0).abs().max((n2 - m2).abs());
        debug!("obstacle outer {outer}: M0 = {n0:.12}, M2 = {n2:.12}, change {change:.2e}");
        m0 = n0;
        m2 = n2;
        if change <= MOMENT_TOL * m0.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::no_convergence("obstacle far-field moments", opts.max_outer, history));
    }
    let p_vals: Vec<f64> = z.iter().zip(&phi).map(|(a, b)| a + b).collect();
    let contact: Vec<bool> = z.iter().map(|&v| v == 0.0).collect();
    let mut defects = ComplementarityDefects {
        obstacle_violation: 0.0,
        negative_g_mass: 0.0,
        equation_residual: 0.0,
        complementarity: 0.0,
    };
    for j in 0..n {
        defects.obstacle_violation = defects.obstacle_violation.max(-z[j]);
        defects.negative_g_mass += wts[j] * (-w[j]).max(0.0);
        if !contact[j] {
            defects.equation_residual = defects.equation_residual.max(w[j].abs());
        }
        defects.complementarity = defects.complementarity.max((w[j] * z[j]).abs());
    }
    let h = grid.h();
    let f_vals: Vec<f64> = (0..n)
        .map(|i| {
            let d = if i == 0 {
                (p_vals[1] - p_vals[0]) / h
            } else if i == n - 1 {
                (p_vals[n - 1] - p_vals[n - 2]) / h
            } else {
                (p_vals[i + 1] - p_vals[i - 1]) / (2.0 * h)
            };
            -d / x[i]
        })
        .collect();
    // G ~ (R - r)^{1 - s'} at the edge: extrapolate G^{1/(1-s')} linearly to zero.
    let half = grid.first_positive();
    let last = (half..n).filter(|&j| contact[j]).max();
    let contact_radius = match last {
        Some(j) if j > half => {
            let e = 1.0 / (1.0 - sp);
            let (u1, u0) = (w[j].max(0.0).powf(e), w[j - 1].max(0.0).powf(e));
            let step = if u0 > u1 { u1 * h / (u0 - u1) } else { 0.5 * h };
            x[j] + step.min(h)
        }
        Some(j) => x[j] + 0.5 * h,
        None => 0.0,
    };
    let p = even_profile(grid, p_vals);
    let g = even_profile(grid, w);
    let f = even_profile(grid, f_vals);
    info!("obstacle VI: C = {c:.6}, contact radius {contact_radius:.5}, defects {:.2e}", defects.max());
    Ok(ViSolution { c, sp, p, g, f, contact_radius, defects, iterations, history })
}

/// Averages mirror nodes; solver output is even up to round-off.
fn even_profile(grid: Grid<f64>, values: Vec<f64>) -> Profile<f64> {
    let mut p = Profile { grid, values, symmetry: Symmetry::Even, tail: TailModel::None };
    p.symmetrize();
    p
}

/// Local Hölder exponents across the free boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    /// Fitted exponent of `G(R - d)` as `d → 0`.
    pub g_edge_exponent: f64,
    /// Fitted exponent of `P'(R + d) - P'(R)`.
    pub p_prime_exponent: f64,
    /// `|P'(R+) - P'(R-)| / ‖P'‖_∞`, with the right limit extrapolated from the fit.
    pub p_prime_jump: f64,
    /// Fitted exponent of `1 - F(R + d)`.
    pub f_edge_exponent: f64,
    pub g_in_range: bool,
    pub p_prime_in_range: bool,
}

/// Least-squares slope of `log v` against `log d`.
fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let k = pts.len() as f64;
    let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    sxy / sxx
}

/// Fits edge exponents of `G`, `P'` and `F` from nodes within `32h` of the free boundary.
pub fn regularity_probe(sol: &ObstacleSolution) -> Result<RegularityReport> {
    let grid = sol.p.grid;
    let n = grid.len();
    if n < 2048 {
        return Err(Error::config("regularity probe needs at least 2048 nodes"));
    }
    let h = grid.h();
    let r = sol.r;
    let sp = 1.0 - sol.s;
    let half = grid.first_positive();
    let mut g_pts = Vec::new();
    let mut pp_pts = Vec::new();
    let mut f_pts = Vec::new();
    let pprime = |i: usize| -grid.x(i) * sol.f.values[i];
    for i in half..n {
        let x = grid.x(i);
        let d = (x - r).abs();
        if !(d >= h && d <= 32.0 * h) {
            continue;
        }
        if x < r {
            g_pts.push((d, sol.g.values[i]));
        } else {
            pp_pts.push((d, (pprime(i) + r).abs()));
            f_pts.push((d, 1.0 - sol.f.values[i]));
        }
    }
    if g_pts.len() < 2 || pp_pts.len() < 2 {
        return Err(Error::config("too few nodes near the free boundary"));
    }
    let ge = loglog_slope(&g_pts);
    let pe = loglog_slope(&pp_pts);
    let fe = loglog_slope(&f_pts);
    // Right limit of P' from P'(R + d) ≈ a + b d^e at the two nearest nodes.
    let (d1, v1) = pp_pts[0];
    let (d2, v2) = pp_pts[1];
    let (e1, e2) = (d1.powf(pe), d2.powf(pe));
    let right = -(v1 * e2 - v2 * e1) / (e2 - e1) - r;
    let left = -r;
    let scale = (0..n).map(pprime).fold(0.0f64, |a, b| a.max(b.abs()));
    Ok(RegularityReport {
        g_edge_exponent: ge,
        p_prime_exponent: pe,
        p_prime_jump: (right - left).abs() / scale,
        f_edge_exponent: fe,
        g_in_range: ge >= sol.s - 0.15 && ge <= 1.0,
        p_prime_in_range: pe >= sp - 0.15 && pe <= 1.0,
    })
}

/// `‖F_s - χ_{[-R0, R0]}‖_{L¹(-2R0, 2R0)}` for each `s`, with `R0 = M/2` the mesa of the same mass.
pub fn mesa_distance_ladder(s_list: &[f64], mass: f64, grid: Grid<f64>) -> Result<Vec<(f64, f64)>> {
    let r0 = 0.5 * mass;
    let w = grid.weights();
    s_list
        .iter()
        .map(|&s| {
            let sol = explicit_solution(mass, s, grid)?;
            let d: f64 = (0..grid.len())
                .filter(|&i| grid.x(i).abs() <= 2.0 * r0)
                .map(|i| {
                    let chi = if grid.x(i).abs() < r0 { 1.0 } else { 0.0 };
                    (sol.f.values[i] - chi).abs() * w[i]
                })
                .sum();
            Ok((s, d))
        })
        .collect()
}

/// Relative sup distance between a solver potential and the explicit one, both in the canonical gauge.
pub fn cross_validation_gap(explicit: &ObstacleSolution, vi: &ViSolution) -> f64 {
    let pc = explicit.canonical_p();
    let num = pc.values.iter().zip(&vi.p.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    num / pc.lp_norm(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use statrs::function::gamma::gamma;

    fn getoor(sigma: f64) -> f64 {
        2f64.powf(sigma) * gamma(1.0 + 0.5 * sigma) * gamma(0.5 * (1.0 + sigma)) / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn bg_constant_matches_closed_form() {
        assert!((bg_constant(1.0, 1).unwrap() - 1.0).abs() < 1e-8);
        for sigma in [0.2, 0.5, 1.4, 1.9] {
            let k = bg_constant(sigma, 1).unwrap();
            assert!((k - getoor(sigma)).abs() < 1e-7 * getoor(sigma), "σ = {sigma}: {k} vs {}", getoor(sigma));
        }
    }

    #[test]
    fn bg_constancy_certificate() {
        for s in [0.1, 0.5, 0.8] {
            assert!((bg_at(0.0, s) - bg_at(0.5, s)).abs() < 1e-6);
        }
    }

    #[test]
    fn bg_small_sigma_trend() {
        let ks: Vec<f64> = [0.2, 0.1, 0.05].iter().map(|&s| bg_constant(s, 1).unwrap()).collect();
        assert!(ks[0] < ks[1] && ks[1] < ks[2] && ks[2] < 1.0);
    }

    #[test]
    fn bg_rejects_bad_input() {
        assert!(bg_constant(2.0, 1).is_err());
        assert!(bg_constant(1.0, 2).is_err());
    }

    #[test]
    fn explicit_half_is_consistent() {
        let g = make_grid(4.0, 2048).unwrap();
        let sol = explicit_solution(1.0, 0.5, g).unwrap();
        assert!((sol.k - 1.0).abs() < 1e-8);
        let inv = check_invariants(&sol).unwrap();
        assert!(inv.a_relation < 1e-12 && inv.b_relation < 1e-10, "{inv:?}");
        assert!(inv.min_gap >= -1e-8 && inv.complementarity <= 1e-8, "{inv:?}");
        assert!(inv.contact_pressure < 1e-6, "{inv:?}");
        assert!(inv.mass_error < 0.01, "{inv:?}");
        // On the contact set A G = x, i.e. F = 1.
        let ag = crate::fracops::a_operator(&sol.g, 0.5).unwrap();
        for i in g.first_positive()..g.len() {
            let x = g.x(i);
            if x < 0.8 * sol.r {
                assert!((ag.values[i] - x).abs() < 2e-3, "x = {x}: {}", ag.values[i]);
            }
        }
    }

    #[test]
    fn semicircle_identity_on_the_grid() {
        let c = bg_identity_check(1.0, make_grid(2.0, 4096).unwrap()).unwrap();
        assert!(c.spread <= 0.01 && c.relative_error <= 0.01, "{c:?}");
    }

    #[test]
    fn canonical_potential_matches_riesz() {
        let g = make_grid(6.0, 512).unwrap();
        let bump = Profile::from_radial(g, |x: f64| (1.0 - x * x).max(0.0).powi(2));
        let sp = 0.3;
        let a = canonical_potential(&bump, sp).unwrap();
        let b = crate::fracops::riesz_potential(&bump, &crate::fracops::OperatorSpec::direct(sp)).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-10 * y.abs().max(1.0));
        }
    }

    #[test]
    fn log_potential_of_a_bump() {
        // Oracle: -1/π ∫ ln|x - y| (1 - y²)_+ dy by adaptive quadrature at x = 2.
        let g = make_grid(4.0, 2048).unwrap();
        let bump = Profile::from_radial(g, |x: f64| (1.0 - x * x).max(0.0));
        let p = canonical_potential(&bump, 0.5).unwrap();
        let exact = -quad::adaptive(|y| (2.0 - y).ln() * (1.0 - y * y), -1.0, 1.0, 1e-14) / std::f64::consts::PI;
        assert!((p.interpolate(2.0) - exact).abs() < 1e-5, "{} vs {exact}", p.interpolate(2.0));
    }

    #[test]
    fn radius_increases_with_mass() {
        let g = make_grid(8.0, 512).unwrap();
        let rs: Vec<f64> = [0.5, 1.0, 2.0, 4.0].iter().map(|&m| explicit_solution(m, 0.5, g).unwrap().r).collect();
        assert!(rs.windows(2).all(|w| w[1] > w[0]));
        assert!((rs[3] / rs[0] - 8.0).abs() < 1e-10);
    }

    #[test]
    fn vi_matches_explicit_at_three_quarters() {
        let g = make_grid(4.0, 1024).unwrap();
        let sol = explicit_solution(1.0, 0.75, g).unwrap();
        let vi = vi_solve(sol.canonical_c(), 0.25, g, &ViOptions::default()).unwrap();
        assert!(vi.defects.max() < 1e-6, "{:?}", vi.defects);
        assert!((vi.contact_radius - sol.r).abs() < 2.0 * g.h(), "{} vs {}", vi.contact_radius, sol.r);
        assert!(cross_validation_gap(&sol, &vi) < 5e-3);
    }

    #[test]
    fn psor_agrees_with_active_set() {
        let g = make_grid(2.0, 128).unwrap();
        let a = vi_solve(0.05, 0.5, g, &ViOptions::default()).unwrap();
        let opts = ViOptions { method: ViMethod::Psor { omega: 1.5 }, ..ViOptions::default() };
        let b = vi_solve(0.05, 0.5, g, &opts).unwrap();
        let gap = a.p.values.iter().zip(&b.p.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-8, "{gap}");
    }

    #[test]
    fn vi_rejects_bad_input() {
        let g = make_grid(2.0, 64).unwrap();
        assert!(matches!(vi_solve(f64::NAN, 0.5, g, &ViOptions::default()), Err(Error::Config(_))));
        assert!(matches!(vi_solve(0.1, 1.0, g, &ViOptions::default()), Err(Error::Config(_))));
        assert!(matches!(vi_solve(0.1, 0.7, g, &ViOptions::default()), Err(Error::Config(_))));
    }
}
