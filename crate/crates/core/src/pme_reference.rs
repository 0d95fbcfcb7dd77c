//! Closed-form Barenblatt solutions of the standard porous medium equation
//! `u_t = Δ(u^m)` and their `m → ∞` mesa limits. Used as an analytic oracle.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quad;

/// Volume of the unit ball in `R^N`.
pub fn omega(n: u32) -> f64 {
    let nf = n as f64;
    std::f64::consts::PI.powf(0.5 * nf) / gamma(0.5 * nf + 1.0)
}

/// Exponents and constants of the PME Barenblatt solution of mass `M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmeParams {
    pub m: f64,
    pub dim: u32,
    pub mass: f64,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
    pub gamma: f64,
    /// Free constant fixed by `M = d_m C^γ`.
    pub c: f64,
}

impl PmeParams {
    pub fn new(m: f64, dim: u32, mass: f64) -> Result<Self> {
        if !(m > 1.0) || !m.is_finite() {
            return Err(Error::config(format!("PME exponent must satisfy m > 1, got {m}")));
        }
        if dim == 0 {
            return Err(Error::config("dimension must be at least 1"));
        }
        if !(mass > 0.0) {
            return Err(Error::config(format!("mass must be positive, got {mass}")));
        }
        let nf = dim as f64;
        let alpha = nf / (nf * (m - 1.0) + 2.0);
        let beta = alpha / nf;
        let k = (m - 1.0) * alpha / (2.0 * nf * m);
        let gamma = nf / (2.0 * (m - 1.0) * alpha);
        let c = (mass / pme_dm(m, dim)).powf(1.0 / gamma);
        Ok(Self { m, dim, mass, alpha, beta, k, gamma, c })
    }

    /// Edge of the support, `ξ² = C / k`.
    pub fn support_radius(&self) -> f64 {
        (self.c / self.k).sqrt()
    }
}

/// `F_m(ξ) = (C - k ξ²)_+^{1/(m-1)}`.
pub fn pme_profile(p: &PmeParams, xi: f64) -> f64 {
    (p.c - p.k * xi * xi).max(0.0).powf(1.0 / (p.m - 1.0))
}

/// `∫_0^1 (1 - y²)^{1/(m-1)} y^{N-1} dy` by quadrature.
fn unit_moment(m: f64, dim: u32) -> f64 {
    let a = 1.0 / (m - 1.0);
    let nm1 = dim as f64 - 1.0;
    quad::adaptive(|y| (1.0 - y * y).max(0.0).powf(a) * y.powf(nm1), 0.0, 1.0, 1e-14)
}

/// `d_m = N ω_N k^{-N/2} ∫_0^1 (1 - y²)^{1/(m-1)} y^{N-1} dy`.
pub fn pme_dm(m: f64, dim: u32) -> f64 {
    let nf = dim as f64;
    let alpha = nf / (nf * (m - 1.0) + 2.0);
    let k = (m - 1.0) * alpha / (2.0 * nf * m);
    nf * omega(dim) * k.powf(-0.5 * nf) * unit_moment(m, dim)
}

/// `d̂_m = d_m / m^γ`, the constant after the rescaling `C = Ĉ / m`.
pub fn pme_dhat(m: f64, dim: u32) -> f64 {
    let nf = dim as f64;
    let alpha = nf / (nf * (m - 1.0) + 2.0);
    let gamma = nf / (2.0 * (m - 1.0) * alpha);
    pme_dm(m, dim) / m.powf(gamma)
}

/// Limit `D_∞ = ω_N (2N)^{N/2}` of `d̂_m`.
pub fn d_infinity(dim: u32) -> f64 {
    omega(dim) * (2.0 * dim as f64).powf(0.5 * dim as f64)
}

/// Closed form of `d_m` through the Beta function, `∫_0^1 (1-y²)^a y^{N-1} = B(N/2, a+1)/2`.
pub fn pme_dm_closed_form(m: f64, dim: u32) -> f64 {
    let nf = dim as f64;
    let alpha = nf / (nf * (m - 1.0) + 2.0);
    let k = (m - 1.0) * alpha / (2.0 * nf * m);
    nf * omega(dim) * k.powf(-0.5 * nf) * 0.5 * beta(0.5 * nf, 1.0 / (m - 1.0) + 1.0)
}

/// The `m → ∞` mesa: `U_∞ = χ_{B_{R_0}}` and `W_∞(x, t) = (R_0² - |x|²)_+ / (2Nt)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MesaLimit {
    pub dim: u32,
    pub mass: f64,
    pub r0: f64,
}

impl MesaLimit {
    pub fn u_inf(&self, r: f64) -> f64 {
        if r.abs() < self.r0 {
            1.0
        } else {
            0.0
        }
    }

    pub fn w_inf(&self, r: f64, t: f64) -> f64 {
        (self.r0 * self.r0 - r * r).max(0.0) / (2.0 * self.dim as f64 * t)
    }
}

/// `R_0` from `M = ω_N R_0^N`.
pub fn pme_mesa_limit(mass: f64, dim: u32) -> Result<MesaLimit> {
    if !(mass > 0.0) {
        return Err(Error::config(format!("mass must be positive, got {mass}")));
    }
    let r0 = (mass / omega(dim)).powf(1.0 / dim as f64);
    Ok(MesaLimit { dim, mass, r0 })
}

/// Discrete one-dimensional Laplacian of `W_∞(·, t)` at interior nodes of `B_{R_0}`,
/// returned as `(x, ΔW)` pairs; the exact value is `-1/t`.
pub fn mesa_laplacian_check(limit: &MesaLimit, t: f64, h: f64) -> Vec<(f64, f64)> {
    let r0 = limit.r0;
    let mut out = Vec::new();
    let n = (r0 / h).floor() as i64;
    for i in -n + 1..n {
        let x = i as f64 * h;
        if (x.abs() + h) >= r0 {
            continue;
        }
        let d2 = (limit.w_inf(x + h, t) - 2.0 * limit.w_inf(x, t) + limit.w_inf(x - h, t)) / (h * h);
        out.push((x, d2));
    }
    out
}

/// `∫_r^∞ ρ F_m(ρ) dρ` for `N = 1`.
pub fn pme_first_moment_tail(p: &PmeParams, r: f64) -> f64 {
    let edge = p.support_radius();
    if r >= edge {
        return 0.0;
    }
    quad::adaptive(|rho| rho * pme_profile(p, rho), r, edge, 1e-13)
}

/// One row of the `m`-ladder convergence table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub m: f64,
    /// `‖F_m - χ_{B_{R_0}}‖_{L¹(R^N)}`.
    pub l1_error_f: f64,
    /// `sup |m F_m^m - W_∞(·, 1)|`.
    pub sup_error_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub mass: f64,
    pub dim: u32,
    pub r0: f64,
    pub rows: Vec<LimitRow>,
    pub l1_decreasing: bool,
    pub sup_decreasing: bool,
}

/// Tabulates the distances of the closed-form profiles to their mesa limits.
pub fn pme_limit_convergence_check(m_list: &[f64], mass: f64, dim: u32) -> Result<LimitReport> {
    if m_list.is_empty() {
        return Err(Error::config("m list is empty"));
    }
    if m_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config("m list must be strictly increasing"));
    }
    let limit = pme_mesa_limit(mass, dim)?;
    let nf = dim as f64;
    let area = nf * omega(dim);
    let mut rows = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let p = PmeParams::new(m, dim, mass)?;
        let edge = p.support_radius();
        let r0 = limit.r0;
        let radial = |r: f64| area * r.powf(nf - 1.0);
        let diff = |r: f64| (pme_profile(&p, r) - limit.u_inf(r)).abs() * radial(r);
        let (lo, hi) = if edge < r0 { (edge, r0) } else { (r0, edge) };
        // For N = 1 the factor N ω_N = 2 counts both half-lines.
        let l1 = quad::adaptive(diff, 0.0, lo, 1e-12) + quad::adaptive(diff, lo, hi, 1e-12);
        let w_err = |r: f64| (m * pme_profile(&p, r).powf(m) - limit.w_inf(r, 1.0)).abs();
        let span = edge.max(r0);
        let samples = 4000;
        let sup = (0..=samples)
            .map(|i| w_err(span * i as f64 / samples as f64))
            .fold(0.0, f64::max);
        rows.push(LimitRow { m, l1_error_f: l1, sup_error_w: sup });
    }
    let l1_decreasing = rows.windows(2).all(|w| w[1].l1_error_f < w[0].l1_error_f);
    let sup_decreasing = rows.windows(2).all(|w| w[1].sup_error_w < w[0].sup_error_w);
    Ok(LimitReport { mass, dim, r0: limit.r0, rows, l1_decreasing, sup_decreasing })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponents_for_m2() {
        let p = PmeParams::new(2.0, 1, 1.0).unwrap();
        assert!((p.alpha - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.beta - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.k - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn mass_constant_for_m2() {
        let p = PmeParams::new(2.0, 1, 1.0).unwrap();
        let expect = (3f64.sqrt() / 8.0).powf(2.0 / 3.0);
        assert!((p.c - expect).abs() < 1e-12);
        let edge = p.support_radius();
        let mass = 2.0 * quad::adaptive(|x| pme_profile(&p, x), 0.0, edge, 1e-14);
        assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn profile_vanishes_outside_support() {
        let p = PmeParams::new(3.0, 1, 2.0).unwrap();
        let e = p.support_radius();
        assert_eq!(pme_profile(&p, e * 1.0001), 0.0);
        assert!(pme_profile(&p, 0.5 * e) > 0.0);
    }

    #[test]
    fn dm_quadrature_matches_beta_function() {
        for m in [1.5, 2.0, 5.0, 40.0] {
            for dim in [1, 2, 3] {
                let a = pme_dm(m, dim);
                let b = pme_dm_closed_form(m, dim);
                assert!((a - b).abs() < 1e-10 * b, "m={m} N={dim}");
                assert!(a > 0.0);
            }
        }
        // m = 2, N = 1: d_2 = 2 √12 · 2/3.
        assert!((pme_dm(2.0, 1) - 2.0 * 12f64.sqrt() * 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dhat_approaches_d_infinity_from_below() {
        let d_inf = d_infinity(1);
        assert!((d_inf - 2.0 * 2f64.sqrt()).abs() < 1e-14);
        let ladder = [5.0, 10.0, 20.0, 50.0, 100.0, 1e3, 1e4];
        let gaps: Vec<f64> = ladder.iter().map(|&m| 1.0 - pme_dhat(m, 1) / d_inf).collect();
        assert!(gaps.iter().all(|&g| g > 0.0));
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        // The gap closes like ln m / m: 7.0% at m = 50, 4.2% at m = 100.
        assert!((gaps[3] - 0.0697).abs() < 1e-3 && (gaps[4] - 0.0418).abs() < 1e-3, "{gaps:?}");
        assert!(gaps[6] < 1e-3);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(PmeParams::new(1.0, 1, 1.0).is_err());
        assert!(PmeParams::new(2.0, 1, 0.0).is_err());
        assert!(pme_limit_convergence_check(&[10.0, 5.0], 1.0, 1).is_err());
    }

    #[test]
    fn mesa_limit_values() {
        let lim = pme_mesa_limit(2.0, 1).unwrap();
        assert!((lim.r0 - 1.0).abs() < 1e-13);
        assert!((lim.w_inf(0.0, 1.0) - 0.5).abs() < 1e-13);
        let check = mesa_laplacian_check(&lim, 2.0, 0.01);
        assert!(!check.is_empty());
        for (_, d2) in check {
            assert!((d2 + 0.5).abs() < 1e-8);
        }
    }
}
