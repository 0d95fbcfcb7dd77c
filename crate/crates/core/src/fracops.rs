//! Discrete fractional operators on uniform grids.
//!
//! All three direct operators share one construction: the profile is replaced by
//! its piecewise-linear interpolant, the kernel is integrated exactly against each
//! hat function away from the singular cell, and the singular cell `|x - y| < h`
//! is handled with a local Taylor expansion. The result is a Toeplitz matrix
//! (symmetric for `(-Δ)^s` and the Riesz potential, antisymmetric for the odd
//! operator `A`) applied by FFT circulant embedding, plus an exterior vector
//! built from the profile's tail model.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{Grid, Profile, Symmetry, TailModel};
use crate::quad;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DirectQuadrature,
    SpectralPeriodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exterior {
    ZeroExtension,
    TailCompensated,
    /// Tail-compensated when the profile carries a tail model, zero extension otherwise.
    Auto,
}

/// Order and evaluation choices for one operator application.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    /// `s` for `(-Δ)^s` and `A`, `s'` for the potential `(-Δ)^{-s'}`.
    pub order: f64,
    pub method: Method,
    pub exterior: Exterior,
}

impl OperatorSpec {
    pub fn direct(order: f64) -> Self {
        Self { order, method: Method::DirectQuadrature, exterior: Exterior::Auto }
    }

    pub fn spectral(order: f64) -> Self {
        Self { order, method: Method::SpectralPeriodic, exterior: Exterior::ZeroExtension }
    }

    pub fn with_exterior(mut self, exterior: Exterior) -> Self {
        self.exterior = exterior;
        self
    }
}

fn check_order(order: f64) -> Result<()> {
    if !(order > 0.0 && order < 1.0) {
        return Err(Error::config(format!("operator order must lie in (0, 1), got {order}")));
    }
    Ok(())
}

/// Constant of the hypersingular integral for `(-Δ)^s` in one dimension.
///
/// Fixed by requiring the Fourier symbol `|ξ|^{2s}`: `Γ(1 + 2s) sin(π s) / π`.
pub fn laplacian_constant(s: f64) -> f64 {
    gamma(1.0 + 2.0 * s) * (std::f64::consts::PI * s).sin() / std::f64::consts::PI
}

/// Constant of the Riesz kernel `|x|^{-(1-2s')}` of `(-Δ)^{-s'}` (requires `2s' < 1`).
pub fn riesz_constant(sp: f64) -> f64 {
    1.0 / (2.0 * gamma(2.0 * sp) * (std::f64::consts::PI * sp).cos())
}

/// Constant of `A f(x) = c ∫_0^∞ (f(x - t) - f(x + t)) t^{-2s} dt`, symbol `-iξ|ξ|^{2s-2}`.
pub fn odd_constant(s: f64) -> f64 {
    gamma(2.0 * s) * (std::f64::consts::PI * s).sin() / std::f64::consts::PI
}

/// Hat-function moments of the kernel `z^{-q}` in units of `h`.
///
/// `rise[k] = ∫_{k-1}^{k} (z - k + 1) z^{-q} dz`, `fall[k] = ∫_k^{k+1} (k + 1 - z) z^{-q} dz`.
/// `rise[0]` and `fall[0]` are unused.
struct HatMoments {
    rise: Vec<f64>,
    fall: Vec<f64>,
}

impl HatMoments {
    /// Below this distance the moments use closed forms; beyond it the kernel is
    /// smooth on each cell and Gauss–Legendre avoids the cancellation of the
    /// closed forms.
    const CLOSED_FORM_LIMIT: usize = 16;

    fn new(q: f64, kmax: usize) -> Self {
        let mut rise = vec![0.0; kmax + 1];
        let mut fall = vec![0.0; kmax + 1];
        // First and second antiderivatives of z^{-q}.
        let f1 = |z: f64| {
            if (q - 1.0).abs() < 1e-12 {
                z.ln()
            } else {
                z.powf(1.0 - q) / (1.0 - q)
            }
        };
        let f2 = |z: f64| {
            if (q - 1.0).abs() < 1e-12 {
                z * z.ln() - z
            } else if (q - 2.0).abs() < 1e-12 {
                -z.ln()
            } else {
                z.powf(2.0 - q) / ((1.0 - q) * (2.0 - q))
            }
        };
        for k in 1..=kmax {
            let kf = k as f64;
            if k == 1 {
                // Only finite for q < 2; used by the potential where it is integrable.
                rise[k] = 1.0 / (2.0 - q);
                fall[k] = -f1(kf) + f2(kf + 1.0) - f2(kf);
            } else if k < Self::CLOSED_FORM_LIMIT {
                rise[k] = f1(kf) - (f2(kf) - f2(kf - 1.0));
                fall[k] = -f1(kf) + f2(kf + 1.0) - f2(kf);
            } else {
                rise[k] = quad::gauss_legendre8(|z| (z - kf + 1.0) * z.powf(-q), kf - 1.0, kf);
                fall[k] = quad::gauss_legendre8(|z| (kf + 1.0 - z) * z.powf(-q), kf, kf + 1.0);
            }
        }
        Self { rise, fall }
    }

    fn full(&self, k: usize) -> f64 {
        self.rise[k] + self.fall[k]
    }
}

/// Toeplitz matrix `T_{ij} = t_{|i-j|}` (symmetric) or `sign(i-j) t_{|i-j|}` (antisymmetric).
pub struct Toeplitz<T: Real> {
    n: usize,
    antisymmetric: bool,
    col: Vec<T>,
    spectrum: Vec<Complex<T>>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> Toeplitz<T> {
    pub fn new(col: Vec<T>, antisymmetric: bool) -> Self {
        let n = col.len();
        let m = 2 * n;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(m);
        let inverse = planner.plan_fft_inverse(m);
        let mut emb = vec![Complex::new(T::zero(), T::zero()); m];
        emb[0] = Complex::new(col[0], T::zero());
        for k in 1..n {
            let lower = col[k];
            let upper = if antisymmetric { -col[k] } else { col[k] };
            emb[k] = Complex::new(lower, T::zero());
            emb[m - k] = Complex::new(upper, T::zero());
        }
        forward.process(&mut emb);
        Self { n, antisymmetric, col, spectrum: emb, forward, inverse }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_antisymmetric(&self) -> bool {
        self.antisymmetric
    }

    /// Entry `(i, j)`.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> T {
        if i >= j {
            self.col[i - j]
        } else if self.antisymmetric {
            -self.col[j - i]
        } else {
            self.col[j - i]
        }
    }

    pub fn diagonal(&self) -> T {
        self.col[0]
    }

    pub fn column(&self) -> &[T] {
        &self.col
    }

    /// `y = T x` in `O(n log n)`.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n, "toeplitz operand length");
        let m = 2 * self.n;
        let mut buf = vec![Complex::new(T::zero(), T::zero()); m];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= *s;
        }
        self.inverse.process(&mut buf);
        let scale = T::one() / T::from_len(m);
        buf[..self.n].iter().map(|c| c.re * scale).collect()
    }

    /// Plain `O(n^2)` product, used as a correctness oracle. Rows are
    /// independent, each summed in a fixed order.
    pub fn apply_dense(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n, "toeplitz operand length");
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let mut acc = T::zero();
                for (j, &xj) in x.iter().enumerate() {
                    acc += self.entry(i, j) * xj;
                }
                acc
            })
            .collect()
    }

    /// Dense `f64` copy for direct factorizations.
    pub fn to_dense_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.entry(i, j).to64())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OperatorKind {
    /// `(-Δ)^s`.
    Laplacian { s: f64 },
    /// `(-Δ)^{-s'}` with `2s' < 1`.
    Riesz { sp: f64 },
    /// `A = -∂_x (-∂_xx)^{-(1-s)}`, symbol `-iξ|ξ|^{2s-2}`.
    Odd { s: f64 },
}

/// A direct-quadrature operator on a fixed grid.
pub struct DiscreteOperator<T: Real> {
    pub kind: OperatorKind,
    pub grid: Grid<T>,
    matrix: Toeplitz<T>,
    moments: HatMoments,
    /// Overall factor (`c h^{...}`) already folded into `matrix`.
    scale: f64,
}

impl<T: Real> DiscreteOperator<T> {
    pub fn laplacian(grid: Grid<T>, s: f64) -> Result<Self> {
        check_order(s)?;
        let n = grid.len();
        let h = grid.h().to64();
        let q = 1.0 + 2.0 * s;
        let mom = HatMoments::new(q, n);
        let scale = laplacian_constant(s) * h.powf(-2.0 * s);
        let taylor = 1.0 / (2.0 - 2.0 * s);
        let mut col = vec![0.0; n];
        col[0] = 2.0 / (2.0 * s) + 2.0 * taylor;
        col[1] = -mom.fall[1] - taylor;
        for (k, c) in col.iter_mut().enumerate().skip(2) {
            *c = -mom.full(k);
        }
        Ok(Self::assemble(OperatorKind::Laplacian { s }, grid, col, false, mom, scale))
    }

    pub fn riesz(grid: Grid<T>, sp: f64) -> Result<Self> {
        check_order(sp)?;
        if 2.0 * sp >= 1.0 {
            return Err(Error::config(format!(
                "direct Riesz potential needs 2s' < 1 (got s' = {sp}); the kernel grows at infinity, use the odd operator A instead"
            )));
        }
        let n = grid.len();
        let h = grid.h().to64();
        let q = 1.0 - 2.0 * sp;
        let mom = HatMoments::new(q, n);
        let scale = riesz_constant(sp) * h.powf(1.0 - q);
        let mut col = vec![0.0; n];
        col[0] = 2.0 / ((1.0 - q) * (2.0 - q));
        for (k, c) in col.iter_mut().enumerate().skip(1) {
            *c = mom.full(k);
        }
        Ok(Self::assemble(OperatorKind::Riesz { sp }, grid, col, false, mom, scale))
    }

    pub fn odd(grid: Grid<T>, s: f64) -> Result<Self> {
        check_order(s)?;
        let n = grid.len();
        let h = grid.h().to64();
        let q = 2.0 * s;
        let mom = HatMoments::new(q, n);
        let scale = odd_constant(s) * h.powf(1.0 - 2.0 * s);
        let mut col = vec![0.0; n];
        // Coefficient of f_{i-k}; f_{i+k} enters with the opposite sign.
        col[1] = mom.fall[1] + 1.0 / (2.0 - 2.0 * s);
        for (k, c) in col.iter_mut().enumerate().skip(2) {
            *c = mom.full(k);
        }
        Ok(Self::assemble(OperatorKind::Odd { s }, grid, col, true, mom, scale))
    }

    fn assemble(kind: OperatorKind, grid: Grid<T>, col: Vec<f64>, anti: bool, moments: HatMoments, scale: f64) -> Self {
        let col_t = col.iter().map(|&c| T::lit(c * scale)).collect();
        Self { kind, grid, matrix: Toeplitz::new(col_t, anti), moments, scale }
    }

    pub fn matrix(&self) -> &Toeplitz<T> {
        &self.matrix
    }

    /// Applies the matrix to interior values (zero extension).
    pub fn apply(&self, v: &[T]) -> Vec<T> {
        self.matrix.apply(v)
    }

    pub fn apply_dense(&self, v: &[T]) -> Vec<T> {
        self.matrix.apply_dense(v)
    }

    /// Contribution of the exterior values described by `tail` at every node.
    pub fn exterior(&self, tail: &TailModel) -> Vec<T> {
        if matches!(tail, TailModel::None) {
            return vec![T::zero(); self.grid.len()];
        }
        let tail = *tail;
        self.exterior_with(move |y| tail.value(y))
    }

    /// Contribution of exterior values `b(|x|)` for `|x| > L`; `b` may grow slower than the kernel decays.
    pub fn exterior_with<B: Fn(f64) -> f64 + Sync>(&self, b: B) -> Vec<T> {
        let n = self.grid.len();
        let h = self.grid.h().to64();
        let l = self.grid.half_width().to64();
        let a = l + h;
        let ghost = b(a);
        let kind = self.kind;
        let mom = &self.moments;
        let scale = self.scale;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let x = self.grid.x(i).to64();
                let kr = n - i; // distance to the right ghost (index n)
                let kl = i + 1; // distance to the left ghost (index -1)
                let b = |y: f64| b(y.abs());
                let v = match kind {
                    OperatorKind::Laplacian { s } => {
                        let taylor = 1.0 / (2.0 - 2.0 * s);
                        let wr = if kr == 1 { taylor } else { mom.rise[kr] };
                        let wl = if kl == 1 { taylor } else { mom.rise[kl] };
                        let q = 1.0 + 2.0 * s;
                        let far = tail_integral(&b, a, x, q, 1.0) + tail_integral(&b, a, -x, q, 1.0);
                        -scale * ghost * (wr + wl) - laplacian_constant(s) * far
                    }
                    OperatorKind::Riesz { sp } => {
                        let q = 1.0 - 2.0 * sp;
                        let far = tail_integral(&b, a, x, q, 1.0) + tail_integral(&b, a, -x, q, 1.0);
                        scale * ghost * (mom.rise[kr] + mom.rise[kl]) + riesz_constant(sp) * far
                    }
                    OperatorKind::Odd { s } => {
                        let taylor = 1.0 / (2.0 - 2.0 * s);
                        let wr = if kr == 1 { taylor } else { mom.rise[kr] };
                        let wl = if kl == 1 { taylor } else { mom.rise[kl] };
                        let q = 2.0 * s;
                        // f(x - t) with x - t < -L enters with +, f(x + t) with x + t > L with -.
                        let far = odd_tail_integral(&b, a, x, q);
                        scale * ghost * (wl - wr) + odd_constant(s) * far
                    }
                };
                T::lit(v)
            })
            .collect()
    }

    /// Applies the operator to a profile with the requested exterior handling.
    pub fn apply_profile(&self, f: &Profile<T>, exterior: Exterior) -> Result<Vec<T>> {
        if f.grid != self.grid {
            return Err(Error::config("profile grid differs from operator grid"));
        }
        let mut out = self.apply(&f.values);
        let use_tail = match exterior {
            Exterior::ZeroExtension => false,
            Exterior::TailCompensated | Exterior::Auto => !matches!(f.tail, TailModel::None),
        };
        if use_tail {
            for (o, e) in out.iter_mut().zip(self.exterior(&f.tail)) {
                *o += e;
            }
        }
        Ok(out)
    }
}

/// `∫_a^∞ b(y) (y - x)^{-q} dy` for `x < a`, mapped by `y - x = d / u` onto `u ∈ (0, 1]`.
fn tail_integral<B: Fn(f64) -> f64>(b: &B, a: f64, x: f64, q: f64, sign: f64) -> f64 {
    let d = a - x;
    let v = quad::tanh_sinh(
        |u| {
            let y = x + d / u;
            if !y.is_finite() {
                return 0.0;
            }
            b(y) * u.powf(q - 2.0)
        },
        0.0,
        1.0,
        1e-15,
    );
    sign * v * d.powf(1.0 - q)
}

/// `∫_a^∞ b(y) [(y + x)^{-q} - (y - x)^{-q}] dy`, combined so that constant tails converge.
fn odd_tail_integral<B: Fn(f64) -> f64>(b: &B, a: f64, x: f64, q: f64) -> f64 {
    let d = a - x.abs();
    quad::tanh_sinh(
        |u| {
            let t = d / u; // distance from the nearer mirror point
            let y = x.abs() + t;
            if !y.is_finite() {
                return 0.0;
            }
            // far - near = t^{-q} ((1 + 2|x|/t)^{-q} - 1), written to avoid cancellation.
            let gap = t.powf(-q) * (-q * (2.0 * x.abs() / t).ln_1p()).exp_m1();
            // For x > 0 the near point is y - x; for x < 0 it is y + x.
            let diff = if x >= 0.0 { gap } else { -gap };
            b(y) * diff * d / (u * u)
        },
        0.0,
        1.0,
        1e-15,
    )
}

fn even_output<T: Real>(f: &Profile<T>, values: Vec<T>) -> Profile<T> {
    let mut out = Profile { grid: f.grid, values, symmetry: Symmetry::None, tail: TailModel::None };
    if f.symmetry == Symmetry::Even {
        out.symmetrize();
    }
    out
}

fn check_finite<T: Real>(f: &Profile<T>) -> Result<()> {
    if f.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("operator input contains non-finite values"));
    }
    Ok(())
}

/// Periodic spectral application with symbol `sym(k)` (`k` the angular wavenumber).
fn spectral_apply<T: Real, S: Fn(f64) -> Complex<f64>>(f: &Profile<T>, sym: S) -> Vec<T> {
    let n = f.grid.len();
    let period = f.grid.h().to64() * n as f64;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = f.values.iter().map(|v| Complex::new(v.to64(), 0.0)).collect();
    fwd.process(&mut buf);
    for (j, b) in buf.iter_mut().enumerate() {
        let jj = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        let k = 2.0 * std::f64::consts::PI * jj / period;
        let mut s = sym(k);
        if j == n / 2 && s.im != 0.0 {
            // The Nyquist mode of an odd symbol has no real representation.
            s = Complex::new(s.re, 0.0);
        }
        *b *= s;
    }
    inv.process(&mut buf);
    buf.iter().map(|c| T::lit(c.re / n as f64)).collect()
}

/// `(-Δ)^s f`.
pub fn frac_laplacian<T: Real>(f: &Profile<T>, spec: &OperatorSpec) -> Result<Profile<T>> {
    check_order(spec.order)?;
    check_finite(f)?;
    let s = spec.order;
    let values = match spec.method {
        Method::SpectralPeriodic => spectral_apply(f, |k| Complex::new(k.abs().powf(2.0 * s), 0.0)),
        Method::DirectQuadrature => DiscreteOperator::laplacian(f.grid, s)?.apply_profile(f, spec.exterior)?,
    };
    Ok(even_output(f, values))
}

/// Riesz potential `(-Δ)^{-s'} f`; the output carries the far-field tail `c ∫f |x|^{-(1-2s')}`.
pub fn riesz_potential<T: Real>(f: &Profile<T>, spec: &OperatorSpec) -> Result<Profile<T>> {
    check_order(spec.order)?;
    check_finite(f)?;
    let sp = spec.order;
    let values = match spec.method {
        Method::SpectralPeriodic => spectral_apply(f, |k| {
            if k == 0.0 {
                Complex::new(0.0, 0.0)
            } else {
                Complex::new(k.abs().powf(-2.0 * sp), 0.0)
            }
        }),
        Method::DirectQuadrature => DiscreteOperator::riesz(f.grid, sp)?.apply_profile(f, spec.exterior)?,
    };
    let mut out = even_output(f, values);
    if spec.method == Method::DirectQuadrature {
        let mass = crate::grid::total_mass(f)?.to64();
        out.tail = TailModel::Power { p: 1.0 - 2.0 * sp, c: riesz_constant(sp) * mass.max(0.0) };
    }
    Ok(out)
}

/// The odd operator `A = -∂_x (-∂_xx)^{-(1-s)}` by direct quadrature.
pub fn a_operator<T: Real>(f: &Profile<T>, s: f64) -> Result<Profile<T>> {
    a_operator_with(f, &OperatorSpec::direct(s))
}

pub fn a_operator_with<T: Real>(f: &Profile<T>, spec: &OperatorSpec) -> Result<Profile<T>> {
    check_order(spec.order)?;
    check_finite(f)?;
    let s = spec.order;
    let mut values = match spec.method {
        Method::SpectralPeriodic => spectral_apply(f, |k| {
            if k == 0.0 {
                Complex::new(0.0, 0.0)
            } else {
                Complex::new(0.0, -k * k.abs().powf(2.0 * s - 2.0))
            }
        }),
        Method::DirectQuadrature => DiscreteOperator::odd(f.grid, s)?.apply_profile(f, spec.exterior)?,
    };
    if f.symmetry == Symmetry::Even {
        // Even input gives odd output; impose it exactly.
        let n = f.grid.len();
        let half = T::lit(0.5);
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let v = half * (values[j] - values[i]);
            values[j] = v;
            values[i] = -v;
        }
    }
    Ok(Profile { grid: f.grid, values, symmetry: Symmetry::None, tail: TailModel::None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn bg(x: f64, sigma: f64) -> f64 {
        (1.0 - x * x).max(0.0).powf(0.5 * sigma)
    }

    #[test]
    fn constants_match_known_values() {
        assert!((laplacian_constant(0.5) - 1.0 / std::f64::consts::PI).abs() < 1e-14);
        // c(1, s) = 4^s Γ(1/2 + s) / (√π |Γ(-s)|)
        for s in [0.2, 0.35, 0.75, 0.9] {
            let alt = 4f64.powf(s) * gamma(0.5 + s) / (std::f64::consts::PI.sqrt() * gamma(-s).abs());
            assert!((laplacian_constant(s) - alt).abs() < 1e-12 * alt);
        }
    }

    #[test]
    fn fft_matches_dense() {
        let g = make_grid(3.0f64, 64).unwrap();
        for op in [
            DiscreteOperator::<f64>::laplacian(g, 0.3).unwrap(),
            DiscreteOperator::odd(g, 0.7).unwrap(),
            DiscreteOperator::riesz(g, 0.2).unwrap(),
        ] {
            let v: Vec<f64> = (0..64).map(|i| ((i * 7 % 13) as f64).sin()).collect();
            let a = op.apply(&v);
            let b = op.apply_dense(&v);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-11 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn half_laplacian_of_semicircle_is_one() {
        let g = make_grid(2.0f64, 2048).unwrap();
        let f = Profile::from_radial(g, |x| bg(x, 1.0));
        let out = frac_laplacian(&f, &OperatorSpec::direct(0.5)).unwrap();
        for i in 0..g.len() {
            if g.x(i).abs() < 0.8 {
                assert!((out.values[i] - 1.0).abs() < 5e-3, "x={} v={}", g.x(i), out.values[i]);
            }
        }
    }

    #[test]
    fn constant_with_constant_tail_is_annihilated() {
        let g = make_grid(5.0f64, 256).unwrap();
        for s in [0.2, 0.5, 0.8] {
            let f = Profile::from_radial(g, |_| 1.0).with_tail(TailModel::Constant { c: 1.0 });
            let out = frac_laplacian(&f, &OperatorSpec::direct(s)).unwrap();
            assert!(out.lp_norm(f64::INFINITY) < 1e-10, "s={s}: {}", out.lp_norm(f64::INFINITY));
            let a = a_operator(&f, s).unwrap();
            assert!(a.lp_norm(f64::INFINITY) < 1e-10);
        }
    }

    #[test]
    fn linearity() {
        let g = make_grid(4.0f64, 128).unwrap();
        let f = Profile::from_fn(g, |x| (-x * x).exp());
        let k = Profile::from_fn(g, |x| (1.0 - x.abs() / 3.0).max(0.0));
        let comb = Profile::from_fn(g, |x| 2.0 * (-x * x).exp() + 3.0 * (1.0 - x.abs() / 3.0).max(0.0));
        let spec = OperatorSpec::direct(0.4);
        let lf = frac_laplacian(&f, &spec).unwrap();
        let lg = frac_laplacian(&k, &spec).unwrap();
        let lc = frac_laplacian(&comb, &spec).unwrap();
        for i in 0..g.len() {
            let v = 2.0 * lf.values[i] + 3.0 * lg.values[i];
            assert!((lc.values[i] - v).abs() < 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn spectral_cosine_is_eigenfunction() {
        let g = make_grid::<f64>(std::f64::consts::PI, 64).unwrap();
        let period = g.h() * 64.0;
        let k = 2.0 * std::f64::consts::PI * 3.0 / period;
        let x0 = g.x(0);
        let f = Profile::from_fn(g, |x| (k * (x - x0)).cos());
        let out = frac_laplacian(&f, &OperatorSpec::spectral(0.3)).unwrap();
        for i in 0..64 {
            let expect = k.powf(0.6) * f.values[i];
            assert!((out.values[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn maximum_principle_at_interior_max() {
        let g = make_grid(3.0f64, 200).unwrap();
        let f = Profile::from_fn(g, |x| (-(x - 0.3) * (x - 0.3)).exp());
        let out = frac_laplacian(&f, &OperatorSpec::direct(0.6)).unwrap();
        let imax = (0..g.len()).max_by(|&a, &b| f.values[a].total_cmp(&f.values[b])).unwrap();
        assert!(out.values[imax] >= 0.0);
    }

    #[test]
    fn odd_operator_of_even_input_is_odd_and_signed() {
        let g = make_grid(6.0f64, 400).unwrap();
        let f = Profile::from_radial(g, |x| 1.0 / (1.0 + x * x));
        let a = a_operator(&f, 0.35).unwrap();
        for i in 0..g.len() {
            assert_eq!(a.values[i], -a.values[g.mirror(i)]);
            if g.x(i) > 0.0 {
                assert!(a.values[i] >= -1e-8);
            }
        }
    }

    #[test]
    fn riesz_rejects_growing_kernel() {
        let g = make_grid(2.0f64, 64).unwrap();
        let f = Profile::<f64>::zeros(g);
        assert!(riesz_potential(&f, &OperatorSpec::direct(0.5)).is_err());
        assert!(riesz_potential(&f, &OperatorSpec::direct(0.7)).is_err());
        let z = riesz_potential(&f, &OperatorSpec::direct(0.3)).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn order_and_nan_rejected() {
        let g = make_grid(2.0f64, 64).unwrap();
        let f = Profile::<f64>::zeros(g);
        assert!(frac_laplacian(&f, &OperatorSpec::direct(1.0)).is_err());
        assert!(frac_laplacian(&f, &OperatorSpec::direct(0.0)).is_err());
        let mut bad = f.clone();
        bad.values[3] = f64::NAN;
        assert!(frac_laplacian(&bad, &OperatorSpec::direct(0.5)).is_err());
    }

    #[test]
    fn single_precision_operator() {
        let g = make_grid(2.0f32, 512).unwrap();
        let f = Profile::from_radial(g, |x| (1.0 - x * x).max(0.0).sqrt());
        let out = frac_laplacian(&f, &OperatorSpec::direct(0.5)).unwrap();
        let mid = g.first_positive();
        assert!((out.values[mid] - 1.0).abs() < 2e-2);
    }
}

#[cfg(test)]
mod moment_tests {
    use super::*;

    #[test]
    fn moments_match_adaptive_quadrature() {
        for q in [0.4, 1.0, 1.3, 2.0, 1.9] {
            let m = HatMoments::new(q, 40);
            for k in [2usize, 3, 10, 15, 16, 39] {
                let kf = k as f64;
                let r = quad::adaptive(|z| (z - kf + 1.0) * z.powf(-q), kf - 1.0, kf, 1e-15);
                let f = quad::adaptive(|z| (kf + 1.0 - z) * z.powf(-q), kf, kf + 1.0, 1e-15);
                assert!((m.rise[k] - r).abs() < 1e-13 * (1.0 + r.abs()), "q={q} k={k}");
                assert!((m.fall[k] - f).abs() < 1e-13 * (1.0 + f.abs()), "q={q} k={k}");
            }
        }
    }
}
