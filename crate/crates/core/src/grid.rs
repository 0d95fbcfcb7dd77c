//! Uniform symmetric 1D mesh, sampled profiles with far-field tail models,
//! quadrature and cumulative-mass utilities.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Values below this are treated as scheme undershoot and clamped.
pub const NEGATIVE_TOLERANCE: f64 = 1e-10;

/// Uniform mesh `x_i = -L + i h`, `h = 2L / (n - 1)`.
///
/// Nodes in the right half are generated as `L - (n - 1 - i) h`, so `x(n - 1 - i) == -x(i)`
/// holds bit for bit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid<T> {
    l: T,
    n: usize,
    h: T,
}

impl<T: Real> Grid<T> {
    pub fn new(l: T, n: usize) -> Result<Self> {
        if !(l > T::zero()) || !l.is_finite() {
            return Err(Error::config(format!("grid half-width must be positive, got {l}")));
        }
        if n < 16 || !n.is_multiple_of(2) {
            return Err(Error::config(format!("grid node count must be even and >= 16, got {n}")));
        }
        let h = (l + l) / T::from_len(n - 1);
        Ok(Self { l, n, h })
    }

    #[inline]
    pub fn half_width(&self) -> T {
        self.l
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn h(&self) -> T {
        self.h
    }

    /// Node `i`.
    #[inline]
    pub fn x(&self, i: usize) -> T {
        if 2 * i < self.n {
            -self.l + T::from_len(i) * self.h
        } else {
            self.l - T::from_len(self.n - 1 - i) * self.h
        }
    }

    /// Index of the mirror node `-x_i`.
    #[inline]
    pub fn mirror(&self, i: usize) -> usize {
        self.n - 1 - i
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Trapezoid weights.
    pub fn weights(&self) -> Vec<T> {
        let mut w = vec![self.h; self.n];
        let half = T::lit(0.5) * self.h;
        w[0] = half;
        w[self.n - 1] = half;
        w
    }

    /// First node index with `x >= 0` (the grid has no node at the origin).
    #[inline]
    pub fn first_positive(&self) -> usize {
        self.n / 2
    }
}

/// Builds the grid after validating `L > 0`, `n` even and `n >= 16`.
pub fn make_grid<T: Real>(l: T, n: usize) -> Result<Grid<T>> {
    Grid::new(l, n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetry {
    Even,
    None,
}

/// Far-field model `f(x)` for `|x| > L`, applied symmetrically.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum TailModel {
    /// Zero extension.
    None,
    /// `f(x) = c |x|^{-p}`.
    Power { p: f64, c: f64 },
    /// `f(x) = c`; only meaningful for operator consistency checks (not integrable).
    Constant { c: f64 },
}

impl TailModel {
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            TailModel::None => 0.0,
            TailModel::Power { p, c } => c * r.abs().powf(-p),
            TailModel::Constant { c } => c,
        }
    }

    /// Mass carried by `|x| > l`.
    pub fn mass_beyond(&self, l: f64) -> Result<f64> {
        match *self {
            TailModel::None => Ok(0.0),
            TailModel::Power { p, c } => {
                if p <= 1.0 {
                    return Err(Error::config(format!("tail exponent {p} <= 1 is not integrable")));
                }
                Ok(2.0 * c * l.powf(1.0 - p) / (p - 1.0))
            }
            TailModel::Constant { c } => {
                if c == 0.0 {
                    Ok(0.0)
                } else {
                    Err(Error::config("constant tail is not integrable"))
                }
            }
        }
    }

    /// Mass carried by `l < |x| < r`.
    pub fn mass_between(&self, l: f64, r: f64) -> Result<f64> {
        if r <= l {
            return Ok(0.0);
        }
        match *self {
            TailModel::None => Ok(0.0),
            TailModel::Power { p, c } => {
                if (p - 1.0).abs() < 1e-14 {
                    return Ok(2.0 * c * (r / l).ln());
                }
                Ok(2.0 * c * (l.powf(1.0 - p) - r.powf(1.0 - p)) / (p - 1.0))
            }
            TailModel::Constant { c } => Ok(2.0 * c * (r - l)),
        }
    }
}

/// Values sampled on a [`Grid`] together with symmetry and far-field metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile<T> {
    pub grid: Grid<T>,
    pub values: Vec<T>,
    pub symmetry: Symmetry,
    pub tail: TailModel,
}

impl<T: Real> Profile<T> {
    /// Validating constructor.
    pub fn new(grid: Grid<T>, values: Vec<T>, symmetry: Symmetry, tail: TailModel) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::config(format!(
                "profile has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("non-finite profile value at node {i}")));
        }
        if symmetry == Symmetry::Even {
            for i in 0..grid.len() / 2 {
                if values[i] != values[grid.mirror(i)] {
                    return Err(Error::config(format!("profile declared even but differs at node {i}")));
                }
            }
        }
        if let TailModel::Power { p, c } = tail {
            // p <= 1 is allowed for potentials; total_mass rejects it.
            if p <= 0.0 || c < 0.0 || !c.is_finite() {
                return Err(Error::config(format!("invalid power tail p={p}, c={c}")));
            }
        }
        Ok(Self { grid, values, symmetry, tail })
    }

    pub fn zeros(grid: Grid<T>) -> Self {
        Self { grid, values: vec![T::zero(); grid.len()], symmetry: Symmetry::Even, tail: TailModel::None }
    }

    /// Samples `f` at every node; no symmetry assumed.
    pub fn from_fn<F: Fn(T) -> T>(grid: Grid<T>, f: F) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.x(i))).collect();
        Self { grid, values, symmetry: Symmetry::None, tail: TailModel::None }
    }

    /// Samples `f(|x|)`, giving an exactly even profile.
    pub fn from_radial<F: Fn(T) -> T>(grid: Grid<T>, f: F) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.x(i).abs())).collect();
        Self { grid, values, symmetry: Symmetry::Even, tail: TailModel::None }
    }

    pub fn with_tail(mut self, tail: TailModel) -> Self {
        self.tail = tail;
        self
    }

    /// Replaces the values, keeping grid and metadata; even symmetry is re-imposed by averaging.
    pub fn with_values(&self, values: Vec<T>) -> Self {
        let mut p = Self { grid: self.grid, values, symmetry: self.symmetry, tail: self.tail };
        if p.symmetry == Symmetry::Even {
            p.symmetrize();
        }
        p
    }

    /// Averages mirror pairs so the even-symmetry invariant holds exactly.
    pub fn symmetrize(&mut self) {
        let n = self.grid.len();
        let half = T::lit(0.5);
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let v = half * (self.values[i] + self.values[j]);
            self.values[i] = v;
            self.values[j] = v;
        }
        self.symmetry = Symmetry::Even;
    }

    /// Zeroes negative values; logs a warning when any falls below `-1e-10`.
    /// Returns the mass added by the clamp.
    pub fn clamp_negative(&mut self) -> T {
        let w = self.grid.weights();
        let mut defect = T::zero();
        let mut worst = T::zero();
        for (v, wi) in self.values.iter_mut().zip(w.iter()) {
            if *v < T::zero() {
                defect -= *v * *wi;
                worst = worst.min(*v);
                *v = T::zero();
            }
        }
        if worst < -T::lit(NEGATIVE_TOLERANCE) {
            warn!("clamped negative values (min {worst}, mass defect {defect})");
        }
        defect
    }

    pub fn max(&self) -> T {
        self.values.iter().fold(T::neg_infinity(), |a, &b| a.max(b))
    }

    pub fn min(&self) -> T {
        self.values.iter().fold(T::infinity(), |a, &b| a.min(b))
    }

    /// Value at `x` by linear interpolation; the tail model is used outside `[-L, L]`.
    pub fn interpolate(&self, x: T) -> T {
        let l = self.grid.half_width();
        if x.abs() > l {
            return T::lit(self.tail.value(x.to64()));
        }
        let s = (x + l) / self.grid.h();
        let i = s.floor().to_usize().unwrap_or(0).min(self.grid.len() - 2);
        let t = s - T::from_len(i);
        self.values[i] * (T::one() - t) + self.values[i + 1] * t
    }

    /// Discrete `L^p` norm (trapezoid; `p = ∞` gives the max norm). Tail ignored.
    pub fn lp_norm(&self, p: f64) -> T {
        if p.is_infinite() {
            return self.values.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
        }
        let w = self.grid.weights();
        let pp = T::lit(p);
        let s: T = self.values.iter().zip(w.iter()).map(|(v, wi)| v.abs().powf(pp) * *wi).sum();
        s.powf(T::one() / pp)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_profile_csv(self, path)
    }
}

/// Cumulative mass `R ↦ ∫_{-R}^{R} f`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationCurve<T> {
    pub radii: Vec<T>,
    pub masses: Vec<T>,
}

/// Trapezoid mass over `[-L, L]` plus the closed-form tail mass.
pub fn total_mass<T: Real>(f: &Profile<T>) -> Result<T> {
    let w = f.grid.weights();
    let inner: T = f.values.iter().zip(w.iter()).map(|(v, wi)| *v * *wi).sum();
    let tail = f.tail.mass_beyond(f.grid.half_width().to64())?;
    Ok(inner + T::lit(tail))
}

/// Trapezoid mass over `[-L, L]` only.
pub fn domain_mass<T: Real>(f: &Profile<T>) -> T {
    let w = f.grid.weights();
    f.values.iter().zip(w.iter()).map(|(v, wi)| *v * *wi).sum()
}

/// Integral of the piecewise-linear interpolant over `[a, b] ∩ [-L, L]`, via prefix sums.
struct Cumulative<'a, T> {
    f: &'a Profile<T>,
    prefix: Vec<T>,
}

impl<'a, T: Real> Cumulative<'a, T> {
    fn new(f: &'a Profile<T>) -> Self {
        let h = f.grid.h();
        let half = T::lit(0.5);
        let mut prefix = Vec::with_capacity(f.values.len());
        let mut acc = T::zero();
        prefix.push(acc);
        for w in f.values.windows(2) {
            acc += half * h * (w[0] + w[1]);
            prefix.push(acc);
        }
        Self { f, prefix }
    }

    /// `∫_{-L}^{x}` of the interpolant for `x ∈ [-L, L]`.
    fn upto(&self, x: T) -> T {
        let g = &self.f.grid;
        let l = g.half_width();
        if x <= -l {
            return T::zero();
        }
        if x >= l {
            return *self.prefix.last().unwrap();
        }
        let h = g.h();
        let s = (x + l) / h;
        let i = s.floor().to_usize().unwrap_or(0).min(g.len() - 2);
        let t = s - T::from_len(i);
        let v0 = self.f.values[i];
        let v1 = self.f.values[i + 1];
        // ∫_0^t (v0 (1-τ) + v1 τ) dτ · h
        let part = h * (v0 * t + (v1 - v0) * t * t * T::lit(0.5));
        self.prefix[i] + part
    }
}

/// Cumulative masses on the given increasing radii; beyond `L` the tail model contributes.
pub fn concentration_curve<T: Real>(f: &Profile<T>, radii: &[T]) -> Result<ConcentrationCurve<T>> {
    for w in radii.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::config("concentration radii must be strictly increasing"));
        }
    }
    if radii.first().is_some_and(|r| *r < T::zero()) {
        return Err(Error::config("concentration radii must be nonnegative"));
    }
    let neg = f.min();
    if neg < -T::lit(NEGATIVE_TOLERANCE) {
        warn!("concentration curve of a profile with negative values (min {neg})");
    }
    let cum = Cumulative::new(f);
    let l = f.grid.half_width();
    let mut masses = Vec::with_capacity(radii.len());
    let mut last = T::zero();
    for &r in radii {
        let mut c = cum.upto(r) - cum.upto(-r);
        if r > l {
            c += T::lit(f.tail.mass_between(l.to64(), r.to64())?);
        }
        // Guards the nondecreasing invariant against roundoff and tiny undershoot.
        c = c.max(last);
        masses.push(c);
        last = c;
    }
    Ok(ConcentrationCurve { radii: radii.to_vec(), masses })
}

/// Least-squares fit of `log f = log c - p log |x|` over nodes with `r_a <= |x| <= r_b`.
pub fn fit_tail_exponent<T: Real>(f: &Profile<T>, r_a: T, r_b: T) -> Result<(T, T)> {
    let l = f.grid.half_width();
    if !(r_a > T::zero() && r_a < r_b && r_b <= l * T::lit(1.0 + 1e-12)) {
        return Err(Error::config(format!("invalid tail window [{r_a}, {r_b}] for L = {l}")));
    }
    let mut pts = Vec::new();
    for i in 0..f.grid.len() {
        let x = f.grid.x(i);
        let r = x.abs();
        if r >= r_a && r <= r_b {
            let v = f.values[i];
            if !(v > T::zero()) {
                return Err(Error::config(format!("nonpositive value {v} at x = {x} in tail window")));
            }
            pts.push((r.to64().ln(), v.to64().ln()));
        }
    }
    if pts.len() < 2 {
        return Err(Error::config("tail window contains fewer than two nodes"));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Ok((T::lit(-slope), T::lit(intercept.exp())))
}

/// JSON sidecar stored next to each profile CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeta {
    #[serde(rename = "L")]
    pub l: f64,
    pub n: usize,
    pub symmetry: Symmetry,
    pub tail: TailModel,
}

/// Path of the metadata sidecar for a profile CSV (`foo.csv` → `foo.json`).
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

#[derive(Serialize, Deserialize)]
struct Row {
    x: f64,
    value: f64,
}

/// Writes `x,value` rows and the JSON sidecar.
pub fn write_profile_csv<T: Real>(f: &Profile<T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for i in 0..f.grid.len() {
        w.serialize(Row { x: f.grid.x(i).to64(), value: f.values[i].to64() })?;
    }
    w.flush()?;
    let meta = ProfileMeta {
        l: f.grid.half_width().to64(),
        n: f.grid.len(),
        symmetry: f.symmetry,
        tail: f.tail,
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(sidecar_path(path))?), &meta)?;
    Ok(())
}

/// Reads a profile CSV; the sidecar is used when present, otherwise the grid is
/// inferred from the `x` column and the tail model defaults to none.
pub fn read_profile_csv<T: Real>(path: &Path) -> Result<Profile<T>> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let headers = r.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "value" {
        return Err(Error::config(format!("{}: expected header `x,value`", path.display())));
    }
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for row in r.deserialize() {
        let row: Row = row?;
        xs.push(row.x);
        vs.push(row.value);
    }
    let side = sidecar_path(path);
    let (l, n, symmetry, tail) = if side.exists() {
        let meta: ProfileMeta = serde_json::from_reader(BufReader::new(File::open(&side)?))?;
        (meta.l, meta.n, meta.symmetry, meta.tail)
    } else {
        let l = xs.first().map(|x| -x).unwrap_or(0.0);
        (l, xs.len(), Symmetry::None, TailModel::None)
    };
    let grid = Grid::new(T::lit(l), n)?;
    if xs.len() != n {
        return Err(Error::config(format!("{}: {} rows for n = {n}", path.display(), xs.len())));
    }
    let tol = 1e-9 * l.max(1.0);
    for (i, &x) in xs.iter().enumerate() {
        if (x - grid.x(i).to64()).abs() > tol {
            return Err(Error::config(format!("{}: row {i} is not on a uniform symmetric grid", path.display())));
        }
    }
    let values = vs.into_iter().map(T::lit).collect();
    Profile::new(grid, values, symmetry, tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(l: f64, n: usize) -> Grid<f64> {
        make_grid(l, n).unwrap()
    }

    #[test]
    fn grid_arithmetic() {
        let g = grid(1.0, 16);
        assert!((g.h() - 2.0 / 15.0).abs() < 1e-15);
        assert_eq!(g.x(0), -1.0);
        assert_eq!(g.x(15), 1.0);
        let g = grid(50.0, 4096);
        assert!((g.h() - 100.0 / 4095.0).abs() < 1e-15);
        for i in 0..g.len() {
            assert_eq!(g.x(g.mirror(i)), -g.x(i));
        }
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(make_grid(0.0, 16).is_err());
        assert!(make_grid(1.0, 17).is_err());
        assert!(make_grid(1.0, 8).is_err());
        assert!(make_grid(-1.0, 32).is_err());
    }

    #[test]
    fn mass_of_simple_profiles() {
        let g = grid(1.0, 64);
        let one = Profile::from_radial(g, |_| 1.0);
        assert!((total_mass(&one).unwrap() - 2.0).abs() < 1e-12);
        let g = grid(2.0, 256);
        let para = Profile::from_radial(g, |x| (1.0 - x * x).max(0.0));
        assert!((total_mass(&para).unwrap() - 4.0 / 3.0).abs() < g.h() * g.h());
        assert_eq!(total_mass(&Profile::zeros(g)).unwrap(), 0.0);
    }

    #[test]
    fn quadrature_is_second_order() {
        let f = |x: f64| (std::f64::consts::PI * x).cos().powi(2) * if x.abs() < 1.0 { 1.0 } else { 0.0 };
        let err = |n: usize| {
            let g = grid(1.0, n);
            (total_mass(&Profile::from_radial(g, |x| f(x) * (1.0 - x * x))).unwrap() - exact()).abs()
        };
        fn exact() -> f64 {
            crate::quad::adaptive(
                |x| (std::f64::consts::PI * x).cos().powi(2) * (1.0 - x * x),
                -1.0,
                1.0,
                1e-14,
            )
        }
        let ratio = err(64) / err(128);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn tail_mass_and_errors() {
        let g = grid(10.0, 64);
        let f = Profile::zeros(g).with_tail(TailModel::Power { p: 2.0, c: 3.0 });
        assert!((total_mass(&f).unwrap() - 2.0 * 3.0 / 10.0).abs() < 1e-14);
        let bad = Profile::zeros(g).with_tail(TailModel::Power { p: 0.5, c: 1.0 });
        assert!(total_mass(&bad).is_err());
    }

    #[test]
    fn indicator_concentration_values() {
        let g = grid(4.0, 802);
        let h = g.h();
        let chi = |a: f64, v: f64| Profile::from_radial(g, move |x| if x <= a + 0.5 * h { v } else { 0.0 });
        let c = concentration_curve(&chi(1.0, 1.0), &[2.0]).unwrap();
        assert!((c.masses[0] - 2.0).abs() < 2.0 * h);
        let c = concentration_curve(&chi(1.0, 2.0), &[0.5]).unwrap();
        assert!((c.masses[0] - 2.0).abs() < 1e-12);
        let c = concentration_curve(&chi(2.0, 1.0), &[0.5]).unwrap();
        assert!((c.masses[0] - 1.0).abs() < 1e-12);
        assert!(concentration_curve(&chi(2.0, 1.0), &[1.0, 0.5]).is_err());
    }

    #[test]
    fn concentration_at_l_equals_domain_mass() {
        let g = grid(3.0, 300);
        let f = Profile::from_radial(g, |x| (-x * x).exp());
        let c = concentration_curve(&f, &[0.0, 1.0, 3.0]).unwrap();
        assert_eq!(c.masses[0], 0.0);
        assert!((c.masses[2] - total_mass(&f).unwrap()).abs() < 1e-13);
        assert!(c.masses.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn exact_power_law_fit() {
        let g = grid(50.0, 2000);
        let f = Profile::from_radial(g, |x| x.powf(-2.0));
        let (p, c) = fit_tail_exponent(&f, 10.0, 40.0).unwrap();
        assert!((p - 2.0).abs() < 1e-10 && (c - 1.0).abs() < 1e-9);
        let f = Profile::from_radial(g, |x| 3.0 * x.powf(-1.5));
        let (p, c) = fit_tail_exponent(&f, 10.0, 40.0).unwrap();
        assert!((p - 1.5).abs() < 1e-10 && (c - 3.0).abs() < 1e-9);
        let z = Profile::zeros(g);
        assert!(fit_tail_exponent(&z, 10.0, 40.0).is_err());
    }

    #[test]
    fn even_profiles_are_exact_and_validated() {
        let g = grid(2.0, 64);
        let f = Profile::from_radial(g, |x| x.sin());
        assert!(Profile::new(g, f.values.clone(), Symmetry::Even, TailModel::None).is_ok());
        let mut v = f.values.clone();
        v[3] += 1e-9;
        assert!(Profile::new(g, v, Symmetry::Even, TailModel::None).is_err());
        assert!(Profile::new(g, vec![f64::NAN; 64], Symmetry::None, TailModel::None).is_err());
    }

    #[test]
    fn clamp_reports_defect() {
        let g = grid(1.0, 16);
        let mut f = Profile::from_fn(g, |x| if x < 0.0 { -1e-3 } else { 1.0 });
        let d = f.clamp_negative();
        assert!(d > 0.0 && f.min() >= 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid(5.0, 32);
        let f = Profile::from_radial(g, |x| 1.0 / (1.0 + x * x)).with_tail(TailModel::Power { p: 2.0, c: 1.0 });
        let path = dir.path().join("f.csv");
        f.write_csv(&path).unwrap();
        let back: Profile<f64> = read_profile_csv(&path).unwrap();
        assert_eq!(back, f);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,value\n"));
    }
}
