//! Comparison of mass concentrations and the large-`m` counterexample: data
//! ordered one way need not stay ordered once the flow is stationary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpme_solver::Trajectory;
use crate::grid::{concentration_curve, fit_tail_exponent, make_grid, ConcentrationCurve, Grid, Profile};
use crate::mesa::{stationary_state, GeneralLimitRow, LimitOptions};
use crate::presets::preset;

/// Curve differences at or below this count as equal.
pub const ORDER_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// `f ≺ g`: every centred ball holds at most as much of `f` as of `g`.
    LessConcentrated,
    /// `g ≺ f`.
    MoreConcentrated,
    Equal,
    Incomparable,
}

/// A radius where one curve exceeds the other, and by how much.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub radius: f64,
    pub margin: f64,
}

/// Verdict for the pair `(f, g)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderVerdict {
    pub relation: Relation,
    /// Largest excess of `f`'s curve over `g`'s.
    pub f_over_g: Witness,
    /// Largest excess of `g`'s curve over `f`'s.
    pub g_over_f: Witness,
}

impl OrderVerdict {
    /// Witnesses are meaningful only for incomparable pairs.
    pub fn witnesses(&self) -> Option<(Witness, Witness)> {
        (self.relation == Relation::Incomparable).then_some((self.f_over_g, self.g_over_f))
    }
}

/// Radii `0`, every nonnegative node, and three points beyond `L` where the tails count.
pub fn radius_ladder(grid: Grid<f64>) -> Vec<f64> {
    let l = grid.half_width();
    let mut r = vec![0.0];
    r.extend((grid.first_positive()..grid.len()).map(|i| grid.x(i)));
    r.extend([2.0 * l, 4.0 * l, 8.0 * l]);
    r
}

pub fn concentration_curves(f: &Profile<f64>, g: &Profile<f64>) -> Result<(ConcentrationCurve<f64>, ConcentrationCurve<f64>)> {
    if f.grid != g.grid {
        return Err(Error::config("concentration comparison needs both profiles on the same grid"));
    }
    let radii = radius_ladder(f.grid);
    Ok((concentration_curve(f, &radii)?, concentration_curve(g, &radii)?))
}

fn verdict_from(cf: &ConcentrationCurve<f64>, cg: &ConcentrationCurve<f64>, tol: f64) -> OrderVerdict {
    let mut up = Witness { radius: 0.0, margin: 0.0 };
    let mut down = Witness { radius: 0.0, margin: 0.0 };
    for ((r, a), b) in cf.radii.iter().zip(&cf.masses).zip(&cg.masses) {
        let d = a - b;
        if d > up.margin {
            up = Witness { radius: *r, margin: d };
        }
        if -d > down.margin {
            down = Witness { radius: *r, margin: -d };
        }
    }
    let relation = match (up.margin > tol, down.margin > tol) {
        (false, false) => Relation::Equal,
        (false, true) => Relation::LessConcentrated,
        (true, false) => Relation::MoreConcentrated,
        (true, true) => Relation::Incomparable,
    };
    OrderVerdict { relation, f_over_g: up, g_over_f: down }
}

/// Compares `f` and `g` on the full radius ladder with tolerance [`ORDER_TOL`].
pub fn concentration_compare(f: &Profile<f64>, g: &Profile<f64>) -> Result<OrderVerdict> {
    let (cf, cg) = concentration_curves(f, g)?;
    Ok(verdict_from(&cf, &cg, ORDER_TOL))
}

/// Richardson estimate of the quadrature error in a curve difference: trapezoid on
/// every node against trapezoid on every other node.
pub fn curve_quadrature_error(f: &Profile<f64>, g: &Profile<f64>, radii: &[f64]) -> f64 {
    let grid = f.grid;
    let n = grid.len();
    let h = grid.h();
    let i0 = grid.first_positive();
    let d: Vec<f64> = (i0..n).map(|i| f.values[i] - g.values[i]).collect();
    let x = |k: usize| grid.x(i0 + k);
    // Cumulative trapezoids from the first positive node, both spacings.
    let mut fine = vec![0.0; d.len()];
    for k in 1..d.len() {
        fine[k] = fine[k - 1] + 0.5 * h * (d[k - 1] + d[k]);
    }
    let mut worst = 0.0f64;
    let mut coarse = 0.0;
    let mut k = 2;
    while k < d.len() {
        coarse += h * (d[k - 2] + d[k]);
        if radii.iter().any(|r| (*r - x(k)).abs() <= h) || k % 16 == 0 {
            worst = worst.max(2.0 * (fine[k] - coarse).abs() / 3.0);
        }
        k += 2;
    }
    worst
}

/// Outcome of the two stationary evolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub m: f64,
    pub s: f64,
    pub half_width: f64,
    pub n: usize,
    /// `u02` against `u01`; expected less concentrated.
    pub initial: OrderVerdict,
    /// `u∞,2` against `u∞,1`; the claim is that this is not less concentrated.
    pub stationary: OrderVerdict,
    pub row_1: GeneralLimitRow,
    pub row_2: GeneralLimitRow,
    /// `‖u∞,2 - u02‖_1 / ‖u02‖_1`.
    pub simple_limit_distance: f64,
    pub tail_exponent_1: Option<f64>,
    /// Mass of `u∞,2` beyond `|x| = 2.5`, against the same for `u∞,1`.
    pub far_mass_2: f64,
    pub far_mass_1: f64,
    pub quadrature_error: f64,
    /// Stationary verdict is not `≺`, with a witness beyond radius 2 whose margin
    /// exceeds both `10⁻³` and ten times the quadrature error.
    pub flip_confirmed: bool,
}

pub struct CounterexampleRun {
    pub report: CounterexampleReport,
    pub u01: Profile<f64>,
    pub u02: Profile<f64>,
    pub traj_1: Trajectory,
    pub traj_2: Trajectory,
}

/// Evolves the double step `u01` and the wide step `u02` to near-stationarity and
/// compares their concentration before and after.
pub fn counterexample_run(m: f64, s: f64, grid: Grid<f64>, options: &LimitOptions) -> Result<CounterexampleRun> {
    if !(m >= 10.0) {
        return Err(Error::config(format!("the counterexample needs m ≥ 10, got {m}")));
    }
    pair_run(m, s, grid, options)
}

/// The same experiment for any `m > 1`, for recording small-`m` behaviour.
pub fn control_run(m: f64, s: f64, grid: Grid<f64>, options: &LimitOptions) -> Result<CounterexampleRun> {
    if !(m > 1.0) {
        return Err(Error::config(format!("m must exceed 1, got {m}")));
    }
    pair_run(m, s, grid, options)
}

fn pair_run(m: f64, s: f64, grid: Grid<f64>, options: &LimitOptions) -> Result<CounterexampleRun> {
    let u01 = preset("double-step", grid)?;
    let u02 = preset("wide-step", grid)?;
    let initial = concentration_compare(&u02, &u01)?;
    let mut runs: Vec<Result<(GeneralLimitRow, Trajectory)>> =
        [&u01, &u02].par_iter().map(|u0| stationary_state(u0, m, s, options)).collect();
    let (row_2, traj_2) = runs.pop().unwrap()?;
    let (row_1, traj_1) = runs.pop().unwrap()?;
    let (v1, v2) = (&traj_1.last().u, &traj_2.last().u);
    let (c2, c1) = concentration_curves(v2, v1)?;
    let stationary = verdict_from(&c2, &c1, ORDER_TOL);
    let radii = radius_ladder(grid);
    let quadrature_error = curve_quadrature_error(v2, v1, &radii);
    let l = grid.half_width();
    let tail_exponent_1 = fit_tail_exponent(v1, 0.25 * l, 0.5 * l).ok().map(|(p, _)| p);
    let far = |u: &Profile<f64>| -> Result<f64> {
        let c = concentration_curve(u, &[2.5, 8.0 * l])?;
        Ok(c.masses[1] - c.masses[0])
    };
    let witness = stationary.f_over_g;
    let flip_confirmed = stationary.relation != Relation::LessConcentrated
        && witness.radius > 2.0
        && witness.margin >= 1e-3
        && witness.margin > 10.0 * quadrature_error;
    let report = CounterexampleReport {
        m,
        s,
        half_width: l,
        n: grid.len(),
        initial,
        stationary,
        simple_limit_distance: row_2.distance_to_u0,
        row_1,
        row_2,
        tail_exponent_1,
        far_mass_2: far(v2)?,
        far_mass_1: far(v1)?,
        quadrature_error,
        flip_confirmed,
    };
    Ok(CounterexampleRun { report, u01, u02, traj_1, traj_2 })
}

/// The counterexample on `grid` and on the grid with twice the nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub coarse: CounterexampleReport,
    pub fine: CounterexampleReport,
    pub stable: bool,
}

pub fn counterexample_refined(m: f64, s: f64, grid: Grid<f64>, options: &LimitOptions) -> Result<RefinementReport> {
    let coarse = counterexample_run(m, s, grid, options)?.report;
    let fine_grid = make_grid(grid.half_width(), 2 * grid.len())?;
    let fine = counterexample_run(m, s, fine_grid, options)?.report;
    let stable = coarse.flip_confirmed && fine.flip_confirmed;
    Ok(RefinementReport { coarse, fine, stable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::smoothed_step;

    fn grid() -> Grid<f64> {
        make_grid(10.0, 2048).unwrap()
    }

    #[test]
    fn reflexive() {
        let f = preset("double-step", grid()).unwrap();
        let v = concentration_compare(&f, &f).unwrap();
        assert_eq!(v.relation, Relation::Equal);
        assert!(v.witnesses().is_none());
    }

    #[test]
    fn wide_step_is_less_concentrated() {
        let g = make_grid(50.0, 4096).unwrap();
        let u01 = preset("double-step", g).unwrap();
        let u02 = preset("wide-step", g).unwrap();
        let v = concentration_compare(&u02, &u01).unwrap();
        assert_eq!(v.relation, Relation::LessConcentrated, "{v:?}");
        assert_eq!(concentration_compare(&u01, &u02).unwrap().relation, Relation::MoreConcentrated);
    }

    #[test]
    fn crossing_curves_are_incomparable() {
        // f = χ_[-1,1]; g has a small central spike and most mass on 1.5 < |x| < 2,
        // so g leads near 0 and f leads around R = 1.
        let g = grid();
        let f = smoothed_step(g, 1.0, 1.0, 0.0);
        let spike = smoothed_step(g, 4.0, 0.1, 0.0);
        let ring = Profile::from_radial(g, |r| if (1.5..=1.9).contains(&r) { 1.5 } else { 0.0 });
        let gg = spike.with_values(spike.values.iter().zip(&ring.values).map(|(a, b)| a + b).collect());
        let v = concentration_compare(&f, &gg).unwrap();
        assert_eq!(v.relation, Relation::Incomparable);
        let (up, down) = v.witnesses().unwrap();
        assert!(up.radius > 0.1 && up.radius < 2.0, "{up:?}");
        assert!(down.radius < 0.15, "{down:?}");
    }

    #[test]
    fn different_grids_rejected() {
        let a = Profile::zeros(make_grid(10.0, 64).unwrap());
        let b = Profile::zeros(make_grid(10.0, 128).unwrap());
        assert!(matches!(concentration_compare(&a, &b), Err(Error::Config(_))));
    }

    #[test]
    fn dilation_keeps_the_verdict() {
        let g = grid();
        let pair = |k: f64| {
            let gauss = |w: f64| {
                let w = w * k;
                Profile::from_radial(g, move |r: f64| (-(r / w).powi(2)).exp() / (w * std::f64::consts::PI.sqrt()))
            };
            concentration_compare(&gauss(2.0), &gauss(1.0)).unwrap().relation
        };
        assert_eq!(pair(1.0), Relation::LessConcentrated);
        assert_eq!(pair(1.5), Relation::LessConcentrated);
    }

    #[test]
    fn small_m_rejected() {
        assert!(matches!(counterexample_run(5.0, 0.5, grid(), &LimitOptions::default()), Err(Error::Config(_))));
    }
}
