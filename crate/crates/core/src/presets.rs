//! Named initial data: smoothed indicators, a delta-like bump and two humps.

use crate::error::{Error, Result};
use crate::grid::{Grid, Profile};
use crate::real::Real;

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 5] = ["double-step", "wide-step", "sub-unit", "delta", "two-humps"];

/// Cubic smooth step rising from 0 at `z = -1` to 1 at `z = 1`. Odd about
/// `z = 0` up to the constant, so mollifying an indicator keeps its mass.
fn smoothstep(z: f64) -> f64 {
    if z <= -1.0 {
        0.0
    } else if z >= 1.0 {
        1.0
    } else {
        0.5 + 0.75 * z - 0.25 * z * z * z
    }
}

/// `height · χ_{[-radius, radius]}` with edges mollified over `width`.
pub fn smoothed_step<T: Real>(grid: Grid<T>, height: f64, radius: f64, width: f64) -> Profile<T> {
    let half = 0.5 * width;
    Profile::from_radial(grid, |r| {
        let r = r.to64();
        let v = if half > 0.0 {
            smoothstep((radius - r) / half)
        } else if r <= radius {
            1.0
        } else {
            0.0
        };
        T::lit(height * v)
    })
}

/// Compact bump `(1 - (x/w)²)²₊` rescaled to unit discrete mass; `w` is the support half-width.
pub fn delta_bump<T: Real>(grid: Grid<T>, mass: f64, half_width: f64) -> Result<Profile<T>> {
    let h = grid.h().to64();
    if half_width < 2.0 * h {
        return Err(Error::config("delta bump must span at least four cells"));
    }
    let raw: Vec<f64> = (0..grid.len())
        .map(|i| {
            let z = grid.x(i).to64().abs() / half_width;
            let b = (1.0 - z * z).max(0.0);
            b * b
        })
        .collect();
    let w = grid.weights();
    let total: f64 = raw.iter().zip(&w).map(|(v, wi)| v * wi.to64()).sum();
    let values = raw.iter().map(|v| T::lit(mass * v / total)).collect();
    let mut p = Profile::from_radial(grid, |_| T::zero());
    p.values = values;
    p.symmetrize();
    Ok(p)
}

/// Builds a named preset on `grid`. Steps are mollified over `5h`.
pub fn preset<T: Real>(name: &str, grid: Grid<T>) -> Result<Profile<T>> {
    let h = grid.h().to64();
    let l = grid.half_width().to64();
    let need = |r: f64| -> Result<()> {
        if r >= l {
            return Err(Error::config(format!("preset {name} needs a half-width larger than {r}")));
        }
        Ok(())
    };
    match name {
        "double-step" => {
            need(1.0 + 5.0 * h)?;
            Ok(smoothed_step(grid, 2.0, 1.0, 5.0 * h))
        }
        "wide-step" => {
            need(2.0 + 5.0 * h)?;
            Ok(smoothed_step(grid, 1.0, 2.0, 5.0 * h))
        }
        "sub-unit" => {
            need(1.0 + 5.0 * h)?;
            Ok(smoothed_step(grid, 0.8, 1.0, 5.0 * h))
        }
        "delta" => delta_bump(grid, 1.0, 5.0 * h),
        "two-humps" => {
            need(3.0)?;
            let hump = |c: f64, x: f64| {
                let z = (x - c) / 0.75;
                let b = (1.0 - z * z).max(0.0);
                1.5 * b * b
            };
            Ok(Profile::from_radial(grid, |r| {
                let x = r.to64();
                T::lit(hump(1.5, x) + hump(-1.5, x))
            }))
        }
        _ => Err(Error::config(format!(
            "unknown preset {name:?}; expected one of {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, total_mass};

    #[test]
    fn sub_unit_peak() {
        let g = make_grid(10.0f64, 2048).unwrap();
        let p = preset("sub-unit", g).unwrap();
        assert!((p.max() - 0.8).abs() < 1e-12);
        assert!(total_mass(&p).unwrap().is_finite());
    }

    #[test]
    fn delta_has_unit_mass() {
        let g = make_grid(10.0f64, 2048).unwrap();
        let p = preset("delta", g).unwrap();
        assert!((total_mass(&p).unwrap() - 1.0).abs() < 1e-10);
        let h = g.h();
        let support = p.values.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, _)| g.x(i).abs()).fold(0.0, f64::max);
        assert!(support <= 5.0 * h + 1e-12);
    }

    #[test]
    fn steps_have_equal_mass() {
        let g = make_grid(10.0f64, 4096).unwrap();
        let a = total_mass(&preset("double-step", g).unwrap()).unwrap();
        let b = total_mass(&preset("wide-step", g).unwrap()).unwrap();
        assert!((a - 4.0).abs() < 0.04);
        assert!((b - 4.0).abs() < 0.04);
    }

    #[test]
    fn unknown_name_rejected() {
        let g = make_grid(10.0f64, 64).unwrap();
        assert!(matches!(preset("nope", g), Err(Error::Config(_))));
    }

    #[test]
    fn two_humps_are_separated() {
        let g = make_grid(10.0f64, 1024).unwrap();
        let p = preset("two-humps", g).unwrap();
        assert_eq!(p.interpolate(0.0), 0.0);
        assert!(p.interpolate(1.5) > 1.4);
    }
}
