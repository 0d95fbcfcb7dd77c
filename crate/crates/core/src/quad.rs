//! One-dimensional quadrature rules used for setup computations (always `f64`).

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

const K15_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the K15 nodes with odd index (1, 3, 5) and the centre.
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Eight-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre8<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
        acc += w * (f(c - d * x) + f(c + d * x));
    }
    acc * d
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let d = 0.5 * (b - a);
    let fc = f(c);
    let mut k = K15_WEIGHTS[7] * fc;
    let mut g = G7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let pair = f(c - d * K15_NODES[i]) + f(c + d * K15_NODES[i]);
        k += K15_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            g += G7_WEIGHTS[i / 2] * pair;
        }
    }
    (k * d, ((k - g) * d).abs())
}

fn gk15_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let (val, err) = gk15(f, a, b);
    if err <= tol || depth == 0 || (b - a).abs() < 1e-14 * (1.0 + a.abs()) {
        return val;
    }
    let m = 0.5 * (a + b);
    gk15_rec(f, a, m, 0.5 * tol, depth - 1) + gk15_rec(f, m, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss–Kronrod (7/15) quadrature on `[a, b]` with absolute tolerance `tol`.
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    gk15_rec(&f, a, b, tol, 48)
}

/// Tanh–sinh (double exponential) quadrature on `[a, b]`.
///
/// Robust for integrable algebraic endpoint singularities. The abscissae are
/// formed from the distance to the nearer endpoint so that singular
/// integrands are evaluated without cancellation.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let half = 0.5 * (b - a);
    let pi2 = std::f64::consts::FRAC_PI_2;
    let eval = |t: f64| -> f64 {
        let u = pi2 * t.sinh();
        let ch = u.cosh();
        let w = pi2 * t.cosh() / (ch * ch);
        // Distance from the nearer endpoint, computed without cancellation.
        let dist = 2.0 * half / ((2.0 * u.abs()).exp() + 1.0);
        if dist <= 0.0 || w == 0.0 || !w.is_finite() {
            return 0.0;
        }
        if t == 0.0 {
            return w * f(a + half);
        }
        let x = if t < 0.0 { a + dist } else { b - dist };
        if x == a || x == b {
            return 0.0;
        }
        // Samples this close to an endpoint carry negligible weight; drop any
        // that overflow rather than poisoning the sum.
        let v = w * f(x);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let tmax = 6.5;
    let mut h = 0.5;
    let mut sum = eval(0.0);
    let mut k = 1;
    while (k as f64) * h <= tmax {
        let t = k as f64 * h;
        sum += eval(t) + eval(-t);
        k += 1;
    }
    let mut est = sum * h * half;
    for _level in 0..12 {
        h *= 0.5;
        let mut add = 0.0;
        let mut k = 1;
        while (k as f64) * h <= tmax {
            let t = k as f64 * h;
            add += eval(t) + eval(-t);
            k += 2;
        }
        sum += add;
        let next = sum * h * half;
        let diff = (next - est).abs();
        est = next;
        if diff <= tol * est.abs().max(1.0) {
            break;
        }
    }
    est
}

/// Integral of `f` over `[a, ∞)` for integrands decaying at least like `y^{-1-ε}`.
///
/// Uses the map `y = a + d (1 - u) / u` with `d = max(a, 1)` followed by tanh–sinh on
/// `u ∈ (0, 1]`.
pub fn semi_infinite<F: Fn(f64) -> f64>(f: F, a: f64, tol: f64) -> f64 {
    let d = a.abs().max(1.0);
    tanh_sinh(
        |u| {
            if u <= 0.0 {
                return 0.0;
            }
            let y = a + d * (1.0 - u) / u;
            if !y.is_finite() {
                return 0.0;
            }
            f(y) * (d / u) / u
        },
        0.0,
        1.0,
        tol,
    )
}

/// Composite trapezoid weights for `n` equispaced nodes with spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if n > 0 {
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_exact_for_degree_15() {
        let v = gauss_legendre8(|x| x.powi(15) + 3.0 * x.powi(14), -1.0, 2.0);
        let exact = (2f64.powi(16) - 1.0) / 16.0 + 3.0 * (2f64.powi(15) + 1.0) / 15.0;
        assert!((v - exact).abs() < 1e-9 * exact.abs());
    }

    #[test]
    fn adaptive_handles_sqrt_endpoint() {
        let v = adaptive(|x| x.sqrt(), 0.0, 1.0, 1e-12);
        assert!((v - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn tanh_sinh_singular_endpoint() {
        let v = tanh_sinh(|x| x.powf(-0.7), 0.0, 1.0, 1e-13);
        assert!((v - 1.0 / 0.3).abs() < 1e-9, "{v}");
        // Away from the origin the abscissa itself rounds near the endpoints,
        // which limits accuracy for singular integrands.
        let w = tanh_sinh(|x| (1.0 - x * x).powf(-0.5), -1.0, 1.0, 1e-13);
        assert!((w - std::f64::consts::PI).abs() < 1e-7, "{w}");
    }

    #[test]
    fn semi_infinite_power_tail() {
        let v = semi_infinite(|y| y.powf(-2.5), 3.0, 1e-13);
        let exact = 3f64.powf(-1.5) / 1.5;
        assert!((v - exact).abs() < 1e-11, "{v} vs {exact}");
    }

    #[test]
    fn trapezoid_weights_sum_to_length() {
        let w = trapezoid_weights(11, 0.1);
        let s: f64 = w.iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
    }
}
