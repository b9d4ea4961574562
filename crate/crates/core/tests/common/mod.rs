//! Test-only numerics shared by the integration and acceptance targets.

#![allow(dead_code)]

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point
/// Gauss rule.
fn kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let pair = f(c - x) + f(c + x);
        k += WGK[i] * pair;
        if i % 2 == 1 {
            g += WG[i / 2] * pair;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod integral of `f` over `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn recurse(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: (f64, f64), tol: f64, depth: u32) -> f64 {
        let (value, err) = whole;
        if err <= tol || depth == 0 {
            return value;
        }
        let m = 0.5 * (a + b);
        let left = kronrod(f, a, m);
        let right = kronrod(f, m, b);
        recurse(f, a, m, left, 0.5 * tol, depth - 1) + recurse(f, m, b, right, 0.5 * tol, depth - 1)
    }
    let whole = kronrod(&f, a, b);
    let tol = rel_tol * whole.0.abs().max(f64::MIN_POSITIVE);
    recurse(&f, a, b, whole, tol, 40)
}

/// `(1/B) int_0^B g(x) dx` through `x = s^2`, which removes the `sqrt(x)`
/// kink at the origin.
pub fn band_average(g: impl Fn(f64) -> f64, band: f64, rel_tol: f64) -> f64 {
    let root = band.sqrt();
    integrate(|s| 2.0 * s * g(s * s), 0.0, root, rel_tol) / band
}

#[test]
fn quadrature_matches_closed_forms() {
    let v = integrate(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
    assert!((v - 2.0).abs() < 1e-12);
    // int_0^B e^(-a sqrt x) dx = (2 / a^2) (1 - (1 + a sqrt B) e^(-a sqrt B))
    let (a, band): (f64, f64) = (0.003, 2.5e7);
    let exact = 2.0 / (a * a) * (1.0 - (1.0 + a * band.sqrt()) * (-a * band.sqrt()).exp()) / band;
    let v = band_average(|x| (-a * x.sqrt()).exp(), band, 1e-12);
    assert!((v / exact - 1.0).abs() < 1e-10);
}
