//! Quadrature toolbox: Gauss-Legendre panels and tanh-sinh (double
//! exponential) rules for endpoint singularities.

use std::collections::HashMap;
use std::sync::OnceLock;

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence and cached per order.
pub fn gauss_legendre(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<std::sync::Mutex<HashMap<usize, &'static (Vec<f64>, Vec<f64>)>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| std::sync::Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    if let Some(v) = guard.get(&n) {
        return v;
    }
    let computed: &'static (Vec<f64>, Vec<f64>) = Box::leak(Box::new(gl_compute(n)));
    guard.insert(n, computed);
    computed
}

fn gl_compute(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th root (descending).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, d) = legendre(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Fixed-order Gauss-Legendre integral of `f` over [a, b].
pub fn gl_integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(n);
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for (&x, &w) in nodes.iter().zip(weights) {
        acc += w * f(c + h * x);
    }
    acc * h
}

/// Tanh-sinh quadrature over a finite interval [a, b].
///
/// Handles integrable endpoint singularities (algebraic or logarithmic).
/// Levels are refined until the level increment is below `eps` relative to
/// the accumulated value, or `max_level` is reached. Returns (value,
/// error_estimate).
pub fn tanh_sinh<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    eps: f64,
    max_level: usize,
) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let d = 0.5 * (b - a);
    if d == 0.0 {
        return (0.0, 0.0);
    }
    // t range chosen so the abscissa offset underflows double precision.
    let t_max = 6.1;
    let mut h = 1.0;
    let eval = |f: &mut F, t: f64| -> f64 {
        let (pi_half, sh) = (std::f64::consts::FRAC_PI_2, t.sinh());
        let ch = (pi_half * sh).cosh();
        let w = pi_half * t.cosh() / (ch * ch);
        // offset from the nearer endpoint, computed stably
        let u = pi_half * sh;
        let off = d / (u.exp() * ch); // = d * (1 - tanh(u)) stable form: d*e^{-u}/cosh(u)... see below
        let x_minus = a + off;
        let x_plus = b - off;
        let mut s = 0.0;
        if x_minus > a {
            let v = f(x_minus);
            if v.is_finite() {
                s += v * w;
            }
        }
        if x_plus < b && t > 0.0 {
            let v = f(x_plus);
            if v.is_finite() {
                s += v * w;
            }
        }
        s
    };
    // level 0: trapezoid at integer t
    let mut sum = {
        let mut s = f(c) * std::f64::consts::FRAC_PI_2;
        let mut t = h;
        while t <= t_max {
            s += eval(&mut f, t);
            t += h;
        }
        s
    };
    let mut value = sum * h * d;
    let mut err = f64::INFINITY;
    for _level in 1..=max_level {
        h *= 0.5;
        let mut s_new = 0.0;
        let mut t = h;
        while t <= t_max {
            s_new += eval(&mut f, t);
            t += 2.0 * h;
        }
        sum += s_new;
        let new_value = sum * h * d;
        err = (new_value - value).abs();
        value = new_value;
        if err <= eps * value.abs().max(1e-300) {
            break;
        }
    }
    (value, err)
}

/// Composite Simpson rule over samples on a uniform mesh with spacing `h`.
///
/// Accepts any number of samples >= 2: odd interval counts finish with a
/// Simpson 3/8 cell, a single interval falls back to the trapezoid.
pub fn simpson_uniform(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    assert!(n >= 2);
    let intervals = n - 1;
    if intervals == 1 {
        return 0.5 * h * (values[0] + values[1]);
    }
    if intervals == 2 {
        return h / 3.0 * (values[0] + 4.0 * values[1] + values[2]);
    }
    if intervals % 2 == 0 {
        let mut acc = values[0] + values[intervals];
        let mut i = 1;
        while i < intervals {
            acc += 4.0 * values[i];
            if i + 1 < intervals {
                acc += 2.0 * values[i + 1];
            }
            i += 2;
        }
        h / 3.0 * acc
    } else {
        // composite Simpson on the first n-4 intervals, 3/8 on the last three
        let head = intervals - 3;
        let mut acc = 0.0;
        if head > 0 {
            acc += simpson_uniform(&values[..=head], h);
        }
        acc + 3.0 * h / 8.0
            * (values[head]
                + 3.0 * values[head + 1]
                + 3.0 * values[head + 2]
                + values[head + 3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_polynomial_exactness() {
        // GL-16 integrates x^20 on [0,1] to machine precision
        let v = gl_integrate(|x| x.powi(20), 0.0, 1.0, 16);
        assert!((v - 1.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn gl_smooth() {
        let v = gl_integrate(|x| x.sin(), 0.0, std::f64::consts::PI, 32);
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn tanh_sinh_endpoint_singularities() {
        // int_0^1 1/sqrt(x) dx = 2
        let (v, _) = tanh_sinh(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-13, 10);
        assert!((v - 2.0).abs() < 1e-11, "got {v}");
        // int_0^1 x^{-0.8} dx = 5
        let (v, _) = tanh_sinh(|x| x.powf(-0.8), 0.0, 1.0, 1e-13, 10);
        assert!((v - 5.0).abs() < 1e-9, "got {v}");
        // int_0^1 ln(x) dx = -1
        let (v, _) = tanh_sinh(|x| x.ln(), 0.0, 1.0, 1e-13, 10);
        assert!((v + 1.0).abs() < 1e-11, "got {v}");
    }

    #[test]
    fn tanh_sinh_smooth_interval() {
        let (v, _) = tanh_sinh(|x| (-x).exp(), 0.0, 40.0, 1e-13, 11);
        assert!((v - 1.0).abs() < 1e-10, "got {v}");
    }

    #[test]
    fn simpson_cubic_exact() {
        let h = 0.1;
        let poly = |x: f64| 2.0 - x + 3.0 * x * x - 0.5 * x * x * x;
        let exact = |x: f64| 2.0 * x - x * x / 2.0 + x.powi(3) - x.powi(4) / 8.0;
        for n in [3usize, 4, 5, 6, 9] {
            let vals: Vec<f64> = (0..=n).map(|i| poly(i as f64 * h)).collect();
            let v = simpson_uniform(&vals, h);
            let e = exact(n as f64 * h);
            assert!((v - e).abs() < 1e-13, "n={n} v={v} e={e}");
        }
    }
}
