//! The lambda-resolvent kernel r_lambda of the free process, its gradient,
//! the drift operator B = b.grad, the Neumann series sum_k R_lambda (B
//! R_lambda)^k g, and the operational contraction threshold lambda_0.
//!
//! Only the unit-lambda radial tables are stored; general lambda goes
//! through the scaling r_lambda(x) = lambda^{d/alpha - 1} r_1(lambda^{1/alpha} x).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kato::DriftField;
use crate::quad::{gauss_legendre, tanh_sinh};
use crate::special::gamma;
use crate::stable::{tanh_sinh_weighted, RadialProfile, StableParams};

const RHO_MIN: f64 = 1e-4;
const RHO_MAX: f64 = 400.0;
const NODES: usize = 760;

/// Radial tables for r_1 and the gradient profile mr_1(rho) = -r_1'(rho)/rho,
/// valid for every lambda through scaling.
#[derive(Debug, Clone)]
pub struct ResolventKernel {
    profile: Arc<RadialProfile>,
    u0: f64,
    du: f64,
    lr: Vec<f64>,
    dlr: Vec<f64>,
    lmr: Vec<f64>,
    dlmr: Vec<f64>,
    /// r_1(0); finite iff d < alpha (i.e. d = 1), else +inf
    r1_zero: f64,
    /// d = 1: amplitude of the cusp r_1(rho) = r_1(0) - c rho^{alpha-1};
    /// d >= 2: amplitude of the Riesz blowup r_1(rho) ~ c rho^{alpha-d}
    small_amp: f64,
    mr_small_amp: f64,
    /// tail coefficients of r_1(rho) ~ sum_k k! a_k rho^{-d-k alpha}
    tail_rk: Vec<f64>,
}

impl ResolventKernel {
    pub fn new(profile: Arc<RadialProfile>) -> Result<Self> {
        let params = *profile.params();
        let (d, alpha) = (params.d() as f64, params.alpha());
        let u0 = RHO_MIN.ln();
        let u1 = RHO_MAX.ln();
        let n = NODES;
        let du = (u1 - u0) / (n - 1) as f64;
        let mut lr = vec![0.0; n];
        let mut lmr = vec![0.0; n];
        let mut dlr = vec![0.0; n];
        for i in 0..n {
            let rho = (u0 + i as f64 * du).exp();
            let (r1, mr1) = time_quadrature(&profile, rho);
            if !(r1 > 0.0 && mr1 > 0.0) {
                return Err(Error::Accuracy {
                    context: format!("resolvent profile failed at rho = {rho}"),
                    estimate: r1,
                    error: f64::NAN,
                });
            }
            lr[i] = r1.ln();
            lmr[i] = mr1.ln();
            // d(ln r1)/d(ln rho) = rho r1'/r1 = -rho^2 mr1 / r1
            dlr[i] = -rho * rho * mr1 / r1;
        }
        // centred finite-difference slopes for ln mr (one-sided at the ends)
        let mut dlmr = vec![0.0; n];
        for i in 0..n {
            dlmr[i] = if i == 0 {
                (lmr[1] - lmr[0]) / du
            } else if i == n - 1 {
                (lmr[n - 1] - lmr[n - 2]) / du
            } else {
                (lmr[i + 1] - lmr[i - 1]) / (2.0 * du)
            };
        }
        let r1_zero = if params.d() == 1 {
            gamma(1.0 + 1.0 / alpha) * gamma(1.0 - 1.0 / alpha) / std::f64::consts::PI
        } else {
            f64::INFINITY
        };
        let (small_amp, mr_small_amp) = if params.d() == 1 {
            let rho = RHO_MIN;
            let amp = (r1_zero - lr[0].exp()) / rho.powf(alpha - 1.0);
            // mr(rho) ~ amp (alpha-1) rho^{alpha-3}
            (amp, lmr[0].exp() / rho.powf(alpha - 3.0))
        } else {
            let amp = lr[0].exp() / RHO_MIN.powf(alpha - d);
            (amp, lmr[0].exp() / RHO_MIN.powf(alpha - d - 2.0))
        };
        let tail_rk: Vec<f64> = profile
            .tail_coefficients()
            .iter()
            .enumerate()
            .map(|(k1, &a)| a * gamma(k1 as f64 + 2.0))
            .collect();
        Ok(Self {
            profile,
            u0,
            du,
            lr,
            dlr,
            lmr,
            dlmr,
            r1_zero,
            small_amp,
            mr_small_amp,
            tail_rk,
        })
    }

    pub fn params(&self) -> &StableParams {
        self.profile.params()
    }

    pub fn profile(&self) -> &Arc<RadialProfile> {
        &self.profile
    }

    /// Unit-lambda radial kernel r_1(rho).
    pub fn r1(&self, rho: f64) -> f64 {
        let (d, alpha) = (self.params().d() as f64, self.params().alpha());
        if rho < RHO_MIN {
            if self.params().d() == 1 {
                return self.r1_zero - self.small_amp * rho.powf(alpha - 1.0);
            }
            if rho == 0.0 {
                return f64::INFINITY;
            }
            return self.small_amp * rho.powf(alpha - d);
        }
        if rho > RHO_MAX {
            return self.tail_sum(rho, 0);
        }
        hermite(self.u0, self.du, &self.lr, &self.dlr, rho.ln()).exp()
    }

    /// Unit-lambda gradient profile mr_1(rho) = -r_1'(rho)/rho > 0.
    pub fn mr1(&self, rho: f64) -> f64 {
        let (d, alpha) = (self.params().d() as f64, self.params().alpha());
        if rho < RHO_MIN {
            return if self.params().d() == 1 {
                self.mr_small_amp * rho.powf(alpha - 3.0)
            } else {
                self.mr_small_amp * rho.powf(alpha - d - 2.0)
            };
        }
        if rho > RHO_MAX {
            return self.tail_sum(rho, 2);
        }
        hermite(self.u0, self.du, &self.lmr, &self.dlmr, rho.ln()).exp()
    }

    /// Tail series sum_k k! a_k (d + k alpha [if grad]) rho^{-d-k alpha - off}.
    fn tail_sum(&self, rho: f64, off: i32) -> f64 {
        let (d, alpha) = (self.params().d() as f64, self.params().alpha());
        let mut sum = 0.0;
        let mut prev = f64::INFINITY;
        for (k1, &a) in self.tail_rk.iter().enumerate() {
            let k = (k1 + 1) as f64;
            let mut term = a * rho.powf(-d - k * alpha - off as f64);
            if off == 2 {
                term *= d + k * alpha;
            }
            if term.abs() > prev {
                break;
            }
            sum += term;
            if term != 0.0 {
                prev = term.abs();
            }
        }
        sum
    }

    /// r_lambda(x); +inf at x = 0 when d > alpha.
    pub fn eval(&self, lambda: f64, x: &[f64]) -> Result<f64> {
        if lambda <= 0.0 {
            return Err(Error::Domain("resolvent requires lambda > 0".into()));
        }
        Ok(self.eval_radial(lambda, norm(x)))
    }

    pub fn eval_radial(&self, lambda: f64, r: f64) -> f64 {
        let (d, alpha) = (self.params().d() as f64, self.params().alpha());
        let s = lambda.powf(1.0 / alpha);
        lambda.powf(d / alpha - 1.0) * self.r1(s * r)
    }

    /// |grad r_lambda|(r) as a function of the radius.
    pub fn grad_mag_radial(&self, lambda: f64, r: f64) -> f64 {
        let (d, alpha) = (self.params().d() as f64, self.params().alpha());
        let s = lambda.powf(1.0 / alpha);
        lambda.powf((d + 1.0) / alpha - 1.0) * (s * r) * self.mr1(s * r)
    }

    /// grad r_lambda(x) for x != 0.
    pub fn gradient(&self, lambda: f64, x: &[f64]) -> Result<Vec<f64>> {
        if lambda <= 0.0 {
            return Err(Error::Domain("resolvent requires lambda > 0".into()));
        }
        let r = norm(x);
        if r == 0.0 {
            return Err(Error::Domain(
                "resolvent gradient is singular at the origin".into(),
            ));
        }
        let (d, alpha) = (self.params().d() as f64, self.params().alpha());
        let s = lambda.powf(1.0 / alpha);
        // grad r_lambda(x) = -lambda^{(d+2)/alpha - 1} mr_1(s|x|) x
        let scale = -lambda.powf((d + 2.0) / alpha - 1.0) * self.mr1(s * r);
        Ok(x.iter().map(|&v| scale * v).collect())
    }

    /// d = 1 signed derivative d/dx r_lambda(x).
    pub fn gradient1(&self, lambda: f64, x: f64) -> f64 {
        debug_assert_eq!(self.params().d(), 1);
        let alpha = self.params().alpha();
        let s = lambda.powf(1.0 / alpha);
        -lambda.powf(3.0 / alpha - 1.0) * self.mr1(s * x.abs()) * x
    }

    /// int_{|y| >= w} r_lambda(y) dy for d = 1, from the tail series.
    pub fn mass_outside(&self, lambda: f64, w: f64) -> f64 {
        debug_assert_eq!(self.params().d(), 1);
        let alpha = self.params().alpha();
        let s = lambda.powf(1.0 / alpha);
        let rho = s * w;
        // int_rho^inf r_1 = sum_k k! a_k rho^{-k alpha}/(k alpha)
        let mut sum = 0.0;
        let mut prev = f64::INFINITY;
        for (k1, &a) in self.tail_rk.iter().enumerate() {
            let k = (k1 + 1) as f64;
            let term = a * rho.powf(-k * alpha) / (k * alpha);
            if term.abs() > prev {
                break;
            }
            sum += term;
            if term != 0.0 {
                prev = term.abs();
            }
        }
        // two sides; lambda scaling of the mass integral
        2.0 * lambda.powf(1.0 / alpha - 1.0) * sum / s
    }
}

/// One shared time-quadrature sweep for (r_1, mr_1) at radius rho:
/// r_1 = int e^{-t} p(t, rho) dt, mr_1 = int e^{-t} t^{-(d+2)/alpha} m(t^{-1/alpha} rho) dt.
///
/// Deep in the small-t regime the scaled radius s rho explodes; there the
/// tail series in the form sum_k a_k t^k rho^{-d-k alpha} is used directly,
/// which avoids overflowing the s powers.
fn time_quadrature(profile: &RadialProfile, rho: f64) -> (f64, f64) {
    let (d, alpha) = (profile.params().d() as f64, profile.params().alpha());
    let tail_a = profile.tail_coefficients().to_vec();
    let scaled_tail = |t: f64, grad: bool| -> f64 {
        let mut sum = 0.0;
        let mut prev = f64::INFINITY;
        for (k1, &a) in tail_a.iter().enumerate() {
            let k = (k1 + 1) as f64;
            let mut term = a * t.powf(k) * rho.powf(-d - k * alpha - if grad { 2.0 } else { 0.0 });
            if grad {
                term *= d + k * alpha;
            }
            if term.abs() > prev {
                break;
            }
            sum += term;
            if term != 0.0 {
                prev = term.abs();
            }
        }
        sum
    };
    let t_switch = (rho / crate::stable::R_CROSS).powf(alpha);
    let mut r1 = 0.0;
    let mut mr = 0.0;
    let mut acc = |t: f64, w: f64| {
        let e = (-t).exp();
        if t < t_switch {
            r1 += w * e * scaled_tail(t, false);
            mr += w * e * scaled_tail(t, true);
        } else {
            let s = t.powf(-1.0 / alpha);
            r1 += w * e * s.powf(d) * profile.f(s * rho);
            mr += w * e * s.powf(d + 2.0) * profile.m(s * rho);
        }
    };
    tanh_sinh_weighted(0.0, 2.0, 9, &mut acc);
    let (nodes, weights) = gauss_legendre(16);
    let mut a = 2.0f64;
    while a < 45.0 {
        let b = (a + 2.5).min(45.0);
        let c = 0.5 * (a + b);
        let hw = 0.5 * (b - a);
        for (&x, &w) in nodes.iter().zip(weights) {
            acc(c + hw * x, w * hw);
        }
        a = b;
    }
    (r1, mr)
}

fn hermite(u0: f64, du: f64, values: &[f64], slopes: &[f64], u: f64) -> f64 {
    let n = values.len();
    let pos = (u - u0) / du;
    let i = (pos.floor() as isize).clamp(0, n as isize - 2) as usize;
    let t = pos - i as f64;
    let (y0, y1) = (values[i], values[i + 1]);
    let (m0, m1) = (slopes[i] * du, slopes[i + 1] * du);
    let t2 = t * t;
    let t3 = t2 * t;
    y0 * (2.0 * t3 - 3.0 * t2 + 1.0)
        + m0 * (t3 - 2.0 * t2 + t)
        + y1 * (-2.0 * t3 + 3.0 * t2)
        + m1 * (t3 - t2)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// B f(x) = b(x) . grad f(x).
pub fn drift_apply<G>(field: &DriftField, grad_f: G, x: &[f64]) -> Result<f64>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    if let crate::kato::FieldKind::PowerSingularity { .. } = field.kind() {
        if norm(x) == 0.0 {
            return Err(Error::Domain("drift field singular at x".into()));
        }
    }
    let b = field.eval(x);
    let g = grad_f(x);
    Ok(b.iter().zip(&g).map(|(a, c)| a * c).sum())
}

/// R_lambda g(x) = int r_lambda(x - y) g(y) dy over the declared support
/// of g (d = 1). The kernel cusp at y = x is handled by a tanh-sinh panel
/// on each side of the split.
pub fn apply_resolvent<G>(
    rk: &ResolventKernel,
    lambda: f64,
    g: G,
    support: (f64, f64),
    x: f64,
) -> Result<f64>
where
    G: Fn(f64) -> f64,
{
    if rk.params().d() != 1 {
        return Err(Error::Unsupported(
            "apply_resolvent quadrature is implemented for d = 1".into(),
        ));
    }
    if lambda <= 0.0 {
        return Err(Error::Domain("lambda must be positive".into()));
    }
    let (a, b) = support;
    if !(b > a) {
        return Err(Error::Domain("empty support".into()));
    }
    // integrate in u = x - y over [x-b, x-a], splitting at u = 0
    let (ua, ub) = (x - b, x - a);
    let kernel_scale = lambda.powf(1.0 / rk.params().alpha() - 1.0);
    let s = lambda.powf(1.0 / rk.params().alpha());
    let f = |u: f64| kernel_scale * rk.r1(s * u.abs()) * g(x - u);
    let mut total = 0.0;
    let mut segment = |lo: f64, hi: f64| {
        if hi <= lo {
            return;
        }
        // geometric panels away from the cusp end (the end nearer zero)
        let near_zero_at_lo = lo.abs() < hi.abs();
        let w = hi - lo;
        let mut edges = vec![0.0f64];
        let mut step = (w / 256.0).min(0.25 / s.max(1.0));
        let mut acc = step;
        while acc < w {
            edges.push(acc);
            step *= 2.0;
            acc += step;
        }
        edges.push(w);
        for win in edges.windows(2) {
            let (p, q) = if near_zero_at_lo {
                (lo + win[0], lo + win[1])
            } else {
                (hi - win[1], hi - win[0])
            };
            let (v, _) = tanh_sinh(&mut |u| f(u), p, q, 1e-11, 7);
            total += v;
        }
    };
    if ua < 0.0 && ub > 0.0 {
        segment(ua, 0.0);
        segment(0.0, ub);
    } else {
        segment(ua, ub);
    }
    Ok(total)
}

/// T(lambda; x) = int |grad r_lambda(x - y)| |b(y)| dy for d = 1, the
/// operational quantity behind the contraction threshold.
pub fn gradient_weighted_integral(
    rk: &ResolventKernel,
    lambda: f64,
    field: &DriftField,
    x: f64,
) -> f64 {
    let alpha = rk.params().alpha();
    let s = lambda.powf(1.0 / alpha);
    let gscale = lambda.powf(3.0 / alpha - 1.0);
    let kernel = |u: f64| gscale * s * u.abs() * rk.mr1(s * u.abs()) / s;
    // |grad r_lambda| integrates to 2 r_lambda(0); the integrand decays like
    // u^{-2-alpha} past the lambda scale, so truncate at W with an analytic
    // bound using sup |b| (or the local magnitude for decaying fields).
    let w_cut = 300.0 / s;
    let f = |u: f64| kernel(u) * field.magnitude(&[x - u]);
    let mut total = 0.0;
    for sgn in [-1.0, 1.0] {
        let mut lo = 0.0f64;
        let mut step = 0.05 / s;
        while lo < w_cut {
            let hi = (lo + step).min(w_cut);
            let (v, _) = tanh_sinh(&mut |t| f(sgn * t), lo, hi, 1e-10, 7);
            total += v;
            lo = hi;
            step *= 2.0;
        }
    }
    // exact tail identity: int_{|u| > W} |grad r_lambda| du = 2 r_lambda(W),
    // weighted by the field bound in the tail region
    let far_mag = field
        .sup_bound()
        .unwrap_or_else(|| field.magnitude(&[x - w_cut]).max(field.magnitude(&[x + w_cut])));
    total + 2.0 * far_mag * rk.eval_radial(lambda, w_cut)
}

/// Smallest lambda on the grid (refined by bisection) with
/// sup_probe T(lambda; x) <= 1/2.
pub fn lambda0_estimate(
    field: &DriftField,
    rk: &ResolventKernel,
    lambda_grid: &[f64],
    probes: &[f64],
) -> Result<f64> {
    if rk.params().d() != 1 {
        return Err(Error::Unsupported(
            "lambda0_estimate is implemented for d = 1".into(),
        ));
    }
    if lambda_grid.len() < 2 || lambda_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("lambda grid must be increasing".into()));
    }
    if field.is_zero() {
        return Ok(lambda_grid[0]);
    }
    let sup_t = |lambda: f64| -> f64 {
        probes
            .iter()
            .map(|&x| gradient_weighted_integral(rk, lambda, field, x))
            .fold(0.0f64, f64::max)
    };
    let mut prev: Option<f64> = None;
    for &lam in lambda_grid {
        let t = sup_t(lam);
        if t <= 0.5 {
            // refine between the bracketing grid points
            let mut hi = lam;
            let mut lo = match prev {
                Some(p) => p,
                None => return Ok(lam),
            };
            for _ in 0..25 {
                let mid = 0.5 * (lo + hi);
                if sup_t(mid) <= 0.5 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if (hi - lo) < 1e-3 * hi {
                    break;
                }
            }
            return Ok(hi);
        }
        prev = Some(lam);
    }
    Err(Error::ThresholdNotFound(format!(
        "no lambda in [{}, {}] meets the 1/2 bound; extend the grid",
        lambda_grid[0],
        lambda_grid[lambda_grid.len() - 1]
    )))
}

/// Options for the gridded Neumann iteration.
#[derive(Debug, Clone, Copy)]
pub struct NeumannOptions {
    pub half_width: f64,
    pub spacing: f64,
    pub max_terms: usize,
}

impl Default for NeumannOptions {
    fn default() -> Self {
        Self {
            half_width: 14.0,
            spacing: 0.02,
            max_terms: 24,
        }
    }
}

/// Partial sums and diagnostics of the Neumann series at the probe points.
#[derive(Debug, Clone, serde::Serialize)]
pub struct NeumannSeriesState {
    pub lambda: f64,
    pub lambda0: f64,
    /// per-term values R_lambda (B R_lambda)^k g at each probe
    pub terms: Vec<Vec<f64>>,
    /// sup norms of the iterated gradient stages
    pub term_sups: Vec<f64>,
    /// measured sup ratio of consecutive stages
    pub contraction_factor: f64,
    /// |last term| * rho / (1 - rho) per probe
    pub remainder_bound: Vec<f64>,
}

/// Evaluate sum_{k=0}^{N} R_lambda (B R_lambda)^k g at the probe points by
/// grid iteration: phi_0 = g, psi_k = grad R_lambda phi_k (on the grid),
/// phi_{k+1} = b . psi_k, term_k = R_lambda phi_k (probes).
pub fn neumann_resolvent<G>(
    field: &DriftField,
    rk: &ResolventKernel,
    lambda: f64,
    lambda0: f64,
    g: G,
    probes: &[f64],
    opts: &NeumannOptions,
) -> Result<(Vec<f64>, NeumannSeriesState)>
where
    G: Fn(f64) -> f64,
{
    if rk.params().d() != 1 {
        return Err(Error::Unsupported(
            "neumann_resolvent is implemented for d = 1".into(),
        ));
    }
    let h = opts.spacing;
    let n = (2.0 * opts.half_width / h).round() as usize + 1;
    let x0 = -opts.half_width;
    let grid: Vec<f64> = (0..n).map(|i| x0 + i as f64 * h).collect();
    let bvals: Vec<f64> = grid.iter().map(|&x| field.eval1(x)).collect();

    let mut phi: Vec<f64> = grid.iter().map(|&x| g(x)).collect();
    let mut totals = vec![0.0; probes.len()];
    let mut terms: Vec<Vec<f64>> = Vec::new();
    let mut term_sups: Vec<f64> = Vec::new();
    let mut ratio: f64 = 0.0;
    let mut last_term: Vec<f64> = vec![0.0; probes.len()];
    for k in 0..opts.max_terms {
        // term_k at probes
        let tk: Vec<f64> = probes
            .iter()
            .map(|&x| conv_from_grid(rk, lambda, &phi, x0, h, x, false))
            .collect();
        for (t, v) in totals.iter_mut().zip(&tk) {
            *t += v;
        }
        last_term = tk.clone();
        terms.push(tk);
        if field.is_zero() {
            term_sups.push(0.0);
            break;
        }
        // gradient stage on the grid, then multiply by b
        let psi: Vec<f64> = grid_convolution(rk, lambda, &phi, x0, h, true);
        let sup = psi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if let Some(prev) = term_sups.last() {
            if *prev > 0.0 {
                ratio = sup / prev;
                if ratio > 0.9 {
                    return Err(Error::ContractionViolation { ratio, term: k });
                }
            }
        }
        term_sups.push(sup);
        phi = bvals.iter().zip(&psi).map(|(b, p)| b * p).collect();
        if sup < 1e-14 {
            break;
        }
    }
    let remainder: Vec<f64> = last_term
        .iter()
        .map(|t| t.abs() * ratio / (1.0 - ratio.min(0.999)))
        .collect();
    let state = NeumannSeriesState {
        lambda,
        lambda0,
        terms,
        term_sups,
        contraction_factor: ratio,
        remainder_bound: remainder,
    };
    Ok((totals, state))
}

/// Cubic Lagrange interpolation of grid values, zero outside the grid.
fn interp_grid(phi: &[f64], x0: f64, h: f64, y: f64) -> f64 {
    let n = phi.len();
    let end = x0 + (n - 1) as f64 * h;
    if y < x0 || y > end {
        return 0.0;
    }
    let pos = (y - x0) / h;
    let i = (pos.floor() as isize).clamp(1, n as isize - 3) as usize;
    let t = pos - i as f64;
    let (a, b, c, d) = (phi[i - 1], phi[i], phi[i + 1], phi[i + 2]);
    let t2 = t * t;
    let t3 = t2 * t;
    a * (-t3 + 2.0 * t2 - t) / 2.0
        + b * (3.0 * t3 - 5.0 * t2 + 2.0) / 2.0
        + c * (-3.0 * t3 + 4.0 * t2 + t) / 2.0
        + d * (t3 - t2) / 2.0
}

/// Index of the last lattice lag treated continuously: offsets |j| <=
/// j_near(h, s) belong to the near zone, which ends at (j_near + 1/2) h so
/// the lattice far sum aligns with its midpoint cells.
fn near_lags(h: f64, s: f64) -> usize {
    let u_near = (2.0 * h).max((1.0 / s).min(1.0));
    (u_near / h).floor() as usize
}

/// Continuous near-zone integral int_{|u| <= (j_near+1/2) h} K(u) phi(x-u) du
/// with the kernel cusp handled by a tanh-sinh panel at the origin.
fn conv_near_zone(
    rk: &ResolventKernel,
    lambda: f64,
    phi: &[f64],
    x0: f64,
    h: f64,
    x: f64,
    deriv: bool,
    u_edge: f64,
) -> f64 {
    let alpha = rk.params().alpha();
    let s = lambda.powf(1.0 / alpha);
    let rscale = lambda.powf(1.0 / alpha - 1.0);
    let gscale = lambda.powf(3.0 / alpha - 1.0);
    let kernel = |u: f64| -> f64 {
        if deriv {
            -gscale * u * rk.mr1(s * u.abs())
        } else {
            rscale * rk.r1(s * u.abs())
        }
    };
    let (nodes, weights) = gauss_legendre(8);
    let mut acc = 0.0;
    for sgn in [-1.0, 1.0] {
        let mut f = |u: f64| kernel(sgn * u) * interp_grid(phi, x0, h, x - sgn * u);
        let first = h.min(u_edge);
        let (v, _) = tanh_sinh(&mut f, 0.0, first, 1e-10, 6);
        acc += v;
        let mut lo = first;
        let mut step = first;
        while lo < u_edge {
            let hi = (lo + step).min(u_edge);
            let c = 0.5 * (lo + hi);
            let hw = 0.5 * (hi - lo);
            for (&t, &w) in nodes.iter().zip(weights) {
                acc += w * hw * f(c + hw * t);
            }
            lo = hi;
            step *= 2.0;
        }
    }
    acc
}

/// int K_lambda(x - y) phi(y) dy for phi given on a uniform grid, at one
/// output point x. `deriv` selects grad r_lambda instead of r_lambda.
pub fn conv_from_grid(
    rk: &ResolventKernel,
    lambda: f64,
    phi: &[f64],
    x0: f64,
    h: f64,
    x: f64,
    deriv: bool,
) -> f64 {
    let alpha = rk.params().alpha();
    let s = lambda.powf(1.0 / alpha);
    let rscale = lambda.powf(1.0 / alpha - 1.0);
    let gscale = lambda.powf(3.0 / alpha - 1.0);
    let kernel = |u: f64| -> f64 {
        if deriv {
            -gscale * u * rk.mr1(s * u.abs())
        } else {
            rscale * rk.r1(s * u.abs())
        }
    };
    let n = phi.len();
    let end = x0 + (n - 1) as f64 * h;
    let j_near = near_lags(h, s);
    let u_edge = (j_near as f64 + 0.5) * h;
    let acc = conv_near_zone(rk, lambda, phi, x0, h, x, deriv, u_edge);
    // far zone lattice sum over offsets u_j = j h (midpoint cells)
    let jlo = ((x - end) / h).ceil() as isize;
    let jhi = ((x - x0) / h).floor() as isize;
    let mut far = 0.0;
    for j in jlo..=jhi {
        if j.unsigned_abs() <= j_near as usize {
            continue;
        }
        let uj = j as f64 * h;
        far += kernel(uj) * interp_grid(phi, x0, h, x - uj);
    }
    acc + far * h
}

/// Grid-to-grid convolution: like `conv_from_grid` at every node, with the
/// far-zone kernel values precomputed once per lag.
pub fn grid_convolution(
    rk: &ResolventKernel,
    lambda: f64,
    phi: &[f64],
    x0: f64,
    h: f64,
    deriv: bool,
) -> Vec<f64> {
    use rayon::prelude::*;
    let n = phi.len();
    let alpha = rk.params().alpha();
    let s = lambda.powf(1.0 / alpha);
    let rscale = lambda.powf(1.0 / alpha - 1.0);
    let gscale = lambda.powf(3.0 / alpha - 1.0);
    let j_near = near_lags(h, s);
    let u_edge = (j_near as f64 + 0.5) * h;
    // lag table: kernel at positive offsets j h (odd/even symmetry applied)
    let ker: Vec<f64> = (0..n)
        .map(|j| {
            let u = j as f64 * h;
            if deriv {
                -gscale * u * rk.mr1(s * u)
            } else {
                rscale * rk.r1(s * u)
            }
        })
        .collect();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let x = x0 + i as f64 * h;
            let near = conv_near_zone(rk, lambda, phi, x0, h, x, deriv, u_edge);
            let mut far = 0.0;
            for (j, &p) in phi.iter().enumerate() {
                let lag = i as isize - j as isize;
                if lag.unsigned_abs() as usize <= j_near {
                    continue;
                }
                let k = ker[lag.unsigned_abs() as usize];
                let k = if deriv && lag < 0 { -k } else { k };
                far += k * p;
            }
            near + far * h
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(d: usize, alpha: f64) -> ResolventKernel {
        let p = StableParams::new(d, alpha).unwrap();
        ResolventKernel::new(Arc::new(RadialProfile::new(p).unwrap())).unwrap()
    }

    #[test]
    fn r1_zero_closed_form() {
        let rk = kernel(1, 1.5);
        // Gamma(5/3) Gamma(1/3) / pi
        let expect = 0.769800358919501;
        assert!((rk.eval(1.0, &[0.0]).unwrap() - expect).abs() < 1e-12);
        // frozen quadrature references
        for (x, v) in [
            (0.5, 0.273392782731511),
            (1.0, 0.150955731528266),
            (2.0, 0.0581134574083206),
            (5.0, 0.00778410110782319),
            (10.0, 0.00115800313295724),
        ] {
            let got = rk.eval(1.0, &[x]).unwrap();
            assert!(
                (got - v).abs() < 2e-7 * v,
                "r1({x}) = {got}, want {v}"
            );
        }
    }

    #[test]
    fn infinite_at_origin_when_d_exceeds_alpha() {
        let rk = kernel(2, 1.5);
        assert!(rk.eval(1.0, &[0.0, 0.0]).unwrap().is_infinite());
        assert!(rk.eval(1.0, &[0.5, 0.0]).unwrap().is_finite());
    }

    #[test]
    fn scaling_identity_and_direct_quadrature() {
        let rk = kernel(1, 1.5);
        // scaling is the implementation identity; cross-check against a
        // direct time quadrature of e^{-lambda t} p(t, x)
        let prof = rk.profile().clone();
        for (lambda, x) in [(0.5, 0.7), (2.0, 1.3), (5.0, 0.2), (1.0, 4.0), (3.0, -2.0)] {
            let ours = rk.eval(lambda, &[x]).unwrap();
            let (direct, _) = tanh_sinh(
                |t| (-lambda * t).exp() * prof.density1(t, x),
                0.0,
                60.0 / lambda,
                1e-12,
                11,
            );
            assert!(
                (ours - direct).abs() < 1e-6 * direct,
                "lambda={lambda} x={x}: {ours} vs {direct}"
            );
        }
    }

    #[test]
    fn bound_shape_matches_e21() {
        // r_lambda(x) is comparable to
        // (lambda^{(d-alpha)/alpha} v |x|^{alpha-d}) ^ lambda^{-2} |x|^{-d-alpha};
        // at d = 1 < alpha the kernel is bounded near 0 and decays like
        // |x|^{-d-alpha} far out
        let rk = kernel(1, 1.5);
        let envelope = |lambda: f64, x: f64| -> f64 {
            let grow = lambda.powf((1.0 - 1.5) / 1.5).max(x.powf(0.5));
            grow.min(x.powf(-2.5) / (lambda * lambda))
        };
        for lambda in [1.0, 4.0] {
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            for i in 0..60 {
                let x = 0.1 * 10f64.powf(3.0 * i as f64 / 59.0);
                let v = rk.eval_radial(lambda, x) / envelope(lambda, x);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            assert!(
                lo > 0.0 && hi / lo < 10.0,
                "lambda={lambda} shape ratio {}",
                hi / lo
            );
        }
    }

    #[test]
    fn gradient_antisymmetric_fd_and_slope() {
        let rk = kernel(1, 1.5);
        let g = rk.gradient(1.0, &[1.0]).unwrap()[0];
        let gm = rk.gradient(1.0, &[-1.0]).unwrap()[0];
        assert_eq!(g, -gm);
        assert!(rk.gradient(1.0, &[0.0]).is_err());
        let h = 1e-4;
        let fd = (rk.eval_radial(1.0, 1.0 + h) - rk.eval_radial(1.0, 1.0 - h)) / (2.0 * h);
        assert!(
            (g - fd).abs() <= 1e-4 * fd.abs(),
            "grad {g} vs fd {fd}"
        );
        // near-origin log-log slope of |grad r_1| is alpha - d - 1 = -0.5
        let r1 = 1e-3;
        let r2 = 1e-2;
        let slope = (rk.grad_mag_radial(1.0, r2).ln() - rk.grad_mag_radial(1.0, r1).ln())
            / (r2.ln() - r1.ln());
        assert!((slope + 0.5).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn resolvent_mass_is_one_over_lambda() {
        let rk = kernel(1, 1.5);
        for &lambda in &[0.5f64, 1.0, 5.0] {
            let w = 400.0 * lambda.powf(-1.0 / 1.5);
            let inside = apply_resolvent(&rk, lambda, |_| 1.0, (-w, w), 0.0).unwrap();
            let mass = inside + rk.mass_outside(lambda, w);
            assert!(
                (mass - 1.0 / lambda).abs() < 1e-8 / lambda,
                "lambda={lambda}: mass {mass}"
            );
        }
    }

    #[test]
    fn apply_resolvent_positive_and_bounded() {
        let rk = kernel(1, 1.5);
        let g = |x: f64| if x.abs() < 1.0 { (1.0 - x * x).powi(2) } else { 0.0 };
        let v = apply_resolvent(&rk, 2.0, g, (-1.0, 1.0), 0.3).unwrap();
        assert!(v >= 0.0 && v <= 1.0 / 2.0 + 1e-12);
    }

    #[test]
    fn drift_apply_cases() {
        let b0 = DriftField::zero(1);
        let grad = |_: &[f64]| vec![2.5];
        assert_eq!(drift_apply(&b0, grad, &[0.3]).unwrap(), 0.0);
        let bc = DriftField::constant(vec![2.0]);
        let lin = |_: &[f64]| vec![0.7];
        assert!((drift_apply(&bc, lin, &[0.1]).unwrap() - 1.4).abs() < 1e-15);
        let bs = DriftField::power_singularity(1.0, 0.4, vec![1.0], 0.0, 0.0).unwrap();
        assert!(drift_apply(&bs, grad, &[0.0]).is_err());
    }

    #[test]
    fn lambda0_zero_field_and_scaling() {
        let rk = kernel(1, 1.5);
        let grid: Vec<f64> = (0..40).map(|i| 0.25 * 1.35f64.powi(i)).collect();
        let z = DriftField::zero(1);
        assert_eq!(
            lambda0_estimate(&z, &rk, &grid, &[0.0]).unwrap(),
            grid[0]
        );
        // constant |b| = c: lambda0 = (4 c r1(0))^{alpha/(alpha-1)}, so
        // doubling c multiplies lambda0 by 2^3 = 8 at alpha = 1.5
        let c1 = DriftField::constant(vec![0.5]);
        let c2 = DriftField::constant(vec![1.0]);
        let l1 = lambda0_estimate(&c1, &rk, &grid, &[0.0]).unwrap();
        let l2 = lambda0_estimate(&c2, &rk, &grid, &[0.0]).unwrap();
        let ratio = l2 / l1;
        assert!(
            (ratio - 8.0).abs() < 0.5,
            "lambda0 ratio {ratio} (l1={l1}, l2={l2})"
        );
        // reference magnitude: (2 * 0.5 * 2 r1(0))^3 = 3.6494...
        assert!((l1 - 3.6494).abs() < 0.15, "l1 = {l1}");
        // monotonicity: larger field never decreases lambda0
        assert!(l2 >= l1);
    }

    #[test]
    fn neumann_zero_field_is_plain_resolvent() {
        let rk = kernel(1, 1.5);
        let z = DriftField::zero(1);
        let g = |x: f64| if x.abs() < 1.0 { (1.0 - x * x).powi(3) } else { 0.0 };
        let opts = NeumannOptions::default();
        let (vals, state) =
            neumann_resolvent(&z, &rk, 2.0, 0.25, g, &[0.0, 0.5], &opts).unwrap();
        let direct = apply_resolvent(&rk, 2.0, g, (-1.0, 1.0), 0.0).unwrap();
        // gridded path vs continuous path: interpolation-level agreement
        assert!(
            (vals[0] - direct).abs() < 1e-4 * direct.abs(),
            "{} vs {direct}",
            vals[0]
        );
        assert_eq!(state.terms.len(), 1);
    }

    #[test]
    fn neumann_constant_drift_matches_translation_oracle() {
        let rk = kernel(1, 1.5);
        let c = 0.5;
        let field = DriftField::constant(vec![c]);
        let grid: Vec<f64> = (0..40).map(|i| 0.25 * 1.35f64.powi(i)).collect();
        let l0 = lambda0_estimate(&field, &rk, &grid, &[0.0]).unwrap();
        let lambda = 2.0 * l0;
        let g = |x: f64| if x.abs() < 1.0 { (1.0 - x * x).powi(3) } else { 0.0 };
        let probes = [0.0, 0.7];
        let (vals, state) = neumann_resolvent(
            &field,
            &rk,
            lambda,
            l0,
            g,
            &probes,
            &NeumannOptions::default(),
        )
        .unwrap();
        // oracle: int_0^infty e^{-lambda t} (p(t) * g)(x + c t) dt, with the
        // inner convolution in scaled coordinates y = centre + t^{1/alpha} w
        // so it stays resolved uniformly down to t = 0
        let prof = rk.profile().clone();
        let inner = |t: f64, centre: f64| -> f64 {
            let ts = t.powf(1.0 / 1.5);
            let mut acc = 0.0;
            let mut lo = 0.0f64;
            let mut step = 1.0;
            while lo < 800.0 {
                let hi = (lo + step).min(800.0);
                for sgn in [-1.0, 1.0] {
                    acc += crate::quad::gl_integrate(
                        |w| prof.f(w.abs()) * g(centre + sgn * ts * w),
                        lo,
                        hi,
                        16,
                    );
                }
                lo = hi;
                step *= 1.6;
            }
            // remaining stable mass acts on g near centre
            acc + 2.0 * prof.tail_mass(800.0) * g(centre)
        };
        for (i, &x) in probes.iter().enumerate() {
            let (oracle, _) = tanh_sinh(
                |t| (-lambda * t).exp() * inner(t, x + c * t),
                0.0,
                40.0 / lambda,
                1e-10,
                9,
            );
            assert!(
                (vals[i] - oracle).abs() < 1e-3 * oracle.abs().max(1e-4),
                "x={x}: neumann {} vs oracle {oracle}",
                vals[i]
            );
        }
        // contraction at lambda = 2 lambda0
        assert!(
            state.contraction_factor <= 0.55,
            "factor {}",
            state.contraction_factor
        );
    }
}
