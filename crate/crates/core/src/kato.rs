//! Drift fields b and their Kato modulus
//! M(r) = sup_x int_{B(x,r)} |b(y)| |x-y|^{-(d+1-alpha)} dy,
//! whose decay rate as r -> 0 controls every constant downstream.

use crate::error::{Error, Result};
use crate::quad::{gl_integrate, tanh_sinh};
use crate::stable::StableParams;

/// Analytic form of a drift field.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub enum FieldKind {
    Constant {
        value: Vec<f64>,
    },
    /// b_i(x) = amplitude_i sin(frequency x_i)
    Sinusoidal {
        amplitude: Vec<f64>,
        frequency: f64,
    },
    /// b(x) = amplitude exp(-|x|^2 / (2 width^2))
    GaussianBump {
        amplitude: Vec<f64>,
        width: f64,
    },
    /// b(x) = strength |x|^{-exponent} direction, optionally capped at
    /// |b| <= cap inside |x| < regularization_radius (0 = no cap)
    PowerSingularity {
        strength: f64,
        exponent: f64,
        direction: Vec<f64>,
        cap: f64,
        regularization_radius: f64,
    },
    /// piecewise-constant vector values on a uniform 1-d grid, zero outside
    Table {
        origin: f64,
        spacing: f64,
        values: Vec<f64>,
    },
    Sum(Vec<FieldKind>),
}

/// A drift field together with the metadata the quadratures and simulators
/// rely on.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DriftField {
    kind: FieldKind,
    d: usize,
    sup_bound: Option<f64>,
    support_radius: Option<f64>,
    singularity_exponent: Option<f64>,
    /// points where the Kato sup is attained for the built-in families
    symmetry_points: Vec<Vec<f64>>,
}

impl DriftField {
    pub fn zero(d: usize) -> Self {
        Self::constant(vec![0.0; d])
    }

    pub fn constant(value: Vec<f64>) -> Self {
        let d = value.len();
        let sup = norm(&value);
        DriftField {
            kind: FieldKind::Constant { value },
            d,
            sup_bound: Some(sup),
            support_radius: None,
            singularity_exponent: None,
            symmetry_points: vec![vec![0.0; d]],
        }
    }

    pub fn sinusoidal(amplitude: Vec<f64>, frequency: f64) -> Self {
        let d = amplitude.len();
        let sup = norm(&amplitude);
        // |sin| peaks at pi/(2 freq) in every coordinate
        let peak = vec![std::f64::consts::FRAC_PI_2 / frequency; d];
        DriftField {
            kind: FieldKind::Sinusoidal {
                amplitude,
                frequency,
            },
            d,
            sup_bound: Some(sup),
            support_radius: None,
            singularity_exponent: None,
            symmetry_points: vec![peak],
        }
    }

    pub fn gaussian_bump(amplitude: Vec<f64>, width: f64) -> Self {
        let d = amplitude.len();
        let sup = norm(&amplitude);
        DriftField {
            kind: FieldKind::GaussianBump { amplitude, width },
            d,
            sup_bound: Some(sup),
            // effectively supported within ~8 widths
            support_radius: Some(8.0 * width),
            singularity_exponent: None,
            symmetry_points: vec![vec![0.0; d]],
        }
    }

    pub fn power_singularity(
        strength: f64,
        exponent: f64,
        direction: Vec<f64>,
        cap: f64,
        regularization_radius: f64,
    ) -> Result<Self> {
        if exponent < 0.0 {
            return Err(Error::Domain("singularity exponent must be >= 0".into()));
        }
        let d = direction.len();
        let n = norm(&direction);
        if n == 0.0 {
            return Err(Error::Domain("direction must be nonzero".into()));
        }
        let direction: Vec<f64> = direction.iter().map(|v| v / n).collect();
        Ok(DriftField {
            kind: FieldKind::PowerSingularity {
                strength,
                exponent,
                direction,
                cap,
                regularization_radius,
            },
            d,
            sup_bound: None,
            support_radius: None,
            singularity_exponent: Some(exponent),
            symmetry_points: vec![vec![0.0; d]],
        })
    }

    pub fn table(origin: f64, spacing: f64, values: Vec<f64>) -> Result<Self> {
        if spacing <= 0.0 || values.is_empty() {
            return Err(Error::Domain("table needs positive spacing and values".into()));
        }
        let sup = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let half = origin.abs().max((origin + spacing * values.len() as f64).abs());
        Ok(DriftField {
            kind: FieldKind::Table {
                origin,
                spacing,
                values,
            },
            d: 1,
            sup_bound: Some(sup),
            support_radius: Some(half),
            singularity_exponent: None,
            symmetry_points: vec![vec![0.0]],
        })
    }

    /// Load a 1-d table field from CSV rows `x,value` (header optional).
    /// Points must form a uniform increasing grid.
    pub fn table_from_csv(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() < 2 {
                return Err(Error::Config(format!(
                    "{}: line {}: expected `x,value`",
                    path.display(),
                    lineno + 1
                )));
            }
            match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
                (Ok(x), Ok(v)) => {
                    xs.push(x);
                    vs.push(v);
                }
                _ if lineno == 0 => continue, // header row
                _ => {
                    return Err(Error::Config(format!(
                        "{}: line {}: cannot parse numbers",
                        path.display(),
                        lineno + 1
                    )))
                }
            }
        }
        if xs.len() < 2 {
            return Err(Error::Config("table needs at least two rows".into()));
        }
        let spacing = xs[1] - xs[0];
        for w in xs.windows(2) {
            if ((w[1] - w[0]) - spacing).abs() > 1e-9 * spacing.abs() {
                return Err(Error::Config("table grid must be uniform".into()));
            }
        }
        Self::table(xs[0], spacing, vs)
    }

    pub fn sum(fields: Vec<DriftField>) -> Result<Self> {
        let d = fields.first().map(|f| f.d).unwrap_or(1);
        if fields.iter().any(|f| f.d != d) {
            return Err(Error::Domain("summed fields must share the dimension".into()));
        }
        let sup = fields
            .iter()
            .map(|f| f.sup_bound)
            .try_fold(0.0f64, |a, s| s.map(|s| a + s));
        let mut pts: Vec<Vec<f64>> = Vec::new();
        for f in &fields {
            pts.extend(f.symmetry_points.iter().cloned());
        }
        Ok(DriftField {
            kind: FieldKind::Sum(fields.into_iter().map(|f| f.kind).collect()),
            d,
            sup_bound: sup,
            support_radius: None,
            singularity_exponent: None,
            symmetry_points: pts,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn sup_bound(&self) -> Option<f64> {
        self.sup_bound
    }

    pub fn support_radius(&self) -> Option<f64> {
        self.support_radius
    }

    pub fn singularity_exponent(&self) -> Option<f64> {
        self.singularity_exponent
    }

    pub fn symmetry_points(&self) -> &[Vec<f64>] {
        &self.symmetry_points
    }

    /// True only for fields that are identically zero by construction.
    pub fn is_zero(&self) -> bool {
        fn kind_zero(k: &FieldKind) -> bool {
            match k {
                FieldKind::Constant { value } => value.iter().all(|&v| v == 0.0),
                FieldKind::Sinusoidal { amplitude, .. }
                | FieldKind::GaussianBump {
                    amplitude, ..
                } => amplitude.iter().all(|&v| v == 0.0),
                FieldKind::PowerSingularity { strength, .. } => *strength == 0.0,
                FieldKind::Table { values, .. } => values.iter().all(|&v| v == 0.0),
                FieldKind::Sum(parts) => parts.iter().all(kind_zero),
            }
        }
        kind_zero(&self.kind)
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.d);
        out.iter_mut().for_each(|v| *v = 0.0);
        eval_kind(&self.kind, x, out);
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.eval_into(x, &mut out);
        out
    }

    /// d = 1 fast path.
    pub fn eval1(&self, x: f64) -> f64 {
        debug_assert_eq!(self.d, 1);
        let mut out = [0.0];
        eval_kind(&self.kind, &[x], &mut out);
        out[0]
    }

    pub fn magnitude(&self, x: &[f64]) -> f64 {
        if self.d == 1 {
            self.eval1(x[0]).abs()
        } else {
            norm(&self.eval(x))
        }
    }
}

fn eval_kind(kind: &FieldKind, x: &[f64], out: &mut [f64]) {
    match kind {
        FieldKind::Constant { value } => {
            for (o, v) in out.iter_mut().zip(value) {
                *o += v;
            }
        }
        FieldKind::Sinusoidal {
            amplitude,
            frequency,
        } => {
            for ((o, a), xi) in out.iter_mut().zip(amplitude).zip(x) {
                *o += a * (frequency * xi).sin();
            }
        }
        FieldKind::GaussianBump { amplitude, width } => {
            let q = x.iter().map(|v| v * v).sum::<f64>() / (2.0 * width * width);
            let e = (-q).exp();
            for (o, a) in out.iter_mut().zip(amplitude) {
                *o += a * e;
            }
        }
        FieldKind::PowerSingularity {
            strength,
            exponent,
            direction,
            cap,
            regularization_radius,
        } => {
            let r = norm(x);
            if r == 0.0 {
                return; // declared null set
            }
            let mut mag = strength * r.powf(-exponent);
            if *regularization_radius > 0.0 && r < *regularization_radius {
                mag = mag.min(*cap);
            }
            for (o, dir) in out.iter_mut().zip(direction) {
                *o += mag * dir;
            }
        }
        FieldKind::Table {
            origin,
            spacing,
            values,
        } => {
            let idx = ((x[0] - origin) / spacing).floor();
            if idx >= 0.0 && (idx as usize) < values.len() {
                out[0] += values[idx as usize];
            }
        }
        FieldKind::Sum(parts) => {
            for p in parts {
                eval_kind(p, x, out);
            }
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Kato modulus curve over a decreasing radius sequence.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct KatoModulusCurve {
    pub radii: Vec<f64>,
    pub modulus: Vec<f64>,
    /// fitted exponent beta in M(r) ~ C r^beta (NaN for the zero field)
    pub decay_fit: f64,
    /// modulus at the smallest radius <= 0.05 x modulus at the largest
    pub decaying: bool,
}

/// Pointwise modulus integral
/// M(r; x) = int_{B(x,r)} |b(y)| |x-y|^{-(d+1-alpha)} dy
/// after the radial substitution u = rho^{alpha-1}, which absorbs the only
/// non-smooth kernel factor exactly.
fn modulus_at(field: &DriftField, params: &StableParams, r: f64, x: &[f64]) -> f64 {
    let alpha = params.alpha();
    let d = params.d();
    let am1 = alpha - 1.0;
    // sphere integral of |b| at radius rho around x
    let sphere = |rho: f64| -> f64 {
        match d {
            1 => field.eval1(x[0] + rho).abs() + field.eval1(x[0] - rho).abs(),
            2 => {
                let n = 32;
                let mut acc = 0.0;
                for k in 0..n {
                    let phi = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
                    let (s, c) = phi.sin_cos();
                    acc += field.magnitude(&[x[0] + rho * c, x[1] + rho * s]);
                }
                acc * 2.0 * std::f64::consts::PI / n as f64
            }
            _ => {
                // d = 3: product Gauss-Legendre x trapezoid on the sphere
                let n_phi = 24;
                let mut acc = 0.0;
                acc += gl_integrate(
                    |ct: f64| {
                        let st = (1.0 - ct * ct).sqrt();
                        let mut inner = 0.0;
                        for k in 0..n_phi {
                            let phi = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n_phi as f64;
                            let (sp, cp) = phi.sin_cos();
                            inner += field.magnitude(&[
                                x[0] + rho * st * cp,
                                x[1] + rho * st * sp,
                                x[2] + rho * ct,
                            ]);
                        }
                        inner * 2.0 * std::f64::consts::PI / n_phi as f64
                    },
                    -1.0,
                    1.0,
                    16,
                );
                acc
            }
        }
    };
    // split the u-interval at radii where the sphere integrand is singular
    // or kinked (the field's singular point, table cell boundaries), so every
    // non-smooth point sits at a tanh-sinh endpoint
    let mut cuts: Vec<f64> = singular_radii(&field.kind, x)
        .into_iter()
        .filter(|&rho| rho > 0.0 && rho < r)
        .map(|rho| rho.powf(am1))
        .collect();
    cuts.push(0.0);
    cuts.push(r.powf(am1));
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (v, _err) = tanh_sinh(|u| sphere(u.powf(1.0 / am1)), w[0], w[1], 1e-10, 9);
        total += v;
    }
    total / am1
}

/// Radii rho (distances from x) at which the sphere integral of |b| is not
/// smooth.
fn singular_radii(kind: &FieldKind, x: &[f64]) -> Vec<f64> {
    match kind {
        FieldKind::PowerSingularity { .. } => {
            vec![x.iter().map(|v| v * v).sum::<f64>().sqrt()]
        }
        FieldKind::Table {
            origin,
            spacing,
            values,
        } => (0..=values.len())
            .map(|k| (origin + k as f64 * spacing - x[0]).abs())
            .collect(),
        FieldKind::Sum(parts) => parts
            .iter()
            .flat_map(|p| singular_radii(p, x))
            .collect(),
        _ => Vec::new(),
    }
}

/// Exact shell sums for d = 1 piecewise-constant table fields: the kernel
/// antiderivative sign(u) |u|^{alpha-1}/(alpha-1) integrates each cell
/// overlap exactly.
fn modulus_table_exact(
    origin: f64,
    spacing: f64,
    values: &[f64],
    alpha: f64,
    r: f64,
    x: f64,
) -> f64 {
    let am1 = alpha - 1.0;
    let anti = |u: f64| u.signum() * u.abs().powf(am1) / am1;
    let mut acc = 0.0;
    for (i, &v) in values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let a = (origin + i as f64 * spacing).max(x - r);
        let b = (origin + (i + 1) as f64 * spacing).min(x + r);
        if b <= a {
            continue;
        }
        // integral of |y-x|^{alpha-2} over [a, b]
        acc += v.abs() * (anti(b - x) - anti(a - x));
    }
    acc
}

/// Probe-grid estimate of M(r) = sup_x M(r; x): max over the probe set with
/// one local refinement pass around the argmax. A lower bound on the true
/// sup by construction.
pub fn kato_modulus(
    field: &DriftField,
    params: &StableParams,
    r: f64,
    probe: &[Vec<f64>],
) -> Result<f64> {
    if r <= 0.0 {
        return Err(Error::Domain(format!("kato_modulus requires r > 0, got {r}")));
    }
    if probe.is_empty() {
        return Err(Error::Domain("probe set must be non-empty".into()));
    }
    if field.is_zero() {
        return Ok(0.0);
    }
    let eval = |x: &[f64]| -> f64 {
        if let FieldKind::Table {
            origin,
            spacing,
            values,
        } = field.kind()
        {
            modulus_table_exact(*origin, *spacing, values, params.alpha(), r, x[0])
        } else {
            modulus_at(field, params, r, x)
        }
    };
    let mut best = f64::NEG_INFINITY;
    let mut best_x = probe[0].clone();
    for x in probe {
        let v = eval(x);
        if !v.is_finite() {
            return Err(Error::Accuracy {
                context: format!("kato modulus quadrature failed at probe {x:?}"),
                estimate: v,
                error: f64::NAN,
            });
        }
        if v > best {
            best = v;
            best_x = x.clone();
        }
    }
    // refinement: shrinking pattern search around the argmax
    let mut step = r;
    for _ in 0..6 {
        let mut improved = false;
        for axis in 0..params.d() {
            for sgn in [-1.0, 1.0] {
                let mut y = best_x.clone();
                y[axis] += sgn * step;
                let v = eval(&y);
                if v > best {
                    best = v;
                    best_x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(best)
}

/// Compute the modulus curve over decreasing radii and fit the decay
/// exponent; the Kato-class verdict is operational:
/// M(r_min) <= 0.05 M(r_max).
pub fn kato_check(
    field: &DriftField,
    params: &StableParams,
    radii: &[f64],
    probe: &[Vec<f64>],
) -> Result<KatoModulusCurve> {
    if radii.len() < 3 {
        return Err(Error::Domain(
            "decay fit needs at least 3 radii".into(),
        ));
    }
    if radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain("radii must be strictly decreasing".into()));
    }
    let modulus: Vec<f64> = radii
        .iter()
        .map(|&r| kato_modulus(field, params, r, probe))
        .collect::<Result<_>>()?;
    if field.is_zero() {
        return Ok(KatoModulusCurve {
            radii: radii.to_vec(),
            modulus,
            decay_fit: f64::NAN,
            decaying: true,
        });
    }
    // least-squares slope of ln M against ln r
    let n = radii.len() as f64;
    let lx: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ly: Vec<f64> = modulus.iter().map(|m| m.max(1e-300).ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let decay_fit = sxy / sxx;
    let decaying = modulus[radii.len() - 1] <= 0.05 * modulus[0];
    Ok(KatoModulusCurve {
        radii: radii.to_vec(),
        modulus,
        decay_fit,
        decaying,
    })
}

/// Default probe set: the field's symmetry points plus a coarse lattice.
pub fn default_probes(field: &DriftField, half_width: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let d = field.d();
    let mut probes: Vec<Vec<f64>> = field.symmetry_points().to_vec();
    let n = per_axis.max(2);
    let mut idx = vec![0usize; d];
    loop {
        let pt: Vec<f64> = idx
            .iter()
            .map(|&i| -half_width + 2.0 * half_width * i as f64 / (n - 1) as f64)
            .collect();
        probes.push(pt);
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == d {
                return probes;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(d: usize, alpha: f64) -> StableParams {
        StableParams::new(d, alpha).unwrap()
    }

    #[test]
    fn constant_field_closed_form() {
        // M(r) = 2 c r^{alpha-1}/(alpha-1); at c=1, alpha=1.5, r=1 this is 4
        let p = params(1, 1.5);
        let b = DriftField::constant(vec![1.0]);
        let probes = vec![vec![0.0]];
        let m = kato_modulus(&b, &p, 1.0, &probes).unwrap();
        assert!((m - 4.0).abs() < 1e-8, "m = {m}");
        let m2 = kato_modulus(&b, &p, 0.25, &probes).unwrap();
        assert!((m2 - 2.0 * 0.25f64.powf(0.5) / 0.5).abs() < 1e-8);
    }

    #[test]
    fn zero_field_and_homogeneity() {
        let p = params(1, 1.5);
        let probes = vec![vec![0.0], vec![1.0]];
        let z = DriftField::zero(1);
        assert_eq!(kato_modulus(&z, &p, 1.0, &probes).unwrap(), 0.0);
        let b1 = DriftField::sinusoidal(vec![1.0], 1.0);
        let b3 = DriftField::sinusoidal(vec![3.0], 1.0);
        let m1 = kato_modulus(&b1, &p, 0.7, &probes).unwrap();
        let m3 = kato_modulus(&b3, &p, 0.7, &probes).unwrap();
        assert!((m3 - 3.0 * m1).abs() < 1e-9 * m3);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = params(1, 1.5);
        let b = DriftField::constant(vec![1.0]);
        assert!(kato_modulus(&b, &p, 0.0, &[vec![0.0]]).is_err());
        assert!(kato_modulus(&b, &p, 1.0, &[]).is_err());
        assert!(kato_check(&b, &p, &[1.0, 0.5], &[vec![0.0]]).is_err());
        assert!(kato_check(&b, &p, &[0.5, 1.0, 0.1], &[vec![0.0]]).is_err());
    }

    #[test]
    fn constant_decay_exponent() {
        let p = params(1, 1.5);
        let b = DriftField::constant(vec![0.7]);
        let radii: Vec<f64> = (0..10).map(|i| 1.0 * 0.5f64.powi(i)).collect();
        let curve = kato_check(&b, &p, &radii, &[vec![0.0]]).unwrap();
        assert!(
            (curve.decay_fit - 0.5).abs() < 0.05,
            "fit {}",
            curve.decay_fit
        );
        assert!(curve.decaying);
        // monotone in r
        for w in curve.modulus.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn power_singularity_decay_exponent() {
        // gamma = 0.4 < alpha-1 = 0.5: M(r) ~ r^{alpha-1-gamma} = r^{0.1}
        let p = params(1, 1.5);
        let b = DriftField::power_singularity(1.0, 0.4, vec![1.0], 0.0, 0.0).unwrap();
        let radii: Vec<f64> = (0..10).map(|i| 0.5f64.powi(i)).collect();
        let curve = kato_check(&b, &p, &radii, &[vec![0.0]]).unwrap();
        assert!(
            (curve.decay_fit - 0.1).abs() < 0.02,
            "fit {}",
            curve.decay_fit
        );
    }

    #[test]
    fn zero_field_curve_verdict() {
        let p = params(1, 1.5);
        let curve =
            kato_check(&DriftField::zero(1), &p, &[1.0, 0.5, 0.25, 0.125], &[vec![0.0]]).unwrap();
        assert!(curve.decaying);
        assert!(curve.modulus.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn subadditive_in_the_field() {
        let p = params(1, 1.5);
        let b1 = DriftField::sinusoidal(vec![0.5], 1.0);
        let b2 = DriftField::gaussian_bump(vec![0.8], 0.7);
        let sum = DriftField::sum(vec![b1.clone(), b2.clone()]).unwrap();
        let probes = default_probes(&sum, 3.0, 7);
        for r in [0.3, 1.0] {
            let ms = kato_modulus(&sum, &p, r, &probes).unwrap();
            let m1 = kato_modulus(&b1, &p, r, &probes).unwrap();
            let m2 = kato_modulus(&b2, &p, r, &probes).unwrap();
            assert!(ms <= m1 + m2 + 1e-9, "r={r}: {ms} vs {} + {}", m1, m2);
        }
    }

    #[test]
    fn linf_plus_lp_example_is_kato() {
        // gaussian bump plus constant: modulus decays like r^{alpha-1}
        let p = params(1, 1.5);
        let b = DriftField::sum(vec![
            DriftField::constant(vec![0.4]),
            DriftField::gaussian_bump(vec![1.0], 0.5),
        ])
        .unwrap();
        let radii: Vec<f64> = (0..12).map(|i| 1.0 * 0.5f64.powi(i)).collect();
        let probes = default_probes(&b, 2.0, 9);
        let curve = kato_check(&b, &p, &radii, &probes).unwrap();
        assert!(curve.decaying, "modulus curve: {:?}", curve.modulus);
        assert!(curve.decay_fit > 0.3);
    }

    #[test]
    fn table_field_exact_shells_match_generic_quadrature() {
        let p = params(1, 1.5);
        // a non-trivial piecewise-constant profile on [-1, 1]
        let vals = vec![0.3, -1.2, 0.7, 0.7, -0.4, 1.0, 0.1, -0.9];
        let tf = DriftField::table(-1.0, 0.25, vals.clone()).unwrap();
        let x = vec![0.1];
        // pointwise comparison at fixed x (kato_modulus would sup-refine)
        let exact = super::modulus_table_exact(-1.0, 0.25, &vals, 1.5, 0.8, 0.1);
        let generic = super::modulus_at(&tf, &p, 0.8, &x);
        assert!(
            (exact - generic).abs() < 1e-5 * exact,
            "{exact} vs {generic}"
        );
    }

    #[test]
    fn d2_constant_closed_form() {
        // M(r) = c * 2 pi r^{alpha-1}/(alpha-1) in d = 2
        let p = params(2, 1.5);
        let b = DriftField::constant(vec![1.0, 0.0]);
        let m = kato_modulus(&b, &p, 1.0, &[vec![0.0, 0.0]]).unwrap();
        let expect = 2.0 * std::f64::consts::PI / 0.5;
        assert!((m - expect).abs() < 1e-6 * expect, "{m} vs {expect}");
    }
}
