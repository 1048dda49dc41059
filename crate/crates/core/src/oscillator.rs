//! Dirichlet harmonic oscillator `½(-∂ₓ² + x²)` on `(-θ, +∞)`.
//!
//! `θ = +∞` is the full line with `μ_k = k + ½`; `θ = 0` keeps the odd states
//! of the full oscillator, `μ_k = 2k + 3/2`. Everything in between is solved
//! on a truncated interval with a second-order finite-difference stencil,
//! Sturm bisection, and Richardson extrapolation in the grid spacing.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymTridiagonal;
use crate::potential::CriticalPoint;

/// Below this θ the grid is ill-conditioned and the asymptotic branch is used.
pub const THETA_ASYMPTOTIC: f64 = -50.0;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Analytic,
    Grid,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorEigenvalue {
    pub k: usize,
    pub theta: f64,
    pub value: f64,
    pub method: Method,
    pub error_estimate: f64,
}

/// `k`-th eigenvalue on `n` uniform intervals over `[-θ, -θ + r]`,
/// Dirichlet at both ends.
fn grid_eigenvalue(k: usize, theta: f64, r: f64, n: usize) -> f64 {
    let h = r / n as f64;
    let inv = 1.0 / (h * h);
    let diag: Vec<f64> = (1..n)
        .map(|i| {
            let x = -theta + i as f64 * h;
            inv + 0.5 * x * x
        })
        .collect();
    let off = vec![-0.5 * inv; n.saturating_sub(2)];
    SymTridiagonal::new(diag, off).eigenvalue(k)
}

/// Grid solve with repeated Richardson extrapolation in `h²` (a Romberg
/// table), halving `h` until successive diagonal entries agree to
/// `tol · max(1, μ)`.
fn grid_mu(k: usize, theta: f64, tol: f64) -> Result<(f64, f64)> {
    let r = 10f64.max(theta.abs() + 10.0) + 2.0 * (k as f64).sqrt();
    let h0 = 0.1 / (1.0 + 0.1 * theta.min(0.0).abs());
    let mut n = (r / h0).ceil() as usize;
    let mut table: Vec<Vec<f64>> = vec![vec![grid_eigenvalue(k, theta, r, n)]];
    let mut diff = f64::INFINITY;
    for _ in 0..7 {
        n *= 2;
        let prev = table.last().expect("non-empty");
        let mut row = vec![grid_eigenvalue(k, theta, r, n)];
        for j in 1..=prev.len() {
            let f = 4f64.powi(j as i32);
            row.push(row[j - 1] + (row[j - 1] - prev[j - 1]) / (f - 1.0));
        }
        diff = (row[row.len() - 1] - prev[prev.len() - 1]).abs();
        let value = row[row.len() - 1];
        table.push(row);
        if table.len() >= 3 && diff < tol * value.abs().max(1.0) {
            return Ok((value, diff));
        }
    }
    Err(Error::ToleranceNotMet(diff))
}

/// Eigenvalue `μ_{k,θ}`; `tol` bounds the change between successive
/// extrapolated grid values, relative once `μ > 1`.
pub fn mu(k: usize, theta: f64, tol: f64) -> Result<OscillatorEigenvalue> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidTol(tol));
    }
    if theta.is_nan() || theta == f64::NEG_INFINITY {
        return Err(Error::OutOfRange { value: theta, range: "(-inf, +inf]" });
    }
    let exact = |value| OscillatorEigenvalue { k, theta, value, method: Method::Analytic, error_estimate: 0.0 };
    if theta == f64::INFINITY {
        return Ok(exact(k as f64 + 0.5));
    }
    if theta == 0.0 {
        return Ok(exact(2.0 * k as f64 + 1.5));
    }
    if theta < THETA_ASYMPTOTIC {
        if k > 0 {
            return Err(Error::OutOfRange { value: theta, range: "[-50, +inf] for k > 0" });
        }
        return Ok(OscillatorEigenvalue {
            k,
            theta,
            value: mu_asymptotic_neg(theta),
            method: Method::Asymptotic,
            error_estimate: AIRY_CONSTANT * theta.abs().powf(2.0 / 3.0),
        });
    }
    let (value, err) = grid_mu(k, theta, tol)?;
    Ok(OscillatorEigenvalue { k, theta, value, method: Method::Grid, error_estimate: err })
}

/// `|a₁| / 2^{1/3}` with `a₁` the first zero of Ai: the correction
/// `μ_{0,θ} - θ²/2 ≈ c |θ|^{2/3}` for a linear wall potential near `x = |θ|`.
pub const AIRY_CONSTANT: f64 = 1.855_757_081_489_239_6;

/// Leading term `θ²/2` of `μ_{0,θ}` as `θ → -∞`.
pub fn mu_asymptotic_neg(theta: f64) -> f64 {
    0.5 * theta * theta
}

/// Physicists' Hermite polynomial `H_n(x)` by the three-term recurrence.
pub fn hermite(n: usize, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, 2.0 * x);
    if n == 0 {
        return a;
    }
    for m in 1..n {
        let c = 2.0 * x * b - 2.0 * m as f64 * a;
        a = b;
        b = c;
    }
    b
}

/// Largest root `ζ_n` of `H_n`, `1 ≤ n ≤ 30`.
pub fn hermite_largest_root(n: usize) -> Result<f64> {
    if !(1..=30).contains(&n) {
        return Err(Error::OutOfRange { value: n as f64, range: "1..=30" });
    }
    if n == 1 {
        return Ok(0.0);
    }
    // all roots lie below √(2n+1); scan down to the first sign change
    let mut hi = (2.0 * n as f64 + 1.0).sqrt() + 1.0;
    let step = 0.01;
    let sign_hi = hermite(n, hi).signum();
    let mut lo = hi - step;
    while hermite(n, lo).signum() == sign_hi {
        hi = lo;
        lo -= step;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if hermite(n, mid).signum() == sign_hi {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `|ν₁| μ_{k, θ √(|ν₁|/2)} - ν₁/2`.
pub fn omega(nu1: f64, k: usize, theta: f64) -> Result<f64> {
    if nu1 == 0.0 || !nu1.is_finite() {
        return Err(Error::InvalidArgument(format!("nu1 = {nu1} must be finite and nonzero")));
    }
    let m = mu_scaled(nu1, k, theta)?;
    Ok(nu1.abs() * m - 0.5 * nu1)
}

fn mu_scaled(nu1: f64, k: usize, theta: f64) -> Result<f64> {
    Ok(mu(k, scale_theta(nu1, theta), DEFAULT_TOL)?.value)
}

/// Boundary parameter seen by the unit oscillator: `θ √(|ν₁|/2)`.
pub fn scale_theta(nu1: f64, theta: f64) -> f64 {
    if theta.is_infinite() || theta == 0.0 {
        theta
    } else {
        theta * (0.5 * nu1.abs()).sqrt()
    }
}

/// `ω(ν₁, n₁, θ) + Σ_{j≥2} (|ν_j|(n_j + ½) - ν_j/2)`.
pub fn lambda_local(crit: &CriticalPoint, n: &[usize], theta: f64) -> Result<f64> {
    if n.len() != crit.dim() {
        return Err(Error::InvalidArgument(format!(
            "multi-index has {} components, critical point has dimension {}",
            n.len(),
            crit.dim()
        )));
    }
    let mut v = omega(crit.eigenvalues[0], n[0], theta)?;
    for (nu, nj) in crit.eigenvalues.iter().zip(n).skip(1) {
        v += nu.abs() * (*nj as f64 + 0.5) - 0.5 * nu;
    }
    Ok(v)
}

/// Monotone cubic interpolant of `θ ↦ μ_{0,θ}` on a uniform grid.
///
/// Outside the tabulated window the direct solver is used, except above
/// `theta_max` where `μ_{0,θ}` equals ½ to far below the grid tolerance.
#[derive(Debug, Clone)]
pub struct MuCache {
    theta_min: f64,
    theta_max: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl MuCache {
    pub fn build(theta_min: f64, theta_max: f64, step: f64) -> Result<Self> {
        let n = ((theta_max - theta_min) / step).ceil() as usize;
        let step = (theta_max - theta_min) / n as f64;
        let values = (0..=n)
            .into_par_iter()
            .map(|i| mu(0, theta_min + i as f64 * step, 1e-10).map(|m| m.value))
            .collect::<Result<Vec<f64>>>()?;
        // μ_{0,θ} is decreasing and above ½; clamp grid noise near μ = ½
        let mut values = values;
        values[0] = values[0].max(0.5);
        for i in 1..values.len() {
            values[i] = values[i].min(values[i - 1]).max(0.5);
        }
        let slopes = fritsch_carlson_slopes(&values, step);
        Ok(Self { theta_min, theta_max, step, values, slopes })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.theta_min, self.theta_max)
    }

    pub fn eval(&self, theta: f64) -> Result<f64> {
        if theta == f64::INFINITY || theta > self.theta_max {
            return Ok(if theta > 8.0 { 0.5 } else { mu(0, theta, DEFAULT_TOL)?.value });
        }
        if theta < self.theta_min {
            return Ok(mu(0, theta, DEFAULT_TOL)?.value);
        }
        let t = (theta - self.theta_min) / self.step;
        let i = (t.floor() as usize).min(self.values.len() - 2);
        let s = t - i as f64;
        let h = self.step;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i], self.slopes[i + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        Ok(y0 + (3.0 * s2 - 2.0 * s3) * (y1 - y0) + (s3 - 2.0 * s2 + s) * h * m0 + (s3 - s2) * h * m1)
    }
}

/// Three-point derivative estimates limited so the Hermite cubic stays monotone.
fn fritsch_carlson_slopes(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let delta: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    let mut m = vec![0.0; n];
    m[0] = 1.5 * delta[0] - 0.5 * delta[1];
    m[n - 1] = 1.5 * delta[n - 2] - 0.5 * delta[n - 3];
    if m[0] * delta[0] <= 0.0 {
        m[0] = 0.0;
    }
    if m[n - 1] * delta[n - 2] <= 0.0 {
        m[n - 1] = 0.0;
    }
    for i in 1..n - 1 {
        m[i] = if delta[i - 1] * delta[i] <= 0.0 { 0.0 } else { 0.5 * (delta[i - 1] + delta[i]) };
    }
    for i in 0..n - 1 {
        if delta[i] == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
            continue;
        }
        let a = m[i] / delta[i];
        let b = m[i + 1] / delta[i];
        let r = a * a + b * b;
        if r > 9.0 {
            let t = 3.0 / r.sqrt();
            m[i] = t * a * delta[i];
            m[i + 1] = t * b * delta[i];
        }
    }
    m
}

static CACHE: OnceLock<std::result::Result<MuCache, Error>> = OnceLock::new();

/// Process-wide cache on `[-12, 8]`, built on first use.
pub fn global_cache() -> Result<&'static MuCache> {
    CACHE.get_or_init(|| MuCache::build(-12.0, 8.0, 0.02)).as_ref().map_err(Clone::clone)
}

/// `μ_{0,θ}` through the global cache; exact at `θ ∈ {0, +∞}`.
pub fn mu_cached(theta: f64) -> Result<f64> {
    if theta == f64::INFINITY {
        return Ok(0.5);
    }
    if theta == 0.0 {
        return Ok(1.5);
    }
    if theta < THETA_ASYMPTOTIC {
        return Ok(mu(0, theta, DEFAULT_TOL)?.value);
    }
    global_cache()?.eval(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Shooting oracle: integrate `ψ'' = (x² - 2μ)ψ` from the Dirichlet wall
    /// with RK4 and bisect on the sign of `ψ` at the far end.
    fn shooting_mu0(theta: f64, lo: f64, hi: f64) -> f64 {
        let far = |mu: f64| {
            let a = -theta;
            let b = a + 10f64.max(theta.abs() + 6.0);
            let n = 20_000;
            let h = (b - a) / n as f64;
            let (mut x, mut y, mut p) = (a, 0.0, 1.0);
            let f = |x: f64, y: f64| (x * x - 2.0 * mu) * y;
            for _ in 0..n {
                let k1y = p;
                let k1p = f(x, y);
                let k2y = p + 0.5 * h * k1p;
                let k2p = f(x + 0.5 * h, y + 0.5 * h * k1y);
                let k3y = p + 0.5 * h * k2p;
                let k3p = f(x + 0.5 * h, y + 0.5 * h * k2y);
                let k4y = p + h * k3p;
                let k4p = f(x + h, y + h * k3y);
                y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
                p += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
                x += h;
            }
            y
        };
        let (mut lo, mut hi) = (lo, hi);
        let s_lo = far(lo).signum();
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if far(mid).signum() == s_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn analytic_values() {
        assert_eq!(mu(0, f64::INFINITY, 1e-8).unwrap().value, 0.5);
        assert_eq!(mu(1, 0.0, 1e-8).unwrap().value, 3.5);
        assert_eq!(mu(3, 0.0, 1e-8).unwrap().method, Method::Analytic);
        assert!(matches!(mu(0, 1.0, 0.0), Err(Error::InvalidTol(_))));
    }

    #[test]
    fn grid_matches_closed_forms_near_zero() {
        // tiny θ should sit next to the odd-state values
        for k in 0..3 {
            let m = mu(k, 1e-6, 1e-9).unwrap();
            assert_eq!(m.method, Method::Grid);
            assert!((m.value - (2.0 * k as f64 + 1.5)).abs() < 1e-4, "k={k}: {}", m.value);
        }
        for k in 0..3 {
            let m = mu(k, 9.0, 1e-9).unwrap();
            assert!((m.value - (k as f64 + 0.5)).abs() < 1e-8, "k={k}: {}", m.value);
        }
    }

    #[test]
    fn hermite_root_identity() {
        assert_eq!(hermite_largest_root(1).unwrap(), 0.0);
        assert!((hermite_largest_root(2).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-14);
        // Szegő: ζ_n = √(2n+1) - c (2n+1)^{-1/6} + ..., c ≈ 1.856
        for n in [10, 20, 30] {
            let s = (2.0 * n as f64 + 1.0).sqrt();
            let z = hermite_largest_root(n).unwrap();
            assert!(z < s);
            assert!((z - (s - AIRY_CONSTANT * s.powf(-1.0 / 3.0))).abs() < 0.5 / s, "n={n}: {z}");
        }
        for n in 2..=6 {
            let z = hermite_largest_root(n).unwrap();
            assert!(hermite(n, z).abs() < 1e-6 * hermite(n, z + 0.1).abs());
            let m = mu(0, -z, 1e-9).unwrap();
            assert!((m.value - (n as f64 + 0.5)).abs() < 1e-7, "n={n}: {}", m.value);
        }
        assert!(hermite_largest_root(31).is_err() && hermite_largest_root(0).is_err());
    }

    #[test]
    fn grid_agrees_with_shooting() {
        for &theta in &[-3.0, -0.8, 0.4, 1.7] {
            let m = mu(0, theta, 1e-9).unwrap().value;
            // brackets that hold μ_{0,θ} and exclude μ_{1,θ}
            let hi = if theta > 0.0 { 1.5 } else { 0.5 * theta * theta + AIRY_CONSTANT * theta.abs().powf(2.0 / 3.0) + 1.5 };
            let s = shooting_mu0(theta, 0.45f64.min(0.5 * theta * theta), hi);
            assert!((m - s).abs() < 1e-7, "θ={theta}: grid {m} shooting {s}");
        }
    }

    #[test]
    fn negative_asymptotic_correction() {
        let m = mu(0, -5.0, 1e-8).unwrap().value;
        let c = (m - 12.5) / 5f64.powf(2.0 / 3.0);
        assert!(c > 0.0 && c <= 2.0, "fitted C = {c}");
        let deep = mu(0, -60.0, 1e-8).unwrap();
        assert_eq!(deep.method, Method::Asymptotic);
        assert_eq!(deep.value, 1800.0);
    }

    #[test]
    fn second_order_grid_convergence() {
        let exact = mu(0, -1.0, 1e-10).unwrap().value;
        let e1 = grid_eigenvalue(0, -1.0, 11.0, 275) - exact;
        let e2 = grid_eigenvalue(0, -1.0, 11.0, 550) - exact;
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn omega_and_lambda_local_examples() {
        assert_eq!(omega(-1.0, 0, f64::INFINITY).unwrap(), 1.0);
        assert_eq!(omega(-1.0, 0, 0.0).unwrap(), 2.0);
        assert_eq!(omega(2.0, 0, f64::INFINITY).unwrap(), 0.0);
        let min = CriticalPoint::from_hessian_eigenvalues(vec![0.0], 0.0, vec![2.0]);
        assert_eq!(lambda_local(&min, &[0], f64::INFINITY).unwrap(), 0.0);
        assert_eq!(lambda_local(&min, &[1], f64::INFINITY).unwrap(), 2.0);
        let saddle = CriticalPoint::from_hessian_eigenvalues(vec![0.0, 0.0], 0.0, vec![-4.0, 2.0]);
        assert_eq!(lambda_local(&saddle, &[0, 0], f64::INFINITY).unwrap(), 4.0);
        assert!(lambda_local(&saddle, &[0], 0.0).is_err());
    }

    #[test]
    fn cache_matches_direct_solves() {
        let cache = global_cache().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let theta = rng.random_range(-12.0..8.0);
            let direct = mu(0, theta, 1e-10).unwrap().value;
            let cached = cache.eval(theta).unwrap();
            assert!((cached - direct).abs() < 1e-6, "θ={theta}: {cached} vs {direct}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn strictly_decreasing_in_theta(a in -6.0f64..3.0, gap in 0.05f64..2.0) {
            let lo = mu(0, a, 1e-9).unwrap().value;
            let hi = mu(0, a + gap, 1e-9).unwrap().value;
            prop_assert!(lo > hi);
            prop_assert!(lo >= 0.5);
            if a < 0.0 {
                prop_assert!(lo >= 0.5 * a * a);
            }
        }

        #[test]
        fn cached_is_monotone(a in -12.0f64..7.9, gap in 1e-3f64..0.1) {
            prop_assert!(mu_cached(a).unwrap() >= mu_cached(a + gap).unwrap());
        }
    }
}
