//! Laplace asymptotics of `∫_{A_λ} e^{-λ f} g` on domains that move with `λ`.
//!
//! A domain is the intersection of a compact box `𝒦`, fixed balls, and
//! half-spaces `a·(x - x₀) < c + (b + κ λ^p) / √λ`. Half-spaces with `c = 0`
//! pass within `O(λ^{-1/2})` of `x₀` and shape the limit set
//! `A_∞ = {y : a·y < b}` seen in the scaled variable `y = √λ (x - x₀)`;
//! everything else drops out of the limit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::Family;
use crate::quadrature::{halton, integrate, QuadOptions};
use crate::special::{phi, phi_inv};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    /// Fixed offset `c ≥ 0` in the original variable.
    #[serde(default)]
    pub fixed: f64,
    /// Limit offset `b` in the scaled variable.
    #[serde(default)]
    pub scaled: f64,
    /// Moving part `κ λ^p` of the scaled offset; needs `p < 0`.
    #[serde(default)]
    pub drift: Option<(f64, f64)>,
}

impl HalfSpace {
    pub fn in_limit(&self) -> bool {
        self.fixed == 0.0
    }

    /// Offset `c + (b + κλ^p)/√λ` of `a·(x - x₀)` at parameter `lambda`.
    pub fn offset(&self, lambda: f64) -> f64 {
        let drift = self.drift.map_or(0.0, |(k, p)| k * lambda.powf(p));
        self.fixed + (self.scaled + drift) / lambda.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingDomainSpec {
    /// Compact hull `𝒦`, one `[lo, hi]` per axis.
    pub hull: Vec<[f64; 2]>,
    #[serde(default)]
    pub half_spaces: Vec<HalfSpace>,
    #[serde(default)]
    pub balls: Vec<Ball>,
}

impl MovingDomainSpec {
    pub fn dim(&self) -> usize {
        self.hull.len()
    }

    pub fn contains(&self, x: &[f64], x0: &[f64], lambda: f64) -> bool {
        self.hull.iter().zip(x).all(|([lo, hi], v)| v >= lo && v <= hi)
            && self.half_spaces.iter().all(|h| dot_shift(&h.normal, x, x0) < h.offset(lambda))
            && self.balls.iter().all(|b| sq_dist(x, &b.center) < b.radius * b.radius)
    }

    /// Membership of a scaled point `y` in `A_∞`.
    pub fn limit_contains(&self, y: &[f64]) -> bool {
        self.half_spaces
            .iter()
            .filter(|h| h.in_limit())
            .all(|h| h.normal.iter().zip(y).map(|(a, v)| a * v).sum::<f64>() < h.scaled)
    }

    /// Membership of `y` in `√λ (A_λ - x₀)`.
    pub fn scaled_contains(&self, y: &[f64], x0: &[f64], lambda: f64) -> bool {
        let s = lambda.sqrt();
        let x: Vec<f64> = x0.iter().zip(y).map(|(a, v)| a + v / s).collect();
        self.contains(&x, x0, lambda)
    }

    /// `A_∞ = -A_∞`: the limit half-spaces come in opposite pairs with
    /// matching offsets (after normalizing the normals).
    pub fn limit_is_symmetric(&self) -> bool {
        let limit: Vec<(Vec<f64>, f64)> = self
            .half_spaces
            .iter()
            .filter(|h| h.in_limit())
            .map(|h| {
                let n = h.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                (h.normal.iter().map(|v| v / n).collect(), h.scaled / n)
            })
            .collect();
        limit.iter().all(|(a, b)| {
            limit.iter().any(|(c, d)| (b - d).abs() < 1e-12 && a.iter().zip(c).all(|(u, v)| (u + v).abs() < 1e-12))
        })
    }

    fn validate(&self, x0: &[f64]) -> Result<()> {
        let d = self.dim();
        if x0.len() != d {
            return Err(Error::InvalidArgument("x0 and hull dimensions differ".into()));
        }
        if self.hull.iter().any(|[lo, hi]| !(lo < hi)) {
            return Err(Error::InvalidArgument("hull axes must satisfy lo < hi".into()));
        }
        for h in &self.half_spaces {
            if h.normal.len() != d || h.normal.iter().all(|v| *v == 0.0) {
                return Err(Error::InvalidArgument("half-space normal must be a nonzero d-vector".into()));
            }
            if h.fixed < 0.0 {
                return Err(Error::InvalidArgument("fixed half-space offsets must be non-negative".into()));
            }
            if let Some((_, p)) = h.drift {
                if p >= 0.0 {
                    return Err(Error::InvalidArgument("drift exponent must be negative for a limit to exist".into()));
                }
            }
        }
        for b in &self.balls {
            if b.center.len() != d || sq_dist(x0, &b.center) >= b.radius * b.radius {
                return Err(Error::InvalidArgument("balls must contain x0 in their interior".into()));
            }
        }
        Ok(())
    }
}

fn dot_shift(a: &[f64], x: &[f64], x0: &[f64]) -> f64 {
    a.iter().zip(x.iter().zip(x0)).map(|(a, (x, y))| a * (x - y)).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceProblem {
    pub f: Family,
    pub g: Family,
    pub x0: Vec<f64>,
    pub domain: MovingDomainSpec,
}

/// `P(𝒢 ∈ A_∞)` with its standard error (zero on the analytic paths).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianProbability {
    pub value: f64,
    pub std_error: f64,
    pub analytic: bool,
}

pub const QMC_POINTS: u64 = 1 << 16;
pub const QMC_SHIFTS: usize = 16;

/// `P(𝒢 ∈ {y : a_k·y < b_k ∀k})` for `𝒢 ~ N(0, H⁻¹)`.
///
/// Exact for zero or one constraint and for 1-D intervals; otherwise
/// randomly shifted Halton points (`QMC_SHIFTS × QMC_POINTS ≥ 10⁶`), with the
/// standard error taken over the shifts.
pub fn gaussian_polytope_probability(hessian: &DMatrix<f64>, constraints: &[(Vec<f64>, f64)], seed: u64) -> Result<GaussianProbability> {
    let d = hessian.nrows();
    let exact = |value| Ok(GaussianProbability { value, std_error: 0.0, analytic: true });
    let cov = hessian
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateHessian { position: vec![], eigenvalue: 0.0 })?;
    let sd = |a: &[f64]| {
        let v = DVector::from_column_slice(a);
        (v.transpose() * &cov * &v)[(0, 0)].sqrt()
    };
    match constraints {
        [] => return exact(1.0),
        [(a, b)] => return exact(phi(b / sd(a))),
        _ if d == 1 => {
            let s = cov[(0, 0)].sqrt();
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for (a, b) in constraints {
                if a[0] > 0.0 {
                    hi = hi.min(b / a[0]);
                } else {
                    lo = lo.max(b / a[0]);
                }
            }
            return exact(if hi > lo { phi(hi / s) - phi(lo / s) } else { 0.0 });
        }
        _ => {}
    }
    let chol = nalgebra::Cholesky::new(hessian.clone())
        .ok_or_else(|| Error::DegenerateHessian { position: vec![], eigenvalue: 0.0 })?;
    // G = L⁻ᵀ z has covariance (L Lᵀ)⁻¹ = H⁻¹
    let lt = chol.l().transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifts: Vec<Vec<f64>> = (0..QMC_SHIFTS).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
    let estimates: Vec<f64> = shifts
        .par_iter()
        .map(|shift| {
            let mut u = vec![0.0; d];
            let mut hits = 0u64;
            for i in 1..=QMC_POINTS {
                halton(i, d, &mut u);
                let z = DVector::from_iterator(d, u.iter().zip(shift).map(|(a, s)| phi_inv((a + s).fract().max(1e-300))));
                let g = lt.solve_upper_triangular(&z).expect("triangular factor is invertible");
                if constraints.iter().all(|(a, b)| a.iter().zip(g.iter()).map(|(x, y)| x * y).sum::<f64>() < *b) {
                    hits += 1;
                }
            }
            hits as f64 / QMC_POINTS as f64
        })
        .collect();
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    Ok(GaussianProbability { value: mean, std_error: (var / n).sqrt(), analytic: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceAsymptotic {
    pub value: f64,
    pub probability: GaussianProbability,
    /// Relative error order `λ^{-r/2}` of the leading term.
    pub order_r: u32,
}

impl LaplaceProblem {
    fn check(&self) -> Result<DMatrix<f64>> {
        self.domain.validate(&self.x0)?;
        let d = self.x0.len();
        if self.f.dim() != d || self.g.dim() != d {
            return Err(Error::InvalidArgument("f, g and x0 dimensions differ".into()));
        }
        let mut grad = vec![0.0; d];
        self.f.gradient_into(&self.x0, &mut grad);
        let h = self.f.hessian(&self.x0);
        let scale = h.norm().max(1.0);
        if grad.iter().any(|v| v.abs() > 1e-8 * scale) {
            return Err(Error::InvalidArgument(format!("x0 is not a critical point of f (gradient {grad:?})")));
        }
        let eig = nalgebra::SymmetricEigen::new(h.clone());
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min <= 1e-10 * scale {
            return Err(Error::DegenerateHessian { position: self.x0.clone(), eigenvalue: min });
        }
        if self.g.energy(&self.x0) == 0.0 {
            return Err(Error::ZeroDensity);
        }
        Ok(h)
    }

    pub fn limit_probability(&self, seed: u64) -> Result<GaussianProbability> {
        let h = self.check()?;
        let constraints: Vec<(Vec<f64>, f64)> = self
            .domain
            .half_spaces
            .iter()
            .filter(|c| c.in_limit())
            .map(|c| (c.normal.clone(), c.scaled))
            .collect();
        gaussian_polytope_probability(&h, &constraints, seed)
    }

    /// Leading term `(2π/λ)^{d/2} e^{-λ f(x₀)} det(∇²f(x₀))^{-1/2} g(x₀) P(𝒢 ∈ A_∞)`.
    pub fn asymptotic(&self, lambda: f64) -> Result<LaplaceAsymptotic> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument("lambda must be positive".into()));
        }
        let h = self.check()?;
        let probability = self.limit_probability(0x5eed)?;
        let d = self.x0.len() as f64;
        let value = (2.0 * std::f64::consts::PI / lambda).powf(0.5 * d) * (-lambda * self.f.energy(&self.x0)).exp()
            / h.determinant().sqrt()
            * self.g.energy(&self.x0)
            * probability.value;
        Ok(LaplaceAsymptotic { value, probability, order_r: if self.domain.limit_is_symmetric() { 2 } else { 1 } })
    }

    /// Feasible interval along the last coordinate with the leading ones fixed.
    fn chord(&self, fixed: &[f64], lambda: f64) -> Option<(f64, f64)> {
        let d = self.x0.len();
        let k = d - 1;
        let [mut lo, mut hi] = self.domain.hull[k];
        for h in &self.domain.half_spaces {
            // a_k x_k < off - Σ_{j<k} a_j (x_j - x0_j) + a_k x0_k
            let rest: f64 = (0..k).map(|j| h.normal[j] * (fixed[j] - self.x0[j])).sum();
            let rhs = h.offset(lambda) - rest + h.normal[k] * self.x0[k];
            let a = h.normal[k];
            if a > 0.0 {
                hi = hi.min(rhs / a);
            } else if a < 0.0 {
                lo = lo.max(rhs / a);
            } else if rhs <= 0.0 {
                return None;
            }
        }
        for b in &self.domain.balls {
            let rest: f64 = (0..k).map(|j| (fixed[j] - b.center[j]).powi(2)).sum();
            let r2 = b.radius * b.radius - rest;
            if r2 <= 0.0 {
                return None;
            }
            lo = lo.max(b.center[k] - r2.sqrt());
            hi = hi.min(b.center[k] + r2.sqrt());
        }
        (hi > lo).then_some((lo, hi))
    }

    fn breaks(lo: f64, hi: f64, center: f64, width: f64) -> Vec<f64> {
        let mut b = vec![lo];
        for m in [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0] {
            let x = center + m * width;
            if x > lo && x < hi {
                b.push(x);
            }
        }
        b.push(hi);
        b
    }

    /// Adaptive Gauss–Kronrod value of `∫_{A_λ} e^{-λ f} g` (`d ≤ 2`) to
    /// relative tolerance `rel_tol`.
    pub fn oracle(&self, lambda: f64, rel_tol: f64) -> Result<f64> {
        self.check()?;
        let d = self.x0.len();
        let f0 = self.f.energy(&self.x0);
        let width = 1.0 / lambda.sqrt();
        let opts = QuadOptions { rel_tol, abs_tol: 0.0, max_panels: 20_000 };
        let scaled = match d {
            1 => {
                let Some((lo, hi)) = self.chord(&[], lambda) else { return Ok(0.0) };
                let f = |x: f64| (-lambda * (self.f.energy(&[x]) - f0)).exp() * self.g.energy(&[x]);
                integrate(&f, &Self::breaks(lo, hi, self.x0[0], width), &opts)?.0
            }
            2 => {
                let [xlo, xhi] = self.domain.hull[0];
                let inner_opts = QuadOptions { rel_tol: 0.1 * rel_tol, ..opts };
                let failure = std::cell::Cell::new(None);
                let inner = |x: f64| {
                    let Some((lo, hi)) = self.chord(&[x], lambda) else { return 0.0 };
                    let f = |y: f64| (-lambda * (self.f.energy(&[x, y]) - f0)).exp() * self.g.energy(&[x, y]);
                    match integrate(&f, &Self::breaks(lo, hi, self.x0[1], width), &inner_opts) {
                        Ok((v, _)) => v,
                        Err(e) => {
                            failure.set(Some(e));
                            0.0
                        }
                    }
                };
                let v = integrate(&inner, &Self::breaks(xlo, xhi, self.x0[0], width), &opts)?.0;
                if let Some(e) = failure.take() {
                    return Err(e);
                }
                v
            }
            _ => return Err(Error::InvalidArgument("quadrature oracle supports d ≤ 2".into())),
        };
        Ok(scaled * (-lambda * f0).exp())
    }

    /// Monte Carlo estimate of the volume fraction of `B(0, R)` where
    /// `√λ (A_λ - x₀)` and `A_∞` disagree.
    pub fn indicator_mismatch(&self, lambda: f64, radius: f64, samples: usize, seed: u64) -> f64 {
        let d = self.x0.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = vec![0.0; d];
        let mut bad = 0usize;
        let mut total = 0usize;
        while total < samples {
            for v in y.iter_mut() {
                *v = rng.random_range(-radius..radius);
            }
            if y.iter().map(|v| v * v).sum::<f64>() > radius * radius {
                continue;
            }
            total += 1;
            if self.domain.scaled_contains(&y, &self.x0, lambda) != self.domain.limit_contains(&y) {
                bad += 1;
            }
        }
        bad as f64 / samples as f64
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn gaussian_1d(half: Option<f64>) -> LaplaceProblem {
        LaplaceProblem {
            f: Family::Poly1d { coeffs: vec![0.0, 0.0, 0.5] },
            g: Family::Poly1d { coeffs: vec![1.0] },
            x0: vec![0.0],
            domain: MovingDomainSpec {
                hull: vec![[-40.0, 40.0]],
                half_spaces: half.into_iter().map(|b| HalfSpace { normal: vec![1.0], fixed: 0.0, scaled: b, drift: None }).collect(),
                balls: vec![],
            },
        }
    }

    #[test]
    fn gaussian_examples() {
        let lam = 7.0;
        let full = gaussian_1d(None).asymptotic(lam).unwrap();
        assert!((full.value - (2.0 * PI / lam).sqrt()).abs() < 1e-14);
        assert_eq!(full.order_r, 2);
        let half = gaussian_1d(Some(0.8)).asymptotic(lam).unwrap();
        assert!((half.value - (2.0 * PI / lam).sqrt() * phi(0.8)).abs() < 1e-14);
        assert_eq!(half.order_r, 1);
        // exact for a quadratic f: the oracle must reproduce it
        let oracle = gaussian_1d(Some(0.8)).oracle(lam, 1e-12).unwrap();
        assert!((oracle - half.value).abs() < 1e-10 * half.value);

        let plane = LaplaceProblem {
            f: Family::Poly2d { coeffs: vec![vec![0.0, 0.0, 0.5], vec![0.0; 3], vec![0.5, 0.0, 0.0]] },
            g: Family::Poly2d { coeffs: vec![vec![1.0]] },
            x0: vec![0.0, 0.0],
            domain: MovingDomainSpec {
                hull: vec![[-30.0, 30.0], [-30.0, 30.0]],
                half_spaces: vec![HalfSpace { normal: vec![1.0, 0.0], fixed: 0.0, scaled: 0.0, drift: None }],
                balls: vec![],
            },
        };
        let a = plane.asymptotic(3.0).unwrap();
        assert!((a.value - 2.0 * PI / 3.0 * 0.5).abs() < 1e-14);
        assert!(a.probability.analytic && a.probability.value == 0.5);
    }

    #[test]
    fn qmc_quadrant_matches_orthant_formula() {
        // correlation ρ: P(G₁ < 0, G₂ < 0) = 1/4 + asin(ρ)/(2π)
        let h: DMatrix<f64> = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let cov = h.clone().try_inverse().unwrap();
        let rho = cov[(0, 1)] / (cov[(0, 0)] * cov[(1, 1)]).sqrt();
        let exact = 0.25 + rho.asin() / (2.0 * PI);
        let p = gaussian_polytope_probability(&h, &[(vec![1.0, 0.0], 0.0), (vec![0.0, 1.0], 0.0)], 1).unwrap();
        assert!(!p.analytic);
        assert!((p.value - exact).abs() < 1e-4 && (p.value - exact).abs() < 6.0 * p.std_error.max(1e-6), "{p:?} vs {exact}");
    }

    #[test]
    fn symmetry_detection() {
        let mut spec = gaussian_1d(Some(1.0)).domain;
        assert!(!spec.limit_is_symmetric());
        spec.half_spaces.push(HalfSpace { normal: vec![-2.0], fixed: 0.0, scaled: 2.0, drift: None });
        assert!(spec.limit_is_symmetric());
        spec.half_spaces[0].fixed = 0.3;
        assert!(!spec.limit_is_symmetric());
    }

    #[test]
    fn preconditions() {
        let mut p = gaussian_1d(None);
        p.g = Family::Poly1d { coeffs: vec![0.0, 1.0] };
        assert_eq!(p.asymptotic(1.0).unwrap_err(), Error::ZeroDensity);
        let mut q = gaussian_1d(None);
        q.f = Family::Poly1d { coeffs: vec![0.0, 0.0, 0.0, 0.0, 1.0] };
        assert!(matches!(q.asymptotic(1.0), Err(Error::DegenerateHessian { .. })));
        let mut r = gaussian_1d(None);
        r.x0 = vec![0.5];
        assert!(r.asymptotic(1.0).is_err());
    }

    #[test]
    fn indicator_mismatch_shrinks() {
        let mut p = gaussian_1d(Some(0.0));
        p.domain.half_spaces[0].drift = Some((2.0, -0.25));
        let a = p.indicator_mismatch(10.0, 4.0, 20_000, 1);
        let b = p.indicator_mismatch(1e4, 4.0, 20_000, 1);
        assert!(b < a && b < 0.05);
    }
}
