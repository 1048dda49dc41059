//! Asymptotically optimal boundary offsets.
//!
//! Maximizes `F(α) = min{ℓ(z₀), min_i λ_i(α_i)} / prefactor(α)` over the
//! offsets of the lowest saddles, then derives, for every other critical
//! point, the largest offset that keeps its ground level above the optimum.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonic::{extended_reals, AlphaVector};
use crate::oscillator::{mu, mu_cached, scale_theta};
use crate::potential::{CriticalCatalog, CriticalPoint};
use crate::special::phi;

pub const MAX_SADDLES: usize = 4;

/// `|ν₁| μ_{0, α√(|ν₁|/2)} - ν₁/2 + Σ_{j≥2} |ν_j| 1{ν_j < 0}`, through the μ cache.
pub fn per_saddle_lambda(crit: &CriticalPoint, alpha: f64) -> Result<f64> {
    let nu1 = crit.eigenvalues[0];
    let m = mu_cached(scale_theta(nu1, alpha))?;
    Ok(nu1.abs() * m - 0.5 * nu1 + negative_tail(crit))
}

/// Same as [`per_saddle_lambda`] with a direct oscillator solve.
pub fn per_saddle_lambda_exact(crit: &CriticalPoint, alpha: f64) -> Result<f64> {
    let nu1 = crit.eigenvalues[0];
    let m = mu(0, scale_theta(nu1, alpha), 1e-10)?.value;
    Ok(nu1.abs() * m - 0.5 * nu1 + negative_tail(crit))
}

fn negative_tail(crit: &CriticalPoint) -> f64 {
    crit.eigenvalues[1..].iter().filter(|v| **v < 0.0).map(|v| v.abs()).sum()
}

/// `ℓ(z₀) = min{min_j ν_j⁽⁰⁾, min_{i ∈ X} Σ_j |ν_j⁽ⁱ⁾| 1{ν_j < 0}}`.
pub fn ell(catalog: &CriticalCatalog) -> Result<f64> {
    let z0 = catalog.reference_point()?;
    let own = z0.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(catalog
        .x_set
        .iter()
        .map(|&i| catalog.points[i].eigenvalues.iter().filter(|v| **v < 0.0).map(|v| v.abs()).sum::<f64>())
        .fold(own, f64::min))
}

/// The reduced objective restricted to the lowest saddles.
#[derive(Debug, Clone)]
pub struct Objective {
    pub ell: f64,
    saddles: Vec<(CriticalPoint, f64)>,
}

impl Objective {
    pub fn new(catalog: &CriticalCatalog) -> Result<Self> {
        if catalog.i_min.is_empty() {
            return Err(Error::NoSeparatingSaddle);
        }
        let det0 = catalog.reference_point()?.hessian_determinant();
        let saddles = catalog
            .i_min
            .iter()
            .map(|&i| {
                let p = catalog.points[i].clone();
                let ratio = (det0 / p.hessian_determinant().abs()).sqrt();
                (p, ratio)
            })
            .collect();
        Ok(Self { ell: ell(catalog)?, saddles })
    }

    pub fn dim(&self) -> usize {
        self.saddles.len()
    }

    pub fn denominator(&self, alpha: &[f64]) -> f64 {
        self.saddles
            .iter()
            .zip(alpha)
            .map(|((p, ratio), a)| {
                let nu1 = p.eigenvalues[0].abs();
                let arg = if a.is_infinite() { *a } else { nu1.sqrt() * a };
                nu1 / (2.0 * PI * phi(arg)) * ratio
            })
            .sum()
    }

    pub fn numerator(&self, alpha: &[f64]) -> Result<f64> {
        let mut v = self.ell;
        for ((p, _), a) in self.saddles.iter().zip(alpha) {
            v = v.min(per_saddle_lambda(p, *a)?);
        }
        Ok(v)
    }

    pub fn value(&self, alpha: &[f64]) -> Result<f64> {
        let den = self.denominator(alpha);
        if !den.is_finite() {
            return Ok(0.0);
        }
        Ok(self.numerator(alpha)? / den)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub point: usize,
    /// Largest offset with `λ_i(α) ≥ λ*`; `+∞` when the point never limits.
    #[serde(with = "crate::kramers::ext")]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub i_min: Vec<usize>,
    #[serde(with = "extended_reals")]
    pub alpha_star: Vec<f64>,
    pub f_star: f64,
    pub lambda_star: f64,
    pub ell: f64,
    /// Offsets of the other critical points may be anything in `(-∞, threshold]`.
    pub thresholds: Vec<Threshold>,
    /// Every evaluated point within the tie tolerance of `F*`.
    pub maximizer_set: Vec<AlphaPoint>,
    pub short_circuit: bool,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlphaPoint(#[serde(with = "extended_reals")] pub Vec<f64>);

impl OptimizationResult {
    /// Full offset vector realizing the optimum: `z₀` and `X` far, lowest
    /// saddles at `α*`, everything else at its threshold.
    pub fn alpha_vector(&self, catalog: &CriticalCatalog) -> AlphaVector {
        let mut a = AlphaVector::far(catalog.len());
        for (i, v) in self.i_min.iter().zip(&self.alpha_star) {
            a.0[*i] = *v;
        }
        for t in &self.thresholds {
            a.0[t.point] = t.alpha;
        }
        a
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerOptions {
    /// Symmetric window for finite offsets.
    pub window: f64,
    pub tie_tol: f64,
    pub threshold_tol: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { window: 10.0, tie_tol: 1e-6, threshold_tol: 1e-8 }
    }
}

/// Per-coordinate candidates: `0`, `±10^t` log-spaced up to the window, and `+∞`.
pub fn coordinate_grid(m: usize, window: f64) -> Vec<f64> {
    let total = match m {
        0..=2 => 81,
        3 => 41,
        _ => 21,
    };
    let per_side = (total - 1) / 2;
    let (lo, hi) = (-2.0f64, window.log10());
    let mut g = vec![0.0];
    for k in 0..per_side {
        let t = lo + (hi - lo) * k as f64 / (per_side - 1) as f64;
        g.push(10f64.powf(t));
        g.push(-(10f64.powf(t)));
    }
    g.sort_by(f64::total_cmp);
    g.push(f64::INFINITY);
    g
}

/// Nelder–Mead minimization of `f` from `x0` with initial edge `step`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: f64, max_iter: usize, ftol: f64) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for j in 0..n {
        let mut p = x0.to_vec();
        p[j] += step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if (values[n] - values[0]).abs() <= ftol * (1.0 + values[0].abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=n).min_by(|a, b| values[*a].total_cmp(&values[*b])).expect("non-empty simplex");
    (simplex[best].clone(), values[best])
}

fn cartesian(grid: &[f64], m: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                grid.iter().map(move |g| {
                    let mut q = p.clone();
                    q.push(*g);
                    q
                })
            })
            .collect();
    }
    out
}

/// Solves the reduced optimization problem on a classified catalog.
pub fn optimize_reduced(catalog: &CriticalCatalog, opts: &OptimizerOptions) -> Result<OptimizationResult> {
    let m = catalog.i_min.len();
    if m > MAX_SADDLES {
        return Err(Error::CapExceeded(m, MAX_SADDLES));
    }
    let objective = Objective::new(catalog)?;
    let ell = objective.ell;

    let all_sharp = catalog.i_min.iter().all(|&i| catalog.points[i].eigenvalues[0].abs() >= ell);
    let (alpha_star, f_star, maximizers, evaluations) = if all_sharp {
        let a = vec![f64::INFINITY; m];
        let f = objective.value(&a)?;
        (a.clone(), f, vec![AlphaPoint(a)], 1)
    } else {
        search(&objective, opts)?
    };

    let mut lambda_star = ell;
    for (&i, a) in catalog.i_min.iter().zip(&alpha_star) {
        lambda_star = lambda_star.min(per_saddle_lambda_exact(&catalog.points[i], *a)?);
    }

    let z0 = catalog.reference.expect("objective checked the reference");
    let mut thresholds = Vec::new();
    for i in 0..catalog.len() {
        if i == z0 || catalog.x_set.contains(&i) || catalog.i_min.contains(&i) {
            continue;
        }
        let alpha = threshold(&catalog.points[i], lambda_star, opts.threshold_tol)?;
        thresholds.push(Threshold { point: i, alpha });
    }

    Ok(OptimizationResult {
        i_min: catalog.i_min.clone(),
        alpha_star,
        f_star,
        lambda_star,
        ell,
        thresholds,
        maximizer_set: maximizers,
        short_circuit: all_sharp,
        evaluations,
    })
}

type SearchOutcome = (Vec<f64>, f64, Vec<AlphaPoint>, usize);

fn search(objective: &Objective, opts: &OptimizerOptions) -> Result<SearchOutcome> {
    let m = objective.dim();
    let grid = coordinate_grid(m, opts.window);
    let candidates = cartesian(&grid, m);
    let scored: Vec<(Vec<f64>, f64)> = candidates
        .into_par_iter()
        .map(|a| objective.value(&a).map(|f| (a, f)))
        .collect::<Result<_>>()?;
    let mut evaluations = scored.len();

    let mut ranked: Vec<&(Vec<f64>, f64)> = scored.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let grid_best = ranked[0].1;

    let clamp = |a: &[f64], template: &[f64]| -> Vec<f64> {
        let mut it = a.iter();
        template
            .iter()
            .map(|t| if t.is_infinite() { *t } else { it.next().expect("finite slot").clamp(-opts.window, opts.window) })
            .collect()
    };
    let mut refined: Vec<(Vec<f64>, f64)> = Vec::new();
    for (start, _) in ranked.iter().take(6) {
        let free: Vec<f64> = start.iter().copied().filter(|v| v.is_finite()).collect();
        if free.is_empty() {
            continue;
        }
        let f = |x: &[f64]| -objective.value(&clamp(x, start)).unwrap_or(f64::NEG_INFINITY);
        let step = free.iter().map(|v| 0.1 * v.abs()).fold(0.05, f64::max);
        let (x, fx) = nelder_mead(f, &free, step, 400, 1e-13);
        evaluations += 400;
        refined.push((clamp(&x, start), -fx));
    }

    let mut pool: Vec<(Vec<f64>, f64)> = scored;
    pool.extend(refined);
    let (best_alpha, f_star) = pool
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| prefer_far(&a.0, &b.0)))
        .map(|(a, f)| (a.clone(), *f))
        .expect("non-empty pool");
    debug_assert!(f_star >= grid_best);
    let tie = opts.tie_tol * f_star.abs().max(1.0);
    let mut maximizers: Vec<AlphaPoint> = pool
        .iter()
        .filter(|(_, f)| *f >= f_star - tie)
        .map(|(a, _)| AlphaPoint(a.clone()))
        .collect();
    maximizers.sort_by(|a, b| {
        a.0.iter().zip(&b.0).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    maximizers.dedup();
    Ok((best_alpha, f_star, maximizers, evaluations))
}

/// Among equal objective values prefer more coordinates at `+∞`, then larger offsets.
fn prefer_far(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    let inf = |v: &[f64]| v.iter().filter(|x| x.is_infinite()).count();
    inf(a).cmp(&inf(b)).then_with(|| a.iter().sum::<f64>().total_cmp(&b.iter().sum::<f64>()))
}

/// Root of the decreasing map `α ↦ λ_i(α) = λ*` by bisection, or `+∞` when
/// `λ_i(+∞) ≥ λ*` already.
pub fn threshold(crit: &CriticalPoint, lambda_star: f64, tol: f64) -> Result<f64> {
    let level = |a: f64| per_saddle_lambda_exact(crit, a);
    if level(f64::INFINITY)? >= lambda_star {
        return Ok(f64::INFINITY);
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    while level(lo)? < lambda_star {
        lo *= 2.0;
        if lo < -1e6 {
            return Err(Error::NotConverged { reason: "threshold bracket below -1e6".into() });
        }
    }
    while level(hi)? >= lambda_star {
        hi *= 2.0;
        if hi > 64.0 {
            return Ok(f64::INFINITY);
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if level(mid)? >= lambda_star {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    pub(crate) fn double_well() -> CriticalCatalog {
        let mut c = CriticalCatalog::from_points(vec![
            CriticalPoint::from_hessian_eigenvalues(vec![-1.0], -0.25, vec![2.0]),
            CriticalPoint::from_hessian_eigenvalues(vec![1.0], -0.25, vec![2.0]),
            CriticalPoint::from_hessian_eigenvalues(vec![0.0], 0.0, vec![-1.0]),
        ]);
        c.reference = Some(0);
        c.separating = vec![2];
        c.i_min = vec![2];
        c.v_star = Some(0.0);
        c
    }

    #[test]
    fn per_saddle_examples() {
        let s = CriticalPoint::from_hessian_eigenvalues(vec![0.0], 0.0, vec![-1.0]);
        assert_eq!(per_saddle_lambda(&s, f64::INFINITY).unwrap(), 1.0);
        let s2 = CriticalPoint::from_hessian_eigenvalues(vec![0.0, 0.0], 0.0, vec![-4.0, 2.0]);
        assert_eq!(per_saddle_lambda(&s2, 0.0).unwrap(), 8.0);
        let min = CriticalPoint::from_hessian_eigenvalues(vec![0.0], 0.0, vec![2.0]);
        assert_eq!(per_saddle_lambda(&min, f64::INFINITY).unwrap(), 0.0);
        assert!(per_saddle_lambda(&min, 6.0).unwrap() < 1e-9);
    }

    #[test]
    fn ell_examples() {
        assert_eq!(ell(&double_well()).unwrap(), 2.0);
        let mut c = CriticalCatalog::from_points(vec![
            CriticalPoint::from_hessian_eigenvalues(vec![0.0, 0.0], 0.0, vec![1.0, 3.0]),
            CriticalPoint::from_hessian_eigenvalues(vec![0.0, 1.0], 1.0, vec![-4.0, -1.0]),
        ]);
        c.reference = Some(0);
        assert_eq!(ell(&c).unwrap(), 1.0);
        c.x_set = vec![1];
        assert_eq!(ell(&c).unwrap(), 1.0);
        c.points[0] = CriticalPoint::from_hessian_eigenvalues(vec![0.0, 0.0], 0.0, vec![6.0, 7.0]);
        assert_eq!(ell(&c).unwrap(), 5.0);
    }

    #[test]
    fn sharp_saddle_short_circuits() {
        let mut c = double_well();
        c.points[2] = CriticalPoint::from_hessian_eigenvalues(vec![0.0], 0.0, vec![-3.0]);
        let r = optimize_reduced(&c, &OptimizerOptions::default()).unwrap();
        assert!(r.short_circuit);
        assert_eq!(r.alpha_star, vec![f64::INFINITY]);
        let expected = 2.0 * 2.0 * PI / (3.0 * (2.0f64 / 3.0).sqrt());
        assert!((r.f_star - expected).abs() < 1e-12);
    }

    #[test]
    fn double_well_optimum() {
        let c = double_well();
        let obj = Objective::new(&c).unwrap();
        let edge = 2.0 * PI / 2f64.sqrt();
        assert!((obj.value(&[0.0]).unwrap() - edge).abs() < 1e-12);
        assert!((obj.value(&[f64::INFINITY]).unwrap() - edge).abs() < 1e-12);
        let r = optimize_reduced(&c, &OptimizerOptions::default()).unwrap();
        assert!(!r.short_circuit);
        assert!(r.f_star > edge);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let a = rng.random_range(-10.0..10.0);
            assert!(r.f_star >= obj.value(&[a]).unwrap() - 1e-9);
        }
        // the other minimum gets a finite threshold solving λ_i = λ*
        let t = &r.thresholds[0];
        assert_eq!(t.point, 1);
        assert!(t.alpha.is_finite());
        let lam = per_saddle_lambda_exact(&c.points[1], t.alpha).unwrap();
        assert!((lam - r.lambda_star).abs() < 1e-6);
        assert!(per_saddle_lambda_exact(&c.points[1], -5.0).unwrap() > r.lambda_star);
        assert!(per_saddle_lambda_exact(&c.points[1], 5.0).unwrap() < r.lambda_star);
        let full = r.alpha_vector(&c);
        assert_eq!(full.get(0), f64::INFINITY);
        assert_eq!(full.get(2), r.alpha_star[0]);
    }

    #[test]
    fn cap_is_enforced() {
        let mut c = double_well();
        for _ in 0..4 {
            c.points.push(c.points[2].clone());
            c.i_min.push(c.points.len() - 1);
        }
        assert_eq!(optimize_reduced(&c, &OptimizerOptions::default()), Err(Error::CapExceeded(5, 4)));
    }

    #[test]
    fn two_saddles_symmetric_optimum() {
        let mut c = double_well();
        c.points.push(CriticalPoint::from_hessian_eigenvalues(vec![0.0], 0.0, vec![-1.0]));
        c.i_min = vec![2, 3];
        let r = optimize_reduced(&c, &OptimizerOptions::default()).unwrap();
        let obj = Objective::new(&c).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..300 {
            let a = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            assert!(r.f_star >= obj.value(&a).unwrap() - 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn per_saddle_lambda_decreasing(a in -8.0f64..6.0, d in 0.05f64..2.0, nu in 0.2f64..4.0) {
            let s = CriticalPoint::from_hessian_eigenvalues(vec![0.0], 0.0, vec![-nu]);
            let (lo, hi) = (per_saddle_lambda(&s, a).unwrap(), per_saddle_lambda(&s, a + d).unwrap());
            prop_assert!(lo >= hi);
            // μ - ½ falls below double precision for large scaled offsets
            if a * (0.5 * nu).sqrt() < 3.0 {
                prop_assert!(lo > hi);
            }
        }

        #[test]
        fn scaling_preserves_ranking(a in -3.0f64..3.0, b in -3.0f64..3.0, c in prop_oneof![Just(0.5f64), Just(2.0f64)]) {
            let base = double_well();
            let mut scaled = base.clone();
            for p in &mut scaled.points {
                p.eigenvalues.iter_mut().for_each(|v| *v *= c);
            }
            let o1 = Objective::new(&base).unwrap();
            let o2 = Objective::new(&scaled).unwrap();
            let s = 1.0 / c.sqrt();
            let (f1a, f1b) = (o1.value(&[a]).unwrap(), o1.value(&[b]).unwrap());
            let (f2a, f2b) = (o2.value(&[a * s]).unwrap(), o2.value(&[b * s]).unwrap());
            prop_assume!((f1a - f1b).abs() > 1e-6 * f1a.abs());
            prop_assert_eq!(f1a > f1b, f2a > f2b);
        }
    }
}
