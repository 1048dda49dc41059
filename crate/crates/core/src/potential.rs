//! Analytic potentials and their critical-point catalog.
//!
//! Critical points are found by damped Newton iteration from a set of seeds,
//! classified by the eigendecomposition of the Hessian, and enumerated with
//! all minima first, then index-1 saddles, and so on. Saddle points are then
//! sorted into separating / non-separating with respect to a reference minimum
//! by launching gradient flows on both sides of each unstable direction.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sorted_symmetric_eigen;

/// One Gaussian bump `amplitude · exp(-|x - center|² / (2 width²))`.
/// Negative amplitudes dig wells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTerm {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub width: f64,
}

/// Built-in potential families, all with closed-form derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// `Σ c_k x^k`.
    Poly1d { coeffs: Vec<f64> },
    /// `Σ c[i][j] x^i y^j`.
    Poly2d { coeffs: Vec<Vec<f64>> },
    /// `confinement · |x|²/2 + Σ gaussian terms`.
    GaussianWells {
        dim: usize,
        confinement: f64,
        terms: Vec<GaussianTerm>,
    },
    Sum { terms: Vec<Family> },
}

impl Family {
    pub fn dim(&self) -> usize {
        match self {
            Family::Poly1d { .. } => 1,
            Family::Poly2d { .. } => 2,
            Family::GaussianWells { dim, .. } => *dim,
            Family::Sum { terms } => terms.first().map_or(0, Family::dim),
        }
    }

    pub fn energy(&self, x: &[f64]) -> f64 {
        match self {
            Family::Poly1d { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x[0] + c),
            Family::Poly2d { coeffs } => {
                let mut v = 0.0;
                for (i, row) in coeffs.iter().enumerate() {
                    for (j, c) in row.iter().enumerate() {
                        if *c != 0.0 {
                            v += c * x[0].powi(i as i32) * x[1].powi(j as i32);
                        }
                    }
                }
                v
            }
            Family::GaussianWells { confinement, terms, .. } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let mut v = 0.5 * confinement * r2;
                for t in terms {
                    v += t.amplitude * (-sq_dist(x, &t.center) / (2.0 * t.width * t.width)).exp();
                }
                v
            }
            Family::Sum { terms } => terms.iter().map(|t| t.energy(x)).sum(),
        }
    }

    pub fn gradient_into(&self, x: &[f64], g: &mut [f64]) {
        g.iter_mut().for_each(|v| *v = 0.0);
        self.accumulate_gradient(x, g);
    }

    fn accumulate_gradient(&self, x: &[f64], g: &mut [f64]) {
        match self {
            Family::Poly1d { coeffs } => {
                let mut d = 0.0;
                for (k, c) in coeffs.iter().enumerate().skip(1).rev() {
                    d = d * x[0] + k as f64 * c;
                }
                g[0] += d;
            }
            Family::Poly2d { coeffs } => {
                for (i, row) in coeffs.iter().enumerate() {
                    for (j, c) in row.iter().enumerate() {
                        if *c == 0.0 {
                            continue;
                        }
                        if i > 0 {
                            g[0] += c * i as f64 * x[0].powi(i as i32 - 1) * x[1].powi(j as i32);
                        }
                        if j > 0 {
                            g[1] += c * j as f64 * x[0].powi(i as i32) * x[1].powi(j as i32 - 1);
                        }
                    }
                }
            }
            Family::GaussianWells { confinement, terms, .. } => {
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += confinement * xi;
                }
                for t in terms {
                    let s2 = t.width * t.width;
                    let e = t.amplitude * (-sq_dist(x, &t.center) / (2.0 * s2)).exp();
                    for k in 0..x.len() {
                        g[k] -= e * (x[k] - t.center[k]) / s2;
                    }
                }
            }
            Family::Sum { terms } => terms.iter().for_each(|t| t.accumulate_gradient(x, g)),
        }
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let mut h = DMatrix::zeros(d, d);
        self.accumulate_hessian(x, &mut h);
        h
    }

    fn accumulate_hessian(&self, x: &[f64], h: &mut DMatrix<f64>) {
        match self {
            Family::Poly1d { coeffs } => {
                let mut d2 = 0.0;
                for (k, c) in coeffs.iter().enumerate().skip(2).rev() {
                    d2 = d2 * x[0] + (k * (k - 1)) as f64 * c;
                }
                h[(0, 0)] += d2;
            }
            Family::Poly2d { coeffs } => {
                let p = |v: f64, e: i32| if e < 0 { 0.0 } else { v.powi(e) };
                for (i, row) in coeffs.iter().enumerate() {
                    for (j, c) in row.iter().enumerate() {
                        if *c == 0.0 {
                            continue;
                        }
                        let (fi, fj) = (i as f64, j as f64);
                        let (ii, jj) = (i as i32, j as i32);
                        let hxx = c * fi * (fi - 1.0) * p(x[0], ii - 2) * p(x[1], jj);
                        let hyy = c * fj * (fj - 1.0) * p(x[0], ii) * p(x[1], jj - 2);
                        let hxy = c * fi * fj * p(x[0], ii - 1) * p(x[1], jj - 1);
                        h[(0, 0)] += hxx;
                        h[(1, 1)] += hyy;
                        h[(0, 1)] += hxy;
                        h[(1, 0)] += hxy;
                    }
                }
            }
            Family::GaussianWells { confinement, terms, .. } => {
                let d = x.len();
                for k in 0..d {
                    h[(k, k)] += confinement;
                }
                for t in terms {
                    let s2 = t.width * t.width;
                    let e = t.amplitude * (-sq_dist(x, &t.center) / (2.0 * s2)).exp();
                    for a in 0..d {
                        for b in 0..=a {
                            let mut v = e * (x[a] - t.center[a]) * (x[b] - t.center[b]) / (s2 * s2);
                            if a == b {
                                v -= e / s2;
                            }
                            h[(a, b)] += v;
                            if a != b {
                                h[(b, a)] += v;
                            }
                        }
                    }
                }
            }
            Family::Sum { terms } => terms.iter().for_each(|t| t.accumulate_hessian(x, h)),
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// An analytic potential together with the box in which its critical points
/// are searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialModel {
    pub name: String,
    pub family: Family,
    pub search_box: Vec<[f64; 2]>,
}

impl PotentialModel {
    pub fn new(name: impl Into<String>, family: Family, search_box: Vec<[f64; 2]>) -> Result<Self> {
        let dim = family.dim();
        if dim == 0 || search_box.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "search box has {} axes but the potential has dimension {dim}",
                search_box.len()
            )));
        }
        if search_box.iter().any(|[lo, hi]| !(lo < hi)) {
            return Err(Error::InvalidArgument("search box axes must satisfy lo < hi".into()));
        }
        if let Family::Sum { terms } = &family {
            if terms.iter().any(|t| t.dim() != dim) {
                return Err(Error::InvalidArgument("sum terms disagree on dimension".into()));
            }
        }
        Ok(Self { name: name.into(), family, search_box })
    }

    /// `V(x) = x⁴/4 - x²/2` on `[-2, 2]`.
    pub fn double_well_1d() -> Self {
        Self::new(
            "double_well",
            Family::Poly1d { coeffs: vec![0.0, 0.0, -0.5, 0.0, 0.25] },
            vec![[-2.0, 2.0]],
        )
        .expect("valid model")
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn energy(&self, x: &[f64]) -> f64 {
        self.family.energy(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.family.gradient_into(x, &mut g);
        g
    }

    pub fn gradient_into(&self, x: &[f64], g: &mut [f64]) {
        self.family.gradient_into(x, g);
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.family.hessian(x)
    }

    pub fn box_diameter(&self) -> f64 {
        self.search_box.iter().map(|[lo, hi]| (hi - lo) * (hi - lo)).sum::<f64>().sqrt()
    }

    pub fn in_box(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.search_box).all(|(v, [lo, hi])| *v >= *lo && *v <= *hi)
    }
}

/// Worst relative discrepancies between the analytic derivatives and centered
/// finite differences at `samples` deterministic pseudo-random points of the
/// search box: `(gradient, hessian)`.
pub fn derivative_consistency(model: &PotentialModel, samples: usize, seed: u64) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = model.dim();
    let mut worst_g: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    for _ in 0..samples {
        let x: Vec<f64> = model.search_box.iter().map(|[lo, hi]| rng.random_range(*lo..*hi)).collect();
        let g = model.gradient(&x);
        let h = model.hessian(&x);
        let scale_g = g.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        let scale_h = h.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        for k in 0..d {
            let step = 1e-5 * (1.0 + x[k].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += step;
            xm[k] -= step;
            let fd = (model.energy(&xp) - model.energy(&xm)) / (2.0 * step);
            worst_g = worst_g.max((fd - g[k]).abs() / scale_g);
            let gp = model.gradient(&xp);
            let gm = model.gradient(&xm);
            for j in 0..d {
                let fdh = (gp[j] - gm[j]) / (2.0 * step);
                worst_h = worst_h.max((fdh - h[(j, k)]).abs() / scale_h);
            }
        }
    }
    (worst_g, worst_h)
}

/// Critical point with its Hessian eigendecomposition.
///
/// `eigenvalues` are sorted ascending, so for an index-1 saddle `ν₁ < 0` comes
/// first. `eigenvectors[j]` is the unit eigenvector for `eigenvalues[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub position: Vec<f64>,
    pub energy: f64,
    pub index: usize,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    /// Set once the sign of `eigenvectors[0]` is fixed by a basin normal.
    pub oriented: bool,
}

impl CriticalPoint {
    /// Builds a critical point directly from Hessian data (no potential needed).
    pub fn from_hessian_eigenvalues(position: Vec<f64>, energy: f64, eigenvalues: Vec<f64>) -> Self {
        let d = eigenvalues.len();
        let mut eigenvalues = eigenvalues;
        eigenvalues.sort_by(f64::total_cmp);
        let eigenvectors = (0..d).map(|j| (0..d).map(|k| if j == k { 1.0 } else { 0.0 }).collect()).collect();
        let index = eigenvalues.iter().filter(|v| **v < 0.0).count();
        Self { position, energy, index, eigenvalues, eigenvectors, oriented: false }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_minimum(&self) -> bool {
        self.index == 0
    }

    pub fn hessian_determinant(&self) -> f64 {
        self.eigenvalues.iter().product()
    }
}

/// Catalog of critical points (minima first), with the saddle
/// classification relative to a reference minimum once computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalCatalog {
    pub points: Vec<CriticalPoint>,
    pub reference: Option<usize>,
    /// Lowest-energy separating saddles.
    pub i_min: Vec<usize>,
    pub v_star: Option<f64>,
    /// Low-energy critical points on the basin boundary that are not separating.
    pub x_set: Vec<usize>,
    /// All separating index-1 saddles, regardless of energy.
    pub separating: Vec<usize>,
    /// Seeds whose Newton iteration failed to converge.
    pub nonconverged_seeds: usize,
}

impl CriticalCatalog {
    /// Catalog from explicit critical point data, enumerated minima-first.
    pub fn from_points(mut points: Vec<CriticalPoint>) -> Self {
        points.sort_by(|a, b| a.index.cmp(&b.index).then(a.energy.total_cmp(&b.energy)));
        Self {
            points,
            reference: None,
            i_min: Vec::new(),
            v_star: None,
            x_set: Vec::new(),
            separating: Vec::new(),
            nonconverged_seeds: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn minima(&self) -> impl Iterator<Item = (usize, &CriticalPoint)> {
        self.points.iter().enumerate().filter(|(_, p)| p.is_minimum())
    }

    pub fn minimum_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_minimum()).count()
    }

    pub fn reference_point(&self) -> Result<&CriticalPoint> {
        let z0 = self
            .reference
            .ok_or_else(|| Error::InvalidArgument("catalog has no reference minimum".into()))?;
        Ok(&self.points[z0])
    }

    /// Barrier `V* - V(z₀)`.
    pub fn barrier(&self) -> Result<f64> {
        let v_star = self.v_star.ok_or(Error::NoSeparatingSaddle)?;
        Ok(v_star - self.reference_point()?.energy)
    }

    /// Index of the catalog minimum whose position is closest to `x`.
    pub fn nearest_minimum(&self, x: &[f64]) -> Option<usize> {
        self.minima()
            .min_by(|(_, a), (_, b)| dist(&a.position, x).total_cmp(&dist(&b.position, x)))
            .map(|(i, _)| i)
    }
}

/// How to seed the Newton search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seeds {
    /// Uniform tensor grid with this many points per axis, edges included.
    Grid(usize),
    Points(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    pub grad_tol: f64,
    pub degeneracy_threshold: f64,
    /// Dedupe radius relative to the box diameter.
    pub dedupe_rel: f64,
    pub max_newton_iter: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-9, degeneracy_threshold: 1e-8, dedupe_rel: 1e-6, max_newton_iter: 200 }
    }
}

fn seed_points(model: &PotentialModel, seeds: &Seeds) -> Vec<Vec<f64>> {
    match seeds {
        Seeds::Points(p) => p.clone(),
        Seeds::Grid(n) => {
            let n = (*n).max(2);
            let axes: Vec<Vec<f64>> = model
                .search_box
                .iter()
                .map(|[lo, hi]| (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
                .collect();
            let mut out = vec![Vec::new()];
            for axis in &axes {
                out = out
                    .into_iter()
                    .flat_map(|prefix: Vec<f64>| {
                        axis.iter().map(move |v| {
                            let mut p = prefix.clone();
                            p.push(*v);
                            p
                        })
                    })
                    .collect();
            }
            out
        }
    }
}

fn newton(model: &PotentialModel, start: &[f64], opts: &SearchOptions) -> Option<Vec<f64>> {
    let d = model.dim();
    let mut x = start.to_vec();
    let mut g = model.gradient(&x);
    let mut gn = crate::linalg::norm(&g);
    for _ in 0..opts.max_newton_iter {
        if gn <= opts.grad_tol {
            return model.in_box(&x).then_some(x);
        }
        let h = model.hessian(&x);
        let rhs = DVector::from_iterator(d, g.iter().map(|v| -v));
        let step: Vec<f64> = match h.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s.iter().copied().collect(),
            _ => rhs.iter().copied().collect(),
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let gt = model.gradient(&trial);
            let gtn = crate::linalg::norm(&gt);
            if gtn < (1.0 - 1e-4 * t) * gn {
                x = trial;
                g = gt;
                gn = gtn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return (gn <= opts.grad_tol.max(1e3 * f64::EPSILON) && model.in_box(&x)).then_some(x);
        }
        if !model.in_box(&x) {
            return None;
        }
    }
    (gn <= opts.grad_tol && model.in_box(&x)).then_some(x)
}

/// Classifies a converged point by the eigendecomposition of its Hessian.
pub fn classify_point(model: &PotentialModel, x: Vec<f64>, degeneracy_threshold: f64) -> Result<CriticalPoint> {
    let (values, vectors) = sorted_symmetric_eigen(model.hessian(&x));
    if let Some(v) = values.iter().find(|v| v.abs() <= degeneracy_threshold) {
        return Err(Error::DegenerateHessian { position: x, eigenvalue: *v });
    }
    let d = values.len();
    let eigenvectors = (0..d).map(|c| (0..d).map(|r| vectors[(r, c)]).collect()).collect();
    Ok(CriticalPoint {
        energy: model.energy(&x),
        index: values.iter().filter(|v| **v < 0.0).count(),
        position: x,
        eigenvalues: values,
        eigenvectors,
        oriented: false,
    })
}

/// Newton search for critical points from `seeds`.
///
/// Non-converging seeds are counted in `nonconverged_seeds`; a degenerate
/// Hessian at a converged point is fatal.
pub fn find_critical_points(model: &PotentialModel, seeds: &Seeds, opts: &SearchOptions) -> Result<CriticalCatalog> {
    let starts = seed_points(model, seeds);
    if let Some(bad) = starts.iter().find(|s| s.len() != model.dim() || !model.in_box(s)) {
        return Err(Error::InvalidArgument(format!("seed {bad:?} outside the search box")));
    }
    let results: Vec<Option<Vec<f64>>> = starts.par_iter().map(|s| newton(model, s, opts)).collect();
    let radius = opts.dedupe_rel * model.box_diameter();
    let mut unique: Vec<Vec<f64>> = Vec::new();
    let mut failed = 0;
    for r in results {
        match r {
            None => failed += 1,
            Some(x) => {
                if unique.iter().all(|u| dist(u, &x) > radius) {
                    unique.push(x);
                }
            }
        }
    }
    let mut points = unique
        .into_iter()
        .map(|x| classify_point(model, x, opts.degeneracy_threshold))
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| {
        a.index
            .cmp(&b.index)
            .then(a.energy.total_cmp(&b.energy))
            .then_with(|| {
                a.position
                    .iter()
                    .zip(&b.position)
                    .map(|(u, v)| u.total_cmp(v))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    let mut catalog = CriticalCatalog::from_points(points);
    catalog.nonconverged_seeds = failed;
    Ok(catalog)
}

#[derive(Debug, Clone, Copy)]
pub struct FlowOptions {
    pub t_max: f64,
    /// Capture radius around catalog minima, relative to the box diameter.
    pub tol_rel: f64,
    /// Target displacement per step, relative to the box diameter.
    pub step_rel: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { t_max: 1e4, tol_rel: 1e-4, step_rel: 2e-3 }
    }
}

/// Integrates `x' = -∇V(x)` with RK4 until the trajectory enters the capture
/// ball of a catalog minimum, and returns that minimum's index.
///
/// The step is `min(step_len / |∇V|, 0.5 / |∇²V|_F)`: fixed displacement far
/// from critical points, bounded by the local stiffness near them.
pub fn flow_to_minimum(model: &PotentialModel, catalog: &CriticalCatalog, x: &[f64], opts: &FlowOptions) -> Result<usize> {
    if !model.in_box(x) {
        return Err(Error::NotConverged { reason: "start point outside the search box".into() });
    }
    let diam = model.box_diameter();
    let capture = opts.tol_rel * diam;
    let step_len = opts.step_rel * diam;
    let minima: Vec<(usize, &CriticalPoint)> = catalog.minima().collect();
    let d = model.dim();
    let mut x = x.to_vec();
    let mut t = 0.0;
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    while t < opts.t_max {
        if let Some((i, _)) = minima.iter().find(|(_, m)| dist(&m.position, &x) <= capture) {
            return Ok(*i);
        }
        model.gradient_into(&x, &mut k1);
        let gnorm = crate::linalg::norm(&k1);
        let stiff = model.hessian(&x).norm().max(1e-12);
        let h = (step_len / gnorm.max(1e-300)).min(0.5 / stiff);
        for k in 0..d {
            tmp[k] = x[k] - 0.5 * h * k1[k];
        }
        model.gradient_into(&tmp, &mut k2);
        for k in 0..d {
            tmp[k] = x[k] - 0.5 * h * k2[k];
        }
        model.gradient_into(&tmp, &mut k3);
        for k in 0..d {
            tmp[k] = x[k] - h * k3[k];
        }
        model.gradient_into(&tmp, &mut k4);
        for k in 0..d {
            x[k] -= h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
        t += h;
        if !model.in_box(&x) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotConverged { reason: format!("trajectory left the search box at t = {t:.3}") });
        }
    }
    Err(Error::NotConverged { reason: format!("t_max = {} exceeded", opts.t_max) })
}

#[derive(Debug, Clone)]
pub struct ClassifyOptions {
    /// Probe offset along unstable directions, relative to the box diameter.
    pub eps_rel: f64,
    pub energy_tie: f64,
    pub flow: FlowOptions,
    /// Replaces the automatic detection of the non-separating low-energy set.
    pub x_override: Option<Vec<usize>>,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self { eps_rel: 1e-4, energy_tie: 1e-9, flow: FlowOptions::default(), x_override: None }
    }
}

/// Outcome of the two flow probes launched from an index-1 saddle.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleProbe {
    pub saddle: usize,
    pub plus: Option<usize>,
    pub minus: Option<usize>,
}

fn probe(model: &PotentialModel, catalog: &CriticalCatalog, z: &[f64], dir: &[f64], eps: f64, opts: &FlowOptions) -> Option<usize> {
    let x: Vec<f64> = z.iter().zip(dir).map(|(a, b)| a + eps * b).collect();
    flow_to_minimum(model, catalog, &x, opts).ok()
}

/// Flow probes `z_i ± ε v₁` for every index-1 saddle.
pub fn probe_saddles(model: &PotentialModel, catalog: &CriticalCatalog, opts: &ClassifyOptions) -> Vec<SaddleProbe> {
    let eps = opts.eps_rel * model.box_diameter();
    let saddles: Vec<usize> = (0..catalog.len()).filter(|&i| catalog.points[i].index == 1).collect();
    saddles
        .par_iter()
        .map(|&i| {
            let p = &catalog.points[i];
            let v1 = &p.eigenvectors[0];
            let minus_dir: Vec<f64> = v1.iter().map(|v| -v).collect();
            SaddleProbe {
                saddle: i,
                plus: probe(model, catalog, &p.position, v1, eps, &opts.flow),
                minus: probe(model, catalog, &p.position, &minus_dir, eps, &opts.flow),
            }
        })
        .collect()
}

/// Fills `reference`, `separating`, `i_min`, `v_star` and `x_set` for the
/// reference minimum `z0`, and orients `v₁` of separating saddles along the
/// outward basin normal.
pub fn classify_saddles(model: &PotentialModel, catalog: &CriticalCatalog, z0: usize, opts: &ClassifyOptions) -> Result<CriticalCatalog> {
    if z0 >= catalog.len() || !catalog.points[z0].is_minimum() {
        return Err(Error::InvalidArgument(format!("z0 = {z0} is not a minimum of the catalog")));
    }
    let mut out = catalog.clone();
    out.reference = Some(z0);
    out.separating.clear();

    for pr in probe_saddles(model, catalog, opts) {
        let separating = match (pr.plus, pr.minus) {
            (Some(a), Some(b)) => (a == z0) != (b == z0),
            _ => false,
        };
        if separating {
            out.separating.push(pr.saddle);
            let p = &mut out.points[pr.saddle];
            if pr.plus == Some(z0) {
                p.eigenvectors[0].iter_mut().for_each(|v| *v = -*v);
            }
            p.oriented = true;
        }
    }
    if out.separating.is_empty() {
        out.i_min.clear();
        out.v_star = None;
        return Err(Error::NoSeparatingSaddle);
    }
    let v_star = out
        .separating
        .iter()
        .map(|&i| out.points[i].energy)
        .fold(f64::INFINITY, f64::min);
    out.v_star = Some(v_star);
    out.i_min = out
        .separating
        .iter()
        .copied()
        .filter(|&i| out.points[i].energy <= v_star + opts.energy_tie)
        .collect();

    out.x_set = match &opts.x_override {
        Some(list) => {
            if let Some(bad) = list.iter().find(|&&i| i >= out.len() || i == z0) {
                return Err(Error::InvalidArgument(format!("x_override entry {bad} is not a valid critical point")));
            }
            list.clone()
        }
        None => detect_non_separating(model, &out, z0, v_star, opts),
    };
    Ok(out)
}

/// Critical points of positive index below `V*` whose every unstable
/// direction, probed on both sides, flows back to `z0`. Such points lie on the
/// boundary of the basin of `z0` without separating it from another basin.
fn detect_non_separating(model: &PotentialModel, catalog: &CriticalCatalog, z0: usize, v_star: f64, opts: &ClassifyOptions) -> Vec<usize> {
    let eps = opts.eps_rel * model.box_diameter();
    let candidates: Vec<usize> = (0..catalog.len())
        .filter(|&i| {
            let p = &catalog.points[i];
            p.index >= 1 && p.energy < v_star && !catalog.separating.contains(&i)
        })
        .collect();
    candidates
        .into_par_iter()
        .filter(|&i| {
            let p = &catalog.points[i];
            (0..p.index).all(|j| {
                let v = &p.eigenvectors[j];
                let neg: Vec<f64> = v.iter().map(|c| -c).collect();
                probe(model, catalog, &p.position, v, eps, &opts.flow) == Some(z0)
                    && probe(model, catalog, &p.position, &neg, eps, &opts.flow) == Some(z0)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_1d() -> PotentialModel {
        PotentialModel::new("quadratic", Family::Poly1d { coeffs: vec![0.0, 0.0, 0.5] }, vec![[-2.0, 2.0]]).unwrap()
    }

    fn double_well_2d() -> PotentialModel {
        // (x² - 1)² + y² = x⁴ - 2x² + 1 + y²
        let coeffs = vec![
            vec![1.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0],
            vec![-2.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ];
        PotentialModel::new("dw2", Family::Poly2d { coeffs }, vec![[-2.0, 2.0], [-1.5, 1.5]]).unwrap()
    }

    #[test]
    fn double_well_1d_critical_points() {
        let m = PotentialModel::double_well_1d();
        let cat = find_critical_points(&m, &Seeds::Grid(21), &SearchOptions::default()).unwrap();
        assert_eq!(cat.len(), 3);
        // roots of x³ - x
        let (a, b, s) = (&cat.points[0], &cat.points[1], &cat.points[2]);
        assert!((a.position[0] + 1.0).abs() < 1e-10 && (b.position[0] - 1.0).abs() < 1e-10);
        assert!((a.energy + 0.25).abs() < 1e-12 && (a.eigenvalues[0] - 2.0).abs() < 1e-9);
        assert_eq!(s.index, 1);
        assert!(s.position[0].abs() < 1e-10 && s.energy.abs() < 1e-12);
        assert!((s.eigenvalues[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn quadratic_has_single_minimum() {
        let cat = find_critical_points(&quadratic_1d(), &Seeds::Grid(11), &SearchOptions::default()).unwrap();
        assert_eq!(cat.len(), 1);
        assert!((cat.points[0].eigenvalues[0] - 1.0).abs() < 1e-12);
        let err = classify_saddles(&quadratic_1d(), &cat, 0, &ClassifyOptions::default()).unwrap_err();
        assert_eq!(err, Error::NoSeparatingSaddle);
    }

    #[test]
    fn two_dimensional_saddle_eigenpairs() {
        let m = double_well_2d();
        let cat = find_critical_points(&m, &Seeds::Grid(9), &SearchOptions::default()).unwrap();
        assert_eq!(cat.len(), 3);
        let s = &cat.points[2];
        assert_eq!(s.index, 1);
        assert!((s.eigenvalues[0] + 4.0).abs() < 1e-9 && (s.eigenvalues[1] - 2.0).abs() < 1e-9);
        assert!((s.eigenvectors[0][0].abs() - 1.0).abs() < 1e-12);
        // Uᵀ H U diagonal
        let h = m.hessian(&s.position);
        for a in 0..2 {
            for b in 0..2 {
                let u = DVector::from_vec(s.eigenvectors[a].clone());
                let v = DVector::from_vec(s.eigenvectors[b].clone());
                let q = (u.transpose() * &h * v)[(0, 0)];
                let expected = if a == b { s.eigenvalues[a] } else { 0.0 };
                assert!((q - expected).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn flow_reaches_expected_minima() {
        let m = PotentialModel::double_well_1d();
        let cat = find_critical_points(&m, &Seeds::Grid(21), &SearchOptions::default()).unwrap();
        let opts = FlowOptions::default();
        assert_eq!(flow_to_minimum(&m, &cat, &[-0.3], &opts).unwrap(), 0);
        assert_eq!(flow_to_minimum(&m, &cat, &[-1.0], &opts).unwrap(), 0);
        assert_eq!(flow_to_minimum(&m, &cat, &[0.2], &opts).unwrap(), 1);
        // exactly on the stable manifold of the saddle
        assert!(flow_to_minimum(&m, &cat, &[0.0], &FlowOptions { t_max: 50.0, ..opts }).is_err());
    }

    #[test]
    fn double_well_classification() {
        let m = PotentialModel::double_well_1d();
        let cat = find_critical_points(&m, &Seeds::Grid(21), &SearchOptions::default()).unwrap();
        let c = classify_saddles(&m, &cat, 0, &ClassifyOptions::default()).unwrap();
        assert_eq!(c.i_min, vec![2]);
        assert_eq!(c.v_star, Some(c.points[2].energy));
        assert!((c.barrier().unwrap() - 0.25).abs() < 1e-12);
        assert!(c.x_set.is_empty());
        // outward normal of the basin of -1 at 0 points to +x
        assert!(c.points[2].eigenvectors[0][0] > 0.0 && c.points[2].oriented);
    }

    #[test]
    fn derivatives_are_consistent() {
        let fam = Family::Sum {
            terms: vec![
                double_well_2d().family,
                Family::GaussianWells {
                    dim: 2,
                    confinement: 0.3,
                    terms: vec![GaussianTerm { amplitude: -1.2, center: vec![0.4, -0.2], width: 0.5 }],
                },
            ],
        };
        let m = PotentialModel::new("mix", fam, vec![[-2.0, 2.0], [-2.0, 2.0]]).unwrap();
        let (g, h) = derivative_consistency(&m, 50, 3);
        assert!(g < 1e-6, "gradient mismatch {g}");
        assert!(h < 1e-5, "hessian mismatch {h}");
        let hess = m.hessian(&[0.3, 0.7]);
        assert_eq!(hess[(0, 1)].to_bits(), hess[(1, 0)].to_bits());
    }
}
