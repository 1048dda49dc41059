//! Finite-volume Dirichlet eigensolver for `-ℒ_β = -β⁻¹Δ + ∇V·∇`.
//!
//! The quadratic form `β⁻¹ ∫ |∇u|² e^{-βV}` over `∫ u² e^{-βV}` is
//! discretized edge by edge and symmetrized with the square root of the
//! node weights. In that form the matrix entries only involve differences of
//! `V` between neighbouring nodes and edge midpoints, so nothing overflows at
//! large `β`:
//!
//! `A_aa = Σ_b (βh²)⁻¹ e^{-β(V_ab - V_a)}`, `A_ab = -(βh²)⁻¹ e^{-β(V_ab - (V_a + V_b)/2)}`
//!
//! with `V_ab` the value at the edge midpoint; exterior neighbours carry the
//! Dirichlet condition.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kramers::ErrorRegime;
use crate::linalg::{inverse_subspace_iteration, SymBanded, SymTridiagonal};
use crate::potential::{flow_to_minimum, CriticalCatalog, FlowOptions, PotentialModel};

pub const MAX_NODES_2D: usize = 400;

/// Half-space `v·(x - z) < α/√β` around a critical point `z` with unit normal `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
    #[serde(with = "crate::kramers::ext")]
    pub alpha: f64,
    /// `|ν₁|` at the point; enables the resolution check.
    #[serde(default)]
    pub nu1: Option<f64>,
    /// Catalog index of the point, for diagnostics.
    #[serde(default)]
    pub index: usize,
}

impl Cut {
    pub fn offset(&self, beta: f64) -> f64 {
        self.alpha / beta.sqrt()
    }

    fn admits(&self, x: &[f64], beta: f64) -> bool {
        if self.alpha == f64::INFINITY {
            return true;
        }
        let s: f64 = self.normal.iter().zip(x.iter().zip(&self.point)).map(|(n, (a, b))| n * (a - b)).sum();
        s < self.offset(beta)
    }

    fn axis(&self) -> Option<(usize, f64)> {
        let nz: Vec<usize> = (0..self.normal.len()).filter(|&k| self.normal[k] != 0.0).collect();
        (nz.len() == 1).then(|| (nz[0], self.normal[nz[0]]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Box { bounds: Vec<[f64; 2]> },
    /// `{V < level}` inside `bounds`, restricted to the basin of the catalog
    /// minimum `reference`.
    SublevelBasin { bounds: Vec<[f64; 2]>, level: f64, reference: usize },
}

impl Region {
    pub fn bounds(&self) -> &[[f64; 2]] {
        match self {
            Region::Box { bounds } | Region::SublevelBasin { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    /// Coarse-level number of intervals per axis.
    Intervals(Vec<usize>),
    /// Coarse-level spacing.
    Spacing(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub region: Region,
    #[serde(default)]
    pub cuts: Vec<Cut>,
    pub grid: Grid,
}

impl DomainSpec {
    pub fn dim(&self) -> usize {
        self.region.bounds().len()
    }

    /// Pointwise membership for box regions with cuts. Returns the index of
    /// the first violated face (box faces `2k`, `2k + 1` for axis `k`, then
    /// cuts) or `None` when `x` is inside.
    pub fn exit_face(&self, x: &[f64], beta: f64) -> Result<Option<usize>> {
        let Region::Box { bounds } = &self.region else {
            return Err(Error::InvalidArgument("pointwise membership needs a box region".into()));
        };
        for (k, [lo, hi]) in bounds.iter().enumerate() {
            if x[k] <= *lo {
                return Ok(Some(2 * k));
            }
            if x[k] >= *hi {
                return Ok(Some(2 * k + 1));
            }
        }
        Ok(self.cuts.iter().position(|c| !c.admits(x, beta)).map(|j| 2 * bounds.len() + j))
    }

    /// Interval `(lo, hi)` in 1-D with a cut at `α/√β` to the right of `point`
    /// (outward normal `+x`).
    pub fn interval_with_cut(lo: f64, hi: f64, point: f64, alpha: f64, nu1: f64, intervals: usize) -> Self {
        DomainSpec {
            region: Region::Box { bounds: vec![[lo, hi]] },
            cuts: vec![Cut { point: vec![point], normal: vec![1.0], alpha, nu1: Some(nu1), index: 0 }],
            grid: Grid::Intervals(vec![intervals]),
        }
    }
}

/// Symmetric discretization of `-ℒ_β` on the active nodes.
#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    pub beta: f64,
    pub spacing: Vec<f64>,
    pub nodes: Vec<Vec<f64>>,
    pub matrix: Operator,
    pub form: EdgeForm,
    /// Unsymmetrized 1-D chain, when available.
    pub chain: Option<Chain>,
}

/// 1-D problem `K u = λ M u` in the original variable: conductances
/// `k_{a,a+1}`, boundary conductances at both ends and node weights, all
/// relative to the lowest node energy.
#[derive(Debug, Clone)]
pub struct Chain {
    pub conductance: Vec<f64>,
    pub ends: [f64; 2],
    pub weight: Vec<f64>,
}

impl Chain {
    /// Pivots of `K` by elimination that only adds positive numbers: the
    /// excess `d_a - k_{a,a+1}` is carried explicitly.
    fn pivots(&self) -> Vec<f64> {
        let n = self.weight.len();
        let mut d = vec![0.0; n];
        let mut excess = self.ends[0];
        for a in 0..n {
            if a > 0 {
                excess = self.conductance[a - 1] * excess / d[a - 1];
            }
            if a == n - 1 {
                excess += self.ends[1];
            }
            d[a] = excess + if a + 1 < n { self.conductance[a] } else { 0.0 };
        }
        d
    }

    /// Solves `K x = b` for `b ≥ 0` without cancellation.
    fn solve(&self, d: &[f64], b: &mut [f64]) {
        let n = b.len();
        for a in 1..n {
            b[a] += self.conductance[a - 1] / d[a - 1] * b[a - 1];
        }
        b[n - 1] /= d[n - 1];
        for a in (0..n - 1).rev() {
            b[a] = (b[a] + self.conductance[a] * b[a + 1]) / d[a];
        }
    }

    fn rayleigh(&self, u: &[f64]) -> f64 {
        let n = u.len();
        let num: f64 = self.conductance.iter().enumerate().map(|(a, k)| k * (u[a] - u[a + 1]).powi(2)).sum::<f64>()
            + self.ends[0] * u[0] * u[0]
            + self.ends[1] * u[n - 1] * u[n - 1];
        let den: f64 = self.weight.iter().zip(u).map(|(m, v)| m * v * v).sum();
        num / den
    }

    /// Principal eigenpair `(λ₁, u)` by inverse iteration; `u > 0`.
    pub fn ground_state(&self) -> Result<(f64, Vec<f64>)> {
        let d = self.pivots();
        let mut u = vec![1.0; self.weight.len()];
        let mut lambda = f64::INFINITY;
        for it in 0..500 {
            let mut b: Vec<f64> = self.weight.iter().zip(&u).map(|(m, v)| m * v).collect();
            self.solve(&d, &mut b);
            let top = b.iter().copied().fold(0.0, f64::max);
            u = b.into_iter().map(|v| v / top).collect();
            let next = self.rayleigh(&u);
            let done = lambda - next <= 1e-12 * next;
            lambda = next;
            if done && it > 1 {
                return Ok((lambda, u));
            }
        }
        Err(Error::NoConvergence(500))
    }
}

/// The quadratic form `wᵀAw` as a sum of non-negative edge terms
/// `t (ρ w_a - w_b/ρ)²` and boundary terms `c w_a²`; evaluating it this way
/// keeps the principal eigenvalue accurate to high relative precision even
/// when it is far below `ε‖A‖`.
#[derive(Debug, Clone, Default)]
pub struct EdgeForm {
    pub edges: Vec<(usize, usize, f64, f64)>,
    pub boundary: Vec<(usize, f64)>,
}

impl EdgeForm {
    pub fn energy(&self, w: &[f64]) -> f64 {
        let inner: f64 = self.edges.iter().map(|&(a, b, t, r)| t * (r * w[a] - w[b] / r).powi(2)).sum();
        inner + self.boundary.iter().map(|&(a, c)| c * w[a] * w[a]).sum::<f64>()
    }

    fn push_edge(&mut self, beta: f64, a: usize, b: usize, t: f64, va: f64, vb: f64) {
        self.edges.push((a, b, t, (-0.25 * beta * (vb - va)).exp()));
    }
}

#[derive(Debug, Clone)]
pub enum Operator {
    Tridiagonal(SymTridiagonal),
    Banded(SymBanded),
}

impl DiscreteProblem {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn to_banded(&self) -> SymBanded {
        match &self.matrix {
            Operator::Banded(b) => b.clone(),
            Operator::Tridiagonal(t) => {
                let n = t.len();
                let mut b = SymBanded::zeros(n, 1);
                for i in 0..n {
                    b.set(i, i, t.diag[i]);
                    if i > 0 {
                        b.set(i, i - 1, t.off[i - 1]);
                    }
                }
                b
            }
        }
    }
}

/// Grid eigensolver bound to a potential, with the basin membership of
/// nodes cached across grids and temperatures.
pub struct GridSolver<'a> {
    pub model: &'a PotentialModel,
    pub catalog: Option<&'a CriticalCatalog>,
    basin_cache: Mutex<HashMap<Vec<u64>, bool>>,
}

fn edge_weight(beta: f64, h: f64, v_mid: f64, v_ref: f64) -> f64 {
    (-beta * (v_mid - v_ref)).exp() / (beta * h * h)
}

impl<'a> GridSolver<'a> {
    pub fn new(model: &'a PotentialModel, catalog: Option<&'a CriticalCatalog>) -> Self {
        Self { model, catalog, basin_cache: Mutex::new(HashMap::new()) }
    }

    fn in_basin(&self, x: &[f64], reference: usize) -> Result<bool> {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(v) = self.basin_cache.lock().expect("cache lock").get(&key) {
            return Ok(*v);
        }
        let catalog = self
            .catalog
            .ok_or_else(|| Error::InvalidArgument("basin-restricted region needs a critical catalog".into()))?;
        let inside = matches!(flow_to_minimum(self.model, catalog, x, &FlowOptions::default()), Ok(m) if m == reference);
        self.basin_cache.lock().expect("cache lock").insert(key, inside);
        Ok(inside)
    }

    fn check_cuts(&self, domain: &DomainSpec, beta: f64, spacing: &[f64]) -> Result<()> {
        let d = domain.dim();
        for c in &domain.cuts {
            if c.point.len() != d || c.normal.len() != d {
                return Err(Error::InvalidArgument("cut dimension mismatch".into()));
            }
            if c.alpha == f64::NEG_INFINITY || c.alpha.is_nan() {
                return Err(Error::InvalidArgument("cut offsets must lie in (-inf, +inf]".into()));
            }
            if let (Some(nu), true) = (c.nu1, c.alpha.is_finite()) {
                let scale = (beta * nu.abs()).powf(-0.5);
                let h = spacing.iter().copied().fold(0.0, f64::max);
                if 3.0 * h > scale {
                    return Err(Error::UnresolvedCut {
                        index: c.index,
                        detail: format!("spacing {h:.3e} leaves fewer than 3 nodes across the saddle scale {scale:.3e}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Effective bounds: box bounds clipped by axis-aligned cuts, so the grid
    /// is fitted to those cuts instead of masking them.
    fn fitted_bounds(domain: &DomainSpec, beta: f64) -> Vec<[f64; 2]> {
        let mut b = domain.region.bounds().to_vec();
        for c in &domain.cuts {
            if !c.alpha.is_finite() {
                continue;
            }
            if let Some((k, s)) = c.axis() {
                let edge = c.point[k] + c.offset(beta) / s;
                if s > 0.0 {
                    b[k][1] = b[k][1].min(edge);
                } else {
                    b[k][0] = b[k][0].max(edge);
                }
            }
        }
        b
    }

    fn intervals(domain: &DomainSpec, bounds: &[[f64; 2]], refine: usize) -> Result<Vec<usize>> {
        let base: Vec<usize> = match &domain.grid {
            Grid::Intervals(n) => {
                if n.len() != bounds.len() {
                    return Err(Error::InvalidArgument("grid intervals must match the dimension".into()));
                }
                n.clone()
            }
            Grid::Spacing(h) => bounds.iter().map(|[lo, hi]| (((hi - lo) / h).round() as usize).max(2)).collect(),
        };
        Ok(base.into_iter().map(|n| n * refine).collect())
    }

    /// Assembles the symmetric problem at inverse temperature `beta` on the
    /// grid refined `refine` times relative to the domain's coarse grid.
    pub fn build_problem(&self, domain: &DomainSpec, beta: f64, refine: usize) -> Result<DiscreteProblem> {
        let d = domain.dim();
        if d != self.model.dim() {
            return Err(Error::InvalidArgument("domain and potential dimensions differ".into()));
        }
        if !(beta > 0.0) {
            return Err(Error::InvalidArgument("beta must be positive".into()));
        }
        let bounds = Self::fitted_bounds(domain, beta);
        if bounds.iter().any(|[lo, hi]| !(lo < hi)) {
            return Err(Error::EmptyDomain);
        }
        let n = Self::intervals(domain, &bounds, refine)?;
        let h: Vec<f64> = bounds.iter().zip(&n).map(|([lo, hi], k)| (hi - lo) / *k as f64).collect();
        self.check_cuts(domain, beta, &h)?;
        match d {
            1 => self.build_1d(domain, beta, bounds[0], n[0], h[0]),
            2 => self.build_2d(domain, beta, &bounds, &n, &h),
            _ => Err(Error::InvalidArgument("grid solver supports d ∈ {1, 2}".into())),
        }
    }

    fn inside(&self, domain: &DomainSpec, x: &[f64], beta: f64) -> Result<bool> {
        if !domain.cuts.iter().all(|c| c.admits(x, beta)) {
            return Ok(false);
        }
        match &domain.region {
            Region::Box { .. } => Ok(true),
            Region::SublevelBasin { level, reference, .. } => {
                Ok(self.model.energy(x) < *level && self.in_basin(x, *reference)?)
            }
        }
    }

    fn build_1d(&self, domain: &DomainSpec, beta: f64, [lo, _]: [f64; 2], n: usize, h: f64) -> Result<DiscreteProblem> {
        let xs: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
        let mut active = vec![false; n + 1];
        for i in 1..n {
            // fitted cuts sit exactly on the end nodes; masks handle the rest
            active[i] = self.inside(domain, &[xs[i]], beta)?;
        }
        let v: Vec<f64> = xs.iter().map(|x| self.model.energy(&[*x])).collect();
        let vm: Vec<f64> = (0..n).map(|i| self.model.energy(&[0.5 * (xs[i] + xs[i + 1])])).collect();
        let idx: Vec<usize> = (0..=n).filter(|&i| active[i]).collect();
        if idx.is_empty() {
            return Err(Error::EmptyDomain);
        }
        if idx.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::InvalidArgument("1-D domain must be a single interval".into()));
        }
        let diag: Vec<f64> = idx
            .iter()
            .map(|&i| edge_weight(beta, h, vm[i - 1], v[i]) + edge_weight(beta, h, vm[i], v[i]))
            .collect();
        let off: Vec<f64> = idx
            .windows(2)
            .map(|w| -edge_weight(beta, h, vm[w[0]], 0.5 * (v[w[0]] + v[w[1]])))
            .collect();
        let mut form = EdgeForm::default();
        for (a, w) in idx.windows(2).enumerate() {
            form.push_edge(beta, a, a + 1, -off[a], v[w[0]], v[w[1]]);
        }
        let (first, last) = (idx[0], idx[idx.len() - 1]);
        form.boundary.push((0, edge_weight(beta, h, vm[first - 1], v[first])));
        form.boundary.push((idx.len() - 1, edge_weight(beta, h, vm[last], v[last])));
        let v_ref = idx.iter().map(|&i| v[i]).fold(f64::INFINITY, f64::min);
        let cond = |vmid: f64| (-beta * (vmid - v_ref)).max(-700.0).exp() / (beta * h * h);
        let chain = Chain {
            conductance: idx[..idx.len() - 1].iter().map(|&i| cond(vm[i])).collect(),
            ends: [cond(vm[first - 1]), cond(vm[last])],
            weight: idx.iter().map(|&i| (-beta * (v[i] - v_ref)).max(-700.0).exp()).collect(),
        };
        Ok(DiscreteProblem {
            beta,
            spacing: vec![h],
            nodes: idx.iter().map(|&i| vec![xs[i]]).collect(),
            matrix: Operator::Tridiagonal(SymTridiagonal::new(diag, off)),
            form,
            chain: Some(chain),
        })
    }

    fn build_2d(&self, domain: &DomainSpec, beta: f64, bounds: &[[f64; 2]], n: &[usize], h: &[f64]) -> Result<DiscreteProblem> {
        let (nx, ny) = (n[0] + 1, n[1] + 1);
        if nx > MAX_NODES_2D + 1 || ny > MAX_NODES_2D + 1 {
            return Err(Error::InvalidArgument(format!("2-D grid {nx}x{ny} exceeds the {MAX_NODES_2D}x{MAX_NODES_2D} cap")));
        }
        let coord = |i: usize, j: usize| [bounds[0][0] + i as f64 * h[0], bounds[1][0] + j as f64 * h[1]];
        let flags: Vec<bool> = (0..nx * ny)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k % nx, k / nx);
                if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                    return Ok(false);
                }
                self.inside(domain, &coord(i, j), beta)
            })
            .collect::<Result<_>>()?;
        let mut number = vec![usize::MAX; nx * ny];
        let mut nodes = Vec::new();
        for k in 0..nx * ny {
            if flags[k] {
                number[k] = nodes.len();
                let c = coord(k % nx, k / nx);
                nodes.push(c.to_vec());
            }
        }
        if nodes.is_empty() {
            return Err(Error::EmptyDomain);
        }
        let energy: Vec<f64> = (0..nx * ny).into_par_iter().map(|k| self.model.energy(&coord(k % nx, k / nx))).collect();
        let mut bw = 0;
        for k in 0..nx * ny {
            if flags[k] && k + nx < nx * ny && flags[k + nx] {
                bw = bw.max(number[k + nx] - number[k]);
            }
        }
        let mut a = SymBanded::zeros(nodes.len(), bw.max(1));
        let mut form = EdgeForm::default();
        for k in 0..nx * ny {
            if !flags[k] {
                continue;
            }
            let (i, j) = (k % nx, k / nx);
            let p = coord(i, j);
            let mut diag = 0.0;
            let neighbours = [(k - 1, 0usize, -1.0), (k + 1, 0, 1.0), (k - nx, 1, -1.0), (k + nx, 1, 1.0)];
            for (m, axis, dir) in neighbours {
                let mut mid = p;
                mid[axis] += 0.5 * dir * h[axis];
                let vm = self.model.energy(&mid);
                let c = edge_weight(beta, h[axis], vm, energy[k]);
                diag += c;
                if !flags[m] {
                    form.boundary.push((number[k], c));
                } else if m < k {
                    let t = edge_weight(beta, h[axis], vm, 0.5 * (energy[k] + energy[m]));
                    a.set(number[k], number[m], -t);
                    form.push_edge(beta, number[k], number[m], t, energy[k], energy[m]);
                }
            }
            a.set(number[k], number[k], diag);
        }
        Ok(DiscreteProblem { beta, spacing: h.to_vec(), nodes, matrix: Operator::Banded(a), form, chain: None })
    }
}

/// Eigenvalues and, when requested, weighted-orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct DiscreteSpectrum {
    pub values: Vec<f64>,
    pub vectors: Option<Vec<Vec<f64>>>,
}

/// Principal eigenvalue and symmetrized eigenvector by inverse iteration,
/// with the eigenvalue taken as a cancellation-free Rayleigh quotient.
pub fn ground_state(problem: &DiscreteProblem) -> Result<(f64, Vec<f64>)> {
    if let Some(chain) = &problem.chain {
        let (lambda, u) = chain.ground_state()?;
        let mut w: Vec<f64> = u.iter().zip(&chain.weight).map(|(v, m)| v * m.sqrt()).collect();
        let nrm = crate::linalg::norm(&w);
        w.iter_mut().for_each(|v| *v /= nrm);
        return Ok((lambda, w));
    }
    let chol = problem.to_banded().cholesky()?;
    let n = problem.len();
    let mut w = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = problem.form.energy(&w);
    for it in 0..200 {
        chol.solve_in_place(&mut w);
        let nrm = crate::linalg::norm(&w);
        w.iter_mut().for_each(|v| *v /= nrm);
        let next = problem.form.energy(&w);
        let done = lambda - next <= 1e-12 * next;
        lambda = next;
        if done && it > 1 {
            return Ok((lambda, w));
        }
    }
    Err(Error::NoConvergence(200))
}

/// `k ≤ 6` smallest eigenvalues of the discrete problem.
pub fn smallest_eigs(problem: &DiscreteProblem, k: usize, with_vectors: bool) -> Result<DiscreteSpectrum> {
    if k == 0 || k > 6 {
        return Err(Error::InvalidArgument("k must lie in 1..=6".into()));
    }
    if k > problem.len() {
        return Err(Error::InvalidArgument(format!("only {} active nodes for k = {k}", problem.len())));
    }
    match (&problem.matrix, with_vectors) {
        (Operator::Tridiagonal(t), false) => {
            let mut values: Vec<f64> = (0..k).map(|j| t.eigenvalue(j)).collect();
            values[0] = ground_state(problem)?.0;
            Ok(DiscreteSpectrum { values, vectors: None })
        }
        _ => {
            let mut pairs = inverse_subspace_iteration(&problem.to_banded(), k, 0.0, 1e-10, 100_000, 17)?;
            pairs.values[0] = ground_state(problem)?.0;
            Ok(DiscreteSpectrum { values: pairs.values, vectors: with_vectors.then_some(pairs.vectors) })
        }
    }
}

/// Two-resolution estimate with Richardson extrapolation in `h²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub beta: f64,
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
    pub values: Vec<f64>,
    pub error_bars: Vec<f64>,
    pub fine_spacing: Vec<f64>,
    pub active_nodes: usize,
}

impl GridSolver<'_> {
    pub fn spectrum(&self, domain: &DomainSpec, beta: f64, k: usize) -> Result<SpectrumEstimate> {
        let coarse_p = self.build_problem(domain, beta, 1)?;
        let fine_p = self.build_problem(domain, beta, 2)?;
        let coarse = smallest_eigs(&coarse_p, k, false)?.values;
        let fine = smallest_eigs(&fine_p, k, false)?.values;
        let values: Vec<f64> = coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect();
        let error_bars = coarse.iter().zip(&fine).map(|(c, f)| (f - c).abs() / 3.0).collect();
        Ok(SpectrumEstimate {
            beta,
            coarse,
            fine,
            values,
            error_bars,
            fine_spacing: fine_p.spacing.clone(),
            active_nodes: fine_p.len(),
        })
    }

    /// Spectra over increasing `betas`, with the domain rebuilt per `β`.
    pub fn sweep_beta<F>(&self, domain_at: F, betas: &[f64], k: usize) -> Result<Vec<SpectrumEstimate>>
    where
        F: Fn(f64) -> DomainSpec + Sync,
    {
        if betas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("betas must be increasing".into()));
        }
        betas.par_iter().map(|&b| self.spectrum(&domain_at(b), b, k)).collect()
    }
}

/// Least-squares fit `y ≈ Σ c_j s^{p_j}` in `s = 1/√β`; returns the
/// coefficients in the order of `powers`.
pub fn fit_inverse_sqrt_beta(betas: &[f64], y: &[f64], powers: &[i32]) -> Vec<f64> {
    let s: Vec<f64> = betas.iter().map(|b| 1.0 / b.sqrt()).collect();
    let a = nalgebra::DMatrix::from_fn(s.len(), powers.len(), |i, j| s[i].powi(powers[j]));
    let rhs = nalgebra::DVector::from_column_slice(y);
    let c = a.svd(true, true).solve(&rhs, 1e-14).expect("least-squares solve");
    c.iter().copied().collect()
}

/// Limit of `λ₁ e^{βΔV}` with only the leading error term of the regime:
/// `1/β` far from the boundary, `1/√β` at a finite offset.
pub fn extrapolate_prefactor(betas: &[f64], scaled: &[f64], regime: ErrorRegime) -> f64 {
    let powers: &[i32] = match regime {
        ErrorRegime::FarBoundary => &[0, 2],
        ErrorRegime::NearBoundary => &[0, 1],
    };
    fit_inverse_sqrt_beta(betas, scaled, powers)[0]
}

/// Discretized Witten form `β⁻¹(-Δ + β²|V'|²/4 - βV''/2)` in 1-D with
/// Dirichlet ends at `lo` and `hi`; its eigenvalues approximate the same
/// spectrum by unitary equivalence.
pub fn witten_eigenvalues_1d(model: &PotentialModel, lo: f64, hi: f64, n: usize, beta: f64, k: usize) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    let diag: Vec<f64> = (1..n)
        .map(|i| {
            let x = [lo + i as f64 * h];
            let g = model.gradient(&x)[0];
            let lap = model.hessian(&x)[(0, 0)];
            (2.0 / (h * h) + 0.25 * beta * beta * g * g - 0.5 * beta * lap) / beta
        })
        .collect();
    let off = vec![-1.0 / (beta * h * h); n - 2];
    let t = SymTridiagonal::new(diag, off);
    (0..k).map(|j| t.eigenvalue(j)).collect()
}
