//! Config files and flag values.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use metastab::fdsolver::{Cut, DomainSpec, Grid, Region};
use metastab::harmonic::{extended_reals, AlphaVector};
use metastab::potential::{classify_saddles, find_critical_points, ClassifyOptions, CriticalCatalog, PotentialModel, SearchOptions, Seeds};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Potential config. `analyze` writes the same shape back with `catalog`
/// filled in, and every command accepts either form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: PotentialModel,
    /// Point whose nearest minimum becomes `z₀`; default is the lowest minimum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Seeds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_override: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<CriticalCatalog>,
}

/// Reads JSON, reporting line, column and field path on failure.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        anyhow!("{}: field `{field}`: {}", path.display(), e.into_inner())
    })
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let mut c: Config = read_json(path)?;
        let m = c.model;
        c.model = PotentialModel::new(m.name, m.family, m.search_box).with_context(|| format!("{}: field `model`", path.display()))?;
        Ok(c)
    }

    /// The stored catalog, or a fresh search and classification.
    pub fn catalog(&self) -> Result<CriticalCatalog> {
        if let Some(c) = &self.catalog {
            if c.reference.is_none() {
                bail!("stored catalog has no reference minimum");
            }
            return Ok(c.clone());
        }
        let seeds = self.seeds.clone().unwrap_or(Seeds::Grid(if self.model.dim() == 1 { 41 } else { 15 }));
        let raw = find_critical_points(&self.model, &seeds, &SearchOptions::default())?;
        let z0 = match &self.reference {
            Some(x) => raw.nearest_minimum(x),
            None => raw.minima().next().map(|(i, _)| i),
        }
        .ok_or_else(|| anyhow!("no local minimum found in the search box"))?;
        let opts = ClassifyOptions { x_override: self.x_override.clone(), ..Default::default() };
        Ok(classify_saddles(&self.model, &raw, z0, &opts)?)
    }
}

pub fn parse_extended(s: &str) -> Result<f64, String> {
    extended_reals::parse(s).ok_or_else(|| format!("expected a number, inf or -inf, got {s:?}"))
}

/// `--alpha` is a scalar, an inline JSON array, or a JSON file holding an
/// array. A scalar goes to the lowest separating saddles; `z₀` and the
/// non-separating low points are far (`inf`) and all other points excluded.
pub fn resolve_alpha(arg: &str, catalog: &CriticalCatalog) -> Result<AlphaVector> {
    if let Some(a) = extended_reals::parse(arg) {
        let z0 = catalog.reference.ok_or_else(|| anyhow!("catalog has no reference minimum"))?;
        let mut v = AlphaVector(vec![f64::NEG_INFINITY; catalog.len()]);
        v.0[z0] = f64::INFINITY;
        for &i in &catalog.x_set {
            v.0[i] = f64::INFINITY;
        }
        for &i in &catalog.i_min {
            v.0[i] = a;
        }
        return Ok(v);
    }
    let v: AlphaVector = if arg.trim_start().starts_with('[') {
        serde_json::from_str(arg).map_err(|e| anyhow!("--alpha: {e}"))?
    } else {
        read_json(Path::new(arg))?
    };
    v.check_complete(catalog)?;
    Ok(v)
}

/// Potentials with a vanishing gradient on a probe grid of the search box.
pub fn is_flat(model: &PotentialModel) -> bool {
    let d = model.dim();
    let n = 7usize;
    (0..n.pow(d as u32)).all(|mut c| {
        let x: Vec<f64> = model
            .search_box
            .iter()
            .map(|[lo, hi]| {
                let j = c % n;
                c /= n;
                lo + (hi - lo) * (j as f64 + 0.5) / n as f64
            })
            .collect();
        model.gradient(&x).iter().all(|g| g.abs() < 1e-14)
    })
}

pub fn default_intervals(dim: usize) -> Vec<usize> {
    if dim == 1 {
        vec![2000]
    } else {
        vec![100; dim]
    }
}

/// Distance from saddle `i` to the closest minimum other than `z₀`.
fn far_cut_distance(catalog: &CriticalCatalog, i: usize) -> Option<f64> {
    let z0 = catalog.reference?;
    let s = &catalog.points[i].position;
    catalog
        .minima()
        .filter(|(j, _)| *j != z0)
        .map(|(_, p)| p.position.iter().zip(s).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .min_by(f64::total_cmp)
}

/// Box of the search region with a cut at every lowest separating saddle.
/// Finite offsets sit at `α/√β`; a far saddle (`α = inf`) is cut at 70% of
/// the way to the next minimum so that the other well stays outside.
pub fn auto_domain(model: &PotentialModel, catalog: &CriticalCatalog, alpha: &AlphaVector, beta: f64, intervals: &[usize]) -> DomainSpec {
    let cuts = catalog
        .i_min
        .iter()
        .map(|&i| {
            let s = &catalog.points[i];
            let mut a = alpha.get(i);
            if a == f64::INFINITY {
                if let Some(d) = far_cut_distance(catalog, i) {
                    a = 0.7 * d * beta.sqrt();
                }
            }
            Cut { point: s.position.clone(), normal: s.eigenvectors[0].clone(), alpha: a, nu1: Some(s.eigenvalues[0].abs()), index: i }
        })
        .collect();
    DomainSpec { region: Region::Box { bounds: model.search_box.clone() }, cuts, grid: Grid::Intervals(intervals.to_vec()) }
}

/// Smallest `k` Dirichlet eigenvalues of `-β⁻¹Δ` on a box.
pub fn box_laplacian(bounds: &[[f64; 2]], beta: f64, k: usize) -> Vec<f64> {
    let mut vals = vec![0.0];
    for [lo, hi] in bounds {
        let w = std::f64::consts::PI / (hi - lo);
        let mut next: Vec<f64> = vals.iter().flat_map(|v| (1..=k).map(move |n| v + (n as f64 * w).powi(2))).collect();
        next.sort_by(f64::total_cmp);
        next.truncate(k);
        vals = next;
    }
    vals.iter().map(|v| v / beta).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplacian_on_a_square() {
        let v = box_laplacian(&[[0.0, std::f64::consts::PI]; 2], 1.0, 4);
        assert_eq!(v.len(), 4);
        for (a, b) in v.iter().zip([2.0, 5.0, 5.0, 8.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((box_laplacian(&[[-1.0, 1.0]], 2.0, 1)[0] - std::f64::consts::PI.powi(2) / 8.0).abs() < 1e-12);
    }

    #[test]
    fn flat_detection() {
        assert!(!is_flat(&PotentialModel::double_well_1d()));
        let m = PotentialModel::new("flat", metastab::potential::Family::Poly1d { coeffs: vec![3.0] }, vec![[0.0, 1.0]]).unwrap();
        assert!(is_flat(&m));
    }

    #[test]
    fn scalar_alpha_layout() {
        let mut c = CriticalCatalog::from_points(vec![]);
        c.points = vec![
            metastab::potential::CriticalPoint::from_hessian_eigenvalues(vec![-1.0], -0.25, vec![2.0]),
            metastab::potential::CriticalPoint::from_hessian_eigenvalues(vec![1.0], -0.25, vec![2.0]),
            metastab::potential::CriticalPoint::from_hessian_eigenvalues(vec![0.0], 0.0, vec![-1.0]),
        ];
        c.reference = Some(0);
        c.i_min = vec![2];
        let a = resolve_alpha("0.5", &c).unwrap();
        assert_eq!(a.0, vec![f64::INFINITY, f64::NEG_INFINITY, 0.5]);
        let b = resolve_alpha(r#"["inf", "-inf", 0.5]"#, &c).unwrap();
        assert_eq!(a, b);
        assert!(resolve_alpha("[1.0]", &c).is_err());
    }
}
