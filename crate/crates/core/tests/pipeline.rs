use std::f64::consts::PI;

use metastab::fdsolver::{DomainSpec, Grid, GridSolver, Region};
use metastab::harmonic::AlphaVector;
use metastab::kramers::ek_rate;
use metastab::potential::{classify_saddles, find_critical_points, ClassifyOptions, CriticalCatalog, Family, PotentialModel, SearchOptions, Seeds};
use metastab::qsdmc::{decorrelation_estimate, fleming_viot, SimConfig};

fn double_well_catalog() -> (PotentialModel, CriticalCatalog) {
    let m = PotentialModel::double_well_1d();
    let raw = find_critical_points(&m, &Seeds::Grid(21), &SearchOptions::default()).unwrap();
    let z0 = raw.nearest_minimum(&[-1.0]).unwrap();
    (m.clone(), classify_saddles(&m, &raw, z0, &ClassifyOptions::default()).unwrap())
}

#[test]
fn catalog_survives_json() {
    let (_, cat) = double_well_catalog();
    let text = serde_json::to_string(&cat).unwrap();
    let back: CriticalCatalog = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cat);
    let mut alpha = AlphaVector::far(cat.len());
    alpha.0[cat.points.iter().position(|p| p.position[0] > 0.5).unwrap()] = f64::NEG_INFINITY;
    let a = ek_rate(&cat, &alpha, 20.0).unwrap();
    let b = ek_rate(&back, &alpha, 20.0).unwrap();
    assert_eq!(a, b);
    assert!((a.lambda1 - 1.5166e-3).abs() < 1e-6);
}

#[test]
fn two_dimensional_double_well_rate_trend() {
    // (x² - 1)² + 2y², saddle at the origin with ν = (-4, 4); minima ν = (8, 4)
    let m = PotentialModel::new(
        "dw2",
        Family::Poly2d { coeffs: vec![vec![1.0, 0.0, 2.0], vec![], vec![-2.0], vec![], vec![1.0]] },
        vec![[-2.0, 2.0], [-1.5, 1.5]],
    )
    .unwrap();
    let raw = find_critical_points(&m, &Seeds::Grid(9), &SearchOptions::default()).unwrap();
    let z0 = raw.nearest_minimum(&[-1.0, 0.0]).unwrap();
    let cat = classify_saddles(&m, &raw, z0, &ClassifyOptions::default()).unwrap();
    let mut alpha = AlphaVector::far(cat.len());
    alpha.0[cat.nearest_minimum(&[1.0, 0.0]).unwrap()] = f64::NEG_INFINITY;
    let solver = GridSolver::new(&m, Some(&cat));
    let domain = DomainSpec {
        region: Region::Box { bounds: vec![[-1.9, 0.6], [-1.2, 1.2]] },
        cuts: vec![],
        grid: Grid::Intervals(vec![100, 96]),
    };
    let mut ratio = Vec::new();
    for beta in [3.0, 4.0] {
        let s = solver.spectrum(&domain, beta, 2).unwrap();
        let ek = ek_rate(&cat, &alpha, beta).unwrap();
        assert!(s.values[0] > 0.0 && s.values[0] < s.values[1]);
        ratio.push(s.values[0] / ek.lambda1);
    }
    // λ₁ tracks the Eyring–Kramers rate up to a modest correction
    for r in &ratio {
        assert!((0.6..1.4).contains(r), "{ratio:?}");
    }
}

fn flat_interval(replicas: usize, t_max: f64) -> (PotentialModel, SimConfig) {
    let m = PotentialModel::new("flat", Family::Poly1d { coeffs: vec![0.0] }, vec![[-2.0, 2.0]]).unwrap();
    let cfg = SimConfig {
        beta: 1.0,
        dt: 1e-4,
        domain: DomainSpec { region: Region::Box { bounds: vec![[-1.0, 1.0]] }, cuts: vec![], grid: Grid::Intervals(vec![200]) },
        replicas,
        t_burn: 1.0,
        t_max,
        seed: 17,
    };
    (m, cfg)
}

#[test]
fn decorrelation_rate_on_an_interval() {
    let (m, cfg) = flat_interval(1000, 6.0);
    let qsd = fleming_viot(&m, &cfg, &[0.0]).unwrap();
    let run = SimConfig { replicas: 20_000, t_burn: 0.0, t_max: 1.0, seed: 3, ..cfg };
    let est = decorrelation_estimate(&m, &run, &[0.5], &qsd.occupation, 100).unwrap();
    let gap = PI * PI - PI * PI / 4.0;
    assert!((est.rate / gap - 1.0).abs() < 0.2, "rate {} vs {gap}; {est:?}", est.rate);
    // late times sit at the noise floor
    assert!(*est.tv.last().unwrap() < 4.0 * est.noise_floor);
}
