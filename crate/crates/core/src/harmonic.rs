//! Global harmonic spectrum: the union over critical points of the local
//! Dirichlet-oscillator spectra, sorted and labelled.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oscillator::omega;
use crate::potential::{CriticalCatalog, CriticalPoint};

/// Per-critical-point boundary offsets, indexed like the catalog.
///
/// `+∞` places a point far from the boundary. `-∞` removes it from the
/// domain altogether: its local spectrum is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlphaVector(#[serde(with = "extended_reals")] pub Vec<f64>);

impl AlphaVector {
    pub fn far(n: usize) -> Self {
        Self(vec![f64::INFINITY; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn with(mut self, i: usize, alpha: f64) -> Self {
        self.0[i] = alpha;
        self
    }

    pub fn is_excluded(&self, i: usize) -> bool {
        self.0[i] == f64::NEG_INFINITY
    }

    pub fn check_complete(&self, catalog: &CriticalCatalog) -> Result<()> {
        if self.len() != catalog.len() {
            return Err(Error::InvalidArgument(format!(
                "alpha vector has {} entries, catalog has {} critical points",
                self.len(),
                catalog.len()
            )));
        }
        if self.0.iter().any(|a| a.is_nan()) {
            return Err(Error::InvalidArgument("alpha entries must not be NaN".into()));
        }
        Ok(())
    }
}

/// JSON has no infinities: `±∞` round-trip as the strings `"inf"` / `"-inf"`.
pub mod extended_reals {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn to_repr(v: f64) -> serde_json::Value {
        if v == f64::INFINITY {
            "inf".into()
        } else if v == f64::NEG_INFINITY {
            "-inf".into()
        } else {
            v.into()
        }
    }

    pub fn parse(s: &str) -> Option<f64> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
            "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
            other => other.parse().ok().filter(|v: &f64| v.is_finite()),
        }
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| to_repr(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<Repr>::deserialize(d)?;
        raw.into_iter()
            .map(|r| match r {
                Repr::Num(v) => Ok(v),
                Repr::Text(t) => parse(&t).ok_or_else(|| serde::de::Error::custom(format!("bad extended real {t:?}"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicLevel {
    pub value: f64,
    pub point: usize,
    pub multi_index: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSpectrum {
    pub levels: Vec<HarmonicLevel>,
}

impl HarmonicSpectrum {
    pub fn values(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.value).collect()
    }

    /// Number of the first `n` levels carried by critical point `i`.
    pub fn counting(&self, i: usize, n: usize) -> usize {
        self.levels.iter().take(n).filter(|l| l.point == i).count()
    }
}

/// Values closer than this are treated as equal when ordering levels.
const TIE_QUANTUM: f64 = 1e-10;

fn quantize(v: f64) -> i64 {
    (v / TIE_QUANTUM).round() as i64
}

/// Lazily enumerates `λ_local(crit, n, θ)` over multi-indices in increasing
/// order (ties by lexicographic `n`).
struct LocalLevels<'a> {
    crit: &'a CriticalPoint,
    theta: f64,
    omega_memo: HashMap<usize, f64>,
    heap: BinaryHeap<Reverse<(i64, Vec<usize>, OrdF64)>>,
    seen: HashSet<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl<'a> LocalLevels<'a> {
    fn new(crit: &'a CriticalPoint, theta: f64) -> Result<Self> {
        let mut gen = Self { crit, theta, omega_memo: HashMap::new(), heap: BinaryHeap::new(), seen: HashSet::new() };
        gen.push(vec![0; crit.dim()])?;
        Ok(gen)
    }

    fn level(&mut self, n: &[usize]) -> Result<f64> {
        let omega_n = match self.omega_memo.get(&n[0]) {
            Some(v) => *v,
            None => {
                let v = omega(self.crit.eigenvalues[0], n[0], self.theta)?;
                self.omega_memo.insert(n[0], v);
                v
            }
        };
        let mut v = omega_n;
        for (nu, nj) in self.crit.eigenvalues.iter().zip(n).skip(1) {
            v += nu.abs() * (*nj as f64 + 0.5) - 0.5 * nu;
        }
        Ok(v)
    }

    fn push(&mut self, n: Vec<usize>) -> Result<()> {
        if self.seen.insert(n.clone()) {
            let v = self.level(&n)?;
            self.heap.push(Reverse((quantize(v), n, OrdF64(v))));
        }
        Ok(())
    }

    fn peek(&self) -> Option<(i64, &[usize], f64)> {
        self.heap.peek().map(|Reverse((q, n, v))| (*q, n.as_slice(), v.0))
    }

    fn pop(&mut self) -> Result<Option<(f64, Vec<usize>)>> {
        let Some(Reverse((_, n, v))) = self.heap.pop() else {
            return Ok(None);
        };
        for j in 0..n.len() {
            let mut m = n.clone();
            m[j] += 1;
            self.push(m)?;
        }
        Ok(Some((v.0, n)))
    }
}

/// The `k` smallest harmonic levels over all non-excluded critical points.
///
/// Each point's levels are generated lazily in increasing order and merged;
/// ties go to the smaller catalog index, then the lexicographically smaller
/// multi-index.
pub fn assemble(catalog: &CriticalCatalog, alpha: &AlphaVector, k: usize) -> Result<HarmonicSpectrum> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    alpha.check_complete(catalog)?;
    let mut gens = Vec::new();
    for (i, crit) in catalog.points.iter().enumerate() {
        if !alpha.is_excluded(i) {
            gens.push((i, LocalLevels::new(crit, alpha.get(i))?));
        }
    }
    let mut levels = Vec::with_capacity(k);
    while levels.len() < k {
        let best = gens
            .iter()
            .enumerate()
            .filter_map(|(g, (i, gen))| gen.peek().map(|(q, n, _)| (q, *i, n.to_vec(), g)))
            .min();
        let Some((_, point, _, g)) = best else {
            break;
        };
        let (value, multi_index) = gens[g].1.pop()?.expect("peeked level exists");
        levels.push(HarmonicLevel { value, point, multi_index });
    }
    Ok(HarmonicSpectrum { levels })
}

/// Lowest local level `λ_local(crit, 0, θ)`, i.e.
/// `|ν₁| μ_{0,θ√(|ν₁|/2)} - ν₁/2 + Σ_{j≥2} |ν_j| 1{ν_j < 0}`.
pub fn ground_level(crit: &CriticalPoint, theta: f64) -> Result<f64> {
    let mut v = omega(crit.eigenvalues[0], 0, theta)?;
    v += crit.eigenvalues[1..].iter().filter(|nu| **nu < 0.0).map(|nu| nu.abs()).sum::<f64>();
    Ok(v)
}

/// `λ₂^H` in closed form, valid when the lowest state sits at the reference
/// minimum alone: `α⁽⁰⁾ = +∞` and every other included ground level positive.
pub fn lambda2_closed_form(catalog: &CriticalCatalog, alpha: &AlphaVector) -> Result<f64> {
    alpha.check_complete(catalog)?;
    let z0 = catalog.reference.ok_or_else(|| Error::InvalidArgument("catalog has no reference minimum".into()))?;
    if alpha.get(z0) != f64::INFINITY {
        return Err(Error::PatternViolation);
    }
    let own = catalog.points[z0].eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let mut best = own;
    for (i, crit) in catalog.points.iter().enumerate() {
        if i == z0 || alpha.is_excluded(i) {
            continue;
        }
        let g = ground_level(crit, alpha.get(i))?;
        if g <= TIE_QUANTUM {
            return Err(Error::PatternViolation);
        }
        best = best.min(g);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oscillator::lambda_local;
    use proptest::prelude::*;

    /// z₀ = -1, other minimum +1, saddle 0 of `x⁴/4 - x²/2`.
    pub(crate) fn double_well_catalog() -> CriticalCatalog {
        let mut c = CriticalCatalog::from_points(vec![
            CriticalPoint::from_hessian_eigenvalues(vec![-1.0], -0.25, vec![2.0]),
            CriticalPoint::from_hessian_eigenvalues(vec![1.0], -0.25, vec![2.0]),
            CriticalPoint::from_hessian_eigenvalues(vec![0.0], 0.0, vec![-1.0]),
        ]);
        c.reference = Some(0);
        c
    }

    #[test]
    fn double_well_examples() {
        let cat = double_well_catalog();
        let far = AlphaVector::far(3).with(1, f64::NEG_INFINITY);
        let s = assemble(&cat, &far, 2).unwrap();
        assert_eq!(s.values(), vec![0.0, 1.0]);
        assert_eq!((s.levels[0].point, s.levels[1].point), (0, 2));
        assert_eq!(lambda2_closed_form(&cat, &far).unwrap(), 1.0);

        let cut = far.clone().with(2, 0.0);
        let s = assemble(&cat, &cut, 2).unwrap();
        assert_eq!(s.values(), vec![0.0, 2.0]);
        // tie between z₀ (n=1) and the saddle ground state goes to z₀
        assert_eq!(s.levels[1].point, 0);
        assert_eq!(lambda2_closed_form(&cat, &cut).unwrap(), 2.0);

        let s = assemble(&cat, &cut, 3).unwrap();
        assert_eq!(s.levels[2].point, 2);
        assert_eq!(s.counting(0, 3) + s.counting(2, 3), 3);
    }

    #[test]
    fn two_dimensional_example() {
        let mut cat = CriticalCatalog::from_points(vec![
            CriticalPoint::from_hessian_eigenvalues(vec![0.0, 0.0], 0.0, vec![1.0, 3.0]),
            CriticalPoint::from_hessian_eigenvalues(vec![1.0, 0.0], 1.0, vec![-4.0, 2.0]),
        ]);
        cat.reference = Some(0);
        let alpha = AlphaVector::far(2);
        assert_eq!(lambda2_closed_form(&cat, &alpha).unwrap(), 1.0);
        assert_eq!(assemble(&cat, &alpha, 2).unwrap().levels[1].value, 1.0);
    }

    #[test]
    fn pattern_violation_when_second_minimum_is_far() {
        let cat = double_well_catalog();
        assert_eq!(lambda2_closed_form(&cat, &AlphaVector::far(3)), Err(Error::PatternViolation));
        let s = assemble(&cat, &AlphaVector::far(3), 2).unwrap();
        assert_eq!(s.values(), vec![0.0, 0.0]);
        assert_eq!((s.levels[0].point, s.levels[1].point), (0, 1));
    }

    #[test]
    fn json_round_trip_with_infinities() {
        let a = AlphaVector(vec![f64::INFINITY, -0.5, f64::NEG_INFINITY]);
        let text = serde_json::to_string(&a).unwrap();
        assert_eq!(text, r#"["inf",-0.5,"-inf"]"#);
        assert_eq!(serde_json::from_str::<AlphaVector>(&text).unwrap(), a);
    }

    fn arb_catalog() -> impl Strategy<Value = (CriticalCatalog, AlphaVector)> {
        let point = (1usize..=3, 0usize..=2, prop::collection::vec(0.3f64..4.0, 3), prop_oneof![Just(f64::INFINITY), -1.5f64..2.5]);
        (prop::collection::vec(0.3f64..4.0, 1..=3), prop::collection::vec(point, 1..=4)).prop_map(|(nu0, others)| {
            let d = nu0.len();
            let mut pts = vec![CriticalPoint::from_hessian_eigenvalues(vec![0.0; d], 0.0, nu0)];
            let mut alpha = vec![f64::INFINITY];
            for (k, (_, index, mags, a)) in others.into_iter().enumerate() {
                let index = index.min(d);
                let nu: Vec<f64> = (0..d).map(|j| if j < index { -mags[j] } else { mags[j] }).collect();
                // other minima need a finite offset for the pattern to hold
                let a = if index == 0 && a.is_infinite() { 0.5 } else { a };
                pts.push(CriticalPoint::from_hessian_eigenvalues(vec![k as f64 + 1.0; d], 1.0, nu));
                alpha.push(a);
            }
            let mut cat = CriticalCatalog::from_points(vec![]);
            cat.points = pts;
            cat.reference = Some(0);
            (cat, AlphaVector(alpha))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn closed_form_agrees_with_assembly((cat, alpha) in arb_catalog()) {
            let closed = lambda2_closed_form(&cat, &alpha).unwrap();
            let s = assemble(&cat, &alpha, 2).unwrap();
            prop_assert!((closed - s.levels[1].value).abs() < 1e-10);
            prop_assert_eq!(s.levels[0].point, 0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn spectrum_invariants((cat, alpha) in arb_catalog(), k in 1usize..12) {
            let s = assemble(&cat, &alpha, k).unwrap();
            prop_assert_eq!(s.levels.len(), k);
            for w in s.levels.windows(2) {
                prop_assert!(w[0].value <= w[1].value + 1e-10);
            }
            for l in &s.levels {
                let direct = lambda_local(&cat.points[l.point], &l.multi_index, alpha.get(l.point)).unwrap();
                prop_assert!((direct - l.value).abs() < 1e-10);
            }
            for n in 0..=k {
                let total: usize = (0..cat.len()).map(|i| s.counting(i, n)).sum();
                prop_assert_eq!(total, n);
            }
        }

        #[test]
        fn raising_alpha_never_raises_levels((cat, alpha) in arb_catalog(), which in 0usize..5, bump in 0.1f64..2.0) {
            let i = which % cat.len();
            let raised = alpha.clone().with(i, alpha.get(i) + bump);
            let a = assemble(&cat, &alpha, 6).unwrap().values();
            let b = assemble(&cat, &raised, 6).unwrap().values();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(*y <= *x + 1e-7);
            }
        }
    }
}
