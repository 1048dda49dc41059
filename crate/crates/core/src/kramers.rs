//! Eyring–Kramers asymptotics for the exit rate from the basin of `z₀`
//! when the domain boundary passes at distance `α/√β` from the saddles.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonic::{assemble, AlphaVector};
use crate::potential::CriticalCatalog;
use crate::special::phi;

/// Order of the relative error term, per saddle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorRegime {
    /// Boundary far from the saddle: `O(β⁻¹ δ⁻²)`.
    FarBoundary,
    /// Boundary at finite offset: `O(√β γ + β⁻¹ δ⁻² + β^{-1/2})`.
    NearBoundary,
}

impl ErrorRegime {
    pub fn describe(self) -> &'static str {
        match self {
            ErrorRegime::FarBoundary => "O(1/(beta delta^2))",
            ErrorRegime::NearBoundary => "O(sqrt(beta) gamma + 1/(beta delta^2) + 1/sqrt(beta))",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleTerm {
    pub point: usize,
    pub nu1_abs: f64,
    #[serde(with = "crate::kramers::ext")]
    pub phi_argument: f64,
    /// `|ν₁| / (2π Φ(√|ν₁| α)) · √(det ∇²V(z₀) / |det ∇²V(zᵢ)|)`.
    pub term: f64,
    pub regime: ErrorRegime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub beta: f64,
    pub barrier: f64,
    pub prefactor: f64,
    pub lambda1: f64,
    pub lambda2_harmonic: f64,
    /// `(λ₂ - λ₁) / λ₁` with `λ₂ ≈ λ₂^H`.
    pub separation: f64,
    pub saddles: Vec<SaddleTerm>,
}

pub(crate) mod ext {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&crate::harmonic::extended_reals::to_repr(*v), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match &v {
            serde_json::Value::Number(n) => n.as_f64().ok_or_else(|| serde::de::Error::custom("bad number")),
            serde_json::Value::String(s) => {
                crate::harmonic::extended_reals::parse(s).ok_or_else(|| serde::de::Error::custom("bad extended real"))
            }
            _ => Err(serde::de::Error::custom("expected number or \"inf\"")),
        }
    }
}

/// Checks the geometric assumptions behind the rate formula.
pub fn check_hypotheses(catalog: &CriticalCatalog, alpha: &AlphaVector) -> Result<()> {
    alpha.check_complete(catalog)?;
    let z0 = catalog.reference.ok_or_else(|| Error::InvalidArgument("catalog has no reference minimum".into()))?;
    if catalog.v_star.is_none() || catalog.i_min.is_empty() {
        return Err(Error::NoSeparatingSaddle);
    }
    if alpha.get(z0) != f64::INFINITY {
        return Err(Error::PreconditionViolated {
            hypothesis: "reference minimum far from the boundary",
            detail: format!("alpha[{z0}] = {}", alpha.get(z0)),
        });
    }
    for (i, _) in catalog.minima() {
        if i != z0 && alpha.get(i) == f64::INFINITY {
            return Err(Error::PreconditionViolated {
                hypothesis: "z0 is the only minimum far from the boundary",
                detail: format!("minimum {i} has alpha = +inf"),
            });
        }
    }
    for &i in &catalog.x_set {
        if alpha.get(i) != f64::INFINITY {
            return Err(Error::PreconditionViolated {
                hypothesis: "non-separating low points far from the boundary",
                detail: format!("point {i} in X has alpha = {}", alpha.get(i)),
            });
        }
    }
    for &i in &catalog.i_min {
        if alpha.get(i) == f64::NEG_INFINITY {
            return Err(Error::PreconditionViolated {
                hypothesis: "lowest saddles inside the domain",
                detail: format!("saddle {i} has alpha = -inf"),
            });
        }
    }
    Ok(())
}

/// Per-saddle prefactor terms; their sum is the prefactor.
pub fn saddle_terms(catalog: &CriticalCatalog, alpha: &AlphaVector) -> Result<Vec<SaddleTerm>> {
    let z0 = catalog.reference_point()?;
    let det0 = z0.hessian_determinant();
    catalog
        .i_min
        .iter()
        .map(|&i| {
            let s = &catalog.points[i];
            let nu1 = s.eigenvalues[0].abs();
            let a = alpha.get(i);
            let arg = if a.is_infinite() { a } else { nu1.sqrt() * a };
            let term = nu1 / (2.0 * PI * phi(arg)) * (det0 / s.hessian_determinant().abs()).sqrt();
            let regime = if a == f64::INFINITY { ErrorRegime::FarBoundary } else { ErrorRegime::NearBoundary };
            Ok(SaddleTerm { point: i, nu1_abs: nu1, phi_argument: arg, term, regime })
        })
        .collect()
}

/// Boundary-corrected Eyring–Kramers asymptotics at inverse temperature `beta`.
pub fn ek_rate(catalog: &CriticalCatalog, alpha: &AlphaVector, beta: f64) -> Result<RateReport> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta = {beta} must be positive")));
    }
    check_hypotheses(catalog, alpha)?;
    let saddles = saddle_terms(catalog, alpha)?;
    let prefactor: f64 = saddles.iter().map(|s| s.term).sum();
    let barrier = catalog.barrier()?;
    let lambda1 = prefactor * (-beta * barrier).exp();
    let spectrum = assemble(catalog, alpha, 2)?;
    let lambda2_harmonic = spectrum.levels.get(1).map_or(f64::INFINITY, |l| l.value);
    Ok(RateReport {
        beta,
        barrier,
        prefactor,
        lambda1,
        lambda2_harmonic,
        separation: (lambda2_harmonic - lambda1) / lambda1,
        saddles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::CriticalPoint;
    use proptest::prelude::*;

    fn double_well() -> CriticalCatalog {
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

    fn alpha(saddle: f64) -> AlphaVector {
        AlphaVector(vec![f64::INFINITY, f64::NEG_INFINITY, saddle])
    }

    #[test]
    fn double_well_rate() {
        let r = ek_rate(&double_well(), &alpha(f64::INFINITY), 20.0).unwrap();
        let classical = 2f64.sqrt() / (2.0 * PI);
        assert!((r.prefactor - classical).abs() < 1e-15);
        assert!((r.lambda1 - (-5f64).exp() * classical).abs() < 1e-15);
        assert!((r.lambda1 - 1.5166e-3).abs() < 1e-6);
        assert_eq!(r.lambda2_harmonic, 1.0);
        assert_eq!(r.saddles[0].regime, ErrorRegime::FarBoundary);

        let cut = ek_rate(&double_well(), &alpha(0.0), 20.0).unwrap();
        assert!((cut.prefactor - 2.0 * classical).abs() < 1e-15);
        assert_eq!(cut.lambda2_harmonic, 2.0);
        assert_eq!(cut.saddles[0].regime, ErrorRegime::NearBoundary);
    }

    #[test]
    fn symmetric_saddles_double_prefactor() {
        let mut c = double_well();
        c.points.push(CriticalPoint::from_hessian_eigenvalues(vec![0.0], 0.0, vec![-1.0]));
        c.i_min = vec![2, 3];
        let a = AlphaVector(vec![f64::INFINITY, f64::NEG_INFINITY, 0.3, 0.3]);
        let two = ek_rate(&c, &a, 5.0).unwrap().prefactor;
        let one = ek_rate(&double_well(), &alpha(0.3), 5.0).unwrap().prefactor;
        assert_eq!(two, 2.0 * one);
    }

    #[test]
    fn hypotheses_are_enforced() {
        let c = double_well();
        let bad = AlphaVector(vec![0.0, f64::NEG_INFINITY, 0.0]);
        assert!(matches!(ek_rate(&c, &bad, 1.0), Err(Error::PreconditionViolated { .. })));
        let bad = AlphaVector::far(3);
        assert!(matches!(ek_rate(&c, &bad, 1.0), Err(Error::PreconditionViolated { .. })));
        let mut x = c.clone();
        x.x_set = vec![1];
        let a = AlphaVector(vec![f64::INFINITY, 1.0, f64::INFINITY]);
        assert!(matches!(ek_rate(&x, &a, 1.0), Err(Error::PreconditionViolated { .. })));
        let mut none = c.clone();
        none.i_min.clear();
        none.v_star = None;
        assert_eq!(ek_rate(&none, &alpha(0.0), 1.0), Err(Error::NoSeparatingSaddle));
    }

    proptest! {
        #[test]
        fn prefactor_is_sum_and_monotone(a in -4.0f64..4.0, d in 0.01f64..3.0, beta in 0.5f64..60.0) {
            let c = double_well();
            let r = ek_rate(&c, &alpha(a), beta).unwrap();
            prop_assert_eq!(r.prefactor, r.saddles.iter().map(|s| s.term).sum::<f64>());
            prop_assert!(r.lambda1 > 0.0);
            let r2 = ek_rate(&c, &alpha(a + d), beta).unwrap();
            prop_assert!(r2.prefactor <= r.prefactor);
            // other entries do not affect the rate
            let other = AlphaVector(vec![f64::INFINITY, a - 3.0, a]);
            prop_assert_eq!(ek_rate(&c, &other, beta).unwrap().lambda1, r.lambda1);
            // ln λ₁ is affine in β with slope -ΔV
            let r3 = ek_rate(&c, &alpha(a), beta + 1.0).unwrap();
            prop_assert!(((r3.lambda1.ln() - r.lambda1.ln()) + 0.25).abs() < 1e-12);
        }
    }
}
