//! Small statistical toolkit for the Monte Carlo oracle.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Delete-one jackknife of the ratio `Σ num / Σ den` over batches;
/// returns `(estimate, standard error)`.
pub fn jackknife_ratio(num: &[f64], den: &[f64]) -> (f64, f64) {
    let b = num.len();
    let (sn, sd): (f64, f64) = (num.iter().sum(), den.iter().sum());
    let est = sn / sd;
    if b < 2 {
        return (est, f64::NAN);
    }
    let loo: Vec<f64> = (0..b).map(|i| (sn - num[i]) / (sd - den[i])).collect();
    let mean = loo.iter().sum::<f64>() / b as f64;
    let var = (b - 1) as f64 / b as f64 * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (est, var.sqrt())
}

/// Kolmogorov–Smirnov distance between the sample and `Exp(rate)`.
pub fn ks_exponential(samples: &[f64], rate: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = 1.0 - (-rate * t).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of a KS distance `d` on `n` samples.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let t = (sn + 0.12 + 0.11 / sn) * d;
    if t < 0.2 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..200 {
        let term = 2.0 * (-1f64).powi(k as i32 - 1) * (-2.0 * (k * k) as f64 * t * t).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// G-test of independence on a contingency table; returns `(G, dof, p)`.
/// Empty rows and columns are dropped.
pub fn g_test(table: &[Vec<f64>]) -> (f64, usize, f64) {
    let rows: Vec<&Vec<f64>> = table.iter().filter(|r| r.iter().sum::<f64>() > 0.0).collect();
    let ncol = rows.first().map_or(0, |r| r.len());
    let cols: Vec<usize> = (0..ncol).filter(|&j| rows.iter().map(|r| r[j]).sum::<f64>() > 0.0).collect();
    if rows.len() < 2 || cols.len() < 2 {
        return (0.0, 0, 1.0);
    }
    let total: f64 = rows.iter().flat_map(|r| cols.iter().map(move |&j| r[j])).sum();
    let mut g = 0.0;
    for r in &rows {
        let rs: f64 = cols.iter().map(|&j| r[j]).sum();
        for &j in &cols {
            let cs: f64 = rows.iter().map(|q| q[j]).sum();
            let o = r[j];
            if o > 0.0 {
                g += 2.0 * o * (o * total / (rs * cs)).ln();
            }
        }
    }
    let dof = (rows.len() - 1) * (cols.len() - 1);
    let p = 1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(g.max(0.0));
    (g, dof, p)
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, se_b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
    let se = if x.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (a, b, se)
}

/// Linear extrapolation to `h = 0` from estimates at `h₁ ≠ h₂`, with
/// independent standard errors; returns `(value, standard error)`.
pub fn extrapolate_linear(h: [f64; 2], v: [f64; 2], se: [f64; 2]) -> (f64, f64) {
    let w = h[0] / (h[0] - h[1]);
    let value = w * v[1] + (1.0 - w) * v[0];
    let err = ((w * se[1]).powi(2) + ((1.0 - w) * se[0]).powi(2)).sqrt();
    (value, err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jackknife_of_equal_batches() {
        let (e, se) = jackknife_ratio(&[1.0, 1.0, 1.0, 1.0], &[2.0, 2.0, 2.0, 2.0]);
        assert_eq!(e, 0.5);
        assert!(se.abs() < 1e-15);
        let (_, se) = jackknife_ratio(&[1.0, 3.0, 2.0, 2.0], &[2.0; 4]);
        assert!(se > 0.0);
    }

    #[test]
    fn ks_detects_wrong_rate() {
        let n = 2000;
        let exact: Vec<f64> = (0..n).map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln()).collect();
        assert!(ks_exponential(&exact, 1.0) < 1e-3);
        assert!(ks_p_value(ks_exponential(&exact, 1.0), n) > 0.99);
        assert!(ks_p_value(ks_exponential(&exact, 1.3), n) < 1e-6);
    }

    #[test]
    fn g_test_extremes() {
        let (_, dof, p) = g_test(&[vec![50.0, 50.0], vec![50.0, 50.0]]);
        assert_eq!(dof, 1);
        assert!((p - 1.0).abs() < 1e-12);
        let (_, _, p) = g_test(&[vec![90.0, 10.0], vec![10.0, 90.0]]);
        assert!(p < 1e-10);
    }

    #[test]
    fn extrapolation_is_exact_on_lines() {
        let (v, _) = extrapolate_linear([0.02, 0.01], [3.0 + 0.02 * 5.0, 3.0 + 0.01 * 5.0], [0.0, 0.0]);
        assert!((v - 3.0).abs() < 1e-12);
        let (a, b, _) = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
    }
}
