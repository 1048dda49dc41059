//! Globally adaptive Gauss–Kronrod (7/15) quadrature and Halton sequences.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel: `(estimate, |kronrod - gauss|)`.
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 0.0, max_panels: 4000 }
    }
}

/// `∫ f` over `[breaks[0], breaks[last]]`, starting from the panels between
/// consecutive breakpoints and bisecting the worst panel until the summed
/// error estimate meets `max(abs_tol, rel_tol |I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, breaks: &[f64], opts: &QuadOptions) -> Result<(f64, f64)> {
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let (value, err) = gk15(f, w[0], w[1]);
            heap.push(Panel { a: w[0], b: w[1], value, err });
        }
    }
    if heap.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut total: f64 = heap.iter().map(|p| p.value).sum();
    let mut err: f64 = heap.iter().map(|p| p.err).sum();
    for step in 0.. {
        if step % 64 == 0 {
            // resync the running sums against accumulated rounding
            total = heap.iter().map(|p| p.value).sum();
            err = heap.iter().map(|p| p.err).sum();
        }
        if err <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
            return Ok((total, err));
        }
        if heap.len() >= opts.max_panels {
            return Err(Error::ToleranceNotMet(err / total.abs().max(f64::MIN_POSITIVE)));
        }
        let worst = heap.pop().expect("non-empty");
        total -= worst.value;
        err -= worst.err;
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // panel at machine resolution; keep its estimate
            total += worst.value;
            heap.push(Panel { err: 0.0, ..worst });
            continue;
        }
        for (a, b) in [(worst.a, mid), (mid, worst.b)] {
            let (value, e) = gk15(f, a, b);
            total += value;
            err += e;
            heap.push(Panel { a, b, value, err: e });
        }
    }
    unreachable!()
}

/// Radical inverse of `index` in base `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    out
}

pub const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Point `index` of the Halton sequence in `dim ≤ 12` dimensions.
pub fn halton(index: u64, dim: usize, out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate().take(dim) {
        *o = radical_inverse(index, PRIMES[k]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let (v, _) = gk15(&|x: f64| x.powi(10), -1.0, 2.0);
        assert!((v - (2f64.powi(11) + 1.0) / 11.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_sharp_peaks() {
        let lam = 1e4;
        let f = |x: f64| (-lam * x * x / 2.0).exp();
        let (v, _) = integrate(&f, &[-1.0, 1.0], &QuadOptions::default()).unwrap();
        let exact = (2.0 * std::f64::consts::PI / lam).sqrt() * (1.0 - 2.0 * crate::special::phi(-100.0));
        assert!((v - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn halton_is_low_discrepancy() {
        let mut p = [0.0; 2];
        let n = 65_536;
        let mut inside = 0;
        for i in 1..=n {
            halton(i, 2, &mut p);
            if p[0] * p[0] + p[1] * p[1] < 1.0 {
                inside += 1;
            }
        }
        let est = 4.0 * inside as f64 / n as f64;
        assert!((est - std::f64::consts::PI).abs() < 2e-3, "{est}");
        assert_eq!(radical_inverse(6, 2), 0.375);
    }
}
