//! Special functions for binomial tails, evaluated without overflow.

use crate::scalar::{CompensatedSum, Real};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma<T: Real>(x: T) -> T {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < T::lit(0.5) {
        // reflection
        let pi = T::pi();
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::lit(COEF[0]);
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += T::lit(*c) / (x + T::from_usize_lossy(i));
    }
    let t = x + T::lit(G + 0.5);
    T::lit(LN_SQRT_2PI) + (x + T::lit(0.5)) * t.ln() - t + acc.ln()
}

/// `ln C(n, k)`. Small `min(k, n−k)` is summed exactly term by term; larger
/// ones go through `ln Γ`.
pub fn ln_binomial<T: Real>(n: usize, k: usize) -> T {
    assert!(k <= n, "ln_binomial requires k <= n");
    let k = k.min(n - k);
    if k <= 64 {
        let mut acc = CompensatedSum::new();
        for i in 1..=k {
            acc.add((T::from_usize_lossy(n - k + i) / T::from_usize_lossy(i)).ln());
        }
        acc.value()
    } else {
        let f = |v: usize| ln_gamma(T::from_usize_lossy(v) + T::one());
        f(n) - f(k) - f(n - k)
    }
}

/// Error of Stirling's formula, `ln n! − ln(√(2πn) (n/e)ⁿ)`, for integer `n`.
fn stirling_error<T: Real>(n: usize) -> T {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        if n == 0 {
            return T::zero();
        }
        // ln n! summed exactly enough for n ≤ 15
        let nf = T::from_usize_lossy(n);
        let mut ln_fact = T::zero();
        for i in 2..=n {
            ln_fact += T::from_usize_lossy(i).ln();
        }
        return ln_fact - (nf + T::lit(0.5)) * nf.ln() + nf - T::lit(LN_SQRT_2PI);
    }
    let nf = T::from_usize_lossy(n);
    let nn = nf * nf;
    let s = |v: f64| T::lit(v);
    if n > 500 {
        (s(S0) - s(S1) / nn) / nf
    } else if n > 80 {
        (s(S0) - (s(S1) - s(S2) / nn) / nn) / nf
    } else if n > 35 {
        (s(S0) - (s(S1) - (s(S2) - s(S3) / nn) / nn) / nn) / nf
    } else {
        (s(S0) - (s(S1) - (s(S2) - (s(S3) - s(S4) / nn) / nn) / nn) / nn) / nf
    }
}

/// Deviance term `x ln(x/np) + np − x`, stable when `x ≈ np`.
fn deviance<T: Real>(x: T, np: T) -> T {
    if (x - np).abs() < T::lit(0.1) * (x + np) {
        let v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = T::lit(2.0) * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let s1 = s + ej / T::from_usize_lossy(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// `ln[C(n, x) pˣ (1−p)ⁿ⁻ˣ]` via the saddle-point expansion; accurate to a
/// few ulps relative even where the probability underflows.
pub fn ln_binomial_pmf<T: Real>(x: usize, n: usize, p: T) -> T {
    debug_assert!(x <= n);
    let q = T::one() - p;
    if p == T::zero() {
        return if x == 0 { T::zero() } else { T::lit(f64::NEG_INFINITY) };
    }
    if q == T::zero() {
        return if x == n { T::zero() } else { T::lit(f64::NEG_INFINITY) };
    }
    let nf = T::from_usize_lossy(n);
    if x == 0 {
        if n == 0 {
            return T::zero();
        }
        return if p < T::lit(0.1) {
            -deviance(nf, nf * q) - nf * p
        } else {
            nf * (-p).ln_1p()
        };
    }
    if x == n {
        return if q < T::lit(0.1) {
            -deviance(nf, nf * p) - nf * q
        } else {
            nf * p.ln()
        };
    }
    let xf = T::from_usize_lossy(x);
    let yf = T::from_usize_lossy(n - x);
    let lc = stirling_error::<T>(n)
        - stirling_error::<T>(x)
        - stirling_error::<T>(n - x)
        - deviance(xf, nf * p)
        - deviance(yf, nf * q);
    let lf = T::two_pi().ln() + xf.ln() + (-xf / nf).ln_1p();
    lc - T::lit(0.5) * lf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_binomial(n: u64, k: u64) -> f64 {
        let mut c: u128 = 1;
        for i in 0..k {
            c = c * u128::from(n - i) / u128::from(i + 1);
        }
        c as f64
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0f64;
        for n in 1..25u32 {
            fact *= f64::from(n);
            let got = ln_gamma(f64::from(n) + 1.0);
            assert!((got - fact.ln()).abs() < 1e-12 * fact.ln().max(1.0), "n={n}");
        }
        assert!((ln_gamma(0.5f64) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn ln_binomial_small_and_large() {
        for n in 0..60u64 {
            for k in 0..=n {
                let got: f64 = ln_binomial(n as usize, k as usize);
                let want = exact_binomial(n, k).ln();
                assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "C({n},{k})");
            }
        }
        let got: f64 = ln_binomial(1000, 500);
        let via_gamma = ln_gamma(1001.0f64) - 2.0 * ln_gamma(501.0f64);
        assert!((got - via_gamma).abs() < 1e-9);
    }

    #[test]
    fn pmf_matches_direct_evaluation() {
        for n in [1usize, 2, 7, 19, 30] {
            for &p in &[0.01, 0.1, 0.37, 0.5, 0.93] {
                for x in 0..=n {
                    let direct = exact_binomial(n as u64, x as u64) * f64::powi(p, x as i32) * (1.0f64 - p).powi((n - x) as i32);
                    let got = ln_binomial_pmf(x, n, p).exp();
                    assert!((got - direct).abs() <= 1e-14 + 1e-12 * direct, "n={n} x={x} p={p}: {got} vs {direct}");
                }
            }
        }
    }

    #[test]
    fn pmf_in_log_space_survives_underflow() {
        let lp: f64 = ln_binomial_pmf(0, 100_000, 0.5);
        assert!((lp - 100_000.0 * 0.5f64.ln()).abs() < 1e-8);
    }
}
