//! Numerically careful binomial probabilities and the Gaussian tail function.
//!
//! Binomial terms are evaluated in the log domain through the saddle-point
//! decomposition of Loader: `ln n!` is split into Stirling's formula plus the
//! Stirling error `stirlerr(n)`, and the large cancelling parts of
//! `ln C(n, k) + k ln p + (n - k) ln q` are folded into the deviance `bd0`,
//! which is evaluated with a series when its arguments are close. The result
//! keeps close to full relative precision for every term, even for `n` in the
//! tens of thousands where plain `lgamma` differences lose ~1e-11.

use std::f64::consts::PI;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Tail values below this are flushed to zero.
pub const Q_FLUSH: f64 = 1e-300;

/// `ln n! - ln(sqrt(2 pi n) (n/e)^n)` for integer `n >= 1`.
pub fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        // Exact ln n! by summation is accurate to a few ulps here.
        let nf = n as f64;
        let ln_fact: f64 = (2..=n).map(|i| (i as f64).ln()).sum();
        return ln_fact - (nf + 0.5) * nf.ln() + nf - LN_SQRT_2PI;
    }
    let nf = n as f64;
    let nn = nf * nf;
    if n > 500 {
        (S0 - S1 / nn) / nf
    } else if n > 80 {
        (S0 - (S1 - S2 / nn) / nn) / nf
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / nf
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / nf
    }
}

/// Deviance term `x ln(x / np) + np - x`, computed without cancellation
/// when `x` is close to `np`.
pub fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        if s.abs() < f64::MIN_POSITIVE {
            return s;
        }
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / ((2 * j + 1) as f64);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
    }
    x * (x / np).ln() + np - x
}

/// `ln Pr{Bin(n, p) = k}`; `-inf` outside the support.
pub fn ln_binomial_pmf(k: u64, n: u64, p: f64) -> f64 {
    let q = 1.0 - p;
    if k > n {
        return f64::NEG_INFINITY;
    }
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let nf = n as f64;
    if k == 0 {
        if n == 0 {
            return 0.0;
        }
        return if p < 0.1 {
            -bd0(nf, nf * q) - nf * p
        } else {
            nf * q.ln()
        };
    }
    if k == n {
        return if q < 0.1 {
            -bd0(nf, nf * p) - nf * q
        } else {
            nf * p.ln()
        };
    }
    let kf = k as f64;
    let lc = stirlerr(n) - stirlerr(k) - stirlerr(n - k) - bd0(kf, nf * p) - bd0(nf - kf, nf * q);
    let lf = LN_2PI + kf.ln() + (-kf / nf).ln_1p();
    lc - 0.5 * lf
}

/// `Pr{Bin(n, p) = k}`.
pub fn binomial_pmf(k: u64, n: u64, p: f64) -> f64 {
    ln_binomial_pmf(k, n, p).exp()
}

/// All terms `Pr{Bin(n, p) = k}` for `k = 0..=n`.
///
/// The mode is evaluated directly and the remaining terms follow from the
/// ratio recurrence in both directions, so each term costs O(1) and no
/// intermediate under- or overflows.
pub fn binomial_pmf_vec(n: usize, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    if p <= 0.0 {
        out[0] = 1.0;
        return out;
    }
    if p >= 1.0 {
        out[n] = 1.0;
        return out;
    }
    let q = 1.0 - p;
    let odds = p / q;
    let mode = (((n + 1) as f64 * p).floor() as usize).min(n);
    out[mode] = binomial_pmf(mode as u64, n as u64, p);
    for k in mode..n {
        out[k + 1] = out[k] * ((n - k) as f64 / (k + 1) as f64) * odds;
    }
    for k in (1..=mode).rev() {
        out[k - 1] = out[k] * (k as f64 / (n - k + 1) as f64) / odds;
    }
    out
}

/// Tail of the standard normal, `Q(x) = Pr{Z > x}`.
///
/// `Q(+inf) = 0`, `Q(-inf) = 1`; values below [`Q_FLUSH`] are returned as 0.
pub fn q_function(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return 1.0;
    }
    let v = 0.5 * libm::erfc(x / std::f64::consts::SQRT_2);
    if v < Q_FLUSH {
        0.0
    } else {
        v
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln_choose_naive(n: u64, k: u64) -> f64 {
        (1..=k).map(|i| (((n - k + i) as f64) / i as f64).ln()).sum()
    }

    #[test]
    fn stirlerr_matches_reference_table() {
        // Values of ln n! - ln(sqrt(2 pi n)(n/e)^n) from the standard table.
        let table = [
            (1, 0.081_061_466_795_327_26),
            (2, 0.041_340_695_955_409_29),
            (5, 0.016_644_691_189_821_19),
            (10, 0.008_330_563_433_362_871),
            (15, 0.005_554_733_551_962_801),
        ];
        for (n, want) in table {
            assert!((stirlerr(n) - want).abs() < 1e-14, "n={n}");
        }
        // Series branch continues the exact branch smoothly.
        let exact16 = (2..=16u64).map(|i| (i as f64).ln()).sum::<f64>() - 16.5 * 16f64.ln() + 16.0
            - LN_SQRT_2PI;
        assert!((stirlerr(16) - exact16).abs() < 1e-13);
    }

    #[test]
    fn small_binomials_match_direct_formula() {
        for n in 0..30u64 {
            for k in 0..=n {
                for &p in &[0.01, 0.25, 0.5, 0.9] {
                    let direct = (ln_choose_naive(n, k)
                        + k as f64 * f64::ln(p)
                        + (n - k) as f64 * f64::ln(1.0 - p))
                        .exp();
                    let got = binomial_pmf(k, n, p);
                    assert!(
                        (got - direct).abs() <= 1e-13 * direct.max(1e-300),
                        "n={n} k={k} p={p}: {got} vs {direct}"
                    );
                }
            }
        }
    }

    #[test]
    fn pmf_vector_matches_pointwise() {
        for &n in &[0usize, 1, 7, 60, 380] {
            for &p in &[0.0, 1e-3, 0.3, 0.77, 1.0] {
                let v = binomial_pmf_vec(n, p);
                let s: f64 = v.iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "n={n} p={p} sum={s}");
                for (k, &t) in v.iter().enumerate() {
                    let w = binomial_pmf(k as u64, n as u64, p);
                    assert!((t - w).abs() <= 1e-11 * w + 1e-300, "n={n} p={p} k={k}");
                }
            }
        }
    }

    #[test]
    fn n3_half() {
        let v = binomial_pmf_vec(3, 0.5);
        for (got, want) in v.iter().zip([0.125, 0.375, 0.375, 0.125]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn q_function_reference_points() {
        assert_eq!(q_function(0.0), 0.5);
        assert_eq!(q_function(f64::INFINITY), 0.0);
        assert_eq!(q_function(f64::NEG_INFINITY), 1.0);
        assert!((q_function(1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        assert!((q_function(-2.0) - 0.977_249_868_051_820_8).abs() < 1e-15);
        assert!((q_function(5.0) - 2.866_515_718_791_939e-7).abs() < 1e-20);
        assert_eq!(q_function(40.0), 0.0);
    }
}
