//! Continuous approximation of the expected cloud and ripple trajectories and
//! the Gaussian estimate of the packet error rate built on it.
//!
//! All curves are functions of `x = u/n`, the fraction of users still
//! unresolved, and are normalized by the number of slots `m`:
//!
//! ```text
//! C_h(x) = c_h (1 - x W_h'(1-x) - W_h(1-x))
//! R(x)   = x (sum_h c_h W_h'(1-x) + (n/m) ln x + r)
//! sd(x)  = sqrt(R(x) (1 - R(x)) / m)
//! ```
//!
//! where `W_h` is the generator polynomial of the type-`h` degree
//! distribution and `c_h`, `r` are fitted so the curves match the exact
//! expected cloud and ripple sizes at `x = 1`.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{DegreeSpectrum, SystemConfig};
use crate::numerics::q_function;

/// Denominators of `f_h` below this make the rate zero.
pub const RATE_GUARD: f64 = 1e-15;

/// Rate at which cloud slots enter the ripple, in units of `1/n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RippleRate {
    /// `f_h(x) = x W''(1-x) / (1 - x W'(1-x) - W(1-x))`.
    pub f: f64,
    /// `g_h(x) = f_h(x) / x`, the second-order correction coefficient.
    pub g: f64,
    pub guarded: bool,
}

pub fn ripple_release_rate(spectrum: &DegreeSpectrum, x: f64) -> Result<RippleRate> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(Error::FractionOutOfRange(x));
    }
    let z = 1.0 - x;
    let denom = 1.0 - x * spectrum.derivative(z) - spectrum.eval(z);
    if denom < RATE_GUARD {
        return Ok(RippleRate {
            f: 0.0,
            g: 0.0,
            guarded: true,
        });
    }
    let f = x * spectrum.second_derivative(z) / denom;
    Ok(RippleRate {
        f,
        g: f / x,
        guarded: false,
    })
}

/// Probability that no slot of any type starts in the ripple.
fn no_singleton_probability(config: &SystemConfig, spectra: &[DegreeSpectrum]) -> f64 {
    config
        .slot_types()
        .iter()
        .zip(spectra)
        .map(|(st, s)| (1.0 - s.prob(1)).powi(st.count as i32))
        .product()
}

/// Fitted constants `(c_1..c_k, r)` of a fresh contention period.
pub fn fit_initial_constants(
    config: &SystemConfig,
    spectra: &[DegreeSpectrum],
) -> Result<(Vec<f64>, f64)> {
    let m = config.total_slots();
    if m == 0 {
        return Err(invalid("slots", "the approximation needs at least one slot"));
    }
    if spectra.len() != config.num_types() {
        return Err(invalid("spectra", "one degree distribution per slot type is required"));
    }
    let mf = m as f64;
    let stuck = no_singleton_probability(config, spectra);
    let clouds = config
        .slot_types()
        .iter()
        .map(|st| st.count as f64 / mf * (1.0 - stuck))
        .collect();
    let singles: f64 = config
        .slot_types()
        .iter()
        .zip(spectra)
        .map(|(st, s)| st.count as f64 / mf * s.prob(1))
        .sum();
    let ripple = singles * stuck - (1.0 - stuck) / mf;
    Ok((clouds, ripple))
}

/// Closed-form expected cloud and ripple curves with their fitted constants.
#[derive(Debug, Clone)]
pub struct ApproxCurves {
    users: usize,
    slots: usize,
    cloud_consts: Vec<f64>,
    ripple_const: f64,
    spectra: Vec<DegreeSpectrum>,
}

impl ApproxCurves {
    /// Curves for `users` users over `slots` slots with explicit constants.
    pub fn new(
        users: usize,
        slots: usize,
        spectra: Vec<DegreeSpectrum>,
        cloud_consts: Vec<f64>,
        ripple_const: f64,
    ) -> Result<Self> {
        if users == 0 {
            return Err(invalid("n", "number of users must be positive"));
        }
        if slots == 0 {
            return Err(invalid("slots", "the approximation needs at least one slot"));
        }
        if spectra.len() != cloud_consts.len() {
            return Err(invalid("spectra", "one constant per slot type is required"));
        }
        Ok(Self {
            users,
            slots,
            cloud_consts,
            ripple_const,
            spectra,
        })
    }

    /// Fit for a fresh contention period.
    pub fn fit(config: &SystemConfig, spectra: &[DegreeSpectrum]) -> Result<Self> {
        let (clouds, ripple) = fit_initial_constants(config, spectra)?;
        Self::new(
            config.users(),
            config.total_slots(),
            spectra.to_vec(),
            clouds,
            ripple,
        )
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn cloud_consts(&self) -> &[f64] {
        &self.cloud_consts
    }

    pub fn ripple_const(&self) -> f64 {
        self.ripple_const
    }

    pub fn spectra(&self) -> &[DegreeSpectrum] {
        &self.spectra
    }

    /// Relative overhead `eps = m/n - 1`.
    pub fn overhead(&self) -> f64 {
        self.slots as f64 / self.users as f64 - 1.0
    }

    /// Normalized expected size of cloud `h`.
    pub fn cloud(&self, h: usize, x: f64) -> f64 {
        let s = &self.spectra[h];
        let z = 1.0 - x;
        self.cloud_consts[h] * (1.0 - x * s.derivative(z) - s.eval(z))
    }

    /// Normalized expected ripple size (minus the slot about to be decoded).
    pub fn ripple(&self, x: f64) -> f64 {
        let z = 1.0 - x;
        let pull: f64 = self
            .cloud_consts
            .iter()
            .zip(&self.spectra)
            .map(|(c, s)| c * s.derivative(z))
            .sum();
        x * (pull + self.users as f64 / self.slots as f64 * x.ln() + self.ripple_const)
    }

    /// Normalized ripple standard deviation under the binomial heuristic.
    pub fn ripple_sd(&self, x: f64) -> f64 {
        sd_from_ripple(self.ripple(x), self.slots)
    }

    /// Right-hand sides `(C_h'(x) for each h, R'(x))` of the differential
    /// equations the curves solve.
    pub fn drift(&self, x: f64) -> Result<(Vec<f64>, f64)> {
        let mut dc = Vec::with_capacity(self.spectra.len());
        let mut pull = 0.0;
        for (h, s) in self.spectra.iter().enumerate() {
            let f = ripple_release_rate(s, x)?.f;
            let fc = f * self.cloud(h, x);
            dc.push(fc);
            pull += fc;
        }
        let dr = self.ripple(x) / x - pull + 1.0 / (1.0 + self.overhead());
        Ok((dc, dr))
    }
}

pub(crate) fn sd_from_ripple(rho: f64, slots: usize) -> f64 {
    (rho * (1.0 - rho)).max(0.0).sqrt() / (slots as f64).sqrt()
}

/// `Q(mean / sd)` with the degenerate `sd = 0` cases resolved by sign.
pub(crate) fn stop_probability(mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        q_function(mean / sd)
    } else if mean > 0.0 {
        0.0
    } else if mean < 0.0 {
        1.0
    } else {
        0.5
    }
}

/// Gaussian estimate of the unresolved-user law and the packet error rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerEstimate {
    /// `P_u` estimates for `u = 0..=n`.
    pub pmf: Vec<f64>,
    pub per: f64,
}

impl PerEstimate {
    /// Sum of the estimates, accumulated from `u = n` down to `u = 0`.
    /// Equals one exactly.
    pub fn total(&self) -> f64 {
        self.pmf.iter().rev().sum()
    }
}

/// Descends from `u = n`: decoding stops at `u` with the probability that a
/// Gaussian ripple with the approximate mean and deviation is negative,
/// conditioned on not having stopped before. `P_0` takes the remainder.
pub fn estimate_pmf_and_per(curves: &ApproxCurves) -> PerEstimate {
    let n = curves.users;
    let stops = (1..=n).rev().map(|u| {
        let x = u as f64 / n as f64;
        let mean = curves.ripple(x);
        stop_probability(mean, sd_from_ripple(mean, curves.slots))
    });
    descend(n, stops)
}

/// Builds the estimate from per-stage stop probabilities listed for
/// `u = n, n-1, .., 1`.
pub(crate) fn descend(n: usize, stops: impl Iterator<Item = f64>) -> PerEstimate {
    let mut pmf = vec![0.0; n + 1];
    let mut stopped = 0.0;
    for (u, q) in (1..=n).rev().zip(stops) {
        let p = q * (1.0 - stopped);
        pmf[u] = p;
        stopped += p;
    }
    pmf[0] = 1.0 - stopped;
    let per = pmf
        .iter()
        .enumerate()
        .map(|(u, p)| u as f64 / n as f64 * p)
        .sum();
    PerEstimate { pmf, per }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::departure_probability;
    use crate::model::{build_degree_spectrum, SlotType};

    #[test]
    fn rate_for_pure_degree_two() {
        // W(z) = z^2 gives f(x) = 2x / x^2 = 2/x.
        let s = DegreeSpectrum::from_probs(vec![0.0, 0.0, 1.0]).unwrap();
        for &x in &[0.1, 0.5, 0.9, 1.0] {
            let r = ripple_release_rate(&s, x).unwrap();
            assert!((r.f - 2.0 / x).abs() < 1e-12, "x={x}");
            assert!((r.g - 2.0 / (x * x)).abs() < 1e-11);
        }
        assert!((ripple_release_rate(&s, 0.5).unwrap().f - 4.0).abs() < 1e-14);
    }

    #[test]
    fn rate_guarded_for_empty_slots() {
        let s = DegreeSpectrum::from_probs(vec![1.0, 0.0]).unwrap();
        let r = ripple_release_rate(&s, 0.7).unwrap();
        assert!(r.guarded);
        assert_eq!(r.f, 0.0);
        assert!(ripple_release_rate(&s, 0.0).is_err());
        assert!(ripple_release_rate(&s, 1.5).is_err());
    }

    #[test]
    fn rate_at_start_matches_scaled_departure() {
        let n = 50;
        let s = build_degree_spectrum(n, 2.68 / n as f64).unwrap();
        let f = ripple_release_rate(&s, 1.0).unwrap().f;
        let p = departure_probability(n, &s, n).unwrap().prob;
        assert!(f > 0.0);
        assert!((f - n as f64 * p).abs() < 1.0 / n as f64);
    }

    #[test]
    fn no_singletons_means_zero_constants() {
        let cfg = SystemConfig::new(10, vec![SlotType::new(5, 2.0), SlotType::new(3, 4.0)]).unwrap();
        let spectra = vec![
            DegreeSpectrum::from_probs(vec![0.2, 0.0, 0.8]).unwrap(),
            DegreeSpectrum::from_probs(vec![0.0, 0.0, 0.5, 0.5]).unwrap(),
        ];
        let (c, r) = fit_initial_constants(&cfg, &spectra).unwrap();
        assert_eq!(c, vec![0.0, 0.0]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn certain_singleton_constants() {
        // One slot that is always a singleton: the survival product vanishes.
        let cfg = SystemConfig::single(1, 1, 1.0).unwrap();
        let spectra = cfg.spectra();
        let (c, r) = fit_initial_constants(&cfg, &spectra).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-15);
        // R(n)/m - sum c_h Omega_{h,1} with R(n) = E[r] - 1 + Pr{r = 0} = 0.
        let ripple_at_start = 0.0;
        assert!((r - (ripple_at_start - c[0] * spectra[0].prob(1))).abs() < 1e-15);
        assert!((r + 1.0).abs() < 1e-15);
    }

    #[test]
    fn curves_pass_through_fitted_boundary() {
        let cfg = SystemConfig::new(40, vec![SlotType::new(20, 2.5), SlotType::new(25, 3.0)]).unwrap();
        let spectra = cfg.spectra();
        let curves = ApproxCurves::fit(&cfg, &spectra).unwrap();
        let m = cfg.total_slots() as f64;
        let stuck: f64 = spectra
            .iter()
            .zip(cfg.slot_types())
            .map(|(s, st)| (1.0 - s.prob(1)).powi(st.count as i32))
            .product();
        for (h, st) in cfg.slot_types().iter().enumerate() {
            let closed = st.count as f64 * spectra[h].cloud_probability() * (1.0 - stuck) / m;
            assert!((curves.cloud(h, 1.0) - closed).abs() < 1e-12);
        }
        let singles: f64 = spectra
            .iter()
            .zip(cfg.slot_types())
            .map(|(s, st)| st.count as f64 * s.prob(1))
            .sum();
        assert!((curves.ripple(1.0) - (singles - 1.0 + stuck) / m).abs() < 1e-12);
    }

    #[test]
    fn stop_probability_degenerate_sd() {
        assert_eq!(stop_probability(0.3, 0.0), 0.0);
        assert_eq!(stop_probability(-0.3, 0.0), 1.0);
        assert_eq!(stop_probability(0.0, 0.1), 0.5);
    }

    #[test]
    fn estimate_sums_to_one_and_is_small_for_large_ripple() {
        let curves = ApproxCurves::new(
            20,
            40,
            vec![DegreeSpectrum::from_probs(vec![1.0]).unwrap()],
            vec![0.0],
            1000.0,
        )
        .unwrap();
        // The mean ripple exceeds one slot everywhere, so the deviation
        // heuristic collapses to zero and decoding never stops early.
        let est = estimate_pmf_and_per(&curves);
        assert_eq!(est.total(), 1.0);
        assert_eq!(est.pmf[0], 1.0);
        assert_eq!(est.per, 0.0);
    }

    #[test]
    fn zero_mean_gives_half() {
        let est = descend(3, [0.5, 0.5, 0.5].into_iter());
        assert_eq!(est.pmf, vec![0.125, 0.125, 0.25, 0.5]);
        assert_eq!(est.total(), 1.0);
    }
}
