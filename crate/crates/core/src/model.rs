//! System parameters, slot degree distributions and decoder-state types.

use std::collections::BTreeMap;
use std::fmt;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, invalid, Error, Result};
use crate::numerics::{binomial_pmf, ln_binomial_pmf};

/// Tolerance for the normalization of a degree distribution.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// One class of slots sharing an access probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotType {
    /// Number of slots of this type in the contention period.
    pub count: usize,
    /// Mean slot degree `beta`, the expected number of transmissions per slot.
    pub mean_degree: f64,
}

impl SlotType {
    pub fn new(count: usize, mean_degree: f64) -> Self {
        Self { count, mean_degree }
    }
}

impl fmt::Display for SlotType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.count, self.mean_degree)
    }
}

/// Number of users together with the ordered slot types of a contention period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    users: usize,
    slot_types: Vec<SlotType>,
}

impl SystemConfig {
    pub fn new(users: usize, slot_types: Vec<SlotType>) -> Result<Self> {
        if users == 0 {
            return Err(invalid("n", "number of users must be positive"));
        }
        if slot_types.is_empty() {
            return Err(invalid("slots", "at least one slot type is required"));
        }
        for st in &slot_types {
            let beta = st.mean_degree;
            if !beta.is_finite() || beta < 0.0 {
                return Err(invalid(
                    "slots",
                    format!("mean degree {beta} must be a nonnegative number"),
                ));
            }
            if beta > users as f64 {
                return Err(invalid(
                    "slots",
                    format!("mean degree {beta} exceeds the number of users {users}"),
                ));
            }
        }
        Ok(Self { users, slot_types })
    }

    /// Single slot type with `count` slots of mean degree `beta`.
    pub fn single(users: usize, count: usize, beta: f64) -> Result<Self> {
        Self::new(users, vec![SlotType::new(count, beta)])
    }

    /// Number of users `n`.
    pub fn users(&self) -> usize {
        self.users
    }

    pub fn slot_types(&self) -> &[SlotType] {
        &self.slot_types
    }

    /// Number of slot types `k`.
    pub fn num_types(&self) -> usize {
        self.slot_types.len()
    }

    /// Total number of slots `m`.
    pub fn total_slots(&self) -> usize {
        self.slot_types.iter().map(|s| s.count).sum()
    }

    /// Slot access probability `p_h = beta_h / n`.
    pub fn access_probability(&self, h: usize) -> f64 {
        (self.slot_types[h].mean_degree / self.users as f64).min(1.0)
    }

    /// Degree distribution of every slot type.
    pub fn spectra(&self) -> Vec<DegreeSpectrum> {
        (0..self.num_types())
            .map(|h| DegreeSpectrum::binomial(self.users, self.access_probability(h)))
            .collect()
    }

    /// `slots = 60x2.68, 10x5` style description.
    pub fn slots_string(&self) -> String {
        self.slot_types
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Initial slot degree distribution `Omega_{h,0..n}` of one slot type.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeSpectrum {
    probs: Vec<f64>,
    // (trials, success probability) when the spectrum is exactly binomial;
    // lets evaluation use the closed-form generator polynomial.
    binomial: Option<(usize, f64)>,
}

impl DegreeSpectrum {
    /// Validated spectrum from explicit coefficients.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no coefficients".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidDistribution(format!(
                "coefficient {bad} is negative or not finite"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!(
                "coefficients sum to {total}, not 1"
            )));
        }
        Ok(Self {
            probs,
            binomial: None,
        })
    }

    /// Coefficients that need not sum to one (truncated thinning).
    pub(crate) fn unnormalized(probs: Vec<f64>) -> Self {
        Self {
            probs,
            binomial: None,
        }
    }

    /// `Binomial(n, p)` degree distribution, assuming `p` is in `[0, 1]`.
    pub(crate) fn binomial(n: usize, p: f64) -> Self {
        let probs = (0..=n as u64).map(|j| binomial_pmf(j, n as u64, p)).collect();
        Self {
            probs,
            binomial: Some((n, p)),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `Omega_j`, zero beyond the stored support.
    pub fn prob(&self, j: usize) -> f64 {
        self.probs.get(j).copied().unwrap_or(0.0)
    }

    pub fn max_degree(&self) -> usize {
        self.probs.len() - 1
    }

    /// Total mass; one except for truncated thinning.
    pub fn mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `(trials, p)` when the spectrum is known to be binomial.
    pub fn binomial_params(&self) -> Option<(usize, f64)> {
        self.binomial
    }

    /// Generator polynomial `Omega(x) = sum_j Omega_j x^j`.
    pub fn eval(&self, x: f64) -> f64 {
        if let Some((n, p)) = self.binomial {
            return (1.0 - p + p * x).powi(n as i32);
        }
        self.probs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// First derivative `Omega'(x)`.
    pub fn derivative(&self, x: f64) -> f64 {
        if let Some((n, p)) = self.binomial {
            if n == 0 {
                return 0.0;
            }
            return n as f64 * p * (1.0 - p + p * x).powi(n as i32 - 1);
        }
        self.probs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (j, &c)| acc * x + j as f64 * c)
    }

    /// Second derivative `Omega''(x)`.
    pub fn second_derivative(&self, x: f64) -> f64 {
        if let Some((n, p)) = self.binomial {
            if n < 2 {
                return 0.0;
            }
            let nf = n as f64;
            return nf * (nf - 1.0) * p * p * (1.0 - p + p * x).powi(n as i32 - 2);
        }
        self.probs
            .iter()
            .enumerate()
            .skip(2)
            .rev()
            .fold(0.0, |acc, (j, &c)| acc * x + (j * (j - 1)) as f64 * c)
    }

    /// Horner evaluation of `(Omega, Omega', Omega'')` from the coefficients,
    /// ignoring any closed form.
    pub fn eval_coefficients(&self, x: f64) -> (f64, f64, f64) {
        let plain = Self::unnormalized(self.probs.clone());
        (plain.eval(x), plain.derivative(x), plain.second_derivative(x))
    }

    /// Probability that a slot starts in a cloud, `1 - Omega_0 - Omega_1`.
    pub fn cloud_probability(&self) -> f64 {
        (1.0 - self.prob(0) - self.prob(1)).max(0.0)
    }
}

/// Binomial slot degree distribution for `n` users with access probability `p`.
pub fn build_degree_spectrum(n: usize, p: f64) -> Result<DegreeSpectrum> {
    if n == 0 {
        return Err(invalid("n", "number of users must be positive"));
    }
    check_probability("p", p)?;
    Ok(DegreeSpectrum::binomial(n, p))
}

/// How the outer sum of the thinned degree distribution is bounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThinningMode {
    /// Sum over all `i <= n` active users; always a probability distribution.
    #[default]
    Full,
    /// Truncate the outer sum at `i <= u`, as the printed formula reads.
    /// The result is generally not normalized.
    Truncated,
}

/// Degree distribution of a slot counting only unresolved users.
///
/// A slot sees `I ~ Bin(n, p)` active users, and each active user is
/// unresolved with probability `u/n`. In [`ThinningMode::Full`] the thinned
/// law is again binomial, `Bin(n, p u / n)`, and is built directly.
pub fn thinned_degree_spectrum(
    n: usize,
    p: f64,
    u: usize,
    mode: ThinningMode,
) -> Result<DegreeSpectrum> {
    if n == 0 {
        return Err(invalid("n", "number of users must be positive"));
    }
    check_probability("p", p)?;
    if u > n {
        return Err(Error::StageOutOfRange { stage: u, users: n });
    }
    let keep = u as f64 / n as f64;
    match mode {
        ThinningMode::Full => Ok(DegreeSpectrum::binomial(n, (p * keep).min(1.0))),
        ThinningMode::Truncated => {
            let (n64, u64_) = (n as u64, u as u64);
            let probs = (0..=n64)
                .map(|j| {
                    (j..=u64_)
                        .map(|i| {
                            (ln_binomial_pmf(i, n64, p) + ln_binomial_pmf(j, i, keep)).exp()
                        })
                        .sum()
                })
                .collect();
            Ok(DegreeSpectrum::unnormalized(probs))
        }
    }
}

/// Cardinalities of the clouds and the ripple at one decoding stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DecoderState {
    pub clouds: Vec<usize>,
    pub ripple: usize,
}

impl DecoderState {
    pub fn new(clouds: Vec<usize>, ripple: usize) -> Self {
        Self { clouds, ripple }
    }

    /// Slots still holding undecoded transmissions.
    pub fn occupied(&self) -> usize {
        self.clouds.iter().sum::<usize>() + self.ripple
    }
}

/// Mixed-radix packing of a [`DecoderState`] into a `u64`.
///
/// The ripple occupies the lowest digit with radix `m + 1`; cloud `h` uses
/// radix `m_h + 1`. Moving slots between a cloud and the ripple is then a
/// plain integer offset on the packed key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateCodec {
    ripple_radix: u64,
    cloud_radix: Vec<u64>,
    cloud_stride: Vec<u64>,
}

impl StateCodec {
    /// Codec for cloud capacities `caps` and a ripple of at most `max_ripple`.
    pub fn new(caps: &[usize], max_ripple: usize) -> Result<Self> {
        let ripple_radix = max_ripple as u64 + 1;
        let mut stride = ripple_radix as u128;
        let mut cloud_radix = Vec::with_capacity(caps.len());
        let mut cloud_stride = Vec::with_capacity(caps.len());
        for &c in caps {
            cloud_radix.push(c as u64 + 1);
            cloud_stride.push(stride as u64);
            stride *= c as u128 + 1;
            if stride > u64::MAX as u128 {
                return Err(Error::BudgetExceeded {
                    states: 0,
                    projected: Self::box_size(caps, max_ripple),
                    budget: usize::MAX,
                });
            }
        }
        Ok(Self {
            ripple_radix,
            cloud_radix,
            cloud_stride,
        })
    }

    /// Size of the full coordinate box, saturating.
    pub fn box_size(caps: &[usize], max_ripple: usize) -> u128 {
        caps.iter().fold(max_ripple as u128 + 1, |acc, &c| {
            acc.saturating_mul(c as u128 + 1)
        })
    }

    pub fn num_clouds(&self) -> usize {
        self.cloud_radix.len()
    }

    pub fn encode(&self, state: &DecoderState) -> u64 {
        debug_assert_eq!(state.clouds.len(), self.num_clouds());
        debug_assert!((state.ripple as u64) < self.ripple_radix);
        state
            .clouds
            .iter()
            .zip(&self.cloud_stride)
            .fold(state.ripple as u64, |acc, (&c, &s)| acc + c as u64 * s)
    }

    pub fn decode(&self, key: u64) -> DecoderState {
        DecoderState {
            clouds: (0..self.num_clouds()).map(|h| self.cloud(key, h)).collect(),
            ripple: self.ripple(key),
        }
    }

    #[inline]
    pub fn ripple(&self, key: u64) -> usize {
        (key % self.ripple_radix) as usize
    }

    #[inline]
    pub fn cloud(&self, key: u64, h: usize) -> usize {
        ((key / self.cloud_stride[h]) % self.cloud_radix[h]) as usize
    }

    #[inline]
    pub fn cloud_stride(&self, h: usize) -> u64 {
        self.cloud_stride[h]
    }
}

/// Probability mass over decoder states at stage `u`, plus the mass already
/// absorbed at earlier (larger) stages and any mass dropped by pruning.
#[derive(Debug, Clone)]
pub struct StateDistribution {
    pub(crate) stage: usize,
    pub(crate) codec: StateCodec,
    pub(crate) mass: FxHashMap<u64, f64>,
    pub(crate) absorbed: BTreeMap<usize, f64>,
    pub(crate) lost: f64,
}

impl StateDistribution {
    /// Distribution from explicit `(state, probability)` pairs.
    pub fn from_states(
        stage: usize,
        caps: &[usize],
        max_ripple: usize,
        states: impl IntoIterator<Item = (DecoderState, f64)>,
    ) -> Result<Self> {
        let codec = StateCodec::new(caps, max_ripple)?;
        let mut mass = FxHashMap::default();
        for (s, p) in states {
            if s.clouds.len() != caps.len() {
                return Err(invalid("state", "cloud count does not match slot types"));
            }
            if s.ripple > max_ripple || s.clouds.iter().zip(caps).any(|(c, cap)| c > cap) {
                return Err(invalid("state", format!("{s:?} exceeds the slot budget")));
            }
            *mass.entry(codec.encode(&s)).or_insert(0.0) += p;
        }
        Ok(Self {
            stage,
            codec,
            mass,
            absorbed: BTreeMap::new(),
            lost: 0.0,
        })
    }

    /// Number of unresolved users `u`.
    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn codec(&self) -> &StateCodec {
        &self.codec
    }

    pub fn num_states(&self) -> usize {
        self.mass.len()
    }

    pub fn get(&self, state: &DecoderState) -> f64 {
        self.mass
            .get(&self.codec.encode(state))
            .copied()
            .unwrap_or(0.0)
    }

    /// Live states sorted by state, for deterministic output.
    pub fn states(&self) -> Vec<(DecoderState, f64)> {
        let mut v: Vec<_> = self
            .mass
            .iter()
            .map(|(&k, &p)| (self.codec.decode(k), p))
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    /// `P_{u'}` for every stage `u' > u` where decoding already stopped.
    pub fn absorbed(&self) -> &BTreeMap<usize, f64> {
        &self.absorbed
    }

    /// Mass removed by pruning so far.
    pub fn lost_mass(&self) -> f64 {
        self.lost
    }

    pub fn live_mass(&self) -> f64 {
        self.mass.values().sum()
    }

    /// Live + absorbed + pruned mass; one up to rounding.
    pub fn total_mass(&self) -> f64 {
        self.live_mass() + self.absorbed.values().sum::<f64>() + self.lost
    }

    /// Marginal law of the ripple size at this stage.
    pub fn ripple_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.codec.ripple_radix as usize];
        for (&k, &p) in &self.mass {
            out[self.codec.ripple(k)] += p;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_access_probability_is_point_mass_at_zero() {
        for n in [1, 5, 200] {
            let s = build_degree_spectrum(n, 0.0).unwrap();
            assert_eq!(s.prob(0), 1.0);
            assert!(s.probs()[1..].iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn certain_single_transmitter() {
        let s = build_degree_spectrum(1, 1.0).unwrap();
        assert_eq!(s.probs(), &[0.0, 1.0]);
    }

    #[test]
    fn three_users_half() {
        let s = build_degree_spectrum(3, 0.5).unwrap();
        for (got, want) in s.probs().iter().zip([0.125, 0.375, 0.375, 0.125]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_probability() {
        assert!(build_degree_spectrum(4, 1.5).is_err());
        assert!(build_degree_spectrum(4, -0.1).is_err());
        assert!(build_degree_spectrum(4, f64::NAN).is_err());
        assert!(thinned_degree_spectrum(4, 0.5, 5, ThinningMode::Full).is_err());
    }

    #[test]
    fn thinning_extremes() {
        let full = build_degree_spectrum(7, 0.3).unwrap();
        let same = thinned_degree_spectrum(7, 0.3, 7, ThinningMode::Full).unwrap();
        for (a, b) in full.probs().iter().zip(same.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
        let none = thinned_degree_spectrum(7, 0.3, 0, ThinningMode::Full).unwrap();
        assert_eq!(none.prob(0), 1.0);
    }

    #[test]
    fn thinning_two_users_quarter() {
        // Double sum written out by hand for n = 2, p = 1/2, u = 1.
        let omega = [0.25, 0.5, 0.25];
        let mut want = [0.0; 3];
        for (i, &oi) in omega.iter().enumerate() {
            for (j, w) in want.iter_mut().enumerate().take(i + 1) {
                let c = [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 2.0, 1.0]][i][j];
                *w += oi * c * 0.5f64.powi(j as i32) * 0.5f64.powi((i - j) as i32);
            }
        }
        assert_eq!(want, [0.5625, 0.375, 0.0625]);
        let got = thinned_degree_spectrum(2, 0.5, 1, ThinningMode::Full).unwrap();
        for (a, b) in got.probs().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn truncated_thinning_loses_mass() {
        let t = thinned_degree_spectrum(10, 0.4, 3, ThinningMode::Truncated).unwrap();
        assert!(t.mass() < 1.0);
        assert!(t.probs()[4..].iter().all(|&p| p == 0.0));
        let full = thinned_degree_spectrum(10, 0.4, 10, ThinningMode::Truncated).unwrap();
        assert!((full.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_agrees_with_horner() {
        let s = build_degree_spectrum(50, 2.68 / 50.0).unwrap();
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            let (a, b, c) = s.eval_coefficients(x);
            assert!((s.eval(x) - a).abs() < 1e-13);
            assert!((s.derivative(x) - b).abs() < 1e-12);
            assert!((s.second_derivative(x) - c).abs() < 1e-11);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::new(0, vec![SlotType::new(1, 0.5)]).is_err());
        assert!(SystemConfig::new(3, vec![]).is_err());
        assert!(SystemConfig::new(3, vec![SlotType::new(1, 3.5)]).is_err());
        assert!(SystemConfig::new(3, vec![SlotType::new(1, -1.0)]).is_err());
        let c = SystemConfig::new(50, vec![SlotType::new(50, 3.0), SlotType::new(10, 5.0)]).unwrap();
        assert_eq!(c.total_slots(), 60);
        assert_eq!(c.num_types(), 2);
        assert!((c.access_probability(1) - 0.1).abs() < 1e-15);
        assert_eq!(c.slots_string(), "50x3,10x5");
    }

    #[test]
    fn codec_roundtrip_and_offsets() {
        let codec = StateCodec::new(&[3, 5], 8).unwrap();
        let s = DecoderState::new(vec![2, 4], 7);
        let k = codec.encode(&s);
        assert_eq!(codec.decode(k), s);
        let moved = k - codec.cloud_stride(1) + 1;
        assert_eq!(codec.decode(moved), DecoderState::new(vec![2, 3], 8));
    }
}
