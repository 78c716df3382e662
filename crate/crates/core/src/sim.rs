//! Monte Carlo simulation of contention periods with a peeling decoder.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`). Trial `i` of a run seeded
//! with `s` draws from stream `i` of the generator keyed by `s`, so every
//! trial is reproducible on its own and trials can be evaluated in any order.

use rand::distr::{Bernoulli, Distribution};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{DecoderState, SystemConfig};

/// Generator for trial `trial` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Which users were active in which slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Activity {
    /// Slot type of every slot, in transmission order.
    pub slot_types: Vec<usize>,
    /// Active users of every slot, in increasing order.
    pub slots: Vec<Vec<u32>>,
}

/// Decoder state observed right before a peeling step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceStep {
    /// Unresolved users before the step.
    pub stage: usize,
    pub state: DecoderState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContentionOutcome {
    pub activity: Activity,
    pub decode_trace: Vec<TraceStep>,
    pub unresolved: usize,
    pub seed: u64,
}

/// Incremental peeling decoder over slots of several types.
///
/// Each slot keeps its reduced degree and the XOR of the ids of its
/// unresolved users, which names the user of a singleton slot directly.
#[derive(Debug, Clone)]
pub(crate) struct Peeler {
    users: usize,
    degree: Vec<u32>,
    xor: Vec<u32>,
    kind: Vec<usize>,
    user_slots: Vec<Vec<u32>>,
    resolved: Vec<bool>,
    unresolved: usize,
    clouds: Vec<usize>,
    ripple: Vec<u32>,
    ripple_pos: Vec<u32>,
}

const NOT_IN_RIPPLE: u32 = u32::MAX;

impl Peeler {
    pub(crate) fn new(users: usize, types: usize) -> Self {
        Self {
            users,
            degree: Vec::new(),
            xor: Vec::new(),
            kind: Vec::new(),
            user_slots: vec![Vec::new(); users],
            resolved: vec![false; users],
            unresolved: users,
            clouds: vec![0; types],
            ripple: Vec::new(),
            ripple_pos: Vec::new(),
        }
    }

    pub(crate) fn unresolved(&self) -> usize {
        self.unresolved
    }

    #[cfg(test)]
    pub(crate) fn is_resolved(&self, user: usize) -> bool {
        self.resolved[user]
    }

    pub(crate) fn clouds(&self) -> &[usize] {
        &self.clouds
    }

    #[cfg(test)]
    pub(crate) fn ripple_len(&self) -> usize {
        self.ripple.len()
    }

    fn state(&self) -> DecoderState {
        DecoderState::new(self.clouds.clone(), self.ripple.len())
    }

    /// Appends a slot; replicas of already resolved users are cancelled.
    pub(crate) fn add_slot(&mut self, kind: usize, active: &[u32]) {
        if kind >= self.clouds.len() {
            self.clouds.resize(kind + 1, 0);
        }
        let id = self.degree.len() as u32;
        let mut deg = 0;
        let mut xor = 0;
        for &v in active {
            if !self.resolved[v as usize] {
                deg += 1;
                xor ^= v;
                self.user_slots[v as usize].push(id);
            }
        }
        self.degree.push(deg);
        self.xor.push(xor);
        self.kind.push(kind);
        self.ripple_pos.push(NOT_IN_RIPPLE);
        match deg {
            0 => {}
            1 => self.ripple_push(id),
            _ => self.clouds[kind] += 1,
        }
    }

    fn ripple_push(&mut self, slot: u32) {
        self.ripple_pos[slot as usize] = self.ripple.len() as u32;
        self.ripple.push(slot);
    }

    fn ripple_remove(&mut self, slot: u32) {
        let pos = self.ripple_pos[slot as usize] as usize;
        let last = self.ripple.pop().expect("slot is in the ripple");
        if last != slot {
            self.ripple[pos] = last;
            self.ripple_pos[last as usize] = pos as u32;
        }
        self.ripple_pos[slot as usize] = NOT_IN_RIPPLE;
    }

    /// Peels until the ripple is empty, picking ripple slots uniformly at
    /// random. Snapshots are pushed to `trace` before every step.
    pub(crate) fn peel<R: Rng>(&mut self, rng: &mut R, mut trace: Option<&mut Vec<TraceStep>>) {
        while !self.ripple.is_empty() {
            if let Some(t) = trace.as_deref_mut() {
                t.push(TraceStep {
                    stage: self.unresolved,
                    state: self.state(),
                });
            }
            let pick = self.ripple[rng.random_range(0..self.ripple.len())];
            let user = self.xor[pick as usize];
            self.resolve(user);
        }
    }

    fn resolve(&mut self, user: u32) {
        self.resolved[user as usize] = true;
        self.unresolved -= 1;
        let slots = std::mem::take(&mut self.user_slots[user as usize]);
        for &s in &slots {
            let si = s as usize;
            self.degree[si] -= 1;
            self.xor[si] ^= user;
            match self.degree[si] {
                0 => self.ripple_remove(s),
                1 => {
                    self.clouds[self.kind[si]] -= 1;
                    self.ripple_push(s);
                }
                _ => {}
            }
        }
    }

    /// Final set of unresolved users.
    pub(crate) fn unresolved_users(&self) -> Vec<u32> {
        (0..self.users as u32)
            .filter(|&v| !self.resolved[v as usize])
            .collect()
    }
}

/// Decodes a fixed activity pattern, returning the trace and the peeler.
fn decode<R: Rng>(
    users: usize,
    types: usize,
    activity: &Activity,
    rng: &mut R,
    trace: Option<&mut Vec<TraceStep>>,
) -> Peeler {
    let mut peeler = Peeler::new(users, types);
    for (kind, active) in activity.slot_types.iter().zip(&activity.slots) {
        peeler.add_slot(*kind, active);
    }
    peeler.peel(rng, trace);
    peeler
}

/// Final unresolved users of a fixed activity pattern under the ripple
/// selection order driven by `rng`.
pub fn peel_pattern<R: Rng>(users: usize, activity: &Activity, rng: &mut R) -> Vec<u32> {
    let types = activity.slot_types.iter().max().map_or(1, |t| t + 1);
    decode(users, types, activity, rng, None).unresolved_users()
}

fn draw_activity<R: Rng>(config: &SystemConfig, rng: &mut R) -> Activity {
    let n = config.users();
    let mut slot_types = Vec::with_capacity(config.total_slots());
    let mut slots = Vec::with_capacity(config.total_slots());
    for (h, st) in config.slot_types().iter().enumerate() {
        let coin = Bernoulli::new(config.access_probability(h)).expect("validated probability");
        for _ in 0..st.count {
            let active = (0..n as u32).filter(|_| coin.sample(rng)).collect();
            slot_types.push(h);
            slots.push(active);
        }
    }
    Activity { slot_types, slots }
}

fn contention_with<R: Rng>(config: &SystemConfig, rng: &mut R, record: bool) -> (Activity, Vec<TraceStep>, usize) {
    let activity = draw_activity(config, rng);
    let mut trace = Vec::new();
    let peeler = decode(
        config.users(),
        config.num_types(),
        &activity,
        rng,
        record.then_some(&mut trace),
    );
    (activity, trace, peeler.unresolved())
}

/// One contention period: every user is active in every type-`h` slot with
/// probability `p_h`, then the receiver peels.
pub fn simulate_contention(config: &SystemConfig, seed: u64) -> ContentionOutcome {
    simulate_trial(config, seed, 0)
}

/// Trial `trial` of a run seeded with `seed`.
pub fn simulate_trial(config: &SystemConfig, seed: u64, trial: u64) -> ContentionOutcome {
    let mut rng = trial_rng(seed, trial);
    let (activity, decode_trace, unresolved) = contention_with(config, &mut rng, true);
    ContentionOutcome {
        activity,
        decode_trace,
        unresolved,
        seed,
    }
}

/// Unresolved count of each trial `0..trials`.
pub fn simulate_unresolved(config: &SystemConfig, trials: u64, seed: u64) -> Vec<usize> {
    (0..trials)
        .map(|i| contention_with(config, &mut trial_rng(seed, i), false).2)
        .collect()
}

/// Relative frequencies of the unresolved count with binomial standard
/// errors `sqrt(f (1 - f) / T)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalPmf {
    pub trials: u64,
    pub freq: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl EmpiricalPmf {
    pub fn from_counts(users: usize, counts: impl IntoIterator<Item = usize>) -> Self {
        let mut hist = vec![0u64; users + 1];
        let mut trials = 0;
        for u in counts {
            hist[u] += 1;
            trials += 1;
        }
        let t = trials.max(1) as f64;
        let freq: Vec<f64> = hist.iter().map(|&c| c as f64 / t).collect();
        let stderr = freq.iter().map(|f| (f * (1.0 - f) / t).sqrt()).collect();
        Self {
            trials,
            freq,
            stderr,
        }
    }

    /// Empirical packet error rate and its standard error.
    pub fn per(&self) -> (f64, f64) {
        let n = (self.freq.len() - 1) as f64;
        let mean: f64 = self.freq.iter().enumerate().map(|(u, f)| u as f64 / n * f).sum();
        let second: f64 = self
            .freq
            .iter()
            .enumerate()
            .map(|(u, f)| (u as f64 / n).powi(2) * f)
            .sum();
        let var = (second - mean * mean).max(0.0);
        (mean, (var / self.trials.max(1) as f64).sqrt())
    }
}

pub fn estimate_pmf(config: &SystemConfig, trials: u64, seed: u64) -> Result<EmpiricalPmf> {
    if trials == 0 {
        return Err(invalid("trials", "at least one trial is required"));
    }
    Ok(EmpiricalPmf::from_counts(
        config.users(),
        simulate_unresolved(config, trials, seed),
    ))
}

/// Frame-based irregular repetition slotted ALOHA.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrsaConfig {
    pub users: usize,
    pub frame: usize,
    /// `degrees[d]` is the probability that a user sends `d` replicas.
    pub degrees: Vec<f64>,
}

impl IrsaConfig {
    pub fn new(users: usize, frame: usize, degrees: Vec<f64>) -> Result<Self> {
        if users == 0 {
            return Err(invalid("n", "number of users must be positive"));
        }
        if u32::try_from(users).is_err() {
            return Err(invalid("n", "too many users"));
        }
        if degrees.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidDistribution("negative or non-finite coefficient".into()));
        }
        let total: f64 = degrees.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("coefficients sum to {total}")));
        }
        let max_degree = degrees.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        if max_degree > frame {
            return Err(invalid(
                "frame",
                format!("degree {max_degree} does not fit a frame of {frame} slots"),
            ));
        }
        Ok(Self {
            users,
            frame,
            degrees,
        })
    }

    /// `0.25 x^2 + 0.6 x^3 + 0.15 x^8`.
    pub fn reference_distribution() -> Vec<f64> {
        let mut d = vec![0.0; 9];
        d[2] = 0.25;
        d[3] = 0.6;
        d[8] = 0.15;
        d
    }

    /// Average number of replicas per user.
    pub fn mean_degree(&self) -> f64 {
        self.degrees.iter().enumerate().map(|(d, p)| d as f64 * p).sum()
    }
}

fn draw_degree<R: Rng>(degrees: &[f64], rng: &mut R) -> usize {
    let z: f64 = rng.random();
    let mut acc = 0.0;
    for (d, p) in degrees.iter().enumerate() {
        acc += p;
        if z < acc {
            return d;
        }
    }
    degrees.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn irsa_with<R: Rng>(config: &IrsaConfig, rng: &mut R) -> usize {
    let mut slots = vec![Vec::new(); config.frame];
    for v in 0..config.users as u32 {
        let d = draw_degree(&config.degrees, rng);
        for s in sample(rng, config.frame, d) {
            slots[s].push(v);
        }
    }
    let activity = Activity {
        slot_types: vec![0; config.frame],
        slots,
    };
    decode(config.users, 1, &activity, rng, None).unresolved()
}

/// Unresolved users after one IRSA frame.
pub fn simulate_irsa(config: &IrsaConfig, seed: u64) -> usize {
    irsa_with(config, &mut trial_rng(seed, 0))
}

/// IRSA unresolved counts over trials `0..trials`.
pub fn simulate_irsa_trials(config: &IrsaConfig, trials: u64, seed: u64) -> Vec<usize> {
    (0..trials)
        .map(|i| irsa_with(config, &mut trial_rng(seed, i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SlotType;

    #[test]
    fn silent_users_stay_unresolved() {
        let cfg = SystemConfig::single(7, 5, 0.0).unwrap();
        let out = simulate_contention(&cfg, 3);
        assert_eq!(out.unresolved, 7);
        assert!(out.decode_trace.is_empty());
        assert!(out.activity.slots.iter().all(Vec::is_empty));
    }

    #[test]
    fn guaranteed_singleton() {
        let cfg = SystemConfig::single(1, 1, 1.0).unwrap();
        let out = simulate_contention(&cfg, 99);
        assert_eq!(out.unresolved, 0);
        assert_eq!(out.decode_trace.len(), 1);
        assert_eq!(out.decode_trace[0].state, DecoderState::new(vec![0], 1));
    }

    #[test]
    fn trace_invariants() {
        let cfg = SystemConfig::new(30, vec![SlotType::new(20, 2.0), SlotType::new(20, 3.5)]).unwrap();
        for seed in 0..20 {
            let out = simulate_contention(&cfg, seed);
            assert_eq!(out.unresolved, 30 - out.decode_trace.len());
            for (i, step) in out.decode_trace.iter().enumerate() {
                assert_eq!(step.stage, 30 - i);
                assert!(step.state.ripple >= 1);
            }
        }
    }

    #[test]
    fn same_seed_same_outcome() {
        let cfg = SystemConfig::single(20, 25, 2.5).unwrap();
        assert_eq!(simulate_contention(&cfg, 11), simulate_contention(&cfg, 11));
        assert_ne!(
            simulate_contention(&cfg, 11).activity,
            simulate_contention(&cfg, 12).activity
        );
    }

    #[test]
    fn two_users_one_slot() {
        let cfg = SystemConfig::single(2, 1, 1.0).unwrap();
        let est = estimate_pmf(&cfg, 100_000, 7).unwrap();
        assert!((est.freq[1] - 0.5).abs() < 0.01);
        assert!((est.freq[2] - 0.5).abs() < 0.01);
        assert_eq!(est.freq[0], 0.0);
        assert!((est.per().0 - 0.75).abs() < 0.01);
    }

    #[test]
    fn single_trial_is_one_hot() {
        let cfg = SystemConfig::single(10, 12, 2.0).unwrap();
        let est = estimate_pmf(&cfg, 1, 5).unwrap();
        assert_eq!(est.freq.iter().filter(|&&f| f == 1.0).count(), 1);
        assert_eq!(est.freq.iter().sum::<f64>(), 1.0);
        assert!(estimate_pmf(&cfg, 0, 5).is_err());
    }

    #[test]
    fn peeler_cancels_resolved_replicas() {
        let mut p = Peeler::new(3, 1);
        p.add_slot(0, &[0]);
        p.add_slot(0, &[0, 1, 2]);
        let mut rng = trial_rng(0, 0);
        p.peel(&mut rng, None);
        assert_eq!(p.unresolved(), 2);
        assert_eq!(p.clouds(), &[1]);
        p.add_slot(0, &[0, 1, 2]);
        assert_eq!(p.clouds(), &[2]);
        assert_eq!(p.ripple_len(), 0);
        p.add_slot(0, &[0, 2]);
        assert_eq!(p.ripple_len(), 1);
        p.peel(&mut rng, None);
        assert_eq!(p.unresolved(), 0);
        assert!(p.is_resolved(1));
    }

    #[test]
    fn degree_one_irsa_peels_lone_users() {
        let cfg = IrsaConfig::new(6, 10, vec![0.0, 1.0]).unwrap();
        for seed in 0..20 {
            let mut rng = trial_rng(seed, 0);
            let mut slots = vec![Vec::new(); 10];
            for v in 0..6u32 {
                let d = draw_degree(&cfg.degrees, &mut rng);
                for s in sample(&mut rng, 10, d) {
                    slots[s].push(v);
                }
            }
            let lone = slots.iter().filter(|s| s.len() == 1).count();
            assert_eq!(irsa_with(&cfg, &mut trial_rng(seed, 0)), 6 - lone);
        }
    }

    #[test]
    fn irsa_reference_mean_degree() {
        let cfg = IrsaConfig::new(50, 100, IrsaConfig::reference_distribution()).unwrap();
        assert!((cfg.mean_degree() - 3.5).abs() < 1e-12);
        assert!(IrsaConfig::new(5, 4, IrsaConfig::reference_distribution()).is_err());
        assert!(IrsaConfig::new(5, 4, vec![0.5, 0.4]).is_err());
    }
}
