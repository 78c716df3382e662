//! Exact finite-length analysis of the peeling decoder.
//!
//! The decoder state `(c_1, .., c_k, r)` evolves as a Markov chain indexed
//! by the number of unresolved users `u`. At each step one ripple slot is
//! decoded: the other ripple slots leave with probability `1/u` each, and
//! every type-`h` cloud slot independently enters the ripple with the
//! departure probability `p_{u,h}`. States with an empty ripple stop the
//! decoder and are absorbed as the probability that exactly `u` users stay
//! unresolved.
//!
//! The state map is sparse. The joint transition factorizes, so it is
//! applied as one ripple pass followed by one pass per slot type; each pass
//! fans a state out along a single binomial law.

use std::mem;

use log::{debug, warn};
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{DecoderState, DegreeSpectrum, StateCodec, StateDistribution, SystemConfig};
use crate::numerics::binomial_pmf_vec;

/// Cloud-membership probabilities below this make `p_{u,h}` zero.
pub const DENOMINATOR_GUARD: f64 = 1e-15;

/// Default cap on the number of live states.
pub const DEFAULT_STATE_BUDGET: usize = 20_000_000;

/// Probability that a type-`h` cloud slot enters the ripple when the
/// decoder moves from `u` to `u - 1` unresolved users.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Departure {
    pub prob: f64,
    /// Set when the cloud-membership probability fell under
    /// [`DENOMINATOR_GUARD`] and the probability was forced to zero.
    pub guarded: bool,
}

/// `p_{u,h}` for `1 <= u <= n`.
///
/// Ratio of the probability that a slot has reduced degree two before the
/// step and one after it, to the probability that it has reduced degree at
/// least two, both for a uniformly random set of `u` unresolved users.
pub fn departure_probability(u: usize, spectrum: &DegreeSpectrum, n: usize) -> Result<Departure> {
    if u == 0 || u > n {
        return Err(Error::StageOutOfRange { stage: u, users: n });
    }
    if u == 1 {
        return Ok(Departure {
            prob: 0.0,
            guarded: false,
        });
    }
    let resolved = n - u;
    let top = spectrum.max_degree().min(n);

    // zero(d) = C(n-u, d) / C(n, d): every edge goes to a resolved user.
    // one(d)  = u C(n-u, d-1) / C(n, d): exactly one unresolved neighbour.
    let mut zero = 1.0;
    let mut idle = spectrum.prob(0);
    for d in 1..=top.min(resolved + 1) {
        // `zero` still holds the d-1 value here.
        let one = u as f64 * zero * d as f64 / (n - d + 1) as f64;
        zero = if d <= resolved {
            zero * (resolved - d + 1) as f64 / (n - d + 1) as f64
        } else {
            0.0
        };
        idle += spectrum.prob(d) * (one + zero);
    }
    let membership = spectrum.mass() - idle;

    // C(n-u, d-2) / C(n-2, d-2), advanced along d.
    let mut numerator = 0.0;
    let mut pair = 1.0;
    let scale = (u - 1) as f64 / (n as f64 * (n - 1) as f64);
    for d in 2..=top.min(resolved + 2) {
        if d > 2 {
            let j = d - 3;
            pair *= (resolved - j) as f64 / (n - 2 - j) as f64;
        }
        numerator += spectrum.prob(d) * (d * (d - 1)) as f64 * scale * pair;
    }

    if membership < DENOMINATOR_GUARD {
        debug!("p_{{u,h}} guarded at u={u}: cloud membership {membership:e}");
        return Ok(Departure {
            prob: 0.0,
            guarded: true,
        });
    }
    Ok(Departure {
        prob: (numerator / membership).clamp(0.0, 1.0),
        guarded: false,
    })
}

/// Parameters of one decoding step `u -> u - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionLaw {
    pub stage: usize,
    pub departure: Vec<f64>,
    pub guarded: Vec<bool>,
}

impl TransitionLaw {
    pub fn new(stage: usize, spectra: &[DegreeSpectrum], users: usize) -> Result<Self> {
        let mut departure = Vec::with_capacity(spectra.len());
        let mut guarded = Vec::with_capacity(spectra.len());
        for s in spectra {
            let d = departure_probability(stage, s, users)?;
            departure.push(d.prob);
            guarded.push(d.guarded);
        }
        Ok(Self {
            stage,
            departure,
            guarded,
        })
    }

    /// Probability that each other ripple slot leaves with the decoded user.
    pub fn ripple_departure(&self) -> f64 {
        1.0 / self.stage as f64
    }
}

/// Tuning knobs for [`run_exact`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactOptions {
    /// Contributions and states with mass below this are dropped and their
    /// mass tracked. Zero keeps the computation exact.
    pub prune_eps: f64,
    /// Maximum number of live states before giving up.
    pub max_states: usize,
    /// Keep the per-stage ripple law conditioned on reaching the stage.
    pub record_ripple_pmf: bool,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            prune_eps: 0.0,
            max_states: DEFAULT_STATE_BUDGET,
            record_ripple_pmf: false,
        }
    }
}

/// Expected cloud and ripple sizes over the states where decoding is still
/// running (`r >= 1`) at one stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageMoments {
    pub stage: usize,
    /// `C_h(u) = sum c_h Pr{S_u}`.
    pub clouds: Vec<f64>,
    /// `R(u) = sum (r - 1) Pr{S_u}`.
    pub ripple: f64,
    /// `sum (r - 1)^2 Pr{S_u} - R(u)^2`.
    pub ripple_var: f64,
    /// Probability that the decoder is still running at this stage.
    pub running: f64,
}

impl StageMoments {
    pub fn ripple_sd(&self) -> f64 {
        self.ripple_var.max(0.0).sqrt()
    }
}

/// Output of the exact analysis.
#[derive(Debug, Clone, Serialize)]
pub struct ExactResult {
    pub users: usize,
    pub slots: usize,
    /// `P_u` for `u = 0..=n`: probability that exactly `u` users stay unresolved.
    pub pmf: Vec<f64>,
    pub per: f64,
    pub throughput: f64,
    /// Indexed by stage `u`.
    pub moments: Vec<StageMoments>,
    /// `Pr{R_u = r} / sum_r Pr{R_u = r}`, indexed by stage then `r`.
    pub ripple_pmf: Option<Vec<Vec<f64>>>,
    /// Mass dropped by pruning while leaving each stage.
    pub lost_by_stage: Vec<f64>,
    pub lost_mass: f64,
    pub peak_states: usize,
    /// Number of `(stage, type)` pairs whose departure probability was guarded.
    pub guarded: usize,
}

impl ExactResult {
    /// Upper bound on the pruning error of `P_u`.
    pub fn pmf_error_bar(&self, u: usize) -> f64 {
        self.lost_by_stage[u..].iter().sum()
    }
}

/// Joint law of `(c_1, .., c_k, r)` before decoding starts.
///
/// Each type-`h` slot independently lands in its cloud, the ripple or stays
/// empty with probabilities `1 - Omega_{h,0} - Omega_{h,1}`, `Omega_{h,1}`,
/// `Omega_{h,0}`; the ripple counts of all types are summed.
pub fn initial_distribution(
    config: &SystemConfig,
    spectra: &[DegreeSpectrum],
) -> Result<StateDistribution> {
    initial_distribution_pruned(config, spectra, 0.0)
}

pub(crate) fn initial_distribution_pruned(
    config: &SystemConfig,
    spectra: &[DegreeSpectrum],
    eps: f64,
) -> Result<StateDistribution> {
    if spectra.len() != config.num_types() {
        return Err(invalid("spectra", "one degree distribution per slot type is required"));
    }
    let caps: Vec<usize> = config.slot_types().iter().map(|s| s.count).collect();
    let m = config.total_slots();
    let codec = StateCodec::new(&caps, m)?;
    let mut mass = FxHashMap::default();
    mass.insert(0u64, 1.0);
    for (h, spectrum) in spectra.iter().enumerate() {
        let terms = trinomial_terms(caps[h], spectrum.prob(0), spectrum.prob(1), 0.0, &mut 0.0);
        let stride = codec.cloud_stride(h);
        let mut next = FxHashMap::default();
        for (&key, &p) in &mass {
            for &(c, r, w) in &terms {
                *next.entry(key + c as u64 * stride + r as u64).or_insert(0.0) += p * w;
            }
        }
        mass = next;
    }
    let lost = prune_states(&mut mass, eps);
    Ok(StateDistribution {
        stage: config.users(),
        codec,
        mass,
        absorbed: Default::default(),
        lost,
    })
}

/// `(cloud, ripple, probability)` of a trinomial over `slots` trials with
/// outcome probabilities `(1 - zero - one, one, zero)`.
pub(crate) fn trinomial_terms(
    slots: usize,
    zero: f64,
    one: f64,
    eps: f64,
    lost: &mut f64,
) -> Vec<(usize, usize, f64)> {
    let cloud = (1.0 - zero - one).clamp(0.0, 1.0);
    let by_cloud = binomial_pmf_vec(slots, cloud);
    let rest = zero + one;
    let mut out = Vec::new();
    for (c, &pc) in by_cloud.iter().enumerate() {
        if pc == 0.0 {
            continue;
        }
        let left = slots - c;
        let ripple_share = if rest > 0.0 { (one / rest).clamp(0.0, 1.0) } else { 0.0 };
        let by_ripple = binomial_pmf_vec(left, ripple_share);
        for (r, &pr) in by_ripple.iter().enumerate() {
            let w = pc * pr;
            if w == 0.0 {
                continue;
            }
            if w < eps {
                *lost += w;
                continue;
            }
            out.push((c, r, w));
        }
    }
    out
}

impl StateDistribution {
    /// Moves the states with an empty ripple into the absorbed map as the
    /// probability that decoding ends at this stage.
    pub fn absorb(&mut self) {
        let codec = &self.codec;
        let mut stopped = 0.0;
        self.mass.retain(|&k, p| {
            if codec.ripple(k) == 0 {
                stopped += *p;
                false
            } else {
                true
            }
        });
        *self.absorbed.entry(self.stage).or_insert(0.0) += stopped;
    }

    fn moments(&self) -> StageMoments {
        let k = self.codec.num_clouds();
        let mut clouds = vec![0.0; k];
        let (mut ripple, mut second, mut running) = (0.0, 0.0, 0.0);
        for (&key, &p) in &self.mass {
            let r = self.codec.ripple(key);
            if r == 0 {
                continue;
            }
            running += p;
            for (h, c) in clouds.iter_mut().enumerate() {
                *c += self.codec.cloud(key, h) as f64 * p;
            }
            let excess = (r - 1) as f64;
            ripple += excess * p;
            second += excess * excess * p;
        }
        StageMoments {
            stage: self.stage,
            clouds,
            ripple,
            ripple_var: second - ripple * ripple,
            running,
        }
    }
}

/// One decoding step from stage `u` to `u - 1`.
///
/// States with an empty ripple are absorbed first. With `eps > 0`, resulting
/// states below `eps` are dropped and added to
/// the lost mass.
pub fn transition(
    dist: &StateDistribution,
    law: &TransitionLaw,
    eps: f64,
) -> Result<StateDistribution> {
    let mut next = dist.clone();
    let mut scratch = FxHashMap::default();
    step_in_place(&mut next, law, eps, &mut scratch)?;
    Ok(next)
}

fn step_in_place(
    dist: &mut StateDistribution,
    law: &TransitionLaw,
    eps: f64,
    scratch: &mut FxHashMap<u64, f64>,
) -> Result<()> {
    let u = dist.stage;
    if u == 0 {
        return Err(Error::StageOutOfRange { stage: 0, users: 0 });
    }
    if law.stage != u {
        return Err(invalid("law", format!("law for stage {} applied at stage {u}", law.stage)));
    }
    if law.departure.len() != dist.codec.num_clouds() {
        return Err(invalid("law", "departure probabilities do not match slot types"));
    }
    dist.absorb();
    let codec = dist.codec.clone();
    let mut lost = 0.0;

    // Ripple pass: r -> r - a, where the r - 1 other ripple slots each stay
    // with probability 1 - 1/u.
    let stay = 1.0 - law.ripple_departure();
    let mut stay_pmf: Vec<Option<Window>> = Vec::new();
    scratch.clear();
    for (&key, &p) in &dist.mass {
        let r = codec.ripple(key);
        if stay_pmf.len() <= r {
            stay_pmf.resize(r + 1, None);
        }
        let w = stay_pmf[r].get_or_insert_with(|| Window::new(r - 1, stay, eps));
        lost += p * w.dropped;
        accumulate_stay(scratch, key - r as u64, w, p);
    }
    mem::swap(&mut dist.mass, scratch);

    // Cloud passes: b_h slots move from cloud h into the ripple.
    for (h, &dep) in law.departure.iter().enumerate() {
        if dep == 0.0 {
            continue;
        }
        let stride = codec.cloud_stride(h);
        let mut leave_pmf: Vec<Option<Window>> = Vec::new();
        scratch.clear();
        for (&key, &p) in &dist.mass {
            let c = codec.cloud(key, h);
            if c == 0 {
                *scratch.entry(key).or_insert(0.0) += p;
                continue;
            }
            if leave_pmf.len() <= c {
                leave_pmf.resize(c + 1, None);
            }
            let w = leave_pmf[c].get_or_insert_with(|| Window::new(c, dep, eps));
            lost += p * w.dropped;
            // b slots leave: key - b * stride + b.
            accumulate_moves(scratch, key, stride, w, p);
        }
        mem::swap(&mut dist.mass, scratch);
    }

    lost += prune_states(&mut dist.mass, eps);
    dist.lost += lost;
    dist.stage = u - 1;
    Ok(())
}

/// Drops states lighter than `eps` and returns their total mass.
fn prune_states(mass: &mut FxHashMap<u64, f64>, eps: f64) -> f64 {
    let mut lost = 0.0;
    if eps > 0.0 {
        mass.retain(|_, p| {
            if *p < eps {
                lost += *p;
                false
            } else {
                true
            }
        });
    }
    lost
}

/// Binomial weights with both tails of total mass at most `cut` removed.
#[derive(Debug, Clone)]
struct Window {
    start: usize,
    weights: Vec<f64>,
    dropped: f64,
}

impl Window {
    fn new(trials: usize, p: f64, cut: f64) -> Self {
        let mut weights = binomial_pmf_vec(trials, p);
        let half = 0.5 * cut;
        let (mut lo, mut low) = (0, 0.0);
        while lo < weights.len() && low + weights[lo] <= half {
            low += weights[lo];
            lo += 1;
        }
        let (mut hi, mut high) = (weights.len(), 0.0);
        while hi > lo && high + weights[hi - 1] <= half {
            high += weights[hi - 1];
            hi -= 1;
        }
        weights.truncate(hi);
        weights.drain(..lo);
        Self {
            start: lo,
            weights,
            dropped: low + high,
        }
    }
}

/// Ripple pass: `i` of the other ripple slots stay, giving key `base + i`.
#[inline]
fn accumulate_stay(out: &mut FxHashMap<u64, f64>, base: u64, w: &Window, mass: f64) {
    for (i, &x) in w.weights.iter().enumerate() {
        let q = mass * x;
        if q != 0.0 {
            *out.entry(base + (w.start + i) as u64).or_insert(0.0) += q;
        }
    }
}

/// Cloud pass: `b` slots leave the cloud and join the ripple.
#[inline]
fn accumulate_moves(out: &mut FxHashMap<u64, f64>, key: u64, stride: u64, w: &Window, mass: f64) {
    for (i, &x) in w.weights.iter().enumerate() {
        let q = mass * x;
        if q != 0.0 {
            let b = (w.start + i) as u64;
            *out.entry(key - b * stride + b).or_insert(0.0) += q;
        }
    }
}

/// Runs the exact analysis for a fresh contention period.
pub fn run_exact(
    config: &SystemConfig,
    spectra: &[DegreeSpectrum],
    options: &ExactOptions,
) -> Result<ExactResult> {
    let caps: Vec<usize> = config.slot_types().iter().map(|s| s.count).collect();
    let projected = StateCodec::box_size(&caps, config.total_slots());
    if projected > options.max_states as u128 {
        warn!(
            "state space bound {projected} exceeds the budget of {} states; \
             the run may be slow or abort",
            options.max_states
        );
    }
    let start = initial_distribution_pruned(config, spectra, options.prune_eps)?;
    run_from(start, spectra, config.users(), config.total_slots(), options)
}

/// Runs the decoder chain from an arbitrary starting distribution down to
/// stage zero. `users` is the population size used by the departure
/// probabilities and the error-rate normalization.
pub fn run_from(
    mut dist: StateDistribution,
    spectra: &[DegreeSpectrum],
    users: usize,
    slots: usize,
    options: &ExactOptions,
) -> Result<ExactResult> {
    let start = dist.stage;
    if start > users {
        return Err(Error::StageOutOfRange { stage: start, users });
    }
    let mut moments: Vec<StageMoments> = (0..=users)
        .map(|u| StageMoments {
            stage: u,
            clouds: vec![0.0; spectra.len()],
            ripple: 0.0,
            ripple_var: 0.0,
            running: 0.0,
        })
        .collect();
    let mut ripple_pmf = options.record_ripple_pmf.then(|| vec![Vec::new(); users + 1]);
    let mut lost_by_stage = vec![0.0; users + 1];
    lost_by_stage[start] = dist.lost;
    let mut peak = dist.num_states();
    let mut guarded = 0;
    let mut scratch = FxHashMap::default();

    for u in (1..=start).rev() {
        if dist.num_states() > options.max_states {
            let caps: Vec<usize> = (0..dist.codec.num_clouds()).map(|_| slots).collect();
            return Err(Error::BudgetExceeded {
                states: dist.num_states(),
                projected: StateCodec::box_size(&caps, slots),
                budget: options.max_states,
            });
        }
        moments[u] = dist.moments();
        if let Some(rp) = ripple_pmf.as_mut() {
            let marg = dist.ripple_marginal();
            let total: f64 = marg.iter().sum();
            rp[u] = if total > 0.0 {
                marg.iter().map(|p| p / total).collect()
            } else {
                marg
            };
        }
        let law = TransitionLaw::new(u, spectra, users)?;
        guarded += law.guarded.iter().filter(|g| **g).count();
        let before = dist.lost;
        step_in_place(&mut dist, &law, options.prune_eps, &mut scratch)?;
        lost_by_stage[u] += dist.lost - before;
        peak = peak.max(dist.num_states());
    }

    // Whatever is still live at stage zero decoded everybody.
    let mut pmf = vec![0.0; users + 1];
    pmf[dist.stage] += dist.live_mass();
    if let Some(rp) = ripple_pmf.as_mut() {
        let marg = dist.ripple_marginal();
        let total: f64 = marg.iter().sum();
        rp[dist.stage] = if total > 0.0 {
            marg.iter().map(|p| p / total).collect()
        } else {
            marg
        };
    }
    for (&u, &p) in &dist.absorbed {
        pmf[u] += p;
    }
    let per = per_from_pmf(&pmf, users);
    Ok(ExactResult {
        users,
        slots,
        throughput: throughput(per, users, slots),
        per,
        pmf,
        moments,
        ripple_pmf,
        lost_mass: dist.lost,
        lost_by_stage,
        peak_states: peak,
        guarded,
    })
}

/// `sum_u (u/n) P_u`.
pub fn per_from_pmf(pmf: &[f64], users: usize) -> f64 {
    pmf.iter()
        .enumerate()
        .map(|(u, p)| u as f64 / users as f64 * p)
        .sum()
}

/// Resolved users per slot, `n (1 - PER) / m`; zero for an empty period.
pub fn throughput(per: f64, users: usize, slots: usize) -> f64 {
    if slots == 0 {
        0.0
    } else {
        users as f64 * (1.0 - per) / slots as f64
    }
}

/// Convenience wrapper returning the initial state as [`DecoderState`] pairs.
pub fn initial_states(
    config: &SystemConfig,
    spectra: &[DegreeSpectrum],
) -> Result<Vec<(DecoderState, f64)>> {
    Ok(initial_distribution(config, spectra)?.states())
}
