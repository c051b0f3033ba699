//! Round-robin scheduling with the counters `π` (next sampler to transmit)
//! and `σ` (successive dropouts since the last reception), the concentrated
//! variant where only `σ` evolves, and bounded dropout sequences.
//!
//! Channel indices in this module are 1-based, matching the protocol counters.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulingMode {
    /// One sampler per instant, in the cyclic order 1, 2, …, p.
    RoundRobin,
    /// All samplers transmit together.
    Concentrated,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("successive dropouts would reach {attempted}, above the bound {bound}")]
    BoundViolation { attempted: usize, bound: usize },
    #[error("invalid scheduler state pi={pi} for {channels} channels")]
    InvalidState { pi: usize, channels: usize },
    #[error("protocol needs at least one channel")]
    NoChannels,
    #[error("attempt sequence must start with a successful transmission")]
    FirstAttemptLost,
    #[error("dropout plan entry {index} = {value} exceeds the bound {bound}")]
    PlanEntryTooLarge {
        index: usize,
        value: usize,
        bound: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Protocol {
    pub channels: usize,
    pub max_dropouts: usize,
    pub mode: SchedulingMode,
}

/// Counter values held between sampling instants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SchedulerState {
    pub pi: usize,
    pub sigma: usize,
}

impl SchedulerState {
    /// `π(0⁻) = 1`, `σ(0⁻) = 0`.
    pub const fn initial() -> Self {
        Self { pi: 1, sigma: 0 }
    }
}

impl Default for SchedulerState {
    fn default() -> Self {
        Self::initial()
    }
}

impl Protocol {
    pub fn new(channels: usize, max_dropouts: usize, mode: SchedulingMode) -> Result<Self, ProtocolError> {
        if channels == 0 {
            return Err(ProtocolError::NoChannels);
        }
        Ok(Self {
            channels,
            max_dropouts,
            mode,
        })
    }

    /// Number of channel groups the observer distinguishes: `p` in
    /// round-robin mode, one in concentrated mode.
    pub fn groups(&self) -> usize {
        match self.mode {
            SchedulingMode::RoundRobin => self.channels,
            SchedulingMode::Concentrated => 1,
        }
    }

    /// Counter update at a sampling instant. On a reception `σ ← 0` and, in
    /// round-robin mode, `π` advances cyclically; on a dropout `π` is kept
    /// and `σ ← σ + 1`.
    pub fn step(&self, state: SchedulerState, received: bool) -> Result<SchedulerState, ProtocolError> {
        let limit = self.groups();
        if state.pi == 0 || state.pi > limit {
            return Err(ProtocolError::InvalidState {
                pi: state.pi,
                channels: limit,
            });
        }
        if received {
            let pi = match self.mode {
                SchedulingMode::RoundRobin if state.pi == self.channels => 1,
                SchedulingMode::RoundRobin => state.pi + 1,
                SchedulingMode::Concentrated => 1,
            };
            Ok(SchedulerState { pi, sigma: 0 })
        } else {
            let sigma = state.sigma + 1;
            if sigma > self.max_dropouts {
                return Err(ProtocolError::BoundViolation {
                    attempted: sigma,
                    bound: self.max_dropouts,
                });
            }
            Ok(SchedulerState { pi: state.pi, sigma })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanSource {
    Scripted,
    SeededUniform { seed: u64, max_dropouts: usize },
}

/// Successive-dropout counts `d^h`, one per reception: entry `h` is the
/// number of lost attempts between reception `h` and reception `h + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropoutPlan {
    pub counts: Vec<usize>,
    pub source: PlanSource,
}

impl DropoutPlan {
    pub fn scripted(counts: Vec<usize>) -> Self {
        Self {
            counts,
            source: PlanSource::Scripted,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn max_entry(&self) -> usize {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn check_bound(&self, bound: usize) -> Result<(), ProtocolError> {
        match self.counts.iter().enumerate().find(|(_, &v)| v > bound) {
            Some((index, &value)) => Err(ProtocolError::PlanEntryTooLarge { index, value, bound }),
            None => Ok(()),
        }
    }

    /// Per-attempt view: `true` for a received transmission. The first
    /// attempt (at `t = 0`) is always a reception; each count `d` then
    /// contributes `d` losses followed by a reception.
    pub fn to_attempts(&self) -> Vec<bool> {
        let mut out = vec![true];
        for &d in &self.counts {
            out.extend(std::iter::repeat_n(false, d));
            out.push(true);
        }
        out
    }

    /// Inverse of [`Self::to_attempts`]. Trailing losses that are not closed
    /// by a reception are dropped.
    pub fn from_attempts(attempts: &[bool]) -> Result<Self, ProtocolError> {
        match attempts.first() {
            Some(true) => {}
            _ => return Err(ProtocolError::FirstAttemptLost),
        }
        let mut counts = Vec::new();
        let mut run = 0;
        for &ok in &attempts[1..] {
            if ok {
                counts.push(run);
                run = 0;
            } else {
                run += 1;
            }
        }
        Ok(Self::scripted(counts))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.counts).expect("integer array serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::scripted(serde_json::from_str(text)?))
    }
}

/// Draws `count` entries independently and uniformly on `{0, …, max_dropouts}`.
///
/// The stream is ChaCha8 seeded through `seed_from_u64`; each entry takes one
/// `u32` word with rejection of the biased tail, so the sequence depends only
/// on the seed and is identical across platforms.
pub fn generate_dropouts(max_dropouts: usize, count: usize, seed: u64) -> DropoutPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = max_dropouts as u64 + 1;
    let zone = (1u64 << 32) - ((1u64 << 32) % k);
    let counts = (0..count)
        .map(|_| loop {
            let word = rng.next_u32() as u64;
            if word < zone {
                break (word % k) as usize;
            }
        })
        .collect();
    DropoutPlan {
        counts,
        source: PlanSource::SeededUniform { seed, max_dropouts },
    }
}

/// A successful transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceptionEvent {
    /// Sampling index `k` with `time = k·T`.
    pub k: u64,
    pub time: f64,
    /// Received channel (1-based); always 1 in concentrated mode.
    pub channel: usize,
}

/// Reception instants implied by a plan, starting with channel 1 at `t = 0`.
/// Consecutive receptions are `(1 + d)·T` apart.
pub fn reception_times(
    plan: &DropoutPlan,
    period: f64,
    channels: usize,
    mode: SchedulingMode,
) -> Vec<ReceptionEvent> {
    let groups = match mode {
        SchedulingMode::RoundRobin => channels.max(1),
        SchedulingMode::Concentrated => 1,
    };
    let mut k = 0u64;
    let mut out = Vec::with_capacity(plan.len());
    for (h, &d) in plan.counts.iter().enumerate() {
        out.push(ReceptionEvent {
            k,
            time: k as f64 * period,
            channel: h % groups + 1,
        });
        k += 1 + d as u64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rr(p: usize, dbar: usize) -> Protocol {
        Protocol::new(p, dbar, SchedulingMode::RoundRobin).unwrap()
    }

    #[test]
    fn reception_advances_pi() {
        let proto = rr(3, 4);
        let s = proto.step(SchedulerState { pi: 1, sigma: 0 }, true).unwrap();
        assert_eq!(s, SchedulerState { pi: 2, sigma: 0 });
        let s = proto.step(SchedulerState { pi: 3, sigma: 0 }, true).unwrap();
        assert_eq!(s, SchedulerState { pi: 1, sigma: 0 });
    }

    #[test]
    fn dropout_increments_sigma() {
        let proto = rr(3, 4);
        let s = proto.step(SchedulerState { pi: 2, sigma: 1 }, false).unwrap();
        assert_eq!(s, SchedulerState { pi: 2, sigma: 2 });
    }

    #[test]
    fn dropout_beyond_bound_is_rejected() {
        let proto = rr(2, 1);
        let err = proto.step(SchedulerState { pi: 1, sigma: 1 }, false).unwrap_err();
        assert_eq!(err, ProtocolError::BoundViolation { attempted: 2, bound: 1 });
    }

    #[test]
    fn concentrated_only_sigma_moves() {
        let proto = Protocol::new(3, 2, SchedulingMode::Concentrated).unwrap();
        let s = proto.step(SchedulerState::initial(), false).unwrap();
        assert_eq!(s, SchedulerState { pi: 1, sigma: 1 });
        let s = proto.step(s, true).unwrap();
        assert_eq!(s, SchedulerState { pi: 1, sigma: 0 });
    }

    #[test]
    fn invalid_state_rejected() {
        let proto = rr(2, 1);
        assert!(proto.step(SchedulerState { pi: 3, sigma: 0 }, true).is_err());
        assert!(Protocol::new(0, 1, SchedulingMode::RoundRobin).is_err());
    }

    #[test]
    fn zero_bound_plan_is_all_zero() {
        assert_eq!(generate_dropouts(0, 5, 99).counts, vec![0; 5]);
    }

    #[test]
    fn plan_is_seed_deterministic() {
        assert_eq!(generate_dropouts(4, 10, 7), generate_dropouts(4, 10, 7));
        assert_ne!(generate_dropouts(4, 50, 7).counts, generate_dropouts(4, 50, 8).counts);
    }

    #[test]
    fn plan_frequencies_are_uniform() {
        let plan = generate_dropouts(4, 100_000, 1);
        let mut hist = [0usize; 5];
        for &d in &plan.counts {
            hist[d] += 1;
        }
        for h in hist {
            let f = h as f64 / 1e5;
            assert!((0.19..=0.21).contains(&f), "frequency {f}");
        }
    }

    #[test]
    fn reception_schedule_examples() {
        let ev = reception_times(&DropoutPlan::scripted(vec![0, 0, 0]), 1.0, 3, SchedulingMode::RoundRobin);
        let got: Vec<(f64, usize)> = ev.iter().map(|e| (e.time, e.channel)).collect();
        assert_eq!(got, vec![(0.0, 1), (1.0, 2), (2.0, 3)]);
        let ev = reception_times(&DropoutPlan::scripted(vec![2, 0]), 0.5, 2, SchedulingMode::RoundRobin);
        let got: Vec<(f64, usize)> = ev.iter().map(|e| (e.time, e.channel)).collect();
        assert_eq!(got, vec![(0.0, 1), (1.5, 2)]);
    }

    #[test]
    fn generated_gaps_are_allowed_multiples() {
        let plan = generate_dropouts(4, 500, 1);
        let ev = reception_times(&plan, 0.02, 2, SchedulingMode::RoundRobin);
        let allowed: Vec<f64> = (1..=5).map(|m| m as f64 * 0.02).collect();
        for w in ev.windows(2) {
            let gap = w[1].time - w[0].time;
            assert!(allowed.iter().any(|a| (a - gap).abs() < 1e-12), "gap {gap}");
        }
    }

    #[test]
    fn attempts_round_trip_and_json() {
        let plan = DropoutPlan::scripted(vec![1, 0, 3, 2]);
        let attempts = plan.to_attempts();
        assert_eq!(attempts.len(), 1 + 4 + 6);
        assert_eq!(DropoutPlan::from_attempts(&attempts).unwrap(), plan);
        assert_eq!(plan.to_json(), "[1,0,3,2]");
        assert_eq!(DropoutPlan::from_json("[1,0,3,2]").unwrap(), plan);
        assert!(DropoutPlan::from_attempts(&[false, true]).is_err());
    }
}
