//! Shared experience buffer with hybrid TD-error + recency priorities.
//!
//! Transitions carry a stored priority p and birth timestep t. Sampling is
//! proportional to stored priorities via a segment tree (O(log N) per draw,
//! with replacement); importance-sampling weights are (1 / (N * P(i)))^beta,
//! normalized so the batch maximum is 1. The sliding-window baseline is this
//! same buffer configured with a small capacity.

use rand::Rng;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot sample from an empty buffer")]
    Empty,
    #[error("invalid priority params: {0}")]
    InvalidParams(String),
    #[error("indices and deltas length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// One experience tuple as stored in the buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub priority: f64,
    pub birth_step: u64,
}

/// Knobs of the hybrid sampling rule.
///
/// `mix_beta` blends the TD term against the recency term; `decay_alpha` is
/// the per-step exponential time decay; `td_exponent`/`td_epsilon` shape the
/// TD magnitude term; `is_beta` is the importance-sampling exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityParams {
    pub mix_beta: f64,
    pub decay_alpha: f64,
    pub td_exponent: f64,
    pub td_epsilon: f64,
    pub is_beta: f64,
}

impl Default for PriorityParams {
    fn default() -> Self {
        Self {
            mix_beta: 0.5,
            decay_alpha: 1e-4,
            td_exponent: 1.0,
            td_epsilon: 1e-2,
            is_beta: 0.6,
        }
    }
}

impl PriorityParams {
    /// TD-only proportional prioritization (the baseline agents' setting).
    pub fn td_only() -> Self {
        Self { mix_beta: 1.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ReplayError> {
        if !(0.0..=1.0).contains(&self.mix_beta) {
            return Err(ReplayError::InvalidParams("mix_beta must be in [0,1]".into()));
        }
        if self.decay_alpha <= 0.0 {
            return Err(ReplayError::InvalidParams("decay_alpha must be > 0".into()));
        }
        if self.td_exponent <= 0.0 {
            return Err(ReplayError::InvalidParams("td_exponent must be > 0".into()));
        }
        if self.td_epsilon <= 0.0 {
            return Err(ReplayError::InvalidParams("td_epsilon must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.is_beta) {
            return Err(ReplayError::InvalidParams("is_beta must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Hybrid priority: mix_beta * (|delta| + eps)^exponent
///                + (1 - mix_beta) * exp(-decay_alpha * age).
pub fn priority(delta: f64, age: u64, params: &PriorityParams) -> f64 {
    let td = (delta.abs() + params.td_epsilon).powf(params.td_exponent);
    let time = (-params.decay_alpha * age as f64).exp();
    params.mix_beta * td + (1.0 - params.mix_beta) * time
}

/// Segment trees over priority leaves: one for proportional-prefix sampling
/// (sums) and one for max-priority insertion (maxima). Leaves are padded to
/// the next power of two.
#[derive(Debug, Clone)]
struct PriorityIndex {
    leaves: usize,
    sum: Vec<f64>,
    max: Vec<f64>,
}

impl PriorityIndex {
    fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two().max(1);
        Self { leaves, sum: vec![0.0; 2 * leaves], max: vec![0.0; 2 * leaves] }
    }

    fn set(&mut self, slot: usize, p: f64) {
        debug_assert!(slot < self.leaves);
        let mut i = self.leaves + slot;
        self.sum[i] = p;
        self.max[i] = p;
        while i > 1 {
            i /= 2;
            self.sum[i] = self.sum[2 * i] + self.sum[2 * i + 1];
            self.max[i] = self.max[2 * i].max(self.max[2 * i + 1]);
        }
    }

    fn total(&self) -> f64 {
        self.sum[1]
    }

    fn max(&self) -> f64 {
        self.max[1]
    }

    /// Leaf whose prefix-sum interval contains `u`, for u in [0, total).
    fn find(&self, mut u: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let left = self.sum[2 * i];
            if u < left {
                i = 2 * i;
            } else {
                u -= left;
                i = 2 * i + 1;
            }
        }
        i - self.leaves
    }
}

/// A batch drawn from the buffer: insertion ids (pass back to
/// `update_priorities`), cloned transitions, exact sampling probabilities,
/// and batch-max-normalized importance weights.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub ids: Vec<u64>,
    pub transitions: Vec<Transition>,
    pub probs: Vec<f64>,
    pub is_weights: Vec<f64>,
}

/// Ring buffer with FIFO eviction and a cumulative-priority index.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Transition>,
    insert_count: u64,
    index: PriorityIndex,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            capacity,
            slots: Vec::with_capacity(capacity),
            insert_count: 0,
            index: PriorityIndex::new(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Configured capacity; the sliding-window baseline is this same buffer
    /// with a small value here.
    pub fn window_capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_priority(&self) -> f64 {
        self.index.total()
    }

    pub fn max_priority(&self) -> f64 {
        self.index.max()
    }

    /// Store a transition whose priority the caller already computed.
    /// Evicts the oldest entry once at capacity. Returns the insertion id.
    pub fn push(&mut self, transition: Transition) -> u64 {
        debug_assert!(transition.priority >= 0.0);
        let id = self.insert_count;
        let slot = (id % self.capacity as u64) as usize;
        let p = transition.priority;
        if slot == self.slots.len() {
            self.slots.push(transition);
        } else {
            self.slots[slot] = transition;
        }
        self.index.set(slot, p);
        self.insert_count += 1;
        id
    }

    /// Store with the current maximum stored priority (1.0 when empty).
    pub fn push_max_priority(&mut self, mut transition: Transition) -> u64 {
        let p = if self.is_empty() { 1.0 } else { self.max_priority() };
        transition.priority = p;
        self.push(transition)
    }

    fn oldest_resident_id(&self) -> u64 {
        self.insert_count - self.slots.len() as u64
    }

    fn slot_of(&self, id: u64) -> Option<usize> {
        if id < self.insert_count && id >= self.oldest_resident_id() {
            Some((id % self.capacity as u64) as usize)
        } else {
            None
        }
    }

    pub fn get(&self, id: u64) -> Option<&Transition> {
        self.slot_of(id).map(|s| &self.slots[s])
    }

    /// Draw `batch_size` transitions with replacement, proportional to the
    /// stored priorities.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        params: &PriorityParams,
        rng: &mut R,
    ) -> Result<SampleBatch, ReplayError> {
        if self.is_empty() {
            return Err(ReplayError::Empty);
        }
        let total = self.index.total();
        debug_assert!(total > 0.0);
        let n = self.len() as f64;
        let mut ids = Vec::with_capacity(batch_size);
        let mut transitions = Vec::with_capacity(batch_size);
        let mut probs = Vec::with_capacity(batch_size);
        let mut raw_w = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let u = rng.random_range(0.0..total);
            let slot = self.index.find(u).min(self.len() - 1);
            let t = &self.slots[slot];
            let p = t.priority / total;
            ids.push(self.id_of_slot(slot));
            transitions.push(t.clone());
            probs.push(p);
            raw_w.push((1.0 / (n * p)).powf(params.is_beta));
        }
        let w_max = raw_w.iter().fold(f64::MIN, |m, &w| m.max(w));
        let is_weights = raw_w.iter().map(|w| w / w_max).collect();
        Ok(SampleBatch { ids, transitions, probs, is_weights })
    }

    fn id_of_slot(&self, slot: usize) -> u64 {
        // The id resident in `slot` is the largest id congruent to `slot`
        // modulo capacity that is below insert_count.
        let count = self.insert_count;
        let cap = self.capacity as u64;
        let slot = slot as u64;
        let last = count - 1;
        last - ((last % cap + cap - slot) % cap)
    }

    /// Recompute priorities of still-resident transitions from fresh
    /// TD-errors and the current global step; evicted ids are skipped.
    pub fn update_priorities(
        &mut self,
        ids: &[u64],
        deltas: &[f64],
        now_step: u64,
        params: &PriorityParams,
    ) -> Result<(), ReplayError> {
        if ids.len() != deltas.len() {
            return Err(ReplayError::LengthMismatch(ids.len(), deltas.len()));
        }
        for (&id, &delta) in ids.iter().zip(deltas.iter()) {
            let Some(slot) = self.slot_of(id) else { continue };
            let age = now_step.saturating_sub(self.slots[slot].birth_step);
            let p = priority(delta, age, params);
            self.slots[slot].priority = p;
            self.index.set(slot, p);
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.slots.iter()
    }

    /// Debug dump, one flat record per line: s a r s' done p t.
    pub fn dump_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.slots {
            let s: Vec<String> = t.state.iter().map(|x| x.to_string()).collect();
            let sn: Vec<String> = t.next_state.iter().map(|x| x.to_string()).collect();
            writeln!(
                w,
                "{} {} {} {} {} {} {}",
                s.join(","),
                t.action,
                t.reward,
                sn.join(","),
                t.done,
                t.priority,
                t.birth_step
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(p: f64, t: u64) -> Transition {
        Transition {
            state: vec![0.0, 0.0],
            action: 0,
            reward: -1.0,
            next_state: vec![0.0, 0.0],
            done: false,
            priority: p,
            birth_step: t,
        }
    }

    #[test]
    fn priority_direct_substitution() {
        let params = PriorityParams {
            mix_beta: 0.5,
            decay_alpha: 0.05,
            td_exponent: 1.0,
            td_epsilon: 0.01,
            is_beta: 0.6,
        };
        let p = priority(0.0, 0, &params);
        assert!((p - 0.505).abs() < 1e-12);
    }

    #[test]
    fn priority_td_only_and_time_only() {
        let td = PriorityParams { mix_beta: 1.0, td_epsilon: 0.01, ..Default::default() };
        assert!((priority(2.0, 123, &td) - 2.01).abs() < 1e-12);

        let time = PriorityParams { mix_beta: 0.0, decay_alpha: 0.05, ..Default::default() };
        let p = priority(5.0, 20, &time);
        let expect = (-1.0f64).exp();
        assert!((p - expect).abs() / expect < 1e-9);
    }

    #[test]
    fn priority_is_strictly_positive() {
        let params = PriorityParams::default();
        assert!(priority(0.0, u64::MAX / 2, &params) > 0.0);
    }

    #[test]
    fn push_and_fifo_eviction() {
        let mut buf = ReplayBuffer::new(3);
        buf.push(tr(1.0, 0));
        assert_eq!(buf.len(), 1);
        assert!((buf.total_priority() - 1.0).abs() < 1e-12);

        for i in 1..4 {
            buf.push(tr(1.0 + i as f64, i));
        }
        // Four pushes into capacity 3: transition with birth 0 evicted.
        assert_eq!(buf.len(), 3);
        assert!(buf.iter().all(|t| t.birth_step != 0));
        assert!(buf.get(0).is_none());
        assert_eq!(buf.get(3).unwrap().birth_step, 3);
    }

    #[test]
    fn max_priority_insertion() {
        let mut buf = ReplayBuffer::new(8);
        buf.push(tr(0.5, 0));
        buf.push(tr(2.5, 1));
        buf.push(tr(1.0, 2));
        let id = buf.push_max_priority(tr(0.0, 3));
        assert_eq!(buf.get(id).unwrap().priority, 2.5);

        let mut empty = ReplayBuffer::new(4);
        let id = empty.push_max_priority(tr(0.0, 0));
        assert_eq!(empty.get(id).unwrap().priority, 1.0);
    }

    #[test]
    fn sample_probabilities_normalize() {
        let mut buf = ReplayBuffer::new(4);
        buf.push(tr(1.0, 0));
        buf.push(tr(3.0, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = buf.sample(16, &PriorityParams::default(), &mut rng).unwrap();
        for (id, p) in batch.ids.iter().zip(batch.probs.iter()) {
            let expect = if *id == 0 { 0.25 } else { 0.75 };
            assert!((p - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_priorities_give_unit_weights() {
        let mut buf = ReplayBuffer::new(8);
        for i in 0..5 {
            buf.push(tr(0.7, i));
        }
        let params = PriorityParams { is_beta: 1.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = buf.sample(12, &params, &mut rng).unwrap();
        assert!(batch.is_weights.iter().all(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn batch_max_weight_is_one() {
        let mut buf = ReplayBuffer::new(16);
        for i in 0..10 {
            buf.push(tr(0.1 + i as f64, i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let batch = buf.sample(8, &PriorityParams::default(), &mut rng).unwrap();
            let max = batch.is_weights.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(max, 1.0);
        }
    }

    #[test]
    fn empty_buffer_sample_errors() {
        let buf = ReplayBuffer::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            buf.sample(1, &PriorityParams::default(), &mut rng),
            Err(ReplayError::Empty)
        ));
    }

    #[test]
    fn empirical_frequencies_match_probabilities() {
        let mut buf = ReplayBuffer::new(4);
        buf.push(tr(1.0, 0));
        buf.push(tr(2.0, 1));
        buf.push(tr(7.0, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 3];
        let draws = 100_000;
        let params = PriorityParams::default();
        for _ in 0..draws / 100 {
            let batch = buf.sample(100, &params, &mut rng).unwrap();
            for id in batch.ids {
                counts[id as usize] += 1;
            }
        }
        let expect = [0.1, 0.2, 0.7];
        for (c, e) in counts.iter().zip(expect.iter()) {
            let freq = *c as f64 / draws as f64;
            assert!((freq - e).abs() <= 0.015, "freq {freq} vs {e}");
        }
    }

    #[test]
    fn update_priorities_recomputes_with_age() {
        let params = PriorityParams::default(); // mix_beta 0.5 < 1
        let mut buf = ReplayBuffer::new(8);
        let id = buf.push(tr(priority(0.5, 0, &params), 100));
        buf.update_priorities(&[id], &[0.5], 100, &params).unwrap();
        let p_young = buf.get(id).unwrap().priority;
        buf.update_priorities(&[id], &[0.5], 5100, &params).unwrap();
        let p_old = buf.get(id).unwrap().priority;
        assert!(p_old < p_young, "decay must lower priority: {p_old} vs {p_young}");

        // Doubling |delta| with mix_beta = 1, exponent = 1 raises p by the
        // TD-term difference exactly.
        let td = PriorityParams::td_only();
        let mut buf = ReplayBuffer::new(8);
        let id = buf.push(tr(priority(1.0, 0, &td), 0));
        buf.update_priorities(&[id], &[1.0], 0, &td).unwrap();
        let p1 = buf.get(id).unwrap().priority;
        buf.update_priorities(&[id], &[2.0], 0, &td).unwrap();
        let p2 = buf.get(id).unwrap().priority;
        assert!((p2 - p1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evicted_ids_skipped_silently() {
        let params = PriorityParams::default();
        let mut buf = ReplayBuffer::new(2);
        let id0 = buf.push(tr(1.0, 0));
        buf.push(tr(1.0, 1));
        buf.push(tr(1.0, 2)); // evicts id0
        let before = buf.total_priority();
        buf.update_priorities(&[id0], &[100.0], 3, &params).unwrap();
        assert_eq!(buf.total_priority(), before);
    }

    #[test]
    fn index_total_matches_brute_force_rebuild() {
        let params = PriorityParams::default();
        let mut buf = ReplayBuffer::new(64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..200u64 {
            buf.push(tr(priority(rng.random_range(0.0..3.0), 0, &params), i));
        }
        let batch = buf.sample(32, &params, &mut rng).unwrap();
        let deltas: Vec<f64> = (0..32).map(|_| rng.random_range(0.0..5.0)).collect();
        buf.update_priorities(&batch.ids, &deltas, 200, &params).unwrap();

        let rebuilt: f64 = buf.iter().map(|t| t.priority).sum();
        let total = buf.total_priority();
        assert!(
            (total - rebuilt).abs() / rebuilt <= 1e-9,
            "index total {total} vs rebuilt {rebuilt}"
        );
    }

    #[test]
    fn limiting_cases_reduce_to_known_rules() {
        // mix_beta = 1, exponent = 1, epsilon -> 0: proportional PER.
        let mut params = PriorityParams::td_only();
        params.td_epsilon = 1e-12;
        let p = priority(1.5, 999, &params);
        assert!((p - 1.5).abs() < 1e-9);

        // mix_beta = 0: pure recency weighting.
        let recency = PriorityParams { mix_beta: 0.0, decay_alpha: 0.01, ..Default::default() };
        let p = priority(42.0, 100, &recency);
        assert!((p - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn snapshot_dump_has_one_line_per_transition() {
        let mut buf = ReplayBuffer::new(4);
        buf.push(tr(1.0, 0));
        buf.push(tr(2.0, 1));
        let mut out = Vec::new();
        buf.dump_snapshot(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
}
