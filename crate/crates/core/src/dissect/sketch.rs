//! Deterministic mergeable quantile sketch.
//!
//! Values enter level 0 with weight 1. When level `h` holds at least
//! `base * (h + 1)^2` items it is sorted and every other item is promoted to
//! level `h + 1` with doubled weight, alternating between odd and even
//! positions on successive compactions. One compaction at level `h` shifts any
//! rank estimate by at most `2^h`, and a level-`h` compaction consumes at least
//! `capacity(h) - 1` items of weight `2^h`, so over `N` inserted values the
//! total rank error is bounded by `N * Σ 1 / (base * (h + 1)^2 - 1)`, which is
//! below `1.65 * N / (base - 1)` for every `N`. The running bound is also tracked
//! exactly in [`QuantileSketch::rank_error_bound`].
//!
//! No randomness is involved: the same inputs fed and merged in the same order
//! always produce the same sketch.

/// Default level-0 capacity. Gives a guaranteed rank error below `8.1e-4 * N`.
pub const DEFAULT_BASE_CAPACITY: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSketch {
    base: usize,
    levels: Vec<Vec<f32>>,
    parity: Vec<bool>,
    count: u64,
    error_bound: u64,
}

impl Default for QuantileSketch {
    fn default() -> Self {
        Self::new(DEFAULT_BASE_CAPACITY)
    }
}

impl QuantileSketch {
    pub fn new(base_capacity: usize) -> Self {
        assert!(base_capacity >= 2, "sketch capacity must be at least 2");
        Self {
            base: base_capacity,
            levels: vec![Vec::new()],
            parity: vec![false],
            count: 0,
            error_bound: 0,
        }
    }

    fn capacity(&self, level: usize) -> usize {
        let f = level + 1;
        self.base.saturating_mul(f * f)
    }

    /// Number of values inserted, including those merged in.
    pub fn count(&self) -> u64 {
        self.count
    }

    /// Upper bound on the absolute rank error of any query.
    pub fn rank_error_bound(&self) -> u64 {
        self.error_bound
    }

    /// Worst-case relative rank error for any stream length.
    pub fn guaranteed_relative_error(base_capacity: usize) -> f64 {
        (0..64)
            .map(|h| {
                let f = (h + 1) as f64;
                1.0 / (base_capacity as f64 * f * f - 1.0)
            })
            .sum()
    }

    pub fn retained(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn insert(&mut self, value: f32) {
        self.levels[0].push(value);
        self.count += 1;
        if self.levels[0].len() >= self.capacity(0) {
            self.compact_from(0);
        }
    }

    pub fn extend_from_slice(&mut self, mut values: &[f32]) {
        while !values.is_empty() {
            let room = self.capacity(0).saturating_sub(self.levels[0].len()).max(1);
            let (head, tail) = values.split_at(room.min(values.len()));
            self.levels[0].extend_from_slice(head);
            self.count += head.len() as u64;
            if self.levels[0].len() >= self.capacity(0) {
                self.compact_from(0);
            }
            values = tail;
        }
    }

    fn compact_from(&mut self, start: usize) {
        let mut h = start;
        while h < self.levels.len() {
            if self.levels[h].len() >= self.capacity(h) {
                self.compact(h);
            }
            h += 1;
        }
    }

    fn compact(&mut self, h: usize) {
        if self.levels.len() == h + 1 {
            self.levels.push(Vec::new());
            self.parity.push(false);
        }
        let mut buf = std::mem::take(&mut self.levels[h]);
        buf.sort_unstable_by(f32::total_cmp);
        let leftover = if buf.len() % 2 == 1 { buf.pop() } else { None };
        let offset = usize::from(self.parity[h]);
        self.parity[h] = !self.parity[h];
        let promoted = buf.iter().skip(offset).step_by(2).copied();
        self.levels[h + 1].extend(promoted);
        buf.clear();
        buf.extend(leftover);
        self.levels[h] = buf;
        self.error_bound += 1u64 << h.min(63);
    }

    /// Folds `other` into `self`. The combined error bound is the sum of both
    /// bounds plus whatever the follow-up compactions add.
    pub fn merge(&mut self, other: &QuantileSketch) {
        assert_eq!(self.base, other.base, "merging sketches with different capacities");
        while self.levels.len() < other.levels.len() {
            self.levels.push(Vec::new());
            self.parity.push(false);
        }
        for (h, items) in other.levels.iter().enumerate() {
            self.levels[h].extend_from_slice(items);
        }
        self.count += other.count;
        self.error_bound += other.error_bound;
        self.compact_from(0);
    }

    /// Weighted items sorted by value.
    fn weighted(&self) -> Vec<(f32, u64)> {
        let mut items: Vec<(f32, u64)> = self
            .levels
            .iter()
            .enumerate()
            .flat_map(|(h, l)| l.iter().map(move |&v| (v, 1u64 << h)))
            .collect();
        items.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        items
    }

    /// Estimated value of the `rank`-th smallest input (1-based).
    pub fn value_at_rank(&self, rank: u64) -> Option<f32> {
        if self.count == 0 {
            return None;
        }
        let rank = rank.clamp(1, self.count);
        let mut cumulative = 0u64;
        let items = self.weighted();
        for &(v, w) in &items {
            cumulative += w;
            if cumulative >= rank {
                return Some(v);
            }
        }
        items.last().map(|&(v, _)| v)
    }

    /// Estimated number of inputs `<= value`.
    pub fn rank_of(&self, value: f32) -> u64 {
        self.levels
            .iter()
            .enumerate()
            .map(|(h, l)| l.iter().filter(|&&v| v.total_cmp(&value).is_le()).count() as u64 * (1u64 << h))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn true_rank_interval(sorted: &[f32], v: f32) -> (u64, u64) {
        let below = sorted.partition_point(|x| x.total_cmp(&v).is_lt()) as u64;
        let upto = sorted.partition_point(|x| x.total_cmp(&v).is_le()) as u64;
        (below + 1, upto)
    }

    fn rank_distance(sorted: &[f32], v: f32, r: u64) -> u64 {
        let (lo, hi) = true_rank_interval(sorted, v);
        if r < lo {
            lo - r
        } else if r > hi {
            r - hi
        } else {
            0
        }
    }

    #[test]
    fn exact_while_below_capacity() {
        let mut s = QuantileSketch::new(64);
        for v in (0..50).rev() {
            s.insert(v as f32);
        }
        assert_eq!(s.rank_error_bound(), 0);
        for r in 1..=50 {
            assert_eq!(s.value_at_rank(r), Some((r - 1) as f32));
        }
    }

    #[test]
    fn guaranteed_bound_below_one_per_mille() {
        assert!(QuantileSketch::guaranteed_relative_error(DEFAULT_BASE_CAPACITY) < 8.1e-4);
    }

    #[test]
    fn weight_is_conserved() {
        let mut s = QuantileSketch::new(16);
        let values: Vec<f32> = (0..10_007).map(|i| ((i * 7919) % 10_007) as f32).collect();
        s.extend_from_slice(&values);
        let total: u64 = s.weighted().iter().map(|&(_, w)| w).sum();
        assert_eq!(total, s.count());
        assert_eq!(s.count(), 10_007);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn rank_error_within_tracked_bound(
            values in prop::collection::vec(-1e3f32..1e3, 1..6000),
            split in 0usize..6000,
            base in 4usize..64,
            q in 0.0f64..1.0,
        ) {
            let split = split.min(values.len());
            let mut a = QuantileSketch::new(base);
            a.extend_from_slice(&values[..split]);
            let mut b = QuantileSketch::new(base);
            for &v in &values[split..] {
                b.insert(v);
            }
            a.merge(&b);
            let mut sorted = values.clone();
            sorted.sort_unstable_by(f32::total_cmp);
            let n = values.len() as u64;
            let r = ((q * n as f64).ceil() as u64).clamp(1, n);
            let v = a.value_at_rank(r).unwrap();
            prop_assert!(rank_distance(&sorted, v, r) <= a.rank_error_bound());
            let bound = QuantileSketch::guaranteed_relative_error(base) * n as f64;
            prop_assert!(a.rank_error_bound() as f64 <= bound + 1.0);
        }

        #[test]
        fn merge_order_keeps_bound(chunks in prop::collection::vec(prop::collection::vec(0f32..100.0, 0..400), 1..12)) {
            let mut forward = QuantileSketch::new(8);
            for c in &chunks {
                let mut s = QuantileSketch::new(8);
                s.extend_from_slice(c);
                forward.merge(&s);
            }
            let mut all: Vec<f32> = chunks.concat();
            prop_assume!(!all.is_empty());
            all.sort_unstable_by(f32::total_cmp);
            let n = all.len() as u64;
            for r in [1, n / 2 + 1, n] {
                let v = forward.value_at_rank(r).unwrap();
                prop_assert!(rank_distance(&all, v, r) <= forward.rank_error_bound());
            }
        }
    }
}
