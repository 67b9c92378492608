use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::sim::VcpuId;

/// Scheduling priority. Declaration order is dispatch order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Prio {
    Boost,
    Under,
    Over,
    Blocked,
}

/// Per-PCPU ordered list: BOOST entries, then UNDER, then OVER; FIFO within a band.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunQueue {
    entries: VecDeque<(VcpuId, Prio)>,
}

impl RunQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Insert behind every entry of the same or better priority.
    pub fn insert(&mut self, id: VcpuId, prio: Prio) {
        debug_assert!(prio != Prio::Blocked, "blocked vcpu enqueued");
        let pos = self
            .entries
            .iter()
            .position(|&(_, p)| p > prio)
            .unwrap_or(self.entries.len());
        self.entries.insert(pos, (id, prio));
    }

    pub fn remove(&mut self, id: VcpuId) -> bool {
        match self.entries.iter().position(|&(v, _)| v == id) {
            Some(i) => {
                self.entries.remove(i);
                true
            }
            None => false,
        }
    }

    pub fn contains(&self, id: VcpuId) -> bool {
        self.entries.iter().any(|&(v, _)| v == id)
    }

    pub fn head(&self) -> Option<(VcpuId, Prio)> {
        self.entries.front().copied()
    }

    pub fn pop_head(&mut self) -> Option<(VcpuId, Prio)> {
        self.entries.pop_front()
    }

    /// Refresh each entry's band and restore the band order, keeping FIFO order within bands.
    pub fn resort(&mut self, mut prio_of: impl FnMut(VcpuId) -> Prio) {
        for e in self.entries.iter_mut() {
            e.1 = prio_of(e.0);
        }
        self.entries.make_contiguous().sort_by_key(|&(_, p)| p);
    }

    pub fn iter(&self) -> impl Iterator<Item = (VcpuId, Prio)> + '_ {
        self.entries.iter().copied()
    }

    /// True when bands appear as BOOST* UNDER* OVER* with no BLOCKED entries.
    pub fn is_ordered(&self) -> bool {
        self.entries.iter().all(|&(_, p)| p != Prio::Blocked)
            && self.entries.iter().zip(self.entries.iter().skip(1)).all(|(a, b)| a.1 <= b.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn insert_goes_to_band_tail() {
        let mut q = RunQueue::new();
        q.insert(VcpuId(1), Prio::Over);
        q.insert(VcpuId(2), Prio::Under);
        q.insert(VcpuId(3), Prio::Boost);
        q.insert(VcpuId(4), Prio::Under);
        q.insert(VcpuId(5), Prio::Boost);
        let ids: Vec<usize> = q.iter().map(|(v, _)| v.0).collect();
        assert_eq!(ids, vec![3, 5, 2, 4, 1]);
        assert!(q.is_ordered());
    }

    #[test]
    fn resort_is_stable() {
        let mut q = RunQueue::new();
        for i in 0..4 {
            q.insert(VcpuId(i), Prio::Over);
        }
        q.resort(|v| if v.0 % 2 == 1 { Prio::Under } else { Prio::Over });
        let ids: Vec<usize> = q.iter().map(|(v, _)| v.0).collect();
        assert_eq!(ids, vec![1, 3, 0, 2]);
    }

    fn prio_strategy() -> impl Strategy<Value = Prio> {
        prop_oneof![Just(Prio::Boost), Just(Prio::Under), Just(Prio::Over)]
    }

    proptest! {
        #[test]
        fn order_holds_under_random_ops(ops in proptest::collection::vec((0usize..8, prio_strategy(), any::<bool>()), 1..64)) {
            let mut q = RunQueue::new();
            for (id, prio, insert) in ops {
                let id = VcpuId(id);
                if insert && !q.contains(id) {
                    q.insert(id, prio);
                } else {
                    q.remove(id);
                }
                prop_assert!(q.is_ordered());
            }
        }

        #[test]
        fn fifo_within_band(prios in proptest::collection::vec(prio_strategy(), 1..32)) {
            let mut q = RunQueue::new();
            for (i, p) in prios.iter().enumerate() {
                q.insert(VcpuId(i), *p);
            }
            for band in [Prio::Boost, Prio::Under, Prio::Over] {
                let ids: Vec<usize> = q.iter().filter(|e| e.1 == band).map(|e| e.0 .0).collect();
                let mut sorted = ids.clone();
                sorted.sort();
                prop_assert_eq!(ids, sorted);
            }
        }
    }
}
