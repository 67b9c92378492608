use std::cmp::{Ordering, Reverse};
use std::collections::hash_map::DefaultHasher;
use std::collections::{BinaryHeap, HashSet};
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::time::VirtualTime;
use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VcpuId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PcpuId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// Periodic 10 ms tick (debit for Credit, exact settlement for Exact).
    DebitTick,
    /// A fast tick that is also a 30 ms boundary: debit, then refill and round-robin.
    RescheduleTick,
    /// Randomized sample (Poisson / Bernoulli) on one PCPU.
    SampleArrival(PcpuId),
    /// Start of a Uniform sampling window (takes the place of the fast tick).
    UniformWindowStart,
    VcpuWake(VcpuId),
    /// End of the current workload burst of a running VCPU.
    WorkloadTimer(VcpuId),
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::DebitTick => "debit_tick",
            EventKind::RescheduleTick => "reschedule_tick",
            EventKind::SampleArrival(_) => "sample_arrival",
            EventKind::UniformWindowStart => "uniform_window_start",
            EventKind::VcpuWake(_) => "vcpu_wake",
            EventKind::WorkloadTimer(_) => "workload_timer",
        }
    }

    /// Tie-break rank at equal times. Samples go first so they observe the
    /// VCPU that was running up to the instant, then ticks, then workload
    /// events.
    pub fn rank(&self) -> u8 {
        match self {
            EventKind::SampleArrival(_) => 0,
            EventKind::DebitTick | EventKind::RescheduleTick | EventKind::UniformWindowStart => 1,
            EventKind::VcpuWake(_) | EventKind::WorkloadTimer(_) => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub at: VirtualTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.at
            .cmp(&other.at)
            .then_with(|| self.kind.rank().cmp(&other.kind.rank()))
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Opaque handle returned by [`EventQueue::schedule`]; used to cancel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

/// Virtual clock plus a min-heap of pending events ordered by
/// `(at, rank, seq)`.
///
/// `seq` is a monotone insertion counter, so simultaneous events of the
/// same rank dispatch in FIFO order. Every dispatched event is folded into
/// a running digest which identifies the trace for replay checks.
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    cancelled: HashSet<u64>,
    next_seq: u64,
    now: VirtualTime,
    dispatched: u64,
    digest: DefaultHasher,
}

impl Default for EventQueue {
    fn default() -> Self {
        Self::new()
    }
}

impl EventQueue {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            next_seq: 0,
            now: VirtualTime::ZERO,
            dispatched: 0,
            digest: DefaultHasher::new(),
        }
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn schedule(&mut self, at: VirtualTime, kind: EventKind) -> Result<EventHandle, SimError> {
        if at < self.now {
            return Err(SimError::ScheduleInPast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event { at, seq, kind }));
        Ok(EventHandle(seq))
    }

    /// Cancel a pending event. Returns false if it was already dispatched or cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq {
            return false;
        }
        let pending = self.heap.iter().any(|Reverse(e)| e.seq == handle.0);
        pending && self.cancelled.insert(handle.0)
    }

    /// Pop the next live event with `at <= t_end`, advancing the clock to it.
    pub fn pop_until(&mut self, t_end: VirtualTime) -> Option<Event> {
        loop {
            let Reverse(top) = *self.heap.peek()?;
            if top.at > t_end {
                return None;
            }
            self.heap.pop();
            if self.cancelled.remove(&top.seq) {
                continue;
            }
            self.now = top.at;
            self.dispatched += 1;
            top.at.hash(&mut self.digest);
            top.seq.hash(&mut self.digest);
            top.kind.hash(&mut self.digest);
            return Some(top);
        }
    }

    /// Advance the clock without dispatching; only valid forward.
    pub fn advance_to(&mut self, t: VirtualTime) -> Result<(), SimError> {
        if t < self.now {
            return Err(SimError::ScheduleInPast { at: t, now: self.now });
        }
        self.now = t;
        Ok(())
    }

    /// Digest of the `(at, seq, kind)` sequence dispatched so far.
    pub fn trace_digest(&self) -> u64 {
        self.digest.clone().finish()
    }
}

/// Dispatch every event with `at <= t_end` through `handler`, then leave the clock at `t_end`.
pub fn run_until<E, F>(queue: &mut EventQueue, t_end: VirtualTime, mut handler: F) -> Result<(), E>
where
    F: FnMut(&mut EventQueue, Event) -> Result<(), E>,
    E: From<SimError>,
{
    if t_end < queue.now() {
        return Err(SimError::ScheduleInPast { at: t_end, now: queue.now() }.into());
    }
    while let Some(ev) = queue.pop_until(t_end) {
        handler(queue, ev)?;
    }
    queue.advance_to(t_end)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_event_pops() {
        let mut q = EventQueue::new();
        q.schedule(VirtualTime::from_micros(10_000), EventKind::DebitTick).unwrap();
        let ev = q.pop_until(VirtualTime::from_millis(100)).unwrap();
        assert_eq!(ev.at, VirtualTime::from_micros(10_000));
        assert_eq!(ev.kind, EventKind::DebitTick);
        assert!(q.pop_until(VirtualTime::from_millis(100)).is_none());
    }

    #[test]
    fn ties_dispatch_in_insertion_order() {
        let mut q = EventQueue::new();
        for i in 0..7 {
            q.schedule(VirtualTime::from_micros(1_000 + i), EventKind::DebitTick).unwrap();
        }
        let a = q.schedule(VirtualTime::from_micros(500), EventKind::VcpuWake(VcpuId(1))).unwrap();
        let b = q.schedule(VirtualTime::from_micros(500), EventKind::VcpuWake(VcpuId(2))).unwrap();
        assert_eq!((a.0, b.0), (7, 8));
        let first = q.pop_until(VirtualTime::from_micros(500)).unwrap();
        let second = q.pop_until(VirtualTime::from_micros(500)).unwrap();
        assert_eq!((first.seq, second.seq), (7, 8));
        assert_eq!(first.kind, EventKind::VcpuWake(VcpuId(1)));
    }

    #[test]
    fn samples_precede_ticks_precede_workload_events() {
        let mut q = EventQueue::new();
        let t = VirtualTime::from_millis(30);
        q.schedule(t, EventKind::VcpuWake(VcpuId(0))).unwrap();
        q.schedule(t, EventKind::RescheduleTick).unwrap();
        q.schedule(t, EventKind::SampleArrival(PcpuId(0))).unwrap();
        let order: Vec<EventKind> = std::iter::from_fn(|| q.pop_until(t)).map(|e| e.kind).collect();
        assert_eq!(
            order,
            vec![EventKind::SampleArrival(PcpuId(0)), EventKind::RescheduleTick, EventKind::VcpuWake(VcpuId(0))]
        );
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut q = EventQueue::new();
        q.advance_to(VirtualTime::from_micros(10)).unwrap();
        let err = q.schedule(VirtualTime::from_micros(5), EventKind::DebitTick).unwrap_err();
        assert!(matches!(err, SimError::ScheduleInPast { .. }));
    }

    #[test]
    fn cancelled_events_never_dispatch() {
        let mut q = EventQueue::new();
        let h = q.schedule(VirtualTime::from_micros(5), EventKind::DebitTick).unwrap();
        q.schedule(VirtualTime::from_micros(6), EventKind::UniformWindowStart).unwrap();
        assert!(q.cancel(h));
        assert!(!q.cancel(h));
        assert_eq!(q.pending(), 1);
        let ev = q.pop_until(VirtualTime::from_micros(100)).unwrap();
        assert_eq!(ev.kind, EventKind::UniformWindowStart);
        assert!(!q.cancel(EventHandle(ev.seq)));
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut q = EventQueue::new();
        let mut n = 0;
        run_until::<SimError, _>(&mut q, VirtualTime::from_millis(1_000), |_, _| {
            n += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(n, 0);
        assert_eq!(q.now(), VirtualTime::from_millis(1_000));
    }

    #[test]
    fn self_rearming_tick_dispatches_ten_times() {
        let mut q = EventQueue::new();
        let period = super::super::Duration::from_millis(10);
        q.schedule(VirtualTime::ZERO + period, EventKind::DebitTick).unwrap();
        let mut n = 0;
        run_until::<SimError, _>(&mut q, VirtualTime::from_millis(100), |q, ev| {
            n += 1;
            q.schedule(ev.at + period, ev.kind)?;
            Ok(())
        })
        .unwrap();
        assert_eq!(n, 10);
        assert_eq!(q.now(), VirtualTime::from_millis(100));
    }

    #[test]
    fn dispatch_order_strictly_increases() {
        let mut q = EventQueue::new();
        let times = [30u64, 10, 10, 20, 0, 30, 10];
        for t in times {
            q.schedule(VirtualTime::from_micros(t), EventKind::DebitTick).unwrap();
        }
        let mut last: Option<(VirtualTime, u64)> = None;
        while let Some(ev) = q.pop_until(VirtualTime::from_micros(100)) {
            if let Some(prev) = last {
                assert!(prev < (ev.at, ev.seq));
            }
            last = Some((ev.at, ev.seq));
        }
    }
}
