//! Credit scheduler state machine and its charging variants.
//!
//! Each PCPU owns a [`RunQueue`]; the running VCPU is kept off the queue.
//! Credits are refilled every reschedule tick and debited by whatever the
//! selected [`Variant`] uses as its usage measurement: the fixed fast tick,
//! exact run time at dispatch boundaries, or one of the randomized sampling
//! clocks. Every context switch is logged as a [`Switch`] for the owner to
//! drive workloads.

mod config;
mod runqueue;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use config::{ConfigError, Mode, SchedulerConfig, Variant};
pub use runqueue::{Prio, RunQueue};

use crate::metrics::{UsageLedger, CREDIT_US};
use crate::sim::{
    sample_geometric_slots, sample_trunc_exp, Duration, EventKind, EventQueue, PcpuId, SimError,
    SimRng, VcpuId, VirtualTime,
};

#[derive(Clone, Debug, PartialEq)]
pub struct VCpu {
    pub id: VcpuId,
    pub credits: i64,
    pub prio: Prio,
    pub pcpu: PcpuId,
    pub last_dispatch_at: VirtualTime,
    /// Fraction of one PCPU this VCPU is entitled to.
    pub weight_share: f64,
    /// Exact variant: run time not yet converted into whole credits.
    pub remainder_us: u64,
}

/// A change of the running VCPU on one PCPU (`None` is idle).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Switch {
    pub pcpu: PcpuId,
    pub at: VirtualTime,
    pub prev: Option<VcpuId>,
    pub next: Option<VcpuId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerStats {
    /// Debit opportunities (ticks, samples, virtual samples, exact settlements).
    pub samples: u64,
    /// Samples that found the PCPU idle.
    pub idle_samples: u64,
    /// Sum of generated inter-sample intervals (randomized clocks only).
    pub interval_sum_us: u64,
    pub intervals: u64,
}

impl SamplerStats {
    pub fn mean_interval_us(&self) -> Option<f64> {
        (self.intervals > 0).then(|| self.interval_sum_us as f64 / self.intervals as f64)
    }
}

/// Where sampling times and uniform offsets come from.
#[derive(Clone, Debug)]
pub enum SampleSource {
    Random(SimRng),
    /// Fixed intervals (Poisson, Bernoulli) or offsets (Uniform), consumed in order.
    /// Once exhausted, randomized clocks stop and Uniform offsets fall back to 0.
    Scripted(VecDeque<Duration>),
}

#[derive(Clone, Copy, Debug, Default)]
struct UniformWindow {
    t0: VirtualTime,
    offset: Duration,
    charged: bool,
}

impl UniformWindow {
    fn sample_at(&self) -> VirtualTime {
        self.t0 + self.offset
    }
}

#[derive(Clone, Debug)]
struct Pcpu {
    runq: RunQueue,
    current: Option<VcpuId>,
    /// Start of the current run (or idle) interval, for the ledger.
    since: VirtualTime,
    /// Exact variant: time of the last settlement of the running VCPU.
    charge_since: VirtualTime,
    window: UniformWindow,
    source: SampleSource,
}

enum Outgoing {
    Requeue,
    Block,
}

pub struct Scheduler {
    cfg: SchedulerConfig,
    debit: i64,
    vcpus: Vec<VCpu>,
    pcpus: Vec<Pcpu>,
    ledger: UsageLedger,
    switches: Vec<Switch>,
    stats: SamplerStats,
}

/// RNG component id base for per-PCPU sampling streams.
pub const SAMPLER_STREAM_BASE: u32 = 1 << 20;

impl Scheduler {
    /// `placement[i]` is the PCPU of VCPU `i`. All VCPUs start runnable with zero credits.
    pub fn new(
        cfg: SchedulerConfig,
        pcpus: usize,
        placement: &[PcpuId],
        seed: u64,
        replica: u32,
        measure_from: VirtualTime,
    ) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let mut per_pcpu = vec![0usize; pcpus];
        for p in placement {
            per_pcpu[p.0] += 1;
        }
        let vcpus = placement
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let share = match (cfg.mode, cfg.cap_percent) {
                    (Mode::NonWorkConserving, Some(cap)) => cap / 100.0,
                    _ => 1.0 / per_pcpu[p.0] as f64,
                };
                VCpu {
                    id: VcpuId(i),
                    credits: 0,
                    prio: Prio::Over,
                    pcpu: p,
                    last_dispatch_at: VirtualTime::ZERO,
                    weight_share: share,
                    remainder_us: 0,
                }
            })
            .collect();
        let pcpus = (0..pcpus)
            .map(|p| Pcpu {
                runq: RunQueue::new(),
                current: None,
                since: VirtualTime::ZERO,
                charge_since: VirtualTime::ZERO,
                window: UniformWindow::default(),
                source: SampleSource::Random(SimRng::for_component(
                    seed,
                    replica,
                    SAMPLER_STREAM_BASE + p as u32,
                )),
            })
            .collect();
        let mut s = Scheduler {
            debit: cfg.debit_amount(),
            cfg,
            vcpus,
            pcpus,
            ledger: UsageLedger::new(placement.len(), per_pcpu.len(), measure_from),
            switches: Vec::new(),
            stats: SamplerStats::default(),
        };
        for i in 0..s.vcpus.len() {
            let v = &s.vcpus[i];
            s.pcpus[v.pcpu.0].runq.insert(v.id, v.prio);
        }
        Ok(s)
    }

    /// Replace the sampling source of one PCPU (fixed sample times for oracles).
    pub fn set_sample_source(&mut self, pcpu: PcpuId, source: SampleSource) {
        self.pcpus[pcpu.0].source = source;
    }

    /// Put `vcpu` in the BLOCKED state before the run starts.
    pub fn start_blocked(&mut self, vcpu: VcpuId) {
        let v = &mut self.vcpus[vcpu.0];
        self.pcpus[v.pcpu.0].runq.remove(vcpu);
        v.prio = Prio::Blocked;
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }

    pub fn debit_per_sample(&self) -> i64 {
        self.debit
    }

    pub fn vcpu(&self, id: VcpuId) -> &VCpu {
        &self.vcpus[id.0]
    }

    pub fn vcpus(&self) -> &[VCpu] {
        &self.vcpus
    }

    pub fn current(&self, pcpu: PcpuId) -> Option<VcpuId> {
        self.pcpus[pcpu.0].current
    }

    pub fn runqueue(&self, pcpu: PcpuId) -> &RunQueue {
        &self.pcpus[pcpu.0].runq
    }

    pub fn pcpu_count(&self) -> usize {
        self.pcpus.len()
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn sampler_stats(&self) -> &SamplerStats {
        &self.stats
    }

    pub fn drain_switches(&mut self) -> std::vec::Drain<'_, Switch> {
        self.switches.drain(..)
    }

    /// Test hook: set a VCPU's credits and priority directly.
    pub fn set_credits(&mut self, id: VcpuId, credits: i64) {
        let v = &mut self.vcpus[id.0];
        v.credits = credits;
        if v.prio != Prio::Blocked && v.prio != Prio::Boost {
            v.prio = if credits > 0 { Prio::Under } else { Prio::Over };
        }
        let p = v.pcpu.0;
        let vcpus = &self.vcpus;
        self.pcpus[p].runq.resort(|x| vcpus[x.0].prio);
    }

    /// Arm the tick and sampling events. The first tick at t=0 is a
    /// reschedule tick so credits are distributed before anything runs.
    pub fn start(&mut self, q: &mut EventQueue) -> Result<(), SimError> {
        q.schedule(q.now(), EventKind::RescheduleTick)?;
        let now = q.now();
        match self.cfg.variant {
            Variant::Poisson | Variant::Bernoulli => {
                for p in 0..self.pcpus.len() {
                    self.arm_sample(PcpuId(p), now, q)?;
                }
            }
            Variant::Uniform => {
                for p in 0..self.pcpus.len() {
                    self.roll_window(PcpuId(p), now);
                }
            }
            Variant::Credit | Variant::Exact => {}
        }
        Ok(())
    }

    /// Handle a scheduler-owned event. Workload events are ignored.
    pub fn handle(&mut self, ev_kind: EventKind, now: VirtualTime, q: &mut EventQueue) -> Result<(), SimError> {
        match ev_kind {
            EventKind::DebitTick | EventKind::UniformWindowStart => {
                self.arm_next_tick(now, q)?;
                self.fast_tick(now);
            }
            EventKind::RescheduleTick => {
                self.arm_next_tick(now, q)?;
                if now > VirtualTime::ZERO {
                    self.fast_tick(now);
                }
                self.refill_credits(now);
            }
            EventKind::SampleArrival(p) => {
                self.debit_sample(p, now);
                self.arm_sample(p, now, q)?;
            }
            EventKind::VcpuWake(_) | EventKind::WorkloadTimer(_) => {}
        }
        Ok(())
    }

    fn arm_next_tick(&self, now: VirtualTime, q: &mut EventQueue) -> Result<(), SimError> {
        let randomized = matches!(self.cfg.variant, Variant::Poisson | Variant::Bernoulli);
        let step = if randomized { self.cfg.reschedule_tick } else { self.cfg.fast_tick };
        let next = now + step;
        let kind = if next.as_micros() % self.cfg.reschedule_tick.as_micros() == 0 {
            EventKind::RescheduleTick
        } else if self.cfg.variant == Variant::Uniform {
            EventKind::UniformWindowStart
        } else {
            EventKind::DebitTick
        };
        q.schedule(next, kind)?;
        Ok(())
    }

    fn arm_sample(&mut self, p: PcpuId, now: VirtualTime, q: &mut EventQueue) -> Result<(), SimError> {
        let cfg = &self.cfg;
        let pc = &mut self.pcpus[p.0];
        let interval = match (&mut pc.source, cfg.variant) {
            (SampleSource::Scripted(script), _) => script.pop_front(),
            (SampleSource::Random(rng), Variant::Poisson) => {
                Some(sample_trunc_exp(rng, cfg.poisson_mean, cfg.poisson_max))
            }
            (SampleSource::Random(rng), _) => {
                let k = sample_geometric_slots(rng, cfg.bernoulli_p);
                Some(Duration::from_micros(k * cfg.bernoulli_slot.as_micros()))
            }
        };
        if let Some(d) = interval {
            self.stats.interval_sum_us += d.as_micros();
            self.stats.intervals += 1;
            q.schedule(now + d, EventKind::SampleArrival(p))?;
        }
        Ok(())
    }

    fn fast_tick(&mut self, now: VirtualTime) {
        for p in (0..self.pcpus.len()).map(PcpuId) {
            match self.cfg.variant {
                Variant::Credit => self.debit_sample(p, now),
                Variant::Exact => self.charge_exact(p, now),
                Variant::Uniform => self.uniform_window_tick(p, now),
                Variant::Poisson | Variant::Bernoulli => {}
            }
        }
    }

    /// Every reschedule tick: distribute credits, then round-robin every PCPU.
    pub fn refill_credits(&mut self, now: VirtualTime) {
        for v in self.vcpus.iter_mut() {
            let gain = self.cfg.credits_per_epoch(v.weight_share);
            v.credits = (v.credits + gain).min(self.cfg.max_credits);
            if matches!(v.prio, Prio::Under | Prio::Over) {
                v.prio = if v.credits > 0 { Prio::Under } else { Prio::Over };
            }
        }
        let vcpus = &self.vcpus;
        for pc in self.pcpus.iter_mut() {
            pc.runq.resort(|id| vcpus[id.0].prio);
        }
        for p in (0..self.pcpus.len()).map(PcpuId) {
            if self.pcpus[p.0].current.is_some() || self.eligible_head(p).is_some() {
                self.reschedule(p, now, Outgoing::Requeue);
            }
        }
    }

    /// Debit the VCPU running on `pcpu` by one sample's worth of credits.
    pub fn debit_sample(&mut self, pcpu: PcpuId, now: VirtualTime) {
        self.stats.samples += 1;
        match self.pcpus[pcpu.0].current {
            Some(v) => {
                let old = self.vcpus[v.0].prio;
                self.charge(v, self.debit);
                self.preempt_check(pcpu, now, old);
            }
            None => self.stats.idle_samples += 1,
        }
    }

    /// Settle the running VCPU's exact run time since the last settlement.
    pub fn charge_exact(&mut self, pcpu: PcpuId, now: VirtualTime) {
        if let Some((_, old)) = self.settle_exact(pcpu, now) {
            self.preempt_check(pcpu, now, old);
        }
    }

    fn settle_exact(&mut self, pcpu: PcpuId, now: VirtualTime) -> Option<(VcpuId, Prio)> {
        let pc = &mut self.pcpus[pcpu.0];
        let v = pc.current?;
        let elapsed = now.since(pc.charge_since).as_micros();
        pc.charge_since = now;
        self.stats.samples += 1;
        let vc = &mut self.vcpus[v.0];
        let old = vc.prio;
        let total = elapsed + vc.remainder_us;
        vc.remainder_us = total % CREDIT_US as u64;
        let credits = (total / CREDIT_US as u64) as i64;
        if credits > 0 {
            self.charge(v, credits);
        }
        Some((v, old))
    }

    /// Uniform variant: charge the running VCPU if the window's virtual
    /// sample instant has passed and this window has not charged yet.
    pub fn uniform_check(&mut self, pcpu: PcpuId, now: VirtualTime) -> Option<(VcpuId, Prio)> {
        let pc = &mut self.pcpus[pcpu.0];
        if pc.window.charged || pc.window.sample_at() > now {
            return None;
        }
        pc.window.charged = true;
        self.stats.samples += 1;
        match pc.current {
            Some(v) => {
                let old = self.vcpus[v.0].prio;
                self.charge(v, self.debit);
                Some((v, old))
            }
            None => {
                self.stats.idle_samples += 1;
                None
            }
        }
    }

    fn uniform_window_tick(&mut self, pcpu: PcpuId, now: VirtualTime) {
        let charged = self.uniform_check(pcpu, now);
        self.roll_window(pcpu, now);
        if let Some((_, old)) = charged {
            self.preempt_check(pcpu, now, old);
        }
    }

    fn roll_window(&mut self, pcpu: PcpuId, now: VirtualTime) {
        let quantum = self.cfg.uniform_quantum.as_micros();
        let slots = self.cfg.fast_tick.as_micros() / quantum;
        let pc = &mut self.pcpus[pcpu.0];
        let offset = match &mut pc.source {
            SampleSource::Random(rng) => Duration::from_micros(rng.below(slots) * quantum),
            SampleSource::Scripted(script) => script.pop_front().unwrap_or(Duration::ZERO),
        };
        pc.window = UniformWindow { t0: now, offset, charged: false };
    }

    /// Head of the run queue if the mode allows running it.
    fn eligible_head(&self, pcpu: PcpuId) -> Option<VcpuId> {
        let (v, prio) = self.pcpus[pcpu.0].runq.head()?;
        match (self.cfg.mode, prio) {
            (Mode::NonWorkConserving, Prio::Over) => None,
            _ => Some(v),
        }
    }

    /// Dequeue and dispatch the head of the run queue, or go idle.
    /// The PCPU must have no running VCPU.
    pub fn pick_next(&mut self, pcpu: PcpuId, now: VirtualTime) -> Option<VcpuId> {
        debug_assert!(self.pcpus[pcpu.0].current.is_none());
        let next = self.eligible_head(pcpu);
        let pc = &mut self.pcpus[pcpu.0];
        pc.since = now;
        if let Some(v) = next {
            pc.runq.pop_head();
            pc.current = Some(v);
            pc.charge_since = now;
            self.vcpus[v.0].last_dispatch_at = now;
        }
        next
    }

    /// A BLOCKED VCPU becomes runnable. Returns false for a spurious wake.
    pub fn on_wake(&mut self, vcpu: VcpuId, now: VirtualTime) -> bool {
        let v = &mut self.vcpus[vcpu.0];
        if v.prio != Prio::Blocked {
            return false;
        }
        v.prio = match (v.credits > 0, self.cfg.boost) {
            (true, true) => Prio::Boost,
            (true, false) => Prio::Under,
            (false, _) => Prio::Over,
        };
        if v.prio == Prio::Boost {
            self.ledger.record_boost(vcpu);
        }
        let (p, prio) = (v.pcpu, v.prio);
        self.pcpus[p.0].runq.insert(vcpu, prio);
        match self.pcpus[p.0].current {
            None => {
                if self.eligible_head(p).is_some() {
                    self.reschedule(p, now, Outgoing::Requeue);
                }
            }
            Some(cur) => {
                if self.cfg.boost && prio < self.vcpus[cur.0].prio {
                    self.reschedule(p, now, Outgoing::Requeue);
                }
            }
        }
        true
    }

    /// The VCPU halts: it leaves its run queue (or its PCPU) and becomes BLOCKED.
    pub fn on_block(&mut self, vcpu: VcpuId, now: VirtualTime) -> Result<(), SimError> {
        let v = self.vcpus.get(vcpu.0).ok_or(SimError::UnknownVcpu(vcpu))?;
        if v.prio == Prio::Blocked {
            return Err(SimError::BlockWhileBlocked(vcpu));
        }
        let p = v.pcpu;
        if self.pcpus[p.0].current == Some(vcpu) {
            self.reschedule(p, now, Outgoing::Block);
        } else {
            self.pcpus[p.0].runq.remove(vcpu);
            self.vcpus[vcpu.0].prio = Prio::Blocked;
        }
        Ok(())
    }

    fn charge(&mut self, v: VcpuId, credits: i64) {
        let vc = &mut self.vcpus[v.0];
        vc.credits -= credits;
        if vc.prio != Prio::Blocked {
            vc.prio = if vc.credits > 0 { Prio::Under } else { Prio::Over };
        }
        self.ledger.record_charge(v, credits);
    }

    /// After charging the running VCPU, give up the PCPU if NWC forbids
    /// running it or someone strictly better is waiting.
    fn preempt_check(&mut self, pcpu: PcpuId, now: VirtualTime, _old: Prio) {
        let Some(cur) = self.pcpus[pcpu.0].current else { return };
        let new = self.vcpus[cur.0].prio;
        let nwc_over = self.cfg.mode == Mode::NonWorkConserving && new == Prio::Over;
        let better_waiting = self.pcpus[pcpu.0].runq.head().is_some_and(|(_, hp)| hp < new);
        if nwc_over || better_waiting {
            self.reschedule(pcpu, now, Outgoing::Requeue);
        }
    }

    /// Take the running VCPU (or idle) off `pcpu` and dispatch the next one.
    fn reschedule(&mut self, pcpu: PcpuId, now: VirtualTime, outgoing: Outgoing) {
        match self.cfg.variant {
            Variant::Exact => {
                self.settle_exact(pcpu, now);
            }
            Variant::Uniform => {
                self.uniform_check(pcpu, now);
            }
            _ => {}
        }
        let pc = &mut self.pcpus[pcpu.0];
        let prev = pc.current.take();
        match prev {
            Some(v) => {
                self.ledger.record_run(v, pc.since, now);
                match outgoing {
                    Outgoing::Requeue => {
                        let prio = self.vcpus[v.0].prio;
                        pc.runq.insert(v, prio);
                    }
                    Outgoing::Block => self.vcpus[v.0].prio = Prio::Blocked,
                }
            }
            None => self.ledger.record_idle(pcpu, pc.since, now),
        }
        let next = self.pick_next(pcpu, now);
        if prev != next {
            self.switches.push(Switch { pcpu, at: now, prev, next });
        }
    }

    /// Close every open interval at `now`; Exact settles the running VCPUs.
    pub fn finish(&mut self, now: VirtualTime) {
        for p in (0..self.pcpus.len()).map(PcpuId) {
            if self.cfg.variant == Variant::Exact {
                self.settle_exact(p, now);
            }
            let pc = &mut self.pcpus[p.0];
            match pc.current {
                Some(v) => self.ledger.record_run(v, pc.since, now),
                None => self.ledger.record_idle(p, pc.since, now),
            }
            pc.since = now;
        }
    }

    /// Verify the structural invariants; cheap enough to call after every event.
    pub fn check_invariants(&self, now: VirtualTime) -> Result<(), SimError> {
        let fail = |what: String| Err(SimError::Invariant { at: now, what });
        let mut seen = vec![0u8; self.vcpus.len()];
        for (p, pc) in self.pcpus.iter().enumerate() {
            if !pc.runq.is_ordered() {
                return fail(format!("run queue of pcpu {p} out of order"));
            }
            for (v, prio) in pc.runq.iter() {
                seen[v.0] += 1;
                if self.vcpus[v.0].prio != prio {
                    return fail(format!("stale band for {v:?} on pcpu {p}"));
                }
                if self.vcpus[v.0].pcpu.0 != p {
                    return fail(format!("{v:?} queued on foreign pcpu {p}"));
                }
            }
            if let Some(v) = pc.current {
                seen[v.0] += 1;
                if self.vcpus[v.0].prio == Prio::Blocked {
                    return fail(format!("blocked {v:?} running on pcpu {p}"));
                }
            }
        }
        for v in &self.vcpus {
            if v.credits > self.cfg.max_credits {
                return fail(format!("{:?} holds {} credits", v.id, v.credits));
            }
            let consistent = match v.prio {
                Prio::Boost | Prio::Under => v.credits > 0,
                Prio::Over => v.credits <= 0,
                Prio::Blocked => true,
            };
            if !consistent {
                return fail(format!("{:?} is {:?} with {} credits", v.id, v.prio, v.credits));
            }
            let expect = u8::from(v.prio != Prio::Blocked);
            if seen[v.id.0] != expect {
                return fail(format!("{:?} appears {} times", v.id, seen[v.id.0]));
            }
        }
        Ok(())
    }
}
