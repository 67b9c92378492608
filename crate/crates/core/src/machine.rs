//! A simulated host: scheduler, workloads and the event loop that drives them.

use std::collections::BTreeMap;

use crate::metrics::UsageLedger;
use crate::sched::{ConfigError, Prio, SampleSource, SamplerStats, Scheduler, SchedulerConfig, Switch};
use crate::sim::{run_until, Duration, EventHandle, EventKind, EventQueue, PcpuId, SimError, SimRng, VcpuId, VirtualTime};
use crate::workload::{Halt, WorkLedger, Workload, WorkloadSpec};

#[derive(Clone, Debug)]
pub struct MachineSetup {
    pub pcpus: usize,
    /// One entry per VM, each with a single VCPU pinned to the given PCPU.
    pub vms: Vec<(WorkloadSpec, PcpuId)>,
    pub sched: SchedulerConfig,
    pub seed: u64,
    pub replica: u32,
    pub warmup: Duration,
    /// Overhead after every dispatch during which no useful work happens.
    pub switch_cost: Duration,
    /// Verify scheduler invariants after every event.
    pub check_invariants: bool,
    /// Keep every context switch (for oracles and debugging).
    pub record_switches: bool,
}

impl MachineSetup {
    pub fn new(pcpus: usize, vms: Vec<(WorkloadSpec, PcpuId)>, sched: SchedulerConfig) -> Self {
        MachineSetup {
            pcpus,
            vms,
            sched,
            seed: 0,
            replica: 0,
            warmup: Duration::ZERO,
            switch_cost: Duration::ZERO,
            check_invariants: cfg!(debug_assertions),
            record_switches: false,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MachineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("vm {vm}: {msg}")]
    Workload { vm: usize, msg: String },
    #[error("vm {vm} placed on pcpu {pcpu} but the host has {pcpus}")]
    Placement { vm: usize, pcpu: usize, pcpus: usize },
}

pub struct Machine {
    queue: EventQueue,
    sched: Scheduler,
    workloads: Vec<Workload>,
    timers: Vec<Option<EventHandle>>,
    dispatched_at: Vec<VirtualTime>,
    work: WorkLedger,
    switch_cost: Duration,
    check_invariants: bool,
    switch_log: Option<Vec<Switch>>,
    event_counts: BTreeMap<&'static str, u64>,
    started: bool,
}

/// Everything measured in one run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub horizon: VirtualTime,
    pub warmup: Duration,
    pub usage: UsageLedger,
    pub work: WorkLedger,
    pub sampler: SamplerStats,
    pub debit_per_sample: i64,
    pub round_trips: Vec<Vec<(VirtualTime, u64)>>,
    pub spins: Vec<Vec<u64>>,
    pub final_credits: Vec<i64>,
    pub event_counts: BTreeMap<&'static str, u64>,
    pub events_dispatched: u64,
    pub trace_digest: u64,
    pub switches: Option<Vec<Switch>>,
}

impl RunOutput {
    pub fn window(&self) -> Duration {
        self.horizon.since(VirtualTime::ZERO + self.warmup)
    }
}

impl Machine {
    pub fn new(setup: MachineSetup) -> Result<Self, MachineError> {
        for (i, (spec, p)) in setup.vms.iter().enumerate() {
            spec.validate().map_err(|msg| MachineError::Workload { vm: i, msg })?;
            if p.0 >= setup.pcpus {
                return Err(MachineError::Placement { vm: i, pcpu: p.0, pcpus: setup.pcpus });
            }
            if let Some(peer) = spec.peer {
                if peer >= setup.vms.len() || peer == i {
                    return Err(MachineError::Workload { vm: i, msg: format!("bad peer {peer}") });
                }
            }
        }
        let measure_from = VirtualTime::ZERO + setup.warmup;
        let placement: Vec<PcpuId> = setup.vms.iter().map(|(_, p)| *p).collect();
        let mut sched =
            Scheduler::new(setup.sched, setup.pcpus, &placement, setup.seed, setup.replica, measure_from)?;
        let mut queue = EventQueue::new();
        let n = setup.vms.len();
        let mut workloads = Vec::with_capacity(n);
        for (i, (spec, _)) in setup.vms.into_iter().enumerate() {
            if spec.starts_blocked() {
                sched.start_blocked(VcpuId(i));
            }
            if spec.start > Duration::ZERO || spec.kind == crate::workload::WorkloadKind::Pinger {
                queue.schedule(VirtualTime::ZERO + spec.start, EventKind::VcpuWake(VcpuId(i)))?;
            }
            let rng = SimRng::for_component(setup.seed, setup.replica, i as u32);
            workloads.push(Workload::new(spec, rng));
        }
        let m = Machine {
            queue,
            sched,
            workloads,
            timers: vec![None; n],
            dispatched_at: vec![VirtualTime::ZERO; n],
            work: WorkLedger::new(n, measure_from),
            switch_cost: setup.switch_cost,
            check_invariants: setup.check_invariants,
            switch_log: setup.record_switches.then(Vec::new),
            event_counts: BTreeMap::new(),
            started: false,
        };
        Ok(m)
    }

    /// Replace one PCPU's sampling source. Only effective before the first `run_until`.
    pub fn set_sample_source(&mut self, pcpu: PcpuId, source: SampleSource) {
        self.sched.set_sample_source(pcpu, source);
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.sched
    }

    pub fn now(&self) -> VirtualTime {
        self.queue.now()
    }

    pub fn run_until(&mut self, t_end: VirtualTime) -> Result<(), MachineError> {
        let mut queue = std::mem::take(&mut self.queue);
        if !self.started {
            self.started = true;
            if let Err(e) = self.sched.start(&mut queue) {
                self.queue = queue;
                return Err(e.into());
            }
        }
        let res = run_until(&mut queue, t_end, |q, ev| self.dispatch(q, ev.kind));
        self.queue = queue;
        res
    }

    fn dispatch(&mut self, q: &mut EventQueue, kind: EventKind) -> Result<(), MachineError> {
        let now = q.now();
        *self.event_counts.entry(kind.label()).or_default() += 1;
        match kind {
            EventKind::VcpuWake(v) => {
                let runnable = self.sched.vcpu(v).prio != Prio::Blocked;
                if self.workloads[v.0].on_wake(now, runnable) && !runnable {
                    self.sched.on_wake(v, now);
                }
            }
            EventKind::WorkloadTimer(v) => {
                self.timers[v.0] = None;
                let p = self.sched.vcpu(v).pcpu;
                if self.sched.current(p) == Some(v) {
                    let halt = self.workloads[v.0].on_burst_end(now, v);
                    self.apply_halt(q, v, now, halt)?;
                }
            }
            other => self.sched.handle(other, now, q)?,
        }
        self.process_switches(q)?;
        if self.check_invariants {
            self.sched.check_invariants(now)?;
        }
        Ok(())
    }

    fn apply_halt(&mut self, q: &mut EventQueue, v: VcpuId, now: VirtualTime, halt: Halt) -> Result<(), MachineError> {
        let wants_block = halt.wake_at.is_some() || halt.notify.is_some();
        if wants_block {
            self.sched.on_block(v, now)?;
        }
        if let Some(t) = halt.wake_at {
            q.schedule(t, EventKind::VcpuWake(v))?;
        }
        if let Some(peer) = halt.notify {
            q.schedule(now, EventKind::VcpuWake(peer))?;
        }
        Ok(())
    }

    fn process_switches(&mut self, q: &mut EventQueue) -> Result<(), MachineError> {
        let switches: Vec<Switch> = self.sched.drain_switches().collect();
        for sw in switches {
            if let Some(prev) = sw.prev {
                self.accrue(prev, sw.at);
                if let Some(h) = self.timers[prev.0].take() {
                    q.cancel(h);
                }
                if self.sched.vcpu(prev).prio != Prio::Blocked {
                    self.workloads[prev.0].on_preempt(sw.at);
                }
            }
            if let Some(next) = sw.next {
                self.dispatched_at[next.0] = sw.at;
                if let Some(end) = self.workloads[next.0].on_dispatch(sw.at + self.switch_cost) {
                    self.timers[next.0] = Some(q.schedule(end, EventKind::WorkloadTimer(next))?);
                }
            }
            if let Some(log) = self.switch_log.as_mut() {
                log.push(sw);
            }
        }
        Ok(())
    }

    fn accrue(&mut self, v: VcpuId, until: VirtualTime) {
        let useful_from = self.dispatched_at[v.0] + self.switch_cost;
        self.work.accrue_interval(v, useful_from, until);
    }

    /// Close all open intervals at `horizon` and collect the measurements.
    pub fn finish(mut self, horizon: VirtualTime) -> Result<RunOutput, MachineError> {
        if horizon > self.queue.now() {
            self.run_until(horizon)?;
        }
        self.sched.finish(horizon);
        for p in (0..self.sched.pcpu_count()).map(PcpuId) {
            if let Some(v) = self.sched.current(p) {
                self.accrue(v, horizon);
            }
        }
        let measure_from = self.sched.ledger().measure_from();
        Ok(RunOutput {
            horizon,
            warmup: measure_from.since(VirtualTime::ZERO),
            usage: self.sched.ledger().clone(),
            work: self.work,
            sampler: self.sched.sampler_stats().clone(),
            debit_per_sample: self.sched.debit_per_sample(),
            round_trips: self
                .workloads
                .iter()
                .map(|w| w.round_trips().iter().copied().filter(|(t, _)| *t >= measure_from).collect())
                .collect(),
            spins: self.workloads.iter().map(|w| w.spins().to_vec()).collect(),
            final_credits: self.sched.vcpus().iter().map(|v| v.credits).collect(),
            event_counts: self.event_counts,
            events_dispatched: self.queue.dispatched(),
            trace_digest: self.queue.trace_digest(),
            switches: self.switch_log,
        })
    }
}

/// Build, run and finish a machine in one call.
pub fn simulate(setup: MachineSetup, horizon: Duration) -> Result<RunOutput, MachineError> {
    let mut m = Machine::new(setup)?;
    let end = VirtualTime::ZERO + horizon;
    m.run_until(end)?;
    m.finish(end)
}
