//! Guest behavior programs.
//!
//! A workload only acts while its VCPU runs. It alternates *bursts* (CPU
//! work ending at a CPU-time budget or at a wall-clock deadline) with
//! blocking actions. The attackers measure elapsed wall time from the
//! moment they are dispatched after a wake, like the RDTSC loop they
//! model, and round their wake-ups up to the guest timer tick.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sim::{Duration, SimRng, VcpuId, VirtualTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WorkloadKind {
    CpuHog,
    UserAttacker,
    KernelAttacker,
    WorkLoopAttacker,
    /// Knows the 1 ms sampling grid; runs to just before each 10 ms boundary.
    SlotAttacker,
    Pinger,
    Ponger,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 7] = [
        WorkloadKind::CpuHog,
        WorkloadKind::UserAttacker,
        WorkloadKind::KernelAttacker,
        WorkloadKind::WorkLoopAttacker,
        WorkloadKind::SlotAttacker,
        WorkloadKind::Pinger,
        WorkloadKind::Ponger,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::CpuHog => "cpu-hog",
            WorkloadKind::UserAttacker => "user-attacker",
            WorkloadKind::KernelAttacker => "kernel-attacker",
            WorkloadKind::WorkLoopAttacker => "workloop-attacker",
            WorkloadKind::SlotAttacker => "slot-attacker",
            WorkloadKind::Pinger => "pinger",
            WorkloadKind::Ponger => "ponger",
        }
    }

    pub fn role(self) -> &'static str {
        match self {
            WorkloadKind::CpuHog => "victim",
            WorkloadKind::Pinger => "pinger",
            WorkloadKind::Ponger => "ponger",
            _ => "attacker",
        }
    }

    pub fn is_attacker(self) -> bool {
        self.role() == "attacker"
    }
}

impl FromStr for WorkloadKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        WorkloadKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown workload kind `{s}`"))
    }
}

/// Timing noise on spin-end detection and wake latency. Both are lateness:
/// a timer or a polling loop can notice an instant only after it passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Jitter {
    None,
    /// Uniform on `[-j, +j]`.
    Uniform(Duration),
    /// Normal with standard deviation `sigma`.
    Gaussian(Duration),
}

impl Jitter {
    /// Signed offset in microseconds.
    pub fn sample(&self, rng: &mut SimRng) -> i64 {
        match *self {
            Jitter::None => 0,
            Jitter::Uniform(j) => {
                let j = j.as_micros() as f64;
                ((rng.unit() * 2.0 - 1.0) * j).round() as i64
            }
            Jitter::Gaussian(s) => (rng.std_normal() * s.as_micros() as f64).round() as i64,
        }
    }

    /// Magnitude of a sample.
    pub fn latency(&self, rng: &mut SimRng) -> Duration {
        Duration::from_micros(self.sample(rng).unsigned_abs())
    }
}

impl fmt::Display for Jitter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Jitter::None => f.write_str("none"),
            Jitter::Uniform(j) => write!(f, "uniform({j})"),
            Jitter::Gaussian(s) => write!(f, "gaussian({s})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    /// Run length before halting (attackers): 10 ms minus epsilon.
    pub spin: Duration,
    /// Requested sleep; the wake-up is rounded up to the guest tick.
    pub sleep_request: Duration,
    pub guest_tick: Duration,
    /// Offset of the guest tick grid relative to the hypervisor clock.
    pub guest_phase: Duration,
    /// Draw `guest_phase` per run from the workload's stream instead.
    #[serde(default)]
    pub random_phase: bool,
    /// Work-loop attacker: microseconds of work between clock reads.
    pub check_granularity: u64,
    pub jitter: Jitter,
    /// The VM is blocked until this time (phase offset).
    pub start: Duration,
    /// Attack period: the boundary grid the slot attacker dodges and the
    /// kernel attacker's wake-up grid (offset by `guest_phase`).
    pub period: Duration,
    /// Ping-pong: CPU consumed per message.
    pub msg_cost: Duration,
    /// Pinger: time between the end of one round trip and the next send.
    pub ping_interval: Duration,
    /// Pinger: index of its ponger.
    pub peer: Option<usize>,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind) -> Self {
        let base = WorkloadSpec {
            kind,
            spin: Duration::from_millis(9),
            sleep_request: Duration::from_micros(500),
            guest_tick: Duration::from_millis(1),
            guest_phase: Duration::ZERO,
            random_phase: false,
            check_granularity: 37,
            jitter: Jitter::None,
            start: Duration::ZERO,
            period: Duration::from_millis(10),
            msg_cost: Duration::from_micros(10),
            ping_interval: Duration::from_millis(5),
            peer: None,
        };
        match kind {
            WorkloadKind::KernelAttacker => WorkloadSpec {
                spin: Duration::from_millis(8),
                jitter: Jitter::Uniform(Duration::from_micros(500)),
                ..base
            },
            _ => base,
        }
    }

    pub fn cpu_hog() -> Self {
        Self::new(WorkloadKind::CpuHog)
    }

    pub fn user_attacker(spin: Duration) -> Self {
        WorkloadSpec { spin, ..Self::new(WorkloadKind::UserAttacker) }
    }

    pub fn kernel_attacker() -> Self {
        Self::new(WorkloadKind::KernelAttacker)
    }

    pub fn workloop_attacker(granularity: u64) -> Self {
        WorkloadSpec { check_granularity: granularity, ..Self::new(WorkloadKind::WorkLoopAttacker) }
    }

    pub fn slot_attacker() -> Self {
        Self::new(WorkloadKind::SlotAttacker)
    }

    pub fn pinger(peer: usize) -> Self {
        WorkloadSpec { peer: Some(peer), ..Self::new(WorkloadKind::Pinger) }
    }

    pub fn ponger() -> Self {
        Self::new(WorkloadKind::Ponger)
    }

    pub fn with_jitter(self, jitter: Jitter) -> Self {
        WorkloadSpec { jitter, ..self }
    }

    /// Timer wake-up for a halt requested at `now`, before wake latency:
    /// the first guest tick at or after the timer expiry.
    pub fn wake_time(&self, now: VirtualTime) -> VirtualTime {
        (now + self.sleep_request).ceil_to(self.guest_tick, self.guest_phase)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.guest_tick == Duration::ZERO {
            return Err("guest_tick must be positive".into());
        }
        if self.period == Duration::ZERO {
            return Err("period must be positive".into());
        }
        if self.kind == WorkloadKind::WorkLoopAttacker && self.check_granularity == 0 {
            return Err("check_granularity must be positive".into());
        }
        if self.kind == WorkloadKind::Pinger && self.peer.is_none() {
            return Err("pinger needs a peer".into());
        }
        Ok(())
    }

    /// VMs that start blocked and wait for a timer or message.
    pub fn starts_blocked(&self) -> bool {
        self.start > Duration::ZERO || matches!(self.kind, WorkloadKind::Pinger | WorkloadKind::Ponger)
    }
}

/// What a workload does when its burst ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Halt {
    /// Timer wake-up, if any.
    pub wake_at: Option<VirtualTime>,
    /// VM to deliver a message to (wakes it now).
    pub notify: Option<VcpuId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Burst {
    /// Never ends (CPU hog).
    Forever,
    /// Wall-clock deadline fixed at the first dispatch after a wake.
    AwaitDispatch,
    Until(VirtualTime),
    Cpu { remaining: Duration },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PingPhase {
    Idle,
    Sending,
    AwaitReply,
    Receiving,
}

/// Running state of one VM's workload.
#[derive(Clone, Debug)]
pub struct Workload {
    spec: WorkloadSpec,
    rng: SimRng,
    burst: Burst,
    run_start: VirtualTime,
    activated_at: VirtualTime,
    /// Guest tick the last timer wake-up was due on.
    wake_tick: VirtualTime,
    ping: PingPhase,
    pending_msgs: u32,
    sent_at: VirtualTime,
    round_trips: Vec<(VirtualTime, u64)>,
    spins: Vec<u64>,
}

impl Workload {
    pub fn new(mut spec: WorkloadSpec, mut rng: SimRng) -> Self {
        if spec.random_phase {
            spec.guest_phase = Duration::from_micros(rng.below(spec.guest_tick.as_micros()));
        }
        let start = spec.start;
        let burst = match spec.kind {
            WorkloadKind::CpuHog => Burst::Forever,
            WorkloadKind::Pinger | WorkloadKind::Ponger => Burst::Cpu { remaining: Duration::ZERO },
            _ => Burst::AwaitDispatch,
        };
        Workload {
            spec,
            rng,
            burst,
            run_start: VirtualTime::ZERO,
            activated_at: VirtualTime::ZERO,
            wake_tick: VirtualTime::ZERO + start,
            ping: PingPhase::Idle,
            pending_msgs: 0,
            sent_at: VirtualTime::ZERO,
            round_trips: Vec::new(),
            spins: Vec::new(),
        }
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    /// `(completion time, round trip in us)` for every finished ping.
    pub fn round_trips(&self) -> &[(VirtualTime, u64)] {
        &self.round_trips
    }

    /// Observed attacker run lengths (dispatch to halt) in microseconds.
    pub fn spins(&self) -> &[u64] {
        &self.spins
    }

    /// A wake event arrived. Returns whether the VCPU should be woken
    /// (false when a message is queued for an already running ponger).
    pub fn on_wake(&mut self, now: VirtualTime, running_or_runnable: bool) -> bool {
        self.activated_at = now;
        match self.spec.kind {
            WorkloadKind::Ponger => {
                self.pending_msgs += 1;
                if running_or_runnable {
                    return false;
                }
                self.pending_msgs -= 1;
                self.burst = Burst::Cpu { remaining: self.spec.msg_cost };
            }
            WorkloadKind::Pinger => {
                self.ping = match self.ping {
                    PingPhase::AwaitReply => PingPhase::Receiving,
                    _ => PingPhase::Sending,
                };
                self.burst = Burst::Cpu { remaining: self.spec.msg_cost };
            }
            WorkloadKind::CpuHog => self.burst = Burst::Forever,
            _ => self.burst = Burst::AwaitDispatch,
        }
        true
    }

    /// The VCPU starts (or resumes) running at `now`. Returns when the burst ends.
    pub fn on_dispatch(&mut self, now: VirtualTime) -> Option<VirtualTime> {
        self.run_start = now;
        match self.burst {
            Burst::Forever => None,
            Burst::AwaitDispatch => {
                let deadline = self.spin_deadline(now);
                self.activated_at = now;
                self.burst = Burst::Until(deadline);
                Some(deadline)
            }
            Burst::Until(t) => Some(t.max(now)),
            Burst::Cpu { remaining } => Some(now + remaining),
        }
    }

    /// The VCPU was descheduled without halting.
    pub fn on_preempt(&mut self, now: VirtualTime) {
        if let Burst::Cpu { remaining } = self.burst {
            let ran = now.since(self.run_start);
            self.burst = Burst::Cpu { remaining: remaining.saturating_sub(ran) };
        }
    }

    fn spin_deadline(&mut self, dispatched: VirtualTime) -> VirtualTime {
        let spec = &self.spec;
        match spec.kind {
            WorkloadKind::SlotAttacker => {
                let guard = Duration::from_micros(1);
                let boundary = (dispatched + guard).ceil_to(spec.period, Duration::ZERO);
                let end = VirtualTime::from_micros(boundary.as_micros() - guard.as_micros());
                if end > dispatched {
                    end
                } else {
                    end + spec.period
                }
            }
            _ => {
                let mut spin = spec.spin.as_micros() as i64 + spec.jitter.latency(&mut self.rng).as_micros() as i64;
                if spec.kind == WorkloadKind::WorkLoopAttacker {
                    spin += self.rng.below(spec.check_granularity) as i64;
                }
                // kernel code keeps time in guest ticks, user code reads the cycle counter
                let from = if spec.kind == WorkloadKind::KernelAttacker { self.wake_tick } else { dispatched };
                (from + Duration::from_micros(spin.max(0) as u64)).max(dispatched)
            }
        }
    }

    /// The burst finished while running at `now`.
    pub fn on_burst_end(&mut self, now: VirtualTime, self_id: VcpuId) -> Halt {
        let spec = self.spec.clone();
        match spec.kind {
            WorkloadKind::CpuHog => Halt { wake_at: None, notify: None },
            WorkloadKind::SlotAttacker => {
                self.spins.push(now.since(self.activated_at).as_micros());
                self.burst = Burst::AwaitDispatch;
                let wake = (now + Duration::from_micros(1)).ceil_to(spec.period, Duration::ZERO);
                Halt { wake_at: Some(wake + Duration::from_micros(1)), notify: None }
            }
            WorkloadKind::KernelAttacker => {
                self.spins.push(now.since(self.activated_at).as_micros());
                self.burst = Burst::AwaitDispatch;
                self.wake_tick = (now + Duration::from_micros(1)).ceil_to(spec.period, spec.guest_phase);
                Halt { wake_at: Some(self.wake_tick + spec.jitter.latency(&mut self.rng)), notify: None }
            }
            WorkloadKind::UserAttacker | WorkloadKind::WorkLoopAttacker => {
                self.spins.push(now.since(self.activated_at).as_micros());
                self.burst = Burst::AwaitDispatch;
                let wake = spec.wake_time(now) + spec.jitter.latency(&mut self.rng);
                Halt { wake_at: Some(wake), notify: None }
            }
            WorkloadKind::Ponger => {
                if self.pending_msgs > 0 {
                    // Pings that arrived mid-burst share one reply.
                    self.pending_msgs = 0;
                }
                Halt { wake_at: None, notify: spec.peer.map(VcpuId).or(Some(self.reply_to(self_id))) }
            }
            WorkloadKind::Pinger => match self.ping {
                PingPhase::Sending => {
                    self.sent_at = now;
                    self.ping = PingPhase::AwaitReply;
                    Halt { wake_at: None, notify: spec.peer.map(VcpuId) }
                }
                _ => {
                    self.round_trips.push((now, now.since(self.sent_at).as_micros()));
                    self.ping = PingPhase::Idle;
                    Halt { wake_at: Some(now + spec.ping_interval), notify: None }
                }
            },
        }
    }

    fn reply_to(&self, self_id: VcpuId) -> VcpuId {
        // a ponger without an explicit peer answers the VM just before it
        VcpuId(self_id.0.saturating_sub(1))
    }
}

/// Work units per VM; one unit per microsecond of useful CPU.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkLedger {
    measure_from: VirtualTime,
    units: Vec<u64>,
}

impl WorkLedger {
    pub fn new(vms: usize, measure_from: VirtualTime) -> Self {
        WorkLedger { measure_from, units: vec![0; vms] }
    }

    pub fn accrue_work(&mut self, vm: VcpuId, span: Duration) {
        self.units[vm.0] += span.as_micros();
    }

    /// Accrue the part of `[from, to)` inside the measurement window.
    pub fn accrue_interval(&mut self, vm: VcpuId, from: VirtualTime, to: VirtualTime) {
        let start = from.max(self.measure_from);
        if to > start {
            self.accrue_work(vm, to - start);
        }
    }

    pub fn units(&self, vm: VcpuId) -> u64 {
        self.units[vm.0]
    }

    /// Work units per microsecond of measurement window.
    pub fn rate(&self, vm: VcpuId, window: Duration) -> f64 {
        self.units[vm.0] as f64 / window.as_micros().max(1) as f64
    }
}
