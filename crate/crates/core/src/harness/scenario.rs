//! Scenario files: `key = value` lines, `#` comments, optional `[section]`
//! headers that prefix the keys below them.
//!
//! ```text
//! id = demo
//! pcpus = 2
//! horizon = 10s
//! scheduler.variant = credit, poisson
//! [vm.0]
//! kind = user-attacker
//! spin = 9.8ms
//! jitter = uniform(50us)
//! ```
//!
//! Durations take `us`, `ms` or `s`; a bare number means milliseconds.

use std::collections::BTreeMap;
use std::path::Path;

use crate::sched::{Mode, SchedulerConfig, Variant};
use crate::sim::Duration;
use crate::workload::{Jitter, WorkloadKind, WorkloadSpec};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScenarioError {
    #[error("{origin}:{line}: {msg}")]
    Syntax { origin: String, line: usize, msg: String },
    #[error("{origin}:{line}: `{key}`: {msg}")]
    Field { origin: String, line: usize, key: String, msg: String },
    #[error("{origin}: {msg}")]
    Invalid { origin: String, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct VmSetup {
    pub workload: WorkloadSpec,
    pub pcpu: usize,
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub pcpus: usize,
    pub vms: Vec<VmSetup>,
    /// One report group per entry; they differ only in the variant.
    pub schedulers: Vec<SchedulerConfig>,
    pub horizon: Duration,
    pub warmup: Duration,
    pub seed: u64,
    pub replicas: u32,
    pub switch_cost: Duration,
    origin: String,
    entries: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    line: usize,
    key: String,
    value: String,
}

pub const DEFAULT_HORIZON: Duration = Duration::from_secs(60);
pub const DEFAULT_REPLICAS: u32 = 20;
pub const DEFAULT_WARMUP: Duration = Duration::from_millis(300);

const TOP_KEYS: &[(&str, bool)] = &[
    ("id", false),
    ("pcpus", true),
    ("horizon", true),
    ("warmup", true),
    ("seed", true),
    ("replicas", true),
    ("switch_cost", true),
    ("hogs", true),
];

const SCHED_KEYS: &[(&str, bool)] = &[
    ("variant", false),
    ("mode", false),
    ("cap", true),
    ("boost", false),
    ("fast_tick", true),
    ("reschedule_tick", true),
    ("debit_per_sample", true),
    ("max_credits", true),
    ("bernoulli_slot", true),
    ("bernoulli_p", true),
    ("uniform_quantum", true),
    ("poisson_mean", true),
    ("poisson_max", true),
];

const VM_KEYS: &[(&str, bool)] = &[
    ("kind", false),
    ("pcpu", true),
    ("spin", true),
    ("sleep", true),
    ("guest_tick", true),
    ("guest_phase", true),
    ("check_granularity", true),
    ("jitter", false),
    ("start", true),
    ("period", true),
    ("msg_cost", true),
    ("interval", true),
    ("peer", true),
];

/// Whether `key` exists, and whether it holds a number.
fn key_kind(key: &str) -> Option<bool> {
    let lookup = |table: &[(&str, bool)], k: &str| table.iter().find(|(n, _)| *n == k).map(|(_, num)| *num);
    if let Some(rest) = key.strip_prefix("scheduler.") {
        return lookup(SCHED_KEYS, rest);
    }
    if let Some(rest) = key.strip_prefix("vm.") {
        let (idx, field) = rest.split_once('.')?;
        idx.parse::<usize>().ok()?;
        return lookup(VM_KEYS, field);
    }
    lookup(TOP_KEYS, key)
}

pub fn parse_duration(s: &str) -> Result<Duration, String> {
    let s = s.trim();
    let (num, scale) = if let Some(n) = s.strip_suffix("us") {
        (n, 1.0)
    } else if let Some(n) = s.strip_suffix("ms") {
        (n, 1e3)
    } else if let Some(n) = s.strip_suffix('s') {
        (n, 1e6)
    } else {
        (s, 1e3)
    };
    let v: f64 = num.trim().parse().map_err(|_| format!("invalid duration `{s}`"))?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(format!("invalid duration `{s}`"));
    }
    Ok(Duration::from_micros((v * scale).round() as u64))
}

fn parse_jitter(s: &str) -> Result<Jitter, String> {
    let s = s.trim();
    if s == "none" {
        return Ok(Jitter::None);
    }
    let inner = |prefix: &str| s.strip_prefix(prefix).and_then(|r| r.strip_suffix(')'));
    if let Some(arg) = inner("uniform(") {
        return Ok(Jitter::Uniform(parse_duration(arg)?));
    }
    if let Some(arg) = inner("gaussian(") {
        return Ok(Jitter::Gaussian(parse_duration(arg)?));
    }
    Err(format!("invalid jitter `{s}` (none, uniform(D) or gaussian(D))"))
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("invalid number `{}`", s.trim()))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim() {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        other => Err(format!("invalid boolean `{other}`")),
    }
}

impl Scenario {
    pub fn parse(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
        let entries = read_entries(text, origin)?;
        build(entries, origin)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Scenario::parse(&text, &path.display().to_string())
    }

    /// Rebuild with one key replaced (or added).
    pub fn with_override(&self, key: &str, value: &str) -> Result<Scenario, ScenarioError> {
        let mut entries = self.entries.clone();
        let entry = Entry { line: 0, key: key.to_string(), value: value.to_string() };
        match entries.iter_mut().find(|e| e.key == key) {
            Some(e) => *e = entry,
            None => entries.push(entry),
        }
        build(entries, &self.origin)
    }

    /// Fail unless `key` is a numeric field.
    pub fn check_numeric(key: &str) -> Result<(), ScenarioError> {
        match key_kind(key) {
            Some(true) => Ok(()),
            Some(false) => Err(ScenarioError::Invalid {
                origin: "sweep".into(),
                msg: format!("`{key}` is not a numeric field"),
            }),
            None => Err(ScenarioError::Invalid { origin: "sweep".into(), msg: format!("unknown key `{key}`") }),
        }
    }

    /// Render back to scenario text (keys in resolved form).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{} = {}\n", e.key, e.value));
        }
        out
    }
}

fn read_entries(text: &str, origin: &str) -> Result<Vec<Entry>, ScenarioError> {
    let mut section = String::new();
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ScenarioError::Syntax { origin: origin.into(), line, msg: "unclosed section".into() })?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| ScenarioError::Syntax {
            origin: origin.into(),
            line,
            msg: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
        if key_kind(&key).is_none() {
            return Err(ScenarioError::Field { origin: origin.into(), line, key, msg: "unknown key".into() });
        }
        if entries.iter().any(|e| e.key == key) {
            return Err(ScenarioError::Field { origin: origin.into(), line, key, msg: "duplicate key".into() });
        }
        entries.push(Entry { line, key, value: v.trim().to_string() });
    }
    Ok(entries)
}

fn build(entries: Vec<Entry>, origin: &str) -> Result<Scenario, ScenarioError> {
    let field_err = |e: &Entry, msg: String| ScenarioError::Field {
        origin: origin.into(),
        line: e.line,
        key: e.key.clone(),
        msg,
    };
    let invalid = |msg: String| ScenarioError::Invalid { origin: origin.into(), msg };

    let mut id = Path::new(origin).file_stem().and_then(|s| s.to_str()).unwrap_or("scenario").to_string();
    let mut pcpus = 1usize;
    let mut horizon = DEFAULT_HORIZON;
    let mut warmup = DEFAULT_WARMUP;
    let mut seed = 1u64;
    let mut replicas = DEFAULT_REPLICAS;
    let mut switch_cost = Duration::ZERO;
    let mut hogs = 0usize;
    let mut variants = vec![Variant::Credit];
    let mut base = SchedulerConfig::default();
    let mut vm_fields: BTreeMap<usize, Vec<(&Entry, &str)>> = BTreeMap::new();

    for e in &entries {
        let v = e.value.as_str();
        let r: Result<(), String> = (|| {
            if let Some(field) = e.key.strip_prefix("scheduler.") {
                match field {
                    "variant" => {
                        variants = v.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?;
                        if variants.is_empty() {
                            return Err("empty variant list".into());
                        }
                    }
                    "mode" => base.mode = v.parse()?,
                    "cap" => base.cap_percent = Some(parse_num(v)?),
                    "boost" => base.boost = parse_bool(v)?,
                    "fast_tick" => base.fast_tick = parse_duration(v)?,
                    "reschedule_tick" => base.reschedule_tick = parse_duration(v)?,
                    "debit_per_sample" => base.debit_per_sample = parse_num(v)?,
                    "max_credits" => base.max_credits = parse_num(v)?,
                    "bernoulli_slot" => base.bernoulli_slot = parse_duration(v)?,
                    "bernoulli_p" => base.bernoulli_p = parse_num(v)?,
                    "uniform_quantum" => base.uniform_quantum = parse_duration(v)?,
                    "poisson_mean" => base.poisson_mean = parse_duration(v)?,
                    "poisson_max" => base.poisson_max = parse_duration(v)?,
                    _ => unreachable!("key table and parser disagree"),
                }
                return Ok(());
            }
            if let Some(rest) = e.key.strip_prefix("vm.") {
                let (idx, field) = rest.split_once('.').expect("validated key");
                let idx: usize = idx.parse().expect("validated key");
                vm_fields.entry(idx).or_default().push((e, field));
                return Ok(());
            }
            match e.key.as_str() {
                "id" => id = v.to_string(),
                "pcpus" => pcpus = parse_num(v)?,
                "horizon" => horizon = parse_duration(v)?,
                "warmup" => warmup = parse_duration(v)?,
                "seed" => seed = parse_num(v)?,
                "replicas" => replicas = parse_num(v)?,
                "switch_cost" => switch_cost = parse_duration(v)?,
                "hogs" => hogs = parse_num(v)?,
                _ => unreachable!("key table and parser disagree"),
            }
            Ok(())
        })();
        r.map_err(|msg| field_err(e, msg))?;
    }

    if pcpus == 0 {
        return Err(invalid("pcpus must be at least 1".into()));
    }
    if replicas == 0 {
        return Err(invalid("replicas must be at least 1".into()));
    }
    if horizon <= warmup {
        return Err(invalid(format!("horizon {horizon} must exceed warmup {warmup}")));
    }

    let mut vms = Vec::new();
    for (n, (idx, fields)) in vm_fields.iter().enumerate() {
        if *idx != n {
            return Err(invalid(format!("vm indices must be contiguous from 0 (missing vm.{n})")));
        }
        let kind_entry = fields
            .iter()
            .find(|(_, f)| *f == "kind")
            .ok_or_else(|| invalid(format!("vm.{idx} has no kind")))?;
        let kind: WorkloadKind = kind_entry.0.value.parse().map_err(|m| field_err(kind_entry.0, m))?;
        let mut spec = WorkloadSpec::new(kind);
        let mut pcpu = idx % pcpus;
        for (e, field) in fields {
            let v = e.value.as_str();
            let r: Result<(), String> = (|| {
                match *field {
                    "kind" => {}
                    "pcpu" => pcpu = parse_num(v)?,
                    "spin" => spec.spin = parse_duration(v)?,
                    "sleep" => spec.sleep_request = parse_duration(v)?,
                    "guest_tick" => spec.guest_tick = parse_duration(v)?,
                    "guest_phase" if v == "random" => spec.random_phase = true,
                    "guest_phase" => spec.guest_phase = parse_duration(v)?,
                    "check_granularity" => spec.check_granularity = parse_num(v)?,
                    "jitter" => spec.jitter = parse_jitter(v)?,
                    "start" => spec.start = parse_duration(v)?,
                    "period" => spec.period = parse_duration(v)?,
                    "msg_cost" => spec.msg_cost = parse_duration(v)?,
                    "interval" => spec.ping_interval = parse_duration(v)?,
                    "peer" => spec.peer = Some(parse_num(v)?),
                    _ => unreachable!("key table and parser disagree"),
                }
                Ok(())
            })();
            r.map_err(|msg| field_err(e, msg))?;
        }
        if pcpu >= pcpus {
            return Err(invalid(format!("vm.{idx} assigned to pcpu {pcpu} but only {pcpus} exist")));
        }
        spec.validate().map_err(|m| invalid(format!("vm.{idx}: {m}")))?;
        vms.push(VmSetup { workload: spec, pcpu });
    }
    for _ in 0..hogs {
        let i = vms.len();
        vms.push(VmSetup { workload: WorkloadSpec::cpu_hog(), pcpu: i % pcpus });
    }
    // a ponger without a peer answers whichever pinger targets it
    for i in 0..vms.len() {
        if vms[i].workload.kind == WorkloadKind::Ponger && vms[i].workload.peer.is_none() {
            let pinger = vms.iter().position(|v| v.workload.kind == WorkloadKind::Pinger && v.workload.peer == Some(i));
            vms[i].workload.peer = pinger;
        }
    }
    for (i, vm) in vms.iter().enumerate() {
        if let Some(p) = vm.workload.peer {
            if p >= vms.len() || p == i {
                return Err(invalid(format!("vm.{i} has invalid peer {p}")));
            }
        }
        if vm.workload.kind == WorkloadKind::Ponger && vm.workload.peer.is_none() {
            return Err(invalid(format!("vm.{i} is a ponger with no pinger")));
        }
    }
    if vms.is_empty() {
        return Err(invalid("scenario has no vms".into()));
    }

    let mut schedulers = Vec::new();
    for v in variants {
        let cfg = SchedulerConfig { variant: v, ..base.clone() };
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        schedulers.push(cfg);
    }
    if base.mode == Mode::NonWorkConserving && base.cap_percent.is_none() {
        return Err(invalid("cap required in nwc mode".into()));
    }

    Ok(Scenario {
        id,
        pcpus,
        vms,
        schedulers,
        horizon,
        warmup,
        seed,
        replicas,
        switch_cost,
        origin: origin.to_string(),
        entries,
    })
}
