use std::collections::BTreeMap;

use rayon::prelude::*;

use super::report::{GroupReport, Report, SamplerReport, ScenarioReport, VmReport};
use super::scenario::{Scenario, ScenarioError};
use crate::machine::{simulate, MachineError, MachineSetup, RunOutput};
use crate::metrics::{charge_bias, cpu_share, percent_of_baseline, summarize, StatSummary};
use crate::sched::SchedulerConfig;
use crate::sim::{PcpuId, VcpuId, VirtualTime};
use crate::workload::WorkloadSpec;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("scenario {scenario}, scheduler {scheduler}, replica {replica}: {source}")]
    Simulation { scenario: String, scheduler: String, replica: u32, source: MachineError },
    #[error("metrics: {0}")]
    Metrics(#[from] crate::metrics::MetricsError),
}

impl RunError {
    /// Process exit code: 1 for configuration problems, 2 for simulation failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(_) => 1,
            RunError::Simulation { source: MachineError::Sim(_), .. } => 2,
            RunError::Simulation { .. } => 1,
            RunError::Metrics(_) => 2,
        }
    }
}

/// Mean and 95% half-width; a single sample gets a zero-width interval.
pub fn aggregate(samples: &[f64]) -> StatSummary {
    match samples.len() {
        0 => StatSummary { mean: 0.0, half_width: 0.0, n: 0 },
        1 => StatSummary { mean: samples[0], half_width: 0.0, n: 1 },
        _ => summarize(samples).expect("two or more samples"),
    }
}

fn setup_for(sc: &Scenario, cfg: &SchedulerConfig, replica: u32) -> MachineSetup {
    let vms = sc.vms.iter().map(|v| (v.workload.clone(), PcpuId(v.pcpu))).collect();
    let mut s = MachineSetup::new(sc.pcpus, vms, cfg.clone());
    s.seed = sc.seed;
    s.replica = replica;
    s.warmup = sc.warmup;
    s.switch_cost = sc.switch_cost;
    s
}

/// Run a single replica of one scheduler configuration.
pub fn run_replica(sc: &Scenario, cfg: &SchedulerConfig, replica: u32) -> Result<RunOutput, RunError> {
    simulate(setup_for(sc, cfg, replica), sc.horizon).map_err(|source| RunError::Simulation {
        scenario: sc.id.clone(),
        scheduler: cfg.variant.name().to_string(),
        replica,
        source,
    })
}

/// Work rate of a lone CPU hog on an otherwise idle host with the same timing.
pub fn baseline_rate(sc: &Scenario) -> Result<f64, RunError> {
    let mut s = MachineSetup::new(1, vec![(WorkloadSpec::cpu_hog(), PcpuId(0))], SchedulerConfig::default());
    s.seed = sc.seed;
    s.warmup = sc.warmup;
    s.switch_cost = sc.switch_cost;
    let out = simulate(s, sc.horizon).map_err(|source| RunError::Simulation {
        scenario: format!("{}/baseline", sc.id),
        scheduler: "credit".into(),
        replica: 0,
        source,
    })?;
    Ok(out.work.rate(VcpuId(0), out.window()))
}

pub fn run_scenario(sc: &Scenario) -> Result<ScenarioReport, RunError> {
    let baseline = baseline_rate(sc)?;
    let mut groups = Vec::with_capacity(sc.schedulers.len());
    for cfg in &sc.schedulers {
        let outputs: Vec<RunOutput> =
            (0..sc.replicas).into_par_iter().map(|r| run_replica(sc, cfg, r)).collect::<Result<_, _>>()?;
        groups.push(group_report(sc, cfg, &outputs, baseline)?);
    }
    Ok(ScenarioReport {
        id: sc.id.clone(),
        pcpus: sc.pcpus,
        horizon_us: sc.horizon.as_micros(),
        warmup_us: sc.warmup.as_micros(),
        seed: sc.seed,
        replicas: sc.replicas,
        baseline_rate: baseline,
        groups,
    })
}

pub fn run_all(scenarios: &[Scenario]) -> Result<Report, RunError> {
    let scenarios = scenarios.iter().map(run_scenario).collect::<Result<_, _>>()?;
    Ok(Report { scenarios })
}

/// One scenario per value, with `param` overridden; ids get an `@param=value` suffix.
pub fn sweep(sc: &Scenario, param: &str, values: &[String]) -> Result<Report, RunError> {
    Scenario::check_numeric(param)?;
    let mut variants = Vec::with_capacity(values.len());
    for v in values {
        let mut s = sc.with_override(param, v)?;
        s.seed = sc.seed;
        s.replicas = sc.replicas;
        s.horizon = sc.horizon;
        s.id = format!("{}@{}={}", sc.id, param, v);
        variants.push(s);
    }
    run_all(&variants)
}

fn group_report(
    sc: &Scenario,
    cfg: &SchedulerConfig,
    outputs: &[RunOutput],
    baseline: f64,
) -> Result<GroupReport, RunError> {
    let mut vms = Vec::with_capacity(sc.vms.len());
    for (i, vm) in sc.vms.iter().enumerate() {
        let id = VcpuId(i);
        let mut share = Vec::new();
        let mut pct = Vec::new();
        let mut bias = Vec::new();
        let mut sched = Vec::new();
        let mut debits = Vec::new();
        let mut boosts = Vec::new();
        let mut rtts = Vec::new();
        for out in outputs {
            let usage = out.usage.vm(id)?;
            share.push(cpu_share(&out.usage, id, out.window())?);
            pct.push(percent_of_baseline(out.work.rate(id, out.window()), baseline)?);
            bias.push(charge_bias(&out.usage, id)? as f64);
            sched.push(usage.scheduled_us as f64);
            debits.push(usage.debit_events as f64);
            boosts.push(usage.boost_wakes as f64);
            rtts.extend(out.round_trips[i].iter().map(|&(_, rtt)| rtt as f64));
        }
        vms.push(VmReport {
            vm: i,
            kind: vm.workload.kind.name().to_string(),
            role: vm.workload.kind.role().to_string(),
            pcpu: vm.pcpu,
            share: aggregate(&share),
            pct_baseline: aggregate(&pct),
            charge_bias_us: aggregate(&bias),
            scheduled_us: aggregate(&sched),
            debits: aggregate(&debits),
            boost_wakes: aggregate(&boosts),
            latency_us: (!rtts.is_empty()).then(|| aggregate(&rtts)),
        });
    }
    let idle: Vec<f64> = outputs
        .iter()
        .map(|o| o.usage.idle_measured_us() as f64 / o.window().as_micros() as f64)
        .collect();
    let conservation_exact = outputs.iter().all(|o| {
        let end = VirtualTime::ZERO + sc.horizon;
        let (a, b) = o.usage.conservation(end);
        let (c, d) = o.usage.conservation_total(end);
        a == b && c == d
    });
    let mut event_counts = BTreeMap::new();
    let mut samples = 0;
    let mut idle_samples = 0;
    let mut interval_sum = 0u64;
    let mut intervals = 0u64;
    for o in outputs {
        for (k, n) in &o.event_counts {
            *event_counts.entry(k.to_string()).or_insert(0) += n;
        }
        samples += o.sampler.samples;
        idle_samples += o.sampler.idle_samples;
        interval_sum += o.sampler.interval_sum_us;
        intervals += o.sampler.intervals;
    }
    Ok(GroupReport {
        scheduler: cfg.variant.name().to_string(),
        mode: cfg.mode.name().to_string(),
        vms,
        idle_share: aggregate(&idle),
        conservation_exact,
        sampler: SamplerReport {
            debit_per_sample: outputs.first().map_or(cfg.debit_amount(), |o| o.debit_per_sample),
            samples,
            idle_samples,
            mean_interval_us: (intervals > 0).then(|| interval_sum as f64 / intervals as f64),
        },
        event_counts,
        trace_digests: outputs.iter().map(|o| format!("{:016x}", o.trace_digest)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(text: &str) -> Scenario {
        Scenario::parse(text, "t").unwrap()
    }

    #[test]
    fn three_hogs_share_fairly() {
        let sc = quick("id = hogs\nhogs = 3\nhorizon = 3s\nreplicas = 2\n");
        let r = run_scenario(&sc).unwrap();
        for vm in &r.groups[0].vms {
            assert!((vm.share.mean - 1.0 / 3.0).abs() < 0.01, "{}", vm.share.mean);
        }
        assert!(r.groups[0].conservation_exact);
    }

    #[test]
    fn solo_hog_is_baseline() {
        let sc = quick("hogs = 1\nhorizon = 2s\nreplicas = 1\n");
        let r = run_scenario(&sc).unwrap();
        assert_eq!(r.groups[0].vms[0].pct_baseline.mean, 100.0);
        assert_eq!(r.groups[0].vms[0].share.mean, 1.0);
    }

    #[test]
    fn replicas_are_reproducible() {
        let sc = quick("vm.0.kind = user-attacker\nhogs = 2\nhorizon = 1s\nreplicas = 2\nscheduler.variant = poisson\n");
        let a = run_scenario(&sc).unwrap();
        let b = run_scenario(&sc).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.groups[0].trace_digests[0], a.groups[0].trace_digests[1]);
    }

    #[test]
    fn single_value_sweep_matches_run() {
        let sc = quick("id = s\nvm.0.kind = user-attacker\nvm.0.spin = 9ms\nhogs = 1\nhorizon = 1s\nreplicas = 1\n");
        let swept = sweep(&sc, "vm.0.spin", &["9ms".to_string()]).unwrap();
        let direct = run_scenario(&sc).unwrap();
        assert_eq!(swept.scenarios[0].groups, direct.groups);
        assert_eq!(swept.scenarios[0].id, "s@vm.0.spin=9ms");
    }

    #[test]
    fn sweep_rejects_non_numeric() {
        let sc = quick("vm.0.kind = cpu-hog\nhorizon = 1s\n");
        let err = sweep(&sc, "vm.0.kind", &["pinger".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
