//! Usage ledgers, share and work-rate computation, and confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::sim::{Duration, PcpuId, VcpuId, VirtualTime};

/// Microseconds of CPU entitlement represented by one credit.
pub const CREDIT_US: i64 = 100;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("unknown vm {0:?}")]
    UnknownVm(VcpuId),
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error("baseline work rate is zero")]
    ZeroBaseline,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmUsage {
    /// Scheduled time over the whole run.
    pub scheduled_us: u64,
    /// Scheduled time inside the measurement window (after warm-up).
    pub measured_us: u64,
    /// Credits debited over the whole run.
    pub charged_credits: i64,
    pub debit_events: u64,
    pub boost_wakes: u64,
}

/// Per-VM and per-PCPU time accounting for one simulation run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    measure_from: VirtualTime,
    vms: Vec<VmUsage>,
    idle_total_us: Vec<u64>,
    idle_measured_us: Vec<u64>,
}

impl UsageLedger {
    pub fn new(vms: usize, pcpus: usize, measure_from: VirtualTime) -> Self {
        UsageLedger {
            measure_from,
            vms: vec![VmUsage::default(); vms],
            idle_total_us: vec![0; pcpus],
            idle_measured_us: vec![0; pcpus],
        }
    }

    pub fn measure_from(&self) -> VirtualTime {
        self.measure_from
    }

    fn clipped(&self, from: VirtualTime, to: VirtualTime) -> u64 {
        let start = from.max(self.measure_from);
        if to > start {
            (to - start).as_micros()
        } else {
            0
        }
    }

    pub fn record_run(&mut self, vm: VcpuId, from: VirtualTime, to: VirtualTime) {
        let measured = self.clipped(from, to);
        let u = &mut self.vms[vm.0];
        u.scheduled_us += to.since(from).as_micros();
        u.measured_us += measured;
    }

    pub fn record_idle(&mut self, pcpu: PcpuId, from: VirtualTime, to: VirtualTime) {
        let measured = self.clipped(from, to);
        self.idle_total_us[pcpu.0] += to.since(from).as_micros();
        self.idle_measured_us[pcpu.0] += measured;
    }

    pub fn record_charge(&mut self, vm: VcpuId, credits: i64) {
        let u = &mut self.vms[vm.0];
        u.charged_credits += credits;
        u.debit_events += 1;
    }

    pub fn record_boost(&mut self, vm: VcpuId) {
        self.vms[vm.0].boost_wakes += 1;
    }

    pub fn vm(&self, vm: VcpuId) -> Result<&VmUsage, MetricsError> {
        self.vms.get(vm.0).ok_or(MetricsError::UnknownVm(vm))
    }

    pub fn vm_count(&self) -> usize {
        self.vms.len()
    }

    pub fn pcpu_count(&self) -> usize {
        self.idle_total_us.len()
    }

    pub fn idle_measured_us(&self) -> u64 {
        self.idle_measured_us.iter().sum()
    }

    pub fn idle_total_us(&self) -> u64 {
        self.idle_total_us.iter().sum()
    }

    pub fn idle_by_pcpu(&self) -> &[u64] {
        &self.idle_measured_us
    }

    /// `(sum of scheduled + idle, horizon * pcpus)` over the measurement window.
    /// The two are equal on a consistent ledger.
    pub fn conservation(&self, horizon: VirtualTime) -> (u64, u64) {
        let busy: u64 = self.vms.iter().map(|u| u.measured_us).sum();
        let expect = horizon.since(self.measure_from).as_micros() * self.pcpu_count() as u64;
        (busy + self.idle_measured_us(), expect)
    }

    /// Same as [`conservation`](Self::conservation) but over the whole run.
    pub fn conservation_total(&self, horizon: VirtualTime) -> (u64, u64) {
        let busy: u64 = self.vms.iter().map(|u| u.scheduled_us).sum();
        (busy + self.idle_total_us(), horizon.as_micros() * self.pcpu_count() as u64)
    }
}

/// Fraction of one PCPU the VM received over a measurement window of length `window`.
pub fn cpu_share(ledger: &UsageLedger, vm: VcpuId, window: Duration) -> Result<f64, MetricsError> {
    if window == Duration::ZERO {
        return Err(MetricsError::ZeroHorizon);
    }
    let u = ledger.vm(vm)?;
    Ok(u.measured_us as f64 / window.as_micros() as f64)
}

/// `100 * work_rate / baseline_rate`.
pub fn percent_of_baseline(work_rate: f64, baseline_rate: f64) -> Result<f64, MetricsError> {
    if baseline_rate == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok(100.0 * work_rate / baseline_rate)
}

/// Charged time minus scheduled time, in microseconds. Negative means undercharged.
pub fn charge_bias(ledger: &UsageLedger, vm: VcpuId) -> Result<i64, MetricsError> {
    let u = ledger.vm(vm)?;
    Ok(u.charged_credits * CREDIT_US - u.scheduled_us as i64)
}

/// Mean with a 95% confidence half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

const Z_975: f64 = 1.959_963_984_540_054;

/// Two-sided 95% critical value: Student-t below 30 samples, normal above.
pub fn critical_95(n: usize) -> f64 {
    if n >= 30 {
        return Z_975;
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df >= 1");
    t.inverse_cdf(0.975)
}

pub fn summarize(samples: &[f64]) -> Result<StatSummary, MetricsError> {
    let n = samples.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    Ok(StatSummary { mean, half_width: critical_95(n) * se, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimRng;

    fn t(us: u64) -> VirtualTime {
        VirtualTime::from_micros(us)
    }

    #[test]
    fn solo_hog_share_is_one() {
        let mut l = UsageLedger::new(1, 1, VirtualTime::ZERO);
        l.record_run(VcpuId(0), t(0), t(1_000_000));
        assert_eq!(cpu_share(&l, VcpuId(0), Duration::from_secs(1)).unwrap(), 1.0);
    }

    #[test]
    fn unknown_vm_and_zero_horizon() {
        let l = UsageLedger::new(1, 1, VirtualTime::ZERO);
        assert_eq!(
            cpu_share(&l, VcpuId(3), Duration::from_secs(1)),
            Err(MetricsError::UnknownVm(VcpuId(3)))
        );
        assert_eq!(cpu_share(&l, VcpuId(0), Duration::ZERO), Err(MetricsError::ZeroHorizon));
    }

    #[test]
    fn warmup_is_clipped() {
        let mut l = UsageLedger::new(1, 1, t(300_000));
        l.record_run(VcpuId(0), t(200_000), t(400_000));
        l.record_idle(PcpuId(0), t(400_000), t(1_000_000));
        l.record_idle(PcpuId(0), t(0), t(200_000));
        let u = l.vm(VcpuId(0)).unwrap();
        assert_eq!(u.scheduled_us, 200_000);
        assert_eq!(u.measured_us, 100_000);
        assert_eq!(l.conservation(t(1_000_000)), (700_000, 700_000));
        assert_eq!(l.conservation_total(t(1_000_000)), (1_000_000, 1_000_000));
    }

    #[test]
    fn baseline_percentages() {
        assert_eq!(percent_of_baseline(0.5, 1.0).unwrap(), 50.0);
        assert_eq!(percent_of_baseline(1.0, 1.0).unwrap(), 100.0);
        assert_eq!(percent_of_baseline(1.0, 0.0), Err(MetricsError::ZeroBaseline));
    }

    #[test]
    fn bias_is_charged_minus_scheduled() {
        let mut l = UsageLedger::new(1, 1, VirtualTime::ZERO);
        l.record_run(VcpuId(0), t(0), t(9_050));
        l.record_charge(VcpuId(0), 90);
        assert_eq!(charge_bias(&l, VcpuId(0)).unwrap(), -50);
    }

    #[test]
    fn summarize_constant_samples() {
        let s = summarize(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.half_width, 0.0);
        assert_eq!(s.n, 4);
    }

    #[test]
    fn summarize_two_samples_uses_t_one_df() {
        // t(0.975, 1) = 12.7062 from standard tables; sd = sqrt(2), se = 1.
        let s = summarize(&[0.0, 2.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert!((s.half_width - 12.7062).abs() < 1e-3, "{}", s.half_width);
    }

    #[test]
    fn summarize_rejects_single_sample() {
        assert_eq!(summarize(&[1.0]), Err(MetricsError::TooFewSamples(1)));
    }

    #[test]
    fn summarize_uniform_mean() {
        // SE of the mean of U(0,1) over 1e4 draws is sqrt(1/12/1e4) ~ 0.0029.
        let mut rng = SimRng::new(11, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.unit()).collect();
        let s = summarize(&xs).unwrap();
        assert!((s.mean - 0.5).abs() < 0.006, "{}", s.mean);
        assert!((s.half_width - Z_975 * (1.0f64 / 12.0 / 1e4).sqrt()).abs() < 2e-4);
    }
}
