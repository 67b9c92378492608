use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::CREDIT_US;
use crate::sim::{trunc_exp_mean, Duration};

/// Which charging policy the scheduler uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Fixed 10 ms debit tick (stock Xen).
    Credit,
    /// Charge measured run time at every dispatch boundary.
    Exact,
    /// Truncated-exponential sampling clock.
    Poisson,
    /// Geometric sampling over 1 ms slots.
    Bernoulli,
    /// One virtual sample per 10 ms window at a uniform offset.
    Uniform,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Credit, Variant::Exact, Variant::Uniform, Variant::Poisson, Variant::Bernoulli];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Credit => "credit",
            Variant::Exact => "exact",
            Variant::Poisson => "poisson",
            Variant::Bernoulli => "bernoulli",
            Variant::Uniform => "uniform",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown scheduler variant `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    WorkConserving,
    NonWorkConserving,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::WorkConserving => "wc",
            Mode::NonWorkConserving => "nwc",
        }
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "wc" => Ok(Mode::WorkConserving),
            "nwc" => Ok(Mode::NonWorkConserving),
            _ => Err(format!("unknown mode `{s}` (expected wc or nwc)")),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("cap required in nwc mode")]
    CapRequired,
    #[error("cap only applies in nwc mode")]
    CapWithoutNwc,
    #[error("cap must be in (0, 100], got {0}")]
    CapRange(f64),
    #[error("bernoulli p must be in (0, 1], got {0}")]
    ProbabilityRange(f64),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("reschedule tick must be a multiple of the fast tick")]
    TickMismatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub variant: Variant,
    pub mode: Mode,
    /// Percent of one PCPU; NWC only.
    pub cap_percent: Option<f64>,
    /// Waking VCPUs with credits enter BOOST and may preempt. Off is a diagnostic setting.
    pub boost: bool,
    pub fast_tick: Duration,
    pub reschedule_tick: Duration,
    pub debit_per_sample: i64,
    pub max_credits: i64,
    pub bernoulli_slot: Duration,
    pub bernoulli_p: f64,
    pub uniform_quantum: Duration,
    pub poisson_mean: Duration,
    pub poisson_max: Duration,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            variant: Variant::Credit,
            mode: Mode::WorkConserving,
            cap_percent: None,
            boost: true,
            fast_tick: Duration::from_millis(10),
            reschedule_tick: Duration::from_millis(30),
            debit_per_sample: 100,
            max_credits: 300,
            bernoulli_slot: Duration::from_millis(1),
            bernoulli_p: 0.1,
            uniform_quantum: Duration::from_millis(1),
            poisson_mean: Duration::from_millis(10),
            poisson_max: Duration::from_millis(30),
        }
    }
}

impl SchedulerConfig {
    pub fn with_variant(variant: Variant) -> Self {
        SchedulerConfig { variant, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (self.mode, self.cap_percent) {
            (Mode::NonWorkConserving, None) => return Err(ConfigError::CapRequired),
            (Mode::WorkConserving, Some(_)) => return Err(ConfigError::CapWithoutNwc),
            (_, Some(c)) if !(c > 0.0 && c <= 100.0) => return Err(ConfigError::CapRange(c)),
            _ => {}
        }
        if !(self.bernoulli_p > 0.0 && self.bernoulli_p <= 1.0) {
            return Err(ConfigError::ProbabilityRange(self.bernoulli_p));
        }
        for (name, d) in [
            ("fast_tick", self.fast_tick),
            ("reschedule_tick", self.reschedule_tick),
            ("bernoulli_slot", self.bernoulli_slot),
            ("uniform_quantum", self.uniform_quantum),
            ("poisson_mean", self.poisson_mean),
            ("poisson_max", self.poisson_max),
        ] {
            if d == Duration::ZERO {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if self.debit_per_sample <= 0 {
            return Err(ConfigError::NonPositive("debit_per_sample"));
        }
        if self.max_credits <= 0 {
            return Err(ConfigError::NonPositive("max_credits"));
        }
        if self.reschedule_tick.as_micros() % self.fast_tick.as_micros() != 0 {
            return Err(ConfigError::TickMismatch);
        }
        Ok(())
    }

    /// Credits a VCPU with the given weight share gains per reschedule period.
    pub fn credits_per_epoch(&self, share: f64) -> i64 {
        let full = self.reschedule_tick.as_micros() as f64 / CREDIT_US as f64;
        (full * share).round() as i64
    }

    /// Credits debited per sample. Randomized clocks charge their mean
    /// inter-sample interval so the expected charge equals run time.
    pub fn debit_amount(&self) -> i64 {
        let credit = CREDIT_US as f64;
        match self.variant {
            Variant::Credit | Variant::Exact => self.debit_per_sample,
            Variant::Uniform => (self.fast_tick.as_micros() as f64 / credit).round() as i64,
            Variant::Poisson => (trunc_exp_mean(self.poisson_mean, self.poisson_max) / credit).round() as i64,
            Variant::Bernoulli => {
                (self.bernoulli_slot.as_micros() as f64 / self.bernoulli_p / credit).round() as i64
            }
        }
    }
}
