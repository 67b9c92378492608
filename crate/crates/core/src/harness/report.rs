use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::StatSummary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenarios: Vec<ScenarioReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub id: String,
    pub pcpus: usize,
    pub horizon_us: u64,
    pub warmup_us: u64,
    pub seed: u64,
    pub replicas: u32,
    /// Work rate of a lone CPU hog, the 100% reference.
    pub baseline_rate: f64,
    pub groups: Vec<GroupReport>,
}

/// Results for one scheduler configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub scheduler: String,
    pub mode: String,
    pub vms: Vec<VmReport>,
    pub idle_share: StatSummary,
    /// Every replica's measured VM time plus idle time equals PCPUs times the window.
    pub conservation_exact: bool,
    pub sampler: SamplerReport,
    pub event_counts: BTreeMap<String, u64>,
    /// Per-replica event-trace digests, hex.
    pub trace_digests: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmReport {
    pub vm: usize,
    pub kind: String,
    pub role: String,
    pub pcpu: usize,
    /// Fraction of one PCPU.
    pub share: StatSummary,
    pub pct_baseline: StatSummary,
    /// Charged minus scheduled time over the whole run, in microseconds.
    pub charge_bias_us: StatSummary,
    pub scheduled_us: StatSummary,
    pub debits: StatSummary,
    pub boost_wakes: StatSummary,
    /// Ping round trips, pooled over replicas.
    pub latency_us: Option<StatSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerReport {
    pub debit_per_sample: i64,
    pub samples: u64,
    pub idle_samples: u64,
    pub mean_interval_us: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}` (csv or json)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EmitError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub const CSV_HEADER: &str = "scenario-id,scheduler,vm-id,role,share,pct-baseline,charge-bias-us,debits,ci-half-width";

impl Report {
    /// One row per VM per scheduler, plus one `idle` row per scheduler.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for sc in &self.scenarios {
            for g in &sc.groups {
                for vm in &g.vms {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{}",
                        sc.id,
                        g.scheduler,
                        vm.vm,
                        vm.role,
                        vm.share.mean,
                        vm.pct_baseline.mean,
                        vm.charge_bias_us.mean,
                        vm.debits.mean,
                        vm.share.half_width
                    );
                }
                let _ = writeln!(
                    out,
                    "{},{},idle,idle,{},,,,{}",
                    sc.id, g.scheduler, g.idle_share.mean, g.idle_share.half_width
                );
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> Result<Report, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn render(&self, format: Format) -> Result<String, EmitError> {
        Ok(match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json()? + "\n",
        })
    }

    pub fn emit(&self, format: Format, path: &Path) -> Result<(), EmitError> {
        let text = self.render(format)?;
        std::fs::write(path, text).map_err(|source| EmitError::Io { path: path.display().to_string(), source })
    }

    pub fn scenario(&self, id: &str) -> Option<&ScenarioReport> {
        self.scenarios.iter().find(|s| s.id == id)
    }
}

impl ScenarioReport {
    pub fn group(&self, scheduler: &str) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.scheduler == scheduler)
    }
}

impl GroupReport {
    pub fn attackers(&self) -> impl Iterator<Item = &VmReport> {
        self.vms.iter().filter(|v| v.role == "attacker")
    }

    pub fn victims(&self) -> impl Iterator<Item = &VmReport> {
        self.vms.iter().filter(|v| v.role == "victim")
    }
}
