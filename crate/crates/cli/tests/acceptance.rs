//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relaykf_core::channel::{LinkProbabilities, PowerAllocation, Topology};
use relaykf_core::experiments::{GridResult, RunResult};
use relaykf_core::filter::{expected_covariance, CorrectionTable, CovarianceMatrix};
use relaykf_core::model::{SensorParams, SystemModel};
use relaykf_core::netcode::{
    config_count, enumerate_configs, enumerate_outcomes_oracle, pattern_distribution, recover_measurements,
    theta_expression_table, LinkOutcome, RelayConfig, RelayOperation,
};
use relaykf_core::optimize::{stability_check, RelaySelector, StabilityPolicy, Verdict};
use relaykf_core::{
    run_scenario, special_case_expected_covariance, xor_better_thresholds, Scenario, Scheme, SpecialCaseOp,
};

struct Verdicts(Vec<(usize, bool)>);

impl Verdicts {
    fn record(&mut self, n: usize, pass: bool, detail: String, elapsed: Duration) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("criterion {n}: {tag} ({detail}; {:.1} s)", elapsed.as_secs_f64());
        self.0.push((n, pass));
    }
}

fn main() {
    // `cargo test` forwards filter arguments; they are ignored here.
    let mut v = Verdicts(Vec::new());
    let criteria: [(usize, fn() -> (bool, String)); 10] = [
        (1, engine_exactness),
        (2, table_fidelity),
        (3, closed_form),
        (4, thresholds),
        (5, monotonicity),
        (6, config_counts),
        (7, equal_split_ordering),
        (8, power_savings),
        (9, stability),
        (10, determinism),
    ];
    for (n, f) in criteria {
        let t = Instant::now();
        let (pass, detail) = f();
        v.record(n, pass, detail, t.elapsed());
    }
    let failed: Vec<usize> = v.0.iter().filter(|(_, p)| !p).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

fn index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

/// Probabilities in [0, 1] with the endpoints drawn now and then.
fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match index(rng, 10) {
            0 => 0.0,
            1 => 1.0,
            _ => unit(rng),
        })
        .collect()
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Scenario {
    Scenario::load(&scenarios_dir().join(name)).expect("scenario loads")
}

fn two_by_one_configs() -> Vec<(RelayConfig, SpecialCaseOp)> {
    vec![
        (RelayConfig(vec![RelayOperation::Forward(0)]), SpecialCaseOp::ForwardFirst),
        (RelayConfig(vec![RelayOperation::Forward(1)]), SpecialCaseOp::ForwardSecond),
        (RelayConfig(vec![RelayOperation::Xor(vec![0, 1])]), SpecialCaseOp::Xor),
    ]
}

fn engine_exactness() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut instances = 0;
    for t in [Topology::fully_connected(2, 1).unwrap(), Topology::fully_connected(2, 2).unwrap()] {
        let configs = enumerate_configs(&t);
        for _ in 0..120 {
            let config = &configs[index(&mut rng, configs.len())];
            let probs = LinkProbabilities::from_flat(&t, &random_probs(&mut rng, t.num_links())).unwrap();
            let fast = pattern_distribution(&probs, config, &t).unwrap();
            let oracle = enumerate_outcomes_oracle(&probs, config, &t).unwrap();
            worst = worst.max(fast.max_abs_diff(&oracle));
            instances += 1;
        }
    }
    let t = Topology::fully_connected(2, 1).unwrap();
    for (config, _) in two_by_one_configs() {
        for _ in 0..20 {
            let probs = LinkProbabilities::from_flat(&t, &random_probs(&mut rng, 5)).unwrap();
            let fast = pattern_distribution(&probs, &config, &t).unwrap();
            let oracle = enumerate_outcomes_oracle(&probs, &config, &t).unwrap();
            worst = worst.max(fast.max_abs_diff(&oracle));
            instances += 1;
        }
    }
    (worst <= 1e-12, format!("{instances} instances, max deviation {worst:.2e}"))
}

fn table_fidelity() -> (bool, String) {
    let t = Topology::fully_connected(2, 1).unwrap();
    type Theta = fn(&LinkOutcome) -> [bool; 2];
    let expected: [(RelayConfig, Theta); 3] = [
        (RelayConfig(vec![RelayOperation::Forward(0)]), |o| {
            let (g, gt, z) = (&o.sensor_gateway, o.relay_gateway[0], &o.sensor_relay[0]);
            [g[0] || (gt && z[0]), g[1]]
        }),
        (RelayConfig(vec![RelayOperation::Forward(1)]), |o| {
            let (g, gt, z) = (&o.sensor_gateway, o.relay_gateway[0], &o.sensor_relay[0]);
            [g[0], g[1] || (gt && z[1])]
        }),
        (RelayConfig(vec![RelayOperation::Xor(vec![0, 1])]), |o| {
            let (g, gt, z) = (&o.sensor_gateway, o.relay_gateway[0], &o.sensor_relay[0]);
            [g[0] || (gt && g[1] && z[0] && z[1]), g[1] || (gt && g[0] && z[0] && z[1])]
        }),
    ];
    let mut mismatches = 0;
    let mut shown = Vec::new();
    for (config, theta) in &expected {
        let exprs = theta_expression_table(config, &t).unwrap();
        shown.push(format!("[{}] θ1 = {}, θ2 = {}", config, exprs[0], exprs[1]));
        for mask in 0u64..32 {
            let o = LinkOutcome::from_mask(&t, mask);
            let want = theta(&o);
            let decoded = recover_measurements(&o, config, &t);
            for i in 0..2 {
                if exprs[i].eval(&o, &t) != want[i] || decoded.is_recovered(i) != want[i] {
                    mismatches += 1;
                }
            }
        }
    }
    (mismatches == 0, format!("3 configs x 32 outcomes, {mismatches} mismatches; {}", shown.join("; ")))
}

/// Scalar two-sensor model with `c = 1` and effective noise `1/snr`. At 32
/// bits the quantization term is below double precision.
fn special_model(a: f64, q: f64, snr: [f64; 2]) -> SystemModel {
    let model = SystemModel::new(
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, q),
        snr.iter().map(|s| SensorParams::new(vec![1.0], 1.0 / s).with_y_power(1.0 / s)).collect(),
        32,
    )
    .unwrap();
    for (i, s) in snr.iter().enumerate() {
        assert_eq!(model.effective_noise(i), 1.0 / s);
    }
    model
}

fn perfect_relay_probs(t: &Topology, l1: f64, l2: f64) -> LinkProbabilities {
    LinkProbabilities::from_flat(t, &[l1, l2, 1.0, 1.0, 1.0]).unwrap()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn closed_form() -> (bool, String) {
    let (a, q) = (0.95, 1.0);
    let model = special_model(a, q, [1.0, 1.0]);
    let t = Topology::fully_connected(2, 1).unwrap();
    let mut worst = 0.0f64;
    let mut points = 0;
    for &l1 in &linspace(0.0, 1.0, 10) {
        for &l2 in &linspace(0.0, 1.0, 10) {
            for p in [0.1, 0.5, 1.0, 2.0, 5.0] {
                let cov = CovarianceMatrix::scalar(p).unwrap();
                let probs = perfect_relay_probs(&t, l1, l2);
                for (config, op) in two_by_one_configs() {
                    let d = pattern_distribution(&probs, &config, &t).unwrap();
                    let full = expected_covariance(&cov, &d, &model).unwrap().trace();
                    let closed =
                        special_case_expected_covariance(p, l1, l2, model.snr(0), model.snr(1), a, q, op);
                    worst = worst.max((full - closed).abs());
                }
                points += 1;
            }
        }
    }
    (worst <= 1e-10, format!("{points} grid points x 3 operations, max deviation {worst:.2e}"))
}

fn selected_op(selector: &RelaySelector, table: &CorrectionTable, probs: &LinkProbabilities) -> SpecialCaseOp {
    let r = selector.exhaustive(table, probs).unwrap();
    match &r.config.ops()[0] {
        RelayOperation::Forward(0) => SpecialCaseOp::ForwardFirst,
        RelayOperation::Forward(_) => SpecialCaseOp::ForwardSecond,
        RelayOperation::Xor(_) => SpecialCaseOp::Xor,
    }
}

fn thresholds() -> (bool, String) {
    let (a, q) = (0.95, 1.0);
    let t = Topology::fully_connected(2, 1).unwrap();
    let selector = RelaySelector::new(&t).unwrap();
    let mut checked = 0;
    let mut skipped = 0;
    let mut disagreements = 0;
    for snr in [[1.0, 1.0], [0.5, 2.0], [3.0, 0.7]] {
        let model = special_model(a, q, snr);
        for p in [0.2, 0.5, 1.0, 2.0, 5.0] {
            let table = CorrectionTable::new(&DMatrix::from_element(1, 1, p), &model).unwrap();
            let (t1, t2) = xor_better_thresholds(p, model.snr(0), model.snr(1));
            for &l1 in &linspace(0.01, 0.99, 40) {
                for &l2 in &linspace(0.01, 0.99, 40) {
                    if (l1 - t1).abs() <= 1e-9 || (l2 - t2).abs() <= 1e-9 {
                        skipped += 1;
                        continue;
                    }
                    let predicted_xor = l1 > t1 && l2 > t2;
                    let chosen = selected_op(&selector, &table, &perfect_relay_probs(&t, l1, l2));
                    checked += 1;
                    if (chosen == SpecialCaseOp::Xor) != predicted_xor {
                        disagreements += 1;
                    }
                }
            }
        }
    }
    // SNR side at fixed link probabilities.
    let (l1, l2, p) = (0.8, 0.7, 1.0);
    let mut snr_checked = 0;
    for &s1 in &linspace(0.1, 5.0, 30) {
        for &s2 in &linspace(0.1, 5.0, 30) {
            let model = special_model(a, q, [s1, s2]);
            let (s1, s2) = (model.snr(0), model.snr(1));
            let slack1 = l1 / s1 - 1.0 / (s1 + s2) - p * (1.0 - l1);
            let slack2 = l2 / s2 - 1.0 / (s1 + s2) - p * (1.0 - l2);
            if slack1.abs() <= 1e-9 || slack2.abs() <= 1e-9 {
                skipped += 1;
                continue;
            }
            let (c1, c2) = relaykf_core::filter::xor_better_snr_conditions(p, l1, l2, s1, s2);
            let table = CorrectionTable::new(&DMatrix::from_element(1, 1, p), &model).unwrap();
            let chosen = selected_op(&selector, &table, &perfect_relay_probs(&t, l1, l2));
            snr_checked += 1;
            if (chosen == SpecialCaseOp::Xor) != (c1 && c2) || c1 != (slack1 > 0.0) || c2 != (slack2 > 0.0) {
                disagreements += 1;
            }
        }
    }
    (
        disagreements == 0,
        format!(
            "{checked} probability points and {snr_checked} SNR points, {disagreements} disagreements, {skipped} near-tie points skipped"
        ),
    )
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| uniform(rng, -1.0, 1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * 0.1
}

fn random_topology(rng: &mut ChaCha8Rng, m: usize, relays: usize, max_hears: usize) -> Topology {
    let hears = (0..relays)
        .map(|_| {
            let size = 1 + index(rng, max_hears.min(m));
            let mut all: Vec<usize> = (0..m).collect();
            for i in (1..all.len()).rev() {
                all.swap(i, index(rng, i + 1));
            }
            let mut set: Vec<usize> = all.into_iter().take(size).collect();
            set.sort_unstable();
            set
        })
        .collect();
    Topology::new(m, hears).unwrap()
}

fn monotonicity() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut link_violations = 0;
    for _ in 0..100 {
        let n = 1 + index(&mut rng, 3);
        let m = 2 + index(&mut rng, 2);
        let sensors = (0..m)
            .map(|_| {
                let c: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -1.5, 1.5)).collect();
                SensorParams::new(c, uniform(&mut rng, 0.1, 2.0)).with_y_power(50.0)
            })
            .collect();
        let a = DMatrix::from_fn(n, n, |_, _| uniform(&mut rng, -0.8, 0.8));
        let model = SystemModel::new(a, random_spd(&mut rng, n), sensors, 6).unwrap();
        let relays = 1 + index(&mut rng, 2);
        let t = random_topology(&mut rng, m, relays, m);
        let configs = enumerate_configs(&t);
        let config = &configs[index(&mut rng, configs.len())];
        let flat = random_probs(&mut rng, t.num_links());
        let j = index(&mut rng, flat.len());
        let mut raised = flat.clone();
        raised[j] += (1.0 - raised[j]) * uniform(&mut rng, 0.05, 1.0);
        let p = CovarianceMatrix::new(random_spd(&mut rng, n)).unwrap();
        let f = |v: &[f64]| {
            let d = pattern_distribution(&LinkProbabilities::from_flat(&t, v).unwrap(), config, &t).unwrap();
            expected_covariance(&p, &d, &model).unwrap().into_inner()
        };
        let diff = f(&flat) - f(&raised);
        let mut bad = diff.trace() < -1e-12;
        for _ in 0..10 {
            let z = DVector::from_fn(n, |_, _| uniform(&mut rng, -1.0, 1.0));
            bad |= (z.transpose() * &diff * &z)[(0, 0)] < -1e-12;
        }
        link_violations += bad as usize;
    }
    let mut snr_violations = 0;
    for _ in 0..100 {
        let m = 2 + index(&mut rng, 2);
        let a = uniform(&mut rng, 0.3, 1.5);
        let r: Vec<f64> = (0..m).map(|_| uniform(&mut rng, 0.1, 3.0)).collect();
        let c: Vec<f64> = (0..m).map(|_| uniform(&mut rng, 0.3, 1.5)).collect();
        let build = |r: &[f64]| {
            SystemModel::new(
                DMatrix::from_element(1, 1, a),
                DMatrix::from_element(1, 1, 1.0),
                r.iter().zip(&c).map(|(&ri, &ci)| SensorParams::new(vec![ci], ri).with_y_power(50.0)).collect(),
                6,
            )
            .unwrap()
        };
        let i = index(&mut rng, m);
        let mut better = r.clone();
        better[i] *= uniform(&mut rng, 0.05, 0.95);
        let relays = 1 + index(&mut rng, 2);
        let t = random_topology(&mut rng, m, relays, m);
        let configs = enumerate_configs(&t);
        let config = &configs[index(&mut rng, configs.len())];
        let probs = LinkProbabilities::from_flat(&t, &random_probs(&mut rng, t.num_links())).unwrap();
        let d = pattern_distribution(&probs, config, &t).unwrap();
        let p = CovarianceMatrix::scalar(uniform(&mut rng, 0.1, 10.0)).unwrap();
        let (worse_m, better_m) = (build(&r), build(&better));
        let before = expected_covariance(&p, &d, &worse_m).unwrap().trace();
        let after = expected_covariance(&p, &d, &better_m).unwrap().trace();
        snr_violations += (better_m.snr(i) <= worse_m.snr(i) || after > before + 1e-12) as usize;
    }
    (
        link_violations == 0 && snr_violations == 0,
        format!("link-probability suite 100 instances, {link_violations} violations; SNR suite 100 instances, {snr_violations} violations"),
    )
}

fn config_counts() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut wrong = 0;
    let mut largest = 0;
    for _ in 0..50 {
        let m = 1 + index(&mut rng, 5);
        let relays = 1 + index(&mut rng, 4);
        let t = random_topology(&mut rng, m, relays, 4);
        let expected: usize = t.all_hears().iter().map(|s| (1usize << s.len()) - 1).product();
        let configs = enumerate_configs(&t);
        let distinct: std::collections::HashSet<String> = configs.iter().map(|c| c.to_string()).collect();
        largest = largest.max(expected);
        if configs.len() != expected || distinct.len() != expected || config_count(&t) != expected as u128 {
            wrong += 1;
        }
    }
    (wrong == 0, format!("50 topologies (largest {largest} configs), {wrong} mismatches"))
}

/// Mean and standard error of per-iteration differences `a - b`. Both runs
/// share their random streams, so the pairing removes common noise.
fn paired(a: &GridResult, b: &GridResult, metric: fn(&relaykf_core::experiments::IterationStats) -> f64) -> (f64, f64) {
    let d: Vec<f64> = a.per_iteration.iter().zip(&b.per_iteration).map(|(x, y)| metric(x) - metric(y)).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn run(scenario: &Scenario, scheme: Scheme) -> RunResult {
    let mut s = scenario.clone();
    s.scheme = scheme;
    run_scenario(&s).expect("scenario runs")
}

fn equal_split_ordering() -> (bool, String) {
    let base = load("two_relays_equal_split.json");
    let started = Instant::now();
    let opt = run(&base, Scheme::Optimal);
    let sub = run(&base, Scheme::PerRelay);
    let xor = run(&base, Scheme::AlwaysXor);
    let none = run(&base, Scheme::NoRelay);
    let elapsed = started.elapsed();
    let emp = |s: &relaykf_core::experiments::IterationStats| s.emp_err_trace;
    let mut failures = Vec::new();
    let mut gap = 0.0f64;
    for k in 0..base.u_tot_grid.len() {
        let u = base.u_tot_grid[k];
        let checks = [
            ("optimal<=per-relay", &opt.grid[k], &sub.grid[k]),
            ("per-relay<=always-xor", &sub.grid[k], &xor.grid[k]),
            ("optimal<no-relay", &opt.grid[k], &none.grid[k]),
            ("per-relay<no-relay", &sub.grid[k], &none.grid[k]),
            ("always-xor<no-relay", &xor.grid[k], &none.grid[k]),
        ];
        for (name, a, b) in checks {
            let (mean, se) = paired(a, b, emp);
            if mean > 2.0 * se {
                failures.push(format!("{name} at u={u}: diff {mean:.4} > 2se {:.4}", 2.0 * se));
            }
        }
        let rel = (sub.grid[k].emp_err_trace - opt.grid[k].emp_err_trace) / opt.grid[k].emp_err_trace;
        gap = gap.max(rel);
        if rel > 0.05 {
            failures.push(format!("per-relay {:.1}% above optimal at u={u}", 100.0 * rel));
        }
    }
    let curves: Vec<String> = base
        .u_tot_grid
        .iter()
        .enumerate()
        .map(|(k, u)| {
            format!(
                "u={u}: opt {:.3} sub {:.3} xor {:.3} none {:.3}",
                opt.grid[k].emp_err_trace,
                sub.grid[k].emp_err_trace,
                xor.grid[k].emp_err_trace,
                none.grid[k].emp_err_trace
            )
        })
        .collect();
    if elapsed > Duration::from_secs(600) {
        failures.push(format!("runtime {:.0} s over 600 s", elapsed.as_secs_f64()));
    }
    let detail = format!(
        "E[P] by time-averaged squared error [{}]; per-relay gap max {:.2}%; {}",
        curves.join("; "),
        100.0 * gap,
        if failures.is_empty() { "no violations".to_string() } else { format!("violations: {}", failures.join(", ")) }
    );
    (failures.is_empty(), detail)
}

/// Power at which `curve` reaches `level`, by linear interpolation between
/// grid points, with a delta-method standard error.
fn power_to_reach(u: &[f64], e: &[f64], se: &[f64], level: f64, level_se: f64) -> Option<(f64, f64)> {
    (0..u.len() - 1).find_map(|k| {
        let (ea, eb) = (e[k], e[k + 1]);
        if !(ea >= level && level >= eb) || ea == eb {
            return None;
        }
        let width = u[k + 1] - u[k];
        let span = ea - eb;
        let frac = (ea - level) / span;
        let d_ea = width * (level - eb) / (span * span);
        let d_eb = width * (ea - level) / (span * span);
        let d_level = -width / span;
        let var = (d_ea * se[k]).powi(2) + (d_eb * se[k + 1]).powi(2) + (d_level * level_se).powi(2);
        Some((u[k] + frac * width, var.sqrt()))
    })
}

fn power_savings() -> (bool, String) {
    let base = load("one_relay_power_control.json");
    let started = Instant::now();
    let relay = run(&base, Scheme::Optimal);
    let direct = run(&base, Scheme::NoRelay);
    let elapsed = started.elapsed();
    let u: Vec<f64> = relay.grid.iter().map(|g| g.avg_power).collect();
    let e: Vec<f64> = relay.grid.iter().map(|g| g.emp_err_trace).collect();
    let se: Vec<f64> = relay.grid.iter().map(|g| g.emp_err_se).collect();
    let mut failures = Vec::new();
    let mut levels = Vec::new();
    let mut min_saving = f64::INFINITY;
    for g in &direct.grid {
        let Some((needed, needed_se)) = power_to_reach(&u, &e, &se, g.emp_err_trace, g.emp_err_se) else {
            continue;
        };
        let saving = 1.0 - needed / g.avg_power;
        let saving_se = needed_se / g.avg_power;
        min_saving = min_saving.min(saving);
        levels.push(format!("u={}: relay needs {needed:.3} ({:.1}% +- {:.1}%)", g.avg_power, 100.0 * saving, 100.0 * saving_se));
        if saving + 2.0 * saving_se < 0.30 {
            failures.push(format!("saving {:.1}% at u={}", 100.0 * saving, g.avg_power));
        }
    }
    if levels.is_empty() {
        failures.push("no no-relay level inside the relay curve".into());
    }
    if elapsed > Duration::from_secs(900) {
        failures.push(format!("runtime {:.0} s over 900 s", elapsed.as_secs_f64()));
    }
    let avg_p: Vec<String> = relay
        .grid
        .iter()
        .zip(&direct.grid)
        .map(|(r, d)| format!("{:.3}/{:.3}", r.avg_p_trace, d.avg_p_trace))
        .collect();
    let detail = format!(
        "{} levels compared [{}]; min saving {:.1}%; Tr P relay/no-relay [{}]; {}",
        levels.len(),
        levels.join("; "),
        100.0 * min_saving,
        avg_p.join(", "),
        if failures.is_empty() { "no violations".to_string() } else { format!("violations: {}", failures.join(", ")) }
    );
    (failures.is_empty(), detail)
}

fn unstable_scenario(a: f64, mean: f64, gain: Option<f64>) -> Scenario {
    let link = match gain {
        Some(g) => format!(r#"{{"family": "constant", "gain": {g}}}"#),
        None => format!(r#"{{"family": "exponential", "mean": {mean}}}"#),
    };
    let text = format!(
        r#"{{
        "model": {{ "a": {a}, "q": 1.0, "bits_per_packet": 6, "p0": 1.0,
                    "sensors": [{{"c": 1.0, "r": 1.0, "y_power": 20.0}}, {{"c": 1.0, "r": 1.0, "y_power": 20.0}}] }},
        "topology": {{ "num_sensors": 2, "hears": [[0, 1]] }},
        "fading": {{ "sensor_gateway": [{link}, {link}], "relay_gateway": [{link}], "sensor_relay": [[{link}, {link}]] }},
        "scheme": "always-xor",
        "u_tot_grid": [8.0],
        "horizon": 10000,
        "iterations": 1,
        "burn_in": 100
    }}"#
    );
    Scenario::from_json(&text).expect("valid scenario")
}

fn stability() -> (bool, String) {
    let mut notes = Vec::new();
    let mut pass = true;
    for (label, scenario, expect_stable) in [
        ("a=1.2", unstable_scenario(1.2, 2.0, None), true),
        ("a=2", unstable_scenario(2.0, 0.0, Some(0.0)), false),
    ] {
        let prep = scenario.prepare().unwrap();
        let report = stability_check(
            &prep.model,
            &scenario.fading,
            &prep.topology,
            &StabilityPolicy::AlwaysXor,
            &PowerAllocation::equal_split(&prep.topology, scenario.u_tot_grid[0]),
            20_000,
            7,
        )
        .unwrap();
        let mut diverged = 0;
        let mut max_avg = 0.0f64;
        for seed in 0..10 {
            let mut s = scenario.clone();
            s.seed = seed;
            let g = &run_scenario(&s).unwrap().grid[0];
            diverged += g.diverged as usize;
            max_avg = max_avg.max(g.avg_p_trace);
        }
        if expect_stable {
            pass &= report.verdict == Verdict::Satisfied && diverged == 0 && max_avg.is_finite();
        } else {
            pass &= diverged == 10;
        }
        notes.push(format!(
            "{label}: product {:.4} [{:.4}, {:.4}] {}, {diverged}/10 seeds diverged, max time-averaged Tr P {max_avg:.3}",
            report.product, report.ci_low, report.ci_high, report.verdict
        ));
    }
    (pass, notes.join("; "))
}

fn determinism() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let mut small: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(scenarios_dir().join("two_relays_equal_split.json")).unwrap()).unwrap();
    small["iterations"] = 6.into();
    small["horizon"] = 300.into();
    let small_path = dir.path().join("small.json");
    std::fs::write(&small_path, small.to_string()).unwrap();
    let one_relay = scenarios_dir().join("one_relay_power_control.json");
    let s = small_path.to_str().unwrap().to_string();
    let f4 = one_relay.to_str().unwrap().to_string();
    let commands: Vec<Vec<String>> = [
        vec!["simulate", &s, "--seed", "11"],
        vec!["simulate", &s, "--scheme", "half-bits"],
        vec!["select", &s, "--p", "1.5", "--gains", "sample", "--seed", "3"],
        vec!["select", &s, "--p", "1.5", "--gains", "sample", "--method", "per-relay"],
        vec!["power", &f4, "--u-tot", "3"],
        vec!["stability", &s, "--samples", "5000"],
        vec!["count-configs", &s],
    ]
    .iter()
    .map(|c| c.iter().map(|x| x.to_string()).collect())
    .collect();
    let mut differing = Vec::new();
    for (k, args) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for threads in ["1", "4", "4"] {
            let out = dir.path().join(format!("out{k}_{}.csv", outputs.len()));
            let status = Command::new(env!("CARGO_BIN_EXE_relaykf"))
                .args(args)
                .args(["--threads", threads, "--out", out.to_str().unwrap()])
                .status()
                .unwrap();
            if !status.success() {
                differing.push(format!("`{}` failed", args[0]));
                break;
            }
            outputs.push(std::fs::read(&out).unwrap());
        }
        if outputs.len() == 3 && (outputs[0] != outputs[1] || outputs[1] != outputs[2]) {
            differing.push(format!("`{}`", args.join(" ")));
        }
    }
    (
        differing.is_empty(),
        format!(
            "{} commands x (1, 4, 4 threads), {}",
            commands.len(),
            if differing.is_empty() { "all byte-identical".to_string() } else { format!("differ: {}", differing.join(", ")) }
        ),
    )
}
