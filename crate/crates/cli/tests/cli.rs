use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn relaykf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relaykf")).args(args).output().unwrap()
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn small_scenario(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(scenarios().join("two_relays_equal_split.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["iterations"] = 3.into();
    v["horizon"] = 200.into();
    v["u_tot_grid"] = serde_json::json!([2.0, 8.0]);
    let path = dir.join("small.json");
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn simulate_writes_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let s = small_scenario(dir.path());
    let out = dir.path().join("r.csv");
    let o = relaykf(&["simulate", s.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "scheme,u_tot,avg_power,emp_err_trace,avg_P_trace,diverged,iterations,seed");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("optimal,2,2,"));
    assert!(lines[1].ends_with(",false,3,4"));
}

#[test]
fn simulate_overrides_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let s = small_scenario(dir.path());
    let text = stdout(&relaykf(&["simulate", s.to_str().unwrap(), "--scheme", "no-relay", "--iterations", "2"]));
    assert!(text.lines().skip(1).all(|l| l.starts_with("no-relay,") && l.contains(",2,2024")));
}

#[test]
fn count_configs_reports_products_and_sums() {
    let text = stdout(&relaykf(&["count-configs", scenarios().join("two_relays_equal_split.json").to_str().unwrap()]));
    assert_eq!(
        text,
        "relay,hears,operations\n1,1 2,3\n2,1 2,3\nall,,9\nper-relay-search,,6\n"
    );
}

#[test]
fn select_marks_the_minimum() {
    let text = stdout(&relaykf(&["select", scenarios().join("two_relays_equal_split.json").to_str().unwrap(), "--p", "1.5"]));
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<(String, f64, bool)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].parse().unwrap(), r[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 9);
    let best = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let chosen: Vec<_> = rows.iter().filter(|r| r.2).collect();
    assert_eq!(chosen.len(), 1);
    assert_eq!(chosen[0].1, best);
}

#[test]
fn select_reads_gains_file() {
    let dir = tempfile::tempdir().unwrap();
    let gains = dir.path().join("g.json");
    std::fs::write(
        &gains,
        r#"{"sensor_gateway": [0.5, 0.5], "relay_gateway": [5.0, 0.1], "sensor_relay": [[5.0, 5.0], [5.0, 5.0]]}"#,
    )
    .unwrap();
    let text = stdout(&relaykf(&[
        "select",
        scenarios().join("two_relays_equal_split.json").to_str().unwrap(),
        "--p",
        "2",
        "--gains",
        gains.to_str().unwrap(),
        "--u-tot",
        "20",
    ]));
    let scenario = relaykf_core::Scenario::load(&scenarios().join("two_relays_equal_split.json")).unwrap();
    let prep = scenario.prepare().unwrap();
    let state: relaykf_core::ChannelState =
        serde_json::from_str(&std::fs::read_to_string(&gains).unwrap()).unwrap();
    let expected = relaykf_core::select_config_exhaustive(
        &relaykf_core::CovarianceMatrix::scalar(2.0).unwrap(),
        &state,
        &relaykf_core::PowerAllocation::equal_split(&prep.topology, 20.0),
        &prep.topology,
        &prep.model,
    )
    .unwrap();
    let chosen = text.lines().find(|l| l.ends_with(",true")).unwrap();
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(chosen.as_bytes());
    let record = rdr.records().next().unwrap().unwrap();
    assert_eq!(&record[0], expected.config.to_string());
    assert_eq!(&record[1], relaykf_core::experiments::format_sig(expected.objective, 12));
}

#[test]
fn power_allocation_sums_to_budget() {
    let text = stdout(&relaykf(&["power", scenarios().join("one_relay_power_control.json").to_str().unwrap(), "--u-tot", "3"]));
    let total: f64 = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 3.0).abs() < 1e-9);
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn stability_prints_one_row() {
    let text = stdout(&relaykf(&[
        "stability",
        scenarios().join("two_relays_equal_split.json").to_str().unwrap(),
        "--samples",
        "2000",
        "--policy",
        "always-xor",
    ]));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("always-xor,2,2000,"));
    assert!(lines[1].ends_with(",satisfied"));
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"model\": 1}").unwrap();
    for args in [
        vec!["count-configs", "/nonexistent/scenario.json"],
        vec!["count-configs", bad.to_str().unwrap()],
        vec!["stability", scenarios().join("two_relays_equal_split.json").to_str().unwrap(), "--samples", "10"],
        vec!["power", scenarios().join("one_relay_power_control.json").to_str().unwrap(), "--u-tot", "-1"],
        vec!["stability", scenarios().join("two_relays_equal_split.json").to_str().unwrap(), "--policy", "optimal"],
    ] {
        let o = relaykf(&args);
        assert!(!o.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
    }
}
