use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use relaykf_core::experiments::{format_sig, write_results, MatrixSpec, PowerMode, PreparedScenario};
use relaykf_core::netcode::{config_count, relay_operations};
use relaykf_core::{
    joint_select_and_power, optimize_power, run_scenario, sample_channel_state, select_config_exhaustive,
    select_config_per_relay, stability_check, ChannelState, CovarianceMatrix, JointMode, PowerAllocation,
    RelayConfig, Scenario, Scheme, StabilityPolicy,
};

#[derive(Parser)]
#[command(name = "relaykf", version, about = "Relay-aided Kalman filtering over fading links")]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo run over the scenario's power grid.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        out: Output,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Scores relay configurations for one covariance and channel draw.
    Select {
        scenario: PathBuf,
        #[command(flatten)]
        point: OperatingPoint,
        #[arg(long, value_enum, default_value_t = Method::Exhaustive)]
        method: Method,
        #[command(flatten)]
        out: Output,
    },
    /// Sum-power allocation for one covariance and channel draw.
    Power {
        scenario: PathBuf,
        #[command(flatten)]
        point: OperatingPoint,
        /// Keep this configuration instead of searching, e.g. "relay 1: xor 1,2".
        #[arg(long)]
        config: Option<String>,
        #[command(flatten)]
        out: Output,
    },
    /// Sampled stability certificate.
    Stability {
        scenario: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        policy: Option<StabilityPolicy>,
        #[arg(long)]
        u_tot: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: Output,
    },
    /// Relay configuration counts of the scenario's topology.
    CountConfigs {
        scenario: PathBuf,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Args)]
struct Output {
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OperatingPoint {
    /// Prior covariance: a number (times the identity) or a JSON matrix file.
    /// Defaults to the scenario's initial covariance.
    #[arg(long)]
    p: Option<String>,
    /// `sample` to draw from the scenario's fading, or a JSON channel-state file.
    #[arg(long, default_value = "sample")]
    gains: String,
    /// Power budget; the first grid point when omitted.
    #[arg(long)]
    u_tot: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Exhaustive,
    PerRelay,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Core errors already embed their source in the message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1).map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    msg = format!("{msg}: {cause}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building the thread pool")?;
    }
    match cli.command {
        Command::Simulate {
            scenario,
            out,
            seed,
            iterations,
            scheme,
        } => {
            let mut s = load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(n) = iterations {
                s.iterations = n;
            }
            if let Some(scheme) = scheme {
                s.scheme = scheme;
            }
            let result = run_scenario(&s)?;
            let mut buf = Vec::new();
            write_results(&result, &mut buf)?;
            emit(&out, &buf)
        }
        Command::Select {
            scenario,
            point,
            method,
            out,
        } => {
            let s = load(&scenario)?;
            let prep = s.prepare()?;
            let (p, state, powers) = operating_point(&s, &prep, &point)?;
            let mut rows = vec![vec!["config".to_string(), "objective".into(), "selected".into()]];
            match method {
                Method::Exhaustive => {
                    let r = select_config_exhaustive(&p, &state, &powers, &prep.topology, &prep.model)?;
                    for (c, v) in &r.table {
                        rows.push(vec![c.to_string(), format_sig(*v, 12), (*c == r.config).to_string()]);
                    }
                }
                Method::PerRelay => {
                    let r = select_config_per_relay(&p, &state, &powers, &prep.topology, &prep.model)?;
                    for (l, scores) in r.relay_scores.iter().enumerate() {
                        for (op, v) in scores {
                            let chosen = r.config.ops()[l] == *op;
                            rows.push(vec![format!("relay {}: {op}", l + 1), format_sig(*v, 12), chosen.to_string()]);
                        }
                    }
                    rows.push(vec![r.config.to_string(), format_sig(r.objective, 12), "true".into()]);
                }
            }
            emit(&out, &csv_bytes(&rows)?)
        }
        Command::Power {
            scenario,
            point,
            config,
            out,
        } => {
            let s = load(&scenario)?;
            let prep = s.prepare()?;
            let (p, state, _) = operating_point(&s, &prep, &point)?;
            let u_tot = budget(&s, point.u_tot)?;
            let topo = &prep.topology;
            let fixed = match (config, s.scheme) {
                (Some(text), _) => Some(text.parse::<RelayConfig>()?),
                (None, Scheme::FixedConfig) => prep.fixed_config.clone(),
                (None, Scheme::AlwaysXor) => Some(RelayConfig::always_xor(topo)),
                _ => None,
            };
            let (config, result) = match (fixed, s.scheme) {
                (Some(c), _) => {
                    let r = optimize_power(&p, &state, &c, topo, &prep.model, u_tot, &s.solver)?;
                    (c, r)
                }
                (None, Scheme::NoRelay) => {
                    let direct = topo.without_relays();
                    let c = RelayConfig::default();
                    let r = optimize_power(&p, &state.without_relays(), &c, &direct, &prep.model, u_tot, &s.solver)?;
                    (c, r)
                }
                (None, scheme) => {
                    let mode = if scheme == Scheme::PerRelay {
                        JointMode::Suboptimal
                    } else {
                        JointMode::Exact
                    };
                    let (sel, r) = joint_select_and_power(&p, &state, topo, &prep.model, u_tot, mode, &s.solver)?;
                    (sel.config, r)
                }
            };
            let mut rows = vec![vec!["config".to_string(), "objective".into(), "node".into(), "power".into()]];
            let nodes = result
                .allocation
                .sensor
                .iter()
                .enumerate()
                .map(|(i, u)| (format!("sensor {}", i + 1), *u))
                .chain(
                    result
                        .allocation
                        .relay
                        .iter()
                        .enumerate()
                        .map(|(l, u)| (format!("relay {}", l + 1), *u)),
                );
            for (node, u) in nodes {
                rows.push(vec![config.to_string(), format_sig(result.objective, 12), node, format_sig(u, 12)]);
            }
            emit(&out, &csv_bytes(&rows)?)
        }
        Command::Stability {
            scenario,
            samples,
            policy,
            u_tot,
            seed,
            out,
        } => {
            let s = load(&scenario)?;
            let prep = s.prepare()?;
            let policy = policy.unwrap_or_else(|| s.stability.policy.clone());
            let u_tot = budget(&s, u_tot.or(s.stability.u_tot))?;
            let powers = preset_powers(&s, &prep, u_tot);
            let samples = samples.unwrap_or(s.stability.samples);
            let r = stability_check(
                &prep.model,
                &s.fading,
                &prep.topology,
                &policy,
                &powers,
                samples,
                seed.unwrap_or(s.seed),
            )?;
            let rows = vec![
                [
                    "policy",
                    "u_tot",
                    "samples",
                    "outage_probability",
                    "std_error",
                    "spectral_norm_sq",
                    "product",
                    "ci_low",
                    "ci_high",
                    "verdict",
                ]
                .map(String::from)
                .to_vec(),
                vec![
                    policy.to_string(),
                    format_sig(u_tot, 12),
                    r.samples.to_string(),
                    format_sig(r.outage_probability, 12),
                    format_sig(r.std_error, 12),
                    format_sig(r.spectral_norm_sq, 12),
                    format_sig(r.product, 12),
                    format_sig(r.ci_low, 12),
                    format_sig(r.ci_high, 12),
                    r.verdict.to_string(),
                ],
            ];
            emit(&out, &csv_bytes(&rows)?)
        }
        Command::CountConfigs { scenario, out } => {
            let s = load(&scenario)?;
            let prep = s.prepare()?;
            let topo = &prep.topology;
            let mut rows = vec![vec!["relay".to_string(), "hears".into(), "operations".into()]];
            let mut per_relay = 0usize;
            for l in 0..topo.num_relays() {
                let ops = relay_operations(topo.hears(l)).len();
                per_relay += ops;
                let hears: Vec<String> = topo.hears(l).iter().map(|i| (i + 1).to_string()).collect();
                rows.push(vec![(l + 1).to_string(), hears.join(" "), ops.to_string()]);
            }
            rows.push(vec!["all".into(), String::new(), config_count(topo).to_string()]);
            rows.push(vec!["per-relay-search".into(), String::new(), per_relay.to_string()]);
            emit(&out, &csv_bytes(&rows)?)
        }
    }
}

fn load(path: &Path) -> Result<Scenario> {
    Ok(Scenario::load(path)?)
}

fn budget(s: &Scenario, u_tot: Option<f64>) -> Result<f64> {
    match u_tot.or_else(|| s.u_tot_grid.first().copied()) {
        Some(u) if u > 0.0 && u.is_finite() => Ok(u),
        Some(u) => bail!("power budget must be > 0, got {u}"),
        None => bail!("no power budget: pass --u-tot or fill u_tot_grid"),
    }
}

fn preset_powers(s: &Scenario, prep: &PreparedScenario, u_tot: f64) -> PowerAllocation {
    match (&prep.fixed_shares, s.power_mode) {
        (Some(shares), PowerMode::Fixed) => {
            let flat: Vec<f64> = shares.iter().map(|x| x * u_tot).collect();
            PowerAllocation::from_flat(&flat, prep.topology.num_sensors())
        }
        _ => PowerAllocation::equal_split(&prep.topology, u_tot),
    }
}

fn operating_point(
    s: &Scenario,
    prep: &PreparedScenario,
    point: &OperatingPoint,
) -> Result<(CovarianceMatrix, ChannelState, PowerAllocation)> {
    let n = prep.model.state_dim();
    let p = match &point.p {
        None => prep
            .model
            .initial_covariance()
            .cloned()
            .context("the scenario has no initial covariance; pass --p")?,
        Some(text) => match text.parse::<f64>() {
            Ok(x) => DMatrix::identity(n, n) * x,
            Err(_) => {
                let raw = std::fs::read_to_string(text).with_context(|| format!("reading {text}"))?;
                let spec: MatrixSpec =
                    serde_json::from_str(&raw).with_context(|| format!("parsing {text}"))?;
                match spec {
                    MatrixSpec::Scalar(x) => DMatrix::identity(n, n) * x,
                    rows => rows.to_matrix("P")?,
                }
            }
        },
    };
    let state = if point.gains == "sample" {
        let mut rng = ChaCha8Rng::seed_from_u64(point.seed.unwrap_or(s.seed));
        sample_channel_state(&s.fading, &mut rng)
    } else {
        let raw = std::fs::read_to_string(&point.gains).with_context(|| format!("reading {}", point.gains))?;
        let state: ChannelState =
            serde_json::from_str(&raw).with_context(|| format!("parsing {}", point.gains))?;
        state.validate(&prep.topology)?;
        state
    };
    let u_tot = budget(s, point.u_tot)?;
    Ok((CovarianceMatrix::new(p)?, state, preset_powers(s, prep, u_tot)))
}

fn csv_bytes(rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

fn emit(out: &Output, bytes: &[u8]) -> Result<()> {
    match &out.out {
        Some(path) => {
            let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            f.write_all(bytes)?;
        }
        None => io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}
