use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    link_probabilities_unchecked, sample_relay_gains, sample_sensor_gains, Bpsk, ChannelState,
    LinkProbabilities, PowerAllocation, Topology,
};
use crate::error::Result;
use crate::filter::{kalman_step, CorrectionTable, FilterState};
use crate::model::{factor, simulate_trajectory_with, SystemModel};
use crate::netcode::{ConfigDecoder, LinkOutcome, ReconstructionPattern, RelayConfig};
use crate::optimize::{
    joint_select_and_power_with, minimize_on_simplex, optimize_power_with, JointMode,
    RelaySelector,
};

use super::half_bits::{
    half_bits_distribution, half_bits_receptions, half_bits_scheme_step, HalfBitsTable,
};
use super::scenario::{PowerMode, PreparedScenario, Scenario, Scheme};

// Independent random streams per iteration and purpose.
const TRAJECTORY: u64 = 0;
const SENSOR_GAINS: u64 = 1;
const RELAY_GAINS: u64 = 2;
const DIRECT_LINKS: u64 = 3;
const RELAY_LINKS: u64 = 4;
const STREAMS_PER_ITERATION: u64 = 8;

fn stream(seed: u64, iteration: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64 * STREAMS_PER_ITERATION + purpose);
    rng
}

/// Time averages of one Monte Carlo iteration, taken after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub emp_err_trace: f64,
    pub p_trace: f64,
    pub avg_power: f64,
    pub diverged: bool,
    /// Steps that entered the averages.
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub u_tot: f64,
    pub avg_power: f64,
    pub emp_err_trace: f64,
    pub emp_err_se: f64,
    pub avg_p_trace: f64,
    pub avg_p_se: f64,
    pub diverged: bool,
    pub diverged_iterations: usize,
    pub iterations: usize,
    pub per_iteration: Vec<IterationStats>,
    /// Mean `Tr P_k` per step over the iterations still running at `k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_trace_series: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scheme: Scheme,
    pub seed: u64,
    pub grid: Vec<GridResult>,
}

enum Delivery<'a> {
    Coded(&'a ConfigDecoder),
    HalfBits,
}

struct Decision<'a> {
    powers: PowerAllocation,
    delivery: Delivery<'a>,
}

/// Per-scenario state shared by all iterations.
struct Engine<'a> {
    scenario: &'a Scenario,
    model: &'a SystemModel,
    topology: &'a Topology,
    direct_topology: Topology,
    law: Bpsk,
    selector: Option<RelaySelector>,
    fixed: Option<ConfigDecoder>,
    direct: ConfigDecoder,
    shares: Option<Vec<f64>>,
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, prep: &'a PreparedScenario) -> Result<Self> {
        let topology = &prep.topology;
        let direct_topology = topology.without_relays();
        let selector = match scenario.scheme {
            Scheme::Optimal | Scheme::PerRelay => Some(RelaySelector::new(topology)?),
            _ => None,
        };
        let fixed = match scenario.scheme {
            Scheme::AlwaysXor => Some(ConfigDecoder::new(&RelayConfig::always_xor(topology), topology)?),
            Scheme::FixedConfig => Some(ConfigDecoder::new(
                prep.fixed_config.as_ref().expect("validated"),
                topology,
            )?),
            _ => None,
        };
        let shares = prep.fixed_shares.clone().map(|s| {
            if scenario.scheme == Scheme::NoRelay {
                let m = topology.num_sensors();
                let total: f64 = s[..m].iter().sum();
                s[..m].iter().map(|x| x / total).collect()
            } else {
                s
            }
        });
        Ok(Engine {
            scenario,
            model: &prep.model,
            topology,
            direct: ConfigDecoder::new(&RelayConfig::default(), &direct_topology)?,
            direct_topology,
            law: Bpsk {
                bits: prep.model.bits_per_packet(),
            },
            selector,
            fixed,
            shares,
        })
    }

    /// Topology the scheme actually transmits over.
    fn active_topology(&self) -> &Topology {
        if self.scenario.scheme == Scheme::NoRelay {
            &self.direct_topology
        } else {
            self.topology
        }
    }

    fn active_state(&self, state: &ChannelState) -> ChannelState {
        if self.scenario.scheme == Scheme::NoRelay {
            state.without_relays()
        } else {
            state.clone()
        }
    }

    fn preset_powers(&self, u_tot: f64) -> PowerAllocation {
        let topo = self.active_topology();
        match (&self.shares, self.scenario.power_mode) {
            (Some(s), PowerMode::Fixed) => {
                let flat: Vec<f64> = s.iter().map(|x| x * u_tot).collect();
                PowerAllocation::from_flat(&flat, topo.num_sensors())
            }
            _ => PowerAllocation::equal_split(topo, u_tot),
        }
    }

    fn decide(&self, p: &FilterState, state: &ChannelState, u_tot: f64) -> Result<Decision<'_>> {
        let scheme = self.scenario.scheme;
        let optimized = self.scenario.power_mode == PowerMode::Optimized;
        let params = &self.scenario.solver;
        let topo = self.active_topology();
        let active = self.active_state(state);
        let pm = p.covariance.matrix();

        if scheme == Scheme::HalfBits {
            let powers = if optimized {
                let table = HalfBitsTable::new(pm, self.model)?;
                let m = topo.num_sensors();
                let r = minimize_on_simplex(
                    |u| {
                        let powers = PowerAllocation::from_flat(u, m);
                        let probs = link_probabilities_unchecked(&active, &powers, topo, &self.law);
                        table.expected_trace(&half_bits_distribution(&probs, topo))
                    },
                    m + topo.num_relays(),
                    u_tot,
                    params,
                );
                PowerAllocation::from_flat(&r.point, m)
            } else {
                self.preset_powers(u_tot)
            };
            return Ok(Decision {
                powers,
                delivery: Delivery::HalfBits,
            });
        }

        let fixed_decoder = match scheme {
            Scheme::NoRelay => Some(&self.direct),
            Scheme::AlwaysXor | Scheme::FixedConfig => self.fixed.as_ref(),
            _ => None,
        };
        if let Some(decoder) = fixed_decoder {
            let powers = if optimized {
                let table = CorrectionTable::new(pm, self.model)?;
                optimize_power_with(&table, decoder, &active, topo, &self.law, u_tot, params)?.allocation
            } else {
                self.preset_powers(u_tot)
            };
            return Ok(Decision {
                powers,
                delivery: Delivery::Coded(decoder),
            });
        }

        let selector = self.selector.as_ref().expect("selection scheme");
        let table = CorrectionTable::new(pm, self.model)?;
        let (config, powers) = if optimized {
            let mode = if scheme == Scheme::Optimal {
                JointMode::Exact
            } else {
                JointMode::Suboptimal
            };
            let (sel, pow) =
                joint_select_and_power_with(selector, &table, &active, &self.law, u_tot, mode, params)?;
            (sel.config, pow.allocation)
        } else {
            let powers = self.preset_powers(u_tot);
            let probs = link_probabilities_unchecked(&active, &powers, topo, &self.law);
            let sel = if scheme == Scheme::Optimal {
                selector.exhaustive(&table, &probs)?
            } else {
                selector.per_relay(&table, &probs)?
            };
            (sel.config, powers)
        };
        let decoder = &selector.decoders()?[selector.index_of(&config)?];
        Ok(Decision {
            powers,
            delivery: Delivery::Coded(decoder),
        })
    }

    fn run_iteration(&self, u_tot: f64, iteration: usize) -> Result<(IterationStats, Vec<f64>)> {
        let s = self.scenario;
        let model = self.model;
        let topo = self.topology;
        let m = topo.num_sensors();
        let relay_links = topo.num_links() - m;

        let mut traj_rng = stream(s.seed, iteration, TRAJECTORY);
        let mut sensor_rng = stream(s.seed, iteration, SENSOR_GAINS);
        let mut relay_rng = stream(s.seed, iteration, RELAY_GAINS);
        let mut direct_rng = stream(s.seed, iteration, DIRECT_LINKS);
        let mut relay_link_rng = stream(s.seed, iteration, RELAY_LINKS);

        let mut filter = FilterState::initial(model).expect("validated initial covariance");
        let x0 = factor(filter.covariance.matrix())
            * DVector::from_fn(model.state_dim(), |_, _| traj_rng.sample::<f64, _>(StandardNormal));
        let traj = simulate_trajectory_with(model, s.horizon, Some(x0), &mut traj_rng);

        let mut err_sum = 0.0;
        let mut p_sum = 0.0;
        let mut power_sum = 0.0;
        let mut counted = 0;
        let mut diverged = false;
        let mut series = Vec::new();
        let mut u_direct = vec![0.0; m];
        let mut u_relay = vec![0.0; relay_links];

        for k in 0..s.horizon {
            let p_trace = filter.covariance.trace();
            if !(p_trace <= s.divergence_cap) {
                diverged = true;
                break;
            }
            if s.record_traces {
                series.push(p_trace);
            }
            let sensor_gateway = sample_sensor_gains(&s.fading, &mut sensor_rng);
            let (relay_gateway, sensor_relay) = sample_relay_gains(&s.fading, &mut relay_rng);
            let state = ChannelState {
                sensor_gateway,
                relay_gateway,
                sensor_relay,
            };
            for u in u_direct.iter_mut() {
                *u = direct_rng.random();
            }
            for u in u_relay.iter_mut() {
                *u = relay_link_rng.random();
            }

            let decision = self.decide(&filter, &state, u_tot)?;
            let probs = self.full_probabilities(&state, &decision.powers);
            let outcome = LinkOutcome::from_flat_uniforms(topo, &probs, &u_direct, &u_relay);
            let measurements = traj.measurements_at(k);

            if k >= s.burn_in {
                let e = &traj.states[k] - &filter.estimate;
                err_sum += e.norm_squared();
                p_sum += p_trace;
                power_sum += decision.powers.total();
                counted += 1;
            }

            filter = match decision.delivery {
                Delivery::Coded(decoder) => {
                    let direct_mask = outcome
                        .sensor_gateway
                        .iter()
                        .enumerate()
                        .fold(0u64, |acc, (i, &ok)| acc | (ok as u64) << i);
                    let delivered = (0..decoder.num_relays())
                        .fold(0u64, |acc, l| acc | (decoder.delivered(l, &outcome) as u64) << l);
                    let pattern =
                        ReconstructionPattern::from_mask(decoder.pattern(direct_mask, delivered), m);
                    kalman_step(&filter, &pattern, &measurements, model)?
                }
                Delivery::HalfBits => {
                    let receptions = half_bits_receptions(
                        &outcome.sensor_gateway,
                        &outcome.relay_gateway,
                        &outcome.sensor_relay,
                        topo,
                    );
                    let coarse: Vec<f64> = traj
                        .coarse_measurements
                        .as_ref()
                        .expect("even packet size validated")
                        .iter()
                        .map(|c| c[k])
                        .collect();
                    half_bits_scheme_step(&filter, &receptions, &measurements, &coarse, model)?
                }
            };
        }
        let stats = if counted > 0 {
            let n = counted as f64;
            IterationStats {
                emp_err_trace: err_sum / n,
                p_trace: p_sum / n,
                avg_power: power_sum / n,
                diverged,
                steps: counted,
            }
        } else {
            IterationStats {
                emp_err_trace: f64::INFINITY,
                p_trace: f64::INFINITY,
                avg_power: 0.0,
                diverged,
                steps: 0,
            }
        };
        Ok((stats, series))
    }

    /// Reception probabilities on the full topology; silent relays get zero.
    fn full_probabilities(&self, state: &ChannelState, powers: &PowerAllocation) -> LinkProbabilities {
        let full_powers = if powers.relay.len() == self.topology.num_relays() {
            powers.clone()
        } else {
            PowerAllocation {
                sensor: powers.sensor.clone(),
                relay: vec![0.0; self.topology.num_relays()],
            }
        };
        link_probabilities_unchecked(state, &full_powers, self.topology, &self.law)
    }
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 || !mean.is_finite() {
        return (mean, if n < 2.0 { 0.0 } else { f64::NAN });
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs every grid point of `scenario`. Iterations run in parallel; the
/// output does not depend on the thread count.
pub fn run_scenario(scenario: &Scenario) -> Result<RunResult> {
    let prep = scenario.prepare()?;
    let engine = Engine::new(scenario, &prep)?;
    let mut grid = Vec::with_capacity(scenario.u_tot_grid.len());
    for &u_tot in &scenario.u_tot_grid {
        let runs = (0..scenario.iterations)
            .into_par_iter()
            .map(|it| engine.run_iteration(u_tot, it))
            .collect::<Result<Vec<_>>>()?;
        let stats: Vec<IterationStats> = runs.iter().map(|(s, _)| s.clone()).collect();
        let (emp_err_trace, emp_err_se) = mean_and_se(stats.iter().map(|s| s.emp_err_trace));
        let (avg_p_trace, avg_p_se) = mean_and_se(stats.iter().map(|s| s.p_trace));
        let avg_power = stats.iter().map(|s| s.avg_power).sum::<f64>() / stats.len() as f64;
        let diverged_iterations = stats.iter().filter(|s| s.diverged).count();
        let p_trace_series = scenario.record_traces.then(|| {
            (0..scenario.horizon)
                .map_while(|k| {
                    let (sum, n) = runs
                        .iter()
                        .filter_map(|(_, series)| series.get(k))
                        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                    (n > 0).then(|| sum / n as f64)
                })
                .collect()
        });
        grid.push(GridResult {
            u_tot,
            avg_power,
            emp_err_trace,
            emp_err_se,
            avg_p_trace,
            avg_p_se,
            diverged: diverged_iterations > 0,
            diverged_iterations,
            iterations: scenario.iterations,
            per_iteration: stats,
            p_trace_series,
        });
    }
    Ok(RunResult {
        scheme: scenario.scheme,
        seed: scenario.seed,
        grid,
    })
}
