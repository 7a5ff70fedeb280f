//! Relay selection, sum-power allocation and stability certificates.

mod simplex;
mod stability;

use std::sync::OnceLock;

use crate::channel::{
    link_probabilities, link_probabilities_unchecked, Bpsk, ChannelState, LinkProbabilities,
    PowerAllocation, SuccessLaw, Topology,
};
use crate::error::{Error, Result};
use crate::filter::{CorrectionTable, CovarianceMatrix};
use crate::model::SystemModel;
use crate::netcode::{
    config_count, enumerate_configs, relay_operations, ConfigDecoder, RelayConfig, RelayOperation,
    MAX_DECODER_ATOMS,
};

/// Largest configuration set the exhaustive search will enumerate.
pub const MAX_EXHAUSTIVE_CONFIGS: u128 = 1 << 16;

pub use simplex::{minimize_on_simplex, project_to_simplex, SimplexResult, SolverParams};
pub use stability::{
    outage_probability, stability_check, FullRankTable, StabilityPolicy, StabilityReport, Verdict,
};

/// Outcome of a relay-configuration search.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub config: RelayConfig,
    /// `Tr f(P)` under `config`.
    pub objective: f64,
    /// Every full configuration scored, in enumeration order. Empty for the
    /// per-relay search.
    pub table: Vec<(RelayConfig, f64)>,
    /// Per-relay scores of each operation with the other relays removed.
    /// Empty for the exhaustive search.
    pub relay_scores: Vec<Vec<(RelayOperation, f64)>>,
    /// Number of `Tr f` evaluations used to pick `config`.
    pub evaluations: usize,
}

/// Outcome of a power search.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerResult {
    pub allocation: PowerAllocation,
    pub objective: f64,
    pub restarts: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JointMode {
    /// Optimize power for every configuration and keep the best.
    Exact,
    /// Pick per relay at equal split, then optimize power once.
    Suboptimal,
}

/// Precomputed decoders for one topology, reusable across time steps.
#[derive(Debug)]
pub struct RelaySelector {
    topology: Topology,
    relay_ops: Vec<Vec<RelayOperation>>,
    relay_decoders: Vec<Vec<ConfigDecoder>>,
    full: OnceLock<(Vec<RelayConfig>, Vec<ConfigDecoder>)>,
}

impl RelaySelector {
    pub fn new(topology: &Topology) -> Result<Self> {
        let relay_ops: Vec<Vec<RelayOperation>> =
            topology.all_hears().iter().map(|h| relay_operations(h)).collect();
        let relay_decoders = relay_ops
            .iter()
            .enumerate()
            .map(|(l, ops)| {
                let sub = topology.only_relay(l);
                ops.iter()
                    .map(|op| ConfigDecoder::new(&RelayConfig(vec![op.clone()]), &sub))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RelaySelector {
            topology: topology.clone(),
            relay_ops,
            relay_decoders,
            full: OnceLock::new(),
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    fn full(&self) -> Result<&(Vec<RelayConfig>, Vec<ConfigDecoder>)> {
        if let Some(full) = self.full.get() {
            return Ok(full);
        }
        let atoms = self.topology.num_sensors() + self.topology.num_relays();
        if atoms > MAX_DECODER_ATOMS {
            return Err(Error::TooManyLinks {
                links: atoms,
                max: MAX_DECODER_ATOMS,
            });
        }
        let count = config_count(&self.topology);
        if count > MAX_EXHAUSTIVE_CONFIGS {
            return Err(Error::InvalidConfig(format!(
                "{count} configurations exceed the exhaustive-search limit of {MAX_EXHAUSTIVE_CONFIGS}"
            )));
        }
        Ok(self.full.get_or_init(|| {
            let configs = enumerate_configs(&self.topology);
            let decoders = configs
                .iter()
                .map(|c| ConfigDecoder::new(c, &self.topology).expect("enumerated configs are valid"))
                .collect();
            (configs, decoders)
        }))
    }

    /// All configurations in enumeration order.
    pub fn configs(&self) -> Result<&[RelayConfig]> {
        Ok(&self.full()?.0)
    }

    /// Decoders aligned with [`RelaySelector::configs`].
    pub fn decoders(&self) -> Result<&[ConfigDecoder]> {
        Ok(&self.full()?.1)
    }

    /// Position of `config` in enumeration order.
    pub fn index_of(&self, config: &RelayConfig) -> Result<usize> {
        config.validate(&self.topology)?;
        let mut index = 0;
        for (ops, op) in self.relay_ops.iter().zip(config.ops()) {
            let k = ops
                .iter()
                .position(|o| o == op)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown operation {op:?}")))?;
            index = index * ops.len() + k;
        }
        Ok(index)
    }

    /// Minimizes `Tr f(P)` over every configuration.
    pub fn exhaustive(&self, table: &CorrectionTable, probs: &LinkProbabilities) -> Result<SelectionResult> {
        let (configs, decoders) = self.full()?;
        let scores: Vec<(RelayConfig, f64)> = configs
            .iter()
            .zip(decoders)
            .map(|(c, d)| (c.clone(), table.expected_trace(&d.distribution(probs))))
            .collect();
        let best = argmin(scores.iter().map(|(_, v)| *v));
        Ok(SelectionResult {
            config: scores[best].0.clone(),
            objective: scores[best].1,
            evaluations: scores.len(),
            table: scores,
            relay_scores: Vec::new(),
        })
    }

    /// Chooses each relay's operation as if it were the only relay.
    pub fn per_relay(&self, table: &CorrectionTable, probs: &LinkProbabilities) -> Result<SelectionResult> {
        let mut ops = Vec::with_capacity(self.relay_ops.len());
        let mut relay_scores = Vec::with_capacity(self.relay_ops.len());
        let mut evaluations = 0;
        for (l, (candidates, decoders)) in self.relay_ops.iter().zip(&self.relay_decoders).enumerate() {
            let sub = probs.only_relay(l);
            let scores: Vec<(RelayOperation, f64)> = candidates
                .iter()
                .zip(decoders)
                .map(|(op, d)| (op.clone(), table.expected_trace(&d.distribution(&sub))))
                .collect();
            evaluations += scores.len();
            ops.push(scores[argmin(scores.iter().map(|(_, v)| *v))].0.clone());
            relay_scores.push(scores);
        }
        let config = RelayConfig(ops);
        let objective = match self.full.get() {
            Some((_, decoders)) => {
                table.expected_trace(&decoders[self.index_of(&config)?].distribution(probs))
            }
            _ => table.expected_trace(&ConfigDecoder::new(&config, &self.topology)?.distribution(probs)),
        };
        Ok(SelectionResult {
            config,
            objective,
            table: Vec::new(),
            relay_scores,
            evaluations,
        })
    }
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::INFINITY;
    for (k, v) in values.enumerate() {
        if v < best_value {
            best = k;
            best_value = v;
        }
    }
    best
}

/// Sum-power search for one configuration against a fixed correction table.
pub fn optimize_power_with(
    table: &CorrectionTable,
    decoder: &ConfigDecoder,
    state: &ChannelState,
    topology: &Topology,
    law: &dyn SuccessLaw,
    u_tot: f64,
    params: &SolverParams,
) -> Result<PowerResult> {
    if !(u_tot > 0.0) || !u_tot.is_finite() {
        return Err(Error::InvalidConfig(format!("power budget must be > 0, got {u_tot}")));
    }
    state.validate(topology)?;
    let m = topology.num_sensors();
    let dim = m + topology.num_relays();
    let objective = |u: &[f64]| {
        let powers = PowerAllocation::from_flat(u, m);
        let probs = link_probabilities_unchecked(state, &powers, topology, law);
        table.expected_trace(&decoder.distribution(&probs))
    };
    let r = minimize_on_simplex(objective, dim, u_tot, params);
    Ok(PowerResult {
        allocation: PowerAllocation::from_flat(&r.point, m),
        objective: r.value,
        restarts: r.restarts,
        iterations: r.iterations,
        evaluations: r.evaluations,
        history: r.history,
    })
}

fn bpsk(model: &SystemModel) -> Bpsk {
    Bpsk {
        bits: model.bits_per_packet(),
    }
}

/// Optimal configuration by exhaustive search.
pub fn select_config_exhaustive(
    p: &CovarianceMatrix,
    state: &ChannelState,
    powers: &PowerAllocation,
    topology: &Topology,
    model: &SystemModel,
) -> Result<SelectionResult> {
    let probs = link_probabilities(state, powers, topology, &bpsk(model))?;
    let table = CorrectionTable::new(p.matrix(), model)?;
    RelaySelector::new(topology)?.exhaustive(&table, &probs)
}

/// Per-relay suboptimal configuration.
pub fn select_config_per_relay(
    p: &CovarianceMatrix,
    state: &ChannelState,
    powers: &PowerAllocation,
    topology: &Topology,
    model: &SystemModel,
) -> Result<SelectionResult> {
    let probs = link_probabilities(state, powers, topology, &bpsk(model))?;
    let table = CorrectionTable::new(p.matrix(), model)?;
    RelaySelector::new(topology)?.per_relay(&table, &probs)
}

/// Minimizes `Tr f(P)` over `{u ≥ 0, Σu = u_tot}` for a fixed configuration.
pub fn optimize_power(
    p: &CovarianceMatrix,
    state: &ChannelState,
    config: &RelayConfig,
    topology: &Topology,
    model: &SystemModel,
    u_tot: f64,
    params: &SolverParams,
) -> Result<PowerResult> {
    let table = CorrectionTable::new(p.matrix(), model)?;
    let decoder = ConfigDecoder::new(config, topology)?;
    optimize_power_with(&table, &decoder, state, topology, &bpsk(model), u_tot, params)
}

/// Joint selection and power control against a prepared selector.
pub fn joint_select_and_power_with(
    selector: &RelaySelector,
    table: &CorrectionTable,
    state: &ChannelState,
    law: &dyn SuccessLaw,
    u_tot: f64,
    mode: JointMode,
    params: &SolverParams,
) -> Result<(SelectionResult, PowerResult)> {
    let topology = selector.topology();
    match mode {
        JointMode::Exact => {
            let (configs, decoders) = selector.full()?;
            let runs = configs
                .iter()
                .zip(decoders)
                .map(|(_, d)| optimize_power_with(table, d, state, topology, law, u_tot, params))
                .collect::<Result<Vec<_>>>()?;
            let best = argmin(runs.iter().map(|r| r.objective));
            let scores: Vec<(RelayConfig, f64)> = configs
                .iter()
                .cloned()
                .zip(runs.iter().map(|r| r.objective))
                .collect();
            let selection = SelectionResult {
                config: configs[best].clone(),
                objective: runs[best].objective,
                evaluations: scores.len(),
                table: scores,
                relay_scores: Vec::new(),
            };
            Ok((selection, runs.into_iter().nth(best).expect("nonempty config set")))
        }
        JointMode::Suboptimal => {
            let equal = PowerAllocation::equal_split(topology, u_tot);
            let probs = link_probabilities(state, &equal, topology, law)?;
            let mut selection = selector.per_relay(table, &probs)?;
            let decoder = match selector.full.get() {
                Some((_, decoders)) => decoders[selector.index_of(&selection.config)?].clone(),
                _ => ConfigDecoder::new(&selection.config, topology)?,
            };
            let power = optimize_power_with(table, &decoder, state, topology, law, u_tot, params)?;
            selection.objective = power.objective;
            Ok((selection, power))
        }
    }
}

/// Chooses a configuration and a power allocation together.
pub fn joint_select_and_power(
    p: &CovarianceMatrix,
    state: &ChannelState,
    topology: &Topology,
    model: &SystemModel,
    u_tot: f64,
    mode: JointMode,
    params: &SolverParams,
) -> Result<(SelectionResult, PowerResult)> {
    let table = CorrectionTable::new(p.matrix(), model)?;
    let selector = RelaySelector::new(topology)?;
    joint_select_and_power_with(&selector, &table, state, &bpsk(model), u_tot, mode, params)
}
