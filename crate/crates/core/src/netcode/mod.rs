//! Relay operations, gateway-side decodability, and reconstruction-pattern
//! probabilities.
//!
//! A relay either forwards one overheard packet or sends the XOR of several.
//! The gateway treats every received packet as a GF(2) coding vector over the
//! sensor packets and recovers `y_i` exactly when `e_i` lies in their span.

mod distribution;
mod expr;
pub mod gf2;

use std::fmt;
use std::str::FromStr;

use crate::channel::{LinkProbabilities, Topology};
use crate::error::{Error, Result};

pub use distribution::{
    enumerate_outcomes_oracle, pattern_distribution, ConfigDecoder, PatternDistribution,
    MAX_DECODER_ATOMS, MAX_ORACLE_LINKS,
};
pub use expr::{theta_expression_table, BoolExpr, LinkVar};

/// What one relay transmits in a slot. Sensor indices are zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RelayOperation {
    Forward(usize),
    /// XOR of at least two overheard packets, sorted ascending.
    Xor(Vec<usize>),
}

impl RelayOperation {
    /// Packets the relay must have overheard to transmit.
    pub fn sensors(&self) -> &[usize] {
        match self {
            RelayOperation::Forward(i) => std::slice::from_ref(i),
            RelayOperation::Xor(set) => set,
        }
    }

    /// The GF(2) coding vector of the relay packet.
    pub fn coding_vector(&self) -> u64 {
        self.sensors().iter().fold(0, |acc, &i| acc | (1u64 << i))
    }

    fn validate(&self, relay: usize, hears: &[usize]) -> Result<()> {
        if let RelayOperation::Xor(set) = self {
            if set.len() < 2 {
                return Err(Error::InvalidConfig(format!(
                    "relay {}: XOR needs at least two packets",
                    relay + 1
                )));
            }
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidConfig(format!(
                    "relay {}: XOR set must be strictly increasing",
                    relay + 1
                )));
            }
        }
        match self.sensors().iter().find(|i| !hears.contains(i)) {
            Some(i) => Err(Error::InvalidConfig(format!(
                "relay {} does not hear sensor {}",
                relay + 1,
                i + 1
            ))),
            None => Ok(()),
        }
    }
}

/// One operation per relay.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct RelayConfig(pub Vec<RelayOperation>);

impl RelayConfig {
    pub fn ops(&self) -> &[RelayOperation] {
        &self.0
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        if self.0.len() != topology.num_relays() {
            return Err(Error::DimensionMismatch {
                what: "relay operations",
                expected: topology.num_relays(),
                got: self.0.len(),
            });
        }
        self.0
            .iter()
            .enumerate()
            .try_for_each(|(l, op)| op.validate(l, topology.hears(l)))
    }

    /// Every relay XORs everything it hears (forwards when it hears one sensor).
    pub fn always_xor(topology: &Topology) -> Self {
        RelayConfig(
            topology
                .all_hears()
                .iter()
                .map(|set| match set.as_slice() {
                    [i] => RelayOperation::Forward(*i),
                    _ => RelayOperation::Xor(set.clone()),
                })
                .collect(),
        )
    }
}

impl fmt::Display for RelayOperation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelayOperation::Forward(i) => write!(f, "fwd {}", i + 1),
            RelayOperation::Xor(set) => {
                f.write_str("xor ")?;
                for (k, i) in set.iter().enumerate() {
                    if k > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{}", i + 1)?;
                }
                Ok(())
            }
        }
    }
}

/// `relay 1: fwd 2; relay 2: xor 1,2`, or `none` without relays.
impl fmt::Display for RelayConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        for (l, op) in self.0.iter().enumerate() {
            if l > 0 {
                f.write_str("; ")?;
            }
            write!(f, "relay {}: {op}", l + 1)?;
        }
        Ok(())
    }
}

/// Accepts the `Display` form with entries separated by `;` or newlines.
/// Relays may appear in any order but each exactly once.
impl FromStr for RelayConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(RelayConfig::default());
        }
        let mut entries: Vec<(usize, RelayOperation)> = Vec::new();
        for entry in s.split([';', '\n']).map(str::trim).filter(|e| !e.is_empty()) {
            let bad = || Error::Parse(format!("bad relay entry `{entry}`"));
            let (head, op) = entry.split_once(':').ok_or_else(bad)?;
            let relay: usize = head
                .trim()
                .strip_prefix("relay")
                .ok_or_else(bad)?
                .trim()
                .parse()
                .map_err(|_| bad())?;
            if relay == 0 {
                return Err(bad());
            }
            let op = op.trim();
            let (kind, args) = op.split_once(char::is_whitespace).ok_or_else(bad)?;
            let mut sensors = args
                .split(',')
                .map(|a| match a.trim().parse::<usize>() {
                    Ok(i) if i >= 1 => Ok(i - 1),
                    _ => Err(bad()),
                })
                .collect::<Result<Vec<_>>>()?;
            let op = match kind {
                "fwd" if sensors.len() == 1 => RelayOperation::Forward(sensors[0]),
                "xor" if sensors.len() >= 2 => {
                    sensors.sort_unstable();
                    sensors.dedup();
                    RelayOperation::Xor(sensors)
                }
                _ => return Err(bad()),
            };
            entries.push((relay - 1, op));
        }
        entries.sort_by_key(|(l, _)| *l);
        if entries.iter().enumerate().any(|(k, (l, _))| k != *l) {
            return Err(Error::Parse(format!(
                "relay indices must be 1..L, each once: `{s}`"
            )));
        }
        Ok(RelayConfig(entries.into_iter().map(|(_, op)| op).collect()))
    }
}

/// Boolean outcome of every link in one slot, laid out like the channel state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkOutcome {
    pub sensor_gateway: Vec<bool>,
    pub relay_gateway: Vec<bool>,
    pub sensor_relay: Vec<Vec<bool>>,
}

impl LinkOutcome {
    /// Bit `j` of `mask` is link `j` in link order.
    pub fn from_mask(topology: &Topology, mask: u64) -> Self {
        let m = topology.num_sensors();
        let l = topology.num_relays();
        let bit = |j: usize| mask >> j & 1 == 1;
        let mut offset = m + l;
        LinkOutcome {
            sensor_gateway: (0..m).map(bit).collect(),
            relay_gateway: (m..m + l).map(bit).collect(),
            sensor_relay: topology
                .all_hears()
                .iter()
                .map(|set| {
                    let v = (offset..offset + set.len()).map(bit).collect();
                    offset += set.len();
                    v
                })
                .collect(),
        }
    }

    /// Link `j` succeeds when its uniform draw is below its probability.
    /// `relay_uniforms` covers the relay→gateway links, then the
    /// sensor→relay links relay by relay.
    pub fn from_flat_uniforms(
        topology: &Topology,
        probs: &LinkProbabilities,
        direct_uniforms: &[f64],
        relay_uniforms: &[f64],
    ) -> Self {
        let l = topology.num_relays();
        let mut offset = l;
        LinkOutcome {
            sensor_gateway: probs
                .sensor_gateway
                .iter()
                .zip(direct_uniforms)
                .map(|(p, u)| u < p)
                .collect(),
            relay_gateway: probs
                .relay_gateway
                .iter()
                .zip(&relay_uniforms[..l])
                .map(|(p, u)| u < p)
                .collect(),
            sensor_relay: probs
                .sensor_relay
                .iter()
                .map(|ps| {
                    let v = ps
                        .iter()
                        .zip(&relay_uniforms[offset..offset + ps.len()])
                        .map(|(p, u)| u < p)
                        .collect();
                    offset += ps.len();
                    v
                })
                .collect(),
        }
    }

    pub fn to_mask(&self) -> u64 {
        self.sensor_gateway
            .iter()
            .chain(&self.relay_gateway)
            .chain(self.sensor_relay.iter().flatten())
            .enumerate()
            .fold(0, |acc, (j, &b)| acc | (u64::from(b) << j))
    }
}

/// Which quantized measurements the gateway can reconstruct (`θ`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReconstructionPattern {
    mask: u64,
    num_sensors: usize,
}

impl ReconstructionPattern {
    pub fn from_mask(mask: u64, num_sensors: usize) -> Self {
        ReconstructionPattern { mask, num_sensors }
    }

    pub fn from_bools(theta: &[bool]) -> Self {
        let mask = theta
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &b)| acc | (u64::from(b) << i));
        ReconstructionPattern {
            mask,
            num_sensors: theta.len(),
        }
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn num_sensors(&self) -> usize {
        self.num_sensors
    }

    pub fn is_recovered(&self, sensor: usize) -> bool {
        self.mask >> sensor & 1 == 1
    }

    pub fn recovered(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_sensors).filter(|&i| self.is_recovered(i))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.num_sensors).map(|i| self.is_recovered(i)).collect()
    }
}

/// Coding vectors that reach the gateway. A relay whose required packets did
/// not all arrive stays silent.
fn received_vectors(outcome: &LinkOutcome, config: &RelayConfig, topology: &Topology) -> Vec<u64> {
    let mut received: Vec<u64> = outcome
        .sensor_gateway
        .iter()
        .enumerate()
        .filter(|(_, &ok)| ok)
        .map(|(i, _)| 1u64 << i)
        .collect();
    for (l, op) in config.ops().iter().enumerate() {
        let heard_all = op.sensors().iter().all(|i| {
            topology
                .hears(l)
                .iter()
                .position(|j| j == i)
                .is_some_and(|p| outcome.sensor_relay[l][p])
        });
        if outcome.relay_gateway[l] && heard_all {
            received.push(op.coding_vector());
        }
    }
    received
}

/// GF(2) elimination over the packets the gateway received.
pub fn recover_measurements(
    outcome: &LinkOutcome,
    config: &RelayConfig,
    topology: &Topology,
) -> ReconstructionPattern {
    let m = topology.num_sensors();
    let mask = gf2::decodable_units(received_vectors(outcome, config, topology), m);
    ReconstructionPattern::from_mask(mask, m)
}

/// All operations of a relay hearing `hears`: nonempty subsets by size, then
/// lexicographically; singletons are forwards.
pub fn relay_operations(hears: &[usize]) -> Vec<RelayOperation> {
    let mut ops = Vec::with_capacity((1usize << hears.len()) - 1);
    for size in 1..=hears.len() {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let set: Vec<usize> = idx.iter().map(|&k| hears[k]).collect();
            ops.push(if size == 1 {
                RelayOperation::Forward(set[0])
            } else {
                RelayOperation::Xor(set)
            });
            // next combination
            let mut k = size;
            while k > 0 && idx[k - 1] == hears.len() - size + k - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            idx[k - 1] += 1;
            for j in k..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    ops
}

/// Every relay configuration, relay 1 varying slowest.
pub fn enumerate_configs(topology: &Topology) -> Vec<RelayConfig> {
    let per_relay: Vec<Vec<RelayOperation>> = topology
        .all_hears()
        .iter()
        .map(|h| relay_operations(h))
        .collect();
    let mut configs = vec![Vec::with_capacity(per_relay.len())];
    for ops in &per_relay {
        configs = configs
            .into_iter()
            .flat_map(|prefix| {
                ops.iter().map(move |op| {
                    let mut c = prefix.clone();
                    c.push(op.clone());
                    c
                })
            })
            .collect();
    }
    configs.into_iter().map(RelayConfig).collect()
}

/// `∏_l (2^{M_l} − 1)`.
pub fn config_count(topology: &Topology) -> u128 {
    topology
        .all_hears()
        .iter()
        .map(|h| (1u128 << h.len()) - 1)
        .product()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo(m: usize, hears: Vec<Vec<usize>>) -> Topology {
        Topology::new(m, hears).unwrap()
    }

    fn outcome(g: &[bool], rg: &[bool], z: &[&[bool]]) -> LinkOutcome {
        LinkOutcome {
            sensor_gateway: g.to_vec(),
            relay_gateway: rg.to_vec(),
            sensor_relay: z.iter().map(|v| v.to_vec()).collect(),
        }
    }

    #[test]
    fn direct_plus_xor_recovers_both() {
        let t = topo(2, vec![vec![0, 1]]);
        let cfg = RelayConfig(vec![RelayOperation::Xor(vec![0, 1])]);
        let o = outcome(&[true, false], &[true], &[&[true, true]]);
        assert_eq!(recover_measurements(&o, &cfg, &t).to_bools(), vec![true, true]);
    }

    #[test]
    fn lone_xor_recovers_nothing() {
        let t = topo(2, vec![vec![0, 1]]);
        let cfg = RelayConfig(vec![RelayOperation::Xor(vec![0, 1])]);
        let o = outcome(&[false, false], &[true], &[&[true, true]]);
        assert_eq!(recover_measurements(&o, &cfg, &t).mask(), 0);
    }

    #[test]
    fn partial_xor_is_not_sent() {
        let t = topo(2, vec![vec![0, 1]]);
        let cfg = RelayConfig(vec![RelayOperation::Xor(vec![0, 1])]);
        let o = outcome(&[true, false], &[true], &[&[true, false]]);
        assert_eq!(recover_measurements(&o, &cfg, &t).to_bools(), vec![true, false]);
    }

    #[test]
    fn chain_of_xors() {
        let t = topo(3, vec![vec![0, 1], vec![1, 2]]);
        let cfg = RelayConfig(vec![
            RelayOperation::Xor(vec![0, 1]),
            RelayOperation::Xor(vec![1, 2]),
        ]);
        let o = outcome(&[true, false, false], &[true, true], &[&[true, true], &[true, true]]);
        assert_eq!(recover_measurements(&o, &cfg, &t).mask(), 0b111);
    }

    #[test]
    fn outcome_mask_round_trip() {
        let t = topo(3, vec![vec![0, 2], vec![1]]);
        for mask in 0..1u64 << t.num_links() {
            assert_eq!(LinkOutcome::from_mask(&t, mask).to_mask(), mask);
        }
    }

    #[test]
    fn config_counts() {
        assert_eq!(enumerate_configs(&topo(2, vec![vec![0, 1], vec![0, 1]])).len(), 9);
        let single = enumerate_configs(&topo(1, vec![vec![0]]));
        assert_eq!(single, vec![RelayConfig(vec![RelayOperation::Forward(0)])]);
        let three = relay_operations(&[0, 1, 2]);
        assert_eq!(three.len(), 7);
        assert_eq!(three[0], RelayOperation::Forward(0));
        assert_eq!(three[3], RelayOperation::Xor(vec![0, 1]));
        assert_eq!(three[5], RelayOperation::Xor(vec![1, 2]));
        assert_eq!(three[6], RelayOperation::Xor(vec![0, 1, 2]));
        assert_eq!(enumerate_configs(&topo(2, vec![])), vec![RelayConfig::default()]);
    }

    #[test]
    fn enumeration_order_is_relay_major() {
        let configs = enumerate_configs(&topo(2, vec![vec![0, 1], vec![0, 1]]));
        assert_eq!(configs[0].to_string(), "relay 1: fwd 1; relay 2: fwd 1");
        assert_eq!(configs[1].to_string(), "relay 1: fwd 1; relay 2: fwd 2");
        assert_eq!(configs[8].to_string(), "relay 1: xor 1,2; relay 2: xor 1,2");
    }

    #[test]
    fn text_form_round_trip() {
        let t = topo(3, vec![vec![0, 1, 2], vec![1]]);
        for cfg in enumerate_configs(&t) {
            let parsed: RelayConfig = cfg.to_string().parse().unwrap();
            assert_eq!(parsed, cfg);
        }
        let multiline: RelayConfig = "relay 2: fwd 2\nrelay 1: xor 3,1".parse().unwrap();
        assert_eq!(
            multiline,
            RelayConfig(vec![RelayOperation::Xor(vec![0, 2]), RelayOperation::Forward(1)])
        );
        assert_eq!("none".parse::<RelayConfig>().unwrap(), RelayConfig::default());
        assert!("relay 1: xor 1".parse::<RelayConfig>().is_err());
        assert!("relay 0: fwd 1".parse::<RelayConfig>().is_err());
        assert!("relay 2: fwd 1".parse::<RelayConfig>().is_err());
        assert!("relay 1: fwd 1; relay 1: fwd 2".parse::<RelayConfig>().is_err());
    }

    #[test]
    fn validation() {
        let t = topo(3, vec![vec![0, 1]]);
        assert!(RelayConfig(vec![RelayOperation::Forward(2)]).validate(&t).is_err());
        assert!(RelayConfig(vec![RelayOperation::Xor(vec![0])]).validate(&t).is_err());
        assert!(RelayConfig(vec![]).validate(&t).is_err());
        assert!(RelayConfig(vec![RelayOperation::Xor(vec![0, 1])]).validate(&t).is_ok());
        assert_eq!(
            RelayConfig::always_xor(&topo(2, vec![vec![0, 1], vec![1]])),
            RelayConfig(vec![RelayOperation::Xor(vec![0, 1]), RelayOperation::Forward(1)])
        );
    }
}
