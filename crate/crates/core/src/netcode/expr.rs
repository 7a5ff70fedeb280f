use std::fmt;

use crate::channel::Topology;
use crate::error::Result;

use super::{ConfigDecoder, LinkOutcome, RelayConfig};

/// A link reception variable. Indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkVar {
    /// `γ_i`: sensor `i` → gateway.
    Direct(usize),
    /// `γ̃_l`: relay `l` → gateway.
    RelayGateway(usize),
    /// `ζ_i^l`: sensor → relay.
    SensorRelay { sensor: usize, relay: usize },
}

impl LinkVar {
    pub fn eval(&self, outcome: &LinkOutcome, topology: &Topology) -> bool {
        match *self {
            LinkVar::Direct(i) => outcome.sensor_gateway[i],
            LinkVar::RelayGateway(l) => outcome.relay_gateway[l],
            LinkVar::SensorRelay { sensor, relay } => topology
                .hears(relay)
                .iter()
                .position(|&j| j == sensor)
                .is_some_and(|p| outcome.sensor_relay[relay][p]),
        }
    }
}

impl fmt::Display for LinkVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LinkVar::Direct(i) => write!(f, "γ{}", i + 1),
            LinkVar::RelayGateway(l) => write!(f, "γ̃{}", l + 1),
            LinkVar::SensorRelay { sensor, relay } => write!(f, "ζ{}^{}", sensor + 1, relay + 1),
        }
    }
}

/// Monotone Boolean formula in disjunctive normal form: an OR of AND-terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolExpr {
    pub terms: Vec<Vec<LinkVar>>,
}

impl BoolExpr {
    pub fn eval(&self, outcome: &LinkOutcome, topology: &Topology) -> bool {
        self.terms
            .iter()
            .any(|term| term.iter().all(|v| v.eval(outcome, topology)))
    }
}

impl fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let multi = self.terms.len() > 1;
        for (k, term) in self.terms.iter().enumerate() {
            if k > 0 {
                f.write_str(" ∨ ")?;
            }
            let wrap = multi && term.len() > 1;
            if wrap {
                f.write_str("(")?;
            }
            for (j, v) in term.iter().enumerate() {
                if j > 0 {
                    f.write_str(" ∧ ")?;
                }
                write!(f, "{v}")?;
            }
            if term.is_empty() {
                f.write_str("1")?;
            }
            if wrap {
                f.write_str(")")?;
            }
        }
        Ok(())
    }
}

/// For every sensor, the formula for `θ_i` in the link variables.
///
/// `θ_i` is monotone in the received packet set, so its minimal true sets
/// over {direct receptions, relay deliveries} give an exact DNF; each relay
/// delivery then expands to `γ̃_l` and the `ζ` links it depends on.
pub fn theta_expression_table(config: &RelayConfig, topology: &Topology) -> Result<Vec<BoolExpr>> {
    let decoder = ConfigDecoder::new(config, topology)?;
    let m = topology.num_sensors();
    let l = topology.num_relays();
    let mut atom_sets: Vec<u64> = (0u64..1 << (m + l)).collect();
    atom_sets.sort_by_key(|a| (a.count_ones(), *a));

    let table = (0..m)
        .map(|sensor| {
            let mut minimal: Vec<u64> = Vec::new();
            for &atoms in &atom_sets {
                let direct = atoms & ((1u64 << m) - 1);
                let delivered = atoms >> m;
                if decoder.pattern(direct, delivered) >> sensor & 1 == 0 {
                    continue;
                }
                if minimal.iter().any(|&s| s & atoms == s) {
                    continue;
                }
                minimal.push(atoms);
            }
            let terms = minimal
                .into_iter()
                .map(|atoms| {
                    let mut term: Vec<LinkVar> = (0..m)
                        .filter(|i| atoms >> i & 1 == 1)
                        .map(LinkVar::Direct)
                        .collect();
                    for relay in (0..l).filter(|r| atoms >> (m + r) & 1 == 1) {
                        term.push(LinkVar::RelayGateway(relay));
                        term.extend(
                            config.ops()[relay]
                                .sensors()
                                .iter()
                                .map(|&sensor| LinkVar::SensorRelay { sensor, relay }),
                        );
                    }
                    term
                })
                .collect();
            BoolExpr { terms }
        })
        .collect();
    Ok(table)
}
