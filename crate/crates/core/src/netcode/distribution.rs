use crate::channel::{LinkProbabilities, Topology};
use crate::error::{Error, Result};

use super::{gf2, recover_measurements, LinkOutcome, RelayConfig};

/// Largest `M + L` for which a decoder table is built.
pub const MAX_DECODER_ATOMS: usize = 24;
/// Largest link count the brute-force oracle will enumerate.
pub const MAX_ORACLE_LINKS: usize = 24;

/// Probability of each of the `2^M` reconstruction patterns; index bit `i` is `θ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternDistribution {
    num_sensors: usize,
    probs: Vec<f64>,
}

impl PatternDistribution {
    pub fn new(num_sensors: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != 1usize << num_sensors {
            return Err(Error::DimensionMismatch {
                what: "pattern probabilities",
                expected: 1 << num_sensors,
                got: probs.len(),
            });
        }
        Ok(PatternDistribution { num_sensors, probs })
    }

    pub fn point_mass(num_sensors: usize, mask: u64) -> Self {
        let mut probs = vec![0.0; 1 << num_sensors];
        probs[mask as usize] = 1.0;
        PatternDistribution { num_sensors, probs }
    }

    pub fn num_sensors(&self) -> usize {
        self.num_sensors
    }

    pub fn probability(&self, mask: u64) -> f64 {
        self.probs[mask as usize]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `(mask, probability)` for every pattern with positive mass.
    pub fn support(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(mask, &p)| (mask as u64, p))
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `P(θ_i = 1)`.
    pub fn marginal(&self, sensor: usize) -> f64 {
        self.support()
            .filter(|(mask, _)| mask >> sensor & 1 == 1)
            .map(|(_, p)| p)
            .sum()
    }

    /// Inverse-CDF draw from a uniform `u ∈ [0, 1)`.
    pub fn sample_with(&self, u: f64) -> u64 {
        let mut acc = 0.0;
        for (mask, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return mask as u64;
            }
        }
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u64
    }

    pub fn max_abs_diff(&self, other: &PatternDistribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Precomputed θ pattern for every combination of direct receptions and
/// delivered relay packets under one configuration.
///
/// A relay packet is delivered when the relay→gateway link and every
/// sensor→relay link it depends on succeed; distinct relays use disjoint
/// links, so deliveries are independent of each other and of the direct links.
#[derive(Debug, Clone)]
pub struct ConfigDecoder {
    num_sensors: usize,
    /// Positions within `hears(l)` of the packets relay `l` needs.
    requirements: Vec<Vec<usize>>,
    table: Vec<u64>,
}

impl ConfigDecoder {
    pub fn new(config: &RelayConfig, topology: &Topology) -> Result<Self> {
        config.validate(topology)?;
        let m = topology.num_sensors();
        let l = topology.num_relays();
        if m + l > MAX_DECODER_ATOMS {
            return Err(Error::TooManyLinks {
                links: m + l,
                max: MAX_DECODER_ATOMS,
            });
        }
        let vectors: Vec<u64> = config.ops().iter().map(|op| op.coding_vector()).collect();
        let requirements = config
            .ops()
            .iter()
            .enumerate()
            .map(|(relay, op)| {
                op.sensors()
                    .iter()
                    .map(|i| {
                        topology
                            .hears(relay)
                            .iter()
                            .position(|j| j == i)
                            .expect("validated config")
                    })
                    .collect()
            })
            .collect();
        let table = (0u64..1 << (m + l))
            .map(|atoms| {
                let direct = (0..m).filter(|i| atoms >> i & 1 == 1).map(|i| 1u64 << i);
                let relayed = (0..l)
                    .filter(|r| atoms >> (m + r) & 1 == 1)
                    .map(|r| vectors[r]);
                gf2::decodable_units(direct.chain(relayed), m)
            })
            .collect();
        Ok(ConfigDecoder {
            num_sensors: m,
            requirements,
            table,
        })
    }

    pub fn num_sensors(&self) -> usize {
        self.num_sensors
    }

    pub fn num_relays(&self) -> usize {
        self.requirements.len()
    }

    /// θ mask given direct receptions (bits `0..M`) and delivered relay
    /// packets (bits `0..L`).
    pub fn pattern(&self, direct: u64, delivered: u64) -> u64 {
        self.table[(direct | delivered << self.num_sensors) as usize]
    }

    /// Whether relay `relay`'s packet reaches the gateway in `outcome`.
    pub fn delivered(&self, relay: usize, outcome: &LinkOutcome) -> bool {
        outcome.relay_gateway[relay]
            && self.requirements[relay]
                .iter()
                .all(|&p| outcome.sensor_relay[relay][p])
    }

    /// `P(relay l delivers) = λ̃_l ∏_{i∈S_l} ρ_i^l`.
    pub fn delivery_probabilities(&self, probs: &LinkProbabilities) -> Vec<f64> {
        self.requirements
            .iter()
            .enumerate()
            .map(|(l, req)| {
                req.iter()
                    .fold(probs.relay_gateway[l], |acc, &p| acc * probs.sensor_relay[l][p])
            })
            .collect()
    }

    /// Exact pattern distribution: each `(direct, delivered)` combination is
    /// one disjoint product term.
    pub fn distribution(&self, probs: &LinkProbabilities) -> PatternDistribution {
        let direct_w = product_weights(&probs.sensor_gateway);
        let relay_w = product_weights(&self.delivery_probabilities(probs));
        let mut out = vec![0.0; 1 << self.num_sensors];
        let stride = direct_w.len();
        for (r, &wr) in relay_w.iter().enumerate() {
            if wr == 0.0 {
                continue;
            }
            let row = &self.table[r * stride..(r + 1) * stride];
            for (&pattern, &wd) in row.iter().zip(&direct_w) {
                out[pattern as usize] += wr * wd;
            }
        }
        PatternDistribution {
            num_sensors: self.num_sensors,
            probs: out,
        }
    }
}

/// `w[mask] = ∏_j (p_j if bit j else 1 − p_j)`.
fn product_weights(p: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(1 << p.len());
    w.push(1.0);
    for &pj in p {
        let len = w.len();
        for k in 0..len {
            let base = w[k];
            w[k] = base * (1.0 - pj);
            w.push(base * pj);
        }
    }
    w
}

/// Exact distribution of θ for independent Bernoulli links.
pub fn pattern_distribution(
    probs: &LinkProbabilities,
    config: &RelayConfig,
    topology: &Topology,
) -> Result<PatternDistribution> {
    probs.validate(topology)?;
    Ok(ConfigDecoder::new(config, topology)?.distribution(probs))
}

/// Brute-force reference: weights each of the `2^N` link outcomes and decodes it.
pub fn enumerate_outcomes_oracle(
    probs: &LinkProbabilities,
    config: &RelayConfig,
    topology: &Topology,
) -> Result<PatternDistribution> {
    probs.validate(topology)?;
    config.validate(topology)?;
    let n = topology.num_links();
    if n > MAX_ORACLE_LINKS {
        return Err(Error::TooManyLinks {
            links: n,
            max: MAX_ORACLE_LINKS,
        });
    }
    let flat = probs.flat();
    let m = topology.num_sensors();
    let mut out = vec![0.0; 1 << m];
    for mask in 0u64..1 << n {
        let weight: f64 = flat
            .iter()
            .enumerate()
            .map(|(j, &p)| if mask >> j & 1 == 1 { p } else { 1.0 - p })
            .product();
        if weight == 0.0 {
            continue;
        }
        let outcome = LinkOutcome::from_mask(topology, mask);
        let theta = recover_measurements(&outcome, config, topology);
        out[theta.mask() as usize] += weight;
    }
    PatternDistribution::new(m, out)
}
