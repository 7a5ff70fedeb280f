//! Monte Carlo check of `‖A‖² E[P(s = 0 | g, φ(g))] < 1`, where `s = 1`
//! iff the decoded sensor rows stack to a full-column-rank matrix.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    link_probabilities_unchecked, sample_channel_state, Bpsk, FadingSpec, PowerAllocation, Topology,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::SystemModel;
use crate::netcode::{ConfigDecoder, PatternDistribution, RelayConfig};

use super::RelaySelector;

const CHUNK: usize = 1024;
const RANK_TOLERANCE: f64 = 1e-10;
const Z_95: f64 = 1.959963984540054;

/// A relay policy that may depend on the channel gains only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StabilityPolicy {
    /// The configuration with the smallest outage probability for the drawn gains.
    MostReliable,
    AlwaysXor,
    /// Relays stay silent.
    NoRelay,
    Fixed(RelayConfig),
    /// Covariance-driven selection; rejected by [`stability_check`].
    Optimal,
    /// Covariance-driven selection; rejected by [`stability_check`].
    PerRelay,
}

impl fmt::Display for StabilityPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StabilityPolicy::MostReliable => f.write_str("most-reliable"),
            StabilityPolicy::AlwaysXor => f.write_str("always-xor"),
            StabilityPolicy::NoRelay => f.write_str("no-relay"),
            StabilityPolicy::Fixed(c) => write!(f, "fixed: {c}"),
            StabilityPolicy::Optimal => f.write_str("optimal"),
            StabilityPolicy::PerRelay => f.write_str("per-relay"),
        }
    }
}

impl FromStr for StabilityPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("fixed:") {
            return Ok(StabilityPolicy::Fixed(rest.parse()?));
        }
        match s {
            "most-reliable" => Ok(StabilityPolicy::MostReliable),
            "always-xor" => Ok(StabilityPolicy::AlwaysXor),
            "no-relay" => Ok(StabilityPolicy::NoRelay),
            "optimal" => Ok(StabilityPolicy::Optimal),
            "per-relay" => Ok(StabilityPolicy::PerRelay),
            other => Err(Error::Parse(format!("unknown stability policy {other:?}"))),
        }
    }
}

impl TryFrom<String> for StabilityPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StabilityPolicy> for String {
    fn from(p: StabilityPolicy) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Satisfied,
    Violated,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Satisfied => "satisfied",
            Verdict::Violated => "violated",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Estimate of `E[P(s = 0 | g, φ(g))]`.
    pub outage_probability: f64,
    pub std_error: f64,
    pub spectral_norm_sq: f64,
    pub product: f64,
    /// 95% interval of `product`.
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: usize,
    pub verdict: Verdict,
}

/// Which reconstruction patterns give a full-column-rank stacked `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullRankTable(Vec<bool>);

impl FullRankTable {
    pub fn new(model: &SystemModel) -> Self {
        let m = model.num_sensors();
        let n = model.state_dim();
        let table = (0u64..1 << m)
            .map(|mask| {
                let rows: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
                if rows.len() < n {
                    return false;
                }
                let stacked = DMatrix::from_fn(rows.len(), n, |r, c| model.sensors()[rows[r]].c()[c]);
                linalg::numerical_rank(&stacked, RANK_TOLERANCE) == n
            })
            .collect();
        FullRankTable(table)
    }

    pub fn is_full_rank(&self, mask: u64) -> bool {
        self.0[mask as usize]
    }
}

/// `P(s = 0)` under `dist`.
pub fn outage_probability(dist: &PatternDistribution, full_rank: &FullRankTable) -> f64 {
    dist.probs()
        .iter()
        .enumerate()
        .filter(|(mask, _)| !full_rank.0[*mask])
        .map(|(_, p)| p)
        .sum()
}

enum Resolved {
    Decoders(Vec<ConfigDecoder>),
    Silent(ConfigDecoder),
}

/// Estimates the stability product by sampling channel gains; pattern
/// probabilities are exact for each draw.
pub fn stability_check(
    model: &SystemModel,
    fading: &FadingSpec,
    topology: &Topology,
    policy: &StabilityPolicy,
    powers: &PowerAllocation,
    samples: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if samples < 1000 {
        return Err(Error::InvalidConfig(format!(
            "stability check needs at least 1000 samples, got {samples}"
        )));
    }
    if topology.num_sensors() != model.num_sensors() {
        return Err(Error::DimensionMismatch {
            what: "topology sensors",
            expected: model.num_sensors(),
            got: topology.num_sensors(),
        });
    }
    fading.validate(topology)?;
    powers.validate(topology)?;
    let resolved = match policy {
        StabilityPolicy::Optimal | StabilityPolicy::PerRelay => {
            return Err(Error::PolicyNeedsCovariance(policy.to_string()))
        }
        StabilityPolicy::MostReliable => {
            Resolved::Decoders(RelaySelector::new(topology)?.decoders()?.to_vec())
        }
        StabilityPolicy::AlwaysXor => {
            Resolved::Decoders(vec![ConfigDecoder::new(&RelayConfig::always_xor(topology), topology)?])
        }
        StabilityPolicy::Fixed(c) => Resolved::Decoders(vec![ConfigDecoder::new(c, topology)?]),
        StabilityPolicy::NoRelay => Resolved::Silent(ConfigDecoder::new(
            &RelayConfig::default(),
            &topology.without_relays(),
        )?),
    };
    let law = Bpsk {
        bits: model.bits_per_packet(),
    };
    let full_rank = FullRankTable::new(model);
    let direct = topology.without_relays();
    let direct_powers = powers.without_relays();

    let chunks = samples.div_ceil(CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = CHUNK.min(samples - c * CHUNK);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..n {
                let state = sample_channel_state(fading, &mut rng);
                let outage = match &resolved {
                    Resolved::Decoders(decoders) => {
                        let probs = link_probabilities_unchecked(&state, powers, topology, &law);
                        decoders
                            .iter()
                            .map(|d| outage_probability(&d.distribution(&probs), &full_rank))
                            .fold(f64::INFINITY, f64::min)
                    }
                    Resolved::Silent(d) => {
                        let probs = link_probabilities_unchecked(
                            &state.without_relays(),
                            &direct_powers,
                            &direct,
                            &law,
                        );
                        outage_probability(&d.distribution(&probs), &full_rank)
                    }
                };
                s += outage;
                s2 += outage * outage;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let n = samples as f64;
    let mean = s / n;
    let variance = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    let std_error = (variance / n).sqrt();
    let norm_sq = linalg::spectral_norm(model.a()).powi(2);
    let product = norm_sq * mean;
    let ci_low = norm_sq * (mean - Z_95 * std_error);
    let ci_high = norm_sq * (mean + Z_95 * std_error);
    let verdict = if ci_high < 1.0 {
        Verdict::Satisfied
    } else if ci_low >= 1.0 {
        Verdict::Violated
    } else {
        Verdict::Inconclusive
    };
    Ok(StabilityReport {
        outage_probability: mean,
        std_error,
        spectral_norm_sq: norm_sq,
        product,
        ci_low,
        ci_high,
        samples,
        verdict,
    })
}
