//! Block-fading links and the gain×power → packet success law.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard normal CDF, `Φ(x) = erfc(-x/√2) / 2`.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Maps the product of channel gain and transmit power to a packet success
/// probability. Implementations must be continuous and nondecreasing.
pub trait SuccessLaw: Send + Sync {
    fn success(&self, gain_times_power: f64) -> f64;
}

/// Uncoded BPSK, success only if all `bits` bits are received.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bpsk {
    pub bits: u32,
}

impl SuccessLaw for Bpsk {
    fn success(&self, gain_times_power: f64) -> f64 {
        standard_normal_cdf(gain_times_power.max(0.0).sqrt()).powi(self.bits as i32)
    }
}

/// `Φ(√(g u))^b`.
pub fn bpsk_success_probability(gain: f64, power: f64, bits: u32) -> f64 {
    Bpsk { bits }.success(gain * power)
}

/// Which sensors each relay overhears. Indices are zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    num_sensors: usize,
    hears: Vec<Vec<usize>>,
}

impl Topology {
    pub fn new(num_sensors: usize, hears: Vec<Vec<usize>>) -> Result<Self> {
        if num_sensors == 0 {
            return Err(Error::InvalidTopology("at least one sensor is required".into()));
        }
        if num_sensors > 63 {
            return Err(Error::InvalidTopology("at most 63 sensors are supported".into()));
        }
        let mut cleaned = Vec::with_capacity(hears.len());
        for (l, mut set) in hears.into_iter().enumerate() {
            set.sort_unstable();
            set.dedup();
            if set.is_empty() {
                return Err(Error::InvalidTopology(format!(
                    "relay {} listens to no sensor",
                    l + 1
                )));
            }
            if let Some(&bad) = set.iter().find(|&&i| i >= num_sensors) {
                return Err(Error::InvalidTopology(format!(
                    "relay {} listens to sensor {} but there are only {num_sensors}",
                    l + 1,
                    bad + 1
                )));
            }
            cleaned.push(set);
        }
        Ok(Topology {
            num_sensors,
            hears: cleaned,
        })
    }

    /// Sensors only, no relays.
    pub fn direct(num_sensors: usize) -> Result<Self> {
        Self::new(num_sensors, Vec::new())
    }

    /// Every one of `num_relays` relays hears every sensor.
    pub fn fully_connected(num_sensors: usize, num_relays: usize) -> Result<Self> {
        Self::new(num_sensors, vec![(0..num_sensors).collect(); num_relays])
    }

    pub fn num_sensors(&self) -> usize {
        self.num_sensors
    }

    pub fn num_relays(&self) -> usize {
        self.hears.len()
    }

    pub fn hears(&self, relay: usize) -> &[usize] {
        &self.hears[relay]
    }

    pub fn all_hears(&self) -> &[Vec<usize>] {
        &self.hears
    }

    /// `N = M + L + Σ|I_l|`.
    pub fn num_links(&self) -> usize {
        self.num_sensors + self.hears.len() + self.hears.iter().map(Vec::len).sum::<usize>()
    }

    pub fn without_relays(&self) -> Topology {
        Topology {
            num_sensors: self.num_sensors,
            hears: Vec::new(),
        }
    }

    /// The topology as seen when `relay` is the only relay available.
    pub fn only_relay(&self, relay: usize) -> Topology {
        Topology {
            num_sensors: self.num_sensors,
            hears: vec![self.hears[relay].clone()],
        }
    }
}

/// Gain distribution of one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Fading {
    Constant { gain: f64 },
    /// Rayleigh fading: the power gain is exponential with this mean.
    Exponential { mean: f64 },
}

impl Fading {
    fn validate(&self) -> Result<()> {
        match *self {
            Fading::Constant { gain } if gain >= 0.0 && gain.is_finite() => Ok(()),
            Fading::Exponential { mean } if mean > 0.0 && mean.is_finite() => Ok(()),
            other => Err(Error::InvalidTopology(format!(
                "invalid fading parameters: {other:?}"
            ))),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Fading::Constant { gain } => gain,
            Fading::Exponential { mean } => {
                let e: f64 = Exp1.sample(rng);
                mean * e
            }
        }
    }
}

/// Per-link fading families, laid out like [`ChannelState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingSpec {
    pub sensor_gateway: Vec<Fading>,
    #[serde(default)]
    pub relay_gateway: Vec<Fading>,
    #[serde(default)]
    pub sensor_relay: Vec<Vec<Fading>>,
}

impl FadingSpec {
    /// Same family on every link of each class.
    pub fn uniform(
        topology: &Topology,
        sensor_gateway: Fading,
        relay_gateway: Fading,
        sensor_relay: Fading,
    ) -> Self {
        FadingSpec {
            sensor_gateway: vec![sensor_gateway; topology.num_sensors()],
            relay_gateway: vec![relay_gateway; topology.num_relays()],
            sensor_relay: topology
                .all_hears()
                .iter()
                .map(|set| vec![sensor_relay; set.len()])
                .collect(),
        }
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        check_len("sensor-gateway fading", topology.num_sensors(), self.sensor_gateway.len())?;
        check_len("relay-gateway fading", topology.num_relays(), self.relay_gateway.len())?;
        check_len("sensor-relay fading", topology.num_relays(), self.sensor_relay.len())?;
        for (l, links) in self.sensor_relay.iter().enumerate() {
            check_len("sensor-relay fading", topology.hears(l).len(), links.len())?;
        }
        self.sensor_gateway
            .iter()
            .chain(&self.relay_gateway)
            .chain(self.sensor_relay.iter().flatten())
            .try_for_each(Fading::validate)
    }

    pub fn without_relays(&self) -> FadingSpec {
        FadingSpec {
            sensor_gateway: self.sensor_gateway.clone(),
            relay_gateway: Vec::new(),
            sensor_relay: Vec::new(),
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

/// Instantaneous gains `g_i`, `g̃_l`, `h_i^l` of one slot.
/// `sensor_relay[l][j]` belongs to the `j`-th sensor in `hears(l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub sensor_gateway: Vec<f64>,
    #[serde(default)]
    pub relay_gateway: Vec<f64>,
    #[serde(default)]
    pub sensor_relay: Vec<Vec<f64>>,
}

impl ChannelState {
    /// Every link with the same gain.
    pub fn constant(topology: &Topology, gain: f64) -> Self {
        ChannelState {
            sensor_gateway: vec![gain; topology.num_sensors()],
            relay_gateway: vec![gain; topology.num_relays()],
            sensor_relay: topology
                .all_hears()
                .iter()
                .map(|s| vec![gain; s.len()])
                .collect(),
        }
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        check_len("sensor-gateway gains", topology.num_sensors(), self.sensor_gateway.len())?;
        check_len("relay-gateway gains", topology.num_relays(), self.relay_gateway.len())?;
        check_len("sensor-relay gains", topology.num_relays(), self.sensor_relay.len())?;
        for (l, g) in self.sensor_relay.iter().enumerate() {
            check_len("sensor-relay gains", topology.hears(l).len(), g.len())?;
        }
        if self
            .sensor_gateway
            .iter()
            .chain(&self.relay_gateway)
            .chain(self.sensor_relay.iter().flatten())
            .any(|&g| !(g >= 0.0))
        {
            return Err(Error::InvalidTopology("channel gains must be >= 0".into()));
        }
        Ok(())
    }

    pub fn without_relays(&self) -> ChannelState {
        ChannelState {
            sensor_gateway: self.sensor_gateway.clone(),
            relay_gateway: Vec::new(),
            sensor_relay: Vec::new(),
        }
    }

    pub fn only_relay(&self, relay: usize) -> ChannelState {
        ChannelState {
            sensor_gateway: self.sensor_gateway.clone(),
            relay_gateway: vec![self.relay_gateway[relay]],
            sensor_relay: vec![self.sensor_relay[relay].clone()],
        }
    }
}

/// Draws the sensor→gateway gains.
pub fn sample_sensor_gains<R: Rng + ?Sized>(spec: &FadingSpec, rng: &mut R) -> Vec<f64> {
    spec.sensor_gateway.iter().map(|f| f.sample(rng)).collect()
}

/// Draws the relay→gateway and sensor→relay gains.
pub fn sample_relay_gains<R: Rng + ?Sized>(
    spec: &FadingSpec,
    rng: &mut R,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let relay_gateway = spec.relay_gateway.iter().map(|f| f.sample(rng)).collect();
    let sensor_relay = spec
        .sensor_relay
        .iter()
        .map(|links| links.iter().map(|f| f.sample(rng)).collect())
        .collect();
    (relay_gateway, sensor_relay)
}

/// One independent draw for every link, in link order.
pub fn sample_channel_state<R: Rng + ?Sized>(spec: &FadingSpec, rng: &mut R) -> ChannelState {
    let sensor_gateway = sample_sensor_gains(spec, rng);
    let (relay_gateway, sensor_relay) = sample_relay_gains(spec, rng);
    ChannelState {
        sensor_gateway,
        relay_gateway,
        sensor_relay,
    }
}

/// Transmit powers `u_i` of the sensors and `ũ_l` of the relays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub sensor: Vec<f64>,
    #[serde(default)]
    pub relay: Vec<f64>,
}

impl PowerAllocation {
    /// `u_tot` divided evenly over all sensors and relays.
    pub fn equal_split(topology: &Topology, u_tot: f64) -> Self {
        let share = u_tot / (topology.num_sensors() + topology.num_relays()) as f64;
        PowerAllocation {
            sensor: vec![share; topology.num_sensors()],
            relay: vec![share; topology.num_relays()],
        }
    }

    /// Sensors first, then relays.
    pub fn from_flat(flat: &[f64], num_sensors: usize) -> Self {
        PowerAllocation {
            sensor: flat[..num_sensors].to_vec(),
            relay: flat[num_sensors..].to_vec(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.sensor.iter().chain(&self.relay).copied().collect()
    }

    pub fn total(&self) -> f64 {
        self.sensor.iter().chain(&self.relay).sum()
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        check_len("sensor powers", topology.num_sensors(), self.sensor.len())?;
        check_len("relay powers", topology.num_relays(), self.relay.len())?;
        if self.sensor.iter().chain(&self.relay).any(|&u| !(u >= 0.0)) {
            return Err(Error::InvalidTopology("transmit powers must be >= 0".into()));
        }
        Ok(())
    }

    pub fn only_relay(&self, relay: usize) -> PowerAllocation {
        PowerAllocation {
            sensor: self.sensor.clone(),
            relay: vec![self.relay[relay]],
        }
    }

    pub fn without_relays(&self) -> PowerAllocation {
        PowerAllocation {
            sensor: self.sensor.clone(),
            relay: Vec::new(),
        }
    }
}

/// Reception probabilities `λ_i`, `λ̃_l`, `ρ_i^l`, laid out like [`ChannelState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkProbabilities {
    pub sensor_gateway: Vec<f64>,
    pub relay_gateway: Vec<f64>,
    pub sensor_relay: Vec<Vec<f64>>,
}

impl LinkProbabilities {
    /// Every link with the same probability.
    pub fn constant(topology: &Topology, p: f64) -> Self {
        LinkProbabilities {
            sensor_gateway: vec![p; topology.num_sensors()],
            relay_gateway: vec![p; topology.num_relays()],
            sensor_relay: topology
                .all_hears()
                .iter()
                .map(|s| vec![p; s.len()])
                .collect(),
        }
    }

    /// Link order: `λ_1..λ_M`, `λ̃_1..λ̃_L`, then `ρ` relay by relay.
    pub fn flat(&self) -> Vec<f64> {
        self.sensor_gateway
            .iter()
            .chain(&self.relay_gateway)
            .chain(self.sensor_relay.iter().flatten())
            .copied()
            .collect()
    }

    pub fn from_flat(topology: &Topology, flat: &[f64]) -> Result<Self> {
        check_len("link probabilities", topology.num_links(), flat.len())?;
        let m = topology.num_sensors();
        let l = topology.num_relays();
        let mut offset = m + l;
        let sensor_relay = topology
            .all_hears()
            .iter()
            .map(|set| {
                let chunk = flat[offset..offset + set.len()].to_vec();
                offset += set.len();
                chunk
            })
            .collect();
        Ok(LinkProbabilities {
            sensor_gateway: flat[..m].to_vec(),
            relay_gateway: flat[m..m + l].to_vec(),
            sensor_relay,
        })
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        check_len(
            "sensor-gateway probabilities",
            topology.num_sensors(),
            self.sensor_gateway.len(),
        )?;
        check_len(
            "relay-gateway probabilities",
            topology.num_relays(),
            self.relay_gateway.len(),
        )?;
        check_len(
            "sensor-relay probabilities",
            topology.num_relays(),
            self.sensor_relay.len(),
        )?;
        for (l, p) in self.sensor_relay.iter().enumerate() {
            check_len("sensor-relay probabilities", topology.hears(l).len(), p.len())?;
        }
        if self.flat().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidTopology("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn without_relays(&self) -> LinkProbabilities {
        LinkProbabilities {
            sensor_gateway: self.sensor_gateway.clone(),
            relay_gateway: Vec::new(),
            sensor_relay: Vec::new(),
        }
    }

    pub fn only_relay(&self, relay: usize) -> LinkProbabilities {
        LinkProbabilities {
            sensor_gateway: self.sensor_gateway.clone(),
            relay_gateway: vec![self.relay_gateway[relay]],
            sensor_relay: vec![self.sensor_relay[relay].clone()],
        }
    }
}

/// Applies `law` link by link. A sensor's single broadcast power drives both
/// its gateway link and every relay that overhears it.
pub fn link_probabilities(
    state: &ChannelState,
    powers: &PowerAllocation,
    topology: &Topology,
    law: &dyn SuccessLaw,
) -> Result<LinkProbabilities> {
    state.validate(topology)?;
    powers.validate(topology)?;
    Ok(link_probabilities_unchecked(state, powers, topology, law))
}

pub(crate) fn link_probabilities_unchecked(
    state: &ChannelState,
    powers: &PowerAllocation,
    topology: &Topology,
    law: &dyn SuccessLaw,
) -> LinkProbabilities {
    LinkProbabilities {
        sensor_gateway: state
            .sensor_gateway
            .iter()
            .zip(&powers.sensor)
            .map(|(g, u)| law.success(g * u))
            .collect(),
        relay_gateway: state
            .relay_gateway
            .iter()
            .zip(&powers.relay)
            .map(|(g, u)| law.success(g * u))
            .collect(),
        sensor_relay: state
            .sensor_relay
            .iter()
            .zip(topology.all_hears())
            .map(|(gains, set)| {
                gains
                    .iter()
                    .zip(set)
                    .map(|(h, &i)| law.success(h * powers.sensor[i]))
                    .collect()
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // 50-digit reference evaluations of Φ.
    const PHI_2: f64 = 0.977_249_868_051_820_8;

    #[test]
    fn normal_cdf_reference_points() {
        assert_eq!(standard_normal_cdf(0.0), 0.5);
        assert!((standard_normal_cdf(2.0) - PHI_2).abs() < 1e-15);
        assert!((standard_normal_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        assert!((standard_normal_cdf(-8.0) - 6.220_960_574_271_784e-16).abs() < 1e-27);
        assert!((standard_normal_cdf(4.5) - 0.999_996_602_326_875_3).abs() < 1e-15);
    }

    #[test]
    fn bpsk_law() {
        assert_eq!(bpsk_success_probability(0.0, 3.0, 6), 0.015625);
        assert!((bpsk_success_probability(4.0, 1.0, 6) - 0.871_031_222_561_349_3).abs() < 1e-14);
        assert_eq!(bpsk_success_probability(1e6, 1e6, 6), 1.0);
    }

    #[test]
    fn topology_link_count() {
        let t = Topology::new(3, vec![vec![0, 1], vec![2, 1, 0]]).unwrap();
        assert_eq!(t.num_links(), 3 + 2 + 5);
        assert_eq!(t.hears(1), &[0, 1, 2]);
        assert!(Topology::new(2, vec![vec![]]).is_err());
        assert!(Topology::new(2, vec![vec![2]]).is_err());
    }

    #[test]
    fn constant_fading_is_constant() {
        let t = Topology::fully_connected(2, 2).unwrap();
        let c = Fading::Constant { gain: 1.0 };
        let spec = FadingSpec::uniform(&t, c, c, c);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_channel_state(&spec, &mut rng);
        assert_eq!(s, ChannelState::constant(&t, 1.0));
    }

    #[test]
    fn exponential_mean() {
        let f = Fading::Exponential { mean: 4.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mean = (0..n).map(|_| f.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 4.0).abs() < 3.0 * 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let t = Topology::fully_connected(2, 1).unwrap();
        let e = Fading::Exponential { mean: 1.0 };
        let spec = FadingSpec::uniform(&t, e, e, e);
        let draw = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            rng.set_stream(stream);
            sample_channel_state(&spec, &mut rng)
        };
        assert_eq!(draw(0), draw(0));
        assert_ne!(draw(0), draw(1));
    }

    #[test]
    fn zero_power_gives_floor_probability() {
        let t = Topology::fully_connected(2, 2).unwrap();
        let state = ChannelState::constant(&t, 3.0);
        let powers = PowerAllocation::equal_split(&t, 0.0);
        let probs = link_probabilities(&state, &powers, &t, &Bpsk { bits: 6 }).unwrap();
        assert!(probs.flat().iter().all(|&p| p == 2f64.powi(-6)));
    }

    #[test]
    fn sensor_power_is_broadcast() {
        let t = Topology::new(1, vec![vec![0]]).unwrap();
        let state = ChannelState {
            sensor_gateway: vec![4.0],
            relay_gateway: vec![0.5],
            sensor_relay: vec![vec![4.0]],
        };
        let powers = PowerAllocation {
            sensor: vec![1.0],
            relay: vec![0.0],
        };
        let p = link_probabilities(&state, &powers, &t, &Bpsk { bits: 6 }).unwrap();
        assert_relative_eq!(p.sensor_gateway[0], PHI_2.powi(6), max_relative = 1e-14);
        assert_eq!(p.sensor_gateway[0], p.sensor_relay[0][0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let t = Topology::fully_connected(2, 1).unwrap();
        let state = ChannelState::constant(&t, 1.0);
        let powers = PowerAllocation {
            sensor: vec![1.0],
            relay: vec![1.0],
        };
        assert!(matches!(
            link_probabilities(&state, &powers, &t, &Bpsk { bits: 6 }),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn flat_layout() {
        let t = Topology::new(3, vec![vec![0, 2], vec![1]]).unwrap();
        let flat: Vec<f64> = (0..t.num_links()).map(|i| i as f64 / 10.0).collect();
        let p = LinkProbabilities::from_flat(&t, &flat).unwrap();
        assert_eq!(p.sensor_relay, vec![vec![0.5, 0.6], vec![0.7]]);
        assert_eq!(p.flat(), flat);
    }
}
