use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::{FadingSpec, PowerAllocation, Topology};
use crate::error::{Error, Result};
use crate::model::{SensorParams, SystemModel};
use crate::netcode::RelayConfig;
use crate::optimize::{SolverParams, StabilityPolicy};

/// A matrix given either as a number (1×1) or as a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self, what: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Scalar(x) => Ok(DMatrix::from_element(1, 1, *x)),
            MatrixSpec::Rows(rows) => {
                let n = rows.len();
                let m = rows.first().map_or(0, Vec::len);
                if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
                    return Err(Error::InvalidScenario(format!("{what} must be a nonempty rectangular matrix")));
                }
                Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
            }
        }
    }
}

/// A row vector given either as a number or as a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Scalar(f64),
    Entries(Vec<f64>),
}

impl VectorSpec {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            VectorSpec::Scalar(x) => vec![*x],
            VectorSpec::Entries(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorEntry {
    pub c: VectorSpec,
    pub r: f64,
    /// Stationary `E[y²]`; derived from the process when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub a: MatrixSpec,
    pub q: MatrixSpec,
    pub sensors: Vec<SensorEntry>,
    pub bits_per_packet: u32,
    /// Initial error covariance; defaults to the stationary state covariance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<MatrixSpec>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<SystemModel> {
        let sensors = self
            .sensors
            .iter()
            .map(|s| {
                let p = SensorParams::new(s.c.to_vec(), s.r);
                match s.y_power {
                    Some(y) => p.with_y_power(y),
                    None => p,
                }
            })
            .collect();
        let model = SystemModel::new(
            self.a.to_matrix("a")?,
            self.q.to_matrix("q")?,
            sensors,
            self.bits_per_packet,
        )?;
        match &self.p0 {
            Some(p0) => model.with_initial_covariance(p0.to_matrix("p0")?),
            None => Ok(model),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Exhaustive relay selection each step.
    Optimal,
    /// Each relay chosen as if it were alone.
    PerRelay,
    AlwaysXor,
    /// Relays ignored.
    NoRelay,
    /// Relays forward truncated copies of every packet they overhear.
    HalfBits,
    /// The configuration in `fixed_config` every step.
    FixedConfig,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Optimal,
        Scheme::PerRelay,
        Scheme::AlwaysXor,
        Scheme::NoRelay,
        Scheme::HalfBits,
        Scheme::FixedConfig,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Optimal => "optimal",
            Scheme::PerRelay => "per-relay",
            Scheme::AlwaysXor => "always-xor",
            Scheme::NoRelay => "no-relay",
            Scheme::HalfBits => "half-bits",
            Scheme::FixedConfig => "fixed-config",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown scheme {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PowerMode {
    #[default]
    EqualSplit,
    /// Sum-power search each step.
    Optimized,
    /// `fixed_powers`, rescaled so that it sums to each grid budget.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySettings {
    pub samples: usize,
    pub policy: StabilityPolicy,
    /// Budget for the equal split; the first grid point when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_tot: Option<f64>,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        StabilitySettings {
            samples: 10_000,
            policy: StabilityPolicy::MostReliable,
            u_tot: None,
        }
    }
}

fn default_horizon() -> usize {
    1000
}
fn default_iterations() -> usize {
    100
}
fn default_burn_in() -> usize {
    100
}
fn default_divergence_cap() -> f64 {
    1e9
}

/// One experiment: process, network, policy and Monte Carlo settings.
///
/// Sensor and relay indices in `topology` are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: ModelSpec,
    pub topology: Topology,
    pub fading: FadingSpec,
    pub scheme: Scheme,
    /// Text form, e.g. `"relay 1: fwd 1; relay 2: xor 1,2"` (one-based).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_config: Option<String>,
    #[serde(default)]
    pub power_mode: PowerMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_powers: Option<PowerAllocation>,
    pub u_tot_grid: Vec<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_divergence_cap")]
    pub divergence_cap: f64,
    #[serde(default)]
    pub record_traces: bool,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub stability: StabilitySettings,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Validates every field and builds the runtime objects.
    pub fn prepare(&self) -> Result<PreparedScenario> {
        let model = self.model.build()?;
        let topology = Topology::new(self.topology.num_sensors(), self.topology.all_hears().to_vec())?;
        if topology.num_sensors() != model.num_sensors() {
            return Err(Error::InvalidScenario(format!(
                "topology has {} sensors but the model has {}",
                topology.num_sensors(),
                model.num_sensors()
            )));
        }
        self.fading.validate(&topology)?;
        if model.initial_covariance().is_none() {
            return Err(Error::InvalidScenario(
                "p0 is required when the process has no stationary covariance".into(),
            ));
        }
        if self.horizon == 0 || self.iterations == 0 {
            return Err(Error::InvalidScenario("horizon and iterations must be >= 1".into()));
        }
        if self.burn_in >= self.horizon {
            return Err(Error::InvalidScenario("burn_in must be smaller than horizon".into()));
        }
        if self.u_tot_grid.iter().any(|u| !(*u > 0.0) || !u.is_finite()) {
            return Err(Error::InvalidScenario("u_tot_grid entries must be positive".into()));
        }
        if !(self.divergence_cap > 0.0) {
            return Err(Error::InvalidScenario("divergence_cap must be positive".into()));
        }
        if self.solver.restarts == 0 || !(self.solver.tolerance > 0.0) {
            return Err(Error::InvalidScenario("solver needs restarts >= 1 and tolerance > 0".into()));
        }
        let fixed_config = match (self.scheme, &self.fixed_config) {
            (Scheme::FixedConfig, Some(text)) => {
                let c: RelayConfig = text.parse()?;
                c.validate(&topology)?;
                Some(c)
            }
            (Scheme::FixedConfig, None) => {
                return Err(Error::InvalidScenario("scheme fixed-config needs fixed_config".into()))
            }
            _ => None,
        };
        let fixed_shares = match (self.power_mode, &self.fixed_powers) {
            (PowerMode::Fixed, Some(p)) => {
                p.validate(&topology)?;
                let total = p.total();
                if !(total > 0.0) {
                    return Err(Error::InvalidScenario("fixed_powers must not all be zero".into()));
                }
                Some(p.flat().iter().map(|u| u / total).collect())
            }
            (PowerMode::Fixed, None) => {
                return Err(Error::InvalidScenario("power mode fixed needs fixed_powers".into()))
            }
            _ => None,
        };
        if self.scheme == Scheme::HalfBits {
            model.half_bits_effective_noise(0)?;
        }
        Ok(PreparedScenario {
            model,
            topology,
            fixed_config,
            fixed_shares,
        })
    }
}

/// Runtime objects built from a validated [`Scenario`].
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub model: SystemModel,
    pub topology: Topology,
    pub fixed_config: Option<RelayConfig>,
    /// Fixed allocation normalized to sum 1, sensors then relays.
    pub fixed_shares: Option<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"a": 0.95, "q": 1, "sensors": [{"c": 1, "r": 1}, {"c": [1], "r": 1}], "bits_per_packet": 6},
        "topology": {"num_sensors": 2, "hears": [[0, 1]]},
        "fading": {
            "sensor_gateway": [{"family": "exponential", "mean": 1}, {"family": "exponential", "mean": 1}],
            "relay_gateway": [{"family": "exponential", "mean": 1}],
            "sensor_relay": [[{"family": "constant", "gain": 1e6}, {"family": "constant", "gain": 1e6}]]
        },
        "scheme": "optimal",
        "u_tot_grid": [1, 2]
    }"#;

    #[test]
    fn defaults_fill_in() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.horizon, 1000);
        assert_eq!(s.iterations, 100);
        assert_eq!(s.burn_in, 100);
        assert_eq!(s.divergence_cap, 1e9);
        assert_eq!(s.power_mode, PowerMode::EqualSplit);
        assert_eq!(s.solver, SolverParams::default());
        let p = s.prepare().unwrap();
        assert_eq!(p.model.num_sensors(), 2);
    }

    #[test]
    fn json_round_trip() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn validation_failures() {
        let base = Scenario::from_json(MINIMAL).unwrap();
        let mut s = base.clone();
        s.horizon = 0;
        assert!(s.prepare().is_err());
        let mut s = base.clone();
        s.scheme = Scheme::FixedConfig;
        assert!(s.prepare().is_err());
        s.fixed_config = Some("relay 1: xor 1,2".into());
        assert!(s.prepare().is_ok());
        s.fixed_config = Some("relay 1: fwd 3".into());
        assert!(s.prepare().is_err());
        let mut s = base.clone();
        s.u_tot_grid = vec![-1.0];
        assert!(s.prepare().is_err());
        let mut s = base.clone();
        s.power_mode = PowerMode::Fixed;
        assert!(s.prepare().is_err());
        let mut s = base;
        s.model.a = MatrixSpec::Scalar(1.5);
        assert!(s.prepare().is_err());
        assert!(Scenario::from_json(&MINIMAL.replace("\"optimal\"", "\"best\"")).is_err());
        assert!(Scenario::from_json(&MINIMAL.replace("\"horizon\"", "\"x\"").replace("\"scheme\"", "\"bogus\": 1, \"scheme\"")).is_err());
    }

    #[test]
    fn unstable_process_needs_p0_and_y_power() {
        let text = MINIMAL.replace("\"a\": 0.95", "\"a\": 1.2");
        assert!(Scenario::from_json(&text).unwrap().prepare().is_err());
        let text = MINIMAL
            .replace("\"a\": 0.95", "\"a\": 1.2, \"p0\": 1")
            .replace("\"r\": 1}", "\"r\": 1, \"y_power\": 20}");
        assert!(Scenario::from_json(&text).unwrap().prepare().is_ok());
    }

    #[test]
    fn half_bits_rejects_odd_bits() {
        let mut s = Scenario::from_json(MINIMAL).unwrap();
        s.scheme = Scheme::HalfBits;
        assert!(s.prepare().is_ok());
        s.model.bits_per_packet = 7;
        assert!(s.prepare().is_err());
    }
}
