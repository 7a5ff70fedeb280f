//! Baseline where each relay strips the low `b/2` bits of every packet it
//! overhears and forwards the truncated copies, with no coding.

use nalgebra::DMatrix;

use crate::channel::{LinkProbabilities, Topology};
use crate::error::{Error, Result};
use crate::filter::{kalman_step_rows, prediction_covariance, riccati_correction, FilterState};
use crate::model::SystemModel;

/// What the gateway holds for one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reception {
    Lost,
    Truncated,
    Full,
}

impl Reception {
    fn digit(self) -> usize {
        match self {
            Reception::Lost => 0,
            Reception::Truncated => 1,
            Reception::Full => 2,
        }
    }
}

/// Per-sensor reception given the link outcomes. `sensor_relay[l][p]`
/// refers to the `p`-th sensor in `topology.hears(l)`.
pub fn half_bits_receptions(
    sensor_gateway: &[bool],
    relay_gateway: &[bool],
    sensor_relay: &[Vec<bool>],
    topology: &Topology,
) -> Vec<Reception> {
    let mut out: Vec<Reception> = sensor_gateway
        .iter()
        .map(|&d| if d { Reception::Full } else { Reception::Lost })
        .collect();
    for (l, set) in topology.all_hears().iter().enumerate() {
        if !relay_gateway[l] {
            continue;
        }
        for (p, &i) in set.iter().enumerate() {
            if sensor_relay[l][p] && out[i] == Reception::Lost {
                out[i] = Reception::Truncated;
            }
        }
    }
    out
}

/// Filter update where truncated copies enter with the coarser noise
/// `R_i + δ_{b/2} E[y_i²]`.
pub fn half_bits_scheme_step(
    state: &FilterState,
    receptions: &[Reception],
    measurements: &[f64],
    coarse: &[f64],
    model: &SystemModel,
) -> Result<FilterState> {
    let m = model.num_sensors();
    for (what, len) in [
        ("receptions", receptions.len()),
        ("measurements", measurements.len()),
        ("coarse measurements", coarse.len()),
    ] {
        if len != m {
            return Err(Error::DimensionMismatch {
                what,
                expected: m,
                got: len,
            });
        }
    }
    let mut rows = Vec::with_capacity(m);
    for (i, r) in receptions.iter().enumerate() {
        match r {
            Reception::Full => rows.push((i, measurements[i], model.effective_noise(i))),
            Reception::Truncated => rows.push((i, coarse[i], model.half_bits_effective_noise(i)?)),
            Reception::Lost => {}
        }
    }
    kalman_step_rows(state, &rows, model)
}

/// Riccati corrections for all `3^M` reception vectors at a fixed `P`.
#[derive(Debug, Clone)]
pub struct HalfBitsTable {
    num_sensors: usize,
    base_trace: f64,
    traces: Vec<f64>,
}

impl HalfBitsTable {
    pub fn new(p: &DMatrix<f64>, model: &SystemModel) -> Result<Self> {
        let m = model.num_sensors();
        let fine: Vec<f64> = (0..m).map(|i| model.effective_noise(i)).collect();
        let coarse = (0..m)
            .map(|i| model.half_bits_effective_noise(i))
            .collect::<Result<Vec<_>>>()?;
        let traces = (0..3usize.pow(m as u32))
            .map(|code| {
                let mut rows = Vec::new();
                let mut c = code;
                for i in 0..m {
                    match c % 3 {
                        1 => rows.push((i, coarse[i])),
                        2 => rows.push((i, fine[i])),
                        _ => {}
                    }
                    c /= 3;
                }
                riccati_correction(p, model, &rows).map(|x| x.trace())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HalfBitsTable {
            num_sensors: m,
            base_trace: prediction_covariance(p, model).trace(),
            traces,
        })
    }

    /// Index of a reception vector (sensor 0 is the least significant digit).
    pub fn code(receptions: &[Reception]) -> usize {
        receptions.iter().rev().fold(0, |acc, r| acc * 3 + r.digit())
    }

    /// `Tr E[P⁺]` under a distribution over reception codes.
    pub fn expected_trace(&self, dist: &[f64]) -> f64 {
        debug_assert_eq!(dist.len(), 3usize.pow(self.num_sensors as u32));
        self.base_trace - dist.iter().zip(&self.traces).map(|(w, t)| w * t).sum::<f64>()
    }
}

/// Distribution of the reception vector. Conditioned on the relay→gateway
/// links, sensors are independent.
pub fn half_bits_distribution(probs: &LinkProbabilities, topology: &Topology) -> Vec<f64> {
    let m = topology.num_sensors();
    let l = topology.num_relays();
    let mut out = vec![0.0; 3usize.pow(m as u32)];
    for relays in 0u64..1 << l {
        let w: f64 = (0..l)
            .map(|r| {
                let p = probs.relay_gateway[r];
                if relays >> r & 1 == 1 {
                    p
                } else {
                    1.0 - p
                }
            })
            .product();
        if w == 0.0 {
            continue;
        }
        let mut per_sensor: Vec<[f64; 3]> = (0..m)
            .map(|i| {
                let full = probs.sensor_gateway[i];
                [1.0 - full, 0.0, full]
            })
            .collect();
        let mut miss = vec![1.0; m];
        for (r, set) in topology.all_hears().iter().enumerate() {
            if relays >> r & 1 == 0 {
                continue;
            }
            for (p, &i) in set.iter().enumerate() {
                miss[i] *= 1.0 - probs.sensor_relay[r][p];
            }
        }
        for (i, s) in per_sensor.iter_mut().enumerate() {
            let lost_direct = s[0];
            s[1] = lost_direct * (1.0 - miss[i]);
            s[0] = lost_direct * miss[i];
        }
        // Sensor 0 is the least significant digit.
        let mut joint = vec![w];
        for s in &per_sensor {
            let mut next = vec![0.0; joint.len() * 3];
            for (d, &pd) in s.iter().enumerate() {
                for (k, &j) in joint.iter().enumerate() {
                    next[d * joint.len() + k] = j * pd;
                }
            }
            joint = next;
        }
        for (o, j) in out.iter_mut().zip(joint) {
            *o += j;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{kalman_step, CovarianceMatrix};
    use crate::netcode::{LinkOutcome, ReconstructionPattern};
    use nalgebra::DVector;

    fn model() -> SystemModel {
        SystemModel::scalar(0.95, 1.0, &[(1.0, 1.0), (0.5, 2.0)], 6).unwrap()
    }

    fn state() -> FilterState {
        FilterState {
            estimate: DVector::from_element(1, 0.3),
            covariance: CovarianceMatrix::scalar(2.0).unwrap(),
        }
    }

    #[test]
    fn direct_reception_matches_standard_step() {
        let m = model();
        let r = [Reception::Full, Reception::Lost];
        let a = half_bits_scheme_step(&state(), &r, &[1.0, -2.0], &[9.0, 9.0], &m).unwrap();
        let b = kalman_step(&state(), &ReconstructionPattern::from_bools(&[true, false]), &[1.0, -2.0], &m).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_copy_is_noisier() {
        let m = model();
        let full = half_bits_scheme_step(&state(), &[Reception::Full, Reception::Lost], &[1.0, 0.0], &[1.0, 0.0], &m).unwrap();
        let trunc = half_bits_scheme_step(&state(), &[Reception::Truncated, Reception::Lost], &[1.0, 0.0], &[1.0, 0.0], &m).unwrap();
        assert!(m.half_bits_effective_noise(0).unwrap() > m.effective_noise(0));
        assert!(trunc.covariance.trace() > full.covariance.trace());
    }

    #[test]
    fn odd_bits_rejected() {
        let m = SystemModel::scalar(0.95, 1.0, &[(1.0, 1.0)], 7).unwrap();
        let s = FilterState {
            estimate: DVector::zeros(1),
            covariance: CovarianceMatrix::scalar(1.0).unwrap(),
        };
        assert!(half_bits_scheme_step(&s, &[Reception::Truncated], &[0.0], &[0.0], &m).is_err());
        assert!(HalfBitsTable::new(&DMatrix::from_element(1, 1, 1.0), &m).is_err());
    }

    #[test]
    fn distribution_matches_outcome_enumeration() {
        let t = Topology::new(2, vec![vec![0, 1], vec![1]]).unwrap();
        let flat = [0.3, 0.6, 0.7, 0.2, 0.9, 0.4, 0.8];
        let probs = LinkProbabilities::from_flat(&t, &flat).unwrap();
        let dist = half_bits_distribution(&probs, &t);
        let mut oracle = vec![0.0; 9];
        for mask in 0u64..1 << flat.len() {
            let w: f64 = flat
                .iter()
                .enumerate()
                .map(|(j, &p)| if mask >> j & 1 == 1 { p } else { 1.0 - p })
                .product();
            let o = LinkOutcome::from_mask(&t, mask);
            let r = half_bits_receptions(&o.sensor_gateway, &o.relay_gateway, &o.sensor_relay, &t);
            oracle[HalfBitsTable::code(&r)] += w;
        }
        for (a, b) in dist.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-14, "{dist:?} vs {oracle:?}");
        }
    }

    #[test]
    fn expected_trace_averages_steps() {
        let m = model();
        let p = DMatrix::from_element(1, 1, 2.0);
        let table = HalfBitsTable::new(&p, &m).unwrap();
        let t = Topology::fully_connected(2, 1).unwrap();
        let probs = LinkProbabilities::from_flat(&t, &[0.3, 0.6, 0.7, 0.9, 0.4]).unwrap();
        let dist = half_bits_distribution(&probs, &t);
        let mut direct = 0.0;
        for code in 0..9 {
            let r: Vec<Reception> = [code % 3, code / 3]
                .iter()
                .map(|d| [Reception::Lost, Reception::Truncated, Reception::Full][*d])
                .collect();
            let next = half_bits_scheme_step(&state(), &r, &[0.0, 0.0], &[0.0, 0.0], &m).unwrap();
            direct += dist[code] * next.covariance.trace();
        }
        assert!((table.expected_trace(&dist) - direct).abs() < 1e-12);
    }
}
