//! Linear process, quantized scalar sensors, and trajectory generation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;

/// Quantization noise factor of the uniform quantizer at `bits` bits per sample:
/// the quantization noise variance is this factor times `E[y²]`.
pub fn quantization_noise_factor(bits: u32) -> Result<f64> {
    if bits == 0 {
        return Err(Error::ZeroBits);
    }
    let b = f64::from(bits);
    Ok(4.0 * b * std::f64::consts::LN_2 / (3.0 * 2f64.powi(2 * bits as i32)))
}

/// Noise factor for a packet whose `bits / 2` least significant bits were dropped.
pub fn half_bits_noise_factor(bits: u32) -> Result<f64> {
    if bits == 0 {
        return Err(Error::ZeroBits);
    }
    if !bits.is_multiple_of(2) {
        return Err(Error::OddBits(bits));
    }
    let b = f64::from(bits);
    Ok(2.0 * b * std::f64::consts::LN_2 / (3.0 * 2f64.powi(bits as i32)))
}

/// User-facing description of one sensor; `y_power` may be left for the
/// model to derive from the stationary state covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorParams {
    pub c: Vec<f64>,
    pub r: f64,
    pub y_power: Option<f64>,
}

impl SensorParams {
    pub fn new(c: Vec<f64>, r: f64) -> Self {
        SensorParams {
            c,
            r,
            y_power: None,
        }
    }

    pub fn with_y_power(mut self, y_power: f64) -> Self {
        self.y_power = Some(y_power);
        self
    }
}

/// A resolved sensor: observation row, noise variance and measurement power.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    c: DVector<f64>,
    r: f64,
    y_power: f64,
}

impl SensorSpec {
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn y_power(&self) -> f64 {
        self.y_power
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    sensors: Vec<SensorSpec>,
    bits_per_packet: u32,
    delta: f64,
    stationary: Option<DMatrix<f64>>,
    initial_covariance: Option<DMatrix<f64>>,
}

impl SystemModel {
    pub fn new(
        a: DMatrix<f64>,
        q: DMatrix<f64>,
        sensors: Vec<SensorParams>,
        bits_per_packet: u32,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::InvalidModel(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if q.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                what: "Q rows",
                expected: n,
                got: q.nrows(),
            });
        }
        if (&q - q.transpose()).amax() > 1e-10 * q.amax().max(1.0) {
            return Err(Error::InvalidModel("Q must be symmetric".into()));
        }
        if q.clone().cholesky().is_none() {
            return Err(Error::InvalidModel("Q must be positive definite".into()));
        }
        if bits_per_packet > 64 {
            return Err(Error::InvalidModel("at most 64 bits per packet".into()));
        }
        let delta = quantization_noise_factor(bits_per_packet)?;
        if sensors.is_empty() {
            return Err(Error::InvalidModel("at least one sensor is required".into()));
        }
        let stationary = if linalg::spectral_radius(&a) < 1.0 {
            Some(linalg::solve_discrete_lyapunov(&a, &q)?)
        } else {
            None
        };
        let mut resolved = Vec::with_capacity(sensors.len());
        for (i, s) in sensors.into_iter().enumerate() {
            if s.c.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "sensor observation row",
                    expected: n,
                    got: s.c.len(),
                });
            }
            if !(s.r >= 0.0) || !s.r.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "sensor {}: noise variance must be >= 0",
                    i + 1
                )));
            }
            let c = DVector::from_vec(s.c);
            let y_power = match (s.y_power, &stationary) {
                (Some(y), _) => y,
                (None, Some(sigma)) => (c.transpose() * sigma * &c)[(0, 0)] + s.r,
                (None, None) => return Err(Error::UnstableProcess(linalg::spectral_radius(&a))),
            };
            if !(y_power >= s.r) || !y_power.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "sensor {}: y_power {y_power} is below the noise variance {}",
                    i + 1,
                    s.r
                )));
            }
            if s.r + delta * y_power <= 0.0 {
                return Err(Error::InvalidModel(format!(
                    "sensor {}: effective measurement noise must be positive",
                    i + 1
                )));
            }
            resolved.push(SensorSpec {
                c,
                r: s.r,
                y_power,
            });
        }
        Ok(SystemModel {
            a,
            q,
            sensors: resolved,
            bits_per_packet,
            delta,
            stationary,
            initial_covariance: None,
        })
    }

    /// Scalar process `x' = a x + w` observed by sensors `(c_i, r_i)`.
    pub fn scalar(a: f64, q: f64, sensors: &[(f64, f64)], bits_per_packet: u32) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, q),
            sensors
                .iter()
                .map(|&(c, r)| SensorParams::new(vec![c], r))
                .collect(),
            bits_per_packet,
        )
    }

    /// Overrides the default initial covariance (the stationary one).
    pub fn with_initial_covariance(mut self, p0: DMatrix<f64>) -> Result<Self> {
        let n = self.state_dim();
        if p0.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                what: "P0 rows",
                expected: n,
                got: p0.nrows(),
            });
        }
        if linalg::min_symmetric_eigenvalue(&p0) < -1e-10 {
            return Err(Error::InvalidModel("P0 must be positive semidefinite".into()));
        }
        self.initial_covariance = Some(linalg::symmetrize(&p0));
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn sensors(&self) -> &[SensorSpec] {
        &self.sensors
    }

    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn bits_per_packet(&self) -> u32 {
        self.bits_per_packet
    }

    pub fn quantization_factor(&self) -> f64 {
        self.delta
    }

    /// `R_i + δ_b E[y_i²]`.
    pub fn effective_noise(&self, sensor: usize) -> f64 {
        let s = &self.sensors[sensor];
        s.r + self.delta * s.y_power
    }

    /// Effective noise of a measurement that lost half of its bits at a relay.
    pub fn half_bits_effective_noise(&self, sensor: usize) -> Result<f64> {
        let s = &self.sensors[sensor];
        Ok(s.r + half_bits_noise_factor(self.bits_per_packet)? * s.y_power)
    }

    /// `c_i² / r̆_i` for a scalar process; `‖C_i‖² / r̆_i` in general.
    pub fn snr(&self, sensor: usize) -> f64 {
        self.sensors[sensor].c.norm_squared() / self.effective_noise(sensor)
    }

    /// Stationary state covariance, when `A` is stable.
    pub fn stationary_covariance(&self) -> Option<&DMatrix<f64>> {
        self.stationary.as_ref()
    }

    /// P0: the user override, else the stationary covariance.
    pub fn initial_covariance(&self) -> Option<&DMatrix<f64>> {
        self.initial_covariance.as_ref().or(self.stationary.as_ref())
    }

    /// Stationary second moment of sensor `i`'s measurement, `C_i Σ C_iᵀ + R_i`.
    pub fn stationary_measurement_power(&self, sensor: usize) -> Result<f64> {
        let sigma = self
            .stationary
            .as_ref()
            .ok_or_else(|| Error::UnstableProcess(linalg::spectral_radius(&self.a)))?;
        let s = &self.sensors[sensor];
        Ok((s.c.transpose() * sigma * &s.c)[(0, 0)] + s.r)
    }
}

/// Sampled states and quantized measurements.
///
/// `coarse_measurements` holds the same measurements after a relay drops half
/// of the bits; it is only generated for even packet sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<Vec<f64>>,
    pub coarse_measurements: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Quantized measurements of all sensors at step `k`.
    pub fn measurements_at(&self, k: usize) -> Vec<f64> {
        self.measurements.iter().map(|m| m[k]).collect()
    }
}

/// Simulates `horizon` steps with `x0 ~ N(0, Σ)` (or `x0 = 0` when `A` is unstable).
pub fn simulate_trajectory(model: &SystemModel, horizon: usize, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_trajectory_with(model, horizon, None, &mut rng)
}

pub fn simulate_trajectory_with<R: Rng + ?Sized>(
    model: &SystemModel,
    horizon: usize,
    x0: Option<DVector<f64>>,
    rng: &mut R,
) -> Trajectory {
    let n = model.state_dim();
    let m = model.num_sensors();
    let gauss = |rng: &mut R, len: usize| -> DVector<f64> {
        DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    let mut x = match x0 {
        Some(x0) => x0,
        None => match model.stationary_covariance() {
            Some(sigma) => factor(sigma) * gauss(rng, n),
            None => DVector::zeros(n),
        },
    };
    let q_factor = factor(model.q());
    let coarse_extra = half_bits_noise_factor(model.bits_per_packet())
        .ok()
        .map(|half| half - model.quantization_factor());

    let mut states = Vec::with_capacity(horizon);
    let mut measurements = vec![Vec::with_capacity(horizon); m];
    let mut coarse = coarse_extra.map(|_| vec![Vec::with_capacity(horizon); m]);
    for _ in 0..horizon {
        for (i, s) in model.sensors().iter().enumerate() {
            let v: f64 = rng.sample(StandardNormal);
            let quant: f64 = rng.sample(StandardNormal);
            let y = s.c().dot(&x)
                + s.r().sqrt() * v
                + (model.quantization_factor() * s.y_power()).sqrt() * quant;
            measurements[i].push(y);
            if let (Some(extra), Some(coarse)) = (coarse_extra, coarse.as_mut()) {
                let z: f64 = rng.sample(StandardNormal);
                coarse[i].push(y + (extra * s.y_power()).sqrt() * z);
            }
        }
        let w = &q_factor * gauss(rng, n);
        let next = model.a() * &x + w;
        states.push(std::mem::replace(&mut x, next));
    }
    Trajectory {
        states,
        measurements,
        coarse_measurements: coarse,
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = X` for a PSD `X`.
pub(crate) fn factor(x: &DMatrix<f64>) -> DMatrix<f64> {
    match x.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            // PSD but singular: fall back to the symmetric square root.
            let eig = linalg::symmetrize(x).symmetric_eigen();
            let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
        }
    }
}
