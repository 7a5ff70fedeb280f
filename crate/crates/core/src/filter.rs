//! Gateway Kalman filter with packet drops, and the one-step expected error
//! covariance `f(P)` averaged over reconstruction patterns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::SystemModel;
use crate::netcode::{PatternDistribution, ReconstructionPattern};

/// Largest sensor count for the exact `2^M` pattern sum.
pub const MAX_EXACT_SENSORS: usize = 12;

/// Symmetric positive-semidefinite error covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidCovariance(format!(
                "not square: {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.amax().max(1.0);
        if (&m - m.transpose()).amax() > 1e-10 * scale {
            return Err(Error::InvalidCovariance("not symmetric".into()));
        }
        if linalg::min_symmetric_eigenvalue(&m) < -1e-10 * scale {
            return Err(Error::InvalidCovariance("not positive semidefinite".into()));
        }
        Ok(CovarianceMatrix(linalg::symmetrize(&m)))
    }

    pub fn scalar(p: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, p))
    }

    /// Symmetrizes without checking definiteness.
    pub(crate) fn from_update(m: DMatrix<f64>) -> Self {
        CovarianceMatrix(linalg::symmetrize(&m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// `x̂_{k|k-1}` and `P_{k|k-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub estimate: DVector<f64>,
    pub covariance: CovarianceMatrix,
}

impl FilterState {
    /// Zero estimate with the model's initial covariance.
    pub fn initial(model: &SystemModel) -> Option<Self> {
        model.initial_covariance().map(|p0| FilterState {
            estimate: DVector::zeros(model.state_dim()),
            covariance: CovarianceMatrix(p0.clone()),
        })
    }
}

/// `A X Aᵀ + Q`.
pub fn prediction_covariance(x: &DMatrix<f64>, model: &SystemModel) -> DMatrix<f64> {
    model.a() * x * model.a().transpose() + model.q()
}

/// Gain-side pieces of the stacked update for the selected sensors:
/// `G = A X C̄ᵀ` and the Cholesky factor of `C̄ X C̄ᵀ + R̄`.
fn stacked_update(
    x: &DMatrix<f64>,
    model: &SystemModel,
    rows: &[(usize, f64)],
) -> Result<(DMatrix<f64>, DMatrix<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let n = model.state_dim();
    let c = DMatrix::from_fn(rows.len(), n, |r, j| model.sensors()[rows[r].0].c()[j]);
    let noise = DVector::from_iterator(rows.len(), rows.iter().map(|&(_, v)| v));
    let s = &c * x * c.transpose() + DMatrix::from_diagonal(&noise);
    let chol = linalg::symmetrize(&s)
        .cholesky()
        .ok_or(Error::SingularInnovation)?;
    let g = model.a() * x * c.transpose();
    Ok((c, g, chol))
}

/// `A X C̄ᵀ (C̄ X C̄ᵀ + R̄)⁻¹ C̄ X Aᵀ` for `rows = [(sensor, effective noise)]`.
pub fn riccati_correction(
    x: &DMatrix<f64>,
    model: &SystemModel,
    rows: &[(usize, f64)],
) -> Result<DMatrix<f64>> {
    let n = model.state_dim();
    if rows.is_empty() {
        return Ok(DMatrix::zeros(n, n));
    }
    let (_, g, chol) = stacked_update(x, model, rows)?;
    let z = chol.solve(&g.transpose());
    Ok(linalg::symmetrize(&(&g * z)))
}

/// One filter update with explicit `(sensor, value, effective noise)` rows.
pub fn kalman_step_rows(
    state: &FilterState,
    rows: &[(usize, f64, f64)],
    model: &SystemModel,
) -> Result<FilterState> {
    let p = state.covariance.matrix();
    let predicted = model.a() * &state.estimate;
    let base = prediction_covariance(p, model);
    if rows.is_empty() {
        return Ok(FilterState {
            estimate: predicted,
            covariance: CovarianceMatrix::from_update(base),
        });
    }
    let noise_rows: Vec<(usize, f64)> = rows.iter().map(|&(i, _, r)| (i, r)).collect();
    let (c, g, chol) = stacked_update(p, model, &noise_rows)?;
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&(_, v, _)| v));
    let innovation = y - &c * &state.estimate;
    let estimate = predicted + &g * chol.solve(&innovation);
    let covariance = base - &g * chol.solve(&g.transpose());
    Ok(FilterState {
        estimate,
        covariance: CovarianceMatrix::from_update(covariance),
    })
}

/// Stacked update using the sensors recovered in `pattern`;
/// `received[i]` is read only where `θ_i = 1`.
pub fn kalman_step(
    state: &FilterState,
    pattern: &ReconstructionPattern,
    received: &[f64],
    model: &SystemModel,
) -> Result<FilterState> {
    if received.len() != model.num_sensors() {
        return Err(Error::DimensionMismatch {
            what: "received measurements",
            expected: model.num_sensors(),
            got: received.len(),
        });
    }
    let rows: Vec<(usize, f64, f64)> = pattern
        .recovered()
        .map(|i| (i, received[i], model.effective_noise(i)))
        .collect();
    kalman_step_rows(state, &rows, model)
}

/// Riccati corrections of every pattern at a fixed covariance, so that
/// many pattern distributions can be scored against one `P`.
#[derive(Debug, Clone)]
pub struct CorrectionTable {
    base: DMatrix<f64>,
    corrections: Vec<DMatrix<f64>>,
    traces: Vec<f64>,
}

impl CorrectionTable {
    pub fn new(p: &DMatrix<f64>, model: &SystemModel) -> Result<Self> {
        let m = model.num_sensors();
        if m > MAX_EXACT_SENSORS {
            return Err(Error::TooManySensors {
                sensors: m,
                max: MAX_EXACT_SENSORS,
            });
        }
        let corrections = (0u64..1 << m)
            .map(|mask| {
                let rows: Vec<(usize, f64)> = (0..m)
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| (i, model.effective_noise(i)))
                    .collect();
                riccati_correction(p, model, &rows)
            })
            .collect::<Result<Vec<_>>>()?;
        let traces = corrections.iter().map(|c| c.trace()).collect();
        Ok(CorrectionTable {
            base: prediction_covariance(p, model),
            corrections,
            traces,
        })
    }

    pub fn prediction(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn correction(&self, mask: u64) -> &DMatrix<f64> {
        &self.corrections[mask as usize]
    }

    /// `f(P)` under `dist`.
    pub fn expected(&self, dist: &PatternDistribution) -> DMatrix<f64> {
        let mut out = self.base.clone();
        for (mask, w) in dist.support() {
            out -= &self.corrections[mask as usize] * w;
        }
        linalg::symmetrize(&out)
    }

    /// `Tr f(P)` under `dist`.
    pub fn expected_trace(&self, dist: &PatternDistribution) -> f64 {
        self.base.trace()
            - dist
                .probs()
                .iter()
                .zip(&self.traces)
                .map(|(w, t)| w * t)
                .sum::<f64>()
    }
}

/// One-step expected error covariance for a pattern distribution.
pub fn expected_covariance(
    p: &CovarianceMatrix,
    dist: &PatternDistribution,
    model: &SystemModel,
) -> Result<CovarianceMatrix> {
    if dist.num_sensors() != model.num_sensors() {
        return Err(Error::DimensionMismatch {
            what: "pattern distribution sensors",
            expected: model.num_sensors(),
            got: dist.num_sensors(),
        });
    }
    if (dist.total() - 1.0).abs() > 1e-9 || dist.probs().iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "weights must be nonnegative and sum to 1 (sum = {})",
            dist.total()
        )));
    }
    let table = CorrectionTable::new(p.matrix(), model)?;
    Ok(CovarianceMatrix::from_update(table.expected(dist)))
}

/// The relay's operation in the two-sensor, one-relay closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecialCaseOp {
    ForwardFirst,
    ForwardSecond,
    Xor,
}

/// Closed-form `E[P⁺]` for a scalar process, two sensors and one relay whose
/// own links never drop packets.
#[allow(clippy::too_many_arguments)]
pub fn special_case_expected_covariance(
    p: f64,
    lambda1: f64,
    lambda2: f64,
    snr1: f64,
    snr2: f64,
    a: f64,
    q: f64,
    op: SpecialCaseOp,
) -> f64 {
    let gain = a * a * p * p;
    let both = gain / (p + 1.0 / (snr1 + snr2));
    let only1 = gain / (p + 1.0 / snr1);
    let only2 = gain / (p + 1.0 / snr2);
    let open_loop = a * a * p + q;
    match op {
        SpecialCaseOp::ForwardFirst => open_loop - lambda2 * both - (1.0 - lambda2) * only1,
        SpecialCaseOp::ForwardSecond => open_loop - lambda1 * both - (1.0 - lambda1) * only2,
        SpecialCaseOp::Xor => open_loop - (lambda1 + lambda2 - lambda1 * lambda2) * both,
    }
}

/// Thresholds on `(λ₁, λ₂)` above which XOR beats forwarding `y₁` and `y₂`
/// respectively in the closed-form special case.
pub fn xor_better_thresholds(p: f64, snr1: f64, snr2: f64) -> (f64, f64) {
    let both = p + 1.0 / (snr1 + snr2);
    (both / (p + 1.0 / snr1), both / (p + 1.0 / snr2))
}

/// The same comparison rearranged as conditions on the SNRs at fixed
/// `(λ₁, λ₂)`: `(XOR beats forwarding y₁, XOR beats forwarding y₂)`.
pub fn xor_better_snr_conditions(
    p: f64,
    lambda1: f64,
    lambda2: f64,
    snr1: f64,
    snr2: f64,
) -> (bool, bool) {
    let inv_sum = 1.0 / (snr1 + snr2);
    (
        lambda1 / snr1 - inv_sum > p * (1.0 - lambda1),
        lambda2 / snr2 - inv_sum > p * (1.0 - lambda2),
    )
}
