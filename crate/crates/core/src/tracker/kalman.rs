//! Linear Kalman filter over fixed-size nalgebra matrices.

use nalgebra::{DMatrix, SMatrix, SVector};

use super::TrackerError;
use crate::stats::eigen_symmetric;

/// Innovation covariance is rejected above this condition number.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;
/// Floor applied to a predicted scale (or aspect) that went non-positive.
pub const SCALE_EPSILON: f64 = 1e-6;

/// Model matrices for a state of size `N` observed through `M` measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanParams<const N: usize, const M: usize> {
    pub transition: SMatrix<f64, N, N>,
    /// Control matrix and input. Kept for completeness; zero in SORT.
    pub control: SMatrix<f64, N, N>,
    pub control_input: SVector<f64, N>,
    pub process_noise: SMatrix<f64, N, N>,
    pub observation: SMatrix<f64, M, N>,
    pub measurement_noise: SMatrix<f64, M, M>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState<const N: usize> {
    pub x: SVector<f64, N>,
    pub covariance: SMatrix<f64, N, N>,
}

fn symmetrize<const N: usize>(p: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (p + p.transpose()) * 0.5
}

impl<const N: usize> KalmanState<N> {
    pub fn new(x: SVector<f64, N>, covariance: SMatrix<f64, N, N>) -> Self {
        Self { x, covariance }
    }

    /// x ← F x + B u, P ← F P Fᵀ + Q.
    pub fn predict<const M: usize>(&self, p: &KalmanParams<N, M>) -> Self {
        let x = p.transition * self.x + p.control * p.control_input;
        let covariance =
            p.transition * self.covariance * p.transition.transpose() + p.process_noise;
        Self {
            x,
            covariance: symmetrize(&covariance),
        }
    }

    /// Gain K = P Hᵀ (H P Hᵀ + R)⁻¹, then x ← x + K(z − Hx) and P ← (I − KH) P.
    pub fn update<const M: usize>(
        &self,
        z: &SVector<f64, M>,
        p: &KalmanParams<N, M>,
    ) -> Result<Self, TrackerError> {
        let h = &p.observation;
        let innovation_cov = symmetrize(&(h * self.covariance * h.transpose() + p.measurement_noise));
        let condition = condition_number(&innovation_cov)?;
        if !(condition <= MAX_INNOVATION_CONDITION) {
            return Err(TrackerError::Numerical(format!(
                "innovation covariance condition number {condition:e}"
            )));
        }
        let chol = innovation_cov.cholesky().ok_or_else(|| {
            TrackerError::Numerical("innovation covariance not positive definite".into())
        })?;
        // K = P Hᵀ S⁻¹, solved as Sᵀ Kᵀ = H Pᵀ with S symmetric.
        let gain: SMatrix<f64, N, M> = chol.solve(&(h * self.covariance)).transpose();
        let innovation = z - h * self.x;
        let x = self.x + gain * innovation;
        let covariance = (SMatrix::<f64, N, N>::identity() - gain * h) * self.covariance;
        Ok(Self {
            x,
            covariance: symmetrize(&covariance),
        })
    }

    pub fn min_covariance_eigenvalue(&self) -> f64 {
        let d = DMatrix::from_fn(N, N, |r, c| self.covariance[(r, c)]);
        eigen_symmetric(&d)
            .map(|e| e.values.last().copied().unwrap_or(0.0))
            .unwrap_or(f64::NAN)
    }
}

fn condition_number<const M: usize>(s: &SMatrix<f64, M, M>) -> Result<f64, TrackerError> {
    let d = DMatrix::from_fn(M, M, |r, c| s[(r, c)]);
    let eig = eigen_symmetric(&d).map_err(|e| TrackerError::Numerical(e.to_string()))?;
    let max = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.values.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if eig.values.iter().any(|v| *v <= 0.0) || min == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

pub fn kalman_predict<const N: usize, const M: usize>(
    state: &KalmanState<N>,
    p: &KalmanParams<N, M>,
) -> KalmanState<N> {
    state.predict(p)
}

pub fn kalman_update<const N: usize, const M: usize>(
    state: &KalmanState<N>,
    z: &SVector<f64, M>,
    p: &KalmanParams<N, M>,
) -> Result<KalmanState<N>, TrackerError> {
    state.update(z, p)
}
