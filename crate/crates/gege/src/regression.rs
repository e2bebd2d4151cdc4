//! Subspace least squares for multi-output linear responses.
//!
//! A deterministic pull sequence observes `y_t = Theta^T x_{a_t} + eta_t`
//! with matrix parameter `Theta` (`h x d`). When the pulled features only
//! span a subspace with orthonormal basis `B`, the information matrix
//! `V_n = X_n^T X_n` is singular and the estimator uses the restricted
//! inverse `V_n^dag = B (B^T V_n B)^{-1} B^T`. Then
//! `Theta_hat = V_n^dag X_n^T Y_n` satisfies
//! `Theta_hat = B B^T Theta + V_n^dag X_n^T H_n` (noise matrix `H_n`), so
//! predictions are exact on the span when the noise vanishes, and
//! `Cov(Theta_hat^T x) = ||x||^2_{V_n^dag} Sigma` for noise covariance
//! `Sigma`.

use nalgebra::DMatrix;

use crate::design::SubspaceBasis;
use crate::error::{Error, Result};
use crate::pareto::MeanMatrix;

/// A deterministic sampling log: pulled arm ids, their features, responses.
#[derive(Debug, Clone)]
pub struct PullLog {
    arm_ids: Vec<usize>,
    features: DMatrix<f64>,
    responses: DMatrix<f64>,
}

impl PullLog {
    /// One row per pull in both matrices, at least one pull.
    pub fn new(arm_ids: Vec<usize>, features: DMatrix<f64>, responses: DMatrix<f64>) -> Result<Self> {
        let n = arm_ids.len();
        if n == 0 {
            return Err(Error::InvalidInstance("empty pull log".into()));
        }
        if features.nrows() != n || responses.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} pulls, {} feature rows, {} response rows",
                n,
                features.nrows(),
                responses.nrows()
            )));
        }
        Ok(Self {
            arm_ids,
            features,
            responses,
        })
    }

    pub fn len(&self) -> usize {
        self.arm_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arm_ids.is_empty()
    }

    pub fn arm_ids(&self) -> &[usize] {
        &self.arm_ids
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn responses(&self) -> &DMatrix<f64> {
        &self.responses
    }

    /// `X_n^T Y_n`, the response moments (`h x d`).
    pub fn response_moments(&self) -> DMatrix<f64> {
        self.features.transpose() * &self.responses
    }
}

/// Information matrix `V_n = X_n^T X_n` of the pulled features.
pub fn info_matrix(log: &PullLog) -> DMatrix<f64> {
    log.features.transpose() * log.features()
}

/// Restricted inverse `B (B^T V_n B)^{-1} B^T` of an information matrix on
/// a subspace basis.
///
/// Fails when some basis direction carries no samples (the projected
/// information matrix is then not positive definite).
pub fn pseudo_inverse(info: &DMatrix<f64>, basis: &SubspaceBasis) -> Result<DMatrix<f64>> {
    let b = basis.matrix();
    if info.nrows() != b.nrows() || info.ncols() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "information matrix {}x{} against basis rows {}",
            info.nrows(),
            info.ncols(),
            b.nrows()
        )));
    }
    let projected = b.transpose() * info * b;
    let chol = projected.cholesky().ok_or(Error::UnsampledDirection)?;
    let inner = chol.inverse();
    Ok(b * inner * b.transpose())
}

/// Least squares estimate `Theta_hat = V_n^dag X_n^T Y_n` (`h x d`).
pub fn ols_estimate(log: &PullLog, pseudo_inverse: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ols_from_moments(pseudo_inverse, &log.response_moments())
}

/// Least squares from precomputed response moments `X_n^T Y_n`.
///
/// Identical math to [`ols_estimate`]; callers that pull one arm many times
/// can accumulate the moments as `sum_i x_i (sum of y on arm i)^T` without
/// materializing the log.
pub fn ols_from_moments(
    pseudo_inverse: &DMatrix<f64>,
    response_moments: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if pseudo_inverse.ncols() != response_moments.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "pseudo-inverse {}x{} against moments {}x{}",
            pseudo_inverse.nrows(),
            pseudo_inverse.ncols(),
            response_moments.nrows(),
            response_moments.ncols()
        )));
    }
    Ok(pseudo_inverse * response_moments)
}

/// Predicted mean rows `x_i^T Theta_hat` for every feature row given.
pub fn predicted_means(theta_hat: &DMatrix<f64>, features: &DMatrix<f64>) -> Result<MeanMatrix> {
    if features.ncols() != theta_hat.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "features with {} columns against parameter with {} rows",
            features.ncols(),
            theta_hat.nrows()
        )));
    }
    MeanMatrix::new(features * theta_hat)
}
