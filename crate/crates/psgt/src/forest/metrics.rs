//! Evaluation metrics: MAE, RMSE, and error volatility.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction count {predictions} does not match target count {targets}")]
    LengthMismatch { targets: usize, predictions: usize },
    #[error("metrics need at least one prediction")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub vol: f64,
}

fn check(y_true: &[f64], y_pred: &[f64]) -> Result<(), MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch {
            targets: y_true.len(),
            predictions: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricsError> {
    check(y_true, y_pred)?;
    let total: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).abs()).sum();
    Ok(total / y_true.len() as f64)
}

/// Root mean squared error.
pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricsError> {
    check(y_true, y_pred)?;
    let total: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok((total / y_true.len() as f64).sqrt())
}

/// Error volatility: mean absolute deviation of the signed errors around
/// their mean. Zero exactly when every error is the same, so a constant bias
/// has volatility 0.
pub fn vol(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricsError> {
    check(y_true, y_pred)?;
    let n = y_true.len() as f64;
    let errors: Vec<f64> = y_true.iter().zip(y_pred).map(|(t, p)| t - p).collect();
    let mean = errors.iter().sum::<f64>() / n;
    Ok(errors.iter().map(|e| (e - mean).abs()).sum::<f64>() / n)
}

/// All three metrics in one pass over the inputs.
pub fn report(y_true: &[f64], y_pred: &[f64]) -> Result<MetricsReport, MetricsError> {
    Ok(MetricsReport {
        mae: mae(y_true, y_pred)?,
        rmse: rmse(y_true, y_pred)?,
        vol: vol(y_true, y_pred)?,
    })
}
