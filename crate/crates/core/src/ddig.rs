//! Inferring which classes a client holds from its model update.
//!
//! With cross-entropy and a ReLU penultimate layer, the per-sample gradient
//! of the last weight block is `(p - y) o^T` with `o >= 0`, so the only rows
//! that move against the gradient sign are the sample's own class. Summing
//! each row of the negated accumulated gradient gives an indicator `u` whose
//! large entries mark classes the client holds many samples of. Plain SGD
//! preserves the sum across local steps, so the server can read the
//! accumulated gradient straight off the update.

use crate::error::{Error, Result};
use crate::matrix::BinaryMatrix;
use crate::model::{last_weight_range, LayerShape, ModelUpdate};

/// How the peak threshold is chosen from an indicator vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    /// `beta = mean(u)`
    Mean,
    /// `beta = mean(u) + std(u)`
    MeanPlusStd,
    /// A fixed `beta`.
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdigConfig {
    pub beta: BetaMode,
    /// Client learning rate, used to turn updates back into gradients.
    pub lr: f64,
}

impl DdigConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "gradient recovery needs a positive learning rate, got {}",
                self.lr
            )));
        }
        if let BetaMode::Absolute(b) = self.beta {
            if !b.is_finite() {
                return Err(Error::config("absolute beta must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorVector {
    pub client_id: usize,
    pub u: Vec<f64>,
}

/// Accumulated last-layer weight gradient `G = -delta_last / lr`, row-major
/// `m x r`. The bias block is ignored.
pub fn recover_last_layer_gradient(delta: &[f64], shapes: &[LayerShape], lr: f64) -> Result<Vec<f64>> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::config(format!(
            "gradient recovery needs a positive learning rate, got {lr}"
        )));
    }
    if shapes.is_empty() {
        return Err(Error::shape("model has no layers"));
    }
    let d: usize = shapes.iter().map(LayerShape::param_count).sum();
    if delta.len() != d {
        return Err(Error::shape(format!(
            "update of length {} does not fit a {d}-parameter model",
            delta.len()
        )));
    }
    Ok(delta[last_weight_range(shapes)]
        .iter()
        .map(|x| -x / lr)
        .collect())
}

/// `u_s = -sum_t G[s][t]`.
pub fn indicator(grad: &[f64], classes: usize) -> Result<Vec<f64>> {
    if classes == 0 || !grad.len().is_multiple_of(classes) {
        return Err(Error::shape(format!(
            "gradient block of length {} is not {classes} equal rows",
            grad.len()
        )));
    }
    let r = grad.len() / classes;
    Ok(grad.chunks(r).map(|row| -row.iter().sum::<f64>()).collect())
}

pub fn threshold(u: &[f64], beta: BetaMode) -> f64 {
    match beta {
        BetaMode::Mean => crate::vector::mean(u),
        BetaMode::MeanPlusStd => crate::vector::mean(u) + crate::vector::std_dev(u),
        BetaMode::Absolute(b) => b,
    }
}

/// Bit `l` is set iff `u_l > beta`.
pub fn infer_column(u: &[f64], beta: BetaMode) -> Vec<bool> {
    let beta = threshold(u, beta);
    u.iter().map(|&x| x > beta).collect()
}

/// Indicator and inferred column for one client update.
pub fn infer_update(
    update: &ModelUpdate,
    shapes: &[LayerShape],
    cfg: &DdigConfig,
) -> Result<(IndicatorVector, Vec<bool>)> {
    cfg.validate()?;
    let classes = shapes.last().map(|s| s.out).unwrap_or(0);
    let g = recover_last_layer_gradient(&update.delta, shapes, cfg.lr)?;
    let u = indicator(&g, classes)?;
    let col = infer_column(&u, cfg.beta);
    Ok((
        IndicatorVector {
            client_id: update.client_id,
            u,
        },
        col,
    ))
}

/// Fraction of matching elements between the true and inferred matrices.
pub fn inference_accuracy(truth: &BinaryMatrix, inferred: &BinaryMatrix) -> Result<f64> {
    if truth.rows() != inferred.rows() || truth.cols() != inferred.cols() {
        return Err(Error::shape(format!(
            "cannot compare {}x{} with {}x{}",
            truth.rows(),
            truth.cols(),
            inferred.rows(),
            inferred.cols()
        )));
    }
    let cells = truth.rows() * truth.cols();
    if cells == 0 {
        return Ok(1.0);
    }
    let mut same = 0;
    for i in 0..truth.rows() {
        for j in 0..truth.cols() {
            if truth.get(i, j) == inferred.get(i, j) {
                same += 1;
            }
        }
    }
    Ok(same as f64 / cells as f64)
}
