//! The sparsity regulariser and its proximal maps.
//!
//! `R(θ) = λ (Σ_{ℓ ≠ l_enc} √d^ℓ ‖W^ℓ‖_{1,2} + ‖W^{l_enc}‖_*)` where `‖·‖_{1,2}`
//! sums the Euclidean norms of the rows and `‖·‖_*` is the nuclear norm.
//! Biases are not regularised. Because `R` is a sum over parameter blocks the
//! proximal map acts block by block: row-wise group soft-thresholding for the
//! ordinary layers, singular value soft-thresholding for the latent layer and
//! the identity for biases.
//!
//! Thresholded rows and singular values are written as literal zeros so that
//! sparsity can be counted exactly.

use crate::error::{Error, Result};
use crate::linalg::{svd, Mat};
use crate::model::{Architecture, Params};

#[derive(Clone, Debug, PartialEq)]
pub struct RegSpec {
    /// Regularisation constant `λ`.
    pub lambda: f64,
    /// Group weight per layer (`√d^ℓ`); the entry of the nuclear layer is unused.
    pub row_weights: Vec<f64>,
    /// One-based index of the layer carrying the nuclear norm.
    pub nuclear_layer: usize,
}

impl RegSpec {
    pub fn new(lambda: f64, arch: &Architecture) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(RegSpec {
            lambda,
            row_weights: arch.layer_sizes()[1..]
                .iter()
                .map(|&d| (d as f64).sqrt())
                .collect(),
            nuclear_layer: arch.l_enc(),
        })
    }

    /// Threshold applied to the rows of layer `layer` (one-based).
    pub fn row_threshold(&self, layer: usize) -> f64 {
        self.lambda * self.row_weights[layer - 1]
    }

    fn check(&self, params: &Params) -> Result<()> {
        if self.row_weights.len() != params.depth() {
            return Err(Error::invalid(format!(
                "regulariser has {} layers, parameters have {}",
                self.row_weights.len(),
                params.depth()
            )));
        }
        if self.nuclear_layer == 0 || self.nuclear_layer > params.depth() {
            return Err(Error::invalid(format!(
                "nuclear layer {} out of range",
                self.nuclear_layer
            )));
        }
        Ok(())
    }
}

/// Value of the regulariser at `params`.
pub fn reg_value(spec: &RegSpec, params: &Params) -> Result<f64> {
    spec.check(params)?;
    let mut total = 0.0;
    for (k, w) in params.weights.iter().enumerate() {
        if k + 1 == spec.nuclear_layer {
            total += svd(w)?.s.iter().sum::<f64>();
        } else {
            let rows: f64 = (0..w.rows()).map(|i| w.row_norm(i)).sum();
            total += spec.row_weights[k] * rows;
        }
    }
    Ok(spec.lambda * total)
}

/// Proximal map of `tau · Σ_rows ‖row‖₂`: each row is scaled by
/// `max(0, 1 - tau / ‖row‖₂)`.
pub fn prox_group_rows(w: &Mat, tau: f64) -> Mat {
    let mut out = w.clone();
    if tau == 0.0 {
        return out;
    }
    for i in 0..out.rows() {
        let norm = out.row_norm(i);
        if norm <= tau {
            out.zero_row(i);
        } else {
            out.scale_row(i, 1.0 - tau / norm);
        }
    }
    out
}

/// Proximal map of `tau · ‖·‖_*`: soft-thresholds the singular values.
pub fn prox_nuclear(w: &Mat, tau: f64) -> Result<Mat> {
    if tau == 0.0 {
        return Ok(w.clone());
    }
    let mut f = svd(w)?;
    let rank = f.s.iter().take_while(|&&s| s > tau).count();
    if rank == 0 {
        return Ok(Mat::zeros(w.rows(), w.cols()));
    }
    f.s.iter_mut().for_each(|s| *s = (*s - tau).max(0.0));
    Ok(f.reconstruct(Some(rank)))
}

/// Blockwise proximal map of the full regulariser.
pub fn prox_params(spec: &RegSpec, dual: &Params) -> Result<Params> {
    spec.check(dual)?;
    let weights = dual
        .weights
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let layer = k + 1;
            if layer == spec.nuclear_layer {
                prox_nuclear(v, spec.lambda)
            } else {
                Ok(prox_group_rows(v, spec.row_threshold(layer)))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Params {
        weights,
        biases: dual.biases.clone(),
    })
}
