//! Compression after training: truncated SVD of the latent layer, then
//! folding of dead neurons into the next layer's bias.
//!
//! Both steps are exact re-parameterisations except for the discarded
//! singular values, whose threshold is chosen from the training loss and a
//! Lipschitz estimate of the decoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, matvec, spectral_norm, svd, truncation_rank, Mat};
use crate::model::{self, Activation, MlpAutoencoder};

/// Replaces `W^{l_enc} = U S Vᵀ` by its rank-`r` factors, moving `U_r` into
/// the first decoder layer. `r` is the number of singular values above
/// `eps` (at least one).
pub fn latent_truncated_svd(model: &MlpAutoencoder, eps: f64) -> Result<MlpAutoencoder> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::invalid(format!("truncation threshold must be >= 0, got {eps}")));
    }
    let l = model.l_enc();
    let w_enc = model.weight(l);
    let w_next = model.weight(l + 1);
    let f = svd(w_enc)?;
    let r = truncation_rank(&f.s, eps)?;

    let mut new_enc = f.vt.leading_rows(r);
    for (i, &s) in f.s.iter().take(r).enumerate() {
        new_enc.scale_row(i, s);
    }
    let new_next = matmul(w_next, &f.u.leading_cols(r))?;
    let folded = matvec(w_next, model.bias(l))?;
    let new_next_bias: Vec<f64> = folded.iter().zip(model.bias(l + 1)).map(|(a, b)| a + b).collect();

    let mut out = model.clone();
    out.params.weights[l - 1] = new_enc;
    out.params.biases[l - 1] = vec![0.0; r];
    out.params.weights[l] = new_next;
    out.params.biases[l] = new_next_bias;
    out.sync_arch();
    Ok(out)
}

/// Product of the spectral norms of the decoder layers (ReLU is
/// 1-Lipschitz).
pub fn lipschitz_upper_bound(model: &MlpAutoencoder) -> Result<f64> {
    let mut bound = 1.0;
    for l in model.l_enc() + 1..=model.depth() {
        bound *= spectral_norm(model.weight(l))?;
    }
    Ok(bound)
}

/// Decoder Jacobian at the latent point `z`, accumulated in forward mode.
pub fn decoder_jacobian(model: &MlpAutoencoder, z: &[f64]) -> Result<Mat> {
    let r = model.effective_latent_dim();
    if z.len() != r {
        return Err(Error::DimensionMismatch {
            op: "decoder_jacobian",
            left: (r, 1),
            right: (z.len(), 1),
        });
    }
    let plan = model.activations();
    let mut a = z.to_vec();
    let mut jac = Mat::identity(r);
    for l in model.l_enc() + 1..=model.depth() {
        let w = model.weight(l);
        let mut pre = matvec(w, &a)?;
        pre.iter_mut().zip(model.bias(l)).for_each(|(p, b)| *p += b);
        jac = matmul(w, &jac)?;
        if plan[l - 1] == Activation::Relu {
            for (i, p) in pre.iter_mut().enumerate() {
                if *p <= 0.0 {
                    *p = 0.0;
                    jac.zero_row(i);
                }
            }
        }
        a = pre;
    }
    Ok(jac)
}

/// Largest spectral norm of the decoder Jacobian over the columns of
/// `latent_samples`.
pub fn lipschitz_jacobian_estimate(model: &MlpAutoencoder, latent_samples: &Mat) -> Result<f64> {
    if latent_samples.cols() == 0 {
        return Err(Error::invalid("no latent samples for the Jacobian estimate"));
    }
    let mut best: f64 = 0.0;
    for j in 0..latent_samples.cols() {
        best = best.max(spectral_norm(&decoder_jacobian(model, latent_samples.col(j))?)?);
    }
    Ok(best)
}

/// `ε = c_tol · loss / lip`.
pub fn compute_eps(loss: f64, lip: f64, c_tol: f64) -> Result<f64> {
    if !(lip > 0.0) || !lip.is_finite() {
        return Err(Error::invalid(format!("Lipschitz constant must be positive, got {lip}")));
    }
    if !(c_tol > 0.0) || !(loss >= 0.0) {
        return Err(Error::invalid(format!(
            "need c_tol > 0 and loss >= 0, got c_tol = {c_tol}, loss = {loss}"
        )));
    }
    Ok(c_tol * loss / lip)
}

/// Removes every neuron of layers `1..L` whose incoming weight row is zero.
///
/// Such a neuron outputs the constant `σ(b_i)`, which is added to the next
/// bias through column `i` of the next weight matrix. Repeats until no
/// hidden layer has a zero row. Each layer keeps at least one neuron and the
/// output layer is never touched.
pub fn propagate_biases(model: &MlpAutoencoder) -> MlpAutoencoder {
    let plan = model.activations();
    let depth = model.depth();
    let mut out = model.clone();
    loop {
        let mut changed = false;
        for k in 0..depth - 1 {
            let w = &out.params.weights[k];
            let mut dead: Vec<usize> = (0..w.rows()).filter(|&i| w.row_is_zero(i)).collect();
            if dead.len() == w.rows() {
                dead.remove(0);
            }
            if dead.is_empty() {
                continue;
            }
            changed = true;
            let keep: Vec<usize> = (0..w.rows()).filter(|i| !dead.contains(i)).collect();

            let (head, tail) = out.params.biases.split_at_mut(k + 1);
            let (b, b_next) = (&head[k], &mut tail[0]);
            let w_next = &out.params.weights[k + 1];
            for &i in &dead {
                let c = plan[k].apply(b[i]);
                if c != 0.0 {
                    b_next.iter_mut().zip(w_next.col(i)).for_each(|(bn, wv)| *bn += wv * c);
                }
            }
            out.params.weights[k] = out.params.weights[k].select_rows(&keep);
            out.params.biases[k] = keep.iter().map(|&i| out.params.biases[k][i]).collect();
            out.params.weights[k + 1] = out.params.weights[k + 1].select_cols(&keep);
        }
        if !changed {
            break;
        }
    }
    out.sync_arch();
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzMethod {
    UpperBound,
    Jacobian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocReport {
    pub c_tol: f64,
    pub eps_used: f64,
    pub lipschitz_estimate: f64,
    pub lipschitz_method: LipschitzMethod,
    pub lipschitz_upper_bound: f64,
    pub lipschitz_jacobian: f64,
    pub latent_dim_before: usize,
    pub latent_dim_after: usize,
    pub params_before: usize,
    pub params_after: usize,
    pub train_loss_before: f64,
    pub train_loss_after: f64,
    pub test_loss_before: f64,
    pub test_loss_after: f64,
}

/// Number of training snapshots used for the Jacobian estimate.
pub const JACOBIAN_SAMPLES: usize = 256;

/// Evenly strided subset of at most `max` column indices.
fn strided(n: usize, max: usize) -> Vec<usize> {
    let stride = n.div_ceil(max).max(1);
    (0..n).step_by(stride).collect()
}

/// Lipschitz estimate, truncation threshold, latent SVD and bias
/// propagation, in that order.
pub fn run_postprocessing(
    model: &MlpAutoencoder,
    train: &Mat,
    test: &Mat,
    c_tol: f64,
) -> Result<(MlpAutoencoder, PostprocReport)> {
    if !(c_tol > 0.0) {
        return Err(Error::invalid(format!("c_tol must be positive, got {c_tol}")));
    }
    let train_loss_before = model::mean_loss(model, train)?;
    let test_loss_before = model::mean_loss(model, test)?;

    let upper = lipschitz_upper_bound(model)?;
    let latent = model::encode(model, &train.select_cols(&strided(train.cols(), JACOBIAN_SAMPLES)))?;
    let jac = lipschitz_jacobian_estimate(model, &latent)?;
    let (lip, method) = if jac <= upper {
        (jac, LipschitzMethod::Jacobian)
    } else {
        (upper, LipschitzMethod::UpperBound)
    };
    // A vanishing decoder ignores its input, so any truncation is harmless.
    let eps = if lip > 0.0 {
        compute_eps(train_loss_before, lip, c_tol)?
    } else {
        f64::INFINITY
    };

    let truncated = latent_truncated_svd(model, eps)?;
    let out = propagate_biases(&truncated);

    let report = PostprocReport {
        c_tol,
        eps_used: eps,
        lipschitz_estimate: lip,
        lipschitz_method: method,
        lipschitz_upper_bound: upper,
        lipschitz_jacobian: jac,
        latent_dim_before: model.effective_latent_dim(),
        latent_dim_after: out.effective_latent_dim(),
        params_before: model.count_nonzero_weights(),
        params_after: out.count_nonzero_weights(),
        train_loss_before,
        train_loss_after: model::mean_loss(&out, train)?,
        test_loss_before,
        test_loss_after: model::mean_loss(&out, test)?,
    };
    Ok((out, report))
}
