//! Dense feed-forward autoencoder with hand-written backpropagation.
//!
//! Layers are numbered `1..=L` in the documentation; storage is zero-based,
//! so layer `ℓ` lives at index `ℓ - 1` of [`Params::weights`]. The encoder is
//! layers `1..=l_enc`, the decoder `l_enc+1..=L`. Every layer applies ReLU
//! except the latent layer `l_enc` and the output layer `L`, which are linear.

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, matmul_nt, svd, Mat, Op};
use crate::rng::{stream_rng, Stream};

/// Layer widths `(d⁰, …, d^L)` and the index of the encoder's last layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
    l_enc: usize,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, l_enc: usize) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::invalid("an autoencoder needs at least two layers"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid(format!("zero layer width in {layer_sizes:?}")));
        }
        let depth = layer_sizes.len() - 1;
        if layer_sizes[0] != layer_sizes[depth] {
            return Err(Error::invalid(format!(
                "output width {} differs from input width {}",
                layer_sizes[depth], layer_sizes[0]
            )));
        }
        if l_enc == 0 || l_enc >= depth {
            return Err(Error::invalid(format!(
                "latent layer index {l_enc} must lie in 1..{depth}"
            )));
        }
        Ok(Architecture { layer_sizes, l_enc })
    }

    /// `(101, 50, 25, 5, 25, 50, 101)`.
    pub fn diffusion() -> Self {
        Architecture::new(vec![101, 50, 25, 5, 25, 50, 101], 3).expect("valid preset")
    }

    /// `(256, 128, 50, 30, 50, 128, 256)`.
    pub fn advection() -> Self {
        Architecture::new(vec![256, 128, 50, 30, 50, 128, 256], 3).expect("valid preset")
    }

    /// `(n, 200, 100, 10, 100, 200, n)` for an `n`-dimensional field.
    pub fn reaction_diffusion(input_dim: usize) -> Self {
        Architecture::new(vec![input_dim, 200, 100, 10, 100, 200, input_dim], 3)
            .expect("valid preset")
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// One-based index of the last encoder layer.
    pub fn l_enc(&self) -> usize {
        self.l_enc
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 1]
    }

    pub fn latent_dim(&self) -> usize {
        self.layer_sizes[self.l_enc]
    }

    /// Total number of weight entries of a dense network of this shape.
    pub fn dense_weight_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1]).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }
}

/// Per-layer activations: ReLU everywhere except after `l_enc` and `L`.
pub fn activation_plan(arch: &Architecture) -> Vec<Activation> {
    plan_for(arch.depth(), arch.l_enc())
}

pub(crate) fn plan_for(depth: usize, l_enc: usize) -> Vec<Activation> {
    (1..=depth)
        .map(|l| {
            if l == l_enc || l == depth {
                Activation::Linear
            } else {
                Activation::Relu
            }
        })
        .collect()
}

/// A parameter-shaped collection of weight matrices and bias vectors.
///
/// Used for the model parameters themselves and for anything with the same
/// layout: gradients, dual variables and moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

impl Params {
    pub fn zeros_like(other: &Params) -> Params {
        Params {
            weights: other.weights.iter().map(|w| Mat::zeros(w.rows(), w.cols())).collect(),
            biases: other.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Mat::is_finite)
            && self.biases.iter().flatten().all(|x| x.is_finite())
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
            && self.weights.iter().zip(&other.weights).all(|(a, b)| a.shape() == b.shape())
            && self.biases.iter().zip(&other.biases).all(|(a, b)| a.len() == b.len())
    }

    pub(crate) fn check_same_shape(&self, other: &Params, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::invalid(format!("{what} does not match the parameter layout")));
        }
        Ok(())
    }

    /// All blocks as flat slices: weights first, then biases.
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .map(Mat::as_slice)
            .chain(self.biases.iter().map(Vec::as_slice))
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .map(Mat::as_mut_slice)
            .chain(self.biases.iter_mut().map(Vec::as_mut_slice))
    }

    /// Flattened copy of every value in block order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().flatten().copied().collect()
    }

    pub fn num_values(&self) -> usize {
        self.blocks().map(<[f64]>::len).sum()
    }

    /// Mutable access to the `idx`-th value in block order.
    pub fn value_mut(&mut self, mut idx: usize) -> &mut f64 {
        for block in self.blocks_mut() {
            if idx < block.len() {
                return &mut block[idx];
            }
            idx -= block.len();
        }
        panic!("parameter index out of range");
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Params) -> Result<()> {
        self.check_same_shape(other, "axpy operand")?;
        for (a, b) in self.blocks_mut().zip(other.blocks()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += alpha * y);
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Params) -> f64 {
        assert!(self.same_shape(other), "max_abs_diff on different layouts");
        self.blocks()
            .zip(other.blocks())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Cached intermediates of a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    /// `activations[k]` is the input of layer `k + 1`; the last entry is the
    /// network output.
    pub activations: Vec<Mat>,
    /// `pre_activations[k]` is `W x + b` of layer `k + 1`.
    pub pre_activations: Vec<Mat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpAutoencoder {
    arch: Architecture,
    pub params: Params,
}

impl MlpAutoencoder {
    /// Wraps explicit parameters, checking them against `arch`.
    pub fn from_params(arch: Architecture, params: Params) -> Result<Self> {
        let sizes = arch.layer_sizes();
        if params.weights.len() != arch.depth() || params.biases.len() != arch.depth() {
            return Err(Error::invalid(format!(
                "expected {} layers, got {} weights and {} biases",
                arch.depth(),
                params.weights.len(),
                params.biases.len()
            )));
        }
        for (k, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
            if w.shape() != (sizes[k + 1], sizes[k]) || b.len() != sizes[k + 1] {
                return Err(Error::invalid(format!(
                    "layer {}: weight {:?} / bias {} inconsistent with widths {} -> {}",
                    k + 1,
                    w.shape(),
                    b.len(),
                    sizes[k],
                    sizes[k + 1]
                )));
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(MlpAutoencoder { arch, params })
    }

    /// Model whose parameters are all zero.
    pub fn zeros(arch: Architecture) -> Self {
        let sizes = arch.layer_sizes().to_vec();
        let params = Params {
            weights: sizes.windows(2).map(|w| Mat::zeros(w[1], w[0])).collect(),
            biases: sizes[1..].iter().map(|&d| vec![0.0; d]).collect(),
        };
        MlpAutoencoder { arch, params }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn depth(&self) -> usize {
        self.arch.depth()
    }

    pub fn l_enc(&self) -> usize {
        self.arch.l_enc()
    }

    pub fn weight(&self, layer: usize) -> &Mat {
        &self.params.weights[layer - 1]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.params.biases[layer - 1]
    }

    /// Recomputes the architecture after layer widths were changed in place.
    pub(crate) fn sync_arch(&mut self) {
        let mut sizes = vec![self.params.weights[0].cols()];
        sizes.extend(self.params.weights.iter().map(Mat::rows));
        self.arch = Architecture {
            layer_sizes: sizes,
            l_enc: self.arch.l_enc,
        };
    }

    pub fn activations(&self) -> Vec<Activation> {
        activation_plan(&self.arch)
    }

    /// Number of weight entries that are not exactly zero.
    pub fn count_nonzero_weights(&self) -> usize {
        self.params
            .weights
            .iter()
            .map(|w| w.as_slice().iter().filter(|x| **x != 0.0).count())
            .sum()
    }

    /// Non-zero weights over the dense weight count of the current shapes.
    pub fn density(&self) -> f64 {
        self.count_nonzero_weights() as f64 / self.arch.dense_weight_count() as f64
    }

    /// Current width of the latent layer.
    pub fn effective_latent_dim(&self) -> usize {
        self.weight(self.l_enc()).rows()
    }
}

fn affine(w: &Mat, b: &[f64], x: &Mat) -> Result<Mat> {
    let mut z = Mat::from_fn(w.rows(), x.cols(), |i, _| b[i]);
    gemm(1.0, w, Op::N, x, Op::N, 1.0, &mut z)?;
    Ok(z)
}

fn apply_activation(act: Activation, z: &mut Mat) {
    if act == Activation::Relu {
        z.as_mut_slice().iter_mut().for_each(|x| *x = x.max(0.0));
    }
}

fn check_input(expected: usize, batch: &Mat, what: &'static str) -> Result<()> {
    if batch.rows() != expected {
        return Err(Error::DimensionMismatch {
            op: what,
            left: (expected, batch.cols()),
            right: batch.shape(),
        });
    }
    Ok(())
}

/// Applies layers `first..=last` (one-based) to `x`.
fn run_layers(model: &MlpAutoencoder, first: usize, last: usize, x: &Mat) -> Result<Mat> {
    let plan = model.activations();
    let mut a = x.clone();
    for l in first..=last {
        let mut z = affine(model.weight(l), model.bias(l), &a)?;
        apply_activation(plan[l - 1], &mut z);
        a = z;
    }
    Ok(a)
}

/// Full pass with every intermediate cached for backpropagation.
pub fn forward(model: &MlpAutoencoder, batch: &Mat) -> Result<(Mat, ForwardTape)> {
    check_input(model.arch.input_dim(), batch, "forward")?;
    let plan = model.activations();
    let mut activations = Vec::with_capacity(model.depth() + 1);
    let mut pre_activations = Vec::with_capacity(model.depth());
    activations.push(batch.clone());
    for l in 1..=model.depth() {
        let z = affine(model.weight(l), model.bias(l), &activations[l - 1])?;
        let mut a = z.clone();
        apply_activation(plan[l - 1], &mut a);
        pre_activations.push(z);
        activations.push(a);
    }
    let out = activations.last().expect("at least one layer").clone();
    Ok((
        out,
        ForwardTape {
            activations,
            pre_activations,
        },
    ))
}

/// Reconstruction without caching intermediates.
pub fn reconstruct(model: &MlpAutoencoder, batch: &Mat) -> Result<Mat> {
    check_input(model.arch.input_dim(), batch, "reconstruct")?;
    run_layers(model, 1, model.depth(), batch)
}

pub fn encode(model: &MlpAutoencoder, batch: &Mat) -> Result<Mat> {
    check_input(model.arch.input_dim(), batch, "encode")?;
    run_layers(model, 1, model.l_enc(), batch)
}

pub fn decode(model: &MlpAutoencoder, latent: &Mat) -> Result<Mat> {
    check_input(model.effective_latent_dim(), latent, "decode")?;
    run_layers(model, model.l_enc() + 1, model.depth(), latent)
}

/// Sum over columns of `‖u - φ(u)‖²`.
fn residual_sum(model: &MlpAutoencoder, batch: &Mat) -> Result<f64> {
    let out = reconstruct(model, batch)?;
    Ok(out
        .as_slice()
        .iter()
        .zip(batch.as_slice())
        .map(|(y, u)| (y - u) * (y - u))
        .sum())
}

/// Mean over snapshots of `‖u - φ(u)‖₂²`, evaluated in column chunks.
pub fn mean_loss(model: &MlpAutoencoder, data: &Mat) -> Result<f64> {
    const CHUNK: usize = 512;
    check_input(model.arch.input_dim(), data, "mean_loss")?;
    if data.cols() == 0 {
        return Err(Error::invalid("loss over an empty snapshot set"));
    }
    let mut total = 0.0;
    let mut start = 0;
    while start < data.cols() {
        let end = (start + CHUNK).min(data.cols());
        let idx: Vec<usize> = (start..end).collect();
        total += residual_sum(model, &data.select_cols(&idx))?;
        start = end;
    }
    Ok(total / data.cols() as f64)
}

/// Batch-mean reconstruction loss and its gradient with respect to every
/// weight and bias.
pub fn loss_and_grad(model: &MlpAutoencoder, batch: &Mat) -> Result<(f64, Params)> {
    if batch.cols() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let (out, tape) = forward(model, batch)?;
    let inv_b = 1.0 / batch.cols() as f64;

    let mut delta = out.sub(batch)?;
    let loss = delta.as_slice().iter().map(|r| r * r).sum::<f64>() * inv_b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("reconstruction loss".into()));
    }
    delta.scale(2.0 * inv_b);

    let plan = model.activations();
    let depth = model.depth();
    let mut grads = Params::zeros_like(&model.params);
    for k in (0..depth).rev() {
        if plan[k] == Activation::Relu {
            // ReLU'(0) = 0
            let z = &tape.pre_activations[k];
            delta
                .as_mut_slice()
                .iter_mut()
                .zip(z.as_slice())
                .for_each(|(d, &zv)| {
                    if zv <= 0.0 {
                        *d = 0.0;
                    }
                });
        }
        grads.weights[k] = matmul_nt(&delta, &tape.activations[k])?;
        let gb = &mut grads.biases[k];
        for j in 0..delta.cols() {
            gb.iter_mut().zip(delta.col(j)).for_each(|(g, d)| *g += d);
        }
        if k > 0 {
            let w = &model.params.weights[k];
            let mut next = Mat::zeros(w.cols(), delta.cols());
            gemm(1.0, w, Op::T, &delta, Op::N, 0.0, &mut next)?;
            delta = next;
        }
    }
    Ok((loss, grads))
}

/// Kaiming-style uniform weights on `(-√6/d_in, √6/d_in)` and strictly
/// positive biases on `(0, 1/d_in)`.
pub fn init_dense(arch: &Architecture, seed: u64) -> MlpAutoencoder {
    let mut rng = stream_rng(seed, Stream::Init);
    let sizes = arch.layer_sizes();
    let mut weights = Vec::with_capacity(arch.depth());
    let mut biases = Vec::with_capacity(arch.depth());
    for w in sizes.windows(2) {
        let (d_in, d_out) = (w[0], w[1]);
        let bound = 6f64.sqrt() / d_in as f64;
        let wdist = Uniform::new(-bound, bound);
        weights.push(Mat::from_fn(d_out, d_in, |_, _| wdist.sample(&mut rng)));
        let bdist = Uniform::new(0.0, 1.0 / d_in as f64);
        biases.push(
            (0..d_out)
                .map(|_| loop {
                    let b: f64 = bdist.sample(&mut rng);
                    if b > 0.0 {
                        break b;
                    }
                })
                .collect(),
        );
    }
    MlpAutoencoder {
        arch: arch.clone(),
        params: Params { weights, biases },
    }
}

/// Number of rows zeroed in a layer of `rows` rows at density `p`.
pub fn rows_to_zero(rows: usize, p: f64) -> usize {
    // guard against 50 * (1 - 0.2) landing a hair above 40
    let n = ((rows as f64) * (1.0 - p) - 1e-9).ceil().max(0.0) as usize;
    n.min(rows.saturating_sub(1))
}

/// Zeroes uniformly chosen rows of every weight matrix except the latent
/// layer, leaving a fraction `p` of rows (at least one) non-zero.
pub fn sparsify_rows(model: &mut MlpAutoencoder, p: f64, seed: u64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("initial density must lie in (0, 1], got {p}")));
    }
    let mut rng = stream_rng(seed, Stream::Sparsify);
    let l_enc = model.l_enc();
    for (k, w) in model.params.weights.iter_mut().enumerate() {
        if k + 1 == l_enc {
            continue;
        }
        let n_zero = rows_to_zero(w.rows(), p);
        for i in rand::seq::index::sample(&mut rng, w.rows(), n_zero) {
            w.zero_row(i);
        }
    }
    Ok(())
}

/// Replaces the latent weight matrix by its best rank-one approximation.
pub fn spectral_sparsify(model: &mut MlpAutoencoder) -> Result<()> {
    let k = model.l_enc() - 1;
    let f = svd(&model.params.weights[k])?;
    model.params.weights[k] = f.reconstruct(Some(1));
    Ok(())
}
