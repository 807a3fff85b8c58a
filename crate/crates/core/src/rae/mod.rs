//! Recurrent autoencoder: an LSTM encoder compresses a normalized
//! multivariate time series into a latent vector through a linear dense head
//! over all hidden states; a three-layer stacked LSTM decoder re-reads the
//! latent vector at every timestep and reconstructs the series through a
//! tanh dense head. Training minimizes mean squared reconstruction error
//! with ADAM on exact backpropagation-through-time gradients.
//!
//! All forward and backward passes run batched, one member per matrix
//! column, in fixed chunks of [`BATCH_CHUNK`] members combined in chunk
//! order, so results are reproducible regardless of thread count.

mod adam;
mod lstm;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use lstm::{lstm_cell_forward, LstmLayerWeights};
pub use train::{train_rae, RaeTrainConfig};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataSchema, DataVector, Ensemble};
use crate::error::{DsiError, Result};
use crate::rng::DsiRng;
use crate::scalar::Scalar;

use lstm::{lstm_backward, lstm_forward, LstmForward, SeqInput};

/// Members per work unit in batched passes. Fixed so that matrix dimensions,
/// and therefore floating-point results, never depend on parallelism.
pub(crate) const BATCH_CHUNK: usize = 8;

/// Architecture sizes. The encoder LSTM consumes N_QoI inputs per step; the
/// dense latent head maps the N_h * N_t concatenated hidden states to N_l;
/// the decoder stacks three LSTM layers (the first reads the repeated
/// latent vector) and a tanh dense head back to N_QoI per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaeDims {
    pub n_qoi: usize,
    pub n_t: usize,
    pub n_h: usize,
    pub n_l: usize,
}

impl RaeDims {
    pub fn validate(&self) -> Result<()> {
        if self.n_qoi == 0 || self.n_t < 2 || self.n_h == 0 || self.n_l == 0 {
            return Err(DsiError::config(format!(
                "invalid autoencoder dims: n_qoi {}, n_t {}, n_h {}, n_l {}",
                self.n_qoi, self.n_t, self.n_h, self.n_l
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let RaeDims { n_qoi, n_t, n_h, n_l } = *self;
        LstmLayerWeights::<f64>::param_count(n_h, n_qoi)
            + n_l * (n_h * n_t)
            + n_l
            + LstmLayerWeights::<f64>::param_count(n_h, n_l)
            + 2 * LstmLayerWeights::<f64>::param_count(n_h, n_h)
            + n_qoi * n_h
            + n_qoi
    }
}

/// Per-quantity min/max bounds fitted from the training ensemble, mapping
/// raw values into [-1, 1]. A quantity with zero span normalizes to 0 and
/// denormalizes back to its constant value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Normalization<S: Scalar> {
    mins: Vec<S>,
    maxs: Vec<S>,
}

impl<S: Scalar> Normalization<S> {
    pub fn fit(e: &Ensemble<S>) -> Self {
        let n_qoi = e.schema().n_qoi();
        let mut mins = vec![S::max_value().unwrap(); n_qoi];
        let mut maxs = vec![-S::max_value().unwrap(); n_qoi];
        for m in e.iter_members() {
            for q in 0..n_qoi {
                for t in 0..e.schema().n_t() {
                    let v = m[(q, t)];
                    if v < mins[q] {
                        mins[q] = v;
                    }
                    if v > maxs[q] {
                        maxs[q] = v;
                    }
                }
            }
        }
        Self { mins, maxs }
    }

    pub fn from_parts(mins: Vec<S>, maxs: Vec<S>) -> Result<Self> {
        if mins.is_empty() || mins.len() != maxs.len() {
            return Err(DsiError::config("normalization bounds empty or mismatched"));
        }
        for (lo, hi) in mins.iter().zip(&maxs) {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(DsiError::config("normalization bounds must be finite with min <= max"));
            }
        }
        Ok(Self { mins, maxs })
    }

    pub fn n_qoi(&self) -> usize {
        self.mins.len()
    }

    pub fn mins(&self) -> &[S] {
        &self.mins
    }

    pub fn maxs(&self) -> &[S] {
        &self.maxs
    }

    fn mid_half(&self, q: usize) -> (S, S) {
        let two = S::of_f64(2.0);
        ((self.mins[q] + self.maxs[q]) / two, (self.maxs[q] - self.mins[q]) / two)
    }

    /// Maps raw values (rows = quantities) into the training range.
    pub fn normalize_values(&self, values: &DMatrix<S>) -> DMatrix<S> {
        let mut out = values.clone();
        for q in 0..self.n_qoi() {
            let (mid, half) = self.mid_half(q);
            for v in out.row_mut(q).iter_mut() {
                *v = if half > S::zero() { (*v - mid) / half } else { S::zero() };
            }
        }
        out
    }

    pub fn denormalize_values(&self, values: &DMatrix<S>) -> DMatrix<S> {
        let mut out = values.clone();
        for q in 0..self.n_qoi() {
            let (mid, half) = self.mid_half(q);
            for v in out.row_mut(q).iter_mut() {
                *v = mid + half * *v;
            }
        }
        out
    }
}

/// All trainable weights. Gradients reuse this container, so "shaped like
/// the weights" is literal.
#[derive(Debug, Clone, PartialEq)]
pub struct RaeParams<S: Scalar> {
    pub encoder_lstm: LstmLayerWeights<S>,
    /// Dense latent head, n_l x (n_h * n_t), applied to the hidden states of
    /// all steps stacked in time order. Linear, no activation.
    pub encoder_w: DMatrix<S>,
    pub encoder_b: DVector<S>,
    pub decoder_lstm: [LstmLayerWeights<S>; 3],
    /// Dense output head, n_qoi x n_h, followed by tanh.
    pub decoder_w: DMatrix<S>,
    pub decoder_b: DVector<S>,
}

impl<S: Scalar> RaeParams<S> {
    pub fn zeros(dims: &RaeDims) -> Self {
        let RaeDims { n_qoi, n_t, n_h, n_l } = *dims;
        Self {
            encoder_lstm: LstmLayerWeights::zeros(n_h, n_qoi),
            encoder_w: DMatrix::zeros(n_l, n_h * n_t),
            encoder_b: DVector::zeros(n_l),
            decoder_lstm: [
                LstmLayerWeights::zeros(n_h, n_l),
                LstmLayerWeights::zeros(n_h, n_h),
                LstmLayerWeights::zeros(n_h, n_h),
            ],
            decoder_w: DMatrix::zeros(n_qoi, n_h),
            decoder_b: DVector::zeros(n_qoi),
        }
    }

    /// Seeded init: each matrix uniform in +-1/sqrt(fan_in), biases zero
    /// except LSTM forget biases (one). Draw order is fixed: encoder LSTM,
    /// encoder dense, decoder LSTMs in stack order, decoder dense.
    pub fn init(dims: &RaeDims, rng: &mut DsiRng) -> Self {
        let RaeDims { n_qoi, n_t, n_h, n_l } = *dims;
        let encoder_lstm = LstmLayerWeights::init(n_h, n_qoi, rng);
        let enc_bound = S::of_f64(1.0 / ((n_h * n_t) as f64).sqrt());
        let encoder_w = DMatrix::from_iterator(
            n_l,
            n_h * n_t,
            (0..n_l * n_h * n_t).map(|_| crate::rng::uniform::<S>(rng, -enc_bound, enc_bound)),
        );
        let decoder_lstm = [
            LstmLayerWeights::init(n_h, n_l, rng),
            LstmLayerWeights::init(n_h, n_h, rng),
            LstmLayerWeights::init(n_h, n_h, rng),
        ];
        let dec_bound = S::of_f64(1.0 / (n_h as f64).sqrt());
        let decoder_w = DMatrix::from_iterator(
            n_qoi,
            n_h,
            (0..n_qoi * n_h).map(|_| crate::rng::uniform::<S>(rng, -dec_bound, dec_bound)),
        );
        Self {
            encoder_lstm,
            encoder_w,
            encoder_b: DVector::zeros(n_l),
            decoder_lstm,
            decoder_w,
            decoder_b: DVector::zeros(n_qoi),
        }
    }

    pub fn validate(&self, dims: &RaeDims) -> Result<()> {
        dims.validate()?;
        let RaeDims { n_qoi, n_t, n_h, n_l } = *dims;
        self.encoder_lstm.validate(n_h, n_qoi)?;
        self.decoder_lstm[0].validate(n_h, n_l)?;
        self.decoder_lstm[1].validate(n_h, n_h)?;
        self.decoder_lstm[2].validate(n_h, n_h)?;
        if self.encoder_w.shape() != (n_l, n_h * n_t) || self.encoder_b.len() != n_l {
            return Err(DsiError::schema("encoder dense head shape mismatch"));
        }
        if self.decoder_w.shape() != (n_qoi, n_h) || self.decoder_b.len() != n_qoi {
            return Err(DsiError::schema("decoder dense head shape mismatch"));
        }
        let dense_finite = self.encoder_w.iter().chain(self.encoder_b.iter()).all(|v| v.is_finite())
            && self.decoder_w.iter().chain(self.decoder_b.iter()).all(|v| v.is_finite());
        if !dense_finite {
            return Err(DsiError::numerical("dense head weights contain non-finite entries"));
        }
        Ok(())
    }

    /// Flattens in documented order: encoder LSTM (w_f, w_i, w_o, w_x
    /// column-major, then b_f, b_i, b_o, b_c), encoder dense (matrix
    /// column-major, bias), the three decoder LSTMs in stack order with the
    /// same layout, decoder dense (matrix, bias).
    pub fn to_flat(&self) -> DVector<S> {
        let mut out = Vec::new();
        self.encoder_lstm.append_flat(&mut out);
        out.extend_from_slice(self.encoder_w.as_slice());
        out.extend_from_slice(self.encoder_b.as_slice());
        for layer in &self.decoder_lstm {
            layer.append_flat(&mut out);
        }
        out.extend_from_slice(self.decoder_w.as_slice());
        out.extend_from_slice(self.decoder_b.as_slice());
        DVector::from_vec(out)
    }

    pub fn from_flat(dims: &RaeDims, flat: &[S]) -> Result<Self> {
        dims.validate()?;
        if flat.len() != dims.param_count() {
            return Err(DsiError::config(format!(
                "flat parameter vector has length {}, dims require {}",
                flat.len(),
                dims.param_count()
            )));
        }
        let RaeDims { n_qoi, n_t, n_h, n_l } = *dims;
        let mut cur = 0usize;
        let encoder_lstm = LstmLayerWeights::read_flat(n_h, n_qoi, flat, &mut cur);
        let enc_len = n_l * n_h * n_t;
        let encoder_w = DMatrix::from_column_slice(n_l, n_h * n_t, &flat[cur..cur + enc_len]);
        cur += enc_len;
        let encoder_b = DVector::from_column_slice(&flat[cur..cur + n_l]);
        cur += n_l;
        let decoder_lstm = [
            LstmLayerWeights::read_flat(n_h, n_l, flat, &mut cur),
            LstmLayerWeights::read_flat(n_h, n_h, flat, &mut cur),
            LstmLayerWeights::read_flat(n_h, n_h, flat, &mut cur),
        ];
        let dec_len = n_qoi * n_h;
        let decoder_w = DMatrix::from_column_slice(n_qoi, n_h, &flat[cur..cur + dec_len]);
        cur += dec_len;
        let decoder_b = DVector::from_column_slice(&flat[cur..cur + n_qoi]);
        cur += n_qoi;
        debug_assert_eq!(cur, flat.len());
        Ok(Self { encoder_lstm, encoder_w, encoder_b, decoder_lstm, decoder_w, decoder_b })
    }
}

/// Trained autoencoder: architecture, weights, the schema it was fitted on,
/// and the per-quantity normalization bounds of the training ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct RaeWeights<S: Scalar> {
    schema: DataSchema,
    dims: RaeDims,
    params: RaeParams<S>,
    norm: Normalization<S>,
}

impl<S: Scalar> RaeWeights<S> {
    pub fn from_parts(schema: DataSchema, dims: RaeDims, params: RaeParams<S>, norm: Normalization<S>) -> Result<Self> {
        if schema.n_qoi() != dims.n_qoi || schema.n_t() != dims.n_t {
            return Err(DsiError::schema(format!(
                "schema is {} quantities x {} times but dims declare {} x {}",
                schema.n_qoi(),
                schema.n_t(),
                dims.n_qoi,
                dims.n_t
            )));
        }
        if norm.n_qoi() != dims.n_qoi {
            return Err(DsiError::schema("normalization bounds do not match quantity count"));
        }
        params.validate(&dims)?;
        Ok(Self { schema, dims, params, norm })
    }

    pub fn schema(&self) -> &DataSchema {
        &self.schema
    }

    pub fn dims(&self) -> &RaeDims {
        &self.dims
    }

    pub fn params(&self) -> &RaeParams<S> {
        &self.params
    }

    pub fn normalization(&self) -> &Normalization<S> {
        &self.norm
    }

    pub fn param_count(&self) -> usize {
        self.dims.param_count()
    }

    pub fn latent_dim(&self) -> usize {
        self.dims.n_l
    }
}

/// Cached state of one batched pass, member per column.
pub(crate) struct RaeForward<S: Scalar> {
    enc: LstmForward<S>,
    hflat: DMatrix<S>,
    xi: DMatrix<S>,
    dec1: LstmForward<S>,
    dec2: LstmForward<S>,
    dec3: LstmForward<S>,
    /// Reconstructed normalized output per step, n_qoi x batch.
    pub y: Vec<DMatrix<S>>,
}

/// Runs the full autoencoder on a batch given as per-step input matrices
/// (n_qoi x batch, normalized).
pub(crate) fn forward_batch<S: Scalar>(
    params: &RaeParams<S>,
    dims: &RaeDims,
    x: &[DMatrix<S>],
    keep_cache: bool,
) -> RaeForward<S> {
    let RaeDims { n_qoi: _, n_t, n_h, .. } = *dims;
    debug_assert_eq!(x.len(), n_t);
    let batch = x[0].ncols();

    let enc = lstm_forward(&params.encoder_lstm, &SeqInput::Steps(x), keep_cache);
    let mut hflat = DMatrix::zeros(n_h * n_t, batch);
    for t in 0..n_t {
        hflat.rows_mut(t * n_h, n_h).copy_from(&enc.h[t]);
    }
    let mut xi = DMatrix::zeros(params.encoder_w.nrows(), batch);
    xi.gemm(S::one(), &params.encoder_w, &hflat, S::zero());
    for mut col in xi.column_iter_mut() {
        col.zip_apply(&params.encoder_b, |v, b| *v += b);
    }

    let dec1 = lstm_forward(&params.decoder_lstm[0], &SeqInput::Repeated(&xi, n_t), keep_cache);
    let dec2 = lstm_forward(&params.decoder_lstm[1], &SeqInput::Steps(&dec1.h), keep_cache);
    let dec3 = lstm_forward(&params.decoder_lstm[2], &SeqInput::Steps(&dec2.h), keep_cache);

    let y: Vec<DMatrix<S>> = dec3
        .h
        .iter()
        .map(|h_t| {
            let mut out = DMatrix::zeros(params.decoder_w.nrows(), batch);
            out.gemm(S::one(), &params.decoder_w, h_t, S::zero());
            for mut col in out.column_iter_mut() {
                col.zip_apply(&params.decoder_b, |v, b| *v += b);
            }
            out.apply(|v| *v = v.tanh());
            out
        })
        .collect();

    RaeForward { enc, hflat, xi, dec1, dec2, dec3, y }
}

/// Sum over the batch of squared reconstruction errors (no 1/N factor).
fn residual_loss_sum<S: Scalar>(y: &[DMatrix<S>], x: &[DMatrix<S>]) -> S {
    let mut acc = S::zero();
    for (y_t, x_t) in y.iter().zip(x) {
        let mut d = y_t.clone();
        d -= x_t;
        acc += d.iter().map(|v| *v * *v).sum::<S>();
    }
    acc
}

/// Gradient of the summed squared error with respect to every parameter,
/// reverse accumulation through the dense heads, decoder stack (including
/// the summed gradient into the latent vector from every repeated step),
/// encoder dense, and encoder LSTM.
pub(crate) fn backward_batch<S: Scalar>(
    params: &RaeParams<S>,
    dims: &RaeDims,
    x: &[DMatrix<S>],
    fwd: &RaeForward<S>,
) -> RaeParams<S> {
    let RaeDims { n_t, n_h, .. } = *dims;
    let batch = x[0].ncols();
    let one = S::one();
    let two = S::of_f64(2.0);
    let mut g = RaeParams::zeros(dims);

    // Decoder dense head: y = tanh(W h + b), dL/dy = 2 (y - x).
    let mut d_h3 = Vec::with_capacity(n_t);
    for t in 0..n_t {
        let mut dpre = fwd.y[t].clone();
        dpre -= &x[t];
        dpre.zip_apply(&fwd.y[t], |v, y| *v = two * *v * (one - y * y));
        let h3t = fwd.dec3.h[t].transpose();
        g.decoder_w.gemm(one, &dpre, &h3t, one);
        g.decoder_b += dpre.column_sum();
        let mut dh = DMatrix::zeros(n_h, batch);
        dh.gemm_tr(one, &params.decoder_w, &dpre, S::zero());
        d_h3.push(dh);
    }

    // Decoder LSTM stack, top down.
    let g3 = lstm_backward(&params.decoder_lstm[2], &fwd.dec3, &d_h3);
    let g2 = lstm_backward(&params.decoder_lstm[1], &fwd.dec2, &g3.dx);
    let g1 = lstm_backward(&params.decoder_lstm[0], &fwd.dec1, &g2.dx);
    g.decoder_lstm = [g1.w, g2.w, g3.w];

    // The latent vector feeds every decoder step.
    let mut d_xi = DMatrix::zeros(fwd.xi.nrows(), batch);
    for dx_t in &g1.dx {
        d_xi += dx_t;
    }

    // Encoder dense head (linear).
    let hflat_t = fwd.hflat.transpose();
    g.encoder_w.gemm(one, &d_xi, &hflat_t, S::zero());
    g.encoder_b += d_xi.column_sum();
    let mut d_hflat = DMatrix::zeros(n_h * n_t, batch);
    d_hflat.gemm_tr(one, &params.encoder_w, &d_xi, S::zero());
    let d_henc: Vec<DMatrix<S>> = (0..n_t).map(|t| d_hflat.rows(t * n_h, n_h).into_owned()).collect();

    let ge = lstm_backward(&params.encoder_lstm, &fwd.enc, &d_henc);
    g.encoder_lstm = ge.w;
    g
}

/// Gathers per-step batch matrices from normalized member matrices.
pub(crate) fn batch_steps<S: Scalar>(members_norm: &[DMatrix<S>], idx: &[usize]) -> Vec<DMatrix<S>> {
    let n_qoi = members_norm[0].nrows();
    let n_t = members_norm[0].ncols();
    (0..n_t)
        .map(|t| DMatrix::from_fn(n_qoi, idx.len(), |q, b| members_norm[idx[b]][(q, t)]))
        .collect()
}

/// Loss sum, and optionally the flat gradient sum, over the given members,
/// evaluated in fixed chunks of [`BATCH_CHUNK`] combined in chunk order.
pub(crate) fn loss_and_grad_sums<S: Scalar>(
    params: &RaeParams<S>,
    dims: &RaeDims,
    members_norm: &[DMatrix<S>],
    idx: &[usize],
    want_grad: bool,
) -> (S, Option<DVector<S>>) {
    let chunks: Vec<&[usize]> = idx.chunks(BATCH_CHUNK).collect();
    let parts: Vec<(S, Option<DVector<S>>)> = chunks
        .par_iter()
        .map(|chunk| {
            let x = batch_steps(members_norm, chunk);
            let fwd = forward_batch(params, dims, &x, want_grad);
            let loss = residual_loss_sum(&fwd.y, &x);
            let grad = want_grad.then(|| backward_batch(params, dims, &x, &fwd).to_flat());
            (loss, grad)
        })
        .collect();

    let mut loss = S::zero();
    let mut grad = want_grad.then(|| DVector::zeros(dims.param_count()));
    for (l, g) in parts {
        loss += l;
        if let (Some(acc), Some(g)) = (&mut grad, g) {
            *acc += g;
        }
    }
    (loss, grad)
}

fn check_schema<S: Scalar>(w: &RaeWeights<S>, schema: &DataSchema) -> Result<()> {
    if schema != &w.schema {
        return Err(DsiError::schema("data schema does not match the trained autoencoder"));
    }
    Ok(())
}

/// Encoder on an already normalized member matrix (n_qoi x n_t): LSTM over
/// the columns, all hidden states concatenated in time order, linear dense
/// head to the latent vector.
pub fn encoder_forward<S: Scalar>(w: &RaeWeights<S>, d_norm: &DMatrix<S>) -> Result<DVector<S>> {
    if d_norm.shape() != (w.dims.n_qoi, w.dims.n_t) {
        return Err(DsiError::schema(format!(
            "encoder expects a {} x {} matrix, got {} x {}",
            w.dims.n_qoi,
            w.dims.n_t,
            d_norm.nrows(),
            d_norm.ncols()
        )));
    }
    let x: Vec<DMatrix<S>> = (0..w.dims.n_t).map(|t| d_norm.column(t).clone_owned().reshape_generic(nalgebra::Dyn(w.dims.n_qoi), nalgebra::Dyn(1))).collect();
    let fwd = forward_batch(&w.params, &w.dims, &x, false);
    Ok(fwd.xi.column(0).into_owned())
}

/// Decoder on a latent vector: repeated-input LSTM stack plus tanh dense
/// head; returns the normalized reconstruction (entries strictly inside
/// (-1, 1)).
pub fn decoder_forward<S: Scalar>(w: &RaeWeights<S>, xi: &DVector<S>) -> Result<DMatrix<S>> {
    if xi.len() != w.dims.n_l {
        return Err(DsiError::schema(format!("latent vector has length {}, expected {}", xi.len(), w.dims.n_l)));
    }
    let ximat = DMatrix::from_column_slice(w.dims.n_l, 1, xi.as_slice());
    let y = decode_norm_batch(&w.params, &w.dims, &ximat);
    let mut out = DMatrix::zeros(w.dims.n_qoi, w.dims.n_t);
    for t in 0..w.dims.n_t {
        out.column_mut(t).copy_from(&y[t].column(0));
    }
    Ok(out)
}

fn decode_norm_batch<S: Scalar>(params: &RaeParams<S>, dims: &RaeDims, xi: &DMatrix<S>) -> Vec<DMatrix<S>> {
    let dec1 = lstm_forward(&params.decoder_lstm[0], &SeqInput::Repeated(xi, dims.n_t), false);
    let dec2 = lstm_forward(&params.decoder_lstm[1], &SeqInput::Steps(&dec1.h), false);
    let dec3 = lstm_forward(&params.decoder_lstm[2], &SeqInput::Steps(&dec2.h), false);
    dec3.h
        .iter()
        .map(|h_t| {
            let mut out = DMatrix::zeros(params.decoder_w.nrows(), xi.ncols());
            out.gemm(S::one(), &params.decoder_w, h_t, S::zero());
            for mut col in out.column_iter_mut() {
                col.zip_apply(&params.decoder_b, |v, b| *v += b);
            }
            out.apply(|v| *v = v.tanh());
            out
        })
        .collect()
}

/// Normalize, then encode.
pub fn rae_encode<S: Scalar>(w: &RaeWeights<S>, d: &DataVector<S>) -> Result<DVector<S>> {
    check_schema(w, d.schema())?;
    encoder_forward(w, &w.norm.normalize_values(d.values()))
}

/// Decode, then denormalize. Every output lies within the per-quantity
/// [min, max] of the training ensemble.
pub fn rae_decode<S: Scalar>(w: &RaeWeights<S>, xi: &DVector<S>) -> Result<DataVector<S>> {
    let y = decoder_forward(w, xi)?;
    DataVector::new(w.schema.clone(), w.norm.denormalize_values(&y))
}

/// Encodes every member; column i is the latent vector of member i.
pub fn rae_encode_ensemble<S: Scalar>(w: &RaeWeights<S>, e: &Ensemble<S>) -> Result<DMatrix<S>> {
    check_schema(w, e.schema())?;
    let members_norm: Vec<DMatrix<S>> = e.iter_members().map(|m| w.norm.normalize_values(m)).collect();
    let idx: Vec<usize> = (0..e.n_members()).collect();
    let chunks: Vec<&[usize]> = idx.chunks(BATCH_CHUNK).collect();
    let parts: Vec<DMatrix<S>> = chunks
        .par_iter()
        .map(|chunk| {
            let x = batch_steps(&members_norm, chunk);
            forward_batch(&w.params, &w.dims, &x, false).xi
        })
        .collect();
    let mut out = DMatrix::zeros(w.dims.n_l, e.n_members());
    let mut col = 0;
    for part in parts {
        out.columns_mut(col, part.ncols()).copy_from(&part);
        col += part.ncols();
    }
    Ok(out)
}

/// Decodes one latent vector per column into an ensemble.
pub fn rae_decode_matrix<S: Scalar>(w: &RaeWeights<S>, latents: &DMatrix<S>) -> Result<Ensemble<S>> {
    if latents.nrows() != w.dims.n_l {
        return Err(DsiError::schema(format!(
            "latent matrix has {} rows, expected {}",
            latents.nrows(),
            w.dims.n_l
        )));
    }
    let n = latents.ncols();
    let cols: Vec<usize> = (0..n).collect();
    let chunks: Vec<&[usize]> = cols.chunks(BATCH_CHUNK).collect();
    let parts: Vec<Vec<DMatrix<S>>> = chunks
        .par_iter()
        .map(|chunk| {
            let xi = DMatrix::from_fn(w.dims.n_l, chunk.len(), |r, b| latents[(r, chunk[b])]);
            let y = decode_norm_batch(&w.params, &w.dims, &xi);
            (0..chunk.len())
                .map(|b| {
                    let mut m = DMatrix::zeros(w.dims.n_qoi, w.dims.n_t);
                    for t in 0..w.dims.n_t {
                        m.column_mut(t).copy_from(&y[t].column(b));
                    }
                    w.norm.denormalize_values(&m)
                })
                .collect()
        })
        .collect();
    let members: Vec<DMatrix<S>> = parts.into_iter().flatten().collect();
    Ensemble::new(w.schema.clone(), members)
}

/// Mean over members of the squared L2 reconstruction error in normalized
/// space: members are normalized with the stored bounds, passed through the
/// autoencoder, and compared to themselves.
pub fn rae_loss<S: Scalar>(w: &RaeWeights<S>, e: &Ensemble<S>) -> Result<S> {
    check_schema(w, e.schema())?;
    let members_norm: Vec<DMatrix<S>> = e.iter_members().map(|m| w.norm.normalize_values(m)).collect();
    let idx: Vec<usize> = (0..e.n_members()).collect();
    let (sum, _) = loss_and_grad_sums(&w.params, &w.dims, &members_norm, &idx, false);
    Ok(sum / S::of_f64(e.n_members() as f64))
}

/// Exact gradient of [`rae_loss`] with respect to every parameter.
pub fn rae_backprop<S: Scalar>(w: &RaeWeights<S>, e: &Ensemble<S>) -> Result<RaeParams<S>> {
    check_schema(w, e.schema())?;
    let members_norm: Vec<DMatrix<S>> = e.iter_members().map(|m| w.norm.normalize_values(m)).collect();
    let idx: Vec<usize> = (0..e.n_members()).collect();
    let (_, grad) = loss_and_grad_sums(&w.params, &w.dims, &members_norm, &idx, true);
    let mut flat = grad.expect("gradient requested");
    flat /= S::of_f64(e.n_members() as f64);
    RaeParams::from_flat(&w.dims, flat.as_slice())
}
