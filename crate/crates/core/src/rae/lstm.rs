//! LSTM layer: gate equations, batched sequence forward with cached
//! intermediates, and backpropagation through time.
//!
//! Batches are processed as matrices with one member per column, so a step
//! costs four GEMMs regardless of batch size. The same kernel serves batch
//! size one for the public single-step operation.

use nalgebra::{DMatrix, DVector};

use crate::error::{DsiError, Result};
use crate::rng::{self, DsiRng};
use crate::scalar::Scalar;

/// Weights of one LSTM layer. Every gate matrix multiplies the concatenation
/// [h_prev; x_t], so each is n_h x (n_h + n_d); biases have length n_h. One
/// weight set is shared across all timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerWeights<S: Scalar> {
    pub w_f: DMatrix<S>,
    pub w_i: DMatrix<S>,
    pub w_o: DMatrix<S>,
    pub w_x: DMatrix<S>,
    pub b_f: DVector<S>,
    pub b_i: DVector<S>,
    pub b_o: DVector<S>,
    pub b_c: DVector<S>,
}

impl<S: Scalar> LstmLayerWeights<S> {
    pub fn zeros(n_h: usize, n_d: usize) -> Self {
        Self {
            w_f: DMatrix::zeros(n_h, n_h + n_d),
            w_i: DMatrix::zeros(n_h, n_h + n_d),
            w_o: DMatrix::zeros(n_h, n_h + n_d),
            w_x: DMatrix::zeros(n_h, n_h + n_d),
            b_f: DVector::zeros(n_h),
            b_i: DVector::zeros(n_h),
            b_o: DVector::zeros(n_h),
            b_c: DVector::zeros(n_h),
        }
    }

    /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] with fan_in =
    /// n_h + n_d; biases zero except the forget bias, set to one so early
    /// training does not erase the cell state. Matrices are drawn in field
    /// order (w_f, w_i, w_o, w_x), elements column-major.
    pub fn init(n_h: usize, n_d: usize, rng: &mut DsiRng) -> Self {
        let bound = S::of_f64(1.0 / ((n_h + n_d) as f64).sqrt());
        let draw =
            |r: &mut DsiRng| DMatrix::from_iterator(n_h, n_h + n_d, (0..n_h * (n_h + n_d)).map(|_| rng::uniform::<S>(r, -bound, bound)));
        let w_f = draw(rng);
        let w_i = draw(rng);
        let w_o = draw(rng);
        let w_x = draw(rng);
        Self {
            w_f,
            w_i,
            w_o,
            w_x,
            b_f: DVector::from_element(n_h, S::one()),
            b_i: DVector::zeros(n_h),
            b_o: DVector::zeros(n_h),
            b_c: DVector::zeros(n_h),
        }
    }

    pub fn n_h(&self) -> usize {
        self.w_f.nrows()
    }

    pub fn n_d(&self) -> usize {
        self.w_f.ncols() - self.w_f.nrows()
    }

    pub fn param_count(n_h: usize, n_d: usize) -> usize {
        4 * n_h * (n_h + n_d) + 4 * n_h
    }

    pub fn validate(&self, n_h: usize, n_d: usize) -> Result<()> {
        let mats = [&self.w_f, &self.w_i, &self.w_o, &self.w_x];
        if mats.iter().any(|m| m.nrows() != n_h || m.ncols() != n_h + n_d) {
            return Err(DsiError::schema(format!(
                "lstm layer expects gate matrices {n_h}x{}, got {}x{}",
                n_h + n_d,
                self.w_f.nrows(),
                self.w_f.ncols()
            )));
        }
        let biases = [&self.b_f, &self.b_i, &self.b_o, &self.b_c];
        if biases.iter().any(|b| b.len() != n_h) {
            return Err(DsiError::schema(format!("lstm layer expects biases of length {n_h}")));
        }
        let finite = mats.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(DsiError::numerical("lstm layer weights contain non-finite entries"));
        }
        Ok(())
    }

    pub(crate) fn append_flat(&self, out: &mut Vec<S>) {
        for m in [&self.w_f, &self.w_i, &self.w_o, &self.w_x] {
            out.extend_from_slice(m.as_slice());
        }
        for b in [&self.b_f, &self.b_i, &self.b_o, &self.b_c] {
            out.extend_from_slice(b.as_slice());
        }
    }

    pub(crate) fn read_flat(n_h: usize, n_d: usize, flat: &[S], cursor: &mut usize) -> Self {
        let mut take_mat = || {
            let len = n_h * (n_h + n_d);
            let m = DMatrix::from_column_slice(n_h, n_h + n_d, &flat[*cursor..*cursor + len]);
            *cursor += len;
            m
        };
        let w_f = take_mat();
        let w_i = take_mat();
        let w_o = take_mat();
        let w_x = take_mat();
        let mut take_vec = || {
            let v = DVector::from_column_slice(&flat[*cursor..*cursor + n_h]);
            *cursor += n_h;
            v
        };
        Self { w_f, w_i, w_o, w_x, b_f: take_vec(), b_i: take_vec(), b_o: take_vec(), b_c: take_vec() }
    }
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Input sequence for one layer: either one matrix per step or a single
/// matrix repeated at every step (the decoder's first layer re-reads the
/// latent vector at each timestep).
pub(crate) enum SeqInput<'a, S: Scalar> {
    Steps(&'a [DMatrix<S>]),
    Repeated(&'a DMatrix<S>, usize),
}

impl<S: Scalar> SeqInput<'_, S> {
    pub(crate) fn n_steps(&self) -> usize {
        match self {
            SeqInput::Steps(s) => s.len(),
            SeqInput::Repeated(_, n) => *n,
        }
    }

    pub(crate) fn step(&self, t: usize) -> &DMatrix<S> {
        match self {
            SeqInput::Steps(s) => &s[t],
            SeqInput::Repeated(m, _) => m,
        }
    }
}

/// Per-step intermediates kept for backprop. `z` is [h_prev; x_t].
pub(crate) struct LstmStepCache<S: Scalar> {
    pub z: DMatrix<S>,
    pub f: DMatrix<S>,
    pub i: DMatrix<S>,
    pub o: DMatrix<S>,
    pub c_tilde: DMatrix<S>,
    pub c: DMatrix<S>,
    pub tanh_c: DMatrix<S>,
}

pub(crate) struct LstmForward<S: Scalar> {
    /// Hidden state per step, n_h x batch.
    pub h: Vec<DMatrix<S>>,
    /// Empty unless the forward pass was asked to keep caches.
    pub cache: Vec<LstmStepCache<S>>,
}

/// Gate matrices stacked into row blocks [f; i; o; x] so one GEMM per step
/// covers all four gates. Built once per sequence pass.
struct FusedGates<S: Scalar> {
    w: DMatrix<S>,
    b: DVector<S>,
    n_h: usize,
}

impl<S: Scalar> FusedGates<S> {
    fn from_layer(l: &LstmLayerWeights<S>) -> Self {
        let n_h = l.n_h();
        let n_z = l.w_f.ncols();
        let mut w = DMatrix::zeros(4 * n_h, n_z);
        w.rows_mut(0, n_h).copy_from(&l.w_f);
        w.rows_mut(n_h, n_h).copy_from(&l.w_i);
        w.rows_mut(2 * n_h, n_h).copy_from(&l.w_o);
        w.rows_mut(3 * n_h, n_h).copy_from(&l.w_x);
        let mut b = DVector::zeros(4 * n_h);
        b.rows_mut(0, n_h).copy_from(&l.b_f);
        b.rows_mut(n_h, n_h).copy_from(&l.b_i);
        b.rows_mut(2 * n_h, n_h).copy_from(&l.b_o);
        b.rows_mut(3 * n_h, n_h).copy_from(&l.b_c);
        Self { w, b, n_h }
    }
}

/// One batched LSTM step. States are n_h x batch, input is n_d x batch.
fn fused_step<S: Scalar>(
    fused: &FusedGates<S>,
    x: &DMatrix<S>,
    h_prev: &DMatrix<S>,
    c_prev: &DMatrix<S>,
) -> (DMatrix<S>, LstmStepCache<S>) {
    let n_h = fused.n_h;
    let n_d = fused.w.ncols() - n_h;
    let batch = x.ncols();
    let mut z = DMatrix::zeros(n_h + n_d, batch);
    z.rows_mut(0, n_h).copy_from(h_prev);
    z.rows_mut(n_h, n_d).copy_from(x);

    let mut a = DMatrix::zeros(4 * n_h, batch);
    a.gemm(S::one(), &fused.w, &z, S::zero());
    for mut col in a.column_iter_mut() {
        col.zip_apply(&fused.b, |v, bv| *v += bv);
    }
    let mut f = a.rows(0, n_h).into_owned();
    f.apply(|v| *v = sigmoid(*v));
    let mut i = a.rows(n_h, n_h).into_owned();
    i.apply(|v| *v = sigmoid(*v));
    let mut o = a.rows(2 * n_h, n_h).into_owned();
    o.apply(|v| *v = sigmoid(*v));
    let mut c_tilde = a.rows(3 * n_h, n_h).into_owned();
    c_tilde.apply(|v| *v = v.tanh());

    let mut c = f.component_mul(c_prev);
    c += i.component_mul(&c_tilde);
    let tanh_c = c.map(|v| v.tanh());
    let h = o.component_mul(&tanh_c);
    (h, LstmStepCache { z, f, i, o, c_tilde, c, tanh_c })
}

/// Single step against unfused weights; sequence passes prefer
/// [`lstm_forward`], which amortizes the gate stacking.
pub(crate) fn lstm_step<S: Scalar>(
    w: &LstmLayerWeights<S>,
    x: &DMatrix<S>,
    h_prev: &DMatrix<S>,
    c_prev: &DMatrix<S>,
) -> (DMatrix<S>, LstmStepCache<S>) {
    fused_step(&FusedGates::from_layer(w), x, h_prev, c_prev)
}

/// Runs the layer over a sequence from zero initial states.
pub(crate) fn lstm_forward<S: Scalar>(w: &LstmLayerWeights<S>, input: &SeqInput<S>, keep_cache: bool) -> LstmForward<S> {
    let fused = FusedGates::from_layer(w);
    let n_h = w.n_h();
    let n_t = input.n_steps();
    let batch = input.step(0).ncols();
    let mut h_prev = DMatrix::zeros(n_h, batch);
    let mut c_prev = DMatrix::zeros(n_h, batch);
    let mut h = Vec::with_capacity(n_t);
    let mut cache = Vec::with_capacity(if keep_cache { n_t } else { 0 });
    for t in 0..n_t {
        let (h_t, step) = fused_step(&fused, input.step(t), &h_prev, &c_prev);
        h_prev.copy_from(&h_t);
        c_prev.copy_from(&step.c);
        h.push(h_t);
        if keep_cache {
            cache.push(step);
        }
    }
    LstmForward { h, cache }
}

pub(crate) struct LstmGrad<S: Scalar> {
    /// Gradient with the same shapes as the layer weights.
    pub w: LstmLayerWeights<S>,
    /// Gradient with respect to the input at each step.
    pub dx: Vec<DMatrix<S>>,
}

/// Backprop through time. `d_h[t]` is the upstream gradient on h_t from
/// outside the layer; recurrent contributions are accumulated internally.
/// Initial states are fixed zeros, so their gradients are dropped.
pub(crate) fn lstm_backward<S: Scalar>(
    w: &LstmLayerWeights<S>,
    fwd: &LstmForward<S>,
    d_h: &[DMatrix<S>],
) -> LstmGrad<S> {
    let n_h = w.n_h();
    let n_d = w.n_d();
    let n_t = fwd.h.len();
    debug_assert_eq!(fwd.cache.len(), n_t, "backward requires cached forward");
    debug_assert_eq!(d_h.len(), n_t);
    let batch = fwd.h[0].ncols();
    let fused = FusedGates::from_layer(w);

    // Pre-activation gradients stacked like the fused gates: [sf; si; so; sx].
    let mut s_all = DMatrix::<S>::zeros(4 * n_h, batch);
    let mut g_all = DMatrix::<S>::zeros(4 * n_h, n_h + n_d);
    let mut b_all = DVector::<S>::zeros(4 * n_h);
    let mut dx = vec![DMatrix::zeros(0, 0); n_t];
    let mut dh_rec = DMatrix::zeros(n_h, batch);
    let mut dc_rec = DMatrix::zeros(n_h, batch);
    let mut dz = DMatrix::zeros(n_h + n_d, batch);
    let zeros_c = DMatrix::zeros(n_h, batch);
    let one = S::one();

    for t in (0..n_t).rev() {
        let s = &fwd.cache[t];
        let mut dh = d_h[t].clone();
        dh += &dh_rec;

        // Output gate path: h = o * tanh(c).
        let mut dc = s.tanh_c.clone();
        dc.apply(|v| *v = one - *v * *v);
        dc.component_mul_assign(&s.o);
        dc.component_mul_assign(&dh);
        dc += &dc_rec;

        // Cell update c = f * c_prev + i * c_tilde, then the chain through
        // each gate's activation, written straight into the stacked rows.
        let c_prev = if t > 0 { &fwd.cache[t - 1].c } else { &zeros_c };
        {
            let mut sf = s_all.rows_mut(0, n_h);
            sf.copy_from(&dc);
            sf.component_mul_assign(c_prev);
            sf.zip_apply(&s.f, |v, f| *v *= f * (one - f));
        }
        {
            let mut si = s_all.rows_mut(n_h, n_h);
            si.copy_from(&dc);
            si.component_mul_assign(&s.c_tilde);
            si.zip_apply(&s.i, |v, i| *v *= i * (one - i));
        }
        {
            let mut so = s_all.rows_mut(2 * n_h, n_h);
            so.copy_from(&dh);
            so.component_mul_assign(&s.tanh_c);
            so.zip_apply(&s.o, |v, o| *v *= o * (one - o));
        }
        {
            let mut sx = s_all.rows_mut(3 * n_h, n_h);
            sx.copy_from(&dc);
            sx.component_mul_assign(&s.i);
            sx.zip_apply(&s.c_tilde, |v, ct| *v *= one - ct * ct);
        }
        dc_rec = dc.component_mul(&s.f);

        let zt = s.z.transpose();
        g_all.gemm(one, &s_all, &zt, one);
        b_all += s_all.column_sum();

        dz.gemm_tr(one, &fused.w, &s_all, S::zero());
        dh_rec.copy_from(&dz.rows(0, n_h));
        dx[t] = dz.rows(n_h, n_d).into_owned();
    }

    let g = LstmLayerWeights {
        w_f: g_all.rows(0, n_h).into_owned(),
        w_i: g_all.rows(n_h, n_h).into_owned(),
        w_o: g_all.rows(2 * n_h, n_h).into_owned(),
        w_x: g_all.rows(3 * n_h, n_h).into_owned(),
        b_f: b_all.rows(0, n_h).into_owned(),
        b_i: b_all.rows(n_h, n_h).into_owned(),
        b_o: b_all.rows(2 * n_h, n_h).into_owned(),
        b_c: b_all.rows(3 * n_h, n_h).into_owned(),
    };
    LstmGrad { w: g, dx }
}

/// Single LSTM cell step on vectors: f,i,o = sigma(W[h_prev;x_t]+b),
/// c_tilde = tanh(W_x[h_prev;x_t]+b_c), c_t = f*c_prev + i*c_tilde,
/// h_t = o*tanh(c_t). Returns (h_t, c_t).
pub fn lstm_cell_forward<S: Scalar>(
    w: &LstmLayerWeights<S>,
    x_t: &DVector<S>,
    h_prev: &DVector<S>,
    c_prev: &DVector<S>,
) -> Result<(DVector<S>, DVector<S>)> {
    let n_h = w.n_h();
    let n_d = w.n_d();
    w.validate(n_h, n_d)?;
    if x_t.len() != n_d || h_prev.len() != n_h || c_prev.len() != n_h {
        return Err(DsiError::schema(format!(
            "lstm cell expects x of length {n_d} and states of length {n_h}, got {} / {} / {}",
            x_t.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let x = DMatrix::from_column_slice(n_d, 1, x_t.as_slice());
    let h = DMatrix::from_column_slice(n_h, 1, h_prev.as_slice());
    let c = DMatrix::from_column_slice(n_h, 1, c_prev.as_slice());
    let (h_t, step) = lstm_step(w, &x, &h, &c);
    Ok((h_t.column(0).into_owned(), step.c.column(0).into_owned()))
}
