//! Batched GRU layer with backpropagation through time.
//!
//! Gate columns are packed `[update | reset | candidate]`:
//!
//! ```text
//! z  = sigmoid(x Wx_z + h Wh_z + b_z)
//! r  = sigmoid(x Wx_r + h Wh_r + b_r)
//! n  = tanh(x Wx_n + (r * h) Wh_n + b_n)
//! h' = z * h + (1 - z) * n
//! ```

use ndarray::{s, Array2, ArrayView2, Axis};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Borrowed weights of one layer.
#[derive(Clone, Copy)]
pub(crate) struct GruWeights<'a> {
    pub wx: &'a Array2<f64>,
    pub wh: &'a Array2<f64>,
    pub b: &'a Array2<f64>,
}

impl GruWeights<'_> {
    pub fn hidden(&self) -> usize {
        self.wh.nrows()
    }
}

/// Per-step activations kept for the backward pass.
pub(crate) struct StepCache {
    h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
    rh: Array2<f64>,
}

pub(crate) struct SequenceCache {
    steps: Vec<StepCache>,
}

/// Gradients of one layer, same shapes as the weights.
pub(crate) struct GruGrads {
    pub wx: Array2<f64>,
    pub wh: Array2<f64>,
    pub b: Array2<f64>,
}

/// Input projections `x Wx + b` for every step at once.
pub(crate) fn project_inputs(w: &GruWeights, inputs: &[Array2<f64>]) -> Vec<Array2<f64>> {
    inputs.iter().map(|x| x.dot(w.wx) + w.b).collect()
}

/// One recurrence step from precomputed input projections `gx`.
fn step(w: &GruWeights, gx: &Array2<f64>, h: &Array2<f64>) -> (Array2<f64>, StepCache) {
    let hd = w.hidden();
    let gh_zr = h.dot(&w.wh.slice(s![.., ..2 * hd]));
    let mut z = gx.slice(s![.., ..hd]).to_owned() + gh_zr.slice(s![.., ..hd]);
    z.mapv_inplace(sigmoid);
    let mut r = gx.slice(s![.., hd..2 * hd]).to_owned() + gh_zr.slice(s![.., hd..]);
    r.mapv_inplace(sigmoid);
    let rh = &r * h;
    let mut n = gx.slice(s![.., 2 * hd..]).to_owned() + rh.dot(&w.wh.slice(s![.., 2 * hd..]));
    n.mapv_inplace(f64::tanh);
    let mut h_next = Array2::<f64>::zeros(h.raw_dim());
    ndarray::Zip::from(&mut h_next)
        .and(&z)
        .and(h)
        .and(&n)
        .for_each(|out, &zz, &hp, &nn| *out = zz * hp + (1.0 - zz) * nn);
    let cache = StepCache { h_prev: h.clone(), z, r, n, rh };
    (h_next, cache)
}

/// Runs the layer over a sequence of input projections from a zero state.
/// Returns the hidden state after every step.
pub(crate) fn forward(w: &GruWeights, projected: &[Array2<f64>], batch: usize) -> (Vec<Array2<f64>>, SequenceCache) {
    let mut h = Array2::<f64>::zeros((batch, w.hidden()));
    let mut outputs = Vec::with_capacity(projected.len());
    let mut steps = Vec::with_capacity(projected.len());
    for gx in projected {
        let (next, cache) = step(w, gx, &h);
        steps.push(cache);
        outputs.push(next.clone());
        h = next;
    }
    (outputs, SequenceCache { steps })
}

/// Forward pass without caching, for inference.
pub(crate) fn forward_only(w: &GruWeights, projected: &[Array2<f64>], batch: usize) -> Vec<Array2<f64>> {
    let mut h = Array2::<f64>::zeros((batch, w.hidden()));
    projected
        .iter()
        .map(|gx| {
            h = step(w, gx, &h).0;
            h.clone()
        })
        .collect()
}

/// Backpropagation through time.
///
/// `d_outputs[t]` is the loss gradient w.r.t. the hidden state emitted at step
/// `t` (from layers above); `None` means zero. Returns the layer gradients and
/// the gradient w.r.t. each step's input projection `gx_t`.
pub(crate) fn backward(
    w: &GruWeights,
    cache: &SequenceCache,
    d_outputs: &[Option<Array2<f64>>],
) -> (GruGrads, Vec<Array2<f64>>) {
    let hd = w.hidden();
    let batch = cache.steps[0].h_prev.nrows();
    let wh_zr = w.wh.slice(s![.., ..2 * hd]);
    let wh_n = w.wh.slice(s![.., 2 * hd..]);
    let mut d_wh = Array2::<f64>::zeros(w.wh.raw_dim());
    let mut d_gx: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); cache.steps.len()];
    let mut carry = Array2::<f64>::zeros((batch, hd));

    for t in (0..cache.steps.len()).rev() {
        let c = &cache.steps[t];
        let mut dh_next = carry;
        if let Some(d) = &d_outputs[t] {
            dh_next += d;
        }
        let mut d_gates = Array2::<f64>::zeros((batch, 3 * hd));
        let mut dh_prev = Array2::<f64>::zeros((batch, hd));
        // Candidate and update gate.
        for b in 0..batch {
            for j in 0..hd {
                let (dh, z, n, hp) = (dh_next[[b, j]], c.z[[b, j]], c.n[[b, j]], c.h_prev[[b, j]]);
                d_gates[[b, j]] = dh * (hp - n) * z * (1.0 - z);
                d_gates[[b, 2 * hd + j]] = dh * (1.0 - z) * (1.0 - n * n);
                dh_prev[[b, j]] = dh * z;
            }
        }
        let dan = d_gates.slice(s![.., 2 * hd..]).to_owned();
        d_wh.slice_mut(s![.., 2 * hd..]).scaled_add(1.0, &c.rh.t().dot(&dan));
        let d_rh = dan.dot(&wh_n.t());
        {
            let mut dar = d_gates.slice_mut(s![.., hd..2 * hd]);
            ndarray::Zip::from(&mut dar)
                .and(&mut dh_prev)
                .and(&d_rh)
                .and(&c.r)
                .and(&c.h_prev)
                .for_each(|dar, dhp, &drh, &r, &hp| {
                    *dar = drh * hp * r * (1.0 - r);
                    *dhp += drh * r;
                });
        }
        let d_zr = d_gates.slice(s![.., ..2 * hd]);
        d_wh.slice_mut(s![.., ..2 * hd]).scaled_add(1.0, &c.h_prev.t().dot(&d_zr));
        dh_prev += &d_zr.dot(&wh_zr.t());
        d_gx[t] = d_gates;
        carry = dh_prev;
    }

    let d_b = d_gx.iter().fold(Array2::<f64>::zeros(w.b.raw_dim()), |acc, g| acc + &g.sum_axis(Axis(0)).insert_axis(Axis(0)));
    let grads = GruGrads { wx: Array2::zeros(w.wx.raw_dim()), wh: d_wh, b: d_b };
    (grads, d_gx)
}

/// Accumulates `x_t^T d_gx_t` into the input-weight gradient.
pub(crate) fn input_weight_grad(grads: &mut GruGrads, inputs: &[Array2<f64>], d_gx: &[Array2<f64>]) {
    for (x, d) in inputs.iter().zip(d_gx) {
        ndarray::linalg::general_mat_mul(1.0, &x.t(), d, 1.0, &mut grads.wx);
    }
}

/// Gradient w.r.t. each step's layer input.
pub(crate) fn input_grads(w: &GruWeights, d_gx: &[Array2<f64>]) -> Vec<Array2<f64>> {
    d_gx.iter().map(|d| d.dot(&w.wx.t())).collect()
}

pub(crate) fn all_finite(a: &ArrayView2<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}
