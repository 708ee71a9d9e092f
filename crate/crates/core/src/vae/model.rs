//! Encoder, decoder, losses and their analytic gradients.
//!
//! The encoder runs a stack of GRUs over the 64 roll rows and maps the last
//! top-layer state to a diagonal Gaussian. The decoder feeds the latent code
//! at every step into its own GRU stack; each of the six outputs reads the top
//! layer through a tanh dense layer followed by a linear layer (softmax for the
//! pitch heads, logistic for the onset heads, identity for the tension heads).

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::gru::{self, sigmoid, GruWeights, SequenceCache};
use super::params::{DenseIdx, GruIdx, Head, ModelParams};
use crate::corpus::dataset::Fragment;
use crate::corpus::roll::{PianoRoll, BASS_OFFSET, BASS_ONSET, FEATURES, MELODY_ONSET, STEPS};
use crate::error::{Error, Result};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;
/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-10;

/// Diagonal Gaussian posterior of one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

/// Decoder outputs for one example, one row per step.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderOutput {
    /// 64 x 74, rows sum to 1.
    pub melody_pitch: Array2<f64>,
    pub melody_onset: Vec<f64>,
    /// 64 x 13, rows sum to 1.
    pub bass_pitch: Array2<f64>,
    pub bass_onset: Vec<f64>,
    pub tensile: Vec<f64>,
    pub diameter: Vec<f64>,
}

/// One training example: a roll and its two target tension curves.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub roll: &'a PianoRoll,
    pub tensile: &'a [f64],
    pub diameter: &'a [f64],
}

impl<'a> From<&'a Fragment> for Example<'a> {
    fn from(f: &'a Fragment) -> Self {
        Example { roll: &f.roll, tensile: &f.tensile.values, diameter: &f.diameter.values }
    }
}

/// The seven loss components, in the order of [`TermWeights`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    MelodyPitch,
    MelodyRhythm,
    BassPitch,
    BassRhythm,
    Tensile,
    Diameter,
    Kl,
}

impl Term {
    pub const ALL: [Term; 7] = [
        Term::MelodyPitch,
        Term::MelodyRhythm,
        Term::BassPitch,
        Term::BassRhythm,
        Term::Tensile,
        Term::Diameter,
        Term::Kl,
    ];
}

/// Multipliers applied to each loss component when forming the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermWeights(pub [f64; 7]);

impl TermWeights {
    /// Reconstruction terms at weight 1, enabled tension terms at 1, KL at `beta`.
    pub fn standard(beta: f64, predict_tensile: bool, predict_diameter: bool) -> Self {
        let on = |b: bool| if b { 1.0 } else { 0.0 };
        TermWeights([1.0, 1.0, 1.0, 1.0, on(predict_tensile), on(predict_diameter), beta])
    }

    pub fn only(term: Term) -> Self {
        let mut w = [0.0; 7];
        w[term as usize] = 1.0;
        TermWeights(w)
    }

    pub fn get(&self, term: Term) -> f64 {
        self.0[term as usize]
    }
}

/// Per-component losses, averaged over the batch.
///
/// Reconstruction terms are mean per-step cross-entropies, tension terms mean
/// squared errors over the 64 steps, `kl` the unweighted KL divergence; `total`
/// is the weighted sum that was optimized. A tension term is `None` when its
/// head is not trained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub melody_pitch: f64,
    pub melody_rhythm: f64,
    pub bass_pitch: f64,
    pub bass_rhythm: f64,
    pub tensile: Option<f64>,
    pub diameter: Option<f64>,
    pub kl: f64,
    pub beta: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn from_terms(raw: [f64; 7], w: &TermWeights) -> Self {
        let total = raw.iter().zip(w.0).map(|(r, w)| r * w).sum();
        let opt = |t: Term| (w.get(t) != 0.0).then_some(raw[t as usize]);
        LossBreakdown {
            melody_pitch: raw[0],
            melody_rhythm: raw[1],
            bass_pitch: raw[2],
            bass_rhythm: raw[3],
            tensile: opt(Term::Tensile),
            diameter: opt(Term::Diameter),
            kl: raw[6],
            beta: w.get(Term::Kl),
            total,
        }
    }

    /// Mean of several breakdowns, weighting each by `counts`.
    pub fn weighted_mean(items: &[(LossBreakdown, usize)]) -> Option<LossBreakdown> {
        let n: usize = items.iter().map(|(_, c)| c).sum();
        if n == 0 {
            return None;
        }
        let avg = |f: &dyn Fn(&LossBreakdown) -> f64| items.iter().map(|(b, c)| f(b) * *c as f64).sum::<f64>() / n as f64;
        let avg_opt = |f: &dyn Fn(&LossBreakdown) -> Option<f64>| {
            items.iter().map(|(b, _)| f(b)).collect::<Option<Vec<_>>>().map(|_| avg(&|b| f(b).unwrap_or(0.0)))
        };
        Some(LossBreakdown {
            melody_pitch: avg(&|b| b.melody_pitch),
            melody_rhythm: avg(&|b| b.melody_rhythm),
            bass_pitch: avg(&|b| b.bass_pitch),
            bass_rhythm: avg(&|b| b.bass_rhythm),
            tensile: avg_opt(&|b| b.tensile),
            diameter: avg_opt(&|b| b.diameter),
            kl: avg(&|b| b.kl),
            beta: avg(&|b| b.beta),
            total: avg(&|b| b.total),
        })
    }
}

/// Gradients with the same layout as [`ModelParams::tensors`].
pub type Grads = Vec<Array2<f64>>;

fn gru_weights<'a>(p: &'a ModelParams, idx: &GruIdx) -> GruWeights<'a> {
    GruWeights { wx: &p.tensors[idx.wx], wh: &p.tensors[idx.wh], b: &p.tensors[idx.b] }
}

fn dense(p: &ModelParams, idx: &DenseIdx, x: &ArrayView2<f64>) -> Array2<f64> {
    x.dot(&p.tensors[idx.w]) + &p.tensors[idx.b]
}

fn check_finite(layer: &str, a: &ArrayView2<f64>) -> Result<()> {
    if gru::all_finite(a) {
        Ok(())
    } else {
        Err(Error::NumericFailure { layer: layer.into(), detail: "non-finite activation".into() })
    }
}

/// Roll rows as `STEPS` matrices of shape (batch, 89).
fn roll_inputs(rolls: &[&PianoRoll]) -> Vec<Array2<f64>> {
    (0..STEPS)
        .map(|t| Array2::from_shape_fn((rolls.len(), FEATURES), |(b, f)| rolls[b].get(t, f) as f64))
        .collect()
}

struct EncoderPass {
    /// Input sequence of each layer.
    layer_inputs: Vec<Vec<Array2<f64>>>,
    caches: Vec<SequenceCache>,
    last: Array2<f64>,
    mu: Array2<f64>,
    logvar_raw: Array2<f64>,
    logvar: Array2<f64>,
}

fn encode_pass(p: &ModelParams, rolls: &[&PianoRoll], keep_cache: bool) -> Result<EncoderPass> {
    let batch = rolls.len();
    let mut seq = roll_inputs(rolls);
    let mut layer_inputs = Vec::new();
    let mut caches = Vec::new();
    for (l, idx) in p.layout.encoder.iter().enumerate() {
        let w = gru_weights(p, idx);
        let projected = gru::project_inputs(&w, &seq);
        let out = if keep_cache {
            let (out, cache) = gru::forward(&w, &projected, batch);
            caches.push(cache);
            out
        } else {
            gru::forward_only(&w, &projected, batch)
        };
        check_finite(&format!("encoder.gru{l}"), &out[STEPS - 1].view())?;
        layer_inputs.push(std::mem::replace(&mut seq, out));
    }
    let last = seq.pop().expect("64 steps");
    let mu = dense(p, &p.layout.mu, &last.view());
    let logvar_raw = dense(p, &p.layout.logvar, &last.view());
    check_finite("encoder.mu", &mu.view())?;
    check_finite("encoder.logvar", &logvar_raw.view())?;
    let logvar = logvar_raw.mapv(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
    Ok(EncoderPass { layer_inputs, caches, last, mu, logvar_raw, logvar })
}

struct DecoderPass {
    z: Array2<f64>,
    /// Input sequence of each layer above the first.
    layer_inputs: Vec<Vec<Array2<f64>>>,
    caches: Vec<SequenceCache>,
    /// Top-layer states stacked step-major: row `t * batch + b`.
    top: Array2<f64>,
    /// Per head: tanh activations of the first dense layer and raw outputs.
    hidden: Vec<Array2<f64>>,
    logits: Vec<Array2<f64>>,
}

fn decode_pass(p: &ModelParams, z: &Array2<f64>, keep_cache: bool) -> Result<DecoderPass> {
    let batch = z.nrows();
    let hd = p.config.hidden;
    let mut layer_inputs = Vec::new();
    let mut caches = Vec::new();
    let mut seq: Vec<Array2<f64>> = Vec::new();
    for (l, idx) in p.layout.decoder.iter().enumerate() {
        let w = gru_weights(p, idx);
        let projected = if l == 0 {
            let once = z.dot(w.wx) + w.b;
            vec![once; STEPS]
        } else {
            gru::project_inputs(&w, &seq)
        };
        let out = if keep_cache {
            let (out, cache) = gru::forward(&w, &projected, batch);
            caches.push(cache);
            out
        } else {
            gru::forward_only(&w, &projected, batch)
        };
        check_finite(&format!("decoder.gru{l}"), &out[STEPS - 1].view())?;
        if l > 0 {
            layer_inputs.push(std::mem::replace(&mut seq, out));
        } else {
            seq = out;
        }
    }
    let mut top = Array2::<f64>::zeros((STEPS * batch, hd));
    for (t, h) in seq.iter().enumerate() {
        top.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(h);
    }
    let mut hidden = Vec::with_capacity(6);
    let mut logits = Vec::with_capacity(6);
    for (head, (d0, d1)) in Head::ALL.iter().zip(&p.layout.heads) {
        let a = dense(p, d0, &top.view()).mapv(f64::tanh);
        let o = dense(p, d1, &a.view());
        check_finite(&format!("decoder.{}", head.name()), &o.view())?;
        hidden.push(a);
        logits.push(o);
    }
    Ok(DecoderPass { z: z.clone(), layer_inputs, caches, top, hidden, logits })
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Activated head outputs for a stacked (step-major) batch.
fn activate(logits: &[Array2<f64>]) -> Vec<Array2<f64>> {
    Head::ALL
        .iter()
        .zip(logits)
        .map(|(head, l)| match head {
            Head::MelodyPitch | Head::BassPitch => softmax_rows(l),
            Head::MelodyOnset | Head::BassOnset => l.mapv(sigmoid),
            Head::Tensile | Head::Diameter => l.clone(),
        })
        .collect()
}

fn split_outputs(acts: &[Array2<f64>], batch: usize) -> Vec<DecoderOutput> {
    let rows = |a: &Array2<f64>, b: usize| -> Array2<f64> {
        let w = a.ncols();
        Array2::from_shape_fn((STEPS, w), |(t, c)| a[[t * batch + b, c]])
    };
    let col = |a: &Array2<f64>, b: usize| -> Vec<f64> { (0..STEPS).map(|t| a[[t * batch + b, 0]]).collect() };
    (0..batch)
        .map(|b| DecoderOutput {
            melody_pitch: rows(&acts[0], b),
            melody_onset: col(&acts[1], b),
            bass_pitch: rows(&acts[2], b),
            bass_onset: col(&acts[3], b),
            tensile: col(&acts[4], b),
            diameter: col(&acts[5], b),
        })
        .collect()
}

/// Posterior of a single roll.
pub fn encode(roll: &PianoRoll, params: &ModelParams) -> Result<Posterior> {
    Ok(encode_batch(&[roll], params)?.remove(0))
}

pub fn encode_batch(rolls: &[&PianoRoll], params: &ModelParams) -> Result<Vec<Posterior>> {
    if rolls.is_empty() {
        return Ok(Vec::new());
    }
    let pass = encode_pass(params, rolls, false)?;
    Ok((0..rolls.len())
        .map(|b| Posterior { mu: pass.mu.row(b).to_vec(), logvar: pass.logvar.row(b).to_vec() })
        .collect())
}

/// `z = mu + exp(logvar / 2) * noise`.
pub fn reparameterize(p: &Posterior, noise: &[f64]) -> Vec<f64> {
    p.mu.iter().zip(&p.logvar).zip(noise).map(|((m, lv), e)| m + (0.5 * lv).exp() * e).collect()
}

pub fn decode(z: &[f64], params: &ModelParams) -> Result<DecoderOutput> {
    Ok(decode_batch(&[z.to_vec()], params)?.remove(0))
}

pub fn decode_batch(zs: &[Vec<f64>], params: &ModelParams) -> Result<Vec<DecoderOutput>> {
    if zs.is_empty() {
        return Ok(Vec::new());
    }
    let dim = params.config.latent_dim;
    if let Some(z) = zs.iter().find(|z| z.len() != dim) {
        return Err(Error::ShapeMismatch(format!("latent code has {} dims, model expects {dim}", z.len())));
    }
    let z = Array2::from_shape_fn((zs.len(), dim), |(b, i)| zs[b][i]);
    let pass = decode_pass(params, &z, false)?;
    Ok(split_outputs(&activate(&pass.logits), zs.len()))
}

/// `0.5 * sum(exp(logvar) + mu^2 - 1 - logvar)`.
pub fn kl_divergence(p: &Posterior) -> f64 {
    0.5 * p.mu.iter().zip(&p.logvar).map(|(m, lv)| lv.exp() + m * m - 1.0 - lv).sum::<f64>()
}

/// Targets of a batch, step-major like the stacked decoder outputs.
struct Targets {
    melody: Vec<usize>,
    melody_onset: Vec<f64>,
    bass: Vec<usize>,
    bass_onset: Vec<f64>,
    tensile: Vec<f64>,
    diameter: Vec<f64>,
}

fn targets(examples: &[Example]) -> Result<Targets> {
    let batch = examples.len();
    let n = STEPS * batch;
    let mut t = Targets {
        melody: vec![0; n],
        melody_onset: vec![0.0; n],
        bass: vec![0; n],
        bass_onset: vec![0.0; n],
        tensile: vec![0.0; n],
        diameter: vec![0.0; n],
    };
    for (b, ex) in examples.iter().enumerate() {
        if ex.tensile.len() != STEPS || ex.diameter.len() != STEPS {
            return Err(Error::ShapeMismatch("tension targets must have 64 values".into()));
        }
        for step in 0..STEPS {
            let i = step * batch + b;
            t.melody[i] = ex.roll.melody_column(step);
            t.melody_onset[i] = ex.roll.get(step, MELODY_ONSET) as f64;
            t.bass[i] = ex.roll.bass_column(step);
            t.bass_onset[i] = ex.roll.get(step, BASS_ONSET) as f64;
            t.tensile[i] = ex.tensile[step];
            t.diameter[i] = ex.diameter[step];
        }
    }
    debug_assert!(BASS_OFFSET < BASS_ONSET);
    Ok(t)
}

/// Categorical cross-entropy (mean over rows) and its gradient w.r.t. logits.
fn categorical(probs: &Array2<f64>, target: &[usize], scale: f64) -> (f64, Array2<f64>) {
    let n = probs.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
        let p = probs[[i, target[i]]];
        if p < PROB_FLOOR {
            loss -= PROB_FLOOR.ln();
            row.fill(0.0);
        } else {
            loss -= p.ln();
            row[target[i]] -= 1.0;
            row.mapv_inplace(|v| v * scale / n);
        }
    }
    (loss / n, grad)
}

/// Binary cross-entropy of logistic outputs and its gradient w.r.t. logits.
fn binary(probs: &Array2<f64>, target: &[f64], scale: f64) -> (f64, Array2<f64>) {
    let n = probs.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(probs.raw_dim());
    for (i, &y) in target.iter().enumerate() {
        let p = probs[[i, 0]];
        let (on, off) = (p.max(PROB_FLOOR), (1.0 - p).max(PROB_FLOOR));
        loss -= y * on.ln() + (1.0 - y) * off.ln();
        let clamped = (y > 0.0 && p < PROB_FLOOR) || (y < 1.0 && 1.0 - p < PROB_FLOOR);
        if !clamped {
            grad[[i, 0]] = (p - y) * scale / n;
        }
    }
    (loss / n, grad)
}

fn squared(pred: &Array2<f64>, target: &[f64], scale: f64) -> (f64, Array2<f64>) {
    let n = pred.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(pred.raw_dim());
    for (i, &y) in target.iter().enumerate() {
        let d = pred[[i, 0]] - y;
        loss += d * d;
        grad[[i, 0]] = 2.0 * d * scale / n;
    }
    (loss / n, grad)
}

/// Loss of decoder outputs against explicit targets for a single example.
pub fn loss(out: &DecoderOutput, roll: &PianoRoll, tensile: &[f64], diameter: &[f64], beta: f64, kl: f64) -> LossBreakdown {
    let melody: Vec<usize> = (0..STEPS).map(|t| roll.melody_column(t)).collect();
    let bass: Vec<usize> = (0..STEPS).map(|t| roll.bass_column(t)).collect();
    let col = |v: &[f64]| Array2::from_shape_fn((STEPS, 1), |(t, _)| v[t]);
    let on = |c: usize| (0..STEPS).map(|t| roll.get(t, c) as f64).collect::<Vec<_>>();
    let raw = [
        categorical(&out.melody_pitch, &melody, 1.0).0,
        binary(&col(&out.melody_onset), &on(MELODY_ONSET), 1.0).0,
        categorical(&out.bass_pitch, &bass, 1.0).0,
        binary(&col(&out.bass_onset), &on(BASS_ONSET), 1.0).0,
        squared(&col(&out.tensile), tensile, 1.0).0,
        squared(&col(&out.diameter), diameter, 1.0).0,
        kl,
    ];
    LossBreakdown::from_terms(raw, &TermWeights::standard(beta, true, true))
}

struct Evaluated {
    enc: EncoderPass,
    dec: DecoderPass,
    breakdown: LossBreakdown,
    /// Gradient of the objective w.r.t. each head's raw output.
    d_logits: Vec<Array2<f64>>,
}

fn evaluate(params: &ModelParams, examples: &[Example], noise: &Array2<f64>, weights: &TermWeights) -> Result<Evaluated> {
    let batch = examples.len();
    if batch == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if noise.dim() != (batch, params.config.latent_dim) {
        return Err(Error::ShapeMismatch(format!("noise shape {:?}", noise.dim())));
    }
    let rolls: Vec<&PianoRoll> = examples.iter().map(|e| e.roll).collect();
    let enc = encode_pass(params, &rolls, true)?;
    let sigma = enc.logvar.mapv(|lv| (0.5 * lv).exp());
    let z = &enc.mu + &(&sigma * noise);
    let dec = decode_pass(params, &z, true)?;
    let acts = activate(&dec.logits);
    let tg = targets(examples)?;

    let w = |t: Term| weights.get(t);
    let (mp, g0) = categorical(&acts[0], &tg.melody, w(Term::MelodyPitch));
    let (mr, g1) = binary(&acts[1], &tg.melody_onset, w(Term::MelodyRhythm));
    let (bp, g2) = categorical(&acts[2], &tg.bass, w(Term::BassPitch));
    let (br, g3) = binary(&acts[3], &tg.bass_onset, w(Term::BassRhythm));
    let (ts, g4) = squared(&acts[4], &tg.tensile, w(Term::Tensile));
    let (cd, g5) = squared(&acts[5], &tg.diameter, w(Term::Diameter));
    let kl = (0..batch)
        .map(|b| {
            let (mu, lv) = (enc.mu.row(b), enc.logvar.row(b));
            0.5 * mu.iter().zip(lv).map(|(m, l)| l.exp() + m * m - 1.0 - l).sum::<f64>()
        })
        .sum::<f64>()
        / batch as f64;
    let breakdown = LossBreakdown::from_terms([mp, mr, bp, br, ts, cd, kl], weights);
    if !breakdown.total.is_finite() {
        return Err(Error::NumericFailure { layer: "loss".into(), detail: format!("total = {}", breakdown.total) });
    }
    Ok(Evaluated { enc, dec, breakdown, d_logits: vec![g0, g1, g2, g3, g4, g5] })
}

/// Objective value for a batch with fixed reparameterization noise.
pub fn batch_loss(params: &ModelParams, examples: &[Example], noise: &Array2<f64>, weights: &TermWeights) -> Result<LossBreakdown> {
    Ok(evaluate(params, examples, noise, weights)?.breakdown)
}

/// Objective value and its gradient w.r.t. every parameter.
pub fn batch_loss_and_grad(
    params: &ModelParams,
    examples: &[Example],
    noise: &Array2<f64>,
    weights: &TermWeights,
) -> Result<(LossBreakdown, Grads)> {
    let ev = evaluate(params, examples, noise, weights)?;
    let batch = examples.len();
    let hd = params.config.hidden;
    let layout = &params.layout;
    let mut grads: Grads = params.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect();

    // Output heads.
    let mut d_top = Array2::<f64>::zeros((STEPS * batch, hd));
    for (k, (d0, d1)) in layout.heads.iter().enumerate() {
        let a = &ev.dec.hidden[k];
        let dl = &ev.d_logits[k];
        grads[d1.w] += &a.t().dot(dl);
        grads[d1.b] += &dl.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut da = dl.dot(&params.tensors[d1.w].t());
        da.zip_mut_with(a, |g, &act| *g *= 1.0 - act * act);
        grads[d0.w] += &ev.dec.top.t().dot(&da);
        grads[d0.b] += &da.sum_axis(Axis(0)).insert_axis(Axis(0));
        d_top += &da.dot(&params.tensors[d0.w].t());
    }

    // Decoder GRU stack, top down.
    let mut d_out: Vec<Option<Array2<f64>>> = (0..STEPS)
        .map(|t| Some(d_top.slice(s![t * batch..(t + 1) * batch, ..]).to_owned()))
        .collect();
    let mut dz = Array2::<f64>::zeros(ev.dec.z.raw_dim());
    for l in (0..layout.decoder.len()).rev() {
        let idx = &layout.decoder[l];
        let w = gru_weights(params, idx);
        let (mut g, d_gx) = gru::backward(&w, &ev.dec.caches[l], &d_out);
        if l == 0 {
            let total = d_gx.iter().fold(Array2::<f64>::zeros(d_gx[0].raw_dim()), |acc, d| acc + d);
            g.wx = ev.dec.z.t().dot(&total);
            dz = total.dot(&w.wx.t());
        } else {
            gru::input_weight_grad(&mut g, &ev.dec.layer_inputs[l - 1], &d_gx);
            d_out = gru::input_grads(&w, &d_gx).into_iter().map(Some).collect();
        }
        grads[idx.wx] += &g.wx;
        grads[idx.wh] += &g.wh;
        grads[idx.b] += &g.b;
    }

    // Reparameterization and KL.
    let kl_w = weights.get(Term::Kl) / batch as f64;
    let mut d_mu = dz.clone();
    let mut d_lv = Array2::<f64>::zeros(dz.raw_dim());
    let z_minus_mu = &ev.dec.z - &ev.enc.mu;
    ndarray::Zip::from(&mut d_lv)
        .and(&dz)
        .and(&z_minus_mu)
        .and(&ev.enc.logvar)
        .and(&ev.enc.logvar_raw)
        .for_each(|g, &dzv, &diff, &lv, &raw| {
            // d z / d logvar = 0.5 * sigma * noise = 0.5 * (z - mu)
            let mut v = dzv * 0.5 * diff + kl_w * 0.5 * (lv.exp() - 1.0);
            if !(LOGVAR_MIN..=LOGVAR_MAX).contains(&raw) {
                v = 0.0;
            }
            *g = v;
        });
    d_mu.zip_mut_with(&ev.enc.mu, |g, &m| *g += kl_w * m);

    let last = &ev.enc.last;
    grads[layout.mu.w] += &last.t().dot(&d_mu);
    grads[layout.mu.b] += &d_mu.sum_axis(Axis(0)).insert_axis(Axis(0));
    grads[layout.logvar.w] += &last.t().dot(&d_lv);
    grads[layout.logvar.b] += &d_lv.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_last = d_mu.dot(&params.tensors[layout.mu.w].t()) + d_lv.dot(&params.tensors[layout.logvar.w].t());

    // Encoder GRU stack: only the final top-layer state feeds the posterior.
    let mut d_out: Vec<Option<Array2<f64>>> = vec![None; STEPS];
    d_out[STEPS - 1] = Some(d_last);
    for l in (0..layout.encoder.len()).rev() {
        let idx = &layout.encoder[l];
        let w = gru_weights(params, idx);
        let (mut g, d_gx) = gru::backward(&w, &ev.enc.caches[l], &d_out);
        gru::input_weight_grad(&mut g, &ev.enc.layer_inputs[l], &d_gx);
        if l > 0 {
            d_out = gru::input_grads(&w, &d_gx).into_iter().map(Some).collect();
        }
        grads[idx.wx] += &g.wx;
        grads[idx.wh] += &g.wh;
        grads[idx.b] += &g.b;
    }

    Ok((ev.breakdown, grads))
}
