//! Finite-difference verification of the analytic gradients.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::config::ModelConfig;
use super::model::{batch_loss, batch_loss_and_grad, Example, Term, TermWeights};
use super::params::ModelParams;
use crate::corpus::toy::toy_dataset;
use crate::error::Result;
use crate::spiral::SpiralConfig;

/// Pairs whose magnitudes are both below this are treated as agreeing.
pub const NEGLIGIBLE: f64 = 1e-10;

/// Below this magnitude a central difference at step 1e-4 cannot resolve a
/// derivative to 1e-4 relative accuracy: round-off in the loss is about
/// `eps * |L| / h`, roughly 1e-11 here. Such weights are compared in absolute
/// terms instead and do not count towards the relative sample.
pub const RESOLUTION: f64 = 1e-6;
/// Absolute agreement required for unresolvable weights.
pub const ABS_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Number of resolvable weights to compare per objective.
    pub samples: usize,
    pub step: f64,
    pub seed: u64,
    /// Objectives to check; each is checked independently.
    pub objectives: Vec<(String, TermWeights)>,
}

impl GradCheckOptions {
    /// The full objective at `beta` plus each of the seven terms alone.
    pub fn all_terms(beta: f64, seed: u64) -> Self {
        let mut objectives = vec![("total".to_string(), TermWeights::standard(beta, true, true))];
        for t in Term::ALL {
            objectives.push((format!("{t:?}").to_lowercase(), TermWeights::only(t)));
        }
        GradCheckOptions { samples: 200, step: 1e-4, seed, objectives }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ObjectiveCheck {
    pub objective: String,
    /// Weights compared by relative error.
    pub weights_checked: usize,
    /// Weights below [`RESOLUTION`], compared by absolute error.
    pub unresolved: usize,
    pub max_unresolved_abs_error: f64,
    pub max_relative_error: f64,
    /// Flat index of the worst weight.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub checks: Vec<ObjectiveCheck>,
    pub max_relative_error: f64,
    pub max_unresolved_abs_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self, samples: usize) -> bool {
        self.max_relative_error < 1e-4
            && self.max_unresolved_abs_error < ABS_TOLERANCE
            && self.checks.iter().all(|c| c.weights_checked >= samples)
    }
}

/// `|a - n| / max(|a|, |n|)`, zero when both are negligible.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < NEGLIGIBLE {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares analytic gradients against central differences on a random
/// subset of weights, with the reparameterization noise held fixed.
pub fn gradient_check(
    params: &ModelParams,
    examples: &[Example],
    noise: &Array2<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let total = params.num_weights();
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let mut probe = params.clone();
    let mut checks = Vec::new();
    for (name, weights) in &opts.objectives {
        let (_, grads) = batch_loss_and_grad(params, examples, noise, weights)?;
        let flat: Vec<f64> = grads.iter().flat_map(|g| g.iter().copied()).collect();
        let mut check = ObjectiveCheck {
            objective: name.clone(),
            weights_checked: 0,
            unresolved: 0,
            max_unresolved_abs_error: 0.0,
            max_relative_error: 0.0,
            worst_index: order[0],
            worst_analytic: f64::NAN,
            worst_numeric: f64::NAN,
        };
        for &i in &order {
            if check.weights_checked >= opts.samples {
                break;
            }
            let w0 = params.get_flat(i);
            probe.set_flat(i, w0 + opts.step);
            let up = batch_loss(&probe, examples, noise, weights)?.total;
            probe.set_flat(i, w0 - opts.step);
            let down = batch_loss(&probe, examples, noise, weights)?.total;
            probe.set_flat(i, w0);
            let numeric = (up - down) / (2.0 * opts.step);
            let analytic = flat[i];
            if analytic.abs().max(numeric.abs()) < RESOLUTION {
                check.unresolved += 1;
                check.max_unresolved_abs_error = check.max_unresolved_abs_error.max((analytic - numeric).abs());
                continue;
            }
            check.weights_checked += 1;
            let err = relative_error(analytic, numeric);
            if err >= check.max_relative_error {
                check.max_relative_error = err;
                check.worst_index = i;
                check.worst_analytic = analytic;
                check.worst_numeric = numeric;
            }
        }
        checks.push(check);
    }
    let max_relative_error = checks.iter().map(|c| c.max_relative_error).fold(0.0, f64::max);
    let max_unresolved_abs_error = checks.iter().map(|c| c.max_unresolved_abs_error).fold(0.0, f64::max);
    Ok(GradCheckReport { checks, max_relative_error, max_unresolved_abs_error })
}

/// Largest deviation of `grad(total at 2b) - grad(total at b)` from
/// `b * grad(kl)`, relative to the largest KL-gradient entry.
pub fn beta_linearity_error(params: &ModelParams, examples: &[Example], noise: &Array2<f64>, beta: f64) -> Result<f64> {
    let flat = |w: TermWeights| -> Result<Vec<f64>> {
        let (_, g) = batch_loss_and_grad(params, examples, noise, &w)?;
        Ok(g.iter().flat_map(|t| t.iter().copied()).collect())
    };
    let one = flat(TermWeights::standard(beta, true, true))?;
    let two = flat(TermWeights::standard(2.0 * beta, true, true))?;
    let kl = flat(TermWeights::only(Term::Kl))?;
    let scale = kl.iter().fold(0.0f64, |m, v| m.max(v.abs())) * beta;
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(one.iter().zip(&two).zip(&kl).map(|((a, b), k)| ((b - a) - beta * k).abs()).fold(0.0, f64::max) / scale)
}

/// Full check on a freshly initialized tiny model and two toy fragments.
pub fn check_tiny_model(seed: u64, samples: usize) -> Result<GradCheckReport> {
    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(&cfg, seed);
    let data = toy_dataset(2, seed, &SpiralConfig::default())?;
    let examples: Vec<Example> = data.fragments.iter().map(Example::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Array2::from_shape_fn((examples.len(), cfg.latent_dim), |_| StandardNormal.sample(&mut rng));
    let mut opts = GradCheckOptions::all_terms(cfg.beta_max, seed);
    opts.samples = samples;
    gradient_check(&params, &examples, &noise, &opts)
}
