//! Named parameter tensors and their layout.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::corpus::roll::{BASS_PITCHES, FEATURES, MELODY_PITCHES, STEPS};

/// The six decoder outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Head {
    MelodyPitch,
    MelodyOnset,
    BassPitch,
    BassOnset,
    Tensile,
    Diameter,
}

impl Head {
    pub const ALL: [Head; 6] = [
        Head::MelodyPitch,
        Head::MelodyOnset,
        Head::BassPitch,
        Head::BassOnset,
        Head::Tensile,
        Head::Diameter,
    ];

    pub fn width(self) -> usize {
        match self {
            Head::MelodyPitch => MELODY_PITCHES,
            Head::BassPitch => BASS_PITCHES,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Head::MelodyPitch => "melody_pitch",
            Head::MelodyOnset => "melody_onset",
            Head::BassPitch => "bass_pitch",
            Head::BassOnset => "bass_onset",
            Head::Tensile => "tensile",
            Head::Diameter => "diameter",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GruIdx {
    pub wx: usize,
    pub wh: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DenseIdx {
    pub w: usize,
    pub b: usize,
}

/// Tensor indices, in storage order.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub encoder: Vec<GruIdx>,
    pub mu: DenseIdx,
    pub logvar: DenseIdx,
    pub decoder: Vec<GruIdx>,
    /// (first dense, output dense) per head, in [`Head::ALL`] order.
    pub heads: Vec<(DenseIdx, DenseIdx)>,
    pub specs: Vec<(String, [usize; 2])>,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut specs: Vec<(String, [usize; 2])> = Vec::new();
        let mut add = |name: String, shape: [usize; 2]| {
            specs.push((name, shape));
            specs.len() - 1
        };
        let h = cfg.hidden;
        let gru = |prefix: &str, layer: usize, input: usize, add: &mut dyn FnMut(String, [usize; 2]) -> usize| GruIdx {
            wx: add(format!("{prefix}.gru{layer}.wx"), [input, 3 * h]),
            wh: add(format!("{prefix}.gru{layer}.wh"), [h, 3 * h]),
            b: add(format!("{prefix}.gru{layer}.b"), [1, 3 * h]),
        };
        let encoder = (0..cfg.gru_layers)
            .map(|l| gru("encoder", l, if l == 0 { FEATURES } else { h }, &mut add))
            .collect();
        let mu = DenseIdx { w: add("encoder.mu.w".into(), [h, cfg.latent_dim]), b: add("encoder.mu.b".into(), [1, cfg.latent_dim]) };
        let logvar = DenseIdx {
            w: add("encoder.logvar.w".into(), [h, cfg.latent_dim]),
            b: add("encoder.logvar.b".into(), [1, cfg.latent_dim]),
        };
        let decoder = (0..cfg.gru_layers)
            .map(|l| gru("decoder", l, if l == 0 { cfg.latent_dim } else { h }, &mut add))
            .collect();
        let heads = Head::ALL
            .iter()
            .map(|head| {
                let n = head.name();
                (
                    DenseIdx {
                        w: add(format!("decoder.{n}.dense0.w"), [h, cfg.head_hidden]),
                        b: add(format!("decoder.{n}.dense0.b"), [1, cfg.head_hidden]),
                    },
                    DenseIdx {
                        w: add(format!("decoder.{n}.dense1.w"), [cfg.head_hidden, head.width()]),
                        b: add(format!("decoder.{n}.dense1.b"), [1, head.width()]),
                    },
                )
            })
            .collect();
        Layout { encoder, mu, logvar, decoder, heads, specs }
    }
}

/// Random orthogonal `n x n` matrix (Gram-Schmidt on Gaussian columns).
fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::<f64>::from_shape_simple_fn((n, n), || rng.sample(StandardNormal));
    for j in 0..n {
        for k in 0..j {
            let d = q.column(j).dot(&q.column(k));
            let qk = q.column(k).to_owned();
            q.column_mut(j).scaled_add(-d, &qk);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    q
}

/// All trainable weights of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub(crate) layout: Layout,
    pub tensors: Vec<Array2<f64>>,
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.specs == other.specs
    }
}

impl ModelParams {
    /// Glorot-uniform input and dense weights, orthogonal recurrent blocks
    /// (one per gate). Biases are zero except the GRU update gates, which are
    /// drawn as `ln(U(1, 63))`.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let layout = Layout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .specs
            .iter()
            .map(|(name, [rows, cols])| {
                if name.ends_with(".b") {
                    let mut b = Array2::zeros((*rows, *cols));
                    if name.contains(".gru") {
                        // Update-gate biases spread memory time scales up to the sequence length.
                        b.slice_mut(s![.., ..cols / 3]).mapv_inplace(|_| rng.gen_range(1.0..(STEPS - 1) as f64).ln());
                    }
                    b
                } else if name.ends_with(".wh") {
                    let h = *rows;
                    let mut w = Array2::zeros((h, *cols));
                    for g in 0..cols / h {
                        w.slice_mut(s![.., g * h..(g + 1) * h]).assign(&orthogonal(h, &mut rng));
                    }
                    w
                } else {
                    let fan_out = if name.ends_with(".wx") { cols / 3 } else { *cols };
                    let bound = (6.0 / (*rows + fan_out) as f64).sqrt();
                    Array2::from_shape_fn((*rows, *cols), |_| rng.gen_range(-bound..bound))
                }
            })
            .collect();
        Self { config: config.clone(), layout, tensors }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let layout = Layout::new(config);
        let tensors = layout.specs.iter().map(|(_, [r, c])| Array2::zeros((*r, *c))).collect();
        Self { config: config.clone(), layout, tensors }
    }

    /// Rebuilds parameters from named tensors, checking names and shapes.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<(String, Array2<f64>)>) -> crate::Result<Self> {
        let layout = Layout::new(config);
        if tensors.len() != layout.specs.len() {
            return Err(crate::Error::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                layout.specs.len(),
                tensors.len()
            )));
        }
        let mut out = Vec::with_capacity(tensors.len());
        for ((name, t), (want_name, want_shape)) in tensors.into_iter().zip(&layout.specs) {
            if &name != want_name || t.shape() != want_shape {
                return Err(crate::Error::ShapeMismatch(format!(
                    "tensor {name} {:?} does not match expected {want_name} {want_shape:?}",
                    t.shape()
                )));
            }
            out.push(t);
        }
        Ok(Self { config: config.clone(), layout, tensors: out })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layout.specs.iter().map(|(n, _)| n.as_str())
    }

    pub fn num_weights(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Flat index `i` → (tensor, offset).
    pub fn locate(&self, mut i: usize) -> (usize, usize) {
        for (t, tensor) in self.tensors.iter().enumerate() {
            if i < tensor.len() {
                return (t, i);
            }
            i -= tensor.len();
        }
        panic!("weight index out of range");
    }

    pub fn get_flat(&self, i: usize) -> f64 {
        let (t, o) = self.locate(i);
        self.tensors[t].as_slice().expect("contiguous")[o]
    }

    pub fn set_flat(&mut self, i: usize, v: f64) {
        let (t, o) = self.locate(i);
        self.tensors[t].as_slice_mut().expect("contiguous")[o] = v;
    }
}
