//! Tension labels, attribute vectors and latent arithmetic.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::dataset::FragmentDataset;
use crate::corpus::roll::{PianoRoll, STEPS};
use crate::error::{Error, Result};
use crate::spiral::TensionKind;
use crate::vae::{encode_batch, ModelParams};

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    // Checked exactly: the mean of a constant curve can be off by an ulp,
    // which would leave a spurious nonzero variance.
    if n == 0 || constant(&a[..n]) || constant(&b[..n]) {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
    }
}

fn ramp() -> Vec<f64> {
    (0..STEPS).map(|i| i as f64 / (STEPS - 1) as f64).collect()
}

/// Correlation of a curve with the rising line `i / 63`.
pub fn direction_score(curve: &[f64]) -> f64 {
    pearson(curve, &ramp())
}

/// `(sign, magnitude)`: sign is +1 when the curve's mean exceeds `c`, else -1;
/// magnitude is the 2-norm of `curve - c`.
pub fn level_score(curve: &[f64], c: f64) -> (i8, f64) {
    let mean = curve.iter().sum::<f64>() / curve.len().max(1) as f64;
    let sign = if mean > c { 1 } else { -1 };
    (sign, curve.iter().map(|v| (v - c) * (v - c)).sum::<f64>().sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeTemplate {
    pub name: String,
    pub values: Vec<f64>,
}

impl ShapeTemplate {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != STEPS || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("a shape template needs {STEPS} finite values")));
        }
        let m = values.iter().sum::<f64>() / STEPS as f64;
        if values.iter().all(|v| (v - m).abs() == 0.0) {
            return Err(Error::InvalidInput("a shape template must not be constant".into()));
        }
        Ok(Self { name: name.into(), values })
    }

    /// Rises linearly to a peak at step 32, then falls.
    pub fn triangle() -> Self {
        let values = (0..STEPS).map(|i| 1.0 - (i as f64 - 32.0).abs() / 32.0).collect();
        Self { name: "triangle".into(), values }
    }

    pub fn ramp() -> Self {
        Self { name: "ramp".into(), values: ramp() }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "triangle" => Ok(Self::triangle()),
            "ramp" => Ok(Self::ramp()),
            other => Err(Error::InvalidInput(format!("unknown shape template {other:?} (known: triangle, ramp)"))),
        }
    }
}

pub fn shape_score(curve: &[f64], template: &ShapeTemplate) -> f64 {
    pearson(curve, &template.values)
}

/// What a pair of classes is selected by.
#[derive(Clone, Debug, PartialEq)]
pub enum Criterion {
    Direction(TensionKind),
    /// Level relative to a threshold; `None` uses the mean over the selection pool.
    Level(TensionKind, Option<f64>),
    Shape(TensionKind, ShapeTemplate),
}

impl Criterion {
    pub fn kind(&self) -> TensionKind {
        match self {
            Criterion::Direction(k) | Criterion::Level(k, _) | Criterion::Shape(k, _) => *k,
        }
    }

    /// Name of the attribute vector this criterion yields.
    pub fn vector_name(&self) -> String {
        let k = self.kind().as_str();
        match self {
            Criterion::Direction(_) => format!("{k}_direction"),
            Criterion::Level(..) => format!("{k}_level"),
            Criterion::Shape(_, t) => format!("{k}_{}", t.name),
        }
    }

    /// Parses `tensile_strain_direction`, `cloud_diameter_level` and so on.
    pub fn from_vector_name(name: &str) -> Result<Self> {
        let kind = if name.starts_with("tensile_strain_") {
            TensionKind::TensileStrain
        } else if name.starts_with("cloud_diameter_") {
            TensionKind::CloudDiameter
        } else {
            return Err(Error::InvalidInput(format!("unknown vector kind {name:?}")));
        };
        match &name[kind.as_str().len() + 1..] {
            "direction" => Ok(Criterion::Direction(kind)),
            "level" => Ok(Criterion::Level(kind, None)),
            shape => Ok(Criterion::Shape(kind, ShapeTemplate::by_name(shape)?)),
        }
    }

    pub fn standard() -> Vec<Criterion> {
        vec![
            Criterion::Direction(TensionKind::TensileStrain),
            Criterion::Level(TensionKind::TensileStrain, None),
            Criterion::Direction(TensionKind::CloudDiameter),
            Criterion::Level(TensionKind::CloudDiameter, None),
        ]
    }
}

/// Two labeled id sets: `positive` is the rising / high / shape-matching class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSelection {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    /// Score boundaries actually realized by the selection.
    pub thresholds: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

/// Top `k` ids by descending score, ties to the lower id.
fn top_k(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Picks about `target_n` fragments per class from `(id, curve)` pairs.
pub fn select_classes(items: &[(usize, &[f64])], criterion: &Criterion, target_n: usize) -> ClassSelection {
    let mut warnings = Vec::new();
    let mut per_class = target_n;
    if items.len() < 2 * target_n {
        per_class = items.len() / 2;
        warnings.push(format!(
            "only {} fragments for {} classes of {target_n}; using {per_class} per class",
            items.len(),
            criterion.vector_name()
        ));
    }
    let mut thresholds = BTreeMap::new();
    let ids = |v: &[(usize, f64)]| v.iter().map(|p| p.0).collect::<Vec<_>>();
    let (positive, negative) = match criterion {
        Criterion::Direction(_) | Criterion::Shape(..) => {
            let score = |c: &[f64]| match criterion {
                Criterion::Shape(_, t) => shape_score(c, t),
                _ => direction_score(c),
            };
            let scored: Vec<(usize, f64)> = items.iter().map(|(id, c)| (*id, score(c))).collect();
            let up = top_k(scored.clone(), per_class);
            let down = top_k(scored.into_iter().map(|(i, s)| (i, -s)).collect(), per_class);
            if let Some(last) = up.last() {
                thresholds.insert("positive_min_score".into(), last.1);
            }
            if let Some(last) = down.last() {
                thresholds.insert("negative_max_score".into(), -last.1);
            }
            (ids(&up), ids(&down))
        }
        Criterion::Level(_, c) => {
            let c = c.unwrap_or_else(|| {
                // Summed in id order so the mean does not depend on input order.
                let mut by_id: Vec<&(usize, &[f64])> = items.iter().collect();
                by_id.sort_by_key(|p| p.0);
                let total: f64 = by_id.iter().map(|(_, v)| v.iter().sum::<f64>()).sum();
                let count: usize = items.iter().map(|(_, v)| v.len()).sum();
                total / count.max(1) as f64
            });
            thresholds.insert("corpus_mean".into(), c);
            let (mut high, mut low) = (Vec::new(), Vec::new());
            for (id, curve) in items {
                let (sign, mag) = level_score(curve, c);
                if sign > 0 { &mut high } else { &mut low }.push((*id, mag));
            }
            for (name, pool) in [("high", &high), ("low", &low)] {
                if pool.len() < per_class {
                    warnings.push(format!("only {} fragments on the {name} side; using all of them", pool.len()));
                }
            }
            let high = top_k(high, per_class);
            let low = top_k(low, per_class);
            if let Some(last) = high.last() {
                thresholds.insert("positive_min_magnitude".into(), last.1);
            }
            if let Some(last) = low.last() {
                thresholds.insert("negative_min_magnitude".into(), last.1);
            }
            (ids(&high), ids(&low))
        }
    };
    let mut positive = positive;
    let mut negative = negative;
    positive.sort_unstable();
    negative.sort_unstable();
    ClassSelection { positive, negative, thresholds, warnings }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector {
    pub name: String,
    pub values: Vec<f64>,
    /// (positive, negative) class sizes.
    pub class_sizes: [usize; 2],
    pub thresholds: BTreeMap<String, f64>,
}

/// Posterior means of the given fragments, in id order.
pub fn posterior_means(params: &ModelParams, data: &FragmentDataset, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
    if let Some(&bad) = ids.iter().find(|&&i| i >= data.len()) {
        return Err(Error::MissingId(bad));
    }
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(64) {
        let rolls: Vec<&PianoRoll> = chunk.iter().map(|&i| &data.fragments[i].roll).collect();
        out.extend(encode_batch(&rolls, params)?.into_iter().map(|p| p.mu));
    }
    Ok(out)
}

fn mean_of(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|v| *v /= rows.len() as f64);
    m
}

/// Mean posterior mean of class `a` minus that of class `b`.
pub fn attribute_vector(
    name: impl Into<String>,
    params: &ModelParams,
    data: &FragmentDataset,
    a: &[usize],
    b: &[usize],
) -> Result<AttributeVector> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("both classes must be non-empty".into()));
    }
    let dim = params.config.latent_dim;
    let ma = mean_of(&posterior_means(params, data, a)?, dim);
    let mb = mean_of(&posterior_means(params, data, b)?, dim);
    Ok(AttributeVector {
        name: name.into(),
        values: ma.iter().zip(&mb).map(|(x, y)| x - y).collect(),
        class_sizes: [a.len(), b.len()],
        thresholds: BTreeMap::new(),
    })
}

/// `z + alpha * v`.
pub fn apply_vector(z: &[f64], v: &AttributeVector, alpha: f64) -> Result<Vec<f64>> {
    if z.len() != v.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "latent code has {} dims, vector {} has {}",
            z.len(),
            v.name,
            v.values.len()
        )));
    }
    Ok(z.iter().zip(&v.values).map(|(a, b)| a + alpha * b).collect())
}

/// Selects classes for `criterion` among `ids` and extracts the vector.
pub fn extract_vector(
    params: &ModelParams,
    data: &FragmentDataset,
    ids: &[usize],
    criterion: &Criterion,
    target_n: usize,
) -> Result<(AttributeVector, ClassSelection)> {
    let kind = criterion.kind();
    let items: Vec<(usize, &[f64])> = ids.iter().map(|&i| (i, data.fragments[i].curve(kind).values.as_slice())).collect();
    let sel = select_classes(&items, criterion, target_n);
    let mut v = attribute_vector(criterion.vector_name(), params, data, &sel.positive, &sel.negative)?;
    v.thresholds = sel.thresholds.clone();
    Ok((v, sel))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorFile {
    pub checkpoint_id: String,
    pub latent_dim: usize,
    pub vectors: Vec<AttributeVector>,
}

impl VectorFile {
    pub fn get(&self, name: &str) -> Result<&AttributeVector> {
        self.vectors.iter().find(|v| v.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.vectors.iter().map(|v| v.name.as_str()).collect();
            Error::InvalidInput(format!("no vector named {name:?} (available: {})", known.join(", ")))
        })
    }

    /// Refuses vectors extracted from a different checkpoint.
    pub fn check_compatible(&self, checkpoint_id: &str, latent_dim: usize) -> Result<()> {
        let mut diff = Vec::new();
        if self.checkpoint_id != checkpoint_id {
            diff.push(format!("checkpoint id: vectors {}, model {checkpoint_id}", self.checkpoint_id));
        }
        if self.latent_dim != latent_dim {
            diff.push(format!("latent_dim: vectors {}, model {latent_dim}", self.latent_dim));
        }
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(diff.join("; ")))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::InvalidInput(format!("bad vectors file {}: {e}", path.display())))
    }
}
