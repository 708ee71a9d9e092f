//! Hardening decoder outputs, comparison metrics and the latent-edit
//! experiments.

use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::dataset::FragmentDataset;
use crate::corpus::roll::{PianoRoll, BASS_REST, MELODY_REST, STEPS};
use crate::error::{Error, Result};
use crate::latent::{apply_vector, direction_score, level_score, posterior_means, AttributeVector};
use crate::spiral::{c_major_key, tension_curves, SpiralConfig, TensionKind};
use crate::vae::{decode_batch, sample_latent, DecoderOutput, ModelParams};

pub const DEFAULT_DIRECTION_SCALES: [f64; 9] = [-8.0, -6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0];
pub const DEFAULT_LEVEL_SCALES: [f64; 5] = [-6.0, -3.0, 0.0, 3.0, 6.0];
pub const ONSET_THRESHOLD: f64 = 0.5;
pub const STEPS_PER_BAR: usize = 16;

fn argmax(row: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Argmax pitch per step (lowest index on ties), onset iff probability > 0.5,
/// no onsets on rests.
pub fn roll_from_output(out: &DecoderOutput) -> PianoRoll {
    let melody: Vec<usize> = (0..STEPS).map(|t| argmax(out.melody_pitch.row(t).iter().copied())).collect();
    let bass: Vec<usize> = (0..STEPS).map(|t| argmax(out.bass_pitch.row(t).iter().copied())).collect();
    let m_on: Vec<bool> = (0..STEPS).map(|t| out.melody_onset[t] > ONSET_THRESHOLD && melody[t] != MELODY_REST).collect();
    let b_on: Vec<bool> = (0..STEPS).map(|t| out.bass_onset[t] > ONSET_THRESHOLD && bass[t] != BASS_REST).collect();
    PianoRoll::from_columns(&melody, &m_on, &bass, &b_on).expect("argmax columns are in range")
}

/// Fraction of steps with matching melody and bass columns (rests included).
pub fn pitch_accuracy(a: &PianoRoll, b: &PianoRoll) -> (f64, f64) {
    let m = (0..STEPS).filter(|&t| a.melody_column(t) == b.melody_column(t)).count();
    let bs = (0..STEPS).filter(|&t| a.bass_column(t) == b.bass_column(t)).count();
    (m as f64 / STEPS as f64, bs as f64 / STEPS as f64)
}

/// F-measure of `modified` onset steps against `original` ones, exact-step
/// matching. Both empty scores 1, exactly one empty scores 0.
pub fn onset_fscore(original: &[usize], modified: &[usize]) -> f64 {
    match (original.is_empty(), modified.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let hits = modified.iter().filter(|s| original.contains(s)).count() as f64;
    if hits == 0.0 {
        return 0.0;
    }
    let p = hits / modified.len() as f64;
    let r = hits / original.len() as f64;
    2.0 * p * r / (p + r)
}

/// Onset F-measure of `modified` against `original`, melody and bass.
pub fn rhythm_fscore(original: &PianoRoll, modified: &PianoRoll) -> (f64, f64) {
    let on = |r: &PianoRoll, bass: bool| -> Vec<usize> {
        (0..STEPS).filter(|&t| if bass { r.bass_onset(t) } else { r.melody_onset(t) }).collect()
    };
    (onset_fscore(&on(original, false), &on(modified, false)), onset_fscore(&on(original, true), &on(modified, true)))
}

/// Fraction of curves whose direction score exceeds `tau`.
pub fn upward_ratio(curves: &[&[f64]], tau: f64) -> f64 {
    if curves.is_empty() {
        return 0.0;
    }
    curves.iter().filter(|c| direction_score(c) > tau).count() as f64 / curves.len() as f64
}

/// Fraction of curves above `c` on average whose distance from `c` exceeds `tau`.
pub fn high_ratio(curves: &[&[f64]], c: f64, tau: f64) -> f64 {
    if curves.is_empty() {
        return 0.0;
    }
    curves
        .iter()
        .filter(|v| {
            let (sign, mag) = level_score(v, c);
            sign > 0 && mag > tau
        })
        .count() as f64
        / curves.len() as f64
}

/// Sounding melody and bass pitch classes counted per step over `bars`.
pub fn pitch_class_histogram<'a>(rolls: impl IntoIterator<Item = &'a PianoRoll>, bars: Range<usize>) -> Result<[u64; 12]> {
    if bars.start >= bars.end || bars.end > STEPS / STEPS_PER_BAR {
        return Err(Error::InvalidInput(format!("bar range {bars:?} must be a non-empty part of 0..4")));
    }
    let mut hist = [0u64; 12];
    for roll in rolls {
        for t in bars.start * STEPS_PER_BAR..bars.end * STEPS_PER_BAR {
            for pc in roll.sounding_pitch_classes(t).into_iter().flatten() {
                hist[pc as usize] += 1;
            }
        }
    }
    Ok(hist)
}

/// How generated fragments are classified.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Measure {
    /// Upward when the direction score exceeds `tau`.
    Direction { kind: TensionKind, tau: f64 },
    /// High when above `c` on average and further than `tau` from it.
    Level { kind: TensionKind, c: f64, tau: f64 },
}

impl Measure {
    pub fn kind(&self) -> TensionKind {
        match self {
            Measure::Direction { kind, .. } | Measure::Level { kind, .. } => *kind,
        }
    }

    pub fn ratio(&self, curves: &[&[f64]]) -> f64 {
        match *self {
            Measure::Direction { tau, .. } => upward_ratio(curves, tau),
            Measure::Level { c, tau, .. } => high_ratio(curves, c, tau),
        }
    }

    /// Classification rule implied by a vector's selection thresholds.
    pub fn for_vector(v: &AttributeVector, kind: TensionKind) -> Result<Self> {
        let get = |k: &str| {
            v.thresholds
                .get(k)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("vector {} has no {k} threshold", v.name)))
        };
        if v.name.ends_with("_level") {
            Ok(Measure::Level { kind, c: get("corpus_mean")?, tau: get("positive_min_magnitude")? })
        } else {
            Ok(Measure::Direction { kind, tau: get("positive_min_score")? })
        }
    }
}

/// A decoded fragment with predicted and recomputed tension.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub roll: PianoRoll,
    pub predicted_tensile: Vec<f64>,
    pub predicted_diameter: Vec<f64>,
    pub tensile: Vec<f64>,
    pub diameter: Vec<f64>,
}

impl Generated {
    pub fn curve(&self, kind: TensionKind) -> &[f64] {
        match kind {
            TensionKind::TensileStrain => &self.tensile,
            TensionKind::CloudDiameter => &self.diameter,
        }
    }

    pub fn predicted(&self, kind: TensionKind) -> &[f64] {
        match kind {
            TensionKind::TensileStrain => &self.predicted_tensile,
            TensionKind::CloudDiameter => &self.predicted_diameter,
        }
    }
}

pub fn harden(out: DecoderOutput, cfg: &SpiralConfig) -> Result<Generated> {
    let roll = roll_from_output(&out);
    let (t, d) = tension_curves(&roll, &c_major_key(cfg), cfg)?;
    Ok(Generated {
        roll,
        predicted_tensile: out.tensile,
        predicted_diameter: out.diameter,
        tensile: t.values,
        diameter: d.values,
    })
}

const DECODE_CHUNK: usize = 32;

/// Decodes and hardens latent codes; chunks run in parallel, results keep input order.
pub fn generate(params: &ModelParams, zs: &[Vec<f64>], cfg: &SpiralConfig) -> Result<Vec<Generated>> {
    let chunks: Vec<Result<Vec<Generated>>> = zs
        .par_chunks(DECODE_CHUNK)
        .map(|chunk| decode_batch(chunk, params)?.into_iter().map(|o| harden(o, cfg)).collect())
        .collect();
    let mut out = Vec::with_capacity(zs.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub scale: f64,
    /// On tension recomputed from the decoded rolls.
    pub ratio: f64,
    /// On the model's own tension outputs.
    pub predicted_ratio: f64,
    pub melody_pitch_accuracy: f64,
    pub bass_pitch_accuracy: f64,
    pub melody_rhythm_f: f64,
    pub bass_rhythm_f: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub vector: String,
    pub measure: Measure,
    pub untrained_model: bool,
    pub rows: Vec<SweepRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn sweep_row(scale: f64, base: &[Generated], edited: &[Generated], measure: &Measure) -> SweepRow {
    let kind = measure.kind();
    let curves: Vec<&[f64]> = edited.iter().map(|g| g.curve(kind)).collect();
    let predicted: Vec<&[f64]> = edited.iter().map(|g| g.predicted(kind)).collect();
    let acc: Vec<(f64, f64)> = base.iter().zip(edited).map(|(a, b)| pitch_accuracy(&a.roll, &b.roll)).collect();
    let rhy: Vec<(f64, f64)> = base.iter().zip(edited).map(|(a, b)| rhythm_fscore(&a.roll, &b.roll)).collect();
    SweepRow {
        scale,
        ratio: measure.ratio(&curves),
        predicted_ratio: measure.ratio(&predicted),
        melody_pitch_accuracy: mean(acc.iter().map(|a| a.0)),
        bass_pitch_accuracy: mean(acc.iter().map(|a| a.1)),
        melody_rhythm_f: mean(rhy.iter().map(|a| a.0)),
        bass_rhythm_f: mean(rhy.iter().map(|a| a.1)),
        n: edited.len(),
    }
}

fn edited(params: &ModelParams, zs: &[Vec<f64>], v: &AttributeVector, alpha: f64, cfg: &SpiralConfig) -> Result<Vec<Generated>> {
    let moved = zs.iter().map(|z| apply_vector(z, v, alpha)).collect::<Result<Vec<_>>>()?;
    generate(params, &moved, cfg)
}

/// Ratio and similarity metrics of `z + alpha * v` against `z` for each scale,
/// over `n` latent codes sampled with `seed`.
pub fn scale_sweep(
    params: &ModelParams,
    v: &AttributeVector,
    measure: Measure,
    scales: &[f64],
    n: usize,
    seed: u64,
    trained: bool,
    cfg: &SpiralConfig,
) -> Result<SweepReport> {
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let zs = sample_latent(n, params.config.latent_dim, seed);
    let base = generate(params, &zs, cfg)?;
    let mut rows = Vec::with_capacity(scales.len());
    for &alpha in scales {
        let gen = if alpha == 0.0 { base.clone() } else { edited(params, &zs, v, alpha, cfg)? };
        rows.push(sweep_row(alpha, &base, &gen, &measure));
    }
    Ok(SweepReport { vector: v.name.clone(), measure, untrained_model: !trained, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InteractionRow {
    /// Vector that was applied.
    pub vector: String,
    pub scale: f64,
    pub tensile_ratio: f64,
    pub diameter_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InteractionReport {
    pub vectors: [String; 2],
    pub measures: [Measure; 2],
    pub untrained_model: bool,
    pub rows: Vec<InteractionRow>,
    /// Mean absolute change, relative to scale 0, of the second vector's
    /// measure while applying the first vector.
    pub first_on_second: f64,
    pub second_on_first: f64,
    /// `first_on_second - second_on_first`.
    pub asymmetry: f64,
}

/// Applies each of two vectors alone and measures both tension kinds.
///
/// `measures[0]` belongs to `a`, `measures[1]` to `b`; they must cover
/// different tension kinds.
pub fn interaction_grid(
    params: &ModelParams,
    a: &AttributeVector,
    b: &AttributeVector,
    measures: [Measure; 2],
    scales: &[f64],
    n: usize,
    seed: u64,
    trained: bool,
    cfg: &SpiralConfig,
) -> Result<InteractionReport> {
    if measures[0].kind() == measures[1].kind() {
        return Err(Error::InvalidInput("interaction needs one tensile and one diameter measure".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let by_kind = |k: TensionKind| if measures[0].kind() == k { measures[0] } else { measures[1] };
    let (mt, md) = (by_kind(TensionKind::TensileStrain), by_kind(TensionKind::CloudDiameter));
    let zs = sample_latent(n, params.config.latent_dim, seed);
    let base = generate(params, &zs, cfg)?;
    let mut rows = Vec::new();
    let mut cross = [0.0, 0.0];
    for (which, v) in [a, b].into_iter().enumerate() {
        let other = measures[1 - which];
        let at_zero = other.ratio(&base.iter().map(|g| g.curve(other.kind())).collect::<Vec<_>>());
        let mut deltas = Vec::new();
        for &alpha in scales {
            let gen = if alpha == 0.0 { base.clone() } else { edited(params, &zs, v, alpha, cfg)? };
            let ratio = |m: &Measure| m.ratio(&gen.iter().map(|g| g.curve(m.kind())).collect::<Vec<_>>());
            let (t, d) = (ratio(&mt), ratio(&md));
            deltas.push((if other.kind() == TensionKind::TensileStrain { t } else { d } - at_zero).abs());
            rows.push(InteractionRow { vector: v.name.clone(), scale: alpha, tensile_ratio: t, diameter_ratio: d });
        }
        cross[which] = mean(deltas.into_iter());
    }
    Ok(InteractionReport {
        vectors: [a.name.clone(), b.name.clone()],
        measures,
        untrained_model: !trained,
        rows,
        first_on_second: cross[0],
        second_on_first: cross[1],
        asymmetry: cross[0] - cross[1],
    })
}

pub const PITCH_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PitchDistributionReport {
    pub vector: String,
    pub scale: f64,
    pub bars: [usize; 2],
    pub untrained_model: bool,
    pub original: [u64; 12],
    pub modified: [u64; 12],
    /// Modified minus original share of each pitch class.
    pub share_difference: [f64; 12],
}

/// Pitch-class counts of `n` sampled fragments before and after `z + alpha * v`.
#[allow(clippy::too_many_arguments)]
pub fn pitch_distribution(
    params: &ModelParams,
    v: &AttributeVector,
    alpha: f64,
    bars: Range<usize>,
    n: usize,
    seed: u64,
    trained: bool,
    cfg: &SpiralConfig,
) -> Result<PitchDistributionReport> {
    let zs = sample_latent(n, params.config.latent_dim, seed);
    let base = generate(params, &zs, cfg)?;
    let gen = edited(params, &zs, v, alpha, cfg)?;
    let original = pitch_class_histogram(base.iter().map(|g| &g.roll), bars.clone())?;
    let modified = pitch_class_histogram(gen.iter().map(|g| &g.roll), bars.clone())?;
    let share = |h: &[u64; 12], i: usize| {
        let total: u64 = h.iter().sum();
        if total == 0 {
            0.0
        } else {
            h[i] as f64 / total as f64
        }
    };
    let share_difference = std::array::from_fn(|i| share(&modified, i) - share(&original, i));
    Ok(PitchDistributionReport {
        vector: v.name.clone(),
        scale: alpha,
        bars: [bars.start, bars.end],
        untrained_model: !trained,
        original,
        modified,
        share_difference,
    })
}

pub fn sweep_csv(r: &SweepReport) -> String {
    let mut s = String::from(
        "vector,scale,ratio,predicted_ratio,melody_pitch_accuracy,bass_pitch_accuracy,melody_rhythm_f,bass_rhythm_f,n\n",
    );
    for row in &r.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.vector,
            row.scale,
            row.ratio,
            row.predicted_ratio,
            row.melody_pitch_accuracy,
            row.bass_pitch_accuracy,
            row.melody_rhythm_f,
            row.bass_rhythm_f,
            row.n
        );
    }
    s
}

pub fn interaction_csv(r: &InteractionReport) -> String {
    let mut s = String::from("vector,scale,tensile_ratio,diameter_ratio\n");
    for row in &r.rows {
        let _ = writeln!(s, "{},{},{},{}", row.vector, row.scale, row.tensile_ratio, row.diameter_ratio);
    }
    s
}

pub fn pitch_distribution_csv(r: &PitchDistributionReport) -> String {
    let mut s = String::from("pitch_class,original,modified,share_difference\n");
    for i in 0..12 {
        let _ = writeln!(s, "{},{},{},{}", PITCH_NAMES[i], r.original[i], r.modified[i], r.share_difference[i]);
    }
    s
}

/// Line chart of one or more `(label, points)` series with y in [0, 1].
pub fn ratio_chart_svg(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let xs: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).collect();
    let (x0, x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| PAD + (x - x0) / span * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - y.clamp(0.0, 1.0) * (H - 2.0 * PAD);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n");
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\">{title}</text>", W / 2.0);
    let _ = writeln!(
        s,
        "<path d=\"M{PAD} {PAD} V{} H{}\" fill=\"none\" stroke=\"black\"/>",
        H - PAD,
        W - PAD
    );
    for y in [0.0, 0.5, 1.0] {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y}</text>", PAD - 6.0, py(y) + 4.0);
    }
    let mut ticks = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x}</text>", px(x), H - PAD + 16.0);
    }
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", d.join(" "));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>", W - PAD - 120.0, PAD + 16.0 * i as f64);
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Reconstruction {
    pub melody_pitch_accuracy: f64,
    pub bass_pitch_accuracy: f64,
    /// Mean squared error of the model's tension outputs.
    pub tensile_mse: f64,
    pub diameter_mse: f64,
}

/// Decodes each fragment's posterior mean and compares with the fragment.
pub fn reconstruction(params: &ModelParams, data: &FragmentDataset, ids: &[usize]) -> Result<Reconstruction> {
    if ids.is_empty() {
        return Err(Error::InvalidInput("no fragments to reconstruct".into()));
    }
    let mus = posterior_means(params, data, ids)?;
    let outs: Vec<DecoderOutput> = mus
        .chunks(DECODE_CHUNK)
        .map(|c| decode_batch(c, params))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mse = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    let mut acc = Vec::new();
    let (mut t, mut d) = (Vec::new(), Vec::new());
    for (&i, out) in ids.iter().zip(&outs) {
        let f = &data.fragments[i];
        acc.push(pitch_accuracy(&f.roll, &roll_from_output(out)));
        t.push(mse(&out.tensile, &f.tensile.values));
        d.push(mse(&out.diameter, &f.diameter.values));
    }
    Ok(Reconstruction {
        melody_pitch_accuracy: mean(acc.iter().map(|a| a.0)),
        bass_pitch_accuracy: mean(acc.iter().map(|a| a.1)),
        tensile_mse: mean(t.into_iter()),
        diameter_mse: mean(d.into_iter()),
    })
}
