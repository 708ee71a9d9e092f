use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use serde_json::{json, Value};
use ttv_core::corpus::dataset::song_fragments;
use ttv_core::corpus::midi::render_tracks;
use ttv_core::corpus::roll::STEPS;
use ttv_core::corpus::{decode_roll, write_midi, ExtractOptions, NoteEvent, TrackPair};
use ttv_core::eval::{harden, pitch_accuracy, rhythm_fscore, Generated};
use ttv_core::latent::VectorFile;
use ttv_core::vae::{decode, encode, sample_latent, Checkpoint};

use super::{invalid, read, to_json, write};
use crate::settings::Settings;
use crate::TrackArgs;

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    model: PathBuf,
    /// Needed whenever edits name a vector.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Encode this MIDI file's fragment instead of sampling the latent.
    #[arg(long)]
    seed_midi: Option<PathBuf>,
    /// Which 4-bar fragment of the seed MIDI to use.
    #[arg(long, default_value_t = 0)]
    fragment_index: usize,
    #[command(flatten)]
    tracks: TrackArgs,
    /// Output MIDI path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
struct Edit {
    vector: String,
    scale: f64,
}

fn parse_edit(s: &str) -> anyhow::Result<Edit> {
    let (name, scale) = s.split_once('=').ok_or_else(|| invalid(format!("edit {s:?} is not NAME=SCALE")))?;
    let scale: f64 = scale.trim().parse().map_err(|_| invalid(format!("edit {s:?} has a non-numeric scale")))?;
    if !scale.is_finite() {
        return Err(invalid(format!("edit {s:?} has a non-finite scale")));
    }
    Ok(Edit { vector: name.trim().to_string(), scale })
}

/// Loaded model, optional vectors and the seed latent code.
struct Session {
    ck: Checkpoint,
    vectors: Option<VectorFile>,
    seed_z: Vec<f64>,
    seed_desc: Value,
}

impl Session {
    fn open(s: &Settings, seed: Option<u64>, a: &GenArgs) -> anyhow::Result<Self> {
        let ck = Checkpoint::load(&a.model)?;
        let dim = ck.params.config.latent_dim;
        let vectors = match &a.vectors {
            Some(p) => {
                let v = VectorFile::load(p)?;
                v.check_compatible(&ck.id(), dim)?;
                Some(v)
            }
            None => None,
        };
        let (seed_z, seed_desc) = match &a.seed_midi {
            Some(path) => {
                let opts = ExtractOptions { melody_track: a.tracks.melody_track.clone(), bass_track: a.tracks.bass_track.clone() };
                let source = path.display().to_string();
                let (frags, _) = song_fragments(&read(path)?, &source, &opts, &s.spiral)?;
                let f = frags.get(a.fragment_index).ok_or_else(|| {
                    invalid(format!("{source} has {} fragments; index {} is out of range", frags.len(), a.fragment_index))
                })?;
                let z = encode(&f.roll, &ck.params)?.mu;
                (z, json!({ "midi": source, "fragment_index": a.fragment_index, "bar_offset": f.bar_offset }))
            }
            None => {
                let seed = seed.unwrap_or(0);
                (sample_latent(1, dim, seed).remove(0), json!({ "sampled": seed }))
            }
        };
        Ok(Session { ck, vectors, seed_z, seed_desc })
    }

    /// Adds the scaled vectors of `edits` into `offset`.
    fn accumulate(&self, offset: &mut [f64], edits: &[Edit]) -> anyhow::Result<()> {
        if edits.is_empty() {
            return Ok(());
        }
        let file = self.vectors.as_ref().ok_or_else(|| invalid("edits need --vectors"))?;
        for e in edits {
            let v = file.get(&e.vector)?;
            for (o, x) in offset.iter_mut().zip(&v.values) {
                *o += e.scale * x;
            }
        }
        Ok(())
    }

    /// Decodes `seed + offset`. The offset is summed before it touches the
    /// seed, so edits that cancel reproduce the seed exactly.
    fn decode_offset(&self, s: &Settings, offset: &[f64]) -> anyhow::Result<Generated> {
        let z: Vec<f64> = self.seed_z.iter().zip(offset).map(|(a, b)| a + b).collect();
        Ok(harden(decode(&z, &self.ck.params)?, &s.spiral)?)
    }
}

fn tension_json(g: &Generated) -> Value {
    json!({
        "tensile_strain": g.tensile,
        "cloud_diameter": g.diameter,
        "predicted_tensile_strain": g.predicted_tensile,
        "predicted_cloud_diameter": g.predicted_diameter,
    })
}

fn comparison(a: &Generated, b: &Generated) -> Value {
    let (mp, bp) = pitch_accuracy(&a.roll, &b.roll);
    let (mr, br) = rhythm_fscore(&a.roll, &b.roll);
    json!({ "melody_pitch_accuracy": mp, "bass_pitch_accuracy": bp, "melody_rhythm_f": mr, "bass_rhythm_f": br })
}

fn shifted(notes: &[NoteEvent], by: u32) -> impl Iterator<Item = NoteEvent> + '_ {
    notes.iter().map(move |n| NoteEvent { onset: n.onset + by, ..*n })
}

/// Writes blocks back to back. An end marker pins the file length to whole
/// blocks even when the last one ends in rests.
fn write_blocks(path: &Path, blocks: &[&Generated], mut markers: Vec<(u32, String)>) -> anyhow::Result<()> {
    let mut song = TrackPair::default();
    for (i, g) in blocks.iter().enumerate() {
        let tp = decode_roll(&g.roll)?;
        let at = (i * STEPS) as u32;
        song.melody.extend(shifted(&tp.melody, at));
        song.bass.extend(shifted(&tp.bass, at));
    }
    markers.push(((blocks.len() * STEPS) as u32, "end".into()));
    write(path, write_midi(&render_tracks(&song, &markers))?)?;
    Ok(())
}

fn report_path(out: &Path, report: Option<PathBuf>) -> PathBuf {
    report.unwrap_or_else(|| out.with_extension("json"))
}

pub fn generate(s: &Settings, seed: Option<u64>, a: &GenArgs, edits: &[String], report: Option<PathBuf>) -> anyhow::Result<Value> {
    let edits = edits.iter().map(|e| parse_edit(e)).collect::<anyhow::Result<Vec<_>>>()?;
    let session = Session::open(s, seed, a)?;
    let zero = vec![0.0; session.seed_z.len()];
    let mut offset = zero.clone();
    session.accumulate(&mut offset, &edits)?;
    let original = session.decode_offset(s, &zero)?;
    let modified = session.decode_offset(s, &offset)?;
    write_blocks(&a.out, &[&modified], Vec::new())?;

    let report_file = report_path(&a.out, report);
    let full = json!({
        "checkpoint_id": session.ck.id(),
        "untrained_model": !session.ck.schedule.trained,
        "seed": session.seed_desc,
        "edits": edits,
        "midi": a.out.display().to_string(),
        "original": tension_json(&original),
        "modified": tension_json(&modified),
        "similarity": comparison(&original, &modified),
    });
    write(&report_file, to_json(&full))?;
    Ok(json!({
        "midi": a.out.display().to_string(),
        "report": report_file.display().to_string(),
        "checkpoint_id": session.ck.id(),
        "seed": session.seed_desc,
        "edits": edits.len(),
        "similarity": full["similarity"],
    }))
}

struct Section {
    bars: usize,
    edits: Vec<Edit>,
}

fn parse_section(s: &str) -> anyhow::Result<Section> {
    let (bars, rest) = match s.split_once(':') {
        Some((b, r)) => (b, r),
        None => (s, ""),
    };
    let bars: usize = bars.trim().parse().map_err(|_| invalid(format!("section {s:?} does not start with a bar count")))?;
    if bars == 0 || bars % 4 != 0 {
        return Err(invalid(format!("section {s:?}: bar count must be a positive multiple of 4")));
    }
    let edits = rest.split(',').filter(|e| !e.trim().is_empty()).map(parse_edit).collect::<anyhow::Result<Vec<_>>>()?;
    Ok(Section { bars, edits })
}

pub fn compose_chain(
    s: &Settings,
    seed: Option<u64>,
    a: &GenArgs,
    sections: &[String],
    report: Option<PathBuf>,
) -> anyhow::Result<Value> {
    let plan = sections.iter().map(|p| parse_section(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let session = Session::open(s, seed, a)?;
    let mut offset = vec![0.0; session.seed_z.len()];
    let mut decoded = Vec::with_capacity(plan.len());
    for sec in &plan {
        session.accumulate(&mut offset, &sec.edits)?;
        decoded.push(session.decode_offset(s, &offset)?);
    }

    let mut blocks = Vec::new();
    let mut markers = Vec::new();
    let mut section_reports = Vec::new();
    for (i, (sec, g)) in plan.iter().zip(&decoded).enumerate() {
        let start_bar = blocks.len() * 4;
        // A lone section has no boundaries to mark, so its file matches `generate`.
        if plan.len() > 1 {
            markers.push(((start_bar * 16) as u32, format!("section {}", i + 1)));
        }
        blocks.extend(std::iter::repeat(g).take(sec.bars / 4));
        section_reports.push(json!({
            "section": i + 1,
            "start_bar": start_bar,
            "bars": sec.bars,
            "edits": sec.edits,
            "tension": tension_json(g),
        }));
    }
    write_blocks(&a.out, &blocks, markers)?;
    let total_bars = blocks.len() * 4;
    let report_file = report_path(&a.out, report);
    let full = json!({
        "checkpoint_id": session.ck.id(),
        "untrained_model": !session.ck.schedule.trained,
        "seed": session.seed_desc,
        "midi": a.out.display().to_string(),
        "total_bars": total_bars,
        "sections": section_reports,
    });
    write(&report_file, to_json(&full))?;
    Ok(json!({
        "midi": a.out.display().to_string(),
        "report": report_file.display().to_string(),
        "total_bars": total_bars,
        "blocks": blocks.len(),
        "sections": plan.len(),
    }))
}
