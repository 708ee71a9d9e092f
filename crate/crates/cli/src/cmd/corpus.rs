use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};
use ttv_core::corpus::dataset::song_fragments;
use ttv_core::corpus::{build_dataset, ExtractOptions};

use super::{read, write};
use crate::settings::Settings;
use crate::TrackArgs;

fn options(t: &TrackArgs) -> ExtractOptions {
    ExtractOptions { melody_track: t.melody_track.clone(), bass_track: t.bass_track.clone() }
}

/// Writes the curves as CSV to `out`. Without `out` the curves go to stdout,
/// as CSV or (with `json`) inside the summary, and nothing else is printed.
pub fn analyze(s: &Settings, midi: &Path, tracks: &TrackArgs, out: Option<&Path>, json: bool) -> anyhow::Result<Value> {
    let source = midi.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let (fragments, warnings) = song_fragments(&read(midi)?, &source, &options(tracks), &s.spiral)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut summary = json!({
        "source": source,
        "fragments": fragments.len(),
        "original_key": fragments.first().and_then(|f| f.original_key),
        "warnings": warnings,
    });
    match (out, json) {
        (Some(p), _) => {
            let mut csv = String::from("fragment,bar_offset,step,tensile_strain,cloud_diameter\n");
            for (i, f) in fragments.iter().enumerate() {
                for (step, (t, d)) in f.tensile.values.iter().zip(&f.diameter.values).enumerate() {
                    let _ = writeln!(csv, "{i},{},{step},{t},{d}", f.bar_offset);
                }
            }
            write(p, &csv)?;
            summary["out"] = json!(p.display().to_string());
            Ok(summary)
        }
        (None, true) => {
            summary["curves"] = fragments
                .iter()
                .map(|f| json!({ "bar_offset": f.bar_offset, "tensile_strain": f.tensile.values, "cloud_diameter": f.diameter.values }))
                .collect();
            Ok(summary)
        }
        (None, false) => {
            println!("fragment,bar_offset,step,tensile_strain,cloud_diameter");
            for (i, f) in fragments.iter().enumerate() {
                for (step, (t, d)) in f.tensile.values.iter().zip(&f.diameter.values).enumerate() {
                    println!("{i},{},{step},{t},{d}", f.bar_offset);
                }
            }
            Ok(Value::Null)
        }
    }
}

pub fn preprocess(s: &Settings, input: &Path, out: &Path, tracks: &TrackArgs) -> anyhow::Result<Value> {
    let (ds, report) = build_dataset(input, &options(tracks), &s.spiral)?;
    if ds.is_empty() {
        log::warn!("no fragments extracted from {}", input.display());
    }
    ds.save(out, &report)?;
    Ok(json!({
        "dataset": out.display().to_string(),
        "fragments": ds.len(),
        "files_seen": report.files_seen,
        "files_used": report.files_used,
        "files_skipped": report.skipped.len(),
        "warnings": report.warnings.len(),
    }))
}
