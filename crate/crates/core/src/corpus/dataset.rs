//! The fragment dataset: binary file plus JSON sidecar, and the batch builder
//! that produces it from a directory of MIDI files.
//!
//! Binary layout (little-endian): `b"TVAE"`, version `u16`, fragment count
//! `u32`, then per fragment 64 x 89 roll bytes row-major, 64 `f32` tensile
//! strain values and 64 `f32` cloud diameter values.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::extract::{extract_tracks, meter_regions, segment, ExtractOptions};
use super::key::{detect_key, transpose_to_c, Key};
use super::midi::parse_midi;
use super::roll::{encode_roll, PianoRoll, FEATURES, STEPS};
use crate::error::{Error, Result};
use crate::spiral::{c_major_key, tension_curves, SpiralConfig, TensionCurve, TensionKind};

pub const MAGIC: &[u8; 4] = b"TVAE";
pub const VERSION: u16 = 1;
const FRAGMENT_BYTES: usize = STEPS * FEATURES + 2 * STEPS * 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Fragment {
    pub roll: PianoRoll,
    pub tensile: TensionCurve,
    pub diameter: TensionCurve,
    pub source: String,
    pub bar_offset: u32,
    pub original_key: Option<Key>,
}

impl Fragment {
    /// Builds a fragment from a roll, measuring tension against C major.
    pub fn from_roll(roll: PianoRoll, source: impl Into<String>, bar_offset: u32, cfg: &SpiralConfig) -> Result<Self> {
        let (tensile, diameter) = tension_curves(&roll, &c_major_key(cfg), cfg)?;
        Ok(Self { roll, tensile, diameter, source: source.into(), bar_offset, original_key: None })
    }

    pub fn curve(&self, kind: TensionKind) -> &TensionCurve {
        match kind {
            TensionKind::TensileStrain => &self.tensile,
            TensionKind::CloudDiameter => &self.diameter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub source: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub files_seen: usize,
    pub files_used: usize,
    pub skipped: Vec<SkipRecord>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FragmentDataset {
    pub fragments: Vec<Fragment>,
}

#[derive(Serialize, Deserialize)]
struct SidecarFragment {
    source: String,
    bar_offset: u32,
    original_key: Option<Key>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    version: u16,
    fragments: Vec<SidecarFragment>,
    skip_report: SkipReport,
}

/// Path of the JSON sidecar that accompanies a dataset file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

impl FragmentDataset {
    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + self.fragments.len() * FRAGMENT_BYTES);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.fragments.len() as u32).to_le_bytes());
        for f in &self.fragments {
            out.extend_from_slice(f.roll.as_bytes());
            for v in f.tensile.values.iter().chain(&f.diameter.values) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Decodes the binary file; sources and keys come from the sidecar if given.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(Error::Dataset("missing TVAE magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Dataset(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let body = &bytes[10..];
        if body.len() != count * FRAGMENT_BYTES {
            return Err(Error::Dataset(format!(
                "expected {} bytes for {count} fragments, found {}",
                count * FRAGMENT_BYTES,
                body.len()
            )));
        }
        let mut fragments = Vec::with_capacity(count);
        for (i, chunk) in body.chunks_exact(FRAGMENT_BYTES).enumerate() {
            let roll = PianoRoll::from_bytes(&chunk[..STEPS * FEATURES])?;
            let floats: Vec<f64> = chunk[STEPS * FEATURES..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect();
            fragments.push(Fragment {
                roll,
                tensile: TensionCurve::new(TensionKind::TensileStrain, floats[..STEPS].to_vec())?,
                diameter: TensionCurve::new(TensionKind::CloudDiameter, floats[STEPS..].to_vec())?,
                source: format!("fragment-{i}"),
                bar_offset: 0,
                original_key: None,
            });
        }
        Ok(Self { fragments })
    }

    pub fn save(&self, path: &Path, report: &SkipReport) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let sidecar = Sidecar {
            version: VERSION,
            fragments: self
                .fragments
                .iter()
                .map(|f| SidecarFragment { source: f.source.clone(), bar_offset: f.bar_offset, original_key: f.original_key })
                .collect(),
            skip_report: report.clone(),
        };
        let side = sidecar_path(path);
        let json = serde_json::to_vec_pretty(&sidecar)?;
        fs::write(&side, json).map_err(|e| Error::io(side, e))?;
        Ok(())
    }

    /// Loads a dataset file and, when present, its sidecar metadata.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut ds = Self::from_bytes(&bytes)?;
        let side = sidecar_path(path);
        if side.exists() {
            let raw = fs::read(&side).map_err(|e| Error::io(&side, e))?;
            let sidecar: Sidecar = serde_json::from_slice(&raw)?;
            if sidecar.fragments.len() != ds.len() {
                return Err(Error::Dataset(format!(
                    "sidecar lists {} fragments, dataset has {}",
                    sidecar.fragments.len(),
                    ds.len()
                )));
            }
            for (f, meta) in ds.fragments.iter_mut().zip(sidecar.fragments) {
                f.source = meta.source;
                f.bar_offset = meta.bar_offset;
                f.original_key = meta.original_key;
            }
        }
        Ok(ds)
    }
}

/// Fragments of one song: parse, key-normalize, extract, segment, encode, measure.
pub fn song_fragments(bytes: &[u8], source: &str, opts: &ExtractOptions, cfg: &SpiralConfig) -> Result<(Vec<Fragment>, Vec<String>)> {
    let score = parse_midi(bytes)?;
    let key = detect_key(&score)?;
    let score = transpose_to_c(&score, key);
    let tracks = extract_tracks(&score, opts)?;
    let regions = meter_regions(&score, tracks.end());
    let (windows, seg) = segment(&tracks, &regions);
    let c_major = c_major_key(cfg);
    let fragments = windows
        .into_iter()
        .map(|w| {
            let roll = encode_roll(&w.tracks);
            let (tensile, diameter) = tension_curves(&roll, &c_major, cfg)?;
            Ok(Fragment { roll, tensile, diameter, source: source.to_string(), bar_offset: w.bar_offset, original_key: Some(key) })
        })
        .collect::<Result<Vec<_>>>()?;
    let warnings = seg.warnings.into_iter().map(|w| format!("{source}: {w}")).collect();
    Ok((fragments, warnings))
}

fn is_midi(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
}

/// Runs the per-song pipeline over every `.mid` file in `dir` (sorted by file
/// name). Failing files are recorded in the skip report, never fatal.
pub fn build_dataset(dir: &Path, opts: &ExtractOptions, cfg: &SpiralConfig) -> Result<(FragmentDataset, SkipReport)> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_midi(p))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let results: Vec<(String, Result<(Vec<Fragment>, Vec<String>)>)> = files
        .par_iter()
        .map(|path| {
            let source = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let outcome = fs::read(path)
                .map_err(|e| Error::io(path, e))
                .and_then(|bytes| song_fragments(&bytes, &source, opts, cfg));
            (source, outcome)
        })
        .collect();

    let mut report = SkipReport { files_seen: files.len(), ..Default::default() };
    let mut ds = FragmentDataset::default();
    for (source, outcome) in results {
        match outcome {
            Ok((frags, warnings)) => {
                report.files_used += 1;
                report.warnings.extend(warnings);
                ds.fragments.extend(frags);
            }
            Err(e) => {
                log::warn!("skipping {source}: {e}");
                report.skipped.push(SkipRecord { source, reason: e.to_string() });
            }
        }
    }
    Ok((ds, report))
}
