//! Krumhansl-Schmuckler key finding and normalization to C major / A minor.

use serde::{Deserialize, Serialize};

use super::midi::Score;
use crate::error::{Error, Result};
pub use crate::spiral::Mode;

/// Krumhansl-Kessler probe-tone profiles, tonic first.
pub const MAJOR_PROFILE: [f64; 12] = [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
pub const MINOR_PROFILE: [f64; 12] = [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Key {
    pub tonic: u8,
    pub mode: Mode,
}

impl Key {
    pub fn new(tonic: u8, mode: Mode) -> Result<Self> {
        if tonic > 11 {
            return Err(Error::InvalidInput(format!("tonic {tonic} not in 0..11")));
        }
        Ok(Self { tonic, mode })
    }

    pub fn name(&self) -> String {
        const NAMES: [&str; 12] = ["C", "Db", "D", "Eb", "E", "F", "F#", "G", "Ab", "A", "Bb", "B"];
        let mode = match self.mode {
            Mode::Major => "major",
            Mode::Minor => "minor",
        };
        format!("{} {mode}", NAMES[self.tonic as usize])
    }
}

/// Duration-weighted pitch-class histogram of the non-drum notes.
pub fn pitch_class_histogram(score: &Score) -> [f64; 12] {
    let mut hist = [0.0; 12];
    for track in score.tracks.iter().filter(|t| !t.is_drum) {
        for n in &track.notes {
            hist[(n.pitch % 12) as usize] += n.duration;
        }
    }
    hist
}

fn pearson(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    let ma = a.iter().sum::<f64>() / 12.0;
    let mb = b.iter().sum::<f64>() / 12.0;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for i in 0..12 {
        let (x, y) = (a[i] - ma, b[i] - mb);
        num += x * y;
        da += x * x;
        db += y * y;
    }
    if da == 0.0 || db == 0.0 {
        return 0.0;
    }
    num / (da * db).sqrt()
}

/// Best of the 24 key profiles for a histogram. Ties go to major, then to the
/// lower tonic.
pub fn key_from_histogram(hist: &[f64; 12]) -> Result<Key> {
    if hist.iter().all(|&h| h <= 0.0) {
        return Err(Error::NoKey("no pitched material".into()));
    }
    let mut best: Option<(f64, Key)> = None;
    for (mode, profile) in [(Mode::Major, &MAJOR_PROFILE), (Mode::Minor, &MINOR_PROFILE)] {
        for tonic in 0..12u8 {
            let mut rotated = [0.0; 12];
            for (pc, slot) in rotated.iter_mut().enumerate() {
                *slot = profile[(pc + 12 - tonic as usize) % 12];
            }
            let r = pearson(hist, &rotated);
            if best.map_or(true, |(b, _)| r > b) {
                best = Some((r, Key { tonic, mode }));
            }
        }
    }
    Ok(best.expect("24 candidates").1)
}

pub fn detect_key(score: &Score) -> Result<Key> {
    key_from_histogram(&pitch_class_histogram(score))
}

/// Signed semitone shift of smallest magnitude taking the tonic to C (major)
/// or A (minor). A tritone goes down.
pub fn shift_to_c(key: Key) -> i32 {
    let target = match key.mode {
        Mode::Major => 0,
        Mode::Minor => 9,
    };
    let up = (target - key.tonic as i32).rem_euclid(12);
    if up >= 6 {
        up - 12
    } else {
        up
    }
}

pub fn transpose_to_c(score: &Score, key: Key) -> Score {
    score.transposed(shift_to_c(key))
}
