//! Melody/bass track selection, 16th-grid quantization and 4-bar segmentation.

use serde::{Deserialize, Serialize};

use super::midi::{Score, ScoreTrack};
use super::roll::{NoteEvent, TrackPair, STEPS};
use crate::error::{Error, Result};

/// Tracks with fewer notes than this are not melody/bass candidates.
pub const MIN_TRACK_NOTES: usize = 8;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractOptions {
    /// Pick the melody track by (case-insensitive) name instead of mean pitch.
    pub melody_track: Option<String>,
    pub bass_track: Option<String>,
}

fn mean_pitch(t: &ScoreTrack) -> f64 {
    t.notes.iter().map(|n| n.pitch as f64).sum::<f64>() / t.notes.len() as f64
}

fn by_name<'a>(tracks: &[&'a ScoreTrack], name: &str) -> Result<&'a ScoreTrack> {
    tracks
        .iter()
        .find(|t| t.name.as_deref().is_some_and(|n| n.eq_ignore_ascii_case(name)))
        .copied()
        .ok_or_else(|| Error::InvalidSong(format!("no qualifying track named {name:?}")))
}

/// Quantizes beats to the nearest 16th step.
pub fn to_step(beats: f64) -> u32 {
    (beats * 4.0).round().max(0.0) as u32
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Keep {
    Highest,
    Lowest,
}

/// Quantizes a track and keeps a single voice: at each step the highest (or
/// lowest) sounding note wins, and notes it covers are truncated.
fn monophonize(track: &ScoreTrack, keep: Keep) -> Vec<NoteEvent> {
    let quantized: Vec<NoteEvent> = track
        .notes
        .iter()
        .map(|n| {
            let onset = to_step(n.onset);
            let end = to_step(n.end()).max(onset + 1);
            NoteEvent { pitch: n.pitch, onset, duration: end - onset }
        })
        .collect();
    let horizon = quantized.iter().map(NoteEvent::end).max().unwrap_or(0) as usize;
    let mut winner: Vec<Option<usize>> = vec![None; horizon];
    for (i, n) in quantized.iter().enumerate() {
        for slot in &mut winner[n.onset as usize..n.end() as usize] {
            let better = match *slot {
                None => true,
                Some(j) => {
                    let (a, b) = (n.pitch, quantized[j].pitch);
                    match keep {
                        Keep::Highest => a > b,
                        Keep::Lowest => a < b,
                    }
                }
            };
            if better {
                *slot = Some(i);
            }
        }
    }
    let mut out: Vec<NoteEvent> = Vec::new();
    let mut prev: Option<usize> = None;
    for (step, w) in winner.iter().enumerate() {
        match (*w, prev) {
            (Some(i), Some(p)) if i == p => out.last_mut().expect("open note").duration += 1,
            (Some(i), _) => out.push(NoteEvent { pitch: quantized[i].pitch, onset: step as u32, duration: 1 }),
            (None, _) => {}
        }
        prev = *w;
    }
    out
}

/// Picks melody (highest mean pitch) and bass (lowest mean pitch) among the
/// non-drum tracks with at least [`MIN_TRACK_NOTES`] notes.
pub fn extract_tracks(score: &Score, opts: &ExtractOptions) -> Result<TrackPair> {
    let candidates: Vec<&ScoreTrack> = score
        .tracks
        .iter()
        .filter(|t| !t.is_drum && t.notes.len() >= MIN_TRACK_NOTES)
        .collect();
    if candidates.len() < 2 {
        return Err(Error::InvalidSong(format!(
            "need two non-drum tracks with >= {MIN_TRACK_NOTES} notes, found {}",
            candidates.len()
        )));
    }
    let highest = || {
        candidates
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| mean_pitch(a).total_cmp(&mean_pitch(b)).then(j.cmp(i)))
            .map(|(i, _)| i)
            .expect("non-empty")
    };
    let lowest = || {
        candidates
            .iter()
            .enumerate()
            .min_by(|(i, a), (j, b)| mean_pitch(a).total_cmp(&mean_pitch(b)).then(i.cmp(j)))
            .map(|(i, _)| i)
            .expect("non-empty")
    };
    let melody_idx = match &opts.melody_track {
        Some(name) => {
            let t = by_name(&candidates, name)?;
            candidates.iter().position(|c| std::ptr::eq(*c, t)).expect("found")
        }
        None => highest(),
    };
    let bass_idx = match &opts.bass_track {
        Some(name) => {
            let t = by_name(&candidates, name)?;
            candidates.iter().position(|c| std::ptr::eq(*c, t)).expect("found")
        }
        None => {
            let low = lowest();
            if low == melody_idx {
                // Melody was forced onto the lowest track; take the next lowest.
                candidates
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != melody_idx)
                    .min_by(|(i, a), (j, b)| mean_pitch(a).total_cmp(&mean_pitch(b)).then(i.cmp(j)))
                    .map(|(i, _)| i)
                    .expect("two candidates")
            } else {
                low
            }
        }
    };
    if melody_idx == bass_idx {
        return Err(Error::InvalidSong("melody and bass resolve to the same track".into()));
    }
    Ok(TrackPair {
        melody: monophonize(candidates[melody_idx], Keep::Highest),
        bass: monophonize(candidates[bass_idx], Keep::Lowest),
    })
}

/// A 4/4 stretch of the song, in steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MeterRegion {
    pub start: u32,
    pub end: u32,
    pub numerator: u8,
    pub denominator: u8,
    /// Global bar number at `start`.
    pub first_bar: u32,
}

/// Splits `[0, end)` into regions of constant meter. Missing time signatures
/// mean 4/4.
pub fn meter_regions(score: &Score, end: u32) -> Vec<MeterRegion> {
    let mut changes: Vec<(u32, u8, u8)> = vec![(0, 4, 4)];
    for m in &score.meters {
        let at = to_step(m.at_beat);
        if at == 0 {
            changes[0] = (0, m.numerator, m.denominator);
        } else if at < end {
            changes.push((at, m.numerator, m.denominator));
        }
    }
    changes.sort_by_key(|c| c.0);
    changes.dedup_by_key(|c| c.0);
    let mut regions = Vec::new();
    let mut bar = 0u32;
    for (i, &(start, num, den)) in changes.iter().enumerate() {
        let stop = changes.get(i + 1).map_or(end, |c| c.0);
        if stop <= start {
            continue;
        }
        regions.push(MeterRegion { start, end: stop, numerator: num, denominator: den, first_bar: bar });
        let bar_len = (num.max(1) as u32 * 16) / den.max(1) as u32;
        bar += (stop - start).div_ceil(bar_len.max(1));
    }
    regions
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub bar_offset: u32,
    pub tracks: TrackPair,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub windows_skipped_silent: usize,
    pub warnings: Vec<String>,
}

/// Non-overlapping 4-bar windows of each 4/4 region, from the region start.
/// Trailing partial windows and windows where either track is silent are dropped.
pub fn segment(tracks: &TrackPair, regions: &[MeterRegion]) -> (Vec<Window>, Segmentation) {
    let mut windows = Vec::new();
    let mut report = Segmentation::default();
    for r in regions {
        if (r.numerator, r.denominator) != (4, 4) {
            report.warnings.push(format!(
                "skipped {}/{} region at bar {} ({} steps)",
                r.numerator,
                r.denominator,
                r.first_bar,
                r.end - r.start
            ));
            continue;
        }
        let mut start = r.start;
        while start + STEPS as u32 <= r.end {
            let w = tracks.window(start, STEPS as u32);
            if w.melody.is_empty() || w.bass.is_empty() {
                report.windows_skipped_silent += 1;
            } else {
                windows.push(Window { bar_offset: r.first_bar + (start - r.start) / 16, tracks: w });
            }
            start += STEPS as u32;
        }
    }
    (windows, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::midi::{MeterChange, TimedNote};

    fn track(name: &str, pitches: &[u8], is_drum: bool) -> ScoreTrack {
        ScoreTrack {
            name: Some(name.into()),
            channel: if is_drum { 9 } else { 0 },
            is_drum,
            notes: pitches
                .iter()
                .enumerate()
                .map(|(i, &p)| TimedNote { pitch: p, velocity: 80, onset: i as f64, duration: 1.0 })
                .collect(),
        }
    }

    fn song(bars: usize, bass_silent: bool) -> Score {
        let mut s = Score::empty(480);
        let beats = bars * 4;
        s.tracks.push(track("flute", &vec![72; beats], false));
        if bass_silent {
            // Bass enters only after the first four bars.
            s.tracks.push(track("bass", &vec![36; beats - 16], false));
            for n in &mut s.tracks[1].notes {
                n.onset += 16.0;
            }
        } else {
            s.tracks.push(track("bass", &vec![36; beats], false));
        }
        s
    }

    #[test]
    fn picks_by_mean_pitch() {
        let mut s = Score::empty(480);
        s.tracks.push(track("bass", &[36; 8], false));
        s.tracks.push(track("drums", &[90; 8], true));
        s.tracks.push(track("flute", &[79; 8], false));
        let tp = extract_tracks(&s, &ExtractOptions::default()).unwrap();
        assert!(tp.melody.iter().all(|n| n.pitch == 79));
        assert!(tp.bass.iter().all(|n| n.pitch == 36));
    }

    #[test]
    fn name_overrides() {
        let mut s = Score::empty(480);
        s.tracks.push(track("low", &[36; 8], false));
        s.tracks.push(track("mid", &[55; 8], false));
        s.tracks.push(track("high", &[79; 8], false));
        let opts = ExtractOptions { melody_track: Some("MID".into()), bass_track: None };
        let tp = extract_tracks(&s, &opts).unwrap();
        assert_eq!(tp.melody[0].pitch, 55);
        assert_eq!(tp.bass[0].pitch, 36);
        let opts = ExtractOptions { melody_track: Some("nope".into()), bass_track: None };
        assert!(extract_tracks(&s, &opts).is_err());
    }

    #[test]
    fn chord_keeps_top_note() {
        let mut s = Score::empty(480);
        let mut mel = track("keys", &[60; 8], false);
        for p in [64, 67] {
            mel.notes.push(TimedNote { pitch: p, velocity: 80, onset: 0.0, duration: 1.0 });
        }
        s.tracks.push(mel);
        s.tracks.push(track("bass", &[36; 8], false));
        let tp = extract_tracks(&s, &ExtractOptions::default()).unwrap();
        assert_eq!(tp.melody[0], NoteEvent { pitch: 67, onset: 0, duration: 4 });
        assert_eq!(tp.melody[1], NoteEvent { pitch: 60, onset: 4, duration: 4 });
    }

    #[test]
    fn covered_note_is_truncated() {
        let mut s = Score::empty(480);
        let mut mel = track("lead", &[72; 8], false);
        mel.notes[0] = TimedNote { pitch: 60, velocity: 80, onset: 0.0, duration: 2.0 };
        mel.notes[1] = TimedNote { pitch: 65, velocity: 80, onset: 0.5, duration: 0.5 };
        s.tracks.push(mel);
        s.tracks.push(track("bass", &[36; 8], false));
        let tp = extract_tracks(&s, &ExtractOptions::default()).unwrap();
        assert_eq!(
            &tp.melody[..3],
            &[
                NoteEvent { pitch: 60, onset: 0, duration: 2 },
                NoteEvent { pitch: 65, onset: 2, duration: 2 },
                NoteEvent { pitch: 60, onset: 4, duration: 4 },
            ]
        );
    }

    #[test]
    fn one_track_is_invalid() {
        let mut s = Score::empty(480);
        s.tracks.push(track("solo", &[60; 16], false));
        assert!(matches!(extract_tracks(&s, &ExtractOptions::default()), Err(Error::InvalidSong(_))));
        assert!(extract_tracks(&Score::empty(480), &ExtractOptions::default()).is_err());
    }

    fn fragments(s: &Score) -> usize {
        let tp = extract_tracks(s, &ExtractOptions::default()).unwrap();
        let regions = meter_regions(s, tp.end());
        segment(&tp, &regions).0.len()
    }

    #[test]
    fn segmentation_counts() {
        assert_eq!(fragments(&song(8, false)), 2);
        assert_eq!(fragments(&song(10, false)), 2);
        assert_eq!(fragments(&song(8, true)), 1);
        let silent_bass = TrackPair { melody: vec![NoteEvent { pitch: 60, onset: 0, duration: 64 }], bass: vec![] };
        let regions = [MeterRegion { start: 0, end: 64, numerator: 4, denominator: 4, first_bar: 0 }];
        let (w, report) = segment(&silent_bass, &regions);
        assert!(w.is_empty());
        assert_eq!(report.windows_skipped_silent, 1);
    }

    #[test]
    fn non_four_four_regions_are_skipped() {
        let mut s = song(12, false);
        s.meters.push(MeterChange { at_beat: 0.0, numerator: 3, denominator: 4 });
        s.meters.push(MeterChange { at_beat: 12.0, numerator: 4, denominator: 4 });
        let tp = extract_tracks(&s, &ExtractOptions::default()).unwrap();
        let regions = meter_regions(&s, tp.end());
        assert_eq!(regions.len(), 2);
        let (w, report) = segment(&tp, &regions);
        // 36 beats of 4/4 remain: two full windows starting at bar 4.
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].bar_offset, 4);
        assert_eq!(w[1].bar_offset, 8);
        assert_eq!(report.warnings.len(), 1);
    }
}
