//! Standard MIDI File reading and writing.
//!
//! Event decoding and encoding go through `midly`; the chunk framing is checked
//! here first so malformed files are reported with a byte offset.

use midly::num::{u15, u24, u28, u4, u7};
use midly::{Format, Header, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};
use serde::{Deserialize, Serialize};

use super::roll::{NoteEvent, TrackPair};
use crate::error::{Error, Result};

pub const DRUM_CHANNEL: u8 = 9;
const DEFAULT_TEMPO: u32 = 500_000;

/// A note with onset and duration in quarter-note beats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedNote {
    pub pitch: u8,
    pub velocity: u8,
    pub onset: f64,
    pub duration: f64,
}

impl TimedNote {
    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

/// The notes of one channel within one track chunk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrack {
    pub name: Option<String>,
    pub channel: u8,
    pub is_drum: bool,
    pub notes: Vec<TimedNote>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TempoChange {
    pub at_beat: f64,
    pub micros_per_quarter: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeterChange {
    pub at_beat: f64,
    pub numerator: u8,
    pub denominator: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub ticks_per_quarter: u16,
    pub tracks: Vec<ScoreTrack>,
    pub tempos: Vec<TempoChange>,
    pub meters: Vec<MeterChange>,
    pub markers: Vec<(f64, String)>,
}

impl Score {
    pub fn empty(ticks_per_quarter: u16) -> Self {
        Self {
            ticks_per_quarter,
            tracks: Vec::new(),
            tempos: Vec::new(),
            meters: Vec::new(),
            markers: Vec::new(),
        }
    }

    /// Every pitch of every non-drum track moved by `semitones`, folded into
    /// 0..=127 by octaves.
    pub fn transposed(&self, semitones: i32) -> Score {
        let mut out = self.clone();
        for track in out.tracks.iter_mut().filter(|t| !t.is_drum) {
            for n in &mut track.notes {
                n.pitch = super::roll::shift_pitch(n.pitch, semitones);
            }
        }
        out
    }
}

fn be_u16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn framing_error(offset: usize, message: impl Into<String>) -> Error {
    Error::MidiParse { offset, message: message.into() }
}

/// Validates header and chunk framing; returns the byte offset of each track chunk.
fn scan_chunks(bytes: &[u8]) -> Result<Vec<usize>> {
    if bytes.len() < 14 {
        return Err(framing_error(0, "file shorter than a MIDI header"));
    }
    if &bytes[0..4] != b"MThd" {
        return Err(framing_error(0, "missing MThd header"));
    }
    let header_len = be_u32(bytes, 4) as usize;
    if header_len < 6 || 8 + header_len > bytes.len() {
        return Err(framing_error(4, format!("bad header length {header_len}")));
    }
    let format = be_u16(bytes, 8);
    if format > 2 {
        return Err(framing_error(8, format!("unknown format {format}")));
    }
    if format == 2 {
        return Err(Error::UnsupportedFormat("format 2 (sequential) files".into()));
    }
    let declared = be_u16(bytes, 10) as usize;
    let division = be_u16(bytes, 12);
    if division & 0x8000 != 0 {
        return Err(Error::UnsupportedFormat("SMPTE timing".into()));
    }
    if division == 0 {
        return Err(framing_error(12, "zero ticks per quarter note"));
    }
    let mut at = 8 + header_len;
    let mut tracks = Vec::new();
    while at < bytes.len() {
        if at + 8 > bytes.len() {
            return Err(framing_error(at, "truncated chunk header"));
        }
        let len = be_u32(bytes, at + 4) as usize;
        if at + 8 + len > bytes.len() {
            return Err(framing_error(at, format!("chunk length {len} runs past end of file")));
        }
        if &bytes[at..at + 4] == b"MTrk" {
            tracks.push(at);
        }
        at += 8 + len;
    }
    if tracks.len() < declared {
        return Err(framing_error(
            bytes.len(),
            format!("header declares {declared} tracks, found {}", tracks.len()),
        ));
    }
    Ok(tracks)
}

/// Parses an SMF (format 0 or 1, PPQN timing) into per-channel note tracks.
pub fn parse_midi(bytes: &[u8]) -> Result<Score> {
    let offsets = scan_chunks(bytes)?;
    let (header, track_iter) = midly::parse(bytes).map_err(|e| framing_error(0, e.to_string()))?;
    let tpq = match header.timing {
        Timing::Metrical(t) => t.as_int(),
        Timing::Timecode(..) => return Err(Error::UnsupportedFormat("SMPTE timing".into())),
    };
    let mut score = Score::empty(tpq);
    let beat = |tick: u64| tick as f64 / tpq as f64;
    for (index, events) in track_iter.enumerate() {
        let offset = offsets.get(index).copied().unwrap_or(0);
        let events = events.map_err(|e| framing_error(offset, format!("track {index}: {e}")))?;
        let mut name = None;
        let mut tick: u64 = 0;
        // (channel, key) -> stack of (start tick, velocity)
        let mut open: std::collections::BTreeMap<(u8, u8), Vec<(u64, u8)>> = Default::default();
        let mut per_channel: std::collections::BTreeMap<u8, Vec<TimedNote>> = Default::default();
        let close = |per_channel: &mut std::collections::BTreeMap<u8, Vec<TimedNote>>, ch: u8, key: u8, start: u64, vel: u8, end: u64| {
            per_channel.entry(ch).or_default().push(TimedNote {
                pitch: key,
                velocity: vel,
                onset: beat(start),
                duration: beat(end.saturating_sub(start)),
            });
        };
        for ev in events {
            let ev = ev.map_err(|e| framing_error(offset, format!("track {index}: {e}")))?;
            tick += ev.delta.as_int() as u64;
            match ev.kind {
                TrackEventKind::Midi { channel, message } => {
                    let ch = channel.as_int();
                    match message {
                        MidiMessage::NoteOn { key, vel } if vel.as_int() > 0 => {
                            open.entry((ch, key.as_int())).or_default().push((tick, vel.as_int()));
                        }
                        MidiMessage::NoteOn { key, .. } | MidiMessage::NoteOff { key, .. } => {
                            let stack = open.entry((ch, key.as_int())).or_default();
                            if !stack.is_empty() {
                                let (start, vel) = stack.remove(0);
                                close(&mut per_channel, ch, key.as_int(), start, vel, tick);
                            }
                        }
                        _ => {}
                    }
                }
                TrackEventKind::Meta(meta) => match meta {
                    MetaMessage::TrackName(raw) if name.is_none() => {
                        name = Some(String::from_utf8_lossy(raw).trim().to_string());
                    }
                    MetaMessage::Tempo(t) => score.tempos.push(TempoChange {
                        at_beat: beat(tick),
                        micros_per_quarter: t.as_int(),
                    }),
                    MetaMessage::TimeSignature(num, den_pow, _, _) => score.meters.push(MeterChange {
                        at_beat: beat(tick),
                        numerator: num,
                        denominator: 1u8.checked_shl(den_pow as u32).unwrap_or(0),
                    }),
                    MetaMessage::Marker(raw) => {
                        score.markers.push((beat(tick), String::from_utf8_lossy(raw).to_string()));
                    }
                    _ => {}
                },
                _ => {}
            }
        }
        // Notes never switched off end with the track.
        for ((ch, key), stack) in open {
            for (start, vel) in stack {
                close(&mut per_channel, ch, key, start, vel, tick);
            }
        }
        for (channel, mut notes) in per_channel {
            notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));
            score.tracks.push(ScoreTrack {
                name: name.clone(),
                channel,
                is_drum: channel == DRUM_CHANNEL,
                notes,
            });
        }
    }
    score.tempos.sort_by(|a, b| a.at_beat.total_cmp(&b.at_beat));
    score.meters.sort_by(|a, b| a.at_beat.total_cmp(&b.at_beat));
    Ok(score)
}

fn to_tick(beats: f64, tpq: u16) -> u64 {
    (beats * tpq as f64).round().max(0.0) as u64
}

/// Writes a format-1 file: a conductor track followed by one chunk per score track.
pub fn write_midi(score: &Score) -> Result<Vec<u8>> {
    let tpq = score.ticks_per_quarter;
    let mut smf = Smf::new(Header::new(Format::Parallel, Timing::Metrical(u15::from(tpq))));

    let mut conductor: Vec<(u64, TrackEventKind)> = Vec::new();
    for t in &score.tempos {
        conductor.push((to_tick(t.at_beat, tpq), TrackEventKind::Meta(MetaMessage::Tempo(u24::from(t.micros_per_quarter)))));
    }
    for m in &score.meters {
        let pow = (m.denominator.max(1) as f64).log2().round() as u8;
        conductor.push((
            to_tick(m.at_beat, tpq),
            TrackEventKind::Meta(MetaMessage::TimeSignature(m.numerator, pow, 24, 8)),
        ));
    }
    for (at, text) in &score.markers {
        conductor.push((to_tick(*at, tpq), TrackEventKind::Meta(MetaMessage::Marker(text.as_bytes()))));
    }
    smf.tracks.push(sequence(conductor));

    for track in &score.tracks {
        let ch = u4::from(track.channel & 0x0f);
        let mut events: Vec<(u64, u8, TrackEventKind)> = Vec::new();
        for n in &track.notes {
            let key = u7::from(n.pitch & 0x7f);
            let on = to_tick(n.onset, tpq);
            let off = to_tick(n.end(), tpq).max(on + 1);
            events.push((on, 1, TrackEventKind::Midi { channel: ch, message: MidiMessage::NoteOn { key, vel: u7::from(n.velocity.clamp(1, 127)) } }));
            events.push((off, 0, TrackEventKind::Midi { channel: ch, message: MidiMessage::NoteOff { key, vel: u7::from(0) } }));
        }
        // Note-offs sort ahead of note-ons at the same tick.
        events.sort_by_key(|(t, order, kind)| (*t, *order, note_key(kind)));
        let mut chunk: Vec<(u64, TrackEventKind)> = Vec::new();
        if let Some(name) = &track.name {
            chunk.push((0, TrackEventKind::Meta(MetaMessage::TrackName(name.as_bytes()))));
        }
        chunk.extend(events.into_iter().map(|(t, _, k)| (t, k)));
        smf.tracks.push(sequence(chunk));
    }

    let mut out = Vec::new();
    smf.write_std(&mut out).map_err(|e| Error::InvalidInput(format!("cannot encode MIDI: {e}")))?;
    Ok(out)
}

fn note_key(kind: &TrackEventKind) -> u8 {
    match kind {
        TrackEventKind::Midi { message: MidiMessage::NoteOn { key, .. } | MidiMessage::NoteOff { key, .. }, .. } => key.as_int(),
        _ => 0,
    }
}

/// Turns absolute-tick events (already in order) into a delta-timed track.
fn sequence(events: Vec<(u64, TrackEventKind<'_>)>) -> Vec<TrackEvent<'_>> {
    let mut events = events;
    events.sort_by_key(|(t, _)| *t);
    let mut last = 0u64;
    let mut out = Vec::with_capacity(events.len() + 1);
    for (t, kind) in events {
        out.push(TrackEvent { delta: u28::from((t - last) as u32), kind });
        last = t;
    }
    out.push(TrackEvent { delta: u28::from(0), kind: TrackEventKind::Meta(MetaMessage::EndOfTrack) });
    out
}

pub const RENDER_TICKS_PER_QUARTER: u16 = 480;
pub const RENDER_VELOCITY: u8 = 80;
pub const RENDER_TEMPO_BPM: u32 = 120;

/// A two-track (melody, bass) 4/4 score at 120 BPM from step-timed notes.
/// `markers` are (step, text) section labels.
pub fn render_tracks(tracks: &TrackPair, markers: &[(u32, String)]) -> Score {
    let to_timed = |notes: &[NoteEvent]| {
        notes
            .iter()
            .map(|n| TimedNote {
                pitch: n.pitch,
                velocity: RENDER_VELOCITY,
                onset: n.onset as f64 / 4.0,
                duration: n.duration as f64 / 4.0,
            })
            .collect::<Vec<_>>()
    };
    let mut score = Score::empty(RENDER_TICKS_PER_QUARTER);
    score.tempos.push(TempoChange { at_beat: 0.0, micros_per_quarter: 60_000_000 / RENDER_TEMPO_BPM });
    score.meters.push(MeterChange { at_beat: 0.0, numerator: 4, denominator: 4 });
    score.markers = markers.iter().map(|(s, t)| (*s as f64 / 4.0, t.clone())).collect();
    score.tracks.push(ScoreTrack { name: Some("melody".into()), channel: 0, is_drum: false, notes: to_timed(&tracks.melody) });
    score.tracks.push(ScoreTrack { name: Some("bass".into()), channel: 1, is_drum: false, notes: to_timed(&tracks.bass) });
    score
}

/// Tempo in effect at the start of the score, microseconds per quarter.
pub fn initial_tempo(score: &Score) -> u32 {
    score.tempos.first().filter(|t| t.at_beat == 0.0).map_or(DEFAULT_TEMPO, |t| t.micros_per_quarter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_note_score() -> Score {
        let mut s = Score::empty(96);
        s.tracks.push(ScoreTrack {
            name: Some("lead".into()),
            channel: 0,
            is_drum: false,
            notes: vec![TimedNote { pitch: 60, velocity: 90, onset: 0.0, duration: 1.0 }],
        });
        s
    }

    #[test]
    fn single_quarter_note() {
        let bytes = write_midi(&one_note_score()).unwrap();
        let parsed = parse_midi(&bytes).unwrap();
        assert_eq!(parsed.tracks.len(), 1);
        let n = parsed.tracks[0].notes[0];
        assert_eq!((n.pitch, n.onset, n.duration), (60, 0.0, 1.0));
        assert_eq!(parsed.tracks[0].name.as_deref(), Some("lead"));
    }

    #[test]
    fn empty_score_round_trips() {
        let bytes = write_midi(&Score::empty(480)).unwrap();
        let parsed = parse_midi(&bytes).unwrap();
        assert!(parsed.tracks.is_empty());
    }

    #[test]
    fn round_trip_is_stable() {
        let mut s = one_note_score();
        s.tracks[0].notes.push(TimedNote { pitch: 64, velocity: 70, onset: 0.5, duration: 2.25 });
        s.tracks.push(ScoreTrack {
            name: None,
            channel: DRUM_CHANNEL,
            is_drum: true,
            notes: vec![TimedNote { pitch: 36, velocity: 100, onset: 1.0, duration: 0.25 }],
        });
        s.meters.push(MeterChange { at_beat: 0.0, numerator: 3, denominator: 4 });
        let first = parse_midi(&write_midi(&s).unwrap()).unwrap();
        let second = parse_midi(&write_midi(&first).unwrap()).unwrap();
        assert_eq!(first, second);
        assert!(first.tracks[1].is_drum);
        assert_eq!(first.meters[0].numerator, 3);
        assert_eq!(first.meters[0].denominator, 4);
    }

    #[test]
    fn framing_errors_carry_offsets() {
        assert!(matches!(parse_midi(b"RIFF0000000000"), Err(Error::MidiParse { offset: 0, .. })));
        let mut bytes = write_midi(&one_note_score()).unwrap();
        let len = bytes.len();
        bytes.truncate(len - 3);
        match parse_midi(&bytes) {
            Err(Error::MidiParse { offset, .. }) => assert!(offset >= 14),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn smpte_rejected() {
        let mut bytes = write_midi(&one_note_score()).unwrap();
        bytes[12] = 0xE7;
        bytes[13] = 40;
        assert!(matches!(parse_midi(&bytes), Err(Error::UnsupportedFormat(_))));
    }
}
