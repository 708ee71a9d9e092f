//! The 64 x 89 melody/bass piano roll and its note-level inverse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 16th-note steps in a 4-bar 4/4 fragment.
pub const STEPS: usize = 64;
pub const FEATURES: usize = 89;

/// Lowest and highest encodable melody pitch (MIDI numbers, inclusive).
pub const MELODY_LOW: u8 = 24;
pub const MELODY_HIGH: u8 = 96;
pub const MELODY_PITCHES: usize = 74;
pub const MELODY_REST: usize = 73;
pub const MELODY_ONSET: usize = 74;
pub const BASS_OFFSET: usize = 75;
pub const BASS_PITCHES: usize = 13;
pub const BASS_REST: usize = 12;
pub const BASS_ONSET: usize = 88;

/// MIDI pitch of the bass octave used when realizing pitch classes (C2).
pub const BASS_OCTAVE_BASE: u8 = 36;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: u8,
    /// Start, in 16th steps.
    pub onset: u32,
    /// Length, in 16th steps (at least 1).
    pub duration: u32,
}

impl NoteEvent {
    pub fn end(&self) -> u32 {
        self.onset + self.duration
    }
}

/// Monophonic melody and bass note lists, each sorted and non-overlapping.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackPair {
    pub melody: Vec<NoteEvent>,
    pub bass: Vec<NoteEvent>,
}

impl TrackPair {
    pub fn validate(&self) -> Result<()> {
        for (name, notes) in [("melody", &self.melody), ("bass", &self.bass)] {
            for pair in notes.windows(2) {
                if pair[1].onset < pair[0].end() {
                    return Err(Error::InvalidInput(format!(
                        "{name} notes overlap or are unsorted at step {}",
                        pair[1].onset
                    )));
                }
            }
            if notes.iter().any(|n| n.duration == 0) {
                return Err(Error::InvalidInput(format!("{name} note with zero duration")));
            }
        }
        Ok(())
    }

    /// End of the last sounding note, in steps.
    pub fn end(&self) -> u32 {
        self.melody.iter().chain(&self.bass).map(NoteEvent::end).max().unwrap_or(0)
    }

    /// The notes overlapping `[start, start + len)`, re-based to the window and
    /// clipped to it. A note entering from before the window starts at step 0.
    pub fn window(&self, start: u32, len: u32) -> TrackPair {
        let clip = |notes: &[NoteEvent]| {
            notes
                .iter()
                .filter(|n| n.onset < start + len && n.end() > start)
                .map(|n| {
                    let on = n.onset.max(start);
                    let off = n.end().min(start + len);
                    NoteEvent { pitch: n.pitch, onset: on - start, duration: off - on }
                })
                .collect()
        };
        TrackPair { melody: clip(&self.melody), bass: clip(&self.bass) }
    }

    pub fn transposed(&self, semitones: i32) -> TrackPair {
        let shift = |notes: &[NoteEvent]| {
            notes
                .iter()
                .map(|n| NoteEvent { pitch: shift_pitch(n.pitch, semitones), ..*n })
                .collect()
        };
        TrackPair { melody: shift(&self.melody), bass: shift(&self.bass) }
    }
}

/// Shift a MIDI pitch, folding by octaves back into 0..=127 when it would leave
/// the range.
pub fn shift_pitch(pitch: u8, semitones: i32) -> u8 {
    let mut p = pitch as i32 + semitones;
    while p < 0 {
        p += 12;
    }
    while p > 127 {
        p -= 12;
    }
    p as u8
}

/// A binary 64 x 89 fragment matrix, row-major.
///
/// Columns 0..=72 are melody pitches MIDI 24..=96, 73 is melody rest, 74 melody
/// onset, 75..=86 bass pitch classes C..B, 87 bass rest, 88 bass onset.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PianoRoll {
    cells: Vec<u8>,
}

impl PianoRoll {
    /// Both tracks resting at every step.
    pub fn silent() -> Self {
        let mut cells = vec![0u8; STEPS * FEATURES];
        for step in 0..STEPS {
            cells[step * FEATURES + MELODY_REST] = 1;
            cells[step * FEATURES + BASS_OFFSET + BASS_REST] = 1;
        }
        Self { cells }
    }

    /// Wraps raw row-major bytes after checking every invariant.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != STEPS * FEATURES {
            return Err(Error::InvalidRoll(format!(
                "expected {} bytes, got {}",
                STEPS * FEATURES,
                bytes.len()
            )));
        }
        let roll = Self { cells: bytes.to_vec() };
        roll.validate()?;
        Ok(roll)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, step: usize, col: usize) -> u8 {
        self.cells[step * FEATURES + col]
    }

    pub fn row(&self, step: usize) -> &[u8] {
        &self.cells[step * FEATURES..(step + 1) * FEATURES]
    }

    fn one_hot(&self, step: usize, from: usize, len: usize) -> Option<usize> {
        let row = &self.row(step)[from..from + len];
        let mut hit = None;
        for (i, &v) in row.iter().enumerate() {
            if v != 0 {
                if hit.is_some() {
                    return None;
                }
                hit = Some(i);
            }
        }
        hit
    }

    /// Melody pitch column (0..=73, 73 = rest) at `step`.
    pub fn melody_column(&self, step: usize) -> usize {
        self.one_hot(step, 0, MELODY_PITCHES).unwrap_or(MELODY_REST)
    }

    /// Bass pitch-class column (0..=12, 12 = rest) at `step`.
    pub fn bass_column(&self, step: usize) -> usize {
        self.one_hot(step, BASS_OFFSET, BASS_PITCHES).unwrap_or(BASS_REST)
    }

    pub fn melody_onset(&self, step: usize) -> bool {
        self.get(step, MELODY_ONSET) != 0
    }

    pub fn bass_onset(&self, step: usize) -> bool {
        self.get(step, BASS_ONSET) != 0
    }

    /// Melody and bass pitch classes sounding at `step`.
    pub fn sounding_pitch_classes(&self, step: usize) -> [Option<u8>; 2] {
        let m = self.melody_column(step);
        let b = self.bass_column(step);
        [
            (m != MELODY_REST).then(|| ((m + MELODY_LOW as usize) % 12) as u8),
            (b != BASS_REST).then_some(b as u8),
        ]
    }

    /// Builds a roll from per-step column choices. Onsets on rest steps are
    /// dropped so the result always satisfies the invariants.
    pub fn from_columns(melody: &[usize], melody_onsets: &[bool], bass: &[usize], bass_onsets: &[bool]) -> Result<Self> {
        if [melody.len(), melody_onsets.len(), bass.len(), bass_onsets.len()].iter().any(|&l| l != STEPS) {
            return Err(Error::InvalidRoll("column vectors must have 64 entries".into()));
        }
        let mut cells = vec![0u8; STEPS * FEATURES];
        for step in 0..STEPS {
            let row = &mut cells[step * FEATURES..(step + 1) * FEATURES];
            let (m, b) = (melody[step], bass[step]);
            if m >= MELODY_PITCHES || b >= BASS_PITCHES {
                return Err(Error::InvalidRoll(format!("column out of range at step {step}")));
            }
            row[m] = 1;
            row[MELODY_ONSET] = (melody_onsets[step] && m != MELODY_REST) as u8;
            row[BASS_OFFSET + b] = 1;
            row[BASS_ONSET] = (bass_onsets[step] && b != BASS_REST) as u8;
        }
        Ok(Self { cells })
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != STEPS * FEATURES {
            return Err(Error::InvalidRoll("wrong matrix size".into()));
        }
        for step in 0..STEPS {
            let row = self.row(step);
            if row.iter().any(|&v| v > 1) {
                return Err(Error::InvalidRoll(format!("non-binary cell at step {step}")));
            }
            let melody_set = row[..MELODY_PITCHES].iter().filter(|&&v| v == 1).count();
            let bass_set = row[BASS_OFFSET..BASS_OFFSET + BASS_PITCHES].iter().filter(|&&v| v == 1).count();
            if melody_set != 1 {
                return Err(Error::InvalidRoll(format!("{melody_set} melody pitch columns set at step {step}")));
            }
            if bass_set != 1 {
                return Err(Error::InvalidRoll(format!("{bass_set} bass pitch columns set at step {step}")));
            }
            if row[MELODY_ONSET] == 1 && row[MELODY_REST] == 1 {
                return Err(Error::InvalidRoll(format!("melody onset on a rest at step {step}")));
            }
            if row[BASS_ONSET] == 1 && row[BASS_OFFSET + BASS_REST] == 1 {
                return Err(Error::InvalidRoll(format!("bass onset on a rest at step {step}")));
            }
        }
        Ok(())
    }

    /// Whether every step of the melody (or bass) is a rest.
    pub fn melody_silent(&self) -> bool {
        (0..STEPS).all(|s| self.melody_column(s) == MELODY_REST)
    }

    pub fn bass_silent(&self) -> bool {
        (0..STEPS).all(|s| self.bass_column(s) == BASS_REST)
    }
}

/// Encodes a 64-step window. Melody notes outside MIDI 24..=96 become rests.
pub fn encode_roll(window: &TrackPair) -> PianoRoll {
    let mut melody = vec![MELODY_REST; STEPS];
    let mut melody_on = vec![false; STEPS];
    let mut bass = vec![BASS_REST; STEPS];
    let mut bass_on = vec![false; STEPS];
    for n in &window.melody {
        if !(MELODY_LOW..=MELODY_HIGH).contains(&n.pitch) {
            continue;
        }
        let col = (n.pitch - MELODY_LOW) as usize;
        paint(&mut melody, &mut melody_on, n, col);
    }
    for n in &window.bass {
        paint(&mut bass, &mut bass_on, n, (n.pitch % 12) as usize);
    }
    PianoRoll::from_columns(&melody, &melody_on, &bass, &bass_on).expect("columns are in range by construction")
}

fn paint(cols: &mut [usize], onsets: &mut [bool], n: &NoteEvent, col: usize) {
    let start = n.onset as usize;
    if start >= STEPS {
        return;
    }
    let end = (n.end() as usize).min(STEPS);
    onsets[start] = true;
    for c in &mut cols[start..end] {
        *c = col;
    }
}

/// Inverse of [`encode_roll`]. Bass pitch classes are voiced in the C2 octave.
///
/// A note starts at an onset, or wherever the pitch column changes without an
/// onset; it lasts while the column stays the same and no new onset arrives.
pub fn decode_roll(roll: &PianoRoll) -> Result<TrackPair> {
    roll.validate()?;
    let melody_cols: Vec<usize> = (0..STEPS).map(|s| roll.melody_column(s)).collect();
    let melody_on: Vec<bool> = (0..STEPS).map(|s| roll.melody_onset(s)).collect();
    let bass_cols: Vec<usize> = (0..STEPS).map(|s| roll.bass_column(s)).collect();
    let bass_on: Vec<bool> = (0..STEPS).map(|s| roll.bass_onset(s)).collect();
    Ok(TrackPair {
        melody: notes_from_columns(&melody_cols, &melody_on, MELODY_REST, |c| c as u8 + MELODY_LOW),
        bass: notes_from_columns(&bass_cols, &bass_on, BASS_REST, |c| c as u8 + BASS_OCTAVE_BASE),
    })
}

fn notes_from_columns(cols: &[usize], onsets: &[bool], rest: usize, pitch_of: impl Fn(usize) -> u8) -> Vec<NoteEvent> {
    let mut notes: Vec<NoteEvent> = Vec::new();
    let mut current: Option<(usize, u32)> = None;
    for (step, (&col, &on)) in cols.iter().zip(onsets).enumerate() {
        let step = step as u32;
        let continues = matches!(current, Some((c, _)) if c == col && !on);
        if continues {
            continue;
        }
        if let Some((c, start)) = current.take() {
            notes.push(NoteEvent { pitch: pitch_of(c), onset: start, duration: step - start });
        }
        if col != rest {
            current = Some((col, step));
        }
    }
    if let Some((c, start)) = current {
        notes.push(NoteEvent { pitch: pitch_of(c), onset: start, duration: STEPS as u32 - start });
    }
    notes
}
