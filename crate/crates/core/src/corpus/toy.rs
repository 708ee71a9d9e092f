//! Small synthetic melody+bass songs with a known tension direction per
//! 4-bar block. Used for desk-scale training runs and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Fragment, FragmentDataset};
use super::midi::{render_tracks, Score};
use super::roll::{encode_roll, NoteEvent, TrackPair, STEPS};
use crate::error::Result;
use crate::spiral::SpiralConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
}

/// Bass pitch class and melody tones, ordered so that every (bass, tone)
/// pair of a level has higher tensile strain against C major than any pair of
/// the level below (about 0.4, 0.55, 0.85 and 2.1). No tone is shared
/// between levels, so the melody changes whenever the harmony does.
const LADDER: [(u8, [u8; 2]); 4] = [
    (0, [7, 2]),   // C under G or D
    (7, [9, 4]),   // G under A or E
    (11, [3, 10]), // B under Eb or Bb
    (1, [5, 8]),   // Db under F or Ab
];

/// One 4-bar block whose harmony moves from ladder level `from` to `to`,
/// spread evenly over the bars. Bass and melody both move in half notes on a
/// shared grid. The melody takes the first or second tone of each level, one
/// random choice for the whole block.
pub fn toy_block(rng: &mut impl Rng, from: usize, to: usize) -> TrackPair {
    assert!(from < LADDER.len() && to < LADDER.len(), "ladder level out of range");
    let mut melody = Vec::new();
    let mut bass = Vec::new();
    let pick = rng.gen_range(0..2);
    for bar in 0..4u32 {
        let level = (from as f64 + (to as f64 - from as f64) * bar as f64 / 3.0).round() as usize;
        let (root, tones) = LADDER[level];
        let tone = tones[pick];
        for half in 0..2u32 {
            let onset = bar * 16 + half * 8;
            bass.push(NoteEvent { pitch: 36 + root, onset, duration: 8 });
            melody.push(NoteEvent { pitch: 60 + tone, onset, duration: 8 });
        }
    }
    TrackPair { melody, bass }
}

/// A random climb (or descent) between two distinct ladder levels.
fn random_span(rng: &mut impl Rng, direction: Direction) -> (usize, usize) {
    let a = rng.gen_range(0..LADDER.len() - 1);
    let b = rng.gen_range(a + 1..LADDER.len());
    match direction {
        Direction::Up => (a, b),
        Direction::Down => (b, a),
    }
}

/// A song of consecutive blocks, rendered as a two-track 4/4 score.
pub fn toy_song(seed: u64, directions: &[Direction]) -> Score {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut song = TrackPair::default();
    for (i, &d) in directions.iter().enumerate() {
        let offset = i as u32 * STEPS as u32;
        let (from, to) = random_span(&mut rng, d);
        let block = toy_block(&mut rng, from, to);
        song.melody.extend(block.melody.into_iter().map(|n| NoteEvent { onset: n.onset + offset, ..n }));
        song.bass.extend(block.bass.into_iter().map(|n| NoteEvent { onset: n.onset + offset, ..n }));
    }
    render_tracks(&song, &[])
}

/// `n` fragments alternating up and down, measured against C major.
pub fn toy_dataset(n: usize, seed: u64, cfg: &SpiralConfig) -> Result<FragmentDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fragments = (0..n)
        .map(|i| {
            let dir = if i % 2 == 0 { Direction::Up } else { Direction::Down };
            let (from, to) = random_span(&mut rng, dir);
            let roll = encode_roll(&toy_block(&mut rng, from, to));
            Fragment::from_roll(roll, format!("toy-{i}"), 0, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FragmentDataset { fragments })
}
