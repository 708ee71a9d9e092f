//! MIDI in, fragment datasets out.

pub mod dataset;
pub mod extract;
pub mod key;
pub mod midi;
pub mod roll;
pub mod toy;

pub use dataset::{build_dataset, Fragment, FragmentDataset, SkipRecord, SkipReport};
pub use extract::{extract_tracks, segment, ExtractOptions};
pub use key::{detect_key, transpose_to_c, Key};
pub use midi::{parse_midi, write_midi, Score};
pub use roll::{decode_roll, encode_roll, NoteEvent, PianoRoll, TrackPair};
