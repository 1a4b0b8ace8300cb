//! Video files, synthetic videos, scored datasets and preference pairs.

pub(crate) mod binary;
mod dataset;
mod pairs;
mod toy;
mod video;

pub use dataset::{ingest_scores, save_records, Dataset, IndexEntry, IngestOutcome, VideoRecord, INDEX_FILE};
pub use pairs::{build_pairs, orderable_pairs, PairIndex, PreferencePair};
pub use toy::{gen_toy_videos, ToyKind, NOISE_SCALE};
pub use video::{decode_video, encode_video, read_video, write_video, VIDEO_MAGIC, VIDEO_VERSION};
