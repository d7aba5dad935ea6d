//! Dataset input and output: challenge archives and raw telemetry CSVs.

mod archive;
mod ingest;
pub mod npy;
pub mod zip;

pub use archive::{
    read_challenge_archive, read_challenge_archive_bytes, write_challenge_archive,
    write_challenge_archive_bytes, ChallengeDataset, LabelConvention, ARCHIVE_KEYS,
};
pub use ingest::{
    ingest_raw_csv, ingest_raw_reader, write_raw_csv, IngestConfig, NonFinitePolicy, RawTrial,
    SensorKind,
};
pub use npy::{parse_array_header, ArrayDescriptor, ByteOrder, ElementType, Layout};
