//! File formats, configuration and tabular output.

pub mod annotations;
pub mod codec;
pub mod config;
pub mod manifest;
pub mod pgm;
pub mod tables;

pub use annotations::{emit_annotations, parse_annotations, parse_annotations_for, read_annotations, write_annotations};
pub use codec::{
    decode_density, decode_weights, encode_density, encode_weights, load_entries, network_entries, read_density,
    read_weights_into, write_density, write_weights, WeightEntry,
};
pub use config::{seed_from_env, ConfigFile, DatasetConfig, SEED_ENV};
pub use manifest::{read_manifest, write_manifest, ManifestLine};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, render_heatmap, write_pgm};
pub use tables::{read_eval_rows, write_eval_rows, write_train_log};
