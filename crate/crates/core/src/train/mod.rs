//! Data ingestion, optimization, training loops and checkpoints.

mod adam;
mod checkpoint;
mod data;
mod run;
mod synth;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_store, read_header, Checkpoint, CheckpointHeader, MAGIC, VERSION};
pub use data::{
    load_csv, make_batches, parse_csv, prefetch, write_csv, Batch, Batches, Dataset,
    EncodedDataset, Sample, Split,
};
pub use run::{
    argmax_rows, best_epoch, evaluate, metrics_csv, train, write_metrics, EpochMetrics, Evaluation,
    TrainConfig, Trainer, METRICS_HEADER,
};
pub use synth::{class_markers, synth_dataset, synth_token, MARKERS_PER_CLASS};
