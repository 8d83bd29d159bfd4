//! Architecture specifications and model construction.

mod check;
mod graph;
mod layers;
mod spec;

pub use check::{check_models, tiny_spec};
pub use graph::{LayerRow, ModelGraph, ModelReport};
pub use spec::{ArchSpec, Family, Level, Tail, WORD_EMBED_DIM};
