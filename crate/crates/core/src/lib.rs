//! Character- and word-level convolutional text classifiers.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`] and [`rng`]: dense row-major storage and seedable streams.
//! - [`autodiff`]: a define-by-run tape with forward/backward rules for
//!   embeddings, temporal convolution, pooling, batch norm, dropout and the
//!   softmax cross-entropy head, plus finite-difference gradient checking.
//! - [`tokenize`]: the 69-symbol one-hot character encoding and a
//!   frequency-ordered word vocabulary with embedding initialization.
//! - [`models`]: the shallow-and-wide CNN and the text DenseNet.
//! - [`train`]: CSV ingestion, batching, Adam, training/evaluation loops,
//!   checkpoints and synthetic data.

pub mod autodiff;
pub mod error;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod tokenize;
pub mod train;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::{Precision, Scalar, Tensor};
