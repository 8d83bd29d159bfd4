//! Synthetic, linearly separable word data for desk-scale checks.

use super::data::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Marker tokens per class.
pub const MARKERS_PER_CLASS: usize = 3;

pub fn synth_token(i: usize) -> String {
    format!("tok{i}")
}

/// Token ids reserved as markers for `class`. The assignment depends only on
/// the class, so independent draws share it.
pub fn class_markers(class: usize) -> std::ops::Range<usize> {
    class * MARKERS_PER_CLASS..(class + 1) * MARKERS_PER_CLASS
}

/// `samples_per_class` texts of `length` tokens per class over the token set
/// `tok0..tok{vocab-1}`. Each text holds 2 or 3 of its class's markers at
/// random positions; the rest are non-marker noise tokens.
pub fn synth_dataset(
    num_classes: usize,
    samples_per_class: usize,
    vocab: usize,
    length: usize,
    rng: &mut RngStream,
) -> Result<Dataset> {
    let reserved = num_classes * MARKERS_PER_CLASS;
    if vocab <= reserved {
        return Err(Error::invalid(format!(
            "vocabulary of {vocab} tokens leaves no noise tokens after {reserved} markers"
        )));
    }
    if length < 3 {
        return Err(Error::invalid(format!(
            "length must be at least 3, got {length}"
        )));
    }
    let mut samples = Vec::with_capacity(num_classes * samples_per_class);
    for _ in 0..samples_per_class {
        for class in 0..num_classes {
            let mut tokens: Vec<usize> = (0..length)
                .map(|_| reserved + rng.below(vocab - reserved))
                .collect();
            let n_markers = 2 + rng.below(2);
            let mut positions: Vec<usize> = (0..length).collect();
            rng.shuffle(&mut positions);
            let markers = class_markers(class);
            for &pos in &positions[..n_markers] {
                tokens[pos] = markers.start + rng.below(MARKERS_PER_CLASS);
            }
            let text: Vec<String> = tokens.into_iter().map(synth_token).collect();
            samples.push(Sample {
                label: class,
                text: text.join(" "),
            });
        }
    }
    Dataset::new(samples, Split::Train, num_classes)
}
