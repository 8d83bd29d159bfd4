//! Whole-model gradient checks on tiny configurations.

use super::graph::ModelGraph;
use super::spec::{ArchSpec, Family, Level};
use crate::autodiff::{GradCheckConfig, GradCheckReport};
use crate::rng::RngStream;
use crate::tokenize::ALPHABET_SIZE;

const TINY_VOCAB: usize = 12;
const TINY_BATCH: usize = 3;

/// A configuration of `level`/`family` with sequence length 16 and at most
/// 8 channels in every convolution.
pub fn tiny_spec(level: Level, family: Family) -> ArchSpec {
    let mut s = ArchSpec::default_for(level, family);
    s.windows = vec![2, 3];
    s.filters = 4;
    s.blocks = vec![2, 2, 2, 2];
    s.growth = 2;
    s.init_channels = 4;
    s.fc_width = 6;
    s.embed_dim = 5;
    s.max_len = 16;
    s.classes = 3;
    if level == Level::Word {
        s.dropout = 0.5;
    }
    s
}

/// Checks the four model variants on one fixed batch.
pub fn check_models(cfg: &GradCheckConfig) -> Vec<GradCheckReport> {
    let mut out = Vec::new();
    for family in [Family::Shallow, Family::DenseNet] {
        for level in [Level::Char, Level::Word] {
            let label = format!("model {family} {level}");
            let spec = tiny_spec(level, family);
            let mut rng = RngStream::new(cfg.seed, 11);
            // char batches include the padding index
            let bound = match level {
                Level::Char => ALPHABET_SIZE + 1,
                Level::Word => TINY_VOCAB,
            };
            let idx: Vec<usize> = (0..TINY_BATCH * spec.max_len)
                .map(|_| rng.below(bound))
                .collect();
            let labels: Vec<usize> = (0..TINY_BATCH).map(|i| i % spec.classes).collect();
            let report = match ModelGraph::<f64>::build(&spec, TINY_VOCAB, None, cfg.seed) {
                Ok(mut g) => {
                    jitter(&mut g, &mut rng);
                    g.grad_check(&label, &idx, &labels, cfg)
                }
                Err(e) => GradCheckReport {
                    label,
                    params: Vec::new(),
                    max_rel_err: f64::INFINITY,
                    tolerance: cfg.tolerance,
                    failure: Some(format!("build: {e}")),
                },
            };
            out.push(report);
        }
    }
    out
}

/// Moves every free coordinate by up to ±0.1. Zero biases over zero padding
/// columns would otherwise sit exactly on a ReLU kink.
fn jitter(g: &mut ModelGraph<f64>, rng: &mut RngStream) {
    let ids: Vec<_> = g.params().ids().collect();
    for id in ids {
        let p = g.params_mut().get_mut(id);
        let free: Vec<bool> = (0..p.value.numel()).map(|i| p.is_free(i)).collect();
        for (v, free) in p.value.data_mut().iter_mut().zip(free) {
            if free {
                *v += rng.uniform(-0.1, 0.1);
            }
        }
    }
}
