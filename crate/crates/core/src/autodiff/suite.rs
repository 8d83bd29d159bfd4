//! One finite-difference check per tape op, each on a small fixed graph.

use super::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use super::param::{ParamId, ParamStore};
use super::tape::{BnMode, Mode, OpKind, Tape, Var};
use crate::error::Result;
use crate::rng::RngStream;
use crate::tensor::Tensor;

struct Fixture {
    store: ParamStore<f64>,
    rng: RngStream,
}

impl Fixture {
    fn new(kind: OpKind, seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: RngStream::new(seed, kind as u64),
        }
    }

    fn param(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let t = Tensor::rand_uniform(shape, -1.0, 1.0, &mut self.rng).expect("valid shape");
        self.store.add(name, t, true).expect("unique name")
    }

    /// Values bounded away from zero so ReLU probes stay off the kink.
    fn param_off_zero(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let t = Tensor::rand_uniform(shape, 0.2, 1.0, &mut self.rng)
            .expect("valid shape")
            .map(|x: f64| if x < 0.6 { -x } else { x });
        self.store.add(name, t, true).expect("unique name")
    }

    fn weights(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::rand_uniform(shape, -1.0, 1.0, &mut self.rng).expect("valid shape")
    }
}

/// `Σ y ⊙ r` for a fixed random `r`, so every output element gets a distinct weight.
fn project(tape: &mut Tape<f64>, y: Var, r: &Tensor<f64>) -> Result<Var> {
    let r = tape.input(r.clone());
    let m = tape.mul(y, r)?;
    Ok(tape.sum(m))
}

/// Checks every op in [`OpKind::ALL`] in order.
pub fn check_ops(cfg: &GradCheckConfig) -> Vec<GradCheckReport> {
    OpKind::ALL.iter().map(|&k| check_op(k, cfg)).collect()
}

pub fn check_op(kind: OpKind, cfg: &GradCheckConfig) -> GradCheckReport {
    let mut f = Fixture::new(kind, cfg.seed);
    let label = kind.name();
    match kind {
        OpKind::Embedding => {
            let table = f.param("table", &[4, 6]);
            f.store.freeze_column(table, 0).expect("rank 2");
            let idx = vec![1, 0, 5, 2, 2, 3, 4, 0, 1, 5];
            let r = f.weights(&[2, 4, 5]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let tv = t.param(s, table);
                let y = t.embedding(&idx, 2, 5, tv)?;
                project(t, y, &r)
            })
        }
        OpKind::Conv1d => {
            let x = f.param("x", &[2, 3, 7]);
            let w = f.param("w", &[4, 3, 3]);
            let b = f.param("b", &[4]);
            let r = f.weights(&[2, 4, 7]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let (x, w, b) = (t.param(s, x), t.param(s, w), t.param(s, b));
                let y = t.conv1d(x, w, b, 1)?;
                project(t, y, &r)
            })
        }
        OpKind::OneHotConv1d => {
            // index 5 is past the 5 input channels and acts as an all-zero column
            let w = f.param("w", &[3, 5, 2]);
            let b = f.param("b", &[3]);
            let idx = vec![0, 4, 5, 2, 1, 3, 3, 5, 0, 1, 2, 4];
            let r = f.weights(&[2, 3, 5]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let (w, b) = (t.param(s, w), t.param(s, b));
                let y = t.onehot_conv1d(&idx, 2, 6, w, b, 0)?;
                project(t, y, &r)
            })
        }
        OpKind::Relu => {
            let x = f.param_off_zero("x", &[3, 8]);
            let r = f.weights(&[3, 8]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let x = t.param(s, x);
                let y = t.relu(x);
                project(t, y, &r)
            })
        }
        OpKind::GlobalMaxPool => {
            let x = f.param("x", &[2, 3, 6]);
            let r = f.weights(&[2, 3]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let x = t.param(s, x);
                let y = t.global_max_pool(x)?;
                project(t, y, &r)
            })
        }
        OpKind::LocalMaxPool => {
            let x = f.param("x", &[2, 3, 7]);
            let r = f.weights(&[2, 3, 3]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let x = t.param(s, x);
                let y = t.local_max_pool(x, 3)?;
                project(t, y, &r)
            })
        }
        OpKind::GlobalAvgPool => {
            let x = f.param("x", &[2, 3, 5]);
            let r = f.weights(&[2, 3]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let x = t.param(s, x);
                let y = t.global_avg_pool(x)?;
                project(t, y, &r)
            })
        }
        OpKind::Linear => {
            let x = f.param("x", &[3, 5]);
            let w = f.param("w", &[4, 5]);
            let b = f.param("b", &[4]);
            let r = f.weights(&[3, 4]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let (x, w, b) = (t.param(s, x), t.param(s, w), t.param(s, b));
                let y = t.linear(x, w, b)?;
                project(t, y, &r)
            })
        }
        OpKind::Dropout => {
            let x = f.param("x", &[2, 10]);
            let r = f.weights(&[2, 10]);
            let seed = cfg.seed;
            grad_check(label, &mut f.store, cfg, |t, s| {
                let x = t.param(s, x);
                let mut rng = RngStream::new(seed, 7);
                let y = t.dropout(x, 0.4, Mode::Train, &mut rng)?;
                project(t, y, &r)
            })
        }
        OpKind::BatchNorm => {
            let x = f.param("x", &[3, 2, 4]);
            let scale = f.param("scale", &[2]);
            let shift = f.param("shift", &[2]);
            let r = f.weights(&[3, 2, 4]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let (x, g, b) = (t.param(s, x), t.param(s, scale), t.param(s, shift));
                let (y, _) = t.batch_norm(x, g, b, BnMode::Train, 1e-5)?;
                project(t, y, &r)
            })
        }
        OpKind::ResidualAdd => {
            let x = f.param("x", &[2, 3, 4]);
            let fx = f.param("fx", &[2, 3, 4]);
            let r = f.weights(&[2, 3, 4]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let (x, fx) = (t.param(s, x), t.param(s, fx));
                let y = t.residual_add(x, fx)?;
                project(t, y, &r)
            })
        }
        OpKind::DenseConcat => {
            let a = f.param("a", &[2, 1, 4]);
            let b = f.param("b", &[2, 3, 4]);
            let c = f.param("c", &[2, 2, 4]);
            let r = f.weights(&[2, 6, 4]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let parts = [t.param(s, a), t.param(s, b), t.param(s, c)];
                let y = t.dense_concat(&parts)?;
                project(t, y, &r)
            })
        }
        OpKind::Flatten => {
            let x = f.param("x", &[2, 3, 4]);
            let r = f.weights(&[2, 12]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let x = t.param(s, x);
                let y = t.flatten(x)?;
                project(t, y, &r)
            })
        }
        OpKind::SoftmaxCrossEntropy => {
            let logits = f.param("logits", &[3, 4]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let l = t.param(s, logits);
                Ok(t.softmax_cross_entropy(l, &[2, 0, 3])?.0)
            })
        }
        OpKind::Mul => {
            let a = f.param("a", &[2, 5]);
            let b = f.param("b", &[2, 5]);
            let r = f.weights(&[2, 5]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let (a, b) = (t.param(s, a), t.param(s, b));
                let y = t.mul(a, b)?;
                project(t, y, &r)
            })
        }
        OpKind::Sum => {
            let x = f.param("x", &[3, 4]);
            grad_check(label, &mut f.store, cfg, |t, s| {
                let x = t.param(s, x);
                Ok(t.sum(x))
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ops_pass() {
        for r in check_ops(&GradCheckConfig::default()) {
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        for kind in OpKind::ALL {
            let cfg = GradCheckConfig {
                fault: Some(kind),
                ..GradCheckConfig::default()
            };
            let r = check_op(kind, &cfg);
            assert!(!r.passed(), "{kind} fault went unnoticed");
        }
    }
}
