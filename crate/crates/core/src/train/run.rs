//! Training and evaluation loops.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::checkpoint::Checkpoint;
use super::data::{make_batches, prefetch, Batch, EncodedDataset};
use crate::autodiff::{Mode, Tape};
use crate::error::{Error, Result};
use crate::models::ModelGraph;
use crate::rng::{streams, RngStream};
use crate::tensor::{Precision, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Batches assembled ahead of the optimizer.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 128,
            epochs: 10,
            seed: 0,
            precision: Precision::F32,
            prefetch: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_loss,test_acc,seconds";

/// Metrics CSV. Losses and accuracies are written at full precision so that
/// equal text means equal values.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut out = format!("{METRICS_HEADER}\n");
    for m in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.3}",
            m.epoch,
            m.train_loss,
            m.train_acc,
            opt(m.test_loss),
            opt(m.test_acc),
            m.seconds
        );
    }
    out
}

pub fn write_metrics(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    std::fs::write(path, metrics_csv(history)).map_err(|e| Error::io(path, e))
}

/// Epoch with the highest test accuracy; the earliest wins ties.
pub fn best_epoch(history: &[EpochMetrics]) -> Option<&EpochMetrics> {
    history
        .iter()
        .filter(|m| m.test_acc.is_some())
        .fold(None, |best, m| match best {
            Some(b) if b.test_acc >= m.test_acc => Some(b),
            _ => Some(m),
        })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut out = String::from("true\\pred");
        for c in 0..k {
            let _ = write!(out, ",{}", c + 1);
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            let _ = write!(out, "{}", t + 1);
            for n in row {
                let _ = write!(out, ",{n}");
            }
            out.push('\n');
        }
        out
    }
}

/// Row argmax; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    let k = probs.dim(1);
    probs
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Accuracy, mean loss and confusion matrix in eval mode.
pub fn evaluate<T: Scalar>(
    model: &mut ModelGraph<T>,
    data: &EncodedDataset,
    batch_size: usize,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let k = model.spec().classes;
    if data.num_classes > k {
        return Err(Error::invalid(format!(
            "dataset has {} classes, model predicts {k}",
            data.num_classes
        )));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    let mut loss_sum = 0.0;
    // unused in eval mode
    let mut rng = RngStream::new(0, streams::DROPOUT);
    for b in make_batches(data, batch_size, None)? {
        let mut tape = Tape::new();
        let (loss, probs) = model.loss(&mut tape, &b.indices, &b.labels, Mode::Eval, &mut rng)?;
        loss_sum += tape.value(loss).item().as_f64() * b.len() as f64;
        for (&t, p) in b.labels.iter().zip(argmax_rows(&probs)) {
            confusion[t][p] += 1;
        }
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        loss: loss_sum / data.len() as f64,
        confusion,
    })
}

/// A model together with its optimizer state and epoch counter.
pub struct Trainer<T> {
    pub model: ModelGraph<T>,
    pub adam: AdamState<T>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: ModelGraph<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.params())?;
        Ok(Self {
            model,
            adam,
            config,
            epoch: 0,
        })
    }

    /// Resumes from a checkpoint; a missing optimizer state starts fresh.
    pub fn from_checkpoint(ckpt: &Checkpoint<T>, config: TrainConfig) -> Result<Self> {
        let mut t = Self::new(ckpt.restore()?, config)?;
        if let Some(adam) = &ckpt.adam {
            t.adam = adam.clone();
        }
        t.epoch = ckpt.epoch as usize;
        Ok(t)
    }

    pub fn checkpoint(&self, vocab_hash: [u8; 32]) -> Checkpoint<T> {
        Checkpoint::from_model(&self.model, vocab_hash, self.epoch as u64, Some(&self.adam))
    }

    fn step(&mut self, b: &Batch, rng: &mut RngStream) -> Result<(f64, usize)> {
        let mut tape = Tape::new();
        self.model.params_mut().zero_grads();
        let (loss, probs) = self
            .model
            .loss(&mut tape, &b.indices, &b.labels, Mode::Train, rng)?;
        let value = tape.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss is {value} at epoch {}",
                self.epoch + 1
            )));
        }
        tape.backward(loss, self.model.params_mut())?;
        adam_step(self.model.params_mut(), &mut self.adam, &self.config.adam)?;
        let correct = b
            .labels
            .iter()
            .zip(argmax_rows(&probs))
            .filter(|(t, p)| **t == *p)
            .count();
        Ok((value * b.len() as f64, correct))
    }

    /// One pass over `data`; returns mean loss and accuracy seen during training.
    pub fn run_epoch(&mut self, data: &EncodedDataset) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(Error::invalid("cannot train on an empty dataset"));
        }
        let e = self.epoch as u64;
        let mut shuffle = RngStream::new(self.config.seed, streams::SHUFFLE + e);
        let mut dropout = RngStream::new(self.config.seed, streams::DROPOUT + e);
        let batches = make_batches(data, self.config.batch_size, Some(&mut shuffle))?;
        let (mut loss, mut correct) = (0.0, 0usize);
        prefetch(batches, self.config.prefetch, |b| {
            let (l, c) = self.step(&b, &mut dropout)?;
            loss += l;
            correct += c;
            Ok(())
        })?;
        self.epoch += 1;
        let n = data.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }

    /// Runs `epochs` more epochs, evaluating on `test` after each one.
    pub fn train(
        &mut self,
        train: &EncodedDataset,
        test: Option<&EncodedDataset>,
        epochs: usize,
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let start = Instant::now();
            let (train_loss, train_acc) = self.run_epoch(train)?;
            let eval = match test {
                Some(t) => Some(evaluate(&mut self.model, t, self.config.batch_size)?),
                None => None,
            };
            let m = EpochMetrics {
                epoch: self.epoch,
                train_loss,
                train_acc,
                test_loss: eval.as_ref().map(|e| e.loss),
                test_acc: eval.as_ref().map(|e| e.accuracy),
                seconds: start.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {} train_loss {:.4} train_acc {:.4} test_acc {}",
                m.epoch,
                m.train_loss,
                m.train_acc,
                m.test_acc.map_or("-".into(), |a| format!("{a:.4}"))
            );
            on_epoch(&m);
            history.push(m);
        }
        Ok(history)
    }
}

/// Builds a fresh trainer and runs `config.epochs` epochs.
pub fn train<T: Scalar>(
    model: ModelGraph<T>,
    train: &EncodedDataset,
    test: Option<&EncodedDataset>,
    config: &TrainConfig,
) -> Result<(Trainer<T>, Vec<EpochMetrics>)> {
    let mut t = Trainer::new(model, config.clone())?;
    let history = t.train(train, test, config.epochs, |_| {})?;
    Ok((t, history))
}
