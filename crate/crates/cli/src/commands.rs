//! Subcommand implementations. Each writes its report to `out`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use textcnn::autodiff::{check_ops, GradCheckConfig, GradCheckReport, OpKind};
use textcnn::models::{check_models, Level, ModelGraph};
use textcnn::rng::streams;
use textcnn::tokenize::{
    init_embeddings, load_pretrained, CharVocab, Encoder, Tokenizer, WordVocab,
};
use textcnn::train::{
    best_epoch, evaluate, load_csv, metrics_csv, read_header, Checkpoint, Dataset, EpochMetrics,
    Split, Trainer, METRICS_HEADER,
};
use textcnn::{Precision, RngStream, Scalar};

use crate::config::RunConfig;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn load_split(path: &Path, classes: usize, split: Split, limit: Option<usize>) -> Result<Dataset> {
    let d = load_csv(path, classes, split)?;
    Ok(match limit {
        Some(n) => d.truncated(n),
        None => d,
    })
}

fn vocab_file(dir: &Path) -> PathBuf {
    dir.join("vocab.txt")
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.check_inputs()?;
    let Some(train_path) = &cfg.train_path else {
        bail!("missing required key 'train' (--train PATH)");
    };
    let precision = match &cfg.resume {
        Some(p) => {
            let h = read_header(p)?;
            if h.precision != cfg.train.precision {
                log::warn!("resuming in the checkpoint's {} precision", h.precision);
            }
            h.precision
        }
        None => cfg.train.precision,
    };
    let train = load_split(train_path, cfg.arch.classes, Split::Train, cfg.train_limit)?;
    let test = cfg
        .test_path
        .as_deref()
        .map(|p| load_split(p, cfg.arch.classes, Split::Test, cfg.test_limit))
        .transpose()?;
    match precision {
        Precision::F32 => run_train::<f32>(cfg, &train, test.as_ref(), out),
        Precision::F64 => run_train::<f64>(cfg, &train, test.as_ref(), out),
    }
}

fn run_train<T: Scalar>(
    cfg: &RunConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    out: &mut dyn Write,
) -> Result<()> {
    let resumed = cfg
        .resume
        .as_deref()
        .map(Checkpoint::<T>::load)
        .transpose()?;
    let spec = match &resumed {
        Some(ck) => {
            if ck.spec != cfg.arch {
                log::warn!("using the architecture stored in the checkpoint");
            }
            ck.spec.clone()
        }
        None => cfg.arch.clone(),
    };
    let tokenizer = Tokenizer::default();
    let encoder = match spec.level {
        Level::Char => Encoder::Char {
            vocab: CharVocab::new(cfg.lowercase),
            max_len: spec.max_len,
        },
        Level::Word => {
            let vocab = match &cfg.vocab {
                Some(p) => WordVocab::load(p)?,
                None => WordVocab::from_texts(train.texts(), &tokenizer, cfg.min_freq)?,
            };
            Encoder::Word {
                vocab,
                tokenizer,
                max_len: spec.max_len,
            }
        }
    };
    let vocab_hash = encoder.vocab_hash();
    let mut trainer = match &resumed {
        Some(ck) => {
            if ck.vocab_hash != vocab_hash {
                bail!(
                    "vocabulary hash {} does not match the checkpoint's {}; pass the vocabulary the run started with (--vocab)",
                    hex(&vocab_hash),
                    hex(&ck.vocab_hash)
                );
            }
            Trainer::from_checkpoint(ck, cfg.train.clone())?
        }
        None => {
            let model = match &encoder {
                Encoder::Char { .. } => ModelGraph::<T>::build(&spec, 0, None, cfg.train.seed)?,
                Encoder::Word { vocab, .. } => {
                    let pretrained = cfg.embeddings.as_deref().map(load_pretrained).transpose()?;
                    let mut rng = RngStream::new(cfg.train.seed, streams::EMBEDDING);
                    let table =
                        init_embeddings(vocab, spec.embed_dim, pretrained.as_ref(), &mut rng)?;
                    ModelGraph::build(&spec, vocab.len(), Some(table), cfg.train.seed)?
                }
            };
            Trainer::new(model, cfg.train.clone())?
        }
    };

    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    if let Encoder::Word { vocab, .. } = &encoder {
        vocab.save(&vocab_file(&cfg.out))?;
    }
    let ckpt_path = cfg.checkpoint_path();
    let metrics_path = cfg.metrics_path();
    // rows of epochs completed before a resume are carried over
    let mut earlier = String::new();
    if resumed.is_some() {
        if let Ok(text) = fs::read_to_string(&metrics_path) {
            for line in text.lines().skip(1) {
                let epoch: Option<usize> = line.split(',').next().and_then(|e| e.parse().ok());
                if epoch.is_some_and(|e| e <= trainer.epoch) {
                    earlier.push_str(line);
                    earlier.push('\n');
                }
            }
        }
    }

    let train_enc = train.encode(&encoder);
    let test_enc = test.map(|t| t.encode(&encoder));
    writeln!(
        out,
        "training {} {} on {} samples ({} parameters, {} precision)",
        spec.family,
        spec.level,
        train.len(),
        trainer.model.inspect().total_params,
        T::PRECISION
    )?;
    let total = cfg.train.epochs;
    let mut history: Vec<EpochMetrics> = Vec::new();
    let write_metrics = |history: &[EpochMetrics]| -> Result<()> {
        let rows = metrics_csv(history);
        let rows = rows.split_once('\n').map_or("", |(_, r)| r);
        fs::write(&metrics_path, format!("{METRICS_HEADER}\n{earlier}{rows}"))
            .with_context(|| format!("writing {}", metrics_path.display()))
    };
    write_metrics(&history)?;
    trainer.checkpoint(vocab_hash).save(&ckpt_path)?;
    while trainer.epoch < total {
        let m = trainer
            .train(&train_enc, test_enc.as_ref(), 1, |_| {})?
            .remove(0);
        let test_part = match (m.test_loss, m.test_acc) {
            (Some(l), Some(a)) => format!("  test_loss {l:.4}  test_acc {a:.4}"),
            _ => String::new(),
        };
        writeln!(
            out,
            "epoch {}/{total}  train_loss {:.4}  train_acc {:.4}{test_part}  ({:.1}s)",
            m.epoch, m.train_loss, m.train_acc, m.seconds
        )?;
        history.push(m);
        write_metrics(&history)?;
        trainer.checkpoint(vocab_hash).save(&ckpt_path)?;
    }
    if let (Some(best), Some(last)) = (best_epoch(&history), history.last()) {
        writeln!(
            out,
            "best test_acc {:.4} at epoch {}; final test_acc {:.4}",
            best.test_acc.unwrap_or(0.0),
            best.epoch,
            last.test_acc.unwrap_or(0.0)
        )?;
    }
    writeln!(
        out,
        "wrote {} and {}",
        ckpt_path.display(),
        metrics_path.display()
    )?;
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.check_inputs()?;
    let Some(ckpt) = &cfg.checkpoint else {
        bail!("missing required key 'checkpoint' (--checkpoint PATH)");
    };
    let Some(test) = &cfg.test_path else {
        bail!("missing required key 'test' (--test PATH)");
    };
    if !ckpt.exists() {
        bail!("checkpoint: file {} does not exist", ckpt.display());
    }
    match read_header(ckpt)?.precision {
        Precision::F32 => run_eval::<f32>(cfg, ckpt, test, out),
        Precision::F64 => run_eval::<f64>(cfg, ckpt, test, out),
    }
}

fn run_eval<T: Scalar>(
    cfg: &RunConfig,
    ckpt_path: &Path,
    test: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let ckpt = Checkpoint::<T>::load(ckpt_path)?;
    let spec = &ckpt.spec;
    let encoder = match spec.level {
        Level::Char => Encoder::Char {
            vocab: CharVocab::new(cfg.lowercase),
            max_len: spec.max_len,
        },
        Level::Word => {
            let path = match &cfg.vocab {
                Some(p) => p.clone(),
                None => vocab_file(ckpt_path.parent().unwrap_or(Path::new("."))),
            };
            Encoder::Word {
                vocab: WordVocab::load(&path)?,
                tokenizer: Tokenizer::default(),
                max_len: spec.max_len,
            }
        }
    };
    if encoder.vocab_hash() != ckpt.vocab_hash {
        bail!(
            "vocabulary mismatch: the checkpoint was trained with vocabulary {} but the supplied one hashes to {}; \
             indices would refer to different tokens",
            hex(&ckpt.vocab_hash),
            hex(&encoder.vocab_hash())
        );
    }
    let mut model = ckpt.restore()?;
    let data = load_split(test, spec.classes, Split::Test, cfg.test_limit)?;
    let eval = evaluate(&mut model, &data.encode(&encoder), cfg.train.batch_size)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let confusion = cfg.out.join("confusion.csv");
    fs::write(&confusion, eval.confusion_csv())
        .with_context(|| format!("writing {}", confusion.display()))?;
    writeln!(out, "samples {}", data.len())?;
    writeln!(out, "accuracy {:.4}", eval.accuracy)?;
    writeln!(out, "loss {:.4}", eval.loss)?;
    writeln!(out, "confusion matrix written to {}", confusion.display())?;
    Ok(())
}

pub fn cmd_inspect(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.check_inputs()?;
    let vocab_size = match (&cfg.vocab, cfg.arch.level) {
        (Some(p), Level::Word) => WordVocab::load(p)?.len(),
        _ => cfg.vocab_size,
    };
    let model = ModelGraph::<f32>::build(&cfg.arch, vocab_size, None, cfg.train.seed)?;
    writeln!(
        out,
        "{} {} (max_len {}, classes {})",
        cfg.arch.family, cfg.arch.level, cfg.arch.max_len, cfg.arch.classes
    )?;
    writeln!(out, "{}", model.inspect())?;
    Ok(())
}

/// Returns whether every check passed.
pub fn cmd_gradcheck(cfg: &RunConfig, fault: Option<OpKind>, out: &mut dyn Write) -> Result<bool> {
    let gc = GradCheckConfig {
        seed: cfg.train.seed,
        fault,
        ..GradCheckConfig::default()
    };
    writeln!(
        out,
        "precision f64, step {:e}, tolerance {:e}, {} coordinates per tensor",
        gc.step, gc.tolerance, gc.coords_per_param
    )?;
    if let Some(k) = fault {
        writeln!(out, "fault injected into {k}")?;
    }
    writeln!(out, "{:<28} {:>12}  status", "check", "max_rel_err")?;
    let mut reports: Vec<GradCheckReport> = check_ops(&gc);
    reports.extend(check_models(&gc));
    for r in &reports {
        writeln!(out, "{r}")?;
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.label.as_str())
        .collect();
    if failed.is_empty() {
        writeln!(out, "all {} checks passed", reports.len())?;
    } else {
        writeln!(
            out,
            "{} of {} checks failed: {}",
            failed.len(),
            reports.len(),
            failed.join(", ")
        )?;
    }
    Ok(failed.is_empty())
}

pub fn cmd_tokenize(cfg: &RunConfig, text: &str, out: &mut dyn Write) -> Result<()> {
    cfg.check_inputs()?;
    let max_len = cfg.arch.max_len;
    match cfg.arch.level {
        Level::Char => {
            let vocab = CharVocab::new(cfg.lowercase);
            let seq = vocab.encode(text, max_len);
            let shown = &seq.indices[..seq.true_length];
            let padding = max_len - seq.true_length;
            writeln!(
                out,
                "level char, max_len {max_len}, length {}, padding {padding}",
                seq.true_length
            )?;
            let idx: Vec<String> = shown.iter().map(usize::to_string).collect();
            writeln!(out, "indices: {}", idx.join(" "))?;
            let toks: Vec<String> = shown
                .iter()
                .map(|&i| match vocab.symbol(i) {
                    Some('\n') => "\\n".to_string(),
                    Some(c) => c.to_string(),
                    None => "<pad>".to_string(),
                })
                .collect();
            writeln!(out, "tokens: {}", toks.join(" "))?;
            let unknown = shown.iter().filter(|&&i| i == CharVocab::PAD).count();
            writeln!(
                out,
                "padding index {} x {padding}; {unknown} character(s) mapped to padding",
                CharVocab::PAD
            )?;
            let normalized: String = if cfg.lowercase {
                text.chars()
                    .flat_map(char::to_lowercase)
                    .take(max_len)
                    .collect()
            } else {
                text.chars().take(max_len).collect()
            };
            let decoded = vocab.decode(&seq);
            let verdict = if decoded == normalized {
                "exact"
            } else {
                "lossy"
            };
            writeln!(out, "round trip: {decoded:?} ({verdict})")?;
        }
        Level::Word => {
            let Some(path) = &cfg.vocab else {
                bail!("word-level tokenization needs a vocabulary (--vocab PATH)");
            };
            let vocab = WordVocab::load(path)?;
            let tokenizer = Tokenizer::default();
            let seq = vocab.encode(text, &tokenizer, max_len);
            let shown = &seq.indices[..seq.true_length];
            let padding = max_len - seq.true_length;
            writeln!(
                out,
                "level word, max_len {max_len}, length {}, padding {padding}",
                seq.true_length
            )?;
            let idx: Vec<String> = shown.iter().map(usize::to_string).collect();
            writeln!(out, "indices: {}", idx.join(" "))?;
            let toks: Vec<&str> = shown.iter().map(|&i| vocab.display(i)).collect();
            writeln!(out, "tokens: {}", toks.join(" "))?;
            let oov = shown.iter().filter(|&&i| i == WordVocab::OOV).count();
            let source: Vec<String> = tokenizer.tokenize(text).into_iter().take(max_len).collect();
            let verdict = if oov == 0 && toks.iter().zip(&source).all(|(a, b)| a == b) {
                "exact".to_string()
            } else {
                format!("lossy, {oov} <oov>")
            };
            writeln!(out, "round trip: {:?} ({verdict})", toks.join(" "))?;
        }
    }
    Ok(())
}
