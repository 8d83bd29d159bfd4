//! Run configuration: `key = value` files, command-line flags and defaults.
//!
//! Precedence is flags, then the config file, then defaults. Defaults depend
//! on the resolved `level` and `family`, so those two are settled first.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use textcnn::models::{ArchSpec, Family, Level};
use textcnn::train::TrainConfig;
use textcnn::Precision;

pub struct Key {
    pub name: &'static str,
    pub flag: &'static str,
    pub value: &'static str,
    pub help: &'static str,
}

const fn key(
    name: &'static str,
    flag: &'static str,
    value: &'static str,
    help: &'static str,
) -> Key {
    Key {
        name,
        flag,
        value,
        help,
    }
}

/// Every accepted key with its flag. Keys and flags map one to one.
pub const KEYS: &[Key] = &[
    key("level", "level", "char|word", "token level [default: word]"),
    key(
        "family",
        "arch",
        "shallow|densenet",
        "architecture family [default: shallow]",
    ),
    key("windows", "windows", "H,H,..", "shallow conv window sizes"),
    key("filters", "filters", "N", "shallow filters per window"),
    key("blocks", "blocks", "A-B-C-D", "dense block sizes"),
    key(
        "growth",
        "growth",
        "N",
        "channels added per dense-block layer",
    ),
    key(
        "init_channels",
        "init-channels",
        "N",
        "channels of the first densenet conv",
    ),
    key("kernel", "kernel", "N", "densenet conv window (odd)"),
    key(
        "tail",
        "tail",
        "max|avg",
        "densenet tail: local max-pool + FC, or global average",
    ),
    key(
        "pool_kernel",
        "pool-kernel",
        "N",
        "kernel of the final local max-pool",
    ),
    key(
        "fc_width",
        "fc-width",
        "N",
        "width of the two hidden FC layers in the max tail",
    ),
    key(
        "dropout",
        "dropout",
        "P",
        "dropout rate before the classifier",
    ),
    key("classes", "classes", "K", "number of classes"),
    key(
        "max_len",
        "max-len",
        "N",
        "sequence length after padding/truncation",
    ),
    key("embed_dim", "embed-dim", "N", "word embedding dimension"),
    key("bn_eps", "bn-eps", "F", "batch-norm epsilon"),
    key(
        "bn_momentum",
        "bn-momentum",
        "F",
        "weight of the old running statistics",
    ),
    key(
        "epochs",
        "epochs",
        "N",
        "total training epochs [default: 10]",
    ),
    key("batch", "batch", "N", "mini-batch size [default: 128]"),
    key("lr", "lr", "F", "Adam learning rate [default: 0.001]"),
    key(
        "beta1",
        "beta1",
        "F",
        "Adam first-moment decay [default: 0.9]",
    ),
    key(
        "beta2",
        "beta2",
        "F",
        "Adam second-moment decay [default: 0.999]",
    ),
    key("adam_eps", "adam-eps", "F", "Adam epsilon [default: 1e-8]"),
    key("seed", "seed", "N", "random seed [default: 0]"),
    key(
        "precision",
        "precision",
        "f32|f64",
        "floating-point precision [default: f32]",
    ),
    key(
        "prefetch",
        "prefetch",
        "N",
        "batches prepared ahead of training [default: 2]",
    ),
    key("train", "train", "PATH", "training CSV"),
    key("test", "test", "PATH", "test CSV"),
    key(
        "train_limit",
        "train-limit",
        "N",
        "use only the first N training rows",
    ),
    key(
        "test_limit",
        "test-limit",
        "N",
        "use only the first N test rows",
    ),
    key(
        "embeddings",
        "embeddings",
        "PATH",
        "pretrained word vectors",
    ),
    key("vocab", "vocab", "PATH", "word vocabulary file"),
    key(
        "vocab_size",
        "vocab-size",
        "N",
        "vocabulary size for inspect/gradcheck without --vocab [default: 10000]",
    ),
    key(
        "min_freq",
        "min-freq",
        "N",
        "minimum word count to enter the vocabulary [default: 1]",
    ),
    key(
        "lowercase",
        "lowercase",
        "true|false",
        "fold characters to lowercase [default: true]",
    ),
    key("out", "out", "DIR", "output directory [default: out]"),
    key(
        "checkpoint",
        "checkpoint",
        "PATH",
        "checkpoint to write (train) or read (eval) [default: OUT/model.ckpt]",
    ),
    key(
        "metrics",
        "metrics",
        "PATH",
        "metrics CSV [default: OUT/metrics.csv]",
    ),
    key(
        "resume",
        "resume",
        "PATH",
        "checkpoint to continue training from",
    ),
];

pub fn find_key(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub embeddings: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub vocab_size: usize,
    pub min_freq: u64,
    pub lowercase: bool,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

impl RunConfig {
    fn defaults(level: Level, family: Family) -> Self {
        Self {
            arch: ArchSpec::default_for(level, family),
            train: TrainConfig::default(),
            train_path: None,
            test_path: None,
            train_limit: None,
            test_limit: None,
            embeddings: None,
            vocab: None,
            vocab_size: 10_000,
            min_freq: 1,
            lowercase: true,
            out: PathBuf::from("out"),
            checkpoint: None,
            metrics: None,
            resume: None,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.metrics
            .clone()
            .unwrap_or_else(|| self.out.join("metrics.csv"))
    }

    fn set(&mut self, name: &str, value: &str) -> Result<()> {
        if self.arch.set(name, value)? {
            return Ok(());
        }
        fn parse<T: std::str::FromStr>(name: &str, value: &str, what: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| anyhow!("{name}: expected {what}, got '{value}'"))
        }
        let uint = |what| parse::<u64>(name, value, what);
        let float = || parse::<f64>(name, value, "a number");
        let path = || Some(PathBuf::from(value));
        match name {
            "epochs" => self.train.epochs = uint("a non-negative integer")? as usize,
            "batch" => self.train.batch_size = uint("a positive integer")? as usize,
            "lr" => self.train.adam.lr = float()?,
            "beta1" => self.train.adam.beta1 = float()?,
            "beta2" => self.train.adam.beta2 = float()?,
            "adam_eps" => self.train.adam.eps = float()?,
            "seed" => self.train.seed = uint("a non-negative integer")?,
            "precision" => self.train.precision = value.parse::<Precision>()?,
            "prefetch" => self.train.prefetch = uint("a positive integer")? as usize,
            "train" => self.train_path = path(),
            "test" => self.test_path = path(),
            "train_limit" => self.train_limit = Some(uint("a non-negative integer")? as usize),
            "test_limit" => self.test_limit = Some(uint("a non-negative integer")? as usize),
            "embeddings" => self.embeddings = path(),
            "vocab" => self.vocab = path(),
            "vocab_size" => self.vocab_size = uint("a positive integer")? as usize,
            "min_freq" => self.min_freq = uint("a non-negative integer")?,
            "lowercase" => self.lowercase = parse(name, value, "true or false")?,
            "out" => self.out = PathBuf::from(value),
            "checkpoint" => self.checkpoint = path(),
            "metrics" => self.metrics = path(),
            "resume" => self.resume = path(),
            _ => bail!("unknown key '{name}'"),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        if self.vocab_size < 2 {
            bail!("vocab_size must be at least 2");
        }
        Ok(())
    }

    /// Fails when a given input path does not exist, naming the key and path.
    pub fn check_inputs(&self) -> Result<()> {
        let inputs = [
            ("train", &self.train_path),
            ("test", &self.test_path),
            ("embeddings", &self.embeddings),
            ("vocab", &self.vocab),
            ("resume", &self.resume),
        ];
        for (name, p) in inputs {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{name}: file {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }
}

/// `(key, value, line)` triples of a config file; `#` starts a comment.
pub fn parse_config_text(text: &str, origin: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{origin}:{}: expected 'key = value', got '{line}'", i + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if find_key(k).is_none() {
            bail!("{origin}:{}: unknown key '{k}'", i + 1);
        }
        out.push((k.to_string(), v.to_string(), i + 1));
    }
    Ok(out)
}

/// Resolves a configuration from optional file text and flag values
/// (`(key, value)` pairs).
pub fn parse_config(file: Option<(&str, &str)>, flags: &[(String, String)]) -> Result<RunConfig> {
    let file_pairs = match file {
        Some((text, origin)) => parse_config_text(text, origin)?,
        None => Vec::new(),
    };
    for (k, _) in flags {
        if find_key(k).is_none() {
            bail!("unknown key '{k}'");
        }
    }
    let lookup = |name: &str| -> Option<&str> {
        flags
            .iter()
            .rev()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
            .or_else(|| {
                file_pairs
                    .iter()
                    .rev()
                    .find(|(k, _, _)| k == name)
                    .map(|(_, v, _)| v.as_str())
            })
    };
    let level: Level = lookup("level")
        .map(str::parse)
        .transpose()?
        .unwrap_or(Level::Word);
    let family: Family = lookup("family")
        .map(str::parse)
        .transpose()?
        .unwrap_or(Family::Shallow);
    let mut cfg = RunConfig::defaults(level, family);
    let origin = file.map(|(_, o)| o).unwrap_or("");
    for (k, v, line) in &file_pairs {
        cfg.set(k, v).with_context(|| format!("{origin}:{line}"))?;
    }
    for (k, v) in flags {
        cfg.set(k, v)
            .with_context(|| format!("flag --{}", find_key(k).expect("checked above").flag))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>, flags: &[(String, String)]) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            parse_config(Some((&text, &p.display().to_string())), flags)
        }
        None => parse_config(None, flags),
    }
}
