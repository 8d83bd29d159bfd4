//! Pretrained vector files and embedding-table initialization.
//!
//! File format: a header line `<count> <dim>`, then one line per token with the
//! token followed by `dim` space-separated decimal floats.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::words::WordVocab;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

/// Range of the uniform initialization for words without a pretrained vector.
pub const EMBED_INIT_RANGE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Pretrained {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl Pretrained {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| err(1, "missing header".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [count, dim] = fields[..] else {
            return Err(err(
                1,
                format!("header must be '<count> <dim>', got '{header}'"),
            ));
        };
        let count: usize = count
            .parse()
            .map_err(|_| err(1, format!("bad count '{count}'")))?;
        let dim: usize = dim
            .parse()
            .map_err(|_| err(1, format!("bad dimension '{dim}'")))?;
        if dim == 0 {
            return Err(err(1, "dimension must be positive".into()));
        }
        let mut vectors = HashMap::with_capacity(count);
        let mut rows = 0;
        for (i, line) in lines {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ').filter(|s| !s.is_empty());
            let token = parts.next().expect("non-empty line").to_string();
            let values = parts
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| err(n, format!("bad float '{s}'")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != dim {
                return Err(err(
                    n,
                    format!("expected {dim} values for '{token}', got {}", values.len()),
                ));
            }
            if vectors.insert(token.clone(), values).is_some() {
                log::warn!("{origin}:{n}: duplicate token '{token}', keeping the last vector");
            }
            rows += 1;
        }
        if rows != count {
            return Err(err(
                1,
                format!("header announces {count} vectors, file has {rows}"),
            ));
        }
        Ok(Self { dim, vectors })
    }

    /// Serializes with tokens in lexicographic order.
    pub fn to_text(&self) -> String {
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        let mut out = format!("{} {}\n", self.vectors.len(), self.dim);
        for t in tokens {
            out.push_str(t);
            for v in &self.vectors[t] {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_pretrained(path: &Path) -> Result<Pretrained> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Pretrained::parse(&text, &path.display().to_string())
}

pub fn write_pretrained(path: &Path, p: &Pretrained) -> Result<()> {
    std::fs::write(path, p.to_text()).map_err(|e| Error::io(path, e))
}

/// `(dim, |V|)` table: pretrained vectors where available, uniform in
/// `[-0.1, 0.1)` elsewhere (including the OOV column), zero padding column.
pub fn init_embeddings<T: Scalar>(
    vocab: &WordVocab,
    dim: usize,
    pretrained: Option<&Pretrained>,
    rng: &mut RngStream,
) -> Result<Tensor<T>> {
    if let Some(p) = pretrained {
        if p.dim != dim {
            return Err(Error::invalid(format!(
                "pretrained vectors have dimension {}, embedding expects {dim}",
                p.dim
            )));
        }
    }
    let v = vocab.len();
    let mut table = Tensor::<T>::rand_uniform(&[dim, v], -EMBED_INIT_RANGE, EMBED_INIT_RANGE, rng)?;
    let data = table.data_mut();
    for k in 0..dim {
        data[k * v + WordVocab::PAD] = T::zero();
    }
    if let Some(p) = pretrained {
        let mut hits = 0usize;
        for col in WordVocab::RESERVED..v {
            let token = vocab.token(col).expect("non-reserved index");
            if let Some(vec) = p.vectors.get(token) {
                hits += 1;
                for (k, &x) in vec.iter().enumerate() {
                    data[k * v + col] = T::of(x);
                }
            }
        }
        log::info!(
            "pretrained vectors cover {hits} of {} vocabulary words",
            v - WordVocab::RESERVED
        );
    }
    Ok(table)
}
