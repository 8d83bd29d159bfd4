//! CSV ingestion, encoding and mini-batching.
//!
//! Rows look like `"3","title","body"`: a 1-based class index followed by one
//! or more text fields. Fields are double-quoted with embedded quotes doubled;
//! unquoted fields are accepted too.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::mpsc;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tokenize::Encoder;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    /// 0-based class index.
    pub label: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: Split,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, split: Split, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| s.label >= num_classes)
        {
            return Err(Error::invalid(format!(
                "sample {i} has label {} but there are only {num_classes} classes",
                s.label
            )));
        }
        Ok(Self {
            samples,
            split,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.text.as_str())
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// First `n` samples (all of them when `n >= len`).
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            samples: self.samples.iter().take(n).cloned().collect(),
            split: self.split,
            num_classes: self.num_classes,
        }
    }

    pub fn encode(&self, encoder: &Encoder) -> EncodedDataset {
        let max_len = encoder.max_len();
        let mut indices = Vec::with_capacity(self.len() * max_len);
        for s in &self.samples {
            indices.extend(encoder.encode(&s.text).indices);
        }
        EncodedDataset {
            indices,
            labels: self.samples.iter().map(|s| s.label).collect(),
            max_len,
            num_classes: self.num_classes,
        }
    }

    /// Serializes in the quoted CSV schema with 1-based labels.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&format!(
                "\"{}\",\"{}\"\n",
                s.label + 1,
                s.text.replace('"', "\"\"")
            ));
        }
        out
    }
}

/// Splits CSV text into records of raw field strings, each tagged with the
/// line it starts on. Blank lines are skipped.
fn records(text: &str, origin: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let err = |line: usize, msg: &str| Error::Parse {
        path: origin.to_string(),
        line,
        msg: msg.to_string(),
    };
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1;
    while chars.peek().is_some() {
        let start = line;
        let mut fields = Vec::new();
        loop {
            let mut field = String::new();
            if chars.peek() == Some(&'"') {
                chars.next();
                loop {
                    match chars.next() {
                        None => return Err(err(start, "unbalanced quotes: field never closed")),
                        Some('"') if chars.peek() == Some(&'"') => {
                            chars.next();
                            field.push('"');
                        }
                        Some('"') => break,
                        Some(c) => {
                            if c == '\n' {
                                line += 1;
                            }
                            field.push(c);
                        }
                    }
                }
                match chars.peek() {
                    None | Some(',') | Some('\n') | Some('\r') => {}
                    Some(_) => {
                        return Err(err(line, "unbalanced quotes: text after closing quote"))
                    }
                }
            } else {
                while let Some(&c) = chars.peek() {
                    if c == ',' || c == '\n' || c == '\r' {
                        break;
                    }
                    if c == '"' {
                        return Err(err(line, "unbalanced quotes: quote inside unquoted field"));
                    }
                    field.push(c);
                    chars.next();
                }
            }
            fields.push(field);
            match chars.next() {
                Some(',') => continue,
                Some('\r') => {
                    if chars.peek() == Some(&'\n') {
                        chars.next();
                    }
                    line += 1;
                    break;
                }
                Some('\n') => {
                    line += 1;
                    break;
                }
                None => break,
                Some(_) => unreachable!("field loops stop only at separators"),
            }
        }
        if !(fields.len() == 1 && fields[0].is_empty()) {
            out.push((start, fields));
        }
    }
    Ok(out)
}

/// Parses CSV text; `origin` names the source in error messages.
pub fn parse_csv(text: &str, origin: &str, num_classes: usize, split: Split) -> Result<Dataset> {
    let mut samples = Vec::new();
    for (row, (line, fields)) in records(text, origin)?.into_iter().enumerate() {
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg: format!("row {}: {msg}", row + 1),
        };
        if fields.len() < 2 {
            return Err(err(format!(
                "expected a label and at least one text field, got {} field(s)",
                fields.len()
            )));
        }
        let raw = fields[0].trim();
        let label: usize = raw
            .parse()
            .map_err(|_| err(format!("label '{raw}' is not an integer")))?;
        if label == 0 || label > num_classes {
            return Err(err(format!("label {label} outside [1, {num_classes}]")));
        }
        samples.push(Sample {
            label: label - 1,
            text: fields[1..].join(" "),
        });
    }
    Dataset::new(samples, split, num_classes)
}

pub fn load_csv(path: &Path, num_classes: usize, split: Split) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, &path.display().to_string(), num_classes, split)
}

pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    std::fs::write(path, data.to_csv()).map_err(|e| Error::io(path, e))
}

/// Encoded samples stored as one flat `(n, max_len)` index matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedDataset {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub max_len: usize,
    pub num_classes: usize,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.max_len..(i + 1) * self.max_len]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Row-major `(len, max_len)` indices.
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub max_len: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Iterator over mini-batches in a fixed sample order.
pub struct Batches<'a> {
    data: &'a EncodedDataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let rows = &self.order[self.next..end];
        self.next = end;
        let mut indices = Vec::with_capacity(rows.len() * self.data.max_len);
        for &r in rows {
            indices.extend_from_slice(self.data.row(r));
        }
        Some(Batch {
            indices,
            labels: rows.iter().map(|&r| self.data.labels[r]).collect(),
            max_len: self.data.max_len,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.next).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Batches<'_> {}

/// Batches in file order, or shuffled by `rng`. The last partial batch is kept.
pub fn make_batches<'a>(
    data: &'a EncodedDataset,
    batch_size: usize,
    rng: Option<&mut RngStream>,
) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    if let Some(rng) = rng {
        rng.shuffle(&mut order);
    }
    Ok(Batches {
        data,
        order,
        batch_size,
        next: 0,
    })
}

/// Feeds `batches` to `consume` while a producer thread assembles the next
/// ones ahead of time through a bounded queue.
pub fn prefetch<I, F>(batches: I, depth: usize, mut consume: F) -> Result<()>
where
    I: Iterator<Item = Batch> + Send,
    F: FnMut(Batch) -> Result<()>,
{
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel(depth.max(1));
        scope.spawn(move || {
            for b in batches {
                if tx.send(b).is_err() {
                    // consumer stopped early
                    break;
                }
            }
        });
        for b in rx {
            consume(b)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::{CharVocab, CHAR_MAX_LEN};

    #[test]
    fn parses_quoted_row() {
        let d = parse_csv("\"3\",\"title\",\"body\"\n", "mem", 4, Split::Train).unwrap();
        assert_eq!(
            d.samples,
            vec![Sample {
                label: 2,
                text: "title body".into()
            }]
        );
    }

    #[test]
    fn doubled_quotes_commas_and_newlines() {
        let d = parse_csv(
            "\"1\",\"say \"\"hi\"\", ok\",\"two\nlines\"\r\n\"2\",\"\"\n",
            "mem",
            2,
            Split::Test,
        )
        .unwrap();
        assert_eq!(d.samples[0].text, "say \"hi\", ok two\nlines");
        assert_eq!(
            d.samples[1],
            Sample {
                label: 1,
                text: String::new()
            }
        );
    }

    #[test]
    fn empty_text_is_kept() {
        let d = parse_csv("\"1\",\"\"\n", "mem", 2, Split::Train).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.samples[0].text, "");
    }

    #[test]
    fn label_out_of_range_names_row() {
        let e = parse_csv("\"1\",\"a\"\n\"5\",\"b\"\n", "f.csv", 4, Split::Train).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("f.csv:2") && msg.contains("row 2"), "{msg}");
        assert!(parse_csv("\"0\",\"a\"\n", "f", 4, Split::Train).is_err());
    }

    #[test]
    fn unbalanced_quotes_rejected() {
        assert!(parse_csv("\"1\",\"open\n", "f", 2, Split::Train).is_err());
        assert!(parse_csv("\"1\",\"a\"b\n", "f", 2, Split::Train).is_err());
        assert!(parse_csv("1,a\"b\n", "f", 2, Split::Train).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = Dataset::new(
            vec![
                Sample {
                    label: 0,
                    text: "a \"q\", b".into(),
                },
                Sample {
                    label: 1,
                    text: "line\nbreak".into(),
                },
            ],
            Split::Train,
            2,
        )
        .unwrap();
        assert_eq!(parse_csv(&d.to_csv(), "mem", 2, Split::Train).unwrap(), d);
    }

    fn numbered(n: usize, max_len: usize) -> EncodedDataset {
        EncodedDataset {
            indices: (0..n)
                .flat_map(|i| std::iter::repeat_n(i, max_len))
                .collect(),
            labels: (0..n).map(|i| i % 2).collect(),
            max_len,
            num_classes: 2,
        }
    }

    #[test]
    fn batch_sizes_keep_remainder() {
        let data = numbered(300, 2);
        let sizes: Vec<usize> = make_batches(&data, 128, None)
            .unwrap()
            .map(|b| b.len())
            .collect();
        assert_eq!(sizes, vec![128, 128, 44]);
    }

    #[test]
    fn shuffle_is_seeded() {
        let data = numbered(50, 1);
        let order = |seed| -> Vec<usize> {
            let mut rng = RngStream::new(seed, 0);
            make_batches(&data, 7, Some(&mut rng))
                .unwrap()
                .flat_map(|b| b.indices)
                .collect()
        };
        assert_eq!(order(3), order(3));
        assert_ne!(order(3), order(4));
        let mut all = order(3);
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn char_batch_shape() {
        let samples = (0..130)
            .map(|i| Sample {
                label: i % 2,
                text: "abc".into(),
            })
            .collect();
        let d = Dataset::new(samples, Split::Train, 2).unwrap();
        let enc = d.encode(&Encoder::Char {
            vocab: CharVocab::default(),
            max_len: CHAR_MAX_LEN,
        });
        let b = make_batches(&enc, 128, None).unwrap().next().unwrap();
        assert_eq!((b.len(), b.indices.len() / b.len()), (128, 1014));
    }

    #[test]
    fn prefetch_preserves_order() {
        let data = numbered(20, 1);
        let mut seen = Vec::new();
        prefetch(make_batches(&data, 3, None).unwrap(), 2, |b| {
            seen.extend(b.indices);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, (0..20).collect::<Vec<_>>());
        let mut calls = 0;
        let r = prefetch(make_batches(&data, 1, None).unwrap(), 1, |_| {
            calls += 1;
            if calls == 2 {
                Err(Error::invalid("stop"))
            } else {
                Ok(())
            }
        });
        assert!(r.is_err());
        assert_eq!(calls, 2);
    }
}
