use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tokenize::{CHAR_MAX_LEN, WORD_MAX_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Level {
    Char,
    Word,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Shallow,
    DenseNet,
}

/// How a DenseNet turns its last feature map into the classifier input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tail {
    /// Local max-pooling, flatten, two hidden fully-connected layers.
    LocalMax,
    /// One global average pooling layer.
    GlobalAvg,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(Error::invalid(format!(
                        concat!("unknown ", stringify!($ty), " '{}' (expected ", $($text, " "),+, ")"),
                        other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Level { Char => "char", Word => "word" });
keyword_enum!(Family { Shallow => "shallow", DenseNet => "densenet" });
keyword_enum!(Tail { LocalMax => "max", GlobalAvg => "avg" });

pub const WORD_EMBED_DIM: usize = 300;

/// Declarative description of a classifier. Fields irrelevant to `family` are
/// carried but ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub level: Level,
    pub family: Family,
    /// Shallow: parallel kernel window sizes.
    pub windows: Vec<usize>,
    /// Shallow: filters per window.
    pub filters: usize,
    /// DenseNet: conv blocks in each of the four dense blocks.
    pub blocks: Vec<usize>,
    pub growth: usize,
    pub init_channels: usize,
    /// DenseNet conv window (odd, same-length padded).
    pub kernel: usize,
    pub tail: Tail,
    /// Kernel of the final local max-pooling in the `max` tail.
    pub pool_kernel: usize,
    /// Width of the two hidden fully-connected layers in the `max` tail.
    pub fc_width: usize,
    pub dropout: f64,
    pub classes: usize,
    pub max_len: usize,
    /// Word embedding dimension (ignored for characters).
    pub embed_dim: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ArchSpec {
    pub const KEYS: [&'static str; 17] = [
        "level",
        "family",
        "windows",
        "filters",
        "blocks",
        "growth",
        "init_channels",
        "kernel",
        "tail",
        "pool_kernel",
        "fc_width",
        "dropout",
        "classes",
        "max_len",
        "embed_dim",
        "bn_eps",
        "bn_momentum",
    ];

    fn base(level: Level, family: Family) -> Self {
        Self {
            level,
            family,
            windows: vec![3, 4, 5],
            filters: 100,
            blocks: vec![4, 4, 4, 4],
            growth: 64,
            init_channels: 64,
            kernel: 3,
            tail: match level {
                Level::Char => Tail::LocalMax,
                Level::Word => Tail::GlobalAvg,
            },
            pool_kernel: match level {
                Level::Char => 3,
                Level::Word => 8,
            },
            fc_width: 2048,
            dropout: 0.0,
            classes: 2,
            max_len: match level {
                Level::Char => CHAR_MAX_LEN,
                Level::Word => WORD_MAX_LEN,
            },
            embed_dim: WORD_EMBED_DIM,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
        }
    }

    /// Char: windows (15, 20, 25) with 700 filters, no dropout.
    /// Word: windows (3, 4, 5) with 100 filters, dropout 0.5.
    pub fn shallow_default(level: Level) -> Self {
        let mut s = Self::base(level, Family::Shallow);
        match level {
            Level::Char => {
                s.windows = vec![15, 20, 25];
                s.filters = 700;
            }
            Level::Word => {
                s.windows = vec![3, 4, 5];
                s.filters = 100;
                s.dropout = 0.5;
            }
        }
        s
    }

    /// Blocks (4, 4, 4, 4), window 3; char ends in local max-pooling (kernel 3)
    /// and two fully-connected layers, word in global average pooling.
    pub fn densenet_default(level: Level) -> Self {
        Self::base(level, Family::DenseNet)
    }

    pub fn default_for(level: Level, family: Family) -> Self {
        match family {
            Family::Shallow => Self::shallow_default(level),
            Family::DenseNet => Self::densenet_default(level),
        }
    }

    /// Applies one `key = value` setting. Returns `Ok(false)` for keys that do
    /// not belong to the architecture.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |what: &str| Error::invalid(format!("{key}: expected {what}, got '{value}'"));
        let positive = |v: &str| -> Result<usize> {
            match v.trim().parse::<i64>() {
                Ok(n) if n > 0 => Ok(n as usize),
                _ => Err(bad("a positive integer")),
            }
        };
        let list = |v: &str| -> Result<Vec<usize>> { v.split([',', '-']).map(&positive).collect() };
        let float = |v: &str| v.trim().parse::<f64>().map_err(|_| bad("a number"));
        match key {
            "level" => self.level = value.parse()?,
            "family" => self.family = value.parse()?,
            "windows" => self.windows = list(value)?,
            "filters" => self.filters = positive(value)?,
            "blocks" => {
                let b = list(value)?;
                if b.len() != 4 {
                    return Err(bad("four block sizes such as 4-4-4-4"));
                }
                self.blocks = b;
            }
            "growth" => self.growth = positive(value)?,
            "init_channels" => self.init_channels = positive(value)?,
            "kernel" => self.kernel = positive(value)?,
            "tail" => self.tail = value.parse()?,
            "pool_kernel" => self.pool_kernel = positive(value)?,
            "fc_width" => self.fc_width = positive(value)?,
            "dropout" => self.dropout = float(value)?,
            "classes" => self.classes = positive(value)?,
            "max_len" => self.max_len = positive(value)?,
            "embed_dim" => self.embed_dim = positive(value)?,
            "bn_eps" => self.bn_eps = float(value)?,
            "bn_momentum" => self.bn_momentum = float(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let join =
            |v: &[usize], sep: &str| v.iter().map(usize::to_string).collect::<Vec<_>>().join(sep);
        Some(match key {
            "level" => self.level.to_string(),
            "family" => self.family.to_string(),
            "windows" => join(&self.windows, ","),
            "filters" => self.filters.to_string(),
            "blocks" => join(&self.blocks, "-"),
            "growth" => self.growth.to_string(),
            "init_channels" => self.init_channels.to_string(),
            "kernel" => self.kernel.to_string(),
            "tail" => self.tail.to_string(),
            "pool_kernel" => self.pool_kernel.to_string(),
            "fc_width" => self.fc_width.to_string(),
            "dropout" => format!("{:?}", self.dropout),
            "classes" => self.classes.to_string(),
            "max_len" => self.max_len.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "bn_eps" => format!("{:?}", self.bn_eps),
            "bn_momentum" => format!("{:?}", self.bn_momentum),
            _ => return None,
        })
    }

    /// Every key as a `key = value` line.
    pub fn to_config(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    /// Inverse of [`ArchSpec::to_config`]; starts from the defaults of the
    /// level and family given in the text.
    pub fn from_config(text: &str) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.trim(), v.trim()))
                    .ok_or_else(|| Error::invalid(format!("expected 'key = value', got '{l}'")))
            })
            .collect::<Result<_>>()?;
        let find = |k: &str| {
            pairs
                .iter()
                .rev()
                .find(|(key, _)| *key == k)
                .map(|(_, v)| *v)
        };
        let level = find("level")
            .map(str::parse)
            .transpose()?
            .unwrap_or(Level::Word);
        let family = find("family")
            .map(str::parse)
            .transpose()?
            .unwrap_or(Family::Shallow);
        let mut spec = Self::default_for(level, family);
        for (k, v) in pairs {
            if !spec.set(k, v)? {
                return Err(Error::invalid(format!("unknown architecture key '{k}'")));
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid(msg));
        if self.classes < 2 {
            return fail(format!("classes must be >= 2, got {}", self.classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        match self.family {
            Family::Shallow => {
                if self.windows.is_empty() {
                    return fail("shallow model needs at least one window".into());
                }
                let widest = *self.windows.iter().max().expect("non-empty");
                if self.max_len < widest {
                    return fail(format!(
                        "max_len {} is shorter than the widest window {widest}",
                        self.max_len
                    ));
                }
            }
            Family::DenseNet => {
                if self.blocks.len() != 4 {
                    return fail(format!(
                        "densenet needs 4 block sizes, got {:?}",
                        self.blocks
                    ));
                }
                if self.kernel.is_multiple_of(2) {
                    return fail(format!(
                        "densenet kernel must be odd for same-length padding, got {}",
                        self.kernel
                    ));
                }
                if !(0.0..1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
                    return fail("bn_momentum must be in [0, 1) and bn_eps positive".into());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shallow_defaults() {
        let c = ArchSpec::shallow_default(Level::Char);
        assert_eq!(
            (c.windows.as_slice(), c.filters, c.dropout),
            (&[15, 20, 25][..], 700, 0.0)
        );
        let w = ArchSpec::shallow_default(Level::Word);
        assert_eq!(
            (w.windows.as_slice(), w.filters, w.dropout),
            (&[3, 4, 5][..], 100, 0.5)
        );
        assert_eq!(c.max_len, 1014);
    }

    #[test]
    fn densenet_defaults() {
        let c = ArchSpec::densenet_default(Level::Char);
        assert_eq!(c.blocks, vec![4, 4, 4, 4]);
        assert_eq!(c.kernel, 3);
        assert_eq!((c.tail, c.pool_kernel), (Tail::LocalMax, 3));
        let w = ArchSpec::densenet_default(Level::Word);
        assert_eq!((w.tail, w.pool_kernel, w.kernel), (Tail::GlobalAvg, 8, 3));
        let mut deep = w.clone();
        deep.set("blocks", "10-10-4-4").unwrap();
        assert_eq!(deep.blocks, vec![10, 10, 4, 4]);
    }

    #[test]
    fn config_round_trip() {
        let mut s = ArchSpec::densenet_default(Level::Char);
        s.growth = 16;
        s.dropout = 0.25;
        let back = ArchSpec::from_config(&s.to_config()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_bad_values() {
        let mut s = ArchSpec::shallow_default(Level::Word);
        assert!(s.set("filters", "-5").is_err());
        assert!(s.set("blocks", "4-4-4").is_err());
        assert!(s.set("tail", "median").is_err());
        assert!(!s.set("nonsense", "1").unwrap());
        s.max_len = 4;
        assert!(s.validate().is_err());
    }
}
