use std::fmt;

use super::layers::{Conv, Dense, Norm, Pass};
use super::spec::{ArchSpec, Family, Level, Tail};
use crate::autodiff::{
    grad_check, GradCheckConfig, GradCheckReport, Mode, ParamId, ParamStore, Tape, Var,
};
use crate::error::{Error, Result};
use crate::rng::{streams, RngStream};
use crate::tensor::{Scalar, Tensor};
use crate::tokenize::{ALPHABET_SIZE, EMBED_INIT_RANGE};

/// One row of the structural report. Shapes exclude the batch dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerRow {
    pub name: String,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelReport {
    pub rows: Vec<LayerRow>,
    pub total_params: usize,
    /// Shallow models: width of the concatenated pooled features.
    pub concat_width: Option<usize>,
    /// DenseNet: sequence length after each transition.
    pub transition_lengths: Vec<usize>,
    /// DenseNet: input channels of every conv block, per dense block.
    pub block_input_channels: Vec<Vec<usize>>,
}

fn shape_str(s: &[usize]) -> String {
    let parts: Vec<String> = s.iter().map(usize::to_string).collect();
    format!("[{}]", parts.join(", "))
}

impl fmt::Display for ModelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<28} {:>16} {:>16} {:>12}",
            "layer", "input", "output", "params"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<28} {:>16} {:>16} {:>12}",
                r.name,
                shape_str(&r.input),
                shape_str(&r.output),
                r.params
            )?;
        }
        if let Some(w) = self.concat_width {
            writeln!(f, "concat width: {w}")?;
        }
        if !self.transition_lengths.is_empty() {
            let l: Vec<String> = self
                .transition_lengths
                .iter()
                .map(usize::to_string)
                .collect();
            writeln!(f, "transition lengths: {}", l.join(" "))?;
        }
        write!(f, "total params: {}", self.total_params)
    }
}

#[derive(Clone, Debug)]
enum InputAdapter {
    /// 69-channel one-hot characters, convolved directly from indices.
    OneHot,
    Embedding {
        table: ParamId,
    },
}

/// Output of the input adapter: raw indices (one-hot) or embedded vectors.
enum Fed {
    Indices,
    Dense(Var),
}

#[derive(Clone, Debug)]
struct ShallowNet {
    branches: Vec<Conv>,
    dropout: f64,
    classifier: Dense,
}

#[derive(Clone, Debug)]
struct DenseLayer {
    norm: Norm,
    conv: Conv,
}

#[derive(Clone, Debug)]
struct DenseNet {
    stem: Conv,
    blocks: Vec<Vec<DenseLayer>>,
    transitions: Vec<DenseLayer>,
    final_norm: Norm,
    tail: Tail,
    pool_kernel: usize,
    hidden: Vec<Dense>,
    dropout: f64,
    classifier: Dense,
}

#[derive(Clone, Debug)]
enum Net {
    Shallow(ShallowNet),
    DenseNet(DenseNet),
}

/// A built classifier: layer structure, parameters and a structural report.
#[derive(Clone, Debug)]
pub struct ModelGraph<T> {
    spec: ArchSpec,
    vocab_size: usize,
    input: InputAdapter,
    net: Net,
    params: ParamStore<T>,
    report: ModelReport,
}

struct Builder<'a, T> {
    store: ParamStore<T>,
    rng: &'a mut RngStream,
    rows: Vec<LayerRow>,
}

impl<T: Scalar> Builder<'_, T> {
    fn row(&mut self, name: impl Into<String>, input: &[usize], output: &[usize], params: usize) {
        self.rows.push(LayerRow {
            name: name.into(),
            input: input.to_vec(),
            output: output.to_vec(),
            params,
        });
    }

    /// Registers the input adapter; returns it with the (channels, len) it feeds.
    fn input(
        &mut self,
        spec: &ArchSpec,
        vocab_size: usize,
        table: Option<Tensor<T>>,
    ) -> Result<(InputAdapter, usize)> {
        let len = spec.max_len;
        match spec.level {
            Level::Char => {
                self.row("onehot", &[len], &[ALPHABET_SIZE, len], 0);
                Ok((InputAdapter::OneHot, ALPHABET_SIZE))
            }
            Level::Word => {
                let dim = spec.embed_dim;
                let table = match table {
                    Some(t) => {
                        if t.shape() != [dim, vocab_size] {
                            return Err(Error::shape(
                                "embedding",
                                format!("table {:?}, expected [{dim}, {vocab_size}]", t.shape()),
                            ));
                        }
                        t
                    }
                    None => {
                        let mut erng = self.rng.substream(streams::EMBEDDING);
                        let mut t = Tensor::rand_uniform(
                            &[dim, vocab_size],
                            -EMBED_INIT_RANGE,
                            EMBED_INIT_RANGE,
                            &mut erng,
                        )?;
                        let d = t.data_mut();
                        for k in 0..dim {
                            d[k * vocab_size] = T::zero();
                        }
                        t
                    }
                };
                let id = self.store.add("embedding", table, true)?;
                // column 0 is padding and stays zero
                self.store.freeze_column(id, 0)?;
                self.row("embedding", &[len], &[dim, len], dim * vocab_size);
                Ok((InputAdapter::Embedding { table: id }, dim))
            }
        }
    }
}

impl<T: Scalar> ModelGraph<T> {
    /// Builds the model described by `spec`. `vocab_size` is the embedding
    /// table width for word models (ignored for characters). A prepared
    /// `(embed_dim, vocab_size)` table may be supplied; otherwise it is drawn
    /// uniformly with a zero padding column.
    pub fn build(
        spec: &ArchSpec,
        vocab_size: usize,
        table: Option<Tensor<T>>,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        if spec.level == Level::Word && vocab_size < 2 {
            return Err(Error::invalid(format!(
                "word vocabulary size must be >= 2, got {vocab_size}"
            )));
        }
        let mut rng = RngStream::new(seed, streams::INIT);
        let mut b = Builder {
            store: ParamStore::new(),
            rng: &mut rng,
            rows: Vec::new(),
        };
        let (input, channels) = b.input(spec, vocab_size, table)?;
        let mut report = ModelReport {
            rows: Vec::new(),
            total_params: 0,
            concat_width: None,
            transition_lengths: Vec::new(),
            block_input_channels: Vec::new(),
        };
        let net = match spec.family {
            Family::Shallow => Net::Shallow(build_shallow(&mut b, spec, channels, &mut report)?),
            Family::DenseNet => Net::DenseNet(build_densenet(&mut b, spec, channels, &mut report)?),
        };
        report.rows = b.rows;
        report.total_params = report.rows.iter().map(|r| r.params).sum();
        debug_assert_eq!(report.total_params, b.store.trainable_count());
        Ok(Self {
            spec: spec.clone(),
            vocab_size: if spec.level == Level::Char {
                ALPHABET_SIZE
            } else {
                vocab_size
            },
            input,
            net,
            params: b.store,
            report,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn inspect(&self) -> &ModelReport {
        &self.report
    }

    /// Logits `(batch, classes)` for index rows of equal length.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        indices: &[usize],
        batch: usize,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Var> {
        let Self {
            input, net, params, ..
        } = self;
        forward(input, net, params, tape, indices, batch, mode, rng)
    }

    /// Forward pass plus mean cross-entropy; returns the loss node and probabilities.
    pub fn loss(
        &mut self,
        tape: &mut Tape<T>,
        indices: &[usize],
        labels: &[usize],
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Var, Tensor<T>)> {
        let logits = self.forward(tape, indices, labels.len(), mode, rng)?;
        tape.softmax_cross_entropy(logits, labels)
    }
}

impl ModelGraph<f64> {
    /// Finite-difference check of the full model's loss on one batch in train
    /// mode. Dropout masks are re-drawn from the same seed on every probe.
    pub fn grad_check(
        &mut self,
        label: &str,
        indices: &[usize],
        labels: &[usize],
        cfg: &GradCheckConfig,
    ) -> GradCheckReport {
        let Self {
            input, net, params, ..
        } = self;
        let seed = cfg.seed;
        grad_check(label, params, cfg, |tape, store| {
            let mut rng = RngStream::new(seed, streams::DROPOUT);
            let logits = forward(
                input,
                net,
                store,
                tape,
                indices,
                labels.len(),
                Mode::Train,
                &mut rng,
            )?;
            Ok(tape.softmax_cross_entropy(logits, labels)?.0)
        })
    }
}

fn build_shallow<T: Scalar>(
    b: &mut Builder<'_, T>,
    spec: &ArchSpec,
    channels: usize,
    report: &mut ModelReport,
) -> Result<ShallowNet> {
    let len = spec.max_len;
    let mut branches = Vec::with_capacity(spec.windows.len());
    for &h in &spec.windows {
        if h > len {
            return Err(Error::invalid(format!(
                "max_len {len} is shorter than window {h}"
            )));
        }
        let conv = Conv::new(
            &mut b.store,
            b.rng,
            &format!("conv_h{h}"),
            channels,
            spec.filters,
            h,
            0,
        )?;
        let out = conv.out_len(len);
        b.row(
            format!("conv_h{h}"),
            &[channels, len],
            &[spec.filters, out],
            conv.params(),
        );
        b.row(
            format!("relu_h{h}"),
            &[spec.filters, out],
            &[spec.filters, out],
            0,
        );
        b.row(
            format!("maxpool_h{h}"),
            &[spec.filters, out],
            &[spec.filters],
            0,
        );
        branches.push(conv);
    }
    let width = spec.filters * spec.windows.len();
    report.concat_width = Some(width);
    b.row("concat", &[spec.windows.len(), spec.filters], &[width], 0);
    if spec.dropout > 0.0 {
        b.row("dropout", &[width], &[width], 0);
    }
    let classifier = Dense::new(&mut b.store, b.rng, "classifier", width, spec.classes)?;
    b.row("classifier", &[width], &[spec.classes], classifier.params());
    Ok(ShallowNet {
        branches,
        dropout: spec.dropout,
        classifier,
    })
}

fn build_densenet<T: Scalar>(
    b: &mut Builder<'_, T>,
    spec: &ArchSpec,
    channels: usize,
    report: &mut ModelReport,
) -> Result<DenseNet> {
    let pad = (spec.kernel - 1) / 2;
    let mut len = spec.max_len;
    let stem = Conv::new(
        &mut b.store,
        b.rng,
        "stem",
        channels,
        spec.init_channels,
        spec.kernel,
        pad,
    )?;
    b.row(
        "stem",
        &[channels, len],
        &[spec.init_channels, len],
        stem.params(),
    );

    let mut c = spec.init_channels;
    let mut blocks = Vec::with_capacity(4);
    let mut transitions = Vec::with_capacity(3);
    for (bi, &n_layers) in spec.blocks.iter().enumerate() {
        let mut layers = Vec::with_capacity(n_layers);
        let mut inputs = Vec::with_capacity(n_layers);
        for li in 0..n_layers {
            let name = format!("block{}.layer{}", bi + 1, li + 1);
            let norm = Norm::new(
                &mut b.store,
                &format!("{name}.bn"),
                c,
                spec.bn_eps,
                spec.bn_momentum,
            )?;
            let conv = Conv::new(
                &mut b.store,
                b.rng,
                &format!("{name}.conv"),
                c,
                spec.growth,
                spec.kernel,
                pad,
            )?;
            b.row(
                name,
                &[c, len],
                &[c + spec.growth, len],
                norm.params() + conv.params(),
            );
            inputs.push(c);
            c += spec.growth;
            layers.push(DenseLayer { norm, conv });
        }
        report.block_input_channels.push(inputs);
        blocks.push(layers);
        if bi + 1 < spec.blocks.len() {
            let name = format!("transition{}", bi + 1);
            let c_out = (c / 2).max(1);
            let norm = Norm::new(
                &mut b.store,
                &format!("{name}.bn"),
                c,
                spec.bn_eps,
                spec.bn_momentum,
            )?;
            let conv = Conv::new(
                &mut b.store,
                b.rng,
                &format!("{name}.conv"),
                c,
                c_out,
                spec.kernel,
                pad,
            )?;
            b.row(
                format!("{name}.conv"),
                &[c, len],
                &[c_out, len],
                norm.params() + conv.params(),
            );
            let pooled = len.div_ceil(2);
            if pooled == 0 {
                return Err(Error::invalid(format!(
                    "sequence length reaches 0 at {name}"
                )));
            }
            b.row(format!("{name}.pool"), &[c_out, len], &[c_out, pooled], 0);
            report.transition_lengths.push(pooled);
            c = c_out;
            len = pooled;
            transitions.push(DenseLayer { norm, conv });
        }
    }
    let final_norm = Norm::new(&mut b.store, "final.bn", c, spec.bn_eps, spec.bn_momentum)?;
    b.row("final.bn_relu", &[c, len], &[c, len], final_norm.params());

    let mut hidden = Vec::new();
    let features = match spec.tail {
        Tail::GlobalAvg => {
            b.row("tail.avgpool", &[c, len], &[c], 0);
            c
        }
        Tail::LocalMax => {
            let pooled = len.div_ceil(spec.pool_kernel);
            if pooled == 0 {
                return Err(Error::invalid(
                    "sequence length reaches 0 at the tail pooling",
                ));
            }
            b.row("tail.maxpool", &[c, len], &[c, pooled], 0);
            let flat = c * pooled;
            b.row("tail.flatten", &[c, pooled], &[flat], 0);
            let mut width = flat;
            for i in 1..=2 {
                let fc = Dense::new(&mut b.store, b.rng, &format!("fc{i}"), width, spec.fc_width)?;
                b.row(format!("fc{i}"), &[width], &[spec.fc_width], fc.params());
                width = spec.fc_width;
                hidden.push(fc);
            }
            width
        }
    };
    if spec.dropout > 0.0 {
        b.row("dropout", &[features], &[features], 0);
    }
    let classifier = Dense::new(&mut b.store, b.rng, "classifier", features, spec.classes)?;
    b.row(
        "classifier",
        &[features],
        &[spec.classes],
        classifier.params(),
    );
    Ok(DenseNet {
        stem,
        blocks,
        transitions,
        final_norm,
        tail: spec.tail,
        pool_kernel: spec.pool_kernel,
        hidden,
        dropout: spec.dropout,
        classifier,
    })
}

#[allow(clippy::too_many_arguments)]
fn forward<T: Scalar>(
    input: &InputAdapter,
    net: &Net,
    store: &mut ParamStore<T>,
    tape: &mut Tape<T>,
    indices: &[usize],
    batch: usize,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<Var> {
    if batch == 0 || !indices.len().is_multiple_of(batch) {
        return Err(Error::shape(
            "forward",
            format!("{} indices do not split into {batch} rows", indices.len()),
        ));
    }
    let len = indices.len() / batch;
    let mut pass = Pass {
        tape,
        store,
        mode,
        rng,
        batch,
    };
    let fed = match input {
        InputAdapter::OneHot => {
            if let Some(pos) = indices.iter().position(|&i| i > ALPHABET_SIZE) {
                return Err(Error::IndexOutOfRange {
                    what: "character",
                    position: pos,
                    index: indices[pos],
                    bound: ALPHABET_SIZE + 1,
                });
            }
            Fed::Indices
        }
        InputAdapter::Embedding { table, .. } => {
            let t = pass.tape.param(pass.store, *table);
            Fed::Dense(pass.tape.embedding(indices, batch, len, t)?)
        }
    };
    let first_conv = |pass: &mut Pass<'_, T>, conv: &Conv| match fed {
        Fed::Indices => conv.apply_onehot(pass, indices, len),
        Fed::Dense(x) => conv.apply(pass, x),
    };
    match net {
        Net::Shallow(s) => {
            let mut pooled = Vec::with_capacity(s.branches.len());
            for conv in &s.branches {
                let c = first_conv(&mut pass, conv)?;
                let a = pass.tape.relu(c);
                pooled.push(pass.tape.global_max_pool(a)?);
            }
            let g = concat_features(&mut pass, &pooled)?;
            let g = pass.tape.dropout(g, s.dropout, mode, pass.rng)?;
            s.classifier.apply(&mut pass, g)
        }
        Net::DenseNet(d) => {
            let mut x = first_conv(&mut pass, &d.stem)?;
            for (bi, block) in d.blocks.iter().enumerate() {
                let mut features = vec![x];
                for layer in block {
                    let inp = pass.tape.dense_concat(&features)?;
                    features.push(conv_block(&mut pass, layer, inp)?);
                }
                x = pass.tape.dense_concat(&features)?;
                if let Some(t) = d.transitions.get(bi) {
                    let y = conv_block(&mut pass, t, x)?;
                    x = pass.tape.local_max_pool(y, 2)?;
                }
            }
            let x = d.final_norm.apply(&mut pass, x)?;
            let x = pass.tape.relu(x);
            let mut h = match d.tail {
                Tail::GlobalAvg => pass.tape.global_avg_pool(x)?,
                Tail::LocalMax => {
                    let p = pass.tape.local_max_pool(x, d.pool_kernel)?;
                    pass.tape.flatten(p)?
                }
            };
            for fc in &d.hidden {
                let z = fc.apply(&mut pass, h)?;
                h = pass.tape.relu(z);
            }
            let h = pass.tape.dropout(h, d.dropout, mode, pass.rng)?;
            d.classifier.apply(&mut pass, h)
        }
    }
}

/// BN, ReLU, then convolution.
fn conv_block<T: Scalar>(pass: &mut Pass<'_, T>, layer: &DenseLayer, x: Var) -> Result<Var> {
    let y = layer.norm.apply(pass, x)?;
    let y = pass.tape.relu(y);
    layer.conv.apply(pass, y)
}

/// Concatenates `(batch, C)` pooled vectors into `(batch, ΣC)`.
fn concat_features<T: Scalar>(pass: &mut Pass<'_, T>, parts: &[Var]) -> Result<Var> {
    // viewed as (batch, C, 1) maps, channel concatenation is feature concatenation
    let mut maps = Vec::with_capacity(parts.len());
    for &p in parts {
        maps.push(as_map(pass.tape, p)?);
    }
    let cat = pass.tape.dense_concat(&maps)?;
    pass.tape.flatten(cat)
}

fn as_map<T: Scalar>(tape: &mut Tape<T>, v: Var) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    tape.reshape(v, &[shape[0], shape[1], 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_densenet(level: Level) -> ArchSpec {
        let mut s = ArchSpec::densenet_default(level);
        s.blocks = vec![2, 1, 1, 2];
        s.growth = 4;
        s.init_channels = 6;
        s.fc_width = 8;
        s.max_len = 24;
        s.embed_dim = 5;
        s.classes = 3;
        s
    }

    #[test]
    fn shallow_word_parameter_count() {
        let spec = ArchSpec::shallow_default(Level::Word);
        let g = ModelGraph::<f32>::build(&spec, 10, None, 0).unwrap();
        let closed_form = 300 * 10
            + (3 * 300 * 100 + 100)
            + (4 * 300 * 100 + 100)
            + (5 * 300 * 100 + 100)
            + (300 * 2 + 2);
        assert_eq!(g.inspect().total_params, closed_form);
        assert_eq!(closed_form, 363_902);
        assert_eq!(g.params().trainable_count(), closed_form);
        assert_eq!(g.inspect().concat_width, Some(300));
    }

    #[test]
    fn shallow_char_concat_width() {
        let spec = ArchSpec::shallow_default(Level::Char);
        let g = ModelGraph::<f32>::build(&spec, 0, None, 0).unwrap();
        let r = g.inspect();
        assert_eq!(r.concat_width, Some(2100));
        let conv = r.rows.iter().find(|r| r.name == "conv_h15").unwrap();
        assert_eq!(conv.output, vec![700, 1000]);
    }

    #[test]
    fn rows_compose_and_sum() {
        for level in [Level::Char, Level::Word] {
            let g = ModelGraph::<f64>::build(&tiny_densenet(level), 12, None, 1).unwrap();
            let r = g.inspect();
            assert_eq!(
                r.rows.iter().map(|x| x.params).sum::<usize>(),
                r.total_params
            );
            assert_eq!(r.total_params, g.params().trainable_count());
            for pair in r.rows.windows(2) {
                assert_eq!(
                    pair[0].output, pair[1].input,
                    "{} -> {}",
                    pair[0].name, pair[1].name
                );
            }
        }
    }

    #[test]
    fn dense_block_channel_arithmetic() {
        let mut s = tiny_densenet(Level::Char);
        s.blocks = vec![3, 3, 3, 3];
        let g = ModelGraph::<f32>::build(&s, 0, None, 0).unwrap();
        let r = g.inspect();
        assert_eq!(r.block_input_channels[0], vec![6, 10, 14]);
        // each later block starts from the halved output of the previous one
        let mut start = 6 + 3 * 4;
        for chans in &r.block_input_channels[1..] {
            start /= 2;
            let expect: Vec<usize> = (0..3).map(|l| start + l * 4).collect();
            assert_eq!(chans, &expect);
            start += 3 * 4;
        }
    }

    #[test]
    fn tail_swap_touches_only_the_tail() {
        let a = tiny_densenet(Level::Word);
        let mut b = a.clone();
        b.tail = Tail::LocalMax;
        let ra = ModelGraph::<f32>::build(&a, 12, None, 0)
            .unwrap()
            .inspect()
            .clone();
        let rb = ModelGraph::<f32>::build(&b, 12, None, 0)
            .unwrap()
            .inspect()
            .clone();
        let body = |r: &ModelReport| -> Vec<LayerRow> {
            r.rows
                .iter()
                .take_while(|x| !x.name.starts_with("tail"))
                .cloned()
                .collect()
        };
        assert_eq!(body(&ra), body(&rb));
        assert_ne!(ra.rows, rb.rows);
    }

    #[test]
    fn doubling_length_keeps_global_pool_counts() {
        let mut shallow = ArchSpec::shallow_default(Level::Word);
        shallow.max_len = 32;
        let mut dense = tiny_densenet(Level::Word);
        dense.tail = Tail::GlobalAvg;
        for spec in [shallow, dense] {
            let mut doubled = spec.clone();
            doubled.max_len *= 2;
            let n1 = ModelGraph::<f32>::build(&spec, 20, None, 0)
                .unwrap()
                .inspect()
                .total_params;
            let n2 = ModelGraph::<f32>::build(&doubled, 20, None, 0)
                .unwrap()
                .inspect()
                .total_params;
            assert_eq!(n1, n2);
        }
    }

    #[test]
    fn forward_yields_batch_by_classes() {
        for level in [Level::Char, Level::Word] {
            for family in [Family::Shallow, Family::DenseNet] {
                let mut spec = if family == Family::Shallow {
                    let mut s = ArchSpec::shallow_default(level);
                    s.windows = vec![2, 3];
                    s.filters = 4;
                    s.max_len = 16;
                    s.embed_dim = 5;
                    s.classes = 3;
                    s
                } else {
                    tiny_densenet(level)
                };
                spec.max_len = 16;
                let vocab = if level == Level::Char {
                    ALPHABET_SIZE + 1
                } else {
                    12
                };
                let mut g = ModelGraph::<f64>::build(&spec, 12, None, 3).unwrap();
                let mut rng = RngStream::new(0, 0);
                let idx: Vec<usize> = (0..2 * 16).map(|_| rng.below(vocab)).collect();
                for mode in [Mode::Train, Mode::Eval] {
                    let mut tape = Tape::new();
                    let out = g.forward(&mut tape, &idx, 2, mode, &mut rng).unwrap();
                    assert_eq!(tape.value(out).shape(), &[2, 3]);
                }
            }
        }
    }

    #[test]
    fn short_input_errors() {
        let mut spec = ArchSpec::shallow_default(Level::Char);
        spec.max_len = 20;
        assert!(ModelGraph::<f32>::build(&spec, 0, None, 0).is_err());
        let mut d = tiny_densenet(Level::Char);
        d.max_len = 1;
        d.pool_kernel = 3;
        assert!(ModelGraph::<f32>::build(&d, 0, None, 0).is_ok());
    }

    #[test]
    fn eval_is_deterministic_and_uses_running_stats() {
        let spec = tiny_densenet(Level::Word);
        let mut g = ModelGraph::<f64>::build(&spec, 12, None, 0).unwrap();
        let idx: Vec<usize> = (0..3 * 24).map(|i| i % 12).collect();
        let mut rng = RngStream::new(0, 0);
        let run = |g: &mut ModelGraph<f64>, rng: &mut RngStream| {
            let mut tape = Tape::new();
            let v = g.forward(&mut tape, &idx, 3, Mode::Eval, rng).unwrap();
            tape.value(v).clone()
        };
        let a = run(&mut g, &mut rng);
        let b = run(&mut g, &mut rng);
        assert_eq!(a, b);
        let mut tape = Tape::new();
        g.forward(&mut tape, &idx, 3, Mode::Train, &mut rng)
            .unwrap();
        let c = run(&mut g, &mut rng);
        assert_ne!(a, c);
    }
}
