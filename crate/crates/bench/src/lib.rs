//! Benchmarks for the hot paths: convolution, one training step and character
//! encoding. Run with `cargo bench -p textcnn-bench`.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion, Throughput};
use textcnn::autodiff::kernels::{conv1d_backward, conv1d_forward, ConvDims};
use textcnn::models::{ArchSpec, Level, ModelGraph};
use textcnn::rng::streams;
use textcnn::tokenize::{init_embeddings, CharVocab, Encoder, Tokenizer, WordVocab, CHAR_MAX_LEN};
use textcnn::train::{make_batches, synth_dataset, EncodedDataset, TrainConfig, Trainer};
use textcnn::RngStream;

fn random(n: usize, rng: &mut RngStream) -> Vec<f32> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()
}

pub fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv1d");
    let mut rng = RngStream::new(0, streams::INIT);
    // word-level window 3 over 300-dim embeddings, and a dense-block conv
    for (label, d) in [
        (
            "word_h3",
            ConvDims {
                batch: 16,
                c_in: 300,
                c_out: 100,
                len: 64,
                window: 3,
                pad: 0,
            },
        ),
        (
            "dense_k3",
            ConvDims {
                batch: 16,
                c_in: 128,
                c_out: 64,
                len: 64,
                window: 3,
                pad: 1,
            },
        ),
    ] {
        let out_len = d.out_len().unwrap();
        let x = random(d.batch * d.c_in * d.len, &mut rng);
        let w = random(d.c_out * d.c_in * d.window, &mut rng);
        let b = random(d.c_out, &mut rng);
        let gy = random(d.batch * d.c_out * out_len, &mut rng);
        g.throughput(Throughput::Elements(
            (2 * d.batch * d.c_out * out_len * d.c_in * d.window) as u64,
        ));
        g.bench_function(BenchmarkId::new("forward", label), |bench| {
            bench.iter(|| conv1d_forward(black_box(&x), black_box(&w), black_box(&b), d))
        });
        g.bench_function(BenchmarkId::new("backward", label), |bench| {
            bench.iter(|| conv1d_backward(black_box(&x), black_box(&w), black_box(&gy), d, true))
        });
    }
    g.finish();
}

pub fn train_step(c: &mut Criterion) {
    let mut rng = RngStream::new(0, streams::SYNTH);
    let data = synth_dataset(4, 8, 100, 24, &mut rng).unwrap();
    let tokenizer = Tokenizer::default();
    let vocab = WordVocab::from_texts(data.texts(), &tokenizer, 1).unwrap();
    let mut spec = ArchSpec::shallow_default(Level::Word);
    spec.classes = 4;
    spec.max_len = 32;
    let table = init_embeddings::<f32>(
        &vocab,
        spec.embed_dim,
        None,
        &mut RngStream::new(0, streams::EMBEDDING),
    )
    .unwrap();
    let model = ModelGraph::build(&spec, vocab.len(), Some(table), 0).unwrap();
    let encoder = Encoder::Word {
        vocab,
        tokenizer,
        max_len: 32,
    };
    let enc = data.encode(&encoder);
    let batch = make_batches(&enc, 32, None).unwrap().next().unwrap();
    let one = EncodedDataset {
        indices: batch.indices,
        labels: batch.labels,
        max_len: batch.max_len,
        num_classes: 4,
    };
    let config = TrainConfig {
        batch_size: 32,
        prefetch: 0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, config).unwrap();
    c.bench_function("train_step/shallow_word_b32", |bench| {
        bench.iter(|| trainer.run_epoch(&one).unwrap())
    });
}

pub fn char_encoding(c: &mut Criterion) {
    let vocab = CharVocab::new(true);
    let text = "The quick brown fox jumps over the lazy dog, again & again! ".repeat(20);
    let mut g = c.benchmark_group("char_encoding");
    g.throughput(Throughput::Bytes(text.len() as u64));
    g.bench_function("encode", |bench| {
        bench.iter(|| vocab.encode(black_box(&text), CHAR_MAX_LEN))
    });
    let seq = vocab.encode(&text, CHAR_MAX_LEN);
    g.bench_function("one_hot", |bench| {
        bench.iter(|| vocab.one_hot::<f32>(black_box(&seq)).unwrap())
    });
    g.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    conv(c);
    train_step(c);
    char_encoding(c);
}
