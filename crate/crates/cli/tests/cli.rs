use std::fs;
use std::path::Path;

use textcnn::train::{synth_dataset, write_csv, Dataset, Split};
use textcnn::RngStream;
use textcnn_cli::config::KEYS;

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = match textcnn_cli::run(
        std::iter::once("textcnn").chain(args.iter().copied()),
        &mut out,
    ) {
        Ok(c) => c,
        Err(e) => {
            out.extend_from_slice(format!("error: {e:#}").as_bytes());
            2
        }
    };
    (code, String::from_utf8(out).unwrap())
}

fn synth_csv(dir: &Path, name: &str, seed: u64, per_class: usize) -> String {
    let mut rng = RngStream::new(seed, 0);
    let d = synth_dataset(3, per_class, 40, 12, &mut rng).unwrap();
    let d = Dataset {
        split: Split::Train,
        ..d
    };
    let path = dir.join(name);
    write_csv(&path, &d).unwrap();
    path.display().to_string()
}

const SMALL: &[&str] = &[
    "--classes",
    "3",
    "--max-len",
    "16",
    "--filters",
    "8",
    "--embed-dim",
    "12",
    "--batch",
    "16",
    "--lr",
    "0.01",
];

fn train_args<'a>(train: &'a str, test: &'a str, out: &'a str, epochs: &'a str) -> Vec<&'a str> {
    let mut a = vec![
        "train", "--train", train, "--test", test, "--out", out, "--epochs", epochs,
    ];
    a.extend_from_slice(SMALL);
    a
}

#[test]
fn train_smoke_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth_csv(dir.path(), "train.csv", 1, 10);
    let test = synth_csv(dir.path(), "test.csv", 2, 4);
    let out = dir.path().join("run").display().to_string();
    let (code, text) = run(&train_args(&train, &test, &out, "3"));
    assert_eq!(code, 0, "{text}");
    assert_eq!(
        text.lines().filter(|l| l.starts_with("epoch ")).count(),
        3,
        "{text}"
    );
    let metrics = fs::read_to_string(Path::new(&out).join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(
        lines[0],
        "epoch,train_loss,train_acc,test_loss,test_acc,seconds"
    );
    assert_eq!(lines.len(), 4);
    assert!(Path::new(&out).join("model.ckpt").exists());
    assert!(Path::new(&out).join("vocab.txt").exists());
}

#[test]
fn missing_train_csv_is_named() {
    let (code, text) = run(&["train", "--train", "/definitely/missing.csv"]);
    assert_ne!(code, 0);
    assert!(text.contains("/definitely/missing.csv"), "{text}");
    let (code, text) = run(&["train"]);
    assert_ne!(code, 0);
    assert!(text.contains("train"), "{text}");
}

#[test]
fn eval_is_deterministic_and_checks_vocab() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth_csv(dir.path(), "train.csv", 1, 10);
    let test = synth_csv(dir.path(), "test.csv", 2, 4);
    let out = dir.path().join("run").display().to_string();
    assert_eq!(run(&train_args(&train, &test, &out, "2")).0, 0);
    let ckpt = Path::new(&out).join("model.ckpt").display().to_string();
    let eval_out = dir.path().join("eval").display().to_string();
    let args = [
        "eval",
        "--checkpoint",
        &ckpt,
        "--test",
        &test,
        "--out",
        &eval_out,
    ];
    let (c1, first) = run(&args);
    let (c2, second) = run(&args);
    assert_eq!((c1, c2), (0, 0), "{first}");
    assert_eq!(first, second);
    let acc = first.lines().find(|l| l.starts_with("accuracy ")).unwrap();
    let digits = acc
        .trim_start_matches("accuracy ")
        .split('.')
        .nth(1)
        .unwrap();
    assert_eq!(digits.len(), 4, "{acc}");
    let confusion = fs::read_to_string(Path::new(&eval_out).join("confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 4);

    let other = dir.path().join("other_vocab.txt");
    fs::write(&other, "PAD\nOOV\nsomething\n").unwrap();
    let other = other.display().to_string();
    let (code, text) = run(&[
        "eval",
        "--checkpoint",
        &ckpt,
        "--test",
        &test,
        "--vocab",
        &other,
    ]);
    assert_ne!(code, 0);
    assert!(text.contains("vocabulary mismatch"), "{text}");
}

#[test]
fn resume_continues_to_the_same_end() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth_csv(dir.path(), "train.csv", 1, 8);
    let test = synth_csv(dir.path(), "test.csv", 2, 3);
    let full = dir.path().join("full").display().to_string();
    let part = dir.path().join("part").display().to_string();
    assert_eq!(run(&train_args(&train, &test, &full, "3")).0, 0);
    assert_eq!(run(&train_args(&train, &test, &part, "1")).0, 0);
    let ckpt = Path::new(&part).join("model.ckpt").display().to_string();
    let mut args = train_args(&train, &test, &part, "3");
    args.extend(["--resume", &ckpt]);
    let (code, text) = run(&args);
    assert_eq!(code, 0, "{text}");
    let strip = |dir: &str| -> Vec<String> {
        fs::read_to_string(Path::new(dir).join("metrics.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(&full), strip(&part));
    let a = fs::read(Path::new(&full).join("model.ckpt")).unwrap();
    let b = fs::read(Path::new(&part).join("model.ckpt")).unwrap();
    assert!(a == b, "final checkpoints differ");
}

#[test]
fn inspect_reports_widths_and_totals() {
    let (code, text) = run(&["inspect", "--level", "char"]);
    assert_eq!(code, 0);
    assert!(text.contains("concat width: 2100"), "{text}");
    let total: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("total params: "))
        .unwrap()
        .parse()
        .unwrap();
    let sum: usize = text
        .lines()
        .skip(2)
        .filter(|l| l.contains('['))
        .filter_map(|l| l.rsplit(' ').next().and_then(|n| n.parse::<usize>().ok()))
        .sum();
    assert_eq!(sum, total);
    let (_, dense) = run(&[
        "inspect",
        "--level",
        "char",
        "--arch",
        "densenet",
        "--fc-width",
        "16",
    ]);
    assert!(dense.contains("transition lengths: 507 254 127"), "{dense}");
}

#[test]
fn inspect_output_is_stable() {
    let args = ["inspect", "--level", "word", "--vocab-size", "10"];
    let (_, a) = run(&args);
    let (_, b) = run(&args);
    assert_eq!(a, b);
    assert!(a.contains("total params: 363902"), "{a}");
}

#[test]
fn gradcheck_passes_and_catches_faults() {
    let (code, text) = run(&["gradcheck"]);
    assert_eq!(code, 0, "{text}");
    for op in textcnn::autodiff::OpKind::ALL {
        assert!(
            text.lines()
                .any(|l| l.starts_with(op.name()) && l.ends_with("PASS")),
            "{op}\n{text}"
        );
    }
    let (code, text) = run(&["gradcheck", "--inject-fault", "conv1d"]);
    assert_eq!(code, 1);
    assert!(
        text.lines()
            .any(|l| l.starts_with("conv1d ") && l.contains("FAIL")),
        "{text}"
    );
}

#[test]
fn tokenize_char_and_word() {
    let (code, text) = run(&["tokenize", "--level", "char", "ab"]);
    assert_eq!(code, 0);
    assert!(text.contains("indices: 0 1\n"), "{text}");
    assert!(text.contains("padding 1012"), "{text}");
    let (_, emoji) = run(&["tokenize", "--level", "char", "😀"]);
    assert!(
        emoji.contains("indices: 69\n") && emoji.contains("<pad>"),
        "{emoji}"
    );

    let dir = tempfile::tempdir().unwrap();
    let vocab = dir.path().join("vocab.txt");
    fs::write(&vocab, "PAD\nOOV\nthe\ncat\n").unwrap();
    let vocab = vocab.display().to_string();
    let (code, text) = run(&["tokenize", "--level", "word", "--vocab", &vocab, "the dog"]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("tokens: the <oov>"), "{text}");
    let (code, _) = run(&["tokenize", "--level", "word", "the"]);
    assert_ne!(code, 0);
}

#[test]
fn help_lists_every_key() {
    for sub in ["train", "eval", "inspect", "gradcheck", "tokenize"] {
        let mut cmd = textcnn_cli::command();
        let help = cmd
            .find_subcommand_mut(sub)
            .unwrap()
            .render_long_help()
            .to_string();
        for k in KEYS {
            assert!(
                help.contains(&format!("--{}", k.flag)),
                "{sub}: --{}",
                k.flag
            );
        }
        assert!(!help.contains("inject-fault"));
    }
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# tiny\nlevel = word\nfilters = 2\nwindows = 2,3\n").unwrap();
    let cfg = cfg.display().to_string();
    let (code, text) = run(&[
        "inspect",
        "--config",
        &cfg,
        "--vocab-size",
        "5",
        "--filters",
        "3",
    ]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("concat width: 6"), "{text}");
    fs::write(dir.path().join("bad.cfg"), "colour = red\n").unwrap();
    let bad = dir.path().join("bad.cfg").display().to_string();
    let (code, text) = run(&["inspect", "--config", &bad]);
    assert_ne!(code, 0);
    assert!(text.contains("unknown key 'colour'"), "{text}");
}
