use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use embedaug::embedding::Embedding;
use embedaug::synthetic::{mapped_pair, oov_benchmark, OovBenchmarkConfig};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn embedaug(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embedaug")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = embedaug(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small source/target pair on disk: 300 source words, 200 target words.
fn pair_files(dir: &Path) -> (PathBuf, PathBuf) {
    let pair = mapped_pair(300, 200, 6, 12, 0.01, 2).unwrap();
    let (te, de) = (dir.join("te.vec"), dir.join("de.vec"));
    pair.te.save_word2vec_text(&te).unwrap();
    pair.de.save_word2vec_text(&de).unwrap();
    (te, de)
}

#[test]
fn map_then_build_ate_keeps_source_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let (te, de) = pair_files(dir.path());
    let ckpt = dir.path().join("mapper.json");
    let ate = dir.path().join("ate.bin");
    ok(&["map", "--source", s(&te), "--target", s(&de), "--hidden", "16", "--epochs", "3", "--out", s(&ckpt)]);
    assert!(dir.path().join("mapper.json.config.toml").exists());
    ok(&["build-ate", "--source", s(&te), "--mapper", s(&ckpt), "--out", s(&ate)]);
    let te_emb = Embedding::load(&te).unwrap();
    let ate_emb = Embedding::load(&ate).unwrap();
    assert_eq!(ate_emb.words(), te_emb.words());
    assert_eq!(ate_emb.dim(), 6);

    let partial = dir.path().join("partial.vec");
    ok(&["ablate-partial", "--source", s(&te), "--target", s(&de), "--mapper", s(&ckpt), "--out", s(&partial)]);
    let partial = Embedding::load(&partial).unwrap();
    let de_emb = Embedding::load(&de).unwrap();
    for (i, w) in te_emb.words().iter().enumerate() {
        if de_emb.contains(w) {
            assert_eq!(partial.row(i), ate_emb.row(i));
        } else {
            assert_eq!(partial.row(i), te_emb.row(i));
        }
    }

    let kept = dir.path().join("kept.vec");
    ok(&["build-ate", "--source", s(&te), "--mapper", s(&ckpt), "--keep-de", s(&de), "--out", s(&kept)]);
    let kept = Embedding::load(&kept).unwrap();
    assert_eq!(kept.vector(&de_emb.words()[0]), de_emb.vector(&de_emb.words()[0]));
}

#[test]
fn linear_centroid_and_meta_embedding_commands() {
    let dir = tempfile::tempdir().unwrap();
    let (te, de) = pair_files(dir.path());
    let linear = dir.path().join("linear.json");
    ok(&["map", "--linear", "--source", s(&te), "--target", s(&de), "--out", s(&linear)]);
    let text = std::fs::read_to_string(&linear).unwrap();
    assert!(text.contains("linear-mapper"));

    let cent = dir.path().join("cent.json");
    ok(&[
        "map-centroid", "--source", s(&te), "--target", s(&de), "--variant", "centroid2", "--k-near", "3",
        "--k-far", "3", "--hidden", "8", "--epochs", "2", "--out", s(&cent),
    ]);
    let bad = embedaug(&["map-centroid", "--source", s(&te), "--target", s(&de), "--variant", "centroid3", "--out", s(&cent)]);
    assert!(!bad.status.success());

    let model = dir.path().join("aaeme.json");
    let meta = dir.path().join("meta.vec");
    ok(&[
        "aaeme", "--source1", s(&te), "--source2", s(&de), "--epochs", "2", "--out", s(&model),
        "--embedding-out", s(&meta),
    ]);
    let meta = Embedding::load(&meta).unwrap();
    assert_eq!(meta.len(), 200);
    assert_eq!(meta.dim(), 6);
}

#[test]
fn train_embedding_from_posts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.txt");
    let line = "i feel sad and alone tonight. the night is long and i feel sad\n";
    std::fs::write(&corpus, line.repeat(40)).unwrap();
    let out = dir.path().join("de.vec");
    ok(&["train-embedding", "--corpus", s(&corpus), "--dim", "8", "--mincount", "2", "--epochs", "1", "--out", s(&out)]);
    let emb = Embedding::load(&out).unwrap();
    assert_eq!(emb.dim(), 8);
    assert!(emb.contains("sad") && emb.contains("night"));
}

#[test]
fn evaluate_writes_reports_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    let stdout = ok(&[
        "evaluate", "--dataset", s(&fixture("posts.tsv")), "--features", "bow", "--model", "nb", "--runs", "2",
        "--seed", "7", "--out", s(&out),
    ]);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json[0]["runs"].as_array().unwrap().len(), 2);
    assert_eq!(json[0]["master_seed"], 7);
    let table = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(String::from_utf8(stdout.stdout).unwrap(), table);
    assert!(table.contains("NB"));
    let echoed = std::fs::read_to_string(out.join("resolved-config.toml")).unwrap();
    assert!(echoed.contains("seed = 7"));

    let json_only = dir.path().join("json");
    ok(&[
        "evaluate", "--dataset", s(&fixture("posts.tsv")), "--features", "emotion", "--emotion-lexicon",
        s(&fixture("emotions.tsv")), "--model", "lr", "--runs", "1", "--format", "json", "--out", s(&json_only),
    ]);
    assert!(json_only.join("report.json").exists());
    assert!(!json_only.join("report.txt").exists());
}

#[test]
fn naive_bayes_on_unscaled_embeddings_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (te, _) = pair_files(dir.path());
    let out = dir.path().join("never");
    let res = embedaug(&[
        "evaluate", "--dataset", s(&fixture("posts.tsv")), "--model", "nb", "--features", "te", "--te", s(&te),
        "--no-scale", "--out", s(&out),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("naive Bayes"));
    assert!(!out.exists());
}

#[test]
fn bad_inputs_fail_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[mapper]\nhiden_units = 3\n").unwrap();
    let res = embedaug(&["--config", s(&cfg), "evaluate", "--dataset", s(&fixture("posts.tsv")), "--out", s(dir.path())]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("hiden_units"));

    let res = embedaug(&["evaluate", "--dataset", "/nonexistent/data.tsv", "--out", s(dir.path())]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("does not exist"));

    let res = embedaug(&["evaluate", "--dataset", s(&fixture("posts.tsv")), "--model", "knn", "--out", s(dir.path())]);
    assert!(!res.status.success());
}

#[test]
fn featurize_and_profile_with_lexicons() {
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("cat.tsv");
    ok(&[
        "featurize", "--dataset", s(&fixture("posts.tsv")), "--features", "category", "--category-lexicon",
        s(&fixture("affect.dic")), "--out", s(&cat),
    ]);
    let rows: Vec<String> = std::fs::read_to_string(&cat).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.split('\t').count() == 5));
    // "happy days at the beach with my friends :)" has 9 tokens: happy (posemo), my (i).
    let second: Vec<f64> = rows[1].split('\t').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!((second[0] - 100.0 / 9.0).abs() < 1e-9, "{second:?}");
    assert!((second[3] - 100.0 / 9.0).abs() < 1e-9);

    let emo = dir.path().join("emo.tsv");
    ok(&[
        "featurize", "--dataset", s(&fixture("posts.tsv")), "--features", "emotion", "--emotion-lexicon",
        s(&fixture("emotions.tsv")), "--out", s(&emo),
    ]);
    let first = std::fs::read_to_string(&emo).unwrap().lines().next().unwrap().to_string();
    assert_eq!(first.split('\t').count(), 9);

    let profile = dir.path().join("profile.tsv");
    ok(&[
        "profile-dataset", "--dataset", s(&fixture("posts.tsv")), "--category-lexicon", s(&fixture("affect.dic")),
        "--out", s(&profile),
    ]);
    let text = std::fs::read_to_string(&profile).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "category\tpercentage");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("posemo\t"));
}

#[test]
fn pca_export_writes_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let emb = Embedding::from_rows([
        ("happy", vec![1.0f32, 0.2, 0.0, 0.1]),
        ("love", vec![0.9, 0.1, 0.1, 0.0]),
        ("good", vec![1.1, 0.0, 0.2, 0.1]),
        ("sad", vec![-1.0, 0.1, 0.0, 0.3]),
        ("cry", vec![-0.9, 0.3, 0.1, 0.2]),
        ("alone", vec![-1.1, 0.2, 0.0, 0.1]),
    ])
    .unwrap();
    let path = dir.path().join("emb.vec");
    emb.save_word2vec_text(&path).unwrap();
    let out = dir.path().join("pca.tsv");
    let pos = format!("posemo={}", s(&fixture("posemo.txt")));
    let neg = format!("negemo={}", s(&fixture("negemo.txt")));
    ok(&["pca-export", "--embedding", s(&path), "--list", &pos, "--list", &neg, "--out", s(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# silhouette 0."));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 7);

    // Frequency filtering against the dataset drops words it rarely uses.
    ok(&[
        "pca-export", "--embedding", s(&path), "--list", &pos, "--list", &neg, "--dataset",
        s(&fixture("posts.tsv")), "--min-count", "2", "--out", s(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let words: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(words, vec!["happy", "good", "alone"]);
}

#[test]
fn ablation_suite_reports_every_space() {
    let dir = tempfile::tempdir().unwrap();
    let bench = oov_benchmark(&OovBenchmarkConfig { words: 200, posts: 60, ..OovBenchmarkConfig::default() }).unwrap();
    bench.write_to(dir.path()).unwrap();
    let cfg = dir.path().join("fast.toml");
    std::fs::write(
        &cfg,
        "[mapper]\nhidden_units = 8\n[mapper.optimizer]\nepochs = 2\n[aaeme.optimizer]\nepochs = 2\n\
         [centroid]\nk_near = 3\nk_far = 3\n[eval]\nruns = 2\nfolds = 3\n",
    )
    .unwrap();
    let out = dir.path().join("suite");
    ok(&[
        "--config", s(&cfg), "ablation-suite", "--dataset", s(&dir.path().join("data.tsv")), "--te",
        s(&dir.path().join("te.vec")), "--de", s(&dir.path().join("de.vec")), "--model", "lr", "--out", s(&out),
    ]);
    let table = std::fs::read_to_string(out.join("report.txt")).unwrap();
    for label in ["TE", "DE", "ATE", "TE∩DE-in-TE-adjusted", "ATE-Centroid-1", "ATE-Centroid-2", "ATE-AAEME", "ATE-AAEME-OOV"] {
        assert!(table.lines().any(|l| l.starts_with(&format!("{label} "))), "{label} missing:\n{table}");
    }
    let resolved = std::fs::read_to_string(out.join("resolved-config.toml")).unwrap();
    assert!(resolved.contains("hidden_units = 8"));
}

#[test]
fn help_documents_defaults() {
    let out = ok(&["evaluate", "--help"]);
    let help = String::from_utf8(out.stdout).unwrap();
    for needle in ["[default: 30]", "[default: 10]", "[default: 0.7]", "[default: lsvm]", "[default: 400]"] {
        assert!(help.contains(needle), "{needle} not in help");
    }
    let out = ok(&["map", "--help"]);
    let help = String::from_utf8(out.stdout).unwrap();
    assert!(help.contains("[default: 200]") && help.contains("[default: 0.001]"));
}
