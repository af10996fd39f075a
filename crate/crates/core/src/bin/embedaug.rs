use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use embedaug::aaeme::{build_meta_embedding, train_aaeme_detailed, AaemeModel};
use embedaug::analysis::{frequent_words, project_wordlists, write_projection};
use embedaug::classifiers::ModelFamily;
use embedaug::config::{ReportFormat, RunConfig};
use embedaug::embedding::Embedding;
use embedaug::eval::{ablation_suite, render_table, repeat_experiments, AblationConfig, EvalReport, ExperimentSpec};
use embedaug::features::{dataset_category_profile, CategoryLexicon, Dataset, EmotionLexicon, FeatureKind, Featurizer};
use embedaug::mapper::{
    build_ate, build_ate_keep_de, build_partial_adjusted, train_centroid_mapper_detailed, train_linear_mapper,
    train_mapper_detailed, CentroidVariant, Mapper,
};
use embedaug::sgns::{corpus_sentences, train_sgns};
use embedaug::text::load_word_list;

/// Domain-adapted word embeddings and a short-text classification harness.
///
/// Settings come from an optional TOML file (`--config`); flags override it.
/// Every command writes its fully resolved configuration next to its output.
#[derive(Parser)]
#[command(name = "embedaug", version, about)]
struct Cli {
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for runs, grid cells and SGNS [default: 1].
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Master seed; every stage seed is derived from it [default: 1].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a skip-gram embedding on a corpus with one post per line.
    TrainEmbedding(TrainEmbeddingArgs),
    /// Learn a mapper from a source embedding onto a target embedding.
    Map(MapArgs),
    /// Learn a mapper toward neighbourhood centroids of the target embedding.
    MapCentroid(MapCentroidArgs),
    /// Train an autoencoded meta-embedding of two sources.
    Aaeme(AaemeArgs),
    /// Pass every source word through a trained mapper.
    BuildAte(BuildAteArgs),
    /// Replace only the words shared with the target by their mapped vectors.
    AblatePartial(AblatePartialArgs),
    /// Write a feature matrix for a labelled dataset.
    Featurize(FeaturizeArgs),
    /// Repeated stratified splits with grid-searched models.
    Evaluate(EvaluateArgs),
    /// Compare source, target and every adjusted embedding under one protocol.
    AblationSuite(AblationSuiteArgs),
    /// Mean category percentages of a dataset under a category lexicon.
    ProfileDataset(ProfileArgs),
    /// Two-dimensional PCA coordinates of word lists.
    PcaExport(PcaArgs),
}

#[derive(Args)]
struct TrainEmbeddingArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output embedding; a `.bin` extension selects the binary format.
    #[arg(long)]
    out: PathBuf,
    /// Vector dimension [default: 400].
    #[arg(long)]
    dim: Option<usize>,
    /// Maximum context window [default: 5].
    #[arg(long)]
    window: Option<usize>,
    /// Minimum corpus count of a kept word [default: 10].
    #[arg(long)]
    mincount: Option<u64>,
    /// Negative samples per pair [default: 5].
    #[arg(long)]
    negatives: Option<usize>,
    /// Passes over the corpus [default: 5].
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate [default: 0.025].
    #[arg(long)]
    learning_rate: Option<f32>,
}

#[derive(Args)]
struct MapperArgs {
    /// Source (general) embedding.
    #[arg(long)]
    source: Option<PathBuf>,
    /// Target (domain) embedding.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Hidden units [default: 400].
    #[arg(long)]
    hidden: Option<usize>,
    /// Maximum training epochs [default: 200].
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [default: 128].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate [default: 0.001].
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
struct MapArgs {
    #[command(flatten)]
    mapper: MapperArgs,
    /// Fit an affine map by least squares instead of the MLP.
    #[arg(long)]
    linear: bool,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MapCentroidArgs {
    #[command(flatten)]
    mapper: MapperArgs,
    /// `centroid1` (near only) or `centroid2` (near and far) [default: centroid1].
    #[arg(long)]
    variant: Option<String>,
    /// Nearest neighbours in the near centroid [default: 10].
    #[arg(long)]
    k_near: Option<usize>,
    /// Farthest words in the far centroid [default: 10].
    #[arg(long)]
    k_far: Option<usize>,
    /// Weight of the far term [default: 0.1].
    #[arg(long)]
    far_weight: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AaemeArgs {
    /// First source embedding; its word order is kept.
    #[arg(long)]
    source1: PathBuf,
    #[arg(long)]
    source2: PathBuf,
    /// Meta-embedding dimension [default: dimension of the first source].
    #[arg(long)]
    meta_dim: Option<usize>,
    /// Tanh encoders instead of linear ones.
    #[arg(long)]
    tanh: bool,
    /// Skip unit-normalizing the source vectors.
    #[arg(long)]
    no_normalize: bool,
    /// Maximum training epochs [default: 200].
    #[arg(long)]
    epochs: Option<usize>,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Also write the meta-embedding of the shared vocabulary.
    #[arg(long)]
    embedding_out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildAteArgs {
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    mapper: PathBuf,
    /// Keep the vectors of this embedding for the words it contains.
    #[arg(long)]
    keep_de: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblatePartialArgs {
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    mapper: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeatureArgs {
    /// Labelled posts, one `label<TAB>text` per line.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// `bow`, `category`, `emotion`, `te`, `de` or `ate` [default: bow].
    #[arg(long)]
    features: Option<String>,
    /// Padded concatenation instead of averaging for embedding features.
    #[arg(long)]
    concat: bool,
    /// Bag-of-words vocabulary size [default: 400].
    #[arg(long)]
    bow_size: Option<usize>,
    #[arg(long)]
    te: Option<PathBuf>,
    #[arg(long)]
    de: Option<PathBuf>,
    #[arg(long)]
    ate: Option<PathBuf>,
    /// Category lexicon in `.dic` layout.
    #[arg(long)]
    category_lexicon: Option<PathBuf>,
    /// Emotion lexicon, one `word<TAB>emotion<TAB>score` per line.
    #[arg(long)]
    emotion_lexicon: Option<PathBuf>,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[command(flatten)]
    features: FeatureArgs,
    /// Output TSV: label followed by the features of each post.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProtocolArgs {
    /// `nb`, `lr`, `lsvm` or `rsvm` [default: lsvm].
    #[arg(long)]
    model: Option<String>,
    /// Random train/test splits [default: 30].
    #[arg(long)]
    runs: Option<usize>,
    /// Cross-validation folds for the grid search [default: 10].
    #[arg(long)]
    folds: Option<usize>,
    /// Training share of each split [default: 0.7].
    #[arg(long)]
    train_frac: Option<f64>,
    /// Skip min-max scaling of the features.
    #[arg(long)]
    no_scale: bool,
    /// `json`, `table` or `both` [default: both].
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblationSuiteArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    te: Option<PathBuf>,
    #[arg(long)]
    de: Option<PathBuf>,
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    category_lexicon: Option<PathBuf>,
    /// Output TSV of `category, percentage`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PcaArgs {
    #[arg(long)]
    embedding: PathBuf,
    /// A named word list as `NAME=PATH`, one word per line; repeatable.
    #[arg(long = "list", required = true)]
    lists: Vec<String>,
    /// Keep only words this frequent in the dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Minimum dataset occurrences when `--dataset` is given [default: 1].
    #[arg(long)]
    min_count: Option<usize>,
    /// Column delimiter [default: tab].
    #[arg(long, default_value_t = '\t')]
    delimiter: char,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.workers, cli.workers);
    match cli.command {
        Command::TrainEmbedding(a) => train_embedding(cfg, a),
        Command::Map(a) => map(cfg, a),
        Command::MapCentroid(a) => map_centroid(cfg, a),
        Command::Aaeme(a) => aaeme(cfg, a),
        Command::BuildAte(a) => build(cfg, a),
        Command::AblatePartial(a) => ablate_partial(cfg, a),
        Command::Featurize(a) => featurize(cfg, a),
        Command::Evaluate(a) => evaluate(cfg, a),
        Command::AblationSuite(a) => ablation(cfg, a),
        Command::ProfileDataset(a) => profile(cfg, a),
        Command::PcaExport(a) => pca_export(cfg, a),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

/// Resolve seeds, validate, size the thread pool and echo the configuration.
fn finish(cfg: RunConfig, out: &Path) -> Result<RunConfig> {
    let cfg = cfg.resolve()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .context("starting worker pool")?;
    let echo = if out.is_dir() {
        out.join("resolved-config.toml")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".config.toml");
        out.with_file_name(name)
    };
    cfg.save(&echo)?;
    info!("resolved configuration written to {}", echo.display());
    Ok(cfg)
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    let p = path.as_deref().with_context(|| format!("no {what} given"))?;
    if !p.exists() {
        bail!("{what} {} does not exist", p.display());
    }
    Ok(p)
}

fn load_embedding(path: &Path) -> Result<Embedding> {
    let e = Embedding::load(path).with_context(|| format!("loading embedding {}", path.display()))?;
    info!("{}: {} words, {} dimensions", path.display(), e.len(), e.dim());
    Ok(e)
}

fn save_embedding(emb: &Embedding, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e == "bin") {
        emb.save_binary(path)?;
    } else {
        emb.save_word2vec_text(path)?;
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn train_embedding(mut cfg: RunConfig, a: TrainEmbeddingArgs) -> Result<()> {
    set_path(&mut cfg.paths.corpus, a.corpus);
    set(&mut cfg.sgns.dim, a.dim);
    set(&mut cfg.sgns.window, a.window);
    set(&mut cfg.sgns.mincount, a.mincount);
    set(&mut cfg.sgns.negatives, a.negatives);
    set(&mut cfg.sgns.epochs, a.epochs);
    set(&mut cfg.sgns.learning_rate, a.learning_rate);
    require(&cfg.paths.corpus, "corpus")?;
    let cfg = finish(cfg, &a.out)?;
    let corpus = cfg.paths.corpus.as_deref().expect("checked");
    let text = std::fs::read_to_string(corpus).with_context(|| format!("reading {}", corpus.display()))?;
    let sentences = corpus_sentences(text.lines());
    let emb = train_sgns(&sentences, &cfg.sgns)?;
    info!("trained {} vectors", emb.len());
    save_embedding(&emb, &a.out)
}

fn apply_mapper_args(cfg: &mut RunConfig, a: MapperArgs) {
    set_path(&mut cfg.paths.te, a.source);
    set_path(&mut cfg.paths.de, a.target);
    set(&mut cfg.mapper.hidden_units, a.hidden);
    set(&mut cfg.mapper.optimizer.epochs, a.epochs);
    set(&mut cfg.mapper.optimizer.batch_size, a.batch_size);
    set(&mut cfg.mapper.optimizer.learning_rate, a.learning_rate);
}

fn load_pair(cfg: &RunConfig) -> Result<(Embedding, Embedding)> {
    Ok((
        load_embedding(require(&cfg.paths.te, "source embedding")?)?,
        load_embedding(require(&cfg.paths.de, "target embedding")?)?,
    ))
}

fn map(mut cfg: RunConfig, a: MapArgs) -> Result<()> {
    apply_mapper_args(&mut cfg, a.mapper);
    require(&cfg.paths.te, "source embedding")?;
    require(&cfg.paths.de, "target embedding")?;
    let cfg = finish(cfg, &a.out)?;
    let (te, de) = load_pair(&cfg)?;
    let mapper = if a.linear {
        Mapper::Linear(train_linear_mapper(&te, &de)?)
    } else {
        let (m, h) = train_mapper_detailed(&te, &de, &cfg.mapper)?;
        info!("best epoch {} of {}, validation loss {:?}", h.best_epoch, h.train_losses.len(), h.val_losses.last());
        Mapper::Mlp(m)
    };
    mapper.save(&a.out)?;
    Ok(())
}

fn map_centroid(mut cfg: RunConfig, a: MapCentroidArgs) -> Result<()> {
    apply_mapper_args(&mut cfg, a.mapper);
    if let Some(v) = a.variant {
        cfg.centroid.variant = match v.as_str() {
            "centroid1" => CentroidVariant::Centroid1,
            "centroid2" => CentroidVariant::Centroid2,
            _ => bail!("unknown centroid variant {v:?}; expected centroid1 or centroid2"),
        };
    }
    set(&mut cfg.centroid.k_near, a.k_near);
    set(&mut cfg.centroid.k_far, a.k_far);
    set(&mut cfg.centroid.far_weight, a.far_weight);
    require(&cfg.paths.te, "source embedding")?;
    require(&cfg.paths.de, "target embedding")?;
    let cfg = finish(cfg, &a.out)?;
    let (te, de) = load_pair(&cfg)?;
    let (m, _) = train_centroid_mapper_detailed(&te, &de, &cfg.mapper, &cfg.centroid)?;
    Mapper::Mlp(m).save(&a.out)?;
    Ok(())
}

fn aaeme(mut cfg: RunConfig, a: AaemeArgs) -> Result<()> {
    if a.meta_dim.is_some() {
        cfg.aaeme.meta_dim = a.meta_dim;
    }
    cfg.aaeme.tanh |= a.tanh;
    cfg.aaeme.normalize &= !a.no_normalize;
    set(&mut cfg.aaeme.optimizer.epochs, a.epochs);
    let cfg = finish(cfg, &a.out)?;
    let s1 = load_embedding(&a.source1)?;
    let s2 = load_embedding(&a.source2)?;
    let (model, h) = train_aaeme_detailed(&s1, &s2, &cfg.aaeme)?;
    info!("best epoch {} of {}", h.best_epoch, h.train_losses.len());
    model.save(&a.out)?;
    if let Some(p) = &a.embedding_out {
        let meta = build_meta_embedding(&AaemeModel::load(&a.out)?, &s1, &s2)?;
        save_embedding(&meta, p)?;
    }
    Ok(())
}

fn build(mut cfg: RunConfig, a: BuildAteArgs) -> Result<()> {
    set_path(&mut cfg.paths.te, a.source);
    require(&cfg.paths.te, "source embedding")?;
    let cfg = finish(cfg, &a.out)?;
    let te = load_embedding(cfg.paths.te.as_deref().expect("checked"))?;
    let mapper = Mapper::load(&a.mapper).with_context(|| format!("loading {}", a.mapper.display()))?;
    let ate = match &a.keep_de {
        Some(p) => build_ate_keep_de(&te, &load_embedding(p)?, &mapper)?,
        None => build_ate(&te, &mapper)?,
    };
    save_embedding(&ate, &a.out)
}

fn ablate_partial(mut cfg: RunConfig, a: AblatePartialArgs) -> Result<()> {
    set_path(&mut cfg.paths.te, a.source);
    set_path(&mut cfg.paths.de, a.target);
    require(&cfg.paths.te, "source embedding")?;
    require(&cfg.paths.de, "target embedding")?;
    let cfg = finish(cfg, &a.out)?;
    let (te, de) = load_pair(&cfg)?;
    let mapper = Mapper::load(&a.mapper).with_context(|| format!("loading {}", a.mapper.display()))?;
    save_embedding(&build_partial_adjusted(&te, &de, &mapper)?, &a.out)
}

fn apply_feature_args(cfg: &mut RunConfig, a: FeatureArgs) {
    set_path(&mut cfg.paths.dataset, a.dataset);
    set(&mut cfg.eval.features, a.features);
    cfg.eval.concat |= a.concat;
    set(&mut cfg.eval.bow_size, a.bow_size);
    set_path(&mut cfg.paths.te, a.te);
    set_path(&mut cfg.paths.de, a.de);
    set_path(&mut cfg.paths.ate, a.ate);
    set_path(&mut cfg.paths.category_lexicon, a.category_lexicon);
    set_path(&mut cfg.paths.emotion_lexicon, a.emotion_lexicon);
}

fn apply_protocol_args(cfg: &mut RunConfig, a: ProtocolArgs) -> Result<()> {
    if let Some(m) = a.model {
        cfg.eval.model = ModelFamily::parse(&m)?;
    }
    set(&mut cfg.eval.runs, a.runs);
    set(&mut cfg.eval.folds, a.folds);
    set(&mut cfg.eval.train_frac, a.train_frac);
    cfg.eval.scale &= !a.no_scale;
    if let Some(f) = a.format {
        cfg.eval.format = match f.as_str() {
            "json" => ReportFormat::Json,
            "table" => ReportFormat::Table,
            "both" => ReportFormat::Both,
            _ => bail!("unknown report format {f:?}; expected json, table or both"),
        };
    }
    Ok(())
}

/// Paths the chosen feature set reads, checked before any loading.
fn feature_inputs(cfg: &RunConfig) -> Result<()> {
    require(&cfg.paths.dataset, "dataset")?;
    match cfg.eval.features.as_str() {
        "category" => drop(require(&cfg.paths.category_lexicon, "category lexicon")?),
        "emotion" => drop(require(&cfg.paths.emotion_lexicon, "emotion lexicon")?),
        "te" => drop(require(&cfg.paths.te, "TE embedding")?),
        "de" => drop(require(&cfg.paths.de, "DE embedding")?),
        "ate" => drop(require(&cfg.paths.ate, "ATE embedding")?),
        _ => {}
    }
    Ok(())
}

fn feature_kind(cfg: &RunConfig) -> Result<(String, FeatureKind)> {
    let e = &cfg.eval;
    let embedding = |p: &Option<PathBuf>| -> Result<FeatureKind> {
        let emb = Arc::new(load_embedding(p.as_deref().expect("checked"))?);
        Ok(if e.concat { FeatureKind::Concat(emb) } else { FeatureKind::Average(emb) })
    };
    let kind = match e.features.as_str() {
        "bow" => FeatureKind::Bow { size: e.bow_size },
        "category" => FeatureKind::Category(Arc::new(CategoryLexicon::load(
            cfg.paths.category_lexicon.as_deref().expect("checked"),
        )?)),
        "emotion" => FeatureKind::Emotion(Arc::new(EmotionLexicon::load(
            cfg.paths.emotion_lexicon.as_deref().expect("checked"),
        )?)),
        "te" => embedding(&cfg.paths.te)?,
        "de" => embedding(&cfg.paths.de)?,
        "ate" => embedding(&cfg.paths.ate)?,
        other => bail!("unknown feature set {other:?}"),
    };
    Ok((e.features.to_uppercase(), kind))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let p = cfg.paths.dataset.as_deref().expect("checked");
    let data = Dataset::load(p).with_context(|| format!("loading dataset {}", p.display()))?;
    info!("{}: {} posts, {} positive", p.display(), data.len(), data.positives());
    Ok(data)
}

fn featurize(mut cfg: RunConfig, a: FeaturizeArgs) -> Result<()> {
    apply_feature_args(&mut cfg, a.features);
    feature_inputs(&cfg)?;
    let cfg = finish(cfg, &a.out)?;
    let data = load_dataset(&cfg)?;
    let (_, kind) = feature_kind(&cfg)?;
    // Fitted on every post: this writes a matrix, it does not evaluate.
    let fz = Featurizer::fit(kind, &data.texts)?;
    let (x, diag) = fz.transform(&data.texts);
    if !diag.all_oov_rows.is_empty() {
        warn!("{} posts have no embedded words", diag.all_oov_rows.len());
    }
    let mut out = String::new();
    for (i, label) in data.labels.iter().enumerate() {
        out.push_str(&label.to_string());
        for v in x.row(i).iter() {
            out.push('\t');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    std::fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))
}

fn base_spec(cfg: &RunConfig, label: String, features: FeatureKind) -> ExperimentSpec {
    ExperimentSpec {
        grid: cfg.grid.clone(),
        solver: cfg.solver.clone(),
        runs: cfg.eval.runs,
        seed: cfg.seed,
        train_frac: cfg.eval.train_frac,
        folds: cfg.eval.folds,
        scale: cfg.eval.scale,
        ..ExperimentSpec::new(label, features, cfg.eval.model)
    }
}

fn write_reports(reports: &[EvalReport], format: ReportFormat, dir: &Path) -> Result<()> {
    if format != ReportFormat::Table {
        let json = serde_json::to_string_pretty(reports)?;
        std::fs::write(dir.join("report.json"), json + "\n")?;
    }
    if format != ReportFormat::Json {
        std::fs::write(dir.join("report.txt"), render_table(reports))?;
    }
    print!("{}", render_table(reports));
    Ok(())
}

fn evaluate(mut cfg: RunConfig, a: EvaluateArgs) -> Result<()> {
    apply_feature_args(&mut cfg, a.features);
    apply_protocol_args(&mut cfg, a.protocol)?;
    feature_inputs(&cfg)?;
    cfg.validate()?;
    create_dir(&a.out)?;
    let cfg = finish(cfg, &a.out)?;
    let data = load_dataset(&cfg)?;
    let (label, kind) = feature_kind(&cfg)?;
    let report = repeat_experiments(&data, &base_spec(&cfg, label, kind))?;
    write_reports(&[report], cfg.eval.format, &a.out)
}

fn ablation(mut cfg: RunConfig, a: AblationSuiteArgs) -> Result<()> {
    set_path(&mut cfg.paths.dataset, a.dataset);
    set_path(&mut cfg.paths.te, a.te);
    set_path(&mut cfg.paths.de, a.de);
    apply_protocol_args(&mut cfg, a.protocol)?;
    if cfg.eval.model == ModelFamily::Nb && !cfg.eval.scale {
        bail!("naive Bayes needs nonnegative features; embedding features must be scaled");
    }
    require(&cfg.paths.dataset, "dataset")?;
    require(&cfg.paths.te, "TE embedding")?;
    require(&cfg.paths.de, "DE embedding")?;
    cfg.validate()?;
    create_dir(&a.out)?;
    let cfg = finish(cfg, &a.out)?;
    let data = load_dataset(&cfg)?;
    let (te, de) = load_pair(&cfg)?;
    let ablation_cfg = AblationConfig {
        mapper: cfg.mapper.clone(),
        centroid: cfg.centroid.clone(),
        aaeme: cfg.aaeme.clone(),
    };
    let base = base_spec(&cfg, String::new(), FeatureKind::Average(Arc::new(te.clone())));
    let reports = ablation_suite(&data, &te, &de, &ablation_cfg, &base)?;
    write_reports(&reports, cfg.eval.format, &a.out)
}

fn profile(mut cfg: RunConfig, a: ProfileArgs) -> Result<()> {
    set_path(&mut cfg.paths.dataset, a.dataset);
    set_path(&mut cfg.paths.category_lexicon, a.category_lexicon);
    require(&cfg.paths.dataset, "dataset")?;
    require(&cfg.paths.category_lexicon, "category lexicon")?;
    let cfg = finish(cfg, &a.out)?;
    let data = load_dataset(&cfg)?;
    let lex = CategoryLexicon::load(cfg.paths.category_lexicon.as_deref().expect("checked"))?;
    let mut out = String::from("category\tpercentage\n");
    for (name, pct) in dataset_category_profile(&data.texts, &lex)? {
        out.push_str(&format!("{name}\t{pct:.4}\n"));
    }
    std::fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))
}

fn pca_export(mut cfg: RunConfig, a: PcaArgs) -> Result<()> {
    set_path(&mut cfg.paths.dataset, a.dataset);
    set(&mut cfg.analysis.min_count, a.min_count);
    let mut lists = Vec::new();
    for spec in &a.lists {
        let (name, path) = spec.split_once('=').with_context(|| format!("--list {spec:?} is not NAME=PATH"))?;
        lists.push((name.to_string(), load_word_list(path).with_context(|| format!("reading {path}"))?));
    }
    let cfg = finish(cfg, &a.out)?;
    if let Some(p) = &cfg.paths.dataset {
        let data = Dataset::load(p).with_context(|| format!("loading dataset {}", p.display()))?;
        let keep = frequent_words(&data.texts, cfg.analysis.min_count);
        for (_, words) in &mut lists {
            words.retain(|w| keep.contains(w));
        }
    }
    let emb = load_embedding(&a.embedding)?;
    let projection = project_wordlists(&emb, &lists)?;
    if !projection.missing.is_empty() {
        warn!("{} listed words are not in the embedding", projection.missing.len());
    }
    match projection.silhouette {
        Some(s) => info!("silhouette {s:.4}"),
        None => info!("a single list has no silhouette"),
    }
    let file = std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_projection(&projection, std::io::BufWriter::new(file), a.delimiter)?;
    Ok(())
}
