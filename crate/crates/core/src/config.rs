//! Run configuration: a TOML file mirroring every stage's parameters.
//!
//! Unknown keys are rejected. Stage seeds are derived from the master seed
//! during [`RunConfig::resolve`], so one number controls all randomness.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aaeme::AaemeConfig;
use crate::classifiers::{ModelFamily, ParamGrid, SolverConfig};
use crate::error::{Error, Result};
use crate::eval::run_seed;
use crate::mapper::{CentroidConfig, MapperTrainConfig};
use crate::sgns::SgnsConfig;

/// Input and output locations. Flags override each entry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub te: Option<PathBuf>,
    pub de: Option<PathBuf>,
    pub ate: Option<PathBuf>,
    pub category_lexicon: Option<PathBuf>,
    pub emotion_lexicon: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Table,
    #[default]
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// `bow`, `category`, `emotion`, or an embedding source: `te`, `de`, `ate`.
    pub features: String,
    /// Padded concatenation instead of averaging for embedding features.
    pub concat: bool,
    pub model: ModelFamily,
    pub runs: usize,
    pub train_frac: f64,
    pub folds: usize,
    pub scale: bool,
    pub bow_size: usize,
    pub format: ReportFormat,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            features: "bow".into(),
            concat: false,
            model: ModelFamily::Lsvm,
            runs: 30,
            train_frac: 0.7,
            folds: 10,
            scale: true,
            bow_size: 400,
            format: ReportFormat::Both,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Minimum dataset occurrences for a listed word to be projected.
    pub min_count: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { min_count: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub paths: PathsConfig,
    pub sgns: SgnsConfig,
    pub mapper: MapperTrainConfig,
    pub centroid: CentroidConfig,
    pub aaeme: AaemeConfig,
    pub solver: SolverConfig,
    pub grid: ParamGrid,
    pub eval: EvalConfig,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            workers: 1,
            paths: PathsConfig::default(),
            sgns: SgnsConfig::default(),
            mapper: MapperTrainConfig::default(),
            centroid: CentroidConfig::default(),
            aaeme: AaemeConfig::default(),
            solver: SolverConfig::default(),
            grid: ParamGrid::default(),
            eval: EvalConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

// Streams of the master seed assigned to each stage.
const SGNS_STREAM: usize = 101;
const MAPPER_STREAM: usize = 102;
const AAEME_STREAM: usize = 103;

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        RunConfig::parse(&text)
    }

    /// Derive stage seeds from the master seed and check every section.
    pub fn resolve(mut self) -> Result<Self> {
        // TOML integers are signed 64-bit, so derived seeds keep 63 bits.
        let derive = |stream| run_seed(self.seed, stream) >> 1;
        self.sgns.seed = derive(SGNS_STREAM);
        self.sgns.workers = self.workers;
        self.mapper.optimizer.seed = derive(MAPPER_STREAM);
        self.aaeme.optimizer.seed = derive(AAEME_STREAM);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.sgns.validate()?;
        self.mapper.validate()?;
        // Neighbour counts are checked against the vocabulary at training time.
        self.centroid.validate(usize::MAX)?;
        self.aaeme.optimizer.validate()?;
        self.grid.validate()?;
        let e = &self.eval;
        if e.runs == 0 {
            return Err(Error::Config("eval.runs must be at least 1".into()));
        }
        if e.folds < 2 {
            return Err(Error::Config("eval.folds must be at least 2".into()));
        }
        if !(e.train_frac > 0.0 && e.train_frac < 1.0) {
            return Err(Error::Config("eval.train_frac must be in (0, 1)".into()));
        }
        if e.bow_size == 0 {
            return Err(Error::Config("eval.bow_size must be at least 1".into()));
        }
        if !matches!(e.features.as_str(), "bow" | "category" | "emotion" | "te" | "de" | "ate") {
            return Err(Error::Config(format!("unknown feature set {:?}", e.features)));
        }
        let embedding = matches!(e.features.as_str(), "te" | "de" | "ate");
        if e.model == ModelFamily::Nb && embedding && !e.scale {
            return Err(Error::Config(
                "naive Bayes needs nonnegative features; embedding features must be scaled".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::file(path, e))
    }
}
