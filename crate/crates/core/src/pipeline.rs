//! Config-driven stage runner. Each stage reads its declared inputs, writes
//! its outputs into the work dir and records a manifest of content hashes;
//! a stage whose manifest still matches is skipped.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{train_skipgram, EmbeddingTable, SkipGramConfig};
use crate::error::{Error, Result};
use crate::evaluation::{run_ablation, FeatureSplit, PropagationSweep};
use crate::features::{BlockSet, FeatureExtractor, FeatureMatrix, NearestLeftMention};
use crate::graph::{build_graph, threshold_predictions, CorrelationGraph, DEFAULT_MIN_OVERLAP, DEFAULT_THRESHOLD};
use crate::ingest::{load_prices, ArticleReader, DateRange, PriceTable};
use crate::lexicon::{
    build_category_lexicon, build_keyword_lexicon, default_seeds, CategoryLexicon, CategorySeeds, KeywordLexicon,
};
use crate::mlp::{train, MlpModel, TrainConfig};
use crate::sampling::{
    build_samples, extract_sentences, load_samples, split_by_date, write_samples, Abbreviations, AliasTable,
};
use crate::synth::SynthConfig;
use crate::text::tokenize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub articles: PathBuf,
    pub prices: PathBuf,
    pub aliases: PathBuf,
    /// Category seed file; the built-in ten categories when unset.
    pub category_seeds: Option<PathBuf>,
    /// Abbreviation list for sentence splitting; built-in list when unset.
    pub abbreviations: Option<PathBuf>,
    /// Pretrained vectors in text format; the embed stage trains when unset.
    pub pretrained_vectors: Option<PathBuf>,
    pub work_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            articles: "data/articles.jsonl".into(),
            prices: "data/prices.csv".into(),
            aliases: "data/aliases.csv".into(),
            category_seeds: None,
            abbreviations: None,
            pretrained_vectors: None,
            work_dir: "work".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dates {
    pub train_end: NaiveDate,
    pub valid_end: NaiveDate,
}

impl Default for Dates {
    fn default() -> Self {
        Dates {
            train_end: NaiveDate::from_ymd_opt(2013, 10, 18).expect("valid date"),
            valid_end: NaiveDate::from_ymd_opt(2014, 5, 30).expect("valid date"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconConfig {
    /// K: keyword lexicon size.
    pub keywords: usize,
    /// C: number of categories used, taken in file order.
    pub categories: usize,
    /// M: words per category.
    pub category_words: usize,
    pub seeds: Vec<String>,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        LexiconConfig {
            keywords: 1000,
            categories: 10,
            category_words: 100,
            seeds: default_seeds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub threshold: f64,
    pub min_overlap: usize,
    /// First date of the correlation window; the window always ends at `train_end`.
    pub window_start: Option<NaiveDate>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            threshold: DEFAULT_THRESHOLD,
            min_overlap: DEFAULT_MIN_OVERLAP,
            window_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub taus: Vec<f64>,
    pub iterations: usize,
    pub clamp_observed: bool,
    /// Threshold used by the predict stage for propagated predictions.
    pub predict_tau: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            taus: (0..=10).map(|i| i as f64 / 10.0).collect(),
            iterations: 1,
            clamp_observed: false,
            predict_tau: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub combinations: Vec<String>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            combinations: BlockSet::ablation_defaults().iter().map(|b| b.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    seed: u64,
    paths: Paths,
    dates: Dates,
    lexicon: LexiconConfig,
    embedding: SkipGramConfig,
    train: TrainConfig,
    graph: GraphConfig,
    sweep: SweepConfig,
    evaluate: EvaluateConfig,
    synth: SynthConfig,
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig {
            seed: 1,
            paths: Paths::default(),
            dates: Dates::default(),
            lexicon: LexiconConfig::default(),
            embedding: SkipGramConfig::default(),
            train: TrainConfig::default(),
            graph: GraphConfig::default(),
            sweep: SweepConfig::default(),
            evaluate: EvaluateConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Fully resolved pipeline configuration. Relative paths are resolved
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub dates: Dates,
    pub lexicon: LexiconConfig,
    pub embedding: SkipGramConfig,
    pub train: TrainConfig,
    /// Blocks the `train` stage model uses.
    pub blocks: BlockSet,
    pub graph: GraphConfig,
    pub sweep: SweepConfig,
    pub combinations: Vec<BlockSet>,
    pub synth: SynthConfig,
}

fn config_err(e: impl fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// TOML date literals become `YYYY-MM-DD` strings so they deserialize like
/// quoted dates.
fn normalize_dates(v: &mut toml::Value) {
    match v {
        toml::Value::Datetime(d) => *v = toml::Value::String(d.to_string()),
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, v)| normalize_dates(v)),
        toml::Value::Array(a) => a.iter_mut().for_each(normalize_dates),
        _ => {}
    }
}

/// Applies one `section.key=value` override. The value is read as a TOML
/// value when it parses as one and as a plain string otherwise.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = root
        .as_table_mut()
        .ok_or_else(|| Error::Config("config root is not a table".into()))?;
    for part in &parts[..parts.len() - 1] {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl PipelineConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base, overrides)
    }

    /// Parses a config, applies overrides (which win over the file), fills
    /// unset section seeds from the master seed and validates.
    pub fn from_toml_str(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Value = toml::from_str::<toml::Table>(text)
            .map(toml::Value::Table)
            .map_err(config_err)?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        normalize_dates(&mut root);
        let table = root.as_table_mut().expect("root is a table");
        let master = match table.get("seed") {
            Some(v) => {
                v.as_integer()
                    .filter(|&s| s >= 0)
                    .ok_or_else(|| Error::Config("seed must be a non-negative integer".into()))? as u64
            }
            None => 1,
        };
        for section in ["embedding", "train", "synth"] {
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
            if let Some(t) = entry.as_table_mut() {
                t.entry("seed".to_string())
                    .or_insert(toml::Value::Integer(master as i64));
            }
        }
        let blocks = match table
            .get_mut("train")
            .and_then(|t| t.as_table_mut())
            .and_then(|t| t.remove("blocks"))
        {
            Some(toml::Value::String(s)) => s.parse::<BlockSet>().map_err(config_err)?,
            Some(other) => return Err(Error::Config(format!("train.blocks must be a string, got {other}"))),
            None => BlockSet::all(),
        };
        let raw: RawConfig = root.try_into().map_err(config_err)?;
        let combinations = raw
            .evaluate
            .combinations
            .iter()
            .map(|c| c.parse::<BlockSet>().map_err(config_err))
            .collect::<Result<Vec<_>>>()?;
        let resolve = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        let mut paths = raw.paths;
        paths.articles = resolve(&paths.articles);
        paths.prices = resolve(&paths.prices);
        paths.aliases = resolve(&paths.aliases);
        paths.work_dir = resolve(&paths.work_dir);
        for p in [
            &mut paths.category_seeds,
            &mut paths.abbreviations,
            &mut paths.pretrained_vectors,
        ]
        .into_iter()
        .flatten()
        {
            *p = resolve(p);
        }
        let config = PipelineConfig {
            seed: master,
            paths,
            dates: raw.dates,
            lexicon: raw.lexicon,
            embedding: raw.embedding,
            train: raw.train,
            blocks,
            graph: raw.graph,
            sweep: raw.sweep,
            combinations,
            synth: raw.synth,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dates.train_end >= self.dates.valid_end {
            return Err(Error::Config(format!(
                "dates.train_end {} must precede dates.valid_end {}",
                self.dates.train_end, self.dates.valid_end
            )));
        }
        let l = &self.lexicon;
        if l.keywords == 0 || l.category_words == 0 {
            return Err(Error::Config(
                "lexicon.keywords and lexicon.category_words must be positive".into(),
            ));
        }
        if l.seeds.is_empty() {
            return Err(Error::Config("lexicon.seeds is empty".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("train.blocks selects no feature block".into()));
        }
        if self.combinations.iter().any(BlockSet::is_empty) {
            return Err(Error::Config(
                "evaluate.combinations contains an empty combination".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.graph.threshold) {
            return Err(Error::Config("graph.threshold must lie in [0, 1]".into()));
        }
        if self.sweep.taus.is_empty() || self.sweep.taus.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Config("sweep.taus must be non-empty and non-negative".into()));
        }
        self.embedding.validate()?;
        self.train.validate()?;
        self.synth.validate()
    }

    fn graph_window(&self) -> DateRange {
        match self.graph.window_start {
            Some(start) => DateRange::new(start, self.dates.train_end),
            None => DateRange::until(self.dates.train_end),
        }
    }

    fn price_window(&self) -> DateRange {
        DateRange::until(self.dates.train_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Ingest,
    Embed,
    Lexicon,
    Featurize,
    Train,
    Graph,
    Predict,
    Evaluate,
}

impl Stage {
    /// Stages run by `all`, in dependency order. `synth` is not part of it.
    pub const PIPELINE: [Stage; 8] = [
        Stage::Ingest,
        Stage::Embed,
        Stage::Lexicon,
        Stage::Featurize,
        Stage::Train,
        Stage::Graph,
        Stage::Predict,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Embed => "embed",
            Stage::Lexicon => "lexicon",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Graph => "graph",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Stage::Synth]
            .into_iter()
            .chain(Stage::PIPELINE)
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown stage `{s}`")))
    }
}

/// Work-dir artifact names.
pub mod artifacts {
    pub const SAMPLES: &str = "samples.jsonl";
    pub const VECTORS: &str = "vectors.txt";
    pub const LEXICON: &str = "lexicon.csv";
    pub const CATEGORIES: &str = "categories.csv";
    pub const FEATURES: &str = "features.csv";
    pub const MODEL: &str = "model.bin";
    pub const GRAPH: &str = "graph.csv";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const ABLATION_CSV: &str = "ablation.csv";
    pub const ABLATION_TXT: &str = "ablation.txt";
    pub const SWEEP_CSV: &str = "sweep.csv";
    pub const SWEEP_TXT: &str = "sweep.txt";
}

use artifacts::*;

/// Which stage writes a work-dir artifact.
fn producer(artifact: &str) -> Stage {
    match artifact {
        SAMPLES => Stage::Ingest,
        VECTORS => Stage::Embed,
        LEXICON | CATEGORIES => Stage::Lexicon,
        FEATURES => Stage::Featurize,
        MODEL => Stage::Train,
        GRAPH => Stage::Graph,
        PREDICTIONS => Stage::Predict,
        _ => Stage::Evaluate,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn sha256_json(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

/// Exclusive claim on a work dir, released on drop.
#[derive(Debug)]
pub struct WorkDirLock {
    path: PathBuf,
}

impl WorkDirLock {
    pub fn acquire(work_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(work_dir).map_err(|e| Error::io(work_dir, e))?;
        let path = work_dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(WorkDirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for WorkDirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Runs stages against one work dir while holding its lock.
pub struct Pipeline {
    pub config: PipelineConfig,
    /// Rerun stages even when their manifest matches.
    pub force: bool,
    _lock: WorkDirLock,
}

/// A declared stage input: either a work-dir artifact or an external file.
enum Input {
    Artifact(&'static str),
    External(&'static str, PathBuf),
}

impl Pipeline {
    pub fn open(config: PipelineConfig) -> Result<Self> {
        let lock = WorkDirLock::acquire(&config.paths.work_dir)?;
        Ok(Pipeline {
            config,
            force: false,
            _lock: lock,
        })
    }

    pub fn work(&self, artifact: &str) -> PathBuf {
        self.config.paths.work_dir.join(artifact)
    }

    pub fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.config
            .paths
            .work_dir
            .join("manifests")
            .join(format!("{stage}.json"))
    }

    pub fn run_all(&self) -> Result<Vec<(Stage, Outcome)>> {
        Stage::PIPELINE.iter().map(|&s| self.run(s).map(|o| (s, o))).collect()
    }

    fn inputs(&self, stage: Stage) -> Vec<Input> {
        let p = &self.config.paths;
        let ext = |name, path: &PathBuf| Input::External(name, path.clone());
        let mut v = match stage {
            Stage::Synth => vec![],
            Stage::Ingest => vec![
                ext("articles", &p.articles),
                ext("prices", &p.prices),
                ext("aliases", &p.aliases),
            ],
            Stage::Embed => vec![Input::Artifact(SAMPLES)],
            Stage::Lexicon => vec![Input::Artifact(SAMPLES), Input::Artifact(VECTORS)],
            Stage::Featurize => vec![
                Input::Artifact(SAMPLES),
                Input::Artifact(LEXICON),
                Input::Artifact(CATEGORIES),
                ext("prices", &p.prices),
            ],
            Stage::Train => vec![Input::Artifact(FEATURES)],
            Stage::Graph => vec![ext("prices", &p.prices)],
            Stage::Predict | Stage::Evaluate => vec![
                Input::Artifact(FEATURES),
                Input::Artifact(MODEL),
                Input::Artifact(GRAPH),
                ext("prices", &p.prices),
            ],
        };
        match stage {
            Stage::Ingest => v.extend(p.abbreviations.iter().map(|a| ext("abbreviations", a))),
            Stage::Embed => v.extend(p.pretrained_vectors.iter().map(|a| ext("pretrained_vectors", a))),
            Stage::Lexicon => v.extend(p.category_seeds.iter().map(|a| ext("category_seeds", a))),
            _ => {}
        }
        v
    }

    fn outputs(&self, stage: Stage) -> Vec<PathBuf> {
        let p = &self.config.paths;
        match stage {
            Stage::Synth => vec![p.articles.clone(), p.prices.clone(), p.aliases.clone()],
            Stage::Ingest => vec![self.work(SAMPLES)],
            Stage::Embed => vec![self.work(VECTORS)],
            Stage::Lexicon => vec![self.work(LEXICON), self.work(CATEGORIES)],
            Stage::Featurize => vec![self.work(FEATURES)],
            Stage::Train => vec![self.work(MODEL)],
            Stage::Graph => vec![self.work(GRAPH)],
            Stage::Predict => vec![self.work(PREDICTIONS)],
            Stage::Evaluate => [ABLATION_CSV, ABLATION_TXT, SWEEP_CSV, SWEEP_TXT]
                .iter()
                .map(|a| self.work(a))
                .collect(),
        }
    }

    /// The config values a stage's outputs depend on.
    fn stage_config(&self, stage: Stage) -> serde_json::Value {
        let c = &self.config;
        fn j<T: Serialize>(v: &T) -> serde_json::Value {
            serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
        }
        match stage {
            Stage::Synth => j(&c.synth),
            Stage::Ingest => serde_json::Value::Null,
            Stage::Embed => serde_json::json!({ "embedding": j(&c.embedding), "train_end": c.dates.train_end }),
            Stage::Lexicon => serde_json::json!({ "lexicon": j(&c.lexicon), "dates": j(&c.dates) }),
            Stage::Featurize => serde_json::json!({ "train_end": c.dates.train_end }),
            Stage::Train => serde_json::json!({
                "train": j(&c.train), "blocks": c.blocks.to_string(), "dates": j(&c.dates),
            }),
            Stage::Graph => serde_json::json!({ "graph": j(&c.graph), "train_end": c.dates.train_end }),
            Stage::Predict => serde_json::json!({ "sweep": j(&c.sweep), "dates": j(&c.dates) }),
            Stage::Evaluate => serde_json::json!({
                "train": j(&c.train),
                "combinations": c.combinations.iter().map(|b| b.to_string()).collect::<Vec<_>>(),
                "sweep": j(&c.sweep),
                "dates": j(&c.dates),
            }),
        }
    }

    fn input_hashes(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for input in self.inputs(stage) {
            let (name, path) = match input {
                Input::Artifact(a) => {
                    let path = self.work(a);
                    if !path.exists() {
                        return Err(Error::MissingStage {
                            stage: producer(a).name().into(),
                            path,
                        });
                    }
                    (a.to_string(), path)
                }
                Input::External(name, path) => {
                    if !path.exists() {
                        let hint = if matches!(name, "articles" | "prices" | "aliases") {
                            " (run `synth` to generate a fixture or fix the path)"
                        } else {
                            ""
                        };
                        return Err(Error::Config(format!(
                            "paths.{name} {} does not exist{hint}",
                            path.display()
                        )));
                    }
                    (name.to_string(), path)
                }
            };
            out.insert(name, sha256_file(&path)?);
        }
        Ok(out)
    }

    fn output_hashes(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        self.outputs(stage)
            .iter()
            .map(|p| {
                let name = p
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok((name, sha256_file(p)?))
            })
            .collect()
    }

    fn up_to_date(&self, stage: Stage, expected: &Manifest) -> bool {
        let Ok(text) = std::fs::read_to_string(self.manifest_path(stage)) else {
            return false;
        };
        let Ok(old) = serde_json::from_str::<Manifest>(&text) else {
            return false;
        };
        let same_inputs = old.stage == expected.stage
            && old.version == expected.version
            && old.seed == expected.seed
            && old.config_hash == expected.config_hash
            && old.inputs == expected.inputs;
        same_inputs && self.output_hashes(stage).map(|h| h == old.outputs).unwrap_or(false)
    }

    /// Runs one stage unless its manifest shows it is current.
    pub fn run(&self, stage: Stage) -> Result<Outcome> {
        let mut manifest = Manifest {
            stage: stage.name().into(),
            version: VERSION.into(),
            seed: self.config.seed,
            config_hash: sha256_json(&self.stage_config(stage)),
            inputs: self.input_hashes(stage)?,
            outputs: BTreeMap::new(),
        };
        if !self.force && self.up_to_date(stage, &manifest) {
            log::info!("{stage}: up to date");
            return Ok(Outcome::UpToDate);
        }
        log::info!("{stage}: running");
        match stage {
            Stage::Synth => self.synth()?,
            Stage::Ingest => self.ingest()?,
            Stage::Embed => self.embed()?,
            Stage::Lexicon => self.lexicon()?,
            Stage::Featurize => self.featurize()?,
            Stage::Train => self.train()?,
            Stage::Graph => self.graph()?,
            Stage::Predict => self.predict()?,
            Stage::Evaluate => self.evaluate()?,
        }
        manifest.outputs = self.output_hashes(stage)?;
        let path = self.manifest_path(stage);
        let dir = path.parent().expect("manifest dir");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(Outcome::Ran)
    }

    fn prices(&self) -> Result<PriceTable> {
        load_prices(&self.config.paths.prices, self.config.price_window())
    }

    fn synth(&self) -> Result<()> {
        let p = &self.config.paths;
        let fixture = crate::synth::generate(&self.config.synth)?;
        for path in [&p.articles, &p.prices, &p.aliases] {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        crate::ingest::write_articles(&p.articles, &fixture.articles)?;
        std::fs::write(&p.prices, fixture.prices_csv()).map_err(|e| Error::io(&p.prices, e))?;
        std::fs::write(&p.aliases, fixture.aliases_csv()).map_err(|e| Error::io(&p.aliases, e))?;
        log::info!(
            "synth: {} tickers, {} trading days, {} articles",
            fixture.tickers.len(),
            fixture.dates.len(),
            fixture.articles.len()
        );
        Ok(())
    }

    fn ingest(&self) -> Result<()> {
        let p = &self.config.paths;
        let abbreviations = match &p.abbreviations {
            Some(path) => Abbreviations::load(path)?,
            None => Abbreviations::default(),
        };
        let aliases = AliasTable::load(&p.aliases)?;
        let prices = self.prices()?;
        let mut sentences = Vec::new();
        let mut articles = 0usize;
        for article in ArticleReader::open(&p.articles)? {
            sentences.extend(extract_sentences(&article?, &abbreviations, &aliases));
            articles += 1;
        }
        let samples = build_samples(&sentences, &prices);
        let labeled = samples.iter().filter(|s| s.label.is_some()).count();
        log::info!(
            "ingest: {articles} articles, {} sentences with mentions, {} samples ({labeled} labeled)",
            sentences.len(),
            samples.len()
        );
        write_samples(&self.work(SAMPLES), &samples)
    }

    fn embed(&self) -> Result<()> {
        let out = self.work(VECTORS);
        if let Some(path) = &self.config.paths.pretrained_vectors {
            let table = EmbeddingTable::load(path)?;
            log::info!("embed: loaded {} pretrained vectors", table.len());
            return table.write(&out);
        }
        let samples = load_samples(&self.work(SAMPLES))?;
        let mut seen = HashSet::new();
        let corpus: Vec<Vec<String>> = samples
            .iter()
            .filter(|s| s.date <= self.config.dates.train_end)
            .flat_map(|s| &s.sentences)
            .filter(|s| seen.insert((s.article_date, s.text.as_str())))
            .map(|s| tokenize(&s.text))
            .collect();
        log::info!("embed: training on {} distinct training-period sentences", corpus.len());
        let table = train_skipgram(&corpus, &self.config.embedding)?;
        log::info!("embed: {} words, dimension {}", table.len(), table.dim());
        table.write(&out)
    }

    fn category_seeds(&self) -> Result<CategorySeeds> {
        let mut seeds = match &self.config.paths.category_seeds {
            Some(path) => CategorySeeds::load(path)?,
            None => CategorySeeds::default(),
        };
        let c = self.config.lexicon.categories;
        if seeds.len() < c {
            return Err(Error::Config(format!(
                "lexicon.categories = {c} but only {} categories are defined",
                seeds.len()
            )));
        }
        seeds.0.truncate(c);
        Ok(seeds)
    }

    fn lexicon(&self) -> Result<()> {
        let d = self.config.dates;
        let split = split_by_date(load_samples(&self.work(SAMPLES))?, d.train_end, d.valid_end)?;
        let table = EmbeddingTable::load(&self.work(VECTORS))?;
        let lex = &self.config.lexicon;
        let keywords = build_keyword_lexicon(&table, &lex.seeds, &split.train, lex.keywords)?;
        let categories = build_category_lexicon(&table, &self.category_seeds()?, lex.category_words)?;
        log::info!("lexicon: {} keywords, {} categories", keywords.len(), categories.len());
        keywords.write(&self.work(LEXICON))?;
        categories.write(&self.work(CATEGORIES))
    }

    fn featurize(&self) -> Result<()> {
        let samples = load_samples(&self.work(SAMPLES))?;
        let keywords = KeywordLexicon::load(&self.work(LEXICON))?;
        let categories = CategoryLexicon::load(&self.work(CATEGORIES))?;
        let prices = self.prices()?;
        let extractor = FeatureExtractor {
            prices: &prices,
            keywords: Some(&keywords),
            categories: Some(&categories),
            detector: &NearestLeftMention,
        };
        let blocks = BlockSet::all();
        let mut matrix = FeatureMatrix::new(extractor.layout(blocks));
        let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
        for s in samples.iter().filter(|s| s.label.is_some()) {
            match extractor.extract(s, blocks)? {
                Ok(v) => matrix.push(s.label.expect("labeled"), s.ticker.clone(), s.date, v)?,
                Err(reason) => *skipped.entry(reason.to_string()).or_default() += 1,
            }
        }
        log::info!("featurize: {} vectors of width {}", matrix.len(), matrix.layout.dim());
        for (reason, n) in &skipped {
            log::info!("featurize: skipped {n} samples: {reason}");
        }
        matrix.write(&self.work(FEATURES))
    }

    fn split(&self) -> Result<FeatureSplit> {
        let all = FeatureMatrix::load(&self.work(FEATURES))?;
        Ok(FeatureSplit::by_date(
            &all,
            self.config.dates.train_end,
            self.config.dates.valid_end,
        ))
    }

    fn train(&self) -> Result<()> {
        let split = self.split()?.project(self.config.blocks)?;
        log::info!(
            "train: {} train / {} validation rows, blocks {}",
            split.train.len(),
            split.validation.len(),
            self.config.blocks
        );
        let model = train(&split.train, &split.validation, &self.config.train)?;
        log::info!(
            "train: best epoch {:?} of {}",
            model.meta.best_epoch,
            model.meta.epochs_run
        );
        model.save(&self.work(MODEL))
    }

    fn graph(&self) -> Result<()> {
        let prices = self.prices()?;
        let universe: Vec<String> = prices.tickers().map(str::to_string).collect();
        let g = &self.config.graph;
        let graph = build_graph(
            &prices,
            &universe,
            self.config.graph_window(),
            g.threshold,
            g.min_overlap,
        )?;
        log::info!("graph: {} nodes, {} edges", graph.len(), graph.edge_count());
        graph.write(&self.work(GRAPH))
    }

    /// Model, its test rows and the graph, shared by predict and evaluate.
    fn trained(&self) -> Result<(MlpModel, FeatureMatrix, CorrelationGraph, PriceTable)> {
        let model = MlpModel::load(&self.work(MODEL))?;
        let blocks = model
            .layout
            .as_ref()
            .map(|l| l.block_set())
            .ok_or_else(|| Error::Invalid("model file has no recorded feature layout".into()))?;
        let test = self.split()?.test.project(blocks)?;
        let graph = CorrelationGraph::load(&self.work(GRAPH))?;
        Ok((model, test, graph, self.prices()?))
    }

    fn sweep<'a>(
        &self,
        model: &'a MlpModel,
        graph: &'a CorrelationGraph,
        prices: &'a PriceTable,
    ) -> PropagationSweep<'a> {
        PropagationSweep {
            model,
            graph,
            prices,
            iterations: self.config.sweep.iterations,
            clamp_observed: self.config.sweep.clamp_observed,
        }
    }

    fn predict(&self) -> Result<()> {
        let (model, test, graph, prices) = self.trained()?;
        let mut rows: Vec<(NaiveDate, u8, String, String)> = Vec::new();
        for r in &test.rows {
            let p = model.predict_values(&r.values)?;
            rows.push((
                r.date,
                0,
                r.ticker.clone(),
                format!("model,{},{}", p.label.as_str(), p.confidence),
            ));
        }
        let (dates, _) = self.sweep(&model, &graph, &prices).propagate_dates(&test)?;
        for d in dates {
            for (ticker, (label, v)) in threshold_predictions(&graph, &d.propagated, self.config.sweep.predict_tau) {
                rows.push((d.date, 1, ticker, format!("graph,{},{v}", label.as_str())));
            }
        }
        rows.sort();
        let mut out = String::from("date,ticker,source,label,confidence\n");
        for (date, _, ticker, rest) in &rows {
            out.push_str(&format!("{date},{ticker},{rest}\n"));
        }
        log::info!("predict: {} predictions", rows.len());
        let path = self.work(PREDICTIONS);
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))
    }

    fn evaluate(&self) -> Result<()> {
        let split = self.split()?;
        let ablation = run_ablation(&split, &self.config.combinations, &self.config.train);
        let (model, test, graph, prices) = self.trained()?;
        let sweep = self
            .sweep(&model, &graph, &prices)
            .run(&test, &self.config.sweep.taus)?;
        for (name, text) in [
            (ABLATION_CSV, ablation.to_csv()),
            (ABLATION_TXT, ablation.to_text()),
            (SWEEP_CSV, sweep.to_csv()),
            (SWEEP_TXT, sweep.to_text()),
        ] {
            let path = self.work(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        log::info!("evaluate: ablation\n{}", ablation.to_text());
        log::info!("evaluate: sweep\n{}", sweep.to_text());
        Ok(())
    }
}
