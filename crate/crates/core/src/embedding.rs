//! Skip-gram word embeddings trained with negative sampling, plus the cosine
//! neighbor queries the lexicon builder runs against them.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipGramConfig {
    pub dimension: usize,
    pub window: usize,
    pub negative: usize,
    pub epochs: usize,
    /// Starting learning rate, decayed linearly over all training tokens.
    pub learning_rate: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dimension: 100,
            window: 5,
            negative: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 5,
            seed: 1,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 || self.window == 0 || self.negative == 0 || self.epochs == 0 || self.min_count == 0 {
            return Err(Error::Config(
                "embedding dimension, window, negative, epochs and min_count must be positive".into(),
            ));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("embedding learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Word vectors of a fixed dimension with their corpus frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    counts: Vec<u64>,
    dim: usize,
    vectors: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(words: Vec<String>, counts: Vec<u64>, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        if counts.len() != words.len() || vectors.len() != words.len() * dim {
            return Err(Error::Dimension {
                expected: words.len() * dim,
                got: vectors.len(),
            });
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate word `{w}` in embedding table")));
            }
        }
        Ok(EmbeddingTable {
            words,
            counts,
            dim,
            vectors,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn count(&self, word: &str) -> Option<u64> {
        self.index.get(word).map(|&i| self.counts[i])
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Writes the text vector format: `<vocab> <dim>` header, then `word v1 .. vd`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{} {}", self.len(), self.dim).map_err(io)?;
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word}").map_err(io)?;
            for v in self.row(i) {
                write!(w, " {v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads the text vector format. Frequencies are not stored in it and load as 1.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) => l.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::parse(path, 1, "missing header")),
        };
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, 1, format!("bad header `{header}`: {e}")))?;
        let [size, dim] = nums[..] else {
            return Err(Error::parse(path, 1, format!("bad header `{header}`")));
        };
        let mut words = Vec::with_capacity(size);
        let mut vectors = Vec::with_capacity(size * dim);
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap_or_default().to_string();
            let vals: Vec<f64> = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, i + 1, format!("word `{word}`: {e}")))?;
            if vals.len() != dim {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("word `{word}` has {} components, expected {dim}", vals.len()),
                ));
            }
            words.push(word);
            vectors.extend(vals);
        }
        if words.len() != size {
            return Err(Error::parse(
                path,
                1,
                format!("header declares {size} words, found {}", words.len()),
            ));
        }
        let counts = vec![1; words.len()];
        EmbeddingTable::new(words, counts, dim, vectors).map_err(|e| Error::parse(path, 0, e.to_string()))
    }
}

/// Per-epoch mean negative-sampling loss recorded during training.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SkipGramReport {
    pub epoch_losses: Vec<f64>,
    pub training_pairs: u64,
}

fn log_sigmoid(x: f64) -> f64 {
    // ln σ(x) = −ln(1 + e^{−x})
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn train_skipgram(sentences: &[Vec<String>], config: &SkipGramConfig) -> Result<EmbeddingTable> {
    train_skipgram_with_report(sentences, config).map(|(t, _)| t)
}

/// Trains skip-gram vectors single-threaded in corpus order; the result is a
/// pure function of (corpus, config).
pub fn train_skipgram_with_report(
    sentences: &[Vec<String>],
    config: &SkipGramConfig,
) -> Result<(EmbeddingTable, SkipGramReport)> {
    config.validate()?;
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for s in sentences {
        for w in s {
            *freq.entry(w.as_str()).or_default() += 1;
        }
    }
    let mut vocab: Vec<(&str, u64)> = freq.into_iter().filter(|&(_, c)| c >= config.min_count).collect();
    if vocab.is_empty() {
        return Err(Error::Invalid(format!(
            "no word reaches min_count {} in the embedding corpus",
            config.min_count
        )));
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, &(w, _))| (w, i)).collect();
    let corpus: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.iter().filter_map(|w| index.get(w.as_str()).copied()).collect())
        .collect();

    // Cumulative unigram^(3/4) distribution for negative draws.
    let mut cumulative = Vec::with_capacity(vocab.len());
    let mut acc = 0.0;
    for &(_, c) in &vocab {
        acc += (c as f64).powf(0.75);
        cumulative.push(acc);
    }
    let total_weight = acc;

    let dim = config.dimension;
    let n = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input: Vec<f64> = (0..n * dim).map(|_| (rng.gen::<f64>() - 0.5) / dim as f64).collect();
    let mut output = vec![0.0f64; n * dim];
    let mut grad = vec![0.0f64; dim];

    let corpus_tokens: u64 = corpus.iter().map(|s| s.len() as u64).sum();
    let total_tokens = (corpus_tokens * config.epochs as u64).max(1) as f64;
    let mut processed = 0u64;
    let mut report = SkipGramReport::default();

    for _epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0u64;
        for sentence in &corpus {
            for (pos, &center) in sentence.iter().enumerate() {
                let lr = config.learning_rate * (1.0 - processed as f64 / total_tokens).max(1e-4);
                processed += 1;
                let span = config.window - rng.gen_range(0..config.window);
                let lo = pos.saturating_sub(span);
                let hi = (pos + span).min(sentence.len() - 1);
                for (ctx_pos, &context) in sentence.iter().enumerate().take(hi + 1).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let u = center * dim;
                    for k in 0..=config.negative {
                        let (target, positive) = if k == 0 {
                            (context, true)
                        } else {
                            let r = rng.gen::<f64>() * total_weight;
                            let t = cumulative.partition_point(|&c| c <= r).min(n - 1);
                            if t == context {
                                continue;
                            }
                            (t, false)
                        };
                        let v = target * dim;
                        let dot: f64 = (0..dim).map(|i| input[u + i] * output[v + i]).sum();
                        let label = if positive { 1.0 } else { 0.0 };
                        loss_sum -= if positive { log_sigmoid(dot) } else { log_sigmoid(-dot) };
                        let g = (label - sigmoid(dot)) * lr;
                        for i in 0..dim {
                            grad[i] += g * output[v + i];
                            output[v + i] += g * input[u + i];
                        }
                    }
                    for i in 0..dim {
                        input[u + i] += grad[i];
                    }
                    pairs += 1;
                }
            }
        }
        if !loss_sum.is_finite() {
            return Err(Error::Diverged {
                epoch: report.epoch_losses.len(),
                message: "skip-gram loss is not finite".into(),
            });
        }
        report
            .epoch_losses
            .push(if pairs > 0 { loss_sum / pairs as f64 } else { 0.0 });
        report.training_pairs += pairs;
    }

    let words = vocab.iter().map(|&(w, _)| w.to_string()).collect();
    let counts = vocab.iter().map(|&(_, c)| c).collect();
    Ok((EmbeddingTable::new(words, counts, dim, input)?, report))
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Invalid("cosine of a zero vector is undefined".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Scores each candidate word by its maximum cosine to any in-vocabulary seed
/// and sorts descending, ties broken lexicographically. Seeds score exactly 1.
/// Words with zero vectors score −1.
pub fn rank_candidates<'a, I>(table: &EmbeddingTable, seeds: &[String], candidates: I) -> Result<Vec<(String, f64)>>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut present = Vec::new();
    for s in seeds {
        match table.vector(s) {
            Some(v) => present.push((s.as_str(), v)),
            None => log::warn!("seed word `{s}` is not in the embedding vocabulary; skipped"),
        }
    }
    if present.is_empty() {
        return Err(Error::Invalid(format!(
            "none of the seed words [{}] is in the embedding vocabulary",
            seeds.join(", ")
        )));
    }
    let seed_set: HashSet<&str> = present.iter().map(|&(s, _)| s).collect();
    let mut ranked: Vec<(String, f64)> = candidates
        .into_iter()
        .filter_map(|w| table.vector(w).map(|v| (w, v)))
        .map(|(w, v)| {
            let score = if seed_set.contains(w) {
                1.0
            } else {
                present
                    .iter()
                    .map(|(_, s)| cosine(v, s).unwrap_or(-1.0))
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            (w.to_string(), score)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Ranks the full vocabulary against `seeds`.
pub fn rank_by_seed_similarity(table: &EmbeddingTable, seeds: &[String]) -> Result<Vec<(String, f64)>> {
    rank_candidates(table, seeds, table.words().iter().map(String::as_str))
}
