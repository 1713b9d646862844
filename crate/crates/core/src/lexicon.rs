//! Keyword and category lexicons expanded from seed words through embedding
//! similarity, with document frequencies and polarity scores taken from the
//! labeled training samples.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{rank_by_seed_similarity, rank_candidates, EmbeddingTable};
use crate::error::{Error, Result};
use crate::ingest::csv_err;
use crate::sampling::{Label, Sample};
use crate::text::tokenize;

pub const DEFAULT_SEEDS: [&str; 9] = [
    "surge", "rise", "shrink", "jump", "drop", "fall", "plunge", "gain", "slump",
];

pub const DEFAULT_CATEGORY_SEEDS: &str = include_str!("../data/category_seeds.txt");

pub fn default_seeds() -> Vec<String> {
    DEFAULT_SEEDS.iter().map(|s| s.to_string()).collect()
}

/// Polarity from sample-level counts with add-one smoothing on the joint
/// counts:
///
/// `ln[(f(w,pos)+1)(f(neg)+1) / ((f(w,neg)+1)(f(pos)+1))]`
///
/// which is the difference of the two smoothed PMI terms after `N` and
/// `f(w)` cancel.
pub fn polarity_from_counts(with_pos: u64, with_neg: u64, pos: u64, neg: u64) -> f64 {
    let num = (with_pos as f64 + 1.0) * (neg as f64 + 1.0);
    let den = (with_neg as f64 + 1.0) * (pos as f64 + 1.0);
    // ln a − ln b keeps the score exactly antisymmetric when labels swap
    num.ln() - den.ln()
}

pub fn idf_from_counts(n: u64, df: u64) -> f64 {
    ((n as f64 + 1.0) / (df as f64 + 1.0)).ln()
}

/// Distinct tokens of each training sample together with its label.
pub struct TrainingCounts {
    n: u64,
    pos: u64,
    neg: u64,
    /// word -> (samples containing it, of which positive)
    df: HashMap<String, (u64, u64)>,
}

impl TrainingCounts {
    pub fn from_samples(train: &[Sample]) -> Self {
        let mut counts = TrainingCounts {
            n: 0,
            pos: 0,
            neg: 0,
            df: HashMap::new(),
        };
        for s in train {
            let Some(label) = s.label else { continue };
            counts.n += 1;
            let up = label == Label::Up;
            if up {
                counts.pos += 1;
            } else {
                counts.neg += 1;
            }
            let words: HashSet<String> = s.sentences.iter().flat_map(|x| tokenize(&x.text)).collect();
            for w in words {
                let e = counts.df.entry(w).or_default();
                e.0 += 1;
                e.1 += up as u64;
            }
        }
        counts
    }

    pub fn samples(&self) -> u64 {
        self.n
    }

    pub fn df(&self, word: &str) -> u64 {
        self.df.get(word).map_or(0, |e| e.0)
    }

    pub fn idf(&self, word: &str) -> f64 {
        idf_from_counts(self.n, self.df(word))
    }

    pub fn polarity(&self, word: &str) -> Result<f64> {
        if self.pos == 0 || self.neg == 0 {
            return Err(Error::Invalid(
                "polarity needs both up and down samples in the training set".into(),
            ));
        }
        let (df, with_pos) = self.df.get(word).copied().unwrap_or((0, 0));
        Ok(polarity_from_counts(with_pos, df - with_pos, self.pos, self.neg))
    }

    fn contains(&self, word: &str) -> bool {
        self.df.contains_key(word)
    }
}

pub fn polarity_score(word: &str, train: &[Sample]) -> Result<f64> {
    TrainingCounts::from_samples(train).polarity(word)
}

pub fn compute_idf(word: &str, train: &[Sample]) -> f64 {
    TrainingCounts::from_samples(train).idf(word)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordEntry {
    pub word: String,
    pub seed: bool,
    pub similarity: f64,
    pub df: u64,
    pub idf: f64,
    pub ps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordLexicon {
    entries: Vec<KeywordEntry>,
    index: HashMap<String, usize>,
}

impl KeywordLexicon {
    pub fn new(entries: Vec<KeywordEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.word.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate keyword `{}`", e.word)));
            }
        }
        Ok(KeywordLexicon { entries, index })
    }

    pub fn entries(&self) -> &[KeywordEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn get(&self, word: &str) -> Option<&KeywordEntry> {
        self.position(word).map(|i| &self.entries[i])
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["word", "seed_flag", "similarity", "df", "idf", "ps"])
            .map_err(|e| csv_err(path, e))?;
        for e in &self.entries {
            w.write_record([
                e.word.clone(),
                (e.seed as u8).to_string(),
                e.similarity.to_string(),
                e.df.to_string(),
                e.idf.to_string(),
                e.ps.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut entries = Vec::new();
        for (i, row) in r.deserialize::<(String, u8, f64, u64, f64, f64)>().enumerate() {
            let (word, seed, similarity, df, idf, ps) = row.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
            entries.push(KeywordEntry {
                word,
                seed: seed != 0,
                similarity,
                df,
                idf,
                ps,
            });
        }
        KeywordLexicon::new(entries)
    }
}

/// Top-`k` training words by similarity to the seeds, annotated with df, idf
/// and polarity. Returns fewer than `k` entries (with a warning) when the
/// candidate pool is smaller.
pub fn build_keyword_lexicon(
    table: &EmbeddingTable,
    seeds: &[String],
    train: &[Sample],
    k: usize,
) -> Result<KeywordLexicon> {
    let counts = TrainingCounts::from_samples(train);
    let candidates = table.words().iter().map(String::as_str).filter(|w| counts.contains(w));
    let ranked = rank_candidates(table, seeds, candidates)?;
    if ranked.len() < k {
        log::warn!(
            "only {} candidate keywords available, fewer than the requested {k}",
            ranked.len()
        );
    }
    let seed_set: HashSet<&str> = seeds.iter().map(String::as_str).collect();
    let entries = ranked
        .into_iter()
        .take(k)
        .map(|(word, similarity)| {
            Ok(KeywordEntry {
                seed: seed_set.contains(word.as_str()),
                similarity,
                df: counts.df(&word),
                idf: counts.idf(&word),
                ps: counts.polarity(&word)?,
                word,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    KeywordLexicon::new(entries)
}

/// Named seed-word lists, one per category, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySeeds(pub Vec<(String, Vec<String>)>);

impl CategorySeeds {
    /// Parses `[name]` section headers each followed by one seed per line.
    /// `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out: Vec<(String, Vec<String>)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if out.iter().any(|(n, _)| n == name) {
                    return Err(Error::Config(format!("category `{name}` declared twice")));
                }
                out.push((name.to_string(), Vec::new()));
            } else {
                match out.last_mut() {
                    Some((_, seeds)) => seeds.push(line.to_lowercase()),
                    None => {
                        return Err(Error::Config(format!(
                            "category seeds line {}: seed word before any [category] header",
                            i + 1
                        )))
                    }
                }
            }
        }
        if let Some((name, _)) = out.iter().find(|(_, s)| s.is_empty()) {
            return Err(Error::Config(format!("category `{name}` has no seed words")));
        }
        Ok(CategorySeeds(out))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for CategorySeeds {
    fn default() -> Self {
        Self::parse(DEFAULT_CATEGORY_SEEDS).expect("shipped category seeds parse")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryWord {
    pub word: String,
    pub seed: bool,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Category {
    pub name: String,
    pub words: Vec<CategoryWord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryLexicon {
    categories: Vec<Category>,
    /// word -> indices of the categories containing it
    membership: HashMap<String, Vec<usize>>,
}

impl CategoryLexicon {
    pub fn new(categories: Vec<Category>) -> Self {
        let mut membership: HashMap<String, Vec<usize>> = HashMap::new();
        for (c, cat) in categories.iter().enumerate() {
            for w in &cat.words {
                let e = membership.entry(w.word.clone()).or_default();
                if e.last() != Some(&c) {
                    e.push(c);
                }
            }
        }
        CategoryLexicon { categories, membership }
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn categories_of(&self, word: &str) -> &[usize] {
        self.membership.get(word).map_or(&[], Vec::as_slice)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["category", "word", "seed_flag", "similarity"])
            .map_err(|e| csv_err(path, e))?;
        for c in &self.categories {
            for e in &c.words {
                w.write_record([
                    c.name.clone(),
                    e.word.clone(),
                    (e.seed as u8).to_string(),
                    e.similarity.to_string(),
                ])
                .map_err(|e| csv_err(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut categories: Vec<Category> = Vec::new();
        for (i, row) in r.deserialize::<(String, String, u8, f64)>().enumerate() {
            let (name, word, seed, similarity) = row.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
            let entry = CategoryWord {
                word,
                seed: seed != 0,
                similarity,
            };
            match categories.iter_mut().find(|c| c.name == name) {
                Some(c) => c.words.push(entry),
                None => categories.push(Category {
                    name,
                    words: vec![entry],
                }),
            }
        }
        Ok(CategoryLexicon::new(categories))
    }
}

/// Expands each category independently to its top-`m` words by maximum
/// cosine to that category's seeds.
pub fn build_category_lexicon(table: &EmbeddingTable, seeds: &CategorySeeds, m: usize) -> Result<CategoryLexicon> {
    let mut categories = Vec::with_capacity(seeds.len());
    for (name, words) in &seeds.0 {
        let ranked = rank_by_seed_similarity(table, words).map_err(|_| {
            Error::Invalid(format!(
                "category `{name}`: none of its seed words [{}] is in the embedding vocabulary",
                words.join(", ")
            ))
        })?;
        if ranked.len() < m {
            log::warn!("category `{name}` has only {} candidate words (< {m})", ranked.len());
        }
        let seed_set: HashSet<&str> = words.iter().map(String::as_str).collect();
        categories.push(Category {
            name: name.clone(),
            words: ranked
                .into_iter()
                .take(m)
                .map(|(word, similarity)| CategoryWord {
                    seed: seed_set.contains(word.as_str()),
                    similarity,
                    word,
                })
                .collect(),
        });
    }
    Ok(CategoryLexicon::new(categories))
}
