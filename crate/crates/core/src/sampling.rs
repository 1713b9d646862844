//! Sentence splitting, stock-mention tagging, and grouping of sentences into
//! labeled per-(date, ticker) samples.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Article, PriceTable};

pub const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

/// Tokens whose trailing period does not end a sentence.
#[derive(Debug, Clone)]
pub struct Abbreviations(HashSet<String>);

impl Abbreviations {
    pub fn parse(text: &str) -> Self {
        Abbreviations(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }
}

impl Default for Abbreviations {
    fn default() -> Self {
        Self::parse(DEFAULT_ABBREVIATIONS)
    }
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’')
}

/// Splits text into sentences at `.`, `?` and `!` followed by whitespace or the
/// end of the text. A period that closes a listed abbreviation is not a
/// boundary; decimal points never are since no whitespace follows them.
pub fn split_sentences(text: &str, abbreviations: &Abbreviations) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut k = 0usize;
    while k < chars.len() {
        let (pos, c) = chars[k];
        if !matches!(c, '.' | '?' | '!') {
            k += 1;
            continue;
        }
        let mut end = k + 1;
        while end < chars.len() && (matches!(chars[end].1, '.' | '?' | '!') || is_closer(chars[end].1)) {
            end += 1;
        }
        let at_break = end == chars.len() || chars[end].1.is_whitespace();
        let byte_end = chars.get(end).map_or(text.len(), |&(p, _)| p);
        if at_break && !(c == '.' && ends_with_abbreviation(&text[start..pos + 1], abbreviations)) {
            let s = text[start..byte_end].trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            start = byte_end;
        }
        k = end;
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

fn ends_with_abbreviation(prefix: &str, abbreviations: &Abbreviations) -> bool {
    let word = prefix
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("")
        .trim_start_matches(|c: char| !c.is_alphanumeric());
    abbreviations.contains(word)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub ticker: String,
    /// Byte offset of the alias occurrence inside the sentence text.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub article_date: NaiveDate,
    pub mentions: Vec<Mention>,
}

impl Sentence {
    /// Distinct tickers in order of first mention.
    pub fn tickers(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.mentions
            .iter()
            .map(|m| m.ticker.as_str())
            .filter(|t| seen.insert(*t))
            .collect()
    }
}

#[derive(Debug, Clone)]
struct AliasEntry {
    alias: String,
    ticker: String,
    symbol: bool,
}

/// Surface-form lookup for company names and ticker symbols.
///
/// Symbols (an alias equal to its ticker or written in upper case) match
/// case-sensitively; names match case-insensitively. Matches must sit on word
/// boundaries and the longest alias starting at a position wins.
#[derive(Debug, Clone, Default)]
pub struct AliasTable {
    by_first_word: HashMap<String, Vec<AliasEntry>>,
}

fn first_word(s: &str) -> String {
    s.chars()
        .take_while(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl AliasTable {
    pub fn new<I, A, T>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, T)>,
        A: Into<String>,
        T: Into<String>,
    {
        let mut table = AliasTable::default();
        for (alias, ticker) in pairs {
            table.insert(alias.into(), ticker.into());
        }
        table
    }

    pub fn insert(&mut self, alias: String, ticker: String) {
        let alias = alias.trim().to_string();
        let key = first_word(&alias);
        if key.is_empty() {
            log::warn!("alias `{alias}` does not start with a word character; ignored");
            return;
        }
        let symbol =
            alias == ticker || (alias.chars().any(|c| c.is_alphabetic()) && alias.chars().all(|c| !c.is_lowercase()));
        let entries = self.by_first_word.entry(key).or_default();
        entries.push(AliasEntry { alias, ticker, symbol });
        entries.sort_by(|a, b| b.alias.len().cmp(&a.alias.len()).then(a.alias.cmp(&b.alias)));
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| crate::ingest::csv_err(path, e))?;
        let mut table = AliasTable::default();
        for (i, row) in reader.deserialize::<(String, String)>().enumerate() {
            let (alias, ticker) = row.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
            table.insert(alias, ticker);
        }
        Ok(table)
    }

    pub fn is_empty(&self) -> bool {
        self.by_first_word.is_empty()
    }

    fn match_at(&self, text: &str, pos: usize) -> Option<(usize, &str)> {
        let rest = &text[pos..];
        let candidates = self.by_first_word.get(&first_word(rest))?;
        candidates.iter().find_map(|e| {
            let len = e.alias.len();
            let head = rest.get(..len)?;
            let hit = if e.symbol {
                head == e.alias
            } else {
                head.to_lowercase() == e.alias.to_lowercase()
            };
            let boundary = rest[len..].chars().next().is_none_or(|c| !c.is_alphanumeric());
            (hit && boundary).then_some((len, e.ticker.as_str()))
        })
    }
}

/// Scans `text` for alias occurrences, one mention per occurrence.
pub fn tag_mentions(text: &str, aliases: &AliasTable) -> Vec<Mention> {
    let mut out = Vec::new();
    let mut prev_alnum = false;
    let mut skip_until = 0usize;
    for (pos, c) in text.char_indices() {
        let alnum = c.is_alphanumeric();
        if pos >= skip_until && alnum && !prev_alnum {
            if let Some((len, ticker)) = aliases.match_at(text, pos) {
                out.push(Mention {
                    ticker: ticker.to_string(),
                    offset: pos,
                });
                skip_until = pos + len;
            }
        }
        prev_alnum = alnum;
    }
    out
}

/// Splits an article body and keeps the sentences that mention a stock.
pub fn extract_sentences(article: &Article, abbreviations: &Abbreviations, aliases: &AliasTable) -> Vec<Sentence> {
    split_sentences(&article.body, abbreviations)
        .into_iter()
        .filter_map(|text| {
            let mentions = tag_mentions(&text, aliases);
            (!mentions.is_empty()).then_some(Sentence {
                text,
                article_date: article.date,
                mentions,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Up,
    Down,
}

impl Label {
    pub fn flipped(self) -> Label {
        match self {
            Label::Up => Label::Down,
            Label::Down => Label::Up,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Up => "up",
            Label::Down => "down",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "up" | "positive" => Ok(Label::Up),
            "down" | "negative" => Ok(Label::Down),
            _ => Err(Error::Invalid(format!("unknown label `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub ticker: String,
    pub date: NaiveDate,
    pub sentences: Vec<Sentence>,
    pub label: Option<Label>,
}

/// Next-trading-day movement of `ticker` for news dated `date`: the first
/// close after `date` against the last close on or before it. Ties and
/// missing prices give `None`.
pub fn movement_label(prices: &PriceTable, ticker: &str, date: NaiveDate) -> Option<Label> {
    let series = prices.get(ticker)?;
    let reference = series.observations()[series.index_on_or_before(date)?].1;
    let (_, next) = series.next_after(date)?;
    if next > reference {
        Some(Label::Up)
    } else if next < reference {
        Some(Label::Down)
    } else {
        None
    }
}

/// Groups sentences into one sample per distinct (date, ticker), ordered by
/// date then ticker. Sentences keep their input order inside a sample.
pub fn build_samples(sentences: &[Sentence], prices: &PriceTable) -> Vec<Sample> {
    let mut groups: BTreeMap<(NaiveDate, String), Vec<Sentence>> = BTreeMap::new();
    for s in sentences {
        for t in s.tickers() {
            groups
                .entry((s.article_date, t.to_string()))
                .or_default()
                .push(s.clone());
        }
    }
    groups
        .into_iter()
        .map(|((date, ticker), sentences)| {
            let label = movement_label(prices, &ticker, date);
            Sample {
                ticker,
                date,
                sentences,
                label,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl SplitKind {
    pub fn of(date: NaiveDate, train_end: NaiveDate, valid_end: NaiveDate) -> SplitKind {
        if date <= train_end {
            SplitKind::Train
        } else if date <= valid_end {
            SplitKind::Validation
        } else {
            SplitKind::Test
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T = Sample> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
    pub train_end: NaiveDate,
    pub valid_end: NaiveDate,
}

/// Partitions labeled samples by date; unlabeled samples are dropped.
pub fn split_by_date(samples: Vec<Sample>, train_end: NaiveDate, valid_end: NaiveDate) -> Result<DatasetSplit> {
    if train_end >= valid_end {
        return Err(Error::Validation(format!(
            "train_end {train_end} must precede valid_end {valid_end}"
        )));
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        train_end,
        valid_end,
    };
    for s in samples.into_iter().filter(|s| s.label.is_some()) {
        match SplitKind::of(s.date, train_end, valid_end) {
            SplitKind::Train => split.train.push(s),
            SplitKind::Validation => split.validation.push(s),
            SplitKind::Test => split.test.push(s),
        }
    }
    Ok(split)
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}
