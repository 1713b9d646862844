//! Feature extraction: the price block plus the three news blocks
//! (bag-of-keywords, polarity, category tags), and the on-disk feature matrix.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{parse_date, NormStats, PriceSeries, PriceTable};
use crate::lexicon::{CategoryLexicon, KeywordLexicon};
use crate::sampling::{Label, Sample, Sentence};
use crate::text::tokenize_with_offsets;

pub const PRICE_WINDOW: usize = 5;
pub const PRICE_DIM: usize = PRICE_WINDOW + (PRICE_WINDOW - 1) + (PRICE_WINDOW - 2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Price,
    Bok,
    Ps,
    Ct,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::Price, Block::Bok, Block::Ps, Block::Ct];

    pub fn name(self) -> &'static str {
        match self {
            Block::Price => "price",
            Block::Bok => "bok",
            Block::Ps => "ps",
            Block::Ct => "ct",
        }
    }
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "price" => Ok(Block::Price),
            "bok" => Ok(Block::Bok),
            "ps" => Ok(Block::Ps),
            "ct" => Ok(Block::Ct),
            other => Err(Error::Config(format!("unknown feature block `{other}`"))),
        }
    }
}

/// A set of enabled blocks; iteration is always in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BlockSet {
    pub price: bool,
    pub bok: bool,
    pub ps: bool,
    pub ct: bool,
}

impl BlockSet {
    pub fn all() -> Self {
        BlockSet {
            price: true,
            bok: true,
            ps: true,
            ct: true,
        }
    }

    pub fn contains(&self, b: Block) -> bool {
        match b {
            Block::Price => self.price,
            Block::Bok => self.bok,
            Block::Ps => self.ps,
            Block::Ct => self.ct,
        }
    }

    pub fn insert(&mut self, b: Block) {
        match b {
            Block::Price => self.price = true,
            Block::Bok => self.bok = true,
            Block::Ps => self.ps = true,
            Block::Ct => self.ct = true,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Block> + '_ {
        Block::ALL.into_iter().filter(|b| self.contains(*b))
    }

    pub fn is_empty(&self) -> bool {
        self.iter().next().is_none()
    }

    /// The eight combinations of the standard ablation table.
    pub fn ablation_defaults() -> Vec<BlockSet> {
        [
            "price",
            "price+bok",
            "price+bok+ps",
            "price+bok+ct",
            "price+ps",
            "price+ct",
            "price+ps+ct",
            "price+bok+ps+ct",
        ]
        .iter()
        .map(|s| s.parse().expect("static combination"))
        .collect()
    }
}

impl fmt::Display for BlockSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Block::name).collect();
        write!(f, "{}", names.join("+"))
    }
}

impl FromStr for BlockSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = BlockSet::default();
        for part in s.split('+') {
            set.insert(part.parse()?);
        }
        Ok(set)
    }
}

/// Which blocks a feature vector holds, in what order, and how wide each is.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout {
    pub blocks: Vec<(Block, usize)>,
    pub keywords: usize,
    pub categories: usize,
}

impl Layout {
    pub fn new(set: BlockSet, keywords: usize, categories: usize) -> Self {
        let blocks = set
            .iter()
            .map(|b| {
                let width = match b {
                    Block::Price => PRICE_DIM,
                    Block::Bok | Block::Ps => keywords,
                    Block::Ct => categories,
                };
                (b, width)
            })
            .collect();
        Layout {
            blocks,
            keywords,
            categories,
        }
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|&(_, w)| w).sum()
    }

    pub fn block_set(&self) -> BlockSet {
        let mut s = BlockSet::default();
        for &(b, _) in &self.blocks {
            s.insert(b);
        }
        s
    }

    /// Column range of `block`, if present.
    pub fn range(&self, block: Block) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for &(b, w) in &self.blocks {
            if b == block {
                return Some(start..start + w);
            }
            start += w;
        }
        None
    }

    /// The layout restricted to `set`, with the source columns to copy.
    pub fn select(&self, set: BlockSet) -> Result<(Layout, Vec<std::ops::Range<usize>>)> {
        let mut ranges = Vec::new();
        for b in set.iter() {
            ranges.push(self.range(b).ok_or_else(|| {
                Error::Invalid(format!("feature block `{}` is not present in layout {self}", b.name()))
            })?);
        }
        Ok((Layout::new(set, self.keywords, self.categories), ranges))
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.blocks.iter().map(|(b, w)| format!("{}:{w}", b.name())).collect();
        write!(
            f,
            "{} keywords={} categories={}",
            parts.join(","),
            self.keywords,
            self.categories
        )
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("bad layout descriptor `{s}`"));
        let mut fields = s.split_whitespace();
        let blocks_part = fields.next().ok_or_else(bad)?;
        let mut keywords = None;
        let mut categories = None;
        for f in fields {
            match f.split_once('=') {
                Some(("keywords", v)) => keywords = Some(v.parse().map_err(|_| bad())?),
                Some(("categories", v)) => categories = Some(v.parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        let mut blocks = Vec::new();
        if !blocks_part.is_empty() {
            for p in blocks_part.split(',') {
                let (name, width) = p.split_once(':').ok_or_else(bad)?;
                blocks.push((name.parse()?, width.parse().map_err(|_| bad())?));
            }
        }
        let layout = Layout {
            blocks,
            keywords: keywords.ok_or_else(bad)?,
            categories: categories.ok_or_else(bad)?,
        };
        if layout != Layout::new(layout.block_set(), layout.keywords, layout.categories) {
            return Err(bad());
        }
        Ok(layout)
    }
}

/// Five z-normalized closes, their first and second differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceFeature {
    pub p: [f64; PRICE_WINDOW],
    pub dp: [f64; PRICE_WINDOW - 1],
    pub ddp: [f64; PRICE_WINDOW - 2],
}

impl PriceFeature {
    pub fn to_vec(&self) -> Vec<f64> {
        self.p.iter().chain(&self.dp).chain(&self.ddp).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SkipReason {
    InsufficientHistory,
    Unnormalizable,
    NoPrices,
    Unlabeled,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipReason::InsufficientHistory => "insufficient history",
            SkipReason::Unnormalizable => "unnormalizable ticker",
            SkipReason::NoPrices => "no price series",
            SkipReason::Unlabeled => "unlabeled",
        })
    }
}

/// Price block for target date `target` from the five trading closes strictly
/// before it. Differences are taken on the normalized values.
pub fn price_features(
    series: &PriceSeries,
    stats: NormStats,
    target: NaiveDate,
) -> std::result::Result<PriceFeature, SkipReason> {
    if stats.std.is_nan() || stats.std <= 0.0 {
        return Err(SkipReason::Unnormalizable);
    }
    let closes = series
        .closes_before(target, PRICE_WINDOW)
        .ok_or(SkipReason::InsufficientHistory)?;
    let mut p = [0.0; PRICE_WINDOW];
    for (dst, c) in p.iter_mut().zip(&closes) {
        *dst = stats.apply(*c);
    }
    let mut dp = [0.0; PRICE_WINDOW - 1];
    for i in 0..dp.len() {
        dp[i] = p[i + 1] - p[i];
    }
    let mut ddp = [0.0; PRICE_WINDOW - 2];
    for i in 0..ddp.len() {
        ddp[i] = dp[i + 1] - dp[i];
    }
    Ok(PriceFeature { p, dp, ddp })
}

/// Decides whether the target stock is the grammatical subject of a keyword
/// occurrence.
pub trait SubjectDetector: Send + Sync {
    fn is_subject(&self, sentence: &Sentence, target: &str, keyword_offset: usize) -> bool;
}

/// The target is the subject iff the closest stock mention to the left of the
/// keyword belongs to it.
#[derive(Debug, Clone, Copy, Default)]
pub struct NearestLeftMention;

impl SubjectDetector for NearestLeftMention {
    fn is_subject(&self, sentence: &Sentence, target: &str, keyword_offset: usize) -> bool {
        sentence
            .mentions
            .iter()
            .filter(|m| m.offset < keyword_offset)
            .max_by_key(|m| m.offset)
            .is_some_and(|m| m.ticker == target)
    }
}

pub fn bok_features(sample: &Sample, lexicon: &KeywordLexicon) -> Vec<f64> {
    let mut tf = vec![0u64; lexicon.len()];
    for s in &sample.sentences {
        for tok in tokenize_with_offsets(&s.text) {
            if let Some(i) = lexicon.position(&tok.text) {
                tf[i] += 1;
            }
        }
    }
    tf.iter()
        .zip(lexicon.entries())
        .map(|(&n, e)| if n == 0 { 0.0 } else { n as f64 * e.idf })
        .collect()
}

/// Signed polarity block: each keyword occurrence contributes `+PS` when the
/// sample's ticker is its subject and `−PS` otherwise, scaled by idf.
pub fn ps_features(sample: &Sample, lexicon: &KeywordLexicon, detector: &dyn SubjectDetector) -> Vec<f64> {
    let mut signed = vec![0i64; lexicon.len()];
    for s in &sample.sentences {
        for tok in tokenize_with_offsets(&s.text) {
            if let Some(i) = lexicon.position(&tok.text) {
                signed[i] += if detector.is_subject(s, &sample.ticker, tok.offset) {
                    1
                } else {
                    -1
                };
            }
        }
    }
    signed
        .iter()
        .zip(lexicon.entries())
        .map(|(&n, e)| if n == 0 { 0.0 } else { n as f64 * e.idf * e.ps })
        .collect()
}

/// `ln(1 + N_c)` per category, `N_c` counting every token belonging to category c.
pub fn ct_features(sample: &Sample, categories: &CategoryLexicon) -> Vec<f64> {
    let mut counts = vec![0u64; categories.len()];
    for s in &sample.sentences {
        for tok in tokenize_with_offsets(&s.text) {
            for &c in categories.categories_of(&tok.text) {
                counts[c] += 1;
            }
        }
    }
    counts.iter().map(|&n| (n as f64).ln_1p()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

/// Computed blocks handed to [`assemble`].
#[derive(Debug, Clone, Default)]
pub struct BlockParts {
    pub price: Option<Vec<f64>>,
    pub bok: Option<Vec<f64>>,
    pub ps: Option<Vec<f64>>,
    pub ct: Option<Vec<f64>>,
}

/// Concatenates the enabled blocks in canonical order (price, BoK, PS, CT).
pub fn assemble(blocks: BlockSet, parts: &BlockParts, keywords: usize, categories: usize) -> Result<FeatureVector> {
    let layout = Layout::new(blocks, keywords, categories);
    let mut values = Vec::with_capacity(layout.dim());
    for &(b, width) in &layout.blocks {
        let part = match b {
            Block::Price => &parts.price,
            Block::Bok => &parts.bok,
            Block::Ps => &parts.ps,
            Block::Ct => &parts.ct,
        }
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("feature block `{}` enabled but not computed", b.name())))?;
        if part.len() != width {
            return Err(Error::Dimension {
                expected: width,
                got: part.len(),
            });
        }
        values.extend_from_slice(part);
    }
    Ok(FeatureVector { values, layout })
}

/// Everything needed to turn samples into feature vectors.
pub struct FeatureExtractor<'a> {
    pub prices: &'a PriceTable,
    pub keywords: Option<&'a KeywordLexicon>,
    pub categories: Option<&'a CategoryLexicon>,
    pub detector: &'a dyn SubjectDetector,
}

impl FeatureExtractor<'_> {
    pub fn layout(&self, blocks: BlockSet) -> Layout {
        Layout::new(
            blocks,
            self.keywords.map_or(0, KeywordLexicon::len),
            self.categories.map_or(0, CategoryLexicon::len),
        )
    }

    /// Features of a labeled sample. The price block looks at the five
    /// trading closes before the date whose close the label is about.
    pub fn extract(&self, sample: &Sample, blocks: BlockSet) -> Result<std::result::Result<FeatureVector, SkipReason>> {
        if sample.label.is_none() {
            return Ok(Err(SkipReason::Unlabeled));
        }
        let mut parts = BlockParts::default();
        if blocks.price {
            let Some(series) = self.prices.get(&sample.ticker) else {
                return Ok(Err(SkipReason::NoPrices));
            };
            let Some(stats) = self.prices.stats(&sample.ticker) else {
                return Ok(Err(SkipReason::Unnormalizable));
            };
            let Some((target, _)) = series.next_after(sample.date) else {
                return Ok(Err(SkipReason::NoPrices));
            };
            match price_features(series, stats, target) {
                Ok(p) => parts.price = Some(p.to_vec()),
                Err(reason) => return Ok(Err(reason)),
            }
        }
        let missing =
            |name: &str| Error::Invalid(format!("feature block `{name}` requested but its lexicon is absent"));
        if blocks.bok {
            parts.bok = Some(bok_features(sample, self.keywords.ok_or_else(|| missing("bok"))?));
        }
        if blocks.ps {
            parts.ps = Some(ps_features(
                sample,
                self.keywords.ok_or_else(|| missing("ps"))?,
                self.detector,
            ));
        }
        if blocks.ct {
            parts.ct = Some(ct_features(sample, self.categories.ok_or_else(|| missing("ct"))?));
        }
        let layout = self.layout(blocks);
        assemble(blocks, &parts, layout.keywords, layout.categories).map(Ok)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub label: Label,
    pub ticker: String,
    pub date: NaiveDate,
    pub values: Vec<f64>,
}

/// Feature rows sharing one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub layout: Layout,
    pub rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn new(layout: Layout) -> Self {
        FeatureMatrix {
            layout,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: Label, ticker: String, date: NaiveDate, v: FeatureVector) -> Result<()> {
        if v.layout != self.layout {
            return Err(Error::Layout {
                expected: self.layout.to_string(),
                got: v.layout.to_string(),
            });
        }
        self.rows.push(FeatureRow {
            label,
            ticker,
            date,
            values: v.values,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Column subset for the blocks in `set`.
    pub fn project(&self, set: BlockSet) -> Result<FeatureMatrix> {
        let (layout, ranges) = self.layout.select(set)?;
        let rows = self
            .rows
            .iter()
            .map(|r| FeatureRow {
                values: ranges
                    .iter()
                    .flat_map(|rg| r.values[rg.clone()].iter().copied())
                    .collect(),
                ..r.clone()
            })
            .collect();
        Ok(FeatureMatrix { layout, rows })
    }

    pub fn filter<F: Fn(&FeatureRow) -> bool>(&self, keep: F) -> FeatureMatrix {
        FeatureMatrix {
            layout: self.layout.clone(),
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// CSV with a `# layout=` comment line, a column header, then
    /// `label,ticker,date,f0..` rows. Values use shortest round-trip formatting.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "# layout={}", self.layout).map_err(io)?;
        write!(w, "label,ticker,date").map_err(io)?;
        for i in 0..self.layout.dim() {
            write!(w, ",f{i}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        for r in &self.rows {
            write!(w, "{},{},{}", r.label.as_str(), r.ticker, r.date).map_err(io)?;
            for v in &r.values {
                if *v == 0.0 {
                    w.write_all(b",0").map_err(io)?;
                } else {
                    write!(w, ",{v}").map_err(io)?;
                }
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let mut next_line = || lines.next().transpose().map_err(|e| Error::io(path, e));
        let first = next_line()?.ok_or_else(|| Error::parse(path, 1, "empty feature file"))?;
        let layout: Layout = first
            .strip_prefix("# layout=")
            .ok_or_else(|| Error::parse(path, 1, "missing `# layout=` header"))?
            .parse()
            .map_err(|e: Error| Error::parse(path, 1, e.to_string()))?;
        next_line()?.ok_or_else(|| Error::parse(path, 2, "missing column header"))?;
        let dim = layout.dim();
        let mut rows = Vec::new();
        let mut line_no = 2;
        while let Some(line) = next_line()? {
            line_no += 1;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let mut field = |name: &str| {
                fields
                    .next()
                    .ok_or_else(|| Error::parse(path, line_no, format!("missing {name}")))
            };
            let label: Label = field("label")?
                .parse()
                .map_err(|e: Error| Error::parse(path, line_no, e.to_string()))?;
            let ticker = field("ticker")?.to_string();
            let date = parse_date(field("date")?).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
            let values: Vec<f64> = fields
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
            if values.len() != dim {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("row has {} features, layout declares {dim}", values.len()),
                ));
            }
            rows.push(FeatureRow {
                label,
                ticker,
                date,
                values,
            });
        }
        Ok(FeatureMatrix { layout, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{Category, CategoryWord, KeywordEntry};
    use crate::sampling::{tag_mentions, AliasTable};
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    fn series(closes: &[f64]) -> PriceSeries {
        let start = d("2013-01-01");
        PriceSeries::new(
            "AAA",
            closes
                .iter()
                .enumerate()
                .map(|(i, &c)| (start + chrono::Duration::days(i as i64), c))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn price_block_hand_example() {
        let s = series(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let stats = NormStats {
            mean: 3.0,
            std: 2f64.sqrt(),
        };
        let f = price_features(&s, stats, d("2013-01-06")).unwrap();
        let r = 1.0 / 2f64.sqrt();
        let want_p = [-2.0 * r, -r, 0.0, r, 2.0 * r];
        for (a, b) in f.p.iter().zip(want_p) {
            assert!((a - b).abs() < 1e-12);
        }
        for v in f.dp {
            assert!((v - r).abs() < 1e-12);
        }
        for v in f.ddp {
            assert!(v.abs() < 1e-12);
        }
        assert_eq!(f.to_vec().len(), PRICE_DIM);
    }

    #[test]
    fn constant_closes_have_zero_differences() {
        let s = series(&[7.0; 5]);
        let f = price_features(&s, NormStats { mean: 5.0, std: 2.0 }, d("2013-01-09")).unwrap();
        assert_eq!(f.dp, [0.0; 4]);
        assert_eq!(f.ddp, [0.0; 3]);
        assert_eq!(f.p, [1.0; 5]);
    }

    #[test]
    fn four_prior_closes_is_insufficient() {
        let s = series(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let r = price_features(&s, NormStats { mean: 3.0, std: 1.0 }, d("2013-01-05"));
        assert_eq!(r.unwrap_err(), SkipReason::InsufficientHistory);
        assert_eq!(SkipReason::InsufficientHistory.to_string(), "insufficient history");
    }

    proptest! {
        #[test]
        fn price_block_affine_invariant(
            closes in prop::collection::vec(1.0f64..100.0, 6),
            a in 0.1f64..10.0,
            b in -50.0f64..50.0,
        ) {
            let stats = NormStats::from_values(&closes).unwrap();
            let f1 = price_features(&series(&closes), stats, d("2013-01-06")).unwrap();
            let moved: Vec<f64> = closes.iter().map(|c| a * c + b + 200.0).collect();
            let stats2 = NormStats { mean: a * stats.mean + b + 200.0, std: a * stats.std };
            let f2 = price_features(&series(&moved), stats2, d("2013-01-06")).unwrap();
            for (x, y) in f1.to_vec().iter().zip(f2.to_vec()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    fn aliases() -> AliasTable {
        AliasTable::new([
            ("Apple", "AAPL"),
            ("Samsung", "SSNLF"),
            ("Microsoft", "MSFT"),
            ("X", "X"),
        ])
    }

    fn sentence(text: &str) -> Sentence {
        Sentence {
            text: text.into(),
            article_date: d("2013-01-02"),
            mentions: tag_mentions(text, &aliases()),
        }
    }

    const APPLE: &str =
        "Apple slipped behind Samsung and Microsoft in a 2013 customer experience survey from Forrester Research";

    #[test]
    fn subject_heuristic_worked_example() {
        let s = sentence(APPLE);
        let kw = APPLE.find("slipped").unwrap();
        let det = NearestLeftMention;
        assert!(det.is_subject(&s, "AAPL", kw));
        assert!(!det.is_subject(&s, "SSNLF", kw));
        assert!(!det.is_subject(&s, "MSFT", kw));
        let s = sentence("X rose");
        assert!(det.is_subject(&s, "X", 2));
    }

    fn lexicon() -> KeywordLexicon {
        KeywordLexicon::new(vec![
            KeywordEntry {
                word: "surge".into(),
                seed: true,
                similarity: 1.0,
                df: 1,
                idf: 2f64.ln(),
                ps: 0.7,
            },
            KeywordEntry {
                word: "slipped".into(),
                seed: false,
                similarity: 0.8,
                df: 1,
                idf: 1.5,
                ps: -0.9,
            },
        ])
        .unwrap()
    }

    fn sample(ticker: &str, texts: &[&str]) -> Sample {
        Sample {
            ticker: ticker.into(),
            date: d("2013-01-02"),
            sentences: texts.iter().map(|t| sentence(t)).collect(),
            label: Some(Label::Up),
        }
    }

    #[test]
    fn bok_counts_times_idf() {
        let s = sample("AAPL", &["Apple surge, surge", "Apple surge again"]);
        let v = bok_features(&s, &lexicon());
        assert!((v[0] - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
        assert_eq!(
            bok_features(&sample("AAPL", &["Apple quiet"]), &lexicon()),
            vec![0.0, 0.0]
        );
        let doubled = sample(
            "AAPL",
            &["Apple surge, surge", "Apple surge again", "Apple surge again"],
        );
        assert!((bok_features(&doubled, &lexicon())[0] - 4.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ps_signs() {
        let lex = lexicon();
        let det = NearestLeftMention;
        let s = sample("AAPL", &[APPLE]);
        assert!((ps_features(&s, &lex, &det)[1] - 1.5 * -0.9).abs() < 1e-12);
        let s = sample("SSNLF", &[APPLE]);
        assert!((ps_features(&s, &lex, &det)[1] - -1.5 * -0.9).abs() < 1e-12);
        let s = sample("SSNLF", &["Samsung slipped", "Apple slipped behind Samsung"]);
        assert_eq!(ps_features(&s, &lex, &det)[1], 0.0);

        // all-subject: ps = bok * PS
        let s = sample("AAPL", &["Apple surge surge", "Apple slipped"]);
        let (b, p) = (bok_features(&s, &lex), ps_features(&s, &lex, &det));
        for (i, e) in lex.entries().iter().enumerate() {
            assert!((p[i] - b[i] * e.ps).abs() < 1e-12);
        }
    }

    fn categories() -> CategoryLexicon {
        let cat = |name: &str, words: &[&str]| Category {
            name: name.into(),
            words: words
                .iter()
                .map(|w| CategoryWord {
                    word: w.to_string(),
                    seed: true,
                    similarity: 1.0,
                })
                .collect(),
        };
        CategoryLexicon::new(vec![
            cat("acquisition", &["merger", "deal"]),
            cat("investment", &["deal", "stake"]),
        ])
    }

    #[test]
    fn ct_log_counts() {
        let cats = categories();
        assert_eq!(ct_features(&sample("AAPL", &["Apple quiet"]), &cats), vec![0.0, 0.0]);
        let nine = "Apple merger merger merger merger merger merger merger merger merger";
        let v = ct_features(&sample("AAPL", &[nine]), &cats);
        assert!((v[0] - 10f64.ln()).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
        let v = ct_features(&sample("AAPL", &["Apple deal"]), &cats);
        assert_eq!(v, vec![2f64.ln(), 2f64.ln()]);
    }

    #[test]
    fn assemble_dimensions() {
        let parts = BlockParts {
            price: Some(vec![0.0; 12]),
            bok: Some(vec![0.0; 1000]),
            ps: Some(vec![0.0; 1000]),
            ct: Some(vec![0.0; 10]),
        };
        let price_only: BlockSet = "price".parse().unwrap();
        assert_eq!(assemble(price_only, &parts, 1000, 10).unwrap().values.len(), 12);
        let all = assemble(BlockSet::all(), &parts, 1000, 10).unwrap();
        assert_eq!(all.values.len(), 2022);
        assert_eq!(all.layout.dim(), 2022);
        let missing = BlockParts {
            price: Some(vec![0.0; 12]),
            ..Default::default()
        };
        assert!(assemble("price+bok".parse().unwrap(), &missing, 1000, 10).is_err());
    }

    #[test]
    fn extractor_without_lexicon_errors_for_bok() {
        let prices = PriceTable::new(
            vec![series(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])],
            crate::ingest::DateRange::all(),
        )
        .unwrap();
        let ex = FeatureExtractor {
            prices: &prices,
            keywords: None,
            categories: None,
            detector: &NearestLeftMention,
        };
        let mut s = sample("AAA", &["AAA news"]);
        s.date = d("2013-01-06");
        assert!(ex.extract(&s, "price+bok".parse().unwrap()).is_err());
        let v = ex.extract(&s, "price".parse().unwrap()).unwrap().unwrap();
        assert_eq!(v.values.len(), 12);
        s.date = d("2013-01-03");
        assert_eq!(
            ex.extract(&s, "price".parse().unwrap()).unwrap().unwrap_err(),
            SkipReason::InsufficientHistory
        );
    }

    #[test]
    fn layout_text_round_trip_and_select() {
        let l = Layout::new(BlockSet::all(), 1000, 10);
        assert_eq!(
            l.to_string(),
            "price:12,bok:1000,ps:1000,ct:10 keywords=1000 categories=10"
        );
        assert_eq!(l.to_string().parse::<Layout>().unwrap(), l);
        let (sub, ranges) = l.select("price+ct".parse().unwrap()).unwrap();
        assert_eq!(sub.dim(), 22);
        assert_eq!(ranges, vec![0..12, 2012..2022]);
        assert_eq!(BlockSet::ablation_defaults().len(), 8);
        assert_eq!(BlockSet::ablation_defaults()[7], BlockSet::all());
    }

    #[test]
    fn matrix_file_round_trip() {
        let layout = Layout::new("price+ct".parse().unwrap(), 3, 2);
        let mut m = FeatureMatrix::new(layout.clone());
        let v = FeatureVector {
            values: (0..14).map(|i| i as f64 * 0.1 - 0.3).collect(),
            layout: layout.clone(),
        };
        m.push(Label::Down, "AAA".into(), d("2013-02-01"), v).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        m.write(f.path()).unwrap();
        assert_eq!(FeatureMatrix::load(f.path()).unwrap(), m);
        let wrong = FeatureVector {
            values: vec![0.0; 12],
            layout: Layout::new("price".parse().unwrap(), 3, 2),
        };
        assert!(m.push(Label::Up, "B".into(), d("2013-02-01"), wrong).is_err());
    }

    proptest! {
        #[test]
        fn bok_additive_over_sentence_multisets(a in 0usize..4, b in 0usize..4, c in 0usize..4) {
            let texts = ["Apple surge", "Apple slipped surge", "Apple flat"];
            let mk = |n: usize, off: usize| -> Vec<&str> { (0..n).map(|i| texts[(i + off) % 3]).collect() };
            let left = mk(a, 0);
            let right = mk(b + c, 1);
            let both: Vec<&str> = left.iter().chain(&right).copied().collect();
            let lex = lexicon();
            let fa = bok_features(&sample("AAPL", &left), &lex);
            let fb = bok_features(&sample("AAPL", &right), &lex);
            let fab = bok_features(&sample("AAPL", &both), &lex);
            for i in 0..lex.len() {
                prop_assert!((fab[i] - (fa[i] + fb[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn ct_monotone_in_counts(n in 0usize..30) {
            let cats = categories();
            let t1 = format!("Apple {}", "merger ".repeat(n));
            let t2 = format!("Apple {}", "merger ".repeat(n + 1));
            let v1 = ct_features(&sample("AAPL", &[t1.as_str()]), &cats);
            let v2 = ct_features(&sample("AAPL", &[t2.as_str()]), &cats);
            prop_assert!(v2[0] >= v1[0]);
        }
    }
}
