//! Deterministic synthetic fixture: clustered price series whose direction is
//! a fair coin (so price history carries no signal) and templated news whose
//! keywords announce the realized next-day move.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{parse_date, Article};
use crate::lexicon::CategorySeeds;

pub const POSITIVE_KEYWORDS: [&str; 8] = ["surge", "rise", "jump", "gain", "rebound", "climb", "soar", "rally"];
pub const NEGATIVE_KEYWORDS: [&str; 10] = [
    "shrink", "drop", "fall", "plunge", "slump", "decline", "tumble", "slip", "sink", "slide",
];

const NAME_SUFFIXES: [&str; 6] = ["Holdings", "Systems", "Group", "Labs", "Energy", "Networks"];
const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub tickers: usize,
    pub trading_days: usize,
    pub start: String,
    pub samples: usize,
    /// Sizes of the groups of tickers sharing a price driver; the remaining
    /// tickers get a driver each.
    pub clusters: Vec<usize>,
    /// Weight of the shared driver in a clustered ticker's log price.
    pub common_weight: f64,
    /// Probability that a keyword sentence carries the opposite polarity.
    pub noise: f64,
    /// Share of samples that also get a comparative sentence naming a ticker
    /// that moved the other way.
    pub comparative_rate: f64,
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let mut clusters = vec![3; 10];
        clusters.extend([2; 5]);
        SynthConfig {
            tickers: 50,
            trading_days: 780,
            start: "2012-01-02".into(),
            samples: 5000,
            clusters,
            common_weight: 1.0,
            noise: 0.1,
            comparative_rate: 0.3,
            filler_words: 1400,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        parse_date(&self.start)?;
        if self.tickers < 2 || self.trading_days < 10 {
            return bad("need at least 2 tickers and 10 trading days".into());
        }
        if self.clusters.iter().sum::<usize>() > self.tickers || self.clusters.contains(&0) {
            return bad(format!(
                "cluster sizes {:?} do not fit {} tickers",
                self.clusters, self.tickers
            ));
        }
        for (name, p) in [
            ("noise", self.noise),
            ("common_weight", self.common_weight),
            ("comparative_rate", self.comparative_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTicker {
    pub symbol: String,
    pub name: String,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFixture {
    pub tickers: Vec<SynthTicker>,
    pub dates: Vec<NaiveDate>,
    /// `closes[t][d]`, rounded to 1e-4.
    pub closes: Vec<Vec<f64>>,
    pub articles: Vec<Article>,
}

impl SynthFixture {
    pub fn prices_csv(&self) -> String {
        let mut s = String::from("date,ticker,close\n");
        for (d, date) in self.dates.iter().enumerate() {
            for (t, tk) in self.tickers.iter().enumerate() {
                let _ = writeln!(s, "{date},{},{}", tk.symbol, self.closes[t][d]);
            }
        }
        s
    }

    pub fn aliases_csv(&self) -> String {
        let mut s = String::from("alias,ticker\n");
        for t in &self.tickers {
            let _ = writeln!(s, "{},{}", t.symbol, t.symbol);
            let _ = writeln!(s, "{},{}", t.name, t.symbol);
        }
        s
    }

    /// Writes `articles.jsonl`, `prices.csv` and `aliases.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::ingest::write_articles(&dir.join("articles.jsonl"), &self.articles)?;
        for (file, text) in [("prices.csv", self.prices_csv()), ("aliases.csv", self.aliases_csv())] {
            let p = dir.join(file);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn trading_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
    }
    w
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_ascii_uppercase().to_string() + c.as_str())
        .unwrap_or_default()
}

/// Sign-coin walk whose step size shrinks when moving away from zero and
/// grows when moving back, which keeps the level stationary.
fn driver(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    const SIGMA: f64 = 0.02;
    const THETA: f64 = 0.2;
    let mut level = vec![0.0; n];
    for d in 1..n {
        let s: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let m = SIGMA * (1.0 - s * level[d - 1] * THETA / SIGMA).clamp(0.5, 1.5);
        level[d] = level[d - 1] + s * m;
    }
    level
}

/// Builds the fixture. Same config, same output.
pub fn generate(config: &SynthConfig) -> Result<SynthFixture> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dates = trading_days(parse_date(&config.start)?, config.trading_days);
    let n_days = dates.len();

    let mut reserved: HashSet<String> = POSITIVE_KEYWORDS
        .iter()
        .chain(&NEGATIVE_KEYWORDS)
        .map(|s| s.to_string())
        .collect();
    let category_words: Vec<String> = CategorySeeds::default().0.into_iter().flat_map(|(_, w)| w).collect();
    reserved.extend(category_words.iter().cloned());

    let mut tickers = Vec::with_capacity(config.tickers);
    let mut symbols = HashSet::new();
    let mut cluster_of = Vec::new();
    for (c, &size) in config.clusters.iter().enumerate() {
        cluster_of.extend(std::iter::repeat_n(c, size));
    }
    let n_clusters = config.clusters.len() + (config.tickers - cluster_of.len());
    while cluster_of.len() < config.tickers {
        cluster_of.push(config.clusters.len() + cluster_of.len() - config.clusters.iter().sum::<usize>());
    }
    for &cluster in cluster_of.iter() {
        let symbol = loop {
            let s: String = (0..rng.gen_range(3..=4))
                .map(|_| rng.gen_range(b'A'..=b'Z') as char)
                .collect();
            if symbols.insert(s.clone()) {
                break s;
            }
        };
        let stem = loop {
            let w = pseudo_word(&mut rng, 3);
            if reserved.insert(w.clone()) {
                break w;
            }
        };
        let name = format!(
            "{} {}",
            capitalize(&stem),
            NAME_SUFFIXES[rng.gen_range(0..NAME_SUFFIXES.len())]
        );
        tickers.push(SynthTicker { symbol, name, cluster });
    }
    reserved.extend(NAME_SUFFIXES.iter().map(|s| s.to_lowercase()));

    let drivers: Vec<Vec<f64>> = (0..n_clusters).map(|_| driver(&mut rng, n_days)).collect();
    let mut closes = Vec::with_capacity(tickers.len());
    for t in &tickers {
        let own = driver(&mut rng, n_days);
        let base: f64 = rng.gen_range(10.0..200.0);
        let shared = &drivers[t.cluster];
        let w = if config.clusters.len() > t.cluster {
            config.common_weight
        } else {
            1.0
        };
        let series: Vec<f64> = (0..n_days)
            .map(|d| {
                // i.i.d. idiosyncratic term, an order of magnitude below the smallest driver step
                let idio = rng.gen_range(-0.0005..0.0005);
                let log_p = base.ln() + w * shared[d] + (1.0 - w) * own[d] + idio;
                (log_p.exp() * 1e4).round() / 1e4
            })
            .collect();
        closes.push(series);
    }

    let mut fillers = Vec::with_capacity(config.filler_words);
    while fillers.len() < config.filler_words {
        let syllables = rng.gen_range(2..=3);
        let w = pseudo_word(&mut rng, syllables);
        if reserved.insert(w.clone()) {
            fillers.push(w);
        }
    }

    // direction[t][d]: sign of the move from day d to day d + 1
    let direction: Vec<Vec<i8>> = closes
        .iter()
        .map(|c| {
            (0..n_days)
                .map(|d| {
                    if d + 1 < n_days {
                        (c[d + 1] - c[d]).signum() as i8
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();

    // `samples` budgets distinct (date, ticker) pairs, including tickers that
    // only appear as the other party of a comparative sentence.
    let per_day = config.samples as f64 / (n_days - 1).max(1) as f64;
    let mut articles = Vec::new();
    let mut sample_count = 0usize;
    let mut order: Vec<usize> = (0..tickers.len()).collect();
    for d in 0..n_days - 1 {
        let target = ((d + 1) as f64 * per_day).round() as usize;
        let today = target.saturating_sub(sample_count).min(tickers.len());
        let mut covered = vec![false; tickers.len()];
        let mut count = 0usize;
        order.shuffle(&mut rng);
        for (k, &t) in order.iter().enumerate() {
            if count >= today {
                break;
            }
            let dir = direction[t][d];
            if dir == 0 {
                continue;
            }
            if !covered[t] {
                covered[t] = true;
                count += 1;
            }
            let fill = |rng: &mut ChaCha8Rng, n: usize| -> String {
                (0..n)
                    .map(|_| fillers[rng.gen_range(0..fillers.len())].as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let keyword = |rng: &mut ChaCha8Rng, dir: i8| -> &'static str {
                let flip = rng.gen_bool(config.noise);
                let up = (dir > 0) != flip;
                if up {
                    POSITIVE_KEYWORDS[rng.gen_range(0..POSITIVE_KEYWORDS.len())]
                } else {
                    NEGATIVE_KEYWORDS[rng.gen_range(0..NEGATIVE_KEYWORDS.len())]
                }
            };
            let tk = &tickers[t];
            let mut sentences = Vec::new();
            for _ in 0..rng.gen_range(2..=3) {
                let mention = if rng.gen_bool(0.7) {
                    tk.name.clone()
                } else {
                    tk.symbol.clone()
                };
                let kw = keyword(&mut rng, dir);
                let n = rng.gen_range(2..=5);
                sentences.push(format!("{mention} shares {kw} {}.", fill(&mut rng, n)));
            }
            if rng.gen_bool(config.comparative_rate) {
                let others: Vec<usize> = (0..tickers.len())
                    .filter(|&u| tickers[u].cluster != tk.cluster && direction[u][d] == -dir)
                    .filter(|&u| covered[u] || count < today)
                    .collect();
                if let Some(&u) = others.choose(&mut rng) {
                    if !covered[u] {
                        covered[u] = true;
                        count += 1;
                    }
                    let kw = keyword(&mut rng, -dir);
                    let n = rng.gen_range(1..=3);
                    sentences.push(format!(
                        "{} {kw} ahead of {} {}.",
                        tickers[u].name,
                        tk.name,
                        fill(&mut rng, n)
                    ));
                }
            }
            if rng.gen_bool(0.6) {
                let cat = &category_words[rng.gen_range(0..category_words.len())];
                let n = rng.gen_range(2..=4);
                sentences.push(format!("{} {cat} {}.", tk.name, fill(&mut rng, n)));
            }
            sentences.shuffle(&mut rng);
            let n = rng.gen_range(1..=3);
            articles.push(Article {
                id: format!("{}-{}-{k}", dates[d].format("%Y%m%d"), tk.symbol),
                date: dates[d],
                title: format!("{} {}", tk.name, fill(&mut rng, n)),
                body: sentences.join(" "),
                source: "synthetic".into(),
            });
        }
        sample_count += count;
    }

    Ok(SynthFixture {
        tickers,
        dates,
        closes,
        articles,
    })
}

/// Generates the fixture and writes its three input files into `dir`.
pub fn generate_synthetic_fixture(config: &SynthConfig, dir: &Path) -> Result<SynthFixture> {
    let fixture = generate(config)?;
    fixture.write(dir)?;
    Ok(fixture)
}
