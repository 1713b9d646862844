//! Loading of news articles and daily closing prices.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive calendar date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        DateRange { start, end }
    }

    /// Everything up to and including `end`.
    pub fn until(end: NaiveDate) -> Self {
        DateRange {
            start: NaiveDate::MIN,
            end,
        }
    }

    pub fn all() -> Self {
        DateRange {
            start: NaiveDate::MIN,
            end: NaiveDate::MAX,
        }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn is_empty(&self) -> bool {
        self.start > self.end
    }
}

impl std::fmt::Display for DateRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let show = |d: NaiveDate| {
            if d == NaiveDate::MIN || d == NaiveDate::MAX {
                "*".to_string()
            } else {
                d.to_string()
            }
        };
        write!(f, "{}..{}", show(self.start), show(self.end))
    }
}

impl std::str::FromStr for DateRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| Error::Invalid(format!("bad date range `{s}`")))?;
        let parse = |x: &str, open: NaiveDate| -> Result<NaiveDate> {
            if x == "*" {
                Ok(open)
            } else {
                parse_date(x)
            }
        };
        Ok(DateRange::new(parse(a, NaiveDate::MIN)?, parse(b, NaiveDate::MAX)?))
    }
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| Error::Validation(format!("invalid date `{s}`: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub date: NaiveDate,
    pub title: String,
    pub body: String,
    pub source: String,
}

#[derive(Deserialize)]
struct RawArticle {
    id: String,
    date: String,
    title: String,
    #[serde(default)]
    body: String,
    #[serde(default)]
    source: String,
}

/// Streaming reader over a line-delimited article file. Blank lines are skipped.
pub struct ArticleReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

impl ArticleReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(ArticleReader {
            path: path.to_path_buf(),
            lines: BufReader::new(file).lines(),
            line_no: 0,
        })
    }

    fn parse_line(&self, line: &str) -> Result<Article> {
        let raw: RawArticle =
            serde_json::from_str(line).map_err(|e| Error::parse(&self.path, self.line_no, e.to_string()))?;
        let date = parse_date(&raw.date).map_err(|_| {
            Error::Validation(format!(
                "{}:{}: invalid date `{}`",
                self.path.display(),
                self.line_no,
                raw.date
            ))
        })?;
        if raw.title.trim().is_empty() {
            return Err(Error::Validation(format!(
                "{}:{}: article `{}` has an empty title",
                self.path.display(),
                self.line_no,
                raw.id
            )));
        }
        Ok(Article {
            id: raw.id,
            date,
            title: raw.title,
            body: raw.body,
            source: raw.source,
        })
    }
}

impl Iterator for ArticleReader {
    type Item = Result<Article>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse_line(&line));
        }
    }
}

pub fn load_articles(path: &Path) -> Result<Vec<Article>> {
    ArticleReader::open(path)?.collect()
}

pub fn write_articles(path: &Path, articles: &[Article]) -> Result<()> {
    let mut out = String::new();
    for a in articles {
        let line = serde_json::json!({
            "id": a.id,
            "date": a.date.to_string(),
            "title": a.title,
            "body": a.body,
            "source": a.source,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Date-ordered closing prices of one ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub ticker: String,
    observations: Vec<(NaiveDate, f64)>,
}

impl PriceSeries {
    /// Builds a series, sorting by date. Rejects duplicate dates and non-positive closes.
    pub fn new(ticker: impl Into<String>, mut observations: Vec<(NaiveDate, f64)>) -> Result<Self> {
        let ticker = ticker.into();
        observations.sort_by_key(|&(d, _)| d);
        for w in observations.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Validation(format!("duplicate price for {ticker} on {}", w[0].0)));
            }
        }
        if let Some(&(d, c)) = observations.iter().find(|&&(_, c)| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Validation(format!(
                "close for {ticker} on {d} must be positive, got {c}"
            )));
        }
        Ok(PriceSeries { ticker, observations })
    }

    pub fn observations(&self) -> &[(NaiveDate, f64)] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn close_on(&self, date: NaiveDate) -> Option<f64> {
        self.observations
            .binary_search_by_key(&date, |&(d, _)| d)
            .ok()
            .map(|i| self.observations[i].1)
    }

    /// Index of the last observation dated on or before `date`.
    pub fn index_on_or_before(&self, date: NaiveDate) -> Option<usize> {
        let n = self.observations.partition_point(|&(d, _)| d <= date);
        n.checked_sub(1)
    }

    /// First observation strictly after `date`.
    pub fn next_after(&self, date: NaiveDate) -> Option<(NaiveDate, f64)> {
        let n = self.observations.partition_point(|&(d, _)| d <= date);
        self.observations.get(n).copied()
    }

    /// The `count` closes immediately before `date` (exclusive), oldest first.
    pub fn closes_before(&self, date: NaiveDate, count: usize) -> Option<Vec<f64>> {
        let n = self.observations.partition_point(|&(d, _)| d < date);
        if n < count {
            return None;
        }
        Some(self.observations[n - count..n].iter().map(|&(_, c)| c).collect())
    }
}

/// Per-ticker normalization statistics from the training window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Population mean and standard deviation; `None` with fewer than two
    /// values or zero spread.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.len() < 2 {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        (std > 0.0).then_some(NormStats { mean, std })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    series: BTreeMap<String, PriceSeries>,
    stats: BTreeMap<String, NormStats>,
    training_window: DateRange,
}

impl PriceTable {
    pub fn new(series: Vec<PriceSeries>, training_window: DateRange) -> Result<Self> {
        if training_window.is_empty() {
            return Err(Error::Validation(format!("training window {training_window} is empty")));
        }
        let mut map = BTreeMap::new();
        let mut stats = BTreeMap::new();
        for s in series {
            let train: Vec<f64> = s
                .observations
                .iter()
                .filter(|(d, _)| training_window.contains(*d))
                .map(|&(_, c)| c)
                .collect();
            match NormStats::from_values(&train) {
                Some(st) => {
                    stats.insert(s.ticker.clone(), st);
                }
                None => log::warn!(
                    "{} has {} training closes without spread; excluded from price features",
                    s.ticker,
                    train.len()
                ),
            }
            if map.insert(s.ticker.clone(), s).is_some() {
                return Err(Error::Validation("duplicate ticker series".into()));
            }
        }
        Ok(PriceTable {
            series: map,
            stats,
            training_window,
        })
    }

    pub fn get(&self, ticker: &str) -> Option<&PriceSeries> {
        self.series.get(ticker)
    }

    pub fn stats(&self, ticker: &str) -> Option<NormStats> {
        self.stats.get(ticker).copied()
    }

    pub fn is_normalizable(&self, ticker: &str) -> bool {
        self.stats.contains_key(ticker)
    }

    /// Tickers in lexicographic order.
    pub fn tickers(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn series(&self) -> impl Iterator<Item = &PriceSeries> {
        self.series.values()
    }

    pub fn training_window(&self) -> DateRange {
        self.training_window
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }
}

#[derive(Deserialize)]
struct PriceRow {
    date: String,
    ticker: String,
    close: f64,
}

pub fn load_prices(path: &Path, training_window: DateRange) -> Result<PriceTable> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut by_ticker: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    let mut seen: HashSet<(NaiveDate, String)> = HashSet::new();
    for (i, row) in reader.deserialize::<PriceRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let date = parse_date(&row.date).map_err(|e| Error::Validation(format!("{}:{line}: {e}", path.display())))?;
        if !(row.close > 0.0 && row.close.is_finite()) {
            return Err(Error::Validation(format!(
                "{}:{line}: close for {} must be positive, got {}",
                path.display(),
                row.ticker,
                row.close
            )));
        }
        if !seen.insert((date, row.ticker.clone())) {
            return Err(Error::Validation(format!(
                "{}:{line}: duplicate row for ({date}, {})",
                path.display(),
                row.ticker
            )));
        }
        by_ticker.entry(row.ticker).or_default().push((date, row.close));
    }
    let series = by_ticker
        .into_iter()
        .map(|(t, obs)| PriceSeries::new(t, obs))
        .collect::<Result<Vec<_>>>()?;
    PriceTable::new(series, training_window)
}

/// Writes prices in date-major order, tickers lexicographic within a date.
pub fn write_prices(path: &Path, table: &PriceTable) -> Result<()> {
    let mut rows: Vec<(NaiveDate, &str, f64)> = table
        .series()
        .flat_map(|s| s.observations.iter().map(move |&(d, c)| (d, s.ticker.as_str(), c)))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    let mut f = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::from("date,ticker,close\n");
    for (d, t, c) in rows {
        body.push_str(&format!("{d},{t},{c}\n"));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Closes of `a` and `b` on the dates both have inside `window`, date-ordered.
pub fn align_series(a: &PriceSeries, b: &PriceSeries, window: DateRange) -> (Vec<f64>, Vec<f64>) {
    let (xs, ys) = (&a.observations, &b.observations);
    let (mut i, mut j) = (0, 0);
    let (mut out_a, mut out_b) = (Vec::new(), Vec::new());
    while i < xs.len() && j < ys.len() {
        let (da, db) = (xs[i].0, ys[j].0);
        match da.cmp(&db) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                if window.contains(da) {
                    out_a.push(xs[i].1);
                    out_b.push(ys[j].1);
                }
                i += 1;
                j += 1;
            }
        }
    }
    (out_a, out_b)
}

/// Dates present in both series inside `window`.
pub fn common_dates(a: &PriceSeries, b: &PriceSeries, window: DateRange) -> Vec<NaiveDate> {
    let bs: BTreeSet<NaiveDate> = b.observations.iter().map(|&(d, _)| d).collect();
    a.observations
        .iter()
        .map(|&(d, _)| d)
        .filter(|d| window.contains(*d) && bs.contains(d))
        .collect()
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_article_file_yields_nothing() {
        let f = write_tmp("");
        assert!(load_articles(f.path()).unwrap().is_empty());
    }

    #[test]
    fn articles_in_file_order() {
        let f = write_tmp(concat!(
            r#"{"id":"a1","date":"2013-01-02","title":"T1","body":"Apple rose.","source":"reuters"}"#,
            "\n\n",
            r#"{"id":"a2","date":"2013-01-03","title":"T2","body":"","source":"bloomberg"}"#,
            "\n"
        ));
        let arts = load_articles(f.path()).unwrap();
        assert_eq!(arts.len(), 2);
        assert_eq!(arts[0].id, "a1");
        assert_eq!(arts[1].date, d("2013-01-03"));
        assert!(arts[1].body.is_empty());
    }

    #[test]
    fn missing_date_is_parse_error_on_line_one() {
        let f = write_tmp(r#"{"id":"a1","title":"T","body":"x","source":"s"}"#);
        match load_articles(f.path()).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("date"), "{message}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn bad_date_and_empty_title_are_validation_errors() {
        let f = write_tmp(r#"{"id":"a1","date":"2013-02-30","title":"T","body":"x","source":"s"}"#);
        assert!(matches!(load_articles(f.path()), Err(Error::Validation(_))));
        let f = write_tmp(r#"{"id":"a1","date":"2013-02-03","title":" ","body":"x","source":"s"}"#);
        assert!(matches!(load_articles(f.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_articles(Path::new("/nonexistent/articles.jsonl")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn population_stats_over_training_window() {
        let f = write_tmp("date,ticker,close\n2013-01-02,AAA,1\n2013-01-03,AAA,3\n2014-01-03,AAA,100\n");
        let t = load_prices(f.path(), DateRange::until(d("2013-12-31"))).unwrap();
        let st = t.stats("AAA").unwrap();
        assert_eq!(st.mean, 2.0);
        assert_eq!(st.std, 1.0);
        assert_eq!(t.get("AAA").unwrap().len(), 3);
    }

    #[test]
    fn negative_close_rejected() {
        let f = write_tmp("date,ticker,close\n2013-01-02,AAA,-5\n");
        assert!(matches!(
            load_prices(f.path(), DateRange::all()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn duplicate_row_rejected() {
        let f = write_tmp("date,ticker,close\n2013-01-02,AAA,5\n2013-01-02,AAA,6\n");
        assert!(matches!(
            load_prices(f.path(), DateRange::all()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn interleaved_tickers_grouped_and_sorted() {
        let f =
            write_tmp("date,ticker,close\n2013-01-03,AAA,2\n2013-01-02,BBB,5\n2013-01-02,AAA,1\n2013-01-03,BBB,6\n");
        let t = load_prices(f.path(), DateRange::all()).unwrap();
        assert_eq!(t.tickers().collect::<Vec<_>>(), vec!["AAA", "BBB"]);
        let a = t.get("AAA").unwrap().observations();
        assert_eq!(a, &[(d("2013-01-02"), 1.0), (d("2013-01-03"), 2.0)]);
    }

    #[test]
    fn single_training_close_is_unnormalizable_but_kept() {
        let f = write_tmp("date,ticker,close\n2013-01-02,AAA,1\n2014-01-02,AAA,2\n");
        let t = load_prices(f.path(), DateRange::until(d("2013-12-31"))).unwrap();
        assert!(!t.is_normalizable("AAA"));
        assert!(t.get("AAA").is_some());
    }

    #[test]
    fn prices_round_trip() {
        let f = write_tmp(
            "date,ticker,close\n2013-01-02,AAA,1.1\n2013-01-02,BBB,0.30000000000000004\n2013-01-03,AAA,2.25\n",
        );
        let t = load_prices(f.path(), DateRange::all()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_prices(out.path(), &t).unwrap();
        let t2 = load_prices(out.path(), DateRange::all()).unwrap();
        assert_eq!(t, t2);
        assert_eq!(
            std::fs::read_to_string(out.path()).unwrap(),
            std::fs::read_to_string(f.path()).unwrap()
        );
    }

    fn series(t: &str, dates: &[&str]) -> PriceSeries {
        PriceSeries::new(
            t,
            dates.iter().enumerate().map(|(i, s)| (d(s), i as f64 + 1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn align_cases() {
        let a = series("A", &["2013-01-01", "2013-01-02", "2013-01-03"]);
        let b = series("B", &["2013-01-02", "2013-01-03", "2013-01-04"]);
        let (x, y) = align_series(&a, &b, DateRange::all());
        assert_eq!(x, vec![2.0, 3.0]);
        assert_eq!(y, vec![1.0, 2.0]);

        let (x, y) = align_series(&a, &a, DateRange::all());
        assert_eq!(x, y);
        assert_eq!(x.len(), 3);

        let c = series("C", &["2014-01-01"]);
        let (x, y) = align_series(&a, &c, DateRange::all());
        assert!(x.is_empty() && y.is_empty());

        let (x, _) = align_series(&a, &b, DateRange::new(d("2013-01-03"), d("2013-12-31")));
        assert_eq!(x, vec![3.0]);
    }

    #[test]
    fn align_is_symmetric() {
        let a = series("A", &["2013-01-01", "2013-01-02", "2013-01-05", "2013-01-07"]);
        let b = series("B", &["2013-01-02", "2013-01-03", "2013-01-05"]);
        let (x1, y1) = align_series(&a, &b, DateRange::all());
        let (y2, x2) = align_series(&b, &a, DateRange::all());
        assert_eq!((x1, y1), (x2, y2));
        assert_eq!(
            common_dates(&a, &b, DateRange::all()),
            common_dates(&b, &a, DateRange::all())
        );
    }

    #[test]
    fn stats_standardize_training_closes() {
        let closes = [10.0, 12.5, 9.75, 11.0, 30.0];
        let st = NormStats::from_values(&closes).unwrap();
        let z: Vec<f64> = closes.iter().map(|&c| st.apply(c)).collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn series_lookups() {
        let s = series("A", &["2013-01-02", "2013-01-03", "2013-01-07"]);
        assert_eq!(s.next_after(d("2013-01-04")), Some((d("2013-01-07"), 3.0)));
        assert_eq!(s.index_on_or_before(d("2013-01-05")), Some(1));
        assert_eq!(s.index_on_or_before(d("2013-01-01")), None);
        assert_eq!(s.closes_before(d("2013-01-07"), 2), Some(vec![1.0, 2.0]));
        assert_eq!(s.closes_before(d("2013-01-03"), 2), None);
    }
}
