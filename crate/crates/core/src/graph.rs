//! Stock correlation graph over closing prices and propagation of signed
//! prediction confidences along its edges.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{align_series, DateRange, PriceTable};
use crate::sampling::Label;

pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_MIN_OVERLAP: usize = 252;

/// Pearson product-moment correlation. `None` for fewer than two points,
/// unequal lengths, or a constant series.
pub fn pearson(u: &[f64], v: &[f64]) -> Option<f64> {
    if u.len() != v.len() || u.len() < 2 {
        return None;
    }
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (da, db) = (a - mu, b - mv);
        suv += da * db;
        suu += da * da;
        svv += db * db;
    }
    if suu == 0.0 || svv == 0.0 {
        return None;
    }
    Some((suv / (suu.sqrt() * svv.sqrt())).clamp(-1.0, 1.0))
}

/// Undirected weighted graph; adjacency lists are sorted by neighbor index.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationGraph {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
    pub threshold: f64,
    pub window: DateRange,
    pub min_overlap: usize,
}

impl CorrelationGraph {
    /// Builds a graph from undirected edges `(i, j, w)`; both directions are stored.
    pub fn from_edges(
        nodes: Vec<String>,
        edges: &[(usize, usize, f64)],
        threshold: f64,
        window: DateRange,
        min_overlap: usize,
    ) -> Result<Self> {
        let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != nodes.len() {
            return Err(Error::Invalid("duplicate ticker in graph nodes".into()));
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(i, j, w) in edges {
            if i == j || i >= nodes.len() || j >= nodes.len() {
                return Err(Error::Invalid(format!("bad edge ({i}, {j})")));
            }
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(j, _)| j);
            if list.windows(2).any(|p| p[0].0 == p[1].0) {
                return Err(Error::Invalid("duplicate edge".into()));
            }
        }
        Ok(CorrelationGraph {
            nodes,
            index,
            adjacency,
            threshold,
            window,
            min_overlap,
        })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, ticker: &str) -> Option<usize> {
        self.index.get(ticker).copied()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let list = &self.adjacency[i];
        list.binary_search_by_key(&j, |&(k, _)| k).ok().map(|p| list[p].1)
    }

    /// Each undirected edge once, as `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, list) in self.adjacency.iter().enumerate() {
            for &(j, w) in list {
                if i < j {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// CSV `ticker_i,ticker_j,weight` with `ticker_i < ticker_j`, preceded by
    /// comment lines recording the build parameters and the node list.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(
            w,
            "# threshold={} window={} min_overlap={}",
            self.threshold, self.window, self.min_overlap
        )
        .map_err(io)?;
        writeln!(w, "# nodes={}", self.nodes.join(";")).map_err(io)?;
        writeln!(w, "ticker_i,ticker_j,weight").map_err(io)?;
        let mut rows: Vec<(&str, &str, f64)> = self
            .edges()
            .into_iter()
            .map(|(i, j, wt)| {
                let (a, b) = (self.nodes[i].as_str(), self.nodes[j].as_str());
                if a < b {
                    (a, b, wt)
                } else {
                    (b, a, wt)
                }
            })
            .collect();
        rows.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        for (a, b, wt) in rows {
            writeln!(w, "{a},{b},{wt}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut threshold = None;
        let mut window = None;
        let mut min_overlap = None;
        let mut nodes: Option<Vec<String>> = None;
        let mut raw_edges = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line_no = i + 1;
            let perr = |m: String| Error::parse(path, line_no, m);
            if let Some(meta) = line.strip_prefix("# ") {
                for field in meta.split_whitespace() {
                    match field.split_once('=') {
                        Some(("threshold", v)) => threshold = Some(v.parse::<f64>().map_err(|e| perr(e.to_string()))?),
                        Some(("window", v)) => window = Some(v.parse::<DateRange>().map_err(|e| perr(e.to_string()))?),
                        Some(("min_overlap", v)) => {
                            min_overlap = Some(v.parse::<usize>().map_err(|e| perr(e.to_string()))?)
                        }
                        Some(("nodes", v)) => {
                            nodes = Some(v.split(';').filter(|s| !s.is_empty()).map(String::from).collect())
                        }
                        _ => return Err(perr(format!("unknown header field `{field}`"))),
                    }
                }
                continue;
            }
            if line.trim().is_empty() || line == "ticker_i,ticker_j,weight" {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let [a, b, wt] = parts[..] else {
                return Err(perr(format!("expected 3 fields, got {}", parts.len())));
            };
            let wt: f64 = wt.parse().map_err(|e: std::num::ParseFloatError| perr(e.to_string()))?;
            raw_edges.push((a.to_string(), b.to_string(), wt, line_no));
        }
        let nodes = nodes.ok_or_else(|| Error::parse(path, 2, "missing `# nodes=` header"))?;
        let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let mut edges = Vec::with_capacity(raw_edges.len());
        for (a, b, wt, line_no) in &raw_edges {
            let (Some(&i), Some(&j)) = (index.get(a.as_str()), index.get(b.as_str())) else {
                return Err(Error::parse(
                    path,
                    *line_no,
                    format!("edge {a},{b} names an unknown ticker"),
                ));
            };
            edges.push((i, j, *wt));
        }
        CorrelationGraph::from_edges(
            nodes,
            &edges,
            threshold.ok_or_else(|| Error::parse(path, 1, "missing threshold"))?,
            window.ok_or_else(|| Error::parse(path, 1, "missing window"))?,
            min_overlap.ok_or_else(|| Error::parse(path, 1, "missing min_overlap"))?,
        )
    }
}

/// Correlates every pair in `universe` over `window`, keeping `|ρ| > threshold`.
/// Pairs with fewer than `min_overlap` common dates get no edge.
pub fn build_graph(
    prices: &PriceTable,
    universe: &[String],
    window: DateRange,
    threshold: f64,
    min_overlap: usize,
) -> Result<CorrelationGraph> {
    let mut nodes: Vec<String> = universe.to_vec();
    nodes.sort();
    nodes.dedup();
    let series = nodes
        .iter()
        .map(|t| {
            prices
                .get(t)
                .ok_or_else(|| Error::Invalid(format!("ticker {t} is not in the price table")))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = (0..nodes.len())
        .flat_map(|i| (i + 1..nodes.len()).map(move |j| (i, j)))
        .collect();
    let edges: Vec<(usize, usize, f64)> = pairs
        .par_iter()
        .filter_map(|&(i, j)| {
            let (a, b) = align_series(series[i], series[j], window);
            if a.len() < min_overlap.max(2) {
                return None;
            }
            let rho = pearson(&a, &b)?;
            (rho.abs() > threshold).then_some((i, j, rho))
        })
        .collect();
    CorrelationGraph::from_edges(nodes, &edges, threshold, window, min_overlap)
}

/// Dense signed-confidence vector over graph nodes plus the observed mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
}

impl PredictionVector {
    pub fn zeros(n: usize) -> Self {
        PredictionVector {
            values: vec![0.0; n],
            observed: vec![false; n],
        }
    }

    /// Seeds node `i` with a classifier confidence in `[−1, 1]`.
    pub fn observe(&mut self, i: usize, confidence: f64) -> Result<()> {
        if !(-1.0..=1.0).contains(&confidence) {
            return Err(Error::Invalid(format!("confidence {confidence} outside [-1, 1]")));
        }
        self.values[i] = confidence;
        self.observed[i] = true;
        Ok(())
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }
}

/// `x ← A·x` repeated `iterations` times with the raw edge weights. With
/// `clamp_observed`, observed entries are reset to their inputs after every
/// step. The result is clipped to `[−1, 1]` at the end. Zero iterations
/// return the input.
pub fn propagate(
    graph: &CorrelationGraph,
    x: &PredictionVector,
    iterations: usize,
    clamp_observed: bool,
) -> Result<PredictionVector> {
    if x.values.len() != graph.len() || x.observed.len() != graph.len() {
        return Err(Error::Dimension {
            expected: graph.len(),
            got: x.values.len(),
        });
    }
    if iterations == 0 {
        return Ok(x.clone());
    }
    let mut cur = x.values.clone();
    for _ in 0..iterations {
        let mut next: Vec<f64> = graph
            .adjacency
            .par_iter()
            .map(|list| list.iter().map(|&(j, w)| w * cur[j]).sum())
            .collect();
        if clamp_observed {
            for (i, v) in next.iter_mut().enumerate() {
                if x.observed[i] {
                    *v = x.values[i];
                }
            }
        }
        cur = next;
    }
    cur.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok(PredictionVector {
        values: cur,
        observed: x.observed.clone(),
    })
}

/// Unseen nodes with a non-zero propagated value of magnitude at least `tau`,
/// keyed by ticker.
pub fn threshold_predictions(
    graph: &CorrelationGraph,
    propagated: &PredictionVector,
    tau: f64,
) -> BTreeMap<String, (Label, f64)> {
    propagated
        .values
        .iter()
        .enumerate()
        .filter(|&(i, &v)| !propagated.observed[i] && v != 0.0 && v.abs() >= tau)
        .map(|(i, &v)| {
            let label = if v > 0.0 { Label::Up } else { Label::Down };
            (graph.nodes[i].clone(), (label, v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_date, PriceSeries};
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        let s = [1.0, 4.0, 2.0, 8.0];
        assert!((pearson(&s, &s).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert_eq!(pearson(&[1.0], &[1.0]), None);
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]), None);
    }

    proptest! {
        #[test]
        fn pearson_affine_and_negation(
            u in prop::collection::vec(-100.0f64..100.0, 3..30),
            a in 0.01f64..50.0,
            b in -100.0f64..100.0,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = u.iter().map(|x| x * 0.3 + rng.gen_range(-50.0..50.0)).collect();
            if let Some(r) = pearson(&u, &v) {
                let moved: Vec<f64> = u.iter().map(|x| a * x + b).collect();
                prop_assert!((pearson(&moved, &v).unwrap() - r).abs() < 1e-9);
                let neg: Vec<f64> = v.iter().map(|x| -x).collect();
                prop_assert!((pearson(&u, &neg).unwrap() + r).abs() < 1e-12);
            }
        }
    }

    fn table(cols: &[(&str, Vec<f64>)]) -> PriceTable {
        let start = parse_date("2010-01-01").unwrap();
        let series = cols
            .iter()
            .map(|(t, v)| {
                PriceSeries::new(
                    *t,
                    v.iter()
                        .enumerate()
                        .map(|(i, &c)| (start + chrono::Duration::days(i as i64), c))
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        PriceTable::new(series, DateRange::all()).unwrap()
    }

    fn names(t: &PriceTable) -> Vec<String> {
        t.tickers().map(String::from).collect()
    }

    #[test]
    fn identical_series_have_unit_edge() {
        let s: Vec<f64> = (0..300).map(|i| 10.0 + (i as f64 * 0.1).sin()).collect();
        let t = table(&[("AAA", s.clone()), ("BBB", s)]);
        let g = build_graph(&t, &names(&t), DateRange::all(), 0.8, 252).unwrap();
        assert!((g.weight(0, 1).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(g.weight(0, 1), g.weight(1, 0));
    }

    #[test]
    fn exact_threshold_is_excluded() {
        let t = table(&[("AAA", vec![1.0, 2.0, 3.0, 4.0]), ("BBB", vec![1.0, 3.0, 2.0, 4.0])]);
        let g = build_graph(&t, &names(&t), DateRange::all(), 0.8, 2).unwrap();
        assert_eq!(g.edge_count(), 0);
        let g = build_graph(&t, &names(&t), DateRange::all(), 0.79, 2).unwrap();
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn short_overlap_has_no_edge() {
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        let t = table(&[("AAA", s.clone()), ("BBB", s)]);
        let g = build_graph(&t, &names(&t), DateRange::all(), 0.8, 252).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn universe_must_be_in_table() {
        let t = table(&[("AAA", vec![1.0, 2.0])]);
        assert!(build_graph(&t, &["ZZZ".to_string()], DateRange::all(), 0.8, 2).is_err());
    }

    fn chain() -> CorrelationGraph {
        let nodes = vec!["N1".into(), "N2".into(), "N3".into()];
        CorrelationGraph::from_edges(nodes, &[(0, 1, 0.9), (1, 2, -0.85)], 0.8, DateRange::all(), 2).unwrap()
    }

    fn x100() -> PredictionVector {
        let mut x = PredictionVector::zeros(3);
        x.observe(0, 1.0).unwrap();
        x
    }

    #[test]
    fn propagation_chain_example() {
        let g = chain();
        let one = propagate(&g, &x100(), 1, false).unwrap();
        assert_eq!(one.values, vec![0.0, 0.9, 0.0]);
        let two = propagate(&g, &x100(), 2, false).unwrap();
        let want = [0.81, 0.0, -0.765];
        for (a, b) in two.values.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(propagate(&g, &x100(), 0, false).unwrap(), x100());
    }

    #[test]
    fn empty_graph_propagates_to_zero() {
        let g = CorrelationGraph::from_edges(vec!["A".into(), "B".into()], &[], 0.8, DateRange::all(), 2).unwrap();
        let mut x = PredictionVector::zeros(2);
        x.observe(0, 0.7).unwrap();
        assert_eq!(propagate(&g, &x, 1, false).unwrap().values, vec![0.0, 0.0]);
    }

    #[test]
    fn clipping_and_clamping() {
        let nodes = vec!["A".into(), "B".into(), "C".into()];
        let g = CorrelationGraph::from_edges(nodes, &[(0, 2, 0.95), (1, 2, 0.9)], 0.8, DateRange::all(), 2).unwrap();
        let mut x = PredictionVector::zeros(3);
        x.observe(0, 0.9).unwrap();
        x.observe(1, 0.8).unwrap();
        let p = propagate(&g, &x, 1, true).unwrap();
        assert_eq!(p.values[0], 0.9);
        assert_eq!(p.values[1], 0.8);
        assert_eq!(p.values[2], 1.0);
        assert!(x.clone().observe(2, 1.5).is_err());
    }

    #[test]
    fn thresholding() {
        let g = chain();
        let mut x = PredictionVector::zeros(3);
        x.values = vec![0.0, 0.9, -0.85];
        x.observed = vec![true, false, false];
        let out = threshold_predictions(&g, &x, 0.9);
        assert_eq!(out.len(), 1);
        assert_eq!(out["N2"], (Label::Up, 0.9));
        let all = threshold_predictions(&g, &x, 0.0);
        assert_eq!(all.len(), 2);
        assert_eq!(all["N3"].0, Label::Down);
        assert!(threshold_predictions(&g, &x, 1.01).is_empty());
    }

    #[test]
    fn graph_file_round_trip() {
        let mut g = chain();
        g.window = DateRange::new(parse_date("2006-01-01").unwrap(), parse_date("2012-12-31").unwrap());
        let f = tempfile::NamedTempFile::new().unwrap();
        g.write(f.path()).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert!(text.starts_with("# threshold=0.8 window=2006-01-01..2012-12-31 min_overlap=2\n"));
        assert!(text.contains("N1,N2,0.9\n"));
        assert_eq!(CorrelationGraph::load(f.path()).unwrap(), g);
    }
}
