//! Acceptance criteria 1-10. Each test writes one `criterion N ... PASS|FAIL`
//! line to stderr (bypassing output capture) before asserting.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use newsmotion::features::{FeatureMatrix, FeatureVector, NearestLeftMention, SubjectDetector};
use newsmotion::graph::{build_graph, pearson, propagate, CorrelationGraph, PredictionVector};
use newsmotion::ingest::{parse_date, DateRange, PriceSeries, PriceTable};
use newsmotion::lexicon::polarity_score;
use newsmotion::mlp::{cross_entropy, softmax2, Dense, MlpModel};
use newsmotion::pipeline::{Pipeline, PipelineConfig, Stage};
use newsmotion::sampling::{tag_mentions, AliasTable, Label, Sample, Sentence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "[acceptance] criterion {n:>2} {name:<28} {}  {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Weight `k` of layer `l`, continuing into the biases past the last weight.
fn param_mut(layers: &mut [Dense], l: usize, k: usize) -> &mut f64 {
    let layer = &mut layers[l];
    let n_w = layer.weights.len();
    if k < n_w {
        &mut layer.weights[k]
    } else {
        &mut layer.biases[k - n_w]
    }
}

#[test]
fn criterion_01_gradient_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut models = 0;
    for trial in 0..24 {
        let dims: &[usize] = if trial % 2 == 0 { &[5, 7, 2] } else { &[12, 16, 16, 2] };
        let mut model = MlpModel::init(dims, trial).unwrap();
        for layer in &mut model.layers {
            layer.biases.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        }
        let batch: Vec<(Vec<f64>, Label)> = (0..4)
            .map(|_| {
                let x = (0..dims[0]).map(|_| rng.gen_range(-2.0..2.0)).collect();
                (x, if rng.gen_bool(0.5) { Label::Up } else { Label::Down })
            })
            .collect();
        let refs: Vec<(&[f64], Label)> = batch.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
        let l2 = 1e-3;
        let (_, mut grads) = model.loss_and_gradients(&refs, l2).unwrap();
        let eps = 1e-5;
        for l in 0..model.layers.len() {
            let n_w = model.layers[l].weights.len();
            let n_b = model.layers[l].biases.len();
            for k in 0..n_w + n_b {
                let probe = |delta: f64| {
                    let mut m = model.clone();
                    *param_mut(&mut m.layers, l, k) += delta;
                    m.loss_and_gradients(&refs, l2).unwrap().0
                };
                let numeric = (probe(eps) - probe(-eps)) / (2.0 * eps);
                let analytic = *param_mut(&mut grads.layers, l, k);
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
        models += 1;
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-4 && elapsed < Duration::from_secs(10);
    report(
        1,
        "gradient oracle",
        pass,
        &format!(
            "{models} models, max rel err {worst:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_softmax_and_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut finite = true;
    for i in 0..10_000 {
        let scale = if i % 4 == 0 { 700.0 } else { 10.0 };
        let z = [rng.gen_range(-scale..=scale), rng.gen_range(-scale..=scale)];
        let p = softmax2(z);
        worst = worst.max((p[0] + p[1] - 1.0).abs());
        finite &= p.iter().all(|v| v.is_finite()) && (0..2).all(|t| cross_entropy(z, t).is_finite());
    }
    for z in [[700.0, -700.0], [-700.0, 700.0], [700.0, 700.0]] {
        let p = softmax2(z);
        worst = worst.max((p[0] + p[1] - 1.0).abs());
        finite &= p.iter().all(|v| v.is_finite());
    }
    let log2_err = (0..2)
        .map(|t| (cross_entropy([0.0, 0.0], t) - 2f64.ln()).abs())
        .fold(0.0, f64::max);
    let pass = worst <= 1e-12 && finite && log2_err <= 1e-12;
    report(
        2,
        "softmax / loss stability",
        pass,
        &format!("max |sum-1| {worst:.1e}, |loss(0,0)-ln2| {log2_err:.1e}, finite {finite}"),
    );
    assert!(pass);
}

fn corpus_sample(words: &[String], label: Label) -> Sample {
    let date = parse_date("2013-01-02").unwrap();
    Sample {
        ticker: "T".into(),
        date,
        sentences: vec![Sentence {
            text: format!("T {}", words.join(" ")),
            article_date: date,
            mentions: vec![],
        }],
        label: Some(label),
    }
}

type Doc = (Vec<String>, Label);

/// Counts straight from the word lists the samples were built from.
fn brute_force_ps(word: &str, corpus: &[Doc]) -> f64 {
    let count = |pred: &dyn Fn(&Doc) -> bool| corpus.iter().filter(|s| pred(s)).count() as f64;
    let has = |s: &Doc| s.0.iter().any(|w| w == word);
    let f_w_pos = count(&|s| s.1 == Label::Up && has(s));
    let f_w_neg = count(&|s| s.1 == Label::Down && has(s));
    let f_pos = count(&|s| s.1 == Label::Up);
    let f_neg = count(&|s| s.1 == Label::Down);
    (((f_w_pos + 1.0) * (f_neg + 1.0)) / ((f_w_neg + 1.0) * (f_pos + 1.0))).ln()
}

#[test]
fn criterion_03_polarity_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    let mut antisymmetric = true;
    for _ in 0..50 {
        let n_kw = rng.gen_range(1..=10);
        let vocab: Vec<String> = (0..n_kw).map(|i| format!("kw{i}")).collect();
        let n = rng.gen_range(2..=30);
        let corpus: Vec<Doc> = (0..n)
            .map(|i| {
                let words: Vec<String> = (0..rng.gen_range(0..=6))
                    .map(|_| vocab[rng.gen_range(0..n_kw)].clone())
                    .collect();
                let label = match i {
                    0 => Label::Up,
                    1 => Label::Down,
                    _ if rng.gen_bool(0.5) => Label::Up,
                    _ => Label::Down,
                };
                (words, label)
            })
            .collect();
        let samples: Vec<Sample> = corpus.iter().map(|(w, l)| corpus_sample(w, *l)).collect();
        let flipped: Vec<Sample> = corpus.iter().map(|(w, l)| corpus_sample(w, l.flipped())).collect();
        for w in vocab.iter().map(String::as_str).chain(["absent"]) {
            let ps = polarity_score(w, &samples).unwrap();
            worst = worst.max((ps - brute_force_ps(w, &corpus)).abs());
            antisymmetric &= polarity_score(w, &flipped).unwrap() == -ps;
        }
    }
    let pass = worst <= 1e-12 && antisymmetric;
    report(
        3,
        "polarity-score oracle",
        pass,
        &format!("50 corpora, max |diff| {worst:.1e}, exact negation under inversion {antisymmetric}"),
    );
    assert!(pass);
}

fn series(ticker: &str, closes: &[f64]) -> PriceSeries {
    let start = parse_date("2013-01-01").unwrap();
    PriceSeries::new(
        ticker,
        closes
            .iter()
            .enumerate()
            .map(|(i, &c)| (start + chrono::Duration::days(i as i64), c))
            .collect(),
    )
    .unwrap()
}

#[test]
fn criterion_04_pearson_and_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let s: Vec<f64> = (0..50).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let neg: Vec<f64> = s.iter().map(|v| -v).collect();
    let self_err = (pearson(&s, &s).unwrap() - 1.0).abs();
    let anti_err = (pearson(&s, &neg).unwrap() + 1.0).abs();
    let rho = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    let case_err = (rho - 0.8).abs();

    let prices = PriceTable::new(
        vec![series("A", &[1.0, 2.0, 3.0, 4.0]), series("B", &[1.0, 3.0, 2.0, 4.0])],
        DateRange::all(),
    )
    .unwrap();
    let universe = vec!["A".to_string(), "B".to_string()];
    let at_threshold = build_graph(&prices, &universe, DateRange::all(), rho, 4).unwrap();
    let below = build_graph(&prices, &universe, DateRange::all(), rho - 1e-9, 4).unwrap();
    let pass = self_err <= 1e-12
        && anti_err <= 1e-12
        && case_err <= 1e-12
        && at_threshold.edge_count() == 0
        && below.edge_count() == 1;
    report(
        4,
        "pearson / graph threshold",
        pass,
        &format!(
            "|rho(s,s)-1| {self_err:.1e}, |rho(s,-s)+1| {anti_err:.1e}, rho([1,3,2,4]) {rho}, edges at threshold {}",
            at_threshold.edge_count()
        ),
    );
    assert!(pass);
}

#[allow(clippy::needless_range_loop)]
#[test]
fn criterion_05_propagation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let n = 10;
    let mut worst = 0.0f64;
    let mut cases = 0;
    for _ in 0..100 {
        let mut dense = vec![vec![0.0; n]; n];
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(0.3) {
                    let w = rng.gen_range(-1.0..1.0);
                    dense[i][j] = w;
                    dense[j][i] = w;
                    edges.push((i, j, w));
                }
            }
        }
        let nodes = (0..n).map(|i| format!("S{i}")).collect();
        let graph = CorrelationGraph::from_edges(nodes, &edges, 0.0, DateRange::all(), 2).unwrap();
        let mut x = PredictionVector::zeros(n);
        for i in 0..n {
            if rng.gen_bool(0.4) {
                x.observe(i, rng.gen_range(-1.0..=1.0)).unwrap();
            }
        }
        for iterations in 1..=3 {
            for clamp in [false, true] {
                let mut cur = x.values.clone();
                for _ in 0..iterations {
                    let mut next: Vec<f64> = (0..n).map(|i| (0..n).map(|j| dense[i][j] * cur[j]).sum()).collect();
                    if clamp {
                        for i in 0..n {
                            if x.observed[i] {
                                next[i] = x.values[i];
                            }
                        }
                    }
                    cur = next;
                }
                cur.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
                let sparse = propagate(&graph, &x, iterations, clamp).unwrap();
                for (a, b) in sparse.values.iter().zip(&cur) {
                    worst = worst.max((a - b).abs());
                }
                cases += 1;
            }
        }
    }
    let pass = worst <= 1e-12;
    report(
        5,
        "propagation oracle",
        pass,
        &format!("{cases} cases on 100 graphs, max |diff| {worst:.1e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_subject_heuristic() {
    let text =
        "Apple slipped behind Samsung and Microsoft in a 2013 customer experience survey from Forrester Research";
    let aliases = AliasTable::new([("Apple", "AAPL"), ("Samsung", "SSNLF"), ("Microsoft", "MSFT")]);
    let sentence = Sentence {
        text: text.into(),
        article_date: parse_date("2013-01-02").unwrap(),
        mentions: tag_mentions(text, &aliases),
    };
    let kw = text.find("slipped").unwrap();
    let det = NearestLeftMention;
    let apple = det.is_subject(&sentence, "AAPL", kw);
    let samsung = det.is_subject(&sentence, "SSNLF", kw);
    let microsoft = det.is_subject(&sentence, "MSFT", kw);
    let pass = sentence.mentions.len() == 3 && apple && !samsung && !microsoft;
    report(
        6,
        "subject heuristic",
        pass,
        &format!(
            "Apple kept {apple}, Samsung flipped {}, Microsoft flipped {}",
            !samsung, !microsoft
        ),
    );
    assert!(pass);
}

const FIXTURE_CONFIG: &str = r#"
seed = 7

[paths]
articles = "data/articles.jsonl"
prices = "data/prices.csv"
aliases = "data/aliases.csv"
work_dir = "work"

[lexicon]
keywords = 1000
categories = 10

[embedding]
dimension = 50

[train]
hidden = [64, 32]
epochs = 20

[sweep]
taus = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]

[synth]
tickers = 50
samples = 5000
noise = 0.1
"#;

struct Run {
    work: PathBuf,
    elapsed: Duration,
}

fn run_pipeline(dir: &Path) -> Run {
    let _ = std::fs::remove_dir_all(dir);
    std::fs::create_dir_all(dir).unwrap();
    let start = Instant::now();
    let config = PipelineConfig::from_toml_str(FIXTURE_CONFIG, dir, &[]).unwrap();
    let work = config.paths.work_dir.clone();
    let pipeline = Pipeline::open(config).unwrap();
    pipeline.run(Stage::Synth).unwrap();
    pipeline.run_all().unwrap();
    Run {
        work,
        elapsed: start.elapsed(),
    }
}

fn runs() -> &'static (Run, Run) {
    static RUNS: OnceLock<(Run, Run)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let base = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        (run_pipeline(&base.join("run1")), run_pipeline(&base.join("run2")))
    })
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn criterion_07_synthetic_ablation() {
    let run = &runs().0;
    let rows = csv_rows(&run.work.join("ablation.csv"));
    let error_of = |name: &str| -> f64 {
        rows.iter()
            .find(|r| r[0] == name)
            .and_then(|r| r[1].parse().ok())
            .unwrap_or(f64::NAN)
    };
    let price = error_of("price");
    let all = error_of("price+bok+ps+ct");
    let gap = price - all;
    let pass = all <= 0.15 && gap >= 0.10 && run.elapsed < Duration::from_secs(300);
    report(
        7,
        "synthetic ablation",
        pass,
        &format!(
            "error(all) {all:.4}, error(price) {price:.4}, gap {gap:.4}, pipeline {:.1}s",
            run.elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_synthetic_sweep() {
    let run = &runs().0;
    let rows = csv_rows(&run.work.join("sweep.csv"));
    let taus: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    let per_day: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    let acc_08 = rows
        .iter()
        .find(|r| r[0].parse::<f64>().unwrap() == 0.8)
        .and_then(|r| r[1].parse::<f64>().ok())
        .unwrap_or(f64::NAN);
    let monotone = per_day.windows(2).all(|w| w[1] <= w[0]);
    let expected: Vec<f64> = (0..=5).map(|i| i as f64 * 0.2).collect();
    let full_sweep = taus.len() == expected.len() && taus.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-12);
    let pass = acc_08 - 0.5 >= 0.1 && monotone && full_sweep;
    report(
        8,
        "synthetic propagation sweep",
        pass,
        &format!(
            "accuracy at tau 0.8 {acc_08:.4}, predicted/day {:?}, monotone {monotone}",
            per_day.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_determinism() {
    let (a, b) = runs();
    let files = [
        "model.bin",
        "graph.csv",
        "ablation.csv",
        "ablation.txt",
        "sweep.csv",
        "sweep.txt",
        "predictions.csv",
        "features.csv",
        "vectors.txt",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.work.join(f)).unwrap() != std::fs::read(b.work.join(f)).unwrap())
        .collect();
    let pass = differing.is_empty();
    report(
        9,
        "determinism",
        pass,
        &format!("{} artifacts compared, differing {differing:?}", files.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_10_feature_dimension_contract() {
    let run = &runs().0;
    let features = FeatureMatrix::load(&run.work.join("features.csv")).unwrap();
    let model = MlpModel::load(&run.work.join("model.bin")).unwrap();
    let layout_ok = model.layout.as_ref() == Some(&features.layout);
    let widths_ok = features.layout.dim() == 2022 && features.rows.iter().all(|r| r.values.len() == 2022);
    let predict_ok = features.rows.iter().all(|r| {
        model
            .predict(&FeatureVector {
                values: r.values.clone(),
                layout: features.layout.clone(),
            })
            .is_ok()
    });
    let pass = layout_ok && widths_ok && predict_ok && !features.rows.is_empty();
    report(
        10,
        "feature dimension contract",
        pass,
        &format!(
            "{} vectors, layout [{}], matches model {layout_ok}",
            features.rows.len(),
            features.layout
        ),
    );
    assert!(pass);
}
