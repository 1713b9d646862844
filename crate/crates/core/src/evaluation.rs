//! Test-set error rates for feature ablations and the accuracy/coverage sweep
//! for predictions propagated to stocks absent from the news.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{BlockSet, FeatureMatrix};
use crate::graph::{propagate, threshold_predictions, CorrelationGraph, PredictionVector};
use crate::ingest::PriceTable;
use crate::mlp::{train, MlpModel, TrainConfig};
use crate::sampling::{movement_label, Label, SplitKind};

pub use crate::synth::generate_synthetic_fixture;

pub fn error_rate(predictions: &[Label], truths: &[Label]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Dimension {
            expected: truths.len(),
            got: predictions.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Invalid("error rate of an empty set".into()));
    }
    let wrong = predictions.iter().zip(truths).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / predictions.len() as f64)
}

pub fn accuracy(predictions: &[Label], truths: &[Label]) -> Result<f64> {
    error_rate(predictions, truths).map(|e| 1.0 - e)
}

/// Feature matrices of the three date-based splits.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSplit {
    pub train: FeatureMatrix,
    pub validation: FeatureMatrix,
    pub test: FeatureMatrix,
}

impl FeatureSplit {
    pub fn by_date(all: &FeatureMatrix, train_end: NaiveDate, valid_end: NaiveDate) -> Self {
        let of = |kind| all.filter(|r| SplitKind::of(r.date, train_end, valid_end) == kind);
        FeatureSplit {
            train: of(SplitKind::Train),
            validation: of(SplitKind::Validation),
            test: of(SplitKind::Test),
        }
    }

    pub fn project(&self, set: BlockSet) -> Result<FeatureSplit> {
        Ok(FeatureSplit {
            train: self.train.project(set)?,
            validation: self.validation.project(set)?,
            test: self.test.project(set)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub combination: BlockSet,
    /// `Err` carries the failure message of a combination that did not train.
    pub error_rate: std::result::Result<f64, String>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn get(&self, set: BlockSet) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.combination == set)
            .and_then(|r| r.error_rate.as_ref().ok().copied())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("combination,error_rate,samples\n");
        for r in &self.rows {
            let e = match &r.error_rate {
                Ok(e) => e.to_string(),
                Err(_) => "failed".into(),
            };
            let _ = writeln!(s, "{},{e},{}", r.combination, r.samples);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<20} {:>10} {:>8}\n", "feature combination", "error rate", "samples");
        for r in &self.rows {
            let e = match &r.error_rate {
                Ok(e) => format!("{:.2}%", 100.0 * e),
                Err(m) => format!("failed: {m}"),
            };
            let _ = writeln!(s, "{:<20} {:>10} {:>8}", r.combination.to_string(), e, r.samples);
        }
        s
    }
}

/// Trains one model per block combination with the same config and seed and
/// reports each one's test error. A combination that fails to train is marked
/// failed and the others still run.
pub fn run_ablation(split: &FeatureSplit, combinations: &[BlockSet], config: &TrainConfig) -> AblationReport {
    let rows = combinations
        .par_iter()
        .map(|&set| {
            let result = split.project(set).and_then(|s| {
                let model = train(&s.train, &s.validation, config)?;
                model.error_rate_on(&s.test)
            });
            if let Err(e) = &result {
                log::warn!("ablation {set} failed: {e}");
            }
            AblationRow {
                combination: set,
                error_rate: result.map_err(|e| e.to_string()),
                samples: split.test.len(),
            }
        })
        .collect();
    AblationReport { rows }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    /// `None` when no propagated prediction survived the threshold.
    pub accuracy: Option<f64>,
    pub predicted_per_day: f64,
    pub observed_per_day: f64,
    pub judged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub dates_evaluated: usize,
    pub dates_skipped: usize,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,accuracy,predicted_per_day,observed_per_day\n");
        for r in &self.rows {
            let acc = r.accuracy.map_or("n/a".to_string(), |a| a.to_string());
            let _ = writeln!(s, "{},{acc},{},{}", r.tau, r.predicted_per_day, r.observed_per_day);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "dates evaluated: {}  skipped (no observed stocks): {}\n{:>6} {:>10} {:>18} {:>17}\n",
            self.dates_evaluated, self.dates_skipped, "tau", "accuracy", "predicted/day", "observed/day"
        );
        for r in &self.rows {
            let acc = r.accuracy.map_or("n/a".to_string(), |a| format!("{:.2}%", 100.0 * a));
            let _ = writeln!(
                s,
                "{:>6.2} {:>10} {:>18.2} {:>17.2}",
                r.tau, acc, r.predicted_per_day, r.observed_per_day
            );
        }
        s
    }
}

/// Per test date: seeds the graph with the model's confidences for observed
/// stocks, propagates, and scores the surviving unseen-stock predictions
/// against their actual next-day movement for every threshold.
pub struct PropagationSweep<'a> {
    pub model: &'a MlpModel,
    pub graph: &'a CorrelationGraph,
    pub prices: &'a PriceTable,
    pub iterations: usize,
    pub clamp_observed: bool,
}

/// One date's propagated vector.
pub struct DatePropagation {
    pub date: NaiveDate,
    pub observed: usize,
    pub propagated: PredictionVector,
}

impl PropagationSweep<'_> {
    pub fn propagate_dates(&self, test: &FeatureMatrix) -> Result<(Vec<DatePropagation>, usize)> {
        let mut by_date: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
        for (i, r) in test.rows.iter().enumerate() {
            by_date.entry(r.date).or_default().push(i);
        }
        let per_date: Vec<Option<DatePropagation>> = by_date
            .into_par_iter()
            .map(|(date, rows)| {
                let mut x = PredictionVector::zeros(self.graph.len());
                for i in rows {
                    let row = &test.rows[i];
                    if let Some(node) = self.graph.node_index(&row.ticker) {
                        let p = self.model.predict_values(&row.values)?;
                        x.observe(node, p.confidence.clamp(-1.0, 1.0))?;
                    }
                }
                let observed = x.observed_count();
                if observed == 0 {
                    return Ok(None);
                }
                let propagated = propagate(self.graph, &x, self.iterations, self.clamp_observed)?;
                Ok(Some(DatePropagation {
                    date,
                    observed,
                    propagated,
                }))
            })
            .collect::<Result<_>>()?;
        let skipped = per_date.iter().filter(|d| d.is_none()).count();
        let out: Vec<DatePropagation> = per_date.into_iter().flatten().collect();
        Ok((out, skipped))
    }

    pub fn run(&self, test: &FeatureMatrix, taus: &[f64]) -> Result<SweepReport> {
        if let Some(layout) = &self.model.layout {
            if *layout != test.layout {
                return Err(Error::Layout {
                    expected: layout.to_string(),
                    got: test.layout.to_string(),
                });
            }
        }
        let (dates, skipped) = self.propagate_dates(test)?;
        let days = dates.len();
        let observed_total: usize = dates.iter().map(|d| d.observed).sum();
        let rows = taus
            .iter()
            .map(|&tau| {
                let (mut predicted, mut judged, mut correct) = (0usize, 0usize, 0usize);
                for d in &dates {
                    let preds = threshold_predictions(self.graph, &d.propagated, tau);
                    predicted += preds.len();
                    for (ticker, (label, _)) in preds {
                        if let Some(truth) = movement_label(self.prices, &ticker, d.date) {
                            judged += 1;
                            correct += (label == truth) as usize;
                        }
                    }
                }
                let per_day = |n: usize| if days == 0 { 0.0 } else { n as f64 / days as f64 };
                SweepRow {
                    tau,
                    accuracy: (judged > 0).then(|| correct as f64 / judged as f64),
                    predicted_per_day: per_day(predicted),
                    observed_per_day: per_day(observed_total),
                    judged,
                }
            })
            .collect();
        Ok(SweepReport {
            rows,
            dates_evaluated: days,
            dates_skipped: skipped,
        })
    }
}

pub fn run_propagation_sweep(
    test: &FeatureMatrix,
    model: &MlpModel,
    graph: &CorrelationGraph,
    prices: &PriceTable,
    taus: &[f64],
) -> Result<SweepReport> {
    PropagationSweep {
        model,
        graph,
        prices,
        iterations: 1,
        clamp_observed: false,
    }
    .run(test, taus)
}
