//! Bag scoring and average precision.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::raw_decision;
use crate::scalar::Scalar;
use crate::types::{Bag, ClassifierModel, Label};

/// How shot decision values are pooled into a bag score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
    /// Mean of the `k` largest shot scores (all of them when the bag is smaller).
    TopKMean(usize),
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregation::Max => f.write_str("max"),
            Aggregation::Mean => f.write_str("mean"),
            Aggregation::TopKMean(k) => write!(f, "top{k}"),
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    /// Accepts `max`, `mean` and `topK` (for example `top3`).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            _ => s
                .strip_prefix("top")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k > 0)
                .map(Aggregation::TopKMean)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown aggregation '{s}'"))),
        }
    }
}

pub fn aggregate<T: Scalar>(scores: &[T], rule: Aggregation) -> T {
    match rule {
        Aggregation::Max => scores.iter().copied().fold(T::neg_infinity(), T::max),
        Aggregation::Mean => mean(scores),
        Aggregation::TopKMean(k) => {
            let mut sorted = scores.to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
            sorted.truncate(k.max(1));
            mean(&sorted)
        }
    }
}

fn mean<T: Scalar>(values: &[T]) -> T {
    values.iter().copied().sum::<T>() / T::of(values.len() as f64)
}

/// Score of a bag: the aggregated decision values of its shots.
pub fn bag_score<T: Scalar>(
    model: &ClassifierModel<T>,
    bag: &Bag<T>,
    aggregation: Aggregation,
) -> Result<T> {
    if bag.is_empty() {
        return Err(Error::Empty(format!("bag {} has no instances", bag.id)));
    }
    let scores = bag
        .instances
        .iter()
        .map(|inst| {
            if inst.feature.len() != model.feature_dim() {
                Err(Error::dims(
                    format!("feature of instance {}", inst.id),
                    model.feature_dim(),
                    inst.feature.len(),
                ))
            } else {
                Ok(raw_decision(model, &inst.feature))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&scores, aggregation))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub bag_id: String,
    pub score: T,
    pub label: Label,
}

/// Scored bags with known labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPredictions<T> {
    rows: Vec<Prediction<T>>,
}

impl<T: Scalar> RankedPredictions<T> {
    pub fn new(rows: Vec<Prediction<T>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for row in &rows {
            if !seen.insert(row.bag_id.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate bag id {} in predictions",
                    row.bag_id
                )));
            }
            if !row.score.is_finite() {
                return Err(Error::NonFinite(format!("score of bag {}", row.bag_id)));
            }
        }
        Ok(RankedPredictions { rows })
    }

    /// Scores every bag of `bags` with `model`.
    pub fn score(
        model: &ClassifierModel<T>,
        bags: &[Bag<T>],
        aggregation: Aggregation,
    ) -> Result<Self> {
        let rows = bags
            .iter()
            .map(|bag| {
                Ok(Prediction {
                    bag_id: bag.id.clone(),
                    score: bag_score(model, bag, aggregation)?,
                    label: bag.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    pub fn rows(&self) -> &[Prediction<T>] {
        &self.rows
    }

    pub fn positive_count(&self) -> usize {
        self.rows.iter().filter(|r| r.label.is_positive()).count()
    }

    /// Rows by descending score; equal scores by ascending bag id.
    pub fn ranked(&self) -> Vec<&Prediction<T>> {
        let mut ranked: Vec<&Prediction<T>> = self.rows.iter().collect();
        ranked.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.bag_id.cmp(&b.bag_id))
        });
        ranked
    }
}

/// Mean over positive rows of the precision at that row's rank (non-interpolated AP).
pub fn average_precision<T: Scalar>(predictions: &RankedPredictions<T>) -> Result<T> {
    let positives = predictions.positive_count();
    if positives == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive bag".into(),
        ));
    }
    let mut hits = 0usize;
    let mut total = 0.0f64;
    for (k, row) in predictions.ranked().into_iter().enumerate() {
        if row.label.is_positive() {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(T::of(total / positives as f64))
}

pub fn mean_average_precision<T: Scalar>(per_event: &[T]) -> Result<T> {
    if per_event.is_empty() {
        return Err(Error::Empty("no events to average".into()));
    }
    Ok(mean(per_event))
}
