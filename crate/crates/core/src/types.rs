//! Domain types: shots, bags, datasets, hyperparameters and the learned model.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Aggregation;
use crate::scalar::{all_finite, Scalar};

/// Bag (and instance) label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Label::Positive => T::one(),
            Label::Negative => -T::one(),
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(value: i8) -> std::result::Result<Self, Self::Error> {
        match value {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(format!("label must be 1 or -1, got {other}")),
        }
    }
}

impl From<Label> for i8 {
    fn from(label: Label) -> i8 {
        match label {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "+1",
            Label::Negative => "-1",
        })
    }
}

/// One video shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance<T> {
    pub id: String,
    pub feature: Vec<T>,
    pub text_embedding: Vec<T>,
}

/// A labeled video: a nonempty ordered sequence of shots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag<T> {
    #[serde(rename = "bag_id")]
    pub id: String,
    pub label: Label,
    pub instances: Vec<Instance<T>>,
    /// Per-bag override of the global reliability ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_ratio: Option<T>,
}

impl<T> Bag<T> {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub bags: Vec<Bag<T>>,
    pub feature_dim: usize,
    pub embedding_dim: usize,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset whose dimensions are taken from the first instance.
    pub fn from_bags(bags: Vec<Bag<T>>) -> Result<Self> {
        let first = bags
            .iter()
            .flat_map(|b| b.instances.first())
            .next()
            .ok_or_else(|| Error::Empty("dataset has no instances".into()))?;
        Ok(Dataset {
            feature_dim: first.feature.len(),
            embedding_dim: first.text_embedding.len(),
            bags,
        })
    }

    pub fn num_instances(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.bags.iter().filter(|b| b.label == label).count()
    }

    /// Validates, returning the dataset back or the full violation list as an error.
    pub fn validated(self) -> Result<Self> {
        let report = validate_dataset(&self);
        if report.is_ok() {
            Ok(self)
        } else {
            Err(Error::InvalidDataset(report))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEmbedding<T> {
    pub event_id: String,
    pub embedding: Vec<T>,
}

impl<T: Scalar> EventEmbedding<T> {
    pub fn new(event_id: impl Into<String>, embedding: Vec<T>) -> Result<Self> {
        let event_id = event_id.into();
        if !all_finite(&embedding) {
            return Err(Error::NonFinite(format!("event {event_id}")));
        }
        if embedding.iter().all(|v| v.is_zero()) {
            return Err(Error::DegenerateVector(format!("event {event_id}")));
        }
        Ok(EventEmbedding {
            event_id,
            embedding,
        })
    }
}

/// Which components of the method are switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Reliability selection skipped; every shot keeps weight one.
    NoReliability,
    /// Diversity weight forced to zero.
    NoDiversity,
    /// Semantic loss dropped (visual weight forced to one).
    NoSemantic,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoReliability,
        Ablation::NoDiversity,
        Ablation::NoSemantic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoReliability => "no_reliability",
            Ablation::NoDiversity => "no_diversity",
            Ablation::NoSemantic => "no_semantic",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation mode '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters<T> {
    /// Weight of the visual loss in the combined loss.
    pub alpha: T,
    /// Reliability (l1) weight of the selection regularizer.
    pub lambda: T,
    /// Diversity (l2) weight of the selection regularizer.
    pub gamma: T,
    /// Candidate related levels; a single entry means a fixed level.
    pub related_levels: Vec<usize>,
    /// Minimum fraction of each bag that stays selected.
    pub p_ratio: T,
    pub svm_c: T,
    pub max_outer_iters: usize,
    pub tol: T,
    pub seed: u64,
    pub ablation: Ablation,
    pub aggregation: Aggregation,
}

impl<T: Scalar> Default for Hyperparameters<T> {
    fn default() -> Self {
        Hyperparameters {
            alpha: T::of(0.5),
            lambda: T::of(0.1),
            gamma: T::of(0.1),
            related_levels: (1..=10).collect(),
            p_ratio: T::of(0.3),
            svm_c: T::one(),
            max_outer_iters: 50,
            tol: T::of(1e-6),
            seed: 0,
            ablation: Ablation::Full,
            aggregation: Aggregation::Max,
        }
    }
}

impl<T: Scalar> Hyperparameters<T> {
    pub const MAX_RELATED_LEVEL: usize = 10;

    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        let nonneg = |v: T| v.is_finite() && v >= T::zero();
        let positive = |v: T| v.is_finite() && v > T::zero();
        let mut problems = Vec::new();
        if !unit(self.alpha) {
            problems.push(format!("alpha = {} not in [0, 1]", self.alpha));
        }
        if !nonneg(self.lambda) {
            problems.push(format!("lambda = {} must be nonnegative", self.lambda));
        }
        if !nonneg(self.gamma) {
            problems.push(format!("gamma = {} must be nonnegative", self.gamma));
        }
        if !unit(self.p_ratio) {
            problems.push(format!("p_ratio = {} not in [0, 1]", self.p_ratio));
        }
        if !positive(self.svm_c) {
            problems.push(format!("svm_c = {} must be positive", self.svm_c));
        }
        if !positive(self.tol) {
            problems.push(format!("tol = {} must be positive", self.tol));
        }
        if self.max_outer_iters == 0 {
            problems.push("max_outer_iters must be positive".into());
        }
        if self.related_levels.is_empty() {
            problems.push("related level grid is empty".into());
        }
        if let Some(r) = self
            .related_levels
            .iter()
            .find(|&&r| r == 0 || r > Self::MAX_RELATED_LEVEL)
        {
            problems.push(format!(
                "related level {r} outside 1..={}",
                Self::MAX_RELATED_LEVEL
            ));
        }
        if let Aggregation::TopKMean(0) = self.aggregation {
            problems.push("top-k aggregation needs k >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    /// Copy with a single fixed related level.
    pub fn with_related_level(&self, r: usize) -> Self {
        Hyperparameters {
            related_levels: vec![r],
            ..self.clone()
        }
    }

    pub fn effective_alpha(&self) -> T {
        match self.ablation {
            Ablation::NoSemantic => T::one(),
            _ => self.alpha,
        }
    }

    pub fn effective_gamma(&self) -> T {
        match self.ablation {
            Ablation::NoDiversity => T::zero(),
            _ => self.gamma,
        }
    }

    /// Minimum number of selected shots for a bag: `ceil(ratio * m)`.
    pub fn min_count(&self, bag: &Bag<T>) -> usize {
        min_count(bag.p_ratio.unwrap_or(self.p_ratio), bag.len())
    }
}

pub(crate) fn min_count<T: Scalar>(ratio: T, m: usize) -> usize {
    let m_t = T::of(m as f64);
    // 0.3 * 10 evaluates to 3.0000000000000004; absorb rounding before the ceiling.
    let slack = T::epsilon() * m_t * T::of(4.0);
    let raw = (ratio * m_t - slack).ceil();
    raw.max(T::zero()).as_f64().min(m as f64) as usize
}

/// Linear decision function `w . x + b` over visual features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel<T> {
    pub w: Vec<T>,
    pub b: T,
}

impl<T: Scalar> ClassifierModel<T> {
    pub fn zeros(feature_dim: usize) -> Self {
        ClassifierModel {
            w: vec![T::zero(); feature_dim],
            b: T::zero(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w.len()
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.w) && self.b.is_finite()
    }

    pub fn negated(&self) -> Self {
        ClassifierModel {
            w: self.w.iter().map(|&v| -v).collect(),
            b: -self.b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagSelection {
    pub bag_id: String,
    pub q: Vec<bool>,
}

/// Per-bag reliable-shot indicators, in dataset bag order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReliabilityAssignment {
    pub per_bag: Vec<BagSelection>,
}

impl ReliabilityAssignment {
    pub fn all_selected<T>(dataset: &Dataset<T>) -> Self {
        ReliabilityAssignment {
            per_bag: dataset
                .bags
                .iter()
                .map(|b| BagSelection {
                    bag_id: b.id.clone(),
                    q: vec![true; b.len()],
                })
                .collect(),
        }
    }

    /// Total number of selected shots.
    pub fn selected_count(&self) -> usize {
        self.per_bag
            .iter()
            .map(|s| s.q.iter().filter(|&&v| v).count())
            .sum()
    }

    pub fn get(&self, bag_id: &str) -> Option<&[bool]> {
        self.per_bag
            .iter()
            .find(|s| s.bag_id == bag_id)
            .map(|s| s.q.as_slice())
    }

    /// Number of indicator entries that differ from `other`.
    pub fn changes_from(&self, other: &ReliabilityAssignment) -> usize {
        self.per_bag
            .iter()
            .zip(&other.per_bag)
            .map(|(a, b)| a.q.iter().zip(&b.q).filter(|(x, y)| x != y).count())
            .sum()
    }

    pub fn satisfies_min_counts<T: Scalar>(
        &self,
        dataset: &Dataset<T>,
        hyper: &Hyperparameters<T>,
    ) -> bool {
        self.per_bag.len() == dataset.bags.len()
            && self.per_bag.iter().zip(&dataset.bags).all(|(sel, bag)| {
                sel.q.len() == bag.len()
                    && sel.q.iter().filter(|&&v| v).count() >= hyper.min_count(bag)
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub bag_id: Option<String>,
    pub instance_id: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.bag_id, &self.instance_id) {
            (Some(b), Some(i)) => write!(f, "bag {b}, instance {i}: {}", self.message),
            (Some(b), None) => write!(f, "bag {b}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, bag: Option<&str>, instance: Option<&str>, message: impl Into<String>) {
        self.violations.push(Violation {
            bag_id: bag.map(str::to_owned),
            instance_id: instance.map(str::to_owned),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

/// Checks every invariant of a training dataset and lists all violations.
pub fn validate_dataset<T: Scalar>(dataset: &Dataset<T>) -> ValidationReport {
    let mut report = validate_structure(dataset);
    if dataset.count_label(Label::Positive) == 0 {
        report.push(None, None, "no positive bag");
    }
    if dataset.count_label(Label::Negative) == 0 {
        report.push(None, None, "no negative bag");
    }
    report
}

/// Shape, uniqueness and finiteness checks only; labels may all be one class.
pub fn validate_structure<T: Scalar>(dataset: &Dataset<T>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let (p, d) = (dataset.feature_dim, dataset.embedding_dim);
    if p == 0 {
        report.push(None, None, "feature dimension must be positive");
    }
    if d == 0 {
        report.push(None, None, "embedding dimension must be positive");
    }

    let mut bag_ids = HashSet::new();
    for bag in &dataset.bags {
        let b = Some(bag.id.as_str());
        if !bag_ids.insert(bag.id.as_str()) {
            report.push(b, None, "duplicate bag id");
        }
        if bag.instances.is_empty() {
            report.push(b, None, "bag has no instances");
        }
        if let Some(ratio) = bag.p_ratio {
            if !(ratio >= T::zero() && ratio <= T::one()) {
                report.push(b, None, format!("p_ratio override {ratio} not in [0, 1]"));
            }
        }
        let mut instance_ids = HashSet::new();
        for inst in &bag.instances {
            let i = Some(inst.id.as_str());
            if !instance_ids.insert(inst.id.as_str()) {
                report.push(b, i, "duplicate instance id within bag");
            }
            if inst.feature.len() != p {
                report.push(
                    b,
                    i,
                    format!("feature length {} != {p}", inst.feature.len()),
                );
            }
            if inst.text_embedding.len() != d {
                report.push(
                    b,
                    i,
                    format!("text embedding length {} != {d}", inst.text_embedding.len()),
                );
            }
            if !all_finite(&inst.feature) || !all_finite(&inst.text_embedding) {
                report.push(b, i, "non-finite component");
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: &str, p: usize, d: usize) -> Instance<f64> {
        Instance {
            id: id.into(),
            feature: vec![0.5; p],
            text_embedding: vec![1.0; d],
        }
    }

    fn bag(id: &str, label: Label, instances: Vec<Instance<f64>>) -> Bag<f64> {
        Bag {
            id: id.into(),
            label,
            instances,
            p_ratio: None,
        }
    }

    fn two_bags() -> Dataset<f64> {
        Dataset::from_bags(vec![
            bag(
                "pos",
                Label::Positive,
                vec![inst("a", 3, 2), inst("b", 3, 2)],
            ),
            bag("neg", Label::Negative, vec![inst("c", 3, 2)]),
        ])
        .unwrap()
    }

    #[test]
    fn conforming_dataset_is_ok() {
        let report = validate_dataset(&two_bags());
        assert!(report.is_ok(), "{report}");
    }

    #[test]
    fn only_positive_bags_is_reported() {
        let mut ds = two_bags();
        ds.bags.retain(|b| b.label.is_positive());
        let report = validate_dataset(&ds);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].message, "no negative bag");
    }

    #[test]
    fn short_feature_names_the_instance() {
        let mut ds = two_bags();
        ds.bags[0].instances[1].feature.pop();
        let report = validate_dataset(&ds);
        assert_eq!(report.violations.len(), 1);
        let v = &report.violations[0];
        assert_eq!(v.instance_id.as_deref(), Some("b"));
        assert_eq!(v.bag_id.as_deref(), Some("pos"));
        assert!(v.to_string().contains("instance b"));
    }

    #[test]
    fn duplicates_empty_bags_and_nan_are_reported() {
        let mut ds = two_bags();
        ds.bags[0].instances[1].id = "a".into();
        ds.bags[1].instances[0].text_embedding[0] = f64::NAN;
        ds.bags.push(bag("neg", Label::Negative, vec![]));
        let report = validate_dataset(&ds);
        let messages: Vec<_> = report
            .violations
            .iter()
            .map(|v| v.message.as_str())
            .collect();
        assert!(messages.contains(&"duplicate instance id within bag"));
        assert!(messages.contains(&"non-finite component"));
        assert!(messages.contains(&"duplicate bag id"));
        assert!(messages.contains(&"bag has no instances"));
    }

    #[test]
    fn validation_is_pure() {
        let mut ds = two_bags();
        ds.bags[1].instances[0].feature.push(1.0);
        assert_eq!(validate_dataset(&ds), validate_dataset(&ds));
    }

    #[test]
    fn min_count_is_ceiling_without_rounding_artifacts() {
        assert_eq!(min_count(0.3f64, 10), 3);
        assert_eq!(min_count(0.3f32, 10), 3);
        assert_eq!(min_count(0.3f64, 7), 3);
        assert_eq!(min_count(0.0f64, 5), 0);
        assert_eq!(min_count(1.0f64, 5), 5);
        assert_eq!(min_count(0.01f64, 1), 1);
        assert_eq!(min_count(0.7f64, 10), 7);
    }

    #[test]
    fn hyperparameter_ranges_are_checked() {
        let mut h = Hyperparameters::<f64>::default();
        assert!(h.validate().is_ok());
        h.alpha = 1.5;
        h.related_levels = vec![0];
        let err = h.validate().unwrap_err().to_string();
        assert!(err.contains("alpha"));
        assert!(err.contains("related level 0"));
        h.alpha = 0.5;
        h.related_levels.clear();
        assert!(h.validate().is_err());
    }

    #[test]
    fn ablation_overrides() {
        let h = Hyperparameters::<f64> {
            ablation: Ablation::NoSemantic,
            ..Default::default()
        };
        assert_eq!(h.effective_alpha(), 1.0);
        assert_eq!(h.effective_gamma(), 0.1);
        let h = Hyperparameters::<f64> {
            ablation: Ablation::NoDiversity,
            ..Default::default()
        };
        assert_eq!(h.effective_gamma(), 0.0);
        assert_eq!(h.effective_alpha(), 0.5);
        assert_eq!(
            "no_semantic".parse::<Ablation>().unwrap(),
            Ablation::NoSemantic
        );
        assert!("none".parse::<Ablation>().is_err());
    }
}
