//! Alternating optimization of the classifier and the per-bag reliability indicators.
//!
//! For a fixed related level `r` the trainer minimizes
//!
//! ```text
//! J(w, b, q) = alpha / (2c) |w|^2
//!            + sum_i [ q_i . L_i(w, b) - lambda |q_i|_1 - gamma |q_i|_2 ]
//! ```
//!
//! where `L_ij = alpha * hinge_ij + (1 - alpha) * semantic_ij`. With `q` fixed,
//! minimizing over `(w, b)` is exactly the weighted SVM with trade-off `c`; with
//! `(w, b)` fixed, `q` decouples into independent per-bag selection problems. The
//! ridge term is what the SVM step adds to the bare weighted loss; including it
//! makes `J` the quantity both steps decrease, so the recorded sequence is
//! non-increasing. [`global_objective`] is the bare sum without the ridge term.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{average_precision, RankedPredictions};
use crate::loss::{mix, semantic_bag_losses, visual_bag_losses};
use crate::scalar::{norm_squared, Scalar};
use crate::selector::{ascending_order, select_reliable, selection_objective, SelectionProblem};
use crate::semantics::SimilarityTable;
use crate::svm::{solve_weighted_svm, solve_weighted_svm_warm, WeightedTrainingSet};
use crate::types::{
    Ablation, BagSelection, ClassifierModel, Dataset, EventEmbedding, Hyperparameters, Label,
    ReliabilityAssignment,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord<T> {
    pub iteration: usize,
    /// Alternation objective `J` after the selection step.
    pub objective: T,
    /// Bare weighted loss plus selection regularizer (no ridge term).
    pub loss_objective: T,
    pub selected_count: usize,
    pub q_changes: usize,
    /// Classes with no selected shot whose lowest-loss shots were restored for the SVM step.
    pub restored_classes: Vec<Label>,
    /// The SVM candidate did not lower `J` and the previous classifier was kept.
    pub kept_previous_model: bool,
    pub svm_iterations: usize,
    pub svm_gap: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord<T> {
    pub r: usize,
    pub final_objective: T,
    pub outer_iterations: usize,
    pub validation_ap: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory<T> {
    /// Outer iterations of the chosen related level.
    pub iterations: Vec<IterationRecord<T>>,
    /// One entry per candidate related level.
    pub per_level: Vec<LevelRecord<T>>,
}

impl<T: Scalar> TrainingHistory<T> {
    pub fn objectives(&self) -> Vec<T> {
        self.iterations.iter().map(|r| r.objective).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDetector<T> {
    pub model: ClassifierModel<T>,
    pub reliability: ReliabilityAssignment,
    pub chosen_r: usize,
    pub history: TrainingHistory<T>,
    pub hyper: Hyperparameters<T>,
}

/// Sum over bags of `q_i . L_i - lambda |q_i|_1 - gamma |q_i|_2` at the first
/// configured related level, with the ablation overrides applied.
pub fn global_objective<T: Scalar>(
    dataset: &Dataset<T>,
    model: &ClassifierModel<T>,
    reliability: &ReliabilityAssignment,
    similarities: &SimilarityTable<T>,
    hyper: &Hyperparameters<T>,
) -> Result<T> {
    let r = *hyper
        .related_levels
        .first()
        .ok_or_else(|| Error::Empty("related level grid".into()))?;
    check_alignment(dataset, reliability, similarities)?;
    let semantic = semantic_losses(dataset, similarities, r);
    Ok(loss_objective(
        dataset,
        model,
        reliability,
        &semantic,
        hyper.effective_alpha(),
        hyper.lambda,
        hyper.effective_gamma(),
    ))
}

/// [`global_objective`] plus the ridge term `alpha / (2c) |w|^2`.
pub fn alternation_objective<T: Scalar>(
    dataset: &Dataset<T>,
    model: &ClassifierModel<T>,
    reliability: &ReliabilityAssignment,
    similarities: &SimilarityTable<T>,
    hyper: &Hyperparameters<T>,
) -> Result<T> {
    let base = global_objective(dataset, model, reliability, similarities, hyper)?;
    Ok(base + ridge(model, hyper.effective_alpha(), hyper.svm_c))
}

fn ridge<T: Scalar>(model: &ClassifierModel<T>, alpha: T, c: T) -> T {
    alpha * norm_squared(&model.w) / (T::of(2.0) * c)
}

fn check_alignment<T: Scalar>(
    dataset: &Dataset<T>,
    reliability: &ReliabilityAssignment,
    similarities: &SimilarityTable<T>,
) -> Result<()> {
    for (k, bag) in dataset.bags.iter().enumerate() {
        let sel = reliability
            .per_bag
            .get(k)
            .filter(|s| s.bag_id == bag.id)
            .ok_or_else(|| {
                Error::InvalidConfig(format!("no reliability entry for bag {}", bag.id))
            })?;
        let sim = similarities
            .per_bag
            .get(k)
            .filter(|s| s.bag_id == bag.id)
            .ok_or_else(|| Error::InvalidConfig(format!("no similarities for bag {}", bag.id)))?;
        if sel.q.len() != bag.len() {
            return Err(Error::dims(
                format!("reliability of bag {}", bag.id),
                bag.len(),
                sel.q.len(),
            ));
        }
        if sim.similarities.len() != bag.len() {
            return Err(Error::dims(
                format!("similarities of bag {}", bag.id),
                bag.len(),
                sim.similarities.len(),
            ));
        }
    }
    Ok(())
}

fn semantic_losses<T: Scalar>(
    dataset: &Dataset<T>,
    similarities: &SimilarityTable<T>,
    r: usize,
) -> Vec<Vec<T>> {
    dataset
        .bags
        .iter()
        .zip(&similarities.per_bag)
        .map(|(bag, sim)| semantic_bag_losses(bag.label, &sim.similarities, r))
        .collect()
}

fn combined_losses<T: Scalar>(
    dataset: &Dataset<T>,
    model: &ClassifierModel<T>,
    semantic: &[Vec<T>],
    alpha: T,
) -> Vec<Vec<T>> {
    dataset
        .bags
        .par_iter()
        .zip(semantic)
        .map(|(bag, sem)| mix(alpha, &visual_bag_losses(model, bag), sem))
        .collect()
}

fn loss_objective<T: Scalar>(
    dataset: &Dataset<T>,
    model: &ClassifierModel<T>,
    reliability: &ReliabilityAssignment,
    semantic: &[Vec<T>],
    alpha: T,
    lambda: T,
    gamma: T,
) -> T {
    combined_losses(dataset, model, semantic, alpha)
        .iter()
        .zip(&reliability.per_bag)
        .map(|(losses, sel)| selection_objective(losses, &sel.q, lambda, gamma))
        .fold(T::zero(), |acc, v| acc + v)
}

/// Trains a detector at one related level `r`.
pub fn train_for_r<T: Scalar>(
    dataset: &Dataset<T>,
    event: &EventEmbedding<T>,
    hyper: &Hyperparameters<T>,
    r: usize,
) -> Result<TrainedDetector<T>> {
    let hyper = hyper.with_related_level(r);
    hyper.validate()?;
    let report = crate::types::validate_dataset(dataset);
    if !report.is_ok() {
        return Err(Error::InvalidDataset(report));
    }
    let similarities = SimilarityTable::compute(dataset, event)?;
    alternate(dataset, &similarities, &hyper, r)
}

fn alternate<T: Scalar>(
    dataset: &Dataset<T>,
    similarities: &SimilarityTable<T>,
    hyper: &Hyperparameters<T>,
    r: usize,
) -> Result<TrainedDetector<T>> {
    let alpha = hyper.effective_alpha();
    let gamma = hyper.effective_gamma();
    let lambda = hyper.lambda;
    let c = hyper.svm_c;
    let semantic = semantic_losses(dataset, similarities, r);
    let min_counts: Vec<usize> = dataset.bags.iter().map(|b| hyper.min_count(b)).collect();

    let objective_at = |model: &ClassifierModel<T>, q: &ReliabilityAssignment| {
        loss_objective(dataset, model, q, &semantic, alpha, lambda, gamma)
    };

    let mut q = ReliabilityAssignment::all_selected(dataset);
    let mut model: Option<ClassifierModel<T>> = None;
    let mut losses: Option<Vec<Vec<T>>> = None;
    let mut records: Vec<IterationRecord<T>> = Vec::new();
    // Dual variables per (bag, instance), carried between outer iterations.
    let mut duals: Option<Vec<Vec<T>>> = None;

    for iteration in 1..=hyper.max_outer_iters {
        // (w, b) step.
        let (weights, restored_classes) = svm_weights(dataset, &q, losses.as_deref(), &min_counts);
        let mut rows = WeightedTrainingSet::new();
        let mut slots = Vec::new();
        for (i, (bag, w_bag)) in dataset.bags.iter().zip(&weights).enumerate() {
            for (j, (inst, &on)) in bag.instances.iter().zip(w_bag).enumerate() {
                if on {
                    rows.push(&inst.feature, bag.label, T::one());
                    slots.push((i, j));
                }
            }
        }
        let solution = match &duals {
            Some(d) => {
                let start: Vec<T> = slots.iter().map(|&(i, j)| d[i][j]).collect();
                solve_weighted_svm_warm(&rows, c, hyper.tol, &start)?
            }
            None => solve_weighted_svm(&rows, c, hyper.tol)?,
        };
        let mut carried: Vec<Vec<T>> = dataset
            .bags
            .iter()
            .map(|b| vec![T::zero(); b.instances.len()])
            .collect();
        for (&(i, j), &a) in slots.iter().zip(&solution.dual) {
            carried[i][j] = a;
        }
        duals = Some(carried);
        let mut kept_previous_model = false;
        let current = match model.take() {
            Some(previous) => {
                let j_new = objective_at(&solution.model, &q) + ridge(&solution.model, alpha, c);
                let j_old = objective_at(&previous, &q) + ridge(&previous, alpha, c);
                if j_new <= j_old {
                    solution.model.clone()
                } else {
                    kept_previous_model = true;
                    previous
                }
            }
            None => solution.model.clone(),
        };

        // q step.
        let step_losses = combined_losses(dataset, &current, &semantic, alpha);
        let next_q = if hyper.ablation == Ablation::NoReliability {
            q.clone()
        } else {
            let per_bag = dataset
                .bags
                .par_iter()
                .zip(&step_losses)
                .zip(&min_counts)
                .map(|((bag, bag_losses), &min_count)| BagSelection {
                    bag_id: bag.id.clone(),
                    q: select_reliable(&SelectionProblem {
                        losses: bag_losses.clone(),
                        lambda,
                        gamma,
                        min_count,
                    }),
                })
                .collect();
            ReliabilityAssignment { per_bag }
        };

        let loss_obj = step_losses
            .iter()
            .zip(&next_q.per_bag)
            .map(|(l, sel)| selection_objective(l, &sel.q, lambda, gamma))
            .fold(T::zero(), |acc, v| acc + v);
        let objective = loss_obj + ridge(&current, alpha, c);
        let q_changes = next_q.changes_from(&q);
        let relative_change_small = records.last().is_some_and(|prev| {
            let scale = prev.objective.abs().max(T::min_positive_value());
            (prev.objective - objective).abs() < hyper.tol * scale
        });
        records.push(IterationRecord {
            iteration,
            objective,
            loss_objective: loss_obj,
            selected_count: next_q.selected_count(),
            q_changes,
            restored_classes,
            kept_previous_model,
            svm_iterations: solution.iterations,
            svm_gap: solution.gap(),
        });
        q = next_q;
        model = Some(current);
        losses = Some(step_losses);
        if q_changes == 0 || relative_change_small {
            break;
        }
    }

    let model = model.expect("at least one outer iteration runs");
    let final_objective = records.last().map_or(T::zero(), |r| r.objective);
    let outer_iterations = records.len();
    Ok(TrainedDetector {
        model,
        reliability: q,
        chosen_r: r,
        history: TrainingHistory {
            iterations: records,
            per_level: vec![LevelRecord {
                r,
                final_objective,
                outer_iterations,
                validation_ap: None,
            }],
        },
        hyper: hyper.clone(),
    })
}

/// SVM row weights for the current selection. For a class with no selected shot,
/// each bag of that class contributes its `max(1, min_count)` lowest-loss shots.
fn svm_weights<T: Scalar>(
    dataset: &Dataset<T>,
    q: &ReliabilityAssignment,
    losses: Option<&[Vec<T>]>,
    min_counts: &[usize],
) -> (Vec<Vec<bool>>, Vec<Label>) {
    let mut weights: Vec<Vec<bool>> = q.per_bag.iter().map(|s| s.q.clone()).collect();
    let has_selected = |label: Label| {
        dataset
            .bags
            .iter()
            .zip(&weights)
            .any(|(bag, w)| bag.label == label && w.iter().any(|&v| v))
    };
    let missing: Vec<Label> = [Label::Positive, Label::Negative]
        .into_iter()
        .filter(|&label| !has_selected(label))
        .collect();
    for &label in &missing {
        for (k, bag) in dataset.bags.iter().enumerate() {
            if bag.label != label {
                continue;
            }
            let take = min_counts[k].max(1);
            let order = match losses {
                Some(l) => ascending_order(&l[k]),
                None => (0..bag.len()).collect(),
            };
            for &j in order.iter().take(take) {
                weights[k][j] = true;
            }
        }
    }
    (weights, missing)
}

/// Trains one detector per candidate related level and keeps the one with the highest
/// validation average precision; ties go to the smaller level.
pub fn select_related_level<T: Scalar>(
    dataset: &Dataset<T>,
    validation: &Dataset<T>,
    event: &EventEmbedding<T>,
    hyper: &Hyperparameters<T>,
) -> Result<TrainedDetector<T>> {
    hyper.validate()?;
    let report = crate::types::validate_dataset(dataset);
    if !report.is_ok() {
        return Err(Error::InvalidDataset(report));
    }
    let train_ids: HashSet<&str> = dataset.bags.iter().map(|b| b.id.as_str()).collect();
    if let Some(shared) = validation
        .bags
        .iter()
        .find(|b| train_ids.contains(b.id.as_str()))
    {
        return Err(Error::InvalidConfig(format!(
            "bag {} appears in both training and validation data",
            shared.id
        )));
    }
    if validation.count_label(Label::Positive) == 0 {
        return Err(Error::UndefinedMetric(
            "validation data has no positive bag".into(),
        ));
    }
    let mut levels = hyper.related_levels.clone();
    levels.sort_unstable();
    levels.dedup();

    let similarities = SimilarityTable::compute(dataset, event)?;
    let candidates = levels
        .par_iter()
        .map(|&r| {
            let detector = alternate(dataset, &similarities, &hyper.with_related_level(r), r)?;
            let preds =
                RankedPredictions::score(&detector.model, &validation.bags, hyper.aggregation)?;
            Ok((detector, average_precision(&preds)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let per_level: Vec<LevelRecord<T>> = candidates
        .iter()
        .map(|(d, ap)| LevelRecord {
            validation_ap: Some(*ap),
            ..d.history.per_level[0].clone()
        })
        .collect();
    let best =
        candidates.iter().enumerate().fold(
            0,
            |best, (k, (_, ap))| if *ap > candidates[best].1 { k } else { best },
        );
    let (mut detector, _) = candidates.into_iter().nth(best).expect("grid is nonempty");
    detector.history.per_level = per_level;
    detector.hyper = Hyperparameters {
        related_levels: hyper.related_levels.clone(),
        ..detector.hyper
    };
    Ok(detector)
}
