//! Visual hinge loss and the combined visual-semantic guided loss.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::semantics::{semantic_labels_for_bag, semantic_loss};
use crate::svm::decision_value;
use crate::types::{Bag, ClassifierModel, Hyperparameters, Label};

/// Hinge loss `max(0, 1 - y (w . x + b))`.
pub fn visual_loss<T: Scalar>(model: &ClassifierModel<T>, x: &[T], y: Label) -> Result<T> {
    let f = decision_value(model, x)?;
    Ok(hinge(y.sign::<T>() * f))
}

#[inline]
pub(crate) fn hinge<T: Scalar>(margin: T) -> T {
    (T::one() - margin).max(T::zero())
}

/// Per-shot losses of one bag with their visual and semantic parts.
#[derive(Debug, Clone, PartialEq)]
pub struct BagLossVector<T> {
    pub bag_id: String,
    pub losses: Vec<T>,
    pub visual_part: Vec<T>,
    pub semantic_part: Vec<T>,
}

/// Semantic losses of a bag for related level `r`, with every instance labeled as its bag.
///
/// These do not depend on the classifier, so the trainer computes them once per `r`.
pub fn semantic_bag_losses<T: Scalar>(label: Label, similarities: &[T], r: usize) -> Vec<T> {
    semantic_labels_for_bag(similarities, r)
        .into_iter()
        .zip(similarities)
        .map(|(predicted, &s)| semantic_loss(predicted, label, s))
        .collect()
}

pub(crate) fn visual_bag_losses<T: Scalar>(model: &ClassifierModel<T>, bag: &Bag<T>) -> Vec<T> {
    let y = bag.label.sign::<T>();
    bag.instances
        .iter()
        .map(|inst| hinge(y * raw_decision(model, &inst.feature)))
        .collect()
}

#[inline]
pub(crate) fn raw_decision<T: Scalar>(model: &ClassifierModel<T>, x: &[T]) -> T {
    crate::scalar::dot(&model.w, x) + model.b
}

pub(crate) fn mix<T: Scalar>(alpha: T, visual: &[T], semantic: &[T]) -> Vec<T> {
    let beta = T::one() - alpha;
    visual
        .iter()
        .zip(semantic)
        .map(|(&v, &s)| alpha * v + beta * s)
        .collect()
}

/// Combined loss `alpha * L_visual + (1 - alpha) * L_semantic` for every shot of a bag,
/// using the first configured related level. `alpha` is forced to one under
/// [`Ablation::NoSemantic`](crate::types::Ablation::NoSemantic).
pub fn combined_bag_losses<T: Scalar>(
    model: &ClassifierModel<T>,
    bag: &Bag<T>,
    similarities: &[T],
    hyper: &Hyperparameters<T>,
) -> Result<BagLossVector<T>> {
    if similarities.len() != bag.len() {
        return Err(Error::dims(
            format!("similarities of bag {}", bag.id),
            bag.len(),
            similarities.len(),
        ));
    }
    if let Some(inst) = bag
        .instances
        .iter()
        .find(|i| i.feature.len() != model.feature_dim())
    {
        return Err(Error::dims(
            format!("feature of instance {}", inst.id),
            model.feature_dim(),
            inst.feature.len(),
        ));
    }
    let r = *hyper
        .related_levels
        .first()
        .ok_or_else(|| Error::Empty("related level grid".into()))?;
    let visual_part = visual_bag_losses(model, bag);
    let semantic_part = semantic_bag_losses(bag.label, similarities, r);
    Ok(BagLossVector {
        bag_id: bag.id.clone(),
        losses: mix(hyper.effective_alpha(), &visual_part, &semantic_part),
        visual_part,
        semantic_part,
    })
}
