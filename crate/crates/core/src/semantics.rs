//! Instance-event similarity, rank-threshold semantic labels and the semantic loss.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::{dot, norm_squared, Scalar};
use crate::types::{Dataset, EventEmbedding, Instance, Label};

/// Cosine similarity between a shot's text embedding and the event embedding,
/// mapped from [-1, 1] onto [0, 1] by `(1 + cos) / 2`.
pub fn instance_event_similarity<T: Scalar>(
    instance: &Instance<T>,
    event: &EventEmbedding<T>,
) -> Result<T> {
    let t = &instance.text_embedding;
    let e = &event.embedding;
    if t.len() != e.len() {
        return Err(Error::dims(
            format!("text embedding of instance {}", instance.id),
            e.len(),
            t.len(),
        ));
    }
    let nt = norm_squared(t);
    if nt.is_zero() {
        return Err(Error::DegenerateVector(format!(
            "text embedding of instance {}",
            instance.id
        )));
    }
    let ne = norm_squared(e);
    if ne.is_zero() {
        return Err(Error::DegenerateVector(format!("event {}", event.event_id)));
    }
    // sqrt(nt * ne) is exactly nt when t == e, so identical vectors give exactly 1.
    let cos = (dot(t, e) / (nt * ne).sqrt()).max(-T::one()).min(T::one());
    Ok((T::one() + cos) / (T::one() + T::one()))
}

/// Rank of every entry under descending order, 1-based; ties go to the lower index.
pub fn within_bag_ranks<T: Scalar>(similarities: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..similarities.len()).collect();
    // Stable sort keeps ascending index among equal similarities.
    order.sort_by(|&a, &b| {
        similarities[b]
            .partial_cmp(&similarities[a])
            .unwrap_or(Ordering::Equal)
    });
    let mut ranks = vec![0; similarities.len()];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = pos + 1;
    }
    ranks
}

/// Predicts `+1` for the `r` most event-similar shots of a bag and `-1` for the rest.
pub fn semantic_labels_for_bag<T: Scalar>(similarities: &[T], r: usize) -> Vec<Label> {
    labels_from_ranks(&within_bag_ranks(similarities), r)
}

pub fn labels_from_ranks(ranks: &[usize], r: usize) -> Vec<Label> {
    ranks
        .iter()
        .map(|&rank| {
            if rank <= r {
                Label::Positive
            } else {
                Label::Negative
            }
        })
        .collect()
}

/// Penalty for a semantic prediction that disagrees with the instance label.
///
/// Zero when `predicted == y`. Otherwise `y (1 - 2s) + 1`: `2 - 2s` for a positive
/// instance predicted negative and `2s` for a negative one predicted positive.
pub fn semantic_loss<T: Scalar>(predicted: Label, y: Label, s: T) -> T {
    if predicted == y {
        return T::zero();
    }
    let two = T::one() + T::one();
    y.sign::<T>() * (T::one() - two * s) + T::one()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagSimilarities<T> {
    pub bag_id: String,
    pub similarities: Vec<T>,
    pub ranks: Vec<usize>,
}

impl<T: Scalar> BagSimilarities<T> {
    pub fn semantic_labels(&self, r: usize) -> Vec<Label> {
        labels_from_ranks(&self.ranks, r)
    }
}

/// Similarities and within-bag ranks for every shot of a dataset, in bag order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTable<T> {
    pub per_bag: Vec<BagSimilarities<T>>,
}

impl<T: Scalar> SimilarityTable<T> {
    pub fn compute(dataset: &Dataset<T>, event: &EventEmbedding<T>) -> Result<Self> {
        let per_bag = dataset
            .bags
            .iter()
            .map(|bag| {
                let similarities = bag
                    .instances
                    .iter()
                    .map(|inst| instance_event_similarity(inst, event))
                    .collect::<Result<Vec<_>>>()?;
                Ok(BagSimilarities {
                    bag_id: bag.id.clone(),
                    ranks: within_bag_ranks(&similarities),
                    similarities,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SimilarityTable { per_bag })
    }

    pub fn get(&self, bag_id: &str) -> Option<&BagSimilarities<T>> {
        self.per_bag.iter().find(|b| b.bag_id == bag_id)
    }
}
