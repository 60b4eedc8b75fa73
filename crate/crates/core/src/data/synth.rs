//! Seeded synthetic bag corpora.
//!
//! Shot kinds:
//! - relevant: event-like visual feature, event-aligned text embedding;
//! - semantic-only (positive bags): background visual feature, event-aligned embedding;
//! - confuser: visual feature close to the event prototype, unrelated embedding; fills
//!   negative bags at `confuser_rate` and irrelevant positive-bag slots at
//!   `irrelevant_confuser_rate`;
//! - background: unrelated feature and embedding.
//!
//! Every draw comes from one `ChaCha8Rng` stream seeded with the config seed, so a
//! config reproduces the same corpus on any platform.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{Bag, Dataset, EventEmbedding, Instance, Label};

/// Identifies the pseudorandom stream; written into generated dataset headers.
pub const GENERATOR_TAG: &str =
    "vsgmil-synth v1; rng ChaCha8Rng (rand_chacha 0.9); normal rand_distr 0.5 StandardNormal; shuffle rand 0.9";

/// Norm of the visual event prototype, in units of background feature spread.
const PROTOTYPE_NORM: f64 = 3.0;
/// Cosine between the event prototype and the confuser prototype.
const CONFUSER_OVERLAP: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_pos_bags: usize,
    pub num_neg_bags: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub feature_dim: usize,
    pub embedding_dim: usize,
    /// Fraction of relevant shots per positive bag.
    pub relevant_fraction: f64,
    pub feature_noise: f64,
    pub embedding_noise: f64,
    /// Fraction of negative-bag shots that are visual confusers.
    pub confuser_rate: f64,
    /// Fraction of relevant shots whose visual feature is background.
    pub semantic_only_rate: f64,
    /// Fraction of irrelevant positive-bag shots drawn as confusers instead of background.
    #[serde(default)]
    pub irrelevant_confuser_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_pos_bags: 20,
            num_neg_bags: 60,
            min_instances: 5,
            max_instances: 10,
            feature_dim: 16,
            embedding_dim: 12,
            relevant_fraction: 0.7,
            feature_noise: 1.0,
            embedding_noise: 0.5,
            confuser_rate: 0.2,
            semantic_only_rate: 0.15,
            irrelevant_confuser_rate: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_pos_bags == 0 || self.num_neg_bags == 0 {
            problems.push("bag counts must be positive".to_string());
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            problems.push(format!(
                "instance range [{}, {}] invalid",
                self.min_instances, self.max_instances
            ));
        }
        if self.feature_dim == 0 || self.embedding_dim == 0 {
            problems.push("dimensions must be positive".into());
        }
        if !(self.relevant_fraction > 0.0 && self.relevant_fraction <= 1.0) {
            problems.push(format!(
                "relevant_fraction {} not in (0, 1]",
                self.relevant_fraction
            ));
        }
        for (name, v) in [
            ("feature_noise", self.feature_noise),
            ("embedding_noise", self.embedding_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(format!("{name} {v} must be nonnegative"));
            }
        }
        for (name, v) in [
            ("confuser_rate", self.confuser_rate),
            ("semantic_only_rate", self.semantic_only_rate),
            ("irrelevant_confuser_rate", self.irrelevant_confuser_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{name} {v} not in [0, 1]"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShotKind {
    Relevant,
    SemanticOnly,
    Confuser,
    Background,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset<T> {
    pub dataset: Dataset<T>,
    pub event: EventEmbedding<T>,
    /// True relevance of every instance id (diagnostics only).
    pub ground_truth: BTreeMap<String, Label>,
}

impl<T: Scalar> SyntheticDataset<T> {
    pub fn header(config: &SyntheticConfig) -> Vec<String> {
        vec![
            GENERATOR_TAG.to_string(),
            format!(
                "config {}",
                serde_json::to_string(config).expect("config serializes")
            ),
        ]
    }
}

struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    fn gaussian(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    fn unit(&mut self, n: usize) -> Vec<f64> {
        loop {
            let v = self.gaussian(n);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    fn around(&mut self, center: &[f64], noise: f64, scale: f64) -> Vec<f64> {
        center
            .iter()
            .map(|&c| c + noise * scale * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

fn cast<T: Scalar>(v: Vec<f64>) -> Vec<T> {
    v.into_iter().map(T::of).collect()
}

/// Draws a corpus from `config`.
pub fn generate_synthetic<T: Scalar>(config: &SyntheticConfig) -> Result<SyntheticDataset<T>> {
    config.validate()?;
    let p = config.feature_dim;
    let d = config.embedding_dim;
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
    };

    let event = s.unit(d);
    let prototype: Vec<f64> = s.unit(p).into_iter().map(|v| v * PROTOTYPE_NORM).collect();
    // Confuser prototype: same norm, fixed cosine with the event prototype.
    let confuser_proto: Vec<f64> = {
        let r = s.unit(p);
        let along: f64 = r.iter().zip(&prototype).map(|(a, b)| a * b).sum::<f64>()
            / (PROTOTYPE_NORM * PROTOTYPE_NORM);
        let ortho: Vec<f64> = r
            .iter()
            .zip(&prototype)
            .map(|(a, b)| a - along * b)
            .collect();
        let on = ortho.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let sin = (1.0 - CONFUSER_OVERLAP * CONFUSER_OVERLAP).sqrt();
        prototype
            .iter()
            .zip(&ortho)
            .map(|(a, o)| CONFUSER_OVERLAP * a + sin * PROTOTYPE_NORM * o / on)
            .collect()
    };
    let embed_scale = 1.0 / (d as f64).sqrt();

    let mut bags = Vec::with_capacity(config.num_pos_bags + config.num_neg_bags);
    let mut truth = BTreeMap::new();
    let plan = (0..config.num_pos_bags)
        .map(|i| (Label::Positive, format!("pos{i:04}")))
        .chain((0..config.num_neg_bags).map(|i| (Label::Negative, format!("neg{i:04}"))));
    for (label, bag_id) in plan {
        let m = s
            .rng
            .random_range(config.min_instances..=config.max_instances);
        let mut kinds = Vec::with_capacity(m);
        if label.is_positive() {
            let relevant = ((config.relevant_fraction * m as f64).round() as usize).clamp(1, m);
            for k in 0..relevant {
                let semantic_only = s.rng.random_bool(config.semantic_only_rate);
                // The first relevant shot always carries the visual pattern.
                kinds.push(if semantic_only && k > 0 {
                    ShotKind::SemanticOnly
                } else {
                    ShotKind::Relevant
                });
            }
            while kinds.len() < m {
                kinds.push(if s.rng.random_bool(config.irrelevant_confuser_rate) {
                    ShotKind::Confuser
                } else {
                    ShotKind::Background
                });
            }
        } else {
            for _ in 0..m {
                kinds.push(if s.rng.random_bool(config.confuser_rate) {
                    ShotKind::Confuser
                } else {
                    ShotKind::Background
                });
            }
        }
        kinds.shuffle(&mut s.rng);

        let mut instances = Vec::with_capacity(m);
        for (j, kind) in kinds.into_iter().enumerate() {
            let feature = match kind {
                ShotKind::Relevant => s.around(&prototype, config.feature_noise, 1.0),
                ShotKind::Confuser => s.around(&confuser_proto, config.feature_noise, 1.0),
                ShotKind::SemanticOnly | ShotKind::Background => s.gaussian(p),
            };
            let text_embedding = match kind {
                ShotKind::Relevant | ShotKind::SemanticOnly => {
                    s.around(&event, config.embedding_noise, embed_scale)
                }
                ShotKind::Confuser | ShotKind::Background => s.unit(d),
            };
            let id = format!("{bag_id}_s{j:02}");
            let relevant = matches!(kind, ShotKind::Relevant | ShotKind::SemanticOnly);
            truth.insert(
                id.clone(),
                if relevant {
                    Label::Positive
                } else {
                    Label::Negative
                },
            );
            instances.push(Instance {
                id,
                feature: cast(feature),
                text_embedding: cast(text_embedding),
            });
        }
        bags.push(Bag {
            id: bag_id,
            label,
            instances,
            p_ratio: None,
        });
    }

    Ok(SyntheticDataset {
        dataset: Dataset {
            bags,
            feature_dim: p,
            embedding_dim: d,
        },
        event: EventEmbedding::new(format!("synthetic-{}", config.seed), cast(event))?,
        ground_truth: truth,
    })
}

/// Stratified split: `fraction` of each class goes to the second part.
///
/// Bags keep their relative order inside each part. Each class keeps at least one bag
/// on each side when it has two or more.
pub fn split_stratified<T: Scalar>(
    dataset: &Dataset<T>,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "split fraction {fraction} not in (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = vec![false; dataset.bags.len()];
    for label in [Label::Positive, Label::Negative] {
        let mut idx: Vec<usize> = (0..dataset.bags.len())
            .filter(|&k| dataset.bags[k].label == label)
            .collect();
        let n = idx.len();
        let mut take = (fraction * n as f64).round() as usize;
        if n >= 2 {
            take = take.clamp(1, n - 1);
        } else {
            take = 0;
        }
        idx.shuffle(&mut rng);
        for &k in idx.iter().take(take) {
            held[k] = true;
        }
    }
    let part = |want: bool| Dataset {
        bags: dataset
            .bags
            .iter()
            .zip(&held)
            .filter(|(_, &h)| h == want)
            .map(|(b, _)| b.clone())
            .collect(),
        feature_dim: dataset.feature_dim,
        embedding_dim: dataset.embedding_dim,
    };
    Ok((part(false), part(true)))
}
