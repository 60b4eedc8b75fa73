//! Multi-instance event detection over bags of video shots.
//!
//! A detector is a linear SVM over shot-level visual features, trained jointly with
//! binary per-shot reliability indicators. Each shot's loss mixes the visual hinge
//! loss with a semantic penalty derived from how well the shot's text embedding
//! matches the event description. Reliable shots are picked per bag by a
//! self-paced rule with an l1 (reliability) and l2 (diversity) reward.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below name the common double-precision instantiations.

pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod scalar;
pub mod selector;
pub mod semantics;
pub mod svm;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use eval::{
    average_precision, bag_score, mean_average_precision, Aggregation, Prediction,
    RankedPredictions,
};
pub use loss::{combined_bag_losses, visual_loss, BagLossVector};
pub use scalar::Scalar;
pub use selector::{brute_force_select, select_reliable, selection_objective, SelectionProblem};
pub use semantics::{
    instance_event_similarity, semantic_labels_for_bag, semantic_loss, SimilarityTable,
};
pub use svm::{decision_value, train_weighted_svm, WeightedTrainingSet};
pub use trainer::{
    alternation_objective, global_objective, select_related_level, train_for_r, TrainedDetector,
    TrainingHistory,
};
pub use types::{
    validate_dataset, Ablation, Bag, ClassifierModel, Dataset, EventEmbedding, Hyperparameters,
    Instance, Label, ReliabilityAssignment, ValidationReport,
};

pub type Instance64 = Instance<f64>;
pub type Bag64 = Bag<f64>;
pub type Dataset64 = Dataset<f64>;
pub type EventEmbedding64 = EventEmbedding<f64>;
pub type Hyperparameters64 = Hyperparameters<f64>;
pub type ClassifierModel64 = ClassifierModel<f64>;
pub type TrainedDetector64 = TrainedDetector<f64>;

pub type Dataset32 = Dataset<f32>;
pub type Hyperparameters32 = Hyperparameters<f32>;
pub type ClassifierModel32 = ClassifierModel<f32>;
pub type TrainedDetector32 = TrainedDetector<f32>;
