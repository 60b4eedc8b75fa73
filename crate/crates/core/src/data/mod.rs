//! Serialization and the synthetic corpus generator.

pub mod io;
pub mod synth;

pub use io::{
    load_dataset, load_event, load_ground_truth, persist_model, read_dataset, read_model,
    read_predictions, save_dataset, save_event, save_ground_truth, write_dataset,
    write_predictions, ModelFile, MODEL_FORMAT_VERSION,
};
pub use synth::{
    generate_synthetic, split_stratified, SyntheticConfig, SyntheticDataset, GENERATOR_TAG,
};
