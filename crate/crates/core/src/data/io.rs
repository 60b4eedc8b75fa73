//! Line-oriented dataset files, event files, model files and prediction lists.
//!
//! Numbers are written as shortest round-trip decimals, so `load(save(x)) == x`
//! bit for bit.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};
use crate::trainer::TrainedDetector;
use crate::types::{
    validate_structure, Bag, ClassifierModel, Dataset, EventEmbedding, Hyperparameters, Label,
};

/// Parses a dataset: one JSON bag object per line. Blank lines and lines starting
/// with `#` are skipped. Dimensions come from the first instance.
pub fn read_dataset<T: Scalar, R: Read>(reader: R) -> Result<Dataset<T>> {
    let mut bags: Vec<Bag<T>> = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut ids = HashSet::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bag: Bag<T> = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if !ids.insert(bag.id.clone()) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate bag id {}", bag.id),
            });
        }
        for inst in &bag.instances {
            let (p, d) = *dims.get_or_insert((inst.feature.len(), inst.text_embedding.len()));
            if inst.feature.len() != p {
                return Err(Error::dims(
                    format!("feature of bag {} instance {}", bag.id, inst.id),
                    p,
                    inst.feature.len(),
                ));
            }
            if inst.text_embedding.len() != d {
                return Err(Error::dims(
                    format!("text embedding of bag {} instance {}", bag.id, inst.id),
                    d,
                    inst.text_embedding.len(),
                ));
            }
        }
        bags.push(bag);
    }
    let (feature_dim, embedding_dim) =
        dims.ok_or_else(|| Error::Empty("dataset file has no instances".into()))?;
    let dataset = Dataset {
        bags,
        feature_dim,
        embedding_dim,
    };
    let report = validate_structure(&dataset);
    if !report.is_ok() {
        return Err(Error::InvalidDataset(report));
    }
    Ok(dataset)
}

pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    read_dataset(fs::File::open(path)?)
}

/// Writes `# `-prefixed header lines followed by one bag per line.
pub fn write_dataset<T: Scalar, W: Write>(
    dataset: &Dataset<T>,
    header: &[String],
    mut out: W,
) -> Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    for bag in &dataset.bags {
        serde_json::to_writer(&mut out, bag)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset<T: Scalar>(
    dataset: &Dataset<T>,
    header: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    write_dataset(
        dataset,
        header,
        std::io::BufWriter::new(fs::File::create(path)?),
    )
}

pub fn load_event<T: Scalar>(path: impl AsRef<Path>) -> Result<EventEmbedding<T>> {
    let raw: EventEmbedding<T> = serde_json::from_str(&fs::read_to_string(path)?)?;
    EventEmbedding::new(raw.event_id, raw.embedding)
}

pub fn save_event<T: Scalar>(event: &EventEmbedding<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string(event)? + "\n")?;
    Ok(())
}

pub const MODEL_FORMAT_VERSION: u64 = 1;

/// Contents of a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile<T> {
    pub format_version: u64,
    pub w: Vec<T>,
    pub b: T,
    pub chosen_r: usize,
    pub hyperparameters: Hyperparameters<T>,
}

impl<T: Scalar> ModelFile<T> {
    pub fn new(model: &ClassifierModel<T>, chosen_r: usize, hyper: &Hyperparameters<T>) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            w: model.w.clone(),
            b: model.b,
            chosen_r,
            hyperparameters: hyper.clone(),
        }
    }

    pub fn from_detector(detector: &TrainedDetector<T>) -> Self {
        Self::new(&detector.model, detector.chosen_r, &detector.hyper)
    }

    pub fn model(&self) -> ClassifierModel<T> {
        ClassifierModel {
            w: self.w.clone(),
            b: self.b,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        if !(all_finite(&self.w) && self.b.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::MalformedModel(e.to_string()))?;
        match value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
        {
            Some(MODEL_FORMAT_VERSION) => {}
            Some(other) => return Err(Error::UnknownVersion(other)),
            None => return Err(Error::MalformedModel("missing format_version".into())),
        }
        let file: ModelFile<T> =
            serde_json::from_value(value).map_err(|e| Error::MalformedModel(e.to_string()))?;
        if !(all_finite(&file.w) && file.b.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(file)
    }
}

/// Writes a model file; non-finite parameters are refused before anything is written.
pub fn persist_model<T: Scalar>(file: &ModelFile<T>, path: impl AsRef<Path>) -> Result<()> {
    let text = file.to_json()?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_model<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelFile<T>> {
    ModelFile::from_json(&fs::read_to_string(path)?)
}

pub fn save_ground_truth(truth: &BTreeMap<String, Label>, path: impl AsRef<Path>) -> Result<()> {
    let signs: BTreeMap<&str, i8> = truth.iter().map(|(k, &v)| (k.as_str(), v.into())).collect();
    fs::write(path, serde_json::to_string(&signs)? + "\n")?;
    Ok(())
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<BTreeMap<String, Label>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// `bag_id,score` lines in the given order.
pub fn write_predictions<T: Scalar, W: Write>(rows: &[(String, T)], mut out: W) -> Result<()> {
    for (id, score) in rows {
        writeln!(out, "{id},{}", serde_json::to_string(score)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions<T: Scalar, R: Read>(reader: R) -> Result<Vec<(String, T)>> {
    let mut rows = Vec::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: k + 1,
            message,
        };
        let (id, score) = trimmed
            .rsplit_once(',')
            .ok_or_else(|| parse_err("expected bag_id,score".into()))?;
        let score: T = serde_json::from_str(score.trim())
            .map_err(|e| parse_err(format!("bad score '{score}': {e}")))?;
        rows.push((id.trim().to_owned(), score));
    }
    Ok(rows)
}
