//! Batch front end: `synth`, `train`, `predict`, `eval`, `ablate`, `select-check`.
//!
//! Every report is JSON so scripts can parse it. Exit codes: 0 success, 1 usage
//! error, 2 data or validation error, 3 infeasible training set.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use vsgmil::data::{
    generate_synthetic, load_dataset, load_event, load_ground_truth, persist_model, read_model,
    read_predictions, save_dataset, save_event, save_ground_truth, split_stratified,
    write_predictions, ModelFile, SyntheticConfig, SyntheticDataset,
};
use vsgmil::{
    average_precision, brute_force_select, mean_average_precision, select_related_level,
    select_reliable, selection_objective, train_for_r, Ablation, Aggregation, Dataset64, Error,
    EventEmbedding64, Hyperparameters64, Label, Prediction, RankedPredictions, SelectionProblem,
    TrainedDetector64,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "vsgmil",
    version,
    about = "Visual-semantic guided multi-instance event detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Train a detector and write the model file and a history report.
    Train(TrainArgs),
    /// Score bags with a trained model; writes `bag_id,score` lines, best first.
    Predict(PredictArgs),
    /// Average precision of predictions against bag labels.
    Eval(EvalArgs),
    /// Compare the full system against its three ablations on one dataset.
    Ablate(AblateArgs),
    /// Randomized check of the reliable-shot selector against exhaustive search.
    SelectCheck(SelectCheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    /// Weight of the visual loss in the combined loss.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Reliability (l1) reward.
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Diversity (l2) reward.
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    /// Fixed related level; skips the level search.
    #[arg(long)]
    pub r: Option<usize>,
    /// Related levels searched on validation data: `1-10` or `1,3,5`.
    #[arg(long, default_value = "1-10")]
    pub r_grid: String,
    /// Minimum fraction of shots selected in every bag.
    #[arg(long, default_value_t = 0.3)]
    pub p_ratio: f64,
    /// SVM trade-off between margin and weighted hinge loss.
    #[arg(long, default_value_t = 1.0)]
    pub svm_c: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Maximum outer alternation iterations.
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// full, no_reliability, no_diversity or no_semantic.
    #[arg(long, default_value = "full")]
    pub ablation: Ablation,
    /// Bag scoring rule: max, mean or topK (e.g. top3).
    #[arg(long, default_value = "max")]
    pub aggregation: Aggregation,
}

impl HyperArgs {
    pub fn hyperparameters(&self) -> Result<Hyperparameters64, CliError> {
        let related_levels = match self.r {
            Some(r) => vec![r],
            None => parse_grid(&self.r_grid)?,
        };
        let hyper = Hyperparameters64 {
            alpha: self.alpha,
            lambda: self.lambda,
            gamma: self.gamma,
            related_levels,
            p_ratio: self.p_ratio,
            svm_c: self.svm_c,
            max_outer_iters: self.max_iters,
            tol: self.tol,
            seed: self.seed,
            ablation: self.ablation,
            aggregation: self.aggregation,
        };
        hyper
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(hyper)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset (one bag per line).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output event embedding.
    #[arg(long)]
    pub event: PathBuf,
    /// Output per-shot relevance map.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Hold out this fraction of bags per class into `--test`.
    #[arg(long, requires = "test")]
    pub test_fraction: Option<f64>,
    /// Output test dataset.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub pos_bags: usize,
    #[arg(long, default_value_t = 60)]
    pub neg_bags: usize,
    #[arg(long, default_value_t = 5)]
    pub min_instances: usize,
    #[arg(long, default_value_t = 10)]
    pub max_instances: usize,
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 12)]
    pub embedding_dim: usize,
    /// Fraction of relevant shots per positive bag.
    #[arg(long, default_value_t = 0.7)]
    pub relevant_fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    pub feature_noise: f64,
    #[arg(long, default_value_t = 0.5)]
    pub embedding_noise: f64,
    /// Fraction of negative-bag shots that are visual confusers.
    #[arg(long, default_value_t = 0.2)]
    pub confuser_rate: f64,
    /// Fraction of relevant shots with background visuals.
    #[arg(long, default_value_t = 0.15)]
    pub semantic_only_rate: f64,
    /// Fraction of irrelevant positive-bag shots that are confusers.
    #[arg(long, default_value_t = 1.0)]
    pub irrelevant_confuser_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SynthArgs {
    pub fn config(&self) -> SyntheticConfig {
        SyntheticConfig {
            num_pos_bags: self.pos_bags,
            num_neg_bags: self.neg_bags,
            min_instances: self.min_instances,
            max_instances: self.max_instances,
            feature_dim: self.feature_dim,
            embedding_dim: self.embedding_dim,
            relevant_fraction: self.relevant_fraction,
            feature_noise: self.feature_noise,
            embedding_noise: self.embedding_noise,
            confuser_rate: self.confuser_rate,
            semantic_only_rate: self.semantic_only_rate,
            irrelevant_confuser_rate: self.irrelevant_confuser_rate,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub event: PathBuf,
    /// Validation bags for the level search; without it a stratified holdout of
    /// `--holdout` is split off the training data using `--seed`.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    pub holdout: f64,
    /// Output model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Output history report (default: model path with `.history.json`).
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the aggregation stored in the model file.
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions file; repeat once per event.
    #[arg(long, required = true)]
    pub predictions: Vec<PathBuf>,
    /// Bag labels, either a dataset file or a JSON map `{bag_id: 1 | -1}`;
    /// one per predictions file, in the same order.
    #[arg(long, required = true)]
    pub labels: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub event: PathBuf,
    /// Test bags; without it `--test-fraction` of the data is held out.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub test_fraction: f64,
    /// Fraction of the remaining training bags used to pick the related level.
    #[arg(long, default_value_t = 0.33)]
    pub holdout: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct SelectCheckArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Largest bag size drawn (at most 20).
    #[arg(long, default_value_t = 12)]
    pub max_m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Allowed objective difference between selector and oracle.
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: Error },
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) | CliError::File { source: e, .. } if e.is_infeasible() => {
                EXIT_INFEASIBLE
            }
            CliError::Core(Error::InvalidConfig(_)) => EXIT_USAGE,
            CliError::Core(_) | CliError::File { .. } | CliError::Check(_) => EXIT_DATA,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

fn at<T>(path: &Path, result: vsgmil::Result<T>) -> Result<T, CliError> {
    result.map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses `1-10`, `3` or `1,3,5` (ranges and lists may be mixed).
pub fn parse_grid(text: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Usage(format!("invalid related-level grid '{text}'"));
    let mut levels = Vec::new();
    for part in text.split(',').map(str::trim) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo.trim().parse().map_err(|_| bad())?;
                let hi: usize = hi.trim().parse().map_err(|_| bad())?;
                if lo > hi {
                    return Err(bad());
                }
                levels.extend(lo..=hi);
            }
            None => levels.push(part.parse().map_err(|_| bad())?),
        }
    }
    if levels.is_empty() {
        return Err(bad());
    }
    Ok(levels)
}

/// Parses `args` (including the program name) and runs the command.
/// Diagnostics go to `stderr`; the return value is the process exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    match execute(&cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => synth(a, stdout),
        Command::Train(a) => train(a, stdout),
        Command::Predict(a) => predict(a, stdout),
        Command::Eval(a) => eval(a, stdout),
        Command::Ablate(a) => ablate(a, stdout),
        Command::SelectCheck(a) => select_check(a, stdout),
    }
}

fn emit(value: &Value, out: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    match out {
        Some(path) => fs::write(path, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn synth(a: &SynthArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = a.config();
    let corpus = generate_synthetic::<f64>(&config)?;
    let header = SyntheticDataset::<f64>::header(&config);
    let (train, test) = match a.test_fraction {
        Some(f) => {
            let (train, test) = split_stratified(&corpus.dataset, f, config.seed)?;
            (train, Some(test))
        }
        None => (corpus.dataset.clone(), None),
    };
    save_dataset(&train, &header, &a.dataset)?;
    if let (Some(test), Some(path)) = (&test, &a.test) {
        save_dataset(test, &header, path)?;
    }
    save_event(&corpus.event, &a.event)?;
    if let Some(path) = &a.truth {
        save_ground_truth(&corpus.ground_truth, path)?;
    }
    emit(
        &json!({
            "bags": train.bags.len(),
            "instances": train.num_instances(),
            "test_bags": test.as_ref().map(|t| t.bags.len()),
        }),
        None,
        stdout,
    )
}

/// Trains on `data`, searching levels on `validation` unless the grid has one level.
pub fn fit(
    data: &Dataset64,
    validation: Option<&Dataset64>,
    event: &EventEmbedding64,
    hyper: &Hyperparameters64,
    holdout: f64,
) -> Result<TrainedDetector64, CliError> {
    if let [r] = hyper.related_levels[..] {
        return Ok(train_for_r(data, event, hyper, r)?);
    }
    match validation {
        Some(v) => Ok(select_related_level(data, v, event, hyper)?),
        None => {
            let (train, val) = split_stratified(data, holdout, hyper.seed)?;
            Ok(select_related_level(&train, &val, event, hyper)?)
        }
    }
}

fn train(a: &TrainArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let hyper = a.hyper.hyperparameters()?;
    let data = at(&a.data, load_dataset(&a.data))?;
    let event = at(&a.event, load_event(&a.event))?;
    let validation = match &a.validation {
        Some(path) => Some(at(path, load_dataset(path))?),
        None => None,
    };
    let detector = fit(&data, validation.as_ref(), &event, &hyper, a.holdout)?;
    persist_model(&ModelFile::from_detector(&detector), &a.model)?;
    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut p = a.model.clone().into_os_string();
        p.push(".history.json");
        PathBuf::from(p)
    });
    let history = json!({
        "chosen_r": detector.chosen_r,
        "selected_count": detector.reliability.selected_count(),
        "history": detector.history,
    });
    emit(&history, Some(&history_path), stdout)?;
    emit(
        &json!({
            "model": a.model,
            "history": history_path,
            "chosen_r": detector.chosen_r,
            "outer_iterations": detector.history.iterations.len(),
        }),
        None,
        stdout,
    )
}

fn predict(a: &PredictArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let file = at(&a.model, read_model::<f64>(&a.model))?;
    let data = at(&a.data, load_dataset(&a.data))?;
    let rule = a.aggregation.unwrap_or(file.hyperparameters.aggregation);
    let ranked = RankedPredictions::score(&file.model(), &data.bags, rule)?;
    let rows: Vec<(String, f64)> = ranked
        .ranked()
        .into_iter()
        .map(|p| (p.bag_id.clone(), p.score))
        .collect();
    match &a.out {
        Some(path) => write_predictions(&rows, io::BufWriter::new(fs::File::create(path)?))?,
        None => write_predictions(&rows, &mut *stdout)?,
    }
    Ok(())
}

fn load_labels(path: &Path) -> Result<Vec<(String, Label)>, CliError> {
    let text = at(path, fs::read_to_string(path).map_err(Error::from))?;
    if text.trim_start().starts_with('{') && serde_json::from_str::<Value>(&text).is_ok() {
        return Ok(at(path, load_ground_truth(path))?.into_iter().collect());
    }
    let data = at(path, load_dataset::<f64>(path))?;
    Ok(data.bags.into_iter().map(|b| (b.id, b.label)).collect())
}

fn eval(a: &EvalArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if a.predictions.len() != a.labels.len() {
        return Err(CliError::Usage(format!(
            "{} predictions files but {} labels files",
            a.predictions.len(),
            a.labels.len()
        )));
    }
    let mut aps = Vec::new();
    for (pred_path, label_path) in a.predictions.iter().zip(&a.labels) {
        let preds = at(
            pred_path,
            fs::File::open(pred_path)
                .map_err(Error::from)
                .and_then(read_predictions::<f64, _>),
        )?;
        let labels: std::collections::HashMap<String, Label> =
            load_labels(label_path)?.into_iter().collect();
        let rows = preds
            .into_iter()
            .map(|(bag_id, score)| {
                let label = *labels.get(&bag_id).ok_or_else(|| {
                    CliError::Core(Error::InvalidConfig(format!("no label for bag {bag_id}")))
                })?;
                Ok(Prediction {
                    bag_id,
                    score,
                    label,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        aps.push(average_precision(&RankedPredictions::new(rows)?)?);
    }
    let report = match aps[..] {
        [ap] => json!({ "ap": ap }),
        _ => json!({ "ap": aps, "map": mean_average_precision(&aps)? }),
    };
    emit(&report, a.out.as_deref(), stdout)
}

/// Test AP of each mode, trained on the same split.
pub fn ablation_table(
    train: &Dataset64,
    validation: &Dataset64,
    test: &Dataset64,
    event: &EventEmbedding64,
    hyper: &Hyperparameters64,
) -> Result<Vec<(Ablation, f64, TrainedDetector64)>, CliError> {
    Ablation::ALL
        .iter()
        .map(|&ablation| {
            let h = Hyperparameters64 {
                ablation,
                ..hyper.clone()
            };
            let detector = fit(train, Some(validation), event, &h, 0.0)?;
            let ranked = RankedPredictions::score(&detector.model, &test.bags, h.aggregation)?;
            Ok((ablation, average_precision(&ranked)?, detector))
        })
        .collect()
}

fn ablate(a: &AblateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let hyper = a.hyper.hyperparameters()?;
    let data = at(&a.data, load_dataset(&a.data))?;
    let event = at(&a.event, load_event(&a.event))?;
    let (rest, test) = match &a.test {
        Some(path) => (data, at(path, load_dataset(path))?),
        None => split_stratified(&data, a.test_fraction, hyper.seed)?,
    };
    let (train, validation) = split_stratified(&rest, a.holdout, hyper.seed.wrapping_add(1))?;
    let rows = ablation_table(&train, &validation, &test, &event, &hyper)?;
    let modes: Vec<Value> = rows
        .iter()
        .map(|(ablation, ap, d)| {
            json!({
                "ablation": ablation.name(),
                "test_ap": ap,
                "chosen_r": d.chosen_r,
                "outer_iterations": d.history.iterations.len(),
                "selected_count": d.reliability.selected_count(),
            })
        })
        .collect();
    emit(
        &json!({
            "train_bags": train.bags.len(),
            "validation_bags": validation.bags.len(),
            "test_bags": test.bags.len(),
            "modes": modes,
        }),
        a.out.as_deref(),
        stdout,
    )
}

/// Outcome of the selector-versus-oracle suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectCheckReport {
    pub trials: usize,
    pub matches: usize,
    pub max_abs_diff: f64,
}

/// Draws `trials` problems (m uniform in `[1, max_m]`, losses in `[0, 3)`, lambda and
/// gamma in `[0, 2)`, min_count uniform in `[0, m]`) and compares objectives.
pub fn select_check_suite(
    trials: usize,
    max_m: usize,
    seed: u64,
    tolerance: f64,
) -> Result<SelectCheckReport, CliError> {
    if max_m == 0 || max_m > vsgmil::selector::BRUTE_FORCE_LIMIT {
        return Err(CliError::Usage(format!(
            "--max-m must be in [1, {}]",
            vsgmil::selector::BRUTE_FORCE_LIMIT
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matches = 0;
    let mut max_abs_diff = 0.0f64;
    for _ in 0..trials {
        let m = rng.random_range(1..=max_m);
        let losses: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..3.0)).collect();
        let lambda = rng.random_range(0.0..2.0);
        let gamma = rng.random_range(0.0..2.0);
        let min_count = rng.random_range(0..=m);
        let problem = SelectionProblem::new(losses, lambda, gamma, min_count)?;
        let fast = select_reliable(&problem);
        let oracle = brute_force_select(&problem)?;
        let diff = (selection_objective(&problem.losses, &fast, lambda, gamma)
            - selection_objective(&problem.losses, &oracle, lambda, gamma))
        .abs();
        max_abs_diff = max_abs_diff.max(diff);
        if diff <= tolerance {
            matches += 1;
        }
    }
    Ok(SelectCheckReport {
        trials,
        matches,
        max_abs_diff,
    })
}

fn select_check(a: &SelectCheckArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let report = select_check_suite(a.trials, a.max_m, a.seed, a.tolerance)?;
    emit(
        &json!({
            "trials": report.trials,
            "matches": report.matches,
            "failures": report.trials - report.matches,
            "max_abs_diff": report.max_abs_diff,
        }),
        a.out.as_deref(),
        stdout,
    )?;
    if report.matches == report.trials {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "{} of {} trials disagree with the oracle",
            report.trials - report.matches,
            report.trials
        )))
    }
}
