//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vsgmil::data::{
    generate_synthetic, save_dataset, save_event, split_stratified, SyntheticConfig,
};
use vsgmil::svm::solve_weighted_svm;
use vsgmil::{
    average_precision, semantic_loss, train_for_r, Ablation, Hyperparameters64, Label, Prediction,
    RankedPredictions, WeightedTrainingSet,
};
use vsgmil_cli::{ablation_table, run, select_check_suite};

type Check = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn non_reproducibility() -> Outcome {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = fs::read_to_string(&readme).unwrap_or_default();
    let stated = text.contains("not reproducible") && text.contains("TRECVID");
    outcome(
        stated,
        "README states the published TRECVID mAP figures are not reproducible here",
    )
}

fn selector_oracle() -> Outcome {
    let start = Instant::now();
    let report = select_check_suite(1000, 12, 7, 1e-9).expect("suite runs");
    let elapsed = start.elapsed();
    outcome(
        report.matches == report.trials && elapsed < Duration::from_secs(10),
        format!(
            "{}/{} trials within 1e-9 (max diff {:.1e}) in {:.2?}",
            report.matches, report.trials, report.max_abs_diff, elapsed
        ),
    )
}

/// Largest single-step increase of a sequence (negative infinity when it has one entry).
fn largest_rise(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Checks both the bare weighted-loss objective and the objective with the SVM
/// ridge term that the alternation minimizes.
fn alternation_monotonicity() -> Outcome {
    let start = Instant::now();
    let hyper = Hyperparameters64::default();
    let mut runs = 0;
    let (mut worst_bare, mut worst_full) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut failures = 0;
    for seed in 0..20u64 {
        let config = SyntheticConfig {
            num_pos_bags: 20,
            num_neg_bags: 60,
            relevant_fraction: 0.7,
            seed,
            ..SyntheticConfig::default()
        };
        let corpus = generate_synthetic::<f64>(&config).expect("corpus");
        for r in [1, 3] {
            let detector = train_for_r(&corpus.dataset, &corpus.event, &hyper, r).expect("trains");
            let bare: Vec<f64> = detector
                .history
                .iterations
                .iter()
                .map(|i| i.loss_objective)
                .collect();
            let (rise_bare, rise_full) = (
                largest_rise(&bare),
                largest_rise(&detector.history.objectives()),
            );
            runs += 1;
            worst_bare = worst_bare.max(rise_bare);
            worst_full = worst_full.max(rise_full);
            if rise_bare > 1e-6 || rise_full > 1e-6 {
                failures += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && elapsed < Duration::from_secs(120),
        format!(
            "{runs} runs (20 corpora x r in {{1, 3}}), {failures} with a rise > 1e-6; largest step \
             {worst_bare:.3e} (weighted loss) / {worst_full:.3e} (with ridge) in {elapsed:.2?}"
        ),
    )
}

fn svm_fixtures() -> Outcome {
    let tol = 1e-10;
    // Two points at -1 and +1.
    let (xn, xp): ([f64; 1], [f64; 1]) = ([-1.0], [1.0]);
    let mut two = WeightedTrainingSet::new();
    two.push(&xn[..], Label::Negative, 1.0);
    two.push(&xp[..], Label::Positive, 1.0);
    let m = solve_weighted_svm(&two, 1e6, tol).expect("solves").model;
    let analytic = (m.w[0] - 1.0).abs() < 1e-4 && m.b.abs() < 1e-4;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let points: Vec<(Vec<f64>, Label, f64)> = (0..40)
        .map(|_| {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let label = if x[0] + 0.5 * x[1] + rng.random_range(-0.8..0.8) > 0.0 {
                Label::Positive
            } else {
                Label::Negative
            };
            (x, label, rng.random_range(0.2..2.0))
        })
        .collect();
    let base = {
        let mut set = WeightedTrainingSet::new();
        for (x, y, q) in &points {
            set.push(x, *y, *q);
        }
        solve_weighted_svm(&set, 1.0, tol).expect("solves").model
    };
    let extra: Vec<Vec<f64>> = (0..10)
        .map(|k| vec![k as f64, -3.0, 0.5 * k as f64])
        .collect();
    let padded = {
        let mut set = WeightedTrainingSet::new();
        for (x, y, q) in &points {
            set.push(x, *y, *q);
        }
        for (k, x) in extra.iter().enumerate() {
            set.push(
                x,
                if k % 2 == 0 {
                    Label::Positive
                } else {
                    Label::Negative
                },
                0.0,
            );
        }
        solve_weighted_svm(&set, 1.0, tol).expect("solves").model
    };
    let scaled = {
        let mut set = WeightedTrainingSet::new();
        for (x, y, q) in &points {
            set.push(x, *y, 2.0 * q);
        }
        solve_weighted_svm(&set, 0.5, tol).expect("solves").model
    };
    let diff = |a: &vsgmil::ClassifierModel64, b: &vsgmil::ClassifierModel64| {
        a.w.iter()
            .zip(&b.w)
            .map(|(x, y)| (x - y).abs())
            .fold((a.b - b.b).abs(), f64::max)
    };
    let (d_zero, d_scaled) = (diff(&base, &padded), diff(&base, &scaled));
    let invariant = d_zero < 1e-6 && d_scaled < 1e-6;
    outcome(
        analytic && invariant,
        format!(
            "two-point (w, b) = ({:.6}, {:.1e}); zero-weight rows diff {d_zero:.1e}; (2q, c/2) diff {d_scaled:.1e}",
            m.w[0], m.b
        ),
    )
}

fn ranking(labels: &[Label], scores: &[f64]) -> RankedPredictions<f64> {
    let rows = labels
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(k, (&label, &score))| Prediction {
            bag_id: format!("b{k:03}"),
            score,
            label,
        })
        .collect();
    RankedPredictions::new(rows).expect("valid ranking")
}

fn ap_fixtures() -> Outcome {
    use Label::{Negative as N, Positive as P};
    let cases: [(&[Label], f64); 3] = [
        (&[P, P, N], 1.0),
        (&[N, P], 0.5),
        (&[P, N, P], (1.0 + 2.0 / 3.0) / 2.0),
    ];
    let exact = cases.iter().all(|(labels, want)| {
        let scores: Vec<f64> = (0..labels.len()).rev().map(|k| k as f64).collect();
        average_precision(&ranking(labels, &scores)).expect("defined") == *want
    });

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let transforms: [fn(f64) -> f64; 4] =
        [|x| 3.0 * x + 1.0, f64::exp, |x| x * x * x + x, f64::atan];
    let mut invariant = 0;
    for trial in 0..100 {
        let n = rng.random_range(2..40);
        let mut labels: Vec<Label> = (0..n)
            .map(|_| if rng.random_bool(0.3) { P } else { N })
            .collect();
        labels[0] = P;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let f = transforms[trial % transforms.len()];
        let moved: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
        let a = average_precision(&ranking(&labels, &scores)).expect("defined");
        let b = average_precision(&ranking(&labels, &moved)).expect("defined");
        if a == b {
            invariant += 1;
        }
    }
    outcome(
        exact && invariant == 100,
        format!("hand examples exact: {exact}; {invariant}/100 rankings invariant under increasing transforms"),
    )
}

/// Benchmark: 30% irrelevant shots per positive bag (visually confusable with the
/// event), 20% confusers in negative bags, 15% semantic-only relevant shots.
fn ablation_ordering() -> Outcome {
    let start = Instant::now();
    let hyper = Hyperparameters64 {
        alpha: 0.2,
        lambda: 0.5,
        gamma: 0.3,
        ..Hyperparameters64::default()
    };
    let seeds = 5u64;
    let mut sums = [0.0f64; 4];
    let mut full_beats_norel = 0;
    let mut per_seed = Vec::new();
    for seed in 0..seeds {
        let config = SyntheticConfig {
            num_pos_bags: 60,
            num_neg_bags: 180,
            relevant_fraction: 0.7,
            confuser_rate: 0.2,
            semantic_only_rate: 0.15,
            irrelevant_confuser_rate: 1.0,
            feature_noise: 1.5,
            seed,
            ..SyntheticConfig::default()
        };
        let corpus = generate_synthetic::<f64>(&config).expect("corpus");
        let (rest, test) = split_stratified(&corpus.dataset, 0.5, seed).expect("split");
        let (train, validation) = split_stratified(&rest, 0.33, seed + 100).expect("split");
        let rows =
            ablation_table(&train, &validation, &test, &corpus.event, &hyper).expect("trains");
        let ap = |mode: Ablation| rows.iter().find(|r| r.0 == mode).expect("mode").1;
        for (k, mode) in Ablation::ALL.iter().enumerate() {
            sums[k] += ap(*mode);
        }
        if ap(Ablation::Full) > ap(Ablation::NoReliability) {
            full_beats_norel += 1;
        }
        per_seed.push(format!(
            "{:.3}/{:.3}/{:.3}/{:.3}",
            ap(Ablation::Full),
            ap(Ablation::NoReliability),
            ap(Ablation::NoDiversity),
            ap(Ablation::NoSemantic)
        ));
    }
    let mean = |mode: Ablation| {
        let k = Ablation::ALL.iter().position(|&m| m == mode).expect("mode");
        sums[k] / seeds as f64
    };
    let full = mean(Ablation::Full);
    let elapsed = start.elapsed();
    let pass = full >= mean(Ablation::NoSemantic)
        && full >= mean(Ablation::NoReliability)
        && full >= mean(Ablation::NoDiversity)
        && full_beats_norel * 2 > seeds
        && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "mean test AP full {:.4}, no_reliability {:.4}, no_diversity {:.4}, no_semantic {:.4}; \
             full > no_reliability on {full_beats_norel}/{seeds} seeds; per seed [{}] in {elapsed:.2?}",
            full,
            mean(Ablation::NoReliability),
            mean(Ablation::NoDiversity),
            mean(Ablation::NoSemantic),
            per_seed.join(", ")
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = SyntheticConfig {
        seed: 3,
        ..SyntheticConfig::default()
    };
    let corpus = generate_synthetic::<f64>(&config).expect("corpus");
    let data = dir.path().join("data.jsonl");
    let event = dir.path().join("event.json");
    save_dataset(&corpus.dataset, &[], &data).expect("writes");
    save_event(&corpus.event, &event).expect("writes");
    let train = |name: &str| {
        let model = dir.path().join(name);
        let args = [
            "vsgmil",
            "train",
            "--data",
            data.to_str().unwrap(),
            "--event",
            event.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--r-grid",
            "1-4",
            "--seed",
            "9",
        ];
        let code = run(args, &mut Vec::new(), &mut Vec::new());
        (code, fs::read(&model).unwrap_or_default())
    };
    let (c1, a) = train("a.json");
    let (c2, b) = train("b.json");
    outcome(
        c1 == 0 && c2 == 0 && !a.is_empty() && a == b,
        format!(
            "exit codes {c1}/{c2}; model files {} bytes, identical: {}",
            a.len(),
            a == b
        ),
    )
}

fn semantic_loss_table() -> Outcome {
    use Label::{Negative as N, Positive as P};
    let table = [
        (P, P, 0.3, 0.0),
        (N, N, 0.7, 0.0),
        (N, P, 0.5, 1.0),
        (P, N, 0.9, 1.8),
    ];
    let hits = table
        .iter()
        .filter(|&&(predicted, y, s, want)| semantic_loss(predicted, y, s) == want)
        .count();
    outcome(
        hits == table.len(),
        format!("{hits}/{} branch examples exact", table.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Check; 8] = [
        ("non-reproducibility statement", non_reproducibility),
        ("selector-oracle equivalence", selector_oracle),
        ("alternation monotonicity", alternation_monotonicity),
        ("weighted SVM fixtures", svm_fixtures),
        ("AP fixtures", ap_fixtures),
        ("ablation ordering", ablation_ordering),
        ("determinism", determinism),
        ("semantic-loss table", semantic_loss_table),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = check();
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {}",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
