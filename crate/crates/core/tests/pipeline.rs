use vsgmil::data::{
    generate_synthetic, load_dataset, persist_model, read_model, save_dataset, split_stratified,
    ModelFile, SyntheticConfig,
};
use vsgmil::{
    average_precision, select_related_level, train_for_r, Ablation, Aggregation, Dataset32,
    Hyperparameters, Hyperparameters64, RankedPredictions,
};

fn corpus(seed: u64) -> vsgmil::data::SyntheticDataset<f64> {
    generate_synthetic(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

#[test]
fn separable_corpus_with_full_ratio_stops_immediately() {
    let s = generate_synthetic::<f64>(&SyntheticConfig {
        relevant_fraction: 1.0,
        feature_noise: 0.0,
        embedding_noise: 0.0,
        confuser_rate: 0.0,
        semantic_only_rate: 0.0,
        seed: 4,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let hyper = Hyperparameters64 {
        p_ratio: 1.0,
        ..Hyperparameters64::default()
    };
    let d = train_for_r(&s.dataset, &s.event, &hyper, 2).unwrap();
    assert!(d.history.iterations.len() <= 2);
    assert_eq!(d.reliability.selected_count(), s.dataset.num_instances());
}

#[test]
fn corrupted_positives_give_a_non_increasing_objective() {
    for seed in 0..3 {
        let s = generate_synthetic::<f64>(&SyntheticConfig {
            relevant_fraction: 0.7,
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap();
        for ablation in Ablation::ALL {
            let hyper = Hyperparameters64 {
                ablation,
                ..Hyperparameters64::default()
            };
            let d = train_for_r(&s.dataset, &s.event, &hyper, 2).unwrap();
            let obj = d.history.objectives();
            assert!(
                obj.windows(2).all(|w| w[1] <= w[0] + 1e-6),
                "{ablation}: {obj:?}"
            );
            assert!(d.reliability.satisfies_min_counts(&s.dataset, &hyper));
        }
    }
}

#[test]
fn single_level_grid_matches_direct_training() {
    let s = corpus(1);
    let (train, val) = split_stratified(&s.dataset, 0.3, 1).unwrap();
    let hyper = Hyperparameters64 {
        related_levels: vec![4],
        ..Hyperparameters64::default()
    };
    let searched = select_related_level(&train, &val, &s.event, &hyper).unwrap();
    let direct = train_for_r(&train, &s.event, &hyper, 4).unwrap();
    assert_eq!(searched.model, direct.model);
    assert_eq!(searched.reliability, direct.reliability);
    assert_eq!(searched.chosen_r, 4);
}

#[test]
fn training_is_deterministic_and_model_files_round_trip() {
    let s = corpus(2);
    let (train, val) = split_stratified(&s.dataset, 0.3, 2).unwrap();
    let hyper = Hyperparameters64 {
        related_levels: vec![1, 2, 3],
        ..Hyperparameters64::default()
    };
    let a = select_related_level(&train, &val, &s.event, &hyper).unwrap();
    let b = select_related_level(&train, &val, &s.event, &hyper).unwrap();
    let (ja, jb) = (
        ModelFile::from_detector(&a).to_json().unwrap(),
        ModelFile::from_detector(&b).to_json().unwrap(),
    );
    assert_eq!(ja, jb);
    assert_eq!(
        serde_json::to_string(&a.history).unwrap(),
        serde_json::to_string(&b.history).unwrap()
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    persist_model(&ModelFile::from_detector(&a), &path).unwrap();
    let back = read_model::<f64>(&path).unwrap();
    assert_eq!(back.model(), a.model);
    assert_eq!(back.chosen_r, a.chosen_r);
    assert_eq!(back.hyperparameters, a.hyper);
}

#[test]
fn dataset_files_round_trip_and_train_in_single_precision() {
    let s = corpus(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    save_dataset(&s.dataset, &["generated".to_string()], &path).unwrap();
    assert_eq!(load_dataset::<f64>(&path).unwrap(), s.dataset);

    let narrow: Dataset32 = load_dataset(&path).unwrap();
    let event =
        vsgmil::EventEmbedding::new("e", s.event.embedding.iter().map(|&v| v as f32).collect())
            .unwrap();
    let d = train_for_r(&narrow, &event, &Hyperparameters::<f32>::default(), 2).unwrap();
    assert!(d.model.is_finite());
    let obj = d.history.objectives();
    assert!(obj.windows(2).all(|w| w[1] <= w[0] + 1e-4));
}

#[test]
fn detector_ranks_held_out_bags_well() {
    let s = generate_synthetic::<f64>(&SyntheticConfig {
        num_pos_bags: 30,
        num_neg_bags: 90,
        seed: 8,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let (rest, test) = split_stratified(&s.dataset, 0.4, 8).unwrap();
    let (train, val) = split_stratified(&rest, 0.3, 9).unwrap();
    let hyper = Hyperparameters64 {
        related_levels: vec![1, 2, 3],
        ..Hyperparameters64::default()
    };
    let d = select_related_level(&train, &val, &s.event, &hyper).unwrap();
    let ranked = RankedPredictions::score(&d.model, &test.bags, Aggregation::Max).unwrap();
    let ap = average_precision(&ranked).unwrap();
    // A random ranking scores about the positive rate, 0.25.
    assert!(ap > 0.5, "test AP {ap}");
}

/// Bags hold exactly three relevant shots each; the level search should land on 3.
#[test]
#[ignore = "validation AP is nearly flat for every r up to the true count, so recovery is seed-dependent"]
fn level_search_recovers_the_relevant_count() {
    let mut hits = 0;
    let mut chosen = Vec::new();
    for seed in 0..5 {
        let s = generate_synthetic::<f64>(&SyntheticConfig {
            num_pos_bags: 30,
            num_neg_bags: 60,
            min_instances: 10,
            max_instances: 10,
            relevant_fraction: 0.3,
            semantic_only_rate: 0.0,
            feature_noise: 1.5,
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let (train, val) = split_stratified(&s.dataset, 0.4, seed).unwrap();
        let hyper = Hyperparameters64 {
            alpha: 0.2,
            lambda: 0.5,
            gamma: 0.3,
            related_levels: (1..=6).collect(),
            ..Hyperparameters64::default()
        };
        let d = select_related_level(&train, &val, &s.event, &hyper).unwrap();
        chosen.push(d.chosen_r);
        hits += usize::from(d.chosen_r == 3);
    }
    assert!(hits >= 3, "chosen levels {chosen:?}");
}
