use std::fs;

use ddlic::harness::{read_embedding_csv, scatter_by_layer, train_model, DataSource, SyntheticSpec};
use ddlic::{
    evaluate_accuracy, export_embeddings, intra_class_scatter_ratio, load_labeled_matrix, load_model,
    make_synthetic_clusters, per_layer_accuracy, run_experiment, save_dense_text, save_model,
    split_per_class, DataFormat, ExperimentConfig, KnnConfig, Method, SplitSpec,
};

fn setup(method: Method, layer_sizes: Vec<usize>) -> (ExperimentConfig, ddlic::LabeledMatrix, ddlic::LabeledMatrix) {
    let cfg = ExperimentConfig {
        data: Some(DataSource::Synthetic(SyntheticSpec {
            classes: 3,
            per_class: 50,
            dim: 12,
            separation: 5.0,
            seed: 4,
        })),
        method,
        layer_sizes,
        alphas: vec![1e-3],
        per_class_train: 10,
        replicates: 2,
        seed: 4,
        ..Default::default()
    };
    let data = cfg.data.as_ref().unwrap().load().unwrap();
    let (train, test) = split_per_class(
        &data,
        &SplitSpec {
            per_class_train: 10,
            seed: 4,
            replicate: 0,
        },
    )
    .unwrap();
    (cfg, train, test)
}

#[test]
fn per_layer_accuracy_has_one_entry_per_layer() {
    for method in [Method::Ddl, Method::Ddlic] {
        for sizes in [vec![8], vec![10, 6], vec![10, 8, 6]] {
            let (cfg, train, test) = setup(method, sizes.clone());
            let model = train_model(&train, &cfg, 4).unwrap();
            let acc = per_layer_accuracy(&model, &test, &cfg.knn).unwrap();
            assert_eq!(acc.len(), sizes.len());
            assert!(acc.iter().all(|a| (0.0..=1.0).contains(a)));
        }
    }
}

#[test]
fn single_layer_ddlic_accuracy_matches_standard_evaluation() {
    let (cfg, train, test) = setup(Method::Ddlic, vec![8]);
    let model = train_model(&train, &cfg, 4).unwrap();
    let layer = per_layer_accuracy(&model, &test, &cfg.knn).unwrap();
    let code = model.code_test(test.features()).unwrap();
    let standard = evaluate_accuracy(model.train_repr(), model.labels(), &code, test.labels(), &cfg.knn).unwrap();
    assert_eq!(layer, vec![standard.best_accuracy]);
}

#[test]
fn export_writes_one_file_per_layer_and_round_trips() {
    let data = make_synthetic_clusters(3, 50, 12, 4.0, 7).unwrap();
    let cfg = ExperimentConfig {
        layer_sizes: vec![10, 8, 6],
        ..Default::default()
    };
    let model = train_model(&data, &cfg, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = export_embeddings(&model, &data, dir.path()).unwrap();
    assert_eq!(files.len(), 5);
    for f in &files {
        let rows = fs::read_to_string(f).unwrap().lines().count();
        assert_eq!(rows, 150, "{}", f.display());
    }
    let in_memory = scatter_by_layer(&model, &data).unwrap();
    for (l, expected) in in_memory.iter().enumerate() {
        let z = read_embedding_csv(&dir.path().join(format!("layer_{l}.csv"))).unwrap();
        let reference = if l == 0 { data.features() } else { &model.layer_reprs()[l - 1] };
        assert_eq!(&z, reference);
        let from_file = intra_class_scatter_ratio(&z, data.class_index()).unwrap();
        assert!((from_file - expected).abs() <= 1e-12);
    }
}

#[test]
fn saved_models_predict_identically() {
    for method in [Method::Ddl, Method::Ddlic] {
        let (cfg, train, test) = setup(method, vec![10, 8, 6]);
        let model = train_model(&train, &cfg, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(&model, dir.path()).unwrap();
        let loaded = load_model(dir.path()).unwrap();
        assert_eq!(
            model.code_test(test.features()).unwrap(),
            loaded.code_test(test.features()).unwrap()
        );
        assert_eq!(model.traces(), loaded.traces());
        assert_eq!(model.class_labels(), loaded.class_labels());
    }
}

#[test]
fn file_and_synthetic_sources_give_the_same_report() {
    let (cfg, _, _) = setup(Method::Ddlic, vec![10, 8, 6]);
    let data = cfg.data.as_ref().unwrap().load().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    save_dense_text(&data, &path).unwrap();
    assert_eq!(load_labeled_matrix(&path, &DataFormat::Dense).unwrap().features(), data.features());
    let from_file = ExperimentConfig {
        data: Some(DataSource::File {
            path,
            format: DataFormat::Dense,
            normalize: false,
        }),
        ..cfg.clone()
    };
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&from_file).unwrap();
    assert_eq!(a.accuracies(), b.accuracies());
    assert_eq!(a.mean_scatter, b.mean_scatter);
}

#[test]
fn worker_count_does_not_change_results() {
    let (cfg, _, _) = setup(Method::Ddlic, vec![10, 8, 6]);
    let one = run_experiment(&ExperimentConfig { workers: 1, replicates: 4, ..cfg.clone() }).unwrap();
    let many = run_experiment(&ExperimentConfig { workers: 4, replicates: 4, ..cfg }).unwrap();
    assert_eq!(one.accuracies(), many.accuracies());
    assert_eq!(one.mean_layer_accuracy, many.mean_layer_accuracy);
}

#[test]
fn leave_one_out_selection_runs_end_to_end() {
    let (cfg, _, _) = setup(Method::Ddl, vec![10, 6]);
    let cfg = ExperimentConfig {
        knn: KnnConfig {
            selection: ddlic::KSelection::LeaveOneOut,
            ..KnnConfig::default()
        },
        ..cfg
    };
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.failures(), 0);
    assert!(report.successes().all(|m| m.best_k <= 29));
}
