//! Greedy layer-wise deep dictionary learning.
//!
//! Two trainers share the same numerical kernels:
//!
//! * [`ddl`]: the unsupervised baseline. Dense least-squares layers, a
//!   sparse (ISTA-coded) final layer and product-dictionary test coding.
//! * [`ddlic`]: every layer carries an intra-class compactness penalty
//!   `alpha * sum_c sum_{i,j} ||z_i^c - z_j^c||^2`, solved by alternating a
//!   closed-form dictionary update with Gauss-Seidel sweeps of closed-form
//!   per-column updates.
//!
//! Samples are stored as matrix columns throughout (`features` is
//! `dim x n_samples`). Training matrices keep each class in a contiguous block
//! of columns.

pub mod classify;
pub mod dataset;
pub mod ddl;
pub mod ddlic;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model_io;

pub use classify::{
    code_test_ddlic, evaluate_accuracy, knn_predict, AccuracyCurve, KSelection, KnnConfig,
};
pub use dataset::{
    load_labeled_matrix, make_synthetic_clusters, save_dense_text, split_per_class, DataFormat,
    LabeledMatrix, SplitSpec,
};
pub use ddl::{code_test_ddl, train_ddl, DdlModel, InitMode, TrainConfig};
pub use ddlic::{
    layer_objective, train_ddlic, train_layer, update_dictionary, update_representations,
    DdlicConfig, DdlicModel, LayerFit,
};
pub use error::{DdlError, Result};
pub use harness::{
    export_embeddings, grid_search_alpha, intra_class_scatter_ratio, per_layer_accuracy,
    run_experiment, EvalReport, ExperimentConfig, GridMode, GridResult, Method,
};
pub use linalg::{IstaConfig, RidgePolicy, StepSize};
pub use model_io::{load_model, save_model, TrainedModel};

/// Dense column-major matrix used across the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
