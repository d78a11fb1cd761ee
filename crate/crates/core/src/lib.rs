//! Coarse-to-fine indoor localization from WiFi fingerprints and visual
//! features.
//!
//! The coarse stage ([`coarse`]) turns an RSSI observation into a likelihood
//! distribution over floor areas and keeps the most likely few. The fine
//! stage ([`fine`]) regresses a precise location from image features, trained
//! under a squared error weighted by the coarse confidence, and projects its
//! estimate into the retained areas. [`sim`] synthesizes survey data and
//! [`eval`] runs the comparison against a WiFi-only baseline.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coarse;
pub mod config;
pub mod db;
pub mod envelope;
pub mod error;
pub mod eval;
pub mod fine;
pub mod geometry;
pub mod partition;
pub mod rng;
pub mod sim;
pub mod types;

pub use coarse::{
    area_likelihoods, baseline_wifi_only, coarse_localize, featurize, rp_likelihoods,
    select_candidate_areas, train_classifier, BaselineMode, CoarseHyperParams, CoarseModel,
    RpClassifierModel,
};
pub use config::ExperimentConfig;
pub use db::{
    build_wifi_db, load_db, partition_image_db, restrict_image_db, save_db, ImageDb, WifiDb,
};
pub use error::{Error, Result};
pub use eval::{
    error_cdf, run_accuracy_experiment, run_grid_sweep, run_latency_bench, EvaluationReport,
    LatencyTable, Pipeline, Query, QueryRecord, QuerySet,
};
pub use fine::{
    fine_localize, joint_loss, loss_gradient, pool_features, project_to_area, train_fine,
    FineHyperParams, FineModel, RegressorModel, TrainingSample,
};
pub use geometry::{Aabb, Location};
pub use partition::{make_grid_partition, AreaPartition};
pub use sim::{
    run_survey, synth_features, synth_rssi, ChannelParams, Environment, Scene, SceneParams,
};
pub use types::{
    CandidateSelection, ImageFeatureSpec, ImageFeatures, LikelihoodVector, Matrix, ReferencePoint,
    RssiObservation,
};
