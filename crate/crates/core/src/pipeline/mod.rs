//! End-to-end plumbing from audio to trained estimators.

mod dataset;
mod estimator;
mod experiments;
mod features;

pub use dataset::{Dataset, SecondRef, WindowRef, WindowSpec};
pub use estimator::{EncoderChoice, Estimator, EstimatorConfig, Prediction, SecondFeatures};
pub use experiments::{
    cross_validate, dp_sweep, eval_noise, fold_seed, inference_sweep, score, train_and_score,
    write_sweep_csv, CrossValReport, FoldReport, HeldOut, SweepRow, SweepSettings,
    DEFAULT_EPSILONS,
};
pub use features::{
    extract_features, AudioSource, FeatureTable, FrontEnd, FrontEndConfig, PlanSource,
    SecondAnalysis, WavSource,
};
