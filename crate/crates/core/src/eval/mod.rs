//! Metrics, evaluation reports, reference decoders, the ablation harness and
//! inference-latency measurement.

mod ablation;
mod baselines;
mod latency;
mod metrics;
mod report;
mod stats;

pub use ablation::{ablation_csv, ablation_suite, variant_config, AblationRow, Variant};
pub use baselines::{
    baseline, cnn_mlp_config, fit_regressor, flatten_trials, mlp_input_len, mlp_inputs, select_alpha, BaselineKind,
    BaselineOutcome, LinearFit, LinearPipeline, Mlp, Pca, Regressor, Standardizer, ALPHAS, MLP_HIDDEN, MLP_RATE_HZ,
    PCA_VARIANCE,
};
pub use latency::{measure_latency, LatencyStats};
pub use metrics::{mean_sem, r2, rmse, MeanSem};
pub use report::{
    config_hash, evaluate, model_predictions, params_hash, sha256_hex, EvalReport, SubjectPredictions, SubjectScore,
};
pub use stats::{average_ranks, rank_sum, RankSum};
