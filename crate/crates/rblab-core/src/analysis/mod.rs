//! The measurement battery over snapshots and trained models: variance
//! explained by features, all-pattern probes, per-unit analysis, sparsity,
//! PCA simplification, steering interventions, RSA, and downstream
//! classifier bias.

mod downstream;
mod pca;
mod probe;
mod rsa;
mod sparsity;
mod steer;
mod summary;

pub use downstream::{downstream_bias, downstream_preference, ClassifierKind};
pub use pca::{export_pca_projection, pca_readout, PcaMode, PcaReadoutRow};
pub use probe::{
    fit_probe, linear_decode_accuracy, per_unit_variance, total_test_variance,
    variance_explained, variance_explained_patterns, PerUnitVariance, ProbeFit,
    VarianceExplainedResult,
};
pub use rsa::{rdm, rsa_compare, Rdm, RdmMetric, RsaCorrelation};
pub use sparsity::{entropy_sparsity_score, logistic_fit, sparsity_score, LogisticFit};
pub use steer::{flip_threshold_magnitude, intervene, steering_vector, InterventionResult};
pub use summary::{final_run_summary, FeatureSummary, RunSummary};
