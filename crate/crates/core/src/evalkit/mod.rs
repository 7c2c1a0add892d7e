//! Synthetic data with retain/forget/holdout splits, a retain-only
//! reference model, a two-sample KS engine, and the forget-quality,
//! utility, and membership-attack proxies.

mod data;
mod ks;
mod metrics;
mod reference;

pub use data::{gen_blobs, gen_random_label, gen_sequence_blobs, split, Dataset, DatasetSpec, GeneratorKind, SplitSpec};
pub use ks::{kolmogorov_q, ks_pvalue, ks_statistic};
pub use metrics::{
    accuracy, evaluate, forget_quality_proxy, harmonic_mean, membership_attack_acc,
    membership_attack_from_losses, model_utility_proxy, per_example_losses, true_class_log_probs,
    EvalReport,
};
pub use reference::{clear_reference_cache, train_reference};
