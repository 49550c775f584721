//! Evaluation: SipHash-keyed stratified eval-set construction and the metric
//! suite (AUC-PR as average precision, AUC-ROC, F1, accuracy).
//!
//! Only one eval-set protocol is implemented: stratified sampling without
//! weights. Alternatives that were considered and rejected elsewhere (label
//! everything, uniform random sampling, a training holdout, fixed prediction
//! frequencies, weighted strata) are intentionally absent. Unweighted strata
//! give sparsely populated buckets more influence per candidate; that bias is
//! accepted.

mod difficulty;
mod eval_set;
mod metrics;
mod siphash;

pub use difficulty::{concept_difficulty, DifficultySplit};
pub use eval_set::{build_eval_set, stratify, EvalEntry, EvalSet, ModelScores, STRATA};
pub use metrics::{auc_pr, auc_roc, f1_accuracy, MetricReport};
pub use siphash::{reference_key, siphash64, SipKey, DEFAULT_EVAL_KEY, REFERENCE_VECTORS};
