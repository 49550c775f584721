use serde::{Deserialize, Serialize};

/// Concepts split by zero-shot AUC-PR; both lists ascend by score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultySplit {
    pub hard: Vec<String>,
    pub easy: Vec<String>,
}

/// Sorts concepts by zero-shot AUC-PR (ties by name); the lower ⌈n/2⌉ are hard.
pub fn concept_difficulty(concepts: &[(String, f64)]) -> DifficultySplit {
    let mut sorted: Vec<&(String, f64)> = concepts.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let n_hard = concepts.len().div_ceil(2);
    let names = |s: &[&(String, f64)]| s.iter().map(|c| c.0.clone()).collect();
    DifficultySplit { hard: names(&sorted[..n_hard]), easy: names(&sorted[n_hard..]) }
}
