//! The interactive loop: define a concept, expand it into a first rating
//! batch, collect ratings, train, select the next batch, repeat.
//!
//! A [`Session`] owns the state machine and the trained checkpoints. Long
//! steps are split into a job (cloned inputs, run without the session) and a
//! completion call, so a server can run them elsewhere while the session
//! stays readable.

mod concept;
mod rater;
mod simulate;
mod state;
mod store;

pub use concept::{expand_concept, ConceptSpec, TextEmbedder};
pub use rater::{majority_vote, Label, LabelRecord, RaterBinding, RaterKind, RatingInput, ResolvedLabel};
pub use simulate::{simulate, EvalData, SimulationReport};
pub use state::{
    ClampEvent, Phase, RoundMetrics, SeedBundle, SelectionJob, Session, SessionConfig, SessionState, SubmitOutcome,
    TrainingJob, DESK_BATCH_SIZE_SGD, DESK_EXAMPLES_PER_EPOCH, DESK_RANDOM_NEGATIVES,
};
pub use store::{load_session, metrics_csv, save_session, write_metrics_csv, CHECKPOINT_DIR};
