use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::concept::{expand_concept, ConceptSpec};
use super::rater::{check_votes, majority_vote, LabelRecord, RaterBinding, RatingInput, ResolvedLabel};
use super::simulate::EvalData;
use crate::active_learner::{SelectionPlan, Strategy, DEFAULT_MINING_FRACTION};
use crate::ann_index::{NnIndex, Probe};
use crate::concept_head::{assemble_pool, train, EmbeddingFamily, LabeledItem, MlpConfig, MlpModel};
use crate::embed_store::Corpus;
use crate::eval_kit::MetricReport;
use crate::rng::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Defining,
    Rating,
    Training,
    Selecting,
    Done,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Defining => "defining",
            Phase::Rating => "rating",
            Phase::Training => "training",
            Phase::Selecting => "selecting",
            Phase::Done => "done",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedBundle {
    pub expansion: u64,
    pub training: u64,
    pub selection: u64,
}

impl SeedBundle {
    pub fn from_base(seed: u64) -> Self {
        Self {
            expansion: derive_seed(seed, "expansion", 0),
            training: derive_seed(seed, "training", 0),
            selection: derive_seed(seed, "selection", 0),
        }
    }
}

impl Default for SeedBundle {
    fn default() -> Self {
        Self::from_base(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Active-learning rounds after the initial model.
    pub rounds: u32,
    pub batch_size: usize,
    pub strategy: Strategy,
    pub mining_fraction: f64,
    pub embedding_family: EmbeddingFamily,
    pub seeds: SeedBundle,
    pub votes_required: u32,
    pub per_phrase: usize,
    pub expansion_sample: usize,
    /// Partitions probed during expansion; `None` scans everything.
    pub probe_partitions: Option<usize>,
    /// Head trained on the expansion batch.
    pub initial_head: MlpConfig,
    /// Head trained after every selection round.
    pub active_head: MlpConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            batch_size: 100,
            strategy: Strategy::Margin,
            mining_fraction: DEFAULT_MINING_FRACTION,
            embedding_family: EmbeddingFamily::ClipLike,
            seeds: SeedBundle::default(),
            votes_required: 1,
            per_phrase: 100,
            expansion_sample: 100,
            probe_partitions: None,
            initial_head: MlpConfig::initial_round(),
            active_head: MlpConfig::active_round(),
        }
    }
}

/// Training stream used by [`SessionConfig::desk_scale`].
pub const DESK_EXAMPLES_PER_EPOCH: usize = 10_000;
pub const DESK_BATCH_SIZE_SGD: usize = 32;
pub const DESK_RANDOM_NEGATIVES: usize = 10_000;

impl SessionConfig {
    /// Defaults with a training stream sized for corpora of about 10^5
    /// items: 10k random negatives and 10k examples per epoch in minibatches
    /// of 32. The learning rate, epochs, mixture and architectures are
    /// unchanged.
    pub fn desk_scale(seed: u64) -> Self {
        let head = |h: MlpConfig| MlpConfig {
            examples_per_epoch: Some(DESK_EXAMPLES_PER_EPOCH),
            batch_size_sgd: DESK_BATCH_SIZE_SGD,
            random_negative_count: DESK_RANDOM_NEGATIVES,
            ..h
        };
        Self {
            seeds: SeedBundle::from_base(seed),
            initial_head: head(MlpConfig::initial_round()),
            active_head: head(MlpConfig::active_round()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.per_phrase == 0 || self.expansion_sample == 0 {
            return Err(Error::InvalidConfig("batch_size, per_phrase and expansion_sample must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mining_fraction) {
            return Err(Error::InvalidConfig(format!("mining_fraction {} not in [0, 1]", self.mining_fraction)));
        }
        check_votes(self.votes_required)?;
        self.initial_head.validate()?;
        self.active_head.validate()
    }

    /// Head configuration for `round`, with a per-round training seed.
    pub fn head_for_round(&self, round: u32) -> MlpConfig {
        let base = if round == 0 { &self.initial_head } else { &self.active_head };
        MlpConfig { seed: derive_seed(self.seeds.training, "round", u64::from(round)), ..base.clone() }
    }
}

/// Per-round summary. `eval` is present only when an eval split was given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub hidden_layers: Vec<usize>,
    pub labels: usize,
    pub positives: usize,
    pub negatives: usize,
    pub eval: Option<MetricReport>,
}

/// A selection or expansion that returned fewer items than asked for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampEvent {
    pub round: u32,
    pub requested: usize,
    pub returned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub concept: ConceptSpec,
    pub config: SessionConfig,
    pub phase: Phase,
    pub round: u32,
    /// Round after whose training the session is done.
    pub final_round: u32,
    /// Votes needed per item in the current round.
    pub votes_required: u32,
    /// Batch size for the next selection when it differs from the config.
    pub batch_override: Option<usize>,
    pub pending_batch: Vec<u64>,
    /// Append-only, in resolution order.
    pub resolved: Vec<ResolvedLabel>,
    /// Round number to checkpoint path, relative to the session directory.
    pub checkpoints: BTreeMap<u32, String>,
    pub metrics: Vec<RoundMetrics>,
    pub clamp_events: Vec<ClampEvent>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    /// Raw ratings; persisted separately as JSONL.
    #[serde(skip)]
    pub ledger: Vec<LabelRecord>,
}

impl SessionState {
    pub fn labeled_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.resolved.iter().map(|r| r.item_id)
    }

    pub fn resolved_counts(&self) -> (usize, usize) {
        let pos = self.resolved.iter().filter(|r| r.label.is_positive()).count();
        (pos, self.resolved.len() - pos)
    }

    /// Votes cast per pending item in the current round.
    fn votes_this_round(&self) -> HashMap<u64, u32> {
        let mut votes = HashMap::new();
        for r in self.ledger.iter().filter(|r| r.round == self.round) {
            *votes.entry(r.item_id).or_insert(0) += 1;
        }
        votes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub accepted: usize,
    pub duplicates_skipped: usize,
    pub resolved: bool,
    pub phase: Phase,
}

/// Inputs for one training run, detached from the session.
#[derive(Debug, Clone)]
pub struct TrainingJob {
    pub round: u32,
    pub config: MlpConfig,
    pub labels: Vec<LabeledItem>,
}

impl TrainingJob {
    pub fn run(&self, corpus: &Corpus) -> Result<MlpModel> {
        let pool = assemble_pool(&self.labels, corpus, self.config.seed, self.config.random_negative_count)?;
        let mut model = train(&self.config, &pool, corpus)?;
        model.trained_on_round = self.round;
        Ok(model)
    }
}

/// Inputs for one selection, detached from the session.
#[derive(Debug, Clone)]
pub struct SelectionJob {
    pub round: u32,
    pub plan: SelectionPlan,
    pub model: MlpModel,
}

impl SelectionJob {
    pub fn run(&self, corpus: &Corpus) -> Result<Vec<u64>> {
        self.plan.execute(&self.model, corpus)
    }
}

/// A session and its trained models.
#[derive(Debug, Clone)]
pub struct Session {
    state: SessionState,
    models: BTreeMap<u32, MlpModel>,
}

impl Session {
    pub fn new(id: &str, mut concept: ConceptSpec, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        concept.validate(None)?;
        let now = Utc::now();
        Ok(Self {
            state: SessionState {
                id: id.to_string(),
                concept,
                final_round: config.rounds,
                votes_required: config.votes_required,
                config,
                phase: Phase::Defining,
                round: 0,
                batch_override: None,
                pending_batch: Vec::new(),
                resolved: Vec::new(),
                checkpoints: BTreeMap::new(),
                metrics: Vec::new(),
                clamp_events: Vec::new(),
                created_at: now,
                updated_at: now,
                ledger: Vec::new(),
            },
            models: BTreeMap::new(),
        })
    }

    pub(crate) fn from_parts(state: SessionState, models: BTreeMap<u32, MlpModel>) -> Self {
        Self { state, models }
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn id(&self) -> &str {
        &self.state.id
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn round(&self) -> u32 {
        self.state.round
    }

    pub fn model(&self, round: u32) -> Option<&MlpModel> {
        self.models.get(&round)
    }

    pub fn models(&self) -> &BTreeMap<u32, MlpModel> {
        &self.models
    }

    /// The most recently trained model.
    pub fn current_model(&self) -> Option<&MlpModel> {
        self.models.values().next_back()
    }

    fn require(&self, op: &'static str, phase: Phase) -> Result<()> {
        if self.state.phase != phase {
            return Err(Error::Phase { op, phase: self.state.phase });
        }
        Ok(())
    }

    fn touch(&mut self) {
        self.state.updated_at = Utc::now();
    }

    /// Retrieves neighbours of every phrase and samples the first batch.
    pub fn expand(&mut self, index: &NnIndex) -> Result<&[u64]> {
        self.require("expand", Phase::Defining)?;
        self.state.concept.validate(Some(index.corpus().dim()))?;
        let cfg = &self.state.config;
        let probe = cfg.probe_partitions.map_or(Probe::All, Probe::Partitions);
        let ids = expand_concept(&self.state.concept, index, cfg.per_phrase, cfg.expansion_sample, probe, cfg.seeds.expansion)?;
        if ids.len() < cfg.expansion_sample {
            self.state.clamp_events.push(ClampEvent { round: 0, requested: cfg.expansion_sample, returned: ids.len() });
        }
        self.state.pending_batch = ids;
        self.state.phase = Phase::Rating;
        self.touch();
        Ok(&self.state.pending_batch)
    }

    /// Pending items `rater_id` has not rated this round.
    pub fn pending_for(&self, rater_id: &str) -> Vec<u64> {
        let rated: HashSet<u64> = self
            .state
            .ledger
            .iter()
            .filter(|r| r.round == self.state.round && r.rater_id == rater_id)
            .map(|r| r.item_id)
            .collect();
        self.state.pending_batch.iter().copied().filter(|id| !rated.contains(id)).collect()
    }

    /// Validates and appends ratings. The whole submission is rejected if any
    /// record is invalid. Records whose idempotency key is already in the
    /// ledger are skipped. Once every pending item has its votes, items are
    /// resolved by majority and the session moves to training.
    pub fn submit_ratings(&mut self, inputs: Vec<RatingInput>) -> Result<SubmitOutcome> {
        self.require("submit_ratings", Phase::Rating)?;
        let round = self.state.round;
        let required = self.state.votes_required;
        let pending: HashSet<u64> = self.state.pending_batch.iter().copied().collect();
        let mut keys: HashSet<String> = self.state.ledger.iter().filter_map(|r| r.idempotency_key.clone()).collect();
        let mut seen: HashSet<(u64, String)> = self
            .state
            .ledger
            .iter()
            .filter(|r| r.round == round)
            .map(|r| (r.item_id, r.rater_id.clone()))
            .collect();
        let mut votes = self.state.votes_this_round();

        let now = Utc::now();
        let mut accepted = Vec::new();
        let mut skipped = 0;
        for input in inputs {
            if let Some(k) = &input.idempotency_key {
                if !keys.insert(k.clone()) {
                    skipped += 1;
                    continue;
                }
            }
            if !pending.contains(&input.item_id) {
                return Err(Error::NotPending { item: input.item_id });
            }
            if input.rater_id.trim().is_empty() {
                return Err(Error::InvalidConfig("rater_id is empty".into()));
            }
            if !seen.insert((input.item_id, input.rater_id.clone())) {
                return Err(Error::DuplicateRating { item: input.item_id, rater: input.rater_id, round });
            }
            let v = votes.entry(input.item_id).or_insert(0);
            if *v >= required {
                return Err(Error::VotesComplete { item: input.item_id, required });
            }
            *v += 1;
            accepted.push(LabelRecord {
                item_id: input.item_id,
                label: input.label,
                rater_id: input.rater_id,
                round,
                timestamp: now,
                idempotency_key: input.idempotency_key,
            });
        }
        let n_accepted = accepted.len();
        self.state.ledger.extend(accepted);

        let complete = self.state.pending_batch.iter().all(|id| votes.get(id).copied().unwrap_or(0) >= required);
        if complete {
            self.resolve_round();
        }
        self.touch();
        Ok(SubmitOutcome { accepted: n_accepted, duplicates_skipped: skipped, resolved: complete, phase: self.state.phase })
    }

    fn resolve_round(&mut self) {
        let round = self.state.round;
        let mut by_item: HashMap<u64, Vec<super::rater::Label>> = HashMap::new();
        for r in self.state.ledger.iter().filter(|r| r.round == round) {
            by_item.entry(r.item_id).or_default().push(r.label);
        }
        for &id in &self.state.pending_batch {
            let votes = &by_item[&id];
            let label = majority_vote(votes).expect("odd vote count cannot tie");
            self.state.resolved.push(ResolvedLabel {
                item_id: id,
                label,
                round,
                votes_positive: votes.iter().filter(|l| l.is_positive()).count() as u32,
                votes_total: votes.len() as u32,
            });
        }
        self.state.pending_batch.clear();
        self.state.phase = Phase::Training;
    }

    /// Captures everything training needs. Fails unless both classes are
    /// present among the resolved labels.
    pub fn training_job(&self) -> Result<TrainingJob> {
        self.require("train", Phase::Training)?;
        let (pos, neg) = self.state.resolved_counts();
        if pos == 0 {
            return Err(Error::MissingClass("positive"));
        }
        if neg == 0 {
            return Err(Error::MissingClass("negative"));
        }
        let labels =
            self.state.resolved.iter().map(|r| LabeledItem { id: r.item_id, positive: r.label.is_positive() }).collect();
        Ok(TrainingJob { round: self.state.round, config: self.state.config.head_for_round(self.state.round), labels })
    }

    /// Stores the trained model, records metrics and advances the phase.
    pub fn complete_training(&mut self, job: &TrainingJob, model: MlpModel, eval: Option<&EvalData>) -> Result<()> {
        self.require("complete_training", Phase::Training)?;
        if job.round != self.state.round {
            return Err(Error::InvalidConfig(format!("training job for round {} but session is at {}", job.round, self.state.round)));
        }
        let report = eval.map(|e| e.report(&model)).transpose()?;
        let (positives, negatives) = self.state.resolved_counts();
        let round = self.state.round;
        self.state.metrics.push(RoundMetrics {
            round,
            hidden_layers: model.hidden_layers(),
            labels: positives + negatives,
            positives,
            negatives,
            eval: report,
        });
        self.state.checkpoints.insert(round, format!("{}/round-{round}.bin", super::store::CHECKPOINT_DIR));
        self.models.insert(round, model);
        self.state.phase = if round >= self.state.final_round { Phase::Done } else { Phase::Selecting };
        self.touch();
        Ok(())
    }

    pub fn run_training(&mut self, corpus: &Corpus, eval: Option<&EvalData>) -> Result<()> {
        let job = self.training_job()?;
        let model = job.run(corpus)?;
        self.complete_training(&job, model, eval)
    }

    pub fn next_batch_size(&self) -> usize {
        self.state.batch_override.unwrap_or(self.state.config.batch_size)
    }

    /// Captures everything selection needs, excluding every labeled item.
    pub fn selection_job(&self, strategy: Option<Strategy>, batch_size: Option<usize>) -> Result<SelectionJob> {
        self.require("select", Phase::Selecting)?;
        let round = self.state.round;
        let model = self.models.get(&round).ok_or(Error::MissingCheckpoint(round))?.clone();
        let cfg = &self.state.config;
        let next = round + 1;
        let mut plan = SelectionPlan::new(
            strategy.unwrap_or(cfg.strategy),
            batch_size.unwrap_or_else(|| self.next_batch_size()),
            self.state.labeled_ids(),
            derive_seed(cfg.seeds.selection, "round", u64::from(next)),
        )?;
        plan.mining_fraction = cfg.mining_fraction;
        Ok(SelectionJob { round: next, plan, model })
    }

    /// Installs the selected batch and opens the next rating round.
    pub fn complete_selection(&mut self, job: &SelectionJob, ids: Vec<u64>) -> Result<&[u64]> {
        self.require("complete_selection", Phase::Selecting)?;
        if job.round != self.state.round + 1 {
            return Err(Error::InvalidConfig(format!("selection job for round {} but session is at {}", job.round, self.state.round)));
        }
        if ids.is_empty() {
            return Err(Error::CorpusExhausted);
        }
        if ids.len() < job.plan.batch_size {
            self.state.clamp_events.push(ClampEvent { round: job.round, requested: job.plan.batch_size, returned: ids.len() });
        }
        self.state.round = job.round;
        self.state.pending_batch = ids;
        self.state.phase = Phase::Rating;
        self.touch();
        Ok(&self.state.pending_batch)
    }

    pub fn run_selection(&mut self, corpus: &Corpus) -> Result<&[u64]> {
        let job = self.selection_job(None, None)?;
        let ids = job.run(corpus)?;
        self.complete_selection(&job, ids)
    }

    /// Reopens a finished session for one more round with its own batch size
    /// and vote count.
    pub fn begin_extra_round(&mut self, batch_size: usize, votes_required: u32) -> Result<()> {
        self.require("begin_extra_round", Phase::Done)?;
        check_votes(votes_required)?;
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        self.state.final_round += 1;
        self.state.batch_override = Some(batch_size);
        self.state.votes_required = votes_required;
        self.state.phase = Phase::Selecting;
        self.touch();
        Ok(())
    }

    /// Answers the pending batch with an oracle binding.
    pub fn rate_pending(&mut self, binding: &RaterBinding) -> Result<SubmitOutcome> {
        self.require("rate_pending", Phase::Rating)?;
        if binding.votes_required != self.state.votes_required {
            return Err(Error::InvalidConfig(format!(
                "binding gives {} votes, round needs {}",
                binding.votes_required, self.state.votes_required
            )));
        }
        let ratings = binding.rate(&self.state.pending_batch, self.state.round)?;
        self.submit_ratings(ratings)
    }

    /// One extra round selected with `batch_size`, rated by `crowd`, then
    /// retrained. Requires a finished session.
    pub fn mixed_rater_round(
        &mut self,
        crowd: &RaterBinding,
        batch_size: usize,
        corpus: &Corpus,
        eval: Option<&EvalData>,
    ) -> Result<()> {
        self.begin_extra_round(batch_size, crowd.votes_required)?;
        self.run_selection(corpus)?;
        self.rate_pending(crowd)?;
        self.run_training(corpus, eval)
    }
}
