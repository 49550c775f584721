//! `agile` command line. Exit status is 0 on success, 1 on a usage error and
//! 2 when the command itself fails.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use agile_core::active_learner::{write_scores_jsonl, ScoredItem, Strategy};
use agile_core::ann_index::NnIndex;
use agile_core::concept_head::{load_checkpoint, MlpConfig, MlpModel, MODEL_THRESHOLD};
use agile_core::embed_store::{split, Corpus};
use agile_core::eval_kit::{build_eval_set, MetricReport, ModelScores, SipKey, DEFAULT_EVAL_KEY};
use agile_core::session::{simulate, write_metrics_csv, ConceptSpec, EvalData, RaterBinding, SessionConfig};
use agile_core::synthetic::{planted_concept, read_truth, PlantedConfig};

use crate::api::{AppState, ServerConfig};
use crate::timing::timing_probe;

#[derive(Debug, Parser)]
#[command(name = "agile", version, about = "Interactive concept modeling over image embeddings")]
struct Cli {
    /// Working directory for generated corpora, sessions and reports.
    #[arg(long, global = true, env = "AGILE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate and unit-normalize an embedding matrix.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ids: PathBuf,
        /// Output matrix; defaults to `<data-dir>/embeddings.bin`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a train/test split with this train fraction.
        #[arg(long)]
        split_fraction: Option<f64>,
    },
    /// Build a nearest-neighbour index; exact unless partitions are given.
    BuildIndex {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ids: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        partitions: Option<usize>,
    },
    /// Write a planted-concept corpus with ground truth.
    GenSynthetic {
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        items: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
    },
    /// Run the rating loop against an oracle and write per-round metrics.
    Simulate {
        #[arg(long, default_value_t = 5)]
        rounds: u32,
        #[arg(long, default_value_t = 100)]
        batch: usize,
        #[arg(long, default_value = "margin")]
        strategy: String,
        /// Corpus files; without them the data directory or a freshly
        /// generated planted corpus is used.
        #[arg(long, requires_all = ["ids", "truth", "concept"])]
        corpus: Option<PathBuf>,
        #[arg(long)]
        ids: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        concept: Option<PathBuf>,
        /// Size of the generated corpus when no files are given.
        #[arg(long, default_value_t = 20_000)]
        items: usize,
        #[arg(long, default_value_t = 0.5)]
        train_fraction: f64,
        /// Train heads on the full-size random-negative stream instead of
        /// the desk-scale one.
        #[arg(long)]
        full_stream: bool,
        /// Metrics CSV; defaults to `<data-dir>/metrics.csv` or `./metrics.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the stratified eval set from one or more checkpoints.
    EvalSet {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ids: PathBuf,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        per_stratum: usize,
        /// 128-bit SipHash key as 32 hex digits.
        #[arg(long)]
        key: Option<String>,
    },
    /// Compute metrics for scores against labels, or score a corpus with a
    /// checkpoint first.
    Metrics {
        #[arg(long)]
        truth: PathBuf,
        /// JSONL of {"id","p"}.
        #[arg(long, conflicts_with = "checkpoint")]
        scores: Option<PathBuf>,
        #[arg(long, requires_all = ["corpus", "ids"])]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        ids: Option<PathBuf>,
        #[arg(long, default_value_t = MODEL_THRESHOLD)]
        threshold: f64,
        /// Write the scores used as JSONL.
        #[arg(long)]
        scores_out: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ids: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Wait for an explicit train request after each batch.
        #[arg(long)]
        manual_train: bool,
    },
    /// Measure scoring, selection and training wall-clock time.
    Timing {
        #[arg(long, default_value_t = 1_000_000)]
        items: usize,
        #[arg(long, default_value_t = 512)]
        dim: usize,
        #[arg(long, default_value_t = 100_000)]
        training_examples: usize,
        #[arg(long, default_value_t = 100)]
        batch: usize,
    },
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn data_path(data_dir: &Option<PathBuf>, name: &str) -> PathBuf {
    data_dir.as_ref().map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Ingest { corpus, ids, out, split_fraction } => {
            let c = Corpus::load(&corpus, &ids)?;
            let out = out.unwrap_or_else(|| data_path(&cli.data_dir, "embeddings.bin"));
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            agile_core::embed_store::write_matrix(&out, c.matrix())?;
            let mut summary = serde_json::json!({ "items": c.len(), "dim": c.dim(), "embeddings": out });
            if let Some(f) = split_fraction {
                let all: Vec<u64> = c.ids().collect();
                let s = split(&all, seed, f)?;
                let p = out.with_file_name("split.json");
                std::fs::write(&p, serde_json::to_vec_pretty(&s)?)?;
                summary["split"] = serde_json::json!({ "path": p, "train": s.train_ids.len(), "test": s.test_ids.len() });
            }
            print_json(&summary)
        }
        Command::BuildIndex { corpus, ids, index, partitions } => {
            let c = Arc::new(Corpus::load(&corpus, &ids)?);
            let idx = match partitions {
                Some(n) => NnIndex::build_partitioned(c, n, seed)?,
                None => NnIndex::build_exact(c)?,
            };
            idx.save(&index)?;
            print_json(&serde_json::json!({ "index": index, "partitions": idx.n_partitions() }))
        }
        Command::GenSynthetic { out_dir, items, dim } => {
            let dir = out_dir.or(cli.data_dir).context("--out-dir or --data-dir is required")?;
            let p = planted_concept(&PlantedConfig { n_items: items, dim, seed, ..Default::default() })?;
            p.write(&dir)?;
            print_json(&serde_json::json!({ "dir": dir, "items": items, "dim": dim, "positive_rate": p.positive_rate() }))
        }
        Command::Simulate {
            rounds,
            batch,
            strategy,
            corpus,
            ids,
            truth,
            concept,
            items,
            train_fraction,
            full_stream,
            out,
        } => {
            let strategy: Strategy = strategy.parse()?;
            let (corpus, truth, concept) = simulation_inputs(&cli.data_dir, corpus, ids, truth, concept, items, seed)?;
            let all: Vec<u64> = corpus.ids().collect();
            let s = split(&all, seed, train_fraction)?;
            let train = Arc::new(corpus.subset(&s.train_ids)?);
            let test = Arc::new(corpus.subset(&s.test_ids)?);
            let eval = EvalData::from_truth(test, &truth)?;
            let index = NnIndex::build_exact(train)?;
            let oracle = RaterBinding::oracle(Arc::new(truth));
            let base = if full_stream {
                SessionConfig {
                    seeds: agile_core::session::SeedBundle::from_base(seed),
                    initial_head: MlpConfig::initial_round(),
                    active_head: MlpConfig::active_round(),
                    ..SessionConfig::default()
                }
            } else {
                SessionConfig::desk_scale(seed)
            };
            let config = SessionConfig { rounds, batch_size: batch, strategy, ..base };
            let (_, report) = simulate(concept, config, &oracle, &index, &eval)?;
            let out = out.unwrap_or_else(|| data_path(&cli.data_dir, "metrics.csv"));
            write_metrics_csv(&out, &report.rounds)?;
            let zs = out.with_file_name("zero_shot.json");
            std::fs::write(&zs, serde_json::to_vec_pretty(&report.zero_shot)?)?;
            print_json(&serde_json::json!({
                "metrics": out,
                "zero_shot": zs,
                "final_auc_pr": report.final_auc_pr(),
                "rounds": report.rounds.len(),
            }))
        }
        Command::EvalSet { corpus, ids, checkpoints, out, per_stratum, key } => {
            let key = match key {
                Some(k) => SipKey::from_hex(&k).context("--key must be 32 hex digits")?,
                None => DEFAULT_EVAL_KEY,
            };
            let c = Corpus::load(&corpus, &ids)?;
            let models = checkpoints
                .iter()
                .map(|p| -> anyhow::Result<ModelScores> {
                    let m = load_checkpoint(p)?;
                    Ok(ModelScores { model_id: model_name(p), scores: corpus_scores(&m, &c)? })
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let set = build_eval_set(&models, &c, per_stratum, key)?;
            set.write(&out)?;
            print_json(&serde_json::json!({ "out": out, "entries": set.len(), "key": key.to_hex() }))
        }
        Command::Metrics { truth, scores, checkpoint, corpus, ids, threshold, scores_out } => {
            let truth = read_truth(&truth)?;
            let scored: Vec<ScoredItem> = match (scores, checkpoint) {
                (Some(p), None) => read_scores(&p)?,
                (None, Some(ck)) => {
                    let c = Corpus::load(corpus.as_deref().unwrap(), ids.as_deref().unwrap())?;
                    agile_core::active_learner::score_corpus(&load_checkpoint(&ck)?, &c, &[])?
                }
                _ => bail!("one of --scores or --checkpoint is required"),
            };
            if let Some(p) = scores_out {
                write_scores_jsonl(&p, &scored)?;
            }
            let labels = scored
                .iter()
                .map(|s| truth.get(&s.id).copied().with_context(|| format!("no label for item {}", s.id)))
                .collect::<anyhow::Result<Vec<bool>>>()?;
            let probs: Vec<f64> = scored.iter().map(|s| s.p).collect();
            print_json(&MetricReport::compute(&labels, &probs, threshold)?)
        }
        Command::Serve { corpus, ids, index, port, ui_dir, manual_train } => {
            let c = Arc::new(Corpus::load(&corpus, &ids)?);
            let idx = match index {
                Some(p) => NnIndex::load(&p, c)?,
                None => NnIndex::build_exact(c)?,
            };
            let config = ServerConfig { data_dir: cli.data_dir, auto_train: !manual_train, ui_dir, embed_seed: seed };
            let state = AppState::new(Arc::new(idx), config)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
                    .await
                    .with_context(|| format!("binding port {port}"))?;
                log::warn!("listening on {}", listener.local_addr()?);
                crate::api::serve(listener, state).await
            })
        }
        Command::Timing { items, dim, training_examples, batch } => {
            let c = agile_core::synthetic::uniform_sphere_corpus(items, dim, seed);
            let cfg = MlpConfig { seed, ..MlpConfig::active_round() };
            let model = MlpModel::initialize(dim, &cfg, &mut agile_core::rng::seeded(seed));
            print_json(&timing_probe(&c, &model, batch, training_examples)?)
        }
    }
}

type SimulationInputs = (Corpus, std::collections::HashMap<u64, bool>, ConceptSpec);

fn simulation_inputs(
    data_dir: &Option<PathBuf>,
    corpus: Option<PathBuf>,
    ids: Option<PathBuf>,
    truth: Option<PathBuf>,
    concept: Option<PathBuf>,
    items: usize,
    seed: u64,
) -> anyhow::Result<SimulationInputs> {
    let from_files = |c: &Path, i: &Path, t: &Path, k: &Path| -> anyhow::Result<SimulationInputs> {
        let corpus = Corpus::load(c, i)?;
        let truth = read_truth(t)?;
        let concept: ConceptSpec = serde_json::from_slice(&std::fs::read(k).with_context(|| format!("reading {}", k.display()))?)?;
        Ok((corpus, truth, concept))
    };
    if let (Some(c), Some(i), Some(t), Some(k)) = (&corpus, &ids, &truth, &concept) {
        return from_files(c, i, t, k);
    }
    if let Some(d) = data_dir.as_ref().filter(|d| d.join("embeddings.bin").exists()) {
        return from_files(&d.join("embeddings.bin"), &d.join("ids.jsonl"), &d.join("truth.jsonl"), &d.join("concept.json"));
    }
    let p = planted_concept(&PlantedConfig { n_items: items, seed, ..Default::default() })?;
    Ok((p.corpus, p.truth, p.concept))
}

fn model_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn corpus_scores(model: &MlpModel, corpus: &Corpus) -> agile_core::Result<Vec<f64>> {
    Ok(agile_core::active_learner::score_corpus(model, corpus, &[])?.into_iter().map(|s| s.p).collect())
}

fn read_scores(path: &Path) -> anyhow::Result<Vec<ScoredItem>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("bad score line {l:?}")))
        .collect()
}
