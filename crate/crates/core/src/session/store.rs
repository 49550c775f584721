use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use super::rater::LabelRecord;
use super::state::{RoundMetrics, Session, SessionState};
use crate::concept_head::{load_checkpoint, save_checkpoint};
use crate::error::{io, json};
use crate::Result;

pub const CHECKPOINT_DIR: &str = "checkpoints";
const STATE_FILE: &str = "session.json";
const LEDGER_FILE: &str = "ledger.jsonl";
const METRICS_FILE: &str = "metrics.csv";

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| io(&tmp, e))?;
        f.sync_all().map_err(|e| io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| io(path, e))
}

/// Writes the session directory. Checkpoints already on disk are not
/// rewritten since a round's model never changes.
pub fn save_session(session: &Session, dir: &Path) -> Result<()> {
    let ckpt_dir = dir.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| io(&ckpt_dir, e))?;
    let state = session.state();
    for (round, rel) in &state.checkpoints {
        let path = dir.join(rel);
        if !path.exists() {
            let model = session.model(*round).ok_or(crate::Error::MissingCheckpoint(*round))?;
            save_checkpoint(model, &path)?;
        }
    }
    let mut ledger = Vec::new();
    for r in &state.ledger {
        serde_json::to_writer(&mut ledger, r).map_err(|e| json("ledger record", e))?;
        ledger.push(b'\n');
    }
    write_atomic(&dir.join(LEDGER_FILE), &ledger)?;
    write_metrics_csv(&dir.join(METRICS_FILE), &state.metrics)?;
    let body = serde_json::to_vec_pretty(state).map_err(|e| json("session state", e))?;
    write_atomic(&dir.join(STATE_FILE), &body)
}

pub fn load_session(dir: &Path) -> Result<Session> {
    let state_path = dir.join(STATE_FILE);
    let text = std::fs::read_to_string(&state_path).map_err(|e| io(&state_path, e))?;
    let mut state: SessionState = serde_json::from_str(&text).map_err(|e| json("session state", e))?;

    let ledger_path = dir.join(LEDGER_FILE);
    if ledger_path.exists() {
        let f = std::fs::File::open(&ledger_path).map_err(|e| io(&ledger_path, e))?;
        for line in std::io::BufReader::new(f).lines() {
            let line = line.map_err(|e| io(&ledger_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: LabelRecord = serde_json::from_str(&line).map_err(|e| json("ledger record", e))?;
            state.ledger.push(record);
        }
    }

    let mut models = BTreeMap::new();
    for (round, rel) in &state.checkpoints {
        models.insert(*round, load_checkpoint(&dir.join(rel))?);
    }
    Ok(Session::from_parts(state, models))
}

/// Per-round metric series, one row per trained round. Missing values are
/// left empty.
pub fn metrics_csv(metrics: &[RoundMetrics]) -> String {
    let mut out = String::from("round,labels,positives,negatives,auc_pr,auc_roc,f1,accuracy,eval_pos,eval_neg\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for m in metrics {
        let e = m.eval.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            m.round,
            m.labels,
            m.positives,
            m.negatives,
            opt(e.and_then(|e| e.auc_pr)),
            opt(e.and_then(|e| e.auc_roc)),
            opt(e.and_then(|e| e.f1)),
            opt(e.and_then(|e| e.accuracy)),
            e.map(|e| e.n_pos.to_string()).unwrap_or_default(),
            e.map(|e| e.n_neg.to_string()).unwrap_or_default(),
        );
    }
    out
}

pub fn write_metrics_csv(path: &Path, metrics: &[RoundMetrics]) -> Result<()> {
    write_atomic(path, metrics_csv(metrics).as_bytes())
}
