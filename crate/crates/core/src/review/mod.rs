//! Human review: task sampling, the verdict log and majority adjudication.

mod server;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codecs::AnnotatedDocument;
use crate::taxonomy::{TagPath, Taxonomy};

pub use server::{Response, ReviewService, RunningServer};

pub const DEFAULT_QUORUM: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("task id {0:?} appears twice")]
    DuplicateTaskId(String),
    #[error("annotator {annotator_id:?} already judged task {task_id:?}")]
    DuplicateVerdict { task_id: String, annotator_id: String },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("invalid verdict: {0}")]
    InvalidVerdict(String),
    #[error("quorum must be at least 1")]
    InvalidQuorum,
    #[error("bad sampling spec {0:?}")]
    Sampling(String),
    #[error("cannot start server: {0}")]
    Bind(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> ReviewError {
    let context = context.into();
    move |source| ReviewError::Io { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    #[default]
    Open,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewTask {
    pub task_id: String,
    pub doc_id: String,
    pub span_id: String,
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
    pub proposed: TagPath,
    pub candidates: Vec<TagPath>,
    #[serde(default)]
    pub status: TaskStatus,
}

pub fn task_id(doc_id: &str, span_id: &str) -> String {
    format!("{doc_id}#{span_id}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    All,
    /// The first `n` spans of each label, in corpus order.
    PerLabelQuota(usize),
    /// `round(fraction * spans)` spans chosen with a seeded generator.
    Random {
        fraction: f64,
        seed: u64,
    },
}

impl std::str::FromStr for Sampling {
    type Err = ReviewError;

    /// `all`, `per-label-quota:N` or `random:FRACTION:SEED`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ReviewError::Sampling(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["all"] => Ok(Sampling::All),
            ["per-label-quota", n] => Ok(Sampling::PerLabelQuota(n.parse().map_err(|_| bad())?)),
            ["random", fraction, seed] => {
                let fraction: f64 = fraction.parse().map_err(|_| bad())?;
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(bad());
                }
                Ok(Sampling::Random {
                    fraction,
                    seed: seed.parse().map_err(|_| bad())?,
                })
            }
            _ => Err(bad()),
        }
    }
}

/// One task per sampled span, in corpus order.
pub fn generate_tasks(docs: &[AnnotatedDocument], sampling: Sampling, taxonomy: &Taxonomy) -> Vec<ReviewTask> {
    let all: Vec<(&AnnotatedDocument, usize)> = docs
        .iter()
        .flat_map(|d| (0..d.spans.len()).map(move |i| (d, i)))
        .collect();
    let chosen: Vec<usize> = match sampling {
        Sampling::All => (0..all.len()).collect(),
        Sampling::PerLabelQuota(n) => {
            let mut taken: HashMap<&TagPath, usize> = HashMap::new();
            (0..all.len())
                .filter(|&k| {
                    let (d, i) = all[k];
                    let seen = taken.entry(&d.spans[i].label).or_default();
                    *seen += 1;
                    *seen <= n
                })
                .collect()
        }
        Sampling::Random { fraction, seed } => {
            let amount = ((all.len() as f64 * fraction).round() as usize).min(all.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, all.len(), amount).into_vec();
            picked.sort_unstable();
            picked
        }
    };
    chosen
        .into_iter()
        .map(|k| {
            let (doc, i) = all[k];
            let span = &doc.spans[i];
            let mut candidates = taxonomy.siblings(&span.label);
            candidates.extend(taxonomy.ancestors(&span.label));
            ReviewTask {
                task_id: task_id(&doc.doc_id, &span.id),
                doc_id: doc.doc_id.clone(),
                span_id: span.id.clone(),
                text: doc.text.clone(),
                char_start: span.char_start,
                char_end: span.char_end,
                proposed: span.label.clone(),
                candidates,
                status: TaskStatus::Open,
            }
        })
        .collect()
}

pub fn write_tasks(path: &Path, tasks: &[ReviewTask]) -> Result<(), ReviewError> {
    let mut body = String::new();
    for task in tasks {
        body.push_str(&serde_json::to_string(task).expect("task serializes"));
        body.push('\n');
    }
    std::fs::write(path, body).map_err(io_err(format!("writing {}", path.display())))
}

pub fn read_tasks(path: &Path) -> Result<Vec<ReviewTask>, ReviewError> {
    let file = File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
    let mut seen = HashSet::new();
    let mut tasks = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(format!("reading {}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let task: ReviewTask = serde_json::from_str(&line).map_err(|e| ReviewError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(task.task_id.clone()) {
            return Err(ReviewError::DuplicateTaskId(task.task_id));
        }
        tasks.push(task);
    }
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Accept,
    Reject,
    Relabel(TagPath),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub task_id: String,
    pub annotator_id: String,
    pub action: Action,
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
}

/// Wire form of a verdict, both in the log and in request bodies.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRecord {
    pub task_id: String,
    pub annotator_id: String,
    pub action: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub ts: Option<u64>,
}

impl Verdict {
    pub fn from_record(record: VerdictRecord, taxonomy: &Taxonomy) -> Result<Verdict, ReviewError> {
        let invalid = |m: String| ReviewError::InvalidVerdict(m);
        if record.task_id.is_empty() || record.annotator_id.is_empty() {
            return Err(invalid("task_id and annotator_id must be non-empty".into()));
        }
        let action = match (record.action.as_str(), record.label) {
            ("accept", None) => Action::Accept,
            ("reject", None) => Action::Reject,
            ("relabel", Some(label)) => {
                let path = TagPath::parse(&label).map_err(|e| invalid(e.to_string()))?;
                if !taxonomy.contains(&path) {
                    return Err(invalid(format!("label {label:?} is not in the taxonomy")));
                }
                Action::Relabel(path)
            }
            ("accept" | "reject", Some(_)) => return Err(invalid("only relabel carries a label".into())),
            ("relabel", None) => return Err(invalid("relabel needs a label".into())),
            (other, _) => return Err(invalid(format!("unknown action {other:?}"))),
        };
        Ok(Verdict {
            task_id: record.task_id,
            annotator_id: record.annotator_id,
            action,
            ts: record.ts.unwrap_or_else(now_millis),
        })
    }

    pub fn to_record(&self) -> VerdictRecord {
        let (action, label) = match &self.action {
            Action::Accept => ("accept", None),
            Action::Reject => ("reject", None),
            Action::Relabel(p) => ("relabel", Some(p.to_string())),
        };
        VerdictRecord {
            task_id: self.task_id.clone(),
            annotator_id: self.annotator_id.clone(),
            action: action.to_string(),
            label,
            ts: Some(self.ts),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("record serializes")
    }
}

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Parse a verdict log. Repeated `(task, annotator)` pairs are rejected.
pub fn parse_verdict_log(source: &str, taxonomy: &Taxonomy) -> Result<Vec<Verdict>, ReviewError> {
    let mut seen = HashSet::new();
    let mut verdicts = Vec::new();
    for (n, line) in source.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| ReviewError::Parse { line: n + 1, message };
        let record: VerdictRecord = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        let verdict = Verdict::from_record(record, taxonomy).map_err(|e| at(e.to_string()))?;
        if !seen.insert((verdict.task_id.clone(), verdict.annotator_id.clone())) {
            return Err(ReviewError::DuplicateVerdict {
                task_id: verdict.task_id,
                annotator_id: verdict.annotator_id,
            });
        }
        verdicts.push(verdict);
    }
    Ok(verdicts)
}

pub fn read_verdict_log(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<Verdict>, ReviewError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    parse_verdict_log(&text, taxonomy)
}

pub fn append_verdict(file: &mut File, verdict: &Verdict) -> std::io::Result<()> {
    let mut line = verdict.to_line();
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.flush()
}

pub fn open_log(path: &Path) -> Result<File, ReviewError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(format!("opening {}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Majority(Action),
    /// No action reached a strict majority.
    NoMajority,
    QuorumUnmet,
}

/// Strict majority among the verdict actions once `quorum` is met.
pub fn decide(actions: &[Action], quorum: usize) -> Decision {
    if actions.len() < quorum.max(1) {
        return Decision::QuorumUnmet;
    }
    let mut tally: BTreeMap<&Action, usize> = BTreeMap::new();
    for a in actions {
        *tally.entry(a).or_default() += 1;
    }
    match tally.into_iter().find(|(_, n)| 2 * n > actions.len()) {
        Some((action, _)) => Decision::Majority(action.clone()),
        None => Decision::NoMajority,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LabelAcceptance {
    pub verdicts: usize,
    pub accepts: usize,
    pub accept_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AdjudicationReport {
    pub quorum: usize,
    pub tasks: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub relabeled: usize,
    /// Quorum met but no strict majority; the original span is kept.
    pub flagged: Vec<String>,
    pub quorum_unmet: Vec<String>,
    /// Tasks whose span no longer exists as it was when the task was made.
    pub stale: Vec<String>,
    /// Share of quorum-meeting tasks whose verdicts all agree.
    pub unanimity: Option<f64>,
    pub per_label: BTreeMap<String, LabelAcceptance>,
}

/// Apply majority verdicts to `docs`. The log is only read; re-applying it to
/// the output changes nothing.
pub fn apply_verdicts(
    docs: &[AnnotatedDocument],
    tasks: &[ReviewTask],
    verdicts: &[Verdict],
    quorum: usize,
) -> Result<(Vec<AnnotatedDocument>, AdjudicationReport), ReviewError> {
    if quorum == 0 {
        return Err(ReviewError::InvalidQuorum);
    }
    let task_index: HashMap<&str, &ReviewTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut by_task: HashMap<&str, Vec<Action>> = HashMap::new();
    let mut seen = HashSet::new();
    let mut report = AdjudicationReport {
        quorum,
        tasks: tasks.len(),
        ..Default::default()
    };
    for v in verdicts {
        let Some(task) = task_index.get(v.task_id.as_str()) else {
            return Err(ReviewError::UnknownTask(v.task_id.clone()));
        };
        if !seen.insert((v.task_id.as_str(), v.annotator_id.as_str())) {
            return Err(ReviewError::DuplicateVerdict {
                task_id: v.task_id.clone(),
                annotator_id: v.annotator_id.clone(),
            });
        }
        let label = report.per_label.entry(task.proposed.to_string()).or_default();
        label.verdicts += 1;
        if v.action == Action::Accept {
            label.accepts += 1;
        }
        by_task.entry(task.task_id.as_str()).or_default().push(v.action.clone());
    }
    for label in report.per_label.values_mut() {
        label.accept_rate = label.accepts as f64 / label.verdicts as f64;
    }

    let mut out: Vec<AnnotatedDocument> = docs.to_vec();
    let doc_index: HashMap<String, usize> = out.iter().enumerate().map(|(i, d)| (d.doc_id.clone(), i)).collect();
    let (mut quorate, mut unanimous) = (0usize, 0usize);
    for task in tasks {
        let actions = by_task.get(task.task_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let decision = decide(actions, quorum);
        if decision != Decision::QuorumUnmet {
            quorate += 1;
            if actions.windows(2).all(|w| w[0] == w[1]) {
                unanimous += 1;
            }
        }
        let action = match decision {
            Decision::QuorumUnmet => {
                report.quorum_unmet.push(task.task_id.clone());
                continue;
            }
            Decision::NoMajority => {
                report.flagged.push(task.task_id.clone());
                continue;
            }
            Decision::Majority(action) => action,
        };
        let located = doc_index.get(&task.doc_id).and_then(|&d| {
            out[d]
                .spans
                .iter()
                .position(|s| s.id == task.span_id && s.char_start == task.char_start && s.char_end == task.char_end)
                .map(|s| (d, s))
        });
        let Some((d, s)) = located else {
            report.stale.push(task.task_id.clone());
            continue;
        };
        match action {
            Action::Accept => report.accepted += 1,
            Action::Reject => {
                out[d].spans.remove(s);
                report.rejected += 1;
            }
            Action::Relabel(label) => {
                let span = &mut out[d].spans[s];
                span.label = label;
                span.source = "human".to_string();
                report.relabeled += 1;
            }
        }
    }
    report.unanimity = (quorate > 0).then(|| unanimous as f64 / quorate as f64);
    Ok((out, report))
}
