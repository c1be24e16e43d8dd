//! Span-level scoring, corpus distribution profiles and train/dev/test export.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::codecs::io::{write_atomic, write_iob2_document};
use crate::codecs::{encode_spans, validate_structure, AnnotatedDocument, CodecError, Format};
use crate::taxonomy::{TagPath, Taxonomy, MAX_DEPTH};

#[derive(Debug, thiserror::Error)]
pub enum EvaluationError {
    #[error("gold and predicted corpora differ: {0}")]
    CorpusMismatch(String),
    #[error("document {doc_id:?} is invalid: {}", violations.join("; "))]
    InvalidCorpus { doc_id: String, violations: Vec<String> },
    #[error("unknown match level {0:?} (expected exact or 1-4)")]
    UnknownLevel(String),
    #[error("export format must be spans or iob2")]
    UnsupportedFormat,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum MatchLevel {
    #[default]
    Exact,
    Level(usize),
}

impl MatchLevel {
    pub fn apply(self, label: &TagPath) -> TagPath {
        match self {
            MatchLevel::Exact => label.clone(),
            MatchLevel::Level(k) => label.coarsen(k).expect("level checked on construction"),
        }
    }

    /// Every level from finest to coarsest.
    pub fn all() -> impl Iterator<Item = MatchLevel> {
        std::iter::once(MatchLevel::Exact).chain((1..=MAX_DEPTH).rev().map(MatchLevel::Level))
    }
}

impl std::str::FromStr for MatchLevel {
    type Err = EvaluationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "exact" {
            return Ok(MatchLevel::Exact);
        }
        match s.parse::<usize>() {
            Ok(k) if (1..=MAX_DEPTH).contains(&k) => Ok(MatchLevel::Level(k)),
            _ => Err(EvaluationError::UnknownLevel(s.to_string())),
        }
    }
}

impl fmt::Display for MatchLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchLevel::Exact => f.write_str("exact"),
            MatchLevel::Level(k) => write!(f, "{k}"),
        }
    }
}

impl Serialize for MatchLevel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            MatchLevel::Exact => serializer.serialize_str("exact"),
            MatchLevel::Level(k) => serializer.serialize_u64(*k as u64),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub true_positives: usize,
    pub predicted_count: usize,
    pub gold_count: usize,
}

impl Counts {
    pub fn merge(&mut self, other: Counts) {
        self.true_positives += other.true_positives;
        self.predicted_count += other.predicted_count;
        self.gold_count += other.gold_count;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.true_positives, self.predicted_count)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positives, self.gold_count)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<Counts> for Prf {
    fn from(counts: Counts) -> Self {
        Prf {
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub match_level: MatchLevel,
    pub true_positives: usize,
    pub predicted_count: usize,
    pub gold_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Keyed by label after coarsening to the match level.
    pub per_label: BTreeMap<String, Prf>,
}

impl ScoreReport {
    fn from_counts(match_level: MatchLevel, total: Counts, per_label: BTreeMap<String, Counts>) -> Self {
        ScoreReport {
            match_level,
            true_positives: total.true_positives,
            predicted_count: total.predicted_count,
            gold_count: total.gold_count,
            precision: total.precision(),
            recall: total.recall(),
            f1: total.f1(),
            per_label: per_label.into_iter().map(|(k, v)| (k, v.into())).collect(),
        }
    }

    pub fn table(&self) -> String {
        let width = self
            .per_label
            .keys()
            .map(|k| k.chars().count())
            .max()
            .unwrap_or(0)
            .max(5);
        let mut out = format!("match level: {}\n", self.match_level);
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>7}  {:>7}  {:>7}\n",
            "label", "tp", "pred", "gold", "P", "R", "F1"
        ));
        let mut row = |name: &str, p: &Prf| {
            out.push_str(&format!(
                "{:<width$}  {:>6}  {:>6}  {:>6}  {:>7.4}  {:>7.4}  {:>7.4}\n",
                name,
                p.counts.true_positives,
                p.counts.predicted_count,
                p.counts.gold_count,
                p.precision,
                p.recall,
                p.f1
            ));
        };
        for (label, p) in &self.per_label {
            row(label, p);
        }
        let total = Prf::from(Counts {
            true_positives: self.true_positives,
            predicted_count: self.predicted_count,
            gold_count: self.gold_count,
        });
        row("TOTAL", &total);
        out
    }
}

/// Per-label counts for one document pair.
fn score_document(
    gold: &AnnotatedDocument,
    pred: &AnnotatedDocument,
    level: MatchLevel,
    per_label: &mut BTreeMap<String, Counts>,
) -> Counts {
    let mut gold_keys: HashMap<(usize, usize, TagPath), usize> = HashMap::new();
    for span in &gold.spans {
        let label = level.apply(&span.label);
        per_label.entry(label.to_string()).or_default().gold_count += 1;
        *gold_keys.entry((span.token_start, span.token_end, label)).or_default() += 1;
    }
    let mut counts = Counts {
        true_positives: 0,
        predicted_count: pred.spans.len(),
        gold_count: gold.spans.len(),
    };
    for span in &pred.spans {
        let label = level.apply(&span.label);
        let entry = per_label.entry(label.to_string()).or_default();
        entry.predicted_count += 1;
        if let Some(left) = gold_keys.get_mut(&(span.token_start, span.token_end, label)) {
            if *left > 0 {
                *left -= 1;
                entry.true_positives += 1;
                counts.true_positives += 1;
            }
        }
    }
    counts
}

pub fn score(
    gold: &[AnnotatedDocument],
    pred: &[AnnotatedDocument],
    level: MatchLevel,
) -> Result<ScoreReport, EvaluationError> {
    let mut by_id: HashMap<&str, &AnnotatedDocument> = HashMap::new();
    for doc in pred {
        if by_id.insert(doc.doc_id.as_str(), doc).is_some() {
            return Err(EvaluationError::CorpusMismatch(format!(
                "document {:?} repeated in predictions",
                doc.doc_id
            )));
        }
    }
    if gold.len() != by_id.len() {
        return Err(EvaluationError::CorpusMismatch(format!(
            "{} gold documents, {} predicted",
            gold.len(),
            by_id.len()
        )));
    }
    let mut total = Counts::default();
    let mut per_label = BTreeMap::new();
    for g in gold {
        let Some(p) = by_id.remove(g.doc_id.as_str()) else {
            return Err(EvaluationError::CorpusMismatch(format!(
                "document {:?} has no prediction",
                g.doc_id
            )));
        };
        if !g.same_tokenization(p) {
            return Err(EvaluationError::CorpusMismatch(format!(
                "document {:?} is tokenized differently",
                g.doc_id
            )));
        }
        total.merge(score_document(g, p, level, &mut per_label));
    }
    Ok(ScoreReport::from_counts(level, total, per_label))
}

pub const SURFACE_HEAD: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub documents: usize,
    pub total_spans: usize,
    pub counts: BTreeMap<String, usize>,
    /// `marginals[k - 1]` holds counts after coarsening every label to level k.
    pub marginals: Vec<BTreeMap<String, usize>>,
    /// Taxonomy nodes with no span at or below them, in taxonomy order.
    pub zero_examples: Vec<String>,
    pub surface_head: Vec<(String, usize)>,
}

impl DistributionReport {
    pub fn marginal(&self, level: usize) -> &BTreeMap<String, usize> {
        &self.marginals[level - 1]
    }
}

pub fn distribution_report(docs: &[AnnotatedDocument], taxonomy: &Taxonomy) -> DistributionReport {
    distribution_report_with_head(docs, taxonomy, SURFACE_HEAD)
}

pub fn distribution_report_with_head(
    docs: &[AnnotatedDocument],
    taxonomy: &Taxonomy,
    head: usize,
) -> DistributionReport {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut marginals = vec![BTreeMap::<String, usize>::new(); MAX_DEPTH];
    let mut surfaces: HashMap<&str, usize> = HashMap::new();
    let mut covered = std::collections::HashSet::new();
    let mut total = 0;
    for doc in docs {
        for span in &doc.spans {
            total += 1;
            *counts.entry(span.label.to_string()).or_default() += 1;
            for (k, marginal) in marginals.iter_mut().enumerate() {
                let coarse = span.label.coarsen(k + 1).expect("level in range");
                *marginal.entry(coarse.to_string()).or_default() += 1;
            }
            for d in 1..=span.label.depth() {
                covered.insert(span.label.prefix(d).expect("depth in range"));
            }
            *surfaces.entry(doc.span_surface(span)).or_default() += 1;
        }
    }
    let zero_examples = taxonomy
        .paths()
        .filter(|p| !covered.contains(*p))
        .map(|p| p.to_string())
        .collect();
    let mut surface_head: Vec<(String, usize)> = surfaces.into_iter().map(|(s, n)| (s.to_string(), n)).collect();
    surface_head.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    surface_head.truncate(head);
    DistributionReport {
        documents: docs.len(),
        total_spans: total,
        counts,
        marginals,
        zero_examples,
        surface_head,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExportSummary {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub files: Vec<PathBuf>,
}

/// Split sizes for `n` documents: 80/10/10 with rounding, test takes the rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * 0.8).round() as usize;
    let dev = ((n as f64 * 0.1).round() as usize).min(n - train);
    (train, dev, n - train - dev)
}

fn split_key(doc_id: &str) -> [u8; 32] {
    Sha256::digest(doc_id.as_bytes()).into()
}

/// Assign documents to train/dev/test by the SHA-256 of their id.
pub fn split_corpus(docs: &[AnnotatedDocument]) -> [Vec<&AnnotatedDocument>; 3] {
    let mut ordered: Vec<&AnnotatedDocument> = docs.iter().collect();
    ordered.sort_by_cached_key(|d| (split_key(&d.doc_id), d.doc_id.clone()));
    let (train, dev, _) = split_sizes(ordered.len());
    let test = ordered.split_off(train + dev);
    let dev_part = ordered.split_off(train);
    [ordered, dev_part, test]
}

/// Write `train`, `dev` and `test` files into `out_dir`. Every document is
/// validated and encoded before anything is written.
pub fn export_training(
    docs: &[AnnotatedDocument],
    format: Format,
    out_dir: &Path,
) -> Result<ExportSummary, EvaluationError> {
    for doc in docs {
        let violations = validate_structure(doc);
        if !violations.is_empty() {
            return Err(EvaluationError::InvalidCorpus {
                doc_id: doc.doc_id.clone(),
                violations: violations.iter().map(|v| v.to_string()).collect(),
            });
        }
    }
    let extension = match format {
        Format::Spans => "jsonl",
        Format::Iob2 => "iob2",
        Format::Xml => return Err(EvaluationError::UnsupportedFormat),
    };
    let parts = split_corpus(docs);
    let mut bodies = Vec::with_capacity(3);
    for part in &parts {
        let mut body = Vec::new();
        for doc in part {
            match format {
                Format::Spans => {
                    body.extend_from_slice(encode_spans(doc).as_bytes());
                    body.push(b'\n');
                }
                _ => write_iob2_document(&mut body, doc)?,
            }
        }
        bodies.push(body);
    }
    std::fs::create_dir_all(out_dir).map_err(|source| CodecError::Io {
        context: format!("creating {}", out_dir.display()),
        source,
    })?;
    let mut files = Vec::new();
    for (name, body) in ["train", "dev", "test"].iter().zip(bodies) {
        let path = out_dir.join(format!("{name}.{extension}"));
        write_atomic(&path, |w| std::io::Write::write_all(w, &body))?;
        files.push(path);
    }
    Ok(ExportSummary {
        train: parts[0].len(),
        dev: parts[1].len(),
        test: parts[2].len(),
        files,
    })
}
