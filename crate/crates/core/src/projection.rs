//! Cross-lingual span projection over word alignments.
//!
//! For a source span, the target tokens aligned to any of its tokens are
//! collected; if enough of the span's tokens are aligned (`min_coverage`),
//! the projected span is the contiguous hull of those target tokens with the
//! same label.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codecs::{AnnotatedDocument, EntitySpan};

#[derive(Debug, thiserror::Error)]
pub enum ProjectionError {
    #[error("pair {pair_id:?}: link {source_index}-{target_index} is out of range")]
    IndexOutOfRange {
        pair_id: String,
        source_index: usize,
        target_index: usize,
    },
    #[error("pair {pair_id:?}: span {span_id:?} lies outside the source tokens")]
    SpanOutOfRange { pair_id: String, span_id: String },
    #[error("pair {0:?}: target document already has spans")]
    TargetAlreadyAnnotated(String),
    #[error("pair id {0:?} appears twice")]
    DuplicatePair(String),
    #[error("pair {pair_id:?}: no {side} document with that id")]
    MissingDocument { pair_id: String, side: &'static str },
    #[error("alignment line {line}: {message}")]
    AlignmentSyntax { line: usize, message: String },
    #[error("min_coverage {0} outside [0, 1]")]
    InvalidCoverage(f64),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OnCollision {
    /// A span overlapping one already placed is discarded.
    #[default]
    Drop,
    /// Overlaps are resolved in target order: the span starting first in the
    /// target sentence is kept, whatever its source position.
    KeepFirst,
}

impl std::str::FromStr for OnCollision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drop" => Ok(OnCollision::Drop),
            "keep-first" => Ok(OnCollision::KeepFirst),
            other => Err(format!(
                "unknown collision policy {other:?} (expected drop or keep-first)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub min_coverage: f64,
    pub on_collision: OnCollision,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            min_coverage: 0.5,
            on_collision: OnCollision::Drop,
        }
    }
}

impl ProjectionConfig {
    pub fn new(min_coverage: f64, on_collision: OnCollision) -> Result<Self, ProjectionError> {
        if !(0.0..=1.0).contains(&min_coverage) {
            return Err(ProjectionError::InvalidCoverage(min_coverage));
        }
        Ok(ProjectionConfig {
            min_coverage,
            on_collision,
        })
    }
}

/// Source and target sentences plus many-to-many word alignment links
/// `(source token, target token)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSentencePair {
    pub pair_id: String,
    pub source: AnnotatedDocument,
    pub target: AnnotatedDocument,
    links: BTreeSet<(usize, usize)>,
}

impl AlignedSentencePair {
    pub fn new(
        pair_id: impl Into<String>,
        source: AnnotatedDocument,
        target: AnnotatedDocument,
        links: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, ProjectionError> {
        let pair_id = pair_id.into();
        let links: BTreeSet<_> = links.into_iter().collect();
        if let Some(&(i, j)) = links
            .iter()
            .find(|(i, j)| *i >= source.tokens.len() || *j >= target.tokens.len())
        {
            return Err(ProjectionError::IndexOutOfRange {
                pair_id,
                source_index: i,
                target_index: j,
            });
        }
        Ok(AlignedSentencePair {
            pair_id,
            source,
            target,
            links,
        })
    }

    pub fn links(&self) -> &BTreeSet<(usize, usize)> {
        &self.links
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionReason {
    Projected,
    Unaligned,
    LowCoverage,
    Collision,
}

/// What happened to one source span.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanOutcome {
    pub span_id: String,
    pub label: String,
    pub reason: ProjectionReason,
    /// Fraction of source tokens with at least one link.
    pub coverage: f64,
    /// Candidate target token range, if any target token was aligned.
    pub target_range: Option<(usize, usize)>,
    /// The aligned target tokens do not fill the hull.
    pub hull_gapped: bool,
}

/// Projection of a single span; `span` is `None` when it was rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanProjection {
    pub span: Option<EntitySpan>,
    pub outcome: SpanOutcome,
}

pub fn project_span(
    span: &EntitySpan,
    pair: &AlignedSentencePair,
    config: &ProjectionConfig,
) -> Result<SpanProjection, ProjectionError> {
    if span.token_start >= span.token_end || span.token_end > pair.source.tokens.len() {
        return Err(ProjectionError::SpanOutOfRange {
            pair_id: pair.pair_id.clone(),
            span_id: span.id.clone(),
        });
    }
    let mut targets = BTreeSet::new();
    let mut aligned_sources = BTreeSet::new();
    for &(i, j) in pair.links.range((span.token_start, 0)..(span.token_end, 0)) {
        targets.insert(j);
        aligned_sources.insert(i);
    }
    let coverage = aligned_sources.len() as f64 / span.len() as f64;
    let mut outcome = SpanOutcome {
        span_id: span.id.clone(),
        label: span.label.to_string(),
        reason: ProjectionReason::Unaligned,
        coverage,
        target_range: None,
        hull_gapped: false,
    };
    let (Some(&lo), Some(&hi)) = (targets.first(), targets.last()) else {
        return Ok(SpanProjection { span: None, outcome });
    };
    outcome.target_range = Some((lo, hi + 1));
    outcome.hull_gapped = targets.len() != hi + 1 - lo;
    if coverage < config.min_coverage {
        outcome.reason = ProjectionReason::LowCoverage;
        return Ok(SpanProjection { span: None, outcome });
    }
    outcome.reason = ProjectionReason::Projected;
    let projected = pair.target.make_span(
        span.id.clone(),
        lo,
        hi + 1,
        span.label.clone(),
        format!("proj:{}", span.source),
        span.confidence,
    );
    Ok(SpanProjection {
        span: Some(projected),
        outcome,
    })
}

/// Project every source span onto the (unannotated) target.
pub fn project_document(
    pair: &AlignedSentencePair,
    config: &ProjectionConfig,
) -> Result<(AnnotatedDocument, Vec<SpanOutcome>), ProjectionError> {
    if !pair.target.spans.is_empty() {
        return Err(ProjectionError::TargetAlreadyAnnotated(pair.pair_id.clone()));
    }
    let mut source_spans: Vec<&EntitySpan> = pair.source.spans.iter().collect();
    source_spans.sort_by_key(|s| (s.token_start, s.token_end));

    let mut candidates = Vec::with_capacity(source_spans.len());
    for span in source_spans {
        candidates.push(project_span(span, pair, config)?);
    }

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    if config.on_collision == OnCollision::KeepFirst {
        order.sort_by_key(|&k| {
            let s = candidates[k].span.as_ref();
            (s.map_or(usize::MAX, |s| s.token_start), s.map_or(0, |s| s.token_end), k)
        });
    }
    let mut taken = vec![false; pair.target.tokens.len()];
    for k in order {
        let candidate = &mut candidates[k];
        let Some(span) = &candidate.span else {
            continue;
        };
        if taken[span.token_range()].iter().any(|&t| t) {
            candidate.span = None;
            candidate.outcome.reason = ProjectionReason::Collision;
            continue;
        }
        taken[span.token_range()].iter_mut().for_each(|t| *t = true);
    }

    let mut target = pair.target.clone();
    let mut outcomes = Vec::with_capacity(candidates.len());
    for candidate in candidates {
        if let Some(span) = candidate.span {
            target.spans.push(span);
        }
        outcomes.push(candidate.outcome);
    }
    target.sort_spans();
    Ok((target, outcomes))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LabelProjection {
    pub source_spans: usize,
    pub projected: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProjectionReport {
    pub pairs: usize,
    pub counts: BTreeMap<ProjectionReason, usize>,
    pub per_label: BTreeMap<String, LabelProjection>,
    pub hull_gapped: usize,
}

impl ProjectionReport {
    pub fn add(&mut self, outcomes: &[SpanOutcome]) {
        self.pairs += 1;
        for o in outcomes {
            *self.counts.entry(o.reason).or_default() += 1;
            let label = self.per_label.entry(o.label.clone()).or_default();
            label.source_spans += 1;
            if o.reason == ProjectionReason::Projected {
                label.projected += 1;
                if o.hull_gapped {
                    self.hull_gapped += 1;
                }
            }
        }
    }

    pub fn merge(&mut self, other: ProjectionReport) {
        self.pairs += other.pairs;
        self.hull_gapped += other.hull_gapped;
        for (reason, n) in other.counts {
            *self.counts.entry(reason).or_default() += n;
        }
        for (label, p) in other.per_label {
            let entry = self.per_label.entry(label).or_default();
            entry.source_spans += p.source_spans;
            entry.projected += p.projected;
        }
    }

    pub fn count(&self, reason: ProjectionReason) -> usize {
        self.counts.get(&reason).copied().unwrap_or(0)
    }

    pub fn source_spans(&self) -> usize {
        self.counts.values().sum()
    }

    /// Projected over source spans; `None` when there were no source spans.
    pub fn projection_rate(&self) -> Option<f64> {
        let total = self.source_spans();
        (total > 0).then(|| self.count(ProjectionReason::Projected) as f64 / total as f64)
    }
}

pub fn project_corpus(
    pairs: &[AlignedSentencePair],
    config: &ProjectionConfig,
) -> Result<(Vec<AnnotatedDocument>, ProjectionReport), ProjectionError> {
    let mut seen = HashSet::new();
    let mut report = ProjectionReport::default();
    let mut targets = Vec::with_capacity(pairs.len());
    for pair in pairs {
        if !seen.insert(pair.pair_id.as_str()) {
            return Err(ProjectionError::DuplicatePair(pair.pair_id.clone()));
        }
        let (target, outcomes) = project_document(pair, config)?;
        report.add(&outcomes);
        targets.push(target);
    }
    Ok((targets, report))
}

/// A pair id and its `(source, target)` token links.
pub type PairLinks = (String, Vec<(usize, usize)>);

/// Parse `pair_id<TAB>i-j i-j …` lines (0-based, space separated).
pub fn parse_alignments(source: &str) -> Result<Vec<PairLinks>, ProjectionError> {
    let mut out = Vec::new();
    for (n, line) in source.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let syntax = |message: String| ProjectionError::AlignmentSyntax { line: n + 1, message };
        let (pair_id, rest) = line.split_once('\t').unwrap_or((line, ""));
        if pair_id.is_empty() {
            return Err(syntax("empty pair id".into()));
        }
        let mut links = Vec::new();
        for link in rest.split_whitespace() {
            let parsed = link
                .split_once('-')
                .and_then(|(i, j)| Some((i.parse().ok()?, j.parse().ok()?)));
            links.push(parsed.ok_or_else(|| syntax(format!("bad link {link:?}")))?);
        }
        out.push((pair_id.to_string(), links));
    }
    Ok(out)
}

pub fn format_alignment(pair_id: &str, links: &BTreeSet<(usize, usize)>) -> String {
    let links: Vec<String> = links.iter().map(|(i, j)| format!("{i}-{j}")).collect();
    format!("{pair_id}\t{}", links.join(" "))
}

pub fn read_alignments(path: impl AsRef<Path>) -> Result<Vec<PairLinks>, ProjectionError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ProjectionError::Io {
        context: format!("reading {}", path.display()),
        source,
    })?;
    parse_alignments(&text)
}

/// Join source and target corpora by document id, in alignment-file order.
pub fn build_pairs(
    sources: Vec<AnnotatedDocument>,
    targets: Vec<AnnotatedDocument>,
    alignments: Vec<PairLinks>,
) -> Result<Vec<AlignedSentencePair>, ProjectionError> {
    let mut sources: HashMap<String, AnnotatedDocument> = sources.into_iter().map(|d| (d.doc_id.clone(), d)).collect();
    let mut targets: HashMap<String, AnnotatedDocument> = targets.into_iter().map(|d| (d.doc_id.clone(), d)).collect();
    let mut pairs = Vec::with_capacity(alignments.len());
    for (pair_id, links) in alignments {
        let missing = |side| ProjectionError::MissingDocument {
            pair_id: pair_id.clone(),
            side,
        };
        let source = sources.remove(&pair_id).ok_or_else(|| missing("source"))?;
        let target = targets.remove(&pair_id).ok_or_else(|| missing("target"))?;
        pairs.push(AlignedSentencePair::new(pair_id, source, target, links)?);
    }
    Ok(pairs)
}
