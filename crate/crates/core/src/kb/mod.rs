//! Label correction from knowledge-base class membership.
//!
//! Each span's exact surface string is looked up (fixture store or live
//! SPARQL), the returned classes are mapped one-to-one onto UNER nodes, and a
//! [`CorrectionPolicy`] decides whether the span's label changes. Boundaries
//! are never touched.

mod client;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::Serialize;

pub use client::{class_query, lookup, parse_bindings, FixtureClient, KbCache, KbClient, KbRecord, SparqlClient};

use crate::codecs::{AnnotatedDocument, EntitySpan};
use crate::taxonomy::{TagPath, Taxonomy};

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("endpoint {endpoint} unavailable: {message}")]
    EndpointUnavailable { endpoint: String, message: String },
    #[error("fixture line {line}: {message}")]
    Fixture { line: usize, message: String },
    #[error("kb mapping line {line}: {message}")]
    MappingSyntax { line: usize, message: String },
    #[error("kb {kb:?} maps class {class:?} twice")]
    DuplicateClass { kb: String, class: String },
    #[error("kb {kb:?} maps both {first:?} and {second:?} to {path}")]
    NotInjective {
        kb: String,
        first: String,
        second: String,
        path: String,
    },
    #[error("kb {kb:?} maps {class:?} to unknown path {path:?}")]
    UnknownPath { kb: String, class: String, path: String },
    #[error("kb {0:?} is listed twice in the precedence")]
    DuplicatePrecedence(String),
    #[error("unknown correction action {0:?} (expected refine-only, replace or annotate-only)")]
    UnknownAction(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// One-to-one class IRI ↔ UNER path table for one knowledge base.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KbClassMapping {
    pub kb_id: String,
    entries: BTreeMap<String, TagPath>,
    inverse: BTreeMap<TagPath, String>,
}

impl KbClassMapping {
    pub fn get(&self, class_iri: &str) -> Option<&TagPath> {
        self.entries.get(class_iri)
    }

    pub fn class_for(&self, path: &TagPath) -> Option<&str> {
        self.inverse.get(path).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// All class mappings, keyed by kb id.
#[derive(Debug, Clone, Default)]
pub struct KbMappings {
    by_kb: BTreeMap<String, KbClassMapping>,
}

/// The shipped DBpedia / YAGO / Wikidata class tables.
pub const SHIPPED_KB_MAPPINGS_TSV: &str = include_str!("../../data/kb_mappings.tsv");

impl KbMappings {
    /// Parse `kb_id<TAB>class_iri<TAB>uner_path` rows. Tables that are not
    /// injective in both directions are rejected.
    pub fn from_tsv(source: &str, taxonomy: &Taxonomy) -> Result<Self, KbError> {
        let mut by_kb: BTreeMap<String, KbClassMapping> = BTreeMap::new();
        for (n, line) in source.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [kb, class, path] = cols[..] else {
                return Err(KbError::MappingSyntax {
                    line: n + 1,
                    message: format!("expected 3 tab-separated columns, found {}", cols.len()),
                });
            };
            let target = taxonomy.resolve(path).map_err(|_| KbError::UnknownPath {
                kb: kb.to_string(),
                class: class.to_string(),
                path: path.to_string(),
            })?;
            let table = by_kb.entry(kb.to_string()).or_insert_with(|| KbClassMapping {
                kb_id: kb.to_string(),
                ..Default::default()
            });
            if table.entries.contains_key(class) {
                return Err(KbError::DuplicateClass {
                    kb: kb.to_string(),
                    class: class.to_string(),
                });
            }
            if let Some(first) = table.inverse.get(&target) {
                return Err(KbError::NotInjective {
                    kb: kb.to_string(),
                    first: first.clone(),
                    second: class.to_string(),
                    path: target.to_string(),
                });
            }
            table.entries.insert(class.to_string(), target.clone());
            table.inverse.insert(target, class.to_string());
        }
        Ok(KbMappings { by_kb })
    }

    pub fn from_path(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Self, KbError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| KbError::Io {
            context: format!("reading {}", path.display()),
            source,
        })?;
        Self::from_tsv(&text, taxonomy)
    }

    pub fn shipped(taxonomy: &Taxonomy) -> Result<Self, KbError> {
        Self::from_tsv(SHIPPED_KB_MAPPINGS_TSV, taxonomy)
    }

    pub fn get(&self, kb_id: &str) -> Option<&KbClassMapping> {
        self.by_kb.get(kb_id)
    }

    pub fn kb_ids(&self) -> impl Iterator<Item = &str> {
        self.by_kb.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionAction {
    /// Relabel only when the KB label is a strict descendant of the current one.
    RefineOnly,
    /// Always take the KB label.
    Replace,
    /// Record the KB label in the trace, never relabel.
    AnnotateOnly,
}

impl std::str::FromStr for CorrectionAction {
    type Err = KbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "refine-only" => Ok(CorrectionAction::RefineOnly),
            "replace" => Ok(CorrectionAction::Replace),
            "annotate-only" => Ok(CorrectionAction::AnnotateOnly),
            other => Err(KbError::UnknownAction(other.to_string())),
        }
    }
}

impl fmt::Display for CorrectionAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrectionAction::RefineOnly => "refine-only",
            CorrectionAction::Replace => "replace",
            CorrectionAction::AnnotateOnly => "annotate-only",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorrectionPolicy {
    kb_precedence: Vec<String>,
    pub action: CorrectionAction,
}

impl CorrectionPolicy {
    pub fn new(kb_precedence: Vec<String>, action: CorrectionAction) -> Result<Self, KbError> {
        let mut seen = HashSet::new();
        for kb in &kb_precedence {
            if !seen.insert(kb.as_str()) {
                return Err(KbError::DuplicatePrecedence(kb.clone()));
            }
        }
        Ok(CorrectionPolicy { kb_precedence, action })
    }

    pub fn with_action(action: CorrectionAction) -> Self {
        CorrectionPolicy {
            action,
            ..Default::default()
        }
    }

    pub fn kb_precedence(&self) -> &[String] {
        &self.kb_precedence
    }
}

impl Default for CorrectionPolicy {
    fn default() -> Self {
        CorrectionPolicy {
            kb_precedence: vec!["wikidata".into(), "dbpedia".into(), "yago".into()],
            action: CorrectionAction::RefineOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceReason {
    NoEvidence,
    Refined,
    Replaced,
    UnchangedByIdentity,
    ConflictSuppressed,
    Annotated,
}

impl TraceReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceReason::NoEvidence => "no-evidence",
            TraceReason::Refined => "refined",
            TraceReason::Replaced => "replaced",
            TraceReason::UnchangedByIdentity => "unchanged-by-identity",
            TraceReason::ConflictSuppressed => "conflict-suppressed",
            TraceReason::Annotated => "annotated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorrectionTrace {
    pub doc_id: String,
    pub span_id: String,
    pub old_label: TagPath,
    pub new_label: TagPath,
    /// Knowledge base and class that supplied the evidence.
    pub evidence: Option<(String, String)>,
    pub reason: TraceReason,
}

/// Deepest mapped class of the first knowledge base (in precedence order)
/// that has any mapped class for this record. Ties on depth go to the
/// lexicographically smallest path.
fn strongest_evidence<'a>(
    record: &KbRecord,
    mappings: &'a KbMappings,
    policy: &CorrectionPolicy,
) -> Option<(&'a str, String, &'a TagPath)> {
    for kb in &policy.kb_precedence {
        let (Some(table), Some(classes)) = (mappings.get(kb), record.classes.get(kb)) else {
            continue;
        };
        let best = classes
            .iter()
            .filter_map(|c| table.get(c).map(|p| (c, p)))
            .min_by(|(_, a), (_, b)| b.depth().cmp(&a.depth()).then_with(|| a.cmp(b)));
        if let Some((class, path)) = best {
            return Some((table.kb_id.as_str(), class.clone(), path));
        }
    }
    None
}

/// Apply `policy` to one span given its KB record.
pub fn correct_span(
    doc_id: &str,
    span: &EntitySpan,
    record: &KbRecord,
    mappings: &KbMappings,
    policy: &CorrectionPolicy,
) -> (EntitySpan, CorrectionTrace) {
    let mut out = span.clone();
    let mut trace = CorrectionTrace {
        doc_id: doc_id.to_string(),
        span_id: span.id.clone(),
        old_label: span.label.clone(),
        new_label: span.label.clone(),
        evidence: None,
        reason: TraceReason::NoEvidence,
    };
    let Some((kb, class, candidate)) = strongest_evidence(record, mappings, policy) else {
        return (out, trace);
    };
    trace.evidence = Some((kb.to_string(), class));
    let accept = |out: &mut EntitySpan, trace: &mut CorrectionTrace, reason| {
        out.label = candidate.clone();
        out.source = format!("kb:{kb}");
        trace.new_label = candidate.clone();
        trace.reason = reason;
    };
    match policy.action {
        _ if *candidate == span.label && policy.action != CorrectionAction::AnnotateOnly => {
            accept(&mut out, &mut trace, TraceReason::UnchangedByIdentity)
        }
        CorrectionAction::RefineOnly if candidate.is_descendant_of(&span.label) => {
            accept(&mut out, &mut trace, TraceReason::Refined)
        }
        CorrectionAction::RefineOnly => trace.reason = TraceReason::ConflictSuppressed,
        CorrectionAction::Replace => accept(&mut out, &mut trace, TraceReason::Replaced),
        CorrectionAction::AnnotateOnly => {
            trace.new_label = candidate.clone();
            trace.reason = TraceReason::Annotated;
        }
    }
    (out, trace)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorrectionReport {
    pub counts: BTreeMap<TraceReason, usize>,
    pub traces: Vec<CorrectionTrace>,
}

impl CorrectionReport {
    pub fn count(&self, reason: TraceReason) -> usize {
        self.counts.get(&reason).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Counts keyed by reason name.
    pub fn summary(&self) -> BTreeMap<&'static str, usize> {
        self.counts.iter().map(|(r, n)| (r.as_str(), *n)).collect()
    }
}

/// Correct every span of every document.
pub fn correct_corpus(
    corpus: &[AnnotatedDocument],
    client: &dyn KbClient,
    cache: &KbCache,
    mappings: &KbMappings,
    policy: &CorrectionPolicy,
) -> Result<(Vec<AnnotatedDocument>, CorrectionReport), KbError> {
    let mut report = CorrectionReport::default();
    let mut out = Vec::with_capacity(corpus.len());
    for doc in corpus {
        let mut corrected = doc.clone();
        for span in &mut corrected.spans {
            let record = lookup(doc.span_surface(span), client, cache)?;
            let (fixed, trace) = correct_span(&doc.doc_id, span, &record, mappings, policy);
            *report.counts.entry(trace.reason).or_default() += 1;
            report.traces.push(trace);
            *span = fixed;
        }
        out.push(corrected);
    }
    Ok((out, report))
}
