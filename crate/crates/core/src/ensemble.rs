//! Recall-priority merging of several taggers' output.
//!
//! Runs are ranked by reported recall (descending, ties by model id). Each
//! run in turn may only add spans whose tokens are all still untagged; a span
//! that touches an already-tagged token is suppressed whole rather than
//! truncated.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::codecs::{io::read_corpus, AnnotatedDocument, CodecError};
use crate::taxonomy::{SchemeRegistry, Taxonomy, TaxonomyError, IDENTITY_SCHEME};

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("model {0:?} has no reported recall")]
    MissingRecall(String),
    #[error("model {model:?} reports recall {value} outside [0, 1]")]
    InvalidRecall { model: String, value: f64 },
    #[error("model {0:?} appears twice")]
    DuplicateModel(String),
    #[error("model {model:?} contains document {doc_id:?} twice")]
    DuplicateDocument { model: String, doc_id: String },
    #[error("model {model:?}, document {doc_id:?}: spans {first:?} and {second:?} overlap")]
    OverlappingRunSpans {
        model: String,
        doc_id: String,
        first: String,
        second: String,
    },
    #[error("document {doc_id:?} is tokenized differently by model {model:?}")]
    TokenizationMismatch { doc_id: String, model: String },
    #[error("model {model:?}: {source}")]
    Label {
        model: String,
        #[source]
        source: TaxonomyError,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("corpus of model {model:?}: {source}")]
    Corpus {
        model: String,
        #[source]
        source: CodecError,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// One tagger's output over a corpus.
#[derive(Debug, Clone)]
pub struct ModelRun {
    pub model_id: String,
    pub reported_recall: Option<f64>,
    pub scheme_id: String,
    documents: Vec<AnnotatedDocument>,
    index: HashMap<String, usize>,
}

impl ModelRun {
    /// Ingest a run. Every span is stamped with `source = model_id`; runs
    /// with repeated documents or self-overlapping spans are rejected.
    pub fn new(
        model_id: impl Into<String>,
        reported_recall: Option<f64>,
        scheme_id: impl Into<String>,
        documents: Vec<AnnotatedDocument>,
    ) -> Result<Self, EnsembleError> {
        let model_id = model_id.into();
        let mut index = HashMap::with_capacity(documents.len());
        let mut documents = documents;
        for (n, doc) in documents.iter_mut().enumerate() {
            if index.insert(doc.doc_id.clone(), n).is_some() {
                return Err(EnsembleError::DuplicateDocument {
                    model: model_id.clone(),
                    doc_id: doc.doc_id.clone(),
                });
            }
            doc.sort_spans();
            if let Some((a, b)) = doc.first_overlap() {
                return Err(EnsembleError::OverlappingRunSpans {
                    model: model_id.clone(),
                    doc_id: doc.doc_id.clone(),
                    first: doc.spans[a].id.clone(),
                    second: doc.spans[b].id.clone(),
                });
            }
            for span in &mut doc.spans {
                span.source = model_id.clone();
            }
        }
        Ok(ModelRun {
            model_id,
            reported_recall,
            scheme_id: scheme_id.into(),
            documents,
            index,
        })
    }

    pub fn document(&self, doc_id: &str) -> Option<&AnnotatedDocument> {
        self.index.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn documents(&self) -> &[AnnotatedDocument] {
        &self.documents
    }

    fn recall(&self) -> Result<f64, EnsembleError> {
        let value = self
            .reported_recall
            .ok_or_else(|| EnsembleError::MissingRecall(self.model_id.clone()))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(EnsembleError::InvalidRecall {
                model: self.model_id.clone(),
                value,
            });
        }
        Ok(value)
    }
}

/// Priority order: descending recall, ties by ascending model id.
pub fn rank_models(runs: &[ModelRun]) -> Result<Vec<&ModelRun>, EnsembleError> {
    let mut keyed = Vec::with_capacity(runs.len());
    for run in runs {
        keyed.push((run.recall()?, run));
    }
    let mut ids: Vec<&str> = runs.iter().map(|r| r.model_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(dup) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(EnsembleError::DuplicateModel(dup[0].to_string()));
    }
    keyed.sort_by(|(ra, a), (rb, b)| rb.total_cmp(ra).then_with(|| a.model_id.cmp(&b.model_id)));
    Ok(keyed.into_iter().map(|(_, run)| run).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ModelCounts {
    pub admitted: usize,
    pub suppressed: usize,
}

impl ModelCounts {
    pub fn produced(&self) -> usize {
        self.admitted + self.suppressed
    }
}

/// Span occurrences and exact (case-sensitive) surface-string frequencies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EntityInventory {
    pub occurrences: usize,
    pub surfaces: BTreeMap<String, usize>,
}

impl EntityInventory {
    pub fn distinct_surfaces(&self) -> usize {
        self.surfaces.len()
    }

    pub fn add_document(&mut self, doc: &AnnotatedDocument) {
        for span in &doc.spans {
            self.occurrences += 1;
            *self.surfaces.entry(doc.span_surface(span).to_string()).or_default() += 1;
        }
    }

    pub fn merge(&mut self, other: EntityInventory) {
        self.occurrences += other.occurrences;
        for (surface, n) in other.surfaces {
            *self.surfaces.entry(surface).or_default() += n;
        }
    }
}

pub fn entity_inventory<'a>(corpus: impl IntoIterator<Item = &'a AnnotatedDocument>) -> EntityInventory {
    let mut inventory = EntityInventory::default();
    for doc in corpus {
        inventory.add_document(doc);
    }
    inventory
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MergeReport {
    pub models: BTreeMap<String, ModelCounts>,
    pub inventory: EntityInventory,
}

impl MergeReport {
    pub fn occurrences(&self) -> usize {
        self.inventory.occurrences
    }

    pub fn distinct_surfaces(&self) -> usize {
        self.inventory.distinct_surfaces()
    }

    /// Associative, commutative combination of two reports.
    pub fn merge(&mut self, other: MergeReport) {
        for (model, counts) in other.models {
            let entry = self.models.entry(model).or_default();
            entry.admitted += counts.admitted;
            entry.suppressed += counts.suppressed;
        }
        self.inventory.merge(other.inventory);
    }
}

/// Merge one document across runs already in priority order.
pub fn merge_document(
    doc_id: &str,
    runs: &[&ModelRun],
    taxonomy: &Taxonomy,
    schemes: &SchemeRegistry,
) -> Result<Option<(AnnotatedDocument, MergeReport)>, EnsembleError> {
    let present: Vec<(&ModelRun, &AnnotatedDocument)> = runs
        .iter()
        .filter_map(|r| r.document(doc_id).map(|d| (*r, d)))
        .collect();
    let Some(&(_, base)) = present.first() else {
        return Ok(None);
    };
    let mut merged = base.unannotated();
    let mut report = MergeReport::default();
    for run in runs {
        report.models.insert(run.model_id.clone(), ModelCounts::default());
    }
    let mut taken = vec![false; merged.tokens.len()];

    for (run, doc) in present {
        if !doc.same_tokenization(base) {
            return Err(EnsembleError::TokenizationMismatch {
                doc_id: doc_id.to_string(),
                model: run.model_id.clone(),
            });
        }
        let counts = report.models.get_mut(&run.model_id).expect("inserted above");
        let identity = run.scheme_id == IDENTITY_SCHEME && schemes.get(IDENTITY_SCHEME).is_none();
        for span in &doc.spans {
            let label_err = |source| EnsembleError::Label {
                model: run.model_id.clone(),
                source,
            };
            let label = if identity {
                if !taxonomy.contains(&span.label) {
                    return Err(label_err(TaxonomyError::UnmappedLabel {
                        scheme: run.scheme_id.clone(),
                        label: span.label.to_string(),
                    }));
                }
                None
            } else {
                Some(
                    schemes
                        .map_path(&run.scheme_id, &span.label, taxonomy)
                        .map_err(label_err)?,
                )
            };
            if taken[span.token_range()].iter().any(|&t| t) {
                counts.suppressed += 1;
                continue;
            }
            taken[span.token_range()].iter_mut().for_each(|t| *t = true);
            counts.admitted += 1;
            let mut admitted = span.clone();
            if let Some(label) = label {
                admitted.label = label;
            }
            merged.spans.push(admitted);
        }
    }
    merged.sort_spans();
    for (n, span) in merged.spans.iter_mut().enumerate() {
        span.id = format!("s{n}");
    }
    report.inventory.add_document(&merged);
    Ok(Some((merged, report)))
}

/// Rank `runs` and merge every document any of them contains.
///
/// Documents come out in first-seen order walking the runs by priority.
pub fn merge_corpus(
    runs: &[ModelRun],
    taxonomy: &Taxonomy,
    schemes: &SchemeRegistry,
) -> Result<(Vec<AnnotatedDocument>, MergeReport), EnsembleError> {
    let ranked = rank_models(runs)?;
    for run in &ranked {
        if !schemes.knows(&run.scheme_id) {
            return Err(EnsembleError::Label {
                model: run.model_id.clone(),
                source: TaxonomyError::UnknownScheme(run.scheme_id.clone()),
            });
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut order = Vec::new();
    for run in &ranked {
        for doc in run.documents() {
            if seen.insert(doc.doc_id.as_str()) {
                order.push(doc.doc_id.as_str());
            }
        }
    }
    let mut report = MergeReport::default();
    for run in &ranked {
        report.models.insert(run.model_id.clone(), ModelCounts::default());
    }
    let mut corpus = Vec::with_capacity(order.len());
    for doc_id in order {
        if let Some((doc, fragment)) = merge_document(doc_id, &ranked, taxonomy, schemes)? {
            report.merge(fragment);
            corpus.push(doc);
        }
    }
    Ok((corpus, report))
}

/// One row of a run manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub model_id: String,
    pub reported_recall: Option<f64>,
    pub scheme_id: String,
    pub corpus_path: PathBuf,
}

/// Parse `model_id<TAB>reported_recall<TAB>scheme_id<TAB>corpus_path` rows.
/// Relative corpus paths are resolved against `base_dir`.
pub fn parse_manifest(source: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>, EnsembleError> {
    let mut entries = Vec::new();
    for (n, line) in source.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [model_id, recall, scheme_id, path] = cols[..] else {
            return Err(EnsembleError::Manifest {
                line: n + 1,
                message: format!("expected 4 tab-separated columns, found {}", cols.len()),
            });
        };
        let reported_recall = match recall.trim() {
            "" => None,
            raw => Some(raw.parse::<f64>().map_err(|_| EnsembleError::Manifest {
                line: n + 1,
                message: format!("recall {raw:?} is not a number"),
            })?),
        };
        entries.push(ManifestEntry {
            model_id: model_id.to_string(),
            reported_recall,
            scheme_id: scheme_id.to_string(),
            corpus_path: base_dir.join(path),
        });
    }
    Ok(entries)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, EnsembleError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EnsembleError::Io {
        context: format!("reading {}", path.display()),
        source,
    })?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Read every corpus a manifest names.
pub fn load_runs(entries: &[ManifestEntry]) -> Result<Vec<ModelRun>, EnsembleError> {
    entries
        .iter()
        .map(|e| {
            let docs = read_corpus(&e.corpus_path).map_err(|source| EnsembleError::Corpus {
                model: e.model_id.clone(),
                source,
            })?;
            ModelRun::new(&e.model_id, e.reported_recall, &e.scheme_id, docs)
        })
        .collect()
}
