use std::collections::BTreeMap;
use std::path::Path;

use super::{TagPath, Taxonomy, TaxonomyError};

/// Scheme id whose labels are already UNER paths.
pub const IDENTITY_SCHEME: &str = "uner";

/// External tagset → UNER table for one scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemeMapping {
    pub scheme_id: String,
    pub entries: BTreeMap<String, TagPath>,
}

impl SchemeMapping {
    pub fn map_label(&self, external: &str) -> Result<TagPath, TaxonomyError> {
        self.entries
            .get(external)
            .cloned()
            .ok_or_else(|| TaxonomyError::UnmappedLabel {
                scheme: self.scheme_id.clone(),
                label: external.to_string(),
            })
    }

    /// Declared external label inventory.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// All scheme mappings loaded for a run, keyed by scheme id.
#[derive(Debug, Clone, Default)]
pub struct SchemeRegistry {
    schemes: BTreeMap<String, SchemeMapping>,
}

/// Mapping tables shipped with the crate (CoNLL-2003, OntoNotes 5, MUC-7).
pub const SHIPPED_SCHEMES_TSV: &str = include_str!("../../data/scheme_mappings.tsv");

impl SchemeRegistry {
    /// Parse `scheme_id<TAB>external_label<TAB>uner_path` rows, checking every
    /// target against `taxonomy`.
    pub fn from_tsv(source: &str, taxonomy: &Taxonomy) -> Result<Self, TaxonomyError> {
        let mut registry = SchemeRegistry::default();
        registry.extend_from_tsv(source, taxonomy)?;
        Ok(registry)
    }

    pub fn extend_from_tsv(&mut self, source: &str, taxonomy: &Taxonomy) -> Result<(), TaxonomyError> {
        for (n, line) in source.lines().enumerate() {
            let line_no = n + 1;
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').collect();
            let [scheme, label, path] = cols[..] else {
                return Err(TaxonomyError::MappingSyntax {
                    line: line_no,
                    message: format!("expected 3 tab-separated columns, found {}", cols.len()),
                });
            };
            if scheme.is_empty() || label.is_empty() {
                return Err(TaxonomyError::MappingSyntax {
                    line: line_no,
                    message: "empty scheme id or label".into(),
                });
            }
            let target = taxonomy.resolve(path).map_err(|_| TaxonomyError::MappingTarget {
                scheme: scheme.to_string(),
                label: label.to_string(),
                path: path.to_string(),
            })?;
            let mapping = self.schemes.entry(scheme.to_string()).or_insert_with(|| SchemeMapping {
                scheme_id: scheme.to_string(),
                entries: BTreeMap::new(),
            });
            if mapping.entries.insert(label.to_string(), target).is_some() {
                return Err(TaxonomyError::DuplicateMapping {
                    scheme: scheme.to_string(),
                    label: label.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn from_path(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Self, TaxonomyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            context: format!("reading {}", path.display()),
            source,
        })?;
        Self::from_tsv(&text, taxonomy)
    }

    pub fn shipped(taxonomy: &Taxonomy) -> Result<Self, TaxonomyError> {
        Self::from_tsv(SHIPPED_SCHEMES_TSV, taxonomy)
    }

    pub fn get(&self, scheme_id: &str) -> Option<&SchemeMapping> {
        self.schemes.get(scheme_id)
    }

    pub fn scheme_ids(&self) -> impl Iterator<Item = &str> {
        self.schemes.keys().map(String::as_str)
    }

    /// Map `label` from `scheme_id` into the taxonomy. The `uner` scheme
    /// resolves labels directly.
    pub fn map_label(&self, scheme_id: &str, label: &str, taxonomy: &Taxonomy) -> Result<TagPath, TaxonomyError> {
        if scheme_id == IDENTITY_SCHEME && !self.schemes.contains_key(IDENTITY_SCHEME) {
            return taxonomy.resolve(label).map_err(|_| TaxonomyError::UnmappedLabel {
                scheme: scheme_id.to_string(),
                label: label.to_string(),
            });
        }
        self.schemes
            .get(scheme_id)
            .ok_or_else(|| TaxonomyError::UnknownScheme(scheme_id.to_string()))?
            .map_label(label)
    }

    /// [`map_label`](Self::map_label) for a label already parsed as a path.
    pub fn map_path(&self, scheme_id: &str, label: &TagPath, taxonomy: &Taxonomy) -> Result<TagPath, TaxonomyError> {
        if scheme_id == IDENTITY_SCHEME && !self.schemes.contains_key(IDENTITY_SCHEME) {
            return if taxonomy.contains(label) {
                Ok(label.clone())
            } else {
                Err(TaxonomyError::UnmappedLabel {
                    scheme: scheme_id.to_string(),
                    label: label.to_string(),
                })
            };
        }
        self.map_label(scheme_id, label.as_str(), taxonomy)
    }

    pub fn knows(&self, scheme_id: &str) -> bool {
        scheme_id == IDENTITY_SCHEME || self.schemes.contains_key(scheme_id)
    }
}
