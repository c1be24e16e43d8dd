//! Annotation formats over a shared document model.
//!
//! Three encodings are supported and convert losslessly into each other for
//! flat span sets:
//!
//! * IOB2 token tags (`B-Name.Person.Name`, `I-…`, `O`),
//! * inline markup with dotted-path element names
//!   (`<Name.Person.Name>George Clooney</Name.Person.Name>`),
//! * line-delimited JSON records with code-point offsets (the interchange
//!   format every pipeline stage reads and writes).
//!
//! All offsets count Unicode code points and are end-exclusive.

mod document;
pub mod io;
mod iob2;
mod spans;
mod tokenize;
mod validate;
mod xml;

pub use document::{AnnotatedDocument, EntitySpan, Token};
pub use iob2::{decode_iob2, encode_iob2};
pub use spans::{decode_spans, encode_spans};
pub use tokenize::{PretokenizedText, SimpleTokenizer, Tokenizer, WhitespaceTokenizer};
pub use validate::{validate, validate_structure, Violation};
pub use xml::{decode_inline_xml, encode_inline_xml};

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("document {doc_id:?}: spans {first:?} and {second:?} share a token")]
    OverlappingSpans {
        doc_id: String,
        first: String,
        second: String,
    },
    #[error("expected {expected} tags, found {found}")]
    TagCountMismatch { expected: usize, found: usize },
    #[error("malformed tag {tag:?} at token {position}")]
    MalformedTag { position: usize, tag: String },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("malformed markup at character {offset}: {message}")]
    MalformedMarkup { offset: usize, message: String },
    #[error("nested element at character {offset}")]
    NestedSpans { offset: usize },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("offset out of range: {0}")]
    OffsetOutOfRange(String),
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<CodecError>,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CodecError {
    pub fn at_line(self, line: usize) -> Self {
        match self {
            CodecError::AtLine { .. } => self,
            other => CodecError::AtLine {
                line,
                source: Box::new(other),
            },
        }
    }

    /// The error without line-number wrapping.
    pub fn root(&self) -> &CodecError {
        match self {
            CodecError::AtLine { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Non-fatal repairs made while decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodecWarning {
    /// `I-` tag with no open span of the same label; treated as `B-`.
    DanglingInside { token: usize, label: String },
    /// Markup boundary moved outward to token boundaries.
    SnappedBoundary {
        label: String,
        from: (usize, usize),
        to: (usize, usize),
    },
}

impl std::fmt::Display for CodecWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CodecWarning::DanglingInside { token, label } => {
                write!(f, "token {token}: I-{label} without open span, repaired to B-{label}")
            }
            CodecWarning::SnappedBoundary { label, from, to } => write!(
                f,
                "{label}: characters {}..{} snapped to token boundaries {}..{}",
                from.0, from.1, to.0, to.1
            ),
        }
    }
}

/// A decoded value together with any repairs applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded<T> {
    pub value: T,
    pub warnings: Vec<CodecWarning>,
}

/// The supported on-disk formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Format {
    Spans,
    Iob2,
    Xml,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spans" | "jsonl" => Ok(Format::Spans),
            "iob2" | "bio" => Ok(Format::Iob2),
            "xml" | "inline-xml" => Ok(Format::Xml),
            other => Err(format!("unknown format {other:?} (expected spans, iob2 or xml)")),
        }
    }
}

pub(crate) fn ensure_flat(doc: &AnnotatedDocument) -> Result<(), CodecError> {
    let mut sorted: Vec<&EntitySpan> = doc.spans.iter().collect();
    sorted.sort_by_key(|s| (s.token_start, s.token_end));
    for pair in sorted.windows(2) {
        if pair[0].shares_token_with(pair[1]) {
            return Err(CodecError::OverlappingSpans {
                doc_id: doc.doc_id.clone(),
                first: pair[0].id.clone(),
                second: pair[1].id.clone(),
            });
        }
    }
    Ok(())
}
