use std::collections::HashSet;
use std::fmt;

use super::AnnotatedDocument;
use crate::taxonomy::Taxonomy;

/// One broken invariant in a document. Violations are data, not errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    TokenIndex { token: usize, found: usize },
    EmptyToken { token: usize },
    TokenOutOfRange { token: usize },
    TokenOrder { token: usize },
    EmptySpan { span: String },
    SpanOutOfRange { span: String },
    SpanOffsets { span: String },
    SpanOrder { span: String },
    DuplicateSpanId { span: String },
    OverlappingSpans { first: String, second: String },
    UnknownLabel { span: String, label: String },
    Confidence { span: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TokenIndex { token, found } => write!(f, "token {token} carries index {found}"),
            Violation::EmptyToken { token } => write!(f, "token {token} is empty"),
            Violation::TokenOutOfRange { token } => write!(f, "token {token} extends past the text"),
            Violation::TokenOrder { token } => write!(f, "token {token} overlaps or precedes its predecessor"),
            Violation::EmptySpan { span } => write!(f, "span {span} is empty"),
            Violation::SpanOutOfRange { span } => write!(f, "span {span} exceeds the token list"),
            Violation::SpanOffsets { span } => {
                write!(f, "span {span} character offsets do not match its tokens")
            }
            Violation::SpanOrder { span } => write!(f, "span {span} is out of order"),
            Violation::DuplicateSpanId { span } => write!(f, "span id {span} is used twice"),
            Violation::OverlappingSpans { first, second } => {
                write!(f, "spans {first} and {second} share a token")
            }
            Violation::UnknownLabel { span, label } => write!(f, "span {span} has unknown label {label:?}"),
            Violation::Confidence { span } => write!(f, "span {span} confidence is outside [0, 1]"),
        }
    }
}

/// All invariant violations of `doc`, including labels unknown to `taxonomy`.
pub fn validate(doc: &AnnotatedDocument, taxonomy: &Taxonomy) -> Vec<Violation> {
    let mut out = validate_structure(doc);
    for span in &doc.spans {
        if !taxonomy.contains(&span.label) {
            out.push(Violation::UnknownLabel {
                span: span.id.clone(),
                label: span.label.to_string(),
            });
        }
    }
    out
}

/// Structural invariants only (tokens, offsets, flatness, ordering).
pub fn validate_structure(doc: &AnnotatedDocument) -> Vec<Violation> {
    let mut out = Vec::new();
    let text_len = doc.char_len();
    for (i, t) in doc.tokens.iter().enumerate() {
        if t.index != i {
            out.push(Violation::TokenIndex {
                token: i,
                found: t.index,
            });
        }
        if t.char_start >= t.char_end {
            out.push(Violation::EmptyToken { token: i });
        }
        if t.char_end > text_len {
            out.push(Violation::TokenOutOfRange { token: i });
        }
        if i > 0 && t.char_start < doc.tokens[i - 1].char_end {
            out.push(Violation::TokenOrder { token: i });
        }
    }

    let mut ids = HashSet::new();
    let mut owner: Vec<Option<&str>> = vec![None; doc.tokens.len()];
    let mut prev_start = 0;
    for span in &doc.spans {
        if !ids.insert(span.id.as_str()) {
            out.push(Violation::DuplicateSpanId { span: span.id.clone() });
        }
        if span.token_start >= span.token_end {
            out.push(Violation::EmptySpan { span: span.id.clone() });
            continue;
        }
        if span.token_end > doc.tokens.len() {
            out.push(Violation::SpanOutOfRange { span: span.id.clone() });
            continue;
        }
        if span.char_start != doc.tokens[span.token_start].char_start
            || span.char_end != doc.tokens[span.token_end - 1].char_end
        {
            out.push(Violation::SpanOffsets { span: span.id.clone() });
        }
        if span.token_start < prev_start {
            out.push(Violation::SpanOrder { span: span.id.clone() });
        }
        prev_start = span.token_start;
        if let Some(c) = span.confidence {
            if !(0.0..=1.0).contains(&c) {
                out.push(Violation::Confidence { span: span.id.clone() });
            }
        }
        let mut reported = false;
        for t in span.token_range() {
            match owner[t] {
                Some(other) if !reported => {
                    out.push(Violation::OverlappingSpans {
                        first: other.to_string(),
                        second: span.id.clone(),
                    });
                    reported = true;
                }
                Some(_) => {}
                None => owner[t] = Some(&span.id),
            }
        }
    }
    out
}
