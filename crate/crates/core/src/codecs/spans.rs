use serde::{Deserialize, Serialize};

use super::{AnnotatedDocument, CodecError, EntitySpan, Token};
use crate::taxonomy::TagPath;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocRecord {
    doc_id: String,
    lang: String,
    text: String,
    tokens: Vec<TokenRecord>,
    spans: Vec<SpanRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenRecord {
    i: usize,
    start: usize,
    end: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpanRecord {
    id: String,
    token_start: usize,
    token_end: usize,
    /// Character offsets; always written, optional on input.
    #[serde(default)]
    start: Option<usize>,
    #[serde(default)]
    end: Option<usize>,
    label: String,
    source: String,
    #[serde(default)]
    confidence: Option<f64>,
}

/// Serialize one document as a single-line interchange record.
pub fn encode_spans(doc: &AnnotatedDocument) -> String {
    let record = DocRecord {
        doc_id: doc.doc_id.clone(),
        lang: doc.lang.clone(),
        text: doc.text.clone(),
        tokens: doc
            .tokens
            .iter()
            .map(|t| TokenRecord {
                i: t.index,
                start: t.char_start,
                end: t.char_end,
            })
            .collect(),
        spans: doc
            .spans
            .iter()
            .map(|s| SpanRecord {
                id: s.id.clone(),
                token_start: s.token_start,
                token_end: s.token_end,
                start: Some(s.char_start),
                end: Some(s.char_end),
                label: s.label.to_string(),
                source: s.source.clone(),
                confidence: s.confidence,
            })
            .collect(),
    };
    serde_json::to_string(&record).expect("document record serializes")
}

/// Parse one interchange record, checking offsets against the text.
pub fn decode_spans(line: &str) -> Result<AnnotatedDocument, CodecError> {
    let record: DocRecord = serde_json::from_str(line).map_err(|e| CodecError::SchemaViolation(e.to_string()))?;
    let text_len = record.text.chars().count();

    let mut tokens = Vec::with_capacity(record.tokens.len());
    for (n, t) in record.tokens.iter().enumerate() {
        if t.i != n {
            return Err(CodecError::SchemaViolation(format!("token {n} has i = {}", t.i)));
        }
        if t.end <= t.start || t.end > text_len {
            return Err(CodecError::OffsetOutOfRange(format!(
                "token {n} spans {}..{} in a text of {text_len} characters",
                t.start, t.end
            )));
        }
        if let Some(prev) = tokens.last().map(|p: &Token| p.char_end) {
            if t.start < prev {
                return Err(CodecError::SchemaViolation(format!(
                    "token {n} starts at {} before the previous token ends at {prev}",
                    t.start
                )));
            }
        }
        tokens.push(Token::new(n, t.start, t.end));
    }

    let mut spans = Vec::with_capacity(record.spans.len());
    for s in record.spans {
        if s.token_end <= s.token_start || s.token_end > tokens.len() {
            return Err(CodecError::OffsetOutOfRange(format!(
                "span {} covers tokens {}..{} of {}",
                s.id,
                s.token_start,
                s.token_end,
                tokens.len()
            )));
        }
        let char_start = tokens[s.token_start].char_start;
        let char_end = tokens[s.token_end - 1].char_end;
        if s.start.is_some_and(|v| v != char_start) || s.end.is_some_and(|v| v != char_end) {
            return Err(CodecError::OffsetOutOfRange(format!(
                "span {} character offsets {:?}..{:?} disagree with its tokens {char_start}..{char_end}",
                s.id, s.start, s.end
            )));
        }
        if s.confidence.is_some_and(|c| !(0.0..=1.0).contains(&c)) {
            return Err(CodecError::SchemaViolation(format!(
                "span {} confidence outside [0, 1]",
                s.id
            )));
        }
        let label = TagPath::parse(&s.label).map_err(|_| CodecError::UnknownLabel(s.label.clone()))?;
        spans.push(EntitySpan {
            id: s.id,
            token_start: s.token_start,
            token_end: s.token_end,
            char_start,
            char_end,
            label,
            source: s.source,
            confidence: s.confidence,
        });
    }

    Ok(AnnotatedDocument {
        doc_id: record.doc_id,
        lang: record.lang,
        text: record.text,
        tokens,
        spans,
    })
}
