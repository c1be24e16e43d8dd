use super::{ensure_flat, AnnotatedDocument, CodecError, CodecWarning, Decoded};
use crate::taxonomy::TagPath;

/// One IOB2 tag per token: `B-<path>` at span starts, `I-<path>` inside,
/// `O` elsewhere.
pub fn encode_iob2(doc: &AnnotatedDocument) -> Result<Vec<String>, CodecError> {
    ensure_flat(doc)?;
    let mut tags = vec!["O".to_string(); doc.tokens.len()];
    for span in &doc.spans {
        if span.token_end > tags.len() || span.token_start >= span.token_end {
            return Err(CodecError::OffsetOutOfRange(format!(
                "span {} covers tokens {}..{} of {}",
                span.id,
                span.token_start,
                span.token_end,
                tags.len()
            )));
        }
        tags[span.token_start] = format!("B-{}", span.label);
        for tag in &mut tags[span.token_start + 1..span.token_end] {
            *tag = format!("I-{}", span.label);
        }
    }
    Ok(tags)
}

enum Tag {
    Outside,
    Begin(TagPath),
    Inside(TagPath),
}

fn parse_tag(position: usize, raw: &str) -> Result<Tag, CodecError> {
    let raw = raw.trim();
    if raw == "O" {
        return Ok(Tag::Outside);
    }
    let (prefix, label) = raw.split_at_checked(2).ok_or_else(|| CodecError::MalformedTag {
        position,
        tag: raw.to_string(),
    })?;
    let label = || TagPath::parse(label).map_err(|_| CodecError::UnknownLabel(label.to_string()));
    match prefix {
        "B-" => Ok(Tag::Begin(label()?)),
        "I-" => Ok(Tag::Inside(label()?)),
        _ => Err(CodecError::MalformedTag {
            position,
            tag: raw.to_string(),
        }),
    }
}

/// Rebuild spans over the tokens of `doc` from one tag per token. Existing
/// spans on `doc` are replaced; new spans get ids `s0, s1, …` and `source`.
///
/// A dangling `I-X` (no open `X` span) starts a new span and yields a
/// [`CodecWarning::DanglingInside`].
pub fn decode_iob2<S: AsRef<str>>(
    tags: &[S],
    doc: &AnnotatedDocument,
    source: &str,
) -> Result<Decoded<AnnotatedDocument>, CodecError> {
    if tags.len() != doc.tokens.len() {
        return Err(CodecError::TagCountMismatch {
            expected: doc.tokens.len(),
            found: tags.len(),
        });
    }
    let mut out = doc.unannotated();
    let mut warnings = Vec::new();
    let mut open: Option<(usize, TagPath)> = None;
    let mut ranges: Vec<(usize, usize, TagPath)> = Vec::new();

    for (i, raw) in tags.iter().enumerate() {
        let tag = parse_tag(i, raw.as_ref())?;
        match tag {
            Tag::Inside(label) if matches!(&open, Some((_, l)) if *l == label) => {}
            other => {
                if let Some((start, label)) = open.take() {
                    ranges.push((start, i, label));
                }
                match other {
                    Tag::Outside => {}
                    Tag::Begin(label) => open = Some((i, label)),
                    Tag::Inside(label) => {
                        warnings.push(CodecWarning::DanglingInside {
                            token: i,
                            label: label.to_string(),
                        });
                        open = Some((i, label));
                    }
                }
            }
        }
    }
    if let Some((start, label)) = open {
        ranges.push((start, tags.len(), label));
    }
    out.spans = ranges
        .into_iter()
        .enumerate()
        .map(|(n, (s, e, label))| out.make_span(format!("s{n}"), s, e, label, source, None))
        .collect();
    Ok(Decoded { value: out, warnings })
}
