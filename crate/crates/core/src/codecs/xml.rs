use super::{ensure_flat, AnnotatedDocument, CodecError, CodecWarning, Decoded, Tokenizer};
use crate::taxonomy::TagPath;

fn escape_into(out: &mut String, c: char) {
    match c {
        '&' => out.push_str("&amp;"),
        '<' => out.push_str("&lt;"),
        '>' => out.push_str("&gt;"),
        c => out.push(c),
    }
}

/// Document text with every span wrapped in `<path>…</path>`.
pub fn encode_inline_xml(doc: &AnnotatedDocument) -> Result<String, CodecError> {
    ensure_flat(doc)?;
    let mut spans: Vec<_> = doc.spans.iter().collect();
    spans.sort_by_key(|s| s.char_start);
    let mut out = String::with_capacity(doc.text.len() + spans.len() * 32);
    let mut next = spans.iter().peekable();
    let mut open: Option<(&TagPath, usize)> = None;
    let len = doc.char_len();
    for (pos, c) in doc.text.chars().enumerate() {
        if let Some((label, end)) = open {
            if end == pos {
                out.push_str(&format!("</{label}>"));
                open = None;
            }
        }
        if let Some(span) = next.next_if(|s| s.char_start == pos) {
            out.push_str(&format!("<{}>", span.label));
            open = Some((&span.label, span.char_end));
        }
        escape_into(&mut out, c);
    }
    if let Some((label, end)) = open {
        if end == len {
            out.push_str(&format!("</{label}>"));
            open = None;
        }
    }
    if open.is_some() || next.peek().is_some() {
        return Err(CodecError::OffsetOutOfRange(format!(
            "document {}: span offsets exceed text length {len}",
            doc.doc_id
        )));
    }
    Ok(out)
}

struct Markup {
    text: String,
    spans: Vec<(usize, usize, TagPath)>,
}

fn parse_entity(name: &str) -> Option<char> {
    match name {
        "amp" => Some('&'),
        "lt" => Some('<'),
        "gt" => Some('>'),
        "quot" => Some('"'),
        "apos" => Some('\''),
        _ => {
            let num = name.strip_prefix('#')?;
            let code = match num.strip_prefix(['x', 'X']) {
                Some(hex) => u32::from_str_radix(hex, 16).ok()?,
                None => num.parse().ok()?,
            };
            char::from_u32(code)
        }
    }
}

fn parse_markup(input: &str) -> Result<Markup, CodecError> {
    let chars: Vec<char> = input.chars().collect();
    let mut text = String::with_capacity(input.len());
    let mut text_len = 0usize;
    let mut spans = Vec::new();
    let mut open: Option<(usize, TagPath, String)> = None;
    let mut i = 0;
    let malformed = |offset, message: &str| CodecError::MalformedMarkup {
        offset,
        message: message.to_string(),
    };

    while i < chars.len() {
        match chars[i] {
            '&' => {
                let end = chars[i..]
                    .iter()
                    .position(|&c| c == ';')
                    .ok_or_else(|| malformed(i, "unterminated entity"))?;
                let name: String = chars[i + 1..i + end].iter().collect();
                let c = parse_entity(&name).ok_or_else(|| malformed(i, &format!("unknown entity &{name};")))?;
                text.push(c);
                text_len += 1;
                i += end + 1;
            }
            '<' => {
                let end = chars[i..]
                    .iter()
                    .position(|&c| c == '>')
                    .ok_or_else(|| malformed(i, "unterminated tag"))?;
                let body: String = chars[i + 1..i + end].iter().collect();
                if let Some(name) = body.strip_prefix('/') {
                    match open.take() {
                        Some((start, label, raw)) if raw == name => {
                            if start == text_len {
                                return Err(malformed(i, "empty element"));
                            }
                            spans.push((start, text_len, label));
                        }
                        Some((_, _, raw)) => {
                            return Err(malformed(i, &format!("</{name}> closes <{raw}>")));
                        }
                        None => return Err(malformed(i, &format!("</{name}> without open element"))),
                    }
                } else {
                    if open.is_some() {
                        return Err(CodecError::NestedSpans { offset: i });
                    }
                    let label = TagPath::parse(&body).map_err(|_| CodecError::UnknownLabel(body.clone()))?;
                    open = Some((text_len, label, body));
                }
                i += end + 1;
            }
            c => {
                text.push(c);
                text_len += 1;
                i += 1;
            }
        }
    }
    if let Some((_, _, raw)) = open {
        return Err(malformed(chars.len(), &format!("<{raw}> is never closed")));
    }
    Ok(Markup { text, spans })
}

/// Parse inline markup, tokenize the recovered text and snap every element
/// outward to the enclosing token boundaries.
pub fn decode_inline_xml(
    input: &str,
    tokenizer: &dyn Tokenizer,
    doc_id: &str,
    lang: &str,
    source: &str,
) -> Result<Decoded<AnnotatedDocument>, CodecError> {
    let markup = parse_markup(input)?;
    let tokens = tokenizer.tokenize(&markup.text);
    let mut doc = AnnotatedDocument::new(doc_id, lang, markup.text, tokens);
    let mut warnings = Vec::new();
    for (n, (start, end, label)) in markup.spans.into_iter().enumerate() {
        let first = doc.tokens.iter().position(|t| t.char_end > start);
        let last = doc.tokens.iter().rposition(|t| t.char_start < end);
        let (first, last) = match (first, last) {
            (Some(f), Some(l)) if f <= l => (f, l),
            _ => {
                return Err(CodecError::MalformedMarkup {
                    offset: start,
                    message: format!("<{label}> covers no token"),
                })
            }
        };
        let span = doc.make_span(format!("s{n}"), first, last + 1, label, source, None);
        if (span.char_start, span.char_end) != (start, end) {
            warnings.push(CodecWarning::SnappedBoundary {
                label: span.label.to_string(),
                from: (start, end),
                to: (span.char_start, span.char_end),
            });
        }
        doc.spans.push(span);
    }
    ensure_flat(&doc)?;
    Ok(Decoded { value: doc, warnings })
}
