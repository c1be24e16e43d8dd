use crate::taxonomy::TagPath;

/// A token as a code-point range into the document text, end-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Token {
    pub index: usize,
    pub char_start: usize,
    pub char_end: usize,
}

impl Token {
    pub fn new(index: usize, char_start: usize, char_end: usize) -> Self {
        Token {
            index,
            char_start,
            char_end,
        }
    }
}

/// A labelled, contiguous run of tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct EntitySpan {
    pub id: String,
    /// Inclusive.
    pub token_start: usize,
    /// Exclusive.
    pub token_end: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub label: TagPath,
    /// Provenance, e.g. a model id, `kb:wikidata` or `human`.
    pub source: String,
    pub confidence: Option<f64>,
}

impl EntitySpan {
    pub fn token_range(&self) -> std::ops::Range<usize> {
        self.token_start..self.token_end
    }

    pub fn len(&self) -> usize {
        self.token_end - self.token_start
    }

    pub fn is_empty(&self) -> bool {
        self.token_end <= self.token_start
    }

    pub fn shares_token_with(&self, other: &EntitySpan) -> bool {
        self.token_start < other.token_end && other.token_start < self.token_end
    }

    /// Boundary-and-label identity, ignoring id, provenance and confidence.
    pub fn key(&self) -> (usize, usize, &TagPath) {
        (self.token_start, self.token_end, &self.label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub lang: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub spans: Vec<EntitySpan>,
}

impl AnnotatedDocument {
    pub fn new(
        doc_id: impl Into<String>,
        lang: impl Into<String>,
        text: impl Into<String>,
        tokens: Vec<Token>,
    ) -> Self {
        AnnotatedDocument {
            doc_id: doc_id.into(),
            lang: lang.into(),
            text: text.into(),
            tokens,
            spans: Vec::new(),
        }
    }

    /// Build a document from token surfaces joined by single spaces.
    pub fn from_words<S: AsRef<str>>(doc_id: impl Into<String>, lang: impl Into<String>, words: &[S]) -> Self {
        let mut text = String::new();
        let mut tokens = Vec::with_capacity(words.len());
        let mut pos = 0;
        for (i, w) in words.iter().enumerate() {
            if i > 0 {
                text.push(' ');
                pos += 1;
            }
            let w = w.as_ref();
            let len = w.chars().count();
            text.push_str(w);
            tokens.push(Token::new(i, pos, pos + len));
            pos += len;
        }
        AnnotatedDocument::new(doc_id, lang, text, tokens)
    }

    /// Text length in code points.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Substring by code-point range. Out-of-range ends are clamped.
    pub fn slice_chars(&self, char_start: usize, char_end: usize) -> &str {
        let mut start_byte = self.text.len();
        let mut end_byte = self.text.len();
        for (n, (byte, _)) in self.text.char_indices().enumerate() {
            if n == char_start {
                start_byte = byte;
            }
            if n == char_end {
                end_byte = byte;
                break;
            }
        }
        if start_byte > end_byte {
            return "";
        }
        &self.text[start_byte..end_byte]
    }

    pub fn token_surface(&self, index: usize) -> &str {
        let t = &self.tokens[index];
        self.slice_chars(t.char_start, t.char_end)
    }

    pub fn span_surface(&self, span: &EntitySpan) -> &str {
        self.slice_chars(span.char_start, span.char_end)
    }

    /// Create a span over `[token_start, token_end)` with character offsets
    /// taken from the covered tokens. Panics if the token range is invalid.
    pub fn make_span(
        &self,
        id: impl Into<String>,
        token_start: usize,
        token_end: usize,
        label: TagPath,
        source: impl Into<String>,
        confidence: Option<f64>,
    ) -> EntitySpan {
        assert!(
            token_start < token_end && token_end <= self.tokens.len(),
            "bad token range"
        );
        EntitySpan {
            id: id.into(),
            token_start,
            token_end,
            char_start: self.tokens[token_start].char_start,
            char_end: self.tokens[token_end - 1].char_end,
            label,
            source: source.into(),
            confidence,
        }
    }

    pub fn sort_spans(&mut self) {
        self.spans.sort_by_key(|s| (s.token_start, s.token_end));
    }

    /// Same token count and offsets.
    pub fn same_tokenization(&self, other: &AnnotatedDocument) -> bool {
        self.tokens.len() == other.tokens.len()
            && self
                .tokens
                .iter()
                .zip(&other.tokens)
                .all(|(a, b)| a.char_start == b.char_start && a.char_end == b.char_end)
    }

    /// Index of the first pair of spans sharing a token, if any.
    pub fn first_overlap(&self) -> Option<(usize, usize)> {
        let mut owner: Vec<Option<usize>> = vec![None; self.tokens.len()];
        for (s, span) in self.spans.iter().enumerate() {
            for t in span.token_range() {
                if let Some(slot) = owner.get_mut(t) {
                    if let Some(prev) = *slot {
                        return Some((prev, s));
                    }
                    *slot = Some(s);
                }
            }
        }
        None
    }

    /// A copy with the same text and tokens but no spans.
    pub fn unannotated(&self) -> AnnotatedDocument {
        AnnotatedDocument {
            doc_id: self.doc_id.clone(),
            lang: self.lang.clone(),
            text: self.text.clone(),
            tokens: self.tokens.clone(),
            spans: Vec::new(),
        }
    }
}
