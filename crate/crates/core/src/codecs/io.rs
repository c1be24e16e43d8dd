//! Corpus files in the three formats, read and written one document at a time.
//!
//! * spans: one JSON record per line.
//! * IOB2: `surface<TAB>tag` per token, blank line between documents, with
//!   optional `# doc_id = …` / `# lang = …` header lines.
//! * inline XML: one document per line; newlines inside the text are written
//!   as `&#10;`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{
    decode_inline_xml, decode_iob2, decode_spans, encode_inline_xml, encode_iob2, encode_spans, AnnotatedDocument,
    CodecError, CodecWarning, Decoded, Format, Tokenizer,
};

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CodecError {
    let context = context.into();
    move |source| CodecError::Io { context, source }
}

/// Line-delimited interchange records from any reader.
pub struct SpanRecords<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> SpanRecords<R> {
    pub fn new(reader: R) -> Self {
        SpanRecords {
            lines: reader.lines(),
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for SpanRecords<R> {
    type Item = Result<AnnotatedDocument, CodecError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line_no = self.line_no;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(io_err("reading corpus")(e).at_line(line_no))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(decode_spans(&line).map_err(|e| e.at_line(line_no)));
        }
    }
}

/// Read a whole interchange corpus, rejecting repeated doc ids.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<AnnotatedDocument>, CodecError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
    read_corpus_from(BufReader::new(file))
}

pub fn read_corpus_from(reader: impl BufRead) -> Result<Vec<AnnotatedDocument>, CodecError> {
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for doc in SpanRecords::new(reader) {
        let doc = doc?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(CodecError::DuplicateDocId(doc.doc_id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus_to<'a>(
    mut writer: impl Write,
    docs: impl IntoIterator<Item = &'a AnnotatedDocument>,
) -> std::io::Result<()> {
    for doc in docs {
        writer.write_all(encode_spans(doc).as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

/// Write a corpus through a temporary file and rename it into place, so a
/// failed write never leaves a truncated corpus behind.
pub fn write_corpus<'a>(
    path: impl AsRef<Path>,
    docs: impl IntoIterator<Item = &'a AnnotatedDocument>,
) -> Result<(), CodecError> {
    let path = path.as_ref();
    write_atomic(path, |w| write_corpus_to(w, docs))
}

pub(crate) fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CodecError> {
    let tmp = path.with_extension("partial");
    let context = format!("writing {}", path.display());
    let file = File::create(&tmp).map_err(io_err(context.clone()))?;
    let mut writer = BufWriter::new(file);
    body(&mut writer).map_err(io_err(context.clone()))?;
    writer.flush().map_err(io_err(context.clone()))?;
    drop(writer);
    std::fs::rename(&tmp, path).map_err(io_err(context))
}

/// Documents from an IOB2 column file.
pub struct Iob2Blocks<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    block: usize,
    default_lang: String,
    source: String,
}

impl<R: BufRead> Iob2Blocks<R> {
    pub fn new(reader: R, default_lang: &str, source: &str) -> Self {
        Iob2Blocks {
            lines: reader.lines(),
            line_no: 0,
            block: 0,
            default_lang: default_lang.to_string(),
            source: source.to_string(),
        }
    }
}

impl<R: BufRead> Iterator for Iob2Blocks<R> {
    type Item = Result<Decoded<AnnotatedDocument>, CodecError>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut doc_id = None;
        let mut lang = None;
        let mut words: Vec<String> = Vec::new();
        let mut tags: Vec<String> = Vec::new();
        let mut started = false;
        let mut first_line = 0;
        loop {
            let line = match self.lines.next() {
                Some(Ok(l)) => l,
                Some(Err(e)) => return Some(Err(io_err("reading IOB2")(e).at_line(self.line_no + 1))),
                None => break,
            };
            self.line_no += 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                if started {
                    break;
                }
                continue;
            }
            if !started {
                started = true;
                first_line = self.line_no;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((key, value)) = comment.split_once('=') {
                    match key.trim() {
                        "doc_id" => doc_id = Some(value.trim().to_string()),
                        "lang" => lang = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
                continue;
            }
            let Some((surface, tag)) = line.split_once('\t') else {
                return Some(Err(
                    CodecError::SchemaViolation("expected surface<TAB>tag".to_string()).at_line(self.line_no)
                ));
            };
            words.push(surface.to_string());
            tags.push(tag.to_string());
        }
        if !started {
            return None;
        }
        self.block += 1;
        let doc = AnnotatedDocument::from_words(
            doc_id.unwrap_or_else(|| format!("doc{}", self.block)),
            lang.unwrap_or_else(|| self.default_lang.clone()),
            &words,
        );
        Some(decode_iob2(&tags, &doc, &self.source).map_err(|e| e.at_line(first_line)))
    }
}

pub fn write_iob2_document(mut writer: impl Write, doc: &AnnotatedDocument) -> Result<(), CodecError> {
    let tags = encode_iob2(doc)?;
    let mut block = format!("# doc_id = {}\n# lang = {}\n", doc.doc_id, doc.lang);
    for (i, tag) in tags.iter().enumerate() {
        let surface = doc.token_surface(i);
        if surface.contains(['\t', '\n', '\r']) {
            return Err(CodecError::SchemaViolation(format!(
                "token {i} of {} contains a tab or newline",
                doc.doc_id
            )));
        }
        block.push_str(surface);
        block.push('\t');
        block.push_str(tag);
        block.push('\n');
    }
    block.push('\n');
    writer.write_all(block.as_bytes()).map_err(io_err("writing IOB2"))
}

pub fn encode_xml_line(doc: &AnnotatedDocument) -> Result<String, CodecError> {
    Ok(encode_inline_xml(doc)?.replace('\n', "&#10;").replace('\r', "&#13;"))
}

/// Options for reading formats that do not carry full document metadata.
pub struct ReadOptions<'a> {
    pub lang: &'a str,
    pub source: &'a str,
    pub tokenizer: &'a dyn Tokenizer,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ConvertSummary {
    pub documents: usize,
    pub spans: usize,
    pub warnings: Vec<(usize, CodecWarning)>,
}

/// Stream documents from `input` in format `from` to `output` in format `to`.
pub fn convert(
    input: impl BufRead,
    mut output: impl Write,
    from: Format,
    to: Format,
    options: &ReadOptions<'_>,
) -> Result<ConvertSummary, CodecError> {
    let mut summary = ConvertSummary::default();
    let mut emit = |doc: AnnotatedDocument, warnings: Vec<CodecWarning>, summary: &mut ConvertSummary| {
        summary.documents += 1;
        summary.spans += doc.spans.len();
        summary
            .warnings
            .extend(warnings.into_iter().map(|w| (summary.documents, w)));
        match to {
            Format::Spans => writeln!(output, "{}", encode_spans(&doc)).map_err(io_err("writing output")),
            Format::Iob2 => write_iob2_document(&mut output, &doc),
            Format::Xml => {
                let line = encode_xml_line(&doc)?;
                writeln!(output, "{line}").map_err(io_err("writing output"))
            }
        }
    };
    match from {
        Format::Spans => {
            for doc in SpanRecords::new(input) {
                emit(doc?, Vec::new(), &mut summary)?;
            }
        }
        Format::Iob2 => {
            for decoded in Iob2Blocks::new(input, options.lang, options.source) {
                let decoded = decoded?;
                emit(decoded.value, decoded.warnings, &mut summary)?;
            }
        }
        Format::Xml => {
            for (n, line) in input.lines().enumerate() {
                let line = line.map_err(io_err("reading input"))?;
                if line.trim().is_empty() {
                    continue;
                }
                let doc_id = format!("doc{}", n + 1);
                let decoded = decode_inline_xml(&line, options.tokenizer, &doc_id, options.lang, options.source)
                    .map_err(|e| e.at_line(n + 1))?;
                emit(decoded.value, decoded.warnings, &mut summary)?;
            }
        }
    }
    output.flush().map_err(io_err("writing output"))?;
    Ok(summary)
}
