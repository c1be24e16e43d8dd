use super::Token;

/// Produces code-point token offsets for raw text.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token>;
}

/// Maximal runs of non-whitespace.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        split_tokens(text, |_| false)
    }
}

/// Whitespace split, with every punctuation or symbol character as its own
/// token.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimpleTokenizer;

impl Tokenizer for SimpleTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        split_tokens(text, |c| !c.is_alphanumeric())
    }
}

/// Tokens supplied by an upstream producer, returned as-is.
#[derive(Debug, Clone, Default)]
pub struct PretokenizedText(pub Vec<Token>);

impl Tokenizer for PretokenizedText {
    fn tokenize(&self, _text: &str) -> Vec<Token> {
        self.0.clone()
    }
}

fn split_tokens(text: &str, standalone: impl Fn(char) -> bool) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    let push = |tokens: &mut Vec<Token>, s: usize, e: usize| {
        let index = tokens.len();
        tokens.push(Token::new(index, s, e));
    };
    for (pos, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                push(&mut tokens, s, pos);
            }
        } else if standalone(c) {
            if let Some(s) = start.take() {
                push(&mut tokens, s, pos);
            }
            push(&mut tokens, pos, pos + 1);
        } else if start.is_none() {
            start = Some(pos);
        }
    }
    if let Some(s) = start {
        push(&mut tokens, s, text.chars().count());
    }
    tokens
}
