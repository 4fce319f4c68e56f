//! Whitespace and punctuation tokenization, terminator-based sentence
//! splitting and span-preserving detokenization.
//!
//! All spans are byte offsets into the original text. A chunk between
//! whitespace runs is split into leading punctuation characters, one core
//! token running from the first to the last alphanumeric character, and
//! trailing punctuation characters. Each punctuation character is its own
//! token, so `"Hello!!"` becomes `[Hello][!][!]`.

use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TextError {
    #[error("token count mismatch: original has {expected} tokens, got {found}")]
    LengthMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub normalized: String,
    pub span: Range<usize>,
    pub is_word: bool,
}

impl Token {
    fn new(text: &str, span: Range<usize>) -> Self {
        let surface = text[span.clone()].to_string();
        let normalized = surface.to_lowercase();
        let is_word = surface.chars().any(char::is_alphanumeric);
        Token {
            surface,
            normalized,
            span,
            is_word,
        }
    }

    /// Copy of this token carrying a different surface form but the same span.
    pub fn with_surface(&self, surface: &str) -> Token {
        Token {
            surface: surface.to_string(),
            normalized: surface.to_lowercase(),
            span: self.span.clone(),
            is_word: surface.chars().any(char::is_alphanumeric),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub span: Range<usize>,
}

impl Sentence {
    pub fn word_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_word)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub raw: String,
    pub sentences: Vec<Sentence>,
}

/// Tokenize `text`. Token spans cover every non-whitespace character exactly once.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut chunk_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(start) = chunk_start.take() {
                split_chunk(text, start..i, &mut tokens);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    if let Some(start) = chunk_start {
        split_chunk(text, start..text.len(), &mut tokens);
    }
    tokens
}

fn split_chunk(text: &str, chunk: Range<usize>, out: &mut Vec<Token>) {
    let slice = &text[chunk.clone()];
    let first_alnum = slice.char_indices().find(|(_, c)| c.is_alphanumeric());
    let last_alnum = slice.char_indices().rev().find(|(_, c)| c.is_alphanumeric());
    let (core_start, core_end) = match (first_alnum, last_alnum) {
        (Some((s, _)), Some((e, c))) => (chunk.start + s, chunk.start + e + c.len_utf8()),
        _ => {
            // pure punctuation chunk
            for (i, c) in slice.char_indices() {
                let start = chunk.start + i;
                out.push(Token::new(text, start..start + c.len_utf8()));
            }
            return;
        }
    };
    for (i, c) in text[chunk.start..core_start].char_indices() {
        let start = chunk.start + i;
        out.push(Token::new(text, start..start + c.len_utf8()));
    }
    out.push(Token::new(text, core_start..core_end));
    for (i, c) in text[core_end..chunk.end].char_indices() {
        let start = core_end + i;
        out.push(Token::new(text, start..start + c.len_utf8()));
    }
}

fn is_terminator(token: &Token) -> bool {
    matches!(token.surface.as_str(), "." | "!" | "?")
}

/// Split `text` into sentences after `.`, `!` or `?` when the terminator is
/// followed by whitespace or the end of the text. Abbreviations are not
/// special-cased, so `"Dr. Smith"` splits after `Dr.`.
pub fn split_sentences(text: &str) -> Document {
    let tokens = tokenize(text);
    let mut sentences = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    for token in tokens {
        let ends = is_terminator(&token) && text[token.span.end..].chars().next().is_none_or(char::is_whitespace);
        current.push(token);
        if ends {
            sentences.push(close_sentence(std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        sentences.push(close_sentence(current));
    }
    if sentences.is_empty() && !text.is_empty() {
        // whitespace-only input still yields one (empty) sentence
        sentences.push(Sentence {
            tokens: Vec::new(),
            span: 0..0,
        });
    }
    Document {
        raw: text.to_string(),
        sentences,
    }
}

fn close_sentence(tokens: Vec<Token>) -> Sentence {
    let span = tokens[0].span.start..tokens[tokens.len() - 1].span.end;
    Sentence { tokens, span }
}

impl Document {
    pub fn tokens(&self) -> impl Iterator<Item = &Token> + '_ {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }

    /// Global index of the first token of sentence `sentence`.
    pub fn sentence_offset(&self, sentence: usize) -> usize {
        self.sentences[..sentence].iter().map(|s| s.tokens.len()).sum()
    }

    pub fn sentence_text(&self, sentence: usize) -> &str {
        &self.raw[self.sentences[sentence].span.clone()]
    }

    /// Text of sentence `sentence` with its token `local` removed together
    /// with one adjacent whitespace run. Returns an empty string when the
    /// removed token was the only one.
    pub fn sentence_without(&self, sentence: usize, local: usize) -> String {
        let s = &self.sentences[sentence];
        let removed = &s.tokens[local].span;
        let before = &self.raw[s.span.start..removed.start];
        let after = &self.raw[removed.end..s.span.end];
        let trimmed_before = before.trim_end_matches(char::is_whitespace);
        if trimmed_before.len() < before.len() {
            format!("{trimmed_before}{after}")
        } else {
            format!("{before}{}", after.trim_start_matches(char::is_whitespace))
        }
    }

    fn sentence_initial_words(&self) -> Vec<bool> {
        let mut flags = Vec::with_capacity(self.token_count());
        for s in &self.sentences {
            let first_word = s.tokens.iter().position(|t| t.is_word);
            flags.extend((0..s.tokens.len()).map(|i| Some(i) == first_word));
        }
        flags
    }

    /// Replace the surfaces of the tokens at the given global indices and
    /// render the result with the original spacing.
    pub fn substitute(&self, replacements: &[(usize, String)]) -> Result<String, TextError> {
        let mut tokens: Vec<Token> = self.tokens().cloned().collect();
        for (idx, surface) in replacements {
            if *idx >= tokens.len() {
                return Err(TextError::LengthMismatch {
                    expected: tokens.len(),
                    found: idx + 1,
                });
            }
            tokens[*idx] = tokens[*idx].with_surface(surface);
        }
        detokenize(&tokens, self)
    }
}

/// Render `tokens` (one per token of `original`, in order) back into text.
///
/// Unchanged tokens keep their surface; changed tokens take the place of the
/// original token between the same whitespace. A changed sentence-initial
/// word whose original started with an uppercase letter is capitalized.
pub fn detokenize(tokens: &[Token], original: &Document) -> Result<String, TextError> {
    let expected = original.token_count();
    if tokens.len() != expected {
        return Err(TextError::LengthMismatch {
            expected,
            found: tokens.len(),
        });
    }
    let initial = original.sentence_initial_words();
    let raw = original.raw.as_str();
    let mut out = String::with_capacity(raw.len());
    let mut cursor = 0;
    for ((orig, new), is_initial) in original.tokens().zip(tokens).zip(initial) {
        out.push_str(&raw[cursor..orig.span.start]);
        if new.surface == orig.surface {
            out.push_str(&orig.surface);
        } else if is_initial && orig.surface.chars().next().is_some_and(char::is_uppercase) {
            out.push_str(&capitalize(&new.surface));
        } else {
            out.push_str(&new.surface);
        }
        cursor = orig.span.end;
    }
    out.push_str(&raw[cursor..]);
    Ok(out)
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Word tokens of `text` in order, lowercased.
pub fn words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.is_word)
        .map(|t| t.normalized)
        .collect()
}
