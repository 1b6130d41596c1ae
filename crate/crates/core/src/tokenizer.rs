//! PTB-style lexical analyser for tweet text.
//!
//! Rules, in order of precedence:
//!
//! * whitespace runs separate chunks and never appear in a token;
//! * protected entities are recognised first and kept whole: URLs
//!   (`http://`, `https://`, `www.` up to the next whitespace), `@mentions`,
//!   `#hashtags` and the emoticons of the distant-supervision tables;
//! * PTB contractions (`n't`, `'s`, `'re`, `'ve`, `'ll`, `'d`, `'m`) are split
//!   off the end of a word;
//! * remaining leading and trailing ASCII punctuation is split into
//!   one-character `Punct` tokens, while apostrophes and hyphens between word
//!   characters stay inside the word.
//!
//! Case is preserved. Consumers lowercase when matching.

use std::fmt;

use crate::classifier::{DEFAULT_NEGATIVE_EMOTICONS, DEFAULT_POSITIVE_EMOTICONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Word,
    Punct,
    Mention,
    Hashtag,
    Url,
    Emoticon,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
}

impl Token {
    pub fn new(text: impl Into<String>, kind: TokenKind) -> Self {
        Token {
            text: text.into(),
            kind,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{:?}", self.text, self.kind)
    }
}

const URL_PREFIXES: [&str; 3] = ["http://", "https://", "www."];

/// Suffixes split from the end of a word, `n't` first so that `can't` does not
/// lose only its `'t`.
const CONTRACTIONS: [&str; 7] = ["n't", "'s", "'re", "'ve", "'ll", "'d", "'m"];

/// Tokenizer holding the emoticon table used for protected-entity detection.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    // Longest first, so `:-)` wins over any shorter entry sharing its prefix.
    emoticons: Vec<String>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer::with_emoticons(
            DEFAULT_POSITIVE_EMOTICONS
                .iter()
                .chain(DEFAULT_NEGATIVE_EMOTICONS.iter())
                .copied(),
        )
    }
}

impl Tokenizer {
    pub fn with_emoticons<I, S>(emoticons: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut emoticons: Vec<String> = emoticons
            .into_iter()
            .map(Into::into)
            .filter(|e| !e.is_empty() && !e.chars().any(char::is_whitespace))
            .collect();
        emoticons.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        emoticons.dedup();
        Tokenizer { emoticons }
    }

    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        self.tokenize_with_offsets(text)
            .into_iter()
            .map(|(_, token)| token)
            .collect()
    }

    /// Tokens paired with the byte offset of their first character in `text`.
    pub fn tokenize_with_offsets(&self, text: &str) -> Vec<(usize, Token)> {
        let mut out = Vec::new();
        let mut chunk_start = None;
        for (i, c) in text.char_indices() {
            if c.is_whitespace() {
                if let Some(start) = chunk_start.take() {
                    self.tokenize_chunk(&text[start..i], start, &mut out);
                }
            } else if chunk_start.is_none() {
                chunk_start = Some(i);
            }
        }
        if let Some(start) = chunk_start {
            self.tokenize_chunk(&text[start..], start, &mut out);
        }
        out
    }

    fn tokenize_chunk(&self, chunk: &str, base: usize, out: &mut Vec<(usize, Token)>) {
        let mut pos = 0;
        while pos < chunk.len() {
            let rest = &chunk[pos..];
            let (len, kind) = self.next_token(rest);
            debug_assert!(len > 0);
            let text = &rest[..len];
            if kind == TokenKind::Word {
                let (stem, suffix) = split_contraction(text);
                if !stem.is_empty() {
                    out.push((base + pos, Token::new(stem, TokenKind::Word)));
                }
                if let Some(suffix) = suffix {
                    out.push((base + pos + stem.len(), Token::new(suffix, TokenKind::Word)));
                }
            } else {
                out.push((base + pos, Token::new(text, kind)));
            }
            pos += len;
        }
    }

    /// Length in bytes and kind of the token starting at the head of `rest`.
    fn next_token(&self, rest: &str) -> (usize, TokenKind) {
        if URL_PREFIXES.iter().any(|p| starts_with_ignore_ascii_case(rest, p)) {
            return (rest.len(), TokenKind::Url);
        }
        if let Some(e) = self.emoticons.iter().find(|e| rest.starts_with(e.as_str())) {
            return (e.len(), TokenKind::Emoticon);
        }
        let first = rest.chars().next().expect("non-empty rest");
        if first == '@' || first == '#' {
            let body = word_char_prefix_len(&rest[1..]);
            if body > 0 {
                let kind = if first == '@' {
                    TokenKind::Mention
                } else {
                    TokenKind::Hashtag
                };
                return (1 + body, kind);
            }
        }
        if first == '\'' {
            // A bare contraction suffix such as `'s` is a word of its own.
            for suffix in &CONTRACTIONS[1..] {
                if starts_with_ignore_ascii_case(rest, suffix) {
                    let after = &rest[suffix.len()..];
                    if after.chars().next().is_none_or(|c| !is_word_char(c)) {
                        return (suffix.len(), TokenKind::Word);
                    }
                }
            }
        }
        if first.is_ascii_punctuation() {
            return (first.len_utf8(), TokenKind::Punct);
        }
        (word_len(rest), TokenKind::Word)
    }
}

/// Tokenize with the default emoticon table.
pub fn tokenize(text: &str) -> Vec<Token> {
    default_tokenizer().tokenize(text)
}

pub(crate) fn default_tokenizer() -> &'static Tokenizer {
    use std::sync::OnceLock;
    static DEFAULT: OnceLock<Tokenizer> = OnceLock::new();
    DEFAULT.get_or_init(Tokenizer::default)
}

fn is_word_char(c: char) -> bool {
    !c.is_whitespace() && !c.is_ascii_punctuation()
}

fn word_char_prefix_len(s: &str) -> usize {
    s.char_indices()
        .find(|&(_, c)| !(c.is_alphanumeric() || c == '_'))
        .map_or(s.len(), |(i, _)| i)
}

/// Word run: word characters, plus `'` or `-` when followed by a word character.
fn word_len(s: &str) -> usize {
    let mut chars = s.char_indices().peekable();
    let mut end = 0;
    while let Some((i, c)) = chars.next() {
        if is_word_char(c) {
            end = i + c.len_utf8();
        } else if (c == '\'' || c == '-') && end == i && end > 0 {
            match chars.peek() {
                Some(&(_, next)) if is_word_char(next) => end = i + c.len_utf8(),
                _ => break,
            }
        } else {
            break;
        }
    }
    end
}

fn split_contraction(word: &str) -> (&str, Option<&str>) {
    for suffix in CONTRACTIONS {
        if word.len() > suffix.len() {
            let cut = word.len() - suffix.len();
            if word.is_char_boundary(cut)
                && word[cut..].eq_ignore_ascii_case(suffix)
                && word[..cut].chars().next_back().is_some_and(is_word_char)
            {
                return (&word[..cut], Some(&word[cut..]));
            }
        }
    }
    (word, None)
}

fn starts_with_ignore_ascii_case(s: &str, prefix: &str) -> bool {
    s.len() >= prefix.len()
        && s.is_char_boundary(prefix.len())
        && s[..prefix.len()].eq_ignore_ascii_case(prefix)
}
