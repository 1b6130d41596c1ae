//! Dictionary-based analyser: counts positive and negative lexicon words.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::store::ParsedTweet;
use crate::tokenizer::{default_tokenizer, Token, TokenKind};

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    /// Lowercase term; a trailing `*` makes it a prefix wildcard.
    pub pattern: String,
    pub strength: i8,
}

impl LexiconEntry {
    pub fn new(pattern: &str, strength: i8) -> Result<Self, String> {
        let pattern = pattern.trim().to_lowercase();
        let body = pattern.strip_suffix('*').unwrap_or(&pattern);
        if body.is_empty() {
            return Err("empty pattern".into());
        }
        if body.contains('*') {
            return Err(format!("'*' allowed only at the end of a pattern: {pattern}"));
        }
        if body.chars().any(char::is_whitespace) {
            return Err(format!("pattern contains whitespace: {pattern:?}"));
        }
        if strength == 0 || !(-5..=5).contains(&strength) {
            return Err(format!("strength must be in [-5,-1] or [1,5], got {strength}"));
        }
        Ok(LexiconEntry { pattern, strength })
    }

    pub fn is_wildcard(&self) -> bool {
        self.pattern.ends_with('*')
    }

    pub fn polarity(&self) -> Polarity {
        if self.strength > 0 {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }
}

/// Signed sentiment lexicon. Exact terms beat wildcards; among wildcards the
/// longest prefix wins.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    exact: HashMap<String, i8>,
    // keyed by the prefix without its trailing `*`
    wildcard: HashMap<String, i8>,
    max_prefix_len: usize,
}

impl Lexicon {
    pub fn from_entries<I: IntoIterator<Item = LexiconEntry>>(entries: I) -> Self {
        let mut lex = Lexicon::default();
        for e in entries {
            lex.insert(e);
        }
        lex
    }

    /// Inserts an entry, returning the strength it replaced.
    pub fn insert(&mut self, entry: LexiconEntry) -> Option<i8> {
        match entry.pattern.strip_suffix('*') {
            Some(prefix) => {
                self.max_prefix_len = self.max_prefix_len.max(prefix.len());
                self.wildcard.insert(prefix.to_string(), entry.strength)
            }
            None => self.exact.insert(entry.pattern, entry.strength),
        }
    }

    pub fn parse(content: &str) -> Result<Self, LexiconError> {
        let mut lex = Lexicon::default();
        for (idx, raw) in content.lines().enumerate() {
            let line = idx + 1;
            let text = raw.trim_end_matches('\r');
            if text.trim().is_empty() || text.starts_with('#') {
                continue;
            }
            let (pattern, strength) = text.split_once('\t').ok_or_else(|| LexiconError::Parse {
                line,
                reason: "expected pattern<TAB>strength".into(),
            })?;
            let strength: i8 = strength.trim().parse().map_err(|_| LexiconError::Parse {
                line,
                reason: format!("invalid strength {:?}", strength.trim()),
            })?;
            let entry = LexiconEntry::new(pattern, strength)
                .map_err(|reason| LexiconError::Parse { line, reason })?;
            let pattern = entry.pattern.clone();
            if lex.insert(entry).is_some() {
                warn!("lexicon line {line}: duplicate pattern {pattern:?}, last entry wins");
            }
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Lexicon::parse(&content)
    }

    pub fn len(&self) -> usize {
        self.exact.len() + self.wildcard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Strength of the entry matching an already-lowercased term.
    pub fn lookup(&self, term: &str) -> Option<i8> {
        if let Some(&s) = self.exact.get(term) {
            return Some(s);
        }
        if self.wildcard.is_empty() {
            return None;
        }
        let mut cut = term.len().min(self.max_prefix_len);
        loop {
            if cut == 0 {
                return None;
            }
            if term.is_char_boundary(cut) {
                if let Some(&s) = self.wildcard.get(&term[..cut]) {
                    return Some(s);
                }
            }
            cut -= 1;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WordCounts {
    pub positive: u64,
    pub negative: u64,
    pub matched_tokens: u64,
}

impl std::ops::Add for WordCounts {
    type Output = WordCounts;
    fn add(self, o: WordCounts) -> WordCounts {
        WordCounts {
            positive: self.positive + o.positive,
            negative: self.negative + o.negative,
            matched_tokens: self.matched_tokens + o.matched_tokens,
        }
    }
}

impl std::ops::AddAssign for WordCounts {
    fn add_assign(&mut self, o: WordCounts) {
        *self = *self + o;
    }
}

/// Lexicon plus the hashtag-matching switch.
#[derive(Debug, Clone)]
pub struct DictionaryAnalyser {
    pub lexicon: Lexicon,
    pub match_hashtags: bool,
}

impl DictionaryAnalyser {
    pub fn new(lexicon: Lexicon) -> Self {
        DictionaryAnalyser {
            lexicon,
            match_hashtags: true,
        }
    }

    pub fn match_token(&self, token: &Token) -> Polarity {
        let term = match token.kind {
            TokenKind::Word => token.text.as_str(),
            TokenKind::Hashtag if self.match_hashtags => &token.text[1..],
            _ => return Polarity::None,
        };
        match self.lexicon.lookup(&term.to_lowercase()) {
            Some(s) if s > 0 => Polarity::Positive,
            Some(_) => Polarity::Negative,
            None => Polarity::None,
        }
    }

    pub fn count_text(&self, text: &str) -> WordCounts {
        let mut counts = WordCounts::default();
        for token in default_tokenizer().tokenize(text) {
            match self.match_token(&token) {
                Polarity::Positive => counts.positive += 1,
                Polarity::Negative => counts.negative += 1,
                Polarity::None => continue,
            }
            counts.matched_tokens += 1;
        }
        counts
    }

    pub fn count_words<'a, I>(&self, tweets: I) -> WordCounts
    where
        I: IntoIterator<Item = &'a ParsedTweet>,
    {
        tweets
            .into_iter()
            .fold(WordCounts::default(), |acc, t| acc + self.count_text(&t.text))
    }

    pub fn count_words_par(&self, tweets: &[ParsedTweet]) -> WordCounts {
        tweets
            .par_iter()
            .map(|t| self.count_text(&t.text))
            .reduce(WordCounts::default, |a, b| a + b)
    }
}
