//! Machine-learning analyser: emoticon-based distant labelling, a multinomial
//! Naive Bayes unigram model with add-one smoothing, evaluation, persistence
//! and per-tweet classification.
//!
//! Model file layout (line-oriented text):
//!
//! ```text
//! geosent-nb v1
//! prior positive <doc_count>
//! prior negative <doc_count>
//! tok <class> <token> <count>
//! ...
//! end <number of tok lines>
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::debug;
use rayon::prelude::*;
use thiserror::Error;

use crate::store::ParsedTweet;
use crate::tokenizer::{default_tokenizer, Token, TokenKind, Tokenizer};

pub const DEFAULT_POSITIVE_EMOTICONS: [&str; 5] = [":)", ":-)", ":D", "=)", ";)"];
pub const DEFAULT_NEGATIVE_EMOTICONS: [&str; 4] = [":(", ":-(", ":'(", "=("];

const MODEL_HEADER: &str = "geosent-nb v1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training corpus has no {0} documents")]
    MissingClass(Label),
    #[error("evaluation set is empty")]
    EmptyTestSet,
    #[error("model file not found: {0}")]
    NotFound(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported model version: {0:?}")]
    Version(String),
    #[error("corrupt model file at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("corpus line {line}: {reason}")]
    Corpus { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Positive, Label::Negative];

    fn index(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" | "+" => Ok(Label::Positive),
            "negative" | "neg" | "-" => Ok(Label::Negative),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTweet {
    pub text: String,
    pub label: Label,
}

impl LabeledTweet {
    pub fn new(text: impl Into<String>, label: Label) -> Self {
        LabeledTweet {
            text: text.into(),
            label,
        }
    }
}

/// Emoticons marking each polarity for distant supervision.
#[derive(Debug, Clone)]
pub struct EmoticonTable {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    tokenizer: Tokenizer,
}

impl Default for EmoticonTable {
    fn default() -> Self {
        EmoticonTable::new(DEFAULT_POSITIVE_EMOTICONS, DEFAULT_NEGATIVE_EMOTICONS)
    }
}

impl EmoticonTable {
    pub fn new<P, N>(positive: P, negative: N) -> Self
    where
        P: IntoIterator,
        P::Item: Into<String>,
        N: IntoIterator,
        N::Item: Into<String>,
    {
        let positive: Vec<String> = positive.into_iter().map(Into::into).collect();
        let negative: Vec<String> = negative.into_iter().map(Into::into).collect();
        let tokenizer = Tokenizer::with_emoticons(positive.iter().chain(&negative).cloned());
        EmoticonTable {
            positive,
            negative,
            tokenizer,
        }
    }

    /// Labels a tweet by its emoticons and strips them from the text.
    /// Tweets with both polarities, neither, or nothing left are discarded.
    pub fn label(&self, text: &str) -> Option<LabeledTweet> {
        let (mut pos, mut neg) = (false, false);
        let mut kept = String::with_capacity(text.len());
        let mut cursor = 0;
        for (offset, token) in self.tokenizer.tokenize_with_offsets(text) {
            if token.kind != TokenKind::Emoticon {
                continue;
            }
            if self.positive.contains(&token.text) {
                pos = true;
            } else if self.negative.contains(&token.text) {
                neg = true;
            }
            kept.push_str(&text[cursor..offset]);
            kept.push(' ');
            cursor = offset + token.text.len();
        }
        kept.push_str(&text[cursor..]);
        let label = match (pos, neg) {
            (true, false) => Label::Positive,
            (false, true) => Label::Negative,
            _ => return None,
        };
        let text = kept.split_whitespace().collect::<Vec<_>>().join(" ");
        (!text.is_empty()).then_some(LabeledTweet { text, label })
    }
}

pub fn distant_label<'a, I>(table: &'a EmoticonTable, texts: I) -> impl Iterator<Item = LabeledTweet> + 'a
where
    I: IntoIterator + 'a,
    I::Item: AsRef<str>,
{
    texts.into_iter().filter_map(move |t| table.label(t.as_ref()))
}

/// Lowercased Word tokens and hashtag bodies; everything else is dropped.
pub fn features(text: &str) -> Vec<String> {
    default_tokenizer()
        .tokenize(text)
        .into_iter()
        .filter_map(feature_of)
        .collect()
}

fn feature_of(token: Token) -> Option<String> {
    match token.kind {
        TokenKind::Word => Some(token.text.to_lowercase()),
        TokenKind::Hashtag => Some(token.text[1..].to_lowercase()),
        _ => None,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnigramModel {
    pub vocabulary: BTreeSet<String>,
    /// Indexed positive, negative.
    pub class_token_counts: [BTreeMap<String, u64>; 2],
    pub class_totals: [u64; 2],
    pub doc_counts: [u64; 2],
}

impl UnigramModel {
    pub fn token_count(&self, label: Label, token: &str) -> u64 {
        self.class_token_counts[label.index()].get(token).copied().unwrap_or(0)
    }

    pub fn class_total(&self, label: Label) -> u64 {
        self.class_totals[label.index()]
    }

    pub fn doc_count(&self, label: Label) -> u64 {
        self.doc_counts[label.index()]
    }

    /// Accumulates one labelled document's counts.
    pub fn observe(&mut self, doc: &LabeledTweet) {
        let c = doc.label.index();
        self.doc_counts[c] += 1;
        for f in features(&doc.text) {
            self.class_totals[c] += 1;
            *self.class_token_counts[c].entry(f.clone()).or_insert(0) += 1;
            self.vocabulary.insert(f);
        }
    }

    /// Adds another model's counts into this one.
    pub fn merge(&mut self, other: &UnigramModel) {
        for c in 0..2 {
            self.doc_counts[c] += other.doc_counts[c];
            self.class_totals[c] += other.class_totals[c];
            for (tok, n) in &other.class_token_counts[c] {
                *self.class_token_counts[c].entry(tok.clone()).or_insert(0) += n;
            }
        }
        self.vocabulary.extend(other.vocabulary.iter().cloned());
    }

    /// Add-one smoothed P(token | class) for an in-vocabulary token.
    pub fn token_probability(&self, label: Label, token: &str) -> Option<f64> {
        self.vocabulary.contains(token).then(|| {
            (self.token_count(label, token) + 1) as f64
                / (self.class_total(label) + self.vocabulary.len() as u64) as f64
        })
    }

    pub fn log_prior(&self, label: Label) -> f64 {
        let total: u64 = self.doc_counts.iter().sum();
        (self.doc_count(label) as f64 / total as f64).ln()
    }

    /// Precomputes log-likelihoods for fast classification.
    pub fn classifier(&self) -> Classifier {
        let v = self.vocabulary.len() as f64;
        let denom = [
            (self.class_totals[0] as f64 + v).ln(),
            (self.class_totals[1] as f64 + v).ln(),
        ];
        let log_likelihood = self
            .vocabulary
            .iter()
            .map(|tok| {
                let ll = [0, 1].map(|c| {
                    let n = self.class_token_counts[c].get(tok).copied().unwrap_or(0);
                    ((n + 1) as f64).ln() - denom[c]
                });
                (tok.clone(), ll)
            })
            .collect();
        Classifier {
            log_prior: [self.log_prior(Label::Positive), self.log_prior(Label::Negative)],
            log_likelihood,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let io_err = |source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = fs::File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "{MODEL_HEADER}")?;
        for label in Label::ALL {
            writeln!(w, "prior {label} {}", self.doc_count(label))?;
        }
        let mut lines = 0;
        for label in Label::ALL {
            for (tok, n) in &self.class_token_counts[label.index()] {
                writeln!(w, "tok {label} {tok} {n}")?;
                lines += 1;
            }
        }
        writeln!(w, "end {lines}")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| match source.kind() {
            io::ErrorKind::NotFound => ModelError::NotFound(path.to_path_buf()),
            _ => ModelError::Io {
                path: path.to_path_buf(),
                source,
            },
        })?;
        UnigramModel::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let corrupt = |line: usize, reason: &str| ModelError::Corrupt {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, MODEL_HEADER)) => {}
            Some((_, h)) if h.starts_with("geosent-nb ") => return Err(ModelError::Version(h.to_string())),
            _ => return Err(corrupt(1, "missing header")),
        }
        let mut model = UnigramModel::default();
        let mut priors = [false; 2];
        let mut tok_lines = 0usize;
        let mut ended = false;
        for (no, line) in lines {
            if ended {
                if line.is_empty() {
                    continue;
                }
                return Err(corrupt(no, "content after end marker"));
            }
            let fields: Vec<&str> = line.split(' ').collect();
            match fields.as_slice() {
                ["prior", class, n] => {
                    let label: Label = class.parse().map_err(|e: String| corrupt(no, &e))?;
                    let n: u64 = n.parse().map_err(|_| corrupt(no, "invalid document count"))?;
                    if std::mem::replace(&mut priors[label.index()], true) {
                        return Err(corrupt(no, "duplicate prior"));
                    }
                    model.doc_counts[label.index()] = n;
                }
                ["tok", class, tok, n] if !tok.is_empty() => {
                    let label: Label = class.parse().map_err(|e: String| corrupt(no, &e))?;
                    let n: u64 = n.parse().map_err(|_| corrupt(no, "invalid token count"))?;
                    if n == 0 {
                        return Err(corrupt(no, "zero token count"));
                    }
                    let c = label.index();
                    if model.class_token_counts[c].insert(tok.to_string(), n).is_some() {
                        return Err(corrupt(no, "duplicate token"));
                    }
                    model.class_totals[c] += n;
                    model.vocabulary.insert(tok.to_string());
                    tok_lines += 1;
                }
                ["end", n] => {
                    if n.parse::<usize>().ok() != Some(tok_lines) {
                        return Err(corrupt(no, "token line count mismatch"));
                    }
                    ended = true;
                }
                _ => return Err(corrupt(no, "unrecognised line")),
            }
        }
        if !ended || !text.ends_with('\n') {
            return Err(corrupt(text.lines().count(), "truncated: missing end marker"));
        }
        if priors != [true, true] {
            return Err(corrupt(1, "missing prior line"));
        }
        Ok(model)
    }
}

pub fn train<I>(corpus: I) -> Result<UnigramModel, ModelError>
where
    I: IntoIterator<Item = LabeledTweet>,
{
    let mut model = UnigramModel::default();
    for doc in corpus {
        model.observe(&doc);
    }
    for label in Label::ALL {
        if model.doc_count(label) == 0 {
            return Err(ModelError::MissingClass(label));
        }
    }
    Ok(model)
}

/// Trained model with log-likelihoods cached per token.
#[derive(Debug, Clone)]
pub struct Classifier {
    log_prior: [f64; 2],
    log_likelihood: HashMap<String, [f64; 2]>,
}

impl Classifier {
    /// Label and margin `score(positive) - score(negative)`. Out-of-vocabulary
    /// tokens are skipped; an exact tie is labelled positive.
    pub fn classify(&self, text: &str) -> (Label, f64) {
        let mut score = self.log_prior;
        for token in default_tokenizer().tokenize(text) {
            let Some(f) = feature_of(token) else { continue };
            if let Some(ll) = self.log_likelihood.get(&f) {
                score[0] += ll[0];
                score[1] += ll[1];
            }
        }
        let margin = score[0] - score[1];
        if margin == 0.0 {
            debug!("classification tie for {text:?}, labelled positive");
        }
        let label = if margin >= 0.0 { Label::Positive } else { Label::Negative };
        (label, margin)
    }

    pub fn count_tweets<'a, I>(&self, tweets: I) -> TweetCounts
    where
        I: IntoIterator<Item = &'a ParsedTweet>,
    {
        tweets.into_iter().fold(TweetCounts::default(), |mut acc, t| {
            acc.add(self.classify(&t.text).0);
            acc
        })
    }

    pub fn count_tweets_par(&self, tweets: &[ParsedTweet]) -> TweetCounts {
        tweets
            .par_iter()
            .map(|t| {
                let mut c = TweetCounts::default();
                c.add(self.classify(&t.text).0);
                c
            })
            .reduce(TweetCounts::default, |a, b| TweetCounts {
                positive: a.positive + b.positive,
                negative: a.negative + b.negative,
            })
    }
}

pub fn classify(model: &UnigramModel, text: &str) -> (Label, f64) {
    model.classifier().classify(text)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TweetCounts {
    pub positive: u64,
    pub negative: u64,
}

impl TweetCounts {
    pub fn add(&mut self, label: Label) {
        match label {
            Label::Positive => self.positive += 1,
            Label::Negative => self.negative += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.positive + self.negative
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub total: u64,
    pub correct: u64,
    pub accuracy: f64,
    /// `confusion[actual][predicted]`, positive first.
    pub confusion: [[u64; 2]; 2],
}

pub fn evaluate<I>(model: &UnigramModel, test: I) -> Result<EvalReport, ModelError>
where
    I: IntoIterator<Item = LabeledTweet>,
{
    let classifier = model.classifier();
    let mut confusion = [[0u64; 2]; 2];
    for doc in test {
        let (predicted, _) = classifier.classify(&doc.text);
        confusion[doc.label.index()][predicted.index()] += 1;
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(ModelError::EmptyTestSet);
    }
    let correct = confusion[0][0] + confusion[1][1];
    Ok(EvalReport {
        total,
        correct,
        accuracy: correct as f64 / total as f64,
        confusion,
    })
}

/// Reads a `label<TAB>text` corpus. Blank lines are ignored.
pub fn parse_labeled_corpus(content: &str) -> Result<Vec<LabeledTweet>, ModelError> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let err = |reason: String| ModelError::Corpus { line: i + 1, reason };
            let (label, text) = line
                .split_once('\t')
                .ok_or_else(|| err("expected label<TAB>text".into()))?;
            Ok(LabeledTweet::new(text.trim_end_matches('\r'), label.parse().map_err(err)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn fixture_model() -> UnigramModel {
        train([
            LabeledTweet::new("happy joy happy", Label::Positive),
            LabeledTweet::new("sad cry", Label::Negative),
        ])
        .unwrap()
    }

    #[test]
    fn distant_labelling() {
        let t = EmoticonTable::default();
        assert_eq!(t.label("so excited :)"), Some(LabeledTweet::new("so excited", Label::Positive)));
        assert_eq!(t.label("bad day :("), Some(LabeledTweet::new("bad day", Label::Negative)));
        assert_eq!(t.label("meh :) :("), None);
        assert_eq!(t.label("no markers"), None);
        assert_eq!(t.label(":) :-)"), None);
        assert_eq!(t.label("great:) day ;)"), Some(LabeledTweet::new("great day", Label::Positive)));
    }

    #[test]
    fn custom_emoticon_table() {
        let t = EmoticonTable::new(["<3"], ["</3"]);
        assert_eq!(t.label("love it <3"), Some(LabeledTweet::new("love it", Label::Positive)));
        assert_eq!(t.label("so excited :)"), None);
    }

    #[test]
    fn training_counts() {
        let m = fixture_model();
        let vocab: Vec<_> = m.vocabulary.iter().map(String::as_str).collect();
        assert_eq!(vocab, ["cry", "happy", "joy", "sad"]);
        assert_eq!(m.class_total(Label::Positive), 3);
        assert_eq!(m.class_total(Label::Negative), 2);
        assert_eq!(m.token_count(Label::Positive, "happy"), 2);
    }

    #[test]
    fn training_requires_both_classes() {
        assert!(matches!(train(Vec::new()), Err(ModelError::MissingClass(_))));
        assert!(matches!(
            train([LabeledTweet::new("x", Label::Positive)]),
            Err(ModelError::MissingClass(Label::Negative))
        ));
    }

    #[test]
    fn duplicates_double_counts() {
        let doc = LabeledTweet::new("happy joy happy", Label::Positive);
        let neg = LabeledTweet::new("sad", Label::Negative);
        let once = train([doc.clone(), neg.clone()]).unwrap();
        let twice = train([doc.clone(), doc, neg]).unwrap();
        assert_eq!(twice.token_count(Label::Positive, "happy"), 2 * once.token_count(Label::Positive, "happy"));
        assert_eq!(twice.doc_count(Label::Positive), 2);
    }

    #[test]
    fn classify_fixture() {
        let m = fixture_model();
        assert_eq!(classify(&m, "happy").0, Label::Positive);
        assert_eq!(classify(&m, "sad cry sad").0, Label::Negative);
        assert_eq!(classify(&m, ""), (Label::Positive, 0.0));
        assert_eq!(classify(&m, "unknown words only"), (Label::Positive, 0.0));
    }

    #[test]
    fn mentions_and_urls_are_not_features() {
        assert_eq!(features("@happy #Joy http://x.y HAPPY :)"), ["joy", "happy"]);
    }

    #[test]
    fn evaluation() {
        let m = fixture_model();
        let r = evaluate(&m, [
            LabeledTweet::new("happy joy happy", Label::Positive),
            LabeledTweet::new("sad cry", Label::Negative),
        ])
        .unwrap();
        assert_eq!((r.total, r.correct, r.accuracy), (2, 2, 1.0));
        let r = evaluate(&m, [
            LabeledTweet::new("happy", Label::Positive),
            LabeledTweet::new("happy", Label::Negative),
        ])
        .unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.confusion, [[1, 0], [1, 0]]);
        assert!(matches!(evaluate(&m, Vec::new()), Err(ModelError::EmptyTestSet)));
    }

    #[test]
    fn save_and_load() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.nb");
        let m = fixture_model();
        m.save(&p).unwrap();
        assert_eq!(UnigramModel::load(&p).unwrap(), m);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("geosent-nb v1\nprior positive 1\nprior negative 1\n"));
    }

    #[test]
    fn load_errors() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.nb");
        fixture_model().save(&p).unwrap();
        let full = fs::read_to_string(&p).unwrap();
        // cut at every line boundary and mid-line
        for cut in [full.len() - 1, full.len() - 7, full.find("tok").unwrap(), 20] {
            fs::write(&p, &full[..cut]).unwrap();
            assert!(matches!(UnigramModel::load(&p), Err(ModelError::Corrupt { .. })), "cut {cut}");
        }
        assert!(matches!(UnigramModel::load(""), Err(ModelError::NotFound(_))));
        assert!(matches!(
            UnigramModel::parse("geosent-nb v2\n"),
            Err(ModelError::Version(_))
        ));
    }

    #[test]
    fn labeled_corpus_parsing() {
        let docs = parse_labeled_corpus("positive\thappy day\n\nneg\tsad\n").unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1].label, Label::Negative);
        assert!(matches!(parse_labeled_corpus("maybe\tx"), Err(ModelError::Corpus { line: 1, .. })));
    }
}
