//! The three append-only tables.
//!
//! * T1, the raw corpus: one JSON record per line, stored verbatim.
//! * T2, parsed tweets: tab-separated
//!   `tweet_id, timestamp, lat, lon, country, county, text`, with `\\`, tab,
//!   newline and carriage return in text escaped as `\\`, `\t`, `\n`, `\r`.
//! * T3, scores: CSV with the header in [`SCORE_HEADER`]; undefined scores
//!   are written as `NA`.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("payload must be a single non-empty line")]
    InvalidPayload,
    #[error("empty time window: start {start} is not before end {end}")]
    EmptyWindow {
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    },
    #[error("{} invalid score row(s): {}", .0.len(), describe_rejections(.0))]
    InvalidRows(Vec<(usize, String)>),
    #[error("{path} line {line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

fn describe_rejections(rows: &[(usize, String)]) -> String {
    rows.iter()
        .map(|(i, r)| format!("#{i}: {r}"))
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Country,
    County,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Country => "country",
            Level::County => "county",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "country" => Ok(Level::Country),
            "county" => Ok(Level::County),
            other => Err(format!("unknown level {other:?} (expected country or county)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Approach {
    Dictionary,
    MachineLearning,
}

impl Approach {
    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Dictionary => "dictionary",
            Approach::MachineLearning => "ml",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "dictionary" | "dict" => Ok(Approach::Dictionary),
            "ml" | "machinelearning" | "machine-learning" => Ok(Approach::MachineLearning),
            other => Err(format!("unknown approach {other:?} (expected dict or ml)")),
        }
    }
}

pub fn format_instant(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn parse_instant(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("invalid timestamp {s:?}: {e}"))
}

// ---------------------------------------------------------------------------
// T1

/// Append handle on the raw table. Line numbers continue from the existing
/// content of the file.
pub struct RawTable {
    path: PathBuf,
    writer: BufWriter<File>,
    lines: u64,
}

impl RawTable {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let (lines, ends_with_newline) = count_lines(&mut file).map_err(io_err(&path))?;
        if !ends_with_newline {
            return Err(StoreError::Malformed {
                path,
                line: lines as usize,
                reason: "raw table does not end with a newline".into(),
            });
        }
        Ok(RawTable {
            path,
            writer: BufWriter::new(file),
            lines,
        })
    }

    pub fn append(&mut self, payload: &[u8]) -> Result<u64, StoreError> {
        if payload.is_empty() || payload.contains(&b'\n') {
            return Err(StoreError::InvalidPayload);
        }
        self.writer.write_all(payload).map_err(io_err(&self.path))?;
        self.writer.write_all(b"\n").map_err(io_err(&self.path))?;
        self.lines += 1;
        Ok(self.lines)
    }

    pub fn line_count(&self) -> u64 {
        self.lines
    }

    /// Flushes buffered lines and syncs them to disk.
    pub fn sync(&mut self) -> Result<(), StoreError> {
        self.writer.flush().map_err(io_err(&self.path))?;
        self.writer.get_ref().sync_data().map_err(io_err(&self.path))
    }
}

impl Drop for RawTable {
    fn drop(&mut self) {
        let _ = self.writer.flush();
    }
}

fn count_lines(file: &mut File) -> io::Result<(u64, bool)> {
    file.seek(SeekFrom::Start(0))?;
    let mut buf = [0u8; 64 * 1024];
    let mut lines = 0;
    let mut last = b'\n';
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        lines += buf[..n].iter().filter(|&&b| b == b'\n').count() as u64;
        last = buf[n - 1];
    }
    Ok((lines, last == b'\n'))
}

/// Appends one payload to the raw table at `path` and returns its line number.
pub fn append_raw(path: impl AsRef<Path>, payload: &str) -> Result<u64, StoreError> {
    let mut table = RawTable::open(path)?;
    let line = table.append(payload.as_bytes())?;
    table.sync()?;
    Ok(line)
}

/// One line of T1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub line_number: u64,
    pub payload: Vec<u8>,
}

/// Iterates the raw table. A final line without newline is not yielded.
pub fn read_raw(path: impl AsRef<Path>) -> Result<RawReader, StoreError> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(io_err(&path))?;
    Ok(RawReader {
        reader: BufReader::with_capacity(256 * 1024, file),
        path,
        line: 0,
    })
}

pub struct RawReader {
    reader: BufReader<File>,
    path: PathBuf,
    line: u64,
}

impl Iterator for RawReader {
    type Item = Result<RawRecord, StoreError>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut buf = Vec::new();
        match self.reader.read_until(b'\n', &mut buf) {
            Ok(0) => None,
            Ok(_) if buf.last() != Some(&b'\n') => None,
            Ok(_) => {
                buf.pop();
                self.line += 1;
                Some(Ok(RawRecord {
                    line_number: self.line,
                    payload: buf,
                }))
            }
            Err(e) => Some(Err(io_err(&self.path)(e))),
        }
    }
}

// ---------------------------------------------------------------------------
// T2

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTweet {
    pub tweet_id: String,
    pub timestamp: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    pub country: String,
    pub county: String,
    pub text: String,
}

impl ParsedTweet {
    pub fn region(&self, level: Level) -> &str {
        match level {
            Level::Country => &self.country,
            Level::County => &self.county,
        }
    }

    /// The T2 line for this tweet, without the trailing newline.
    pub fn to_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            escape_field(&self.tweet_id),
            format_instant(&self.timestamp),
            self.lat,
            self.lon,
            escape_field(&self.country),
            escape_field(&self.county),
            escape_field(&self.text)
        )
    }

    pub fn from_row(row: &str) -> Result<Self, String> {
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != 7 {
            return Err(format!("expected 7 tab-separated columns, found {}", fields.len()));
        }
        let timestamp = parse_instant(fields[1])?;
        let lat: f64 = fields[2].parse().map_err(|_| format!("invalid lat {:?}", fields[2]))?;
        let lon: f64 = fields[3].parse().map_err(|_| format!("invalid lon {:?}", fields[3]))?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(format!("coordinates out of range: ({lat}, {lon})"));
        }
        let country = unescape_field(fields[4])?;
        let county = unescape_field(fields[5])?;
        if country.is_empty() || county.is_empty() {
            return Err("empty region name".into());
        }
        Ok(ParsedTweet {
            tweet_id: unescape_field(fields[0])?,
            timestamp,
            lat,
            lon,
            country,
            county,
            text: unescape_field(fields[6])?,
        })
    }
}

pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> Result<String, String> {
    if !s.contains('\\') {
        return Ok(s.to_string());
    }
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("invalid escape sequence \\{}", other.map_or(String::new(), String::from))),
        }
    }
    Ok(out)
}

/// Writer for T2.
pub struct ParsedTable {
    path: PathBuf,
    writer: BufWriter<File>,
    rows: u64,
}

impl ParsedTable {
    /// Opens for appending, creating the file if needed.
    pub fn append(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(path, false)
    }

    /// Creates or truncates the table.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(path, true)
    }

    fn open_with(path: impl AsRef<Path>, truncate: bool) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut opts = OpenOptions::new();
        opts.create(true);
        if truncate {
            opts.write(true).truncate(true);
        } else {
            opts.append(true);
        }
        let file = opts.open(&path).map_err(io_err(&path))?;
        Ok(ParsedTable {
            path,
            writer: BufWriter::with_capacity(256 * 1024, file),
            rows: 0,
        })
    }

    pub fn write(&mut self, tweet: &ParsedTweet) -> Result<(), StoreError> {
        let row = tweet.to_row();
        self.writer.write_all(row.as_bytes()).map_err(io_err(&self.path))?;
        self.writer.write_all(b"\n").map_err(io_err(&self.path))?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows_written(&self) -> u64 {
        self.rows
    }

    pub fn finish(mut self) -> Result<u64, StoreError> {
        self.writer.flush().map_err(io_err(&self.path))?;
        Ok(self.rows)
    }
}

/// Half-open time window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Window {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, StoreError> {
        if start < end {
            Ok(Window { start, end })
        } else {
            Err(StoreError::EmptyWindow { start, end })
        }
    }

    /// Window covering every representable instant.
    pub fn all() -> Self {
        Window {
            start: DateTime::<Utc>::MIN_UTC,
            end: DateTime::<Utc>::MAX_UTC,
        }
    }

    pub fn contains(&self, t: &DateTime<Utc>) -> bool {
        self.start <= *t && *t < self.end
    }
}

/// Streaming reader over T2 selecting a time window and optional region.
/// Malformed rows are skipped, logged with their line number and tallied.
pub struct ParsedScan {
    lines: io::Lines<BufReader<File>>,
    path: PathBuf,
    line: usize,
    window: Window,
    region: Option<(Level, String)>,
    skipped: Vec<usize>,
}

impl ParsedScan {
    /// Line numbers of rows skipped as malformed so far.
    pub fn skipped_lines(&self) -> &[usize] {
        &self.skipped
    }

    pub fn skipped(&self) -> usize {
        self.skipped.len()
    }
}

impl Iterator for ParsedScan {
    type Item = Result<ParsedTweet, StoreError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let row = match self.lines.next()? {
                Ok(row) => row,
                Err(e) => return Some(Err(io_err(&self.path)(e))),
            };
            self.line += 1;
            let tweet = match ParsedTweet::from_row(&row) {
                Ok(t) => t,
                Err(reason) => {
                    warn!("{} line {}: skipping malformed row: {reason}", self.path.display(), self.line);
                    self.skipped.push(self.line);
                    continue;
                }
            };
            if !self.window.contains(&tweet.timestamp) {
                continue;
            }
            if let Some((level, name)) = &self.region {
                if tweet.region(*level) != name {
                    continue;
                }
            }
            return Some(Ok(tweet));
        }
    }
}

pub fn scan_parsed(
    path: impl AsRef<Path>,
    window: Window,
    region: Option<(Level, &str)>,
) -> Result<ParsedScan, StoreError> {
    if window.start >= window.end {
        return Err(StoreError::EmptyWindow {
            start: window.start,
            end: window.end,
        });
    }
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(io_err(&path))?;
    Ok(ParsedScan {
        lines: BufReader::with_capacity(256 * 1024, file).lines(),
        path,
        line: 0,
        window,
        region: region.map(|(l, n)| (l, n.to_string())),
        skipped: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// T3

pub const SCORE_HEADER: [&str; 11] = [
    "approach",
    "level",
    "region",
    "parent",
    "bucket_start",
    "bucket_end",
    "pos_count",
    "neg_count",
    "tweet_count",
    "pss",
    "npss",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub approach: Approach,
    pub level: Level,
    pub region: String,
    /// Parent country for counties, empty for countries.
    pub parent: String,
    pub bucket_start: DateTime<Utc>,
    pub bucket_end: DateTime<Utc>,
    pub pos_count: u64,
    pub neg_count: u64,
    pub tweet_count: u64,
    pub pss: Option<f64>,
    pub npss: Option<f64>,
}

impl ScoreRow {
    pub fn validate(&self) -> Result<(), String> {
        if self.bucket_start >= self.bucket_end {
            return Err("bucket_start must precede bucket_end".into());
        }
        if self.region.is_empty() {
            return Err("empty region".into());
        }
        match self.level {
            Level::Country if !self.parent.is_empty() => {
                return Err("country rows have no parent".into())
            }
            Level::County if self.parent.is_empty() => return Err("county rows need a parent".into()),
            _ => {}
        }
        match self.pss {
            Some(pss) => {
                let expected = self.pos_count as f64 / self.neg_count.max(1) as f64;
                if !pss.is_finite() || pss < 0.0 {
                    return Err(format!("pss {pss} is not a non-negative number"));
                }
                if (pss - expected).abs() > 1e-12 * expected.max(1.0) {
                    return Err(format!("pss {pss} does not equal pos/max(neg,1) = {expected}"));
                }
            }
            None if self.npss.is_some() => return Err("npss defined while pss is undefined".into()),
            None => {}
        }
        if let Some(npss) = self.npss {
            if !(0.0..=1.0).contains(&npss) {
                return Err(format!("npss {npss} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn to_record(&self) -> [String; 11] {
        [
            self.approach.to_string(),
            self.level.to_string(),
            self.region.clone(),
            self.parent.clone(),
            format_instant(&self.bucket_start),
            format_instant(&self.bucket_end),
            self.pos_count.to_string(),
            self.neg_count.to_string(),
            self.tweet_count.to_string(),
            format_score(self.pss),
            format_score(self.npss),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self, String> {
        if rec.len() != SCORE_HEADER.len() {
            return Err(format!("expected {} columns, found {}", SCORE_HEADER.len(), rec.len()));
        }
        let count = |i: usize| -> Result<u64, String> {
            rec[i].parse().map_err(|_| format!("invalid {} {:?}", SCORE_HEADER[i], &rec[i]))
        };
        let row = ScoreRow {
            approach: rec[0].parse()?,
            level: rec[1].parse()?,
            region: rec[2].to_string(),
            parent: rec[3].to_string(),
            bucket_start: parse_instant(&rec[4])?,
            bucket_end: parse_instant(&rec[5])?,
            pos_count: count(6)?,
            neg_count: count(7)?,
            tweet_count: count(8)?,
            pss: parse_score(&rec[9])?,
            npss: parse_score(&rec[10])?,
        };
        row.validate()?;
        Ok(row)
    }
}

/// Shortest decimal that reads back to the same `f64`.
pub fn format_score(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NA".to_string(),
    }
}

pub fn parse_score(s: &str) -> Result<Option<f64>, String> {
    if s == "NA" {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("invalid score {s:?}"))
}

/// Appends rows to the score table, writing the header first when the file is
/// new or empty. Nothing is written if any row is invalid.
pub fn write_scores(path: impl AsRef<Path>, rows: &[ScoreRow]) -> Result<usize, StoreError> {
    let rejected: Vec<(usize, String)> = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.validate().err().map(|e| (i, e)))
        .collect();
    if !rejected.is_empty() {
        return Err(StoreError::InvalidRows(rejected));
    }
    let path = path.as_ref();
    let needs_header = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| StoreError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    if needs_header {
        writer.write_record(SCORE_HEADER).map_err(csv_err)?;
    }
    for row in rows {
        writer.write_record(row.to_record()).map_err(csv_err)?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(rows.len())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRow>, StoreError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let header = reader.headers().map_err(|e| StoreError::Malformed {
        path: path.to_path_buf(),
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(SCORE_HEADER.iter().copied()) {
        return Err(StoreError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("unexpected header {:?}", header),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let malformed = |reason: String| StoreError::Malformed {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        rows.push(ScoreRow::from_record(&rec).map_err(malformed)?);
    }
    Ok(rows)
}
