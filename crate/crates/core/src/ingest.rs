//! Collector and parser stages.
//!
//! Collection copies complete input lines into T1 and nothing else, so it
//! never waits on parsing. Parsing runs afterwards over T1: it extracts the
//! fields needed downstream, geo-resolves each tweet and rewrites T2.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Timelike, Utc};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;

use crate::georesolve::{Point, RegionIndex};
use crate::store::{self, ParsedTable, ParsedTweet, RawTable, StoreError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollectorStats {
    pub lines_read: u64,
    pub accepted: u64,
    pub rejected_no_geo: u64,
    pub rejected_malformed: u64,
    pub rejected_unresolved: u64,
}

impl CollectorStats {
    pub fn is_balanced(&self) -> bool {
        self.lines_read
            == self.accepted + self.rejected_no_geo + self.rejected_malformed + self.rejected_unresolved
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CollectReport {
    /// Complete lines seen, blank ones included.
    pub lines_read: u64,
    pub lines_written: u64,
    pub blank_lines: u64,
    /// Trailing bytes after the last newline, not written.
    pub fragment: Option<Vec<u8>>,
}

/// Appends every complete, non-blank line of `source` verbatim to the raw table.
pub fn collect<R: Read>(source: R, raw_table: &Path) -> Result<CollectReport, StoreError> {
    let mut table = RawTable::open(raw_table)?;
    let mut reader = BufReader::with_capacity(256 * 1024, source);
    let mut report = CollectReport::default();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(store::io_err(Path::new("<input>")))?;
        if n == 0 {
            break;
        }
        if buf.last() != Some(&b'\n') {
            log::warn!("input ends mid-line; {} byte fragment not written", buf.len());
            report.fragment = Some(buf.clone());
            break;
        }
        buf.pop();
        report.lines_read += 1;
        if buf.iter().all(u8::is_ascii_whitespace) {
            report.blank_lines += 1;
            continue;
        }
        table.append(&buf)?;
        report.lines_written += 1;
    }
    table.sync()?;
    Ok(report)
}

/// Tweet fields before geo-resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub tweet_id: String,
    pub timestamp: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    NoGeo,
    Malformed(String),
}

#[derive(Deserialize)]
struct RawTweet {
    id_str: Option<String>,
    id: Option<Value>,
    created_at: Option<String>,
    coordinates: Option<RawCoordinates>,
    text: Option<String>,
    full_text: Option<String>,
}

#[derive(Deserialize)]
struct RawCoordinates {
    coordinates: Vec<f64>,
}

/// Twitter's classic `created_at` layout, e.g. `Mon Jul 22 16:24:00 +0000 2013`.
const TWITTER_TIME: &str = "%a %b %d %H:%M:%S %z %Y";

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let t = DateTime::parse_from_str(s, TWITTER_TIME)
        .or_else(|_| DateTime::parse_from_rfc3339(s))
        .map(|t| t.with_timezone(&Utc))
        .ok()
        .or_else(|| {
            NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
                .ok()
                .map(|n| n.and_utc())
        })?;
    t.with_nanosecond(0)
}

pub fn parse_record(payload: &[u8]) -> Result<Candidate, Rejection> {
    let raw: RawTweet =
        serde_json::from_slice(payload).map_err(|e| Rejection::Malformed(e.to_string()))?;
    let coords = raw.coordinates.ok_or(Rejection::NoGeo)?;
    let (lon, lat) = match coords.coordinates.as_slice() {
        [lon, lat, ..] => (*lon, *lat),
        _ => return Err(Rejection::Malformed("coordinates must hold [lon, lat]".into())),
    };
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(Rejection::Malformed(format!("coordinates out of range: lat {lat}, lon {lon}")));
    }
    let tweet_id = match (raw.id_str, raw.id) {
        (Some(s), _) if !s.is_empty() => s,
        (_, Some(Value::Number(n))) => n.to_string(),
        (_, Some(Value::String(s))) if !s.is_empty() => s,
        _ => return Err(Rejection::Malformed("missing id".into())),
    };
    let created = raw
        .created_at
        .ok_or_else(|| Rejection::Malformed("missing created_at".into()))?;
    let timestamp = parse_timestamp(&created)
        .ok_or_else(|| Rejection::Malformed(format!("unparsable created_at {created:?}")))?;
    let text = raw
        .full_text
        .or(raw.text)
        .ok_or_else(|| Rejection::Malformed("missing text".into()))?;
    Ok(Candidate {
        tweet_id,
        timestamp,
        lat,
        lon,
        text,
    })
}

enum Outcome {
    Accepted(ParsedTweet),
    NoGeo,
    Malformed,
    Unresolved,
}

fn process(payload: &[u8], index: &RegionIndex) -> Outcome {
    match parse_record(payload) {
        Ok(c) => match index.resolve(Point::new(c.lon, c.lat)) {
            Some(r) => Outcome::Accepted(ParsedTweet {
                tweet_id: c.tweet_id,
                timestamp: c.timestamp,
                lat: c.lat,
                lon: c.lon,
                country: r.country,
                county: r.county,
                text: c.text,
            }),
            None => Outcome::Unresolved,
        },
        Err(Rejection::NoGeo) => Outcome::NoGeo,
        Err(Rejection::Malformed(_)) => Outcome::Malformed,
    }
}

const PARSE_CHUNK: usize = 16 * 1024;

/// Parses the whole raw table into a fresh parsed table. Chunks are parsed in
/// parallel and written back in input order, so the output does not depend on
/// the thread count.
pub fn parse_corpus(
    raw_table: &Path,
    index: &RegionIndex,
    parsed_table: &Path,
) -> Result<CollectorStats, StoreError> {
    let mut out = ParsedTable::create(parsed_table)?;
    let mut stats = CollectorStats::default();
    let mut records = store::read_raw(raw_table)?;
    loop {
        let chunk: Vec<Vec<u8>> = records
            .by_ref()
            .take(PARSE_CHUNK)
            .map(|r| r.map(|rec| rec.payload))
            .collect::<Result<_, _>>()?;
        if chunk.is_empty() {
            break;
        }
        let outcomes: Vec<Outcome> = chunk.par_iter().map(|p| process(p, index)).collect();
        for outcome in outcomes {
            stats.lines_read += 1;
            match outcome {
                Outcome::Accepted(t) => {
                    out.write(&t)?;
                    stats.accepted += 1;
                }
                Outcome::NoGeo => stats.rejected_no_geo += 1,
                Outcome::Malformed => stats.rejected_malformed += 1,
                Outcome::Unresolved => stats.rejected_unresolved += 1,
            }
        }
    }
    out.finish()?;
    debug_assert!(stats.is_balanced());
    Ok(stats)
}
