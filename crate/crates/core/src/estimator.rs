//! Public sentiment scores.
//!
//! For one region and time bucket the score is `pos / max(neg, 1)`, where the
//! counts are sentiment words (dictionary approach) or classified tweets
//! (machine-learning approach). The score is undefined when both counts are
//! zero. Scores are normalised by the maximum score of their group, and
//! bucket-aligned score series are compared with Pearson's coefficient.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, TimeZone, Utc};
use rayon::prelude::*;
use thiserror::Error;

use crate::classifier::{Classifier, Label};
use crate::dictionary::DictionaryAnalyser;
use crate::store::{self, Approach, Level, ScoreRow, StoreError, Window};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("bucket duration must be positive, got {0} s")]
    BadDuration(i64),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("series for {0} is not strictly increasing in bucket_start")]
    Unordered(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormScope {
    /// Regions sharing parent, level, bucket and approach.
    Siblings,
    /// Every region of the level within a bucket and approach.
    #[default]
    Level,
}

impl FromStr for NormScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "siblings" => Ok(NormScope::Siblings),
            "level" => Ok(NormScope::Level),
            other => Err(format!("unknown normalisation scope {other:?} (expected siblings or level)")),
        }
    }
}

impl fmt::Display for NormScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormScope::Siblings => "siblings",
            NormScope::Level => "level",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Words,
    Tweets,
}

impl Unit {
    pub fn of(approach: Approach) -> Unit {
        match approach {
            Approach::Dictionary => Unit::Words,
            Approach::MachineLearning => Unit::Tweets,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SentimentCounts {
    pub pos: u64,
    pub neg: u64,
    pub unit: Unit,
    pub tweet_count: u64,
}

impl SentimentCounts {
    pub fn new(pos: u64, neg: u64, unit: Unit) -> Self {
        SentimentCounts {
            pos,
            neg,
            unit,
            tweet_count: 0,
        }
    }
}

pub fn compute_pss(counts: &SentimentCounts) -> Option<f64> {
    pss_of(counts.pos, counts.neg)
}

pub(crate) fn pss_of(pos: u64, neg: u64) -> Option<f64> {
    if pos == 0 && neg == 0 {
        None
    } else {
        Some(pos as f64 / neg.max(1) as f64)
    }
}

/// Divides each score by the group maximum. A group whose maximum is zero
/// (or an empty group) has no normalised scores.
pub fn normalize<S: Clone>(group: &[(S, f64)]) -> Vec<(S, f64)> {
    let max = group.iter().map(|(_, p)| *p).fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    group.iter().map(|(r, p)| (r.clone(), p / max)).collect()
}

#[derive(Debug, Clone)]
pub struct AggregationSpec {
    pub level: Level,
    pub bucket_seconds: i64,
    pub window: Window,
    pub approach: Approach,
    /// Bucket edges fall on multiples of the duration in this local offset.
    pub display_tz_offset_minutes: i32,
    pub norm_scope: NormScope,
}

impl AggregationSpec {
    pub fn buckets(&self) -> Result<BucketGrid, EstimateError> {
        BucketGrid::new(self.window, self.bucket_seconds, self.display_tz_offset_minutes)
    }
}

/// Bucket edges aligned to multiples of the duration in local time and
/// clipped to the window, so the first and last buckets may be truncated.
#[derive(Debug, Clone, Copy)]
pub struct BucketGrid {
    window: Window,
    seconds: i64,
    offset_seconds: i64,
}

impl BucketGrid {
    pub fn new(window: Window, seconds: i64, offset_minutes: i32) -> Result<Self, EstimateError> {
        if seconds <= 0 {
            return Err(EstimateError::BadDuration(seconds));
        }
        Window::new(window.start, window.end)?;
        Ok(BucketGrid {
            window,
            seconds,
            offset_seconds: offset_minutes as i64 * 60,
        })
    }

    /// Grid index of the bucket holding `t`, if `t` is inside the window.
    pub fn index_of(&self, t: &DateTime<Utc>) -> Option<i64> {
        self.window
            .contains(t)
            .then(|| (t.timestamp() + self.offset_seconds).div_euclid(self.seconds))
    }

    pub fn is_bucket(&self, start: DateTime<Utc>, end: DateTime<Utc>) -> bool {
        self.index_of(&start).is_some_and(|k| self.bounds(k) == (start, end))
    }

    pub fn bounds(&self, index: i64) -> (DateTime<Utc>, DateTime<Utc>) {
        let edge = |k: i64| {
            Utc.timestamp_opt(k * self.seconds - self.offset_seconds, 0)
                .single()
                .unwrap_or(DateTime::<Utc>::MAX_UTC)
        };
        (
            edge(index).max(self.window.start),
            edge(index + 1).min(self.window.end),
        )
    }
}

/// Per-tweet sentiment tallies that add up over a collection.
pub trait Analyser: Sync {
    fn approach(&self) -> Approach;
    /// Positive and negative units contributed by one tweet.
    fn tally(&self, text: &str) -> (u64, u64);
}

impl Analyser for DictionaryAnalyser {
    fn approach(&self) -> Approach {
        Approach::Dictionary
    }

    fn tally(&self, text: &str) -> (u64, u64) {
        let c = self.count_text(text);
        (c.positive, c.negative)
    }
}

impl Analyser for Classifier {
    fn approach(&self) -> Approach {
        Approach::MachineLearning
    }

    fn tally(&self, text: &str) -> (u64, u64) {
        match self.classify(text).0 {
            Label::Positive => (1, 0),
            Label::Negative => (0, 1),
        }
    }
}

/// Counts for one (approach, level, region, bucket) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub approach: Approach,
    pub level: Level,
    pub region: String,
    pub parent: String,
    pub bucket_start: DateTime<Utc>,
    pub bucket_end: DateTime<Utc>,
    pub counts: SentimentCounts,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    pos: u64,
    neg: u64,
    tweets: u64,
}

const SCAN_CHUNK: usize = 64 * 1024;

/// County-level cells for every bucket of every grid, from one pass over the
/// parsed table. Each tweet is analysed once. Country cells are sums of their
/// county cells (see [`roll_up`]).
pub fn tally_counties(
    parsed_table: &Path,
    grids: &[BucketGrid],
    analyser: &dyn Analyser,
) -> Result<Vec<Vec<Cell>>, EstimateError> {
    let Some(first) = grids.first() else {
        return Ok(Vec::new());
    };
    let scan_window = grids.iter().fold(first.window, |w, g| Window {
        start: w.start.min(g.window.start),
        end: w.end.max(g.window.end),
    });
    let mut scan = store::scan_parsed(parsed_table, scan_window, None)?;
    let mut cells: BTreeMap<(usize, i64, String, String), Tally> = BTreeMap::new();
    loop {
        let chunk: Vec<_> = scan.by_ref().take(SCAN_CHUNK).collect::<Result<_, _>>()?;
        if chunk.is_empty() {
            break;
        }
        let tallies: Vec<(u64, u64)> = chunk.par_iter().map(|t| analyser.tally(&t.text)).collect();
        for (tweet, (pos, neg)) in chunk.into_iter().zip(tallies) {
            for (g, grid) in grids.iter().enumerate() {
                if let Some(k) = grid.index_of(&tweet.timestamp) {
                    let cell = cells
                        .entry((g, k, tweet.country.clone(), tweet.county.clone()))
                        .or_default();
                    cell.pos += pos;
                    cell.neg += neg;
                    cell.tweets += 1;
                }
            }
        }
    }
    let skipped = scan.skipped();
    if skipped > 0 {
        log::warn!("{skipped} malformed parsed row(s) skipped");
    }
    let approach = analyser.approach();
    let mut out: Vec<Vec<Cell>> = vec![Vec::new(); grids.len()];
    for ((g, k, country, county), t) in cells {
        let (bucket_start, bucket_end) = grids[g].bounds(k);
        out[g].push(Cell {
            approach,
            level: Level::County,
            region: county,
            parent: country,
            bucket_start,
            bucket_end,
            counts: SentimentCounts {
                pos: t.pos,
                neg: t.neg,
                unit: Unit::of(approach),
                tweet_count: t.tweets,
            },
        });
    }
    Ok(out)
}

/// Sums county cells into their parent countries.
pub fn roll_up(county_cells: &[Cell]) -> Vec<Cell> {
    let mut out: BTreeMap<(DateTime<Utc>, Approach, &str), Cell> = BTreeMap::new();
    for c in county_cells.iter().filter(|c| c.level == Level::County) {
        let entry = out
            .entry((c.bucket_start, c.approach, c.parent.as_str()))
            .or_insert_with(|| Cell {
                approach: c.approach,
                level: Level::Country,
                region: c.parent.clone(),
                parent: String::new(),
                bucket_start: c.bucket_start,
                bucket_end: c.bucket_end,
                counts: SentimentCounts {
                    pos: 0,
                    neg: 0,
                    unit: c.counts.unit,
                    tweet_count: 0,
                },
            });
        entry.counts.pos += c.counts.pos;
        entry.counts.neg += c.counts.neg;
        entry.counts.tweet_count += c.counts.tweet_count;
    }
    out.into_values().collect()
}

/// Scores and normalises cells, returning rows sorted by
/// (bucket, level, region, parent, approach).
pub fn score_cells(cells: &[Cell], scope: NormScope) -> Vec<ScoreRow> {
    let mut rows: Vec<ScoreRow> = cells
        .iter()
        .map(|c| ScoreRow {
            approach: c.approach,
            level: c.level,
            region: c.region.clone(),
            parent: c.parent.clone(),
            bucket_start: c.bucket_start,
            bucket_end: c.bucket_end,
            pos_count: c.counts.pos,
            neg_count: c.counts.neg,
            tweet_count: c.counts.tweet_count,
            pss: compute_pss(&c.counts),
            npss: None,
        })
        .collect();

    type GroupKey<'a> = (Approach, Level, DateTime<Utc>, DateTime<Utc>, &'a str);
    let mut groups: HashMap<GroupKey, Vec<(usize, f64)>> = HashMap::new();
    for (i, r) in rows.iter().enumerate() {
        if let Some(pss) = r.pss {
            let parent = match scope {
                NormScope::Siblings => r.parent.as_str(),
                NormScope::Level => "",
            };
            groups
                .entry((r.approach, r.level, r.bucket_start, r.bucket_end, parent))
                .or_default()
                .push((i, pss));
        }
    }
    let mut npss = vec![None; rows.len()];
    for members in groups.values() {
        for (i, v) in normalize(members) {
            npss[i] = Some(v);
        }
    }
    for (row, v) in rows.iter_mut().zip(npss) {
        row.npss = v;
    }
    rows.sort_by(|a, b| {
        (a.bucket_start, a.level, &a.region, &a.parent, a.approach)
            .cmp(&(b.bucket_start, b.level, &b.region, &b.parent, b.approach))
    });
    rows
}

/// Score rows at `spec.level` for every bucket of the window.
pub fn aggregate(
    spec: &AggregationSpec,
    parsed_table: &Path,
    analyser: &dyn Analyser,
) -> Result<Vec<ScoreRow>, EstimateError> {
    aggregate_all(std::slice::from_ref(spec), parsed_table, analyser)
}

/// Like [`aggregate`] but for several levels from a single scan.
pub fn aggregate_levels(
    spec: &AggregationSpec,
    levels: &[Level],
    parsed_table: &Path,
    analyser: &dyn Analyser,
) -> Result<Vec<ScoreRow>, EstimateError> {
    let specs: Vec<AggregationSpec> = levels
        .iter()
        .map(|&level| AggregationSpec { level, ..spec.clone() })
        .collect();
    aggregate_all(&specs, parsed_table, analyser)
}

/// Rows for several specs from a single scan, concatenated in spec order.
/// The analyser's approach overrides `spec.approach`.
pub fn aggregate_all(
    specs: &[AggregationSpec],
    parsed_table: &Path,
    analyser: &dyn Analyser,
) -> Result<Vec<ScoreRow>, EstimateError> {
    let grids = specs.iter().map(AggregationSpec::buckets).collect::<Result<Vec<_>, _>>()?;
    let tallies = tally_counties(parsed_table, &grids, analyser)?;
    Ok(specs
        .iter()
        .zip(tallies)
        .flat_map(|(spec, counties)| {
            let cells = match spec.level {
                Level::Country => roll_up(&counties),
                Level::County => counties,
            };
            score_cells(&cells, spec.norm_scope)
        })
        .collect())
}

/// Reads pre-computed counts in the score-table layout without the `pss` and
/// `npss` columns.
pub fn read_cells(path: &Path) -> Result<Vec<Cell>, EstimateError> {
    const HEADER: [&str; 9] = [
        "approach",
        "level",
        "region",
        "parent",
        "bucket_start",
        "bucket_end",
        "pos_count",
        "neg_count",
        "tweet_count",
    ];
    let malformed = |line: usize, reason: String| {
        EstimateError::Store(StoreError::Malformed {
            path: path.to_path_buf(),
            line,
            reason,
        })
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => EstimateError::Store(store::io_err(path)(source)),
        other => malformed(1, format!("{other:?}")),
    })?;
    let header = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    if header.iter().ne(HEADER) {
        return Err(malformed(1, format!("expected header {}", HEADER.join(","))));
    }
    let mut cells = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| malformed(line, e.to_string()))?;
        let bad = |reason: String| malformed(line, reason);
        let count = |j: usize| rec[j].parse::<u64>().map_err(|e| bad(format!("{}: {e}", HEADER[j])));
        let approach: Approach = rec[0].parse().map_err(bad)?;
        let bucket_start = store::parse_instant(&rec[4]).map_err(bad)?;
        let bucket_end = store::parse_instant(&rec[5]).map_err(bad)?;
        if bucket_start >= bucket_end {
            return Err(bad("bucket_start must precede bucket_end".into()));
        }
        cells.push(Cell {
            approach,
            level: rec[1].parse().map_err(bad)?,
            region: rec[2].to_string(),
            parent: rec[3].to_string(),
            bucket_start,
            bucket_end,
            counts: SentimentCounts {
                pos: count(6)?,
                neg: count(7)?,
                unit: Unit::of(approach),
                tweet_count: count(8)?,
            },
        });
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub bucket_start: DateTime<Utc>,
    pub pss: f64,
    pub npss: Option<f64>,
    pub tweet_count: u64,
}

/// Defined scores of one region and approach, ordered by bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub region: String,
    pub approach: Approach,
    pub points: Vec<SeriesPoint>,
}

impl ScoreSeries {
    pub fn new(region: impl Into<String>, approach: Approach, points: Vec<SeriesPoint>) -> Result<Self, EstimateError> {
        let region = region.into();
        if points.windows(2).any(|w| w[0].bucket_start >= w[1].bucket_start) {
            return Err(EstimateError::Unordered(region));
        }
        Ok(ScoreSeries {
            region,
            approach,
            points,
        })
    }

    /// Series from score rows of one region, level and approach. With a grid,
    /// only rows whose bounds are exactly one of its buckets are kept. Rows
    /// without a defined score are left out.
    pub fn from_rows(
        rows: &[ScoreRow],
        level: Level,
        region: &str,
        approach: Approach,
        grid: Option<&BucketGrid>,
    ) -> Result<Self, EstimateError> {
        let mut points: Vec<SeriesPoint> = rows
            .iter()
            .filter(|r| r.level == level && r.region == region && r.approach == approach)
            .filter(|r| grid.is_none_or(|g| g.is_bucket(r.bucket_start, r.bucket_end)))
            .filter_map(|r| {
                r.pss.map(|pss| SeriesPoint {
                    bucket_start: r.bucket_start,
                    pss,
                    npss: r.npss,
                    tweet_count: r.tweet_count,
                })
            })
            .collect();
        points.sort_by_key(|p| p.bucket_start);
        ScoreSeries::new(region, approach, points)
    }

    /// Convenience constructor from `(bucket_start, pss)` pairs.
    pub fn from_pairs(region: &str, approach: Approach, pairs: &[(DateTime<Utc>, f64)]) -> Result<Self, EstimateError> {
        ScoreSeries::new(
            region,
            approach,
            pairs
                .iter()
                .map(|&(bucket_start, pss)| SeriesPoint {
                    bucket_start,
                    pss,
                    npss: None,
                    tweet_count: 0,
                })
                .collect(),
        )
    }
}

/// Inner join of two series on bucket_start.
pub fn join<'a>(a: &'a ScoreSeries, b: &'a ScoreSeries) -> Vec<(&'a SeriesPoint, &'a SeriesPoint)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.points.len() && j < b.points.len() {
        let (pa, pb) = (&a.points[i], &b.points[j]);
        match pa.bucket_start.cmp(&pb.bucket_start) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push((pa, pb));
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Pearson's coefficient over the bucket-aligned scores of two series.
pub fn correlate(a: &ScoreSeries, b: &ScoreSeries) -> Result<f64, EstimateError> {
    let pairs: Vec<(f64, f64)> = join(a, b).into_iter().map(|(x, y)| (x.pss, y.pss)).collect();
    pearson(&pairs)
}

pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64, EstimateError> {
    if pairs.len() < 2 {
        return Err(EstimateError::UndefinedCorrelation(format!(
            "{} aligned point(s), need at least 2",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EstimateError::UndefinedCorrelation("a series has zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
