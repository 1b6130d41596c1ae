//! Seeded synthetic corpora and region grids for tests and benchmarks.
//!
//! Positive-marked tweets carry positive lexicon words and a smiley;
//! negative-marked ones carry negative words and a frown. The word lists are
//! chosen so that the packaged fixture lexicon and model read each tweet with
//! its intended polarity.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use crate::georesolve::{Point, RegionIndex};
use crate::store::{self, Level, StoreError, Window};

pub const POSITIVE_WORDS: &[&str] = &[
    "happy", "lovely", "great", "wonderful", "love", "best", "excited", "proud", "nice", "good", "joy",
];
pub const NEGATIVE_WORDS: &[&str] = &["sad", "awful", "terrible", "angry", "cry", "upset", "horrible"];
pub const FILLER_WORDS: &[&str] = &[
    "the", "royal", "baby", "news", "today", "london", "prince", "waiting", "outside", "hospital", "everyone",
    "just", "about", "is", "for", "this", "we", "all", "so", "very",
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown county {0:?}")]
    UnknownRegion(String),
    #[error("could not place a point inside {0:?}")]
    Placement(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("bad quota {0:?} (expected county:pos:neg)")]
    BadQuota(String),
}

/// Requested number of positive- and negative-marked tweets for one county.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quota {
    pub county: String,
    pub positive: u64,
    pub negative: u64,
}

impl std::str::FromStr for Quota {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, SynthError> {
        let bad = || SynthError::BadQuota(s.to_string());
        let mut parts = s.rsplitn(3, ':');
        let negative = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let positive = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let county = parts.next().filter(|c| !c.is_empty()).ok_or_else(bad)?;
        Ok(Quota {
            county: county.to_string(),
            positive,
            negative,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub quotas: Vec<Quota>,
    pub window: Window,
    pub seed: u64,
}

/// Spreads `total` tweets as evenly as possible over every county of the
/// index. Each county's positive share is drawn from [0.3, 0.7].
pub fn uniform_quotas(index: &RegionIndex, total: u64, seed: u64) -> Vec<Quota> {
    let counties = index.names(Level::County);
    let n = counties.len() as u64;
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    counties
        .into_iter()
        .enumerate()
        .map(|(i, county)| {
            let count = total / n + u64::from((i as u64) < total % n);
            let share: f64 = rng.gen_range(0.3..=0.7);
            let positive = (count as f64 * share).round() as u64;
            Quota {
                county: county.to_string(),
                positive,
                negative: count - positive,
            }
        })
        .collect()
}

struct Draft {
    timestamp: DateTime<Utc>,
    point: Point,
    text: String,
}

fn sentence(rng: &mut ChaCha8Rng, positive: bool) -> String {
    let (words, emoticon) = if positive {
        (POSITIVE_WORDS, ":)")
    } else {
        (NEGATIVE_WORDS, ":(")
    };
    let mut parts: Vec<&str> = Vec::new();
    for _ in 0..rng.gen_range(1..=3) {
        parts.push(words.choose(rng).expect("non-empty"));
    }
    for _ in 0..rng.gen_range(1..=4) {
        parts.push(FILLER_WORDS.choose(rng).expect("non-empty"));
    }
    parts.shuffle(rng);
    if rng.gen_bool(0.2) {
        parts.insert(0, "#royalbaby");
    }
    let mut text = parts.join(" ");
    text.push(' ');
    text.push_str(emoticon);
    text
}

fn place(rng: &mut ChaCha8Rng, index: &RegionIndex, county: &str) -> Result<Point, SynthError> {
    let polys: Vec<usize> = index
        .polygons()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.level == Level::County && p.name == county)
        .map(|(i, _)| i)
        .collect();
    if polys.is_empty() {
        return Err(SynthError::UnknownRegion(county.to_string()));
    }
    for _ in 0..10_000 {
        let b = index.bbox(*polys.choose(rng).expect("non-empty"));
        let lon = round6(rng.gen_range(b.min_lon..=b.max_lon));
        let lat = round6(rng.gen_range(b.min_lat..=b.max_lat));
        let p = Point::new(lon, lat);
        if index.resolve(p).is_some_and(|r| r.county == county) {
            return Ok(p);
        }
    }
    Err(SynthError::Placement(county.to_string()))
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Writes a raw corpus (one JSON tweet per line) in timestamp order and
/// returns the number of records.
pub fn gen_corpus(spec: &CorpusSpec, index: &RegionIndex, out: &Path) -> Result<u64, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (start, end) = (spec.window.start.timestamp(), spec.window.end.timestamp());
    if let Some(q) = spec
        .quotas
        .iter()
        .find(|q| index.region_polygons(Level::County, &q.county).is_empty())
    {
        return Err(SynthError::UnknownRegion(q.county.clone()));
    }
    let mut drafts = Vec::new();
    for q in &spec.quotas {
        let marks = std::iter::repeat_n(true, q.positive as usize)
            .chain(std::iter::repeat_n(false, q.negative as usize));
        for positive in marks {
            let secs = rng.gen_range(start..end);
            drafts.push(Draft {
                timestamp: Utc.timestamp_opt(secs, 0).single().expect("inside window"),
                point: place(&mut rng, index, &q.county)?,
                text: sentence(&mut rng, positive),
            });
        }
    }
    drafts.sort_by_key(|d| d.timestamp);

    let file = File::create(out).map_err(store::io_err(out))?;
    let mut w = BufWriter::new(file);
    for (i, d) in drafts.iter().enumerate() {
        let record = json!({
            "id_str": format!("{}", 1_000_000_000u64 + i as u64),
            "created_at": d.timestamp.format("%a %b %d %H:%M:%S +0000 %Y").to_string(),
            "coordinates": {"type": "Point", "coordinates": [d.point.lon, d.point.lat]},
            "text": d.text,
        });
        serde_json::to_writer(&mut w, &record).map_err(|e| store::io_err(out)(e.into()))?;
        w.write_all(b"\n").map_err(store::io_err(out))?;
    }
    w.flush().map_err(store::io_err(out))?;
    Ok(drafts.len() as u64)
}

/// GeoJSON with `counties` square counties laid out in a grid, grouped into
/// `countries` vertical bands of columns, each band also present as a
/// country polygon.
pub fn grid_regions_geojson(counties: usize, countries: usize) -> String {
    let cols = (counties as f64).sqrt().ceil().max(1.0) as usize;
    let rows = counties.div_ceil(cols).max(1);
    let countries = countries.clamp(1, cols);
    let (lon0, lat0, cell) = (-6.0, 50.0, 0.1);
    let band_of = |c: usize| c * countries / cols;
    let square = |x0: f64, y0: f64, x1: f64, y1: f64| json!([[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]]);

    let mut features = Vec::new();
    for b in 0..countries {
        let cs: Vec<usize> = (0..cols).filter(|&c| band_of(c) == b).collect();
        let (first, last) = (cs[0], cs[cs.len() - 1]);
        features.push(json!({
            "type": "Feature",
            "properties": {"region_id": format!("C{b}"), "name": format!("country{b}"), "level": "country", "parent": null},
            "geometry": {"type": "Polygon", "coordinates": square(
                lon0 + first as f64 * cell, lat0,
                lon0 + (last + 1) as f64 * cell, lat0 + rows as f64 * cell)},
        }));
    }
    for k in 0..counties {
        let (r, c) = (k / cols, k % cols);
        let (x0, y0) = (lon0 + c as f64 * cell, lat0 + r as f64 * cell);
        features.push(json!({
            "type": "Feature",
            "properties": {"region_id": format!("K{k:03}"), "name": format!("county{k:03}"), "level": "county", "parent": format!("country{}", band_of(c))},
            "geometry": {"type": "Polygon", "coordinates": square(x0, y0, x0 + cell, y0 + cell)},
        }));
    }
    serde_json::to_string_pretty(&json!({"type": "FeatureCollection", "features": features})).expect("json value")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_record;
    use tempfile::tempdir;

    #[test]
    fn grid_index_is_valid() {
        let index = RegionIndex::parse(&grid_regions_geojson(100, 4)).unwrap();
        assert_eq!(index.names(Level::County).len(), 100);
        assert_eq!(index.names(Level::Country).len(), 4);
        let r = index.resolve(Point::new(-5.95, 50.05)).unwrap();
        assert_eq!((r.country.as_str(), r.county.as_str()), ("country0", "county000"));
    }

    #[test]
    fn quotas_parse() {
        let q: Quota = "happycounty:4:1".parse().unwrap();
        assert_eq!((q.county.as_str(), q.positive, q.negative), ("happycounty", 4, 1));
        assert!("x:1".parse::<Quota>().is_err());
        assert!(":1:2".parse::<Quota>().is_err());
    }

    #[test]
    fn corpus_is_seeded_and_placed() {
        let index = RegionIndex::parse(&grid_regions_geojson(9, 2)).unwrap();
        let spec = CorpusSpec {
            quotas: uniform_quotas(&index, 50, 7),
            window: Window::new(
                Utc.with_ymd_and_hms(2013, 7, 21, 0, 0, 0).unwrap(),
                Utc.with_ymd_and_hms(2013, 7, 24, 0, 0, 0).unwrap(),
            )
            .unwrap(),
            seed: 7,
        };
        let dir = tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        assert_eq!(gen_corpus(&spec, &index, &a).unwrap(), 50);
        gen_corpus(&spec, &index, &b).unwrap();
        let bytes = std::fs::read(&a).unwrap();
        assert_eq!(bytes, std::fs::read(&b).unwrap());
        for line in bytes.split(|&c| c == b'\n').filter(|l| !l.is_empty()) {
            let c = parse_record(line).unwrap();
            assert!(spec.window.contains(&c.timestamp));
            assert!(index.resolve(Point::new(c.lon, c.lat)).is_some());
        }
    }

    #[test]
    fn unknown_county_is_an_error() {
        let index = RegionIndex::parse(&grid_regions_geojson(4, 1)).unwrap();
        let spec = CorpusSpec {
            quotas: vec![Quota {
                county: "atlantis".into(),
                positive: 1,
                negative: 0,
            }],
            window: Window::all(),
            seed: 1,
        };
        let dir = tempdir().unwrap();
        assert!(matches!(
            gen_corpus(&spec, &index, &dir.path().join("x")),
            Err(SynthError::UnknownRegion(_))
        ));
    }
}
