//! File emitters: country choropleth (KML 2.2), county tile-map (SVG) and
//! per-region line graphs (SVG plus CSV).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, FixedOffset, Utc};
use thiserror::Error;

use crate::estimator::{join, ScoreSeries, SeriesPoint};
use crate::georesolve::{Point, RegionIndex, RegionPolygon};
use crate::store::{self, Approach, Level, ScoreRow, StoreError};

#[derive(Debug, Error)]
pub enum VisError {
    #[error("npss {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("region {0:?} has no polygons in the regions file")]
    MissingRegion(String),
    #[error("line graph for {region:?} needs at least 2 aligned buckets, got {points}")]
    TooFewPoints { region: String, points: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {reason}")]
    Csv { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    /// `#rrggbb` for SVG.
    pub fn hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }

    /// KML colours are `aabbggrr`, alpha first and red last.
    pub fn kml(self) -> String {
        format!("ff{:02x}{:02x}{:02x}", self.2, self.1, self.0)
    }
}

/// Grey used for regions without a defined normalised score.
pub const NA_COLOR: Rgb = Rgb(128, 128, 128);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColorScale {
    pub low: Rgb,
    pub high: Rgb,
}

impl Default for ColorScale {
    fn default() -> Self {
        ColorScale {
            low: Rgb(255, 0, 0),
            high: Rgb(0, 255, 0),
        }
    }
}

impl ColorScale {
    pub fn map(&self, npss: f64) -> Result<Rgb, VisError> {
        if !(0.0..=1.0).contains(&npss) {
            return Err(VisError::OutOfRange(npss));
        }
        let channel = |lo: u8, hi: u8| {
            let v = lo as f64 * (1.0 - npss) + hi as f64 * npss;
            (v + 0.5).floor().clamp(0.0, 255.0) as u8
        };
        Ok(Rgb(
            channel(self.low.0, self.high.0),
            channel(self.low.1, self.high.1),
            channel(self.low.2, self.high.2),
        ))
    }
}

/// Red-to-green colour and its KML string.
pub fn color_for(scale: &ColorScale, npss: f64) -> Result<(Rgb, String), VisError> {
    let rgb = scale.map(npss)?;
    Ok((rgb, rgb.kml()))
}

fn fill_of(scale: &ColorScale, npss: Option<f64>) -> Result<Rgb, VisError> {
    npss.map_or(Ok(NA_COLOR), |n| scale.map(n))
}

pub fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && !matches!(c, '\t' | '\n' | '\r') => {}
            c => out.push(c),
        }
    }
    out
}

fn fmt4(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

fn write_file(path: &Path, content: &str) -> Result<(), VisError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(store::io_err(dir))?;
    }
    fs::write(path, content).map_err(store::io_err(path))?;
    Ok(())
}

fn kml_ring(out: &mut String, ring: &[Point]) {
    out.push_str("<LinearRing><coordinates>");
    for (i, p) in ring.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{},{}", p.lon, p.lat);
    }
    out.push_str("</coordinates></LinearRing>");
}

fn kml_polygon(out: &mut String, poly: &RegionPolygon) {
    out.push_str("<Polygon><outerBoundaryIs>");
    kml_ring(out, poly.exterior());
    out.push_str("</outerBoundaryIs>");
    for hole in poly.holes() {
        out.push_str("<innerBoundaryIs>");
        kml_ring(out, hole);
        out.push_str("</innerBoundaryIs>");
    }
    out.push_str("</Polygon>");
}

/// Choropleth document with one Placemark per row, in row order.
pub fn render_kml(rows: &[ScoreRow], index: &RegionIndex, scale: &ColorScale) -> Result<String, VisError> {
    let mut out = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<kml xmlns=\"http://www.opengis.net/kml/2.2\">\n<Document>\n",
    );
    for row in rows {
        let polygons = index.region_polygons(row.level, &row.region);
        if polygons.is_empty() {
            return Err(VisError::MissingRegion(row.region.clone()));
        }
        let color = fill_of(scale, row.npss)?.kml();
        let _ = write!(
            out,
            "<Placemark>\n<name>{}</name>\n<description>pss {}; npss {}; positive {}; negative {}; tweets {}</description>\n\
             <Style><PolyStyle><color>{}</color></PolyStyle></Style>\n",
            escape_xml(&row.region),
            fmt4(row.pss),
            fmt4(row.npss),
            row.pos_count,
            row.neg_count,
            row.tweet_count,
            color,
        );
        if let [poly] = polygons.as_slice() {
            kml_polygon(&mut out, poly);
        } else {
            out.push_str("<MultiGeometry>");
            for poly in &polygons {
                kml_polygon(&mut out, poly);
            }
            out.push_str("</MultiGeometry>");
        }
        out.push_str("\n</Placemark>\n");
    }
    out.push_str("</Document>\n</kml>\n");
    Ok(out)
}

pub fn emit_kml(rows: &[ScoreRow], index: &RegionIndex, out_path: &Path) -> Result<(), VisError> {
    write_file(out_path, &render_kml(rows, index, &ColorScale::default())?)
}

pub const CANVAS_WIDTH: f64 = 1000.0;
pub const CANVAS_HEIGHT: f64 = 600.0;
pub const MAX_TILE_ASPECT: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TileSpec {
    pub region: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub fill: Rgb,
    pub volume: u64,
    pub npss: f64,
}

/// Rectangle assigned to one region by [`layout_tiles`].
#[derive(Debug, Clone, PartialEq)]
pub struct TileRect {
    pub region: String,
    pub volume: u64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

fn aspect(w: f64, h: f64) -> f64 {
    if w > h {
        w / h
    } else {
        h / w
    }
}

/// Vertical strip layout. Regions are sorted by volume (descending, then by
/// name) and stacked into strips left to right. A strip takes the next region
/// unless that would leave one of its tiles with an aspect ratio above
/// [`MAX_TILE_ASPECT`]. Strip width is its volume share of the canvas width
/// and tile height is the tile's share of the strip, so every tile's area is
/// its volume share of the canvas. Zero-volume regions get no tile.
pub fn layout_tiles(volumes: &[(String, u64)], width: f64, height: f64) -> Vec<TileRect> {
    let mut items: Vec<&(String, u64)> = volumes.iter().filter(|(_, v)| *v > 0).collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let total: u64 = items.iter().map(|(_, v)| v).sum();
    if total == 0 {
        return Vec::new();
    }
    let max_aspect = |strip: &[&(String, u64)]| {
        let sum: u64 = strip.iter().map(|(_, v)| v).sum();
        let w = width * sum as f64 / total as f64;
        strip
            .iter()
            .map(|(_, v)| aspect(w, height * *v as f64 / sum as f64))
            .fold(0.0, f64::max)
    };

    let mut strips: Vec<Vec<&(String, u64)>> = Vec::new();
    let mut current: Vec<&(String, u64)> = Vec::new();
    for item in items {
        if !current.is_empty() {
            current.push(item);
            if max_aspect(&current) <= MAX_TILE_ASPECT {
                continue;
            }
            current.pop();
            strips.push(std::mem::take(&mut current));
        }
        current.push(item);
    }
    strips.push(current);

    let mut tiles = Vec::new();
    let mut x = 0.0;
    let mut used: u64 = 0;
    let n_strips = strips.len();
    for (si, strip) in strips.into_iter().enumerate() {
        let sum: u64 = strip.iter().map(|(_, v)| v).sum();
        used += sum;
        let right = if si + 1 == n_strips {
            width
        } else {
            width * used as f64 / total as f64
        };
        let w = right - x;
        let mut y = 0.0;
        let mut acc: u64 = 0;
        let n = strip.len();
        for (ti, (region, volume)) in strip.into_iter().enumerate() {
            acc += volume;
            let bottom = if ti + 1 == n {
                height
            } else {
                height * acc as f64 / sum as f64
            };
            tiles.push(TileRect {
                region: region.clone(),
                volume: *volume,
                x,
                y,
                w,
                h: bottom - y,
            });
            y = bottom;
        }
        x = right;
    }
    tiles
}

/// Tiles for county rows. Rows without a defined npss or with no tweets are
/// left out.
pub fn tile_specs(rows: &[ScoreRow], scale: &ColorScale) -> Result<Vec<TileSpec>, VisError> {
    let usable: Vec<&ScoreRow> = rows
        .iter()
        .filter(|r| {
            let ok = r.npss.is_some() && r.tweet_count > 0;
            if !ok {
                log::warn!("tile-map: skipping {} (no score or no tweets)", r.region);
            }
            ok
        })
        .collect();
    let volumes: Vec<(String, u64)> = usable.iter().map(|r| (r.region.clone(), r.tweet_count)).collect();
    layout_tiles(&volumes, CANVAS_WIDTH, CANVAS_HEIGHT)
        .into_iter()
        .map(|t| {
            let row = usable
                .iter()
                .find(|r| r.region == t.region)
                .expect("tile comes from a row");
            let npss = row.npss.expect("filtered above");
            Ok(TileSpec {
                fill: scale.map(npss)?,
                region: t.region,
                x: t.x,
                y: t.y,
                w: t.w,
                h: t.h,
                volume: t.volume,
                npss,
            })
        })
        .collect()
}

pub fn render_tilemap(tiles: &[TileSpec]) -> String {
    let mut out = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         width=\"{CANVAS_WIDTH}\" height=\"{CANVAS_HEIGHT}\" viewBox=\"0 0 {CANVAS_WIDTH} {CANVAS_HEIGHT}\">\n"
    );
    for t in tiles {
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#ffffff\"><title>{}: npss {:.4}, volume {}</title></rect>",
            t.x,
            t.y,
            t.w,
            t.h,
            t.fill.hex(),
            escape_xml(&t.region),
            t.npss,
            t.volume
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn emit_tilemap(rows: &[ScoreRow], out_path: &Path) -> Result<Vec<TileSpec>, VisError> {
    let tiles = tile_specs(rows, &ColorScale::default())?;
    write_file(out_path, &render_tilemap(&tiles))?;
    Ok(tiles)
}

pub const LINEGRAPH_CSV_HEADER: [&str; 6] = ["bucket_start", "region", "approach", "pss", "npss", "tweet_count"];

const PLOT_W: f64 = 800.0;
const PLOT_H: f64 = 400.0;
const MARGIN: f64 = 60.0;

fn approach_color(a: Approach) -> &'static str {
    match a {
        Approach::Dictionary => "#1f77b4",
        Approach::MachineLearning => "#d62728",
    }
}

/// Paths written by [`emit_linegraph`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineGraphFiles {
    pub svg: PathBuf,
    pub csv: PathBuf,
}

/// Joined points of both series, one list per approach.
fn aligned<'a>(dict: &'a ScoreSeries, ml: &'a ScoreSeries) -> Vec<(Approach, Vec<&'a SeriesPoint>)> {
    let pairs = join(dict, ml);
    vec![
        (dict.approach, pairs.iter().map(|p| p.0).collect()),
        (ml.approach, pairs.iter().map(|p| p.1).collect()),
    ]
}

pub fn render_linegraph_svg(
    region: &str,
    dict: &ScoreSeries,
    ml: &ScoreSeries,
    tz: FixedOffset,
) -> Result<String, VisError> {
    let lines = aligned(dict, ml);
    let n = lines[0].1.len();
    if n < 2 {
        return Err(VisError::TooFewPoints {
            region: region.to_string(),
            points: n,
        });
    }
    let values = lines.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.pss));
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let x_of = |i: usize| MARGIN + PLOT_W * i as f64 / (n - 1) as f64;
    let y_of = |v: f64| MARGIN + PLOT_H * (hi - v) / (hi - lo);

    let mut out = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<title>{}</title>\n",
        escape_xml(region),
        w = PLOT_W + 2.0 * MARGIN,
        h = PLOT_H + 2.0 * MARGIN,
    );
    let _ = writeln!(
        out,
        "<g stroke=\"#000000\"><line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\"/><line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\"/></g>",
        m = MARGIN,
        b = MARGIN + PLOT_H,
        r = MARGIN + PLOT_W
    );
    out.push_str("<g font-size=\"10\" font-family=\"sans-serif\">\n");
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.4}</text>",
            MARGIN - 5.0,
            y_of(v) + 3.0
        );
    }
    let stride = n.div_ceil(12).max(1);
    for (i, p) in lines[0].1.iter().enumerate().step_by(stride) {
        let local = p.bucket_start.with_timezone(&tz);
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            x_of(i),
            MARGIN + PLOT_H + 15.0,
            local.format("%d %b %H:%M")
        );
    }
    out.push_str("</g>\n");
    for (approach, pts) in &lines {
        let coords: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{},{}", x_of(i), y_of(p.pss)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" data-approach=\"{}\" points=\"{}\"/>",
            approach_color(*approach),
            approach.as_str(),
            coords.join(" ")
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn render_linegraph_csv(region: &str, dict: &ScoreSeries, ml: &ScoreSeries) -> Result<String, VisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| VisError::Csv {
        path: PathBuf::from("<memory>"),
        reason: e.to_string(),
    };
    w.write_record(LINEGRAPH_CSV_HEADER).map_err(csv_err)?;
    for (approach, pts) in aligned(dict, ml) {
        for p in pts {
            w.write_record([
                store::format_instant(&p.bucket_start),
                region.to_string(),
                approach.as_str().to_string(),
                store::format_score(Some(p.pss)),
                store::format_score(p.npss),
                p.tweet_count.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| VisError::Csv {
        path: PathBuf::from("<memory>"),
        reason: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

/// Writes `<prefix>.svg` and `<prefix>.csv`.
pub fn emit_linegraph(
    region: &str,
    dict: &ScoreSeries,
    ml: &ScoreSeries,
    tz: FixedOffset,
    out_prefix: &Path,
) -> Result<LineGraphFiles, VisError> {
    let svg = render_linegraph_svg(region, dict, ml, tz)?;
    let csv = render_linegraph_csv(region, dict, ml)?;
    let files = LineGraphFiles {
        svg: with_suffix(out_prefix, "svg"),
        csv: with_suffix(out_prefix, "csv"),
    };
    write_file(&files.svg, &svg)?;
    write_file(&files.csv, &csv)?;
    Ok(files)
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Reads a line-graph CSV back into one series per (region, approach).
pub fn read_linegraph_csv(path: &Path) -> Result<Vec<ScoreSeries>, VisError> {
    let bad = |reason: String| VisError::Csv {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut out: Vec<ScoreSeries> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != LINEGRAPH_CSV_HEADER.len() {
            return Err(bad(format!("expected {} fields, got {}", LINEGRAPH_CSV_HEADER.len(), rec.len())));
        }
        let bucket_start: DateTime<Utc> = store::parse_instant(&rec[0]).map_err(bad)?;
        let region = rec[1].to_string();
        let approach: Approach = rec[2].parse().map_err(bad)?;
        let pss = store::parse_score(&rec[3])
            .map_err(bad)?
            .ok_or_else(|| bad("pss must be defined".into()))?;
        let npss = store::parse_score(&rec[4]).map_err(bad)?;
        let tweet_count = rec[5].parse().map_err(|e| bad(format!("tweet_count: {e}")))?;
        let point = SeriesPoint {
            bucket_start,
            pss,
            npss,
            tweet_count,
        };
        match out.iter_mut().find(|s| s.region == region && s.approach == approach) {
            Some(s) => s.points.push(point),
            None => out.push(ScoreSeries {
                region,
                approach,
                points: vec![point],
            }),
        }
    }
    Ok(out)
}

/// Rows of one level, bucket and approach, for the map emitters.
pub fn select_rows(
    rows: &[ScoreRow],
    level: Level,
    approach: Approach,
    bucket_start: DateTime<Utc>,
) -> Vec<ScoreRow> {
    rows.iter()
        .filter(|r| r.level == level && r.approach == approach && r.bucket_start == bucket_start)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn color_examples() {
        let s = ColorScale::default();
        assert_eq!(color_for(&s, 0.0).unwrap(), (Rgb(255, 0, 0), "ff0000ff".to_string()));
        assert_eq!(color_for(&s, 1.0).unwrap(), (Rgb(0, 255, 0), "ff00ff00".to_string()));
        assert_eq!(color_for(&s, 0.5).unwrap(), (Rgb(128, 128, 0), "ff008080".to_string()));
        assert!(color_for(&s, 1.01).is_err());
        assert!(color_for(&s, -0.01).is_err());
        assert!(color_for(&s, f64::NAN).is_err());
        assert_eq!(Rgb(0, 255, 0).hex(), "#00ff00");
    }

    #[test]
    fn layout_examples() {
        let t = layout_tiles(&[("a".into(), 900), ("b".into(), 100)], CANVAS_WIDTH, CANVAS_HEIGHT);
        let ratio = (t[0].w * t[0].h) / (t[1].w * t[1].h);
        assert!((ratio - 9.0).abs() < 0.09, "{ratio}");
        let t = layout_tiles(&[("only".into(), 7)], CANVAS_WIDTH, CANVAS_HEIGHT);
        assert_eq!((t[0].x, t[0].y, t[0].w, t[0].h), (0.0, 0.0, CANVAS_WIDTH, CANVAS_HEIGHT));
        assert!(layout_tiles(&[], CANVAS_WIDTH, CANVAS_HEIGHT).is_empty());
    }

    #[test]
    fn strips_stack_similar_volumes() {
        let vols: Vec<(String, u64)> = (0..4).map(|i| (format!("r{i}"), 10)).collect();
        let t = layout_tiles(&vols, CANVAS_WIDTH, CANVAS_HEIGHT);
        // a fourth tile would make the first strip 1000 x 150 (aspect above 4)
        let dims: Vec<(f64, f64)> = t.iter().map(|t| (t.w, t.h)).collect();
        assert_eq!(dims, [(750.0, 200.0), (750.0, 200.0), (750.0, 200.0), (250.0, 600.0)]);
    }

    proptest! {
        #[test]
        fn tiles_partition_canvas(vols in proptest::collection::vec(1u64..10_000, 1..40)) {
            let named: Vec<(String, u64)> = vols.iter().enumerate().map(|(i, v)| (format!("c{i:02}"), *v)).collect();
            let tiles = layout_tiles(&named, CANVAS_WIDTH, CANVAS_HEIGHT);
            prop_assert_eq!(tiles.len(), named.len());
            let total: u64 = vols.iter().sum();
            let area: f64 = tiles.iter().map(|t| t.w * t.h).sum();
            prop_assert!((area - CANVAS_WIDTH * CANVAS_HEIGHT).abs() < 1e-6);
            for t in &tiles {
                prop_assert!(t.w > 0.0 && t.h > 0.0);
                prop_assert!(t.x >= 0.0 && t.y >= 0.0);
                prop_assert!(t.x + t.w <= CANVAS_WIDTH + 1e-9 && t.y + t.h <= CANVAS_HEIGHT + 1e-9);
                let share = t.volume as f64 / total as f64;
                prop_assert!((t.w * t.h / area - share).abs() < 0.01);
            }
        }

        #[test]
        fn color_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let s = ColorScale::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (x, y) = (s.map(lo).unwrap(), s.map(hi).unwrap());
            prop_assert!(x.1 <= y.1 && x.0 >= y.0 && x.2 == 0 && y.2 == 0);
        }
    }
}
