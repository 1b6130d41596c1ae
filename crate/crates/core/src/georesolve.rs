//! Point-to-region resolution over a country/county polygon hierarchy.
//!
//! Regions come from a GeoJSON `FeatureCollection`. Each feature carries the
//! properties `region_id`, `name`, `level` (`country` or `county`) and
//! `parent` (the country name, empty for countries), with `Polygon` or
//! `MultiPolygon` geometry in (lon, lat) order.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use thiserror::Error;

use crate::store::Level;

/// County name used for points inside a country but outside all its counties.
pub const UNASSIGNED: &str = "unassigned";

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("cannot read regions file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("regions file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("regions file must be a GeoJSON FeatureCollection")]
    NotFeatureCollection,
    #[error("feature {feature}: {reason}")]
    Feature { feature: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub lon: f64,
    pub lat: f64,
}

impl Point {
    pub fn new(lon: f64, lat: f64) -> Self {
        Point { lon, lat }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BoundingBox {
    fn of(ring: &[Point]) -> Self {
        ring.iter().fold(
            BoundingBox {
                min_lon: f64::INFINITY,
                min_lat: f64::INFINITY,
                max_lon: f64::NEG_INFINITY,
                max_lat: f64::NEG_INFINITY,
            },
            |b, p| BoundingBox {
                min_lon: b.min_lon.min(p.lon),
                min_lat: b.min_lat.min(p.lat),
                max_lon: b.max_lon.max(p.lon),
                max_lat: b.max_lat.max(p.lat),
            },
        )
    }

    pub fn contains(&self, p: Point) -> bool {
        p.lon >= self.min_lon && p.lon <= self.max_lon && p.lat >= self.min_lat && p.lat <= self.max_lat
    }
}

/// One polygon: exterior ring first, then holes. Rings are closed.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPolygon {
    pub region_id: String,
    pub name: String,
    pub level: Level,
    pub parent: String,
    pub rings: Vec<Vec<Point>>,
}

impl RegionPolygon {
    pub fn exterior(&self) -> &[Point] {
        &self.rings[0]
    }

    pub fn holes(&self) -> &[Vec<Point>] {
        &self.rings[1..]
    }
}

/// Even-odd crossing test with a horizontal ray toward +lon.
///
/// An edge is crossed when the point's latitude lies in
/// `[min(y1, y2), max(y1, y2))` and the crossing lies strictly east of the
/// point. Two polygons sharing an edge therefore never both claim a point on
/// that edge.
pub fn ring_contains(ring: &[Point], p: Point) -> bool {
    let mut inside = false;
    for edge in ring.windows(2) {
        let (a, b) = (edge[0], edge[1]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) / (b.lat - a.lat) * (b.lon - a.lon);
            if x > p.lon {
                inside = !inside;
            }
        }
    }
    inside
}

pub fn contains(polygon: &RegionPolygon, p: Point) -> bool {
    ring_contains(polygon.exterior(), p) && polygon.holes().iter().all(|h| !ring_contains(h, p))
}

/// Immutable polygon index in file order.
#[derive(Debug, Clone)]
pub struct RegionIndex {
    polygons: Vec<RegionPolygon>,
    bboxes: Vec<BoundingBox>,
    county_order: Vec<usize>,
    country_order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Resolution {
    pub country: String,
    pub county: String,
}

impl RegionIndex {
    pub fn from_polygons(polygons: Vec<RegionPolygon>) -> Result<Self, GeoError> {
        let countries: HashSet<&str> = polygons
            .iter()
            .filter(|p| p.level == Level::Country)
            .map(|p| p.name.as_str())
            .collect();
        for p in &polygons {
            validate_polygon(p, &countries).map_err(|reason| GeoError::Feature {
                feature: p.region_id.clone(),
                reason,
            })?;
        }
        let bboxes = polygons.iter().map(|p| BoundingBox::of(p.exterior())).collect();
        let (county_order, country_order) = (0..polygons.len())
            .partition(|&i| polygons[i].level == Level::County);
        Ok(RegionIndex {
            polygons,
            bboxes,
            county_order,
            country_order,
        })
    }

    pub fn parse(geojson: &str) -> Result<Self, GeoError> {
        let doc: Value = serde_json::from_str(geojson)?;
        if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
            return Err(GeoError::NotFeatureCollection);
        }
        let features = doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or(GeoError::NotFeatureCollection)?;
        let mut polygons = Vec::new();
        for (i, feature) in features.iter().enumerate() {
            polygons.extend(parse_feature(i, feature)?);
        }
        RegionIndex::from_polygons(polygons)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeoError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| GeoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RegionIndex::parse(&text)
    }

    pub fn polygons(&self) -> &[RegionPolygon] {
        &self.polygons
    }

    pub fn bbox(&self, i: usize) -> BoundingBox {
        self.bboxes[i]
    }

    /// Distinct region names at `level`, in file order of first appearance.
    pub fn names(&self, level: Level) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.polygons
            .iter()
            .filter(|p| p.level == level && seen.insert(p.name.as_str()))
            .map(|p| p.name.as_str())
            .collect()
    }

    /// All polygons of the named region.
    pub fn region_polygons(&self, level: Level, name: &str) -> Vec<&RegionPolygon> {
        self.polygons
            .iter()
            .filter(|p| p.level == level && p.name == name)
            .collect()
    }

    /// Parent country of each county.
    pub fn county_parents(&self) -> HashMap<&str, &str> {
        self.polygons
            .iter()
            .filter(|p| p.level == Level::County)
            .map(|p| (p.name.as_str(), p.parent.as_str()))
            .collect()
    }

    fn first_containing(&self, order: &[usize], p: Point) -> Option<&RegionPolygon> {
        order
            .iter()
            .copied()
            .find(|&i| self.bboxes[i].contains(p) && contains(&self.polygons[i], p))
            .map(|i| &self.polygons[i])
    }

    /// Counties are tested first, in file order; the country is the county's
    /// parent. Points in no county fall back to the first containing country
    /// with county [`UNASSIGNED`].
    pub fn resolve(&self, p: Point) -> Option<Resolution> {
        if let Some(county) = self.first_containing(&self.county_order, p) {
            return Some(Resolution {
                country: county.parent.clone(),
                county: county.name.clone(),
            });
        }
        self.first_containing(&self.country_order, p).map(|c| Resolution {
            country: c.name.clone(),
            county: UNASSIGNED.to_string(),
        })
    }
}

fn validate_polygon(p: &RegionPolygon, countries: &HashSet<&str>) -> Result<(), String> {
    if p.name.is_empty() {
        return Err("empty name".into());
    }
    if p.rings.is_empty() {
        return Err("polygon without rings".into());
    }
    for ring in &p.rings {
        if ring.len() < 4 {
            return Err(format!("ring has {} vertices, need at least 4", ring.len()));
        }
        if ring.first() != ring.last() {
            return Err("ring is not closed".into());
        }
        if ring.iter().any(|v| !v.lon.is_finite() || !v.lat.is_finite()) {
            return Err("non-finite coordinate".into());
        }
    }
    match p.level {
        Level::Country if !p.parent.is_empty() => Err("a country cannot have a parent".into()),
        Level::County if !countries.contains(p.parent.as_str()) => {
            Err(format!("county parent {:?} is not a known country", p.parent))
        }
        _ => Ok(()),
    }
}

fn parse_feature(index: usize, feature: &Value) -> Result<Vec<RegionPolygon>, GeoError> {
    let props = feature.get("properties").and_then(Value::as_object);
    let label = props
        .and_then(|p| p.get("region_id").or_else(|| p.get("name")))
        .and_then(Value::as_str)
        .map_or_else(|| format!("#{index}"), str::to_string);
    let fail = |reason: String| GeoError::Feature {
        feature: label.clone(),
        reason,
    };
    let props = props.ok_or_else(|| fail("missing properties".into()))?;
    let prop = |key: &str| -> Result<String, GeoError> {
        match props.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Null) if key == "parent" => Ok(String::new()),
            Some(_) => Err(fail(format!("property {key:?} must be a string"))),
            None => Err(fail(format!("missing property {key:?}"))),
        }
    };
    let region_id = prop("region_id")?;
    let name = prop("name")?;
    let level: Level = prop("level")?.parse().map_err(fail)?;
    let parent = prop("parent")?;

    let geometry = feature.get("geometry").ok_or_else(|| fail("missing geometry".into()))?;
    let coords = geometry
        .get("coordinates")
        .ok_or_else(|| fail("geometry without coordinates".into()))?;
    let polygons = match geometry.get("type").and_then(Value::as_str) {
        Some("Polygon") => vec![parse_rings(coords).map_err(fail)?],
        Some("MultiPolygon") => coords
            .as_array()
            .ok_or_else(|| fail("MultiPolygon coordinates must be an array".into()))?
            .iter()
            .map(parse_rings)
            .collect::<Result<Vec<_>, _>>()
            .map_err(fail)?,
        other => return Err(fail(format!("unsupported geometry type {other:?}"))),
    };
    Ok(polygons
        .into_iter()
        .map(|rings| RegionPolygon {
            region_id: region_id.clone(),
            name: name.clone(),
            level,
            parent: parent.clone(),
            rings,
        })
        .collect())
}

fn parse_rings(v: &Value) -> Result<Vec<Vec<Point>>, String> {
    let rings = v.as_array().ok_or("polygon coordinates must be an array of rings")?;
    rings
        .iter()
        .map(|ring| {
            ring.as_array()
                .ok_or_else(|| "ring must be an array of positions".to_string())?
                .iter()
                .map(|pos| match pos.as_array().map(Vec::as_slice) {
                    Some([lon, lat, ..]) => match (lon.as_f64(), lat.as_f64()) {
                        (Some(lon), Some(lat)) => Ok(Point::new(lon, lat)),
                        _ => Err("position must hold numbers".to_string()),
                    },
                    _ => Err("position must be [lon, lat]".to_string()),
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point> {
        vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
            Point::new(x0, y0),
        ]
    }

    fn poly(name: &str, level: Level, parent: &str, rings: Vec<Vec<Point>>) -> RegionPolygon {
        RegionPolygon {
            region_id: name.into(),
            name: name.into(),
            level,
            parent: parent.into(),
            rings,
        }
    }

    fn feature(name: &str, level: &str, parent: &str, geometry: &str) -> String {
        format!(
            r#"{{"type":"Feature","properties":{{"region_id":"{name}","name":"{name}","level":"{level}","parent":"{parent}"}},"geometry":{geometry}}}"#
        )
    }

    fn collection(features: &[String]) -> String {
        format!(r#"{{"type":"FeatureCollection","features":[{}]}}"#, features.join(","))
    }

    const COUNTRY: &str = r#"{"type":"Polygon","coordinates":[[[0,0],[3,0],[3,2],[0,2],[0,0]]]}"#;
    const LEFT: &str = r#"{"type":"Polygon","coordinates":[[[0.5,0.5],[1.5,0.5],[1.5,1.5],[0.5,1.5],[0.5,0.5]]]}"#;
    const RIGHT: &str = r#"{"type":"Polygon","coordinates":[[[1.5,0.5],[2.5,0.5],[2.5,1.5],[1.5,1.5],[1.5,0.5]]]}"#;

    fn two_counties() -> RegionIndex {
        RegionIndex::parse(&collection(&[
            feature("mycountry", "country", "", COUNTRY),
            feature("happycounty", "county", "mycountry", LEFT),
            feature("sadcounty", "county", "mycountry", RIGHT),
        ]))
        .unwrap()
    }

    #[test]
    fn unit_square_containment() {
        let p = poly("u", Level::Country, "", vec![square(0.0, 0.0, 1.0, 1.0)]);
        assert!(contains(&p, Point::new(0.5, 0.5)));
        assert!(!contains(&p, Point::new(2.0, 2.0)));
    }

    #[test]
    fn hole_excludes_points() {
        let p = poly(
            "h",
            Level::Country,
            "",
            vec![square(0.0, 0.0, 4.0, 4.0), square(1.0, 1.0, 3.0, 3.0)],
        );
        assert!(!contains(&p, Point::new(2.0, 2.0)));
        assert!(contains(&p, Point::new(0.5, 2.0)));
    }

    #[test]
    fn loads_hierarchy() {
        let idx = two_counties();
        assert_eq!(idx.names(Level::Country), ["mycountry"]);
        assert_eq!(idx.names(Level::County), ["happycounty", "sadcounty"]);
        assert_eq!(idx.county_parents()["sadcounty"], "mycountry");
    }

    #[test]
    fn unknown_parent_is_rejected() {
        let err = RegionIndex::parse(&collection(&[
            feature("mycountry", "country", "", COUNTRY),
            feature("lost", "county", "nowhere", LEFT),
        ]))
        .unwrap_err();
        assert!(matches!(err, GeoError::Feature { ref feature, .. } if feature == "lost"), "{err}");
    }

    #[test]
    fn unclosed_ring_and_missing_property_are_rejected() {
        let open = r#"{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1]]]}"#;
        assert!(RegionIndex::parse(&collection(&[feature("c", "country", "", open)])).is_err());
        let no_level = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"region_id":"x","name":"x","parent":""},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]}}]}"#;
        let err = RegionIndex::parse(no_level).unwrap_err();
        assert!(err.to_string().contains("level"), "{err}");
    }

    #[test]
    fn multipolygon_expands_to_parts() {
        let mp = r#"{"type":"MultiPolygon","coordinates":[[[[0,0],[1,0],[1,1],[0,1],[0,0]]],[[[5,5],[6,5],[6,6],[5,6],[5,5]]]]}"#;
        let idx = RegionIndex::parse(&collection(&[feature("islands", "country", "", mp)])).unwrap();
        assert_eq!(idx.polygons().len(), 2);
        assert_eq!(idx.names(Level::Country), ["islands"]);
        assert_eq!(idx.resolve(Point::new(5.5, 5.5)).unwrap().country, "islands");
    }

    #[test]
    fn resolve_rules() {
        let idx = two_counties();
        let r = idx.resolve(Point::new(1.0, 1.0)).unwrap();
        assert_eq!((r.country.as_str(), r.county.as_str()), ("mycountry", "happycounty"));
        let r = idx.resolve(Point::new(0.2, 1.9)).unwrap();
        assert_eq!((r.country.as_str(), r.county.as_str()), ("mycountry", UNASSIGNED));
        assert_eq!(idx.resolve(Point::new(10.0, 10.0)), None);
    }

    #[test]
    fn shared_border_goes_to_exactly_one_county() {
        let idx = two_counties();
        for lat in [0.5, 0.75, 1.0, 1.25] {
            let p = Point::new(1.5, lat);
            let owners = idx
                .polygons()
                .iter()
                .filter(|poly| poly.level == Level::County && contains(poly, p))
                .count();
            assert_eq!(owners, 1, "lat {lat}");
        }
    }
}
