//! GeoJSON region-of-interest parsing and even-odd polygon rasterization.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub type Point = (f64, f64);

/// One annotated polygon in source-level pixel coordinates.
///
/// Rings are stored open: a trailing vertex equal to the first one is dropped
/// on parse, closure is implicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiPolygon {
    pub exterior: Vec<Point>,
    pub label: String,
    #[serde(default)]
    pub holes: Vec<Vec<Point>>,
}

/// Pixel-index bounding box, half-open on both axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }
}

impl RoiPolygon {
    pub fn new(exterior: Vec<Point>, label: impl Into<String>, holes: Vec<Vec<Point>>) -> Result<Self> {
        let label = label.into();
        let exterior = open_ring(exterior);
        validate_ring(&exterior, &label)?;
        let holes = holes
            .into_iter()
            .map(|h| {
                let h = open_ring(h);
                validate_ring(&h, &label).map(|_| h)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            exterior,
            label,
            holes,
        })
    }

    fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    /// Axis-aligned box of the exterior ring, clipped to a `width` x `height`
    /// raster. `None` when the intersection is empty.
    pub fn pixel_bounds(&self, width: u32, height: u32) -> Option<PixelBox> {
        let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
        let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &self.exterior {
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }
        let x0 = min_x.floor().max(0.0);
        let y0 = min_y.floor().max(0.0);
        let x1 = max_x.ceil().min(f64::from(width));
        let y1 = max_y.ceil().min(f64::from(height));
        if x0 >= x1 || y0 >= y1 {
            return None;
        }
        Some(PixelBox {
            x0: x0 as u32,
            y0: y0 as u32,
            x1: x1 as u32,
            y1: y1 as u32,
        })
    }

    /// Edge crossings of the horizontal line `y = py`, sorted ascending.
    /// Holes contribute their own crossings, which is what makes the even-odd
    /// rule exclude them.
    pub fn crossings(&self, py: f64, out: &mut Vec<f64>) {
        out.clear();
        for ring in self.rings() {
            let n = ring.len();
            let mut j = n - 1;
            for i in 0..n {
                let (xi, yi) = ring[i];
                let (xj, yj) = ring[j];
                if (yi > py) != (yj > py) {
                    out.push((xj - xi) * (py - yi) / (yj - yi) + xi);
                }
                j = i;
            }
        }
        out.sort_by(f64::total_cmp);
    }

    /// Fill `row` (one flag per pixel in `x0..x0+row.len()`) with the even-odd
    /// coverage of pixel centres on source row `y`.
    pub fn scanline(&self, y: u32, x0: u32, row: &mut [bool], scratch: &mut Vec<f64>) {
        let py = f64::from(y) + 0.5;
        self.crossings(py, scratch);
        // pointer to the first crossing strictly greater than px
        let mut k = 0;
        for (i, slot) in row.iter_mut().enumerate() {
            let px = f64::from(x0 + i as u32) + 0.5;
            while k < scratch.len() && scratch[k] <= px {
                k += 1;
            }
            *slot = (scratch.len() - k) % 2 == 1;
        }
    }

    /// Even-odd test for a single point.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let mut inside = false;
        for ring in self.rings() {
            let n = ring.len();
            let mut j = n - 1;
            for i in 0..n {
                let (xi, yi) = ring[i];
                let (xj, yj) = ring[j];
                if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                    inside = !inside;
                }
                j = i;
            }
        }
        inside
    }
}

fn open_ring(mut ring: Vec<Point>) -> Vec<Point> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

fn validate_ring(ring: &[Point], label: &str) -> Result<()> {
    if ring.len() < 3 {
        return Err(Error::InvalidGeometry(format!(
            "ring of `{label}` has {} distinct vertices, need at least 3",
            ring.len()
        )));
    }
    if let Some(&(x, y)) = ring
        .iter()
        .find(|(x, y)| !(x.is_finite() && y.is_finite() && *x >= 0.0 && *y >= 0.0))
    {
        return Err(Error::InvalidGeometry(format!(
            "ring of `{label}` has invalid coordinate ({x}, {y})"
        )));
    }
    Ok(())
}

/// Parse a GeoJSON document into polygons, in file order.
///
/// Accepts a FeatureCollection, a single Feature, or a bare geometry. A
/// MultiPolygon yields one `RoiPolygon` per member polygon.
pub fn parse_roi(geojson: &[u8]) -> Result<Vec<RoiPolygon>> {
    let doc: Value = serde_json::from_slice(geojson).map_err(|e| Error::GeoJsonParse {
        offset: byte_offset(geojson, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let mut out = Vec::new();
    match type_of(&doc)? {
        "FeatureCollection" => {
            let features = doc
                .get("features")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::InvalidGeometry("FeatureCollection without `features` array".into()))?;
            for feature in features {
                push_feature(feature, &mut out)?;
            }
        }
        "Feature" => push_feature(&doc, &mut out)?,
        _ => push_geometry(&doc, None, &mut out)?,
    }
    Ok(out)
}

fn type_of(v: &Value) -> Result<&str> {
    v.get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::InvalidGeometry("object without a `type` member".into()))
}

fn push_feature(feature: &Value, out: &mut Vec<RoiPolygon>) -> Result<()> {
    let geometry = feature
        .get("geometry")
        .filter(|g| !g.is_null())
        .ok_or_else(|| Error::InvalidGeometry("feature without geometry".into()))?;
    push_geometry(geometry, feature_label(feature), out)
}

/// QuPath writes `classification` as `{ "name": ..., "color": ... }`; other
/// tools use a plain string. `name` wins when both exist.
fn feature_label(feature: &Value) -> Option<String> {
    let props = feature.get("properties")?;
    if let Some(name) = props.get("name").and_then(Value::as_str) {
        return Some(name.to_owned());
    }
    match props.get("classification")? {
        Value::String(s) => Some(s.clone()),
        Value::Object(o) => o.get("name").and_then(Value::as_str).map(str::to_owned),
        _ => None,
    }
}

fn push_geometry(geometry: &Value, label: Option<String>, out: &mut Vec<RoiPolygon>) -> Result<()> {
    let kind = type_of(geometry)?;
    let coords = geometry.get("coordinates");
    match kind {
        "Polygon" => {
            let rings = parse_rings(coords)?;
            let label = label.unwrap_or_else(|| format!("roi_{}", out.len()));
            out.push(polygon_from_rings(rings, label)?);
        }
        "MultiPolygon" => {
            let polys = coords
                .and_then(Value::as_array)
                .ok_or_else(|| Error::InvalidGeometry("MultiPolygon without coordinates".into()))?;
            let multi = polys.len() > 1;
            for (k, poly) in polys.iter().enumerate() {
                let rings = parse_rings(Some(poly))?;
                let label = match (&label, multi) {
                    (Some(l), false) => l.clone(),
                    (Some(l), true) => format!("{l}_{k}"),
                    (None, _) => format!("roi_{}", out.len()),
                };
                out.push(polygon_from_rings(rings, label)?);
            }
        }
        other => return Err(Error::UnsupportedGeometry(other.to_owned())),
    }
    Ok(())
}

fn polygon_from_rings(mut rings: Vec<Vec<Point>>, label: String) -> Result<RoiPolygon> {
    if rings.is_empty() {
        return Err(Error::InvalidGeometry(format!("polygon `{label}` has no rings")));
    }
    let exterior = rings.remove(0);
    RoiPolygon::new(exterior, label, rings)
}

fn parse_rings(coords: Option<&Value>) -> Result<Vec<Vec<Point>>> {
    let rings = coords
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidGeometry("polygon without coordinate rings".into()))?;
    rings
        .iter()
        .map(|ring| {
            ring.as_array()
                .ok_or_else(|| Error::InvalidGeometry("ring is not an array".into()))?
                .iter()
                .map(|pos| {
                    let pair = pos.as_array().filter(|p| p.len() >= 2);
                    match pair.map(|p| (p[0].as_f64(), p[1].as_f64())) {
                        Some((Some(x), Some(y))) => Ok((x, y)),
                        _ => Err(Error::InvalidGeometry(format!("bad position {pos}"))),
                    }
                })
                .collect()
        })
        .collect()
}

/// serde_json reports 1-based line and column; convert to a byte offset.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start = bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .nth(line.saturating_sub(2))
        .map_or(0, |(i, _)| i + 1);
    let start = if line == 1 { 0 } else { line_start };
    (start + column.saturating_sub(1)).min(bytes.len())
}
