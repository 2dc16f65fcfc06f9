//! Design-draft domain types and the manifest / PPM readers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerType {
    Rectangle,
    Oval,
    Path,
    Text,
    Bitmap,
    Group,
    Symbol,
    /// The virtual root of a window; never read from a manifest.
    Canvas,
    Unknown,
}

impl LayerType {
    pub const ALL: [LayerType; 9] = [
        LayerType::Rectangle,
        LayerType::Oval,
        LayerType::Path,
        LayerType::Text,
        LayerType::Bitmap,
        LayerType::Group,
        LayerType::Symbol,
        LayerType::Canvas,
        LayerType::Unknown,
    ];
    pub const COUNT: usize = Self::ALL.len();

    /// Row of this type in the type-embedding matrix.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerType::Rectangle => "rectangle",
            LayerType::Oval => "oval",
            LayerType::Path => "path",
            LayerType::Text => "text",
            LayerType::Bitmap => "bitmap",
            LayerType::Group => "group",
            LayerType::Symbol => "symbol",
            LayerType::Canvas => "canvas",
            LayerType::Unknown => "unknown",
        }
    }

    /// Maps a manifest string; anything unrecognized becomes `Unknown`.
    /// Returns `None` only for the reserved `canvas`.
    pub fn from_manifest(s: &str) -> Option<Self> {
        let t = Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .unwrap_or(LayerType::Unknown);
        (t != LayerType::Canvas).then_some(t)
    }
}

impl fmt::Display for LayerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned rectangle, top-left origin.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Boundary-inclusive: `other` lies inside `self`.
    pub fn contains(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    /// Closed-interval overlap test; touching edges count.
    pub fn intersects(&self, other: &Rect) -> bool {
        self.x <= other.right()
            && other.x <= self.right()
            && self.y <= other.bottom()
            && other.y <= self.bottom()
    }

    /// Overlap with `other`, or a zero-sized rect when they are disjoint.
    pub fn clip(&self, other: &Rect) -> Rect {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        Rect::new(x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0))
    }

    pub fn union(&self, other: &Rect) -> Rect {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.right().max(other.right());
        let y1 = self.bottom().max(other.bottom());
        Rect::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn scaled(&self, s: f64) -> Rect {
        Rect::new(self.x * s, self.y * s, self.w * s, self.h * s)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Rect {
        Rect::new(self.x + dx, self.y + dy, self.w, self.h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNode {
    pub id: String,
    pub name: String,
    pub kind: LayerType,
    pub rect: Rect,
    /// Pre-order position in the manifest.
    pub z: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub fragmented: bool,
    pub group: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Artboard {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub layers: Vec<LayerNode>,
    pub labels: Option<BTreeMap<String, Label>>,
}

impl Artboard {
    pub fn rect(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width, self.height)
    }

    pub fn label(&self, id: &str) -> Option<&Label> {
        self.labels.as_ref()?.get(id)
    }

    /// Checks the id, bounds and label invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.width.is_finite() && self.width > 0.0 && self.height.is_finite() && self.height > 0.0) {
            return Err(Error::Manifest(format!(
                "artboard size must be positive and finite, got {}×{}",
                self.width, self.height
            )));
        }
        let bounds = self.rect();
        let mut seen = HashSet::new();
        for (i, l) in self.layers.iter().enumerate() {
            if !seen.insert(l.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate layer id `{}` at layers[{i}]", l.id)));
            }
            if l.kind == LayerType::Canvas {
                return Err(Error::Manifest(format!("layers[{i}] (`{}`): type `canvas` is reserved", l.id)));
            }
            let r = l.rect;
            if ![r.x, r.y, r.w, r.h].iter().all(|v| v.is_finite()) || r.w < 0.0 || r.h < 0.0 {
                return Err(Error::Manifest(format!(
                    "layers[{i}] (`{}`): invalid rect {:?}",
                    l.id, r
                )));
            }
            if !bounds.intersects(&r) {
                return Err(Error::Manifest(format!(
                    "layers[{i}] (`{}`) lies entirely outside the artboard",
                    l.id
                )));
            }
            if l.z != i {
                return Err(Error::Manifest(format!("layers[{i}] (`{}`) has z {}", l.id, l.z)));
            }
        }
        if let Some(labels) = &self.labels {
            let mut groups: HashMap<&str, Vec<&str>> = HashMap::new();
            for (id, label) in labels {
                if !seen.contains(id.as_str()) {
                    return Err(Error::Manifest(format!("unknown label id `{id}`")));
                }
                if let Some(g) = &label.group {
                    if !label.fragmented {
                        return Err(Error::Manifest(format!(
                            "label `{id}`: member of group `{g}` but not fragmented"
                        )));
                    }
                    groups.entry(g.as_str()).or_default().push(id);
                }
            }
            let mut sizes: Vec<_> = groups.into_iter().collect();
            sizes.sort();
            if let Some((g, m)) = sizes.iter().find(|(_, m)| m.len() < 2) {
                return Err(Error::Manifest(format!(
                    "group `{g}` has a single member `{}`",
                    m[0]
                )));
            }
        }
        Ok(())
    }

    /// Manifest JSON; `parse_artboard` of the result reproduces `self`.
    pub fn to_manifest(&self) -> Value {
        let layers: Vec<Value> = self
            .layers
            .iter()
            .map(|l| {
                serde_json::json!({
                    "id": l.id,
                    "name": l.name,
                    "type": l.kind.as_str(),
                    "x": l.rect.x,
                    "y": l.rect.y,
                    "w": l.rect.w,
                    "h": l.rect.h,
                })
            })
            .collect();
        let mut m = Map::new();
        m.insert("artboard_id".into(), Value::from(self.id.clone()));
        m.insert("width".into(), Value::from(self.width));
        m.insert("height".into(), Value::from(self.height));
        m.insert("layers".into(), Value::Array(layers));
        if let Some(labels) = &self.labels {
            m.insert("labels".into(), serde_json::to_value(labels).expect("labels serialize"));
        }
        Value::Object(m)
    }

    pub fn to_manifest_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(&self.to_manifest()).expect("manifest serializes");
        out.push(b'\n');
        out
    }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, at: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::Manifest(format!("{at}: missing required field `{key}`")))
}

fn str_field(obj: &Map<String, Value>, key: &str, at: &str) -> Result<String> {
    field(obj, key, at)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Manifest(format!("{at}.{key}: expected a string")))
}

fn num_field(obj: &Map<String, Value>, key: &str, at: &str) -> Result<f64> {
    field(obj, key, at)?
        .as_f64()
        .ok_or_else(|| Error::Manifest(format!("{at}.{key}: expected a number")))
}

/// Parses and validates an artboard manifest.
pub fn parse_artboard(bytes: &[u8]) -> Result<Artboard> {
    let root: Value =
        serde_json::from_slice(bytes).map_err(|e| Error::Manifest(format!("malformed JSON: {e}")))?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::Manifest("top level must be an object".into()))?;
    let id = str_field(obj, "artboard_id", "$")?;
    let width = num_field(obj, "width", "$")?;
    let height = num_field(obj, "height", "$")?;
    let raw_layers = field(obj, "layers", "$")?
        .as_array()
        .ok_or_else(|| Error::Manifest("$.layers: expected an array".into()))?;

    let mut layers = Vec::with_capacity(raw_layers.len());
    for (i, raw) in raw_layers.iter().enumerate() {
        let at = format!("layers[{i}]");
        let l = raw
            .as_object()
            .ok_or_else(|| Error::Manifest(format!("{at}: expected an object")))?;
        let lid = str_field(l, "id", &at)?;
        let type_str = str_field(l, "type", &at)?;
        let kind = LayerType::from_manifest(&type_str).ok_or_else(|| {
            Error::Manifest(format!("{at} (`{lid}`): type `canvas` is reserved"))
        })?;
        layers.push(LayerNode {
            name: str_field(l, "name", &at)?,
            kind,
            rect: Rect::new(
                num_field(l, "x", &at)?,
                num_field(l, "y", &at)?,
                num_field(l, "w", &at)?,
                num_field(l, "h", &at)?,
            ),
            z: i,
            id: lid,
        });
    }

    let labels = match obj.get("labels") {
        None | Some(Value::Null) => None,
        Some(Value::Object(m)) => {
            let mut out = BTreeMap::new();
            for (lid, v) in m {
                let at = format!("labels.{lid}");
                let o = v
                    .as_object()
                    .ok_or_else(|| Error::Manifest(format!("{at}: expected an object")))?;
                let fragmented = field(o, "fragmented", &at)?
                    .as_bool()
                    .ok_or_else(|| Error::Manifest(format!("{at}.fragmented: expected a boolean")))?;
                let group = match o.get("group") {
                    None | Some(Value::Null) => None,
                    Some(Value::String(s)) => Some(s.clone()),
                    Some(_) => {
                        return Err(Error::Manifest(format!("{at}.group: expected a string or null")))
                    }
                };
                out.insert(lid.clone(), Label { fragmented, group });
            }
            Some(out)
        }
        Some(_) => return Err(Error::Manifest("$.labels: expected an object".into())),
    };

    let a = Artboard {
        id,
        width,
        height,
        layers,
        labels,
    };
    a.validate()?;
    Ok(a)
}

/// Row-major 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub type Screenshot = Raster;

impl Raster {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Decodes a binary P6 PPM (maxval 255).
pub fn decode_ppm(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::Screenshot("not a binary PPM (expected magic `P6`)".into()));
    }
    let mut pos = 2;
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
        // whitespace and `#` comments between tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Screenshot(format!("header: missing {name}")));
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Screenshot(format!("header: {name} out of range")))?;
    }
    let [width, height, maxval] = header;
    if maxval != 255 {
        return Err(Error::Screenshot(format!("maxval {maxval} unsupported (expected 255)")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Screenshot("header: missing separator before pixel data".into()));
    }
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::Screenshot("dimensions overflow".into()))?;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(Error::Screenshot(format!(
            "truncated pixel data: {} of {need} bytes",
            data.len()
        )));
    }
    Ok(Raster {
        width,
        height,
        pixels: data[..need].to_vec(),
    })
}

/// Decodes a screenshot and checks it against the artboard size.
pub fn load_screenshot(bytes: &[u8], artboard: &Artboard) -> Result<Screenshot> {
    let img = decode_ppm(bytes)?;
    let (ew, eh) = (artboard.width.round(), artboard.height.round());
    if img.width as f64 != ew || img.height as f64 != eh {
        return Err(Error::Screenshot(format!(
            "dimension mismatch: raster {}×{} vs artboard {ew}×{eh}",
            img.width, img.height
        )));
    }
    Ok(img)
}
