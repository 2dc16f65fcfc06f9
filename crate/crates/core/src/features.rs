//! Per-node input features: geometry, type, visual crops / RoI bins, fusion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{tap, WINDOW};
use crate::layer::{Raster, Rect};
use crate::nn::{Real, RoiBins, Tape, Var};

/// Which node components feed the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureMode {
    #[serde(rename = "le")]
    Le,
    #[serde(rename = "vf")]
    Vf,
    #[serde(rename = "le+vf")]
    LeVf,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Le => "le",
            FeatureMode::Vf => "vf",
            FeatureMode::LeVf => "le+vf",
        }
    }

    /// Type and geometry embeddings are used.
    pub fn layout(self) -> bool {
        matches!(self, FeatureMode::Le | FeatureMode::LeVf)
    }

    pub fn visual(self) -> bool {
        matches!(self, FeatureMode::Vf | FeatureMode::LeVf)
    }

    pub fn init_dim(self, type_dim: usize, geom_dim: usize, visual_dim: usize) -> usize {
        let mut d = 0;
        if self.layout() {
            d += type_dim + geom_dim;
        }
        if self.visual() {
            d += visual_dim;
        }
        d
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "le" => Ok(FeatureMode::Le),
            "vf" => Ok(FeatureMode::Vf),
            "le+vf" => Ok(FeatureMode::LeVf),
            _ => Err(format!("unknown feature mode `{s}` (expected le, vf or le+vf)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisualMethod {
    /// Resize each layer's pixels and run the CNN per layer.
    Crop,
    /// Run the CNN once per window and max-pool each layer's region.
    Roi,
}

impl VisualMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            VisualMethod::Crop => "crop",
            VisualMethod::Roi => "roi",
        }
    }
}

impl fmt::Display for VisualMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VisualMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "crop" => Ok(VisualMethod::Crop),
            "roi" => Ok(VisualMethod::Roi),
            _ => Err(format!("unknown visual method `{s}` (expected crop or roi)")),
        }
    }
}

/// Window-local rect normalized by the window side.
pub fn geometry_raw(local: &Rect) -> [f64; 4] {
    let s = WINDOW as f64;
    [local.x / s, local.y / s, local.w / s, local.h / s]
}

/// Bilinear resample of `rect` (clipped to the raster) to `size×size`,
/// channel-major, scaled to [0, 1]. Empty regions give zeros.
pub fn crop_resize(img: &Raster, rect: &Rect, size: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; 3 * size * size];
    let bounds = Rect::new(0.0, 0.0, img.width as f64, img.height as f64);
    let r = rect.clip(&bounds);
    if r.w <= 0.0 || r.h <= 0.0 || size == 0 {
        return out;
    }
    // sample positions stay inside the pixels the region touches
    let axis = |start: f64, len: f64, n: usize| -> Vec<(usize, usize, f32)> {
        let lo = start.floor();
        let hi = ((start + len).ceil() - 1.0).max(lo);
        (0..size)
            .map(|j| {
                let s = start + (j as f64 + 0.5) * len / size as f64 - 0.5;
                let (a, b, f) = tap(s.clamp(lo, hi), n);
                (a, b, f)
            })
            .collect()
    };
    let xs = axis(r.x, r.w, img.width);
    let ys = axis(r.y, r.h, img.height);
    let plane = size * size;
    let px = &img.pixels;
    let w = img.width;
    for (i, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (j, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let p = |x: usize, y: usize| px[(y * w + x) * 3 + c] as f32;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                out[c * plane + i * size + j] = (top * (1.0 - fy) + bot * fy) / 255.0;
            }
        }
    }
    out
}

/// Bins of `rect` on a feature map with the given stride. `None` when the
/// rect misses the map entirely.
pub fn roi_bins(rect: &Rect, stride: f64, map_h: usize, map_w: usize, grid: usize) -> Option<RoiBins> {
    let span = |start: f64, len: f64, n: usize| -> Option<Vec<(usize, usize)>> {
        let s = (start / stride).floor();
        let e = ((start + len) / stride).ceil().max(s + 1.0);
        let s = s.max(0.0);
        let e = e.min(n as f64);
        if !(s < e) {
            return None;
        }
        let (s, l) = (s as usize, (e - s) as usize);
        Some(
            (0..grid)
                .map(|p| (s + (p * l) / grid, s + ((p + 1) * l).div_ceil(grid)))
                .collect(),
        )
    };
    Some(RoiBins {
        rows: span(rect.y, rect.h, map_h)?,
        cols: span(rect.x, rect.w, map_w)?,
    })
}

/// Concatenates the present components in the order type, geometry, visual.
pub fn fuse<S: Real>(
    tape: &mut Tape<S>,
    mode: FeatureMode,
    type_v: Option<Var>,
    geom_v: Option<Var>,
    visual_v: Option<Var>,
) -> Result<Var> {
    let missing = |what| Error::MissingComponent {
        mode: mode.as_str(),
        missing: what,
    };
    let mut parts = Vec::with_capacity(3);
    if mode.layout() {
        parts.push(type_v.ok_or_else(|| missing("type"))?);
        parts.push(geom_v.ok_or_else(|| missing("geometry"))?);
    }
    if mode.visual() {
        parts.push(visual_v.ok_or_else(|| missing("visual"))?);
    }
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    tape.concat(&parts)
}
