use crate::error::{Error, Result};
use crate::layer::{Artboard, Raster, Rect};

/// Side of a square window in scaled pixels.
pub const WINDOW: usize = 750;
const WINDOW_F: f64 = WINDOW as f64;

/// One 750-tall strip of the scaled artboard.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub index: usize,
    /// Layer indices into `Artboard::layers`, in z order.
    pub members: Vec<usize>,
}

impl Window {
    pub fn origin_y(&self) -> f64 {
        (self.index * WINDOW) as f64
    }

    pub fn rect(&self) -> Rect {
        Rect::new(0.0, self.origin_y(), WINDOW_F, WINDOW_F)
    }

    /// Maps a scaled artboard rect into window-local coordinates.
    pub fn local(&self, scaled: &Rect) -> Rect {
        scaled.translated(0.0, -self.origin_y())
    }
}

/// The artboard scaled to width 750, with per-layer scaled rects and the
/// window partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Windowed {
    pub scale: f64,
    /// Scaled, unpadded height.
    pub scaled_height: f64,
    pub rects: Vec<Rect>,
    pub windows: Vec<Window>,
}

/// Scales the geometry and assigns each layer to the window containing its
/// center. Boundary centers go to the lower window; centers above the first
/// or below the last strip are clamped so that every layer has a window.
pub fn window_layout(artboard: &Artboard) -> Result<Windowed> {
    if !(artboard.width.is_finite() && artboard.width > 0.0) {
        return Err(Error::Window(format!(
            "artboard width must be positive, got {}",
            artboard.width
        )));
    }
    let scale = WINDOW_F / artboard.width;
    let scaled_height = artboard.height.max(0.0) * scale;
    let count = ((scaled_height / WINDOW_F).ceil() as usize).max(1);
    let mut windows: Vec<Window> = (0..count)
        .map(|index| Window {
            index,
            members: Vec::new(),
        })
        .collect();
    let rects: Vec<Rect> = artboard.layers.iter().map(|l| l.rect.scaled(scale)).collect();
    for (i, r) in rects.iter().enumerate() {
        windows[window_of(r.center().1, count)].members.push(i);
    }
    Ok(Windowed {
        scale,
        scaled_height,
        rects,
        windows,
    })
}

/// Window index for a scaled center y.
pub fn window_of(cy: f64, count: usize) -> usize {
    let k = (cy / WINDOW_F).floor();
    if k.is_nan() || k < 0.0 {
        0
    } else {
        (k as usize).min(count - 1)
    }
}

impl Windowed {
    /// The window's 750×750 raster: bilinear resample of the screenshot,
    /// black below the scaled artboard.
    pub fn patch(&self, shot: &Raster, window: &Window) -> Raster {
        let mut out = Raster::filled(WINDOW, WINDOW, [0, 0, 0]);
        if shot.width == 0 || shot.height == 0 {
            return out;
        }
        let content_rows = (shot.height as f64 * self.scale).round() as usize;
        let inv = 1.0 / self.scale;
        // column taps are shared by every row
        let taps: Vec<(usize, usize, f32)> = (0..WINDOW)
            .map(|j| tap((j as f64 + 0.5) * inv - 0.5, shot.width))
            .collect();
        for i in 0..WINDOW {
            let gy = window.index * WINDOW + i;
            if gy >= content_rows {
                break;
            }
            let (y0, y1, fy) = tap((gy as f64 + 0.5) * inv - 0.5, shot.height);
            let r0 = &shot.pixels[y0 * shot.width * 3..(y0 + 1) * shot.width * 3];
            let r1 = &shot.pixels[y1 * shot.width * 3..(y1 + 1) * shot.width * 3];
            let dst = &mut out.pixels[i * WINDOW * 3..(i + 1) * WINDOW * 3];
            for (j, &(x0, x1, fx)) in taps.iter().enumerate() {
                for c in 0..3 {
                    let top = r0[x0 * 3 + c] as f32 * (1.0 - fx) + r0[x1 * 3 + c] as f32 * fx;
                    let bot = r1[x0 * 3 + c] as f32 * (1.0 - fx) + r1[x1 * 3 + c] as f32 * fx;
                    dst[j * 3 + c] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        out
    }
}

/// Bilinear taps for source coordinate `s` on an axis of length `n`.
pub(crate) fn tap(s: f64, n: usize) -> (usize, usize, f32) {
    let s = s.clamp(0.0, (n - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{LayerNode, LayerType};
    use proptest::prelude::*;

    fn board(w: f64, h: f64, rects: &[Rect]) -> Artboard {
        Artboard {
            id: "a".into(),
            width: w,
            height: h,
            layers: rects
                .iter()
                .enumerate()
                .map(|(i, r)| LayerNode {
                    id: format!("L{i}"),
                    name: String::new(),
                    kind: LayerType::Rectangle,
                    rect: *r,
                    z: i,
                })
                .collect(),
            labels: None,
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_layout(&board(750.0, 1500.0, &[])).unwrap().windows.len(), 2);
        let w = window_layout(&board(375.0, 800.0, &[])).unwrap();
        assert_eq!(w.scale, 2.0);
        assert_eq!(w.scaled_height, 1600.0);
        assert_eq!(w.windows.len(), 3);
    }

    #[test]
    fn center_rule_is_lower_inclusive() {
        assert_eq!(window_of(800.0, 3), 1);
        assert_eq!(window_of(750.0, 3), 1);
        assert_eq!(window_of(749.999, 3), 0);
        assert_eq!(window_of(-5.0, 3), 0);
        assert_eq!(window_of(5000.0, 3), 2);
    }

    #[test]
    fn zero_width_is_an_error() {
        assert!(window_layout(&board(0.0, 10.0, &[])).is_err());
    }

    #[test]
    fn patch_scales_and_pads() {
        // 375×400 white screenshot → scaled 750×800, window 1 has 50 white rows
        let b = board(375.0, 400.0, &[]);
        let w = window_layout(&b).unwrap();
        let shot = Raster::filled(375, 400, [255, 255, 255]);
        let p1 = w.patch(&shot, &w.windows[1]);
        assert_eq!(p1.get(10, 49), [255, 255, 255]);
        assert_eq!(p1.get(10, 50), [0, 0, 0]);
        let p0 = w.patch(&shot, &w.windows[0]);
        assert!(p0.pixels.iter().all(|&v| v == 255));
    }

    proptest! {
        #[test]
        fn every_layer_lands_in_exactly_one_window(
            w in 50.0..2000.0f64,
            h in 1.0..4000.0f64,
            raw in prop::collection::vec((-0.2..1.1f64, -0.2..1.1f64, 0.0..0.5f64, 0.0..0.5f64), 0..40),
        ) {
            let rects: Vec<Rect> = raw.iter().map(|&(x, y, rw, rh)| Rect::new(x * w, y * h, rw * w, rh * h)).collect();
            let out = window_layout(&board(w, h, &rects)).unwrap();
            let mut hits = vec![0; rects.len()];
            for win in &out.windows {
                for &m in &win.members {
                    hits[m] += 1;
                }
            }
            prop_assert!(hits.iter().all(|&c| c == 1));
        }
    }
}
