//! Painter's-algorithm rasterizer for generated artboards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layer::{Artboard, LayerType, Raster, Rect};

const DEFAULT_FILL: [u8; 3] = [128, 128, 128];

/// Fill color carried in a layer name such as `oval#rgb(200,40,40)`.
pub fn name_color(name: &str) -> Option<[u8; 3]> {
    let inner = name.split_once("#rgb(")?.1.strip_suffix(')')?;
    let mut parts = inner.split(',').map(|p| p.trim().parse::<u8>().ok());
    let c = [parts.next()??, parts.next()??, parts.next()??];
    parts.next().is_none().then_some(c)
}

pub fn color_name(shape: &str, rgb: [u8; 3]) -> String {
    format!("{shape}#rgb({},{},{})", rgb[0], rgb[1], rgb[2])
}

/// Pixel index range whose centers fall in `[lo, lo + len)`.
fn span(lo: f64, len: f64, limit: usize) -> std::ops::Range<usize> {
    let a = (lo - 0.5).ceil().max(0.0);
    let b = (lo + len - 0.5).ceil().max(0.0);
    (a as usize).min(limit)..(b as usize).min(limit)
}

fn lighter(c: [u8; 3]) -> [u8; 3] {
    c.map(|v| v + (255 - v) / 2)
}

fn paint(img: &mut Raster, rect: &Rect, mut inside: impl FnMut(f64, f64, usize, usize) -> Option<[u8; 3]>) {
    for py in span(rect.y, rect.h, img.height) {
        for px in span(rect.x, rect.w, img.width) {
            // unit coordinates of the pixel center inside the rect
            let u = (px as f64 + 0.5 - rect.x) / rect.w;
            let v = (py as f64 + 0.5 - rect.y) / rect.h;
            if let Some(c) = inside(u, v, px, py) {
                img.set(px, py, c);
            }
        }
    }
}

/// Draws layers in z order on a white canvas: flat rectangles, ovals and
/// triangular paths, hatched text and checkered bitmaps.
pub fn render(artboard: &Artboard, seed: u64) -> Raster {
    let width = artboard.width.round().max(1.0) as usize;
    let height = artboard.height.round().max(1.0) as usize;
    let mut img = Raster::filled(width, height, [255, 255, 255]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &artboard.layers {
        let c = name_color(&layer.name).unwrap_or(DEFAULT_FILL);
        let r = layer.rect;
        if r.w <= 0.0 || r.h <= 0.0 {
            continue;
        }
        match layer.kind {
            LayerType::Rectangle => paint(&mut img, &r, |_, _, _, _| Some(c)),
            LayerType::Oval => paint(&mut img, &r, |u, v, _, _| {
                ((u - 0.5).powi(2) + (v - 0.5).powi(2) <= 0.25).then_some(c)
            }),
            LayerType::Path => paint(&mut img, &r, |u, v, _, _| ((u - 0.5).abs() * 2.0 <= v).then_some(c)),
            LayerType::Text => {
                let y0 = r.y;
                paint(&mut img, &r, |_, _, _, py| ((py as f64 - y0).rem_euclid(4.0) < 2.0).then_some(c))
            }
            LayerType::Bitmap => {
                let cell: usize = rng.gen_range(3..=6);
                let light = lighter(c);
                paint(&mut img, &r, |_, _, px, py| {
                    Some(if (px / cell + py / cell) % 2 == 0 { c } else { light })
                })
            }
            LayerType::Group | LayerType::Symbol | LayerType::Canvas | LayerType::Unknown => {}
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::LayerNode;

    fn board(layers: Vec<(LayerType, &str, Rect)>) -> Artboard {
        Artboard {
            id: "t".into(),
            width: 20.0,
            height: 10.0,
            layers: layers
                .into_iter()
                .enumerate()
                .map(|(z, (kind, name, rect))| LayerNode {
                    id: format!("l{z}"),
                    name: name.into(),
                    kind,
                    rect,
                    z,
                })
                .collect(),
            labels: None,
        }
    }

    #[test]
    fn no_layers_is_white() {
        let img = render(&board(vec![]), 0);
        assert_eq!((img.width, img.height), (20, 10));
        assert!(img.pixels.iter().all(|&p| p == 255));
    }

    #[test]
    fn full_canvas_rectangle_is_uniform() {
        let img = render(
            &board(vec![(LayerType::Rectangle, "rectangle#rgb(10,20,30)", Rect::new(0.0, 0.0, 20.0, 10.0))]),
            0,
        );
        assert!(img.pixels.chunks(3).all(|p| p == [10, 20, 30]));
    }

    #[test]
    fn higher_layer_wins_the_overlap() {
        let img = render(
            &board(vec![
                (LayerType::Rectangle, "rectangle#rgb(1,1,1)", Rect::new(0.0, 0.0, 12.0, 10.0)),
                (LayerType::Rectangle, "rectangle#rgb(2,2,2)", Rect::new(8.0, 0.0, 12.0, 10.0)),
            ]),
            0,
        );
        assert_eq!(img.get(2, 5), [1, 1, 1]);
        assert_eq!(img.get(10, 5), [2, 2, 2]);
        assert_eq!(img.get(15, 5), [2, 2, 2]);
    }

    #[test]
    fn same_seed_same_raster() {
        let b = board(vec![(LayerType::Bitmap, "bitmap#rgb(9,90,200)", Rect::new(1.0, 1.0, 17.0, 8.0))]);
        assert_eq!(render(&b, 4), render(&b, 4));
    }

    #[test]
    fn colors_round_trip_through_names() {
        assert_eq!(name_color(&color_name("oval", [200, 40, 0])), Some([200, 40, 0]));
        assert_eq!(name_color("oval"), None);
        assert_eq!(name_color("oval#rgb(1,2)"), None);
        assert_eq!(name_color("oval#rgb(1,2,300)"), None);
    }
}
