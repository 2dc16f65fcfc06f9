//! Seeded generator of labeled artboards with fragmented patterns.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{color_name, render};
use crate::error::{Error, Result};
use crate::fsio::{write_atomic, write_json};
use crate::gnn::split_by_artboard;
use crate::layer::{Artboard, Label, LayerNode, LayerType, Rect};

pub const ARTBOARD_WIDTH: f64 = 375.0;
/// Design-space height of one scaled window.
const REGION: f64 = 375.0;
const MARGIN: f64 = 12.0;
/// Item spacing; keeps centers of different patterns farther apart than
/// the default merge distance at window scale.
const GAP: f64 = 21.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Icon,
    Decoration,
    Background,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_artboards: usize,
    pub seed: u64,
    /// Relative frequency of icon, decoration and background patterns.
    pub mix: [f64; 3],
    /// Inclusive range of the layer count each artboard aims for.
    pub layers: [usize; 2],
    /// Target fraction of fragmented layers.
    pub fragment_ratio: f64,
    /// Position and color jitter in [0, 1].
    pub noise: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_artboards: 100,
            seed: 0,
            mix: [0.5, 0.3, 0.2],
            layers: [20, 40],
            fragment_ratio: 0.4,
            noise: 0.1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.mix.iter().sum();
        if self.mix.iter().any(|m| !(m.is_finite() && *m >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Dataset(format!("pattern mix {:?} must be non-negative and sum to 1", self.mix)));
        }
        if self.layers[0] == 0 || self.layers[0] > self.layers[1] {
            return Err(Error::Dataset(format!("layer range {:?} is empty", self.layers)));
        }
        if !(0.0..=1.0).contains(&self.fragment_ratio) {
            return Err(Error::Dataset(format!("fragment ratio {} is outside [0, 1]", self.fragment_ratio)));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Dataset(format!("noise {} is outside [0, 1]", self.noise)));
        }
        Ok(())
    }
}

const PALETTE: [[u8; 3]; 8] = [
    [220, 60, 60],
    [60, 140, 220],
    [40, 170, 90],
    [240, 160, 30],
    [150, 70, 200],
    [30, 180, 180],
    [230, 90, 160],
    [90, 90, 90],
];

#[derive(Clone, Copy, Debug)]
enum Item {
    Pattern(PatternKind, f64, f64),
    Text(f64, f64),
    Image(f64, f64),
    Card(f64, f64),
    Button(f64, f64),
    Lone(f64, f64),
}

impl Item {
    fn size(&self) -> (f64, f64) {
        match *self {
            Item::Pattern(_, w, h)
            | Item::Text(w, h)
            | Item::Image(w, h)
            | Item::Card(w, h)
            | Item::Button(w, h)
            | Item::Lone(w, h) => (w, h),
        }
    }
}

struct Builder {
    rng: ChaCha8Rng,
    noise: f64,
    layers: Vec<LayerNode>,
    labels: BTreeMap<String, Label>,
    groups: usize,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

impl Builder {
    fn push(&mut self, kind: LayerType, rgb: [u8; 3], rect: Rect, group: Option<&str>) {
        let z = self.layers.len();
        let id = format!("l{z:03}");
        let (x, y) = (round2(rect.x), round2(rect.y));
        let rect = Rect::new(x, y, round2(round2(rect.right()) - x), round2(round2(rect.bottom()) - y));
        self.labels.insert(
            id.clone(),
            Label {
                fragmented: group.is_some(),
                group: group.map(str::to_string),
            },
        );
        self.layers.push(LayerNode {
            id,
            name: color_name(kind.as_str(), rgb),
            kind,
            rect,
            z,
        });
    }

    fn new_group(&mut self) -> String {
        self.groups += 1;
        format!("g{}", self.groups - 1)
    }

    fn jitter(&mut self, scale: f64) -> f64 {
        if self.noise == 0.0 {
            0.0
        } else {
            self.rng.gen_range(-1.0..1.0) * self.noise * scale
        }
    }

    fn color(&mut self) -> [u8; 3] {
        let base = *PALETTE.choose(&mut self.rng).expect("palette");
        let j = (self.noise * 40.0) as i32;
        base.map(|c| (c as i32 + self.rng.gen_range(-j..=j)).clamp(0, 255) as u8)
    }

    fn pastel(&mut self) -> [u8; 3] {
        self.color().map(|c| c / 4 + 190)
    }

    fn shape(&mut self) -> LayerType {
        *[LayerType::Oval, LayerType::Path, LayerType::Rectangle]
            .choose(&mut self.rng)
            .expect("shapes")
    }

    fn plan(&mut self, pattern: Option<PatternKind>) -> Item {
        let r = &mut self.rng;
        match pattern {
            Some(PatternKind::Icon) => {
                let s = r.gen_range(28.0..=48.0);
                Item::Pattern(PatternKind::Icon, s, s)
            }
            Some(PatternKind::Decoration) => {
                Item::Pattern(PatternKind::Decoration, 0.0, 0.0) // sized at emission
            }
            Some(PatternKind::Background) => Item::Pattern(
                PatternKind::Background,
                r.gen_range(200.0..=ARTBOARD_WIDTH - 2.0 * MARGIN),
                r.gen_range(70.0..=150.0),
            ),
            None => match r.gen_range(0..100) {
                0..=29 => Item::Text(r.gen_range(60.0..=220.0), r.gen_range(10.0..=18.0)),
                30..=44 => Item::Image(r.gen_range(40.0..=120.0), r.gen_range(40.0..=100.0)),
                45..=64 => Item::Card(r.gen_range(80.0..=200.0), r.gen_range(30.0..=60.0)),
                65..=79 => Item::Button(r.gen_range(60.0..=120.0), r.gen_range(24.0..=36.0)),
                _ => {
                    let s = r.gen_range(6.0..=16.0);
                    Item::Lone(s, s)
                }
            },
        }
    }

    /// Overlapping shapes inside a plain container; each shape's center lies
    /// within 8 px of an earlier one.
    fn icon(&mut self, x: f64, y: f64, s: f64) {
        let container = Rect::new(x, y, s, s);
        let fill = self.pastel();
        self.push(LayerType::Rectangle, fill, container, None);
        let g = self.new_group();
        let base = self.color();
        let k = self.rng.gen_range(3..=8);
        let mut centers: Vec<(f64, f64)> = Vec::new();
        for i in 0..k {
            let m = s * self.rng.gen_range(0.25..0.55);
            let (cx, cy) = if i == 0 {
                (x + s / 2.0 + self.rng.gen_range(-0.15..0.15) * s, y + s / 2.0 + self.rng.gen_range(-0.15..0.15) * s)
            } else {
                let &(px, py) = centers.choose(&mut self.rng).expect("non-empty");
                let a = self.rng.gen_range(0.0..std::f64::consts::TAU);
                let d = self.rng.gen_range(0.0..8.0);
                (px + d * a.cos(), py + d * a.sin())
            };
            let cx = cx.clamp(x + m / 2.0 + 0.5, x + s - m / 2.0 - 0.5);
            let cy = cy.clamp(y + m / 2.0 + 0.5, y + s - m / 2.0 - 0.5);
            centers.push((cx, cy));
            let kind = self.shape();
            let c = if self.rng.gen_bool(0.5) { base } else { self.color() };
            self.push(kind, c, Rect::new(cx - m / 2.0, cy - m / 2.0, m, m), Some(&g));
        }
    }

    fn decoration(&mut self, x: f64, y: f64, n: usize, sizes: &[f64], step: f64, h: f64) {
        let g = self.new_group();
        let c = self.color();
        let kind = self.shape();
        for (i, &m) in sizes.iter().enumerate().take(n) {
            let cx = x + sizes[0] / 2.0 + step * i as f64 + self.jitter(1.0);
            let cy = y + h / 2.0 + self.jitter(1.0);
            self.push(kind, c, Rect::new(cx - m / 2.0, cy - m / 2.0, m, m), Some(&g));
        }
    }

    fn background(&mut self, x: f64, y: f64, w: f64, h: f64) {
        let g = self.new_group();
        let fill = self.pastel();
        self.push(LayerType::Rectangle, fill, Rect::new(x, y, w, h), Some(&g));
        let k = self.rng.gen_range(5..=15);
        let c = self.color();
        for _ in 0..k {
            let m = self.rng.gen_range(3.0..=8.0);
            let px = self.rng.gen_range(x + 2.0..x + w - m - 2.0);
            let py = self.rng.gen_range(y + 2.0..y + h - m - 2.0);
            let kind = if self.rng.gen_bool(0.5) { LayerType::Oval } else { LayerType::Rectangle };
            self.push(kind, c, Rect::new(px, py, m, m), Some(&g));
        }
    }

    fn emit(&mut self, item: Item, x: f64, y: f64) {
        match item {
            Item::Pattern(PatternKind::Icon, s, _) => self.icon(x, y, s),
            Item::Pattern(PatternKind::Decoration, ..) => unreachable!("decorations are resolved before layout"),
            Item::Pattern(PatternKind::Background, w, h) => self.background(x, y, w, h),
            Item::Text(w, h) => {
                let c = [40, 40, 40];
                self.push(LayerType::Text, c, Rect::new(x, y, w, h), None);
            }
            Item::Image(w, h) => {
                let c = self.color();
                self.push(LayerType::Bitmap, c, Rect::new(x, y, w, h), None);
            }
            Item::Card(w, h) => {
                let c = self.pastel();
                self.push(LayerType::Rectangle, c, Rect::new(x, y, w, h), None);
                let tw = w * self.rng.gen_range(0.4..0.6);
                self.push(LayerType::Text, [40, 40, 40], Rect::new(x + 8.0, y + h / 2.0 - 6.0, tw, 12.0), None);
                if self.rng.gen_bool(0.5) {
                    // a solitary badge that looks like an icon piece in isolation
                    let m = self.rng.gen_range(6.0..=14.0);
                    let kind = self.shape();
                    let c = self.color();
                    self.push(kind, c, Rect::new(x + w - m - 8.0, y + (h - m) / 2.0, m, m), None);
                }
            }
            Item::Button(w, h) => {
                let c = self.color();
                self.push(LayerType::Rectangle, c, Rect::new(x, y, w, h), None);
                let tw = w * 0.6;
                self.push(LayerType::Text, [250, 250, 250], Rect::new(x + w * 0.2, y + h / 2.0 - 5.0, tw, 10.0), None);
            }
            Item::Lone(w, h) => {
                let kind = self.shape();
                let c = self.color();
                self.push(kind, c, Rect::new(x, y, w, h), None);
            }
        }
    }
}

/// A decoration as (shape count, sizes, center step, height); sized up front
/// so the row layout knows its footprint.
fn plan_decoration(rng: &mut ChaCha8Rng) -> (usize, Vec<f64>, f64, f64) {
    let n = rng.gen_range(2..=5);
    let sizes: Vec<f64> = (0..n).map(|_| rng.gen_range(6.0..=14.0)).collect();
    let step = rng.gen_range(10.0..=17.0);
    let h = sizes.iter().cloned().fold(0.0, f64::max) + 4.0;
    (n, sizes, step, h)
}

fn fragment_count(item: &Item, deco: Option<usize>) -> usize {
    match item {
        Item::Pattern(PatternKind::Icon, ..) => 5,
        Item::Pattern(PatternKind::Decoration, ..) => deco.unwrap_or(3),
        Item::Pattern(PatternKind::Background, ..) => 11,
        _ => 0,
    }
}

fn layer_count(item: &Item) -> usize {
    match item {
        Item::Card(..) => 3,
        Item::Button(..) => 2,
        _ => 1,
    }
}

/// Generates the labeled artboard with the given index.
pub fn generate_artboard(config: &GenConfig, index: usize) -> Result<Artboard> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64 + 1);
    let height = rng.gen_range(600..=740) as f64;
    let target = rng.gen_range(config.layers[0]..=config.layers[1]);
    let want_fragments = (target as f64 * config.fragment_ratio).round() as usize;
    let mut b = Builder {
        rng,
        noise: config.noise,
        layers: Vec::new(),
        labels: BTreeMap::new(),
        groups: 0,
    };

    let mut items: Vec<(Item, Option<(usize, Vec<f64>, f64, f64)>)> = Vec::new();
    let (mut fragments, mut total) = (0, 0);
    while fragments < want_fragments {
        let u: f64 = b.rng.gen();
        let kind = if u < config.mix[0] {
            PatternKind::Icon
        } else if u < config.mix[0] + config.mix[1] {
            PatternKind::Decoration
        } else {
            PatternKind::Background
        };
        let item = b.plan(Some(kind));
        let deco = (kind == PatternKind::Decoration).then(|| plan_decoration(&mut b.rng));
        let item = match &deco {
            Some((n, sizes, step, h)) => Item::Pattern(kind, sizes[0] / 2.0 + step * (*n as f64 - 1.0) + sizes[n - 1] / 2.0 + 2.0, *h),
            None => item,
        };
        let f = fragment_count(&item, deco.as_ref().map(|d| d.0));
        fragments += f;
        total += f + usize::from(matches!(item, Item::Pattern(PatternKind::Icon, ..)));
        items.push((item, deco));
    }
    while total < target {
        let item = b.plan(None);
        total += layer_count(&item);
        items.push((item, None));
    }
    items.shuffle(&mut b.rng);

    // rows never straddle the boundary between windows
    let regions = [(MARGIN, REGION - MARGIN), (REGION + MARGIN, height - MARGIN)];
    let mut region = 0;
    let mut y = regions[0].0;
    let mut queue = items.into_iter().peekable();
    'rows: while queue.peek().is_some() {
        let mut row = Vec::new();
        let mut x = MARGIN;
        while let Some((item, _)) = queue.peek() {
            let (w, _) = item.size();
            if !row.is_empty() && x + w > ARTBOARD_WIDTH - MARGIN {
                break;
            }
            let entry = queue.next().expect("peeked");
            row.push((x, entry));
            x += w + GAP + b.rng.gen_range(0.0..12.0);
        }
        let row_h = row.iter().map(|(_, (it, _))| it.size().1).fold(0.0, f64::max);
        while y + row_h > regions[region].1 {
            region += 1;
            if region == regions.len() {
                break 'rows;
            }
            y = regions[region].0;
        }
        for (x, (item, deco)) in row {
            let (_, h) = item.size();
            let iy = y + (row_h - h) / 2.0;
            match deco {
                Some((n, sizes, step, dh)) => b.decoration(x, iy, n, &sizes, step, dh),
                None => b.emit(item, x, iy),
            }
        }
        y += row_h + GAP + b.rng.gen_range(0.0..16.0);
    }

    let artboard = Artboard {
        id: format!("ab{index:04}"),
        width: ARTBOARD_WIDTH,
        height,
        layers: b.layers,
        labels: Some(b.labels),
    };
    artboard.validate()?;
    Ok(artboard)
}

/// Ground-truth merge groups: group id → member ids in z order.
pub fn ground_truth_groups(artboard: &Artboard) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for l in &artboard.layers {
        if let Some(g) = artboard.label(&l.id).and_then(|lab| lab.group.clone()) {
            out.entry(g).or_default().push(l.id.clone());
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub artboards: usize,
    pub layers: usize,
    pub fragmented: usize,
    pub fragmented_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub stem: String,
    /// Suggested split: train, val or test.
    pub split: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub config: GenConfig,
    pub summary: GenSummary,
    pub artboards: Vec<DatasetEntry>,
}

pub const DATASET_INDEX: &str = "dataset.json";

/// Writes `{stem}.json`, `{stem}.ppm` per artboard and the `dataset.json` index.
pub fn gen_dataset(config: &GenConfig, out_dir: &Path) -> Result<DatasetIndex> {
    config.validate()?;
    let mut stems = Vec::with_capacity(config.n_artboards);
    let (mut layers, mut fragmented) = (0, 0);
    for i in 0..config.n_artboards {
        let a = generate_artboard(config, i)?;
        layers += a.layers.len();
        fragmented += a.labels.iter().flat_map(|m| m.values()).filter(|l| l.fragmented).count();
        write_atomic(&out_dir.join(format!("{}.json", a.id)), &a.to_manifest_bytes())?;
        let shot = render(&a, config.seed ^ i as u64);
        write_atomic(&out_dir.join(format!("{}.ppm", a.id)), &shot.to_ppm())?;
        stems.push(a.id);
    }
    let split = if stems.len() >= 3 {
        Some(split_by_artboard(&stems, [0.8, 0.1, 0.1], config.seed)?)
    } else {
        None
    };
    let index = DatasetIndex {
        config: config.clone(),
        summary: GenSummary {
            artboards: stems.len(),
            layers,
            fragmented,
            fragmented_fraction: if layers == 0 { 0.0 } else { fragmented as f64 / layers as f64 },
        },
        artboards: stems
            .iter()
            .map(|s| DatasetEntry {
                stem: s.clone(),
                split: split.as_ref().and_then(|p| p.part_of(s)).unwrap_or("train").to_string(),
            })
            .collect(),
    };
    write_json(&out_dir.join(DATASET_INDEX), &index)?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::window_layout;
    use crate::layer::{load_screenshot, parse_artboard};

    fn boards(n: usize) -> Vec<Artboard> {
        let cfg = GenConfig::default();
        (0..n).map(|i| generate_artboard(&cfg, i).unwrap()).collect()
    }

    #[test]
    fn groups_are_fragmented_and_have_two_members() {
        for a in boards(40) {
            let groups = ground_truth_groups(&a);
            assert!(!groups.is_empty());
            for members in groups.values() {
                assert!(members.len() >= 2);
                assert!(members.iter().all(|m| a.label(m).unwrap().fragmented));
            }
            for l in &a.layers {
                let lab = a.label(&l.id).unwrap();
                assert_eq!(lab.fragmented, lab.group.is_some());
            }
        }
    }

    #[test]
    fn icon_members_lie_inside_their_container() {
        // every fragmented non-background layer that overlaps a plain
        // rectangle must be fully contained by it
        let mut checked = 0;
        for a in boards(40) {
            for (i, c) in a.layers.iter().enumerate() {
                if c.kind != LayerType::Rectangle || a.label(&c.id).unwrap().fragmented {
                    continue;
                }
                for m in &a.layers[i + 1..] {
                    let lab = a.label(&m.id).unwrap();
                    if lab.fragmented && c.rect.intersects(&m.rect) && m.rect.area() < c.rect.area() {
                        assert!(c.rect.contains(&m.rect), "{} escapes {} in {}", m.id, c.id, a.id);
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn groups_stay_in_one_window() {
        for a in boards(40) {
            let w = window_layout(&a).unwrap();
            let mut window_of_layer: BTreeMap<&str, usize> = BTreeMap::new();
            for win in &w.windows {
                for &m in &win.members {
                    window_of_layer.insert(a.layers[m].id.as_str(), win.index);
                }
            }
            for members in ground_truth_groups(&a).values() {
                let first = window_of_layer[members[0].as_str()];
                assert!(members.iter().all(|m| window_of_layer[m.as_str()] == first));
            }
        }
    }

    #[test]
    fn class_balance_is_near_the_target() {
        let (mut frag, mut total) = (0, 0);
        for a in boards(60) {
            total += a.layers.len();
            frag += a.labels.unwrap().values().filter(|l| l.fragmented).count();
        }
        let f = frag as f64 / total as f64;
        assert!((0.3..0.6).contains(&f), "{f}");
    }

    #[test]
    fn output_round_trips_and_is_deterministic() {
        let cfg = GenConfig {
            n_artboards: 4,
            seed: 42,
            ..Default::default()
        };
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        gen_dataset(&cfg, d1.path()).unwrap();
        gen_dataset(&cfg, d2.path()).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(d1.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 9);
        for n in &names {
            assert_eq!(std::fs::read(d1.path().join(n)).unwrap(), std::fs::read(d2.path().join(n)).unwrap());
        }
        for i in 0..4 {
            let a = parse_artboard(&std::fs::read(d1.path().join(format!("ab{i:04}.json"))).unwrap()).unwrap();
            load_screenshot(&std::fs::read(d1.path().join(format!("ab{i:04}.ppm"))).unwrap(), &a).unwrap();
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        for cfg in [
            GenConfig { mix: [0.5, 0.5, 0.5], ..Default::default() },
            GenConfig { layers: [5, 4], ..Default::default() },
            GenConfig { fragment_ratio: 1.5, ..Default::default() },
        ] {
            assert!(generate_artboard(&cfg, 0).is_err());
        }
    }
}
