//! Model-ready inputs for one window graph.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{crop_resize, geometry_raw, roi_bins, FeatureMode, VisualMethod};
use crate::graph::{build_window_graphs, ContainmentTree, LayoutGraph, Windowed, WINDOW};
use crate::layer::{Artboard, Raster, Rect};
use crate::nn::{RoiBins, Tensor};

/// Everything about the inputs that must match between training and inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputConfig {
    pub features: FeatureMode,
    pub visual: VisualMethod,
    /// Side of the per-layer crop.
    pub crop: usize,
    /// Side of the downsampled window patch in RoI mode.
    pub roi_patch: usize,
    pub roi_grid: usize,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            features: FeatureMode::LeVf,
            visual: VisualMethod::Crop,
            crop: 32,
            roi_patch: 128,
            roi_grid: 5,
        }
    }
}

impl InputConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop % 8 != 0 {
            return Err(Error::Nn(format!("crop size {} must be a positive multiple of 8", self.crop)));
        }
        if self.roi_patch == 0 || self.roi_patch % 8 != 0 {
            return Err(Error::Nn(format!(
                "RoI patch size {} must be a positive multiple of 8",
                self.roi_patch
            )));
        }
        if self.roi_grid == 0 {
            return Err(Error::Nn("RoI grid must be positive".into()));
        }
        Ok(())
    }

    /// Side of the RoI feature map.
    pub fn roi_map(&self) -> usize {
        self.roi_patch / 8
    }
}

#[derive(Clone, Debug)]
pub enum VisualInput {
    None,
    /// `N×3×S×S` crops in [0, 1].
    Crops(Tensor<f32>),
    /// One `1×3×P×P` patch plus per-node bins on its feature map.
    Roi {
        patch: Tensor<f32>,
        bins: Vec<Option<RoiBins>>,
    },
}

#[derive(Clone, Debug)]
pub struct GraphSample {
    pub artboard: String,
    pub window: usize,
    pub tree: ContainmentTree,
    pub graph: LayoutGraph,
    /// Layer id per node; `None` for the root.
    pub layer_ids: Vec<Option<String>>,
    /// Type-embedding row per node.
    pub types: Rc<[usize]>,
    /// `N×4` normalized window-local geometry.
    pub geometry: Tensor<f32>,
    pub visual: VisualInput,
    /// Class per node when labeled (1 = fragmented); the root is never labeled.
    pub labels: Vec<Option<usize>>,
}

impl GraphSample {
    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    pub fn labeled(&self) -> usize {
        self.labels.iter().flatten().count()
    }
}

/// Builds one sample per window. `shot` may be omitted when the feature mode
/// does not use pixels.
pub fn prepare_artboard(artboard: &Artboard, shot: Option<&Raster>, cfg: &InputConfig) -> Result<Vec<GraphSample>> {
    cfg.validate()?;
    let (windowed, graphs) = build_window_graphs(artboard)?;
    let shot = match (cfg.features.visual(), shot) {
        (true, None) => {
            return Err(Error::MissingComponent {
                mode: cfg.features.as_str(),
                missing: "screenshot",
            })
        }
        (true, Some(s)) => Some(s),
        (false, _) => None,
    };
    let mut out = Vec::with_capacity(graphs.len());
    for wg in graphs {
        let n = wg.tree.len();
        let rects: Vec<Rect> = wg.tree.nodes.iter().map(|t| t.rect).collect();
        let layer_ids: Vec<Option<String>> = wg
            .tree
            .nodes
            .iter()
            .map(|t| t.layer.map(|l| artboard.layers[l].id.clone()))
            .collect();
        let types: Rc<[usize]> = wg.tree.nodes.iter().map(|t| t.kind.index()).collect();
        let geometry = Tensor::new(
            [n, 4],
            rects.iter().flat_map(|r| geometry_raw(r).map(|v| v as f32)).collect(),
        )?;
        let labels = layer_ids
            .iter()
            .map(|id| {
                id.as_ref()
                    .and_then(|id| artboard.label(id))
                    .map(|l| usize::from(l.fragmented))
            })
            .collect();
        let visual = match shot {
            None => VisualInput::None,
            Some(shot) => visual_input(&windowed, shot, &wg.window, &rects, cfg)?,
        };
        out.push(GraphSample {
            artboard: artboard.id.clone(),
            window: wg.window.index,
            tree: wg.tree,
            graph: wg.graph,
            layer_ids,
            types,
            geometry,
            visual,
            labels,
        });
    }
    Ok(out)
}

fn visual_input(
    windowed: &Windowed,
    shot: &Raster,
    window: &crate::graph::Window,
    rects: &[Rect],
    cfg: &InputConfig,
) -> Result<VisualInput> {
    let patch = windowed.patch(shot, window);
    Ok(match cfg.visual {
        VisualMethod::Crop => {
            let s = cfg.crop;
            let mut data = Vec::with_capacity(rects.len() * 3 * s * s);
            for r in rects {
                data.extend(crop_resize(&patch, r, s));
            }
            VisualInput::Crops(Tensor::new([rects.len(), 3, s, s], data)?)
        }
        VisualMethod::Roi => {
            let p = cfg.roi_patch;
            let full = Rect::new(0.0, 0.0, WINDOW as f64, WINDOW as f64);
            let small = Tensor::new([1, 3, p, p], crop_resize(&patch, &full, p))?;
            let map = cfg.roi_map();
            let stride = WINDOW as f64 / map as f64;
            let bins = rects
                .iter()
                .map(|r| roi_bins(r, stride, map, map, cfg.roi_grid))
                .collect();
            VisualInput::Roi { patch: small, bins }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::parse_artboard;

    fn board() -> Artboard {
        parse_artboard(
            br#"{"artboard_id":"b","width":375,"height":400,"layers":[
                {"id":"card","name":"","type":"rectangle","x":0,"y":0,"w":100,"h":100},
                {"id":"dot","name":"","type":"oval","x":10,"y":10,"w":5,"h":5},
                {"id":"foot","name":"","type":"text","x":0,"y":380,"w":50,"h":20}],
                "labels":{"card":{"fragmented":false,"group":null},"dot":{"fragmented":true,"group":null}}}"#,
        )
        .unwrap()
    }

    #[test]
    fn samples_follow_windows_and_labels() {
        let a = board();
        let shot = Raster::filled(375, 400, [255, 255, 255]);
        let s = prepare_artboard(&a, Some(&shot), &InputConfig::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].labels, vec![None, Some(0), Some(1)]);
        assert_eq!(s[1].labels, vec![None, None]);
        assert_eq!(&*s[0].types, &[7, 0, 1]);
        // scale 2: card spans 200 px of the 750 px window
        let g = s[0].geometry.data();
        assert_eq!(&g[4..8], &[0.0, 0.0, 200.0 / 750.0, 200.0 / 750.0]);
        match &s[0].visual {
            VisualInput::Crops(t) => assert_eq!(t.shape(), &[3, 3, 32, 32]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn roi_mode_bins_every_node() {
        let cfg = InputConfig {
            visual: VisualMethod::Roi,
            ..InputConfig::default()
        };
        let shot = Raster::filled(375, 400, [0, 0, 0]);
        let s = prepare_artboard(&board(), Some(&shot), &cfg).unwrap();
        match &s[0].visual {
            VisualInput::Roi { patch, bins } => {
                assert_eq!(patch.shape(), &[1, 3, 128, 128]);
                assert_eq!(bins.len(), 3);
                assert_eq!(bins[0].as_ref().unwrap().rows.last().unwrap().1, 16);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn layout_only_needs_no_pixels() {
        let cfg = InputConfig {
            features: FeatureMode::Le,
            ..InputConfig::default()
        };
        let s = prepare_artboard(&board(), None, &cfg).unwrap();
        assert!(matches!(s[0].visual, VisualInput::None));
        assert!(prepare_artboard(&board(), None, &InputConfig::default()).is_err());
    }
}
