use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gat::{ArcIndex, Combine, GatLayer, GcnLayer};
use super::sample::{GraphSample, InputConfig, VisualInput};
use crate::error::{Error, Result};
use crate::features::{fuse, VisualMethod};
use crate::layer::LayerType;
use crate::nn::{glorot, Bound, CnnConfig, Linear, ParamId, Params, Real, SmallCnn, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnKind {
    Gat,
    Gcn,
    /// No message passing: the classifier sees the node features directly.
    None,
}

impl GnnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GnnKind::Gat => "gat",
            GnnKind::Gcn => "gcn",
            GnnKind::None => "none",
        }
    }
}

impl fmt::Display for GnnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GnnKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gat" => Ok(GnnKind::Gat),
            "gcn" => Ok(GnnKind::Gcn),
            "none" => Ok(GnnKind::None),
            _ => Err(format!("unknown model `{s}` (expected gat, gcn or none)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gnn: GnnKind,
    pub input: InputConfig,
    pub cnn: CnnConfig,
    pub type_dim: usize,
    pub geom_dim: usize,
    /// Width after the input projection.
    pub hidden: usize,
    /// Per-head width of every attention layer.
    pub head_dim: usize,
    /// Head counts; all but the last layer concatenate, the last averages.
    pub heads: Vec<usize>,
    pub gcn_layers: usize,
    pub classifier_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gnn: GnnKind::Gat,
            input: InputConfig::default(),
            cnn: CnnConfig::default(),
            type_dim: 32,
            geom_dim: 32,
            hidden: 256,
            head_dim: 64,
            heads: vec![4, 4, 4, 6],
            gcn_layers: 3,
            classifier_hidden: 128,
        }
    }
}

impl ModelConfig {
    pub fn init_dim(&self) -> usize {
        self.input
            .features
            .init_dim(self.type_dim, self.geom_dim, self.cnn.out_dim)
    }

    pub fn gnn_out_dim(&self) -> usize {
        match self.gnn {
            GnnKind::None => self.init_dim(),
            GnnKind::Gat | GnnKind::Gcn => self.head_dim,
        }
    }

    /// The classifier sees the visual vector a second time only when a GNN
    /// sits in between.
    pub fn head_in_dim(&self) -> usize {
        let extra = if self.gnn != GnnKind::None && self.input.features.visual() {
            self.cnn.out_dim
        } else {
            0
        };
        self.gnn_out_dim() + extra
    }

    pub fn validate(&self) -> Result<()> {
        self.input.validate()?;
        if self.gnn == GnnKind::Gat && (self.heads.is_empty() || self.heads.contains(&0)) {
            return Err(Error::Nn("attention layers need at least one head each".into()));
        }
        if self.gnn == GnnKind::Gcn && self.gcn_layers == 0 {
            return Err(Error::Nn("gcn needs at least one layer".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params<f32>,
    type_embed: Option<ParamId>,
    geom_embed: Option<ParamId>,
    cnn: Option<SmallCnn>,
    input_proj: Option<Linear>,
    gat: Vec<GatLayer>,
    gcn: Vec<GcnLayer>,
    head_hidden: Linear,
    head_out: Linear,
}

/// Logits plus, for attention models, every layer's per-head coefficients.
pub struct ForwardOutput {
    pub logits: Var,
    pub attention: Vec<Vec<Var>>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let features = config.input.features;
        let (type_embed, geom_embed) = if features.layout() {
            (
                Some(params.add("type_embed", glorot(&mut rng, LayerType::COUNT, config.type_dim))),
                Some(params.add("geom_embed", glorot(&mut rng, 4, config.geom_dim))),
            )
        } else {
            (None, None)
        };
        let cnn = features.visual().then(|| {
            let fc_in = match config.input.visual {
                VisualMethod::Crop => SmallCnn::crop_fc_in(&config.cnn, config.input.crop),
                VisualMethod::Roi => config.cnn.channels[2] * config.input.roi_grid * config.input.roi_grid,
            };
            SmallCnn::new(&mut params, &mut rng, "cnn", config.cnn, fc_in)
        });
        let mut input_proj = None;
        let mut gat = Vec::new();
        let mut gcn = Vec::new();
        match config.gnn {
            GnnKind::None => {}
            GnnKind::Gat => {
                input_proj = Some(Linear::new(&mut params, &mut rng, "input_proj", config.init_dim(), config.hidden, true));
                let mut width = config.hidden;
                let last = config.heads.len() - 1;
                for (i, &heads) in config.heads.iter().enumerate() {
                    let (combine, elu) = if i == last {
                        (Combine::Average, false)
                    } else {
                        (Combine::Concat, true)
                    };
                    let layer = GatLayer::new(
                        &mut params,
                        &mut rng,
                        &format!("gat{i}"),
                        width,
                        heads,
                        config.head_dim,
                        combine,
                        elu,
                    );
                    width = layer.out_dim();
                    gat.push(layer);
                }
            }
            GnnKind::Gcn => {
                input_proj = Some(Linear::new(&mut params, &mut rng, "input_proj", config.init_dim(), config.hidden, true));
                for i in 0..config.gcn_layers {
                    let out = if i + 1 == config.gcn_layers {
                        config.head_dim
                    } else {
                        config.hidden
                    };
                    gcn.push(GcnLayer::new(&mut params, &mut rng, &format!("gcn{i}"), config.hidden, out));
                }
            }
        }
        let head_hidden = Linear::new(
            &mut params,
            &mut rng,
            "head.hidden",
            config.head_in_dim(),
            config.classifier_hidden,
            true,
        );
        let head_out = Linear::new(&mut params, &mut rng, "head.out", config.classifier_hidden, 2, true);
        Ok(Self {
            config,
            params,
            type_embed,
            geom_embed,
            cnn,
            input_proj,
            gat,
            gcn,
            head_hidden,
            head_out,
        })
    }

    /// Replaces every parameter with the tensor of the same name.
    pub fn load_params(&mut self, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
        let ids: Vec<ParamId> = self.params.ids().collect();
        for id in ids {
            let name = self.params.name(id).to_string();
            let t = tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != self.params.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "incompatible dims for `{name}`: checkpoint {:?}, model {:?}",
                    t.shape(),
                    self.params.get(id).shape()
                )));
            }
            *self.params.get_mut(id) = t.clone();
        }
        Ok(())
    }

    pub fn forward<S: Real>(&self, tape: &mut Tape<S>, p: &Bound, sample: &GraphSample) -> Result<ForwardOutput> {
        let n = sample.len();
        let features = self.config.input.features;
        let visual = match (&self.cnn, &sample.visual) {
            (None, _) => None,
            (Some(cnn), VisualInput::Crops(crops)) => {
                let x = tape.constant(crops.cast());
                Some(cnn.forward_crops(tape, p, x)?)
            }
            (Some(cnn), VisualInput::Roi { patch, bins }) => {
                let x = tape.constant(patch.cast());
                Some(cnn.forward_rois(tape, p, x, bins)?)
            }
            (Some(_), VisualInput::None) => {
                return Err(Error::MissingComponent {
                    mode: features.as_str(),
                    missing: "visual",
                })
            }
        };
        if let Some(v) = visual {
            let rows = tape.shape(v)[0];
            if rows != n {
                return Err(Error::shape("visual", &[n], &[rows]));
            }
        }
        let (type_v, geom_v) = match (self.type_embed, self.geom_embed) {
            (Some(te), Some(ge)) => {
                let t = tape.gather_rows(p.var(te), sample.types.clone())?;
                let g = tape.constant(sample.geometry.cast());
                let g = tape.matmul(g, p.var(ge))?;
                (Some(t), Some(g))
            }
            _ => (None, None),
        };
        let init = fuse(tape, features, type_v, geom_v, visual)?;

        let arcs = ArcIndex {
            src: sample.graph.sources(),
            dst: sample.graph.destinations(),
            nodes: n,
        };
        let mut attention = Vec::new();
        let state = match self.config.gnn {
            GnnKind::None => init,
            GnnKind::Gat => {
                let mut h = self.input_proj.as_ref().expect("gat has a projection").forward(tape, p, init)?;
                for layer in &self.gat {
                    let o = layer.forward(tape, p, &arcs, h)?;
                    attention.push(o.attention);
                    h = o.out;
                }
                h
            }
            GnnKind::Gcn => {
                let mut h = self.input_proj.as_ref().expect("gcn has a projection").forward(tape, p, init)?;
                for layer in &self.gcn {
                    h = layer.forward(tape, p, &arcs, h)?;
                }
                h
            }
        };
        let head_in = match visual {
            Some(v) if self.config.gnn != GnnKind::None => tape.concat(&[state, v])?,
            _ => state,
        };
        let hidden = self.head_hidden.forward(tape, p, head_in)?;
        let hidden = tape.relu(hidden);
        let logits = self.head_out.forward(tape, p, hidden)?;
        Ok(ForwardOutput { logits, attention })
    }

    /// Probability of the fragmented class for every node.
    pub fn predict(&self, sample: &GraphSample) -> Result<Vec<f64>> {
        let mut tape = Tape::<f32>::new();
        let p = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &p, sample)?;
        Ok(positive_probs(tape.value(out.logits).data()))
    }
}

/// Softmax probability of class 1 from row-major `N×2` logits.
pub fn positive_probs<S: Real>(logits: &[S]) -> Vec<f64> {
    logits
        .chunks_exact(2)
        .map(|r| {
            let d = r[0].as_f64() - r[1].as_f64();
            1.0 / (1.0 + d.exp())
        })
        .collect()
}
