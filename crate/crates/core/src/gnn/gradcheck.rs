//! Finite-difference checks of the attention layer and the whole model.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gat::{ArcIndex, Combine, GatLayer};
use super::model::{Model, ModelConfig};
use super::sample::{GraphSample, VisualInput};
use crate::error::Result;
use crate::graph::{Arc, ArcKind, ContainmentTree, GraphNode, LayoutGraph, TreeItem};
use crate::layer::{LayerType, Rect};
use crate::nn::gradcheck::{check, primitive_suite, random_tensor, GradCheckConfig, GradCheckReport};
use crate::nn::{Bound, Params, Tape, Tensor, Var};

/// Five-node graph: root → {1, 2}, 2 → {3, 4}, sibling cliques, self-loops.
pub fn five_node_arcs() -> Vec<Arc> {
    let mut arcs = vec![
        Arc { src: 0, dst: 1, kind: ArcKind::Tree },
        Arc { src: 0, dst: 2, kind: ArcKind::Tree },
        Arc { src: 2, dst: 3, kind: ArcKind::Tree },
        Arc { src: 2, dst: 4, kind: ArcKind::Tree },
        Arc { src: 1, dst: 2, kind: ArcKind::Sibling },
        Arc { src: 2, dst: 1, kind: ArcKind::Sibling },
        Arc { src: 3, dst: 4, kind: ArcKind::Sibling },
        Arc { src: 4, dst: 3, kind: ArcKind::Sibling },
    ];
    arcs.extend((0..5).map(|i| Arc { src: i, dst: i, kind: ArcKind::SelfLoop }));
    arcs
}

/// A random sample over `arcs` with inputs shaped for `config`.
pub fn random_sample(config: &ModelConfig, n: usize, arcs: Vec<Arc>, seed: u64) -> GraphSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: Vec<GraphNode> = (0..n)
        .map(|i| GraphNode {
            layer: i.checked_sub(1),
            kind: if i == 0 {
                LayerType::Canvas
            } else {
                LayerType::ALL[rng.gen_range(0..7)]
            },
        })
        .collect();
    let types: Rc<[usize]> = nodes.iter().map(|n| n.kind.index()).collect();
    let s = config.input.crop;
    let visual = if config.input.features.visual() {
        VisualInput::Crops(
            Tensor::new([n, 3, s, s], (0..n * 3 * s * s).map(|_| rng.gen_range(0.0..1.0)).collect())
                .expect("sized"),
        )
    } else {
        VisualInput::None
    };
    GraphSample {
        artboard: "gradcheck".into(),
        window: 0,
        tree: ContainmentTree::build(Rect::new(0.0, 0.0, 750.0, 750.0), &[] as &[TreeItem]),
        graph: LayoutGraph::from_parts(nodes, arcs),
        layer_ids: (0..n).map(|i| (i > 0).then(|| format!("n{i}"))).collect(),
        types,
        geometry: Tensor::new([n, 4], (0..n * 4).map(|_| rng.gen_range(0.0..1.0)).collect()).expect("sized"),
        visual,
        labels: (0..n).map(|i| (i > 0).then_some((i * 7 + 1) % 2)).collect(),
    }
}

fn weighted_output(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(random_tensor(&mut rng, &shape));
    let y = tape.mul(out, w)?;
    Ok(tape.sum(y))
}

/// One attention layer of each kind (concat + ELU, average) on the
/// five-node graph; inputs are the node states and every layer parameter.
pub fn gat_layer_checks(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    let arcs = five_node_arcs();
    let index = ArcIndex {
        src: arcs.iter().map(|a| a.src).collect(),
        dst: arcs.iter().map(|a| a.dst).collect(),
        nodes: 5,
    };
    for (name, heads, combine, elu) in [
        ("gat_layer_concat", 4, Combine::Concat, true),
        ("gat_layer_average", 6, Combine::Average, false),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6a7);
        let mut params = Params::new();
        let layer = GatLayer::new(&mut params, &mut rng, "gat", 16, heads, 8, combine, elu);
        let mut inputs = vec![random_tensor(&mut rng, &[5, 16])];
        inputs.extend(params.tensors().iter().map(|t| t.cast::<f64>()));
        out.push(check(
            name,
            &inputs,
            |tape, v| {
                let bound = Bound::from_vars(v[1..].to_vec());
                let o = layer.forward(tape, &bound, &index, v[0])?;
                weighted_output(tape, o.out, 3)
            },
            cfg,
        )?);
    }
    Ok(out)
}

/// The whole model with its training loss on the five-node graph; every
/// parameter tensor is an input.
pub fn model_check(config: &ModelConfig, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let model = Model::new(config.clone(), cfg.seed)?;
    let sample = random_sample(config, 5, five_node_arcs(), cfg.seed ^ 0x5a);
    let inputs: Vec<Tensor<f64>> = model.params.tensors().iter().map(|t| t.cast()).collect();
    let labels: Vec<usize> = sample.labels.iter().map(|l| l.unwrap_or(0)).collect();
    let mask: Vec<f64> = sample.labels.iter().map(|l| if l.is_some() { 1.0 } else { 0.0 }).collect();
    check(
        &format!("model_{}", config.gnn),
        &inputs,
        |tape, v| {
            let bound = Bound::from_vars(v.to_vec());
            let o = model.forward(tape, &bound, &sample)?;
            tape.cross_entropy(o.logits, &labels, &mask)
        },
        cfg,
    )
}

/// Primitives, attention layers and the end-to-end model.
pub fn full_suite(config: &ModelConfig, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut out = primitive_suite(cfg)?;
    out.extend(gat_layer_checks(cfg)?);
    out.push(model_check(config, cfg)?);
    Ok(out)
}
