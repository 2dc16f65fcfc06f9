//! Windowing, containment trees and layout graphs.

mod layout;
mod tree;
mod window;

use serde::Serialize;

pub use layout::{Arc, ArcKind, GraphNode, LayoutGraph};
pub use tree::{can_contain, ContainmentTree, TreeItem, TreeNode};
pub use window::{window_layout, window_of, Window, Windowed, WINDOW};

pub(crate) use window::tap;

use crate::error::Result;
use crate::layer::{Artboard, LayerType, Rect};

/// Tree and graph of one window, in window-local coordinates.
#[derive(Clone, Debug)]
pub struct WindowGraph {
    pub window: Window,
    pub tree: ContainmentTree,
    pub graph: LayoutGraph,
}

/// Builds the per-window containment trees and layout graphs.
pub fn build_window_graphs(artboard: &Artboard) -> Result<(Windowed, Vec<WindowGraph>)> {
    let w = window_layout(artboard)?;
    let graphs = w
        .windows
        .iter()
        .map(|win| {
            let items: Vec<TreeItem> = win
                .members
                .iter()
                .map(|&i| TreeItem {
                    layer: i,
                    kind: artboard.layers[i].kind,
                    rect: win.local(&w.rects[i]),
                    z: artboard.layers[i].z,
                })
                .collect();
            let tree = ContainmentTree::build(Rect::new(0.0, 0.0, WINDOW as f64, WINDOW as f64), &items);
            let graph = LayoutGraph::from_tree(&tree);
            WindowGraph {
                window: win.clone(),
                tree,
                graph,
            }
        })
        .collect();
    Ok((w, graphs))
}

#[derive(Serialize)]
struct DumpNode<'a> {
    idx: usize,
    layer_id: Option<&'a str>,
    kind: LayerType,
}

#[derive(Serialize)]
struct DumpWindow<'a> {
    window: usize,
    nodes: Vec<DumpNode<'a>>,
    arcs: &'a [Arc],
}

#[derive(Serialize)]
struct Dump<'a> {
    artboard: &'a str,
    windows: Vec<DumpWindow<'a>>,
}

/// Debug dump of every window graph.
pub fn dump_json(artboard: &Artboard, graphs: &[WindowGraph]) -> serde_json::Value {
    let windows = graphs
        .iter()
        .map(|wg| DumpWindow {
            window: wg.window.index,
            nodes: wg
                .graph
                .nodes
                .iter()
                .enumerate()
                .map(|(idx, n)| DumpNode {
                    idx,
                    layer_id: n.layer.map(|l| artboard.layers[l].id.as_str()),
                    kind: n.kind,
                })
                .collect(),
            arcs: &wg.graph.arcs,
        })
        .collect();
    serde_json::to_value(Dump {
        artboard: &artboard.id,
        windows,
    })
    .expect("dump serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::parse_artboard;

    #[test]
    fn dump_lists_nodes_and_arcs() {
        let a = parse_artboard(
            br#"{"artboard_id":"a","width":375,"height":500,"layers":[
                {"id":"box","name":"","type":"rectangle","x":0,"y":0,"w":100,"h":100},
                {"id":"dot","name":"","type":"oval","x":10,"y":10,"w":5,"h":5},
                {"id":"low","name":"","type":"text","x":0,"y":400,"w":50,"h":20}]}"#,
        )
        .unwrap();
        let (_, graphs) = build_window_graphs(&a).unwrap();
        assert_eq!(graphs.len(), 2);
        let d = dump_json(&a, &graphs);
        let w0 = &d["windows"][0];
        assert_eq!(w0["nodes"][0]["layer_id"], serde_json::Value::Null);
        assert_eq!(w0["nodes"][0]["kind"], "canvas");
        assert_eq!(w0["nodes"][2]["layer_id"], "dot");
        assert_eq!(w0["arcs"][0], serde_json::json!({"src": 0, "dst": 1, "kind": "tree"}));
        assert_eq!(w0["arcs"].as_array().unwrap().len(), 2 + 3);
        assert_eq!(d["windows"][1]["nodes"][1]["layer_id"], "low");
    }
}
