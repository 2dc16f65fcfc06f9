use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::tree::ContainmentTree;
use crate::layer::LayerType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArcKind {
    Tree,
    Sibling,
    #[serde(rename = "self")]
    SelfLoop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arc {
    pub src: usize,
    pub dst: usize,
    pub kind: ArcKind,
}

/// Graph node `i` is tree node `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub layer: Option<usize>,
    pub kind: LayerType,
}

/// Tree arcs parent→child, sibling cliques in both directions, and one
/// self-loop per node.
#[derive(Clone, Debug, PartialEq)]
pub struct LayoutGraph {
    pub nodes: Vec<GraphNode>,
    pub arcs: Vec<Arc>,
    src: Rc<[usize]>,
    dst: Rc<[usize]>,
}

impl LayoutGraph {
    pub fn from_tree(tree: &ContainmentTree) -> Self {
        let nodes = tree
            .nodes
            .iter()
            .map(|n| GraphNode {
                layer: n.layer,
                kind: n.kind,
            })
            .collect();
        let mut arcs = Vec::new();
        for (p, node) in tree.nodes.iter().enumerate() {
            for &c in &node.children {
                arcs.push(Arc {
                    src: p,
                    dst: c,
                    kind: ArcKind::Tree,
                });
            }
        }
        for node in &tree.nodes {
            for &a in &node.children {
                for &b in &node.children {
                    if a != b {
                        arcs.push(Arc {
                            src: a,
                            dst: b,
                            kind: ArcKind::Sibling,
                        });
                    }
                }
            }
        }
        for i in 0..tree.nodes.len() {
            arcs.push(Arc {
                src: i,
                dst: i,
                kind: ArcKind::SelfLoop,
            });
        }
        Self::from_parts(nodes, arcs)
    }

    /// Builds a graph from explicit arcs (used for relabelled or synthetic graphs).
    pub fn from_parts(nodes: Vec<GraphNode>, arcs: Vec<Arc>) -> Self {
        let src = arcs.iter().map(|a| a.src).collect();
        let dst = arcs.iter().map(|a| a.dst).collect();
        Self {
            nodes,
            arcs,
            src,
            dst,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Source node of every arc, in arc order.
    pub fn sources(&self) -> Rc<[usize]> {
        self.src.clone()
    }

    /// Destination node of every arc, in arc order.
    pub fn destinations(&self) -> Rc<[usize]> {
        self.dst.clone()
    }

    /// `N_i`: sources of the arcs into `i`.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.arcs.iter().filter(|a| a.dst == i).map(|a| a.src).collect()
    }
}
