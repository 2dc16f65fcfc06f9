use crate::layer::{LayerType, Rect};

/// A layer as seen by tree construction.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeItem {
    /// Index into `Artboard::layers`.
    pub layer: usize,
    pub kind: LayerType,
    /// Window-local rect.
    pub rect: Rect,
    pub z: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    /// `None` for the root.
    pub layer: Option<usize>,
    pub kind: LayerType,
    pub rect: Rect,
    pub z: Option<usize>,
    pub parent: Option<usize>,
    /// Sorted by z.
    pub children: Vec<usize>,
}

/// Containment hierarchy of one window. Node 0 is the virtual root; node
/// `i + 1` is the `i`-th item in z order.
#[derive(Clone, Debug, PartialEq)]
pub struct ContainmentTree {
    pub nodes: Vec<TreeNode>,
}

/// `outer` may parent `inner`: it contains it, and identical rects nest the
/// later layer under the earlier one.
pub fn can_contain(outer: &TreeItem, inner: &TreeItem) -> bool {
    outer.z != inner.z
        && outer.rect.contains(&inner.rect)
        && (outer.rect != inner.rect || outer.z < inner.z)
}

/// `a` is a tighter parent than `b`: smaller area, then smaller half
/// perimeter (orders nested zero-area rects), then the later layer.
fn tighter(a: &TreeItem, b: &TreeItem) -> bool {
    let key = |t: &TreeItem| (t.rect.area(), t.rect.w + t.rect.h);
    match key(a).partial_cmp(&key(b)) {
        Some(std::cmp::Ordering::Less) => true,
        Some(std::cmp::Ordering::Equal) => a.z > b.z,
        _ => false,
    }
}

impl ContainmentTree {
    /// Builds the tree over `items`, inserting in z order.
    pub fn build(window: Rect, items: &[TreeItem]) -> Self {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by_key(|&i| items[i].z);
        Self::build_in_order(window, items, &order)
    }

    /// Online construction with an explicit insertion order. Each inserted
    /// layer takes its tightest inserted container as parent, then adopts any
    /// inserted layer for which it is a tighter container than the current
    /// parent. The resulting parent function does not depend on `order`.
    pub fn build_in_order(window: Rect, items: &[TreeItem], order: &[usize]) -> Self {
        let mut sorted: Vec<usize> = (0..items.len()).collect();
        sorted.sort_by_key(|&i| items[i].z);
        let mut node_of = vec![0; items.len()];
        for (n, &i) in sorted.iter().enumerate() {
            node_of[i] = n + 1;
        }

        // parent[i] is an item index; None = root
        let mut parent: Vec<Option<usize>> = vec![None; items.len()];
        let mut inserted: Vec<usize> = Vec::with_capacity(items.len());
        for &a in order {
            let mut best: Option<usize> = None;
            for &b in &inserted {
                if can_contain(&items[b], &items[a]) && best.is_none_or(|p| tighter(&items[b], &items[p])) {
                    best = Some(b);
                }
            }
            parent[a] = best;
            for &x in &inserted {
                if can_contain(&items[a], &items[x])
                    && parent[x].is_none_or(|p| tighter(&items[a], &items[p]))
                {
                    parent[x] = Some(a);
                }
            }
            inserted.push(a);
        }

        let mut nodes = Vec::with_capacity(items.len() + 1);
        nodes.push(TreeNode {
            layer: None,
            kind: LayerType::Canvas,
            rect: window,
            z: None,
            parent: None,
            children: Vec::new(),
        });
        for &i in &sorted {
            let it = &items[i];
            nodes.push(TreeNode {
                layer: Some(it.layer),
                kind: it.kind,
                rect: it.rect,
                z: Some(it.z),
                parent: Some(parent[i].map_or(0, |p| node_of[p])),
                children: Vec::new(),
            });
        }
        // nodes are in z order, so pushing in node order keeps children sorted
        for n in 1..nodes.len() {
            let p = nodes[n].parent.expect("non-root has a parent");
            nodes[p].children.push(n);
        }
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node indices in pre-order (root first, children by z).
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n].children.iter().rev());
        }
        out
    }

    /// Node holding the given layer index.
    pub fn node_of_layer(&self, layer: usize) -> Option<usize> {
        self.nodes.iter().position(|n| n.layer == Some(layer))
    }
}
