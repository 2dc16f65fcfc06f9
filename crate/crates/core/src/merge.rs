//! Clusters fragmented layers of one window into merge groups.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ContainmentTree;
use crate::layer::Rect;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    /// Center-distance threshold in scaled (750-wide) pixels.
    pub tau: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self { tau: 40.0 }
    }
}

/// Groups as tree node indices; members sorted by z.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeGroups {
    /// Ordered by the smallest member z.
    pub groups: Vec<Vec<usize>>,
    pub singletons: Vec<usize>,
}

/// Merge adjacency over the positive nodes, in the order of `positives`.
///
/// Two positives are linked when their centers are closer than `tau`, or
/// when one is the containment parent of the other.
pub fn merge_adjacency(tree: &ContainmentTree, positives: &[usize], tau: f64) -> Vec<Vec<bool>> {
    let k = positives.len();
    let mut slot = vec![usize::MAX; tree.len()];
    for (s, &n) in positives.iter().enumerate() {
        slot[n] = s;
    }
    let mut adj = vec![vec![false; k]; k];
    for a in 0..k {
        let (ax, ay) = tree.nodes[positives[a]].rect.center();
        for b in a + 1..k {
            let (bx, by) = tree.nodes[positives[b]].rect.center();
            if (ax - bx).hypot(ay - by) < tau {
                adj[a][b] = true;
                adj[b][a] = true;
            }
        }
    }
    for n in tree.preorder() {
        let a = slot[n];
        if a == usize::MAX {
            continue;
        }
        for &c in &tree.nodes[n].children {
            let b = slot[c];
            if b != usize::MAX {
                adj[a][b] = true;
                adj[b][a] = true;
            }
        }
    }
    adj
}

/// Connected components of the merge adjacency. `positive[n]` flags tree
/// node `n`; the root is ignored.
pub fn merge_nodes(tree: &ContainmentTree, positive: &[bool], config: &MergeConfig) -> NodeGroups {
    // node order is z order, so components come out sorted by z
    let positives: Vec<usize> = (1..tree.len()).filter(|&n| positive.get(n).copied().unwrap_or(false)).collect();
    let adj = merge_adjacency(tree, &positives, config.tau);
    let mut seen = vec![false; positives.len()];
    let mut groups = Vec::new();
    let mut singletons = Vec::new();
    for start in 0..positives.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(a) = stack.pop() {
            comp.push(positives[a]);
            for (b, &linked) in adj[a].iter().enumerate() {
                if linked && !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        comp.sort_unstable();
        if comp.len() == 1 {
            singletons.push(comp[0]);
        } else {
            groups.push(comp);
        }
    }
    NodeGroups { groups, singletons }
}

/// Smallest rect containing every member.
pub fn group_bounds(rects: &[Rect]) -> Result<Rect> {
    let (first, rest) = rects
        .split_first()
        .ok_or_else(|| Error::Detections("bounds of an empty group".into()))?;
    Ok(rest.iter().fold(*first, |acc, r| acc.union(r)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeGroup {
    pub id: String,
    pub members: Vec<String>,
    pub bounds: Rect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeResult {
    pub groups: Vec<MergeGroup>,
    pub singletons: Vec<String>,
}

/// Merges the positive layers of one window. `ids[n]` is the layer id of
/// tree node `n`, `is_positive` selects positives by id, and `rect_of`
/// supplies the rect reported in group bounds.
pub fn merge_fragments(
    tree: &ContainmentTree,
    ids: &[Option<String>],
    is_positive: impl Fn(&str) -> bool,
    rect_of: impl Fn(usize) -> Rect,
    config: &MergeConfig,
) -> MergeResult {
    let positive: Vec<bool> = ids
        .iter()
        .map(|id| id.as_deref().is_some_and(&is_positive))
        .collect();
    let nodes = merge_nodes(tree, &positive, config);
    let id = |n: usize| ids[n].clone().expect("positives are layers");
    MergeResult {
        groups: nodes
            .groups
            .iter()
            .enumerate()
            .map(|(g, members)| MergeGroup {
                id: format!("g{g}"),
                members: members.iter().map(|&n| id(n)).collect(),
                bounds: group_bounds(&members.iter().map(|&n| rect_of(n)).collect::<Vec<_>>())
                    .expect("groups are non-empty"),
            })
            .collect(),
        singletons: nodes.singletons.iter().map(|&n| id(n)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TreeItem;
    use crate::layer::LayerType;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tree(rects: &[Rect]) -> ContainmentTree {
        let items: Vec<TreeItem> = rects
            .iter()
            .enumerate()
            .map(|(i, r)| TreeItem {
                layer: i,
                kind: LayerType::Oval,
                rect: *r,
                z: i,
            })
            .collect();
        ContainmentTree::build(Rect::new(0.0, 0.0, 750.0, 750.0), &items)
    }

    fn flags(n: usize, pos: &[usize]) -> Vec<bool> {
        (0..n).map(|i| pos.contains(&i)).collect()
    }

    #[test]
    fn no_positives_no_groups() {
        let t = tree(&[Rect::new(0.0, 0.0, 5.0, 5.0)]);
        let g = merge_nodes(&t, &flags(2, &[]), &MergeConfig::default());
        assert!(g.groups.is_empty() && g.singletons.is_empty());
    }

    #[test]
    fn close_leaves_form_a_group() {
        let t = tree(&[Rect::new(0.0, 0.0, 10.0, 10.0), Rect::new(10.0, 0.0, 10.0, 10.0)]);
        let g = merge_nodes(&t, &flags(3, &[1, 2]), &MergeConfig { tau: 40.0 });
        assert_eq!(g.groups, vec![vec![1, 2]]);
    }

    #[test]
    fn container_joins_its_positive_children() {
        let t = tree(&[
            Rect::new(0.0, 0.0, 300.0, 300.0),
            Rect::new(0.0, 0.0, 10.0, 10.0),
            Rect::new(280.0, 280.0, 10.0, 10.0),
        ]);
        let g = merge_nodes(&t, &flags(4, &[1, 2, 3]), &MergeConfig { tau: 40.0 });
        assert_eq!(g.groups, vec![vec![1, 2, 3]]);
        let g = merge_nodes(&t, &flags(4, &[2, 3]), &MergeConfig { tau: 40.0 });
        assert_eq!(g.singletons, vec![2, 3]);
    }

    #[test]
    fn bounds_examples() {
        let r = Rect::new(1.0, 2.0, 3.0, 4.0);
        assert_eq!(group_bounds(&[r]).unwrap(), r);
        assert_eq!(
            group_bounds(&[Rect::new(0.0, 0.0, 10.0, 10.0), Rect::new(20.0, 20.0, 10.0, 10.0)]).unwrap(),
            Rect::new(0.0, 0.0, 30.0, 30.0)
        );
        assert!(group_bounds(&[]).is_err());
    }

    #[test]
    fn ids_and_bounds_come_from_callbacks() {
        let t = tree(&[Rect::new(0.0, 0.0, 10.0, 10.0), Rect::new(5.0, 0.0, 10.0, 10.0), Rect::new(500.0, 0.0, 5.0, 5.0)]);
        let ids: Vec<Option<String>> = vec![None, Some("a".into()), Some("b".into()), Some("c".into())];
        let r = merge_fragments(&t, &ids, |id| id != "zz", |n| t.nodes[n].rect.scaled(0.5), &MergeConfig::default());
        assert_eq!(r.groups.len(), 1);
        assert_eq!(r.groups[0].id, "g0");
        assert_eq!(r.groups[0].members, vec!["a", "b"]);
        assert_eq!(r.groups[0].bounds, Rect::new(0.0, 0.0, 7.5, 5.0));
        assert_eq!(r.singletons, vec!["c"]);
    }

    struct UnionFind(Vec<usize>);

    impl UnionFind {
        fn find(&mut self, x: usize) -> usize {
            let mut r = x;
            while self.0[r] != r {
                r = self.0[r];
            }
            let mut c = x;
            while self.0[c] != r {
                let next = self.0[c];
                self.0[c] = r;
                c = next;
            }
            r
        }
        fn union(&mut self, a: usize, b: usize) {
            let (ra, rb) = (self.find(a), self.find(b));
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }

    /// Partition from a literally built matrix A over all tree nodes:
    /// rule 1 center distance, rule 2 positive parent/child, then union-find.
    fn oracle(t: &ContainmentTree, positive: &[bool], tau: f64) -> Vec<Vec<usize>> {
        let n = t.len();
        let mut a = vec![vec![0u8; n]; n];
        for i in 1..n {
            for j in 1..n {
                if i != j && positive[i] && positive[j] {
                    let (ci, cj) = (t.nodes[i].rect.center(), t.nodes[j].rect.center());
                    let d = ((ci.0 - cj.0).powi(2) + (ci.1 - cj.1).powi(2)).sqrt();
                    if d < tau {
                        a[i][j] = 1;
                    }
                }
            }
        }
        for i in 1..n {
            let p = t.nodes[i].parent.unwrap();
            if p != 0 && positive[p] && positive[i] {
                a[p][i] = 1;
                a[i][p] = 1;
            }
        }
        let mut uf = UnionFind((0..n).collect());
        for i in 0..n {
            for j in 0..n {
                if a[i][j] == 1 {
                    uf.union(i, j);
                }
            }
        }
        let mut comps: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for i in 1..n {
            if positive[i] {
                comps.entry(uf.find(i)).or_default().push(i);
            }
        }
        let mut out: Vec<Vec<usize>> = comps.into_values().collect();
        out.sort();
        out
    }

    fn all_components(g: &NodeGroups) -> Vec<Vec<usize>> {
        let mut v: Vec<Vec<usize>> = g.groups.clone();
        v.extend(g.singletons.iter().map(|&s| vec![s]));
        v.sort();
        v
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (ContainmentTree, Vec<bool>) {
        let n = rng.gen_range(0..=30);
        let rects: Vec<Rect> = (0..n)
            .map(|_| {
                let (x, y) = (rng.gen_range(0.0..700.0), rng.gen_range(0.0..700.0));
                let big = rng.gen_bool(0.2);
                let s = if big { 200.0 } else { 30.0 };
                Rect::new(x, y, rng.gen_range(1.0..s), rng.gen_range(1.0..s))
            })
            .collect();
        let t = tree(&rects);
        let positive = (0..t.len()).map(|i| i > 0 && rng.gen_bool(0.5)).collect();
        (t, positive)
    }

    #[test]
    fn matches_union_find_over_literal_adjacency() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let (t, positive) = random_instance(&mut rng);
            let tau = rng.gen_range(1.0..120.0);
            let got = merge_nodes(&t, &positive, &MergeConfig { tau });
            assert_eq!(all_components(&got), oracle(&t, &positive, tau));
            assert!(got.groups.iter().all(|g| g.len() >= 2));
        }
    }

    proptest! {
        #[test]
        fn larger_tau_coarsens(seed in any::<u64>(), tau in 1.0..100.0f64, extra in 0.0..100.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (t, positive) = random_instance(&mut rng);
            let fine = all_components(&merge_nodes(&t, &positive, &MergeConfig { tau }));
            let coarse = all_components(&merge_nodes(&t, &positive, &MergeConfig { tau: tau + extra }));
            for f in &fine {
                prop_assert!(coarse.iter().any(|c| f.iter().all(|m| c.contains(m))));
            }
        }

        #[test]
        fn negatives_never_grouped_and_order_is_irrelevant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (t, positive) = random_instance(&mut rng);
            let g = merge_nodes(&t, &positive, &MergeConfig::default());
            for m in g.groups.iter().flatten().chain(&g.singletons) {
                prop_assert!(positive[*m]);
            }
            let mut members: Vec<usize> = g.groups.iter().flatten().copied().collect();
            let before = members.len();
            members.sort();
            members.dedup();
            prop_assert_eq!(members.len(), before);
            // adjacency built from a shuffled positive list yields the same partition
            let mut order: Vec<usize> = (1..t.len()).filter(|&n| positive[n]).collect();
            order.shuffle(&mut rng);
            let adj = merge_adjacency(&t, &order, 40.0);
            let mut uf = UnionFind((0..order.len()).collect());
            for a in 0..order.len() {
                for b in 0..order.len() {
                    if adj[a][b] {
                        uf.union(a, b);
                    }
                }
            }
            let mut comps: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
            for a in 0..order.len() {
                comps.entry(uf.find(a)).or_default().push(order[a]);
            }
            let mut shuffled: Vec<Vec<usize>> = comps.into_values().map(|mut c| { c.sort(); c }).collect();
            shuffled.sort();
            prop_assert_eq!(shuffled, all_components(&g));
        }

        #[test]
        fn bounds_are_tight(raw in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64, 0.0..30.0f64, 0.0..30.0f64), 1..10)) {
            let rects: Vec<Rect> = raw.iter().map(|&(x, y, w, h)| Rect::new(x, y, w, h)).collect();
            let b = group_bounds(&rects).unwrap();
            let loose = Rect::new(b.x - 1e-9, b.y - 1e-9, b.w + 2e-9, b.h + 2e-9);
            for r in &rects {
                prop_assert!(loose.contains(r));
            }
            let shrunk = [
                Rect::new(b.x + 1.0, b.y, b.w - 1.0, b.h),
                Rect::new(b.x, b.y + 1.0, b.w, b.h - 1.0),
                Rect::new(b.x, b.y, b.w - 1.0, b.h),
                Rect::new(b.x, b.y, b.w, b.h - 1.0),
            ];
            for s in &shrunk {
                prop_assert!(rects.iter().any(|r| !s.contains(r)));
            }
        }
    }
}
