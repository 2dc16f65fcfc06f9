use std::rc::Rc;

use rand::Rng;

use crate::error::Result;
use crate::nn::{glorot, Bound, Linear, ParamId, Params, Real, Tape, Var};

/// Slope of every LeakyReLU in the attention layers.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combine {
    Concat,
    Average,
}

/// Multi-head graph attention with a fully-connected skip path.
#[derive(Clone, Debug)]
pub struct GatLayer {
    /// `F × heads·F'`, all heads side by side.
    pub weight: ParamId,
    /// Per head `2 × F'`: row 0 scores the destination, row 1 the source.
    pub attention: Vec<ParamId>,
    pub heads: usize,
    pub head_dim: usize,
    pub combine: Combine,
    pub skip: Linear,
    pub elu: bool,
}

/// Outputs of one layer, with the per-head attention coefficients (`E×1`).
pub struct GatOutput {
    pub out: Var,
    pub attention: Vec<Var>,
}

/// Arc endpoints shared by every layer of a forward pass.
#[derive(Clone, Debug)]
pub struct ArcIndex {
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    pub nodes: usize,
}

impl GatLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        params: &mut Params<f32>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        heads: usize,
        head_dim: usize,
        combine: Combine,
        elu: bool,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), glorot(rng, in_dim, heads * head_dim));
        let attention = (0..heads)
            .map(|k| params.add(format!("{name}.att{k}"), glorot(rng, 2, head_dim)))
            .collect();
        let skip = Linear::new(params, rng, &format!("{name}.skip"), in_dim, Self::width(heads, head_dim, combine), true);
        Self {
            weight,
            attention,
            heads,
            head_dim,
            combine,
            skip,
            elu,
        }
    }

    fn width(heads: usize, head_dim: usize, combine: Combine) -> usize {
        match combine {
            Combine::Concat => heads * head_dim,
            Combine::Average => head_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        Self::width(self.heads, self.head_dim, self.combine)
    }

    /// Per head: `e = LeakyReLU(a_dst·Wh_i + a_src·Wh_j)` over arcs `j→i`,
    /// `α = softmax_i(e)`, `h'_i = LeakyReLU(Σ_j α_ij Wh_j)`; heads are
    /// combined, the skip path added, and ELU applied when enabled.
    pub fn forward<S: Real>(&self, tape: &mut Tape<S>, p: &Bound, arcs: &ArcIndex, h: Var) -> Result<GatOutput> {
        let wh = tape.matmul(h, p.var(self.weight))?;
        let mut outs = Vec::with_capacity(self.heads);
        let mut attention = Vec::with_capacity(self.heads);
        for (k, &att) in self.attention.iter().enumerate() {
            let whk = if self.heads == 1 {
                wh
            } else {
                tape.slice_cols(wh, k * self.head_dim, self.head_dim)?
            };
            let scores = tape.matmul_nt(whk, p.var(att))?;
            let s_dst = tape.slice_cols(scores, 0, 1)?;
            let s_src = tape.slice_cols(scores, 1, 1)?;
            let e_dst = tape.gather_rows(s_dst, arcs.dst.clone())?;
            let e_src = tape.gather_rows(s_src, arcs.src.clone())?;
            let e = tape.add(e_dst, e_src)?;
            let e = tape.leaky_relu(e, LEAKY_SLOPE);
            let alpha = tape.segment_softmax(e, arcs.dst.clone(), arcs.nodes)?;
            let msg = tape.gather_rows(whk, arcs.src.clone())?;
            let msg = tape.row_scale(msg, alpha)?;
            let agg = tape.scatter_add_rows(msg, arcs.dst.clone(), arcs.nodes)?;
            outs.push(tape.leaky_relu(agg, LEAKY_SLOPE));
            attention.push(alpha);
        }
        let combined = match self.combine {
            Combine::Concat if outs.len() == 1 => outs[0],
            Combine::Concat => tape.concat(&outs)?,
            Combine::Average => {
                let mut acc = outs[0];
                for &o in &outs[1..] {
                    acc = tape.add(acc, o)?;
                }
                tape.scale(acc, 1.0 / self.heads as f64)
            }
        };
        let skip = self.skip.forward(tape, p, h)?;
        let out = tape.add(combined, skip)?;
        let out = if self.elu { tape.elu(out) } else { out };
        Ok(GatOutput { out, attention })
    }
}

/// Mean over in-neighbours, then `ReLU(Linear(·))`, plus a skip path.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub linear: Linear,
    pub skip: Linear,
}

impl GcnLayer {
    pub fn new<R: Rng>(params: &mut Params<f32>, rng: &mut R, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            linear: Linear::new(params, rng, &format!("{name}.linear"), in_dim, out_dim, true),
            skip: Linear::new(params, rng, &format!("{name}.skip"), in_dim, out_dim, true),
        }
    }

    pub fn forward<S: Real>(&self, tape: &mut Tape<S>, p: &Bound, arcs: &ArcIndex, h: Var) -> Result<Var> {
        let msg = tape.gather_rows(h, arcs.src.clone())?;
        let mean = tape.scatter_mean_rows(msg, arcs.dst.clone(), arcs.nodes)?;
        let y = self.linear.forward(tape, p, mean)?;
        let y = tape.relu(y);
        let skip = self.skip.forward(tape, p, h)?;
        tape.add(y, skip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(heads: usize, combine: Combine, elu: bool) -> (Params<f32>, GatLayer) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = Params::new();
        let l = GatLayer::new(&mut params, &mut rng, "gat", 3, heads, 2, combine, elu);
        (params, l)
    }

    fn arcs(pairs: &[(usize, usize)], nodes: usize) -> ArcIndex {
        ArcIndex {
            src: pairs.iter().map(|p| p.0).collect(),
            dst: pairs.iter().map(|p| p.1).collect(),
            nodes,
        }
    }

    fn leaky(x: f64) -> f64 {
        if x >= 0.0 {
            x
        } else {
            0.2 * x
        }
    }

    #[test]
    fn single_node_attends_to_itself() {
        let (params, l) = layer(2, Combine::Concat, false);
        let mut tape = Tape::<f64>::new();
        let p = params.bind(&mut tape);
        let h = tape.constant(Tensor::from_f64([1, 3], &[0.3, -0.2, 0.9]).unwrap());
        let out = l.forward(&mut tape, &p, &arcs(&[(0, 0)], 1), h).unwrap();
        for a in &out.attention {
            assert_eq!(tape.value(*a).data(), &[1.0]);
        }
        // out = concat(leaky(W h)) + skip(h)
        let w = params.get(l.weight).cast::<f64>();
        let sw = params.get(l.skip.weight).cast::<f64>();
        let hv = [0.3, -0.2, 0.9];
        for c in 0..4 {
            let wh: f64 = (0..3).map(|r| hv[r] * w.data()[r * 4 + c]).sum();
            let sk: f64 = (0..3).map(|r| hv[r] * sw.data()[r * 4 + c]).sum();
            assert!((tape.value(out.out).data()[c] - (leaky(wh) + sk)).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_linked_nodes_split_attention_evenly() {
        let (params, l) = layer(3, Combine::Concat, true);
        let mut tape = Tape::<f64>::new();
        let p = params.bind(&mut tape);
        let h = tape.constant(Tensor::from_f64([2, 3], &[0.5, 0.1, -0.4, 0.5, 0.1, -0.4]).unwrap());
        let out = l.forward(&mut tape, &p, &arcs(&[(0, 1), (1, 0), (0, 0), (1, 1)], 2), h).unwrap();
        for a in &out.attention {
            for v in tape.value(*a).data() {
                assert!((v - 0.5).abs() < 1e-12);
            }
        }
    }

    /// Dense evaluation of the layer on a small graph: an adjacency matrix
    /// and explicit loops over heads, destinations and neighbours.
    fn dense_reference(params: &Params<f32>, l: &GatLayer, h: &[Vec<f64>], adj: &[Vec<bool>]) -> Vec<Vec<f64>> {
        let n = h.len();
        let f = h[0].len();
        let (heads, d) = (l.heads, l.head_dim);
        let w = params.get(l.weight).cast::<f64>();
        let wh: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..heads * d).map(|c| (0..f).map(|r| h[i][r] * w.data()[r * heads * d + c]).sum()).collect())
            .collect();
        let mut per_head = vec![vec![vec![0.0; d]; n]; heads];
        for k in 0..heads {
            let a = params.get(l.attention[k]).cast::<f64>();
            let (a_dst, a_src) = (&a.data()[..d], &a.data()[d..]);
            for i in 0..n {
                let score = |j: usize| {
                    let s: f64 = (0..d).map(|c| a_dst[c] * wh[i][k * d + c] + a_src[c] * wh[j][k * d + c]).sum();
                    leaky(s)
                };
                let nbrs: Vec<usize> = (0..n).filter(|&j| adj[j][i]).collect();
                let z: f64 = nbrs.iter().map(|&j| score(j).exp()).sum();
                for c in 0..d {
                    let s: f64 = nbrs.iter().map(|&j| score(j).exp() / z * wh[j][k * d + c]).sum();
                    per_head[k][i][c] = leaky(s);
                }
            }
        }
        let sw = params.get(l.skip.weight).cast::<f64>();
        let sb = params.get(l.skip.bias.unwrap()).cast::<f64>();
        let width = l.out_dim();
        (0..n)
            .map(|i| {
                (0..width)
                    .map(|c| {
                        let comb = match l.combine {
                            Combine::Concat => per_head[c / d][i][c % d],
                            Combine::Average => (0..heads).map(|k| per_head[k][i][c]).sum::<f64>() / heads as f64,
                        };
                        let skip: f64 = (0..f).map(|r| h[i][r] * sw.data()[r * width + c]).sum::<f64>() + sb.data()[c];
                        let v = comb + skip;
                        if l.elu {
                            if v > 0.0 { v } else { v.exp_m1() }
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn path_graph_matches_dense_reference() {
        // 0 → 1 → 2 tree arcs plus self-loops
        let pairs = [(0, 1), (1, 2), (0, 0), (1, 1), (2, 2)];
        let mut adj = vec![vec![false; 3]; 3];
        for &(s, d) in &pairs {
            adj[s][d] = true;
        }
        let h = vec![vec![0.2, -0.7, 0.4], vec![-0.1, 0.3, 0.8], vec![0.6, 0.6, -0.5]];
        for (heads, combine, elu) in [(4, Combine::Concat, true), (6, Combine::Average, false)] {
            let (params, l) = layer(heads, combine, elu);
            let mut tape = Tape::<f64>::new();
            let p = params.bind(&mut tape);
            let hv = tape.constant(Tensor::new([3, 3], h.concat()).unwrap());
            let out = l.forward(&mut tape, &p, &arcs(&pairs, 3), hv).unwrap();
            let reference = dense_reference(&params, &l, &h, &adj);
            let got = tape.value(out.out).data();
            for i in 0..3 {
                for c in 0..l.out_dim() {
                    assert!((got[i * l.out_dim() + c] - reference[i][c]).abs() < 1e-12);
                }
            }
        }
    }
}
