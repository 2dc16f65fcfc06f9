use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{glorot, he, Bound, ParamId, Params};
use super::real::Real;
use super::tape::{RoiBins, Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Fully-connected layer `x·W (+ b)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        params: &mut Params<f32>,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), glorot(rng, fan_in, fan_out));
        let bias = bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros([fan_out])));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<S: Real>(&self, tape: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.weight))?;
        match self.bias {
            Some(b) => tape.add_row(y, p.var(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    /// Output channels of the three 3×3 conv stages.
    pub channels: [usize; 3],
    /// Width of the visual feature vector.
    pub out_dim: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            channels: [16, 32, 64],
            out_dim: 128,
        }
    }
}

/// Three conv(3×3, pad 1) + ReLU + maxpool(2) stages followed by one
/// fully-connected layer. The FC input is either the flattened final feature
/// map (crop inputs) or an RoI-pooled block of it.
#[derive(Clone, Debug)]
pub struct SmallCnn {
    convs: Vec<(ParamId, ParamId)>,
    pub fc: Linear,
    pub config: CnnConfig,
}

impl SmallCnn {
    /// `fc_in` is the flattened width the FC layer consumes.
    pub fn new<R: Rng>(
        params: &mut Params<f32>,
        rng: &mut R,
        name: &str,
        config: CnnConfig,
        fc_in: usize,
    ) -> Self {
        let mut convs = Vec::new();
        let mut cin = 3;
        for (i, &cout) in config.channels.iter().enumerate() {
            let w = params.add(
                format!("{name}.conv{i}.weight"),
                he(rng, vec![cout, cin, 3, 3], cin * 9),
            );
            let b = params.add(format!("{name}.conv{i}.bias"), Tensor::zeros([cout]));
            convs.push((w, b));
            cin = cout;
        }
        let fc = Linear::new(params, rng, &format!("{name}.fc"), fc_in, config.out_dim, true);
        Self { convs, fc, config }
    }

    /// Flattened FC width for square crops of side `crop`.
    pub fn crop_fc_in(config: &CnnConfig, crop: usize) -> usize {
        let side = crop >> 3;
        config.channels[2] * side * side
    }

    pub fn out_channels(&self) -> usize {
        self.config.channels[2]
    }

    /// Conv trunk: `N×3×H×W` → `N×C×H/8×W/8`.
    pub fn trunk<S: Real>(&self, tape: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let mut cur = x;
        for &(w, b) in &self.convs {
            let y = tape.conv2d(cur, p.var(w), p.var(b), 1)?;
            let y = tape.relu(y);
            cur = tape.maxpool2(y)?;
        }
        Ok(cur)
    }

    /// Visual vectors for a batch of crops `N×3×S×S` → `N×out_dim`.
    pub fn forward_crops<S: Real>(&self, tape: &mut Tape<S>, p: &Bound, crops: Var) -> Result<Var> {
        let fmap = self.trunk(tape, p, crops)?;
        let shape = tape.shape(fmap).to_vec();
        let flat = tape.reshape(fmap, &[shape[0], shape[1..].iter().product()])?;
        self.fc.forward(tape, p, flat)
    }

    /// Visual vectors for regions of one patch `1×3×P×P` → `R×out_dim`.
    pub fn forward_rois<S: Real>(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        patch: Var,
        rois: &[Option<RoiBins>],
    ) -> Result<Var> {
        let fmap = self.trunk(tape, p, patch)?;
        let pooled = tape.roi_pool(fmap, rois)?;
        self.fc.forward(tape, p, pooled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn crop_branch_emits_out_dim_for_64px_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = Params::new();
        let cfg = CnnConfig::default();
        let cnn = SmallCnn::new(&mut params, &mut rng, "cnn", cfg, SmallCnn::crop_fc_in(&cfg, 64));
        let mut tape = Tape::<f32>::new();
        let p = params.bind(&mut tape);
        let x = tape.constant(Tensor::zeros([2, 3, 64, 64]));
        let y = cnn.forward_crops(&mut tape, &p, x).unwrap();
        assert_eq!(tape.shape(y), &[2, 128]);
    }

    #[test]
    fn roi_branch_consumes_pooled_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = Params::new();
        let cfg = CnnConfig::default();
        let cnn = SmallCnn::new(&mut params, &mut rng, "cnn", cfg, 64 * 25);
        let mut tape = Tape::<f32>::new();
        let p = params.bind(&mut tape);
        let x = tape.constant(Tensor::zeros([1, 3, 40, 40]));
        let bins = RoiBins {
            rows: (0..5).map(|i| (i, i + 1)).collect(),
            cols: (0..5).map(|i| (i, i + 1)).collect(),
        };
        let y = cnn.forward_rois(&mut tape, &p, x, &[Some(bins), None]).unwrap();
        assert_eq!(tape.shape(y), &[2, 128]);
    }
}
