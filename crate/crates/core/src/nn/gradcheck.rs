//! Central finite-difference gradient checks in double precision.

use std::rc::Rc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::tape::{RoiBins, Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Coordinates probed per input tensor; larger tensors are sampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_coords: 24,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(input index, coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub passed: bool,
}

/// Compares the tape gradient of the scalar `f(inputs)` with central
/// differences, perturbing each probed input coordinate by ±`step`.
pub fn check<F>(name: &str, inputs: &[Tensor<f64>], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        name: name.to_string(),
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
        passed: true,
    };
    for (ti, t) in inputs.iter().enumerate() {
        let coords: Vec<usize> = if t.len() <= cfg.max_coords {
            (0..t.len()).collect()
        } else {
            let mut c = sample(&mut rng, t.len(), cfg.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for c in coords {
            let orig = t.data()[c];
            work[ti].data_mut()[c] = orig + cfg.step;
            let plus = eval(&work)?;
            work[ti].data_mut()[c] = orig - cfg.step;
            let minus = eval(&work)?;
            work[ti].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[ti][c];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            report.checked += 1;
            if err > report.max_rel_err || !err.is_finite() {
                report.max_rel_err = err;
                report.worst = Some((ti, c));
            }
        }
    }
    report.passed = report.max_rel_err.is_finite() && report.max_rel_err <= cfg.tolerance;
    Ok(report)
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("length matches shape")
}

/// Reduces any tensor to a scalar with fixed random weights, so every output
/// coordinate receives a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape<f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(x).to_vec();
    let w = tape.constant(random_tensor(&mut rng, &shape));
    let y = tape.mul(x, w)?;
    Ok(tape.sum(y))
}

/// One check per tape primitive on small random shapes.
pub fn primitive_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut r = |shape: &[usize]| random_tensor(&mut rng, shape);
    let mut out = Vec::new();

    out.push(check("matmul", &[r(&[3, 4]), r(&[4, 5])], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        weighted_sum(t, y, 1)
    }, cfg)?);
    out.push(check("matmul_nt", &[r(&[3, 4]), r(&[5, 4])], |t, v| {
        let y = t.matmul_nt(v[0], v[1])?;
        weighted_sum(t, y, 2)
    }, cfg)?);
    out.push(check("add", &[r(&[2, 3]), r(&[2, 3])], |t, v| {
        let y = t.add(v[0], v[1])?;
        weighted_sum(t, y, 3)
    }, cfg)?);
    out.push(check("add_row", &[r(&[4, 3]), r(&[3])], |t, v| {
        let y = t.add_row(v[0], v[1])?;
        weighted_sum(t, y, 4)
    }, cfg)?);
    out.push(check("mul", &[r(&[2, 3]), r(&[2, 3])], |t, v| {
        let y = t.mul(v[0], v[1])?;
        weighted_sum(t, y, 5)
    }, cfg)?);
    out.push(check("scale", &[r(&[5])], |t, v| {
        let y = t.scale(v[0], -1.7);
        weighted_sum(t, y, 6)
    }, cfg)?);
    out.push(check("concat", &[r(&[3, 2]), r(&[3, 4]), r(&[3, 1])], |t, v| {
        let y = t.concat(v)?;
        weighted_sum(t, y, 7)
    }, cfg)?);
    out.push(check("slice_cols", &[r(&[3, 6])], |t, v| {
        let y = t.slice_cols(v[0], 2, 3)?;
        weighted_sum(t, y, 8)
    }, cfg)?);
    out.push(check("reshape", &[r(&[2, 6])], |t, v| {
        let y = t.reshape(v[0], &[3, 4])?;
        weighted_sum(t, y, 9)
    }, cfg)?);
    out.push(check("leaky_relu", &[r(&[4, 4])], |t, v| {
        let y = t.leaky_relu(v[0], 0.2);
        weighted_sum(t, y, 10)
    }, cfg)?);
    out.push(check("elu", &[r(&[4, 4])], |t, v| {
        let y = t.elu(v[0]);
        weighted_sum(t, y, 11)
    }, cfg)?);
    out.push(check("relu", &[r(&[4, 4])], |t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y, 12)
    }, cfg)?);
    out.push(check("conv2d", &[r(&[2, 2, 5, 6]), r(&[3, 2, 3, 3]), r(&[3])], |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 1)?;
        weighted_sum(t, y, 13)
    }, cfg)?);
    out.push(check("conv2d_valid", &[r(&[1, 2, 5, 5]), r(&[2, 2, 3, 3]), r(&[2])], |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 0)?;
        weighted_sum(t, y, 14)
    }, cfg)?);
    out.push(check("maxpool2", &[r(&[2, 2, 4, 5])], |t, v| {
        let y = t.maxpool2(v[0])?;
        weighted_sum(t, y, 15)
    }, cfg)?);
    out.push(check("mean", &[r(&[3, 3])], |t, v| {
        let y = t.elu(v[0]);
        t.mean(y)
    }, cfg)?);
    out.push(check("sum", &[r(&[3, 3])], |t, v| {
        let y = t.elu(v[0]);
        Ok(t.sum(y))
    }, cfg)?);
    let idx: Rc<[usize]> = vec![2, 0, 2, 1, 3, 0].into();
    out.push(check("gather_rows", &[r(&[4, 3])], |t, v| {
        let y = t.gather_rows(v[0], idx.clone())?;
        weighted_sum(t, y, 16)
    }, cfg)?);
    out.push(check("scatter_add_rows", &[r(&[6, 3])], |t, v| {
        let y = t.scatter_add_rows(v[0], idx.clone(), 5)?;
        weighted_sum(t, y, 17)
    }, cfg)?);
    out.push(check("scatter_mean_rows", &[r(&[6, 3])], |t, v| {
        let y = t.scatter_mean_rows(v[0], idx.clone(), 5)?;
        weighted_sum(t, y, 18)
    }, cfg)?);
    out.push(check("row_scale", &[r(&[6, 3]), r(&[6, 1])], |t, v| {
        let y = t.row_scale(v[0], v[1])?;
        weighted_sum(t, y, 19)
    }, cfg)?);
    out.push(check("segment_softmax", &[r(&[6, 1])], |t, v| {
        let y = t.segment_softmax(v[0], idx.clone(), 4)?;
        weighted_sum(t, y, 20)
    }, cfg)?);
    out.push(check("cross_entropy", &[r(&[4, 2])], |t, v| {
        t.cross_entropy(v[0], &[0, 1, 1, 0], &[1.0, 0.0, 2.0, 1.0])
    }, cfg)?);
    let rois = vec![
        Some(RoiBins {
            rows: vec![(0, 2), (1, 3), (2, 5)],
            cols: vec![(0, 1), (1, 4), (3, 6)],
        }),
        None,
        Some(RoiBins {
            rows: vec![(3, 4), (3, 4), (4, 5)],
            cols: vec![(5, 6), (5, 6), (5, 6)],
        }),
    ];
    out.push(check("roi_pool", &[r(&[1, 2, 5, 6])], |t, v| {
        let y = t.roi_pool(v[0], &rois)?;
        weighted_sum(t, y, 21)
    }, cfg)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        let cfg = GradCheckConfig::default();
        for r in primitive_suite(&cfg).unwrap() {
            assert!(r.passed, "{} max rel err {:e} at {:?}", r.name, r.max_rel_err, r.worst);
            assert!(r.checked > 0);
        }
    }

    #[test]
    fn a_detached_path_is_caught() {
        let cfg = GradCheckConfig::default();
        let x = Tensor::from_f64([4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let ok = check("sum", &[x.clone()], |t, v| Ok(t.sum(v[0])), &cfg).unwrap();
        assert!(ok.passed);
        // the second term depends on x but is invisible to the tape
        let bad = check(
            "detached",
            &[x],
            |t, v| {
                let copy = t.constant(t.value(v[0]).clone());
                let both = t.add(v[0], copy)?;
                Ok(t.sum(both))
            },
            &cfg,
        )
        .unwrap();
        assert!(!bad.passed);
        assert!((bad.max_rel_err - 0.5).abs() < 1e-6);
    }
}
