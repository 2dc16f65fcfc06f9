use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{Confusion, Metrics};
use super::model::{positive_probs, Model, ModelConfig};
use super::sample::GraphSample;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Checkpoint, PlateauSchedule, Tape, Tensor, MIN_LR};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Weight each class by the inverse of its training frequency.
    pub class_weighted: bool,
    /// Probability at or above which a node counts as fragmented.
    pub threshold: f64,
    /// Stop early once validation accuracy reaches this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 50,
            lr: 1e-3,
            patience: 10,
            min_lr: MIN_LR,
            class_weighted: false,
            threshold: 0.5,
            stop_at_accuracy: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val: Metrics,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_precision,val_recall,val_accuracy,val_f1,lr";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val.precision, r.val.recall, r.val.accuracy, r.val.f1, r.lr
        ));
    }
    out
}

pub struct TrainOutcome {
    /// Checkpoint of the epoch with the best validation F1 (epoch 0 = initialization).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub last: Model,
}

fn labels_and_mask(sample: &GraphSample, class_weights: [f64; 2]) -> (Vec<usize>, Vec<f64>) {
    let labels = sample.labels.iter().map(|l| l.unwrap_or(0)).collect();
    let mask = sample
        .labels
        .iter()
        .map(|l| l.map_or(0.0, |c| class_weights[c]))
        .collect();
    (labels, mask)
}

/// Mean masked cross-entropy and the positive probabilities, without gradients.
pub fn loss_and_probs(model: &Model, sample: &GraphSample, class_weights: [f64; 2]) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::<f32>::new();
    let p = model.params.bind(&mut tape);
    let out = model.forward(&mut tape, &p, sample)?;
    let probs = positive_probs(tape.value(out.logits).data());
    let (labels, mask) = labels_and_mask(sample, class_weights);
    let loss = tape.cross_entropy(out.logits, &labels, &mask)?;
    Ok((tape.value(loss).data()[0] as f64, probs))
}

/// Validation loss and confusion over labeled non-root nodes.
pub fn validate(model: &Model, samples: &[GraphSample], threshold: f64) -> Result<(f64, Metrics)> {
    let mut conf = Confusion::default();
    let mut total = 0.0;
    let mut graphs = 0usize;
    for s in samples.iter().filter(|s| s.labeled() > 0) {
        let (loss, probs) = loss_and_probs(model, s, [1.0, 1.0])?;
        total += loss;
        graphs += 1;
        for (p, l) in probs.iter().zip(&s.labels) {
            if let Some(l) = l {
                conf.add(*p >= threshold, *l == 1);
            }
        }
    }
    let loss = if graphs == 0 { 0.0 } else { total / graphs as f64 };
    Ok((loss, conf.metrics()))
}

pub fn evaluate(model: &Model, samples: &[GraphSample], threshold: f64) -> Result<Metrics> {
    let mut conf = Confusion::default();
    for s in samples.iter().filter(|s| s.labeled() > 0) {
        let probs = model.predict(s)?;
        for (p, l) in probs.iter().zip(&s.labels) {
            if let Some(l) = l {
                conf.add(*p >= threshold, *l == 1);
            }
        }
    }
    Ok(conf.metrics())
}

/// Packs the model (and optionally the optimizer moments) into a checkpoint.
pub fn to_checkpoint(model: &Model, adam: Option<&AdamState>, extra: serde_json::Value) -> Checkpoint {
    let mut tensors: Vec<(String, Tensor<f32>)> = model
        .params
        .names()
        .iter()
        .cloned()
        .zip(model.params.tensors().iter().cloned())
        .collect();
    let mut meta = serde_json::json!({
        "model": model.config,
        "parameters": model.params.count(),
    });
    if let Some(adam) = adam {
        meta["adam"] = serde_json::to_value(adam).expect("adam serializes");
        for (kind, moments) in [("m", &adam.m), ("v", &adam.v)] {
            for (name, (t, m)) in model.params.names().iter().zip(model.params.tensors().iter().zip(moments)) {
                tensors.push((
                    format!("adam.{kind}.{name}"),
                    Tensor::new(t.shape().to_vec(), m.clone()).expect("moments match params"),
                ));
            }
        }
    }
    if let serde_json::Value::Object(extra) = extra {
        for (k, v) in extra {
            meta[k] = v;
        }
    }
    Checkpoint { meta, tensors }
}

pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<Model> {
    let config: ModelConfig = serde_json::from_value(
        ck.meta
            .get("model")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("meta has no model description".into()))?,
    )
    .map_err(|e| Error::Checkpoint(format!("model description: {e}")))?;
    let mut model = Model::new(config, 0)?;
    model.load_params(&ck.tensors)?;
    Ok(model)
}

fn class_weights(train: &[GraphSample], weighted: bool) -> Result<[f64; 2]> {
    let mut counts = [0usize; 2];
    for s in train {
        for l in s.labels.iter().flatten() {
            counts[*l] += 1;
        }
    }
    if counts[0] + counts[1] == 0 {
        return Err(Error::Dataset("training split has no labeled layers".into()));
    }
    if counts[1] == 0 {
        return Err(Error::Dataset("training labels are all negative".into()));
    }
    if !weighted || counts[0] == 0 {
        return Ok([1.0, 1.0]);
    }
    let total = (counts[0] + counts[1]) as f64;
    Ok([total / (2.0 * counts[0] as f64), total / (2.0 * counts[1] as f64)])
}

/// Full-batch-per-graph training with Adam and the plateau schedule; keeps
/// the checkpoint with the best validation F1.
pub fn train(
    mut model: Model,
    train: &[GraphSample],
    val: &[GraphSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let weights = class_weights(train, cfg.class_weighted)?;
    if !val.iter().any(|s| s.labeled() > 0) {
        return Err(Error::Dataset("validation split has no labeled layers".into()));
    }
    let trainable: Vec<usize> = (0..train.len()).filter(|&i| train[i].labeled() > 0).collect();
    let mut adam = AdamState::new(&model.params, cfg.lr);
    let mut schedule = PlateauSchedule::new(cfg.lr);
    schedule.patience = cfg.patience;
    schedule.floor = cfg.min_lr.max(MIN_LR);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let meta = |epoch: usize, f1: Option<f64>| {
        serde_json::json!({"seed": cfg.seed, "epoch": epoch, "val_f1": f1, "train": cfg})
    };
    let mut best = to_checkpoint(&model, Some(&adam), meta(0, None));
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut tape = Tape::<f32>::new();

    for epoch in 1..=cfg.epochs {
        let lr = adam.lr;
        let mut order = trainable.clone();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let sample = &train[i];
            tape.reset();
            let p = model.params.bind(&mut tape);
            let out = model.forward(&mut tape, &p, sample)?;
            let (labels, mask) = labels_and_mask(sample, weights);
            let loss = tape.cross_entropy(out.logits, &labels, &mask)?;
            total += tape.value(loss).data()[0] as f64;
            tape.backward(loss)?;
            let grads: Vec<Option<Vec<f32>>> = p.vars().iter().map(|&v| tape.grad(v).map(<[f32]>::to_vec)).collect();
            adam.step(&mut model.params, &grads)?;
        }
        let train_loss = total / order.len() as f64;
        let (val_loss, metrics) = validate(&model, val, cfg.threshold)?;
        adam.lr = schedule.update(val_loss);
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val: metrics,
            lr,
        };
        if record.val.f1 > best_f1 {
            best_f1 = record.val.f1;
            best_epoch = epoch;
            best = to_checkpoint(&model, Some(&adam), meta(epoch, Some(best_f1)));
        }
        on_epoch(&record);
        let reached = cfg.stop_at_accuracy.is_some_and(|a| record.val.accuracy >= a);
        history.push(record);
        if reached {
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
        last: model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::gradcheck::{five_node_arcs, random_sample};
    use crate::gnn::{GnnKind, InputConfig};
    use crate::features::FeatureMode;
    use crate::nn::CnnConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            gnn: GnnKind::Gat,
            input: InputConfig {
                features: FeatureMode::Le,
                crop: 8,
                ..Default::default()
            },
            cnn: CnnConfig {
                channels: [2, 2, 2],
                out_dim: 4,
            },
            type_dim: 4,
            geom_dim: 4,
            hidden: 8,
            head_dim: 4,
            heads: vec![2, 2],
            gcn_layers: 2,
            classifier_hidden: 4,
        }
    }

    fn samples(config: &ModelConfig, seeds: std::ops::Range<u64>) -> Vec<GraphSample> {
        seeds.map(|s| random_sample(config, 5, five_node_arcs(), s)).collect()
    }

    #[test]
    fn zero_epochs_keep_the_initialization() {
        let config = tiny_config();
        let model = Model::new(config.clone(), 1).unwrap();
        let init: Vec<_> = model.params.tensors().to_vec();
        let out = train(model, &samples(&config, 0..3), &samples(&config, 3..4), &TrainConfig { epochs: 0, ..Default::default() }, |_| {}).unwrap();
        assert_eq!(out.best_epoch, 0);
        assert!(out.history.is_empty());
        let restored = model_from_checkpoint(&out.best).unwrap();
        assert_eq!(restored.params.tensors(), &init[..]);
    }

    #[test]
    fn training_lowers_the_loss_and_keeps_the_best_epoch() {
        let config = tiny_config();
        let train_set = samples(&config, 0..4);
        let val = samples(&config, 0..2);
        let cfg = TrainConfig {
            epochs: 30,
            lr: 1e-2,
            ..Default::default()
        };
        let mut seen = 0;
        let out = train(Model::new(config, 2).unwrap(), &train_set, &val, &cfg, |_| seen += 1).unwrap();
        assert_eq!(seen, 30);
        let first = out.history.first().unwrap().train_loss;
        let last = out.history.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        let max_f1 = out.history.iter().map(|r| r.val.f1).fold(f64::NEG_INFINITY, f64::max);
        let first_max = out.history.iter().position(|r| r.val.f1 == max_f1).unwrap() + 1;
        assert_eq!(out.best_epoch, first_max);
        assert_eq!(out.best.meta["epoch"], first_max);
        let best = model_from_checkpoint(&out.best).unwrap();
        let (_, m) = validate(&best, &val, cfg.threshold).unwrap();
        assert!((m.f1 - max_f1).abs() < 1e-12);
        assert!(out.best.tensors.iter().any(|(n, _)| n.starts_with("adam.m.")));
    }

    #[test]
    fn same_seed_same_history() {
        let config = tiny_config();
        let run = || {
            let cfg = TrainConfig { epochs: 3, seed: 5, ..Default::default() };
            train(Model::new(config.clone(), 5).unwrap(), &samples(&config, 0..3), &samples(&config, 3..5), &cfg, |_| {})
                .unwrap()
                .history
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_stops_at_the_target_accuracy() {
        let config = tiny_config();
        let set = samples(&config, 0..2);
        let cfg = TrainConfig {
            epochs: 40,
            lr: 1e-2,
            stop_at_accuracy: Some(0.0),
            ..Default::default()
        };
        let out = train(Model::new(config, 3).unwrap(), &set, &set, &cfg, |_| {}).unwrap();
        assert_eq!(out.history.len(), 1);
    }

    #[test]
    fn unlabeled_splits_are_rejected() {
        let config = tiny_config();
        let mut unlabeled = samples(&config, 0..1);
        unlabeled[0].labels.iter_mut().for_each(|l| *l = None);
        let model = || Model::new(config.clone(), 0).unwrap();
        assert!(train(model(), &unlabeled, &samples(&config, 1..2), &TrainConfig::default(), |_| {}).is_err());
        assert!(train(model(), &samples(&config, 1..2), &unlabeled, &TrainConfig::default(), |_| {}).is_err());
    }

    #[test]
    fn history_has_one_row_per_epoch() {
        let m = Metrics::from_counts(1, 0, 0, 1);
        let rec = EpochRecord { epoch: 1, train_loss: 0.5, val_loss: 0.25, val: m, lr: 1e-3 };
        let csv = history_csv(&[rec.clone(), EpochRecord { epoch: 2, ..rec }]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], HISTORY_HEADER);
        assert_eq!(lines[1], "1,0.5,0.25,1,1,1,1,0.001");
        assert_eq!(lines.len(), 3);
    }
}
