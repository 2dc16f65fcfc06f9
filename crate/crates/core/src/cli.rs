//! Command-line front end: dataset generation, training, evaluation,
//! detection, merging, annotation and self-checks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMode, VisualMethod};
use crate::fsio::{read, write_atomic, write_json};
use crate::gnn::gradcheck::full_suite;
use crate::gnn::{
    evaluate, history_csv, model_from_checkpoint, prepare_artboard, split_by_artboard, train, GnnKind, GraphSample,
    InputConfig, Metrics, Model, ModelConfig, TrainConfig,
};
use crate::graph::{build_window_graphs, dump_json};
use crate::layer::{load_screenshot, parse_artboard, Artboard, Raster, Rect};
use crate::merge::{merge_fragments, MergeConfig, MergeResult};
use crate::nn::gradcheck::GradCheckConfig;
use crate::nn::Checkpoint;
use crate::synth::{gen_dataset, DatasetIndex, GenConfig, DATASET_INDEX};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "fraglayer", version, about = "Detect and merge fragmented UI layers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "command")]
pub enum Command {
    /// Generate a labeled synthetic dataset.
    Gen(GenArgs),
    /// Train a detector and keep the checkpoint with the best validation F1.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Per-layer fragmented probabilities for one artboard.
    Detect(DetectArgs),
    /// Group fragmented layers into merge areas.
    Merge(MergeArgs),
    /// Draw merge groups as an SVG overlay.
    Render(RenderArgs),
    /// Finite-difference gradient checks of every differentiable piece.
    Gradcheck(GradcheckArgs),
    /// Dump the per-window layout graphs of an artboard.
    Graph(GraphArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative frequency of icon, decoration and background patterns.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.5, 0.3, 0.2])]
    pub mix: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub min_layers: usize,
    #[arg(long, default_value_t = 40)]
    pub max_layers: usize,
    #[arg(long, default_value_t = 0.4)]
    pub fragment_ratio: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "gat")]
    pub model: GnnKind,
    #[arg(long, default_value = "crop")]
    pub visual: VisualMethod,
    #[arg(long, default_value = "le+vf")]
    pub features: FeatureMode,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Merge distance recorded for downstream merging.
    #[arg(long, default_value_t = 40.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Checkpoint path; history, evaluation and run manifest go beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Side length of the per-layer crop.
    #[arg(long, default_value_t = 32)]
    pub crop: usize,
    /// Limit training to the first N artboards of each split.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to the manifest path with a `.ppm` extension.
    #[arg(long)]
    pub screenshot: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct MergeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, required_unless_present = "oracle_labels")]
    pub detections: Option<PathBuf>,
    /// Use the manifest's ground-truth labels instead of detections.
    #[arg(long, conflicts_with = "detections")]
    pub oracle_labels: bool,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub merge: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct GraphArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub run: PathBuf,
}

/// Resolved invocation written beside every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: Command,
    pub artifacts: Vec<PathBuf>,
}

/// `x/model.ckpt` + `history.csv` → `x/model.history.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn run_manifest_path(command: &Command, out: &Path) -> PathBuf {
    match command {
        Command::Gen(_) => out.join("run.json"),
        _ => sibling(out, "run.json"),
    }
}

fn write_run(command: &Command, seed: Option<u64>, out: &Path, artifacts: Vec<PathBuf>) -> Result<()> {
    let manifest = RunManifest {
        tool: "fraglayer".into(),
        version: TOOL_VERSION.into(),
        seed,
        config: command.clone(),
        artifacts,
    };
    write_json(&run_manifest_path(command, out), &manifest)
}

/// Runs one command; the returned code is the process exit status.
pub fn run(command: &Command) -> Result<i32> {
    match command {
        Command::Gen(a) => cmd_gen(command, a),
        Command::Train(a) => cmd_train(command, a),
        Command::Eval(a) => cmd_eval(command, a),
        Command::Detect(a) => cmd_detect(command, a),
        Command::Merge(a) => cmd_merge(command, a),
        Command::Render(a) => cmd_render(command, a),
        Command::Gradcheck(a) => cmd_gradcheck(command, a),
        Command::Graph(a) => cmd_graph(command, a),
        Command::Replay(a) => {
            let manifest: RunManifest = serde_json::from_slice(&read(&a.run)?)?;
            if matches!(manifest.config, Command::Replay(_)) {
                return Err(Error::Dataset("a run manifest cannot replay another replay".into()));
            }
            run(&manifest.config)
        }
    }
}

/// Parses `argv` and runs it, printing errors to stderr.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn cmd_gen(command: &Command, a: &GenArgs) -> Result<i32> {
    let config = GenConfig {
        n_artboards: a.n,
        seed: a.seed,
        mix: a
            .mix
            .clone()
            .try_into()
            .map_err(|_| Error::Dataset("--mix needs three values".into()))?,
        layers: [a.min_layers, a.max_layers],
        fragment_ratio: a.fragment_ratio,
        noise: a.noise,
    };
    let index = gen_dataset(&config, &a.out)?;
    eprintln!(
        "generated {} artboards, {} layers, {:.1}% fragmented",
        index.summary.artboards,
        index.summary.layers,
        100.0 * index.summary.fragmented_fraction
    );
    write_run(command, Some(a.seed), &a.out, vec![a.out.join(DATASET_INDEX)])?;
    Ok(0)
}

/// One artboard of a dataset with its screenshot.
pub struct DatasetItem {
    pub stem: String,
    pub split: Option<String>,
    pub artboard: Artboard,
    pub screenshot: Option<Raster>,
}

/// Reads `dataset.json` when present, else every manifest in the directory.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetItem>> {
    let index_path = dir.join(DATASET_INDEX);
    let entries: Vec<(String, Option<String>)> = if index_path.exists() {
        let index: DatasetIndex = serde_json::from_slice(&read(&index_path)?)?;
        index.artboards.into_iter().map(|e| (e.stem, Some(e.split))).collect()
    } else {
        let mut stems = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            if name.ends_with(".json") && !name.ends_with(".run.json") && name != "run.json" {
                stems.push((name.trim_end_matches(".json").to_string(), None));
            }
        }
        stems.sort();
        stems
    };
    if entries.is_empty() {
        return Err(Error::Dataset(format!("{} holds no artboards", dir.display())));
    }
    entries
        .into_iter()
        .map(|(stem, split)| {
            let artboard = parse_artboard(&read(&dir.join(format!("{stem}.json")))?)?;
            let shot_path = dir.join(format!("{stem}.ppm"));
            let screenshot = if shot_path.exists() {
                Some(load_screenshot(&read(&shot_path)?, &artboard)?)
            } else {
                None
            };
            Ok(DatasetItem {
                stem,
                split,
                artboard,
                screenshot,
            })
        })
        .collect()
}

/// Assigns each item to train, val or test: the dataset's hints when every
/// item has one, else a seeded split by artboard.
pub fn assign_splits(items: &[DatasetItem], seed: u64) -> Result<Vec<String>> {
    if items.iter().all(|i| i.split.is_some()) {
        return Ok(items.iter().map(|i| i.split.clone().expect("checked")).collect());
    }
    let stems: Vec<String> = items.iter().map(|i| i.stem.clone()).collect();
    let split = split_by_artboard(&stems, [0.8, 0.1, 0.1], seed)?;
    Ok(stems
        .iter()
        .map(|s| split.part_of(s).expect("every stem is split").to_string())
        .collect())
}

fn samples_of(items: &[DatasetItem], input: &InputConfig) -> Result<Vec<GraphSample>> {
    let mut out = Vec::new();
    for item in items {
        out.extend(prepare_artboard(&item.artboard, item.screenshot.as_ref(), input)?);
    }
    Ok(out)
}

/// Samples grouped by split name.
pub fn split_samples(
    items: Vec<DatasetItem>,
    splits: &[String],
    input: &InputConfig,
    limit: Option<usize>,
) -> Result<BTreeMap<String, Vec<GraphSample>>> {
    let mut by_split: BTreeMap<String, Vec<DatasetItem>> = BTreeMap::new();
    for (item, split) in items.into_iter().zip(splits) {
        by_split.entry(split.clone()).or_default().push(item);
    }
    by_split
        .into_iter()
        .map(|(k, mut v)| {
            if let Some(n) = limit {
                v.truncate(n);
            }
            Ok((k, samples_of(&v, input)?))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub val: Metrics,
    pub test: Option<Metrics>,
}

fn cmd_train(command: &Command, a: &TrainArgs) -> Result<i32> {
    let config = ModelConfig {
        gnn: a.model,
        input: InputConfig {
            features: a.features,
            visual: a.visual,
            crop: a.crop,
            ..Default::default()
        },
        ..Default::default()
    };
    config.validate()?;
    if !(a.tau > 0.0) {
        return Err(Error::Dataset(format!("--tau must be positive, got {}", a.tau)));
    }
    let items = load_dataset(&a.data)?;
    let splits = assign_splits(&items, a.seed)?;
    let mut parts = split_samples(items, &splits, &config.input, a.limit)?;
    let train_set = parts.remove("train").unwrap_or_default();
    let val_set = parts.remove("val").unwrap_or_default();
    let test_set = parts.remove("test").unwrap_or_default();
    let cfg = TrainConfig {
        seed: a.seed,
        epochs: a.epochs,
        lr: a.lr,
        threshold: a.threshold,
        ..Default::default()
    };
    let model = Model::new(config, a.seed)?;
    eprintln!("training on {} graphs, validating on {}", train_set.len(), val_set.len());
    let mut outcome = train(model, &train_set, &val_set, &cfg, |r| {
        eprintln!(
            "epoch {:>3}  train {:.4}  val {:.4}  f1 {:.4}  acc {:.4}  lr {:.2e}",
            r.epoch, r.train_loss, r.val_loss, r.val.f1, r.val.accuracy, r.lr
        );
    })?;
    outcome.best.meta["tau"] = serde_json::json!(a.tau);
    outcome.best.save(&a.out)?;
    let best = model_from_checkpoint(&outcome.best)?;
    let report = TrainReport {
        best_epoch: outcome.best_epoch,
        val: evaluate(&best, &val_set, a.threshold)?,
        test: if test_set.is_empty() {
            None
        } else {
            Some(evaluate(&best, &test_set, a.threshold)?)
        },
    };
    let history = sibling(&a.out, "history.csv");
    let eval = sibling(&a.out, "eval.json");
    write_atomic(&history, history_csv(&outcome.history).as_bytes())?;
    write_json(&eval, &report)?;
    if let Some(t) = &report.test {
        eprintln!(
            "best epoch {}  test f1 {:.4}  precision {:.4}  recall {:.4}  accuracy {:.4}",
            report.best_epoch, t.f1, t.precision, t.recall, t.accuracy
        );
    }
    write_run(command, Some(a.seed), &a.out, vec![a.out.clone(), history, eval])?;
    Ok(0)
}

fn threshold_of(ck: &Checkpoint, flag: Option<f64>) -> f64 {
    flag.or_else(|| ck.meta.pointer("/train/threshold").and_then(|v| v.as_f64()))
        .unwrap_or(0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub artboards: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

fn cmd_eval(command: &Command, a: &EvalArgs) -> Result<i32> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = model_from_checkpoint(&ck)?;
    let threshold = threshold_of(&ck, a.threshold);
    let items = load_dataset(&a.data)?;
    let seed = ck.meta.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);
    let splits = assign_splits(&items, seed)?;
    let chosen: Vec<DatasetItem> = items
        .into_iter()
        .zip(&splits)
        .filter(|(_, s)| a.split == "all" || **s == a.split)
        .map(|(i, _)| i)
        .collect();
    if chosen.is_empty() {
        return Err(Error::Dataset(format!("split `{}` is empty", a.split)));
    }
    let samples = samples_of(&chosen, &model.config.input)?;
    let report = EvalReport {
        split: a.split.clone(),
        artboards: chosen.len(),
        metrics: evaluate(&model, &samples, threshold)?,
    };
    write_json(&a.out, &report)?;
    write_run(command, None, &a.out, vec![a.out.clone()])?;
    Ok(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDetection {
    pub id: String,
    pub prob: f64,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowDetections {
    pub index: usize,
    pub layers: Vec<LayerDetection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detections {
    pub artboard: String,
    pub windows: Vec<WindowDetections>,
    /// Merge distance the detector was trained with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

/// Runs `model` over every window of `artboard`.
pub fn detect(model: &Model, artboard: &Artboard, shot: Option<&Raster>, threshold: f64) -> Result<Detections> {
    let samples = prepare_artboard(artboard, shot, &model.config.input)?;
    let mut windows = Vec::with_capacity(samples.len());
    for s in &samples {
        let probs = model.predict(s)?;
        let layers = s
            .layer_ids
            .iter()
            .zip(probs)
            .filter_map(|(id, p)| {
                id.as_ref().map(|id| LayerDetection {
                    id: id.clone(),
                    prob: p,
                    label: u8::from(p >= threshold),
                })
            })
            .collect();
        windows.push(WindowDetections { index: s.window, layers });
    }
    Ok(Detections {
        artboard: artboard.id.clone(),
        windows,
        tau: None,
    })
}

fn screenshot_for(manifest: &Path, explicit: Option<&PathBuf>, artboard: &Artboard, needed: bool) -> Result<Option<Raster>> {
    let path = explicit.cloned().unwrap_or_else(|| manifest.with_extension("ppm"));
    if !needed {
        return Ok(None);
    }
    Ok(Some(load_screenshot(&read(&path)?, artboard)?))
}

fn cmd_detect(command: &Command, a: &DetectArgs) -> Result<i32> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = model_from_checkpoint(&ck)?;
    let artboard = parse_artboard(&read(&a.manifest)?)?;
    let shot = screenshot_for(&a.manifest, a.screenshot.as_ref(), &artboard, model.config.input.features.visual())?;
    let mut det = detect(&model, &artboard, shot.as_ref(), threshold_of(&ck, a.threshold))?;
    det.tau = ck.meta.get("tau").and_then(|v| v.as_f64());
    write_json(&a.out, &det)?;
    write_run(command, None, &a.out, vec![a.out.clone()])?;
    Ok(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowMerge {
    pub window: usize,
    #[serde(flatten)]
    pub result: MergeResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeOutput {
    pub artboard: String,
    pub tau: f64,
    pub windows: Vec<WindowMerge>,
}

/// Merges per window. `is_positive` selects fragmented layers by id; group
/// bounds are in artboard coordinates.
pub fn merge_artboard(artboard: &Artboard, is_positive: impl Fn(&str) -> bool, tau: f64) -> Result<MergeOutput> {
    if !(tau > 0.0) {
        return Err(Error::Detections(format!("tau must be positive, got {tau}")));
    }
    let (_, graphs) = build_window_graphs(artboard)?;
    let config = MergeConfig { tau };
    let windows = graphs
        .iter()
        .map(|wg| {
            let ids: Vec<Option<String>> = wg
                .tree
                .nodes
                .iter()
                .map(|n| n.layer.map(|l| artboard.layers[l].id.clone()))
                .collect();
            let rect_of = |n: usize| -> Rect {
                wg.tree.nodes[n]
                    .layer
                    .map(|l| artboard.layers[l].rect)
                    .expect("positives are layers")
            };
            WindowMerge {
                window: wg.window.index,
                result: merge_fragments(&wg.tree, &ids, &is_positive, rect_of, &config),
            }
        })
        .collect();
    Ok(MergeOutput {
        artboard: artboard.id.clone(),
        tau,
        windows,
    })
}

fn cmd_merge(command: &Command, a: &MergeArgs) -> Result<i32> {
    let artboard = parse_artboard(&read(&a.manifest)?)?;
    let out = if a.oracle_labels {
        if artboard.labels.is_none() {
            return Err(Error::Manifest(format!("{} carries no labels", a.manifest.display())));
        }
        let tau = a.tau.unwrap_or(MergeConfig::default().tau);
        merge_artboard(&artboard, |id| artboard.label(id).is_some_and(|l| l.fragmented), tau)?
    } else {
        let path = a.detections.as_ref().expect("clap requires detections");
        let det: Detections = serde_json::from_slice(&read(path)?)?;
        if det.artboard != artboard.id {
            return Err(Error::Detections(format!(
                "detections are for `{}`, manifest is `{}`",
                det.artboard, artboard.id
            )));
        }
        let positives: std::collections::HashSet<String> = det
            .windows
            .iter()
            .flat_map(|w| &w.layers)
            .filter(|l| l.label == 1)
            .map(|l| l.id.clone())
            .collect();
        if let Some(unknown) = positives.iter().find(|id| !artboard.layers.iter().any(|l| &l.id == *id)) {
            return Err(Error::Detections(format!("unknown layer `{unknown}`")));
        }
        let tau = a.tau.or(det.tau).unwrap_or(MergeConfig::default().tau);
        merge_artboard(&artboard, |id| positives.contains(id), tau)?
    };
    write_json(&a.out, &out)?;
    write_run(command, None, &a.out, vec![a.out.clone()])?;
    Ok(0)
}

const GROUP_COLORS: [&str; 12] = [
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#bfef45", "#469990", "#9a6324",
    "#800000", "#000075",
];

/// SVG overlay: one unfilled `<rect>` per group member, stroked in the
/// group's color, with a legend comment.
pub fn render_svg(artboard: &Artboard, merge: &MergeOutput) -> Result<String> {
    let rect_of: BTreeMap<&str, Rect> = artboard.layers.iter().map(|l| (l.id.as_str(), l.rect)).collect();
    let mut legend = String::new();
    let mut body = String::new();
    let mut k = 0;
    for w in &merge.windows {
        for g in &w.result.groups {
            let color = GROUP_COLORS[k % GROUP_COLORS.len()];
            k += 1;
            legend.push_str(&format!("  window {} {} {}: {}\n", w.window, g.id, color, g.members.join(" ")));
            for m in &g.members {
                let r = rect_of
                    .get(m.as_str())
                    .ok_or_else(|| Error::Detections(format!("merge member `{m}` is not in the manifest")))?;
                body.push_str(&format!(
                    "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" data-window=\"{}\" data-group=\"{}\" data-layer=\"{m}\"/>\n",
                    r.x, r.y, r.w, r.h, w.window, g.id
                ));
            }
        }
    }
    Ok(format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<!-- legend\n  artboard {id}, {k} groups\n{legend}-->\n{body}</svg>\n",
        w = artboard.width,
        h = artboard.height,
        id = artboard.id,
    ))
}

fn cmd_render(command: &Command, a: &RenderArgs) -> Result<i32> {
    let artboard = parse_artboard(&read(&a.manifest)?)?;
    let merge: MergeOutput = serde_json::from_slice(&read(&a.merge)?)?;
    if merge.artboard != artboard.id {
        return Err(Error::Detections(format!(
            "merge output is for `{}`, manifest is `{}`",
            merge.artboard, artboard.id
        )));
    }
    write_atomic(&a.out, render_svg(&artboard, &merge)?.as_bytes())?;
    write_run(command, None, &a.out, vec![a.out.clone()])?;
    Ok(0)
}

fn cmd_gradcheck(command: &Command, a: &GradcheckArgs) -> Result<i32> {
    let cfg = GradCheckConfig {
        seed: a.seed,
        ..Default::default()
    };
    let reports = full_suite(&ModelConfig::default(), &cfg)?;
    let passed = reports.iter().all(|r| r.passed);
    for r in &reports {
        println!(
            "{:<6} {:<24} checked {:>5}  max rel err {:.3e}",
            if r.passed { "ok" } else { "FAIL" },
            r.name,
            r.checked,
            r.max_rel_err
        );
    }
    if let Some(out) = &a.out {
        write_json(out, &serde_json::json!({"passed": passed, "tolerance": cfg.tolerance, "checks": reports}))?;
        write_run(command, Some(a.seed), out, vec![out.clone()])?;
    }
    Ok(if passed { 0 } else { 1 })
}

fn cmd_graph(command: &Command, a: &GraphArgs) -> Result<i32> {
    let artboard = parse_artboard(&read(&a.manifest)?)?;
    let (_, graphs) = build_window_graphs(&artboard)?;
    write_json(&a.out, &dump_json(&artboard, &graphs))?;
    write_run(command, None, &a.out, vec![a.out.clone()])?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_round_trips_through_json() {
        let cli = Cli::try_parse_from(["fraglayer", "train", "--data", "d", "--out", "m.ckpt", "--model", "none"]).unwrap();
        let json = serde_json::to_string(&cli.command).unwrap();
        let back: Command = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cli.command);
        match back {
            Command::Train(t) => {
                assert_eq!(t.model, GnnKind::None);
                assert_eq!(t.epochs, 50);
                assert_eq!(t.features, FeatureMode::LeVf);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_flags_fail() {
        assert!(Cli::try_parse_from(["fraglayer", "train", "--data", "d", "--out", "o", "--bogus"]).is_err());
        assert!(Cli::try_parse_from(["fraglayer", "merge", "--manifest", "m", "--out", "o"]).is_err());
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("a/m.ckpt"), "history.csv"), PathBuf::from("a/m.history.csv"));
        assert_eq!(sibling(Path::new("m"), "run.json"), PathBuf::from("m.run.json"));
    }
}
