use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command as Process;

use fraglayer::cli::{main_with_args, Detections, EvalReport, MergeOutput, RunManifest};
use fraglayer::features::FeatureMode;
use fraglayer::gnn::{to_checkpoint, GnnKind, InputConfig, Model, ModelConfig};
use fraglayer::layer::{parse_artboard, LayerType};
use fraglayer::synth::ground_truth_groups;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["fraglayer"];
    argv.extend_from_slice(args);
    main_with_args(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn gen_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&["gen", "--out", p(&a), "--n", "5", "--seed", "7"]), 0);
    assert_eq!(run(&["gen", "--out", p(&b), "--n", "5", "--seed", "7"]), 0);
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 5 * 2 + 2);
    let strip = |m: &BTreeMap<String, Vec<u8>>| {
        let mut m = m.clone();
        m.remove("run.json");
        m
    };
    assert_eq!(strip(&fa), strip(&fb));
}

#[test]
fn oracle_merge_recovers_generated_groups() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert_eq!(run(&["gen", "--out", p(&data), "--n", "5", "--seed", "3"]), 0);
    let mut total = 0;
    for i in 0..5 {
        let manifest = data.join(format!("ab{i:04}.json"));
        let out = tmp.path().join(format!("m{i}.json"));
        assert_eq!(run(&["merge", "--manifest", p(&manifest), "--oracle-labels", "--out", p(&out)]), 0);
        let merged: MergeOutput = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
        let artboard = parse_artboard(&std::fs::read(&manifest).unwrap()).unwrap();
        let found: Vec<Vec<String>> = merged.windows.iter().flat_map(|w| &w.result.groups).map(|g| g.members.clone()).collect();
        for members in ground_truth_groups(&artboard).values() {
            total += 1;
            // the generator chains icon and decoration shapes within tau and
            // contains background dots in their fragmented base layer
            assert!(found.contains(members), "{members:?} not recovered in {}", artboard.id);
        }
    }
    assert!(total > 5);
}

fn write_perfect_checkpoint(path: &Path) {
    // ovals are the only fragmented layers in the dataset below, so a
    // layout-only model that thresholds the oval type embedding is exact
    let config = ModelConfig {
        gnn: GnnKind::None,
        input: InputConfig {
            features: FeatureMode::Le,
            ..Default::default()
        },
        classifier_hidden: 4,
        ..Default::default()
    };
    let mut model = Model::new(config, 0).unwrap();
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = model.params.name(id).to_string();
        let t = model.params.get_mut(id);
        let cols = *t.shape().last().unwrap();
        let data = t.data_mut();
        data.iter_mut().for_each(|v| *v = 0.0);
        match name.as_str() {
            "type_embed" => data[LayerType::Oval.index() * cols] = 1.0,
            "head.hidden.weight" => data[0] = 1.0,
            "head.out.weight" => data[1] = 10.0,
            "head.out.bias" => data[0] = 5.0,
            _ => {}
        }
    }
    to_checkpoint(&model, None, serde_json::json!({})).save(path).unwrap();
}

fn write_oval_dataset(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..3 {
        let manifest = format!(
            r#"{{"artboard_id":"t{i}","width":375,"height":500,"layers":[
              {{"id":"bg","name":"rectangle#rgb(200,200,200)","type":"rectangle","x":0,"y":0,"w":375,"h":100}},
              {{"id":"a","name":"oval#rgb(200,0,0)","type":"oval","x":{x},"y":20,"w":10,"h":10}},
              {{"id":"b","name":"oval#rgb(200,0,0)","type":"oval","x":{x2},"y":22,"w":10,"h":10}},
              {{"id":"t","name":"text#rgb(0,0,0)","type":"text","x":20,"y":300,"w":100,"h":14}}],
              "labels":{{"bg":{{"fragmented":false,"group":null}},"a":{{"fragmented":true,"group":"g0"}},
                         "b":{{"fragmented":true,"group":"g0"}},"t":{{"fragmented":false,"group":null}}}}}}"#,
            x = 30 + 20 * i,
            x2 = 36 + 20 * i
        );
        std::fs::write(dir.join(format!("t{i}.json")), manifest).unwrap();
    }
}

#[test]
fn eval_of_an_exact_checkpoint_is_all_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    write_oval_dataset(&data);
    let ck = tmp.path().join("exact.ckpt");
    write_perfect_checkpoint(&ck);
    let out = tmp.path().join("metrics.json");
    assert_eq!(run(&["eval", "--data", p(&data), "--checkpoint", p(&ck), "--split", "all", "--out", p(&out)]), 0);
    let report: EvalReport = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let m = report.metrics;
    assert_eq!((m.precision, m.recall, m.accuracy, m.f1), (1.0, 1.0, 1.0, 1.0));
    assert_eq!((m.tp, m.tn), (6, 6));
    assert_eq!(report.artboards, 3);
}

#[test]
fn detect_merge_render_compose_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    write_oval_dataset(&data);
    let ck = tmp.path().join("exact.ckpt");
    write_perfect_checkpoint(&ck);
    let manifest = data.join("t0.json");
    let det = tmp.path().join("det.json");
    let merged = tmp.path().join("merge.json");
    let svg = tmp.path().join("out.svg");
    assert_eq!(run(&["detect", "--checkpoint", p(&ck), "--manifest", p(&manifest), "--out", p(&det)]), 0);
    let d: Detections = serde_json::from_slice(&std::fs::read(&det).unwrap()).unwrap();
    let labels: BTreeMap<&str, u8> = d.windows.iter().flat_map(|w| &w.layers).map(|l| (l.id.as_str(), l.label)).collect();
    assert_eq!(labels, BTreeMap::from([("a", 1), ("b", 1), ("bg", 0), ("t", 0)]));
    assert_eq!(run(&["merge", "--manifest", p(&manifest), "--detections", p(&det), "--out", p(&merged)]), 0);
    let m: MergeOutput = serde_json::from_slice(&std::fs::read(&merged).unwrap()).unwrap();
    let groups: Vec<_> = m.windows.iter().flat_map(|w| &w.result.groups).collect();
    assert_eq!(groups.len(), 1);
    assert_eq!(groups[0].members, vec!["a", "b"]);
    assert_eq!(run(&["render", "--manifest", p(&manifest), "--merge", p(&merged), "--out", p(&svg)]), 0);
    let text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("<rect").count(), 2);
    assert!(text.contains("<!-- legend"));
    assert_eq!(text.matches("stroke=\"#e6194b\"").count(), 2);
    assert!(text.contains("fill=\"none\""));
}

#[test]
fn every_output_has_a_replayable_run_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert_eq!(run(&["gen", "--out", p(&data), "--n", "4", "--seed", "5"]), 0);
    let ck = tmp.path().join("m.ckpt");
    let args = [
        "train", "--data", p(&data), "--out", p(&ck), "--epochs", "1", "--features", "le", "--model", "gcn", "--seed", "2",
    ];
    assert_eq!(run(&args), 0);
    let run_path = tmp.path().join("m.run.json");
    let manifest: RunManifest = serde_json::from_slice(&std::fs::read(&run_path).unwrap()).unwrap();
    assert_eq!(manifest.seed, Some(2));
    let before: Vec<Vec<u8>> = manifest.artifacts.iter().map(|a| std::fs::read(a).unwrap()).collect();
    assert_eq!(before.len(), 3);
    for a in &manifest.artifacts {
        std::fs::remove_file(a).unwrap();
    }
    assert_eq!(run(&["replay", "--run", p(&run_path)]), 0);
    let after: Vec<Vec<u8>> = manifest.artifacts.iter().map(|a| std::fs::read(a).unwrap()).collect();
    assert_eq!(before, after);
    let history = String::from_utf8(std::fs::read(tmp.path().join("m.history.csv")).unwrap()).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss,val_precision,val_recall,val_accuracy,val_f1,lr\n"));
    assert_eq!(history.lines().count(), 2);
}

#[test]
fn graph_dump_lists_windows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    write_oval_dataset(&data);
    let out = tmp.path().join("g.json");
    assert_eq!(run(&["graph", "--manifest", p(&data.join("t0.json")), "--out", p(&out)]), 0);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["artboard"], "t0");
    assert_eq!(v["windows"][0]["nodes"][0]["kind"], "canvas");
}

#[test]
fn binary_reports_errors_with_nonzero_exit() {
    let exe = env!("CARGO_BIN_EXE_fraglayer");
    let tmp = tempfile::tempdir().unwrap();
    let missing = Process::new(exe)
        .args(["graph", "--manifest", p(&tmp.path().join("nope.json")), "--out", p(&tmp.path().join("o.json"))])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.json"));
    let unknown = Process::new(exe).args(["train", "--frobnicate"]).output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));

    // a checkpoint whose tensors do not match its declared dims
    let data = tmp.path().join("d");
    write_oval_dataset(&data);
    let ck = tmp.path().join("bad.ckpt");
    write_perfect_checkpoint(&ck);
    let mut c = fraglayer::nn::Checkpoint::load(&ck).unwrap();
    c.meta["model"]["classifier_hidden"] = serde_json::json!(8);
    c.save(&ck).unwrap();
    let bad = Process::new(exe)
        .args(["detect", "--checkpoint", p(&ck), "--manifest", p(&data.join("t0.json")), "--out", p(&tmp.path().join("x.json"))])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("incompatible dims"));
}
