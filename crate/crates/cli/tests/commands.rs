use std::fs;
use std::path::Path;
use std::process::Command;

use lanetopo_cli::manifest::manifest_path;
use lanetopo_cli::{
    cmd_connected, cmd_eval, cmd_fitdemo, cmd_gradcheck, cmd_predict, cmd_synth, ConnectedArgs, EvalArgs, FitdemoArgs,
    GradcheckArgs, PredictArgs, SynthArgs, CSV_HEADER, EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_OK,
};

fn synth_scene(dir: &Path, seed: u64) -> std::path::PathBuf {
    let out = dir.join(format!("scene_{seed}.json"));
    let mut args = SynthArgs::new(out.clone());
    args.seed = seed;
    args.with_segments = true;
    assert_eq!(cmd_synth(&args).code, EXIT_OK);
    out
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(manifest_path(path)).unwrap()).unwrap()
}

#[test]
fn synth_writes_scene_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path(), 42);
    let m = manifest(&scene);
    assert_eq!(m["command"], "synth");
    assert_eq!(m["seeds"], serde_json::json!([42]));
    assert_eq!(m["params"]["seed"], 42);
    assert!(m["params"].get("out").is_none());
    assert_eq!(m["reproducibility_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn synth_rejects_bad_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = SynthArgs::new(dir.path().join("s.json"));
    args.lane_spacing = 1.0;
    assert_eq!(cmd_synth(&args).code, EXIT_INPUT);
    let mut args = SynthArgs::new(dir.path().join("r.json"));
    args.roundabout_arms = Some(3);
    assert_eq!(cmd_synth(&args).code, EXIT_OK);
}

#[test]
fn perfect_prediction_round_trip_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path(), 11);
    let pred = dir.path().join("pred.json");
    let mut p = PredictArgs::new(scene.clone(), pred.clone());
    p.c = 16;
    p.topology_threshold = Some(0.0);
    assert_eq!(cmd_predict(&p).code, EXIT_OK);
    let report = dir.path().join("report.json");
    let o = cmd_eval(&EvalArgs::new(pred, scene, report.clone()));
    assert_eq!(o.code, EXIT_OK, "{:?}", o.messages);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["det_l"], 1.0);
    assert_eq!(r["det_t"], 1.0);
    let csv = fs::read_to_string(report.with_extension("csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    assert!(lines.next().unwrap().starts_with("1,1,"));
}

#[test]
fn directory_mode_covers_every_scene() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    let mut s = SynthArgs::new(dir.path().join("x.json"));
    s.out = None;
    s.out_dir = Some(scenes.clone());
    s.seeds = vec![1, 2, 3];
    assert_eq!(cmd_synth(&s).code, EXIT_OK);
    let conn = dir.path().join("conn");
    assert_eq!(cmd_connected(&ConnectedArgs { scene: scenes.clone(), out: conn.clone() }).code, EXIT_OK);
    assert!(conn.join("scene_2.json").exists());
    let preds = dir.path().join("preds");
    let mut p = PredictArgs::new(scenes.clone(), preds.clone());
    p.c = 8;
    p.heads = 2;
    p.perturb = true;
    p.point_sigma = 0.3;
    assert_eq!(cmd_predict(&p).code, EXIT_OK);
    let report = dir.path().join("all.json");
    let o = cmd_eval(&EvalArgs::new(preds, scenes, report.clone()));
    assert_eq!(o.code, EXIT_OK, "{:?}", o.messages);
    let csv = fs::read_to_string(report.with_extension("csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("scene,det_l"));
    assert!(rows[4].starts_with("mean,"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["scenes"].as_array().unwrap().len(), 3);
}

#[test]
fn malformed_or_mismatched_inputs_exit_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path(), 3);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(cmd_connected(&ConnectedArgs { scene: bad.clone(), out: dir.path().join("c.json") }).code, EXIT_INPUT);
    assert_eq!(cmd_eval(&EvalArgs::new(bad, scene.clone(), dir.path().join("r.json"))).code, EXIT_INPUT);
    let missing = dir.path().join("missing.json");
    assert_eq!(cmd_predict(&PredictArgs::new(missing, dir.path().join("p.json"))).code, EXIT_INPUT);

    let pred = dir.path().join("pred.json");
    assert_eq!(cmd_predict(&PredictArgs::new(scene.clone(), pred.clone())).code, EXIT_OK);
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&pred).unwrap()).unwrap();
    v["lane_scores"].as_array_mut().unwrap().pop();
    fs::write(&pred, serde_json::to_string(&v).unwrap()).unwrap();
    assert_eq!(cmd_eval(&EvalArgs::new(pred, scene.clone(), dir.path().join("r.json"))).code, EXIT_INPUT);

    let mut p = PredictArgs::new(scene, dir.path().join("p2.json"));
    p.c = 10;
    p.heads = 4;
    assert_eq!(cmd_predict(&p).code, EXIT_INPUT);
}

#[test]
fn broken_junction_is_reported_by_connected() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path(), 42);
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&scene).unwrap()).unwrap();
    let ll = v["topo"]["ll"].clone();
    let (i, _) = ll
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
        .find(|(_, row)| row.as_array().unwrap().iter().any(|x| x == 1.0))
        .expect("scene with an edge");
    let last = v["lanes"][i].as_array().unwrap().len() - 1;
    let y = v["lanes"][i][last][1].as_f64().unwrap();
    v["lanes"][i][last][1] = serde_json::json!(y + 0.5);
    fs::write(&scene, serde_json::to_string(&v).unwrap()).unwrap();
    let o = cmd_connected(&ConnectedArgs { scene, out: dir.path().join("c.json") });
    assert_eq!(o.code, EXIT_INPUT);
    assert!(o.messages.iter().any(|m| m.contains("junction")), "{:?}", o.messages);
}

#[test]
fn gradcheck_passes_and_detects_faults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.csv");
    let mut args = GradcheckArgs::new(out.clone());
    args.instances = 5;
    let o = cmd_gradcheck(&args);
    assert_eq!(o.code, EXIT_OK, "{:?}", o.messages);
    assert!(o.messages.iter().any(|m| m.contains("skipped")));
    let table = fs::read_to_string(&out).unwrap();
    assert!(table.starts_with("op,instances,entries,max_rel_error,status"));
    args.inject_fault = true;
    assert_eq!(cmd_gradcheck(&args).code, EXIT_CHECK_FAILED);
}

#[test]
fn fitdemo_success_nan_and_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.csv");
    let mut args = FitdemoArgs::new(out.clone());
    args.steps = 200;
    args.threshold = 1.0;
    assert_eq!(cmd_fitdemo(&args).code, EXIT_OK);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 202);

    args.threshold = 1e-12;
    assert_eq!(cmd_fitdemo(&args).code, EXIT_CHECK_FAILED);

    args.threshold = 1.0;
    args.inject_nan_at = Some(3);
    let o = cmd_fitdemo(&args);
    assert_eq!(o.code, EXIT_CHECK_FAILED);
    assert!(o.messages[0].contains("step 3"));

    args.inject_nan_at = None;
    let w = dir.path().join("w.json");
    fs::write(&w, r#"{"ll": -1.0}"#).unwrap();
    args.weights = Some(w);
    assert_eq!(cmd_fitdemo(&args).code, EXIT_INPUT);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_lanetopo");
    let scene = dir.path().join("s.json");
    let ok = Command::new(bin).args(["synth", "--out"]).arg(&scene).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("wrote"));
    let bad = Command::new(bin).args(["connected", "--scene", "/nonexistent/x.json", "--out"]).arg(dir.path().join("c.json")).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(!bad.stderr.is_empty());
    let usage = Command::new(bin).arg("bogus").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
}
