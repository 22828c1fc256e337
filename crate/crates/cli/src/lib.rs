//! Subcommands of the `lanetopo` binary.
//!
//! Each `cmd_*` function writes its outputs plus a manifest and returns an
//! [`Outcome`] whose code is 0 on success, 1 when a check fails and 2 for
//! bad input or contract errors.

pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use lanetopo::connected::build_connected_gt;
use lanetopo::fit::{toy_fit, FitConfig};
use lanetopo::gradcheck::{run_suite, CheckStatus};
use lanetopo::io;
use lanetopo::metrics::{average_reports, evaluate, MetricReport, MetricThresholds, SegmentSet};
use lanetopo::nn::ParamTensors;
use lanetopo::pipeline::{run_pipeline_with, GeometrySource, PipelineConfig, TopologyModel};
use lanetopo::scene::{validate_scene, Scene};
use lanetopo::synth::{
    derive_segments, generate_roundabout, generate_scene, perturb_segments, two_lane_chain, NoiseParams, SynthParams,
    SHIPPED_SEEDS,
};
use lanetopo::training::LossWeights;
use lanetopo::attention::ModelDims;

use manifest::{manifest_path, FileRecord, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// Result of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub messages: Vec<String>,
}

impl Outcome {
    fn ok(messages: Vec<String>) -> Self {
        Self { code: EXIT_OK, messages }
    }
}

#[derive(Debug)]
enum Failure {
    Input(Vec<String>),
    Check(Vec<String>),
}

impl From<lanetopo::Error> for Failure {
    fn from(e: lanetopo::Error) -> Self {
        Failure::Input(vec![e.to_string()])
    }
}

fn finish(r: Result<Vec<String>, Failure>) -> Outcome {
    match r {
        Ok(m) => Outcome::ok(m),
        Err(Failure::Input(m)) => Outcome { code: EXIT_INPUT, messages: m },
        Err(Failure::Check(m)) => Outcome { code: EXIT_CHECK_FAILED, messages: m },
    }
}

fn input_err(msg: impl Into<String>) -> Failure {
    Failure::Input(vec![msg.into()])
}

fn read(path: &Path) -> Result<(String, FileRecord), Failure> {
    let text = fs::read_to_string(path).map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
    let rec = FileRecord::of(path, text.as_bytes());
    Ok((text, rec))
}

fn write(path: &Path, contents: &str) -> Result<FileRecord, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| input_err(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| input_err(format!("cannot write {}: {e}", path.display())))?;
    Ok(FileRecord::of(path, contents.as_bytes()))
}

fn write_manifest(
    primary: &Path,
    command: &str,
    params: &impl Serialize,
    seeds: Vec<u64>,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
    started: Instant,
) -> Result<(), Failure> {
    let params = serde_json::to_value(params).expect("plain data");
    let m = RunManifest::new(command, params, seeds, inputs, outputs, started.elapsed());
    let text = serde_json::to_string_pretty(&m).expect("plain data") + "\n";
    write(&manifest_path(primary), &text).map(|_| ())
}

fn load_scene(path: &Path) -> Result<(Scene, Option<SegmentSet>, FileRecord), Failure> {
    let (text, rec) = read(path)?;
    let (scene, segs) = io::scene_from_json(&text)?;
    let violations = validate_scene(&scene);
    if !violations.is_empty() {
        let mut msgs = vec![format!("{}: {} scene violation(s)", path.display(), violations.len())];
        msgs.extend(violations.iter().map(|v| format!("  {v}")));
        return Err(Failure::Input(msgs));
    }
    Ok((scene, segs, rec))
}

/// Sorted `*.json` files of a directory, manifests excluded.
fn json_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let rd = fs::read_dir(dir).map_err(|e| input_err(format!("cannot list {}: {e}", dir.display())))?;
    let mut v: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".json") && !name.ends_with(".manifest.json")
        })
        .collect();
    v.sort();
    Ok(v)
}

fn merge_results<T>(results: Vec<Result<T, Failure>>) -> Result<Vec<T>, Failure> {
    let mut ok = Vec::new();
    let mut input = Vec::new();
    let mut check = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(Failure::Input(m)) => input.extend(m),
            Err(Failure::Check(m)) => check.extend(m),
        }
    }
    if !input.is_empty() {
        input.extend(check);
        return Err(Failure::Input(input));
    }
    if !check.is_empty() {
        return Err(Failure::Check(check));
    }
    Ok(ok)
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Output scene file.
    #[arg(long, required_unless_present = "out_dir")]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Write one scene per seed into this directory.
    #[arg(long, conflicts_with = "out")]
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
    /// Seeds for directory mode; defaults to the shipped seed list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 11)]
    pub n_points: usize,
    #[arg(long, default_value_t = 2)]
    pub corridors: usize,
    #[arg(long, default_value_t = 3)]
    pub segments: usize,
    #[arg(long, default_value_t = 20.0)]
    pub segment_length: f64,
    #[arg(long, default_value_t = 3.5)]
    pub lane_spacing: f64,
    #[arg(long, default_value_t = 0.5)]
    pub split_prob: f64,
    #[arg(long, default_value_t = 0.3)]
    pub merge_prob: f64,
    #[arg(long, default_value_t = 3)]
    pub traffic: usize,
    #[arg(long, default_value_t = 0.0)]
    pub grade: f64,
    /// Generate a roundabout with this many arms instead of corridors.
    #[arg(long)]
    pub roundabout_arms: Option<usize>,
    #[arg(long, default_value_t = 15.0)]
    pub radius: f64,
    /// Also emit a lane-segment block.
    #[arg(long)]
    pub with_segments: bool,
    #[arg(long, default_value_t = 1.75)]
    pub half_width: f64,
}

impl SynthArgs {
    pub fn new(out: PathBuf) -> Self {
        Self {
            out: Some(out),
            out_dir: None,
            seeds: vec![],
            seed: 0,
            n_points: 11,
            corridors: 2,
            segments: 3,
            segment_length: 20.0,
            lane_spacing: 3.5,
            split_prob: 0.5,
            merge_prob: 0.3,
            traffic: 3,
            grade: 0.0,
            roundabout_arms: None,
            radius: 15.0,
            with_segments: false,
            half_width: 1.75,
        }
    }

    fn synth_params(&self, seed: u64) -> SynthParams {
        SynthParams {
            n_corridors: self.corridors,
            n_segments: self.segments,
            segment_length: self.segment_length,
            lane_spacing: self.lane_spacing,
            split_prob: self.split_prob,
            merge_prob: self.merge_prob,
            n_points: self.n_points,
            n_traffic: self.traffic,
            grade: self.grade,
            seed,
        }
    }

    fn scene_json(&self, seed: u64) -> Result<String, Failure> {
        let scene = match self.roundabout_arms {
            Some(arms) => generate_roundabout(self.radius, arms, self.n_points, seed)?,
            None => generate_scene(&self.synth_params(seed))?,
        };
        let segs = if self.with_segments { Some(derive_segments(&scene, self.half_width)?) } else { None };
        Ok(io::scene_to_json(&scene, segs.as_ref()))
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Outcome {
    let started = Instant::now();
    finish((|| {
        if let Some(dir) = &args.out_dir {
            let seeds = if args.seeds.is_empty() { SHIPPED_SEEDS.to_vec() } else { args.seeds.clone() };
            let written = merge_results(
                seeds
                    .par_iter()
                    .map(|&s| write(&dir.join(format!("scene_{s}.json")), &args.scene_json(s)?))
                    .collect(),
            )?;
            let n = written.len();
            write_manifest(&dir.join("synth"), "synth", args, seeds, vec![], written, started)?;
            return Ok(vec![format!("wrote {n} scenes to {}", dir.display())]);
        }
        let out = args.out.as_ref().ok_or_else(|| input_err("--out or --out-dir is required"))?;
        let rec = write(out, &args.scene_json(args.seed)?)?;
        write_manifest(out, "synth", args, vec![args.seed], vec![], vec![rec], started)?;
        Ok(vec![format!("wrote {}", out.display())])
    })())
}

// ------------------------------------------------------------ connected

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConnectedArgs {
    /// Scene file, or a directory of scene files.
    #[arg(long)]
    #[serde(skip)]
    pub scene: PathBuf,
    /// Output file, or a directory in directory mode.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

fn connected_one(scene: &Path, out: &Path) -> Result<(FileRecord, FileRecord, usize), Failure> {
    let (s, _, input) = load_scene(scene)?;
    let conn = build_connected_gt(&s)?;
    let rec = write(out, &io::connected_to_json(&conn))?;
    Ok((input, rec, conn.len()))
}

pub fn cmd_connected(args: &ConnectedArgs) -> Outcome {
    let started = Instant::now();
    finish((|| {
        if args.scene.is_dir() {
            let files = json_files(&args.scene)?;
            let done = merge_results(
                files
                    .par_iter()
                    .map(|f| connected_one(f, &args.out.join(f.file_name().expect("listed file"))))
                    .collect(),
            )?;
            let (inputs, outputs): (Vec<_>, Vec<_>) = done.into_iter().map(|(i, o, _)| (i, o)).unzip();
            let n = outputs.len();
            write_manifest(&args.out.join("connected"), "connected", args, vec![], inputs, outputs, started)?;
            return Ok(vec![format!("processed {n} scenes")]);
        }
        let (input, rec, n) = connected_one(&args.scene, &args.out)?;
        write_manifest(&args.out, "connected", args, vec![], vec![input], vec![rec], started)?;
        Ok(vec![format!("{n} connected lanes written to {}", args.out.display())])
    })())
}

// -------------------------------------------------------------- predict

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    /// Scene file, or a directory of scene files.
    #[arg(long)]
    #[serde(skip)]
    pub scene: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Parameter seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature seed; defaults to `--seed`.
    #[arg(long)]
    pub feature_seed: Option<u64>,
    #[arg(long, default_value_t = 32)]
    pub c: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub lane_queries: usize,
    #[arg(long, default_value_t = 32)]
    pub traffic_queries: usize,
    /// Replace the masked cross-attention by the identity.
    #[arg(long)]
    pub no_tam: bool,
    #[arg(long)]
    pub topology_threshold: Option<f64>,
    /// Perturb the input geometry instead of passing it through.
    #[arg(long)]
    pub perturb: bool,
    #[arg(long, default_value_t = 0.0)]
    pub point_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub drop_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub spurious_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub score_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub topo_flip_rate: f64,
    /// Noise seed; defaults to `--seed`.
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Write the model parameters (named tensors) here.
    #[arg(long)]
    #[serde(skip)]
    pub snapshot: Option<PathBuf>,
}

impl PredictArgs {
    pub fn new(scene: PathBuf, out: PathBuf) -> Self {
        Self {
            scene,
            out,
            seed: 0,
            feature_seed: None,
            c: 32,
            heads: 4,
            lane_queries: 64,
            traffic_queries: 32,
            no_tam: false,
            topology_threshold: None,
            perturb: false,
            point_sigma: 0.0,
            drop_rate: 0.0,
            spurious_rate: 0.0,
            score_noise: 0.0,
            topo_flip_rate: 0.0,
            noise_seed: None,
            snapshot: None,
        }
    }

    fn noise(&self) -> NoiseParams {
        NoiseParams {
            point_sigma: self.point_sigma,
            drop_rate: self.drop_rate,
            spurious_rate: self.spurious_rate,
            score_noise: self.score_noise,
            topo_flip_rate: self.topo_flip_rate,
            seed: self.noise_seed.unwrap_or(self.seed),
        }
    }

    fn config(&self) -> Result<PipelineConfig, Failure> {
        let cfg = PipelineConfig {
            dims: ModelDims::new(self.c, self.heads)?,
            n_lane_queries: self.lane_queries,
            n_traffic_queries: self.traffic_queries,
            param_seed: self.seed,
            feature_seed: self.feature_seed.unwrap_or(self.seed),
            geometry: if self.perturb { GeometrySource::Perturbed(self.noise()) } else { GeometrySource::GroundTruth },
            tam: !self.no_tam,
            topology_threshold: self.topology_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct TensorDump<'a> {
    name: String,
    shape: [usize; 2],
    values: &'a [f64],
}

fn snapshot_json(model: &TopologyModel) -> String {
    let rounded: Vec<(String, [usize; 2], Vec<f64>)> = model
        .tensors()
        .into_iter()
        .map(|(n, m)| (n, [m.rows(), m.cols()], m.data().iter().copied().map(io::round_sig).collect()))
        .collect();
    let dump: Vec<TensorDump> =
        rounded.iter().map(|(n, s, v)| TensorDump { name: n.clone(), shape: *s, values: v }).collect();
    serde_json::to_string_pretty(&dump).expect("plain data") + "\n"
}

fn predict_one(
    scene_path: &Path,
    out: &Path,
    args: &PredictArgs,
    cfg: &PipelineConfig,
    model: &TopologyModel,
) -> Result<(FileRecord, FileRecord), Failure> {
    let (scene, segs, input) = load_scene(scene_path)?;
    let pred = run_pipeline_with(&scene, cfg, model)?;
    let pred_segs = match segs {
        Some(gt) if args.perturb => Some(perturb_segments(&gt, &args.noise())?),
        Some(gt) => Some(SegmentSet { scores: vec![1.0; gt.segments.len()], ..gt }),
        None => None,
    };
    let rec = write(out, &io::prediction_to_json(&pred, scene.n_points, pred_segs.as_ref()))?;
    Ok((input, rec))
}

pub fn cmd_predict(args: &PredictArgs) -> Outcome {
    let started = Instant::now();
    finish((|| {
        let cfg = args.config()?;
        let model = TopologyModel::seeded(cfg.dims, cfg.param_seed);
        let mut extra = Vec::new();
        if let Some(p) = &args.snapshot {
            extra.push(write(p, &snapshot_json(&model))?);
        }
        let seeds = vec![args.seed, cfg.feature_seed, args.noise().seed];
        if args.scene.is_dir() {
            let files = json_files(&args.scene)?;
            let done = merge_results(
                files
                    .par_iter()
                    .map(|f| predict_one(f, &args.out.join(f.file_name().expect("listed file")), args, &cfg, &model))
                    .collect(),
            )?;
            let (inputs, mut outputs): (Vec<_>, Vec<_>) = done.into_iter().unzip();
            let n = outputs.len();
            outputs.extend(extra);
            write_manifest(&args.out.join("predict"), "predict", args, seeds, inputs, outputs, started)?;
            return Ok(vec![format!("wrote {n} predictions to {}", args.out.display())]);
        }
        let (input, rec) = predict_one(&args.scene, &args.out, args, &cfg, &model)?;
        let mut outputs = vec![rec];
        outputs.extend(extra);
        write_manifest(&args.out, "predict", args, seeds, vec![input], outputs, started)?;
        Ok(vec![format!("wrote {}", args.out.display())])
    })())
}

// ----------------------------------------------------------------- eval

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Prediction file, or a directory matched to `--gt` by file name.
    #[arg(long)]
    #[serde(skip)]
    pub pred: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub gt: PathBuf,
    /// JSON report; the CSV goes next to it unless `--csv` is given.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
    /// Fréchet thresholds for lane detection, metres.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0])]
    pub lane_thresholds: Vec<f64>,
    #[arg(long, default_value_t = 0.75)]
    pub traffic_iou: f64,
    #[arg(long, default_value_t = 1.5)]
    pub top_lane_threshold: f64,
    #[arg(long, default_value_t = 0.75)]
    pub top_traffic_iou: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0])]
    pub segment_thresholds: Vec<f64>,
    #[arg(long, default_value_t = 1.5)]
    pub top_segment_threshold: f64,
}

impl EvalArgs {
    pub fn new(pred: PathBuf, gt: PathBuf, out: PathBuf) -> Self {
        let d = MetricThresholds::default();
        Self {
            pred,
            gt,
            out,
            csv: None,
            lane_thresholds: d.lane_frechet,
            traffic_iou: d.traffic_iou,
            top_lane_threshold: d.top_lane_frechet,
            top_traffic_iou: d.top_traffic_iou,
            segment_thresholds: d.segment,
            top_segment_threshold: d.top_segment,
        }
    }

    fn thresholds(&self) -> Result<MetricThresholds, Failure> {
        let t = MetricThresholds {
            lane_frechet: self.lane_thresholds.clone(),
            traffic_iou: self.traffic_iou,
            top_lane_frechet: self.top_lane_threshold,
            top_traffic_iou: self.top_traffic_iou,
            segment: self.segment_thresholds.clone(),
            top_segment: self.top_segment_threshold,
        };
        t.validate()?;
        Ok(t)
    }

    fn csv_path(&self) -> PathBuf {
        self.csv.clone().unwrap_or_else(|| self.out.with_extension("csv"))
    }
}

pub const CSV_HEADER: [&str; 9] = ["det_l", "det_t", "top_ll", "top_lt", "ols", "map", "ap_ls", "ap_ped", "top_lsls"];

fn csv_fields(r: &MetricReport) -> Vec<String> {
    let r = io::rounded_report(r);
    let mut v: Vec<String> = [r.det_l, r.det_t, r.top_ll, r.top_lt, r.ols].iter().map(f64::to_string).collect();
    match r.lane_segment {
        Some(s) => v.extend([s.map, s.ap_ls, s.ap_ped, s.top_lsls].iter().map(f64::to_string)),
        None => v.extend(std::iter::repeat_n(String::new(), 4)),
    }
    v
}

fn report_csv(rows: &[(Option<String>, MetricReport)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let labelled = rows.iter().any(|(l, _)| l.is_some());
    let mut header: Vec<&str> = Vec::new();
    if labelled {
        header.push("scene");
    }
    header.extend(CSV_HEADER);
    w.write_record(&header).expect("in-memory write");
    for (label, r) in rows {
        let mut rec = Vec::new();
        if labelled {
            rec.push(label.clone().unwrap_or_default());
        }
        rec.extend(csv_fields(r));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn eval_one(pred_path: &Path, gt_path: &Path, t: &MetricThresholds) -> Result<(MetricReport, [FileRecord; 2]), Failure> {
    let (text, pred_rec) = read(pred_path)?;
    let (pred, pred_segs) = io::prediction_from_json(&text).map_err(|e| input_err(format!("{}: {e}", pred_path.display())))?;
    let (gt, gt_segs, gt_rec) = load_scene(gt_path)?;
    let segs = pred_segs.as_ref().zip(gt_segs.as_ref());
    let report = evaluate(&pred, &gt, segs, t).map_err(|e| input_err(format!("{}: {e}", pred_path.display())))?;
    Ok((report, [pred_rec, gt_rec]))
}

#[derive(Serialize)]
struct SceneReport {
    scene: String,
    report: MetricReport,
}

#[derive(Serialize)]
struct MultiReport {
    mean: MetricReport,
    scenes: Vec<SceneReport>,
}

pub fn cmd_eval(args: &EvalArgs) -> Outcome {
    let started = Instant::now();
    finish((|| {
        let t = args.thresholds()?;
        let csv_path = args.csv_path();
        if args.pred.is_dir() {
            let files = json_files(&args.pred)?;
            let done = merge_results(
                files
                    .par_iter()
                    .map(|f| {
                        let name = f.file_name().expect("listed file");
                        eval_one(f, &args.gt.join(name), &t).map(|(r, recs)| (name.to_string_lossy().into_owned(), r, recs))
                    })
                    .collect(),
            )?;
            let reports: Vec<MetricReport> = done.iter().map(|d| d.1).collect();
            let mean = average_reports(&reports).ok_or_else(|| input_err("no prediction files found"))?;
            let scenes: Vec<SceneReport> = done
                .iter()
                .map(|(n, r, _)| SceneReport { scene: n.clone(), report: io::rounded_report(r) })
                .collect();
            let json = serde_json::to_string_pretty(&MultiReport { mean: io::rounded_report(&mean), scenes })
                .expect("plain data")
                + "\n";
            let mut rows: Vec<(Option<String>, MetricReport)> =
                done.iter().map(|(n, r, _)| (Some(n.clone()), *r)).collect();
            rows.push((Some("mean".into()), mean));
            let outputs = vec![write(&args.out, &json)?, write(&csv_path, &report_csv(&rows))?];
            let inputs = done.into_iter().flat_map(|d| d.2).collect();
            write_manifest(&args.out, "eval", args, vec![], inputs, outputs, started)?;
            return Ok(vec![format!("mean OLS {:.6} over {} scenes", mean.ols, reports.len())]);
        }
        let (report, inputs) = eval_one(&args.pred, &args.gt, &t)?;
        let outputs = vec![
            write(&args.out, &io::report_to_json(&report))?,
            write(&csv_path, &report_csv(&[(None, report)]))?,
        ];
        write_manifest(&args.out, "eval", args, vec![], inputs.to_vec(), outputs, started)?;
        Ok(vec![format!(
            "DET_l {:.6}  DET_t {:.6}  TOP_ll {:.6}  TOP_lt {:.6}  OLS {:.6}",
            report.det_l, report.det_t, report.top_ll, report.top_lt, report.ols
        )])
    })())
}

// ------------------------------------------------------------ gradcheck

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seeded instances per operation.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = lanetopo::gradcheck::DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = lanetopo::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Per-op table (CSV).
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Corrupt every analytic gradient.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

impl GradcheckArgs {
    pub fn new(out: PathBuf) -> Self {
        Self {
            seed: 0,
            instances: 20,
            step: lanetopo::gradcheck::DEFAULT_STEP,
            tolerance: lanetopo::gradcheck::DEFAULT_TOLERANCE,
            out,
            inject_fault: false,
        }
    }
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Outcome {
    let started = Instant::now();
    finish((|| {
        if !(args.step > 0.0 && args.tolerance > 0.0) || args.instances == 0 {
            return Err(input_err("step, tolerance and instances must be positive"));
        }
        let rows = run_suite(args.seed, args.instances, args.step, args.tolerance, args.inject_fault);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["op", "instances", "entries", "max_rel_error", "status"]).expect("in-memory write");
        let mut msgs = Vec::new();
        for r in &rows {
            let status = match r.status {
                CheckStatus::Passed => "passed",
                CheckStatus::Failed => "failed",
                CheckStatus::Skipped => "skipped",
            };
            w.write_record([
                r.op.clone(),
                r.instances.to_string(),
                r.entries.to_string(),
                format!("{:.3e}", r.max_rel_error),
                status.to_string(),
            ])
            .expect("in-memory write");
            msgs.push(match r.status {
                CheckStatus::Skipped => format!("{:<24} skipped: nothing to differentiate", r.op),
                _ => format!("{:<24} {status}  max rel err {:.3e}", r.op, r.max_rel_error),
            });
        }
        let table = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8");
        let rec = write(&args.out, &table)?;
        write_manifest(&args.out, "gradcheck", args, vec![args.seed], vec![], vec![rec], started)?;
        if rows.iter().any(|r| r.status == CheckStatus::Failed) {
            return Err(Failure::Check(msgs));
        }
        Ok(msgs)
    })())
}

// -------------------------------------------------------------- fitdemo

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitdemoArgs {
    /// Scene file; defaults to the built-in two-lane chain.
    #[arg(long)]
    #[serde(skip)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub groups: usize,
    #[arg(long, default_value_t = 11)]
    pub n_points: usize,
    /// JSON file with loss-weight overrides.
    #[arg(long)]
    #[serde(skip)]
    pub weights: Option<PathBuf>,
    /// Success requires the final focal loss below this value.
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    /// Loss trajectory (CSV).
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, hide = true)]
    pub inject_nan_at: Option<usize>,
}

impl FitdemoArgs {
    pub fn new(out: PathBuf) -> Self {
        Self {
            scene: None,
            steps: 500,
            lr: 0.05,
            seed: 0,
            groups: 6,
            n_points: 11,
            weights: None,
            threshold: 0.05,
            out,
            inject_nan_at: None,
        }
    }
}

#[derive(Serialize)]
struct FitParams<'a> {
    #[serde(flatten)]
    args: &'a FitdemoArgs,
    weights: LossWeights,
}

pub fn cmd_fitdemo(args: &FitdemoArgs) -> Outcome {
    let started = Instant::now();
    finish((|| {
        let mut inputs = Vec::new();
        let scene = match &args.scene {
            Some(p) => {
                let (s, _, rec) = load_scene(p)?;
                inputs.push(rec);
                s
            }
            None => two_lane_chain(args.n_points)?,
        };
        let weights = match &args.weights {
            Some(p) => {
                let (text, rec) = read(p)?;
                inputs.push(rec);
                let w: LossWeights =
                    serde_json::from_str(&text).map_err(|e| input_err(format!("{}: {e}", p.display())))?;
                w.validate()?;
                w
            }
            None => LossWeights::default(),
        };
        let cfg = FitConfig {
            steps: args.steps,
            lr: args.lr,
            seed: args.seed,
            groups: args.groups,
            weights,
            inject_nan_at: args.inject_nan_at,
            ..Default::default()
        };
        let traj = match toy_fit(&scene, &cfg) {
            Ok(t) => t,
            Err(e @ lanetopo::Error::Diverged { .. }) => return Err(Failure::Check(vec![e.to_string()])),
            Err(e) => return Err(e.into()),
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "focal", "weighted"]).expect("in-memory write");
        for s in &traj.steps {
            w.write_record([s.step.to_string(), io::round_sig(s.focal).to_string(), io::round_sig(s.weighted).to_string()])
                .expect("in-memory write");
        }
        let table = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8");
        let rec = write(&args.out, &table)?;
        let params = FitParams { args, weights };
        write_manifest(&args.out, "fitdemo", &params, vec![args.seed], inputs, vec![rec], started)?;
        let fin = traj.final_focal();
        let msg = format!(
            "initial focal {:.6}, final focal {fin:.6} after {} steps (threshold {})",
            traj.steps[0].focal, args.steps, args.threshold
        );
        if fin < args.threshold {
            Ok(vec![msg])
        } else {
            Err(Failure::Check(vec![msg]))
        }
    })())
}
