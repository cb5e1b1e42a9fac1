//! `cascade-detect`: batch front end for the face detectors.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 I/O error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use facecascade::eval::{evaluate_dataset, split_dataset, Annotation, EvalOptions};
use facecascade::haar::{cascade_detect, cascade_train, face_free_regions, training_windows, CascadeConfig, StageTargets, StrongCascade};
use facecascade::imaging::Image;
use facecascade::io::{
    generate_synthetic_dataset, load_annotations, load_weights, read_image, render_report, save_weights, write_image,
    write_report, ModelBundle, ReportFormat, DEFAULT_COUNTS, DEFAULT_IMAGE_SIZE,
};
use facecascade::mtcnn::{
    detect_faces, propose, refine_stage, square_and_clip, train_tiny_nets, DetectionBox, IouMode, MtcnnConfig, MtcnnNets,
    TinyTrainConfig,
};
use facecascade::tensor::NetKind;
use rayon::prelude::*;

const THREADS_ENV: &str = "CASCADE_DETECT_THREADS";

#[derive(Parser)]
#[command(
    name = "cascade-detect",
    version,
    about = "Cascaded face detection: MTCNN and Haar cascade",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect faces and write one JSON record per image.
    Detect(DetectArgs),
    /// Score a detector against an annotated dataset.
    Eval(EvalArgs),
    /// Train a Haar cascade from an annotated dataset.
    TrainHaar(TrainHaarArgs),
    /// Train the tiny P/R/O networks from an annotated dataset.
    TrainTiny(TrainTinyArgs),
    /// Write a synthetic annotated dataset.
    GenData(GenDataArgs),
    /// Time each detector stage (median of several runs).
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Detector {
    Mtcnn,
    Haar,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalDetector {
    Mtcnn,
    Haar,
    /// Returns the ground truth; a sanity check of the harness.
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Jsonl => ReportFormat::Jsonl,
        }
    }
}

#[derive(Args, Clone)]
struct MtcnnArgs {
    #[arg(long, default_value_t = 20.0)]
    min_face: f32,
    #[arg(long, default_value_t = 0.709)]
    scale_factor: f32,
    /// P, R and O stage thresholds.
    #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.7, 0.7])]
    thresholds: Vec<f32>,
}

impl MtcnnArgs {
    fn config(&self) -> Result<MtcnnConfig> {
        if self.thresholds.len() != 3 {
            return Err(usage("--thresholds takes three comma-separated values"));
        }
        let cfg = MtcnnConfig {
            min_face_size: self.min_face,
            scale_factor: self.scale_factor,
            stage_thresholds: [self.thresholds[0], self.thresholds[1], self.thresholds[2]],
            ..MtcnnConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct HaarScanArgs {
    /// Pixel step of the sliding window.
    #[arg(long, default_value_t = 2)]
    step: usize,
    /// Downscale ratio between pyramid levels.
    #[arg(long, default_value_t = 1.25)]
    scale_stride: f32,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long, value_enum, default_value = "mtcnn")]
    detector: Detector,
    #[arg(long)]
    weights: PathBuf,
    /// An image file or a directory of PPM/PGM files.
    #[arg(long)]
    images: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for copies of the inputs with box outlines.
    #[arg(long)]
    annotated: Option<PathBuf>,
    #[command(flatten)]
    mtcnn: MtcnnArgs,
    #[command(flatten)]
    haar: HaarScanArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum, default_value = "mtcnn")]
    detector: EvalDetector,
    #[arg(long, required_if_eq_any([("detector", "mtcnn"), ("detector", "haar")]))]
    weights: Option<PathBuf>,
    /// Dataset directory holding annotations.jsonl.
    #[arg(long)]
    data: PathBuf,
    /// Evaluate only the test part of a seeded split with this train fraction.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    iou: f32,
    /// Row label; defaults to the detector name.
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    mtcnn: MtcnnArgs,
    #[command(flatten)]
    haar: HaarScanArgs,
}

#[derive(Args)]
struct TrainHaarArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Train only on the train part of a seeded split with this fraction.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    window: usize,
    #[arg(long, default_value_t = 10)]
    stages: usize,
    #[arg(long, default_value_t = 50)]
    rounds: usize,
    #[arg(long, default_value_t = 50_000)]
    pool_cap: usize,
    #[arg(long, default_value_t = 4)]
    negatives_per_image: usize,
}

#[derive(Args)]
struct TrainTinyArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    split: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Epochs for each of the three networks.
    #[arg(long)]
    epochs: Option<usize>,
    /// Use at most this many training images.
    #[arg(long)]
    max_images: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// Images per class: front, front_mask, left_mask, right_mask.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_COUNTS)]
    counts: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_IMAGE_SIZE)]
    size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "mtcnn")]
    detector: Detector,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[command(flatten)]
    mtcnn: MtcnnArgs,
    #[command(flatten)]
    haar: HaarScanArgs,
}

/// A mistake in how the tool was invoked (exit 1).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// A defect in the input data (exit 2).
fn data_error(msg: impl Into<String>) -> anyhow::Error {
    facecascade::Error::Data(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<facecascade::Error>() {
            return if e.is_usage() {
                1
            } else if e.is_io() {
                3
            } else {
                2
            };
        }
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    2
}

/// The error chain joined by `: `, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| usage(format!("{THREADS_ENV} must be an integer >= 1, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow!("thread pool: {e}"))
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("ppm" | "pgm" | "pnm")
    )
}

/// `(id, path)` for a single image or every image in a directory, sorted by name.
fn list_images(input: &Path) -> Result<Vec<(String, PathBuf)>> {
    let meta = std::fs::metadata(input).map_err(|e| facecascade::Error::Io {
        path: input.to_path_buf(),
        source: e,
    })?;
    let mut paths = if meta.is_dir() {
        let mut v = Vec::new();
        for entry in std::fs::read_dir(input).with_context(|| format!("listing {}", input.display()))? {
            let p = entry?.path();
            if p.is_file() && is_image(&p) {
                v.push(p);
            }
        }
        v
    } else {
        vec![input.to_path_buf()]
    };
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| (p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()), p))
        .collect())
}

fn load_dataset(dir: &Path) -> Result<Vec<(Annotation, Image)>> {
    let anns = load_annotations(&dir.join("annotations.jsonl"))?;
    anns.into_par_iter()
        .map(|a| {
            let img = read_image(&dir.join(&a.path)).with_context(|| format!("image {:?}", a.id))?;
            Ok((a, img))
        })
        .collect()
}

fn select(data: Vec<(Annotation, Image)>, split: Option<f64>, seed: u64, train: bool) -> Result<Vec<(Annotation, Image)>> {
    match split {
        None => Ok(data),
        Some(f) => {
            let (tr, te) = split_dataset(&data, f, seed)?;
            Ok(if train { tr } else { te })
        }
    }
}

fn mtcnn_nets(bundle: &ModelBundle) -> Result<MtcnnNets> {
    let get = |k: NetKind| {
        bundle
            .net(k)
            .cloned()
            .ok_or_else(|| data_error(format!("weights file has no {} network", k.name())))
    };
    Ok(MtcnnNets {
        pnet: get(NetKind::PNet)?,
        rnet: get(NetKind::RNet)?,
        onet: get(NetKind::ONet)?,
    })
}

fn haar_cascade(bundle: &ModelBundle) -> Result<StrongCascade> {
    bundle
        .cascade
        .clone()
        .ok_or_else(|| data_error("weights file has no cascade"))
}

enum Model {
    Mtcnn(MtcnnNets, MtcnnConfig),
    Haar(StrongCascade, HaarScanArgs),
}

impl Model {
    fn load(detector: Detector, weights: &Path, mtcnn: &MtcnnArgs, haar: &HaarScanArgs) -> Result<Self> {
        let bundle = load_weights(weights)?;
        Ok(match detector {
            Detector::Mtcnn => Model::Mtcnn(mtcnn_nets(&bundle)?, mtcnn.config()?),
            Detector::Haar => Model::Haar(haar_cascade(&bundle)?, haar.clone()),
        })
    }

    fn detect(&self, img: &Image) -> facecascade::Result<Vec<DetectionBox>> {
        match self {
            Model::Mtcnn(nets, cfg) => detect_faces(img, nets, cfg),
            Model::Haar(c, a) => cascade_detect(img, c, a.step, a.scale_stride),
        }
    }
}

/// Draws 3-pixel outlines clamped to the image: red on RGB, 255 on gray.
fn draw_outlines(img: &mut Image, boxes: &[DetectionBox]) {
    const THICKNESS: i64 = 3;
    let (w, h) = (img.width() as i64, img.height() as i64);
    if w == 0 || h == 0 {
        return;
    }
    let color: &[u8] = if img.channels() == 3 { &[255, 0, 0] } else { &[255] };
    for b in boxes {
        let clamp_x = |v: f32| (v.round() as i64).clamp(0, w - 1);
        let clamp_y = |v: f32| (v.round() as i64).clamp(0, h - 1);
        let (x1, y1, x2, y2) = (clamp_x(b.x1), clamp_y(b.y1), clamp_x(b.x2 - 1.0), clamp_y(b.y2 - 1.0));
        for y in y1..=y2 {
            for x in x1..=x2 {
                let edge = x - x1 < THICKNESS || x2 - x < THICKNESS || y - y1 < THICKNESS || y2 - y < THICKNESS;
                if edge {
                    for (c, v) in color.iter().enumerate() {
                        img.set(x as usize, y as usize, c, *v);
                    }
                }
            }
        }
    }
}

fn output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => facecascade::io::write_atomic(p, text.as_bytes())?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let model = Model::load(a.detector, &a.weights, &a.mtcnn, &a.haar)?;
    let images = list_images(&a.images)?;
    if let Some(dir) = &a.annotated {
        std::fs::create_dir_all(dir).map_err(|e| facecascade::Error::Io {
            path: dir.clone(),
            source: e,
        })?;
    }
    let records: Vec<String> = images
        .par_iter()
        .map(|(id, path)| {
            let mut img = read_image(path).with_context(|| format!("image {id:?}"))?;
            let boxes = model.detect(&img)?;
            if let Some(dir) = &a.annotated {
                draw_outlines(&mut img, &boxes);
                write_image(&img, &dir.join(format!("{id}.ppm")))?;
            }
            Ok(format!(
                "{{\"id\":{},\"boxes\":{}}}",
                serde_json::to_string(id)?,
                serde_json::to_string(&boxes)?
            ))
        })
        .collect::<Result<_>>()?;
    let mut text = String::new();
    for r in records {
        text.push_str(&r);
        text.push('\n');
    }
    output(a.out.as_deref(), &text)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let data = select(load_dataset(&a.data)?, a.split, a.seed, false)?;
    let model = match a.detector {
        EvalDetector::Oracle => None,
        EvalDetector::Mtcnn | EvalDetector::Haar => {
            let d = if a.detector == EvalDetector::Mtcnn { Detector::Mtcnn } else { Detector::Haar };
            let weights = a.weights.as_deref().ok_or_else(|| usage("--weights is required"))?;
            Some(Model::load(d, weights, &a.mtcnn, &a.haar)?)
        }
    };
    let name = a.algorithm.clone().unwrap_or_else(|| {
        match a.detector {
            EvalDetector::Mtcnn => "mtcnn",
            EvalDetector::Haar => "haar",
            EvalDetector::Oracle => "oracle",
        }
        .to_string()
    });
    let opts = EvalOptions {
        iou_min: a.iou,
        image_level_tn: true,
    };
    let report = evaluate_dataset(
        &name,
        |ann, img| match &model {
            Some(m) => m.detect(img),
            None => Ok(ann.boxes.clone()),
        },
        &data,
        opts,
    )?;
    match &a.out {
        Some(p) => write_report(&report, a.format.into(), p)?,
        None => output(None, &render_report(&report, a.format.into()))?,
    }
    Ok(())
}

fn cmd_train_haar(a: TrainHaarArgs) -> Result<()> {
    let data = select(load_dataset(&a.data)?, a.split, a.seed, true)?;
    let images: Vec<(Image, Vec<DetectionBox>)> = data.into_iter().map(|(ann, img)| (img, ann.boxes)).collect();
    let (pos, neg) = training_windows(&images, a.window, a.negatives_per_image, a.seed)?;
    if pos.is_empty() || neg.is_empty() {
        return Err(data_error("dataset yields no positive or no negative windows"));
    }
    let cfg = CascadeConfig {
        window: a.window,
        targets: StageTargets::default(),
        max_stages: a.stages,
        rounds_per_stage: a.rounds,
        pool_cap: a.pool_cap,
        seed: a.seed,
    };
    let backgrounds = face_free_regions(&images, a.window)?;
    let trained = cascade_train(&pos, &neg, &backgrounds, &cfg)?;
    eprintln!(
        "trained {} stages on {} positives / {} negatives; training detection {:?}, false positives {:?}",
        trained.cascade.stages.len(),
        pos.len(),
        neg.len(),
        trained.detection_history.last(),
        trained.false_positive_history.last()
    );
    let bundle = ModelBundle {
        nets: Vec::new(),
        cascade: Some(trained.cascade),
    };
    save_weights(&bundle, &a.out)?;
    Ok(())
}

fn cmd_train_tiny(a: TrainTinyArgs) -> Result<()> {
    let data = select(load_dataset(&a.data)?, a.split, a.seed, true)?;
    let mut pairs: Vec<(Image, DetectionBox)> = data
        .into_iter()
        .filter_map(|(ann, img)| ann.boxes.first().cloned().map(|b| (img, b)))
        .collect();
    if let Some(m) = a.max_images {
        pairs.truncate(m);
    }
    if pairs.is_empty() {
        return Err(data_error("no annotated faces to train on"));
    }
    let mut cfg = TinyTrainConfig {
        seed: a.seed,
        ..TinyTrainConfig::default()
    };
    if let Some(e) = a.epochs {
        cfg.epochs = [e; 3];
    }
    if let Some(lr) = a.learning_rate {
        cfg.learning_rate = lr;
    }
    let (nets, log) = train_tiny_nets(&pairs, &cfg)?;
    for (name, l) in [("pnet", &log.pnet), ("rnet", &log.rnet), ("onet", &log.onet)] {
        eprintln!("{name}: final epoch loss {:.6}", l.last().copied().unwrap_or(f64::NAN));
    }
    let bundle = ModelBundle {
        nets: vec![nets.pnet, nets.rnet, nets.onet],
        cascade: None,
    };
    save_weights(&bundle, &a.out)?;
    Ok(())
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    if a.counts.len() != 4 {
        return Err(usage("--counts takes four comma-separated values"));
    }
    let counts = [a.counts[0], a.counts[1], a.counts[2], a.counts[3]];
    let anns = generate_synthetic_dataset(counts, a.size, a.seed, &a.out)?;
    eprintln!("wrote {} images to {}", anns.len(), a.out.display());
    Ok(())
}

fn median_ms(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    if a.runs == 0 {
        return Err(usage("--runs must be >= 1"));
    }
    let model = Model::load(a.detector, &a.weights, &a.mtcnn, &a.haar)?;
    let images: Vec<Image> = list_images(&a.images)?
        .iter()
        .map(|(id, p)| read_image(p).with_context(|| format!("image {id:?}")))
        .collect::<Result<_>>()?;
    let mut rows: Vec<(&str, Vec<f64>)> = match &model {
        Model::Mtcnn(..) => vec![("pnet", vec![]), ("rnet", vec![]), ("onet", vec![]), ("total", vec![])],
        Model::Haar(..) => vec![("cascade", vec![]), ("total", vec![])],
    };
    for _ in 0..a.runs {
        let mut times = vec![0f64; rows.len()];
        for img in &images {
            match &model {
                Model::Mtcnn(nets, cfg) => {
                    let (w, h) = (img.width(), img.height());
                    let sq = |bs: Vec<DetectionBox>| -> Vec<DetectionBox> {
                        bs.iter().map(|b| square_and_clip(b, w, h, false)).collect()
                    };
                    let t = Instant::now();
                    let p = sq(propose(img, &nets.pnet, cfg)?);
                    times[0] += t.elapsed().as_secs_f64();
                    let t = Instant::now();
                    let r = sq(refine_stage(img, &p, &nets.rnet, cfg.stage_thresholds[1], cfg.nms_inter_stage, IouMode::Union)?);
                    times[1] += t.elapsed().as_secs_f64();
                    let t = Instant::now();
                    refine_stage(img, &r, &nets.onet, cfg.stage_thresholds[2], cfg.nms_final, IouMode::Min)?;
                    times[2] += t.elapsed().as_secs_f64();
                }
                Model::Haar(..) => {
                    let t = Instant::now();
                    model.detect(img)?;
                    times[0] += t.elapsed().as_secs_f64();
                }
            }
        }
        let total: f64 = times.iter().sum();
        *times.last_mut().unwrap() = total;
        for (row, t) in rows.iter_mut().zip(times) {
            row.1.push(t * 1e3);
        }
    }
    let mut text = format!("{} images, median of {} runs\nstage\tmedian_ms\n", images.len(), a.runs);
    for (name, v) in rows {
        text.push_str(&format!("{name}\t{:.3}\n", median_ms(v)));
    }
    output(None, &text)
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Detect(a) => cmd_detect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::TrainHaar(a) => cmd_train_haar(a),
        Command::TrainTiny(a) => cmd_train_tiny(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outline_is_three_pixels_and_clamped() {
        let mut img = Image::filled(20, 20, 3, 0).unwrap();
        draw_outlines(&mut img, &[DetectionBox::new(2.0, 2.0, 12.0, 12.0, 1.0)]);
        assert_eq!(img.get(2, 2, 0), 255);
        assert_eq!(img.get(4, 7, 0), 255);
        assert_eq!(img.get(5, 7, 0), 0);
        assert_eq!(img.get(4, 7, 1), 0);
        let mut gray = Image::filled(8, 8, 1, 0).unwrap();
        draw_outlines(&mut gray, &[DetectionBox::new(-5.0, -5.0, 50.0, 50.0, 1.0)]);
        assert_eq!(gray.get(0, 0, 0), 255);
        assert_eq!(gray.get(7, 7, 0), 255);
        assert_eq!(gray.get(3, 3, 0), 0);
    }

    #[test]
    fn error_classes() {
        let io: anyhow::Error = facecascade::Error::Io {
            path: "x".into(),
            source: std::io::Error::other("x"),
        }
        .into();
        assert_eq!(exit_code(&io), 3);
        assert_eq!(exit_code(&usage("bad")), 1);
        assert_eq!(exit_code(&data_error("bad").context("while loading")), 2);
    }
}
