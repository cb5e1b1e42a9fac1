//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::Check;
use facecascade::eval::{audit_reported_f1, split_dataset, FaceClass, ReportedRow};
use facecascade::haar::{cascade_train, CascadeConfig};
use facecascade::io::{
    background_windows, decode_bundle, decode_records, encode_bundle, encode_records, face_windows, stream_index,
    synth_background_image, synth_dataset, synth_face_image, ModelBundle, Record, RecordKind,
};
use facecascade::mtcnn::{detect_faces_traced, iou, train_tiny_nets, DetectionBox, IouMode, MtcnnConfig, TinyTrainConfig};
use facecascade::tensor::{ArchSize, NetworkSpec};
use facecascade::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 42;

const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const GRADIENT_BUDGET: Duration = Duration::from_secs(5);
const AUDIT_BUDGET: Duration = Duration::from_secs(1);
const PYRAMID_BUDGET: Duration = Duration::from_secs(1);
const E2E_BUDGET: Duration = Duration::from_secs(120);
const HAAR_BUDGET: Duration = Duration::from_secs(60);

const GRAD_EPS: f32 = 1e-2;
const F1_TOLERANCE: f64 = 1e-3;
const MTCNN_F1_COMPUTED: f64 = 0.8313;
const MTCNN_F1_TOLERANCE: f64 = 1e-4;

const E2E_TRAIN_IMAGES: usize = 120;
const E2E_HELD_OUT: usize = 50;
const E2E_HELD_OUT_OFFSET: usize = 100_000;
const E2E_MIN_HIT_RATE: f64 = 0.9;
const E2E_IOU: f32 = 0.5;

const HAAR_MIN_DETECTION: f64 = 0.9;
const HAAR_MAX_FP: f64 = 0.3;

fn run(name: &str, budget: Option<Duration>, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let check = f();
    let elapsed = start.elapsed();
    let in_time = budget.map_or(true, |b| elapsed <= b);
    let passed = check.passed && in_time;
    let limit = budget.map_or(String::new(), |b| format!(" / {:.0?}", b));
    println!(
        "{} {name}: {} [{:.2?}{limit}]",
        if passed { "PASS" } else { "FAIL" },
        check.detail,
        elapsed
    );
    passed
}

fn check(passed: bool, detail: String) -> Check {
    Check { passed, detail }
}

fn oracle_equivalence() -> Check {
    let parts = [
        ("conv2d", common::conv_sweep(100, SEED)),
        ("dense", common::dense_sweep(100, SEED)),
        ("maxpool", common::maxpool_sweep(100, SEED)),
        ("nms", common::nms_sweep(100, 200, SEED)),
        ("integral", common::integral_sweep(1000, SEED)),
    ];
    let passed = parts.iter().all(|(_, c)| c.passed);
    let detail = parts.iter().map(|(n, c)| format!("{n}: {}", c.detail)).collect::<Vec<_>>().join("; ");
    check(passed, detail)
}

fn table_rows() -> Vec<ReportedRow> {
    [
        ("Haar-Cascade", 0.615, 0.635, "0.625"),
        ("CNN", 0.643, 0.662, "0.652"),
        ("Deep CNN", 0.687, 0.691, "0.69"),
        ("Cascaded CNN", 0.682, 0.702, "0.692"),
        ("MTCNN", 0.89, 0.78, "0.823"),
    ]
    .into_iter()
    .map(|(name, precision, recall, f1)| ReportedRow {
        name: name.into(),
        precision,
        recall,
        f1_printed: f1.into(),
    })
    .collect()
}

fn f1_audit() -> Check {
    let audit = match audit_reported_f1(&table_rows(), F1_TOLERANCE) {
        Ok(a) => a,
        Err(e) => return check(false, e.to_string()),
    };
    let consistent: Vec<&str> = audit.iter().filter(|a| a.consistent).map(|a| a.name.as_str()).collect();
    let flagged: Vec<_> = audit.iter().filter(|a| !a.consistent).collect();
    let mtcnn_ok = flagged.len() == 1
        && flagged[0].name == "MTCNN"
        && (flagged[0].computed - MTCNN_F1_COMPUTED).abs() <= MTCNN_F1_TOLERANCE;
    let detail = format!(
        "{} of {} consistent; flagged: {}",
        consistent.len(),
        audit.len(),
        flagged
            .iter()
            .map(|a| format!("{} printed {} computed {:.5}", a.name, a.printed, a.computed))
            .collect::<Vec<_>>()
            .join(", ")
    );
    check(consistent.len() == 4 && mtcnn_ok, detail)
}

fn end_to_end() -> Check {
    let inner = || -> facecascade::Result<Check> {
        let train: Vec<(_, DetectionBox)> = synth_dataset([E2E_TRAIN_IMAGES, 0, 0, 0], 96, SEED)?
            .into_iter()
            .map(|(ann, img)| (img, ann.boxes[0].clone()))
            .collect();
        let (nets, _) = train_tiny_nets(&train, &TinyTrainConfig::default())?;
        let cfg = MtcnnConfig::default();
        let (mut hits, mut monotone) = (0, true);
        for i in 0..E2E_HELD_OUT {
            let index = stream_index(FaceClass::Front, E2E_HELD_OUT_OFFSET + i);
            let (img, gt) = synth_face_image(FaceClass::Front, 96, SEED, index)?;
            let t = detect_faces_traced(&img, &nets, &cfg)?;
            monotone &= t.proposals >= t.refined && t.refined >= t.outputs && t.outputs >= t.boxes.len();
            if t.boxes.iter().any(|b| iou(b, &gt, IouMode::Union) >= E2E_IOU) {
                hits += 1;
            }
        }
        let rate = hits as f64 / E2E_HELD_OUT as f64;
        Ok(check(
            rate >= E2E_MIN_HIT_RATE && monotone,
            format!("{hits}/{E2E_HELD_OUT} held-out faces at IoU >= {E2E_IOU}; survivor counts non-increasing: {monotone}"),
        ))
    };
    inner().unwrap_or_else(|e| check(false, e.to_string()))
}

fn haar_cascade() -> Check {
    let inner = || -> facecascade::Result<Check> {
        let n = 16;
        let faces = face_windows(300, n, SEED)?;
        let nonfaces = background_windows(600, n, SEED)?;
        let backgrounds = (0..10)
            .map(|i| synth_background_image(96, SEED, (2 << 40) | i))
            .collect::<facecascade::Result<Vec<_>>>()?;
        let trained = cascade_train(&faces[..200], &nonfaces[..400], &backgrounds, &CascadeConfig::default())?;
        let c = &trained.cascade;
        let det = faces[200..].iter().filter(|w| c.accepts(w)).count() as f64 / 100.0;
        let fp = nonfaces[400..].iter().filter(|w| c.accepts(w)).count() as f64 / 200.0;
        Ok(check(
            det >= HAAR_MIN_DETECTION && fp <= HAAR_MAX_FP,
            format!(
                "{} stages; held-out detection {det:.3} (>= {HAAR_MIN_DETECTION}), false positives {fp:.3} (<= {HAAR_MAX_FP})",
                c.stages.len()
            ),
        ))
    };
    inner().unwrap_or_else(|e| check(false, e.to_string()))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cascade-detect"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn cli_pipeline(root: &Path) -> Result<Vec<Vec<u8>>, String> {
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    let (data, weights, dets, report) = (p("data"), p("weights.mtcw"), p("detections.jsonl"), p("report.csv"));
    cli(&["gen-data", "--out", &data, "--counts", "8,4,4,4", "--size", "64", "--seed", "7"])?;
    cli(&["train-tiny", "--data", &data, "--out", &weights, "--split", "0.8", "--epochs", "2"])?;
    cli(&["detect", "--weights", &weights, "--images", &data, "--out", &dets])?;
    cli(&["eval", "--weights", &weights, "--data", &data, "--split", "0.8", "--out", &report])?;
    [weights, dets, report]
        .iter()
        .map(|f| std::fs::read(f).map_err(|e| format!("{f}: {e}")))
        .collect()
}

fn determinism() -> Check {
    let run_once = || -> Result<Vec<Vec<u8>>, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        cli_pipeline(dir.path())
    };
    match (run_once(), run_once()) {
        (Ok(a), Ok(b)) => {
            let same: Vec<bool> = a.iter().zip(&b).map(|(x, y)| x == y).collect();
            check(
                same.iter().all(|&s| s),
                format!("weights/detections/report identical: {same:?} ({} bytes of weights)", a[0].len()),
            )
        }
        (Err(e), _) | (_, Err(e)) => check(false, e),
    }
}

fn serialization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let bundle = ModelBundle {
        nets: vec![
            NetworkSpec::pnet(ArchSize::Canonical, &mut rng),
            NetworkSpec::rnet(ArchSize::Canonical, &mut rng),
            NetworkSpec::onet(ArchSize::Canonical, &mut rng),
        ],
        cascade: None,
    };
    let round_trip = (|| -> facecascade::Result<bool> {
        let first = encode_bundle(&bundle)?;
        let second = encode_bundle(&decode_bundle(&first)?)?;
        Ok(first == second)
    })();
    let identical = matches!(round_trip, Ok(true));

    let mut bad = encode_bundle(&bundle).unwrap_or_default();
    bad[..4].copy_from_slice(b"XXXX");
    let bad_magic = matches!(decode_bundle(&bad), Err(Error::BadMagic { .. }));

    let record = Record {
        name: "w".into(),
        kind: RecordKind::Tensor,
        dims: vec![2, 5],
        data: (0..10).map(|v| v as f32).collect(),
    };
    let bytes = encode_records(&[record]).unwrap_or_default();
    let truncated = matches!(
        decode_records(&bytes[..bytes.len() - 4]),
        Err(Error::Truncated { needed: 40, available: 36, .. })
    );
    check(
        identical && bad_magic && truncated,
        format!("save-load-save identical: {identical}; bad magic: {bad_magic}; truncated payload (40 needed, 36 present): {truncated}"),
    )
}

fn split_law() -> Check {
    let items: Vec<usize> = (0..627).collect();
    let Ok((train, test)) = split_dataset(&items, 0.8, SEED) else {
        return check(false, "split failed".into());
    };
    let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
    all.sort_unstable();
    let partition = all == items;
    let stable = split_dataset(&items, 0.8, SEED).is_ok_and(|again| again == (train.clone(), test.clone()));
    check(
        (train.len(), test.len()) == (501, 126) && partition && stable,
        format!(
            "sizes ({}, {}); disjoint and exhaustive: {partition}; stable under re-seeding: {stable}",
            train.len(),
            test.len()
        ),
    )
}

fn main() {
    let results = [
        run("oracle equivalence", Some(ORACLE_BUDGET), oracle_equivalence),
        run("gradient check", Some(GRADIENT_BUDGET), || common::gradient_check(SEED, GRAD_EPS)),
        run("reported F1 audit", Some(AUDIT_BUDGET), f1_audit),
        run("pyramid law", Some(PYRAMID_BUDGET), || common::pyramid_sweep(100, SEED)),
        run("end-to-end cascade detector", Some(E2E_BUDGET), end_to_end),
        run("boosted Haar cascade", Some(HAAR_BUDGET), haar_cascade),
        run("CLI determinism", None, determinism),
        run("weights serialization", None, serialization),
        run("split law", None, split_law),
    ];
    let failed = results.iter().filter(|&&p| !p).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
