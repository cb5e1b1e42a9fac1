//! Persistence: weights container, annotation files, reports and synthetic fixtures.

mod annotations;
mod report;
mod synth;
mod weights;

pub use annotations::{load_annotations, parse_annotations, render_annotations, write_annotations};
pub use report::{parse_report_csv, render_report, write_report, CsvRow, ReportFormat, CSV_HEADER};
pub use synth::{
    background_windows, face_windows, generate_synthetic_dataset, stream_index, synth_background_image, synth_dataset,
    synth_face_image, DEFAULT_COUNTS, DEFAULT_IMAGE_SIZE,
};
pub use weights::{
    bundle_records, decode_bundle, decode_records, encode_bundle, encode_records, load_weights, save_weights, write_atomic,
    ModelBundle, Record, RecordKind, MAGIC, VERSION,
};

use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{encode_pnm, load_image, Image};

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_image(&bytes)
}

pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pnm(img))
}
