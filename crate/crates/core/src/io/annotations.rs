use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::weights::write_atomic;
use crate::error::{Error, Result};
use crate::eval::{Annotation, FaceClass};
use crate::mtcnn::DetectionBox;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationLine {
    id: String,
    path: String,
    class: String,
    boxes: Vec<[f32; 4]>,
    /// Optional five (x, y) keypoints per box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    landmarks: Option<Vec<[[f32; 2]; 5]>>,
}

/// Parses line-delimited annotation records; blank lines are skipped.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    let mut ids = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Annotation { line, reason };
        let rec: AnnotationLine = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if rec.class.parse::<FaceClass>().is_err() {
            return Err(err(format!("unknown class {:?}", rec.class)));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(err(format!("duplicate id {:?}", rec.id)));
        }
        if let Some(l) = &rec.landmarks {
            if l.len() != rec.boxes.len() {
                return Err(err(format!("{} landmark sets for {} boxes", l.len(), rec.boxes.len())));
            }
        }
        let mut boxes = Vec::with_capacity(rec.boxes.len());
        for (k, [x1, y1, x2, y2]) in rec.boxes.iter().copied().enumerate() {
            let mut b = DetectionBox::new(x1, y1, x2, y2, 1.0);
            if !b.is_valid() {
                return Err(err(format!("box {k} {:?} is not a valid box", rec.boxes[k])));
            }
            b.landmarks = rec.landmarks.as_ref().map(|l| l[k]);
            boxes.push(b);
        }
        out.push(Annotation {
            id: rec.id,
            path: rec.path,
            class: rec.class,
            boxes,
        });
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

pub fn render_annotations(anns: &[Annotation]) -> String {
    let mut out = String::new();
    for a in anns {
        let has_lm = !a.boxes.is_empty() && a.boxes.iter().all(|b| b.landmarks.is_some());
        let line = AnnotationLine {
            id: a.id.clone(),
            path: a.path.clone(),
            class: a.class.clone(),
            boxes: a.boxes.iter().map(|b| b.corners()).collect(),
            landmarks: has_lm.then(|| a.boxes.iter().map(|b| b.landmarks.unwrap()).collect()),
        };
        out.push_str(&serde_json::to_string(&line).expect("plain data serializes"));
        out.push('\n');
    }
    out
}

pub fn write_annotations(anns: &[Annotation], path: &Path) -> Result<()> {
    write_atomic(path, render_annotations(anns).as_bytes())
}
