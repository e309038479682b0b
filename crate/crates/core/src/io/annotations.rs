//! `{"image": "<id>", "points": [[x, y], ...]}` head annotations.

use std::path::Path;

use serde_json::{json, Value};

use crate::density::{AnnotationSet, Point};
use crate::error::{Error, Result};

pub fn parse_annotations(bytes: &[u8]) -> Result<AnnotationSet> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| Error::AnnotationJson(e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::AnnotationJson("top level must be an object".into()))?;
    let image = obj.get("image").ok_or(Error::AnnotationMissingKey("image"))?;
    let image = image
        .as_str()
        .ok_or_else(|| Error::AnnotationJson("`image` must be a string".into()))?;
    let points = obj.get("points").ok_or(Error::AnnotationMissingKey("points"))?;
    let points = points
        .as_array()
        .ok_or_else(|| Error::AnnotationJson("`points` must be an array".into()))?;
    let points = points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let pair = p
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| Error::AnnotationJson(format!("point {index} is not an [x, y] pair")))?;
            match (pair[0].as_f64(), pair[1].as_f64()) {
                (Some(x), Some(y)) => Ok(Point::new(x, y)),
                _ => Err(Error::AnnotationNonNumeric { index }),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnnotationSet::new(image, points))
}

/// Parses and clamps into a `width x height` image; also returns how many
/// points were out of bounds.
pub fn parse_annotations_for(bytes: &[u8], width: usize, height: usize) -> Result<(AnnotationSet, usize)> {
    let mut set = parse_annotations(bytes)?;
    let moved = set.clamp_to(width, height);
    Ok((set, moved))
}

pub fn emit_annotations(set: &AnnotationSet) -> Vec<u8> {
    let points: Vec<[f64; 2]> = set.points.iter().map(|p| [p.x, p.y]).collect();
    serde_json::to_vec(&json!({ "image": set.image_id, "points": points })).expect("plain JSON values")
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    parse_annotations(&std::fs::read(path)?)
}

pub fn write_annotations(path: impl AsRef<Path>, set: &AnnotationSet) -> Result<()> {
    Ok(std::fs::write(path, emit_annotations(set))?)
}
