//! Patch manifests: one JSON line per patch plus a packed binary blob.
//!
//! The blob starts with `CNPB` and a `u32` version, followed by each
//! record's `width * height` image bytes and then its `width * height`
//! little-endian `f32` ground-truth values. A manifest line looks like
//!
//! ```json
//! {"image_id":"img_01","scale":0.9,"origin":[112,0],"width":225,"height":225,"gt_count":41.2,"offset":8}
//! ```
//!
//! where `offset` is the byte position of the record's image in the blob.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::codec::{put_f32s, ByteReader, VERSION};
use crate::augment::PatchRecord;
use crate::density::DensityMap;
use crate::error::{Error, Format, Result};
use crate::image::GrayImage;

pub const BLOB_MAGIC: &[u8; 4] = b"CNPB";
const BLOB_HEADER: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLine {
    pub image_id: String,
    pub scale: f64,
    pub origin: [usize; 2],
    pub width: usize,
    pub height: usize,
    pub gt_count: f64,
    pub offset: u64,
}

/// Writes the manifest lines to `lines` and the raster blob to `blob`.
pub fn write_manifest(records: &[PatchRecord], mut lines: impl Write, mut blob: impl Write) -> Result<()> {
    blob.write_all(BLOB_MAGIC)?;
    blob.write_all(&VERSION.to_le_bytes())?;
    let mut offset = BLOB_HEADER as u64;
    let mut buf = Vec::new();
    for r in records {
        let line = ManifestLine {
            image_id: r.image_id.clone(),
            scale: r.scale,
            origin: [r.origin.0, r.origin.1],
            width: r.image.width,
            height: r.image.height,
            gt_count: r.gt_count,
            offset,
        };
        serde_json::to_writer(&mut lines, &line).map_err(std::io::Error::from)?;
        lines.write_all(b"\n")?;
        buf.clear();
        buf.extend_from_slice(&r.image.pixels);
        put_f32s(&mut buf, &r.gt.values);
        blob.write_all(&buf)?;
        offset += buf.len() as u64;
    }
    lines.flush()?;
    blob.flush()?;
    Ok(())
}

pub fn read_manifest(lines: impl BufRead, blob: &[u8]) -> Result<Vec<PatchRecord>> {
    let mut header = ByteReader::new(Format::PatchBlob, blob);
    header.magic(BLOB_MAGIC)?;
    header.version()?;
    let mut records = Vec::new();
    for (n, line) in lines.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            format: Format::PatchBlob,
            reason: format!("manifest line {}: {e}", n + 1),
        })?;
        let start = usize::try_from(m.offset).unwrap_or(usize::MAX).min(blob.len());
        let mut r = ByteReader::new(Format::PatchBlob, &blob[start..]);
        let pixels = r.take(m.width * m.height)?.to_vec();
        let values = r.f32s(m.width * m.height)?;
        records.push(PatchRecord {
            image_id: m.image_id,
            scale: m.scale,
            origin: (m.origin[0], m.origin[1]),
            image: GrayImage::new(m.width, m.height, pixels)?,
            gt: DensityMap::from_values(m.height, m.width, values)?,
            gt_count: m.gt_count,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{augment_image, AugmentConfig};
    use crate::density::{AnnotationSet, Point};

    #[test]
    fn manifest_round_trip() {
        let img = GrayImage::new(260, 240, (0..260 * 240).map(|i| (i % 251) as u8).collect()).unwrap();
        let ann = AnnotationSet::new("img", vec![Point::new(30.0, 40.0), Point::new(200.0, 100.0)]);
        let records = augment_image(&img, &ann, 4.0, &AugmentConfig::default()).unwrap();
        let (mut lines, mut blob) = (Vec::new(), Vec::new());
        write_manifest(&records, &mut lines, &mut blob).unwrap();
        assert_eq!(&blob[..4], b"CNPB");
        let back = read_manifest(lines.as_slice(), &blob).unwrap();
        assert_eq!(back, records);

        let short = &blob[..blob.len() - 1];
        assert!(matches!(read_manifest(lines.as_slice(), short), Err(Error::Truncated { .. })));
    }
}
