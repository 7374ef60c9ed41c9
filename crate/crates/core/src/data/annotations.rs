//! VinDr-CXR style annotation CSV parsing and emission.
//!
//! Layout: `image_id,class_name,class_id,rad_id,x_min,y_min,x_max,y_max`.
//! No-finding rows (class id 14) leave the coordinate columns empty.

use std::io::{Read, Write};

use crate::data::types::{AnnotationBox, NO_FINDING_CLASS};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] = [
    "image_id", "class_name", "class_id", "rad_id", "x_min", "y_min", "x_max", "y_max",
];

const CLASS_NAMES: [&str; 15] = [
    "Aortic enlargement",
    "Atelectasis",
    "Calcification",
    "Cardiomegaly",
    "Consolidation",
    "ILD",
    "Infiltration",
    "Lung Opacity",
    "Nodule/Mass",
    "Other lesion",
    "Pleural effusion",
    "Pleural thickening",
    "Pneumothorax",
    "Pulmonary fibrosis",
    "No finding",
];

pub fn class_name(class_id: u8) -> &'static str {
    CLASS_NAMES.get(class_id as usize).copied().unwrap_or("Unknown")
}

fn parse_field<T: std::str::FromStr>(raw: &str, name: &str, line: usize) -> Result<T> {
    raw.trim().parse::<T>().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid {name}: {raw:?}"),
    })
}

/// Parse an annotation CSV stream into per-row `(image_id, AnnotationBox)`.
///
/// Rows keep input order, so rows of one image stay grouped the way the
/// source file groups them. Finding rows with a missing or non-numeric
/// coordinate fail with the 1-based data line number.
pub fn parse_annotations<R: Read>(reader: R) -> Result<Vec<(String, AnnotationBox)>> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let headers = csv_reader.headers()?.clone();
    let expected: Vec<&str> = CSV_HEADER.to_vec();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            line: 0,
            msg: format!("unexpected header {got:?}, expected {expected:?}"),
        });
    }

    let mut out = Vec::new();
    for (idx, record) in csv_reader.records().enumerate() {
        let line = idx + 1;
        let record = record?;
        if record.len() < 4 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 8 fields, got {}", record.len()),
            });
        }
        let image_id = record[0].trim().to_string();
        let class_id: u8 = parse_field(&record[2], "class_id", line)?;
        let rad_id = record[3].trim().to_string();

        if class_id == NO_FINDING_CLASS {
            out.push((image_id, AnnotationBox::no_finding(rad_id)));
            continue;
        }

        let coord = |i: usize, name: &str| -> Result<f32> {
            let raw = record.get(i).unwrap_or("");
            if raw.trim().is_empty() {
                return Err(Error::Parse {
                    line,
                    msg: format!("missing {name} on finding row"),
                });
            }
            parse_field(raw, name, line)
        };
        let x_min = coord(4, "x_min")?;
        let y_min = coord(5, "y_min")?;
        let x_max = coord(6, "x_max")?;
        let y_max = coord(7, "y_max")?;
        let boxed = AnnotationBox::new(class_id, x_min, y_min, x_max, y_max, rad_id)
            .map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
        out.push((image_id, boxed));
    }
    Ok(out)
}

/// Serialize annotations back into the same CSV layout.
pub fn write_annotations<W: Write>(
    writer: W,
    rows: &[(String, AnnotationBox)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for (image_id, b) in rows {
        if b.is_no_finding() {
            w.write_record([
                image_id.as_str(),
                class_name(b.class_id),
                &b.class_id.to_string(),
                b.rad_id.as_str(),
                "",
                "",
                "",
                "",
            ])?;
        } else {
            w.write_record([
                image_id.as_str(),
                class_name(b.class_id),
                &b.class_id.to_string(),
                b.rad_id.as_str(),
                &b.x_min.to_string(),
                &b.y_min.to_string(),
                &b.x_max.to_string(),
                &b.y_max.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Group parsed rows by image id, preserving first-seen image order.
pub fn group_by_image(
    rows: Vec<(String, AnnotationBox)>,
) -> Vec<(String, Vec<AnnotationBox>)> {
    let mut order: Vec<String> = Vec::new();
    let mut map: std::collections::HashMap<String, Vec<AnnotationBox>> =
        std::collections::HashMap::new();
    for (id, b) in rows {
        if !map.contains_key(&id) {
            order.push(id.clone());
        }
        map.entry(id).or_default().push(b);
    }
    order
        .into_iter()
        .map(|id| {
            let boxes = map.remove(&id).unwrap();
            (id, boxes)
        })
        .collect()
}
