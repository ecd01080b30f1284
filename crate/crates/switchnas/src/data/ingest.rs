//! External data ingest via a CSV manifest.
//!
//! Manifest columns: `image_path,label,group,lighting,split`. Paths are
//! resolved relative to the manifest file. Images must be 8-bit grayscale or
//! RGB rasters (PNG, JPEG, PNM); every image must share the dimensions of
//! the first one. Pixels are normalized to [0,1].

use std::path::Path;

use crate::data::{Dataset, DatasetSpec, Split, SplitKind, N_GROUPS};
use crate::error::{DataError, Result};

struct ManifestRow {
    line: usize,
    path: std::path::PathBuf,
    label: u8,
    group: u8,
    lighting: f64,
    split: SplitKind,
}

fn parse_row(line_no: usize, row: &str, base: &Path) -> Result<ManifestRow> {
    let parts: Vec<&str> = row.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(DataError::MalformedRow {
            line: line_no,
            message: format!("expected 5 columns, got {}", parts.len()),
        }
        .into());
    }
    let label: u8 = parts[1].parse().map_err(|_| DataError::MalformedRow {
        line: line_no,
        message: format!("bad label {:?}", parts[1]),
    })?;
    if label > 1 {
        return Err(DataError::MalformedRow { line: line_no, message: format!("label {label} is not 0/1") }.into());
    }
    let group: i64 = parts[2].parse().map_err(|_| DataError::MalformedRow {
        line: line_no,
        message: format!("bad group {:?}", parts[2]),
    })?;
    if !(1..=N_GROUPS as i64).contains(&group) {
        return Err(DataError::BadGroup { line: line_no, group: parts[2].to_string() }.into());
    }
    let lighting: f64 = parts[3].parse().map_err(|_| DataError::MalformedRow {
        line: line_no,
        message: format!("bad lighting {:?}", parts[3]),
    })?;
    if !(lighting > 0.0 && lighting <= 1.0) {
        return Err(DataError::MalformedRow {
            line: line_no,
            message: format!("lighting {lighting} outside (0, 1]"),
        }
        .into());
    }
    let split = match parts[4] {
        "train" => SplitKind::Train,
        "val" => SplitKind::Val,
        "test" => SplitKind::Test,
        other => {
            return Err(DataError::UnknownSplit { line: line_no, token: other.to_string() }.into())
        }
    };
    Ok(ManifestRow { line: line_no, path: base.join(parts[0]), label, group: group as u8, lighting, split })
}

/// Build a dataset from a manifest CSV.
pub fn ingest_external(manifest_path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| DataError::MissingFile {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if i == 0 && trimmed == "image_path,label,group,lighting,split" {
            continue;
        }
        rows.push(parse_row(i + 1, trimmed, base)?);
    }
    if rows.is_empty() {
        return Err(DataError::EmptyManifest.into());
    }

    // First image fixes the dimensions and channel count.
    type SplitAccum = (Vec<f64>, Vec<u8>, Vec<u8>, Vec<f64>);
    let mut dims: Option<(u32, u32, usize)> = None;
    let mut splits: [SplitAccum; 3] = Default::default();
    for row in &rows {
        let img = image::open(&row.path).map_err(|e| DataError::MissingFile {
            path: row.path.display().to_string(),
            message: e.to_string(),
        })?;
        let (w, h, channels) = match dims {
            Some(d) => d,
            None => {
                let c = if img.color().channel_count() >= 3 { 3 } else { 1 };
                let d = (img.width(), img.height(), c);
                dims = Some(d);
                d
            }
        };
        if img.width() != w || img.height() != h {
            return Err(DataError::ImageShape {
                path: row.path.display().to_string(),
                got: (img.width(), img.height()),
                expected: (w, h),
            }
            .into());
        }
        let pixels: Vec<f64> = if channels == 1 {
            img.to_luma8().into_raw().iter().map(|&p| p as f64 / 255.0).collect()
        } else {
            img.to_rgb8().into_raw().iter().map(|&p| p as f64 / 255.0).collect()
        };
        debug_assert_eq!(pixels.len(), (w * h) as usize * channels);
        let slot = match row.split {
            SplitKind::Train => &mut splits[0],
            SplitKind::Val => &mut splits[1],
            SplitKind::Test => &mut splits[2],
        };
        slot.0.extend_from_slice(&pixels);
        slot.1.push(row.label);
        slot.2.push(row.group);
        slot.3.push(row.lighting);
        let _ = row.line;
    }

    let (w, h, c) = dims.expect("at least one row");
    let observed_min = rows.iter().map(|r| r.lighting).fold(f64::INFINITY, f64::min);
    let observed_max = rows.iter().map(|r| r.lighting).fold(0.0f64, f64::max);
    let mut group_counts = vec![0.0; N_GROUPS];
    for row in rows.iter().filter(|r| r.split == SplitKind::Test) {
        group_counts[row.group as usize - 1] += 1.0;
    }
    if group_counts.iter().all(|&c| c == 0.0) {
        for row in &rows {
            group_counts[row.group as usize - 1] += 1.0;
        }
    }

    let [train, val, test] = splits.map(|(images, labels, groups, lighting)| Split {
        images,
        labels,
        groups,
        lighting,
    });
    let spec = DatasetSpec {
        train_count: train.len(),
        val_count: val.len(),
        test_count: test.len(),
        image_h: h as usize,
        image_w: w as usize,
        image_c: c,
        group_weights: group_counts,
        lighting_min: observed_min,
        lighting_max: observed_max,
        sigma_train: 0.0,
        sigma_test: 0.0,
        contrast_jitter: 0.0,
        seed: 0,
    };
    Ok(Dataset { spec, train, val, test })
}
