//! Reading universes and image sets from disk.

use std::collections::BTreeSet;
use std::path::Path;

use instenc_core::universe::{build_universe, Payload, SampleSpec};
use instenc_core::Universe;
use instenc_tensor::Tensor;

use crate::CliError;

/// Labeled images as the neural stages consume them. Class indices follow
/// the sorted order of the label strings.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageData {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub sensitive: Option<Vec<usize>>,
}

fn malformed(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {what}", path.display()))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| malformed(path, e))
}

fn headers(path: &Path, r: &mut csv::Reader<std::fs::File>) -> Result<Vec<String>, CliError> {
    Ok(r.headers().map_err(|e| malformed(path, e))?.iter().map(str::to_string).collect())
}

fn sorted_set<'a>(values: impl Iterator<Item = &'a String>) -> Vec<String> {
    values.cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Header `id,label[,sensitive],f0,..,fk`; every row must carry k+1 numbers.
pub fn read_universe_csv(path: &Path) -> Result<Universe, CliError> {
    let mut r = reader(path)?;
    let head = headers(path, &mut r)?;
    if head.len() < 3 || head[0] != "id" || head[1] != "label" {
        return Err(malformed(path, "header must start with `id,label` and name at least one feature"));
    }
    let has_sensitive = head[2] == "sensitive";
    let first_feature = if has_sensitive { 3 } else { 2 };
    let mut samples = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| malformed(path, e))?;
        if rec.len() != head.len() {
            return Err(malformed(path, format!("row {} has {} fields, header has {}", line + 1, rec.len(), head.len())));
        }
        let features = rec
            .iter()
            .skip(first_feature)
            .map(|v| v.parse::<f64>().map_err(|_| malformed(path, format!("row {}: `{v}` is not a number", line + 1))))
            .collect::<Result<Vec<f64>, _>>()?;
        let mut s = SampleSpec::new(&rec[0], Payload::Features(features), &rec[1]);
        if has_sensitive {
            s = s.with_sensitive(&rec[2]);
        }
        samples.push(s);
    }
    let labels = sorted_set(samples.iter().filter_map(|s| s.label.as_ref()));
    Ok(build_universe(samples, labels, None)?)
}

/// Header `id,label,tokens`, tokens space separated. Returns the universe
/// and the number of rows dropped for having fewer than `min_tokens`.
pub fn read_token_csv(path: &Path, min_tokens: usize) -> Result<(Universe, usize), CliError> {
    let mut r = reader(path)?;
    let head = headers(path, &mut r)?;
    if head != ["id", "label", "tokens"] {
        return Err(malformed(path, "header must be `id,label,tokens`"));
    }
    let mut samples = Vec::new();
    let mut dropped = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| malformed(path, e))?;
        if rec.len() != 3 {
            return Err(malformed(path, format!("row {} has {} fields", line + 1, rec.len())));
        }
        let tokens = rec[2]
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|_| malformed(path, format!("row {}: `{t}` is not a token id", line + 1))))
            .collect::<Result<Vec<u32>, _>>()?;
        if tokens.len() < min_tokens {
            dropped += 1;
            continue;
        }
        samples.push(SampleSpec::new(&rec[0], Payload::Tokens(tokens), &rec[1]));
    }
    let labels = sorted_set(samples.iter().filter_map(|s| s.label.as_ref()));
    Ok((build_universe(samples, labels, None)?, dropped))
}

struct LabelRow {
    id: String,
    label: String,
    sensitive: Option<String>,
}

fn read_label_csv(path: &Path) -> Result<Vec<LabelRow>, CliError> {
    let mut r = reader(path)?;
    let head = headers(path, &mut r)?;
    let with_s = match head.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["id", "label"] => false,
        ["id", "label", "sensitive"] => true,
        _ => return Err(malformed(path, "header must be `id,label` or `id,label,sensitive`")),
    };
    r.records()
        .enumerate()
        .map(|(line, rec)| {
            let rec = rec.map_err(|e| malformed(path, e))?;
            if rec.len() != head.len() {
                return Err(malformed(path, format!("row {} has {} fields", line + 1, rec.len())));
            }
            Ok(LabelRow {
                id: rec[0].to_string(),
                label: rec[1].to_string(),
                sensitive: with_s.then(|| rec[2].to_string()),
            })
        })
        .collect()
}

/// Loads a raw tensor and divides by `pixel_max` when given; the result
/// must lie in `[0, 1]`.
fn read_pixels(path: &Path, pixel_max: Option<f64>) -> Result<Tensor, CliError> {
    let t = Tensor::load(path).map_err(|e| malformed(path, e))?;
    let t = match pixel_max {
        Some(m) if m > 0.0 => t.map(|x| x / m),
        Some(m) => return Err(CliError::Config(format!("pixel_max must be positive, got {m}"))),
        None => t,
    };
    if t.data().iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(malformed(path, "pixel values fall outside [0, 1]; set pixel_max"));
    }
    Ok(t)
}

fn index_by_sorted(values: &[String]) -> Vec<usize> {
    let set = sorted_set(values.iter());
    values.iter().map(|v| set.binary_search(v).expect("value comes from the set")).collect()
}

pub fn read_raw_images(path: &Path, labels: &Path, pixel_max: Option<f64>) -> Result<ImageData, CliError> {
    let images = read_pixels(path, pixel_max)?;
    if images.shape().len() != 4 {
        return Err(malformed(path, format!("expected [N, C, H, W], found {:?}", images.shape())));
    }
    let rows = read_label_csv(labels)?;
    if rows.len() != images.shape()[0] {
        return Err(malformed(labels, format!("{} label rows for {} images", rows.len(), images.shape()[0])));
    }
    let label_strings: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
    let sensitive = match rows.iter().filter(|r| r.sensitive.is_some()).count() {
        0 => None,
        _ => Some(index_by_sorted(&rows.iter().map(|r| r.sensitive.clone().unwrap_or_default()).collect::<Vec<_>>())),
    };
    Ok(ImageData {
        images,
        labels: index_by_sorted(&label_strings),
        sensitive,
    })
}

/// A raw tensor `[N, ...]` as a feature universe; sample `i` is row `i`.
pub fn read_raw_universe(path: &Path, labels: &Path, pixel_max: Option<f64>) -> Result<Universe, CliError> {
    let t = read_pixels(path, pixel_max)?;
    let rows = read_label_csv(labels)?;
    let n = *t.shape().first().ok_or_else(|| malformed(path, "scalar tensor"))?;
    if rows.len() != n {
        return Err(malformed(labels, format!("{} label rows for {n} samples", rows.len())));
    }
    let per = if n == 0 { 0 } else { t.len() / n };
    let samples = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let s = SampleSpec::new(&r.id, Payload::Features(t.data()[i * per..(i + 1) * per].to_vec()), &r.label);
            match &r.sensitive {
                Some(v) => s.with_sensitive(v),
                None => s,
            }
        })
        .collect();
    let label_set = sorted_set(rows.iter().map(|r| &r.label));
    Ok(build_universe(samples, label_set, None)?.with_feature_shape(t.shape()[1..].to_vec())?)
}
