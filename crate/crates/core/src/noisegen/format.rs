//! On-disk dataset layout: a directory holding
//!
//! * `header.json`: class counts, feature dimension, split/tag counts and the
//!   noise spec that produced the data;
//! * `features.f32`: row-major little-endian `f32`, one row per record;
//! * `records.jsonl`: one `{index, given_label, true_label, noise_tag, split}`
//!   object per line, in row order.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabeledDataset, NoiseSpec, NoiseTag, Sample, Split};
use crate::error::{Error, Result};

pub const HEADER_FILE: &str = "header.json";
pub const FEATURES_FILE: &str = "features.f32";
pub const RECORDS_FILE: &str = "records.jsonl";

const FORMAT_NAME: &str = "dualspace-dataset";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub test: usize,
    pub train_clean: usize,
    pub train_closed: usize,
    pub train_open: usize,
    pub test_open: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub known_classes: usize,
    pub total_classes: usize,
    pub dim: usize,
    pub counts: Counts,
    pub spec: Option<NoiseSpec>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    index: usize,
    #[serde(flatten)]
    sample: Sample,
}

impl DatasetHeader {
    pub fn describe(ds: &LabeledDataset) -> Self {
        DatasetHeader {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            known_classes: ds.known_classes,
            total_classes: ds.total_classes,
            dim: ds.dim,
            counts: Counts {
                train: ds.indices(Split::Train).len(),
                test: ds.indices(Split::Test).len(),
                train_clean: ds.count(Split::Train, NoiseTag::Clean),
                train_closed: ds.count(Split::Train, NoiseTag::Closed),
                train_open: ds.count(Split::Train, NoiseTag::Open),
                test_open: ds.count(Split::Test, NoiseTag::Open),
            },
            spec: ds.spec.clone(),
        }
    }
}

pub fn write_dataset(dir: &Path, ds: &LabeledDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let header_path = dir.join(HEADER_FILE);
    let header = serde_json::to_string_pretty(&DatasetHeader::describe(ds))
        .map_err(|e| Error::format(&header_path, e))?;
    fs::write(&header_path, header + "\n").map_err(|e| Error::io(&header_path, e))?;

    let feat_path = dir.join(FEATURES_FILE);
    let bytes: Vec<u8> = ds.features.iter().flat_map(|f| f.to_le_bytes()).collect();
    fs::write(&feat_path, bytes).map_err(|e| Error::io(&feat_path, e))?;

    let rec_path = dir.join(RECORDS_FILE);
    let file = File::create(&rec_path).map_err(|e| Error::io(&rec_path, e))?;
    let mut w = BufWriter::new(file);
    for (index, &sample) in ds.samples.iter().enumerate() {
        let line = serde_json::to_string(&Record { index, sample })
            .map_err(|e| Error::format(&rec_path, e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(&rec_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&rec_path, e))
}

pub fn read_dataset(dir: &Path) -> Result<LabeledDataset> {
    let header_path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: DatasetHeader =
        serde_json::from_str(&text).map_err(|e| Error::format(&header_path, e))?;
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(Error::format(
            &header_path,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }

    let rec_path = dir.join(RECORDS_FILE);
    let file = File::open(&rec_path).map_err(|e| Error::io(&rec_path, e))?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&rec_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::format(&rec_path, format!("line {}: {e}", lineno + 1)))?;
        if rec.index != samples.len() {
            return Err(Error::format(
                &rec_path,
                format!("line {}: expected index {}, got {}", lineno + 1, samples.len(), rec.index),
            ));
        }
        samples.push(rec.sample);
    }

    let feat_path = dir.join(FEATURES_FILE);
    let bytes = fs::read(&feat_path).map_err(|e| Error::io(&feat_path, e))?;
    if bytes.len() != samples.len() * header.dim * 4 {
        return Err(Error::format(
            &feat_path,
            format!("{} bytes for {} rows of dim {}", bytes.len(), samples.len(), header.dim),
        ));
    }
    let features = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let ds = LabeledDataset {
        dim: header.dim,
        known_classes: header.known_classes,
        total_classes: header.total_classes,
        features,
        samples,
        spec: header.spec,
    };
    if DatasetHeader::describe(&ds).counts != header.counts {
        return Err(Error::format(&header_path, "counts disagree with records"));
    }
    ds.check_invariants()?;
    Ok(ds)
}
