//! Dataset ingestion, preprocessing, augmentation, splitting and synthetic data.

mod augment;
mod image;
mod split;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::tensor::Tensor;
use crate::weights::Preprocessing;

pub use augment::{augment, AugmentationPolicy};
pub use image::{
    decode_any, decode_image, encode_image, encode_png, encode_pnm, resize_bilinear, FloatGrid, Grid, ImageFormat, PixelGrid,
};
pub use split::{read_split_csv, stratified_split, write_split_csv, Fraction, Partition, SplitPlan};
pub use synth::{synth_dataset, write_dataset, SynthConfig};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image: {0}")]
    Image(String),
    #[error("{0}")]
    Dataset(String),
    #[error("class `{0}` has no records")]
    EmptyClass(Label),
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },
    #[error("split file: {0}")]
    SplitFile(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// The closed label set. `Covid` is index 0 and the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Covid,
    Normal,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Covid, Label::Normal];

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Covid => "covid",
            Label::Normal => "normal",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "covid" => Ok(Label::Covid),
            "normal" => Ok(Label::Normal),
            other => Err(DataError::Invalid {
                what: "label",
                detail: format!("`{other}` (expected covid or normal)"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    /// `<label>/<file name>`, unique within a dataset.
    pub id: String,
    pub pixels: PixelGrid,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    records: Vec<ImageRecord>,
    class_counts: BTreeMap<Label, usize>,
}

impl LabeledDataset {
    pub fn new(records: Vec<ImageRecord>) -> Result<Self, DataError> {
        let mut seen = std::collections::HashSet::new();
        let mut class_counts = BTreeMap::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(DataError::Dataset(format!("duplicate record id `{}`", r.id)));
            }
            *class_counts.entry(r.label).or_insert(0) += 1;
        }
        Ok(Self { records, class_counts })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ImageRecord> {
        self.records
    }

    pub fn class_counts(&self) -> &BTreeMap<Label, usize> {
        &self.class_counts
    }

    pub fn count(&self, label: Label) -> usize {
        self.class_counts.get(&label).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Records whose ids appear in `ids`, in the order of `ids`.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&ImageRecord>, DataError> {
        let index: std::collections::HashMap<&str, &ImageRecord> = self.records.iter().map(|r| (r.id.as_str(), r)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| DataError::Dataset(format!("record `{id}` is not in the dataset")))
            })
            .collect()
    }
}

/// A file that was skipped during a directory scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanWarning {
    pub path: PathBuf,
    pub reason: String,
}

impl fmt::Display for ScanWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.reason)
    }
}

#[derive(Debug, Clone)]
pub struct ScanOutcome {
    pub dataset: LabeledDataset,
    pub warnings: Vec<ScanWarning>,
}

/// Reads `root/<label>/*.{pgm,ppm,png}`. Unreadable images become warnings;
/// files with other extensions are ignored.
pub fn scan_directory(root: impl AsRef<Path>) -> Result<ScanOutcome, DataError> {
    let root = root.as_ref();
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut labeled_dirs = 0;
    let mut entries: Vec<_> = fs::read_dir(root)
        .map_err(|e| DataError::io(root, e))?
        .collect::<Result<_, _>>()
        .map_err(|e| DataError::io(root, e))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let Ok(label) = name.parse::<Label>() else {
            warnings.push(ScanWarning {
                path,
                reason: "directory name is not a known label".into(),
            });
            continue;
        };
        labeled_dirs += 1;
        let mut files: Vec<_> = fs::read_dir(&path)
            .map_err(|e| DataError::io(&path, e))?
            .collect::<Result<_, _>>()
            .map_err(|e| DataError::io(&path, e))?;
        files.sort_by_key(|e| e.file_name());
        for file in files {
            let fpath = file.path();
            let Some(format) = fpath.extension().and_then(|e| e.to_str()).and_then(ImageFormat::from_extension) else {
                continue;
            };
            let decoded = fs::read(&fpath)
                .map_err(|e| e.to_string())
                .and_then(|bytes| decode_image(&bytes, format).map_err(|e| e.to_string()));
            match decoded {
                Ok(pixels) => records.push(ImageRecord {
                    id: format!("{}/{}", label, file.file_name().to_string_lossy()),
                    pixels,
                    label,
                }),
                Err(reason) => warnings.push(ScanWarning { path: fpath, reason }),
            }
        }
    }
    if labeled_dirs == 0 {
        return Err(DataError::Dataset(format!(
            "{} has no label subdirectories (expected covid/ and normal/)",
            root.display()
        )));
    }
    Ok(ScanOutcome {
        dataset: LabeledDataset::new(records)?,
        warnings,
    })
}

/// Scales to `[0, 1]`, then applies `(x − mean)/std` per output channel.
/// Grayscale input is replicated across the output channels; colour input
/// feeding a single-channel model is averaged.
pub fn to_input_tensor(grid: &FloatGrid, prep: &Preprocessing) -> Result<Tensor, DataError> {
    let c_out = prep.mean.len();
    if prep.std.len() != c_out || c_out == 0 {
        return Err(DataError::Invalid {
            what: "normalization",
            detail: format!("{} means for {} stds", prep.mean.len(), prep.std.len()),
        });
    }
    let (h, w, c_in) = (grid.height(), grid.width(), grid.channels());
    if c_in != 1 && c_in != c_out {
        return Err(DataError::Invalid {
            what: "channels",
            detail: format!("cannot map {c_in} image channels onto {c_out} model channels"),
        });
    }
    let src = grid.data();
    let mut data = vec![0.0f32; c_out * h * w];
    for c in 0..c_out {
        let (mean, std) = (prep.mean[c], prep.std[c]);
        let plane = &mut data[c * h * w..(c + 1) * h * w];
        for (i, out) in plane.iter_mut().enumerate() {
            let v = if c_in == 1 { src[i] } else { src[i * c_in + c] };
            *out = (v / 255.0 - mean) / std;
        }
    }
    Ok(Tensor::new([1, c_out, h, w], data).expect("sized above"))
}

/// Resizes to the model input and normalizes: the full serving-time transform.
pub fn preprocess(pixels: &PixelGrid, prep: &Preprocessing) -> Result<Tensor, DataError> {
    let mut grid = pixels.to_float();
    if grid.channels() == 3 && prep.mean.len() == 1 {
        grid = Grid::new(
            grid.width(),
            grid.height(),
            1,
            grid.data().chunks_exact(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect(),
        )?;
    }
    let resized = resize_bilinear(&grid, prep.input_size.h, prep.input_size.w)?;
    to_input_tensor(&resized, prep)
}
