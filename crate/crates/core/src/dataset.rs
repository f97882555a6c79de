//! Labeled feature datasets, split manifests and their on-disk formats.
//!
//! Binary feature files are little-endian:
//!
//! ```text
//! "GDCF" | version u32 | dim u32 | point_count u64 | records...
//! record (version 1) = class_id u32, dim x f32
//! record (version 2) = class_id u32, dim x f32, origin u8
//! ```
//!
//! Version 2 is only produced by the augmented-set dump and carries one
//! origin byte per record (0 = support, 1 = sampled). The manifest is a
//! separate JSON file listing the class ids of each split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ClassId = u32;

pub const FEATURE_MAGIC: [u8; 4] = *b"GDCF";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_VERSION_WITH_ORIGIN: u32 = 2;
const HEADER_LEN: u64 = 20;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic {found:?} at byte 0, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {version} at byte 4")]
    UnsupportedVersion { version: u32 },
    #[error("malformed header at byte {offset}: {message}")]
    Header { offset: u64, message: String },
    #[error("file truncated at byte {offset} (record {record})")]
    Truncated { offset: u64, record: u64 },
    #[error("{extra} trailing bytes after last record at byte {offset}")]
    TrailingBytes { offset: u64, extra: u64 },
    #[error("row {row}: expected {expected} feature values, found {found}")]
    DimensionMismatch { row: usize, expected: usize, found: usize },
    #[error("row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("row {row}: non-finite feature value at column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("row {row}: class {class_id} is not listed in any split of the manifest")]
    UnknownClass { row: usize, class_id: ClassId },
    #[error("class {class_id} appears in both the {first} and {second} splits")]
    Overlap { class_id: ClassId, first: Split, second: Split },
    #[error("class {class_id} is listed in the manifest but has no points")]
    EmptyClass { class_id: ClassId },
    #[error("split {0} has no classes")]
    EmptySplit(Split),
    #[error("dataset has no points")]
    Empty,
    #[error("feature dimension must be positive")]
    ZeroDim,
    #[error("origin list has {found} entries for {expected} points")]
    OriginCount { expected: usize, found: usize },
    #[error("manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
}

impl DatasetError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Base,
    Validation,
    Novel,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Base, Split::Validation, Split::Novel];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Base => "base",
            Split::Validation => "validation",
            Split::Novel => "novel",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Split::Base),
            "validation" | "val" => Ok(Split::Validation),
            "novel" | "test" => Ok(Split::Novel),
            other => Err(format!("unknown split `{other}` (expected base, validation or novel)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileFormat {
    Binary,
    Csv,
}

impl FileFormat {
    /// `.csv` means CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Binary,
        }
    }
}

impl FromStr for FileFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" | "bin" | "gdcf" => Ok(FileFormat::Binary),
            "csv" => Ok(FileFormat::Csv),
            other => Err(format!("unknown format `{other}` (expected binary or csv)")),
        }
    }
}

/// Assignment of class ids to the base, validation and novel splits.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub base: BTreeSet<ClassId>,
    pub validation: BTreeSet<ClassId>,
    pub novel: BTreeSet<ClassId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub names: BTreeMap<ClassId, String>,
}

impl SplitManifest {
    pub fn new(
        base: impl IntoIterator<Item = ClassId>,
        validation: impl IntoIterator<Item = ClassId>,
        novel: impl IntoIterator<Item = ClassId>,
    ) -> Self {
        Self {
            base: base.into_iter().collect(),
            validation: validation.into_iter().collect(),
            novel: novel.into_iter().collect(),
            names: BTreeMap::new(),
        }
    }

    pub fn classes(&self, split: Split) -> &BTreeSet<ClassId> {
        match split {
            Split::Base => &self.base,
            Split::Validation => &self.validation,
            Split::Novel => &self.novel,
        }
    }

    pub fn split_of(&self, class_id: ClassId) -> Option<Split> {
        Split::ALL.into_iter().find(|&s| self.classes(s).contains(&class_id))
    }

    /// Checks pairwise disjointness and non-empty splits.
    pub fn check_disjoint(&self) -> Result<(), DatasetError> {
        for (i, &a) in Split::ALL.iter().enumerate() {
            if self.classes(a).is_empty() {
                return Err(DatasetError::EmptySplit(a));
            }
            for &b in &Split::ALL[i + 1..] {
                if let Some(&class_id) = self.classes(a).intersection(self.classes(b)).next() {
                    return Err(DatasetError::Overlap { class_id, first: a, second: b });
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| DatasetError::Manifest { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| DatasetError::io(path, e))
    }
}

/// One labeled f64 feature vector (a support, query or training point).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPoint {
    pub class_id: ClassId,
    pub features: Vec<f64>,
}

/// Point indices of one split, grouped by class in ascending class id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub split: Split,
    classes: BTreeMap<ClassId, Vec<usize>>,
}

impl Partition {
    pub fn from_labels(labels: &[ClassId], manifest: &SplitManifest, split: Split) -> Self {
        let members = manifest.classes(split);
        let mut classes: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, c) in labels.iter().enumerate() {
            if members.contains(c) {
                classes.entry(*c).or_default().push(i);
            }
        }
        Self { split, classes }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_points(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes.keys().copied()
    }

    /// Point indices of `class_id`, in file order.
    pub fn indices(&self, class_id: ClassId) -> &[usize] {
        self.classes.get(&class_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &[usize])> {
        self.classes.iter().map(|(c, v)| (*c, v.as_slice()))
    }
}

/// Labeled f32 feature vectors with their split manifest.
///
/// Immutable once constructed; every constructor validates the dataset
/// invariants.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    dim: usize,
    labels: Vec<ClassId>,
    values: Vec<f32>,
    split: SplitManifest,
}

impl FeatureDataset {
    pub fn new(dim: usize, labels: Vec<ClassId>, values: Vec<f32>, split: SplitManifest) -> Result<Self, DatasetError> {
        if dim == 0 {
            return Err(DatasetError::ZeroDim);
        }
        if labels.is_empty() {
            return Err(DatasetError::Empty);
        }
        if values.len() != labels.len() * dim {
            let row = values.len() / dim;
            return Err(DatasetError::DimensionMismatch { row, expected: dim, found: values.len() % dim });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DatasetError::NonFinite { row: pos / dim, column: pos % dim });
        }
        split.check_disjoint()?;
        let mut present = BTreeSet::new();
        for (row, &c) in labels.iter().enumerate() {
            if split.split_of(c).is_none() {
                return Err(DatasetError::UnknownClass { row, class_id: c });
            }
            present.insert(c);
        }
        for s in Split::ALL {
            if let Some(&class_id) = split.classes(s).difference(&present).next() {
                return Err(DatasetError::EmptyClass { class_id });
            }
        }
        Ok(Self { dim, labels, values, split })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    /// Row-major feature values, `len() * dim()` entries.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn point(&self, index: usize) -> &[f32] {
        &self.values[index * self.dim..(index + 1) * self.dim]
    }

    pub fn manifest(&self) -> &SplitManifest {
        &self.split
    }

    pub fn partition(&self, split: Split) -> Partition {
        Partition::from_labels(&self.labels, &self.split, split)
    }
}

/// Reads a dataset and its manifest.
pub fn load_features(features: &Path, manifest: &Path, format: FileFormat) -> Result<FeatureDataset, DatasetError> {
    let split = SplitManifest::load(manifest)?;
    let file = File::open(features).map_err(|e| DatasetError::io(features, e))?;
    let mut reader = BufReader::new(file);
    let records = match format {
        FileFormat::Binary => read_binary(&mut reader).map_err(|e| with_path(e, features))?,
        FileFormat::Csv => read_csv(&mut reader).map_err(|e| with_path(e, features))?,
    };
    FeatureDataset::new(records.dim, records.labels, records.values, split)
}

/// Writes a dataset and its manifest.
pub fn write_features(
    dataset: &FeatureDataset,
    features: &Path,
    manifest: &Path,
    format: FileFormat,
) -> Result<(), DatasetError> {
    let file = File::create(features).map_err(|e| DatasetError::io(features, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        FileFormat::Binary => write_binary(&mut w, dataset.dim, &dataset.labels, &dataset.values, None),
        FileFormat::Csv => write_csv(&mut w, dataset.dim, &dataset.labels, &dataset.values),
    };
    res.and_then(|_| w.flush()).map_err(|e| DatasetError::io(features, e))?;
    dataset.split.save(manifest)
}

fn with_path(err: DatasetError, path: &Path) -> DatasetError {
    match err {
        DatasetError::Io { source, .. } => DatasetError::io(path, source),
        other => other,
    }
}

/// Raw records of a feature file, before manifest validation.
#[derive(Clone, Debug, PartialEq)]
pub struct Records {
    pub dim: usize,
    pub labels: Vec<ClassId>,
    pub values: Vec<f32>,
    /// Present only for version-2 files.
    pub origins: Option<Vec<u8>>,
}

pub fn write_binary<W: Write>(
    w: &mut W,
    dim: usize,
    labels: &[ClassId],
    values: &[f32],
    origins: Option<&[u8]>,
) -> io::Result<()> {
    if labels.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "dataset has no points"));
    }
    let dim32 = u32::try_from(dim).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "dimension exceeds u32"))?;
    let version = if origins.is_some() { FEATURE_VERSION_WITH_ORIGIN } else { FEATURE_VERSION };
    w.write_all(&FEATURE_MAGIC)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&dim32.to_le_bytes())?;
    w.write_all(&(labels.len() as u64).to_le_bytes())?;
    for (i, &c) in labels.iter().enumerate() {
        w.write_all(&c.to_le_bytes())?;
        for v in &values[i * dim..(i + 1) * dim] {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(o) = origins {
            w.write_all(&[o[i]])?;
        }
    }
    Ok(())
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, record: u64) -> Result<(), DatasetError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => DatasetError::Truncated { offset, record },
        _ => DatasetError::Io { path: PathBuf::new(), source: e },
    })
}

pub fn read_binary<R: Read>(r: &mut R) -> Result<Records, DatasetError> {
    let mut header = [0u8; HEADER_LEN as usize];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
            return Err(DatasetError::Header {
                offset: 0,
                message: format!("file shorter than the {HEADER_LEN}-byte header"),
            })
        }
        Err(e) => return Err(DatasetError::Io { path: PathBuf::new(), source: e }),
    }
    let magic: [u8; 4] = header[0..4].try_into().unwrap();
    if magic != FEATURE_MAGIC {
        return Err(DatasetError::BadMagic { found: magic, expected: FEATURE_MAGIC });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let with_origin = match version {
        FEATURE_VERSION => false,
        FEATURE_VERSION_WITH_ORIGIN => true,
        _ => return Err(DatasetError::UnsupportedVersion { version }),
    };
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[12..20].try_into().unwrap());
    if dim == 0 {
        return Err(DatasetError::Header { offset: 8, message: "dimension is zero".into() });
    }
    if count == 0 {
        return Err(DatasetError::Empty);
    }
    let record_len = 4 + 4 * dim + usize::from(with_origin);
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut origins = with_origin.then(Vec::new);
    let mut buf = vec![0u8; record_len];
    let mut offset = HEADER_LEN;
    for record in 0..count {
        read_exact_at(r, &mut buf, offset, record)?;
        labels.push(u32::from_le_bytes(buf[0..4].try_into().unwrap()));
        values.extend(buf[4..4 + 4 * dim].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())));
        if let Some(o) = origins.as_mut() {
            o.push(buf[record_len - 1]);
        }
        offset += record_len as u64;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| DatasetError::Io { path: PathBuf::new(), source: e })?;
    if !rest.is_empty() {
        return Err(DatasetError::TrailingBytes { offset, extra: rest.len() as u64 });
    }
    Ok(Records { dim, labels, values, origins })
}

pub fn write_csv<W: Write>(w: &mut W, dim: usize, labels: &[ClassId], values: &[f32]) -> io::Result<()> {
    if labels.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "dataset has no points"));
    }
    write!(w, "class_id")?;
    for j in 0..dim {
        write!(w, ",f{j}")?;
    }
    writeln!(w)?;
    for (i, c) in labels.iter().enumerate() {
        write!(w, "{c}")?;
        for v in &values[i * dim..(i + 1) * dim] {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parses the CSV importer format. Rows are numbered from 1 for the header.
pub fn read_csv<R: BufRead>(r: &mut R) -> Result<Records, DatasetError> {
    let mut lines = r.lines();
    let header = match lines.next() {
        None => return Err(DatasetError::Empty),
        Some(line) => line.map_err(|e| DatasetError::Io { path: PathBuf::new(), source: e })?,
    };
    let cols: Vec<&str> = header.trim_end().split(',').map(str::trim).collect();
    if cols.first() != Some(&"class_id") {
        return Err(DatasetError::Csv { row: 1, message: "header must start with `class_id`".into() });
    }
    let dim = cols.len() - 1;
    if dim == 0 {
        return Err(DatasetError::Csv { row: 1, message: "header names no feature columns".into() });
    }
    for (j, name) in cols[1..].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(DatasetError::Csv { row: 1, message: format!("expected column `f{j}`, found `{name}`") });
        }
    }
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let line = line.map_err(|e| DatasetError::Io { path: PathBuf::new(), source: e })?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let class = fields.next().unwrap_or_default().trim();
        let class_id: ClassId =
            class.parse().map_err(|_| DatasetError::Csv { row, message: format!("invalid class_id `{class}`") })?;
        let row_values: Vec<&str> = fields.collect();
        if row_values.len() != dim {
            return Err(DatasetError::DimensionMismatch { row, expected: dim, found: row_values.len() });
        }
        for (column, v) in row_values.into_iter().enumerate() {
            let x: f32 = v
                .trim()
                .parse()
                .map_err(|_| DatasetError::Csv { row, message: format!("invalid value `{v}` in column f{column}") })?;
            if !x.is_finite() {
                return Err(DatasetError::NonFinite { row, column });
            }
            values.push(x);
        }
        labels.push(class_id);
    }
    if labels.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(Records { dim, labels, values, origins: None })
}
