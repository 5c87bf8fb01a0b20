//! Dataset manifests: one harmonized listing of image entries per source.
//!
//! Public dermoscopy datasets ship in two shapes, a label CSV next to an image
//! folder or one folder per class. Both are described by a [`LayoutDescriptor`]
//! and parsed into a [`DatasetManifest`], which can then be binarized, split,
//! oversampled and merged.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinaryLabel {
    Melanoma,
    NonMelanoma,
}

impl BinaryLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BinaryLabel::Melanoma => "Melanoma",
            BinaryLabel::NonMelanoma => "NonMelanoma",
        }
    }
}

impl fmt::Display for BinaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BinaryLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let folded: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match folded.to_ascii_lowercase().as_str() {
            "melanoma" => Ok(BinaryLabel::Melanoma),
            "nonmelanoma" => Ok(BinaryLabel::NonMelanoma),
            _ => Err(Error::InvalidParameter(format!("unknown binary label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutKind {
    CsvLabels,
    FolderPerClass,
    /// Produced by [`merge_manifests`]; entries keep their own `source`.
    Merged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub entry_id: String,
    pub path: String,
    pub raw_label: String,
    pub binary_label: Option<BinaryLabel>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source_name: String,
    pub layout: LayoutKind,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_slice(bytes)?;
        let mut seen = HashSet::new();
        for e in &manifest.entries {
            if !seen.insert(e.entry_id.as_str()) {
                return Err(Error::DuplicateEntry(e.entry_id.clone()));
            }
        }
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// `(melanoma, non_melanoma)` counts among entries in `split`.
    pub fn class_counts(&self, split: Split) -> Result<(usize, usize)> {
        let mut mel = 0;
        let mut non = 0;
        for e in self.entries.iter().filter(|e| e.split == split) {
            match e.binary_label {
                Some(BinaryLabel::Melanoma) => mel += 1,
                Some(BinaryLabel::NonMelanoma) => non += 1,
                None => return Err(Error::NotBinarized(e.entry_id.clone())),
            }
        }
        Ok((mel, non))
    }
}

/// Describes how one source dataset lays out its images and labels.
///
/// Serialized as TOML or JSON, e.g.
///
/// ```toml
/// kind = "csv-labels"
/// source_name = "isic2016"
/// labels_file = "ISBI2016_ISIC_Part3_Training_GroundTruth.csv"
/// path_column = "image_id"
/// path_template = "images/{}.jpg"
/// label_column = "label"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutDescriptor {
    pub kind: LayoutKind,
    #[serde(default)]
    pub source_name: Option<String>,
    /// Column holding the class name (csv-labels).
    #[serde(default)]
    pub label_column: Option<String>,
    /// One-hot alternative to `label_column`: the raw label is the name of the
    /// first listed column whose value is truthy.
    #[serde(default)]
    pub label_columns: Option<Vec<String>>,
    /// Column holding the image path or id (csv-labels).
    #[serde(default)]
    pub path_column: Option<String>,
    /// Column used as entry id; defaults to the path column.
    #[serde(default)]
    pub id_column: Option<String>,
    /// `{}` is replaced by the path column value.
    #[serde(default)]
    pub path_template: Option<String>,
    #[serde(default = "default_labels_file")]
    pub labels_file: String,
    #[serde(default = "default_split")]
    pub split: Split,
    /// Lower-case file extensions to keep in folder layouts; all files if unset.
    #[serde(default)]
    pub extensions: Option<Vec<String>>,
    /// Root directory, relative to the descriptor file when loaded from disk.
    #[serde(default)]
    pub root: Option<PathBuf>,
}

fn default_labels_file() -> String {
    "labels.csv".to_string()
}

fn default_split() -> Split {
    Split::Train
}

impl LayoutDescriptor {
    pub fn folder_per_class(source_name: impl Into<String>) -> Self {
        LayoutDescriptor {
            kind: LayoutKind::FolderPerClass,
            source_name: Some(source_name.into()),
            label_column: None,
            label_columns: None,
            path_column: None,
            id_column: None,
            path_template: None,
            labels_file: default_labels_file(),
            split: Split::Train,
            extensions: None,
            root: None,
        }
    }

    pub fn csv_labels(source_name: impl Into<String>, path_column: &str, label_column: &str) -> Self {
        LayoutDescriptor {
            kind: LayoutKind::CsvLabels,
            label_column: Some(label_column.to_string()),
            path_column: Some(path_column.to_string()),
            ..LayoutDescriptor::folder_per_class(source_name)
        }
    }

    /// Load a `.toml` or `.json` descriptor. A relative `root` is resolved
    /// against the descriptor's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut desc: LayoutDescriptor = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text)?,
        };
        if let (Some(root), Some(dir)) = (&desc.root, path.parent()) {
            if root.is_relative() {
                desc.root = Some(dir.join(root));
            }
        }
        Ok(desc)
    }
}

/// Walk `root` according to `config` and list one entry per image.
pub fn parse_dataset_layout(root: &Path, config: &LayoutDescriptor) -> Result<DatasetManifest> {
    let source_name = config
        .source_name
        .clone()
        .or_else(|| root.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "dataset".to_string());
    let entries = match config.kind {
        LayoutKind::CsvLabels => csv_entries(root, config)?,
        LayoutKind::FolderPerClass => folder_entries(root, config)?,
        LayoutKind::Merged => {
            return Err(Error::InvalidParameter("a merged manifest has no on-disk layout".into()))
        }
    };
    let mut seen = HashSet::new();
    for e in &entries {
        if !seen.insert(e.entry_id.as_str()) {
            return Err(Error::DuplicateEntry(e.entry_id.clone()));
        }
    }
    Ok(DatasetManifest {
        source_name,
        layout: config.kind,
        entries,
    })
}

fn truthy(v: &str) -> bool {
    match v.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "0.0" | "false" | "no" => false,
        other => other.parse::<f64>().map(|x| x >= 0.5).unwrap_or(true),
    }
}

fn csv_entries(root: &Path, config: &LayoutDescriptor) -> Result<Vec<ManifestEntry>> {
    let path_col = config
        .path_column
        .as_deref()
        .ok_or_else(|| Error::InvalidParameter("csv-labels layout needs path_column".into()))?;
    if config.label_column.is_none() && config.label_columns.is_none() {
        return Err(Error::InvalidParameter(
            "csv-labels layout needs label_column or label_columns".into(),
        ));
    }
    let labels_path = root.join(&config.labels_file);
    let bytes = std::fs::read(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let header = reader.headers()?.clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedHeader(format!("{labels_path:?} has no column {name:?}")))
    };
    let path_idx = column(path_col)?;
    let id_idx = config.id_column.as_deref().map(column).transpose()?;
    let label_idx = config.label_column.as_deref().map(column).transpose()?;
    let one_hot: Vec<(usize, String)> = match &config.label_columns {
        Some(cols) => cols
            .iter()
            .map(|c| column(c).map(|i| (i, c.clone())))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };

    let mut entries = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let field = |idx: usize| {
            row.get(idx).map(str::to_string).ok_or_else(|| Error::MalformedRow {
                row: row_no,
                reason: format!("missing field {idx}"),
            })
        };
        let path_value = field(path_idx)?;
        let rel = match &config.path_template {
            Some(t) => t.replace("{}", &path_value),
            None => path_value.clone(),
        };
        if !root.join(&rel).is_file() {
            return Err(Error::MissingFile {
                row: row_no,
                path: PathBuf::from(rel),
            });
        }
        let raw_label = match label_idx {
            Some(idx) => field(idx)?,
            None => one_hot
                .iter()
                .find(|(idx, _)| row.get(*idx).is_some_and(truthy))
                .map(|(_, name)| name.clone())
                .unwrap_or_default(),
        };
        let entry_id = match id_idx {
            Some(idx) => field(idx)?,
            None => path_value,
        };
        entries.push(ManifestEntry {
            entry_id,
            path: rel,
            raw_label,
            binary_label: None,
            split: config.split,
            source: None,
        });
    }
    Ok(entries)
}

fn folder_entries(root: &Path, config: &LayoutDescriptor) -> Result<Vec<ManifestEntry>> {
    let read = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut class_dirs = Vec::new();
    for dent in read {
        let dent = dent.map_err(|e| Error::io(root, e))?;
        let name = dent.file_name().to_string_lossy().into_owned();
        if dent.path().is_dir() && !name.starts_with('.') {
            class_dirs.push((name, dent.path()));
        }
    }
    if class_dirs.is_empty() {
        return Err(Error::NoClassDirectories(root.to_path_buf()));
    }
    class_dirs.sort();

    let extensions: Option<Vec<String>> = config
        .extensions
        .as_ref()
        .map(|v| v.iter().map(|e| e.trim_start_matches('.').to_ascii_lowercase()).collect());

    let mut entries = Vec::new();
    for (label, dir) in class_dirs {
        let walker = walkdir::WalkDir::new(&dir)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|d| d.depth() == 0 || !d.file_name().to_string_lossy().starts_with('.'));
        for dent in walker {
            let dent = dent.map_err(|e| {
                let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| dir.clone());
                Error::io(path, e.into())
            })?;
            if !dent.file_type().is_file() {
                continue;
            }
            if let Some(exts) = &extensions {
                let ext = dent
                    .path()
                    .extension()
                    .map(|e| e.to_string_lossy().to_ascii_lowercase())
                    .unwrap_or_default();
                if !exts.contains(&ext) {
                    continue;
                }
            }
            let rel = dent
                .path()
                .strip_prefix(root)
                .expect("walk stays under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            entries.push(ManifestEntry {
                entry_id: rel.clone(),
                path: rel,
                raw_label: label.clone(),
                binary_label: None,
                split: config.split,
                source: None,
            });
        }
    }
    Ok(entries)
}

/// How raw dataset labels map to the binary task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelPolicy {
    /// Raw labels (case-insensitive) that mean melanoma.
    pub melanoma_synonyms: BTreeSet<String>,
    /// Strict mode: every raw label must be a synonym or appear here.
    pub known_labels: Option<BTreeSet<String>>,
}

impl Default for LabelPolicy {
    fn default() -> Self {
        LabelPolicy {
            melanoma_synonyms: ["melanoma", "mel"].iter().map(|s| s.to_string()).collect(),
            known_labels: None,
        }
    }
}

impl LabelPolicy {
    pub fn new<I, S>(synonyms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        LabelPolicy {
            melanoma_synonyms: synonyms.into_iter().map(|s| s.into().to_lowercase()).collect(),
            known_labels: None,
        }
    }

    pub fn strict<I, S>(mut self, known: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.known_labels = Some(known.into_iter().map(|s| s.into().to_lowercase()).collect());
        self
    }
}

/// Map every raw label to Melanoma / NonMelanoma.
pub fn binarize_labels(manifest: &DatasetManifest, policy: &LabelPolicy) -> Result<DatasetManifest> {
    if policy.melanoma_synonyms.is_empty() {
        return Err(Error::InvalidParameter("melanoma synonym set is empty".into()));
    }
    let synonyms: HashSet<String> = policy.melanoma_synonyms.iter().map(|s| s.to_lowercase()).collect();
    let known: Option<HashSet<String>> = policy
        .known_labels
        .as_ref()
        .map(|k| k.iter().map(|s| s.to_lowercase()).collect());
    let mut out = manifest.clone();
    for e in &mut out.entries {
        let raw = e.raw_label.to_lowercase();
        let is_mel = synonyms.contains(&raw);
        if let Some(known) = &known {
            if !is_mel && !known.contains(&raw) {
                return Err(Error::UnknownRawLabel {
                    entry_id: e.entry_id.clone(),
                    raw_label: e.raw_label.clone(),
                });
            }
        }
        e.binary_label = Some(if is_mel {
            BinaryLabel::Melanoma
        } else {
            BinaryLabel::NonMelanoma
        });
    }
    Ok(out)
}

/// Carve a validation split out of the train entries, stratified by binary
/// label. Per class, entries are sorted by id, shuffled with a seeded PRNG, and
/// the first `round(ratio * n_class)` stay in train. Test and existing
/// validation entries pass through untouched.
pub fn make_split(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<DatasetManifest> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParameter(format!("split ratio {ratio} must be in (0, 1)")));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, e) in manifest.entries.iter().enumerate() {
        if e.split != Split::Train {
            continue;
        }
        match e.binary_label {
            Some(BinaryLabel::Melanoma) => by_class[0].push(i),
            Some(BinaryLabel::NonMelanoma) => by_class[1].push(i),
            None => return Err(Error::NotBinarized(e.entry_id.clone())),
        }
    }
    if by_class[0].is_empty() {
        return Err(Error::EmptyClass("Melanoma"));
    }
    if by_class[1].is_empty() {
        return Err(Error::EmptyClass("NonMelanoma"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = manifest.clone();
    for members in &mut by_class {
        members.sort_by(|&a, &b| manifest.entries[a].entry_id.cmp(&manifest.entries[b].entry_id));
        members.shuffle(&mut rng);
        let keep = (ratio * members.len() as f64).round() as usize;
        for &idx in &members[keep..] {
            out.entries[idx].split = Split::Validation;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OversampleEntry {
    pub entry_id: String,
    pub binary_label: BinaryLabel,
    pub count: u32,
}

/// Duplication counts for the train split; every count is at least one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OversamplePlan {
    pub entries: Vec<OversampleEntry>,
}

impl OversamplePlan {
    /// Total `(melanoma, non_melanoma)` after duplication.
    pub fn totals(&self) -> (u64, u64) {
        self.entries.iter().fold((0, 0), |(m, n), e| match e.binary_label {
            BinaryLabel::Melanoma => (m + e.count as u64, n),
            BinaryLabel::NonMelanoma => (m, n + e.count as u64),
        })
    }

    /// Entry ids repeated by their counts, in plan order.
    pub fn expand(&self) -> Vec<&str> {
        self.entries
            .iter()
            .flat_map(|e| std::iter::repeat_n(e.entry_id.as_str(), e.count as usize))
            .collect()
    }
}

/// Balance the train split by whole-entry duplication. Each minority entry is
/// repeated `majority / minority` times, and the first `majority % minority`
/// minority entries (in entry-id order) get one extra copy.
pub fn build_oversample_plan(manifest: &DatasetManifest) -> Result<OversamplePlan> {
    let train: Vec<&ManifestEntry> = manifest.entries.iter().filter(|e| e.split == Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Empty("train split".into()));
    }
    let mut labels = Vec::with_capacity(train.len());
    for e in &train {
        labels.push(e.binary_label.ok_or_else(|| Error::NotBinarized(e.entry_id.clone()))?);
    }
    let mel = labels.iter().filter(|&&l| l == BinaryLabel::Melanoma).count();
    let non = labels.len() - mel;
    if mel == 0 {
        return Err(Error::EmptyClass("Melanoma"));
    }
    if non == 0 {
        return Err(Error::EmptyClass("NonMelanoma"));
    }
    let (minority, minority_n, majority_n) = if mel < non {
        (BinaryLabel::Melanoma, mel, non)
    } else {
        (BinaryLabel::NonMelanoma, non, mel)
    };

    let mut counts: HashMap<&str, u32> = HashMap::new();
    if minority_n < majority_n {
        let base = (majority_n / minority_n) as u32;
        let extra = majority_n % minority_n;
        let mut ids: Vec<&str> = train
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == minority)
            .map(|(e, _)| e.entry_id.as_str())
            .collect();
        ids.sort_unstable();
        for (rank, id) in ids.into_iter().enumerate() {
            counts.insert(id, base + u32::from(rank < extra));
        }
    }
    let entries = train
        .iter()
        .zip(labels)
        .map(|(e, label)| OversampleEntry {
            entry_id: e.entry_id.clone(),
            binary_label: label,
            count: counts.get(e.entry_id.as_str()).copied().unwrap_or(1),
        })
        .collect();
    Ok(OversamplePlan { entries })
}

/// Concatenate binarized manifests, namespacing ids as `source_name/entry_id`.
pub fn merge_manifests(manifests: &[DatasetManifest]) -> Result<DatasetManifest> {
    let mut names = HashSet::new();
    for m in manifests {
        if !names.insert(m.source_name.as_str()) {
            return Err(Error::DuplicateSource(m.source_name.clone()));
        }
    }
    let mut entries = Vec::with_capacity(manifests.iter().map(DatasetManifest::len).sum());
    for m in manifests {
        for e in &m.entries {
            if e.binary_label.is_none() {
                return Err(Error::NotBinarized(format!("{}/{}", m.source_name, e.entry_id)));
            }
            entries.push(ManifestEntry {
                entry_id: format!("{}/{}", m.source_name, e.entry_id),
                source: Some(e.source.clone().unwrap_or_else(|| m.source_name.clone())),
                ..e.clone()
            });
        }
    }
    Ok(DatasetManifest {
        source_name: "merged".to_string(),
        layout: LayoutKind::Merged,
        entries,
    })
}
