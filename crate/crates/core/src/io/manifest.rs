//! JSON-Lines dataset manifest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("line {line}: field `{field}`: {reason}")]
    SchemaViolation {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("line {line}: duplicate sample_id {sample_id:?}")]
    DuplicateSampleId { line: usize, sample_id: String },
    #[error("reading manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Vertebra level, C1–C7, T1–T12, L1–L6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VertebraLabel {
    Cervical(u8),
    Thoracic(u8),
    Lumbar(u8),
}

impl VertebraLabel {
    pub fn is_cervical(self) -> bool {
        matches!(self, VertebraLabel::Cervical(_))
    }

    /// Every label in superior→inferior order.
    pub fn all() -> impl Iterator<Item = VertebraLabel> {
        (1..=7)
            .map(VertebraLabel::Cervical)
            .chain((1..=12).map(VertebraLabel::Thoracic))
            .chain((1..=6).map(VertebraLabel::Lumbar))
    }
}

impl fmt::Display for VertebraLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VertebraLabel::Cervical(n) => write!(f, "C{n}"),
            VertebraLabel::Thoracic(n) => write!(f, "T{n}"),
            VertebraLabel::Lumbar(n) => write!(f, "L{n}"),
        }
    }
}

impl FromStr for VertebraLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("unknown vertebra label {s:?}");
        let (prefix, num) = s.split_at_checked(1).ok_or_else(bad)?;
        let n: u8 = num.parse().map_err(|_| bad())?;
        let label = match prefix {
            "C" if (1..=7).contains(&n) => VertebraLabel::Cervical(n),
            "T" if (1..=12).contains(&n) => VertebraLabel::Thoracic(n),
            "L" if (1..=6).contains(&n) => VertebraLabel::Lumbar(n),
            _ => return Err(bad()),
        };
        Ok(label)
    }
}

impl Serialize for VertebraLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VertebraLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::All => "all",
        })
    }
}

/// One manifest row. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub sample_id: String,
    pub vertebra_label: VertebraLabel,
    pub fractured: bool,
    pub predicted_prob: Option<f64>,
    pub activation_path: String,
    pub patch_path: Option<String>,
    pub split: Split,
}

/// Ordered set of samples. Relative paths resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetIndex {
    pub entries: Vec<SampleEntry>,
    pub base_dir: PathBuf,
}

impl DatasetIndex {
    pub fn new(entries: Vec<SampleEntry>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            entries,
            base_dir: base_dir.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleEntry> {
        self.entries.iter().find(|e| e.sample_id == sample_id)
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn activation_file(&self, entry: &SampleEntry) -> PathBuf {
        self.resolve(&entry.activation_path)
    }

    pub fn patch_file(&self, entry: &SampleEntry) -> Option<PathBuf> {
        entry.patch_path.as_deref().map(|p| self.resolve(p))
    }

    /// Entries whose split matches. `Split::All` selects every entry.
    pub fn restrict_to_split(&self, split: Split) -> DatasetIndex {
        if split == Split::All {
            return self.clone();
        }
        DatasetIndex {
            entries: self.entries.iter().filter(|e| e.split == split).cloned().collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest rows serialize"));
            out.push('\n');
        }
        out
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetIndex, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let index = parse_manifest(&text, &base)?;
    for (i, e) in index.entries.iter().enumerate() {
        if !index.activation_file(e).is_file() {
            return Err(violation(
                line_of(&text, i),
                "activation_path",
                format!("file {} not found", index.activation_file(e).display()),
            ));
        }
    }
    Ok(index)
}

/// 1-based line number of the `row`-th non-blank line.
fn line_of(text: &str, row: usize) -> usize {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .nth(row)
        .map(|(n, _)| n + 1)
        .unwrap_or(0)
}

fn violation(line: usize, field: &str, reason: impl Into<String>) -> ManifestError {
    ManifestError::SchemaViolation {
        line,
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Validates manifest text without touching the filesystem.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<DatasetIndex, ManifestError> {
    let mut entries: Vec<SampleEntry> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(raw).map_err(|e| violation(line, "<line>", format!("invalid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| violation(line, "<line>", "expected a JSON object"))?;

        let string = |field: &str| -> Result<String, ManifestError> {
            match obj.get(field) {
                Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
                Some(Value::String(_)) => Err(violation(line, field, "must not be empty")),
                Some(_) => Err(violation(line, field, "expected a string")),
                None => Err(violation(line, field, "missing")),
            }
        };
        let optional_string = |field: &str| -> Result<Option<String>, ManifestError> {
            match obj.get(field) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(s.clone())),
                Some(_) => Err(violation(line, field, "expected a string or null")),
            }
        };

        let sample_id = string("sample_id")?;
        let vertebra_label = string("vertebra_label")?
            .parse::<VertebraLabel>()
            .map_err(|e| violation(line, "vertebra_label", e))?;
        let fractured = match obj.get("fractured") {
            Some(Value::Bool(b)) => *b,
            Some(_) => return Err(violation(line, "fractured", "expected a boolean")),
            None => return Err(violation(line, "fractured", "missing")),
        };
        let predicted_prob = match obj.get("predicted_prob") {
            None | Some(Value::Null) => None,
            Some(Value::Number(n)) => {
                let p = n.as_f64().unwrap_or(f64::NAN);
                if !(0.0..=1.0).contains(&p) {
                    return Err(violation(line, "predicted_prob", format!("{p} outside [0, 1]")));
                }
                Some(p)
            }
            Some(_) => return Err(violation(line, "predicted_prob", "expected a number or null")),
        };
        let activation_path = string("activation_path")?;
        let patch_path = optional_string("patch_path")?;
        let split = string("split")?
            .parse::<Split>()
            .map_err(|e| violation(line, "split", e))?;

        if !seen.insert(sample_id.clone()) {
            return Err(ManifestError::DuplicateSampleId { line, sample_id });
        }
        entries.push(SampleEntry {
            sample_id,
            vertebra_label,
            fractured,
            predicted_prob,
            activation_path,
            patch_path,
            split,
        });
    }
    Ok(DatasetIndex::new(entries, base_dir))
}
