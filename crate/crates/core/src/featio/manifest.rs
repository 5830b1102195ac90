//! JSON-lines dataset manifest.
//!
//! One entry object per line. An optional line of the form
//! `{"profile": {"intermediate2d": 4224}}` overrides canonical feature dims.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{fuse, read_fvec, FeatError, FeatureKind, FeatureProfile, FeatureStream, FusedClip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Val,
}

impl std::str::FromStr for Split {
    type Err = FeatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "val" => Ok(Split::Val),
            other => Err(FeatError::Data(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    #[serde(default)]
    pub split: Option<Split>,
    pub captions: Vec<String>,
    /// Feature paths relative to the manifest directory.
    #[serde(default)]
    pub features: BTreeMap<FeatureKind, String>,
    #[serde(default)]
    pub category: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ProfileLine {
    profile: BTreeMap<FeatureKind, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Dim overrides declared in the manifest.
    pub profile_overrides: BTreeMap<FeatureKind, usize>,
    /// Directory that feature paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Self {
        Self { entries, profile_overrides: BTreeMap::new(), base_dir: base_dir.into() }
    }

    pub fn profile(&self) -> FeatureProfile {
        let mut p = FeatureProfile::canonical();
        for (&k, &d) in &self.profile_overrides {
            p.set(k, d);
        }
        p
    }

    /// Loads and validates: unique ids, at least one caption, resolvable paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| FeatError::Io { path: path.to_path_buf(), source })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let bad = |line: usize, msg: String| FeatError::Manifest { path: path.to_path_buf(), line, msg };

        let mut manifest = Self::new(Vec::new(), base_dir);
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(lineno, e.to_string()))?;
            if value.get("profile").is_some() && value.get("video_id").is_none() {
                let p: ProfileLine = serde_json::from_value(value).map_err(|e| bad(lineno, e.to_string()))?;
                manifest.profile_overrides.extend(p.profile);
                continue;
            }
            let entry: ManifestEntry = serde_json::from_value(value).map_err(|e| bad(lineno, e.to_string()))?;
            if !seen.insert(entry.video_id.clone()) {
                return Err(bad(lineno, format!("duplicate video_id '{}'", entry.video_id)));
            }
            if entry.captions.is_empty() {
                return Err(bad(lineno, format!("'{}' has no captions", entry.video_id)));
            }
            for (kind, rel) in &entry.features {
                let p = manifest.base_dir.join(rel);
                if !p.is_file() {
                    return Err(bad(lineno, format!("{} {kind} path {} not found", entry.video_id, p.display())));
                }
            }
            manifest.entries.push(entry);
        }
        Ok(manifest)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if !self.profile_overrides.is_empty() {
            let line = ProfileLine { profile: self.profile_overrides.clone() };
            out.push_str(&serde_json::to_string(&line).expect("profile serializes"));
            out.push('\n');
        }
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatError> {
        let path = path.as_ref();
        let io = |source| FeatError::Io { path: path.to_path_buf(), source };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(io)
    }

    pub fn get(&self, video_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.video_id == video_id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }

    /// Reads the selected streams that exist for `entry`.
    pub fn load_streams(&self, entry: &ManifestEntry, kinds: &[FeatureKind]) -> Result<Vec<FeatureStream>, FeatError> {
        kinds
            .iter()
            .filter_map(|k| entry.features.get(k))
            .map(|rel| read_fvec(self.base_dir.join(rel)))
            .collect()
    }

    pub fn load_clip(&self, entry: &ManifestEntry, selection: &[FeatureKind]) -> Result<FusedClip, FeatError> {
        let streams = self.load_streams(entry, selection)?;
        fuse(&entry.video_id, &streams, selection, &self.profile())
    }
}
