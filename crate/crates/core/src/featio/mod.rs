//! Per-video feature streams: file format, dataset manifest, temporal
//! alignment, fusion and a synthetic generator.

mod align;
mod fvec;
mod manifest;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use align::{align, align_to_40, fuse, sample_indices, AlignedStream, FusedClip, STEPS};
pub use fvec::{read_fvec, write_fvec, FeatureStream, HEADER_LEN, MAGIC};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use synth::{synth_features, SynthConcept, SynthSpec, SynthStream};

#[derive(Debug, Error)]
pub enum FeatError {
    #[error("{}format error at byte {offset}: {msg}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Format { path: Option<PathBuf>, offset: usize, msg: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest {}:{line}: {msg}", path.display())]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("data error: {0}")]
    Data(String),
}

impl FeatError {
    fn with_path(self, p: &Path) -> Self {
        match self {
            FeatError::Format { offset, msg, .. } => FeatError::Format { path: Some(p.to_path_buf()), offset, msg },
            other => other,
        }
    }
}

/// Feature modality, with its FVEC kind code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Object2d,
    Intermediate2d,
    Scene,
    Action3d,
    Audio,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::Object2d,
        FeatureKind::Intermediate2d,
        FeatureKind::Scene,
        FeatureKind::Action3d,
        FeatureKind::Audio,
    ];

    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Object2d => 0,
            FeatureKind::Intermediate2d => 1,
            FeatureKind::Scene => 2,
            FeatureKind::Action3d => 3,
            FeatureKind::Audio => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Object2d => "object2d",
            FeatureKind::Intermediate2d => "intermediate2d",
            FeatureKind::Scene => "scene",
            FeatureKind::Action3d => "action3d",
            FeatureKind::Audio => "audio",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = FeatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| FeatError::Data(format!("unknown feature kind '{s}'")))
    }
}

/// Parses a comma-separated kind list such as `object2d,scene,action3d`.
pub fn parse_selection(list: &str) -> Result<Vec<FeatureKind>, FeatError> {
    let kinds = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>, _>>()?;
    if kinds.is_empty() {
        return Err(FeatError::Data("feature selection is empty".into()));
    }
    Ok(kinds)
}

/// Expected per-kind dims. Intermediate features have no canonical size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureProfile {
    dims: BTreeMap<FeatureKind, usize>,
}

impl FeatureProfile {
    pub fn canonical() -> Self {
        let dims = BTreeMap::from([
            (FeatureKind::Object2d, 2048),
            (FeatureKind::Scene, 2048),
            (FeatureKind::Action3d, 1024),
            (FeatureKind::Audio, 1024),
        ]);
        Self { dims }
    }

    pub fn dim(&self, kind: FeatureKind) -> Option<usize> {
        self.dims.get(&kind).copied()
    }

    pub fn set(&mut self, kind: FeatureKind, dim: usize) {
        self.dims.insert(kind, dim);
    }

    /// Sum of the selected dims, if every one is known.
    pub fn fused_dim(&self, selection: &[FeatureKind]) -> Option<usize> {
        selection.iter().map(|&k| self.dim(k)).sum()
    }
}

impl Default for FeatureProfile {
    fn default() -> Self {
        Self::canonical()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_fused_dims() {
        use FeatureKind::*;
        let p = FeatureProfile::canonical();
        assert_eq!(p.fused_dim(&[Object2d]), Some(2048));
        assert_eq!(p.fused_dim(&[Object2d, Scene, Action3d]), Some(5120));
        assert_eq!(p.fused_dim(&[Object2d, Scene, Action3d, Audio]), Some(6144));
        assert_eq!(p.fused_dim(&[Intermediate2d]), None);
    }

    #[test]
    fn kind_codes_round_trip() {
        for k in FeatureKind::ALL {
            assert_eq!(FeatureKind::from_code(k.code()), Some(k));
            assert_eq!(k.name().parse::<FeatureKind>().unwrap(), k);
        }
        assert!(FeatureKind::from_code(5).is_none());
    }

    #[test]
    fn selection_parsing() {
        use FeatureKind::*;
        assert_eq!(parse_selection("object2d, scene,audio").unwrap(), vec![Object2d, Scene, Audio]);
        assert!(parse_selection("").is_err());
        assert!(parse_selection("object2d,video").is_err());
    }
}
