//! The FVEC container: one modality of one video.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FVC1"
//! 4       1     kind code (0 object2d, 1 intermediate2d, 2 scene, 3 action3d, 4 audio)
//! 5       1     reserved, 0
//! 6       2     reserved, 0
//! 8       4     frames T (u32 LE)
//! 12      4     dim D (u32 LE)
//! 16      4*T*D payload, f32 LE, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::numkit::Tensor;

use super::{FeatError, FeatureKind};

pub const MAGIC: &[u8; 4] = b"FVC1";
pub const HEADER_LEN: usize = 16;

/// Per-video feature matrix for a single modality (`frames x dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStream {
    pub kind: FeatureKind,
    values: Tensor<f32>,
}

impl FeatureStream {
    pub fn new(kind: FeatureKind, values: Tensor<f32>) -> Result<Self, FeatError> {
        if values.cols() == 0 {
            return Err(FeatError::Data(format!("{kind} stream must have dim > 0")));
        }
        if kind == FeatureKind::Audio && values.rows() > 1 {
            return Err(FeatError::Data(format!(
                "audio stream must have 0 or 1 frames, got {}",
                values.rows()
            )));
        }
        Ok(Self { kind, values })
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Tensor<f32> {
        &self.values
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.push(self.kind.code());
        out.push(0);
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.frames() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.values.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FeatError> {
        let fail = |offset: usize, msg: String| FeatError::Format { path: None, offset, msg };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(fail(0, "bad magic".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(fail(
                bytes.len(),
                format!("truncated header: expected {HEADER_LEN} bytes, found {}", bytes.len()),
            ));
        }
        let kind = FeatureKind::from_code(bytes[4])
            .ok_or_else(|| fail(4, format!("unknown kind code {}", bytes[4])))?;
        if bytes[5] != 0 || bytes[6] != 0 || bytes[7] != 0 {
            return Err(fail(5, "reserved header bytes must be zero".into()));
        }
        let frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(fail(12, "dim must be positive".into()));
        }
        if kind == FeatureKind::Audio && frames > 1 {
            return Err(fail(8, format!("audio stream declares {frames} frames, expected 0 or 1")));
        }
        let expected = frames
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| fail(8, format!("payload size overflow for T={frames}, D={dim}")))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < expected {
            return Err(fail(
                bytes.len(),
                format!("truncated payload: expected {expected} bytes, found {}", payload.len()),
            ));
        }
        if payload.len() > expected {
            return Err(fail(
                HEADER_LEN + expected,
                format!("{} trailing bytes after payload", payload.len() - expected),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let values = Tensor::from_vec(frames, dim, data).map_err(|e| fail(HEADER_LEN, e.to_string()))?;
        Ok(Self { kind, values })
    }
}

pub fn read_fvec(path: impl AsRef<Path>) -> Result<FeatureStream, FeatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| FeatError::Io { path: path.to_path_buf(), source })?;
    FeatureStream::from_bytes(&bytes).map_err(|e| e.with_path(path))
}

pub fn write_fvec(stream: &FeatureStream, path: impl AsRef<Path>) -> Result<(), FeatError> {
    let path = path.as_ref();
    fs::write(path, stream.to_bytes()).map_err(|source| FeatError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(kind: FeatureKind, rows: usize, cols: usize) -> FeatureStream {
        let data = (0..rows * cols).map(|i| i as f32 * 0.25 - 1.0).collect();
        FeatureStream::new(kind, Tensor::from_vec(rows, cols, data).unwrap()).unwrap()
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.fvec");
        let s = stream(FeatureKind::Scene, 3, 4);
        write_fvec(&s, &path).unwrap();
        assert_eq!(read_fvec(&path).unwrap(), s);
        assert_eq!(fs::metadata(&path).unwrap().len(), 16 + 48);
    }

    #[test]
    fn empty_file_is_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.fvec");
        fs::write(&path, b"").unwrap();
        let err = read_fvec(&path).unwrap_err();
        assert!(matches!(err, FeatError::Format { offset: 0, .. }));
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn truncated_payload_reports_expected_size() {
        let mut bytes = stream(FeatureKind::Object2d, 2, 3).to_bytes();
        bytes.truncate(HEADER_LEN + 20);
        let err = FeatureStream::from_bytes(&bytes).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 24 bytes") && msg.contains("found 20"), "{msg}");
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = stream(FeatureKind::Object2d, 1, 2).to_bytes();
        bytes.push(0);
        assert!(matches!(
            FeatureStream::from_bytes(&bytes),
            Err(FeatError::Format { offset: 24, .. })
        ));
    }

    #[test]
    fn audio_frame_limit() {
        let s = stream(FeatureKind::Audio, 0, 8);
        assert_eq!(FeatureStream::from_bytes(&s.to_bytes()).unwrap().frames(), 0);
        let mut bytes = stream(FeatureKind::Scene, 2, 2).to_bytes();
        bytes[4] = FeatureKind::Audio.code();
        assert!(matches!(FeatureStream::from_bytes(&bytes), Err(FeatError::Format { offset: 8, .. })));
    }

    #[test]
    fn unknown_kind_code() {
        let mut bytes = stream(FeatureKind::Scene, 1, 1).to_bytes();
        bytes[4] = 9;
        assert!(matches!(FeatureStream::from_bytes(&bytes), Err(FeatError::Format { offset: 4, .. })));
    }
}
