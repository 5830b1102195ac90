//! Temporal alignment to the fixed encoder length and multi-stream fusion.

use crate::numkit::Tensor;

use super::{FeatError, FeatureKind, FeatureProfile, FeatureStream};

/// Number of encoder steps per clip.
pub const STEPS: usize = 40;

/// A stream resampled onto `STEPS` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedStream {
    pub values: Tensor<f32>,
    pub valid_steps: usize,
}

/// Source row indices `floor(k * frames / steps)` for `k in 0..steps`.
pub fn sample_indices(frames: usize, steps: usize) -> Vec<usize> {
    (0..steps).map(|k| k * frames / steps).collect()
}

/// Resamples a stream onto `steps` rows.
///
/// * `T >= steps`: evenly spaced rows, all valid.
/// * `T == 1`: the single row is broadcast to every step, all valid.
/// * `1 < T < steps`: rows kept in order, zero padded at the end.
/// * `T == 0`: all zeros, nothing valid.
pub fn align(stream: &FeatureStream, steps: usize) -> AlignedStream {
    let (frames, dim) = (stream.frames(), stream.dim());
    let src = stream.values();
    let mut values = Tensor::zeros(steps, dim);
    let valid_steps = match frames {
        0 => 0,
        1 => {
            for k in 0..steps {
                values.row_mut(k).copy_from_slice(src.row(0));
            }
            steps
        }
        t if t < steps => {
            for k in 0..t {
                values.row_mut(k).copy_from_slice(src.row(k));
            }
            t
        }
        t => {
            for (k, idx) in sample_indices(t, steps).into_iter().enumerate() {
                values.row_mut(k).copy_from_slice(src.row(idx));
            }
            steps
        }
    };
    AlignedStream { values, valid_steps }
}

pub fn align_to_40(stream: &FeatureStream) -> AlignedStream {
    align(stream, STEPS)
}

/// The encoder input: `STEPS x dim` with rows at or past `valid_steps` zeroed.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedClip {
    pub values: Tensor<f32>,
    pub valid_steps: usize,
}

impl FusedClip {
    pub fn new(values: Tensor<f32>, valid_steps: usize) -> Result<Self, FeatError> {
        if valid_steps > values.rows() {
            return Err(FeatError::Data(format!(
                "valid_steps {valid_steps} exceeds {} rows",
                values.rows()
            )));
        }
        Ok(Self { values, valid_steps })
    }

    pub fn steps(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

/// Concatenates the selected streams column-wise, in selection order.
///
/// A missing audio stream is zero-filled using the profile dim; any other
/// missing kind is an error. Validity comes from the visual streams only
/// (audio alone when nothing else is selected), and rows past it are zeroed
/// so broadcast audio never leaks into padding.
pub fn fuse(
    video_id: &str,
    streams: &[FeatureStream],
    selection: &[FeatureKind],
    profile: &FeatureProfile,
) -> Result<FusedClip, FeatError> {
    if selection.is_empty() {
        return Err(FeatError::Data("feature selection is empty".into()));
    }
    let mut aligned = Vec::with_capacity(selection.len());
    for &kind in selection {
        let a = match streams.iter().find(|s| s.kind == kind) {
            Some(s) => align_to_40(s),
            None if kind == FeatureKind::Audio => {
                let dim = profile.dim(kind).ok_or_else(|| {
                    FeatError::Data(format!("{video_id}: no audio dim in profile for zero fill"))
                })?;
                AlignedStream { values: Tensor::zeros(STEPS, dim), valid_steps: 0 }
            }
            None => {
                return Err(FeatError::Data(format!("{video_id}: missing {kind} stream")));
            }
        };
        aligned.push((kind, a));
    }
    let visual = aligned.iter().filter(|(k, _)| *k != FeatureKind::Audio).map(|(_, a)| a.valid_steps).max();
    let valid_steps = visual
        .unwrap_or_else(|| aligned.iter().map(|(_, a)| a.valid_steps).max().unwrap_or(0));
    let parts: Vec<&Tensor<f32>> = aligned.iter().map(|(_, a)| &a.values).collect();
    let mut values = Tensor::concat_cols(&parts).map_err(|e| FeatError::Data(e.to_string()))?;
    for r in valid_steps..STEPS {
        values.row_mut(r).fill(0.0);
    }
    FusedClip::new(values, valid_steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(kind: FeatureKind, frames: usize, dim: usize) -> FeatureStream {
        let data = (0..frames * dim).map(|i| (i / dim) as f32 + 1.0).collect();
        FeatureStream::new(kind, Tensor::from_vec(frames, dim, data).unwrap()).unwrap()
    }

    #[test]
    fn forty_frames_is_identity() {
        let s = ramp(FeatureKind::Object2d, 40, 3);
        let a = align_to_40(&s);
        assert_eq!(a.valid_steps, 40);
        assert_eq!(&a.values, s.values());
    }

    #[test]
    fn eighty_frames_take_even_rows() {
        assert_eq!(sample_indices(80, 40), (0..40).map(|k| 2 * k).collect::<Vec<_>>());
        let a = align_to_40(&ramp(FeatureKind::Object2d, 80, 2));
        assert_eq!(a.values.get(5, 0), 11.0);
    }

    #[test]
    fn short_stream_zero_padded() {
        let a = align_to_40(&ramp(FeatureKind::Intermediate2d, 7, 2));
        assert_eq!(a.valid_steps, 7);
        assert_eq!(a.values.get(6, 1), 7.0);
        assert!(a.values.slice_rows(7, 40).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_broadcasts() {
        let a = align_to_40(&ramp(FeatureKind::Audio, 1, 4));
        assert_eq!(a.valid_steps, 40);
        assert!(a.values.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn silent_audio_is_zero() {
        let a = align_to_40(&ramp(FeatureKind::Audio, 0, 5));
        assert_eq!(a.valid_steps, 0);
        assert_eq!(a.values.shape(), (40, 5));
        assert!(a.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_stream_fuse_equals_alignment() {
        let s = ramp(FeatureKind::Scene, 12, 3);
        let f = fuse("v", std::slice::from_ref(&s), &[FeatureKind::Scene], &FeatureProfile::canonical()).unwrap();
        let a = align_to_40(&s);
        assert_eq!(f.values, a.values);
        assert_eq!(f.valid_steps, 12);
    }

    #[test]
    fn audio_does_not_extend_validity() {
        let streams = [ramp(FeatureKind::Object2d, 10, 2), ramp(FeatureKind::Audio, 1, 3)];
        let f = fuse("v", &streams, &[FeatureKind::Object2d, FeatureKind::Audio], &FeatureProfile::canonical())
            .unwrap();
        assert_eq!(f.valid_steps, 10);
        assert_eq!(f.dim(), 5);
        assert_eq!(f.values.row(9), &[10.0, 10.0, 1.0, 1.0, 1.0]);
        assert!(f.values.row(10).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_audio_zero_filled_but_visual_required() {
        let mut profile = FeatureProfile::canonical();
        profile.set(FeatureKind::Audio, 6);
        let streams = [ramp(FeatureKind::Scene, 40, 2)];
        let f = fuse("v", &streams, &[FeatureKind::Scene, FeatureKind::Audio], &profile).unwrap();
        assert_eq!(f.dim(), 8);
        let err = fuse("clip9", &streams, &[FeatureKind::Action3d], &profile).unwrap_err().to_string();
        assert!(err.contains("clip9") && err.contains("action3d"), "{err}");
    }

    #[test]
    fn audio_only_selection_uses_audio_validity() {
        let f = fuse("v", &[ramp(FeatureKind::Audio, 1, 2)], &[FeatureKind::Audio], &FeatureProfile::canonical())
            .unwrap();
        assert_eq!(f.valid_steps, 40);
        let f = fuse("v", &[ramp(FeatureKind::Audio, 0, 2)], &[FeatureKind::Audio], &FeatureProfile::canonical())
            .unwrap();
        assert_eq!(f.valid_steps, 0);
    }
}
