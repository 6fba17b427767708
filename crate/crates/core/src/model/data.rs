//! Training batches and the sources that produce them.

use ndarray::{s, Array2, Array3};
use rand::Rng;

use super::{ModelError, Result, Scalar};
use crate::audio::{AudioClip, LogMel, MelConfig};
use crate::augment::{splice, ChunkPool, Source};
use crate::dataset::{make_labels, LabelRoll};
use crate::midi::DrumTrack;
use crate::seed::{child_rng, derive_seed};

/// Log-mel value of digital silence, used to pad short examples.
pub const SILENCE_LEVEL: f32 = -13.815_511; // ln(1e-6)

/// Model input and targets, all `[batch, frames, ·]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub inputs: Array3<T>,
    pub onsets: Array3<T>,
    pub velocities: Array3<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn check(&self) -> Result<()> {
        let (b, t, _) = self.inputs.dim();
        let (lb, lt, c) = self.onsets.dim();
        if (b, t) != (lb, lt) || self.velocities.dim() != (lb, lt, c) {
            return Err(ModelError::Shape(format!(
                "inputs {:?}, onsets {:?}, velocities {:?}",
                self.inputs.dim(),
                self.onsets.dim(),
                self.velocities.dim()
            )));
        }
        Ok(())
    }

    /// Stack equally long examples into one batch.
    pub fn from_examples(examples: &[&LabeledExample]) -> Result<Self> {
        let first = examples.first().ok_or_else(|| ModelError::Shape("empty batch".into()))?;
        let (frames, bins) = first.spec.dim();
        let classes = first.labels.classes();
        let mut batch = Batch {
            inputs: Array3::zeros((examples.len(), frames, bins)),
            onsets: Array3::zeros((examples.len(), frames, classes)),
            velocities: Array3::zeros((examples.len(), frames, classes)),
        };
        for (i, ex) in examples.iter().enumerate() {
            if ex.spec.dim() != (frames, bins) || ex.labels.onsets.dim() != (frames, classes) {
                return Err(ModelError::Shape("examples in a batch must have equal shapes".into()));
            }
            let c = |v: &f32| T::from(*v).expect("finite");
            batch.inputs.slice_mut(s![i, .., ..]).assign(&ex.spec.map(c));
            batch.onsets.slice_mut(s![i, .., ..]).assign(&ex.labels.onsets.map(c));
            batch.velocities.slice_mut(s![i, .., ..]).assign(&ex.labels.velocities.map(c));
        }
        Ok(batch)
    }

    pub fn frames(&self) -> usize {
        self.inputs.dim().1
    }
}

/// A spectrogram with its label roll.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub spec: Array2<f32>,
    pub labels: LabelRoll,
}

impl LabeledExample {
    pub fn from_audio(audio: &AudioClip, track: &DrumTrack, mel: &LogMel, n_classes: usize) -> Result<Self> {
        let spec = mel.compute(audio)?;
        let labels = make_labels(track, spec.frames(), n_classes).roll;
        Ok(LabeledExample { spec: spec.data, labels })
    }

    pub fn from_source(src: &dyn Source, mel: &LogMel, n_classes: usize) -> Result<Self> {
        Self::from_audio(src.audio(), src.track(), mel, n_classes)
    }

    pub fn frames(&self) -> usize {
        self.spec.nrows()
    }

    /// Frames `[start, start + len)`, padded with silence past the end.
    pub fn crop(&self, start: usize, len: usize) -> LabeledExample {
        let (frames, bins) = self.spec.dim();
        let classes = self.labels.classes();
        let mut out = LabeledExample { spec: Array2::from_elem((len, bins), SILENCE_LEVEL), labels: LabelRoll::zeros(len, classes) };
        let end = (start + len).min(frames);
        if start < end {
            let n = end - start;
            out.spec.slice_mut(s![..n, ..]).assign(&self.spec.slice(s![start..end, ..]));
            out.labels.onsets.slice_mut(s![..n, ..]).assign(&self.labels.onsets.slice(s![start..end, ..]));
            out.labels.velocities.slice_mut(s![..n, ..]).assign(&self.labels.velocities.slice(s![start..end, ..]));
        }
        out
    }

    /// A uniformly placed crop of `len` frames (the whole example, padded,
    /// when it is shorter).
    pub fn random_crop<R: Rng>(&self, len: usize, rng: &mut R) -> LabeledExample {
        let start = if self.frames() > len { rng.gen_range(0..=self.frames() - len) } else { 0 };
        self.crop(start, len)
    }
}

/// Deterministic batch stream: the batch for a step depends only on the
/// source, the step and the batch size.
pub trait BatchSource {
    fn batch(&self, step: u64, batch_size: usize) -> Result<Batch<f32>>;
}

/// Random fixed-length crops of precomputed examples.
pub struct CropSource {
    pub examples: Vec<LabeledExample>,
    pub crop_frames: usize,
    pub seed: u64,
}

impl BatchSource for CropSource {
    fn batch(&self, step: u64, batch_size: usize) -> Result<Batch<f32>> {
        if self.examples.is_empty() {
            return Err(ModelError::Shape("no training examples".into()));
        }
        let mut rng = child_rng(self.seed, step);
        let crops: Vec<LabeledExample> = (0..batch_size)
            .map(|_| {
                let ex = &self.examples[rng.gen_range(0..self.examples.len())];
                ex.random_crop(self.crop_frames, &mut rng)
            })
            .collect();
        Batch::from_examples(&crops.iter().collect::<Vec<_>>())
    }
}

/// Freshly spliced shuffled-mixup examples, cropped to `crop_frames`.
pub struct ShuffledSource {
    pub pool: ChunkPool,
    /// Chunks per spliced example.
    pub slots: usize,
    pub crop_frames: usize,
    pub seed: u64,
    pub n_classes: usize,
    mel: LogMel,
}

impl ShuffledSource {
    pub fn new(pool: ChunkPool, slots: usize, crop_frames: usize, seed: u64, n_classes: usize, mel: MelConfig) -> Self {
        ShuffledSource { pool, slots, crop_frames, seed, n_classes, mel: LogMel::new(mel) }
    }

    /// The `item`-th spliced example of `step`, before cropping.
    pub fn example(&self, step: u64, item: usize) -> Result<LabeledExample> {
        let mut rng = child_rng(derive_seed(self.seed, step), item as u64);
        let draws: Vec<usize> = (0..self.slots).map(|_| rng.gen_range(0..self.pool.len())).collect();
        let ex = splice(&self.pool, &draws)?;
        LabeledExample::from_source(&ex, &self.mel, self.n_classes)
    }
}

impl BatchSource for ShuffledSource {
    fn batch(&self, step: u64, batch_size: usize) -> Result<Batch<f32>> {
        if self.pool.is_empty() {
            return Err(crate::augment::AugmentError::EmptyPool.into());
        }
        let mut crop_rng = child_rng(derive_seed(self.seed, step), u64::MAX);
        let crops =
            (0..batch_size).map(|i| Ok(self.example(step, i)?.random_crop(self.crop_frames, &mut crop_rng))).collect::<Result<Vec<_>>>()?;
        Batch::from_examples(&crops.iter().collect::<Vec<_>>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_pads_with_silence() {
        let mut labels = LabelRoll::zeros(3, 7);
        labels.onsets[[2, 1]] = 1.0;
        let ex = LabeledExample { spec: Array2::ones((3, 4)), labels };
        let c = ex.crop(1, 4);
        assert_eq!(c.spec.row(0).to_vec(), vec![1.0; 4]);
        assert_eq!(c.spec.row(3).to_vec(), vec![SILENCE_LEVEL; 4]);
        assert_eq!(c.labels.onsets[[1, 1]], 1.0);
        assert_eq!(c.labels.onset_count(), 1);
        assert!((f64::from(SILENCE_LEVEL) - 1e-6f64.ln()).abs() < 1e-5);
    }
}
