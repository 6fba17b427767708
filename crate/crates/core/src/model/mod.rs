//! Onset and velocity prediction stacks, loss, optimiser and training.
//!
//! Both stacks share the same convolutional trunk layout
//! (conv-BN-conv-BN-pool-dropout-conv-BN-pool-dropout-dense-dropout); the
//! onset stack adds a bidirectional LSTM before its output layer.

mod checkpoint;
mod data;
pub mod gradcheck;
pub mod layers;
mod loss;
mod network;
mod optim;
mod train;

use std::collections::BTreeMap;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, Array3, ArrayD, IxDyn, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use data::{Batch, BatchSource, CropSource, LabeledExample, ShuffledSource, SILENCE_LEVEL};
pub use loss::{loss, LossValue};
pub use network::{Forward, Mode, StateUpdate};
pub use optim::{learning_rate, Adam};
pub use train::{MetricsLog, MetricsRow, TrainConfig, Trainer};

use crate::audio::Spectrogram;
use crate::dataset::LabelRoll;

/// Floating-point element type of model tensors.
pub trait Scalar:
    Float
    + FromPrimitive
    + ndarray::LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;
    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8>;
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self>;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    fn to_le_bytes_vec(values: &[f32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<f32> {
        bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    fn to_le_bytes_vec(values: &[f64]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<f64> {
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("expected {expected} frequency bins, got {found}")]
    BinMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("non-finite loss at step {step} (onset BCE {bce}, velocity MSE {mse})")]
    Diverged { step: u64, bce: f64, mse: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint was written for a different model config (hash {found}, expected {expected})")]
    ConfigMismatch { expected: String, found: String },
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Augment(#[from] crate::augment::AugmentError),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_bins: usize,
    /// Output units per stack (vocabulary size).
    pub n_classes: usize,
    pub conv_filters: [usize; 3],
    pub dense_units: usize,
    /// Units per LSTM direction.
    pub lstm_units: usize,
    /// Keep probabilities after each pooling stage, the dense layer and the LSTM.
    pub conv_keep: f64,
    pub dense_keep: f64,
    pub lstm_keep: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_bins: 250,
            n_classes: 7,
            conv_filters: [16, 16, 32],
            dense_units: 256,
            lstm_units: 64,
            conv_keep: 0.75,
            dense_keep: 0.5,
            lstm_keep: 0.5,
            bn_momentum: 0.99,
            bn_eps: 1e-3,
        }
    }
}

impl ModelConfig {
    /// Frequency bins left after both pooling stages.
    pub fn pooled_bins(&self) -> usize {
        self.n_bins / 2 / 2
    }

    pub fn flat_features(&self) -> usize {
        self.pooled_bins() * self.conv_filters[2]
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let keeps = [self.conv_keep, self.dense_keep, self.lstm_keep];
        if keeps.iter().any(|k| !(*k > 0.0 && *k <= 1.0)) {
            return Err(ModelError::Shape(format!("keep probabilities must lie in (0, 1]: {keeps:?}")));
        }
        if self.pooled_bins() == 0 || self.n_classes == 0 || self.conv_filters.contains(&0) {
            return Err(ModelError::Shape("empty layer in model config".into()));
        }
        Ok(())
    }
}

/// Named tensors (parameters, gradients, optimiser moments or running statistics).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tensors<T> {
    pub map: BTreeMap<String, ArrayD<T>>,
}

impl<T: Scalar> Tensors<T> {
    pub fn get(&self, name: &str) -> &ArrayD<T> {
        self.map.get(name).unwrap_or_else(|| panic!("missing tensor {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<T> {
        self.map.get_mut(name).unwrap_or_else(|| panic!("missing tensor {name}"))
    }

    pub fn vector(&self, name: &str) -> Array1<T> {
        self.get(name).clone().into_dimensionality().expect("rank-1 tensor")
    }

    pub fn matrix(&self, name: &str) -> ndarray::ArrayView2<'_, T> {
        self.get(name).view().into_dimensionality().expect("rank-2 tensor")
    }

    pub fn insert(&mut self, name: impl Into<String>, t: ArrayD<T>) {
        self.map.insert(name.into(), t);
    }

    pub fn zeros_like(&self) -> Self {
        Tensors { map: self.map.iter().map(|(k, v)| (k.clone(), ArrayD::zeros(v.raw_dim()))).collect() }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total element count.
    pub fn size(&self) -> usize {
        self.map.values().map(ArrayD::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Tensors<U> {
        Tensors { map: self.map.iter().map(|(k, v)| (k.clone(), v.mapv(|x| U::from(x).expect("finite value")))).collect() }
    }
}

/// The two prediction stacks.
pub const STACKS: [&str; 2] = ["onset", "velocity"];

/// Learnable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: Tensors<T>,
    /// Running means and variances, `<stack>/bn<k>/mean|var`.
    pub state: Tensors<T>,
}

/// Eval-mode outputs for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `[frames, classes]` in `[0, 1]`.
    pub onset_probs: Array2<f32>,
    /// `[frames, classes]`, nominally `velocity / 127`.
    pub velocities: Array2<f32>,
}

fn uniform<T: Scalar>(shape: &[usize], limit: f64, rng: &mut ChaCha8Rng) -> ArrayD<T> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || layers::cast(rng.gen_range(-limit..limit)))
}

/// Four orthogonal `h×h` blocks side by side (`[h, 4h]`).
fn orthogonal_blocks<T: Scalar>(h: usize, rng: &mut ChaCha8Rng) -> ArrayD<T> {
    let mut out = Array2::<f64>::zeros((h, 4 * h));
    for block in 0..4 {
        // Gram-Schmidt on Gaussian-ish columns
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(h);
        while cols.len() < h {
            let mut v: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0) + rng.gen_range(-1.0..1.0)).collect();
            for u in &cols {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 1e-6 {
                cols.push(v.into_iter().map(|a| a / n).collect());
            }
        }
        for (j, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                out[[i, block * h + j]] = v;
            }
        }
    }
    out.mapv(layers::cast).into_dyn()
}

impl<T: Scalar> Model<T> {
    /// Fan-in scaled uniform weights, orthogonal recurrent matrices, unit
    /// forget-gate bias.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::seed::child_rng(seed, 0x006d_6f64_656c);
        let mut params = Tensors::default();
        let mut state = Tensors::default();
        let [c1, c2, c3] = config.conv_filters;
        let h = config.lstm_units;
        for stack in STACKS {
            let mut cin = 1;
            for (k, cout) in [c1, c2, c3].into_iter().enumerate() {
                let fan_in = 9 * cin;
                params.insert(format!("{stack}/conv{}/w", k + 1), uniform(&[fan_in, cout], (6.0 / fan_in as f64).sqrt(), &mut rng));
                params.insert(format!("{stack}/bn{}/gamma", k + 1), ArrayD::ones(IxDyn(&[cout])));
                params.insert(format!("{stack}/bn{}/beta", k + 1), ArrayD::zeros(IxDyn(&[cout])));
                state.insert(format!("{stack}/bn{}/mean", k + 1), ArrayD::zeros(IxDyn(&[cout])));
                state.insert(format!("{stack}/bn{}/var", k + 1), ArrayD::ones(IxDyn(&[cout])));
                cin = cout;
            }
            let flat = config.flat_features();
            params.insert(format!("{stack}/dense/w"), uniform(&[flat, config.dense_units], (6.0 / flat as f64).sqrt(), &mut rng));
            params.insert(format!("{stack}/dense/b"), ArrayD::zeros(IxDyn(&[config.dense_units])));
            let out_in = if stack == "onset" {
                for dir in ["fw", "bw"] {
                    let d = config.dense_units;
                    params.insert(format!("{stack}/lstm/{dir}/wx"), uniform(&[d, 4 * h], (3.0 / d as f64).sqrt(), &mut rng));
                    params.insert(format!("{stack}/lstm/{dir}/wh"), orthogonal_blocks(h, &mut rng));
                    let mut b = ArrayD::zeros(IxDyn(&[4 * h]));
                    b.slice_mut(ndarray::s![h..2 * h]).fill(T::one());
                    params.insert(format!("{stack}/lstm/{dir}/b"), b);
                }
                2 * h
            } else {
                config.dense_units
            };
            params.insert(format!("{stack}/out/w"), uniform(&[out_in, config.n_classes], (3.0 / out_in as f64).sqrt(), &mut rng));
            params.insert(format!("{stack}/out/b"), ArrayD::zeros(IxDyn(&[config.n_classes])));
        }
        Ok(Model { config, params, state })
    }

    /// Same shapes with every parameter zero.
    pub fn zeroed(&self) -> Self {
        Model { config: self.config.clone(), params: self.params.zeros_like(), state: self.state.clone() }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), params: self.params.cast(), state: self.state.cast() }
    }

    fn check_input(&self, bins: usize) -> Result<()> {
        if bins != self.config.n_bins {
            return Err(ModelError::BinMismatch { expected: self.config.n_bins, found: bins });
        }
        Ok(())
    }

    /// Forward pass over a `[batch, frames, bins]` input.
    pub fn forward(&self, input: &Array3<T>, mode: Mode) -> Result<Forward<T>> {
        self.check_input(input.dim().2)?;
        if input.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("input"));
        }
        Ok(network::forward(self, input, mode, false).0)
    }

    /// Loss and parameter gradients for one batch in training mode, plus
    /// the running-statistic updates the batch implies. `self` is not
    /// modified, so repeated calls with the same seed are identical.
    pub fn loss_and_grads(
        &self,
        batch: &Batch<T>,
        velocity_weight: f64,
        dropout_seed: u64,
    ) -> Result<(LossValue, Tensors<T>, StateUpdate<T>)> {
        self.check_input(batch.inputs.dim().2)?;
        batch.check()?;
        let (fwd, cache) = network::forward(self, &batch.inputs, Mode::Train { dropout_seed }, true);
        let cache = cache.expect("cache requested");
        let (value, dlogits, dvel) = loss::loss_grad(&fwd, &batch.onsets, &batch.velocities, velocity_weight)?;
        let grads = network::backward(self, &batch.inputs, &cache, dlogits, dvel);
        Ok((value, grads, fwd.state_update))
    }

    /// Loss of one batch without gradients.
    pub fn batch_loss(&self, batch: &Batch<T>, velocity_weight: f64, mode: Mode) -> Result<LossValue> {
        self.check_input(batch.inputs.dim().2)?;
        batch.check()?;
        let (fwd, _) = network::forward(self, &batch.inputs, mode, false);
        Ok(loss::loss_grad(&fwd, &batch.onsets, &batch.velocities, velocity_weight)?.0)
    }

    /// Fold batch statistics into the running averages.
    pub fn apply_state_update(&mut self, update: &StateUpdate<T>) {
        let m = layers::cast::<T>(self.config.bn_momentum);
        for (name, batch_value) in &update.values {
            let run = self.state.get_mut(name);
            ndarray::Zip::from(run).and(&batch_value.view().into_dyn()).for_each(|r, &b| *r = m * *r + (T::one() - m) * b);
        }
    }
}

impl Model<f32> {
    /// Eval-mode prediction for one spectrogram. The convolutional trunk is
    /// run in blocks of `block` frames so memory stays bounded on long input.
    pub fn predict(&self, spec: &Spectrogram) -> Result<Prediction> {
        self.check_input(spec.bins())?;
        if spec.data.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("spectrogram"));
        }
        let (probs, vel) = network::predict_blocked(self, spec.view(), 800);
        Ok(Prediction { onset_probs: probs, velocities: vel })
    }
}

/// Training targets as `[1, frames, classes]` arrays.
pub fn roll_to_targets<T: Scalar>(roll: &LabelRoll) -> (Array3<T>, Array3<T>) {
    let (f, c) = roll.onsets.dim();
    let on = roll.onsets.mapv(|v| layers::cast(f64::from(v))).into_shape_with_order((1, f, c)).expect("same size");
    let vel = roll.velocities.mapv(|v| layers::cast(f64::from(v))).into_shape_with_order((1, f, c)).expect("same size");
    (on, vel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_shapes() {
        let m = Model::<f32>::init(ModelConfig::default(), 0).unwrap();
        let shape = |n: &str| m.params.get(n).shape().to_vec();
        assert_eq!(shape("onset/conv1/w"), vec![9, 16]);
        assert_eq!(shape("onset/conv2/w"), vec![144, 16]);
        assert_eq!(shape("onset/conv3/w"), vec![144, 32]);
        assert_eq!(shape("onset/dense/w"), vec![62 * 32, 256]);
        assert_eq!(shape("onset/lstm/fw/wx"), vec![256, 256]);
        assert_eq!(shape("onset/lstm/bw/wh"), vec![64, 256]);
        assert_eq!(shape("onset/out/w"), vec![128, 7]);
        assert_eq!(shape("velocity/out/w"), vec![256, 7]);
        assert!(!m.params.map.contains_key("velocity/lstm/fw/wx"));
        assert_eq!(m.state.len(), 12);
    }

    #[test]
    fn recurrent_blocks_are_orthogonal() {
        let m = Model::<f64>::init(ModelConfig { lstm_units: 8, ..Default::default() }, 3).unwrap();
        let wh = m.params.matrix("onset/lstm/fw/wh");
        for block in 0..4 {
            let q = wh.slice(ndarray::s![.., block * 8..(block + 1) * 8]);
            let qtq = q.t().dot(&q);
            for i in 0..8 {
                for j in 0..8 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((qtq[[i, j]] - want).abs() < 1e-10);
                }
            }
        }
        let b = m.params.vector("onset/lstm/fw/b");
        assert_eq!(b[8], 1.0);
        assert_eq!(b[0], 0.0);
    }

    #[test]
    fn config_hash_tracks_changes() {
        let a = ModelConfig::default();
        let b = ModelConfig { lstm_units: 32, ..Default::default() };
        assert_eq!(a.hash(), ModelConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
