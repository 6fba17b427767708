//! Finite-difference check of the hand-written backward pass.
//!
//! Each parameter group is probed along one random sparse unit direction. The
//! reference is a central difference of the f64 loss; the f64 and f32
//! analytic gradients of the same weights are both compared against it.
//! Both are only comparable when f32 arithmetic takes the same ReLU and
//! pooling branches as f64, so a batch where some pre-activation or pooling
//! pair is tied to within f32 rounding is replaced by a fresh one.

use ndarray::{Array3, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::loss::loss_grad;
use super::network::{decisions, forward, forward_stack, Forward};
use super::{Batch, Mode, Model, ModelConfig, Result, Tensors, STACKS};
use crate::seed::{child_rng, derive_seed};

const MAX_REDRAWS: usize = 12;
const SUPPORT: usize = 4;

/// Result for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    /// Relative error of the f64 gradient.
    pub err64: f64,
    /// Relative error of the f32 gradient.
    pub err32: f64,
    /// Directions discarded because a kink sat at the current weights.
    pub redraws: usize,
}

/// A batch of log-mel-like inputs with sparse random onsets.
pub fn random_batch(seed: u64, batch: usize, frames: usize, bins: usize, classes: usize) -> Batch<f64> {
    let mut rng = child_rng(seed, 0);
    let inputs = Array3::from_shape_simple_fn((batch, frames, bins), || rng.gen_range(-8.0..2.0));
    let onsets = Array3::from_shape_simple_fn((batch, frames, classes), || if rng.gen_bool(0.05) { 1.0 } else { 0.0 });
    let velocities = onsets.mapv(|o| if o > 0.0 { rng.gen_range(0.1..1.0) } else { 0.0 });
    Batch { inputs, onsets, velocities }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn dot(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit vector with random signs on `SUPPORT` random entries. Few entries
/// move few units per unit step, so kink-free stencils are far more likely
/// than along a dense direction of the same length.
fn sparse_direction(dim: IxDyn, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let mut dir = ArrayD::zeros(dim);
    let n = dir.len();
    let picks = rand::seq::index::sample(rng, n, SUPPORT.min(n));
    let scale = 1.0 / (picks.len() as f64).sqrt();
    let flat = dir.as_slice_mut().expect("fresh array");
    for i in picks {
        flat[i] = if rng.gen_bool(0.5) { scale } else { -scale };
    }
    dir
}

struct Probe<'a> {
    model: &'a Model<f64>,
    batch: &'a Batch<f64>,
    base: &'a Forward<f64>,
    mode: Mode,
    velocity_weight: f64,
}

impl Probe<'_> {
    /// Loss with parameter `name` moved by `t · dir`.
    fn loss_along(&self, name: &str, dir: &ArrayD<f64>, t: f64) -> Result<f64> {
        let si = STACKS.iter().position(|s| name.starts_with(s)).expect("parameter belongs to a stack");
        let mut m = self.model.clone();
        m.params.get_mut(name).zip_mut_with(dir, |x, &d| *x += t * d);
        let fwd = forward_stack(&m, &self.batch.inputs, self.mode, si, self.base);
        Ok(loss_grad(&fwd, &self.batch.onsets, &self.batch.velocities, self.velocity_weight)?.0.total)
    }

    /// Derivative along `dir` from the largest step at which the loss is
    /// smooth over the stencil. A ReLU or max-pool kink inside `[-h, h]`
    /// shows up as central differences at `h` and `h/2` disagreeing or,
    /// when the kink sits near the centre, as a second difference that does
    /// not halve with the step. Both tests allow for rounding noise of
    /// `noise` in each loss value. `None` when no step is both kink free and
    /// large enough for the noise to stay below three parts in a million.
    fn smooth_derivative(&self, name: &str, dir: &ArrayD<f64>, f0: f64) -> Result<Option<f64>> {
        let noise = 1e-15 * f0.abs().max(1.0);
        let mut h = 1e-5;
        while h >= 1e-7 {
            let (p1, m1) = (self.loss_along(name, dir, h)?, self.loss_along(name, dir, -h)?);
            let (p2, m2) = (self.loss_along(name, dir, h / 2.0)?, self.loss_along(name, dir, -h / 2.0)?);
            let coarse = (p1 - m1) / (2.0 * h);
            let fine = (p2 - m2) / h;
            if noise / (h * fine.abs()) > 3e-6 {
                return Ok(None);
            }
            let d2_coarse = (p1 + m1 - 2.0 * f0) / h;
            let d2_fine = (p2 + m2 - 2.0 * f0) / (h / 2.0);
            let consistent = (coarse - fine).abs() <= 1e-6 * fine.abs() + 2.0 * noise / h;
            let curvature_ok = (d2_fine - d2_coarse / 2.0).abs() <= 1e-6 * fine.abs() + 4.0 * noise / h;
            if consistent && curvature_ok {
                // least-squares slope through the five stencil points
                return Ok(Some((h * (p1 - m1) + h / 2.0 * (p2 - m2)) / (2.5 * h * h)));
            }
            h /= 2.0;
        }
        Ok(None)
    }
}

/// Check every parameter group of a model initialised from `seed` on a
/// random `batch × frames` input, in training mode with dropout on.
pub fn check_gradients(config: &ModelConfig, seed: u64, batch: usize, frames: usize, velocity_weight: f64) -> Result<Vec<GroupCheck>> {
    let model = Model::<f64>::init(config.clone(), seed)?;
    let model32 = model.cast::<f32>();
    let dropout_seed = seed.wrapping_add(7);
    let mode = Mode::Train { dropout_seed };
    let cast32 = |b: &Batch<f64>| Batch {
        inputs: b.inputs.mapv(|v| v as f32),
        onsets: b.onsets.mapv(|v| v as f32),
        velocities: b.velocities.mapv(|v| v as f32),
    };
    let mut attempt = 0;
    let (data, data32) = loop {
        let data = random_batch(derive_seed(seed ^ 0x6261_7463, attempt), batch, frames, config.n_bins, config.n_classes);
        let data32 = cast32(&data);
        let (_, c64) = forward(&model, &data.inputs, mode, true);
        let (_, c32) = forward(&model32, &data32.inputs, mode, true);
        if decisions(&c64.expect("requested")) == decisions(&c32.expect("requested")) || attempt + 1 == MAX_REDRAWS as u64 {
            break (data, data32);
        }
        attempt += 1;
    };
    let (_, grads, _) = model.loss_and_grads(&data, velocity_weight, dropout_seed)?;
    let (_, grads32, _) = model32.loss_and_grads(&data32, velocity_weight, dropout_seed)?;
    let grads32: Tensors<f64> = grads32.cast();
    let (base, _) = forward(&model, &data.inputs, mode, false);
    let f0 = loss_grad(&base, &data.onsets, &data.velocities, velocity_weight)?.0.total;
    let probe = Probe { model: &model, batch: &data, base: &base, mode, velocity_weight };
    let mut rng = child_rng(seed, 1);
    let mut out = Vec::new();
    for name in model.params.names() {
        let p = model.params.get(name);
        let mut found = None;
        for redraws in 0..MAX_REDRAWS {
            let dir = sparse_direction(p.raw_dim(), &mut rng);
            if let Some(fd) = probe.smooth_derivative(name, &dir, f0)? {
                found = Some(GroupCheck {
                    name: name.to_string(),
                    err64: rel(dot(grads.get(name), &dir), fd),
                    err32: rel(dot(grads32.get(name), &dir), fd),
                    redraws,
                });
                break;
            }
        }
        out.push(found.unwrap_or(GroupCheck { name: name.to_string(), err64: f64::INFINITY, err32: f64::INFINITY, redraws: MAX_REDRAWS }));
    }
    Ok(out)
}
