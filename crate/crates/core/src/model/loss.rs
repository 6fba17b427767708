use ndarray::{Array2, Array3, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::{Forward, ModelError, Result, Scalar};
use crate::dataset::LabelRoll;

/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` before the log.
pub const PROB_CLIP: f64 = 1e-7;

/// Default weight of the velocity term.
pub const VELOCITY_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    /// Mean binary cross-entropy over every cell.
    pub onset_bce: f64,
    /// Mean squared velocity error over onset cells (0 when there are none).
    pub velocity_mse: f64,
}

fn bce_terms(p: f64, y: f64) -> (f64, bool) {
    let pc = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    let clipped = pc != p;
    (-(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln()), clipped)
}

/// `BCE(onset_probs, onsets) + 0.5 · MSE(velocities, targets | onset cells)`
/// for one `[frames, classes]` prediction.
pub fn loss(onset_probs: ArrayView2<f32>, velocities: ArrayView2<f32>, labels: &LabelRoll) -> Result<LossValue> {
    if onset_probs.dim() != labels.onsets.dim() || velocities.dim() != labels.onsets.dim() {
        return Err(ModelError::Shape(format!(
            "predictions {:?}/{:?} vs labels {:?}",
            onset_probs.dim(),
            velocities.dim(),
            labels.onsets.dim()
        )));
    }
    if onset_probs.iter().chain(velocities.iter()).any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("predictions"));
    }
    let mut bce = 0.0;
    let mut se = 0.0;
    let mut onsets = 0usize;
    Zip::from(&onset_probs).and(&velocities).and(&labels.onsets).and(&labels.velocities).for_each(|&p, &v, &y, &t| {
        bce += bce_terms(f64::from(p), f64::from(y)).0;
        if y > 0.5 {
            se += (f64::from(v) - f64::from(t)).powi(2);
            onsets += 1;
        }
    });
    let bce = bce / onset_probs.len().max(1) as f64;
    let mse = if onsets == 0 { 0.0 } else { se / onsets as f64 };
    Ok(LossValue { total: bce + VELOCITY_WEIGHT * mse, onset_bce: bce, velocity_mse: mse })
}

/// Loss over a forward pass plus gradients w.r.t. onset logits and
/// velocity outputs (both `[batch·frames, classes]`).
pub(super) fn loss_grad<T: Scalar>(
    fwd: &Forward<T>,
    onsets: &Array3<T>,
    targets: &Array3<T>,
    velocity_weight: f64,
) -> Result<(LossValue, Array2<T>, Array2<T>)> {
    let (b, t, c) = fwd.onset_probs.dim();
    if onsets.dim() != (b, t, c) || targets.dim() != (b, t, c) {
        return Err(ModelError::Shape(format!("labels {:?} vs predictions {:?}", onsets.dim(), (b, t, c))));
    }
    let n = (b * t * c) as f64;
    let onset_cells = onsets.iter().filter(|&&y| y > T::from(0.5).expect("constant")).count();
    let mut dlogits = Array2::<T>::zeros((b * t, c));
    let mut dvel = Array2::<T>::zeros((b * t, c));
    let mut bce = 0.0;
    let mut se = 0.0;
    let probs = fwd.onset_probs.view().into_shape_with_order((b * t, c)).expect("standard layout");
    let vel = fwd.velocities.view().into_shape_with_order((b * t, c)).expect("standard layout");
    let on = onsets.view().into_shape_with_order((b * t, c)).expect("standard layout");
    let tg = targets.view().into_shape_with_order((b * t, c)).expect("standard layout");
    let vscale = if onset_cells == 0 { 0.0 } else { 2.0 * velocity_weight / onset_cells as f64 };
    Zip::from(&mut dlogits).and(&mut dvel).and(&probs).and(&vel).and(&on).and(&tg).for_each(|dl, dv, &p, &v, &y, &target| {
        let (p, v, y, target) =
            (p.to_f64().unwrap_or(f64::NAN), v.to_f64().unwrap_or(f64::NAN), y.to_f64().unwrap_or(0.0), target.to_f64().unwrap_or(0.0));
        let (term, clipped) = bce_terms(p, y);
        bce += term;
        if !clipped {
            *dl = T::from((p - y) / n).expect("finite");
        }
        if y > 0.5 {
            se += (v - target).powi(2);
            *dv = T::from(vscale * (v - target)).unwrap_or(T::nan());
        }
    });
    let bce = bce / n;
    let mse = if onset_cells == 0 { 0.0 } else { se / onset_cells as f64 };
    let value = LossValue { total: bce + velocity_weight * mse, onset_bce: bce, velocity_mse: mse };
    Ok((value, dlogits, dvel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn roll(frames: usize) -> LabelRoll {
        LabelRoll::zeros(frames, 7)
    }

    #[test]
    fn chance_probabilities_give_ln2() {
        let p = Array2::from_elem((10, 7), 0.5f32);
        let v = Array2::zeros((10, 7));
        let l = loss(p.view(), v.view(), &roll(10)).unwrap();
        assert!((l.onset_bce - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(l.velocity_mse, 0.0);
        assert!((l.total - std::f64::consts::LN_2).abs() < 1e-4);
    }

    #[test]
    fn perfect_predictions_are_near_zero() {
        let mut r = roll(4);
        r.onsets[[1, 2]] = 1.0;
        r.velocities[[1, 2]] = 0.7;
        let l = loss(r.onsets.view(), r.velocities.view(), &r).unwrap();
        assert!(l.total <= 1e-5, "{l:?}");
    }

    #[test]
    fn single_velocity_miss_costs_half() {
        let mut r = roll(3);
        r.onsets[[0, 0]] = 1.0;
        r.velocities[[0, 0]] = 1.0;
        let l = loss(r.onsets.view(), Array2::zeros((3, 7)).view(), &r).unwrap();
        assert!((l.total - l.onset_bce - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nan_is_rejected() {
        let mut p = Array2::from_elem((2, 7), 0.5f32);
        p[[0, 0]] = f32::NAN;
        assert!(matches!(loss(p.view(), Array2::zeros((2, 7)).view(), &roll(2)), Err(ModelError::NonFinite(_))));
    }
}
