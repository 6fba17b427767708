use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView2, Axis};

use super::layers::{
    self, bn_relu_backward, bn_relu_eval, bn_relu_train, conv_input_grad, dense, dense_backward, dropout_mask, im2col, lstm_backward,
    lstm_forward, matmul, maxpool_freq, maxpool_freq_backward, sigmoid, BnCache, Grid, LstmCache, LstmWeights,
};
use super::{Model, Scalar, Tensors};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout on (masks drawn from `dropout_seed`), batch statistics in BN.
    Train { dropout_seed: u64 },
    /// No dropout, running statistics in BN.
    Eval,
}

/// Batch-norm statistics observed in a training forward pass.
#[derive(Debug, Clone, Default)]
pub struct StateUpdate<T> {
    pub values: Vec<(String, Array1<T>)>,
}

/// Outputs of a forward pass over `[batch, frames, bins]`.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    /// `[batch·frames, classes]`
    pub onset_logits: Array2<T>,
    /// `[batch, frames, classes]`
    pub onset_probs: Array3<T>,
    /// `[batch, frames, classes]`
    pub velocities: Array3<T>,
    pub state_update: StateUpdate<T>,
}

struct ConvCache<T> {
    cols: Array2<T>,
    out: Array2<T>,
    bn: BnCache<T>,
}

struct TrunkCache<T> {
    conv: [ConvCache<T>; 3],
    pool1: Vec<bool>,
    pool2: Vec<bool>,
    mask1: Option<Array2<T>>,
    mask2: Option<Array2<T>>,
    flat: Array2<T>,
    hidden: Array2<T>,
    mask3: Option<Array2<T>>,
    out: Array2<T>,
}

struct OnsetHead<T> {
    fw: LstmCache<T>,
    bw: LstmCache<T>,
    mask: Option<Array2<T>>,
    out: Array2<T>,
}

pub(super) struct Cache<T> {
    trunks: [TrunkCache<T>; 2],
    onset: OnsetHead<T>,
}

fn layer_rng(mode: Mode, stack: usize, layer: u64) -> Option<rand_chacha::ChaCha8Rng> {
    match mode {
        Mode::Train { dropout_seed } => Some(crate::seed::child_rng(dropout_seed, stack as u64 * 16 + layer)),
        Mode::Eval => None,
    }
}

fn apply_dropout<T: Scalar>(x: &mut Array2<T>, keep: f64, mode: Mode, stack: usize, layer: u64) -> Option<Array2<T>> {
    if keep >= 1.0 {
        return None;
    }
    let mut rng = layer_rng(mode, stack, layer)?;
    let mask = dropout_mask::<T>(x.dim(), keep, &mut rng);
    *x *= &mask;
    Some(mask)
}

fn mask_grad<T: Scalar>(d: &mut Array2<T>, mask: &Option<Array2<T>>) {
    if let Some(m) = mask {
        *d *= m;
    }
}

struct Trunk<T> {
    out: Array2<T>,
    cache: Option<TrunkCache<T>>,
}

/// Convolutional trunk and dense layer for one stack. `x` is
/// `[batch·time·freq, 1]`; the result is `[batch·time, dense_units]`.
fn trunk<T: Scalar>(
    model: &Model<T>,
    si: usize,
    x: ArrayView2<T>,
    g0: Grid,
    mode: Mode,
    want_cache: bool,
    update: &mut StateUpdate<T>,
) -> Trunk<T> {
    let cfg = &model.config;
    let stack = super::STACKS[si];
    let p = &model.params;
    let eps = cfg.bn_eps;
    let conv = |k: usize, input: ArrayView2<T>, g: Grid, update: &mut StateUpdate<T>| -> ConvCache<T> {
        let cols = im2col(input, g);
        let z = matmul(cols.view(), p.matrix(&format!("{stack}/conv{k}/w")));
        let gamma = p.vector(&format!("{stack}/bn{k}/gamma"));
        let beta = p.vector(&format!("{stack}/bn{k}/beta"));
        match mode {
            Mode::Train { .. } => {
                let (out, bn, stats) = bn_relu_train(&z, &gamma, &beta, eps);
                update.values.push((format!("{stack}/bn{k}/mean"), stats.mean));
                update.values.push((format!("{stack}/bn{k}/var"), stats.var));
                ConvCache { cols, out, bn }
            }
            Mode::Eval => {
                let mean = model.state.vector(&format!("{stack}/bn{k}/mean"));
                let var = model.state.vector(&format!("{stack}/bn{k}/var"));
                let out = bn_relu_eval(&z, &gamma, &beta, &mean, &var, eps);
                let empty = BnCache { xhat: Array2::zeros((0, 0)), inv_std: Array1::zeros(0) };
                ConvCache { cols: Array2::zeros((0, 0)), out, bn: empty }
            }
        }
    };
    let c1 = conv(1, x, g0, update);
    let c2 = conv(2, c1.out.view(), g0, update);
    let (mut p1, pool1, g1) = maxpool_freq(&c2.out, g0);
    let mask1 = apply_dropout(&mut p1, cfg.conv_keep, mode, si, 1);
    let c3 = conv(3, p1.view(), g1, update);
    let (mut p2, pool2, g2) = maxpool_freq(&c3.out, g1);
    let mask2 = apply_dropout(&mut p2, cfg.conv_keep, mode, si, 2);
    let frames = g0.batch * g0.time;
    let flat = p2.into_shape_with_order((frames, g2.freq * cfg.conv_filters[2])).expect("contiguous pooled activation");
    let mut hidden = dense(flat.view(), p.matrix(&format!("{stack}/dense/w")), &p.vector(&format!("{stack}/dense/b")));
    hidden.mapv_inplace(|v| v.max(T::zero()));
    let mut out = hidden.clone();
    let mask3 = apply_dropout(&mut out, cfg.dense_keep, mode, si, 3);
    let cache = want_cache.then(|| TrunkCache { conv: [c1, c2, c3], pool1, pool2, mask1, mask2, flat, hidden, mask3, out: out.clone() });
    Trunk { out, cache }
}

fn lstm_weights<'a, T: Scalar>(p: &'a Tensors<T>, dir: &str, b: &'a Array1<T>) -> LstmWeights<'a, T> {
    LstmWeights { wx: p.matrix(&format!("onset/lstm/{dir}/wx")), wh: p.matrix(&format!("onset/lstm/{dir}/wh")), b }
}

/// BiLSTM, dropout and output layer of the onset stack. Returns logits.
fn onset_head<T: Scalar>(
    model: &Model<T>,
    feats: ArrayView2<T>,
    batch: usize,
    time: usize,
    mode: Mode,
    want_cache: bool,
) -> (Array2<T>, Option<OnsetHead<T>>) {
    let p = &model.params;
    let bf = p.vector("onset/lstm/fw/b");
    let bb = p.vector("onset/lstm/bw/b");
    let (hf, cf) = lstm_forward(feats, batch, time, &lstm_weights(p, "fw", &bf), false);
    let (hb, cb) = lstm_forward(feats, batch, time, &lstm_weights(p, "bw", &bb), true);
    let mut out = concatenate(Axis(1), &[hf.view(), hb.view()]).expect("same row count");
    let mask = apply_dropout(&mut out, model.config.lstm_keep, mode, 0, 4);
    let logits = dense(out.view(), p.matrix("onset/out/w"), &p.vector("onset/out/b"));
    (logits, want_cache.then_some(OnsetHead { fw: cf, bw: cb, mask, out }))
}

fn to_batched<T: Scalar>(x: Array2<T>, batch: usize, time: usize) -> Array3<T> {
    let c = x.ncols();
    x.into_shape_with_order((batch, time, c)).expect("row count matches")
}

pub(super) fn forward<T: Scalar>(model: &Model<T>, input: &Array3<T>, mode: Mode, want_cache: bool) -> (Forward<T>, Option<Cache<T>>) {
    let (batch, time, bins) = input.dim();
    let g0 = Grid { batch, time, freq: bins };
    let x = input.as_standard_layout().into_owned().into_shape_with_order((g0.rows(), 1)).expect("contiguous input");
    let mut update = StateUpdate::default();
    let t_on = trunk(model, 0, x.view(), g0, mode, want_cache, &mut update);
    let t_vel = trunk(model, 1, x.view(), g0, mode, want_cache, &mut update);
    let (logits, head) = onset_head(model, t_on.out.view(), batch, time, mode, want_cache);
    let vel = dense(t_vel.out.view(), model.params.matrix("velocity/out/w"), &model.params.vector("velocity/out/b"));
    let probs = logits.mapv(sigmoid);
    let fwd = Forward {
        onset_probs: to_batched(probs, batch, time),
        velocities: to_batched(vel, batch, time),
        onset_logits: logits,
        state_update: update,
    };
    let cache = match (t_on.cache, t_vel.cache, head) {
        (Some(a), Some(b), Some(h)) => Some(Cache { trunks: [a, b], onset: h }),
        _ => None,
    };
    (fwd, cache)
}

/// The discrete choices of a training forward pass: every ReLU sign and
/// every pooling winner, in a fixed order.
pub(super) fn decisions<T: Scalar>(cache: &Cache<T>) -> Vec<bool> {
    let mut out = Vec::new();
    for t in &cache.trunks {
        for c in &t.conv {
            out.extend(c.out.iter().map(|&v| v > T::zero()));
        }
        out.extend(&t.pool1);
        out.extend(&t.pool2);
        out.extend(t.hidden.iter().map(|&v| v > T::zero()));
    }
    out
}

/// Forward pass that recomputes only stack `si` and takes the other stack's
/// outputs from `base`. The stacks share no parameters, so this equals a
/// full forward pass whenever only stack `si` changed since `base`.
pub(super) fn forward_stack<T: Scalar>(model: &Model<T>, input: &Array3<T>, mode: Mode, si: usize, base: &Forward<T>) -> Forward<T> {
    let (batch, time, bins) = input.dim();
    let g0 = Grid { batch, time, freq: bins };
    let x = input.as_standard_layout().into_owned().into_shape_with_order((g0.rows(), 1)).expect("contiguous input");
    let mut update = StateUpdate::default();
    let t = trunk(model, si, x.view(), g0, mode, false, &mut update);
    let mut fwd = base.clone();
    fwd.state_update = update;
    if si == 0 {
        let (logits, _) = onset_head(model, t.out.view(), batch, time, mode, false);
        fwd.onset_probs = to_batched(logits.mapv(sigmoid), batch, time);
        fwd.onset_logits = logits;
    } else {
        let vel = dense(t.out.view(), model.params.matrix("velocity/out/w"), &model.params.vector("velocity/out/b"));
        fwd.velocities = to_batched(vel, batch, time);
    }
    fwd
}

fn add_grad<T: Scalar>(grads: &mut Tensors<T>, name: String, g: ndarray::ArrayD<T>) {
    grads.map.insert(name, g);
}

/// Backprop through one trunk given the gradient of its output.
fn trunk_backward<T: Scalar>(model: &Model<T>, si: usize, mut d: Array2<T>, c: &TrunkCache<T>, g0: Grid, grads: &mut Tensors<T>) {
    let cfg = &model.config;
    let stack = super::STACKS[si];
    let p = &model.params;
    mask_grad(&mut d, &c.mask3);
    ndarray::Zip::from(&mut d).and(&c.hidden).for_each(|dv, &h| {
        if h <= T::zero() {
            *dv = T::zero();
        }
    });
    let (dflat, dw, db) = dense_backward(d.view(), c.flat.view(), p.matrix(&format!("{stack}/dense/w")), true);
    add_grad(grads, format!("{stack}/dense/w"), dw.into_dyn());
    add_grad(grads, format!("{stack}/dense/b"), db.into_dyn());
    let g1 = Grid { freq: g0.freq / 2, ..g0 };
    let g2 = Grid { freq: g1.freq / 2, ..g1 };
    let c3 = cfg.conv_filters[2];
    let mut dp2 = dflat.expect("requested").into_shape_with_order((g2.rows(), c3)).expect("contiguous");
    mask_grad(&mut dp2, &c.mask2);
    let dy3 = maxpool_freq_backward(&dp2, &c.pool2, g1);
    let conv_back = |k: usize, dy: Array2<T>, g: Grid, cin: usize, need_dx: bool, grads: &mut Tensors<T>| -> Option<Array2<T>> {
        let cc = &c.conv[k - 1];
        let gamma = p.vector(&format!("{stack}/bn{k}/gamma"));
        let (dz, dgamma, dbeta) = bn_relu_backward(&dy, &cc.out, &cc.bn, &gamma);
        add_grad(grads, format!("{stack}/bn{k}/gamma"), dgamma.into_dyn());
        add_grad(grads, format!("{stack}/bn{k}/beta"), dbeta.into_dyn());
        let w = p.matrix(&format!("{stack}/conv{k}/w"));
        add_grad(grads, format!("{stack}/conv{k}/w"), matmul(cc.cols.t(), dz.view()).into_dyn());
        need_dx.then(|| conv_input_grad(dz.view(), w, g, cin))
    };
    let mut dp1 = conv_back(3, dy3, g1, cfg.conv_filters[1], true, grads).expect("requested");
    mask_grad(&mut dp1, &c.mask1);
    let dy2 = maxpool_freq_backward(&dp1, &c.pool1, g0);
    let dy1 = conv_back(2, dy2, g0, cfg.conv_filters[0], true, grads).expect("requested");
    conv_back(1, dy1, g0, 1, false, grads);
}

pub(super) fn backward<T: Scalar>(
    model: &Model<T>,
    input: &Array3<T>,
    cache: &Cache<T>,
    dlogits: Array2<T>,
    dvel: Array2<T>,
) -> Tensors<T> {
    let (batch, time, bins) = input.dim();
    let g0 = Grid { batch, time, freq: bins };
    let p = &model.params;
    let mut grads = Tensors::default();
    let h = &cache.onset;

    let (dout, dw, db) = dense_backward(dlogits.view(), h.out.view(), p.matrix("onset/out/w"), true);
    add_grad(&mut grads, "onset/out/w".into(), dw.into_dyn());
    add_grad(&mut grads, "onset/out/b".into(), db.into_dyn());
    let mut dout = dout.expect("requested");
    mask_grad(&mut dout, &h.mask);
    let units = model.config.lstm_units;
    let feats = cache.trunks[0].out.view();
    let mut dfeats = Array2::<T>::zeros(feats.raw_dim());
    for (dir, lc, cols, reverse) in [("fw", &h.fw, s![.., ..units], false), ("bw", &h.bw, s![.., units..], true)] {
        let b = p.vector(&format!("onset/lstm/{dir}/b"));
        let w = lstm_weights(p, dir, &b);
        let (dx, dwx, dwh, db) = lstm_backward(dout.slice(cols), feats, batch, time, &w, lc, reverse, true);
        dfeats += &dx.expect("requested");
        add_grad(&mut grads, format!("onset/lstm/{dir}/wx"), dwx.into_dyn());
        add_grad(&mut grads, format!("onset/lstm/{dir}/wh"), dwh.into_dyn());
        add_grad(&mut grads, format!("onset/lstm/{dir}/b"), db.into_dyn());
    }
    trunk_backward(model, 0, dfeats, &cache.trunks[0], g0, &mut grads);

    let (dv, dw, db) = dense_backward(dvel.view(), cache.trunks[1].out.view(), p.matrix("velocity/out/w"), true);
    add_grad(&mut grads, "velocity/out/w".into(), dw.into_dyn());
    add_grad(&mut grads, "velocity/out/b".into(), db.into_dyn());
    trunk_backward(model, 1, dv.expect("requested"), &cache.trunks[1], g0, &mut grads);
    grads
}

/// Convolutional receptive field half-width in frames.
const HALO: usize = 3;

/// Eval-mode prediction for a single `[frames, bins]` input with the trunk
/// evaluated in overlapping blocks.
pub(super) fn predict_blocked(model: &Model<f32>, spec: ArrayView2<f32>, block: usize) -> (Array2<f32>, Array2<f32>) {
    let (frames, bins) = spec.dim();
    let units = model.config.dense_units;
    let mut feats = [Array2::<f32>::zeros((frames, units)), Array2::<f32>::zeros((frames, units))];
    let mut start = 0;
    while start < frames {
        let end = (start + block).min(frames);
        let lo = start.saturating_sub(HALO);
        let hi = (end + HALO).min(frames);
        let part = spec.slice(s![lo..hi, ..]).as_standard_layout().into_owned();
        let g = Grid { batch: 1, time: hi - lo, freq: bins };
        let x = part.into_shape_with_order((g.rows(), 1)).expect("contiguous");
        let mut update = StateUpdate::default();
        for (si, f) in feats.iter_mut().enumerate() {
            let t = trunk(model, si, x.view(), g, Mode::Eval, false, &mut update);
            f.slice_mut(s![start..end, ..]).assign(&t.out.slice(s![start - lo..end - lo, ..]));
        }
        start = end;
    }
    let (logits, _) = onset_head(model, feats[0].view(), 1, frames, Mode::Eval, false);
    let vel = dense(feats[1].view(), model.params.matrix("velocity/out/w"), &model.params.vector("velocity/out/b"));
    (logits.mapv(layers::sigmoid), vel)
}
