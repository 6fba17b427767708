//! Layer kernels with hand-written backward passes.
//!
//! Activations are row-major `[rows, channels]` matrices. Convolutional
//! activations use `rows = batch·time·freq` (NHWC flattened); per-frame
//! activations use `rows = batch·time`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Scalar;

/// Layout of a convolutional activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub batch: usize,
    pub time: usize,
    pub freq: usize,
}

impl Grid {
    pub fn rows(&self) -> usize {
        self.batch * self.time * self.freq
    }
}

pub(crate) fn cast<T: Scalar>(x: f64) -> T {
    T::from(x).expect("representable constant")
}

/// 3×3 neighbourhoods (zero padded) as rows of a `[rows, 9·c]` matrix.
/// Column order is `(dt, df, channel)`.
pub fn im2col<T: Scalar>(x: ArrayView2<T>, g: Grid) -> Array2<T> {
    let c = x.ncols();
    let k = 9 * c;
    let xs = x.as_slice().expect("contiguous activation");
    let mut cols = Array2::<T>::zeros((g.rows(), k));
    let out = cols.as_slice_mut().expect("fresh array");
    for b in 0..g.batch {
        for t in 0..g.time {
            for f in 0..g.freq {
                let row = ((b * g.time + t) * g.freq + f) * k;
                for dt in 0..3 {
                    let tt = t + dt;
                    if tt == 0 || tt > g.time {
                        continue;
                    }
                    for df in 0..3 {
                        let ff = f + df;
                        if ff == 0 || ff > g.freq {
                            continue;
                        }
                        let src = ((b * g.time + tt - 1) * g.freq + ff - 1) * c;
                        let dst = row + (dt * 3 + df) * c;
                        out[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add column gradients back onto the grid.
pub fn col2im<T: Scalar>(dcols: ArrayView2<T>, g: Grid, c: usize) -> Array2<T> {
    let k = 9 * c;
    let ds = dcols.as_slice().expect("contiguous gradient");
    let mut dx = Array2::<T>::zeros((g.rows(), c));
    let out = dx.as_slice_mut().expect("fresh array");
    for b in 0..g.batch {
        for t in 0..g.time {
            for f in 0..g.freq {
                let row = ((b * g.time + t) * g.freq + f) * k;
                for dt in 0..3 {
                    let tt = t + dt;
                    if tt == 0 || tt > g.time {
                        continue;
                    }
                    for df in 0..3 {
                        let ff = f + df;
                        if ff == 0 || ff > g.freq {
                            continue;
                        }
                        let dst = ((b * g.time + tt - 1) * g.freq + ff - 1) * c;
                        let src = row + (dt * 3 + df) * c;
                        for (o, &d) in out[dst..dst + c].iter_mut().zip(&ds[src..src + c]) {
                            *o += d;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Gradient w.r.t. the input of a 3×3 convolution with weights `w`
/// (`[9·cin, cout]`): a convolution of `dz` with the spatially flipped,
/// channel-transposed kernel.
pub fn conv_input_grad<T: Scalar>(dz: ArrayView2<T>, w: ArrayView2<T>, g: Grid, cin: usize) -> Array2<T> {
    let cout = w.ncols();
    let mut flipped = Array2::<T>::zeros((9 * cout, cin));
    for tap in 0..9 {
        let src = (8 - tap) * cin;
        for ci in 0..cin {
            for co in 0..cout {
                flipped[[tap * cout + co, ci]] = w[[src + ci, co]];
            }
        }
    }
    let cols = im2col(dz, g);
    matmul(cols.view(), flipped.view())
}

/// `a · b`
pub fn matmul<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    gemm_into(a, b, &mut out, false);
    out
}

/// `out += a · b`
pub fn matmul_acc<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>, out: &mut Array2<T>) {
    gemm_into(a, b, out, true);
}

fn gemm_into<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>, out: &mut Array2<T>, accumulate: bool) {
    let (m, k) = a.dim();
    let n = b.ncols();
    assert!(b.nrows() == k && out.dim() == (m, n), "matmul shapes {:?} · {:?} -> {:?}", a.dim(), b.dim(), out.dim());
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.fill(T::zero());
        }
        return;
    }
    let [ars, acs] = [a.strides()[0], a.strides()[1]];
    let [brs, bcs] = [b.strides()[0], b.strides()[1]];
    let [ors, ocs] = [out.strides()[0], out.strides()[1]];
    // SAFETY: the pointers and strides describe live ndarray views whose
    // shapes were checked above; `out` is borrowed mutably and cannot alias
    // `a` or `b`.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            out.as_mut_ptr(),
            ocs,
            ors,
            accumulate,
            a.as_ptr(),
            acs,
            ars,
            b.as_ptr(),
            bcs,
            brs,
            T::one(),
            T::one(),
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

/// Saved values for the batch-norm backward pass.
pub struct BnCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
}

/// Batch statistics produced by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnBatchStats<T> {
    pub mean: Array1<T>,
    pub var: Array1<T>,
}

fn f64_of<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Per-channel batch norm followed by ReLU, using batch statistics.
pub fn bn_relu_train<T: Scalar>(x: &Array2<T>, gamma: &Array1<T>, beta: &Array1<T>, eps: f64) -> (Array2<T>, BnCache<T>, BnBatchStats<T>) {
    let (rows, c) = x.dim();
    let n = rows as f64;
    let mut xhat = x.as_standard_layout().into_owned();
    // reductions run in f64 so f32 models do not lose the small differences
    let mut sum = vec![0.0f64; c];
    for row in xhat.as_slice().expect("standard layout").chunks_exact(c) {
        for (s, &v) in sum.iter_mut().zip(row) {
            *s += f64_of(v);
        }
    }
    let mean64: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut sq = vec![0.0f64; c];
    for row in xhat.as_slice().expect("standard layout").chunks_exact(c) {
        for ((s, &v), m) in sq.iter_mut().zip(row).zip(&mean64) {
            let d = f64_of(v) - m;
            *s += d * d;
        }
    }
    let mean: Array1<T> = mean64.iter().map(|&m| cast(m)).collect();
    let var: Array1<T> = sq.iter().map(|&s| cast(s / n)).collect();
    let inv_std = var.mapv(|v| T::one() / (v + cast(eps)).sqrt());
    let (m, is, g, b) = (mean.to_vec(), inv_std.to_vec(), gamma.to_vec(), beta.to_vec());
    let mut y = Array2::<T>::zeros((rows, c));
    let xs = xhat.as_slice_mut().expect("standard layout");
    for (xr, yr) in xs.chunks_exact_mut(c).zip(y.as_slice_mut().expect("fresh array").chunks_exact_mut(c)) {
        for j in 0..c {
            let xh = (xr[j] - m[j]) * is[j];
            xr[j] = xh;
            yr[j] = (g[j] * xh + b[j]).max(T::zero());
        }
    }
    (y, BnCache { xhat, inv_std }, BnBatchStats { mean, var })
}

/// Batch norm with fixed statistics followed by ReLU.
pub fn bn_relu_eval<T: Scalar>(
    x: &Array2<T>,
    gamma: &Array1<T>,
    beta: &Array1<T>,
    mean: &Array1<T>,
    var: &Array1<T>,
    eps: f64,
) -> Array2<T> {
    let scale: Array1<T> = Zip::from(gamma).and(var).map_collect(|&g, &v| g / (v + cast(eps)).sqrt());
    let shift: Array1<T> = Zip::from(beta).and(mean).and(&scale).map_collect(|&b, &m, &s| b - m * s);
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        Zip::from(&mut row).and(&scale).and(&shift).for_each(|v, &s, &b| *v = (*v * s + b).max(T::zero()));
    }
    y
}

/// Backward through ReLU and batch norm. `y` is the forward output.
/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_relu_backward<T: Scalar>(
    dy: &Array2<T>,
    y: &Array2<T>,
    cache: &BnCache<T>,
    gamma: &Array1<T>,
) -> (Array2<T>, Array1<T>, Array1<T>) {
    let (rows, c) = dy.dim();
    let mut dz = dy.as_standard_layout().into_owned();
    let y = y.as_standard_layout();
    let xhat = cache.xhat.as_slice().expect("standard layout");
    let mut dg64 = vec![0.0f64; c];
    let mut db64 = vec![0.0f64; c];
    let ds = dz.as_slice_mut().expect("standard layout");
    for ((dr, yr), xr) in ds.chunks_exact_mut(c).zip(y.as_slice().expect("standard layout").chunks_exact(c)).zip(xhat.chunks_exact(c)) {
        for j in 0..c {
            if yr[j] <= T::zero() {
                dr[j] = T::zero();
            }
            let d = f64_of(dr[j]);
            dg64[j] += d * f64_of(xr[j]);
            db64[j] += d;
        }
    }
    let dgamma: Array1<T> = dg64.iter().map(|&v| cast(v)).collect();
    let dbeta: Array1<T> = db64.iter().map(|&v| cast(v)).collect();
    // per-channel terms stay in f64: rounding them shifts every element of
    // a channel by the same amount, and the next weight gradient sums that
    // shift over all positions
    let n = rows as f64;
    let coef: Vec<f64> = gamma.iter().zip(&cache.inv_std).map(|(&g, &is)| f64_of(g) * f64_of(is) / n).collect();
    for (dr, xr) in ds.chunks_exact_mut(c).zip(xhat.chunks_exact(c)) {
        for j in 0..c {
            dr[j] = cast(coef[j] * (n * f64_of(dr[j]) - db64[j] - f64_of(xr[j]) * dg64[j]));
        }
    }
    (dz, dgamma, dbeta)
}

/// Max over adjacent frequency pairs; an odd last bin is dropped. Also
/// returns, per output element, whether the second input won.
pub fn maxpool_freq<T: Scalar>(x: &Array2<T>, g: Grid) -> (Array2<T>, Vec<bool>, Grid) {
    let c = x.ncols();
    let fo = g.freq / 2;
    let og = Grid { freq: fo, ..g };
    let xs = x.as_slice().expect("contiguous");
    let mut y = Array2::<T>::zeros((og.rows(), c));
    let mut second = vec![false; og.rows() * c];
    let ys = y.as_slice_mut().expect("fresh");
    for bt in 0..g.batch * g.time {
        for j in 0..fo {
            let a = (bt * g.freq + 2 * j) * c;
            let o = (bt * fo + j) * c;
            for i in 0..c {
                let (p, q) = (xs[a + i], xs[a + c + i]);
                if q > p {
                    ys[o + i] = q;
                    second[o + i] = true;
                } else {
                    ys[o + i] = p;
                }
            }
        }
    }
    (y, second, og)
}

pub fn maxpool_freq_backward<T: Scalar>(dy: &Array2<T>, second: &[bool], g: Grid) -> Array2<T> {
    let c = dy.ncols();
    let fo = g.freq / 2;
    let ds = dy.as_slice().expect("contiguous");
    let mut dx = Array2::<T>::zeros((g.rows(), c));
    let xs = dx.as_slice_mut().expect("fresh");
    for bt in 0..g.batch * g.time {
        for j in 0..fo {
            let a = (bt * g.freq + 2 * j) * c;
            let o = (bt * fo + j) * c;
            for i in 0..c {
                let at = if second[o + i] { a + c + i } else { a + i };
                xs[at] = ds[o + i];
            }
        }
    }
    dx
}

/// Inverted-dropout mask: `0` or `1/keep` per element.
pub fn dropout_mask<T: Scalar>(shape: (usize, usize), keep: f64, rng: &mut ChaCha8Rng) -> Array2<T> {
    let scale = cast::<T>(1.0 / keep);
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < keep { scale } else { T::zero() })
}

/// `x · w + b`
pub fn dense<T: Scalar>(x: ArrayView2<T>, w: ArrayView2<T>, b: &Array1<T>) -> Array2<T> {
    let mut y = matmul(x, w);
    for mut row in y.rows_mut() {
        row += b;
    }
    y
}

/// Returns `(dx, dw, db)`; `dx` is skipped when `need_dx` is false.
pub fn dense_backward<T: Scalar>(
    dy: ArrayView2<T>,
    x: ArrayView2<T>,
    w: ArrayView2<T>,
    need_dx: bool,
) -> (Option<Array2<T>>, Array2<T>, Array1<T>) {
    let dw = matmul(x.t(), dy);
    let db = dy.sum_axis(Axis(0));
    let dx = need_dx.then(|| matmul(dy, w.t()));
    (dx, dw, db)
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Weights of one LSTM direction. Gate order in the `4·h` axis is
/// input, forget, cell, output.
pub struct LstmWeights<'a, T> {
    pub wx: ArrayView2<'a, T>,
    pub wh: ArrayView2<'a, T>,
    pub b: &'a Array1<T>,
}

/// Per-step activations of one direction, indexed by processing order.
pub struct LstmCache<T> {
    /// `[steps, batch, 4h]` post-activation gates.
    gates: Vec<Array2<T>>,
    cells: Vec<Array2<T>>,
    hidden: Vec<Array2<T>>,
}

/// Run one LSTM direction over `x` (`[batch·time, d]`, time-major within
/// each batch item). Output rows follow the same layout.
pub fn lstm_forward<T: Scalar>(
    x: ArrayView2<T>,
    batch: usize,
    time: usize,
    wts: &LstmWeights<T>,
    reverse: bool,
) -> (Array2<T>, LstmCache<T>) {
    let h = wts.wh.nrows();
    let xw = dense(x, wts.wx, wts.b);
    let mut out = Array2::<T>::zeros((batch * time, h));
    let mut hprev = Array2::<T>::zeros((batch, h));
    let mut cprev = Array2::<T>::zeros((batch, h));
    let mut cache = LstmCache { gates: Vec::with_capacity(time), cells: Vec::with_capacity(time), hidden: Vec::with_capacity(time) };
    for step in 0..time {
        let t = if reverse { time - 1 - step } else { step };
        let mut gates = xw.slice(s![t..;time, ..]).to_owned();
        matmul_acc(hprev.view(), wts.wh, &mut gates);
        let mut c = Array2::<T>::zeros((batch, h));
        let mut hn = Array2::<T>::zeros((batch, h));
        for b in 0..batch {
            let mut gr = gates.row_mut(b);
            let gs = gr.as_slice_mut().expect("contiguous");
            for j in 0..h {
                gs[j] = sigmoid(gs[j]);
                gs[h + j] = sigmoid(gs[h + j]);
                gs[2 * h + j] = gs[2 * h + j].tanh();
                gs[3 * h + j] = sigmoid(gs[3 * h + j]);
                let cv = gs[h + j] * cprev[[b, j]] + gs[j] * gs[2 * h + j];
                c[[b, j]] = cv;
                hn[[b, j]] = gs[3 * h + j] * cv.tanh();
            }
            out.row_mut(b * time + t).assign(&hn.row(b));
        }
        cache.gates.push(gates);
        cache.cells.push(c.clone());
        cache.hidden.push(hn.clone());
        hprev = hn;
        cprev = c;
    }
    (out, cache)
}

/// Gradients of one LSTM direction: `(dx, dwx, dwh, db)`.
#[allow(clippy::too_many_arguments)]
pub fn lstm_backward<T: Scalar>(
    dout: ArrayView2<T>,
    x: ArrayView2<T>,
    batch: usize,
    time: usize,
    wts: &LstmWeights<T>,
    cache: &LstmCache<T>,
    reverse: bool,
    need_dx: bool,
) -> (Option<Array2<T>>, Array2<T>, Array2<T>, Array1<T>) {
    let h = wts.wh.nrows();
    let mut dxw = Array2::<T>::zeros((batch * time, 4 * h));
    let mut dwh = Array2::<T>::zeros((h, 4 * h));
    let mut dh_next = Array2::<T>::zeros((batch, h));
    let mut dc_next = Array2::<T>::zeros((batch, h));
    let zeros = Array2::<T>::zeros((batch, h));
    for step in (0..time).rev() {
        let t = if reverse { time - 1 - step } else { step };
        let gates = &cache.gates[step];
        let c = &cache.cells[step];
        let (cprev, hprev) = if step == 0 { (&zeros, &zeros) } else { (&cache.cells[step - 1], &cache.hidden[step - 1]) };
        let mut dg = Array2::<T>::zeros((batch, 4 * h));
        for b in 0..batch {
            let gs = gates.row(b);
            let row = b * time + t;
            for j in 0..h {
                let (i, f, g, o) = (gs[j], gs[h + j], gs[2 * h + j], gs[3 * h + j]);
                let tc = c[[b, j]].tanh();
                let dh = dout[[row, j]] + dh_next[[b, j]];
                let do_ = dh * tc;
                let dc = dh * o * (T::one() - tc * tc) + dc_next[[b, j]];
                dc_next[[b, j]] = dc * f;
                dg[[b, j]] = dc * g * i * (T::one() - i);
                dg[[b, h + j]] = dc * cprev[[b, j]] * f * (T::one() - f);
                dg[[b, 2 * h + j]] = dc * i * (T::one() - g * g);
                dg[[b, 3 * h + j]] = do_ * o * (T::one() - o);
            }
            dxw.row_mut(row).assign(&dg.row(b));
        }
        if step > 0 {
            matmul_acc(hprev.t(), dg.view(), &mut dwh);
        }
        dh_next = matmul(dg.view(), wts.wh.t());
    }
    let (dx, dwx, db) = dense_backward(dxw.view(), x, wts.wx, need_dx);
    (dx, dwx, dwh, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_gradient_matches_col2im() {
        let g = Grid { batch: 2, time: 4, freq: 5 };
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let mut r = |n: usize, m: usize| Array2::<f64>::from_shape_simple_fn((n, m), || rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let dz = r(g.rows(), 4);
        let w = r(27, 4);
        let want = col2im(matmul(dz.view(), w.t()).view(), g, 3);
        let got = conv_input_grad(dz.view(), w.view(), g, 3);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    use ndarray::array;

    #[test]
    fn im2col_centre_column_is_identity() {
        let g = Grid { batch: 1, time: 2, freq: 3 };
        let x = Array2::from_shape_fn((6, 2), |(r, c)| (r * 2 + c) as f64);
        let cols = im2col(x.view(), g);
        assert_eq!(cols.slice(s![.., 8..10]), x);
        // top-left neighbour of the first cell is padding
        assert_eq!(cols.row(0)[0], 0.0);
        // the cell below-right of (0, 0) is (1, 1) = row 4
        assert_eq!(cols.slice(s![0, 16..18]), x.row(4));
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        let g = Grid { batch: 2, time: 3, freq: 4 };
        let x = Array2::from_shape_fn((g.rows(), 3), |(r, c)| ((r * 7 + c * 3) % 11) as f64 - 5.0);
        let y = Array2::from_shape_fn((g.rows(), 27), |(r, c)| ((r * 5 + c) % 13) as f64 - 6.0);
        let lhs = (&im2col(x.view(), g) * &y).sum();
        let rhs = (&x * &col2im(y.view(), g, 3)).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn maxpool_drops_odd_bin_and_routes_gradient() {
        let g = Grid { batch: 1, time: 1, freq: 5 };
        let x = array![[1.0], [3.0], [4.0], [2.0], [9.0]];
        let (y, second, og) = maxpool_freq(&x, g);
        assert_eq!(og.freq, 2);
        assert_eq!(y, array![[3.0], [4.0]]);
        let dx = maxpool_freq_backward(&array![[1.0], [2.0]], &second, g);
        assert_eq!(dx, array![[0.0], [1.0], [2.0], [0.0], [0.0]]);
    }

    #[test]
    fn eval_bn_matches_train_bn_with_batch_stats() {
        let x = Array2::from_shape_fn((10, 2), |(r, c)| (r as f64 * 0.3 - c as f64).sin());
        let gamma = array![1.5, 0.5];
        let beta = array![0.1, -0.2];
        let (y, _, stats) = bn_relu_train(&x, &gamma, &beta, 1e-3);
        let ye = bn_relu_eval(&x, &gamma, &beta, &stats.mean, &stats.var, 1e-3);
        for (a, b) in y.iter().zip(ye.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-1000.0f64) >= 0.0);
        assert_eq!(sigmoid(1000.0f32), 1.0);
    }
}
