//! Dense layers with explicit forward and backward passes.
//!
//! Every layer keeps its parameters in [`Param`]s that own a value and a
//! gradient accumulator. Forward passes are pure; backward passes take the
//! forward input (or a cache) and the upstream gradient, accumulate into the
//! parameter gradients and return the gradient with respect to the input.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

/// A trainable matrix and its gradient accumulator. Vectors are `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self::new(Array2::from_elem((rows, cols), v))
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        Self::new(Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-scale..scale)))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Visits every parameter in a fixed, declared order with a dotted name.
pub trait Parameters {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn add_row(y: &mut Array2<f64>, b: &Array2<f64>) {
    *y += &b.row(0);
}

fn accumulate_bias(grad: &mut Array2<f64>, dy: &Array2<f64>) {
    let mut g = grad.row_mut(0);
    g += &dy.sum_axis(Axis(0));
}

/// `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

impl Linear {
    pub fn new<R: Rng>(d_in: usize, d_out: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            w: Param::uniform(d_in, d_out, scale, rng),
            b: Param::uniform(1, d_out, scale, rng),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.value);
        add_row(&mut y, &self.b.value);
        y
    }

    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut self.w.grad);
        accumulate_bias(&mut self.b.grad, dy);
        dy.dot(&self.w.value.t())
    }
}

impl Parameters for Linear {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// 1D convolution over time with zero "same" padding. The kernel is stored as
/// `kernel * d_in` rows: rows `j*d_in..(j+1)*d_in` act on offset `j - kernel/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub kernel: usize,
    pub d_in: usize,
    pub w: Param,
    pub b: Param,
}

impl Conv1d {
    pub fn new<R: Rng>(kernel: usize, d_in: usize, d_out: usize, scale: f64, rng: &mut R) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Self {
            kernel,
            d_in,
            w: Param::uniform(kernel * d_in, d_out, scale, rng),
            b: Param::uniform(1, d_out, scale, rng),
        }
    }

    /// Row ranges `(output, input)` touched by tap `j` for a length-`t` input.
    fn tap_ranges(&self, j: usize, t: usize) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let off = j as isize - (self.kernel / 2) as isize;
        let t = t as isize;
        let out_lo = (-off).max(0);
        let out_hi = (t - off).min(t);
        (out_lo < out_hi).then(|| {
            (
                out_lo as usize..out_hi as usize,
                (out_lo + off) as usize..(out_hi + off) as usize,
            )
        })
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let t = x.nrows();
        let mut y = Array2::zeros((t, self.w.value.ncols()));
        add_row(&mut y, &self.b.value);
        for j in 0..self.kernel {
            if let Some((out, inp)) = self.tap_ranges(j, t) {
                let wj = self.w.value.slice(s![j * self.d_in..(j + 1) * self.d_in, ..]);
                let mut ys = y.slice_mut(s![out, ..]);
                general_mat_mul(1.0, &x.slice(s![inp, ..]), &wj, 1.0, &mut ys);
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let t = x.nrows();
        let mut dx = Array2::zeros(x.raw_dim());
        accumulate_bias(&mut self.b.grad, dy);
        for j in 0..self.kernel {
            if let Some((out, inp)) = self.tap_ranges(j, t) {
                let rows = s![j * self.d_in..(j + 1) * self.d_in, ..];
                let dys = dy.slice(s![out, ..]);
                {
                    let mut gw = self.w.grad.slice_mut(rows);
                    general_mat_mul(1.0, &x.slice(s![inp.clone(), ..]).t(), &dys, 1.0, &mut gw);
                }
                let wj = self.w.value.slice(rows);
                let mut dxs = dx.slice_mut(s![inp, ..]);
                general_mat_mul(1.0, &dys, &wj.t(), 1.0, &mut dxs);
            }
        }
        dx
    }
}

impl Parameters for Conv1d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row layer normalization with learned gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Param,
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Param::filled(1, dim, 1.0),
            bias: Param::zeros(1, dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let h = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, istd) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / h;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / h;
            *istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row *= *istd;
        }
        let mut y = &xhat * &self.gain.value.row(0);
        add_row(&mut y, &self.bias.value);
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Array2<f64>) -> Array2<f64> {
        let h = dy.ncols() as f64;
        {
            let mut gg = self.gain.grad.row_mut(0);
            gg += &(dy * &cache.xhat).sum_axis(Axis(0));
        }
        accumulate_bias(&mut self.bias.grad, dy);
        let dxhat = dy * &self.gain.value.row(0);
        let mut dx = Array2::zeros(dy.raw_dim());
        for (((mut out, g), xh), istd) in dx
            .rows_mut()
            .into_iter()
            .zip(dxhat.rows())
            .zip(cache.xhat.rows())
            .zip(cache.inv_std.iter())
        {
            let mean_g = g.sum() / h;
            let mean_gx = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / h;
            for ((o, gi), xi) in out.iter_mut().zip(g.iter()).zip(xh.iter()) {
                *o = istd * (gi - mean_g - xi * mean_gx);
            }
        }
        dx
    }
}

impl Parameters for LayerNorm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gain"), &mut self.gain);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Multi-head scaled dot-product self-attention over a `T x H` sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub n_heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
}

impl AttentionCache {
    /// Attention weights of each head, `T x T`, rows summing to one.
    pub fn probabilities(&self) -> &[Array2<f64>] {
        &self.probs
    }
}

pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(hidden: usize, n_heads: usize, scale: f64, rng: &mut R) -> Self {
        assert!(hidden.is_multiple_of(n_heads), "hidden size must divide into heads");
        Self {
            n_heads,
            query: Linear::new(hidden, hidden, scale, rng),
            key: Linear::new(hidden, hidden, scale, rng),
            value: Linear::new(hidden, hidden, scale, rng),
            output: Linear::new(hidden, hidden, scale, rng),
        }
    }

    fn head_dim(&self) -> usize {
        self.query.w.value.ncols() / self.n_heads
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, AttentionCache) {
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut context = Array2::zeros(q.raw_dim());
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t());
            scores *= scale;
            softmax_rows(&mut scores);
            context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let out = self.output.forward(&context);
        (out, AttentionCache { q, k, v, probs, context })
    }

    pub fn backward(&mut self, x: &Array2<f64>, cache: &AttentionCache, dy: &Array2<f64>) -> Array2<f64> {
        let dcontext = self.output.backward(&cache.context, dy);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, a) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dc = dcontext.slice(cols);
            dv.slice_mut(cols).assign(&a.t().dot(&dc));
            let da = dc.dot(&cache.v.slice(cols).t());
            let mut ds = &da * a;
            let row_dot = ds.sum_axis(Axis(1));
            for (mut row, (arow, rd)) in ds.rows_mut().into_iter().zip(a.rows().into_iter().zip(row_dot.iter())) {
                row.zip_mut_with(&arow, |d, &p| *d -= p * rd);
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let mut dx = self.query.backward(x, &dq);
        dx += &self.key.backward(x, &dk);
        dx += &self.value.backward(x, &dv);
        dx
    }
}

impl Parameters for MultiHeadAttention {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through a ReLU given its pre-activation.
pub fn relu_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |d, &p| {
        if p <= 0.0 {
            *d = 0.0
        }
    });
    dx
}

/// Sinusoidal features: `[sin(p w_0), cos(p w_0), sin(p w_1), ...]` with
/// `w_i = 10000^(-2i / dim)`.
pub fn sinusoid(position: f64, dim: usize) -> Array1<f64> {
    Array1::from_shape_fn(dim, |d| {
        let i = d / 2;
        let freq = 10000f64.powf(-((2 * i) as f64) / dim as f64);
        if d % 2 == 0 {
            (position * freq).sin()
        } else {
            (position * freq).cos()
        }
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub(crate) fn random(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || r.gen_range(-1.0..1.0))
    }

    /// Checks every analytic gradient of `model` against central differences
    /// of the scalar loss `sum(forward(x) * weights)`.
    pub(crate) fn check_params<M: Parameters + Clone>(
        model: &M,
        loss: impl Fn(&M) -> f64,
        analytic: impl Fn(&mut M),
    ) {
        let mut m = model.clone();
        m.zero_grad();
        analytic(&mut m);
        let mut grads: Vec<(String, Array2<f64>)> = Vec::new();
        m.visit("", &mut |name, p| grads.push((name.to_string(), p.grad.clone())));
        let step = 1e-5;
        for (idx, (name, g)) in grads.iter().enumerate() {
            for i in 0..g.len().min(12) {
                let eval = |delta: f64| {
                    let mut probe = model.clone();
                    let mut k = 0;
                    probe.visit("", &mut |_, p| {
                        if k == idx {
                            let flat = p.value.as_slice_mut().unwrap();
                            flat[i] += delta;
                        }
                        k += 1;
                    });
                    loss(&probe)
                };
                let numeric = (eval(step) - eval(-step)) / (2.0 * step);
                let a = g.as_slice().unwrap()[i];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "{name}[{i}]: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    pub(crate) fn check_input(
        x: &Array2<f64>,
        loss: impl Fn(&Array2<f64>) -> f64,
        dx: &Array2<f64>,
    ) {
        let step = 1e-5;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.as_slice_mut().unwrap()[i] += step;
            let mut m = x.clone();
            m.as_slice_mut().unwrap()[i] -= step;
            let numeric = (loss(&p) - loss(&m)) / (2.0 * step);
            let a = dx.as_slice().unwrap()[i];
            assert!((a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()), "x[{i}]: {a} vs {numeric}");
        }
    }

    fn weighted(y: &Array2<f64>, w: &Array2<f64>) -> f64 {
        (y * w).sum()
    }

    #[test]
    fn linear_gradients() {
        let mut r = rng(1);
        let layer = Linear::new(4, 3, 0.5, &mut r);
        let x = random(5, 4, &mut r);
        let w = random(5, 3, &mut r);
        check_params(&layer, |l| weighted(&l.forward(&x), &w), |l| {
            l.backward(&x, &w);
        });
        let dx = layer.clone().backward(&x, &w);
        check_input(&x, |x| weighted(&layer.forward(x), &w), &dx);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut r = rng(2);
        let conv = Conv1d::new(3, 2, 2, 0.5, &mut r);
        let x = random(4, 2, &mut r);
        let y = conv.forward(&x);
        for t in 0..4 {
            for o in 0..2 {
                let mut acc = conv.b.value[[0, o]];
                for j in 0..3 {
                    let src = t as isize + j as isize - 1;
                    if (0..4).contains(&src) {
                        for c in 0..2 {
                            acc += x[[src as usize, c]] * conv.w.value[[j * 2 + c, o]];
                        }
                    }
                }
                assert!((y[[t, o]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_gradients_including_short_inputs() {
        let mut r = rng(3);
        for (kernel, t) in [(3usize, 6usize), (9, 5), (9, 1), (1, 3)] {
            let conv = Conv1d::new(kernel, 3, 2, 0.5, &mut r);
            let x = random(t, 3, &mut r);
            let w = random(t, 2, &mut r);
            check_params(&conv, |c| weighted(&c.forward(&x), &w), |c| {
                c.backward(&x, &w);
            });
            let dx = conv.clone().backward(&x, &w);
            check_input(&x, |x| weighted(&conv.forward(x), &w), &dx);
        }
    }

    #[test]
    fn layer_norm_gradients() {
        let mut r = rng(4);
        let mut ln = LayerNorm::new(5);
        ln.gain = Param::uniform(1, 5, 1.0, &mut r);
        ln.bias = Param::uniform(1, 5, 1.0, &mut r);
        let x = random(3, 5, &mut r);
        let w = random(3, 5, &mut r);
        check_params(&ln, |l| weighted(&l.forward(&x).0, &w), |l| {
            let (_, c) = l.forward(&x);
            l.backward(&c, &w);
        });
        let (_, cache) = ln.forward(&x);
        let dx = ln.clone().backward(&cache, &w);
        check_input(&x, |x| weighted(&ln.forward(x).0, &w), &dx);
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let mut r = rng(5);
        let ln = LayerNorm::new(8);
        let (y, _) = ln.forward(&random(4, 8, &mut r));
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 8.0;
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn attention_gradients() {
        let mut r = rng(6);
        let att = MultiHeadAttention::new(4, 2, 0.7, &mut r);
        let x = random(5, 4, &mut r);
        let w = random(5, 4, &mut r);
        check_params(&att, |a| weighted(&a.forward(&x).0, &w), |a| {
            let (_, c) = a.forward(&x);
            a.backward(&x, &c, &w);
        });
        let (_, cache) = att.forward(&x);
        let dx = att.clone().backward(&x, &cache, &w);
        check_input(&x, |x| weighted(&att.forward(x).0, &w), &dx);
    }

    #[test]
    fn single_token_attention_is_value_projection() {
        let mut r = rng(7);
        let att = MultiHeadAttention::new(4, 2, 0.7, &mut r);
        let x = random(1, 4, &mut r);
        let (y, cache) = att.forward(&x);
        for p in cache.probabilities() {
            assert_eq!(p[[0, 0]], 1.0);
        }
        let expected = att.output.forward(&att.value.forward(&x));
        for (a, b) in y.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sinusoid_at_zero_alternates() {
        let v = sinusoid(0.0, 6);
        assert_eq!(v.to_vec(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }
}
