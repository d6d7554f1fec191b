//! Fully connected classifier: rectifier hidden layers, softmax output,
//! cross-entropy loss and minibatch SGD.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Rows scored per pass in `predict_batch`.
const PREDICT_BLOCK: usize = 256;

/// Row/column strides of a matrix held in a flat slice.
#[derive(Clone, Copy)]
struct Layout {
    rs: usize,
    cs: usize,
}

const fn row_major(cols: usize) -> Layout {
    Layout { rs: cols, cs: 1 }
}

const fn col_major(rows: usize) -> Layout {
    Layout { rs: 1, cs: rows }
}

/// `c = beta * c + a * b` with `a` m x k, `b` k x n and `c` row-major m x n.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], la: Layout, b: &[f64], lb: Layout, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, l: Layout| (rows - 1) * l.rs + (cols - 1) * l.cs;
    assert!(c.len() >= m * n);
    if k > 0 {
        assert!(last(m, k, la) < a.len() && last(k, n, lb) < b.len());
    }
    // SAFETY: every element addressed through the strides lies inside the
    // slices, checked above; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Weights are stored input-major: `w[i * n_out + j]` connects input `i` to
/// output `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    /// Pre-activations for `rows` row-major inputs.
    fn forward_into(&self, x: &[f64], rows: usize, z: &mut Vec<f64>) {
        z.clear();
        for _ in 0..rows {
            z.extend_from_slice(&self.b);
        }
        gemm(rows, self.n_in, self.n_out, x, row_major(self.n_in), &self.w, row_major(self.n_out), 1.0, z);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Numerically stable softmax in place.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl Mlp {
    /// All-zero network with the given layer sizes (input first).
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|s| *s == 0) {
            return Err(Error::InvalidParameter(format!(
                "MLP needs at least two non-zero layer sizes, got {sizes:?}"
            )));
        }
        Ok(Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    /// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
            for w in &mut layer.w {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").n_out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    fn check_input(&self, x: &[f64]) -> Result<usize> {
        let dim = self.input_dim();
        if x.is_empty() || x.len() % dim != 0 {
            return Err(Error::Dimension {
                expected: dim,
                got: x.len(),
            });
        }
        Ok(x.len() / dim)
    }

    /// Post-activation outputs of every layer for `rows` inputs; the last
    /// entry holds softmax probabilities.
    fn activations(&self, x: &[f64], rows: usize, acts: &mut Vec<Vec<f64>>) {
        acts.resize_with(self.layers.len(), Vec::new);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (done, rest) = acts.split_at_mut(k);
            let input = if k == 0 { x } else { &done[k - 1] };
            let out = &mut rest[0];
            layer.forward_into(input, rows, out);
            if k == last {
                for row in out.chunks_exact_mut(layer.n_out) {
                    softmax_in_place(row);
                }
            } else {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
    }

    /// Class probabilities for one input row.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut acts = Vec::new();
        self.activations(x, 1, &mut acts);
        Ok(acts.pop().expect("output layer"))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(crate::radio::argmax_first(&self.forward(x)?))
    }

    /// `predict` for many row-major inputs.
    pub fn predict_batch(&self, x: &[f64]) -> Result<Vec<usize>> {
        let rows = self.check_input(x)?;
        let dim = self.input_dim();
        let mut out = Vec::with_capacity(rows);
        let mut acts = Vec::new();
        for block in x.chunks(PREDICT_BLOCK * dim) {
            self.activations(block, block.len() / dim, &mut acts);
            let probs = acts.last().expect("output layer");
            out.extend(probs.chunks_exact(self.output_dim()).map(crate::radio::argmax_first));
        }
        Ok(out)
    }

    /// Summed cross-entropy over a batch, accumulating its gradient into `grad`.
    fn backprop(&self, x: &[f64], labels: &[usize], ws: &mut Workspace, grad: &mut Mlp) -> f64 {
        let rows = labels.len();
        self.activations(x, rows, &mut ws.acts);
        let n_cls = self.output_dim();
        let probs = ws.acts.last().expect("output");
        let mut loss = 0.0;
        ws.delta.clear();
        ws.delta.extend_from_slice(probs);
        for (r, &label) in labels.iter().enumerate() {
            loss -= probs[r * n_cls + label].max(f64::MIN_POSITIVE).ln();
            ws.delta[r * n_cls + label] -= 1.0;
        }

        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input: &[f64] = if k == 0 { x } else { &ws.acts[k - 1] };
            let g = &mut grad.layers[k];
            for row in ws.delta.chunks_exact(layer.n_out) {
                for (gb, d) in g.b.iter_mut().zip(row) {
                    *gb += d;
                }
            }
            gemm(
                layer.n_in,
                rows,
                layer.n_out,
                input,
                col_major(layer.n_in),
                &ws.delta,
                row_major(layer.n_out),
                1.0,
                &mut g.w,
            );
            if k > 0 {
                ws.next.clear();
                ws.next.resize(rows * layer.n_in, 0.0);
                gemm(
                    rows,
                    layer.n_out,
                    layer.n_in,
                    &ws.delta,
                    row_major(layer.n_out),
                    &layer.w,
                    col_major(layer.n_out),
                    0.0,
                    &mut ws.next,
                );
                // Rectifier derivative: only units with positive output pass gradient.
                for (d, a) in ws.next.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                std::mem::swap(&mut ws.delta, &mut ws.next);
            }
        }
        loss
    }

    /// Loss and full gradient for a single labelled sample.
    pub fn loss_and_gradient(&self, x: &[f64], label: usize) -> Result<(f64, Mlp)> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if label >= self.output_dim() {
            return Err(Error::InvalidParameter(format!("label {label} out of range")));
        }
        let mut grad = Mlp::zeros(&self.sizes())?;
        let mut ws = Workspace::default();
        let loss = self.backprop(x, &[label], &mut ws, &mut grad);
        Ok((loss, grad))
    }

    pub fn loss(&self, x: &[f64], label: usize) -> Result<f64> {
        let p = self.forward(x)?;
        Ok(-p[label].max(f64::MIN_POSITIVE).ln())
    }

    /// Flat view over every parameter, layer by layer (weights then biases).
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    fn apply_step(&mut self, grad: &mut Mlp, scale: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grad.layers.iter_mut()) {
            for (w, gw) in layer.w.iter_mut().zip(g.w.iter_mut()) {
                *w -= scale * *gw;
                *gw = 0.0;
            }
            for (b, gb) in layer.b.iter_mut().zip(g.b.iter_mut()) {
                *b -= scale * *gb;
                *gb = 0.0;
            }
        }
    }
}

#[derive(Default)]
struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Mlp,
    /// Mean training cross-entropy per epoch.
    pub loss_trace: Vec<f64>,
}

/// Minibatch SGD on cross-entropy. `features` is row-major, one row of
/// `net.input_dim()` values per label.
pub fn mlp_train(mut net: Mlp, features: &[f64], labels: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let dim = net.input_dim();
    if labels.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    if features.len() != labels.len() * dim {
        return Err(Error::Dimension {
            expected: labels.len() * dim,
            got: features.len(),
        });
    }
    if let Some(bad) = labels.iter().find(|l| **l >= net.output_dim()) {
        return Err(Error::InvalidParameter(format!("label {bad} out of range")));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut grad = Mlp::zeros(&net.sizes())?;
    let mut ws = Workspace::default();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut xb = Vec::with_capacity(cfg.batch * dim);
    let mut lb = Vec::with_capacity(cfg.batch);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch) {
            xb.clear();
            lb.clear();
            for &i in batch {
                xb.extend_from_slice(&features[i * dim..(i + 1) * dim]);
                lb.push(labels[i]);
            }
            total += net.backprop(&xb, &lb, &mut ws, &mut grad);
            net.apply_step(&mut grad, cfg.lr / batch.len() as f64);
        }
        let mean = total / labels.len() as f64;
        if !mean.is_finite() || net.params().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        trace.push(mean);
    }
    Ok(TrainOutcome {
        net,
        loss_trace: trace,
    })
}
