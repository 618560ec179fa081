//! Minimal neural engine: dense layers, an LSTM cell with exact
//! backpropagation through time, Adam, and the MSE loss. Everything runs in
//! double precision and is deterministic given the seed; gradients are
//! verified against central finite differences in the test suite.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use thiserror::Error;

pub mod checkpoint;
pub mod gradcheck;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("non-finite gradient passed to the optimizer")]
    NonFiniteGradient,
    #[error("optimizer state sized for {expected} parameters, got {actual}")]
    ParamCountMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's own output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

// --- dense ---------------------------------------------------------------

/// Fully connected layer, weights out x in.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

/// Forward cache: the layer input and post-activation output.
pub struct DenseCache {
    x: Array2<f64>,
    y: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn new(input: usize, output: usize, act: Activation, rng: &mut impl Rng) -> Self {
        Self {
            w: uniform_init(output, input, input, rng),
            b: Array1::zeros(output),
            act,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    /// Batched evaluation: rows of `x` are samples.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, DenseCache) {
        assert_eq!(
            x.ncols(),
            self.input_dim(),
            "dense input width {} != layer input {}",
            x.ncols(),
            self.input_dim()
        );
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        y.mapv_inplace(|v| self.act.apply(v));
        let cache = DenseCache { x: x.clone(), y: y.clone() };
        (y, cache)
    }

    /// Reverse step: upstream dL/dy -> (dL/dx, parameter gradients).
    pub fn backward(&self, cache: &DenseCache, dy: &Array2<f64>) -> (Array2<f64>, DenseGrad) {
        assert_eq!(dy.dim(), cache.y.dim(), "upstream gradient shape mismatch");
        let mut dz = dy.clone();
        dz.zip_mut_with(&cache.y, |d, &y| *d *= self.act.grad_from_output(y));
        // dot() on a transposed view can yield f-order output; grads must
        // stay standard-layout for the flat optimizer views
        let dw = dz.t().dot(&cache.x).as_standard_layout().into_owned();
        let db = dz.sum_axis(Axis(0));
        let dx = dz.dot(&self.w);
        (dx, DenseGrad { w: dw, b: db })
    }

    pub fn zero_grad(&self) -> DenseGrad {
        DenseGrad {
            w: Array2::zeros(self.w.dim()),
            b: Array1::zeros(self.b.len()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }
}

impl DenseGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }

    pub fn accum(&mut self, other: &DenseGrad) {
        self.w += &other.w;
        self.b += &other.b;
    }
}

// --- multi-layer perceptron ------------------------------------------------

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

pub struct MlpCache {
    layers: Vec<DenseCache>,
}

#[derive(Debug, Clone)]
pub struct MlpGrad {
    pub layers: Vec<DenseGrad>,
}

impl Mlp {
    /// `dims` = [input, hidden..., output]; hidden layers get
    /// `hidden_act`, the final layer `output_act`.
    pub fn new(
        dims: &[usize],
        hidden_act: Activation,
        output_act: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() { output_act } else { hidden_act };
                Dense::new(w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(&cur);
            caches.push(c);
            cur = y;
        }
        (cur, MlpCache { layers: caches })
    }

    /// Forward without keeping caches.
    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, _) = layer.forward(&cur);
            cur = y;
        }
        cur
    }

    pub fn backward(&self, cache: &MlpCache, dy: &Array2<f64>) -> (Array2<f64>, MlpGrad) {
        let mut grads: Vec<DenseGrad> = self.layers.iter().map(|l| l.zero_grad()).collect();
        let mut d = dy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dx, g) = layer.backward(&cache.layers[i], &d);
            grads[i] = g;
            d = dx;
        }
        (d, MlpGrad { layers: grads })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Dense::param_slices).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Dense::param_slices_mut).collect()
    }
}

impl MlpGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(DenseGrad::slices).collect()
    }
}

// --- LSTM cell --------------------------------------------------------------

/// Single LSTM cell. The four gate affine maps are fused into one weight
/// matrix of shape (4 * state) x (input + state), gate order
/// input / forget / cell-candidate / output; the candidate path uses tanh,
/// the gates sigmoid. Forget-gate bias starts at +1.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub input_dim: usize,
    pub state_dim: usize,
}

/// Cache of one time step, enough for the exact reverse pass.
pub struct LstmStep {
    xh: Array2<f64>,
    gate_i: Array2<f64>,
    gate_f: Array2<f64>,
    gate_g: Array2<f64>,
    gate_o: Array2<f64>,
    c_prev: Array2<f64>,
    pub c: Array2<f64>,
    tanh_c: Array2<f64>,
    pub h: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmCell {
    pub fn new(input_dim: usize, state_dim: usize, rng: &mut impl Rng) -> Self {
        let w = uniform_init(4 * state_dim, input_dim + state_dim, input_dim + state_dim, rng);
        let mut b = Array1::zeros(4 * state_dim);
        b.slice_mut(s![state_dim..2 * state_dim]).fill(1.0);
        Self { w, b, input_dim, state_dim }
    }

    pub fn zero_state(&self, batch: usize) -> (Array2<f64>, Array2<f64>) {
        (
            Array2::zeros((batch, self.state_dim)),
            Array2::zeros((batch, self.state_dim)),
        )
    }

    /// One time step over a batch.
    pub fn step(&self, x: &Array2<f64>, h_prev: &Array2<f64>, c_prev: &Array2<f64>) -> LstmStep {
        let n = x.nrows();
        assert_eq!(x.ncols(), self.input_dim, "LSTM input width mismatch");
        assert_eq!(h_prev.dim(), (n, self.state_dim));
        assert_eq!(c_prev.dim(), (n, self.state_dim));

        let mut xh = Array2::zeros((n, self.input_dim + self.state_dim));
        xh.slice_mut(s![.., ..self.input_dim]).assign(x);
        xh.slice_mut(s![.., self.input_dim..]).assign(h_prev);

        let mut z = xh.dot(&self.w.t());
        z += &self.b;
        let d = self.state_dim;
        let gate_i = z.slice(s![.., 0..d]).mapv(sigmoid);
        let gate_f = z.slice(s![.., d..2 * d]).mapv(sigmoid);
        let gate_g = z.slice(s![.., 2 * d..3 * d]).mapv(f64::tanh);
        let gate_o = z.slice(s![.., 3 * d..4 * d]).mapv(sigmoid);

        let c = &gate_f * c_prev + &gate_i * &gate_g;
        let tanh_c = c.mapv(f64::tanh);
        let h = &gate_o * &tanh_c;

        LstmStep {
            xh,
            gate_i,
            gate_f,
            gate_g,
            gate_o,
            c_prev: c_prev.clone(),
            c,
            tanh_c,
            h,
        }
    }

    /// Reverse pass of one step. `dh`/`dc` are the upstream gradients on
    /// this step's output and state; parameter gradients accumulate into
    /// `grad`. Returns (dx, dh_prev, dc_prev).
    pub fn backward_step(
        &self,
        step: &LstmStep,
        dh: &Array2<f64>,
        dc: &Array2<f64>,
        grad: &mut LstmGrad,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let d = self.state_dim;
        let n = step.h.nrows();

        let d_o = dh * &step.tanh_c;
        let mut dc_tot = dh * &step.gate_o;
        dc_tot.zip_mut_with(&step.tanh_c, |v, &t| *v *= 1.0 - t * t);
        dc_tot += dc;

        let d_i = &dc_tot * &step.gate_g;
        let d_f = &dc_tot * &step.c_prev;
        let d_g = &dc_tot * &step.gate_i;
        let dc_prev = &dc_tot * &step.gate_f;

        let mut dz = Array2::zeros((n, 4 * d));
        {
            let mut zi = dz.slice_mut(s![.., 0..d]);
            zi.assign(&d_i);
            zi.zip_mut_with(&step.gate_i, |v, &g| *v *= g * (1.0 - g));
        }
        {
            let mut zf = dz.slice_mut(s![.., d..2 * d]);
            zf.assign(&d_f);
            zf.zip_mut_with(&step.gate_f, |v, &g| *v *= g * (1.0 - g));
        }
        {
            let mut zg = dz.slice_mut(s![.., 2 * d..3 * d]);
            zg.assign(&d_g);
            zg.zip_mut_with(&step.gate_g, |v, &g| *v *= 1.0 - g * g);
        }
        {
            let mut zo = dz.slice_mut(s![.., 3 * d..4 * d]);
            zo.assign(&d_o);
            zo.zip_mut_with(&step.gate_o, |v, &g| *v *= g * (1.0 - g));
        }

        grad.w += &dz.t().dot(&step.xh);
        grad.b += &dz.sum_axis(Axis(0));
        let dxh = dz.dot(&self.w);
        let dx = dxh.slice(s![.., ..self.input_dim]).to_owned();
        let dh_prev = dxh.slice(s![.., self.input_dim..]).to_owned();
        (dx, dh_prev, dc_prev)
    }

    pub fn zero_grad(&self) -> LstmGrad {
        LstmGrad {
            w: Array2::zeros(self.w.dim()),
            b: Array1::zeros(self.b.len()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }
}

impl LstmGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }
}

// --- loss --------------------------------------------------------------------

/// Mean of squared differences over every element.
pub fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    assert_eq!(pred.dim(), target.dim(), "mse shape mismatch");
    let n = pred.len() as f64;
    pred.iter()
        .zip(target.iter())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

/// Gradient of [`mse`] with respect to the prediction: 2 (pred - target) / N.
pub fn mse_grad(pred: &Array2<f64>, target: &Array2<f64>) -> Array2<f64> {
    assert_eq!(pred.dim(), target.dim(), "mse shape mismatch");
    let n = pred.len() as f64;
    let mut g = pred - target;
    g.mapv_inplace(|v| 2.0 * v / n);
    g
}

// --- Adam ----------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

/// Adam optimizer state over a fixed flat parameter layout.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, param_count: usize) -> Self {
        Self {
            cfg,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `params` and `grads` must flatten to the layout the
    /// state was created for; non-finite gradients are rejected.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), NnError> {
        let total: usize = grads.iter().map(|g| g.len()).sum();
        if total != self.m.len() {
            return Err(NnError::ParamCountMismatch { expected: self.m.len(), actual: total });
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(NnError::NonFiniteGradient);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        let mut k = 0usize;
        for (pslice, gslice) in params.iter_mut().zip(grads) {
            assert_eq!(pslice.len(), gslice.len(), "param/grad slice mismatch");
            for (p, &g) in pslice.iter_mut().zip(gslice.iter()) {
                self.m[k] = self.cfg.beta1 * self.m[k] + (1.0 - self.cfg.beta1) * g;
                self.v[k] = self.cfg.beta2 * self.v[k] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = self.m[k] / c1;
                let v_hat = self.v[k] / c2;
                *p -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
                k += 1;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn identity_linear_dense_is_identity() {
        let mut d = Dense::new(3, 3, Activation::Linear, &mut rng());
        d.w = Array2::eye(3);
        d.b.fill(0.0);
        let x = arr2(&[[1.0, -2.0, 0.5], [0.0, 3.0, 4.0]]);
        let (y, _) = d.forward(&x);
        assert_eq!(y, x);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        assert_eq!(sigmoid(0.0), 0.5);
        let mut d = Dense::new(2, 2, Activation::Sigmoid, &mut rng());
        d.w.fill(0.0);
        d.b.fill(0.0);
        let (y, _) = d.forward(&arr2(&[[7.0, -3.0]]));
        assert!(y.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_weight_lstm_stays_at_zero() {
        let mut cell = LstmCell::new(4, 3, &mut rng());
        cell.w.fill(0.0);
        cell.b.fill(0.0);
        let (mut h, mut c) = cell.zero_state(2);
        for _ in 0..5 {
            let x = arr2(&[[1.0, 2.0, 3.0, 4.0], [-1.0, 0.0, 1.0, 2.0]]);
            let st = cell.step(&x, &h, &c);
            h = st.h.clone();
            c = st.c.clone();
        }
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_output_is_bounded_by_one() {
        let cell = LstmCell::new(2, 5, &mut rng());
        let (mut h, mut c) = cell.zero_state(3);
        let mut state = 9u64;
        for _ in 0..50 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let v = (state >> 40) as f64 / 1e7 - 0.5;
            let x = Array2::from_elem((3, 2), v * 10.0);
            let st = cell.step(&x, &h, &c);
            h = st.h;
            c = st.c;
            assert!(h.iter().all(|&y| y.abs() <= 1.0));
        }
    }

    #[test]
    fn linear_net_mse_gradient_matches_closed_form() {
        // one linear layer, MSE: dL/dW = 2 (y_hat - y) x^T / n
        let mut d = Dense::new(2, 1, Activation::Linear, &mut rng());
        d.w = arr2(&[[0.5, -1.0]]);
        d.b.fill(0.25);
        let x = arr2(&[[1.0, 2.0], [3.0, -1.0]]);
        let target = arr2(&[[0.0], [1.0]]);
        let (y, cache) = d.forward(&x);
        let dy = mse_grad(&y, &target);
        let (_, g) = d.backward(&cache, &dy);
        let n = 2.0;
        let e0 = y[[0, 0]] - target[[0, 0]];
        let e1 = y[[1, 0]] - target[[1, 0]];
        let expect_w = [
            2.0 / n * (e0 * x[[0, 0]] + e1 * x[[1, 0]]),
            2.0 / n * (e0 * x[[0, 1]] + e1 * x[[1, 1]]),
        ];
        assert!((g.w[[0, 0]] - expect_w[0]).abs() < 1e-12);
        assert!((g.w[[0, 1]] - expect_w[1]).abs() < 1e-12);
        assert!((g.b[0] - 2.0 / n * (e0 + e1)).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mlp = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Linear, &mut rng());
        let x = arr2(&[[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]]);
        let (y, cache) = mlp.forward(&x);
        let dy = Array2::zeros(y.dim());
        let (_, g) = mlp.backward(&cache, &dy);
        for s in g.slices() {
            assert!(s.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mse_basics() {
        let a = arr2(&[[0.0]]);
        let b = arr2(&[[2.0]]);
        assert_eq!(mse(&a, &a), 0.0);
        assert_eq!(mse(&a, &b), 4.0);
        assert_eq!(mse_grad(&a, &b)[[0, 0]], -4.0);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut d = Dense::new(2, 2, Activation::Linear, &mut rng());
        let before = d.w.clone();
        let g = d.zero_grad();
        let mut adam = Adam::new(AdamConfig::default(), d.param_count());
        adam.step(&mut d.param_slices_mut(), &g.slices()).unwrap();
        assert_eq!(d.w, before);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        // with constant gradient g, the bias-corrected first step is
        // -lr * g / (|g| + eps), essentially -lr * sign(g)
        let cfg = AdamConfig::with_lr(0.01);
        let mut params = vec![1.0f64, -2.0, 0.5];
        let grads = vec![3.0f64, -0.7, 0.0001];
        let mut adam = Adam::new(cfg, 3);
        let mut pv: Vec<&mut [f64]> = vec![params.as_mut_slice()];
        adam.step(&mut pv, &[&grads]).unwrap();
        assert!((params[0] - (1.0 - 0.01 * (3.0 / (3.0 + 1e-8)))).abs() < 1e-12);
        assert!((params[1] - (-2.0 + 0.01 * (0.7 / (0.7 + 1e-8)))).abs() < 1e-12);
        assert!((params[2] - (0.5 - 0.01 * (0.0001 / (0.0001 + 1e-8)))).abs() < 1e-9);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = vec![0.3f64, -0.1];
            let mut adam = Adam::new(AdamConfig::default(), 2);
            for i in 0..10 {
                let g = vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()];
                let mut pv: Vec<&mut [f64]> = vec![p.as_mut_slice()];
                adam.step(&mut pv, &[&g]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut p = vec![0.0f64];
        let mut adam = Adam::new(AdamConfig::default(), 1);
        let g = vec![f64::NAN];
        let mut pv: Vec<&mut [f64]> = vec![p.as_mut_slice()];
        assert!(matches!(
            adam.step(&mut pv, &[&g]),
            Err(NnError::NonFiniteGradient)
        ));
    }

    #[test]
    fn forward_is_pure() {
        let mlp = Mlp::new(&[4, 8, 3], Activation::Tanh, Activation::Sigmoid, &mut rng());
        let x = arr2(&[[0.1, -0.7, 0.3, 0.9]]);
        let (a, _) = mlp.forward(&x);
        let (b, _) = mlp.forward(&x);
        assert_eq!(a, b);
    }
}
