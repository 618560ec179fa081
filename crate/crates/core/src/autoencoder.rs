//! LSTM sequence autoencoder over sliding-window trace sequences.
//!
//! The encoder cell consumes the W-wide windows in forward order; its final
//! internal state `c` is the trace's feature vector. The decoder cell starts
//! from the encoder's final state and walks the windows in reverse order,
//! receiving at each step the mirrored window concatenated with its own
//! previous output; a single linear neuron per step reconstructs the center
//! sample of that window. Training minimizes the MSE of the reversed
//! center-sample sequence with Adam over shuffled mini-batches.

use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::nn::checkpoint::{self, CheckpointError, TensorRecord};
use crate::nn::{mse, mse_grad, Activation, Adam, AdamConfig, Dense, LstmCell, NnError};
use crate::prep::WindowSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    /// Dimension D of the internal state / feature vector.
    pub feature_dim: usize,
    /// Sliding-window width W.
    pub window: usize,
    /// Sliding-window stride S.
    pub stride: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Standardize each training batch's inputs (scalar mean/std); running
    /// averages of the batch statistics are applied at inference.
    pub batch_standardize: bool,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            feature_dim: 150,
            window: 10,
            stride: 5,
            epochs: 25,
            batch_size: 512,
            learning_rate: 1e-3,
            batch_standardize: true,
        }
    }
}

/// Trained (or freshly initialized) autoencoder parameters.
pub struct SeqAutoencoder {
    pub enc: LstmCell,
    pub dec: LstmCell,
    pub out: Dense,
    pub cfg: AutoencoderConfig,
    /// Inference-time input standardization constants.
    pub input_mean: f64,
    pub input_std: f64,
}

struct BatchTensors {
    /// per time step, batch x W (standardized)
    xs: Vec<Array2<f64>>,
    /// batch x T reversed center-sample targets (unstandardized)
    targets: Array2<f64>,
}

struct ForwardPass {
    enc_steps: Vec<crate::nn::LstmStep>,
    dec_steps: Vec<crate::nn::LstmStep>,
    out_caches: Vec<crate::nn::DenseCache>,
    preds: Array2<f64>,
}

impl SeqAutoencoder {
    pub fn new(cfg: &AutoencoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let enc = LstmCell::new(cfg.window, cfg.feature_dim, rng);
        let dec = LstmCell::new(cfg.window + 1, cfg.feature_dim, rng);
        let out = Dense::new(cfg.feature_dim, 1, Activation::Linear, rng);
        Self {
            enc,
            dec,
            out,
            cfg: cfg.clone(),
            input_mean: 0.0,
            input_std: 1.0,
        }
    }

    fn param_count(&self) -> usize {
        self.enc.param_count() + self.dec.param_count() + self.out.param_count()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.enc.param_slices_mut();
        v.extend(self.dec.param_slices_mut());
        v.extend(self.out.param_slices_mut());
        v
    }

    fn check_width(&self, seq: &WindowSequence) -> Result<(), NnError> {
        if seq.window() != self.cfg.window {
            return Err(NnError::ShapeMismatch {
                expected: format!("window width {}", self.cfg.window),
                actual: format!("{}", seq.window()),
            });
        }
        Ok(())
    }

    /// Gathers a batch into per-step input matrices and the reversed
    /// center-sample target matrix.
    fn gather(&self, seqs: &[WindowSequence], idx: &[usize], mean: f64, std: f64) -> BatchTensors {
        let t_steps = seqs[idx[0]].step_count();
        let w = self.cfg.window;
        let n = idx.len();
        let center = w / 2;
        let mut xs = vec![Array2::zeros((n, w)); t_steps];
        let mut targets = Array2::zeros((n, t_steps));
        for (r, &i) in idx.iter().enumerate() {
            let steps = &seqs[i].steps;
            for t in 0..t_steps {
                for k in 0..w {
                    xs[t][[r, k]] = (steps[[t, k]] - mean) / std;
                }
                targets[[r, t]] = steps[[t_steps - 1 - t, center]];
            }
        }
        BatchTensors { xs, targets }
    }

    /// Full forward over one batch: encoder in window order, decoder in
    /// reverse with [mirrored window | previous output] inputs.
    fn forward_batch(&self, batch: &BatchTensors) -> ForwardPass {
        let t_steps = batch.xs.len();
        let n = batch.xs[0].nrows();
        let w = self.cfg.window;

        let (mut h, mut c) = self.enc.zero_state(n);
        let mut enc_steps = Vec::with_capacity(t_steps);
        for x in &batch.xs {
            let st = self.enc.step(x, &h, &c);
            h = st.h.clone();
            c = st.c.clone();
            enc_steps.push(st);
        }

        let mut dec_steps = Vec::with_capacity(t_steps);
        let mut out_caches = Vec::with_capacity(t_steps);
        let mut preds = Array2::zeros((n, t_steps));
        let mut prev_out = Array2::zeros((n, 1));
        let (mut dh, mut dc) = (h, c);
        for t in 0..t_steps {
            let mut x = Array2::zeros((n, w + 1));
            x.slice_mut(s![.., ..w]).assign(&batch.xs[t_steps - 1 - t]);
            x.slice_mut(s![.., w..]).assign(&prev_out);
            let st = self.dec.step(&x, &dh, &dc);
            dh = st.h.clone();
            dc = st.c.clone();
            let (y, cache) = self.out.forward(&st.h);
            preds.column_mut(t).assign(&y.column(0));
            prev_out = y;
            dec_steps.push(st);
            out_caches.push(cache);
        }

        ForwardPass { enc_steps, dec_steps, out_caches, preds }
    }

    /// Reverse pass; returns flattened gradients in parameter order
    /// (encoder, decoder, output neuron).
    fn backward_batch(
        &self,
        batch: &BatchTensors,
        fwd: &ForwardPass,
    ) -> (crate::nn::LstmGrad, crate::nn::LstmGrad, crate::nn::DenseGrad) {
        let t_steps = batch.xs.len();
        let n = batch.xs[0].nrows();
        let w = self.cfg.window;
        let dpred = mse_grad(&fwd.preds, &batch.targets);

        let mut enc_grad = self.enc.zero_grad();
        let mut dec_grad = self.dec.zero_grad();
        let mut out_grad = self.out.zero_grad();

        let mut dh_next = Array2::zeros((n, self.cfg.feature_dim));
        let mut dc_next = Array2::zeros((n, self.cfg.feature_dim));
        let mut dprev_out = Array2::zeros((n, 1));
        for t in (0..t_steps).rev() {
            // the step's output feeds both the loss and, unless it is the
            // final step, the next step's input
            let mut dout = dprev_out;
            dout.column_mut(0)
                .zip_mut_with(&dpred.column(t), |a, &b| *a += b);
            let (dh_from_out, og) = self.out.backward(&fwd.out_caches[t], &dout);
            out_grad.accum(&og);
            let dh = &dh_next + &dh_from_out;
            let (dx, dh_prev, dc_prev) =
                self.dec
                    .backward_step(&fwd.dec_steps[t], &dh, &dc_next, &mut dec_grad);
            dprev_out = dx.slice(s![.., w..]).to_owned();
            dh_next = dh_prev;
            dc_next = dc_prev;
        }

        // decoder initial state was the encoder's final state
        let mut dh = dh_next;
        let mut dc = dc_next;
        for t in (0..t_steps).rev() {
            let (_, dh_prev, dc_prev) =
                self.enc
                    .backward_step(&fwd.enc_steps[t], &dh, &dc, &mut enc_grad);
            dh = dh_prev;
            dc = dc_prev;
        }
        (enc_grad, dec_grad, out_grad)
    }

    /// Encoder-only pass: the feature vector is the cell state after the
    /// final window step. Inference-time standardization applies.
    pub fn encode(&self, seq: &WindowSequence) -> Result<Array1<f64>, NnError> {
        self.check_width(seq)?;
        let f = self.encode_set(std::slice::from_ref(seq))?;
        Ok(f.row(0).to_owned())
    }

    /// Encodes a whole set in one batched pass; row i is trace i's feature.
    pub fn encode_set(&self, seqs: &[WindowSequence]) -> Result<Array2<f64>, NnError> {
        assert!(!seqs.is_empty(), "cannot encode an empty set");
        for s in seqs {
            self.check_width(s)?;
            if s.step_count() != seqs[0].step_count() {
                return Err(NnError::ShapeMismatch {
                    expected: format!("{} steps", seqs[0].step_count()),
                    actual: format!("{}", s.step_count()),
                });
            }
        }
        let idx: Vec<usize> = (0..seqs.len()).collect();
        let batch = self.gather(seqs, &idx, self.input_mean, self.input_std);
        let (mut h, mut c) = self.enc.zero_state(seqs.len());
        for x in &batch.xs {
            let st = self.enc.step(x, &h, &c);
            h = st.h;
            c = st.c;
        }
        Ok(c)
    }

    /// Decoder output re-reversed into forward window-center order.
    pub fn reconstruct(&self, seq: &WindowSequence) -> Result<Vec<f64>, NnError> {
        self.check_width(seq)?;
        let idx = [0usize];
        let batch = self.gather(std::slice::from_ref(seq), &idx, self.input_mean, self.input_std);
        let fwd = self.forward_batch(&batch);
        let t_steps = seq.step_count();
        Ok((0..t_steps)
            .map(|t| fwd.preds[[0, t_steps - 1 - t]])
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let records = vec![
            TensorRecord::new(
                "meta",
                vec![5],
                vec![
                    self.cfg.feature_dim as f64,
                    self.cfg.window as f64,
                    self.cfg.stride as f64,
                    self.input_mean,
                    self.input_std,
                ],
            ),
            TensorRecord::new(
                "enc.w",
                vec![self.enc.w.nrows(), self.enc.w.ncols()],
                self.enc.w.iter().cloned().collect(),
            ),
            TensorRecord::new("enc.b", vec![self.enc.b.len()], self.enc.b.to_vec()),
            TensorRecord::new(
                "dec.w",
                vec![self.dec.w.nrows(), self.dec.w.ncols()],
                self.dec.w.iter().cloned().collect(),
            ),
            TensorRecord::new("dec.b", vec![self.dec.b.len()], self.dec.b.to_vec()),
            TensorRecord::new(
                "out.w",
                vec![self.out.w.nrows(), self.out.w.ncols()],
                self.out.w.iter().cloned().collect(),
            ),
            TensorRecord::new("out.b", vec![self.out.b.len()], self.out.b.to_vec()),
        ];
        checkpoint::write_checkpoint(path, &records)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let records = checkpoint::read_checkpoint(path)?;
        let get = |name: &str| -> Result<&TensorRecord, CheckpointError> {
            records
                .iter()
                .find(|r| r.name == name)
                .ok_or_else(|| CheckpointError::Malformed(format!("missing tensor {name}")))
        };
        let meta = get("meta")?;
        let cfg = AutoencoderConfig {
            feature_dim: meta.data[0] as usize,
            window: meta.data[1] as usize,
            stride: meta.data[2] as usize,
            ..AutoencoderConfig::default()
        };
        let to2 = |r: &TensorRecord| {
            Array2::from_shape_vec((r.dims[0], r.dims[1]), r.data.clone())
                .map_err(|e| CheckpointError::Malformed(e.to_string()))
        };
        let enc_w = to2(get("enc.w")?)?;
        let dec_w = to2(get("dec.w")?)?;
        let out_w = to2(get("out.w")?)?;
        Ok(Self {
            enc: LstmCell {
                input_dim: cfg.window,
                state_dim: cfg.feature_dim,
                w: enc_w,
                b: Array1::from_vec(get("enc.b")?.data.clone()),
            },
            dec: LstmCell {
                input_dim: cfg.window + 1,
                state_dim: cfg.feature_dim,
                w: dec_w,
                b: Array1::from_vec(get("dec.b")?.data.clone()),
            },
            out: Dense {
                w: out_w,
                b: Array1::from_vec(get("out.b")?.data.clone()),
                act: Activation::Linear,
            },
            input_mean: meta.data[3],
            input_std: meta.data[4],
            cfg,
        })
    }
}

fn batch_stats(seqs: &[WindowSequence], idx: &[usize]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut count = 0usize;
    for &i in idx {
        for &v in seqs[i].steps.iter() {
            sum += v;
            sum2 += v * v;
            count += 1;
        }
    }
    let mean = sum / count as f64;
    let var = (sum2 / count as f64 - mean * mean).max(0.0);
    (mean, var.sqrt().max(1e-9))
}

/// Trains an autoencoder over per-trace window sequences.
///
/// The returned history has `epochs + 1` entries: index 0 is the
/// pre-training evaluation loss, index e the mean training-batch loss of
/// epoch e. Training aborts with a diagnostic on non-finite loss.
pub fn train_autoencoder(
    seqs: &[WindowSequence],
    cfg: &AutoencoderConfig,
    seed: u64,
) -> Result<(SeqAutoencoder, Vec<f64>), NnError> {
    assert!(!seqs.is_empty(), "need at least one training sequence");
    let t_steps = seqs[0].step_count();
    for s in seqs {
        assert_eq!(s.window(), cfg.window, "sequence width must match config");
        assert_eq!(s.step_count(), t_steps, "sequences must share step count");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = SeqAutoencoder::new(cfg, &mut rng);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate), net.param_count());

    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let batch = cfg.batch_size.max(1);
    let mut history = Vec::with_capacity(cfg.epochs + 1);

    // epoch 0: evaluation only, batch statistics as during training
    {
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let (m, s) = if cfg.batch_standardize { batch_stats(seqs, chunk) } else { (0.0, 1.0) };
            let tensors = net.gather(seqs, chunk, m, s);
            let fwd = net.forward_batch(&tensors);
            total += mse(&fwd.preds, &tensors.targets);
            batches += 1;
        }
        history.push(total / batches as f64);
    }

    let mut run_mean = 0.0;
    let mut run_std = 0.0;
    let mut run_count = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let (m, s) = if cfg.batch_standardize { batch_stats(seqs, chunk) } else { (0.0, 1.0) };
            run_count += 1;
            run_mean += (m - run_mean) / run_count as f64;
            run_std += (s - run_std) / run_count as f64;

            let tensors = net.gather(seqs, chunk, m, s);
            let fwd = net.forward_batch(&tensors);
            let loss = mse(&fwd.preds, &tensors.targets);
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, batch: batches, loss });
            }
            total += loss;
            batches += 1;

            let (eg, dg, og) = net.backward_batch(&tensors, &fwd);
            let mut grads: Vec<&[f64]> = eg.slices();
            grads.extend(dg.slices());
            grads.extend(og.slices());
            adam.step(&mut net.param_slices_mut(), &grads)?;
        }
        history.push(total / batches as f64);
    }

    if cfg.batch_standardize && run_count > 0 {
        net.input_mean = run_mean;
        net.input_std = run_std;
    }
    Ok((net, history))
}

/// Per-dimension feature normalization across a set: (c - mean) / range,
/// constant dimensions map to zero.
pub fn normalize_features(features: &Array2<f64>) -> Array2<f64> {
    let n = features.nrows() as f64;
    let mut out = features.clone();
    for mut col in out.columns_mut() {
        let mean = col.sum() / n;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in col.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let range = hi - lo;
        if range > 0.0 {
            col.mapv_inplace(|v| (v - mean) / range);
        } else {
            col.fill(0.0);
        }
    }
    out
}

const FEATURE_MAGIC: [u8; 4] = *b"SCFD";

/// Binary feature-matrix dump (traces x D), f64 little-endian with a
/// shape header.
pub fn write_features(path: &Path, features: &Array2<f64>) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = Vec::with_capacity(16 + features.len() * 8);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&(features.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(features.ncols() as u32).to_le_bytes());
    for &v in features.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&out)
}

pub fn read_features(path: &Path) -> std::io::Result<Array2<f64>> {
    let bytes = std::fs::read(path)?;
    let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    if bytes.len() < 14 || bytes[0..4] != FEATURE_MAGIC {
        return Err(bad("not a feature dump"));
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    if bytes.len() != 14 + rows * cols * 8 {
        return Err(bad("truncated feature dump"));
    }
    let data: Vec<f64> = bytes[14..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(&e.to_string()))
}
