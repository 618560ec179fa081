//! Synthetic power-trace generator standing in for a hardware capture rig.
//!
//! Each clock cycle models one S-box computation: a fixed baseline waveform
//! plus data-dependent leakage at the cycle's point of interest, i.i.d.
//! Gaussian noise on every sample, and an optional whole-trace integer
//! jitter. Trace `i` of a campaign draws from its own counter-based RNG
//! substream, so parallel and serial generation are bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ascon::{self, AsconInitState};
use crate::leakfit::LeakageModel;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// Leakage function applied to the 5-bit S-box output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageKind {
    HammingWeight,
    Msb,
    /// Generic numerical-normal-form model given by its 32 coefficients.
    GenericNnf(Vec<f64>),
}

impl LeakageKind {
    pub fn eval(&self, x: u8) -> f64 {
        assert!(x < 32, "value {x} out of range");
        match self {
            LeakageKind::HammingWeight => x.count_ones() as f64,
            LeakageKind::Msb => ((x >> 4) & 1) as f64,
            LeakageKind::GenericNnf(c) => LeakageModel::new(c.clone()).eval(x),
        }
    }
}

/// Per-cycle baseline waveform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Flat { level: f64 },
    /// One raised-cosine bump per clock cycle.
    RaisedCosine { amplitude: f64 },
}

impl Baseline {
    fn sample(&self, t: usize, samples_per_clock: usize) -> f64 {
        match *self {
            Baseline::Flat { level } => level,
            Baseline::RaisedCosine { amplitude } => {
                let phase = t as f64 / samples_per_clock as f64;
                amplitude * 0.5 * (1.0 - (2.0 * std::f64::consts::PI * phase).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub num_encryptions: u32,
    pub samples_per_clock: u32,
    pub sbox_count: u32,
    pub leakage: LeakageKind,
    pub leakage_scale: f64,
    /// Standard deviation of the additive Gaussian noise, per sample.
    pub noise_sigma: f64,
    /// Uniform per-trace shift in [-jitter_max, +jitter_max] samples.
    pub jitter_max: u32,
    /// 0 = all leakage on the POI sample; w > 0 spreads it over 2w+1
    /// samples with triangular weights.
    pub smear_halfwidth: u32,
    pub baseline: Baseline,
    pub rng_seed: u64,
    pub iv: u64,
    /// XOR the first round constant into x2 before the substitution.
    pub round_constant: bool,
    /// Superimpose the diffusion layer's leakage late in the final cycle.
    pub diffusion: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_encryptions: 1000,
            samples_per_clock: 125,
            sbox_count: 64,
            leakage: LeakageKind::HammingWeight,
            leakage_scale: 1.0,
            noise_sigma: 0.0,
            jitter_max: 0,
            smear_halfwidth: 0,
            baseline: Baseline::RaisedCosine { amplitude: 1.0 },
            rng_seed: 0,
            iv: ascon::ASCON128_IV,
            round_constant: false,
            diffusion: false,
        }
    }
}

impl SimConfig {
    pub fn trace_len(&self) -> usize {
        self.sbox_count as usize * self.samples_per_clock as usize
    }

    /// POI sample index of clock cycle `sbox`: the cycle center.
    pub fn poi_index(&self, sbox: usize) -> usize {
        sbox * self.samples_per_clock as usize + self.samples_per_clock as usize / 2
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let spc = self.samples_per_clock;
        if spc < 1 {
            return Err(SimError::InvalidConfig("samples_per_clock must be >= 1".into()));
        }
        if self.sbox_count < 1 || self.sbox_count > 64 {
            return Err(SimError::InvalidConfig("sbox_count must be in 1..=64".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(SimError::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        if self.jitter_max >= spc.div_ceil(2) {
            return Err(SimError::InvalidConfig(format!(
                "jitter_max {} must be < samples_per_clock/2 = {}",
                self.jitter_max,
                spc as f64 / 2.0
            )));
        }
        if self.smear_halfwidth > 0 && self.smear_halfwidth >= spc / 2 {
            return Err(SimError::InvalidConfig(
                "smear_halfwidth must fit inside a clock cycle".into(),
            ));
        }
        if !self.leakage_scale.is_finite() {
            return Err(SimError::InvalidConfig("leakage_scale must be finite".into()));
        }
        if let LeakageKind::GenericNnf(c) = &self.leakage {
            if c.len() != 32 {
                return Err(SimError::InvalidConfig(format!(
                    "generic_nnf needs 32 coefficients, got {}",
                    c.len()
                )));
            }
        }
        Ok(())
    }
}

/// One captured (here: synthesized) power waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub samples: Vec<f32>,
    pub nonce: u128,
    pub index: u32,
}

/// A campaign of traces sharing one configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceSet {
    pub traces: Vec<Trace>,
    pub config: Option<SimConfig>,
    pub ground_truth_key: Option<u128>,
}

impl TraceSet {
    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn samples_per_trace(&self) -> usize {
        self.traces.first().map_or(0, |t| t.samples.len())
    }
}

/// RNG substream for trace `index` of a campaign: fixed seed, per-trace
/// stream counter.
pub fn trace_rng(seed: u64, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + index as u64);
    rng
}

fn nonce_stream_rng(seed: u64) -> ChaCha8Rng {
    // stream 0 is reserved for campaign-level draws
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-S-box sensitive values for one encryption under a config.
fn sensitive_column_values(cfg: &SimConfig, key: u128, nonce: u128) -> Vec<u8> {
    let mut st = AsconInitState::new(cfg.iv, key, nonce);
    if cfg.round_constant {
        st.add_round_constant();
    }
    (0..cfg.sbox_count as usize)
        .map(|i| ascon::sbox5(st.sbox_input(i)))
        .collect()
}

/// Synthesizes one trace. The RNG must be the trace's own substream; draw
/// order is fixed (noise first, then jitter) so that configurations with
/// fewer random inputs stay prefix-compatible.
pub fn synth_trace(key: u128, nonce: u128, index: u32, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Trace {
    let spc = cfg.samples_per_clock as usize;
    let n = cfg.trace_len();
    let xs = sensitive_column_values(cfg, key, nonce);

    let mut clean = vec![0f64; n];
    for (t, c) in clean.iter_mut().enumerate() {
        *c = cfg.baseline.sample(t % spc, spc);
    }
    let w = cfg.smear_halfwidth as i64;
    for (i, &x) in xs.iter().enumerate() {
        let leak = cfg.leakage_scale * cfg.leakage.eval(x);
        let poi = cfg.poi_index(i) as i64;
        if w == 0 {
            clean[poi as usize] += leak;
        } else {
            for k in -w..=w {
                let weight = 1.0 - k.abs() as f64 / (w + 1) as f64;
                let t = poi + k;
                if (0..n as i64).contains(&t) {
                    clean[t as usize] += leak * weight;
                }
            }
        }
    }
    if cfg.diffusion {
        // late-cycle second POI carrying the diffusion layer's activity
        let mut st = AsconInitState::new(cfg.iv, key, nonce);
        if cfg.round_constant {
            st.add_round_constant();
        }
        let diffused = st.substitute().linear_diffusion();
        let hw: u32 = diffused.words.iter().map(|w| w.count_ones()).sum();
        let t = (cfg.sbox_count as usize - 1) * spc + 3 * spc / 4;
        clean[t] += cfg.leakage_scale * hw as f64 / 320.0;
    }

    let mut noisy = clean;
    if cfg.noise_sigma > 0.0 {
        for v in noisy.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += cfg.noise_sigma * z;
        }
    }

    let shifted = if cfg.jitter_max > 0 {
        let j = rng.random_range(-(cfg.jitter_max as i64)..=cfg.jitter_max as i64);
        let mut out = vec![0f64; n];
        for (t, o) in out.iter_mut().enumerate() {
            let src = t as i64 - j;
            let src = src.clamp(0, n as i64 - 1) as usize;
            *o = noisy[src];
        }
        out
    } else {
        noisy
    };

    Trace {
        samples: shifted.into_iter().map(|v| v as f32).collect(),
        nonce,
        index,
    }
}

/// Runs a whole campaign: nonces drawn from per-trace substreams,
/// reproducible from (config, key) alone.
pub fn simulate_campaign(cfg: &SimConfig, key: u128) -> Result<TraceSet, SimError> {
    cfg.validate()?;
    let nonces: Vec<u128> = {
        let mut rng = nonce_stream_rng(cfg.rng_seed);
        (0..cfg.num_encryptions).map(|_| rng.random()).collect()
    };
    let traces: Vec<Trace> = (0..cfg.num_encryptions)
        .into_par_iter()
        .map(|i| {
            let mut rng = trace_rng(cfg.rng_seed, i);
            synth_trace(key, nonces[i as usize], i, cfg, &mut rng)
        })
        .collect();
    Ok(TraceSet {
        traces,
        config: Some(cfg.clone()),
        ground_truth_key: Some(key),
    })
}

/// Noise level that puts the POI signal-to-noise ratio of the attacked pair
/// at `snr_db`: sigma^2 = Var(leakage at POI) / 10^(snr/10), with the
/// variance taken exactly over the 4 equiprobable nonce patterns per S-box
/// and averaged over the pair.
pub fn sigma_for_snr_db(cfg: &SimConfig, key: u128, pair: usize, snr_db: f64) -> f64 {
    let mut var_sum = 0.0;
    for slot in 0..2u8 {
        let sbox = 2 * pair + slot as usize;
        let hi = (key >> 64) as u64;
        let lo = key as u64;
        let (k_hi, k_lo) = (ascon::word_bit(hi, sbox), ascon::word_bit(lo, sbox));
        let iv_bit = ascon::word_bit(cfg.iv, sbox);
        let vals: Vec<f64> = (0..4u8)
            .map(|z| {
                let x = ascon::sensitive_data(z >> 1, z & 1, k_hi, k_lo, iv_bit);
                cfg.leakage_scale * cfg.leakage.eval(x)
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / 4.0;
        var_sum += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
    }
    let signal_var = var_sum / 2.0;
    (signal_var / 10f64.powf(snr_db / 10.0)).sqrt()
}
