//! Trace preparation: horizontal windowing of full-round traces into
//! per-S-box sub-traces, range normalization, sliding-window sequence
//! formation for the autoencoder, and the bit-exact SCTR container format.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::ascon::PairObservation;
use crate::sim::{SimConfig, Trace, TraceSet};

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("window length {window} exceeds trace length {trace}")]
    WindowTooLong { window: usize, trace: usize },
    #[error("sliding window width {window} exceeds trace length {trace}")]
    SlideTooWide { window: usize, trace: usize },
    #[error("stride must be >= 1")]
    ZeroStride,
    #[error("empty trace")]
    EmptyTrace,
    #[error("sbox index {sbox} out of range ({count} cycles)")]
    SboxOutOfRange { sbox: usize, count: usize },
}

/// Per-S-box extraction window: `samples_per_clock + delta_l` samples
/// centered on the S-box's clock cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub samples_per_clock: usize,
    pub delta_l: usize,
}

impl WindowSpec {
    pub fn length(&self) -> usize {
        self.samples_per_clock + self.delta_l
    }

    /// Center sample of S-box `i`'s clock cycle.
    pub fn center(&self, sbox: usize) -> usize {
        sbox * self.samples_per_clock + self.samples_per_clock / 2
    }
}

fn reflect(idx: i64, len: usize) -> usize {
    let n = len as i64;
    let mut i = idx;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    debug_assert!((0..n).contains(&i));
    i as usize
}

/// Extracts S-box `sbox_index`'s window with reflective edge padding.
pub fn extract_sbox_window(
    trace: &Trace,
    sbox_index: usize,
    spec: &WindowSpec,
) -> Result<Vec<f32>, PrepError> {
    let n = trace.samples.len();
    if n == 0 {
        return Err(PrepError::EmptyTrace);
    }
    let l = spec.length();
    if l > n {
        return Err(PrepError::WindowTooLong { window: l, trace: n });
    }
    let cycles = n / spec.samples_per_clock;
    if sbox_index >= cycles {
        return Err(PrepError::SboxOutOfRange { sbox: sbox_index, count: cycles });
    }
    let start = spec.center(sbox_index) as i64 - (l / 2) as i64;
    Ok((0..l)
        .map(|k| trace.samples[reflect(start + k as i64, n)])
        .collect())
}

/// Trace scaled to zero mean and unit range; all samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTrace {
    pub samples: Vec<f64>,
}

/// Subtracts the mean and divides by (max - min). Constant traces map to
/// all zeros.
pub fn normalize_trace(samples: &[f32]) -> NormalizedTrace {
    assert!(!samples.is_empty(), "cannot normalize an empty trace");
    let vals: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let (min, max) = vals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = max - min;
    let samples = if range > 0.0 {
        vals.iter().map(|v| (v - mean) / range).collect()
    } else {
        vec![0.0; vals.len()]
    };
    NormalizedTrace { samples }
}

/// Sliding-window step sequence: row `t` holds samples [tS, tS+W).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSequence {
    /// steps x window matrix.
    pub steps: Array2<f64>,
    pub stride: usize,
}

impl WindowSequence {
    pub fn step_count(&self) -> usize {
        self.steps.nrows()
    }

    pub fn window(&self) -> usize {
        self.steps.ncols()
    }
}

/// Slices a normalized trace into `floor((len - W)/S) + 1` overlapping
/// steps; a trailing partial window is dropped.
pub fn sliding_windows(
    trace: &NormalizedTrace,
    window: usize,
    stride: usize,
) -> Result<WindowSequence, PrepError> {
    let n = trace.samples.len();
    if stride == 0 {
        return Err(PrepError::ZeroStride);
    }
    if window == 0 || window > n {
        return Err(PrepError::SlideTooWide { window, trace: n });
    }
    let count = (n - window) / stride + 1;
    let mut steps = Array2::zeros((count, window));
    for t in 0..count {
        for k in 0..window {
            steps[[t, k]] = trace.samples[t * stride + k];
        }
    }
    Ok(WindowSequence { steps, stride })
}

/// Pooled windows of one S-box pair, normalized and ready for the attack:
/// all traces' windows for S-box 2p first, then for 2p+1, plus the public
/// observation of each window.
pub struct PairData {
    pub raw_windows: Vec<Vec<f32>>,
    pub normalized: Vec<NormalizedTrace>,
    pub observations: Vec<PairObservation>,
}

pub fn pair_windows(
    ts: &TraceSet,
    iv: u64,
    pair: usize,
    spec: &WindowSpec,
) -> Result<PairData, PrepError> {
    let n = ts.len();
    let mut raw_windows = Vec::with_capacity(2 * n);
    let mut normalized = Vec::with_capacity(2 * n);
    let mut observations = Vec::with_capacity(2 * n);
    for slot in 0..2u8 {
        let sbox = 2 * pair + slot as usize;
        for trace in &ts.traces {
            let w = extract_sbox_window(trace, sbox, spec)?;
            normalized.push(normalize_trace(&w));
            raw_windows.push(w);
            observations.push(PairObservation::new(iv, trace.nonce, pair, slot));
        }
    }
    Ok(PairData { raw_windows, normalized, observations })
}

// --- SCTR container ------------------------------------------------------

const SCTR_MAGIC: [u8; 4] = *b"SCTR";
const SCTR_VERSION: u16 = 1;
const FLAG_HAS_KEY: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 2;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:02x?}, not an SCTR container")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated container: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("payload checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed metadata file: {0}")]
    BadMeta(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    format: String,
    version: u16,
    #[serde(skip_serializing_if = "Option::is_none")]
    ground_truth_key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<SimConfig>,
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    s.into()
}

/// Writes the binary container plus its companion `<path>.meta` metadata
/// file. Layout: header (magic, version u16, trace count u32,
/// samples-per-trace u32, flags u16), then per trace a 16-byte
/// little-endian nonce followed by the samples as f32 LE, then a CRC-32 of
/// the payload. Ground-truth key and config echo go to the companion file.
pub fn write_traceset(ts: &TraceSet, path: &Path) -> Result<(), ContainerError> {
    let spt = ts.samples_per_trace();
    for t in &ts.traces {
        assert_eq!(t.samples.len(), spt, "all traces must share one length");
    }

    let mut payload = Vec::with_capacity(ts.len() * (16 + 4 * spt));
    for t in &ts.traces {
        payload.extend_from_slice(&t.nonce.to_le_bytes());
        for &s in &t.samples {
            payload.extend_from_slice(&s.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&payload);

    let mut flags = 0u16;
    if ts.ground_truth_key.is_some() {
        flags |= FLAG_HAS_KEY;
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(&SCTR_MAGIC);
    out.extend_from_slice(&SCTR_VERSION.to_le_bytes());
    out.extend_from_slice(&(ts.len() as u32).to_le_bytes());
    out.extend_from_slice(&(spt as u32).to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    fs::File::create(path)?.write_all(&out)?;

    let meta = MetaFile {
        format: "sctr".into(),
        version: SCTR_VERSION,
        ground_truth_key: ts.ground_truth_key.map(|k| format!("{k:032x}")),
        config: ts.config.clone(),
    };
    let text = toml::to_string_pretty(&meta).map_err(|e| ContainerError::BadMeta(e.to_string()))?;
    fs::write(meta_path(path), text)?;
    Ok(())
}

pub fn read_traceset(path: &Path) -> Result<TraceSet, ContainerError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(ContainerError::Truncated { expected: HEADER_LEN, actual: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != SCTR_MAGIC {
        return Err(ContainerError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != SCTR_VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let spt = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let flags = u16::from_le_bytes(bytes[14..16].try_into().unwrap());

    let payload_len = count * (16 + 4 * spt);
    let expected = HEADER_LEN + payload_len + 4;
    if bytes.len() != expected {
        return Err(ContainerError::Truncated { expected, actual: bytes.len() });
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(ContainerError::ChecksumMismatch { stored, computed });
    }

    let mut traces = Vec::with_capacity(count);
    let mut off = 0usize;
    for index in 0..count {
        let nonce = u128::from_le_bytes(payload[off..off + 16].try_into().unwrap());
        off += 16;
        let mut samples = Vec::with_capacity(spt);
        for _ in 0..spt {
            samples.push(f32::from_le_bytes(payload[off..off + 4].try_into().unwrap()));
            off += 4;
        }
        traces.push(Trace { samples, nonce, index: index as u32 });
    }

    let (config, mut key) = match fs::read_to_string(meta_path(path)) {
        Ok(text) => {
            let meta: MetaFile =
                toml::from_str(&text).map_err(|e| ContainerError::BadMeta(e.to_string()))?;
            let key = match meta.ground_truth_key {
                Some(h) => Some(
                    u128::from_str_radix(&h, 16)
                        .map_err(|e| ContainerError::BadMeta(format!("bad key hex: {e}")))?,
                ),
                None => None,
            };
            (meta.config, key)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => (None, None),
        Err(e) => return Err(e.into()),
    };
    if flags & FLAG_HAS_KEY == 0 {
        key = None;
    }
    Ok(TraceSet { traces, config, ground_truth_key: key })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_campaign, SimConfig};
    use tempfile::tempdir;

    fn toy_trace(len: usize) -> Trace {
        Trace {
            samples: (0..len).map(|i| i as f32).collect(),
            nonce: 7,
            index: 0,
        }
    }

    #[test]
    fn zero_delta_window_is_exactly_the_cycle() {
        let spec = WindowSpec { samples_per_clock: 125, delta_l: 0 };
        let t = toy_trace(4 * 125);
        let w = extract_sbox_window(&t, 0, &spec).unwrap();
        assert_eq!(w.len(), 125);
        assert_eq!(w, t.samples[0..125]);
        let w2 = extract_sbox_window(&t, 2, &spec).unwrap();
        assert_eq!(w2, t.samples[250..375]);
    }

    #[test]
    fn delta_24_gives_149_samples() {
        let spec = WindowSpec { samples_per_clock: 125, delta_l: 24 };
        let t = toy_trace(4 * 125);
        let w = extract_sbox_window(&t, 1, &spec).unwrap();
        assert_eq!(w.len(), 149);
        // centered: spans 12 samples into each neighbor cycle
        assert_eq!(w[12], t.samples[125]);
    }

    #[test]
    fn zero_delta_windows_are_disjoint_and_tile_the_trace() {
        let spec = WindowSpec { samples_per_clock: 25, delta_l: 0 };
        let t = toy_trace(4 * 25);
        let mut rebuilt = Vec::new();
        for i in 0..4 {
            rebuilt.extend(extract_sbox_window(&t, i, &spec).unwrap());
        }
        assert_eq!(rebuilt, t.samples);
    }

    #[test]
    fn edge_windows_reflect() {
        let spec = WindowSpec { samples_per_clock: 10, delta_l: 4 };
        let t = toy_trace(30);
        let w = extract_sbox_window(&t, 0, &spec).unwrap();
        // start = 5 - 7 = -2 -> reflected indices 2, 1, then 0..12
        assert_eq!(w[0], t.samples[2]);
        assert_eq!(w[1], t.samples[1]);
        assert_eq!(w[2], t.samples[0]);
        assert_eq!(w[3], t.samples[1]);
    }

    #[test]
    fn oversized_window_is_rejected() {
        let spec = WindowSpec { samples_per_clock: 100, delta_l: 30 };
        let t = toy_trace(100);
        assert!(matches!(
            extract_sbox_window(&t, 0, &spec),
            Err(PrepError::WindowTooLong { .. })
        ));
    }

    #[test]
    fn normalize_two_point_case() {
        let n = normalize_trace(&[1.0, 3.0]);
        assert_eq!(n.samples, vec![-0.5, 0.5]);
    }

    #[test]
    fn normalize_constant_trace_is_zero() {
        let n = normalize_trace(&[5.0, 5.0, 5.0]);
        assert_eq!(n.samples, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_is_zero_mean_and_bounded() {
        let vals: Vec<f32> = (0..97).map(|i| ((i * 37) % 89) as f32 * 0.37 - 11.0).collect();
        let n = normalize_trace(&vals);
        let mean: f64 = n.samples.iter().sum::<f64>() / n.samples.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!(n.samples.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        let (min, max) = n
            .samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        assert!(max - min <= 1.0 + 1e-12);
    }

    #[test]
    fn sliding_window_counts() {
        let t = NormalizedTrace { samples: vec![0.0; 149] };
        let s = sliding_windows(&t, 10, 5).unwrap();
        assert_eq!(s.step_count(), 28);
        assert_eq!(s.window(), 10);
    }

    #[test]
    fn window_equal_to_length_gives_one_step() {
        let t = NormalizedTrace { samples: (0..12).map(|i| i as f64).collect() };
        let s = sliding_windows(&t, 12, 3).unwrap();
        assert_eq!(s.step_count(), 1);
        assert_eq!(s.steps.row(0).to_vec(), t.samples);
    }

    #[test]
    fn stride_equal_to_window_tiles() {
        let t = NormalizedTrace { samples: (0..20).map(|i| i as f64).collect() };
        let s = sliding_windows(&t, 5, 5).unwrap();
        assert_eq!(s.step_count(), 4);
        let flat: Vec<f64> = s.steps.iter().cloned().collect();
        assert_eq!(flat, t.samples);
    }

    #[test]
    fn too_wide_slide_is_rejected() {
        let t = NormalizedTrace { samples: vec![0.0; 4] };
        assert!(matches!(sliding_windows(&t, 5, 1), Err(PrepError::SlideTooWide { .. })));
        assert!(matches!(sliding_windows(&t, 2, 0), Err(PrepError::ZeroStride)));
    }

    #[test]
    fn container_roundtrip_is_bit_exact() {
        let cfg = SimConfig {
            num_encryptions: 5,
            samples_per_clock: 20,
            sbox_count: 3,
            noise_sigma: 0.4,
            rng_seed: 9,
            ..SimConfig::default()
        };
        let ts = simulate_campaign(&cfg, 0xfeed_beef).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.sctr");
        write_traceset(&ts, &path).unwrap();
        let back = read_traceset(&path).unwrap();
        assert_eq!(back, ts);
    }

    #[test]
    fn empty_traceset_roundtrips() {
        let ts = TraceSet::default();
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.sctr");
        write_traceset(&ts, &path).unwrap();
        let back = read_traceset(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.ground_truth_key, None);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let cfg = SimConfig {
            num_encryptions: 2,
            samples_per_clock: 8,
            sbox_count: 2,
            rng_seed: 1,
            ..SimConfig::default()
        };
        let ts = simulate_campaign(&cfg, 3).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.sctr");
        write_traceset(&ts, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let k = HEADER_LEN + 20;
        bytes[k] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_traceset(&path),
            Err(ContainerError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn bad_magic_version_and_truncation_are_distinct() {
        let ts = TraceSet::default();
        let dir = tempdir().unwrap();
        let path = dir.path().join("y.sctr");
        write_traceset(&ts, &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_traceset(&path), Err(ContainerError::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 99;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_traceset(&path),
            Err(ContainerError::UnsupportedVersion(99))
        ));

        fs::write(&path, &good[..good.len() - 2]).unwrap();
        assert!(matches!(read_traceset(&path), Err(ContainerError::Truncated { .. })));
    }
}
