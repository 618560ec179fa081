//! Classical rank statistics: difference-of-means (DPA), Pearson
//! correlation (CPA), Kolmogorov-Smirnov, plus the spectral
//! number-of-degrees-of-freedom estimator and per-sample moments.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ascon::{self, PairObservation};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("a cluster is empty; statistic undefined for this candidate")]
    EmptyCluster,
    #[error("need at least {need} traces, got {got}")]
    TooFewTraces { need: usize, got: usize },
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("NDF window [{start}, {end}) outside trace of {len} samples")]
    WindowOutOfRange { start: i64, end: i64, len: usize },
    #[error("degenerate NDF window: DC spectral component {omega0}")]
    DegenerateWindow { omega0: f64 },
}

/// Classical single-sample leakage models over the 5-bit S-box output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalLeakage {
    HammingWeight,
    Msb,
}

impl ClassicalLeakage {
    pub fn eval(&self, x: u8) -> f64 {
        assert!(x < 32, "value {x} out of range");
        match self {
            ClassicalLeakage::HammingWeight => x.count_ones() as f64,
            ClassicalLeakage::Msb => ((x >> 4) & 1) as f64,
        }
    }
}

/// One candidate's statistic plus its per-sample curve.
#[derive(Debug, Clone)]
pub struct RankCurve {
    /// max over samples of the per-sample statistic magnitude
    pub statistic: f64,
    pub argmax_sample: usize,
    pub per_sample: Vec<f64>,
}

impl RankCurve {
    fn from_curve(per_sample: Vec<f64>) -> Self {
        let (argmax, statistic) = per_sample
            .iter()
            .cloned()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |(ai, av), (i, v)| {
                if v > av {
                    (i, v)
                } else {
                    (ai, av)
                }
            });
        Self { statistic, argmax_sample: argmax, per_sample }
    }
}

fn candidate_leakage(
    observations: &[PairObservation],
    candidate: u8,
    model: ClassicalLeakage,
) -> Vec<f64> {
    observations
        .iter()
        .map(|o| model.eval(ascon::candidate_sensitive(o, candidate)))
        .collect()
}

fn check_shapes(traces: &ArrayView2<f64>, observations: &[PairObservation]) -> Result<(), StatsError> {
    if traces.nrows() != observations.len() {
        return Err(StatsError::LengthMismatch(traces.nrows(), observations.len()));
    }
    if traces.nrows() < 2 {
        return Err(StatsError::TooFewTraces { need: 2, got: traces.nrows() });
    }
    Ok(())
}

/// Difference-of-means attack for one candidate: traces are clustered by
/// the model leakage against its campaign mean (ties to the high cluster),
/// and the statistic is the largest per-sample absolute mean difference.
pub fn dpa_rank(
    traces: ArrayView2<f64>,
    observations: &[PairObservation],
    candidate: u8,
    model: ClassicalLeakage,
) -> Result<RankCurve, StatsError> {
    check_shapes(&traces, observations)?;
    let leak = candidate_leakage(observations, candidate, model);
    let mu = leak.iter().sum::<f64>() / leak.len() as f64;

    let n_samples = traces.ncols();
    let mut sum_hi = vec![0f64; n_samples];
    let mut sum_lo = vec![0f64; n_samples];
    let mut n_hi = 0usize;
    for (row, &l) in traces.outer_iter().zip(&leak) {
        let hi = l >= mu;
        if hi {
            n_hi += 1;
        }
        let acc = if hi { &mut sum_hi } else { &mut sum_lo };
        for (a, &v) in acc.iter_mut().zip(row.iter()) {
            *a += v;
        }
    }
    let n_lo = leak.len() - n_hi;
    if n_hi == 0 || n_lo == 0 {
        return Err(StatsError::EmptyCluster);
    }
    let curve: Vec<f64> = (0..n_samples)
        .map(|s| (sum_hi[s] / n_hi as f64 - sum_lo[s] / n_lo as f64).abs())
        .collect();
    Ok(RankCurve::from_curve(curve))
}

/// Pearson correlation attack for one candidate: per sample |rho| between
/// the sample series and the model leakage series; constant series at a
/// sample contribute 0 there. Constant leakage makes the whole curve 0.
pub fn cpa_rank(
    traces: ArrayView2<f64>,
    observations: &[PairObservation],
    candidate: u8,
    model: ClassicalLeakage,
) -> Result<RankCurve, StatsError> {
    check_shapes(&traces, observations)?;
    let leak = candidate_leakage(observations, candidate, model);
    let n = leak.len() as f64;
    let l_mean = leak.iter().sum::<f64>() / n;
    let l_var = leak.iter().map(|l| (l - l_mean).powi(2)).sum::<f64>();
    let n_samples = traces.ncols();
    if l_var == 0.0 {
        return Ok(RankCurve::from_curve(vec![0.0; n_samples]));
    }

    let mut sum_t = vec![0f64; n_samples];
    let mut sum_tt = vec![0f64; n_samples];
    let mut sum_tl = vec![0f64; n_samples];
    for (row, &l) in traces.outer_iter().zip(&leak) {
        for (s, &v) in row.iter().enumerate() {
            sum_t[s] += v;
            sum_tt[s] += v * v;
            sum_tl[s] += v * l;
        }
    }
    let curve: Vec<f64> = (0..n_samples)
        .map(|s| {
            let t_var = sum_tt[s] - sum_t[s] * sum_t[s] / n;
            if t_var <= 0.0 {
                return 0.0;
            }
            let cov = sum_tl[s] - sum_t[s] * l_mean;
            (cov / (t_var * l_var).sqrt()).abs()
        })
        .collect();
    Ok(RankCurve::from_curve(curve))
}

/// Precomputed per-sample sort orders, shared across the 16 candidates.
pub struct KsWorkspace {
    order: Vec<Vec<u32>>,
}

impl KsWorkspace {
    pub fn new(traces: ArrayView2<f64>) -> Self {
        let order = (0..traces.ncols())
            .map(|s| {
                let col = traces.column(s);
                let mut idx: Vec<u32> = (0..traces.nrows() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        Self { order }
    }
}

/// Kolmogorov-Smirnov attack for one candidate: traces are grouped into one
/// cluster per distinct leakage value; per sample, the statistic is the
/// cluster-probability-weighted mean of sup_t |F_pooled - F_cluster|,
/// evaluated on the pooled empirical CDF; the rank maximizes over samples.
pub fn ks_rank(
    traces: ArrayView2<f64>,
    observations: &[PairObservation],
    candidate: u8,
    model: ClassicalLeakage,
) -> Result<RankCurve, StatsError> {
    let ws = KsWorkspace::new(traces);
    ks_rank_with(&ws, traces, observations, candidate, model)
}

/// `ks_rank` against a shared workspace (use when scanning candidates).
pub fn ks_rank_with(
    ws: &KsWorkspace,
    traces: ArrayView2<f64>,
    observations: &[PairObservation],
    candidate: u8,
    model: ClassicalLeakage,
) -> Result<RankCurve, StatsError> {
    check_shapes(&traces, observations)?;
    let leak = candidate_leakage(observations, candidate, model);
    let n = leak.len();

    // map distinct leakage values to cluster ids
    let mut levels: Vec<f64> = leak.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let cluster: Vec<usize> = leak
        .iter()
        .map(|l| levels.binary_search_by(|p| p.total_cmp(l)).unwrap())
        .collect();
    let k = levels.len();
    let mut size = vec![0usize; k];
    for &c in &cluster {
        size[c] += 1;
    }

    let mut curve = vec![0f64; traces.ncols()];
    let mut count = vec![0usize; k];
    let mut gap = vec![0f64; k];
    for (s, c) in curve.iter_mut().enumerate() {
        let col = traces.column(s);
        let idx = &ws.order[s];
        count.iter_mut().for_each(|v| *v = 0);
        gap.iter_mut().for_each(|v| *v = 0.0);
        let mut pooled = 0usize;
        let mut i = 0usize;
        while i < n {
            // advance over one tie group of equal sample values
            let v = col[idx[i] as usize];
            let mut j = i;
            while j < n && col[idx[j] as usize] == v {
                count[cluster[idx[j] as usize]] += 1;
                pooled += 1;
                j += 1;
            }
            let f_pool = pooled as f64 / n as f64;
            for c in 0..k {
                let f_c = count[c] as f64 / size[c] as f64;
                let g = (f_pool - f_c).abs();
                if g > gap[c] {
                    gap[c] = g;
                }
            }
            i = j;
        }
        *c = (0..k).map(|c| size[c] as f64 / n as f64 * gap[c]).sum();
    }
    Ok(RankCurve::from_curve(curve))
}

/// Sample Pearson correlation of two equal-length series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewTraces { need: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Spectral NDF estimate at `sample_index` over a window of `w_l` samples:
/// w_l * sigma_i^2 / omega_0, where sigma_i^2 is the across-trace variance
/// of the center sample and omega_0 = (1/w_l) * sum of the window's sample
/// covariance matrix (its DC spectral component). White noise gives ~w_l, a
/// fully correlated window gives ~1.
pub fn ndf_estimate(
    traces: ArrayView2<f64>,
    sample_index: usize,
    w_l: usize,
) -> Result<f64, StatsError> {
    let n = traces.nrows();
    if n < 2 {
        return Err(StatsError::TooFewTraces { need: 2, got: n });
    }
    if w_l < 2 {
        return Err(StatsError::TooFewTraces { need: 2, got: w_l });
    }
    let len = traces.ncols();
    let start = sample_index as i64 - (w_l / 2) as i64;
    let end = start + w_l as i64;
    if start < 0 || end > len as i64 {
        return Err(StatsError::WindowOutOfRange { start, end, len });
    }
    let start = start as usize;

    // sum over the covariance matrix == variance of the per-trace window
    // sum; both with the unbiased (n-1) normalization
    let mut sum_c = 0.0;
    let mut sum_c2 = 0.0;
    let mut sum_s = 0.0;
    let mut sum_s2 = 0.0;
    for row in traces.outer_iter() {
        let c = row[sample_index];
        let s: f64 = (start..start + w_l).map(|j| row[j]).sum();
        sum_c += c;
        sum_c2 += c * c;
        sum_s += s;
        sum_s2 += s * s;
    }
    let nf = n as f64;
    let var_center = (sum_c2 - sum_c * sum_c / nf) / (nf - 1.0);
    let var_sum = (sum_s2 - sum_s * sum_s / nf) / (nf - 1.0);
    let omega0 = var_sum / w_l as f64;
    if omega0 <= 0.0 {
        return Err(StatsError::DegenerateWindow { omega0 });
    }
    Ok(w_l as f64 * var_center / omega0)
}

/// Per-sample mean and unbiased variance across a trace set.
pub fn moments(traces: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>), StatsError> {
    let n = traces.nrows();
    if n < 2 {
        return Err(StatsError::TooFewTraces { need: 2, got: n });
    }
    let cols = traces.ncols();
    let mut sum = vec![0f64; cols];
    let mut sum2 = vec![0f64; cols];
    for row in traces.outer_iter() {
        for (s, &v) in row.iter().enumerate() {
            sum[s] += v;
            sum2[s] += v * v;
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let var: Vec<f64> = sum
        .iter()
        .zip(&sum2)
        .map(|(&s, &s2)| (s2 - s * s / nf) / (nf - 1.0))
        .collect();
    Ok((mean, var))
}
