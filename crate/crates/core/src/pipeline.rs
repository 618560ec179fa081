//! End-to-end attack orchestration over a trace campaign: classical
//! DPA/CPA/KS candidate ranking, the full autoencoder + RL + leakage-fit
//! path, rank-versus-trace-count sweeps, and NDF curves.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ascon;
use crate::autoencoder::{self, AutoencoderConfig, SeqAutoencoder};
use crate::derive_seed;
use crate::leakfit::{self, RankEntry, RankTable};
use crate::nn::NnError;
use crate::prep::{self, PrepError, WindowSpec};
use crate::rl::{self, RlConfig, RlError, StepRecord};
use crate::sim::{SimError, TraceSet};
use crate::stats::{self, ClassicalLeakage, StatsError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Dpa,
    Cpa,
    Ks,
    Scarl,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AttackKind::Dpa => "dpa",
            AttackKind::Cpa => "cpa",
            AttackKind::Ks => "ks",
            AttackKind::Scarl => "scarl",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Attacked S-box pair index (S-boxes 2p and 2p+1).
    pub pair: usize,
    /// Extraction-window slack: window length = samples_per_clock + delta_l.
    pub delta_l: usize,
    /// Leakage-model truncation order.
    pub m0: usize,
    pub seed: u64,
    /// Model used by the classical attacks.
    pub classical_model: ClassicalLeakage,
    pub autoencoder: AutoencoderConfig,
    pub rl: RlConfig,
    /// Attack only the first N traces of the campaign.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_traces: Option<usize>,
    /// Override when the campaign metadata lacks a config echo.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_per_clock: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iv: Option<u64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            pair: 0,
            delta_l: 24,
            m0: 2,
            seed: 0,
            classical_model: ClassicalLeakage::HammingWeight,
            autoencoder: AutoencoderConfig::default(),
            rl: RlConfig::default(),
            max_traces: None,
            samples_per_clock: None,
            iv: None,
        }
    }
}

/// SCARL-phase artifacts worth reporting.
pub struct ScarlDetails {
    pub ae_history: Vec<f64>,
    pub rl_history: Vec<StepRecord>,
    pub rl_best_step: usize,
    pub rl_best_reward: f64,
    /// Raw inter-cluster state at the best RL step.
    pub rl_best_state: Vec<f64>,
    pub model: SeqAutoencoder,
    pub features: Array2<f64>,
}

pub struct AttackOutcome {
    pub kind: AttackKind,
    pub pair: usize,
    pub seed: u64,
    pub traces_used: usize,
    pub table: RankTable,
    pub true_candidate: Option<u8>,
    /// Present iff the campaign carries a ground-truth key.
    pub verdict: Option<bool>,
    pub scarl: Option<ScarlDetails>,
    pub timing_secs: f64,
}

fn resolve_geometry(ts: &TraceSet, cfg: &AttackConfig) -> Result<(usize, u64), PipelineError> {
    let spc = cfg
        .samples_per_clock
        .or_else(|| ts.config.as_ref().map(|c| c.samples_per_clock as usize))
        .ok_or_else(|| {
            PipelineError::Data("samples_per_clock unknown: no config echo and no override".into())
        })?;
    let iv = cfg
        .iv
        .or_else(|| ts.config.as_ref().map(|c| c.iv))
        .unwrap_or(ascon::ASCON128_IV);
    Ok((spc, iv))
}

fn limited(ts: &TraceSet, cfg: &AttackConfig) -> Result<TraceSet, PipelineError> {
    let n = cfg.max_traces.map_or(ts.len(), |m| m.min(ts.len()));
    if n < 2 {
        return Err(PipelineError::Data(format!("need at least 2 traces, have {n}")));
    }
    Ok(TraceSet {
        traces: ts.traces[..n].to_vec(),
        config: ts.config.clone(),
        ground_truth_key: ts.ground_truth_key,
    })
}

fn windows_matrix(raw: &[Vec<f32>]) -> Array2<f64> {
    let rows = raw.len();
    let cols = raw[0].len();
    let mut m = Array2::zeros((rows, cols));
    for (r, w) in raw.iter().enumerate() {
        for (c, &v) in w.iter().enumerate() {
            m[[r, c]] = v as f64;
        }
    }
    m
}

fn classical_table(
    windows: &Array2<f64>,
    observations: &[ascon::PairObservation],
    kind: AttackKind,
    model: ClassicalLeakage,
) -> Result<RankTable, PipelineError> {
    let ks_ws = match kind {
        AttackKind::Ks => Some(stats::KsWorkspace::new(windows.view())),
        _ => None,
    };
    let entries: Vec<RankEntry> = (0..16u8)
        .into_par_iter()
        .map(|candidate| {
            let result = match kind {
                AttackKind::Dpa => stats::dpa_rank(windows.view(), observations, candidate, model),
                AttackKind::Cpa => stats::cpa_rank(windows.view(), observations, candidate, model),
                AttackKind::Ks => stats::ks_rank_with(
                    ks_ws.as_ref().unwrap(),
                    windows.view(),
                    observations,
                    candidate,
                    model,
                ),
                AttackKind::Scarl => unreachable!("scarl handled separately"),
            };
            match result {
                Ok(curve) => RankEntry {
                    candidate,
                    rank: curve.statistic,
                    argmax_dim: curve.argmax_sample,
                    detail: curve.per_sample,
                    degenerate: false,
                },
                // undefined statistic: candidate ranked last
                Err(StatsError::EmptyCluster) => RankEntry {
                    candidate,
                    rank: -1.0,
                    argmax_dim: 0,
                    detail: Vec::new(),
                    degenerate: true,
                },
                Err(e) => panic!("classical rank failed: {e}"),
            }
        })
        .collect();
    let mut entries = entries;
    entries.sort_by(|a, b| {
        b.rank
            .partial_cmp(&a.rank)
            .expect("finite ranks")
            .then(a.candidate.cmp(&b.candidate))
    });
    Ok(RankTable { entries })
}

/// Runs one attack of the chosen kind over one S-box pair.
pub fn run_attack(
    ts: &TraceSet,
    kind: AttackKind,
    cfg: &AttackConfig,
) -> Result<AttackOutcome, PipelineError> {
    let start = std::time::Instant::now();
    if cfg.pair >= 32 {
        return Err(PipelineError::Data(format!("pair {} out of range", cfg.pair)));
    }
    let ts = limited(ts, cfg)?;
    let (spc, iv) = resolve_geometry(&ts, cfg)?;
    let spec = WindowSpec { samples_per_clock: spc, delta_l: cfg.delta_l };
    let pair_data = prep::pair_windows(&ts, iv, cfg.pair, &spec)?;

    let (table, scarl) = match kind {
        AttackKind::Scarl => {
            let seqs: Vec<prep::WindowSequence> = pair_data
                .normalized
                .iter()
                .map(|n| prep::sliding_windows(n, cfg.autoencoder.window, cfg.autoencoder.stride))
                .collect::<Result<_, _>>()?;
            let (model, ae_history) =
                autoencoder::train_autoencoder(&seqs, &cfg.autoencoder, derive_seed(cfg.seed, 1))?;
            let features = model.encode_set(&seqs)?;
            let rl_cfg = RlConfig { seed: derive_seed(cfg.seed, 2), ..cfg.rl.clone() };
            let outcome = rl::run_clustering(&features, &rl_cfg)?;
            let table = leakfit::enumerate_candidates(
                features.view(),
                &pair_data.observations,
                &outcome.labels_l,
                cfg.m0,
            );
            let details = ScarlDetails {
                ae_history,
                rl_best_step: outcome.best_step,
                rl_best_reward: outcome.best_reward,
                rl_best_state: outcome.best_state.to_vec(),
                rl_history: outcome.history,
                model,
                features,
            };
            (table, Some(details))
        }
        _ => {
            let windows = windows_matrix(&pair_data.raw_windows);
            (
                classical_table(&windows, &pair_data.observations, kind, cfg.classical_model)?,
                None,
            )
        }
    };

    let true_candidate = ts
        .ground_truth_key
        .map(|key| ascon::true_pair_candidate(key, cfg.pair));
    let verdict = true_candidate.map(|t| table.top().candidate == t);
    Ok(AttackOutcome {
        kind,
        pair: cfg.pair,
        seed: cfg.seed,
        traces_used: ts.len(),
        table,
        true_candidate,
        verdict,
        scarl,
        timing_secs: start.elapsed().as_secs_f64(),
    })
}

pub struct SweepPoint {
    pub count: usize,
    pub table: RankTable,
    pub verdict: Option<bool>,
}

/// Repeats the attack on campaign prefixes. Points run in parallel and are
/// reported in the given order.
pub fn run_sweep(
    ts: &TraceSet,
    kind: AttackKind,
    cfg: &AttackConfig,
    counts: &[usize],
) -> Result<Vec<SweepPoint>, PipelineError> {
    for &c in counts {
        if c > ts.len() {
            return Err(PipelineError::Data(format!(
                "sweep count {c} exceeds available traces {}",
                ts.len()
            )));
        }
    }
    counts
        .par_iter()
        .map(|&count| {
            let point_cfg = AttackConfig { max_traces: Some(count), ..cfg.clone() };
            let out = run_attack(ts, kind, &point_cfg)?;
            Ok(SweepPoint { count, table: out.table, verdict: out.verdict })
        })
        .collect()
}

pub struct NdfCurves {
    pub window_lengths: Vec<usize>,
    /// One curve per window length; samples whose window does not fit (or
    /// is degenerate) hold NaN.
    pub curves: Vec<Vec<f64>>,
}

/// Per-sample NDF estimates for each requested window length.
pub fn ndf_curves(ts: &TraceSet, window_lengths: &[usize]) -> Result<NdfCurves, PipelineError> {
    if ts.len() < 2 {
        return Err(PipelineError::Data("need at least 2 traces for NDF".into()));
    }
    let rows = ts.len();
    let cols = ts.samples_per_trace();
    let mut m = Array2::zeros((rows, cols));
    for (r, t) in ts.traces.iter().enumerate() {
        for (c, &v) in t.samples.iter().enumerate() {
            m[[r, c]] = v as f64;
        }
    }
    let curves = window_lengths
        .iter()
        .map(|&w_l| {
            (0..cols)
                .into_par_iter()
                .map(|i| stats::ndf_estimate(m.view(), i, w_l).unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    Ok(NdfCurves { window_lengths: window_lengths.to_vec(), curves })
}

/// Delimited-text sweep export: one row per count, the 16 candidate ranks
/// in candidate order, and the true candidate's position when known.
pub fn write_sweep<W: std::io::Write>(mut w: W, points: &[SweepPoint], true_candidate: Option<u8>) -> std::io::Result<()> {
    write!(w, "count")?;
    for c in 0..16 {
        write!(w, "\trank_{c}")?;
    }
    writeln!(w, "\ttrue_position")?;
    for p in points {
        write!(w, "{}", p.count)?;
        let mut by_candidate = [0f64; 16];
        for e in &p.table.entries {
            by_candidate[e.candidate as usize] = e.rank;
        }
        for r in by_candidate {
            write!(w, "\t{r:.12e}")?;
        }
        match true_candidate {
            Some(t) => writeln!(w, "\t{}", p.table.position_of(t))?,
            None => writeln!(w, "\t-")?,
        }
    }
    Ok(())
}

/// Delimited-text NDF export: sample index then one column per window
/// length.
pub fn write_ndf<W: std::io::Write>(mut w: W, curves: &NdfCurves) -> std::io::Result<()> {
    write!(w, "sample")?;
    for wl in &curves.window_lengths {
        write!(w, "\tndf_w{wl}")?;
    }
    writeln!(w)?;
    let cols = curves.curves.first().map_or(0, |c| c.len());
    for i in 0..cols {
        write!(w, "{i}")?;
        for c in &curves.curves {
            if c[i].is_nan() {
                write!(w, "\tnan")?;
            } else {
                write!(w, "\t{:.8}", c[i])?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}
