//! Command implementations and report emission.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

use scarl_core::pipeline::{
    self, AttackConfig, AttackKind, AttackOutcome, NdfCurves, SweepPoint,
};
use scarl_core::sim::simulate_campaign;
use scarl_core::{autoencoder, derive_seed, leakfit, prep, rl};

use crate::config::{self, CliError, SimSection};

pub fn simulate(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    traces: Option<u32>,
) -> Result<(), CliError> {
    let file = config::load(config_path)?;
    let mut section: SimSection = file
        .sim
        .ok_or_else(|| CliError::Config(format!("{} has no [sim] section", config_path.display())))?;
    if let Some(s) = seed {
        section.config.rng_seed = s;
    }
    if let Some(n) = traces {
        section.config.num_encryptions = n;
    }
    section.config.validate()?;

    let key = match &section.key_hex {
        Some(h) => config::parse_key_hex(h)?,
        None => {
            // drawn from a dedicated stream so nonces stay unchanged
            let hi = derive_seed(section.config.rng_seed, 0x6b65);
            let lo = derive_seed(section.config.rng_seed, 0x7931);
            ((hi as u128) << 64) | lo as u128
        }
    };
    if let Some(db) = section.snr_db {
        let pair = section.snr_pair.unwrap_or(0);
        section.config.noise_sigma =
            scarl_core::sim::sigma_for_snr_db(&section.config, key, pair, db);
    }

    let ts = simulate_campaign(&section.config, key)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    prep::write_traceset(&ts, out)?;
    println!(
        "wrote {} traces x {} samples to {}",
        ts.len(),
        ts.samples_per_trace(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub candidate: u8,
    pub rank: f64,
    pub argmax_dim: usize,
    pub degenerate: bool,
}

/// Machine-readable attack summary (`summary.toml`).
#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    pub kind: String,
    pub pair: usize,
    pub seed: u64,
    pub traces_used: usize,
    pub top_candidate: u8,
    pub top_rank: f64,
    pub true_candidate: Option<u8>,
    pub verdict: Option<bool>,
    pub timing_secs: f64,
    pub table: Vec<SummaryRow>,
    pub attack_config: AttackConfig,
}

fn render_report(summary: &Summary) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{} attack on S-box pair {} ({} traces, seed {})\n",
        summary.kind, summary.pair, summary.traces_used, summary.seed
    ));
    match (summary.true_candidate, summary.verdict) {
        (Some(t), Some(v)) => {
            s.push_str(&format!(
                "ground truth candidate: {t}  ->  {}\n",
                if v { "RECOVERED" } else { "not recovered" }
            ));
        }
        _ => s.push_str("ground truth unavailable\n"),
    }
    s.push_str(&format!("completed in {:.2}s\n\n", summary.timing_secs));
    s.push_str("rank order (best first):\n");
    for (i, row) in summary.table.iter().enumerate() {
        s.push_str(&format!(
            "{:2}. candidate {:2}  rank {:>14.6e}  argmax {}{}\n",
            i + 1,
            row.candidate,
            row.rank,
            row.argmax_dim,
            if row.degenerate { "  (degenerate)" } else { "" }
        ));
    }
    s
}

fn summary_of(out: &AttackOutcome, cfg: &AttackConfig, command: &str) -> Summary {
    Summary {
        command: command.into(),
        kind: out.kind.to_string(),
        pair: out.pair,
        seed: out.seed,
        traces_used: out.traces_used,
        top_candidate: out.table.top().candidate,
        top_rank: out.table.top().rank,
        true_candidate: out.true_candidate,
        verdict: out.verdict,
        timing_secs: out.timing_secs,
        table: out
            .table
            .entries
            .iter()
            .map(|e| SummaryRow {
                candidate: e.candidate,
                rank: e.rank,
                argmax_dim: e.argmax_dim,
                degenerate: e.degenerate,
            })
            .collect(),
        attack_config: cfg.clone(),
    }
}

fn load_attack_config(
    config_path: Option<&Path>,
    pair: Option<usize>,
    seed: Option<u64>,
    traces: Option<usize>,
) -> Result<AttackConfig, CliError> {
    let mut cfg = match config_path {
        Some(p) => config::load(p)?.attack.unwrap_or_default(),
        None => AttackConfig::default(),
    };
    if let Some(p) = pair {
        cfg.pair = p;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = traces {
        cfg.max_traces = Some(t);
    }
    if cfg.pair >= 32 {
        return Err(CliError::Config(format!("pair {} out of range 0..32", cfg.pair)));
    }
    Ok(cfg)
}

#[allow(clippy::too_many_arguments)]
pub fn attack(
    traceset: &Path,
    kind: AttackKind,
    out_dir: &Path,
    config_path: Option<&Path>,
    pair: Option<usize>,
    seed: Option<u64>,
    traces: Option<usize>,
    dump_features: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = load_attack_config(config_path, pair, seed, traces)?;
    let ts = prep::read_traceset(traceset)?;
    let outcome = pipeline::run_attack(&ts, kind, &cfg)?;
    fs::create_dir_all(out_dir)?;

    let mut table_file = fs::File::create(out_dir.join("rank_table.txt"))?;
    leakfit::write_rank_table(&mut table_file, &outcome.table)?;

    if let Some(details) = &outcome.scarl {
        let mut f = fs::File::create(out_dir.join("ae_loss.txt"))?;
        writeln!(f, "epoch\tmse")?;
        for (e, l) in details.ae_history.iter().enumerate() {
            writeln!(f, "{e}\t{l:.12e}")?;
        }
        let mut f = fs::File::create(out_dir.join("rl_history.txt"))?;
        rl::write_history(&mut f, &details.rl_history)?;
        if let Some(path) = dump_features {
            autoencoder::write_features(path, &details.features)?;
        }
        details
            .model
            .save(&out_dir.join("autoencoder.scnn"))
            .map_err(|e| CliError::Data(e.to_string()))?;
    }

    let summary = summary_of(&outcome, &cfg, "attack");
    let toml_text = toml::to_string_pretty(&summary)
        .map_err(|e| CliError::Data(format!("summary serialization: {e}")))?;
    fs::write(out_dir.join("summary.toml"), toml_text)?;
    let report = render_report(&summary);
    fs::write(out_dir.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

pub fn sweep(
    traceset: &Path,
    kind: AttackKind,
    counts: &[usize],
    out_dir: &Path,
    config_path: Option<&Path>,
    pair: Option<usize>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let cfg = load_attack_config(config_path, pair, seed, None)?;
    let ts = prep::read_traceset(traceset)?;
    let points: Vec<SweepPoint> = pipeline::run_sweep(&ts, kind, &cfg, counts)?;
    fs::create_dir_all(out_dir)?;
    let true_candidate = ts
        .ground_truth_key
        .map(|k| scarl_core::ascon::true_pair_candidate(k, cfg.pair));
    let mut f = fs::File::create(out_dir.join("sweep.txt"))?;
    pipeline::write_sweep(&mut f, &points, true_candidate)?;
    for p in &points {
        println!(
            "count {:>7}: top candidate {:2}{}",
            p.count,
            p.table.top().candidate,
            match p.verdict {
                Some(true) => "  (correct)".to_string(),
                Some(false) => "  (wrong)".to_string(),
                None => String::new(),
            }
        );
    }
    Ok(())
}

pub fn ndf(traceset: &Path, out_dir: &Path, window_lengths: &[usize]) -> Result<(), CliError> {
    if window_lengths.is_empty() || window_lengths.iter().any(|&w| w < 2) {
        return Err(CliError::Config("window lengths must be >= 2".into()));
    }
    let ts = prep::read_traceset(traceset)?;
    let curves: NdfCurves = pipeline::ndf_curves(&ts, window_lengths)?;
    fs::create_dir_all(out_dir)?;
    let mut f = fs::File::create(out_dir.join("ndf.txt"))?;
    pipeline::write_ndf(&mut f, &curves)?;
    println!(
        "wrote NDF curves for window lengths {:?} over {} samples",
        curves.window_lengths,
        curves.curves.first().map_or(0, Vec::len)
    );
    Ok(())
}

pub fn report(dir: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(dir.join("summary.toml"))
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.join("summary.toml").display())))?;
    let summary: Summary =
        toml::from_str(&text).map_err(|e| CliError::Data(format!("malformed summary: {e}")))?;
    print!("{}", render_report(&summary));
    Ok(())
}
