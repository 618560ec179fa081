use scarl_core::pipeline::{run_attack, AttackConfig, AttackKind};
use scarl_core::sim::{sigma_for_snr_db, simulate_campaign, LeakageKind, SimConfig};

fn planted_key() -> u128 {
    // pair-0 candidate forced to 1: (k0, k64, k1, k65) = (0,0,0,1)
    let hi: u64 = 0x1357_9bdf_0246_8ace & 0x3fff_ffff_ffff_ffff;
    let lo: u64 = (0x8ace_1357_9bdf_0246 & 0x3fff_ffff_ffff_ffff) | (1 << 62);
    ((hi as u128) << 64) | lo as u128
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "hw".into());
    let seed_arg: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let key = planted_key();
    let leak = if which == "msb" { LeakageKind::Msb } else { LeakageKind::HammingWeight };
    let mut cfg = SimConfig {
        num_encryptions: 4000,
        samples_per_clock: 125,
        sbox_count: 64,
        leakage: leak,
        leakage_scale: 1.0,
        smear_halfwidth: 12,
        rng_seed: 0xC0FFEE,
        ..SimConfig::default()
    };
    cfg.noise_sigma = sigma_for_snr_db(&cfg, key, 0, 0.0);
    eprintln!("[{which}] sigma for 0 dB: {:.4}", cfg.noise_sigma);
    let t = std::time::Instant::now();
    let ts = simulate_campaign(&cfg, key).unwrap();
    eprintln!("[{which}] simulated in {:.1}s", t.elapsed().as_secs_f64());

    let acfg = AttackConfig { seed: seed_arg, ..AttackConfig::default() };
    let t = std::time::Instant::now();
    let out = run_attack(&ts, AttackKind::Scarl, &acfg).unwrap();
    eprintln!("[{which}] attack in {:.1}s", t.elapsed().as_secs_f64());
    let d = out.scarl.as_ref().unwrap();
    eprintln!(
        "[{which}] ae loss: e0={:.5} e1={:.5} e25={:.5}; rl best step {} reward {:.4}",
        d.ae_history[0], d.ae_history[1], d.ae_history[25], d.rl_best_step, d.rl_best_reward
    );
    eprintln!("[{which}] true candidate: {:?}, verdict: {:?}", out.true_candidate, out.verdict);
    for e in out.table.entries.iter().take(5) {
        eprintln!("[{which}]   cand {:2} rank {:.5} dim {}", e.candidate, e.rank, e.argmax_dim);
    }
}
