use ndarray::Array2;
use scarl_core::rl::{run_clustering, RlConfig};

fn main() {
    let n = 200;
    let mut vals = Vec::with_capacity(n);
    for i in 0..n {
        let center = if i < n / 2 { -1.0 } else { 1.0 };
        vals.push(center + ((i * 37 % 19) as f64 - 9.0) * 0.005);
    }
    let f = Array2::from_shape_vec((n, 1), vals.clone()).unwrap();

    // brute-force optimum over threshold splits
    let mut sorted = vals.clone();
    sorted.sort_by(f64::total_cmp);
    let mut best = 0.0f64;
    for k in 1..n {
        let lo: f64 = sorted[..k].iter().sum::<f64>() / k as f64;
        let hi: f64 = sorted[k..].iter().sum::<f64>() / (n - k) as f64;
        best = best.max((hi - lo).abs());
    }
    println!("brute-force optimum: {best:.4}");

    for (alr, clr) in [(1e-3, 1e-3), (3e-3, 3e-3), (1e-2, 1e-2), (1e-3, 1e-2), (3e-3, 1e-2)] {
        let mut wins = 0;
        let mut results = Vec::new();
        for seed in 0..5u64 {
            let cfg = RlConfig { actor_lr: alr, critic_lr: clr, seed, ..RlConfig::default() };
            let t = std::time::Instant::now();
            let out = run_clustering(&f, &cfg).unwrap();
            let inter = out.best_state.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            let p0 = out.assignment.p0;
            let ok = inter >= 0.9 * best && (p0 - 0.5).abs() <= 0.05;
            if ok { wins += 1; }
            results.push(format!("seed{seed}: inter={inter:.3} p0={p0:.3} best_step={} ({:.1}s)", out.best_step, t.elapsed().as_secs_f64()));
        }
        println!("alr={alr:.0e} clr={clr:.0e}: {wins}/5 pass");
        for r in results { println!("   {r}"); }
    }
}
