//! Actor-critic clustering of trace features.
//!
//! The actor maps each normalized feature vector to the mean and spread of
//! a Gaussian from which a continuous action is sampled; thresholding the
//! action at 0.5 assigns the trace to one of two clusters. The environment
//! state is the per-dimension inter-cluster mean difference; the reward is
//! its largest magnitude minus a KL penalty for uneven cluster sizes. One
//! temporal-difference advantage update of critic and actor runs per step.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoencoder::normalize_features;
use crate::nn::{Activation, Adam, AdamConfig, Mlp, MlpCache, MlpGrad, NnError};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("need at least 2 features, got {0}")]
    TooFewFeatures(usize),
    #[error("non-finite TD error at step {step}: {value}")]
    NonFiniteTd { step: usize, value: f64 },
    #[error("every step produced an empty cluster")]
    AllStepsDegenerate,
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub gamma: f64,
    pub max_steps: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    /// Lower bound on the policy spread, keeps log-densities finite.
    pub sigma_floor: f64,
    /// Reward used when a step leaves one cluster empty.
    pub degenerate_penalty: f64,
    /// Fit labels from the sampled actions instead of the actor means.
    pub use_sampled_labels: bool,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            max_steps: 350,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            actor_hidden: 512,
            critic_hidden: 256,
            sigma_floor: 1e-3,
            degenerate_penalty: 10.0,
            use_sampled_labels: false,
            seed: 0,
        }
    }
}

/// Policy network: two ReLU hidden layers, two sigmoid outputs
/// (mean and spread of the per-trace action distribution).
pub struct ActorNet {
    pub mlp: Mlp,
    pub sigma_floor: f64,
}

impl ActorNet {
    pub fn new(input_dim: usize, hidden: usize, sigma_floor: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            mlp: Mlp::new(
                &[input_dim, hidden, hidden, 2],
                Activation::Relu,
                Activation::Sigmoid,
                rng,
            ),
            sigma_floor,
        }
    }
}

/// Value network: two ReLU hidden layers, scalar linear output.
pub struct CriticNet {
    pub mlp: Mlp,
}

impl CriticNet {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            mlp: Mlp::new(
                &[input_dim, hidden, hidden, 1],
                Activation::Relu,
                Activation::Linear,
                rng,
            ),
        }
    }

    pub fn value(&self, state: &Array1<f64>) -> f64 {
        let x = state.clone().insert_axis(ndarray::Axis(0));
        self.mlp.infer(&x)[[0, 0]]
    }
}

/// One batch action over all traces.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub actions: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// true = cluster C_1 (action >= 0.5)
    pub labels: Vec<bool>,
    pub p0: f64,
    pub p1: f64,
}

/// Samples one action per trace from the actor's per-trace Gaussians and
/// thresholds at 0.5. Returns the forward cache for the later policy
/// gradient.
pub fn act(
    actor: &ActorNet,
    features_norm: &Array2<f64>,
    rng: &mut ChaCha8Rng,
) -> (ClusterAssignment, MlpCache) {
    let n = features_norm.nrows();
    let (out, cache) = actor.mlp.forward(features_norm);
    let mut actions = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut n1 = 0usize;
    for j in 0..n {
        let m = out[[j, 0]];
        let s = out[[j, 1]].max(actor.sigma_floor);
        let z: f64 = rng.sample(StandardNormal);
        let a = m + s * z;
        let one = a >= 0.5;
        if one {
            n1 += 1;
        }
        actions.push(a);
        mu.push(m);
        sigma.push(s);
        labels.push(one);
    }
    let p1 = n1 as f64 / n as f64;
    (
        ClusterAssignment { actions, mu, sigma, labels, p0: 1.0 - p1, p1 },
        cache,
    )
}

/// Per-dimension mean difference E[C_0] - E[C_1] over the raw features;
/// `None` when either cluster is empty.
pub fn env_state(features_raw: ArrayView2<f64>, labels: &[bool]) -> Option<Array1<f64>> {
    let n = features_raw.nrows();
    let d = features_raw.ncols();
    assert_eq!(labels.len(), n);
    let mut sum0 = Array1::<f64>::zeros(d);
    let mut sum1 = Array1::<f64>::zeros(d);
    let mut n1 = 0usize;
    for (row, &one) in features_raw.outer_iter().zip(labels) {
        if one {
            n1 += 1;
            sum1 += &row;
        } else {
            sum0 += &row;
        }
    }
    let n0 = n - n1;
    if n0 == 0 || n1 == 0 {
        return None;
    }
    Some(sum0 / n0 as f64 - sum1 / n1 as f64)
}

/// Critic input: state divided by its own range. Degenerate ranges
/// (1-D states, constant states) pass through unscaled.
pub fn normalize_state(state: &Array1<f64>) -> Array1<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in state.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    if range > 1e-12 {
        state.mapv(|v| v / range)
    } else {
        state.clone()
    }
}

/// Reward decomposition: (total, inter-cluster term, KL term). The KL
/// penalty is the base-2 divergence of the uniform distribution from the
/// cluster fractions, -(1 + E_Q[log2 P]).
pub fn reward_terms(state: &Array1<f64>, assign: &ClusterAssignment) -> (f64, f64, f64) {
    let inter = state.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let kl = -(1.0 + 0.5 * (assign.p0.log2() + assign.p1.log2()));
    (inter - kl, inter, kl)
}

/// Gradient upstream of the summed Gaussian log-density at the actor's two
/// output neurons, per trace: d/dmu and (floor-gated) d/dsigma.
fn log_density_upstream(actor: &ActorNet, assign: &ClusterAssignment) -> Array2<f64> {
    let n = assign.actions.len();
    let mut up = Array2::zeros((n, 2));
    for j in 0..n {
        let d = assign.actions[j] - assign.mu[j];
        let s = assign.sigma[j];
        up[[j, 0]] = d / (s * s);
        up[[j, 1]] = if s > actor.sigma_floor {
            (d * d - s * s) / (s * s * s)
        } else {
            0.0
        };
    }
    up
}

/// Sum over traces of log N(a_j; mu_j, sigma_j) for a fixed action batch.
pub fn log_density(actor: &ActorNet, features_norm: &Array2<f64>, actions: &[f64]) -> f64 {
    let out = actor.mlp.infer(features_norm);
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    actions
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            let m = out[[j, 0]];
            let s = out[[j, 1]].max(actor.sigma_floor);
            -0.5 * ln_2pi - s.ln() - (a - m) * (a - m) / (2.0 * s * s)
        })
        .sum()
}

/// Analytic actor-parameter gradient of [`log_density`] for the cached
/// forward pass that produced `assign`.
pub fn log_density_grad(actor: &ActorNet, cache: &MlpCache, assign: &ClusterAssignment) -> MlpGrad {
    let up = log_density_upstream(actor, assign);
    let (_, grad) = actor.mlp.backward(cache, &up);
    grad
}

/// One TD-advantage update. The target `r + gamma V(s_next)` treats the
/// next-state value as a constant; the critic descends the squared TD
/// error, the actor ascends `delta * grad log pi`. Returns the TD error.
#[allow(clippy::too_many_arguments)]
pub fn td_update(
    actor: &mut ActorNet,
    critic: &mut CriticNet,
    actor_cache: &MlpCache,
    assign: &ClusterAssignment,
    s_norm: &Array1<f64>,
    reward: f64,
    s_next_norm: &Array1<f64>,
    cfg: &RlConfig,
    adam_actor: &mut Adam,
    adam_critic: &mut Adam,
    step: usize,
) -> Result<f64, RlError> {
    let v_next = critic.value(s_next_norm);
    let x_prev = s_norm.clone().insert_axis(ndarray::Axis(0));
    let (v_prev, critic_cache) = critic.mlp.forward(&x_prev);
    let v_prev = v_prev[[0, 0]];
    let target = reward + cfg.gamma * v_next;
    let delta = target - v_prev;
    if !delta.is_finite() {
        return Err(RlError::NonFiniteTd { step, value: delta });
    }

    let up = Array2::from_elem((1, 1), -2.0 * delta);
    let (_, cgrad) = critic.mlp.backward(&critic_cache, &up);
    adam_critic.step(&mut critic.mlp.param_slices_mut(), &cgrad.slices())?;

    let mut up = log_density_upstream(actor, assign);
    up.mapv_inplace(|v| -delta * v);
    let (_, agrad) = actor.mlp.backward(actor_cache, &up);
    adam_actor.step(&mut actor.mlp.param_slices_mut(), &agrad.slices())?;

    Ok(delta)
}

/// Per-step log of the clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub reward: f64,
    pub inter_cluster: f64,
    pub kl_term: f64,
    pub p0: f64,
    pub td_error: f64,
}

/// Result of a clustering run: the best-reward step's assignment, the
/// labels handed to leakage fitting, and the full step history.
pub struct ClusteringOutcome {
    pub assignment: ClusterAssignment,
    /// Per-trace leakage-fit labels l_j (actor means by default).
    pub labels_l: Vec<f64>,
    pub best_step: usize,
    pub best_reward: f64,
    /// Raw inter-cluster state at the best step.
    pub best_state: Array1<f64>,
    pub history: Vec<StepRecord>,
}

/// Iterates act / observe / reward / update for `max_steps` steps and
/// returns the best-reward assignment. Features arrive raw; the actor sees
/// their per-dimension range normalization, the environment the raw values.
pub fn run_clustering(features_raw: &Array2<f64>, cfg: &RlConfig) -> Result<ClusteringOutcome, RlError> {
    let n = features_raw.nrows();
    if n < 2 {
        return Err(RlError::TooFewFeatures(n));
    }
    let d = features_raw.ncols();
    let features_norm = normalize_features(features_raw);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut actor = ActorNet::new(d, cfg.actor_hidden, cfg.sigma_floor, &mut rng);
    let mut critic = CriticNet::new(d, cfg.critic_hidden, &mut rng);
    let mut adam_actor = Adam::new(AdamConfig::with_lr(cfg.actor_lr), actor.mlp.param_count());
    let mut adam_critic = Adam::new(AdamConfig::with_lr(cfg.critic_lr), critic.mlp.param_count());

    let mut state_raw = Array1::<f64>::zeros(d);
    let mut s_norm = normalize_state(&state_raw);
    let mut history = Vec::with_capacity(cfg.max_steps);
    let mut best: Option<(f64, usize, ClusterAssignment, Array1<f64>)> = None;

    for step in 1..=cfg.max_steps {
        let (assign, cache) = act(&actor, &features_norm, &mut rng);
        let (new_raw, reward, inter, kl, degenerate) =
            match env_state(features_raw.view(), &assign.labels) {
                Some(s) => {
                    let (r, inter, kl) = reward_terms(&s, &assign);
                    (s, r, inter, kl, false)
                }
                None => (
                    state_raw.clone(),
                    -cfg.degenerate_penalty,
                    0.0,
                    cfg.degenerate_penalty,
                    true,
                ),
            };
        let new_norm = normalize_state(&new_raw);
        let delta = td_update(
            &mut actor,
            &mut critic,
            &cache,
            &assign,
            &s_norm,
            reward,
            &new_norm,
            cfg,
            &mut adam_actor,
            &mut adam_critic,
            step,
        )?;
        history.push(StepRecord {
            step,
            reward,
            inter_cluster: inter,
            kl_term: kl,
            p0: assign.p0,
            td_error: delta,
        });
        if !degenerate && best.as_ref().is_none_or(|(r, ..)| reward > *r) {
            best = Some((reward, step, assign, new_raw.clone()));
        }
        state_raw = new_raw;
        s_norm = new_norm;
    }

    let (best_reward, best_step, assignment, best_state) =
        best.ok_or(RlError::AllStepsDegenerate)?;
    let labels_l = if cfg.use_sampled_labels {
        assignment.actions.clone()
    } else {
        assignment.mu.clone()
    };
    Ok(ClusteringOutcome {
        assignment,
        labels_l,
        best_step,
        best_reward,
        best_state,
        history,
    })
}

/// Structured-text history export: step, reward, inter-cluster term,
/// KL term, p0.
pub fn write_history<W: std::io::Write>(mut w: W, history: &[StepRecord]) -> std::io::Result<()> {
    writeln!(w, "step\treward\tinter_cluster\tkl_term\tp0")?;
    for r in history {
        writeln!(
            w,
            "{}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.6}",
            r.step, r.reward, r.inter_cluster, r.kl_term, r.p0
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn toy_actor(d: usize, seed: u64) -> (ActorNet, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = ActorNet::new(d, 8, 1e-3, &mut rng);
        (actor, rng)
    }

    #[test]
    fn deterministic_limit_sends_all_to_one_cluster() {
        // force mu ~ 0.9, sigma ~ floor by biasing the output layer
        let (mut actor, mut rng) = toy_actor(1, 1);
        let last = actor.mlp.layers.last_mut().unwrap();
        last.w.fill(0.0);
        last.b[0] = 2.1972245773362196; // sigmoid -> 0.9
        last.b[1] = -20.0; // sigmoid -> ~0, floored
        let f = Array2::from_shape_vec((5, 1), vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let (assign, _) = act(&actor, &f, &mut rng);
        assert!(assign.labels.iter().all(|&l| l));
        assert_eq!(assign.p1, 1.0);
        for (&m, &s) in assign.mu.iter().zip(&assign.sigma) {
            assert!((m - 0.9).abs() < 1e-9);
            assert_eq!(s, 1e-3);
        }
    }

    #[test]
    fn centered_wide_policy_splits_evenly() {
        let (mut actor, mut rng) = toy_actor(1, 2);
        let last = actor.mlp.layers.last_mut().unwrap();
        last.w.fill(0.0);
        last.b[0] = 0.0; // mu = 0.5
        last.b[1] = 20.0; // sigma ~ 1.0
        let n = 10_000;
        let f = Array2::zeros((n, 1));
        let (assign, _) = act(&actor, &f, &mut rng);
        assert!((assign.p0 - 0.5).abs() < 0.03, "p0 {}", assign.p0);
    }

    #[test]
    fn act_is_seed_deterministic() {
        let f = Array2::from_shape_vec((6, 2), (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let run = || {
            let (actor, mut rng) = toy_actor(2, 33);
            let (a, _) = act(&actor, &f, &mut rng);
            (a.actions, a.labels)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn labels_match_threshold_always() {
        let (actor, mut rng) = toy_actor(3, 4);
        let f = Array2::from_shape_vec((64, 3), (0..192).map(|i| (i as f64 * 0.37).sin()).collect())
            .unwrap();
        for _ in 0..10 {
            let (a, _) = act(&actor, &f, &mut rng);
            for (&act_v, &lab) in a.actions.iter().zip(&a.labels) {
                assert_eq!(lab, act_v >= 0.5);
            }
            assert!((a.p0 + a.p1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn env_state_basics() {
        let f = Array2::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap();
        // {0} in C_0, {1} in C_1 -> s = -1
        let s = env_state(f.view(), &[false, true]).unwrap();
        assert_eq!(s, arr1(&[-1.0]));
        // swapping labels negates
        let s2 = env_state(f.view(), &[true, false]).unwrap();
        assert_eq!(s2, arr1(&[1.0]));
        // identical cluster contents -> zero state
        let g = Array2::from_shape_vec((4, 1), vec![2.0, 2.0, 2.0, 2.0]).unwrap();
        let s3 = env_state(g.view(), &[false, true, false, true]).unwrap();
        assert_eq!(s3, arr1(&[0.0]));
        // empty cluster
        assert!(env_state(f.view(), &[true, true]).is_none());
    }

    #[test]
    fn reward_terms_match_formula() {
        let mk = |p0: f64, n: usize| {
            let n0 = (p0 * n as f64).round() as usize;
            ClusterAssignment {
                actions: vec![0.0; n],
                mu: vec![0.0; n],
                sigma: vec![0.1; n],
                labels: (0..n).map(|i| i >= n0).collect(),
                p0,
                p1: 1.0 - p0,
            }
        };
        // even split: KL exactly 0, r = max|s|
        let s = arr1(&[0.3, -0.8]);
        let (r, inter, kl) = reward_terms(&s, &mk(0.5, 8));
        assert_eq!(kl, 0.0);
        assert_eq!(inter, 0.8);
        assert_eq!(r, 0.8);
        // direct evaluation oracle for p0 = 0.25
        let (_, _, kl) = reward_terms(&s, &mk(0.25, 8));
        let expect = -(1.0 + 0.5 * (0.25f64.log2() + 0.75f64.log2()));
        assert!((kl - expect).abs() < 1e-12);
        assert!((kl - 0.20751874963942185).abs() < 1e-10);
        // zero state, even split: r = 0
        let (r, ..) = reward_terms(&arr1(&[0.0]), &mk(0.5, 8));
        assert_eq!(r, 0.0);
    }

    #[test]
    fn state_normalization_guards_degenerate_ranges() {
        let s = arr1(&[4.0]);
        assert_eq!(normalize_state(&s), s);
        let s = arr1(&[1.0, 3.0]);
        assert_eq!(normalize_state(&s), arr1(&[0.5, 1.5]));
    }

    #[test]
    fn zero_reward_zero_critic_gives_zero_td_and_no_actor_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut actor = ActorNet::new(1, 4, 1e-3, &mut rng);
        let mut critic = CriticNet::new(1, 4, &mut rng);
        for layer in critic.mlp.layers.iter_mut() {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
        let f = Array2::from_shape_vec((3, 1), vec![0.1, 0.2, 0.3]).unwrap();
        let (assign, cache) = act(&actor, &f, &mut rng);
        let before: Vec<f64> = actor.mlp.param_slices().concat();
        let cfg = RlConfig::default();
        let mut aa = Adam::new(AdamConfig::default(), actor.mlp.param_count());
        let mut ac = Adam::new(AdamConfig::default(), critic.mlp.param_count());
        let s = arr1(&[0.0]);
        let delta = td_update(
            &mut actor, &mut critic, &cache, &assign, &s, 0.0, &s, &cfg, &mut aa, &mut ac, 1,
        )
        .unwrap();
        assert_eq!(delta, 0.0);
        let after: Vec<f64> = actor.mlp.param_slices().concat();
        assert_eq!(before, after);
    }

    #[test]
    fn gamma_zero_target_is_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut actor = ActorNet::new(1, 4, 1e-3, &mut rng);
        let mut critic = CriticNet::new(1, 4, &mut rng);
        for layer in critic.mlp.layers.iter_mut() {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
        let f = Array2::from_shape_vec((2, 1), vec![0.4, 0.6]).unwrap();
        let (assign, cache) = act(&actor, &f, &mut rng);
        let cfg = RlConfig { gamma: 0.0, ..RlConfig::default() };
        let mut aa = Adam::new(AdamConfig::default(), actor.mlp.param_count());
        let mut ac = Adam::new(AdamConfig::default(), critic.mlp.param_count());
        let s = arr1(&[0.0]);
        let delta = td_update(
            &mut actor, &mut critic, &cache, &assign, &s, 1.25, &s, &cfg, &mut aa, &mut ac, 1,
        )
        .unwrap();
        assert_eq!(delta, 1.25);
    }

    #[test]
    fn log_density_gradient_matches_finite_differences() {
        use crate::nn::gradcheck;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut actor = ActorNet::new(2, 6, 1e-3, &mut rng);
        let f = Array2::from_shape_vec((5, 2), (0..10).map(|i| (i as f64 * 0.29).cos()).collect())
            .unwrap();
        let (assign, cache) = act(&actor, &f, &mut rng);
        let grad = log_density_grad(&actor, &cache, &assign);
        let analytic = gradcheck::flatten(&grad.slices());
        let actions = assign.actions.clone();
        let numeric = gradcheck::central_difference(
            &mut actor,
            |a| a.mlp.param_slices_mut(),
            |a| log_density(a, &f, &actions),
            1e-5,
        );
        let err = gradcheck::max_rel_error(&analytic, &numeric);
        assert!(err < 1e-4, "max rel error {err}");
    }

    #[test]
    fn identical_features_converge_to_nonpositive_reward() {
        let f = Array2::from_elem((24, 2), 1.5);
        let cfg = RlConfig {
            max_steps: 40,
            actor_hidden: 16,
            critic_hidden: 8,
            seed: 9,
            ..RlConfig::default()
        };
        let out = run_clustering(&f, &cfg).unwrap();
        // max|s| = 0 for any split, so reward = -KL <= 0
        assert!(out.best_reward <= 0.0);
        for rec in &out.history {
            assert!(rec.inter_cluster.abs() < 1e-12);
        }
    }

    #[test]
    fn reward_decomposition_holds_at_every_step() {
        let mut vals = Vec::new();
        for i in 0..30 {
            vals.push(if i < 15 { -1.0 } else { 1.0 } + (i as f64) * 1e-3);
        }
        let f = Array2::from_shape_vec((30, 1), vals).unwrap();
        let cfg = RlConfig {
            max_steps: 30,
            actor_hidden: 16,
            critic_hidden: 8,
            seed: 3,
            ..RlConfig::default()
        };
        let out = run_clustering(&f, &cfg).unwrap();
        for rec in &out.history {
            assert_eq!(rec.reward, rec.inter_cluster - rec.kl_term);
        }
    }

    #[test]
    fn seeded_rerun_reproduces_history_bit_exactly() {
        let f = Array2::from_shape_vec((20, 2), (0..40).map(|i| (i as f64 * 0.11).sin()).collect())
            .unwrap();
        let cfg = RlConfig {
            max_steps: 25,
            actor_hidden: 12,
            critic_hidden: 6,
            seed: 17,
            ..RlConfig::default()
        };
        let a = run_clustering(&f, &cfg).unwrap();
        let b = run_clustering(&f, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best_step, b.best_step);
        assert_eq!(a.labels_l, b.labels_l);
    }
}
