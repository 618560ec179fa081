//! Numerical-normal-form leakage models over 5-bit sensitive values:
//! monomial basis, least-squares fitting against cluster labels, low-order
//! truncation, reclustering and candidate ranking.

use nalgebra::DMatrix;
use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::ascon::{self, PairObservation};

/// Number of bits of the sensitive variable.
pub const M_BITS: usize = 5;
/// Full basis size: constant term plus the 31 non-constant monomials.
pub const BASIS_LEN: usize = 32;

/// Non-constant exponent masks ordered by (degree, mask value). Frozen so
/// coefficient vectors serialize reproducibly.
pub fn monomial_masks() -> &'static [u8; 31] {
    const MASKS: [u8; 31] = [
        // degree 1
        1, 2, 4, 8, 16, // degree 2
        3, 5, 6, 9, 10, 12, 17, 18, 20, 24, // degree 3
        7, 11, 13, 14, 19, 21, 22, 25, 26, 28, // degree 4
        15, 23, 27, 29, 30, // degree 5
        31,
    ];
    &MASKS
}

/// Degree of the basis element at `index` (0 = constant term).
pub fn basis_degree(index: usize) -> usize {
    if index == 0 {
        0
    } else {
        monomial_masks()[index - 1].count_ones() as usize
    }
}

/// Number of basis elements of degree <= `m0`.
pub fn basis_len(m0: usize) -> usize {
    1 + monomial_masks()
        .iter()
        .filter(|u| (u.count_ones() as usize) <= m0)
        .count()
}

/// Monomial vector of `x`: leading 1 for the constant term, then X^U for
/// each mask of degree <= `m0` in the frozen order. `X^U` is 1 iff every
/// bit selected by U is set in x.
pub fn monomial_vector(x: u8, m0: usize) -> Vec<f64> {
    assert!(x < 32, "value {x} out of range");
    let mut v = Vec::with_capacity(basis_len(m0));
    v.push(1.0);
    for &u in monomial_masks() {
        if (u.count_ones() as usize) <= m0 {
            v.push(if x & u == u { 1.0 } else { 0.0 });
        }
    }
    v
}

/// A fitted leakage model: one real coefficient per basis element.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakageModel {
    pub coefficients: Vec<f64>,
}

impl LeakageModel {
    pub fn new(coefficients: Vec<f64>) -> Self {
        assert_eq!(coefficients.len(), BASIS_LEN, "need a full coefficient vector");
        Self { coefficients }
    }

    /// Full-order evaluation at a 5-bit value.
    pub fn eval(&self, x: u8) -> f64 {
        self.eval_truncated(x, M_BITS)
    }

    /// Evaluation with every coefficient of degree > `m0` zeroed.
    pub fn eval_truncated(&self, x: u8, m0: usize) -> f64 {
        assert!(x < 32, "value {x} out of range");
        let mut acc = self.coefficients[0];
        for (j, &u) in monomial_masks().iter().enumerate() {
            if (u.count_ones() as usize) <= m0 && x & u == u {
                acc += self.coefficients[j + 1];
            }
        }
        acc
    }

    /// Copy with coefficients of degree > `m0` set to zero.
    pub fn truncated(&self, m0: usize) -> Self {
        let mut c = self.coefficients.clone();
        for (i, coef) in c.iter_mut().enumerate() {
            if basis_degree(i) > m0 {
                *coef = 0.0;
            }
        }
        Self { coefficients: c }
    }
}

/// Minimum-norm least-squares fit of the full 32-monomial model to labels.
///
/// The design has at most 32 distinct rows, so the problem is collapsed to
/// one weighted row per observed value before the SVD: within-group label
/// variance is orthogonal to the column space and cannot affect the
/// solution. Singular values below 1e-10 x sigma_max are dropped, which
/// makes the solution the canonical min-norm one on rank-deficient designs.
pub fn fit_leakage(labels: &[f64], values: &[u8]) -> LeakageModel {
    assert_eq!(labels.len(), values.len(), "label/value length mismatch");
    assert!(!labels.is_empty(), "need at least one sample");
    assert!(labels.iter().all(|l| l.is_finite()), "labels must be finite");

    let mut count = [0usize; 32];
    let mut sum = [0f64; 32];
    for (&l, &x) in labels.iter().zip(values) {
        assert!(x < 32, "value {x} out of range");
        count[x as usize] += 1;
        sum[x as usize] += l;
    }

    let observed: Vec<usize> = (0..32).filter(|&x| count[x] > 0).collect();
    let rows = observed.len();
    let mut a = DMatrix::<f64>::zeros(rows, BASIS_LEN);
    let mut y = DMatrix::<f64>::zeros(rows, 1);
    for (r, &x) in observed.iter().enumerate() {
        let w = (count[x] as f64).sqrt();
        let mono = monomial_vector(x as u8, M_BITS);
        for (c, &m) in mono.iter().enumerate() {
            a[(r, c)] = w * m;
        }
        y[(r, 0)] = w * sum[x] / count[x] as f64;
    }

    let svd = a.svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let coef = svd
        .solve(&y, 1e-10 * sigma_max)
        .expect("SVD solve cannot fail when U and V are computed");
    LeakageModel::new(coef.column(0).iter().cloned().collect())
}

/// Outcome of reclustering features under a low-order model.
#[derive(Debug, Clone)]
pub struct ReclusterRank {
    /// Max over feature dimensions of the absolute inter-cluster mean gap.
    pub rank: f64,
    /// Dimension attaining the max (0 when degenerate).
    pub argmax_dim: usize,
    /// Per-dimension absolute mean differences.
    pub detail: Vec<f64>,
    /// True when one cluster came out empty and the rank was forced to 0.
    pub degenerate: bool,
}

/// Threshold the low-order leakages at their mean (ties to the low cluster)
/// and rank by the max absolute inter-cluster mean feature difference.
pub fn recluster_and_rank(features: ArrayView2<f64>, low_order: &[f64]) -> ReclusterRank {
    let n = features.nrows();
    let d = features.ncols();
    assert_eq!(low_order.len(), n, "one leakage value per feature row");
    let mu = low_order.iter().sum::<f64>() / n as f64;

    let mut sum_hi = vec![0f64; d];
    let mut sum_lo = vec![0f64; d];
    let mut n_hi = 0usize;
    for (row, &l) in features.outer_iter().zip(low_order) {
        let hi = l > mu;
        let acc = if hi { &mut sum_hi } else { &mut sum_lo };
        if hi {
            n_hi += 1;
        }
        for (a, &v) in acc.iter_mut().zip(row.iter()) {
            *a += v;
        }
    }
    let n_lo = n - n_hi;
    if n_hi == 0 || n_lo == 0 {
        return ReclusterRank {
            rank: 0.0,
            argmax_dim: 0,
            detail: vec![0.0; d],
            degenerate: true,
        };
    }

    let mut detail = vec![0f64; d];
    let mut rank = f64::NEG_INFINITY;
    let mut argmax = 0usize;
    for k in 0..d {
        let diff = (sum_hi[k] / n_hi as f64 - sum_lo[k] / n_lo as f64).abs();
        detail[k] = diff;
        if diff > rank {
            rank = diff;
            argmax = k;
        }
    }
    ReclusterRank {
        rank,
        argmax_dim: argmax,
        detail,
        degenerate: false,
    }
}

/// One row of a candidate rank table.
#[derive(Debug, Clone)]
pub struct RankEntry {
    pub candidate: u8,
    pub rank: f64,
    pub argmax_dim: usize,
    pub detail: Vec<f64>,
    pub degenerate: bool,
}

/// All 16 pair candidates ordered by descending rank; ties broken towards
/// the smaller candidate value.
#[derive(Debug, Clone)]
pub struct RankTable {
    pub entries: Vec<RankEntry>,
}

impl RankTable {
    fn sorted(mut entries: Vec<RankEntry>) -> Self {
        entries.sort_by(|a, b| {
            b.rank
                .partial_cmp(&a.rank)
                .expect("ranks are finite")
                .then(a.candidate.cmp(&b.candidate))
        });
        Self { entries }
    }

    pub fn top(&self) -> &RankEntry {
        &self.entries[0]
    }

    /// 1-based position of a candidate in the ordering.
    pub fn position_of(&self, candidate: u8) -> usize {
        1 + self
            .entries
            .iter()
            .position(|e| e.candidate == candidate)
            .expect("candidate in table")
    }
}

/// Fits, truncates and reclusters every pair candidate: the full SCARL
/// leakage-estimation stage after RL clustering. `labels` are the per-trace
/// actor outputs; `features` are the raw (unnormalized) autoencoder states.
pub fn enumerate_candidates(
    features: ArrayView2<f64>,
    observations: &[PairObservation],
    labels: &[f64],
    m0: usize,
) -> RankTable {
    assert_eq!(features.nrows(), observations.len());
    assert_eq!(labels.len(), observations.len());

    let entries: Vec<RankEntry> = (0..16u8)
        .into_par_iter()
        .map(|candidate| {
            let values: Vec<u8> = observations
                .iter()
                .map(|o| ascon::candidate_sensitive(o, candidate))
                .collect();
            let model = fit_leakage(labels, &values);
            let low: Vec<f64> = values
                .iter()
                .map(|&x| model.eval_truncated(x, m0))
                .collect();
            let r = recluster_and_rank(features, &low);
            RankEntry {
                candidate,
                rank: r.rank,
                argmax_dim: r.argmax_dim,
                detail: r.detail,
                degenerate: r.degenerate,
            }
        })
        .collect();
    RankTable::sorted(entries)
}

/// Delimited-text export: candidate, rank, argmax dimension per line.
pub fn write_rank_table<W: std::io::Write>(mut w: W, table: &RankTable) -> std::io::Result<()> {
    writeln!(w, "candidate\trank\targmax_dim\tdegenerate")?;
    for e in &table.entries {
        writeln!(
            w,
            "{}\t{:.12e}\t{}\t{}",
            e.candidate, e.rank, e.argmax_dim, e.degenerate
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn hamming(x: u8) -> f64 {
        x.count_ones() as f64
    }

    #[test]
    fn monomial_vector_of_zero_is_constant_only() {
        let v = monomial_vector(0, 5);
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&m| m == 0.0));
    }

    #[test]
    fn monomial_vector_of_31_is_all_ones() {
        assert!(monomial_vector(31, 5).iter().all(|&m| m == 1.0));
    }

    #[test]
    fn degree_two_basis_has_sixteen_elements() {
        assert_eq!(basis_len(2), 16);
        assert_eq!(monomial_vector(9, 2).len(), 16);
        assert_eq!(basis_len(5), BASIS_LEN);
    }

    #[test]
    fn hamming_weight_fit_is_exact_and_degree_one() {
        // labels Hw(x)/5 over all 32 values: the unique NNF is degree 1
        let values: Vec<u8> = (0..32).collect();
        let labels: Vec<f64> = values.iter().map(|&x| hamming(x) / 5.0).collect();
        let model = fit_leakage(&labels, &values);
        for &x in &values {
            assert!((model.eval(x) - hamming(x) / 5.0).abs() < 1e-10);
            assert!((model.eval_truncated(x, 1) - hamming(x) / 5.0).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_labels_reproduce_constant() {
        let values = [3u8, 7, 7, 30];
        let labels = [2.5f64; 4];
        let model = fit_leakage(&labels, &values);
        for &x in &values {
            assert!((model.eval(x) - 2.5).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicated_samples_leave_the_fit_unchanged() {
        let values = [1u8, 9, 20, 31];
        let labels = [0.2f64, -1.0, 0.7, 3.0];
        let m1 = fit_leakage(&labels, &values);
        let mut v2 = values.to_vec();
        v2.extend_from_slice(&values);
        let mut l2 = labels.to_vec();
        l2.extend_from_slice(&labels);
        let m2 = fit_leakage(&l2, &v2);
        for (a, b) in m1.coefficients.iter().zip(&m2.coefficients) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_is_orthogonal_projection() {
        // full-model evaluation at observed values reproduces the LS
        // projection: residual orthogonal to every design column
        let values = [0u8, 5, 9, 14, 22, 27, 31];
        let labels = [0.1, 1.2, -0.4, 0.9, 2.2, -1.3, 0.5];
        let model = fit_leakage(&labels, &values);
        for j in 0..BASIS_LEN {
            let dot: f64 = values
                .iter()
                .zip(&labels)
                .map(|(&x, &l)| (l - model.eval(x)) * monomial_vector(x, 5)[j])
                .sum();
            assert!(dot.abs() < 1e-8, "column {j} residual dot {dot}");
        }
    }

    #[test]
    fn truncation_is_idempotent() {
        let values = [4u8, 11, 19, 30];
        let labels = [1.0, 0.0, 2.0, -1.0];
        let model = fit_leakage(&labels, &values);
        let t = model.truncated(2);
        assert_eq!(t.truncated(2), t);
        for x in 0..32 {
            assert_eq!(t.eval(x), model.eval_truncated(x, 2));
        }
    }

    #[test]
    fn full_truncation_is_identity() {
        let values = [2u8, 13, 21];
        let labels = [0.5, 0.25, -0.75];
        let model = fit_leakage(&labels, &values);
        for x in 0..32 {
            assert_eq!(model.eval_truncated(x, 5), model.eval(x));
        }
    }

    #[test]
    fn constant_model_truncates_to_constant() {
        let mut c = vec![0.0; BASIS_LEN];
        c[0] = 4.5;
        let m = LeakageModel::new(c);
        for x in 0..32 {
            assert_eq!(m.eval_truncated(x, 0), 4.5);
        }
    }

    #[test]
    fn degree_one_model_survives_any_truncation() {
        let mut c = vec![0.0; BASIS_LEN];
        c[0] = 1.0;
        for i in 1..=5 {
            c[i] = i as f64;
        }
        let m = LeakageModel::new(c);
        for m0 in 1..=5 {
            for x in 0..32 {
                assert_eq!(m.eval_truncated(x, m0), m.eval(x));
            }
        }
    }

    #[test]
    fn recluster_rank_of_constant_leakage_is_zero() {
        let f = Array2::from_shape_vec((4, 2), vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let r = recluster_and_rank(f.view(), &[1.0; 4]);
        assert!(r.degenerate);
        assert_eq!(r.rank, 0.0);
    }

    #[test]
    fn recluster_rank_matches_direct_partition_on_identity_features() {
        let low = [0.1f64, 0.9, 0.2, 0.8, 0.0, 1.0];
        let f = Array2::from_shape_vec((6, 1), low.to_vec()).unwrap();
        let r = recluster_and_rank(f.view(), &low);
        // direct partition oracle
        let mu = low.iter().sum::<f64>() / 6.0;
        let hi: Vec<f64> = low.iter().cloned().filter(|&v| v > mu).collect();
        let lo: Vec<f64> = low.iter().cloned().filter(|&v| v <= mu).collect();
        let expect = (hi.iter().sum::<f64>() / hi.len() as f64
            - lo.iter().sum::<f64>() / lo.len() as f64)
            .abs();
        assert!((r.rank - expect).abs() < 1e-12);
    }

    #[test]
    fn rank_is_invariant_under_trace_permutation() {
        let low = [0.3f64, 1.4, -0.2, 0.9, 0.6];
        let feats = vec![1.0, 0.0, 2.0, -1.0, 0.5];
        let f = Array2::from_shape_vec((5, 1), feats.clone()).unwrap();
        let r1 = recluster_and_rank(f.view(), &low);
        let perm = [4usize, 2, 0, 3, 1];
        let f2 = Array2::from_shape_vec((5, 1), perm.iter().map(|&i| feats[i]).collect()).unwrap();
        let low2: Vec<f64> = perm.iter().map(|&i| low[i]).collect();
        let r2 = recluster_and_rank(f2.view(), &low2);
        assert!((r1.rank - r2.rank).abs() < 1e-12);
    }

    #[test]
    fn rank_is_invariant_under_affine_label_rescaling() {
        let low = [0.3f64, 1.4, -0.2, 0.9, 0.6, 2.0];
        let feats: Vec<f64> = vec![1.0, 0.0, 2.0, -1.0, 0.5, 0.25];
        let f = Array2::from_shape_vec((6, 1), feats).unwrap();
        let base = recluster_and_rank(f.view(), &low);
        for (a, b) in [(2.0, 1.0), (0.5, -3.0), (-1.5, 0.7)] {
            let scaled: Vec<f64> = low.iter().map(|&v| a * v + b).collect();
            let r = recluster_and_rank(f.view(), &scaled);
            assert!((r.rank - base.rank).abs() < 1e-12, "affine ({a},{b})");
        }
    }

    #[test]
    fn table_has_sixteen_rows_and_strict_order() {
        let obs: Vec<PairObservation> = (0..8)
            .map(|i| PairObservation {
                iv_bit: 1,
                nonce_hi: (i >> 1) & 1,
                nonce_lo: i & 1,
                slot: (i >> 2) & 1,
            })
            .collect();
        let labels: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let f = Array2::from_shape_vec((8, 1), labels.clone()).unwrap();
        let table = enumerate_candidates(f.view(), &obs, &labels, 2);
        assert_eq!(table.entries.len(), 16);
        for w in table.entries.windows(2) {
            let strict = w[0].rank > w[1].rank
                || (w[0].rank == w[1].rank && w[0].candidate < w[1].candidate);
            assert!(strict, "ordering must be strict after tie-break");
        }
    }
}
