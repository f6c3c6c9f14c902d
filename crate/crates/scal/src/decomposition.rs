//! Class-correlation matrix over fingerprint columns, agglomerative
//! grouping of correlated classes into subproblems, and validation-driven
//! selection of the subproblem count k (with the k=1 no-harm fallback).

use crate::cart::TreeParams;
use crate::compressor::FingerprintProfile;
use crate::dataset::{split, Dataset};
use crate::error::{Error, Result};
use crate::metrics;
use crate::scal;

/// Pearson correlations between fingerprint columns.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub r: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn n_classes(&self) -> usize {
        self.r.len()
    }
}

/// Disjoint, exhaustive grouping of class indices into k subproblems.
/// Groups are sorted internally and ordered by smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubproblemPartition {
    pub groups: Vec<Vec<usize>>,
}

impl SubproblemPartition {
    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn singleton_per_class(n_classes: usize) -> Self {
        SubproblemPartition {
            groups: (0..n_classes).map(|c| vec![c]).collect(),
        }
    }

    pub fn single_group(n_classes: usize) -> Self {
        SubproblemPartition {
            groups: vec![(0..n_classes).collect()],
        }
    }

    /// group index of each class.
    pub fn group_of_class(&self, n_classes: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n_classes];
        for (g, members) in self.groups.iter().enumerate() {
            for &c in members {
                out[c] = g;
            }
        }
        out
    }

    pub fn normalize(&mut self) {
        for g in &mut self.groups {
            g.sort_unstable();
        }
        self.groups.sort_by_key(|g| g[0]);
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y.iter()) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation between every pair of fingerprint columns over all
/// training instances. A constant column yields 0 against every other
/// column (with a warning); the diagonal is always 1.
pub fn correlation_matrix(profile: &FingerprintProfile) -> Result<CorrelationMatrix> {
    let n = profile.rows.len();
    if n < 3 {
        return Err(Error::TooFewRows(n));
    }
    let c = profile.n_classes();
    let cols: Vec<Vec<f64>> = (0..c).map(|j| profile.column(j)).collect();
    let constant: Vec<bool> = cols
        .iter()
        .map(|col| col.iter().all(|&v| v == col[0]))
        .collect();
    for (j, &is_const) in constant.iter().enumerate() {
        if is_const {
            log::warn!("fingerprint column {j} is constant; its correlations are set to 0");
        }
    }
    let mut r = vec![vec![0.0; c]; c];
    for a in 0..c {
        r[a][a] = 1.0;
        for b in (a + 1)..c {
            let v = if constant[a] || constant[b] {
                0.0
            } else {
                pearson(&cols[a], &cols[b]).unwrap_or(0.0)
            };
            r[a][b] = v;
            r[b][a] = v;
        }
    }
    Ok(CorrelationMatrix { r })
}

fn avg_linkage(d: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    let mut s = 0.0;
    for &i in a {
        for &j in b {
            s += d[i][j];
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Agglomerative clustering with distance 1 − r and average linkage, cut
/// at k clusters. Merge ties break toward the pair with the lowest class
/// indices, so the output is deterministic.
pub fn cluster(corr: &CorrelationMatrix, k: usize) -> Result<SubproblemPartition> {
    let c = corr.n_classes();
    if k == 0 || k > c {
        return Err(Error::InvalidParameter(format!("k={k} not in [1,{c}]")));
    }
    let d: Vec<Vec<f64>> = corr
        .r
        .iter()
        .map(|row| row.iter().map(|&v| 1.0 - v).collect())
        .collect();
    let mut clusters: Vec<Vec<usize>> = (0..c).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let dist = avg_linkage(&d, &clusters[i], &clusters[j]);
                // strict < keeps the first (lexicographically smallest)
                // pair on ties; clusters stay ordered by smallest member
                if best.is_none_or(|(bd, _, _)| dist < bd) {
                    best = Some((dist, i, j));
                }
            }
        }
        let (_, i, j) = best.unwrap();
        let merged_j = clusters.remove(j);
        clusters[i].extend(merged_j);
        clusters[i].sort_unstable();
        clusters.sort_by_key(|g| g[0]);
    }
    let mut p = SubproblemPartition { groups: clusters };
    p.normalize();
    Ok(p)
}

/// Inner train fraction used by the k search.
const SELECT_K_TRAIN_FRACTION: f64 = 0.8;
/// Macro-F1 margin inside which a smaller k is preferred.
const SELECT_K_TIE_MARGIN: f64 = 0.005;

#[derive(Debug, Clone)]
pub struct KSearchResult {
    pub partition: SubproblemPartition,
    pub chosen_k: usize,
    /// (k, validation macro F1) per candidate.
    pub scores: Vec<(usize, f64)>,
}

/// Validation-driven choice of k: for each k in 1..=k_max, train a
/// candidate cascade on an inner stratified split and score macro F1 on
/// the held-out part. Smaller k wins ties within a small margin, so
/// decomposition that offers no benefit falls back to k=1.
pub fn select_k(
    train: &Dataset,
    _profile: &FingerprintProfile,
    corr: &CorrelationMatrix,
    k_max: usize,
    tree_params: &TreeParams,
    seed: u64,
) -> Result<KSearchResult> {
    let c = train.n_classes();
    if k_max == 0 || k_max > c {
        return Err(Error::InvalidParameter(format!("k_max={k_max} not in [1,{c}]")));
    }
    let (inner_train, inner_val) = split(train, SELECT_K_TRAIN_FRACTION, seed)?;
    let mut scores = Vec::new();
    for k in 1..=k_max {
        let partition = cluster(corr, k)?;
        let model = scal::train_with_partition(&inner_train, partition, tree_params, seed)?;
        let f1 = metrics::evaluate(|x| model.infer(x).map(|o| o.class), &inner_val)?.macro_f1;
        scores.push((k, f1));
    }
    let best_f1 = scores.iter().map(|&(_, f)| f).fold(f64::MIN, f64::max);
    let chosen_k = scores
        .iter()
        .find(|&&(_, f)| f >= best_f1 - SELECT_K_TIE_MARGIN)
        .map(|&(k, _)| k)
        .unwrap();
    Ok(KSearchResult {
        partition: cluster(corr, chosen_k)?,
        chosen_k,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile_from(rows: Vec<Vec<f64>>) -> FingerprintProfile {
        let n = rows.len();
        FingerprintProfile {
            rows,
            class_of_row: vec![0; n],
        }
    }

    #[test]
    fn identical_columns_correlate_perfectly() {
        let p = profile_from(vec![
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![5.0, 5.0],
            vec![3.0, 3.0],
        ]);
        let m = correlation_matrix(&p).unwrap();
        assert!((m.r[0][1] - 1.0).abs() < 1e-9);
        assert!((m.r[0][0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn negated_column_gives_minus_one() {
        let p = profile_from(vec![
            vec![1.0, 9.0],
            vec![2.0, 8.0],
            vec![5.0, 5.0],
            vec![3.0, 7.0],
        ]);
        let m = correlation_matrix(&p).unwrap();
        assert!((m.r[0][1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn four_row_profile_matches_hand_computed_pearson() {
        // x = [1,2,3,4], y = [1,3,2,6]:
        // cov*n = 7, varx*n = 5, vary*n = 14, r = 7/sqrt(70)
        let p = profile_from(vec![
            vec![1.0, 1.0],
            vec![2.0, 3.0],
            vec![3.0, 2.0],
            vec![4.0, 6.0],
        ]);
        let m = correlation_matrix(&p).unwrap();
        assert!((m.r[0][1] - 0.836_660_026_534_075_6).abs() < 1e-9);
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let p = profile_from(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(matches!(correlation_matrix(&p), Err(Error::TooFewRows(2))));
    }

    #[test]
    fn constant_column_correlates_zero() {
        let p = profile_from(vec![
            vec![1.0, 7.0],
            vec![2.0, 7.0],
            vec![3.0, 7.0],
        ]);
        let m = correlation_matrix(&p).unwrap();
        assert_eq!(m.r[0][1], 0.0);
        assert!((m.r[1][1] - 1.0).abs() < 1e-9);
    }

    fn block_matrix() -> CorrelationMatrix {
        CorrelationMatrix {
            r: vec![
                vec![1.0, 0.9, 0.1, 0.1],
                vec![0.9, 1.0, 0.1, 0.1],
                vec![0.1, 0.1, 1.0, 0.9],
                vec![0.1, 0.1, 0.9, 1.0],
            ],
        }
    }

    #[test]
    fn k_equals_c_gives_singletons() {
        let p = cluster(&block_matrix(), 4).unwrap();
        assert_eq!(p, SubproblemPartition::singleton_per_class(4));
    }

    #[test]
    fn k_one_gives_single_group() {
        let p = cluster(&block_matrix(), 1).unwrap();
        assert_eq!(p, SubproblemPartition::single_group(4));
    }

    #[test]
    fn block_structure_recovered_at_k_two() {
        // hand-run average linkage: merge (0,1) at d=0.1 (tie with (2,3)
        // broken by lowest index), then (2,3) at d=0.1; cut at 2
        let p = cluster(&block_matrix(), 2).unwrap();
        assert_eq!(p.groups, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn cluster_is_deterministic_under_ties() {
        let tie = CorrelationMatrix {
            r: vec![
                vec![1.0, 0.5, 0.5],
                vec![0.5, 1.0, 0.5],
                vec![0.5, 0.5, 1.0],
            ],
        };
        let a = cluster(&tie, 2).unwrap();
        let b = cluster(&tie, 2).unwrap();
        assert_eq!(a, b);
        // all distances tie; lowest-index pair (0,1) merges first
        assert_eq!(a.groups, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn partition_invariant_under_column_affine_transform() {
        // changing units (bytes to bits, plus framing offset) must not
        // change the partition
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let t = i as f64;
                vec![t, 2.0 * t + 1.0, 50.0 - t, (t * 7.0) % 5.0]
            })
            .collect();
        let scaled: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| vec![8.0 * r[0] + 3.0, r[1], r[2], r[3]])
            .collect();
        let m1 = correlation_matrix(&profile_from(rows)).unwrap();
        let m2 = correlation_matrix(&profile_from(scaled)).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                assert!((m1.r[a][b] - m2.r[a][b]).abs() < 1e-9);
            }
        }
        assert_eq!(cluster(&m1, 2).unwrap(), cluster(&m2, 2).unwrap());
    }

    #[test]
    fn partition_groups_are_disjoint_and_exhaustive() {
        for k in 1..=4 {
            let p = cluster(&block_matrix(), k).unwrap();
            assert_eq!(p.k(), k);
            let mut all: Vec<usize> = p.groups.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, vec![0, 1, 2, 3]);
            assert!(p.groups.iter().all(|g| !g.is_empty()));
        }
    }
}
