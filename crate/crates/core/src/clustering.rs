//! Balanced, overlapping client clustering.
//!
//! Cluster `i` starts as every client holding enough data of class `i`. Two
//! budgets are then enforced greedily: each client sits in at most `m_th`
//! clusters and each cluster keeps at most `n_th` clients.

use crate::data::AbstractDistribution;
use crate::error::{Error, Result};
use crate::matrix::BinaryMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterThresholds {
    /// Target number of clusters per client.
    pub m_th: usize,
    /// Target number of clients per cluster.
    pub n_th: usize,
}

/// How the cluster size budget is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SizeRule {
    /// `n_th = floor(sum_j min(m_j, m_th) / m)`: total participation spread
    /// evenly over the `m` clusters.
    #[default]
    Balanced,
    /// `n_th = min_i n_i`, the smallest cluster in `A`.
    SmallestCluster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub thresholds: ClusterThresholds,
    /// Clients with no sufficient class. They take no part in clustering.
    pub excluded: Vec<usize>,
}

pub fn compute_thresholds(a: &BinaryMatrix, rule: SizeRule) -> Result<ThresholdReport> {
    let m = a.rows();
    if m == 0 {
        return Err(Error::shape("abstract distribution has no classes"));
    }
    let col_sums = a.col_sums();
    let excluded: Vec<usize> = (0..a.cols()).filter(|&j| col_sums[j] == 0).collect();
    let active: Vec<usize> = col_sums.iter().copied().filter(|&c| c > 0).collect();
    if active.is_empty() {
        return Ok(ThresholdReport {
            thresholds: ClusterThresholds { m_th: 1, n_th: 1 },
            excluded,
        });
    }
    let m_th = (active.iter().sum::<usize>() / active.len()).max(1);
    let n_th = match rule {
        SizeRule::Balanced => {
            let participation: usize = active.iter().map(|&mj| mj.min(m_th)).sum();
            participation / m
        }
        SizeRule::SmallestCluster => a.row_sums().into_iter().min().unwrap_or(0),
    }
    .max(1);
    Ok(ThresholdReport {
        thresholds: ClusterThresholds { m_th, n_th },
        excluded,
    })
}

/// Thresholds for an abstract distribution using the balanced size rule.
pub fn thresholds_for(a: &AbstractDistribution) -> Result<ThresholdReport> {
    compute_thresholds(&a.matrix, SizeRule::Balanced)
}

/// Clustering result `x`, a sparse sub-matrix of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub x: BinaryMatrix,
    /// Number of sweeps of the removal loop.
    pub sweeps: usize,
    pub removals: usize,
}

impl ClusterAssignment {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.x.row_sums()
    }

    pub fn memberships(&self) -> Vec<usize> {
        self.x.col_sums()
    }
}

fn argmax_lowest(candidates: impl Iterator<Item = usize>, key: impl Fn(usize) -> usize) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for c in candidates {
        let k = key(c);
        if best.is_none_or(|(_, bk)| k > bk) {
            best = Some((c, k));
        }
    }
    best.map(|(c, _)| c)
}

/// Greedy removal starting from `x = A`.
///
/// While some cluster exceeds `n_th` or some client exceeds `m_th`: every
/// overloaded cluster drops its member with the most memberships, then every
/// overloaded client leaves its largest cluster. Counts are re-read after
/// every single removal; ties go to the lowest index.
pub fn greedy_cluster(a: &BinaryMatrix, th: ClusterThresholds) -> ClusterAssignment {
    let mut x = a.clone();
    let mut rows = x.row_sums();
    let mut cols = x.col_sums();
    let mut sweeps = 0;
    let mut removals = 0;
    while rows.iter().any(|&r| r > th.n_th) || cols.iter().any(|&c| c > th.m_th) {
        sweeps += 1;
        for i in 0..x.rows() {
            if rows[i] > th.n_th {
                let j = argmax_lowest((0..x.cols()).filter(|&j| x.get(i, j)), |j| cols[j])
                    .expect("an overloaded row has members");
                x.set(i, j, false);
                rows[i] -= 1;
                cols[j] -= 1;
                removals += 1;
            }
        }
        for j in 0..x.cols() {
            if cols[j] > th.m_th {
                let i = argmax_lowest((0..x.rows()).filter(|&i| x.get(i, j)), |i| rows[i])
                    .expect("an overloaded column has members");
                x.set(i, j, false);
                rows[i] -= 1;
                cols[j] -= 1;
                removals += 1;
            }
        }
    }
    ClusterAssignment {
        x,
        sweeps,
        removals,
    }
}

/// Number of memberships of `A` dropped by `x`.
pub fn objective_value(a: &BinaryMatrix, x: &BinaryMatrix) -> Result<usize> {
    if !x.is_subset_of(a) {
        return Err(Error::Invariant(
            "cluster assignment is not a sub-matrix of the abstract distribution".into(),
        ));
    }
    Ok(a.sum() - x.sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn every_client_has(classes: &[Vec<usize>], m: usize) -> BinaryMatrix {
        let cols: Vec<Vec<bool>> = classes
            .iter()
            .map(|cs| (0..m).map(|i| cs.contains(&i)).collect())
            .collect();
        BinaryMatrix::from_columns(m, &cols).unwrap()
    }

    #[test]
    fn uniform_thresholds() {
        let a = BinaryMatrix::ones(10, 50);
        let t = compute_thresholds(&a, SizeRule::Balanced).unwrap();
        assert_eq!(t.thresholds, ClusterThresholds { m_th: 10, n_th: 50 });
        assert!(t.excluded.is_empty());
    }

    #[test]
    fn five_classes_each() {
        let classes: Vec<Vec<usize>> = (0..50).map(|j| (0..5).map(|k| (j + k) % 10).collect()).collect();
        let a = every_client_has(&classes, 10);
        let t = compute_thresholds(&a, SizeRule::Balanced).unwrap();
        assert_eq!(t.thresholds, ClusterThresholds { m_th: 5, n_th: 25 });
    }

    #[test]
    fn mixed_counts_follow_the_formula() {
        let a = every_client_has(&[vec![0], vec![0, 1], vec![0, 1, 2, 3], vec![0, 1, 2, 3]], 4);
        let t = compute_thresholds(&a, SizeRule::Balanced).unwrap();
        assert_eq!(t.thresholds.m_th, 2);
        // mean(1, 2, 4, 4) = 2.75 -> 2; participation = 1 + 2 + 2 + 2 = 7 -> 7 / 4 = 1
        assert_eq!(t.thresholds.n_th, 1);
        let small = compute_thresholds(&a, SizeRule::SmallestCluster).unwrap();
        assert_eq!(small.thresholds.n_th, 2);
    }

    #[test]
    fn empty_clients_are_excluded() {
        let a = every_client_has(&[vec![0, 1], vec![], vec![1, 2]], 3);
        let t = compute_thresholds(&a, SizeRule::Balanced).unwrap();
        assert_eq!(t.excluded, vec![1]);
        assert_eq!(t.thresholds.m_th, 2);
    }

    #[test]
    fn feasible_start_is_untouched() {
        let a = BinaryMatrix::ones(10, 50);
        let x = greedy_cluster(&a, ClusterThresholds { m_th: 10, n_th: 50 });
        assert_eq!(x.x, a);
        assert_eq!(x.removals, 0);
        assert_eq!(objective_value(&a, &x.x).unwrap(), 0);
    }

    /// Every x <= A respecting both budgets, by enumeration.
    fn all_valid(a: &BinaryMatrix, th: ClusterThresholds) -> Vec<BinaryMatrix> {
        let cells: Vec<(usize, usize)> = (0..a.rows())
            .flat_map(|i| (0..a.cols()).map(move |j| (i, j)))
            .filter(|&(i, j)| a.get(i, j))
            .collect();
        let mut out = Vec::new();
        for mask in 0u32..(1 << cells.len()) {
            let mut x = BinaryMatrix::zeros(a.rows(), a.cols());
            for (k, &(i, j)) in cells.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    x.set(i, j, true);
                }
            }
            if x.row_sums().iter().all(|&r| r <= th.n_th) && x.col_sums().iter().all(|&c| c <= th.m_th) {
                out.push(x);
            }
        }
        out
    }

    #[test]
    fn tight_two_by_three() {
        let a = BinaryMatrix::ones(2, 3);
        let th = ClusterThresholds { m_th: 1, n_th: 1 };
        let x = greedy_cluster(&a, th);
        let valid = all_valid(&a, th);
        assert!(valid.contains(&x.x));
        assert!(x.x.sum() <= 2);
    }

    #[test]
    fn objective_extremes() {
        let a = BinaryMatrix::from_rows(&[vec![1, 0, 1], vec![1, 1, 0]]).unwrap();
        assert_eq!(objective_value(&a, &a).unwrap(), 0);
        assert_eq!(objective_value(&a, &BinaryMatrix::zeros(2, 3)).unwrap(), 4);
        assert!(matches!(
            objective_value(&a, &BinaryMatrix::ones(2, 3)),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn small_instances_stay_near_optimum() {
        // 3 x 4 instances (at most 12 cells) against exhaustive enumeration.
        let mut state = 0x2545_F491_4F6C_DD1Du64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..100 {
            let rows: Vec<Vec<u8>> = (0..3).map(|_| (0..4).map(|_| (next() % 3 != 0) as u8).collect()).collect();
            let a = BinaryMatrix::from_rows(&rows).unwrap();
            let th = ClusterThresholds {
                m_th: 1 + (next() % 2) as usize,
                n_th: 1 + (next() % 2) as usize,
            };
            let best = all_valid(&a, th).iter().map(|x| a.sum() - x.sum()).min().unwrap();
            let x = greedy_cluster(&a, th);
            let obj = objective_value(&a, &x.x).unwrap();
            assert!(obj >= best);
            assert!(obj <= best + 2, "greedy {obj} vs optimum {best} on {a:?}");
        }
    }

    fn arb_matrix() -> impl Strategy<Value = BinaryMatrix> {
        (1usize..=12, 1usize..=60).prop_flat_map(|(m, n)| {
            prop::collection::vec(prop::collection::vec(0u8..=1, n), m)
                .prop_map(|rows| BinaryMatrix::from_rows(&rows).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn greedy_respects_budgets(a in arb_matrix()) {
            let th = compute_thresholds(&a, SizeRule::Balanced).unwrap().thresholds;
            let x = greedy_cluster(&a, th);
            prop_assert!(x.x.is_subset_of(&a));
            prop_assert!(x.x.row_sums().iter().all(|&r| r <= th.n_th));
            prop_assert!(x.x.col_sums().iter().all(|&c| c <= th.m_th));
            prop_assert!(x.removals <= a.sum());
            prop_assert_eq!(x.removals, a.sum() - x.x.sum());
            prop_assert_eq!(&greedy_cluster(&a, th), &x);
        }
    }
}
