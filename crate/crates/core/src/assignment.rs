//! Minimum-cost rectangular assignment (Kuhn–Munkres with potentials).

/// Solves the assignment problem for a dense `rows × cols` cost matrix.
/// Returns, for every row, the assigned column; with more rows than columns
/// some rows stay unassigned. Costs must be finite.
pub fn solve_min_cost(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    if cols == 0 {
        return vec![None; rows];
    }
    debug_assert!(cost.iter().all(|r| r.len() == cols));
    if rows <= cols {
        solve_tall(rows, cols, |i, j| cost[i][j])
    } else {
        let by_col = solve_tall(cols, rows, |i, j| cost[j][i]);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        out
    }
}

/// Requires n <= m. Classic O(n²m) shortest augmenting path formulation.
fn solve_tall(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    // 1-based internally; column 0 is the virtual root
    let mut u = vec![0f64; n + 1];
    let mut v = vec![0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn total(cost: &[Vec<f64>], a: &[Option<usize>]) -> f64 {
        a.iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| cost[i][j]))
            .sum()
    }

    /// Exhaustive minimum over all injective row->column maps of size min(n, m).
    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, left: usize) -> f64 {
            if left == 0 || row == cost.len() {
                return if left == 0 { 0.0 } else { f64::INFINITY };
            }
            let mut best = rec(cost, row + 1, used, left);
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row][j] + rec(cost, row + 1, used, left - 1));
                    used[j] = false;
                }
            }
            best
        }
        let m = cost[0].len();
        rec(cost, 0, &mut vec![false; m], cost.len().min(m))
    }

    #[test]
    fn two_by_two() {
        let iou = [[0.9, 0.1], [0.2, 0.8]];
        let cost: Vec<Vec<f64>> = iou.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let a = solve_min_cost(&cost);
        assert_eq!(a, vec![Some(0), Some(1)]);
        assert!((total(&cost, &a) + 1.7).abs() < 1e-12);
    }

    #[test]
    fn empty_shapes() {
        assert!(solve_min_cost(&[]).is_empty());
        assert_eq!(solve_min_cost(&[vec![], vec![]]), vec![None, None]);
    }

    proptest! {
        #[test]
        fn matches_enumeration(n in 1usize..5, m in 1usize..5, seed in proptest::collection::vec(0.0..1.0f64, 16)) {
            let cost: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| seed[i * 4 + j]).collect()).collect();
            let a = solve_min_cost(&cost);
            let assigned = a.iter().flatten().count();
            prop_assert_eq!(assigned, n.min(m));
            let mut cols: Vec<usize> = a.iter().flatten().copied().collect();
            cols.sort();
            cols.dedup();
            prop_assert_eq!(cols.len(), assigned);
            prop_assert!((total(&cost, &a) - brute_force(&cost)).abs() < 1e-9);
        }
    }
}
