//! Matching forgery domains to forgery guide embeddings.
//!
//! Each iteration the mean feature of every forgery domain in the batch is
//! matched to a forgery guide embedding by a minimum-cost perfect
//! assignment on cosine distance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LabeledFeature;
use crate::space::GuideSpace;
use crate::vecops::{dot, normalize};

/// Bijection from forgery domain label (`1..=N`) to the index of its guide
/// embedding in `GuideSpace::g_f` (`0..N`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMatch {
    pub mapping: BTreeMap<usize, usize>,
    /// Sum of the selected cost entries of the domains present in the batch.
    pub cost: f64,
}

/// Unit-normalised mean feature of every forgery domain present in `batch`.
pub fn domain_means(batch: &[LabeledFeature], num_forgery: usize) -> Result<BTreeMap<usize, Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut sums: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for f in batch.iter().filter(|f| f.t >= 1 && f.t <= num_forgery) {
        let acc = sums.entry(f.t).or_insert_with(|| vec![0.0; f.v.len()]);
        for (a, x) in acc.iter_mut().zip(&f.v) {
            *a += x;
        }
    }
    for (&t, m) in sums.iter_mut() {
        if normalize(m) < 1e-9 {
            return Err(Error::DegenerateMean(t));
        }
    }
    Ok(sums)
}

fn check_square(cost: &[Vec<f64>]) -> Result<usize> {
    let n = cost.len();
    if cost.iter().any(|row| row.len() != n) {
        return Err(Error::ShapeMismatch("cost matrix must be square".into()));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("cost matrix has non-finite entries".into()));
    }
    Ok(n)
}

/// Minimum-cost perfect assignment (row `i` -> column `perm[i]`) by the
/// shortest-augmenting-path Hungarian method with dual potentials, O(n^3).
pub fn hungarian(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = check_square(cost)?;
    let perm = solve_potentials(cost, n);
    let total = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok((perm, total))
}

fn solve_potentials(cost: &[Vec<f64>], n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[col_owner[j] - 1] = j - 1;
    }
    perm
}

/// Minimum-cost assignment with ties broken by the lexicographically
/// smallest permutation. Rows are fixed one at a time to the smallest
/// column that still admits an optimal completion, so this costs O(n^5);
/// intended for the small matrices of domain matching.
pub fn hungarian_lexicographic(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = check_square(cost)?;
    let (_, best) = hungarian(cost)?;
    let scale = cost.iter().flatten().fold(1.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-9 * scale * n.max(1) as f64;

    let mut perm = Vec::with_capacity(n);
    let mut free_cols: Vec<usize> = (0..n).collect();
    let mut fixed_cost = 0.0;
    for row in 0..n {
        let rest_rows: Vec<usize> = (row + 1..n).collect();
        let mut chosen = None;
        for (pos, &col) in free_cols.iter().enumerate() {
            let remaining: Vec<usize> = free_cols.iter().copied().filter(|&c| c != col).collect();
            let sub: Vec<Vec<f64>> = rest_rows
                .iter()
                .map(|&r| remaining.iter().map(|&c| cost[r][c]).collect())
                .collect();
            let sub_cost = solve_potentials(&sub, sub.len())
                .iter()
                .enumerate()
                .map(|(i, &j)| sub[i][j])
                .sum::<f64>();
            if fixed_cost + cost[row][col] + sub_cost <= best + tol {
                chosen = Some(pos);
                break;
            }
        }
        // Rounding can in principle reject every column; fall back to the
        // plain optimum in that case.
        let Some(pos) = chosen else {
            return hungarian(cost);
        };
        let col = free_cols.remove(pos);
        fixed_cost += cost[row][col];
        perm.push(col);
    }
    let total = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok((perm, total))
}

/// Matches domain means to forgery guide embeddings on cosine distance
/// `1 - mean . g_f[j]`. Domains absent from `means` take the remaining
/// guide embeddings in ascending order.
pub fn match_domains(means: &BTreeMap<usize, Vec<f64>>, gs: &GuideSpace) -> Result<DomainMatch> {
    let n = gs.num_forgery;
    if let Some(&t) = means.keys().find(|&&t| t == 0 || t > n) {
        return Err(Error::InvalidArgument(format!("domain {t} outside 1..={n}")));
    }
    let present: Vec<usize> = means.keys().copied().collect();
    let mut cost = vec![vec![0.0; n]; n];
    for (row, t) in present.iter().enumerate() {
        let m = &means[t];
        for (j, g) in gs.g_f.iter().enumerate() {
            cost[row][j] = 1.0 - dot(m, g);
        }
    }
    let (perm, _) = hungarian_lexicographic(&cost)?;
    let mut mapping = BTreeMap::new();
    let mut total = 0.0;
    for (row, &t) in present.iter().enumerate() {
        mapping.insert(t, perm[row]);
        total += cost[row][perm[row]];
    }
    let mut spare: Vec<usize> = perm[present.len()..].to_vec();
    spare.sort_unstable();
    let missing = (1..=n).filter(|t| !means.contains_key(t));
    for (t, j) in missing.zip(spare) {
        mapping.insert(t, j);
    }
    Ok(DomainMatch { mapping, cost: total })
}
