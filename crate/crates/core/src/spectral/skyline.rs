//! Envelope (skyline) Cholesky factorisation with reverse Cuthill–McKee
//! reordering, used for shift-invert solves on mesh Laplacians.

use std::collections::VecDeque;

use super::lbo::SparseMatrix;
use crate::error::{Error, Result};

/// Reverse Cuthill–McKee ordering: `perm[new] = old`.
pub fn rcm_order(m: &SparseMatrix) -> Vec<usize> {
    let n = m.n;
    let degree: Vec<usize> = (0..n).map(|i| m.row(i).filter(|&(j, _)| j != i).count()).collect();
    let neighbours = |i: usize| m.row(i).map(|(j, _)| j).filter(move |&j| j != i);
    let bfs_levels = |start: usize, seen: &mut Vec<bool>| -> Vec<Vec<usize>> {
        let mut levels = vec![vec![start]];
        seen[start] = true;
        loop {
            let mut next = Vec::new();
            for &v in levels.last().expect("non-empty") {
                for u in neighbours(v) {
                    if !seen[u] {
                        seen[u] = true;
                        next.push(u);
                    }
                }
            }
            if next.is_empty() {
                return levels;
            }
            levels.push(next);
        }
    };

    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for seed in 0..n {
        if placed[seed] {
            continue;
        }
        // pseudo-peripheral start: walk to the far end of the level structure
        let mut start = seed;
        let mut depth = 0;
        for _ in 0..8 {
            let mut seen = placed.clone();
            let levels = bfs_levels(start, &mut seen);
            if levels.len() <= depth {
                break;
            }
            depth = levels.len();
            start = *levels
                .last()
                .expect("non-empty")
                .iter()
                .min_by_key(|&&v| (degree[v], v))
                .expect("non-empty level");
        }
        let mut queue = VecDeque::from([start]);
        placed[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = neighbours(v).filter(|&u| !placed[u]).collect();
            nb.sort_by_key(|&u| (degree[u], u));
            for u in nb {
                placed[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Lower-triangular factor stored row by row over each row's envelope.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineCholesky {
    /// Factors a symmetric positive definite matrix.
    pub fn factor(m: &SparseMatrix) -> Result<Self> {
        let n = m.n;
        let perm = rcm_order(m);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let first: Vec<usize> = (0..n)
            .map(|i| m.row(perm[i]).map(|(j, _)| inv[j]).min().unwrap_or(i).min(i))
            .collect();
        let mut start = vec![0; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut values = vec![0.0; start[n]];
        for i in 0..n {
            for (j, v) in m.row(perm[i]) {
                let jj = inv[j];
                if jj <= i {
                    values[start[i] + jj - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let lo = fi.max(first[j]);
                // row j lies entirely before row i in storage
                let (head, tail) = values.split_at(start[i]);
                let row_i = &tail[lo - fi..j - fi];
                let row_j = &head[start[j] + lo - first[j]..start[j] + j - first[j]];
                let s: f64 = row_i.iter().zip(row_j).map(|(a, b)| a * b).sum();
                let diag_j = values[start[j] + j - first[j]];
                values[start[i] + j - fi] = (values[start[i] + j - fi] - s) / diag_j;
            }
            let row = &values[start[i]..start[i] + i - fi];
            let d = values[start[i] + i - fi] - row.iter().map(|v| v * v).sum::<f64>();
            if !(d > 0.0) {
                return Err(Error::ConvergenceFailure(format!(
                    "shifted operator is not positive definite (pivot {d:e} at row {i})"
                )));
            }
            values[start[i] + i - fi] = d.sqrt();
        }
        Ok(SkylineCholesky {
            perm,
            first,
            start,
            values,
        })
    }

    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.values[self.start[i]..self.start[i + 1]];
            let s: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - s) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.values[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let xi = y[i];
            for (yk, l) in y[fi..i].iter_mut().zip(&row[..i - fi]) {
                *yk -= l * xi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
