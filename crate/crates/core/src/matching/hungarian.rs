//! Rectangular linear assignment (Hungarian method with potentials).
//!
//! Rows are assigned to distinct columns, `rows <= cols`, in O(rows² · cols).
//! Each row is inserted by a shortest augmenting path; among equal reduced
//! costs the lowest column index wins, so results are deterministic.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "cost data length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|n| f(n / cols, n % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// Writes one CSV line per row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for r in 0..self.rows {
            let line: Vec<String> = (0..self.cols).map(|c| self.get(r, c).to_string()).collect();
            writeln!(out, "{}", line.join(",")).expect("write to Vec");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row.
    pub row_to_col: Vec<usize>,
    /// Sum of the assigned entries, accumulated in row order.
    pub total: f64,
}

pub fn hungarian(cost: &CostMatrix) -> Result<Assignment> {
    let (n, m) = (cost.rows, cost.cols);
    if n > m {
        return Err(Error::TooManyRows { rows: n, cols: m });
    }
    if let Some(pos) = cost.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteCost {
            row: pos / m,
            col: pos % m,
        });
    }
    if n == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            total: 0.0,
        });
    }

    // 1-based potentials; column 0 is a virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut min_reduced = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0usize;
        min_reduced.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for col in 1..=m {
                if used[col] {
                    continue;
                }
                let reduced = cost.get(r0 - 1, col - 1) - u[r0] - v[col];
                if reduced < min_reduced[col] {
                    min_reduced[col] = reduced;
                    way[col] = col0;
                }
                if min_reduced[col] < delta {
                    delta = min_reduced[col];
                    col1 = col;
                }
            }
            for col in 0..=m {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_reduced[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![usize::MAX; n];
    for col in 1..=m {
        if owner[col] != 0 {
            row_to_col[owner[col] - 1] = col - 1;
        }
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(r, &c)| cost.get(r, c))
        .sum();
    Ok(Assignment { row_to_col, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Minimum over all injective row→column maps, by enumeration.
    fn brute_force(cost: &CostMatrix) -> f64 {
        fn rec(cost: &CostMatrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.rows() {
                *best = best.min(acc);
                return;
            }
            for c in 0..cost.cols() {
                if !used[c] {
                    used[c] = true;
                    rec(cost, row + 1, used, acc + cost.get(row, c), best);
                    used[c] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.cols()], 0.0, &mut best);
        best
    }

    #[test]
    fn zero_diagonal_gives_identity() {
        let c = CostMatrix::from_fn(3, 3, |r, c| if r == c { 0.0 } else { 5.0 + (r + c) as f64 });
        let a = hungarian(&c).unwrap();
        assert_eq!(a.row_to_col, vec![0, 1, 2]);
        assert_eq!(a.total, 0.0);
    }

    #[test]
    fn worked_three_by_three() {
        let c = CostMatrix::from_rows(&[
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ]);
        assert_eq!(brute_force(&c), 5.0);
        let a = hungarian(&c).unwrap();
        assert_eq!(a.row_to_col, vec![1, 0, 2]);
        assert_eq!(a.total, 5.0);
    }

    #[test]
    fn rectangular_matches_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let rows = rng.gen_range(1..=5);
            let cols = rng.gen_range(rows..=7);
            let c = CostMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-3.0..10.0));
            let a = hungarian(&c).unwrap();
            let mut seen = a.row_to_col.clone();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), rows);
            assert_eq!(a.total, brute_force(&c));
        }
    }

    #[test]
    fn ties_prefer_low_columns() {
        let c = CostMatrix::from_fn(2, 4, |_, _| 1.0);
        assert_eq!(hungarian(&c).unwrap().row_to_col, vec![0, 1]);
    }

    #[test]
    fn too_many_rows_and_non_finite() {
        let c = CostMatrix::from_fn(3, 2, |_, _| 0.0);
        assert!(matches!(
            hungarian(&c),
            Err(Error::TooManyRows { rows: 3, cols: 2 })
        ));
        let c = CostMatrix::from_rows(&[vec![0.0, f64::NAN]]);
        assert!(matches!(
            hungarian(&c),
            Err(Error::NonFiniteCost { row: 0, col: 1 })
        ));
    }

    #[test]
    fn csv_dump() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cost.csv");
        CostMatrix::from_rows(&[vec![1.0, 2.5], vec![-1.0, 0.0]])
            .write_csv(&p)
            .unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "1,2.5\n-1,0\n");
    }
}
