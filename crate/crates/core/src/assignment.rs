//! Minimum-cost assignment over score matrices.
//!
//! Rectangular inputs are made square by appending "virtual" columns filled
//! with the largest real entry; rows that land on a virtual column are
//! reported as unassigned. Inputs with more columns than rows are transposed
//! first and mapped back after solving.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    virtual_cols: usize,
    transposed: bool,
}

impl CostMatrix {
    /// Row-major values; `values.len()` must equal `rows * cols`.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::SizeMismatch {
                left: values.len(),
                right: rows * cols,
            });
        }
        Ok(CostMatrix {
            rows,
            cols,
            values,
            virtual_cols: 0,
            transposed: false,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        CostMatrix {
            rows,
            cols,
            values,
            virtual_cols: 0,
            transposed: false,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidParams("ragged cost matrix".into()));
        }
        CostMatrix::new(n, m, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn virtual_cols(&self) -> usize {
        self.virtual_cols
    }

    pub fn is_transposed(&self) -> bool {
        self.transposed
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    fn real_cols(&self) -> usize {
        self.cols - self.virtual_cols
    }

    fn transpose(&self) -> CostMatrix {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                values.push(self.get(i, j));
            }
        }
        CostMatrix {
            rows: self.cols,
            cols: self.rows,
            values,
            virtual_cols: 0,
            transposed: !self.transposed,
        }
    }
}

/// Result of [`solve`], expressed in the caller's original row/column indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Real (non-virtual) pairs, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the original entries at `pairs`.
    pub total_cost: f64,
    /// Cost of the full perfect matching on the padded matrix, virtual entries included.
    pub padded_cost: f64,
    pub unassigned_rows: Vec<usize>,
    pub unassigned_cols: Vec<usize>,
}

/// Make the matrix square: transpose when `cols > rows`, then append virtual
/// columns holding `max_{i,j}` of the original entries.
pub fn pad_to_square(m: &CostMatrix) -> Result<CostMatrix> {
    if m.rows == 0 || m.cols == 0 {
        return Err(Error::EmptyMatrix);
    }
    let base = if m.cols > m.rows {
        m.transpose()
    } else {
        m.clone()
    };
    if base.rows == base.cols {
        return Ok(base);
    }
    let extra = base.rows - base.cols;
    let fill = base.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cols = base.cols + extra;
    let mut values = Vec::with_capacity(base.rows * cols);
    for row in base.values.chunks(base.cols) {
        values.extend_from_slice(row);
        values.extend(std::iter::repeat_n(fill, extra));
    }
    Ok(CostMatrix {
        rows: base.rows,
        cols,
        values,
        virtual_cols: base.virtual_cols + extra,
        transposed: base.transposed,
    })
}

/// Solve a padded (square) matrix with the O(n³) Hungarian method.
///
/// Ties resolve towards the lowest column index in each augmenting search,
/// so the returned pairing is reproducible.
pub fn solve(m: &CostMatrix) -> Result<Assignment> {
    if m.rows != m.cols {
        return Err(Error::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    if m.rows == 0 {
        return Err(Error::EmptyMatrix);
    }
    for i in 0..m.rows {
        for j in 0..m.cols {
            let v = m.get(i, j);
            if !v.is_finite() || v < 0.0 {
                return Err(Error::BadCost { row: i, col: j });
            }
        }
    }

    let row_of_col = hungarian(m);
    let n = m.rows;
    let real = m.real_cols();
    let mut col_of_row = vec![usize::MAX; n];
    for (j, &i) in row_of_col.iter().enumerate() {
        col_of_row[i] = j;
    }

    let padded_cost: f64 = (0..n).map(|i| m.get(i, col_of_row[i])).sum();
    let mut pairs = Vec::new();
    let mut free_rows = Vec::new();
    for (i, &j) in col_of_row.iter().enumerate() {
        if j < real {
            pairs.push((i, j));
        } else {
            free_rows.push(i);
        }
    }
    let total_cost = pairs.iter().map(|&(i, j)| m.get(i, j)).sum();

    // Map back to the caller's orientation.
    let (mut pairs, unassigned_rows, unassigned_cols) = if m.transposed {
        (
            pairs.into_iter().map(|(i, j)| (j, i)).collect::<Vec<_>>(),
            Vec::new(),
            free_rows,
        )
    } else {
        (pairs, free_rows, Vec::new())
    };
    pairs.sort_unstable();
    Ok(Assignment {
        pairs,
        total_cost,
        padded_cost,
        unassigned_rows,
        unassigned_cols,
    })
}

/// Pad and solve in one go.
pub fn assign(m: &CostMatrix) -> Result<Assignment> {
    solve(&pad_to_square(m)?)
}

/// Shortest augmenting path with row/column potentials. Returns, for each
/// column, the row assigned to it.
fn hungarian(m: &CostMatrix) -> Vec<usize> {
    let n = m.rows;
    // 1-based bookkeeping; index 0 is the sentinel column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = m.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| p[j] - 1).collect()
}
