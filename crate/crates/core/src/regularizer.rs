//! The two regularizers of the solver (fractional `R_alpha` and the limit
//! `R`) and their common pairwise form on binary controls.

use std::sync::OnceLock;

use crate::classic::{regularizer_r, LimitRegularizerSpec};
use crate::error::{Error, Result};
use crate::grid::{ControlField, Grid};
use crate::kernel::KernelTable;

/// Pairwise form shared by both regularizers: for a binary control with
/// values `w_1, w_2` and `x_i = 1` iff cell `i` carries `w_2`,
///
/// `R = scale [(|w_1| + |w_2|) sum_{i<j} k_ij [x_i != x_j]
///             + sum_i b_i (|w_2| x_i + |w_1| (1 - x_i))]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRegularizer {
    scale: f64,
    exterior: Vec<f64>,
    start: Vec<usize>,
    adj: Vec<(usize, f64)>,
}

impl PairRegularizer {
    fn from_neighbors(
        cells: usize,
        scale: f64,
        exterior: Vec<f64>,
        mut neighbors: impl FnMut(usize) -> Vec<(usize, f64)>,
    ) -> Self {
        let mut start = Vec::with_capacity(cells + 1);
        let mut adj = Vec::new();
        start.push(0);
        for i in 0..cells {
            let mut row = neighbors(i);
            row.retain(|&(j, w)| j != i && w > 0.0);
            row.sort_by_key(|&(j, _)| j);
            adj.extend(row);
            start.push(adj.len());
        }
        Self {
            scale,
            exterior,
            start,
            adj,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.exterior.len()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn exterior(&self) -> &[f64] {
        &self.exterior
    }

    /// Neighbors of `i` with their weights, in increasing index order.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[self.start[i]..self.start[i + 1]]
    }

    /// Regularizer value of a binary assignment.
    pub fn value(&self, x: &[bool], w1: i64, w2: i64) -> f64 {
        let (a1, a2) = (w1.unsigned_abs() as f64, w2.unsigned_abs() as f64);
        let mut cut = 0.0;
        let mut ext = 0.0;
        for i in 0..self.num_cells() {
            for &(j, k) in self.neighbors(i) {
                if j > i && x[i] != x[j] {
                    cut += k;
                }
            }
            ext += self.exterior[i] * if x[i] { a2 } else { a1 };
        }
        self.scale * ((a1 + a2) * cut + ext)
    }
}

/// Regularizer used by the trust-region method.
#[derive(Debug)]
pub enum Regularizer {
    Fractional {
        table: KernelTable,
        pairs: OnceLock<PairRegularizer>,
    },
    Limit {
        grid: Grid,
        spec: LimitRegularizerSpec,
        pairs: OnceLock<PairRegularizer>,
    },
}

impl Regularizer {
    pub fn fractional(table: KernelTable) -> Self {
        Self::Fractional {
            table,
            pairs: OnceLock::new(),
        }
    }

    pub fn limit(grid: Grid, spec: LimitRegularizerSpec) -> Self {
        Self::Limit {
            grid,
            spec,
            pairs: OnceLock::new(),
        }
    }

    pub fn grid(&self) -> &Grid {
        match self {
            Self::Fractional { table, .. } => table.grid(),
            Self::Limit { grid, .. } => grid,
        }
    }

    pub fn table(&self) -> Option<&KernelTable> {
        match self {
            Self::Fractional { table, .. } => Some(table),
            Self::Limit { .. } => None,
        }
    }

    /// `R_alpha(w)` or `R(w)` by full evaluation over the level sets.
    pub fn value(&self, w: &ControlField) -> Result<f64> {
        if w.grid() != self.grid() {
            return Err(Error::Incompatible("control and regularizer grids differ".into()));
        }
        match self {
            Self::Fractional { table, .. } => table.regularizer(w),
            Self::Limit { spec, .. } => regularizer_r(w, spec),
        }
    }

    pub fn pair_form(&self) -> &PairRegularizer {
        match self {
            Self::Fractional { table, pairs } => pairs.get_or_init(|| {
                let cells = table.grid().num_cells();
                PairRegularizer::from_neighbors(
                    cells,
                    2.0 * (1.0 - table.alpha()),
                    table.beta().to_vec(),
                    |i| {
                        if table.truncation_radius().is_some() {
                            table.neighbors_of(i).collect()
                        } else {
                            (0..cells).map(|j| (j, table.kappa(i, j))).collect()
                        }
                    },
                )
            }),
            Self::Limit { grid, spec, pairs } => pairs.get_or_init(|| {
                let n = grid.n();
                let h = grid.h();
                let exterior = (0..grid.num_cells())
                    .map(|c| {
                        if !spec.count_domain_boundary {
                            return 0.0;
                        }
                        let (i, j) = grid.coords(c);
                        let sides = [i == 0, i + 1 == n, j == 0, j + 1 == n]
                            .iter()
                            .filter(|&&b| b)
                            .count();
                        sides as f64 * h
                    })
                    .collect();
                PairRegularizer::from_neighbors(grid.num_cells(), spec.omega, exterior, |c| {
                    let (i, j) = grid.coords(c);
                    let mut row = Vec::new();
                    if j > 0 {
                        row.push((grid.index(i, j - 1), h));
                    }
                    if i > 0 {
                        row.push((grid.index(i - 1, j), h));
                    }
                    if i + 1 < n {
                        row.push((grid.index(i + 1, j), h));
                    }
                    if j + 1 < n {
                        row.push((grid.index(i, j + 1), h));
                    }
                    row
                })
            }),
        }
    }
}
