//! Uniform cell grid on the unit square (or unit interval), integer label
//! sets, piecewise-constant control fields and cell sets.
//!
//! Cells are indexed row-major: cell `(i, j)` (column `i`, row `j`) has index
//! `j * n + i` and center `((i + 0.5) h, (j + 0.5) h)`. Every reduction in the
//! crate walks cells in this order.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    h: f64,
    dim: usize,
    exterior_band: usize,
}

impl Grid {
    /// Square grid of `n x n` cells on the unit square.
    pub fn new(n: usize, exterior_band: usize) -> Result<Self> {
        Self::with_dim(n, 2, exterior_band)
    }

    /// Grid of `n` cells on the unit interval; only used for kernel oracles.
    pub fn new_1d(n: usize, exterior_band: usize) -> Result<Self> {
        Self::with_dim(n, 1, exterior_band)
    }

    fn with_dim(n: usize, dim: usize, exterior_band: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need n >= 2, got {n}")));
        }
        Ok(Self {
            n,
            h: 1.0 / n as f64,
            dim,
            exterior_band,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn exterior_band(&self) -> usize {
        self.exterior_band
    }

    /// Same grid with a different exterior band.
    pub fn with_exterior_band(mut self, band: usize) -> Self {
        self.exterior_band = band;
        self
    }

    pub fn num_cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Volume `h^d` of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && (self.dim == 1 || j < self.n));
        j * self.n + i
    }

    /// `(column, row)` of a cell; the row is always 0 in one dimension.
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n, idx / self.n)
    }

    /// Cell center; the second coordinate is 0 in one dimension.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.coords(idx);
        let y = if self.dim == 1 {
            0.0
        } else {
            (j as f64 + 0.5) * self.h
        };
        [(i as f64 + 0.5) * self.h, y]
    }

    /// Index of the interior cell containing `x`, if any.
    pub fn cell_containing(&self, x: [f64; 2]) -> Option<usize> {
        let locate = |v: f64| -> Option<usize> {
            if !(0.0..1.0).contains(&v) {
                return None;
            }
            Some(((v * self.n as f64).floor() as usize).min(self.n - 1))
        };
        let i = locate(x[0])?;
        let j = if self.dim == 1 { 0 } else { locate(x[1])? };
        Some(self.index(i, j))
    }
}

/// Ordered list of admissible integer control values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    values: Vec<i64>,
}

impl LabelSet {
    pub fn new(values: Vec<i64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidLabels(format!(
                "need at least two labels, got {}",
                values.len()
            )));
        }
        for (a, va) in values.iter().enumerate() {
            if values[a + 1..].contains(va) {
                return Err(Error::InvalidLabels(format!("duplicate value {va}")));
            }
        }
        Ok(Self { values })
    }

    /// `W = {0, 1}`.
    pub fn binary() -> Self {
        Self { values: vec![0, 1] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    pub fn value(&self, idx: usize) -> i64 {
        self.values[idx]
    }
}

/// A `W`-valued piecewise-constant control: one label index per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    grid: Grid,
    labels: LabelSet,
    assignment: Vec<usize>,
}

impl ControlField {
    pub fn new(grid: Grid, labels: LabelSet, assignment: Vec<usize>) -> Result<Self> {
        if assignment.len() != grid.num_cells() {
            return Err(Error::Incompatible(format!(
                "assignment has {} entries for {} cells",
                assignment.len(),
                grid.num_cells()
            )));
        }
        if let Some(&bad) = assignment.iter().find(|&&a| a >= labels.len()) {
            return Err(Error::InvalidLabel {
                index: bad,
                count: labels.len(),
            });
        }
        Ok(Self {
            grid,
            labels,
            assignment,
        })
    }

    pub fn constant(grid: Grid, labels: LabelSet, label: usize) -> Result<Self> {
        let cells = grid.num_cells();
        Self::new(grid, labels, vec![label; cells])
    }

    /// Binary field (`W = {0, 1}`) from per-cell booleans.
    pub fn from_bools(grid: Grid, bits: &[bool]) -> Result<Self> {
        Self::new(
            grid,
            LabelSet::binary(),
            bits.iter().map(|&b| b as usize).collect(),
        )
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Control value `w_k` in cell `idx`.
    pub fn value(&self, idx: usize) -> i64 {
        self.labels.value(self.assignment[idx])
    }

    pub fn values(&self) -> Vec<f64> {
        self.assignment
            .iter()
            .map(|&a| self.labels.value(a) as f64)
            .collect()
    }

    /// Level set `E_k = w^{-1}({w_k})` for the 0-based label index `label`.
    pub fn level_set(&self, label: usize) -> Result<CellSet> {
        if label >= self.labels.len() {
            return Err(Error::InvalidLabel {
                index: label,
                count: self.labels.len(),
            });
        }
        Ok(CellSet {
            grid: self.grid,
            members: self.assignment.iter().map(|&a| a == label).collect(),
        })
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.labels != other.labels {
            return Err(Error::Incompatible(
                "fields live on different grids or label sets".into(),
            ));
        }
        Ok(())
    }

    /// Volume-weighted `L^1` distance `sum |w_a - w_b| h^d`.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let jumps: i64 = self
            .assignment
            .iter()
            .zip(&other.assignment)
            .map(|(&a, &b)| (self.labels.value(a) - self.labels.value(b)).abs())
            .sum();
        Ok(jumps as f64 * self.grid.cell_volume())
    }
}

/// Subset of the interior cells. Exterior cells are never members.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSet {
    grid: Grid,
    members: Vec<bool>,
}

impl CellSet {
    pub fn empty(grid: Grid) -> Self {
        Self {
            grid,
            members: vec![false; grid.num_cells()],
        }
    }

    pub fn full(grid: Grid) -> Self {
        Self {
            grid,
            members: vec![true; grid.num_cells()],
        }
    }

    pub fn from_members(grid: Grid, members: Vec<bool>) -> Result<Self> {
        if members.len() != grid.num_cells() {
            return Err(Error::Incompatible(format!(
                "membership has {} entries for {} cells",
                members.len(),
                grid.num_cells()
            )));
        }
        Ok(Self { grid, members })
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize) -> bool) -> Self {
        Self {
            grid,
            members: (0..grid.num_cells()).map(&mut f).collect(),
        }
    }

    /// Axis-aligned block of cells `[i0, i1) x [j0, j1)`.
    pub fn block(grid: Grid, i0: usize, i1: usize, j0: usize, j1: usize) -> Self {
        Self::from_fn(grid, |idx| {
            let (i, j) = grid.coords(idx);
            (i0..i1).contains(&i) && (j0..j1).contains(&j)
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.members[idx]
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.grid.cell_volume()
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::Incompatible("cell sets on different grids".into()));
        }
        Ok(Self {
            grid: self.grid,
            members: self
                .members
                .iter()
                .zip(&other.members)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> Self {
        Self {
            grid: self.grid,
            members: self.members.iter().map(|&m| !m).collect(),
        }
    }

    /// `lambda(E sym-diff F)`: number of cells in exactly one set times `h^d`.
    pub fn sym_diff_volume(&self, other: &Self) -> Result<f64> {
        Ok(self.zip_with(other, |a, b| a != b)?.volume())
    }
}
