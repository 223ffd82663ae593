//! Grid-edge perimeter and the limit regularizer `R(w) = omega sum |w_k| P(E_k)`.

use crate::error::{Error, Result};
use crate::grid::{CellSet, ControlField};

/// Constant `omega_{d-1}` of the limit regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitRegularizerSpec {
    pub omega: f64,
    pub count_domain_boundary: bool,
}

impl LimitRegularizerSpec {
    /// `omega_{d-1}` is the volume of the unit ball in `R^{d-1}`.
    pub fn for_dim(dim: usize) -> Result<Self> {
        let omega = match dim {
            1 => 1.0,
            2 => 2.0,
            _ => return Err(Error::Domain(format!("unsupported dimension {dim}"))),
        };
        Ok(Self {
            omega,
            count_domain_boundary: true,
        })
    }
}

impl Default for LimitRegularizerSpec {
    fn default() -> Self {
        Self {
            omega: 2.0,
            count_domain_boundary: true,
        }
    }
}

/// Number of exposed sides of a member cell: edges towards a non-member
/// interior cell, plus edges on the domain boundary when counted.
fn exposed_sides(set: &CellSet, idx: usize, count_boundary: bool) -> usize {
    let grid = set.grid();
    let n = grid.n();
    let (i, j) = grid.coords(idx);
    let mut exposed = 0;
    let mut check = |neighbor: Option<usize>| match neighbor {
        Some(k) => {
            if !set.contains(k) {
                exposed += 1;
            }
        }
        None => {
            if count_boundary {
                exposed += 1;
            }
        }
    };
    check((i > 0).then(|| grid.index(i - 1, j)));
    check((i + 1 < n).then(|| grid.index(i + 1, j)));
    if grid.dim() == 2 {
        check((j > 0).then(|| grid.index(i, j - 1)));
        check((j + 1 < n).then(|| grid.index(i, j + 1)));
    }
    exposed
}

/// Length of the grid edges separating `E` from its complement, the exterior
/// of the unit square included.
pub fn grid_perimeter(set: &CellSet) -> f64 {
    let edges: usize = (0..set.grid().num_cells())
        .filter(|&c| set.contains(c))
        .map(|c| exposed_sides(set, c, true))
        .sum();
    let facet = if set.grid().dim() == 2 { set.grid().h() } else { 1.0 };
    edges as f64 * facet
}

/// Limit regularizer with anisotropic (grid-edge) perimeters.
pub fn regularizer_r(w: &ControlField, spec: &LimitRegularizerSpec) -> Result<f64> {
    let grid = w.grid();
    let facet = if grid.dim() == 2 { grid.h() } else { 1.0 };
    let mut acc = 0.0;
    for (k, &value) in w.labels().values().iter().enumerate() {
        if value == 0 {
            continue;
        }
        let set = w.level_set(k)?;
        let edges: usize = (0..grid.num_cells())
            .filter(|&c| set.contains(c))
            .map(|c| exposed_sides(&set, c, spec.count_domain_boundary))
            .sum();
        acc += value.unsigned_abs() as f64 * edges as f64 * facet;
    }
    Ok(spec.omega * acc)
}
