//! Tabulated weights of the kernel `|x - y|^{-(d + alpha)}` between grid
//! cells, and the discrete fractional perimeter built from them.
//!
//! The weight of a cell pair only depends on the offset between the cells.
//! For two axis-aligned cells of side `h` at integer offset `o`
//!
//! ```text
//! int_{C_i} int_{C_j} |x - y|^{-d-alpha} dx dy
//!     = h^{d - alpha} int_{R^d} prod_k T(z_k - o_k) |z|^{-d-alpha} dz,
//! ```
//!
//! with the tent `T(s) = max(0, 1 - |s|)`. The tent product is polynomial on
//! each of the `2^d` unit boxes around `o`. Boxes that touch the origin (only
//! for touching cells) are integrated in polar coordinates with the radial
//! part in closed form; all others are smooth and use Gauss rules.
//!
//! The exterior `R^d \ Omega` enters through one weight per cell, `beta_i`.
//! Truncated tables sum exterior cells inside the truncation radius;
//! untruncated tables integrate the exact exterior potential of the unit
//! square over the cell.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{CellSet, ControlField, Grid};
use crate::quadrature::{
    adaptive_2d, gauss_1d, gauss_2d, graded_toward_left, graded_toward_right,
};

/// Relative slack when comparing center distances with the truncation radius.
const RADIUS_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseRule {
    Midpoint,
    Gauss(usize),
}

impl BaseRule {
    pub fn order(&self) -> usize {
        match *self {
            BaseRule::Midpoint => 1,
            BaseRule::Gauss(q) => q,
        }
    }
}

/// How cell-pair weights are integrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub base_rule: BaseRule,
    /// Maximum recursive subdivision depth for near pairs.
    pub near_field_levels: usize,
    pub rel_tol: f64,
    /// Pairs whose center distance is at most this many cell sizes are
    /// refined adaptively; farther pairs use a single base rule.
    pub near_threshold: f64,
    /// Evaluate the kernel at cell centers only (`h^{2d} |c_i - c_j|^{-d-alpha}`).
    pub centers_only: bool,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            base_rule: BaseRule::Gauss(3),
            near_field_levels: 6,
            rel_tol: 1e-3,
            near_threshold: 3.0,
            centers_only: false,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.near_field_levels < 1 {
            return Err(Error::Domain("near_field_levels must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol <= 0.1) {
            return Err(Error::Domain(format!(
                "rel_tol must lie in (0, 0.1], got {}",
                self.rel_tol
            )));
        }
        let q = self.base_rule.order();
        if !(1..=32).contains(&q) {
            return Err(Error::Domain(format!("Gauss order {q} outside 1..=32")));
        }
        Ok(())
    }

    /// Local refinement tolerance; kept well below `rel_tol` so that the
    /// assembled weight meets `rel_tol`.
    fn local_tol(&self) -> f64 {
        0.01 * self.rel_tol
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Weight of two unit cells (side 1) at integer offset `offset`.
/// In one dimension only `offset[0]` is used.
pub fn unit_offset_weight(dim: usize, offset: [i64; 2], alpha: f64, quad: &QuadratureSpec) -> f64 {
    let dist = if dim == 1 {
        offset[0].abs() as f64
    } else {
        ((offset[0] * offset[0] + offset[1] * offset[1]) as f64).sqrt()
    };
    if quad.centers_only {
        return dist.powf(-(dim as f64) - alpha);
    }
    // Symmetry: the weight only depends on |o_k| and (in 2-D) their order.
    let (p, q) = {
        let a = offset[0].abs();
        let b = if dim == 1 { 0 } else { offset[1].abs() };
        (a.max(b), a.min(b))
    };
    let near = dist <= quad.near_threshold * (1.0 + RADIUS_SLACK);
    if dim == 1 {
        unit_weight_1d(p, alpha, quad, near)
    } else {
        unit_weight_2d(p, q, alpha, quad, near)
    }
}

/// Linear tent pieces `a + b z` on `[lo, hi]` around integer offset `p`.
fn tent_pieces(p: i64) -> [(f64, f64, f64, f64); 2] {
    let pf = p as f64;
    [(pf - 1.0, pf, 1.0 - pf, 1.0), (pf, pf + 1.0, 1.0 + pf, -1.0)]
}

fn unit_weight_1d(p: i64, alpha: f64, quad: &QuadratureSpec, near: bool) -> f64 {
    let order = quad.base_rule.order();
    let mut total = 0.0;
    for (lo, hi, a, b) in tent_pieces(p) {
        if lo == 0.0 || hi == 0.0 {
            // Piece touching the origin: reflect to [0, L]; the tent vanishes
            // at the origin so only the linear term survives.
            let (len, slope) = if lo == 0.0 { (hi, b) } else { (-lo, -b) };
            debug_assert!(a.abs() < 1e-12);
            total += slope * len.powf(1.0 - alpha) / (1.0 - alpha);
            continue;
        }
        let mut f = |z: f64| (a + b * z) * z.abs().powf(-1.0 - alpha);
        total += if near {
            adaptive_1d(&mut f, lo, hi, order, quad.local_tol(), quad.near_field_levels)
        } else {
            gauss_1d(&mut f, lo, hi, order)
        };
    }
    total
}

fn unit_weight_2d(p: i64, q: i64, alpha: f64, quad: &QuadratureSpec, near: bool) -> f64 {
    let order = quad.base_rule.order();
    let mut total = 0.0;
    for (lo0, hi0, a0, b0) in tent_pieces(p) {
        for (lo1, hi1, a1, b1) in tent_pieces(q) {
            let corner0 = lo0 == 0.0 || hi0 == 0.0;
            let corner1 = lo1 == 0.0 || hi1 == 0.0;
            if corner0 && corner1 {
                // Reflect so the box is [0, A] x [0, B].
                let (len0, s0) = if lo0 == 0.0 { (hi0, b0) } else { (-lo0, -b0) };
                let (len1, s1) = if lo1 == 0.0 { (hi1, b1) } else { (-lo1, -b1) };
                total += polar_corner_box(a0, s0, len0, a1, s1, len1, alpha, quad);
                continue;
            }
            let mut f = |x: f64, y: f64| {
                (a0 + b0 * x) * (a1 + b1 * y) * (x * x + y * y).powf(-1.0 - 0.5 * alpha)
            };
            total += if near {
                adaptive_2d(
                    &mut f,
                    [lo0, lo1],
                    [hi0, hi1],
                    order,
                    quad.local_tol(),
                    0.0,
                    quad.near_field_levels,
                )
            } else {
                gauss_2d(&mut f, [lo0, lo1], [hi0, hi1], order)
            };
        }
    }
    total
}

/// `int_{[0,A]x[0,B]} (a0 + s0 x)(a1 + s1 y) |z|^{-2-alpha} dz` for a
/// polynomial vanishing at the origin (`a0 a1 = 0`).
#[allow(clippy::too_many_arguments)]
fn polar_corner_box(
    a0: f64,
    s0: f64,
    len0: f64,
    a1: f64,
    s1: f64,
    len1: f64,
    alpha: f64,
    quad: &QuadratureSpec,
) -> f64 {
    debug_assert!((a0 * a1).abs() < 1e-12);
    let order = quad.base_rule.order();
    let theta_c = (len1 / len0).atan();
    // Polynomial in polar form: r (a0 s1 sin + s0 a1 cos) + r^2 s0 s1 cos sin.
    let radial = |theta: f64, rho: f64| {
        let (s, c) = theta.sin_cos();
        let m1 = a0 * s1 * s + s0 * a1 * c;
        let m2 = s0 * s1 * c * s;
        m1 * rho.powf(1.0 - alpha) / (1.0 - alpha) + m2 * rho.powf(2.0 - alpha) / (2.0 - alpha)
    };
    let levels = quad.near_field_levels;
    let tol = quad.local_tol();
    let lower = adaptive_1d(
        &mut |t: f64| radial(t, len0 / t.cos()),
        0.0,
        theta_c,
        order,
        tol,
        levels,
    );
    let upper = adaptive_1d(
        &mut |t: f64| radial(t, len1 / t.sin()),
        theta_c,
        std::f64::consts::FRAC_PI_2,
        order,
        tol,
        levels,
    );
    lower + upper
}

fn adaptive_1d(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    order: usize,
    rel_tol: f64,
    depth: usize,
) -> f64 {
    let whole = gauss_1d(f, a, b, order);
    adaptive_1d_rec(f, a, b, whole, order, rel_tol, depth)
}

fn adaptive_1d_rec(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    whole: f64,
    order: usize,
    rel_tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let left = gauss_1d(f, a, m, order);
    let right = gauss_1d(f, m, b, order);
    let sum = left + right;
    if depth == 0 || (sum - whole).abs() <= rel_tol * sum.abs() {
        return sum;
    }
    adaptive_1d_rec(f, a, m, left, order, rel_tol, depth - 1)
        + adaptive_1d_rec(f, m, b, right, order, rel_tol, depth - 1)
}

/// `int_{C_i} int_{C_j} |x - y|^{-(d+alpha)} dx dy` for two distinct cells.
pub fn cell_pair_weight(
    grid: &Grid,
    i: usize,
    j: usize,
    alpha: f64,
    quad: &QuadratureSpec,
) -> Result<f64> {
    if i == j {
        return Err(Error::SelfPair(i));
    }
    check_alpha(alpha)?;
    quad.validate()?;
    let (ci, ri) = grid.coords(i);
    let (cj, rj) = grid.coords(j);
    let offset = [cj as i64 - ci as i64, rj as i64 - ri as i64];
    let d = grid.dim() as f64;
    Ok(grid.h().powf(d - alpha) * unit_offset_weight(grid.dim(), offset, alpha, quad))
}

/// Integrated kernel weights on a grid, truncated or not.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    grid: Grid,
    alpha: f64,
    truncation_radius: Option<f64>,
    quad: QuadratureSpec,
    /// Maximum |offset| per axis covered by `dense`.
    reach: i64,
    /// Weight per offset on a `(2 reach + 1)^d` lattice; 0 beyond truncation.
    dense: Vec<f64>,
    /// Nonzero offsets sorted by linear index delta `dy * n + dx`.
    offsets: Vec<([i64; 2], f64)>,
    beta: Vec<f64>,
}

/// Builds the kernel table; `truncation_radius = None` keeps every interior
/// pair and the full exterior of the unit square/interval.
pub fn tabulate_kernel(
    grid: &Grid,
    alpha: f64,
    truncation_radius: Option<f64>,
    quad: &QuadratureSpec,
) -> Result<KernelTable> {
    check_alpha(alpha)?;
    quad.validate()?;
    let h = grid.h();
    let n = grid.n() as i64;
    if let Some(r) = truncation_radius {
        if !(r >= h * (1.0 - 1e-12)) {
            return Err(Error::DegenerateTruncation { radius: r, h });
        }
    }
    let reach = match truncation_radius {
        Some(r) => ((r / h) * (1.0 + RADIUS_SLACK)).floor() as i64,
        None => n - 1,
    };
    let in_range = |o: [i64; 2]| -> bool {
        match truncation_radius {
            Some(r) => {
                let rr = (r / h).powi(2) * (1.0 + RADIUS_SLACK);
                ((o[0] * o[0] + o[1] * o[1]) as f64) <= rr
            }
            None => true,
        }
    };
    let dim = grid.dim();
    let side = 2 * reach + 1;
    let ys: Vec<i64> = if dim == 1 { vec![0] } else { (-reach..=reach).collect() };
    let mut candidates: Vec<[i64; 2]> = Vec::new();
    for &dy in &ys {
        for dx in -reach..=reach {
            let o = [dx, dy];
            if o != [0, 0] && in_range(o) {
                candidates.push(o);
            }
        }
    }
    // Weights depend only on the canonical offset; evaluate each once.
    let canonical = |o: [i64; 2]| -> (i64, i64) {
        let a = o[0].abs();
        let b = o[1].abs();
        (a.max(b), a.min(b))
    };
    let mut keys: Vec<(i64, i64)> = candidates.iter().map(|&o| canonical(o)).collect();
    keys.sort_unstable();
    keys.dedup();
    let scale = h.powf(dim as f64 - alpha);
    let values: Vec<f64> = keys
        .par_iter()
        .map(|&(p, q)| scale * unit_offset_weight(dim, [p, q], alpha, quad))
        .collect();
    let lookup = |o: [i64; 2]| -> f64 {
        let k = keys.binary_search(&canonical(o)).expect("canonical offset tabulated");
        values[k]
    };

    let dense_len = if dim == 1 { side } else { side * side } as usize;
    let mut dense = vec![0.0; dense_len];
    let mut offsets = Vec::with_capacity(candidates.len());
    for &o in &candidates {
        let w = lookup(o);
        let idx = dense_index(dim, reach, o);
        dense[idx] = w;
        offsets.push((o, w));
    }
    offsets.sort_by_key(|(o, _)| (o[1] * n + o[0], o[1]));

    let beta = match truncation_radius {
        Some(_) => truncated_beta(grid, &offsets),
        None => exact_beta(grid, alpha, quad),
    };
    Ok(KernelTable {
        grid: *grid,
        alpha,
        truncation_radius,
        quad: *quad,
        reach,
        dense,
        offsets,
        beta,
    })
}

fn dense_index(dim: usize, reach: i64, o: [i64; 2]) -> usize {
    let side = 2 * reach + 1;
    if dim == 1 {
        (o[0] + reach) as usize
    } else {
        ((o[1] + reach) * side + (o[0] + reach)) as usize
    }
}

/// Sum of weights to exterior cells inside the band and the truncation radius.
fn truncated_beta(grid: &Grid, offsets: &[([i64; 2], f64)]) -> Vec<f64> {
    let n = grid.n() as i64;
    let band = grid.exterior_band() as i64;
    let dim = grid.dim();
    (0..grid.num_cells())
        .into_par_iter()
        .map(|c| {
            let (ci, cj) = grid.coords(c);
            let (ci, cj) = (ci as i64, cj as i64);
            let mut acc = 0.0;
            for &(o, w) in offsets {
                let x = ci + o[0];
                let y = cj + o[1];
                let interior_x = (0..n).contains(&x);
                let interior_y = dim == 1 || (0..n).contains(&y);
                if interior_x && interior_y {
                    continue;
                }
                let in_band_x = (-band..n + band).contains(&x);
                let in_band_y = dim == 1 || (-band..n + band).contains(&y);
                if in_band_x && in_band_y {
                    acc += w;
                }
            }
            acc
        })
        .collect()
}

fn exact_beta(grid: &Grid, alpha: f64, quad: &QuadratureSpec) -> Vec<f64> {
    let h = grid.h();
    if grid.dim() == 1 {
        return (0..grid.num_cells())
            .map(|c| {
                let lo = c as f64 * h;
                let hi = lo + h;
                // int_lo^hi (x^{-a} + (1-x)^{-a}) / a dx
                let k = 1.0 / (alpha * (1.0 - alpha));
                k * ((hi.powf(1.0 - alpha) - lo.powf(1.0 - alpha))
                    + ((1.0 - lo).powf(1.0 - alpha) - (1.0 - hi).powf(1.0 - alpha)))
            })
            .collect();
    }
    // The exterior of the square is invariant under its eight symmetries;
    // evaluate one representative per orbit.
    let n = grid.n();
    let fold = |k: usize| k.min(n - 1 - k);
    let canonical = |c: usize| {
        let (i, j) = grid.coords(c);
        let (a, b) = (fold(i), fold(j));
        (a.min(b), a.max(b))
    };
    let mut reps: Vec<(usize, usize)> = (0..grid.num_cells()).map(canonical).collect();
    reps.sort_unstable();
    reps.dedup();
    let values: Vec<f64> = reps
        .par_iter()
        .map(|&(i, j)| {
            let lo = [i as f64 * h, j as f64 * h];
            let hi = [lo[0] + h, lo[1] + h];
            exterior_cell_integral(lo, hi, alpha, quad)
        })
        .collect();
    (0..grid.num_cells())
        .map(|c| values[reps.binary_search(&canonical(c)).expect("orbit representative")])
        .collect()
}

/// `c_alpha = int_R (1 + t^2)^{-(2+alpha)/2} dt`.
fn line_constant(alpha: f64) -> f64 {
    std::f64::consts::PI.sqrt() * libm::tgamma(0.5 * (1.0 + alpha)) / libm::tgamma(1.0 + 0.5 * alpha)
}

const GRADED_ORDER: usize = 8;
const GRADED_LEVELS: usize = 48;

/// Kernel mass of the quadrant `{u > a, v > b}` seen from the origin.
fn quadrant_mass(a: f64, b: f64, alpha: f64) -> f64 {
    let theta = b.atan2(a);
    let lower = graded_toward_left(
        &mut |t: f64| (t.sin().max(0.0) / b).powf(alpha),
        0.0,
        theta,
        GRADED_ORDER,
        GRADED_LEVELS,
    );
    let upper = graded_toward_right(
        &mut |t: f64| (t.cos().max(0.0) / a).powf(alpha),
        theta,
        std::f64::consts::FRAC_PI_2,
        GRADED_ORDER,
        GRADED_LEVELS,
    );
    (lower + upper) / alpha
}

/// `-d/da` of [`quadrant_mass`]: `int_b^inf (a^2 + v^2)^{-(2+alpha)/2} dv`.
fn quadrant_mass_slope(a: f64, b: f64, alpha: f64) -> f64 {
    let phi = b.atan2(a);
    a.powf(-1.0 - alpha)
        * graded_toward_right(
            &mut |t: f64| t.cos().max(0.0).powf(alpha),
            phi,
            std::f64::consts::FRAC_PI_2,
            GRADED_ORDER,
            GRADED_LEVELS,
        )
}

/// Exterior potential `int_{R^2 \ (0,1)^2} |x - y|^{-2-alpha} dy` for `x`
/// inside the unit square.
pub fn exterior_potential(x: [f64; 2], alpha: f64) -> f64 {
    let c = line_constant(alpha);
    let d = [x[0], 1.0 - x[0], x[1], 1.0 - x[1]];
    let sides: f64 = d.iter().map(|&s| c * s.powf(-alpha) / alpha).sum();
    let corners = quadrant_mass(d[0], d[2], alpha)
        + quadrant_mass(d[1], d[2], alpha)
        + quadrant_mass(d[0], d[3], alpha)
        + quadrant_mass(d[1], d[3], alpha);
    sides - corners
}

/// Gradient of [`exterior_potential`].
pub fn exterior_potential_gradient(x: [f64; 2], alpha: f64) -> [f64; 2] {
    let c = line_constant(alpha);
    let (l, r, b, t) = (x[0], 1.0 - x[0], x[1], 1.0 - x[1]);
    // Half planes: d/ds (c s^{-a}/a) = -c s^{-a-1}; s = x or 1 - x.
    let mut g0 = -c * l.powf(-1.0 - alpha) + c * r.powf(-1.0 - alpha);
    let mut g1 = -c * b.powf(-1.0 - alpha) + c * t.powf(-1.0 - alpha);
    // Quadrants enter with a minus sign; dQ/da = -slope(a, b).
    g0 += quadrant_mass_slope(l, b, alpha) + quadrant_mass_slope(l, t, alpha)
        - quadrant_mass_slope(r, b, alpha)
        - quadrant_mass_slope(r, t, alpha);
    g1 += quadrant_mass_slope(b, l, alpha) + quadrant_mass_slope(b, r, alpha)
        - quadrant_mass_slope(t, l, alpha)
        - quadrant_mass_slope(t, r, alpha);
    [g0, g1]
}

/// `int_{cell} exterior_potential(x) dx` for a cell `[lo, hi]` in the unit square.
fn exterior_cell_integral(lo: [f64; 2], hi: [f64; 2], alpha: f64, quad: &QuadratureSpec) -> f64 {
    let c = line_constant(alpha);
    let k = c / (alpha * (1.0 - alpha));
    let w0 = hi[0] - lo[0];
    let w1 = hi[1] - lo[1];
    let p = |s: f64| s.powf(1.0 - alpha);
    // Half planes in closed form.
    let sides = k
        * (w1 * (p(hi[0]) - p(lo[0]))
            + w1 * (p(1.0 - lo[0]) - p(1.0 - hi[0]))
            + w0 * (p(hi[1]) - p(lo[1]))
            + w0 * (p(1.0 - lo[1]) - p(1.0 - hi[1])));
    // Quadrants: reflect each domain corner to the origin.
    let mut corners = 0.0;
    for flip_x in [false, true] {
        for flip_y in [false, true] {
            let (a0, a1) = if flip_x { (1.0 - hi[0], 1.0 - lo[0]) } else { (lo[0], hi[0]) };
            let (b0, b1) = if flip_y { (1.0 - hi[1], 1.0 - lo[1]) } else { (lo[1], hi[1]) };
            corners += corner_region_integral([a0, b0], [a1, b1], alpha, quad);
        }
    }
    sides - corners
}

/// `int_{[lo, hi]} Q(a, b) da db` where `Q` is singular at the origin only.
fn corner_region_integral(lo: [f64; 2], hi: [f64; 2], alpha: f64, quad: &QuadratureSpec) -> f64 {
    let order = quad.base_rule.order().max(4);
    let mut f = |a: f64, b: f64| quadrant_mass(a, b, alpha);
    if lo[0] > 0.0 || lo[1] > 0.0 {
        return adaptive_2d(&mut f, lo, hi, order, 1e-9, 0.0, 4);
    }
    // Cell touching the corner: L-shaped layers shrinking toward the origin.
    let mut acc = 0.0;
    let mut s = [hi[0], hi[1]];
    for _ in 0..48 {
        let m = [0.5 * s[0], 0.5 * s[1]];
        acc += gauss_2d(&mut f, [m[0], 0.0], [s[0], m[1]], order);
        acc += gauss_2d(&mut f, [0.0, m[1]], [m[0], s[1]], order);
        acc += gauss_2d(&mut f, [m[0], m[1]], [s[0], s[1]], order);
        s = m;
    }
    acc
}

impl KernelTable {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn truncation_radius(&self) -> Option<f64> {
        self.truncation_radius
    }

    pub fn quad(&self) -> &QuadratureSpec {
        &self.quad
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Stored nonzero offsets and their weights in summation order.
    pub fn offsets(&self) -> &[([i64; 2], f64)] {
        &self.offsets
    }

    /// Number of interior neighbors of `cell` with a stored weight.
    pub fn neighbor_count(&self, cell: usize) -> usize {
        self.neighbors_of(cell).count()
    }

    /// Interior neighbors of `cell` with their stored weights.
    pub fn neighbors_of(&self, cell: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let n = self.grid.n() as i64;
        let dim = self.grid.dim();
        let (ci, cj) = self.grid.coords(cell);
        let (ci, cj) = (ci as i64, cj as i64);
        self.offsets.iter().filter_map(move |&(o, w)| {
            let x = ci + o[0];
            let y = cj + o[1];
            if !(0..n).contains(&x) || (dim == 2 && !(0..n).contains(&y)) {
                return None;
            }
            Some(((y * n + x) as usize, w))
        })
    }

    /// Weight `kappa_ij` (0 beyond truncation or for `i == j`).
    pub fn kappa(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (ci, cj) = self.grid.coords(i);
        let (di, dj) = self.grid.coords(j);
        let o = [di as i64 - ci as i64, dj as i64 - cj as i64];
        if o[0].abs() > self.reach || o[1].abs() > self.reach {
            return 0.0;
        }
        self.dense[dense_index(self.grid.dim(), self.reach, o)]
    }

    /// All stored unordered interior pairs `(i, j, kappa)` with `i < j`, in
    /// lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.grid.num_cells()).flat_map(move |i| {
            self.neighbors_of(i)
                .filter(move |&(j, _)| j > i)
                .map(move |(j, w)| (i, j, w))
        })
    }

    /// Discrete `P_alpha(E) = 2 [sum_{i in E, j not in E} kappa_ij + sum_{i in E} beta_i]`.
    pub fn frac_perimeter(&self, set: &CellSet) -> Result<f64> {
        if *set.grid() != self.grid {
            return Err(Error::Incompatible("cell set and kernel table grids differ".into()));
        }
        let members = set.members();
        let all_pairs = self.truncation_radius.is_none();
        let outside: Vec<usize> = if all_pairs {
            (0..members.len()).filter(|&j| !members[j]).collect()
        } else {
            Vec::new()
        };
        let per_cell: Vec<f64> = (0..members.len())
            .into_par_iter()
            .map(|i| {
                if !members[i] {
                    return 0.0;
                }
                let mut acc = 0.0;
                if all_pairs {
                    for &j in &outside {
                        acc += self.kappa(i, j);
                    }
                } else {
                    for (j, w) in self.neighbors_of(i) {
                        if !members[j] {
                            acc += w;
                        }
                    }
                }
                acc + self.beta[i]
            })
            .collect();
        Ok(2.0 * per_cell.iter().sum::<f64>())
    }

    /// `R_alpha(w) = (1 - alpha) sum_k |w_k| P_alpha(E_k)`.
    pub fn regularizer(&self, w: &ControlField) -> Result<f64> {
        if *w.grid() != self.grid {
            return Err(Error::Incompatible("control and kernel table grids differ".into()));
        }
        let mut acc = 0.0;
        for (k, &value) in w.labels().values().iter().enumerate() {
            if value == 0 {
                continue;
            }
            acc += value.unsigned_abs() as f64 * self.frac_perimeter(&w.level_set(k)?)?;
        }
        Ok((1.0 - self.alpha) * acc)
    }

    /// Rebuilds a table from stored pairs and exterior weights, as read back
    /// from a cache file. Pairs must be translation invariant.
    pub fn from_parts(
        grid: Grid,
        alpha: f64,
        truncation_radius: Option<f64>,
        quad: QuadratureSpec,
        pairs: &[(usize, usize, f64)],
        beta: Vec<f64>,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if beta.len() != grid.num_cells() {
            return Err(Error::Incompatible(format!(
                "{} exterior weights for {} cells",
                beta.len(),
                grid.num_cells()
            )));
        }
        let n = grid.n() as i64;
        let mut by_offset: std::collections::BTreeMap<[i64; 2], f64> = Default::default();
        for &(i, j, w) in pairs {
            if i >= grid.num_cells() || j >= grid.num_cells() || i == j {
                return Err(Error::Incompatible(format!("invalid pair ({i}, {j})")));
            }
            let (ci, cj) = grid.coords(i);
            let (di, dj) = grid.coords(j);
            let o = [di as i64 - ci as i64, dj as i64 - cj as i64];
            for key in [o, [-o[0], -o[1]]] {
                match by_offset.get(&key) {
                    Some(&prev) if prev.to_bits() != w.to_bits() => {
                        return Err(Error::Incompatible(format!(
                            "offset {key:?} has inconsistent weights"
                        )))
                    }
                    _ => {
                        by_offset.insert(key, w);
                    }
                }
            }
        }
        let reach = by_offset
            .keys()
            .map(|o| o[0].abs().max(o[1].abs()))
            .max()
            .unwrap_or(0);
        let dim = grid.dim();
        let side = (2 * reach + 1) as usize;
        let mut dense = vec![0.0; if dim == 1 { side } else { side * side }];
        let mut offsets: Vec<([i64; 2], f64)> = by_offset.into_iter().collect();
        for &(o, w) in &offsets {
            dense[dense_index(dim, reach, o)] = w;
        }
        offsets.sort_by_key(|(o, _)| (o[1] * n + o[0], o[1]));
        Ok(Self {
            grid,
            alpha,
            truncation_radius,
            quad,
            reach,
            dense,
            offsets,
            beta,
        })
    }
}

/// Closed form `P_alpha([0, len]) = 4 len^{1-alpha} / (alpha (1 - alpha))` on the line.
pub fn frac_perimeter_1d_exact(len: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(len > 0.0) {
        return Err(Error::Domain(format!("interval length must be positive, got {len}")));
    }
    Ok(4.0 * len.powf(1.0 - alpha) / (alpha * (1.0 - alpha)))
}
