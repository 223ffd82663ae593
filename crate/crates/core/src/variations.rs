//! Local variations `f_t = I + t phi` of sets sampled on a fine midpoint
//! lattice, and the first variations of `P_alpha` and of a linear term.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{CellSet, Grid};
use crate::kernel::{exterior_potential, exterior_potential_gradient, tabulate_kernel, KernelTable, QuadratureSpec};
use crate::quadrature::gauss_legendre;

const INVERSE_TOL: f64 = 1e-12;
const INVERSE_MAX_ITER: usize = 100;
const PROFILE_SAMPLES: usize = 20_000;
const ROWS: usize = 512;
const ROW_SCAN: usize = 256;

/// `psi(s) = exp(1 - 1/(1 - s))` for `s < 1`, else 0.
fn profile(s: f64) -> f64 {
    if s < 1.0 {
        (1.0 - 1.0 / (1.0 - s)).exp()
    } else {
        0.0
    }
}

fn profile_slope(s: f64) -> f64 {
    if s < 1.0 {
        -profile(s) / ((1.0 - s) * (1.0 - s))
    } else {
        0.0
    }
}

/// Maximum of a smooth function on `[0, 1]` by dense sampling and a
/// golden-section polish around the best sample.
fn profile_max(f: impl Fn(f64) -> f64) -> f64 {
    let step = 1.0 / PROFILE_SAMPLES as f64;
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
    for k in 0..=PROFILE_SAMPLES {
        let s = k as f64 * step;
        let v = f(s);
        if v > best {
            best = v;
            arg = s;
        }
    }
    let (mut a, mut b) = ((arg - step).max(0.0), (arg + step).min(1.0));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) >= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(f(0.5 * (a + b)))
}

/// Compactly supported smooth velocity fields built from the bump profile
/// `psi(|x - c|^2 / rho^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityField {
    /// `phi(x) = a psi(|x - c|^2 / rho^2)`.
    Bump {
        center: [f64; 2],
        radius: f64,
        amplitude: [f64; 2],
    },
    /// `phi(x) = A (x - c) psi(|x - c|^2 / rho^2)`.
    RadialBump {
        center: [f64; 2],
        radius: f64,
        amplitude: f64,
    },
}

impl VelocityField {
    pub fn bump(center: [f64; 2], radius: f64, amplitude: [f64; 2]) -> Result<Self> {
        check_support(center, radius)?;
        Ok(Self::Bump {
            center,
            radius,
            amplitude,
        })
    }

    pub fn radial_bump(center: [f64; 2], radius: f64, amplitude: f64) -> Result<Self> {
        check_support(center, radius)?;
        Ok(Self::RadialBump {
            center,
            radius,
            amplitude,
        })
    }

    pub fn center(&self) -> [f64; 2] {
        match *self {
            Self::Bump { center, .. } | Self::RadialBump { center, .. } => center,
        }
    }

    pub fn radius(&self) -> f64 {
        match *self {
            Self::Bump { radius, .. } | Self::RadialBump { radius, .. } => radius,
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Self::Bump { amplitude, .. } => amplitude == [0.0, 0.0],
            Self::RadialBump { amplitude, .. } => amplitude == 0.0,
        }
    }

    /// Whether `x` lies in the open support ball.
    pub fn in_support(&self, x: [f64; 2]) -> bool {
        self.scaled_sq(x) < 1.0 && !self.is_zero()
    }

    fn scaled_sq(&self, x: [f64; 2]) -> f64 {
        let c = self.center();
        let r = self.radius();
        ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / (r * r)
    }

    pub fn value(&self, x: [f64; 2]) -> [f64; 2] {
        let s = self.scaled_sq(x);
        if s >= 1.0 {
            return [0.0, 0.0];
        }
        let p = profile(s);
        match *self {
            Self::Bump { amplitude: a, .. } => [a[0] * p, a[1] * p],
            Self::RadialBump {
                center: c,
                amplitude: a,
                ..
            } => [a * (x[0] - c[0]) * p, a * (x[1] - c[1]) * p],
        }
    }

    /// `D phi(x)` with entries `[k][l] = d phi_k / d x_l`.
    pub fn jacobian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let s = self.scaled_sq(x);
        if s >= 1.0 {
            return [[0.0; 2]; 2];
        }
        let c = self.center();
        let rho2 = self.radius().powi(2);
        let r = [x[0] - c[0], x[1] - c[1]];
        let dp = profile_slope(s);
        let grad = [2.0 * dp * r[0] / rho2, 2.0 * dp * r[1] / rho2];
        match *self {
            Self::Bump { amplitude: a, .. } => [
                [a[0] * grad[0], a[0] * grad[1]],
                [a[1] * grad[0], a[1] * grad[1]],
            ],
            Self::RadialBump { amplitude: a, .. } => {
                let p = profile(s);
                [
                    [a * (p + r[0] * grad[0]), a * r[0] * grad[1]],
                    [a * r[1] * grad[0], a * (p + r[1] * grad[1])],
                ]
            }
        }
    }

    pub fn divergence(&self, x: [f64; 2]) -> f64 {
        let s = self.scaled_sq(x);
        if s >= 1.0 {
            return 0.0;
        }
        let c = self.center();
        let rho2 = self.radius().powi(2);
        let r = [x[0] - c[0], x[1] - c[1]];
        let dp = profile_slope(s);
        match *self {
            Self::Bump { amplitude: a, .. } => 2.0 * dp * (a[0] * r[0] + a[1] * r[1]) / rho2,
            Self::RadialBump { amplitude: a, .. } => a * (2.0 * profile(s) + 2.0 * s * dp),
        }
    }

    /// Lipschitz constant of `phi` (operator norm bound of `D phi`).
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Self::Bump {
                radius, amplitude, ..
            } => {
                let a = amplitude[0].hypot(amplitude[1]);
                a * profile_max(|s| 2.0 * s.sqrt() * profile_slope(s).abs()) / radius
            }
            Self::RadialBump { amplitude, .. } => {
                amplitude.abs()
                    * profile_max(|s| profile(s).max((profile(s) + 2.0 * s * profile_slope(s)).abs()))
            }
        }
    }

    /// `max_x |div phi(x)|`.
    pub fn max_abs_divergence(&self) -> f64 {
        match *self {
            Self::Bump { .. } => self.lipschitz(),
            Self::RadialBump { amplitude, .. } => {
                amplitude.abs() * profile_max(|s| (2.0 * profile(s) + 2.0 * s * profile_slope(s)).abs())
            }
        }
    }

    /// `f_t(x) = x + t phi(x)`.
    pub fn forward(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let v = self.value(x);
        [x[0] + t * v[0], x[1] + t * v[1]]
    }

    /// `g_t = f_t^{-1}` by the fixed point iteration `y <- x - t phi(y)`.
    pub fn inverse(&self, t: f64, x: [f64; 2]) -> Result<[f64; 2]> {
        let mut y = x;
        for it in 0..INVERSE_MAX_ITER {
            let v = self.value(y);
            let next = [x[0] - t * v[0], x[1] - t * v[1]];
            let step = (next[0] - y[0]).hypot(next[1] - y[1]);
            y = next;
            if step <= INVERSE_TOL {
                return Ok(y);
            }
            if it + 1 == INVERSE_MAX_ITER {
                return Err(Error::SolverFailure {
                    iterations: INVERSE_MAX_ITER,
                    residual: step,
                });
            }
        }
        Ok(y)
    }

    /// `det D f_t(x)`.
    pub fn jacobian_det(&self, t: f64, x: [f64; 2]) -> f64 {
        let j = self.jacobian(x);
        (1.0 + t * j[0][0]) * (1.0 + t * j[1][1]) - t * t * j[0][1] * j[1][0]
    }

    pub fn check_step(&self, t: f64) -> Result<()> {
        let step = t.abs() * self.lipschitz();
        if !(step < 0.5) {
            return Err(Error::StepTooLarge(step));
        }
        Ok(())
    }
}

fn check_support(center: [f64; 2], radius: f64) -> Result<()> {
    let inside = radius > 0.0
        && center.iter().all(|&c| c - radius > 0.0 && c + radius < 1.0);
    if !inside {
        return Err(Error::Domain(format!(
            "bump support B({radius}, {center:?}) must lie inside the unit square"
        )));
    }
    Ok(())
}

/// `C(x, y)` for the kernel `|x - y|^{-2-alpha}`.
pub fn c_kernel(phi: &VelocityField, alpha: f64, x: [f64; 2], y: [f64; 2]) -> f64 {
    let d = [x[0] - y[0], x[1] - y[1]];
    let (px, py) = (phi.value(x), phi.value(y));
    let dp = [px[0] - py[0], px[1] - py[1]];
    phi.divergence(x) + phi.divergence(y)
        - (2.0 + alpha) * (d[0] * dp[0] + d[1] * dp[1]) / (d[0] * d[0] + d[1] * d[1])
}

/// `2 max |div phi| + (d + alpha) Lip(phi)`.
pub fn c_bound(phi: &VelocityField, alpha: f64) -> f64 {
    2.0 * phi.max_abs_divergence() + (2.0 + alpha) * phi.lipschitz()
}

/// Analytic shapes `{x : level(x) < 0}`.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Disk { center: [f64; 2], radius: f64 },
    /// `{x : x . normal < offset}` with a unit `normal`.
    HalfPlane { normal: [f64; 2], offset: f64 },
    Rect { lo: [f64; 2], hi: [f64; 2] },
    Whole,
    Complement(Box<Shape>),
}

impl Shape {
    pub fn half_plane(normal: [f64; 2], offset: f64) -> Self {
        let len = normal[0].hypot(normal[1]);
        Self::HalfPlane {
            normal: [normal[0] / len, normal[1] / len],
            offset: offset / len,
        }
    }

    pub fn level(&self, x: [f64; 2]) -> f64 {
        match self {
            Self::Disk { center, radius } => (x[0] - center[0]).hypot(x[1] - center[1]) - radius,
            Self::HalfPlane { normal, offset } => x[0] * normal[0] + x[1] * normal[1] - offset,
            Self::Rect { lo, hi } => (lo[0] - x[0])
                .max(x[0] - hi[0])
                .max(lo[1] - x[1])
                .max(x[1] - hi[1]),
            Self::Whole => -1.0,
            Self::Complement(s) => -s.level(x),
        }
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        self.level(x) < 0.0
    }
}

/// A subset of the unit square sampled on an `m x m` midpoint lattice,
/// optionally backed by an analytic shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSet {
    grid: Grid,
    members: Vec<bool>,
    shape: Option<Shape>,
}

impl SampledSet {
    pub fn from_shape(m: usize, shape: Shape) -> Result<Self> {
        let grid = Grid::new(m, 0)?;
        let members = (0..grid.num_cells())
            .map(|c| shape.contains(grid.center(c)))
            .collect();
        Ok(Self {
            grid,
            members,
            shape: Some(shape),
        })
    }

    pub fn from_members(m: usize, members: Vec<bool>) -> Result<Self> {
        let grid = Grid::new(m, 0)?;
        if members.len() != grid.num_cells() {
            return Err(Error::Incompatible(format!(
                "{} memberships for a {m} x {m} lattice",
                members.len()
            )));
        }
        Ok(Self {
            grid,
            members,
            shape: None,
        })
    }

    pub fn m(&self) -> usize {
        self.grid.n()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    pub fn shape(&self) -> Option<&Shape> {
        self.shape.as_ref()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.members[idx]
    }

    /// Membership of an arbitrary point; exact for shaped sets, by sample
    /// cell lookup otherwise.
    pub fn contains_point(&self, x: [f64; 2]) -> bool {
        match &self.shape {
            Some(s) => s.contains(x),
            None => self
                .grid
                .cell_containing(x)
                .is_some_and(|c| self.members[c]),
        }
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|&&b| b).count()
    }

    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.grid.cell_volume()
    }

    pub fn complement(&self) -> Self {
        Self {
            grid: self.grid,
            members: self.members.iter().map(|&b| !b).collect(),
            shape: self.shape.clone().map(|s| Shape::Complement(Box::new(s))),
        }
    }

    pub fn to_cell_set(&self) -> CellSet {
        CellSet::from_members(self.grid, self.members.clone()).expect("lattice sizes agree")
    }
}

/// Sample cell with center `x` belongs to `f_t(E)` iff `g_t(x)` lies in `E`.
pub fn deform_set(set: &SampledSet, phi: &VelocityField, t: f64) -> Result<SampledSet> {
    phi.check_step(t)?;
    let grid = set.grid;
    let members = (0..grid.num_cells())
        .map(|c| {
            let x = grid.center(c);
            if t == 0.0 || !phi.in_support(x) {
                return Ok(set.members[c]);
            }
            Ok(set.contains_point(phi.inverse(t, x)?))
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(SampledSet {
        grid,
        members,
        shape: None,
    })
}

/// Untruncated kernel weights on a sample lattice.
#[derive(Debug, Clone)]
pub struct SampleKernel {
    table: KernelTable,
}

impl SampleKernel {
    pub fn new(m: usize, alpha: f64, quad: &QuadratureSpec) -> Result<Self> {
        let grid = Grid::new(m, 0)?;
        Ok(Self {
            table: tabulate_kernel(&grid, alpha, None, quad)?,
        })
    }

    pub fn table(&self) -> &KernelTable {
        &self.table
    }

    pub fn alpha(&self) -> f64 {
        self.table.alpha()
    }

    fn check(&self, set: &SampledSet) -> Result<()> {
        if set.grid != *self.table.grid() {
            return Err(Error::Incompatible("sampled set and kernel lattices differ".into()));
        }
        Ok(())
    }

    /// Sampled `P_alpha(E)`.
    pub fn perimeter(&self, set: &SampledSet) -> Result<f64> {
        self.check(set)?;
        self.table.frac_perimeter(&set.to_cell_set())
    }

    /// Sum of `pair(p, q)` over `p in E`, `q not in E` with `p` or `q` in
    /// the support of `phi`, plus `ext(p)` over `p in E` in the support.
    fn support_sum(
        &self,
        set: &SampledSet,
        phi: &VelocityField,
        pair: impl Fn(usize, usize) -> f64 + Sync,
        ext: impl Fn(usize) -> f64 + Sync,
    ) -> f64 {
        let grid = set.grid;
        let support: Vec<bool> = (0..grid.num_cells())
            .map(|c| phi.in_support(grid.center(c)))
            .collect();
        let outside: Vec<usize> = (0..grid.num_cells()).filter(|&c| !set.members[c]).collect();
        let outside_support: Vec<usize> = outside.iter().copied().filter(|&c| support[c]).collect();
        let per_cell: Vec<f64> = (0..grid.num_cells())
            .into_par_iter()
            .map(|p| {
                if !set.members[p] {
                    return 0.0;
                }
                let partners = if support[p] { &outside } else { &outside_support };
                let mut acc = 0.0;
                for &q in partners {
                    acc += pair(p, q);
                }
                if support[p] {
                    acc += ext(p);
                }
                acc
            })
            .collect();
        per_cell.iter().sum()
    }

    /// `P_alpha(f_t(E))` by pulling the double integral back to `E`.
    pub fn deformed_perimeter(&self, set: &SampledSet, phi: &VelocityField, t: f64) -> Result<f64> {
        self.check(set)?;
        phi.check_step(t)?;
        let base = self.perimeter(set)?;
        if t == 0.0 || phi.is_zero() {
            return Ok(base);
        }
        let grid = set.grid;
        let alpha = self.alpha();
        let vol = grid.cell_volume();
        let centers: Vec<[f64; 2]> = (0..grid.num_cells()).map(|c| grid.center(c)).collect();
        let moved: Vec<[f64; 2]> = centers.iter().map(|&x| phi.forward(t, x)).collect();
        let det: Vec<f64> = centers.iter().map(|&x| phi.jacobian_det(t, x)).collect();
        let expo = 0.5 * (2.0 + alpha);
        let delta = self.support_sum(
            set,
            phi,
            |p, q| {
                let (x, y) = (centers[p], centers[q]);
                let (fx, fy) = (moved[p], moved[q]);
                let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
                let f2 = (fx[0] - fy[0]).powi(2) + (fx[1] - fy[1]).powi(2);
                self.table.kappa(p, q) * ((d2 / f2).powf(expo) * det[p] * det[q] - 1.0)
            },
            |p| vol * (exterior_potential(moved[p], alpha) * det[p] - exterior_potential(centers[p], alpha)),
        );
        Ok(base + 2.0 * delta)
    }

    /// `L_alpha(E, phi)`: the derivative of `t -> P_alpha(f_t(E))` at 0,
    /// i.e. the double integral of `C(x, y) |x - y|^{-2-alpha}` over
    /// `E x E^c` and `E^c x E`.
    pub fn first_variation(&self, set: &SampledSet, phi: &VelocityField) -> Result<f64> {
        self.check(set)?;
        if phi.is_zero() {
            return Ok(0.0);
        }
        let grid = set.grid;
        let alpha = self.alpha();
        let vol = grid.cell_volume();
        let centers: Vec<[f64; 2]> = (0..grid.num_cells()).map(|c| grid.center(c)).collect();
        let sum = self.support_sum(
            set,
            phi,
            |p, q| self.table.kappa(p, q) * c_kernel(phi, alpha, centers[p], centers[q]),
            |p| {
                let x = centers[p];
                let v = phi.value(x);
                let g = exterior_potential_gradient(x, alpha);
                vol * (phi.divergence(x) * exterior_potential(x, alpha) + v[0] * g[0] + v[1] * g[1])
            },
        );
        Ok(2.0 * sum)
    }
}

/// Scalar field sampled at the centers of an `m x m` lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleField {
    grid: Grid,
    values: Vec<f64>,
}

impl SampleField {
    pub fn from_fn(m: usize, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let grid = Grid::new(m, 0)?;
        let values = (0..grid.num_cells()).map(|c| f(grid.center(c))).collect();
        Ok(Self { grid, values })
    }

    /// Bilinear interpolation of cell-centered values on `source`, constant
    /// extrapolation beyond the outermost centers.
    pub fn from_cells(source: &Grid, cell_values: &[f64], m: usize) -> Result<Self> {
        if cell_values.len() != source.num_cells() || source.dim() != 2 {
            return Err(Error::Incompatible("cell values do not match the source grid".into()));
        }
        let n = source.n();
        let h = source.h();
        let at = |i: usize, j: usize| cell_values[source.index(i, j)];
        let locate = |v: f64| -> (usize, f64) {
            let s = (v / h - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (s.floor() as usize).min(n - 2);
            (i, s - i as f64)
        };
        Self::from_fn(m, |x| {
            let (i, fx) = locate(x[0]);
            let (j, fy) = locate(x[1]);
            (1.0 - fx) * (1.0 - fy) * at(i, j)
                + fx * (1.0 - fy) * at(i + 1, j)
                + (1.0 - fx) * fy * at(i, j + 1)
                + fx * fy * at(i + 1, j + 1)
        })
    }

    pub fn m(&self) -> usize {
        self.grid.n()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Centered differences, one-sided at the lattice boundary.
    pub fn gradient(&self, idx: usize) -> [f64; 2] {
        let m = self.grid.n();
        let h = self.grid.h();
        let (i, j) = self.grid.coords(idx);
        let diff = |lo: usize, hi: usize, a: usize, b: usize| -> f64 {
            (self.values[b] - self.values[a]) / ((hi - lo) as f64 * h)
        };
        let (i0, i1) = (i.saturating_sub(1), (i + 1).min(m - 1));
        let (j0, j1) = (j.saturating_sub(1), (j + 1).min(m - 1));
        [
            diff(i0, i1, self.grid.index(i0, j), self.grid.index(i1, j)),
            diff(j0, j1, self.grid.index(i, j0), self.grid.index(i, j1)),
        ]
    }
}

/// Midpoint approximation of `int_E div(g phi) = int_E grad g . phi + g div phi`.
pub fn linearized_objective_variation(g: &SampleField, set: &SampledSet, phi: &VelocityField) -> Result<f64> {
    if g.grid != set.grid {
        return Err(Error::Incompatible("field and set lattices differ".into()));
    }
    if phi.is_zero() {
        return Ok(0.0);
    }
    let grid = set.grid;
    let mut acc = 0.0;
    for c in 0..grid.num_cells() {
        let x = grid.center(c);
        if !set.members[c] || !phi.in_support(x) {
            continue;
        }
        let v = phi.value(x);
        let dg = g.gradient(c);
        acc += dg[0] * v[0] + dg[1] * v[1] + g.values[c] * phi.divergence(x);
    }
    Ok(acc * grid.cell_volume())
}

/// Pieces `(row weight, x0, x1, y, sign)` of `chi_{f_t(S)} - chi_S` along
/// horizontal rows through the support of `phi`, with exact crossings.
fn row_pieces(shape: &Shape, phi: &VelocityField, t: f64) -> Result<Vec<(f64, f64, f64, f64, f64)>> {
    let c = phi.center();
    let rho = phi.radius();
    let dy = 2.0 * rho / ROWS as f64;
    let mut pieces = Vec::new();
    for k in 0..ROWS {
        let y = c[1] - rho + (k as f64 + 0.5) * dy;
        let half = (rho * rho - (y - c[1]).powi(2)).max(0.0).sqrt();
        let (x0, x1) = (c[0] - half, c[0] + half);
        let moved = |x: f64| -> Result<f64> { Ok(shape.level(phi.inverse(t, [x, y])?)) };
        let fixed = |x: f64| shape.level([x, y]);
        let mut cuts = vec![x0, x1];
        let dx = (x1 - x0) / ROW_SCAN as f64;
        let (mut pm, mut pf) = (moved(x0)?, fixed(x0));
        for s in 1..=ROW_SCAN {
            let (a, b) = (x0 + (s - 1) as f64 * dx, x0 + s as f64 * dx);
            let (qm, qf) = (moved(b)?, fixed(b));
            if (pm < 0.0) != (qm < 0.0) {
                cuts.push(bisect(&|x| moved(x), a, b, pm < 0.0)?);
            }
            if (pf < 0.0) != (qf < 0.0) {
                cuts.push(bisect(&|x| Ok(fixed(x)), a, b, pf < 0.0)?);
            }
            (pm, pf) = (qm, qf);
        }
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            if w[1] <= w[0] {
                continue;
            }
            let mid = 0.5 * (w[0] + w[1]);
            let sign = (moved(mid)? < 0.0) as i32 - (fixed(mid) < 0.0) as i32;
            if sign != 0 {
                pieces.push((dy, w[0], w[1], y, sign as f64));
            }
        }
    }
    Ok(pieces)
}

fn bisect(f: &dyn Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, inside_at_a: bool) -> Result<f64> {
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if (f(m)? < 0.0) == inside_at_a {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// `(g, chi_{f_t(E)} - chi_E)_{L^2}`; exact crossings for shaped sets,
/// sample counting otherwise.
pub fn signed_change_integral(
    set: &SampledSet,
    phi: &VelocityField,
    t: f64,
    g: impl Fn([f64; 2]) -> f64,
) -> Result<f64> {
    phi.check_step(t)?;
    if t == 0.0 || phi.is_zero() {
        return Ok(0.0);
    }
    match &set.shape {
        Some(shape) => {
            let (nodes, weights) = gauss_legendre(6);
            let mut acc = 0.0;
            for (wy, x0, x1, y, sign) in row_pieces(shape, phi, t)? {
                let half = 0.5 * (x1 - x0);
                let mid = 0.5 * (x1 + x0);
                let line: f64 = nodes
                    .iter()
                    .zip(weights)
                    .map(|(s, w)| w * g([mid + half * s, y]))
                    .sum();
                acc += wy * sign * half * line;
            }
            Ok(acc)
        }
        None => {
            let moved = deform_set(set, phi, t)?;
            let grid = set.grid;
            Ok(grid.cell_volume()
                * (0..grid.num_cells())
                    .map(|c| (moved.members[c] as i32 - set.members[c] as i32) as f64 * g(grid.center(c)))
                    .sum::<f64>())
        }
    }
}

/// `lambda(f_t(E) sym-diff E)`; exact crossings for shaped sets, sample
/// counting otherwise.
pub fn sym_diff_volume(set: &SampledSet, phi: &VelocityField, t: f64) -> Result<f64> {
    phi.check_step(t)?;
    if t == 0.0 || phi.is_zero() {
        return Ok(0.0);
    }
    match &set.shape {
        Some(shape) => Ok(row_pieces(shape, phi, t)?
            .iter()
            .map(|&(wy, x0, x1, _, _)| wy * (x1 - x0))
            .sum()),
        None => {
            let moved = deform_set(set, phi, t)?;
            let diff = moved
                .members
                .iter()
                .zip(&set.members)
                .filter(|(a, b)| a != b)
                .count();
            Ok(diff as f64 * set.grid.cell_volume())
        }
    }
}

/// `lambda(f_t(E) sym-diff E) / (|t|^alpha P_alpha(E))` per `t`; the
/// values of `t` must be positive and strictly decreasing.
pub fn sym_diff_ratios(
    kernel: &SampleKernel,
    set: &SampledSet,
    phi: &VelocityField,
    t_values: &[f64],
) -> Result<Vec<f64>> {
    if t_values.is_empty()
        || t_values.iter().any(|&t| !(t > 0.0))
        || t_values.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::Domain("t values must be positive and strictly decreasing".into()));
    }
    let p = kernel.perimeter(set)?;
    if !(p > 0.0) {
        return Err(Error::Domain("set has zero fractional perimeter".into()));
    }
    t_values
        .iter()
        .map(|&t| Ok(sym_diff_volume(set, phi, t)? / (t.powf(kernel.alpha()) * p)))
        .collect()
}

/// Maximum of [`sym_diff_ratios`].
pub fn sym_diff_bound_ratio(
    kernel: &SampleKernel,
    set: &SampledSet,
    phi: &VelocityField,
    t_values: &[f64],
) -> Result<f64> {
    Ok(sym_diff_ratios(kernel, set, phi, t_values)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// `sum_i w_i (int_{E_i} div(g phi) + L_alpha(E_i, phi))` for every `phi`
/// in the family; `partition` pairs each level value with its set.
pub fn stationarity_residual(
    kernel: &SampleKernel,
    partition: &[(i64, SampledSet)],
    g: &SampleField,
    phis: &[VelocityField],
) -> Result<Vec<f64>> {
    let Some((_, first)) = partition.first() else {
        return Err(Error::InvalidLabels("empty partition".into()));
    };
    for (_, set) in partition {
        kernel.check(set)?;
    }
    for c in 0..first.grid.num_cells() {
        let hits = partition.iter().filter(|(_, s)| s.members[c]).count();
        if hits != 1 {
            return Err(Error::InvalidLabels(format!(
                "sample {c} belongs to {hits} members of the partition"
            )));
        }
    }
    phis.iter()
        .map(|phi| {
            let mut acc = 0.0;
            for (w, set) in partition {
                if *w == 0 {
                    continue;
                }
                let term = linearized_objective_variation(g, set, phi)? + kernel.first_variation(set, phi)?;
                acc += *w as f64 * term;
            }
            Ok(acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump() -> VelocityField {
        VelocityField::bump([0.5, 0.5], 0.2, [0.3, -0.1]).unwrap()
    }

    fn radial() -> VelocityField {
        VelocityField::radial_bump([0.45, 0.55], 0.25, 0.8).unwrap()
    }

    #[test]
    fn support_must_be_interior() {
        assert!(VelocityField::bump([0.1, 0.5], 0.2, [1.0, 0.0]).is_err());
        assert!(VelocityField::radial_bump([0.5, 0.5], 0.5, 1.0).is_err());
    }

    #[test]
    fn jacobian_matches_differences_and_trace_is_divergence() {
        for phi in [bump(), radial()] {
            for x in [[0.5, 0.5], [0.55, 0.45], [0.62, 0.58], [0.41, 0.66]] {
                let j = phi.jacobian(x);
                let e = 1e-6;
                for l in 0..2 {
                    let mut a = x;
                    let mut b = x;
                    a[l] -= e;
                    b[l] += e;
                    let (va, vb) = (phi.value(a), phi.value(b));
                    for k in 0..2 {
                        let fd = (vb[k] - va[k]) / (2.0 * e);
                        assert!((fd - j[k][l]).abs() < 1e-6, "{fd} {}", j[k][l]);
                    }
                }
                assert!((j[0][0] + j[1][1] - phi.divergence(x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lipschitz_bounds_sampled_slopes() {
        for phi in [bump(), radial()] {
            let lip = phi.lipschitz();
            let mut seen: f64 = 0.0;
            for a in 0..60 {
                for b in 0..60 {
                    let x = [0.3 + a as f64 * 0.4 / 60.0, 0.3 + b as f64 * 0.4 / 60.0];
                    let j = phi.jacobian(x);
                    // Spectral norm of a 2 x 2 matrix.
                    let f2 = j[0][0].powi(2) + j[0][1].powi(2) + j[1][0].powi(2) + j[1][1].powi(2);
                    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                    let norm = (0.5 * (f2 + (f2 * f2 - 4.0 * det * det).max(0.0).sqrt())).sqrt();
                    seen = seen.max(norm);
                    assert!(phi.divergence(x).abs() <= phi.max_abs_divergence() * (1.0 + 1e-9));
                }
            }
            assert!(seen <= lip * (1.0 + 1e-9), "{seen} {lip}");
            assert!(seen >= 0.9 * lip, "{seen} {lip}");
        }
    }

    #[test]
    fn inverse_undoes_forward() {
        let phi = bump();
        let t = 0.4 / phi.lipschitz();
        for x in [[0.5, 0.5], [0.6, 0.45], [0.1, 0.9]] {
            let y = phi.inverse(t, phi.forward(t, x)).unwrap();
            assert!((y[0] - x[0]).abs() < 1e-11 && (y[1] - x[1]).abs() < 1e-11);
        }
    }

    #[test]
    fn step_guard() {
        let phi = bump();
        let t = 0.5 / phi.lipschitz();
        let e = SampledSet::from_shape(16, Shape::half_plane([1.0, 0.0], 0.5)).unwrap();
        assert!(matches!(deform_set(&e, &phi, t), Err(Error::StepTooLarge(_))));
        assert!(deform_set(&e, &phi, 0.99 * t).is_ok());
    }

    #[test]
    fn deform_trivial_cases() {
        let e = SampledSet::from_shape(32, Shape::Disk { center: [0.5, 0.5], radius: 0.27 }).unwrap();
        let zero = VelocityField::bump([0.5, 0.5], 0.2, [0.0, 0.0]).unwrap();
        assert_eq!(deform_set(&e, &bump(), 0.0).unwrap().members(), e.members());
        assert_eq!(deform_set(&e, &zero, 1e3).unwrap().members(), e.members());
    }

    #[test]
    fn half_plane_changes_only_inside_support() {
        let m = 64;
        let e = SampledSet::from_shape(m, Shape::half_plane([1.0, 0.0], 0.5)).unwrap();
        let phi = VelocityField::bump([0.5, 0.5], 0.2, [1.0, 0.0]).unwrap();
        let moved = deform_set(&e, &phi, 0.4 / phi.lipschitz()).unwrap();
        let mut changed = 0;
        for c in 0..e.grid().num_cells() {
            if moved.contains(c) != e.contains(c) {
                changed += 1;
                assert!(phi.in_support(e.grid().center(c)));
                assert!(moved.contains(c), "pushing right only adds cells");
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn c_kernel_respects_uniform_bound() {
        let alpha = 0.75;
        for phi in [bump(), radial()] {
            let bound = c_bound(&phi, alpha);
            let mut state = 0x2545F4914F6CDD1Du64;
            let mut next = || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            for _ in 0..20_000 {
                let x = [next(), next()];
                let scale = 10f64.powf(-4.0 * next());
                let y = [x[0] + scale * (next() - 0.5), x[1] + scale * (next() - 0.5)];
                if x == y {
                    continue;
                }
                assert!(c_kernel(&phi, alpha, x, y).abs() <= bound * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn bilinear_field_reproduces_linear_functions() {
        let g = Grid::new(8, 0).unwrap();
        let vals: Vec<f64> = (0..g.num_cells())
            .map(|c| {
                let x = g.center(c);
                2.0 * x[0] - 3.0 * x[1] + 0.5
            })
            .collect();
        let f = SampleField::from_cells(&g, &vals, 32).unwrap();
        let lattice = Grid::new(32, 0).unwrap();
        for c in 0..lattice.num_cells() {
            let x = lattice.center(c);
            let inside = (0..2).all(|k| x[k] >= g.h() / 2.0 && x[k] <= 1.0 - g.h() / 2.0);
            if inside {
                assert!((f.values()[c] - (2.0 * x[0] - 3.0 * x[1] + 0.5)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_crossings_match_translated_half_plane() {
        // Pushing {x < 0.5} right by t a psi leaves the area int t a psi(y) dy
        // up to O(t^2).
        let e = SampledSet::from_shape(16, Shape::half_plane([1.0, 0.0], 0.5)).unwrap();
        let phi = VelocityField::bump([0.5, 0.5], 0.2, [1.0, 0.0]).unwrap();
        let t = 1e-4;
        let (nodes, weights) = gauss_legendre(32);
        let line: f64 = nodes
            .iter()
            .zip(weights)
            .map(|(s, w)| w * 0.2 * profile(s * s))
            .sum();
        let v = sym_diff_volume(&e, &phi, t).unwrap();
        assert!((v - t * line).abs() < 1e-3 * t * line, "{v} {}", t * line);
        let s = signed_change_integral(&e, &phi, t, |_| 1.0).unwrap();
        assert!((s - v).abs() < 1e-15);
    }
}
