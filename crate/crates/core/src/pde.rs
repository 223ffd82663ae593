//! Poisson state equation `-nu Lap u = w` with homogeneous Dirichlet data,
//! the tracking functional `F(w) = 1/2 ||u - u_d||^2` and its adjoint gradient.
//!
//! The PDE lives on a node lattice `rho` times finer than the control grid.
//! Node `(k, l)` sits at `(k, l) / (rho n)`; nodes with `k` or `l` in
//! `{0, rho n}` are boundary nodes and carry no unknown.

use crate::error::{Error, Result};
use crate::grid::{ControlField, Grid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeMesh {
    n: usize,
    rho: usize,
}

impl PdeMesh {
    pub fn new(grid: &Grid, rho: usize) -> Result<Self> {
        if rho < 2 {
            return Err(Error::Domain(format!("refinement factor must be >= 2, got {rho}")));
        }
        if grid.dim() != 2 {
            return Err(Error::Domain("the PDE is posed on the unit square".into()));
        }
        Ok(Self { n: grid.n(), rho })
    }

    pub fn rho(&self) -> usize {
        self.rho
    }

    /// Control cells per side.
    pub fn control_n(&self) -> usize {
        self.n
    }

    /// Interior nodes per side, `rho n - 1`.
    pub fn side(&self) -> usize {
        self.rho * self.n - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.side() * self.side()
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.rho * self.n) as f64
    }

    /// Position of interior node `idx` (row-major over interior nodes).
    pub fn node_position(&self, idx: usize) -> [f64; 2] {
        let s = self.side();
        let h = self.spacing();
        [((idx % s) + 1) as f64 * h, ((idx / s) + 1) as f64 * h]
    }

    /// Control cells adjacent to a node coordinate along one axis, with
    /// their weights (a node on a cell boundary is shared by two cells).
    fn cells_along(&self, k: usize) -> ([(usize, f64); 2], usize) {
        let q = k / self.rho;
        if k % self.rho != 0 {
            ([(q, 1.0), (0, 0.0)], 1)
        } else {
            ([(q - 1, 0.5), (q, 0.5)], 2)
        }
    }

    /// Piecewise-constant injection of cell values onto interior nodes.
    pub fn inject(&self, cells: &[f64]) -> Vec<f64> {
        let s = self.side();
        let mut out = vec![0.0; self.num_nodes()];
        for l in 0..s {
            let (ys, ny) = self.cells_along(l + 1);
            for k in 0..s {
                let (xs, nx) = self.cells_along(k + 1);
                let mut v = 0.0;
                for &(cy, wy) in &ys[..ny] {
                    for &(cx, wx) in &xs[..nx] {
                        v += wx * wy * cells[cy * self.n + cx];
                    }
                }
                out[l * s + k] = v;
            }
        }
        out
    }

    /// Adjoint of [`Self::inject`]: per-cell weighted sums of nodal values.
    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        let s = self.side();
        let mut out = vec![0.0; self.n * self.n];
        for l in 0..s {
            let (ys, ny) = self.cells_along(l + 1);
            for k in 0..s {
                let (xs, nx) = self.cells_along(k + 1);
                let v = nodal[l * s + k];
                for &(cy, wy) in &ys[..ny] {
                    for &(cx, wx) in &xs[..nx] {
                        out[cy * self.n + cx] += wx * wy * v;
                    }
                }
            }
        }
        out
    }

    /// `h^2 sum v^2`, the nodal L^2 norm squared.
    pub fn norm_sq(&self, v: &[f64]) -> f64 {
        let h = self.spacing();
        h * h * v.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let h = self.spacing();
        h * h * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }
}

/// Conjugate-gradient settings for the 5-point Laplacian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            max_iter: 20_000,
        }
    }
}

fn apply_laplacian(mesh: &PdeMesh, nu: f64, u: &[f64], out: &mut [f64]) {
    let s = mesh.side();
    let h = mesh.spacing();
    let c = nu / (h * h);
    for l in 0..s {
        for k in 0..s {
            let i = l * s + k;
            let mut acc = 4.0 * u[i];
            if k > 0 {
                acc -= u[i - 1];
            }
            if k + 1 < s {
                acc -= u[i + 1];
            }
            if l > 0 {
                acc -= u[i - s];
            }
            if l + 1 < s {
                acc -= u[i + s];
            }
            out[i] = c * acc;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `-nu Lap u = f` for a nodal right-hand side.
pub fn solve_nodal(mesh: &PdeMesh, nu: f64, rhs: &[f64], cg: &CgSettings) -> Result<Vec<f64>> {
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("diffusivity must be positive, got {nu}")));
    }
    let len = mesh.num_nodes();
    let mut u = vec![0.0; len];
    let bnorm = dot(rhs, rhs).sqrt();
    if bnorm == 0.0 {
        return Ok(u);
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; len];
    let mut rr = dot(&r, &r);
    for _ in 0..cg.max_iter {
        if rr.sqrt() <= cg.rel_tol * bnorm {
            return Ok(u);
        }
        apply_laplacian(mesh, nu, &p, &mut ap);
        let step = rr / dot(&p, &ap);
        for i in 0..len {
            u[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        rr = rr_next;
        for i in 0..len {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rr.sqrt() <= cg.rel_tol * bnorm {
        return Ok(u);
    }
    Err(Error::SolverFailure {
        iterations: cg.max_iter,
        residual: rr.sqrt() / bnorm,
    })
}

/// State for per-cell control values `w`.
pub fn solve_poisson(mesh: &PdeMesh, nu: f64, cells: &[f64], cg: &CgSettings) -> Result<Vec<f64>> {
    if cells.len() != mesh.control_n() * mesh.control_n() {
        return Err(Error::Incompatible(format!(
            "{} cell values for a {}x{} control grid",
            cells.len(),
            mesh.control_n(),
            mesh.control_n()
        )));
    }
    solve_nodal(mesh, nu, &mesh.inject(cells), cg)
}

/// Disk used to build the default target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskTarget {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Default for DiskTarget {
    fn default() -> Self {
        Self {
            center: [0.5, 0.5],
            radius: 0.3,
        }
    }
}

/// `u_d = S chi_disk` with the disk indicator sampled at the nodes.
pub fn make_target_ud(
    disk: &DiskTarget,
    nu: f64,
    mesh: &PdeMesh,
    cg: &CgSettings,
) -> Result<Vec<f64>> {
    let [cx, cy] = disk.center;
    let r = disk.radius;
    if !(r >= 0.0) || cx - r < 0.0 || cx + r > 1.0 || cy - r < 0.0 || cy + r > 1.0 {
        return Err(Error::InvalidTarget(format!(
            "disk at ({cx}, {cy}) with radius {r} is not contained in the unit square"
        )));
    }
    let chi: Vec<f64> = (0..mesh.num_nodes())
        .map(|i| {
            let x = mesh.node_position(i);
            let d2 = (x[0] - cx).powi(2) + (x[1] - cy).powi(2);
            if d2 < r * r {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    solve_nodal(mesh, nu, &chi, cg)
}

/// Tracking-type objective with a Poisson state.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonTracking {
    pub mesh: PdeMesh,
    pub nu: f64,
    pub target: Vec<f64>,
    pub cg: CgSettings,
}

impl PoissonTracking {
    pub fn new(mesh: PdeMesh, nu: f64, target: Vec<f64>) -> Result<Self> {
        if target.len() != mesh.num_nodes() {
            return Err(Error::Incompatible(format!(
                "target has {} nodes, mesh has {}",
                target.len(),
                mesh.num_nodes()
            )));
        }
        Ok(Self {
            mesh,
            nu,
            target,
            cg: CgSettings::default(),
        })
    }

    pub fn state(&self, cells: &[f64]) -> Result<Vec<f64>> {
        solve_poisson(&self.mesh, self.nu, cells, &self.cg)
    }

    pub fn value(&self, cells: &[f64]) -> Result<f64> {
        let u = self.state(cells)?;
        let diff: Vec<f64> = u.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        Ok(0.5 * self.mesh.norm_sq(&diff))
    }

    /// `L^2` gradient per control cell: the trapezoid-weighted cell mean of
    /// the adjoint `-nu Lap p = u - u_d`.
    pub fn gradient(&self, cells: &[f64]) -> Result<Vec<f64>> {
        let u = self.state(cells)?;
        let diff: Vec<f64> = u.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let p = solve_nodal(&self.mesh, self.nu, &diff, &self.cg)?;
        let rho2 = (self.mesh.rho() * self.mesh.rho()) as f64;
        Ok(self.mesh.restrict(&p).into_iter().map(|v| v / rho2).collect())
    }

    pub fn value_of(&self, w: &ControlField) -> Result<f64> {
        self.value(&w.values())
    }
}
