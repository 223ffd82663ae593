//! Subcommand implementations. Each command writes its files into an output
//! directory and returns a structured outcome; `passed` is false when a
//! property check of the command failed.

use std::fs;
use std::path::{Path, PathBuf};

use fracperim_core::classic::{grid_perimeter, LimitRegularizerSpec};
use fracperim_core::grid::{CellSet, ControlField, Grid, LabelSet};
use fracperim_core::io::{control_to_pgm, grid_to_csv, kernel_table_from_str, kernel_table_to_string, Instance};
use fracperim_core::kernel::{tabulate_kernel, KernelTable};
use fracperim_core::pde::{make_target_ud, CgSettings, DiskTarget, PdeMesh, PoissonTracking};
use fracperim_core::regularizer::Regularizer;
use fracperim_core::subproblem::{solve_subproblem_exact, Budget, SubproblemInstance};
use fracperim_core::trust_region::{run, stationarity_check, IterationLog, Problem, Termination};
use fracperim_core::variations::{
    stationarity_residual, sym_diff_ratios, SampleField, SampleKernel, SampledSet, Shape, VelocityField,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;

/// Tolerance of the stationarity re-solve.
pub const STATIONARITY_TOL: f64 = 1e-9;
/// Largest accepted relative gradient error.
pub const GRAD_CHECK_TOL: f64 = 1e-4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Internal(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<fracperim_core::Error> for CliError {
    fn from(e: fracperim_core::Error) -> Self {
        Self::Internal(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Internal(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summary serializes");
    s.push('\n');
    s
}

pub fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            RunConfig::from_toml(&text).map_err(usage)
        }
    }
}

pub fn control_grid(cfg: &RunConfig) -> CliResult<Grid> {
    Ok(Grid::new(cfg.discretization.n, cfg.discretization.exterior_band).map_err(usage)?)
}

fn cache_name(cfg: &RunConfig, alpha: f64) -> String {
    let k = &cfg.kernel;
    let trunc = match k.truncation.cells() {
        Some(c) => format!("{c:e}h"),
        None => "inf".into(),
    };
    format!(
        "kernel_d2_n{}_a{alpha:e}_t{trunc}_q{}_l{}_r{:e}_nt{:e}{}.txt",
        cfg.discretization.n,
        if k.centers_only { 0 } else { k.quad_order },
        k.near_field_levels,
        k.rel_tol,
        k.near_threshold,
        if k.centers_only { "_centers" } else { "" }
    )
}

/// Tabulates the kernel table of the configured control grid, through the
/// on-disk cache when `kernel.cache_dir` is set.
pub fn kernel_table(cfg: &RunConfig, alpha: f64) -> CliResult<KernelTable> {
    let grid = control_grid(cfg)?;
    let radius = cfg.kernel.truncation.cells().map(|c| c * grid.h());
    let quad = cfg.kernel.quadrature();
    let cache = (!cfg.kernel.cache_dir.is_empty()).then(|| PathBuf::from(&cfg.kernel.cache_dir).join(cache_name(cfg, alpha)));
    if let Some(path) = &cache {
        if let Ok(text) = fs::read_to_string(path) {
            let table = kernel_table_from_str(&text, grid.exterior_band())?;
            if table.alpha() == alpha && table.truncation_radius() == radius && *table.grid() == grid {
                return Ok(table);
            }
        }
    }
    let table = tabulate_kernel(&grid, alpha, radius, &quad).map_err(usage)?;
    if let Some(path) = &cache {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, kernel_table_to_string(&table))?;
    }
    Ok(table)
}

fn regularizer(cfg: &RunConfig) -> CliResult<Regularizer> {
    Ok(match cfg.alpha() {
        Some(alpha) => Regularizer::fractional(kernel_table(cfg, alpha)?),
        None => Regularizer::limit(control_grid(cfg)?, LimitRegularizerSpec::for_dim(2)?),
    })
}

/// Tracking objective with the configured disk target.
pub fn tracking(cfg: &RunConfig) -> CliResult<PoissonTracking> {
    let grid = control_grid(cfg)?;
    let mesh = PdeMesh::new(&grid, cfg.discretization.rho).map_err(usage)?;
    let disk = DiskTarget {
        center: cfg.problem.target.center,
        radius: cfg.problem.target.radius,
    };
    let ud = make_target_ud(&disk, cfg.problem.nu, &mesh, &CgSettings::default()).map_err(usage)?;
    Ok(PoissonTracking::new(mesh, cfg.problem.nu, ud)?)
}

fn labels(cfg: &RunConfig) -> CliResult<LabelSet> {
    LabelSet::new(cfg.problem.labels.clone()).map_err(usage)
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    pub radius: f64,
    pub optimal_value: f64,
    pub exact: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub regularizer: String,
    pub alpha: Option<f64>,
    pub n: usize,
    pub termination: String,
    pub outer_iterations: usize,
    pub subproblem_solves: usize,
    pub accepted_steps: usize,
    pub initial_j: f64,
    pub final_f: f64,
    pub final_r: f64,
    pub final_j: f64,
    pub j_strictly_decreasing: bool,
    pub sufficient_decrease: bool,
    pub radius_halving: bool,
    pub stationarity: Option<StationarityReport>,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub control: ControlField,
    pub log: IterationLog,
    pub summary: SolveSummary,
    pub passed: bool,
}

/// Checks of the trust-region contract on a finished log:
/// (J strictly decreasing, sufficient decrease, exact halving).
pub fn contract_checks(log: &IterationLog, delta0: f64, sigma: f64) -> (bool, bool, bool) {
    let mut j_prev = log.initial_j;
    let mut decreasing = true;
    let mut sufficient = true;
    let mut halving = true;
    for r in &log.records {
        if r.accepted {
            decreasing &= r.j < j_prev;
            sufficient &= r.ared >= sigma * r.pred;
            j_prev = r.j;
        }
        halving &= r.delta.to_bits() == (delta0 / 2f64.powi(r.inner as i32)).to_bits();
    }
    (decreasing, sufficient, halving)
}

pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> CliResult<SolveOutcome> {
    let grid = control_grid(cfg)?;
    let objective = tracking(cfg)?;
    let reg = regularizer(cfg)?;
    let problem = Problem {
        objective: &objective,
        regularizer: &reg,
        eta: cfg.problem.eta,
    };
    let params = cfg.trust_region.params(grid.cell_volume());
    let w0 = ControlField::constant(grid, labels(cfg)?, cfg.trust_region.w0_label).map_err(usage)?;
    let (w, log) = run(&problem, &params, &w0)?;
    let (decreasing, sufficient, halving) = contract_checks(&log, params.delta0, params.sigma);
    let stationarity = if log.termination == Termination::PredNonpositive {
        let radius = log.records.last().map_or(params.delta0, |r| r.delta);
        let sol = stationarity_check(&problem, &w, radius, &params.budget)?;
        let value = if sol.is_exact() { sol.objective } else { sol.lower_bound };
        Some(StationarityReport {
            radius,
            optimal_value: value,
            exact: sol.is_exact(),
            passed: value >= -STATIONARITY_TOL,
        })
    } else {
        None
    };
    let summary = SolveSummary {
        regularizer: if cfg.alpha().is_some() { "fractional" } else { "limit" }.into(),
        alpha: cfg.alpha(),
        n: grid.n(),
        termination: log.termination.as_str().into(),
        outer_iterations: log.records.last().map_or(0, |r| r.outer),
        subproblem_solves: log.records.len(),
        accepted_steps: log.accepted_steps(),
        initial_j: log.initial_j,
        final_f: log.final_f,
        final_r: log.final_r,
        final_j: log.final_j,
        j_strictly_decreasing: decreasing,
        sufficient_decrease: sufficient,
        radius_halving: halving,
        stationarity: stationarity.clone(),
    };
    let passed = decreasing && sufficient && halving && stationarity.as_ref().is_none_or(|s| s.passed);
    if cfg.output.csv {
        write_file(out, "log.csv", &log.to_csv())?;
        let side = objective.mesh.side();
        write_file(out, "target.csv", &grid_to_csv(side, &objective.target)?)?;
        write_file(out, "state.csv", &grid_to_csv(side, &objective.state(&w.values())?)?)?;
    }
    if cfg.output.pgm {
        write_file(out, "control.pgm", &control_to_pgm(&w))?;
    }
    if cfg.output.json {
        write_file(out, "summary.json", &to_json(&summary))?;
    }
    Ok(SolveOutcome {
        control: w,
        log,
        summary,
        passed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaRow {
    pub alpha: f64,
    pub scaled_perimeter: f64,
    pub reference: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaOutcome {
    pub m: usize,
    pub perimeter: f64,
    pub rows: Vec<GammaRow>,
    pub deviations_decreasing: bool,
    pub passed: bool,
}

fn lattice_index(v: f64, m: usize, path: &str) -> CliResult<usize> {
    let s = v * m as f64;
    let k = s.round();
    if !(0.0..=1.0).contains(&v) || (s - k).abs() > 1e-9 {
        return Err(usage(format!("{path}: {v} is not a multiple of 1/{m} in [0, 1]")));
    }
    Ok(k as usize)
}

/// `(1 - alpha) P_alpha` of an axis-aligned rectangle against the limit
/// `omega_1 P = 2 P`.
pub fn cmd_gamma_sweep(cfg: &RunConfig, out: &Path) -> CliResult<GammaOutcome> {
    let s = &cfg.gamma_sweep;
    let grid = Grid::new(s.m, 0).map_err(usage)?;
    let r = s.rect;
    let idx = [
        lattice_index(r[0], s.m, "gamma_sweep.rect[0]")?,
        lattice_index(r[1], s.m, "gamma_sweep.rect[1]")?,
        lattice_index(r[2], s.m, "gamma_sweep.rect[2]")?,
        lattice_index(r[3], s.m, "gamma_sweep.rect[3]")?,
    ];
    let set = if idx[0] < idx[1] && idx[2] < idx[3] {
        CellSet::block(grid, idx[0], idx[1], idx[2], idx[3])
    } else {
        CellSet::empty(grid)
    };
    let perimeter = grid_perimeter(&set);
    let reference = 2.0 * perimeter;
    let mut alphas = s.alphas.clone();
    alphas.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(alphas.len());
    for alpha in alphas {
        let table = tabulate_kernel(&grid, alpha, None, &cfg.kernel.quadrature()).map_err(usage)?;
        let scaled = (1.0 - alpha) * table.frac_perimeter(&set)?;
        let deviation = if reference > 0.0 {
            (scaled - reference).abs() / reference
        } else {
            scaled.abs()
        };
        rows.push(GammaRow {
            alpha,
            scaled_perimeter: scaled,
            reference,
            deviation,
        });
    }
    let deviations_decreasing = reference == 0.0 || rows.windows(2).all(|w| w[1].deviation < w[0].deviation);
    let mut csv = String::from("alpha,scaled_perimeter,reference,deviation\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.alpha, row.scaled_perimeter, row.reference, row.deviation
        ));
    }
    let outcome = GammaOutcome {
        m: s.m,
        perimeter,
        rows,
        deviations_decreasing,
        passed: deviations_decreasing,
    };
    write_file(out, "gamma_sweep.csv", &csv)?;
    write_file(out, "gamma_sweep.json", &to_json(&outcome))?;
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckOutcome {
    pub samples: usize,
    /// `(eps, max relative error)` per step size.
    pub errors: Vec<(f64, f64)>,
    pub best_error: f64,
    pub passed: bool,
}

/// Central differences of `F` along random directions at a random binary
/// control.
pub fn cmd_grad_check(cfg: &RunConfig, out: &Path) -> CliResult<GradCheckOutcome> {
    let g = &cfg.grad_check;
    let grid = control_grid(cfg)?;
    let objective = tracking(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let values = &cfg.problem.labels;
    let w: Vec<f64> = (0..grid.num_cells())
        .map(|_| values[rng.gen_range(0..values.len())] as f64)
        .collect();
    let grad = objective.gradient(&w)?;
    let directions: Vec<Vec<f64>> = (0..g.samples)
        .map(|_| (0..grid.num_cells()).map(|_| g.scale * rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    let vol = grid.cell_volume();
    let mut errors = Vec::with_capacity(g.eps.len());
    for &eps in &g.eps {
        let mut worst: f64 = 0.0;
        for v in &directions {
            let plus: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + eps * b).collect();
            let minus: Vec<f64> = w.iter().zip(v).map(|(a, b)| a - eps * b).collect();
            let fd = (objective.value(&plus)? - objective.value(&minus)?) / (2.0 * eps);
            let an = vol * grad.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            worst = worst.max((fd - an).abs() / an.abs().max(f64::MIN_POSITIVE));
        }
        errors.push((eps, worst));
    }
    let best_error = errors.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    let outcome = GradCheckOutcome {
        samples: g.samples,
        errors,
        best_error,
        passed: best_error <= GRAD_CHECK_TOL,
    };
    let mut csv = String::from("eps,max_rel_error\n");
    for (eps, err) in &outcome.errors {
        csv.push_str(&format!("{eps},{err}\n"));
    }
    write_file(out, "grad_check.csv", &csv)?;
    write_file(out, "grad_check.json", &to_json(&outcome))?;
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize)]
pub struct SubproblemOutcome {
    pub objective: f64,
    pub pred: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub exact: bool,
    pub nodes: usize,
    pub flips: usize,
    pub minimizer: Vec<usize>,
}

/// Solves a stored subproblem instance (labels `{0, 1}`).
pub fn cmd_subproblem(instance_path: &Path, budget: &Budget, out: &Path) -> CliResult<SubproblemOutcome> {
    let text = fs::read_to_string(instance_path).map_err(|e| usage(format!("{}: {e}", instance_path.display())))?;
    let inst = Instance::from_text(&text).map_err(usage)?;
    let base = instance_path.parent().unwrap_or(Path::new("."));
    let kernel_path = base.join(&inst.kernel_path);
    let ktext = fs::read_to_string(&kernel_path).map_err(|e| usage(format!("{}: {e}", kernel_path.display())))?;
    let table = kernel_table_from_str(&ktext, 0).map_err(usage)?;
    if table.grid().n() != inst.n || table.grid().dim() != 2 {
        return Err(usage(format!("kernel table is not a 2-d table for n = {}", inst.n)));
    }
    if table.alpha() != inst.alpha {
        return Err(usage(format!(
            "instance alpha {} differs from kernel alpha {}",
            inst.alpha,
            table.alpha()
        )));
    }
    let grid = *table.grid();
    let reg = Regularizer::fractional(table);
    let center = ControlField::new(grid, LabelSet::binary(), inst.center.clone()).map_err(usage)?;
    let sub = SubproblemInstance::new(&reg, inst.linear_cost.clone(), inst.eta, center.clone(), inst.delta)
        .map_err(usage)?;
    let sol = solve_subproblem_exact(&sub, budget)?;
    let outcome = SubproblemOutcome {
        objective: sol.objective,
        pred: -sol.objective,
        lower_bound: sol.lower_bound,
        gap: sol.gap(),
        exact: sol.is_exact(),
        nodes: sol.nodes,
        flips: (0..grid.num_cells())
            .filter(|&i| sol.minimizer.assignment()[i] != center.assignment()[i])
            .count(),
        minimizer: sol.minimizer.assignment().to_vec(),
    };
    write_file(out, "subproblem.json", &to_json(&outcome))?;
    write_file(out, "minimizer.pgm", &control_to_pgm(&sol.minimizer))?;
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize)]
pub struct VariationRow {
    pub case: String,
    pub t: f64,
    pub first_variation_ratio: f64,
    pub sym_diff_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariationCase {
    pub case: String,
    pub first_variation: f64,
    pub perimeter: f64,
    pub first_variation_decreasing: bool,
    pub sym_diff_band: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariationOutcome {
    pub m: usize,
    pub alpha: f64,
    pub rows: Vec<VariationRow>,
    pub cases: Vec<VariationCase>,
    pub stationarity_residuals: Vec<f64>,
    pub passed: bool,
}

/// The canned cases: a disk under a radial bump, a half-plane under a
/// translating bump, and a zero field.
pub fn variation_cases(m: usize) -> CliResult<Vec<(String, SampledSet, VelocityField)>> {
    let disk = SampledSet::from_shape(
        m,
        Shape::Disk {
            center: [0.5, 0.5],
            radius: 0.25,
        },
    )?;
    let half = SampledSet::from_shape(m, Shape::half_plane([1.0, 0.0], 0.5))?;
    Ok(vec![
        ("disk_radial".into(), disk, VelocityField::radial_bump([0.5, 0.5], 0.4, 1.0)?),
        ("half_plane_bump".into(), half.clone(), VelocityField::bump([0.5, 0.5], 0.2, [0.2, 0.05])?),
        ("zero_field".into(), half, VelocityField::bump([0.5, 0.5], 0.2, [0.0, 0.0])?),
    ])
}

pub fn cmd_variation_check(cfg: &RunConfig, out: &Path) -> CliResult<VariationOutcome> {
    let v = &cfg.variation_check;
    let kernel = SampleKernel::new(v.m, v.alpha, &cfg.kernel.quadrature()).map_err(usage)?;
    let mut rows = Vec::new();
    let mut cases = Vec::new();
    for (name, set, phi) in variation_cases(v.m)? {
        let p = kernel.perimeter(&set)?;
        let l = kernel.first_variation(&set, &phi)?;
        let sym = sym_diff_ratios(&kernel, &set, &phi, &v.t_values)?;
        let mut fv = Vec::with_capacity(v.t_values.len());
        for (&t, &s) in v.t_values.iter().zip(&sym) {
            let ratio = (kernel.deformed_perimeter(&set, &phi, t)? - p - t * l).abs() / t;
            fv.push(ratio);
            rows.push(VariationRow {
                case: name.clone(),
                t,
                first_variation_ratio: ratio,
                sym_diff_ratio: s,
            });
        }
        let (decreasing, band, passed) = if phi.is_zero() {
            let zero = fv.iter().chain(&sym).all(|&r| r == 0.0);
            (zero, 1.0, zero)
        } else {
            let decreasing = fv.windows(2).all(|w| w[1] < w[0]);
            let max = sym.iter().cloned().fold(0.0, f64::max);
            let min = sym.iter().cloned().fold(f64::INFINITY, f64::min);
            let band = if min > 0.0 { max / min } else { f64::INFINITY };
            (decreasing, band, decreasing && band <= 10.0)
        };
        cases.push(VariationCase {
            case: name,
            first_variation: l,
            perimeter: p,
            first_variation_decreasing: decreasing,
            sym_diff_band: band,
            passed,
        });
    }

    // Stationarity residuals of the half-plane partition with the adjoint
    // gradient of the configured tracking problem at that control.
    let grid = control_grid(cfg)?;
    let objective = tracking(cfg)?;
    let vals = &cfg.problem.labels;
    let w: Vec<f64> = (0..grid.num_cells())
        .map(|c| vals[(grid.center(c)[0] >= 0.5) as usize] as f64)
        .collect();
    let g = SampleField::from_cells(&grid, &objective.gradient(&w)?, v.m)?;
    let left = SampledSet::from_shape(v.m, Shape::half_plane([1.0, 0.0], 0.5))?;
    let partition = [(vals[0], left.clone()), (vals[1], left.complement())];
    let phis: Vec<VelocityField> = variation_cases(v.m)?.into_iter().map(|c| c.2).collect();
    let residuals = stationarity_residual(&kernel, &partition, &g, &phis)?;

    let mut csv = String::from("case,t,first_variation_ratio,sym_diff_ratio\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.case, r.t, r.first_variation_ratio, r.sym_diff_ratio));
    }
    let mut scsv = String::from("phi,residual\n");
    for (i, r) in residuals.iter().enumerate() {
        scsv.push_str(&format!("{i},{r}\n"));
    }
    let passed = cases.iter().all(|c| c.passed);
    let outcome = VariationOutcome {
        m: v.m,
        alpha: v.alpha,
        rows,
        cases,
        stationarity_residuals: residuals,
        passed,
    };
    write_file(out, "variation.csv", &csv)?;
    write_file(out, "stationarity.csv", &scsv)?;
    write_file(out, "variation.json", &to_json(&outcome))?;
    Ok(outcome)
}

/// Tabulates the configured kernel and writes it to the cache directory, or
/// to the output directory when no cache is configured.
pub fn cmd_kernel_table(cfg: &RunConfig, out: &Path) -> CliResult<PathBuf> {
    let alpha = cfg
        .alpha()
        .ok_or_else(|| usage("problem.alpha: the limit regularizer has no kernel table"))?;
    let table = kernel_table(cfg, alpha)?;
    let dir = if cfg.kernel.cache_dir.is_empty() {
        out.to_path_buf()
    } else {
        PathBuf::from(&cfg.kernel.cache_dir)
    };
    let path = dir.join(cache_name(cfg, alpha));
    write_file(&dir, &cache_name(cfg, alpha), &kernel_table_to_string(&table))?;
    Ok(path)
}
