//! Trust-region method with exact subproblem solves (sufficient decrease,
//! radius reset per outer iteration, halving on rejection).

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::ControlField;
use crate::pde::PoissonTracking;
use crate::regularizer::Regularizer;
use crate::subproblem::{solve_subproblem_exact, Budget, SubproblemInstance, SubproblemSolution};

/// Smooth part `F` of the objective, evaluated on per-cell control values.
pub trait Objective {
    fn value(&self, w: &[f64]) -> Result<f64>;
    /// `L^2` gradient per cell.
    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>>;
}

impl Objective for PoissonTracking {
    fn value(&self, w: &[f64]) -> Result<f64> {
        PoissonTracking::value(self, w)
    }

    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        PoissonTracking::gradient(self, w)
    }
}

/// `F(w) = <g, w>_{L^2}` for a fixed per-cell `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearObjective {
    pub g: Vec<f64>,
    pub cell_volume: f64,
}

impl Objective for LinearObjective {
    fn value(&self, w: &[f64]) -> Result<f64> {
        if w.len() != self.g.len() {
            return Err(Error::Incompatible("control and gradient lengths differ".into()));
        }
        Ok(self.cell_volume * self.g.iter().zip(w).map(|(g, w)| g * w).sum::<f64>())
    }

    fn gradient(&self, _w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.g.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegionParams {
    pub delta0: f64,
    pub sigma: f64,
    pub min_radius: f64,
    pub max_outer: usize,
    pub pred_tol: f64,
    pub budget: Budget,
    pub record_wall_time: bool,
}

impl TrustRegionParams {
    /// Defaults with `min_radius` set to one cell volume.
    pub fn for_cell_volume(cell_volume: f64) -> Self {
        Self {
            delta0: 0.25,
            sigma: 1e-3,
            min_radius: cell_volume,
            max_outer: 1000,
            pred_tol: 0.0,
            budget: Budget::default(),
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0) {
            return Err(Error::Domain(format!("delta0 must be > 0, got {}", self.delta0)));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::Domain(format!("sigma must lie in (0, 1), got {}", self.sigma)));
        }
        if !(self.min_radius > 0.0) {
            return Err(Error::Domain(format!("min_radius must be > 0, got {}", self.min_radius)));
        }
        if !(self.pred_tol >= 0.0) {
            return Err(Error::Domain(format!("pred_tol must be >= 0, got {}", self.pred_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    PredNonpositive,
    RadiusContracted,
    IterationCap,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::PredNonpositive => "pred_nonpositive",
            Self::RadiusContracted => "radius_contracted",
            Self::IterationCap => "iteration_cap",
        }
    }
}

/// One subproblem solve: outer index `n`, inner index `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub outer: usize,
    pub inner: usize,
    pub delta: f64,
    pub pred: f64,
    pub ared: f64,
    /// Objective parts at the candidate.
    pub f: f64,
    pub r: f64,
    pub j: f64,
    pub accepted: bool,
    pub gap: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub initial_j: f64,
    pub final_f: f64,
    pub final_r: f64,
    pub final_j: f64,
}

impl IterationLog {
    pub fn accepted_steps(&self) -> usize {
        self.records.iter().filter(|r| r.accepted).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,k,Delta,pred,ared,F,R_alpha,J_alpha,accepted,gap,seconds\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.outer,
                r.inner,
                r.delta,
                r.pred,
                r.ared,
                r.f,
                r.r,
                r.j,
                r.accepted as u8,
                r.gap,
                r.seconds
            )
            .expect("writing to a string");
        }
        out
    }
}

/// Sufficient decrease `ared >= sigma pred`; `pred` must be positive.
pub fn accept_test(ared: f64, pred: f64, sigma: f64) -> Result<bool> {
    if !(pred > 0.0) {
        return Err(Error::Domain(format!(
            "acceptance needs a positive predicted reduction, got {pred}"
        )));
    }
    Ok(ared >= sigma * pred)
}

/// `ared = J(w_prev) - J(w_candidate)`.
pub fn actual_reduction(j_prev: f64, j_candidate: f64) -> f64 {
    j_prev - j_candidate
}

/// The composite objective `J = F + eta R`.
pub struct Problem<'a> {
    pub objective: &'a dyn Objective,
    pub regularizer: &'a Regularizer,
    pub eta: f64,
}

impl Problem<'_> {
    /// `(F, R, J)` at `w`.
    pub fn evaluate(&self, w: &ControlField) -> Result<(f64, f64, f64)> {
        let f = self.objective.value(&w.values())?;
        let r = self.regularizer.value(w)?;
        Ok((f, r, f + self.eta * r))
    }

    /// Subproblem around `w` with radius `delta`.
    pub fn subproblem(&self, w: &ControlField, delta: f64) -> Result<SubproblemInstance<'_>> {
        let g = self.objective.gradient(&w.values())?;
        let vol = w.grid().cell_volume();
        SubproblemInstance::new(
            self.regularizer,
            g.iter().map(|gi| gi * vol).collect(),
            self.eta,
            w.clone(),
            delta,
        )
    }
}

/// Runs the trust-region loop from `w0`.
pub fn run(
    problem: &Problem<'_>,
    params: &TrustRegionParams,
    w0: &ControlField,
) -> Result<(ControlField, IterationLog)> {
    params.validate()?;
    let start = Instant::now();
    let mut w = w0.clone();
    let (mut f_w, mut r_w, mut j_w) = problem.evaluate(&w)?;
    let initial_j = j_w;
    let mut records = Vec::new();
    let mut termination = Termination::IterationCap;
    let elapsed = |t: &Instant| {
        if params.record_wall_time {
            t.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };
    'outer: for n in 1..=params.max_outer {
        let mut inst = problem.subproblem(&w, params.delta0)?;
        let mut k = 0;
        loop {
            let delta = params.delta0 / 2f64.powi(k as i32);
            if delta < params.min_radius {
                termination = Termination::RadiusContracted;
                break 'outer;
            }
            inst.radius = delta;
            let sol: SubproblemSolution = solve_subproblem_exact(&inst, &params.budget)?;
            let pred = -sol.objective;
            let pred_bound = -sol.lower_bound;
            if pred <= params.pred_tol {
                records.push(IterationRecord {
                    outer: n,
                    inner: k,
                    delta,
                    pred,
                    ared: 0.0,
                    f: f_w,
                    r: r_w,
                    j: j_w,
                    accepted: false,
                    gap: sol.gap(),
                    seconds: elapsed(&start),
                });
                if pred_bound <= params.pred_tol {
                    termination = Termination::PredNonpositive;
                    break 'outer;
                }
                k += 1;
                continue;
            }
            let (f_c, r_c, j_c) = problem.evaluate(&sol.minimizer)?;
            let ared = actual_reduction(j_w, j_c);
            let accepted = accept_test(ared, pred, params.sigma)?;
            records.push(IterationRecord {
                outer: n,
                inner: k,
                delta,
                pred,
                ared,
                f: f_c,
                r: r_c,
                j: j_c,
                accepted,
                gap: sol.gap(),
                seconds: elapsed(&start),
            });
            if accepted {
                w = sol.minimizer;
                (f_w, r_w, j_w) = (f_c, r_c, j_c);
                break;
            }
            k += 1;
        }
    }
    Ok((
        w,
        IterationLog {
            records,
            termination,
            initial_j,
            final_f: f_w,
            final_r: r_w,
            final_j: j_w,
        },
    ))
}

/// Re-solves the subproblem at `w` with radius `delta` and returns its
/// optimal value (non-negative up to rounding at a stationary point).
pub fn stationarity_check(
    problem: &Problem<'_>,
    w: &ControlField,
    delta: f64,
    budget: &Budget,
) -> Result<SubproblemSolution> {
    let inst = problem.subproblem(w, delta)?;
    solve_subproblem_exact(&inst, budget)
}
