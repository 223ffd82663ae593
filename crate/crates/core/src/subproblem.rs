//! Exact trust-region subproblem for binary controls:
//!
//! `min <g, w - w_c> + eta R(w) - eta R(w_c)  s.t.  ||w - w_c||_1 <= Delta`
//!
//! With `x_i = 1` iff cell `i` carries the second label the objective is a
//! submodular pairwise energy `sum u_i x_i + sum a_ij [x_i != x_j]` (up to a
//! constant) and the trust region is a cardinality bound on the flips from
//! the center. Branch-and-bound with Lagrangian min-cut bounds solves it
//! exactly.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::grid::ControlField;
use crate::maxflow::FlowGraph;
use crate::regularizer::{PairRegularizer, Regularizer};

/// Largest grid handled by [`brute_force_subproblem`].
pub const BRUTE_FORCE_LIMIT: usize = 16;

const DUAL_ITERATIONS: usize = 40;

/// One instance of the trust-region subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemInstance<'a> {
    pub regularizer: &'a Regularizer,
    /// `c_i = g_i h^d`, so that `<g, w - w_c> = sum c_i (w_i - w_c,i)`.
    pub linear_cost: Vec<f64>,
    pub eta: f64,
    pub center: ControlField,
    pub radius: f64,
}

impl<'a> SubproblemInstance<'a> {
    pub fn new(
        regularizer: &'a Regularizer,
        linear_cost: Vec<f64>,
        eta: f64,
        center: ControlField,
        radius: f64,
    ) -> Result<Self> {
        let inst = Self {
            regularizer,
            linear_cost,
            eta,
            center,
            radius,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        if self.center.labels().len() != 2 {
            return Err(Error::UnsupportedLabels(format!(
                "the subproblem solver needs exactly two labels, got {}",
                self.center.labels().len()
            )));
        }
        if self.center.grid() != self.regularizer.grid() {
            return Err(Error::Incompatible("center and regularizer grids differ".into()));
        }
        if self.linear_cost.len() != self.center.grid().num_cells() {
            return Err(Error::Incompatible(format!(
                "{} linear costs for {} cells",
                self.linear_cost.len(),
                self.center.grid().num_cells()
            )));
        }
        if self.linear_cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("linear costs must be finite".into()));
        }
        if !(self.radius >= 0.0) || !self.radius.is_finite() {
            return Err(Error::Domain(format!("radius must be finite and >= 0, got {}", self.radius)));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Domain(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        Ok(())
    }

    fn jump(&self) -> f64 {
        let v = self.center.labels().values();
        (v[1] - v[0]).unsigned_abs() as f64
    }

    /// `L^1` volume of flipping one cell.
    pub fn flip_volume(&self) -> f64 {
        self.jump() * self.center.grid().cell_volume()
    }

    /// Number of cells that may change label, `floor(Delta / flip_volume)`.
    pub fn flip_budget(&self) -> usize {
        let k = (self.radius / self.flip_volume() + 1e-9).floor();
        (k as usize).min(self.center.grid().num_cells())
    }

    /// Objective `<g, w - w_c> + eta (R(w) - R(w_c))` by full evaluation.
    pub fn objective(&self, w: &ControlField) -> Result<f64> {
        let lin: f64 = self
            .linear_cost
            .iter()
            .enumerate()
            .map(|(i, c)| c * (w.value(i) - self.center.value(i)) as f64)
            .sum();
        let reg = self.regularizer.value(w)? - self.regularizer.value(&self.center)?;
        Ok(lin + self.eta * reg)
    }

    fn field(&self, x: &[bool]) -> ControlField {
        ControlField::new(
            *self.center.grid(),
            self.center.labels().clone(),
            x.iter().map(|&b| b as usize).collect(),
        )
        .expect("binary assignment on the center's grid")
    }
}

/// Node and time limits for the branch-and-bound search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub max_nodes: usize,
    pub time_limit: Option<Duration>,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_nodes: 1_000_000,
            time_limit: Some(Duration::from_secs(60)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Certificate {
    Exact,
    /// Budget exhausted; the optimum lies in `[lower_bound, objective]`.
    Gap { gap: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub minimizer: ControlField,
    pub objective: f64,
    /// Certified lower bound on the optimal objective.
    pub lower_bound: f64,
    pub certificate: Certificate,
    pub nodes: usize,
}

impl SubproblemSolution {
    pub fn gap(&self) -> f64 {
        match self.certificate {
            Certificate::Exact => 0.0,
            Certificate::Gap { gap } => gap,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.certificate == Certificate::Exact
    }
}

/// `pred = -objective`.
pub fn predicted_reduction(solution: &SubproblemSolution) -> f64 {
    -solution.objective
}

/// Certified upper bound on the predicted reduction of the exact minimizer.
pub fn predicted_reduction_bound(solution: &SubproblemSolution) -> f64 {
    -solution.lower_bound
}

/// Binary pairwise energy of an instance, without its constant.
struct Energy<'a> {
    pairs: &'a PairRegularizer,
    unary: Vec<f64>,
    pair_factor: f64,
    center: Vec<bool>,
    abs_cost: Vec<f64>,
    /// Scale for the pruning tolerance.
    magnitude: f64,
}

impl<'a> Energy<'a> {
    fn new(inst: &SubproblemInstance<'a>) -> Self {
        let labels = inst.center.labels().values();
        let (w1, w2) = (labels[0], labels[1]);
        let (a1, a2) = (w1.unsigned_abs() as f64, w2.unsigned_abs() as f64);
        let pairs = inst.regularizer.pair_form();
        let s = pairs.scale() * inst.eta;
        let unary: Vec<f64> = inst
            .linear_cost
            .iter()
            .zip(pairs.exterior())
            .map(|(c, b)| c * (w2 - w1) as f64 + s * (a2 - a1) * b)
            .collect();
        let pair_factor = s * (a1 + a2);
        let center: Vec<bool> = inst.center.assignment().iter().map(|&a| a == 1).collect();
        let mut magnitude = unary.iter().map(|u| u.abs()).sum::<f64>();
        for i in 0..unary.len() {
            magnitude += pair_factor * pairs.neighbors(i).iter().map(|p| p.1).sum::<f64>();
        }
        Self {
            pairs,
            unary,
            pair_factor,
            center,
            abs_cost: inst.linear_cost.iter().map(|c| c.abs()).collect(),
            magnitude,
        }
    }

    fn cells(&self) -> usize {
        self.unary.len()
    }

    fn value(&self, x: &[bool]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.cells() {
            if x[i] {
                acc += self.unary[i];
            }
            for &(j, k) in self.pairs.neighbors(i) {
                if j > i && x[i] != x[j] {
                    acc += self.pair_factor * k;
                }
            }
        }
        acc
    }

    fn flips(&self, x: &[bool]) -> usize {
        x.iter().zip(&self.center).filter(|(a, b)| a != b).count()
    }

    fn tolerance(&self) -> f64 {
        1e-12 * (1.0 + self.magnitude)
    }

    /// Minimizes `E(x) + mu * flips(x)` over assignments agreeing with
    /// `fixed`. Returns the minimizer (fewest flips among the two extreme
    /// minimizers) and a lower bound on the penalized minimum.
    fn min_penalized(&self, fixed: &[Option<bool>], mu: f64) -> (Vec<bool>, f64) {
        let cells = self.cells();
        let mut slot = vec![usize::MAX; cells];
        let mut free = Vec::new();
        for i in 0..cells {
            if fixed[i].is_none() {
                slot[i] = free.len();
                free.push(i);
            }
        }
        let mut constant = 0.0;
        let mut eff = vec![0.0; free.len()];
        for i in 0..cells {
            if let Some(b) = fixed[i] {
                if b {
                    constant += self.unary[i];
                }
                if b != self.center[i] {
                    constant += mu;
                }
                for &(j, k) in self.pairs.neighbors(i) {
                    let a = self.pair_factor * k;
                    match fixed[j] {
                        Some(bj) => {
                            if j > i && bj != b {
                                constant += a;
                            }
                        }
                        None => {
                            // a [x_j != b]
                            if b {
                                constant += a;
                                eff[slot[j]] -= a;
                            } else {
                                eff[slot[j]] += a;
                            }
                        }
                    }
                }
            }
        }
        for (s, &i) in free.iter().enumerate() {
            eff[s] += self.unary[i];
            if self.center[i] {
                constant += mu;
                eff[s] -= mu;
            } else {
                eff[s] += mu;
            }
        }
        let m = free.len();
        let (src, snk) = (m, m + 1);
        let mut graph = FlowGraph::new(m + 2);
        for (s, &e) in eff.iter().enumerate() {
            if e > 0.0 {
                graph.add_edge(src, s, e, 0.0);
            } else if e < 0.0 {
                graph.add_edge(s, snk, -e, 0.0);
                constant += e;
            }
        }
        for (s, &i) in free.iter().enumerate() {
            for &(j, k) in self.pairs.neighbors(i) {
                if j > i && fixed[j].is_none() {
                    let a = self.pair_factor * k;
                    graph.add_edge(s, slot[j], a, a);
                }
            }
        }
        let flow = graph.max_flow(src, snk);
        let source = graph.source_side(src);
        let sink = graph.sink_side(snk);
        let assemble = |one: &dyn Fn(usize) -> bool| -> Vec<bool> {
            (0..cells)
                .map(|i| match fixed[i] {
                    Some(b) => b,
                    None => one(slot[i]),
                })
                .collect()
        };
        let most = assemble(&|s| !source[s]);
        let fewest = assemble(&|s| sink[s]);
        let x = if self.flips(&most) < self.flips(&fewest) {
            most
        } else {
            fewest
        };
        let penalized = self.value(&x) + mu * self.flips(&x) as f64;
        (x, (constant + flow).min(penalized))
    }

    /// Largest flip penalty that can still pay off for any free cell.
    fn mu_ceiling(&self, fixed: &[Option<bool>]) -> f64 {
        let mut top: f64 = 0.0;
        for i in 0..self.cells() {
            if fixed[i].is_some() {
                continue;
            }
            let deg: f64 = self.pairs.neighbors(i).iter().map(|p| self.pair_factor * p.1).sum();
            top = top.max(self.unary[i].abs() + deg);
        }
        2.0 * top + 1.0
    }

    /// Greedy single-cell flips that lower the energy within the budget.
    fn improve(&self, x: &mut [bool], budget: usize, fixed: &[Option<bool>]) -> f64 {
        let mut flips = self.flips(x);
        let gain = |x: &[bool], i: usize| -> f64 {
            let mut d = if x[i] { -self.unary[i] } else { self.unary[i] };
            for &(j, k) in self.pairs.neighbors(i) {
                let a = self.pair_factor * k;
                d += if x[i] == x[j] { a } else { -a };
            }
            d
        };
        for _ in 0..x.len() {
            let mut best = (0.0, usize::MAX);
            for i in 0..x.len() {
                if fixed[i].is_some() {
                    continue;
                }
                let toward_center = x[i] != self.center[i];
                if !toward_center && flips >= budget {
                    continue;
                }
                let d = gain(x, i);
                if d < best.0 - self.tolerance() {
                    best = (d, i);
                }
            }
            if best.1 == usize::MAX {
                break;
            }
            let i = best.1;
            if x[i] != self.center[i] {
                flips -= 1;
            } else {
                flips += 1;
            }
            x[i] = !x[i];
        }
        self.value(x)
    }
}

enum NodeOutcome {
    Infeasible,
    /// Solved to optimality; the solution was offered to the incumbent.
    Solved,
    /// Lower bound with the bracketing Lagrangian minimizers.
    Open {
        bound: f64,
        over: Vec<bool>,
        under: Vec<bool>,
    },
    Pruned,
}

struct Search<'e, 'a> {
    energy: &'e Energy<'a>,
    budget: usize,
    incumbent: Vec<bool>,
    incumbent_value: f64,
}

impl Search<'_, '_> {
    fn offer(&mut self, x: Vec<bool>, value: f64) {
        if value < self.incumbent_value {
            self.incumbent = x;
            self.incumbent_value = value;
        }
    }

    fn evaluate(&mut self, fixed: &[Option<bool>]) -> NodeOutcome {
        let e = self.energy;
        let fixed_flips = (0..e.cells())
            .filter(|&i| matches!(fixed[i], Some(b) if b != e.center[i]))
            .count();
        if fixed_flips > self.budget {
            return NodeOutcome::Infeasible;
        }
        let k = self.budget as f64;
        let tol = e.tolerance();
        let (x0, l0) = e.min_penalized(fixed, 0.0);
        if e.flips(&x0) <= self.budget {
            let v = e.value(&x0);
            self.offer(x0, v);
            return NodeOutcome::Solved;
        }
        let mut best_bound = l0;
        let mut lo = 0.0;
        let mut hi = e.mu_ceiling(fixed);
        let mut over = x0;
        // At the ceiling every free cell keeps its center label.
        let mut under: Vec<bool> = (0..e.cells())
            .map(|i| fixed[i].unwrap_or(e.center[i]))
            .collect();
        let mut under_improved = under.clone();
        let v = e.improve(&mut under_improved, self.budget, fixed);
        self.offer(under_improved, v);
        for _ in 0..DUAL_ITERATIONS {
            if best_bound >= self.incumbent_value - tol {
                return NodeOutcome::Pruned;
            }
            let mu = 0.5 * (lo + hi);
            let (x, lmin) = e.min_penalized(fixed, mu);
            let flips = e.flips(&x);
            best_bound = best_bound.max(lmin - mu * k);
            if flips <= self.budget {
                let v = e.value(&x);
                if flips == self.budget {
                    // Complementary slackness: x is optimal on this node.
                    self.offer(x, v);
                    return NodeOutcome::Solved;
                }
                let mut y = x.clone();
                let vy = e.improve(&mut y, self.budget, fixed);
                self.offer(y, vy);
                self.offer(x.clone(), v);
                under = x;
                hi = mu;
            } else {
                over = x;
                lo = mu;
            }
        }
        if best_bound >= self.incumbent_value - tol {
            return NodeOutcome::Pruned;
        }
        NodeOutcome::Open {
            bound: best_bound,
            over,
            under,
        }
    }

    fn branch_cell(&self, fixed: &[Option<bool>], over: &[bool], under: &[bool]) -> usize {
        let e = self.energy;
        let pick = |pred: &dyn Fn(usize) -> bool| -> Option<usize> {
            let mut best: Option<usize> = None;
            for i in 0..e.cells() {
                if fixed[i].is_some() || !pred(i) {
                    continue;
                }
                if best.is_none_or(|b| e.abs_cost[i] > e.abs_cost[b]) {
                    best = Some(i);
                }
            }
            best
        };
        pick(&|i| over[i] != under[i])
            .or_else(|| pick(&|i| over[i] != e.center[i]))
            .or_else(|| pick(&|_| true))
            .expect("an open node has a free cell")
    }
}

struct OpenNode {
    fixed: Vec<Option<bool>>,
    bound: f64,
    over: Vec<bool>,
    under: Vec<bool>,
}

/// Exact solution of the subproblem by branch-and-bound, or the incumbent
/// with a certified gap once the budget is exhausted.
pub fn solve_subproblem_exact(
    inst: &SubproblemInstance<'_>,
    budget: &Budget,
) -> Result<SubproblemSolution> {
    inst.validate()?;
    let start = Instant::now();
    let energy = Energy::new(inst);
    let k = inst.flip_budget();
    let center_value = energy.value(&energy.center);
    let mut search = Search {
        energy: &energy,
        budget: k,
        incumbent: energy.center.clone(),
        incumbent_value: center_value,
    };
    let cells = energy.cells();
    let mut nodes = 1;
    let mut stack: Vec<OpenNode> = Vec::new();
    let root = vec![None; cells];
    let mut exhausted = false;
    match search.evaluate(&root) {
        NodeOutcome::Open { bound, over, under } => stack.push(OpenNode {
            fixed: root,
            bound,
            over,
            under,
        }),
        NodeOutcome::Solved | NodeOutcome::Pruned | NodeOutcome::Infeasible => {}
    }
    let tol = energy.tolerance();
    while let Some(node) = stack.pop() {
        if node.bound >= search.incumbent_value - tol {
            continue;
        }
        let over_budget = nodes >= budget.max_nodes
            || budget.time_limit.is_some_and(|t| start.elapsed() >= t);
        if over_budget {
            stack.push(node);
            exhausted = true;
            break;
        }
        let cell = search.branch_cell(&node.fixed, &node.over, &node.under);
        let mut children = Vec::with_capacity(2);
        // The child agreeing with the center first: ties favor fewer flips.
        for value in [energy.center[cell], !energy.center[cell]] {
            let mut fixed = node.fixed.clone();
            fixed[cell] = Some(value);
            nodes += 1;
            if let NodeOutcome::Open { bound, over, under } = search.evaluate(&fixed) {
                children.push(OpenNode {
                    fixed,
                    bound,
                    over,
                    under,
                });
            }
        }
        // Depth first, better bound explored first.
        children.sort_by(|a, b| b.bound.total_cmp(&a.bound));
        stack.extend(children);
    }
    let lower_energy = if exhausted {
        stack
            .iter()
            .map(|n| n.bound)
            .fold(search.incumbent_value, f64::min)
    } else {
        search.incumbent_value
    };
    finish(
        inst,
        &search.incumbent,
        lower_energy - center_value,
        exhausted,
        nodes,
    )
}

fn finish(
    inst: &SubproblemInstance<'_>,
    x: &[bool],
    lower_bound: f64,
    exhausted: bool,
    nodes: usize,
) -> Result<SubproblemSolution> {
    let mut minimizer = inst.field(x);
    let mut objective = inst.objective(&minimizer)?;
    if objective > 0.0 || minimizer == inst.center {
        minimizer = inst.center.clone();
        objective = 0.0;
    }
    let (lower_bound, certificate) = if exhausted {
        let lb = lower_bound.min(objective);
        (lb, Certificate::Gap { gap: objective - lb })
    } else {
        (objective, Certificate::Exact)
    };
    Ok(SubproblemSolution {
        minimizer,
        objective,
        lower_bound,
        certificate,
        nodes,
    })
}

/// Exhaustive enumeration for grids with at most [`BRUTE_FORCE_LIMIT`] cells.
pub fn brute_force_subproblem(inst: &SubproblemInstance<'_>) -> Result<SubproblemSolution> {
    inst.validate()?;
    let cells = inst.center.grid().num_cells();
    if cells > BRUTE_FORCE_LIMIT {
        return Err(Error::OracleScaleExceeded {
            cells,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let energy = Energy::new(inst);
    let k = inst.flip_budget();
    let mut best = energy.center.clone();
    let mut best_value = energy.value(&best);
    let mut x = vec![false; cells];
    for mask in 0u32..(1u32 << cells) {
        for (i, b) in x.iter_mut().enumerate() {
            *b = mask >> i & 1 == 1;
        }
        if energy.flips(&x) > k {
            continue;
        }
        let v = energy.value(&x);
        if v < best_value {
            best_value = v;
            best.copy_from_slice(&x);
        }
    }
    finish(inst, &best, 0.0, false, 1 << cells)
}

/// Exact minimizer of `objective(w) + lambda ||w - w_c||_1` without the
/// trust-region constraint, and its penalized value.
pub fn solve_unconstrained_mincut(
    inst: &SubproblemInstance<'_>,
    lambda: f64,
) -> Result<(ControlField, f64)> {
    inst.validate()?;
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    let energy = Energy::new(inst);
    let fixed = vec![None; energy.cells()];
    let mu = lambda * inst.flip_volume();
    let (x, _) = energy.min_penalized(&fixed, mu);
    let w = inst.field(&x);
    let value = inst.objective(&w)? + lambda * w.l1_distance(&inst.center)?;
    Ok((w, value))
}

/// `L(lambda) = min_w [objective(w) + lambda ||w - w_c||_1] - lambda Delta`,
/// a lower bound on the optimal objective.
pub fn lagrangian_lower_bound(inst: &SubproblemInstance<'_>, lambda: f64) -> Result<f64> {
    inst.validate()?;
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    let energy = Energy::new(inst);
    let fixed = vec![None; energy.cells()];
    let mu = lambda * inst.flip_volume();
    let (_, lmin) = energy.min_penalized(&fixed, mu);
    Ok(lmin - energy.value(&energy.center) - lambda * inst.radius)
}

/// Maximizes the concave dual by bisection on the sign of its supergradient.
/// Returns `(lambda, L(lambda))` for the best multiplier seen.
pub fn maximize_dual(inst: &SubproblemInstance<'_>) -> Result<(f64, f64)> {
    inst.validate()?;
    let energy = Energy::new(inst);
    let fixed = vec![None; energy.cells()];
    let v = inst.flip_volume();
    let center_value = energy.value(&energy.center);
    let eval = |lambda: f64| {
        let (x, lmin) = energy.min_penalized(&fixed, lambda * v);
        (energy.flips(&x), lmin - center_value - lambda * inst.radius)
    };
    let (flips0, l0) = eval(0.0);
    let mut best = (0.0, l0);
    if flips0 as f64 * v <= inst.radius {
        return Ok(best);
    }
    let mut lo = 0.0;
    let mut hi = energy.mu_ceiling(&fixed) / v;
    for _ in 0..DUAL_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let (flips, l) = eval(mid);
        if l > best.1 {
            best = (mid, l);
        }
        if flips as f64 * v > inst.radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}
