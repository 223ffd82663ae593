//! Run configuration (TOML). Every section and field has a default; the
//! defaults give the reduced-scale replica (`n = 16`, `alpha = 0.5`,
//! `nu = 1/25`, `eta = 5e-5`, truncation `7h`, `w0 = 0`).

use std::time::Duration;

use fracperim_core::kernel::{BaseRule, QuadratureSpec};
use fracperim_core::subproblem::Budget;
use fracperim_core::trust_region::TrustRegionParams;
use serde::{Deserialize, Serialize};

/// `alpha` as a number in `(0, 1)` or the literal `"limit"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Value(f64),
    Mode(LimitMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitMode {
    Limit,
}

/// Truncation radius as a multiple of `h`, or `"none"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TruncationSpec {
    Cells(f64),
    Keyword(NoTruncation),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoTruncation {
    None,
}

impl TruncationSpec {
    pub fn cells(&self) -> Option<f64> {
        match *self {
            Self::Cells(c) => Some(c),
            Self::Keyword(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            center: [0.5, 0.5],
            radius: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub nu: f64,
    pub eta: f64,
    pub alpha: AlphaSpec,
    pub labels: Vec<i64>,
    pub target: TargetConfig,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            nu: 1.0 / 25.0,
            eta: 5e-5,
            alpha: AlphaSpec::Value(0.5),
            labels: vec![0, 1],
            target: TargetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub n: usize,
    pub rho: usize,
    /// Exterior cells per side used by truncated tables.
    pub exterior_band: usize,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self {
            n: 16,
            rho: 4,
            exterior_band: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub truncation: TruncationSpec,
    /// Gauss order of the base rule; 1 is the midpoint rule.
    pub quad_order: usize,
    pub near_field_levels: usize,
    pub rel_tol: f64,
    pub near_threshold: f64,
    pub centers_only: bool,
    /// Directory for cached tables; empty disables caching.
    pub cache_dir: String,
}

impl Default for KernelConfig {
    fn default() -> Self {
        let q = QuadratureSpec::default();
        Self {
            truncation: TruncationSpec::Cells(7.0),
            quad_order: q.base_rule.order(),
            near_field_levels: q.near_field_levels,
            rel_tol: q.rel_tol,
            near_threshold: q.near_threshold,
            centers_only: q.centers_only,
            cache_dir: String::new(),
        }
    }
}

impl KernelConfig {
    pub fn quadrature(&self) -> QuadratureSpec {
        QuadratureSpec {
            base_rule: if self.quad_order == 1 {
                BaseRule::Midpoint
            } else {
                BaseRule::Gauss(self.quad_order)
            },
            near_field_levels: self.near_field_levels,
            rel_tol: self.rel_tol,
            near_threshold: self.near_threshold,
            centers_only: self.centers_only,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustRegionConfig {
    pub delta0: f64,
    pub sigma: f64,
    /// Smallest radius; 0 means one cell volume.
    pub min_radius: f64,
    pub max_outer: usize,
    pub max_nodes: usize,
    /// Wall-clock limit per subproblem in seconds; 0 disables it.
    pub time_limit_secs: f64,
    pub record_wall_time: bool,
    /// Label index of the constant initial control.
    pub w0_label: usize,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            delta0: 0.25,
            sigma: 1e-3,
            min_radius: 0.0,
            max_outer: 1000,
            max_nodes: 1_000_000,
            time_limit_secs: 60.0,
            record_wall_time: false,
            w0_label: 0,
        }
    }
}

impl TrustRegionConfig {
    pub fn params(&self, cell_volume: f64) -> TrustRegionParams {
        let mut p = TrustRegionParams::for_cell_volume(cell_volume);
        p.delta0 = self.delta0;
        p.sigma = self.sigma;
        if self.min_radius > 0.0 {
            p.min_radius = self.min_radius;
        }
        p.max_outer = self.max_outer;
        p.budget = self.budget();
        p.record_wall_time = self.record_wall_time;
        p
    }

    pub fn budget(&self) -> Budget {
        Budget {
            max_nodes: self.max_nodes,
            time_limit: (self.time_limit_secs > 0.0).then(|| Duration::from_secs_f64(self.time_limit_secs)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    pub csv: bool,
    pub pgm: bool,
    pub json: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            csv: true,
            pgm: true,
            json: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub samples: usize,
    pub eps: Vec<f64>,
    /// Directions are scaled to this max-norm.
    pub scale: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            samples: 20,
            eps: vec![1e-3, 1e-4, 1e-5],
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaSweepConfig {
    pub m: usize,
    pub alphas: Vec<f64>,
    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`; empty when `x0 >= x1`.
    pub rect: [f64; 4],
}

impl Default for GammaSweepConfig {
    fn default() -> Self {
        Self {
            m: 128,
            alphas: vec![0.5, 0.7, 0.9, 0.95],
            rect: [0.25, 0.75, 0.25, 0.75],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariationCheckConfig {
    pub m: usize,
    pub alpha: f64,
    pub t_values: Vec<f64>,
}

impl Default for VariationCheckConfig {
    fn default() -> Self {
        Self {
            m: 128,
            alpha: 0.75,
            t_values: vec![1e-2, 1e-3, 1e-4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub problem: ProblemConfig,
    pub discretization: DiscretizationConfig,
    pub kernel: KernelConfig,
    pub trust_region: TrustRegionConfig,
    pub output: OutputConfig,
    pub grad_check: GradCheckConfig,
    pub gamma_sweep: GammaSweepConfig,
    pub variation_check: VariationCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            problem: ProblemConfig::default(),
            discretization: DiscretizationConfig::default(),
            kernel: KernelConfig::default(),
            trust_region: TrustRegionConfig::default(),
            output: OutputConfig::default(),
            grad_check: GradCheckConfig::default(),
            gamma_sweep: GammaSweepConfig::default(),
            variation_check: VariationCheckConfig::default(),
        }
    }
}

fn check(ok: bool, path: &str, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(format!("{path}: {}", msg()))
    }
}

fn in_unit_interval(alpha: f64) -> bool {
    alpha > 0.0 && alpha < 1.0
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// `Some(alpha)` in fractional mode, `None` in limit mode.
    pub fn alpha(&self) -> Option<f64> {
        match self.problem.alpha {
            AlphaSpec::Value(a) => Some(a),
            AlphaSpec::Mode(_) => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let p = &self.problem;
        check(p.nu > 0.0, "problem.nu", || format!("must be > 0, got {}", p.nu))?;
        check(p.eta >= 0.0, "problem.eta", || format!("must be >= 0, got {}", p.eta))?;
        if let AlphaSpec::Value(a) = p.alpha {
            check(in_unit_interval(a), "problem.alpha", || {
                format!("must lie in (0, 1) or be \"limit\", got {a}")
            })?;
        }
        check(p.labels.len() == 2, "problem.labels", || {
            format!("the solver needs exactly two labels, got {}", p.labels.len())
        })?;
        check(p.labels[0] != p.labels[1], "problem.labels", || "labels must differ".into())?;
        let t = &p.target;
        check(
            t.radius >= 0.0
                && t.center[0] - t.radius >= 0.0
                && t.center[0] + t.radius <= 1.0
                && t.center[1] - t.radius >= 0.0
                && t.center[1] + t.radius <= 1.0,
            "problem.target",
            || "disk must lie inside the unit square".into(),
        )?;
        let d = &self.discretization;
        check(d.n >= 2, "discretization.n", || format!("must be >= 2, got {}", d.n))?;
        check(d.rho >= 2, "discretization.rho", || format!("must be >= 2, got {}", d.rho))?;
        let k = &self.kernel;
        if let Some(c) = k.truncation.cells() {
            check(c >= 1.0, "kernel.truncation", || format!("must be >= 1 cell, got {c}"))?;
        }
        check((1..=32).contains(&k.quad_order), "kernel.quad_order", || {
            format!("must lie in 1..=32, got {}", k.quad_order)
        })?;
        check(k.near_field_levels >= 1, "kernel.near_field_levels", || "must be >= 1".into())?;
        check(k.rel_tol > 0.0 && k.rel_tol <= 0.1, "kernel.rel_tol", || {
            format!("must lie in (0, 0.1], got {}", k.rel_tol)
        })?;
        let tr = &self.trust_region;
        check(tr.delta0 > 0.0, "trust_region.delta0", || format!("must be > 0, got {}", tr.delta0))?;
        check(tr.sigma > 0.0 && tr.sigma < 1.0, "trust_region.sigma", || {
            format!("must lie in (0, 1), got {}", tr.sigma)
        })?;
        check(tr.min_radius >= 0.0, "trust_region.min_radius", || "must be >= 0".into())?;
        check(tr.max_nodes >= 1, "trust_region.max_nodes", || "must be >= 1".into())?;
        check(tr.time_limit_secs >= 0.0, "trust_region.time_limit_secs", || "must be >= 0".into())?;
        check(tr.w0_label < p.labels.len(), "trust_region.w0_label", || {
            format!("must index problem.labels, got {}", tr.w0_label)
        })?;
        let g = &self.grad_check;
        check(g.samples >= 1, "grad_check.samples", || "must be >= 1".into())?;
        check(!g.eps.is_empty() && g.eps.iter().all(|&e| e > 0.0), "grad_check.eps", || {
            "must be a non-empty list of positive steps".into()
        })?;
        let s = &self.gamma_sweep;
        check(s.m >= 2, "gamma_sweep.m", || "must be >= 2".into())?;
        check(
            !s.alphas.is_empty() && s.alphas.iter().all(|&a| in_unit_interval(a)),
            "gamma_sweep.alphas",
            || "must be a non-empty list in (0, 1)".into(),
        )?;
        let v = &self.variation_check;
        check(v.m >= 8, "variation_check.m", || "must be >= 8".into())?;
        check(in_unit_interval(v.alpha), "variation_check.alpha", || "must lie in (0, 1)".into())?;
        check(
            !v.t_values.is_empty()
                && v.t_values.iter().all(|&t| t > 0.0)
                && v.t_values.windows(2).all(|w| w[1] < w[0]),
            "variation_check.t_values",
            || "must be positive and strictly decreasing".into(),
        )?;
        Ok(())
    }
}
