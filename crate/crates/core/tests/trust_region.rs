use fracperim_core::grid::{ControlField, Grid, LabelSet};
use fracperim_core::kernel::{tabulate_kernel, QuadratureSpec};
use fracperim_core::pde::{make_target_ud, CgSettings, DiskTarget, PdeMesh, PoissonTracking};
use fracperim_core::regularizer::Regularizer;
use fracperim_core::trust_region::{
    run, stationarity_check, LinearObjective, Problem, Termination, TrustRegionParams,
};

fn table_reg(n: usize, alpha: f64) -> Regularizer {
    let g = Grid::new(n, 7).unwrap();
    Regularizer::fractional(
        tabulate_kernel(&g, alpha, Some(7.0 * g.h()), &QuadratureSpec::default()).unwrap(),
    )
}

#[test]
fn separable_linear_problem_flips_everything() {
    let reg = table_reg(8, 0.5);
    let g = *reg.grid();
    let obj = LinearObjective {
        g: vec![-1.0; 64],
        cell_volume: g.cell_volume(),
    };
    let problem = Problem {
        objective: &obj,
        regularizer: &reg,
        eta: 0.0,
    };
    let mut params = TrustRegionParams::for_cell_volume(g.cell_volume());
    params.delta0 = 1.0;
    let w0 = ControlField::constant(g, LabelSet::binary(), 0).unwrap();
    let (w, log) = run(&problem, &params, &w0).unwrap();
    let first = &log.records[0];
    assert!(first.accepted);
    assert!((first.pred - 1.0).abs() < 1e-12);
    assert_eq!(first.ared, first.pred);
    assert!(w.assignment().iter().all(|&a| a == 1));
    assert_eq!(log.termination, Termination::PredNonpositive);
    assert_eq!(log.accepted_steps(), 1);
}

#[test]
fn stationary_start_terminates_immediately() {
    let reg = table_reg(8, 0.5);
    let g = *reg.grid();
    let obj = LinearObjective {
        g: vec![1.0; 64],
        cell_volume: g.cell_volume(),
    };
    let problem = Problem {
        objective: &obj,
        regularizer: &reg,
        eta: 1e-3,
    };
    let params = TrustRegionParams::for_cell_volume(g.cell_volume());
    let w0 = ControlField::constant(g, LabelSet::binary(), 0).unwrap();
    let (w, log) = run(&problem, &params, &w0).unwrap();
    assert_eq!(w, w0);
    assert_eq!(log.accepted_steps(), 0);
    assert_eq!(log.records.len(), 1);
    assert_eq!(log.termination, Termination::PredNonpositive);
}

#[test]
fn linear_model_is_exact() {
    let reg = table_reg(8, 0.7);
    let g = *reg.grid();
    let gvals: Vec<f64> = (0..64)
        .map(|i| {
            let c = g.center(i);
            let r2 = (c[0] - 0.5).powi(2) + (c[1] - 0.5).powi(2);
            if r2 < 0.09 { -0.2 } else { 0.2 }
        })
        .collect();
    let obj = LinearObjective {
        g: gvals,
        cell_volume: g.cell_volume(),
    };
    let problem = Problem {
        objective: &obj,
        regularizer: &reg,
        eta: 1e-3,
    };
    let mut params = TrustRegionParams::for_cell_volume(g.cell_volume());
    params.delta0 = 0.05;
    let w0 = ControlField::constant(g, LabelSet::binary(), 0).unwrap();
    let (w, log) = run(&problem, &params, &w0).unwrap();
    assert!(log.accepted_steps() > 0);
    for r in &log.records {
        if r.pred > 0.0 {
            assert!((r.ared - r.pred).abs() <= 1e-12 * (1.0 + r.pred.abs()), "{r:?}");
            assert!(r.accepted);
        }
    }
    assert_eq!(log.termination, Termination::PredNonpositive);
    let last = log.records.last().unwrap();
    let check = stationarity_check(&problem, &w, last.delta, &params.budget).unwrap();
    assert!(check.objective >= -1e-9);
}

#[test]
fn poisson_replica_contract() {
    let t0 = std::time::Instant::now();
    let n = 16;
    let reg = table_reg(n, 0.5);
    let g = *reg.grid();
    let mesh = PdeMesh::new(&g, 4).unwrap();
    let nu = 1.0 / 25.0;
    let ud = make_target_ud(&DiskTarget::default(), nu, &mesh, &CgSettings::default()).unwrap();
    let obj = PoissonTracking::new(mesh, nu, ud).unwrap();
    let problem = Problem {
        objective: &obj,
        regularizer: &reg,
        eta: 5e-5,
    };
    let params = TrustRegionParams::for_cell_volume(g.cell_volume());
    let w0 = ControlField::constant(g, LabelSet::binary(), 0).unwrap();
    let (_, log) = run(&problem, &params, &w0).unwrap();
    eprintln!("{}", log.to_csv());
    eprintln!("{:?} in {:?}", log.termination, t0.elapsed());
    let mut last_j = log.initial_j;
    for r in &log.records {
        assert_eq!(r.delta, params.delta0 / 2f64.powi(r.inner as i32));
        if r.accepted {
            assert!(r.ared >= params.sigma * r.pred);
            assert!(r.j < last_j);
            last_j = r.j;
        }
    }
}
