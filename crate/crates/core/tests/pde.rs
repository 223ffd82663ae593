use fracperim_core::grid::Grid;
use fracperim_core::pde::{make_target_ud, solve_nodal, solve_poisson, CgSettings, DiskTarget, PdeMesh, PoissonTracking};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NU: f64 = 1.0 / 25.0;

fn mesh(n: usize, rho: usize) -> PdeMesh {
    PdeMesh::new(&Grid::new(n, 0).unwrap(), rho).unwrap()
}

fn random_cells(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

#[test]
fn solution_operator_is_linear() {
    let m = mesh(8, 4);
    let cg = CgSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random_cells(8, &mut rng), random_cells(8, &mut rng));
    let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
    let ua = solve_poisson(&m, NU, &a, &cg).unwrap();
    let ub = solve_poisson(&m, NU, &b, &cg).unwrap();
    let uc = solve_poisson(&m, NU, &combo, &cg).unwrap();
    let expect: Vec<f64> = ua.iter().zip(&ub).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
    assert!(max_abs_diff(&uc, &expect) <= 1e-9 * max_abs(&uc));
}

#[test]
fn solution_operator_is_self_adjoint() {
    let m = mesh(8, 4);
    let cg = CgSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f: Vec<f64> = (0..m.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..m.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sf = solve_nodal(&m, NU, &f, &cg).unwrap();
    let sg = solve_nodal(&m, NU, &g, &cg).unwrap();
    let lhs = m.inner(&sf, &g);
    let rhs = m.inner(&f, &sg);
    assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
}

#[test]
fn nonnegative_sources_give_nonnegative_states() {
    let m = mesh(8, 4);
    let cg = CgSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let w: Vec<f64> = (0..64).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect();
        let u = solve_poisson(&m, NU, &w, &cg).unwrap();
        assert!(u.iter().all(|&v| v >= -1e-12));
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let un = solve_poisson(&m, NU, &neg, &cg).unwrap();
        assert!(max_abs_diff(&un, &u.iter().map(|v| -v).collect::<Vec<_>>()) <= 1e-12);
    }
}

#[test]
fn unit_source_respects_torsion_bound() {
    // -nu Lap u = 1 on the unit square: max u ~ 0.07367 / nu < 1 / (8 nu).
    let m = mesh(8, 4);
    let u = solve_poisson(&m, NU, &[1.0; 64], &CgSettings::default()).unwrap();
    let peak = u.iter().cloned().fold(f64::MIN, f64::max);
    assert!(peak < 1.0 / (8.0 * NU));
    assert!((peak * NU / 0.07367 - 1.0).abs() < 0.01, "{}", peak * NU);
}

#[test]
fn centered_target_is_symmetric() {
    let m = mesh(8, 4);
    let ud = make_target_ud(&DiskTarget::default(), NU, &m, &CgSettings::default()).unwrap();
    let s = m.side();
    let peak = max_abs(&ud);
    for j in 0..s {
        for i in 0..s {
            let v = ud[j * s + i];
            for w in [ud[i * s + j], ud[j * s + (s - 1 - i)], ud[(s - 1 - j) * s + i]] {
                assert!((v - w).abs() <= 1e-10 * peak);
            }
        }
    }
}

#[test]
fn state_is_smoother_than_control() {
    let m = mesh(8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w: Vec<f64> = (0..64).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let u = solve_poisson(&m, NU, &w, &CgSettings::default()).unwrap();
    let s = m.side();
    let h = m.spacing();
    let mut jump: f64 = 0.0;
    for j in 0..s {
        for i in 0..s - 1 {
            jump = jump.max((u[j * s + i + 1] - u[j * s + i]).abs());
        }
    }
    // Lipschitz constant of u is bounded by max|w| / nu up to a mesh constant.
    assert!(jump / h < 1.0 / NU);
}

#[test]
fn gradient_matches_central_differences() {
    let m = mesh(8, 4);
    let target = make_target_ud(&DiskTarget::default(), NU, &m, &CgSettings::default()).unwrap();
    let prob = PoissonTracking::new(m, NU, target).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w: Vec<f64> = (0..64).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let grad = prob.gradient(&w).unwrap();
    let vol = 1.0 / 64.0;
    for _ in 0..5 {
        let d = random_cells(8, &mut rng);
        let eps = 1e-4;
        let shift = |s: f64| -> Vec<f64> { w.iter().zip(&d).map(|(a, b)| a + s * b).collect() };
        let fd = (prob.value(&shift(eps)).unwrap() - prob.value(&shift(-eps)).unwrap()) / (2.0 * eps);
        let an: f64 = grad.iter().zip(&d).map(|(g, v)| g * v * vol).sum();
        assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-12), "{fd} vs {an}");
    }
}

#[test]
fn realizable_target_has_zero_value_and_gradient() {
    let m = mesh(8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w: Vec<f64> = (0..64).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let target = solve_poisson(&m, NU, &w, &CgSettings::default()).unwrap();
    let prob = PoissonTracking::new(m, NU, target).unwrap();
    assert!(prob.value(&w).unwrap() <= 1e-20);
    assert!(max_abs(&prob.gradient(&w).unwrap()) <= 1e-10);
}

#[test]
fn mismatched_sizes_are_rejected() {
    let m = mesh(4, 2);
    assert!(solve_poisson(&m, NU, &[0.0; 15], &CgSettings::default()).is_err());
    assert!(PoissonTracking::new(m, NU, vec![0.0; 3]).is_err());
    assert!(solve_nodal(&m, 0.0, &vec![1.0; m.num_nodes()], &CgSettings::default()).is_err());
}
