use fracperim_core::classic::LimitRegularizerSpec;
use fracperim_core::grid::{ControlField, Grid, LabelSet};
use fracperim_core::kernel::{tabulate_kernel, QuadratureSpec};
use fracperim_core::regularizer::Regularizer;
use fracperim_core::subproblem::{
    brute_force_subproblem, lagrangian_lower_bound, maximize_dual, predicted_reduction,
    solve_subproblem_exact, solve_unconstrained_mincut, Budget, SubproblemInstance,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn regularizers(n: usize) -> Vec<Regularizer> {
    let g = Grid::new(n, 2).unwrap();
    let q = QuadratureSpec::default();
    vec![
        Regularizer::fractional(tabulate_kernel(&g, 0.5, Some(2.0 * g.h()), &q).unwrap()),
        Regularizer::fractional(tabulate_kernel(&g, 0.8, None, &q).unwrap()),
        Regularizer::limit(g, LimitRegularizerSpec::default()),
    ]
}

fn random_instance<'a>(reg: &'a Regularizer, rng: &mut ChaCha8Rng) -> SubproblemInstance<'a> {
    let g = *reg.grid();
    let cells = g.num_cells();
    let labels = if rng.gen_bool(0.7) {
        LabelSet::binary()
    } else {
        LabelSet::new(vec![-1, 2]).unwrap()
    };
    let center = ControlField::new(g, labels, (0..cells).map(|_| rng.gen_range(0..2)).collect()).unwrap();
    let c: Vec<f64> = (0..cells).map(|_| rng.gen_range(-1.0..1.0) * g.cell_volume()).collect();
    let eta = [0.0, 1e-3, 1e-2, 5e-2][rng.gen_range(0..4)];
    let jump = (center.labels().value(1) - center.labels().value(0)).abs() as f64;
    let radius = rng.gen_range(0..=cells) as f64 * jump * g.cell_volume();
    SubproblemInstance::new(reg, c, eta, center, radius).unwrap()
}

#[test]
fn branch_and_bound_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [2usize, 3, 4] {
        for reg in &regularizers(n) {
            for _ in 0..40 {
                let inst = random_instance(reg, &mut rng);
                let exact = solve_subproblem_exact(&inst, &Budget::default()).unwrap();
                let brute = brute_force_subproblem(&inst).unwrap();
                assert!(exact.is_exact());
                assert!(
                    (exact.objective - brute.objective).abs() <= 1e-9,
                    "{} vs {}",
                    exact.objective,
                    brute.objective
                );
                assert!(exact.objective <= 0.0);
                assert!(predicted_reduction(&exact) >= 0.0);
                let dist = exact.minimizer.l1_distance(&inst.center).unwrap();
                assert!(dist <= inst.radius + 1e-12);
                let (_, dual) = maximize_dual(&inst).unwrap();
                assert!(dual <= brute.objective + 1e-9, "{dual} > {}", brute.objective);
                for lambda in [0.0, 0.1, 1.0, 10.0] {
                    assert!(lagrangian_lower_bound(&inst, lambda).unwrap() <= brute.objective + 1e-9);
                }
            }
        }
    }
}

#[test]
fn mincut_matches_enumeration_of_penalized_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let regs = regularizers(3);
    for trial in 0..200 {
        let reg = &regs[trial % regs.len()];
        let mut inst = random_instance(reg, &mut rng);
        let cells = inst.center.grid().num_cells();
        inst.radius = cells as f64;
        let lambda = rng.gen_range(0.0..2.0);
        let (w, value) = solve_unconstrained_mincut(&inst, lambda).unwrap();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << cells) {
            let x = ControlField::new(
                *inst.center.grid(),
                inst.center.labels().clone(),
                (0..cells).map(|i| (mask >> i & 1) as usize).collect(),
            )
            .unwrap();
            let v = inst.objective(&x).unwrap() + lambda * x.l1_distance(&inst.center).unwrap();
            best = best.min(v);
        }
        assert!((value - best).abs() <= 1e-9, "{value} vs {best}");
        assert_eq!(w.grid(), inst.center.grid());
    }
}

#[test]
fn optimal_value_is_monotone_in_radius() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reg = &regularizers(4)[0];
    for _ in 0..20 {
        let mut inst = random_instance(reg, &mut rng);
        let mut last = 0.0;
        for k in 0..=16 {
            inst.radius = k as f64 * inst.flip_volume();
            let sol = solve_subproblem_exact(&inst, &Budget::default()).unwrap();
            assert!(sol.objective <= last + 1e-12);
            last = sol.objective;
        }
    }
}

#[test]
fn larger_instances_certify_against_dual_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = Grid::new(12, 3).unwrap();
    let reg = Regularizer::fractional(
        tabulate_kernel(&g, 0.5, Some(3.0 * g.h()), &QuadratureSpec::default()).unwrap(),
    );
    for _ in 0..5 {
        let mut inst = random_instance(&reg, &mut rng);
        inst.radius = 20.0 * inst.flip_volume();
        let sol = solve_subproblem_exact(&inst, &Budget::default()).unwrap();
        let (_, dual) = maximize_dual(&inst).unwrap();
        assert!(sol.is_exact());
        assert!(dual <= sol.objective + 1e-9);
        assert!(sol.minimizer.l1_distance(&inst.center).unwrap() <= inst.radius + 1e-12);
    }
}
