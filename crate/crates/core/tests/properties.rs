use proptest::prelude::*;

use sgvi::fem_spatial::assemble_stiffness_full;
use sgvi::function::SpatialFn;
use sgvi::lcp_solver::{ComplementarityProblem, SolverConfig};
use sgvi::mc_baseline::MCAccumulator;
use sgvi::mesh::{build_uniform_mesh, triangle_quadrature, Rect};
use sgvi::param_space::{assemble_gramians, build_param_grid, density_for_exp_uniform, Density1D};
use sgvi::problems::example1;
use sgvi::random_field::{sample_scenario, Transform};
use sgvi::runner::{ErrorTable, TableRow};
use sgvi::sg_system::{assemble_sg, ExplicitPolicy, SgOptions};
use sgvi::sparse::SparseMatrix;
use sgvi::statistics::MomentErrors;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[allow(clippy::needless_range_loop)]
fn dd_matrix(n: usize, off: &[f64], shift: &[f64]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0f64; n]; n];
    let mut k = 0;
    for i in 0..n {
        for j in 0..i {
            a[i][j] = off[k];
            a[j][i] = off[k];
            k += 1;
        }
    }
    for i in 0..n {
        a[i][i] = (0..n).filter(|&j| j != i).map(|j| a[i][j].abs()).sum::<f64>() + shift[i];
    }
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn triplet_rows_are_sorted_and_match_dense(
        entries in prop::collection::vec((0usize..6, 0usize..6, -5.0f64..5.0), 0..40),
        x in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let a = SparseMatrix::from_triplets(6, 6, &entries);
        let mut dense = vec![vec![0.0; 6]; 6];
        for &(r, c, v) in &entries {
            dense[r][c] += v;
        }
        for r in 0..6 {
            let (cols, _) = a.row(r);
            prop_assert!(cols.windows(2).all(|w| w[0] < w[1]));
        }
        let expect: Vec<f64> = dense.iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
        prop_assert!(max_diff(&a.matvec(&x), &expect) < 1e-12);
    }

    #[test]
    fn triangle_rules_integrate_monomials(degree in 1usize..=5, p in 0u32..=5, q in 0u32..=5) {
        prop_assume!((p + q) as usize <= degree);
        let rule = triangle_quadrature(degree).unwrap();
        let approx: f64 = rule.points.iter().zip(&rule.weights).map(|(b, w)| w * b[1].powi(p as i32) * b[2].powi(q as i32)).sum();
        // ∫ x^p y^q over the reference triangle = p! q! / (p + q + 2)!
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        let exact = fact(p) * fact(q) / fact(p + q + 2);
        prop_assert!((approx - exact).abs() < 1e-13);
    }

    #[test]
    fn stiffness_is_symmetric_with_constant_kernel(nx in 1usize..7, ny in 1usize..7, c in 0.1f64..3.0) {
        let mesh = build_uniform_mesh(Rect::new(-1.0, 2.0, 0.0, 1.5), nx, ny).unwrap();
        let k = assemble_stiffness_full(&mesh, &SpatialFn::new(move |x| c + x[0] * x[0])).unwrap();
        prop_assert!(k.asymmetry() < 1e-12);
        let ones = vec![1.0; mesh.n_nodes()];
        prop_assert!(k.matvec(&ones).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gramians_are_symmetric_tensor_products(c1 in 1usize..5, c2 in 1usize..5, uniform in any::<bool>()) {
        let d = if uniform { Density1D::uniform(-1.0, 2.0).unwrap() } else { density_for_exp_uniform(-1.0, 1.0).unwrap() };
        let grid = build_param_grid(&[d.clone(), d], &[c1, c2]).unwrap();
        let gr = assemble_gramians(&grid);
        prop_assert!((gr.g0_vec.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(gr.g0.asymmetry() < 1e-14);
        for g in &gr.gk {
            prop_assert!(g.asymmetry() < 1e-14);
        }
        let kron = gr.factors[0].mass.kron(&gr.factors[1].mass);
        let j = grid.n_basis();
        for r in 0..j {
            for c in 0..j {
                prop_assert!((kron.get(r, c) - gr.g0.get(r, c)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn flat_and_multi_index_round_trip(c1 in 1usize..5, c2 in 1usize..5, c3 in 1usize..4) {
        let d = Density1D::uniform(0.0, 1.0).unwrap();
        let grid = build_param_grid(&[d.clone(), d.clone(), d], &[c1, c2, c3]).unwrap();
        for j in 0..grid.n_basis() {
            prop_assert_eq!(grid.flat_index(&grid.multi_index(j)), j);
        }
    }

    #[test]
    fn kronecker_matvec_and_diagonal_match_explicit(nx in 2usize..7, cells in 1usize..4, seed in any::<u64>()) {
        let p = example1().unwrap();
        let mesh = build_uniform_mesh(p.rect, nx, nx).unwrap();
        let grid = build_param_grid(&p.densities, &[cells, cells + 1]).unwrap();
        let mut sys = assemble_sg(&mesh, &grid, &p.coefficient, &p.source, &p.obstacle, &p.dirichlet,
            SgOptions::explicit(ExplicitPolicy::Never)).unwrap();
        let a = sys.ensure_explicit().clone();
        let v: Vec<f64> = (0..sys.len()).map(|i| ((i as u64 ^ seed) % 97) as f64 / 48.0 - 1.0).collect();
        prop_assert!(max_diff(&sys.kron_matvec(&v).unwrap(), &a.matvec(&v)) < 1e-12);
        prop_assert!(max_diff(sys.diagonal(), &a.diagonal()) < 1e-12);
    }

    #[test]
    fn lcp_solutions_are_feasible_and_agree(
        off in prop::collection::vec(-1.0f64..1.0, 15),
        shift in prop::collection::vec(0.1f64..2.0, 6),
        b in prop::collection::vec(-2.0f64..2.0, 6),
        g in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let a = SparseMatrix::from_dense(&dd_matrix(6, &off, &shift));
        let problem = ComplementarityProblem::from_matrix(&a, &b, &g);
        let cfg = SolverConfig::psor().with_tol(1e-12);
        let u1 = problem.solve(&cfg, None).unwrap().into_result().unwrap().u;
        let u2 = problem.solve(&SolverConfig::active_set().with_tol(1e-12), None).unwrap().into_result().unwrap().u;
        prop_assert!(u1.iter().zip(&g).all(|(u, g)| u >= g));
        prop_assert!(problem.multiplier(&u1).iter().all(|l| *l >= -1e-12));
        prop_assert!(problem.residual(&u1) <= 1e-12);
        prop_assert!(max_diff(&u1, &u2) < 1e-10);
    }

    #[test]
    fn accumulator_merge_is_associative(
        xs in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 3..30),
        cut1 in 1usize..10, cut2 in 1usize..10,
    ) {
        let n = xs.len();
        let (i, j) = (cut1.min(n - 2), (cut1.min(n - 2) + cut2).min(n - 1));
        let acc = |r: &[Vec<f64>]| {
            let mut a = MCAccumulator::new(3);
            r.iter().for_each(|x| a.push(x));
            a
        };
        let (a, b, c) = (acc(&xs[..i]), acc(&xs[i..j]), acc(&xs[j..]));
        let left = a.merge(&b).unwrap().merge(&c).unwrap();
        let right = a.merge(&b.merge(&c).unwrap()).unwrap();
        let all = acc(&xs);
        prop_assert!(max_diff(&left.mean, &right.mean) < 1e-10);
        prop_assert!(max_diff(&left.variance(), &right.variance()) < 1e-10);
        prop_assert!(max_diff(&left.variance(), &all.variance()) < 1e-10);
        prop_assert!(all.variance().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn scenarios_are_reproducible_and_in_support(seed in any::<u64>(), index in any::<u64>(), dims in 1usize..5) {
        let s = sample_scenario(dims, seed, index, Transform::Exp);
        prop_assert_eq!(&s, &sample_scenario(dims, seed, index, Transform::Exp));
        let e = std::f64::consts::E;
        prop_assert!(s.y.iter().all(|y| (1.0 / e..=e).contains(y)));
    }

    #[test]
    fn table_orders_are_log2_ratios(e in prop::collection::vec(1e-6f64..1.0, 2..6)) {
        let rows = e.iter().map(|&v| TableRow {
            h: 1.0, s: 1.0, iterations: 0, seconds: 0.0,
            errors: MomentErrors { l2_mean: v, h1_mean: v, l2_second: v, h1_second: v },
        }).collect();
        let orders = ErrorTable { rows, complete: true }.orders();
        prop_assert!(orders[0].is_none());
        for (k, o) in orders.iter().enumerate().skip(1) {
            prop_assert!((o.unwrap()[0] - (e[k - 1] / e[k]).log2()).abs() < 1e-12);
        }
    }
}

