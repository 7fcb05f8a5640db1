use permabound::bethe::{r_o_objective, solve_r_o_mirror, DEFAULT_BETHE_TOL};
use permabound::entropy::{dual_h, r_e_objective, sinkhorn_solve, DEFAULT_MAX_ITERS, DEFAULT_SINKHORN_TOL};
use permabound::exact::{permanent_naive, permanent_ryser};
use permabound::generate::{generate, GeneratorKind};
use permabound::matrix::{project_to_support, DoublyStochasticMatrix, NonNegMatrix};
use permabound::poly::{inner_inf_closed, inner_ratio};
use proptest::prelude::*;

fn positive(max_n: usize) -> impl Strategy<Value = NonNegMatrix> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(0.05f64..5.0, n * n).prop_map(move |e| NonNegMatrix::from_row_major(n, e).unwrap())
    })
}

/// Entries zeroed with probability about 1/3.
fn sparse(max_n: usize) -> impl Strategy<Value = NonNegMatrix> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(prop_oneof![1 => Just(0.0), 2 => 0.05f64..5.0], n * n)
            .prop_map(move |e| NonNegMatrix::from_row_major(n, e).unwrap())
    })
}

fn kind() -> impl Strategy<Value = GeneratorKind> {
    prop_oneof![
        Just(GeneratorKind::Uniform),
        Just(GeneratorKind::Exponential),
        (0.3f64..0.9).prop_map(GeneratorKind::Sparse),
        Just(GeneratorKind::Block),
        Just(GeneratorKind::Binary),
    ]
}

fn sinkhorn_point(m: &NonNegMatrix) -> DoublyStochasticMatrix {
    sinkhorn_solve(m, 1e-13, DEFAULT_MAX_ITERS).unwrap().b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generator_is_deterministic(k in kind(), n in 1usize..7, seed in any::<u64>()) {
        let a = generate(k, n, seed).unwrap();
        let b = generate(k, n, seed).unwrap();
        prop_assert_eq!(a.entries(), b.entries());
        prop_assert!(a.entries().iter().all(|x| x.is_finite() && *x >= 0.0));
        prop_assert!(permanent_ryser(&a).unwrap() > 0.0);
    }

    #[test]
    fn projection_masks_and_is_idempotent(m in sparse(5), fill in 0.0f64..1.0) {
        let n = m.n();
        let b = vec![fill; n * n];
        let once = project_to_support(&b, &m).unwrap();
        let twice = project_to_support(&once, &m).unwrap();
        prop_assert_eq!(&once, &twice);
        for (k, &x) in once.iter().enumerate() {
            prop_assert_eq!(x, if m.support()[k] { fill } else { 0.0 });
        }
    }

    #[test]
    fn ryser_matches_naive_and_transpose(m in sparse(6)) {
        let naive = permanent_naive(&m).unwrap();
        let ryser = permanent_ryser(&m).unwrap();
        let tr = permanent_ryser(&m.transpose()).unwrap();
        let scale = naive.abs().max(1e-300);
        prop_assert!((naive - ryser).abs() <= 1e-12 * scale);
        prop_assert!((tr - ryser).abs() <= 1e-12 * scale);
    }

    #[test]
    fn weak_duality(m in positive(5), beta in prop::collection::vec(-3.0f64..3.0, 5)) {
        let n = m.n();
        let re = sinkhorn_solve(&m, DEFAULT_SINKHORN_TOL, DEFAULT_MAX_ITERS).unwrap().value;
        let h = dual_h(&m, &beta[..n]).unwrap();
        prop_assert!(h >= re - 1e-9, "h = {h}, R_E = {re}");
        // Any feasible point is below the optimum.
        let other = sinkhorn_point(&NonNegMatrix::ones(n));
        prop_assert!(r_e_objective(&m, &other) <= re + 1e-9);
    }

    #[test]
    fn bethe_concave_on_polytope(m in positive(5), p in positive(5), q in positive(5), t in 0.0f64..1.0) {
        let n = m.n().min(p.n()).min(q.n());
        let cut = |x: &NonNegMatrix| {
            let e = (0..n * n).map(|k| x.get(k / n, k % n)).collect();
            NonNegMatrix::from_row_major(n, e).unwrap()
        };
        let (m, b1, b2) = (cut(&m), sinkhorn_point(&cut(&p)), sinkhorn_point(&cut(&q)));
        let mix: Vec<f64> = b1.entries().iter().zip(b2.entries()).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let mid = DoublyStochasticMatrix::certify(n, mix, 1e-9).unwrap();
        let chord = t * r_o_objective(&m, &b1) + (1.0 - t) * r_o_objective(&m, &b2);
        prop_assert!(r_o_objective(&m, &mid) >= chord - 1e-10);
    }

    #[test]
    fn entropy_scaling_equivariance(
        m in positive(5),
        d1 in prop::collection::vec(0.1f64..10.0, 5),
        d2 in prop::collection::vec(0.1f64..10.0, 5),
    ) {
        let n = m.n();
        let scaled: Vec<f64> = (0..n * n).map(|k| d1[k / n] * m.entries()[k] * d2[k % n]).collect();
        let scaled = NonNegMatrix::from_row_major(n, scaled).unwrap();
        let a = sinkhorn_solve(&m, 1e-12, DEFAULT_MAX_ITERS).unwrap();
        let b = sinkhorn_solve(&scaled, 1e-12, DEFAULT_MAX_ITERS).unwrap();
        let shift: f64 = d1[..n].iter().chain(&d2[..n]).map(|x| x.ln()).sum();
        prop_assert!((b.value - a.value - shift).abs() <= 1e-8);
        for (x, y) in a.b.entries().iter().zip(b.b.entries()) {
            prop_assert!((x - y).abs() <= 1e-8);
        }
    }

    #[test]
    fn inner_ratio_never_below_closed_form(m in positive(5), p in positive(5), x in prop::collection::vec(0.01f64..10.0, 25)) {
        let n = m.n().min(p.n());
        let cut = |a: &NonNegMatrix| {
            let e = (0..n * n).map(|k| a.get(k / n, k % n)).collect();
            NonNegMatrix::from_row_major(n, e).unwrap()
        };
        let (m, b) = (cut(&m), sinkhorn_point(&cut(&p)));
        let closed = inner_inf_closed(&m, &b);
        let r = inner_ratio(&m, &b, &x[..n * n]);
        prop_assert!(r >= closed * (1.0 - 1e-12), "ratio {r} below closed form {closed}");
    }

    #[test]
    fn bethe_below_permanent_below_capacity(m in sparse(5)) {
        let per = permanent_ryser(&m).unwrap();
        prop_assume!(per > 0.0);
        let re = sinkhorn_solve(&m, DEFAULT_SINKHORN_TOL, DEFAULT_MAX_ITERS).unwrap().value;
        let ro = solve_r_o_mirror(&m, DEFAULT_BETHE_TOL, DEFAULT_MAX_ITERS).unwrap().value;
        let lp = per.ln();
        let n = m.n() as f64;
        prop_assert!(ro <= lp + 1e-8 && lp <= re + 1e-8);
        prop_assert!(re <= lp + n + 1e-8 && lp <= ro + n * std::f64::consts::LN_2 + 1e-8);
    }
}
