use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::model::{build_problem, AuxKind, Normalization, Objective, Structure};
use crate::scenario::builtin_rajshahi;

/// Bare program over `n` columns with rows `(coefficients, sense, rhs)`.
fn program(
    n: usize,
    rows: &[(Vec<f64>, RowSense, f64)],
    cost: &[f64],
    sense: Sense,
    lower: Vec<f64>,
    upper: Vec<f64>,
) -> LoweredProgram {
    let mut lp = LoweredProgram {
        name: "toy".into(),
        structure: Structure::ConcaveMaxLp,
        sense,
        objective: LinearForm::default(),
        entries: Vec::new(),
        row_sense: Vec::new(),
        rhs: Vec::new(),
        row_names: Vec::new(),
        lower,
        upper,
        integer: Vec::new(),
        columns: (0..n).map(ColumnTag::Area).collect(),
        big_m: Vec::new(),
        net_benefit: LinearForm::default(),
        efd: None,
        total_area: LinearForm::default(),
        total_pumping: LinearForm::default(),
    };
    let form = |c: &[f64]| LinearForm { terms: c.iter().cloned().enumerate().collect(), constant: 0.0 };
    lp.set_objective(form(cost), sense);
    for (k, (a, s, b)) in rows.iter().enumerate() {
        lp.add_row(&form(a), *s, *b, &format!("r{k}"));
    }
    lp
}

#[test]
fn toy_lp_reaches_one() {
    let lp = program(2, &[(vec![1.0, 1.0], RowSense::Le, 1.0)], &[1.0, 1.0], Sense::Maximize, vec![0.0; 2], vec![f64::INFINITY; 2]);
    let r = solve_lp(&lp, &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.objective.unwrap() - 1.0).abs() < 1e-12);
    // Relaxing the row by one unit raises the optimum by one.
    assert!((r.duals[0] - 1.0).abs() < 1e-12);
}

#[test]
fn duals_are_rhs_sensitivities() {
    // min 2x + 3y  s.t. x + y >= 4, x <= 3
    let lp = program(
        2,
        &[(vec![1.0, 1.0], RowSense::Ge, 4.0), (vec![1.0, 0.0], RowSense::Le, 3.0)],
        &[2.0, 3.0],
        Sense::Minimize,
        vec![0.0; 2],
        vec![f64::INFINITY; 2],
    );
    let r = solve_lp(&lp, &SolverOptions::default()).unwrap();
    assert!((r.objective.unwrap() - 9.0).abs() < 1e-12);
    assert!((r.duals[0] - 3.0).abs() < 1e-12);
    assert!((r.duals[1] + 1.0).abs() < 1e-12);
}

#[test]
fn infeasible_lp_names_rows() {
    let lp = program(
        1,
        &[(vec![1.0], RowSense::Ge, 2.0), (vec![1.0], RowSense::Le, 1.0)],
        &[1.0],
        Sense::Minimize,
        vec![0.0],
        vec![f64::INFINITY],
    );
    let r = solve_lp(&lp, &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Infeasible);
    assert!(!r.infeasible_rows.is_empty());
    assert!(r.decision.is_none());
}

#[test]
fn unbounded_lp_reports_improving_ray() {
    // max x + y  s.t. x - y <= 1
    let lp = program(2, &[(vec![1.0, -1.0], RowSense::Le, 1.0)], &[1.0, 1.0], Sense::Maximize, vec![0.0; 2], vec![f64::INFINITY; 2]);
    let r = solve_lp(&lp, &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Unbounded);
    let ray = r.ray.expect("ray");
    assert!(ray[0] + ray[1] > 0.0, "{ray:?}");
    assert!(ray[0] - ray[1] <= 1e-12 && ray.iter().all(|v| *v >= -1e-12), "{ray:?}");
}

#[test]
fn solve_lp_rejects_integer_programs() {
    let mut lp = program(1, &[], &[1.0], Sense::Maximize, vec![0.0], vec![1.0]);
    lp.integer = vec![true];
    assert!(matches!(solve_lp(&lp, &SolverOptions::default()), Err(Error::Precondition(_))));
    lp.integer.clear();
    assert!(matches!(solve_milp(&lp, &SolverOptions::default()), Err(Error::Precondition(_))));
}

#[test]
fn degenerate_lp_terminates() {
    // Many redundant constraints through the optimal vertex.
    let mut rows = Vec::new();
    for k in 1..=30 {
        let a = k as f64 / 30.0;
        rows.push((vec![a, 1.0 - a, 0.0], RowSense::Le, 1.0));
    }
    rows.push((vec![1.0, 1.0, 1.0], RowSense::Le, 1.0));
    let lp = program(3, &rows, &[1.0, 1.0, 1.0], Sense::Maximize, vec![0.0; 3], vec![f64::INFINITY; 3]);
    let r = solve_lp(&lp, &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.objective.unwrap() - 1.0).abs() < 1e-12);
}

/// Best objective over every vertex of `{A x (<=|>=) b, lo <= x <= hi}`.
fn vertex_oracle(
    n: usize,
    rows: &[(Vec<f64>, RowSense, f64)],
    cost: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Option<f64> {
    let mut cons: Vec<(Vec<f64>, f64)> = rows.iter().map(|(a, _, b)| (a.clone(), *b)).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cons.push((e.clone(), lo[j]));
        cons.push((e, hi[j]));
    }
    let feasible = |x: &DVector<f64>| {
        rows.iter().all(|(a, s, b)| {
            let v: f64 = a.iter().zip(x.iter()).map(|(a, x)| a * x).sum();
            let tol = 1e-9 * b.abs().max(1.0);
            match s {
                RowSense::Le => v <= b + tol,
                RowSense::Ge => v >= b - tol,
                RowSense::Eq => (v - b).abs() <= tol,
            }
        }) && (0..n).all(|j| x[j] >= lo[j] - 1e-9 && x[j] <= hi[j] + 1e-9)
    };
    let mut best: Option<f64> = None;
    let mut pick = vec![0usize; n];
    fn combos(k: usize, start: usize, total: usize, pick: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if k == pick.len() {
            f(pick);
            return;
        }
        for i in start..total {
            pick[k] = i;
            combos(k + 1, i + 1, total, pick, f);
        }
    }
    combos(0, 0, cons.len(), &mut pick, &mut |idx| {
        let a = DMatrix::from_fn(n, n, |r, c| cons[idx[r]].0[c]);
        let b = DVector::from_fn(n, |r, _| cons[idx[r]].1);
        if let Some(x) = a.lu().solve(&b) {
            if feasible(&x) {
                let v: f64 = cost.iter().zip(x.iter()).map(|(c, x)| c * x).sum();
                if best.is_none_or(|b| v > b) {
                    best = Some(v);
                }
            }
        }
    });
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn simplex_matches_vertex_enumeration(
        n in 1usize..=5,
        coeffs in proptest::collection::vec(-5.0..5.0f64, 30),
        cost in proptest::collection::vec(-3.0..3.0f64, 5),
        point in proptest::collection::vec(0.0..1.0f64, 5),
        slack in proptest::collection::vec(0.0..2.0f64, 6),
        senses in proptest::collection::vec(any::<bool>(), 6),
        hi in proptest::collection::vec(0.5..4.0f64, 5),
        m in 1usize..=6,
    ) {
        // Rows pass through a known interior point, so the instance is
        // feasible; column boxes keep it bounded.
        let hi = &hi[..n];
        let x0: Vec<f64> = (0..n).map(|j| point[j] * hi[j]).collect();
        let rows: Vec<(Vec<f64>, RowSense, f64)> = (0..m)
            .map(|i| {
                let a: Vec<f64> = coeffs[i * 5..i * 5 + n].to_vec();
                let v: f64 = a.iter().zip(&x0).map(|(a, x)| a * x).sum();
                if senses[i] { (a, RowSense::Le, v + slack[i]) } else { (a, RowSense::Ge, v - slack[i]) }
            })
            .collect();
        let lo = vec![0.0; n];
        let lp = program(n, &rows, &cost[..n], Sense::Maximize, lo.clone(), hi.to_vec());
        let r = solve_lp(&lp, &SolverOptions::default()).unwrap();
        prop_assert_eq!(r.status, SolveStatus::Optimal);
        let best = vertex_oracle(n, &rows, &cost[..n], &lo, hi).expect("feasible instance has a vertex");
        let got = r.objective.unwrap();
        prop_assert!((got - best).abs() <= 1e-9 * best.abs().max(1.0), "simplex {} oracle {}", got, best);
        prop_assert!(lp.max_violation(&r.columns) <= 1e-9);
    }

    #[test]
    fn branch_and_bound_matches_enumeration(
        n in 2usize..=8,
        value in proptest::collection::vec(1.0..10.0f64, 8),
        weight in proptest::collection::vec(1.0..10.0f64, 8),
        cap_share in 0.2..0.8f64,
    ) {
        // 0/1 knapsack.
        let cap = cap_share * weight[..n].iter().sum::<f64>();
        let mut lp = program(n, &[(weight[..n].to_vec(), RowSense::Le, cap)], &value[..n], Sense::Maximize, vec![0.0; n], vec![1.0; n]);
        lp.integer = vec![true; n];
        let opts = SolverOptions { trace: true, mip_gap: 0.0, ..SolverOptions::default() };
        let r = solve_milp(&lp, &opts).unwrap();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << n) {
            let (v, w) = (0..n).filter(|j| mask >> j & 1 == 1).fold((0.0, 0.0), |(v, w), j| (v + value[j], w + weight[j]));
            if w <= cap + 1e-12 {
                best = best.max(v);
            }
        }
        prop_assert_eq!(r.status, SolveStatus::Optimal);
        prop_assert!((r.objective.unwrap() - best).abs() <= 1e-9 * best.max(1.0));
        prop_assert!(r.gap.unwrap() <= 1e-9);
        // Maximize: no incumbent may exceed the proven bound at any node.
        for line in r.trace.iter().filter(|l| l.starts_with("node=")) {
            let field = |k: &str| -> f64 {
                line.split_whitespace().find_map(|t| t.strip_prefix(k)).unwrap().parse().unwrap()
            };
            let (b, inc) = (field("bound="), field("incumbent="));
            if inc.is_finite() {
                prop_assert!(inc <= b + 1e-9 * b.abs().max(1.0), "{}", line);
            }
        }
    }
}

#[test]
fn integral_relaxation_solves_at_root() {
    let mut lp = program(2, &[(vec![1.0, 1.0], RowSense::Le, 1.0)], &[2.0, 1.0], Sense::Maximize, vec![0.0; 2], vec![1.0; 2]);
    lp.integer = vec![true; 2];
    let r = solve_milp(&lp, &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert_eq!(r.nodes, 1);
    assert_eq!(r.columns, vec![1.0, 0.0]);
}

fn weight(w1: f64) -> Option<WeightPair> {
    Some(WeightPair::from_w1(w1).unwrap())
}

#[test]
fn node_limit_reports_bound_and_gap() {
    let s = builtin_rajshahi();
    let p = build_problem(&s, YearType::Dry, ProblemKind::Sub2, weight(0.1)).unwrap();
    let prog = program_for(&p).unwrap();
    let r = solve_milp(&prog, &SolverOptions { node_limit: 1, ..SolverOptions::default() }).unwrap();
    assert_eq!(r.status, SolveStatus::IterationLimit);
    assert!(r.bound.is_some());
    if let (Some(obj), Some(b)) = (r.objective, r.bound) {
        // Minimize: the bound never exceeds a feasible value.
        assert!(b <= obj + 1e-9);
        assert!(r.gap.is_some());
    }
}

#[test]
fn model1_optimum_is_certified_and_tight() {
    let s = builtin_rajshahi();
    for y in YearType::ALL {
        let p = build_problem(&s, y, ProblemKind::Model1, None).unwrap();
        let r = solve_problem(&p, &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        let cert = r.certificate.as_ref().unwrap();
        assert!(cert.passed, "{:?}", cert.failures);
        assert!(cert.max_tightness_residual < 1e-8);
        assert_eq!(r.solver, SolverId::Simplex);
        let again = certify(&r, &p).unwrap();
        assert!(again.passed, "{:?}", again.failures);
    }
}

#[test]
fn tampered_pumping_auxiliary_fails_audit() {
    let s = builtin_rajshahi();
    let p = build_problem(&s, YearType::Dry, ProblemKind::Model1, None).unwrap();
    let mut r = solve_problem(&p, &SolverOptions::default()).unwrap();
    let slot = r.auxiliaries.iter_mut().find(|(t, _)| *t == ColumnTag::Aux(AuxKind::Pumping, 0)).unwrap();
    slot.1 += 1.0;
    let cert = certify(&r, &p).unwrap();
    assert!(!cert.passed);
    assert!(cert.failures.iter().any(|f| f.contains("auxiliary not tight")), "{:?}", cert.failures);
}

#[test]
fn tampered_objective_fails_audit() {
    let s = builtin_rajshahi();
    let p = build_problem(&s, YearType::Avg, ProblemKind::Model2, None).unwrap();
    let mut r = solve_problem(&p, &SolverOptions::default()).unwrap();
    r.program_objective = Some(r.program_objective.unwrap() + 1.0);
    assert!(!certify(&r, &p).unwrap().passed);
}

#[test]
fn subproblem_reports_satisfy_scalarization() {
    let s = builtin_rajshahi();
    let n = Normalization::from_anchors(2.4569e10, 0.0, 2.458e10, 141.92);
    for kind in [ProblemKind::Sub1, ProblemKind::Sub2] {
        for w1 in [0.2, 0.5, 0.8] {
            let p = build_problem(&s, YearType::Dry, kind, weight(w1)).unwrap().with_normalization(n);
            let r = solve_problem(&p, &SolverOptions::default()).unwrap();
            assert_eq!(r.status, SolveStatus::Optimal, "{kind} {w1} {:?}", r.message);
            let (nb, efd) = (r.nb.unwrap(), r.efd.unwrap());
            let res = p.scalarization_residual(nb, efd);
            assert!(res <= 1e-7 * p.scalarization_scale(nb, efd), "{kind} {w1}: {res}");
            let cert = r.certificate.unwrap();
            if kind == ProblemKind::Sub2 {
                assert!(cert.big_m_max_ratio.unwrap() < 1.0);
            }
        }
    }
}

#[test]
fn lexicographic_stage_keeps_primary_optimum() {
    let s = builtin_rajshahi();
    let p = build_problem(&s, YearType::Dry, ProblemKind::Model2, None).unwrap();
    let a = solve_problem(&p, &SolverOptions::default()).unwrap();
    let b = solve_problem(&p.clone().with_tie_break(vec![Objective::MaxNetBenefit]), &SolverOptions::default()).unwrap();
    assert!((a.efd.unwrap() - b.efd.unwrap()).abs() < 1e-9);
    assert!(b.nb.unwrap() >= a.nb.unwrap());
}

#[test]
fn exact_solves_are_deterministic() {
    let s = builtin_rajshahi();
    let p = build_problem(&s, YearType::Wet, ProblemKind::Sub2, weight(0.1)).unwrap();
    let a = solve_problem(&p, &SolverOptions::default()).unwrap().without_timing();
    let b = solve_problem(&p, &SolverOptions::default()).unwrap().without_timing();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn trace_lines_are_key_value() {
    let s = builtin_rajshahi();
    let p = build_problem(&s, YearType::Dry, ProblemKind::Model1, None).unwrap();
    let r = solve_problem(&p, &SolverOptions { trace: true, ..SolverOptions::default() }).unwrap();
    assert!(!r.trace.is_empty());
    for line in &r.trace {
        assert!(line.split_whitespace().all(|t| t.contains('=')), "{line}");
    }
}

#[test]
fn softplus_brackets_the_max() {
    for &x in &[-50.0, -1.0, -1e-3, 0.0, 1e-3, 1.0, 50.0, 1e6] {
        for &mu in &[1e-6, 1e-2, 1.0] {
            let v = softplus(x, mu);
            let m = f64::max(x, 0.0);
            assert!(v >= m && v <= m + mu * std::f64::consts::LN_2 + 1e-12, "x={x} mu={mu} v={v}");
        }
    }
}

#[test]
fn smoothed_objective_converges_to_exact() {
    let s = builtin_rajshahi();
    for kind in [ProblemKind::Model1, ProblemKind::Model2] {
        let p = build_problem(&s, YearType::Dry, kind, None).unwrap();
        let hy = s.year(YearType::Dry).unwrap();
        let mut d = DecisionVector::min_areas(&s);
        d.env_flow = std::array::from_fn(|m| 0.5 * hy.inflow[m]);
        let scale = hy.inflow.iter().sum::<f64>() / 12.0;
        let smooth = smoothed_objective(&p, &d, 1e-6 * scale).unwrap();
        let exact = match kind {
            ProblemKind::Model1 => eval_net_benefit(&s, YearType::Dry, &d, NetBenefitMode::Extended).unwrap(),
            _ => eval_efd(&s, YearType::Dry, &d).unwrap(),
        };
        assert!((smooth - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{kind}: {smooth} vs {exact}");
    }
}

#[test]
fn multistart_is_deterministic_and_best_of_monotone() {
    let s = builtin_rajshahi();
    let p = build_problem(&s, YearType::Dry, ProblemKind::Model1, None).unwrap();
    // An adversarial corner: every crop at its minimum, all flow reserved.
    let hy = s.year(YearType::Dry).unwrap();
    let mut corner = DecisionVector::min_areas(&s);
    corner.env_flow = hy.inflow;
    let one = MultistartConfig { n_starts: 0, initial: Some(vec![corner.clone()]), ..MultistartConfig::default() };
    let many = MultistartConfig { n_starts: 49, initial: Some(vec![corner]), ..MultistartConfig::default() };
    let r1 = solve_smoothed_multistart(&p, &one).unwrap();
    let r50 = solve_smoothed_multistart(&p, &many).unwrap();
    assert_eq!(r1.status, SolveStatus::LocalOnly);
    assert!(r50.nb.unwrap() >= r1.nb.unwrap());
    let again = solve_smoothed_multistart(&p, &many).unwrap();
    assert_eq!(
        serde_json::to_string(&r50.without_timing()).unwrap(),
        serde_json::to_string(&again.without_timing()).unwrap()
    );
}
