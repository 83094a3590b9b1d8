use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stackelberg_core::config::{load_str, Format};
use stackelberg_core::equilibrium::{evaluate_controls, synthesize};
use stackelberg_core::follower::solve_follower_isrde;
use stackelberg_core::leader::{solve_leader, LeaderCase};
use stackelberg_core::linalg::{asymmetry, min_eigenvalue_sym};
use stackelberg_core::model::{strip_jumps, validate_model, Coef, CostSpec, JumpSpec, ModelSpec, TimeGrid};
use stackelberg_core::simulate::{estimate, run_ensemble, ClosedLoopSampler};

fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

fn psd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let l = mat(rng, n, n, 1.0);
    l.transpose() * l + DMatrix::identity(n, n) * shift
}

fn coef(rng: &mut ChaCha8Rng, grid: &TimeGrid, r: usize, c: usize, scale: f64) -> Coef {
    if rng.random_bool(0.3) {
        Coef::Nodes((0..grid.len()).map(|_| mat(rng, r, c, scale)).collect())
    } else {
        Coef::Const(mat(rng, r, c, scale))
    }
}

/// A random game with positive semidefinite weights. `case2_only` forces `G2 = 0`.
fn random_game(seed: u64, case2_only: bool) -> (ModelSpec, CostSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m1, m2) = (rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2));
    let grid = TimeGrid::new(0.0, rng.random_range(0.5..1.5), rng.random_range(20..50)).unwrap();
    let jumps = if rng.random_bool(0.5) {
        JumpSpec::UnitJump { intensity: rng.random_range(0.2..2.0) }
    } else {
        let k = rng.random_range(1..=3);
        JumpSpec::FiniteMarks {
            marks: (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(),
            weights: (0..k).map(|_| rng.random_range(0.1..1.0)).collect(),
        }
    };
    let k = jumps.mark_count();
    let mut m = ModelSpec::constant(n, m1, m2, jumps.clone(), grid);
    m.a = coef(&mut rng, &grid, n, n, 0.5);
    m.b1 = coef(&mut rng, &grid, n, m1, 0.5);
    m.b2 = coef(&mut rng, &grid, n, m2, 1.0);
    m.c = coef(&mut rng, &grid, n, n, 0.3);
    m.d1 = coef(&mut rng, &grid, n, m1, 0.2);
    m.d2 = coef(&mut rng, &grid, n, m2, 0.2);
    m.f = (0..k).map(|_| coef(&mut rng, &grid, n, n, 0.3)).collect();
    m.g1 = (0..k).map(|_| coef(&mut rng, &grid, n, m1, 0.2)).collect();
    let g2_zero = case2_only && !jumps.is_unit_jump();
    m.g2 = (0..k)
        .map(|_| if g2_zero { Coef::zeros(n, m2) } else { coef(&mut rng, &grid, n, m2, 0.2) })
        .collect();
    m.initial_state = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let costs = CostSpec {
        q1: Coef::Const(psd(&mut rng, n, 0.0)),
        q2: Coef::Const(psd(&mut rng, n, 0.0)),
        r1: Coef::Const(psd(&mut rng, m1, 0.5)),
        r2: Coef::Const(psd(&mut rng, m2, 0.5)),
        m1: psd(&mut rng, n, 0.0),
        m2: psd(&mut rng, n, 0.0),
    };
    (m, costs)
}

fn case_for(m: &ModelSpec) -> LeaderCase {
    if m.case1_eligible() {
        LeaderCase::CaseI
    } else {
        LeaderCase::CaseII
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn validation_is_pure(seed in any::<u64>()) {
        let (m, c) = random_game(seed, false);
        let before = (m.clone(), c.clone());
        let a = validate_model(&m, &c);
        let b = validate_model(&m, &c);
        prop_assert_eq!(&a, &b);
        prop_assert!(a.accepted());
        prop_assert_eq!((m, c), before);
    }

    #[test]
    fn strip_is_idempotent(seed in any::<u64>()) {
        let (m, _) = random_game(seed, false);
        let once = strip_jumps(&m);
        prop_assert_eq!(strip_jumps(&once), once.clone());
        prop_assert!(once.is_jump_free());
        prop_assert_eq!(once.jumps, m.jumps);
    }

    #[test]
    fn coefficients_finite_with_declared_shapes(seed in any::<u64>(), frac in 0.0f64..=1.0) {
        let (m, c) = random_game(seed, false);
        let g = m.grid;
        let s = g.t0 + frac * (g.t_end - g.t0);
        let snap = m.snapshot(&c, s);
        let (n, m1, m2) = (m.n, m.m1, m.m2);
        for (x, shape) in [(&snap.a, (n, n)), (&snap.b1, (n, m1)), (&snap.b2, (n, m2)), (&snap.c, (n, n)),
                           (&snap.d1, (n, m1)), (&snap.d2, (n, m2)), (&snap.q1, (n, n)), (&snap.r2, (m2, m2))] {
            prop_assert_eq!(x.shape(), shape);
            prop_assert!(x.iter().all(|v| v.is_finite()));
        }
        prop_assert_eq!(snap.f.len(), m.jumps.mark_count());
    }

    #[test]
    fn follower_symmetric_and_semidefinite(seed in any::<u64>()) {
        let (m, c) = random_game(seed, false);
        let f = solve_follower_isrde(&m, &c).unwrap();
        for p in &f.p.values {
            prop_assert!(asymmetry(p) <= 1e-10);
            prop_assert!(min_eigenvalue_sym(p) >= -1e-8);
        }
        prop_assert_eq!(f.p.last(), &c.m2);
    }

    #[test]
    fn leader_terminal_and_homogeneous_controls(seed in any::<u64>(), scale in -3.0f64..3.0, frac in 0.0f64..1.0) {
        let (m, c) = random_game(seed, true);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let l = solve_leader(&f, case_for(&m)).unwrap();
        let n = m.n;
        let mut mm1 = DMatrix::zeros(2 * n, 2 * n);
        mm1.view_mut((0, 0), (n, n)).copy_from(&c.m1);
        prop_assert_eq!(l.pcal.last(), &mm1);
        let pair = synthesize(&f, &l);
        let s = m.grid.t0 + frac * (m.grid.t_end - m.grid.t0);
        let x = DVector::from_fn(2 * n, |i, _| 0.3 * i as f64 - 0.4);
        let (u1, u2) = evaluate_controls(&pair, s, &x);
        let (v1, v2) = evaluate_controls(&pair, s, &(&x * scale));
        let tol = 1e-12 * (1.0 + u1.amax() + u2.amax()) * (1.0 + scale.abs());
        prop_assert!((v1 - u1 * scale).amax() <= tol);
        prop_assert!((v2 - u2 * scale).amax() <= tol);
    }

    #[test]
    fn jump_free_cases_coincide(seed in any::<u64>()) {
        let (m, c) = random_game(seed, false);
        let m = strip_jumps(&m);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let a = synthesize(&f, &solve_leader(&f, LeaderCase::CaseI).unwrap());
        let b = synthesize(&f, &solve_leader(&f, LeaderCase::CaseII).unwrap());
        for i in 0..m.grid.len() {
            prop_assert!((&a.k1[i] - &b.k1[i]).amax() <= 1e-8);
            prop_assert!((&a.k2[i] - &b.k2[i]).amax() <= 1e-8);
        }
    }

    #[test]
    fn matrices_read_row_major(rows in 1usize..4, cols in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = mat(&mut rng, rows, cols, 5.0);
        let flat: Vec<f64> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|rc| b1[rc]).collect();
        let doc = serde_json::json!({
            "dimensions": {"n": rows, "m1": cols, "m2": 1},
            "grid": {"T": 1.0, "steps": 4},
            "jumps": {"type": "unit", "intensity": 1.0},
            "dynamics": {"B1": flat},
            "costs": {"R1": DMatrix::<f64>::identity(cols, cols).as_slice(), "R2": [1.0]},
            "initial_state": vec![0.0; rows],
        });
        let cfg = load_str(&doc.to_string(), Format::Json).unwrap();
        prop_assert_eq!(cfg.model.b1, Coef::Const(b1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ensembles_ignore_worker_count(seed in any::<u64>(), base in any::<u64>()) {
        let (m, c) = random_game(seed, true);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let l = solve_leader(&f, case_for(&m)).unwrap();
        let pair = synthesize(&f, &l);
        let sampler = ClosedLoopSampler::new(&f, &l, &pair);
        let run = |w| run_ensemble(64, base, w, |rng, _| sampler.summarize(&sampler.sample_increments(rng)));
        let one = run(1);
        prop_assert_eq!(&one, &run(3));
        let j1: Vec<f64> = one.iter().map(|p| p.j1).collect();
        let e = estimate(&j1, base);
        prop_assert_eq!(e.mean.to_bits(), estimate(&j1, base).mean.to_bits());
    }
}
