//! Property checks tying solver output to the optimality identities:
//! Riccati residuals, drift matching of the leader's decoupling field,
//! the follower's completed-square identity and cost certificate, the
//! leader's cost formula, and the jump-free degeneration.
//!
//! Monte Carlo comparisons use a band of `k·SE` plus a discretization
//! allowance built from `m(h)`, `m(h/2)`, `m(h/4)`: the exact expectations
//! of the Euler scheme at those steps, computed by moment propagation
//! without sampling. See [`Allowance`].

pub mod moments;

use nalgebra::{DMatrix, DVector};

use crate::equilibrium::{synthesize, FeedbackPair};
use crate::error::Result;
use crate::follower::{
    feedback_at_node, follower_cost_certificate, follower_riccati_rhs, solve_follower_isrde, solve_follower_phi,
    FollowerSolution,
};
use crate::integrators::GridFunction;
use crate::leader::{leader_optimal_cost, leader_rhs, solve_leader, CaseGains, LeaderCase, LeaderSolution};
use crate::linalg::{self, block2, max_abs, quad_form, vstack};
use crate::model::{CostSpec, JumpSpec, ModelSpec};
use crate::simulate::{estimate, run_ensemble, ClosedLoopSampler, FollowerPathSampler};
use moments::{euler_expected_cost, AffineStage, LinearClosedLoop, NoiseTerm};

/// Tolerances of the suite. Defaults: 3 standard errors, residual factor
/// 10 (bound `10·Δt²·(1 + ‖sol‖∞)`), agreement 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub se_multiplier: f64,
    pub residual_factor: f64,
    pub agreement: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            se_multiplier: 3.0,
            residual_factor: 10.0,
            agreement: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skipped => "skipped",
        }
    }

    fn of(ok: bool) -> Status {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

/// One test outcome: what was measured, against which band, and how to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub name: String,
    pub status: Status,
    /// Measured discrepancy (or residual).
    pub statistic: f64,
    /// Tolerance the statistic was held to.
    pub band: f64,
    pub se: f64,
    pub dt: f64,
    pub seed: Option<u64>,
    pub paths: usize,
    pub detail: String,
}

impl TestReport {
    fn deterministic(name: &str, statistic: f64, band: f64, dt: f64, detail: String) -> Self {
        TestReport {
            name: name.into(),
            status: Status::of(statistic <= band),
            statistic,
            band,
            se: 0.0,
            dt,
            seed: None,
            paths: 0,
            detail,
        }
    }

    fn skipped(name: &str, dt: f64, why: &str) -> Self {
        TestReport {
            name: name.into(),
            status: Status::Skipped,
            statistic: f64::NAN,
            band: f64::NAN,
            se: 0.0,
            dt,
            seed: None,
            paths: 0,
            detail: why.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// Centered-difference residual of a grid solution against its right side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    /// `max_i ‖(v[i+1] − v[i−1]) / 2Δt − rhs_i‖∞` over interior nodes.
    pub max_raw: f64,
    /// `max_raw / (1 + sup_i ‖v[i]‖∞)`.
    pub max_normalized: f64,
    pub worst_node: usize,
    pub scale: f64,
}

impl ResidualReport {
    fn empty() -> Self {
        ResidualReport {
            max_raw: 0.0,
            max_normalized: 0.0,
            worst_node: 0,
            scale: 1.0,
        }
    }
}

pub fn riccati_residual<F>(sol: &GridFunction<DMatrix<f64>>, mut rhs: F) -> Result<ResidualReport>
where
    F: FnMut(usize, &DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    let dt = sol.grid.dt();
    let v = &sol.values;
    let scale = 1.0 + v.iter().map(max_abs).fold(0.0, f64::max);
    let mut rep = ResidualReport { scale, ..ResidualReport::empty() };
    for i in 1..v.len().saturating_sub(1) {
        let fd = (&v[i + 1] - &v[i - 1]) / (2.0 * dt);
        let r = max_abs(&(fd - rhs(i, &v[i])?));
        if r > rep.max_raw {
            rep.max_raw = r;
            rep.worst_node = i;
        }
    }
    rep.max_normalized = rep.max_raw / scale;
    Ok(rep)
}

pub fn follower_residual(sol: &FollowerSolution) -> Result<ResidualReport> {
    riccati_residual(&sol.p, |i, p| {
        follower_riccati_rhs(&sol.model.snapshot_at_node(&sol.costs, i), p)
    })
}

pub fn leader_residual(sol: &LeaderSolution) -> Result<ResidualReport> {
    riccati_residual(&sol.pcal, |i, p| Ok(leader_rhs(p, &sol.aug[i], &sol.nodes[i])))
}

/// Drift matching of `𝒴 = 𝒫𝒳` and the identification of `(𝒵, 𝒦)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourStepReport {
    /// BSDE drift of `𝒴` against the Itô drift of `𝒫𝒳` with centered-difference
    /// `d𝒫/ds`, normalized by `1 + ‖𝒫‖∞`; interior nodes, basis probes.
    pub drift_residual: f64,
    /// Same with `d𝒫/ds` taken from the solved right side (pure algebra).
    pub algebraic_residual: f64,
    /// Residual of the linear system for `(𝒵, 𝒦)`, per unit probe.
    pub linear_system_residual: f64,
    /// `‖𝒵 − 𝒫 C_cl 𝒳‖` and `‖𝒦 − 𝒫 F_cl 𝒳‖`, per unit probe.
    pub martingale_residual: f64,
}

pub fn four_step_consistency(sol: &LeaderSolution) -> FourStepReport {
    let grid = sol.pcal.grid;
    let dt = grid.dt();
    let k = 2 * sol.n();
    let scale = 1.0 + sol.pcal.values.iter().map(max_abs).fold(0.0, f64::max);
    let mut rep = FourStepReport {
        drift_residual: 0.0,
        algebraic_residual: 0.0,
        linear_system_residual: 0.0,
        martingale_residual: 0.0,
    };
    for i in 0..grid.len() {
        let (p, aug, node) = (&sol.pcal.values[i], &sol.aug[i], &sol.nodes[i]);
        let dp_rhs = leader_rhs(p, aug, node);
        let dp_fd = (i > 0 && i + 1 < grid.len())
            .then(|| (&sol.pcal.values[i + 1] - &sol.pcal.values[i - 1]) / (2.0 * dt));
        for j in 0..k {
            let x = DVector::from_fn(k, |r, _| if r == j { 1.0 } else { 0.0 });
            let z = &node.zmap * &x;
            let kk: Vec<DVector<f64>> = node.kmap.iter().map(|m| m * &x).collect();
            let u = -(&node.k1 * &x);
            let px = p * &x;
            let mut bsde = aug.aa.transpose() * &px + &aug.qq * &x + aug.cc.transpose() * &z + aug.hh1.transpose() * &u;
            let mut fwd = &aug.aa * &x + &aug.bb2 * &px + &aug.hh_hat * &z + &aug.bb1 * &u;
            for (m, w) in aug.weights.iter().enumerate() {
                bsde += (aug.ff[m].transpose() * &kk[m] + aug.kk1[m].transpose() * &u) * *w;
                fwd += &aug.kk_hat[m] * &kk[m] * *w;
            }
            let bsde = -bsde;
            let ito_tail = p * &fwd;
            let alg = linalg::max_abs_vec(&(&dp_rhs * &x + &ito_tail - &bsde));
            rep.algebraic_residual = rep.algebraic_residual.max(alg / scale);
            if let Some(fd) = &dp_fd {
                let r = linalg::max_abs_vec(&(fd * &x + &ito_tail - &bsde));
                rep.drift_residual = rep.drift_residual.max(r / scale);
            }

            let lin = match &node.detail {
                CaseGains::CaseI(g) => {
                    let col = |v: DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
                    let lhs = g.assembled_a() * vstack(&col(z.clone()), &col(kk[0].clone()));
                    let rhs = vstack(
                        &col(&g.b11 * &x + &g.b12 * &u),
                        &col(&g.b21 * &x + &g.b22 * &u),
                    );
                    max_abs(&(lhs - rhs))
                }
                CaseGains::CaseII(_) => {
                    let id = DMatrix::<f64>::identity(k, k);
                    let mut r = linalg::max_abs_vec(
                        &((&id - p * &aug.hh_tilde) * &z
                            - (p * &aug.cc * &x + p * aug.hh_hat.transpose() * &px + p * &aug.dd1 * &u)),
                    );
                    for (m, km) in kk.iter().enumerate() {
                        r = r.max(linalg::max_abs_vec(&(km - (p * &aug.ff[m] * &x + p * &aug.gg1[m] * &u))));
                    }
                    r
                }
            };
            rep.linear_system_residual = rep.linear_system_residual.max(lin);
            let mut mart = linalg::max_abs_vec(&(&z - p * &node.c_cl * &x));
            for (m, km) in kk.iter().enumerate() {
                mart = mart.max(linalg::max_abs_vec(&(km - p * &node.f_cl[m] * &x)));
            }
            rep.martingale_residual = rep.martingale_residual.max(mart);
        }
    }
    rep
}

/// Deterministic leader control sampled on the grid.
pub fn constant_control(model: &ModelSpec, value: f64) -> GridFunction<DVector<f64>> {
    GridFunction {
        grid: model.grid,
        values: vec![DVector::from_element(model.m1, value); model.grid.len()],
    }
}

fn refine_control(u: &GridFunction<DVector<f64>>, factor: usize) -> GridFunction<DVector<f64>> {
    let fine = u.grid.refined(factor);
    GridFunction {
        grid: fine,
        values: fine.nodes().iter().map(|&s| u.eval(s)).collect(),
    }
}

fn trapezoid(dt: f64, v: &[f64]) -> f64 {
    v.windows(2).map(|w| 0.5 * dt * (w[0] + w[1])).sum()
}

/// Exact Euler-scheme expectation of the follower cost under `ū₂ + εv`
/// (pass `eps = 0` for `ū₂` itself) for a deterministic leader control.
pub fn follower_euler_cost(
    sol: &FollowerSolution,
    u1: &GridFunction<DVector<f64>>,
    phi: &GridFunction<DVector<f64>>,
    v: &[DVector<f64>],
    eps: f64,
) -> f64 {
    let (m, c) = (&sol.model, &sol.costs);
    let g = m.grid;
    let dt = g.dt();
    let w = m.weights();
    let stages: Vec<AffineStage> = (0..g.steps)
        .map(|i| {
            let snap = m.snapshot_at_node(c, i);
            let fb = feedback_at_node(sol, i);
            let u = &u1.values[i];
            let o = &fb.kf_b2 * &phi.values[i] + &fb.kf_s1 * u + &v[i] * eps;
            let kx = &fb.kx;
            let mut noise = vec![NoiseTerm {
                variance: dt,
                lin: &snap.c + &snap.d2 * kx,
                constant: &snap.d1 * u + &snap.d2 * &o,
            }];
            for (k, wk) in w.iter().enumerate() {
                noise.push(NoiseTerm {
                    variance: wk * dt,
                    lin: &snap.f[k] + &snap.g2[k] * kx,
                    constant: &snap.g1[k] * u + &snap.g2[k] * &o,
                });
            }
            let r2k = &snap.r2 * kx;
            AffineStage {
                drift: &snap.a + &snap.b2 * kx,
                drift_const: &snap.b1 * u + &snap.b2 * &o,
                noise,
                cost_w: &snap.q2 + kx.transpose() * &r2k,
                cost_lin: r2k.transpose() * &o,
                cost_const: quad_form(&snap.r2, &o),
            }
        })
        .collect();
    euler_expected_cost(&m.initial_state, dt, &stages, &c.m2)
}

/// Discretization allowance at step `h` and at `h/2`, from Richardson
/// extrapolation of the exact Euler expectations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allowance {
    pub at_h: f64,
    pub at_half: f64,
    /// Exact Euler expectations at `h`, `h/2`, `h/4`.
    pub euler: [f64; 3],
}

impl Allowance {
    pub fn shrink(&self) -> f64 {
        self.at_h / self.at_half
    }

    /// Bias of `m(h)` against the extrapolated limit `r₂ = 2m(h/4) − m(h/2)`,
    /// plus the spread `|r₁ − r₂|` of the two extrapolants (an O(h²) term,
    /// scaled by 1/4 at `h/2`).
    fn from_means(m: [f64; 3]) -> Self {
        let r1 = 2.0 * m[1] - m[0];
        let r2 = 2.0 * m[2] - m[1];
        let spread = (r1 - r2).abs();
        Allowance {
            at_h: (m[0] - r2).abs() + spread,
            at_half: (m[1] - r2).abs() + spread / 4.0,
            euler: m,
        }
    }
}

fn augmented_initial(model: &ModelSpec) -> DVector<f64> {
    let mut x = DVector::zeros(2 * model.n);
    x.rows_mut(0, model.n).copy_from(&model.initial_state);
    x
}

/// Closed-loop augmented dynamics with the chosen player's cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    Leader,
    Follower,
}

pub fn closed_loop_system(
    follower: &FollowerSolution,
    leader: &LeaderSolution,
    pair: &FeedbackPair,
    player: Player,
) -> LinearClosedLoop {
    let (model, costs) = (&follower.model, &follower.costs);
    let n = model.n;
    let zn = DMatrix::zeros(n, n);
    let w = (0..model.grid.len())
        .map(|i| {
            let snap = model.snapshot_at_node(costs, i);
            let (q, r, k) = match player {
                Player::Leader => (snap.q1, snap.r1, &pair.k1[i]),
                Player::Follower => (snap.q2, snap.r2, &pair.k2[i]),
            };
            block2(&q, &zn, &zn, &zn) + k.transpose() * r * k
        })
        .collect();
    let m = match player {
        Player::Leader => &costs.m1,
        Player::Follower => &costs.m2,
    };
    LinearClosedLoop {
        a: leader.nodes.iter().map(|l| l.a_cl.clone()).collect(),
        c: leader.nodes.iter().map(|l| l.c_cl.clone()).collect(),
        f: leader.nodes.iter().map(|l| l.f_cl.clone()).collect(),
        weights: leader.aug[0].weights.clone(),
        w,
        terminal: block2(m, &zn, &zn, &zn),
    }
}

/// Equilibrium cost of a player computed without sampling: the Lyapunov
/// equation of the closed loop.
pub fn equilibrium_cost_lyapunov(
    follower: &FollowerSolution,
    leader: &LeaderSolution,
    pair: &FeedbackPair,
    player: Player,
) -> Result<f64> {
    let sys = closed_loop_system(follower, leader, pair, player);
    sys.lyapunov_cost(&augmented_initial(&follower.model), &follower.model.grid)
}

/// Allowance for the closed-loop cost of `player` from solves at `h`, `h/2`, `h/4`.
pub fn closed_loop_allowance(model: &ModelSpec, costs: &CostSpec, case: LeaderCase, player: Player) -> Result<Allowance> {
    let mut m = [0.0; 3];
    for (j, factor) in [1usize, 2, 4].into_iter().enumerate() {
        let mf = model.refined(factor);
        let cf = costs.refined(&model.grid, factor);
        let f = solve_follower_isrde(&mf, &cf)?;
        let l = solve_leader(&f, case)?;
        let pair = synthesize(&f, &l);
        m[j] = closed_loop_system(&f, &l, &pair, player).euler_cost(&augmented_initial(&mf), mf.grid.dt());
    }
    Ok(Allowance::from_means(m))
}

/// Allowance for the follower cost under a deterministic leader control.
pub fn follower_allowance(model: &ModelSpec, costs: &CostSpec, u1: &GridFunction<DVector<f64>>) -> Result<Allowance> {
    let mut m = [0.0; 3];
    for (j, factor) in [1usize, 2, 4].into_iter().enumerate() {
        let mf = model.refined(factor);
        let cf = costs.refined(&model.grid, factor);
        let f = solve_follower_isrde(&mf, &cf)?;
        let uf = refine_control(u1, factor);
        let phi = solve_follower_phi(&f, &uf)?;
        let zero = vec![DVector::zeros(mf.m2); mf.grid.len()];
        m[j] = follower_euler_cost(&f, &uf, &phi, &zero, 0.0);
    }
    Ok(Allowance::from_means(m))
}

/// Allowance for the perturbation gap `J₂(ū₂ + εv) − J₂(ū₂)`.
pub fn perturbation_allowance(
    model: &ModelSpec,
    costs: &CostSpec,
    u1: &GridFunction<DVector<f64>>,
    v: &GridFunction<DVector<f64>>,
    eps: f64,
) -> Result<Allowance> {
    let mut m = [0.0; 3];
    for (j, factor) in [1usize, 2, 4].into_iter().enumerate() {
        let mf = model.refined(factor);
        let cf = costs.refined(&model.grid, factor);
        let f = solve_follower_isrde(&mf, &cf)?;
        let (uf, vf) = (refine_control(u1, factor), refine_control(v, factor));
        let phi = solve_follower_phi(&f, &uf)?;
        m[j] = follower_euler_cost(&f, &uf, &phi, &vf.values, eps) - follower_euler_cost(&f, &uf, &phi, &vf.values, 0.0);
    }
    Ok(Allowance::from_means(m))
}

/// Outcome of the follower perturbation identity run.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationOutcome {
    /// Band `k·SE + allowance`; the bare `k·SE` comparison can be rebuilt
    /// from the fields below.
    pub report: TestReport,
    pub allowance: Allowance,
    pub gap_eps: f64,
    pub se_eps: f64,
    pub gap_2eps: f64,
    pub se_2eps: f64,
    pub target: f64,
    pub ratio: f64,
}

/// Completed-square identity `ΔJ₂ = ε²∫|v|²_{R̂₂}ds` under common random
/// numbers, with `ε` and `2ε` evaluated on the same paths.
#[allow(clippy::too_many_arguments)]
pub fn follower_perturbation_test(
    sol: &FollowerSolution,
    u1: &GridFunction<DVector<f64>>,
    v: &GridFunction<DVector<f64>>,
    eps: f64,
    paths: usize,
    seed: u64,
    workers: usize,
    tol: &Tolerances,
) -> Result<PerturbationOutcome> {
    let phi = solve_follower_phi(sol, u1)?;
    let sampler = FollowerPathSampler::new(sol, u1, &phi);
    let g = sol.model.grid;
    let dt = g.dt();
    let diffs: Vec<(f64, f64)> = run_ensemble(paths, seed, workers, |rng, _| {
        let inc = sampler.sample_increments(rng);
        let base = sampler.path_cost(&inc, &v.values, 0.0).j2;
        (
            sampler.path_cost(&inc, &v.values, eps).j2 - base,
            sampler.path_cost(&inc, &v.values, 2.0 * eps).j2 - base,
        )
    });
    let e1 = estimate(&diffs.iter().map(|d| d.0).collect::<Vec<_>>(), seed);
    let e2 = estimate(&diffs.iter().map(|d| d.1).collect::<Vec<_>>(), seed);
    let integrand: Vec<f64> = (0..g.len())
        .map(|i| quad_form(&sol.nodes[i].gains.rhat2, &v.values[i]))
        .collect();
    let target = eps * eps * trapezoid(dt, &integrand);
    let allowance = perturbation_allowance(&sol.model, &sol.costs, u1, v, eps)?;
    let stat = (e1.mean - target).abs();
    let band = tol.se_multiplier * e1.se + allowance.at_h;
    let ratio = e2.mean / e1.mean;
    let ok = stat <= band && e1.mean >= -band && (3.5..=4.5).contains(&ratio);
    let report = TestReport {
        name: "follower_perturbation".into(),
        status: Status::of(ok || (eps == 0.0 && e1.mean == 0.0)),
        statistic: stat,
        band,
        se: e1.se,
        dt,
        seed: Some(seed),
        paths,
        detail: format!(
            "eps={eps} gap={:.6e} target={target:.6e} gap(2eps)={:.6e} ratio={ratio:.4} allowance={:.3e}",
            e1.mean, e2.mean, allowance.at_h
        ),
    };
    Ok(PerturbationOutcome {
        report,
        allowance,
        gap_eps: e1.mean,
        se_eps: e1.se,
        gap_2eps: e2.mean,
        se_2eps: e2.se,
        target,
        ratio,
    })
}

/// Monte Carlo comparison against an exact value with a discretization allowance.
#[derive(Debug, Clone, PartialEq)]
pub struct CostComparison {
    pub report: TestReport,
    pub formula: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub allowance: Allowance,
}

fn compare(name: &str, formula: f64, values: &[f64], seed: u64, dt: f64, allowance: Allowance, tol: &Tolerances) -> CostComparison {
    let e = estimate(values, seed);
    let stat = (e.mean - formula).abs();
    let band = tol.se_multiplier * e.se + allowance.at_h;
    CostComparison {
        report: TestReport {
            name: name.into(),
            status: Status::of(stat <= band),
            statistic: stat,
            band,
            se: e.se,
            dt,
            seed: Some(seed),
            paths: values.len(),
            detail: format!(
                "formula={formula:.8} mc={:.8} allowance={:.3e} allowance(h/2)={:.3e}",
                e.mean, allowance.at_h, allowance.at_half
            ),
        },
        formula,
        mc_mean: e.mean,
        mc_se: e.se,
        allowance,
    }
}

/// MC estimate of `J₁` under the equilibrium against `aᵀ𝒫₁₁(t0)a`.
pub fn leader_cost_test(
    follower: &FollowerSolution,
    leader: &LeaderSolution,
    pair: &FeedbackPair,
    paths: usize,
    seed: u64,
    workers: usize,
    tol: &Tolerances,
) -> Result<CostComparison> {
    let model = &follower.model;
    let sampler = ClosedLoopSampler::new(follower, leader, pair);
    let values = run_ensemble(paths, seed, workers, |rng, _| sampler.summarize(&sampler.sample_increments(rng)).j1);
    let allowance = closed_loop_allowance(model, &follower.costs, leader.case, Player::Leader)?;
    let formula = leader_optimal_cost(leader, &model.initial_state);
    Ok(compare("leader_cost", formula, &values, seed, model.grid.dt(), allowance, tol))
}

/// MC estimate of `J₂` under `ū₂` against the certificate, for a deterministic `u₁`.
pub fn follower_certificate_test(
    sol: &FollowerSolution,
    u1: &GridFunction<DVector<f64>>,
    paths: usize,
    seed: u64,
    workers: usize,
    tol: &Tolerances,
) -> Result<CostComparison> {
    let phi = solve_follower_phi(sol, u1)?;
    let sampler = FollowerPathSampler::new(sol, u1, &phi);
    let zero = vec![DVector::zeros(sol.model.m2); sol.model.grid.len()];
    let values = run_ensemble(paths, seed, workers, |rng, _| {
        sampler.path_cost(&sampler.sample_increments(rng), &zero, 0.0).j2
    });
    let cert = follower_cost_certificate(sol, u1, &phi, &sol.model.initial_state);
    let allowance = follower_allowance(&sol.model, &sol.costs, u1)?;
    Ok(compare("follower_certificate", cert, &values, seed, sol.model.grid.dt(), allowance, tol))
}

/// Jump-free degeneration: both leader backends agree, and neither solver
/// depends on the (now irrelevant) jump intensity.
pub fn degeneration_test(model: &ModelSpec, costs: &CostSpec, tol: &Tolerances) -> Result<TestReport> {
    let dt = model.grid.dt();
    if !model.is_jump_free() {
        return Ok(TestReport::skipped("degeneration", dt, "model has jump coefficients"));
    }
    let f = solve_follower_isrde(model, costs)?;
    let l1 = solve_leader(&f, LeaderCase::CaseI)?;
    let l2 = solve_leader(&f, LeaderCase::CaseII)?;
    let (p1, p2) = (synthesize(&f, &l1), synthesize(&f, &l2));
    let mut pcal_gap = 0.0_f64;
    let mut gain_gap = 0.0_f64;
    for i in 0..model.grid.len() {
        pcal_gap = pcal_gap.max(max_abs(&(&l1.pcal.values[i] - &l2.pcal.values[i])));
        gain_gap = gain_gap
            .max(max_abs(&(&p1.k1[i] - &p2.k1[i])))
            .max(max_abs(&(&p1.k2[i] - &p2.k2[i])));
    }
    // Doubling every mark weight must not move anything.
    let mut scaled = model.clone();
    scaled.jumps = match &model.jumps {
        JumpSpec::UnitJump { intensity } => JumpSpec::UnitJump { intensity: 2.0 * intensity },
        JumpSpec::FiniteMarks { marks, weights } => JumpSpec::FiniteMarks {
            marks: marks.clone(),
            weights: weights.iter().map(|w| 2.0 * w).collect(),
        },
    };
    let fs = solve_follower_isrde(&scaled, costs)?;
    let ls = solve_leader(&fs, LeaderCase::CaseII)?;
    let mut intensity_gap = 0.0_f64;
    for i in 0..model.grid.len() {
        intensity_gap = intensity_gap
            .max(max_abs(&(&fs.p.values[i] - &f.p.values[i])))
            .max(max_abs(&(&ls.pcal.values[i] - &l2.pcal.values[i])));
    }
    let stat = pcal_gap.max(gain_gap).max(intensity_gap);
    Ok(TestReport::deterministic(
        "degeneration",
        stat,
        tol.agreement,
        dt,
        format!("pcal_gap={pcal_gap:.3e} gain_gap={gain_gap:.3e} intensity_gap={intensity_gap:.3e}"),
    ))
}

/// Structural checks: `P` symmetric, `P ⪰ 0` under the definiteness
/// condition, `P(T) = M2`, `𝒫(T) = 𝕄₁`.
pub fn structural_test(follower: &FollowerSolution, leader: Option<&LeaderSolution>, follower_definite: bool) -> TestReport {
    let asym = follower.p.values.iter().map(linalg::asymmetry).fold(0.0, f64::max);
    let min_eig = follower.p.values.iter().map(linalg::min_eigenvalue_sym).fold(f64::INFINITY, f64::min);
    let p_terminal = *follower.p.last() == follower.costs.m2;
    let mut ok = asym <= 1e-10 && p_terminal && (!follower_definite || min_eig >= -1e-8);
    let mut detail = format!("asymmetry={asym:.3e} min_eig={min_eig:.6e} P(T)=M2:{p_terminal}");
    if let Some(l) = leader {
        let t = *l.pcal.last() == l.aug[l.aug.len() - 1].mm1;
        ok &= t;
        detail.push_str(&format!(" Pcal(T)=M1:{t}"));
    }
    TestReport {
        name: "structure".into(),
        status: Status::of(ok),
        statistic: asym,
        band: 1e-10,
        se: 0.0,
        dt: follower.model.grid.dt(),
        seed: None,
        paths: 0,
        detail,
    }
}

/// Settings of a full verification run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub paths: usize,
    pub seed: u64,
    pub workers: usize,
    pub eps: f64,
    /// Constant leader control used by the follower tests.
    pub u1_level: f64,
    /// Constant perturbation direction.
    pub v_level: f64,
    pub tol: Tolerances,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            paths: 10_000,
            seed: 20240611,
            workers: 0,
            eps: 0.1,
            u1_level: 1.0,
            v_level: 1.0,
            tol: Tolerances::default(),
        }
    }
}

/// Run every applicable test. `leader_case` is `None` when the leader
/// problem is ineligible; its tests are then reported as skipped.
pub fn run_suite(model: &ModelSpec, costs: &CostSpec, leader_case: Option<LeaderCase>, follower_definite: bool, opts: &SuiteOptions) -> Result<Vec<TestReport>> {
    let tol = &opts.tol;
    let dt = model.grid.dt();
    let res_band = tol.residual_factor * dt * dt;
    let mut out = Vec::new();
    let f = solve_follower_isrde(model, costs)?;
    let r = follower_residual(&f)?;
    out.push(TestReport::deterministic(
        "follower_riccati_residual",
        r.max_normalized,
        res_band,
        dt,
        format!("raw={:.3e} scale={:.4} node={}", r.max_raw, r.scale, r.worst_node),
    ));

    let leader = match leader_case {
        Some(case) => Some(solve_leader(&f, case)?),
        None => None,
    };
    out.push(structural_test(&f, leader.as_ref(), follower_definite));

    let u1 = constant_control(model, opts.u1_level);
    let v = GridFunction {
        grid: model.grid,
        values: vec![DVector::from_element(model.m2, opts.v_level); model.grid.len()],
    };
    out.push(follower_perturbation_test(&f, &u1, &v, opts.eps, opts.paths, opts.seed, opts.workers, tol)?.report);
    out.push(follower_certificate_test(&f, &u1, opts.paths, opts.seed.wrapping_add(1), opts.workers, tol)?.report);

    match &leader {
        Some(l) => {
            let r = leader_residual(l)?;
            out.push(TestReport::deterministic(
                "leader_riccati_residual",
                r.max_normalized,
                res_band,
                dt,
                format!("case={} raw={:.3e} scale={:.4} node={}", l.case.label(), r.max_raw, r.scale, r.worst_node),
            ));
            let fs = four_step_consistency(l);
            out.push(TestReport::deterministic(
                "four_step_drift",
                fs.drift_residual.max(fs.algebraic_residual),
                res_band,
                dt,
                format!("difference_quotient={:.3e} algebraic={:.3e}", fs.drift_residual, fs.algebraic_residual),
            ));
            let lin = fs.linear_system_residual.max(fs.martingale_residual);
            out.push(TestReport::deterministic(
                "four_step_linear_system",
                lin,
                tol.agreement,
                dt,
                format!("linear={:.3e} martingale={:.3e}", fs.linear_system_residual, fs.martingale_residual),
            ));
            let pair = synthesize(&f, l);
            out.push(leader_cost_test(&f, l, &pair, opts.paths, opts.seed.wrapping_add(2), opts.workers, tol)?.report);
        }
        None => {
            for name in ["leader_riccati_residual", "four_step_drift", "four_step_linear_system", "leader_cost"] {
                out.push(TestReport::skipped(name, dt, "leader ineligible"));
            }
        }
    }
    out.push(degeneration_test(model, costs, tol)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::follower::solve_follower_isrde;
    use crate::leader::{solve_leader_isrde_case1, solve_leader_isrde_case2};
    use crate::model::{reference, strip_jumps};

    #[test]
    fn residual_of_constant_and_closed_form() {
        let (m, c) = reference::scalar_riccati(1000);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let r = follower_residual(&f).unwrap();
        let dt = m.grid.dt();
        assert!(r.max_normalized <= 10.0 * dt * dt, "{r:?}");
        let constant = GridFunction { grid: m.grid, values: vec![DMatrix::from_element(1, 1, 3.0); 1001] };
        let z = riccati_residual(&constant, |_, p| Ok(p * 0.0)).unwrap();
        assert_eq!(z.max_raw, 0.0);
    }

    #[test]
    fn corrupted_node_is_detected() {
        let (m, c) = reference::scalar_riccati(1000);
        let mut f = solve_follower_isrde(&m, &c).unwrap();
        f.p.values[500][(0, 0)] += 0.1;
        let r = follower_residual(&f).unwrap();
        let dt = m.grid.dt();
        // The neighbours' centered differences each carry 0.1 / (2Δt).
        assert!(r.max_raw >= 0.05 / dt - 1.0, "{r:?}");
        assert!(r.worst_node == 499 || r.worst_node == 501);
    }

    #[test]
    fn leader_lyapunov_agrees_with_formula() {
        let cases = [
            (reference::case1(400), LeaderCase::CaseI),
            (reference::case2(400), LeaderCase::CaseII),
            (reference::two_state(400), LeaderCase::CaseI),
        ];
        for ((m, c), case) in cases {
            let f = solve_follower_isrde(&m, &c).unwrap();
            let l = solve_leader(&f, case).unwrap();
            let pair = synthesize(&f, &l);
            let lyap = equilibrium_cost_lyapunov(&f, &l, &pair, Player::Leader).unwrap();
            let formula = leader_optimal_cost(&l, &m.initial_state);
            assert!((lyap - formula).abs() < 1e-6 * (1.0 + formula.abs()), "{lyap} vs {formula}");
        }
    }

    #[test]
    fn four_step_residuals_small() {
        for (m, c) in [reference::case1(500), reference::two_state(500)] {
            let f = solve_follower_isrde(&m, &c).unwrap();
            let dt = m.grid.dt();
            let r = four_step_consistency(&solve_leader_isrde_case1(&f).unwrap());
            assert!(r.drift_residual <= 10.0 * dt * dt, "{r:?}");
            assert!(r.algebraic_residual < 1e-12, "{r:?}");
            assert!(r.linear_system_residual < 1e-8 && r.martingale_residual < 1e-8, "{r:?}");
        }
        let (m, c) = reference::case2(500);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let r = four_step_consistency(&solve_leader_isrde_case2(&f).unwrap());
        assert!(r.drift_residual <= 10.0 * m.grid.dt().powi(2), "{r:?}");
        assert!(r.linear_system_residual < 1e-8 && r.martingale_residual < 1e-8, "{r:?}");
    }

    #[test]
    fn four_step_zero_solution() {
        let (mut m, mut c) = reference::case2(50);
        c.q1 = crate::model::Coef::scalar(0.0);
        c.m1 = DMatrix::zeros(1, 1);
        m.b1 = crate::model::Coef::scalar(0.0);
        m.d1 = m.b1.clone();
        m.g1 = vec![m.b1.clone(), m.b1.clone()];
        let f = solve_follower_isrde(&m, &c).unwrap();
        let r = four_step_consistency(&solve_leader_isrde_case2(&f).unwrap());
        assert_eq!(r.drift_residual, 0.0);
        assert_eq!(r.linear_system_residual, 0.0);
    }

    #[test]
    fn jump_free_four_step_cases_agree() {
        let (m, c) = reference::two_state(200);
        let m = strip_jumps(&m);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let a = four_step_consistency(&solve_leader_isrde_case1(&f).unwrap());
        let b = four_step_consistency(&solve_leader_isrde_case2(&f).unwrap());
        assert!((a.drift_residual - b.drift_residual).abs() <= 1e-8);
    }

    #[test]
    fn certificate_is_limit_of_euler_expectation() {
        let (m, c) = reference::case1(200);
        let u1 = constant_control(&m, 1.0);
        let allow = follower_allowance(&m, &c, &u1).unwrap();
        let f = solve_follower_isrde(&m, &c).unwrap();
        let phi = solve_follower_phi(&f, &u1).unwrap();
        let cert = follower_cost_certificate(&f, &u1, &phi, &m.initial_state);
        let zero = vec![DVector::zeros(1); m.grid.len()];
        assert!((follower_euler_cost(&f, &u1, &phi, &zero, 0.0) - allow.euler[0]).abs() < 1e-14);
        // Richardson extrapolation of the Euler expectations to h → 0.
        let extrap = 2.0 * allow.euler[2] - allow.euler[1];
        assert!((extrap - cert).abs() < 1e-4, "{extrap} vs {cert}");
        assert!(allow.shrink() >= 1.5);
    }

    #[test]
    fn exact_euler_gap_tends_to_penalty() {
        let (m, c) = reference::case1(200);
        let u1 = constant_control(&m, 1.0);
        let allow = perturbation_allowance(&m, &c, &u1, &u1, 0.1).unwrap();
        let f = solve_follower_isrde(&m, &c).unwrap();
        let integrand: Vec<f64> = f.nodes.iter().map(|nd| nd.gains.rhat2[(0, 0)]).collect();
        let target = 0.01 * trapezoid(m.grid.dt(), &integrand);
        let extrap = 2.0 * allow.euler[2] - allow.euler[1];
        assert!((extrap - target).abs() < 1e-4 * target, "{extrap} vs {target}");
        assert!((extrap - target).abs() < (allow.euler[2] - target).abs());
        assert!(allow.shrink() >= 1.5);
    }

    #[test]
    fn degeneration_skips_models_with_jumps() {
        let (m, c) = reference::case1(50);
        let r = degeneration_test(&m, &c, &Tolerances::default()).unwrap();
        assert_eq!(r.status, Status::Skipped);
        let r = degeneration_test(&strip_jumps(&m), &c, &Tolerances::default()).unwrap();
        assert_eq!(r.status, Status::Pass, "{r:?}");
    }

    #[test]
    fn perturbation_zero_eps_is_exactly_zero() {
        let (m, c) = reference::case1(50);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let u1 = constant_control(&m, 1.0);
        let out = follower_perturbation_test(&f, &u1, &u1, 0.0, 50, 1, 1, &Tolerances::default()).unwrap();
        assert_eq!(out.gap_eps, 0.0);
        assert_eq!(out.report.status, Status::Pass);
    }
}
