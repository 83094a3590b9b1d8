//! Euler–Maruyama simulation of the controlled jump diffusion with
//! per-step Poisson counts, pathwise costs, and reproducible parallel
//! Monte Carlo.
//!
//! Path `i` of a run with base seed `b` draws from a ChaCha8 stream
//! seeded with `b` on stream `i`, so every path is a pure function of
//! `(b, i)` and the worker count never changes the output.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::equilibrium::FeedbackPair;
use crate::follower::{feedback_at_node, FollowerSolution};
use crate::integrators::GridFunction;
use crate::leader::LeaderSolution;
use crate::linalg::quad_form;
use crate::model::{CostSpec, ModelSpec, TimeGrid};

/// Driving noise of one path: `db[i] ~ N(0, Δt)`, `dn[i][k] ~ Poisson(w_k Δt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    pub db: Vec<f64>,
    pub dn: Vec<Vec<u32>>,
}

impl Increments {
    pub fn jump_counts(&self) -> Vec<u64> {
        let k = self.dn.first().map_or(0, |r| r.len());
        let mut out = vec![0u64; k];
        for row in &self.dn {
            for (o, c) in out.iter_mut().zip(row) {
                *o += u64::from(*c);
            }
        }
        out
    }
}

pub fn path_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

pub fn sample_increments<R: Rng>(rng: &mut R, grid: &TimeGrid, weights: &[f64]) -> Increments {
    let dt = grid.dt();
    let sd = dt.sqrt();
    let poisson: Vec<Poisson<f64>> = weights
        .iter()
        .map(|w| Poisson::new(w * dt).expect("positive jump weight"))
        .collect();
    let mut db = Vec::with_capacity(grid.steps);
    let mut dn = Vec::with_capacity(grid.steps);
    for _ in 0..grid.steps {
        let z: f64 = StandardNormal.sample(rng);
        db.push(sd * z);
        dn.push(poisson.iter().map(|p| p.sample(rng) as u32).collect());
    }
    Increments { db, dn }
}

/// A simulated path with its controls and accumulated costs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub u1: Vec<DVector<f64>>,
    pub u2: Vec<DVector<f64>>,
    pub increments: Increments,
    pub running: [f64; 2],
    pub terminal: [f64; 2],
    /// Set when a non-finite state stopped the path early.
    pub aborted: Option<String>,
}

impl SimulatedPath {
    pub fn j1(&self) -> f64 {
        self.running[0] + self.terminal[0]
    }
    pub fn j2(&self) -> f64 {
        self.running[1] + self.terminal[1]
    }
}

/// Left-rectangle costs `Σ Δt (|x|²_Q + |u|²_R) + |x(T)|²_M` of a stored
/// path; `x` is the first `n` components of the stored state.
pub fn accumulate_costs(path: &SimulatedPath, model: &ModelSpec, costs: &CostSpec) -> (f64, f64) {
    let grid = model.grid;
    let n = model.n;
    let dt = grid.dt();
    let last = path.states.len() - 1;
    let mut j = [0.0, 0.0];
    for i in 0..last.min(grid.steps) {
        let x = path.states[i].rows(0, n).into_owned();
        let snap = model.snapshot_at_node(costs, i);
        j[0] += dt * (quad_form(&snap.q1, &x) + quad_form(&snap.r1, &path.u1[i]));
        j[1] += dt * (quad_form(&snap.q2, &x) + quad_form(&snap.r2, &path.u2[i]));
    }
    let xt = path.states[last].rows(0, n).into_owned();
    (j[0] + quad_form(&costs.m1, &xt), j[1] + quad_form(&costs.m2, &xt))
}

/// Per-node cost weights.
#[derive(Debug, Clone)]
struct CostTables {
    q1: Vec<DMatrix<f64>>,
    q2: Vec<DMatrix<f64>>,
    r1: Vec<DMatrix<f64>>,
    r2: Vec<DMatrix<f64>>,
    m1: DMatrix<f64>,
    m2: DMatrix<f64>,
}

impl CostTables {
    fn new(model: &ModelSpec, costs: &CostSpec) -> Self {
        let g = model.grid;
        let at = |c: &crate::model::Coef| (0..g.len()).map(|i| c.at_node(i)).collect();
        CostTables {
            q1: at(&costs.q1),
            q2: at(&costs.q2),
            r1: at(&costs.r1),
            r2: at(&costs.r2),
            m1: costs.m1.clone(),
            m2: costs.m2.clone(),
        }
    }
}

/// Reusable buffer for quadratic forms.
#[derive(Default)]
struct Scratch {
    buf: DVector<f64>,
}

impl Scratch {
    fn quad<S>(&mut self, w: &DMatrix<f64>, x: &nalgebra::Matrix<f64, nalgebra::Dyn, nalgebra::U1, S>) -> f64
    where
        S: nalgebra::Storage<f64, nalgebra::Dyn, nalgebra::U1>,
    {
        if self.buf.len() != w.nrows() {
            self.buf = DVector::zeros(w.nrows());
        }
        self.buf.gemv(1.0, w, x, 0.0);
        x.dot(&self.buf)
    }
}

/// Coefficients of the original dynamics sampled at every node.
#[derive(Debug, Clone)]
struct DynamicsTables {
    a: Vec<DMatrix<f64>>,
    b1: Vec<DMatrix<f64>>,
    b2: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
    d1: Vec<DMatrix<f64>>,
    d2: Vec<DMatrix<f64>>,
    f: Vec<Vec<DMatrix<f64>>>,
    g1: Vec<Vec<DMatrix<f64>>>,
    g2: Vec<Vec<DMatrix<f64>>>,
}

impl DynamicsTables {
    fn new(model: &ModelSpec) -> Self {
        let g = model.grid;
        let at = |c: &crate::model::Coef| (0..g.len()).map(|i| c.at_node(i)).collect::<Vec<_>>();
        let marks = |cs: &[crate::model::Coef]| (0..g.len()).map(|i| cs.iter().map(|c| c.at_node(i)).collect()).collect();
        DynamicsTables {
            a: at(&model.a),
            b1: at(&model.b1),
            b2: at(&model.b2),
            c: at(&model.c),
            d1: at(&model.d1),
            d2: at(&model.d2),
            f: marks(&model.f),
            g1: marks(&model.g1),
            g2: marks(&model.g2),
        }
    }
}

/// Summary of one path when full trajectories are not needed.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    pub j1: f64,
    pub j2: f64,
    pub jumps: Vec<u64>,
    pub aborted: bool,
}

/// Closed-loop augmented dynamics `dX = Â X ds + Ĉ X dB + Σ F̂ X dÑ` with
/// the equilibrium gains, ready to sample.
#[derive(Debug, Clone)]
pub struct ClosedLoopSampler {
    pub grid: TimeGrid,
    pub n: usize,
    a: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
    f: Vec<Vec<DMatrix<f64>>>,
    dyn_weights: Vec<f64>,
    noise_weights: Vec<f64>,
    k1: Vec<DMatrix<f64>>,
    k2: Vec<DMatrix<f64>>,
    costs: CostTables,
    initial: DVector<f64>,
}

impl ClosedLoopSampler {
    pub fn new(follower: &FollowerSolution, leader: &LeaderSolution, pair: &FeedbackPair) -> Self {
        let model = &follower.model;
        let n = model.n;
        let mut initial = DVector::zeros(2 * n);
        initial.rows_mut(0, n).copy_from(&model.initial_state);
        ClosedLoopSampler {
            grid: model.grid,
            n,
            a: leader.nodes.iter().map(|l| l.a_cl.clone()).collect(),
            c: leader.nodes.iter().map(|l| l.c_cl.clone()).collect(),
            f: leader.nodes.iter().map(|l| l.f_cl.clone()).collect(),
            dyn_weights: leader.aug[0].weights.clone(),
            noise_weights: model.weights(),
            k1: pair.k1.clone(),
            k2: pair.k2.clone(),
            costs: CostTables::new(model, &follower.costs),
            initial,
        }
    }

    /// Replace the initial augmented state `[a; 0]` with `[a'; 0]`.
    pub fn with_initial_state(mut self, a: &DVector<f64>) -> Self {
        self.initial.fill(0.0);
        self.initial.rows_mut(0, self.n).copy_from(a);
        self
    }

    pub fn sample_increments<R: Rng>(&self, rng: &mut R) -> Increments {
        sample_increments(rng, &self.grid, &self.noise_weights)
    }

    /// Compensated jump increments in the dynamics' mark layout.
    fn jump_terms(&self, counts: &[u32], dt: f64, out: &mut [f64]) {
        if self.dyn_weights.len() == counts.len() {
            for ((o, c), w) in out.iter_mut().zip(counts).zip(&self.dyn_weights) {
                *o = f64::from(*c) - w * dt;
            }
        } else {
            let total: u32 = counts.iter().sum();
            out[0] = f64::from(total) - self.dyn_weights[0] * dt;
        }
    }

    /// Run the Euler scheme on given increments.
    pub fn replay(&self, inc: &Increments) -> SimulatedPath {
        self.run(inc, true).1.expect("trajectory requested")
    }

    fn run(&self, inc: &Increments, keep: bool) -> (PathSummary, Option<SimulatedPath>) {
        let (n, dt) = (self.n, self.grid.dt());
        let steps = self.grid.steps;
        let mut x = self.initial.clone();
        let mut next = x.clone();
        let mut u1 = DVector::zeros(self.k1[0].nrows());
        let mut u2 = DVector::zeros(self.k2[0].nrows());
        let mut scratch = Scratch::default();
        let mut states = Vec::new();
        let mut u1s = Vec::new();
        let mut u2s = Vec::new();
        let mut running = [0.0, 0.0];
        let mut aborted = None;
        let mut jumps = vec![0.0; self.dyn_weights.len()];
        for i in 0..=steps {
            u1.gemv(-1.0, &self.k1[i], &x, 0.0);
            u2.gemv(-1.0, &self.k2[i], &x, 0.0);
            if keep {
                states.push(x.clone());
                u1s.push(u1.clone());
                u2s.push(u2.clone());
            }
            if i == steps {
                break;
            }
            let xs = x.rows(0, n);
            running[0] += dt * (scratch.quad(&self.costs.q1[i], &xs) + scratch.quad(&self.costs.r1[i], &u1));
            running[1] += dt * (scratch.quad(&self.costs.q2[i], &xs) + scratch.quad(&self.costs.r2[i], &u2));
            next.copy_from(&x);
            next.gemv(dt, &self.a[i], &x, 1.0);
            next.gemv(inc.db[i], &self.c[i], &x, 1.0);
            self.jump_terms(&inc.dn[i], dt, &mut jumps);
            for (j, d) in jumps.iter().enumerate() {
                if *d != 0.0 {
                    next.gemv(*d, &self.f[i][j], &x, 1.0);
                }
            }
            if !next.iter().all(|v| v.is_finite()) {
                aborted = Some(format!("non-finite state at step {}", i + 1));
                break;
            }
            std::mem::swap(&mut x, &mut next);
        }
        let xt = x.rows(0, n);
        let terminal = [scratch.quad(&self.costs.m1, &xt), scratch.quad(&self.costs.m2, &xt)];
        let summary = PathSummary {
            j1: running[0] + terminal[0],
            j2: running[1] + terminal[1],
            jumps: inc.jump_counts(),
            aborted: aborted.is_some(),
        };
        let path = keep.then(|| SimulatedPath {
            times: self.grid.nodes()[..states.len()].to_vec(),
            states,
            u1: u1s,
            u2: u2s,
            increments: inc.clone(),
            running,
            terminal,
            aborted,
        });
        (summary, path)
    }

    pub fn summarize(&self, inc: &Increments) -> PathSummary {
        self.run(inc, false).0
    }
}

/// One closed-loop path for `(base_seed, index)`.
pub fn sample_closed_loop_path(sampler: &ClosedLoopSampler, base_seed: u64, index: u64) -> SimulatedPath {
    let inc = sampler.sample_increments(&mut path_rng(base_seed, index));
    sampler.replay(&inc)
}

/// Euler scheme of the original n-dimensional dynamics under given control
/// sequences (one per node), on given increments.
pub fn sample_controlled_path(
    model: &ModelSpec,
    costs: &CostSpec,
    inc: &Increments,
    u1: &[DVector<f64>],
    u2: &[DVector<f64>],
) -> SimulatedPath {
    let grid = model.grid;
    let dt = grid.dt();
    let w = model.weights();
    let mut x = model.initial_state.clone();
    let mut states = vec![x.clone()];
    for i in 0..grid.steps {
        let (a, b1, b2) = (model.a.at_node(i), model.b1.at_node(i), model.b2.at_node(i));
        let (c, d1, d2) = (model.c.at_node(i), model.d1.at_node(i), model.d2.at_node(i));
        let mut next = &x + (&a * &x + &b1 * &u1[i] + &b2 * &u2[i]) * dt
            + (&c * &x + &d1 * &u1[i] + &d2 * &u2[i]) * inc.db[i];
        for (k, wk) in w.iter().enumerate() {
            let d = f64::from(inc.dn[i][k]) - wk * dt;
            next += (model.f[k].at_node(i) * &x + model.g1[k].at_node(i) * &u1[i] + model.g2[k].at_node(i) * &u2[i]) * d;
        }
        x = next;
        states.push(x.clone());
    }
    let mut path = SimulatedPath {
        times: grid.nodes(),
        states,
        u1: u1.to_vec(),
        u2: u2.to_vec(),
        increments: inc.clone(),
        running: [0.0; 2],
        terminal: [0.0; 2],
        aborted: None,
    };
    let (j1, j2) = accumulate_costs(&path, model, costs);
    let xt = path.states[grid.steps].clone();
    path.terminal = [quad_form(&costs.m1, &xt), quad_form(&costs.m2, &xt)];
    path.running = [j1 - path.terminal[0], j2 - path.terminal[1]];
    path
}

/// Follower dynamics under `u₂ = ū₂(x) + εv` for a deterministic leader control.
#[derive(Debug, Clone)]
pub struct FollowerPathSampler {
    grid: TimeGrid,
    model: ModelSpec,
    /// `x` multiplier of `ū₂`.
    kx: Vec<DMatrix<f64>>,
    /// Open-loop part `−R̂₂⁻¹(B2ᵀφ + Ŝ₁u₁)` of `ū₂`.
    offset: Vec<DVector<f64>>,
    u1: Vec<DVector<f64>>,
    rhat2: Vec<DMatrix<f64>>,
    costs: CostTables,
    dynamics: DynamicsTables,
}

/// Outcome of one follower path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerPathCost {
    pub j2: f64,
    /// `Σ Δt |εv|²_{R̂₂}` on the same grid.
    pub penalty: f64,
}

impl FollowerPathSampler {
    pub fn new(
        follower: &FollowerSolution,
        u1: &GridFunction<DVector<f64>>,
        phi: &GridFunction<DVector<f64>>,
    ) -> Self {
        let model = follower.model.clone();
        let g = model.grid;
        let mut kx = Vec::with_capacity(g.len());
        let mut offset = Vec::with_capacity(g.len());
        for i in 0..g.len() {
            let fb = feedback_at_node(follower, i);
            offset.push(&fb.kf_b2 * &phi.values[i] + &fb.kf_s1 * &u1.values[i]);
            kx.push(fb.kx);
        }
        FollowerPathSampler {
            grid: g,
            kx,
            offset,
            u1: u1.values.clone(),
            rhat2: follower.nodes.iter().map(|nd| nd.gains.rhat2.clone()).collect(),
            costs: CostTables::new(&model, &follower.costs),
            dynamics: DynamicsTables::new(&model),
            model,
        }
    }

    pub fn sample_increments<R: Rng>(&self, rng: &mut R) -> Increments {
        sample_increments(rng, &self.grid, &self.model.weights())
    }

    /// Follower cost of the path driven by `inc` with `u₂ = ū₂ + εv`.
    pub fn path_cost(&self, inc: &Increments, v: &[DVector<f64>], eps: f64) -> FollowerPathCost {
        self.simulate(inc, v, eps, false).0
    }

    pub fn sample_follower_perturbed_path(&self, inc: &Increments, v: &[DVector<f64>], eps: f64) -> SimulatedPath {
        self.simulate(inc, v, eps, true).1.expect("trajectory requested")
    }

    fn simulate(&self, inc: &Increments, v: &[DVector<f64>], eps: f64, keep: bool) -> (FollowerPathCost, Option<SimulatedPath>) {
        let (m, t) = (&self.model, &self.dynamics);
        let dt = self.grid.dt();
        let w = m.weights();
        let mut x = m.initial_state.clone();
        let mut next = x.clone();
        let mut u2 = DVector::zeros(m.m2);
        let mut scratch = Scratch::default();
        let (mut j2, mut penalty) = (0.0, 0.0);
        let mut states = Vec::new();
        let mut u2s = Vec::new();
        for i in 0..=self.grid.steps {
            u2.copy_from(&self.offset[i]);
            u2.gemv(1.0, &self.kx[i], &x, 1.0);
            if eps != 0.0 {
                u2.axpy(eps, &v[i], 1.0);
            }
            if keep {
                states.push(x.clone());
                u2s.push(u2.clone());
            }
            if i == self.grid.steps {
                break;
            }
            let u1 = &self.u1[i];
            j2 += dt * (scratch.quad(&self.costs.q2[i], &x) + scratch.quad(&self.costs.r2[i], &u2));
            if eps != 0.0 {
                penalty += dt * eps * eps * scratch.quad(&self.rhat2[i], &v[i]);
            }
            next.copy_from(&x);
            let db = inc.db[i];
            next.gemv(dt, &t.a[i], &x, 1.0);
            next.gemv(dt, &t.b1[i], u1, 1.0);
            next.gemv(dt, &t.b2[i], &u2, 1.0);
            next.gemv(db, &t.c[i], &x, 1.0);
            next.gemv(db, &t.d1[i], u1, 1.0);
            next.gemv(db, &t.d2[i], &u2, 1.0);
            for (k, wk) in w.iter().enumerate() {
                let d = f64::from(inc.dn[i][k]) - wk * dt;
                next.gemv(d, &t.f[i][k], &x, 1.0);
                next.gemv(d, &t.g1[i][k], u1, 1.0);
                next.gemv(d, &t.g2[i][k], &u2, 1.0);
            }
            std::mem::swap(&mut x, &mut next);
        }
        let term = scratch.quad(&self.costs.m2, &x);
        j2 += term;
        let path = keep.then(|| SimulatedPath {
            times: self.grid.nodes(),
            states,
            u1: self.u1.clone(),
            u2: u2s,
            increments: inc.clone(),
            running: [0.0, j2 - term],
            terminal: [0.0, term],
            aborted: None,
        });
        (FollowerPathCost { j2, penalty }, path)
    }
}

/// Mean and standard error of a Monte Carlo sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
    pub seed: u64,
}

/// Welford accumulation in index order.
pub fn estimate(values: &[f64], seed: u64) -> MonteCarloEstimate {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, x) in values.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    let count = values.len();
    let var = if count > 1 { m2 / (count - 1) as f64 } else { 0.0 };
    MonteCarloEstimate {
        mean,
        se: (var / count.max(1) as f64).sqrt(),
        count,
        seed,
    }
}

/// Evaluate `f(rng_i, i)` for `i in 0..count` on `workers` threads
/// (0 = rayon default); results come back in index order.
pub fn run_ensemble<T, F>(count: usize, base_seed: u64, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync + Send,
{
    let job = || {
        (0..count)
            .into_par_iter()
            .map(|i| f(&mut path_rng(base_seed, i as u64), i))
            .collect()
    };
    if workers == 0 {
        job()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool")
            .install(job)
    }
}

/// Monte Carlo mean of a scalar sampler over `count ≥ 2` reproducible draws.
pub fn monte_carlo<F>(sampler: F, count: usize, base_seed: u64) -> MonteCarloEstimate
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync + Send,
{
    assert!(count >= 2, "monte carlo needs at least two samples");
    let values = run_ensemble(count, base_seed, 0, |rng, _| sampler(rng));
    estimate(&values, base_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::synthesize;
    use crate::follower::{solve_follower_isrde, solve_follower_phi};
    use crate::leader::solve_leader_isrde_case1;
    use crate::model::{reference, Coef, JumpSpec};

    #[test]
    fn constant_and_normal_samplers() {
        let e = monte_carlo(|_| 5.0, 100, 1);
        assert_eq!((e.mean, e.se), (5.0, 0.0));
        let draw = |r: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(r) };
        let a = monte_carlo(draw, 10_000, 7);
        let b = monte_carlo(draw, 10_000, 7);
        assert_eq!(a, b);
        assert!(a.mean.abs() <= 0.03, "{}", a.mean);
        assert!((a.se - 0.01).abs() < 0.001);
    }

    #[test]
    fn ensemble_independent_of_workers() {
        let f = |r: &mut ChaCha8Rng, i: usize| r.random::<f64>() + i as f64;
        let a = run_ensemble(257, 3, 1, f);
        let b = run_ensemble(257, 3, 4, f);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_dynamics_constant_path() {
        let (mut m, c) = reference::case1(50);
        for coef in [&mut m.a, &mut m.b1, &mut m.b2, &mut m.c, &mut m.d1, &mut m.d2] {
            *coef = Coef::scalar(0.0);
        }
        m.f = vec![Coef::scalar(0.0)];
        m.g1 = m.f.clone();
        m.g2 = m.f.clone();
        let f = solve_follower_isrde(&m, &c).unwrap();
        let l = solve_leader_isrde_case1(&f).unwrap();
        let s = ClosedLoopSampler::new(&f, &l, &synthesize(&f, &l));
        let p = sample_closed_loop_path(&s, 11, 0);
        assert!(p.states.iter().all(|x| x[0] == 1.0 && x[1] == 0.0));
    }

    #[test]
    fn compensated_jumps_are_martingale() {
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let mut m = ModelSpec::constant(1, 1, 1, JumpSpec::UnitJump { intensity: 2.0 }, grid);
        m.initial_state = DVector::zeros(1);
        let (_, c) = reference::case1(100);
        let zeros = vec![DVector::zeros(1); grid.len()];
        let est = monte_carlo(
            |rng| {
                let inc = sample_increments(rng, &grid, &[2.0]);
                // dx = 1·dÑ: drive through the explicit dynamics with a unit jump offset.
                let jumps: f64 = inc.dn.iter().map(|r| f64::from(r[0]) - 2.0 * grid.dt()).sum();
                let mut mm = m.clone();
                mm.g1 = vec![Coef::scalar(1.0)];
                let ones = vec![DVector::from_element(1, 1.0); grid.len()];
                let p = sample_controlled_path(&mm, &c, &inc, &ones, &zeros);
                assert!((p.states[grid.steps][0] - jumps).abs() < 1e-12);
                p.states[grid.steps][0]
            },
            10_000,
            5,
        );
        assert!(est.mean.abs() <= 3.0 * est.se, "{est:?}");
    }

    #[test]
    fn drift_only_exponential() {
        let grid = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let mut m = ModelSpec::constant(1, 1, 1, JumpSpec::UnitJump { intensity: 1.0 }, grid);
        m.a = Coef::scalar(1.0);
        m.initial_state = DVector::from_element(1, 1.0);
        let (_, c) = reference::case1(1000);
        let inc = sample_increments(&mut path_rng(1, 0), &grid, &[1.0]);
        let z = vec![DVector::zeros(1); grid.len()];
        let p = sample_controlled_path(&m, &c, &inc, &z, &z);
        let xt = p.states[grid.steps][0];
        assert!((xt - std::f64::consts::E).abs() < 2.0 * grid.dt());
    }

    #[test]
    fn augmented_path_matches_original_dynamics() {
        for (m, c) in [reference::case1(200), reference::two_state(200)] {
            let f = solve_follower_isrde(&m, &c).unwrap();
            let l = solve_leader_isrde_case1(&f).unwrap();
            let s = ClosedLoopSampler::new(&f, &l, &synthesize(&f, &l));
            let p = sample_closed_loop_path(&s, 42, 3);
            let q = sample_controlled_path(&m, &c, &p.increments, &p.u1, &p.u2);
            for i in 0..m.grid.len() {
                let gap = (p.states[i].rows(0, m.n) - &q.states[i]).amax();
                assert!(gap < 1e-11, "node {i}: {gap}");
            }
            let (j1, j2) = accumulate_costs(&p, &m, &c);
            assert!((j1 - p.j1()).abs() < 1e-12 && (j2 - p.j2()).abs() < 1e-12);
            assert_eq!(s.replay(&p.increments), p);
        }
    }

    #[test]
    fn perturbation_zero_is_identity() {
        let (m, c) = reference::case1(100);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let u1 = GridFunction { grid: m.grid, values: vec![DVector::from_element(1, 1.0); m.grid.len()] };
        let phi = solve_follower_phi(&f, &u1).unwrap();
        let s = FollowerPathSampler::new(&f, &u1, &phi);
        let inc = s.sample_increments(&mut path_rng(9, 0));
        let v0 = vec![DVector::zeros(1); m.grid.len()];
        let v1 = vec![DVector::from_element(1, 1.0); m.grid.len()];
        let a = s.sample_follower_perturbed_path(&inc, &v1, 0.0);
        let b = s.sample_follower_perturbed_path(&inc, &v0, 0.3);
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn accumulate_costs_terminal_and_constant() {
        let (m, mut c) = reference::case1(100);
        c.q1 = Coef::scalar(0.0);
        c.r1 = Coef::scalar(0.0);
        let x = DVector::from_vec(vec![0.7, 0.0]);
        let mut path = SimulatedPath {
            times: m.grid.nodes(),
            states: vec![x.clone(); 101],
            u1: vec![DVector::zeros(1); 101],
            u2: vec![DVector::zeros(1); 101],
            increments: Increments { db: vec![], dn: vec![] },
            running: [0.0; 2],
            terminal: [0.0; 2],
            aborted: None,
        };
        assert!((accumulate_costs(&path, &m, &c).0 - 0.49).abs() < 1e-15);
        c.q1 = Coef::scalar(1.0);
        c.m1 = DMatrix::zeros(1, 1);
        assert!((accumulate_costs(&path, &m, &c).0 - 0.49).abs() < 1e-12);
        path.states.iter_mut().for_each(|s| s.fill(0.0));
        assert_eq!(accumulate_costs(&path, &m, &c), (0.0, 0.0));
    }
}
