//! Game data: time grid, jump measure, dynamics coefficients and cost weights.
//!
//! Coefficients are either constant or sampled at every grid node and read
//! back by piecewise-linear interpolation in time. The jump measure is a
//! finite discrete measure, so every integral against it is a finite sum
//! `Σ_k w_k g(e_k)`; the unit-jump case is the one-mark instance with mark
//! `e = 1` and weight equal to the intensity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SolveError};
use crate::linalg;

/// Relative tolerance used for the symmetry check on cost weights.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Uniform grid on `[t0, t_end]` with `steps` subintervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite()) || t0 >= t_end {
            return Err(SolveError::InvalidModel(format!(
                "grid requires t0 < T, got t0 = {t0}, T = {t_end}"
            )));
        }
        if steps == 0 {
            return Err(SolveError::InvalidModel("grid requires steps >= 1".into()));
        }
        Ok(TimeGrid { t0, t_end, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Time of node `i`; the last node is exactly `t_end`.
    pub fn node(&self, i: usize) -> f64 {
        if i >= self.steps {
            self.t_end
        } else {
            self.t0 + i as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Interval index and fractional position of `s` (clamped to the grid).
    pub fn locate(&self, s: f64) -> (usize, f64) {
        let x = ((s - self.t0) / self.dt()).clamp(0.0, self.steps as f64);
        let i = (x.floor() as usize).min(self.steps - 1);
        (i, (x - i as f64).clamp(0.0, 1.0))
    }

    /// Index of the node at `s`, if `s` sits on a node up to round-off.
    pub fn node_index(&self, s: f64) -> Option<usize> {
        let x = (s - self.t0) / self.dt();
        let r = x.round();
        if r >= 0.0 && r <= self.steps as f64 && (x - r).abs() < 1e-9 {
            Some(r as usize)
        } else {
            None
        }
    }

    /// Same interval with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> TimeGrid {
        TimeGrid {
            steps: self.steps * factor.max(1),
            ..*self
        }
    }
}

/// Discretized jump measure.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpSpec {
    /// Jumps of unit size arriving with the given intensity.
    UnitJump { intensity: f64 },
    /// Finitely many marks `e_k` with Lévy weights `w_k` (per unit time).
    FiniteMarks { marks: Vec<f64>, weights: Vec<f64> },
}

impl JumpSpec {
    pub fn mark_count(&self) -> usize {
        match self {
            JumpSpec::UnitJump { .. } => 1,
            JumpSpec::FiniteMarks { marks, .. } => marks.len(),
        }
    }

    pub fn marks(&self) -> Vec<f64> {
        match self {
            JumpSpec::UnitJump { .. } => vec![1.0],
            JumpSpec::FiniteMarks { marks, .. } => marks.clone(),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        match self {
            JumpSpec::UnitJump { intensity } => vec![*intensity],
            JumpSpec::FiniteMarks { weights, .. } => weights.clone(),
        }
    }

    /// `λ(E)`, the total arrival rate.
    pub fn total_intensity(&self) -> f64 {
        self.weights().iter().sum()
    }

    pub fn is_unit_jump(&self) -> bool {
        matches!(self, JumpSpec::UnitJump { .. })
    }
}

/// A matrix-valued coefficient of time.
#[derive(Debug, Clone, PartialEq)]
pub enum Coef {
    Const(DMatrix<f64>),
    /// One sample per grid node, linear in between.
    Nodes(Vec<DMatrix<f64>>),
}

impl Coef {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Coef::Const(DMatrix::zeros(rows, cols))
    }

    pub fn scalar(v: f64) -> Self {
        Coef::Const(DMatrix::from_element(1, 1, v))
    }

    /// Shape of the first sample.
    pub fn shape(&self) -> Option<(usize, usize)> {
        match self {
            Coef::Const(m) => Some(m.shape()),
            Coef::Nodes(v) => v.first().map(|m| m.shape()),
        }
    }

    pub fn samples(&self) -> Vec<&DMatrix<f64>> {
        match self {
            Coef::Const(m) => vec![m],
            Coef::Nodes(v) => v.iter().collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.samples().iter().all(|m| m.iter().all(|v| *v == 0.0))
    }

    pub fn at_node(&self, i: usize) -> DMatrix<f64> {
        match self {
            Coef::Const(m) => m.clone(),
            Coef::Nodes(v) => v[i.min(v.len() - 1)].clone(),
        }
    }

    pub fn at(&self, grid: &TimeGrid, s: f64) -> DMatrix<f64> {
        match self {
            Coef::Const(m) => m.clone(),
            Coef::Nodes(v) => {
                if let Some(i) = grid.node_index(s) {
                    return v[i].clone();
                }
                let (i, theta) = grid.locate(s);
                &v[i] * (1.0 - theta) + &v[i + 1] * theta
            }
        }
    }

    /// Resample onto a refined grid. Piecewise-linear data is reproduced exactly.
    pub fn refined(&self, grid: &TimeGrid, factor: usize) -> Coef {
        match self {
            Coef::Const(m) => Coef::Const(m.clone()),
            Coef::Nodes(_) => {
                let fine = grid.refined(factor);
                Coef::Nodes(fine.nodes().iter().map(|&s| self.at(grid, s)).collect())
            }
        }
    }

    fn zeroed(&self) -> Coef {
        let (r, c) = self.shape().unwrap_or((0, 0));
        Coef::zeros(r, c)
    }
}

/// Dynamics of the controlled jump diffusion.
///
/// `dx = (A x + B1 u1 + B2 u2) ds + (C x + D1 u1 + D2 u2) dB
///      + Σ_k (F_k x + G1_k u1 + G2_k u2) dÑ_k`
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub a: Coef,
    pub b1: Coef,
    pub b2: Coef,
    pub c: Coef,
    pub d1: Coef,
    pub d2: Coef,
    /// One entry per mark.
    pub f: Vec<Coef>,
    pub g1: Vec<Coef>,
    pub g2: Vec<Coef>,
    pub jumps: JumpSpec,
    pub grid: TimeGrid,
    pub initial_state: DVector<f64>,
}

/// Quadratic cost weights of both players.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q1: Coef,
    pub q2: Coef,
    pub r1: Coef,
    pub r2: Coef,
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
}

/// All coefficients and weights frozen at one time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub s: f64,
    pub a: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
    pub f: Vec<DMatrix<f64>>,
    pub g1: Vec<DMatrix<f64>>,
    pub g2: Vec<DMatrix<f64>>,
    pub weights: Vec<f64>,
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub r1: DMatrix<f64>,
    pub r2: DMatrix<f64>,
}

impl ModelSpec {
    /// Time-invariant model with zero jump and diffusion terms, to be filled in by the caller.
    pub fn constant(n: usize, m1: usize, m2: usize, jumps: JumpSpec, grid: TimeGrid) -> Self {
        let k = jumps.mark_count();
        ModelSpec {
            n,
            m1,
            m2,
            a: Coef::zeros(n, n),
            b1: Coef::zeros(n, m1),
            b2: Coef::zeros(n, m2),
            c: Coef::zeros(n, n),
            d1: Coef::zeros(n, m1),
            d2: Coef::zeros(n, m2),
            f: vec![Coef::zeros(n, n); k],
            g1: vec![Coef::zeros(n, m1); k],
            g2: vec![Coef::zeros(n, m2); k],
            jumps,
            grid,
            initial_state: DVector::zeros(n),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.jumps.weights()
    }

    pub fn snapshot(&self, costs: &CostSpec, s: f64) -> Snapshot {
        let g = &self.grid;
        Snapshot {
            s,
            a: self.a.at(g, s),
            b1: self.b1.at(g, s),
            b2: self.b2.at(g, s),
            c: self.c.at(g, s),
            d1: self.d1.at(g, s),
            d2: self.d2.at(g, s),
            f: self.f.iter().map(|m| m.at(g, s)).collect(),
            g1: self.g1.iter().map(|m| m.at(g, s)).collect(),
            g2: self.g2.iter().map(|m| m.at(g, s)).collect(),
            weights: self.weights(),
            q1: costs.q1.at(g, s),
            q2: costs.q2.at(g, s),
            r1: costs.r1.at(g, s),
            r2: costs.r2.at(g, s),
        }
    }

    pub fn snapshot_at_node(&self, costs: &CostSpec, i: usize) -> Snapshot {
        self.snapshot(costs, self.grid.node(i))
    }

    /// True when every jump coefficient vanishes identically.
    pub fn is_jump_free(&self) -> bool {
        self.f
            .iter()
            .chain(self.g1.iter())
            .chain(self.g2.iter())
            .all(Coef::is_zero)
    }

    pub fn g2_vanishes(&self) -> bool {
        self.g2.iter().all(Coef::is_zero)
    }

    /// Unit jumps, or no jump coefficients at all (the measure is then irrelevant).
    pub fn case1_eligible(&self) -> bool {
        self.jumps.is_unit_jump() || self.is_jump_free()
    }

    pub fn case2_eligible(&self) -> bool {
        self.g2_vanishes()
    }

    /// Same model on a grid with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> ModelSpec {
        let g = &self.grid;
        let r = |c: &Coef| c.refined(g, factor);
        ModelSpec {
            a: r(&self.a),
            b1: r(&self.b1),
            b2: r(&self.b2),
            c: r(&self.c),
            d1: r(&self.d1),
            d2: r(&self.d2),
            f: self.f.iter().map(r).collect(),
            g1: self.g1.iter().map(r).collect(),
            g2: self.g2.iter().map(r).collect(),
            grid: g.refined(factor),
            ..self.clone()
        }
    }
}

impl CostSpec {
    pub fn refined(&self, grid: &TimeGrid, factor: usize) -> CostSpec {
        CostSpec {
            q1: self.q1.refined(grid, factor),
            q2: self.q2.refined(grid, factor),
            r1: self.r1.refined(grid, factor),
            r2: self.r2.refined(grid, factor),
            ..self.clone()
        }
    }
}

/// Copy of the model with every jump coefficient set to zero. The jump
/// measure itself is kept.
pub fn strip_jumps(model: &ModelSpec) -> ModelSpec {
    ModelSpec {
        f: model.f.iter().map(Coef::zeroed).collect(),
        g1: model.g1.iter().map(Coef::zeroed).collect(),
        g2: model.g2.iter().map(Coef::zeroed).collect(),
        ..model.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    /// Dotted path of the offending field, e.g. `dynamics.B1` or `costs.Q1[3]`.
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub errors: Vec<ValidationIssue>,
    pub case1_eligible: bool,
    pub case2_eligible: bool,
    /// Q1, R1, M1 positive semidefinite and R2 positive definite at every node:
    /// the sufficient condition for the leader's convexity hypothesis.
    pub leader_convexity: bool,
    /// Q2, M2 positive semidefinite and R2 positive definite.
    pub follower_definite: bool,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn accepted(&self) -> bool {
        self.errors.is_empty()
    }
}

struct Checker<'a> {
    grid: &'a TimeGrid,
    errors: Vec<ValidationIssue>,
}

impl Checker<'_> {
    fn push(&mut self, field: &str, message: String) {
        self.errors.push(ValidationIssue {
            field: field.to_string(),
            message,
        });
    }

    fn coef(&mut self, field: &str, coef: &Coef, rows: usize, cols: usize) -> bool {
        let before = self.errors.len();
        if let Coef::Nodes(v) = coef {
            if v.len() != self.grid.len() {
                self.push(
                    field,
                    format!(
                        "expected {} node samples (steps + 1), got {}",
                        self.grid.len(),
                        v.len()
                    ),
                );
            }
        }
        for (k, m) in coef.samples().into_iter().enumerate() {
            let at = match coef {
                Coef::Const(_) => field.to_string(),
                Coef::Nodes(_) => format!("{field}[{k}]"),
            };
            if m.shape() != (rows, cols) {
                self.push(
                    &at,
                    format!(
                        "expected {rows}x{cols} matrix, got {}x{}",
                        m.nrows(),
                        m.ncols()
                    ),
                );
            } else if !m.iter().all(|v| v.is_finite()) {
                self.push(&at, "non-finite entry".into());
            }
        }
        self.errors.len() == before
    }

    fn symmetric(&mut self, field: &str, coef: &Coef) {
        for (k, m) in coef.samples().into_iter().enumerate() {
            if !m.is_square() {
                continue;
            }
            let scale = linalg::max_abs(m).max(1.0);
            let gap = linalg::asymmetry(m);
            if gap > SYMMETRY_TOL * scale {
                let at = match coef {
                    Coef::Const(_) => field.to_string(),
                    Coef::Nodes(_) => format!("{field}[{k}]"),
                };
                self.push(
                    &at,
                    format!("nonsymmetric weight (max |W - W^T| = {gap:.3e})"),
                );
            }
        }
    }
}

fn all_samples(coef: &Coef, pred: impl Fn(&DMatrix<f64>) -> bool) -> bool {
    coef.samples().into_iter().all(pred)
}

/// Check shapes, finiteness and symmetry, and report which leader cases apply.
/// Never panics; the model is accepted iff the error list is empty.
pub fn validate_model(model: &ModelSpec, costs: &CostSpec) -> ValidationReport {
    let (n, m1, m2) = (model.n, model.m1, model.m2);
    let mut ck = Checker {
        grid: &model.grid,
        errors: Vec::new(),
    };
    let mut notes = Vec::new();

    if n == 0 || m1 == 0 || m2 == 0 {
        ck.push("dimensions", format!("n, m1, m2 must be positive, got ({n}, {m1}, {m2})"));
    }
    let g = model.grid;
    if !(g.t0 < g.t_end) || g.steps == 0 {
        ck.push("grid", "requires t0 < T and steps >= 1".into());
    }

    let k = model.jumps.mark_count();
    match &model.jumps {
        JumpSpec::UnitJump { intensity } => {
            if !(*intensity > 0.0 && intensity.is_finite()) {
                ck.push("jumps.intensity", format!("must be positive, got {intensity}"));
            }
        }
        JumpSpec::FiniteMarks { marks, weights } => {
            if marks.is_empty() {
                ck.push("jumps.marks", "at least one mark required".into());
            }
            if marks.len() != weights.len() {
                ck.push(
                    "jumps.weights",
                    format!("{} weights for {} marks", weights.len(), marks.len()),
                );
            }
            for (i, w) in weights.iter().enumerate() {
                if !(*w > 0.0 && w.is_finite()) {
                    ck.push(&format!("jumps.weights[{i}]"), format!("must be positive, got {w}"));
                }
            }
            for i in 0..marks.len() {
                if !marks[i].is_finite() {
                    ck.push(&format!("jumps.marks[{i}]"), "non-finite mark".into());
                }
                if marks[..i].contains(&marks[i]) {
                    ck.push(&format!("jumps.marks[{i}]"), "duplicate mark".into());
                }
            }
        }
    }

    ck.coef("dynamics.A", &model.a, n, n);
    ck.coef("dynamics.B1", &model.b1, n, m1);
    ck.coef("dynamics.B2", &model.b2, n, m2);
    ck.coef("dynamics.C", &model.c, n, n);
    ck.coef("dynamics.D1", &model.d1, n, m1);
    ck.coef("dynamics.D2", &model.d2, n, m2);
    for (name, list, cols) in [("F", &model.f, n), ("G1", &model.g1, m1), ("G2", &model.g2, m2)] {
        if list.len() != k {
            ck.push(
                &format!("dynamics.{name}"),
                format!("expected one coefficient per mark ({k}), got {}", list.len()),
            );
        }
        for (i, coef) in list.iter().enumerate() {
            ck.coef(&format!("dynamics.{name}{{mark {i}}}"), coef, n, cols);
        }
    }
    if model.initial_state.len() != n {
        ck.push(
            "initial_state",
            format!("expected length {n}, got {}", model.initial_state.len()),
        );
    } else if !model.initial_state.iter().all(|v| v.is_finite()) {
        ck.push("initial_state", "non-finite entry".into());
    }

    let weights_ok = [
        ck.coef("costs.Q1", &costs.q1, n, n),
        ck.coef("costs.Q2", &costs.q2, n, n),
        ck.coef("costs.R1", &costs.r1, m1, m1),
        ck.coef("costs.R2", &costs.r2, m2, m2),
        ck.coef("costs.M1", &Coef::Const(costs.m1.clone()), n, n),
        ck.coef("costs.M2", &Coef::Const(costs.m2.clone()), n, n),
    ];
    ck.symmetric("costs.Q1", &costs.q1);
    ck.symmetric("costs.Q2", &costs.q2);
    ck.symmetric("costs.R1", &costs.r1);
    ck.symmetric("costs.R2", &costs.r2);
    ck.symmetric("costs.M1", &Coef::Const(costs.m1.clone()));
    ck.symmetric("costs.M2", &Coef::Const(costs.m2.clone()));

    let psd = |m: &DMatrix<f64>| linalg::min_eigenvalue_sym(m) >= -1e-12 * linalg::max_abs(m).max(1.0);
    let pd = |m: &DMatrix<f64>| linalg::min_eigenvalue_sym(m) > 0.0;
    let all_ok = weights_ok.iter().all(|b| *b);
    let (leader_convexity, follower_definite) = if all_ok {
        let r2_pd = all_samples(&costs.r2, pd);
        (
            all_samples(&costs.q1, psd) && all_samples(&costs.r1, psd) && psd(&costs.m1) && r2_pd,
            all_samples(&costs.q2, psd) && psd(&costs.m2) && r2_pd,
        )
    } else {
        (false, false)
    };

    let case1_eligible = model.case1_eligible();
    let case2_eligible = model.case2_eligible();
    if !case1_eligible && !case2_eligible {
        notes.push(
            "leader problem unsolvable here: marked jumps with G2 != 0 admit no explicit \
             state-feedback form; only the follower problem can be solved"
                .into(),
        );
    }
    if !leader_convexity {
        notes.push("leader convexity sufficient condition not met (Q1, R1, M1 >= 0, R2 > 0)".into());
    }

    ValidationReport {
        errors: ck.errors,
        case1_eligible,
        case2_eligible,
        leader_convexity,
        follower_definite,
        notes,
    }
}

/// Small models used by the tests, the acceptance suite and the sample configs.
pub mod reference {
    use super::*;

    fn s(v: f64) -> Coef {
        Coef::scalar(v)
    }

    fn unit_costs() -> CostSpec {
        CostSpec {
            q1: s(1.0),
            q2: s(1.0),
            r1: s(1.0),
            r2: s(1.0),
            m1: DMatrix::from_element(1, 1, 1.0),
            m2: DMatrix::from_element(1, 1, 1.0),
        }
    }

    /// Follower-only model whose Riccati solution is `P(s) = 1 / (1 + T - s)`.
    pub fn scalar_riccati(steps: usize) -> (ModelSpec, CostSpec) {
        let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let mut m = ModelSpec::constant(1, 1, 1, JumpSpec::UnitJump { intensity: 1.0 }, grid);
        m.b2 = s(1.0);
        m.initial_state = DVector::from_element(1, 1.0);
        let costs = CostSpec {
            q1: s(0.0),
            q2: s(0.0),
            r1: s(1.0),
            r2: s(1.0),
            m1: DMatrix::zeros(1, 1),
            m2: DMatrix::from_element(1, 1, 1.0),
        };
        (m, costs)
    }

    /// Scalar unit-jump model with every coupling switched on (Case I).
    pub fn case1(steps: usize) -> (ModelSpec, CostSpec) {
        let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let mut m = ModelSpec::constant(1, 1, 1, JumpSpec::UnitJump { intensity: 1.0 }, grid);
        m.a = s(0.2);
        m.b1 = s(0.5);
        m.b2 = s(1.0);
        m.c = s(0.3);
        m.d1 = s(0.1);
        m.d2 = s(0.2);
        m.f = vec![s(0.3)];
        m.g1 = vec![s(0.2)];
        m.g2 = vec![s(0.25)];
        m.initial_state = DVector::from_element(1, 1.0);
        (m, unit_costs())
    }

    /// Scalar two-mark model without follower control in the jumps (Case II).
    pub fn case2(steps: usize) -> (ModelSpec, CostSpec) {
        let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let jumps = JumpSpec::FiniteMarks {
            marks: vec![-0.5, 1.0],
            weights: vec![0.6, 0.8],
        };
        let mut m = ModelSpec::constant(1, 1, 1, jumps, grid);
        m.a = s(0.2);
        m.b1 = s(0.5);
        m.b2 = s(1.0);
        m.c = s(0.3);
        m.d1 = s(0.1);
        m.d2 = s(0.2);
        m.f = vec![s(-0.15), s(0.3)];
        m.g1 = vec![s(-0.1), s(0.2)];
        m.g2 = vec![s(0.0), s(0.0)];
        m.initial_state = DVector::from_element(1, 1.0);
        (m, unit_costs())
    }

    /// Two-state unit-jump model with time-varying drift and costs.
    pub fn two_state(steps: usize) -> (ModelSpec, CostSpec) {
        let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let mut m = ModelSpec::constant(2, 1, 1, JumpSpec::UnitJump { intensity: 0.7 }, grid);
        let a0 = DMatrix::from_row_slice(2, 2, &[0.1, 0.3, -0.2, 0.05]);
        let a1 = DMatrix::from_row_slice(2, 2, &[-0.1, 0.2, -0.1, 0.15]);
        m.a = Coef::Nodes(
            grid.nodes()
                .iter()
                .map(|&t| &a0 * (1.0 - t) + &a1 * t)
                .collect(),
        );
        m.b1 = Coef::Const(DMatrix::from_row_slice(2, 1, &[0.4, 0.1]));
        m.b2 = Coef::Const(DMatrix::from_row_slice(2, 1, &[0.2, 0.8]));
        m.c = Coef::Const(DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.05, 0.1]));
        m.d1 = Coef::Const(DMatrix::from_row_slice(2, 1, &[0.05, 0.0]));
        m.d2 = Coef::Const(DMatrix::from_row_slice(2, 1, &[0.0, 0.15]));
        m.f = vec![Coef::Const(DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.1, -0.1]))];
        m.g1 = vec![Coef::Const(DMatrix::from_row_slice(2, 1, &[0.1, 0.0]))];
        m.g2 = vec![Coef::Const(DMatrix::from_row_slice(2, 1, &[0.0, 0.2]))];
        m.initial_state = DVector::from_vec(vec![1.0, -0.5]);
        let q = |d: f64| DMatrix::from_row_slice(2, 2, &[1.0 + d, 0.2, 0.2, 0.5]);
        let costs = CostSpec {
            q1: Coef::Nodes(grid.nodes().iter().map(|&t| q(0.5 * t)).collect()),
            q2: Coef::Const(DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0])),
            r1: s(1.0),
            r2: s(2.0),
            m1: DMatrix::identity(2, 2),
            m2: DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 0.5]),
        };
        (m, costs)
    }
}
