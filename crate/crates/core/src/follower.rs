//! The follower's LQ problem for a given leader control: gain assembly,
//! the integro-Riccati equation for `P`, the closed-loop "hat"
//! coefficients, the affine backward equation for `φ` and the cost
//! certificate.
//!
//! Coefficients are deterministic, so every martingale term of the
//! backward equations vanishes and all equations are ordinary ODEs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SolveError};
use crate::integrators::{integrate_backward_with, GridFunction};
use crate::linalg::{self, capped_inverse};
use crate::model::{CostSpec, ModelSpec, Snapshot};

/// Default condition-number cap for gain inversions.
pub const GAIN_COND_CAP: f64 = 1e12;

/// `R̂₂`, `Ŝ₂`, `Ŝ₁` at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerGains {
    /// `R2 + D2ᵀPD2 + Σ w G2ᵀPG2`, m2×m2.
    pub rhat2: DMatrix<f64>,
    /// `(B2ᵀP + D2ᵀPC + Σ w G2ᵀPF)ᵀ`, n×m2.
    pub shat2: DMatrix<f64>,
    /// `D2ᵀPD1 + Σ w G2ᵀPG1`, m2×m1.
    pub shat1: DMatrix<f64>,
}

/// Closed-loop coefficients after substituting the follower's optimal response.
#[derive(Debug, Clone, PartialEq)]
pub struct HatCoefficients {
    pub ahat: DMatrix<f64>,
    pub bhat2: DMatrix<f64>,
    pub hhat2: DMatrix<f64>,
    pub khat2: Vec<DMatrix<f64>>,
    pub bhat1: DMatrix<f64>,
    pub chat: DMatrix<f64>,
    pub htilde2: DMatrix<f64>,
    pub ktilde2: Vec<DMatrix<f64>>,
    pub dhat1: DMatrix<f64>,
    pub fhat: Vec<DMatrix<f64>>,
    /// Indexed `[k][l]`.
    pub kbar2: Vec<Vec<DMatrix<f64>>>,
    pub ghat1: Vec<DMatrix<f64>>,
    pub hhat1: DMatrix<f64>,
    pub khat1: Vec<DMatrix<f64>>,
}

/// Everything derived from `P` at one time.
#[derive(Debug, Clone)]
pub struct FollowerNode {
    pub gains: FollowerGains,
    pub rhat2_inv: DMatrix<f64>,
    pub rhat2_cond: f64,
    pub hats: HatCoefficients,
}

#[derive(Debug, Clone)]
pub struct FollowerSolution {
    pub model: ModelSpec,
    pub costs: CostSpec,
    pub p: GridFunction<DMatrix<f64>>,
    pub nodes: Vec<FollowerNode>,
}

impl FollowerSolution {
    pub fn gains(&self, i: usize) -> &FollowerGains {
        &self.nodes[i].gains
    }

    pub fn hats(&self, i: usize) -> &HatCoefficients {
        &self.nodes[i].hats
    }
}

/// Evaluate `R̂₂`, `Ŝ₂`, `Ŝ₁` for a given `P`.
pub fn gains_from(snap: &Snapshot, p: &DMatrix<f64>) -> FollowerGains {
    let b2t = snap.b2.transpose();
    let d2t = snap.d2.transpose();
    let d2tp = &d2t * p;
    let mut rhat2 = &snap.r2 + &d2tp * &snap.d2;
    let mut shat2_t = &b2t * p + &d2tp * &snap.c;
    let mut shat1 = &d2tp * &snap.d1;
    for (k, w) in snap.weights.iter().enumerate() {
        let g2tp = snap.g2[k].transpose() * p;
        rhat2 += &g2tp * &snap.g2[k] * *w;
        shat2_t += &g2tp * &snap.f[k] * *w;
        shat1 += &g2tp * &snap.g1[k] * *w;
    }
    FollowerGains {
        rhat2,
        shat2: shat2_t.transpose(),
        shat1,
    }
}

/// Gains at time `s` for a given `P`.
pub fn follower_gains(
    p: &DMatrix<f64>,
    model: &ModelSpec,
    costs: &CostSpec,
    s: f64,
) -> Result<FollowerGains> {
    let g = gains_from(&model.snapshot(costs, s), p);
    invert_rhat2(&g, s)?;
    Ok(g)
}

fn invert_rhat2(g: &FollowerGains, s: f64) -> Result<(DMatrix<f64>, f64)> {
    capped_inverse(&g.rhat2, GAIN_COND_CAP).map_err(|cond| SolveError::SingularGain {
        which: "Rhat2",
        time: s,
        cond,
    })
}

/// Full set of `P`-derived quantities at one time.
pub fn follower_node(snap: &Snapshot, p: &DMatrix<f64>) -> Result<FollowerNode> {
    let gains = gains_from(snap, p);
    let (rinv, cond) = invert_rhat2(&gains, snap.s)?;
    let hats = hat_coefficients(snap, p, &gains, &rinv);
    Ok(FollowerNode {
        gains,
        rhat2_inv: rinv,
        rhat2_cond: cond,
        hats,
    })
}

/// Hat coefficients given `P`, its gains and `R̂₂⁻¹`.
pub fn hat_coefficients(
    snap: &Snapshot,
    p: &DMatrix<f64>,
    g: &FollowerGains,
    rinv: &DMatrix<f64>,
) -> HatCoefficients {
    let s2t = g.shat2.transpose();
    let b2r = &snap.b2 * rinv;
    let d2r = &snap.d2 * rinv;
    let g2r: Vec<DMatrix<f64>> = snap.g2.iter().map(|g2| g2 * rinv).collect();
    let marks = snap.weights.len();
    HatCoefficients {
        ahat: &snap.a - &b2r * &s2t,
        bhat2: -&b2r * snap.b2.transpose(),
        hhat2: -&b2r * snap.d2.transpose(),
        khat2: snap.g2.iter().map(|g2| -&b2r * g2.transpose()).collect(),
        bhat1: &snap.b1 - &b2r * &g.shat1,
        chat: &snap.c - &d2r * &s2t,
        htilde2: -&d2r * snap.d2.transpose(),
        ktilde2: snap.g2.iter().map(|g2| -&d2r * g2.transpose()).collect(),
        dhat1: &snap.d1 - &d2r * &g.shat1,
        fhat: (0..marks).map(|k| &snap.f[k] - &g2r[k] * &s2t).collect(),
        kbar2: (0..marks)
            .map(|k| (0..marks).map(|l| -&g2r[k] * snap.g2[l].transpose()).collect())
            .collect(),
        ghat1: (0..marks).map(|k| &snap.g1[k] - &g2r[k] * &g.shat1).collect(),
        hhat1: (snap.c.transpose() * p * &snap.d1 + p * &snap.b1 - &g.shat2 * rinv * &g.shat1)
            .transpose(),
        khat1: (0..marks)
            .map(|k| (snap.f[k].transpose() * p * &snap.g1[k]).transpose())
            .collect(),
    }
}

/// Right side `dP/ds` of the follower's Riccati equation.
pub fn follower_riccati_rhs(snap: &Snapshot, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = gains_from(snap, p);
    let (rinv, _) = invert_rhat2(&g, snap.s)?;
    let at = snap.a.transpose();
    let mut body = &at * p + p * &snap.a + &snap.q2 + snap.c.transpose() * p * &snap.c;
    for (k, w) in snap.weights.iter().enumerate() {
        body += snap.f[k].transpose() * p * &snap.f[k] * *w;
    }
    body -= &g.shat2 * rinv * g.shat2.transpose();
    Ok(-body)
}

/// Right side `dφ/ds` of the follower's affine backward equation.
pub fn follower_phi_rhs(node: &FollowerNode, snap: &Snapshot, phi: &DVector<f64>, u1: &DVector<f64>) -> DVector<f64> {
    let h = &node.hats;
    let mut body = h.ahat.transpose() * phi + h.hhat1.transpose() * u1;
    for (k, w) in snap.weights.iter().enumerate() {
        body += h.khat1[k].transpose() * u1 * *w;
    }
    -body
}

/// Solve `P` backward from `P(T) = M2`, symmetrizing after every step.
pub fn solve_follower_isrde(model: &ModelSpec, costs: &CostSpec) -> Result<FollowerSolution> {
    let grid = model.grid;
    let p = integrate_backward_with(
        |s, p: &DMatrix<f64>| follower_riccati_rhs(&model.snapshot(costs, s), p),
        costs.m2.clone(),
        &grid,
        |p| linalg::symmetrize(&p),
    )?;
    let nodes = (0..grid.len())
        .map(|i| follower_node(&model.snapshot_at_node(costs, i), &p.values[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok(FollowerSolution {
        model: model.clone(),
        costs: costs.clone(),
        p,
        nodes,
    })
}

/// Multipliers of the follower's optimal feedback
/// `ū₂ = kx x + kf_b2 φ + kf_d2 θ + Σ_k kf_g2[k] ψ_k + kf_s1 u₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackMultipliers {
    pub kx: DMatrix<f64>,
    pub kf_b2: DMatrix<f64>,
    pub kf_d2: DMatrix<f64>,
    /// Includes the mark weight `w_k`.
    pub kf_g2: Vec<DMatrix<f64>>,
    pub kf_s1: DMatrix<f64>,
}

impl FeedbackMultipliers {
    /// `ū₂` with `θ = ψ = 0`.
    pub fn apply(&self, x: &DVector<f64>, phi: &DVector<f64>, u1: &DVector<f64>) -> DVector<f64> {
        &self.kx * x + &self.kf_b2 * phi + &self.kf_s1 * u1
    }
}

fn multipliers(snap: &Snapshot, g: &FollowerGains, rinv: &DMatrix<f64>) -> FeedbackMultipliers {
    FeedbackMultipliers {
        kx: -rinv * g.shat2.transpose(),
        kf_b2: -rinv * snap.b2.transpose(),
        kf_d2: -rinv * snap.d2.transpose(),
        kf_g2: snap
            .g2
            .iter()
            .zip(&snap.weights)
            .map(|(g2, w)| -rinv * g2.transpose() * *w)
            .collect(),
        kf_s1: -rinv * &g.shat1,
    }
}

/// Feedback multipliers at time `s`; at grid nodes the stored gains are used.
pub fn follower_feedback_gain(sol: &FollowerSolution, s: f64) -> Result<FeedbackMultipliers> {
    let snap = sol.model.snapshot(&sol.costs, s);
    if let Some(i) = sol.p.grid.node_index(s) {
        let node = &sol.nodes[i];
        return Ok(multipliers(&snap, &node.gains, &node.rhat2_inv));
    }
    let g = gains_from(&snap, &sol.p.eval(s));
    let (rinv, _) = invert_rhat2(&g, s)?;
    Ok(multipliers(&snap, &g, &rinv))
}

/// Feedback multipliers at grid node `i`.
pub fn feedback_at_node(sol: &FollowerSolution, i: usize) -> FeedbackMultipliers {
    let snap = sol.model.snapshot_at_node(&sol.costs, i);
    let node = &sol.nodes[i];
    multipliers(&snap, &node.gains, &node.rhat2_inv)
}

/// Solve `φ` backward from `φ(T) = 0` for a deterministic leader control
/// sampled on the grid (linear in between).
///
/// `P` is re-integrated alongside `φ` so the stage values of the hat
/// coefficients are exact; its iterates coincide with `sol.p`.
pub fn solve_follower_phi(
    sol: &FollowerSolution,
    u1: &GridFunction<DVector<f64>>,
) -> Result<GridFunction<DVector<f64>>> {
    let (model, costs) = (&sol.model, &sol.costs);
    let grid = model.grid;
    let joint = integrate_backward_with(
        |s, (p, phi): &(DMatrix<f64>, DVector<f64>)| {
            let snap = model.snapshot(costs, s);
            let node = follower_node(&snap, p)?;
            let dp = follower_riccati_rhs(&snap, p)?;
            let dphi = follower_phi_rhs(&node, &snap, phi, &u1.eval(s));
            Ok((dp, dphi))
        },
        (costs.m2.clone(), DVector::zeros(model.n)),
        &grid,
        |(p, phi)| (linalg::symmetrize(&p), phi),
    )?;
    Ok(joint.map(|(_, phi)| phi.clone()))
}

/// Certified optimal follower cost for the given leader control:
/// `aᵀP(t0)a + 2⟨a, φ(t0)⟩ + ∫ [|u₁|²_{D1ᵀPD1} + Σ w |u₁|²_{G1ᵀPG1}
///  + 2⟨u₁, B1ᵀφ⟩ − |B2ᵀφ + Ŝ₁u₁|²_{R̂₂⁻¹}] ds`, trapezoidal in time.
pub fn follower_cost_certificate(
    sol: &FollowerSolution,
    u1: &GridFunction<DVector<f64>>,
    phi: &GridFunction<DVector<f64>>,
    a: &DVector<f64>,
) -> f64 {
    let grid = sol.model.grid;
    let integrand: Vec<f64> = (0..grid.len())
        .map(|i| {
            let snap = sol.model.snapshot_at_node(&sol.costs, i);
            let node = &sol.nodes[i];
            let p = &sol.p.values[i];
            let (u, ph) = (&u1.values[i], &phi.values[i]);
            let mut v = linalg::quad_form(&(snap.d1.transpose() * p * &snap.d1), u);
            for (k, w) in snap.weights.iter().enumerate() {
                v += w * linalg::quad_form(&(snap.g1[k].transpose() * p * &snap.g1[k]), u);
            }
            v += 2.0 * u.dot(&(snap.b1.transpose() * ph));
            let f = snap.b2.transpose() * ph + &node.gains.shat1 * u;
            v - linalg::quad_form(&node.rhat2_inv, &f)
        })
        .collect();
    let dt = grid.dt();
    let integral: f64 = integrand
        .windows(2)
        .map(|w| 0.5 * dt * (w[0] + w[1]))
        .sum();
    linalg::quad_form(sol.p.first(), a) + 2.0 * a.dot(phi.first()) + integral
}
