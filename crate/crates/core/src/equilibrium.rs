//! State-feedback form of the Stackelberg equilibrium on the augmented
//! state `𝒳 = [x; β]`, with `β(t0) = 0`.

use nalgebra::{DMatrix, DVector};

use crate::follower::FollowerSolution;
use crate::leader::{LeaderCase, LeaderSolution};
use crate::model::TimeGrid;

/// Gain tables: `ū₁ = −k1 𝒳`, `ū₂ = −k2 𝒳`, one entry per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPair {
    pub case: LeaderCase,
    pub grid: TimeGrid,
    pub k1: Vec<DMatrix<f64>>,
    pub k2: Vec<DMatrix<f64>>,
}

/// Compose the leader gain with the follower's optimal response.
///
/// `k2 = R̂₂⁻¹ (Ŝ₂ᵀ[I 0] + B2ᵀ[0 I]𝒫 + D2ᵀ[0 I]𝒵-map
///        + Σ_k w_k G2_kᵀ[0 I]𝒦-map_k − Ŝ₁ k1)`.
pub fn synthesize(follower: &FollowerSolution, leader: &LeaderSolution) -> FeedbackPair {
    let (model, costs) = (&follower.model, &follower.costs);
    let n = model.n;
    let grid = model.grid;
    let mut k1 = Vec::with_capacity(grid.len());
    let mut k2 = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let snap = model.snapshot_at_node(costs, i);
        let fnode = &follower.nodes[i];
        let lnode = &leader.nodes[i];
        let aug = &leader.aug[i];
        let lower = |m: &DMatrix<f64>| m.rows(n, n).into_owned();
        let mut inner = DMatrix::zeros(model.m2, 2 * n);
        inner
            .view_mut((0, 0), (model.m2, n))
            .copy_from(&fnode.gains.shat2.transpose());
        inner += snap.b2.transpose() * lower(&leader.pcal.values[i]);
        inner += snap.d2.transpose() * lower(&lnode.zmap);
        // A collapsed jump-free view carries no follower jump control.
        if aug.weights.len() == snap.weights.len() {
            for (k, w) in aug.weights.iter().enumerate() {
                inner += snap.g2[k].transpose() * lower(&lnode.kmap[k]) * *w;
            }
        }
        inner -= &fnode.gains.shat1 * &lnode.k1;
        k2.push(&fnode.rhat2_inv * inner);
        k1.push(lnode.k1.clone());
    }
    FeedbackPair {
        case: leader.case,
        grid,
        k1,
        k2,
    }
}

impl FeedbackPair {
    /// Gains at time `s`: stored values at nodes, linear in between.
    pub fn gains_at(&self, s: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        if let Some(i) = self.grid.node_index(s) {
            return (self.k1[i].clone(), self.k2[i].clone());
        }
        let (i, t) = self.grid.locate(s);
        (
            &self.k1[i] * (1.0 - t) + &self.k1[i + 1] * t,
            &self.k2[i] * (1.0 - t) + &self.k2[i + 1] * t,
        )
    }

    /// Controls at node `i`.
    pub fn controls_at_node(&self, i: usize, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (-(&self.k1[i] * x), -(&self.k2[i] * x))
    }
}

/// `(ū₁, ū₂) = (−K1(s)𝒳, −K2(s)𝒳)`.
pub fn evaluate_controls(pair: &FeedbackPair, s: f64, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    if let Some(i) = pair.grid.node_index(s) {
        return pair.controls_at_node(i, x);
    }
    let (k1, k2) = pair.gains_at(s);
    (-(k1 * x), -(k2 * x))
}
