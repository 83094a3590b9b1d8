//! The leader's problem on the 2n-dimensional augmented state
//! `𝒳 = [x; β]`, `𝒴 = [α; φ]`, closed through the ansatz `𝒴 = 𝒫𝒳`.
//!
//! Case I (unit jumps) solves a 4n×4n linear system for the diffusion and
//! jump coefficients `(𝒵, 𝒦)` of `𝒴`; Case II (no follower control in the
//! jumps) only needs `(I − 𝒫ℍ̃)⁻¹`. `𝒫` is in general not symmetric and is
//! never symmetrized.

use nalgebra::DMatrix;

use crate::error::{Result, SolveError};
use crate::follower::{follower_node, follower_riccati_rhs, FollowerSolution, HatCoefficients, GAIN_COND_CAP};
use crate::integrators::{integrate_backward_with, GridFunction};
use crate::linalg::{self, block2, capped_inverse, condition_number, vstack};
use crate::model::{ModelSpec, Snapshot};

/// Condition cap for the invertibility conditions on the block systems.
pub const BLOCK_COND_CAP: f64 = 1e12;
/// The Schur-complement forms are used only when every block is this well conditioned.
pub const SCHUR_COND_LIMIT: f64 = 1e8;

/// Augmented coefficients at one time. Mark-indexed blocks line up with `weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBlocks {
    pub n: usize,
    pub weights: Vec<f64>,
    pub aa: DMatrix<f64>,
    pub bb2: DMatrix<f64>,
    pub hh_hat: DMatrix<f64>,
    pub kk_hat: Vec<DMatrix<f64>>,
    pub bb1: DMatrix<f64>,
    pub cc: DMatrix<f64>,
    pub hh_tilde: DMatrix<f64>,
    pub kk_tilde: Vec<DMatrix<f64>>,
    pub dd1: DMatrix<f64>,
    pub ff: Vec<DMatrix<f64>>,
    pub qq: DMatrix<f64>,
    /// Indexed `[k][l]`.
    pub kk_bar: Vec<Vec<DMatrix<f64>>>,
    pub gg1: Vec<DMatrix<f64>>,
    pub hh1: DMatrix<f64>,
    pub kk1: Vec<DMatrix<f64>>,
    pub mm1: DMatrix<f64>,
    pub r1: DMatrix<f64>,
}

/// Per-node augmented blocks on the follower's grid.
#[derive(Debug, Clone)]
pub struct AugmentedModel {
    pub nodes: Vec<AugmentedBlocks>,
}

fn diag2(x: &DMatrix<f64>) -> DMatrix<f64> {
    let z = DMatrix::zeros(x.nrows(), x.ncols());
    block2(x, &z, &z, x)
}

fn anti2(x: &DMatrix<f64>) -> DMatrix<f64> {
    let z = DMatrix::zeros(x.nrows(), x.ncols());
    block2(&z, x, x, &z)
}

fn top(x: &DMatrix<f64>) -> DMatrix<f64> {
    vstack(x, &DMatrix::zeros(x.nrows(), x.ncols()))
}

fn right(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), 2 * x.ncols());
    out.view_mut((0, x.ncols()), x.shape()).copy_from(x);
    out
}

/// Assemble the augmented blocks from the follower's hat coefficients.
pub fn augment_blocks(
    hats: &HatCoefficients,
    weights: &[f64],
    q1: &DMatrix<f64>,
    m1: &DMatrix<f64>,
    r1: &DMatrix<f64>,
) -> AugmentedBlocks {
    let n = hats.ahat.nrows();
    let zn = DMatrix::zeros(n, n);
    AugmentedBlocks {
        n,
        weights: weights.to_vec(),
        aa: diag2(&hats.ahat),
        bb2: anti2(&hats.bhat2),
        hh_hat: anti2(&hats.hhat2),
        kk_hat: hats.khat2.iter().map(anti2).collect(),
        bb1: top(&hats.bhat1),
        cc: diag2(&hats.chat),
        hh_tilde: anti2(&hats.htilde2),
        kk_tilde: hats.ktilde2.iter().map(anti2).collect(),
        dd1: top(&hats.dhat1),
        ff: hats.fhat.iter().map(diag2).collect(),
        qq: block2(q1, &zn, &zn, &zn),
        kk_bar: hats
            .kbar2
            .iter()
            .map(|row| row.iter().map(anti2).collect())
            .collect(),
        gg1: hats.ghat1.iter().map(top).collect(),
        hh1: right(&hats.hhat1),
        kk1: hats.khat1.iter().map(right).collect(),
        mm1: block2(m1, &zn, &zn, &zn),
        r1: r1.clone(),
    }
}

/// Augmented model at every node of the follower solution.
pub fn augment(follower: &FollowerSolution) -> AugmentedModel {
    let (model, costs) = (&follower.model, &follower.costs);
    let weights = model.weights();
    AugmentedModel {
        nodes: (0..model.grid.len())
            .map(|i| {
                let snap = model.snapshot_at_node(costs, i);
                augment_blocks(&follower.nodes[i].hats, &weights, &snap.q1, &costs.m1, &snap.r1)
            })
            .collect(),
    }
}

impl AugmentedBlocks {
    /// Collapse to the single unit-jump mark used by Case I. A jump-free
    /// model with several marks collapses to one zero mark of total intensity.
    pub fn unit_jump_view(&self) -> AugmentedBlocks {
        if self.weights.len() == 1 {
            return self.clone();
        }
        let lam: f64 = self.weights.iter().sum();
        let zero = |m: &DMatrix<f64>| DMatrix::zeros(m.nrows(), m.ncols());
        AugmentedBlocks {
            weights: vec![lam],
            kk_hat: vec![zero(&self.kk_hat[0])],
            kk_tilde: vec![zero(&self.kk_tilde[0])],
            ff: vec![zero(&self.ff[0])],
            kk_bar: vec![vec![zero(&self.kk_bar[0][0])]],
            gg1: vec![zero(&self.gg1[0])],
            kk1: vec![zero(&self.kk1[0])],
            ..self.clone()
        }
    }

    pub fn is_jump_free(&self) -> bool {
        let z = |v: &[DMatrix<f64>]| v.iter().all(|m| m.iter().all(|x| *x == 0.0));
        z(&self.kk_hat)
            && z(&self.kk_tilde)
            && z(&self.ff)
            && z(&self.gg1)
            && z(&self.kk1)
            && self.kk_bar.iter().all(|r| z(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaderCase {
    CaseI,
    CaseII,
}

impl LeaderCase {
    pub fn label(&self) -> &'static str {
        match self {
            LeaderCase::CaseI => "case1",
            LeaderCase::CaseII => "case2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseChoice {
    Auto,
    Case1,
    Case2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionPath {
    Schur,
    Dense,
}

/// Case I quantities at one time.
#[derive(Debug, Clone)]
pub struct Case1Gains {
    pub a11: DMatrix<f64>,
    pub a12: DMatrix<f64>,
    pub a21: DMatrix<f64>,
    pub a22: DMatrix<f64>,
    pub b11: DMatrix<f64>,
    pub b12: DMatrix<f64>,
    pub b21: DMatrix<f64>,
    pub b22: DMatrix<f64>,
    pub ahat11: DMatrix<f64>,
    pub ahat12: DMatrix<f64>,
    pub ahat21: DMatrix<f64>,
    pub ahat22: DMatrix<f64>,
    pub r1cal: DMatrix<f64>,
    pub h1cal: DMatrix<f64>,
    pub f11: DMatrix<f64>,
    pub f12: DMatrix<f64>,
    pub f21: DMatrix<f64>,
    pub f22: DMatrix<f64>,
    pub path: InversionPath,
    /// Max entry gap between the Schur and dense inverses, when both were formed.
    pub schur_dense_gap: Option<f64>,
    /// Condition numbers of `𝒜₁₁`, `𝒜₂₂`, the two Schur complements and `𝒜`.
    pub block_conds: [f64; 5],
}

impl Case1Gains {
    pub fn assembled_a(&self) -> DMatrix<f64> {
        block2(&self.a11, &self.a12, &self.a21, &self.a22)
    }

    pub fn assembled_ahat(&self) -> DMatrix<f64> {
        block2(&self.ahat11, &self.ahat12, &self.ahat21, &self.ahat22)
    }
}

/// Case II quantities at one time.
#[derive(Debug, Clone)]
pub struct Case2Gains {
    pub rhat1cal: DMatrix<f64>,
    pub bhat1cal: DMatrix<f64>,
    pub f1: DMatrix<f64>,
    pub f2: Vec<DMatrix<f64>>,
    /// Condition number of `I − 𝒫ℍ̃`.
    pub cond: f64,
}

#[derive(Debug, Clone)]
pub enum CaseGains {
    CaseI(Box<Case1Gains>),
    CaseII(Case2Gains),
}

/// Everything the equilibrium and the simulator need at one time.
#[derive(Debug, Clone)]
pub struct LeaderNode {
    /// `ū₁ = −k1 𝒳`.
    pub k1: DMatrix<f64>,
    /// `ℛ₁` or `𝓡̂₁`.
    pub r1cal: DMatrix<f64>,
    /// `ℋ₁` or `𝓑̂₁`.
    pub h1cal: DMatrix<f64>,
    pub r1cal_cond: f64,
    /// `𝒵 = zmap 𝒳`.
    pub zmap: DMatrix<f64>,
    /// `𝒦_k = kmap[k] 𝒳`, aligned with the blocks' weights.
    pub kmap: Vec<DMatrix<f64>>,
    pub a_cl: DMatrix<f64>,
    pub c_cl: DMatrix<f64>,
    pub f_cl: Vec<DMatrix<f64>>,
    pub detail: CaseGains,
}

fn singular_block(which: &'static str, time: f64, cond: f64) -> SolveError {
    SolveError::SingularBlock { which, time, cond }
}

fn inv_block(m: &DMatrix<f64>, which: &'static str, s: f64) -> Result<DMatrix<f64>> {
    capped_inverse(m, BLOCK_COND_CAP)
        .map(|(inv, _)| inv)
        .map_err(|cond| singular_block(which, s, cond))
}

fn schur_inverse(
    a11: &DMatrix<f64>,
    a12: &DMatrix<f64>,
    a21: &DMatrix<f64>,
    a22: &DMatrix<f64>,
    s: f64,
) -> Result<[DMatrix<f64>; 4]> {
    let a11i = inv_block(a11, "A11", s)?;
    let a22i = inv_block(a22, "A22", s)?;
    let s1 = a11 - a12 * &a22i * a21;
    let s2 = a22 - a21 * &a11i * a12;
    let s1i = inv_block(&s1, "A11-A12*inv(A22)*A21", s)?;
    let s2i = inv_block(&s2, "A22-A21*inv(A11)*A12", s)?;
    Ok([
        s1i.clone(),
        -&a11i * a12 * &s2i,
        -&a22i * a21 * &s1i,
        s2i,
    ])
}

fn split4(m: &DMatrix<f64>, k: usize) -> [DMatrix<f64>; 4] {
    [
        linalg::block(m, 0, 0, k, k),
        linalg::block(m, 0, 1, k, k),
        linalg::block(m, 1, 0, k, k),
        linalg::block(m, 1, 1, k, k),
    ]
}

/// Case I gains for a given `𝒫`. `cross_check` also forms the dense inverse
/// when the Schur path ran and records the gap.
pub fn case1_gains(pcal: &DMatrix<f64>, aug: &AugmentedBlocks, s: f64, cross_check: bool) -> Result<Case1Gains> {
    let k = 2 * aug.n;
    let lam = aug.weights[0];
    let id = DMatrix::<f64>::identity(k, k);
    let (kh, kt, kb, ff, gg1, kk1) = (
        &aug.kk_hat[0],
        &aug.kk_tilde[0],
        &aug.kk_bar[0][0],
        &aug.ff[0],
        &aug.gg1[0],
        &aug.kk1[0],
    );
    let a11 = &id - pcal * &aug.hh_tilde;
    let a12 = -(pcal * kt) * lam;
    let a21 = -(pcal * kt.transpose());
    let a22 = &id - (pcal * kb) * lam;
    let b11 = pcal * &aug.cc + pcal * aug.hh_hat.transpose() * pcal;
    let b12 = pcal * &aug.dd1;
    let b21 = pcal * (ff + kh.transpose() * pcal);
    let b22 = pcal * gg1;

    let full = block2(&a11, &a12, &a21, &a22);
    let c11 = condition_number(&a11);
    let c22 = condition_number(&a22);
    let (cs1, cs2) = if c11.is_finite() && c22.is_finite() {
        let a11i = a11.clone().try_inverse();
        let a22i = a22.clone().try_inverse();
        match (a11i, a22i) {
            (Some(a11i), Some(a22i)) => (
                condition_number(&(&a11 - &a12 * &a22i * &a21)),
                condition_number(&(&a22 - &a21 * &a11i * &a12)),
            ),
            _ => (f64::INFINITY, f64::INFINITY),
        }
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let schur_ok = [c11, c22, cs1, cs2].iter().all(|c| *c <= SCHUR_COND_LIMIT);
    let mut cfull = f64::NAN;
    let (ahat, path, gap) = if schur_ok {
        let blocks = schur_inverse(&a11, &a12, &a21, &a22, s)?;
        let gap = if cross_check {
            match capped_inverse(&full, BLOCK_COND_CAP) {
                Ok((dense, c)) => {
                    cfull = c;
                    let sch = block2(&blocks[0], &blocks[1], &blocks[2], &blocks[3]);
                    Some(linalg::max_abs(&(sch - dense)))
                }
                Err(c) => {
                    cfull = c;
                    None
                }
            }
        } else {
            None
        };
        (blocks, InversionPath::Schur, gap)
    } else {
        let (dense, c) = capped_inverse(&full, BLOCK_COND_CAP).map_err(|c| singular_block("A", s, c))?;
        cfull = c;
        (split4(&dense, k), InversionPath::Dense, None)
    };
    let [ahat11, ahat12, ahat21, ahat22] = ahat;

    let f11 = &ahat11 * &b11 + &ahat12 * &b21;
    let f12 = &ahat11 * &b12 + &ahat12 * &b22;
    let f21 = &ahat21 * &b11 + &ahat22 * &b21;
    let f22 = &ahat21 * &b12 + &ahat22 * &b22;
    let r1cal = &aug.r1 + aug.dd1.transpose() * &f12 + gg1.transpose() * &f22 * lam;
    let h1cal = aug.bb1.transpose() * pcal
        + &aug.hh1
        + kk1 * lam
        + aug.dd1.transpose() * &f11
        + gg1.transpose() * &f21 * lam;
    Ok(Case1Gains {
        a11,
        a12,
        a21,
        a22,
        b11,
        b12,
        b21,
        b22,
        ahat11,
        ahat12,
        ahat21,
        ahat22,
        r1cal,
        h1cal,
        f11,
        f12,
        f21,
        f22,
        path,
        schur_dense_gap: gap,
        block_conds: [c11, c22, cs1, cs2, cfull],
    })
}

/// Case II gains for a given `𝒫`.
pub fn case2_gains(pcal: &DMatrix<f64>, aug: &AugmentedBlocks, s: f64) -> Result<Case2Gains> {
    let k = 2 * aug.n;
    let id = DMatrix::<f64>::identity(k, k);
    let (minv, cond) = capped_inverse(&(&id - pcal * &aug.hh_tilde), BLOCK_COND_CAP)
        .map_err(|c| singular_block("I-P*Htilde", s, c))?;
    let mut rhat1cal = &aug.r1 + aug.dd1.transpose() * &minv * pcal * &aug.dd1;
    let diff = pcal * &aug.cc + pcal * aug.hh_hat.transpose() * pcal;
    let mut bhat1cal = aug.bb1.transpose() * pcal + &aug.hh1 + aug.dd1.transpose() * &minv * &diff;
    for (j, w) in aug.weights.iter().enumerate() {
        rhat1cal += aug.gg1[j].transpose() * pcal * &aug.gg1[j] * *w;
        bhat1cal += &aug.kk1[j] * *w + aug.gg1[j].transpose() * pcal * &aug.ff[j] * *w;
    }
    let (r1inv, _) = invert_r1cal(&rhat1cal, s)?;
    let k1 = &r1inv * &bhat1cal;
    let f1 = &minv * (diff - pcal * &aug.dd1 * &k1);
    let f2 = (0..aug.weights.len())
        .map(|j| pcal * &aug.ff[j] - pcal * &aug.gg1[j] * &k1)
        .collect();
    Ok(Case2Gains {
        rhat1cal,
        bhat1cal,
        f1,
        f2,
        cond,
    })
}

fn invert_r1cal(r: &DMatrix<f64>, s: f64) -> Result<(DMatrix<f64>, f64)> {
    capped_inverse(r, GAIN_COND_CAP).map_err(|cond| SolveError::SingularGain {
        which: "R1cal",
        time: s,
        cond,
    })
}

/// Gains, state maps and closed-loop matrices for either case.
pub fn leader_node(
    case: LeaderCase,
    pcal: &DMatrix<f64>,
    aug: &AugmentedBlocks,
    s: f64,
    cross_check: bool,
) -> Result<LeaderNode> {
    match case {
        LeaderCase::CaseI => {
            let g = case1_gains(pcal, aug, s, cross_check)?;
            let lam = aug.weights[0];
            let (rinv, cond) = invert_r1cal(&g.r1cal, s)?;
            let k1 = &rinv * &g.h1cal;
            let zmap = &g.f11 - &g.f12 * &k1;
            let kmap = &g.f21 - &g.f22 * &k1;
            let a_cl = &aug.aa + &aug.bb2 * pcal + &aug.hh_hat * &zmap + &aug.kk_hat[0] * &kmap * lam
                - &aug.bb1 * &k1;
            let c_cl = &aug.cc + aug.hh_hat.transpose() * pcal + &aug.hh_tilde * &zmap
                + &aug.kk_tilde[0] * &kmap * lam
                - &aug.dd1 * &k1;
            let f_cl = &aug.ff[0] + aug.kk_hat[0].transpose() * pcal + aug.kk_tilde[0].transpose() * &zmap
                + &aug.kk_bar[0][0] * &kmap * lam
                - &aug.gg1[0] * &k1;
            Ok(LeaderNode {
                r1cal: g.r1cal.clone(),
                h1cal: g.h1cal.clone(),
                r1cal_cond: cond,
                k1,
                zmap,
                kmap: vec![kmap],
                a_cl,
                c_cl,
                f_cl: vec![f_cl],
                detail: CaseGains::CaseI(Box::new(g)),
            })
        }
        LeaderCase::CaseII => {
            let g = case2_gains(pcal, aug, s)?;
            let (rinv, cond) = invert_r1cal(&g.rhat1cal, s)?;
            let k1 = &rinv * &g.bhat1cal;
            let a_cl = &aug.aa + &aug.bb2 * pcal + &aug.hh_hat * &g.f1 - &aug.bb1 * &k1;
            let c_cl = &aug.cc + aug.hh_hat.transpose() * pcal + &aug.hh_tilde * &g.f1 - &aug.dd1 * &k1;
            let f_cl = (0..aug.weights.len())
                .map(|j| &aug.ff[j] - &aug.gg1[j] * &k1)
                .collect();
            Ok(LeaderNode {
                r1cal: g.rhat1cal.clone(),
                h1cal: g.bhat1cal.clone(),
                r1cal_cond: cond,
                k1,
                zmap: g.f1.clone(),
                kmap: g.f2.clone(),
                a_cl,
                c_cl,
                f_cl,
                detail: CaseGains::CaseII(g),
            })
        }
    }
}

/// `d𝒫/ds` from a node's gains.
pub fn leader_rhs(pcal: &DMatrix<f64>, aug: &AugmentedBlocks, node: &LeaderNode) -> DMatrix<f64> {
    let mut body = aug.aa.transpose() * pcal + pcal * &aug.aa + &aug.qq + pcal * &aug.bb2 * pcal
        + (aug.cc.transpose() + pcal * &aug.hh_hat) * &node.zmap;
    let mut h1t = aug.hh1.transpose() + pcal * &aug.bb1;
    for (j, w) in aug.weights.iter().enumerate() {
        body += (aug.ff[j].transpose() + pcal * &aug.kk_hat[j]) * &node.kmap[j] * *w;
        h1t += aug.kk1[j].transpose() * *w;
    }
    body -= h1t * &node.k1;
    -body
}

/// Case-appropriate view of the augmented blocks.
pub fn case_view(case: LeaderCase, blocks: AugmentedBlocks) -> AugmentedBlocks {
    match case {
        LeaderCase::CaseI => blocks.unit_jump_view(),
        LeaderCase::CaseII => blocks,
    }
}

fn stage_blocks(case: LeaderCase, snap: &Snapshot, p: &DMatrix<f64>, m1: &DMatrix<f64>) -> Result<AugmentedBlocks> {
    let fnode = follower_node(snap, p)?;
    Ok(case_view(
        case,
        augment_blocks(&fnode.hats, &snap.weights, &snap.q1, m1, &snap.r1),
    ))
}

#[derive(Debug, Clone)]
pub struct LeaderSolution {
    pub case: LeaderCase,
    pub pcal: GridFunction<DMatrix<f64>>,
    /// Case view of the augmented blocks at each node.
    pub aug: Vec<AugmentedBlocks>,
    pub nodes: Vec<LeaderNode>,
}

impl LeaderSolution {
    pub fn n(&self) -> usize {
        self.aug[0].n
    }

    /// Upper-left n×n block of `𝒫` at node `i`.
    pub fn p11(&self, i: usize) -> DMatrix<f64> {
        let n = self.n();
        linalg::block(&self.pcal.values[i], 0, 0, n, n)
    }
}

/// Pick the leader case for a model.
pub fn resolve_case(model: &ModelSpec, choice: CaseChoice) -> Result<LeaderCase> {
    let (c1, c2) = (model.case1_eligible(), model.case2_eligible());
    match choice {
        CaseChoice::Case1 if c1 => Ok(LeaderCase::CaseI),
        CaseChoice::Case1 => Err(SolveError::Ineligible(
            "case1 needs unit jumps (or no jump coefficients)".into(),
        )),
        CaseChoice::Case2 if c2 => Ok(LeaderCase::CaseII),
        CaseChoice::Case2 => Err(SolveError::Ineligible("case2 needs G2 = 0 for every mark".into())),
        CaseChoice::Auto if c1 => Ok(LeaderCase::CaseI),
        CaseChoice::Auto if c2 => Ok(LeaderCase::CaseII),
        CaseChoice::Auto => Err(SolveError::Ineligible(
            "marked jumps with G2 != 0 admit neither case; only the follower problem is solvable".into(),
        )),
    }
}

/// Integrate `𝒫` backward from `𝕄₁`. `P` is integrated alongside so every
/// RK4 stage sees exact follower coefficients; its iterates reproduce
/// `follower.p` exactly.
pub fn solve_leader(follower: &FollowerSolution, case: LeaderCase) -> Result<LeaderSolution> {
    let (model, costs) = (&follower.model, &follower.costs);
    match case {
        LeaderCase::CaseI if !model.case1_eligible() => {
            return Err(SolveError::Ineligible("case1 needs unit jumps (or no jump coefficients)".into()))
        }
        LeaderCase::CaseII if !model.case2_eligible() => {
            return Err(SolveError::Ineligible("case2 needs G2 = 0 for every mark".into()))
        }
        _ => {}
    }
    let grid = model.grid;
    let n = model.n;
    let zn = DMatrix::zeros(n, n);
    let mm1 = block2(&costs.m1, &zn, &zn, &zn);
    let joint = integrate_backward_with(
        |s, (p, pcal): &(DMatrix<f64>, DMatrix<f64>)| {
            let snap = model.snapshot(costs, s);
            let dp = follower_riccati_rhs(&snap, p)?;
            let aug = stage_blocks(case, &snap, p, &costs.m1)?;
            let node = leader_node(case, pcal, &aug, s, false)?;
            Ok((dp, leader_rhs(pcal, &aug, &node)))
        },
        (costs.m2.clone(), mm1),
        &grid,
        |(p, pcal)| (linalg::symmetrize(&p), pcal),
    )?;
    let pcal = joint.map(|(_, pc)| pc.clone());
    let aug: Vec<AugmentedBlocks> = augment(follower)
        .nodes
        .into_iter()
        .map(|b| case_view(case, b))
        .collect();
    let nodes = (0..grid.len())
        .map(|i| leader_node(case, &pcal.values[i], &aug[i], grid.node(i), true))
        .collect::<Result<Vec<_>>>()?;
    Ok(LeaderSolution { case, pcal, aug, nodes })
}

pub fn solve_leader_isrde_case1(follower: &FollowerSolution) -> Result<LeaderSolution> {
    solve_leader(follower, LeaderCase::CaseI)
}

pub fn solve_leader_isrde_case2(follower: &FollowerSolution) -> Result<LeaderSolution> {
    solve_leader(follower, LeaderCase::CaseII)
}

/// `aᵀ𝒫₁₁(t0)a`.
pub fn leader_optimal_cost(sol: &LeaderSolution, a: &nalgebra::DVector<f64>) -> f64 {
    linalg::quad_form(&sol.p11(0), a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::follower::solve_follower_isrde;
    use crate::model::{reference, strip_jumps, Coef};
    use nalgebra::DVector;

    fn m1x1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn block_layout_scalar() {
        let (m, c) = reference::case1(10);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let aug = augment(&f);
        let h = &f.nodes[3].hats;
        let b = &aug.nodes[3];
        assert_eq!(b.aa, DMatrix::from_row_slice(2, 2, &[h.ahat[(0, 0)], 0.0, 0.0, h.ahat[(0, 0)]]));
        assert_eq!(b.bb2, DMatrix::from_row_slice(2, 2, &[0.0, h.bhat2[(0, 0)], h.bhat2[(0, 0)], 0.0]));
        assert_eq!(b.qq, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(b.mm1, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(b.bb1, DMatrix::from_row_slice(2, 1, &[h.bhat1[(0, 0)], 0.0]));
        assert_eq!(b.hh1, DMatrix::from_row_slice(1, 2, &[0.0, h.hhat1[(0, 0)]]));
        assert!(linalg::asymmetry(&b.bb2) == 0.0 && linalg::asymmetry(&b.hh_tilde) == 0.0);
    }

    #[test]
    fn zero_hats_give_zero_blocks_except_weights() {
        let (m, c) = reference::case1(4);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let h = &f.nodes[0].hats;
        let zero = |x: &DMatrix<f64>| x * 0.0;
        let hz = HatCoefficients {
            ahat: zero(&h.ahat),
            bhat2: zero(&h.bhat2),
            hhat2: zero(&h.hhat2),
            khat2: h.khat2.iter().map(zero).collect(),
            bhat1: zero(&h.bhat1),
            chat: zero(&h.chat),
            htilde2: zero(&h.htilde2),
            ktilde2: h.ktilde2.iter().map(zero).collect(),
            dhat1: zero(&h.dhat1),
            fhat: h.fhat.iter().map(zero).collect(),
            kbar2: vec![vec![zero(&h.kbar2[0][0])]],
            ghat1: h.ghat1.iter().map(zero).collect(),
            hhat1: zero(&h.hhat1),
            khat1: h.khat1.iter().map(zero).collect(),
        };
        let b = augment_blocks(&hz, &[1.0], &m1x1(2.0), &m1x1(3.0), &m1x1(1.0));
        assert!(b.aa.iter().chain(b.bb2.iter()).chain(b.hh1.iter()).all(|x| *x == 0.0));
        assert_eq!(b.qq[(0, 0)], 2.0);
        assert_eq!(b.mm1[(0, 0)], 3.0);
    }

    #[test]
    fn zero_pcal_case1_gains() {
        let (m, c) = reference::case1(10);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let aug = &augment(&f).nodes[0];
        let g = case1_gains(&DMatrix::zeros(2, 2), aug, 0.0, true).unwrap();
        assert_eq!(g.assembled_ahat(), DMatrix::identity(4, 4));
        assert_eq!(g.r1cal, aug.r1);
        assert_eq!(g.h1cal, &aug.hh1 + &aug.kk1[0] * aug.weights[0]);
    }

    #[test]
    fn zero_pcal_case2_gains() {
        let (m, c) = reference::case2(10);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let aug = &augment(&f).nodes[0];
        let g = case2_gains(&DMatrix::zeros(2, 2), aug, 0.0).unwrap();
        assert_eq!(g.rhat1cal, aug.r1);
        let expect = &aug.hh1 + &aug.kk1[0] * aug.weights[0] + &aug.kk1[1] * aug.weights[1];
        assert!((&g.bhat1cal - expect).amax() < 1e-15);
        assert!(g.f1.iter().chain(g.f2.iter().flat_map(|m| m.iter())).all(|x| *x == 0.0));
    }

    #[test]
    fn block_inverse_is_inverse() {
        let (m, c) = reference::case1(50);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let sol = solve_leader_isrde_case1(&f).unwrap();
        for node in &sol.nodes {
            if let CaseGains::CaseI(g) = &node.detail {
                let prod = g.assembled_a() * g.assembled_ahat();
                assert!((prod - DMatrix::identity(4, 4)).amax() < 1e-8);
                assert_eq!(g.path, InversionPath::Schur);
                assert!(g.schur_dense_gap.unwrap() < 1e-8);
            } else {
                panic!("wrong case");
            }
        }
    }

    #[test]
    fn terminal_and_no_symmetrization() {
        let (m, c) = reference::case1(100);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let sol = solve_leader_isrde_case1(&f).unwrap();
        let zn = DMatrix::zeros(1, 1);
        assert_eq!(*sol.pcal.last(), block2(&c.m1, &zn, &zn, &zn));
        assert!(sol.pcal.values.iter().all(|p| p.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn zero_leader_data_gives_zero_pcal() {
        for case in [LeaderCase::CaseI, LeaderCase::CaseII] {
            let (mut m, mut c) = reference::case2(40);
            m.jumps = crate::model::JumpSpec::UnitJump { intensity: 1.0 };
            m.f.truncate(1);
            m.g1.truncate(1);
            m.g2.truncate(1);
            c.q1 = Coef::scalar(0.0);
            c.m1 = m1x1(0.0);
            m.b1 = Coef::scalar(0.0);
            m.d1 = Coef::scalar(0.0);
            m.g1 = vec![Coef::scalar(0.0)];
            let f = solve_follower_isrde(&m, &c).unwrap();
            let sol = solve_leader(&f, case).unwrap();
            assert!(sol.pcal.values.iter().all(|p| p.iter().all(|v| *v == 0.0)));
        }
    }

    #[test]
    fn jump_free_cases_agree() {
        for (m, c) in [reference::case1(200), reference::two_state(200)] {
            let m = strip_jumps(&m);
            let f = solve_follower_isrde(&m, &c).unwrap();
            let s1 = solve_leader_isrde_case1(&f).unwrap();
            let s2 = solve_leader_isrde_case2(&f).unwrap();
            for i in 0..m.grid.len() {
                assert!((&s1.pcal.values[i] - &s2.pcal.values[i]).amax() <= 1e-8);
                assert!((&s1.nodes[i].k1 - &s2.nodes[i].k1).amax() <= 1e-8);
            }
        }
    }

    #[test]
    fn small_intensity_approaches_jump_free() {
        let (m, c) = reference::case1(200);
        let solve = |m: &ModelSpec| {
            let f = solve_follower_isrde(m, &c).unwrap();
            solve_leader_isrde_case1(&f).unwrap().pcal.values[0].clone()
        };
        let base = solve(&strip_jumps(&m));
        let gap = |lam: f64| {
            let mut mm = m.clone();
            mm.jumps = crate::model::JumpSpec::UnitJump { intensity: lam };
            (solve(&mm) - &base).amax()
        };
        let (g1, g2) = (gap(1e-2), gap(5e-3));
        assert!(g1 < 0.05, "{g1}");
        assert!((g1 / g2 - 2.0).abs() < 0.1, "O(λ) ratio {}", g1 / g2);
    }

    #[test]
    fn resolve_case_rules() {
        let (m, _) = reference::case1(10);
        assert_eq!(resolve_case(&m, CaseChoice::Auto).unwrap(), LeaderCase::CaseI);
        assert!(resolve_case(&m, CaseChoice::Case2).is_err());
        let (m2, _) = reference::case2(10);
        assert_eq!(resolve_case(&m2, CaseChoice::Auto).unwrap(), LeaderCase::CaseII);
        assert!(resolve_case(&m2, CaseChoice::Case1).is_err());
        let mut m3 = m2.clone();
        m3.g2[1] = Coef::scalar(0.3);
        assert!(matches!(resolve_case(&m3, CaseChoice::Auto), Err(SolveError::Ineligible(_))));
    }

    #[test]
    fn optimal_cost_quadratic_form() {
        let (m, c) = reference::two_state(20);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let mut sol = solve_leader_isrde_case1(&f).unwrap();
        let mut p0 = DMatrix::zeros(4, 4);
        p0[(0, 0)] = 2.0;
        p0[(1, 1)] = 3.0;
        p0[(2, 3)] = 7.0;
        sol.pcal.values[0] = p0;
        assert_eq!(leader_optimal_cost(&sol, &DVector::from_vec(vec![1.0, 1.0])), 5.0);
        assert_eq!(leader_optimal_cost(&sol, &DVector::zeros(2)), 0.0);
    }
}
