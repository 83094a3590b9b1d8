//! Exact first and second moments of affine Euler schemes, and the
//! continuous-time Lyapunov equation for closed-loop quadratic costs.
//!
//! An Euler step has the form
//! `x' = x + (A x + a) Δt + Σ_j (C_j x + c_j) ξ_j`
//! with independent, mean-zero `ξ_j` of variance `v_j`. Mean and second
//! moment then propagate exactly, so the expectation of a left-rectangle
//! quadratic cost is available without sampling.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::integrators::integrate_backward;
use crate::linalg::quad_form;
use crate::model::TimeGrid;

#[derive(Debug, Clone)]
pub struct NoiseTerm {
    pub variance: f64,
    pub lin: DMatrix<f64>,
    pub constant: DVector<f64>,
}

/// One Euler step together with the running cost `xᵀWx + 2wᵀx + ω` charged on it.
#[derive(Debug, Clone)]
pub struct AffineStage {
    pub drift: DMatrix<f64>,
    pub drift_const: DVector<f64>,
    pub noise: Vec<NoiseTerm>,
    pub cost_w: DMatrix<f64>,
    pub cost_lin: DVector<f64>,
    pub cost_const: f64,
}

/// Expected left-rectangle cost `Σ Δt E[running] + E[xᵀ M x(T)]` of the scheme.
pub fn euler_expected_cost(x0: &DVector<f64>, dt: f64, stages: &[AffineStage], terminal: &DMatrix<f64>) -> f64 {
    let n = x0.len();
    let mut mu = x0.clone();
    let mut s = x0 * x0.transpose();
    let mut total = 0.0;
    for st in stages {
        total += dt * ((&st.cost_w * &s).trace() + 2.0 * st.cost_lin.dot(&mu) + st.cost_const);
        let m = DMatrix::<f64>::identity(n, n) + &st.drift * dt;
        let c = &st.drift_const * dt;
        let m_mu = &m * &mu;
        let mut s_next = &m * &s * m.transpose() + &m_mu * c.transpose() + &c * m_mu.transpose() + &c * c.transpose();
        for z in &st.noise {
            let l_mu = &z.lin * &mu;
            s_next += (&z.lin * &s * z.lin.transpose()
                + &l_mu * z.constant.transpose()
                + &z.constant * l_mu.transpose()
                + &z.constant * z.constant.transpose())
                * z.variance;
        }
        mu = m_mu + c;
        s = s_next;
    }
    total + (terminal * &s).trace()
}

/// Closed-loop linear dynamics `dX = A X ds + C X dB + Σ_k F_k X dÑ_k` at grid nodes.
#[derive(Debug, Clone)]
pub struct LinearClosedLoop {
    pub a: Vec<DMatrix<f64>>,
    pub c: Vec<DMatrix<f64>>,
    pub f: Vec<Vec<DMatrix<f64>>>,
    pub weights: Vec<f64>,
    /// Running cost weight `W` of `XᵀWX`.
    pub w: Vec<DMatrix<f64>>,
    pub terminal: DMatrix<f64>,
}

impl LinearClosedLoop {
    pub fn stages(&self, dt: f64) -> Vec<AffineStage> {
        let k = self.a[0].nrows();
        (0..self.a.len() - 1)
            .map(|i| {
                let mut noise = vec![NoiseTerm {
                    variance: dt,
                    lin: self.c[i].clone(),
                    constant: DVector::zeros(k),
                }];
                for (j, w) in self.weights.iter().enumerate() {
                    noise.push(NoiseTerm {
                        variance: w * dt,
                        lin: self.f[i][j].clone(),
                        constant: DVector::zeros(k),
                    });
                }
                AffineStage {
                    drift: self.a[i].clone(),
                    drift_const: DVector::zeros(k),
                    noise,
                    cost_w: self.w[i].clone(),
                    cost_lin: DVector::zeros(k),
                    cost_const: 0.0,
                }
            })
            .collect()
    }

    /// Expected cost of the Euler scheme started at `x0`.
    pub fn euler_cost(&self, x0: &DVector<f64>, dt: f64) -> f64 {
        euler_expected_cost(x0, dt, &self.stages(dt), &self.terminal)
    }

    /// Continuous-time cost `x0ᵀ Π(t0) x0` from the backward Lyapunov equation
    /// `Π' = −[AᵀΠ + ΠA + CᵀΠC + Σ w FᵀΠF + W]`, `Π(T) = terminal`, with the
    /// coefficients interpolated linearly between nodes.
    pub fn lyapunov_cost(&self, x0: &DVector<f64>, grid: &TimeGrid) -> Result<f64> {
        let interp = |v: &[DMatrix<f64>], s: f64| -> DMatrix<f64> {
            if let Some(i) = grid.node_index(s) {
                return v[i].clone();
            }
            let (i, t) = grid.locate(s);
            &v[i] * (1.0 - t) + &v[i + 1] * t
        };
        let fk: Vec<Vec<DMatrix<f64>>> = (0..self.weights.len())
            .map(|j| self.f.iter().map(|fs| fs[j].clone()).collect())
            .collect();
        let pi = integrate_backward(
            |s, p: &DMatrix<f64>| {
                let a = interp(&self.a, s);
                let c = interp(&self.c, s);
                let mut body = a.transpose() * p + p * &a + c.transpose() * p * &c + interp(&self.w, s);
                for (j, w) in self.weights.iter().enumerate() {
                    let f = interp(&fk[j], s);
                    body += f.transpose() * p * &f * *w;
                }
                Ok(-body)
            },
            self.terminal.clone(),
            grid,
        )?;
        Ok(quad_form(pi.first(), x0))
    }
}
