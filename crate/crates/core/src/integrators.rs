//! Fixed-step classical RK4 on the shared time grid, in either direction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SolveError};
use crate::model::TimeGrid;

/// Anything the RK4 march can combine linearly.
pub trait OdeState: Clone {
    /// `self + h * other`.
    fn add_scaled(&self, other: &Self, h: f64) -> Self;
    fn all_finite(&self) -> bool;
}

impl OdeState for DMatrix<f64> {
    fn add_scaled(&self, other: &Self, h: f64) -> Self {
        self + other * h
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl OdeState for DVector<f64> {
    fn add_scaled(&self, other: &Self, h: f64) -> Self {
        self + other * h
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl OdeState for f64 {
    fn add_scaled(&self, other: &Self, h: f64) -> Self {
        self + h * other
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl<X: OdeState, Y: OdeState> OdeState for (X, Y) {
    fn add_scaled(&self, other: &Self, h: f64) -> Self {
        (self.0.add_scaled(&other.0, h), self.1.add_scaled(&other.1, h))
    }
    fn all_finite(&self) -> bool {
        self.0.all_finite() && self.1.all_finite()
    }
}

/// One value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<X> {
    pub grid: TimeGrid,
    pub values: Vec<X>,
}

impl<X: Clone> GridFunction<X> {
    pub fn at_node(&self, i: usize) -> &X {
        &self.values[i]
    }

    pub fn first(&self) -> &X {
        &self.values[0]
    }

    pub fn last(&self) -> &X {
        &self.values[self.values.len() - 1]
    }

    pub fn map<Y>(&self, f: impl FnMut(&X) -> Y) -> GridFunction<Y> {
        GridFunction {
            grid: self.grid,
            values: self.values.iter().map(f).collect(),
        }
    }
}

impl<X: OdeState> GridFunction<X> {
    /// Linear interpolation between nodes; exact at nodes.
    pub fn eval(&self, s: f64) -> X {
        if let Some(i) = self.grid.node_index(s) {
            return self.values[i].clone();
        }
        let (i, theta) = self.grid.locate(s);
        self.values[i]
            .add_scaled(&self.values[i], -theta)
            .add_scaled(&self.values[i + 1], theta)
    }
}

fn check<X: OdeState>(x: &X, time: f64) -> Result<()> {
    if x.all_finite() {
        Ok(())
    } else {
        Err(SolveError::BlowUp { time })
    }
}

/// One RK4 step of size `h` (negative when marching backward).
pub fn rk4_step<X, F>(rhs: &mut F, s: f64, y: &X, h: f64) -> Result<X>
where
    X: OdeState,
    F: FnMut(f64, &X) -> Result<X>,
{
    let half = 0.5 * h;
    let k1 = rhs(s, y)?;
    check(&k1, s)?;
    let k2 = rhs(s + half, &y.add_scaled(&k1, half))?;
    check(&k2, s + half)?;
    let k3 = rhs(s + half, &y.add_scaled(&k2, half))?;
    check(&k3, s + half)?;
    let k4 = rhs(s + h, &y.add_scaled(&k3, h))?;
    check(&k4, s + h)?;
    let next = y
        .add_scaled(&k1, h / 6.0)
        .add_scaled(&k2, h / 3.0)
        .add_scaled(&k3, h / 3.0)
        .add_scaled(&k4, h / 6.0);
    check(&next, s + h)?;
    Ok(next)
}

/// March from `T` down to `t0`, applying `project` to each accepted step.
pub fn integrate_backward_with<X, F, P>(
    mut rhs: F,
    terminal: X,
    grid: &TimeGrid,
    mut project: P,
) -> Result<GridFunction<X>>
where
    X: OdeState,
    F: FnMut(f64, &X) -> Result<X>,
    P: FnMut(X) -> X,
{
    check(&terminal, grid.t_end)?;
    let mut values = vec![terminal.clone(); grid.len()];
    let mut y = terminal;
    for i in (0..grid.steps).rev() {
        let s = grid.node(i + 1);
        let h = grid.node(i) - s;
        y = project(rk4_step(&mut rhs, s, &y, h)?);
        values[i] = y.clone();
    }
    Ok(GridFunction { grid: *grid, values })
}

pub fn integrate_backward<X, F>(rhs: F, terminal: X, grid: &TimeGrid) -> Result<GridFunction<X>>
where
    X: OdeState,
    F: FnMut(f64, &X) -> Result<X>,
{
    integrate_backward_with(rhs, terminal, grid, |x| x)
}

pub fn integrate_forward<X, F>(mut rhs: F, initial: X, grid: &TimeGrid) -> Result<GridFunction<X>>
where
    X: OdeState,
    F: FnMut(f64, &X) -> Result<X>,
{
    check(&initial, grid.t0)?;
    let mut values = Vec::with_capacity(grid.len());
    values.push(initial.clone());
    let mut y = initial;
    for i in 0..grid.steps {
        let s = grid.node(i);
        y = rk4_step(&mut rhs, s, &y, grid.node(i + 1) - s)?;
        values.push(y.clone());
    }
    Ok(GridFunction { grid: *grid, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(steps: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, steps).unwrap()
    }

    fn riccati_error(steps: usize) -> f64 {
        let g = grid(steps);
        let sol = integrate_backward(|_, p: &f64| Ok(p * p), 1.0, &g).unwrap();
        (0..g.len())
            .map(|i| (sol.values[i] - 1.0 / (2.0 - g.node(i))).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_rhs_keeps_terminal() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let sol = integrate_backward(|_, x: &DMatrix<f64>| Ok(x * 0.0), m.clone(), &grid(7)).unwrap();
        assert!(sol.values.iter().all(|v| *v == m));
        let fw = integrate_forward(|_, x: &DMatrix<f64>| Ok(x * 0.0), m.clone(), &grid(7)).unwrap();
        assert!(fw.values.iter().all(|v| *v == m));
    }

    #[test]
    fn backward_riccati_closed_form() {
        assert!(riccati_error(1000) <= 1e-9);
        let g = grid(1000);
        let sol = integrate_backward(|_, p: &f64| Ok(p * p), 1.0, &g).unwrap();
        assert!((sol.first() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn backward_exponential() {
        let sol = integrate_backward(|_, p: &f64| Ok(-p), 1.0, &grid(1000)).unwrap();
        assert!((sol.first() - std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn forward_linear_is_exact_and_exponential_accurate() {
        let lin = integrate_forward(|_, _x: &f64| Ok(1.0), 0.0, &grid(10)).unwrap();
        assert!((lin.last() - 1.0).abs() < 1e-14);
        let exp = integrate_forward(|_, x: &f64| Ok(*x), 1.0, &grid(1000)).unwrap();
        assert!((exp.last() - std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn halving_step_gains_fourth_order() {
        let ratio = riccati_error(50) / riccati_error(100);
        assert!(ratio >= 12.0, "ratio {ratio}");
        let exp_err = |n: usize| {
            let g = grid(n);
            let s = integrate_forward(|_, x: &f64| Ok(*x), 1.0, &g).unwrap();
            (0..g.len())
                .map(|i| (s.values[i] - g.node(i).exp()).abs())
                .fold(0.0, f64::max)
        };
        assert!(exp_err(50) / exp_err(100) >= 12.0);
    }

    #[test]
    fn blow_up_is_reported_with_time() {
        let err = integrate_backward(|_, p: &f64| Ok(-p * p), 1.0, &TimeGrid::new(0.0, 3.0, 300).unwrap())
            .unwrap_err();
        let t = err.time().unwrap();
        assert!(matches!(err, SolveError::BlowUp { .. }));
        assert!(t < 2.0 + 0.05 && t > 1.5, "escape near s = 2, got {t}");
    }

    #[test]
    fn interpolation_between_nodes() {
        let g = grid(2);
        let f = GridFunction { grid: g, values: vec![0.0, 1.0, 4.0] };
        assert_eq!(f.eval(0.75), 2.5);
        assert_eq!(f.eval(1.0), 4.0);
    }
}
