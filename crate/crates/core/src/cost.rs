//! Quadratic stage cost and terminal cost candidates, all in error coordinates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Control, State};
use crate::error::{check_dim, Error, Result};

/// `c(x̃, u) = x̃'Qx̃ + u'Ru`, summed per step without `dt` scaling.
#[derive(Debug, Clone, PartialEq)]
#[allow(non_snake_case)]
pub struct QuadraticCost {
    pub Q: DMatrix<f64>,
    pub R: DMatrix<f64>,
}

impl QuadraticCost {
    /// Validates symmetry, `Q ⪰ 0` and `R ≻ 0`.
    #[allow(non_snake_case)]
    pub fn new(Q: DMatrix<f64>, R: DMatrix<f64>) -> Result<Self> {
        check_square_symmetric("Q", &Q)?;
        check_square_symmetric("R", &R)?;
        let scale = Q.amax().max(1.0);
        if Q.symmetric_eigenvalues().min() < -1e-12 * scale {
            return Err(Error::InvalidArgument("Q must be positive semidefinite".into()));
        }
        if R.clone().cholesky().is_none() {
            return Err(Error::InvalidArgument("R must be positive definite".into()));
        }
        Ok(Self { Q, R })
    }

    pub fn diagonal(q: &[f64], r: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&State::from_column_slice(q)),
            DMatrix::from_diagonal(&State::from_column_slice(r)),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.Q.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.R.nrows()
    }

    pub fn incremental(&self, e: &State, u: &Control) -> Result<f64> {
        check_dim("error state", e.len(), self.state_dim())?;
        check_dim("control", u.len(), self.control_dim())?;
        Ok(self.eval(e, u))
    }

    pub(crate) fn eval(&self, e: &State, u: &Control) -> f64 {
        e.dot(&(&self.Q * e)) + u.dot(&(&self.R * u))
    }
}

fn check_square_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "{name} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * m.amax().max(1.0) {
        return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    None,
    Riccati,
    RiccatiFloored,
}

/// Terminal cost `Φ(x̃_T)`: zero, `x̃'Px̃`, or `max(x̃'Px̃, M)`.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalCost {
    None,
    Riccati { p: DMatrix<f64> },
    RiccatiFloored { p: DMatrix<f64>, level: f64 },
}

impl TerminalCost {
    pub fn kind(&self) -> TerminalKind {
        match self {
            TerminalCost::None => TerminalKind::None,
            TerminalCost::Riccati { .. } => TerminalKind::Riccati,
            TerminalCost::RiccatiFloored { .. } => TerminalKind::RiccatiFloored,
        }
    }

    pub fn floored(p: DMatrix<f64>, level: f64) -> Result<Self> {
        if !(level >= 0.0 && level.is_finite()) {
            return Err(Error::InvalidArgument(format!("floor level must be >= 0, got {level}")));
        }
        Ok(TerminalCost::RiccatiFloored { p, level })
    }

    pub fn evaluate(&self, e: &State) -> Result<f64> {
        match self {
            TerminalCost::None => Ok(0.0),
            TerminalCost::Riccati { p } | TerminalCost::RiccatiFloored { p, .. } => {
                check_dim("error state", e.len(), p.nrows())?;
                Ok(self.eval(e))
            }
        }
    }

    pub(crate) fn eval(&self, e: &State) -> f64 {
        match self {
            TerminalCost::None => 0.0,
            TerminalCost::Riccati { p } => e.dot(&(p * e)),
            TerminalCost::RiccatiFloored { p, level } => e.dot(&(p * e)).max(*level),
        }
    }

    /// Gradient and Hessian of the active branch. When the floor is active
    /// (ties included) both are zero.
    pub(crate) fn derivatives(&self, e: &State) -> (State, DMatrix<f64>) {
        let n = e.len();
        match self {
            TerminalCost::None => (State::zeros(n), DMatrix::zeros(n, n)),
            TerminalCost::Riccati { p } => (p * e * 2.0, p * 2.0),
            TerminalCost::RiccatiFloored { p, level } => {
                if e.dot(&(p * e)) <= *level {
                    (State::zeros(n), DMatrix::zeros(n, n))
                } else {
                    (p * e * 2.0, p * 2.0)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> State {
        State::from_column_slice(xs)
    }

    #[test]
    fn incremental_examples() {
        let c = QuadraticCost::diagonal(&[1.0, 1.0], &[1.0]).unwrap();
        assert_eq!(c.incremental(&v(&[0.0, 0.0]), &v(&[0.0])).unwrap(), 0.0);
        assert_eq!(c.incremental(&v(&[1.0, 2.0]), &v(&[3.0])).unwrap(), 14.0);
        assert!(c.incremental(&v(&[1.0]), &v(&[3.0])).is_err());
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(QuadraticCost::diagonal(&[1.0, -1.0], &[1.0]).is_err());
        assert!(QuadraticCost::diagonal(&[1.0], &[0.0]).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QuadraticCost::new(asym, DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn gradient_vanishes_at_origin() {
        let c = QuadraticCost::diagonal(&[1.0, 1.0, 0.1, 0.1], &[0.1]).unwrap();
        let h = 1e-6;
        for j in 0..5 {
            let mut z = State::zeros(5);
            z[j] = h;
            let fp = c.eval(&z.rows(0, 4).into(), &z.rows(4, 1).into());
            z[j] = -h;
            let fm = c.eval(&z.rows(0, 4).into(), &z.rows(4, 1).into());
            assert!(((fp - fm) / (2.0 * h)).abs() < 1e-9);
        }
    }

    #[test]
    fn terminal_examples() {
        let p = DMatrix::from_diagonal(&v(&[3.0, 1.0]));
        let ric = TerminalCost::Riccati { p: p.clone() };
        assert_eq!(ric.evaluate(&v(&[0.0, 0.0])).unwrap(), 0.0);
        let fl = TerminalCost::floored(p, 5.0).unwrap();
        assert_eq!(fl.evaluate(&v(&[1.0, 0.0])).unwrap(), 5.0);
        assert_eq!(fl.evaluate(&v(&[0.0, 3.0])).unwrap(), 9.0);
        assert_eq!(TerminalCost::None.evaluate(&v(&[4.0, 4.0])).unwrap(), 0.0);
        assert!(ric.evaluate(&v(&[1.0])).is_err());
        assert!(TerminalCost::floored(DMatrix::identity(2, 2), -1.0).is_err());
    }

    #[test]
    fn floored_derivatives_vanish_inside() {
        let p = DMatrix::from_diagonal(&v(&[3.0, 1.0]));
        let fl = TerminalCost::floored(p, 5.0).unwrap();
        let (g, h) = fl.derivatives(&v(&[1.0, 0.0]));
        assert_eq!(g.amax(), 0.0);
        assert_eq!(h.amax(), 0.0);
        let (g, _) = fl.derivatives(&v(&[0.0, 3.0]));
        assert_eq!(g, v(&[0.0, 6.0]));
    }

    proptest! {
        #[test]
        fn incremental_is_even(a in -10.0..10.0f64, b in -10.0..10.0f64, u in -10.0..10.0f64) {
            let c = QuadraticCost::diagonal(&[1.0, 0.1], &[0.1]).unwrap();
            let plus = c.eval(&v(&[a, b]), &v(&[u]));
            let minus = c.eval(&v(&[-a, -b]), &v(&[-u]));
            prop_assert_eq!(plus, minus);
            prop_assert!(plus >= 0.0);
        }

        #[test]
        fn floor_dominates_riccati(a in -5.0..5.0f64, b in -5.0..5.0f64, level in 0.0..20.0f64) {
            let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
            let e = v(&[a, b]);
            let ric = TerminalCost::Riccati { p: p.clone() }.eval(&e);
            let fl = TerminalCost::floored(p, level).unwrap().eval(&e);
            prop_assert!(fl >= ric);
            prop_assert_eq!(fl == ric, ric >= level);
        }
    }
}
