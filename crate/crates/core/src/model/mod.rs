//! Pseudo-linear ODE models `x' = A(x, t; theta) x + B u`, observed through `y = C x`.
//!
//! A nonlinear vector field admits many pseudo-linear factorizations. The
//! library never factorizes automatically: every model supplies its own
//! `A(x, t; theta)`. Exogenous constant terms are absorbed by appending a
//! constant state `Z = 1` to the state vector; such components are declared
//! through [`PseudoLinearModel::with_fixed_initial`] so that profiling over the
//! initial condition leaves them untouched.

pub mod catalog;
pub mod semiparam;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `A(x, t; theta)`.
pub type SystemMatrixFn = dyn Fn(&DVector<f64>, f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Raw vector field `f(x, t; theta)`.
pub type VectorFieldFn = dyn Fn(&DVector<f64>, f64, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// Closed interval constraint on one parameter. Either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const UNBOUNDED: Bounds = Bounds {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    pub const POSITIVE: Bounds = Bounds {
        lower: 0.0,
        upper: f64::INFINITY,
    };

    pub fn new(lower: f64, upper: f64) -> Self {
        Bounds { lower, upper }
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower && value <= self.upper
    }

    /// Midpoint when both ends are finite.
    pub fn midpoint(&self) -> Option<f64> {
        (self.lower.is_finite() && self.upper.is_finite()).then(|| 0.5 * (self.lower + self.upper))
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds::UNBOUNDED
    }
}

#[derive(Clone)]
pub struct PseudoLinearModel {
    name: String,
    state_dim: usize,
    param_dim: usize,
    system_matrix: Arc<SystemMatrixFn>,
    control_matrix: DMatrix<f64>,
    obs_matrix: DMatrix<f64>,
    param_bounds: Vec<Bounds>,
    is_linear: bool,
    fixed_initial: Vec<Option<f64>>,
    weight_shape: DVector<f64>,
}

impl fmt::Debug for PseudoLinearModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PseudoLinearModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim())
            .field("obs_dim", &self.obs_dim())
            .field("param_dim", &self.param_dim)
            .field("is_linear", &self.is_linear)
            .finish()
    }
}

impl PseudoLinearModel {
    /// Builds a model, checking that `B` is `d x d_u` with independent
    /// columns and that `C` has `d` columns.
    pub fn new<F>(
        name: impl Into<String>,
        state_dim: usize,
        param_dim: usize,
        system_matrix: F,
        control_matrix: DMatrix<f64>,
        obs_matrix: DMatrix<f64>,
        is_linear: bool,
    ) -> Result<Self>
    where
        F: Fn(&DVector<f64>, f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        if state_dim == 0 || param_dim == 0 {
            return Err(Error::InvalidModel(
                "state and parameter dimensions must be positive".into(),
            ));
        }
        if control_matrix.nrows() != state_dim || control_matrix.ncols() == 0 {
            return Err(Error::InvalidModel(format!(
                "B must be {state_dim} x d_u with d_u >= 1, got {} x {}",
                control_matrix.nrows(),
                control_matrix.ncols()
            )));
        }
        if obs_matrix.ncols() != state_dim || obs_matrix.nrows() == 0 {
            return Err(Error::InvalidModel(format!(
                "C must have {state_dim} columns and at least one row, got {} x {}",
                obs_matrix.nrows(),
                obs_matrix.ncols()
            )));
        }
        if !has_full_column_rank(&control_matrix) {
            return Err(Error::InvalidModel(
                "B must have independent columns".into(),
            ));
        }
        let control_matrix_cols = control_matrix.ncols();
        Ok(PseudoLinearModel {
            name: name.into(),
            state_dim,
            param_dim,
            system_matrix: Arc::new(system_matrix),
            control_matrix,
            obs_matrix,
            param_bounds: vec![Bounds::UNBOUNDED; param_dim],
            is_linear,
            fixed_initial: vec![None; state_dim],
            weight_shape: DVector::from_element(control_matrix_cols, 1.0),
        })
    }

    pub fn with_bounds(mut self, bounds: Vec<Bounds>) -> Result<Self> {
        if bounds.len() != self.param_dim {
            return Err(Error::Dimension(format!(
                "expected {} parameter bounds, got {}",
                self.param_dim,
                bounds.len()
            )));
        }
        if bounds.iter().any(|b| !(b.lower < b.upper)) {
            return Err(Error::InvalidModel("empty parameter bound".into()));
        }
        self.param_bounds = bounds;
        Ok(self)
    }

    /// Declares initial-state components that are known constants (typically
    /// the `Z = 1` trick). They are excluded from initial-condition profiling
    /// and from co-estimation.
    pub fn with_fixed_initial(mut self, fixed: Vec<Option<f64>>) -> Result<Self> {
        if fixed.len() != self.state_dim {
            return Err(Error::Dimension(format!(
                "expected {} fixed-initial entries, got {}",
                self.state_dim,
                fixed.len()
            )));
        }
        self.fixed_initial = fixed;
        Ok(self)
    }

    /// Relative diagonal of the control weight: `U = lambda * diag(shape)`.
    pub fn with_weight_shape(mut self, shape: DVector<f64>) -> Result<Self> {
        if shape.len() != self.control_dim() || shape.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidModel(
                "weight shape must hold d_u positive finite entries".into(),
            ));
        }
        self.weight_shape = shape;
        Ok(self)
    }

    pub fn with_obs_matrix(mut self, obs_matrix: DMatrix<f64>) -> Result<Self> {
        if obs_matrix.ncols() != self.state_dim || obs_matrix.nrows() == 0 {
            return Err(Error::InvalidModel("C has the wrong shape".into()));
        }
        self.obs_matrix = obs_matrix;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_matrix.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_matrix.nrows()
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn is_linear(&self) -> bool {
        self.is_linear
    }

    pub fn control_matrix(&self) -> &DMatrix<f64> {
        &self.control_matrix
    }

    pub fn obs_matrix(&self) -> &DMatrix<f64> {
        &self.obs_matrix
    }

    pub fn param_bounds(&self) -> &[Bounds] {
        &self.param_bounds
    }

    pub fn fixed_initial(&self) -> &[Option<f64>] {
        &self.fixed_initial
    }

    /// Indices of initial-state components that are free.
    pub fn free_initial_indices(&self) -> Vec<usize> {
        (0..self.state_dim)
            .filter(|&i| self.fixed_initial[i].is_none())
            .collect()
    }

    /// Control weight `U = lambda * diag(shape)`; `lambda * I` unless a shape
    /// was set.
    pub fn weight_matrix(&self, lambda: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&(&self.weight_shape * lambda))
    }

    pub fn system_matrix(&self, x: &DVector<f64>, t: f64, theta: &DVector<f64>) -> DMatrix<f64> {
        (self.system_matrix)(x, t, theta)
    }

    /// The unperturbed vector field `A(x, t; theta) x`.
    pub fn vector_field(&self, x: &DVector<f64>, t: f64, theta: &DVector<f64>) -> DVector<f64> {
        self.system_matrix(x, t, theta) * x
    }

    pub fn theta_in_bounds(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.param_dim
            && theta
                .iter()
                .zip(&self.param_bounds)
                .all(|(v, b)| b.contains(*v))
    }

    /// Overwrites fixed components of `x0` with their declared constants.
    pub fn apply_fixed_initial(&self, x0: &mut DVector<f64>) {
        for (i, fixed) in self.fixed_initial.iter().enumerate() {
            if let Some(v) = fixed {
                x0[i] = *v;
            }
        }
    }

    /// Least-squares preimage `C^+ y0` of a first observation, with fixed
    /// components set to their constants.
    pub fn reference_initial(&self, y0: &DVector<f64>) -> DVector<f64> {
        let pinv = self
            .obs_matrix
            .clone()
            .pseudo_inverse(1e-12)
            .unwrap_or_else(|_| DMatrix::zeros(self.state_dim, self.obs_dim()));
        let mut x0 = pinv * y0;
        self.apply_fixed_initial(&mut x0);
        x0
    }
}

/// Smallest singular value above `1e-12` times the largest.
pub fn has_full_column_rank(m: &DMatrix<f64>) -> bool {
    if m.ncols() > m.nrows() {
        return false;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > 1e-12 * max
}
