//! State extension for time-varying parameters.
//!
//! A functional parameter `theta_f(t)` in `R^{d_f}` is carried by two extra
//! blocks of state, `z1` (the parameter) and `z2` (its derivative), with
//! `z1' = z2` and `z2' = u2`. Penalizing `u2` penalizes the curvature of the
//! recovered function, so the usual smoothing penalty falls out of the
//! tracking cost without any basis expansion.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::catalog::{fhn_raw, fhn_system_matrix};
use super::{Bounds, PseudoLinearModel};
use crate::error::{Error, Result};

/// Top block rows of the extended matrix, `d x (d + d_f)`: the columns acting
/// on `x`, then the columns acting on `z1`. A functional parameter that only
/// appears as a frozen coefficient never reaches the data through the
/// linearized dynamics, so it should be given its own columns where possible.
pub type FunctionalMatrixFn =
    dyn Fn(&DVector<f64>, &DVector<f64>, f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A pseudo-linear model whose system matrix also reads a functional argument.
#[derive(Clone)]
pub struct FunctionalModel {
    pub name: String,
    pub state_dim: usize,
    pub functional_dim: usize,
    pub param_dim: usize,
    pub system_matrix: Arc<FunctionalMatrixFn>,
    pub control_matrix: DMatrix<f64>,
    pub obs_matrix: DMatrix<f64>,
    pub param_bounds: Vec<Bounds>,
    pub fixed_initial: Vec<Option<f64>>,
    /// False only when `A` ignores `x` and the functional argument.
    pub depends_on_state: bool,
}

#[derive(Clone)]
pub struct SemiParamSpec {
    pub base_model: FunctionalModel,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl SemiParamSpec {
    pub fn new(base_model: FunctionalModel, lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 > 0.0 && lambda2 > 0.0) || !lambda1.is_finite() || !lambda2.is_finite() {
            return Err(Error::InvalidModel(
                "semi-parametric penalties must be positive".into(),
            ));
        }
        if base_model.functional_dim == 0 {
            return Err(Error::InvalidModel("functional dimension must be positive".into()));
        }
        Ok(SemiParamSpec {
            base_model,
            lambda1,
            lambda2,
        })
    }

    pub fn extended_dim(&self) -> usize {
        self.base_model.state_dim + 2 * self.base_model.functional_dim
    }

    /// `diag(lambda1 I_{d_u}, lambda2 I_{d_f})`.
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        let du = self.base_model.control_matrix.ncols();
        let df = self.base_model.functional_dim;
        DMatrix::from_diagonal(&DVector::from_fn(du + df, |i, _| {
            if i < du {
                self.lambda1
            } else {
                self.lambda2
            }
        }))
    }
}

/// Control matrix of the extended state `(x, z1, z2)`:
///
/// ```text
/// [ B  0   ]
/// [ 0  0   ]
/// [ 0  I_f ]
/// ```
///
/// With `B = I_d` this is the textbook `B_ext`.
pub fn extended_control_matrix(base: &DMatrix<f64>, functional_dim: usize) -> DMatrix<f64> {
    let d = base.nrows();
    let du = base.ncols();
    let df = functional_dim;
    let mut b = DMatrix::zeros(d + 2 * df, du + df);
    b.view_mut((0, 0), (d, du)).copy_from(base);
    for k in 0..df {
        b[(d + df + k, du + k)] = 1.0;
    }
    b
}

/// Builds the `(d + 2 d_f)`-state model. Calling
/// [`PseudoLinearModel::weight_matrix`] with `lambda1` on the result yields
/// `diag(lambda1 I, lambda2 I)`.
pub fn extend_semiparametric(spec: &SemiParamSpec) -> Result<PseudoLinearModel> {
    let base = &spec.base_model;
    let d = base.state_dim;
    let df = base.functional_dim;
    let de = d + 2 * df;
    if base.control_matrix.nrows() != d || base.obs_matrix.ncols() != d {
        return Err(Error::Dimension("base model matrices do not match state_dim".into()));
    }

    let inner = base.system_matrix.clone();
    let system = move |xe: &DVector<f64>, t: f64, th: &DVector<f64>| {
        let x = xe.rows(0, d).into_owned();
        let z1 = xe.rows(d, df).into_owned();
        let mut a = DMatrix::zeros(de, de);
        a.view_mut((0, 0), (d, d + df)).copy_from(&inner(&x, &z1, t, th));
        for k in 0..df {
            a[(d + k, d + df + k)] = 1.0;
        }
        a
    };

    let control = extended_control_matrix(&base.control_matrix, df);
    let mut obs = DMatrix::zeros(base.obs_matrix.nrows(), de);
    obs.view_mut((0, 0), (base.obs_matrix.nrows(), d))
        .copy_from(&base.obs_matrix);

    let mut fixed = base.fixed_initial.clone();
    fixed.resize(de, None);

    let du = base.control_matrix.ncols();
    let shape = DVector::from_fn(du + df, |i, _| {
        if i < du {
            1.0
        } else {
            spec.lambda2 / spec.lambda1
        }
    });

    PseudoLinearModel::new(
        format!("{}-semiparametric", base.name),
        de,
        base.param_dim,
        system,
        control,
        obs,
        !base.depends_on_state,
    )?
    .with_bounds(base.param_bounds.clone())?
    .with_fixed_initial(fixed)?
    .with_weight_shape(shape)
}

/// FitzHugh-Nagumo with `a` promoted to a function of time; `theta = (b, c)`.
/// The `a Z / c` term is carried by the `z1` column, as `(Z / c) z1`.
pub fn fhn_functional_model() -> FunctionalModel {
    let system = |x: &DVector<f64>, _z1: &DVector<f64>, _t: f64, th: &DVector<f64>| {
        let mut a = DMatrix::zeros(3, 4);
        a.view_mut((0, 0), (3, 3))
            .copy_from(&fhn_system_matrix(x[0], 0.0, th[0], th[1]));
        a[(1, 3)] = x[2] / th[1];
        a
    };
    FunctionalModel {
        name: "fhn".into(),
        state_dim: 3,
        functional_dim: 1,
        param_dim: 2,
        system_matrix: Arc::new(system),
        control_matrix: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        obs_matrix: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
        param_bounds: vec![Bounds::UNBOUNDED, Bounds::POSITIVE],
        fixed_initial: vec![None, None, Some(1.0)],
        depends_on_state: true,
    }
}

/// True time-varying `a(t) = 0.2 (1 + sin(t / 5))`.
pub fn fhn_functional_truth(t: f64) -> f64 {
    0.2 * (1.0 + (t / 5.0).sin())
}

/// FitzHugh-Nagumo field driven by `a(t)`, over `(V, R, Z)`; `theta = (b, c)`.
pub fn fhn_functional_field(
    a: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> impl Fn(&DVector<f64>, f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static {
    move |x: &DVector<f64>, t: f64, th: &DVector<f64>| fhn_raw(x, a(t), th[0], th[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_base() -> FunctionalModel {
        let system = |_x: &DVector<f64>, z1: &DVector<f64>, _t: f64, th: &DVector<f64>| {
            DMatrix::from_row_slice(2, 3, &[-th[0], z1[0], 0.0, 0.0, -1.0, 0.0])
        };
        FunctionalModel {
            name: "toy".into(),
            state_dim: 2,
            functional_dim: 1,
            param_dim: 1,
            system_matrix: Arc::new(system),
            control_matrix: DMatrix::identity(2, 2),
            obs_matrix: DMatrix::identity(2, 2),
            param_bounds: vec![Bounds::UNBOUNDED],
            fixed_initial: vec![None, None],
            depends_on_state: true,
        }
    }

    #[test]
    fn extended_dimensions_and_control_pattern() {
        let spec = SemiParamSpec::new(toy_base(), 1.0, 0.1).unwrap();
        let ext = extend_semiparametric(&spec).unwrap();
        assert_eq!(ext.state_dim(), 4);
        let b = ext.control_matrix();
        assert_eq!((b.nrows(), b.ncols()), (4, 3));
        let expected = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, //
                0.0, 0.0, 1.0,
            ],
        );
        assert_eq!(b, &expected);
        assert!(!ext.is_linear());
        assert_eq!(ext.obs_matrix().ncols(), 4);
        let u = ext.weight_matrix(spec.lambda1);
        assert_eq!(u, spec.weight_matrix());
    }

    #[test]
    fn rejects_non_positive_penalties() {
        assert!(SemiParamSpec::new(toy_base(), 0.0, 1.0).is_err());
        assert!(SemiParamSpec::new(toy_base(), 1.0, -1.0).is_err());
    }

    #[test]
    fn shift_block_keeps_z1_affine_without_control() {
        let spec = SemiParamSpec::new(toy_base(), 1.0, 1.0).unwrap();
        let ext = extend_semiparametric(&spec).unwrap();
        let theta = DVector::from_vec(vec![0.5]);
        let dt = 0.01;
        let mut x = DVector::from_vec(vec![1.0, 0.0, 0.3, -0.2]);
        let (z10, z20) = (x[2], x[3]);
        for k in 0..500 {
            let a = ext.system_matrix(&x, k as f64 * dt, &theta);
            x = &x + (a * &x) * dt;
        }
        let t = 500.0 * dt;
        // Euler integrates the double integrator exactly
        assert!((x[2] - (z10 + t * z20)).abs() < 1e-12);
        assert_eq!(x[3], z20);
    }

    #[test]
    fn fhn_functional_top_block_matches_field() {
        let spec = SemiParamSpec::new(fhn_functional_model(), 1.0, 0.01).unwrap();
        let ext = extend_semiparametric(&spec).unwrap();
        let theta = DVector::from_vec(vec![0.2, 3.0]);
        let xe = DVector::from_vec(vec![-0.7, 0.4, 1.0, 0.33, 0.01]);
        let lhs = ext.vector_field(&xe, 1.5, &theta);
        let field = fhn_functional_field(|_| 0.33);
        let rhs = field(&xe.rows(0, 3).into_owned(), 1.5, &theta);
        for i in 0..3 {
            assert!((lhs[i] - rhs[i]).abs() < 1e-10);
        }
        assert_eq!(lhs[3], 0.01);
        assert_eq!(lhs[4], 0.0);
    }

    #[test]
    fn fhn_functional_initial_state_can_be_profiled() {
        let spec = SemiParamSpec::new(fhn_functional_model(), 1e-3, 1e-2).unwrap();
        let ext = extend_semiparametric(&spec).unwrap();
        let theta = DVector::from_vec(vec![0.2, 3.0]);
        let times: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let values = times.iter().map(|t| DVector::from_element(1, (t / 3.0).sin())).collect();
        let obs = crate::ObservationSet::new(times, values).unwrap();
        let hyper = crate::estimator::Hyper { k_n: 5, lambda: 1e-3 };
        let cfg = crate::estimator::EstimatorConfig::default();
        let res = crate::estimator::evaluate_tracking(&ext, &obs, hyper, &cfg, &theta, None);
        assert!(res.is_ok(), "{:?}", res.err());
    }
}
