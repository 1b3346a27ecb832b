//! Iterated linearization for pseudo-linear models.
//!
//! The system matrix is frozen along a reference trajectory, the LQ problem
//! is solved exactly, and the optimal trajectory becomes the next reference
//! until both the trajectory and the cost stop moving.
//!
//! The plain update can oscillate on stiff factorizations (FitzHugh-Nagumo
//! with cheap control is a typical case), so by default the next reference is
//! an Anderson combination of the last few iterates. The fixed point is the
//! same; with `anderson_depth = 0` the update is the plain one.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::TrackingGrid;
use crate::model::PseudoLinearModel;
use crate::riccati::{
    cost_sn_ci_constrained, forward_optimal, riccati_backward, LinearizedSystem, TrackingSolution,
};

/// Trajectory entries beyond this multiple of the data scale abort the loop.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct SdreConfig {
    /// Relative trajectory-change threshold, scaled by `1 + sum |X|^2`.
    pub eps1: f64,
    /// Relative cost-change threshold, scaled by `1 + S` of the previous
    /// iterate.
    pub eps2: f64,
    pub l_max: usize,
    /// Starting reference for the profiled variant; defaults to `C^+ y_0`.
    pub x0_ref: Option<DVector<f64>>,
    /// Number of past iterates mixed into the next reference; 0 gives the
    /// plain fixed-point update.
    pub anderson_depth: usize,
}

impl Default for SdreConfig {
    fn default() -> Self {
        SdreConfig {
            eps1: 1e-6,
            eps2: 1e-8,
            l_max: 100,
            x0_ref: None,
            anderson_depth: 5,
        }
    }
}

impl SdreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps1 > 0.0 && self.eps2 > 0.0) {
            return Err(Error::Config("eps1 and eps2 must be positive".into()));
        }
        if self.l_max == 0 {
            return Err(Error::Config("l_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Freezes `A` along `reference` (one state per grid point).
pub fn linearize(
    model: &PseudoLinearModel,
    theta: &DVector<f64>,
    grid: &TrackingGrid,
    reference: &[DVector<f64>],
    u: &DMatrix<f64>,
) -> Result<LinearizedSystem> {
    let points = grid.points();
    let a_seq = (0..grid.intervals())
        .map(|j| model.system_matrix(&reference[j], points[j], theta))
        .collect();
    LinearizedSystem::new(
        a_seq,
        model.control_matrix().clone(),
        model.obs_matrix().clone(),
        u.clone(),
    )
}

enum Start<'a> {
    Fixed(&'a DVector<f64>),
    Profiled,
}

/// Tracking with a known initial condition.
pub fn sdre_track(
    model: &PseudoLinearModel,
    theta: &DVector<f64>,
    x0: &DVector<f64>,
    grid: &TrackingGrid,
    u: &DMatrix<f64>,
    cfg: &SdreConfig,
) -> Result<TrackingSolution> {
    if x0.len() != model.state_dim() {
        return Err(Error::Dimension("x0 has the wrong length".into()));
    }
    iterate(model, theta, grid, u, cfg, Start::Fixed(x0))
}

/// Tracking profiled over the free components of the initial condition.
pub fn sdre_track_ci(
    model: &PseudoLinearModel,
    theta: &DVector<f64>,
    grid: &TrackingGrid,
    u: &DMatrix<f64>,
    cfg: &SdreConfig,
) -> Result<TrackingSolution> {
    iterate(model, theta, grid, u, cfg, Start::Profiled)
}

/// Initial reference state for the profiled variant.
pub fn default_reference(model: &PseudoLinearModel, grid: &TrackingGrid) -> DVector<f64> {
    let first = grid.obs_index_map()[0];
    model.reference_initial(&grid.extended_data()[first])
}

fn iterate(
    model: &PseudoLinearModel,
    theta: &DVector<f64>,
    grid: &TrackingGrid,
    u: &DMatrix<f64>,
    cfg: &SdreConfig,
    start: Start<'_>,
) -> Result<TrackingSolution> {
    cfg.validate()?;
    if theta.len() != model.param_dim() {
        return Err(Error::Dimension("theta has the wrong length".into()));
    }
    if grid.obs_dim() != model.obs_dim() {
        return Err(Error::Dimension(format!(
            "data dimension {} but the model observes {}",
            grid.obs_dim(),
            model.obs_dim()
        )));
    }

    let x_start = match start {
        Start::Fixed(x0) => x0.clone(),
        Start::Profiled => match &cfg.x0_ref {
            Some(x) => {
                let mut x = x.clone();
                model.apply_fixed_initial(&mut x);
                x
            }
            None => default_reference(model, grid),
        },
    };
    let scale = grid
        .extended_data()
        .iter()
        .map(|y| y.amax())
        .fold(x_start.amax(), f64::max)
        .max(f64::MIN_POSITIVE);
    let limit = DIVERGENCE_FACTOR * scale;

    let n_points = grid.intervals() + 1;
    let d = model.state_dim();
    let mut reference = vec![x_start; n_points];
    let mut mixer = Anderson::new(cfg.anderson_depth);
    let mut previous_cost: Option<f64> = None;
    let mut best: Option<TrackingSolution> = None;

    for l in 1..=cfg.l_max {
        let sys = linearize(model, theta, grid, &reference, u)?;
        let pass = riccati_backward(&sys, grid)?;
        let x0 = match start {
            Start::Fixed(x0) => x0.clone(),
            Start::Profiled => cost_sn_ci_constrained(&pass, model.fixed_initial())?.1,
        };
        let mut sol = forward_optimal(&sys, grid, &pass, &x0)?;
        sol.iterations = l;
        sol.converged = false;
        if !sol.cost.is_finite()
            || sol
                .trajectory
                .iter()
                .any(|x| x.iter().any(|v| !v.is_finite() || v.abs() > limit))
        {
            return Err(Error::Diverged { iteration: l });
        }

        let flat_ref = flatten(&reference);
        let flat_sol = flatten(&sol.trajectory);
        let residual = &flat_sol - &flat_ref;
        if let Some(prev) = previous_cost {
            let change = residual.norm_squared();
            let energy = flat_sol.norm_squared();
            if change < cfg.eps1 * (1.0 + energy)
                && (sol.cost - prev).abs() < cfg.eps2 * (1.0 + prev.abs())
            {
                sol.converged = true;
                return Ok(sol);
            }
        }

        previous_cost = Some(sol.cost);
        let next = mixer.next(flat_ref, flat_sol, residual);
        if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
            best = Some(sol);
        }
        reference = unflatten(&next, d, n_points);
    }

    Ok(best.expect("l_max >= 1"))
}

fn flatten(traj: &[DVector<f64>]) -> DVector<f64> {
    let d = traj[0].len();
    DVector::from_fn(traj.len() * d, |k, _| traj[k / d][k % d])
}

fn unflatten(v: &DVector<f64>, d: usize, n: usize) -> Vec<DVector<f64>> {
    (0..n).map(|j| v.rows(j * d, d).into_owned()).collect()
}

/// Anderson mixing for the fixed-point map `reference -> optimal trajectory`.
struct Anderson {
    depth: usize,
    last: Option<(DVector<f64>, DVector<f64>)>,
    d_res: Vec<DVector<f64>>,
    d_out: Vec<DVector<f64>>,
    best_residual: f64,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Anderson {
            depth,
            last: None,
            d_res: Vec::new(),
            d_out: Vec::new(),
            best_residual: f64::INFINITY,
        }
    }

    fn reset(&mut self) {
        self.d_res.clear();
        self.d_out.clear();
    }

    /// Next reference given the current one, its image and their difference.
    fn next(
        &mut self,
        _input: DVector<f64>,
        output: DVector<f64>,
        residual: DVector<f64>,
    ) -> DVector<f64> {
        if self.depth == 0 {
            return output;
        }
        let rnorm = residual.norm();
        if let Some((prev_out, prev_res)) = self.last.take() {
            self.d_res.push(&residual - prev_res);
            self.d_out.push(&output - prev_out);
            if self.d_res.len() > self.depth {
                self.d_res.remove(0);
                self.d_out.remove(0);
            }
        }
        // restart when the residual blows up relative to the best seen
        if rnorm > 1e2 * self.best_residual {
            self.reset();
        }
        self.best_residual = self.best_residual.min(rnorm);

        let mut candidate = output.clone();
        let p = self.d_res.len();
        if p > 0 {
            let gram = DMatrix::from_fn(p, p, |a, b| self.d_res[a].dot(&self.d_res[b]));
            let rhs = DVector::from_fn(p, |a, _| self.d_res[a].dot(&residual));
            let ridge = 1e-12 * gram.trace().max(f64::MIN_POSITIVE);
            let reg = &gram + DMatrix::identity(p, p) * ridge;
            match reg.cholesky().map(|c| c.solve(&rhs)) {
                Some(gamma) if gamma.iter().all(|g| g.is_finite()) => {
                    for (k, g) in gamma.iter().enumerate() {
                        candidate -= &self.d_out[k] * *g;
                    }
                }
                _ => self.reset(),
            }
        }
        self.last = Some((output, residual));
        if candidate.iter().all(|v| v.is_finite()) {
            candidate
        } else {
            self.reset();
            self.last.as_ref().unwrap().0.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ObservationSet;
    use crate::grid::build_grid;
    use crate::model::catalog::catalog_alpha_pinene;
    use crate::riccati::cost_sn;

    fn apinene_grid() -> (PseudoLinearModel, DVector<f64>, TrackingGrid) {
        let entry = catalog_alpha_pinene();
        let times: Vec<f64> = (0..=10).map(|i| 10.0 * i as f64).collect();
        let values = times
            .iter()
            .map(|t| DVector::from_fn(5, |i, _| 100.0 / (1.0 + i as f64 + 0.01 * t)))
            .collect();
        let obs = ObservationSet::new(times, values).unwrap();
        let grid = build_grid(&obs, 3, 100.0).unwrap();
        (entry.model, entry.true_theta, grid)
    }

    #[test]
    fn linear_model_converges_at_second_iteration() {
        let (model, theta, grid) = apinene_grid();
        let u = model.weight_matrix(1.0);
        let x0 = DVector::from_vec(vec![100.0, 0.0, 0.0, 0.0, 0.0]);
        let sol = sdre_track(&model, &theta, &x0, &grid, &u, &SdreConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 2);

        let sys = linearize(&model, &theta, &grid, &vec![x0.clone(); grid.intervals() + 1], &u).unwrap();
        let pass = riccati_backward(&sys, &grid).unwrap();
        let direct = forward_optimal(&sys, &grid, &pass, &x0).unwrap();
        assert_eq!(sol.cost, direct.cost);
        assert_eq!(sol.trajectory, direct.trajectory);
        assert!((cost_sn(&pass, &x0) - sol.cost).abs() <= 1e-8 * sol.cost);
    }

    #[test]
    fn iteration_cap_returns_unconverged() {
        let (model, theta, grid) = apinene_grid();
        let u = model.weight_matrix(1.0);
        let cfg = SdreConfig {
            l_max: 1,
            ..SdreConfig::default()
        };
        let sol = sdre_track_ci(&model, &theta, &grid, &u, &cfg).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn rejects_bad_config() {
        let (model, theta, grid) = apinene_grid();
        let u = model.weight_matrix(1.0);
        let cfg = SdreConfig {
            eps1: 0.0,
            ..SdreConfig::default()
        };
        assert!(sdre_track_ci(&model, &theta, &grid, &u, &cfg).is_err());
    }
}
