//! Outer parameter search, hyperparameter selection by forward
//! cross-validation, the least-squares baseline and the observability
//! diagnostic.
//!
//! Several observation sets can share one parameter vector (one set per
//! subject); each subject keeps its own initial condition and grid.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::grid::{build_grid, TrackingGrid};
use crate::model::{Bounds, PseudoLinearModel};
use crate::numfmt::{fmt12, json12};
use crate::ode::integrate_rk4;
use crate::optimizer::{minimize_bounded, Minimum, NelderMeadConfig};
use crate::riccati::{
    cost_sn, cost_sn_ci_constrained, forward_optimal, rcond_symmetric, riccati_backward,
    LinearizedSystem, TrackingSolution, RCOND_THRESHOLD,
};
use crate::sdre::{sdre_track, sdre_track_ci, SdreConfig};

/// Discretization refinement and control penalty `U = lambda I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub k_n: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub sdre: SdreConfig,
    pub optimizer: NelderMeadConfig,
    /// At most 3: the initial guess, a random scaling of it, and bound
    /// midpoints.
    pub n_starts: usize,
    /// Seed of the random start.
    pub seed: u64,
    /// End of the observation interval; the last observation time if unset.
    pub horizon: Option<f64>,
    /// RK4 steps per horizon for the least-squares baseline.
    pub nls_steps: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            sdre: SdreConfig::default(),
            optimizer: NelderMeadConfig::default(),
            n_starts: 3,
            seed: 0,
            horizon: None,
            nls_steps: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Tracking with the initial condition co-estimated.
    Tracking,
    /// Tracking profiled over the initial condition.
    TrackingCi,
    Nls,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Tracking => "T",
            Method::TrackingCi => "T_CI",
            Method::Nls => "NLS",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectFit {
    pub x0_hat: DVector<f64>,
    pub cost: f64,
    /// Optimal perturbed trajectory and control; absent for least squares.
    pub solution: Option<TrackingSolution>,
    pub grid_points: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub method: Method,
    pub theta_hat: DVector<f64>,
    pub subjects: Vec<SubjectFit>,
    /// Total cost over subjects at the optimum.
    pub cost: f64,
    pub hyper: Option<Hyper>,
    pub optimizer_evals: usize,
    pub converged: bool,
}

impl EstimationResult {
    pub fn x0_hat(&self) -> &DVector<f64> {
        &self.subjects[0].x0_hat
    }

    pub fn solution(&self) -> Option<&TrackingSolution> {
        self.subjects[0].solution.as_ref()
    }

    /// Structured form: `method`, `theta`, `param_names`, `x0`, `cost`,
    /// `hyper`, `optimizer_evals`, `converged`, `control_times` and `control`
    /// (one row per interval), plus `subjects` when there are several.
    /// Whether every subject's SDRE loop converged; `None` without a
    /// tracking solution.
    pub fn sdre_converged(&self) -> Option<bool> {
        let flags: Vec<bool> = self
            .subjects
            .iter()
            .filter_map(|s| s.solution.as_ref().map(|sol| sol.converged))
            .collect();
        (!flags.is_empty()).then(|| flags.iter().all(|&c| c))
    }

    pub fn to_json(&self, param_names: &[String]) -> Value {
        let vec = |v: &DVector<f64>| Value::Array(v.iter().map(|x| json12(*x)).collect());
        let control = |s: &SubjectFit| match &s.solution {
            Some(sol) => (
                Value::Array(
                    s.grid_points[..sol.control.len()]
                        .iter()
                        .map(|t| json12(*t))
                        .collect(),
                ),
                Value::Array(sol.control.iter().map(vec).collect()),
            ),
            None => (json!([]), json!([])),
        };
        let first = &self.subjects[0];
        let (times, rows) = control(first);
        let mut out = json!({
            "method": self.method.label(),
            "theta": vec(&self.theta_hat),
            "param_names": param_names,
            "x0": vec(&first.x0_hat),
            "cost": json12(self.cost),
            "hyper": self.hyper.map(|h| json!({"k_n": h.k_n, "lambda": json12(h.lambda)})),
            "optimizer_evals": self.optimizer_evals,
            "converged": self.converged,
            "sdre_converged": self.sdre_converged(),
            "control_times": times,
            "control": rows,
        });
        if self.subjects.len() > 1 {
            let subjects: Vec<Value> = self
                .subjects
                .iter()
                .map(|s| {
                    let (times, rows) = control(s);
                    json!({
                        "x0": vec(&s.x0_hat),
                        "cost": json12(s.cost),
                        "control_times": times,
                        "control": rows,
                    })
                })
                .collect();
            out["subjects"] = Value::Array(subjects);
        }
        out
    }

    pub fn write_json(&self, path: &Path, param_names: &[String]) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, &self.to_json(param_names))?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    /// Control trace as CSV: `t,u1,...` (with a leading `subject` column when
    /// there are several subjects). Writes only the header for least squares.
    pub fn write_control_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let multi = self.subjects.len() > 1;
        let du = self
            .subjects
            .iter()
            .find_map(|s| s.solution.as_ref().and_then(|sol| sol.control.first()))
            .map_or(0, |u| u.len());
        let mut header = if multi { "subject,t".to_string() } else { "t".to_string() };
        for k in 1..=du {
            header.push_str(&format!(",u{k}"));
        }
        writeln!(out, "{header}")?;
        for (s, fit) in self.subjects.iter().enumerate() {
            let Some(sol) = &fit.solution else { continue };
            for (j, u) in sol.control.iter().enumerate() {
                let mut line = if multi {
                    format!("{},{}", s + 1, fmt12(fit.grid_points[j]))
                } else {
                    fmt12(fit.grid_points[j])
                };
                for v in u.iter() {
                    line.push(',');
                    line.push_str(&fmt12(*v));
                }
                writeln!(out, "{line}")?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn horizon_of(obs: &[ObservationSet], cfg: &EstimatorConfig) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::InvalidObservations("no observation sets".into()));
    }
    let last = obs
        .iter()
        .map(|o| *o.times().last().unwrap())
        .fold(0.0, f64::max);
    let t = cfg.horizon.unwrap_or(last);
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Config(format!("invalid horizon {t}")));
    }
    Ok(t)
}

fn check_inputs(
    model: &PseudoLinearModel,
    obs: &[ObservationSet],
    cfg: &EstimatorConfig,
    theta_init: &DVector<f64>,
) -> Result<()> {
    if theta_init.len() != model.param_dim() {
        return Err(Error::Dimension(format!(
            "theta_init has {} entries, the model {}",
            theta_init.len(),
            model.param_dim()
        )));
    }
    if !model.theta_in_bounds(theta_init) {
        return Err(Error::Config("theta_init lies outside the parameter bounds".into()));
    }
    if let Some(o) = obs.iter().find(|o| o.obs_dim() != model.obs_dim()) {
        return Err(Error::Dimension(format!(
            "data dimension {} but the model observes {}",
            o.obs_dim(),
            model.obs_dim()
        )));
    }
    if cfg.n_starts == 0 {
        return Err(Error::Config("n_starts must be at least 1".into()));
    }
    cfg.sdre.validate()
}

/// Parameter vector layout: `theta`, then the free initial components of each
/// subject when they are co-estimated.
struct Layout<'a> {
    model: &'a PseudoLinearModel,
    free: Vec<usize>,
    subjects: usize,
    with_x0: bool,
}

impl Layout<'_> {
    fn dim(&self) -> usize {
        self.model.param_dim() + if self.with_x0 { self.free.len() * self.subjects } else { 0 }
    }

    fn bounds(&self) -> Vec<Bounds> {
        let mut b = self.model.param_bounds().to_vec();
        b.resize(self.dim(), Bounds::UNBOUNDED);
        b
    }

    fn decode(&self, z: &[f64]) -> (DVector<f64>, Vec<DVector<f64>>) {
        let p = self.model.param_dim();
        let theta = DVector::from_column_slice(&z[..p]);
        let mut x0s = Vec::new();
        if self.with_x0 {
            let nf = self.free.len();
            for s in 0..self.subjects {
                let mut x0 = DVector::zeros(self.model.state_dim());
                self.model.apply_fixed_initial(&mut x0);
                for (a, &i) in self.free.iter().enumerate() {
                    x0[i] = z[p + s * nf + a];
                }
                x0s.push(x0);
            }
        }
        (theta, x0s)
    }

    fn encode(&self, theta: &DVector<f64>, x0s: &[DVector<f64>]) -> Vec<f64> {
        let mut z: Vec<f64> = theta.iter().copied().collect();
        if self.with_x0 {
            for x0 in x0s {
                z.extend(self.free.iter().map(|&i| x0[i]));
            }
        }
        z
    }
}

/// Candidate starting parameters: the guess, the guess scaled componentwise
/// by `U[0.5, 1.5]`, and bound midpoints where both bounds are finite.
fn start_points(model: &PseudoLinearModel, theta_init: &DVector<f64>, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let bounds = model.param_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scaled = DVector::from_fn(theta_init.len(), |i, _| {
        let b = bounds[i];
        (theta_init[i] * rng.random_range(0.5..1.5)).clamp(b.lower, b.upper)
    });
    let mid = DVector::from_fn(theta_init.len(), |i, _| {
        bounds[i].midpoint().unwrap_or(theta_init[i])
    });
    let mut out: Vec<DVector<f64>> = Vec::new();
    for cand in [theta_init.clone(), scaled, mid] {
        if !out.contains(&cand) {
            out.push(cand);
        }
    }
    out.truncate(n);
    out
}

/// Runs every start (in parallel) and keeps the lowest value, earliest start
/// on ties.
fn multistart<F>(objective: F, starts: Vec<Vec<f64>>, bounds: &[Bounds], cfg: &NelderMeadConfig) -> Result<(Minimum, usize)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let runs: Vec<Minimum> = starts
        .par_iter()
        .map(|z| minimize_bounded(&objective, z, bounds, cfg))
        .collect();
    let evals = runs.iter().map(|m| m.evals).sum();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.value < a.value { b } else { a })
        .expect("at least one start");
    if !best.value.is_finite() {
        return Err(Error::EstimationFailed(
            "the cost is non-finite at every start".into(),
        ));
    }
    Ok((best, evals))
}

/// Everything that stays fixed while the parameters move.
struct TrackingProblem<'a> {
    model: &'a PseudoLinearModel,
    grids: Vec<TrackingGrid>,
    u: DMatrix<f64>,
    sdre: &'a SdreConfig,
}

impl<'a> TrackingProblem<'a> {
    fn new(
        model: &'a PseudoLinearModel,
        obs: &[ObservationSet],
        hyper: Hyper,
        cfg: &'a EstimatorConfig,
    ) -> Result<Self> {
        if !(hyper.lambda > 0.0) || !hyper.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be positive, got {}", hyper.lambda)));
        }
        let horizon = horizon_of(obs, cfg)?;
        let grids = obs
            .iter()
            .map(|o| build_grid(o, hyper.k_n, horizon))
            .collect::<Result<_>>()?;
        Ok(TrackingProblem {
            model,
            grids,
            u: model.weight_matrix(hyper.lambda),
            sdre: &cfg.sdre,
        })
    }

    /// The system matrix does not read the state for linear models.
    fn linear_system(&self, theta: &DVector<f64>, grid: &TrackingGrid) -> Result<LinearizedSystem> {
        let zero = DVector::zeros(self.model.state_dim());
        let points = grid.points();
        let a_seq = (0..grid.intervals())
            .map(|j| self.model.system_matrix(&zero, points[j], theta))
            .collect();
        LinearizedSystem::new(
            a_seq,
            self.model.control_matrix().clone(),
            self.model.obs_matrix().clone(),
            self.u.clone(),
        )
    }

    /// Cost only; linear models skip the forward pass.
    fn cost(&self, theta: &DVector<f64>, s: usize, x0: Option<&DVector<f64>>) -> Result<f64> {
        let grid = &self.grids[s];
        if self.model.is_linear() {
            let pass = riccati_backward(&self.linear_system(theta, grid)?, grid)?;
            return match x0 {
                Some(x0) => Ok(cost_sn(&pass, x0)),
                None => Ok(cost_sn_ci_constrained(&pass, self.model.fixed_initial())?.0),
            };
        }
        Ok(self.solve(theta, s, x0)?.cost)
    }

    fn solve(&self, theta: &DVector<f64>, s: usize, x0: Option<&DVector<f64>>) -> Result<TrackingSolution> {
        let grid = &self.grids[s];
        if self.model.is_linear() {
            let sys = self.linear_system(theta, grid)?;
            let pass = riccati_backward(&sys, grid)?;
            let x0 = match x0 {
                Some(x0) => x0.clone(),
                None => cost_sn_ci_constrained(&pass, self.model.fixed_initial())?.1,
            };
            return forward_optimal(&sys, grid, &pass, &x0);
        }
        match x0 {
            Some(x0) => sdre_track(self.model, theta, x0, grid, &self.u, self.sdre),
            None => sdre_track_ci(self.model, theta, grid, &self.u, self.sdre),
        }
    }

    fn total_cost(&self, theta: &DVector<f64>, x0s: &[DVector<f64>]) -> f64 {
        let mut total = 0.0;
        for s in 0..self.grids.len() {
            match self.cost(theta, s, x0s.get(s)) {
                Ok(c) if c.is_finite() => total += c,
                _ => return f64::INFINITY,
            }
        }
        total
    }

    fn fit(
        &self,
        method: Method,
        hyper: Hyper,
        theta: DVector<f64>,
        x0s: &[DVector<f64>],
        evals: usize,
        optimizer_converged: bool,
    ) -> Result<EstimationResult> {
        let mut subjects = Vec::with_capacity(self.grids.len());
        let mut converged = optimizer_converged;
        for (s, grid) in self.grids.iter().enumerate() {
            let sol = self.solve(&theta, s, x0s.get(s))?;
            converged &= sol.converged;
            subjects.push(SubjectFit {
                x0_hat: sol.x0_used.clone(),
                cost: sol.cost,
                solution: Some(sol),
                grid_points: grid.points().to_vec(),
            });
        }
        Ok(EstimationResult {
            method,
            theta_hat: theta,
            cost: subjects.iter().map(|s| s.cost).sum(),
            subjects,
            hyper: Some(hyper),
            optimizer_evals: evals,
            converged,
        })
    }
}

fn initial_guesses(model: &PseudoLinearModel, obs: &[ObservationSet]) -> Vec<DVector<f64>> {
    obs.iter()
        .map(|o| model.reference_initial(&o.values()[0]))
        .collect()
}

/// Tracking estimator over one or more subjects sharing `theta`.
pub fn estimate_tracking_multi(
    model: &PseudoLinearModel,
    obs: &[ObservationSet],
    hyper: Hyper,
    cfg: &EstimatorConfig,
    profile_ci: bool,
    theta_init: &DVector<f64>,
) -> Result<EstimationResult> {
    check_inputs(model, obs, cfg, theta_init)?;
    let problem = TrackingProblem::new(model, obs, hyper, cfg)?;
    let layout = Layout {
        model,
        free: model.free_initial_indices(),
        subjects: obs.len(),
        with_x0: !profile_ci,
    };
    let x0_guess = initial_guesses(model, obs);
    let starts = start_points(model, theta_init, cfg.n_starts, cfg.seed)
        .iter()
        .map(|th| layout.encode(th, &x0_guess))
        .collect();
    let objective = |z: &[f64]| {
        let (theta, x0s) = layout.decode(z);
        problem.total_cost(&theta, &x0s)
    };
    let (best, evals) = multistart(objective, starts, &layout.bounds(), &cfg.optimizer)?;
    let (theta, x0s) = layout.decode(&best.x);
    let method = if profile_ci { Method::TrackingCi } else { Method::Tracking };
    problem.fit(method, hyper, theta, &x0s, evals, best.converged)
}

/// Tracking estimator `theta_T` (`profile_ci = false`, initial condition
/// co-estimated) or `theta_T,CI` (`profile_ci = true`).
pub fn estimate_tracking(
    model: &PseudoLinearModel,
    obs: &ObservationSet,
    hyper: Hyper,
    cfg: &EstimatorConfig,
    profile_ci: bool,
    theta_init: &DVector<f64>,
) -> Result<EstimationResult> {
    estimate_tracking_multi(model, std::slice::from_ref(obs), hyper, cfg, profile_ci, theta_init)
}

/// Tracking solution at a given `theta` without any search. Without
/// `x0`, the initial condition is profiled.
pub fn evaluate_tracking(
    model: &PseudoLinearModel,
    obs: &ObservationSet,
    hyper: Hyper,
    cfg: &EstimatorConfig,
    theta: &DVector<f64>,
    x0: Option<&DVector<f64>>,
) -> Result<EstimationResult> {
    check_inputs(model, std::slice::from_ref(obs), cfg, theta)?;
    let problem = TrackingProblem::new(model, std::slice::from_ref(obs), hyper, cfg)?;
    let (method, x0s) = match x0 {
        Some(x0) => (Method::Tracking, vec![x0.clone()]),
        None => (Method::TrackingCi, vec![]),
    };
    problem.fit(method, hyper, theta.clone(), &x0s, 0, true)
}

/// Sum of squared residuals of the unperturbed RK4 solution at each subject's
/// observation times.
fn nls_cost(
    model: &PseudoLinearModel,
    obs: &[ObservationSet],
    theta: &DVector<f64>,
    x0s: &[DVector<f64>],
    step: f64,
) -> Result<f64> {
    let field = |x: &DVector<f64>, t: f64| model.vector_field(x, t, theta);
    let c = model.obs_matrix();
    let mut total = 0.0;
    for (o, x0) in obs.iter().zip(x0s) {
        let states = integrate_rk4(&field, x0, 0.0, o.times(), step)?;
        for (x, y) in states.iter().zip(o.values()) {
            total += (c * x - y).norm_squared();
        }
    }
    Ok(total)
}

/// Nonlinear least squares over `(theta, x0)` with the unperturbed model.
pub fn nls_estimate_multi(
    model: &PseudoLinearModel,
    obs: &[ObservationSet],
    cfg: &EstimatorConfig,
    theta_init: &DVector<f64>,
) -> Result<EstimationResult> {
    check_inputs(model, obs, cfg, theta_init)?;
    if cfg.nls_steps == 0 {
        return Err(Error::Config("nls_steps must be positive".into()));
    }
    let step = horizon_of(obs, cfg)? / cfg.nls_steps as f64;
    let layout = Layout {
        model,
        free: model.free_initial_indices(),
        subjects: obs.len(),
        with_x0: true,
    };
    let x0_guess = initial_guesses(model, obs);
    let starts = start_points(model, theta_init, cfg.n_starts, cfg.seed)
        .iter()
        .map(|th| layout.encode(th, &x0_guess))
        .collect();
    let objective = |z: &[f64]| {
        let (theta, x0s) = layout.decode(z);
        nls_cost(model, obs, &theta, &x0s, step).unwrap_or(f64::INFINITY)
    };
    let (best, evals) = multistart(objective, starts, &layout.bounds(), &cfg.optimizer)?;
    let (theta, x0s) = layout.decode(&best.x);
    let subjects = obs
        .iter()
        .zip(&x0s)
        .map(|(o, x0)| {
            Ok(SubjectFit {
                x0_hat: x0.clone(),
                cost: nls_cost(model, std::slice::from_ref(o), &theta, std::slice::from_ref(x0), step)?,
                solution: None,
                grid_points: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimationResult {
        method: Method::Nls,
        theta_hat: theta,
        cost: best.value,
        subjects,
        hyper: None,
        optimizer_evals: evals,
        converged: best.converged,
    })
}

pub fn nls_estimate(
    model: &PseudoLinearModel,
    obs: &ObservationSet,
    cfg: &EstimatorConfig,
    theta_init: &DVector<f64>,
) -> Result<EstimationResult> {
    nls_estimate_multi(model, std::slice::from_ref(obs), cfg, theta_init)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub k_n_values: Vec<usize>,
    pub lambda_values: Vec<f64>,
    /// Number of forward cross-validation subintervals.
    pub h: usize,
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        if self.k_n_values.is_empty() || self.lambda_values.is_empty() {
            return Err(Error::Config("hyperparameter grid is empty".into()));
        }
        if self.k_n_values.contains(&0) {
            return Err(Error::Config("k_n values must be positive".into()));
        }
        if self.lambda_values.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::Config("lambda values must be positive".into()));
        }
        if self.h < 2 {
            return Err(Error::Config("at least 2 cross-validation subintervals are needed".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Hyper> {
        self.k_n_values
            .iter()
            .flat_map(|&k_n| self.lambda_values.iter().map(move |&lambda| Hyper { k_n, lambda }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpRow {
    pub hyper: Hyper,
    pub ep: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub hyper: Hyper,
    /// One row per cell, in grid order (`k_n` outer, `lambda` inner).
    pub table: Vec<EpRow>,
    pub result: EstimationResult,
}

pub fn write_ep_csv(table: &[EpRow], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "k_n,lambda,EP")?;
    for row in table {
        writeln!(out, "{},{},{}", row.hyper.k_n, fmt12(row.hyper.lambda), fmt12(row.ep))?;
    }
    out.flush()?;
    Ok(())
}

/// Forward prediction error: `[0, T]` is cut into `h` equal pieces whose ends
/// are snapped to the nearest grid point; on each piece the unperturbed model
/// is integrated from the optimal trajectory at its left end and compared to
/// the observations inside it. The last piece is closed on the right.
pub fn forward_prediction_error(
    model: &PseudoLinearModel,
    theta: &DVector<f64>,
    obs: &ObservationSet,
    grid_points: &[f64],
    trajectory: &[DVector<f64>],
    h: usize,
    step: f64,
) -> Result<f64> {
    if grid_points.len() != trajectory.len() || grid_points.len() < 2 {
        return Err(Error::Dimension("trajectory does not match its grid".into()));
    }
    let horizon = *grid_points.last().unwrap();
    let nearest = |t: f64| {
        let j = grid_points.partition_point(|&p| p < t);
        if j == 0 {
            0
        } else if j >= grid_points.len() {
            grid_points.len() - 1
        } else if t - grid_points[j - 1] <= grid_points[j] - t {
            j - 1
        } else {
            j
        }
    };
    let cuts: Vec<usize> = (0..=h).map(|k| nearest(horizon * k as f64 / h as f64)).collect();
    let field = |x: &DVector<f64>, t: f64| model.vector_field(x, t, theta);
    let c = model.obs_matrix();
    let mut total = 0.0;
    for k in 0..h {
        let (a, b) = (grid_points[cuts[k]], grid_points[cuts[k + 1]]);
        let last = k + 1 == h;
        let idx: Vec<usize> = (0..obs.len())
            .filter(|&i| {
                let t = obs.times()[i];
                t >= a && (t < b || (last && t <= b))
            })
            .collect();
        if idx.is_empty() {
            continue;
        }
        let times: Vec<f64> = idx.iter().map(|&i| obs.times()[i]).collect();
        let states = integrate_rk4(&field, &trajectory[cuts[k]], a, &times, step)?;
        for (x, &i) in states.iter().zip(&idx) {
            total += (c * x - &obs.values()[i]).norm_squared();
        }
    }
    Ok(total)
}

/// Estimates on every cell and keeps the one with the smallest forward
/// prediction error; ties go to the smaller `lambda`, then the smaller `k_n`.
/// Cells whose estimation fails score `+inf`.
pub fn select_hyperparams(
    model: &PseudoLinearModel,
    obs: &ObservationSet,
    grid: &HyperGrid,
    cfg: &EstimatorConfig,
    profile_ci: bool,
    theta_init: &DVector<f64>,
) -> Result<Selection> {
    grid.validate()?;
    check_inputs(model, std::slice::from_ref(obs), cfg, theta_init)?;
    let horizon = horizon_of(std::slice::from_ref(obs), cfg)?;
    // common integration step: the finest mesh of the finest grid
    let mut step = f64::INFINITY;
    for &k_n in &grid.k_n_values {
        step = step.min(build_grid(obs, k_n, horizon)?.min_mesh());
    }

    let cells = grid.cells();
    let outcomes: Vec<(f64, Option<EstimationResult>)> = cells
        .par_iter()
        .map(|&hyper| {
            let Ok(res) = estimate_tracking(model, obs, hyper, cfg, profile_ci, theta_init) else {
                return (f64::INFINITY, None);
            };
            let fit = &res.subjects[0];
            let sol = fit.solution.as_ref().expect("tracking fits carry a solution");
            let ep = forward_prediction_error(
                model,
                &res.theta_hat,
                obs,
                &fit.grid_points,
                &sol.trajectory,
                grid.h,
                step,
            )
            .ok()
            .filter(|e| e.is_finite())
            .unwrap_or(f64::INFINITY);
            (ep, Some(res))
        })
        .collect();

    let table: Vec<EpRow> = cells
        .iter()
        .zip(&outcomes)
        .map(|(&hyper, (ep, _))| EpRow { hyper, ep: *ep })
        .collect();
    let best = (0..cells.len())
        .filter(|&i| outcomes[i].1.is_some())
        .min_by(|&a, &b| {
            let (ra, rb) = (&table[a], &table[b]);
            ra.ep
                .total_cmp(&rb.ep)
                .then(ra.hyper.lambda.total_cmp(&rb.hyper.lambda))
                .then(ra.hyper.k_n.cmp(&rb.hyper.k_n))
        })
        .ok_or_else(|| Error::EstimationFailed("estimation failed on every grid cell".into()))?;
    let result = outcomes.into_iter().nth(best).unwrap().1.unwrap();
    Ok(Selection {
        hyper: cells[best],
        table,
        result,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observability {
    pub matrix: DMatrix<f64>,
    pub invertible: bool,
    pub rcond: f64,
}

/// `O = C'C + sum_i P_i' C'C P_i`, where `P_i = (I + D_{i-1} A_{i-1}) ...
/// (I + D_0 A_0)` maps the initial state to grid point `i` along the frozen
/// reference, for `i = 1..m`. `reference` holds one state per grid point, or
/// a single constant state.
pub fn observability_check(
    model: &PseudoLinearModel,
    theta: &DVector<f64>,
    grid: &TrackingGrid,
    reference: &[DVector<f64>],
) -> Result<Observability> {
    let m = grid.intervals();
    let d = model.state_dim();
    if reference.len() != 1 && reference.len() < m {
        return Err(Error::Dimension(format!(
            "reference must hold 1 or at least {m} states, got {}",
            reference.len()
        )));
    }
    if theta.len() != model.param_dim() {
        return Err(Error::Dimension("theta has the wrong length".into()));
    }
    let c = model.obs_matrix();
    let ctc = c.transpose() * c;
    let mut o = ctc.clone();
    let mut prod = DMatrix::<f64>::identity(d, d);
    for j in 0..m {
        let x = if reference.len() == 1 { &reference[0] } else { &reference[j] };
        let a = model.system_matrix(x, grid.points()[j], theta);
        let phi = DMatrix::identity(d, d) + a * grid.mesh()[j];
        prod = phi * prod;
        o += prod.transpose() * &ctc * &prod;
    }
    let o = (&o + o.transpose()) * 0.5;
    let rcond = rcond_symmetric(&o);
    Ok(Observability {
        invertible: rcond > RCOND_THRESHOLD,
        rcond,
        matrix: o,
    })
}
