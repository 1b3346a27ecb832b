//! Monte-Carlo experiments and their summary metrics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::estimator::{
    estimate_tracking, nls_estimate, select_hyperparams, EstimationResult, EstimatorConfig, Hyper,
    HyperGrid, Method,
};
use crate::model::catalog::ModelCatalogEntry;
use crate::model::semiparam::{
    extend_semiparametric, fhn_functional_field, fhn_functional_model, fhn_functional_truth,
    SemiParamSpec,
};
use crate::numfmt::fmt12;
use crate::sim::{derive_seed, observation_times, simulate_entry, simulate_ode, SimConfig};

/// What each replicate runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    pub methods: Vec<Method>,
    /// Used unless `grid` is set.
    pub hyper: Hyper,
    /// Per-replicate forward cross-validation over this grid.
    pub grid: Option<HyperGrid>,
    pub config: EstimatorConfig,
    /// Initial guess as a multiple of the true parameter.
    pub init_scale: f64,
}

/// Summary of normalized estimates `theta_hat ./ theta_star` over replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub estimator: String,
    pub param_names: Vec<String>,
    pub n_mc: usize,
    /// Replicates excluded because estimation failed or did not converge.
    pub failures: usize,
    pub bias: Vec<f64>,
    /// Population variance per component.
    pub variance: Vec<f64>,
    pub mse: Vec<f64>,
    /// Spectral norm of the normalized covariance.
    pub global_variance: f64,
    /// Sum of squared biases plus the spectral norm.
    pub global_mse: f64,
    /// Mean fraction of components whose sign matches the truth.
    pub sign_recovery: f64,
}

impl McReport {
    /// Components with a zero true value are left unnormalized.
    pub fn from_estimates(
        estimator: &str,
        param_names: &[String],
        truth: &DVector<f64>,
        estimates: &[DVector<f64>],
        failures: usize,
    ) -> Result<Self> {
        let p = truth.len();
        let n = estimates.len();
        if n == 0 {
            return Err(Error::TooManyFailures {
                failures,
                total: failures,
            });
        }
        if estimates.iter().any(|e| e.len() != p) || param_names.len() != p {
            return Err(Error::Dimension("estimates do not match the parameter dimension".into()));
        }
        let scale = truth.map(|v| if v == 0.0 { 1.0 } else { v });
        let normalized: Vec<DVector<f64>> = estimates.iter().map(|e| e.component_div(&scale)).collect();
        let target = DVector::from_fn(p, |i, _| if truth[i] == 0.0 { 0.0 } else { 1.0 });

        let mean = normalized.iter().fold(DVector::zeros(p), |acc, e| acc + e) / n as f64;
        let mut cov = DMatrix::zeros(p, p);
        for e in &normalized {
            let d = e - &mean;
            cov += &d * d.transpose();
        }
        cov /= n as f64;
        let bias: Vec<f64> = (0..p).map(|i| mean[i] - target[i]).collect();
        let variance: Vec<f64> = (0..p).map(|i| cov[(i, i)]).collect();
        let mse: Vec<f64> = bias.iter().zip(&variance).map(|(b, v)| b * b + v).collect();
        let global_variance = SymmetricEigen::new(cov).eigenvalues.max().max(0.0);
        let global_mse = bias.iter().map(|b| b * b).sum::<f64>() + global_variance;
        let sign_recovery = estimates
            .iter()
            .map(|e| {
                (0..p)
                    .filter(|&i| e[i].signum() == truth[i].signum() || (e[i] == 0.0 && truth[i] == 0.0))
                    .count() as f64
                    / p as f64
            })
            .sum::<f64>()
            / n as f64;

        Ok(McReport {
            estimator: estimator.to_string(),
            param_names: param_names.to_vec(),
            n_mc: n + failures,
            failures,
            bias,
            variance,
            mse,
            global_variance,
            global_mse,
            sign_recovery,
        })
    }
}

/// One row per report: `estimator,n_mc,failures,V_<p>...,V_global,M_<p>...,M_global,I`.
pub fn write_mc_csv(reports: &[McReport], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_mc_rows(reports, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_mc_rows<W: Write>(reports: &[McReport], out: &mut W) -> Result<()> {
    let Some(first) = reports.first() else {
        return Ok(());
    };
    let mut header = String::from("estimator,n_mc,failures");
    for name in &first.param_names {
        header.push_str(&format!(",V_{name}"));
    }
    header.push_str(",V_global");
    for name in &first.param_names {
        header.push_str(&format!(",M_{name}"));
    }
    header.push_str(",M_global,I");
    writeln!(out, "{header}")?;
    for r in reports {
        let mut line = format!("{},{},{}", r.estimator, r.n_mc, r.failures);
        for v in r.variance.iter().chain([&r.global_variance]) {
            line.push(',');
            line.push_str(&fmt12(*v));
        }
        for v in r.mse.iter().chain([&r.global_mse]) {
            line.push(',');
            line.push_str(&fmt12(*v));
        }
        line.push(',');
        line.push_str(&fmt12(r.sign_recovery));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn estimate_one(
    entry: &ModelCatalogEntry,
    obs: &ObservationSet,
    spec: &EstimatorSpec,
    cfg: &EstimatorConfig,
    method: Method,
) -> Result<EstimationResult> {
    let init = &entry.true_theta * spec.init_scale;
    let init = DVector::from_fn(init.len(), |i, _| {
        let b = entry.model.param_bounds()[i];
        init[i].clamp(b.lower, b.upper)
    });
    match method {
        Method::Nls => nls_estimate(&entry.model, obs, cfg, &init),
        Method::Tracking | Method::TrackingCi => {
            let ci = method == Method::TrackingCi;
            match &spec.grid {
                Some(grid) => Ok(select_hyperparams(&entry.model, obs, grid, cfg, ci, &init)?.result),
                None => estimate_tracking(&entry.model, obs, spec.hyper, cfg, ci, &init),
            }
        }
    }
}

fn usable(res: &Result<EstimationResult>) -> Option<DVector<f64>> {
    let res = res.as_ref().ok()?;
    let settled = res
        .subjects
        .iter()
        .all(|s| s.solution.as_ref().is_none_or(|sol| sol.converged));
    (settled && res.theta_hat.iter().all(|v| v.is_finite())).then(|| res.theta_hat.clone())
}

/// Simulates and estimates `n_mc` replicates. Replicate `r` draws its data
/// from seed `derive_seed(sim.seed, r)`, so the outcome does not depend on
/// scheduling. Returns one report per method, in the order of `spec.methods`.
pub fn run_monte_carlo(
    entry: &ModelCatalogEntry,
    sim: &SimConfig,
    spec: &EstimatorSpec,
    n_mc: usize,
) -> Result<Vec<McReport>> {
    if n_mc < 2 {
        return Err(Error::Config("at least 2 replicates are needed".into()));
    }
    if spec.methods.is_empty() {
        return Err(Error::Config("no estimator selected".into()));
    }
    if !(spec.init_scale > 0.0) {
        return Err(Error::Config("init_scale must be positive".into()));
    }
    sim.validate()?;

    let replicates: Vec<Vec<Option<DVector<f64>>>> = (0..n_mc)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(sim.seed, r as u64);
            let cfg = SimConfig { seed, ..sim.clone() };
            let Ok(obs) = simulate_entry(entry, &cfg) else {
                return vec![None; spec.methods.len()];
            };
            let est_cfg = EstimatorConfig {
                seed: derive_seed(seed, u64::MAX),
                ..spec.config.clone()
            };
            spec.methods
                .iter()
                .map(|&m| usable(&estimate_one(entry, &obs, spec, &est_cfg, m)))
                .collect()
        })
        .collect();

    spec.methods
        .iter()
        .enumerate()
        .map(|(k, method)| {
            let estimates: Vec<DVector<f64>> = replicates.iter().filter_map(|r| r[k].clone()).collect();
            let failures = n_mc - estimates.len();
            if 2 * failures > n_mc {
                return Err(Error::TooManyFailures {
                    failures,
                    total: n_mc,
                });
            }
            McReport::from_estimates(
                method.label(),
                &entry.param_names,
                &entry.true_theta,
                &estimates,
                failures,
            )
        })
        .collect()
}

fn trapezoid(values: &[f64], points: &[f64]) -> f64 {
    points
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Integrated pointwise variance `V^f` and mean squared error `M^f` of
/// replicate curves against `a_star`, all sampled on `points`.
pub fn semiparam_metrics(curves: &[Vec<f64>], a_star: &[f64], points: &[f64]) -> Result<(f64, f64)> {
    if curves.len() < 2 {
        return Err(Error::Config("at least 2 replicate curves are needed".into()));
    }
    if a_star.len() != points.len() || curves.iter().any(|c| c.len() != points.len()) {
        return Err(Error::Dimension("curves are not sampled on the same grid".into()));
    }
    let n = curves.len() as f64;
    let mut var = vec![0.0; points.len()];
    let mut err = vec![0.0; points.len()];
    for j in 0..points.len() {
        let mean = curves.iter().map(|c| c[j]).sum::<f64>() / n;
        var[j] = curves.iter().map(|c| (c[j] - mean).powi(2)).sum::<f64>() / n;
        err[j] = curves.iter().map(|c| (c[j] - a_star[j]).powi(2)).sum::<f64>() / n;
    }
    Ok((trapezoid(&var, points), trapezoid(&err, points)))
}

/// `M^f` of the best constant approximation of `a_star`, found by golden
/// section search on `c -> int (c - a_star)^2`.
pub fn best_constant_mf(a_star: &[f64], points: &[f64]) -> f64 {
    let loss = |c: f64| {
        let sq: Vec<f64> = a_star.iter().map(|a| (c - a).powi(2)).collect();
        trapezoid(&sq, points)
    };
    let (mut lo, mut hi) = a_star
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &a| (l.min(a), h.max(a)));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    while hi - lo > 1e-12 * (1.0 + hi.abs()) {
        let c1 = hi - g * (hi - lo);
        let c2 = lo + g * (hi - lo);
        if loss(c1) <= loss(c2) {
            hi = c2;
        } else {
            lo = c1;
        }
    }
    loss(0.5 * (lo + hi))
}

/// FitzHugh-Nagumo with `a(t) = 0.2 (1 + sin(t / 5))` recovered through the
/// extended state.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiParamExperiment {
    pub n_obs: usize,
    pub sigma: f64,
    pub replicates: usize,
    pub k_n: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    /// Starting `(b, c)`.
    pub theta_init: DVector<f64>,
    pub config: EstimatorConfig,
}

impl Default for SemiParamExperiment {
    fn default() -> Self {
        SemiParamExperiment {
            n_obs: 50,
            sigma: 0.03,
            replicates: 10,
            k_n: 20,
            lambda1: 1e-3,
            lambda2: 1e-2,
            seed: 0,
            theta_init: DVector::from_vec(vec![0.2, 3.0]),
            config: EstimatorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiParamOutcome {
    pub points: Vec<f64>,
    pub a_star: Vec<f64>,
    pub curves: Vec<Vec<f64>>,
    /// Estimated `(b, c)` per successful replicate.
    pub thetas: Vec<DVector<f64>>,
    pub failures: usize,
    pub vf: f64,
    pub mf: f64,
    pub mf_best_constant: f64,
}

pub fn run_semiparam(exp: &SemiParamExperiment) -> Result<SemiParamOutcome> {
    let spec = SemiParamSpec::new(fhn_functional_model(), exp.lambda1, exp.lambda2)?;
    let model = extend_semiparametric(&spec)?;
    let base = fhn_functional_model();
    let horizon = 20.0;
    let times = observation_times(horizon, exp.n_obs, false);
    let truth_bc = DVector::from_vec(vec![0.2, 3.0]);
    let x0 = DVector::from_vec(vec![-1.0, 1.0, 1.0]);
    let hyper = Hyper {
        k_n: exp.k_n,
        lambda: exp.lambda1,
    };
    let fd = base.functional_dim;

    let runs: Vec<Option<(Vec<f64>, Vec<f64>, DVector<f64>)>> = (0..exp.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(exp.seed, r as u64);
            let sim = SimConfig {
                n_obs: exp.n_obs,
                sigma: exp.sigma,
                seed,
                ..SimConfig::default()
            };
            let obs = simulate_ode(
                fhn_functional_field(fhn_functional_truth),
                &base.obs_matrix,
                &truth_bc,
                &x0,
                &times,
                &sim,
            )
            .ok()?;
            let cfg = EstimatorConfig {
                seed: derive_seed(seed, u64::MAX),
                horizon: Some(horizon),
                ..exp.config.clone()
            };
            let res = estimate_tracking(&model, &obs, hyper, &cfg, true, &exp.theta_init).ok()?;
            let fit = &res.subjects[0];
            let sol = fit.solution.as_ref()?;
            if !sol.converged {
                return None;
            }
            let curve = sol.trajectory.iter().map(|x| x[base.state_dim]).collect();
            debug_assert_eq!(fd, 1);
            Some((fit.grid_points.clone(), curve, res.theta_hat))
        })
        .collect();

    let mut points = Vec::new();
    let mut curves = Vec::new();
    let mut thetas = Vec::new();
    for (p, c, th) in runs.into_iter().flatten() {
        points = p;
        curves.push(c);
        thetas.push(th);
    }
    let failures = exp.replicates - curves.len();
    if 2 * failures > exp.replicates || curves.len() < 2 {
        return Err(Error::TooManyFailures {
            failures,
            total: exp.replicates,
        });
    }
    let a_star: Vec<f64> = points.iter().map(|&t| fhn_functional_truth(t)).collect();
    let (vf, mf) = semiparam_metrics(&curves, &a_star, &points)?;
    Ok(SemiParamOutcome {
        mf_best_constant: best_constant_mf(&a_star, &points),
        points,
        a_star,
        curves,
        thetas,
        failures,
        vf,
        mf,
    })
}
