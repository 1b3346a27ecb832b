//! Synthetic data: RK4 solutions of the catalog models, stochastically
//! perturbed variants, and Gaussian observation noise.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::model::catalog::{MicrobiotaConstants, ModelCatalogEntry};
use crate::ode::{integrate_rk4, substeps};

/// Stream tags for [`derive_seed`].
const OBS_STREAM: u64 = 1;
const PROCESS_STREAM: u64 = 2;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for sub-stream `index` of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Misspec {
    None,
    /// `dx = f(x) dt + c_t x dt`, one `c_t ~ N(0, sigma_c2)` per step shared by
    /// all non-constant components.
    MultiplicativeWhite { sigma_c2: f64 },
    /// FitzHugh-Nagumo with `sigma_r dW` on the recovery variable only.
    HypoellipticFhn { sigma_r2: f64 },
    /// Full 11-species generalized Lotka-Volterra truth, observed on the
    /// restricted species.
    FullGlv(Box<MicrobiotaConstants>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_obs: usize,
    pub sigma: f64,
    pub seed: u64,
    pub misspec: Misspec,
    /// Integrator step; `horizon / 2000` when unset.
    pub integrator_step: Option<f64>,
    /// Adds an observation at `t = 0` before `T/n, 2T/n, ..., T`.
    pub include_t0: bool,
    /// Which of the entry's initial conditions to simulate.
    pub subject: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_obs: 10,
            sigma: 0.0,
            seed: 0,
            misspec: Misspec::None,
            integrator_step: None,
            include_t0: false,
            subject: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_obs == 0 {
            return Err(Error::Config("too few observations".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config("sigma must be non-negative".into()));
        }
        match &self.misspec {
            Misspec::MultiplicativeWhite { sigma_c2: v } | Misspec::HypoellipticFhn { sigma_r2: v }
                if !(*v >= 0.0) || !v.is_finite() =>
            {
                Err(Error::Config("noise variances must be non-negative".into()))
            }
            _ => match self.integrator_step {
                Some(h) if !(h > 0.0) => Err(Error::Config("integrator step must be positive".into())),
                _ => Ok(()),
            },
        }
    }

    fn step(&self, horizon: f64) -> f64 {
        self.integrator_step.unwrap_or(horizon / 2000.0)
    }
}

/// `T/n, 2T/n, ..., T`, preceded by `0` when `include_t0`.
pub fn observation_times(horizon: f64, n: usize, include_t0: bool) -> Vec<f64> {
    let start = if include_t0 { 0 } else { 1 };
    (start..=n).map(|i| horizon * i as f64 / n as f64).collect()
}

fn add_noise(clean: Vec<DVector<f64>>, times: Vec<f64>, sigma: f64, seed: u64) -> Result<ObservationSet> {
    let values = if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, OBS_STREAM));
        let normal = Normal::new(0.0, sigma).expect("valid sigma");
        clean
            .into_iter()
            .map(|y| y.map(|v| v + normal.sample(&mut rng)))
            .collect()
    } else {
        clean
    };
    ObservationSet::new(times, values)
}

/// RK4 solution of `field` observed through `obs_matrix` at `times`, plus
/// `N(0, sigma^2)` noise. Integration starts at `t = 0`.
pub fn simulate_ode<F>(
    field: F,
    obs_matrix: &DMatrix<f64>,
    theta: &DVector<f64>,
    x0: &DVector<f64>,
    times: &[f64],
    cfg: &SimConfig,
) -> Result<ObservationSet>
where
    F: Fn(&DVector<f64>, f64, &DVector<f64>) -> DVector<f64>,
{
    cfg.validate()?;
    let horizon = times.last().copied().unwrap_or(0.0);
    let f = |x: &DVector<f64>, t: f64| field(x, t, theta);
    let states = integrate_rk4(&f, x0, 0.0, times, cfg.step(horizon))?;
    let clean = states.iter().map(|x| obs_matrix * x).collect();
    add_noise(clean, times.to_vec(), cfg.sigma, cfg.seed)
}

/// Simulates a catalog entry at its true parameters.
pub fn simulate_entry(entry: &ModelCatalogEntry, cfg: &SimConfig) -> Result<ObservationSet> {
    cfg.validate()?;
    let times = observation_times(entry.horizon, cfg.n_obs, cfg.include_t0);
    let x0 = subject_initial(entry, cfg.subject)?;
    let step = cfg.step(entry.horizon);
    let c = entry.model.obs_matrix();
    let theta = &entry.true_theta;
    let clean: Vec<DVector<f64>> = match &cfg.misspec {
        Misspec::None
        | Misspec::MultiplicativeWhite { sigma_c2: 0.0 }
        | Misspec::HypoellipticFhn { sigma_r2: 0.0 } => {
            let f = |x: &DVector<f64>, t: f64| entry.raw_field(x, t, theta);
            integrate_rk4(&f, &x0, 0.0, &times, step)?
                .iter()
                .map(|x| c * x)
                .collect()
        }
        Misspec::MultiplicativeWhite { sigma_c2 } => {
            let free: Vec<bool> = entry.model.fixed_initial().iter().map(|v| v.is_none()).collect();
            let sd = sigma_c2.sqrt();
            euler_maruyama(entry, &x0, &times, step, cfg.seed, |x, h, xi| {
                let c_t = sd * xi;
                DVector::from_fn(x.len(), |i, _| if free[i] { h * c_t * x[i] } else { 0.0 })
            })?
            .iter()
            .map(|x| c * x)
            .collect()
        }
        Misspec::HypoellipticFhn { sigma_r2 } => {
            if entry.model.state_dim() != 3 || entry.model.name() != "fhn" {
                return Err(Error::Config(
                    "hypoelliptic noise applies to the FitzHugh-Nagumo model only".into(),
                ));
            }
            let sd = sigma_r2.sqrt();
            euler_maruyama(entry, &x0, &times, step, cfg.seed, |x, h, xi| {
                let mut dx = DVector::zeros(x.len());
                dx[1] = sd * h.sqrt() * xi;
                dx
            })?
            .iter()
            .map(|x| c * x)
            .collect()
        }
        Misspec::FullGlv(constants) => {
            if entry.model.state_dim() != 7 {
                return Err(Error::Config("the full gLV truth needs the microbiota entry".into()));
            }
            let full = constants
                .subjects
                .get(cfg.subject)
                .ok_or_else(|| Error::Config(format!("no subject {}", cfg.subject + 1)))?;
            let start = constants.apply_impulse(full);
            let field = constants.full_field();
            let f = |x: &DVector<f64>, _t: f64| field(x);
            integrate_rk4(&f, &start, 0.0, &times, step)?
                .iter()
                .map(|x| c * constants.restrict(x))
                .collect()
        }
    };
    add_noise(clean, times, cfg.sigma, cfg.seed)
}

fn subject_initial(entry: &ModelCatalogEntry, subject: usize) -> Result<DVector<f64>> {
    let x0 = entry
        .true_x0
        .get(subject)
        .ok_or_else(|| Error::Config(format!("no subject {}", subject + 1)))?;
    Ok(entry.effective_initial(x0))
}

/// Euler-Maruyama with the drift of `entry` at its true parameters. `noise`
/// returns the stochastic increment from the pre-step state, the step and one
/// standard normal draw. Steps land exactly on the sample times.
fn euler_maruyama<N>(
    entry: &ModelCatalogEntry,
    x0: &DVector<f64>,
    times: &[f64],
    max_step: f64,
    seed: u64,
    noise: N,
) -> Result<Vec<DVector<f64>>>
where
    N: Fn(&DVector<f64>, f64, f64) -> DVector<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, PROCESS_STREAM));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let theta = &entry.true_theta;
    let mut out = Vec::with_capacity(times.len());
    let mut x = x0.clone();
    let mut t = 0.0;
    for &target in times {
        if target > t {
            let n = substeps(target - t, max_step);
            let h = (target - t) / n as f64;
            for k in 0..n {
                let tk = t + k as f64 * h;
                let drift = entry.raw_field(&x, tk, theta);
                let xi = normal.sample(&mut rng);
                x = &x + drift * h + noise(&x, h, xi);
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteState { time: tk + h });
                }
            }
            t = target;
        }
        out.push(x.clone());
    }
    Ok(out)
}
