//! Command-line front end.
//!
//! Every option can come from a TOML file (`--config`) or a flag; flags win.
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use odetrack::bench::{run_monte_carlo, run_semiparam, write_mc_csv, write_mc_rows, EstimatorSpec, SemiParamExperiment};
use odetrack::estimator::{
    estimate_tracking_multi, nls_estimate_multi, observability_check, select_hyperparams, write_ep_csv,
    EstimationResult, EstimatorConfig, Hyper, HyperGrid, Method,
};
use odetrack::model::catalog::{catalog_by_name, MicrobiotaConstants, ModelCatalogEntry};
use odetrack::numfmt::fmt12;
use odetrack::ode::integrate_rk4;
use odetrack::sdre::SdreConfig;
use odetrack::sim::{simulate_entry, Misspec, SimConfig};
use odetrack::{build_grid, load_observations, save_observations, Error, ObservationSet, Result};

#[derive(Parser, Debug)]
#[command(name = "odetrack", version, about = "ODE parameter estimation by optimal-control tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate observations of a catalog model and write them as CSV.
    Simulate(Opts),
    /// Estimate parameters from data (tracking, profiled initial condition by default).
    Estimate(Opts),
    /// Monte-Carlo benchmark of one model/noise cell.
    Bench(Opts),
    /// Reciprocal condition number of the observability matrix.
    Observability(Opts),
    /// Recover a time-varying FitzHugh-Nagumo parameter.
    Semiparam(Opts),
}

#[derive(Args, Debug, Default, Clone)]
struct Opts {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Catalog model: apinene, fhn, repressilator, microbiota.
    #[arg(long)]
    model: Option<String>,
    /// Constants file for the microbiota model.
    #[arg(long)]
    constants: Option<PathBuf>,
    /// Observation CSV; repeat for several subjects.
    #[arg(long)]
    data: Vec<PathBuf>,
    /// Estimate on freshly simulated data instead of `--data`.
    #[arg(long)]
    simulate: bool,
    /// Number of observations.
    #[arg(long)]
    n: Option<usize>,
    /// Observation noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also observe at t = 0.
    #[arg(long)]
    include_t0: bool,
    /// Process-noise misspecification: `sigma_c2=V`, `sigma_r2=V` or `glv=PATH`.
    #[arg(long)]
    misspec: Option<String>,
    /// Which initial condition of the catalog entry to simulate.
    #[arg(long)]
    subject: Option<usize>,
    /// Grid refinement (points per observation interval).
    #[arg(long)]
    k_n: Option<usize>,
    /// Control penalty.
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated k_n values for forward cross-validation.
    #[arg(long, value_delimiter = ',')]
    k_n_grid: Option<Vec<usize>>,
    /// Comma-separated lambda values for forward cross-validation.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Number of cross-validation subintervals.
    #[arg(long)]
    h: Option<usize>,
    /// Second penalty of the semi-parametric experiment.
    #[arg(long)]
    lambda2: Option<f64>,
    /// Run the nonlinear least-squares baseline instead (`nls`).
    #[arg(long)]
    baseline: Option<String>,
    /// Co-estimate the initial condition instead of profiling it.
    #[arg(long)]
    no_ci: bool,
    /// Comma-separated starting parameters; defaults to the catalog values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta_init: Option<Vec<f64>>,
    /// Comma-separated parameters for `observability`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// Comma-separated observed state indices (0-based) for `observability`.
    #[arg(long, value_delimiter = ',')]
    observe: Option<Vec<usize>>,
    /// Starting guess as a multiple of the true parameter (bench).
    #[arg(long)]
    init_scale: Option<f64>,
    /// Comma-separated estimators for bench: T, T_CI, NLS.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Monte-Carlo replicates.
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    n_starts: Option<usize>,
    #[arg(long)]
    max_evals: Option<usize>,
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
    #[arg(long)]
    l_max: Option<usize>,
    #[arg(long)]
    anderson_depth: Option<usize>,
    /// Output file (simulate, bench, semiparam) or directory (estimate).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    data: DataSection,
    #[serde(default)]
    sim: SimSection,
    #[serde(default)]
    hyper: HyperSection,
    #[serde(default)]
    sdre: SdreSection,
    #[serde(default)]
    estimator: EstimatorSection,
    #[serde(default)]
    bench: BenchSection,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    name: Option<String>,
    constants: Option<PathBuf>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct DataSection {
    #[serde(default)]
    paths: Vec<PathBuf>,
    simulate: Option<bool>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct SimSection {
    n: Option<usize>,
    sigma: Option<f64>,
    include_t0: Option<bool>,
    misspec: Option<String>,
    subject: Option<usize>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct HyperSection {
    k_n: Option<usize>,
    lambda: Option<f64>,
    k_n_grid: Option<Vec<usize>>,
    lambda_grid: Option<Vec<f64>>,
    h: Option<usize>,
    lambda2: Option<f64>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct SdreSection {
    eps1: Option<f64>,
    eps2: Option<f64>,
    l_max: Option<usize>,
    anderson_depth: Option<usize>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct EstimatorSection {
    baseline: Option<String>,
    ci: Option<bool>,
    theta_init: Option<Vec<f64>>,
    theta: Option<Vec<f64>>,
    observe: Option<Vec<usize>>,
    n_starts: Option<usize>,
    max_evals: Option<usize>,
    init_scale: Option<f64>,
    estimators: Option<Vec<String>>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct BenchSection {
    replicates: Option<usize>,
}

/// Flags merged over the config file. Relative paths from the file are
/// resolved against the file's directory.
#[derive(Debug)]
struct Settings {
    model: Option<String>,
    constants: Option<PathBuf>,
    data: Vec<PathBuf>,
    simulate: bool,
    n: Option<usize>,
    sigma: f64,
    seed: u64,
    include_t0: bool,
    misspec: Option<String>,
    subject: usize,
    k_n: Option<usize>,
    lambda: Option<f64>,
    k_n_grid: Option<Vec<usize>>,
    lambda_grid: Option<Vec<f64>>,
    h: usize,
    lambda2: Option<f64>,
    baseline: Option<String>,
    ci: bool,
    theta_init: Option<Vec<f64>>,
    theta: Option<Vec<f64>>,
    observe: Option<Vec<usize>>,
    init_scale: f64,
    estimators: Option<Vec<String>>,
    replicates: Option<usize>,
    n_starts: Option<usize>,
    max_evals: Option<usize>,
    sdre: SdreSection,
    out: Option<PathBuf>,
    jobs: usize,
}

impl Settings {
    fn resolve(opts: Opts) -> Result<Settings> {
        let (file, base) = match &opts.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                let file: FileConfig =
                    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (file, base)
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let data = if opts.data.is_empty() {
            file.data.paths.into_iter().map(rel).collect()
        } else {
            opts.data
        };
        Ok(Settings {
            model: opts.model.or(file.model.name),
            constants: opts.constants.or(file.model.constants.map(rel)),
            data,
            simulate: opts.simulate || file.data.simulate.unwrap_or(false),
            n: opts.n.or(file.sim.n),
            sigma: opts.sigma.or(file.sim.sigma).unwrap_or(0.0),
            seed: opts.seed.or(file.seed).unwrap_or(0),
            include_t0: opts.include_t0 || file.sim.include_t0.unwrap_or(false),
            misspec: opts.misspec.or(file.sim.misspec),
            subject: opts.subject.or(file.sim.subject).unwrap_or(0),
            k_n: opts.k_n.or(file.hyper.k_n),
            lambda: opts.lambda.or(file.hyper.lambda),
            k_n_grid: opts.k_n_grid.or(file.hyper.k_n_grid),
            lambda_grid: opts.lambda_grid.or(file.hyper.lambda_grid),
            h: opts.h.or(file.hyper.h).unwrap_or(5),
            lambda2: opts.lambda2.or(file.hyper.lambda2),
            baseline: opts.baseline.or(file.estimator.baseline),
            ci: !opts.no_ci && file.estimator.ci.unwrap_or(true),
            theta_init: opts.theta_init.or(file.estimator.theta_init),
            theta: opts.theta.or(file.estimator.theta),
            observe: opts.observe.or(file.estimator.observe),
            init_scale: opts.init_scale.or(file.estimator.init_scale).unwrap_or(1.0),
            estimators: opts.estimators.or(file.estimator.estimators),
            replicates: opts.replicates.or(file.bench.replicates),
            n_starts: opts.n_starts.or(file.estimator.n_starts),
            max_evals: opts.max_evals.or(file.estimator.max_evals),
            sdre: SdreSection {
                eps1: opts.eps1.or(file.sdre.eps1),
                eps2: opts.eps2.or(file.sdre.eps2),
                l_max: opts.l_max.or(file.sdre.l_max),
                anderson_depth: opts.anderson_depth.or(file.sdre.anderson_depth),
            },
            out: opts.out.or(file.out.map(rel)),
            jobs: opts.jobs.or(file.jobs).unwrap_or(0),
        })
    }

    fn entry(&self) -> Result<ModelCatalogEntry> {
        let name = self
            .model
            .as_deref()
            .ok_or_else(|| Error::Config("no model given (--model)".into()))?;
        catalog_by_name(name, self.constants.as_deref())
    }

    fn sim_config(&self) -> Result<SimConfig> {
        let misspec = match self.misspec.as_deref() {
            None | Some("none") => Misspec::None,
            Some(spec) => parse_misspec(spec)?,
        };
        let cfg = SimConfig {
            n_obs: self.n.unwrap_or(SimConfig::default().n_obs),
            sigma: self.sigma,
            seed: self.seed,
            misspec,
            integrator_step: None,
            include_t0: self.include_t0,
            subject: self.subject,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn hyper(&self, model: &str) -> Hyper {
        let d = default_hyper(model);
        Hyper {
            k_n: self.k_n.unwrap_or(d.k_n),
            lambda: self.lambda.unwrap_or(d.lambda),
        }
    }

    fn hyper_grid(&self) -> Result<Option<HyperGrid>> {
        match (&self.k_n_grid, &self.lambda_grid) {
            (None, None) => Ok(None),
            (k, l) => {
                let grid = HyperGrid {
                    k_n_values: k.clone().or(self.k_n.map(|k| vec![k])).unwrap_or_default(),
                    lambda_values: l.clone().or(self.lambda.map(|l| vec![l])).unwrap_or_default(),
                    h: self.h,
                };
                grid.validate()?;
                Ok(Some(grid))
            }
        }
    }

    fn estimator_config(&self) -> Result<EstimatorConfig> {
        let mut cfg = EstimatorConfig {
            seed: self.seed,
            ..EstimatorConfig::default()
        };
        let s = &self.sdre;
        let d = SdreConfig::default();
        cfg.sdre = SdreConfig {
            eps1: s.eps1.unwrap_or(d.eps1),
            eps2: s.eps2.unwrap_or(d.eps2),
            l_max: s.l_max.unwrap_or(d.l_max),
            anderson_depth: s.anderson_depth.unwrap_or(d.anderson_depth),
            x0_ref: None,
        };
        cfg.sdre.validate()?;
        if let Some(k) = self.n_starts {
            cfg.n_starts = k;
        }
        if let Some(m) = self.max_evals {
            cfg.optimizer.max_evals = m;
        }
        Ok(cfg)
    }

    fn theta_init(&self, entry: &ModelCatalogEntry) -> Result<DVector<f64>> {
        match &self.theta_init {
            Some(v) => param_vector(v, entry),
            None => Ok(&entry.true_theta * self.init_scale),
        }
    }

    fn nls(&self) -> Result<bool> {
        match self.baseline.as_deref() {
            None | Some("none") => Ok(false),
            Some("nls") => Ok(true),
            Some(other) => Err(Error::Config(format!("unknown baseline '{other}'; expected nls"))),
        }
    }

    fn out(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

/// Hyperparameters used when none are given.
fn default_hyper(model: &str) -> Hyper {
    match model {
        "apinene" | "alpha-pinene" => Hyper { k_n: 30, lambda: 1.0 },
        "fhn" | "fitzhugh-nagumo" => Hyper { k_n: 50, lambda: 0.01 },
        _ => Hyper { k_n: 20, lambda: 0.1 },
    }
}

fn parse_misspec(spec: &str) -> Result<Misspec> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("misspecification '{spec}' is not KEY=VALUE")))?;
    let number = || {
        value
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad variance '{value}'")))
    };
    match key.trim() {
        "sigma_c2" => Ok(Misspec::MultiplicativeWhite { sigma_c2: number()? }),
        "sigma_r2" => Ok(Misspec::HypoellipticFhn { sigma_r2: number()? }),
        "glv" => Ok(Misspec::FullGlv(Box::new(MicrobiotaConstants::load(Path::new(value.trim()))?))),
        other => Err(Error::Config(format!(
            "unknown misspecification '{other}'; expected sigma_c2, sigma_r2 or glv"
        ))),
    }
}

fn param_vector(v: &[f64], entry: &ModelCatalogEntry) -> Result<DVector<f64>> {
    if v.len() != entry.model.param_dim() {
        return Err(Error::Config(format!(
            "expected {} parameters, got {}",
            entry.model.param_dim(),
            v.len()
        )));
    }
    Ok(DVector::from_column_slice(v))
}

fn parse_method(label: &str) -> Result<Method> {
    match label.trim() {
        "T" => Ok(Method::Tracking),
        "T_CI" | "T,CI" | "TCI" => Ok(Method::TrackingCi),
        "NLS" | "nls" => Ok(Method::Nls),
        other => Err(Error::Config(format!("unknown estimator '{other}'; expected T, T_CI or NLS"))),
    }
}

fn cmd_simulate(s: &Settings) -> Result<()> {
    let entry = s.entry()?;
    let cfg = s.sim_config()?;
    let out = s
        .out
        .clone()
        .ok_or_else(|| Error::Config("simulate needs --out".into()))?;
    let obs = simulate_entry(&entry, &cfg)?;
    save_observations(&obs, &out)?;
    println!("{}", out.display());
    Ok(())
}

fn observations(s: &Settings, entry: &ModelCatalogEntry) -> Result<Vec<ObservationSet>> {
    match (s.simulate, s.data.is_empty()) {
        (true, false) => Err(Error::Config("give either --data or --simulate, not both".into())),
        (false, true) => Err(Error::Config("no data: give --data PATH or --simulate".into())),
        (true, true) => Ok(vec![simulate_entry(entry, &s.sim_config()?)?]),
        (false, false) => s.data.iter().map(|p| load_observations(p)).collect(),
    }
}

fn print_result(res: &EstimationResult, names: &[String]) {
    println!("method: {}", res.method.label());
    for (name, v) in names.iter().zip(res.theta_hat.iter()) {
        println!("  {name} = {}", fmt12(*v));
    }
    println!("cost: {}", fmt12(res.cost));
    if let Some(h) = res.hyper {
        println!("k_n: {}  lambda: {}", h.k_n, fmt12(h.lambda));
    }
    println!("optimizer_converged: {}  evals: {}", res.converged, res.optimizer_evals);
    if let Some(c) = res.sdre_converged() {
        println!("sdre_converged: {c}");
    }
}

fn cmd_estimate(s: &Settings) -> Result<()> {
    let entry = s.entry()?;
    let obs = observations(s, &entry)?;
    let cfg = s.estimator_config()?;
    let init = s.theta_init(&entry)?;
    let out_dir = s.out(".");
    fs::create_dir_all(&out_dir)?;

    let result = if s.nls()? {
        nls_estimate_multi(&entry.model, &obs, &cfg, &init)?
    } else if let Some(grid) = s.hyper_grid()? {
        if obs.len() != 1 {
            return Err(Error::Config("hyperparameter selection takes a single data set".into()));
        }
        let sel = select_hyperparams(&entry.model, &obs[0], &grid, &cfg, s.ci, &init)?;
        let path = out_dir.join("ep.csv");
        write_ep_csv(&sel.table, &path)?;
        println!("EP table: {}", path.display());
        sel.result
    } else {
        let hyper = s.hyper(entry.model.name());
        estimate_tracking_multi(&entry.model, &obs, hyper, &cfg, s.ci, &init)?
    };

    print_result(&result, &entry.param_names);
    let json = out_dir.join("estimate.json");
    result.write_json(&json, &entry.param_names)?;
    println!("result: {}", json.display());
    if result.solution().is_some() {
        let csv = out_dir.join("control.csv");
        result.write_control_csv(&csv)?;
        println!("control: {}", csv.display());
    }
    Ok(())
}

fn cmd_bench(s: &Settings) -> Result<()> {
    let entry = s.entry()?;
    let sim = s.sim_config()?;
    let methods = match &s.estimators {
        Some(list) => list.iter().map(|m| parse_method(m)).collect::<Result<Vec<_>>>()?,
        None if s.nls()? => vec![Method::Nls],
        None => vec![Method::TrackingCi, Method::Nls],
    };
    let spec = EstimatorSpec {
        methods,
        hyper: s.hyper(entry.model.name()),
        grid: s.hyper_grid()?,
        config: s.estimator_config()?,
        init_scale: s.init_scale,
    };
    let reports = run_monte_carlo(&entry, &sim, &spec, s.replicates.unwrap_or(20))?;
    let out = s.out("bench.csv");
    write_mc_csv(&reports, &out)?;
    let mut stdout = std::io::stdout().lock();
    write_mc_rows(&reports, &mut stdout)?;
    writeln!(stdout, "report: {}", out.display())?;
    Ok(())
}

fn cmd_observability(s: &Settings) -> Result<()> {
    let entry = s.entry()?;
    let theta = match &s.theta {
        Some(v) => param_vector(v, &entry)?,
        None => entry.true_theta.clone(),
    };
    let d = entry.model.state_dim();
    let model = match &s.observe {
        None => entry.model.clone(),
        Some(idx) => {
            if let Some(&bad) = idx.iter().find(|&&i| i >= d) {
                return Err(Error::Config(format!("state index {bad} out of range (d = {d})")));
            }
            let c = DMatrix::from_fn(idx.len().max(1), d, |r, col| {
                if r < idx.len() && idx[r] == col {
                    1.0
                } else {
                    0.0
                }
            });
            entry.model.clone().with_obs_matrix(c)?
        }
    };
    // noiseless trajectory along the grid serves as the frozen reference
    let sim = SimConfig {
        sigma: 0.0,
        ..s.sim_config()?
    };
    let obs = simulate_entry(&entry, &sim)?;
    let hyper = s.hyper(entry.model.name());
    let grid = build_grid(&obs, hyper.k_n, entry.horizon)?;
    let x0 = entry.effective_initial(&entry.true_x0[sim.subject.min(entry.true_x0.len() - 1)]);
    let field = |x: &DVector<f64>, t: f64| entry.model.vector_field(x, t, &theta);
    let points = grid.points();
    let mut reference = vec![x0.clone()];
    reference.extend(integrate_rk4(&field, &x0, 0.0, &points[1..], entry.horizon / 2000.0)?);
    let check = observability_check(&model, &theta, &grid, &reference)?;
    println!("rcond: {}", fmt12(check.rcond));
    println!("invertible: {}", check.invertible);
    Ok(())
}

fn cmd_semiparam(s: &Settings) -> Result<()> {
    let d = SemiParamExperiment::default();
    let exp = SemiParamExperiment {
        n_obs: s.n.unwrap_or(d.n_obs),
        sigma: if s.sigma > 0.0 { s.sigma } else { d.sigma },
        replicates: s.replicates.unwrap_or(d.replicates),
        k_n: s.k_n.unwrap_or(d.k_n),
        lambda1: s.lambda.unwrap_or(d.lambda1),
        lambda2: s.lambda2.unwrap_or(d.lambda2),
        seed: s.seed,
        theta_init: match &s.theta_init {
            Some(v) if v.len() == 2 => DVector::from_column_slice(v),
            Some(_) => return Err(Error::Config("semiparam takes two starting values (b, c)".into())),
            None => d.theta_init,
        },
        config: s.estimator_config()?,
    };
    let outcome = run_semiparam(&exp)?;
    let n = outcome.thetas.len() as f64;
    let mean = outcome.thetas.iter().fold(DVector::zeros(2), |acc, t| acc + t) / n;
    println!("replicates: {}  failures: {}", exp.replicates, outcome.failures);
    println!("Vf: {}", fmt12(outcome.vf));
    println!("Mf: {}", fmt12(outcome.mf));
    println!("Mf_best_constant: {}", fmt12(outcome.mf_best_constant));
    println!("mean b: {}  mean c: {}", fmt12(mean[0]), fmt12(mean[1]));

    let out = s.out("semiparam.csv");
    let mut file = std::io::BufWriter::new(fs::File::create(&out)?);
    let mut header = String::from("t,a_star,a_mean");
    for r in 0..outcome.curves.len() {
        header.push_str(&format!(",a_{}", r + 1));
    }
    writeln!(file, "{header}")?;
    for (j, t) in outcome.points.iter().enumerate() {
        let values: Vec<f64> = outcome.curves.iter().map(|c| c[j]).collect();
        let avg = values.iter().sum::<f64>() / values.len() as f64;
        let mut line = format!("{},{},{}", fmt12(*t), fmt12(outcome.a_star[j]), fmt12(avg));
        for v in values {
            line.push(',');
            line.push_str(&fmt12(v));
        }
        writeln!(file, "{line}")?;
    }
    file.flush()?;
    println!("curves: {}", out.display());
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    let (opts, f): (Opts, fn(&Settings) -> Result<()>) = match cmd {
        Command::Simulate(o) => (o, cmd_simulate),
        Command::Estimate(o) => (o, cmd_estimate),
        Command::Bench(o) => (o, cmd_bench),
        Command::Observability(o) => (o, cmd_observability),
        Command::Semiparam(o) => (o, cmd_semiparam),
    };
    let settings = Settings::resolve(opts)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| f(&settings))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 3 })
        }
    }
}
