//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints its own PASS/FAIL line. The long semi-parametric run is
//! skipped unless `--include-ignored`/`--ignored` is passed or
//! `ODETRACK_LONG=1` is set.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::random_instance;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use odetrack::bench::{run_monte_carlo, run_semiparam, EstimatorSpec, McReport, SemiParamExperiment};
use odetrack::estimator::{estimate_tracking, evaluate_tracking, observability_check, EstimatorConfig, Hyper, Method};
use odetrack::model::catalog::{
    catalog_alpha_pinene, catalog_by_name, catalog_fitzhugh_nagumo, ModelCatalogEntry, CATALOG_NAMES,
};
use odetrack::ode::integrate_rk4;
use odetrack::riccati::{brute_force_oracle, cost_sn, cost_sn_ci, forward_optimal, riccati_backward};
use odetrack::sdre::{linearize, sdre_track, sdre_track_ci, SdreConfig};
use odetrack::sim::{observation_times, simulate_entry, Misspec, SimConfig};
use odetrack::{build_grid, ObservationSet, PseudoLinearModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Master seed of the Monte-Carlo criteria.
const MC_SEED: u64 = 2024;
/// Starting guess of every Monte-Carlo estimator, as a multiple of the truth.
const MC_INIT_SCALE: f64 = 1.5;
const MC_REPLICATES: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

fn synthetic_constants() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/microbiota_synthetic.csv")
}

fn entry(name: &str) -> ModelCatalogEntry {
    let constants = synthetic_constants();
    catalog_by_name(name, Some(&constants)).unwrap()
}

fn riccati_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut cost_gap, mut control_gap) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let inst = random_instance(&mut rng);
        let pass = riccati_backward(&inst.sys, &inst.grid).unwrap();
        let sol = forward_optimal(&inst.sys, &inst.grid, &pass, &inst.x0).unwrap();
        let (bf_cost, bf_control) = brute_force_oracle(&inst.sys, &inst.grid, &inst.x0).unwrap();
        let sn = cost_sn(&pass, &inst.x0);
        cost_gap = cost_gap.max((sn - bf_cost).abs() / (1.0 + sn));
        for (a, b) in sol.control.iter().zip(&bf_control) {
            control_gap = control_gap.max((a - b).amax());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        cost_gap <= 1e-8 && control_gap <= 1e-6 && within(elapsed, 10),
        format!("max relative cost gap {cost_gap:.2e}, max control gap {control_gap:.2e}, {elapsed:.2?}"),
    )
}

fn structural_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut x_rng = ChaCha8Rng::seed_from_u64(102);
    let (mut asym, mut neg, mut ci_gap) = (0.0f64, 0.0f64, 0.0f64);
    let mut profiled = 0;
    for _ in 0..200 {
        let inst = random_instance(&mut rng);
        let pass = riccati_backward(&inst.sys, &inst.grid).unwrap();
        for j in 0..=pass.intervals() {
            let r = pass.r(j);
            asym = asym.max((&r - r.transpose()).amax());
            let norm = r.norm().max(f64::MIN_POSITIVE);
            let min_eig = SymmetricEigen::new(r).eigenvalues.min();
            neg = neg.max(-min_eig / norm);
        }
        // R0 is singular when the data cannot pin down x0; nothing to profile
        let Ok((value, xhat)) = cost_sn_ci(&pass) else {
            continue;
        };
        profiled += 1;
        let r0 = pass.r(0);
        for _ in 0..50 {
            let x = DVector::from_fn(xhat.len(), |_, _| x_rng.random_range(-3.0..3.0));
            let e = &x - &xhat;
            let quad = e.dot(&(&r0 * &e));
            ci_gap = ci_gap.max((cost_sn(&pass, &x) - value - quad).abs());
        }
    }
    outcome(
        asym <= 1e-10 && neg <= 1e-10 && ci_gap <= 1e-8 && profiled > 0,
        format!("asymmetry {asym:.1e}, worst relative eigenvalue {:.1e}, CI identity gap {ci_gap:.1e} over {profiled} profiled instances", -neg),
    )
}

/// Observations of the explicit Euler recursion on the observation grid.
fn euler_data(entry: &ModelCatalogEntry, n: usize) -> (ObservationSet, DVector<f64>) {
    let times = observation_times(entry.horizon, n, false);
    let x0 = entry.effective_initial(&entry.true_x0[0]);
    let theta = &entry.true_theta;
    let c = entry.model.obs_matrix();
    let (mut x, mut t) = (x0.clone(), 0.0);
    let mut values = Vec::with_capacity(n);
    for &ti in &times {
        x = &x + (ti - t) * entry.model.vector_field(&x, t, theta);
        t = ti;
        values.push(c * &x);
    }
    (ObservationSet::new(times, values).unwrap(), x0)
}

fn noiseless_self_consistency() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    // the fixed point itself is under test, so iterate until it stops moving
    let cfg = EstimatorConfig {
        sdre: SdreConfig {
            eps1: 1e-15,
            eps2: 1e-15,
            l_max: 500,
            ..SdreConfig::default()
        },
        ..EstimatorConfig::default()
    };
    for (name, n) in [("apinene", 100), ("fhn", 200), ("repressilator", 200), ("microbiota", 160)] {
        let e = entry(name);
        let (obs, x0) = euler_data(&e, n);
        let hyper = Hyper { k_n: 1, lambda: 1.0 };
        let res = evaluate_tracking(&e.model, &obs, hyper, &cfg, &e.true_theta, Some(&x0)).unwrap();
        let sol = res.solution().unwrap();
        let u_max = sol.control.iter().map(|u| u.amax()).fold(0.0, f64::max);
        let cost_ratio = res.cost / obs.energy();
        let u_ratio = u_max / obs.scale();
        pass &= cost_ratio <= 1e-8 && u_ratio <= 1e-6;
        details.push(format!(
            "{name}: S/energy {cost_ratio:.1e}, |u|/scale {u_ratio:.1e}, {} iterations",
            sol.iterations
        ));
    }
    let elapsed = start.elapsed();
    details.push(format!("{elapsed:.2?}"));
    outcome(pass && within(elapsed, 30), details.join("; "))
}

fn linear_collapse() -> Outcome {
    let e = catalog_alpha_pinene();
    let obs = simulate_entry(
        &e,
        &SimConfig {
            sigma: 2.5,
            seed: 5,
            ..SimConfig::default()
        },
    )
    .unwrap();
    let grid = build_grid(&obs, 30, e.horizon).unwrap();
    let u = e.model.weight_matrix(1.0);
    let cfg = SdreConfig::default();
    let x0 = &e.true_x0[0];

    let sol = sdre_track(&e.model, &e.true_theta, x0, &grid, &u, &cfg).unwrap();
    let sys = linearize(&e.model, &e.true_theta, &grid, &vec![x0.clone(); grid.intervals() + 1], &u).unwrap();
    let pass = riccati_backward(&sys, &grid).unwrap();
    let direct = forward_optimal(&sys, &grid, &pass, x0).unwrap();
    let fixed_ok = sol.converged && sol.iterations == 2 && sol.cost == direct.cost && sol.trajectory == direct.trajectory;

    let ci = sdre_track_ci(&e.model, &e.true_theta, &grid, &u, &cfg).unwrap();
    let (_, xhat) = cost_sn_ci(&pass).unwrap();
    let direct_ci = forward_optimal(&sys, &grid, &pass, &xhat).unwrap();
    let ci_ok = ci.converged && ci.iterations == 2 && ci.cost == direct_ci.cost && ci.trajectory == direct_ci.trajectory;
    outcome(
        fixed_ok && ci_ok,
        format!(
            "fixed x0: {} iterations, cost {:e} vs {:e}; profiled: {} iterations, cost {:e} vs {:e}",
            sol.iterations, sol.cost, direct.cost, ci.iterations, ci.cost, direct_ci.cost
        ),
    )
}

fn relative_errors(est: &DVector<f64>, truth: &DVector<f64>) -> Vec<f64> {
    est.iter().zip(truth.iter()).map(|(a, b)| ((a - b) / b).abs()).collect()
}

fn noiseless_identification() -> Outcome {
    let start = Instant::now();
    let cfg = EstimatorConfig::default();

    let e = catalog_alpha_pinene();
    let obs = simulate_entry(&e, &SimConfig::default()).unwrap();
    let init = &e.true_theta * 1.3;
    let res = estimate_tracking(&e.model, &obs, Hyper { k_n: 30, lambda: 1.0 }, &cfg, true, &init).unwrap();
    let ap = relative_errors(&res.theta_hat, &e.true_theta);
    let ap_ok = ap.iter().all(|&r| r <= 0.01);

    let e = catalog_fitzhugh_nagumo();
    let obs = simulate_entry(
        &e,
        &SimConfig {
            n_obs: 25,
            ..SimConfig::default()
        },
    )
    .unwrap();
    let init = DVector::from_vec(vec![0.3, 0.3, 2.5]);
    let res = estimate_tracking(&e.model, &obs, Hyper { k_n: 50, lambda: 0.01 }, &cfg, true, &init).unwrap();
    let fhn = relative_errors(&res.theta_hat, &e.true_theta);
    let fhn_ok = fhn[0] <= 0.02 && fhn[1] <= 0.10 && fhn[2] <= 0.02 && res.sdre_converged() == Some(true);

    let elapsed = start.elapsed();
    let pct = |v: &[f64]| v.iter().map(|r| format!("{:.2}%", 100.0 * r)).collect::<Vec<_>>().join(", ");
    outcome(
        ap_ok && fhn_ok && within(elapsed, 300),
        format!("alpha-pinene errors [{}]; FHN errors [{}]; {elapsed:.2?}", pct(&ap), pct(&fhn)),
    )
}

fn mc_spec(hyper: Hyper) -> EstimatorSpec {
    EstimatorSpec {
        methods: vec![Method::TrackingCi, Method::Nls],
        hyper,
        grid: None,
        config: EstimatorConfig::default(),
        init_scale: MC_INIT_SCALE,
    }
}

fn mc_cell(entry: &ModelCatalogEntry, sim: SimConfig, hyper: Hyper) -> (McReport, McReport, Duration) {
    let start = Instant::now();
    let mut reports = run_monte_carlo(entry, &sim, &mc_spec(hyper), MC_REPLICATES).unwrap();
    let nls = reports.pop().unwrap();
    let tci = reports.pop().unwrap();
    (tci, nls, start.elapsed())
}

fn apinene_variance() -> Outcome {
    let sim = SimConfig {
        n_obs: 10,
        sigma: 2.5,
        seed: MC_SEED,
        ..SimConfig::default()
    };
    let (tci, nls, elapsed) = mc_cell(&catalog_alpha_pinene(), sim, Hyper { k_n: 30, lambda: 1.0 });
    let reference = 0.65e-2;
    let ratio = tci.global_variance / reference;
    let band = (0.2..=3.0).contains(&ratio);
    let order = tci.global_variance <= nls.global_variance;
    outcome(
        band && order && within(elapsed, 900),
        format!(
            "|V(T,CI)| = {:.4e} ({ratio:.1}x the reference 0.65e-2, band [0.2, 3]: {}), |V(NLS)| = {:.4e}, ordering: {}, failures {}/{}, {elapsed:.2?}",
            tci.global_variance, band, nls.global_variance, order, tci.failures, nls.failures
        ),
    )
}

fn fhn_sloppiness() -> Outcome {
    let sim = SimConfig {
        n_obs: 25,
        sigma: 0.03,
        seed: MC_SEED,
        ..SimConfig::default()
    };
    let (tci, nls, elapsed) = mc_cell(&catalog_fitzhugh_nagumo(), sim, Hyper { k_n: 50, lambda: 0.01 });
    let (vt, vn) = (tci.variance[1], nls.variance[1]);
    outcome(
        vt < vn && within(elapsed, 1200),
        format!(
            "V(b) T,CI {vt:.4e} vs NLS {vn:.4e}, failures {}/{}, {elapsed:.2?}",
            tci.failures, nls.failures
        ),
    )
}

fn apinene_misspecified() -> Outcome {
    let sim = SimConfig {
        n_obs: 10,
        sigma: 2.5,
        seed: MC_SEED,
        misspec: Misspec::MultiplicativeWhite { sigma_c2: 0.002 },
        ..SimConfig::default()
    };
    let (tci, nls, elapsed) = mc_cell(&catalog_alpha_pinene(), sim, Hyper { k_n: 30, lambda: 1.0 });
    outcome(
        tci.global_mse < nls.global_mse && within(elapsed, 900),
        format!(
            "M(T,CI) {:.4e} vs M(NLS) {:.4e}, failures {}/{}, {elapsed:.2?}",
            tci.global_mse, nls.global_mse, tci.failures, nls.failures
        ),
    )
}

/// Linear model whose system matrix is `theta` read column-major.
fn matrix_model(d: usize) -> PseudoLinearModel {
    PseudoLinearModel::new(
        "random",
        d,
        d * d,
        move |_x, _t, th| DMatrix::from_column_slice(d, d, th.as_slice()),
        DMatrix::identity(d, d),
        DMatrix::identity(d, d),
        true,
    )
    .unwrap()
}

fn observability() -> Outcome {
    let e = catalog_fitzhugh_nagumo();
    let obs = simulate_entry(
        &e,
        &SimConfig {
            n_obs: 25,
            ..SimConfig::default()
        },
    )
    .unwrap();
    let grid = build_grid(&obs, 50, e.horizon).unwrap();
    let theta = &e.true_theta;
    let x0 = &e.true_x0[0];
    let field = |x: &DVector<f64>, t: f64| e.model.vector_field(x, t, theta);
    let mut reference = vec![x0.clone()];
    reference.extend(integrate_rk4(&field, x0, 0.0, &grid.points()[1..], e.horizon / 2000.0).unwrap());

    let v_only = e.model.clone().with_obs_matrix(DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0])).unwrap();
    let blind = e.model.clone().with_obs_matrix(DMatrix::zeros(1, 3)).unwrap();
    let o_v = observability_check(&v_only, theta, &grid, &reference).unwrap();
    let o_blind = observability_check(&blind, theta, &grid, &reference).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut full_ok = 0;
    for _ in 0..100 {
        let d = rng.random_range(1..=4);
        let n = rng.random_range(2..=8);
        let times: Vec<f64> = observation_times(rng.random_range(1.0..5.0), n, false);
        let horizon = *times.last().unwrap();
        let values = times.iter().map(|_| DVector::zeros(d)).collect();
        let obs = ObservationSet::new(times, values).unwrap();
        let grid = build_grid(&obs, rng.random_range(1..=4), horizon).unwrap();
        let theta = DVector::from_fn(d * d, |_, _| rng.random_range(-1.0..1.0));
        let check = observability_check(&matrix_model(d), &theta, &grid, &[DVector::zeros(d)]).unwrap();
        full_ok += usize::from(check.invertible);
    }
    outcome(
        o_v.invertible && !o_blind.invertible && full_ok == 100,
        format!(
            "FHN C=[1 0 0] rcond {:.3e}; C=0 rcond {:.1e}; C=I invertible on {full_ok}/100 random systems",
            o_v.rcond, o_blind.rcond
        ),
    )
}

fn semiparametric() -> Outcome {
    let start = Instant::now();
    let exp = SemiParamExperiment {
        seed: MC_SEED,
        ..SemiParamExperiment::default()
    };
    let out = run_semiparam(&exp).unwrap();
    let n = out.thetas.len() as f64;
    let mean = out.thetas.iter().fold(DVector::zeros(2), |acc, t| acc + t) / n;
    let truth = DVector::from_vec(vec![0.2, 3.0]);
    let err = relative_errors(&mean, &truth);
    let elapsed = start.elapsed();
    outcome(
        out.mf < out.mf_best_constant && err.iter().all(|&r| r <= 0.25) && within(elapsed, 1800),
        format!(
            "Mf {:.4e} vs best constant {:.4e}; mean (b, c) = ({:.4}, {:.4}); failures {}; {elapsed:.2?}",
            out.mf, out.mf_best_constant, mean[0], mean[1], out.failures
        ),
    )
}

fn bench_csv(jobs: usize, dir: &Path) -> Vec<u8> {
    let out = dir.join(format!("bench_{jobs}.csv"));
    let status = Command::new(env!("CARGO_BIN_EXE_odetrack"))
        .args(["bench", "--model", "apinene", "--sigma", "2.5", "--replicates", "4", "--seed", "17"])
        .args(["--estimators", "T_CI,NLS", "--n-starts", "2", "--max-evals", "400"])
        .args(["--jobs", &jobs.to_string(), "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    std::fs::read(out).unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let one = bench_csv(1, dir.path());
    let eight = bench_csv(8, dir.path());
    outcome(one == eight && !one.is_empty(), format!("{} bytes, identical: {}", one.len(), one == eight))
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let long = args.iter().any(|a| a == "--include-ignored" || a == "--ignored")
        || std::env::var("ODETRACK_LONG").is_ok_and(|v| v == "1");
    let listing = args.iter().any(|a| a == "--list");
    let filters: Vec<&String> = args.iter().skip(1).filter(|a| !a.starts_with("--")).collect();
    let label = |k: usize, name: &str| format!("criterion_{k:02}_{}", name.replace(' ', "_"));
    type Criterion = (usize, &'static str, fn() -> Outcome, bool);
    let criteria: [Criterion; 11] = [
        (1, "Riccati-oracle equivalence", riccati_oracle, false),
        (2, "structural invariants", structural_invariants, false),
        (3, "noiseless self-consistency", noiseless_self_consistency, false),
        (4, "linear l-collapse", linear_collapse, false),
        (5, "noiseless identification", noiseless_identification, false),
        (6, "alpha-pinene variance", apinene_variance, false),
        (7, "FHN sloppiness regularization", fhn_sloppiness, false),
        (8, "misspecification robustness", apinene_misspecified, false),
        (9, "observability", observability, false),
        (10, "semi-parametric recovery", semiparametric, true),
        (11, "bench determinism across --jobs", determinism, false),
    ];
    if listing {
        for (k, name, _, _) in &criteria {
            println!("{}: test", label(*k, name));
        }
        return;
    }
    assert_eq!(CATALOG_NAMES.len(), 4);

    let mut failed = Vec::new();
    for (k, name, run, opt_in) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| label(k, name).contains(f.as_str())) {
            continue;
        }
        if opt_in && !long {
            println!("criterion {k:>2} SKIP  {name} (opt-in long run; pass --include-ignored)");
            continue;
        }
        let result = panic::catch_unwind(AssertUnwindSafe(run));
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        println!("criterion {k:>2} {}  {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(k);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
