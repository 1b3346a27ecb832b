//! Fixed-step fourth-order Runge-Kutta integration.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// One classical RK4 step of size `h` from `(x, t)`.
pub fn rk4_step<F>(f: &F, x: &DVector<f64>, t: f64, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64> + ?Sized,
{
    let half = 0.5 * h;
    let k1 = f(x, t);
    let k2 = f(&(x + &k1 * half), t + half);
    let k3 = f(&(x + &k2 * half), t + half);
    let k4 = f(&(x + &k3 * h), t + h);
    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

/// Number of equal substeps no longer than `max_step` covering `span`.
pub fn substeps(span: f64, max_step: f64) -> usize {
    ((span / max_step) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Integrates from `(x0, t0)` and returns the state at each of `times`,
/// which must be non-decreasing and not before `t0`. Each gap between
/// consecutive sample times is split into equal steps of at most `max_step`,
/// so the integrator lands exactly on every sample time.
pub fn integrate_rk4<F>(
    f: &F,
    x0: &DVector<f64>,
    t0: f64,
    times: &[f64],
    max_step: f64,
) -> Result<Vec<DVector<f64>>>
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64> + ?Sized,
{
    if !(max_step > 0.0) {
        return Err(Error::Config(format!("invalid integrator step {max_step}")));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut x = x0.clone();
    let mut t = t0;
    for &target in times {
        if target < t {
            return Err(Error::Config(format!(
                "sample time {target} precedes current time {t}"
            )));
        }
        if target > t {
            let n = substeps(target - t, max_step);
            let h = (target - t) / n as f64;
            for k in 0..n {
                let tk = t + k as f64 * h;
                x = rk4_step(f, &x, tk, h);
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
