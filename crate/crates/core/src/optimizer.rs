//! Derivative-free minimization: Nelder-Mead on an unconstrained
//! reparameterization of box bounds.

use crate::model::Bounds;

/// Map between a bounded coordinate and the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Identity,
    /// `x = lower + exp(z)`.
    LowerLog { lower: f64 },
    /// `x = upper - exp(z)`.
    UpperLog { upper: f64 },
    /// `x = lower + (upper - lower) / (1 + exp(-z))`.
    Logit { lower: f64, upper: f64 },
}

impl Transform {
    pub fn for_bounds(b: &Bounds) -> Transform {
        match (b.lower.is_finite(), b.upper.is_finite()) {
            (false, false) => Transform::Identity,
            (true, false) => Transform::LowerLog { lower: b.lower },
            (false, true) => Transform::UpperLog { upper: b.upper },
            (true, true) => Transform::Logit {
                lower: b.lower,
                upper: b.upper,
            },
        }
    }

    /// Unconstrained coordinate of `x`. Points on a finite bound are nudged
    /// inside first.
    pub fn to_free(&self, x: f64) -> f64 {
        match *self {
            Transform::Identity => x,
            Transform::LowerLog { lower } => {
                let gap = x - lower;
                let floor = 1e-8 * lower.abs().max(1.0);
                gap.max(floor).ln()
            }
            Transform::UpperLog { upper } => {
                let gap = upper - x;
                let floor = 1e-8 * upper.abs().max(1.0);
                gap.max(floor).ln()
            }
            Transform::Logit { lower, upper } => {
                let p = ((x - lower) / (upper - lower)).clamp(1e-9, 1.0 - 1e-9);
                (p / (1.0 - p)).ln()
            }
        }
    }

    pub fn to_bounded(&self, z: f64) -> f64 {
        match *self {
            Transform::Identity => z,
            Transform::LowerLog { lower } => lower + z.exp(),
            Transform::UpperLog { upper } => upper - z.exp(),
            Transform::Logit { lower, upper } => lower + (upper - lower) / (1.0 + (-z).exp()),
        }
    }

    /// Initial simplex edge in free coordinates.
    pub fn initial_step(&self, z: f64) -> f64 {
        match self {
            Transform::Identity => 0.1 * z.abs().max(1e-2),
            Transform::LowerLog { .. } | Transform::UpperLog { .. } => 0.1,
            Transform::Logit { .. } => 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadConfig {
    /// Stop once every vertex is within `tol * (1 + |best|_inf)` of the best.
    pub tol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig {
            tol: 1e-6,
            max_evals: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0` with initial edges `steps`. Non-finite values are
/// treated as `+inf`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], cfg: &NelderMeadConfig) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    // dimension-adaptive coefficients; the classical ones for n = 2
    let nf = n.max(2) as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
    let converged;
    loop {
        // stable sort keeps earlier vertices first on ties
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0].0;
        let scale = 1.0 + best.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(best).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
            .fold(0.0, f64::max);
        if diameter <= cfg.tol * scale {
            converged = true;
            break;
        }
        if evals >= cfg.max_evals || n == 0 {
            converged = n == 0;
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(worst)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let worst = simplex[n].0.clone();
        let f_best = simplex[0].1;
        let f_second = simplex[n - 1].1;
        let f_worst = simplex[n].1;

        let xr = along(alpha, &worst);
        let fr = eval(&xr, &mut evals);
        if fr < f_best {
            let xe = along(alpha * gamma, &worst);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < f_second {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < f_worst {
            let xc = along(alpha * rho, &worst);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-rho, &worst);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < fr.min(f_worst) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = x_best
                .iter()
                .zip(&vertex.0)
                .map(|(b, v)| b + sigma * (v - b))
                .collect();
            let fx = eval(&x, &mut evals);
            *vertex = (x, fx);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        evals,
        converged,
    }
}

/// Minimizes `f` over the box `bounds` from `start` through the transforms.
pub fn minimize_bounded<F>(
    mut f: F,
    start: &[f64],
    bounds: &[Bounds],
    cfg: &NelderMeadConfig,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let transforms: Vec<Transform> = bounds.iter().map(Transform::for_bounds).collect();
    let z0: Vec<f64> = transforms
        .iter()
        .zip(start)
        .map(|(t, x)| t.to_free(*x))
        .collect();
    let steps: Vec<f64> = transforms
        .iter()
        .zip(&z0)
        .map(|(t, z)| t.initial_step(*z))
        .collect();
    let to_bounded = |z: &[f64]| -> Vec<f64> {
        transforms
            .iter()
            .zip(z)
            .map(|(t, z)| t.to_bounded(*z))
            .collect()
    };
    let mut min = nelder_mead(|z| f(&to_bounded(z)), &z0, &steps, cfg);
    min.x = to_bounded(&min.x);
    min
}
