#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use odetrack::riccati::LinearizedSystem;
use odetrack::{build_grid, ObservationSet, TrackingGrid};
use rand::Rng;

pub struct Instance {
    pub sys: LinearizedSystem,
    pub grid: TrackingGrid,
    pub x0: DVector<f64>,
}

/// Random small LQ tracking instance: d <= 3, d_u <= 2, m <= 6.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    loop {
        let d = rng.random_range(1..=3);
        let du = rng.random_range(1..=d.min(2));
        let dy = rng.random_range(1..=3);
        let n_obs = rng.random_range(1..=3);
        let k_n = rng.random_range(1..=2);
        let mut times = Vec::new();
        let mut t = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.05..0.5) };
        for _ in 0..n_obs {
            times.push(t);
            t += rng.random_range(0.1..1.0);
        }
        let last = *times.last().unwrap();
        let horizon = last + if last > 0.0 && rng.random_bool(0.5) { 0.0 } else { 0.3 };
        let values = times
            .iter()
            .map(|_| DVector::from_fn(dy, |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let obs = ObservationSet::new(times, values).unwrap();
        let grid = build_grid(&obs, k_n, horizon).unwrap();
        let m = grid.intervals();
        if m == 0 || m > 6 {
            continue;
        }
        let a_seq = (0..m)
            .map(|_| DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let b = DMatrix::from_fn(d, du, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(dy, d, |_, _| rng.random_range(-1.0..1.0));
        let l = DMatrix::from_fn(du, du, |_, _| rng.random_range(-0.5..0.5));
        let u = &l * l.transpose() + DMatrix::identity(du, du) * rng.random_range(0.05..2.0);
        let u = (&u + u.transpose()) * 0.5;
        let sys = LinearizedSystem::new(a_seq, b, c, u).unwrap();
        let x0 = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        return Instance { sys, grid, x0 };
    }
}

/// Independent summation of the discretized tracking cost.
pub fn reference_cost(
    sys: &LinearizedSystem,
    grid: &TrackingGrid,
    control: &[DVector<f64>],
    x0: &DVector<f64>,
) -> f64 {
    let m = grid.intervals();
    let dt = grid.mesh();
    let mut x = x0.clone();
    let mut total = 0.0;
    for j in 0..m {
        let r = sys.c() * &x - &grid.extended_data()[j];
        total += dt[j] * grid.weights()[j] * r.dot(&r);
        total += dt[j] * (control[j].transpose() * sys.u() * &control[j])[(0, 0)];
        x = &x + dt[j] * (&sys.a_seq()[j] * &x) + dt[j] * (sys.b() * &control[j]);
    }
    let r = sys.c() * &x - &grid.extended_data()[m];
    total + dt[m - 1] * grid.weights()[m] * r.dot(&r)
}
