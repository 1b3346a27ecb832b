//! Linear-quadratic tracking on a discretization grid.
//!
//! For the Euler recursion `X_{j+1} = (I + D_j A_j) X_j + D_j B u_j` the cost
//!
//! ```text
//! sum_{j<m} D_j (w_j |C X_j - y_j|^2 + u_j' U u_j) + D_m w_m |C X_m - y_m|^2
//! ```
//!
//! with `D_m = D_{m-1}` is minimized exactly by a backward Riccati pass. The
//! cost-to-go from step `j` is `x' R_j x + 2 h_j' x + c_j`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::TrackingGrid;

/// Below this reciprocal condition number `R_0` is treated as singular.
pub const RCOND_THRESHOLD: f64 = 1e-12;

/// Largest stacked control dimension accepted by [`brute_force_oracle`].
pub const ORACLE_LIMIT: usize = 64;

#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    a_seq: Vec<DMatrix<f64>>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    u: DMatrix<f64>,
}

impl LinearizedSystem {
    /// `B` may be rank deficient or zero here; `U` must be SPD.
    pub fn new(
        a_seq: Vec<DMatrix<f64>>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        u: DMatrix<f64>,
    ) -> Result<Self> {
        let d = b.nrows();
        let du = b.ncols();
        if a_seq.is_empty() {
            return Err(Error::Dimension("empty A sequence".into()));
        }
        if a_seq.iter().any(|a| a.nrows() != d || a.ncols() != d) {
            return Err(Error::Dimension(format!("every A_j must be {d} x {d}")));
        }
        if c.ncols() != d {
            return Err(Error::Dimension(format!("C must have {d} columns")));
        }
        if u.nrows() != du || u.ncols() != du {
            return Err(Error::Dimension(format!("U must be {du} x {du}")));
        }
        check_spd(&u)?;
        Ok(LinearizedSystem { a_seq, b, c, u })
    }

    pub fn a_seq(&self) -> &[DMatrix<f64>] {
        &self.a_seq
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn state_dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn check_grid(&self, grid: &TrackingGrid) -> Result<()> {
        if grid.intervals() != self.a_seq.len() {
            return Err(Error::Dimension(format!(
                "{} system matrices for {} intervals",
                self.a_seq.len(),
                grid.intervals()
            )));
        }
        if grid.obs_dim() != self.c.nrows() {
            return Err(Error::Dimension(format!(
                "data dimension {} but C has {} rows",
                grid.obs_dim(),
                self.c.nrows()
            )));
        }
        Ok(())
    }

    fn transition(&self, j: usize, dt: f64) -> DMatrix<f64> {
        let mut phi = &self.a_seq[j] * dt;
        for i in 0..phi.nrows() {
            phi[(i, i)] += 1.0;
        }
        phi
    }
}

fn check_spd(u: &DMatrix<f64>) -> Result<()> {
    if u.nrows() == 0 {
        return Ok(());
    }
    let scale = u.amax().max(f64::MIN_POSITIVE);
    if (u - u.transpose()).amax() > 1e-12 * scale.max(1.0) {
        return Err(Error::WeightNotSpd);
    }
    let eig = SymmetricEigen::new(u.clone());
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::WeightNotSpd);
    }
    Ok(())
}

/// Output of the backward pass, stored as flat column-major blocks. Index
/// `j` runs over `0..=m` for `R`, `h`, `c` and over `0..m` for the per-step
/// gains.
#[derive(Debug, Clone)]
pub struct RiccatiPass {
    d: usize,
    du: usize,
    r: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
    gains: Vec<f64>,
    feedforward: Vec<f64>,
}

impl RiccatiPass {
    /// Number of intervals `m`.
    pub fn intervals(&self) -> usize {
        self.c.len() - 1
    }

    pub fn r(&self, j: usize) -> DMatrix<f64> {
        let n = self.d * self.d;
        DMatrix::from_column_slice(self.d, self.d, &self.r[j * n..(j + 1) * n])
    }

    pub fn h(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.h[j * self.d..(j + 1) * self.d])
    }

    /// Constant term `c_j` of the cost-to-go.
    pub fn c(&self, j: usize) -> f64 {
        self.c[j]
    }

    /// Feedback gain `K_j`; the optimal control is `-(K_j x_j + k_j)`.
    pub fn gain(&self, j: usize) -> DMatrix<f64> {
        let n = self.du * self.d;
        DMatrix::from_column_slice(self.du, self.d, &self.gains[j * n..(j + 1) * n])
    }

    pub fn feedforward(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.feedforward[j * self.du..(j + 1) * self.du])
    }

    /// Closed-form cost `x0' R_0 x0 + 2 h_0' x0 + c_0`.
    pub fn cost_at(&self, x0: &DVector<f64>) -> f64 {
        let d = self.d;
        let mut total = self.c[0];
        for i in 0..d {
            let mut rx = 0.0;
            for k in 0..d {
                rx += self.r[k * d + i] * x0[k];
            }
            total += x0[i] * rx + 2.0 * self.h[i] * x0[i];
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSolution {
    pub control: Vec<DVector<f64>>,
    pub trajectory: Vec<DVector<f64>>,
    pub cost: f64,
    pub x0_used: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// In-place Cholesky of a column-major `n x n` SPD matrix; the lower
/// triangle receives `L`.
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[k * n + j] * a[k * n + j];
        }
        if !(diag > 0.0) {
            return false;
        }
        let l = diag.sqrt();
        a[j * n + j] = l;
        for i in j + 1..n {
            let mut v = a[j * n + i];
            for k in 0..j {
                v -= a[k * n + i] * a[k * n + j];
            }
            a[j * n + i] = v / l;
        }
    }
    true
}

/// Solves `L L' x = b` in place.
fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

pub fn riccati_backward(sys: &LinearizedSystem, grid: &TrackingGrid) -> Result<RiccatiPass> {
    sys.check_grid(grid)?;
    let m = grid.intervals();
    let d = sys.state_dim();
    let du = sys.control_dim();
    let dy = sys.c.nrows();
    let mesh = grid.mesh();
    let weights = grid.weights();
    let data = grid.extended_data();
    let b = sys.b.as_slice();
    let u = sys.u.as_slice();
    let c_mat = sys.c.as_slice();
    let ctc = (sys.c.transpose() * &sys.c).as_slice().to_vec();

    let dd = d * d;
    let mut r = vec![0.0; (m + 1) * dd];
    let mut h = vec![0.0; (m + 1) * d];
    let mut c = vec![0.0; m + 1];
    let mut gains = vec![0.0; m * du * d];
    let mut feedforward = vec![0.0; m * du];

    let mut cty = vec![0.0; d];
    let load_data = |j: usize, cty: &mut [f64]| -> f64 {
        let y = &data[j];
        for i in 0..d {
            let mut v = 0.0;
            for a in 0..dy {
                v += c_mat[i * dy + a] * y[a];
            }
            cty[i] = v;
        }
        y.norm_squared()
    };

    let dm = grid.terminal_mesh() * weights[m];
    if dm != 0.0 {
        let yy = load_data(m, &mut cty);
        for k in 0..dd {
            r[m * dd + k] = dm * ctc[k];
        }
        for i in 0..d {
            h[m * d + i] = -dm * cty[i];
        }
        c[m] = dm * yy;
    }

    let mut phi = vec![0.0; dd];
    let mut rphi = vec![0.0; dd];
    let mut rb = vec![0.0; d * du];
    let mut n_mat = vec![0.0; du * d];
    let mut gram = vec![0.0; du * du];
    let mut bh = vec![0.0; du];

    for j in (0..m).rev() {
        let dt = mesh[j];
        let dw = dt * weights[j];
        let a = sys.a_seq[j].as_slice();
        for k in 0..dd {
            phi[k] = dt * a[k];
        }
        for i in 0..d {
            phi[i * d + i] += 1.0;
        }
        let (r_done, r_next) = r.split_at_mut((j + 1) * dd);
        let r1 = &r_next[..dd];
        let (h_done, h_next) = h.split_at_mut((j + 1) * d);
        let h1 = &h_next[..d];

        // R phi and R B
        for col in 0..d {
            for i in 0..d {
                let mut v = 0.0;
                for k in 0..d {
                    v += r1[k * d + i] * phi[col * d + k];
                }
                rphi[col * d + i] = v;
            }
        }
        for col in 0..du {
            for i in 0..d {
                let mut v = 0.0;
                for k in 0..d {
                    v += r1[k * d + i] * b[col * d + k];
                }
                rb[col * d + i] = v;
            }
        }
        // N = B' R phi, gram = U + dt B' R B, bh = B' h
        for col in 0..d {
            for p in 0..du {
                let mut v = 0.0;
                for i in 0..d {
                    v += b[p * d + i] * rphi[col * d + i];
                }
                n_mat[col * du + p] = v;
            }
        }
        for col in 0..du {
            for p in 0..du {
                let mut v = 0.0;
                for i in 0..d {
                    v += b[p * d + i] * rb[col * d + i];
                }
                gram[col * du + p] = u[col * du + p] + dt * v;
            }
        }
        for p in 0..du {
            let mut v = 0.0;
            for i in 0..d {
                v += b[p * d + i] * h1[i];
            }
            bh[p] = v;
        }
        if !cholesky_in_place(&mut gram, du) {
            return Err(Error::Numerical(format!(
                "U + D B'RB is not positive-definite at step {j}"
            )));
        }

        let gain = &mut gains[j * du * d..(j + 1) * du * d];
        gain.copy_from_slice(&n_mat);
        for col in 0..d {
            cholesky_solve(&gram, du, &mut gain[col * du..(col + 1) * du]);
        }
        let ff = &mut feedforward[j * du..(j + 1) * du];
        ff.copy_from_slice(&bh);
        cholesky_solve(&gram, du, ff);
        let q: f64 = bh.iter().zip(ff.iter()).map(|(x, y)| x * y).sum();

        let yy = if dw != 0.0 { load_data(j, &mut cty) } else { 0.0 };
        let rj = &mut r_done[j * dd..];
        for col in 0..d {
            for i in 0..d {
                let mut v = 0.0;
                for k in 0..d {
                    v += phi[i * d + k] * rphi[col * d + k];
                }
                for p in 0..du {
                    v -= dt * n_mat[i * du + p] * gain[col * du + p];
                }
                if dw != 0.0 {
                    v += dw * ctc[col * d + i];
                }
                rj[col * d + i] = v;
            }
        }
        for col in 0..d {
            for i in 0..col {
                let avg = 0.5 * (rj[col * d + i] + rj[i * d + col]);
                rj[col * d + i] = avg;
                rj[i * d + col] = avg;
            }
        }
        let hj = &mut h_done[j * d..];
        for i in 0..d {
            let mut v = 0.0;
            for k in 0..d {
                v += phi[i * d + k] * h1[k];
            }
            for p in 0..du {
                v -= dt * n_mat[i * du + p] * ff[p];
            }
            if dw != 0.0 {
                v -= dw * cty[i];
            }
            hj[i] = v;
        }
        c[j] = c[j + 1] - dt * q + dw * yy;
    }

    Ok(RiccatiPass {
        d,
        du,
        r,
        h,
        c,
        gains,
        feedforward,
    })
}

/// Runs the closed loop from `x0` and returns the simulated cost.
pub fn forward_optimal(
    sys: &LinearizedSystem,
    grid: &TrackingGrid,
    pass: &RiccatiPass,
    x0: &DVector<f64>,
) -> Result<TrackingSolution> {
    sys.check_grid(grid)?;
    if x0.len() != sys.state_dim() || pass.d != sys.state_dim() || pass.intervals() != grid.intervals() {
        return Err(Error::Dimension("x0 or the Riccati pass does not match the system".into()));
    }
    let m = grid.intervals();
    let d = pass.d;
    let du = pass.du;
    let mesh = grid.mesh();
    let b = sys.b.as_slice();
    let mut trajectory = Vec::with_capacity(m + 1);
    let mut control = Vec::with_capacity(m);
    trajectory.push(x0.clone());
    for j in 0..m {
        let x = &trajectory[j];
        let gain = &pass.gains[j * du * d..(j + 1) * du * d];
        let ff = &pass.feedforward[j * du..(j + 1) * du];
        let u = DVector::from_fn(du, |p, _| {
            let mut v = ff[p];
            for k in 0..d {
                v += gain[k * du + p] * x[k];
            }
            -v
        });
        let dt = mesh[j];
        let a = sys.a_seq[j].as_slice();
        let next = DVector::from_fn(d, |i, _| {
            let mut v = 0.0;
            for k in 0..d {
                v += a[k * d + i] * x[k];
            }
            for p in 0..du {
                v += b[p * d + i] * u[p];
            }
            x[i] + dt * v
        });
        trajectory.push(next);
        control.push(u);
    }
    let cost = tracking_cost(sys, grid, &control, &trajectory);
    Ok(TrackingSolution {
        control,
        trajectory,
        cost,
        x0_used: x0.clone(),
        iterations: 1,
        converged: true,
    })
}

fn tracking_cost(
    sys: &LinearizedSystem,
    grid: &TrackingGrid,
    control: &[DVector<f64>],
    trajectory: &[DVector<f64>],
) -> f64 {
    let m = grid.intervals();
    let mesh = grid.mesh();
    let weights = grid.weights();
    let data = grid.extended_data();
    let mut total = 0.0;
    for j in 0..=m {
        let dt = if j < m { mesh[j] } else { grid.terminal_mesh() };
        if weights[j] != 0.0 {
            total += dt * weights[j] * (&sys.c * &trajectory[j] - &data[j]).norm_squared();
        }
        if j < m {
            total += dt * control[j].dot(&(&sys.u * &control[j]));
        }
    }
    total
}

/// Profiled cost for a given initial condition.
pub fn cost_sn(pass: &RiccatiPass, x0: &DVector<f64>) -> f64 {
    pass.cost_at(x0)
}

/// Profiles the cost over the whole initial condition.
pub fn cost_sn_ci(pass: &RiccatiPass) -> Result<(f64, DVector<f64>)> {
    cost_sn_ci_constrained(pass, &vec![None; pass.d])
}

/// Profiles over the components of `x0` not pinned by `fixed`.
pub fn cost_sn_ci_constrained(
    pass: &RiccatiPass,
    fixed: &[Option<f64>],
) -> Result<(f64, DVector<f64>)> {
    let r0 = pass.r(0);
    let h0 = pass.h(0);
    let d = pass.d;
    if fixed.len() != d {
        return Err(Error::Dimension("fixed-initial mask has the wrong length".into()));
    }
    let free: Vec<usize> = (0..d).filter(|&i| fixed[i].is_none()).collect();
    let mut x0 = DVector::from_iterator(d, fixed.iter().map(|v| v.unwrap_or(0.0)));
    if free.is_empty() {
        return Ok((pass.cost_at(&x0), x0));
    }

    let nf = free.len();
    let rff = DMatrix::from_fn(nf, nf, |a, b| r0[(free[a], free[b])]);
    // rhs = -(R_FK x_K + h_F); the free entries of x0 are still zero
    let rx = &r0 * &x0;
    let rhs = DVector::from_fn(nf, |a, _| -(rx[free[a]] + h0[free[a]]));

    let rc = rcond_symmetric(&rff);
    if !(rc >= RCOND_THRESHOLD) {
        return Err(Error::SingularR0 { rcond: rc });
    }
    let sol = match Cholesky::new(rff.clone()) {
        Some(ch) => ch.solve(&rhs),
        None => rff
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularR0 { rcond: rc })?,
    };
    for (a, &i) in free.iter().enumerate() {
        x0[i] = sol[a];
    }
    Ok((pass.cost_at(&x0), x0))
}

/// `lambda_min / lambda_max` of a symmetric PSD matrix, 0 when it is zero or
/// indefinite.
pub fn rcond_symmetric(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || !max.is_finite() {
        return 0.0;
    }
    (min / max).max(0.0)
}

/// Simulates the perturbed recursion under `control` and sums the cost.
pub fn cost_direct(
    sys: &LinearizedSystem,
    grid: &TrackingGrid,
    control: &[DVector<f64>],
    x0: &DVector<f64>,
) -> Result<f64> {
    sys.check_grid(grid)?;
    if control.len() != grid.intervals() {
        return Err(Error::Dimension(format!(
            "{} controls for {} intervals",
            control.len(),
            grid.intervals()
        )));
    }
    if control.iter().any(|u| u.len() != sys.control_dim()) || x0.len() != sys.state_dim() {
        return Err(Error::Dimension("control or x0 has the wrong length".into()));
    }
    let trajectory = simulate_controlled(sys, grid, control, x0);
    Ok(tracking_cost(sys, grid, control, &trajectory))
}

/// Euler recursion of the linearized system under a given control.
pub fn simulate_controlled(
    sys: &LinearizedSystem,
    grid: &TrackingGrid,
    control: &[DVector<f64>],
    x0: &DVector<f64>,
) -> Vec<DVector<f64>> {
    let mesh = grid.mesh();
    let mut traj = Vec::with_capacity(control.len() + 1);
    traj.push(x0.clone());
    for (j, u) in control.iter().enumerate() {
        let x = traj.last().unwrap();
        let next = x + (&sys.a_seq[j] * x + &sys.b * u) * mesh[j];
        traj.push(next);
    }
    traj
}

/// Minimizes the cost over the stacked control vector by solving the dense
/// normal equations of the affine map `u -> (X_0, ..., X_m)`.
pub fn brute_force_oracle(
    sys: &LinearizedSystem,
    grid: &TrackingGrid,
    x0: &DVector<f64>,
) -> Result<(f64, Vec<DVector<f64>>)> {
    sys.check_grid(grid)?;
    let m = grid.intervals();
    let d = sys.state_dim();
    let du = sys.control_dim();
    let n = m * du;
    if n > ORACLE_LIMIT {
        return Err(Error::TooLarge {
            size: n,
            limit: ORACLE_LIMIT,
        });
    }
    let mesh = grid.mesh();
    let weights = grid.weights();
    let data = grid.extended_data();

    // X_j = free_j + G_j u, built column by column
    let mut free = vec![x0.clone()];
    let mut sens = vec![DMatrix::<f64>::zeros(d, n)];
    for j in 0..m {
        let phi = sys.transition(j, mesh[j]);
        let next_free = &phi * &free[j];
        let mut next_sens = &phi * &sens[j];
        let inject = &sys.b * mesh[j];
        next_sens
            .view_mut((0, j * du), (d, du))
            .add_assign_from(&inject);
        free.push(next_free);
        sens.push(next_sens);
    }

    let mut normal = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for j in 0..=m {
        let dt = if j < m { mesh[j] } else { grid.terminal_mesh() };
        let w = dt * weights[j];
        if w != 0.0 {
            let cg = &sys.c * &sens[j];
            let resid = &sys.c * &free[j] - &data[j];
            normal += cg.tr_mul(&cg) * w;
            rhs -= cg.tr_mul(&resid) * w;
        }
        if j < m {
            normal
                .view_mut((j * du, j * du), (du, du))
                .add_assign_from(&(&sys.u * dt));
        }
    }

    let stacked = normal
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("oracle normal equations are singular".into()))?;
    let control: Vec<DVector<f64>> = (0..m)
        .map(|j| stacked.rows(j * du, du).into_owned())
        .collect();
    let cost = cost_direct(sys, grid, &control, x0)?;
    Ok((cost, control))
}

trait AddAssignFrom {
    fn add_assign_from(&mut self, other: &DMatrix<f64>);
}

impl AddAssignFrom for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign_from(&mut self, other: &DMatrix<f64>) {
        for c in 0..other.ncols() {
            for r in 0..other.nrows() {
                self[(r, c)] += other[(r, c)];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ObservationSet;
    use crate::grid::build_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_grid(y: &[f64]) -> TrackingGrid {
        let times: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
        let values = y.iter().map(|&v| DVector::from_element(1, v)).collect();
        let obs = ObservationSet::new(times, values).unwrap();
        build_grid(&obs, 1, (y.len() - 1) as f64).unwrap()
    }

    fn scalar_sys(m: usize, lambda: f64) -> LinearizedSystem {
        LinearizedSystem::new(
            vec![DMatrix::zeros(1, 1); m],
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, lambda),
        )
        .unwrap()
    }

    /// Hand recursion for A = 0, B = C = 1, U = lambda, unit steps:
    /// R_2 = 1, R_1 = 1 + R_2 - R_2^2/(lambda + R_2), likewise for h and c.
    #[test]
    fn scalar_hand_example() {
        let (y0, y1, y2) = (0.3, -1.2, 2.0);
        let lambda = 0.5;
        let pass = riccati_backward(&scalar_sys(2, lambda), &scalar_grid(&[y0, y1, y2])).unwrap();

        let r2 = 1.0;
        let h2 = -y2;
        let c2 = y2 * y2;
        let g = 1.0 / (lambda + r2);
        let r1 = 1.0 + r2 - r2 * g * r2;
        let h1 = -y1 + h2 - r2 * g * h2;
        let c1 = y1 * y1 + c2 - h2 * g * h2;
        let g = 1.0 / (lambda + r1);
        let r0 = 1.0 + r1 - r1 * g * r1;
        let h0 = -y0 + h1 - r1 * g * h1;
        let c0 = y0 * y0 + c1 - h1 * g * h1;

        for (got, want) in [
            (pass.r(2)[(0, 0)], r2),
            (pass.r(1)[(0, 0)], r1),
            (pass.r(0)[(0, 0)], r0),
            (pass.h(2)[0], h2),
            (pass.h(1)[0], h1),
            (pass.h(0)[0], h0),
            (pass.c(0), c0),
        ] {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }

        let (value, xhat) = cost_sn_ci(&pass).unwrap();
        assert!((xhat[0] + h0 / r0).abs() < 1e-14);
        assert!((value - (c0 - h0 * h0 / r0)).abs() < 1e-13);
    }

    #[test]
    fn zero_control_channel_accumulates_observation_weight() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.3, 0.1, 0.2, -0.5]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let sys = LinearizedSystem::new(
            vec![a.clone(); 3],
            DMatrix::zeros(2, 1),
            c.clone(),
            DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        let times = vec![0.0, 0.5, 1.0, 1.5];
        let values = times.iter().map(|t| DVector::from_element(1, *t)).collect();
        let grid = build_grid(&ObservationSet::new(times, values).unwrap(), 1, 1.5).unwrap();
        let pass = riccati_backward(&sys, &grid).unwrap();

        let phi = DMatrix::identity(2, 2) + &a * 0.5;
        let ctc = c.transpose() * &c;
        let mut expected = DMatrix::zeros(2, 2);
        let mut pi = DMatrix::identity(2, 2);
        for _ in 0..4 {
            expected += pi.transpose() * &ctc * &pi * 0.5;
            pi = &phi * pi;
        }
        assert!((pass.r(0) - expected).amax() < 1e-14);
    }

    #[test]
    fn rejects_non_spd_weight() {
        let err = LinearizedSystem::new(
            vec![DMatrix::zeros(1, 1)],
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::WeightNotSpd));
        let err = LinearizedSystem::new(
            vec![DMatrix::zeros(2, 2)],
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::WeightNotSpd));
    }

    #[test]
    fn zero_data_gives_zero_cost() {
        let pass = riccati_backward(&scalar_sys(3, 1.0), &scalar_grid(&[0.0; 4])).unwrap();
        assert_eq!(cost_sn(&pass, &DVector::zeros(1)), 0.0);
    }

    #[test]
    fn blind_system_has_singular_r0() {
        let sys = LinearizedSystem::new(
            vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]); 4],
            DMatrix::identity(2, 2),
            DMatrix::zeros(1, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let grid = scalar_grid(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let pass = riccati_backward(&sys, &grid).unwrap();
        assert!(matches!(cost_sn_ci(&pass), Err(Error::SingularR0 { .. })));
    }

    #[test]
    fn fixed_components_are_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.5..0.5));
        let sys = LinearizedSystem::new(
            vec![a; 6],
            DMatrix::identity(3, 3),
            DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            DMatrix::identity(3, 3) * 0.1,
        )
        .unwrap();
        let y: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pass = riccati_backward(&sys, &scalar_grid(&y)).unwrap();
        let fixed = [None, None, Some(1.0)];
        let (value, xhat) = cost_sn_ci_constrained(&pass, &fixed).unwrap();
        assert_eq!(xhat[2], 1.0);
        assert!((cost_sn(&pass, &xhat) - value).abs() < 1e-12);
        for _ in 0..20 {
            let mut x = xhat.clone();
            x[0] += rng.random_range(-1.0..1.0);
            x[1] += rng.random_range(-1.0..1.0);
            assert!(cost_sn(&pass, &x) >= value - 1e-12);
        }
    }
}
