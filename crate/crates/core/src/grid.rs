//! Refined discretization grid carrying observation weights.

use nalgebra::DVector;

use crate::data::ObservationSet;
use crate::error::{Error, Result};

/// Discretization points `0 = t_0 < ... < t_m = T` containing every
/// observation time. Point `j` carries weight `w_j = 1` and data `y_j` when
/// it is an observation time, and `w_j = 0`, `y_j = 0` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingGrid {
    points: Vec<f64>,
    mesh: Vec<f64>,
    weights: Vec<f64>,
    extended_data: Vec<DVector<f64>>,
    obs_index_map: Vec<usize>,
}

/// Inserts `k_n - 1` uniform points between consecutive anchors, where the
/// anchors are the observation times plus `0` and `T`.
pub fn build_grid(obs: &ObservationSet, k_n: usize, horizon_end: f64) -> Result<TrackingGrid> {
    if k_n == 0 {
        return Err(Error::Config("k_n must be positive".into()));
    }
    if !(horizon_end > 0.0) || !horizon_end.is_finite() {
        return Err(Error::Config(format!("invalid horizon {horizon_end}")));
    }
    let times = obs.times();
    if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidObservations(format!(
            "times must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    if let Some(&t) = times.iter().find(|&&t| t < 0.0 || t > horizon_end) {
        return Err(Error::ObservationOutsideHorizon {
            time: t,
            horizon: horizon_end,
        });
    }

    // anchors tagged with the observation they carry
    let mut anchors: Vec<(f64, Option<usize>)> = Vec::with_capacity(times.len() + 2);
    if times[0] > 0.0 {
        anchors.push((0.0, None));
    }
    anchors.extend(times.iter().enumerate().map(|(i, &t)| (t, Some(i))));
    if *times.last().unwrap() < horizon_end {
        anchors.push((horizon_end, None));
    }

    let dim = obs.obs_dim();
    // (time, observation index) for every grid point
    let mut tagged: Vec<(f64, Option<usize>)> = Vec::with_capacity((anchors.len() - 1) * k_n + 1);
    for pair in anchors.windows(2) {
        let (a, tag) = pair[0];
        let b = pair[1].0;
        tagged.push((a, tag));
        for k in 1..k_n {
            tagged.push((a + (b - a) * (k as f64) / (k_n as f64), None));
        }
    }
    tagged.push(*anchors.last().unwrap());

    let mut obs_index_map = vec![0; times.len()];
    let mut points = Vec::with_capacity(tagged.len());
    let mut weights = Vec::with_capacity(tagged.len());
    let mut extended_data = Vec::with_capacity(tagged.len());
    for (j, (t, tag)) in tagged.into_iter().enumerate() {
        points.push(t);
        match tag {
            Some(i) => {
                obs_index_map[i] = j;
                weights.push(1.0);
                extended_data.push(obs.values()[i].clone());
            }
            None => {
                weights.push(0.0);
                extended_data.push(DVector::zeros(dim));
            }
        }
    }

    let mesh: Vec<f64> = points.windows(2).map(|w| w[1] - w[0]).collect();
    if mesh.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidObservations(
            "observation times too close to refine".into(),
        ));
    }

    Ok(TrackingGrid {
        points,
        mesh,
        weights,
        extended_data,
        obs_index_map,
    })
}

impl TrackingGrid {
    /// Number of intervals `m`.
    pub fn intervals(&self) -> usize {
        self.mesh.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn mesh(&self) -> &[f64] {
        &self.mesh
    }

    /// Weight of the terminal residual, taken equal to the last interval.
    pub fn terminal_mesh(&self) -> f64 {
        *self.mesh.last().expect("grid has at least one interval")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn extended_data(&self) -> &[DVector<f64>] {
        &self.extended_data
    }

    pub fn obs_index_map(&self) -> &[usize] {
        &self.obs_index_map
    }

    pub fn obs_dim(&self) -> usize {
        self.extended_data[0].len()
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn min_mesh(&self) -> f64 {
        self.mesh.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Grid index closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        match self
            .points
            .binary_search_by(|p| p.partial_cmp(&t).expect("finite grid"))
        {
            Ok(j) => j,
            Err(0) => 0,
            Err(j) if j >= self.points.len() => self.points.len() - 1,
            Err(j) => {
                if t - self.points[j - 1] <= self.points[j] - t {
                    j - 1
                } else {
                    j
                }
            }
        }
    }
}
