//! Observation sets and their CSV format.
//!
//! Format: a header `t,y1,...,yk` followed by one row per observation time.
//! Values are written with the shortest decimal representation that parses
//! back to the same `f64`, so save followed by load is bit-exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    times: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl ObservationSet {
    pub fn new(times: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidObservations(format!(
                "{} times but {} value rows",
                times.len(),
                values.len()
            )));
        }
        if times.is_empty() {
            return Err(Error::InvalidObservations("no observations".into()));
        }
        let dim = values[0].len();
        if dim == 0 || values.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidObservations(
                "observation vectors must share a positive dimension".into(),
            ));
        }
        if times.iter().any(|t| !t.is_finite()) || values.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidObservations("non-finite entry".into()));
        }
        if times[0] < 0.0 {
            return Err(Error::InvalidObservations("negative observation time".into()));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidObservations(format!(
                "times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(ObservationSet { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.values[0].len()
    }

    /// Sum of squared observation entries.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_squared()).sum()
    }

    /// Largest absolute observation entry.
    pub fn scale(&self) -> f64 {
        self.values.iter().map(|v| v.amax()).fold(0.0, f64::max)
    }
}

pub fn load_observations(path: &Path) -> Result<ObservationSet> {
    let malformed = |line: usize, reason: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let width = headers.len();
    if width < 2 || &headers[0] != "t" {
        return Err(malformed(1, "header must be 't,y1,...'".into()));
    }
    for (k, name) in headers.iter().enumerate().skip(1) {
        if name != format!("y{k}") {
            return Err(malformed(1, format!("expected column 'y{k}', found '{name}'")));
        }
    }

    let mut times = Vec::new();
    let mut values = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| malformed(line, e.to_string()))?;
        if record.len() != width {
            return Err(malformed(line, format!("expected {width} fields")));
        }
        let mut row = Vec::with_capacity(width);
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| malformed(line, format!("cannot parse '{field}'")))?;
            if !v.is_finite() {
                return Err(malformed(line, format!("non-finite value '{field}'")));
            }
            row.push(v);
        }
        if let Some(&last) = times.last() {
            if !(row[0] > last) {
                return Err(malformed(
                    line,
                    format!("time {} does not increase past {last}", row[0]),
                ));
            }
        }
        times.push(row[0]);
        values.push(DVector::from_vec(row[1..].to_vec()));
    }
    ObservationSet::new(times, values)
}

pub fn save_observations(obs: &ObservationSet, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = String::from("t");
    for k in 1..=obs.obs_dim() {
        header.push_str(&format!(",y{k}"));
    }
    writeln!(out, "{header}")?;
    for (t, v) in obs.times.iter().zip(&obs.values) {
        let mut line = format!("{t:?}");
        for x in v.iter() {
            line.push_str(&format!(",{x:?}"));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}
