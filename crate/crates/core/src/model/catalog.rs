//! Built-in benchmark models.
//!
//! Each entry carries its pseudo-linear factorization together with an
//! independently written raw vector field, used for data generation and for
//! checking the factorization.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Bounds, PseudoLinearModel, VectorFieldFn};
use crate::error::{Error, Result};

/// Map applied to a subject's initial condition before integration.
pub type InitialJumpFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

#[derive(Clone)]
pub struct ModelCatalogEntry {
    pub model: PseudoLinearModel,
    pub true_theta: DVector<f64>,
    /// One initial condition per simulated subject.
    pub true_x0: Vec<DVector<f64>>,
    pub horizon: f64,
    pub raw_field: Arc<VectorFieldFn>,
    pub param_names: Vec<String>,
    pub initial_jump: Option<Arc<InitialJumpFn>>,
}

impl fmt::Debug for ModelCatalogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelCatalogEntry")
            .field("model", &self.model)
            .field("true_theta", &self.true_theta.as_slice())
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl ModelCatalogEntry {
    pub fn raw_field(&self, x: &DVector<f64>, t: f64, theta: &DVector<f64>) -> DVector<f64> {
        (self.raw_field)(x, t, theta)
    }

    /// Initial state actually integrated for `x0`, after any impulse.
    pub fn effective_initial(&self, x0: &DVector<f64>) -> DVector<f64> {
        match &self.initial_jump {
            Some(jump) => jump(x0),
            None => x0.clone(),
        }
    }
}

/// Names accepted by [`catalog_by_name`].
pub const CATALOG_NAMES: [&str; 4] = ["apinene", "fhn", "repressilator", "microbiota"];

/// Looks up a catalog entry. The microbiota entry needs its constants file.
pub fn catalog_by_name(name: &str, constants: Option<&Path>) -> Result<ModelCatalogEntry> {
    match name {
        "apinene" | "alpha-pinene" => Ok(catalog_alpha_pinene()),
        "fhn" | "fitzhugh-nagumo" => Ok(catalog_fitzhugh_nagumo()),
        "repressilator" => Ok(catalog_repressilator()),
        "microbiota" => {
            let path = constants.ok_or_else(|| {
                Error::MissingConstants("the microbiota model needs a constants file".into())
            })?;
            let constants = MicrobiotaConstants::load(path)?;
            catalog_microbiota(&constants)
        }
        other => Err(Error::Config(format!(
            "unknown model '{other}'; available: {}",
            CATALOG_NAMES.join(", ")
        ))),
    }
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Isomerization network of alpha-pinene; five states, all observed.
pub fn catalog_alpha_pinene() -> ModelCatalogEntry {
    let system = |_x: &DVector<f64>, _t: f64, th: &DVector<f64>| {
        let mut a = DMatrix::zeros(5, 5);
        a[(0, 0)] = -(th[0] + th[1]);
        a[(1, 0)] = th[0];
        a[(2, 0)] = th[1];
        a[(2, 2)] = -(th[2] + th[3]);
        a[(2, 4)] = th[4];
        a[(3, 2)] = th[2];
        a[(4, 2)] = th[3];
        a[(4, 4)] = -th[4];
        a
    };
    let model = PseudoLinearModel::new(
        "apinene",
        5,
        5,
        system,
        DMatrix::identity(5, 5),
        DMatrix::identity(5, 5),
        true,
    )
    .and_then(|m| m.with_bounds(vec![Bounds::POSITIVE; 5]))
    .expect("alpha-pinene model is well formed");

    let raw = |x: &DVector<f64>, _t: f64, th: &DVector<f64>| {
        DVector::from_vec(vec![
            -(th[0] + th[1]) * x[0],
            th[0] * x[0],
            th[1] * x[0] - (th[2] + th[3]) * x[2] + th[4] * x[4],
            th[2] * x[2],
            th[3] * x[2] - th[4] * x[4],
        ])
    };

    ModelCatalogEntry {
        model,
        true_theta: DVector::from_vec(vec![5.93e-2, 2.96e-2, 2.05e-2, 27.5e-2, 4e-2]),
        true_x0: vec![DVector::from_vec(vec![100.0, 0.0, 0.0, 0.0, 0.0])],
        horizon: 100.0,
        raw_field: Arc::new(raw),
        param_names: names(&["theta1", "theta2", "theta3", "theta4", "theta5"]),
        initial_jump: None,
    }
}

/// FitzHugh-Nagumo factorization over `(V, R, Z)` with `Z = 1`:
///
/// ```text
/// [ c(1 - V^2/3)   c     0  ]
/// [ -1/c          -b/c   a/c ]
/// [ 0              0     0  ]
/// ```
pub(crate) fn fhn_system_matrix(v: f64, a: f64, b: f64, c: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(3, 3);
    m[(0, 0)] = c * (1.0 - v * v / 3.0);
    m[(0, 1)] = c;
    m[(1, 0)] = -1.0 / c;
    m[(1, 1)] = -b / c;
    m[(1, 2)] = a / c;
    m
}

pub(crate) fn fhn_raw(x: &DVector<f64>, a: f64, b: f64, c: f64) -> DVector<f64> {
    let (v, r, z) = (x[0], x[1], x[2]);
    DVector::from_vec(vec![
        c * (v - v.powi(3) / 3.0 + r),
        -(v - a * z + b * r) / c,
        0.0,
    ])
}

fn fhn_control_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
}

/// FitzHugh-Nagumo neuron model with only `V` observed.
pub fn catalog_fitzhugh_nagumo() -> ModelCatalogEntry {
    let system = |x: &DVector<f64>, _t: f64, th: &DVector<f64>| {
        fhn_system_matrix(x[0], th[0], th[1], th[2])
    };
    let model = PseudoLinearModel::new(
        "fhn",
        3,
        3,
        system,
        fhn_control_matrix(),
        DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
        false,
    )
    .and_then(|m| {
        m.with_bounds(vec![
            Bounds::UNBOUNDED,
            Bounds::UNBOUNDED,
            Bounds::POSITIVE,
        ])
    })
    .and_then(|m| m.with_fixed_initial(vec![None, None, Some(1.0)]))
    .expect("FitzHugh-Nagumo model is well formed");

    let raw = |x: &DVector<f64>, _t: f64, th: &DVector<f64>| fhn_raw(x, th[0], th[1], th[2]);

    ModelCatalogEntry {
        model,
        true_theta: DVector::from_vec(vec![0.2, 0.2, 3.0]),
        true_x0: vec![DVector::from_vec(vec![-1.0, 1.0, 1.0])],
        horizon: 20.0,
        raw_field: Arc::new(raw),
        param_names: names(&["a", "b", "c"]),
        initial_jump: None,
    }
}

/// Fixed repressilator constants `(k31, k1, k2, k3)`.
pub const REPRESSILATOR_FIXED: [f64; 4] = [40.0, 5.0, 6.0, 7.0];

fn hill(v: f64, k: f64, p: f64, n: f64) -> f64 {
    let kn = k.powf(n);
    v * kn / (p.abs().powf(n) + kn)
}

/// Repressilator over `(r1, r2, r3, p1, p2, p3, Z)`, mRNAs observed.
///
/// Parameter order: `(v1, v2, v3, k12, k23, kg1, kg2, kg3, kp1, kp2, kp3, n)`.
/// Protein concentrations enter the Hill terms through `|p|`.
pub fn catalog_repressilator() -> ModelCatalogEntry {
    let [k31, k1, k2, k3] = REPRESSILATOR_FIXED;
    let system = move |x: &DVector<f64>, _t: f64, th: &DVector<f64>| {
        let n = th[11];
        let mut a = DMatrix::zeros(7, 7);
        a[(0, 0)] = -th[5];
        a[(1, 1)] = -th[6];
        a[(2, 2)] = -th[7];
        a[(0, 6)] = hill(th[0], th[3], x[4], n);
        a[(1, 6)] = hill(th[1], th[4], x[5], n);
        a[(2, 6)] = hill(th[2], k31, x[3], n);
        a[(3, 0)] = k1;
        a[(4, 1)] = k2;
        a[(5, 2)] = k3;
        a[(3, 3)] = -th[8];
        a[(4, 4)] = -th[9];
        a[(5, 5)] = -th[10];
        a
    };

    let mut b = DMatrix::zeros(7, 6);
    for i in 0..6 {
        b[(i, i)] = 1.0;
    }
    let mut c = DMatrix::zeros(3, 7);
    for i in 0..3 {
        c[(i, i)] = 1.0;
    }
    let mut bounds = vec![Bounds::POSITIVE; 12];
    bounds[11] = Bounds::new(0.5, 6.0);

    let model = PseudoLinearModel::new("repressilator", 7, 12, system, b, c, false)
        .and_then(|m| m.with_bounds(bounds))
        .and_then(|m| m.with_fixed_initial(vec![None, None, None, None, None, None, Some(1.0)]))
        .expect("repressilator model is well formed");

    let raw = move |x: &DVector<f64>, _t: f64, th: &DVector<f64>| {
        let n = th[11];
        let z = x[6];
        let (r1, r2, r3, p1, p2, p3) = (x[0], x[1], x[2], x[3], x[4], x[5]);
        let hill1 = th[0] * th[3].powf(n) / (p2.abs().powf(n) + th[3].powf(n));
        let hill2 = th[1] * th[4].powf(n) / (p3.abs().powf(n) + th[4].powf(n));
        let hill3 = th[2] * k31.powf(n) / (p1.abs().powf(n) + k31.powf(n));
        DVector::from_vec(vec![
            hill1 * z - th[5] * r1,
            hill2 * z - th[6] * r2,
            hill3 * z - th[7] * r3,
            k1 * r1 - th[8] * p1,
            k2 * r2 - th[9] * p2,
            k3 * r3 - th[10] * p3,
            0.0,
        ])
    };

    ModelCatalogEntry {
        model,
        true_theta: DVector::from_vec(vec![
            50.0, 100.0, 80.0, 50.0, 30.0, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0, 3.0,
        ]),
        true_x0: vec![DVector::from_vec(vec![60.0, 20.0, 6.0, 18.0, 27.0, 1.0, 1.0])],
        horizon: 20.0,
        raw_field: Arc::new(raw),
        param_names: names(&[
            "v1", "v2", "v3", "k12", "k23", "kg1", "kg2", "kg3", "kp1", "kp2", "kp3", "n",
        ]),
        initial_jump: None,
    }
}

/// Number of species in the full generalized Lotka-Volterra model.
pub const GLV_FULL_SPECIES: usize = 11;

/// Original (1-based) species indices kept by the restricted model.
pub const GLV_RESTRICTED_SPECIES: [usize; 7] = [1, 2, 3, 4, 5, 9, 11];

/// Estimated interaction entries `(i, j)` of `M` in original 1-based
/// numbering, in parameter order.
pub const GLV_ESTIMATED_ENTRIES: [(usize, usize); 31] = [
    (1, 1), (3, 1), (4, 1), (5, 1),
    (2, 2), (3, 2), (4, 2), (5, 2),
    (1, 3), (2, 3), (3, 3),
    (1, 4), (2, 4), (4, 4),
    (2, 5), (3, 5), (4, 5), (5, 5),
    (3, 9), (5, 9),
    (1, 11), (2, 11), (3, 11), (4, 11), (5, 11),
    (11, 1), (11, 2), (11, 3), (11, 5), (11, 9), (11, 11),
];

/// Growth rates, susceptibilities, interactions and subject initial
/// conditions of the 11-species microbiota model.
///
/// CSV layout, header `kind,i,j,value`, indices 1-based in the original
/// species numbering:
///
/// ```text
/// mu,i,,value        growth rate of species i
/// s,i,,value         antibiotic susceptibility of species i
/// M,i,j,value        effect of species j on species i
/// x0,k,i,value       initial abundance of species i for subject k
/// ```
///
/// Every `mu`, `s` and `M` entry must be listed explicitly (zeros included).
#[derive(Debug, Clone, PartialEq)]
pub struct MicrobiotaConstants {
    pub mu: DVector<f64>,
    pub susceptibility: DVector<f64>,
    pub interactions: DMatrix<f64>,
    pub subjects: Vec<DVector<f64>>,
}

impl MicrobiotaConstants {
    pub fn load(path: &Path) -> Result<Self> {
        let n = GLV_FULL_SPECIES;
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::MissingConstants(format!("cannot read {}: {e}", path.display()))
        })?;
        let malformed = |line: usize, reason: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            reason,
        };

        let mut mu: Vec<Option<f64>> = vec![None; n];
        let mut s: Vec<Option<f64>> = vec![None; n];
        let mut m: Vec<Option<f64>> = vec![None; n * n];
        let mut subjects: HashMap<usize, Vec<Option<f64>>> = HashMap::new();

        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "kind,i,j,value" => {}
            _ => return Err(malformed(1, "expected header 'kind,i,j,value'".into())),
        }
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(malformed(lineno, "expected 4 fields".into()));
            }
            let parse_index = |s: &str| -> Result<usize> {
                s.parse::<usize>()
                    .map_err(|_| malformed(lineno, format!("bad index '{s}'")))
            };
            let value: f64 = fields[3]
                .parse()
                .map_err(|_| malformed(lineno, format!("bad value '{}'", fields[3])))?;
            if !value.is_finite() {
                return Err(malformed(lineno, "non-finite value".into()));
            }
            let i = parse_index(fields[1])?;
            let species_ok = |k: usize| (1..=n).contains(&k);
            match fields[0] {
                "mu" | "s" => {
                    if !species_ok(i) {
                        return Err(malformed(lineno, format!("species {i} out of range")));
                    }
                    let target = if fields[0] == "mu" { &mut mu } else { &mut s };
                    target[i - 1] = Some(value);
                }
                "M" => {
                    let j = parse_index(fields[2])?;
                    if !species_ok(i) || !species_ok(j) {
                        return Err(malformed(lineno, format!("entry ({i},{j}) out of range")));
                    }
                    m[(i - 1) * n + (j - 1)] = Some(value);
                }
                "x0" => {
                    let j = parse_index(fields[2])?;
                    if i == 0 || !species_ok(j) {
                        return Err(malformed(lineno, format!("x0 entry ({i},{j}) out of range")));
                    }
                    subjects.entry(i).or_insert_with(|| vec![None; n])[j - 1] = Some(value);
                }
                other => return Err(malformed(lineno, format!("unknown kind '{other}'"))),
            }
        }

        let collect = |v: Vec<Option<f64>>, what: &str| -> Result<Vec<f64>> {
            v.iter()
                .enumerate()
                .map(|(k, x)| {
                    x.ok_or_else(|| Error::MissingConstants(format!("{what} entry {} missing", k + 1)))
                })
                .collect()
        };
        let mu = collect(mu, "mu")?;
        let s = collect(s, "s")?;
        let m_flat: Vec<f64> = m
            .iter()
            .enumerate()
            .map(|(k, x)| {
                x.ok_or_else(|| {
                    Error::MissingConstants(format!("M({},{}) missing", k / n + 1, k % n + 1))
                })
            })
            .collect::<Result<_>>()?;
        if subjects.is_empty() {
            return Err(Error::MissingConstants("no subject initial conditions".into()));
        }
        let mut keys: Vec<usize> = subjects.keys().copied().collect();
        keys.sort_unstable();
        let mut subject_vecs = Vec::with_capacity(keys.len());
        for k in keys {
            let v = collect(subjects.remove(&k).unwrap(), &format!("x0 of subject {k}"))?;
            subject_vecs.push(DVector::from_vec(v));
        }

        Ok(MicrobiotaConstants {
            mu: DVector::from_vec(mu),
            susceptibility: DVector::from_vec(s),
            interactions: DMatrix::from_row_slice(n, n, &m_flat),
            subjects: subject_vecs,
        })
    }

    /// Full 11-species field `mu_i x_i + x_i sum_j M_ij x_j`.
    pub fn full_field(&self) -> impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static {
        let mu = self.mu.clone();
        let m = self.interactions.clone();
        move |x: &DVector<f64>| {
            let growth = &mu + &m * x;
            x.component_mul(&growth)
        }
    }

    /// Impulse response of a unit antibiotic dose: `x_i -> x_i exp(s_i)`.
    pub fn apply_impulse(&self, x0: &DVector<f64>) -> DVector<f64> {
        x0.component_mul(&self.susceptibility.map(f64::exp))
    }

    /// Restricted-model parameter vector read from the full interaction matrix.
    pub fn restricted_theta(&self) -> DVector<f64> {
        DVector::from_iterator(
            GLV_ESTIMATED_ENTRIES.len(),
            GLV_ESTIMATED_ENTRIES
                .iter()
                .map(|&(i, j)| self.interactions[(i - 1, j - 1)]),
        )
    }

    fn restricted_index(species: usize) -> usize {
        GLV_RESTRICTED_SPECIES
            .iter()
            .position(|&s| s == species)
            .expect("species belongs to the restricted model")
    }

    /// Projects a full 11-species state onto the restricted species.
    pub fn restrict(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(7, GLV_RESTRICTED_SPECIES.iter().map(|&s| x[s - 1]))
    }
}

/// Restricted 7-species generalized Lotka-Volterra model. Estimated entries of
/// `M` come from `theta`; the remaining restricted entries are frozen at the
/// constants-file values.
pub fn catalog_microbiota(constants: &MicrobiotaConstants) -> Result<ModelCatalogEntry> {
    let k = GLV_RESTRICTED_SPECIES.len();
    let mut frozen = DMatrix::zeros(k, k);
    let mut mu = DVector::zeros(k);
    let mut s = DVector::zeros(k);
    for (a, &i) in GLV_RESTRICTED_SPECIES.iter().enumerate() {
        mu[a] = constants.mu[i - 1];
        s[a] = constants.susceptibility[i - 1];
        for (b, &j) in GLV_RESTRICTED_SPECIES.iter().enumerate() {
            frozen[(a, b)] = constants.interactions[(i - 1, j - 1)];
        }
    }
    let positions: Vec<(usize, usize)> = GLV_ESTIMATED_ENTRIES
        .iter()
        .map(|&(i, j)| {
            (
                MicrobiotaConstants::restricted_index(i),
                MicrobiotaConstants::restricted_index(j),
            )
        })
        .collect();
    for &(a, b) in &positions {
        frozen[(a, b)] = 0.0;
    }

    let build_m = {
        let frozen = frozen.clone();
        let positions = positions.clone();
        move |th: &DVector<f64>| {
            let mut m = frozen.clone();
            for (p, &(a, b)) in positions.iter().enumerate() {
                m[(a, b)] = th[p];
            }
            m
        }
    };

    let system = {
        let mu = mu.clone();
        let build_m = build_m.clone();
        move |x: &DVector<f64>, _t: f64, th: &DVector<f64>| {
            let growth = &mu + build_m(th) * x;
            DMatrix::from_diagonal(&growth)
        }
    };
    let model = PseudoLinearModel::new(
        "microbiota",
        k,
        GLV_ESTIMATED_ENTRIES.len(),
        system,
        DMatrix::identity(k, k),
        DMatrix::identity(k, k),
        false,
    )?;

    let raw = {
        let mu = mu.clone();
        let build_m = build_m.clone();
        move |x: &DVector<f64>, _t: f64, th: &DVector<f64>| {
            let m = build_m(th);
            DVector::from_fn(x.len(), |i, _| {
                let interaction: f64 = (0..x.len()).map(|j| m[(i, j)] * x[j]).sum();
                mu[i] * x[i] + x[i] * interaction
            })
        }
    };

    let true_x0 = constants
        .subjects
        .iter()
        .map(|x| constants.restrict(x))
        .collect();
    let jump = move |x: &DVector<f64>| x.component_mul(&s.map(f64::exp));

    Ok(ModelCatalogEntry {
        model,
        true_theta: constants.restricted_theta(),
        true_x0,
        horizon: 16.0,
        raw_field: Arc::new(raw),
        param_names: GLV_ESTIMATED_ENTRIES
            .iter()
            .map(|(i, j)| format!("M{i}_{j}"))
            .collect(),
        initial_jump: Some(Arc::new(jump)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn alpha_pinene_reference_values() {
        let e = catalog_alpha_pinene();
        assert_relative_eq!(e.true_theta[3], 0.275, epsilon = 1e-15);
        let a = e.model.system_matrix(&e.true_x0[0], 0.0, &e.true_theta);
        assert_relative_eq!(a[(0, 0)], -0.0889, epsilon = 1e-12);
        for j in 1..5 {
            assert_eq!(a[(0, j)], 0.0);
        }
        // mass balance: every column sums to zero
        for j in 0..5 {
            assert!(a.column(j).sum().abs() < 1e-15);
        }
        assert!(e.model.is_linear());
    }

    #[test]
    fn fhn_reference_values() {
        let e = catalog_fitzhugh_nagumo();
        assert_eq!(e.true_theta.as_slice(), &[0.2, 0.2, 3.0]);
        let a = e
            .model
            .system_matrix(&DVector::from_vec(vec![0.0, 0.0, 1.0]), 0.0, &e.true_theta);
        assert_eq!(a[(0, 0)], 3.0);
        let x = &e.true_x0[0];
        let lhs = e.model.vector_field(x, 0.0, &e.true_theta);
        let rhs = e.raw_field(x, 0.0, &e.true_theta);
        assert!((lhs - rhs).amax() < 1e-12);
        assert_eq!(e.model.obs_dim(), 1);
        assert!(!e.model.is_linear());
    }

    #[test]
    fn repressilator_reference_values() {
        let e = catalog_repressilator();
        assert_eq!(REPRESSILATOR_FIXED, [40.0, 5.0, 6.0, 7.0]);
        // half saturation when p2 equals k12
        let mut x = e.true_x0[0].clone();
        x[4] = e.true_theta[3];
        let a = e.model.system_matrix(&x, 0.0, &e.true_theta);
        assert_relative_eq!(a[(0, 6)], 25.0, epsilon = 1e-12);

        let x = &e.true_x0[0];
        let lhs = e.model.vector_field(x, 0.0, &e.true_theta);
        let rhs = e.raw_field(x, 0.0, &e.true_theta);
        assert!((lhs - &rhs).amax() <= 1e-10 * rhs.amax().max(1.0));
    }

    #[test]
    fn microbiota_requires_constants() {
        let err = catalog_by_name("microbiota", None).unwrap_err();
        assert!(matches!(err, Error::MissingConstants(_)));
    }

    #[test]
    fn unknown_model_lists_catalog() {
        let err = catalog_by_name("lorenz", None).unwrap_err();
        let msg = err.to_string();
        for name in CATALOG_NAMES {
            assert!(msg.contains(name));
        }
    }

    #[test]
    fn estimated_entries_are_distinct() {
        let mut entries = GLV_ESTIMATED_ENTRIES.to_vec();
        entries.sort_unstable();
        entries.dedup();
        assert_eq!(entries.len(), 31);
    }
}
