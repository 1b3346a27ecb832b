use std::path::Path;

use nalgebra::DVector;
use odetrack::model::catalog::{catalog_alpha_pinene, catalog_by_name, ModelCatalogEntry, CATALOG_NAMES};
use odetrack::ode::integrate_rk4;
use proptest::prelude::*;

fn entry(name: &str) -> ModelCatalogEntry {
    let constants = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/microbiota_synthetic.csv");
    catalog_by_name(name, Some(&constants)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pseudo_linear_form_reproduces_the_field(
        model in 0usize..4,
        x in prop::collection::vec(0.05f64..3.0, 7),
        t in 0.0f64..20.0,
    ) {
        let e = entry(CATALOG_NAMES[model]);
        let d = e.model.state_dim();
        let mut x = DVector::from_iterator(d, x.into_iter().cycle().take(d));
        e.model.apply_fixed_initial(&mut x);
        let lhs = e.model.vector_field(&x, t, &e.true_theta);
        let rhs = e.raw_field(&x, t, &e.true_theta);
        prop_assert!((&lhs - &rhs).amax() <= 1e-10 * rhs.amax().max(1.0), "{} {lhs} {rhs}", e.model.name());
    }
}

#[test]
fn true_system_matrices_are_finite() {
    for name in CATALOG_NAMES {
        let e = entry(name);
        for x0 in &e.true_x0 {
            let a = e.model.system_matrix(x0, 0.0, &e.true_theta);
            assert!(a.iter().all(|v| v.is_finite()), "{name}");
        }
        assert!(e.model.theta_in_bounds(&e.true_theta), "{name}");
        assert_eq!(e.param_names.len(), e.model.param_dim());
    }
}

#[test]
fn alpha_pinene_conserves_mass() {
    let e = catalog_alpha_pinene();
    let th = e.true_theta.clone();
    let f = |x: &DVector<f64>, t: f64| e.raw_field(x, t, &th);
    let times: Vec<f64> = (1..=200).map(|i| 0.5 * i as f64).collect();
    let xs = integrate_rk4(&f, &e.true_x0[0], 0.0, &times, 0.05).unwrap();
    let mut previous = e.true_x0[0][0];
    for x in &xs {
        assert!((x.sum() - 100.0).abs() <= 1e-4);
        assert!(x[0] < previous);
        previous = x[0];
    }
}
