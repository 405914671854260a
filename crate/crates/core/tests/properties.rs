use nalgebra::DMatrix;
use proptest::prelude::*;

use projhead_core::data::{sample_pretrain, DownstreamSpec, PretrainSpec};
use projhead_core::evaluation::{margin_radius, represent};
use projhead_core::models::{balanced_factorization, balancedness_defect, DiagonalNet, LinearStack, Model};
use projhead_core::theory::{
    beta_gamma, delta, factorization_norm, refactor_norm, sample_complexity_indicator, TheoryPrediction,
};

fn pretrain_spec() -> impl Strategy<Value = PretrainSpec> {
    (1usize..=6)
        .prop_flat_map(|d| {
            (
                prop::collection::vec(0.2f64..2.0, d),
                prop::collection::vec(0.0f64..=1.0, d),
                0.0f64..1.0,
                1usize..=d + 1,
            )
        })
        .prop_map(|(phi, alpha, sigma, p)| PretrainSpec::new(phi, alpha, sigma, p).unwrap())
}

fn spec_with_downstream() -> impl Strategy<Value = (PretrainSpec, DownstreamSpec)> {
    pretrain_spec().prop_flat_map(|spec| {
        let d = spec.d();
        (Just(spec), prop::collection::vec(0.1f64..2.0, d), 1usize..=d)
            .prop_map(|(spec, phi_hat, j)| (spec, DownstreamSpec::new(phi_hat, j).unwrap()))
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.5f64..1.5, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

// Independent ranking of features: the strength of feature i surviving
// augmentation, (1 - alpha)^2 phi^2 / (phi^2 + sigma^2).
fn oracle_beta(spec: &PretrainSpec) -> Vec<f64> {
    spec.phi
        .iter()
        .zip(&spec.alpha)
        .map(|(f, a)| (1.0 - a).powi(2) * f * f / (f * f + spec.sigma * spec.sigma))
        .collect()
}

fn oracle_indicator(row: &[f64], ds: &DownstreamSpec) -> f64 {
    let j = ds.j_star - 1;
    let num: f64 = row.iter().zip(&ds.phi_hat).map(|(w, p)| w * w * p * p).sum();
    num / (row[j] * row[j] * ds.phi_hat[j] * ds.phi_hat[j])
}

fn selected_by_oracle(beta: &[f64], p: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..beta.len()).collect();
    idx.sort_by(|&a, &b| beta[b].total_cmp(&beta[a]).then(a.cmp(&b)));
    idx.truncate(p.min(beta.len()));
    idx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn beta_matches_randomize_oracle(spec in pretrain_spec()) {
        let pred = beta_gamma(&spec).unwrap();
        let beta = oracle_beta(&spec);
        for (a, b) in pred.beta.iter().zip(&beta) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        prop_assert_eq!(pred.selected.clone(), selected_by_oracle(&beta, spec.p));
    }

    #[test]
    fn predicted_two_layer_profile_is_gamma_powers(spec in pretrain_spec()) {
        let pred: TheoryPrediction = beta_gamma(&spec).unwrap();
        let profile = pred.predicted_profile(2);
        for i in 0..spec.d() {
            let g = if pred.is_selected(i) { pred.gamma[i] } else { 0.0 };
            prop_assert!((profile.layer(1)[i] - g).abs() <= 1e-12);
            prop_assert!((profile.layer(2)[i] - g * g).abs() <= 1e-12);
        }
    }

    #[test]
    fn delta_is_scaled_indicator_difference((spec, ds) in spec_with_downstream()) {
        let pred = beta_gamma(&spec).unwrap();
        let profile = pred.predicted_profile(2);
        match delta(&spec, &ds) {
            Ok(v) => {
                let r1 = oracle_indicator(profile.layer(1), &ds);
                let r2 = oracle_indicator(profile.layer(2), &ds);
                // Same sign as r1 - r2, scaled by the relevant feature's
                // downstream strength.
                let pj = ds.phi_hat[ds.j_star - 1].powi(2);
                let scale = pj * (r1.abs() + r2.abs()).max(1.0);
                prop_assert!((v - pj * (r1 - r2)).abs() <= 1e-9 * scale, "{v} vs {}", pj * (r1 - r2));
                let lib = sample_complexity_indicator(profile.layer(1), &ds).unwrap();
                prop_assert!((lib - r1).abs() <= 1e-12 * r1);
            }
            // Undefined only when the downstream feature is not learned.
            Err(_) => prop_assert!(profile.layer(1)[ds.j_star - 1] == 0.0),
        }
    }

    #[test]
    fn pretraining_samples_have_fixed_magnitudes(spec in pretrain_spec(), seed in any::<u64>()) {
        let x = sample_pretrain(&spec, 16, seed).unwrap();
        prop_assert_eq!(&x, &sample_pretrain(&spec, 16, seed).unwrap());
        for r in 0..x.nrows() {
            for i in 0..spec.d() {
                prop_assert_eq!(x[(r, i)].abs(), spec.phi[i]);
            }
        }
    }

    #[test]
    fn balanced_factorization_reproduces_product(w in (1usize..=5, 1usize..=5).prop_flat_map(|(r, c)| matrix(r, c)), depth in 1usize..=4) {
        let stack = balanced_factorization(&w, depth).unwrap();
        prop_assert_eq!(stack.depth(), depth);
        let scale = w.norm().max(1.0);
        prop_assert!((stack.product() - &w).norm() <= 1e-9 * scale);
        prop_assert!(balancedness_defect(&stack) <= 1e-9 * scale);
    }

    #[test]
    fn balanced_norm_is_below_random_refactorizations(
        w in (1usize..=4).prop_flat_map(|p| (Just(p), p..=5)).prop_flat_map(|(p, d)| matrix(p, d)),
        a in matrix(5, 5),
    ) {
        let p = w.nrows();
        let a = a.view((0, 0), (p, p)).into_owned() + DMatrix::identity(p, p) * 3.0;
        let stack = balanced_factorization(&w, 2).unwrap();
        let balanced = factorization_norm(&stack.layers()[0], &stack.layers()[1]);
        let trial = refactor_norm(&w, &a).unwrap();
        prop_assert!(balanced <= trial.norm * (1.0 + 1e-10) + 1e-12, "{balanced} > {}", trial.norm);
    }

    #[test]
    fn params_roundtrip_through_json(ws in prop::collection::vec(-2.0f64..2.0, 12), kappa in 1.01f64..2.0) {
        let net = DiagonalNet::new(ws[0..3].to_vec(), ws[3..6].to_vec(), ws[6..9].iter().map(|v| v.abs()).collect(), ws[9..12].iter().map(|v| v.abs()).collect()).unwrap();
        let models = [
            Model::from(net),
            Model::from(LinearStack::new(vec![DMatrix::from_vec(2, 3, ws[0..6].to_vec()), DMatrix::from_vec(2, 2, ws[6..10].to_vec())]).unwrap()).with_head(kappa).unwrap(),
        ];
        for m in models {
            let back = Model::from_json(&m.to_json()).unwrap();
            prop_assert_eq!(&back, &m);
            let mut copy = m.clone();
            copy.set_params(&m.params()).unwrap();
            prop_assert_eq!(&copy, &m);
        }
    }

    #[test]
    fn margin_indicator_is_scale_invariant(w in matrix(3, 3), s in 0.1f64..10.0) {
        let w = w + DMatrix::identity(3, 3) * 4.0;
        let model = Model::from(LinearStack::new(vec![w]).unwrap());
        let ds = DownstreamSpec::new(vec![1.0, 0.5, 0.8], 1).unwrap();
        let (x, y) = projhead_core::evaluation::exhaustive_downstream(&ds).unwrap();
        let reps = represent(&model, 1, &x).unwrap();
        let a = margin_radius(&reps, &y).unwrap();
        let b = margin_radius(&(reps * s), &y).unwrap();
        prop_assert!((a.indicator() - b.indicator()).abs() <= 1e-6 * a.indicator());
    }
}
