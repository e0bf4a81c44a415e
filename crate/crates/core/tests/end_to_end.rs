use proxy_transfer::causal::{causal_estimate, FitOptions};
use proxy_transfer::io::{dataset_to_string, model_from_str, model_to_string, read_dataset};
use proxy_transfer::reduced::ReducedOptions;
use proxy_transfer::rng::stream;
use proxy_transfer::scm::fixtures::{counterexample, CounterexampleVariant};
use proxy_transfer::scm::{cell_probabilities, target_proxy_law};
use proxy_transfer::{
    identify_effect, population_views, reduced_estimate, sample_scm_spec, simulate_dataset, true_effect, CategorySpec,
    Error,
};

#[test]
fn reduced_estimate_concentrates_on_truth() {
    let dims = CategorySpec::new(3, 2, 2, 2, 2).unwrap();
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut rng = stream(seed, &[0]);
        let spec = sample_scm_spec(&dims, &mut rng).unwrap();
        let kappa = proxy_transfer::linalg::condition_number(&population_views(&spec, 0, 0).unwrap().p_w_given_ex);
        if kappa > 20.0 {
            continue;
        }
        let ds = simulate_dataset(&spec, 200_000, &mut rng);
        let est = reduced_estimate(&ds, 0, 0, ReducedOptions::default()).unwrap();
        let truth = true_effect(&spec, 0, 0).unwrap();
        let se = est.sigma_hat.unwrap() / (est.n as f64).sqrt();
        assert!((est.point_unclipped - truth).abs() < 5.0 * se, "seed {seed}: {} vs {truth}, se {se}", est.point);
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} well-conditioned models");
}

#[test]
fn causal_and_reduced_agree_on_large_samples() {
    let dims = CategorySpec::new(2, 2, 2, 2, 2).unwrap();
    let mut rng = stream(42, &[]);
    let spec = sample_scm_spec(&dims, &mut rng).unwrap();
    let ds = simulate_dataset(&spec, 100_000, &mut rng);
    let reduced = reduced_estimate(&ds, 1, 1, ReducedOptions::default()).unwrap();
    let causal = causal_estimate(&ds, 1, 1, &FitOptions::default()).unwrap();
    assert!((reduced.point - causal.point).abs() < 0.03, "{} vs {}", reduced.point, causal.point);
}

#[test]
fn counterexample_models_share_observables_but_not_effects() {
    let a = counterexample(CounterexampleVariant::First);
    let b = counterexample(CounterexampleVariant::Second);
    let (ca, cb) = (cell_probabilities(&a), cell_probabilities(&b));
    let d = &a.dims;
    for e in 0..d.k_e {
        for w in 0..d.k_w {
            for x in 0..d.k_x {
                for y in 0..d.k_y {
                    assert!((ca.get(d, y, x, w, e) - cb.get(d, y, x, w, e)).abs() < 1e-12);
                }
            }
        }
    }
    for (qa, qb) in target_proxy_law(&a).iter().zip(target_proxy_law(&b)) {
        assert!((qa - qb).abs() < 1e-12);
    }
    assert!((true_effect(&a, 0, 0).unwrap() - 0.39).abs() < 1e-12);
    assert!((true_effect(&b, 0, 0).unwrap() - 0.367).abs() < 1e-12);

    let v = population_views(&a, 0, 0).unwrap();
    assert!(matches!(
        identify_effect(&v.p_y_given_ex, &v.p_w_given_ex, &v.q_w),
        Err(Error::RankDeficient { .. })
    ));
}

#[test]
fn dataset_and_model_survive_serialisation() {
    let dims = CategorySpec::new(2, 3, 3, 2, 3).unwrap();
    let mut rng = stream(5, &[]);
    let spec = sample_scm_spec(&dims, &mut rng).unwrap();
    let back = model_from_str(&model_to_string(&spec).unwrap()).unwrap();
    assert_eq!(model_to_string(&back).unwrap(), model_to_string(&spec).unwrap());
    assert_eq!(true_effect(&back, 1, 2).unwrap(), true_effect(&spec, 1, 2).unwrap());

    let ds = simulate_dataset(&spec, 3000, &mut rng);
    let text = dataset_to_string(&ds).unwrap();
    let parsed = read_dataset(text.as_bytes(), &dims).unwrap();
    assert_eq!(parsed.records(), ds.records());
    assert_eq!(dataset_to_string(&parsed).unwrap(), text);
}
