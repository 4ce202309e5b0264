//! Problem generation and training-set statistics.

use riskplan::env::{
    generate_dataset, generate_problems, nominal_tabletop, Aabb, DatasetSizes, GenerationSettings,
    PerturbationSpec, TabletopConfig,
};
use riskplan::geom::KinematicChain;

#[test]
fn standard_perturbations_give_fifty_distinct_valid_problems() {
    let chain = KinematicChain::default_planar();
    let nom = nominal_tabletop(&TabletopConfig::default()).unwrap();
    let spec = PerturbationSpec::standard(7);
    let settings = GenerationSettings::default();
    let probs = generate_problems(&chain, &nom, &spec, 50, &settings).unwrap();
    assert_eq!(probs.len(), 50);
    for (i, a) in probs.iter().enumerate() {
        let start = chain.forward_kinematics(&a.q_start).unwrap();
        assert!(a.scene.clearance(&chain, &start) >= settings.start_margin);
        assert!(a.goal.contains(&chain, &a.q_goal).unwrap());
        for b in &probs[..i] {
            assert_ne!(a.scene, b.scene);
        }
        // table geometry stays noise-free after perturbation
        assert_eq!(a.scene.noisy_count(), nom.scene.noisy_count());
    }
    let again = generate_problems(&chain, &nom, &spec, 50, &settings).unwrap();
    assert_eq!(probs, again);
}

#[test]
fn spatial_problems_generate() {
    let chain = KinematicChain::default_spatial();
    let nom = nominal_tabletop(&TabletopConfig { dim: 3, ..Default::default() }).unwrap();
    let probs =
        generate_problems(&chain, &nom, &PerturbationSpec::standard(3), 5, &GenerationSettings::default()).unwrap();
    assert_eq!(probs.len(), 5);
}

#[test]
fn default_dataset_is_balanced_with_calibrated_noise() {
    let chain = KinematicChain::default_planar();
    let sizes = DatasetSizes::desk();
    let sigma = 0.02;
    let ds = generate_dataset(&chain, &Aabb::centered(2, 1.3), &sizes, sigma, 0, 1).unwrap();
    assert_eq!(ds.len(), 600 * (120 + 3 * 30));

    let colliding = (0..ds.len())
        .filter(|&i| ds.true_of(i).iter().any(|d| *d < 0.0))
        .count() as f64
        / ds.len() as f64;
    assert!((0.3..=0.7).contains(&colliding), "collision fraction {colliding}");

    // sample-statistics oracle on the residuals d_noisy - d_true
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
    for i in 0..ds.len() {
        for k in 0..ds.links {
            let t = ds.true_of(i)[k] as f64;
            for v in ds.noisy_of(i, k) {
                let e = *v as f64 - t;
                s += e;
                s2 += e * e;
                n += 1.0;
            }
        }
    }
    let mean = s / n;
    let std = (s2 / n - mean * mean).sqrt();
    assert!((std / sigma - 1.0).abs() < 0.1, "std {std}");
    assert!(mean.abs() < 4.0 * sigma / n.sqrt(), "mean {mean}");
}
