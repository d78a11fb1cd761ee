mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wivloc::eval::threshold_grid;
use wivloc::rng::{stream, StreamDomain};
use wivloc::*;

fn loc() -> impl Strategy<Value = Location> {
    (-20.0..20.0f64, -20.0..20.0f64, -5.0..5.0f64).prop_map(|(x, y, z)| Location::new(x, y, z))
}

/// Nonnegative weights with at least one positive entry.
fn weights(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..1.0f64, Just(0.25)], 1..max_len)
        .prop_filter("some mass", |w| w.iter().any(|v| *v > 0.0))
}

proptest! {
    #[test]
    fn rp_and_area_likelihoods_stay_on_simplex(seed in any::<u64>(), n_rp in 1usize..20, n_ap in 1usize..6, scale in 0.0..50.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (partition, _) = random_partition(&mut rng, n_rp);
        let mut model = RpClassifierModel::zeros(n_rp, n_ap);
        for w in model.weights.as_mut_slice() {
            *w = rng.random_range(-scale..=scale);
        }
        let obs = random_rssi(&mut rng, 3, n_ap);
        let p = rp_likelihoods(&obs, &model).unwrap();
        prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.as_slice().iter().all(|v| *v >= 0.0));
        let a = area_likelihoods(&p, &partition).unwrap();
        prop_assert!((a.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn selection_is_sorted_and_maximal(w in weights(30), j_frac in 0.0..1.0f64) {
        let p = LikelihoodVector::normalized(w).unwrap();
        let j = 1 + ((p.len() - 1) as f64 * j_frac) as usize;
        let sel = select_candidate_areas(&p, j).unwrap();
        prop_assert_eq!(sel.len(), j);
        for pair in sel.area_indices().windows(2) {
            let (a, b) = (p.as_slice()[pair[0]], p.as_slice()[pair[1]]);
            prop_assert!(a > b || (a == b && pair[0] < pair[1]));
        }
        let worst_kept = sel.probs().iter().cloned().fold(f64::INFINITY, f64::min);
        for (i, v) in p.as_slice().iter().enumerate() {
            if !sel.contains(i) {
                prop_assert!(*v <= worst_kept);
            }
        }
    }

    #[test]
    fn min_ratio_identity(c in 0.0..1e3f64, w in weights(12)) {
        let probs: Vec<f64> = w.iter().map(|v| v / w.iter().sum::<f64>()).collect();
        let max = probs.iter().cloned().fold(0.0, f64::max);
        let min_ratio = probs.iter().filter(|p| **p > 0.0).map(|p| c / p).fold(f64::INFINITY, f64::min);
        prop_assert!(rel_err(min_ratio, c / max, 1e-300) <= 1e-12);
    }

    #[test]
    fn joint_loss_inflates_squared_error(pred in loc(), truth in loc(), w in weights(6)) {
        let probs: Vec<f64> = w.iter().map(|v| v.max(1e-3)).collect();
        let sel = CandidateSelection::new((0..probs.len()).collect(), probs).unwrap();
        let sq = pred.distance_squared(&truth);
        let l = joint_loss(&pred, &truth, &sel).unwrap();
        prop_assert!(l >= sq);
        prop_assert!((l - sq / sel.max_prob()).abs() <= 1e-9 * l.max(1.0));
    }

    #[test]
    fn projection_lands_in_selected_areas(seed in any::<u64>(), pred in loc()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (partition, _) = random_partition(&mut rng, 0);
        let j = rng.random_range(1..=partition.n_areas());
        let sel = random_selection(&mut rng, partition.n_areas(), j);
        let q = project_to_area(&pred, &sel, &partition).unwrap();
        let boxes: Vec<Aabb> = sel.area_indices().iter().map(|&a| *partition.area(a).unwrap()).collect();
        prop_assert!(brute_area(&q, &boxes).is_some());
        if brute_area(&pred, &boxes).is_some() {
            prop_assert_eq!(q, pred);
        }
        // No box offers a strictly closer point.
        for b in &boxes {
            prop_assert!(pred.distance(&q) <= pred.distance(&b.clamp(&pred)) + 1e-12);
        }
    }

    #[test]
    fn cdf_is_monotone_from_zero_to_one(errors in prop::collection::vec(0.0..10.0f64, 1..200)) {
        let cdf = error_cdf(&errors, &threshold_grid(12.0, 0.1)).unwrap();
        prop_assert!(cdf.first().unwrap().fraction <= cdf.last().unwrap().fraction);
        prop_assert!(cdf.windows(2).all(|w| w[0].fraction <= w[1].fraction));
        prop_assert_eq!(cdf.last().unwrap().fraction, 1.0);
        let below = error_cdf(&errors, &[-1.0]).unwrap();
        prop_assert_eq!(below[0].fraction, 0.0);
    }

    #[test]
    fn clamp_is_inside_and_idempotent(seed in any::<u64>(), p in loc()) {
        let b = random_box(&mut ChaCha8Rng::seed_from_u64(seed));
        let q = b.clamp(&p);
        prop_assert!(b.contains(&q));
        prop_assert_eq!(b.clamp(&q), q);
    }
}

#[test]
fn scene_map_respects_its_lipschitz_bound() {
    let cfg = ExperimentConfig::default();
    let scene = Scene::generate(&cfg.scene, &cfg.floor, cfg.image.feature_dim, cfg.seed).unwrap();
    let l = scene.lipschitz();
    let mut rng = rng(40);
    for _ in 0..1000 {
        let a = point_in(&cfg.floor, &mut rng);
        let b = point_in(&cfg.floor, &mut rng);
        let (fa, fb) = (scene.phi(&a), scene.phi(&b));
        let gap = fa
            .iter()
            .zip(&fb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(gap <= l * a.distance(&b) + 1e-12);
    }
}

#[test]
fn noiseless_rssi_falls_with_distance() {
    let ch = ChannelParams {
        shadowing_sigma: 0.0,
        ..ChannelParams::default()
    };
    let ap = Location::new(0.0, 0.0, 2.5);
    let mut rng = stream(2, StreamDomain::Aux, 0);
    let mut prev = f64::INFINITY;
    for i in 0..400 {
        let p = Location::new(0.05 * i as f64, 0.02 * i as f64, 0.0);
        let obs = synth_rssi(&p, &[ap], &ch, 3, &mut rng).unwrap();
        let v = obs.samples().get(0, 0);
        assert!(v <= prev);
        assert!(obs.samples().as_slice().iter().all(|s| *s == v));
        prev = v;
    }
}

#[test]
fn survey_is_deterministic_per_seed() {
    let cfg = ExperimentConfig::default();
    let a = run_survey(&cfg).unwrap();
    let b = run_survey(&cfg).unwrap();
    assert_eq!(
        wivloc::envelope::encode(&a.wifi).unwrap(),
        wivloc::envelope::encode(&b.wifi).unwrap()
    );
    assert_eq!(
        wivloc::envelope::encode(&a.images).unwrap(),
        wivloc::envelope::encode(&b.images).unwrap()
    );
    let c = run_survey(&ExperimentConfig { seed: 2, ..cfg }).unwrap();
    assert_ne!(a.wifi, c.wifi);
}
