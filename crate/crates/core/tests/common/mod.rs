#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use wivloc::coarse::CoarseTrainingMeta;
use wivloc::db::ImageEntry;
use wivloc::fine::FineTrainingMeta;
use wivloc::rng::{stream, StreamDomain};
use wivloc::{
    build_wifi_db, make_grid_partition, partition_image_db, Aabb, AreaPartition,
    CandidateSelection, CoarseModel, FineModel, ImageDb, ImageFeatureSpec, ImageFeatures,
    LikelihoodVector, Location, Matrix, ReferencePoint, RegressorModel, RpClassifierModel,
    RssiObservation, WifiDb,
};

pub fn rng(i: u64) -> ChaCha8Rng {
    stream(0xC0FFEE, StreamDomain::Aux, i)
}

pub fn random_box<R: Rng>(rng: &mut R) -> Aabb {
    let min = Location::new(
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-1.0..1.0),
    );
    let max = Location::new(
        min.x + rng.random_range(0.5..8.0),
        min.y + rng.random_range(0.5..8.0),
        min.z + rng.random_range(0.05..2.0),
    );
    Aabb::new(min, max)
}

pub fn point_in<R: Rng>(b: &Aabb, rng: &mut R) -> Location {
    Location::new(
        rng.random_range(b.min.x..=b.max.x),
        rng.random_range(b.min.y..=b.max.y),
        rng.random_range(b.min.z..=b.max.z),
    )
}

/// A grid partition of a random floor with `n_rp` random RPs inside it.
pub fn random_partition<R: Rng>(rng: &mut R, n_rp: usize) -> (AreaPartition, Vec<ReferencePoint>) {
    let floor = random_box(rng);
    let rps: Vec<ReferencePoint> = (0..n_rp)
        .map(|index| ReferencePoint {
            index,
            location: point_in(&floor, rng),
        })
        .collect();
    let nx = rng.random_range(1..=5);
    let ny = rng.random_range(1..=4);
    (make_grid_partition(&floor, nx, ny, &rps).unwrap(), rps)
}

/// A random simplex vector. With `ties`, values are drawn from a tiny pool
/// so duplicates are common.
pub fn random_likelihood<R: Rng>(rng: &mut R, k: usize, ties: bool) -> LikelihoodVector {
    let w: Vec<f64> = if ties {
        (0..k)
            .map(|_| [0.0, 1.0, 2.0, 3.0][rng.random_range(0..4)])
            .collect()
    } else {
        (0..k).map(|_| rng.random::<f64>().powi(3)).collect()
    };
    if w.iter().all(|v| *v == 0.0) {
        return LikelihoodVector::uniform(k).unwrap();
    }
    LikelihoodVector::normalized(w).unwrap()
}

pub fn random_rssi<R: Rng>(rng: &mut R, n_s: usize, n_ap: usize) -> RssiObservation {
    let data = (0..n_s * n_ap)
        .map(|_| rng.random_range(-120.0..=0.0))
        .collect();
    RssiObservation::new(Matrix::from_row_major(n_s, n_ap, data).unwrap()).unwrap()
}

pub fn random_features<R: Rng>(rng: &mut R, spec: ImageFeatureSpec) -> ImageFeatures {
    let data = (0..spec.n_p * spec.feature_dim)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    ImageFeatures::new(
        Matrix::from_row_major(spec.n_p, spec.feature_dim, data).unwrap(),
        spec,
    )
    .unwrap()
}

pub fn small_spec<R: Rng>(rng: &mut R) -> ImageFeatureSpec {
    ImageFeatureSpec {
        n_p: rng.random_range(1..=4),
        feature_dim: rng.random_range(1..=6),
        ..ImageFeatureSpec::default()
    }
}

/// A random selection of `j` distinct areas out of `n_areas` with positive
/// probabilities.
pub fn random_selection<R: Rng>(rng: &mut R, n_areas: usize, j: usize) -> CandidateSelection {
    let mut areas: Vec<usize> = (0..n_areas).collect();
    areas.shuffle(rng);
    areas.truncate(j);
    let probs = (0..j)
        .map(|_| rng.random_range(0.01..1.0) / j as f64)
        .collect();
    CandidateSelection::new(areas, probs).unwrap()
}

pub fn random_wifi_db<R: Rng>(rng: &mut R) -> WifiDb {
    let n_rp = rng.random_range(1..=12);
    let n_s = rng.random_range(1..=6);
    let n_ap = rng.random_range(1..=5);
    let rounds = rng.random_range(1..=3);
    let mut survey: Vec<_> = (0..n_rp)
        .map(|index| {
            let rp = ReferencePoint {
                index,
                location: Location::new(rng.random(), rng.random(), rng.random()),
            };
            let obs = (0..rounds).map(|_| random_rssi(rng, n_s, n_ap)).collect();
            (rp, obs)
        })
        .collect();
    survey.shuffle(rng);
    build_wifi_db(
        survey,
        format!("{:016x}", rng.random::<u64>()),
        rng.random(),
    )
    .unwrap()
}

pub fn random_image_db<R: Rng>(rng: &mut R) -> ImageDb {
    let (partition, _) = random_partition(rng, 0);
    let spec = small_spec(rng);
    let n_ap = rng.random_range(1..=4);
    let entries = (0..rng.random_range(1..=10))
        .map(|_| {
            let rounds = rng.random_range(1..=3);
            ImageEntry {
                location: point_in(partition.floor(), rng),
                features: (0..rounds).map(|_| random_features(rng, spec)).collect(),
                rssi: (0..rounds).map(|_| random_rssi(rng, 2, n_ap)).collect(),
            }
        })
        .collect();
    let db = ImageDb::new(entries, format!("{:x}", rng.random::<u32>()), rng.random()).unwrap();
    if rng.random_bool(0.5) {
        partition_image_db(db, &partition).unwrap()
    } else {
        db
    }
}

pub fn random_coarse_model<R: Rng>(rng: &mut R) -> CoarseModel {
    let n_rp = rng.random_range(1..=10);
    let n_ap = rng.random_range(1..=5);
    let (partition, rps) = random_partition(rng, n_rp);
    let weights = Matrix::from_row_major(
        n_rp,
        n_ap + 1,
        (0..n_rp * (n_ap + 1))
            .map(|_| rng.random_range(-3.0..3.0))
            .collect(),
    )
    .unwrap();
    let classifier = RpClassifierModel {
        weights,
        feature_mean: (0..n_ap).map(|_| rng.random_range(-90.0..-30.0)).collect(),
        feature_scale: (0..n_ap).map(|_| rng.random_range(0.5..10.0)).collect(),
        meta: CoarseTrainingMeta {
            iterations: rng.random_range(0..5000),
            final_loss: rng.random(),
            step: rng.random(),
            checkpoints: (0..rng.random_range(0..4))
                .map(|i| (i * 100, rng.random()))
                .collect(),
        },
    };
    CoarseModel {
        classifier,
        rps,
        j_star: rng.random_range(1..=partition.n_areas()),
        partition,
        config_hash: format!("{:x}", rng.random::<u64>()),
        seed: rng.random(),
    }
}

pub fn random_fine_model<R: Rng>(rng: &mut R) -> FineModel {
    let floor = random_box(rng);
    let dim = rng.random_range(1..=8);
    let hidden = [rng.random_range(1..=9), rng.random_range(1..=9)];
    let mut regressor = RegressorModel::new(
        dim,
        hidden,
        &floor,
        rng.random_range(0.0..2.0),
        rng.random(),
    )
    .unwrap();
    regressor.meta = FineTrainingMeta {
        epochs: rng.random_range(0..100),
        samples: rng.random_range(0..1000),
        loss_curve: (0..rng.random_range(0..20))
            .map(|_| rng.random::<f64>() * 1e3)
            .collect(),
    };
    FineModel {
        regressor,
        config_hash: format!("{:x}", rng.random::<u64>()),
        seed: rng.random(),
    }
}

/// Area of `p` found by scanning boxes in index order.
pub fn brute_area(p: &Location, areas: &[Aabb]) -> Option<usize> {
    areas.iter().position(|a| {
        a.min.x <= p.x
            && p.x <= a.max.x
            && a.min.y <= p.y
            && p.y <= a.max.y
            && a.min.z <= p.z
            && p.z <= a.max.z
    })
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
