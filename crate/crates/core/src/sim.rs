//! Synthetic stand-in for the site survey: a log-distance WiFi channel and a
//! smooth location-to-feature map playing the role of camera views.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::db::{build_wifi_db, partition_image_db, ImageDb, ImageEntry, WifiDb};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Location};
use crate::partition::AreaPartition;
use crate::rng::{stream, StreamDomain};
use crate::types::{
    ImageFeatureSpec, ImageFeatures, Matrix, RssiObservation, RSSI_CEIL_DBM, RSSI_FLOOR_DBM,
};

/// Log-distance path loss with Gaussian shadowing in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// Received power at the reference distance, dBm.
    pub tx_power_dbm: f64,
    /// Reference distance, meters.
    pub ref_distance: f64,
    pub path_loss_exponent: f64,
    /// Standard deviation of shadowing, dB.
    pub shadowing_sigma: f64,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ref_distance > 0.0) {
            return Err(Error::Config(
                "channel reference distance must be positive".into(),
            ));
        }
        if !(1.0..=6.0).contains(&self.path_loss_exponent) {
            return Err(Error::Config(
                "path loss exponent must lie in [1, 6]".into(),
            ));
        }
        if !(self.shadowing_sigma >= 0.0) || !self.tx_power_dbm.is_finite() {
            return Err(Error::Config(
                "shadowing sigma must be >= 0 and tx power finite".into(),
            ));
        }
        Ok(())
    }

    /// Noise-free received power at distance `d`; distances below the
    /// reference distance are floored to it.
    pub fn mean_rssi(&self, d: f64) -> f64 {
        let d = d.max(self.ref_distance);
        self.tx_power_dbm - 10.0 * self.path_loss_exponent * (d / self.ref_distance).log10()
    }
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            tx_power_dbm: -40.0,
            ref_distance: 1.0,
            path_loss_exponent: 3.0,
            shadowing_sigma: 4.0,
        }
    }
}

/// Draws `n_s` RSSI samples at `loc` from every AP in `aps`.
pub fn synth_rssi<R: Rng + ?Sized>(
    loc: &Location,
    aps: &[Location],
    ch: &ChannelParams,
    n_s: usize,
    rng: &mut R,
) -> Result<RssiObservation> {
    let means: Vec<f64> = aps
        .iter()
        .map(|ap| ch.mean_rssi(loc.distance(ap)))
        .collect();
    let mut samples = Matrix::zeros(n_s, aps.len());
    if ch.shadowing_sigma > 0.0 {
        let noise = Normal::new(0.0, ch.shadowing_sigma)
            .map_err(|e| Error::Config(format!("shadowing: {e}")))?;
        for s in 0..n_s {
            for (v, m) in samples.row_mut(s).iter_mut().zip(&means) {
                *v = (m + noise.sample(rng)).clamp(RSSI_FLOOR_DBM, RSSI_CEIL_DBM);
            }
        }
    } else {
        for s in 0..n_s {
            for (v, m) in samples.row_mut(s).iter_mut().zip(&means) {
                *v = m.clamp(RSSI_FLOOR_DBM, RSSI_CEIL_DBM);
            }
        }
    }
    RssiObservation::new(samples)
}

/// Configuration of the synthetic visual scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    /// Per-entry feature noise standard deviation.
    pub noise_sigma: f64,
    /// Horizontal frequencies are drawn so the phase of a basis function
    /// changes by at most `frequency_scale * pi` across the floor.
    pub frequency_scale: f64,
    /// Bound on the vertical frequency, rad/m.
    pub vertical_frequency: f64,
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0)
            || !(self.frequency_scale > 0.0)
            || !(self.vertical_frequency >= 0.0)
        {
            return Err(Error::Config(
                "scene noise and vertical frequency must be >= 0, frequency scale > 0".into(),
            ));
        }
        Ok(())
    }
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            noise_sigma: 0.3,
            frequency_scale: 2.0,
            vertical_frequency: 0.5,
        }
    }
}

/// A generated scene: one sinusoid `sin(w . loc + phase)` per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub frequencies: Vec<[f64; 3]>,
    pub phases: Vec<f64>,
    pub noise_sigma: f64,
}

const INJECTIVITY_SAMPLES: usize = 400;
const INJECTIVITY_MIN_SEPARATION: f64 = 0.1;
const INJECTIVITY_MIN_FEATURE_GAP: f64 = 1e-3;

impl Scene {
    /// Draws the basis from `seed` and rejects maps that fold two sampled
    /// floor points onto (nearly) the same feature vector.
    pub fn generate(
        params: &SceneParams,
        floor: &Aabb,
        feature_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        if feature_dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        let mut rng = stream(seed, StreamDomain::SceneBasis, 0);
        let [w, h, _] = floor.extent();
        let fx = params.frequency_scale * std::f64::consts::PI / w;
        let fy = params.frequency_scale * std::f64::consts::PI / h;
        let mut frequencies = Vec::with_capacity(feature_dim);
        let mut phases = Vec::with_capacity(feature_dim);
        for _ in 0..feature_dim {
            frequencies.push([
                fx * rng.random_range(-1.0..=1.0),
                fy * rng.random_range(-1.0..=1.0),
                params.vertical_frequency * rng.random_range(-1.0..=1.0),
            ]);
            phases.push(rng.random_range(0.0..std::f64::consts::TAU));
        }
        let scene = Self {
            frequencies,
            phases,
            noise_sigma: params.noise_sigma,
        };
        scene.check_injective(floor, seed)?;
        Ok(scene)
    }

    pub fn feature_dim(&self) -> usize {
        self.frequencies.len()
    }

    /// The noise-free feature vector at `loc`.
    pub fn phi(&self, loc: &Location) -> Vec<f64> {
        self.frequencies
            .iter()
            .zip(&self.phases)
            .map(|(w, p)| (w[0] * loc.x + w[1] * loc.y + w[2] * loc.z + p).sin())
            .collect()
    }

    /// Lipschitz constant of `phi`: each component moves at most `|w_k| |d|`.
    pub fn lipschitz(&self) -> f64 {
        self.frequencies
            .iter()
            .map(|w| w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
            .sum::<f64>()
            .sqrt()
    }

    fn check_injective(&self, floor: &Aabb, seed: u64) -> Result<()> {
        let mut rng = stream(seed, StreamDomain::Aux, 0);
        let pts: Vec<Location> = (0..INJECTIVITY_SAMPLES)
            .map(|_| uniform_in(floor, &mut rng))
            .collect();
        let feats: Vec<Vec<f64>> = pts.iter().map(|p| self.phi(p)).collect();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if pts[i].distance(&pts[j]) < INJECTIVITY_MIN_SEPARATION {
                    continue;
                }
                let gap: f64 = feats[i]
                    .iter()
                    .zip(&feats[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if gap < INJECTIVITY_MIN_FEATURE_GAP {
                    return Err(Error::Config(format!(
                        "scene feature map is not injective: {} and {} map within {gap:e}",
                        pts[i], pts[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `spec.n_p` noisy views of the scene at `loc`.
pub fn synth_features<R: Rng + ?Sized>(
    loc: &Location,
    scene: &Scene,
    spec: &ImageFeatureSpec,
    rng: &mut R,
) -> Result<ImageFeatures> {
    if spec.feature_dim != scene.feature_dim() {
        return Err(Error::shape(
            format!("{} features", scene.feature_dim()),
            spec.feature_dim,
        ));
    }
    let phi = scene.phi(loc);
    let mut features = Matrix::zeros(spec.n_p, spec.feature_dim);
    if scene.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, scene.noise_sigma)
            .map_err(|e| Error::Config(format!("scene noise: {e}")))?;
        for r in 0..spec.n_p {
            for (v, m) in features.row_mut(r).iter_mut().zip(&phi) {
                *v = m + noise.sample(rng);
            }
        }
    } else {
        for r in 0..spec.n_p {
            features.row_mut(r).copy_from_slice(&phi);
        }
    }
    ImageFeatures::new(features, *spec)
}

pub fn uniform_in<R: Rng + ?Sized>(b: &Aabb, rng: &mut R) -> Location {
    let mut axis = |lo: f64, hi: f64| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    Location::new(
        axis(b.min.x, b.max.x),
        axis(b.min.y, b.max.y),
        axis(b.min.z, b.max.z),
    )
}

/// Everything needed to synthesize observations for one experiment.
#[derive(Debug, Clone)]
pub struct Environment {
    pub floor: Aabb,
    pub aps: Vec<Location>,
    pub channel: ChannelParams,
    pub n_s: usize,
    pub image_spec: ImageFeatureSpec,
    pub scene: Scene,
}

impl Environment {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            floor: cfg.floor,
            aps: cfg.ap_layout.clone(),
            channel: cfg.channel,
            n_s: cfg.n_s,
            image_spec: cfg.image,
            scene: Scene::generate(&cfg.scene, &cfg.floor, cfg.image.feature_dim, cfg.seed)?,
        })
    }

    fn check_inside(&self, loc: &Location) -> Result<()> {
        if !self.floor.contains(loc) {
            return Err(Error::invalid(format!(
                "location {loc} is outside the floor"
            )));
        }
        Ok(())
    }

    pub fn rssi<R: Rng + ?Sized>(&self, loc: &Location, rng: &mut R) -> Result<RssiObservation> {
        self.check_inside(loc)?;
        synth_rssi(loc, &self.aps, &self.channel, self.n_s, rng)
    }

    pub fn features<R: Rng + ?Sized>(&self, loc: &Location, rng: &mut R) -> Result<ImageFeatures> {
        self.check_inside(loc)?;
        synth_features(loc, &self.scene, &self.image_spec, rng)
    }
}

/// Output of a synthetic survey campaign.
#[derive(Debug, Clone)]
pub struct SurveyOutput {
    pub wifi: WifiDb,
    pub images: ImageDb,
    pub partition: AreaPartition,
    pub warnings: Vec<String>,
}

/// Replays `N_W` RSSI rounds at every RP and `N_I` image rounds (each with a
/// synchronized RSSI block) at every image-survey location.
pub fn run_survey(cfg: &ExperimentConfig) -> Result<SurveyOutput> {
    let env = Environment::from_config(cfg)?;
    let rps = cfg.reference_points()?;
    let partition = cfg.partition(&rps)?;
    let warnings = partition
        .empty_areas()
        .into_iter()
        .map(|j| format!("area {j} contains no reference point"))
        .collect();

    let mut wifi_rounds = Vec::with_capacity(rps.len());
    for rp in &rps {
        let mut rng = stream(cfg.seed, StreamDomain::WifiSurvey, rp.index as u64);
        let obs = (0..cfg.n_w)
            .map(|_| env.rssi(&rp.location, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        wifi_rounds.push((*rp, obs));
    }
    let wifi = build_wifi_db(wifi_rounds, cfg.config_hash(), cfg.seed)?;

    let mut entries = Vec::new();
    for (l, loc) in cfg.image_survey_locations()?.iter().enumerate() {
        let mut feat_rng = stream(cfg.seed, StreamDomain::ImageSurvey, l as u64);
        let mut rssi_rng = stream(cfg.seed, StreamDomain::TrainingRssi, l as u64);
        let mut features = Vec::with_capacity(cfg.n_i);
        let mut rssi = Vec::with_capacity(cfg.n_i);
        for _ in 0..cfg.n_i {
            features.push(env.features(loc, &mut feat_rng)?);
            rssi.push(env.rssi(loc, &mut rssi_rng)?);
        }
        entries.push(ImageEntry {
            location: *loc,
            features,
            rssi,
        });
    }
    let images = ImageDb::new(entries, cfg.config_hash(), cfg.seed)?;
    let images = partition_image_db(images, &partition)?;

    Ok(SurveyOutput {
        wifi,
        images,
        partition,
        warnings,
    })
}
