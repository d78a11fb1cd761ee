use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarse::CoarseHyperParams;
use crate::error::{Error, Result};
use crate::fine::FineHyperParams;
use crate::geometry::{Aabb, Location};
use crate::partition::{make_grid_partition, AreaPartition};
use crate::sim::{ChannelParams, SceneParams};
use crate::types::{ImageFeatureSpec, ReferencePoint};

/// Slack used when counting grid points that land exactly on a boundary.
const GRID_EPS: f64 = 1e-9;

/// A full experiment: floor geometry, radio and scene models, survey sizes,
/// and the hyperparameters of both localization stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub floor: Aabb,
    pub ap_layout: Vec<Location>,
    /// RSSI samples per observation.
    pub n_s: usize,
    /// Number of access points; must match `ap_layout`.
    pub n_ap: usize,
    /// Distance between adjacent reference points, meters.
    pub rp_spacing: f64,
    /// Area grid as `[cells along x, cells along y]`.
    pub area_grid: [usize; 2],
    /// RSSI rounds per reference point.
    pub n_w: usize,
    /// Image rounds per image-survey location.
    pub n_i: usize,
    /// Number of candidate areas retained by the coarse stage.
    pub j_star: usize,
    pub image: ImageFeatureSpec,
    pub channel: ChannelParams,
    pub scene: SceneParams,
    pub coarse: CoarseHyperParams,
    pub fine: FineHyperParams,
    /// Number of held-out evaluation queries.
    pub m_queries: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ap = |x, y| Location::new(x, y, 2.5);
        Self {
            floor: Aabb::new(Location::new(0.0, 0.0, 0.0), Location::new(10.0, 6.0, 0.1)),
            ap_layout: vec![
                ap(0.4, 0.6),
                ap(9.7, 0.3),
                ap(9.2, 5.8),
                ap(0.8, 5.4),
                ap(4.6, 3.3),
            ],
            n_s: 50,
            n_ap: 5,
            rp_spacing: 1.5,
            area_grid: [5, 3],
            n_w: 2,
            n_i: 2,
            j_star: 4,
            image: ImageFeatureSpec::default(),
            channel: ChannelParams::default(),
            scene: SceneParams::default(),
            coarse: CoarseHyperParams::default(),
            fine: FineHyperParams::default(),
            m_queries: 100,
            seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Same experiment with both noise sources switched off.
    pub fn noise_free(mut self) -> Self {
        self.channel.shadowing_sigma = 0.0;
        self.scene.noise_sigma = 0.0;
        self
    }

    pub fn n_areas(&self) -> usize {
        self.area_grid[0] * self.area_grid[1]
    }

    pub fn n_rp(&self) -> usize {
        let (nx, ny) = self.rp_grid_dims();
        nx * ny
    }

    fn rp_grid_dims(&self) -> (usize, usize) {
        let [w, h, _] = self.floor.extent();
        let count = |len: f64| (len / self.rp_spacing + GRID_EPS).floor().max(0.0) as usize;
        (count(w), count(h))
    }

    fn rp_origin(&self) -> (f64, f64) {
        let (nx, ny) = self.rp_grid_dims();
        let [w, h, _] = self.floor.extent();
        let off = |len: f64, n: usize| 0.5 * (len - (n as f64 - 1.0) * self.rp_spacing);
        (self.floor.min.x + off(w, nx), self.floor.min.y + off(h, ny))
    }

    /// Survey height for reference points and image locations.
    pub fn survey_z(&self) -> f64 {
        self.floor.center().z
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !self.floor.has_positive_volume()
            || !self.floor.min.is_finite()
            || !self.floor.max.is_finite()
        {
            return bad("floor must be a finite box with positive volume".into());
        }
        if self.ap_layout.is_empty() || self.n_ap != self.ap_layout.len() {
            return bad(format!(
                "n_ap = {} but ap_layout lists {} access points",
                self.n_ap,
                self.ap_layout.len()
            ));
        }
        if self.ap_layout.iter().any(|a| !a.is_finite()) {
            return bad("access point positions must be finite".into());
        }
        for (name, v) in [
            ("n_s", self.n_s),
            ("n_w", self.n_w),
            ("n_i", self.n_i),
            ("j_star", self.j_star),
            ("m_queries", self.m_queries),
            ("area_grid[0]", self.area_grid[0]),
            ("area_grid[1]", self.area_grid[1]),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let [w, h, _] = self.floor.extent();
        if !(self.rp_spacing > 0.0) || self.rp_spacing > w || self.rp_spacing > h {
            return bad(format!(
                "rp_spacing {} must be positive and no larger than the floor ({w} x {h} m)",
                self.rp_spacing
            ));
        }
        if self.j_star > self.n_areas() {
            return bad(format!(
                "j_star {} exceeds the {} areas",
                self.j_star,
                self.n_areas()
            ));
        }
        if self.n_rp() < self.n_areas() {
            return bad(format!(
                "spacing {} yields {} reference points, fewer than the {} areas",
                self.rp_spacing,
                self.n_rp(),
                self.n_areas()
            ));
        }
        self.image.validate()?;
        self.channel.validate()?;
        self.scene.validate()?;
        self.coarse.validate()?;
        self.fine.validate()?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Reference points on a grid of pitch `rp_spacing`, centered on the
    /// floor, indexed row by row (x fastest).
    pub fn reference_points(&self) -> Result<Vec<ReferencePoint>> {
        let (nx, ny) = self.rp_grid_dims();
        if nx == 0 || ny == 0 {
            return Err(Error::Config(format!(
                "rp_spacing {} leaves no grid points",
                self.rp_spacing
            )));
        }
        let (x0, y0) = self.rp_origin();
        let z = self.survey_z();
        Ok((0..ny)
            .flat_map(|iy| (0..nx).map(move |ix| (ix, iy)))
            .enumerate()
            .map(|(index, (ix, iy))| ReferencePoint {
                index,
                location: Location::new(
                    x0 + ix as f64 * self.rp_spacing,
                    y0 + iy as f64 * self.rp_spacing,
                    z,
                ),
            })
            .collect())
    }

    /// Image-survey locations: the RP lattice refined by two (RPs, edge
    /// midpoints and cell centers), continued in half steps out to the walls.
    pub fn image_survey_locations(&self) -> Result<Vec<Location>> {
        let (x0, y0) = self.rp_origin();
        let half = 0.5 * self.rp_spacing;
        let axis = |origin: f64, lo: f64, hi: f64| -> Vec<f64> {
            let k_lo = ((lo - origin) / half - GRID_EPS).ceil() as i64;
            let k_hi = ((hi - origin) / half + GRID_EPS).floor() as i64;
            (k_lo..=k_hi)
                .map(|k| (origin + k as f64 * half).clamp(lo, hi))
                .collect()
        };
        let xs = axis(x0, self.floor.min.x, self.floor.max.x);
        let ys = axis(y0, self.floor.min.y, self.floor.max.y);
        let z = self.survey_z();
        Ok(ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| Location::new(x, y, z)))
            .collect())
    }

    pub fn partition(&self, rps: &[ReferencePoint]) -> Result<AreaPartition> {
        make_grid_partition(&self.floor, self.area_grid[0], self.area_grid[1], rps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_reference_sizes() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_rp(), 24);
        assert_eq!(cfg.n_areas(), 15);
        assert_eq!(cfg.n_s, 50);
        assert_eq!(cfg.n_ap, 5);
        assert_eq!(cfg.image.n_p, 104);
        assert_eq!((cfg.n_w, cfg.n_i, cfg.j_star), (2, 2, 4));
    }

    #[test]
    fn default_partition_has_no_empty_area() {
        let cfg = ExperimentConfig::default();
        let p = cfg.partition(&cfg.reference_points().unwrap()).unwrap();
        assert!(p.empty_areas().is_empty());
    }

    #[test]
    fn image_locations_contain_every_rp() {
        let cfg = ExperimentConfig::default();
        let locs = cfg.image_survey_locations().unwrap();
        for rp in cfg.reference_points().unwrap() {
            assert!(
                locs.iter().any(|l| l.distance(&rp.location) < 1e-9),
                "{}",
                rp.location
            );
        }
        assert!(locs.iter().all(|l| cfg.floor.contains(l)));
        assert!(locs.len() > 2 * cfg.n_rp());
    }

    #[test]
    fn rejects_j_star_above_area_count() {
        let cfg = ExperimentConfig {
            j_star: 16,
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_ap_count_mismatch() {
        let cfg = ExperimentConfig {
            n_ap: 4,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn json_round_trip_and_hash_stability() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&cfg.to_json_pretty()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.config_hash(), cfg.config_hash());
        let other = ExperimentConfig {
            seed: 2,
            ..cfg.clone()
        };
        assert_ne!(other.config_hash(), cfg.config_hash());
    }

    #[test]
    fn unknown_field_is_config_error() {
        let mut v: serde_json::Value = serde_json::to_value(ExperimentConfig::default()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(matches!(
            ExperimentConfig::from_json(&v.to_string()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"seed": 7, "fine": {"epochs": 10}, "channel": {"shadowing_sigma": 0.0}}"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.fine.epochs, 10);
        assert_eq!(cfg.fine.learning_rate, 1e-4);
        assert_eq!(cfg.channel.shadowing_sigma, 0.0);
        assert_eq!(cfg.channel.path_loss_exponent, 3.0);
        assert_eq!(cfg.n_rp(), 24);
        assert_eq!(
            ExperimentConfig::from_json("{}").unwrap(),
            ExperimentConfig::default()
        );
    }
}
