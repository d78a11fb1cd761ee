//! WiFi fingerprint and image databases, the offline per-area split of the
//! image database, and their JSON Lines persistence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envelope::{self, Persist};
use crate::error::{Error, Result};
use crate::geometry::Location;
use crate::partition::AreaPartition;
use crate::types::{CandidateSelection, ImageFeatures, ReferencePoint, RssiObservation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WifiEntry {
    pub rp: ReferencePoint,
    pub observations: Vec<RssiObservation>,
}

/// RSSI rounds recorded at every reference point, sorted by RP index.
#[derive(Debug, Clone, PartialEq)]
pub struct WifiDb {
    entries: Vec<WifiEntry>,
    config_hash: String,
    seed: u64,
}

impl WifiDb {
    pub fn entries(&self) -> &[WifiEntry] {
        &self.entries
    }

    pub fn n_rps(&self) -> usize {
        self.entries.len()
    }

    pub fn reference_points(&self) -> Vec<ReferencePoint> {
        self.entries.iter().map(|e| e.rp).collect()
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Builds a WiFi database from `(rp, rounds)` pairs in any order.
pub fn build_wifi_db(
    survey: Vec<(ReferencePoint, Vec<RssiObservation>)>,
    config_hash: String,
    seed: u64,
) -> Result<WifiDb> {
    if survey.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let mut entries: Vec<WifiEntry> = survey
        .into_iter()
        .map(|(rp, observations)| WifiEntry { rp, observations })
        .collect();
    entries.sort_by_key(|e| e.rp.index);
    for (i, e) in entries.iter().enumerate() {
        if i > 0 && entries[i - 1].rp.index == e.rp.index {
            return Err(Error::DuplicateRp(e.rp.index));
        }
        if e.rp.index != i {
            return Err(Error::invalid(format!(
                "reference point indices must be contiguous from 0; missing {i}"
            )));
        }
        if !e.rp.location.is_finite() {
            return Err(Error::invalid(format!("RP {i} has a non-finite location")));
        }
        let Some(first) = e.observations.first() else {
            return Err(Error::invalid(format!("RP {i} has no observations")));
        };
        for o in &e.observations {
            o.check_shape(first.n_samples(), first.n_aps())?;
        }
    }
    let shape = (
        entries[0].observations[0].n_samples(),
        entries[0].observations[0].n_aps(),
    );
    for e in &entries {
        e.observations[0].check_shape(shape.0, shape.1)?;
    }
    Ok(WifiDb {
        entries,
        config_hash,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub location: Location,
    /// One feature block per image round.
    pub features: Vec<ImageFeatures>,
    /// RSSI recorded alongside each image round.
    pub rssi: Vec<RssiObservation>,
}

/// Image rounds at every image-survey location, sorted lexicographically by
/// location, optionally split by area.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDb {
    entries: Vec<ImageEntry>,
    area_index: Option<Vec<Vec<usize>>>,
    config_hash: String,
    seed: u64,
}

impl ImageDb {
    pub fn new(mut entries: Vec<ImageEntry>, config_hash: String, seed: u64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        for (i, e) in entries.iter().enumerate() {
            if e.features.is_empty() {
                return Err(Error::invalid(format!(
                    "image entry {i} has no feature rounds"
                )));
            }
            if e.features.len() != e.rssi.len() {
                return Err(Error::invalid(format!(
                    "image entry {i} has {} feature rounds but {} RSSI rounds",
                    e.features.len(),
                    e.rssi.len()
                )));
            }
            if !e.location.is_finite() {
                return Err(Error::invalid(format!(
                    "image entry {i} has a non-finite location"
                )));
            }
        }
        entries.sort_by(|a, b| a.location.lex_cmp(&b.location));
        Ok(Self {
            entries,
            area_index: None,
            config_hash,
            seed,
        })
    }

    pub fn entries(&self) -> &[ImageEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry indices per area, once [`partition_image_db`] has run.
    pub fn area_index(&self) -> Option<&[Vec<usize>]> {
        self.area_index.as_deref()
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Splits the image database into one index list per area.
pub fn partition_image_db(mut db: ImageDb, partition: &AreaPartition) -> Result<ImageDb> {
    let mut index = vec![Vec::new(); partition.n_areas()];
    for (i, e) in db.entries.iter().enumerate() {
        let area = partition
            .locate(&e.location)
            .filter(|_| partition.floor().contains(&e.location))
            .ok_or(Error::EntryOutsideAreas {
                index: i,
                location: e.location.to_string(),
            })?;
        index[area].push(i);
    }
    db.area_index = Some(index);
    Ok(db)
}

/// Borrowed subset of an image database.
#[derive(Debug, Clone)]
pub struct ImageDbView<'a> {
    db: &'a ImageDb,
    indices: Vec<usize>,
}

impl<'a> ImageDbView<'a> {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a ImageEntry> + '_ {
        self.indices.iter().map(|&i| &self.db.entries[i])
    }
}

/// The entries of every selected area, in ascending entry order.
pub fn restrict_image_db<'a>(
    db: &'a ImageDb,
    selection: &CandidateSelection,
) -> Result<ImageDbView<'a>> {
    let index = db
        .area_index
        .as_ref()
        .ok_or_else(|| Error::invalid("image database has not been partitioned"))?;
    let mut indices = Vec::new();
    for &j in selection.area_indices() {
        let list = index.get(j).ok_or(Error::UnknownArea {
            index: j,
            n_areas: index.len(),
        })?;
        indices.extend_from_slice(list);
    }
    indices.sort_unstable();
    Ok(ImageDbView { db, indices })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WifiRecord {
    pub rp_index: usize,
    pub location: Location,
    pub payload: Vec<RssiObservation>,
}

impl Persist for WifiDb {
    const KIND: &'static str = "wifi";
    type Record = WifiRecord;

    fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn records(&self) -> Vec<WifiRecord> {
        self.entries
            .iter()
            .map(|e| WifiRecord {
                rp_index: e.rp.index,
                location: e.rp.location,
                payload: e.observations.clone(),
            })
            .collect()
    }

    fn from_records(config_hash: String, seed: u64, records: Vec<WifiRecord>) -> Result<Self> {
        let survey = records
            .into_iter()
            .map(|r| {
                (
                    ReferencePoint {
                        index: r.rp_index,
                        location: r.location,
                    },
                    r.payload,
                )
            })
            .collect();
        build_wifi_db(survey, config_hash, seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRecord {
    pub location: Location,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_areas: Option<usize>,
    pub payload: Vec<ImageFeatures>,
    pub rssi: Vec<RssiObservation>,
}

impl Persist for ImageDb {
    const KIND: &'static str = "image";
    type Record = ImageRecord;

    fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn records(&self) -> Vec<ImageRecord> {
        let n_areas = self.area_index.as_ref().map(Vec::len);
        let mut areas = vec![None; self.entries.len()];
        if let Some(index) = &self.area_index {
            for (j, list) in index.iter().enumerate() {
                for &i in list {
                    areas[i] = Some(j);
                }
            }
        }
        self.entries
            .iter()
            .zip(areas)
            .map(|(e, area)| ImageRecord {
                location: e.location,
                area,
                n_areas,
                payload: e.features.clone(),
                rssi: e.rssi.clone(),
            })
            .collect()
    }

    fn from_records(config_hash: String, seed: u64, records: Vec<ImageRecord>) -> Result<Self> {
        let n_areas = records.first().and_then(|r| r.n_areas);
        if records.iter().any(|r| {
            r.n_areas != n_areas
                || r.area.is_some() != n_areas.is_some()
                || r.area.zip(n_areas).is_some_and(|(a, n)| a >= n)
        }) {
            return Err(Error::invalid("inconsistent area tags in image records"));
        }
        let areas: Vec<(Location, Option<usize>)> =
            records.iter().map(|r| (r.location, r.area)).collect();
        let entries = records
            .into_iter()
            .map(|r| ImageEntry {
                location: r.location,
                features: r.payload,
                rssi: r.rssi,
            })
            .collect();
        let mut db = ImageDb::new(entries, config_hash, seed)?;
        if let Some(n_areas) = n_areas {
            // Records are written in canonical order, so entry i is record i.
            let mut index = vec![Vec::new(); n_areas];
            for (i, (loc, area)) in areas.into_iter().enumerate() {
                if db.entries[i].location != loc {
                    return Err(Error::invalid("image records are not in canonical order"));
                }
                index[area.expect("checked above")].push(i);
            }
            db.area_index = Some(index);
        }
        Ok(db)
    }
}

pub fn save_db<T: Persist>(db: &T, path: &Path) -> Result<()> {
    envelope::save(db, path)
}

pub fn load_db<T: Persist>(path: &Path) -> Result<T> {
    envelope::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::sim::run_survey;
    use crate::types::Matrix;

    fn obs(v: f64) -> RssiObservation {
        RssiObservation::new(Matrix::from_row_major(1, 2, vec![v, v]).unwrap()).unwrap()
    }

    fn rp(index: usize) -> ReferencePoint {
        ReferencePoint {
            index,
            location: Location::new(index as f64, 0.0, 0.0),
        }
    }

    #[test]
    fn empty_survey_is_an_error() {
        assert!(matches!(
            build_wifi_db(vec![], "h".into(), 0),
            Err(Error::EmptyDatabase)
        ));
    }

    #[test]
    fn duplicate_rp_rejected() {
        let survey = vec![(rp(0), vec![obs(-50.0)]), (rp(0), vec![obs(-60.0)])];
        assert!(matches!(
            build_wifi_db(survey, "h".into(), 0),
            Err(Error::DuplicateRp(0))
        ));
    }

    #[test]
    fn shuffled_input_gives_identical_encoding() {
        let a = vec![
            (rp(0), vec![obs(-50.0)]),
            (rp(1), vec![obs(-60.0)]),
            (rp(2), vec![obs(-70.0)]),
        ];
        let mut b = a.clone();
        b.reverse();
        let ea = envelope::encode(&build_wifi_db(a, "h".into(), 0).unwrap()).unwrap();
        let eb = envelope::encode(&build_wifi_db(b, "h".into(), 0).unwrap()).unwrap();
        assert_eq!(ea, eb);
    }

    #[test]
    fn default_survey_sizes() {
        let out = run_survey(&ExperimentConfig::default()).unwrap();
        assert_eq!(out.wifi.n_rps(), 24);
        assert!(out.wifi.entries().iter().all(|e| e.observations.len() == 2));
        let index = out.images.area_index().unwrap();
        assert_eq!(index.len(), 15);
        assert_eq!(index.iter().map(Vec::len).sum::<usize>(), out.images.len());
        assert!(out.images.entries().iter().all(|e| e.features.len() == 2));
    }

    #[test]
    fn single_area_index_holds_everything() {
        let cfg = ExperimentConfig {
            area_grid: [1, 1],
            j_star: 1,
            ..ExperimentConfig::default()
        };
        let out = run_survey(&cfg).unwrap();
        let index = out.images.area_index().unwrap();
        assert_eq!(index, &[(0..out.images.len()).collect::<Vec<_>>()]);
    }

    #[test]
    fn restrict_to_all_and_one_area() {
        let out = run_survey(&ExperimentConfig::default()).unwrap();
        let all = CandidateSelection::new((0..15).collect(), vec![1.0 / 15.0; 15]).unwrap();
        assert_eq!(
            restrict_image_db(&out.images, &all).unwrap().len(),
            out.images.len()
        );
        let one = CandidateSelection::new(vec![7], vec![1.0]).unwrap();
        let view = restrict_image_db(&out.images, &one).unwrap();
        assert_eq!(
            view.indices(),
            out.images.area_index().unwrap()[7].as_slice()
        );
        let bad = CandidateSelection::new(vec![15], vec![1.0]).unwrap();
        assert!(matches!(
            restrict_image_db(&out.images, &bad),
            Err(Error::UnknownArea {
                index: 15,
                n_areas: 15
            })
        ));
    }

    #[test]
    fn entry_outside_areas_named() {
        let out = run_survey(&ExperimentConfig::default()).unwrap();
        let mut entries = out.images.entries().to_vec();
        entries[0].location.x = -3.0;
        let db = ImageDb::new(entries, "h".into(), 0).unwrap();
        match partition_image_db(db, &out.partition) {
            Err(Error::EntryOutsideAreas { index: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn both_kinds_round_trip_through_files() {
        let out = run_survey(&ExperimentConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let wp = dir.path().join("wifi.jsonl");
        let ip = dir.path().join("image.jsonl");
        save_db(&out.wifi, &wp).unwrap();
        save_db(&out.images, &ip).unwrap();
        assert_eq!(load_db::<WifiDb>(&wp).unwrap(), out.wifi);
        assert_eq!(load_db::<ImageDb>(&ip).unwrap(), out.images);
        assert!(matches!(
            load_db::<WifiDb>(&ip),
            Err(Error::KindMismatch { .. })
        ));
    }
}
