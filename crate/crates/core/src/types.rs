//! Observation containers and probability vectors shared across the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Location;

/// Lowest RSSI the simulator or a receiver can report, in dBm.
pub const RSSI_FLOOR_DBM: f64 = -120.0;
/// Highest RSSI accepted, in dBm.
pub const RSSI_CEIL_DBM: f64 = 0.0;
/// Tolerance on the unit sum of a probability vector.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Dense row-major matrix. Serialized as an array of row arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{rows}x{cols} = {} values", rows * cols),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::shape(
                    format!("row {i} with {n_cols} columns"),
                    format!("{} columns", row.len()),
                ));
            }
            data.extend(row);
        }
        Ok(Self {
            rows: n_rows,
            cols: n_cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a 0-column matrix has no meaningful rows to visit.
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Mean of every column.
    pub fn column_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        let n = self.rows as f64;
        sums.into_iter().map(|s| s / n).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.iter_rows().map(<[f64]>::to_vec).collect()
    }
}

/// A block of `N_s` RSSI samples from `N_AP` access points, in dBm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct RssiObservation {
    samples: Matrix,
}

impl RssiObservation {
    pub fn new(samples: Matrix) -> Result<Self> {
        if samples.rows() == 0 || samples.cols() == 0 {
            return Err(Error::invalid(
                "RSSI observation must have at least one sample and one AP",
            ));
        }
        if let Some(bad) = samples
            .as_slice()
            .iter()
            .find(|v| !v.is_finite() || **v < RSSI_FLOOR_DBM || **v > RSSI_CEIL_DBM)
        {
            return Err(Error::invalid(format!(
                "RSSI value {bad} outside [{RSSI_FLOOR_DBM}, {RSSI_CEIL_DBM}] dBm"
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn n_samples(&self) -> usize {
        self.samples.rows()
    }

    pub fn n_aps(&self) -> usize {
        self.samples.cols()
    }

    pub fn check_shape(&self, n_s: usize, n_ap: usize) -> Result<()> {
        if self.n_samples() != n_s || self.n_aps() != n_ap {
            return Err(Error::shape(
                format!("{n_s}x{n_ap} RSSI block"),
                format!("{}x{}", self.n_samples(), self.n_aps()),
            ));
        }
        Ok(())
    }
}

impl TryFrom<Matrix> for RssiObservation {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        RssiObservation::new(m)
    }
}

impl From<RssiObservation> for Matrix {
    fn from(o: RssiObservation) -> Self {
        o.samples
    }
}

/// Camera metadata plus the dimension of the per-image feature vector.
///
/// Pixel dimensions are carried for bookkeeping only; the pipeline consumes
/// `feature_dim`-wide vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageFeatureSpec {
    pub n_p: usize,
    pub n_w: usize,
    pub n_l: usize,
    pub n_rgb: usize,
    pub feature_dim: usize,
}

impl ImageFeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_p == 0
            || self.n_w == 0
            || self.n_l == 0
            || self.n_rgb == 0
            || self.feature_dim == 0
        {
            return Err(Error::Config(
                "image spec fields n_p, n_w, n_l, n_rgb, feature_dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ImageFeatureSpec {
    fn default() -> Self {
        Self {
            n_p: 104,
            n_w: 752,
            n_l: 780,
            n_rgb: 1,
            feature_dim: 32,
        }
    }
}

/// `N_p` feature vectors, one per query image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatures {
    features: Matrix,
    spec: ImageFeatureSpec,
}

impl ImageFeatures {
    pub fn new(features: Matrix, spec: ImageFeatureSpec) -> Result<Self> {
        spec.validate()?;
        if features.rows() != spec.n_p || features.cols() != spec.feature_dim {
            return Err(Error::shape(
                format!("{}x{} feature block", spec.n_p, spec.feature_dim),
                format!("{}x{}", features.rows(), features.cols()),
            ));
        }
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite image feature"));
        }
        Ok(Self { features, spec })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn spec(&self) -> &ImageFeatureSpec {
        &self.spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub index: usize,
    pub location: Location,
}

/// A probability vector over reference points or areas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LikelihoodVector {
    probs: Vec<f64>,
}

impl LikelihoodVector {
    /// Accepts `probs` only if it already lies on the simplex.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::check_entries(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("likelihoods sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Rescales nonnegative weights to unit sum.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        Self::check_entries(&weights)?;
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::invalid("cannot normalize an all-zero vector"));
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("empty likelihood vector"));
        }
        Ok(Self {
            probs: vec![1.0 / k as f64; k],
        })
    }

    /// Softmax of raw scores, shifted by the max for stability.
    pub fn softmax(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::invalid("empty score vector"));
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::invalid("non-finite classifier score"));
        }
        let mut probs: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= sum);
        Ok(Self { probs })
    }

    fn check_entries(probs: &[f64]) -> Result<()> {
        if probs.is_empty() {
            return Err(Error::invalid("empty likelihood vector"));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::invalid(format!("invalid likelihood entry {bad}")));
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest entry; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for LikelihoodVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        LikelihoodVector::new(v)
    }
}

impl From<LikelihoodVector> for Vec<f64> {
    fn from(l: LikelihoodVector) -> Self {
        l.probs
    }
}

/// The retained candidate areas, in descending-probability order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSelection {
    area_indices: Vec<usize>,
    probs: Vec<f64>,
}

impl CandidateSelection {
    pub fn new(area_indices: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if area_indices.is_empty() {
            return Err(Error::invalid("candidate selection must not be empty"));
        }
        if area_indices.len() != probs.len() {
            return Err(Error::shape(
                format!("{} probabilities", area_indices.len()),
                probs.len(),
            ));
        }
        let mut seen = area_indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("candidate selection repeats an area"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(
                "candidate probabilities must be finite and nonnegative",
            ));
        }
        Ok(Self {
            area_indices,
            probs,
        })
    }

    pub fn area_indices(&self) -> &[usize] {
        &self.area_indices
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.area_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.area_indices.is_empty()
    }

    pub fn contains(&self, area: usize) -> bool {
        self.area_indices.contains(&area)
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }
}
