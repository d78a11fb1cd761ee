//! Fine stage: regress a location from pooled image features, trained under
//! the likelihood-weighted squared error and constrained to the candidate
//! areas chosen by the coarse stage.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::coarse::CoarseModel;
use crate::db::ImageDb;
use crate::envelope::Persist;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Location};
use crate::partition::AreaPartition;
use crate::rng::{stream, StreamDomain};
use crate::types::{CandidateSelection, ImageFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineHyperParams {
    /// Widths of the two tanh hidden layers.
    pub hidden: [usize; 2],
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weights start as `Normal(0, init_scale / sqrt(fan_in))`.
    pub init_scale: f64,
    /// Skip samples whose true area the coarse stage did not select.
    pub drop_missed_areas: bool,
}

impl Default for FineHyperParams {
    fn default() -> Self {
        Self {
            hidden: [64, 64],
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 3000,
            init_scale: 0.1,
            drop_missed_areas: false,
        }
    }
}

impl FineHyperParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hidden.iter().all(|h| *h > 0)
            && self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.batch_size > 0
            && self.init_scale >= 0.0;
        if !ok {
            return Err(Error::Config("invalid fine-stage hyperparameters".into()));
        }
        Ok(())
    }
}

/// Per-column mean over the `N_p` feature rows.
pub fn pool_features(img: &ImageFeatures) -> Vec<f64> {
    img.features().column_means()
}

fn check_selection(selection: &CandidateSelection) -> Result<f64> {
    if selection.probs().iter().any(|p| *p <= 0.0) {
        return Err(Error::invalid(
            "candidate area with zero likelihood has undefined loss weight",
        ));
    }
    Ok(selection.max_prob())
}

/// `min_j |pred - truth|^2 / p_j` over the retained areas. The numerator does
/// not depend on `j`, so the minimum divides by the largest retained
/// probability.
pub fn joint_loss(
    pred: &Location,
    truth: &Location,
    selection: &CandidateSelection,
) -> Result<f64> {
    let max_p = check_selection(selection)?;
    Ok(pred.distance_squared(truth) / max_p)
}

/// Gradient of [`joint_loss`] with respect to `pred`, treating the coarse
/// probabilities as constants.
pub fn loss_gradient(
    pred: &Location,
    truth: &Location,
    selection: &CandidateSelection,
) -> Result<[f64; 3]> {
    let max_p = check_selection(selection)?;
    let scale = 2.0 / max_p;
    Ok([
        scale * (pred.x - truth.x),
        scale * (pred.y - truth.y),
        scale * (pred.z - truth.z),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTrainingMeta {
    pub epochs: usize,
    pub samples: usize,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Tanh MLP mapping pooled features to a location.
///
/// `params` holds, for each layer in order, the row-major weight matrix
/// (`out x in`) followed by the bias vector. The linear output is an offset
/// in units of the floor half-extent around the floor center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
    pub output_center: [f64; 3],
    pub output_scale: [f64; 3],
    pub meta: FineTrainingMeta,
}

struct Forward {
    /// Activations per layer, input first, output last.
    acts: Vec<Vec<f64>>,
}

impl RegressorModel {
    /// Randomly initialized network with outputs centered on `floor`.
    pub fn new(
        feature_dim: usize,
        hidden: [usize; 2],
        floor: &Aabb,
        init_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let sizes = vec![feature_dim, hidden[0], hidden[1], 3];
        let mut params = Vec::with_capacity(param_count(&sizes));
        let mut rng = stream(seed, StreamDomain::FineInit, 0);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = init_scale / (fan_in as f64).sqrt();
            if std > 0.0 {
                let normal =
                    Normal::new(0.0, std).map_err(|e| Error::Config(format!("init: {e}")))?;
                params.extend((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)));
            } else {
                params.extend(std::iter::repeat_n(0.0, fan_in * fan_out));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        let c = floor.center();
        let [ex, ey, ez] = floor.extent();
        Ok(Self {
            sizes,
            params,
            output_center: c.to_array(),
            output_scale: [0.5 * ex, 0.5 * ey, 0.5 * ez],
            meta: FineTrainingMeta {
                epochs: 0,
                samples: 0,
                loss_curve: Vec::new(),
            },
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let mut off = 0;
        let n_layers = self.sizes.len() - 1;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &acts[l];
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let z = b[o]
                        + w[o * n_in..(o + 1) * n_in]
                            .iter()
                            .zip(input)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    if l + 1 < n_layers {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        Forward { acts }
    }

    fn to_location(&self, out: &[f64]) -> Location {
        Location::new(
            self.output_center[0] + self.output_scale[0] * out[0],
            self.output_center[1] + self.output_scale[1] * out[1],
            self.output_center[2] + self.output_scale[2] * out[2],
        )
    }

    /// Unconstrained network output for a pooled feature vector.
    pub fn predict(&self, pooled: &[f64]) -> Result<Location> {
        if pooled.len() != self.feature_dim() {
            return Err(Error::shape(
                format!("{} features", self.feature_dim()),
                pooled.len(),
            ));
        }
        let f = self.forward(pooled);
        Ok(self.to_location(f.acts.last().expect("output layer")))
    }

    /// Accumulates `scale * dL/dparams` for one sample into `grad`, given
    /// the gradient of the loss with respect to the predicted location.
    fn backward(&self, f: &Forward, d_loc: [f64; 3], scale: f64, grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let mut delta: Vec<f64> = (0..3)
            .map(|k| scale * d_loc[k] * self.output_scale[k])
            .collect();
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &f.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                for (p, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wv;
                }
            }
            // Hidden activations are tanh, whose derivative is 1 - a^2.
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    pub fn loss_curve_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (e, l) in self.meta.loss_curve.iter().enumerate() {
            s.push_str(&format!("{},{}\n", e + 1, l));
        }
        s
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// One supervised example for the fine stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub pooled_features: Vec<f64>,
    pub true_location: Location,
    pub selection: CandidateSelection,
    /// `1 / max(selection probs)`.
    pub weight: f64,
}

impl TrainingSample {
    pub fn new(
        pooled_features: Vec<f64>,
        true_location: Location,
        selection: CandidateSelection,
    ) -> Result<Self> {
        let weight = 1.0 / check_selection(&selection)?;
        Ok(Self {
            pooled_features,
            true_location,
            selection,
            weight,
        })
    }
}

/// Pairs every image round with the coarse selection computed from the RSSI
/// recorded alongside it.
pub fn prepare_samples(
    db: &ImageDb,
    coarse: &CoarseModel,
    drop_missed_areas: bool,
) -> Result<Vec<TrainingSample>> {
    let mut samples = Vec::new();
    for e in db.entries() {
        let true_area = coarse.partition.locate(&e.location);
        for (img, rssi) in e.features.iter().zip(&e.rssi) {
            let selection = coarse.localize(rssi)?;
            if drop_missed_areas && !true_area.is_some_and(|a| selection.contains(a)) {
                continue;
            }
            samples.push(TrainingSample::new(
                pool_features(img),
                e.location,
                selection,
            )?);
        }
    }
    Ok(samples)
}

/// Mean joint loss over `samples` and its gradient with respect to every
/// network parameter.
pub fn batch_loss_and_grad(model: &RegressorModel, samples: &[&TrainingSample]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.n_params()];
    let loss = accumulate(model, samples, &mut grad);
    (loss, grad)
}

fn accumulate(model: &RegressorModel, samples: &[&TrainingSample], grad: &mut [f64]) -> f64 {
    let inv_n = 1.0 / samples.len() as f64;
    let mut loss = 0.0;
    for s in samples {
        let f = model.forward(&s.pooled_features);
        let pred = model.to_location(f.acts.last().expect("output layer"));
        let diff = [
            pred.x - s.true_location.x,
            pred.y - s.true_location.y,
            pred.z - s.true_location.z,
        ];
        loss += s.weight * (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]);
        let d_loc = diff.map(|d| 2.0 * s.weight * d);
        model.backward(&f, d_loc, inv_n, grad);
    }
    loss * inv_n
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, hyper: &FineHyperParams) -> Self {
        Self {
            lr: hyper.learning_rate,
            beta1: hyper.beta1,
            beta2: hyper.beta2,
            epsilon: hyper.epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Mini-batch Adam on the mean joint loss.
pub fn train_fine(
    samples: &[TrainingSample],
    floor: &Aabb,
    hyper: &FineHyperParams,
    seed: u64,
) -> Result<RegressorModel> {
    hyper.validate()?;
    if samples.len() < 10 {
        return Err(Error::invalid(format!(
            "fine stage needs at least 10 training samples, got {}",
            samples.len()
        )));
    }
    let dim = samples[0].pooled_features.len();
    if let Some(i) = samples.iter().position(|s| s.pooled_features.len() != dim) {
        return Err(Error::shape(
            format!("{dim} pooled features"),
            format!("sample {i}"),
        ));
    }
    let mut model = RegressorModel::new(dim, hyper.hidden, floor, hyper.init_scale, seed)?;
    train_from(&mut model, samples, hyper, seed)?;
    Ok(model)
}

/// Continues training `model` in place.
pub fn train_from(
    model: &mut RegressorModel,
    samples: &[TrainingSample],
    hyper: &FineHyperParams,
    seed: u64,
) -> Result<()> {
    let mut adam = Adam::new(model.n_params(), hyper);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = stream(seed, StreamDomain::FineShuffle, 0);
    let mut grad = vec![0.0; model.n_params()];
    let mut batch: Vec<&TrainingSample> = Vec::with_capacity(hyper.batch_size);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(hyper.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &samples[i]));
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = accumulate(model, &batch, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    stage: "fine regressor",
                    at: format!("epoch {} batch {b}", epoch + 1),
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut model.params, &grad);
        }
        model
            .meta
            .loss_curve
            .push(epoch_loss / samples.len() as f64);
    }
    model.meta.epochs += hyper.epochs;
    model.meta.samples = samples.len();
    Ok(())
}

/// Moves `pred` to the nearest point of the union of selected areas. Ties
/// between boxes go to the lower area index.
pub fn project_to_area(
    pred: &Location,
    selection: &CandidateSelection,
    partition: &AreaPartition,
) -> Result<Location> {
    let mut areas = selection.area_indices().to_vec();
    areas.sort_unstable();
    let mut best: Option<(f64, Location)> = None;
    for j in areas {
        let area = partition.area(j).ok_or(Error::UnknownArea {
            index: j,
            n_areas: partition.n_areas(),
        })?;
        if area.contains(pred) {
            return Ok(*pred);
        }
        let q = area.clamp(pred);
        let d = q.distance_squared(pred);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, q));
        }
    }
    best.map(|(_, q)| q)
        .ok_or_else(|| Error::invalid("candidate selection must not be empty"))
}

/// Features to a location inside the candidate areas.
pub fn fine_localize(
    img: &ImageFeatures,
    model: &RegressorModel,
    selection: &CandidateSelection,
    partition: &AreaPartition,
) -> Result<Location> {
    let pred = model.predict(&pool_features(img))?;
    project_to_area(&pred, selection, partition)
}

/// Trained regressor plus provenance, as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineModel {
    pub regressor: RegressorModel,
    pub config_hash: String,
    pub seed: u64,
}

impl Persist for FineModel {
    const KIND: &'static str = "fine_model";
    type Record = FineModel;

    fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn records(&self) -> Vec<FineModel> {
        vec![self.clone()]
    }

    fn from_records(config_hash: String, seed: u64, records: Vec<FineModel>) -> Result<Self> {
        let [model]: [FineModel; 1] = records
            .try_into()
            .map_err(|_| Error::invalid("fine model file must hold exactly one record"))?;
        if model.config_hash != config_hash || model.seed != seed {
            return Err(Error::HashMismatch {
                left: config_hash,
                right: model.config_hash,
            });
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::make_grid_partition;
    use crate::types::{ImageFeatureSpec, Matrix, ReferencePoint};

    fn sel(areas: &[usize], probs: &[f64]) -> CandidateSelection {
        CandidateSelection::new(areas.to_vec(), probs.to_vec()).unwrap()
    }

    #[test]
    fn pooling_single_row_and_antisymmetric_rows() {
        let spec = ImageFeatureSpec {
            n_p: 1,
            feature_dim: 3,
            ..ImageFeatureSpec::default()
        };
        let img = ImageFeatures::new(Matrix::from_rows(vec![vec![1.0, -2.0, 0.5]]).unwrap(), spec)
            .unwrap();
        assert_eq!(pool_features(&img), vec![1.0, -2.0, 0.5]);
        let spec2 = ImageFeatureSpec { n_p: 2, ..spec };
        let img2 = ImageFeatures::new(
            Matrix::from_rows(vec![vec![1.0, -2.0, 0.5], vec![-1.0, 2.0, -0.5]]).unwrap(),
            spec2,
        )
        .unwrap();
        assert_eq!(pool_features(&img2), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn loss_zero_at_truth_and_hand_value() {
        let t = Location::new(1.0, 2.0, 3.0);
        let s = sel(&[3, 1, 2], &[0.5, 0.25, 0.25]);
        assert_eq!(joint_loss(&t, &t, &s).unwrap(), 0.0);
        let p = Location::new(2.0, 2.0, 3.0);
        assert_eq!(joint_loss(&p, &t, &s).unwrap(), 2.0);
        assert_eq!(loss_gradient(&t, &t, &s).unwrap(), [0.0; 3]);
        assert_eq!(loss_gradient(&p, &t, &s).unwrap(), [4.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_probability_is_an_error() {
        let t = Location::new(0.0, 0.0, 0.0);
        assert!(joint_loss(&t, &t, &sel(&[0, 1], &[1.0, 0.0])).is_err());
        assert!(loss_gradient(&t, &t, &sel(&[0, 1], &[1.0, 0.0])).is_err());
    }

    fn unit_partition() -> AreaPartition {
        let floor = Aabb::new(Location::new(0.0, 0.0, 0.0), Location::new(3.0, 1.0, 1.0));
        let rps = vec![ReferencePoint {
            index: 0,
            location: Location::new(0.5, 0.5, 0.5),
        }];
        make_grid_partition(&floor, 3, 1, &rps).unwrap()
    }

    #[test]
    fn projection_identity_inside_and_clamp_outside() {
        let p = unit_partition();
        let inside = Location::new(0.3, 0.3, 0.3);
        assert_eq!(
            project_to_area(&inside, &sel(&[0], &[1.0]), &p).unwrap(),
            inside
        );
        let out = Location::new(2.0, 0.5, 0.5);
        assert_eq!(
            project_to_area(&out, &sel(&[0], &[1.0]), &p).unwrap(),
            Location::new(1.0, 0.5, 0.5)
        );
    }

    #[test]
    fn projection_tie_goes_to_lower_area() {
        let p = unit_partition();
        // Equidistant from area 0 (x <= 1) and area 2 (x >= 2) when pushed out in y.
        let q = Location::new(1.5, 2.0, 0.5);
        let r = project_to_area(&q, &sel(&[2, 0], &[0.6, 0.4]), &p).unwrap();
        assert_eq!(r, Location::new(1.0, 1.0, 0.5));
    }

    #[test]
    fn zero_model_predicts_floor_center() {
        let floor = Aabb::new(Location::new(0.0, 0.0, 0.0), Location::new(3.0, 1.0, 1.0));
        let m = RegressorModel::new(4, [5, 5], &floor, 0.0, 1).unwrap();
        assert_eq!(m.predict(&[0.3, 0.1, -2.0, 4.0]).unwrap(), floor.center());
        let spec = ImageFeatureSpec {
            n_p: 2,
            feature_dim: 4,
            ..ImageFeatureSpec::default()
        };
        let img = ImageFeatures::new(Matrix::zeros(2, 4), spec).unwrap();
        let got = fine_localize(&img, &m, &sel(&[0], &[1.0]), &unit_partition()).unwrap();
        assert_eq!(got, Location::new(1.0, 0.5, 0.5));
    }

    #[test]
    fn too_few_samples_rejected() {
        let floor = Aabb::new(Location::new(0.0, 0.0, 0.0), Location::new(3.0, 1.0, 1.0));
        let s = TrainingSample::new(vec![0.0; 2], floor.center(), sel(&[0], &[1.0])).unwrap();
        let samples = vec![s; 9];
        assert!(train_fine(&samples, &floor, &FineHyperParams::default(), 1).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let hyper = FineHyperParams::default();
        let mut adam = Adam::new(2, &hyper);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[0.5, -3.0]);
        assert!((p[0] - (1.0 - 1e-4)).abs() < 1e-10);
        assert!((p[1] - (-1.0 + 1e-4)).abs() < 1e-10);
    }
}
