//! WiFi-only coarse stage: a softmax classifier over reference points,
//! aggregation of RP likelihoods into area likelihoods, and selection of the
//! most likely candidate areas.
//!
//! The classifier scores the per-AP mean RSSI. Inputs are standardized with
//! statistics from the training set before the linear layer; the
//! standardization is stored with the model so inference is self-contained.

use serde::{Deserialize, Serialize};

use crate::db::WifiDb;
use crate::envelope::Persist;
use crate::error::{Error, Result};
use crate::geometry::Location;
use crate::partition::AreaPartition;
use crate::types::{CandidateSelection, LikelihoodVector, Matrix, ReferencePoint, RssiObservation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoarseHyperParams {
    /// L2 penalty on the non-bias weights.
    pub lambda: f64,
    pub max_iterations: usize,
    /// Stop once the gradient norm drops below this.
    pub grad_tol: f64,
    /// Fixed gradient step. `None` derives `1 / L` from the data, where `L`
    /// bounds the curvature of the objective.
    pub step: Option<f64>,
    /// Record the training loss every this many iterations.
    pub checkpoint_every: usize,
}

impl Default for CoarseHyperParams {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            max_iterations: 5000,
            grad_tol: 1e-6,
            step: None,
            checkpoint_every: 100,
        }
    }
}

impl CoarseHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.grad_tol >= 0.0) || self.checkpoint_every == 0 {
            return Err(Error::Config(
                "coarse lambda and grad_tol must be >= 0 and checkpoint_every positive".into(),
            ));
        }
        if let Some(s) = self.step {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Config("coarse step must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseTrainingMeta {
    pub iterations: usize,
    pub final_loss: f64,
    pub step: f64,
    /// `(iteration, loss)` pairs, non-increasing in loss.
    pub checkpoints: Vec<(usize, f64)>,
}

/// Linear softmax classifier over reference points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpClassifierModel {
    /// `N_RP x (N_AP + 1)`; the last column multiplies the bias input.
    pub weights: Matrix,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub meta: CoarseTrainingMeta,
}

impl RpClassifierModel {
    pub fn n_rps(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_aps(&self) -> usize {
        self.weights.cols() - 1
    }

    /// A model that ignores its input and returns the uniform distribution.
    pub fn zeros(n_rps: usize, n_aps: usize) -> Self {
        Self {
            weights: Matrix::zeros(n_rps, n_aps + 1),
            feature_mean: vec![0.0; n_aps],
            feature_scale: vec![1.0; n_aps],
            meta: CoarseTrainingMeta {
                iterations: 0,
                final_loss: 0.0,
                step: 0.0,
                checkpoints: Vec::new(),
            },
        }
    }

    fn standardize(&self, feature: &mut [f64]) {
        let n = self.feature_mean.len();
        for ((v, m), s) in feature[..n]
            .iter_mut()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
        {
            *v = (*v - m) / s;
        }
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights.iter_rows().map(|w| dot(w, x)).collect()
    }
}

/// Column means of the sample block followed by a constant 1.
pub fn featurize(obs: &RssiObservation) -> Vec<f64> {
    let mut f = obs.samples().column_means();
    f.push(1.0);
    f
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean cross-entropy plus `lambda / 2` times the squared non-bias weights,
/// with its gradient. `inputs` rows already include the trailing bias 1.
pub fn softmax_loss_and_grad(
    weights: &Matrix,
    inputs: &[Vec<f64>],
    labels: &[usize],
    lambda: f64,
) -> (f64, Matrix) {
    let (k, d) = (weights.rows(), weights.cols());
    let n = inputs.len() as f64;
    let mut grad = Matrix::zeros(k, d);
    let mut loss = 0.0;
    let mut probs = vec![0.0; k];
    for (x, &y) in inputs.iter().zip(labels) {
        for (p, w) in probs.iter_mut().zip(weights.iter_rows()) {
            *p = dot(w, x);
        }
        let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max).exp();
            sum += *p;
        }
        // -log softmax_y = log(sum) - (s_y - max)
        loss += sum.ln() - (dot(weights.row(y), x) - max);
        for (c, p) in probs.iter().enumerate() {
            let coeff = p / sum - if c == y { 1.0 } else { 0.0 };
            for (g, xi) in grad.row_mut(c).iter_mut().zip(x) {
                *g += coeff * xi;
            }
        }
    }
    loss /= n;
    grad.as_mut_slice().iter_mut().for_each(|g| *g /= n);
    for c in 0..k {
        let w = weights.row(c)[..d - 1].to_vec();
        let g = &mut grad.row_mut(c)[..d - 1];
        for (gi, wi) in g.iter_mut().zip(&w) {
            *gi += lambda * wi;
        }
        loss += 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    }
    (loss, grad)
}

/// Curvature bound of the objective: half the mean squared input norm (a
/// bound on the softmax cross-entropy Hessian) plus the ridge term.
pub fn curvature_bound(inputs: &[Vec<f64>], lambda: f64) -> f64 {
    let mean_sq = inputs.iter().map(|x| dot(x, x)).sum::<f64>() / inputs.len() as f64;
    0.5 * mean_sq + lambda
}

/// Full-batch gradient descent from zero weights at a fixed step.
pub fn fit_softmax(
    inputs: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    hyper: &CoarseHyperParams,
) -> Result<(Matrix, CoarseTrainingMeta)> {
    let d = inputs.first().map_or(0, Vec::len);
    if inputs.is_empty() || d == 0 || inputs.len() != labels.len() {
        return Err(Error::invalid(
            "classifier needs matching, non-empty inputs and labels",
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let step = hyper
        .step
        .unwrap_or_else(|| 1.0 / curvature_bound(inputs, hyper.lambda));
    let mut w = Matrix::zeros(n_classes, d);
    let mut checkpoints = Vec::new();
    let mut iterations = 0;
    let mut loss;
    loop {
        let (l, grad) = softmax_loss_and_grad(&w, inputs, labels, hyper.lambda);
        loss = l;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                stage: "coarse classifier",
                at: format!("iteration {iterations}"),
            });
        }
        if iterations % hyper.checkpoint_every == 0 {
            checkpoints.push((iterations, loss));
        }
        let grad_norm = dot(grad.as_slice(), grad.as_slice()).sqrt();
        if grad_norm < hyper.grad_tol || iterations >= hyper.max_iterations {
            break;
        }
        for (wi, gi) in w.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *wi -= step * gi;
        }
        iterations += 1;
    }
    if checkpoints.last().map(|c| c.0) != Some(iterations) {
        checkpoints.push((iterations, loss));
    }
    Ok((
        w,
        CoarseTrainingMeta {
            iterations,
            final_loss: loss,
            step,
            checkpoints,
        },
    ))
}

/// Trains the RP classifier on every recorded round of the WiFi database.
pub fn train_classifier(db: &WifiDb, hyper: &CoarseHyperParams) -> Result<RpClassifierModel> {
    hyper.validate()?;
    if db.n_rps() < 2 {
        return Err(Error::invalid(
            "classifier needs at least two reference points",
        ));
    }
    let mut raw = Vec::new();
    let mut labels = Vec::new();
    for e in db.entries() {
        for o in &e.observations {
            raw.push(featurize(o));
            labels.push(e.rp.index);
        }
    }
    let n_aps = raw[0].len() - 1;
    let n = raw.len() as f64;
    let mut mean = vec![0.0; n_aps];
    for x in &raw {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; n_aps];
    for x in &raw {
        for ((s, v), m) in scale.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in scale.iter_mut() {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let mut model = RpClassifierModel {
        weights: Matrix::zeros(0, 0),
        feature_mean: mean,
        feature_scale: scale,
        meta: RpClassifierModel::zeros(0, 0).meta,
    };
    for x in raw.iter_mut() {
        model.standardize(x);
    }
    let (weights, meta) = fit_softmax(&raw, &labels, db.n_rps(), hyper)?;
    model.weights = weights;
    model.meta = meta;
    Ok(model)
}

/// Likelihood of each reference point given an observation.
pub fn rp_likelihoods(
    obs: &RssiObservation,
    model: &RpClassifierModel,
) -> Result<LikelihoodVector> {
    if obs.n_aps() != model.n_aps() || model.feature_mean.len() != model.n_aps() {
        return Err(Error::shape(format!("{} APs", model.n_aps()), obs.n_aps()));
    }
    let mut x = featurize(obs);
    model.standardize(&mut x);
    LikelihoodVector::softmax(&model.scores(&x))
}

/// Sums RP likelihoods within each area.
pub fn area_likelihoods(
    p_rp: &LikelihoodVector,
    partition: &AreaPartition,
) -> Result<LikelihoodVector> {
    if p_rp.len() != partition.n_rps() {
        return Err(Error::shape(
            format!("{} RP likelihoods", partition.n_rps()),
            p_rp.len(),
        ));
    }
    let mut p_a = vec![0.0; partition.n_areas()];
    for (i, p) in p_rp.as_slice().iter().enumerate() {
        p_a[partition.membership(i)] += p;
    }
    LikelihoodVector::new(p_a)
}

/// The `j_star` most likely areas, most likely first; ties go to the lower
/// area index.
pub fn select_candidate_areas(p_a: &LikelihoodVector, j_star: usize) -> Result<CandidateSelection> {
    if j_star == 0 || j_star > p_a.len() {
        return Err(Error::invalid(format!(
            "j_star {j_star} outside [1, {}]",
            p_a.len()
        )));
    }
    let p = p_a.as_slice();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order.truncate(j_star);
    let probs = order.iter().map(|&j| p[j]).collect();
    CandidateSelection::new(order, probs)
}

/// RSSI observation to candidate areas.
pub fn coarse_localize(
    obs: &RssiObservation,
    model: &RpClassifierModel,
    partition: &AreaPartition,
    j_star: usize,
) -> Result<CandidateSelection> {
    let p_rp = rp_likelihoods(obs, model)?;
    let p_a = area_likelihoods(&p_rp, partition)?;
    select_candidate_areas(&p_a, j_star)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Likelihood-weighted mean of RP locations.
    #[default]
    Centroid,
    /// Location of the most likely RP.
    ArgMax,
}

/// Estimate from RP likelihoods alone.
pub fn wifi_only_estimate(
    p_rp: &LikelihoodVector,
    rps: &[ReferencePoint],
    mode: BaselineMode,
) -> Result<Location> {
    if p_rp.len() != rps.len() {
        return Err(Error::shape(
            format!("{} RP likelihoods", rps.len()),
            p_rp.len(),
        ));
    }
    Ok(match mode {
        BaselineMode::ArgMax => rps[p_rp.argmax()].location,
        BaselineMode::Centroid => {
            let mut acc = [0.0; 3];
            for (p, rp) in p_rp.as_slice().iter().zip(rps) {
                for (a, c) in acc.iter_mut().zip(rp.location.to_array()) {
                    *a += p * c;
                }
            }
            Location::from_array(acc)
        }
    })
}

/// WiFi-only localization: classify, then average RP locations.
pub fn baseline_wifi_only(
    obs: &RssiObservation,
    model: &RpClassifierModel,
    rps: &[ReferencePoint],
    mode: BaselineMode,
) -> Result<Location> {
    wifi_only_estimate(&rp_likelihoods(obs, model)?, rps, mode)
}

/// Everything the coarse stage needs at inference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseModel {
    pub classifier: RpClassifierModel,
    pub rps: Vec<ReferencePoint>,
    pub partition: AreaPartition,
    pub j_star: usize,
    pub config_hash: String,
    pub seed: u64,
}

impl CoarseModel {
    pub fn localize(&self, obs: &RssiObservation) -> Result<CandidateSelection> {
        coarse_localize(obs, &self.classifier, &self.partition, self.j_star)
    }

    pub fn baseline(&self, obs: &RssiObservation, mode: BaselineMode) -> Result<Location> {
        baseline_wifi_only(obs, &self.classifier, &self.rps, mode)
    }
}

impl Persist for CoarseModel {
    const KIND: &'static str = "coarse_model";
    type Record = CoarseModel;

    fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn records(&self) -> Vec<CoarseModel> {
        vec![self.clone()]
    }

    fn from_records(config_hash: String, seed: u64, records: Vec<CoarseModel>) -> Result<Self> {
        let [model]: [CoarseModel; 1] = records
            .try_into()
            .map_err(|_| Error::invalid("coarse model file must hold exactly one record"))?;
        if model.config_hash != config_hash || model.seed != seed {
            return Err(Error::HashMismatch {
                left: config_hash,
                right: model.config_hash,
            });
        }
        Ok(model)
    }
}
