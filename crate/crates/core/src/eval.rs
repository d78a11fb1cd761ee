//! Experiment harness: builds databases, trains both stages, and evaluates
//! the joint pipeline against the WiFi-only baseline on held-out queries.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coarse::{train_classifier, BaselineMode, CoarseModel};
use crate::config::ExperimentConfig;
use crate::envelope::Persist;
use crate::error::{Error, Result};
use crate::fine::{fine_localize, prepare_samples, train_fine, FineModel};
use crate::geometry::Location;
use crate::rng::{stream, StreamDomain};
use crate::sim::{run_survey, uniform_in, Environment, SurveyOutput};
use crate::types::{ImageFeatures, RssiObservation};

pub const WIFI_ONLY: &str = "wifi_only";
pub const JOINT: &str = "joint";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub threshold: f64,
    pub fraction: f64,
}

/// Fraction of errors at or below each threshold.
pub fn error_cdf(errors: &[f64], thresholds: &[f64]) -> Result<Vec<CdfPoint>> {
    if errors.is_empty() {
        return Err(Error::invalid("error CDF of an empty error list"));
    }
    if errors.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::invalid("localization errors must be nonnegative"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| CdfPoint {
            threshold: t,
            fraction: sorted.partition_point(|e| *e <= t) as f64 / n,
        })
        .collect())
}

/// Thresholds from 0 to `max` meters in `step` increments.
pub fn threshold_grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).ceil() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub errors: Vec<f64>,
    pub median_error: f64,
    pub mean_error: f64,
    pub cdf: Vec<CdfPoint>,
}

impl MethodResult {
    fn new(method: &str, errors: Vec<f64>, thresholds: &[f64]) -> Result<Self> {
        Ok(Self {
            method: method.to_string(),
            median_error: median(&errors),
            mean_error: mean(&errors),
            cdf: error_cdf(&errors, thresholds)?,
            errors,
        })
    }
}

/// Wall-clock per-query timing in seconds. Never part of the report JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub wifi_only_median: f64,
    pub wifi_only_mean: f64,
    pub joint_median: f64,
    pub joint_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub config_hash: String,
    pub rp_spacing: f64,
    pub n_rp: usize,
    pub n_areas: usize,
    pub n_queries: usize,
    pub methods: Vec<MethodResult>,
    /// Fraction of queries whose true area is among the selected candidates.
    pub containment_rate: f64,
    pub held_out_disjoint: bool,
    pub fine_final_loss: f64,
    pub warnings: Vec<String>,
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub latency: Option<LatencyStats>,
}

impl EvaluationReport {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn median_of(&self, name: &str) -> f64 {
        self.method(name).map_or(f64::NAN, |m| m.median_error)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `threshold,<method>...` rows.
    pub fn cdf_csv(&self) -> String {
        let mut s = String::from("threshold");
        for m in &self.methods {
            s.push(',');
            s.push_str(&m.method);
        }
        s.push('\n');
        let Some(first) = self.methods.first() else {
            return s;
        };
        for (i, p) in first.cdf.iter().enumerate() {
            s.push_str(&p.threshold.to_string());
            for m in &self.methods {
                s.push(',');
                s.push_str(&m.cdf[i].fraction.to_string());
            }
            s.push('\n');
        }
        s
    }

    /// Step plot of every method's error CDF.
    pub fn cdf_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const PAD: f64 = 50.0;
        const COLORS: [&str; 4] = ["#2ca02c", "#d62728", "#1f77b4", "#ff7f0e"];
        let x_max = self
            .methods
            .iter()
            .flat_map(|m| m.cdf.last().map(|p| p.threshold))
            .fold(1.0_f64, f64::max);
        let sx = |t: f64| PAD + (W - 2.0 * PAD) * t / x_max;
        let sy = |f: f64| H - PAD - (H - 2.0 * PAD) * f;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
             <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
             <text x=\"{cx}\" y=\"{ty}\" text-anchor=\"middle\" font-size=\"12\">localization error (m)</text>\n\
             <text x=\"14\" y=\"{cy}\" font-size=\"12\" transform=\"rotate(-90 14 {cy})\" text-anchor=\"middle\">CDF</text>\n",
            b = H - PAD,
            r = W - PAD,
            cx = W / 2.0,
            ty = H - 12.0,
            cy = H / 2.0,
        );
        for (k, m) in self.methods.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let pts: Vec<String> = m
                .cdf
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p.threshold), sy(p.fraction)))
                .collect();
            s.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
                pts.join(" ")
            ));
            s.push_str(&format!(
                "<text x=\"{:.0}\" y=\"{:.0}\" fill=\"{color}\" font-size=\"12\">{} (median {:.2} m)</text>\n",
                W - PAD - 200.0,
                PAD + 18.0 * (k as f64 + 1.0),
                m.method,
                m.median_error
            ));
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Both trained stages and the environment they were trained in.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub env: Environment,
    pub coarse: CoarseModel,
    pub fine: FineModel,
}

impl Pipeline {
    pub fn localize(&self, rssi: &RssiObservation, img: &ImageFeatures) -> Result<Location> {
        let selection = self.coarse.localize(rssi)?;
        fine_localize(
            img,
            &self.fine.regressor,
            &selection,
            &self.coarse.partition,
        )
    }

    pub fn baseline(&self, rssi: &RssiObservation) -> Result<Location> {
        self.coarse.baseline(rssi, BaselineMode::Centroid)
    }
}

/// Trains the coarse classifier and the fine regressor from survey data.
pub fn train_models(
    cfg: &ExperimentConfig,
    survey: &SurveyOutput,
) -> Result<(CoarseModel, FineModel)> {
    let classifier = train_classifier(&survey.wifi, &cfg.coarse)?;
    let coarse = CoarseModel {
        classifier,
        rps: survey.wifi.reference_points(),
        partition: survey.partition.clone(),
        j_star: cfg.j_star,
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
    };
    let samples = prepare_samples(&survey.images, &coarse, cfg.fine.drop_missed_areas)?;
    let regressor = train_fine(&samples, &cfg.floor, &cfg.fine, cfg.seed)?;
    let fine = FineModel {
        regressor,
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
    };
    Ok((coarse, fine))
}

pub fn build_pipeline(cfg: &ExperimentConfig) -> Result<(SurveyOutput, Pipeline)> {
    let survey = run_survey(cfg)?;
    let (coarse, fine) = train_models(cfg, &survey)?;
    let env = Environment::from_config(cfg)?;
    Ok((survey, Pipeline { env, coarse, fine }))
}

/// A held-out localization task with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub location: Location,
    pub rssi: RssiObservation,
    pub image: ImageFeatures,
}

/// `cfg.m_queries` queries drawn uniformly over the floor from streams
/// disjoint from every survey stream. Draws that coincide with a survey
/// location are redrawn.
pub fn generate_queries(cfg: &ExperimentConfig, env: &Environment, n: usize) -> Result<Vec<Query>> {
    let mut survey_locs = cfg.image_survey_locations()?;
    survey_locs.extend(cfg.reference_points()?.into_iter().map(|r| r.location));
    (0..n)
        .map(|m| {
            let mut loc_rng = stream(cfg.seed, StreamDomain::QueryLocation, m as u64);
            let location = loop {
                let l = uniform_in(&env.floor, &mut loc_rng);
                if !survey_locs.contains(&l) {
                    break l;
                }
            };
            Ok(Query {
                location,
                rssi: env.rssi(
                    &location,
                    &mut stream(cfg.seed, StreamDomain::QueryRssi, m as u64),
                )?,
                image: env.features(
                    &location,
                    &mut stream(cfg.seed, StreamDomain::QueryImage, m as u64),
                )?,
            })
        })
        .collect()
}

/// A localization request as stored on disk. Ground truth is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<Location>,
    pub rssi: RssiObservation,
    pub image: ImageFeatures,
}

impl From<Query> for QueryRecord {
    fn from(q: Query) -> Self {
        Self {
            location: Some(q.location),
            rssi: q.rssi,
            image: q.image,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub queries: Vec<QueryRecord>,
    pub config_hash: String,
    pub seed: u64,
}

impl Persist for QuerySet {
    const KIND: &'static str = "query";
    type Record = QueryRecord;

    fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn records(&self) -> Vec<QueryRecord> {
        self.queries.clone()
    }

    fn from_records(config_hash: String, seed: u64, queries: Vec<QueryRecord>) -> Result<Self> {
        Ok(Self {
            queries,
            config_hash,
            seed,
        })
    }
}

fn held_out(queries: &[Query], survey: &SurveyOutput) -> bool {
    queries.iter().all(|q| {
        survey
            .wifi
            .entries()
            .iter()
            .all(|e| e.rp.location != q.location)
            && survey
                .images
                .entries()
                .iter()
                .all(|e| e.location != q.location)
    })
}

/// Errors of both methods on `queries`, plus coarse containment.
pub fn evaluate(
    cfg: &ExperimentConfig,
    pipeline: &Pipeline,
    survey: &SurveyOutput,
    queries: &[Query],
) -> Result<EvaluationReport> {
    let mut wifi_errors = Vec::with_capacity(queries.len());
    let mut joint_errors = Vec::with_capacity(queries.len());
    let mut wifi_times = Vec::with_capacity(queries.len());
    let mut joint_times = Vec::with_capacity(queries.len());
    let mut contained = 0usize;
    for q in queries {
        let t0 = Instant::now();
        let b = pipeline.baseline(&q.rssi)?;
        wifi_times.push(t0.elapsed().as_secs_f64());

        let t0 = Instant::now();
        let selection = pipeline.coarse.localize(&q.rssi)?;
        let j = fine_localize(
            &q.image,
            &pipeline.fine.regressor,
            &selection,
            &pipeline.coarse.partition,
        )?;
        joint_times.push(t0.elapsed().as_secs_f64());

        if pipeline
            .coarse
            .partition
            .locate(&q.location)
            .is_some_and(|a| selection.contains(a))
        {
            contained += 1;
        }
        wifi_errors.push(b.distance(&q.location));
        joint_errors.push(j.distance(&q.location));
    }
    let [w, h, d] = cfg.floor.extent();
    let thresholds = threshold_grid((w * w + h * h + d * d).sqrt(), 0.05);
    Ok(EvaluationReport {
        seed: cfg.seed,
        config_hash: cfg.config_hash(),
        rp_spacing: cfg.rp_spacing,
        n_rp: survey.wifi.n_rps(),
        n_areas: survey.partition.n_areas(),
        n_queries: queries.len(),
        methods: vec![
            MethodResult::new(WIFI_ONLY, wifi_errors, &thresholds)?,
            MethodResult::new(JOINT, joint_errors, &thresholds)?,
        ],
        containment_rate: contained as f64 / queries.len() as f64,
        held_out_disjoint: held_out(queries, survey),
        fine_final_loss: pipeline
            .fine
            .regressor
            .meta
            .loss_curve
            .last()
            .copied()
            .unwrap_or(f64::NAN),
        warnings: survey.warnings.clone(),
        config: cfg.clone(),
        latency: Some(LatencyStats {
            wifi_only_median: median(&wifi_times),
            wifi_only_mean: mean(&wifi_times),
            joint_median: median(&joint_times),
            joint_mean: mean(&joint_times),
        }),
    })
}

/// Survey, train, and evaluate `cfg.m_queries` held-out queries.
pub fn run_accuracy_experiment(cfg: &ExperimentConfig) -> Result<EvaluationReport> {
    let (survey, pipeline) = build_pipeline(cfg)?;
    let queries = generate_queries(cfg, &pipeline.env, cfg.m_queries)?;
    evaluate(cfg, &pipeline, &survey, &queries)
}

/// One accuracy experiment per RP spacing, run concurrently.
pub fn run_grid_sweep(cfg: &ExperimentConfig, spacings: &[f64]) -> Result<Vec<EvaluationReport>> {
    let configs = spacings
        .iter()
        .map(|&s| {
            let c = ExperimentConfig {
                rp_spacing: s,
                ..cfg.clone()
            };
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    run_many(&configs)
}

/// The same experiment at each seed, run concurrently.
pub fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<EvaluationReport>> {
    let configs: Vec<_> = seeds
        .iter()
        .map(|&seed| ExperimentConfig {
            seed,
            ..cfg.clone()
        })
        .collect();
    run_many(&configs)
}

fn run_many(configs: &[ExperimentConfig]) -> Result<Vec<EvaluationReport>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| s.spawn(move || run_accuracy_experiment(c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub queries: usize,
    /// Median over repetitions of the total wall-clock time, seconds.
    pub wifi_only_seconds: f64,
    pub joint_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub repetitions: usize,
    pub rows: Vec<LatencyRow>,
}

impl LatencyTable {
    pub fn row(&self, queries: usize) -> Option<&LatencyRow> {
        self.rows.iter().find(|r| r.queries == queries)
    }
}

pub const LATENCY_REPETITIONS: usize = 5;

/// Total time to localize `n` queries with each method, for each requested
/// `n`. Queries are reused cyclically if fewer are supplied.
pub fn run_latency_bench(
    pipeline: &Pipeline,
    queries: &[Query],
    query_counts: &[usize],
) -> Result<LatencyTable> {
    if query_counts.is_empty() || query_counts.contains(&0) {
        return Err(Error::invalid("latency bench needs positive query counts"));
    }
    if queries.is_empty() {
        return Err(Error::invalid("latency bench needs at least one query"));
    }
    let mut rows = Vec::with_capacity(query_counts.len());
    for &n in query_counts {
        let mut wifi = Vec::with_capacity(LATENCY_REPETITIONS);
        let mut joint = Vec::with_capacity(LATENCY_REPETITIONS);
        for rep in 0..LATENCY_REPETITIONS {
            // Each repetition starts further along the query list so small
            // batches are not timed on data the previous repetition touched.
            let batch: Vec<&Query> = queries.iter().cycle().skip(rep * n).take(n).collect();
            let t0 = Instant::now();
            for q in &batch {
                std::hint::black_box(pipeline.baseline(&q.rssi)?);
            }
            wifi.push(t0.elapsed().as_secs_f64());
            let t0 = Instant::now();
            for q in &batch {
                std::hint::black_box(pipeline.localize(&q.rssi, &q.image)?);
            }
            joint.push(t0.elapsed().as_secs_f64());
        }
        rows.push(LatencyRow {
            queries: n,
            wifi_only_seconds: median(&wifi),
            joint_seconds: median(&joint),
        });
    }
    Ok(LatencyTable {
        repetitions: LATENCY_REPETITIONS,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_hand_count() {
        let cdf = error_cdf(&[1.0, 2.0, 3.0], &[0.5, 2.0, 3.5]).unwrap();
        let f: Vec<f64> = cdf.iter().map(|p| p.fraction).collect();
        assert_eq!(f, vec![0.0, 2.0 / 3.0, 1.0]);
    }

    #[test]
    fn cdf_rejects_empty_and_negative() {
        assert!(error_cdf(&[], &[1.0]).is_err());
        assert!(error_cdf(&[-0.1], &[1.0]).is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn sweep_rejects_spacing_wider_than_floor() {
        let cfg = ExperimentConfig::default();
        assert!(matches!(
            run_grid_sweep(&cfg, &[20.0]),
            Err(Error::Config(_))
        ));
    }
}
