//! Shared fixture for the criterion benchmarks in `benches/`.

use wivloc::eval::{build_pipeline, generate_queries};
use wivloc::fine::prepare_samples;
use wivloc::sim::SurveyOutput;
use wivloc::{ExperimentConfig, Pipeline, Query, Result, TrainingSample};

/// A trained default pipeline with held-out queries and the fine-stage
/// training set. The fine stage is trained briefly; inference cost does not
/// depend on how well it fits.
pub struct Fixture {
    pub cfg: ExperimentConfig,
    pub survey: SurveyOutput,
    pub pipeline: Pipeline,
    pub queries: Vec<Query>,
    pub samples: Vec<TrainingSample>,
}

impl Fixture {
    pub fn new(fine_epochs: usize, n_queries: usize) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.fine.epochs = fine_epochs;
        let (survey, pipeline) = build_pipeline(&cfg)?;
        let queries = generate_queries(&cfg, &pipeline.env, n_queries)?;
        let samples = prepare_samples(&survey.images, &pipeline.coarse, false)?;
        Ok(Self {
            cfg,
            survey,
            pipeline,
            queries,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_builds() {
        let f = Fixture::new(1, 3).unwrap();
        assert_eq!(f.queries.len(), 3);
        assert_eq!(f.samples.len(), f.survey.images.len() * f.cfg.n_i);
        assert!(f
            .pipeline
            .localize(&f.queries[0].rssi, &f.queries[0].image)
            .is_ok());
    }
}
