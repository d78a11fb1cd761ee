use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;
use wivloc::envelope::{self, Persist};
use wivloc::eval::{build_pipeline, generate_queries, train_models, JOINT, WIFI_ONLY};
use wivloc::fine::fine_localize;
use wivloc::sim::SurveyOutput;
use wivloc::{
    load_db, run_accuracy_experiment, run_grid_sweep, run_latency_bench, run_survey, CoarseModel,
    Error, ExperimentConfig, FineModel, ImageDb, Location, QuerySet, Result, WifiDb,
};

use crate::manifest::Run;

pub const WIFI_DB: &str = "wifi_db.jsonl";
pub const IMAGE_DB: &str = "image_db.jsonl";
pub const QUERIES: &str = "queries.jsonl";
pub const COARSE_MODEL: &str = "coarse_model.jsonl";
pub const FINE_MODEL: &str = "fine_model.jsonl";

/// Loads the config file (or the defaults) and applies command-line overrides.
pub fn load_config(
    path: Option<&Path>,
    seed: Option<u64>,
    drop_missed_areas: bool,
) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if drop_missed_areas {
        cfg.fine.drop_missed_areas = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn save<T: Persist>(run: &mut Run, name: &str, value: &T) -> Result<()> {
    envelope::save(value, &run.path(name))?;
    run.adopt(name)
}

pub fn survey(cfg: &ExperimentConfig, config_path: Option<&Path>, out: &Path) -> Result<()> {
    let mut run = Run::start("survey", config_path, out, Some(cfg.seed))?;
    let SurveyOutput {
        wifi,
        images,
        warnings,
        ..
    } = run_survey(cfg)?;
    for w in warnings {
        run.warn(w);
    }
    save(&mut run, WIFI_DB, &wifi)?;
    save(&mut run, IMAGE_DB, &images)?;

    let env = wivloc::Environment::from_config(cfg)?;
    let queries = QuerySet {
        queries: generate_queries(cfg, &env, cfg.m_queries)?
            .into_iter()
            .map(Into::into)
            .collect(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
    };
    save(&mut run, QUERIES, &queries)?;
    run.write("config.json", (cfg.to_json_pretty() + "\n").as_bytes())?;
    run.finish()?;
    Ok(())
}

fn same_hash(what: &str, left: &str, right: &str) -> Result<()> {
    if left != right {
        return Err(Error::HashMismatch {
            left: format!("{what} {left}"),
            right: right.to_string(),
        });
    }
    Ok(())
}

/// Trains both stages on a surveyed database pair. `cfg` must be the config
/// the databases were surveyed with; `drop_missed_areas` is applied on top.
pub fn train(
    cfg: &ExperimentConfig,
    drop_missed_areas: bool,
    config_path: Option<&Path>,
    db_dir: &Path,
    out: &Path,
) -> Result<()> {
    let wifi: WifiDb = load_db(&db_dir.join(WIFI_DB))?;
    let images: ImageDb = load_db(&db_dir.join(IMAGE_DB))?;
    same_hash("wifi db", wifi.config_hash(), images.config_hash())?;
    same_hash("databases", wifi.config_hash(), &cfg.config_hash())?;
    let lineage = wifi.config_hash().to_string();
    let mut cfg = cfg.clone();
    cfg.fine.drop_missed_areas |= drop_missed_areas;
    let cfg = &cfg;

    let mut run = Run::start("train", config_path, out, Some(cfg.seed))?;
    let partition = cfg.partition(&wifi.reference_points())?;
    let survey = SurveyOutput {
        wifi,
        images,
        partition,
        warnings: Vec::new(),
    };
    let (mut coarse, mut fine) = train_models(cfg, &survey)?;
    coarse.config_hash = lineage.clone();
    fine.config_hash = lineage;
    save(&mut run, COARSE_MODEL, &coarse)?;
    save(&mut run, FINE_MODEL, &fine)?;
    run.write("fine_loss.csv", fine.regressor.loss_curve_csv().as_bytes())?;
    let mut coarse_csv = String::from("iteration,loss\n");
    for (it, loss) in &coarse.classifier.meta.checkpoints {
        let _ = writeln!(coarse_csv, "{it},{loss}");
    }
    run.write("coarse_loss.csv", coarse_csv.as_bytes())?;
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct Candidate {
    area: usize,
    probability: f64,
}

#[derive(Serialize)]
struct Localization {
    query: usize,
    candidates: Vec<Candidate>,
    location: Location,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<f64>,
}

/// Localizes every query in `queries`, one JSON line per query on stdout.
pub fn localize(model_dir: &Path, queries: &Path, out: Option<&Path>) -> Result<()> {
    let coarse: CoarseModel = envelope::load(&model_dir.join(COARSE_MODEL))?;
    let fine: FineModel = envelope::load(&model_dir.join(FINE_MODEL))?;
    let set: QuerySet = envelope::load(queries)?;
    same_hash("coarse model", &coarse.config_hash, &fine.config_hash)?;
    same_hash("models", &coarse.config_hash, &set.config_hash)?;

    let mut lines = String::new();
    for (i, q) in set.queries.iter().enumerate() {
        let selection = coarse.localize(&q.rssi)?;
        let location = fine_localize(&q.image, &fine.regressor, &selection, &coarse.partition)?;
        let rec = Localization {
            query: i,
            candidates: selection
                .area_indices()
                .iter()
                .zip(selection.probs())
                .map(|(&area, &probability)| Candidate { area, probability })
                .collect(),
            location,
            error: q.location.map(|t| t.distance(&location)),
        };
        lines.push_str(&serde_json::to_string(&rec).expect("localization serializes"));
        lines.push('\n');
    }
    std::io::stdout()
        .write_all(lines.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    if let Some(out) = out {
        let mut run = Run::start("localize", None, out, Some(coarse.seed))?;
        run.write("localizations.jsonl", lines.as_bytes())?;
        run.finish()?;
    }
    Ok(())
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    config_path: Option<&Path>,
    out: &Path,
    spacings: &[f64],
    plot: bool,
) -> Result<()> {
    let mut run = Run::start("evaluate", config_path, out, Some(cfg.seed))?;
    let report = run_accuracy_experiment(cfg)?;
    for w in &report.warnings {
        run.warn(w.clone());
    }
    run.write("report.json", report.to_json().as_bytes())?;
    run.write("cdf.csv", report.cdf_csv().as_bytes())?;
    if plot {
        run.write("cdf.svg", report.cdf_svg().as_bytes())?;
    }
    if let Some(l) = report.latency {
        let text = serde_json::to_string_pretty(&l).expect("latency serializes") + "\n";
        run.write("eval_latency.json", text.as_bytes())?;
    }

    if !spacings.is_empty() {
        let sweep = run_grid_sweep(cfg, spacings)?;
        let mut summary = String::from(
            "rp_spacing,n_rp,n_areas,wifi_only_median,joint_median,containment_rate\n",
        );
        for r in &sweep {
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{}",
                r.rp_spacing,
                r.n_rp,
                r.n_areas,
                r.median_of(WIFI_ONLY),
                r.median_of(JOINT),
                r.containment_rate
            );
        }
        let text = serde_json::to_string_pretty(&sweep).expect("sweep serializes") + "\n";
        run.write("sweep.json", text.as_bytes())?;
        run.write("sweep.csv", summary.as_bytes())?;
        if plot {
            for r in &sweep {
                run.write(
                    &format!("cdf_spacing_{}.svg", r.rp_spacing),
                    r.cdf_svg().as_bytes(),
                )?;
            }
        }
    }
    run.finish()?;
    Ok(())
}

pub fn bench(
    cfg: &ExperimentConfig,
    config_path: Option<&Path>,
    out: &Path,
    counts: &[usize],
) -> Result<()> {
    let mut run = Run::start("bench", config_path, out, Some(cfg.seed))?;
    let (_, pipeline) = build_pipeline(cfg)?;
    let n = counts.iter().copied().max().unwrap_or(1).max(1);
    let queries = generate_queries(cfg, &pipeline.env, n)?;
    let table = run_latency_bench(&pipeline, &queries, counts)?;
    let text = serde_json::to_string_pretty(&table).expect("latency table serializes") + "\n";
    run.write("latency.json", text.as_bytes())?;
    run.finish()?;
    Ok(())
}
