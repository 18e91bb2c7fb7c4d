use std::fs;
use std::path::{Path, PathBuf};

use akipred::dataset::Dataset;
use akipred::error::Error;
use akipred::evaluation::{compare_scores, ScoredModel};
use akipred::ingest::{load_table, TableSchema};
use akipred::isotonic::IsotonicCalibrator;
use akipred::models::{FittedModel, ModelConfig, ModelSpec};
use akipred::pipeline::{self, ArtifactWriter, PipelineConfig, SynthSpec};
use akipred::plot;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

/// AKI risk pipeline: cohort filtering, imputation, selection, rebalancing,
/// six model families, evaluation and Shapley attribution.
#[derive(Parser)]
#[command(name = "akipred", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "akipred-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write all artifacts plus a manifest.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic admission table and its schema.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of rows.
        #[arg(long)]
        n: Option<usize>,
        /// Fraction of feature cells left empty.
        #[arg(long)]
        missing_rate: Option<f64>,
        /// Cohort profile JSON; the built-in profile otherwise.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Apply the cohort filters to an admission table.
    Cohort {
        #[command(flatten)]
        common: Common,
        /// Admission table (CSV).
        #[arg(long)]
        input: PathBuf,
        /// Column schema (JSON).
        #[arg(long)]
        schema: PathBuf,
    },
    /// Drop sparse features and fill missing cells by chained equations.
    Impute {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare outcome groups and keep features correlated with the label.
    Select {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Stratified train/test/validation split with SMOTE on the training part.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit one model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training data.
        #[arg(long)]
        data: PathBuf,
        /// Model name from the configuration, or a family: logistic, knn,
        /// random_forest, xgboost, lightgbm, svm.
        #[arg(long)]
        family: String,
    },
    /// Metrics for a score file or for fitted models on a dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// CSV with a `label` column and one column of scores per model.
        #[arg(long, conflicts_with_all = ["model", "data"])]
        scores: Option<PathBuf>,
        /// Fitted model JSON; repeat for several.
        #[arg(long, requires = "data")]
        model: Vec<PathBuf>,
        /// Evaluation data for `--model`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fit isotonic calibrators on this dataset first.
        #[arg(long, requires = "model")]
        calibrate_on: Option<PathBuf>,
    },
    /// Shapley attributions of one model over a dataset.
    Explain {
        #[command(flatten)]
        common: Common,
        /// Fitted model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Rows to explain.
        #[arg(long)]
        data: PathBuf,
        /// Reference rows (typically the training data).
        #[arg(long)]
        background: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            PipelineConfig::load(p).with_context(|| format!("reading config {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn read_dataset(stage: &'static str, path: &Path) -> Result<Dataset> {
    staged(stage, Dataset::read(path)).with_context(|| format!("reading {}", path.display()))
}

fn staged<T>(stage: &'static str, r: akipred::Result<T>) -> Result<T> {
    r.map_err(|e| e.at_stage(stage).into())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common } => {
            let cfg = load_config(&common)?;
            let out = match (&common.config, &cfg.output) {
                (Some(_), Some(o)) if common.out == Path::new("akipred-out") => o.clone(),
                _ => common.out.clone(),
            };
            let outcome = pipeline::run_pipeline(&cfg, &out)?;
            println!(
                "cohort {} rows; split {}/{}/{}; {} artifacts in {}",
                outcome.cohort_size,
                outcome.split_sizes.0,
                outcome.split_sizes.1,
                outcome.split_sizes.2,
                outcome.manifest.artifacts.len(),
                out.display()
            );
            print!("{}", outcome.reports[2].to_csv());
        }
        Command::Synth {
            common,
            n,
            missing_rate,
            profile,
        } => {
            let cfg = load_config(&common)?;
            let mut spec = cfg.synth.clone().unwrap_or_else(SynthSpec::default);
            if let Some(n) = n {
                spec.n = n;
            }
            if let Some(r) = missing_rate {
                spec.missing_rate = r;
            }
            if profile.is_some() {
                spec.profile = profile;
            }
            let table = staged("synth", pipeline::synth_table(&spec, cfg.seed))?;
            let mut w = ArtifactWriter::new(&common.out)?;
            w.table("cohort_raw.csv", &table)?;
            w.json("cohort_raw.schema.json", &table.schema())?;
            w.text(
                "profile.json",
                &(staged("synth", spec.profile())?.to_json()? + "\n"),
            )?;
            println!(
                "wrote {} rows to {}",
                table.n_rows(),
                common.out.join("cohort_raw.csv").display()
            );
        }
        Command::Cohort {
            common,
            input,
            schema,
        } => {
            let cfg = load_config(&common)?;
            let schema = staged("cohort", TableSchema::load(&schema))?;
            let table = staged("cohort", load_table(&input, &schema))?;
            let c = staged("cohort", pipeline::stage_cohort(table, &cfg))?;
            let mut w = ArtifactWriter::new(&common.out)?;
            w.text("funnel.csv", &c.log.to_csv())?;
            w.dataset("cohort.csv", &c.dataset)?;
            print!("{}", c.log.to_csv());
        }
        Command::Impute { common, data } => {
            let cfg = load_config(&common)?;
            let d = read_dataset("impute", &data)?;
            let r = staged("impute", pipeline::stage_impute(&d, &cfg))?;
            let mut w = ArtifactWriter::new(&common.out)?;
            w.text("missingness.csv", &r.missingness_csv())?;
            w.dataset("imputed.csv", &r.dataset)?;
            println!(
                "{} features kept of {}",
                r.dataset.n_features(),
                d.n_features()
            );
        }
        Command::Select { common, data } => {
            let cfg = load_config(&common)?;
            let d = read_dataset("select", &data)?;
            let s = staged("select", pipeline::stage_select(&d, &cfg))?;
            let mut w = ArtifactWriter::new(&common.out)?;
            w.text("cohort_characteristics.csv", &s.comparison.to_csv())?;
            w.text("correlations.csv", &s.report.to_csv())?;
            w.dataset("selected.csv", &s.dataset)?;
            println!(
                "{} features selected of {}",
                s.dataset.n_features(),
                d.n_features()
            );
        }
        Command::Split { common, data } => {
            let cfg = load_config(&common)?;
            let d = read_dataset("split", &data)?;
            let s = staged("split", pipeline::stage_split(&d, &cfg))?;
            let mut w = ArtifactWriter::new(&common.out)?;
            w.dataset("train.csv", &s.train)?;
            w.dataset("test.csv", &s.test)?;
            w.dataset("validation.csv", &s.validation)?;
            println!(
                "train {} (+{} synthetic), test {}, validation {}",
                s.train.n_rows() - s.synthetic_rows,
                s.synthetic_rows,
                s.test.n_rows(),
                s.validation.n_rows()
            );
        }
        Command::Train {
            common,
            data,
            family,
        } => {
            let cfg = load_config(&common)?;
            let d = read_dataset("train", &data)?;
            let model_cfg = match cfg.model(&family) {
                Ok(m) => m.clone(),
                Err(_) => ModelConfig::new(
                    family.clone(),
                    staged("train", ModelSpec::default_for(&family))?,
                ),
            };
            let m = staged("train", pipeline::train_model(&model_cfg, &d, cfg.seed))?;
            let mut w = ArtifactWriter::new(&common.out)?;
            w.model(&format!("{}.json", m.name), &m)?;
            println!(
                "wrote {}",
                common.out.join(format!("{}.json", m.name)).display()
            );
        }
        Command::Evaluate {
            common,
            scores,
            model,
            data,
            calibrate_on,
        } => {
            let cfg = load_config(&common)?;
            let (scored, labels) = match (scores, data) {
                (Some(path), _) => read_scores(&path)?,
                (None, Some(data)) => {
                    if model.is_empty() {
                        bail!("--data needs at least one --model");
                    }
                    let d = read_dataset("evaluate", &data)?;
                    let cal = calibrate_on
                        .as_deref()
                        .map(|p| read_dataset("evaluate", p))
                        .transpose()?;
                    let mut scored = Vec::new();
                    for p in &model {
                        let m = staged("evaluate", FittedModel::load(p))?;
                        let s = staged("evaluate", m.predict_dataset(&d))?;
                        let calibrated = match &cal {
                            Some(c) => {
                                let iso = staged(
                                    "evaluate",
                                    m.predict_dataset(c)
                                        .and_then(|v| IsotonicCalibrator::fit(&v, c.labels())),
                                )?;
                                Some(iso.apply_all(&s))
                            }
                            None => None,
                        };
                        scored.push(ScoredModel {
                            name: m.name.clone(),
                            scores: s,
                            calibrated,
                        });
                    }
                    (scored, d.labels().to_vec())
                }
                (None, None) => bail!("pass either --scores or --model with --data"),
            };
            let report = staged(
                "evaluate",
                compare_scores(
                    "evaluation",
                    &scored,
                    &labels,
                    &cfg.evaluation.settings,
                    cfg.stage_seed("bootstrap"),
                ),
            )?;
            let mut w = ArtifactWriter::new(&common.out)?;
            w.text("model_comparison.csv", &report.to_csv())?;
            w.text("model_comparison.json", &(report.to_json()? + "\n"))?;
            w.text("roc_points.csv", &report.roc_csv())?;
            w.text("calibration_points.csv", &report.calibration_csv())?;
            w.text("roc.svg", &plot::roc_svg(&report))?;
            w.text("calibration.svg", &plot::calibration_svg(&report, false))?;
            print!("{}", report.to_csv());
        }
        Command::Explain {
            common,
            model,
            data,
            background,
        } => {
            let cfg = load_config(&common)?;
            let m = staged("explain", FittedModel::load(&model))?;
            let d = read_dataset("explain", &data)?;
            let bg = read_dataset("explain", &background)?;
            let e = staged("explain", pipeline::stage_explain(&m, &bg, &d, &cfg))?;
            let mut w = ArtifactWriter::new(&common.out)?;
            w.text(&format!("{}_summary.csv", m.name), &e.summary.to_csv())?;
            w.text(
                &format!("{}_attributions.csv", m.name),
                &akipred::explain::attributions_csv(d.feature_names(), &e.attributions),
            )?;
            w.text(
                &format!("shapley_{}.svg", m.name),
                &plot::importance_svg(&e.summary),
            )?;
            print!("{}", e.summary.to_csv());
        }
    }
    Ok(())
}

/// Reads `label` plus one score column per model.
fn read_scores(path: &Path) -> Result<(Vec<ScoredModel>, Vec<u8>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let Some(label_col) = header.iter().position(|h| h == "label") else {
        bail!("{} has no `label` column", path.display());
    };
    let score_cols: Vec<usize> = (0..header.len()).filter(|&c| c != label_col).collect();
    if score_cols.is_empty() {
        bail!("{} has no score columns", path.display());
    }
    let mut labels = Vec::new();
    let mut scores = vec![Vec::new(); score_cols.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        labels.push(match rec[label_col].parse::<f64>() {
            Ok(0.0) => 0,
            Ok(1.0) => 1,
            _ => bail!("row {}: label `{}` is not 0 or 1", i + 1, &rec[label_col]),
        });
        for (k, &c) in score_cols.iter().enumerate() {
            scores[k].push(
                rec[c]
                    .parse::<f64>()
                    .with_context(|| format!("row {}: bad score `{}`", i + 1, &rec[c]))?,
            );
        }
    }
    let scored = score_cols
        .iter()
        .zip(scores)
        .map(|(&c, s)| ScoredModel {
            name: header[c].clone(),
            scores: s,
            calibrated: None,
        })
        .collect();
    Ok((scored, labels))
}
