//! End-to-end orchestration from one declarative configuration.
//!
//! Each stage is a public function so the command-line subcommands can run
//! them one at a time on serialized intermediate files. Every random stream is
//! seeded from the global seed and a fixed stage key, so staged and
//! monolithic runs agree bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{format_number, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::{
    compare_scores, partition_table, EvaluationReport, EvaluationSettings, ScoredModel,
};
use crate::explain::{
    attributions_csv, background_sample, explain_dataset, summarize, Attribution,
    AttributionSummary, PermutationScheme, ShapleyMethod,
};
use crate::ingest::{
    apply_cohort_filters, load_table, CohortFilterSpec, FilterLog, RawPatientTable, TableSchema,
};
use crate::isotonic::IsotonicCalibrator;
use crate::missing::{
    drop_high_missing_features, feature_missingness, mice_impute, pool_imputations, MiceConfig,
};
use crate::models::{default_model_configs, fit, FittedModel, ModelConfig, ModelParams};
use crate::plot;
use crate::resample::{smote, stratified_split, SmoteSpec, SplitSpec};
use crate::rng::derive_seed;
use crate::selection::{
    cohort_characteristics, select_features, CohortComparison, CorrelationReport,
};
use crate::synth::{self, CohortProfile, SdRule};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    pub schema: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    /// Fraction of feature cells blanked completely at random.
    pub missing_rate: f64,
    /// Profile JSON file; the built-in profile when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<PathBuf>,
    /// Standard-deviation rule for the built-in profile.
    pub sd_rule: SdRule,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 3301,
            missing_rate: 0.01,
            profile: None,
            sd_rule: SdRule::default(),
        }
    }
}

impl SynthSpec {
    pub fn profile(&self) -> Result<CohortProfile> {
        match &self.profile {
            Some(p) => {
                CohortProfile::from_json(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)
            }
            None => Ok(synth::profile_with(self.sd_rule)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSettings {
    pub lo: f64,
    pub hi: f64,
    /// Significance level for the cohort comparison table.
    pub alpha: f64,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        Self {
            lo: 0.1,
            hi: 1.0,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub fractions: (f64, f64, f64),
    pub stratify: bool,
}

impl Default for SplitSettings {
    fn default() -> Self {
        let d = SplitSpec::default();
        Self {
            fractions: d.fractions,
            stratify: d.stratify,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SmotePlacement {
    /// Oversample the training partition only.
    #[default]
    TrainingOnly,
    /// Oversample the whole cohort, then split.
    BeforeSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoteSettings {
    pub enabled: bool,
    pub k: usize,
    pub target_ratio: f64,
    pub placement: SmotePlacement,
}

impl Default for SmoteSettings {
    fn default() -> Self {
        let d = SmoteSpec::default();
        Self {
            enabled: true,
            k: d.k,
            target_ratio: d.target_ratio,
            placement: SmotePlacement::TrainingOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(flatten)]
    pub settings: EvaluationSettings,
    /// Fit an isotonic calibrator per model on the validation partition.
    pub calibrate: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            settings: EvaluationSettings::default(),
            calibrate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSettings {
    /// Names of the models to explain.
    pub models: Vec<String>,
    pub permutations: usize,
    pub background_cap: usize,
    /// Explain at most this many test rows (the first ones); all when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_instances: Option<usize>,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        Self {
            models: vec!["logistic".into()],
            permutations: 200,
            background_cap: 200,
            max_instances: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<InputSpec>,
    /// Absent unless written, even though `Default` enables it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    pub cohort: CohortFilterSpec,
    /// Features missing in more than this fraction of rows are dropped.
    pub missing_threshold: f64,
    pub mice: MiceConfig,
    pub selection: SelectionSettings,
    pub split: SplitSettings,
    pub smote: SmoteSettings,
    pub models: Vec<ModelConfig>,
    pub evaluation: EvaluationConfig,
    pub explain: ExplainSettings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 42,
            input: None,
            synth: Some(SynthSpec::default()),
            cohort: CohortFilterSpec::default(),
            missing_threshold: 0.2,
            mice: MiceConfig::default(),
            selection: SelectionSettings::default(),
            split: SplitSettings::default(),
            smote: SmoteSettings::default(),
            models: default_model_configs(),
            evaluation: EvaluationConfig::default(),
            explain: ExplainSettings::default(),
            output: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let version = v.get("schema_version").and_then(|x| x.as_u64());
        if version != Some(u64::from(CONFIG_SCHEMA_VERSION)) {
            return Err(Error::Config(format!(
                "config schema_version must be {CONFIG_SCHEMA_VERSION}, got {version:?}"
            )));
        }
        Ok(serde_json::from_value(v)?)
    }

    /// Reads a configuration file; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(i) = &mut cfg.input {
            resolve(&mut i.path);
            resolve(&mut i.schema);
        }
        if let Some(p) = cfg.synth.as_mut().and_then(|s| s.profile.as_mut()) {
            resolve(p);
        }
        if let Some(o) = &mut cfg.output {
            resolve(o);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.input, &self.synth) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "specify either `input` or `synth`, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "one of `input` or `synth` is required".into(),
                ))
            }
            (Some(i), None) => {
                for p in [&i.path, &i.schema] {
                    if !p.exists() {
                        return Err(Error::FileNotFound(p.clone()));
                    }
                }
            }
            (None, Some(s)) => {
                if s.n < 2 {
                    return Err(Error::Config(
                        "synthetic cohort needs at least 2 rows".into(),
                    ));
                }
                if !(0.0..1.0).contains(&s.missing_rate) {
                    return Err(Error::Config(
                        "synthetic missing_rate must lie in [0, 1)".into(),
                    ));
                }
                if let Some(p) = &s.profile {
                    if !p.exists() {
                        return Err(Error::FileNotFound(p.clone()));
                    }
                }
            }
        }
        self.cohort.validate()?;
        if !(0.0..=1.0).contains(&self.missing_threshold) {
            return Err(Error::Config("missing_threshold must lie in [0, 1]".into()));
        }
        self.split_spec().validate()?;
        if self.models.is_empty() {
            return Err(Error::Config("no models configured".into()));
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.models {
            m.spec.validate()?;
            if !names.insert(&m.name) {
                return Err(Error::Config(format!("duplicate model name `{}`", m.name)));
            }
        }
        for e in &self.explain.models {
            if !names.contains(e) {
                return Err(Error::Config(format!(
                    "explain refers to unknown model `{e}`"
                )));
            }
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage, 0)
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            fractions: self.split.fractions,
            stratify: self.split.stratify,
            seed: self.stage_seed("split"),
        }
    }

    pub fn smote_spec(&self) -> SmoteSpec {
        SmoteSpec {
            k: self.smote.k,
            target_ratio: self.smote.target_ratio,
            seed: self.stage_seed("smote"),
        }
    }

    pub fn model(&self, name: &str) -> Result<&ModelConfig> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Config(format!("no model named `{name}` in the configuration")))
    }
}

// ---------------------------------------------------------------- stages

pub struct CohortStage {
    pub table: RawPatientTable,
    pub log: FilterLog,
    pub dataset: Dataset,
}

/// The raw admission table: read from disk or generated.
pub fn source_table(cfg: &PipelineConfig) -> Result<RawPatientTable> {
    match (&cfg.input, &cfg.synth) {
        (Some(i), _) => load_table(&i.path, &TableSchema::load(&i.schema)?),
        (None, Some(s)) => synth_table(s, cfg.seed),
        (None, None) => Err(Error::Config(
            "one of `input` or `synth` is required".into(),
        )),
    }
}

pub fn synth_table(s: &SynthSpec, global: u64) -> Result<RawPatientTable> {
    let profile = s.profile()?;
    let d = synth::generate(&profile, s.n, derive_seed(global, "synth", 0))?;
    // age drives a cohort filter, so it is always recorded
    let d = synth::mask_missing(
        &d,
        s.missing_rate,
        &["age"],
        derive_seed(global, "synth_mask", 0),
    )?;
    Ok(synth::to_raw_table(
        &d,
        derive_seed(global, "synth_meta", 0),
    ))
}

pub fn stage_cohort(table: RawPatientTable, cfg: &PipelineConfig) -> Result<CohortStage> {
    let (kept, log) = apply_cohort_filters(&table, &cfg.cohort)?;
    if kept.n_rows() == 0 {
        return Err(Error::InvalidInput(
            "no rows survive the cohort filters".into(),
        ));
    }
    let dataset = kept.to_dataset()?;
    Ok(CohortStage {
        table: kept,
        log,
        dataset,
    })
}

pub struct ImputeStage {
    /// (feature, missing fraction, kept)
    pub missingness: Vec<(String, f64, bool)>,
    pub dataset: Dataset,
}

impl ImputeStage {
    pub fn missingness_csv(&self) -> String {
        let mut s = String::from("feature,missing_fraction,kept\n");
        for (f, m, k) in &self.missingness {
            let _ = writeln!(s, "{f},{},{k}", format_number(*m));
        }
        s
    }
}

pub fn stage_impute(d: &Dataset, cfg: &PipelineConfig) -> Result<ImputeStage> {
    let fractions = feature_missingness(d);
    let kept = drop_high_missing_features(d, cfg.missing_threshold)?;
    let missingness = d
        .feature_names()
        .iter()
        .zip(fractions)
        .map(|(f, m)| (f.clone(), m, kept.feature_index(f).is_some()))
        .collect();
    let dataset = if kept.has_missing() {
        pool_imputations(&mice_impute(&kept, &cfg.mice, cfg.stage_seed("mice"))?)?
    } else {
        kept
    };
    Ok(ImputeStage {
        missingness,
        dataset,
    })
}

pub struct SelectStage {
    pub comparison: CohortComparison,
    pub report: CorrelationReport,
    pub dataset: Dataset,
}

/// Cohort comparison on all imputed features, then correlation screening.
pub fn stage_select(d: &Dataset, cfg: &PipelineConfig) -> Result<SelectStage> {
    let comparison = cohort_characteristics(d, cfg.selection.alpha)?;
    let (dataset, report) = select_features(d, cfg.selection.lo, cfg.selection.hi)?;
    Ok(SelectStage {
        comparison,
        report,
        dataset,
    })
}

pub struct SplitStage {
    /// Training rows, with synthetic rows appended when oversampling applies.
    pub train: Dataset,
    pub test: Dataset,
    pub validation: Dataset,
    pub synthetic_rows: usize,
}

pub fn stage_split(d: &Dataset, cfg: &PipelineConfig) -> Result<SplitStage> {
    let spec = cfg.split_spec();
    if cfg.smote.enabled && cfg.smote.placement == SmotePlacement::BeforeSplit {
        let s = smote(d, &cfg.smote_spec())?;
        let split = stratified_split(&s.dataset, &spec)?;
        return Ok(SplitStage {
            train: split.train,
            test: split.test,
            validation: split.validation,
            synthetic_rows: s.origins.len(),
        });
    }
    let split = stratified_split(d, &spec)?;
    let (train, synthetic_rows) = if cfg.smote.enabled {
        let s = smote(&split.train, &cfg.smote_spec())?;
        (s.dataset, s.origins.len())
    } else {
        (split.train, 0)
    };
    Ok(SplitStage {
        train,
        test: split.test,
        validation: split.validation,
        synthetic_rows,
    })
}

pub fn train_model(m: &ModelConfig, train: &Dataset, global: u64) -> Result<FittedModel> {
    fit(m, train, m.resolve_seed(global))
}

pub fn stage_train(train: &Dataset, cfg: &PipelineConfig) -> Result<Vec<FittedModel>> {
    cfg.models
        .par_iter()
        .map(|m| train_model(m, train, cfg.seed))
        .collect()
}

/// Rows that were not produced by oversampling.
pub fn original_rows(d: &Dataset) -> Dataset {
    let idx: Vec<usize> = (0..d.n_rows()).filter(|&i| !d.synthetic()[i]).collect();
    if idx.len() == d.n_rows() {
        d.clone()
    } else {
        d.select_rows(&idx)
    }
}

pub fn stage_calibrate(
    models: &[FittedModel],
    validation: &Dataset,
) -> Result<Vec<IsotonicCalibrator>> {
    models
        .iter()
        .map(|m| IsotonicCalibrator::fit(&m.predict_dataset(validation)?, validation.labels()))
        .collect()
}

/// Scores every model on one partition, with calibrated scores when calibrators are given.
pub fn evaluate_partition(
    name: &str,
    models: &[FittedModel],
    calibrators: Option<&[IsotonicCalibrator]>,
    d: &Dataset,
    cfg: &PipelineConfig,
) -> Result<EvaluationReport> {
    let scored = models
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let scores = m.predict_dataset(d)?;
            let calibrated = calibrators.map(|c| c[k].apply_all(&scores));
            Ok(ScoredModel {
                name: m.name.clone(),
                scores,
                calibrated,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    compare_scores(
        name,
        &scored,
        d.labels(),
        &cfg.evaluation.settings,
        cfg.stage_seed("bootstrap"),
    )
}

pub fn explain_method(m: &FittedModel, cfg: &PipelineConfig) -> ShapleyMethod {
    match m.params {
        ModelParams::Logistic { .. } => ShapleyMethod::Linear,
        _ => ShapleyMethod::Permutation(PermutationScheme::Sampled {
            permutations: cfg.explain.permutations,
        }),
    }
}

pub struct Explanation {
    pub attributions: Vec<Attribution>,
    pub summary: AttributionSummary,
}

pub fn stage_explain(
    m: &FittedModel,
    train: &Dataset,
    data: &Dataset,
    cfg: &PipelineConfig,
) -> Result<Explanation> {
    let background = background_sample(
        &original_rows(train),
        cfg.explain.background_cap,
        cfg.stage_seed("background"),
    );
    let data = match cfg.explain.max_instances {
        Some(k) if k < data.n_rows() => data.select_rows(&(0..k).collect::<Vec<_>>()),
        _ => data.clone(),
    };
    let attributions = explain_dataset(
        m,
        &data,
        &background,
        explain_method(m, cfg),
        derive_seed(cfg.seed, &format!("explain:{}", m.name), 0),
    )?;
    let summary = summarize(&m.name, data.feature_names(), &attributions);
    Ok(Explanation {
        attributions,
        summary,
    })
}

pub fn predictions_csv(models: &[FittedModel], d: &Dataset) -> Result<String> {
    let preds = models
        .iter()
        .map(|m| m.predict_dataset(d))
        .collect::<Result<Vec<_>>>()?;
    let mut s = String::from("row,label");
    for m in models {
        s.push(',');
        s.push_str(&m.name);
    }
    s.push('\n');
    for i in 0..d.n_rows() {
        let _ = write!(s, "{i},{}", d.labels()[i]);
        for p in &preds {
            s.push(',');
            s.push_str(&format_number(p[i]));
        }
        s.push('\n');
    }
    Ok(s)
}

// ---------------------------------------------------------------- artifacts

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<ArtifactEntry>,
    pub timings: Vec<StageTiming>,
    pub versions: BTreeMap<String, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".akipred.lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks every listed file against its recorded checksum.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for a in &self.artifacts {
            let p = root.join(&a.path);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            if sha256_hex(&bytes) != a.sha256 {
                return Err(Error::InvalidInput(format!(
                    "checksum mismatch for {}",
                    a.path
                )));
            }
        }
        Ok(())
    }
}

/// Writes files under a root directory and remembers them for the manifest.
pub struct ArtifactWriter {
    root: PathBuf,
    written: Vec<String>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn prepare(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        if !self.written.iter().any(|w| w == rel) {
            self.written.push(rel.to_string());
        }
        Ok(p)
    }

    pub fn text(&mut self, rel: &str, content: &str) -> Result<()> {
        let p = self.prepare(rel)?;
        fs::write(&p, content).map_err(|e| Error::io(&p, e))
    }

    pub fn dataset(&mut self, rel: &str, d: &Dataset) -> Result<()> {
        let p = self.prepare(rel)?;
        let side = crate::dataset::sidecar_path(Path::new(rel));
        self.prepare(side.to_str().expect("utf-8 path"))?;
        d.write(&p)
    }

    pub fn table(&mut self, rel: &str, t: &RawPatientTable) -> Result<()> {
        let p = self.prepare(rel)?;
        t.write(&p)
    }

    pub fn model(&mut self, rel: &str, m: &FittedModel) -> Result<()> {
        let p = self.prepare(rel)?;
        m.save(&p)
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.text(rel, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    pub fn entries(&self) -> Result<Vec<ArtifactEntry>> {
        let mut paths = self.written.clone();
        paths.sort();
        paths
            .into_iter()
            .filter(|rel| self.root.join(rel).exists())
            .map(|rel| {
                let p = self.root.join(&rel);
                let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                Ok(ArtifactEntry {
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                    path: rel,
                })
            })
            .collect()
    }
}

/// Exclusive claim on a run directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is locked by another run (remove {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn config_hash(cfg: &PipelineConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.output = None;
    Ok(sha256_hex(serde_json::to_string(&c)?.as_bytes()))
}

fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("akipred".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        (
            "config_schema".to_string(),
            CONFIG_SCHEMA_VERSION.to_string(),
        ),
        (
            "model_format".to_string(),
            crate::models::MODEL_FORMAT_VERSION.to_string(),
        ),
    ])
}

struct Timer {
    timings: Vec<StageTiming>,
}

impl Timer {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        log::info!("stage {stage}");
        let out = f().map_err(|e| e.at_stage(stage));
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

/// Everything a finished run produced, kept in memory for callers.
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub cohort_size: usize,
    pub split_sizes: (usize, usize, usize),
    pub comparison: CohortComparison,
    pub reports: Vec<EvaluationReport>,
    pub models: Vec<FittedModel>,
    pub summaries: Vec<AttributionSummary>,
}

/// Runs every stage and writes all artifacts plus `manifest.json` to `out`.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let _lock = RunLock::acquire(out)?;
    let mut w = ArtifactWriter::new(out)?;
    let mut timer = Timer {
        timings: Vec::new(),
    };
    let hash = config_hash(cfg)?;
    let result = run_stages(cfg, &mut w, &mut timer);
    let (status, failed_stage, error) = match &result {
        Ok(_) => ("complete".to_string(), None, None),
        Err(e) => {
            let stage = match e {
                Error::Stage { stage, .. } => Some(stage.to_string()),
                _ => None,
            };
            ("failed".to_string(), stage, Some(e.to_string()))
        }
    };
    let manifest = RunManifest {
        status,
        failed_stage,
        error,
        config_hash: hash,
        seed: cfg.seed,
        artifacts: w.entries()?,
        timings: timer.timings,
        versions: versions(),
    };
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| Error::io(&path, e))?;
    let mut outcome = result?;
    outcome.manifest = manifest;
    Ok(outcome)
}

fn run_stages(cfg: &PipelineConfig, w: &mut ArtifactWriter, t: &mut Timer) -> Result<RunOutcome> {
    let mut resolved = cfg.clone();
    resolved.output = None;
    w.text("config.json", &(resolved.to_json()? + "\n"))?;

    let cohort = t.run("cohort", || {
        let table = source_table(cfg)?;
        stage_cohort(table, cfg)
    })?;
    w.text("cohort/funnel.csv", &cohort.log.to_csv())?;
    w.dataset("cohort/cohort.csv", &cohort.dataset)?;

    let imputed = t.run("impute", || stage_impute(&cohort.dataset, cfg))?;
    w.text("impute/missingness.csv", &imputed.missingness_csv())?;
    w.dataset("impute/imputed.csv", &imputed.dataset)?;

    let selected = t.run("select", || stage_select(&imputed.dataset, cfg))?;
    w.text(
        "select/cohort_characteristics.csv",
        &selected.comparison.to_csv(),
    )?;
    w.text("select/correlations.csv", &selected.report.to_csv())?;
    w.dataset("select/selected.csv", &selected.dataset)?;

    let split = t.run("split", || stage_split(&selected.dataset, cfg))?;
    w.dataset("split/train.csv", &split.train)?;
    w.dataset("split/test.csv", &split.test)?;
    w.dataset("split/validation.csv", &split.validation)?;

    let models = t.run("train", || stage_train(&split.train, cfg))?;
    for m in &models {
        w.model(&format!("models/{}.json", m.name), m)?;
    }

    let calibrators = if cfg.evaluation.calibrate {
        let c = t.run("calibrate", || stage_calibrate(&models, &split.validation))?;
        for (m, cal) in models.iter().zip(&c) {
            w.json(&format!("models/{}.isotonic.json", m.name), cal)?;
        }
        Some(c)
    } else {
        None
    };

    let train_orig = original_rows(&split.train);
    let reports = t.run("evaluate", || {
        [
            ("train", &train_orig),
            ("validation", &split.validation),
            ("test", &split.test),
        ]
        .into_iter()
        .map(|(name, d)| evaluate_partition(name, &models, calibrators.as_deref(), d, cfg))
        .collect::<Result<Vec<_>>>()
    })?;
    let test = &reports[2];
    w.text("evaluate/model_comparison.csv", &test.to_csv())?;
    w.text("evaluate/model_comparison.json", &(test.to_json()? + "\n"))?;
    w.text("evaluate/roc_points.csv", &test.roc_csv())?;
    w.text("evaluate/calibration_points.csv", &test.calibration_csv())?;
    w.text("evaluate/partition_auc.csv", &partition_table(&reports))?;
    for (name, d) in [
        ("train", &train_orig),
        ("validation", &split.validation),
        ("test", &split.test),
    ] {
        w.text(
            &format!("evaluate/predictions_{name}.csv"),
            &predictions_csv(&models, d)?,
        )?;
    }
    w.text("plots/roc.svg", &plot::roc_svg(test))?;
    w.text("plots/calibration.svg", &plot::calibration_svg(test, false))?;
    if calibrators.is_some() {
        w.text(
            "plots/calibration_isotonic.svg",
            &plot::calibration_svg(test, true),
        )?;
    }

    let summaries = t.run("explain", || {
        cfg.explain
            .models
            .iter()
            .map(|name| {
                let m = models
                    .iter()
                    .find(|m| &m.name == name)
                    .expect("validated name");
                stage_explain(m, &split.train, &split.test, cfg)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for e in &summaries {
        let name = &e.summary.model;
        w.text(&format!("explain/{name}_summary.csv"), &e.summary.to_csv())?;
        w.text(
            &format!("explain/{name}_attributions.csv"),
            &attributions_csv(split.test.feature_names(), &e.attributions),
        )?;
        w.text(
            &format!("plots/shapley_{name}.svg"),
            &plot::importance_svg(&e.summary),
        )?;
    }

    Ok(RunOutcome {
        manifest: RunManifest {
            status: String::new(),
            failed_stage: None,
            error: None,
            config_hash: String::new(),
            seed: cfg.seed,
            artifacts: Vec::new(),
            timings: Vec::new(),
            versions: BTreeMap::new(),
        },
        cohort_size: cohort.dataset.n_rows(),
        split_sizes: (
            original_rows(&split.train).n_rows(),
            split.test.n_rows(),
            split.validation.n_rows(),
        ),
        comparison: selected.comparison,
        reports,
        models,
        summaries: summaries.into_iter().map(|e| e.summary).collect(),
    })
}
