//! The six model families and a common fitted-model wrapper.
//!
//! Every trainer standardizes features with training-set statistics and the
//! resulting [`FittedModel`] applies the same transform at prediction time.

pub mod boosting;
pub mod forest;
pub mod knn;
pub mod logistic;
pub mod svm;
pub mod tree;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use boosting::{BoostedModel, BoostingConfig, Growth};
use forest::ForestConfig;
use knn::{KnnConfig, KnnModel};
use logistic::{sigmoid, LogisticConfig};
use svm::{SvmConfig, SvmModel};
use tree::Tree;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostingPreset {
    XgbLike,
    LgbmLike,
}

/// Optional changes on top of a boosting preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostingOverrides {
    pub growth: Option<Growth>,
    pub max_depth: Option<usize>,
    pub max_leaves: Option<usize>,
    pub lambda_l2: Option<f64>,
    pub lambda_l1: Option<f64>,
    pub learning_rate: Option<f64>,
    pub rounds: Option<usize>,
    pub min_child_hessian: Option<f64>,
    pub min_leaf_samples: Option<usize>,
}

impl BoostingOverrides {
    pub fn apply(&self, preset: BoostingPreset) -> BoostingConfig {
        let mut c = match preset {
            BoostingPreset::XgbLike => BoostingConfig::xgb_like(),
            BoostingPreset::LgbmLike => BoostingConfig::lgbm_like(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(
            growth,
            max_depth,
            max_leaves,
            lambda_l2,
            lambda_l1,
            learning_rate,
            rounds,
            min_child_hessian,
            min_leaf_samples
        );
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Logistic(LogisticConfig),
    Knn(KnnConfig),
    RandomForest(ForestConfig),
    BoostedTrees {
        preset: BoostingPreset,
        #[serde(default)]
        overrides: BoostingOverrides,
    },
    SvmRbf(SvmConfig),
}

impl ModelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::Logistic(_) => "logistic",
            ModelSpec::Knn(_) => "knn",
            ModelSpec::RandomForest(_) => "random_forest",
            ModelSpec::BoostedTrees { .. } => "boosted_trees",
            ModelSpec::SvmRbf(_) => "svm_rbf",
        }
    }

    /// Default configuration for a family name; boosted trees accept
    /// `xgboost` and `lightgbm` for the two presets.
    pub fn default_for(family: &str) -> Result<Self> {
        Ok(match family {
            "logistic" => ModelSpec::Logistic(LogisticConfig::default()),
            "knn" => ModelSpec::Knn(KnnConfig::default()),
            "random_forest" => ModelSpec::RandomForest(ForestConfig::default()),
            "xgboost" | "boosted_trees" => ModelSpec::BoostedTrees {
                preset: BoostingPreset::XgbLike,
                overrides: BoostingOverrides::default(),
            },
            "lightgbm" => ModelSpec::BoostedTrees {
                preset: BoostingPreset::LgbmLike,
                overrides: BoostingOverrides::default(),
            },
            "svm" | "svm_rbf" => ModelSpec::SvmRbf(SvmConfig::default()),
            other => return Err(Error::Config(format!("unknown model family `{other}`"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Logistic(c) => c.validate(),
            ModelSpec::Knn(c) if c.k == 0 => Err(Error::Config("k must be at least 1".into())),
            ModelSpec::Knn(_) => Ok(()),
            ModelSpec::RandomForest(c) => c.validate(),
            ModelSpec::BoostedTrees { preset, overrides } => overrides.apply(*preset).validate(),
            ModelSpec::SvmRbf(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Identifier used for artifact names and seed derivation.
    pub name: String,
    /// Fixed seed; when absent one is derived from the global seed and the name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub spec: ModelSpec,
}

impl ModelConfig {
    pub fn new(name: impl Into<String>, spec: ModelSpec) -> Self {
        Self {
            name: name.into(),
            seed: None,
            spec,
        }
    }

    pub fn resolve_seed(&self, global: u64) -> u64 {
        self.seed
            .unwrap_or_else(|| derive_seed(global, &format!("train:{}", self.name), 0))
    }
}

/// The six models in their default configurations.
pub fn default_model_configs() -> Vec<ModelConfig> {
    [
        "logistic",
        "xgboost",
        "knn",
        "svm",
        "random_forest",
        "lightgbm",
    ]
    .into_iter()
    .map(|name| {
        let mut c = ModelConfig::new(name, ModelSpec::default_for(name).expect("known family"));
        if name == "lightgbm" {
            c.seed = Some(42);
        }
        c
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Logistic {
        weights: Vec<f64>,
        intercept: f64,
        iterations: usize,
        converged: bool,
    },
    Knn(KnnModel),
    RandomForest {
        trees: Vec<Tree>,
    },
    BoostedTrees(BoostedModel),
    SvmRbf(SvmModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub n_train: usize,
    pub feature_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format_version: u32,
    pub name: String,
    pub config: ModelSpec,
    pub standardizer: Standardizer,
    pub params: ModelParams,
    pub meta: TrainingMeta,
}

pub fn fit(config: &ModelConfig, train: &Dataset, seed: u64) -> Result<FittedModel> {
    config.spec.validate()?;
    if train.has_missing() {
        return Err(Error::InvalidInput(
            "training data still has missing values".into(),
        ));
    }
    let (neg, pos) = train.class_counts();
    let single_class = pos == 0 || neg == 0;
    let standardizer = Standardizer::fit(train);
    let z = standardizer.transform_dataset(train);
    let labels = train.labels();
    let params = match &config.spec {
        ModelSpec::Logistic(c) => {
            if single_class {
                return Err(Error::SingleClass("logistic training data"));
            }
            let f = logistic::fit_newton(&z, &train.labels_f64(), c)?;
            if !f.converged {
                log::warn!(
                    "{}: logistic fit stopped after {} iterations",
                    config.name,
                    f.iterations
                );
            }
            ModelParams::Logistic {
                weights: f.weights,
                intercept: f.intercept,
                iterations: f.iterations,
                converged: f.converged,
            }
        }
        ModelSpec::Knn(c) => ModelParams::Knn(knn::fit_knn(z, labels.to_vec(), c)?),
        ModelSpec::RandomForest(c) => ModelParams::RandomForest {
            trees: forest::fit_forest(&z, labels, c, seed)?,
        },
        ModelSpec::BoostedTrees { preset, overrides } => ModelParams::BoostedTrees(
            boosting::fit_boosted(&z, labels, &overrides.apply(*preset))?,
        ),
        ModelSpec::SvmRbf(c) => ModelParams::SvmRbf(svm::fit_svm(&z, labels, c, seed)?),
    };
    Ok(FittedModel {
        format_version: MODEL_FORMAT_VERSION,
        name: config.name.clone(),
        config: config.spec.clone(),
        standardizer,
        params,
        meta: TrainingMeta {
            seed,
            n_train: train.n_rows(),
            feature_names: train.feature_names().to_vec(),
        },
    })
}

impl FittedModel {
    pub fn n_features(&self) -> usize {
        self.standardizer.dim()
    }

    /// True when [`margin`](Self::margin) is a log-odds rather than a probability.
    pub fn margin_is_log_odds(&self) -> bool {
        matches!(
            self.params,
            ModelParams::Logistic { .. } | ModelParams::BoostedTrees(_)
        )
    }

    /// Model output before the final link: log-odds for logistic and boosted
    /// trees, probability for the other families.
    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                actual: x.len(),
            });
        }
        let z = self.standardizer.transform(x);
        Ok(self.margin_standardized(&z))
    }

    pub fn margin_standardized(&self, z: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Logistic {
                weights, intercept, ..
            } => weights.iter().zip(z).map(|(w, v)| w * v).sum::<f64>() + intercept,
            ModelParams::Knn(m) => m.predict(z),
            ModelParams::RandomForest { trees } => forest::predict_forest(trees, z),
            ModelParams::BoostedTrees(m) => m.margin(z),
            ModelParams::SvmRbf(m) => m.probability(z),
        }
    }

    fn link(&self, margin: f64) -> f64 {
        let p = if self.margin_is_log_odds() {
            sigmoid(margin)
        } else {
            margin
        };
        p.clamp(0.0, 1.0)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(self.link(self.margin(x)?))
    }

    pub fn predict_dataset(&self, d: &Dataset) -> Result<Vec<f64>> {
        if d.n_features() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                actual: d.n_features(),
            });
        }
        if d.feature_names() != self.meta.feature_names.as_slice() {
            return Err(Error::Schema(format!(
                "model `{}` was trained on features {:?}",
                self.name, self.meta.feature_names
            )));
        }
        Ok(d.rows()
            .map(|r| self.link(self.margin_standardized(&self.standardizer.transform(r))))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        match v.get("format_version").and_then(|f| f.as_u64()) {
            Some(f) if f == u64::from(MODEL_FORMAT_VERSION) => Ok(serde_json::from_value(v)?),
            other => Err(Error::Schema(format!(
                "unsupported model format version {other:?}, expected {MODEL_FORMAT_VERSION}"
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureKind;

    fn toy(n: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                vec![
                    (i as f64 * 0.37).sin() * 3.0 + 10.0,
                    (i % 7) as f64,
                    (i % 2) as f64,
                ]
            })
            .collect();
        let labels = rows
            .iter()
            .map(|r| u8::from(r[0] - 10.0 + 0.2 * r[1] > 0.3))
            .collect();
        Dataset::from_rows(
            &rows,
            labels,
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                FeatureKind::Continuous,
                FeatureKind::Continuous,
                FeatureKind::Binary,
            ],
        )
        .unwrap()
    }

    #[test]
    fn every_family_round_trips_exactly() {
        let d = toy(300);
        for mut cfg in default_model_configs() {
            if let ModelSpec::BoostedTrees { overrides, .. } = &mut cfg.spec {
                overrides.rounds = Some(20);
            }
            if let ModelSpec::RandomForest(f) = &mut cfg.spec {
                f.n_trees = 10;
            }
            let m = fit(&cfg, &d, cfg.resolve_seed(5)).unwrap();
            let back = FittedModel::from_json(&m.to_json().unwrap()).unwrap();
            let a = m.predict_dataset(&d).unwrap();
            let b = back.predict_dataset(&d).unwrap();
            assert_eq!(a, b, "{}", cfg.name);
            assert!(a.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn logistic_at_training_means_is_sigmoid_of_intercept() {
        let d = toy(200);
        let m = fit(
            &ModelConfig::new("lr", ModelSpec::default_for("logistic").unwrap()),
            &d,
            0,
        )
        .unwrap();
        let ModelParams::Logistic { intercept, .. } = m.params else {
            unreachable!()
        };
        let p = m.predict_proba(&m.standardizer.means.clone()).unwrap();
        assert!((p - sigmoid(intercept)).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let d = toy(100);
        let m = fit(
            &ModelConfig::new("knn", ModelSpec::Knn(KnnConfig { k: 1 })),
            &d,
            0,
        )
        .unwrap();
        assert!(matches!(
            m.predict_proba(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                actual: 1
            })
        ));
        assert_eq!(
            m.predict_proba(d.row(17)).unwrap(),
            f64::from(d.labels()[17])
        );
    }

    #[test]
    fn config_json_uses_family_tags() {
        let cfg = &default_model_configs()[1];
        let text = serde_json::to_string(cfg).unwrap();
        assert!(text.contains("\"family\":\"boosted_trees\""));
        assert_eq!(&serde_json::from_str::<ModelConfig>(&text).unwrap(), cfg);
        let v: ModelConfig =
            serde_json::from_str(r#"{"name":"x","family":"logistic","c":5.0}"#).unwrap();
        assert_eq!(
            v.spec,
            ModelSpec::Logistic(LogisticConfig {
                c: 5.0,
                ..Default::default()
            })
        );
    }

    #[test]
    fn old_format_version_is_refused() {
        let err = FittedModel::from_json(r#"{"format_version": 0}"#).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }
}
