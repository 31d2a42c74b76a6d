//! Experiment configuration: TOML schema, per-method defaults, validation,
//! and the content hash that names every output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use uq_core::datagen::NoiseMode;
use uq_core::gp::{log_space, GpHyper, KernelFamily, KernelSpec};
use uq_core::neural::{Activation, Loss, Optimizer, TrainConfig};
use uq_core::predict::ConfidenceLevel;

pub const KNOWN_METHODS: [&str; 6] = ["gp", "mcd", "de", "bnn", "split-cp", "srcp"];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unknown method {0:?} (known: gp, mcd, de, bnn, split-cp, srcp)")]
    UnknownMethod(String),
    #[error("config must list at least one method")]
    NoMethods,
    #[error("{0}")]
    Invalid(String),
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
}

/// Top-level experiment description. `seed` is mandatory: nothing in a run
/// draws entropy outside the config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Execution detail only; excluded from the content hash.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub grids: GridConfig,
    /// Defaults to all six methods when omitted.
    #[serde(default)]
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub search: Option<SearchConfig>,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum DatasetConfig {
    #[serde(rename = "analytical-gp")]
    AnalyticalGp {
        #[serde(default)]
        n_points: Option<usize>,
        #[serde(default)]
        n_realizations: Option<usize>,
        #[serde(default)]
        noise_mode: Option<NoiseMode>,
    },
    #[serde(rename = "flux-surrogate")]
    FluxSurrogate {
        #[serde(default)]
        n_points: Option<usize>,
        #[serde(default)]
        n_realizations: Option<usize>,
        #[serde(default)]
        rel_noise_std: Option<f64>,
    },
    #[serde(rename = "csv")]
    Csv { path: PathBuf },
}

impl DatasetConfig {
    pub fn analytical_default() -> Self {
        DatasetConfig::AnalyticalGp {
            n_points: None,
            n_realizations: None,
            noise_mode: None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DatasetConfig::AnalyticalGp { .. } => "analytical-gp",
            DatasetConfig::FluxSurrogate { .. } => "flux-surrogate",
            DatasetConfig::Csv { .. } => "csv",
        }
    }
}

/// Train/calibration/test fractions; remainder points go to train.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub calibration: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.5,
            calibration: 0.25,
            test: 0.25,
        }
    }
}

/// Evaluation-grid sizes; the grid locations derive from the dataset domain.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_in_domain: usize,
    pub n_out_per_side: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_in_domain: 200,
            n_out_per_side: 20,
        }
    }
}

/// One method entry; unset fields fall back to dataset-specific defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    // Network methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2_penalty: Option<f64>,
    /// MCD forward passes per query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passes: Option<usize>,
    /// Ensemble size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub members: Option<usize>,
    /// BNN posterior samples per query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_weight: Option<f64>,
    // Conformal methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_model: Option<PointModelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_model: Option<ResidualModelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knn_k: Option<usize>,
    /// Fit the residual-scale model on a held-out half of the train role.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub three_way_split: Option<bool>,
    // GP method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_scales: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_variances: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_variances: Option<Vec<f64>>,
}

impl MethodConfig {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointModelKind {
    Gp,
    Mlp,
    Knn,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualModelKind {
    Gp,
    Mlp,
    Knn,
}

/// Random-search settings: budget, CV folds, per-method spaces.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_k_folds")]
    pub k_folds: usize,
    #[serde(default)]
    pub spaces: std::collections::BTreeMap<String, MethodSearchSpace>,
}

fn default_budget() -> usize {
    20
}

fn default_k_folds() -> usize {
    5
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSearchSpace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<NumRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<NumRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2_penalty: Option<NumRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<IntValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<IntValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<HiddenChoices>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumRange {
    Log { log_min: f64, log_max: f64 },
    Lin { min: f64, max: f64 },
    Values { values: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntValues {
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HiddenChoices {
    pub choices: Vec<Vec<usize>>,
}

/// A method config with every field pinned, ready to fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ResolvedMethod {
    Gp(GpSettings),
    Mcd(NnSettings),
    De(NnSettings),
    Bnn(NnSettings),
    SplitCp(CpSettings),
    Srcp(CpSettings),
}

impl ResolvedMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ResolvedMethod::Gp(_) => "gp",
            ResolvedMethod::Mcd(_) => "mcd",
            ResolvedMethod::De(_) => "de",
            ResolvedMethod::Bnn(_) => "bnn",
            ResolvedMethod::SplitCp(_) => "split-cp",
            ResolvedMethod::Srcp(_) => "srcp",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpSettings {
    pub kernel: KernelFamily,
    pub length_scales: Vec<f64>,
    pub output_variances: Vec<f64>,
    pub noise_variances: Vec<f64>,
}

impl GpSettings {
    pub fn grid(&self) -> Vec<GpHyper> {
        let mut grid = Vec::new();
        for &l in &self.length_scales {
            for &s2 in &self.output_variances {
                for &noise in &self.noise_variances {
                    grid.push(GpHyper {
                        kernel: KernelSpec {
                            family: self.kernel,
                            length_scale: l,
                            variance: s2,
                        },
                        noise_var: noise,
                    });
                }
            }
        }
        grid
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NnSettings {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2_penalty: f64,
    /// Passes for MCD, members for DE, posterior samples for BNN.
    pub n_samples: usize,
    pub prior_std: f64,
    pub kl_weight: f64,
}

impl NnSettings {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            optimizer: Optimizer::Adam,
            loss: Loss::GaussianNll,
            l2_penalty: self.l2_penalty,
            k_folds: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpSettings {
    pub point_model: PointModelKind,
    pub residual_model: ResidualModelKind,
    pub knn_k: usize,
    pub three_way_split: bool,
    /// Settings for GP point/residual models.
    pub gp: GpSettings,
    /// Settings for MLP point/residual models.
    pub mlp: NnSettings,
}

/// Dataset-family defaults for the network methods.
struct MethodDefaults {
    mcd: NnSettings,
    de: NnSettings,
    bnn: NnSettings,
}

fn gp_default_settings(kernel: KernelFamily, domain_span: f64, y_scale: f64) -> GpSettings {
    let s2 = y_scale * y_scale;
    GpSettings {
        kernel,
        length_scales: log_space(0.01 * domain_span, 0.5 * domain_span, 6),
        output_variances: vec![0.25 * s2, s2, 4.0 * s2],
        noise_variances: log_space(1e-4 * s2, 0.5 * s2, 6),
    }
}

fn defaults_for(dataset: &DatasetConfig) -> MethodDefaults {
    let base = NnSettings {
        hidden: vec![64, 64],
        activation: Activation::Tanh,
        dropout: 0.0,
        learning_rate: 1e-3,
        batch_size: 128,
        epochs: 300,
        l2_penalty: 0.0,
        n_samples: 100,
        prior_std: 1.0,
        kl_weight: 1.0,
    };
    match dataset {
        DatasetConfig::AnalyticalGp { .. } => MethodDefaults {
            mcd: NnSettings {
                hidden: vec![200, 500, 500, 200],
                dropout: 0.25,
                epochs: 150,
                ..base.clone()
            },
            de: NnSettings {
                hidden: vec![200, 500, 500, 200],
                epochs: 150,
                n_samples: 5,
                ..base.clone()
            },
            bnn: NnSettings {
                hidden: vec![10, 10, 10],
                learning_rate: 1e-2,
                batch_size: 64,
                epochs: 600,
                ..base
            },
        },
        DatasetConfig::FluxSurrogate { .. } => MethodDefaults {
            mcd: NnSettings {
                hidden: vec![247, 322, 486],
                activation: Activation::Relu,
                dropout: 0.11,
                learning_rate: 1.9e-3,
                batch_size: 128,
                epochs: 1000,
                ..base.clone()
            },
            de: NnSettings {
                hidden: vec![141, 434, 244],
                activation: Activation::Relu,
                learning_rate: 3.2e-3,
                batch_size: 128,
                epochs: 1000,
                n_samples: 5,
                ..base.clone()
            },
            bnn: NnSettings {
                hidden: vec![323, 81, 311],
                activation: Activation::Relu,
                learning_rate: 1.9e-3,
                batch_size: 64,
                epochs: 1000,
                ..base
            },
        },
        DatasetConfig::Csv { .. } => MethodDefaults {
            mcd: NnSettings {
                dropout: 0.1,
                ..base.clone()
            },
            de: NnSettings {
                n_samples: 5,
                ..base.clone()
            },
            bnn: NnSettings {
                batch_size: 64,
                ..base
            },
        },
    }
}

impl ExperimentConfig {
    /// The default benchmark: analytical dataset, all six methods.
    pub fn analytical_default(seed: u64) -> Self {
        Self {
            seed,
            alpha: 0.05,
            out_dir: default_out_dir(),
            dataset: DatasetConfig::analytical_default(),
            split: SplitConfig::default(),
            grids: GridConfig::default(),
            methods: KNOWN_METHODS.iter().map(|m| MethodConfig::named(m)).collect(),
            search: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        ConfidenceLevel::new(self.alpha)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let s = &self.split;
        if s.train <= 0.0
            || s.calibration <= 0.0
            || s.test <= 0.0
            || (s.train + s.calibration + s.test - 1.0).abs() > 1e-9
        {
            return Err(ConfigError::Invalid(format!(
                "split fractions must be positive and sum to 1, got ({}, {}, {})",
                s.train, s.calibration, s.test
            )));
        }
        if self.grids.n_in_domain < 2 || self.grids.n_out_per_side < 1 {
            return Err(ConfigError::Invalid(
                "grids need n_in_domain >= 2 and n_out_per_side >= 1".into(),
            ));
        }
        for method in &self.methods {
            if !KNOWN_METHODS.contains(&method.name.as_str()) {
                return Err(ConfigError::UnknownMethod(method.name.clone()));
            }
        }
        if let Some(search) = &self.search {
            for name in search.spaces.keys() {
                if !KNOWN_METHODS.contains(&name.as_str()) {
                    return Err(ConfigError::UnknownMethod(name.clone()));
                }
            }
        }
        if let DatasetConfig::Csv { path } = &self.dataset {
            if !path.exists() {
                return Err(ConfigError::MissingFile(path.clone()));
            }
        }
        Ok(())
    }

    /// Methods with defaults applied; the full list when none are configured.
    pub fn resolved_methods(&self) -> Result<Vec<ResolvedMethod>, ConfigError> {
        let configs: Vec<MethodConfig> = if self.methods.is_empty() {
            KNOWN_METHODS.iter().map(|m| MethodConfig::named(m)).collect()
        } else {
            self.methods.clone()
        };
        if configs.is_empty() {
            return Err(ConfigError::NoMethods);
        }
        configs.iter().map(|m| self.resolve_method(m)).collect()
    }

    fn dataset_scales(&self) -> (f64, f64) {
        // (domain span, rough target scale) for default GP grids.
        match &self.dataset {
            DatasetConfig::AnalyticalGp { .. } => (10.0, 4.0),
            DatasetConfig::FluxSurrogate { .. } => (600.0, 4.0),
            DatasetConfig::Csv { .. } => (10.0, 1.0),
        }
    }

    /// Resolve one method entry against this config's defaults.
    pub fn resolve_single(&self, method: &MethodConfig) -> Result<ResolvedMethod, ConfigError> {
        self.resolve_method(method)
    }

    fn resolve_method(&self, method: &MethodConfig) -> Result<ResolvedMethod, ConfigError> {
        let defaults = defaults_for(&self.dataset);
        let (span, y_scale) = self.dataset_scales();
        let resolve_nn = |base: &NnSettings, n_samples_default: usize| NnSettings {
            hidden: method.hidden.clone().unwrap_or_else(|| base.hidden.clone()),
            activation: method.activation.unwrap_or(base.activation),
            dropout: method.dropout.unwrap_or(base.dropout),
            learning_rate: method.learning_rate.unwrap_or(base.learning_rate),
            batch_size: method.batch_size.unwrap_or(base.batch_size),
            epochs: method.epochs.unwrap_or(base.epochs),
            l2_penalty: method.l2_penalty.unwrap_or(base.l2_penalty),
            n_samples: method
                .passes
                .or(method.members)
                .or(method.samples)
                .unwrap_or(n_samples_default),
            prior_std: method.prior_std.unwrap_or(base.prior_std),
            kl_weight: method.kl_weight.unwrap_or(base.kl_weight),
        };
        let gp_settings = |kernel_default: KernelFamily| {
            let base = gp_default_settings(
                method.kernel.unwrap_or(kernel_default),
                span,
                y_scale,
            );
            GpSettings {
                kernel: method.kernel.unwrap_or(kernel_default),
                length_scales: method.length_scales.clone().unwrap_or(base.length_scales),
                output_variances: method
                    .output_variances
                    .clone()
                    .unwrap_or(base.output_variances),
                noise_variances: method
                    .noise_variances
                    .clone()
                    .unwrap_or(base.noise_variances),
            }
        };
        let cp_settings = || CpSettings {
            point_model: method.point_model.unwrap_or(PointModelKind::Gp),
            residual_model: method.residual_model.unwrap_or(ResidualModelKind::Gp),
            knn_k: method.knn_k.unwrap_or(20),
            three_way_split: method.three_way_split.unwrap_or(false),
            gp: gp_settings(KernelFamily::SquaredExponential),
            mlp: NnSettings {
                hidden: method.hidden.clone().unwrap_or_else(|| vec![64, 64]),
                activation: method.activation.unwrap_or(Activation::Tanh),
                dropout: 0.0,
                learning_rate: method.learning_rate.unwrap_or(1e-3),
                batch_size: method.batch_size.unwrap_or(128),
                epochs: method.epochs.unwrap_or(300),
                l2_penalty: method.l2_penalty.unwrap_or(0.0),
                n_samples: 1,
                prior_std: 1.0,
                kl_weight: 1.0,
            },
        };

        let resolved = match method.name.as_str() {
            // The benchmark GP deliberately uses a different kernel family
            // than the generator (squared-exponential), homoscedastic noise.
            "gp" => ResolvedMethod::Gp(gp_settings(KernelFamily::SquaredExponential)),
            "mcd" => {
                let nn = resolve_nn(&defaults.mcd, 100);
                if !(0.0 < nn.dropout && nn.dropout < 1.0) {
                    return Err(ConfigError::Invalid(format!(
                        "mcd requires dropout in (0, 1), got {}",
                        nn.dropout
                    )));
                }
                if nn.n_samples < 2 {
                    return Err(ConfigError::Invalid("mcd needs passes >= 2".into()));
                }
                ResolvedMethod::Mcd(nn)
            }
            "de" => {
                let nn = resolve_nn(&defaults.de, 5);
                if nn.n_samples < 2 {
                    return Err(ConfigError::Invalid("de needs members >= 2".into()));
                }
                ResolvedMethod::De(nn)
            }
            "bnn" => {
                let nn = resolve_nn(&defaults.bnn, 100);
                if nn.dropout != 0.0 {
                    return Err(ConfigError::Invalid(
                        "bnn does not combine with dropout; set dropout = 0".into(),
                    ));
                }
                if nn.n_samples < 2 {
                    return Err(ConfigError::Invalid("bnn needs samples >= 2".into()));
                }
                ResolvedMethod::Bnn(nn)
            }
            "split-cp" => ResolvedMethod::SplitCp(cp_settings()),
            "srcp" => ResolvedMethod::Srcp(cp_settings()),
            other => return Err(ConfigError::UnknownMethod(other.to_string())),
        };
        Ok(resolved)
    }

    /// Hash of everything that determines results (out_dir excluded).
    pub fn content_hash(&self) -> Result<String, ConfigError> {
        let resolved = self.resolved_methods()?;
        let identity = serde_json::json!({
            "seed": self.seed,
            "alpha": self.alpha,
            "dataset": &self.dataset,
            "split": &self.split,
            "grids": &self.grids,
            "methods": &resolved,
            "search": &self.search,
        });
        let mut hasher = Sha256::new();
        hasher.update(identity.to_string().as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(12);
        for byte in digest.iter().take(6) {
            hex.push_str(&format!("{byte:02x}"));
        }
        Ok(hex)
    }

    /// Keep only the named methods (comma-separated CLI filter).
    pub fn retain_methods(&mut self, names: &[String]) -> Result<(), ConfigError> {
        for name in names {
            if !KNOWN_METHODS.contains(&name.as_str()) {
                return Err(ConfigError::UnknownMethod(name.clone()));
            }
        }
        if self.methods.is_empty() {
            self.methods = KNOWN_METHODS.iter().map(|m| MethodConfig::named(m)).collect();
        }
        self.methods.retain(|m| names.contains(&m.name));
        if self.methods.is_empty() {
            return Err(ConfigError::NoMethods);
        }
        Ok(())
    }
}
