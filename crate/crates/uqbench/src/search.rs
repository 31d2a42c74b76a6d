//! Seeded random search over declared hyperparameter spaces, scored by mean
//! k-fold validation NLL on the train role. Finite spaces are enumerated
//! first when the budget allows, so every declared candidate gets a score.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use serde_json::json;

use uq_core::neural::gaussian_nll;
use uq_core::neural_uq::{fit_ensemble, BnnConfig, BnnPredictor, McdPredictor};
use uq_core::{Dataset, Role, RngStream};

use crate::config::{
    ConfigError, ExperimentConfig, HiddenChoices, IntValues, MethodConfig, MethodSearchSpace,
    NumRange, ResolvedMethod,
};
use crate::runner::HarnessError;

const STREAM_SEARCH_DRAWS: u64 = 40;
const STREAM_SEARCH_FOLDS: u64 = 41;
const STREAM_SEARCH_FIT_BASE: u64 = 42_000;
const STREAM_SEARCH_EVAL_BASE: u64 = 43_000_000;

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub method: String,
    pub trial: usize,
    pub params: serde_json::Value,
    pub mean_val_nll: f64,
    pub var_val_nll: f64,
}

pub struct SearchOutcome {
    pub hash: String,
    pub out_dir: PathBuf,
    pub trials: Vec<TrialRecord>,
    /// Best candidate per method (lowest mean validation NLL, earliest trial
    /// on ties).
    pub best: BTreeMap<String, TrialRecord>,
}

enum FittedNn {
    Mcd(McdPredictor),
    De(uq_core::neural_uq::EnsemblePredictor),
    Bnn(BnnPredictor),
}

impl FittedNn {
    fn predict_gaussian(
        &self,
        x: &[f64],
        rng: &mut RngStream,
    ) -> Result<uq_core::GaussianPrediction, String> {
        match self {
            FittedNn::Mcd(m) => m.predict_gaussian(x, rng).map_err(|e| e.to_string()),
            FittedNn::De(m) => m.predict_gaussian(x).map_err(|e| e.to_string()),
            FittedNn::Bnn(m) => m.predict_gaussian(x, rng).map_err(|e| e.to_string()),
        }
    }
}

fn draw_candidate(
    base: &MethodConfig,
    space: &MethodSearchSpace,
    rng: &mut RngStream,
) -> MethodConfig {
    let mut out = base.clone();
    if let Some(r) = &space.learning_rate {
        out.learning_rate = Some(draw_num(r, rng));
    }
    if let Some(r) = &space.dropout {
        out.dropout = Some(draw_num(r, rng));
    }
    if let Some(r) = &space.l2_penalty {
        out.l2_penalty = Some(draw_num(r, rng));
    }
    if let Some(IntValues { values }) = &space.epochs {
        out.epochs = Some(values[(rng.uniform(0.0, values.len() as f64)) as usize % values.len()]);
    }
    if let Some(IntValues { values }) = &space.batch_size {
        out.batch_size =
            Some(values[(rng.uniform(0.0, values.len() as f64)) as usize % values.len()]);
    }
    if let Some(HiddenChoices { choices }) = &space.hidden {
        out.hidden =
            Some(choices[(rng.uniform(0.0, choices.len() as f64)) as usize % choices.len()].clone());
    }
    out
}

fn draw_num(range: &NumRange, rng: &mut RngStream) -> f64 {
    match range {
        NumRange::Log { log_min, log_max } => (rng.uniform(log_min.ln(), log_max.ln())).exp(),
        NumRange::Lin { min, max } => rng.uniform(*min, *max),
        NumRange::Values { values } => {
            values[(rng.uniform(0.0, values.len() as f64)) as usize % values.len()]
        }
    }
}

/// Number of combinations when every declared dimension is a finite choice
/// list; `None` when any dimension is continuous.
fn finite_combinations(space: &MethodSearchSpace) -> Option<usize> {
    let mut total = 1usize;
    let mut mul = |n: usize| {
        total = total.saturating_mul(n.max(1));
    };
    match &space.learning_rate {
        Some(NumRange::Values { values }) => mul(values.len()),
        Some(_) => return None,
        None => {}
    }
    match &space.dropout {
        Some(NumRange::Values { values }) => mul(values.len()),
        Some(_) => return None,
        None => {}
    }
    match &space.l2_penalty {
        Some(NumRange::Values { values }) => mul(values.len()),
        Some(_) => return None,
        None => {}
    }
    if let Some(IntValues { values }) = &space.epochs {
        mul(values.len());
    }
    if let Some(IntValues { values }) = &space.batch_size {
        mul(values.len());
    }
    if let Some(HiddenChoices { choices }) = &space.hidden {
        mul(choices.len());
    }
    Some(total)
}

/// Candidate at a mixed-radix index of the finite space.
fn enumerate_candidate(
    base: &MethodConfig,
    space: &MethodSearchSpace,
    mut index: usize,
) -> MethodConfig {
    let mut out = base.clone();
    let mut take = |len: usize| -> usize {
        let choice = index % len;
        index /= len;
        choice
    };
    if let Some(NumRange::Values { values }) = &space.learning_rate {
        out.learning_rate = Some(values[take(values.len())]);
    }
    if let Some(NumRange::Values { values }) = &space.dropout {
        out.dropout = Some(values[take(values.len())]);
    }
    if let Some(NumRange::Values { values }) = &space.l2_penalty {
        out.l2_penalty = Some(values[take(values.len())]);
    }
    if let Some(IntValues { values }) = &space.epochs {
        out.epochs = Some(values[take(values.len())]);
    }
    if let Some(IntValues { values }) = &space.batch_size {
        out.batch_size = Some(values[take(values.len())]);
    }
    if let Some(HiddenChoices { choices }) = &space.hidden {
        out.hidden = Some(choices[take(choices.len())].clone());
    }
    out
}

fn fit_candidate(
    method: &ResolvedMethod,
    data: &Dataset,
    rng: &mut RngStream,
) -> Result<FittedNn, String> {
    let dim = data.dim();
    match method {
        ResolvedMethod::Mcd(nn) => {
            let spec = uq_core::neural::MlpSpec::new(
                dim,
                &nn.hidden,
                nn.activation,
                nn.dropout,
                rng.draw_u64(),
            )
            .map_err(|e| e.to_string())?;
            McdPredictor::fit(&spec, &nn.train_config(), data, nn.n_samples, rng)
                .map(FittedNn::Mcd)
                .map_err(|e| e.to_string())
        }
        ResolvedMethod::De(nn) => {
            let spec = uq_core::neural::MlpSpec::new(
                dim,
                &nn.hidden,
                nn.activation,
                nn.dropout,
                rng.draw_u64(),
            )
            .map_err(|e| e.to_string())?;
            fit_ensemble(&spec, &nn.train_config(), data, nn.n_samples, rng)
                .map(FittedNn::De)
                .map_err(|e| e.to_string())
        }
        ResolvedMethod::Bnn(nn) => {
            let spec = uq_core::neural::MlpSpec::new(dim, &nn.hidden, nn.activation, 0.0, rng.draw_u64())
                .map_err(|e| e.to_string())?;
            let bnn_config = BnnConfig {
                prior_std: nn.prior_std,
                samples: nn.n_samples,
                kl_weight: nn.kl_weight,
                ..BnnConfig::default()
            };
            BnnPredictor::fit(&spec, &nn.train_config(), &bnn_config, data, rng)
                .map(FittedNn::Bnn)
                .map_err(|e| e.to_string())
        }
        other => Err(format!(
            "random search supports mcd, de and bnn; got {}",
            other.name()
        )),
    }
}

/// Mean and variance of per-fold validation NLL. Folds and all evaluation
/// streams are pure functions of the config seed, so identical candidates
/// always score identically.
fn cross_validate(
    method: &ResolvedMethod,
    data: &Dataset,
    k: usize,
    root: &RngStream,
) -> Result<(f64, f64), String> {
    let (xs, ys) = data.role_points(Role::Train);
    let n = xs.len();
    if k < 2 || k > n {
        return Err(format!("k-fold needs 2 <= k <= {n}, got {k}"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    root.substream(STREAM_SEARCH_FOLDS).shuffle(&mut order);

    let mut fold_scores = Vec::with_capacity(k);
    for fold in 0..k {
        let start = fold * n / k;
        let end = (fold + 1) * n / k;
        let hold = &order[start..end];
        let mut tx = Vec::with_capacity(n - hold.len());
        let mut ty = Vec::with_capacity(n - hold.len());
        for &i in order[..start].iter().chain(&order[end..]) {
            tx.push(xs[i].clone());
            ty.push(ys[i]);
        }
        let train_data = Dataset::all_train(tx, ty).map_err(|e| e.to_string())?;
        let mut fit_rng = root.substream(STREAM_SEARCH_FIT_BASE + fold as u64);
        let fitted = fit_candidate(method, &train_data, &mut fit_rng)?;
        let mut total = 0.0;
        for (j, &i) in hold.iter().enumerate() {
            let mut eval_rng =
                root.substream(STREAM_SEARCH_EVAL_BASE + (fold * 1_000_000 + j) as u64);
            let pred = fitted.predict_gaussian(&xs[i], &mut eval_rng)?;
            total += gaussian_nll(pred, ys[i]);
        }
        fold_scores.push(total / hold.len() as f64);
    }
    let mean = fold_scores.iter().sum::<f64>() / k as f64;
    let var = fold_scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / k as f64;
    Ok((mean, var))
}

fn csv_quote(text: &str) -> String {
    format!("\"{}\"", text.replace('"', "\"\""))
}

/// Run the declared search spaces with `budget` trials per method.
pub fn random_search(
    config: &ExperimentConfig,
    budget: usize,
) -> Result<SearchOutcome, HarnessError> {
    config.validate()?;
    if budget == 0 {
        return Err(ConfigError::Invalid("search budget must be >= 1".into()).into());
    }
    let search = config
        .search
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("config has no [search] section".into()))?;
    if search.spaces.is_empty() {
        return Err(ConfigError::Invalid("search space is empty".into()).into());
    }
    let hash = config.content_hash()?;
    let root = RngStream::new(config.seed);
    let bench_data = crate::runner::dataset_for(config, &root)?;

    let mut trials = Vec::new();
    let mut best: BTreeMap<String, TrialRecord> = BTreeMap::new();

    for (method_name, space) in &search.spaces {
        let base = config
            .methods
            .iter()
            .find(|m| &m.name == method_name)
            .cloned()
            .unwrap_or_else(|| MethodConfig::named(method_name));
        let mut draw_rng = root.substream(STREAM_SEARCH_DRAWS);

        let candidates: Vec<MethodConfig> = match finite_combinations(space) {
            Some(total) if budget >= total => {
                let mut all: Vec<MethodConfig> =
                    (0..total).map(|i| enumerate_candidate(&base, space, i)).collect();
                for _ in total..budget {
                    all.push(draw_candidate(&base, space, &mut draw_rng));
                }
                all
            }
            _ => (0..budget)
                .map(|_| draw_candidate(&base, space, &mut draw_rng))
                .collect(),
        };

        for (trial, candidate) in candidates.into_iter().enumerate() {
            let resolved = config
                .resolve_single(&candidate)
                .map_err(HarnessError::Config)?;
            let params = serde_json::to_value(&candidate).expect("method config serializes");
            let record = match cross_validate(&resolved, &bench_data, search.k_folds, &root) {
                Ok((mean, var)) => TrialRecord {
                    method: method_name.clone(),
                    trial,
                    params,
                    mean_val_nll: mean,
                    var_val_nll: var,
                },
                Err(message) => TrialRecord {
                    method: method_name.clone(),
                    trial,
                    params: json!({"error": message}),
                    mean_val_nll: f64::INFINITY,
                    var_val_nll: f64::INFINITY,
                },
            };
            let improves = best
                .get(method_name)
                .map(|cur| record.mean_val_nll < cur.mean_val_nll)
                .unwrap_or(true);
            if improves {
                best.insert(method_name.clone(), record.clone());
            }
            trials.push(record);
        }
    }

    let out_dir = config.out_dir.join(&hash);
    std::fs::create_dir_all(&out_dir).map_err(|e| HarnessError::Io {
        path: out_dir.clone(),
        message: e.to_string(),
    })?;
    let trials_path = out_dir.join("search_trials.csv");
    {
        let file = std::fs::File::create(&trials_path).map_err(|e| HarnessError::Io {
            path: trials_path.clone(),
            message: e.to_string(),
        })?;
        let mut w = std::io::BufWriter::new(file);
        let io_err = |e: std::io::Error| HarnessError::Io {
            path: trials_path.clone(),
            message: e.to_string(),
        };
        writeln!(w, "method,trial,params,mean_val_nll,var_val_nll").map_err(io_err)?;
        for t in &trials {
            writeln!(
                w,
                "{},{},{},{},{}",
                t.method,
                t.trial,
                csv_quote(&t.params.to_string()),
                t.mean_val_nll,
                t.var_val_nll
            )
            .map_err(io_err)?;
        }
    }
    let best_path = out_dir.join("search_best.json");
    let best_json: serde_json::Value = best
        .iter()
        .map(|(name, t)| {
            (
                name.clone(),
                json!({
                    "trial": t.trial,
                    "params": t.params,
                    "mean_val_nll": t.mean_val_nll,
                    "var_val_nll": t.var_val_nll,
                }),
            )
        })
        .collect::<serde_json::Map<String, serde_json::Value>>()
        .into();
    std::fs::write(
        &best_path,
        serde_json::to_string_pretty(&best_json).expect("best serializes"),
    )
    .map_err(|e| HarnessError::Io {
        path: best_path.clone(),
        message: e.to_string(),
    })?;

    Ok(SearchOutcome {
        hash,
        out_dir,
        trials,
        best,
    })
}
