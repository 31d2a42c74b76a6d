//! Experiment runner: generate or load the dataset, fit every configured
//! method, score intervals on the test role and the evaluation grids, and
//! write per-point tables, the aggregate report and run metadata.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde_json::json;

use uq_core::conformal::{ResidualScaleFit, SplitCpModel, SrcpModel};
use uq_core::datagen::{
    noise_std, sample_realizations, AnalyticalGpSpec, FluxSurrogateSpec,
};
use uq_core::gp::{select_hyperparameters_points, GpModel};
use uq_core::metrics::{
    adaptivity_correlation, empirical_coverage, width_stats, IntervalReport, write_report_csv,
};
use uq_core::neural::{train_points, Loss, MlpSpec, TrainConfig};
use uq_core::neural_uq::{fit_ensemble, BnnConfig, BnnPredictor, EnsemblePredictor, McdPredictor};
use uq_core::predict::{
    ConfidenceLevel, ConstantModel, PointPredictor, PredictionInterval, Predictor,
};
use uq_core::{Dataset, Role, RngStream};

use crate::config::{
    ConfigError, CpSettings, DatasetConfig, ExperimentConfig, NnSettings, PointModelKind,
    ResidualModelKind, ResolvedMethod,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io error at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("dataset: {0}")]
    Data(String),
}

/// Stream ids carved out of the per-run root stream.
const STREAM_DATASET: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_METHOD_BASE: u64 = 100;
/// Per-point evaluation substream bases within one method's stream.
const EVAL_TEST_BASE: u64 = 1 << 20;
const EVAL_GRID_IN_BASE: u64 = 2 << 20;
const EVAL_GRID_OUT_BASE: u64 = 3 << 20;

pub struct RunOutcome {
    pub hash: String,
    pub out_dir: PathBuf,
    pub reports: Vec<IntervalReport>,
    pub failures: Vec<(String, String)>,
}

impl RunOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Everything the runner evaluates against: the split dataset, the noise-std
/// truth profile when known, and the in/out-of-domain grids.
struct Bench {
    data: Dataset,
    truth_std: Option<Box<dyn Fn(f64) -> Option<f64>>>,
    in_grid: Vec<Vec<f64>>,
    out_grid: Vec<Vec<f64>>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64)
        .collect()
}

/// Out-of-domain grid on both sides of `[lo, hi]`, excluding the domain
/// endpoints: `[lo - 0.2 span, lo)` and `(hi, hi + 0.2 span]`.
fn out_domain_grid(lo: f64, hi: f64, per_side: usize) -> Vec<Vec<f64>> {
    let ext = 0.2 * (hi - lo);
    let step = ext / per_side as f64;
    let mut points = Vec::with_capacity(2 * per_side);
    for i in 0..per_side {
        points.push(vec![lo - ext + i as f64 * step]);
    }
    for i in 0..per_side {
        points.push(vec![hi + (i + 1) as f64 * step]);
    }
    points
}

fn build_bench(config: &ExperimentConfig, root: &RngStream) -> Result<Bench, HarnessError> {
    let n_in = config.grids.n_in_domain;
    let per_side = config.grids.n_out_per_side;
    match &config.dataset {
        DatasetConfig::AnalyticalGp {
            n_points,
            n_realizations,
            noise_mode,
        } => {
            let mut spec = AnalyticalGpSpec::default();
            if let Some(n) = n_points {
                spec.n_points = *n;
            }
            if let Some(r) = n_realizations {
                spec.n_realizations = *r;
            }
            if let Some(mode) = noise_mode {
                spec.noise_mode = *mode;
            }
            let mut rng = root.substream(STREAM_DATASET);
            let raw = sample_realizations(&spec, &mut rng).map_err(|e| HarnessError::Data(e.to_string()))?;
            let data = split(config, raw, root)?;
            let (lo, hi) = spec.domain;
            let truth_spec = spec.clone();
            Ok(Bench {
                data,
                truth_std: Some(Box::new(move |x| noise_std(&truth_spec, x).ok())),
                in_grid: linspace(lo, hi, n_in).into_iter().map(|x| vec![x]).collect(),
                out_grid: out_domain_grid(lo, hi, per_side),
            })
        }
        DatasetConfig::FluxSurrogate {
            n_points,
            n_realizations,
            rel_noise_std,
        } => {
            let mut spec = FluxSurrogateSpec::default();
            if let Some(n) = n_points {
                spec.n_points = *n;
            }
            if let Some(r) = n_realizations {
                spec.n_realizations = *r;
            }
            if let Some(s) = rel_noise_std {
                spec.rel_noise_std = *s;
            }
            let mut rng = root.substream(STREAM_DATASET);
            let raw = spec.sample(&mut rng).map_err(|e| HarnessError::Data(e.to_string()))?;
            let data = split(config, raw, root)?;
            let (lo, hi) = spec.domain;
            let truth_spec = spec.clone();
            Ok(Bench {
                data,
                truth_std: Some(Box::new(move |x| Some(truth_spec.noise_std(x)))),
                in_grid: linspace(lo, hi, n_in).into_iter().map(|x| vec![x]).collect(),
                out_grid: out_domain_grid(lo, hi, per_side),
            })
        }
        DatasetConfig::Csv { path } => {
            let raw = Dataset::read_csv_path(path).map_err(|e| HarnessError::Data(e.to_string()))?;
            // Trust roles already present in the file; otherwise split here.
            let has_roles = raw.count_role(Role::Calibration) > 0 && raw.count_role(Role::Test) > 0;
            let data = if has_roles { raw } else { split(config, raw, root)? };
            let (in_grid, out_grid) = if data.dim() == 1 {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for i in 0..data.len() {
                    lo = lo.min(data.input(i)[0]);
                    hi = hi.max(data.input(i)[0]);
                }
                (
                    linspace(lo, hi, n_in).into_iter().map(|x| vec![x]).collect(),
                    out_domain_grid(lo, hi, per_side),
                )
            } else {
                (Vec::new(), Vec::new())
            };
            Ok(Bench {
                data,
                truth_std: None,
                in_grid,
                out_grid,
            })
        }
    }
}

fn split(
    config: &ExperimentConfig,
    raw: Dataset,
    root: &RngStream,
) -> Result<Dataset, HarnessError> {
    let mut rng = root.substream(STREAM_SPLIT);
    raw.split_roles(
        (config.split.train, config.split.calibration, config.split.test),
        &mut rng,
    )
    .map_err(|e| HarnessError::Data(e.to_string()))
}

/// Just the (generated or loaded, role-split) dataset for this config.
pub(crate) fn dataset_for(
    config: &ExperimentConfig,
    root: &RngStream,
) -> Result<Dataset, HarnessError> {
    Ok(build_bench(config, root)?.data)
}

enum Fitted {
    Gp(GpModel),
    Mcd(McdPredictor),
    De(EnsemblePredictor),
    Bnn(BnnPredictor),
    SplitCp(SplitCpModel),
    Srcp(SrcpModel),
}

impl Fitted {
    fn predictor(&self) -> &dyn Predictor {
        match self {
            Fitted::Gp(m) => m,
            Fitted::Mcd(m) => m,
            Fitted::De(m) => m,
            Fitted::Bnn(m) => m,
            Fitted::SplitCp(m) => m,
            Fitted::Srcp(m) => m,
        }
    }

    /// Method-specific details worth keeping in the run metadata.
    fn details(&self) -> serde_json::Value {
        match self {
            Fitted::Gp(m) => json!({
                "kernel": m.kernel(),
                "noise_var": m.noise_var(),
                "log_marginal_likelihood": m.log_marginal_likelihood(),
            }),
            Fitted::Bnn(m) => {
                let history = m.loss_history();
                json!({
                    "elbo_loss_first_epoch": history.first(),
                    "elbo_loss_last_epoch": history.last(),
                })
            }
            Fitted::SplitCp(m) => json!({
                "half_width": m.half_width(),
                "coverage_attainable": m.coverage_attainable(),
                "calibration_size": m.calibration_size(),
            }),
            Fitted::Srcp(m) => json!({
                "quantile": m.quantile(),
                "coverage_attainable": m.coverage_attainable(),
            }),
            _ => json!({}),
        }
    }
}

fn mlp_spec(nn: &NnSettings, dim: usize, seed: u64) -> Result<MlpSpec, String> {
    MlpSpec::new(dim, &nn.hidden, nn.activation, nn.dropout, seed).map_err(|e| e.to_string())
}

fn fit_point_model(
    kind: PointModelKind,
    cp: &CpSettings,
    xs: &[Vec<f64>],
    ys: &[f64],
    rng: &mut RngStream,
) -> Result<Box<dyn PointPredictor>, String> {
    match kind {
        PointModelKind::Gp => Ok(Box::new(
            select_hyperparameters_points(xs, ys, &cp.gp.grid()).map_err(|e| e.to_string())?,
        )),
        PointModelKind::Mlp => {
            let mut nn = cp.mlp.clone();
            nn.dropout = 0.0;
            let spec = mlp_spec(&nn, xs[0].len(), rng.draw_u64())?;
            let config = TrainConfig {
                loss: Loss::Mse,
                ..nn.train_config()
            };
            let model =
                train_points(&spec, &config, xs, ys, rng).map_err(|e| e.to_string())?;
            Ok(Box::new(model))
        }
        PointModelKind::Knn => Ok(Box::new(uq_core::conformal::KnnModel::fit(
            xs.to_vec(),
            ys.to_vec(),
            cp.knn_k,
        ))),
        PointModelKind::Constant => {
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            Ok(Box::new(ConstantModel {
                value: mean,
                dim: xs[0].len(),
            }))
        }
    }
}

fn residual_scale_fit(cp: &CpSettings, dim: usize, rng: &mut RngStream) -> Result<ResidualScaleFit, String> {
    Ok(match cp.residual_model {
        ResidualModelKind::Gp => ResidualScaleFit::Gp,
        ResidualModelKind::Mlp => {
            let mut nn = cp.mlp.clone();
            nn.dropout = 0.0;
            let seed = rng.draw_u64();
            ResidualScaleFit::Mlp {
                spec: mlp_spec(&nn, dim, seed)?,
                config: nn.train_config(),
                seed,
            }
        }
        ResidualModelKind::Knn => ResidualScaleFit::Knn { k: cp.knn_k },
    })
}

fn fit_method(
    method: &ResolvedMethod,
    data: &Dataset,
    level: ConfidenceLevel,
    rng: &mut RngStream,
) -> Result<Fitted, String> {
    let dim = data.dim();
    match method {
        ResolvedMethod::Gp(settings) => {
            let model = uq_core::gp::select_hyperparameters(data, &settings.grid())
                .map_err(|e| e.to_string())?;
            Ok(Fitted::Gp(model))
        }
        ResolvedMethod::Mcd(nn) => {
            let spec = mlp_spec(nn, dim, rng.draw_u64())?;
            let model = McdPredictor::fit(&spec, &nn.train_config(), data, nn.n_samples, rng)
                .map_err(|e| e.to_string())?;
            Ok(Fitted::Mcd(model))
        }
        ResolvedMethod::De(nn) => {
            let spec = mlp_spec(nn, dim, rng.draw_u64())?;
            let ensemble = fit_ensemble(&spec, &nn.train_config(), data, nn.n_samples, rng)
                .map_err(|e| e.to_string())?;
            Ok(Fitted::De(ensemble))
        }
        ResolvedMethod::Bnn(nn) => {
            let spec = mlp_spec(nn, dim, rng.draw_u64())?;
            let bnn_config = BnnConfig {
                prior_std: nn.prior_std,
                samples: nn.n_samples,
                kl_weight: nn.kl_weight,
                ..BnnConfig::default()
            };
            let model = BnnPredictor::fit(&spec, &nn.train_config(), &bnn_config, data, rng)
                .map_err(|e| e.to_string())?;
            Ok(Fitted::Bnn(model))
        }
        ResolvedMethod::SplitCp(cp) => {
            let (xs, ys) = data.role_points(Role::Train);
            if xs.is_empty() {
                return Err("no train-role points".into());
            }
            let point = fit_point_model(cp.point_model, cp, &xs, &ys, rng)?;
            let model = SplitCpModel::fit(point, data, level).map_err(|e| e.to_string())?;
            Ok(Fitted::SplitCp(model))
        }
        ResolvedMethod::Srcp(cp) => {
            let (xs, ys) = data.role_points(Role::Train);
            if xs.is_empty() {
                return Err("no train-role points".into());
            }
            if cp.three_way_split {
                // Disjoint halves: the point model sees only the first half,
                // the residual-scale model only the second.
                let mut order: Vec<usize> = (0..xs.len()).collect();
                rng.shuffle(&mut order);
                let half = xs.len() / 2;
                let (fit_idx, resid_idx) = order.split_at(half.max(1));
                let fx: Vec<Vec<f64>> = fit_idx.iter().map(|&i| xs[i].clone()).collect();
                let fy: Vec<f64> = fit_idx.iter().map(|&i| ys[i]).collect();
                let rx: Vec<Vec<f64>> = resid_idx.iter().map(|&i| xs[i].clone()).collect();
                let ry: Vec<f64> = resid_idx.iter().map(|&i| ys[i]).collect();
                let point = fit_point_model(cp.point_model, cp, &fx, &fy, rng)?;
                let scale = residual_scale_fit(cp, dim, rng)?;
                let model =
                    SrcpModel::fit_with_residual_points(point, scale, &rx, &ry, data, level)
                        .map_err(|e| e.to_string())?;
                Ok(Fitted::Srcp(model))
            } else {
                let point = fit_point_model(cp.point_model, cp, &xs, &ys, rng)?;
                let scale = residual_scale_fit(cp, dim, rng)?;
                let model = SrcpModel::fit(point, scale, data, level).map_err(|e| e.to_string())?;
                Ok(Fitted::Srcp(model))
            }
        }
    }
}

struct Evaluation {
    test_intervals: Vec<PredictionInterval>,
    in_intervals: Vec<PredictionInterval>,
    out_intervals: Vec<PredictionInterval>,
}

fn evaluate(
    fitted: &Fitted,
    bench: &Bench,
    level: ConfidenceLevel,
    method_rng: &RngStream,
) -> Result<Evaluation, String> {
    let predictor = fitted.predictor();
    let eval_set = |points: &mut dyn Iterator<Item = Vec<f64>>,
                    base: u64|
     -> Result<Vec<PredictionInterval>, String> {
        points
            .enumerate()
            .map(|(i, x)| {
                let mut rng = method_rng.substream(base + i as u64);
                predictor
                    .predict_interval(&x, level, &mut rng)
                    .map_err(|e| e.to_string())
            })
            .collect()
    };
    let data = &bench.data;
    let mut test_points = (0..data.len())
        .filter(|&i| data.role(i) == Role::Test)
        .map(|i| data.input(i).to_vec());
    let test_intervals = eval_set(&mut test_points, EVAL_TEST_BASE)?;
    let in_intervals = eval_set(&mut bench.in_grid.iter().cloned(), EVAL_GRID_IN_BASE)?;
    let out_intervals = eval_set(&mut bench.out_grid.iter().cloned(), EVAL_GRID_OUT_BASE)?;
    Ok(Evaluation {
        test_intervals,
        in_intervals,
        out_intervals,
    })
}

fn report_for(
    name: &str,
    config: &ExperimentConfig,
    bench: &Bench,
    eval: &Evaluation,
) -> Result<IntervalReport, String> {
    let data = &bench.data;
    let test_targets: Vec<f64> = (0..data.len())
        .filter(|&i| data.role(i) == Role::Test)
        .map(|i| data.target(i))
        .collect();
    let coverage =
        empirical_coverage(&eval.test_intervals, &test_targets).map_err(|e| e.to_string())?;
    let (mean_half_width, width_cv) =
        width_stats(&eval.test_intervals).map_err(|e| e.to_string())?;

    let adaptivity = match &bench.truth_std {
        Some(profile) if data.dim() == 1 => {
            let stds: Vec<f64> = (0..data.len())
                .filter(|&i| data.role(i) == Role::Test)
                .map(|i| profile(data.input(i)[0]).unwrap_or(f64::NAN))
                .collect();
            if stds.iter().any(|s| !s.is_finite()) {
                None
            } else {
                match adaptivity_correlation(&eval.test_intervals, &stds) {
                    Ok(a) => Some(a),
                    Err(_) => None,
                }
            }
        }
        _ => None,
    };

    let extrap_ratio = if eval.in_intervals.is_empty() || eval.out_intervals.is_empty() {
        None
    } else {
        let mean = |ivs: &[PredictionInterval]| {
            ivs.iter().map(|iv| iv.half_width()).sum::<f64>() / ivs.len() as f64
        };
        let inside = mean(&eval.in_intervals);
        (inside > 0.0)
            .then(|| uq_core::metrics::snap_unit_ratio(mean(&eval.out_intervals) / inside))
    };

    Ok(IntervalReport {
        method: name.to_string(),
        alpha: config.alpha,
        coverage,
        mean_half_width,
        width_cv,
        adaptivity,
        extrap_ratio,
        seed: config.seed,
    })
}

fn write_intervals_csv(
    path: &PathBuf,
    bench: &Bench,
    eval: &Evaluation,
) -> Result<(), HarnessError> {
    let io_err = |e: std::io::Error| HarnessError::Io {
        path: path.clone(),
        message: e.to_string(),
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    let data = &bench.data;
    let dim = data.dim();
    let mut header: Vec<String> = (0..dim).map(|j| format!("x_{j}")).collect();
    header.extend(["y_true", "center", "lower", "upper", "set"].map(String::from));
    writeln!(w, "{}", header.join(",")).map_err(io_err)?;

    let mut write_row = |x: &[f64],
                         y: Option<f64>,
                         iv: &PredictionInterval,
                         set: &str|
     -> Result<(), HarnessError> {
        let mut cells: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        cells.push(y.map(|v| v.to_string()).unwrap_or_default());
        cells.push(iv.center.to_string());
        cells.push(iv.lower.to_string());
        cells.push(iv.upper.to_string());
        cells.push(set.to_string());
        writeln!(w, "{}", cells.join(",")).map_err(io_err)
    };

    let test_indices: Vec<usize> = (0..data.len())
        .filter(|&i| data.role(i) == Role::Test)
        .collect();
    for (iv, &i) in eval.test_intervals.iter().zip(&test_indices) {
        write_row(data.input(i), Some(data.target(i)), iv, "test")?;
    }
    for (iv, x) in eval.in_intervals.iter().zip(&bench.in_grid) {
        write_row(x, None, iv, "grid-in")?;
    }
    for (iv, x) in eval.out_intervals.iter().zip(&bench.out_grid) {
        write_row(x, None, iv, "grid-out")?;
    }
    Ok(())
}

/// Run the configured experiment end to end. Per-method failures are
/// isolated: a failed method is recorded and the remaining methods still run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let methods = config.resolved_methods()?;
    let hash = config.content_hash()?;
    let started = Instant::now();

    let root = RngStream::new(config.seed);
    let bench = build_bench(config, &root)?;
    let level = ConfidenceLevel::new(config.alpha)
        .map_err(|e| HarnessError::Config(ConfigError::Invalid(e.to_string())))?;

    let out_dir = config.out_dir.join(&hash);
    std::fs::create_dir_all(&out_dir).map_err(|e| HarnessError::Io {
        path: out_dir.clone(),
        message: e.to_string(),
    })?;

    let mut reports = Vec::new();
    let mut failures: Vec<(String, String)> = Vec::new();
    let mut method_details = serde_json::Map::new();

    for (index, method) in methods.iter().enumerate() {
        let name = method.name();
        let mut method_rng = root.substream(STREAM_METHOD_BASE + index as u64);
        let fitted = match fit_method(method, &bench.data, level, &mut method_rng) {
            Ok(f) => f,
            Err(message) => {
                failures.push((name.to_string(), message));
                continue;
            }
        };
        let eval = match evaluate(&fitted, &bench, level, &method_rng) {
            Ok(e) => e,
            Err(message) => {
                failures.push((name.to_string(), message));
                continue;
            }
        };
        let report = match report_for(name, config, &bench, &eval) {
            Ok(r) => r,
            Err(message) => {
                failures.push((name.to_string(), message));
                continue;
            }
        };
        let csv_path = out_dir.join(format!("intervals_{name}.csv"));
        write_intervals_csv(&csv_path, &bench, &eval)?;
        method_details.insert(name.to_string(), fitted.details());
        reports.push(report);
    }

    let report_path = out_dir.join("report.csv");
    {
        let file = std::fs::File::create(&report_path).map_err(|e| HarnessError::Io {
            path: report_path.clone(),
            message: e.to_string(),
        })?;
        write_report_csv(&reports, std::io::BufWriter::new(file)).map_err(|e| {
            HarnessError::Io {
                path: report_path.clone(),
                message: e.to_string(),
            }
        })?;
    }

    let dataset_path = out_dir.join("dataset.csv");
    bench
        .data
        .write_csv_path(&dataset_path)
        .map_err(|e| HarnessError::Io {
            path: dataset_path.clone(),
            message: e.to_string(),
        })?;

    let metadata = json!({
        "config_hash": hash,
        "seed": config.seed,
        "alpha": config.alpha,
        "dataset": &config.dataset,
        "split": &config.split,
        "role_counts": {
            "train": bench.data.count_role(Role::Train),
            "calibration": bench.data.count_role(Role::Calibration),
            "test": bench.data.count_role(Role::Test),
        },
        "methods": &methods,
        "method_details": method_details,
        "failures": failures.iter().map(|(m, e)| json!({"method": m, "error": e})).collect::<Vec<_>>(),
        "versions": {
            "uqbench": env!("CARGO_PKG_VERSION"),
            "uq_core": uq_core::VERSION,
        },
        "wall_time_secs": started.elapsed().as_secs_f64(),
    });
    let metadata_path = out_dir.join("metadata.json");
    std::fs::write(
        &metadata_path,
        serde_json::to_string_pretty(&metadata).expect("metadata serializes"),
    )
    .map_err(|e| HarnessError::Io {
        path: metadata_path.clone(),
        message: e.to_string(),
    })?;

    Ok(RunOutcome {
        hash,
        out_dir,
        reports,
        failures,
    })
}
