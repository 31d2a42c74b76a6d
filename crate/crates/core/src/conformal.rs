//! Distribution-free prediction intervals by split conformal prediction:
//! the rank-adjusted empirical quantile, absolute-residual split CP, and
//! studentized-residual CP with a pluggable residual-scale model.

use crate::dataset::{Dataset, Role};
use crate::gp::{log_space, select_hyperparameters_points, GpError, GpHyper, KernelFamily, KernelSpec};
use crate::neural::{train_points, Loss, MlpModel, MlpSpec, TrainConfig, TrainError};
use crate::predict::{
    check_dim, ConfidenceLevel, PointPredictor, PredictError, PredictionInterval, Predictor,
};
use crate::rng::RngStream;

#[derive(Debug, thiserror::Error)]
pub enum CpError {
    #[error("empty score list")]
    EmptyScores,
    #[error("no points carry the calibration role")]
    EmptyCalibration,
    #[error("no points available to fit the residual-scale model")]
    EmptyResidualFit,
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Rank-adjusted empirical quantile of `values` at confidence `1 - alpha`:
/// the `u`-th smallest value with `u = ceil((1 - alpha)(n + 1))`.
///
/// When `u > n` the requested coverage is unattainable at this sample size
/// and the result is `+inf`; callers must surface that state rather than
/// clamp it, or the finite-sample guarantee breaks.
pub fn adjusted_quantile(values: &[f64], level: ConfidenceLevel) -> Result<f64, CpError> {
    let n = values.len();
    if n == 0 {
        return Err(CpError::EmptyScores);
    }
    match adjusted_rank(n, level) {
        Some(u) => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            Ok(sorted[u - 1])
        }
        None => Ok(f64::INFINITY),
    }
}

/// The rank `u = ceil((1 - alpha)(n + 1))`, or `None` when `u > n`.
///
/// The tiny slack keeps products like `0.8 * 5` from rounding one rank up.
pub fn adjusted_rank(n: usize, level: ConfidenceLevel) -> Option<usize> {
    let target = (1.0 - level.alpha()) * (n as f64 + 1.0);
    let u = (target - 1e-9).ceil().max(1.0) as usize;
    (u <= n).then_some(u)
}

fn calibration_residuals(
    model: &dyn PointPredictor,
    data: &Dataset,
) -> Result<Vec<f64>, CpError> {
    let mut residuals = Vec::new();
    for (x, y) in data.iter_role(Role::Calibration) {
        residuals.push((y - model.point(x)?).abs());
    }
    if residuals.is_empty() {
        return Err(CpError::EmptyCalibration);
    }
    Ok(residuals)
}

/// Split CP with absolute residuals: a constant half-width equal to the
/// adjusted quantile of the calibration residuals.
pub struct SplitCpModel {
    model: Box<dyn PointPredictor>,
    scores: Vec<f64>,
    level: ConfidenceLevel,
    half_width: f64,
}

impl SplitCpModel {
    /// Calibrate an already-fitted point model on the calibration role.
    /// The point model must have been fitted on train-role points only;
    /// residuals here come exclusively from calibration-role points.
    pub fn fit(
        model: Box<dyn PointPredictor>,
        data: &Dataset,
        level: ConfidenceLevel,
    ) -> Result<Self, CpError> {
        let scores = calibration_residuals(model.as_ref(), data)?;
        let half_width = adjusted_quantile(&scores, level)?;
        Ok(Self {
            model,
            scores,
            level,
            half_width,
        })
    }

    /// The calibrated half-width `L_u` at the fit-time level; `+inf` when
    /// coverage is unattainable.
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Whether the requested coverage is attainable at this calibration size.
    pub fn coverage_attainable(&self) -> bool {
        self.half_width.is_finite()
    }

    pub fn calibration_size(&self) -> usize {
        self.scores.len()
    }

    pub fn level(&self) -> ConfidenceLevel {
        self.level
    }

    /// Interval at the fit-time level: `f(x) ± L_u`, constant in `x`.
    pub fn interval(&self, x: &[f64]) -> Result<PredictionInterval, CpError> {
        self.interval_at(x, self.level)
    }

    pub fn interval_at(
        &self,
        x: &[f64],
        level: ConfidenceLevel,
    ) -> Result<PredictionInterval, CpError> {
        let center = self.model.point(x)?;
        let hw = if level == self.level {
            self.half_width
        } else {
            adjusted_quantile(&self.scores, level)?
        };
        Ok(PredictionInterval {
            lower: center - hw,
            center,
            upper: center + hw,
        })
    }
}

impl Predictor for SplitCpModel {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn predict_interval(
        &self,
        x: &[f64],
        level: ConfidenceLevel,
        _rng: &mut RngStream,
    ) -> Result<PredictionInterval, PredictError> {
        self.interval_at(x, level)
            .map_err(|e| PredictError::Invalid(e.to_string()))
    }
}

/// How the studentized residual-scale model is fitted on the train-role
/// residual magnitudes `(x_j, |y_j - f(x_j)|)`.
pub enum ResidualScaleFit {
    /// GP regression on the residual magnitudes; hyperparameters selected by
    /// evidence over a grid derived from the residual data.
    Gp,
    /// GP regression with an explicit hyperparameter grid.
    GpWithGrid(Vec<GpHyper>),
    /// MLP with a softplus output head, trained by squared error.
    Mlp {
        spec: MlpSpec,
        config: TrainConfig,
        seed: u64,
    },
    /// Mean absolute residual of the k nearest training points.
    Knn { k: usize },
}

/// Studentized-residual CP: scores `|y - f(x)| / scale(x)` on calibration,
/// intervals `f(x) ± scale(x) L_u`.
pub struct SrcpModel {
    model: Box<dyn PointPredictor>,
    scale_model: Box<dyn PointPredictor>,
    scale_floor: f64,
    scores: Vec<f64>,
    level: ConfidenceLevel,
    quantile: f64,
}

impl SrcpModel {
    /// Fit the residual-scale model on the train role and calibrate on the
    /// calibration role.
    pub fn fit(
        model: Box<dyn PointPredictor>,
        scale_fit: ResidualScaleFit,
        data: &Dataset,
        level: ConfidenceLevel,
    ) -> Result<Self, CpError> {
        let (xs, ys) = data.role_points(Role::Train);
        Self::fit_with_residual_points(model, scale_fit, &xs, &ys, data, level)
    }

    /// As [`SrcpModel::fit`], but the residual-scale model trains on the
    /// supplied points instead of the train role (a three-way split).
    pub fn fit_with_residual_points(
        model: Box<dyn PointPredictor>,
        scale_fit: ResidualScaleFit,
        xs: &[Vec<f64>],
        ys: &[f64],
        data: &Dataset,
        level: ConfidenceLevel,
    ) -> Result<Self, CpError> {
        if xs.is_empty() {
            return Err(CpError::EmptyResidualFit);
        }
        let mut residuals = Vec::with_capacity(xs.len());
        for (x, y) in xs.iter().zip(ys) {
            residuals.push((y - model.point(x)?).abs());
        }
        let scale_model = fit_scale_model(scale_fit, xs, &residuals)?;

        let cal_residuals = calibration_residuals(model.as_ref(), data)?;
        let mut sorted = cal_residuals.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let scale_floor = 1e-3 * median;

        let mut scores = Vec::with_capacity(cal_residuals.len());
        for ((x, _), r) in data.iter_role(Role::Calibration).zip(&cal_residuals) {
            let denom = scale_at(scale_model.as_ref(), x, scale_floor)?;
            scores.push(r / denom);
        }
        let quantile = adjusted_quantile(&scores, level)?;
        Ok(Self {
            model,
            scale_model,
            scale_floor,
            scores,
            level,
            quantile,
        })
    }

    /// The calibrated studentized quantile `L_u`.
    pub fn quantile(&self) -> f64 {
        self.quantile
    }

    pub fn coverage_attainable(&self) -> bool {
        self.quantile.is_finite()
    }

    pub fn level(&self) -> ConfidenceLevel {
        self.level
    }

    /// The floored residual scale used at `x`.
    pub fn scale(&self, x: &[f64]) -> Result<f64, CpError> {
        scale_at(self.scale_model.as_ref(), x, self.scale_floor)
    }

    /// Interval at the fit-time level: `f(x) ± scale(x) L_u`.
    pub fn interval(&self, x: &[f64]) -> Result<PredictionInterval, CpError> {
        self.interval_at(x, self.level)
    }

    pub fn interval_at(
        &self,
        x: &[f64],
        level: ConfidenceLevel,
    ) -> Result<PredictionInterval, CpError> {
        let center = self.model.point(x)?;
        let q = if level == self.level {
            self.quantile
        } else {
            adjusted_quantile(&self.scores, level)?
        };
        let hw = self.scale(x)? * q;
        Ok(PredictionInterval {
            lower: center - hw,
            center,
            upper: center + hw,
        })
    }
}

impl Predictor for SrcpModel {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn predict_interval(
        &self,
        x: &[f64],
        level: ConfidenceLevel,
        _rng: &mut RngStream,
    ) -> Result<PredictionInterval, PredictError> {
        self.interval_at(x, level)
            .map_err(|e| PredictError::Invalid(e.to_string()))
    }
}

fn scale_at(model: &dyn PointPredictor, x: &[f64], floor: f64) -> Result<f64, CpError> {
    let raw = model.point(x)?;
    Ok(raw.max(floor).max(f64::MIN_POSITIVE))
}

fn fit_scale_model(
    fit: ResidualScaleFit,
    xs: &[Vec<f64>],
    residuals: &[f64],
) -> Result<Box<dyn PointPredictor>, CpError> {
    match fit {
        ResidualScaleFit::Gp => {
            let grid = default_residual_grid(xs, residuals);
            Ok(Box::new(select_hyperparameters_points(
                xs,
                residuals,
                &grid,
            )?))
        }
        ResidualScaleFit::GpWithGrid(grid) => Ok(Box::new(select_hyperparameters_points(
            xs,
            residuals,
            &grid,
        )?)),
        ResidualScaleFit::Mlp { spec, config, seed } => {
            let config = TrainConfig {
                loss: Loss::MseSoftplus,
                ..config
            };
            let model = train_points(&spec, &config, xs, residuals, &mut RngStream::new(seed))?;
            Ok(Box::new(PositiveMlp(model)))
        }
        ResidualScaleFit::Knn { k } => Ok(Box::new(KnnModel::fit(
            xs.to_vec(),
            residuals.to_vec(),
            k,
        ))),
    }
}

/// Hyperparameter grid for the GP residual-scale model, scaled to the
/// residual variance and the input range.
fn default_residual_grid(xs: &[Vec<f64>], residuals: &[f64]) -> Vec<GpHyper> {
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let var = (residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).max(1e-12);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for x in xs {
        for &v in x {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let range = (hi - lo).max(1e-6);
    let mut grid = Vec::new();
    for l in log_space(0.03 * range, 0.5 * range, 4) {
        for s2 in [0.5 * var, 2.0 * var] {
            for noise in [0.1 * var, var] {
                grid.push(GpHyper {
                    kernel: KernelSpec {
                        family: KernelFamily::SquaredExponential,
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

/// MLP whose point prediction goes through the positive softplus channel.
pub struct PositiveMlp(pub MlpModel);

impl PointPredictor for PositiveMlp {
    fn dim(&self) -> usize {
        self.0.spec().input_dim()
    }

    fn point(&self, x: &[f64]) -> Result<f64, PredictError> {
        self.0.predict_positive(x)
    }
}

/// k-nearest-neighbor mean-target regressor.
pub struct KnnModel {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    k: usize,
}

impl KnnModel {
    pub fn fit(xs: Vec<Vec<f64>>, ys: Vec<f64>, k: usize) -> Self {
        let k = k.clamp(1, xs.len());
        Self { xs, ys, k }
    }
}

impl PointPredictor for KnnModel {
    fn dim(&self) -> usize {
        self.xs[0].len()
    }

    fn point(&self, x: &[f64]) -> Result<f64, PredictError> {
        check_dim(self.dim(), x)?;
        let mut dist: Vec<(f64, f64)> = self
            .xs
            .iter()
            .zip(&self.ys)
            .map(|(xi, &yi)| {
                let d: f64 = xi.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, yi)
            })
            .collect();
        dist.select_nth_unstable_by(self.k - 1, |a, b| a.0.total_cmp(&b.0));
        Ok(dist[..self.k].iter().map(|(_, y)| y).sum::<f64>() / self.k as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predict::ConstantModel;

    fn level(alpha: f64) -> ConfidenceLevel {
        ConfidenceLevel::new(alpha).unwrap()
    }

    #[test]
    fn adjusted_quantile_hand_examples() {
        // u = ceil(0.8 * 5) = 4 -> 4th smallest.
        let q = adjusted_quantile(&[1.0, 2.0, 3.0, 4.0], level(0.2)).unwrap();
        assert_eq!(q, 4.0);
        // Single element.
        assert_eq!(adjusted_quantile(&[5.0], level(0.5)).unwrap(), 5.0);
        // u = ceil(4.75) = 5 > 4 -> unattainable.
        assert_eq!(
            adjusted_quantile(&[1.0, 2.0, 3.0, 4.0], level(0.05)).unwrap(),
            f64::INFINITY
        );
        assert!(matches!(
            adjusted_quantile(&[], level(0.5)),
            Err(CpError::EmptyScores)
        ));
    }

    #[test]
    fn adjusted_rank_matches_brute_force_enumeration() {
        // Oracle: smallest rank u with u / (n + 1) >= 1 - alpha.
        for n in 1..=50usize {
            for alpha in [0.01, 0.05, 0.1, 0.2, 0.5] {
                let lv = level(alpha);
                let oracle = (1..=n + 1)
                    .find(|&u| u as f64 / (n as f64 + 1.0) >= 1.0 - alpha)
                    .unwrap();
                let got = adjusted_rank(n, lv);
                if oracle <= n {
                    assert_eq!(got, Some(oracle), "n={n} alpha={alpha}");
                } else {
                    assert_eq!(got, None, "n={n} alpha={alpha}");
                }
            }
        }
    }

    #[test]
    fn adjusted_quantile_handles_ties_by_rank() {
        let q = adjusted_quantile(&[2.0, 2.0, 2.0, 1.0], level(0.2)).unwrap();
        assert_eq!(q, 2.0);
    }

    /// x on a line, y = 2x + noise-free; calibration residuals forced by a
    /// biased constant model are fully controlled.
    fn roles_dataset(cal_targets: &[f64]) -> Dataset {
        let mut inputs = vec![vec![0.0]];
        let mut targets = vec![0.0];
        let mut roles = vec![Role::Train];
        for (i, &y) in cal_targets.iter().enumerate() {
            inputs.push(vec![i as f64]);
            targets.push(y);
            roles.push(Role::Calibration);
        }
        Dataset::new(inputs, targets, roles).unwrap()
    }

    #[test]
    fn split_cp_hand_quantile_and_constant_width() {
        // Constant model at 0; calibration targets 1..4 give residuals 1..4.
        let data = roles_dataset(&[1.0, 2.0, 3.0, 4.0]);
        let model = ConstantModel { value: 0.0, dim: 1 };
        let cp = SplitCpModel::fit(Box::new(model), &data, level(0.2)).unwrap();
        assert_eq!(cp.half_width(), 4.0);
        let a = cp.interval(&[0.0]).unwrap();
        let b = cp.interval(&[100.0]).unwrap();
        assert_eq!(a.half_width(), b.half_width());
        assert_eq!(a.lower, -4.0);
        assert_eq!(a.upper, 4.0);
    }

    #[test]
    fn split_cp_center_plus_minus_width() {
        let data = roles_dataset(&[1.0, 2.0, 3.0, 4.0]);
        let model = ConstantModel { value: 7.0, dim: 1 };
        // Residuals are |y - 7| = {6,5,4,3}; at alpha = 0.2 the rank-4 value is 6.
        let cp = SplitCpModel::fit(Box::new(model), &data, level(0.2)).unwrap();
        assert_eq!(cp.half_width(), 6.0);
        let iv = cp.interval(&[0.0]).unwrap();
        assert_eq!((iv.lower, iv.center, iv.upper), (1.0, 7.0, 13.0));
    }

    #[test]
    fn split_cp_perfect_model_gives_zero_width() {
        let data = roles_dataset(&[3.0, 3.0, 3.0, 3.0]);
        let model = ConstantModel { value: 3.0, dim: 1 };
        let cp = SplitCpModel::fit(Box::new(model), &data, level(0.2)).unwrap();
        assert_eq!(cp.half_width(), 0.0);
        let iv = cp.interval(&[5.0]).unwrap();
        assert_eq!(iv.lower, iv.upper);
        assert!(iv.contains(3.0));
    }

    #[test]
    fn split_cp_surfaces_unattainable_coverage() {
        let data = roles_dataset(&[1.0, 2.0]);
        let model = ConstantModel { value: 0.0, dim: 1 };
        let cp = SplitCpModel::fit(Box::new(model), &data, level(0.05)).unwrap();
        assert!(!cp.coverage_attainable());
        let iv = cp.interval(&[0.0]).unwrap();
        assert_eq!(iv.lower, f64::NEG_INFINITY);
        assert_eq!(iv.upper, f64::INFINITY);
    }

    #[test]
    fn split_cp_requires_calibration_points() {
        let data = Dataset::new(vec![vec![0.0]], vec![1.0], vec![Role::Train]).unwrap();
        let model = ConstantModel { value: 0.0, dim: 1 };
        assert!(matches!(
            SplitCpModel::fit(Box::new(model), &data, level(0.2)),
            Err(CpError::EmptyCalibration)
        ));
    }

    #[test]
    fn quantile_monotone_in_alpha() {
        let data = roles_dataset(&[0.5, 1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7.5, 8.5]);
        let model = ConstantModel { value: 0.0, dim: 1 };
        let mut last = 0.0;
        for alpha in [0.5, 0.4, 0.3, 0.2, 0.1] {
            let cp = SplitCpModel::fit(Box::new(model), &data, level(alpha)).unwrap();
            assert!(cp.half_width() >= last, "alpha {alpha}");
            last = cp.half_width();
        }
    }

    /// A fixed per-query scale for SRCP tests.
    struct TableScale;

    impl PointPredictor for TableScale {
        fn dim(&self) -> usize {
            1
        }

        fn point(&self, x: &[f64]) -> Result<f64, PredictError> {
            Ok(if x[0] < 0.5 { 1.0 } else { 2.0 })
        }
    }

    #[test]
    fn srcp_scores_divide_by_scale() {
        // Residuals {2, 4} with scales {1, 2} -> scores {2, 2}; any rank
        // gives quantile 2.
        let data = Dataset::new(
            vec![vec![0.0], vec![0.0], vec![1.0]],
            vec![0.0, 2.0, 4.0],
            vec![Role::Train, Role::Calibration, Role::Calibration],
        )
        .unwrap();
        let model = ConstantModel { value: 0.0, dim: 1 };
        let srcp = SrcpModel::fit_with_residual_points(
            Box::new(model),
            ResidualScaleFit::Knn { k: 1 },
            &[vec![0.0], vec![1.0]],
            &[1.0, 2.0], // residual targets: scale 1 below 0.5, scale 2 above
            &data,
            level(0.4),
        );
        // Knn on the residual points reproduces TableScale exactly.
        let srcp = srcp.unwrap();
        assert!((srcp.quantile() - 2.0).abs() < 1e-12);
        // Half-widths scale with the local residual scale.
        let near = srcp.interval(&[0.0]).unwrap().half_width();
        let far = srcp.interval(&[1.0]).unwrap().half_width();
        assert!((far - 2.0 * near).abs() < 1e-9);
    }

    #[test]
    fn srcp_with_unit_scale_reduces_to_split_cp() {
        let data = roles_dataset(&[1.0, 2.0, 3.0, 4.0]);
        let srcp = SrcpModel::fit_with_residual_points(
            Box::new(ConstantModel { value: 0.0, dim: 1 }),
            ResidualScaleFit::Knn { k: 1 },
            &[vec![0.0], vec![50.0]],
            &[1.0, 1.0], // unit residual scale everywhere
            &data,
            level(0.2),
        )
        .unwrap();
        let cp = SplitCpModel::fit(
            Box::new(ConstantModel { value: 0.0, dim: 1 }),
            &data,
            level(0.2),
        )
        .unwrap();
        assert!((srcp.quantile() - cp.half_width()).abs() < 1e-12);
        for x in [[0.0], [2.0], [9.0]] {
            let a = srcp.interval(&x).unwrap();
            let b = cp.interval(&x).unwrap();
            assert!((a.lower - b.lower).abs() < 1e-9);
            assert!((a.upper - b.upper).abs() < 1e-9);
        }
    }

    #[test]
    fn srcp_equal_scores_give_proportional_widths() {
        let srcp = SrcpModel::fit_with_residual_points(
            Box::new(ConstantModel { value: 0.0, dim: 1 }),
            ResidualScaleFit::Knn { k: 1 },
            &[vec![0.0], vec![1.0]],
            &[0.5, 2.0],
            &roles_dataset(&[1.0, 1.0, 1.0]),
            level(0.4),
        )
        .unwrap();
        let q = srcp.quantile();
        let at0 = srcp.interval(&[0.0]).unwrap().half_width();
        let at1 = srcp.interval(&[1.0]).unwrap().half_width();
        assert!((at0 - q * srcp.scale(&[0.0]).unwrap()).abs() < 1e-12);
        assert!((at1 - q * srcp.scale(&[1.0]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn srcp_arithmetic_example() {
        // f = 5, scale = 0.5, L_u = 2 -> [4, 6].
        let data = Dataset::new(
            vec![vec![0.0], vec![0.2], vec![0.4]],
            vec![5.0, 6.0, 4.0],
            vec![Role::Train, Role::Calibration, Role::Calibration],
        )
        .unwrap();
        let srcp = SrcpModel::fit_with_residual_points(
            Box::new(ConstantModel { value: 5.0, dim: 1 }),
            ResidualScaleFit::Knn { k: 1 },
            &[vec![0.0]],
            &[5.5], // residual |5.5 - 5| = 0.5 becomes the scale everywhere
            &data,
            level(0.4),
        )
        .unwrap();
        // Calibration residuals {1, 1} / 0.5 = {2, 2}; rank picks 2.
        assert!((srcp.quantile() - 2.0).abs() < 1e-12);
        let iv = srcp.interval(&[0.3]).unwrap();
        assert!((iv.lower - 4.0).abs() < 1e-9);
        assert!((iv.upper - 6.0).abs() < 1e-9);
    }

    #[test]
    fn knn_model_averages_nearest_targets() {
        let knn = KnnModel::fit(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![10.0]],
            vec![1.0, 2.0, 3.0, 100.0],
            2,
        );
        let v = knn.point(&[0.4]).unwrap();
        assert!((v - 1.5).abs() < 1e-12);
    }
}
