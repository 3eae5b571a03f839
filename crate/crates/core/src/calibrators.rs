//! Post-hoc recalibration maps fitted on a held-out validation split.
//!
//! Four families are supported:
//!
//! * **Beta**: `mu(s) = 1 / (1 + exp(-(a ln s - b ln(1 - s) + c)))`, fitted as a
//!   two-feature logistic regression on `(ln s, -ln(1 - s))`. A negative
//!   `a` or `b` is fixed at zero and the remaining coefficients refitted, so
//!   the map is always non-decreasing.
//! * **Isotonic**: least-squares monotone step function from pool-adjacent-
//!   violators.
//! * **Platt**: `sigma(A s + B)` on the raw score, without target smoothing.
//!   Perfectly separated data caps `|A|` instead of failing.
//! * **Temperature**: `sigma(logit(s) / T)` with `T` found by golden-section
//!   search over `ln T`.
//!
//! Scores are clipped to `[1e-6, 1 - 1e-6]` before every log or logit taken
//! during fitting.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binning::BinningScheme;
use crate::error::{Error, Result};
use crate::metrics::{metric_report, MetricReport};
use crate::records::{Label, ScoredInstance};

pub const CLIP_EPS: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 1000;
pub const OBJECTIVE_TOL: f64 = 1e-10;
pub const PLATT_SLOPE_CAP: f64 = 1e4;
pub const TEMPERATURE_MIN: f64 = 1e-2;
pub const TEMPERATURE_MAX: f64 = 1e4;
pub const TEMPERATURE_TOL: f64 = 1e-6;

const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibratorKind {
    Beta,
    Isotonic,
    Platt,
    Temperature,
}

impl fmt::Display for CalibratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CalibratorKind::Beta => "beta",
            CalibratorKind::Isotonic => "isotonic",
            CalibratorKind::Platt => "platt",
            CalibratorKind::Temperature => "temperature",
        })
    }
}

impl FromStr for CalibratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(CalibratorKind::Beta),
            "isotonic" => Ok(CalibratorKind::Isotonic),
            "platt" => Ok(CalibratorKind::Platt),
            "temperature" => Ok(CalibratorKind::Temperature),
            other => Err(Error::Format {
                what: "calibrator kind",
                message: format!("unknown kind {other:?}"),
            }),
        }
    }
}

/// Fitted parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CalibratorMap {
    Beta {
        a: f64,
        b: f64,
        c: f64,
    },
    /// Step function: `values[i]` applies on `[thresholds[i], thresholds[i + 1])`.
    Isotonic {
        thresholds: Vec<f64>,
        values: Vec<f64>,
    },
    Platt {
        slope: f64,
        intercept: f64,
    },
    Temperature {
        temperature: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    /// Final mean negative log-likelihood (squared error for isotonic).
    pub objective: f64,
    pub converged: bool,
    /// Platt: classes were perfectly separated and the slope was capped.
    #[serde(default)]
    pub separated: bool,
    /// Temperature: the optimum sits at the upper bound.
    #[serde(default)]
    pub collapsed: bool,
    /// Beta: features fixed at zero to keep the map monotone.
    #[serde(default)]
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorModel {
    #[serde(flatten)]
    pub map: CalibratorMap,
    pub diagnostics: FitDiagnostics,
}

impl CalibratorModel {
    pub fn new(map: CalibratorMap) -> Self {
        CalibratorModel {
            map,
            diagnostics: FitDiagnostics {
                converged: true,
                ..FitDiagnostics::default()
            },
        }
    }

    pub fn beta(a: f64, b: f64, c: f64) -> Self {
        Self::new(CalibratorMap::Beta { a, b, c })
    }

    pub fn platt(slope: f64, intercept: f64) -> Self {
        Self::new(CalibratorMap::Platt { slope, intercept })
    }

    pub fn temperature(temperature: f64) -> Self {
        Self::new(CalibratorMap::Temperature { temperature })
    }

    pub fn identity() -> Self {
        Self::beta(1.0, 1.0, 0.0)
    }

    pub fn kind(&self) -> CalibratorKind {
        match self.map {
            CalibratorMap::Beta { .. } => CalibratorKind::Beta,
            CalibratorMap::Isotonic { .. } => CalibratorKind::Isotonic,
            CalibratorMap::Platt { .. } => CalibratorKind::Platt,
            CalibratorMap::Temperature { .. } => CalibratorKind::Temperature,
        }
    }

    pub fn apply(&self, score: f64) -> f64 {
        apply_calibrator(self, score)
    }

    /// Persistence record: pretty JSON, floats in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("calibrator serializes");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let model: CalibratorModel = serde_json::from_str(text).map_err(|e| Error::Format {
            what: "calibrator record",
            message: e.to_string(),
        })?;
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        let bad = |message: &str| {
            Err(Error::Format {
                what: "calibrator record",
                message: message.to_string(),
            })
        };
        match &self.map {
            CalibratorMap::Temperature { temperature }
                if temperature.is_nan() || *temperature <= 0.0 =>
            {
                bad("temperature must be positive")
            }
            CalibratorMap::Isotonic { thresholds, values } => {
                if thresholds.is_empty() || thresholds.len() != values.len() {
                    bad("isotonic thresholds and values must be non-empty and equal length")
                } else if thresholds.windows(2).any(|w| w[0] >= w[1]) {
                    bad("isotonic thresholds must be strictly increasing")
                } else if values.windows(2).any(|w| w[0] > w[1])
                    || values.iter().any(|v| !(0.0..=1.0).contains(v))
                {
                    bad("isotonic values must be non-decreasing within [0, 1]")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

fn clip(s: f64) -> f64 {
    s.clamp(CLIP_EPS, 1.0 - CLIP_EPS)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logit(s: f64) -> f64 {
    let s = clip(s);
    s.ln() - (1.0 - s).ln()
}

/// `s^a / (s^a + e^-c (1 - s)^b)`, the beta map written as a ratio so that
/// `(1, 1, 0)` reproduces `s` exactly.
fn beta_map(s: f64, a: f64, b: f64, c: f64) -> f64 {
    let num = s.powf(a);
    let den = num + (-c).exp() * (1.0 - s).powf(b);
    let ratio = num / den;
    if ratio.is_finite() {
        ratio
    } else {
        let s = clip(s);
        sigmoid(a * s.ln() - b * (1.0 - s).ln() + c)
    }
}

pub fn apply_calibrator(model: &CalibratorModel, score: f64) -> f64 {
    let out = match &model.map {
        CalibratorMap::Beta { a, b, c } => beta_map(score, *a, *b, *c),
        CalibratorMap::Temperature { temperature } => {
            let inv = 1.0 / temperature;
            beta_map(score, inv, inv, 0.0)
        }
        CalibratorMap::Platt { slope, intercept } => sigmoid(slope * score + intercept),
        CalibratorMap::Isotonic { thresholds, values } => {
            let idx = thresholds.partition_point(|&t| t <= score);
            values[idx.saturating_sub(1)]
        }
    };
    out.clamp(0.0, 1.0)
}

/// Re-scores instances, re-deriving prediction and confidence.
pub fn recalibrate(model: &CalibratorModel, instances: &[ScoredInstance]) -> Vec<ScoredInstance> {
    instances
        .iter()
        .map(|i| i.with_score(model.apply(i.score)))
        .collect()
}

fn require_both_classes(instances: &[ScoredInstance]) -> Result<()> {
    if instances.is_empty() {
        return Err(Error::Empty);
    }
    let first = instances[0].label;
    if instances.iter().all(|i| i.label == first) {
        return Err(Error::OneClass);
    }
    Ok(())
}

/// Solves `m x = rhs` for a small dense system by Gaussian elimination with
/// partial pivoting. Returns `None` when the matrix is numerically singular.
fn solve(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    let scale = m
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() <= scale * 1e-14 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            let (upper, lower) = m.split_at_mut(row);
            for (dst, src) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *dst -= factor * src;
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / m[row][row];
    }
    Some(x)
}

struct LogisticFit {
    weights: Vec<f64>,
    iterations: usize,
    objective: f64,
}

fn mean_nll(rows: &[Vec<f64>], labels: &[f64], w: &[f64]) -> f64 {
    rows.iter()
        .zip(labels)
        .map(|(x, &y)| {
            let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
            softplus(z) - y * z
        })
        .sum::<f64>()
        / rows.len() as f64
}

/// Logistic maximum likelihood by Newton's method with step halving.
/// Each row of `rows` holds the features, including any intercept column.
fn fit_logistic(rows: &[Vec<f64>], labels: &[f64], method: &'static str) -> Result<LogisticFit> {
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mut w = vec![0.0; dim];
    let mut objective = mean_nll(rows, labels, &w);
    for iteration in 1..=MAX_ITERATIONS {
        let mut grad = vec![0.0; dim];
        let mut hess = vec![vec![0.0; dim]; dim];
        for (x, &y) in rows.iter().zip(labels) {
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            let p = sigmoid(z);
            let h = p * (1.0 - p);
            for i in 0..dim {
                grad[i] += (p - y) * x[i] / n;
                for j in 0..dim {
                    hess[i][j] += h * x[i] * x[j] / n;
                }
            }
        }
        let step = solve(hess.clone(), grad.clone()).or_else(|| {
            let ridge = 1e-8 * (1.0 + (0..dim).map(|i| hess[i][i]).sum::<f64>());
            let mut damped = hess.clone();
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += ridge;
            }
            solve(damped, grad.clone())
        });
        let Some(step) = step else {
            // flat curvature: nothing left to improve
            return Ok(LogisticFit {
                weights: w,
                iterations: iteration,
                objective,
            });
        };

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate: Vec<f64> = w.iter().zip(&step).map(|(wi, d)| wi - t * d).collect();
            let value = mean_nll(rows, labels, &candidate);
            if value <= objective {
                accepted = Some((candidate, value));
                break;
            }
            t *= 0.5;
        }
        let Some((next, value)) = accepted else {
            return Ok(LogisticFit {
                weights: w,
                iterations: iteration,
                objective,
            });
        };
        let change = objective - value;
        w = next;
        objective = value;
        if change < OBJECTIVE_TOL {
            return Ok(LogisticFit {
                weights: w,
                iterations: iteration,
                objective,
            });
        }
    }
    Err(Error::NoConvergence {
        method,
        iterations: MAX_ITERATIONS,
        objective,
    })
}

pub fn fit_beta(validation: &[ScoredInstance]) -> Result<CalibratorModel> {
    require_both_classes(validation)?;
    let labels: Vec<f64> = validation.iter().map(|i| i.label.as_f64()).collect();
    let features: Vec<[f64; 2]> = validation
        .iter()
        .map(|i| {
            let s = clip(i.score);
            [s.ln(), -(1.0 - s).ln()]
        })
        .collect();

    // active[k]: whether feature k (a, b) is free
    let mut active = [true, true];
    let mut dropped = Vec::new();
    loop {
        let rows: Vec<Vec<f64>> = features
            .iter()
            .map(|f| {
                let mut row: Vec<f64> = (0..2).filter(|&k| active[k]).map(|k| f[k]).collect();
                row.push(1.0);
                row
            })
            .collect();
        let fit = fit_logistic(&rows, &labels, "beta calibration")?;
        let mut coef = [0.0; 2];
        let mut slot = 0;
        for k in 0..2 {
            if active[k] {
                coef[k] = fit.weights[slot];
                slot += 1;
            }
        }
        let c = fit.weights[slot];

        // drop the most negative coefficient and refit
        let worst = (0..2)
            .filter(|&k| active[k] && coef[k] < 0.0)
            .min_by(|&i, &j| coef[i].total_cmp(&coef[j]));
        if let Some(k) = worst {
            active[k] = false;
            dropped.push(if k == 0 { "a" } else { "b" }.to_string());
            continue;
        }
        return Ok(CalibratorModel {
            map: CalibratorMap::Beta {
                a: coef[0],
                b: coef[1],
                c,
            },
            diagnostics: FitDiagnostics {
                iterations: fit.iterations,
                objective: fit.objective,
                converged: true,
                dropped,
                ..FitDiagnostics::default()
            },
        });
    }
}

/// Pool-adjacent-violators over an ordered sequence: the weighted
/// least-squares non-decreasing fit, one value per input.
pub fn pav(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // blocks of (weighted mean, total weight, member count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut block = (v, w, 1);
        while let Some(&(prev_mean, prev_w, prev_n)) = blocks.last() {
            if prev_mean <= block.0 {
                break;
            }
            blocks.pop();
            let total = prev_w + block.1;
            block = (
                (prev_mean * prev_w + block.0 * block.1) / total,
                total,
                prev_n + block.2,
            );
        }
        blocks.push(block);
    }
    blocks
        .into_iter()
        .flat_map(|(mean, _, n)| std::iter::repeat_n(mean, n))
        .collect()
}

pub fn fit_isotonic(validation: &[ScoredInstance]) -> Result<CalibratorModel> {
    if validation.is_empty() {
        return Err(Error::Empty);
    }
    let mut points: Vec<(f64, f64)> = validation
        .iter()
        .map(|i| (i.score, i.label.as_f64()))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    // tied scores must share one fitted value, so pool them up front
    let mut thresholds = Vec::new();
    let mut means = Vec::new();
    let mut weights = Vec::new();
    for (s, y) in points {
        if thresholds.last() == Some(&s) {
            let k = means.len() - 1;
            let w: f64 = weights[k];
            means[k] = (means[k] * w + y) / (w + 1.0);
            weights[k] = w + 1.0;
        } else {
            thresholds.push(s);
            means.push(y);
            weights.push(1.0);
        }
    }
    let values = pav(&means, &weights);
    let objective = validation
        .iter()
        .map(|i| {
            let idx = thresholds.partition_point(|&t| t <= i.score) - 1;
            (values[idx] - i.label.as_f64()).powi(2)
        })
        .sum::<f64>()
        / validation.len() as f64;
    Ok(CalibratorModel {
        map: CalibratorMap::Isotonic { thresholds, values },
        diagnostics: FitDiagnostics {
            iterations: 1,
            objective,
            converged: true,
            ..FitDiagnostics::default()
        },
    })
}

pub fn fit_platt(validation: &[ScoredInstance]) -> Result<CalibratorModel> {
    require_both_classes(validation)?;
    let (mut pos_min, mut pos_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut neg_min, mut neg_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in validation {
        let (lo, hi) = match i.label {
            Label::Male => (&mut pos_min, &mut pos_max),
            Label::Female => (&mut neg_min, &mut neg_max),
        };
        *lo = lo.min(i.score);
        *hi = hi.max(i.score);
    }
    let separated = if neg_max < pos_min {
        Some((PLATT_SLOPE_CAP, 0.5 * (neg_max + pos_min)))
    } else if pos_max < neg_min {
        Some((-PLATT_SLOPE_CAP, 0.5 * (pos_max + neg_min)))
    } else {
        None
    };
    let labels: Vec<f64> = validation.iter().map(|i| i.label.as_f64()).collect();
    let rows: Vec<Vec<f64>> = validation.iter().map(|i| vec![i.score, 1.0]).collect();

    if let Some((slope, boundary)) = separated {
        log::warn!("platt scaling: classes perfectly separated, slope capped at {slope}");
        let intercept = -slope * boundary;
        return Ok(CalibratorModel {
            map: CalibratorMap::Platt { slope, intercept },
            diagnostics: FitDiagnostics {
                iterations: 0,
                objective: mean_nll(&rows, &labels, &[slope, intercept]),
                converged: false,
                separated: true,
                ..FitDiagnostics::default()
            },
        });
    }

    let fit = fit_logistic(&rows, &labels, "platt scaling")?;
    let (mut slope, mut intercept) = (fit.weights[0], fit.weights[1]);
    let capped = slope.abs() > PLATT_SLOPE_CAP;
    if capped {
        let scale = PLATT_SLOPE_CAP / slope.abs();
        slope *= scale;
        intercept *= scale;
    }
    Ok(CalibratorModel {
        map: CalibratorMap::Platt { slope, intercept },
        diagnostics: FitDiagnostics {
            iterations: fit.iterations,
            objective: mean_nll(&rows, &labels, &[slope, intercept]),
            converged: !capped,
            separated: capped,
            ..FitDiagnostics::default()
        },
    })
}

fn temperature_nll(logits: &[f64], labels: &[f64], log_t: f64) -> f64 {
    let inv = (-log_t).exp();
    logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| softplus(z * inv) - y * z * inv)
        .sum::<f64>()
        / logits.len() as f64
}

pub fn fit_temperature(validation: &[ScoredInstance]) -> Result<CalibratorModel> {
    require_both_classes(validation)?;
    let logits: Vec<f64> = validation.iter().map(|i| logit(i.score)).collect();
    let labels: Vec<f64> = validation.iter().map(|i| i.label.as_f64()).collect();
    let f = |u: f64| temperature_nll(&logits, &labels, u);

    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (TEMPERATURE_MIN.ln(), TEMPERATURE_MAX.ln());
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let mut iterations = 0;
    while hi - lo > TEMPERATURE_TOL {
        iterations += 1;
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    let log_t = 0.5 * (lo + hi);
    let collapsed = TEMPERATURE_MAX.ln() - log_t < 1e-3;
    if collapsed {
        log::warn!("temperature scaling collapsed to the upper bound {TEMPERATURE_MAX}");
    }
    Ok(CalibratorModel {
        map: CalibratorMap::Temperature {
            temperature: log_t.exp(),
        },
        diagnostics: FitDiagnostics {
            iterations,
            objective: f(log_t),
            converged: true,
            collapsed,
            ..FitDiagnostics::default()
        },
    })
}

pub fn fit(kind: CalibratorKind, validation: &[ScoredInstance]) -> Result<CalibratorModel> {
    match kind {
        CalibratorKind::Beta => fit_beta(validation),
        CalibratorKind::Isotonic => fit_isotonic(validation),
        CalibratorKind::Platt => fit_platt(validation),
        CalibratorKind::Temperature => fit_temperature(validation),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub validation_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

/// Seeded shuffle, then the first `validation_count` instances form the
/// validation set and the rest the test set.
pub fn split_holdout(
    instances: &[ScoredInstance],
    spec: SplitSpec,
) -> Result<(Vec<ScoredInstance>, Vec<ScoredInstance>)> {
    let n = instances.len();
    if spec.validation_count + spec.test_count != n
        || spec.validation_count == 0
        || spec.test_count == 0
    {
        return Err(Error::SplitMismatch {
            validation: spec.validation_count,
            test: spec.test_count,
            n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let pick = |idx: &[usize]| idx.iter().map(|&i| instances[i].clone()).collect();
    let (val, test) = order.split_at(spec.validation_count);
    Ok((pick(val), pick(test)))
}

/// Raw and recalibrated test-set reports for one fitted map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub calibrator: CalibratorModel,
    pub before: MetricReport,
    pub after: MetricReport,
    /// Human alignment after minus before.
    pub accuracy_delta: f64,
}

/// Scores `test` before and after applying `model`.
pub fn evaluate_calibrator(
    model: CalibratorModel,
    test: &[ScoredInstance],
    scheme: BinningScheme,
    model_name: &str,
    dataset_name: &str,
) -> Result<CalibrationOutcome> {
    let before = metric_report(test, scheme, model_name, dataset_name)?;
    let after = metric_report(&recalibrate(&model, test), scheme, model_name, dataset_name)?;
    Ok(CalibrationOutcome {
        accuracy_delta: after.human_alignment - before.human_alignment,
        calibrator: model,
        before,
        after,
    })
}

/// Splits, fits `kind` on the validation part, and reports on the test part.
pub fn before_after_report(
    instances: &[ScoredInstance],
    spec: SplitSpec,
    kind: CalibratorKind,
    scheme: BinningScheme,
    model_name: &str,
    dataset_name: &str,
) -> Result<CalibrationOutcome> {
    let (validation, test) = split_holdout(instances, spec)?;
    let model = fit(kind, &validation)?;
    evaluate_calibrator(model, &test, scheme, model_name, dataset_name)
}
