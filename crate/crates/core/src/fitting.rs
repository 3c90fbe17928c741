//! Least-squares fits: the power-law approach of `1 - F` to zero, and
//! linear / base-2 exponential growth of optimal time with qubit count.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::continuation::Envelope;
use crate::error::{invalid, Error, Result};

/// Default fidelity-defect window used to locate the unit-fidelity limit.
pub const DEFAULT_WINDOW: (f64, f64) = (0.002, 0.01);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    Power,
    Linear,
    Exp2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum FitParameters {
    /// `y = a (b - x)^c`
    Power { a: f64, b: f64, c: f64 },
    /// `t = slope n + intercept`
    Linear { slope: f64, intercept: f64 },
    /// `t = prefactor 2^(rate n)`
    Exp2 { prefactor: f64, rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: FitParameters,
    pub residual_ss: f64,
    pub points: usize,
    /// `(lo, hi)` bounds on `y` applied before fitting, if any.
    pub window: Option<(f64, f64)>,
    pub iterations: usize,
}

impl FitResult {
    pub fn model(&self) -> FitModel {
        match self.parameters {
            FitParameters::Power { .. } => FitModel::Power,
            FitParameters::Linear { .. } => FitModel::Linear,
            FitParameters::Exp2 { .. } => FitModel::Exp2,
        }
    }

    /// The time-complexity estimate `b` of a power fit.
    pub fn estimate(&self) -> Option<f64> {
        match self.parameters {
            FitParameters::Power { b, .. } => Some(b),
            _ => None,
        }
    }
}

fn sorted(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    p
}

fn power_model(x: f64, a: f64, b: f64, c: f64) -> f64 {
    a * (b - x).powf(c)
}

fn power_ssr(points: &[(f64, f64)], a: f64, b: f64, c: f64) -> f64 {
    points
        .iter()
        .map(|&(x, y)| (y - power_model(x, a, b, c)).powi(2))
        .sum()
}

/// Fits `y = a (b - x)^c` to the points whose `y` lies in `window`.
///
/// Works in the variables `(ln a, ln(b - max x), c)`, which keeps `a > 0`
/// and `b > max x` by construction. Levenberg-damped Gauss-Newton starting
/// from `b0 = max x + 0.1 (max x - min x)`, `c0 = 3`, and `a0` matched to
/// the two extreme points. The damping grows tenfold on a rejected step
/// and halves on an accepted one.
pub fn fit_power(points: &[(f64, f64)], window: Option<(f64, f64)>) -> Result<FitResult> {
    let (lo, hi) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let pts: Vec<(f64, f64)> = sorted(points)
        .into_iter()
        .filter(|&(x, y)| x.is_finite() && y.is_finite() && y >= lo && y <= hi)
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} points inside the window, need at least 4",
            pts.len()
        )));
    }
    if pts.iter().any(|&(_, y)| y <= 0.0) {
        return Err(invalid("power-law data needs positive y"));
    }
    let x_min = pts.first().unwrap().0;
    let x_max = pts.last().unwrap().0;
    let span = (x_max - x_min).max(1e-12);

    let mut best: Option<(FitResult, bool)> = None;
    for &offset in &[0.1, 0.5, 1.0, 0.03, 2.0] {
        let (result, ok) = power_from_start(&pts, x_max, span, offset, window);
        let better = match &best {
            None => true,
            Some((b, b_ok)) => (ok && !b_ok) || (ok == *b_ok && result.residual_ss < b.residual_ss),
        };
        if better {
            best = Some((result, ok));
        }
        if let Some((b, true)) = &best {
            if b.residual_ss <= 1e-30 + 1e-20 * pts.iter().map(|p| p.1 * p.1).sum::<f64>() {
                break;
            }
        }
    }
    let (result, ok) = best.expect("at least one start");
    if ok {
        Ok(result)
    } else {
        Err(Error::NoConvergence {
            iterations: result.iterations,
            best: Box::new(result),
        })
    }
}

fn power_from_start(
    pts: &[(f64, f64)],
    x_max: f64,
    span: f64,
    offset: f64,
    window: Option<(f64, f64)>,
) -> (FitResult, bool) {
    const MAX_ITER: usize = 500;
    let d0 = offset * span;
    let c0 = 3.0;
    let (x_lo, y_lo) = pts[0];
    let (x_hi, y_hi) = pts[pts.len() - 1];
    let b0 = x_max + d0;
    let a0 = ((y_lo / (b0 - x_lo).powf(c0)) * (y_hi / (b0 - x_hi).powf(c0))).sqrt();

    let mut theta = Vector3::new(a0.ln(), d0.ln(), c0);
    let unpack = |t: &Vector3<f64>| (t[0].exp(), x_max + t[1].exp(), t[2]);
    let ssr_of = |t: &Vector3<f64>| {
        let (a, b, c) = unpack(t);
        if !(c > 0.0) {
            return f64::INFINITY;
        }
        power_ssr(pts, a, b, c)
    };
    let mut ssr = ssr_of(&theta);
    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITER {
        iterations += 1;
        let (a, b, c) = unpack(&theta);
        let d = theta[1].exp();
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for &(x, y) in pts {
            let base = b - x;
            let f = power_model(x, a, b, c);
            let row = Vector3::new(f, f * c * d / base, f * base.ln());
            jtj += row * row.transpose();
            jtr += row * (y - f);
        }
        let grad_norm = jtr.norm();
        if grad_norm < 1e-300 {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = jtj;
            for i in 0..3 {
                damped[(i, i)] += mu * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = damped.lu().solve(&jtr) else {
                mu *= 10.0;
                continue;
            };
            let trial = theta + step;
            let trial_ssr = ssr_of(&trial);
            if trial_ssr.is_finite() && trial_ssr <= ssr {
                let rel_drop = (ssr - trial_ssr) / ssr.max(1e-300);
                let small_step = step.norm() < 1e-13 * (1.0 + theta.norm());
                theta = trial;
                ssr = trial_ssr;
                mu = (mu * 0.5).max(1e-12);
                accepted = true;
                if rel_drop < 1e-15 || small_step || ssr < 1e-32 {
                    converged = true;
                }
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            // no descent direction left at machine precision
            converged = true;
        }
        if converged {
            break;
        }
    }
    let (a, b, c) = unpack(&theta);
    let ok = converged && a.is_finite() && b.is_finite() && c > 0.0 && ssr.is_finite();
    (
        FitResult {
            parameters: FitParameters::Power { a, b, c },
            residual_ss: ssr,
            points: pts.len(),
            window,
            iterations,
        },
        ok,
    )
}

/// Power fit of `(T/T2_MAX, 1 - F)` over the converged envelope points whose
/// defect lies in `window`; the estimate is the fitted `b`.
pub fn estimate_time_complexity(envelope: &Envelope, window: (f64, f64)) -> Result<FitResult> {
    let points: Vec<(f64, f64)> = envelope
        .points
        .iter()
        .filter(|p| p.status.is_converged())
        .map(|p| (p.t_rel, 1.0 - p.fidelity))
        .collect();
    fit_power(&points, Some(window))
}

/// Ordinary least squares `(slope, intercept, residual)`.
fn ols(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let pts = sorted(points);
    let mut distinct = pts.iter().map(|p| p.0).collect::<Vec<_>>();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InsufficientData(
            "need at least two distinct abscissae".into(),
        ));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = pts
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum();
    Ok((slope, intercept, rss))
}

pub fn fit_linear(points: &[(f64, f64)]) -> Result<FitResult> {
    let (slope, intercept, rss) = ols(points)?;
    Ok(FitResult {
        parameters: FitParameters::Linear { slope, intercept },
        residual_ss: rss,
        points: points.len(),
        window: None,
        iterations: 1,
    })
}

/// `t = p 2^(q n)` by least squares on `log2 t`. The residual is reported
/// in `log2` units.
pub fn fit_exp2(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.iter().any(|&(_, t)| !(t > 0.0)) {
        return Err(invalid("exponential fit needs positive values"));
    }
    let logged: Vec<(f64, f64)> = points.iter().map(|&(n, t)| (n, t.log2())).collect();
    let (rate, intercept, rss) = ols(&logged)?;
    Ok(FitResult {
        parameters: FitParameters::Exp2 {
            prefactor: 2f64.powf(intercept),
            rate,
        },
        residual_ss: rss,
        points: points.len(),
        window: None,
        iterations: 1,
    })
}
