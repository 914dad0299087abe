//! Finite-size scaling: crossing points, chi-square data collapse with
//! bootstrap, and the TEE scaling ansatz.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observables::ResultRow;
use crate::rng::{RngStream, SimRng};

pub const DEFAULT_DEGREE: usize = 4;
pub const DEFAULT_RESTARTS: usize = 8;
pub const DEFAULT_BOOTSTRAP_REPEATS: usize = 10_000;
pub const DEFAULT_NU_RANGE: (f64, f64) = (0.2, 10.0);

const NM_MAX_ITERS: u64 = 4000;
const NM_TOLERANCE: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    #[serde(rename = "L")]
    pub size: usize,
    #[serde(rename = "T")]
    pub temperature: f64,
    pub value: f64,
    pub error: f64,
}

/// Measurements of one observable across sizes and temperatures.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingSeries {
    pub observable: String,
    pub points: Vec<ScalingPoint>,
}

impl ScalingSeries {
    pub fn new(observable: impl Into<String>, points: Vec<ScalingPoint>) -> Result<Self> {
        for p in &points {
            if !(p.error >= 0.0) || !p.value.is_finite() || !p.temperature.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "bad scaling point L={} T={} value={} error={}",
                    p.size, p.temperature, p.value, p.error
                )));
            }
        }
        Ok(ScalingSeries {
            observable: observable.into(),
            points,
        })
    }

    /// Rows of one observable from the results table.
    pub fn from_rows(rows: &[ResultRow], observable: &str) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut points = Vec::new();
        for r in rows.iter().filter(|r| r.observable == observable) {
            if !seen.insert((r.size, r.temperature.to_bits())) {
                return Err(Error::InconsistentRuns(format!(
                    "duplicate {} row at L={} T={}",
                    observable, r.size, r.temperature
                )));
            }
            points.push(ScalingPoint {
                size: r.size,
                temperature: r.temperature,
                value: r.value,
                error: r.error,
            });
        }
        if points.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no rows for observable {observable}"
            )));
        }
        ScalingSeries::new(observable, points)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.points
            .iter()
            .map(|p| p.size)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Points of one size, sorted by temperature.
    pub fn curve(&self, size: usize) -> Vec<ScalingPoint> {
        let mut c: Vec<_> = self
            .points
            .iter()
            .copied()
            .filter(|p| p.size == size)
            .collect();
        c.sort_by(|a, b| a.temperature.total_cmp(&b.temperature));
        c
    }

    fn temperature_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.temperature), hi.max(p.temperature))
            })
    }

    fn require_sizes(&self, needed: usize) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InsufficientData("empty scaling series".into()));
        }
        let n = self.sizes().len();
        if n < needed {
            return Err(Error::InsufficientData(format!(
                "need at least {needed} distinct sizes, got {n}"
            )));
        }
        Ok(())
    }
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
#[derive(Clone, Debug)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::InsufficientData(format!(
                "interpolation needs >= 2 points, got {n}"
            )));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "interpolation abscissae must increase strictly".into(),
            ));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Pchip {
            x: x.to_vec(),
            y: y.to_vec(),
            d,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let k = match self.x.partition_point(|&xi| xi <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[k]
            + (s3 - 2.0 * s2 + s) * h * self.d[k]
            + (-2.0 * s3 + 3.0 * s2) * self.y[k + 1]
            + (s3 - s2) * h * self.d[k + 1]
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub size: usize,
    pub partner: usize,
    pub temperature: f64,
    pub value: f64,
}

fn rescaled_curve(series: &ScalingSeries, size: usize, eta: f64) -> Result<Pchip> {
    let c = series.curve(size);
    if c.is_empty() {
        return Err(Error::InsufficientData(format!("no points for L={size}")));
    }
    let scale = (size as f64).powf(eta);
    let x: Vec<f64> = c.iter().map(|p| p.temperature).collect();
    let y: Vec<f64> = c.iter().map(|p| p.value * scale).collect();
    Pchip::new(&x, &y)
}

/// Crossing of the rescaled curves `value * L^eta` for each size pair.
///
/// Pairs are normalized to (smaller, larger) so the order within a pair does
/// not matter. The lowest-temperature sign change on the shared range wins.
pub fn find_crossings(
    series: &ScalingSeries,
    eta: f64,
    pairs: &[(usize, usize)],
) -> Result<Vec<Crossing>> {
    pairs
        .iter()
        .map(|&(a, b)| {
            let (small, large) = (a.min(b), a.max(b));
            let fa = rescaled_curve(series, small, eta)?;
            let fb = rescaled_curve(series, large, eta)?;
            let lo = fa.knots()[0].max(fb.knots()[0]);
            let hi = fa.knots().last().unwrap().min(*fb.knots().last().unwrap());
            if !(hi > lo) {
                return Err(Error::NoCrossing(small, large));
            }
            let diff = |t: f64| fa.eval(t) - fb.eval(t);
            let mut grid: Vec<f64> = fa
                .knots()
                .iter()
                .chain(fb.knots())
                .copied()
                .filter(|&t| t > lo && t < hi)
                .chain([lo, hi])
                .collect();
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            // Refine so sign changes inside a knot interval are not missed.
            let fine: Vec<f64> = grid
                .windows(2)
                .flat_map(|w| (0..16).map(move |i| w[0] + (w[1] - w[0]) * i as f64 / 16.0))
                .chain([hi])
                .collect();
            let values: Vec<f64> = fine.iter().map(|&t| diff(t)).collect();
            let scale = fine
                .iter()
                .map(|&t| fa.eval(t).abs().max(fb.eval(t).abs()))
                .fold(0.0, f64::max);
            if values
                .iter()
                .all(|v| v.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE))
            {
                return Err(Error::DegenerateCrossing(small, large));
            }
            let k = (0..fine.len() - 1)
                .find(|&k| values[k] == 0.0 || values[k].signum() != values[k + 1].signum())
                .ok_or(Error::NoCrossing(small, large))?;
            let t = if values[k] == 0.0 {
                fine[k]
            } else {
                bisect(&diff, fine[k], fine[k + 1], values[k])
            };
            Ok(Crossing {
                size: small,
                partner: large,
                temperature: t,
                value: 0.5 * (fa.eval(t) + fb.eval(t)),
            })
        })
        .collect()
}

fn bisect(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Least-squares slope of crossing temperature against `1/L`.
pub fn crossing_drift(crossings: &[Crossing]) -> Option<f64> {
    if crossings.len() < 2 {
        return None;
    }
    let n = crossings.len() as f64;
    let xs: Vec<f64> = crossings.iter().map(|c| 1.0 / c.size as f64).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = crossings.iter().map(|c| c.temperature).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs
        .iter()
        .zip(crossings)
        .map(|(x, c)| (x - mx) * (c.temperature - my))
        .sum();
    Some(sxy / sxx)
}

/// `S_res / S_tot` of a joint degree-`degree` polynomial fit of `y` in `mu`.
///
/// Returns 1 (no explanatory power) when the design matrix is rank deficient.
pub fn collapse_loss(mu: &[f64], y: &[f64], degree: usize) -> f64 {
    polynomial_fit(mu, y, degree).map(|f| f.loss).unwrap_or(1.0)
}

struct PolyFit {
    loss: f64,
    fitted: Vec<f64>,
}

fn polynomial_fit(mu: &[f64], y: &[f64], degree: usize) -> Option<PolyFit> {
    let n = mu.len();
    let m = degree + 1;
    if n <= m {
        return None;
    }
    let center = mu.iter().sum::<f64>() / n as f64;
    let span = mu.iter().map(|v| (v - center).abs()).fold(0.0, f64::max);
    if !(span > 0.0) || !span.is_finite() {
        return None;
    }
    let a = DMatrix::from_fn(n, m, |i, j| ((mu[i] - center) / span).powi(j as i32));
    let b = DVector::from_column_slice(y);
    let qr = a.clone().qr();
    let coeffs = qr.r().solve_upper_triangular(&(qr.q().transpose() * &b))?;
    if coeffs.iter().any(|c| !c.is_finite()) {
        return None;
    }
    let fitted = &a * coeffs;
    let mean = y.iter().sum::<f64>() / n as f64;
    let s_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let s_res: f64 = y
        .iter()
        .zip(fitted.iter())
        .map(|(v, f)| (v - f).powi(2))
        .sum();
    if !(s_tot > 0.0) {
        return None;
    }
    Some(PolyFit {
        loss: (s_res / s_tot).clamp(0.0, 1.0),
        fitted: fitted.iter().copied().collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub mean: f64,
    pub std: f64,
}

impl ParamStats {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = if n > 1.0 {
            values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        ParamStats {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSample {
    pub eta: f64,
    pub t_c: f64,
    pub nu: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub n_repeats: usize,
    pub n_failed: usize,
    pub t_c: ParamStats,
    pub nu: ParamStats,
    pub eta: ParamStats,
    pub samples: Vec<BootstrapSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseFit {
    pub t_c: f64,
    pub nu: f64,
    pub eta: f64,
    pub loss: f64,
    pub degree: usize,
    pub bootstrap: Option<BootstrapSummary>,
}

/// Search box and fixed parameters of a collapse.
#[derive(Clone, Copy, Debug)]
struct CollapseProblem<'a> {
    points: &'a [ScalingPoint],
    values: Option<&'a [f64]>,
    eta: f64,
    degree: usize,
    fixed_tc: Option<f64>,
    tc_range: (f64, f64),
    nu_range: (f64, f64),
}

impl CollapseProblem<'_> {
    fn unpack(&self, p: &[f64]) -> (f64, f64) {
        match self.fixed_tc {
            Some(tc) => (tc, p[0]),
            None => (p[0], p[1]),
        }
    }

    fn coordinates(&self, t_c: f64, nu: f64) -> (Vec<f64>, Vec<f64>) {
        let mu = self
            .points
            .iter()
            .map(|p| (p.temperature - t_c) * (p.size as f64).powf(1.0 / nu))
            .collect();
        let y = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| self.values.map_or(p.value, |v| v[i]) * (p.size as f64).powf(self.eta))
            .collect();
        (mu, y)
    }

    fn loss(&self, t_c: f64, nu: f64) -> f64 {
        let (mu, y) = self.coordinates(t_c, nu);
        collapse_loss(&mu, &y, self.degree)
    }

    /// Distance outside the search box; zero inside.
    fn excess(&self, t_c: f64, nu: f64) -> f64 {
        let out = |v: f64, (lo, hi): (f64, f64)| (lo - v).max(0.0) + (v - hi).max(0.0);
        let tc_part = if self.fixed_tc.is_some() {
            0.0
        } else {
            out(t_c, self.tc_range)
        };
        tc_part + out(nu, self.nu_range)
    }
}

impl CostFunction for CollapseProblem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let (t_c, nu) = self.unpack(p);
        let excess = self.excess(t_c, nu);
        if excess > 0.0 {
            return Ok(1.0 + excess);
        }
        Ok(self.loss(t_c, nu))
    }
}

struct Minimum {
    params: Vec<f64>,
    cost: f64,
    converged: bool,
}

fn nelder_mead<C>(cost: C, start: &[f64], steps: &[f64]) -> Minimum
where
    C: CostFunction<Param = Vec<f64>, Output = f64>,
{
    let mut simplex = vec![start.to_vec()];
    for (i, s) in steps.iter().enumerate() {
        let mut v = start.to_vec();
        v[i] += s;
        simplex.push(v);
    }
    let fallback = Minimum {
        params: start.to_vec(),
        cost: f64::INFINITY,
        converged: false,
    };
    let Ok(solver) = NelderMead::new(simplex).with_sd_tolerance(NM_TOLERANCE) else {
        return fallback;
    };
    match Executor::new(cost, solver)
        .configure(|s| s.max_iters(NM_MAX_ITERS))
        .run()
    {
        Ok(res) => {
            let state = res.state();
            Minimum {
                params: state
                    .get_best_param()
                    .cloned()
                    .unwrap_or_else(|| start.to_vec()),
                cost: state.get_best_cost(),
                converged: matches!(
                    state.get_termination_status(),
                    TerminationStatus::Terminated(TerminationReason::SolverConverged)
                ),
            }
        }
        Err(_) => fallback,
    }
}

fn minimize_collapse(problem: CollapseProblem<'_>, starts: &[Vec<f64>]) -> Result<(f64, f64, f64)> {
    let steps: Vec<f64> = match problem.fixed_tc {
        Some(_) => vec![0.1 * (problem.nu_range.1 - problem.nu_range.0)],
        None => vec![
            0.1 * (problem.tc_range.1 - problem.tc_range.0),
            0.1 * (problem.nu_range.1 - problem.nu_range.0),
        ],
    };
    let mut best: Option<Minimum> = None;
    let mut converged = false;
    for start in starts {
        let first = nelder_mead(problem, start, &steps);
        // Restart from the optimum with a small simplex to escape premature collapse.
        let small: Vec<f64> = steps.iter().map(|s| s * 1e-3).collect();
        let polished = nelder_mead(problem, &first.params, &small);
        let m = if polished.cost <= first.cost {
            polished
        } else {
            first
        };
        converged |= m.converged;
        if best.as_ref().is_none_or(|b| m.cost < b.cost) {
            best = Some(m);
        }
    }
    let best = best.ok_or_else(|| Error::InvalidParameter("no optimizer starts".into()))?;
    let (t_c, nu) = problem.unpack(&best.params);
    if !converged || !(best.cost <= 1.0) {
        return Err(Error::FitFailed {
            message: format!("collapse did not converge after {} starts", starts.len()),
            best_params: vec![t_c, nu],
            best_loss: best.cost,
        });
    }
    Ok((t_c, nu, best.cost))
}

fn random_starts(problem: &CollapseProblem<'_>, rng: &mut SimRng, n: usize) -> Vec<Vec<f64>> {
    let (tlo, thi) = problem.tc_range;
    let (nlo, nhi) = problem.nu_range;
    let central = match problem.fixed_tc {
        Some(_) => vec![0.5 * (nlo + nhi)],
        None => vec![0.5 * (tlo + thi), (nlo * nhi).sqrt()],
    };
    let mut starts = vec![central];
    for _ in 1..n.max(1) {
        // Log-uniform in nu since the exponent enters as L^(1/nu).
        let nu = (nlo.ln() + rng.gen::<f64>() * (nhi.ln() - nlo.ln())).exp();
        starts.push(match problem.fixed_tc {
            Some(_) => vec![nu],
            None => vec![tlo + rng.gen::<f64>() * (thi - tlo), nu],
        });
    }
    starts
}

fn collapse_problem<'a>(
    series: &'a ScalingSeries,
    eta: f64,
    degree: usize,
) -> Result<CollapseProblem<'a>> {
    series.require_sizes(2)?;
    if degree < 1 {
        return Err(Error::InvalidParameter(
            "polynomial degree must be at least 1".into(),
        ));
    }
    if series.points.len() <= degree + 1 {
        return Err(Error::InsufficientData(format!(
            "{} points cannot constrain a degree-{degree} polynomial",
            series.points.len()
        )));
    }
    Ok(CollapseProblem {
        points: &series.points,
        values: None,
        eta,
        degree,
        fixed_tc: None,
        tc_range: series.temperature_range(),
        nu_range: DEFAULT_NU_RANGE,
    })
}

/// Minimizes the collapse loss over `(T_c, nu)` at fixed `eta`.
pub fn collapse_fit(
    series: &ScalingSeries,
    eta: f64,
    degree: usize,
    rng: &mut SimRng,
    n_restarts: usize,
) -> Result<CollapseFit> {
    let problem = collapse_problem(series, eta, degree)?;
    let starts = random_starts(&problem, rng, n_restarts);
    let (t_c, nu, loss) = minimize_collapse(problem, &starts)?;
    Ok(CollapseFit {
        t_c,
        nu,
        eta,
        loss,
        degree,
        bootstrap: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub eta_range: (f64, f64),
    pub n_repeats: usize,
    pub degree: usize,
    pub n_restarts: usize,
    pub seed: u64,
    /// Largest tolerated fraction of failed repeats.
    pub max_failure_fraction: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            eta_range: (0.14, 0.18),
            n_repeats: DEFAULT_BOOTSTRAP_REPEATS,
            degree: DEFAULT_DEGREE,
            n_restarts: 2,
            seed: 0,
            max_failure_fraction: 0.1,
        }
    }
}

/// Refits with `eta` uniform in `eta_range` and every value perturbed by a
/// Gaussian of its error. Repeat `r` draws from stream `r` of `seed`.
pub fn bootstrap_collapse(series: &ScalingSeries, config: &BootstrapConfig) -> Result<CollapseFit> {
    if config.n_repeats < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: config.n_repeats,
        });
    }
    let (elo, ehi) = config.eta_range;
    if !(ehi >= elo) {
        return Err(Error::InvalidParameter(format!(
            "empty eta range [{elo}, {ehi}]"
        )));
    }
    let eta_mid = 0.5 * (elo + ehi);
    let base = collapse_problem(series, eta_mid, config.degree)?;
    let mut rng = RngStream::new(config.seed, u64::MAX).rng();
    let central_starts = random_starts(&base, &mut rng, config.n_restarts.max(DEFAULT_RESTARTS));
    let (t_c, nu, loss) = minimize_collapse(base, &central_starts)?;

    let outcomes: Vec<Option<BootstrapSample>> = (0..config.n_repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(config.seed, r as u64).rng();
            let eta = if ehi > elo {
                elo + rng.gen::<f64>() * (ehi - elo)
            } else {
                elo
            };
            let values: Vec<f64> = series
                .points
                .iter()
                .map(|p| p.value + p.error * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let problem = CollapseProblem {
                values: Some(&values),
                eta,
                ..base
            };
            let mut starts = vec![vec![t_c, nu]];
            starts.extend(
                random_starts(&problem, &mut rng, config.n_restarts)
                    .into_iter()
                    .skip(1),
            );
            minimize_collapse(problem, &starts)
                .ok()
                .map(|(t_c, nu, loss)| BootstrapSample { eta, t_c, nu, loss })
        })
        .collect();
    let samples: Vec<BootstrapSample> = outcomes.iter().flatten().copied().collect();
    let n_failed = config.n_repeats - samples.len();
    if samples.is_empty() || n_failed as f64 > config.max_failure_fraction * config.n_repeats as f64
    {
        return Err(Error::FitFailed {
            message: format!(
                "{n_failed} of {} bootstrap repeats failed",
                config.n_repeats
            ),
            best_params: vec![t_c, nu],
            best_loss: loss,
        });
    }
    let summary = BootstrapSummary {
        n_repeats: config.n_repeats,
        n_failed,
        t_c: ParamStats::of(samples.iter().map(|s| s.t_c)),
        nu: ParamStats::of(samples.iter().map(|s| s.nu)),
        eta: ParamStats::of(samples.iter().map(|s| s.eta)),
        samples,
    };
    Ok(CollapseFit {
        t_c,
        nu,
        eta: eta_mid,
        loss,
        degree: config.degree,
        bootstrap: Some(summary),
    })
}

/// Spread of one pair's crossing temperature under Gaussian resampling of the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingSpread {
    pub size: usize,
    pub partner: usize,
    pub temperature: ParamStats,
    pub n_failed: usize,
}

/// Re-locates each pair's crossing on `n_repeats` resampled copies of the data,
/// with `eta` drawn uniformly from `eta_range` per repeat as in [`bootstrap_collapse`].
pub fn bootstrap_crossings(
    series: &ScalingSeries,
    eta_range: (f64, f64),
    pairs: &[(usize, usize)],
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<CrossingSpread>> {
    if n_repeats < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: n_repeats,
        });
    }
    let (elo, ehi) = eta_range;
    let draws: Vec<Vec<Option<f64>>> = (0..n_repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(seed, r as u64).rng();
            let eta = if ehi > elo {
                elo + rng.gen::<f64>() * (ehi - elo)
            } else {
                elo
            };
            let mut resampled = series.clone();
            for p in &mut resampled.points {
                p.value += p.error * rng.sample::<f64, _>(StandardNormal);
            }
            pairs
                .iter()
                .map(|&pair| {
                    find_crossings(&resampled, eta, &[pair])
                        .ok()
                        .and_then(|c| c.first().map(|c| c.temperature))
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(pairs.len());
    for (i, &(size, partner)) in pairs.iter().enumerate() {
        let hits: Vec<f64> = draws.iter().filter_map(|d| d[i]).collect();
        if hits.is_empty() {
            return Err(Error::NoCrossing(size, partner));
        }
        out.push(CrossingSpread {
            size,
            partner,
            temperature: ParamStats::of(hits.iter().copied()),
            n_failed: n_repeats - hits.len(),
        });
    }
    Ok(out)
}

/// Collapse of `gamma(T, L) = f((T - T_c) L^(1/nu))` with no prefactor.
/// `t_c = None` co-fits the critical temperature.
pub fn tee_collapse(
    series: &ScalingSeries,
    nu_range: (f64, f64),
    t_c: Option<f64>,
    degree: usize,
    rng: &mut SimRng,
    n_restarts: usize,
) -> Result<CollapseFit> {
    if !(nu_range.0 > 0.0 && nu_range.1 > nu_range.0) {
        return Err(Error::InvalidParameter(format!(
            "bad nu range {nu_range:?}"
        )));
    }
    let problem = CollapseProblem {
        fixed_tc: t_c,
        nu_range,
        ..collapse_problem(series, 0.0, degree)?
    };
    let starts = random_starts(&problem, rng, n_restarts);
    let (t_c, nu, loss) = minimize_collapse(problem, &starts)?;
    Ok(CollapseFit {
        t_c,
        nu,
        eta: 0.0,
        loss,
        degree,
        bootstrap: None,
    })
}

/// `ln 2 * (1 - ln(1 + a exp(-b x^(1/nu))) / ln(1 + a))` with `x = L / xi`.
pub fn tee_ansatz(x: f64, a: f64, b: f64, nu: f64) -> f64 {
    std::f64::consts::LN_2 * (1.0 - (a * (-b * x.powf(1.0 / nu)).exp()).ln_1p() / a.ln_1p())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnsatzFit {
    pub a: f64,
    pub b: f64,
    pub residual: f64,
}

#[derive(Clone, Copy)]
struct AnsatzProblem<'a> {
    points: &'a [(f64, f64)],
    nu: f64,
}

impl CostFunction for AnsatzProblem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let (a, b) = (p[0].exp(), p[1].exp());
        let r: f64 = self
            .points
            .iter()
            .map(|&(x, g)| (tee_ansatz(x, a, b, self.nu) - g).powi(2))
            .sum();
        Ok(if r.is_finite() { r } else { f64::INFINITY })
    }
}

/// Least-squares `(a, b)` of the TEE ansatz on `(L/xi, gamma)` points.
pub fn tee_ansatz_fit(points: &[(f64, f64)], nu: f64) -> Result<AnsatzFit> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "ansatz fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    if !(nu > 0.0) || points.iter().any(|&(x, g)| !(x >= 0.0) || !g.is_finite()) {
        return Err(Error::InvalidParameter(
            "ansatz fit needs nu > 0, x >= 0 and finite gamma".into(),
        ));
    }
    let problem = AnsatzProblem { points, nu };
    let mut best = Minimum {
        params: vec![0.0, 0.0],
        cost: f64::INFINITY,
        converged: false,
    };
    let mut converged = false;
    for la in [-2.0, 0.0, 2.0, 4.0] {
        for lb in [-2.0, 0.0, 2.0] {
            let mut m = nelder_mead(problem, &[la, lb], &[0.5, 0.5]);
            for _ in 0..3 {
                let again = nelder_mead(problem, &m.params, &[1e-3, 1e-3]);
                if again.cost < m.cost {
                    m = again;
                } else {
                    break;
                }
            }
            converged |= m.converged;
            if m.cost < best.cost {
                best = m;
            }
        }
    }
    let (a, b) = (best.params[0].exp(), best.params[1].exp());
    if !converged || !best.cost.is_finite() {
        return Err(Error::FitFailed {
            message: "ansatz fit did not converge".into(),
            best_params: vec![a, b],
            best_loss: best.cost,
        });
    }
    Ok(AnsatzFit {
        a,
        b,
        residual: best.cost,
    })
}

/// One point in collapse coordinates with its polynomial fit value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledPoint {
    #[serde(rename = "L")]
    pub size: usize,
    #[serde(rename = "T")]
    pub temperature: f64,
    pub mu: f64,
    pub y: f64,
    pub fitted: f64,
    pub residual: f64,
}

pub fn rescaled_points(series: &ScalingSeries, fit: &CollapseFit) -> Vec<RescaledPoint> {
    let problem = CollapseProblem {
        points: &series.points,
        values: None,
        eta: fit.eta,
        degree: fit.degree,
        fixed_tc: None,
        tc_range: (fit.t_c, fit.t_c),
        nu_range: (fit.nu, fit.nu),
    };
    let (mu, y) = problem.coordinates(fit.t_c, fit.nu);
    let fitted = polynomial_fit(&mu, &y, fit.degree)
        .map(|f| f.fitted)
        .unwrap_or_else(|| vec![f64::NAN; y.len()]);
    series
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| RescaledPoint {
            size: p.size,
            temperature: p.temperature,
            mu: mu[i],
            y: y[i],
            fitted: fitted[i],
            residual: y[i] - fitted[i],
        })
        .collect()
}

pub fn write_rescaled_csv<W: Write>(out: W, points: &[RescaledPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Everything the `analyze` step writes for one observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub observable: String,
    pub fit: CollapseFit,
    pub crossings: Vec<Crossing>,
    pub crossing_drift: Option<f64>,
    pub crossing_errors: BTreeMap<String, String>,
    #[serde(default)]
    pub crossing_spread: Vec<CrossingSpread>,
    pub points: Vec<RescaledPoint>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Consecutive doubling pairs `(L, 2L)` present in the series.
pub fn doubling_pairs(series: &ScalingSeries) -> Vec<(usize, usize)> {
    let sizes = series.sizes();
    sizes
        .iter()
        .filter(|&&l| sizes.contains(&(2 * l)))
        .map(|&l| (l, 2 * l))
        .collect()
}
