//! Profile likelihoods and chi-square threshold confidence intervals.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{FitResult, Interval, Objective, Param};
use crate::optim::NelderMead;
use crate::synthesis::IncidenceDataset;

/// 95% quantile of the chi-square distribution with one degree of freedom.
pub const CHI2_95_1: f64 = 3.841_458_820_694_124;

#[derive(Clone, Debug)]
pub struct ProfileOptions {
    /// Grid size; odd so the MLE sits at the centre.
    pub n_points: usize,
    /// Half-width of the grid in Wald standard errors.
    pub span_se: f64,
    /// Relative half-width used when no standard error is available.
    pub fallback_span: f64,
    pub optimizer: NelderMead,
    /// Points inserted between each straddling pair in the refinement pass.
    pub refine_points: usize,
    /// Stop a sweep direction after this many consecutive points beyond the
    /// threshold. `None` evaluates the whole grid.
    pub stop_after_crossing: Option<usize>,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            n_points: 41,
            span_se: 6.0,
            fallback_span: 0.5,
            // Warm starts sit next to the optimum, so a small simplex and no
            // restart pass suffice.
            optimizer: NelderMead {
                initial_step: 0.05,
                restarts: 0,
                ..NelderMead::default()
            },
            refine_points: 3,
            stop_after_crossing: None,
        }
    }
}

impl ProfileOptions {
    /// Evaluates only as far past the threshold as the interval needs.
    pub fn truncated() -> Self {
        ProfileOptions {
            stop_after_crossing: Some(2),
            ..ProfileOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub param: Param,
    /// Natural scale, ascending; includes refinement points.
    pub grid: Vec<f64>,
    /// `None` where the re-optimization failed.
    pub profile_loglik: Vec<Option<f64>>,
    pub mle_value: f64,
    pub mle_loglik: f64,
    pub ci: Interval,
    /// The threshold set is not a single interval around the MLE.
    pub disconnected: bool,
}

impl ProfileCurve {
    pub fn max_loglik(&self) -> Option<f64> {
        self.profile_loglik.iter().flatten().copied().reduce(f64::max)
    }

    /// Index of the evaluated grid point nearest the MLE.
    pub fn nearest_mle(&self) -> Option<usize> {
        self.grid
            .iter()
            .zip(&self.profile_loglik)
            .enumerate()
            .filter(|(_, (_, l))| l.is_some())
            .min_by(|(_, (a, _)), (_, (b, _))| {
                (*a - self.mle_value).abs().total_cmp(&(*b - self.mle_value).abs())
            })
            .map(|(i, _)| i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileCi {
    pub interval: Interval,
    pub disconnected: bool,
}

fn clip(p: Param, v: f64) -> f64 {
    match p {
        Param::C1 => v.clamp(1e-6, 1.0 - 1e-6),
        _ => v.max(1e-6),
    }
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if n == 1 {
            a
        } else {
            a + (b - a) * i as f64 / (n - 1) as f64
        }
    })
}

/// Two equal-count spans meeting at the MLE, reaching `span_se` Wald
/// standard errors either side (clipped to the parameter's domain).
pub fn default_grid(fit: &FitResult, param: Param, options: &ProfileOptions) -> Result<Vec<f64>> {
    let k = fit
        .params
        .iter()
        .position(|&q| q == param)
        .ok_or_else(|| Error::NotFree(param.to_string()))?;
    let centre = fit.mle[k];
    let half = match fit.standard_error(param) {
        Some(se) if se.is_finite() && se > 0.0 => options.span_se * se,
        _ => match param {
            Param::C1 => options.fallback_span,
            _ => options.fallback_span * centre.abs().max(1e-3),
        },
    };
    let side = options.n_points.max(3) / 2 + 1;
    let lo = clip(param, centre - half);
    let hi = clip(param, centre + half);
    let mut grid: Vec<f64> = linspace(lo, centre, side).collect();
    grid.extend(linspace(centre, hi, side).skip(1));
    Ok(grid)
}

/// Re-optimizes the nuisance parameters of a negative log-likelihood on the
/// unconstrained scale with one coordinate pinned.
struct Profiler<'a> {
    neg_loglik: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    params: &'a [Param],
    k: usize,
    optimizer: &'a NelderMead,
}

impl Profiler<'_> {
    fn full(&self, zk: f64, nuisance: &[f64]) -> Vec<f64> {
        let mut z = nuisance.to_vec();
        z.insert(self.k, zk);
        z
    }

    /// Profile log-likelihood at a natural-scale value, and the nuisance optimum.
    fn at(&self, value: f64, warm: &[f64]) -> Result<(Option<f64>, Vec<f64>)> {
        let zk = self.params[self.k].to_unconstrained(value)?;
        let f = |w: &[f64]| (self.neg_loglik)(&self.full(zk, w));
        let m = self.optimizer.minimize(f, warm);
        let ll = (m.converged && m.value.is_finite()).then_some(-m.value);
        Ok((ll, m.x))
    }
}

struct Point {
    value: f64,
    loglik: Option<f64>,
    nuisance: Option<Vec<f64>>,
}

/// Profile over `grid` of a parameter of a fitted model.
pub fn profile(
    param: Param,
    datasets: &[IncidenceDataset],
    fit: &FitResult,
    grid: &[f64],
    options: &ProfileOptions,
) -> Result<ProfileCurve> {
    let objective = Objective::new(datasets, &fit.spec)?;
    let f = |z: &[f64]| objective.neg_loglik_unconstrained(z);
    profile_function(&f, &fit.params, &fit.mle_unconstrained, fit.loglik, param, grid, options)
}

/// Profiles of every free parameter on their default grids.
pub fn profile_all(
    datasets: &[IncidenceDataset],
    fit: &FitResult,
    options: &ProfileOptions,
) -> Result<Vec<ProfileCurve>> {
    fit.params
        .par_iter()
        .map(|&p| {
            let grid = default_grid(fit, p, options)?;
            profile(p, datasets, fit, &grid, options)
        })
        .collect()
}

/// Profile of an arbitrary negative log-likelihood on the unconstrained
/// scale of `params`, with optimum `z_hat` and maximum `mle_loglik`.
pub fn profile_function(
    neg_loglik: &(dyn Fn(&[f64]) -> f64 + Sync),
    params: &[Param],
    z_hat: &[f64],
    mle_loglik: f64,
    param: Param,
    grid: &[f64],
    options: &ProfileOptions,
) -> Result<ProfileCurve> {
    let k = params
        .iter()
        .position(|&q| q == param)
        .ok_or_else(|| Error::NotFree(param.to_string()))?;
    if grid.is_empty() {
        return Err(Error::InconsistentProfile("empty grid".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mle_value = param.from_unconstrained(z_hat[k]);
    let profiler = Profiler {
        neg_loglik,
        params,
        k,
        optimizer: &options.optimizer,
    };
    let mut warm_mle = z_hat.to_vec();
    warm_mle.remove(k);

    let start = grid
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| (*a - mle_value).abs().total_cmp(&(*b - mle_value).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut points: Vec<Option<Point>> = (0..grid.len()).map(|_| None).collect();
    let (ll, nuis) = profiler.at(grid[start], &warm_mle)?;
    points[start] = Some(Point {
        value: grid[start],
        loglik: ll,
        nuisance: ll.map(|_| nuis),
    });

    let outside = |ll: Option<f64>| ll.is_some_and(|l| 2.0 * (mle_loglik - l) > CHI2_95_1);
    let sweep = |indices: &mut dyn Iterator<Item = usize>, points: &mut Vec<Option<Point>>| -> Result<()> {
        let mut warm = points[start]
            .as_ref()
            .and_then(|p| p.nuisance.clone())
            .unwrap_or_else(|| warm_mle.clone());
        let mut beyond = 0;
        for i in indices {
            let (ll, nuis) = profiler.at(grid[i], &warm)?;
            if ll.is_some() {
                warm = nuis.clone();
            }
            points[i] = Some(Point {
                value: grid[i],
                loglik: ll,
                nuisance: ll.map(|_| nuis),
            });
            if outside(ll) {
                beyond += 1;
            } else if ll.is_some() {
                beyond = 0;
            }
            if options.stop_after_crossing.is_some_and(|m| beyond >= m) {
                break;
            }
        }
        Ok(())
    };
    sweep(&mut (start + 1..grid.len()), &mut points)?;
    sweep(&mut (0..start).rev(), &mut points)?;
    let mut points: Vec<Point> = points.into_iter().flatten().collect();

    if options.refine_points > 0 {
        let mut extra = Vec::new();
        let evaluated: Vec<&Point> = points.iter().filter(|p| p.loglik.is_some()).collect();
        for pair in evaluated.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if outside(a.loglik) == outside(b.loglik) {
                continue;
            }
            let inner = if outside(a.loglik) { b } else { a };
            let warm = inner.nuisance.clone().unwrap_or_else(|| warm_mle.clone());
            let n = options.refine_points;
            for j in 1..=n {
                let value = a.value + (b.value - a.value) * j as f64 / (n + 1) as f64;
                let (ll, nuis) = profiler.at(value, &warm)?;
                extra.push(Point {
                    value,
                    loglik: ll,
                    nuisance: ll.map(|_| nuis),
                });
            }
        }
        points.extend(extra);
        points.sort_by(|a, b| a.value.total_cmp(&b.value));
    }

    let mut curve = ProfileCurve {
        param,
        grid: points.iter().map(|p| p.value).collect(),
        profile_loglik: points.iter().map(|p| p.loglik).collect(),
        mle_value,
        mle_loglik,
        ci: Interval::unbounded(),
        disconnected: false,
    };
    let ci = ci_from_profile(&curve)?;
    curve.ci = ci.interval;
    curve.disconnected = ci.disconnected;
    Ok(curve)
}

/// `{ theta : 2 (l_max - PL(theta)) <= 3.84 }` with endpoints interpolated
/// linearly between the grid points that straddle the threshold. Ends that
/// never cross are left open. `l_max` is the larger of the stored MLE
/// log-likelihood and the best profile value.
pub fn ci_from_profile(curve: &ProfileCurve) -> Result<ProfileCi> {
    let pts: Vec<(f64, f64)> = curve
        .grid
        .iter()
        .zip(&curve.profile_loglik)
        .filter_map(|(&x, l)| l.map(|l| (x, l)))
        .collect();
    if pts.is_empty() {
        return Err(Error::InconsistentProfile("no evaluated grid points".into()));
    }
    let reference = curve.max_loglik().map_or(curve.mle_loglik, |m| m.max(curve.mle_loglik));
    let dev: Vec<f64> = pts.iter().map(|&(_, l)| 2.0 * (reference - l)).collect();
    let centre = pts
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| (a.0 - curve.mle_value).abs().total_cmp(&(b.0 - curve.mle_value).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if dev[centre] > CHI2_95_1 {
        return Err(Error::InconsistentProfile(format!(
            "{} profile at the MLE is {:.3} below the maximum",
            curve.param,
            dev[centre] / 2.0
        )));
    }
    let crossing = |i: usize, j: usize| {
        let (xa, xb) = (pts[i].0, pts[j].0);
        let (da, db) = (dev[i], dev[j]);
        xa + (xb - xa) * (CHI2_95_1 - da) / (db - da)
    };
    let mut upper = None;
    let mut hi = centre;
    for j in centre + 1..pts.len() {
        if dev[j] > CHI2_95_1 {
            upper = Some(crossing(j - 1, j));
            break;
        }
        hi = j;
    }
    let mut lower = None;
    let mut lo = centre;
    for j in (0..centre).rev() {
        if dev[j] > CHI2_95_1 {
            lower = Some(crossing(j + 1, j));
            break;
        }
        lo = j;
    }
    let disconnected = dev
        .iter()
        .enumerate()
        .any(|(i, &d)| (i < lo || i > hi) && d <= CHI2_95_1);
    Ok(ProfileCi {
        interval: Interval { lower, upper },
        disconnected,
    })
}

/// Writes `param,grid_value,profile_loglik,within_ci` rows; gaps leave the
/// log-likelihood empty.
pub fn write_profile_csv<W: Write>(curve: &ProfileCurve, mut w: W) -> std::io::Result<()> {
    writeln!(w, "param,grid_value,profile_loglik,within_ci")?;
    for (x, l) in curve.grid.iter().zip(&curve.profile_loglik) {
        let ll = l.map(|v| v.to_string()).unwrap_or_default();
        let inside = l.is_some() && curve.ci.contains(*x);
        writeln!(w, "{},{},{},{}", curve.param, x, ll, inside)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bivariate Gaussian log-likelihood on natural-scale (r0, t0).
    fn toy() -> (impl Fn(&[f64]) -> f64 + Sync, [f64; 2], [[f64; 2]; 2]) {
        let mu = [3.0, 15.0];
        let cov = [[0.04, 0.06], [0.06, 0.25]];
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let prec = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        let params = [Param::R0, Param::T0];
        let f = move |z: &[f64]| {
            let x0 = params[0].from_unconstrained(z[0]) - mu[0];
            let x1 = params[1].from_unconstrained(z[1]) - mu[1];
            0.5 * (prec[0][0] * x0 * x0 + 2.0 * prec[0][1] * x0 * x1 + prec[1][1] * x1 * x1)
        };
        (f, mu, cov)
    }

    fn z_hat(mu: [f64; 2]) -> Vec<f64> {
        vec![mu[0].ln(), mu[1].ln()]
    }

    #[test]
    fn quadratic_toy_matches_conditional_maximum() {
        let (f, mu, cov) = toy();
        let params = [Param::R0, Param::T0];
        let grid: Vec<f64> = linspace(2.4, 3.6, 41).collect();
        let curve = profile_function(&f, &params, &z_hat(mu), 0.0, Param::R0, &grid, &ProfileOptions::default())
            .unwrap();
        for (x, l) in curve.grid.iter().zip(&curve.profile_loglik) {
            let expected = -0.5 * (x - mu[0]).powi(2) / cov[0][0];
            assert!((l.unwrap() - expected).abs() < 1e-5, "at {x}: {l:?} vs {expected}");
        }
        let sigma = cov[0][0].sqrt();
        let half = CHI2_95_1.sqrt() * sigma;
        let ci = curve.ci;
        let step = 1.2 / 40.0;
        assert!((ci.lower.unwrap() - (mu[0] - half)).abs() < step * 0.1);
        assert!((ci.upper.unwrap() - (mu[0] + half)).abs() < step * 0.1);
        assert!((half - 1.96 * sigma).abs() < 1e-3);
        assert!(!curve.disconnected);
        assert!(curve.max_loglik().unwrap() <= curve.mle_loglik + 1e-4);
        let near = curve.nearest_mle().unwrap();
        assert!((curve.profile_loglik[near].unwrap() - curve.mle_loglik).abs() < 1e-3);
    }

    #[test]
    fn truncated_sweep_gives_same_interval() {
        let (f, mu, _) = toy();
        let params = [Param::R0, Param::T0];
        let grid: Vec<f64> = linspace(12.0, 18.0, 41).collect();
        let full = profile_function(&f, &params, &z_hat(mu), 0.0, Param::T0, &grid, &ProfileOptions::default())
            .unwrap();
        let short = profile_function(&f, &params, &z_hat(mu), 0.0, Param::T0, &grid, &ProfileOptions::truncated())
            .unwrap();
        assert!(short.grid.len() < full.grid.len());
        assert!((full.ci.lower.unwrap() - short.ci.lower.unwrap()).abs() < 1e-9);
        assert!((full.ci.upper.unwrap() - short.ci.upper.unwrap()).abs() < 1e-9);
    }

    fn curve(grid: Vec<f64>, ll: Vec<f64>, mle: f64) -> ProfileCurve {
        ProfileCurve {
            param: Param::R0,
            profile_loglik: ll.into_iter().map(Some).collect(),
            grid,
            mle_value: mle,
            mle_loglik: 0.0,
            ci: Interval::unbounded(),
            disconnected: false,
        }
    }

    #[test]
    fn quadratic_profile_gives_wald_interval() {
        let sigma = 0.5;
        let grid: Vec<f64> = linspace(-3.0, 3.0, 401).collect();
        let ll = grid.iter().map(|x| -0.5 * x * x / (sigma * sigma)).collect();
        let ci = ci_from_profile(&curve(grid, ll, 0.0)).unwrap();
        assert!((ci.interval.upper.unwrap() - 1.96 * sigma).abs() < 0.015);
        assert!((ci.interval.lower.unwrap() + 1.96 * sigma).abs() < 0.015);
    }

    #[test]
    fn flat_profile_is_open_ended() {
        let grid: Vec<f64> = linspace(0.0, 1.0, 11).collect();
        let ll = vec![-0.5; 11];
        let ci = ci_from_profile(&curve(grid, ll, 0.5)).unwrap();
        assert_eq!(ci.interval, Interval::unbounded());
    }

    #[test]
    fn one_sided_crossing() {
        let grid: Vec<f64> = linspace(0.0, 4.0, 5).collect();
        let ll = vec![0.0, -0.5, -1.0, -3.0, -5.0];
        let ci = ci_from_profile(&curve(grid, ll, 0.0)).unwrap();
        assert_eq!(ci.interval.lower, None);
        let expected = 2.0 + (CHI2_95_1 / 2.0 - 1.0) / 2.0;
        assert!((ci.interval.upper.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn disconnected_set_is_flagged() {
        let grid: Vec<f64> = linspace(0.0, 6.0, 7).collect();
        let ll = vec![-5.0, -1.0, 0.0, -1.0, -5.0, -0.5, -5.0];
        let ci = ci_from_profile(&curve(grid, ll, 2.0)).unwrap();
        assert!(ci.disconnected);
        assert!(ci.interval.upper.unwrap() < 4.0);
    }

    #[test]
    fn mle_point_beyond_threshold_is_an_error() {
        let grid = vec![0.0, 1.0, 2.0];
        let ll = vec![0.0, -5.0, -1.0];
        assert!(matches!(
            ci_from_profile(&curve(grid, ll, 1.0)),
            Err(Error::InconsistentProfile(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let grid: Vec<f64> = linspace(0.0, 4.0, 5).collect();
        let mut c = curve(grid, vec![-5.0, -1.0, 0.0, -1.0, -5.0], 2.0);
        c.profile_loglik[4] = None;
        c.ci = ci_from_profile(&c).unwrap().interval;
        let mut out = Vec::new();
        write_profile_csv(&c, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "param,grid_value,profile_loglik,within_ci");
        assert_eq!(lines[3], "r0,2,0,true");
        assert_eq!(lines[5], "r0,4,,false");
    }
}
