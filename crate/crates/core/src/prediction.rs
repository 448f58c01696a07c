//! Forecast bands from correlated parameter draws around a fitted optimum.

use std::io::Write;

use nalgebra::{Cholesky, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::integrate;
use crate::likelihood::{hessian_eigen, untransform, FitResult, Matrix};
use crate::model::{initial_state, ModelParams, NpiSchedule};
use crate::rng::{self, Purpose};
use crate::study::stats::quantile_sorted;

/// What the contact factor does once the fitting window is over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AfterFit {
    /// Interventions end with the data: `c(t) = 1` after the last fitted day.
    #[default]
    Lift,
    /// `c(t) = c1` continues indefinitely.
    Persist,
}

#[derive(Clone, Debug)]
pub struct ForecastOptions {
    pub n_draws: usize,
    pub seed: u64,
    pub stream: u64,
    pub after_fit: AfterFit,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        ForecastOptions {
            n_draws: 2000,
            seed: 0,
            stream: 0,
            after_fit: AfterFit::Lift,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastBands {
    pub times: Vec<usize>,
    pub median: Vec<f64>,
    /// 2.5% pointwise quantile.
    pub lower: Vec<f64>,
    /// 97.5% pointwise quantile.
    pub upper: Vec<f64>,
    /// Expected incidence at the point estimate.
    pub mle: Vec<f64>,
    pub fit_days: usize,
    pub n_draws: usize,
    /// Draws discarded because their trajectory was not finite.
    pub n_rejected: usize,
}

impl ForecastBands {
    /// Day and height of the largest median value after the fitting window.
    pub fn forecast_peak(&self) -> Option<(usize, f64)> {
        self.times
            .iter()
            .zip(&self.median)
            .filter(|(&t, _)| t > self.fit_days)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(&t, &v)| (t, v))
    }

    pub fn index_of_day(&self, day: usize) -> Option<usize> {
        self.times.iter().position(|&t| t == day)
    }

    /// Fraction of days on which the point-estimate trajectory lies inside the band.
    pub fn mle_coverage(&self) -> f64 {
        let inside = (0..self.times.len())
            .filter(|&k| self.lower[k] <= self.mle[k] && self.mle[k] <= self.upper[k])
            .count();
        inside as f64 / self.times.len().max(1) as f64
    }
}

/// Draws from `N(mean, cov)`. A zero covariance returns copies of the mean.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &[f64], cov: &Matrix, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if cov.dim != mean.len() {
        return Err(Error::LengthMismatch {
            left: cov.dim,
            right: mean.len(),
        });
    }
    if cov.max_abs() == 0.0 {
        return Ok(vec![mean.to_vec(); n]);
    }
    let chol = Cholesky::new(cov.symmetrized().to_nalgebra()).ok_or_else(|| {
        let min_eigenvalue = match hessian_eigen(cov) {
            Ok(e) => *e.values.last().unwrap_or(&0.0),
            Err(Error::NotPositiveDefinite { min_eigenvalue }) => min_eigenvalue,
            Err(_) => f64::NAN,
        };
        Error::NotPositiveDefinite { min_eigenvalue }
    })?;
    let l = chol.l();
    let mu = DVector::from_column_slice(mean);
    Ok((0..n)
        .map(|_| {
            let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
            (&mu + &l * z).iter().copied().collect()
        })
        .collect())
}

/// Natural-scale parameter draws whose unconstrained images are normal with
/// the fit's inverse-Hessian covariance, so every draw is in-domain.
pub fn sample_parameters<R: Rng + ?Sized>(fit: &FitResult, n_draws: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let cov = fit.covariance_unconstrained.as_ref().ok_or(Error::NotPositiveDefinite {
        min_eigenvalue: fit.eigenvalues.last().copied().unwrap_or(f64::NAN),
    })?;
    let draws = sample_mvn(&fit.mle_unconstrained, cov, n_draws, rng)?;
    Ok(draws.iter().map(|z| untransform(&fit.params, z)).collect())
}

/// Expected incidence over days `0..=total_days` under `after` once the fit window ends.
pub fn expected_trajectory(params: &ModelParams, i0: f64, fit_days: usize, total_days: usize, after: AfterFit) -> Result<Vec<f64>> {
    let init = initial_state(i0, params)?;
    match after {
        AfterFit::Persist => Ok(integrate(params, &init, total_days)?.incidence),
        AfterFit::Lift => {
            let first = integrate(params, &init, fit_days)?;
            let lifted = ModelParams {
                npi: NpiSchedule {
                    c1: 1.0,
                    ..params.npi
                },
                ..*params
            };
            // The lifted system is autonomous, so restarting its clock at 0 is exact.
            let start = *first.states.last().expect("non-empty trajectory");
            let rest = integrate(&lifted, &start, total_days - fit_days)?;
            let mut out = first.incidence;
            out.extend_from_slice(&rest.incidence[1..]);
            Ok(out)
        }
    }
}

/// Forecast for the epidemic seeded with `i0` over days `0..=total_days`,
/// summarizing expected incidence (no observation noise) across draws.
pub fn forecast(
    fit: &FitResult,
    i0: f64,
    fit_days: usize,
    total_days: usize,
    options: &ForecastOptions,
) -> Result<ForecastBands> {
    if total_days <= fit_days {
        return Err(Error::DayRange {
            from: fit_days,
            to: total_days,
            horizon: total_days,
        });
    }
    if options.n_draws == 0 {
        return Err(Error::Config("n_draws must be >= 1".into()));
    }
    let after = options.after_fit;
    let mle = expected_trajectory(&fit.spec.params_with(&fit.mle), i0, fit_days, total_days, after)?;

    let mut r = rng::stream(options.seed, Purpose::ParameterDraws, options.stream);
    let mut curves: Vec<Vec<f64>> = Vec::with_capacity(options.n_draws);
    let mut rejected = 0;
    while curves.len() < options.n_draws {
        if rejected > 10 * options.n_draws {
            return Err(Error::Config(format!("{rejected} forecast draws rejected")));
        }
        let need = options.n_draws - curves.len();
        let draws = sample_parameters(fit, need, &mut r)?;
        let batch: Vec<Option<Vec<f64>>> = draws
            .par_iter()
            .map(|d| {
                expected_trajectory(&fit.spec.params_with(d), i0, fit_days, total_days, after)
                    .ok()
                    .filter(|c| c.iter().all(|v| v.is_finite()))
            })
            .collect();
        for c in batch {
            match c {
                Some(c) => curves.push(c),
                None => rejected += 1,
            }
        }
    }

    let n_days = total_days + 1;
    let mut median = Vec::with_capacity(n_days);
    let mut lower = Vec::with_capacity(n_days);
    let mut upper = Vec::with_capacity(n_days);
    let mut column = vec![0.0; curves.len()];
    for t in 0..n_days {
        for (slot, c) in column.iter_mut().zip(&curves) {
            *slot = c[t].max(0.0);
        }
        column.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&column, 0.025));
        median.push(quantile_sorted(&column, 0.5));
        upper.push(quantile_sorted(&column, 0.975));
    }
    Ok(ForecastBands {
        times: (0..n_days).collect(),
        median,
        lower,
        upper,
        mle: mle.iter().map(|v| v.max(0.0)).collect(),
        fit_days,
        n_draws: curves.len(),
        n_rejected: rejected,
    })
}

/// Writes `day,median,lower,upper,is_fit_window` rows.
pub fn write_forecast_csv<W: Write>(bands: &ForecastBands, mut w: W) -> std::io::Result<()> {
    writeln!(w, "day,median,lower,upper,is_fit_window")?;
    for k in 0..bands.times.len() {
        let day = bands.times[k];
        writeln!(
            w,
            "{},{},{},{},{}",
            day,
            bands.median[k],
            bands.lower[k],
            bands.upper[k],
            day <= bands.fit_days
        )?;
    }
    Ok(())
}
