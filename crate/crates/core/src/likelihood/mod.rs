//! Poisson likelihood, parameter transforms, maximum-likelihood fitting and
//! curvature-based identifiability diagnostics.

mod fit;
mod hessian;
mod spec;
mod transform;

pub use fit::{fit_mle, FitOptions, FitResult, Interval, StartBox};
pub use hessian::{
    correlation_from_hessian, finite_difference_hessian, hessian_eigen, invert_spd, HessianEigen,
    Matrix,
};
pub use spec::{FitSpec, SpecKind};
pub use transform::{transform, untransform, Param};

use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::integrator::integrate;
use crate::model::initial_state;
use crate::synthesis::IncidenceDataset;

/// `sum_t [ y_t log(lambda_t) - lambda_t - log(y_t!) ]`.
///
/// A zero rate with a positive count contributes `-inf`.
pub fn poisson_loglik(observed: &[u64], expected: &[f64]) -> Result<f64> {
    if observed.len() != expected.len() {
        return Err(Error::LengthMismatch {
            left: observed.len(),
            right: expected.len(),
        });
    }
    if let Some((index, &value)) = expected
        .iter()
        .enumerate()
        .find(|(_, v)| v.is_nan() || **v < 0.0)
    {
        return Err(Error::InvalidRate { index, value });
    }
    Ok(observed
        .iter()
        .zip(expected)
        .map(|(&y, &l)| log_pmf(y as f64, l) - ln_factorial(y))
        .sum())
}

/// Poisson log-density without the `log(y!)` term.
#[inline]
fn log_pmf(y: f64, lambda: f64) -> f64 {
    if y == 0.0 {
        -lambda
    } else if lambda == 0.0 {
        f64::NEG_INFINITY
    } else {
        y * lambda.ln() - lambda
    }
}

pub fn aic(loglik: f64, n_free: usize) -> f64 {
    2.0 * n_free as f64 - 2.0 * loglik
}

/// One epidemic's observations restricted to the fit window, with the
/// data-only `log(y!)` sum cached.
#[derive(Clone, Debug)]
struct WindowedSeries {
    counts: Vec<f64>,
    log_factorials: f64,
    i0: f64,
}

/// Log-likelihood of a fit spec as a function of its free parameters.
#[derive(Clone, Debug)]
pub struct Objective {
    spec: FitSpec,
    series: Vec<WindowedSeries>,
}

impl Objective {
    pub fn new(datasets: &[IncidenceDataset], spec: &FitSpec) -> Result<Self> {
        spec.validate()?;
        if datasets.len() != spec.i0_per_epidemic.len() {
            return Err(Error::LengthMismatch {
                left: datasets.len(),
                right: spec.i0_per_epidemic.len(),
            });
        }
        let (from, to) = spec.fit_window;
        let series = datasets
            .iter()
            .zip(&spec.i0_per_epidemic)
            .map(|(ds, &i0)| {
                if to > ds.counts.len() {
                    return Err(Error::DayRange {
                        from,
                        to,
                        horizon: ds.counts.len(),
                    });
                }
                let window = &ds.counts[from - 1..to];
                let counts: Vec<f64> = window.iter().map(|&c| c as f64).collect();
                let log_factorials = window.iter().map(|&y| ln_factorial(y)).sum();
                Ok(WindowedSeries {
                    counts,
                    log_factorials,
                    i0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Objective {
            spec: spec.clone(),
            series,
        })
    }

    pub fn spec(&self) -> &FitSpec {
        &self.spec
    }

    /// Joint log-likelihood at natural-scale free-parameter values.
    pub fn loglik(&self, values: &[f64]) -> Result<f64> {
        let params = self.spec.params_with(values);
        let (from, to) = self.spec.fit_window;
        let mut total = 0.0;
        for s in &self.series {
            let init = initial_state(s.i0, &params)?;
            let traj = integrate(&params, &init, to)?;
            let mut ll = -s.log_factorials;
            for (y, st) in s.counts.iter().zip(&traj.states[from..=to]) {
                ll += log_pmf(*y, (params.delta * st.e).max(0.0));
            }
            total += ll;
        }
        Ok(total)
    }

    /// Negative log-likelihood on the unconstrained scale; `+inf` where the
    /// model cannot be evaluated.
    pub fn neg_loglik_unconstrained(&self, z: &[f64]) -> f64 {
        let values = untransform(&self.spec.free_params, z);
        match self.loglik(&values) {
            Ok(v) if !v.is_nan() => -v,
            _ => f64::INFINITY,
        }
    }
}

/// Sum of per-epidemic log-likelihoods at shared parameter values.
pub fn joint_loglik(datasets: &[IncidenceDataset], shared: &[f64], spec: &FitSpec) -> Result<f64> {
    Objective::new(datasets, spec)?.loglik(shared)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::incidence_series;
    use crate::model::ModelParams;

    #[test]
    fn loglik_closed_forms() {
        assert!((poisson_loglik(&[0], &[1.0]).unwrap() + 1.0).abs() < 1e-15);
        let expected = 2.0f64.ln() - 2.0;
        assert!((poisson_loglik(&[2], &[2.0]).unwrap() - expected).abs() < 1e-12);
        assert!((expected + 1.306_85).abs() < 1e-5);
        assert_eq!(poisson_loglik(&[0], &[0.0]).unwrap(), 0.0);
        assert_eq!(poisson_loglik(&[3], &[0.0]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn loglik_errors() {
        assert!(matches!(
            poisson_loglik(&[1, 2], &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            poisson_loglik(&[1], &[-1.0]),
            Err(Error::InvalidRate { .. })
        ));
    }

    #[test]
    fn constant_rate_maximized_at_sample_mean() {
        let y = [3u64, 7, 4, 0, 9, 5, 6];
        let mean = y.iter().sum::<u64>() as f64 / y.len() as f64;
        let ll = |l: f64| poisson_loglik(&y, &vec![l; y.len()]).unwrap();
        let grid: Vec<f64> = (1..=2000).map(|k| k as f64 * 0.005).collect();
        let best = grid
            .iter()
            .copied()
            .max_by(|a, b| ll(*a).total_cmp(&ll(*b)))
            .unwrap();
        assert!((best - mean).abs() <= 0.005, "grid argmax {best} vs mean {mean}");
    }

    #[test]
    fn aic_arithmetic() {
        assert_eq!(aic(-400.0, 4), 808.0);
        assert_eq!(aic(0.0, 0), 0.0);
    }

    fn dataset(params: &ModelParams, i0: f64) -> IncidenceDataset {
        let init = initial_state(i0, params).unwrap();
        let traj = integrate(params, &init, 100).unwrap();
        let counts = incidence_series(&traj, 1, 100)
            .unwrap()
            .iter()
            .map(|v| v.round() as u64)
            .collect();
        IncidenceDataset::from_counts(counts, *params, i0)
    }

    #[test]
    fn single_dataset_matches_direct_evaluation() {
        let truth = ModelParams::default().with_nu(1.414).with_npi(15.0, 0.3);
        let ds = dataset(&truth, 40.0);
        let spec = FitSpec::standard(SpecKind::ThetaB, true, truth, (1, 100), vec![40.0]).unwrap();
        let theta = [3.0, 1.414, 15.0, 0.3];
        let traj = integrate(&truth, &initial_state(40.0, &truth).unwrap(), 100).unwrap();
        let direct = poisson_loglik(&ds.counts, &incidence_series(&traj, 1, 100).unwrap()).unwrap();
        let joint = joint_loglik(std::slice::from_ref(&ds), &theta, &spec).unwrap();
        assert!((joint - direct).abs() < 1e-9 * direct.abs());
    }

    #[test]
    fn duplicated_dataset_doubles() {
        let truth = ModelParams::default().with_nu(0.8);
        let ds = dataset(&truth, 40.0);
        let one = FitSpec::standard(SpecKind::ThetaA, true, truth, (1, 100), vec![40.0]).unwrap();
        let two = FitSpec::standard(SpecKind::ThetaA, true, truth, (1, 100), vec![40.0, 40.0]).unwrap();
        let a = joint_loglik(std::slice::from_ref(&ds), &[2.9, 0.7], &one).unwrap();
        let b = joint_loglik(&[ds.clone(), ds], &[2.9, 0.7], &two).unwrap();
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn heterogeneity_preferred_at_truth() {
        let truth = ModelParams::default().with_nu(1.414).with_npi(15.0, 0.3);
        let data = vec![dataset(&truth, 40.0), dataset(&truth, 400.0)];
        let spec = FitSpec::standard(SpecKind::ThetaB, true, truth, (1, 100), vec![40.0, 400.0]).unwrap();
        let at_truth = joint_loglik(&data, &[3.0, 1.414, 15.0, 0.3], &spec).unwrap();
        let homogeneous = joint_loglik(&data, &[3.0, 0.0, 15.0, 0.3], &spec).unwrap();
        assert!(at_truth.is_finite());
        assert!(at_truth > homogeneous);
    }
}
