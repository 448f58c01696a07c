use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::hessian::{
    covariance_to_correlation, finite_difference_hessian, hessian_eigen, invert_spd,
    sorted_eigen, Matrix,
};
use super::spec::FitSpec;
use super::transform::{untransform, Param};
use super::{aic, Objective};
use crate::error::{Error, Result};
use crate::optim::NelderMead;
use crate::rng::{self, Purpose};
use crate::synthesis::IncidenceDataset;

/// 97.5% standard normal quantile.
const Z_975: f64 = 1.959_963_984_540_054;

/// Natural-scale ranges sampled by the multi-start design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartBox {
    pub r0: (f64, f64),
    pub nu: (f64, f64),
    pub t0: (f64, f64),
    pub c1: (f64, f64),
}

impl Default for StartBox {
    fn default() -> Self {
        StartBox {
            r0: (1.5, 5.0),
            nu: (0.05, 3.0),
            t0: (5.0, 40.0),
            c1: (0.05, 0.95),
        }
    }
}

impl StartBox {
    fn range(&self, p: Param) -> (f64, f64) {
        match p {
            Param::R0 => self.r0,
            Param::Nu => self.nu,
            Param::T0 => self.t0,
            Param::C1 => self.c1,
        }
    }

    /// Latin-hypercube design of `n` natural-scale points.
    pub fn latin_hypercube<R: Rng + ?Sized>(&self, params: &[Param], n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let mut points = vec![Vec::with_capacity(params.len()); n];
        for &p in params {
            let (lo, hi) = self.range(p);
            let mut strata: Vec<usize> = (0..n).collect();
            strata.shuffle(rng);
            for (point, k) in points.iter_mut().zip(strata) {
                let u: f64 = rng.random();
                point.push(lo + (hi - lo) * (k as f64 + u) / n as f64);
            }
        }
        points
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub n_starts: usize,
    pub optimizer: NelderMead,
    pub hessian_step: f64,
    pub start_box: StartBox,
    pub seed: u64,
    /// Selects the multi-start stream; one per replicate.
    pub stream: u64,
    /// Extra natural-scale starting points tried alongside the design.
    pub extra_starts: Vec<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            n_starts: 5,
            optimizer: NelderMead::default(),
            hessian_step: 1e-4,
            start_box: StartBox::default(),
            seed: 0,
            stream: 0,
            extra_starts: Vec::new(),
        }
    }
}

impl FitOptions {
    pub fn for_replicate(seed: u64, replicate: usize) -> Self {
        FitOptions {
            seed,
            stream: replicate as u64,
            ..FitOptions::default()
        }
    }
}

/// Closed interval with optional (unbounded) ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Interval {
    pub fn bounded(lower: f64, upper: f64) -> Self {
        Interval {
            lower: Some(lower),
            upper: Some(upper),
        }
    }

    pub fn unbounded() -> Self {
        Interval {
            lower: None,
            upper: None,
        }
    }

    pub fn width(&self) -> Option<f64> {
        Some(self.upper? - self.lower?)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower.is_none_or(|l| x >= l) && self.upper.is_none_or(|u| x <= u)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<Param>,
    /// Natural scale.
    pub mle: Vec<f64>,
    pub mle_unconstrained: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    /// Negative log-likelihood curvature on the unconstrained scale.
    pub hessian: Matrix,
    /// Inverse Hessian (unconstrained scale).
    pub covariance_unconstrained: Option<Matrix>,
    /// Delta-method covariance on the natural scale.
    pub covariance: Option<Matrix>,
    pub correlation: Option<Matrix>,
    pub wald_ci: Vec<Interval>,
    /// Descending; reported even when not all positive.
    pub eigenvalues: Vec<f64>,
    pub condition_number: Option<f64>,
    pub converged: bool,
    /// Every Hessian eigenvalue strictly positive.
    pub identifiable: bool,
    /// `nu` estimate below 1e-3, reported as effectively zero.
    pub nu_near_zero: bool,
    /// `c1` estimate above 0.99, leaving `t0` unidentified.
    pub t0_unidentified: bool,
    pub evaluations: usize,
    pub spec: FitSpec,
}

impl FitResult {
    pub fn value(&self, p: Param) -> Option<f64> {
        self.params.iter().position(|&q| q == p).map(|k| self.mle[k])
    }

    pub fn correlation_between(&self, a: Param, b: Param) -> Option<f64> {
        let i = self.params.iter().position(|&q| q == a)?;
        let j = self.params.iter().position(|&q| q == b)?;
        self.correlation.as_ref().map(|c| c.get(i, j))
    }

    /// Wald standard error on the natural scale.
    pub fn standard_error(&self, p: Param) -> Option<f64> {
        let k = self.params.iter().position(|&q| q == p)?;
        self.covariance.as_ref().map(|c| c.get(k, k).sqrt())
    }
}

/// Maximum-likelihood fit with multi-start Nelder–Mead on the unconstrained
/// scale, followed by curvature diagnostics at the best optimum.
pub fn fit_mle(datasets: &[IncidenceDataset], spec: &FitSpec, options: &FitOptions) -> Result<FitResult> {
    if datasets.is_empty() {
        return Err(Error::Config("at least one dataset required".into()));
    }
    let objective = Objective::new(datasets, spec)?;
    let params = &spec.free_params;
    let mut r = rng::stream(options.seed, Purpose::MultiStart, options.stream);
    let mut starts = options
        .start_box
        .latin_hypercube(params, options.n_starts, &mut r);
    starts.extend(options.extra_starts.iter().cloned());

    let f = |z: &[f64]| objective.neg_loglik_unconstrained(z);
    let mut best: Option<crate::optim::Minimum> = None;
    let mut evals = 0;
    for start in &starts {
        let z0 = super::transform(params, start)?;
        let m = options.optimizer.minimize(f, &z0);
        evals += m.evals;
        if best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let best = best.ok_or_else(|| Error::Config("no starting points".into()))?;
    let mut result = diagnose(&objective, &best.x, options.hessian_step)?;
    result.converged = best.converged && best.value.is_finite();
    result.evaluations = evals + result.evaluations;
    Ok(result)
}

/// Curvature diagnostics at an unconstrained-scale optimum.
pub(crate) fn diagnose(objective: &Objective, z_hat: &[f64], step: f64) -> Result<FitResult> {
    let spec = objective.spec().clone();
    let params = spec.free_params.clone();
    let p = params.len();
    let mle = untransform(&params, z_hat);
    let loglik = objective.loglik(&mle)?;
    let f = |z: &[f64]| objective.neg_loglik_unconstrained(z);
    let hessian = finite_difference_hessian(f, z_hat, step);
    let hessian_evals = 4 * p * p + 2;

    let (eigenvalues, _) = sorted_eigen(&hessian);
    let eig = hessian_eigen(&hessian);
    let identifiable = eig.is_ok();
    let condition_number = eig.as_ref().ok().map(|e| e.condition_number);
    let cov_z = if identifiable { invert_spd(&hessian).ok() } else { None };
    let covariance = cov_z.as_ref().map(|c| {
        let jac: Vec<f64> = params.iter().zip(&mle).map(|(q, &v)| q.jacobian(v)).collect();
        let mut out = Matrix::zeros(p);
        for i in 0..p {
            for j in 0..p {
                out.set(i, j, jac[i] * c.get(i, j) * jac[j]);
            }
        }
        out
    });
    let correlation = cov_z.as_ref().map(covariance_to_correlation);

    let nu_near_zero = spec.index_of(Param::Nu).is_some_and(|k| mle[k] < 1e-3);
    let t0_unidentified = spec.index_of(Param::C1).is_some_and(|k| mle[k] > 0.99);
    let wald_ci = params
        .iter()
        .enumerate()
        .map(|(k, &q)| match &cov_z {
            Some(c) if !(q == Param::T0 && t0_unidentified) && c.get(k, k) > 0.0 => {
                let half = Z_975 * c.get(k, k).sqrt();
                Interval::bounded(
                    q.from_unconstrained(z_hat[k] - half),
                    q.from_unconstrained(z_hat[k] + half),
                )
            }
            _ => Interval::unbounded(),
        })
        .collect();

    Ok(FitResult {
        aic: aic(loglik, p),
        params,
        mle,
        mle_unconstrained: z_hat.to_vec(),
        loglik,
        hessian,
        covariance_unconstrained: cov_z,
        covariance,
        correlation,
        wald_ci,
        eigenvalues,
        condition_number,
        converged: true,
        identifiable,
        nu_near_zero,
        t0_unidentified,
        evaluations: hessian_evals,
        spec,
    })
}
