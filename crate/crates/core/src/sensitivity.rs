//! Finite-difference sensitivities of daily incidence to model parameters and
//! the compensation score comparing their temporal patterns.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{incidence_series, integrate};
use crate::likelihood::Param;
use crate::model::{initial_state, ModelParams};

/// Relative finite-difference step; the absolute step is `REL_STEP * max(|theta|, 1)`.
pub const REL_STEP: f64 = 1e-4;

/// `d incidence(t) / d theta_j` for one epidemic, one row per day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMatrix {
    pub epidemic_id: usize,
    pub i0: f64,
    pub times: Vec<usize>,
    pub params: Vec<Param>,
    pub values: Vec<Vec<f64>>,
}

impl SensitivityMatrix {
    pub fn column(&self, p: Param) -> Option<Vec<f64>> {
        let j = self.params.iter().position(|&q| q == p)?;
        Some(self.values.iter().map(|row| row[j]).collect())
    }

    /// Column scaled to unit Euclidean norm.
    pub fn normalized_column(&self, p: Param) -> Option<Result<Vec<f64>>> {
        self.column(p).map(|c| normalized(&c))
    }
}

fn set(params: &ModelParams, p: Param, v: f64) -> ModelParams {
    let mut out = *params;
    match p {
        Param::R0 => out.r0 = v,
        Param::Nu => out.nu = v,
        Param::T0 => out.npi.t0 = v,
        Param::C1 => out.npi.c1 = v,
    }
    out
}

fn get(params: &ModelParams, p: Param) -> f64 {
    match p {
        Param::R0 => params.r0,
        Param::Nu => params.nu,
        Param::T0 => params.npi.t0,
        Param::C1 => params.npi.c1,
    }
}

fn incidence(params: &ModelParams, i0: f64, window: (usize, usize)) -> Result<Vec<f64>> {
    params.validate()?;
    let traj = integrate(params, &initial_state(i0, params)?, window.1)?;
    incidence_series(&traj, window.0, window.1)
}

/// Central-difference sensitivities over the inclusive day `window`, one
/// matrix per entry of `i0_list`.
///
/// Differences at steps `h` and `h/2` are combined as `2 D(h/2) - D(h)`. On
/// smooth stretches this keeps second-order accuracy; on the output day that
/// coincides with `t0`, where incidence is only once differentiable in `t0`,
/// it cancels the first-order error of the plain central difference. Where a
/// perturbation leaves the parameter domain (`nu = 0`, `c1 = 1`) the
/// one-sided difference is used.
pub fn sensitivities(
    params: &ModelParams,
    which: &[Param],
    i0_list: &[f64],
    window: (usize, usize),
) -> Result<Vec<SensitivityMatrix>> {
    sensitivities_with_step(params, which, i0_list, window, REL_STEP)
}

pub fn sensitivities_with_step(
    params: &ModelParams,
    which: &[Param],
    i0_list: &[f64],
    window: (usize, usize),
    rel_step: f64,
) -> Result<Vec<SensitivityMatrix>> {
    params.validate()?;
    i0_list
        .iter()
        .enumerate()
        .map(|(epidemic_id, &i0)| {
            let columns = which
                .par_iter()
                .map(|&p| {
                    let h = rel_step * get(params, p).abs().max(1.0);
                    let coarse = difference(params, p, i0, window, h)?;
                    let fine = difference(params, p, i0, window, 0.5 * h)?;
                    Ok(fine.iter().zip(&coarse).map(|(f, c)| 2.0 * f - c).collect::<Vec<f64>>())
                })
                .collect::<Result<Vec<_>>>()?;
            let times: Vec<usize> = (window.0..=window.1).collect();
            let values = (0..times.len())
                .map(|t| columns.iter().map(|c| c[t]).collect())
                .collect();
            Ok(SensitivityMatrix {
                epidemic_id,
                i0,
                times,
                params: which.to_vec(),
                values,
            })
        })
        .collect()
}

fn difference(params: &ModelParams, p: Param, i0: f64, window: (usize, usize), h: f64) -> Result<Vec<f64>> {
    let theta = get(params, p);
    let up = set(params, p, theta + h);
    let down = set(params, p, theta - h);
    let (hi, hi_step) = if up.validate().is_ok() {
        (incidence(&up, i0, window)?, h)
    } else {
        (incidence(params, i0, window)?, 0.0)
    };
    let (lo, lo_step) = if down.validate().is_ok() {
        (incidence(&down, i0, window)?, h)
    } else {
        (incidence(params, i0, window)?, 0.0)
    };
    let width = hi_step + lo_step;
    Ok(hi.iter().zip(&lo).map(|(a, b)| (a - b) / width).collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > 0.0) {
        return Err(Error::ZeroNorm);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Columns of one parameter concatenated across epidemics, in matrix order.
pub fn stacked_column(matrices: &[SensitivityMatrix], p: Param) -> Option<Vec<f64>> {
    let mut out = Vec::new();
    for m in matrices {
        out.extend(m.column(p)?);
    }
    Some(out)
}

/// Cosine similarity of two sensitivity vectors.
pub fn compensation_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Writes `epidemic_id,day,param,value,normalized_value` rows. Zero columns
/// get a normalized value of 0.
pub fn write_sensitivity_csv<W: Write>(matrices: &[SensitivityMatrix], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epidemic_id,day,param,value,normalized_value")?;
    for m in matrices {
        for &p in &m.params {
            let col = m.column(p).unwrap_or_default();
            let unit = normalized(&col).unwrap_or_else(|_| vec![0.0; col.len()]);
            for ((day, v), u) in m.times.iter().zip(&col).zip(&unit) {
                writeln!(w, "{},{},{},{},{}", m.epidemic_id, day, p, v, u)?;
            }
        }
    }
    Ok(())
}
