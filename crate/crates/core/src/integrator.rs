//! Fixed-step RK4 integration of the model, sampled at integer days.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EpidemicState, ModelParams, ReducedSystem, SusceptibilityGrid};

pub const DEFAULT_STEP: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<EpidemicState>,
    /// `delta * E` at each output day.
    pub incidence: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn final_attack_rate(&self, n_pop: f64) -> f64 {
        self.states.last().map_or(0.0, |s| s.r / n_pop)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "day,S,E,I,R,incidence")?;
        for ((t, s), inc) in self.times.iter().zip(&self.states).zip(&self.incidence) {
            writeln!(w, "{},{},{},{},{},{}", t, s.s, s.e, s.i, s.r, inc)?;
        }
        Ok(())
    }
}

pub fn integrate(params: &ModelParams, init: &EpidemicState, horizon: usize) -> Result<Trajectory> {
    integrate_with_step(params, init, horizon, DEFAULT_STEP)
}

/// Sub-intervals of `[a, b)` for a day, split at the NPI breakpoints so that
/// kinks in `c(t)` always fall on a step boundary.
fn day_segments(day: f64, step: f64, breakpoints: &[f64], out: &mut Vec<(f64, f64)>) {
    out.clear();
    let n = (1.0 / step).round().max(1.0) as usize;
    let h = 1.0 / n as f64;
    for j in 0..n {
        let a = day + j as f64 * h;
        let b = if j + 1 == n { day + 1.0 } else { day + (j + 1) as f64 * h };
        let mut start = a;
        for &bp in breakpoints {
            if bp > start && bp < b {
                out.push((start, bp));
                start = bp;
            }
        }
        out.push((start, b));
    }
}

pub fn integrate_with_step(
    params: &ModelParams,
    init: &EpidemicState,
    horizon: usize,
    step: f64,
) -> Result<Trajectory> {
    params.validate()?;
    if horizon < 1 {
        return Err(Error::InvalidParams("horizon must be >= 1".into()));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidParams(format!("step {step} must lie in (0, 1]")));
    }
    let sys = ReducedSystem::new(params)?;
    let npi = params.npi;
    let breakpoints = npi.breakpoints();

    let mut y = [init.s, init.e, init.i, init.r];
    let mut times = Vec::with_capacity(horizon + 1);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut incidence = Vec::with_capacity(horizon + 1);
    let mut record = |day: usize, y: &[f64; 4]| {
        times.push(day as f64);
        states.push(EpidemicState {
            s: y[0],
            e: y[1],
            i: y[2],
            r: y[3],
            t: day as f64,
        });
        incidence.push(params.delta * y[1]);
    };
    record(0, &y);

    let f = |c: f64, y: &[f64; 4]| {
        let r = sys.rate(c, y[0], y[1], y[2]);
        [r.ds, r.de, r.di, r.dr]
    };
    let mut segments = Vec::new();
    for day in 0..horizon {
        let d = day as f64;
        let relevant: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|&bp| bp > d && bp < d + 1.0)
            .collect();
        day_segments(d, step, &relevant, &mut segments);
        for &(a, b) in &segments {
            let h = b - a;
            let mid = a + 0.5 * h;
            let c_mid = npi.factor(mid);
            let k1 = f(npi.factor_right(a), &y);
            let k2 = f(c_mid, &axpy(&y, 0.5 * h, &k1));
            let k3 = f(c_mid, &axpy(&y, 0.5 * h, &k2));
            let k4 = f(npi.factor(b), &axpy(&y, h, &k3));
            for j in 0..4 {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: d + 1.0 });
        }
        record(day + 1, &y);
    }
    Ok(Trajectory {
        times,
        states,
        incidence,
    })
}

#[inline]
fn axpy(y: &[f64; 4], h: f64, k: &[f64; 4]) -> [f64; 4] {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2], y[3] + h * k[3]]
}

/// Integrates the explicit per-node system from `grid` (which carries the
/// initial susceptible densities) and aggregates to compartment totals.
pub fn integrate_explicit(
    params: &ModelParams,
    grid: &SusceptibilityGrid,
    e0: f64,
    i0: f64,
    horizon: usize,
) -> Result<Trajectory> {
    params.validate()?;
    if horizon < 1 {
        return Err(Error::InvalidParams("horizon must be >= 1".into()));
    }
    let beta = params.beta()?;
    let npi = params.npi;
    let xs: Vec<f64> = grid.nodes.iter().map(|n| n.x).collect();
    let m = xs.len();
    // Layout: node densities, then E, I, R.
    let mut y: Vec<f64> = grid.nodes.iter().map(|n| n.s_density).collect();
    y.extend([e0, i0, 0.0]);
    let r0_offset = params.n_pop - grid.susceptible() - e0 - i0;
    y[m + 2] = r0_offset;

    let rhs = |c: f64, y: &[f64], out: &mut [f64]| {
        let (e, i) = (y[m], y[m + 1]);
        let pressure = c * beta * (params.rho * e + i) / params.n_pop;
        let mut infection = 0.0;
        for k in 0..m {
            let d = pressure * xs[k] * y[k].max(0.0);
            out[k] = -d;
            infection += d;
        }
        out[m] = infection - params.delta * e;
        out[m + 1] = params.delta * e - params.gamma * i;
        out[m + 2] = params.gamma * i;
    };

    let aggregate = |day: usize, y: &[f64]| EpidemicState {
        s: y[..m].iter().sum(),
        e: y[m],
        i: y[m + 1],
        r: y[m + 2],
        t: day as f64,
    };
    let mut states = vec![aggregate(0, &y)];
    let len = y.len();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
    );
    let mut segments = Vec::new();
    let breakpoints = npi.breakpoints();
    for day in 0..horizon {
        let d = day as f64;
        let relevant: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|&bp| bp > d && bp < d + 1.0)
            .collect();
        day_segments(d, DEFAULT_STEP, &relevant, &mut segments);
        for &(a, b) in &segments {
            let h = b - a;
            let c_mid = npi.factor(a + 0.5 * h);
            rhs(npi.factor_right(a), &y, &mut k1);
            for j in 0..len {
                tmp[j] = y[j] + 0.5 * h * k1[j];
            }
            rhs(c_mid, &tmp, &mut k2);
            for j in 0..len {
                tmp[j] = y[j] + 0.5 * h * k2[j];
            }
            rhs(c_mid, &tmp, &mut k3);
            for j in 0..len {
                tmp[j] = y[j] + h * k3[j];
            }
            rhs(npi.factor(b), &tmp, &mut k4);
            for j in 0..len {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: d + 1.0 });
        }
        states.push(aggregate(day + 1, &y));
    }
    let incidence = states.iter().map(|s| params.delta * s.e).collect();
    Ok(Trajectory {
        times: (0..=horizon).map(|d| d as f64).collect(),
        states,
        incidence,
    })
}

/// Expected daily incidence for days `from_day..=to_day`.
pub fn incidence_series(traj: &Trajectory, from_day: usize, to_day: usize) -> Result<Vec<f64>> {
    let horizon = traj.horizon();
    if from_day >= to_day || to_day > horizon {
        return Err(Error::DayRange {
            from: from_day,
            to: to_day,
            horizon,
        });
    }
    Ok(traj.incidence[from_day..=to_day]
        .iter()
        .map(|v| v.max(0.0))
        .collect())
}
