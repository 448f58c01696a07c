//! Heterogeneous-susceptibility SEIR model with a piecewise-linear contact
//! reduction profile.
//!
//! Two formulations are provided. The reduced system tracks the aggregate
//! susceptible pool and closes the force of infection with the power law
//! `(S/N)^(1+nu^2)`, which is exact when susceptibility is gamma distributed.
//! The explicit system carries a discretized susceptibility distribution and
//! is used to cross-check the reduction.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

/// Contact-reduction profile `c(t)`.
///
/// `c(t) = 1` up to `t0`, falls linearly to `c1` at `t1` and stays there.
/// When `t0 >= t1` the ramp is empty and the profile steps from 1 to `c1`
/// just after `t0`. `c1 = 1` switches interventions off entirely.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NpiSchedule {
    pub t0: f64,
    pub t1: f64,
    pub c1: f64,
}

impl NpiSchedule {
    pub fn new(t0: f64, t1: f64, c1: f64) -> Result<Self> {
        let npi = NpiSchedule { t0, t1, c1 };
        npi.validate()?;
        Ok(npi)
    }

    /// Table-default timing with no reduction.
    pub fn disabled() -> Self {
        NpiSchedule {
            t0: 15.0,
            t1: 20.0,
            c1: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.t0 >= 0.0) {
            return Err(Error::InvalidParams(format!("t0 = {} must be >= 0", self.t0)));
        }
        if !(self.t1.is_finite() && self.t1 >= 0.0) {
            return Err(Error::InvalidParams(format!("t1 = {} must be >= 0", self.t1)));
        }
        if !(0.0..=1.0).contains(&self.c1) {
            return Err(Error::InvalidParams(format!("c1 = {} must lie in [0, 1]", self.c1)));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.c1 < 1.0
    }

    /// End of the ramp; equals `t0` when the ramp is empty.
    fn ramp_end(&self) -> f64 {
        self.t1.max(self.t0)
    }

    /// Left-continuous factor, matching the `(t0, t1]` interval convention.
    pub fn factor(&self, t: f64) -> f64 {
        if !self.is_active() || t <= self.t0 {
            return 1.0;
        }
        let end = self.ramp_end();
        if t > end || end <= self.t0 {
            return self.c1;
        }
        1.0 - (1.0 - self.c1) * (t - self.t0) / (end - self.t0)
    }

    /// Limit of `factor` from the right. Differs from `factor` only at a step.
    pub fn factor_right(&self, t: f64) -> f64 {
        if self.is_active() && t == self.t0 && self.ramp_end() <= self.t0 {
            self.c1
        } else {
            self.factor(t)
        }
    }

    /// Times where `c(t)` has a kink or jump. Empty when inactive.
    pub fn breakpoints(&self) -> Vec<f64> {
        if !self.is_active() {
            return Vec::new();
        }
        let end = self.ramp_end();
        if end > self.t0 {
            vec![self.t0, end]
        } else {
            vec![self.t0]
        }
    }
}

pub fn npi_factor(t: f64, npi: &NpiSchedule) -> f64 {
    npi.factor(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub r0: f64,
    pub nu: f64,
    pub rho: f64,
    pub delta: f64,
    pub gamma: f64,
    pub n_pop: f64,
    pub npi: NpiSchedule,
}

impl Default for ModelParams {
    /// Fixed epidemiological values used throughout the studies: N = 100,000,
    /// delta = 1/5.5, gamma = 1/4, rho = 0.5, R0 = 3, homogeneous, no NPIs.
    fn default() -> Self {
        ModelParams {
            r0: 3.0,
            nu: 0.0,
            rho: 0.5,
            delta: 1.0 / 5.5,
            gamma: 0.25,
            n_pop: 100_000.0,
            npi: NpiSchedule::disabled(),
        }
    }
}

impl ModelParams {
    pub fn with_r0(mut self, r0: f64) -> Self {
        self.r0 = r0;
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    pub fn with_npi(mut self, t0: f64, c1: f64) -> Self {
        self.npi.t0 = t0;
        self.npi.c1 = c1;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParams(what.to_string()));
        if !(self.r0.is_finite() && self.r0 >= 0.0) {
            return bad("r0 must be finite and >= 0");
        }
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return bad("nu must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1]");
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return bad("delta must be > 0");
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad("gamma must be > 0");
        }
        if !(self.n_pop.is_finite() && self.n_pop > 0.0) {
            return bad("n_pop must be > 0");
        }
        self.npi.validate()
    }

    pub fn beta(&self) -> Result<f64> {
        beta_from_r0(self.r0, self.rho, self.delta, self.gamma)
    }
}

/// Transmission rate from the basic reproduction number,
/// `beta = R0 / (rho/delta + 1/gamma)`.
pub fn beta_from_r0(r0: f64, rho: f64, delta: f64, gamma: f64) -> Result<f64> {
    let generation = rho / delta + 1.0 / gamma;
    if !(generation.is_finite() && generation > 0.0) {
        return Err(Error::DegenerateGeneration(generation));
    }
    Ok(r0 / generation)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpidemicState {
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub r: f64,
    pub t: f64,
}

impl EpidemicState {
    pub fn total(&self) -> f64 {
        self.s + self.e + self.i + self.r
    }
}

/// Time derivative of the aggregate compartments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateRate {
    pub ds: f64,
    pub de: f64,
    pub di: f64,
    pub dr: f64,
}

impl StateRate {
    pub fn sum(&self) -> f64 {
        self.ds + self.de + self.di + self.dr
    }
}

/// Reduced system with constants resolved once; the integrator's hot path.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ReducedSystem {
    beta: f64,
    exponent: f64,
    rho: f64,
    delta: f64,
    gamma: f64,
    inv_n: f64,
}

impl ReducedSystem {
    pub(crate) fn new(params: &ModelParams) -> Result<Self> {
        Ok(ReducedSystem {
            beta: params.beta()?,
            exponent: 1.0 + params.nu * params.nu,
            rho: params.rho,
            delta: params.delta,
            gamma: params.gamma,
            inv_n: 1.0 / params.n_pop,
        })
    }

    #[inline]
    pub(crate) fn rate(&self, c: f64, s: f64, e: f64, i: f64) -> StateRate {
        let frac = (s * self.inv_n).max(0.0);
        // nu = 0 is the classical model; skip the power entirely.
        let pool = if self.exponent == 1.0 {
            frac
        } else {
            frac.powf(self.exponent)
        };
        let infection = c * self.beta * (self.rho * e + i) * pool;
        let progression = self.delta * e;
        let removal = self.gamma * i;
        StateRate {
            ds: -infection,
            de: infection - progression,
            di: progression - removal,
            dr: removal,
        }
    }
}

/// Right-hand side of the reduced (gamma-closed) system at `state.t`.
pub fn reduced_rhs(state: &EpidemicState, params: &ModelParams) -> Result<StateRate> {
    let sys = ReducedSystem::new(params)?;
    Ok(sys.rate(params.npi.factor(state.t), state.s, state.e, state.i))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridNode {
    /// Susceptibility factor relative to the population mean.
    pub x: f64,
    /// Probability mass of the node.
    pub weight: f64,
    /// Susceptible individuals carried by the node.
    pub s_density: f64,
}

/// Discretized gamma susceptibility distribution with mean 1 and CV `nu`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SusceptibilityGrid {
    pub nodes: Vec<GridNode>,
}

pub const DEFAULT_GRID_NODES: usize = 400;

impl SusceptibilityGrid {
    /// Builds a `k`-bin equiprobable discretization holding `s_total`
    /// susceptibles in proportion to the node weights.
    ///
    /// Each node sits at the conditional mean of its quantile bin, so the
    /// mean is exactly 1. The within-bin variance lost by collapsing bins is
    /// restored by splitting the upper tail bin into two half-weight nodes
    /// placed symmetrically about its conditional mean.
    pub fn gamma(nu: f64, k: usize, s_total: f64) -> Result<Self> {
        if !(nu.is_finite() && nu >= 0.0) {
            return Err(Error::InvalidParams(format!("nu = {nu} must be >= 0")));
        }
        if nu == 0.0 || k <= 1 {
            return Ok(SusceptibilityGrid {
                nodes: vec![GridNode {
                    x: 1.0,
                    weight: 1.0,
                    s_density: s_total,
                }],
            });
        }
        let shape = 1.0 / (nu * nu);
        let scale = nu * nu;
        let dist = Gamma::new(shape, 1.0 / scale)
            .map_err(|e| Error::InvalidParams(format!("gamma(shape={shape}): {e}")))?;
        // Partial first moment: integral of x q(x) over [0, edge].
        let partial_mean = |edge: f64| -> f64 {
            if edge.is_infinite() {
                1.0
            } else if edge <= 0.0 {
                0.0
            } else {
                gamma_lr(shape + 1.0, edge / scale)
            }
        };
        let kf = k as f64;
        let edges: Vec<f64> = (0..=k)
            .map(|j| match j {
                0 => 0.0,
                j if j == k => f64::INFINITY,
                j => dist.inverse_cdf(j as f64 / kf),
            })
            .collect();
        let weight = 1.0 / kf;
        let mut xs: Vec<f64> = edges
            .windows(2)
            .map(|w| (partial_mean(w[1]) - partial_mean(w[0])) * kf)
            .collect();

        let variance: f64 = xs.iter().map(|x| weight * (x - 1.0).powi(2)).sum();
        let deficit = (nu * nu - variance).max(0.0);
        let spread = (deficit * kf).sqrt();
        let top = xs.pop().expect("k > 1");
        let mut nodes: Vec<GridNode> = xs
            .into_iter()
            .map(|x| GridNode {
                x,
                weight,
                s_density: weight * s_total,
            })
            .collect();
        for x in [top - spread, top + spread] {
            nodes.push(GridNode {
                x: x.max(0.0),
                weight: 0.5 * weight,
                s_density: 0.5 * weight * s_total,
            });
        }
        Ok(SusceptibilityGrid { nodes })
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    pub fn mean(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight * n.x).sum::<f64>() / self.total_weight()
    }

    pub fn cv(&self) -> f64 {
        let m = self.mean();
        let var = self
            .nodes
            .iter()
            .map(|n| n.weight * (n.x - m).powi(2))
            .sum::<f64>()
            / self.total_weight();
        var.sqrt() / m
    }

    pub fn susceptible(&self) -> f64 {
        self.nodes.iter().map(|n| n.s_density).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplicitRate {
    pub ds: Vec<f64>,
    pub de: f64,
    pub di: f64,
}

/// Right-hand side of the explicit system, one equation per grid node.
pub fn explicit_rhs(
    grid: &SusceptibilityGrid,
    e: f64,
    i: f64,
    params: &ModelParams,
    t: f64,
) -> Result<ExplicitRate> {
    let beta = params.beta()?;
    let pressure = params.npi.factor(t) * beta * (params.rho * e + i) / params.n_pop;
    let ds: Vec<f64> = grid
        .nodes
        .iter()
        .map(|n| -pressure * n.x * n.s_density)
        .collect();
    let infection: f64 = -ds.iter().sum::<f64>();
    Ok(ExplicitRate {
        ds,
        de: infection - params.delta * e,
        di: params.delta * e - params.gamma * i,
    })
}

/// Seeds `i0` infectious individuals with `E = 2.5 i0` exposed, the
/// dominant-eigenvector ratio of the linearized growth phase.
pub fn initial_state(i0: f64, params: &ModelParams) -> Result<EpidemicState> {
    if !(i0.is_finite() && i0 >= 0.0) {
        return Err(Error::InvalidParams(format!("i0 = {i0} must be >= 0")));
    }
    let needed = 3.5 * i0;
    if needed > params.n_pop {
        return Err(Error::SeedTooLarge {
            needed,
            n_pop: params.n_pop,
        });
    }
    Ok(EpidemicState {
        s: params.n_pop - needed,
        e: 2.5 * i0,
        i: i0,
        r: 0.0,
        t: 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearEigen {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    /// `E/I` along the eigenvector of `lambda_plus`.
    pub e_over_i: f64,
}

/// Eigen-analysis of the early-phase linearization
/// `d(E, I)/dt = [[rho beta - delta, beta], [delta, -gamma]] (E, I)`.
pub fn linear_eigen(params: &ModelParams) -> Result<LinearEigen> {
    let beta = params.beta()?;
    let (a, b, c, d) = linear_matrix(params, beta);
    let trace = a + d;
    // Discriminant written as a sum of squares so it never goes negative.
    let disc = ((a - d).powi(2) + 4.0 * b * c).sqrt();
    let lambda_plus = 0.5 * (trace + disc);
    let lambda_minus = 0.5 * (trace - disc);
    Ok(LinearEigen {
        lambda_plus,
        lambda_minus,
        // Second row: delta E + (-gamma - lambda) I = 0.
        e_over_i: (lambda_plus - d) / c,
    })
}

/// Entries `(a, b, c, d)` of the 2x2 linearized E/I matrix.
pub fn linear_matrix(params: &ModelParams, beta: f64) -> (f64, f64, f64, f64) {
    (
        params.rho * beta - params.delta,
        beta,
        params.delta,
        -params.gamma,
    )
}
