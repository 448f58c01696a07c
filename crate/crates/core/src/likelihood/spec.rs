use serde::{Deserialize, Serialize};

use super::transform::Param;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Which parameter set is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecKind {
    /// `(R0, nu)`, no interventions in the fitted model.
    ThetaA,
    /// `(R0, nu, t0, c1)`.
    ThetaB,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    pub free_params: Vec<Param>,
    pub heterogeneous: bool,
    pub with_npi: bool,
    /// Values of everything that is not estimated (and defaults for what is).
    pub fixed: ModelParams,
    /// Inclusive day range used in the likelihood; day 1 is the first count.
    pub fit_window: (usize, usize),
    pub i0_per_epidemic: Vec<f64>,
}

impl FitSpec {
    /// Builds the standard spec. Homogeneous variants drop `nu` (fixed at 0);
    /// `ThetaA` fixes `c1 = 1`.
    pub fn standard(
        kind: SpecKind,
        heterogeneous: bool,
        fixed: ModelParams,
        fit_window: (usize, usize),
        i0_per_epidemic: Vec<f64>,
    ) -> Result<Self> {
        let with_npi = kind == SpecKind::ThetaB;
        let mut free = vec![Param::R0];
        if heterogeneous {
            free.push(Param::Nu);
        }
        if with_npi {
            free.extend([Param::T0, Param::C1]);
        }
        let mut fixed = fixed;
        if !heterogeneous {
            fixed.nu = 0.0;
        }
        if !with_npi {
            fixed.npi.c1 = 1.0;
        }
        let spec = FitSpec {
            free_params: free,
            heterogeneous,
            with_npi,
            fixed,
            fit_window,
            i0_per_epidemic,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kind(&self) -> SpecKind {
        if self.with_npi {
            SpecKind::ThetaB
        } else {
            SpecKind::ThetaA
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{}_{}",
            if self.heterogeneous { "het" } else { "hom" },
            if self.with_npi { "theta_b" } else { "theta_a" }
        )
    }

    pub fn n_free(&self) -> usize {
        self.free_params.len()
    }

    pub fn index_of(&self, p: Param) -> Option<usize> {
        self.free_params.iter().position(|&q| q == p)
    }

    pub fn validate(&self) -> Result<()> {
        self.fixed.validate()?;
        let has = |p| self.free_params.contains(&p);
        if !has(Param::R0) {
            return Err(Error::Config("r0 must be free".into()));
        }
        if has(Param::Nu) != self.heterogeneous {
            return Err(Error::Config("nu is free exactly when heterogeneous".into()));
        }
        if (has(Param::T0) || has(Param::C1)) && !self.with_npi {
            return Err(Error::Config("t0/c1 free requires with_npi".into()));
        }
        if !self.heterogeneous && self.fixed.nu != 0.0 {
            return Err(Error::Config("homogeneous spec needs nu = 0".into()));
        }
        if !self.with_npi && self.fixed.npi.c1 != 1.0 {
            return Err(Error::Config("spec without NPIs needs c1 = 1".into()));
        }
        let mut sorted = self.free_params.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.free_params.len() {
            return Err(Error::Config("duplicate free parameter".into()));
        }
        let (from, to) = self.fit_window;
        if from < 1 || to < from {
            return Err(Error::Config(format!("bad fit window ({from}, {to})")));
        }
        if !(1..=2).contains(&self.i0_per_epidemic.len()) {
            return Err(Error::Config("one or two epidemics supported".into()));
        }
        Ok(())
    }

    /// Full model parameters with the free values substituted.
    pub fn params_with(&self, values: &[f64]) -> ModelParams {
        let mut p = self.fixed;
        for (&param, &v) in self.free_params.iter().zip(values) {
            match param {
                Param::R0 => p.r0 = v,
                Param::Nu => p.nu = v,
                Param::T0 => p.npi.t0 = v,
                Param::C1 => p.npi.c1 = v,
            }
        }
        p
    }

    /// Free-parameter values read out of a full parameter set.
    pub fn values_of(&self, params: &ModelParams) -> Vec<f64> {
        self.free_params
            .iter()
            .map(|p| match p {
                Param::R0 => params.r0,
                Param::Nu => params.nu,
                Param::T0 => params.npi.t0,
                Param::C1 => params.npi.c1,
            })
            .collect()
    }

    /// Same spec restricted to the first epidemic.
    pub fn single(&self) -> FitSpec {
        let mut s = self.clone();
        s.i0_per_epidemic.truncate(1);
        s
    }
}
