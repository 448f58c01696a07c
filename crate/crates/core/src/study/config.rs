use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{FitSpec, SpecKind};
use crate::model::ModelParams;
use crate::prediction::AfterFit;

/// Generating values of the four estimable parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub r0: f64,
    pub nu: f64,
    pub t0: f64,
    pub c1: f64,
}

impl Truth {
    pub fn params(&self, base: &ModelParams) -> ModelParams {
        base.with_r0(self.r0).with_nu(self.nu).with_npi(self.t0, self.c1)
    }
}

/// One row group of the baseline table: a data-generating truth fitted with
/// both the heterogeneous and the homogeneous variant of `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseConfig {
    pub name: String,
    /// Cases with the same label share their datasets.
    pub data: String,
    pub truth: Truth,
    pub kind: SpecKind,
    #[serde(default)]
    pub forecast: bool,
}

impl CaseConfig {
    fn new(name: &str, data: &str, nu: f64, c1: f64, kind: SpecKind, forecast: bool) -> Self {
        CaseConfig {
            name: name.into(),
            data: data.into(),
            truth: Truth {
                r0: 3.0,
                nu,
                t0: 15.0,
                c1,
            },
            kind,
            forecast,
        }
    }

    /// The six cases of the baseline analysis.
    pub fn standard_cases() -> Vec<CaseConfig> {
        use SpecKind::{ThetaA, ThetaB};
        vec![
            CaseConfig::new("I(a)(i)", "I(a)", 0.0, 1.0, ThetaA, false),
            CaseConfig::new("I(a)(ii)", "I(a)", 0.0, 1.0, ThetaB, false),
            CaseConfig::new("I(b)", "I(b)", 0.0, 0.3, ThetaB, true),
            CaseConfig::new("II(a)(i)", "II(a)", 1.414, 1.0, ThetaA, false),
            CaseConfig::new("II(a)(ii)", "II(a)", 1.414, 1.0, ThetaB, false),
            CaseConfig::new("II(b)", "II(b)", 1.414, 0.3, ThetaB, true),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub cases: Vec<CaseConfig>,
    pub i0: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            cases: CaseConfig::standard_cases(),
            i0: 40.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoEpidemicConfig {
    /// Dataset label; matching a baseline case reuses its focal datasets.
    pub data: String,
    pub truth: Truth,
    pub i0_focal: f64,
    pub i0_auxiliary: f64,
    pub profiles: bool,
}

impl Default for TwoEpidemicConfig {
    fn default() -> Self {
        TwoEpidemicConfig {
            data: "II(b)".into(),
            truth: Truth {
                r0: 3.0,
                nu: 1.414,
                t0: 15.0,
                c1: 0.3,
            },
            i0_focal: 40.0,
            i0_auxiliary: 400.0,
            profiles: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedSweepConfig {
    pub r0: f64,
    pub nu: f64,
    pub t0: f64,
    pub c1_levels: Vec<f64>,
    pub i0_levels: Vec<f64>,
    pub i0_focal: f64,
    /// Also fit single epidemics seeded at each level.
    pub single_epidemic: bool,
}

impl Default for SeedSweepConfig {
    fn default() -> Self {
        SeedSweepConfig {
            r0: 3.0,
            nu: 1.414,
            t0: 15.0,
            c1_levels: vec![0.2, 0.3, 0.4],
            i0_levels: vec![20.0, 40.0, 80.0, 160.0, 320.0, 400.0],
            i0_focal: 40.0,
            single_epidemic: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub total_days: usize,
    pub n_draws: usize,
    /// Replicate whose fits are forecast and whose profiles are plotted.
    pub replicate: usize,
    pub after_fit: AfterFit,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            total_days: 250,
            n_draws: 2000,
            replicate: 0,
            after_fit: AfterFit::Lift,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Baseline,
    TwoEpidemic,
    SeedSweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub n_replicates: usize,
    pub rng_seed: u64,
    /// Observed days `1..=horizon`.
    pub horizon: usize,
    pub fit_window: (usize, usize),
    /// Fixed model constants; `r0`, `nu`, `t0`, `c1` come from each truth.
    pub base: ModelParams,
    pub studies: Vec<StudyKind>,
    pub baseline: BaselineConfig,
    pub two_epidemic: TwoEpidemicConfig,
    pub seed_sweep: SeedSweepConfig,
    pub forecast: ForecastConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            n_replicates: 50,
            rng_seed: 20_240_601,
            horizon: 100,
            fit_window: (1, 100),
            base: ModelParams::default(),
            studies: vec![StudyKind::Baseline, StudyKind::TwoEpidemic, StudyKind::SeedSweep],
            baseline: BaselineConfig::default(),
            two_epidemic: TwoEpidemicConfig::default(),
            seed_sweep: SeedSweepConfig::default(),
            forecast: ForecastConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: StudyConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_replicates < 1 {
            return Err(Error::Config("n_replicates must be >= 1".into()));
        }
        if self.fit_window.1 > self.horizon {
            return Err(Error::Config(format!(
                "fit window ends on day {} after the horizon {}",
                self.fit_window.1, self.horizon
            )));
        }
        if self.forecast.total_days <= self.fit_window.1 {
            return Err(Error::Config("forecast must extend past the fit window".into()));
        }
        let b = &self.baseline;
        for (k, case) in b.cases.iter().enumerate() {
            if let Some(other) = b.cases[..k].iter().find(|c| c.data == case.data && c.truth != case.truth) {
                return Err(Error::Config(format!(
                    "cases {} and {} share data {:?} but differ in truth",
                    other.name, case.name, case.data
                )));
            }
            let truth = case.truth.params(&self.base);
            truth.validate()?;
            for het in [true, false] {
                FitSpec::standard(case.kind, het, truth, self.fit_window, vec![b.i0])?;
            }
        }
        let t = &self.two_epidemic;
        let truth = t.truth.params(&self.base);
        FitSpec::standard(SpecKind::ThetaB, true, truth, self.fit_window, vec![t.i0_focal, t.i0_auxiliary])?;
        let s = &self.seed_sweep;
        for &c1 in &s.c1_levels {
            let truth = self.base.with_r0(s.r0).with_nu(s.nu).with_npi(s.t0, c1);
            truth.validate()?;
            for &i0 in &s.i0_levels {
                FitSpec::standard(SpecKind::ThetaB, true, truth, self.fit_window, vec![s.i0_focal, i0])?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = StudyConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: StudyConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.baseline.cases.len(), 6);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let cfg: StudyConfig =
            serde_json::from_str(r#"{"n_replicates": 3, "studies": ["baseline"], "seed_sweep": {"c1_levels": [0.3]}}"#)
                .unwrap();
        assert_eq!(cfg.n_replicates, 3);
        assert_eq!(cfg.studies, vec![StudyKind::Baseline]);
        assert_eq!(cfg.seed_sweep.c1_levels, vec![0.3]);
        assert_eq!(cfg.seed_sweep.i0_levels.len(), 6);
        assert_eq!(cfg.horizon, 100);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = StudyConfig {
            n_replicates: 0,
            ..StudyConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.n_replicates = 1;
        cfg.fit_window = (1, 120);
        assert!(cfg.validate().is_err());
        cfg.fit_window = (1, 100);
        cfg.baseline.cases[1].truth.nu = 0.5;
        assert!(cfg.validate().is_err());
        cfg.baseline.cases = CaseConfig::standard_cases();
        cfg.baseline.cases[0].truth.c1 = 1.5;
        assert!(cfg.validate().is_err());
    }
}
