//! Monte Carlo studies: replicate generation, fitting, aggregation and
//! report emission.

mod config;
mod report;
mod run;
pub mod stats;
mod svg;

use serde::{Deserialize, Serialize};

use crate::likelihood::{FitResult, Interval, Param};
use crate::prediction::ForecastBands;
use crate::profile::{ProfileCi, ProfileCurve};

pub use config::{
    BaselineConfig, CaseConfig, ForecastConfig, SeedSweepConfig, StudyConfig, StudyKind, Truth, TwoEpidemicConfig,
};
pub use report::emit_reports;
pub use run::{run_baseline_study, run_seed_sweep, run_study, run_two_epidemic_study};

/// The per-replicate outcome of one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub params: Vec<Param>,
    pub mle: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub converged: bool,
    pub identifiable: bool,
    pub condition_number: Option<f64>,
    /// Hessian-derived, within this replicate.
    pub correlation: Option<Vec<Vec<f64>>>,
    pub wald_ci: Vec<Interval>,
    /// Aligned with `params`; empty when profiles were not requested, `None`
    /// where a profile failed.
    pub profile_ci: Vec<Option<ProfileCi>>,
}

impl FitRecord {
    pub fn new(fit: &FitResult, profiles: &[Option<ProfileCurve>]) -> Self {
        FitRecord {
            params: fit.params.clone(),
            mle: fit.mle.clone(),
            loglik: fit.loglik,
            aic: fit.aic,
            converged: fit.converged,
            identifiable: fit.identifiable,
            condition_number: fit.condition_number,
            correlation: fit.correlation.as_ref().map(|c| c.rows()),
            wald_ci: fit.wald_ci.clone(),
            profile_ci: profiles
                .iter()
                .map(|c| {
                    c.as_ref().map(|c| ProfileCi {
                        interval: c.ci,
                        disconnected: c.disconnected,
                    })
                })
                .collect(),
        }
    }

    pub fn value(&self, p: Param) -> Option<f64> {
        self.params.iter().position(|&q| q == p).map(|k| self.mle[k])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub study: String,
    pub case: String,
    pub spec: String,
    pub replicate_id: usize,
    pub fit: Option<FitRecord>,
    pub error: Option<String>,
}

impl ReplicateRecord {
    pub fn converged(&self) -> Option<&FitRecord> {
        self.fit.as_ref().filter(|f| f.converged)
    }
}

/// Estimates of one parameter across converged replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub param: Param,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    /// Empirical 2.5% and 97.5% quantiles.
    pub lo: f64,
    pub hi: f64,
    pub relative_bias: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl ConditionStats {
    fn from_values(v: &[f64]) -> Self {
        ConditionStats {
            n: v.len(),
            mean: stats::mean(v),
            median: stats::median(v),
            sd: stats::sd(v),
            min: v.iter().copied().reduce(f64::min).unwrap_or(f64::NAN),
            max: v.iter().copied().reduce(f64::max).unwrap_or(f64::NAN),
        }
    }
}

/// Profile-interval statistics of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub param: Param,
    /// Converged replicates with a profile interval.
    pub n_profiled: usize,
    /// Intervals closed at both ends.
    pub n_bounded: usize,
    /// Mean over bounded intervals.
    pub mean_width: f64,
    /// Fraction of profiled intervals containing the truth.
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub study: String,
    pub case: String,
    pub spec: String,
    pub n_replicates: usize,
    pub n_converged: usize,
    pub n_failed: usize,
    pub params: Vec<Param>,
    pub estimates: Vec<ParamSummary>,
    pub aic_mean: f64,
    pub loglik_mean: f64,
    /// Elementwise median of the per-replicate Hessian correlations.
    pub hessian_correlation: Option<Vec<Vec<f64>>>,
    /// Pearson correlation of the estimates across replicates (`NaN` where undefined).
    pub estimate_correlation: Vec<Vec<f64>>,
    pub condition: ConditionStats,
    pub profiles: Vec<ProfileSummary>,
}

impl CellSummary {
    pub fn estimate(&self, p: Param) -> Option<&ParamSummary> {
        self.estimates.iter().find(|e| e.param == p)
    }

    pub fn profile(&self, p: Param) -> Option<&ProfileSummary> {
        self.profiles.iter().find(|e| e.param == p)
    }

    pub fn hessian_correlation_between(&self, a: Param, b: Param) -> Option<f64> {
        let i = self.params.iter().position(|&q| q == a)?;
        let j = self.params.iter().position(|&q| q == b)?;
        self.hessian_correlation.as_ref().map(|c| c[i][j])
    }

    /// Summarizes the records of one (case, spec) cell. `truth` is aligned
    /// with `params`.
    pub fn from_records(
        study: &str,
        case: &str,
        spec: &str,
        params: &[Param],
        truth: &[f64],
        records: &[ReplicateRecord],
    ) -> Self {
        let ok: Vec<&FitRecord> = records.iter().filter_map(ReplicateRecord::converged).collect();
        let column = |k: usize| -> Vec<f64> { ok.iter().map(|f| f.mle[k]).collect() };
        let estimates = params
            .iter()
            .zip(truth)
            .enumerate()
            .map(|(k, (&param, &truth))| {
                let v = column(k);
                let mean = stats::mean(&v);
                ParamSummary {
                    param,
                    truth,
                    mean,
                    sd: stats::sd(&v),
                    lo: stats::quantile(&v, 0.025),
                    hi: stats::quantile(&v, 0.975),
                    relative_bias: (mean - truth) / truth,
                }
            })
            .collect();

        let p = params.len();
        let corrs: Vec<&Vec<Vec<f64>>> = ok.iter().filter_map(|f| f.correlation.as_ref()).collect();
        let hessian_correlation = (!corrs.is_empty()).then(|| {
            (0..p)
                .map(|i| {
                    (0..p)
                        .map(|j| stats::median(&corrs.iter().map(|c| c[i][j]).collect::<Vec<_>>()))
                        .collect()
                })
                .collect()
        });
        let estimate_correlation = (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| match (i == j, stats::pearson(&column(i), &column(j))) {
                        (true, Some(_)) => 1.0,
                        (_, Some(r)) => r,
                        (_, None) => f64::NAN,
                    })
                    .collect()
            })
            .collect();

        let kappas: Vec<f64> = ok.iter().filter_map(|f| f.condition_number).collect();
        let profiled = ok.iter().any(|f| !f.profile_ci.is_empty());
        let profiles = if profiled {
            params
                .iter()
                .zip(truth)
                .enumerate()
                .map(|(k, (&param, &truth))| {
                    let cis: Vec<&ProfileCi> =
                        ok.iter().filter_map(|f| f.profile_ci.get(k).and_then(Option::as_ref)).collect();
                    let widths: Vec<f64> = cis.iter().filter_map(|c| c.interval.width()).collect();
                    let covered = cis.iter().filter(|c| c.interval.contains(truth)).count();
                    ProfileSummary {
                        param,
                        n_profiled: cis.len(),
                        n_bounded: widths.len(),
                        mean_width: stats::mean(&widths),
                        coverage: covered as f64 / cis.len().max(1) as f64,
                    }
                })
                .collect()
        } else {
            Vec::new()
        };

        CellSummary {
            study: study.into(),
            case: case.into(),
            spec: spec.into(),
            n_replicates: records.len(),
            n_converged: ok.len(),
            n_failed: records.len() - ok.len(),
            params: params.to_vec(),
            estimates,
            aic_mean: stats::mean(&ok.iter().map(|f| f.aic).collect::<Vec<_>>()),
            loglik_mean: stats::mean(&ok.iter().map(|f| f.loglik).collect::<Vec<_>>()),
            hessian_correlation,
            estimate_correlation,
            condition: ConditionStats::from_values(&kappas),
            profiles,
        }
    }
}

/// Heterogeneous vs homogeneous AIC on replicates where both converged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AicComparison {
    pub case: String,
    pub n_pairs: usize,
    /// Fraction of pairs where the heterogeneous AIC is lower.
    pub het_better_fraction: f64,
    /// Mean of `AIC_het - AIC_hom`.
    pub mean_difference: f64,
}

impl AicComparison {
    pub fn from_records(case: &str, het: &[ReplicateRecord], hom: &[ReplicateRecord]) -> Self {
        let diffs: Vec<f64> = het
            .iter()
            .zip(hom)
            .filter_map(|(a, b)| Some(a.converged()?.aic - b.converged()?.aic))
            .collect();
        AicComparison {
            case: case.into(),
            n_pairs: diffs.len(),
            het_better_fraction: diffs.iter().filter(|&&d| d < 0.0).count() as f64 / diffs.len().max(1) as f64,
            mean_difference: stats::mean(&diffs),
        }
    }
}

/// Profile-interval width reduction from the single to the two-epidemic design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthReduction {
    pub param: Param,
    pub single_width: f64,
    pub two_width: f64,
    /// `1 - two / single`.
    pub reduction: f64,
}

/// Distribution across replicates of one Hessian correlation entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDistribution {
    pub a: Param,
    pub b: Param,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Single,
    Two,
}

impl Design {
    pub fn name(self) -> &'static str {
        match self {
            Design::Single => "single",
            Design::Two => "two",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub design: Design,
    pub c1: f64,
    /// Auxiliary seed for the two-epidemic design, the only seed otherwise.
    pub i0: f64,
    /// The auxiliary epidemic coincides with the focal one.
    pub degenerate: bool,
    pub n_converged: usize,
    pub n_failed: usize,
    pub pairs: Vec<PairDistribution>,
}

impl SweepPoint {
    pub fn pair(&self, a: Param, b: Param) -> Option<&PairDistribution> {
        self.pairs.iter().find(|d| (d.a, d.b) == (a, b) || (d.a, d.b) == (b, a))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastExample {
    pub case: String,
    pub spec: String,
    pub replicate_id: usize,
    pub i0: f64,
    pub observed: Vec<u64>,
    /// Expected incidence under the generating parameters, same NPI rule.
    pub truth: Vec<f64>,
    pub bands: ForecastBands,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileExample {
    pub design: Design,
    pub replicate_id: usize,
    pub curves: Vec<ProfileCurve>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub cells: Vec<CellSummary>,
    pub aic: Vec<AicComparison>,
    pub width_reduction: Vec<WidthReduction>,
    pub sweep: Vec<SweepPoint>,
    pub forecasts: Vec<ForecastExample>,
    pub profile_examples: Vec<ProfileExample>,
    /// Written separately as JSON lines.
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
}

impl StudySummary {
    pub fn cell(&self, case: &str, spec: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.case == case && c.spec == spec)
    }

    pub fn forecast(&self, case: &str, spec: &str) -> Option<&ForecastExample> {
        self.forecasts.iter().find(|c| c.case == case && c.spec == spec)
    }

    pub fn merge(&mut self, other: StudySummary) {
        self.cells.extend(other.cells);
        self.aic.extend(other.aic);
        self.width_reduction.extend(other.width_reduction);
        self.sweep.extend(other.sweep);
        self.forecasts.extend(other.forecasts);
        self.profile_examples.extend(other.profile_examples);
        self.records.extend(other.records);
    }
}
