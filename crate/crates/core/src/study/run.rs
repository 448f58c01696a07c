use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;

use super::config::{StudyConfig, StudyKind};
use super::{
    stats, AicComparison, CellSummary, Design, FitRecord, ForecastExample, PairDistribution, ProfileExample,
    ReplicateRecord, StudySummary, SweepPoint, WidthReduction,
};
use crate::error::{Error, Result};
use crate::likelihood::{fit_mle, FitOptions, FitResult, FitSpec, Param, SpecKind};
use crate::model::ModelParams;
use crate::prediction::{expected_trajectory, forecast, ForecastOptions};
use crate::profile::{default_grid, profile, ProfileCurve, ProfileOptions};
use crate::rng::derive_seed;
use crate::synthesis::{generate_scenario, IncidenceDataset, Replicate, Scenario};

/// A cell aborts once more than this fraction of its replicates fail.
const MAX_FAILURE_FRACTION: f64 = 0.2;

fn replicates(
    config: &StudyConfig,
    label: &str,
    truth: ModelParams,
    i0_focal: f64,
    i0_auxiliary: Option<f64>,
) -> Result<Vec<Replicate>> {
    generate_scenario(&Scenario {
        params: truth,
        i0_focal,
        i0_auxiliary,
        horizon: config.horizon,
        n_replicates: config.n_replicates,
        rng_seed: derive_seed(config.rng_seed, label),
    })
}

struct Outcome {
    record: ReplicateRecord,
    fit: Option<FitResult>,
    curves: Vec<Option<ProfileCurve>>,
}

struct Cell<'a> {
    study: &'a str,
    case: &'a str,
    spec: &'a FitSpec,
}

fn fit_replicate(
    config: &StudyConfig,
    cell: &Cell,
    replicate_id: usize,
    datasets: &[IncidenceDataset],
    with_profiles: bool,
) -> Outcome {
    let options = FitOptions::for_replicate(derive_seed(config.rng_seed, "fit"), replicate_id);
    let result = fit_mle(datasets, cell.spec, &options);
    let curves: Vec<Option<ProfileCurve>> = match &result {
        Ok(fit) if with_profiles && fit.converged => {
            let opts = ProfileOptions::truncated();
            fit.params
                .iter()
                .map(|&p| {
                    let curve = default_grid(fit, p, &opts).and_then(|g| profile(p, datasets, fit, &g, &opts));
                    curve
                        .map_err(|e| {
                            warn!(
                                "{} {} {} replicate {}: profile of {} failed: {}",
                                cell.study, cell.case, cell.spec.label(), replicate_id, p, e
                            )
                        })
                        .ok()
                })
                .collect()
        }
        _ => Vec::new(),
    };
    let (fit, error) = match result {
        Ok(fit) => {
            if !fit.converged {
                warn!(
                    "{} {} {} replicate {}: optimizer did not converge",
                    cell.study, cell.case, cell.spec.label(), replicate_id
                );
            }
            (Some(fit), None)
        }
        Err(e) => {
            warn!("{} {} {} replicate {}: {}", cell.study, cell.case, cell.spec.label(), replicate_id, e);
            (None, Some(e.to_string()))
        }
    };
    Outcome {
        record: ReplicateRecord {
            study: cell.study.into(),
            case: cell.case.into(),
            spec: cell.spec.label(),
            replicate_id,
            fit: fit.as_ref().map(|f| FitRecord::new(f, &curves)),
            error,
        },
        fit,
        curves,
    }
}

fn summarize(cell: &Cell, truth: &ModelParams, records: &[ReplicateRecord]) -> Result<CellSummary> {
    let summary = CellSummary::from_records(
        cell.study,
        cell.case,
        &cell.spec.label(),
        &cell.spec.free_params,
        &cell.spec.values_of(truth),
        records,
    );
    if summary.n_failed as f64 > MAX_FAILURE_FRACTION * summary.n_replicates as f64 {
        return Err(Error::TooManyFailures {
            cell: format!("{} {} {}", cell.study, cell.case, summary.spec),
            failed: summary.n_failed,
            total: summary.n_replicates,
        });
    }
    Ok(summary)
}

/// Runs every study listed in `config.studies`, in order.
pub fn run_study(config: &StudyConfig) -> Result<StudySummary> {
    let mut out = StudySummary::default();
    for kind in &config.studies {
        out.merge(match kind {
            StudyKind::Baseline => run_baseline_study(config)?,
            StudyKind::TwoEpidemic => run_two_epidemic_study(config)?,
            StudyKind::SeedSweep => run_seed_sweep(config)?,
        });
    }
    Ok(out)
}

/// Fits the heterogeneous and homogeneous variant of each baseline case.
pub fn run_baseline_study(config: &StudyConfig) -> Result<StudySummary> {
    config.validate()?;
    let b = &config.baseline;
    let mut out = StudySummary::default();
    let mut data: BTreeMap<&str, Vec<Replicate>> = BTreeMap::new();
    for case in &b.cases {
        let truth = case.truth.params(&config.base);
        if !data.contains_key(case.data.as_str()) {
            data.insert(&case.data, replicates(config, &case.data, truth, b.i0, None)?);
        }
        let reps = &data[case.data.as_str()];
        let mut per_spec = Vec::new();
        for het in [true, false] {
            let spec = FitSpec::standard(case.kind, het, truth, config.fit_window, vec![b.i0])?;
            let cell = Cell {
                study: "baseline",
                case: &case.name,
                spec: &spec,
            };
            let outcomes: Vec<Outcome> = reps
                .par_iter()
                .map(|r| fit_replicate(config, &cell, r.replicate_id, &r.datasets, false))
                .collect();
            let records: Vec<ReplicateRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
            out.cells.push(summarize(&cell, &truth, &records)?);
            out.records.extend(records.iter().cloned());
            let chosen = outcomes
                .into_iter()
                .find(|o| o.record.replicate_id == config.forecast.replicate)
                .and_then(|o| o.fit);
            per_spec.push((spec, records, chosen));
        }
        out.aic.push(AicComparison::from_records(&case.name, &per_spec[0].1, &per_spec[1].1));

        if case.forecast {
            let Some(rep) = reps.iter().find(|r| r.replicate_id == config.forecast.replicate) else {
                continue;
            };
            for (spec, _, fit) in &per_spec {
                let Some(fit) = fit.as_ref().filter(|f| f.converged) else {
                    warn!("{}: no converged {} fit to forecast", case.name, spec.label());
                    continue;
                };
                let options = ForecastOptions {
                    n_draws: config.forecast.n_draws,
                    seed: derive_seed(config.rng_seed, &format!("forecast/{}/{}", case.name, spec.label())),
                    stream: rep.replicate_id as u64,
                    after_fit: config.forecast.after_fit,
                };
                let fit_days = config.fit_window.1;
                let bands = forecast(fit, b.i0, fit_days, config.forecast.total_days, &options)?;
                let expected = expected_trajectory(
                    &truth,
                    b.i0,
                    fit_days,
                    config.forecast.total_days,
                    config.forecast.after_fit,
                )?;
                out.forecasts.push(ForecastExample {
                    case: case.name.clone(),
                    spec: spec.label(),
                    replicate_id: rep.replicate_id,
                    i0: b.i0,
                    observed: rep.datasets[0].counts.clone(),
                    truth: expected,
                    bands,
                });
            }
        }
    }
    Ok(out)
}

/// Single- vs two-epidemic fits, with profile intervals, on shared focal data.
pub fn run_two_epidemic_study(config: &StudyConfig) -> Result<StudySummary> {
    config.validate()?;
    let t = &config.two_epidemic;
    let truth = t.truth.params(&config.base);
    let reps = replicates(config, &t.data, truth, t.i0_focal, Some(t.i0_auxiliary))?;
    let single_spec = FitSpec::standard(SpecKind::ThetaB, true, truth, config.fit_window, vec![t.i0_focal])?;
    let two_spec =
        FitSpec::standard(SpecKind::ThetaB, true, truth, config.fit_window, vec![t.i0_focal, t.i0_auxiliary])?;
    let single = Cell {
        study: "two_epidemic",
        case: Design::Single.name(),
        spec: &single_spec,
    };
    let two = Cell {
        study: "two_epidemic",
        case: Design::Two.name(),
        spec: &two_spec,
    };
    let outcomes: Vec<(Outcome, Outcome)> = reps
        .par_iter()
        .map(|r| {
            let id = r.replicate_id;
            (
                fit_replicate(config, &single, id, &r.datasets[..1], t.profiles),
                fit_replicate(config, &two, id, &r.datasets, t.profiles),
            )
        })
        .collect();

    let mut out = StudySummary::default();
    let (so, to): (Vec<Outcome>, Vec<Outcome>) = outcomes.into_iter().unzip();
    for (cell, outcomes) in [(&single, so), (&two, to)] {
        let records: Vec<ReplicateRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
        out.cells.push(summarize(cell, &truth, &records)?);
        out.records.extend(records);
        if let Some(o) = outcomes.into_iter().find(|o| o.record.replicate_id == config.forecast.replicate) {
            let curves: Vec<ProfileCurve> = o.curves.into_iter().flatten().collect();
            if !curves.is_empty() {
                out.profile_examples.push(ProfileExample {
                    design: if cell.case == Design::Single.name() { Design::Single } else { Design::Two },
                    replicate_id: o.record.replicate_id,
                    curves,
                });
            }
        }
    }
    if t.profiles {
        let (s, w) = (&out.cells[0], &out.cells[1]);
        for &p in &single_spec.free_params {
            let (Some(a), Some(b)) = (s.profile(p), w.profile(p)) else {
                continue;
            };
            out.width_reduction.push(WidthReduction {
                param: p,
                single_width: a.mean_width,
                two_width: b.mean_width,
                reduction: 1.0 - b.mean_width / a.mean_width,
            });
        }
    }
    Ok(out)
}

fn pair_distributions(params: &[Param], records: &[ReplicateRecord]) -> Vec<PairDistribution> {
    let corrs: Vec<&Vec<Vec<f64>>> =
        records.iter().filter_map(|r| r.converged()?.correlation.as_ref()).collect();
    let mut out = Vec::new();
    for i in 0..params.len() {
        for j in i + 1..params.len() {
            let values: Vec<f64> = corrs.iter().map(|c| c[i][j]).collect();
            out.push(PairDistribution {
                a: params[i],
                b: params[j],
                median: stats::median(&values),
                q25: stats::quantile(&values, 0.25),
                q75: stats::quantile(&values, 0.75),
                values,
            });
        }
    }
    out
}

/// Hessian-correlation distributions across contact levels and auxiliary
/// (or, for single epidemics, focal) seed sizes.
pub fn run_seed_sweep(config: &StudyConfig) -> Result<StudySummary> {
    config.validate()?;
    let s = &config.seed_sweep;
    let mut out = StudySummary::default();
    let mut designs = vec![Design::Two];
    if s.single_epidemic {
        designs.push(Design::Single);
    }
    for &c1 in &s.c1_levels {
        let truth = config.base.with_r0(s.r0).with_nu(s.nu).with_npi(s.t0, c1);
        for &design in &designs {
            for &i0 in &s.i0_levels {
                let (reps, i0s) = match design {
                    Design::Two => (
                        replicates(config, &format!("sweep/c1={c1}"), truth, s.i0_focal, Some(i0))?,
                        vec![s.i0_focal, i0],
                    ),
                    Design::Single => (
                        replicates(config, &format!("sweep-single/c1={c1}/i0={i0}"), truth, i0, None)?,
                        vec![i0],
                    ),
                };
                let spec = FitSpec::standard(SpecKind::ThetaB, true, truth, config.fit_window, i0s)?;
                let case = format!("{} c1={} i0={}", design.name(), c1, i0);
                let cell = Cell {
                    study: "seed_sweep",
                    case: &case,
                    spec: &spec,
                };
                let records: Vec<ReplicateRecord> = reps
                    .par_iter()
                    .map(|r| fit_replicate(config, &cell, r.replicate_id, &r.datasets, false).record)
                    .collect();
                let summary = summarize(&cell, &truth, &records)?;
                out.sweep.push(SweepPoint {
                    design,
                    c1,
                    i0,
                    degenerate: design == Design::Two && i0 == s.i0_focal,
                    n_converged: summary.n_converged,
                    n_failed: summary.n_failed,
                    pairs: pair_distributions(&spec.free_params, &records),
                });
                out.cells.push(summary);
                out.records.extend(records);
            }
        }
    }
    Ok(out)
}
