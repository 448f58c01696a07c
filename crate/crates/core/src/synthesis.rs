//! Synthetic incidence datasets: deterministic model incidence with Poisson
//! observation noise.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::integrator::{incidence_series, integrate};
use crate::model::{initial_state, ModelParams};
use crate::rng::{self, Purpose};

/// Inversion is used below this rate, transformed rejection above.
const INVERSION_LIMIT: f64 = 30.0;

/// Draws one Poisson variate with mean `lambda`.
pub fn poisson_sample<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        0
    } else if lambda < INVERSION_LIMIT {
        poisson_inversion(lambda, rng)
    } else {
        poisson_ptrs(lambda, rng)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
        // Round-off can leave cdf a hair below 1; the tail mass there is nil.
        if p == 0.0 && k as f64 > lambda {
            break;
        }
    }
    k
}

/// Hörmann's PTRS transformed rejection sampler.
fn poisson_ptrs<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -lambda + k * loglam - ln_gamma(k + 1.0)
        {
            return k as u64;
        }
    }
}

/// Independent Poisson draws, one per expected rate.
pub fn poissonize<R: Rng + ?Sized>(expected: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    if let Some((index, &value)) = expected
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(Error::InvalidRate { index, value });
    }
    Ok(expected.iter().map(|&l| poisson_sample(l, rng)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub params: ModelParams,
    pub i0_focal: f64,
    #[serde(default)]
    pub i0_auxiliary: Option<f64>,
    /// Last observed day; counts cover days `1..=horizon`.
    pub horizon: usize,
    pub n_replicates: usize,
    pub rng_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n_replicates < 1 {
            return Err(Error::Config("n_replicates must be >= 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        Ok(())
    }

    pub fn i0_list(&self) -> Vec<f64> {
        std::iter::once(self.i0_focal).chain(self.i0_auxiliary).collect()
    }

    /// Deterministic incidence for days `1..=horizon` of each epidemic.
    pub fn expected_incidence(&self) -> Result<Vec<Vec<f64>>> {
        self.i0_list()
            .into_iter()
            .map(|i0| {
                let init = initial_state(i0, &self.params)?;
                let traj = integrate(&self.params, &init, self.horizon)?;
                incidence_series(&traj, 1, self.horizon)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncidenceDataset {
    /// Observed counts for days `1..=counts.len()`.
    pub counts: Vec<u64>,
    pub truth: ModelParams,
    pub i0: f64,
    pub replicate_id: usize,
}

impl IncidenceDataset {
    pub fn from_counts(counts: Vec<u64>, truth: ModelParams, i0: f64) -> Self {
        IncidenceDataset {
            counts,
            truth,
            i0,
            replicate_id: 0,
        }
    }

    pub fn days(&self) -> impl Iterator<Item = usize> + '_ {
        1..=self.counts.len()
    }
}

/// One replicate: the focal dataset, plus the auxiliary one when present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub replicate_id: usize,
    pub datasets: Vec<IncidenceDataset>,
}

pub fn generate_scenario(scenario: &Scenario) -> Result<Vec<Replicate>> {
    scenario.validate()?;
    let expected = scenario.expected_incidence()?;
    let i0s = scenario.i0_list();
    let mut reps: Vec<Replicate> = (0..scenario.n_replicates)
        .into_par_iter()
        .map(|id| {
            let datasets = expected
                .iter()
                .zip(&i0s)
                .enumerate()
                .map(|(epi, (lam, &i0))| {
                    let mut r = rng::stream(
                        scenario.rng_seed,
                        Purpose::Observation,
                        (id * 2 + epi) as u64,
                    );
                    Ok(IncidenceDataset {
                        counts: poissonize(lam, &mut r)?,
                        truth: scenario.params,
                        i0,
                        replicate_id: id,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Replicate {
                replicate_id: id,
                datasets,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    reps.sort_by_key(|r| r.replicate_id);
    Ok(reps)
}

/// Writes `day,count,replicate_id` rows for a set of datasets.
pub fn write_datasets_csv<W: Write>(datasets: &[&IncidenceDataset], mut w: W) -> std::io::Result<()> {
    writeln!(w, "day,count,replicate_id")?;
    for ds in datasets {
        for (day, c) in ds.days().zip(&ds.counts) {
            writeln!(w, "{},{},{}", day, c, ds.replicate_id)?;
        }
    }
    Ok(())
}

/// Reads a dataset CSV back into per-replicate count vectors, ordered by
/// replicate id and day.
pub fn read_datasets_csv(path: &Path) -> Result<Vec<(usize, Vec<u64>)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<(usize, usize, u64)> = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Config(format!(
                "{}:{}: expected 3 columns",
                path.display(),
                n + 1
            )));
        }
        let parse = |s: &str| -> Result<u64> {
            s.parse::<u64>().map_err(|e| {
                Error::Config(format!("{}:{}: {s}: {e}", path.display(), n + 1))
            })
        };
        rows.push((parse(fields[2])? as usize, parse(fields[0])? as usize, parse(fields[1])?));
    }
    rows.sort();
    let mut out: Vec<(usize, Vec<u64>)> = Vec::new();
    for (rep, _, count) in rows {
        match out.last_mut() {
            Some((r, counts)) if *r == rep => counts.push(count),
            _ => out.push((rep, vec![count])),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub params: ModelParams,
    pub i0_focal: f64,
    pub i0_auxiliary: Option<f64>,
    pub horizon: usize,
    pub n_replicates: usize,
    pub seed: u64,
}

impl From<&Scenario> for ScenarioMetadata {
    fn from(s: &Scenario) -> Self {
        ScenarioMetadata {
            params: s.params,
            i0_focal: s.i0_focal,
            i0_auxiliary: s.i0_auxiliary,
            horizon: s.horizon,
            n_replicates: s.n_replicates,
            seed: s.rng_seed,
        }
    }
}

/// Writes `focal.csv` (and `auxiliary.csv`) plus `scenario.json` into `dir`.
pub fn write_scenario_files(dir: &Path, scenario: &Scenario, reps: &[Replicate]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names = ["focal.csv", "auxiliary.csv"];
    for (epi, name) in names.iter().enumerate().take(scenario.i0_list().len()) {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let rows: Vec<&IncidenceDataset> = reps.iter().map(|r| &r.datasets[epi]).collect();
        write_datasets_csv(&rows, std::io::BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;
    }
    let meta_path = dir.join("scenario.json");
    let meta = serde_json::to_string_pretty(&ScenarioMetadata::from(scenario))?;
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

/// Reads a directory written by [`write_scenario_files`].
pub fn read_scenario_files(dir: &Path) -> Result<(ScenarioMetadata, Vec<Replicate>)> {
    let meta_path = dir.join("scenario.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: ScenarioMetadata = serde_json::from_str(&text)?;
    let mut i0s = vec![meta.i0_focal];
    i0s.extend(meta.i0_auxiliary);
    let names = ["focal.csv", "auxiliary.csv"];
    let mut reps: Vec<Replicate> = Vec::new();
    for (epi, (name, &i0)) in names.iter().zip(&i0s).enumerate() {
        let rows = read_datasets_csv(&dir.join(name))?;
        if epi > 0 && rows.len() != reps.len() {
            return Err(Error::LengthMismatch {
                left: reps.len(),
                right: rows.len(),
            });
        }
        for (k, (replicate_id, counts)) in rows.into_iter().enumerate() {
            let ds = IncidenceDataset {
                counts,
                truth: meta.params,
                i0,
                replicate_id,
            };
            if epi == 0 {
                reps.push(Replicate {
                    replicate_id,
                    datasets: vec![ds],
                });
            } else if reps[k].replicate_id != replicate_id {
                return Err(Error::Config(format!("{name}: replicate {replicate_id} has no focal counterpart")));
            } else {
                reps[k].datasets.push(ds);
            }
        }
    }
    Ok((meta, reps))
}
