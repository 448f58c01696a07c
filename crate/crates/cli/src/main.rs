use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use hetsus::likelihood::{fit_mle, FitOptions, FitResult, FitSpec, Param, SpecKind};
use hetsus::model::ModelParams;
use hetsus::prediction::{forecast, write_forecast_csv, AfterFit, ForecastOptions};
use hetsus::profile::{default_grid, profile, write_profile_csv, ProfileOptions};
use hetsus::sensitivity::{compensation_score, sensitivities, stacked_column, write_sensitivity_csv};
use hetsus::study::{emit_reports, run_study, StudyConfig, Truth};
use hetsus::synthesis::{generate_scenario, read_scenario_files, write_scenario_files, Replicate, Scenario};

const FULL_REPLICATES: usize = 200;

#[derive(Parser, Debug)]
#[command(name = "hetsus", version, about = "Heterogeneous-susceptibility SEIR simulation and inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration for the subcommand; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replicates to generate (simulate, study) or process (fit, profile, forecast).
    #[arg(long)]
    replicates: Option<usize>,
    /// Use the full replicate count (200) instead of the desk-scale default.
    #[arg(long)]
    full: bool,
}

impl Common {
    fn config<T: DeserializeOwned + Default>(&self) -> Result<T> {
        match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
            }
            None => Ok(T::default()),
        }
    }

    fn replicate_count(&self) -> Option<usize> {
        if self.full {
            Some(FULL_REPLICATES)
        } else {
            self.replicates
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate Poisson incidence datasets for a scenario.
    Simulate(Common),
    /// Fit every replicate of a simulated scenario.
    Fit(Common),
    /// Full-grid profile likelihoods for each replicate and free parameter.
    Profile(Common),
    /// Incidence sensitivities and compensation scores at a parameter point.
    Sensitivity(Common),
    /// Forecast bands from a fitted replicate.
    Forecast(Common),
    /// Run the configured Monte Carlo studies and write all reports.
    Study(Common),
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(transparent)]
struct SimulateConfig(Scenario);

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig(Scenario {
            params: ModelParams::default().with_nu(1.414).with_npi(15.0, 0.3),
            i0_focal: 40.0,
            i0_auxiliary: Some(400.0),
            horizon: 100,
            n_replicates: 50,
            rng_seed: 1,
        })
    }
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(default)]
struct FitConfig {
    /// Directory written by `simulate`.
    data: PathBuf,
    kind: SpecKind,
    heterogeneous: bool,
    fit_window: (usize, usize),
    /// Fit the auxiliary epidemic jointly when the data has one.
    use_auxiliary: bool,
    n_starts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            data: PathBuf::from("data"),
            kind: SpecKind::ThetaB,
            heterogeneous: true,
            fit_window: (1, 100),
            use_auxiliary: true,
            n_starts: 5,
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Default)]
#[serde(default)]
struct ProfileConfig {
    #[serde(flatten)]
    fit: FitConfig,
    /// Parameters to profile; all free parameters when empty.
    params: Vec<Param>,
    n_points: Option<usize>,
    span_se: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(default)]
struct ForecastCommandConfig {
    #[serde(flatten)]
    fit: FitConfig,
    total_days: usize,
    n_draws: usize,
    after_fit: AfterFit,
}

impl Default for ForecastCommandConfig {
    fn default() -> Self {
        ForecastCommandConfig {
            fit: FitConfig::default(),
            total_days: 250,
            n_draws: 2000,
            after_fit: AfterFit::Lift,
        }
    }
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(default)]
struct SensitivityConfig {
    base: ModelParams,
    truth: Truth,
    /// One epidemic per seed; the first is the focal one.
    i0: Vec<f64>,
    window: (usize, usize),
    params: Vec<Param>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            base: ModelParams::default(),
            truth: Truth {
                r0: 3.0,
                nu: 1.414,
                t0: 15.0,
                c1: 0.3,
            },
            i0: vec![40.0, 400.0],
            window: (0, 100),
            params: Param::ALL.to_vec(),
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn simulate(common: &Common) -> Result<()> {
    let SimulateConfig(mut scenario) = common.config()?;
    if let Some(seed) = common.seed {
        scenario.rng_seed = seed;
    }
    if let Some(n) = common.replicate_count() {
        scenario.n_replicates = n;
    }
    let reps = generate_scenario(&scenario)?;
    write_scenario_files(&common.out, &scenario, &reps)?;
    eprintln!("wrote {} replicates to {}", reps.len(), common.out.display());
    Ok(())
}

/// Loads the data named by `cfg` and the spec it should be fitted with.
fn load(cfg: &FitConfig, common: &Common) -> Result<(FitSpec, Vec<Replicate>)> {
    let (meta, mut reps) = read_scenario_files(&cfg.data)?;
    let mut i0s = vec![meta.i0_focal];
    if cfg.use_auxiliary {
        i0s.extend(meta.i0_auxiliary);
    } else {
        for r in &mut reps {
            r.datasets.truncate(1);
        }
    }
    if let Some(n) = common.replicate_count() {
        reps.truncate(n);
    }
    let spec = FitSpec::standard(cfg.kind, cfg.heterogeneous, meta.params, cfg.fit_window, i0s)?;
    Ok((spec, reps))
}

fn fit_options(cfg: &FitConfig, common: &Common, replicate_id: usize) -> FitOptions {
    FitOptions {
        n_starts: cfg.n_starts,
        ..FitOptions::for_replicate(common.seed.unwrap_or(0), replicate_id)
    }
}

fn fit_all(cfg: &FitConfig, common: &Common) -> Result<(FitSpec, Vec<(Replicate, FitResult)>)> {
    let (spec, reps) = load(cfg, common)?;
    let fits = reps
        .into_par_iter()
        .map(|r| {
            let fit = fit_mle(&r.datasets, &spec, &fit_options(cfg, common, r.replicate_id))
                .with_context(|| format!("replicate {}", r.replicate_id))?;
            Ok((r, fit))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((spec, fits))
}

fn fit(common: &Common) -> Result<()> {
    let cfg: FitConfig = common.config()?;
    let (spec, fits) = fit_all(&cfg, common)?;
    create_dir(&common.out)?;
    let path = common.out.join(format!("fits_{}.jsonl", spec.label()));
    let mut w = create_file(&path)?;
    for (_, f) in &fits {
        serde_json::to_writer(&mut w, f)?;
        writeln!(w)?;
    }
    w.flush()?;
    let converged = fits.iter().filter(|(_, f)| f.converged).count();
    eprintln!("{}: {converged}/{} converged, wrote {}", spec.label(), fits.len(), path.display());
    Ok(())
}

fn profile_cmd(common: &Common) -> Result<()> {
    let cfg: ProfileConfig = common.config()?;
    let mut opts = ProfileOptions::default();
    if let Some(n) = cfg.n_points {
        opts.n_points = n;
    }
    if let Some(s) = cfg.span_se {
        opts.span_se = s;
    }
    let (spec, fits) = fit_all(&cfg.fit, common)?;
    let params = if cfg.params.is_empty() { spec.free_params.clone() } else { cfg.params.clone() };
    create_dir(&common.out)?;
    for (rep, fit) in &fits {
        for &p in &params {
            let grid = default_grid(fit, p, &opts)?;
            let curve = profile(p, &rep.datasets, fit, &grid, &opts)
                .with_context(|| format!("replicate {} parameter {p}", rep.replicate_id))?;
            let path = common.out.join(format!("profile_{}_{}.csv", rep.replicate_id, p));
            let mut w = create_file(&path)?;
            write_profile_csv(&curve, &mut w)?;
            w.flush()?;
            let show = |v: Option<f64>| v.map_or("open".to_string(), |v| format!("{v:.4}"));
            eprintln!(
                "replicate {} {p}: mle {:.4}, 95% profile CI [{}, {}]{}",
                rep.replicate_id,
                curve.mle_value,
                show(curve.ci.lower),
                show(curve.ci.upper),
                if curve.disconnected { " (disconnected)" } else { "" }
            );
        }
    }
    Ok(())
}

fn sensitivity(common: &Common) -> Result<()> {
    let cfg: SensitivityConfig = common.config()?;
    if cfg.i0.is_empty() {
        bail!("at least one seed size required");
    }
    let params = cfg.truth.params(&cfg.base);
    let matrices = sensitivities(&params, &cfg.params, &cfg.i0, cfg.window)?;
    create_dir(&common.out)?;
    let path = common.out.join("sensitivity.csv");
    let mut w = create_file(&path)?;
    write_sensitivity_csv(&matrices, &mut w)?;
    w.flush()?;

    #[derive(Serialize)]
    struct Score {
        a: Param,
        b: Param,
        single: Option<f64>,
        stacked: Option<f64>,
    }
    let mut scores = Vec::new();
    for (i, &a) in cfg.params.iter().enumerate() {
        for &b in &cfg.params[i + 1..] {
            let score = |m: &[_]| -> Option<f64> {
                compensation_score(&stacked_column(m, a)?, &stacked_column(m, b)?).ok()
            };
            scores.push(Score {
                a,
                b,
                single: score(&matrices[..1]),
                stacked: (matrices.len() > 1).then(|| score(&matrices)).flatten(),
            });
        }
    }
    let path = common.out.join("compensation.json");
    fs::write(&path, serde_json::to_string_pretty(&scores)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    for s in &scores {
        eprintln!("{}-{}: single {:?}, stacked {:?}", s.a, s.b, s.single, s.stacked);
    }
    Ok(())
}

fn forecast_cmd(common: &Common) -> Result<()> {
    let cfg: ForecastCommandConfig = common.config()?;
    let common = Common {
        replicates: Some(common.replicates.unwrap_or(1)),
        ..common.clone()
    };
    let (spec, fits) = fit_all(&cfg.fit, &common)?;
    create_dir(&common.out)?;
    for (rep, fit) in &fits {
        let options = ForecastOptions {
            n_draws: cfg.n_draws,
            seed: common.seed.unwrap_or(0),
            stream: rep.replicate_id as u64,
            after_fit: cfg.after_fit,
        };
        let bands = forecast(fit, spec.i0_per_epidemic[0], spec.fit_window.1, cfg.total_days, &options)?;
        let stem = format!("forecast_{}_{}", spec.label(), rep.replicate_id);
        let path = common.out.join(format!("{stem}.csv"));
        let mut w = create_file(&path)?;
        write_forecast_csv(&bands, &mut w)?;
        w.flush()?;
        let path = common.out.join(format!("{stem}.json"));
        fs::write(&path, serde_json::to_string(&bands)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        if let Some((day, peak)) = bands.forecast_peak() {
            let k = bands.index_of_day(day).unwrap_or(0);
            eprintln!(
                "replicate {}: median peak {peak:.1}/day on day {day} (band {:.1}-{:.1})",
                rep.replicate_id, bands.lower[k], bands.upper[k]
            );
        }
    }
    Ok(())
}

fn study(common: &Common) -> Result<()> {
    let mut cfg = match &common.config {
        Some(path) => StudyConfig::from_json_file(path)?,
        None => StudyConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.rng_seed = seed;
    }
    if let Some(n) = common.replicate_count() {
        cfg.n_replicates = n;
    }
    cfg.validate()?;
    let summary = run_study(&cfg)?;
    let written = emit_reports(&summary, &common.out)?;
    let path = common.out.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    for c in &summary.cells {
        eprintln!(
            "{} {} {}: {}/{} converged, mean AIC {:.2}",
            c.study, c.case, c.spec, c.n_converged, c.n_replicates, c.aic_mean
        );
    }
    eprintln!("wrote {} files to {}", written.len() + 1, common.out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Fit(c) => fit(c),
        Command::Profile(c) => profile_cmd(c),
        Command::Sensitivity(c) => sensitivity(c),
        Command::Forecast(c) => forecast_cmd(c),
        Command::Study(c) => study(c),
    }
}
