use std::fs;
use std::path::Path;

use hetsus::likelihood::Param;
use hetsus::study::{emit_reports, run_study, CaseConfig, SeedSweepConfig, StudyConfig};

fn tiny() -> StudyConfig {
    let mut cfg = StudyConfig {
        n_replicates: 2,
        ..StudyConfig::default()
    };
    cfg.baseline.cases = CaseConfig::standard_cases()
        .into_iter()
        .filter(|c| c.name == "I(a)(i)" || c.name == "I(b)")
        .collect();
    cfg.forecast.n_draws = 40;
    cfg.two_epidemic.profiles = false;
    cfg.seed_sweep = SeedSweepConfig {
        c1_levels: vec![0.3],
        i0_levels: vec![40.0, 160.0],
        single_epidemic: true,
        ..SeedSweepConfig::default()
    };
    cfg
}

fn run_with_threads(cfg: &StudyConfig, threads: usize, dir: &Path) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let summary = pool.install(|| run_study(cfg)).unwrap();
    emit_reports(&summary, dir).unwrap();
}

#[test]
fn outputs_are_byte_identical_across_thread_counts() {
    let cfg = tiny();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_with_threads(&cfg, 1, a.path());
    run_with_threads(&cfg, 3, b.path());
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 10, "{names:?}");
    for name in &names {
        let (x, y) = (fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        assert!(x == y, "{name:?} differs");
    }
    assert_eq!(fs::read_dir(b.path()).unwrap().count(), names.len());

    let table2 = fs::read_to_string(a.path().join("table2.csv")).unwrap();
    // Two cases, each fitted with both specs.
    assert_eq!(table2.lines().count(), 1 + 4);
    let jsonl = fs::read_to_string(a.path().join("replicates.jsonl")).unwrap();
    // 4 baseline cells, 2 two-epidemic cells, 4 sweep cells; 2 replicates each.
    assert_eq!(jsonl.lines().count(), (4 + 2 + 4) * 2);
    assert!(a.path().join("forecast_I_b.svg").exists());
    assert!(a.path().join("sweep_single_c1_0.3.svg").exists());
}

#[test]
fn different_seeds_give_different_data() {
    let mut cfg = tiny();
    cfg.studies = vec![hetsus::study::StudyKind::Baseline];
    cfg.baseline.cases.truncate(1);
    let a = run_study(&cfg).unwrap();
    cfg.rng_seed += 1;
    let b = run_study(&cfg).unwrap();
    let r0 = |s: &hetsus::study::StudySummary| s.cells[0].estimate(Param::R0).unwrap().mean;
    assert_ne!(r0(&a), r0(&b));
}
