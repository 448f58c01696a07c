use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::svg::{diverging, Axes, Svg, PALETTE};
use super::{CellSummary, Design, ForecastExample, ProfileExample, StudySummary, SweepPoint};
use crate::error::{Error, Result};
use crate::likelihood::Param;
use crate::profile::CHI2_95_1;

/// File-name-safe form of a case label: `II(a)(ii)` becomes `II_a_ii`.
fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

struct Writer<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }
}

/// Writes CSV tables, `replicates.jsonl`, `summary.json` and SVG plots into
/// `dir`, returning the paths written. Tables are always written (header-only
/// when empty); plots only when there is something to draw.
pub fn emit_reports(summary: &StudySummary, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = Writer {
        dir,
        written: Vec::new(),
    };
    w.write("table2.csv", &table2_csv(summary))?;
    w.write("estimates.csv", &estimates_csv(summary))?;
    w.write("aic.csv", &aic_csv(summary))?;
    w.write("profile_widths.csv", &profile_widths_csv(summary))?;
    w.write("width_reduction.csv", &width_reduction_csv(summary))?;
    w.write("condition_numbers.csv", &condition_csv(summary))?;
    w.write("correlations.csv", &correlations_csv(summary))?;
    w.write("seed_sweep.csv", &sweep_csv(summary))?;

    let mut jsonl = String::new();
    for r in &summary.records {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    w.write("replicates.jsonl", &jsonl)?;
    w.write("summary.json", &(serde_json::to_string_pretty(summary)? + "\n"))?;

    for f in &summary.forecasts {
        let mut buf = Vec::new();
        crate::prediction::write_forecast_csv(&f.bands, &mut buf).expect("in-memory write");
        let name = format!("forecast_{}_{}.csv", slug(&f.case), f.spec);
        w.write(&name, &String::from_utf8(buf).expect("utf-8 csv"))?;
    }
    for ex in &summary.profile_examples {
        for c in &ex.curves {
            let mut buf = Vec::new();
            crate::profile::write_profile_csv(c, &mut buf).expect("in-memory write");
            let name = format!("profile_{}_{}.csv", ex.design.name(), c.param);
            w.write(&name, &String::from_utf8(buf).expect("utf-8 csv"))?;
        }
    }

    for cell in summary.cells.iter().filter(|c| c.n_converged > 0) {
        let stem = format!("{}_{}_{}", cell.study, slug(&cell.case), cell.spec);
        let records: Vec<&[f64]> = summary
            .records
            .iter()
            .filter(|r| r.study == cell.study && r.case == cell.case && r.spec == cell.spec)
            .filter_map(|r| r.converged().map(|f| f.mle.as_slice()))
            .collect();
        w.write(&format!("hist_{stem}.svg"), &histogram_svg(cell, &records))?;
        if let Some(m) = &cell.hessian_correlation {
            let title = format!("{} {} {}: median Hessian correlation", cell.study, cell.case, cell.spec);
            w.write(&format!("heatmap_{stem}.svg"), &heatmap_svg(&title, &cell.params, m))?;
        }
    }
    let mut forecast_cases: Vec<&str> = summary.forecasts.iter().map(|f| f.case.as_str()).collect();
    forecast_cases.dedup();
    for case in forecast_cases {
        let group: Vec<&ForecastExample> = summary.forecasts.iter().filter(|f| f.case == case).collect();
        w.write(&format!("forecast_{}.svg", slug(case)), &forecast_svg(&group))?;
    }
    if !summary.profile_examples.is_empty() {
        w.write("profiles.svg", &profiles_svg(&summary.profile_examples))?;
    }
    let mut levels: Vec<(Design, f64)> = summary.sweep.iter().map(|p| (p.design, p.c1)).collect();
    levels.dedup();
    for (design, c1) in levels {
        let points: Vec<&SweepPoint> =
            summary.sweep.iter().filter(|p| p.design == design && p.c1 == c1).collect();
        w.write(&format!("sweep_{}_c1_{}.svg", design.name(), c1), &sweep_svg(design, c1, &points))?;
    }
    Ok(w.written)
}

const PARAMS: [Param; 4] = [Param::R0, Param::Nu, Param::T0, Param::C1];

fn table2_csv(s: &StudySummary) -> String {
    let mut out = String::from("case,spec");
    for p in PARAMS {
        let _ = write!(out, ",{p}_mean,{p}_lo,{p}_hi");
    }
    out.push_str(",aic_mean,n_converged,n_failed\n");
    for c in s.cells.iter().filter(|c| c.study == "baseline") {
        let _ = write!(out, "{},{}", c.case, c.spec);
        for p in PARAMS {
            match c.estimate(p) {
                Some(e) => {
                    let _ = write!(out, ",{},{},{}", e.mean, e.lo, e.hi);
                }
                None => out.push_str(",,,"),
            }
        }
        let _ = writeln!(out, ",{},{},{}", c.aic_mean, c.n_converged, c.n_failed);
    }
    out
}

fn estimates_csv(s: &StudySummary) -> String {
    let mut out = String::from("study,case,spec,param,truth,mean,sd,lo,hi,relative_bias,n_converged,n_failed\n");
    for c in &s.cells {
        for e in &c.estimates {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                c.study, c.case, c.spec, e.param, e.truth, e.mean, e.sd, e.lo, e.hi, e.relative_bias, c.n_converged,
                c.n_failed
            );
        }
    }
    out
}

fn aic_csv(s: &StudySummary) -> String {
    let mut out = String::from("case,n_pairs,het_better_fraction,mean_difference\n");
    for a in &s.aic {
        let _ = writeln!(out, "{},{},{},{}", a.case, a.n_pairs, a.het_better_fraction, a.mean_difference);
    }
    out
}

fn profile_widths_csv(s: &StudySummary) -> String {
    let mut out = String::from("study,case,spec,param,n_profiled,n_bounded,mean_width,coverage,n_converged\n");
    for c in &s.cells {
        for p in &c.profiles {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.study, c.case, c.spec, p.param, p.n_profiled, p.n_bounded, p.mean_width, p.coverage, c.n_converged
            );
        }
    }
    out
}

fn width_reduction_csv(s: &StudySummary) -> String {
    let mut out = String::from("param,single_width,two_width,reduction\n");
    for r in &s.width_reduction {
        let _ = writeln!(out, "{},{},{},{}", r.param, r.single_width, r.two_width, r.reduction);
    }
    out
}

fn condition_csv(s: &StudySummary) -> String {
    let mut out = String::from("study,case,spec,n,mean,median,sd,min,max,n_converged\n");
    for c in &s.cells {
        let k = &c.condition;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.study, c.case, c.spec, k.n, k.mean, k.median, k.sd, k.min, k.max, c.n_converged
        );
    }
    out
}

fn correlations_csv(s: &StudySummary) -> String {
    let mut out = String::from("study,case,spec,kind,param_a,param_b,value,n_converged\n");
    for c in &s.cells {
        let kinds = [
            ("hessian_median", c.hessian_correlation.as_ref()),
            ("estimate_pearson", Some(&c.estimate_correlation)),
        ];
        for (kind, m) in kinds {
            let Some(m) = m else { continue };
            for (i, a) in c.params.iter().enumerate() {
                for (j, b) in c.params.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        c.study, c.case, c.spec, kind, a, b, m[i][j], c.n_converged
                    );
                }
            }
        }
    }
    out
}

fn sweep_csv(s: &StudySummary) -> String {
    let mut out = String::from("design,c1,i0,degenerate,param_a,param_b,n,median,q25,q75,n_converged,n_failed\n");
    for p in &s.sweep {
        for d in &p.pairs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                p.design.name(),
                p.c1,
                p.i0,
                p.degenerate,
                d.a,
                d.b,
                d.values.len(),
                d.median,
                d.q25,
                d.q75,
                p.n_converged,
                p.n_failed
            );
        }
    }
    out
}

fn histogram_svg(cell: &CellSummary, estimates: &[&[f64]]) -> String {
    let (pw, ph) = (260.0, 200.0);
    let n = cell.params.len();
    let mut svg = Svg::new(pw * n as f64, ph + 40.0);
    svg.text(
        (pw * n as f64 / 2.0, 16.0),
        &format!("{} {} {} (n = {})", cell.study, cell.case, cell.spec, cell.n_converged),
        13.0,
        "middle",
    );
    for (k, e) in cell.estimates.iter().enumerate() {
        let values: Vec<f64> = estimates.iter().map(|m| m[k]).collect();
        let x = Axes::range(values.iter().copied().chain([e.truth]));
        let bins = 15;
        let mut counts = vec![0usize; bins];
        for v in &values {
            let b = ((v - x.0) / (x.1 - x.0) * bins as f64).floor() as isize;
            counts[b.clamp(0, bins as isize - 1) as usize] += 1;
        }
        let top = *counts.iter().max().unwrap_or(&1) as f64;
        let axes = Axes {
            left: k as f64 * pw + 50.0,
            top: 50.0,
            width: pw - 70.0,
            height: ph - 60.0,
            x,
            y: (0.0, top.max(1.0) * 1.05),
            log_x: false,
        };
        let bw = (x.1 - x.0) / bins as f64;
        for (b, &c) in counts.iter().enumerate() {
            let (x0, y0) = axes.point(x.0 + b as f64 * bw, c as f64);
            let x1 = axes.px(x.0 + (b + 1) as f64 * bw);
            svg.rect(x0, y0, x1 - x0, axes.py(0.0) - y0, PALETTE[0], Some("#ffffff"));
        }
        svg.line(axes.point(e.truth, 0.0), axes.point(e.truth, axes.y.1), PALETTE[1], 2.0, true);
        axes.draw_frame(&mut svg, e.param.name(), "estimate", "count");
    }
    svg.finish()
}

/// Correlation matrix with each cell labelled to three decimals.
pub(crate) fn heatmap_svg(title: &str, params: &[Param], m: &[Vec<f64>]) -> String {
    let n = params.len();
    let cell = 70.0;
    let (left, top) = (60.0, 50.0);
    let width = (left + cell * n as f64 + 20.0).max(20.0 + 7.0 * title.len() as f64);
    let mut svg = Svg::new(width, top + cell * n as f64 + 20.0);
    svg.text((10.0, 20.0), title, 12.0, "start");
    for (i, a) in params.iter().enumerate() {
        svg.text((left - 8.0, top + (i as f64 + 0.55) * cell), a.name(), 12.0, "end");
        svg.text((left + (i as f64 + 0.5) * cell, top - 6.0), a.name(), 12.0, "middle");
        for j in 0..n {
            let v = m[i][j];
            let (x, y) = (left + j as f64 * cell, top + i as f64 * cell);
            svg.rect(x, y, cell, cell, &diverging(v), Some("#ffffff"));
            let label = if v.is_finite() { format!("{v:.3}") } else { "n/a".into() };
            svg.text((x + cell / 2.0, y + cell / 2.0 + 4.0), &label, 12.0, "middle");
        }
    }
    svg.finish()
}

fn forecast_svg(group: &[&ForecastExample]) -> String {
    let first = group[0];
    let days = &first.bands.times;
    let ymax = group
        .iter()
        .flat_map(|f| f.bands.upper.iter().chain(&f.truth).copied())
        .chain(first.observed.iter().map(|&c| c as f64))
        .fold(1.0f64, f64::max);
    let axes = Axes {
        left: 70.0,
        top: 40.0,
        width: 620.0,
        height: 320.0,
        x: (0.0, *days.last().unwrap_or(&1) as f64),
        y: (0.0, ymax * 1.05),
        log_x: false,
    };
    let mut svg = Svg::new(760.0, 420.0);
    for (k, f) in group.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let b = &f.bands;
        let mut band: Vec<(f64, f64)> = b.times.iter().zip(&b.upper).map(|(&t, &v)| axes.point(t as f64, v)).collect();
        band.extend(b.times.iter().zip(&b.lower).rev().map(|(&t, &v)| axes.point(t as f64, v)));
        svg.polygon(&band, colour, 0.25);
        let median: Vec<(f64, f64)> = b.times.iter().zip(&b.median).map(|(&t, &v)| axes.point(t as f64, v)).collect();
        svg.polyline(&median, colour, 2.0, false);
        svg.text((axes.left + 10.0, axes.top + 16.0 + 14.0 * k as f64), &f.spec, 11.0, "start");
        svg.line(
            (axes.left + 100.0, axes.top + 12.0 + 14.0 * k as f64),
            (axes.left + 120.0, axes.top + 12.0 + 14.0 * k as f64),
            colour,
            3.0,
            false,
        );
    }
    let truth: Vec<(f64, f64)> = first.truth.iter().enumerate().map(|(t, &v)| axes.point(t as f64, v)).collect();
    svg.polyline(&truth, "#000000", 1.0, true);
    for (t, &c) in (1..).zip(&first.observed) {
        svg.circle(axes.point(t as f64, c as f64), 1.8, "#333333");
    }
    let fit_end = first.bands.fit_days as f64;
    svg.line(axes.point(fit_end, 0.0), axes.point(fit_end, axes.y.1), "#888888", 1.0, true);
    axes.draw_frame(
        &mut svg,
        &format!("Case {} replicate {}: forecast bands", first.case, first.replicate_id),
        "day",
        "daily incidence",
    );
    svg.finish()
}

fn profiles_svg(examples: &[ProfileExample]) -> String {
    let (pw, ph) = (260.0, 230.0);
    let mut svg = Svg::new(pw * PARAMS.len() as f64, ph + 30.0);
    for (k, p) in PARAMS.iter().enumerate() {
        let curves: Vec<(Design, Vec<(f64, f64)>)> = examples
            .iter()
            .filter_map(|ex| {
                let c = ex.curves.iter().find(|c| c.param == *p)?;
                let lmax = c.max_loglik().map_or(c.mle_loglik, |m| m.max(c.mle_loglik));
                let pts = c
                    .grid
                    .iter()
                    .zip(&c.profile_loglik)
                    .filter_map(|(&x, l)| l.map(|l| (x, 2.0 * (lmax - l))))
                    .filter(|(_, d)| *d <= 4.0 * CHI2_95_1)
                    .collect();
                Some((ex.design, pts))
            })
            .collect();
        if curves.is_empty() {
            continue;
        }
        let axes = Axes {
            left: k as f64 * pw + 55.0,
            top: 45.0,
            width: pw - 75.0,
            height: ph - 75.0,
            x: Axes::range(curves.iter().flat_map(|(_, c)| c.iter().map(|q| q.0))),
            y: (0.0, 4.0 * CHI2_95_1),
            log_x: false,
        };
        for (design, pts) in &curves {
            let colour = if *design == Design::Single { PALETTE[0] } else { PALETTE[1] };
            let px: Vec<(f64, f64)> = pts.iter().map(|&(x, d)| axes.point(x, d)).collect();
            svg.polyline(&px, colour, 2.0, false);
        }
        svg.line(axes.point(axes.x.0, CHI2_95_1), axes.point(axes.x.1, CHI2_95_1), "#888888", 1.0, true);
        axes.draw_frame(&mut svg, &format!("{p}: single (blue) vs two (red)"), p.name(), "deviance");
    }
    svg.finish()
}

fn sweep_svg(design: Design, c1: f64, points: &[&SweepPoint]) -> String {
    let log_range = Axes::range(points.iter().map(|p| p.i0.ln()));
    let axes = Axes {
        left: 70.0,
        top: 40.0,
        width: 560.0,
        height: 300.0,
        x: (log_range.0.exp(), log_range.1.exp()),
        y: (-1.05, 1.05),
        log_x: true,
    };
    let mut svg = Svg::new(800.0, 400.0);
    let pairs: Vec<(Param, Param)> = points.first().map(|p| p.pairs.iter().map(|d| (d.a, d.b)).collect()).unwrap_or_default();
    for (k, &(a, b)) in pairs.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut line = Vec::new();
        for p in points {
            let Some(d) = p.pair(a, b) else { continue };
            if !d.median.is_finite() {
                continue;
            }
            let x = axes.px(p.i0);
            svg.line((x, axes.py(d.q25)), (x, axes.py(d.q75)), colour, 1.0, false);
            line.push((x, axes.py(d.median)));
        }
        svg.polyline(&line, colour, 2.0, false);
        let ly = axes.top + 14.0 * k as f64 + 10.0;
        svg.line((axes.left + axes.width + 15.0, ly - 4.0), (axes.left + axes.width + 35.0, ly - 4.0), colour, 3.0, false);
        svg.text((axes.left + axes.width + 40.0, ly), &format!("{a}-{b}"), 11.0, "start");
    }
    axes.draw_frame(
        &mut svg,
        &format!("{} design, c1 = {c1}: median Hessian correlation", design.name()),
        "seed size i0",
        "correlation",
    );
    svg.finish()
}
