//! Plot-ready CSV files and optional SVG line charts.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use pcgeval::duel::NUM_ATTRS;
use pcgeval::evaltests::{read_results, ResultRow};
use pcgeval::harness::{read_metrics, summarize_training, Band, VersionSummary, MANIFEST_FILE};
use pcgeval_stats::five_number_summary;

use crate::{io_err, load_manifest, CliError, COMPREHENSIVE_FILE, SCENARIO_RAW_FILE};

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_file(path: &Path, text: &str, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_err(path))?;
    written.push(path.to_path_buf());
    Ok(())
}

fn band_csv(summaries: &[VersionSummary], pick: fn(&VersionSummary) -> &[Band]) -> String {
    let mut s = String::from("version,sga,min,median,max\n");
    for v in summaries {
        for b in pick(v) {
            let _ = writeln!(s, "{},{},{},{},{}", v.version, b.sga, opt(b.min), opt(b.median), opt(b.max));
        }
    }
    s
}

fn training_tables(summaries: &[VersionSummary]) -> Vec<(&'static str, String)> {
    let mut summary = String::from(
        "version,runs,total_games,total_wins,reward_per_game_mean,reward_per_game_std,win_rate_mean,win_rate_std\n",
    );
    for v in summaries {
        let (rm, rs) = v.avg_reward_per_game.as_ref().map_or((None, None), |m| (Some(m.mean), Some(m.std)));
        let (wm, ws) = v.avg_win_rate.as_ref().map_or((None, None), |m| (Some(m.mean), Some(m.std)));
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{}",
            v.version,
            v.runs,
            v.total_games,
            v.total_wins,
            opt(rm),
            opt(rs),
            opt(wm),
            opt(ws)
        );
    }
    let mut attrs = String::from("version,sga");
    for a in 0..NUM_ATTRS {
        let _ = write!(attrs, ",attr{a}");
    }
    attrs.push('\n');
    for v in summaries {
        for (sga, f) in &v.attr_freq_curve {
            let cells: Vec<String> = f.iter().map(f64::to_string).collect();
            let _ = writeln!(attrs, "{},{sga},{}", v.version, cells.join(","));
        }
    }
    vec![
        ("training_summary.csv", summary),
        ("training_win_rate.csv", band_csv(summaries, |v| &v.win_rate_curve)),
        ("training_cum_reward.csv", band_csv(summaries, |v| &v.cum_reward_curve)),
        ("attribute_rates.csv", attrs),
    ]
}

/// Mean and best comprehensive win rate over seeds, per version and checkpoint.
fn comprehensive_table(rows: &[ResultRow]) -> String {
    let mut by: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for r in rows {
        by.entry((r.version.to_string(), r.checkpoint_sga)).or_default().push(r.win_rate);
    }
    let mut s = String::from("version,checkpoint_sga,instances,mean_win_rate,max_win_rate\n");
    for ((v, sga), rates) in by {
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        let max = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(s, "{v},{sga},{},{mean},{max}", rates.len());
    }
    s
}

fn scenario_table(rows: &[ResultRow]) -> Result<String, CliError> {
    let mut s = String::from("version,opponent_source,subset,n,min,q1,median,q3,max\n");
    let mut by: BTreeMap<(String, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        by.entry((r.version.to_string(), r.opponent_source.clone())).or_default().push(r);
    }
    for ((v, src), group) in by {
        for (subset, keep_all) in [("raw", true), ("filtered", false)] {
            let rates: Vec<f64> = group.iter().filter(|r| keep_all || r.retained).map(|r| r.win_rate).collect();
            if rates.is_empty() {
                continue;
            }
            let f = five_number_summary(&rates)?;
            let _ =
                writeln!(s, "{v},{src},{subset},{},{},{},{},{},{}", rates.len(), f.min, f.q1, f.median, f.q3, f.max);
        }
    }
    Ok(s)
}

const PALETTE: [&str; 7] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"];

/// Minimal line chart; x and y ranges come from the data.
pub fn line_chart(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {} H{} M{m} {} V{m}" stroke="black" fill="none"/>"#,
        h - m,
        w - m,
        h - m
    );
    let _ = writeln!(s, r#"<text x="{m}" y="{}" text-anchor="start">{x0}</text>"#, h - m + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{x1}</text>"#, w - m, h - m + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text>"#, m - 4.0, h - m);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#, m - 4.0, m + 4.0);
    for (i, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none"/>"#, coords.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            w - m + 4.0,
            m + 14.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

fn median_series(summaries: &[VersionSummary], pick: fn(&VersionSummary) -> &[Band]) -> Vec<(String, Vec<(f64, f64)>)> {
    summaries
        .iter()
        .map(|v| (v.version.to_string(), pick(v).iter().filter_map(|b| Some((b.sga as f64, b.median?))).collect()))
        .collect()
}

/// Writes every table the inputs in `input` allow into `out`, returning the
/// paths written.
pub fn write_report(input: &Path, out: &Path, svg: bool) -> Result<Vec<PathBuf>, CliError> {
    let has_manifest = input.join(MANIFEST_FILE).exists();
    let comprehensive = input.join(COMPREHENSIVE_FILE);
    let scenario = input.join(SCENARIO_RAW_FILE);
    if !has_manifest && !comprehensive.exists() && !scenario.exists() {
        return Err(CliError::Failed(format!("no training or test outputs in {}", input.display())));
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut written = Vec::new();
    if has_manifest {
        let manifest = load_manifest(input)?;
        let mut runs = Vec::new();
        for run in manifest.runs.iter().filter(|r| r.error.is_none()) {
            if let Some(m) = &run.metrics {
                runs.push((run.version, read_metrics(&input.join(&m.path))?));
            }
        }
        let summaries = summarize_training(&runs)?;
        for (name, text) in training_tables(&summaries) {
            write_file(&out.join(name), &text, &mut written)?;
        }
        if svg {
            let charts = [
                ("training_win_rate.svg", "median win rate", median_series(&summaries, |v| &v.win_rate_curve)),
                ("training_cum_reward.svg", "median cumulative reward", median_series(&summaries, |v| &v.cum_reward_curve)),
            ];
            for (name, title, series) in charts {
                write_file(&out.join(name), &line_chart(title, &series), &mut written)?;
            }
            for v in &summaries {
                let series: Vec<(String, Vec<(f64, f64)>)> = (0..NUM_ATTRS)
                    .map(|a| (format!("attr{a}"), v.attr_freq_curve.iter().map(|(x, f)| (*x as f64, f[a])).collect()))
                    .collect();
                let title = format!("{} attribute appearance rate", v.version);
                write_file(&out.join(format!("attribute_rates_{}.svg", v.version)), &line_chart(&title, &series), &mut written)?;
            }
        }
    }
    if comprehensive.exists() {
        let text = comprehensive_table(&read_results(&comprehensive)?);
        write_file(&out.join("comprehensive_curve.csv"), &text, &mut written)?;
    }
    if scenario.exists() {
        let text = scenario_table(&read_results(&scenario)?)?;
        write_file(&out.join("scenario_summary.csv"), &text, &mut written)?;
    }
    Ok(written)
}
