use std::collections::BTreeMap;
use std::fmt::Write;

use pcgeval::evaltests::{read_results, ResultRow};
use pcgeval_stats::{kruskal_wallis, mann_whitney_u_with, shapiro_wilk, Method, MwuMode, TestResult};
use serde::Serialize;

use crate::{CliError, Format, Grouping, MwuModeArg, StatsArgs, TestKind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub test: &'static str,
    pub groups: Vec<String>,
    pub sizes: Vec<usize>,
    pub statistic: f64,
    pub p_value: f64,
    pub method: &'static str,
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Exact => "exact",
        Method::Asymptotic => "asymptotic",
        Method::Degenerate => "degenerate",
    }
}

fn key(row: &ResultRow, g: Grouping) -> String {
    match g {
        Grouping::Version => row.version.to_string(),
        Grouping::Source => row.opponent_source.clone(),
        Grouping::VersionSource => format!("{}/{}", row.version, row.opponent_source),
    }
}

pub fn group_rows(rows: &[ResultRow], g: Grouping, include_removed: bool) -> BTreeMap<String, Vec<f64>> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| include_removed || r.retained) {
        groups.entry(key(r, g)).or_default().push(r.win_rate);
    }
    groups
}

pub fn compare(groups: &BTreeMap<String, Vec<f64>>, test: TestKind, mode: MwuModeArg) -> Result<Vec<Comparison>, CliError> {
    let entry = |test, names: Vec<&String>, r: TestResult| Comparison {
        test,
        sizes: names.iter().map(|n| groups[*n].len()).collect(),
        groups: names.into_iter().cloned().collect(),
        statistic: r.statistic,
        p_value: r.p_value,
        method: method_name(r.method),
    };
    let names: Vec<&String> = groups.keys().collect();
    let mut out = Vec::new();
    match test {
        TestKind::Kw => {
            let samples: Vec<&[f64]> = groups.values().map(Vec::as_slice).collect();
            out.push(entry("kruskal-wallis", names, kruskal_wallis(&samples)?));
        }
        TestKind::Mwu => {
            if names.len() < 2 {
                return Err(CliError::Failed(format!("need at least two groups, got {}", names.len())));
            }
            let mode = match mode {
                MwuModeArg::Auto => MwuMode::Auto,
                MwuModeArg::Exact => MwuMode::Exact,
                MwuModeArg::Asymptotic => MwuMode::Asymptotic,
            };
            for i in 0..names.len() {
                for j in i + 1..names.len() {
                    let r = mann_whitney_u_with(&groups[names[i]], &groups[names[j]], mode)?;
                    out.push(entry("mann-whitney-u", vec![names[i], names[j]], r));
                }
            }
        }
        TestKind::Sw => {
            for n in names {
                out.push(entry("shapiro-wilk", vec![n], shapiro_wilk(&groups[n])?));
            }
        }
    }
    Ok(out)
}

pub fn render(results: &[Comparison], format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(results).expect("comparisons serialize") + "\n",
        Format::Text => {
            let mut s = String::new();
            for r in results {
                let sizes: Vec<String> = r.sizes.iter().map(usize::to_string).collect();
                let _ = writeln!(
                    s,
                    "{} [{}] n=[{}] statistic={} p={} ({})",
                    r.test,
                    r.groups.join(" vs "),
                    sizes.join(","),
                    r.statistic,
                    r.p_value,
                    r.method
                );
            }
            s
        }
    }
}

pub fn run(args: &StatsArgs) -> Result<String, CliError> {
    let mut rows = Vec::new();
    for path in &args.inputs {
        if !path.exists() {
            return Err(CliError::Failed(format!("no result file at {}", path.display())));
        }
        rows.extend(read_results(path)?);
    }
    let groups = group_rows(&rows, args.groups, args.include_removed);
    Ok(render(&compare(&groups, args.test, args.mwu_mode)?, args.format))
}
