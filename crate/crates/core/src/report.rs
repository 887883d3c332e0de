//! Plain-text and CSV rendering of feature statistics and comparisons.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{filter_by_support, rank_top_k, read_stats_csv, ComparisonReport};
use crate::model::FeatureStats;

/// Reads a stats file written by the pipeline, as JSON array or CSV.
pub fn load_stats(path: &Path) -> Result<Vec<FeatureStats>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        read_stats_csv(bytes.as_slice()).map_err(|e| match e {
            Error::Csv(c) => Error::parse(c.position().map(|p| p.line() as usize), c.to_string()),
            other => other,
        })
    } else {
        serde_json::from_slice(&bytes).map_err(|e| Error::parse(Some(e.line()), e.to_string()))
    }
}

/// Support filter followed by top-k ranking.
pub fn ranked(stats: &[FeatureStats], min_support: u64, top_k: usize) -> Vec<FeatureStats> {
    rank_top_k(&filter_by_support(stats, min_support), top_k)
}

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

fn delta(s: &FeatureStats) -> String {
    s.delta_sr.map(fmt3).unwrap_or_else(|| "-".into())
}

fn render(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut out = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(out, "{cell:<w$}");
            } else {
                let _ = write!(out, "  {cell:>w$}");
            }
        }
        out.trim_end().to_string()
    };
    let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
    let mut out = String::new();
    out.push_str(&line(header.to_vec()));
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    for row in &rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// Feature, n1, n0, delta-SR.
pub fn render_delta_table(stats: &[FeatureStats]) -> String {
    let rows = stats
        .iter()
        .map(|s| vec![s.feature_id.clone(), s.n1.to_string(), s.n0.to_string(), delta(s)])
        .collect();
    render(&["feature_id", "n1", "n0", "delta_sr"], rows)
}

/// Adds precision, lift and support to the delta-SR table.
pub fn render_extended_table(stats: &[FeatureStats]) -> String {
    let rows = stats
        .iter()
        .map(|s| {
            vec![
                s.feature_id.clone(),
                s.n1.to_string(),
                s.n0.to_string(),
                fmt3(s.precision),
                delta(s),
                fmt3(s.lift),
                fmt3(s.support),
            ]
        })
        .collect();
    render(&["feature_id", "n1", "n0", "precision", "delta_sr", "lift", "support"], rows)
}

pub fn render_comparison(report: &ComparisonReport) -> String {
    let (a, b) = (&report.a, &report.b);
    let rows = vec![
        vec![format!("mean delta_sr (top-{})", a.top_k), fmt3(a.mean_delta_sr), fmt3(b.mean_delta_sr)],
        vec!["median delta_sr".into(), fmt3(a.median_delta_sr), fmt3(b.median_delta_sr)],
        vec!["total features".into(), a.feature_count.to_string(), b.feature_count.to_string()],
        vec!["total cost (USD)".into(), format!("{:.2}", a.cost), format!("{:.2}", b.cost)],
    ];
    let mut out = render(&["metric", &a.label, &b.label], rows);
    let _ = writeln!(out, "\nmean uplift      {:+.1}%", 100.0 * report.mean_uplift());
    let _ = writeln!(out, "median uplift    {:+.1}%", 100.0 * report.median_uplift());
    let _ = writeln!(out, "count reduction  {:.1}%", 100.0 * report.count_reduction());
    let _ = writeln!(out, "cost reduction   {:.1}%", 100.0 * report.cost_reduction());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{extended_stats, write_stats_csv, PopulationCounts};

    fn rows() -> Vec<FeatureStats> {
        let pop = PopulationCounts::new(400, 600).unwrap();
        [("f1", 82, 37), ("f10", 116, 97), ("rare", 40, 59)]
            .iter()
            .map(|(id, a, b)| extended_stats(id, *a, *b, pop).unwrap())
            .collect()
    }

    #[test]
    fn tables_show_three_decimals() {
        let text = render_extended_table(&rows());
        let f1 = text.lines().find(|l| l.starts_with("f1 ")).unwrap();
        let cells: Vec<&str> = f1.split_whitespace().collect();
        assert_eq!(cells, vec!["f1", "82", "37", "0.689", "0.328", "1.723", "0.119"]);
        assert!(render_delta_table(&rows()).contains("0.184"));
    }

    #[test]
    fn empty_stats_render_header_only() {
        let text = render_delta_table(&[]);
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn ranking_applies_support_filter() {
        let r = ranked(&rows(), 100, 10);
        assert_eq!(r.iter().map(|s| s.feature_id.as_str()).collect::<Vec<_>>(), vec!["f1", "f10"]);
    }

    #[test]
    fn load_json_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("s.json");
        let csv = dir.path().join("s.csv");
        fs::write(&json, serde_json::to_vec(&rows()).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_stats_csv(&mut buf, &rows()).unwrap();
        fs::write(&csv, buf).unwrap();
        assert_eq!(load_stats(&json).unwrap(), rows());
        assert_eq!(load_stats(&csv).unwrap(), rows());
        fs::write(&json, "[{\"feature_id\": 3}]").unwrap();
        assert!(matches!(load_stats(&json), Err(Error::Parse(_))));
        fs::write(&csv, "feature_id,n1\nx,1\n").unwrap();
        assert!(matches!(load_stats(&csv), Err(Error::Parse(_))));
    }
}
