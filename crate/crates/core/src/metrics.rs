//! Deterministic feature statistics: success-rate delta, precision, lift,
//! support, the support filter, ranking and condition comparison.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AssignmentMatrix, Dataset, FeatureSpec, FeatureStats, Outcome};

pub use crate::model::PopulationCounts;

/// Default minimum n1+n0 for a feature to be ranked (10% of 1,000).
pub const DEFAULT_MIN_SUPPORT: u64 = 100;

/// Worst-case binomial standard error at the default support threshold.
pub const SUPPORT_FILTER_MAX_SE: f64 = 0.05;

/// max over p of sqrt(p(1-p)/n), attained at p = 1/2.
pub fn max_standard_error(n: u64) -> f64 {
    (0.25 / n as f64).sqrt()
}

/// (n1, n0): successes and failures among the assigned entities.
pub fn count_feature(assignment: &BTreeSet<String>, dataset: &Dataset) -> Result<(u64, u64)> {
    let (mut n1, mut n0) = (0, 0);
    for id in assignment {
        match dataset.outcome_of(id) {
            Some(Outcome::Success) => n1 += 1,
            Some(Outcome::Failure) => n0 += 1,
            None => return Err(Error::UnknownEntityId(id.clone())),
        }
    }
    Ok((n1, n0))
}

fn check_counts(n1: u64, n0: u64, pop: PopulationCounts) -> Result<()> {
    if n1 > pop.successes || n0 > pop.failures {
        return Err(Error::CountsExceedPopulation {
            n1,
            n0,
            big_n1: pop.successes,
            big_n0: pop.failures,
        });
    }
    Ok(())
}

/// P(success | feature present) - P(success | feature absent).
///
/// Undefined when the feature is present in no entity or in every entity.
pub fn delta_sr(n1: u64, n0: u64, pop: PopulationCounts) -> Result<f64> {
    check_counts(n1, n0, pop)?;
    if n1 + n0 == 0 {
        return Err(Error::ZeroSupport(format!("n1={n1}, n0={n0}")));
    }
    let (rest1, rest0) = (pop.successes - n1, pop.failures - n0);
    if rest1 + rest0 == 0 {
        return Err(Error::FullSupport(format!("n1={n1}, n0={n0}")));
    }
    let present = n1 as f64 / (n1 + n0) as f64;
    let absent = rest1 as f64 / (rest1 + rest0) as f64;
    Ok(present - absent)
}

/// Precision, lift, support and (when defined) delta-SR for one feature.
pub fn extended_stats(feature_id: &str, n1: u64, n0: u64, pop: PopulationCounts) -> Result<FeatureStats> {
    check_counts(n1, n0, pop)?;
    if n1 + n0 == 0 {
        return Err(Error::ZeroSupport(feature_id.to_string()));
    }
    let base_rate = pop.base_rate();
    let precision = n1 as f64 / (n1 + n0) as f64;
    Ok(FeatureStats {
        feature_id: feature_id.to_string(),
        n1,
        n0,
        delta_sr: delta_sr(n1, n0, pop).ok(),
        precision,
        lift: if base_rate > 0.0 { precision / base_rate } else { 0.0 },
        support: (n1 + n0) as f64 / pop.total() as f64,
        base_rate,
    })
}

/// Row for a feature no entity exhibits.
pub fn zero_support_stats(feature_id: &str, pop: PopulationCounts) -> FeatureStats {
    FeatureStats {
        feature_id: feature_id.to_string(),
        n1: 0,
        n0: 0,
        delta_sr: None,
        precision: 0.0,
        lift: 0.0,
        support: 0.0,
        base_rate: pop.base_rate(),
    }
}

/// Stats for every feature in `features`, in feature order.
pub fn compute_stats(features: &[FeatureSpec], matrix: &AssignmentMatrix, dataset: &Dataset) -> Result<Vec<FeatureStats>> {
    let pop = dataset.counts();
    features
        .iter()
        .map(|f| {
            let set = matrix
                .get(&f.feature_id)
                .ok_or_else(|| Error::UnknownFeatureId(f.feature_id.clone()))?;
            let (n1, n0) = count_feature(set, dataset)?;
            if n1 + n0 == 0 {
                Ok(zero_support_stats(&f.feature_id, pop))
            } else {
                extended_stats(&f.feature_id, n1, n0, pop)
            }
        })
        .collect()
}

/// Keeps features with n1 + n0 >= `min_count`, preserving order.
pub fn filter_by_support(stats: &[FeatureStats], min_count: u64) -> Vec<FeatureStats> {
    stats.iter().filter(|s| s.count() >= min_count).cloned().collect()
}

fn rank_order(a: &FeatureStats, b: &FeatureStats) -> Ordering {
    let (da, db) = (a.delta_sr.unwrap_or(f64::NEG_INFINITY), b.delta_sr.unwrap_or(f64::NEG_INFINITY));
    db.total_cmp(&da)
        .then_with(|| b.support.total_cmp(&a.support))
        .then_with(|| a.feature_id.cmp(&b.feature_id))
}

/// Top `k` by delta-SR (descending); ties go to larger support, then to the
/// lexicographically smaller feature_id. Features with undefined delta-SR
/// are not ranked.
pub fn rank_top_k(stats: &[FeatureStats], k: usize) -> Vec<FeatureStats> {
    let mut ranked: Vec<FeatureStats> = stats.iter().filter(|s| s.delta_sr.is_some()).cloned().collect();
    ranked.sort_by(rank_order);
    ranked.truncate(k);
    ranked
}

/// Mean and median of a list of values.
pub fn mean_median(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    Ok((mean, median))
}

/// Mean and median delta-SR over a ranked list.
pub fn summarize(ranked: &[FeatureStats]) -> Result<(f64, f64)> {
    let values: Vec<f64> = ranked.iter().filter_map(|s| s.delta_sr).collect();
    if values.len() != ranked.len() {
        return Err(Error::InvalidArgument("summarize needs defined delta_sr on every row".into()));
    }
    mean_median(&values)
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub mean_delta_sr: f64,
    pub median_delta_sr: f64,
    pub feature_count: u64,
    pub cost: f64,
    #[serde(default)]
    pub top_k: usize,
    #[serde(default)]
    pub min_support_count: u64,
    #[serde(default)]
    pub population: String,
    #[serde(default)]
    pub freeze_checksum: String,
}

/// Two run summaries; relative deltas are always derived, never stored.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ComparisonReport {
    pub a: RunSummary,
    pub b: RunSummary,
}

impl ComparisonReport {
    /// a.mean / b.mean - 1
    pub fn mean_uplift(&self) -> f64 {
        self.a.mean_delta_sr / self.b.mean_delta_sr - 1.0
    }

    pub fn median_uplift(&self) -> f64 {
        self.a.median_delta_sr / self.b.median_delta_sr - 1.0
    }

    /// 1 - a.count / b.count
    pub fn count_reduction(&self) -> f64 {
        1.0 - self.a.feature_count as f64 / self.b.feature_count as f64
    }

    /// 1 - a.cost / b.cost
    pub fn cost_reduction(&self) -> f64 {
        1.0 - self.a.cost / self.b.cost
    }
}

impl Serialize for ComparisonReport {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct View<'a> {
            a: &'a RunSummary,
            b: &'a RunSummary,
            mean_uplift: f64,
            median_uplift: f64,
            count_reduction: f64,
            cost_reduction: f64,
        }
        View {
            a: &self.a,
            b: &self.b,
            mean_uplift: self.mean_uplift(),
            median_uplift: self.median_uplift(),
            count_reduction: self.count_reduction(),
            cost_reduction: self.cost_reduction(),
        }
        .serialize(serializer)
    }
}

/// Compares run `a` against baseline `b`.
pub fn compare_conditions(a: &RunSummary, b: &RunSummary) -> Result<ComparisonReport> {
    for (what, value) in [
        ("baseline mean delta_sr", b.mean_delta_sr),
        ("baseline median delta_sr", b.median_delta_sr),
        ("baseline feature count", b.feature_count as f64),
        ("baseline cost", b.cost),
    ] {
        if value == 0.0 {
            return Err(Error::DivisionByZero(what.to_string()));
        }
    }
    Ok(ComparisonReport {
        a: a.clone(),
        b: b.clone(),
    })
}

const CSV_HEADER: [&str; 8] = ["feature_id", "n1", "n0", "delta_sr", "precision", "lift", "support", "base_rate"];

/// CSV export. Floats use shortest round-trip formatting; an undefined
/// delta_sr is an empty cell.
pub fn write_stats_csv<W: Write>(writer: W, stats: &[FeatureStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for s in stats {
        w.write_record([
            s.feature_id.clone(),
            s.n1.to_string(),
            s.n0.to_string(),
            s.delta_sr.map(|d| d.to_string()).unwrap_or_default(),
            s.precision.to_string(),
            s.lift.to_string(),
            s.support.to_string(),
            s.base_rate.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_stats_csv<R: Read>(reader: R) -> Result<Vec<FeatureStats>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::parse(Some(1), format!("unexpected stats header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = Some(i + 2);
        let num = |idx: usize| -> Result<f64> {
            row[idx]
                .parse::<f64>()
                .map_err(|e| Error::parse(line, format!("column {}: {e}", CSV_HEADER[idx])))
        };
        let int = |idx: usize| -> Result<u64> {
            row[idx]
                .parse::<u64>()
                .map_err(|e| Error::parse(line, format!("column {}: {e}", CSV_HEADER[idx])))
        };
        out.push(FeatureStats {
            feature_id: row[0].to_string(),
            n1: int(1)?,
            n0: int(2)?,
            delta_sr: if row[3].is_empty() { None } else { Some(num(3)?) },
            precision: num(4)?,
            lift: num(5)?,
            support: num(6)?,
            base_rate: num(7)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttrValue, Attributes, DatasetRole, EntityRecord};
    use proptest::prelude::*;

    fn pop(n1: u64, n0: u64) -> PopulationCounts {
        PopulationCounts::new(n1, n0).unwrap()
    }

    fn stat(id: &str, n1: u64, n0: u64) -> FeatureStats {
        extended_stats(id, n1, n0, pop(400, 600)).unwrap()
    }

    /// Direct enumeration: label vector, subset mask, two conditional
    /// frequencies counted element by element.
    fn brute_delta(labels: &[bool], mask: u32) -> Option<f64> {
        let (mut in_s, mut in_n, mut out_s, mut out_n) = (0u32, 0u32, 0u32, 0u32);
        for (i, &y) in labels.iter().enumerate() {
            if mask >> i & 1 == 1 {
                in_n += 1;
                in_s += y as u32;
            } else {
                out_n += 1;
                out_s += y as u32;
            }
        }
        if in_n == 0 || out_n == 0 {
            return None;
        }
        Some(in_s as f64 / in_n as f64 - out_s as f64 / out_n as f64)
    }

    #[test]
    fn table_rows() {
        assert!((delta_sr(82, 37, pop(400, 600)).unwrap() - 0.328).abs() <= 5e-4);
        assert!((delta_sr(81, 34, pop(400, 600)).unwrap() - 0.344).abs() <= 5e-4);
        assert_eq!(delta_sr(40, 60, pop(400, 600)).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_support() {
        assert!(matches!(delta_sr(0, 0, pop(4, 6)), Err(Error::ZeroSupport(_))));
        assert!(matches!(delta_sr(4, 6, pop(4, 6)), Err(Error::FullSupport(_))));
        assert!(matches!(delta_sr(5, 0, pop(4, 6)), Err(Error::CountsExceedPopulation { .. })));
    }

    #[test]
    fn small_population_matches_enumeration() {
        let labels = [true, true, true, true, false, false, false, false, false, false];
        for mask in 0u32..(1 << labels.len()) {
            let n1 = (0..4).filter(|i| mask >> i & 1 == 1).count() as u64;
            let n0 = (4..10).filter(|i| mask >> i & 1 == 1).count() as u64;
            match (brute_delta(&labels, mask), delta_sr(n1, n0, pop(4, 6))) {
                (Some(b), Ok(d)) => assert!((b - d).abs() <= 1e-12),
                (None, Err(_)) => {}
                other => panic!("mask {mask:b}: {other:?}"),
            }
        }
    }

    #[test]
    fn extended_rows() {
        let s = stat("f1", 82, 37);
        assert!((s.precision - 0.689).abs() <= 5e-4);
        assert!((s.lift - 1.723).abs() <= 5e-4);
        assert!((s.support - 0.119).abs() <= 5e-4);
        let s = stat("f10", 116, 97);
        assert!((s.precision - 0.545).abs() <= 5e-4);
        assert!((s.lift - 1.362).abs() <= 5e-4);
        assert!((s.support - 0.213).abs() <= 5e-4);
        let full = extended_stats("all", 400, 600, pop(400, 600)).unwrap();
        assert_eq!(full.precision, 0.4);
        assert!((full.lift - 1.0).abs() < 1e-15);
        assert_eq!(full.delta_sr, None);
        assert!(matches!(extended_stats("z", 0, 0, pop(400, 600)), Err(Error::ZeroSupport(_))));
    }

    #[test]
    fn support_filter_boundary() {
        let stats = vec![stat("a", 40, 59), stat("b", 40, 60), stat("c", 40, 61), stat("d", 82, 37)];
        let kept: Vec<String> = filter_by_support(&stats, DEFAULT_MIN_SUPPORT)
            .into_iter()
            .map(|s| s.feature_id)
            .collect();
        assert_eq!(kept, vec!["b", "c", "d"]);
        assert_eq!(max_standard_error(100), SUPPORT_FILTER_MAX_SE);
    }

    #[test]
    fn ranking_tie_breaks() {
        let mut a = stat("b_feature", 100, 100);
        let mut b = stat("a_feature", 100, 100);
        let mut c = stat("c_feature", 100, 100);
        a.delta_sr = Some(0.224);
        b.delta_sr = Some(0.224);
        c.delta_sr = Some(0.224);
        c.support = 0.6;
        let top = rank_top_k(&[a, b, c, stat("d", 82, 37)], 10);
        let ids: Vec<&str> = top.iter().map(|s| s.feature_id.as_str()).collect();
        assert_eq!(ids, vec!["d", "c_feature", "a_feature", "b_feature"]);
        assert!(rank_top_k(&top, 0).is_empty());
        let undefined = extended_stats("u", 400, 600, pop(400, 600)).unwrap();
        assert!(rank_top_k(&[undefined], 5).is_empty());
    }

    #[test]
    fn summaries() {
        assert_eq!(mean_median(&[0.3]).unwrap(), (0.3, 0.3));
        let (m, med) = mean_median(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((m, med), (2.5, 2.5));
        assert!(matches!(mean_median(&[]), Err(Error::EmptyInput)));
        assert!(matches!(summarize(&[]), Err(Error::EmptyInput)));
    }

    fn summary(mean: f64, count: u64, cost: f64) -> RunSummary {
        RunSummary {
            label: String::new(),
            mean_delta_sr: mean,
            median_delta_sr: mean,
            feature_count: count,
            cost,
            top_k: 10,
            min_support_count: 100,
            population: String::new(),
            freeze_checksum: String::new(),
        }
    }

    #[test]
    fn comparison() {
        let r = compare_conditions(&summary(0.250, 157, 8.54), &summary(0.217, 222, 18.29)).unwrap();
        assert!((r.mean_uplift() - 0.152).abs() <= 0.005);
        assert!((r.count_reduction() - 0.29).abs() <= 0.005);
        assert!((r.cost_reduction() - 0.533).abs() <= 0.001);
        let same = compare_conditions(&summary(0.2, 10, 1.0), &summary(0.2, 10, 1.0)).unwrap();
        assert_eq!((same.mean_uplift(), same.count_reduction(), same.cost_reduction()), (0.0, 0.0, 0.0));
        assert!(matches!(
            compare_conditions(&summary(0.2, 10, 1.0), &summary(0.2, 10, 0.0)),
            Err(Error::DivisionByZero(_))
        ));
        let json = serde_json::to_value(&r).unwrap();
        assert!((json["count_reduction"].as_f64().unwrap() - r.count_reduction()).abs() < 1e-15);
        let back: ComparisonReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn count_feature_against_scan() {
        let records: Vec<EntityRecord> = (0..50)
            .map(|i| {
                let o = if i % 3 == 0 { Outcome::Success } else { Outcome::Failure };
                EntityRecord::new(format!("e{i}"), Attributes::from([("x".into(), AttrValue::int(i))]), o)
            })
            .collect();
        let ds = Dataset::new(records, DatasetRole::Discovery).unwrap();
        let set: BTreeSet<String> = (0..50).filter(|i| i % 4 != 1).map(|i| format!("e{i}")).collect();
        let (n1, n0) = count_feature(&set, &ds).unwrap();
        let scan1 = ds.records().iter().filter(|r| set.contains(&r.entity_id) && r.outcome == Some(Outcome::Success)).count();
        let scan0 = ds.records().iter().filter(|r| set.contains(&r.entity_id) && r.outcome == Some(Outcome::Failure)).count();
        assert_eq!((n1, n0), (scan1 as u64, scan0 as u64));
        assert_eq!(count_feature(&BTreeSet::new(), &ds).unwrap(), (0, 0));
        assert!(matches!(
            count_feature(&BTreeSet::from(["nope".to_string()]), &ds),
            Err(Error::UnknownEntityId(_))
        ));
    }

    proptest! {
        #[test]
        fn complement_antisymmetry(big1 in 1u64..500, big0 in 1u64..500, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let n1 = (a * big1 as f64) as u64;
            let n0 = (b * big0 as f64) as u64;
            let p = pop(big1, big0);
            if let (Ok(d), Ok(c)) = (delta_sr(n1, n0, p), delta_sr(big1 - n1, big0 - n0, p)) {
                prop_assert!((d + c).abs() <= 1e-12);
                prop_assert!((-1.0..=1.0).contains(&d));
            }
        }

        #[test]
        fn base_rate_null(k1 in 1u64..30, k0 in 1u64..30, scale in 2u64..20, part in 1u64..20) {
            let part = part.min(scale - 1);
            let p = pop(k1 * scale, k0 * scale);
            let d = delta_sr(k1 * part, k0 * part, p).unwrap();
            prop_assert!(d.abs() <= 1e-12);
        }

        #[test]
        fn ranges(big1 in 1u64..300, big0 in 0u64..300, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let n1 = ((a * big1 as f64).ceil() as u64).clamp(1, big1);
            let n0 = (b * big0 as f64) as u64;
            let s = extended_stats("f", n1, n0, pop(big1, big0)).unwrap();
            prop_assert!((0.0..=1.0).contains(&s.precision));
            prop_assert!(s.support > 0.0 && s.support <= 1.0);
            prop_assert!(s.lift >= 0.0);
        }

        #[test]
        fn top_k_is_sorted_prefix(vals in proptest::collection::vec((0u64..400, 0u64..600), 0..40), k in 0usize..15) {
            let stats: Vec<FeatureStats> = vals
                .iter()
                .enumerate()
                .filter(|(_, (a, b))| a + b > 0)
                .map(|(i, (a, b))| extended_stats(&format!("f{i:02}"), *a, *b, pop(400, 600)).unwrap())
                .collect();
            let top = rank_top_k(&stats, k);
            let mut full: Vec<FeatureStats> = stats.iter().filter(|s| s.delta_sr.is_some()).cloned().collect();
            full.sort_by(|x, y| y.delta_sr.partial_cmp(&x.delta_sr).unwrap()
                .then(y.support.partial_cmp(&x.support).unwrap())
                .then(x.feature_id.cmp(&y.feature_id)));
            full.truncate(k);
            prop_assert_eq!(top, full);
        }

        #[test]
        fn csv_round_trip(vals in proptest::collection::vec((1u64..400, 0u64..600), 0..20)) {
            let stats: Vec<FeatureStats> = vals
                .iter()
                .enumerate()
                .map(|(i, (a, b))| extended_stats(&format!("feat,{i}"), *a, *b, pop(400, 600)).unwrap())
                .collect();
            let mut buf = Vec::new();
            write_stats_csv(&mut buf, &stats).unwrap();
            prop_assert_eq!(read_stats_csv(buf.as_slice()).unwrap(), stats);
        }
    }
}
