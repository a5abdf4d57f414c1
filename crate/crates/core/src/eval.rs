//! Detection scoring: one-to-one pore matching, true/false detection rates,
//! threshold sweeps and report files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::{Grid, PoreSet};
use crate::error::{Error, Result};
use crate::postprocess::{max_filter, DetectConfig};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub detected: usize,
    pub truth: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
}

impl MatchResult {
    pub fn detected_count(&self) -> usize {
        self.pairs.len() + self.unmatched_detections.len()
    }

    pub fn truth_count(&self) -> usize {
        self.pairs.len() + self.unmatched_truth.len()
    }
}

/// Greedy one-to-one matching. Candidate pairs closer than `radius` are
/// accepted by ascending distance, ties by `(truth, detected)` index.
pub fn match_pores(detected: &PoreSet, truth: &PoreSet, radius: f64) -> Result<MatchResult> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("match radius {radius} must be positive")));
    }
    let cell = |r: f64, c: f64| ((r / radius).floor() as i64, (c / radius).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (t, p) in truth.iter().enumerate() {
        buckets.entry(cell(p.row, p.col)).or_default().push(t);
    }
    let mut candidates = Vec::new();
    for (d, p) in detected.iter().enumerate() {
        let (cr, cc) = cell(p.row, p.col);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let Some(ts) = buckets.get(&(cr + dr, cc + dc)) else {
                    continue;
                };
                for &t in ts {
                    let distance = p.distance(&truth.points[t]);
                    if distance < radius {
                        candidates.push(MatchPair {
                            detected: d,
                            truth: t,
                            distance,
                        });
                    }
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.truth.cmp(&b.truth))
            .then(a.detected.cmp(&b.detected))
    });
    let mut det_used = vec![false; detected.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if !det_used[c.detected] && !truth_used[c.truth] {
            det_used[c.detected] = true;
            truth_used[c.truth] = true;
            pairs.push(c);
        }
    }
    let unused = |used: &[bool]| -> Vec<usize> {
        used.iter().enumerate().filter(|(_, u)| !**u).map(|(i, _)| i).collect()
    };
    Ok(MatchResult {
        unmatched_detections: unused(&det_used),
        unmatched_truth: unused(&truth_used),
        pairs,
    })
}

/// Detection counts and the rates derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub true_detections: usize,
    pub false_detections: usize,
    pub truth_total: usize,
}

impl Counts {
    pub fn detected(&self) -> usize {
        self.true_detections + self.false_detections
    }

    /// True detection rate; `None` when there is no ground truth.
    pub fn true_rate(&self) -> Option<f64> {
        (self.truth_total > 0).then(|| self.true_detections as f64 / self.truth_total as f64)
    }

    /// False detection rate; 0 when nothing was detected.
    pub fn false_rate(&self) -> f64 {
        match self.detected() {
            0 => 0.0,
            n => self.false_detections as f64 / n as f64,
        }
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            true_detections: self.true_detections + o.true_detections,
            false_detections: self.false_detections + o.false_detections,
            truth_total: self.truth_total + o.truth_total,
        }
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub counts: Counts,
    pub true_rate: f64,
    pub false_rate: f64,
}

/// Rates from a matching. Empty ground truth is an error since the true
/// rate is undefined; use [`Counts::false_rate`] directly in that case.
pub fn compute_metrics(m: &MatchResult) -> Result<Metrics> {
    metrics_from_counts(counts_of(m))
}

pub fn counts_of(m: &MatchResult) -> Counts {
    Counts {
        true_detections: m.pairs.len(),
        false_detections: m.unmatched_detections.len(),
        truth_total: m.truth_count(),
    }
}

pub fn metrics_from_counts(counts: Counts) -> Result<Metrics> {
    let true_rate = counts.true_rate().ok_or_else(|| {
        Error::input(format!(
            "true detection rate undefined without ground truth (false rate {})",
            counts.false_rate()
        ))
    })?;
    Ok(Metrics {
        counts,
        true_rate,
        false_rate: counts.false_rate(),
    })
}

/// Per-image rates averaged with equal weight.
pub fn macro_average(per_image: &[Metrics]) -> Option<(f64, f64)> {
    if per_image.is_empty() {
        return None;
    }
    let n = per_image.len() as f64;
    Some((
        per_image.iter().map(|m| m.true_rate).sum::<f64>() / n,
        per_image.iter().map(|m| m.false_rate).sum::<f64>() / n,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub threshold: Real,
    pub counts: Counts,
    pub true_rate: f64,
    pub false_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub points: Vec<SweepPoint>,
}

impl Sweep {
    /// Highest true rate among points with false rate `<= target`; ties go
    /// to the larger threshold.
    pub fn operating_point(&self, target_false_rate: f64) -> Option<SweepPoint> {
        self.points
            .iter()
            .filter(|p| p.false_rate <= target_false_rate)
            .max_by(|a, b| {
                a.true_rate
                    .total_cmp(&b.true_rate)
                    .then(a.threshold.total_cmp(&b.threshold))
            })
            .copied()
    }

    /// Largest threshold whose false rate is `<= target`.
    pub fn largest_threshold_within(&self, target_false_rate: f64) -> Option<SweepPoint> {
        self.points
            .iter()
            .filter(|p| p.false_rate <= target_false_rate)
            .max_by(|a, b| a.threshold.total_cmp(&b.threshold))
            .copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("th,RT,RF\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{:.2},{:.2}",
                p.threshold,
                100.0 * p.true_rate,
                100.0 * p.false_rate
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `n` evenly spaced thresholds from `lo` to `hi` inclusive.
pub fn linear_grid(lo: Real, hi: Real, n: usize) -> Vec<Real> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as Real / (n - 1) as Real)
            .collect(),
    }
}

/// Local maxima of a map with their values, in raster order.
fn local_maxima(map: &Grid, window: usize) -> Result<Vec<(usize, usize, Real)>> {
    let maxed = max_filter(map, window)?;
    let (h, w) = map.dims();
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let v = map.get(i, j);
            if v == maxed.get(i, j) {
                out.push((i, j, v));
            }
        }
    }
    Ok(out)
}

/// Pooled (micro-averaged) metrics over several images at each threshold.
/// Detection follows [`crate::postprocess::detect_pores`] without dedupe.
pub fn sweep_threshold_multi(
    items: &[(&Grid, &PoreSet)],
    radius: f64,
    grid: &[Real],
    window: usize,
) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(Error::input("threshold grid is empty"));
    }
    DetectConfig {
        threshold: 0.0,
        window,
        dedupe: false,
    }
    .validate()?;
    let maxima: Vec<_> = items
        .iter()
        .map(|(m, _)| local_maxima(m, window))
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(grid.len());
    for &th in grid {
        let mut counts = Counts::default();
        for ((_, truth), peaks) in items.iter().zip(&maxima) {
            let det: PoreSet = peaks
                .iter()
                .filter(|p| p.2 > th)
                .map(|&(i, j, _)| crate::data::Pore::new(i as f64, j as f64))
                .collect();
            counts = counts + counts_of(&match_pores(&det, truth, radius)?);
        }
        points.push(SweepPoint {
            threshold: th,
            counts,
            true_rate: counts.true_rate().unwrap_or(0.0),
            false_rate: counts.false_rate(),
        });
    }
    Ok(Sweep { points })
}

pub fn sweep_threshold(map: &Grid, truth: &PoreSet, radius: f64, grid: &[Real]) -> Result<Sweep> {
    sweep_threshold_multi(&[(map, truth)], radius, grid, crate::postprocess::DETECT_WINDOW)
}

/// One row of a per-image report.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageReport {
    pub image: String,
    pub counts: Counts,
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "NA".into())
}

/// `image,truth_count,detected,true,false,RT,RF` with percentages, followed
/// by `micro` (pooled counts) and `macro` (mean of per-image rates) rows.
pub fn report_csv(rows: &[ImageReport]) -> String {
    let mut out = String::from("image,truth_count,detected,true,false,RT,RF\n");
    for r in rows {
        let c = r.counts;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.image,
            c.truth_total,
            c.detected(),
            c.true_detections,
            c.false_detections,
            pct(c.true_rate()),
            pct(Some(c.false_rate()))
        );
    }
    let total: Counts = rows.iter().map(|r| r.counts).sum();
    let _ = writeln!(
        out,
        "micro,{},{},{},{},{},{}",
        total.truth_total,
        total.detected(),
        total.true_detections,
        total.false_detections,
        pct(total.true_rate()),
        pct(Some(total.false_rate()))
    );
    let per: Vec<Metrics> = rows
        .iter()
        .filter_map(|r| metrics_from_counts(r.counts).ok())
        .collect();
    let (rt, rf) = match macro_average(&per) {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    let _ = writeln!(out, "macro,,,,,{},{}", pct(rt), pct(rf));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Pore;
    use crate::postprocess::detect_pores;
    use proptest::prelude::*;

    fn set(pts: &[(f64, f64)]) -> PoreSet {
        pts.iter().map(|&(r, c)| Pore::new(r, c)).collect()
    }

    #[test]
    fn perfect_detection() {
        let t = set(&[(1.0, 1.0), (10.0, 10.0), (20.0, 5.0)]);
        let m = match_pores(&t, &t, 3.0).unwrap();
        assert_eq!(m.pairs.len(), 3);
        assert!(m.unmatched_detections.is_empty() && m.unmatched_truth.is_empty());
        let x = compute_metrics(&m).unwrap();
        assert_eq!((x.true_rate, x.false_rate), (1.0, 0.0));
    }

    #[test]
    fn three_truths_four_detections() {
        let t = set(&[(10.0, 10.0), (10.0, 30.0), (30.0, 10.0)]);
        let d = set(&[(11.0, 10.0), (10.0, 31.0), (30.0, 9.0), (50.0, 50.0)]);
        let x = compute_metrics(&match_pores(&d, &t, 3.0).unwrap()).unwrap();
        assert_eq!(x.true_rate, 1.0);
        assert_eq!(x.false_rate, 0.25);
        assert_eq!(x.counts.false_detections, 1);
    }

    #[test]
    fn tie_goes_to_lower_truth_index() {
        let t = set(&[(0.0, 0.0), (0.0, 4.0)]);
        let d = set(&[(0.0, 2.0)]);
        let m = match_pores(&d, &t, 3.0).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].truth, 0);
        assert_eq!(m.unmatched_truth, vec![1]);
    }

    #[test]
    fn boundary_distance_excluded() {
        let t = set(&[(5.0, 5.0)]);
        let d = set(&[(5.0, 8.0)]);
        let m = match_pores(&d, &t, 3.0).unwrap();
        assert!(m.pairs.is_empty());
        let d = set(&[(5.0, 7.999)]);
        assert_eq!(match_pores(&d, &t, 3.0).unwrap().pairs.len(), 1);
    }

    #[test]
    fn one_to_one() {
        let t = set(&[(5.0, 5.0)]);
        let d = set(&[(5.0, 6.0), (5.0, 5.5), (6.0, 5.0)]);
        let m = match_pores(&d, &t, 3.0).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].detected, 1);
        let x = compute_metrics(&m).unwrap();
        assert_eq!(x.true_rate, 1.0);
        assert!((x.false_rate - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cases() {
        let t = set(&[(1.0, 1.0), (2.0, 9.0)]);
        let x = compute_metrics(&match_pores(&PoreSet::default(), &t, 2.0).unwrap()).unwrap();
        assert_eq!((x.true_rate, x.false_rate), (0.0, 0.0));
        let m = match_pores(&t, &PoreSet::default(), 2.0).unwrap();
        assert!(compute_metrics(&m).is_err());
        assert_eq!(counts_of(&m).false_rate(), 1.0);
        assert!(match_pores(&t, &t, 0.0).is_err());
    }

    #[test]
    fn sweep_against_brute_force() {
        let mut g = Grid::new(30, 30, 0.0);
        let spikes = [(5, 5, 0.9), (5, 20, 0.6), (20, 5, 0.3), (22, 22, 0.75)];
        for &(i, j, v) in &spikes {
            g.set(i, j, v);
        }
        let truth = set(&[(5.0, 6.0), (20.0, 5.0), (12.0, 12.0)]);
        let ths = linear_grid(0.0, 1.0, 11);
        let s = sweep_threshold(&g, &truth, 3.0, &ths).unwrap();
        for p in &s.points {
            let det = detect_pores(&g, &DetectConfig::new(p.threshold)).unwrap();
            let c = counts_of(&match_pores(&det, &truth, 3.0).unwrap());
            assert_eq!(p.counts, c);
        }
        assert_eq!(s.points.last().unwrap().counts.detected(), 0);
        for w in s.points.windows(2) {
            assert!(w[1].counts.detected() <= w[0].counts.detected());
        }
        // th 0.5 keeps spikes 0.9/0.6/0.75 → 1 true of 3, 2 false
        let p = s.points[5];
        assert_eq!(p.counts.true_detections, 1);
        assert_eq!(p.counts.false_detections, 2);
        assert!(sweep_threshold(&g, &truth, 3.0, &[]).is_err());
    }

    #[test]
    fn operating_point_selection() {
        let mk = |th, rt, rf| SweepPoint {
            threshold: th,
            counts: Counts::default(),
            true_rate: rt,
            false_rate: rf,
        };
        let s = Sweep {
            points: vec![mk(0.1, 0.99, 0.3), mk(0.2, 0.9, 0.08), mk(0.3, 0.9, 0.05), mk(0.4, 0.7, 0.0)],
        };
        assert_eq!(s.operating_point(0.1).unwrap().threshold, 0.3);
        assert_eq!(s.largest_threshold_within(0.1).unwrap().threshold, 0.4);
        assert!(s.operating_point(-1.0).is_none());
        assert!(s.to_csv().starts_with("th,RT,RF\n0.1,99.00,30.00\n"));
    }

    #[test]
    fn report_rows() {
        let rows = vec![
            ImageReport {
                image: "a".into(),
                counts: Counts { true_detections: 3, false_detections: 1, truth_total: 3 },
            },
            ImageReport {
                image: "b".into(),
                counts: Counts { true_detections: 1, false_detections: 0, truth_total: 2 },
            },
        ];
        let csv = report_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "a,3,4,3,1,100.00,25.00");
        assert_eq!(lines[3], "micro,5,5,4,1,80.00,20.00");
        assert_eq!(lines[4], "macro,,,,,75.00,12.50");
    }

    fn points() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0f64..40.0, 0.0f64..40.0), 0..25)
    }

    proptest! {
        #[test]
        fn matching_invariants(d in points(), t in points(), radius in 0.5f64..6.0) {
            let (d, t) = (set(&d), set(&t));
            let m = match_pores(&d, &t, radius).unwrap();
            prop_assert!(m.pairs.len() <= d.len().min(t.len()));
            let mut dd: Vec<usize> = m.pairs.iter().map(|p| p.detected).collect();
            let mut tt: Vec<usize> = m.pairs.iter().map(|p| p.truth).collect();
            dd.sort_unstable(); dd.dedup();
            tt.sort_unstable(); tt.dedup();
            prop_assert_eq!(dd.len(), m.pairs.len());
            prop_assert_eq!(tt.len(), m.pairs.len());
            prop_assert!(m.pairs.iter().all(|p| p.distance < radius));
            prop_assert_eq!(m.detected_count(), d.len());
            prop_assert_eq!(m.truth_count(), t.len());
            let c = counts_of(&m);
            prop_assert!((0.0..=1.0).contains(&c.false_rate()));
            if let Some(rt) = c.true_rate() {
                prop_assert!((0.0..=1.0).contains(&rt));
            }
        }

        #[test]
        fn self_match_is_perfect(t in points(), radius in 0.1f64..6.0) {
            let t = set(&t);
            prop_assume!(!t.is_empty());
            let mut sorted = t.points.clone();
            sorted.sort_by(|a, b| a.row.total_cmp(&b.row).then(a.col.total_cmp(&b.col)));
            sorted.dedup();
            let t = PoreSet::new(sorted);
            let x = compute_metrics(&match_pores(&t, &t, radius).unwrap()).unwrap();
            prop_assert_eq!(x.true_rate, 1.0);
            prop_assert_eq!(x.false_rate, 0.0);
        }
    }
}
