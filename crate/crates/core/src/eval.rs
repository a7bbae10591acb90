//! Stay-level scoring of flags and threshold sweeps.
//!
//! A stay is predicted positive at threshold ρ when its flag fires during the
//! observation window. Sweeping ρ from +∞ down through every observed risk
//! value traces the attainable ROC and precision-recall curves. ROC area uses
//! the trapezoid rule, precision-recall area the average-precision step sum.

use std::io::Write;

use crate::data::Trajectory;
use crate::error::{invalid, Result};
use crate::flag::{criterion_score, Criterion, RiskPath};

/// In-ICU death within the (already truncated) observation window.
pub fn label_of(traj: &Trajectory) -> bool {
    traj.event
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl CurvePoint {
    pub fn precision(&self) -> Option<f64> {
        let flagged = self.tp + self.fp;
        (flagged > 0).then(|| self.tp as f64 / flagged as f64)
    }

    pub fn recall(&self) -> f64 {
        let pos = self.tp + self.fn_;
        if pos == 0 {
            0.0
        } else {
            self.tp as f64 / pos as f64
        }
    }

    pub fn fpr(&self) -> f64 {
        let neg = self.fp + self.tn;
        if neg == 0 {
            0.0
        } else {
            self.fp as f64 / neg as f64
        }
    }
}

/// Operating points ordered by decreasing threshold, from the all-negative
/// point at +∞ to the all-positive point at −∞.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoints {
    pub points: Vec<CurvePoint>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub auc_roc: f64,
    pub auc_prc: f64,
    pub positive_rate: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Sweeps ρ over `+∞`, every distinct path value in decreasing order, and
/// `−∞`. The `−∞` record is the flag-everyone classifier, which also covers
/// stays too short for any window to fit.
pub fn sweep(paths: &[RiskPath], labels: &[bool], criterion: Criterion) -> Result<CurvePoints> {
    if paths.len() != labels.len() {
        return Err(invalid(format!(
            "{} risk paths but {} labels",
            paths.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;

    let mut scored: Vec<(f64, bool)> = paths
        .iter()
        .zip(labels)
        .map(|(p, &l)| (criterion_score(p, criterion), l))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut thresholds: Vec<f64> = paths
        .iter()
        .flat_map(|p| p.values.iter().copied())
        .filter(|v| v.is_finite())
        .collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    // Just below the smallest value every finite score is flagged, which keeps
    // those stays apart from the ones no window fits.
    if let Some(&lowest) = thresholds.last() {
        thresholds.push(lowest.next_down());
    }

    let record = |threshold: f64, tp: usize, fp: usize| CurvePoint {
        threshold,
        tp,
        fp,
        tn: negatives - fp,
        fn_: positives - tp,
    };
    let mut points = vec![record(f64::INFINITY, 0, 0)];
    let (mut tp, mut fp) = (0, 0);
    let mut next = 0;
    for &rho in &thresholds {
        while next < scored.len() && scored[next].0 > rho {
            if scored[next].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            next += 1;
        }
        let last = points.last().unwrap();
        if (last.tp, last.fp) != (tp, fp) {
            points.push(record(rho, tp, fp));
        }
    }
    let last = points.last().unwrap();
    if (last.tp, last.fp) != (positives, negatives) {
        points.push(record(f64::NEG_INFINITY, positives, negatives));
    }
    Ok(CurvePoints {
        points,
        positives,
        negatives,
    })
}

pub fn auc_roc(curve: &CurvePoints) -> Result<f64> {
    if curve.positives == 0 || curve.negatives == 0 {
        return Err(invalid("ROC area needs at least one positive and one negative stay"));
    }
    let mut area = 0.0;
    for w in curve.points.windows(2) {
        let (x0, y0) = (w[0].fpr(), w[0].recall());
        let (x1, y1) = (w[1].fpr(), w[1].recall());
        area += (x1 - x0) * (y0 + y1) * 0.5;
    }
    Ok(area)
}

/// Average precision: `Σ_k (R_k − R_{k−1})·P_k`.
pub fn auc_prc(curve: &CurvePoints) -> Result<f64> {
    if curve.positives == 0 {
        return Err(invalid("precision-recall area needs at least one positive stay"));
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for p in &curve.points {
        let r = p.recall();
        if r > prev_recall {
            area += (r - prev_recall) * p.precision().unwrap_or(0.0);
        }
        prev_recall = r;
    }
    Ok(area)
}

pub fn summarize(curve: &CurvePoints) -> Result<EvalSummary> {
    let total = curve.positives + curve.negatives;
    Ok(EvalSummary {
        auc_roc: auc_roc(curve)?,
        auc_prc: auc_prc(curve)?,
        positive_rate: curve.positives as f64 / total as f64,
        positives: curve.positives,
        negatives: curve.negatives,
    })
}

pub fn evaluate(paths: &[RiskPath], labels: &[bool], criterion: Criterion) -> Result<(CurvePoints, EvalSummary)> {
    let curve = sweep(paths, labels, criterion)?;
    let summary = summarize(&curve)?;
    Ok((curve, summary))
}

pub fn write_curve<W: Write>(mut out: W, curve: &CurvePoints) -> Result<()> {
    writeln!(out, "threshold,tp,fp,tn,fn,precision,recall,fpr")?;
    for p in &curve.points {
        let precision = p.precision().map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.threshold,
            p.tp,
            p.fp,
            p.tn,
            p.fn_,
            precision,
            p.recall(),
            p.fpr()
        )?;
    }
    Ok(())
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    pub criterion: String,
    pub window_hours: Option<f64>,
    pub auc_roc: f64,
    pub auc_prc: f64,
}

pub fn write_summary<W: Write>(mut out: W, rows: &[SummaryRow]) -> Result<()> {
    writeln!(out, "model,criterion,window_hours,auc_roc,auc_prc")?;
    for r in rows {
        let window = r.window_hours.map(|w| w.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{:.6},{:.6}",
            r.model, r.criterion, window, r.auc_roc, r.auc_prc
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(id: usize, v: f64) -> RiskPath {
        RiskPath::new(id.to_string(), vec![0.0], vec![v], 10.0).unwrap()
    }

    #[test]
    fn sweep_endpoints() {
        let paths: Vec<_> = (0..4).map(|i| constant(i, i as f64)).collect();
        let labels = [false, false, true, true];
        let curve = sweep(&paths, &labels, Criterion::Instant).unwrap();
        let first = curve.points[0];
        assert_eq!((first.tp, first.fp), (0, 0));
        let last = curve.points.last().unwrap();
        assert_eq!((last.tp, last.fp, last.tn, last.fn_), (2, 2, 0, 0));
        for p in &curve.points {
            assert_eq!(p.tp + p.fn_, 2);
        }
    }

    #[test]
    fn perfect_separation() {
        let paths: Vec<_> = (0..6).map(|i| constant(i, i as f64)).collect();
        let labels = [false, false, false, true, true, true];
        let (_, s) = evaluate(&paths, &labels, Criterion::Instant).unwrap();
        assert_eq!(s.auc_roc, 1.0);
        assert_eq!(s.auc_prc, 1.0);
    }

    #[test]
    fn constant_risk_is_uninformative() {
        let paths: Vec<_> = (0..100).map(|i| constant(i, 0.3)).collect();
        let labels: Vec<bool> = (0..100).map(|i| i < 9).collect();
        let (curve, s) = evaluate(&paths, &labels, Criterion::Instant).unwrap();
        assert_eq!(curve.points.len(), 2);
        assert_eq!(s.auc_roc, 0.5);
        assert!((s.auc_prc - 0.09).abs() < 1e-15);
        assert_eq!(s.positive_rate, 0.09);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let paths: Vec<_> = (0..3).map(|i| constant(i, i as f64)).collect();
        let curve = sweep(&paths, &[true, true, true], Criterion::Instant).unwrap();
        assert!(auc_roc(&curve).is_err());
        let curve = sweep(&paths, &[false, false, false], Criterion::Instant).unwrap();
        assert!(auc_roc(&curve).is_err());
        assert!(auc_prc(&curve).is_err());
        assert!(sweep(&paths, &[true], Criterion::Instant).is_err());
    }

    #[test]
    fn summary_csv_layout() {
        let mut buf = Vec::new();
        write_summary(
            &mut buf,
            &[SummaryRow {
                model: "boost".into(),
                criterion: "window".into(),
                window_hours: Some(8.0),
                auc_roc: 0.5,
                auc_prc: 0.25,
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "model,criterion,window_hours,auc_roc,auc_prc\nboost,window,8,0.500000,0.250000\n"
        );
    }
}
