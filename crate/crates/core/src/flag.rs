//! Real-time flags from a risk measure path.
//!
//! Two rules turn a step-function risk path into a single alarm time:
//! the instant rule fires the first time the risk strictly exceeds ρ, the
//! window rule fires once the risk has stayed strictly above ρ for the whole
//! preceding `W` hours. Both are computed exactly from the segment
//! structure, without sampling.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::boost::HazardModel;
use crate::cox::CoxModel;
use crate::data::Trajectory;
use crate::error::{invalid, Result};

/// Right-continuous step function on `[0, end_time)`: `values[k]` holds on
/// `[breakpoints[k], breakpoints[k + 1])`, the last segment ending at `end_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskPath {
    pub stay_id: String,
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub end_time: f64,
}

impl RiskPath {
    pub fn new(stay_id: impl Into<String>, breakpoints: Vec<f64>, values: Vec<f64>, end_time: f64) -> Result<Self> {
        if breakpoints.len() != values.len() || breakpoints.is_empty() {
            return Err(invalid("risk path needs one value per breakpoint"));
        }
        if breakpoints[0] != 0.0 {
            return Err(invalid("risk path must start at 0"));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) || !(*breakpoints.last().unwrap() < end_time) {
            return Err(invalid("risk path breakpoints must ascend strictly below end_time"));
        }
        Ok(RiskPath {
            stay_id: stay_id.into(),
            breakpoints,
            values,
            end_time,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn segment_end(&self, k: usize) -> f64 {
        self.breakpoints.get(k + 1).copied().unwrap_or(self.end_time)
    }

    /// Value at `t` in `[0, end_time)`.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&b| b <= t).saturating_sub(1);
        self.values[k]
    }

    /// `(start, end, value)` per segment.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.len()).map(|k| (self.breakpoints[k], self.segment_end(k), self.values[k]))
    }
}

/// Anything that maps a stay onto a real-time risk path.
pub trait RiskModel {
    fn risk_path(&self, traj: &Trajectory) -> Result<RiskPath>;
}

impl RiskModel for HazardModel {
    /// `λ̂(t, X(t))` with breakpoints at epoch starts and grid points.
    fn risk_path(&self, traj: &Trajectory) -> Result<RiskPath> {
        if traj.arity() != self.arity() {
            return Err(invalid(format!(
                "stay {} has {} features, model expects {}",
                traj.stay_id,
                traj.arity(),
                self.arity()
            )));
        }
        let mut breakpoints = Vec::new();
        let mut values = Vec::new();
        for sub in self.sub_epochs(traj) {
            breakpoints.push(sub.t_start);
            values.push(self.predict_unchecked(sub.t_start, &sub.epoch.query()).exp());
        }
        RiskPath::new(traj.stay_id.clone(), breakpoints, values, traj.end_time)
    }
}

impl RiskModel for CoxModel {
    /// Relative risk `β'x(t)` with breakpoints at epoch starts.
    fn risk_path(&self, traj: &Trajectory) -> Result<RiskPath> {
        if traj.arity() != self.arity() {
            return Err(invalid(format!(
                "stay {} has {} features, model expects {}",
                traj.stay_id,
                traj.arity(),
                self.arity()
            )));
        }
        let breakpoints = traj.epochs.iter().map(|e| e.t_start).collect();
        let values = traj
            .epochs
            .iter()
            .map(|e| e.x.iter().zip(&self.beta).map(|(x, b)| x * b).sum())
            .collect();
        RiskPath::new(traj.stay_id.clone(), breakpoints, values, traj.end_time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    Instant,
    Window { hours: f64 },
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Instant => "instant",
            Criterion::Window { .. } => "window",
        }
    }

    pub fn window_hours(&self) -> Option<f64> {
        match self {
            Criterion::Instant => None,
            Criterion::Window { hours } => Some(*hours),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses `instant` or `window`; the window length is supplied separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriterionKind {
    Instant,
    Window,
}

impl FromStr for CriterionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "instant" => Ok(CriterionKind::Instant),
            "window" => Ok(CriterionKind::Window),
            other => Err(format!("unknown criterion `{other}` (expected instant or window)")),
        }
    }
}

impl CriterionKind {
    pub fn with_window(self, hours: f64) -> Criterion {
        match self {
            CriterionKind::Instant => Criterion::Instant,
            CriterionKind::Window => Criterion::Window { hours },
        }
    }
}

/// Earliest time the path strictly exceeds `rho`.
pub fn flag_instant(path: &RiskPath, rho: f64) -> Option<f64> {
    path.values
        .iter()
        .position(|&v| v > rho)
        .map(|k| path.breakpoints[k])
}

/// Earliest `t >= window` such that the path is strictly above `rho` on all
/// of `[t - window, t)`, with `t <= end_time`.
pub fn flag_window(path: &RiskPath, rho: f64, window: f64) -> Option<f64> {
    let mut run_start: Option<f64> = None;
    for (start, end, value) in path.segments() {
        if value > rho {
            let r = *run_start.get_or_insert(start);
            let t = r + window;
            if t <= end {
                return Some(t);
            }
        } else {
            run_start = None;
        }
    }
    None
}

pub fn flag(path: &RiskPath, rho: f64, criterion: Criterion) -> Option<f64> {
    match criterion {
        Criterion::Instant => flag_instant(path, rho),
        Criterion::Window { hours } => flag_window(path, rho, hours),
    }
}

/// Scalar summary such that the criterion flags the stay at threshold `rho`
/// exactly when `score > rho`. For the instant rule this is the path maximum;
/// for the window rule it is the largest window-minimum over windows that fit
/// inside the stay (−∞ when none does).
pub fn criterion_score(path: &RiskPath, criterion: Criterion) -> f64 {
    match criterion {
        Criterion::Instant => path.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Criterion::Window { hours } => window_score(path, hours),
    }
}

// Only windows starting at a breakpoint need checking: sliding a window's
// start back to the breakpoint at or before it drops segments from the
// window's right end and can only raise its minimum.
fn window_score(path: &RiskPath, window: f64) -> f64 {
    let n = path.len();
    let mut best = f64::NEG_INFINITY;
    let mut deque: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut next = 0;
    for k in 0..n {
        let stop = path.breakpoints[k] + window;
        if stop > path.end_time {
            break;
        }
        while next < n && path.breakpoints[next] < stop {
            while deque.back().is_some_and(|&j| path.values[j] >= path.values[next]) {
                deque.pop_back();
            }
            deque.push_back(next);
            next += 1;
        }
        while deque.front().is_some_and(|&j| j < k) {
            deque.pop_front();
        }
        if let Some(&j) = deque.front() {
            best = best.max(path.values[j]);
        }
    }
    best
}

/// One row of `flags.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlagRecord {
    pub stay_id: String,
    pub criterion: Criterion,
    pub threshold: f64,
    pub flag_time: Option<f64>,
}

pub fn write_flags<W: Write>(mut out: W, records: &[FlagRecord]) -> Result<()> {
    writeln!(out, "stay_id,criterion,threshold,flag_time_hours")?;
    for r in records {
        let time = r.flag_time.map(|t| t.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", r.stay_id, r.criterion, r.threshold, time)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(bps: &[f64], vals: &[f64], end: f64) -> RiskPath {
        RiskPath::new("s", bps.to_vec(), vals.to_vec(), end).unwrap()
    }

    #[test]
    fn instant_examples() {
        let p = path(&[0.0, 4.0], &[0.2, 0.6], 10.0);
        assert_eq!(flag_instant(&p, 0.5), Some(4.0));
        assert_eq!(flag_instant(&p, 0.7), None);
        assert_eq!(flag_instant(&p, 0.6), None);
    }

    #[test]
    fn window_examples() {
        assert_eq!(flag_window(&path(&[0.0], &[0.6], 10.0), 0.5, 8.0), Some(8.0));
        let p = path(&[0.0, 4.0], &[0.2, 0.6], 10.0);
        assert_eq!(flag_window(&p, 0.5, 8.0), None);
        // A run of exactly W hours ending at discharge still counts.
        let p = path(&[0.0, 2.0], &[0.2, 0.6], 10.0);
        assert_eq!(flag_window(&p, 0.5, 8.0), Some(10.0));
        // Run interrupted at 6, restarts at 7 and lasts until 15.
        let p = path(&[0.0, 6.0, 7.0], &[0.9, 0.1, 0.9], 20.0);
        assert_eq!(flag_window(&p, 0.5, 8.0), Some(15.0));
    }

    #[test]
    fn window_run_spanning_segments() {
        let p = path(&[0.0, 3.0, 5.0, 9.0], &[0.1, 0.7, 0.8, 0.9], 14.0);
        assert_eq!(flag_window(&p, 0.5, 8.0), Some(11.0));
        assert_eq!(criterion_score(&p, Criterion::Window { hours: 8.0 }), 0.8);
        assert_eq!(criterion_score(&p, Criterion::Instant), 0.9);
    }

    #[test]
    fn window_longer_than_stay_never_flags() {
        let p = path(&[0.0], &[5.0], 6.0);
        assert_eq!(flag_window(&p, 0.0, 8.0), None);
        assert_eq!(criterion_score(&p, Criterion::Window { hours: 8.0 }), f64::NEG_INFINITY);
    }

    #[test]
    fn value_lookup_is_right_continuous() {
        let p = path(&[0.0, 4.0], &[0.2, 0.6], 10.0);
        assert_eq!(p.value_at(0.0), 0.2);
        assert_eq!(p.value_at(3.999), 0.2);
        assert_eq!(p.value_at(4.0), 0.6);
    }

    #[test]
    fn malformed_paths_rejected() {
        assert!(RiskPath::new("s", vec![1.0], vec![0.0], 2.0).is_err());
        assert!(RiskPath::new("s", vec![0.0, 3.0], vec![0.0], 4.0).is_err());
        assert!(RiskPath::new("s", vec![0.0, 3.0], vec![0.0, 1.0], 3.0).is_err());
    }

    #[test]
    fn flags_csv_layout() {
        let mut buf = Vec::new();
        write_flags(
            &mut buf,
            &[
                FlagRecord {
                    stay_id: "a".into(),
                    criterion: Criterion::Window { hours: 8.0 },
                    threshold: 0.5,
                    flag_time: Some(8.0),
                },
                FlagRecord {
                    stay_id: "b".into(),
                    criterion: Criterion::Instant,
                    threshold: 0.5,
                    flag_time: None,
                },
            ],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "stay_id,criterion,threshold,flag_time_hours\na,window,0.5,8\nb,instant,0.5,\n"
        );
    }
}
