//! Split-candidate thresholds at exposure-weighted quantiles.
//!
//! Every epoch contributes its covariate values with weight equal to its
//! duration. For the time coordinate the weight is the exposure measure
//! itself: the number of stays still at risk integrated over time.

use crate::data::Trajectory;

/// Ascending split thresholds per coordinate. `time` doubles as the model's
/// time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub time: Vec<f64>,
    pub features: Vec<Vec<f64>>,
}

impl Candidates {
    /// Thresholds for internal coordinate `c` (0 = time, `k + 1` = feature `k`).
    pub(crate) fn coord(&self, c: usize) -> &[f64] {
        if c == 0 {
            &self.time
        } else {
            &self.features[c - 1]
        }
    }

    pub(crate) fn n_coords(&self) -> usize {
        self.features.len() + 1
    }
}

pub fn quantile_candidates(data: &[Trajectory], max_bins: usize) -> Candidates {
    let arity = data.first().map_or(0, Trajectory::arity);
    let mut columns: Vec<Vec<(f64, f64)>> = vec![Vec::new(); arity];
    for traj in data {
        for e in &traj.epochs {
            let w = e.duration();
            for (j, col) in columns.iter_mut().enumerate() {
                let v = e.x[j];
                if !e.missing[j] && !v.is_nan() {
                    col.push((v, w));
                }
            }
        }
    }
    let features = columns
        .into_iter()
        .map(|col| weighted_value_cuts(col, max_bins))
        .collect();
    let ends: Vec<f64> = data.iter().map(|t| t.end_time).collect();
    Candidates {
        time: exposure_time_cuts(ends, max_bins),
        features,
    }
}

/// Cut points between distinct values so that each bin carries roughly
/// `total / max_bins` weight. At most `max_bins - 1` cuts.
pub(crate) fn weighted_value_cuts(mut points: Vec<(f64, f64)>, max_bins: usize) -> Vec<f64> {
    if max_bins < 2 {
        return Vec::new();
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut distinct: Vec<(f64, f64)> = Vec::new();
    for (v, w) in points {
        match distinct.last_mut() {
            Some(last) if last.0 == v => last.1 += w,
            _ => distinct.push((v, w)),
        }
    }
    if distinct.len() < 2 {
        return Vec::new();
    }
    if distinct.len() <= max_bins {
        return distinct
            .windows(2)
            .map(|w| between(w[0].0, w[1].0))
            .collect();
    }
    let total: f64 = distinct.iter().map(|d| d.1).sum();
    let step = total / max_bins as f64;
    let mut cuts = Vec::with_capacity(max_bins - 1);
    let mut cum = 0.0;
    let mut level = step;
    for w in distinct.windows(2) {
        cum += w[0].1;
        if cum >= level {
            cuts.push(between(w[0].0, w[1].0));
            if cuts.len() == max_bins - 1 {
                break;
            }
            while level <= cum {
                level += step;
            }
        }
    }
    cuts
}

/// Quantiles of the at-risk exposure measure over time. With end times
/// sorted, the cumulative exposure up to `t` is piecewise linear with slope
/// equal to the number of stays still observed.
pub(crate) fn exposure_time_cuts(mut ends: Vec<f64>, max_bins: usize) -> Vec<f64> {
    ends.retain(|e| *e > 0.0);
    if max_bins < 2 || ends.is_empty() {
        return Vec::new();
    }
    ends.sort_by(f64::total_cmp);
    let n = ends.len();
    let total: f64 = ends.iter().sum();
    let step = total / max_bins as f64;
    let mut cuts: Vec<f64> = Vec::with_capacity(max_bins - 1);

    let mut seg_start = 0.0;
    let mut cum_at_start = 0.0;
    let mut k = 0; // stays ending at or before seg_start
    let mut q = 1;
    while q < max_bins && k < n {
        let level = step * q as f64;
        let at_risk = (n - k) as f64;
        let seg_end = ends[k];
        let cum_at_end = cum_at_start + at_risk * (seg_end - seg_start);
        if level < cum_at_end {
            let t = seg_start + (level - cum_at_start) / at_risk;
            if t > 0.0 && t < ends[n - 1] && cuts.last().is_none_or(|&c| t > c) {
                cuts.push(t);
            }
            q += 1;
        } else {
            seg_start = seg_end;
            cum_at_start = cum_at_end;
            while k < n && ends[k] <= seg_start {
                k += 1;
            }
        }
    }
    cuts
}

fn between(a: f64, b: f64) -> f64 {
    let m = a + 0.5 * (b - a);
    if m > a && m < b {
        m
    } else {
        b
    }
}
