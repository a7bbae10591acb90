//! Survival data with time-varying covariates.
//!
//! A [`Trajectory`] is one ICU stay: contiguous half-open epochs `[t_start, t_end)`
//! starting at admission (hour 0), each carrying a covariate vector that is
//! constant over the epoch, plus the in-ICU death flag. The event, when
//! present, happens at the end of the last epoch.
//!
//! Training slices epochs further into [`SubEpoch`]s so that each piece lies
//! inside one cell of the time grid shared by all trees; on a sub-epoch the
//! fitted log-hazard is constant and the likelihood integral is a finite sum.

use std::fmt;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub t_start: f64,
    pub t_end: f64,
    pub x: Vec<f64>,
    /// `true` where the feature has never been observed up to this epoch.
    pub missing: Vec<bool>,
}

impl Epoch {
    /// Epoch with every feature observed.
    pub fn observed(t_start: f64, t_end: f64, x: Vec<f64>) -> Self {
        let missing = vec![false; x.len()];
        Epoch {
            t_start,
            t_end,
            x,
            missing,
        }
    }

    #[inline]
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Covariates with unobserved entries replaced by NaN, the convention
    /// used for prediction queries.
    pub fn query(&self) -> Vec<f64> {
        self.x
            .iter()
            .zip(&self.missing)
            .map(|(&v, &m)| if m { f64::NAN } else { v })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub stay_id: String,
    pub patient_id: String,
    pub epochs: Vec<Epoch>,
    /// In-ICU death at `end_time`.
    pub event: bool,
    pub end_time: f64,
}

impl Trajectory {
    /// Builds a trajectory whose end time is the end of its last epoch and
    /// checks every invariant.
    pub fn new(
        stay_id: impl Into<String>,
        patient_id: impl Into<String>,
        epochs: Vec<Epoch>,
        event: bool,
    ) -> Result<Self> {
        let end_time = epochs.last().map_or(0.0, |e| e.t_end);
        let traj = Trajectory {
            stay_id: stay_id.into(),
            patient_id: patient_id.into(),
            epochs,
            event,
            end_time,
        };
        validate_trajectory(&traj)
            .map_err(|v| invalid(format!("stay {}: {v}", traj.stay_id)))?;
        Ok(traj)
    }

    pub fn arity(&self) -> usize {
        self.epochs.first().map_or(0, |e| e.x.len())
    }

    pub fn exposure(&self) -> f64 {
        self.epochs.iter().map(Epoch::duration).sum()
    }

    /// Epoch covering `t` under the half-open convention, i.e. the epoch with
    /// `t_start <= t < t_end`. Times at or past `end_time` map to the last epoch.
    pub fn epoch_at(&self, t: f64) -> &Epoch {
        let idx = self.epochs.partition_point(|e| e.t_end <= t);
        &self.epochs[idx.min(self.epochs.len() - 1)]
    }

    /// Epoch in force just before `t`, i.e. the one with `t_start < t <= t_end`.
    /// This is the predictable covariate value at an event time.
    pub fn epoch_before(&self, t: f64) -> &Epoch {
        let idx = self.epochs.partition_point(|e| e.t_end < t);
        &self.epochs[idx.min(self.epochs.len() - 1)]
    }
}

/// An epoch fragment confined to one time-grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubEpoch<'a> {
    pub trajectory: &'a Trajectory,
    pub epoch: &'a Epoch,
    pub t_start: f64,
    pub t_end: f64,
    /// Set only on the final piece of a trajectory that ends in the event.
    pub delta: bool,
}

impl SubEpoch<'_> {
    #[inline]
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    #[inline]
    pub fn x(&self) -> &[f64] {
        &self.epoch.x
    }

    #[inline]
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.t_start + self.t_end)
    }
}

/// First invariant a trajectory violates.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoEpochs,
    NotAtAdmission { start: f64 },
    EmptyEpoch { index: usize, at: f64 },
    Gap { index: usize, at: f64 },
    Overlap { index: usize, at: f64 },
    ArityMismatch { index: usize, expected: usize, found: usize },
    MaskLength { index: usize },
    NonFinite { index: usize, feature: usize },
    EndMismatch { end_time: f64, last_end: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoEpochs => write!(f, "trajectory has no epochs"),
            Violation::NotAtAdmission { start } => {
                write!(f, "first epoch starts at {start} instead of 0")
            }
            Violation::EmptyEpoch { index, at } => {
                write!(f, "epoch {index} at {at} has non-positive length")
            }
            Violation::Gap { index, at } => write!(f, "gap at {at} before epoch {index}"),
            Violation::Overlap { index, at } => write!(f, "overlap at {at} in epoch {index}"),
            Violation::ArityMismatch {
                index,
                expected,
                found,
            } => write!(f, "epoch {index} has {found} features, expected {expected}"),
            Violation::MaskLength { index } => {
                write!(f, "epoch {index} missing mask length differs from covariates")
            }
            Violation::NonFinite { index, feature } => {
                write!(f, "epoch {index} feature {feature} is observed but not finite")
            }
            Violation::EndMismatch { end_time, last_end } => {
                write!(f, "end_time {end_time} differs from last epoch end {last_end}")
            }
        }
    }
}

pub fn validate_trajectory(traj: &Trajectory) -> std::result::Result<(), Violation> {
    let first = traj.epochs.first().ok_or(Violation::NoEpochs)?;
    if first.t_start != 0.0 {
        return Err(Violation::NotAtAdmission {
            start: first.t_start,
        });
    }
    let arity = first.x.len();
    let mut prev_end = 0.0;
    for (index, e) in traj.epochs.iter().enumerate() {
        if index > 0 {
            if e.t_start > prev_end {
                return Err(Violation::Gap { index, at: prev_end });
            }
            if e.t_start < prev_end {
                return Err(Violation::Overlap {
                    index,
                    at: e.t_start,
                });
            }
        }
        if !(e.t_end > e.t_start) {
            return Err(Violation::EmptyEpoch {
                index,
                at: e.t_start,
            });
        }
        if e.x.len() != arity {
            return Err(Violation::ArityMismatch {
                index,
                expected: arity,
                found: e.x.len(),
            });
        }
        if e.missing.len() != arity {
            return Err(Violation::MaskLength { index });
        }
        if let Some(feature) = (0..arity).find(|&j| !e.missing[j] && !e.x[j].is_finite()) {
            return Err(Violation::NonFinite { index, feature });
        }
        prev_end = e.t_end;
    }
    if traj.end_time != prev_end {
        return Err(Violation::EndMismatch {
            end_time: traj.end_time,
            last_end: prev_end,
        });
    }
    Ok(())
}

/// Slices every epoch at the grid points falling strictly inside it.
pub fn subdivide_epochs<'a>(traj: &'a Trajectory, time_grid: &[f64]) -> Result<Vec<SubEpoch<'a>>> {
    check_grid(time_grid)?;
    let mut out = Vec::with_capacity(traj.epochs.len());
    subdivide_into(traj, time_grid, &mut out);
    Ok(out)
}

pub(crate) fn check_grid(time_grid: &[f64]) -> Result<()> {
    if time_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("time grid must be strictly ascending"));
    }
    Ok(())
}

/// Grid must already be checked.
pub(crate) fn subdivide_into<'a>(traj: &'a Trajectory, time_grid: &[f64], out: &mut Vec<SubEpoch<'a>>) {
    let n_epochs = traj.epochs.len();
    for (i, epoch) in traj.epochs.iter().enumerate() {
        let mut start = epoch.t_start;
        let first_cut = time_grid.partition_point(|&g| g <= epoch.t_start);
        for &cut in time_grid[first_cut..].iter().take_while(|&&g| g < epoch.t_end) {
            out.push(SubEpoch {
                trajectory: traj,
                epoch,
                t_start: start,
                t_end: cut,
                delta: false,
            });
            start = cut;
        }
        out.push(SubEpoch {
            trajectory: traj,
            epoch,
            t_start: start,
            t_end: epoch.t_end,
            delta: traj.event && i + 1 == n_epochs,
        });
    }
}

/// Epochs restricted to `[0, t)`. Epochs starting at or after `t` are dropped
/// and the one containing `t` is shortened.
pub fn clip_epochs(epochs: &[Epoch], t: f64) -> Vec<Epoch> {
    let mut out: Vec<Epoch> = epochs.iter().take_while(|e| e.t_start < t).cloned().collect();
    if let Some(last) = out.last_mut() {
        last.t_end = last.t_end.min(t);
    }
    out
}

pub fn total_exposure(dataset: &[Trajectory]) -> f64 {
    dataset.iter().map(Trajectory::exposure).sum()
}

pub fn total_events(dataset: &[Trajectory]) -> usize {
    dataset.iter().filter(|t| t.event).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(bounds: &[(f64, f64)], event: bool) -> Trajectory {
        let epochs = bounds
            .iter()
            .enumerate()
            .map(|(i, &(s, e))| Epoch::observed(s, e, vec![i as f64]))
            .collect();
        Trajectory::new("s", "p", epochs, event).unwrap()
    }

    fn raw(bounds: &[(f64, f64)]) -> Trajectory {
        Trajectory {
            stay_id: "s".into(),
            patient_id: "p".into(),
            epochs: bounds
                .iter()
                .map(|&(s, e)| Epoch::observed(s, e, vec![1.0]))
                .collect(),
            event: false,
            end_time: bounds.last().map_or(0.0, |b| b.1),
        }
    }

    #[test]
    fn subdivide_at_grid_points() {
        let t = traj(&[(0.0, 10.0)], false);
        let subs = subdivide_epochs(&t, &[4.0, 8.0]).unwrap();
        let spans: Vec<_> = subs.iter().map(|s| (s.t_start, s.t_end)).collect();
        assert_eq!(spans, vec![(0.0, 4.0), (4.0, 8.0), (8.0, 10.0)]);
    }

    #[test]
    fn empty_grid_is_identity() {
        let t = traj(&[(0.0, 3.0)], true);
        let subs = subdivide_epochs(&t, &[]).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!((subs[0].t_start, subs[0].t_end), (0.0, 3.0));
        assert!(subs[0].delta);
    }

    #[test]
    fn grid_point_on_epoch_boundary_adds_no_piece() {
        let t = traj(&[(0.0, 4.0), (4.0, 6.0)], false);
        let subs = subdivide_epochs(&t, &[4.0]).unwrap();
        assert_eq!(subs.len(), 2);
    }

    #[test]
    fn non_ascending_grid_rejected() {
        let t = traj(&[(0.0, 3.0)], false);
        assert!(subdivide_epochs(&t, &[2.0, 1.0]).is_err());
        assert!(subdivide_epochs(&t, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn exposure_sums() {
        let t = traj(&[(0.0, 5.0), (5.0, 12.0)], false);
        assert_eq!(total_exposure(&[t]), 12.0);
        assert_eq!(total_exposure(&[]), 0.0);
    }

    #[test]
    fn validation_reports_first_violation() {
        assert_eq!(validate_trajectory(&raw(&[(0.0, 4.0), (4.0, 8.0)])), Ok(()));
        assert_eq!(
            validate_trajectory(&raw(&[(0.0, 4.0), (5.0, 8.0)])),
            Err(Violation::Gap { index: 1, at: 4.0 })
        );
        assert_eq!(
            validate_trajectory(&raw(&[(0.0, 4.0), (3.0, 8.0)])),
            Err(Violation::Overlap { index: 1, at: 3.0 })
        );
        assert_eq!(
            validate_trajectory(&raw(&[(0.0, 4.0), (4.0, 4.0)])),
            Err(Violation::EmptyEpoch { index: 1, at: 4.0 })
        );
        assert_eq!(validate_trajectory(&raw(&[])), Err(Violation::NoEpochs));
        let mut bad = raw(&[(0.0, 1.0), (1.0, 2.0)]);
        bad.epochs[1].x.push(2.0);
        assert!(matches!(
            validate_trajectory(&bad),
            Err(Violation::ArityMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn epoch_lookup_conventions() {
        let t = traj(&[(0.0, 4.0), (4.0, 8.0)], false);
        assert_eq!(t.epoch_at(4.0).t_start, 4.0);
        assert_eq!(t.epoch_before(4.0).t_start, 0.0);
        assert_eq!(t.epoch_before(8.0).t_start, 4.0);
        assert_eq!(t.epoch_at(8.0).t_start, 4.0);
    }

    fn arb_case() -> impl Strategy<Value = (Vec<u32>, Vec<u32>, bool)> {
        (
            prop::collection::vec(1u32..40, 1..8),
            prop::collection::vec(1u32..400, 0..12),
            any::<bool>(),
        )
    }

    proptest! {
        // Boundaries on a quarter-hour lattice are exactly representable.
        #[test]
        fn subdivision_properties((lens, grid_raw, event) in arb_case()) {
            let mut bounds = Vec::new();
            let mut t = 0.0;
            for l in &lens {
                let e = t + *l as f64 * 0.25;
                bounds.push((t, e));
                t = e;
            }
            let trajectory = traj(&bounds, event);
            let mut grid: Vec<f64> = grid_raw.iter().map(|&g| g as f64 * 0.25).collect();
            grid.sort_by(f64::total_cmp);
            grid.dedup();

            let subs = subdivide_epochs(&trajectory, &grid).unwrap();
            let before: f64 = bounds.iter().map(|(s, e)| e - s).sum();
            let after: f64 = subs.iter().map(SubEpoch::duration).sum();
            prop_assert_eq!(before, after);

            for s in &subs {
                prop_assert!(!grid.iter().any(|&g| s.t_start < g && g < s.t_end));
            }
            let n_delta = subs.iter().filter(|s| s.delta).count();
            prop_assert_eq!(n_delta, usize::from(event));

            // Merge pieces of the same epoch back together.
            let mut merged: Vec<(f64, f64, Vec<f64>)> = Vec::new();
            let mut last_epoch: Option<&Epoch> = None;
            for s in &subs {
                match merged.last_mut() {
                    Some(last) if last_epoch.is_some_and(|e| std::ptr::eq(e, s.epoch)) => {
                        prop_assert_eq!(last.1, s.t_start);
                        last.1 = s.t_end;
                    }
                    _ => merged.push((s.t_start, s.t_end, s.x().to_vec())),
                }
                last_epoch = Some(s.epoch);
            }
            let original: Vec<_> = trajectory.epochs.iter().map(|e| (e.t_start, e.t_end, e.x.clone())).collect();
            prop_assert_eq!(merged, original);
        }
    }
}
