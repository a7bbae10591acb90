use rayon::prelude::*;

use super::quantile::Candidates;
use crate::data::SubEpoch;

pub(crate) const MISSING_BIN: u16 = u16::MAX;

/// Column-major binned view of sub-epochs for histogram split search.
/// Coordinate 0 is time (binned at the sub-epoch midpoint), coordinate
/// `k + 1` is feature `k`.
pub(crate) struct TrainingTable {
    pub dt: Vec<f64>,
    pub delta: Vec<bool>,
    pub bins: Vec<Vec<u16>>,
    pub n_bins: Vec<usize>,
}

/// Bin index of `v`: the number of thresholds `<= v`. A split at cut index
/// `j` sends bins `< j` left, which is the same as `v < thresholds[j - 1]`.
#[inline]
pub(crate) fn bin_of(thresholds: &[f64], v: f64) -> u16 {
    if v.is_nan() {
        MISSING_BIN
    } else {
        thresholds.partition_point(|&c| c <= v) as u16
    }
}

impl TrainingTable {
    pub fn new(subs: &[SubEpoch<'_>], candidates: &Candidates) -> Self {
        let n_coords = candidates.n_coords();
        let bins = (0..n_coords)
            .into_par_iter()
            .map(|c| {
                let cuts = candidates.coord(c);
                subs.iter()
                    .map(|s| {
                        if c == 0 {
                            bin_of(cuts, s.midpoint())
                        } else if s.epoch.missing[c - 1] {
                            MISSING_BIN
                        } else {
                            bin_of(cuts, s.epoch.x[c - 1])
                        }
                    })
                    .collect()
            })
            .collect();
        TrainingTable {
            dt: subs.iter().map(SubEpoch::duration).collect(),
            delta: subs.iter().map(|s| s.delta).collect(),
            bins,
            n_bins: (0..n_coords).map(|c| candidates.coord(c).len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.dt.len()
    }
}
