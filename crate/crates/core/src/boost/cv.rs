//! K-fold cross-validation over (number of trees, depth) with the
//! one-standard-error selection rule.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{fit_traced, BoostParams};
use crate::data::Trajectory;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    /// (num_trees, depth) pairs to score.
    pub grid: Vec<(usize, usize)>,
    /// Learning rate, regularization and binning shared by every grid point.
    pub base: BoostParams,
    pub seed: u64,
}

impl CvConfig {
    pub fn default_grid() -> Vec<(usize, usize)> {
        let mut grid = Vec::new();
        for m in [25, 50, 75, 100, 150, 200, 300] {
            for d in 1..=4 {
                grid.push((m, d));
            }
        }
        grid
    }
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            grid: Self::default_grid(),
            base: BoostParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPoint {
    pub num_trees: usize,
    pub depth: usize,
    /// Held-out negative log-likelihood of each fold.
    pub fold_losses: Vec<f64>,
    pub mean: f64,
    pub std_error: f64,
}

impl CvPoint {
    pub fn new(num_trees: usize, depth: usize, fold_losses: Vec<f64>) -> Self {
        let k = fold_losses.len() as f64;
        let mean = fold_losses.iter().sum::<f64>() / k;
        let std_error = if fold_losses.len() > 1 {
            let var = fold_losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        } else {
            0.0
        };
        CvPoint {
            num_trees,
            depth,
            fold_losses,
            mean,
            std_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub points: Vec<CvPoint>,
    pub best: usize,
    pub chosen: usize,
}

impl CvReport {
    pub fn chosen_point(&self) -> (usize, usize) {
        let p = &self.points[self.chosen];
        (p.num_trees, p.depth)
    }
}

/// Index of the least complex point whose mean loss is within one standard
/// error of the best mean. Complexity orders by tree count, then depth.
pub fn select_one_se(points: &[CvPoint]) -> Result<(usize, usize)> {
    if points.is_empty() {
        return Err(invalid("cross-validation grid is empty"));
    }
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.mean < points[best].mean {
            best = i;
        }
    }
    let bound = points[best].mean + points[best].std_error;
    let chosen = (0..points.len())
        .filter(|&i| points[i].mean <= bound)
        .min_by_key(|&i| (points[i].num_trees, points[i].depth, i))
        .unwrap_or(best);
    Ok((best, chosen))
}

/// Fold index per trajectory. Unique patient IDs are sorted, shuffled with
/// the seed and dealt round-robin, so a patient's stays share one fold.
pub fn patient_folds(data: &[Trajectory], k: usize, seed: u64) -> Vec<usize> {
    let mut patients: Vec<&str> = data.iter().map(|t| t.patient_id.as_str()).collect();
    patients.sort_unstable();
    patients.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);
    let fold_of: BTreeMap<&str, usize> = patients
        .iter()
        .enumerate()
        .map(|(i, p)| (*p, i % k))
        .collect();
    data.iter().map(|t| fold_of[t.patient_id.as_str()]).collect()
}

pub fn cross_validate_one_se(
    train: &[Trajectory],
    feature_names: &[String],
    config: &CvConfig,
) -> Result<CvReport> {
    if config.grid.is_empty() {
        return Err(invalid("cross-validation grid is empty"));
    }
    if config.folds < 2 {
        return Err(invalid("cross-validation needs at least 2 folds"));
    }
    let n_patients = {
        let mut p: Vec<&str> = train.iter().map(|t| t.patient_id.as_str()).collect();
        p.sort_unstable();
        p.dedup();
        p.len()
    };
    if n_patients < config.folds {
        return Err(invalid(format!(
            "{} folds requested but only {n_patients} patients",
            config.folds
        )));
    }
    let folds = patient_folds(train, config.folds, config.seed);

    // One fit per (depth, fold) up to the largest tree count for that depth;
    // smaller tree counts are read off the held-out trace.
    let mut max_trees: BTreeMap<usize, usize> = BTreeMap::new();
    for &(m, d) in &config.grid {
        let e = max_trees.entry(d).or_insert(0);
        *e = (*e).max(m);
    }
    let jobs: Vec<(usize, usize, usize)> = max_trees
        .iter()
        .flat_map(|(&d, &m)| (0..config.folds).map(move |f| (d, m, f)))
        .collect();
    let traces: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(depth, num_trees, fold)| {
            let (fit_set, held): (Vec<_>, Vec<_>) = train
                .iter()
                .zip(&folds)
                .partition(|(_, &f)| f != fold);
            let fit_set: Vec<Trajectory> = fit_set.into_iter().map(|(t, _)| t.clone()).collect();
            let held: Vec<Trajectory> = held.into_iter().map(|(t, _)| t.clone()).collect();
            let params = BoostParams {
                num_trees,
                max_depth: depth,
                ..config.base
            };
            fit_traced(&fit_set, feature_names, &params, Some(&held)).map(|(_, tr)| tr.valid_nll)
        })
        .collect::<Result<_>>()?;

    let points: Vec<CvPoint> = config
        .grid
        .iter()
        .map(|&(m, d)| {
            let losses = jobs
                .iter()
                .zip(&traces)
                .filter(|((jd, _, _), _)| *jd == d)
                .map(|(_, trace)| trace[m])
                .collect();
            CvPoint::new(m, d, losses)
        })
        .collect();
    let (best, chosen) = select_one_se(&points)?;
    Ok(CvReport {
        points,
        best,
        chosen,
    })
}
