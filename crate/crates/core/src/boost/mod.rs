//! Tree-boosted estimation of the log-hazard `F(t, x)` over the joint
//! time × covariate space.
//!
//! Time is split on like any covariate, so the fitted hazard
//! `exp(F(t, x))` can carry arbitrary interactions between stay time and
//! the clinical features. Each round adds one shallow regression tree fitted
//! to the second-order expansion of the survival negative log-likelihood.

mod cv;
mod loss;
mod quantile;
mod table;
mod tree;

pub use cv::{cross_validate_one_se, patient_folds, select_one_se, CvConfig, CvPoint, CvReport};
pub use loss::{
    grad_hess, grad_hess_from_scores, negative_log_likelihood, nll_from_scores, sub_epoch_scores,
    GradHess,
};
pub use quantile::{quantile_candidates, Candidates};
pub use tree::{build_tree, Coord, Node, Tree, TreeParams};

use crate::data::{check_grid, subdivide_into, total_events, total_exposure, SubEpoch, Trajectory};
use crate::error::{invalid, Error, Result};
use table::TrainingTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostParams {
    pub num_trees: usize,
    pub max_depth: usize,
    /// Shrinkage ν applied to every tree.
    pub learning_rate: f64,
    pub reg_lambda: f64,
    pub min_child_hessian: f64,
    /// Upper bound on bins per coordinate, time included.
    pub max_bins: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            num_trees: 75,
            max_depth: 2,
            learning_rate: 0.1,
            reg_lambda: 1.0,
            min_child_hessian: 1e-3,
            max_bins: 256,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(invalid("learning rate must lie in (0, 1]"));
        }
        if !(self.reg_lambda >= 0.0) || !(self.min_child_hessian >= 0.0) {
            return Err(invalid("regularization parameters must be non-negative"));
        }
        if self.reg_lambda == 0.0 && self.min_child_hessian == 0.0 {
            return Err(invalid("reg_lambda and min_child_hessian cannot both be zero"));
        }
        if !(2..=u16::MAX as usize).contains(&self.max_bins) {
            return Err(invalid("max_bins must lie in [2, 65535]"));
        }
        Ok(())
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            reg_lambda: self.reg_lambda,
            min_child_hessian: self.min_child_hessian,
        }
    }
}

/// Fitted hazard model: `F(t, x) = base_score + ν·Σ_m tree_m(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub time_grid: Vec<f64>,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
    pub params: BoostParams,
}

impl HazardModel {
    /// Model with no trees and the given constant log-hazard.
    pub fn constant(base_score: f64, feature_names: Vec<String>) -> Self {
        HazardModel {
            base_score,
            learning_rate: 1.0,
            time_grid: Vec::new(),
            feature_names,
            trees: Vec::new(),
            params: BoostParams {
                num_trees: 0,
                learning_rate: 1.0,
                ..BoostParams::default()
            },
        }
    }

    pub fn arity(&self) -> usize {
        self.feature_names.len()
    }

    /// Log-hazard at stay time `t` for covariates `x` (NaN = missing).
    pub fn predict_log_hazard(&self, t: f64, x: &[f64]) -> Result<f64> {
        if x.len() != self.arity() {
            return Err(invalid(format!(
                "expected {} features, got {}",
                self.arity(),
                x.len()
            )));
        }
        if !(t >= 0.0) {
            return Err(invalid(format!("prediction time {t} must be non-negative")));
        }
        Ok(self.predict_unchecked(t, x))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, t: f64, x: &[f64]) -> f64 {
        let mut f = self.base_score;
        for tree in &self.trees {
            f += self.learning_rate * tree.predict(t, x);
        }
        f
    }

    /// Real-time risk measure `λ̂(t, x) = exp(F(t, x))`.
    pub fn hazard(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.predict_log_hazard(t, x).map(f64::exp)
    }

    /// Slices a trajectory on this model's time grid.
    pub fn sub_epochs<'a>(&self, traj: &'a Trajectory) -> Vec<SubEpoch<'a>> {
        let mut out = Vec::new();
        subdivide_into(traj, &self.time_grid, &mut out);
        out
    }

    pub(crate) fn check_consistent(&self) -> Result<()> {
        check_grid(&self.time_grid)?;
        for (m, tree) in self.trees.iter().enumerate() {
            if tree.max_feature().is_some_and(|k| k >= self.arity()) {
                return Err(Error::Format(format!("tree {m} splits on an unknown feature")));
            }
            for node in &tree.nodes {
                match node {
                    Node::Leaf { value } if !value.is_finite() => {
                        return Err(Error::Format(format!("tree {m} has a non-finite leaf")));
                    }
                    Node::Split {
                        coord: Coord::Time,
                        threshold,
                        ..
                    } if self.time_grid.binary_search_by(|g| g.total_cmp(threshold)).is_err() => {
                        return Err(Error::Format(format!(
                            "tree {m} splits time at {threshold}, which is not on the time grid"
                        )));
                    }
                    Node::Split { left, right, .. }
                        if *left >= tree.nodes.len() || *right >= tree.nodes.len() =>
                    {
                        return Err(Error::Format(format!("tree {m} has a dangling child index")));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// Negative log-likelihood after each boosting round. Index 0 is the
/// constant model, index `m` the model with `m` trees.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    pub train_nll: Vec<f64>,
    pub valid_nll: Vec<f64>,
}

pub fn fit(train: &[Trajectory], feature_names: &[String], params: &BoostParams) -> Result<HazardModel> {
    fit_traced(train, feature_names, params, None).map(|(m, _)| m)
}

/// Fits the model and records the NLL per round on the training data and,
/// when given, on held-out trajectories scored with the same time grid.
pub fn fit_traced(
    train: &[Trajectory],
    feature_names: &[String],
    params: &BoostParams,
    valid: Option<&[Trajectory]>,
) -> Result<(HazardModel, FitTrace)> {
    params.validate()?;
    if train.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let arity = feature_names.len();
    if let Some(t) = train
        .iter()
        .chain(valid.unwrap_or_default())
        .find(|t| t.arity() != arity)
    {
        return Err(invalid(format!(
            "stay {} has {} features, expected {arity}",
            t.stay_id,
            t.arity()
        )));
    }
    let events = total_events(train);
    let exposure = total_exposure(train);
    if events == 0 {
        return Err(Error::NoEvents);
    }
    if !(exposure > 0.0) {
        return Err(invalid("training set has no exposure"));
    }
    let base_score = (events as f64 / exposure).ln();

    let candidates = quantile_candidates(train, params.max_bins);
    let mut subs = Vec::new();
    for t in train {
        subdivide_into(t, &candidates.time, &mut subs);
    }
    let table = TrainingTable::new(&subs, &candidates);
    drop(subs);

    let mut model = HazardModel {
        base_score,
        learning_rate: params.learning_rate,
        time_grid: candidates.time.clone(),
        feature_names: feature_names.to_vec(),
        trees: Vec::with_capacity(params.num_trees),
        params: *params,
    };

    let mut valid_rows = valid.map(|v| HeldOut::new(v, &model));
    let mut scores = vec![base_score; table.len()];
    let mut trace = FitTrace::default();
    trace
        .train_nll
        .push(nll_from_scores(&scores, &table.dt, &table.delta));
    if let Some(v) = &valid_rows {
        trace.valid_nll.push(v.nll());
    }

    let tree_params = params.tree_params();
    for _ in 0..params.num_trees {
        let gh = grad_hess_from_scores(&scores, &table.dt, &table.delta);
        let (tree, leaf_values) = tree::build_on_table(&table, &candidates, &gh.g, &gh.h, &tree_params);
        for (f, w) in scores.iter_mut().zip(&leaf_values) {
            *f += params.learning_rate * w;
        }
        trace
            .train_nll
            .push(nll_from_scores(&scores, &table.dt, &table.delta));
        if let Some(v) = &mut valid_rows {
            v.add_tree(&tree, params.learning_rate);
            trace.valid_nll.push(v.nll());
        }
        model.trees.push(tree);
    }
    Ok((model, trace))
}

/// Held-out sub-epochs with running log-hazard scores.
struct HeldOut {
    mid: Vec<f64>,
    query: Vec<usize>,
    queries: Vec<Vec<f64>>,
    dt: Vec<f64>,
    delta: Vec<bool>,
    scores: Vec<f64>,
}

impl HeldOut {
    fn new(data: &[Trajectory], model: &HazardModel) -> Self {
        let mut rows = HeldOut {
            mid: Vec::new(),
            query: Vec::new(),
            queries: Vec::new(),
            dt: Vec::new(),
            delta: Vec::new(),
            scores: Vec::new(),
        };
        let mut subs = Vec::new();
        for t in data {
            subs.clear();
            subdivide_into(t, &model.time_grid, &mut subs);
            let mut last: Option<*const crate::data::Epoch> = None;
            for s in &subs {
                if last != Some(s.epoch as *const _) {
                    rows.queries.push(s.epoch.query());
                    last = Some(s.epoch as *const _);
                }
                rows.mid.push(s.midpoint());
                rows.query.push(rows.queries.len() - 1);
                rows.dt.push(s.duration());
                rows.delta.push(s.delta);
            }
        }
        rows.scores = vec![model.base_score; rows.dt.len()];
        rows
    }

    fn add_tree(&mut self, tree: &Tree, nu: f64) {
        for i in 0..self.scores.len() {
            self.scores[i] += nu * tree.predict(self.mid[i], &self.queries[self.query[i]]);
        }
    }

    fn nll(&self) -> f64 {
        nll_from_scores(&self.scores, &self.dt, &self.delta)
    }
}
