//! Negative log-likelihood of a log-hazard `F(t, x)` on sub-epoch data,
//!
//! ```text
//! NLL(F) = Σ_i exp(F_i)·Δt_i − Σ_{i: δ_i} F_i
//! ```
//!
//! where `F_i` is the (constant) log-hazard on sub-epoch `i`. The event term
//! uses the value on the final sub-epoch, i.e. the left limit of `F` at the
//! event time.

use super::HazardModel;
use crate::data::SubEpoch;
use crate::error::{invalid, Result};

/// Per-sub-epoch first and second derivatives of the NLL with respect to `F_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradHess {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn nll_from_scores(scores: &[f64], dt: &[f64], delta: &[bool]) -> f64 {
    let mut total = 0.0;
    for ((&f, &d), &ev) in scores.iter().zip(dt).zip(delta) {
        total += f.exp() * d;
        if ev {
            total -= f;
        }
    }
    total
}

pub fn grad_hess_from_scores(scores: &[f64], dt: &[f64], delta: &[bool]) -> GradHess {
    let h: Vec<f64> = scores.iter().zip(dt).map(|(&f, &d)| f.exp() * d).collect();
    let g = h
        .iter()
        .zip(delta)
        .map(|(&hi, &ev)| if ev { hi - 1.0 } else { hi })
        .collect();
    GradHess { g, h }
}

/// Log-hazard of the model on each sub-epoch. Fails if a piece straddles a
/// grid point, since `F` would then not be constant on it.
pub fn sub_epoch_scores(model: &HazardModel, subs: &[SubEpoch<'_>]) -> Result<Vec<f64>> {
    subs.iter()
        .map(|s| {
            let first_inside = model.time_grid.partition_point(|&g| g <= s.t_start);
            if model
                .time_grid
                .get(first_inside)
                .is_some_and(|&g| g < s.t_end)
            {
                return Err(invalid(format!(
                    "sub-epoch [{}, {}) of stay {} crosses grid point {}",
                    s.t_start, s.t_end, s.trajectory.stay_id, model.time_grid[first_inside]
                )));
            }
            model.predict_log_hazard(s.midpoint(), &s.epoch.query())
        })
        .collect()
}

pub fn negative_log_likelihood(model: &HazardModel, subs: &[SubEpoch<'_>]) -> Result<f64> {
    let scores = sub_epoch_scores(model, subs)?;
    let (dt, delta) = columns(subs);
    Ok(nll_from_scores(&scores, &dt, &delta))
}

pub fn grad_hess(model: &HazardModel, subs: &[SubEpoch<'_>]) -> Result<GradHess> {
    let scores = sub_epoch_scores(model, subs)?;
    let (dt, delta) = columns(subs);
    Ok(grad_hess_from_scores(&scores, &dt, &delta))
}

fn columns(subs: &[SubEpoch<'_>]) -> (Vec<f64>, Vec<bool>) {
    (
        subs.iter().map(SubEpoch::duration).collect(),
        subs.iter().map(|s| s.delta).collect(),
    )
}
