//! Linear Cox proportional-hazards baseline with time-varying covariates.
//!
//! Only the relative risk `β'x` is estimated; the baseline hazard is not.
//! At each distinct event time the risk set holds every stay still under
//! observation, each contributing the covariates in force just before that
//! time. Tied event times use the Breslow approximation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::Trajectory;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CoxModel {
    pub beta: Vec<f64>,
    pub feature_names: Vec<String>,
    pub iterations: usize,
    /// Gradient max-norm at the returned iterate, on the standardized scale.
    pub grad_norm: f64,
}

impl CoxModel {
    pub fn arity(&self) -> usize {
        self.beta.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxObjective {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major `p × p`.
    pub hessian: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    /// Convergence threshold on the largest standardized gradient entry,
    /// per event.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest |β| on the standardized scale before separation is reported.
    pub max_abs_beta: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions {
            tol: 1e-8,
            max_iter: 100,
            max_abs_beta: 50.0,
        }
    }
}

/// Relative risk score `β'x`.
pub fn cox_risk_score(model: &CoxModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.beta.len() {
        return Err(invalid(format!(
            "expected {} features, got {}",
            model.beta.len(),
            x.len()
        )));
    }
    Ok(dot(&model.beta, x))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Event-time structure of a dataset, independent of β.
struct RiskSets<'a> {
    data: &'a [Trajectory],
    /// Indices sorted by ascending end time.
    by_end: Vec<usize>,
    /// Distinct event times with the stays dying at each.
    events: Vec<(f64, Vec<usize>)>,
}

impl<'a> RiskSets<'a> {
    fn new(data: &'a [Trajectory]) -> Result<Self> {
        let mut by_end: Vec<usize> = (0..data.len()).collect();
        by_end.sort_by(|&a, &b| data[a].end_time.total_cmp(&data[b].end_time).then(a.cmp(&b)));
        let mut events: Vec<(f64, Vec<usize>)> = Vec::new();
        for &i in &by_end {
            if !data[i].event {
                continue;
            }
            let t = data[i].end_time;
            match events.last_mut() {
                Some((last, ids)) if *last == t => ids.push(i),
                _ => events.push((t, vec![i])),
            }
        }
        if events.is_empty() {
            return Err(invalid("Cox partial likelihood needs at least one event"));
        }
        Ok(RiskSets {
            data,
            by_end,
            events,
        })
    }

    fn risk_set(&self, t: f64) -> &[usize] {
        let first = self.by_end.partition_point(|&i| self.data[i].end_time < t);
        &self.by_end[first..]
    }

    fn evaluate(&self, beta: &[f64], with_hessian: bool) -> CoxObjective {
        let p = beta.len();
        let terms: Vec<CoxObjective> = self
            .events
            .par_iter()
            .map(|(t, dying)| {
                let mut s0 = 0.0;
                let mut s1 = vec![0.0; p];
                let mut s2 = if with_hessian { vec![0.0; p * p] } else { Vec::new() };
                for &i in self.risk_set(*t) {
                    let x = &self.data[i].epoch_before(*t).x;
                    let w = dot(beta, x).exp();
                    s0 += w;
                    for a in 0..p {
                        s1[a] += w * x[a];
                    }
                    if with_hessian {
                        for a in 0..p {
                            let wa = w * x[a];
                            for b in 0..p {
                                s2[a * p + b] += wa * x[b];
                            }
                        }
                    }
                }
                let d = dying.len() as f64;
                let mut value = d * s0.ln();
                let mut gradient: Vec<f64> = s1.iter().map(|v| d * v / s0).collect();
                for &i in dying {
                    let x = &self.data[i].epoch_before(*t).x;
                    value -= dot(beta, x);
                    for a in 0..p {
                        gradient[a] -= x[a];
                    }
                }
                let mut hessian = Vec::new();
                if with_hessian {
                    hessian = vec![0.0; p * p];
                    for a in 0..p {
                        for b in 0..p {
                            hessian[a * p + b] =
                                d * (s2[a * p + b] / s0 - (s1[a] / s0) * (s1[b] / s0));
                        }
                    }
                }
                CoxObjective {
                    value,
                    gradient,
                    hessian,
                }
            })
            .collect();

        let mut total = CoxObjective {
            value: 0.0,
            gradient: vec![0.0; p],
            hessian: if with_hessian { vec![0.0; p * p] } else { Vec::new() },
        };
        for term in terms {
            total.value += term.value;
            for (a, g) in term.gradient.iter().enumerate() {
                total.gradient[a] += g;
            }
            for (a, h) in term.hessian.iter().enumerate() {
                total.hessian[a] += h;
            }
        }
        total
    }
}

/// Negative log partial likelihood with its exact gradient and hessian.
pub fn cox_partial_nll_grad(beta: &[f64], data: &[Trajectory]) -> Result<CoxObjective> {
    if let Some(t) = data.iter().find(|t| t.arity() != beta.len()) {
        return Err(invalid(format!(
            "stay {} has {} features but beta has {}",
            t.stay_id,
            t.arity(),
            beta.len()
        )));
    }
    Ok(RiskSets::new(data)?.evaluate(beta, true))
}

/// Newton–Raphson on z-scored covariates with step halving. Coefficients are
/// mapped back to the original scale.
pub fn fit_cox(data: &[Trajectory], feature_names: &[String], opts: &CoxOptions) -> Result<CoxModel> {
    let p = feature_names.len();
    if let Some(t) = data.iter().find(|t| t.arity() != p) {
        return Err(invalid(format!(
            "stay {} has {} features, expected {p}",
            t.stay_id,
            t.arity()
        )));
    }
    if let Some(t) = data
        .iter()
        .find(|t| t.epochs.iter().any(|e| e.x.iter().any(|v| !v.is_finite())))
    {
        return Err(invalid(format!(
            "stay {} has non-finite covariates; impute before fitting the Cox model",
            t.stay_id
        )));
    }

    let scale = Standardizer::new(data, p);
    let z_data: Vec<Trajectory> = data.iter().map(|t| scale.apply(t)).collect();
    let sets = RiskSets::new(&z_data)?;
    let active: Vec<usize> = (0..p).filter(|&k| scale.sd[k] > 0.0).collect();

    let n_events = data.iter().filter(|t| t.event).count().max(1) as f64;
    let mut beta = vec![0.0; p];
    let mut current = sets.evaluate(&beta, true);
    let mut iterations = 0;
    let noise = |v: f64| 8.0 * f64::EPSILON * v.abs().max(1.0);
    loop {
        let grad_norm = active
            .iter()
            .map(|&k| current.gradient[k].abs())
            .fold(0.0, f64::max);
        if grad_norm < opts.tol * n_events || active.is_empty() {
            return Ok(CoxModel {
                beta: scale.unscale(&beta),
                feature_names: feature_names.to_vec(),
                iterations,
                grad_norm,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NotConverged {
                iterations,
                grad_norm,
                beta: scale.unscale(&beta),
            });
        }
        iterations += 1;

        let step = newton_direction(&current, &active, p);
        let mut scale_factor = 1.0;
        let mut next_beta;
        let mut next;
        loop {
            next_beta = beta.clone();
            for (k, s) in active.iter().zip(&step) {
                next_beta[*k] += scale_factor * s;
            }
            next = sets.evaluate(&next_beta, true);
            if next.value <= current.value + noise(current.value) || scale_factor < 1e-10 {
                break;
            }
            scale_factor *= 0.5;
        }
        if let Some(k) = active.iter().copied().find(|&k| next_beta[k].abs() > opts.max_abs_beta) {
            return Err(Error::Separation {
                feature: feature_names[k].clone(),
                magnitude: next_beta[k].abs(),
            });
        }
        beta = next_beta;
        current = next;
    }
}

fn newton_direction(obj: &CoxObjective, active: &[usize], p: usize) -> Vec<f64> {
    let q = active.len();
    let g = DVector::from_iterator(q, active.iter().map(|&k| -obj.gradient[k]));
    let mut h = DMatrix::from_fn(q, q, |a, b| obj.hessian[active[a] * p + active[b]]);
    let mut ridge = 0.0;
    loop {
        if let Some(chol) = h.clone().cholesky() {
            return chol.solve(&g).iter().copied().collect();
        }
        // Flat directions (e.g. separation in progress): damp until positive definite.
        let bump = if ridge == 0.0 { 1e-8 } else { ridge * 10.0 };
        for a in 0..q {
            h[(a, a)] += bump - ridge;
        }
        ridge = bump;
    }
}

struct Standardizer {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl Standardizer {
    fn new(data: &[Trajectory], p: usize) -> Self {
        let mut mean = vec![0.0; p];
        let mut lo = vec![f64::INFINITY; p];
        let mut hi = vec![f64::NEG_INFINITY; p];
        let mut n = 0.0;
        for e in data.iter().flat_map(|t| &t.epochs) {
            n += 1.0;
            for k in 0..p {
                mean[k] += e.x[k];
                lo[k] = lo[k].min(e.x[k]);
                hi[k] = hi[k].max(e.x[k]);
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; p];
        for e in data.iter().flat_map(|t| &t.epochs) {
            for k in 0..p {
                var[k] += (e.x[k] - mean[k]).powi(2);
            }
        }
        let sd = (0..p)
            .map(|k| {
                if lo[k] == hi[k] {
                    0.0
                } else {
                    (var[k] / n).sqrt()
                }
            })
            .collect();
        Standardizer { mean, sd }
    }

    fn apply(&self, t: &Trajectory) -> Trajectory {
        let mut z = t.clone();
        for e in &mut z.epochs {
            for (k, v) in e.x.iter_mut().enumerate() {
                *v = if self.sd[k] > 0.0 {
                    (*v - self.mean[k]) / self.sd[k]
                } else {
                    0.0
                };
            }
        }
        z
    }

    fn unscale(&self, beta: &[f64]) -> Vec<f64> {
        beta.iter()
            .zip(&self.sd)
            .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
            .collect()
    }
}
