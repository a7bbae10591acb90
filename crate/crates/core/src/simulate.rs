//! Synthetic ICU stays with known hazards.
//!
//! Covariates are piecewise constant: each feature jumps at the times of its
//! own homogeneous Poisson process and is redrawn from a normal distribution
//! at every jump. The hazard is constant on each epoch between changepoints,
//! so the cumulative hazard is available in closed form and event times are
//! drawn exactly by inverting it against an Exponential(1) variate.
//!
//! Each stay uses its own ChaCha8 stream derived from `(seed, stay index)`,
//! making datasets identical across platforms and thread counts.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use rayon::prelude::*;

use crate::data::{clip_epochs, Epoch, Trajectory};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    /// `λ = rate`.
    Constant { rate: f64 },
    /// `λ = base_rate · exp(β'x)`.
    Proportional { base_rate: f64, beta: Vec<f64> },
    /// `λ = exp(intercept + coef · x₁ · 1{t > changepoint})`.
    TimeInteraction {
        intercept: f64,
        coef: f64,
        changepoint: f64,
    },
    /// `λ = r(t) · exp(β'x)` with `r` switching from `rate_before` to
    /// `rate_after` at the changepoint.
    Step {
        rate_before: f64,
        rate_after: f64,
        changepoint: f64,
        beta: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HazardSpec {
    pub scenario: Scenario,
    /// Administrative censoring time (hours).
    pub censor_time: f64,
}

pub const SCENARIOS: [&str; 4] = ["constant", "proportional", "time-interaction", "step"];

impl HazardSpec {
    /// Default parameters of a named scenario for `n_features` covariates.
    pub fn named(name: &str, n_features: usize, censor_time: f64) -> Result<Self> {
        let coef = |vals: &[f64]| -> Vec<f64> {
            (0..n_features)
                .map(|k| vals.get(k).copied().unwrap_or(0.0))
                .collect()
        };
        let scenario = match name {
            "constant" => Scenario::Constant { rate: 0.01 },
            "proportional" => Scenario::Proportional {
                base_rate: 0.02,
                beta: coef(&[0.8, -0.5]),
            },
            "time-interaction" => Scenario::TimeInteraction {
                intercept: -9.4,
                coef: 2.5,
                changepoint: 72.0,
            },
            "step" => Scenario::Step {
                rate_before: 0.0004,
                rate_after: 0.0006,
                changepoint: 24.0,
                beta: coef(&[0.7, 0.4]),
            },
            other => {
                return Err(invalid(format!(
                    "unknown scenario `{other}` (expected one of {})",
                    SCENARIOS.join(", ")
                )))
            }
        };
        if matches!(scenario, Scenario::TimeInteraction { .. }) && n_features == 0 {
            return Err(invalid("time-interaction scenario needs at least one feature"));
        }
        let spec = HazardSpec {
            scenario,
            censor_time,
        };
        spec.validate(n_features)?;
        Ok(spec)
    }

    pub fn name(&self) -> &'static str {
        match self.scenario {
            Scenario::Constant { .. } => "constant",
            Scenario::Proportional { .. } => "proportional",
            Scenario::TimeInteraction { .. } => "time-interaction",
            Scenario::Step { .. } => "step",
        }
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if !(self.censor_time > 0.0) {
            return Err(invalid("censor time must be positive"));
        }
        let ok = match &self.scenario {
            Scenario::Constant { rate } => *rate >= 0.0 && rate.is_finite(),
            Scenario::Proportional { base_rate, beta } => {
                *base_rate >= 0.0 && beta.len() == n_features && beta.iter().all(|b| b.is_finite())
            }
            Scenario::TimeInteraction {
                intercept,
                coef,
                changepoint,
            } => n_features >= 1 && intercept.is_finite() && coef.is_finite() && changepoint.is_finite(),
            Scenario::Step {
                rate_before,
                rate_after,
                beta,
                ..
            } => *rate_before >= 0.0 && *rate_after >= 0.0 && beta.len() == n_features,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!(
                "invalid parameters for scenario {} with {n_features} features",
                self.name()
            )))
        }
    }

    /// True hazard `λ(t, x)`.
    pub fn hazard(&self, t: f64, x: &[f64]) -> f64 {
        let lin = |beta: &[f64]| -> f64 { beta.iter().zip(x).map(|(b, v)| b * v).sum() };
        match &self.scenario {
            Scenario::Constant { rate } => *rate,
            Scenario::Proportional { base_rate, beta } => base_rate * lin(beta).exp(),
            Scenario::TimeInteraction {
                intercept,
                coef,
                changepoint,
            } => {
                let on = if t > *changepoint { 1.0 } else { 0.0 };
                (intercept + coef * x[0] * on).exp()
            }
            Scenario::Step {
                rate_before,
                rate_after,
                changepoint,
                beta,
            } => {
                let r = if t > *changepoint { rate_after } else { rate_before };
                r * lin(beta).exp()
            }
        }
    }

    /// Times at which the hazard may jump for fixed covariates.
    pub fn changepoints(&self) -> Vec<f64> {
        match &self.scenario {
            Scenario::TimeInteraction { changepoint, .. } | Scenario::Step { changepoint, .. } => {
                vec![*changepoint]
            }
            _ => Vec::new(),
        }
    }

    /// Hazard pieces `(start, end, rate)` over the given epochs, split at
    /// changepoints. The rate on a piece is taken at its midpoint.
    fn pieces<'a>(&'a self, epochs: &'a [Epoch]) -> impl Iterator<Item = (f64, f64, f64)> + 'a {
        let cps = self.changepoints();
        epochs.iter().flat_map(move |e| {
            let mut cuts = vec![e.t_start];
            cuts.extend(cps.iter().copied().filter(|&c| c > e.t_start && c < e.t_end));
            cuts.push(e.t_end);
            cuts.windows(2)
                .map(|w| (w[0], w[1], self.hazard(0.5 * (w[0] + w[1]), &e.x)))
                .collect::<Vec<_>>()
        })
    }

    /// Cumulative hazard `Λ(t)` along the covariate path.
    pub fn cumulative_hazard(&self, epochs: &[Epoch], t: f64) -> f64 {
        self.pieces(epochs)
            .take_while(|p| p.0 < t)
            .map(|(a, b, r)| r * (b.min(t) - a))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureProcess {
    /// Jumps per hour.
    pub jump_rate: f64,
    /// Stationary mean and standard deviation of the value.
    pub mean: f64,
    pub sd: f64,
    /// Weight on the previous value at a jump, in `[0, 1)`: the new value is
    /// `mean + φ·(old − mean) + sd·√(1 − φ²)·Z`. Zero redraws independently.
    pub persistence: f64,
    /// Onsets per hour of transient upward excursions. During an excursion
    /// the feature sits `spike_size·|Z|` above its baseline.
    pub spike_rate: f64,
    /// Mean excursion length (hours).
    pub spike_hours: f64,
    pub spike_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateProcess {
    pub features: Vec<FeatureProcess>,
}

impl CovariateProcess {
    /// `k` independent standard-normal features with a common jump rate
    /// and persistence.
    pub fn standard(k: usize, jump_rate: f64, persistence: f64) -> Self {
        CovariateProcess {
            features: vec![
                FeatureProcess {
                    jump_rate,
                    mean: 0.0,
                    sd: 1.0,
                    persistence,
                    spike_rate: 0.0,
                    spike_hours: 0.0,
                    spike_size: 0.0,
                };
                k
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.features {
            if !(f.jump_rate >= 0.0) || !(f.sd >= 0.0) || !f.mean.is_finite() || !(0.0..1.0).contains(&f.persistence)
                || !(f.spike_rate >= 0.0)
                || !(f.spike_hours >= 0.0)
                || !(f.spike_size >= 0.0)
            {
                return Err(invalid(
                    "feature process needs jump rate >= 0, sd >= 0 and persistence in [0, 1)",
                ));
            }
        }
        Ok(())
    }
}

/// Piecewise-constant covariate path on `[0, horizon)`.
pub fn sample_covariate_path<R: Rng + ?Sized>(process: &CovariateProcess, horizon: f64, rng: &mut R) -> Vec<Epoch> {
    let mut x = Vec::with_capacity(process.features.len());
    let mut changes: Vec<(f64, usize, f64)> = Vec::new();
    for (k, f) in process.features.iter().enumerate() {
        let steps = feature_steps(f, horizon, rng);
        x.push(steps[0].1);
        changes.extend(steps[1..].iter().map(|&(t, v)| (t, k, v)));
    }
    changes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut epochs = Vec::with_capacity(changes.len() + 1);
    let mut start = 0.0;
    for (t, k, v) in changes {
        if t > start {
            epochs.push(Epoch::observed(start, t, x.clone()));
            start = t;
        }
        x[k] = v;
    }
    epochs.push(Epoch::observed(start, horizon, x));
    epochs
}

/// Change points `(time, value)` of one feature, starting at time 0.
fn feature_steps<R: Rng + ?Sized>(f: &FeatureProcess, horizon: f64, rng: &mut R) -> Vec<(f64, f64)> {
    let dist = Normal::new(f.mean, f.sd).expect("validated sd");
    let mut base = vec![(0.0, dist.sample(rng))];
    for t in poisson_times(f.jump_rate, horizon, rng) {
        let old = base.last().unwrap().1;
        let v = if f.persistence == 0.0 {
            dist.sample(rng)
        } else {
            let z: f64 = StandardNormal.sample(rng);
            f.mean + f.persistence * (old - f.mean) + f.sd * (1.0 - f.persistence.powi(2)).sqrt() * z
        };
        base.push((t, v));
    }
    if f.spike_rate <= 0.0 {
        return base;
    }

    // An excursion lasts until it ends or the next one begins.
    let onsets = poisson_times(f.spike_rate, horizon, rng);
    let mut spikes = Vec::with_capacity(onsets.len());
    for (j, &s) in onsets.iter().enumerate() {
        let d: f64 = Exp1.sample(rng);
        let z: f64 = StandardNormal.sample(rng);
        let next = onsets.get(j + 1).copied().unwrap_or(horizon);
        spikes.push((s, (s + d * f.spike_hours).min(next), f.spike_size * z.abs()));
    }
    let base_at = |t: f64| base[base.partition_point(|b| b.0 <= t) - 1].1;
    let mut bounds: Vec<f64> = base.iter().map(|b| b.0).collect();
    for &(s, e, _) in &spikes {
        bounds.push(s);
        if e < horizon {
            bounds.push(e);
        }
    }
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();
    bounds
        .into_iter()
        .map(|t| {
            let j = spikes.partition_point(|sp| sp.0 <= t);
            let lift = match j.checked_sub(1).map(|j| spikes[j]) {
                Some((_, e, up)) if t < e => up,
                _ => 0.0,
            };
            (t, base_at(t) + lift)
        })
        .collect()
}

fn poisson_times<R: Rng + ?Sized>(rate: f64, horizon: f64, rng: &mut R) -> Vec<f64> {
    let mut times = Vec::new();
    if rate <= 0.0 {
        return times;
    }
    let mut t = 0.0;
    loop {
        let gap: f64 = Exp1.sample(rng);
        t += gap / rate;
        if t >= horizon {
            return times;
        }
        times.push(t);
    }
}

/// Event time by inversion of the cumulative hazard: returns `(T, event)`,
/// with `T = censor_time` and `event = false` when `Λ` stays below the
/// Exponential(1) draw up to censoring.
pub fn sample_event_time<R: Rng + ?Sized>(spec: &HazardSpec, epochs: &[Epoch], rng: &mut R) -> (f64, bool) {
    let target: f64 = Exp1.sample(rng);
    let mut cum = 0.0;
    for (a, b, rate) in spec.pieces(epochs) {
        if a >= spec.censor_time {
            break;
        }
        let piece = rate * (b - a);
        if cum + piece >= target && rate > 0.0 {
            let mut t = a + (target - cum) / rate;
            if t <= a {
                t = a.next_up();
            }
            return if t <= spec.censor_time {
                (t, true)
            } else {
                (spec.censor_time, false)
            };
        }
        cum += piece;
    }
    let end = epochs.last().map_or(spec.censor_time, |e| e.t_end);
    (end.min(spec.censor_time), false)
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub feature_names: Vec<String>,
    pub trajectories: Vec<Trajectory>,
    /// Ground truth: `spec.hazard(t, x)` is the exact hazard.
    pub spec: HazardSpec,
    pub seed: u64,
}

pub fn stay_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn feature_names(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("x{i}")).collect()
}

pub fn generate_dataset(
    spec: &HazardSpec,
    process: &CovariateProcess,
    n_stays: usize,
    seed: u64,
) -> Result<SimulatedData> {
    if n_stays == 0 {
        return Err(invalid("need at least one stay"));
    }
    let k = process.features.len();
    spec.validate(k)?;
    process.validate()?;
    let width = n_stays.to_string().len().max(6);
    let trajectories = (0..n_stays)
        .into_par_iter()
        .map(|i| {
            let mut rng = stay_rng(seed, i as u64);
            let path = sample_covariate_path(process, spec.censor_time, &mut rng);
            let (t, event) = sample_event_time(spec, &path, &mut rng);
            Trajectory::new(
                format!("{:0width$}", i + 1),
                format!("P{:0width$}", i + 1),
                clip_epochs(&path, t),
                event,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatedData {
        feature_names: feature_names(k),
        trajectories,
        spec: spec.clone(),
        seed,
    })
}

/// Ground-truth grid dump `t,x1..xK,lambda` over `times × x1_values`, other
/// features held at zero.
pub fn write_truth<W: Write>(
    mut out: W,
    spec: &HazardSpec,
    feature_names: &[String],
    times: &[f64],
    x1_values: &[f64],
) -> Result<()> {
    writeln!(out, "t,{},lambda", feature_names.join(","))?;
    let mut x = vec![0.0; feature_names.len()];
    for &t in times {
        for &v in x1_values {
            if let Some(first) = x.first_mut() {
                *first = v;
            }
            let cols: Vec<String> = x.iter().map(f64::to_string).collect();
            writeln!(out, "{t},{},{}", cols.join(","), spec.hazard(t, &x))?;
        }
    }
    Ok(())
}
