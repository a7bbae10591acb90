#![allow(dead_code)]

use hazboost::data::{Epoch, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random stay with up to `max_epochs` epochs over at most 50 hours. Each
/// feature becomes observed at a random epoch with probability `1 - p_missing`
/// at admission.
pub fn random_stay(rng: &mut ChaCha8Rng, id: usize, k: usize, max_epochs: usize, p_missing: f64) -> Trajectory {
    let n = rng.random_range(1..=max_epochs);
    let mut cuts: Vec<f64> = (0..n - 1).map(|_| rng.random_range(0.1..50.0)).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let end = cuts.last().copied().unwrap_or(0.0) + rng.random_range(0.1..10.0);
    let mut bounds = vec![0.0];
    bounds.extend(cuts);
    bounds.push(end);
    let n = bounds.len() - 1;
    let first_seen: Vec<usize> = (0..k)
        .map(|_| {
            if rng.random_bool(p_missing) {
                rng.random_range(1..=n)
            } else {
                0
            }
        })
        .collect();
    let epochs = (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let missing: Vec<bool> = first_seen.iter().map(|&f| i < f).collect();
            Epoch {
                t_start: bounds[i],
                t_end: bounds[i + 1],
                x,
                missing,
            }
        })
        .collect();
    Trajectory::new(format!("s{id:04}"), format!("p{id:04}"), epochs, rng.random_bool(0.3)).unwrap()
}

pub fn random_dataset(seed: u64, n: usize, k: usize, p_missing: f64) -> Vec<Trajectory> {
    let mut r = rng(seed);
    let mut data: Vec<Trajectory> = (0..n).map(|i| random_stay(&mut r, i, k, 6, p_missing)).collect();
    if !data.iter().any(|t| t.event) {
        data[0].event = true;
    }
    data
}

pub fn names(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("x{i}")).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
