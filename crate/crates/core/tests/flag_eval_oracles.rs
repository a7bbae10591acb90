mod common;

use common::{names, random_dataset, rng};
use hazboost::boost::{fit, BoostParams};
use hazboost::cox::{fit_cox, CoxOptions};
use hazboost::eval::{auc_prc, auc_roc, sweep};
use hazboost::flag::{criterion_score, flag, flag_instant, flag_window, Criterion, RiskModel, RiskPath};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Grid resolution of the brute-force scans: 1000 cells per hour. Paths put
/// their breakpoints on quarter hours so every jump lands on a cell edge.
const CELLS: i64 = 1000;
const QUARTER: i64 = CELLS / 4;

/// Step path in integer cell units.
struct Lattice {
    starts: Vec<i64>,
    values: Vec<f64>,
    end: i64,
}

impl Lattice {
    fn random(r: &mut ChaCha8Rng) -> Self {
        let n = r.random_range(1..12);
        let mut starts = vec![0];
        for _ in 1..n {
            let prev = *starts.last().unwrap();
            starts.push(prev + QUARTER * r.random_range(1..16));
        }
        let end = starts.last().unwrap() + QUARTER * r.random_range(1..40);
        let values = (0..n).map(|_| r.random_range(0..6) as f64).collect();
        Lattice { starts, values, end }
    }

    fn value(&self, cell: i64) -> f64 {
        let k = self.starts.iter().rposition(|&s| s <= cell).unwrap();
        self.values[k]
    }

    fn path(&self, id: usize) -> RiskPath {
        let hours = |c: i64| c as f64 / CELLS as f64;
        RiskPath::new(
            format!("s{id}"),
            self.starts.iter().map(|&c| hours(c)).collect(),
            self.values.clone(),
            hours(self.end),
        )
        .unwrap()
    }

    fn scan_instant(&self, rho: f64) -> Option<f64> {
        (0..self.end)
            .find(|&c| self.value(c) > rho)
            .map(|c| c as f64 / CELLS as f64)
    }

    fn scan_window(&self, rho: f64, w: i64) -> Option<f64> {
        // run = number of consecutive cells above rho ending just before c.
        let mut run = 0;
        for c in 0..=self.end {
            if run >= w && c >= w {
                return Some(c as f64 / CELLS as f64);
            }
            if c < self.end {
                run = if self.value(c) > rho { run + 1 } else { 0 };
            }
        }
        None
    }

    /// Largest minimum over windows of `w` cells inside the stay.
    fn scan_window_score(&self, w: i64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for s in (0..=self.end - w).step_by(QUARTER as usize) {
            let m = (s..s + w).map(|c| self.value(c)).fold(f64::INFINITY, f64::min);
            best = best.max(m);
        }
        best
    }
}

fn thresholds() -> Vec<f64> {
    (-1..=12).map(|i| i as f64 * 0.5).collect()
}

fn fixtures(seed: u64, n: usize) -> Vec<Lattice> {
    let mut r = rng(seed);
    (0..n).map(|_| Lattice::random(&mut r)).collect()
}

#[test]
fn flags_match_dense_scans() {
    let mut r = rng(99);
    for (i, lat) in fixtures(1, 1000).iter().enumerate() {
        let path = lat.path(i);
        let w_quarters = r.random_range(1..40);
        let w = w_quarters as f64 / 4.0;
        for rho in thresholds() {
            assert_eq!(flag_instant(&path, rho), lat.scan_instant(rho), "path {i} rho {rho}");
            let got = flag_window(&path, rho, w);
            let want = lat.scan_window(rho, w_quarters * QUARTER);
            match (got, want) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "path {i} rho {rho} w {w}: {a} vs {b}"),
                (a, b) => assert_eq!(a, b, "path {i} rho {rho} w {w}"),
            }
        }
    }
}

#[test]
fn flags_move_later_as_rho_rises() {
    for (i, lat) in fixtures(2, 1000).iter().enumerate() {
        let path = lat.path(i);
        let ths = thresholds();
        for c in [Criterion::Instant, Criterion::Window { hours: 8.0 }, Criterion::Window { hours: 1.25 }] {
            for (a, &lo) in ths.iter().enumerate() {
                for &hi in &ths[a + 1..] {
                    match (flag(&path, lo, c), flag(&path, hi, c)) {
                        (_, None) => {}
                        (Some(t_lo), Some(t_hi)) => assert!(t_lo <= t_hi),
                        (None, Some(_)) => panic!("path {i}: flagged at {hi} but not at {lo}"),
                    }
                }
            }
        }
    }
}

#[test]
fn window_flags_trail_instant_and_shorter_windows() {
    for (i, lat) in fixtures(3, 1000).iter().enumerate() {
        let path = lat.path(i);
        for rho in thresholds() {
            let instant = flag_instant(&path, rho);
            let windows = [0.25, 1.0, 4.0, 8.0, 12.5];
            let flags: Vec<Option<f64>> = windows.iter().map(|&w| flag_window(&path, rho, w)).collect();
            for (&w, t) in windows.iter().zip(&flags) {
                if let Some(t) = t {
                    assert!(instant.unwrap() <= t - w + 1e-12, "path {i}");
                }
            }
            for a in 0..windows.len() {
                for b in a + 1..windows.len() {
                    if let Some(tb) = flags[b] {
                        let ta = flags[a].expect("longer window fired before shorter");
                        assert!(ta <= tb - (windows[b] - windows[a]) + 1e-12);
                    }
                }
            }
            // A vanishing window is the instant rule shifted by the window.
            let tiny = flag_window(&path, rho, 1e-9);
            assert_eq!(tiny.is_some(), instant.is_some());
            if let (Some(a), Some(b)) = (tiny, instant) {
                assert!((a - b - 1e-9).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn criterion_score_separates_flagged_from_unflagged() {
    for (i, lat) in fixtures(4, 500).iter().enumerate() {
        let path = lat.path(i);
        for c in [Criterion::Instant, Criterion::Window { hours: 8.0 }] {
            let s = criterion_score(&path, c);
            for rho in thresholds() {
                assert_eq!(flag(&path, rho, c).is_some(), s > rho, "path {i} {c} rho {rho}");
            }
        }
        let w = 8 * CELLS;
        if lat.end >= w {
            assert_eq!(criterion_score(&path, Criterion::Window { hours: 8.0 }), lat.scan_window_score(w));
        } else {
            assert_eq!(criterion_score(&path, Criterion::Window { hours: 8.0 }), f64::NEG_INFINITY);
        }
    }
}

fn labelled(seed: u64, n: usize) -> (Vec<Lattice>, Vec<bool>) {
    let lats = fixtures(seed, n);
    let mut r = rng(seed + 1000);
    let mut labels: Vec<bool> = lats.iter().map(|_| r.random_bool(0.3)).collect();
    labels[0] = true;
    labels[1] = false;
    (lats, labels)
}

fn oracle_score(lat: &Lattice, c: Criterion) -> f64 {
    match c {
        Criterion::Instant => lat.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Criterion::Window { hours } => {
            let w = (hours * CELLS as f64) as i64;
            if lat.end < w {
                f64::NEG_INFINITY
            } else {
                lat.scan_window_score(w)
            }
        }
    }
}

#[test]
fn sweep_counts_match_brute_force() {
    for seed in 0..20 {
        let (lats, labels) = labelled(10 + seed, 60);
        let paths: Vec<RiskPath> = lats.iter().enumerate().map(|(i, l)| l.path(i)).collect();
        for c in [Criterion::Instant, Criterion::Window { hours: 8.0 }] {
            let curve = sweep(&paths, &labels, c).unwrap();
            for p in &curve.points {
                let (mut tp, mut fp) = (0, 0);
                for (path, &l) in paths.iter().zip(&labels) {
                    let hit = p.threshold == f64::NEG_INFINITY || flag(path, p.threshold, c).is_some();
                    if hit && l {
                        tp += 1;
                    } else if hit {
                        fp += 1;
                    }
                }
                assert_eq!((p.tp, p.fp), (tp, fp), "threshold {}", p.threshold);
            }
        }
    }
}

#[test]
fn roc_area_equals_pair_counting() {
    for seed in 0..50 {
        let (lats, labels) = labelled(100 + seed, 40);
        let paths: Vec<RiskPath> = lats.iter().enumerate().map(|(i, l)| l.path(i)).collect();
        for c in [Criterion::Instant, Criterion::Window { hours: 8.0 }] {
            let scores: Vec<f64> = lats.iter().map(|l| oracle_score(l, c)).collect();
            let (mut wins, mut pairs) = (0.0, 0.0);
            for (sp, &lp) in scores.iter().zip(&labels) {
                for (sn, &ln) in scores.iter().zip(&labels) {
                    if lp && !ln {
                        pairs += 1.0;
                        if sp > sn {
                            wins += 1.0;
                        } else if sp == sn {
                            wins += 0.5;
                        }
                    }
                }
            }
            let curve = sweep(&paths, &labels, c).unwrap();
            let auc = auc_roc(&curve).unwrap();
            assert!((auc - wins / pairs).abs() < 1e-12, "seed {seed} {c}: {auc} vs {}", wins / pairs);
        }
    }
}

fn average_precision(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &s in &distinct {
        let tp = scores.iter().zip(labels).filter(|(x, &l)| **x >= s && l).count() as f64;
        let flagged = scores.iter().filter(|x| **x >= s).count() as f64;
        let recall = tp / positives;
        ap += (recall - prev_recall) * (tp / flagged);
        prev_recall = recall;
    }
    ap
}

#[test]
fn prc_area_equals_direct_average_precision() {
    for seed in 0..50 {
        let (lats, labels) = labelled(200 + seed, 40);
        let paths: Vec<RiskPath> = lats.iter().enumerate().map(|(i, l)| l.path(i)).collect();
        for c in [Criterion::Instant, Criterion::Window { hours: 8.0 }] {
            let scores: Vec<f64> = lats.iter().map(|l| oracle_score(l, c)).collect();
            let curve = sweep(&paths, &labels, c).unwrap();
            let ap = auc_prc(&curve).unwrap();
            let oracle = average_precision(&scores, &labels);
            assert!((ap - oracle).abs() < 1e-12, "seed {seed} {c}: {ap} vs {oracle}");
        }
    }
}

#[test]
fn areas_are_invariant_under_monotone_transforms() {
    let (lats, labels) = labelled(300, 80);
    let paths: Vec<RiskPath> = lats.iter().enumerate().map(|(i, l)| l.path(i)).collect();
    let exp_paths: Vec<RiskPath> = paths
        .iter()
        .map(|p| {
            RiskPath::new(
                p.stay_id.clone(),
                p.breakpoints.clone(),
                p.values.iter().map(|v| v.exp()).collect(),
                p.end_time,
            )
            .unwrap()
        })
        .collect();
    for c in [Criterion::Instant, Criterion::Window { hours: 8.0 }] {
        let a = sweep(&paths, &labels, c).unwrap();
        let b = sweep(&exp_paths, &labels, c).unwrap();
        assert!((auc_roc(&a).unwrap() - auc_roc(&b).unwrap()).abs() < 1e-12);
        assert!((auc_prc(&a).unwrap() - auc_prc(&b).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn risk_paths_follow_the_models_pointwise() {
    let data = random_dataset(77, 40, 2, 0.2);
    let boost = fit(
        &data,
        &names(2),
        &BoostParams {
            num_trees: 20,
            max_depth: 2,
            ..BoostParams::default()
        },
    )
    .unwrap();
    let imputed: Vec<_> = data
        .iter()
        .map(|t| {
            let mut t = t.clone();
            for e in &mut t.epochs {
                e.missing.iter_mut().for_each(|m| *m = false);
            }
            t
        })
        .collect();
    let cox = fit_cox(&imputed, &names(2), &CoxOptions::default()).unwrap();
    let mut r = rng(3);
    for (traj, imp) in data.iter().zip(&imputed) {
        let bp = boost.risk_path(traj).unwrap();
        let cp = cox.risk_path(imp).unwrap();
        for _ in 0..200 {
            let t = r.random_range(0.0..traj.end_time);
            let e = traj.epoch_at(t);
            let want = boost.predict_log_hazard(t, &e.query()).unwrap().exp();
            assert_eq!(bp.value_at(t), want);
            let lin: f64 = imp.epoch_at(t).x.iter().zip(&cox.beta).map(|(x, b)| x * b).sum();
            assert!((cp.value_at(t) - lin).abs() < 1e-12);
        }
    }
}
