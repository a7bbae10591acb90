use rayon::prelude::*;

use super::quantile::Candidates;
use super::table::{TrainingTable, MISSING_BIN};
use crate::data::SubEpoch;

/// Split coordinate: the time axis or a covariate index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coord {
    Time,
    Feature(usize),
}

impl Coord {
    /// Wire encoding: −1 for time, the feature index otherwise.
    pub fn to_index(self) -> i64 {
        match self {
            Coord::Time => -1,
            Coord::Feature(k) => k as i64,
        }
    }

    pub fn from_index(i: i64) -> Option<Self> {
        match i {
            -1 => Some(Coord::Time),
            k if k >= 0 => Some(Coord::Feature(k as usize)),
            _ => None,
        }
    }

    fn from_internal(c: usize) -> Self {
        if c == 0 {
            Coord::Time
        } else {
            Coord::Feature(c - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Values `< threshold` go left; missing values follow `default_left`.
    Split {
        coord: Coord,
        threshold: f64,
        left: usize,
        right: usize,
        default_left: bool,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub max_depth: usize,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
            max_depth: 0,
        }
    }

    /// Output of the tree at `(t, x)`, NaN entries of `x` being missing.
    #[inline]
    pub fn predict(&self, t: f64, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    coord,
                    threshold,
                    left,
                    right,
                    default_left,
                } => {
                    let v = match coord {
                        Coord::Time => t,
                        Coord::Feature(k) => x[*k],
                    };
                    let go_left = if v.is_nan() {
                        *default_left
                    } else {
                        v < *threshold
                    };
                    idx = if go_left { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Largest feature index referenced by any split.
    pub(crate) fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split {
                    coord: Coord::Feature(k),
                    ..
                } => Some(*k),
                _ => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    /// L2 penalty on leaf values.
    pub reg_lambda: f64,
    pub min_child_hessian: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 2,
            reg_lambda: 1.0,
            min_child_hessian: 1e-3,
        }
    }
}

#[inline]
pub(crate) fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let g = gl + gr;
    let h = hl + hr;
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda))
}

/// Grows one tree on gradient/hessian pairs of the given sub-epochs.
pub fn build_tree(
    g: &[f64],
    h: &[f64],
    subs: &[SubEpoch<'_>],
    candidates: &Candidates,
    params: &TreeParams,
) -> Tree {
    assert_eq!(g.len(), subs.len());
    assert_eq!(h.len(), subs.len());
    let table = TrainingTable::new(subs, candidates);
    build_on_table(&table, candidates, g, h, params).0
}

#[derive(Debug, Clone, Copy)]
struct BestSplit {
    coord: usize,
    cut: usize,
    missing_left: bool,
    gain: f64,
}

struct Pending {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
}

/// Returns the tree and, for every row of the table, the leaf value it lands in.
pub(crate) fn build_on_table(
    table: &TrainingTable,
    candidates: &Candidates,
    g: &[f64],
    h: &[f64],
    params: &TreeParams,
) -> (Tree, Vec<f64>) {
    let n = table.len();
    let mut rows: Vec<u32> = (0..n as u32).collect();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut row_values = vec![0.0; n];
    let mut queue = std::collections::VecDeque::from([Pending {
        node: 0,
        start: 0,
        end: n,
        depth: 0,
    }]);
    let mut scratch: Vec<u32> = Vec::with_capacity(n);

    while let Some(p) = queue.pop_front() {
        let node_rows = &rows[p.start..p.end];
        let (sum_g, sum_h) = sums(node_rows, g, h);
        let best = if p.depth < params.max_depth {
            best_split(table, node_rows, g, h, sum_g, sum_h, params)
        } else {
            None
        };
        let Some(best) = best else {
            let value = -sum_g / (sum_h + params.reg_lambda);
            nodes[p.node] = Node::Leaf { value };
            for &r in node_rows {
                row_values[r as usize] = value;
            }
            continue;
        };

        let col = &table.bins[best.coord];
        let goes_left = |r: u32| {
            let b = col[r as usize];
            if b == MISSING_BIN {
                best.missing_left
            } else {
                (b as usize) < best.cut
            }
        };
        scratch.clear();
        scratch.extend(node_rows.iter().copied().filter(|&r| goes_left(r)));
        let n_left = scratch.len();
        scratch.extend(node_rows.iter().copied().filter(|&r| !goes_left(r)));
        rows[p.start..p.end].copy_from_slice(&scratch);

        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[p.node] = Node::Split {
            coord: Coord::from_internal(best.coord),
            threshold: candidates.coord(best.coord)[best.cut - 1],
            left,
            right,
            default_left: best.missing_left,
        };
        let mid = p.start + n_left;
        queue.push_back(Pending {
            node: left,
            start: p.start,
            end: mid,
            depth: p.depth + 1,
        });
        queue.push_back(Pending {
            node: right,
            start: mid,
            end: p.end,
            depth: p.depth + 1,
        });
    }

    (
        Tree {
            nodes,
            max_depth: params.max_depth,
        },
        row_values,
    )
}

fn sums(rows: &[u32], g: &[f64], h: &[f64]) -> (f64, f64) {
    let mut sg = 0.0;
    let mut sh = 0.0;
    for &r in rows {
        sg += g[r as usize];
        sh += h[r as usize];
    }
    (sg, sh)
}

/// Best split over all coordinates. Each coordinate is scanned by a single
/// worker and candidates are compared in coordinate order, so the result does
/// not depend on the thread count. Ties keep the earliest candidate.
fn best_split(
    table: &TrainingTable,
    rows: &[u32],
    g: &[f64],
    h: &[f64],
    sum_g: f64,
    sum_h: f64,
    params: &TreeParams,
) -> Option<BestSplit> {
    let per_coord: Vec<Option<BestSplit>> = (0..table.bins.len())
        .into_par_iter()
        .map(|c| best_split_for_coord(table, c, rows, g, h, sum_g, sum_h, params))
        .collect();
    let mut best: Option<BestSplit> = None;
    for cand in per_coord.into_iter().flatten() {
        if best.is_none_or(|b| cand.gain > b.gain) {
            best = Some(cand);
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn best_split_for_coord(
    table: &TrainingTable,
    c: usize,
    rows: &[u32],
    g: &[f64],
    h: &[f64],
    sum_g: f64,
    sum_h: f64,
    params: &TreeParams,
) -> Option<BestSplit> {
    let nb = table.n_bins[c];
    if nb == 0 {
        return None;
    }
    let col = &table.bins[c];
    let mut hist_g = vec![0.0; nb + 1];
    let mut hist_h = vec![0.0; nb + 1];
    let (mut miss_g, mut miss_h) = (0.0, 0.0);
    let mut n_missing = 0usize;
    for &r in rows {
        let r = r as usize;
        let b = col[r];
        if b == MISSING_BIN {
            miss_g += g[r];
            miss_h += h[r];
            n_missing += 1;
        } else {
            hist_g[b as usize] += g[r];
            hist_h[b as usize] += h[r];
        }
    }
    let present_g = sum_g - miss_g;
    let present_h = sum_h - miss_h;
    let lambda = params.reg_lambda;
    let min_h = params.min_child_hessian;
    let sides: &[bool] = if n_missing > 0 { &[true, false] } else { &[true] };

    let mut best: Option<BestSplit> = None;
    let (mut gl, mut hl) = (0.0, 0.0);
    for cut in 1..=nb {
        gl += hist_g[cut - 1];
        hl += hist_h[cut - 1];
        if hist_h[cut - 1] == 0.0 && cut > 1 {
            // Empty bin: same partition as the previous cut.
            continue;
        }
        let gr = present_g - gl;
        let hr = present_h - hl;
        for &missing_left in sides {
            let (l_g, l_h, r_g, r_h) = if missing_left {
                (gl + miss_g, hl + miss_h, gr, hr)
            } else {
                (gl, hl, gr + miss_g, hr + miss_h)
            };
            if l_h < min_h || r_h < min_h {
                continue;
            }
            let gain = split_gain(l_g, l_h, r_g, r_h, lambda);
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                best = Some(BestSplit {
                    coord: c,
                    cut,
                    missing_left,
                    gain,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{subdivide_epochs, Epoch, Trajectory};

    fn stump(coord: Coord, threshold: f64, l: f64, r: f64) -> Tree {
        Tree {
            nodes: vec![
                Node::Split {
                    coord,
                    threshold,
                    left: 1,
                    right: 2,
                    default_left: false,
                },
                Node::Leaf { value: l },
                Node::Leaf { value: r },
            ],
            max_depth: 1,
        }
    }

    #[test]
    fn routing_and_missing_values() {
        let t = stump(Coord::Feature(0), 1.0, -1.0, 2.0);
        assert_eq!(t.predict(0.0, &[0.5]), -1.0);
        assert_eq!(t.predict(0.0, &[1.0]), 2.0);
        assert_eq!(t.predict(0.0, &[f64::NAN]), 2.0);
        let t = stump(Coord::Time, 24.0, 0.0, 1.0);
        assert_eq!(t.predict(23.999, &[0.0]), 0.0);
        assert_eq!(t.predict(24.0, &[0.0]), 1.0);
        assert_eq!(t.depth(), 1);
        assert_eq!(t.n_leaves(), 2);
    }

    #[test]
    fn coord_wire_encoding() {
        assert_eq!(Coord::from_index(-1), Some(Coord::Time));
        assert_eq!(Coord::from_index(3), Some(Coord::Feature(3)));
        assert_eq!(Coord::from_index(-2), None);
        assert_eq!(Coord::Feature(4).to_index(), 4);
    }

    #[test]
    fn no_useful_split_gives_single_leaf() {
        let trajs: Vec<Trajectory> = (0..4)
            .map(|i| {
                Trajectory::new(i.to_string(), i.to_string(), vec![Epoch::observed(0.0, 2.0, vec![1.0])], true)
                    .unwrap()
            })
            .collect();
        let subs: Vec<_> = trajs
            .iter()
            .flat_map(|t| subdivide_epochs(t, &[]).unwrap())
            .collect();
        let cands = Candidates {
            time: vec![],
            features: vec![vec![]],
        };
        let g = vec![0.5; 4];
        let h = vec![1.5; 4];
        let tree = build_tree(&g, &h, &subs, &cands, &TreeParams::default());
        assert_eq!(tree.nodes, vec![Node::Leaf { value: -2.0 / (6.0 + 1.0) }]);
    }

    #[test]
    fn depth_budget_bounds_leaves() {
        let trajs: Vec<Trajectory> = (0..40)
            .map(|i| {
                let x = i as f64;
                Trajectory::new(
                    i.to_string(),
                    i.to_string(),
                    vec![Epoch::observed(0.0, 1.0 + (i % 7) as f64, vec![x, -x])],
                    i % 3 == 0,
                )
                .unwrap()
            })
            .collect();
        let cands = super::super::quantile::quantile_candidates(&trajs, 256);
        let subs: Vec<_> = trajs
            .iter()
            .flat_map(|t| subdivide_epochs(t, &cands.time).unwrap())
            .collect();
        let g: Vec<f64> = subs
            .iter()
            .map(|s| s.duration() * 0.2 - f64::from(u8::from(s.delta)))
            .collect();
        let h: Vec<f64> = subs.iter().map(|s| s.duration() * 0.2).collect();
        for depth in 0..4 {
            let params = TreeParams {
                max_depth: depth,
                ..TreeParams::default()
            };
            let tree = build_tree(&g, &h, &subs, &cands, &params);
            assert!(tree.n_leaves() <= 1 << depth);
            assert!(tree.depth() <= depth);
        }
    }
}
