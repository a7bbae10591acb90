//! Line-oriented text model files.
//!
//! ```text
//! hazboost-model v1
//! base_score -4.2
//! learning_rate 0.1
//! params num_trees=75 max_depth=2 reg_lambda=1 min_child_hessian=0.001 max_bins=256
//! time_grid 3 1.5 7.25 30
//! features 2
//! feature Heart Rate
//! feature pH
//! trees 1
//! tree 0 3 2
//! split -1 7.25 1 2 1
//! leaf -0.3
//! leaf 0.2
//! end
//! ```
//!
//! Floats are written in shortest round-trip form, so loading a saved model
//! reproduces its predictions bit for bit. `split` fields are
//! `coord threshold left right default_left` with coord −1 for time.
//! Cox files start with `hazboost-cox v1` and carry one `beta` line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::boost::{BoostParams, Coord, HazardModel, Node, Tree};
use crate::cox::CoxModel;
use crate::data::Trajectory;
use crate::error::{Error, Result};
use crate::flag::{RiskModel, RiskPath};

pub const HAZARD_MAGIC: &str = "hazboost-model v1";
pub const COX_MAGIC: &str = "hazboost-cox v1";

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Boost(HazardModel),
    Cox(CoxModel),
}

impl AnyModel {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Boost(_) => "boost",
            AnyModel::Cox(_) => "cox",
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            AnyModel::Boost(m) => &m.feature_names,
            AnyModel::Cox(m) => &m.feature_names,
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            AnyModel::Boost(m) => hazard_model_to_text(m),
            AnyModel::Cox(m) => cox_model_to_text(m),
        }
    }
}

impl RiskModel for AnyModel {
    fn risk_path(&self, traj: &Trajectory) -> Result<RiskPath> {
        match self {
            AnyModel::Boost(m) => m.risk_path(traj),
            AnyModel::Cox(m) => m.risk_path(traj),
        }
    }
}

pub fn hazard_model_to_text(m: &HazardModel) -> String {
    let mut s = String::new();
    let p = &m.params;
    let _ = writeln!(s, "{HAZARD_MAGIC}");
    let _ = writeln!(s, "base_score {}", m.base_score);
    let _ = writeln!(s, "learning_rate {}", m.learning_rate);
    let _ = writeln!(
        s,
        "params num_trees={} max_depth={} reg_lambda={} min_child_hessian={} max_bins={}",
        p.num_trees, p.max_depth, p.reg_lambda, p.min_child_hessian, p.max_bins
    );
    let _ = write!(s, "time_grid {}", m.time_grid.len());
    for g in &m.time_grid {
        let _ = write!(s, " {g}");
    }
    s.push('\n');
    write_features(&mut s, &m.feature_names);
    let _ = writeln!(s, "trees {}", m.trees.len());
    for (i, tree) in m.trees.iter().enumerate() {
        let _ = writeln!(s, "tree {i} {} {}", tree.nodes.len(), tree.max_depth);
        for node in &tree.nodes {
            match node {
                Node::Split {
                    coord,
                    threshold,
                    left,
                    right,
                    default_left,
                } => {
                    let _ = writeln!(
                        s,
                        "split {} {threshold} {left} {right} {}",
                        coord.to_index(),
                        u8::from(*default_left)
                    );
                }
                Node::Leaf { value } => {
                    let _ = writeln!(s, "leaf {value}");
                }
            }
        }
    }
    s.push_str("end\n");
    s
}

pub fn cox_model_to_text(m: &CoxModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{COX_MAGIC}");
    let _ = writeln!(s, "iterations {}", m.iterations);
    let _ = writeln!(s, "grad_norm {}", m.grad_norm);
    write_features(&mut s, &m.feature_names);
    s.push_str("beta");
    for b in &m.beta {
        let _ = write!(s, " {b}");
    }
    s.push('\n');
    s.push_str("end\n");
    s
}

fn write_features(s: &mut String, names: &[String]) {
    let _ = writeln!(s, "features {}", names.len());
    for f in names {
        let _ = writeln!(s, "feature {f}");
    }
}

pub fn save_model(model: &AnyModel, path: &Path) -> Result<()> {
    fs::write(path, model.to_text())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    let bytes = fs::read(path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Format(format!("model file is not UTF-8 (byte {})", e.utf8_error().valid_up_to())))?;
    parse_model(&text)
}

pub fn parse_model(text: &str) -> Result<AnyModel> {
    let mut lines = Lines::new(text);
    let (offset, magic) = lines.next_line()?;
    match magic {
        HAZARD_MAGIC => parse_hazard(&mut lines).map(AnyModel::Boost),
        COX_MAGIC => parse_cox(&mut lines).map(AnyModel::Cox),
        other if other.starts_with("hazboost-") => Err(Error::Format(format!(
            "byte {offset}: unsupported model format `{other}`"
        ))),
        _ => Err(Error::Format(format!("byte {offset}: not a hazboost model file"))),
    }
}

/// Line reader that remembers the byte offset of each line.
struct Lines<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines { text, pos: 0 }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        if self.pos >= self.text.len() {
            return Err(Error::Format(format!(
                "byte {}: unexpected end of model file",
                self.text.len()
            )));
        }
        let start = self.pos;
        let rest = &self.text[start..];
        let Some(nl) = rest.find('\n') else {
            // The writer terminates every line; a missing newline means truncation.
            return Err(Error::Format(format!(
                "byte {}: unexpected end of model file inside a line",
                self.text.len()
            )));
        };
        self.pos = start + nl + 1;
        Ok((start, rest[..nl].trim_end_matches('\r')))
    }

    /// Next line, which must start with `key `; returns the remainder.
    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (offset, line) = self.next_line()?;
        let rest = line
            .strip_prefix(key)
            .and_then(|r| if r.is_empty() { Some(r) } else { r.strip_prefix(' ') })
            .ok_or_else(|| Error::Format(format!("byte {offset}: expected `{key}`, found `{line}`")))?;
        Ok((offset, rest))
    }
}

fn parse_at<T: FromStr>(offset: usize, field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("byte {offset}: invalid {what} `{field}`")))
}

fn fields<'a, const N: usize>(offset: usize, rest: &'a str, what: &str) -> Result<[&'a str; N]> {
    let parts: Vec<&str> = rest.split(' ').collect();
    parts
        .try_into()
        .map_err(|_| Error::Format(format!("byte {offset}: expected {N} fields in {what}")))
}

fn parse_counted_floats(offset: usize, rest: &str, what: &str) -> Result<Vec<f64>> {
    let mut parts = rest.split(' ');
    let n: usize = parse_at(offset, parts.next().unwrap_or(""), what)?;
    let vals = parts
        .map(|p| parse_at::<f64>(offset, p, what))
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != n {
        return Err(Error::Format(format!(
            "byte {offset}: {what} declares {n} values but has {}",
            vals.len()
        )));
    }
    Ok(vals)
}

fn parse_features(lines: &mut Lines<'_>) -> Result<Vec<String>> {
    let (offset, rest) = lines.keyed("features")?;
    let n: usize = parse_at(offset, rest, "feature count")?;
    (0..n)
        .map(|_| lines.keyed("feature").map(|(_, name)| name.to_string()))
        .collect()
}

fn parse_params(offset: usize, rest: &str) -> Result<BoostParams> {
    let mut p = BoostParams::default();
    for kv in rest.split(' ') {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("byte {offset}: malformed parameter `{kv}`")))?;
        match k {
            "num_trees" => p.num_trees = parse_at(offset, v, k)?,
            "max_depth" => p.max_depth = parse_at(offset, v, k)?,
            "reg_lambda" => p.reg_lambda = parse_at(offset, v, k)?,
            "min_child_hessian" => p.min_child_hessian = parse_at(offset, v, k)?,
            "max_bins" => p.max_bins = parse_at(offset, v, k)?,
            _ => return Err(Error::Format(format!("byte {offset}: unknown parameter `{k}`"))),
        }
    }
    Ok(p)
}

fn parse_hazard(lines: &mut Lines<'_>) -> Result<HazardModel> {
    let (o, r) = lines.keyed("base_score")?;
    let base_score: f64 = parse_at(o, r, "base_score")?;
    let (o, r) = lines.keyed("learning_rate")?;
    let learning_rate: f64 = parse_at(o, r, "learning_rate")?;
    let (o, r) = lines.keyed("params")?;
    let mut params = parse_params(o, r)?;
    params.learning_rate = learning_rate;
    let (o, r) = lines.keyed("time_grid")?;
    let time_grid = parse_counted_floats(o, r, "time_grid")?;
    let feature_names = parse_features(lines)?;
    let (o, r) = lines.keyed("trees")?;
    let n_trees: usize = parse_at(o, r, "tree count")?;

    let mut trees = Vec::with_capacity(n_trees);
    for i in 0..n_trees {
        let (o, r) = lines.keyed("tree")?;
        let [idx, n_nodes, depth] = fields::<3>(o, r, "tree header")?;
        if parse_at::<usize>(o, idx, "tree index")? != i {
            return Err(Error::Format(format!("byte {o}: expected tree {i}")));
        }
        let n_nodes: usize = parse_at(o, n_nodes, "node count")?;
        let max_depth: usize = parse_at(o, depth, "tree depth")?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let (o, line) = lines.next_line()?;
            let node = if let Some(r) = line.strip_prefix("leaf ") {
                Node::Leaf {
                    value: parse_at(o, r, "leaf value")?,
                }
            } else if let Some(r) = line.strip_prefix("split ") {
                let [c, th, l, rt, dl] = fields::<5>(o, r, "split")?;
                let coord = Coord::from_index(parse_at(o, c, "split coordinate")?)
                    .ok_or_else(|| Error::Format(format!("byte {o}: invalid split coordinate `{c}`")))?;
                Node::Split {
                    coord,
                    threshold: parse_at(o, th, "threshold")?,
                    left: parse_at(o, l, "left child")?,
                    right: parse_at(o, rt, "right child")?,
                    default_left: match dl {
                        "0" => false,
                        "1" => true,
                        _ => return Err(Error::Format(format!("byte {o}: default_left must be 0 or 1"))),
                    },
                }
            } else {
                return Err(Error::Format(format!("byte {o}: expected `split` or `leaf`, found `{line}`")));
            };
            nodes.push(node);
        }
        trees.push(Tree { nodes, max_depth });
    }
    lines.keyed("end")?;
    let model = HazardModel {
        base_score,
        learning_rate,
        time_grid,
        feature_names,
        trees,
        params,
    };
    model.check_consistent()?;
    Ok(model)
}

fn parse_cox(lines: &mut Lines<'_>) -> Result<CoxModel> {
    let (o, r) = lines.keyed("iterations")?;
    let iterations = parse_at(o, r, "iterations")?;
    let (o, r) = lines.keyed("grad_norm")?;
    let grad_norm = parse_at(o, r, "grad_norm")?;
    let feature_names = parse_features(lines)?;
    let (o, r) = lines.keyed("beta")?;
    let beta = if r.is_empty() {
        Vec::new()
    } else {
        r.split(' ')
            .map(|v| parse_at::<f64>(o, v, "coefficient"))
            .collect::<Result<Vec<_>>>()?
    };
    if beta.len() != feature_names.len() || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Format(format!(
            "byte {o}: expected {} finite coefficients",
            feature_names.len()
        )));
    }
    lines.keyed("end")?;
    Ok(CoxModel {
        beta,
        feature_names,
        iterations,
        grad_norm,
    })
}
