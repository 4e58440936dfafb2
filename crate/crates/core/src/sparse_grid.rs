//! Smolyak sparse quadrature on `[-1, 1]^m` built from nested Gauss–Patterson
//! rules for the uniform density.
//!
//! The 1D family uses delayed growth: levels `0..=5` have `1, 3, 3, 7, 7, 7`
//! points, the smallest nested Gauss–Patterson rule whose polynomial
//! exactness reaches `2l + 1` at level `l`. With this family the Smolyak
//! construction in five dimensions has 11, 51, 151, 391 and 903 nodes at
//! levels 1 through 5 and integrates every polynomial of total degree
//! `<= 2L + 1` exactly.

#![allow(clippy::excessive_precision)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAX_LEVEL: usize = 5;

// Non-negative halves of the Gauss-Patterson rules, weights normalized to
// the density 1/2 on [-1, 1].
const GP3_NODES: [f64; 2] = [0.0, 0.774_596_669_241_483_377_035_9];
const GP3_WEIGHTS: [f64; 2] = [0.444_444_444_444_444_444_444_4, 0.277_777_777_777_777_777_777_8];
const GP7_NODES: [f64; 4] = [
    0.0,
    0.434_243_749_346_802_558_002_1,
    0.774_596_669_241_483_377_035_9,
    0.960_491_268_708_020_283_423_5,
];
const GP7_WEIGHTS: [f64; 4] = [
    0.225_458_269_329_237_071_172_6,
    0.200_698_707_387_981_111_452_5,
    0.134_244_044_934_166_720_364_3,
    0.052_328_113_013_233_632_596_91,
];

/// Nested 1D rule integrating against the uniform density on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule1D {
    pub level: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn symmetric_rule(level: usize, half_nodes: &[f64], half_weights: &[f64]) -> QuadratureRule1D {
    let mut nodes = Vec::with_capacity(2 * half_nodes.len() - 1);
    let mut weights = Vec::with_capacity(nodes.capacity());
    for (x, w) in half_nodes.iter().zip(half_weights).skip(1).rev() {
        nodes.push(-x);
        weights.push(*w);
    }
    nodes.extend_from_slice(half_nodes);
    weights.extend_from_slice(half_weights);
    QuadratureRule1D {
        level,
        nodes,
        weights,
    }
}

/// Delayed Gauss–Patterson rule of the given level.
pub fn rule_1d(level: usize) -> Result<QuadratureRule1D> {
    match level {
        0 => Ok(QuadratureRule1D {
            level,
            nodes: vec![0.0],
            weights: vec![1.0],
        }),
        1 | 2 => Ok(symmetric_rule(level, &GP3_NODES, &GP3_WEIGHTS)),
        3..=MAX_LEVEL => Ok(symmetric_rule(level, &GP7_NODES, &GP7_WEIGHTS)),
        _ => Err(Error::UnsupportedLevel {
            level,
            max: MAX_LEVEL,
        }),
    }
}

/// Smolyak nodes (rows, canonical coordinates) and combination weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrid {
    dim: usize,
    level: usize,
    nodes: Array2<f64>,
    weights: Vec<f64>,
}

// Coordinates rounded to 14 significant digits, as bit patterns, for dedup.
fn node_key(x: f64) -> u64 {
    let rounded: f64 = format!("{x:.13e}").parse().unwrap_or(x);
    if rounded == 0.0 {
        0.0f64.to_bits()
    } else {
        rounded.to_bits()
    }
}

#[derive(Clone)]
struct KeyedNode {
    coords: Vec<f64>,
    weight: f64,
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

// Level multi-indices with `lo <= sum <= hi`.
fn level_indices(dim: usize, lo: usize, hi: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, lo: usize) {
        if cur.len() == dim {
            if cur.iter().sum::<usize>() >= lo {
                out.push(cur.clone());
            }
            return;
        }
        for l in 0..=left {
            cur.push(l);
            rec(dim, left - l, cur, out, lo);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, hi, &mut Vec::with_capacity(dim), &mut out, lo);
    out
}

impl SparseGrid {
    /// Standard Smolyak combination of the delayed Gauss–Patterson family.
    pub fn new(dim: usize, level: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Precondition("sparse grid dimension must be >= 1".into()));
        }
        if level > MAX_LEVEL {
            return Err(Error::UnsupportedLevel {
                level,
                max: MAX_LEVEL,
            });
        }
        let rules: Vec<QuadratureRule1D> =
            (0..=level).map(rule_1d).collect::<Result<Vec<_>>>()?;
        let lo = (level + 1).saturating_sub(dim);

        let mut acc: BTreeMap<Vec<u64>, KeyedNode> = BTreeMap::new();
        for levels in level_indices(dim, lo, level) {
            let total: usize = levels.iter().sum();
            let gap = level - total;
            let sign = if gap.is_multiple_of(2) { 1.0 } else { -1.0 };
            let coef = sign * binomial(dim - 1, gap);
            let parts: Vec<&QuadratureRule1D> = levels.iter().map(|&l| &rules[l]).collect();
            let count: usize = parts.iter().map(|r| r.nodes.len()).product();
            for flat in 0..count {
                let mut rem = flat;
                let mut coords = Vec::with_capacity(dim);
                let mut w = coef;
                for rule in &parts {
                    let i = rem % rule.nodes.len();
                    rem /= rule.nodes.len();
                    coords.push(rule.nodes[i]);
                    w *= rule.weights[i];
                }
                let key: Vec<u64> = coords.iter().map(|&x| node_key(x)).collect();
                acc.entry(key)
                    .and_modify(|n| n.weight += w)
                    .or_insert(KeyedNode { coords, weight: w });
            }
        }

        let mut entries: Vec<KeyedNode> = acc.into_values().collect();
        entries.sort_by(|a, b| {
            a.coords
                .iter()
                .zip(&b.coords)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut nodes = Array2::zeros((entries.len(), dim));
        let mut weights = Vec::with_capacity(entries.len());
        for (row, e) in entries.iter().enumerate() {
            for (c, &x) in e.coords.iter().enumerate() {
                nodes[[row, c]] = x;
            }
            weights.push(e.weight);
        }
        Ok(SparseGrid {
            dim,
            level,
            nodes,
            weights,
        })
    }

    pub fn from_parts(dim: usize, level: usize, nodes: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.ncols() != dim {
            return Err(Error::Shape {
                expected: dim,
                found: nodes.ncols(),
            });
        }
        if nodes.nrows() != weights.len() {
            return Err(Error::Shape {
                expected: nodes.nrows(),
                found: weights.len(),
            });
        }
        Ok(SparseGrid {
            dim,
            level,
            nodes,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn nodes(&self) -> &Array2<f64> {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Quadrature estimate of `∫ f ρ` for the uniform density `ρ`.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes
            .rows()
            .into_iter()
            .zip(&self.weights)
            .map(|(row, w)| w * f(row.as_slice().expect("standard layout")))
            .sum()
    }

    /// The lower-level grid, whose nodes are all present in `self`.
    pub fn subset_level(&self, level: usize) -> Result<SparseGrid> {
        if level > self.level {
            return Err(Error::Precondition(format!(
                "subset level {level} exceeds grid level {}",
                self.level
            )));
        }
        if level == self.level {
            return Ok(self.clone());
        }
        let sub = SparseGrid::new(self.dim, level)?;
        let present: std::collections::HashSet<Vec<u64>> = self
            .nodes
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&x| node_key(x)).collect())
            .collect();
        for row in sub.nodes.rows() {
            let key: Vec<u64> = row.iter().map(|&x| node_key(x)).collect();
            if !present.contains(&key) {
                return Err(Error::Precondition(format!(
                    "level-{level} node {row} not found in the level-{} grid",
                    self.level
                )));
            }
        }
        Ok(sub)
    }

    /// Row positions of `other`'s nodes inside `self`.
    pub fn locate(&self, other: &SparseGrid) -> Result<Vec<usize>> {
        let lookup: std::collections::HashMap<Vec<u64>, usize> = self
            .nodes
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| (r.iter().map(|&x| node_key(x)).collect(), i))
            .collect();
        other
            .nodes
            .rows()
            .into_iter()
            .map(|r| {
                let key: Vec<u64> = r.iter().map(|&x| node_key(x)).collect();
                lookup
                    .get(&key)
                    .copied()
                    .ok_or_else(|| Error::Precondition(format!("node {r} not in grid")))
            })
            .collect()
    }

    /// Writes the design file: a commented header, then one row per node with
    /// the node index, canonical coordinates and weight (17 significant digits).
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# pcecal sparse-grid")?;
        writeln!(w, "# dim = {}", self.dim)?;
        writeln!(w, "# level = {}", self.level)?;
        writeln!(w, "# nodes = {}", self.len())?;
        let mut header = String::from("# index");
        for i in 1..=self.dim {
            let _ = write!(header, " xi_{i}");
        }
        header.push_str(" weight");
        writeln!(w, "{header}")?;
        for (i, (row, wt)) in self.nodes.rows().into_iter().zip(&self.weights).enumerate() {
            let mut line = i.to_string();
            for x in row {
                let _ = write!(line, " {x:.16e}");
            }
            let _ = write!(line, " {wt:.16e}");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads a design file written by [`SparseGrid::write_to`].
    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut dim = None;
        let mut level = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut weights = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(meta) = t.strip_prefix('#') {
                if let Some((k, v)) = meta.split_once('=') {
                    let parse = |v: &str| {
                        v.trim().parse::<usize>().map_err(|e| Error::Parse {
                            line: lineno,
                            message: e.to_string(),
                        })
                    };
                    match k.trim() {
                        "dim" => dim = Some(parse(v)?),
                        "level" => level = Some(parse(v)?),
                        _ => {}
                    }
                }
                continue;
            }
            let d = dim.ok_or(Error::Parse {
                line: lineno,
                message: "data row before `# dim = ` header".into(),
            })?;
            let fields: Vec<f64> = t
                .split_whitespace()
                .skip(1)
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: lineno,
                    message: e.to_string(),
                })?;
            if fields.len() != d + 1 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {} numeric fields, found {}", d + 1, fields.len()),
                });
            }
            weights.push(fields[d]);
            rows.push(fields[..d].to_vec());
        }
        let dim = dim.ok_or(Error::Parse {
            line: 0,
            message: "missing `# dim = ` header".into(),
        })?;
        let mut nodes = Array2::zeros((rows.len(), dim));
        for (i, r) in rows.iter().enumerate() {
            for (j, &x) in r.iter().enumerate() {
                nodes[[i, j]] = x;
            }
        }
        SparseGrid::from_parts(dim, level.unwrap_or(0), nodes, weights)
    }
}
