//! Evaluated design points: canonical nodes, observed cost values, optional
//! quadrature weights and per-row provenance tags.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::sparse_grid::SparseGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignEnsemble {
    nodes: Array2<f64>,
    values: Vec<f64>,
    weights: Option<Vec<f64>>,
    tags: Vec<String>,
}

fn row_key(row: ndarray::ArrayView1<f64>) -> Vec<u64> {
    row.iter().map(|x| (x + 0.0).to_bits()).collect()
}

impl DesignEnsemble {
    pub fn new(
        nodes: Array2<f64>,
        values: Vec<f64>,
        weights: Option<Vec<f64>>,
        tags: Vec<String>,
    ) -> Result<Self> {
        let n = nodes.nrows();
        if n == 0 || nodes.ncols() == 0 {
            return Err(Error::Precondition("ensemble needs at least one row and column".into()));
        }
        for len in [Some(values.len()), weights.as_ref().map(Vec::len), Some(tags.len())]
            .into_iter()
            .flatten()
        {
            if len != n {
                return Err(Error::Shape {
                    expected: n,
                    found: len,
                });
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!("non-finite value at row {i}")));
        }
        if let Some(i) = tags.iter().position(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return Err(Error::Precondition(format!("tag at row {i} must be a non-empty token")));
        }
        let mut seen = HashSet::with_capacity(n);
        for (i, row) in nodes.rows().into_iter().enumerate() {
            if !seen.insert(row_key(row)) {
                return Err(Error::Precondition(format!("duplicate design row {i}")));
            }
        }
        Ok(DesignEnsemble {
            nodes,
            values,
            weights,
            tags,
        })
    }

    /// Ensemble on a quadrature design; carries the grid weights.
    pub fn from_grid(grid: &SparseGrid, values: Vec<f64>) -> Result<Self> {
        let tags = vec![format!("quadrature-l{}", grid.level()); grid.len()];
        DesignEnsemble::new(grid.nodes().clone(), values, Some(grid.weights().to_vec()), tags)
    }

    /// Ensemble on an arbitrary (e.g. random) design, no weights.
    pub fn from_samples(nodes: Array2<f64>, values: Vec<f64>) -> Result<Self> {
        let tags = vec!["random-sample".to_string(); nodes.nrows()];
        DesignEnsemble::new(nodes, values, None, tags)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes.ncols()
    }

    pub fn nodes(&self) -> &Array2<f64> {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Rows selected by position; weights are dropped since a subset of a
    /// quadrature is generally not a quadrature.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.len(),
            });
        }
        DesignEnsemble::new(
            self.nodes.select(Axis(0), rows),
            rows.iter().map(|&r| self.values[r]).collect(),
            None,
            rows.iter().map(|&r| self.tags[r].clone()).collect(),
        )
    }

    /// Restricts a quadrature ensemble to a nested lower-level grid, keeping
    /// that grid's own weights.
    pub fn restrict_to_grid(&self, grid: &SparseGrid) -> Result<Self> {
        let full = SparseGrid::from_parts(self.dim(), 0, self.nodes.clone(), vec![0.0; self.len()])?;
        let rows = full.locate(grid)?;
        DesignEnsemble::new(
            grid.nodes().clone(),
            rows.iter().map(|&r| self.values[r]).collect(),
            Some(grid.weights().to_vec()),
            rows.iter().map(|&r| self.tags[r].clone()).collect(),
        )
    }

    /// Text format: `# dim = m` header, then rows of
    /// `index xi_1 .. xi_m value weight tag` with `-` for a missing weight.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# pcecal ensemble")?;
        writeln!(w, "# dim = {}", self.dim())?;
        writeln!(w, "# rows = {}", self.len())?;
        let mut header = String::from("# index");
        for i in 1..=self.dim() {
            let _ = write!(header, " xi_{i}");
        }
        header.push_str(" value weight tag");
        writeln!(w, "{header}")?;
        for (i, row) in self.nodes.rows().into_iter().enumerate() {
            let mut line = i.to_string();
            for x in row {
                let _ = write!(line, " {x:.16e}");
            }
            let _ = write!(line, " {:.16e}", self.values[i]);
            match &self.weights {
                Some(ws) => {
                    let _ = write!(line, " {:.16e}", ws[i]);
                }
                None => line.push_str(" -"),
            }
            let _ = write!(line, " {}", self.tags[i]);
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut dim: Option<usize> = None;
        let mut rows = Vec::new();
        let mut values = Vec::new();
        let mut weights: Vec<Option<f64>> = Vec::new();
        let mut tags = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            let perr = |message: String| Error::Parse {
                line: lineno,
                message,
            };
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(meta) = t.strip_prefix('#') {
                if let Some(("dim", v)) = meta.split_once('=').map(|(k, v)| (k.trim(), v)) {
                    dim = Some(v.trim().parse().map_err(|e| perr(format!("{e}")))?);
                }
                continue;
            }
            let d = dim.ok_or_else(|| perr("data row before `# dim = ` header".into()))?;
            let fields: Vec<&str> = t.split_whitespace().collect();
            if fields.len() != d + 4 {
                return Err(perr(format!("expected {} fields, found {}", d + 4, fields.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| perr(format!("`{s}`: {e}")));
            let coords = fields[1..=d].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
            rows.push(coords);
            values.push(num(fields[d + 1])?);
            weights.push(match fields[d + 2] {
                "-" => None,
                s => Some(num(s)?),
            });
            tags.push(fields[d + 3].to_string());
        }
        let dim = dim.ok_or(Error::Parse {
            line: 0,
            message: "missing `# dim = ` header".into(),
        })?;
        let weights = if weights.iter().all(Option::is_some) && !weights.is_empty() {
            Some(weights.into_iter().map(|w| w.unwrap()).collect())
        } else if weights.iter().all(Option::is_none) {
            None
        } else {
            return Err(Error::Parse {
                line: 0,
                message: "weights must be present on every row or on none".into(),
            });
        };
        let mut nodes = Array2::zeros((rows.len(), dim));
        for (i, r) in rows.iter().enumerate() {
            for (j, &x) in r.iter().enumerate() {
                nodes[[i, j]] = x;
            }
        }
        DesignEnsemble::new(nodes, values, weights, tags)
    }
}
