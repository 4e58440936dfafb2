//! Design and chain files produced and consumed by the commands.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;

use pcecal::surrogate::PcExpansion;
use pcecal::{DesignEnsemble, SparseGrid};

pub enum DesignFile {
    Grid(SparseGrid),
    Random(Array2<f64>),
}

impl DesignFile {
    pub fn nodes(&self) -> &Array2<f64> {
        match self {
            DesignFile::Grid(g) => g.nodes(),
            DesignFile::Random(n) => n,
        }
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("writing {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("reading {}", path.display()))?,
    ))
}

pub fn write_random_design(path: &Path, nodes: &Array2<f64>, seed: u64) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# pcecal random-design")?;
    writeln!(w, "# dim = {}", nodes.ncols())?;
    writeln!(w, "# seed = {seed}")?;
    writeln!(w, "# nodes = {}", nodes.nrows())?;
    for (i, row) in nodes.rows().into_iter().enumerate() {
        let mut line = i.to_string();
        for x in row {
            line.push_str(&format!(" {x:.16e}"));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_design(path: &Path) -> Result<DesignFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().next().unwrap_or("");
    if first.starts_with("# pcecal sparse-grid") {
        let g = SparseGrid::read_from(text.as_bytes()).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(DesignFile::Grid(g));
    }
    if !first.starts_with("# pcecal random-design") {
        bail!("{}: not a design file", path.display());
    }
    let mut dim = None;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('#') {
            if let Some(("dim", v)) = h.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                dim = Some(v.parse::<usize>().with_context(|| format!("{}:{}", path.display(), n + 1))?);
            }
            continue;
        }
        if t.is_empty() {
            continue;
        }
        let d = dim.with_context(|| format!("{}:{}: row before `# dim` header", path.display(), n + 1))?;
        let vals = t
            .split_whitespace()
            .skip(1)
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}", path.display(), n + 1))?;
        if vals.len() != d {
            bail!("{}:{}: expected {d} coordinates, found {}", path.display(), n + 1, vals.len());
        }
        rows.push(vals);
    }
    let d = dim.with_context(|| format!("{}: missing `# dim` header", path.display()))?;
    let mut nodes = Array2::zeros((rows.len(), d));
    for (i, r) in rows.iter().enumerate() {
        nodes.row_mut(i).iter_mut().zip(r).for_each(|(a, b)| *a = *b);
    }
    Ok(DesignFile::Random(nodes))
}

pub fn read_ensemble(path: &Path) -> Result<DesignEnsemble> {
    DesignEnsemble::read_from(open(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_ensemble(path: &Path, ens: &DesignEnsemble) -> Result<()> {
    let mut w = create(path)?;
    ens.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_coefficients(path: &Path) -> Result<PcExpansion> {
    PcExpansion::read_from(open(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_coefficients(path: &Path, pce: &PcExpansion) -> Result<()> {
    let mut w = create(path)?;
    pce.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Column names and post-burn-in rows (parameters then `S`) of a chain file.
pub fn read_chain(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut names = None;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if let Some(h) = t.strip_prefix("# iteration ") {
            let fields: Vec<String> = h.split_whitespace().map(str::to_string).collect();
            // trailing `S log_posterior`; keep parameters and S
            let keep = fields.len().saturating_sub(1);
            cols = vec![Vec::new(); keep];
            names = Some(fields[..keep].to_vec());
            continue;
        }
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let k = cols.len();
        if names.is_none() {
            bail!("{}:{}: row before column header", path.display(), n + 1);
        }
        let vals = t
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}", path.display(), n + 1))?;
        if vals.len() != k + 2 {
            bail!("{}:{}: expected {} fields, found {}", path.display(), n + 1, k + 2, vals.len());
        }
        for (c, v) in cols.iter_mut().zip(&vals[1..=k]) {
            c.push(*v);
        }
    }
    let names = names.with_context(|| format!("{}: missing column header", path.display()))?;
    Ok((names, cols))
}
