//! Forward models: bundled synthetic stand-ins for an expensive noisy
//! simulator, and a file-protocol runner for real external models.
//!
//! Synthetic noise is a pure function of `(seed, node coordinates)`: the same
//! node always returns the same value, while nodes a hair apart get
//! independent draws. That mimics a deterministic but chaotic simulator whose
//! cost statistic jumps under infinitesimal parameter changes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::ensemble::DesignEnsemble;
use crate::error::{Error, Result};
use crate::space::ParameterSpace;
use crate::sparse_grid::SparseGrid;
use crate::surrogate::PcExpansion;

/// Output range (max - min over the cube) of [`smooth_cost`], found by
/// multistart bound-constrained optimization.
pub const SMOOTH_RANGE: f64 = 160.318_070_838_830_98;

/// Noise level used by the default noisy model: 5% of the output range.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.05;

/// Five-dimensional damped exponential of a quadratic form, with coupled
/// leading inputs and a weak bilinear tail in the last two.
pub fn smooth_cost(xi: &[f64]) -> f64 {
    let (x1, x2, x3, x4, x5) = (xi[0], xi[1], xi[2], xi[3], xi[4]);
    let q = 1.1 * (x1 - 0.35).powi(2)
        + 0.5 * (x2 + 0.2).powi(2)
        + 0.35 * x3 * x3
        + 0.6 * x1 * x2
        + 0.3 * x1 * x3;
    150.0 + 150.0 * (-0.5 * q).exp() + 6.0 * x4 + 8.0 * x5 + 4.0 * x4 * x5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    PlantedPolynomial,
    SmoothNonpolynomial,
    NoisyPlanted,
    NoisySmooth,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Polynomial(PcExpansion),
    /// [`smooth_cost`]; five dimensions.
    Smooth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    pub truth: GroundTruth,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_from_bits(h: u64) -> f64 {
    // 53 random bits in (0, 1)
    ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Standard normal variate determined by the seed and the node coordinates.
pub fn hashed_normal(seed: u64, xi: &[f64]) -> f64 {
    let mut h = splitmix64(seed ^ 0x5851_F42D_4C95_7F2D);
    for &x in xi {
        h = splitmix64(h ^ (x + 0.0).to_bits());
    }
    let u1 = unit_from_bits(h);
    let u2 = unit_from_bits(splitmix64(h ^ 0xD1B5_4A32_D192_ED03));
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl SyntheticModel {
    pub fn planted(surrogate: PcExpansion) -> Self {
        SyntheticModel {
            truth: GroundTruth::Polynomial(surrogate),
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn smooth() -> Self {
        SyntheticModel {
            truth: GroundTruth::Smooth,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    /// The calibrated noisy stand-in: [`smooth_cost`] plus hashed noise at 5%
    /// of its output range.
    pub fn noisy_smooth(seed: u64) -> Self {
        SyntheticModel {
            truth: GroundTruth::Smooth,
            noise_sigma: DEFAULT_NOISE_FRACTION * SMOOTH_RANGE,
            seed,
        }
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise_sigma = sigma;
        self.seed = seed;
        self
    }

    pub fn kind(&self) -> SyntheticKind {
        match (&self.truth, self.noise_sigma > 0.0) {
            (GroundTruth::Polynomial(_), false) => SyntheticKind::PlantedPolynomial,
            (GroundTruth::Polynomial(_), true) => SyntheticKind::NoisyPlanted,
            (GroundTruth::Smooth, false) => SyntheticKind::SmoothNonpolynomial,
            (GroundTruth::Smooth, true) => SyntheticKind::NoisySmooth,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.truth {
            GroundTruth::Polynomial(p) => p.dim(),
            GroundTruth::Smooth => 5,
        }
    }

    /// Noise-free value.
    pub fn truth_at(&self, xi: &[f64]) -> Result<f64> {
        match &self.truth {
            GroundTruth::Polynomial(p) => p.eval(xi),
            GroundTruth::Smooth => {
                if xi.len() != 5 {
                    return Err(Error::Shape {
                        expected: 5,
                        found: xi.len(),
                    });
                }
                Ok(smooth_cost(xi))
            }
        }
    }

    pub fn eval(&self, xi: &[f64]) -> Result<f64> {
        let base = self.truth_at(xi)?;
        if self.noise_sigma > 0.0 {
            Ok(base + self.noise_sigma * hashed_normal(self.seed, xi))
        } else {
            Ok(base)
        }
    }

    /// Evaluates every row of a canonical node matrix.
    pub fn evaluate(&self, nodes: ArrayView2<f64>) -> Result<Vec<f64>> {
        nodes
            .rows()
            .into_iter()
            .map(|r| self.eval(&r.to_vec()))
            .collect()
    }
}

/// How to pull the scalar cost out of a node's output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutputSelector {
    /// First line of the form `key = value`, `key: value` or `key value`.
    Key(String),
    /// Whitespace-separated column (0-based) of the last data line.
    Column(usize),
}

impl OutputSelector {
    pub fn extract(&self, text: &str) -> Option<f64> {
        let mut data = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        match self {
            OutputSelector::Key(key) => data
                .filter_map(|l| {
                    let rest = l.strip_prefix(key.as_str())?;
                    let rest = rest.trim_start();
                    let rest = rest
                        .strip_prefix('=')
                        .or_else(|| rest.strip_prefix(':'))
                        .unwrap_or(rest);
                    rest.split_whitespace().next()?.parse().ok()
                })
                .next(),
            OutputSelector::Column(c) => data.next_back()?.split_whitespace().nth(*c)?.parse().ok(),
        }
    }
}

/// Description of an external model driven through the file system.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalModelSpec {
    pub work_dir: PathBuf,
    /// Optional template rendered into `input_file`; `{name}` placeholders are
    /// replaced by physical parameter values. `input.txt` with one
    /// `name = value` line per parameter is always written.
    pub input_template: Option<String>,
    pub input_file: String,
    /// Shell command run inside each node directory. `None` only writes the
    /// inputs and a manifest for offline execution, then harvests whatever
    /// outputs already exist.
    pub command: Option<String>,
    pub output_file: String,
    pub output: OutputSelector,
    pub timeout: Duration,
}

impl ExternalModelSpec {
    pub fn new(work_dir: impl Into<PathBuf>) -> Self {
        ExternalModelSpec {
            work_dir: work_dir.into(),
            input_template: None,
            input_file: "model.in".into(),
            command: None,
            output_file: "output.txt".into(),
            output: OutputSelector::Key("E".into()),
            timeout: Duration::from_secs(3600),
        }
    }

    pub fn node_dir(&self, index: usize) -> PathBuf {
        self.work_dir.join(format!("node_{index:05}"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.work_dir.join("manifest.tsv")
    }
}

const DONE_MARKER: &str = ".done";

/// Result of one orchestration pass.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Completed rows in design order; `None` when nothing was harvested.
    pub ensemble: Option<DesignEnsemble>,
    /// Design row indices without a harvested value.
    pub pending: Vec<usize>,
    /// Per-node failures (parse errors, timeouts, non-zero exits).
    pub failures: Vec<(usize, String)>,
    pub manifest: PathBuf,
}

impl RunOutcome {
    pub fn is_complete(&self) -> bool {
        self.pending.is_empty()
    }
}

/// Design rows to run, and weights when the design is a full quadrature.
pub enum Design<'a> {
    Grid(&'a SparseGrid),
    Nodes(ArrayView2<'a, f64>),
}

impl Design<'_> {
    fn nodes(&self) -> ArrayView2<'_, f64> {
        match self {
            Design::Grid(g) => g.nodes().view(),
            Design::Nodes(n) => n.view(),
        }
    }
}

fn render_inputs(space: &ParameterSpace, p: &[f64]) -> String {
    let mut s = String::new();
    for (spec, v) in space.params().iter().zip(p) {
        let _ = writeln!(s, "{} = {:.16e}", spec.name, v);
    }
    s
}

fn render_template(template: &str, space: &ParameterSpace, p: &[f64]) -> String {
    space
        .params()
        .iter()
        .zip(p)
        .fold(template.to_string(), |acc, (spec, v)| {
            acc.replace(&format!("{{{}}}", spec.name), &format!("{v:.16e}"))
        })
}

fn run_command(cmd: &str, dir: &Path, timeout: Duration) -> std::result::Result<(), String> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .current_dir(dir)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| format!("spawn failed: {e}"))?;
    let start = Instant::now();
    loop {
        match child.try_wait() {
            Ok(Some(status)) if status.success() => return Ok(()),
            Ok(Some(status)) => return Err(format!("exited with {status}")),
            Ok(None) if start.elapsed() > timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(format!("timed out after {:?}", timeout));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(e.to_string()),
        }
    }
}

enum NodeState {
    Done(f64),
    Pending,
    Failed(String),
}

fn process_node(spec: &ExternalModelSpec, index: usize, p: &[f64], space: &ParameterSpace) -> Result<NodeState> {
    let dir = spec.node_dir(index);
    let marker = dir.join(DONE_MARKER);
    if let Ok(text) = fs::read_to_string(&marker) {
        if let Ok(v) = text.trim().parse::<f64>() {
            return Ok(NodeState::Done(v));
        }
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("input.txt"), render_inputs(space, p))?;
    if let Some(t) = &spec.input_template {
        fs::write(dir.join(&spec.input_file), render_template(t, space, p))?;
    }
    if let Some(cmd) = &spec.command {
        if let Err(e) = run_command(cmd, &dir, spec.timeout) {
            return Ok(NodeState::Failed(e));
        }
    }
    let out = dir.join(&spec.output_file);
    let text = match fs::read_to_string(&out) {
        Ok(t) => t,
        Err(_) if spec.command.is_none() => return Ok(NodeState::Pending),
        Err(e) => return Ok(NodeState::Failed(format!("missing output {}: {e}", out.display()))),
    };
    match spec.output.extract(&text) {
        Some(v) if v.is_finite() => {
            fs::write(&marker, format!("{v:.16e}\n"))?;
            Ok(NodeState::Done(v))
        }
        _ => Ok(NodeState::Failed(format!("could not parse {:?} from {}", spec.output, out.display()))),
    }
}

/// Writes per-node inputs, runs (or defers) the model, and harvests results.
///
/// Completed nodes carry a `.done` marker holding the harvested value, so a
/// rerun skips them and an interrupted campaign resumes where it stopped.
pub fn run_ensemble(spec: &ExternalModelSpec, design: Design<'_>, space: &ParameterSpace) -> Result<RunOutcome> {
    let nodes = design.nodes();
    if nodes.nrows() == 0 {
        return Err(Error::External("empty design".into()));
    }
    if nodes.ncols() != space.dim() {
        return Err(Error::Shape {
            expected: space.dim(),
            found: nodes.ncols(),
        });
    }
    fs::create_dir_all(&spec.work_dir)?;
    let physical: Vec<Vec<f64>> = nodes
        .rows()
        .into_iter()
        .map(|r| space.from_canonical(&r.to_vec()))
        .collect::<Result<_>>()?;

    {
        let mut m = fs::File::create(spec.manifest_path())?;
        writeln!(m, "# index\tdirectory\tcommand")?;
        for i in 0..physical.len() {
            writeln!(
                m,
                "{i}\t{}\t{}",
                spec.node_dir(i).display(),
                spec.command.as_deref().unwrap_or("-")
            )?;
        }
    }

    let states: Vec<NodeState> = physical
        .par_iter()
        .enumerate()
        .map(|(i, p)| process_node(spec, i, p, space))
        .collect::<Result<_>>()?;

    let mut done_rows = Vec::new();
    let mut values = Vec::new();
    let mut pending = Vec::new();
    let mut failures = Vec::new();
    for (i, s) in states.into_iter().enumerate() {
        match s {
            NodeState::Done(v) => {
                done_rows.push(i);
                values.push(v);
            }
            NodeState::Pending => pending.push(i),
            NodeState::Failed(msg) => {
                pending.push(i);
                failures.push((i, msg));
            }
        }
    }
    if done_rows.is_empty() && spec.command.is_some() {
        return Err(Error::External(format!(
            "no node produced a value ({} failures; first: {})",
            failures.len(),
            failures.first().map(|f| f.1.as_str()).unwrap_or("-")
        )));
    }

    let ensemble = if done_rows.is_empty() {
        None
    } else {
        let sub = nodes.select(ndarray::Axis(0), &done_rows);
        let tags: Vec<String> = done_rows.iter().map(|i| format!("external-node{i:05}")).collect();
        let weights = match &design {
            Design::Grid(g) if pending.is_empty() => Some(g.weights().to_vec()),
            _ => None,
        };
        Some(DesignEnsemble::new(sub, values, weights, tags)?)
    };
    Ok(RunOutcome {
        ensemble,
        pending,
        failures,
        manifest: spec.manifest_path(),
    })
}

/// Seeded uniform random design on the canonical cube.
pub fn random_design(dim: usize, n: usize, seed: u64) -> Array2<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, dim), || rng.random_range(-1.0..=1.0))
}
