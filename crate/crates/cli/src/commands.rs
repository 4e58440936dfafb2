use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};

use pcecal::bpdn::fit_bpdn;
use pcecal::calibrate::{run_mcmc, SurrogateCost};
use pcecal::harness::{
    random_design, run_ensemble, Design, ExternalModelSpec, OutputSelector, SyntheticModel, SMOOTH_RANGE,
    DEFAULT_NOISE_FRACTION,
};
use pcecal::kde::kde as kde_of;
use pcecal::nisp::{band_means, nisp_coefficients, spectrum};
use pcecal::numeric::mean_var;
use pcecal::surrogate::{FitMethod, PcExpansion};
use pcecal::{DesignEnsemble, PcBasis, SparseGrid};

use crate::config::{DesignKind, Method, ModelKind, ProjectConfig};
use crate::files::{self, DesignFile};
use crate::{CoeffArgs, DesignArgs, FitArgs, KdeArgs, McmcArgs, MomentsArgs, Partial, ResponseArgs, RunArgs, ValidateArgs};

fn out(cfg: &ProjectConfig, given: &Option<PathBuf>, name: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.paths.output_dir.join(name))
}

fn coefficients(cfg: &ProjectConfig, a: &CoeffArgs) -> Result<PcExpansion> {
    files::read_coefficients(&out(cfg, &a.coefficients, "coefficients.txt"))
}

/// Parameter names when the config describes the surrogate's dimension,
/// otherwise `xi1..`.
fn names(cfg: &ProjectConfig, dim: usize) -> Vec<String> {
    if cfg.parameters.len() == dim {
        cfg.parameters.iter().map(|p| p.name.clone()).collect()
    } else {
        (1..=dim).map(|i| format!("xi{i}")).collect()
    }
}

pub fn design(cfg: &ProjectConfig, a: DesignArgs) -> Result<()> {
    let dim = match (a.dim, cfg.parameters.len()) {
        (Some(d), 0) => d,
        (Some(d), n) if d != n => bail!("--dim {d} disagrees with the {n} configured parameters"),
        (_, 0) => bail!("no parameters configured; pass --dim"),
        (_, n) => n,
    };
    let path = out(cfg, &a.output, "design.txt");
    let random = a.random.or((cfg.design.kind == DesignKind::Random && a.level.is_none()).then_some(cfg.design.samples));
    match random {
        Some(n) => {
            if n == 0 {
                bail!("--random needs at least one point");
            }
            files::write_random_design(&path, &random_design(dim, n, cfg.design.seed), cfg.design.seed)?;
            println!("random design: {n} points in {dim} dimensions -> {}", path.display());
        }
        None => {
            let level = a.level.unwrap_or(cfg.design.level);
            let grid = SparseGrid::new(dim, level)?;
            let mut w = files::create(&path)?;
            grid.write_to(&mut w)?;
            w.flush()?;
            println!("sparse grid: level {level}, {} nodes in {dim} dimensions -> {}", grid.len(), path.display());
        }
    }
    Ok(())
}

fn synthetic(cfg: &ProjectConfig) -> Result<SyntheticModel> {
    let m = &cfg.model;
    let model = match m.kind {
        ModelKind::Smooth => {
            let sigma = m.noise_sigma.unwrap_or(DEFAULT_NOISE_FRACTION * SMOOTH_RANGE);
            SyntheticModel::smooth().with_noise(sigma, m.noise_seed)
        }
        ModelKind::Planted => {
            let path = m.coefficients.as_ref().context("model.coefficients is required for a planted model")?;
            let truth = files::read_coefficients(path)?;
            SyntheticModel::planted(truth).with_noise(m.noise_sigma.unwrap_or(0.0), m.noise_seed)
        }
        ModelKind::External => unreachable!(),
    };
    Ok(model)
}

pub fn run(cfg: &ProjectConfig, a: RunArgs) -> Result<()> {
    let design = files::read_design(&out(cfg, &a.design, "design.txt"))?;
    let path = out(cfg, &a.output, "ensemble.txt");
    if cfg.model.kind != ModelKind::External {
        let model = synthetic(cfg)?;
        if model.dim() != design.nodes().ncols() {
            bail!("model has dimension {} but the design has {}", model.dim(), design.nodes().ncols());
        }
        let values = model.evaluate(design.nodes().view())?;
        let ens = match &design {
            DesignFile::Grid(g) => DesignEnsemble::from_grid(g, values)?,
            DesignFile::Random(n) => DesignEnsemble::from_samples(n.clone(), values)?,
        };
        files::write_ensemble(&path, &ens)?;
        println!("evaluated {} nodes -> {}", ens.len(), path.display());
        return Ok(());
    }

    let m = &cfg.model;
    let space = cfg.space()?;
    let mut spec = ExternalModelSpec::new(&cfg.paths.work_dir);
    spec.command = m.command.clone();
    spec.input_file = m.input_file.clone();
    spec.output_file = m.output_file.clone();
    spec.timeout = Duration::from_secs(m.timeout_secs);
    if let Some(t) = &m.input_template {
        spec.input_template = Some(std::fs::read_to_string(t).with_context(|| format!("reading {}", t.display()))?);
    }
    spec.output = match (&m.output_key, m.output_column) {
        (Some(_), Some(_)) => bail!("model: set output_key or output_column, not both"),
        (_, Some(c)) => OutputSelector::Column(c),
        (Some(k), None) => OutputSelector::Key(k.clone()),
        (None, None) => OutputSelector::Key("E".into()),
    };
    let outcome = match &design {
        DesignFile::Grid(g) => run_ensemble(&spec, Design::Grid(g), &space)?,
        DesignFile::Random(n) => run_ensemble(&spec, Design::Nodes(n.view()), &space)?,
    };
    for (i, msg) in &outcome.failures {
        eprintln!("node {i}: {msg}");
    }
    if let Some(ens) = &outcome.ensemble {
        files::write_ensemble(&path, ens)?;
        println!("harvested {} of {} nodes -> {}", ens.len(), design.nodes().nrows(), path.display());
    }
    if outcome.is_complete() {
        return Ok(());
    }
    let pending = path.with_file_name("pending.txt");
    let mut w = files::create(&pending)?;
    for i in &outcome.pending {
        writeln!(w, "{i}")?;
    }
    w.flush()?;
    println!("manifest: {}", outcome.manifest.display());
    println!("pending node list: {}", pending.display());
    Err(Partial(outcome.pending.len()).into())
}

pub fn fit(cfg: &ProjectConfig, a: FitArgs) -> Result<()> {
    let ens = files::read_ensemble(&out(cfg, &a.ensemble, "ensemble.txt"))?;
    let order = a.order.unwrap_or(cfg.fit.order);
    let method = a.method.unwrap_or(cfg.fit.method);
    let basis = PcBasis::new(ens.dim(), order)?;
    let mut report = String::new();
    let pce = match method {
        Method::Nisp => {
            let c = nisp_coefficients(&basis, &ens).context("NISP needs a complete sparse-grid ensemble")?;
            PcExpansion::new(basis, c, FitMethod::Nisp)?
        }
        Method::Bpdn => {
            let mut bc = cfg.fit.bpdn.to_config()?;
            if a.delta.is_some() {
                bc.delta = a.delta;
            }
            let rep = fit_bpdn(&basis, &ens, &bc)?;
            report.push_str(&format!("delta = {:.6e}\n", rep.chosen_delta));
            report.push_str(&format!("residual_norm = {:.6e}\n", rep.residual_norm));
            report.push_str(&format!("l1_norm = {:.6e}\n", rep.l1_norm));
            report.push_str(&format!("status = {:?}\niterations = {}\n", rep.status, rep.iterations));
            if let Some(cv) = &rep.cv_errors {
                report.push_str("# cross-validation: relative_delta mean_error per-fold...\n");
                for (k, col) in cv.columns().into_iter().enumerate() {
                    let finite: Vec<f64> = col.iter().copied().filter(|v| v.is_finite()).collect();
                    let mean = if finite.is_empty() { f64::INFINITY } else { mean_var(&finite).0 };
                    let mut line = format!("cv {:.6e} {:.6e}", rep.delta_grid[k], mean);
                    for v in col {
                        line.push_str(&format!(" {v:.6e}"));
                    }
                    report.push_str(&line);
                    report.push('\n');
                }
            }
            PcExpansion::new(basis, rep.coefficients, FitMethod::Bpdn)?
                .with_metadata("delta", format!("{:.16e}", rep.chosen_delta))
        }
    };
    let pce = pce.with_metadata("nodes", ens.len());
    let nre = pce.nre(&ens)?;
    let spec = spectrum(pce.basis(), pce.coefficients())?;

    let coeff_path = out(cfg, &a.output, "coefficients.txt");
    files::write_coefficients(&coeff_path, &pce)?;
    let report_path = a.report.unwrap_or_else(|| coeff_path.with_file_name("fit_report.txt"));
    let mut w = files::create(&report_path)?;
    writeln!(w, "# pcecal fit report")?;
    writeln!(w, "method = {}\norder = {order}\nterms = {}\nnodes = {}", pce.fit_method(), pce.basis().len(), ens.len())?;
    writeln!(w, "train_nre = {nre:.6e}")?;
    write!(w, "{report}")?;
    writeln!(w, "# band degree mean_ratio")?;
    for (d, b) in band_means(&spec).iter().enumerate() {
        writeln!(w, "band {d} {b:.6e}")?;
    }
    writeln!(w, "# spectrum term degree ratio")?;
    for s in &spec {
        writeln!(w, "spectrum {} {} {:.6e}", s.term, s.degree, s.ratio)?;
    }
    w.flush()?;
    println!("{} fit, order {order}, {} terms, train NRE {:.4}%", pce.fit_method(), pce.basis().len(), 100.0 * nre);
    println!("coefficients -> {}\nreport -> {}", coeff_path.display(), report_path.display());
    Ok(())
}

pub fn validate(cfg: &ProjectConfig, a: ValidateArgs) -> Result<()> {
    let pce = coefficients(cfg, &a.coeff)?;
    let ens = files::read_ensemble(&a.ensemble)?;
    if ens.dim() != pce.dim() {
        bail!("surrogate has dimension {} but the ensemble has {}", pce.dim(), ens.dim());
    }
    let nre = pce.nre(&ens)?;
    println!("nodes = {}\nnre = {nre:.6e}", ens.len());
    Ok(())
}

pub fn moments(cfg: &ProjectConfig, a: MomentsArgs) -> Result<()> {
    let pce = coefficients(cfg, &a.coeff)?;
    println!("mean = {:.12e}\nvariance = {:.12e}\nstd_dev = {:.12e}", pce.mean(), pce.variance(), pce.std_dev());
    if let Some(n) = a.samples {
        if n < 2 {
            bail!("--samples needs at least 2 draws");
        }
        let (m, v) = mean_var(&pce.sample_values(n, cfg.calibration.seed));
        println!("sample_mean = {m:.12e}\nsample_variance = {v:.12e}");
    }
    Ok(())
}

pub fn sobol(cfg: &ProjectConfig, a: CoeffArgs) -> Result<()> {
    let pce = coefficients(cfg, &a)?;
    let t = pce.total_sensitivity()?;
    println!("# parameter total_index");
    for (n, v) in names(cfg, pce.dim()).iter().zip(&t) {
        println!("{n} {v:.12e}");
    }
    Ok(())
}

pub fn response(cfg: &ProjectConfig, a: ResponseArgs) -> Result<()> {
    let pce = coefficients(cfg, &a.coeff)?;
    let fixed = a.fixed.as_deref();
    let names = names(cfg, pce.dim());
    let mut text = String::new();
    match a.axis2 {
        None => {
            let rows = pce.response_slice(a.axis, fixed, a.points)?;
            text.push_str(&format!("# xi_{} E\n", names[a.axis]));
            for (t, e) in rows {
                text.push_str(&format!("{t:.16e} {e:.16e}\n"));
            }
        }
        Some(j) => {
            let (ts, vals) = pce.response_surface(a.axis, j, fixed, a.points)?;
            text.push_str(&format!("# xi_{} xi_{} E\n", names[a.axis], names[j]));
            for (r, ta) in ts.iter().enumerate() {
                for (c, tb) in ts.iter().enumerate() {
                    text.push_str(&format!("{ta:.16e} {tb:.16e} {:.16e}\n", vals[[r, c]]));
                }
            }
        }
    }
    emit(a.output.as_deref(), &text)
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = files::create(p)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn mcmc(cfg: &ProjectConfig, a: McmcArgs) -> Result<()> {
    let pce = coefficients(cfg, &a.coeff)?;
    let mut cc = cfg.calibration()?;
    if let Some(n) = a.iterations {
        cc.n_iters = n;
        cc.burn_in = a.burn_in.or(cfg.calibration.burn_in).unwrap_or(n / 5);
    } else if let Some(b) = a.burn_in {
        cc.burn_in = b;
    }
    cc.validate()?;
    if pce.dim() != cc.space.dim() {
        bail!("surrogate has dimension {} but {} parameters are configured", pce.dim(), cc.space.dim());
    }
    let model = SurrogateCost {
        space: &cc.space,
        surrogate: &pce,
    };
    let chain = run_mcmc(&cc, &model)?;
    let path = out(cfg, &a.output, "chain.txt");
    let mut w = files::create(&path)?;
    chain.write_to(&mut w)?;
    w.flush()?;
    println!("acceptance_rate = {:.4}", chain.acceptance_rate);
    println!("# posterior means");
    for (n, m) in chain.names.iter().chain(std::iter::once(&"S".to_string())).zip(chain.posterior_mean()) {
        println!("{n} = {m:.8e}");
    }
    println!("chain -> {}", path.display());
    Ok(())
}

pub fn kde(cfg: &ProjectConfig, a: KdeArgs) -> Result<()> {
    let mut text = String::new();
    let mut push = |label: &str, d: pcecal::kde::Density| -> Result<()> {
        let mut buf = Vec::new();
        d.write_to(&mut buf)?;
        text.push_str(&format!("# column = {label}\n"));
        text.push_str(std::str::from_utf8(&buf)?);
        Ok(())
    };
    match &a.chain {
        Some(chain) => {
            let (names, cols) = files::read_chain(chain)?;
            let pick: Vec<usize> = match &a.column {
                None => (0..names.len()).collect(),
                Some(c) => vec![names
                    .iter()
                    .position(|n| n == c)
                    .or_else(|| c.parse().ok().filter(|&i: &usize| i < names.len()))
                    .with_context(|| format!("no column `{c}` in {}", chain.display()))?],
            };
            for i in pick {
                push(&names[i], kde_of(&cols[i], a.grid, a.bandwidth)?)?;
            }
        }
        None => {
            let pce = coefficients(cfg, &CoeffArgs { coefficients: a.coefficients.clone() })?;
            let d = match a.bandwidth {
                None => pce.sample_pdf(a.samples, cfg.calibration.seed, a.grid)?,
                Some(h) => kde_of(&pce.sample_values(a.samples, cfg.calibration.seed), a.grid, Some(h))?,
            };
            push("E", d)?;
        }
    }
    emit(a.output.as_deref(), &text)
}
