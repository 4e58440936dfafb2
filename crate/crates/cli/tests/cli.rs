use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use pcecal::nisp::nisp_coefficients;
use pcecal::surrogate::{FitMethod, PcExpansion};
use pcecal::{DesignEnsemble, PcBasis};

fn pcecal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcecal"))
        .current_dir(dir)
        .args(["--threads", "2"])
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = pcecal(dir, args);
    assert!(
        o.status.success(),
        "{args:?}: {}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    pcecal(dir, args).status.code().unwrap()
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

fn value(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in {stdout}"))
        .trim()
        .parse()
        .unwrap()
}

fn project(dir: &Path, params: &[(&str, f64, f64)], extra: &str) -> PathBuf {
    let mut text = String::new();
    for (n, lo, hi) in params {
        text.push_str(&format!("[[parameters]]\nname = \"{n}\"\nlower = {lo}\nupper = {hi}\n\n"));
    }
    text.push_str(extra);
    let p = dir.join("project.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn five() -> Vec<(&'static str, f64, f64)> {
    vec![("a", 0.0, 1.0), ("b", 0.0, 1.0), ("c", 0.0, 1.0), ("d", 0.0, 1.0), ("e", 1.0, 2.0)]
}

fn write_expansion(path: &Path, dim: usize, order: usize, terms: &[(&[u32], f64)]) {
    let basis = PcBasis::new(dim, order).unwrap();
    let mut c = vec![0.0; basis.len()];
    for (alpha, v) in terms {
        let k = basis.indices().iter().position(|m| m.degrees() == *alpha).unwrap();
        c[k] = *v;
    }
    let pce = PcExpansion::new(basis, c, FitMethod::Nisp).unwrap();
    pce.write_to(std::fs::File::create(path).unwrap()).unwrap();
}

#[test]
fn design_sizes() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    project(d, &five(), "");
    ok(d, &["-c", "project.toml", "design", "--level", "5", "-o", "l5.txt"]);
    assert_eq!(data_rows(&d.join("l5.txt")).len(), 903);
    ok(d, &["-c", "project.toml", "design", "--level", "1", "-o", "l1.txt"]);
    assert_eq!(data_rows(&d.join("l1.txt")).len(), 11);
    ok(d, &["-c", "project.toml", "design", "--random", "954", "-o", "r.txt"]);
    let rows = data_rows(&d.join("r.txt"));
    assert_eq!(rows.len(), 954);
    let unique: HashSet<String> = rows.iter().map(|r| r.split_once(' ').unwrap().1.to_string()).collect();
    assert_eq!(unique.len(), 954);
    ok(d, &["design", "--dim", "3", "--level", "2", "-o", "d3.txt"]);
    assert_eq!(code(d, &["design", "--level", "2"]), 1);
    assert_eq!(code(d, &["-c", "project.toml", "design", "--level", "9"]), 1);
}

#[test]
fn nisp_fit_matches_the_library() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    project(d, &five(), "[model]\nkind = \"smooth\"\nnoise_seed = 3\n");
    ok(d, &["-c", "project.toml", "design", "--level", "4"]);
    ok(d, &["-c", "project.toml", "run"]);
    ok(d, &["-c", "project.toml", "fit", "--method", "nisp"]);

    let ens = DesignEnsemble::read_from(std::io::BufReader::new(
        std::fs::File::open(d.join("out/ensemble.txt")).unwrap(),
    ))
    .unwrap();
    let basis = PcBasis::new(5, 5).unwrap();
    let lib = nisp_coefficients(&basis, &ens).unwrap();
    let cli = PcExpansion::read_from(std::io::BufReader::new(
        std::fs::File::open(d.join("out/coefficients.txt")).unwrap(),
    ))
    .unwrap();
    assert_eq!(cli.coefficients(), lib.as_slice());
}

#[test]
fn random_designs_need_bpdn() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    project(d, &five(), "[fit]\norder = 3\n");
    ok(d, &["-c", "project.toml", "design", "--random", "120"]);
    ok(d, &["-c", "project.toml", "run"]);
    assert_eq!(code(d, &["-c", "project.toml", "fit", "--method", "nisp"]), 1);
    let out = ok(d, &["-c", "project.toml", "fit", "--method", "bpdn"]);
    assert!(out.contains("train NRE"));
    let report = std::fs::read_to_string(d.join("out/fit_report.txt")).unwrap();
    assert!(report.lines().filter(|l| l.starts_with("cv ")).count() >= 2);
}

#[test]
fn planted_polynomial_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    write_expansion(&d.join("truth.txt"), 5, 5, &[(&[0, 0, 0, 0, 0], 3.0), (&[2, 0, 0, 0, 0], 0.5), (&[3, 0, 0, 0, 0], -1.0)]);
    project(d, &five(), "[model]\nkind = \"planted\"\ncoefficients = \"truth.txt\"\n");
    ok(d, &["-c", "project.toml", "design", "--level", "5"]);
    ok(d, &["-c", "project.toml", "run"]);
    let fit = ok(d, &["-c", "project.toml", "fit", "--method", "nisp"]);
    let report = std::fs::read_to_string(d.join("out/fit_report.txt")).unwrap();
    assert!(value(&report, "train_nre") <= 1e-8, "{fit}");
    let v = ok(d, &["-c", "project.toml", "validate", "--ensemble", "out/ensemble.txt"]);
    assert!(value(&v, "nre") <= 1e-8);
    let s = ok(d, &["-c", "project.toml", "sobol"]);
    let t: Vec<f64> = s
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert!((t[0] - 1.0).abs() < 1e-10 && t[1..].iter().all(|v| v.abs() < 1e-10), "{t:?}");
    let m = ok(d, &["-c", "project.toml", "moments"]);
    assert!((value(&m, "mean") - 3.0).abs() < 1e-10);
}

#[test]
fn numerical_failures_exit_2() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    write_expansion(&d.join("flat.txt"), 2, 2, &[(&[0, 0], 1.0)]);
    project(d, &[("a", 0.0, 1.0), ("b", 0.0, 1.0)], "");
    assert_eq!(code(d, &["sobol", "--coefficients", "flat.txt"]), 2);
    let design = d.join("design.txt");
    ok(d, &["-c", "project.toml", "design", "--level", "1", "-o", design.to_str().unwrap()]);
    let rows = data_rows(&design);
    let mut ens = String::from("# pcecal ensemble\n# dim = 2\n");
    for r in rows {
        let f: Vec<&str> = r.split_whitespace().collect();
        ens.push_str(&format!("{} {} {} 0.0 - zero\n", f[0], f[1], f[2]));
    }
    std::fs::write(d.join("zeros.txt"), ens).unwrap();
    assert_eq!(code(d, &["validate", "--coefficients", "flat.txt", "--ensemble", "zeros.txt"]), 2);
}

#[test]
fn config_errors_exit_1() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    project(d, &five(), "[design]\nlevl = 3\n");
    let o = pcecal(d, &["-c", "project.toml", "design"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("levl"), "{err}");
    assert_eq!(code(d, &["fit", "--bogus"]), 1);
    assert_eq!(code(d, &["--help"]), 0);
}

#[test]
fn external_campaign_resumes_after_partial_run() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    // fails once on nodes whose `a` exceeds 0.9, then succeeds
    let cmd = "a=$(awk '/^a =/ {print $3}' input.txt); b=$(awk '/^b =/ {print $3}' input.txt); \
               if awk -v a=\"$a\" 'BEGIN{exit !(a > 0.9)}' && [ ! -f ../.second ]; then exit 7; fi; \
               awk -v a=\"$a\" -v b=\"$b\" 'BEGIN{printf \"E = %.17g\\n\", 2 + a + a*b}' > output.txt";
    project(
        d,
        &[("a", 0.0, 1.0), ("b", -1.0, 1.0)],
        &format!("[model]\nkind = \"external\"\ncommand = '''{cmd}'''\n\n[paths]\nwork_dir = \"runs\"\n"),
    );
    ok(d, &["-c", "project.toml", "design", "--level", "3"]);
    assert_eq!(code(d, &["-c", "project.toml", "run"]), 3);
    let nodes = data_rows(&d.join("out/design.txt")).len();
    let pending = data_rows(&d.join("out/pending.txt"));
    assert!(!pending.is_empty() && pending.len() < nodes, "{}", pending.len());
    std::fs::write(d.join("runs/.second"), "").unwrap();
    ok(d, &["-c", "project.toml", "run"]);
    assert_eq!(data_rows(&d.join("out/ensemble.txt")).len(), nodes);
    ok(d, &["-c", "project.toml", "fit", "--method", "nisp", "--order", "2"]);
    let report = std::fs::read_to_string(d.join("out/fit_report.txt")).unwrap();
    assert!(value(&report, "train_nre") < 1e-12, "{report}");
}

#[test]
fn mcmc_on_a_bowl_mixes() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    // 20 (P2(x) + P2(y)) + const: a bowl centred in the box
    write_expansion(&d.join("out_bowl.txt"), 2, 2, &[(&[0, 0], 15.0), (&[2, 0], 20.0), (&[0, 2], 20.0)]);
    project(d, &[("a", 0.0, 2.0), ("b", 1.0, 5.0)], "[calibration]\niterations = 20000\nproposal_scales = [0.3, 0.3]\n");
    let out = ok(d, &["-c", "project.toml", "mcmc", "--coefficients", "out_bowl.txt"]);
    let acc = value(&out, "acceptance_rate");
    assert!(acc > 0.1 && acc < 0.6, "{acc}");
    let rows = data_rows(&d.join("out/chain.txt"));
    assert_eq!(rows.len(), 16_000);
    ok(d, &["-c", "project.toml", "kde", "--chain", "out/chain.txt", "-o", "out/marginals.txt"]);
    let text = std::fs::read_to_string(d.join("out/marginals.txt")).unwrap();
    assert_eq!(text.matches("# column = ").count(), 3);
    assert_eq!(code(d, &["-c", "project.toml", "kde", "--chain", "out/chain.txt", "--column", "zz"]), 1);
}

fn pipeline(dir: &Path) {
    project(
        dir,
        &five(),
        "[model]\nkind = \"smooth\"\nnoise_seed = 11\n\n[fit]\norder = 3\n\n[calibration]\niterations = 10000\nseed = 5\n",
    );
    let c = ["-c", "project.toml"];
    let steps: [&[&str]; 6] = [
        &["design", "--level", "2"],
        &["run"],
        &["fit", "--method", "bpdn"],
        &["validate", "--ensemble", "out/ensemble.txt"],
        &["mcmc"],
        &["kde", "--chain", "out/chain.txt", "--column", "S", "-o", "out/s_pdf.txt"],
    ];
    for s in steps {
        let args: Vec<&str> = c.iter().chain(s.iter()).copied().collect();
        ok(dir, &args);
    }
}

#[test]
fn golden_pipeline_is_reproducible() {
    let start = Instant::now();
    let (t1, t2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(t1.path());
    pipeline(t2.path());
    for f in ["design.txt", "ensemble.txt", "coefficients.txt", "fit_report.txt", "chain.txt", "s_pdf.txt"] {
        let a = std::fs::read(t1.path().join("out").join(f)).unwrap();
        let b = std::fs::read(t2.path().join("out").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
    assert!(start.elapsed().as_secs() < 60, "{:?}", start.elapsed());
}
