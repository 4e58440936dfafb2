use ndarray::{array, Array1, Array2};
use pcecal::bpdn::*;
use pcecal::harness::random_design;
use pcecal::nisp::{band_means, nisp_coefficients, spectrum};
use pcecal::numeric::{norm1, norm2};
use pcecal::{DesignEnsemble, PcBasis, SparseGrid};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn planted(basis: &PcBasis, sparsity: usize, max_degree: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..basis.len())
        .filter(|&k| basis.indices()[k].total_degree() <= max_degree)
        .collect();
    idx.shuffle(rng);
    let mut e = vec![0.0; basis.len()];
    for &k in &idx[..sparsity] {
        let mag: f64 = rng.random_range(0.5..1.5);
        e[k] = if rng.random::<bool>() { mag } else { -mag };
    }
    e
}

fn noisy(psi: &Array2<f64>, e: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    psi.dot(&Array1::from(e.to_vec()))
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(rng);
            v + sigma * z
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&d) / norm2(b)
}

#[test]
fn l1_norm_matches_reference_solutions() {
    // references from an interior-point conic solver, agreeing with a second
    // solver to 1e-11
    let cases: [(usize, usize, Array2<f64>, f64, f64); 3] = [
        (
            2,
            3,
            array![[-0.9, 0.2], [-0.5, -0.7], [-0.1, 0.8], [0.3, -0.3], [0.6, 0.5], [0.95, -0.85], [0.15, 0.05], [-0.35, 0.45]],
            0.1,
            1.855717400433444,
        ),
        (
            2,
            3,
            array![
                [-0.8, -0.8],
                [-0.6, 0.4],
                [-0.2, -0.1],
                [0.0, 0.9],
                [0.4, -0.6],
                [0.7, 0.3],
                [0.9, 0.9],
                [-0.95, 0.0],
                [0.25, 0.55],
                [0.55, -0.95]
            ],
            0.3,
            1.1916595244013655,
        ),
        (
            3,
            2,
            array![
                [-0.7, 0.1, 0.5],
                [0.2, -0.9, 0.3],
                [0.8, 0.6, -0.4],
                [-0.3, -0.2, -0.8],
                [0.5, 0.0, 0.9],
                [-0.1, 0.7, -0.6],
                [0.9, -0.4, 0.0]
            ],
            0.05,
            2.628098149231789,
        ),
    ];
    let opts = SolverOptions {
        max_iters: 200_000,
        opt_tol: 1e-10,
    };
    for (m, r, nodes, rel, reference) in cases {
        let basis = PcBasis::new(m, r).unwrap();
        let psi = measurement_matrix(&basis, nodes.view()).unwrap();
        let b: Vec<f64> = nodes
            .rows()
            .into_iter()
            .map(|x| 1.0 + x[0] - 0.5 * x[1] * x[1] + 0.25 * (3.0 * x.sum()).sin())
            .collect();
        let delta = rel * norm2(&b);
        let sol = solve_bpdn(&psi, &b, delta, opts).unwrap();
        assert_eq!(sol.status, BpdnStatus::RootFound);
        assert!(sol.residual_norm <= delta * (1.0 + opts.opt_tol));
        assert!((sol.l1_norm - reference).abs() <= 1e-6 * reference, "{} vs {reference}", sol.l1_norm);
    }
}

#[test]
fn planted_sparse_recovery() {
    let basis = PcBasis::new(5, 5).unwrap();
    let sigma = 0.005;
    for trial in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let e = planted(&basis, 10, 5, &mut rng);
        let nodes = random_design(5, 200, 100 + trial);
        let psi = measurement_matrix(&basis, nodes.view()).unwrap();
        let b = noisy(&psi, &e, sigma, &mut rng);
        let sol = solve_bpdn(&psi, &b, 1.1 * sigma * 200f64.sqrt(), SolverOptions::default()).unwrap();
        assert!(sol.converged());
        assert!(rel_err(&sol.coefficients, &e) <= 0.05);
    }
}

#[test]
fn cross_validated_budget_tracks_the_noise() {
    let basis = PcBasis::new(5, 5).unwrap();
    let sigma = 0.02;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let e = planted(&basis, 10, 5, &mut rng);
    let nodes = random_design(5, 400, 10);
    let psi = measurement_matrix(&basis, nodes.view()).unwrap();
    let ens = DesignEnsemble::from_samples(nodes, noisy(&psi, &e, sigma, &mut rng)).unwrap();
    let cfg = BpdnConfig::default();
    let rep = fit_bpdn(&basis, &ens, &cfg).unwrap();
    let cv = rep.cv_errors.as_ref().unwrap();
    assert_eq!(cv.dim(), (cfg.cv_folds, cfg.delta_grid.len()));
    let n_train = 300.0;
    let target = sigma * f64::sqrt(n_train);
    let train_delta = rep.chosen_delta / (400.0f64 / n_train).sqrt();
    assert!(train_delta / target < 2.0 && target / train_delta < 2.0, "{train_delta} vs {target}");
    assert!(rep.residual_norm <= rep.chosen_delta * (1.0 + cfg.opt_tol));
}

#[test]
fn noise_free_data_picks_the_smallest_budget() {
    let basis = PcBasis::new(3, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let e = planted(&basis, 4, 3, &mut rng);
    let nodes = random_design(3, 120, 5);
    let psi = measurement_matrix(&basis, nodes.view()).unwrap();
    let values = psi.dot(&Array1::from(e.clone())).to_vec();
    let ens = DesignEnsemble::from_samples(nodes, values).unwrap();
    let rep = fit_bpdn(&basis, &ens, &BpdnConfig::default()).unwrap();
    let cv = rep.cv_errors.unwrap();
    let means: Vec<f64> = cv.columns().into_iter().map(|c| c.mean().unwrap()).collect();
    let best = means.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(best, 0);
    assert!(rel_err(&rep.coefficients, &e) < 1e-3);
}

#[test]
fn denoising_beats_projection_on_planted_sparsity() {
    let grid = SparseGrid::new(5, 5).unwrap();
    let basis = PcBasis::new(5, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut e = planted(&basis, 10, 3, &mut rng);
    e[0] = 10.0;
    let psi = measurement_matrix(&basis, grid.nodes().view()).unwrap();
    let ens = DesignEnsemble::from_grid(&grid, noisy(&psi, &e, 0.3, &mut rng)).unwrap();
    let nisp = band_means(&spectrum(&basis, &nisp_coefficients(&basis, &ens).unwrap()).unwrap());
    let rep = fit_bpdn(&basis, &ens, &BpdnConfig::default()).unwrap();
    let bpdn = band_means(&spectrum(&basis, &rep.coefficients).unwrap());
    assert!(nisp[5] >= 10.0 * bpdn[5], "nisp {nisp:?} bpdn {bpdn:?}");
    assert!(norm1(&rep.coefficients) < norm1(&nisp_coefficients(&basis, &ens).unwrap()));
}
