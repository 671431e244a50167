//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use condgpc::condkl::{condition, select_full_rank_subset, KappaObservations};
use condgpc::experiment::{
    compare_strategies, median, prepare, preset, presets, run_pipeline, ExperimentConfig,
    RunReport, Stage, Strategy,
};
use condgpc::forward::ForwardModel;
use condgpc::gpc::{build_from_fn, build_surrogate, gauss_hermite_tensor, hermite, MultiIndexSet};
use condgpc::inference::{
    sample_posterior, LinearModel, ObservationModel, Posterior, SamplerConfig,
};
use condgpc::randfield::{compute_kl, CovarianceKernel, Truncation};
use condgpc::{Field, Grid};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn line(n: usize) -> Arc<Grid> {
    Arc::new(Grid::line(0.0, 1.0, n).unwrap())
}

fn rank_reduction() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let grid = line(101);
    let mut good = 0;
    let mut bad = Vec::new();
    for case in 0..50 {
        let n_g = r.random_range(5..=30);
        let n_m = r.random_range(1..n_g);
        let l = r.random_range(0.1..0.5);
        let kernel = CovarianceKernel::SeparableExponential { lengths: vec![l] };
        let kl = compute_kl(
            &kernel,
            grid.clone(),
            Field::constant(grid.clone(), 0.0),
            1.0,
            Truncation::Modes(n_g),
        )
        .unwrap();
        assert_eq!(kl.len(), n_g);
        // redraw until the observation covariance has full rank
        let obs = loop {
            let idx = rand::seq::index::sample(&mut r, grid.len(), n_m).into_vec();
            let o = KappaObservations::at_indices(idx, normals(&mut r, n_m)).unwrap();
            let kept = select_full_rank_subset(&kl, &o, 1e-10).unwrap();
            if kept.dropped.is_empty() {
                break kept;
            }
        };
        let ckl = condition(&kl, &obs).unwrap();
        let rank = ckl.projector_rank(1e-8);
        if rank == n_g - n_m && ckl.dim() == n_g - n_m {
            good += 1;
        } else {
            bad.push(format!("case {case}: N_G {n_g} N_m {n_m} rank {rank}"));
        }
    }
    let t = start.elapsed();
    outcome(
        good == 50 && within(t, 10.0),
        format!(
            "{good}/50 configurations have rank N_G - N_m {bad:?} ({:.1} s)",
            t.as_secs_f64()
        ),
    )
}

/// Reports of the strategy sweeps, shared by several criteria.
struct Sweeps {
    case2: Vec<RunReport>,
    case2_time: Duration,
    case1: condgpc::experiment::Comparison,
    case1_time: Duration,
    smooth: condgpc::experiment::Comparison,
    smooth_time: Duration,
}

const SEEDS_1D: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
const SEEDS_2D: [u64; 5] = [1, 2, 3, 4, 5];

fn sweeps() -> Sweeps {
    let start = Instant::now();
    let base = preset("1d-case2").unwrap();
    let case2 = SEEDS_1D
        .iter()
        .map(|&seed| {
            run_pipeline(
                &ExperimentConfig {
                    seed,
                    ..base.clone()
                },
                None,
            )
            .unwrap()
        })
        .collect();
    let case2_time = start.elapsed();

    let start = Instant::now();
    let case1 = compare_strategies(
        &preset("1d-case1").unwrap(),
        &Strategy::ALL,
        &SEEDS_1D,
        None,
    )
    .unwrap();
    let case1_time = start.elapsed();

    let start = Instant::now();
    let smooth = compare_strategies(
        &preset("2d-smooth-case1").unwrap(),
        &[Strategy::Variance, Strategy::Random],
        &SEEDS_2D,
        None,
    )
    .unwrap();
    let smooth_time = start.elapsed();
    Sweeps {
        case2,
        case2_time,
        case1,
        case1_time,
        smooth,
        smooth_time,
    }
}

fn all_reports(s: &Sweeps) -> impl Iterator<Item = &RunReport> {
    s.case2
        .iter()
        .chain(&s.case1.reports)
        .chain(&s.smooth.reports)
}

fn exact_match(s: &Sweeps) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    for config in presets() {
        let prep = prepare(&config, None, Stage::Condition).unwrap();
        let mut r = rng(2);
        for _ in 0..50 {
            let xi = normals(&mut r, prep.ckl.dim());
            let (_, kappa) = prep.ckl.sample(&xi).unwrap();
            for (p, y) in prep
                .observations
                .indices
                .iter()
                .zip(&prep.observations.values)
            {
                let obs = y.exp();
                worst = worst.max((kappa.values()[*p] - obs).abs() / obs);
            }
            samples += 1;
        }
    }
    let mut maps = 0;
    for rep in all_reports(s) {
        worst = worst.max(rep.kappa_match);
        maps += 1;
    }
    outcome(
        worst <= 1e-8,
        format!("max relative mismatch {worst:.2e} over {samples} conditional samples and {maps} MAP estimates"),
    )
}

fn zero_variance() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut names = Vec::new();
    for config in presets() {
        let prep = prepare(&config, None, Stage::Condition).unwrap();
        let s2 = prep.ckl.sigma().powi(2);
        let var = prep.ckl.variance_field();
        for p in &prep.observations.indices {
            worst = worst.max(var.values()[*p] / s2);
        }
        names.push(config.name);
    }
    outcome(
        worst <= 1e-10,
        format!(
            "max variance / sigma_g^2 at observations {worst:.2e} across {} presets",
            names.len()
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut r = rng(4);
    let grid = line(41);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let l = r.random_range(0.1..0.6);
        let kernel = CovarianceKernel::squared_exponential(l);
        let kl = compute_kl(
            &kernel,
            grid.clone(),
            Field::constant(grid.clone(), 0.0),
            1.0,
            Truncation::Modes(4),
        )
        .unwrap();
        let idx = rand::seq::index::sample(&mut r, grid.len(), 2).into_vec();
        let obs = KappaObservations::at_indices(idx.clone(), normals(&mut r, 2)).unwrap();
        let ckl = condition(&kl, &obs).unwrap();
        // direct Gaussian conditioning of the truncated covariance
        let phi = kl.modes();
        let lam = DMatrix::from_diagonal(&DVector::from_row_slice(kl.eigenvalues()));
        let c = phi * lam * phi.transpose();
        let n = grid.len();
        let c_xo = DMatrix::from_fn(n, 2, |p, j| c[(p, idx[j])]);
        let c_oo = DMatrix::from_fn(2, 2, |i, j| c[(idx[i], idx[j])]);
        let direct = &c - &c_xo * c_oo.try_inverse().unwrap() * c_xo.transpose();
        // covariance from the reduced eigenpairs
        let psi = ckl.reduced_modes();
        let lt = DMatrix::from_diagonal(&DVector::from_row_slice(ckl.reduced_eigenvalues()));
        let reduced = psi * lt * psi.transpose();
        worst = worst.max((direct - reduced).amax());
    }
    outcome(
        worst <= 1e-8,
        format!("max entrywise difference {worst:.2e} over 20 instances"),
    )
}

fn kl_spectrum() -> Outcome {
    let start = Instant::now();
    let grid = line(257);
    let kernel = CovarianceKernel::squared_exponential(0.05);
    let kl = compute_kl(
        &kernel,
        grid.clone(),
        Field::constant(grid, 0.0),
        1.0,
        Truncation::Energy(0.95),
    )
    .unwrap();
    let t = start.elapsed();
    let n = kl.len();
    outcome(
        (22..=28).contains(&n) && within(t, 5.0),
        format!(
            "95% energy reached with N_G = {n}, required 22..=28 ({:.2} s)",
            t.as_secs_f64()
        ),
    )
}

fn gpc_exactness() -> Outcome {
    let start = Instant::now();
    let rule = gauss_hermite_tensor(5, 4).unwrap();
    let set = MultiIndexSet::total_degree(5, 3);
    let basis = |k: usize, xi: &[f64]| -> f64 {
        set.get(k)
            .iter()
            .zip(xi)
            .map(|(a, x)| hermite(*a, *x))
            .product()
    };
    let mut gram_err: f64 = 0.0;
    for j in 0..set.len() {
        for k in 0..=j {
            let g = rule.integrate(|xi| basis(j, xi) * basis(k, xi));
            let e = if j == k { 1.0 } else { 0.0 };
            gram_err = gram_err.max((g - e).abs());
        }
    }
    let grid = line(11);
    let xs: Vec<f64> = (0..grid.len()).map(|p| grid.point(p)[0]).collect();
    let stub = |xi: &[f64]| -> Vec<f64> {
        xs.iter()
            .map(|x| {
                1.0 + x * xi[0] - 0.5 * xi[1] * xi[2] * xi[3]
                    + x * x * xi[4].powi(3)
                    + 0.3 * xi[0] * xi[0] * xi[2]
                    - 2.0 * x * xi[1]
            })
            .collect()
    };
    let s = build_from_fn(grid.clone(), 3, &rule, |_, xi| Ok(stub(xi))).unwrap();
    let mut r = rng(6);
    let mut fit_err: f64 = 0.0;
    for _ in 0..200 {
        let xi = normals(&mut r, 5);
        let u = s.eval(&xi).unwrap();
        let want = stub(&xi);
        for (a, b) in u.values().iter().zip(&want) {
            fit_err = fit_err.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    let t = start.elapsed();
    outcome(
        gram_err <= 1e-9 && fit_err <= 1e-9 && within(t, 30.0),
        format!(
            "Gram error {gram_err:.2e}, cubic stub error {fit_err:.2e} ({:.1} s)",
            t.as_secs_f64()
        ),
    )
}

struct Fidelity {
    outcome: Outcome,
    surrogate: condgpc::gpc::GpcSurrogate,
}

fn surrogate_fidelity() -> Fidelity {
    let config = preset("1d-case2").unwrap();
    let prep = prepare(&config, None, Stage::Condition).unwrap();
    let rule = gauss_hermite_tensor(prep.ckl.dim(), 4).unwrap();
    let start = Instant::now();
    let s = build_surrogate(&prep.ckl, &prep.solver, 3, &rule).unwrap();
    let t = start.elapsed();
    let mut r = rng(7);
    let (mut num, mut den, mut worst) = (0.0, 0.0, 0.0f64);
    for _ in 0..100 {
        let xi = normals(&mut r, prep.ckl.dim());
        let (_, kappa) = prep.ckl.sample(&xi).unwrap();
        let direct = prep.solver.solve(&kappa).unwrap();
        let approx = s.eval(&xi).unwrap();
        let d2: f64 = direct
            .values()
            .iter()
            .zip(approx.values())
            .zip(direct.grid().weights())
            .map(|((a, b), w)| w * (a - b).powi(2))
            .sum();
        let n2: f64 = direct
            .values()
            .iter()
            .zip(direct.grid().weights())
            .map(|(a, w)| w * a * a)
            .sum();
        num += d2;
        den += n2;
        worst = worst.max((d2 / n2).sqrt());
    }
    let rel = (num / den).sqrt();
    Fidelity {
        outcome: outcome(
            rel <= 0.02 && within(t, 60.0),
            format!(
                "d = {}, {} solves built in {:.1} s; relative L2 error {:.2e} over 100 draws (worst draw {worst:.2e})",
                prep.ckl.dim(),
                rule.len(),
                t.as_secs_f64(),
                rel
            ),
        ),
        surrogate: s,
    }
}

fn moment_formulas(s: &condgpc::gpc::GpcSurrogate) -> Outcome {
    let grid = s.grid().clone();
    let var = s.variance().values();
    let peak = (0..var.len())
        .max_by(|a, b| var[*a].total_cmp(&var[*b]))
        .unwrap();
    let mean_weight: Vec<f64> = grid.weights().iter().map(|w| w / grid.measure()).collect();
    let point: Vec<f64> = (0..grid.len())
        .map(|p| if p == peak { 1.0 } else { 0.0 })
        .collect();
    let n = 10_000;
    let mut r = rng(8);
    let draws: Vec<Field> = (0..n)
        .map(|_| s.eval(&normals(&mut r, s.dim())).unwrap())
        .collect();
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, w) in [
        ("peak-variance point", &point),
        ("domain mean", &mean_weight),
    ] {
        let ell = |f: &[f64]| f.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>();
        let mean_formula = ell(s.coefficient_values(0));
        let var_formula: f64 = (1..s.index_set().len())
            .map(|k| ell(s.coefficient_values(k)).powi(2))
            .sum();
        let v: Vec<f64> = draws.iter().map(|f| ell(f.values())).collect();
        let m = v.iter().sum::<f64>() / n as f64;
        let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
        let se_mean = (s2 / n as f64).sqrt();
        let se_var = ((m4 - s2 * s2) / n as f64).sqrt();
        let zm = (m - mean_formula).abs() / se_mean;
        let zv = (s2 - var_formula).abs() / se_var;
        pass &= zm < 3.0 && zv < 3.0;
        lines.push(format!("{name}: mean {zm:.2} SE, variance {zv:.2} SE"));
    }
    outcome(pass, lines.join("; "))
}

fn sampler_correctness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(9);
    let model = LinearModel {
        a: DMatrix::from_fn(8, 5, |_, _| r.sample(StandardNormal)),
        b: DVector::from_fn(8, |_, _| r.sample(StandardNormal)),
    };
    let y = model.predict(&[0.5, -1.0, 0.2, 0.8, -0.3]).unwrap();
    let (sigma, theta) = (0.5, 1.0);
    let (mean, cov) = model.conjugate_posterior(&y, sigma, &[0.0; 5], theta);
    let posterior = Posterior::new(model, y, sigma).unwrap();
    let config = SamplerConfig {
        seed: 3,
        ..Default::default()
    };
    let s = sample_posterior(&posterior, &config).unwrap();
    let mut worst_z: f64 = 0.0;
    for i in 0..5 {
        let (m, se) = s.batch_means(|x| x[i]);
        worst_z = worst_z.max((m - mean[i]).abs() / se);
        for j in 0..=i {
            let (c, se) = s.batch_means(|x| (x[i] - mean[i]) * (x[j] - mean[j]));
            worst_z = worst_z.max((c - cov[(i, j)]).abs() / se);
        }
    }
    let r_hat = s.r_hat().unwrap().into_iter().fold(0.0, f64::max);
    let t = start.elapsed();
    let short = SamplerConfig {
        iterations: 2000,
        burn_in: 1000,
        seed: 11,
        ..Default::default()
    };
    let a = sample_posterior(&posterior, &short).unwrap();
    let b = sample_posterior(&posterior, &short).unwrap();
    let bitwise = a.chains == b.chains && a.log_posterior == b.log_posterior;
    outcome(
        worst_z < 3.0 && r_hat < 1.05 && bitwise && within(t, 60.0),
        format!(
            "worst moment deviation {worst_z:.2} SE, max R-hat {r_hat:.4}, bitwise reproducible {bitwise} ({:.1} s)",
            t.as_secs_f64()
        ),
    )
}

fn inverse_crime(s: &Sweeps) -> Outcome {
    let linf: Vec<f64> = s.case2.iter().map(|r| r.linf).collect();
    let med = median(&linf);
    let under = linf.iter().filter(|e| **e <= 0.15).count();
    outcome(
        med <= 0.10 && under >= 8 && within(s.case2_time, 1800.0),
        format!(
            "median L-inf {med:.4}, {under}/10 seeds <= 0.15 ({:.0} s) {:?}",
            s.case2_time.as_secs_f64(),
            rounded(&linf)
        ),
    )
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

fn per_seed(c: &condgpc::experiment::Comparison, strategy: Strategy) -> Vec<f64> {
    c.rows
        .iter()
        .filter(|r| r.strategy == strategy)
        .map(|r| r.linf)
        .collect()
}

fn placement_ordering(s: &Sweeps) -> Outcome {
    let v = per_seed(&s.case1, Strategy::Variance);
    let u = per_seed(&s.case1, Strategy::Uniform);
    let r = per_seed(&s.case1, Strategy::Random);
    let (mv, mr, mu) = (median(&v), median(&r), median(&u));
    let beats_uniform = v.iter().zip(&u).filter(|(a, b)| a <= b).count();
    outcome(
        mv <= mr && beats_uniform >= 7,
        format!(
            "median L-inf variance {mv:.4}, random {mr:.4}, uniform {mu:.4}; variance <= uniform in {beats_uniform}/10 seeds ({:.0} s)",
            s.case1_time.as_secs_f64()
        ),
    )
}

fn smooth_2d(s: &Sweeps) -> Outcome {
    let v = per_seed(&s.smooth, Strategy::Variance);
    let r = per_seed(&s.smooth, Strategy::Random);
    let mv = median(&v);
    let wins = v.iter().zip(&r).filter(|(a, b)| a < b).count();
    outcome(
        mv <= 0.05 && wins >= 4 && within(s.smooth_time, 3600.0),
        format!(
            "median L-inf {mv:.4}; variance beats random in {wins}/5 seeds ({:.0} s) variance {:?} random {:?}",
            s.smooth_time.as_secs_f64(),
            rounded(&v),
            rounded(&r)
        ),
    )
}

fn error_variance_correlation(s: &Sweeps) -> Outcome {
    let rho: Vec<f64> = s
        .case1
        .reports
        .iter()
        .filter(|r| r.strategy == Strategy::Variance)
        .map(|r| r.spearman.unwrap_or(0.0))
        .collect();
    let positive = rho.iter().filter(|x| **x > 0.0).count();
    outcome(
        positive >= 7,
        format!(
            "Spearman(eps, var u) positive in {positive}/{} seeds {:?}",
            rho.len(),
            rounded(&rho)
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, o: Outcome| {
        println!(
            "{} {n:>2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };
    record(1, "rank reduction", rank_reduction());
    record(4, "conditioning oracle", oracle_equivalence());
    record(5, "KL spectrum", kl_spectrum());
    record(6, "gPC orthonormality and exactness", gpc_exactness());
    let fidelity = surrogate_fidelity();
    let moments = moment_formulas(&fidelity.surrogate);
    record(7, "surrogate fidelity", fidelity.outcome);
    record(8, "mean and variance formulas", moments);
    record(9, "sampler correctness", sampler_correctness());
    record(3, "zero variance at observations", zero_variance());
    let s = sweeps();
    record(2, "exact parameter match", exact_match(&s));
    record(10, "end-to-end inverse crime", inverse_crime(&s));
    record(11, "placement ordering", placement_ordering(&s));
    record(12, "2D smooth preset", smooth_2d(&s));
    record(
        13,
        "error-variance correlation",
        error_variance_correlation(&s),
    );

    results.sort_by_key(|r| r.0);
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.2.pass)
        .map(|r| format!("{} ({})", r.0, r.1))
        .collect();
    println!(
        "\nacceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(": {}", failed.join(", "))
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
