use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, KappaSampling, Strategy};
use super::stats::spearman;
use crate::condkl::{condition, select_full_rank_subset, ConditionalKl, KappaObservations};
use crate::error::{Error, Result};
use crate::forward::{DiffusionSolver, ForwardModel};
use crate::gpc::{
    build_surrogate, default_rule, fingerprint, gauss_hermite_tensor, smolyak_sparse, GpcSurrogate,
    QuadratureRule, RuleKind,
};
use crate::grid::{fmt_f64, Field, Grid};
use crate::inference::{
    map_estimate, relative_error, sample_posterior, Diagnostics, Posterior, SamplerConfig,
    UObservations,
};
use crate::placement::{
    baseline_locations, classify_critical_points, select_locations, Baseline, CriticalKind,
    Location, PlacementResult, Provenance,
};
use crate::randfield::{compute_kl, lognormal_moments, KlExpansion};

const STREAM_REFERENCE: u64 = 1;
const STREAM_KAPPA: u64 = 2;
const STREAM_PLACEMENT: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_SAMPLER: u64 = 5;

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Kl,
    Reference,
    Condition,
    Surrogate,
    Place,
    Infer,
    Estimate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Kl => "kl",
            Stage::Reference => "reference",
            Stage::Condition => "condition",
            Stage::Surrogate => "surrogate",
            Stage::Place => "place",
            Stage::Infer => "infer",
            Stage::Estimate => "estimate",
        }
    }
}

/// Seed of the independent random stream `stream` under `master`.
pub fn stream_seed(master: u64, stream: u64) -> u64 {
    stream_rng(master, stream).next_u64()
}

fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

type Timings = BTreeMap<String, f64>;

fn timed<T>(timings: &mut Timings, stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let r = f().map_err(|e| e.in_stage(stage.name()));
    timings.insert(stage.name().into(), start.elapsed().as_secs_f64());
    r
}

fn subdir(out: Option<&Path>, name: &str) -> Result<Option<PathBuf>> {
    match out {
        Some(o) => {
            let d = o.join(name);
            fs::create_dir_all(&d)?;
            Ok(Some(d))
        }
        None => Ok(None),
    }
}

/// Everything shared by the measurement strategies of one seed: the
/// reference field, its conductivity measurements and the surrogate.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub solver: DiffusionSolver,
    pub kl: KlExpansion,
    pub xi_true: Vec<f64>,
    pub log_reference: Field,
    pub kappa_reference: Field,
    pub u_reference: Field,
    pub observations: KappaObservations,
    pub ckl: ConditionalKl,
    pub surrogate: Option<GpcSurrogate>,
    pub timings: Timings,
}

impl Prepared {
    pub fn grid(&self) -> &Arc<Grid> {
        self.kl.grid()
    }

    pub fn surrogate(&self) -> &GpcSurrogate {
        self.surrogate.as_ref().expect("surrogate stage has run")
    }
}

/// KL expansion of the prior; writes `kl/spectrum.csv` under `out`.
pub fn expand_prior(config: &ExperimentConfig, out: Option<&Path>) -> Result<KlExpansion> {
    let mut timings = Timings::new();
    kl_stage(config, out, &mut timings)
}

fn kl_stage(
    config: &ExperimentConfig,
    out: Option<&Path>,
    timings: &mut Timings,
) -> Result<KlExpansion> {
    config.validate()?;
    if let Some(o) = out {
        fs::create_dir_all(o)?;
        fs::write(o.join("config.json"), config.to_json())?;
    }
    let grid = Arc::new(config.grid()?);
    let moments = lognormal_moments(config.mu_k, config.sigma_k)?;
    timed(timings, Stage::Kl, || {
        let mean = Field::constant(grid.clone(), moments.mu);
        let kl = compute_kl(
            &config.kernel,
            grid.clone(),
            mean,
            moments.sigma,
            config.truncation,
        )?;
        info!(
            "KL: {} modes, {:.4} of the energy",
            kl.len(),
            kl.energy_fraction()
        );
        if let Some(d) = subdir(out, "kl")? {
            kl.write_spectrum_csv(File::create(d.join("spectrum.csv"))?)?;
        }
        Ok(kl)
    })
}

/// Runs the shared stages through [`Stage::Condition`], and through
/// [`Stage::Surrogate`] when `until` reaches it, writing artifacts under
/// `out`.
pub fn prepare(config: &ExperimentConfig, out: Option<&Path>, until: Stage) -> Result<Prepared> {
    let mut timings = Timings::new();
    let kl = kl_stage(config, out, &mut timings)?;
    let grid = kl.grid().clone();
    let moments = lognormal_moments(config.mu_k, config.sigma_k)?;

    let solver = DiffusionSolver::new(grid.clone(), config.boundary)?;
    let (xi_true, log_reference, kappa_reference, u_reference) =
        timed(&mut timings, Stage::Reference, || {
            let mut rng = stream_rng(config.seed, STREAM_REFERENCE);
            let xi: Vec<f64> = (0..kl.len()).map(|_| rng.sample(StandardNormal)).collect();
            let y = kl.sample(&xi)?;
            let kappa = y.map(f64::exp);
            let u = solver.solve(&kappa)?;
            if let Some(d) = subdir(out, "reference")? {
                y.save_csv(d.join("log_kappa.csv"))?;
                kappa.save_csv(d.join("kappa.csv"))?;
                u.save_csv(d.join("u.csv"))?;
                write_vector(d.join("xi.csv"), "xi", &xi)?;
            }
            Ok((xi, y, kappa, u))
        })?;

    let (observations, ckl) = timed(&mut timings, Stage::Condition, || {
        let mut rng = stream_rng(config.seed, STREAM_KAPPA);
        let idx = kappa_indices(config, &log_reference, moments.mu, &mut rng)?;
        let values = idx.iter().map(|p| log_reference.values()[*p]).collect();
        let all = KappaObservations::at_indices(idx, values)?;
        let obs = select_full_rank_subset(&kl, &all, config.pivot_tolerance)?;
        if !obs.dropped.is_empty() {
            warn!(
                "dropped {} redundant conductivity measurements",
                obs.dropped.len()
            );
        }
        let ckl = condition(&kl, &obs)?;
        info!(
            "conditioned on {} measurements: {} reduced dimensions",
            obs.len(),
            ckl.dim()
        );
        if let Some(d) = subdir(out, "condition")? {
            write_kappa_observations(d.join("kappa_observations.csv"), &grid, &obs)?;
            ckl.mean().save_csv(d.join("mean.csv"))?;
            ckl.variance_field().save_csv(d.join("variance.csv"))?;
            write_vector(
                d.join("eigenvalues.csv"),
                "lambda",
                ckl.reduced_eigenvalues(),
            )?;
        }
        Ok((obs, ckl))
    })?;

    let mut prepared = Prepared {
        config: config.clone(),
        solver,
        kl,
        xi_true,
        log_reference,
        kappa_reference,
        u_reference,
        observations,
        ckl,
        surrogate: None,
        timings,
    };
    if until < Stage::Surrogate {
        return Ok(prepared);
    }
    let mut timings = std::mem::take(&mut prepared.timings);
    let surrogate = timed(&mut timings, Stage::Surrogate, || {
        let dir = subdir(out, "surrogate")?;
        if let Some(s) = dir.as_deref().and_then(|d| cached_surrogate(d, &prepared)) {
            info!(
                "reusing the surrogate stored under {}",
                out.unwrap().display()
            );
            return Ok(s);
        }
        let rule = quadrature(config, prepared.ckl.dim())?;
        info!("building surrogate from {} forward solves", rule.len());
        let s = build_surrogate(&prepared.ckl, &prepared.solver, config.degree, &rule)?;
        if let Some(d) = dir {
            s.save(&d)?;
            s.mean().save_csv(d.join("u_mean.csv"))?;
            s.variance().save_csv(d.join("u_variance.csv"))?;
        }
        Ok(s)
    })?;
    prepared.timings = timings;
    prepared.surrogate = Some(surrogate);
    Ok(prepared)
}

fn quadrature(config: &ExperimentConfig, dim: usize) -> Result<QuadratureRule> {
    match config.rule {
        Some(RuleKind::Tensor { points }) => gauss_hermite_tensor(dim, points),
        Some(RuleKind::Sparse { level }) => smolyak_sparse(dim, level),
        None => default_rule(dim, config.degree),
    }
}

/// A stored surrogate built on exactly this conditional expansion and rule.
fn cached_surrogate(dir: &Path, p: &Prepared) -> Option<GpcSurrogate> {
    if !dir.join("metadata.json").exists() {
        return None;
    }
    let s = GpcSurrogate::load(dir).ok()?;
    let rule = quadrature(&p.config, p.ckl.dim()).ok()?;
    let same = s.fingerprint() == fingerprint(&p.ckl)
        && s.degree() == p.config.degree
        && s.rule() == rule.kind()
        && s.grid().same_as(p.grid());
    same.then_some(s)
}

/// Grid indices of the conductivity measurements.
fn kappa_indices(
    config: &ExperimentConfig,
    log_reference: &Field,
    mu: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let grid = log_reference.grid();
    let n = grid.len();
    let random_excluding = |taken: &[usize], k: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        let free: Vec<usize> = (0..n).filter(|p| !taken.contains(p)).collect();
        let k = k.min(free.len());
        let mut pick: Vec<usize> = sample(rng, free.len(), k)
            .into_iter()
            .map(|i| free[i])
            .collect();
        pick.sort_unstable();
        pick
    };
    match config.kappa_sampling {
        KappaSampling::Random { count } => Ok(random_excluding(&[], count, rng)),
        KappaSampling::Uniform { count } => baseline_locations(grid, count, Baseline::Uniform),
        KappaSampling::Critical {
            critical,
            inflections,
            random,
        } => {
            let v = log_reference.values();
            let kinds = classify_critical_points(log_reference);
            let strongest = |mut idx: Vec<usize>, key: &dyn Fn(usize) -> f64| {
                idx.sort_by(|a, b| key(*b).total_cmp(&key(*a)).then(a.cmp(b)));
                idx
            };
            let extrema: Vec<usize> = kinds
                .iter()
                .filter(|c| c.kind != CriticalKind::Inflection)
                .map(|c| c.index)
                .collect();
            let mut chosen: Vec<usize> = strongest(extrema, &|p| (v[p] - mu).abs())
                .into_iter()
                .take(critical)
                .collect();
            let slope = |p: usize| {
                if p == 0 || p + 1 >= n {
                    0.0
                } else {
                    (v[p + 1] - v[p - 1]).abs()
                }
            };
            let infl: Vec<usize> = kinds
                .iter()
                .filter(|c| c.kind == CriticalKind::Inflection && !chosen.contains(&c.index))
                .map(|c| c.index)
                .collect();
            chosen.extend(strongest(infl, &slope).into_iter().take(inflections));
            let shortfall = critical + inflections - chosen.len();
            if shortfall > 0 {
                warn!("reference field has {shortfall} fewer critical points than requested; filling randomly");
            }
            let fill = random_excluding(&chosen, random + shortfall, rng);
            chosen.extend(fill);
            Ok(chosen)
        }
    }
}

fn write_vector(path: impl AsRef<Path>, name: &str, v: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", name])?;
    for (i, x) in v.iter().enumerate() {
        w.write_record([i.to_string(), fmt_f64(x)])?;
    }
    w.flush()?;
    Ok(())
}

fn coord_header(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["x".into()]
    } else {
        (1..=dim).map(|k| format!("x{k}")).collect()
    }
}

fn write_kappa_observations(path: PathBuf, grid: &Grid, obs: &KappaObservations) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["index".to_string()];
    header.extend(coord_header(grid.dimension()));
    header.push("log_kappa".into());
    w.write_record(&header)?;
    for (p, y) in obs.indices.iter().zip(&obs.values) {
        let mut rec = vec![p.to_string()];
        rec.extend(grid.point(*p).iter().map(fmt_f64));
        rec.push(fmt_f64(y));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of one measurement strategy on one prepared experiment. The
/// serialized form is a pure function of the configuration; wall times are
/// kept separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub strategy: Strategy,
    pub n_g: usize,
    pub energy_fraction: f64,
    pub n_m: usize,
    pub n_m_dropped: usize,
    pub dim: usize,
    pub n_k: usize,
    pub placement: Vec<Location>,
    pub xi_true_reduced: Vec<f64>,
    pub xi_map: Vec<f64>,
    pub map_log_posterior: f64,
    pub acceptance: Vec<f64>,
    pub r_hat: Vec<f64>,
    /// `max |kappa_est - kappa_obs| / kappa_obs` over the conductivity
    /// measurements.
    pub kappa_match: f64,
    /// Largest conditional log-variance at a measurement, relative to
    /// `sigma_g^2`.
    pub variance_at_observations: f64,
    /// Relative L2 distance between surrogate and direct solution at the true
    /// reduced coordinates.
    pub surrogate_error_at_truth: f64,
    pub linf: f64,
    pub l2: f64,
    /// Rank correlation between the pointwise error and the state variance.
    pub spearman: Option<f64>,
    #[serde(skip)]
    pub timings: Timings,
}

/// Runs one measurement strategy on a prepared experiment, up to and
/// including `until`, writing artifacts under `out`. Returns `None` when
/// stopped before the estimate.
pub fn run_strategy(
    prep: &Prepared,
    strategy: Strategy,
    out: Option<&Path>,
    until: Stage,
) -> Result<Option<RunReport>> {
    let config = &prep.config;
    let surrogate = prep.surrogate();
    let grid = prep.grid().clone();
    if let Some(o) = out {
        fs::create_dir_all(o)?;
    }
    let mut timings = prep.timings.clone();

    let placement = timed(&mut timings, Stage::Place, || {
        let var = surrogate.variance();
        let placement = match strategy {
            Strategy::Variance => select_locations(var, config.n_k, config.min_separation)?,
            Strategy::Uniform => {
                let idx = baseline_locations(&grid, config.n_k, Baseline::Uniform)?;
                PlacementResult::from_indices(var, &idx, Provenance::Baseline)
            }
            Strategy::Random => {
                let seed = stream_seed(config.seed, STREAM_PLACEMENT);
                let idx = baseline_locations(&grid, config.n_k, Baseline::Random { seed })?;
                PlacementResult::from_indices(var, &idx, Provenance::Baseline)
            }
        };
        if let Some(o) = out {
            placement.save_csv(o.join("placement.csv"))?;
        }
        Ok(placement)
    })?;
    if until < Stage::Infer {
        return Ok(None);
    }

    let (xi_map, map_lp, samples) = timed(&mut timings, Stage::Infer, || {
        let points = placement.points();
        let mut values: Vec<f64> = placement
            .indices()
            .iter()
            .map(|p| prep.u_reference.values()[*p])
            .collect();
        if config.noisy {
            let mut rng = stream_rng(config.seed, STREAM_NOISE);
            for v in values.iter_mut() {
                *v += config.sigma_delta * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let obs = UObservations::new(points, values)?.with_sigma(config.sigma_delta);
        if let Some(o) = out {
            write_u_observations(o.join("u_observations.csv"), &obs)?;
        }
        let posterior = Posterior::from_surrogate(surrogate, &obs)?
            .with_prior(vec![0.0; surrogate.dim()], config.theta)?;
        let sampler = SamplerConfig {
            seed: stream_seed(config.seed, STREAM_SAMPLER) ^ config.sampler.seed,
            ..config.sampler.clone()
        };
        let samples = sample_posterior(&posterior, &sampler)?;
        let (xi, lp) = map_estimate(&samples, &posterior, config.polish)?;
        if let Some(o) = out {
            if config.write_chains {
                samples.save_csv(o.join("chains.csv"))?;
            }
            let diag = Diagnostics {
                chains: samples.chain_count(),
                iterations: samples.iterations(),
                burn_in: samples.burn_in,
                acceptance: samples.acceptance.clone(),
                r_hat: samples.r_hat()?,
                map: xi.clone(),
                map_log_posterior: lp,
            };
            fs::write(
                o.join("diagnostics.json"),
                serde_json::to_string_pretty(&diag)?,
            )?;
        }
        Ok((xi, lp, samples))
    })?;
    if until < Stage::Estimate {
        return Ok(None);
    }

    let report = timed(&mut timings, Stage::Estimate, || {
        let ckl = &prep.ckl;
        let (log_est, kappa_est) = ckl.sample(&xi_map)?;
        let err = relative_error(&prep.kappa_reference, &kappa_est)?;
        let eps = err.field.clone().expect("error field");
        let kappa_match = prep
            .observations
            .indices
            .iter()
            .zip(&prep.observations.values)
            .map(|(p, y)| {
                let obs = y.exp();
                (kappa_est.values()[*p] - obs).abs() / obs
            })
            .fold(0.0, f64::max);
        let s2 = ckl.sigma().powi(2);
        let var = ckl.variance_field();
        let variance_at_observations = if s2 > 0.0 {
            prep.observations
                .indices
                .iter()
                .map(|p| var.values()[*p] / s2)
                .fold(0.0, f64::max)
        } else {
            0.0
        };
        let xi_true_reduced = ckl.reduce(&prep.xi_true)?;
        let u_true = surrogate.eval(&xi_true_reduced)?;
        let diff: Vec<f64> = u_true
            .values()
            .iter()
            .zip(prep.u_reference.values())
            .map(|(a, b)| a - b)
            .collect();
        let surrogate_error_at_truth =
            Field::new(grid.clone(), diff)?.norm() / prep.u_reference.norm().max(f64::MIN_POSITIVE);
        if let Some(o) = out {
            kappa_est.save_csv(o.join("kappa_estimate.csv"))?;
            log_est.save_csv(o.join("log_kappa_estimate.csv"))?;
            eps.save_csv(o.join("error.csv"))?;
        }
        Ok(RunReport {
            name: config.name.clone(),
            seed: config.seed,
            strategy,
            n_g: prep.kl.len(),
            energy_fraction: prep.kl.energy_fraction(),
            n_m: prep.observations.len(),
            n_m_dropped: prep.observations.dropped.len(),
            dim: ckl.dim(),
            n_k: placement.len(),
            placement: placement.locations.clone(),
            xi_true_reduced,
            xi_map: xi_map.clone(),
            map_log_posterior: map_lp,
            acceptance: samples.acceptance.clone(),
            r_hat: samples.r_hat()?,
            kappa_match,
            variance_at_observations,
            surrogate_error_at_truth,
            linf: err.linf,
            l2: err.l2,
            spearman: spearman(eps.values(), surrogate.variance().values()),
            timings: Timings::new(),
        })
    })?;
    let report = RunReport { timings, ..report };
    if let Some(o) = out {
        fs::write(
            o.join("report.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        fs::write(
            o.join("timings.json"),
            serde_json::to_string_pretty(&report.timings)?,
        )?;
    }
    Ok(Some(report))
}

fn write_u_observations(path: PathBuf, obs: &UObservations) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = obs.points.first().map_or(1, Vec::len);
    let mut header = coord_header(dim);
    header.push("u".into());
    w.write_record(&header)?;
    for (x, u) in obs.points.iter().zip(&obs.values) {
        let mut rec: Vec<String> = x.iter().map(fmt_f64).collect();
        rec.push(fmt_f64(u));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Full pipeline with the configured strategy.
pub fn run_pipeline(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunReport> {
    let prep = prepare(config, out, Stage::Surrogate)?;
    let report = run_strategy(&prep, config.strategy, out, Stage::Estimate)?;
    report.ok_or_else(|| Error::arg("pipeline stopped before the estimate"))
}
