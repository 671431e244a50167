use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::posterior::{ObservationModel, Posterior};
use crate::error::{Error, Result};
use crate::grid::fmt_f64;

/// Consecutive generations without a single acceptance before giving up.
const STALL_LIMIT: usize = 1000;
/// Burn-in only: all-rejected generations before the difference jumps are
/// halved, and the log-scale regained per well-accepted generation.
const DE_SHRINK_AFTER: usize = 20;
const DE_REGROW: f64 = 0.05;
/// Generations between outlier-chain checks during burn-in.
const OUTLIER_EVERY: usize = 50;
const OUTLIER_GAP: f64 = 10.0;
/// Standard deviation of the DE-MC jitter.
const DE_NOISE: f64 = 1e-6;
/// Probability of a unit DE-MC jump.
const DE_UNIT_JUMP: f64 = 0.1;
/// Target acceptance rate of the adaptive random walk.
const RW_TARGET: f64 = 0.234;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proposal {
    DeMc,
    AdaptiveRw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Number of chains; `None` uses `max(4, 2 d)`.
    pub chains: Option<usize>,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub proposal: Proposal,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: None,
            iterations: 20_000,
            burn_in: 10_000,
            seed: 0,
            proposal: Proposal::DeMc,
        }
    }
}

impl SamplerConfig {
    pub fn chain_count(&self, dim: usize) -> usize {
        self.chains.unwrap_or((2 * dim + 2).max(4))
    }
}

/// Chains from [`sample_posterior`], burn-in included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub dim: usize,
    pub burn_in: usize,
    /// `chains[c][t]` is the state of chain `c` after generation `t`.
    pub chains: Vec<Vec<Vec<f64>>>,
    pub log_posterior: Vec<Vec<f64>>,
    /// Per chain, over the retained generations.
    pub acceptance: Vec<f64>,
}

impl PosteriorSamples {
    pub fn chain_count(&self) -> usize {
        self.chains.len()
    }

    pub fn iterations(&self) -> usize {
        self.chains.first().map_or(0, Vec::len)
    }

    /// Post-burn-in part of chain `c`.
    pub fn retained(&self, c: usize) -> &[Vec<f64>] {
        &self.chains[c][self.burn_in.min(self.chains[c].len())..]
    }

    fn retained_lp(&self, c: usize) -> &[f64] {
        &self.log_posterior[c][self.burn_in.min(self.log_posterior[c].len())..]
    }

    fn pooled(&self) -> impl Iterator<Item = &Vec<f64>> {
        (0..self.chain_count()).flat_map(|c| self.retained(c).iter())
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        let mut n = 0usize;
        for x in self.pooled() {
            m.iter_mut().zip(x).for_each(|(a, b)| *a += b);
            n += 1;
        }
        m.iter_mut().for_each(|a| *a /= n.max(1) as f64);
        m
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let m = DVector::from_vec(self.mean());
        let mut c = DMatrix::zeros(self.dim, self.dim);
        let mut n = 0usize;
        for x in self.pooled() {
            let dx = DVector::from_column_slice(x) - &m;
            c += &dx * dx.transpose();
            n += 1;
        }
        c / (n.saturating_sub(1).max(1)) as f64
    }

    /// Pooled estimate of `E[f]` and its batch-means standard error.
    ///
    /// DE-MC chains are coupled through their shared differences, so `f` is
    /// first averaged over chains per generation and the batches (20 of
    /// them) are formed along that single series.
    pub fn batch_means(&self, f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
        const BATCHES: usize = 20;
        let c = self.chain_count();
        let n = self.iterations().saturating_sub(self.burn_in);
        let series: Vec<f64> = (0..n)
            .map(|t| (0..c).map(|k| f(&self.retained(k)[t])).sum::<f64>() / c as f64)
            .collect();
        let size = (n / BATCHES).max(1);
        let means: Vec<f64> = series
            .chunks_exact(size)
            .map(|b| b.iter().sum::<f64>() / size as f64)
            .collect();
        let k = means.len() as f64;
        let est = means.iter().sum::<f64>() / k;
        let var = means.iter().map(|m| (m - est).powi(2)).sum::<f64>() / (k - 1.0);
        (est, (var / k).sqrt())
    }

    /// Retained sample with the largest log-posterior (earliest on ties).
    pub fn best(&self) -> Option<(Vec<f64>, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for c in 0..self.chain_count() {
            for (t, lp) in self.retained_lp(c).iter().enumerate() {
                if best.is_none_or(|(_, _, b)| *lp > b) {
                    best = Some((c, t, *lp));
                }
            }
        }
        best.map(|(c, t, lp)| (self.retained(c)[t].clone(), lp))
    }

    pub fn r_hat(&self) -> Result<Vec<f64>> {
        let chains: Vec<&[Vec<f64>]> = (0..self.chain_count()).map(|c| self.retained(c)).collect();
        gelman_rubin(&chains)
    }

    /// Rows `iteration, chain, xi_1..xi_d, log_posterior` for retained
    /// generations.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["iteration".to_string(), "chain".to_string()];
        header.extend((1..=self.dim).map(|k| format!("xi_{k}")));
        header.push("log_posterior".into());
        w.write_record(&header)?;
        for t in self.burn_in..self.iterations() {
            for c in 0..self.chain_count() {
                let mut rec = vec![t.to_string(), c.to_string()];
                rec.extend(self.chains[c][t].iter().map(fmt_f64));
                rec.push(fmt_f64(&self.log_posterior[c][t]));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Sampler summary exported next to the chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub acceptance: Vec<f64>,
    pub r_hat: Vec<f64>,
    pub map: Vec<f64>,
    pub map_log_posterior: f64,
}

/// Potential scale reduction per coordinate,
/// `R = sqrt(1 + B / (n W))` with `B / n` the variance of the chain means and
/// `W` the mean within-chain variance. Exactly one when all chain means agree.
pub fn gelman_rubin(chains: &[&[Vec<f64>]]) -> Result<Vec<f64>> {
    if chains.len() < 2 {
        return Err(Error::arg("Gelman-Rubin needs at least two chains"));
    }
    let n = chains[0].len();
    if n < 2 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::arg("chains must share a length of at least two"));
    }
    let d = chains[0][0].len();
    let m = chains.len() as f64;
    let nf = n as f64;
    let mut out = Vec::with_capacity(d);
    for k in 0..d {
        let means: Vec<f64> = chains
            .iter()
            .map(|c| c.iter().map(|x| x[k]).sum::<f64>() / nf)
            .collect();
        let w = chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| c.iter().map(|x| (x[k] - mu).powi(2)).sum::<f64>() / (nf - 1.0))
            .sum::<f64>()
            / m;
        let grand = means.iter().sum::<f64>() / m;
        let b_over_n = means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
        out.push(if b_over_n == 0.0 {
            1.0
        } else if w == 0.0 {
            f64::INFINITY
        } else {
            (1.0 + b_over_n / w).sqrt()
        });
    }
    Ok(out)
}

struct Chain {
    rng: ChaCha8Rng,
    x: Vec<f64>,
    lp: f64,
    accepted: bool,
    /// Random-walk step multiplier.
    log_scale: f64,
}

/// Runs `C` chains for `iterations` generations. Every chain owns a random
/// stream derived from the seed.
///
/// A DE-MC generation updates the population in two halves: chains of one
/// half propose `x_c + gamma (x_a - x_b) + e` with `a != b` drawn from the
/// other half, whose states are fixed meanwhile. Each half-step is then a
/// valid Metropolis-within-Gibbs move for the product target, and the chains
/// within a half run concurrently without affecting the result.
pub fn sample_posterior<M: ObservationModel>(
    posterior: &Posterior<M>,
    config: &SamplerConfig,
) -> Result<PosteriorSamples> {
    let d = posterior.dim();
    let c_count = config.chain_count(d);
    if d == 0 {
        return Err(Error::arg("nothing to sample in zero dimensions"));
    }
    if config.iterations <= config.burn_in {
        return Err(Error::arg("iterations must exceed the burn-in"));
    }
    match config.proposal {
        Proposal::DeMc if c_count < 4 => {
            return Err(Error::arg("DE-MC needs at least four chains"))
        }
        Proposal::AdaptiveRw if c_count < 1 => return Err(Error::arg("need at least one chain")),
        _ => {}
    }
    let sd = posterior.theta().sqrt();
    let mut chains: Vec<Chain> = (0..c_count)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(c as u64);
            let x: Vec<f64> = posterior
                .prior_mean()
                .iter()
                .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let lp = posterior.density(&x);
            Chain {
                rng,
                x,
                lp,
                accepted: false,
                log_scale: 0.0,
            }
        })
        .collect();
    let mut states: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(config.iterations); c_count];
    let mut lps: Vec<Vec<f64>> = vec![Vec::with_capacity(config.iterations); c_count];
    let mut accepts = vec![0usize; c_count];
    let mut stalled = 0usize;
    let gamma = 2.38 / (2.0 * d as f64).sqrt();
    let adapt_from = config.burn_in / 2;
    // burn-in only: a population stuck far wider than the posterior shrinks
    // its difference jumps until it can move again
    let mut de_log_scale = 0.0f64;
    // random-walk proposal factor: identity (times sqrt(theta)) until the
    // covariance is learned
    let mut rw_factor = DMatrix::<f64>::identity(d, d) * (sd * 2.38 / (d as f64).sqrt());
    for t in 0..config.iterations {
        match config.proposal {
            Proposal::DeMc => {
                // two half-generations; each half jumps along differences of
                // the other half's current states
                let half = c_count / 2;
                let gamma = if t < config.burn_in {
                    gamma * de_log_scale.exp()
                } else {
                    gamma
                };
                for (lo, hi) in [(0, half), (half, c_count)] {
                    let others: Vec<Vec<f64>> = chains[..lo]
                        .iter()
                        .chain(&chains[hi..])
                        .map(|c| c.x.clone())
                        .collect();
                    chains[lo..hi].par_iter_mut().for_each(|ch| {
                        let a = pick(&mut ch.rng, others.len(), &[]);
                        let b = pick(&mut ch.rng, others.len(), &[a]);
                        let g = if ch.rng.random::<f64>() < DE_UNIT_JUMP {
                            1.0
                        } else {
                            gamma
                        };
                        let prop: Vec<f64> = (0..d)
                            .map(|k| {
                                ch.x[k]
                                    + g * (others[a][k] - others[b][k])
                                    + DE_NOISE * ch.rng.sample::<f64, _>(StandardNormal)
                            })
                            .collect();
                        metropolis(posterior, ch, prop);
                    });
                }
            }
            Proposal::AdaptiveRw => {
                let tuning = t < config.burn_in;
                let factor = &rw_factor;
                chains.par_iter_mut().for_each(|ch| {
                    let z = DVector::from_fn(d, |_, _| ch.rng.sample::<f64, _>(StandardNormal));
                    let step = factor * z * ch.log_scale.exp();
                    let prop: Vec<f64> = ch.x.iter().zip(step.iter()).map(|(x, s)| x + s).collect();
                    metropolis(posterior, ch, prop);
                    if tuning {
                        let acc = if ch.accepted { 1.0 } else { 0.0 };
                        ch.log_scale += (acc - RW_TARGET) / ((t + 1) as f64).powf(0.6);
                    }
                });
                let learn = t >= adapt_from && t < config.burn_in && (t - adapt_from) % 50 == 49;
                if learn {
                    if let Some(f) = learned_factor(&states, adapt_from / 2, d) {
                        rw_factor = f;
                    }
                }
            }
        }
        if t < config.burn_in && t % OUTLIER_EVERY == OUTLIER_EVERY - 1 {
            reset_outliers(&mut chains, &lps);
        }
        let mut any = false;
        for (c, ch) in chains.iter().enumerate() {
            states[c].push(ch.x.clone());
            lps[c].push(ch.lp);
            any |= ch.accepted;
            if ch.accepted && t >= config.burn_in {
                accepts[c] += 1;
            }
        }
        stalled = if any { 0 } else { stalled + 1 };
        if config.proposal == Proposal::DeMc && t < config.burn_in {
            let rate = chains.iter().filter(|c| c.accepted).count() as f64 / c_count as f64;
            if stalled > 0 && stalled % DE_SHRINK_AFTER == 0 {
                de_log_scale = (de_log_scale - std::f64::consts::LN_2).max(-40.0);
            } else if rate >= RW_TARGET {
                de_log_scale = (de_log_scale + DE_REGROW).min(0.0);
            }
        }
        if stalled >= STALL_LIMIT {
            let best = lps
                .iter()
                .flat_map(|l| l.last())
                .fold(f64::NEG_INFINITY, |a, b| a.max(*b));
            return Err(Error::SamplerStalled(format!(
                "no proposal accepted in {STALL_LIMIT} consecutive generations \
                 (generation {t}, {c_count} chains, best log-posterior {best:e})"
            )));
        }
    }
    let kept = (config.iterations - config.burn_in) as f64;
    let acceptance: Vec<f64> = accepts.iter().map(|a| *a as f64 / kept).collect();
    let mean_acc = acceptance.iter().sum::<f64>() / c_count as f64;
    if !(0.1..=0.6).contains(&mean_acc) {
        warn!("mean acceptance rate {mean_acc:.3} outside [0.1, 0.6]");
    }
    Ok(PosteriorSamples {
        dim: d,
        burn_in: config.burn_in,
        chains: states,
        log_posterior: lps,
        acceptance,
    })
}

/// Moves chains whose mean log-posterior over the second half of their
/// history falls below `Q1 - 2 IQR`, or more than `OUTLIER_GAP * d` below the
/// highest mean, onto the current best chain.
fn reset_outliers(chains: &mut [Chain], lps: &[Vec<f64>]) {
    let means: Vec<f64> = lps
        .iter()
        .map(|l| {
            let tail = &l[l.len() / 2..];
            tail.iter().sum::<f64>() / tail.len() as f64
        })
        .collect();
    let mut sorted: Vec<f64> = means.iter().copied().filter(|m| m.is_finite()).collect();
    if sorted.is_empty() {
        return;
    }
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    let top = sorted[sorted.len() - 1];
    let d = chains[0].x.len() as f64;
    let (q1, q3) = (q(0.25), q(0.75));
    let threshold = (q1 - 2.0 * (q3 - q1)).max(top - OUTLIER_GAP * d);
    let best = (0..chains.len())
        .max_by(|&a, &b| chains[a].lp.total_cmp(&chains[b].lp))
        .expect("at least one chain");
    let (x, lp) = (chains[best].x.clone(), chains[best].lp);
    for (c, ch) in chains.iter_mut().enumerate() {
        if c != best && !(means[c] >= threshold) {
            ch.x = x.clone();
            ch.lp = lp;
        }
    }
}

fn metropolis<M: ObservationModel>(posterior: &Posterior<M>, ch: &mut Chain, prop: Vec<f64>) {
    let lp = posterior.density(&prop);
    let u: f64 = ch.rng.random();
    ch.accepted = lp.is_finite() && (!ch.lp.is_finite() || u.ln() < lp - ch.lp);
    if ch.accepted {
        ch.x = prop;
        ch.lp = lp;
    }
}

/// Uniform draw from `0..n` avoiding `skip`.
fn pick(rng: &mut ChaCha8Rng, n: usize, skip: &[usize]) -> usize {
    let mut k = rng.random_range(0..n - skip.len());
    let mut sorted = skip.to_vec();
    sorted.sort_unstable();
    for s in sorted {
        if k >= s {
            k += 1;
        }
    }
    k
}

/// Cholesky factor of `2.38^2 / d` times the pooled sample covariance of all
/// chains from generation `from` on.
fn learned_factor(states: &[Vec<Vec<f64>>], from: usize, d: usize) -> Option<DMatrix<f64>> {
    let samples: Vec<&Vec<f64>> = states
        .iter()
        .flat_map(|s| s[from.min(s.len())..].iter())
        .collect();
    if samples.len() <= d + 1 {
        return None;
    }
    let n = samples.len() as f64;
    let mut mean = DVector::zeros(d);
    for x in &samples {
        mean += DVector::from_column_slice(x);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for x in &samples {
        let dx = DVector::from_column_slice(x) - &mean;
        cov += &dx * dx.transpose();
    }
    cov /= n - 1.0;
    let jitter = 1e-12 * cov.diagonal().max().max(1e-300);
    cov += DMatrix::identity(d, d) * jitter;
    cov *= 2.38 * 2.38 / d as f64;
    cov.cholesky().map(|c| c.l())
}
