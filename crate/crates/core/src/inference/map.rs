use serde::{Deserialize, Serialize};

use super::posterior::{ObservationModel, Posterior};
use super::sampler::PosteriorSamples;
use crate::error::{Error, Result};
use crate::grid::Field;

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const MAX_SWEEPS: usize = 500;

/// Best retained sample, optionally refined by coordinate-wise golden-section
/// ascent. Each sweep is followed by a line search along the sweep's total
/// displacement; sweeps stop once the log-posterior gains less than 1e-10.
pub fn map_estimate<M: ObservationModel>(
    samples: &PosteriorSamples,
    posterior: &Posterior<M>,
    polish: bool,
) -> Result<(Vec<f64>, f64)> {
    let (mut x, mut f) = samples
        .best()
        .ok_or_else(|| Error::arg("no retained samples"))?;
    if !polish {
        return Ok((x, f));
    }
    let d = x.len();
    let cov = samples.covariance();
    let scales: Vec<f64> = (0..d)
        .map(|k| {
            let s = cov[(k, k)].sqrt();
            if s.is_finite() && s > 0.0 {
                s
            } else {
                posterior.theta().sqrt()
            }
        })
        .collect();
    for _ in 0..MAX_SWEEPS {
        let start = x.clone();
        let f0 = f;
        for k in 0..d {
            let mut dir = vec![0.0; d];
            dir[k] = 1.0;
            let (t, v) = line_max(posterior, &x, &dir, f, scales[k]);
            if v > f {
                x[k] += t;
                f = v;
            }
        }
        let dir: Vec<f64> = x.iter().zip(&start).map(|(a, b)| a - b).collect();
        if dir.iter().any(|v| *v != 0.0) {
            let (t, v) = line_max(posterior, &x, &dir, f, 1.0);
            if v > f {
                x.iter_mut().zip(&dir).for_each(|(a, b)| *a += t * b);
                f = v;
            }
        }
        if f - f0 < 1e-10 {
            break;
        }
    }
    Ok((x, f))
}

/// Maximizes `t -> lp(x + t dir)` by golden section on `[-s, s]`, doubling `s`
/// while the optimum sits on the bracket edge. Returns the step and value.
fn line_max<M: ObservationModel>(
    posterior: &Posterior<M>,
    x: &[f64],
    dir: &[f64],
    f0: f64,
    scale: f64,
) -> (f64, f64) {
    let g = |t: f64| {
        let y: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + t * b).collect();
        posterior.density(&y)
    };
    let mut s = scale;
    let mut best = (0.0, f0);
    for _ in 0..40 {
        let (mut a, mut b) = (-s, s);
        let mut c = b - GOLDEN * (b - a);
        let mut e = a + GOLDEN * (b - a);
        let (mut fc, mut fe) = (g(c), g(e));
        while (b - a) > 1e-12 * s.max(1e-300) && (b - a) > 1e-15 {
            if fc >= fe {
                b = e;
                e = c;
                fe = fc;
                c = b - GOLDEN * (b - a);
                fc = g(c);
            } else {
                a = c;
                c = e;
                fc = fe;
                e = a + GOLDEN * (b - a);
                fe = g(e);
            }
        }
        let t = 0.5 * (a + b);
        let v = g(t);
        if v > best.1 {
            best = (t, v);
        }
        if (t.abs() - s).abs() > 1e-6 * s {
            break;
        }
        s *= 2.0;
    }
    best
}

/// Pointwise relative error `|k_est - k_ref| / k_ref` with its maximum and its
/// root-mean-square over the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    #[serde(skip)]
    pub field: Option<Field>,
    pub linf: f64,
    pub l2: f64,
}

pub fn relative_error(reference: &Field, estimate: &Field) -> Result<RelativeError> {
    if !reference.grid().same_as(estimate.grid()) {
        return Err(Error::GridMismatch("error fields must share a grid".into()));
    }
    if let Some((index, value)) = reference
        .values()
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0))
    {
        return Err(Error::NonPositiveConductivity {
            index,
            value: *value,
        });
    }
    let eps: Vec<f64> = reference
        .values()
        .iter()
        .zip(estimate.values())
        .map(|(r, e)| (e - r).abs() / r)
        .collect();
    let linf = eps.iter().fold(0.0f64, |a, b| a.max(*b));
    let grid = reference.grid();
    let l2 = (eps
        .iter()
        .zip(grid.weights())
        .map(|(e, w)| w * e * e)
        .sum::<f64>()
        / grid.measure())
    .sqrt();
    Ok(RelativeError {
        field: Some(Field::new(grid.clone(), eps)?),
        linf,
        l2,
    })
}
