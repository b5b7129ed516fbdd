//! Central finite-difference verification of [`Graph::backward`].

use rand::{seq::index, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coordinates_checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Coordinate sampling and graph mode for [`grad_check`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Sampling {
    /// Cap on coordinates per parameter tensor; `None` checks all of them.
    pub per_param: Option<usize>,
    pub seed: u64,
    /// Run the graph in training mode with a fixed `(dropout seed, step)`,
    /// so every evaluation sees the same dropout masks.
    pub train: Option<(u64, u64)>,
}

fn graph<'s>(store: &'s ParamStore, sampling: &Sampling) -> Graph<'s> {
    match sampling.train {
        Some((seed, step)) => Graph::with_mode(store, true, seed, step),
        None => Graph::new(store),
    }
}

fn eval<F>(store: &ParamStore, sampling: &Sampling, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = graph(store, sampling);
    let loss = f(&mut g)?;
    let v = g.scalar(loss);
    if !v.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {v} during gradient check")));
    }
    Ok(v)
}

/// Compares autodiff gradients of the scalar returned by `f` against central
/// differences. Relative error per coordinate is
/// `|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)`.
pub fn grad_check<F>(store: &ParamStore, eps: f64, sampling: Sampling, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::config(format!("gradcheck eps {eps} outside [1e-6, 1e-4]")));
    }
    let grads = {
        let mut g = graph(store, &sampling);
        let loss = f(&mut g)?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {v} during gradient check")));
        }
        g.backward(loss)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut work = store.snapshot();
    let mut report = GradCheckReport { max_relative_error: 0.0, coordinates_checked: 0, worst: None };
    for (id, name, tensor) in store.iter() {
        let n = tensor.numel();
        let coords: Vec<usize> = match sampling.per_param {
            Some(k) if k < n => {
                let mut c = index::sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let analytic = grads.get(id);
        for i in coords {
            let orig = tensor.data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let up = eval(&work, &sampling, &f)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let down = eval(&work, &sampling, &f)?;
            work.get_mut(id).data_mut()[i] = orig;

            let fd = (up - down) / (2.0 * eps);
            let ad = analytic.map_or(0.0, |g| g[i]);
            let rel = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
            report.coordinates_checked += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((name.to_string(), i));
            }
        }
    }
    Ok(report)
}
