use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::{ScoreModel, VpSchedule};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn gaussian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws `n` samples by integrating the reverse-time VP SDE with
/// Euler-Maruyama over the schedule's uniform grid, from `t = 1` down to 0:
///
/// ```text
/// x <- x + (beta_t x / 2 + beta_t score(x, t)) dt + sqrt(beta_t dt) z
/// ```
///
/// `cond` must describe `n` rows. The final step adds no noise.
pub fn sample<M: ScoreModel, R: Rng + ?Sized>(
    model: &M,
    cond: &M::Cond,
    sched: &VpSchedule,
    n: usize,
    rng: &mut R,
) -> Result<Tensor> {
    let dim = model.data_dim();
    let steps = sched.steps();
    let dt = 1.0 / steps as f64;
    let mut x = Tensor::matrix(n, dim, gaussian(n * dim, rng))?;
    for i in (1..=steps).rev() {
        let t = i as f64 / steps as f64;
        let beta = sched.beta(t);
        let ts = vec![t; n];
        let score = model.score(&x, cond, &ts).map_err(|e| match e {
            Error::NonFinite(what) => Error::Sampling { step: i, context: what },
            other => other,
        })?;
        let noise_scale = if i > 1 { (beta * dt).sqrt() } else { 0.0 };
        let z = if i > 1 {
            gaussian(n * dim, rng)
        } else {
            vec![0.0; n * dim]
        };
        for ((xv, sv), zv) in x.data_mut().iter_mut().zip(score.data()).zip(&z) {
            *xv += (0.5 * beta * *xv + beta * sv) * dt + noise_scale * zv;
        }
        if let Some(bad) = x.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Sampling {
                step: i,
                context: format!("sample {} became non-finite at t = {t}", bad / dim.max(1)),
            });
        }
    }
    Ok(x)
}
