use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Variance-preserving schedule with linear `beta(t) = beta_min + t (beta_max - beta_min)`
/// on `t in (0, 1]`, giving
///
/// ```text
/// alpha_t = exp(-t^2 (beta_max - beta_min) / 4 - t beta_min / 2),  sigma_t = sqrt(1 - alpha_t^2)
/// ```
///
/// `steps` fixes the uniform grid `{1/T, ..., 1}` used by the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct VpSchedule {
    beta_min: f64,
    beta_max: f64,
    steps: usize,
    alphas: Vec<f64>,
    sigmas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub beta_min: f64,
    pub beta_max: f64,
    pub steps: usize,
    /// Lower cutoff for training times.
    pub t_min: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            beta_min: 0.1,
            beta_max: 20.0,
            steps: 100,
            t_min: 1e-3,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<VpSchedule> {
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(Error::Config(format!("t_min {} outside (0, 1)", self.t_min)));
        }
        VpSchedule::new(self.beta_min, self.beta_max, self.steps)
    }
}

fn log_alpha(beta_min: f64, beta_max: f64, t: f64) -> f64 {
    -0.25 * t * t * (beta_max - beta_min) - 0.5 * t * beta_min
}

impl VpSchedule {
    pub fn new(beta_min: f64, beta_max: f64, steps: usize) -> Result<Self> {
        if !(beta_min > 0.0 && beta_max > beta_min && beta_max.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < beta_min < beta_max, got {beta_min}, {beta_max}"
            )));
        }
        if steps == 0 {
            return Err(Error::Config("diffusion needs at least one step".into()));
        }
        let mut alphas = Vec::with_capacity(steps);
        let mut sigmas = Vec::with_capacity(steps);
        for i in 1..=steps {
            let la = log_alpha(beta_min, beta_max, i as f64 / steps as f64);
            alphas.push(la.exp());
            sigmas.push((-(2.0 * la).exp_m1()).sqrt());
        }
        Ok(Self {
            beta_min,
            beta_max,
            steps,
            alphas,
            sigmas,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    /// Same betas, different grid.
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        Self::new(self.beta_min, self.beta_max, steps)
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    /// `(alpha_t, sigma_t)` for `t in (0, 1]`.
    pub fn coeffs(&self, t: f64) -> Result<(f64, f64)> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Domain(format!("diffusion time {t} outside (0, 1]")));
        }
        let la = log_alpha(self.beta_min, self.beta_max, t);
        Ok((la.exp(), (-(2.0 * la).exp_m1()).sqrt()))
    }

    /// `(t_i, alpha_i, sigma_i)` for `i = 1..=T`.
    pub fn grid(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.steps).map(move |i| ((i + 1) as f64 / self.steps as f64, self.alphas[i], self.sigmas[i]))
    }
}

pub fn schedule_coeffs(sched: &VpSchedule, t: f64) -> Result<(f64, f64)> {
    sched.coeffs(t)
}

/// `x_t = alpha_t x + sigma_t eps`, with one time per row of `x`.
pub fn perturb(sched: &VpSchedule, x: &Tensor, t: &[f64], eps: &Tensor) -> Result<Tensor> {
    if x.shape() != eps.shape() {
        return Err(Error::Shape(format!(
            "perturb: data {:?} vs noise {:?}",
            x.shape(),
            eps.shape()
        )));
    }
    if t.len() != x.rows() {
        return Err(Error::Shape(format!(
            "perturb: {} times for {} rows",
            t.len(),
            x.rows()
        )));
    }
    let cols = x.cols();
    let mut out = Vec::with_capacity(x.len());
    for (r, &ti) in t.iter().enumerate() {
        let (a, s) = sched.coeffs(ti)?;
        for c in 0..cols {
            out.push(a * x.row(r)[c] + s * eps.row(r)[c]);
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}
