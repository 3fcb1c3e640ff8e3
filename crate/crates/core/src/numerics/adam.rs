use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamGrads, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Bias-corrected Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize], config: AdamConfig) -> Self {
        Self {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_model<P: Parameterized + ?Sized>(model: &P, config: AdamConfig) -> Self {
        Self::new(&model.param_sizes(), config)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &ParamGrads) -> Result<()> {
        if params.len() != self.m.len() || grads.0.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state tracks {} groups, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.0.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(&grads.0).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Shape(format!("adam group {i} size mismatch")));
            }
        }
        grads.ensure_finite("adam step")?;
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step<P: Parameterized + ?Sized>(model: &mut P, grads: &ParamGrads, state: &mut AdamState) -> Result<()> {
    state.step(model.param_slices_mut(), grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut st = AdamState::new(&[3], AdamConfig::default());
        st.step(vec![&mut p], &ParamGrads(vec![vec![0.0; 3]])).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let cfg = AdamConfig::with_lr(1e-3);
        let grads = [0.5, -3.0, 1e-2, 40.0];
        let mut p = vec![0.0; 4];
        let mut st = AdamState::new(&[4], cfg);
        st.step(vec![&mut p], &ParamGrads(vec![grads.to_vec()])).unwrap();
        for (pi, gi) in p.iter().zip(grads) {
            // closed form: -lr * g / (|g| + eps)
            let expected = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((pi - expected).abs() < 1e-15);
            assert!((pi.abs() - cfg.lr).abs() < cfg.lr * cfg.eps / gi.abs() + 1e-15);
            assert_eq!(pi.signum(), -gi.signum());
        }
    }

    #[test]
    fn identical_calls_are_deterministic() {
        let g = ParamGrads(vec![vec![0.3, -0.7]]);
        let mut a = vec![1.0, 2.0];
        let mut b = vec![1.0, 2.0];
        let mut sa = AdamState::new(&[2], AdamConfig::default());
        let mut sb = sa.clone();
        for _ in 0..5 {
            sa.step(vec![&mut a], &g).unwrap();
            sb.step(vec![&mut b], &g).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![0.0; 2];
        let mut st = AdamState::new(&[3], AdamConfig::default());
        assert!(st.step(vec![&mut p], &ParamGrads(vec![vec![0.0; 2]])).is_err());
        assert_eq!(st.steps(), 0);
    }
}
