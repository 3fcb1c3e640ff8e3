use cugro::diffusion::{
    behavior_loss, sample, BehaviorScoreModel, ScoreModel, ScoreNetConfig, StateScoreModel, VpSchedule,
};
use cugro::numerics::{adam_step, AdamConfig, AdamState, Tensor};
use cugro::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Exact score of the perturbed marginal of `N(mean, var)` data.
struct GaussianScore {
    sched: VpSchedule,
    mean: f64,
    var: f64,
}

impl ScoreModel for GaussianScore {
    type Cond = ();

    fn data_dim(&self) -> usize {
        1
    }

    fn score(&self, x: &Tensor, _cond: &(), ts: &[f64]) -> Result<Tensor> {
        let mut out = x.clone();
        for (r, &t) in ts.iter().enumerate() {
            let (a, s) = self.sched.coeffs(t)?;
            let v = out.row_mut(r);
            v[0] = -(v[0] - a * self.mean) / (a * a * self.var + s * s);
        }
        Ok(out)
    }
}

fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
}

#[test]
fn analytic_score_reproduces_gaussian() {
    let sched = VpSchedule::new(0.1, 20.0, 100).unwrap();
    for (mean, var) in [(0.0, 1.0), (1.5, 0.25), (-2.0, 2.0)] {
        let model = GaussianScore {
            sched: sched.clone(),
            mean,
            var,
        };
        let x = sample(&model, &(), &sched, 10_000, &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
        let (m, v) = moments(x.data());
        assert!((m - mean).abs() < 0.05, "mean {m} vs {mean}");
        assert!((v - var).abs() < 0.1, "var {v} vs {var}");
    }
}

#[test]
fn finer_grid_converges() {
    let coarse = VpSchedule::new(0.1, 20.0, 100).unwrap();
    let fine = coarse.with_steps(1000).unwrap();
    let model = GaussianScore {
        sched: coarse.clone(),
        mean: 0.7,
        var: 0.5,
    };
    let n = 10_000;
    let a = sample(&model, &(), &coarse, n, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = sample(&model, &(), &fine, n, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let ((ma, va), (mb, vb)) = (moments(a.data()), moments(b.data()));
    // standard errors of the difference of two independent estimates
    let se_mean = (2.0 * 0.5 / n as f64).sqrt();
    let se_var = (2.0 * 2.0 * 0.25 / n as f64).sqrt();
    assert!((ma - mb).abs() < 3.0 * se_mean, "means {ma} vs {mb}");
    assert!((va - vb).abs() < 3.0 * se_var, "variances {va} vs {vb}");
}

fn train_behavior(actions: &[f64], steps: usize, seed: u64) -> BehaviorScoreModel {
    let sched = VpSchedule::new(0.1, 20.0, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ScoreNetConfig {
        widths: vec![64, 64],
        time_dim: 16,
    };
    let mut model = BehaviorScoreModel::new(1, 1, &cfg, &sched, &mut rng).unwrap();
    let mut adam = AdamState::for_model(&model, AdamConfig::with_lr(2e-3));
    let batch = 256;
    let states = Tensor::zeros(vec![batch, 1]);
    for i in 0..steps {
        adam.config.lr = 2e-3 * (1.0 - 0.9 * i as f64 / steps as f64);
        let idx: Vec<f64> = (0..batch)
            .map(|_| actions[rand::Rng::gen_range(&mut rng, 0..actions.len())])
            .collect();
        let a = Tensor::matrix(batch, 1, idx).unwrap();
        let out = behavior_loss(&model, &sched, &states, &a, 1e-3, &mut rng).unwrap();
        adam_step(&mut model, &out.grads, &mut adam).unwrap();
    }
    model
}

#[test]
fn trained_model_recovers_standard_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let model = train_behavior(&data, 1500, 6);
    let sched = VpSchedule::new(0.1, 20.0, 100).unwrap();
    let cond = Tensor::zeros(vec![10_000, 1]);
    let x = sample(&model, &cond, &sched, 10_000, &mut rng).unwrap();
    let (m, v) = moments(x.data());
    assert!(m.abs() < 0.05, "mean {m}");
    assert!((v - 1.0).abs() < 0.1, "variance {v}");
}

#[test]
fn trained_model_recovers_both_modes() {
    let model = train_behavior(&[-1.0, 1.0], 1500, 7);
    let sched = VpSchedule::new(0.1, 20.0, 100).unwrap();
    let n = 4000;
    let cond = Tensor::zeros(vec![n, 1]);
    let x = sample(&model, &cond, &sched, n, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let (neg, pos): (Vec<f64>, Vec<f64>) = x.data().iter().partition(|v| **v < 0.0);
    let (fn_, fp) = (neg.len() as f64 / n as f64, pos.len() as f64 / n as f64);
    assert!(fn_ >= 0.3 && fp >= 0.3, "mode masses {fn_} / {fp}");
    let (mn, mp) = (moments(&neg).0, moments(&pos).0);
    assert!(
        (mn + 1.0).abs() < 0.1 && (mp - 1.0).abs() < 0.1,
        "mode means {mn} / {mp}"
    );
}

#[test]
fn state_model_separates_tasks() {
    let sched = VpSchedule::new(0.1, 20.0, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = ScoreNetConfig {
        widths: vec![64, 64],
        time_dim: 16,
    };
    let mut model = StateScoreModel::new(1, &cfg, &sched, &mut rng).unwrap();
    model.ensure_tasks(2, &mut rng);
    let mut adam = AdamState::for_model(&model, AdamConfig::with_lr(2e-3));
    let batch = 256;
    for _ in 0..1500 {
        let ids: Vec<u32> = (0..batch).map(|i| 1 + (i % 2) as u32).collect();
        let xs: Vec<f64> = ids
            .iter()
            .map(|&k| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let center = if k == 1 { -2.0 } else { 2.0 };
                center + 0.3 * z
            })
            .collect();
        let x = Tensor::matrix(batch, 1, xs).unwrap();
        let out = cugro::diffusion::state_loss(&model, &sched, &x, &ids, 1e-3, &mut rng).unwrap();
        adam_step(&mut model, &out.grads, &mut adam).unwrap();
    }
    for (k, target) in [(1u32, -2.0), (2, 2.0)] {
        let ids = vec![k; 2000];
        let x = sample(&model, &ids[..], &sched, 2000, &mut rng).unwrap();
        let (m, _) = moments(x.data());
        assert!((m - target).abs() < 0.2, "task {k}: mean {m}");
    }
}
