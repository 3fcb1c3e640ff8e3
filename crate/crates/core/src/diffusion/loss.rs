use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::model::{BehaviorScoreModel, StateScoreModel, TrainableScore};
use crate::diffusion::{perturb, VpSchedule};
use crate::error::{Error, Result};
use crate::numerics::{ParamGrads, Tensor};

/// Diffusion times and Gaussian noise for one batch, one time per row.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub t: Vec<f64>,
    pub eps: Tensor,
}

impl NoiseDraw {
    /// `t ~ U(t_min, 1]` and `eps ~ N(0, I)`, drawn row by row.
    pub fn sample<R: Rng + ?Sized>(rows: usize, dim: usize, t_min: f64, rng: &mut R) -> Self {
        let mut t = Vec::with_capacity(rows);
        let mut eps = Vec::with_capacity(rows * dim);
        for _ in 0..rows {
            // gen::<f64>() is in [0, 1), so 1 - u is in (0, 1]
            let u: f64 = rng.gen();
            t.push(t_min + (1.0 - t_min) * (1.0 - u));
            for _ in 0..dim {
                eps.push(StandardNormal.sample(rng));
            }
        }
        Self {
            t,
            eps: Tensor::matrix(rows, dim, eps).expect("sized"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: ParamGrads,
}

/// One denoising term: data rows with their conditioning, all from task `task`.
#[derive(Debug, Clone, Copy)]
pub struct DenoiseTerm<'a, C: ?Sized> {
    pub task: u32,
    pub data: &'a Tensor,
    pub cond: &'a C,
}

/// Mean over rows of `|sigma_t * score(alpha_t x + sigma_t eps, cond, t) + eps|^2`.
pub fn denoising_loss_with<M: TrainableScore>(
    model: &M,
    sched: &VpSchedule,
    x: &Tensor,
    cond: &M::Cond,
    draw: &NoiseDraw,
) -> Result<LossOutput> {
    if x.rows() == 0 {
        return Err(Error::Shape("denoising loss over an empty batch".into()));
    }
    if x.cols() != model.data_dim() {
        return Err(Error::Shape(format!(
            "model denoises {} dims, batch has {}",
            model.data_dim(),
            x.cols()
        )));
    }
    let x_t = perturb(sched, x, &draw.t, &draw.eps)?;
    let (score, tape) = model.forward_train(&x_t, cond, &draw.t)?;
    let b = x.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(score.shape().to_vec());
    for (r, &t) in draw.t.iter().enumerate() {
        let (_, sigma) = sched.coeffs(t)?;
        let (s, e, g) = (score.row(r), draw.eps.row(r), grad.row_mut(r));
        for c in 0..s.len() {
            let resid = sigma * s[c] + e[c];
            loss += resid * resid;
            g[c] = 2.0 * sigma * resid / b;
        }
    }
    loss /= b;
    if !loss.is_finite() {
        let t_lo = draw.t.iter().copied().fold(f64::INFINITY, f64::min);
        return Err(Error::NonFinite(format!(
            "denoising loss over {} rows (smallest t {t_lo:e}, {} non-finite score entries)",
            x.rows(),
            score.data().iter().filter(|v| !v.is_finite()).count()
        )));
    }
    let grads = model.backward(&tape, &grad)?;
    grads.ensure_finite("denoising gradients")?;
    Ok(LossOutput { loss, grads })
}

pub fn denoising_loss<M: TrainableScore, R: Rng + ?Sized>(
    model: &M,
    sched: &VpSchedule,
    x: &Tensor,
    cond: &M::Cond,
    t_min: f64,
    rng: &mut R,
) -> Result<LossOutput> {
    let draw = NoiseDraw::sample(x.rows(), x.cols(), t_min, rng);
    denoising_loss_with(model, sched, x, cond, &draw)
}

/// Action denoising conditioned on states.
pub fn behavior_loss<R: Rng + ?Sized>(
    model: &BehaviorScoreModel,
    sched: &VpSchedule,
    states: &Tensor,
    actions: &Tensor,
    t_min: f64,
    rng: &mut R,
) -> Result<LossOutput> {
    denoising_loss(model, sched, actions, states, t_min, rng)
}

/// State denoising conditioned on task identity.
pub fn state_loss<R: Rng + ?Sized>(
    model: &StateScoreModel,
    sched: &VpSchedule,
    states: &Tensor,
    task_ids: &[u32],
    t_min: f64,
    rng: &mut R,
) -> Result<LossOutput> {
    denoising_loss(model, sched, states, task_ids, t_min, rng)
}

fn check_replayed<C: ?Sized>(real: &DenoiseTerm<C>, replayed: &[DenoiseTerm<C>]) -> Result<()> {
    for term in replayed {
        if term.task == 0 || term.task >= real.task {
            return Err(Error::Domain(format!(
                "replayed task {} is not an earlier task of task {}",
                term.task, real.task
            )));
        }
    }
    Ok(())
}

/// `real + beta * sum(replayed)` using one explicit draw per term, real first.
/// With `beta == 0` the replayed terms are validated but not evaluated.
pub fn replay_loss_with<M: TrainableScore>(
    model: &M,
    sched: &VpSchedule,
    real: &DenoiseTerm<M::Cond>,
    replayed: &[DenoiseTerm<M::Cond>],
    beta: f64,
    draws: &[NoiseDraw],
) -> Result<LossOutput> {
    check_replayed(real, replayed)?;
    let used = if beta == 0.0 { 1 } else { 1 + replayed.len() };
    if draws.len() != used {
        return Err(Error::Shape(format!(
            "{} noise draws for {used} loss terms",
            draws.len()
        )));
    }
    let mut out = denoising_loss_with(model, sched, real.data, real.cond, &draws[0])?;
    if beta == 0.0 {
        return Ok(out);
    }
    for (term, draw) in replayed.iter().zip(&draws[1..]) {
        let part = denoising_loss_with(model, sched, term.data, term.cond, draw)?;
        out.loss += beta * part.loss;
        out.grads.add_scaled(&part.grads, beta)?;
    }
    Ok(out)
}

pub fn replay_loss<M: TrainableScore, R: Rng + ?Sized>(
    model: &M,
    sched: &VpSchedule,
    real: &DenoiseTerm<M::Cond>,
    replayed: &[DenoiseTerm<M::Cond>],
    beta: f64,
    t_min: f64,
    rng: &mut R,
) -> Result<LossOutput> {
    check_replayed(real, replayed)?;
    let dim = model.data_dim();
    let mut draws = vec![NoiseDraw::sample(real.data.rows(), dim, t_min, rng)];
    if beta != 0.0 {
        draws.extend(
            replayed
                .iter()
                .map(|t| NoiseDraw::sample(t.data.rows(), dim, t_min, rng)),
        );
    }
    replay_loss_with(model, sched, real, replayed, beta, &draws)
}

fn check_state_ids(term: &DenoiseTerm<[u32]>) -> Result<()> {
    if let Some(&k) = term.cond.iter().find(|&&k| k != term.task) {
        return Err(Error::Consistency(format!(
            "state term for task {} carries task id {k}",
            term.task
        )));
    }
    Ok(())
}

/// State generator loss for task `real.task` with replayed states of earlier tasks.
#[allow(clippy::too_many_arguments)]
pub fn state_replay_loss<R: Rng + ?Sized>(
    model: &StateScoreModel,
    sched: &VpSchedule,
    real: &DenoiseTerm<[u32]>,
    replayed: &[DenoiseTerm<[u32]>],
    beta: f64,
    t_min: f64,
    rng: &mut R,
) -> Result<LossOutput> {
    check_state_ids(real)?;
    for term in replayed {
        check_state_ids(term)?;
    }
    replay_loss(model, sched, real, replayed, beta, t_min, rng)
}

/// Behavior generator loss for task `real.task` with replayed state-action pairs.
pub fn behavior_replay_loss<R: Rng + ?Sized>(
    model: &BehaviorScoreModel,
    sched: &VpSchedule,
    real: &DenoiseTerm<Tensor>,
    replayed: &[DenoiseTerm<Tensor>],
    beta: f64,
    t_min: f64,
    rng: &mut R,
) -> Result<LossOutput> {
    replay_loss(model, sched, real, replayed, beta, t_min, rng)
}

/// Loss-only evaluation, for monitoring on held-out data.
pub fn eval_denoising_loss<M: TrainableScore, R: Rng + ?Sized>(
    model: &M,
    sched: &VpSchedule,
    x: &Tensor,
    cond: &M::Cond,
    t_min: f64,
    rng: &mut R,
) -> Result<f64> {
    let draw = NoiseDraw::sample(x.rows(), x.cols(), t_min, rng);
    let x_t = perturb(sched, x, &draw.t, &draw.eps)?;
    let score = model.score(&x_t, cond, &draw.t)?;
    let mut loss = 0.0;
    for (r, &t) in draw.t.iter().enumerate() {
        let (_, sigma) = sched.coeffs(t)?;
        for (s, e) in score.row(r).iter().zip(draw.eps.row(r)) {
            loss += (sigma * s + e).powi(2);
        }
    }
    Ok(loss / x.rows().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{ScoreModel, ScoreNetConfig};
    use crate::numerics::Parameterized;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched() -> VpSchedule {
        VpSchedule::new(0.1, 20.0, 100).unwrap()
    }

    /// Returns `-eps / sigma_t` for a noise table it was handed in advance.
    struct NoiseOracle {
        sched: VpSchedule,
        eps: Tensor,
    }

    impl ScoreModel for NoiseOracle {
        type Cond = ();
        fn data_dim(&self) -> usize {
            self.eps.cols()
        }
        fn score(&self, _x: &Tensor, _c: &(), ts: &[f64]) -> Result<Tensor> {
            let mut out = self.eps.clone();
            for (r, &t) in ts.iter().enumerate() {
                let (_, s) = self.sched.coeffs(t)?;
                out.row_mut(r).iter_mut().for_each(|v| *v = -*v / s);
            }
            Ok(out)
        }
    }

    impl Parameterized for NoiseOracle {
        fn param_slices(&self) -> Vec<&[f64]> {
            Vec::new()
        }
        fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
            Vec::new()
        }
    }

    impl TrainableScore for NoiseOracle {
        type Tape = ();
        fn forward_train(&self, x: &Tensor, c: &(), ts: &[f64]) -> Result<(Tensor, ())> {
            Ok((self.score(x, c, ts)?, ()))
        }
        fn backward(&self, _tape: &(), _grad: &Tensor) -> Result<ParamGrads> {
            Ok(ParamGrads(Vec::new()))
        }
    }

    struct Zero(usize);

    impl ScoreModel for Zero {
        type Cond = ();
        fn data_dim(&self) -> usize {
            self.0
        }
        fn score(&self, x: &Tensor, _c: &(), _ts: &[f64]) -> Result<Tensor> {
            Ok(Tensor::zeros(x.shape().to_vec()))
        }
    }

    impl Parameterized for Zero {
        fn param_slices(&self) -> Vec<&[f64]> {
            Vec::new()
        }
        fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
            Vec::new()
        }
    }

    impl TrainableScore for Zero {
        type Tape = ();
        fn forward_train(&self, x: &Tensor, c: &(), ts: &[f64]) -> Result<(Tensor, ())> {
            Ok((self.score(x, c, ts)?, ()))
        }
        fn backward(&self, _tape: &(), _grad: &Tensor) -> Result<ParamGrads> {
            Ok(ParamGrads(Vec::new()))
        }
    }

    #[test]
    fn perfect_denoiser_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sched();
        let x = Tensor::matrix(64, 3, (0..192).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let draw = NoiseDraw::sample(64, 3, 1e-3, &mut rng);
        let oracle = NoiseOracle {
            sched: s.clone(),
            eps: draw.eps.clone(),
        };
        let out = denoising_loss_with(&oracle, &s, &x, &(), &draw).unwrap();
        assert!(out.loss.abs() < 1e-20, "{}", out.loss);
    }

    #[test]
    fn zero_model_expects_data_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = sched();
        for dim in [2usize, 4] {
            let x = Tensor::zeros(vec![20_000, dim]);
            let loss = denoising_loss(&Zero(dim), &s, &x, &(), 1e-3, &mut rng).unwrap().loss;
            // chi-squared mean `dim`, standard error sqrt(2 dim / n)
            assert!(
                (loss - dim as f64).abs() < 5.0 * (2.0 * dim as f64 / 20_000.0).sqrt(),
                "{dim}: {loss}"
            );
        }
    }

    fn behavior_fixture() -> (BehaviorScoreModel, Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = ScoreNetConfig {
            widths: vec![8, 6],
            time_dim: 4,
        };
        let model = BehaviorScoreModel::new(4, 2, &cfg, &sched(), &mut rng).unwrap();
        let states = Tensor::matrix(5, 4, (0..20).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap();
        let actions = Tensor::matrix(5, 2, (0..10).map(|i| (i as f64 * 1.3).sin()).collect()).unwrap();
        (model, states, actions)
    }

    /// Straight-line recomputation of the loss from the same draws.
    fn by_hand(model: &BehaviorScoreModel, s: &VpSchedule, states: &Tensor, actions: &Tensor, draw: &NoiseDraw) -> f64 {
        let mut total = 0.0;
        for r in 0..actions.rows() {
            let t = draw.t[r];
            let la = -0.25 * t * t * (s.beta_max() - s.beta_min()) - 0.5 * t * s.beta_min();
            let alpha = la.exp();
            let sigma = (1.0 - alpha * alpha).sqrt();
            let a_t: Vec<f64> = actions
                .row(r)
                .iter()
                .zip(draw.eps.row(r))
                .map(|(a, e)| alpha * a + sigma * e)
                .collect();
            let x = Tensor::matrix(1, 2, a_t).unwrap();
            let cond = Tensor::matrix(1, 4, states.row(r).to_vec()).unwrap();
            let score = model.score(&x, &cond, &[t]).unwrap();
            for (p, e) in score.data().iter().zip(draw.eps.row(r)) {
                total += (sigma * p + e) * (sigma * p + e);
            }
        }
        total / actions.rows() as f64
    }

    #[test]
    fn loss_matches_recomputation() {
        let (model, states, actions) = behavior_fixture();
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draw = NoiseDraw::sample(5, 2, 1e-3, &mut rng);
        let out = denoising_loss_with(&model, &s, &actions, &states, &draw).unwrap();
        let expect = by_hand(&model, &s, &states, &actions, &draw);
        assert!(
            (out.loss - expect).abs() < 1e-10 * expect.max(1.0),
            "{} vs {expect}",
            out.loss
        );
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let (model, states, actions) = behavior_fixture();
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut draw = NoiseDraw::sample(5, 2, 1e-3, &mut rng);
        draw.t.iter_mut().for_each(|t| *t = t.max(0.05));
        let grads = denoising_loss_with(&model, &s, &actions, &states, &draw)
            .unwrap()
            .grads
            .flatten();
        let p = model.flat_params();
        let h = 1e-6;
        for i in (0..p.len()).step_by(7) {
            let mut m = model.clone();
            let mut q = p.clone();
            q[i] += h;
            m.set_flat_params(&q).unwrap();
            let up = denoising_loss_with(&m, &s, &actions, &states, &draw).unwrap().loss;
            q[i] -= 2.0 * h;
            m.set_flat_params(&q).unwrap();
            let down = denoising_loss_with(&m, &s, &actions, &states, &draw).unwrap().loss;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - grads[i]).abs() < 1e-5 * fd.abs().max(1.0),
                "{i}: {fd} vs {}",
                grads[i]
            );
        }
    }

    #[test]
    fn distinct_tasks_give_distinct_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = ScoreNetConfig {
            widths: vec![8],
            time_dim: 4,
        };
        let mut model = StateScoreModel::new(4, &cfg, &sched(), &mut rng).unwrap();
        model.ensure_tasks(2, &mut rng);
        let x = Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let draw = NoiseDraw::sample(3, 4, 1e-3, &mut rng);
        let s = sched();
        let l1 = denoising_loss_with(&model, &s, &x, &[1, 1, 1][..], &draw).unwrap().loss;
        let l2 = denoising_loss_with(&model, &s, &x, &[2, 2, 2][..], &draw).unwrap().loss;
        assert_ne!(l1, l2);
    }

    fn state_fixture() -> (StateScoreModel, Vec<Tensor>) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = ScoreNetConfig {
            widths: vec![8],
            time_dim: 4,
        };
        let mut model = StateScoreModel::new(4, &cfg, &sched(), &mut rng).unwrap();
        model.ensure_tasks(3, &mut rng);
        let data = (0..3)
            .map(|k| Tensor::matrix(4, 4, (0..16).map(|i| ((i + 5 * k) as f64 * 0.3).sin()).collect()).unwrap())
            .collect();
        (model, data)
    }

    #[test]
    fn replay_with_zero_beta_or_first_task_is_plain_loss() {
        let (model, data) = state_fixture();
        let s = sched();
        let ids = |k: u32| vec![k; 4];
        let (i1, i2, i3) = (ids(1), ids(2), ids(3));
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let draw = NoiseDraw::sample(4, 4, 1e-3, &mut rng);
        let real = DenoiseTerm {
            task: 3,
            data: &data[2],
            cond: &i3[..],
        };
        let old = [
            DenoiseTerm {
                task: 1,
                data: &data[0],
                cond: &i1[..],
            },
            DenoiseTerm {
                task: 2,
                data: &data[1],
                cond: &i2[..],
            },
        ];
        let plain = denoising_loss_with(&model, &s, &data[2], &i3[..], &draw).unwrap();
        let zero_beta = replay_loss_with(&model, &s, &real, &old, 0.0, std::slice::from_ref(&draw)).unwrap();
        assert_eq!(plain.loss, zero_beta.loss);
        assert_eq!(plain.grads, zero_beta.grads);

        let first = DenoiseTerm {
            task: 1,
            data: &data[0],
            cond: &i1[..],
        };
        let plain1 = denoising_loss_with(&model, &s, &data[0], &i1[..], &draw).unwrap();
        let k1 = replay_loss_with(&model, &s, &first, &[], 1.0, std::slice::from_ref(&draw)).unwrap();
        assert_eq!(plain1.loss, k1.loss);
    }

    #[test]
    fn replay_sums_terms() {
        let (model, data) = state_fixture();
        let s = sched();
        let (i1, i2, i3) = (vec![1u32; 4], vec![2u32; 4], vec![3u32; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<NoiseDraw> = (0..3).map(|_| NoiseDraw::sample(4, 4, 1e-3, &mut rng)).collect();
        let real = DenoiseTerm {
            task: 3,
            data: &data[2],
            cond: &i3[..],
        };
        let old = [
            DenoiseTerm {
                task: 1,
                data: &data[0],
                cond: &i1[..],
            },
            DenoiseTerm {
                task: 2,
                data: &data[1],
                cond: &i2[..],
            },
        ];
        let total = replay_loss_with(&model, &s, &real, &old, 1.0, &draws).unwrap().loss;
        let terms: f64 = [(&data[2], &i3, 0), (&data[0], &i1, 1), (&data[1], &i2, 2)]
            .iter()
            .map(|(x, ids, d)| denoising_loss_with(&model, &s, x, &ids[..], &draws[*d]).unwrap().loss)
            .sum();
        assert!((total - terms).abs() < 1e-10 * terms);
    }

    #[test]
    fn replay_rejects_current_or_future_tasks() {
        let (model, data) = state_fixture();
        let s = sched();
        let (i2, i3) = (vec![2u32; 4], vec![3u32; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let real = DenoiseTerm {
            task: 2,
            data: &data[1],
            cond: &i2[..],
        };
        let bad = [DenoiseTerm {
            task: 3,
            data: &data[2],
            cond: &i3[..],
        }];
        assert!(state_replay_loss(&model, &s, &real, &bad, 1.0, 1e-3, &mut rng).is_err());
        let same = [DenoiseTerm {
            task: 2,
            data: &data[2],
            cond: &i2[..],
        }];
        assert!(state_replay_loss(&model, &s, &real, &same, 1.0, 1e-3, &mut rng).is_err());
        let mislabeled = DenoiseTerm {
            task: 2,
            data: &data[1],
            cond: &i3[..],
        };
        assert!(state_replay_loss(&model, &s, &mislabeled, &[], 1.0, 1e-3, &mut rng).is_err());
    }

    #[test]
    fn behavior_replay_sums_terms() {
        let (model, states, actions) = behavior_fixture();
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let draws: Vec<NoiseDraw> = (0..2).map(|_| NoiseDraw::sample(5, 2, 1e-3, &mut rng)).collect();
        let shifted = actions.map(|v| v * 0.5);
        let real = DenoiseTerm {
            task: 2,
            data: &actions,
            cond: &states,
        };
        let old = [DenoiseTerm {
            task: 1,
            data: &shifted,
            cond: &states,
        }];
        let total = replay_loss_with(&model, &s, &real, &old, 0.5, &draws).unwrap().loss;
        let a = by_hand(&model, &s, &states, &actions, &draws[0]);
        let b = by_hand(&model, &s, &states, &shifted, &draws[1]);
        assert!((total - (a + 0.5 * b)).abs() < 1e-10 * total);
        assert!(behavior_replay_loss(&model, &s, &old[0], &[real], 1.0, 1e-3, &mut rng).is_err());
    }
}
