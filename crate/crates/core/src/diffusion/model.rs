use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::VpSchedule;
use crate::error::{Error, Result};
use crate::numerics::checkpoint::{describe_layers, load_artifact, restore_layers, save_artifact, Manifest};
use crate::numerics::{time_embedding_batch, DenseUNet, ParamGrads, Parameterized, Tensor, UNetTape};

/// A conditional estimate of the score of the perturbed data distribution.
///
/// The denoising loss `|sigma_t * score + eps|^2` is minimized by the true
/// score, so an ideal model returns `-E[eps | x_t] / sigma_t`.
pub trait ScoreModel: Sync {
    /// Per-row conditioning information.
    type Cond: ?Sized + Sync;

    fn data_dim(&self) -> usize;

    /// Score estimate, one row per row of `x_t`; `ts` holds each row's time.
    fn score(&self, x_t: &Tensor, cond: &Self::Cond, ts: &[f64]) -> Result<Tensor>;
}

/// A score model that can be trained by backpropagation.
pub trait TrainableScore: ScoreModel + Parameterized {
    type Tape;

    fn forward_train(&self, x_t: &Tensor, cond: &Self::Cond, ts: &[f64]) -> Result<(Tensor, Self::Tape)>;

    /// Parameter gradients given the gradient of a scalar loss w.r.t. the score output.
    fn backward(&self, tape: &Self::Tape, grad: &Tensor) -> Result<ParamGrads>;
}

/// The network predicts `sigma_t * score`, keeping its outputs O(1) near `t = 0`.
fn divide_by_sigma(sched: &VpSchedule, x: &mut Tensor, ts: &[f64]) -> Result<()> {
    for (r, &t) in ts.iter().enumerate() {
        let (_, sigma) = sched.coeffs(t)?;
        x.row_mut(r).iter_mut().for_each(|v| *v /= sigma);
    }
    Ok(())
}

fn push_schedule(m: &mut Manifest, sched: &VpSchedule) {
    m.push_f64("beta_min", sched.beta_min())
        .push_f64("beta_max", sched.beta_max())
        .push("steps", sched.steps());
}

fn read_schedule(m: &Manifest) -> Result<VpSchedule> {
    VpSchedule::new(m.parse("beta_min")?, m.parse("beta_max")?, m.parse("steps")?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreNetConfig {
    /// Encoder widths of the dense U-Net.
    pub widths: Vec<usize>,
    pub time_dim: usize,
}

impl Default for ScoreNetConfig {
    fn default() -> Self {
        Self {
            widths: vec![256, 256],
            time_dim: 16,
        }
    }
}

pub const TASK_EMBED_DIM: usize = 16;

fn check_rows(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: {got} rows, expected {want}")));
    }
    Ok(())
}

/// State-conditioned action denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorScoreModel {
    net: DenseUNet,
    schedule: VpSchedule,
    state_dim: usize,
    action_dim: usize,
    time_dim: usize,
}

pub struct BehaviorTape {
    unet: UNetTape,
    ts: Vec<f64>,
}

impl BehaviorScoreModel {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        cfg: &ScoreNetConfig,
        schedule: &VpSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        let net = DenseUNet::new(action_dim + state_dim + cfg.time_dim, &cfg.widths, action_dim, rng)?;
        Ok(Self {
            net,
            schedule: schedule.clone(),
            state_dim,
            action_dim,
            time_dim: cfg.time_dim,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn net(&self) -> &DenseUNet {
        &self.net
    }

    fn assemble(&self, x_t: &Tensor, states: &Tensor, ts: &[f64]) -> Result<Tensor> {
        if x_t.cols() != self.action_dim || states.cols() != self.state_dim {
            return Err(Error::Shape(format!(
                "behavior model expects actions of {} and states of {}, got {} and {}",
                self.action_dim,
                self.state_dim,
                x_t.cols(),
                states.cols()
            )));
        }
        check_rows("conditioning states", states.rows(), x_t.rows())?;
        check_rows("times", ts.len(), x_t.rows())?;
        let temb = time_embedding_batch(ts, self.time_dim)?;
        Tensor::concat_cols(&[x_t, states, &temb])
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut m = Manifest::new();
        m.push("kind", "behavior_score")
            .push("state_dim", self.state_dim)
            .push("action_dim", self.action_dim)
            .push("time_dim", self.time_dim);
        push_schedule(&mut m, &self.schedule);
        describe_layers(&mut m, "unet", self.net.layers());
        save_artifact(dir, stem, m, &self.flat_params())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let (m, params) = load_artifact(dir, stem)?;
        m.expect("kind", "behavior_score")?;
        let mut rest = params.as_slice();
        let net = DenseUNet::from_layers(restore_layers(&m, "unet", &mut rest)?)?;
        let model = Self {
            net,
            schedule: read_schedule(&m)?,
            state_dim: m.parse("state_dim")?,
            action_dim: m.parse("action_dim")?,
            time_dim: m.parse("time_dim")?,
        };
        if model.net.input_dim() != model.action_dim + model.state_dim + model.time_dim || !rest.is_empty() {
            return Err(Error::Consistency(format!(
                "{stem}: manifest dims disagree with layers"
            )));
        }
        Ok(model)
    }
}

impl ScoreModel for BehaviorScoreModel {
    type Cond = Tensor;

    fn data_dim(&self) -> usize {
        self.action_dim
    }

    fn score(&self, x_t: &Tensor, states: &Tensor, ts: &[f64]) -> Result<Tensor> {
        let mut out = self.net.predict(&self.assemble(x_t, states, ts)?)?;
        divide_by_sigma(&self.schedule, &mut out, ts)?;
        Ok(out)
    }
}

impl TrainableScore for BehaviorScoreModel {
    type Tape = BehaviorTape;

    fn forward_train(&self, x_t: &Tensor, states: &Tensor, ts: &[f64]) -> Result<(Tensor, BehaviorTape)> {
        let input = self.assemble(x_t, states, ts)?;
        let (mut out, unet) = self.net.forward(&input)?;
        divide_by_sigma(&self.schedule, &mut out, ts)?;
        Ok((out, BehaviorTape { unet, ts: ts.to_vec() }))
    }

    fn backward(&self, tape: &BehaviorTape, grad: &Tensor) -> Result<ParamGrads> {
        let mut g = grad.clone();
        divide_by_sigma(&self.schedule, &mut g, &tape.ts)?;
        Ok(self.net.backward(&tape.unet, &g)?.0)
    }
}

impl Parameterized for BehaviorScoreModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.net.param_slices()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.param_slices_mut()
    }
}

/// Task-conditioned state denoiser with a learned task-embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct StateScoreModel {
    net: DenseUNet,
    schedule: VpSchedule,
    state_dim: usize,
    time_dim: usize,
    embed_dim: usize,
    /// Row `k - 1` embeds task `k`.
    embeddings: Tensor,
}

pub struct StateTape {
    unet: UNetTape,
    task_ids: Vec<u32>,
    ts: Vec<f64>,
}

impl StateScoreModel {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        cfg: &ScoreNetConfig,
        schedule: &VpSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        let net = DenseUNet::new(state_dim + TASK_EMBED_DIM + cfg.time_dim, &cfg.widths, state_dim, rng)?;
        Ok(Self {
            net,
            schedule: schedule.clone(),
            state_dim,
            time_dim: cfg.time_dim,
            embed_dim: TASK_EMBED_DIM,
            embeddings: Tensor::zeros(vec![0, TASK_EMBED_DIM]),
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Appends standard-normal embedding rows until `tasks` rows exist.
    /// Existing rows are left untouched.
    pub fn ensure_tasks<R: Rng + ?Sized>(&mut self, tasks: usize, rng: &mut R) {
        let have = self.num_tasks();
        if tasks <= have {
            return;
        }
        let mut data = self.embeddings.data().to_vec();
        for _ in 0..(tasks - have) * self.embed_dim {
            data.push(StandardNormal.sample(rng));
        }
        self.embeddings = Tensor::matrix(tasks, self.embed_dim, data).expect("sized");
    }

    fn embed(&self, task_ids: &[u32]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(task_ids.len() * self.embed_dim);
        for &k in task_ids {
            if k == 0 || k as usize > self.num_tasks() {
                return Err(Error::Domain(format!(
                    "task {k} has no embedding ({} tasks known)",
                    self.num_tasks()
                )));
            }
            data.extend_from_slice(self.embeddings.row(k as usize - 1));
        }
        Tensor::matrix(task_ids.len(), self.embed_dim, data)
    }

    fn assemble(&self, x_t: &Tensor, task_ids: &[u32], ts: &[f64]) -> Result<Tensor> {
        if x_t.cols() != self.state_dim {
            return Err(Error::Shape(format!(
                "state model expects {} dims, got {}",
                self.state_dim,
                x_t.cols()
            )));
        }
        check_rows("task ids", task_ids.len(), x_t.rows())?;
        check_rows("times", ts.len(), x_t.rows())?;
        let emb = self.embed(task_ids)?;
        let temb = time_embedding_batch(ts, self.time_dim)?;
        Tensor::concat_cols(&[x_t, &emb, &temb])
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut m = Manifest::new();
        m.push("kind", "state_score")
            .push("state_dim", self.state_dim)
            .push("time_dim", self.time_dim)
            .push("embed_dim", self.embed_dim)
            .push("tasks", self.num_tasks());
        push_schedule(&mut m, &self.schedule);
        describe_layers(&mut m, "unet", self.net.layers());
        save_artifact(dir, stem, m, &self.flat_params())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let (m, params) = load_artifact(dir, stem)?;
        m.expect("kind", "state_score")?;
        let mut rest = params.as_slice();
        let net = DenseUNet::from_layers(restore_layers(&m, "unet", &mut rest)?)?;
        let embed_dim: usize = m.parse("embed_dim")?;
        let tasks: usize = m.parse("tasks")?;
        if rest.len() != tasks * embed_dim {
            return Err(Error::Consistency(format!("{stem}: embedding table size mismatch")));
        }
        let model = Self {
            net,
            schedule: read_schedule(&m)?,
            state_dim: m.parse("state_dim")?,
            time_dim: m.parse("time_dim")?,
            embed_dim,
            embeddings: Tensor::matrix(tasks, embed_dim, rest.to_vec())?,
        };
        if model.net.input_dim() != model.state_dim + embed_dim + model.time_dim {
            return Err(Error::Consistency(format!(
                "{stem}: manifest dims disagree with layers"
            )));
        }
        Ok(model)
    }
}

impl ScoreModel for StateScoreModel {
    type Cond = [u32];

    fn data_dim(&self) -> usize {
        self.state_dim
    }

    fn score(&self, x_t: &Tensor, task_ids: &[u32], ts: &[f64]) -> Result<Tensor> {
        let mut out = self.net.predict(&self.assemble(x_t, task_ids, ts)?)?;
        divide_by_sigma(&self.schedule, &mut out, ts)?;
        Ok(out)
    }
}

impl TrainableScore for StateScoreModel {
    type Tape = StateTape;

    fn forward_train(&self, x_t: &Tensor, task_ids: &[u32], ts: &[f64]) -> Result<(Tensor, StateTape)> {
        let input = self.assemble(x_t, task_ids, ts)?;
        let (mut out, unet) = self.net.forward(&input)?;
        divide_by_sigma(&self.schedule, &mut out, ts)?;
        Ok((
            out,
            StateTape {
                unet,
                task_ids: task_ids.to_vec(),
                ts: ts.to_vec(),
            },
        ))
    }

    fn backward(&self, tape: &StateTape, grad: &Tensor) -> Result<ParamGrads> {
        let mut g = grad.clone();
        divide_by_sigma(&self.schedule, &mut g, &tape.ts)?;
        let (mut grads, g_in) = self.net.backward(&tape.unet, &g)?;
        let mut emb_grad = vec![0.0; self.embeddings.len()];
        let start = self.state_dim;
        for (r, &k) in tape.task_ids.iter().enumerate() {
            let row = &g_in.row(r)[start..start + self.embed_dim];
            let base = (k as usize - 1) * self.embed_dim;
            for (acc, g) in emb_grad[base..base + self.embed_dim].iter_mut().zip(row) {
                *acc += g;
            }
        }
        grads.0.push(emb_grad);
        Ok(grads)
    }
}

impl Parameterized for StateScoreModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.net.param_slices();
        v.push(self.embeddings.data());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.net.param_slices_mut();
        v.push(self.embeddings.data_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched() -> VpSchedule {
        VpSchedule::new(0.1, 20.0, 100).unwrap()
    }

    fn small() -> ScoreNetConfig {
        ScoreNetConfig {
            widths: vec![6, 5],
            time_dim: 4,
        }
    }

    #[test]
    fn embeddings_grow_without_reinit() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = StateScoreModel::new(4, &small(), &sched(), &mut rng).unwrap();
        m.ensure_tasks(1, &mut rng);
        let first = m.embeddings().row(0).to_vec();
        m.ensure_tasks(3, &mut rng);
        assert_eq!(m.num_tasks(), 3);
        assert_eq!(m.embeddings().row(0), first.as_slice());
        m.ensure_tasks(2, &mut rng);
        assert_eq!(m.num_tasks(), 3);
    }

    #[test]
    fn unknown_task_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = StateScoreModel::new(4, &small(), &sched(), &mut rng).unwrap();
        m.ensure_tasks(1, &mut rng);
        let x = Tensor::zeros(vec![1, 4]);
        assert!(m.score(&x, &[2], &[0.5]).is_err());
        assert!(m.score(&x, &[1], &[0.5]).is_ok());
    }

    #[test]
    fn state_model_gradients_include_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = StateScoreModel::new(3, &small(), &sched(), &mut rng).unwrap();
        m.ensure_tasks(2, &mut rng);
        let x = Tensor::matrix(3, 3, vec![0.1, -0.2, 0.3, 1.0, 0.5, -0.5, 0.0, 0.2, 0.9]).unwrap();
        let ids = [1u32, 2, 2];
        let ts = [0.2, 0.5, 0.9];
        let dir: Vec<f64> = (0..9).map(|i| ((i * 5) as f64).cos()).collect();
        let loss = |m: &StateScoreModel| -> f64 {
            m.score(&x, &ids, &ts)
                .unwrap()
                .data()
                .iter()
                .zip(&dir)
                .map(|(a, b)| a * b)
                .sum()
        };
        let (_, tape) = m.forward_train(&x, &ids, &ts).unwrap();
        let grads = m
            .backward(&tape, &Tensor::matrix(3, 3, dir.clone()).unwrap())
            .unwrap()
            .flatten();
        let p = m.flat_params();
        assert_eq!(grads.len(), p.len());
        let h = 1e-5;
        for i in (0..p.len()).rev().take(40) {
            let mut q = p.clone();
            q[i] += h;
            let mut plus = m.clone();
            plus.set_flat_params(&q).unwrap();
            q[i] -= 2.0 * h;
            let mut minus = m.clone();
            minus.set_flat_params(&q).unwrap();
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!(
                (fd - grads[i]).abs() < 1e-7 * fd.abs().max(1.0),
                "{i}: {fd} vs {}",
                grads[i]
            );
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = BehaviorScoreModel::new(4, 2, &small(), &sched(), &mut rng).unwrap();
        b.save(dir.path(), "b").unwrap();
        assert_eq!(BehaviorScoreModel::load(dir.path(), "b").unwrap(), b);
        let mut s = StateScoreModel::new(4, &small(), &sched(), &mut rng).unwrap();
        s.ensure_tasks(2, &mut rng);
        s.save(dir.path(), "s").unwrap();
        assert_eq!(StateScoreModel::load(dir.path(), "s").unwrap(), s);
        assert!(BehaviorScoreModel::load(dir.path(), "s").is_err());
    }
}
