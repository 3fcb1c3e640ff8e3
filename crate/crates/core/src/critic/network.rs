use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::checkpoint::{describe_layers, load_artifact, restore_layers, save_artifact, Manifest};
use crate::numerics::{Activation, ActivationRecord, Dense, DenseNet, ParamGrads, Parameterized, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    pub hidden: Vec<usize>,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { hidden: vec![256, 256] }
    }
}

/// Shared SiLU backbone over `[state, action]` with one linear head per task.
/// Heads are addressed by 1-based task id.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadCritic {
    backbone: DenseNet,
    heads: Vec<Dense>,
    state_dim: usize,
    action_dim: usize,
}

/// Backbone activations for one batch.
pub struct CriticTape {
    record: ActivationRecord,
    features: Tensor,
}

impl MultiHeadCritic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, cfg: &CriticConfig, rng: &mut R) -> Result<Self> {
        if cfg.hidden.is_empty() {
            return Err(Error::Config("critic needs at least one hidden layer".into()));
        }
        let mut dims = vec![state_dim + action_dim];
        dims.extend_from_slice(&cfg.hidden);
        let backbone = DenseNet::new(&dims, Activation::Silu, Activation::Silu, rng)?;
        Ok(Self {
            backbone,
            heads: Vec::new(),
            state_dim,
            action_dim,
        })
    }

    pub fn heads_count(&self) -> usize {
        self.heads.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Adds heads until `count` exist; existing heads are untouched.
    pub fn ensure_heads<R: Rng + ?Sized>(&mut self, count: usize, rng: &mut R) {
        let width = self.backbone.output_dim();
        while self.heads.len() < count {
            self.heads.push(Dense::new(width, 1, Activation::Identity, rng));
        }
    }

    pub fn head(&self, task: u32) -> Result<&Dense> {
        let idx = task as usize;
        if idx == 0 || idx > self.heads.len() {
            return Err(Error::MissingHead {
                requested: idx,
                available: self.heads.len(),
            });
        }
        Ok(&self.heads[idx - 1])
    }

    fn input(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        if states.cols() != self.state_dim || actions.cols() != self.action_dim || states.rows() != actions.rows() {
            return Err(Error::Shape(format!(
                "critic expects [{}] states and [{}] actions per row, got {:?} and {:?}",
                self.state_dim,
                self.action_dim,
                states.shape(),
                actions.shape()
            )));
        }
        Tensor::concat_cols(&[states, actions])
    }

    /// `Q^task(s, a)` for every row.
    pub fn q(&self, task: u32, states: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        let head = self.head(task)?;
        let features = self.backbone.predict(&self.input(states, actions)?)?;
        Ok(head.forward(&features)?.1.into_data())
    }

    pub fn forward_features(&self, states: &Tensor, actions: &Tensor) -> Result<CriticTape> {
        let (features, record) = self.backbone.forward(&self.input(states, actions)?)?;
        Ok(CriticTape { record, features })
    }

    /// Head output on recorded features.
    pub fn head_output(&self, task: u32, tape: &CriticTape) -> Result<Vec<f64>> {
        Ok(self.head(task)?.forward(&tape.features)?.1.into_data())
    }

    /// Accumulates gradients of a loss whose derivative w.r.t. `Q^task` on the
    /// taped rows is `grad`. Only the backbone and head `task` receive gradient.
    pub fn accumulate_grads(&self, task: u32, tape: &CriticTape, grad: &[f64], grads: &mut ParamGrads) -> Result<()> {
        let head = self.head(task)?;
        if grad.len() != tape.features.rows() {
            return Err(Error::Shape(format!(
                "{} output gradients for {} rows",
                grad.len(),
                tape.features.rows()
            )));
        }
        let nb = 2 * self.backbone.layers().len();
        if grads.0.len() != nb + 2 * self.heads.len() {
            return Err(Error::Consistency("gradient buffer does not match critic".into()));
        }
        let g = Tensor::matrix(grad.len(), 1, grad.to_vec())?;
        let h = nb + 2 * (task as usize - 1);
        let (head_groups, _) = grads.0[h..].split_at_mut(2);
        let (dw, db) = head_groups.split_at_mut(1);
        let pre = head.forward(&tape.features)?.0;
        let g_features = head
            .backward_into(&tape.features, &pre, &g, &mut dw[0], &mut db[0], true)?
            .expect("input grad requested");
        self.backbone
            .backward_into(&tape.record, &g_features, &mut grads.0[..nb])?;
        Ok(())
    }

    /// Parameter-group range `[start, end)` owned by head `task`.
    pub fn head_groups(&self, task: u32) -> Result<std::ops::Range<usize>> {
        self.head(task)?;
        let start = 2 * self.backbone.layers().len() + 2 * (task as usize - 1);
        Ok(start..start + 2)
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut m = Manifest::new();
        m.push("kind", "multi_head_critic")
            .push("state_dim", self.state_dim)
            .push("action_dim", self.action_dim);
        describe_layers(&mut m, "backbone", self.backbone.layers());
        describe_layers(&mut m, "head", &self.heads);
        save_artifact(dir, stem, m, &self.flat_params())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let (m, params) = load_artifact(dir, stem)?;
        m.expect("kind", "multi_head_critic")?;
        let mut rest = params.as_slice();
        let backbone = DenseNet::from_layers(restore_layers(&m, "backbone", &mut rest)?)?;
        let heads = restore_layers(&m, "head", &mut rest)?;
        let critic = Self {
            backbone,
            heads,
            state_dim: m.parse("state_dim")?,
            action_dim: m.parse("action_dim")?,
        };
        let width = critic.backbone.output_dim();
        if critic.backbone.input_dim() != critic.state_dim + critic.action_dim
            || critic.heads.iter().any(|h| h.in_dim() != width || h.out_dim() != 1)
            || !rest.is_empty()
        {
            return Err(Error::Consistency(format!(
                "{stem}: critic layers disagree with manifest"
            )));
        }
        Ok(critic)
    }
}

impl Parameterized for MultiHeadCritic {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.backbone.param_slices();
        v.extend(self.heads.iter().flat_map(|h| h.param_slices()));
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.backbone.param_slices_mut();
        v.extend(self.heads.iter_mut().flat_map(|h| h.param_slices_mut()));
        v
    }
}
