use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Representation;

use super::model::Architecture;

/// Which pretext losses drive the gradient. Both passes always run so the
/// logged metrics are comparable across ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretextTasks {
    #[default]
    Both,
    LocalOnly,
    NetOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Per-epoch cosine decay from `lr` down to `lr / 20`.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mask_ratio: f64,
    pub lambda: f64,
    pub lr: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
    pub depth: usize,
    #[serde(default)]
    pub representation: Representation,
    #[serde(default)]
    pub tasks: PretextTasks,
    /// Seed for the fixed evaluation masks.
    pub eval_seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only at the end.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mask_ratio: 0.3,
            lambda: 1.0,
            lr: 2e-3,
            lr_schedule: LrSchedule::Cosine,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            hidden: 64,
            depth: 2,
            representation: Representation::Canonical,
            tasks: PretextTasks::Both,
            eval_seed: 12_345,
            checkpoint_every: 0,
            dataset: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0) {
            return bad(format!("mask ratio must be in (0, 1], got {}", self.mask_ratio));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate must be > 0, got {}", self.lr));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be >= 1".into());
        }
        if self.hidden == 0 || self.depth == 0 {
            return bad("hidden width and depth must be >= 1".into());
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            hidden: self.hidden,
            depth: self.depth,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let floor = self.lr / 20.0;
                let progress = epoch as f64 / self.epochs.max(1) as f64;
                floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }

    /// `(w_local, w_net)`
    pub fn loss_weights(&self) -> (f64, f64) {
        match self.tasks {
            PretextTasks::Both => (1.0, self.lambda),
            PretextTasks::LocalOnly => (1.0, 0.0),
            PretextTasks::NetOnly => (0.0, self.lambda),
        }
    }
}
